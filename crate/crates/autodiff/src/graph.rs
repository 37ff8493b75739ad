//! Tape of tensor operations with reverse-mode gradients.
//!
//! A [`Graph`] owns every value produced while evaluating a model. Nodes are
//! appended in evaluation order, so inputs always precede the node that
//! consumes them and a single reverse sweep in [`Graph::backward`] visits each
//! node once.

use crate::error::{Result, TensorError};
use crate::kernels;
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    /// Derivative at exactly 0 is taken as 0.
    Relu,
    Log,
    Exp,
    /// Derivative at exactly 0 is taken as 0.
    Sqrt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv2d {
        x: Var,
        k: Var,
        bias: Option<Var>,
        geom: kernels::ConvGeom,
    },
    Unary {
        x: Var,
        kind: Unary,
    },
    Binary {
        a: Var,
        b: Var,
        kind: Binary,
    },
    Scale {
        x: Var,
        c: f64,
    },
    Shift {
        x: Var,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    Reduce {
        x: Var,
        kind: Reduction,
        mask: Option<Vec<bool>>,
        count: usize,
    },
    ItemMean {
        x: Var,
        mask: Option<Vec<bool>>,
        counts: Vec<usize>,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Upsample2x {
        x: Var,
    },
    SpatialMean {
        x: Var,
    },
    Cumsum {
        x: Var,
        axis: usize,
    },
    BinExpectation {
        probs: Var,
        centers: Var,
    },
    Chamfer {
        centers: Var,
        /// d(loss_b)/d(center_bj), fixed by the nearest-neighbour assignment.
        local: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation. Build one per forward pass; it is not `Sync` and is
/// meant to be owned by a single thread.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to the leaves that required them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// (outer, extent, inner) split of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf whose gradient is tracked.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// `out[b, o] = sum_i x[b, i] * w[i, o] + bias[o]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(TensorError::Shape {
                op: "linear",
                lhs: xs.to_vec(),
                rhs: ws.to_vec(),
            });
        }
        if bs != [ws[1]] {
            return Err(TensorError::Shape {
                op: "linear bias",
                lhs: ws.to_vec(),
                rhs: bs.to_vec(),
            });
        }
        let (batch, inp, out) = (xs[0], xs[1], ws[1]);
        let mut data = vec![0.0; batch * out];
        for row in data.chunks_mut(out) {
            row.copy_from_slice(self.value(b).data());
        }
        kernels::gemm(
            batch,
            inp,
            out,
            self.value(x).data(),
            (inp, 1),
            self.value(w).data(),
            (out, 1),
            &mut data,
            1.0,
        );
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(
            Tensor::new(vec![batch, out], data)?,
            Op::Linear { x, w, b },
            rg,
        ))
    }

    /// Cross-correlation of `x[B, C, H, W]` with `k[F, C, kh, kw]`, optional
    /// per-filter bias. Kernel extents must be 1 or 3 and stride 1 or 2.
    pub fn conv2d(
        &mut self,
        x: Var,
        k: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let geom = kernels::ConvGeom::new(self.shape(x), self.shape(k), stride, pad)?;
        if let Some(b) = bias {
            if self.shape(b) != [geom.filters] {
                return Err(TensorError::Shape {
                    op: "conv2d bias",
                    lhs: self.shape(k).to_vec(),
                    rhs: self.shape(b).to_vec(),
                });
            }
        }
        let out = kernels::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(k).data(),
            bias.map(|b| self.value(b).data()),
        );
        let shape = vec![geom.batch, geom.filters, geom.out_h, geom.out_w];
        let rg = self.rg(x) || self.rg(k) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Conv2d { x, k, bias, geom },
            rg,
        ))
    }

    pub fn unary(&mut self, x: Var, kind: Unary) -> Result<Var> {
        let xv = self.value(x);
        let out = match kind {
            Unary::Relu => xv.map(|v| v.max(0.0)),
            Unary::Exp => xv.map(f64::exp),
            Unary::Log => {
                if let Some((index, &value)) =
                    xv.data().iter().enumerate().find(|(_, &v)| !(v > 0.0))
                {
                    return Err(TensorError::Domain {
                        op: "log",
                        index,
                        value,
                    });
                }
                xv.map(f64::ln)
            }
            Unary::Sqrt => {
                if let Some((index, &value)) =
                    xv.data().iter().enumerate().find(|(_, &v)| !(v >= 0.0))
                {
                    return Err(TensorError::Domain {
                        op: "sqrt",
                        index,
                        value,
                    });
                }
                xv.map(f64::sqrt)
            }
        };
        let rg = self.rg(x);
        Ok(self.push(out, Op::Unary { x, kind }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Relu)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Log)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Exp)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Sqrt)
    }

    /// Pointwise binary op. Shapes must match exactly unless one operand has
    /// a single element, which is broadcast.
    pub fn binary(&mut self, a: Var, b: Var, kind: Binary) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let shape = if av.shape() == bv.shape() || bv.len() == 1 {
            av.shape().to_vec()
        } else if av.len() == 1 {
            bv.shape().to_vec()
        } else {
            return Err(TensorError::Shape {
                op: "elementwise",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        };
        if kind == Binary::Div {
            if let Some((index, _)) = bv.data().iter().enumerate().find(|(_, &v)| v == 0.0) {
                return Err(TensorError::Domain {
                    op: "div",
                    index,
                    value: 0.0,
                });
            }
        }
        let n = numel(&shape);
        let (ad, bd) = (av.data(), bv.data());
        let pick = |d: &[f64], i: usize| if d.len() == 1 { d[0] } else { d[i] };
        let f: fn(f64, f64) -> f64 = match kind {
            Binary::Add => |p, q| p + q,
            Binary::Sub => |p, q| p - q,
            Binary::Mul => |p, q| p * q,
            Binary::Div => |p, q| p / q,
        };
        let data = (0..n).map(|i| f(pick(ad, i), pick(bd, i))).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Binary { a, b, kind }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Div)
    }

    /// Multiply by a constant.
    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        let rg = self.rg(x);
        self.push(out, Op::Scale { x, c }, rg)
    }

    /// Add a constant.
    pub fn shift(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v + c);
        let rg = self.rg(x);
        self.push(out, Op::Shift { x }, rg)
    }

    /// Softmax along `axis`, evaluated with max-subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.rank() {
            return Err(TensorError::Dimension {
                op: "softmax",
                msg: format!("axis {axis} out of range for shape {:?}", xv.shape()),
            });
        }
        let (outer, n, inner) = split_axis(xv.shape(), axis);
        let src = xv.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| o * n * inner + k * inner + i;
                let max = (0..n).map(|k| src[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for k in 0..n {
                    let e = (src[at(k)] - max).exp();
                    out[at(k)] = e;
                    total += e;
                }
                for k in 0..n {
                    out[at(k)] /= total;
                }
            }
        }
        let shape = xv.shape().to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { x, axis }, rg))
    }

    /// Sum or mean to a scalar over the elements where `mask` is true (all
    /// elements when no mask is given).
    pub fn reduce(&mut self, x: Var, kind: Reduction, mask: Option<&[bool]>) -> Result<Var> {
        let xv = self.value(x);
        if let Some(m) = mask {
            if m.len() != xv.len() {
                return Err(TensorError::Dimension {
                    op: "reduce",
                    msg: format!("mask has {} entries, tensor {:?}", m.len(), xv.shape()),
                });
            }
        }
        let on = |i: usize| mask.is_none_or(|m| m[i]);
        let (mut total, mut count) = (0.0, 0usize);
        for (i, v) in xv.data().iter().enumerate() {
            if on(i) {
                total += v;
                count += 1;
            }
        }
        if count == 0 {
            return Err(TensorError::Degenerate {
                op: "reduce",
                msg: "no unmasked elements".into(),
            });
        }
        let value = match kind {
            Reduction::Sum => total,
            Reduction::Mean => total / count as f64,
        };
        let rg = self.rg(x);
        let op = Op::Reduce {
            x,
            kind,
            mask: mask.map(<[bool]>::to_vec),
            count,
        };
        Ok(self.push(Tensor::scalar(value), op, rg))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.reduce(x, Reduction::Mean, None)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.reduce(x, Reduction::Sum, None)
    }

    /// Masked mean over all axes except the leading one: `[B, ...] -> [B]`.
    pub fn item_mean(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() == 0 {
            return Err(TensorError::Dimension {
                op: "item_mean",
                msg: "needs a leading axis".into(),
            });
        }
        if let Some(m) = mask {
            if m.len() != xv.len() {
                return Err(TensorError::Dimension {
                    op: "item_mean",
                    msg: format!("mask has {} entries, tensor {:?}", m.len(), xv.shape()),
                });
            }
        }
        let b = xv.shape()[0];
        let per = xv.len() / b.max(1);
        let mut out = vec![0.0; b];
        let mut counts = vec![0usize; b];
        for item in 0..b {
            for j in 0..per {
                let i = item * per + j;
                if mask.is_none_or(|m| m[i]) {
                    out[item] += xv.data()[i];
                    counts[item] += 1;
                }
            }
            if counts[item] == 0 {
                return Err(TensorError::Degenerate {
                    op: "item_mean",
                    msg: format!("item {item} has no unmasked elements"),
                });
            }
            out[item] /= counts[item] as f64;
        }
        let rg = self.rg(x);
        let op = Op::ItemMean {
            x,
            mask: mask.map(<[bool]>::to_vec),
            counts,
        };
        Ok(self.push(Tensor::vector(out), op, rg))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| TensorError::Degenerate {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::Dimension {
                op: "concat",
                msg: format!("axis {axis} out of range for {base:?}"),
            });
        }
        let mut extent = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(TensorError::Shape {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
            extent += s[axis];
        }
        let outer = numel(&base[..axis]);
        let inner = numel(&base[axis + 1..]);
        let mut shape = base.clone();
        shape[axis] = extent;
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &p in parts {
                let chunk = self.shape(p)[axis] * inner;
                data.extend_from_slice(&self.value(p).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let op = Op::Concat {
            parts: parts.to_vec(),
            axis,
        };
        Ok(self.push(Tensor::new(shape, data)?, op, rg))
    }

    /// Nearest-neighbour 2x upsampling of `[B, C, H, W]`.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(TensorError::Dimension {
                op: "upsample2x",
                msg: format!("expected rank 4, got {s:?}"),
            });
        }
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let src = self.value(x).data();
        let mut out = vec![0.0; planes * 4 * h * w];
        for p in 0..planes {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    out[(p * 2 * h + y) * 2 * w + xx] = src[(p * h + y / 2) * w + xx / 2];
                }
            }
        }
        let rg = self.rg(x);
        let shape = vec![s[0], s[1], 2 * h, 2 * w];
        Ok(self.push(Tensor::new(shape, out)?, Op::Upsample2x { x }, rg))
    }

    /// Mean over the spatial axes: `[B, C, H, W] -> [B, C]`.
    pub fn spatial_mean(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(TensorError::Dimension {
                op: "spatial_mean",
                msg: format!("expected rank 4, got {s:?}"),
            });
        }
        let hw = s[2] * s[3];
        let out = self
            .value(x)
            .data()
            .chunks(hw)
            .map(|c| c.iter().sum::<f64>() / hw as f64)
            .collect();
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![s[0], s[1]], out)?,
            Op::SpatialMean { x },
            rg,
        ))
    }

    /// Inclusive prefix sum along `axis`.
    pub fn cumsum(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.rank() {
            return Err(TensorError::Dimension {
                op: "cumsum",
                msg: format!("axis {axis} out of range for {:?}", xv.shape()),
            });
        }
        let (outer, n, inner) = split_axis(xv.shape(), axis);
        let mut out = xv.data().to_vec();
        for o in 0..outer {
            for k in 1..n {
                for i in 0..inner {
                    let at = o * n * inner + k * inner + i;
                    out[at] += out[at - inner];
                }
            }
        }
        let shape = xv.shape().to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Cumsum { x, axis }, rg))
    }

    /// `out[b, 0, y, x] = sum_k probs[b, k, y, x] * centers[b, k]`.
    pub fn bin_expectation(&mut self, probs: Var, centers: Var) -> Result<Var> {
        let (ps, cs) = (self.shape(probs).to_vec(), self.shape(centers).to_vec());
        if ps.len() != 4 || cs.len() != 2 || ps[0] != cs[0] || ps[1] != cs[1] {
            return Err(TensorError::Shape {
                op: "bin_expectation",
                lhs: ps,
                rhs: cs,
            });
        }
        let (b, n, hw) = (ps[0], ps[1], ps[2] * ps[3]);
        let p = self.value(probs).data();
        let c = self.value(centers).data();
        let mut out = vec![0.0; b * hw];
        for item in 0..b {
            let dst = &mut out[item * hw..(item + 1) * hw];
            for k in 0..n {
                let ck = c[item * n + k];
                let src = &p[(item * n + k) * hw..(item * n + k + 1) * hw];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s * ck;
                }
            }
        }
        let rg = self.rg(probs) || self.rg(centers);
        let shape = vec![b, 1, ps[2], ps[3]];
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::BinExpectation { probs, centers },
            rg,
        ))
    }

    /// Per-item bidirectional squared chamfer distance between 1-d point
    /// sets: mean over targets of the squared distance to the nearest
    /// center, plus mean over centers of the squared distance to the nearest
    /// target. `centers` is `[B, N]`; `targets[b]` is the point set of item
    /// `b`. Output is `[B]`.
    pub fn chamfer(&mut self, centers: Var, targets: &[Vec<f64>]) -> Result<Var> {
        let cs = self.shape(centers).to_vec();
        if cs.len() != 2 || cs[0] != targets.len() {
            return Err(TensorError::Dimension {
                op: "chamfer",
                msg: format!("centers {cs:?} for {} target sets", targets.len()),
            });
        }
        let (b, n) = (cs[0], cs[1]);
        let cv = self.value(centers).data();
        let mut out = vec![0.0; b];
        let mut local = vec![0.0; b * n];
        for item in 0..b {
            let c = &cv[item * n..(item + 1) * n];
            let t = &targets[item];
            if n == 0 || t.is_empty() {
                return Err(TensorError::Degenerate {
                    op: "chamfer",
                    msg: format!("item {item} has an empty point set"),
                });
            }
            let (value, grad) = kernels::chamfer_1d(c, t);
            out[item] = value;
            local[item * n..(item + 1) * n].copy_from_slice(&grad);
        }
        let rg = self.rg(centers);
        Ok(self.push(Tensor::vector(out), Op::Chamfer { centers, local }, rg))
    }

    /// Reverse sweep from a scalar `loss`, returning gradients for every leaf
    /// that requires them.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut leaves: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                leaves[idx] = Some(Tensor::new(node.value.shape().to_vec(), g)?);
            }
        }
        Ok(Gradients { grads: leaves })
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        if !self.rg(v) {
            return None;
        }
        let n = self.value(v).len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (batch, inp) = (self.shape(*x)[0], self.shape(*x)[1]);
                let o = self.shape(*w)[1];
                if let Some(gx) = self.slot(grads, *x) {
                    // gx += g * w^T
                    kernels::gemm(
                        batch,
                        o,
                        inp,
                        g,
                        (o, 1),
                        self.value(*w).data(),
                        (1, o),
                        gx,
                        1.0,
                    );
                }
                if let Some(gw) = self.slot(grads, *w) {
                    // gw += x^T * g
                    kernels::gemm(
                        inp,
                        batch,
                        o,
                        self.value(*x).data(),
                        (1, inp),
                        g,
                        (o, 1),
                        gw,
                        1.0,
                    );
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for row in g.chunks(o) {
                        for (d, s) in gb.iter_mut().zip(row) {
                            *d += s;
                        }
                    }
                }
            }
            Op::Conv2d { x, k, bias, geom } => {
                if let Some(gk) = self.slot(grads, *k) {
                    kernels::conv2d_grad_kernel(geom, self.value(*x).data(), g, gk);
                }
                if let Some(b) = bias {
                    if let Some(gb) = self.slot(grads, *b) {
                        let plane = geom.out_h * geom.out_w;
                        for (i, chunk) in g.chunks(plane).enumerate() {
                            gb[i % geom.filters] += chunk.iter().sum::<f64>();
                        }
                    }
                }
                if let Some(gx) = self.slot(grads, *x) {
                    kernels::conv2d_grad_input(geom, self.value(*k).data(), g, gx);
                }
            }
            Op::Unary { x, kind } => {
                let xv = self.value(*x).data();
                let yv = out.data();
                if let Some(gx) = self.slot(grads, *x) {
                    for i in 0..gx.len() {
                        gx[i] += g[i]
                            * match kind {
                                Unary::Relu => {
                                    if xv[i] > 0.0 {
                                        1.0
                                    } else {
                                        0.0
                                    }
                                }
                                Unary::Log => 1.0 / xv[i],
                                Unary::Exp => yv[i],
                                Unary::Sqrt => {
                                    if yv[i] > 0.0 {
                                        0.5 / yv[i]
                                    } else {
                                        0.0
                                    }
                                }
                            };
                    }
                }
            }
            Op::Binary { a, b, kind } => {
                let av = self.value(*a).data().to_vec();
                let bv = self.value(*b).data().to_vec();
                let pick = |d: &[f64], i: usize| if d.len() == 1 { d[0] } else { d[i] };
                let n = g.len();
                let da: Vec<f64> = (0..n)
                    .map(|i| match kind {
                        Binary::Add | Binary::Sub => g[i],
                        Binary::Mul => g[i] * pick(&bv, i),
                        Binary::Div => g[i] / pick(&bv, i),
                    })
                    .collect();
                let db: Vec<f64> = (0..n)
                    .map(|i| match kind {
                        Binary::Add => g[i],
                        Binary::Sub => -g[i],
                        Binary::Mul => g[i] * pick(&av, i),
                        Binary::Div => {
                            let q = pick(&bv, i);
                            -g[i] * pick(&av, i) / (q * q)
                        }
                    })
                    .collect();
                for (v, contrib) in [(*a, da), (*b, db)] {
                    if let Some(gv) = self.slot(grads, v) {
                        if gv.len() == 1 && n != 1 {
                            gv[0] += contrib.iter().sum::<f64>();
                        } else {
                            for (d, s) in gv.iter_mut().zip(&contrib) {
                                *d += s;
                            }
                        }
                    }
                }
            }
            Op::Scale { x, c } => {
                if let Some(gx) = self.slot(grads, *x) {
                    for (d, s) in gx.iter_mut().zip(g) {
                        *d += s * c;
                    }
                }
            }
            Op::Shift { x } => {
                if let Some(gx) = self.slot(grads, *x) {
                    for (d, s) in gx.iter_mut().zip(g) {
                        *d += s;
                    }
                }
            }
            Op::Softmax { x, axis } => {
                let (outer, n, inner) = split_axis(out.shape(), *axis);
                let y = out.data();
                if let Some(gx) = self.slot(grads, *x) {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |k: usize| o * n * inner + k * inner + i;
                            let dot: f64 = (0..n).map(|k| g[at(k)] * y[at(k)]).sum();
                            for k in 0..n {
                                gx[at(k)] += y[at(k)] * (g[at(k)] - dot);
                            }
                        }
                    }
                }
            }
            Op::Reduce {
                x,
                kind,
                mask,
                count,
            } => {
                let scale = match kind {
                    Reduction::Sum => g[0],
                    Reduction::Mean => g[0] / *count as f64,
                };
                if let Some(gx) = self.slot(grads, *x) {
                    for (i, d) in gx.iter_mut().enumerate() {
                        if mask.as_ref().is_none_or(|m| m[i]) {
                            *d += scale;
                        }
                    }
                }
            }
            Op::ItemMean { x, mask, counts } => {
                if let Some(gx) = self.slot(grads, *x) {
                    let per = gx.len() / counts.len().max(1);
                    for (i, d) in gx.iter_mut().enumerate() {
                        if mask.as_ref().is_none_or(|m| m[i]) {
                            let item = i / per;
                            *d += g[item] / counts[item] as f64;
                        }
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let shape = out.shape();
                let outer = numel(&shape[..*axis]);
                let inner = numel(&shape[*axis + 1..]);
                let row = shape[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let chunk = self.shape(p)[*axis] * inner;
                    if let Some(gp) = self.slot(grads, p) {
                        for o in 0..outer {
                            let src = &g[o * row + offset..o * row + offset + chunk];
                            for (d, s) in gp[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                    offset += chunk;
                }
            }
            Op::Upsample2x { x } => {
                let s = self.shape(*x).to_vec();
                let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
                if let Some(gx) = self.slot(grads, *x) {
                    for p in 0..planes {
                        for y in 0..2 * h {
                            for xx in 0..2 * w {
                                gx[(p * h + y / 2) * w + xx / 2] += g[(p * 2 * h + y) * 2 * w + xx];
                            }
                        }
                    }
                }
            }
            Op::SpatialMean { x } => {
                let s = self.shape(*x).to_vec();
                let hw = s[2] * s[3];
                if let Some(gx) = self.slot(grads, *x) {
                    for (plane, chunk) in gx.chunks_mut(hw).enumerate() {
                        let v = g[plane] / hw as f64;
                        for d in chunk {
                            *d += v;
                        }
                    }
                }
            }
            Op::Cumsum { x, axis } => {
                let (outer, n, inner) = split_axis(out.shape(), *axis);
                if let Some(gx) = self.slot(grads, *x) {
                    for o in 0..outer {
                        for i in 0..inner {
                            let mut running = 0.0;
                            for k in (0..n).rev() {
                                let at = o * n * inner + k * inner + i;
                                running += g[at];
                                gx[at] += running;
                            }
                        }
                    }
                }
            }
            Op::BinExpectation { probs, centers } => {
                let ps = self.shape(*probs).to_vec();
                let (b, n, hw) = (ps[0], ps[1], ps[2] * ps[3]);
                if let Some(gp) = self.slot(grads, *probs) {
                    let c = self.value(*centers).data();
                    for item in 0..b {
                        let gi = &g[item * hw..(item + 1) * hw];
                        for k in 0..n {
                            let ck = c[item * n + k];
                            let dst = &mut gp[(item * n + k) * hw..(item * n + k + 1) * hw];
                            for (d, s) in dst.iter_mut().zip(gi) {
                                *d += s * ck;
                            }
                        }
                    }
                }
                if let Some(gc) = self.slot(grads, *centers) {
                    let p = self.value(*probs).data();
                    for item in 0..b {
                        let gi = &g[item * hw..(item + 1) * hw];
                        for k in 0..n {
                            let src = &p[(item * n + k) * hw..(item * n + k + 1) * hw];
                            gc[item * n + k] += src.iter().zip(gi).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                }
            }
            Op::Chamfer { centers, local } => {
                let n = self.shape(*centers)[1];
                if let Some(gc) = self.slot(grads, *centers) {
                    for (j, d) in gc.iter_mut().enumerate() {
                        *d += g[j / n] * local[j];
                    }
                }
            }
        }
    }
}
