//! Central finite-difference gradient checking.
//!
//! These helpers only ever evaluate the forward function, so they stay an
//! independent reference for the analytic gradients produced by
//! [`Graph::backward`](crate::Graph::backward).

/// Central-difference gradient of `f` at `point` with step `h`.
pub fn numerical_gradient<F>(mut f: F, point: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = point.to_vec();
    (0..point.len())
        .map(|i| {
            x[i] = point[i] + h;
            let plus = f(&x);
            x[i] = point[i] - h;
            let minus = f(&x);
            x[i] = point[i];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Relative error `|a - n| / max(|a|, |n|, floor)`. The floor keeps entries
/// whose true derivative is ~0 from dominating on round-off alone.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / scale
}

/// Largest relative error over paired gradient entries.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n, floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let g = numerical_gradient(|v| v[0] * v[0] + 3.0 * v[0] * v[1], &[1.0, 2.0], 1e-5);
        assert!((g[0] - 8.0).abs() < 1e-8);
        assert!((g[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(relative_error(0.0, 1e-12, 1e-6), 1e-6);
        assert!((relative_error(2.0, 1.0, 1e-6) - 0.5).abs() < 1e-15);
    }
}

use crate::{Graph, Result, Tensor, Var};

/// Outcome of [`check_graph`].
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
}

/// Compares `backward` against central differences for a scalar-valued
/// graph built by `build` from `inputs`. Every input is a tracked leaf.
pub fn check_graph<F>(inputs: &[Tensor], build: F, h: f64, floor: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.param(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            grads
                .get(v)
                .map_or_else(|| vec![0.0; t.len()], |g| g.data().to_vec())
        })
        .collect();

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut failure = None;
    for (i, t) in inputs.iter().enumerate() {
        let grad = numerical_gradient(
            |x| {
                let mut values = inputs.to_vec();
                values[i] = Tensor::new(t.shape().to_vec(), x.to_vec()).expect("same shape");
                match eval(&values) {
                    Ok(v) => v,
                    Err(e) => {
                        failure.get_or_insert(e);
                        f64::NAN
                    }
                }
            },
            t.data(),
            h,
        );
        numeric.push(grad);
    }
    if let Some(e) = failure {
        return Err(e);
    }
    let max_rel_error = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| max_relative_error(a, n, floor))
        .fold(0.0, f64::max);
    Ok(GradCheck {
        max_rel_error,
        analytic,
        numeric,
    })
}

/// Max relative error observed for one operation across random instances.
#[derive(Clone, Debug)]
pub struct OpCheck {
    pub op: &'static str,
    pub instances: usize,
    pub max_rel_error: f64,
}

type Builder = fn(&mut Graph, &[Var], &[Tensor]) -> Result<Var>;

struct OpCase {
    name: &'static str,
    /// Random differentiable inputs for one instance, plus fixed side data.
    make: fn(&mut rand_chacha::ChaCha8Rng) -> (Vec<Tensor>, Vec<Tensor>),
    build: Builder,
}

fn uniform(rng: &mut rand_chacha::ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    use rand::Rng;
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
    )
    .expect("shape matches")
}

/// Values bounded away from zero so that kinks are never straddled by the
/// finite-difference stencil.
fn signed_away_from_zero(rng: &mut rand_chacha::ChaCha8Rng, shape: &[usize]) -> Tensor {
    use rand::Rng;
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05..1.5);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

/// Contracts an arbitrary output with fixed random weights so every output
/// element receives a distinct upstream gradient.
fn contract(g: &mut Graph, out: Var, weights: &Tensor) -> Result<Var> {
    let w = g.constant(weights.clone().reshape(g.shape(out))?);
    let prod = g.mul(out, w)?;
    g.sum(prod)
}

fn cases() -> Vec<OpCase> {
    use rand::Rng;
    vec![
        OpCase {
            name: "linear",
            make: |r| {
                let (b, i, o) = (r.gen_range(1..4), r.gen_range(1..5), r.gen_range(1..5));
                (
                    vec![
                        uniform(r, &[b, i], -1.0, 1.0),
                        uniform(r, &[i, o], -1.0, 1.0),
                        uniform(r, &[o], -1.0, 1.0),
                    ],
                    vec![uniform(r, &[b * o], -1.0, 1.0)],
                )
            },
            build: |g, v, side| {
                let y = g.linear(v[0], v[1], v[2])?;
                contract(g, y, &side[0])
            },
        },
        OpCase {
            name: "conv2d 3x3 stride 1",
            make: |r| {
                let f = r.gen_range(1..4);
                (
                    vec![
                        uniform(r, &[1, 2, 4, 4], -1.0, 1.0),
                        uniform(r, &[f, 2, 3, 3], -1.0, 1.0),
                        uniform(r, &[f], -1.0, 1.0),
                    ],
                    vec![uniform(r, &[f * 16], -1.0, 1.0)],
                )
            },
            build: |g, v, side| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
                contract(g, y, &side[0])
            },
        },
        OpCase {
            name: "conv2d 3x3 stride 2",
            make: |r| {
                let f = r.gen_range(1..4);
                (
                    vec![
                        uniform(r, &[2, 2, 6, 4], -1.0, 1.0),
                        uniform(r, &[f, 2, 3, 3], -1.0, 1.0),
                    ],
                    vec![uniform(r, &[2 * f * 3 * 2], -1.0, 1.0)],
                )
            },
            build: |g, v, side| {
                let y = g.conv2d(v[0], v[1], None, 2, 1)?;
                contract(g, y, &side[0])
            },
        },
        OpCase {
            name: "conv2d 1x1",
            make: |r| {
                let f = r.gen_range(1..4);
                (
                    vec![
                        uniform(r, &[2, 3, 3, 2], -1.0, 1.0),
                        uniform(r, &[f, 3, 1, 1], -1.0, 1.0),
                        uniform(r, &[f], -1.0, 1.0),
                    ],
                    vec![uniform(r, &[2 * f * 6], -1.0, 1.0)],
                )
            },
            build: |g, v, side| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), 1, 0)?;
                contract(g, y, &side[0])
            },
        },
        OpCase {
            name: "relu",
            make: |r| {
                (
                    vec![signed_away_from_zero(r, &[7])],
                    vec![uniform(r, &[7], -1.0, 1.0)],
                )
            },
            build: |g, v, side| {
                let y = g.relu(v[0])?;
                contract(g, y, &side[0])
            },
        },
        OpCase {
            name: "log",
            make: |r| {
                (
                    vec![uniform(r, &[6], 0.2, 3.0)],
                    vec![uniform(r, &[6], -1.0, 1.0)],
                )
            },
            build: |g, v, side| {
                let y = g.log(v[0])?;
                contract(g, y, &side[0])
            },
        },
        OpCase {
            name: "exp",
            make: |r| {
                (
                    vec![uniform(r, &[6], -2.0, 2.0)],
                    vec![uniform(r, &[6], -1.0, 1.0)],
                )
            },
            build: |g, v, side| {
                let y = g.exp(v[0])?;
                contract(g, y, &side[0])
            },
        },
        OpCase {
            name: "sqrt",
            make: |r| {
                (
                    vec![uniform(r, &[6], 0.2, 3.0)],
                    vec![uniform(r, &[6], -1.0, 1.0)],
                )
            },
            build: |g, v, side| {
                let y = g.sqrt(v[0])?;
                contract(g, y, &side[0])
            },
        },
        OpCase {
            name: "add/sub/mul/div",
            make: |r| {
                (
                    vec![
                        uniform(r, &[5], -1.0, 1.0),
                        uniform(r, &[5], 0.5, 2.0),
                        uniform(r, &[], 0.5, 2.0),
                    ],
                    vec![uniform(r, &[5], -1.0, 1.0)],
                )
            },
            build: |g, v, side| {
                let a = g.add(v[0], v[1])?;
                let b = g.mul(a, v[2])?;
                let c = g.sub(b, v[1])?;
                let d = g.div(c, v[1])?;
                let e = g.div(d, v[2])?;
                let f = g.scale(e, -1.7);
                let h = g.shift(f, 0.3);
                contract(g, h, &side[0])
            },
        },
        OpCase {
            name: "softmax",
            make: |r| {
                let (b, n) = (r.gen_range(1..4), r.gen_range(2..6));
                (
                    vec![uniform(r, &[b, n], -3.0, 3.0)],
                    vec![uniform(r, &[b * n], -1.0, 1.0)],
                )
            },
            build: |g, v, side| {
                let y = g.softmax(v[0], 1)?;
                let z = g.softmax(y, 0)?;
                contract(g, z, &side[0])
            },
        },
        OpCase {
            name: "reduce",
            make: |r| {
                let x = uniform(r, &[3, 4], -1.0, 1.0);
                let mask = uniform(r, &[12], 0.0, 1.0);
                (vec![x], vec![mask])
            },
            build: |g, v, side| {
                let mut mask: Vec<bool> = side[0].data().iter().map(|&m| m > 0.4).collect();
                mask[0] = true;
                let sq = g.mul(v[0], v[0])?;
                let m = g.reduce(sq, crate::Reduction::Mean, Some(&mask))?;
                let s = g.reduce(v[0], crate::Reduction::Sum, None)?;
                let ms = g.mul(m, s)?;
                g.add(ms, m)
            },
        },
        OpCase {
            name: "item_mean",
            make: |r| {
                (
                    vec![uniform(r, &[3, 2, 2], -1.0, 1.0)],
                    vec![uniform(r, &[3], -1.0, 1.0)],
                )
            },
            build: |g, v, side| {
                let mask = [
                    true, false, true, true, false, true, false, false, false, false, true, true,
                ];
                let y = g.item_mean(v[0], Some(&mask))?;
                contract(g, y, &side[0])
            },
        },
        OpCase {
            name: "concat/upsample/spatial_mean",
            make: |r| {
                (
                    vec![
                        uniform(r, &[1, 2, 2, 3], -1.0, 1.0),
                        uniform(r, &[1, 1, 2, 3], -1.0, 1.0),
                    ],
                    vec![
                        uniform(r, &[3 * 4 * 6], -1.0, 1.0),
                        uniform(r, &[3], -1.0, 1.0),
                    ],
                )
            },
            build: |g, v, side| {
                let cat = g.concat(&[v[0], v[1]], 1)?;
                let up = g.upsample2x(cat)?;
                let a = contract(g, up, &side[0])?;
                let m = g.spatial_mean(cat)?;
                let b = contract(g, m, &side[1])?;
                let ab = g.mul(a, b)?;
                g.add(ab, a)
            },
        },
        OpCase {
            name: "cumsum",
            make: |r| {
                (
                    vec![uniform(r, &[2, 5], -1.0, 1.0)],
                    vec![uniform(r, &[10], -1.0, 1.0)],
                )
            },
            build: |g, v, side| {
                let y = g.cumsum(v[0], 1)?;
                let z = g.cumsum(y, 0)?;
                contract(g, z, &side[0])
            },
        },
        OpCase {
            name: "bin_expectation",
            make: |r| {
                (
                    vec![
                        uniform(r, &[2, 3, 2, 2], 0.0, 1.0),
                        uniform(r, &[2, 3], 1.0, 10.0),
                    ],
                    vec![uniform(r, &[8], -1.0, 1.0)],
                )
            },
            build: |g, v, side| {
                let y = g.bin_expectation(v[0], v[1])?;
                contract(g, y, &side[0])
            },
        },
        OpCase {
            name: "chamfer",
            make: |r| {
                (
                    vec![uniform(r, &[2, 4], 1.0, 10.0)],
                    vec![uniform(r, &[2, 9], 1.0, 10.0), uniform(r, &[2], 0.5, 1.5)],
                )
            },
            build: |g, v, side| {
                let targets: Vec<Vec<f64>> =
                    side[0].data().chunks(9).map(<[f64]>::to_vec).collect();
                let y = g.chamfer(v[0], &targets)?;
                contract(g, y, &side[1])
            },
        },
        OpCase {
            name: "shared consumer",
            make: |r| {
                (
                    vec![uniform(r, &[4], -1.0, 1.0)],
                    vec![uniform(r, &[4], -1.0, 1.0)],
                )
            },
            build: |g, v, side| {
                // x feeds exp and mul; backward must sum both contributions.
                let e = g.exp(v[0])?;
                let m = g.mul(v[0], e)?;
                let s = g.add(m, v[0])?;
                contract(g, s, &side[0])
            },
        },
    ]
}

/// Finite-difference check of every differentiable op on `instances` random
/// inputs each. Step and error floor are caller-chosen.
pub fn op_suite(instances: usize, seed: u64, h: f64, floor: f64) -> Result<Vec<OpCheck>> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for case in cases() {
        let mut worst: f64 = 0.0;
        for _ in 0..instances {
            let (inputs, side) = (case.make)(&mut rng);
            let build = case.build;
            let check = check_graph(&inputs, |g, v| build(g, v, &side), h, floor)?;
            worst = worst.max(check.max_rel_error);
        }
        out.push(OpCheck {
            op: case.name,
            instances,
            max_rel_error: worst,
        });
    }
    Ok(out)
}
