use cuedepth_autodiff::{Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{he_normal, Bound, ParamSet};
use crate::rng::{stream_rng, Stream};

/// Width of every learned size embedding.
pub const SIZE_EMBED_DIM: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    /// Input: the instance's area fraction.
    Area,
    /// Input: log prior dimensions of the class.
    Dims,
}

impl EmbedderKind {
    pub fn in_channels(self) -> usize {
        match self {
            EmbedderKind::Area => 1,
            EmbedderKind::Dims => 3,
        }
    }
}

/// Two pointwise convolutions with a relu between them: `in -> 10 -> 10`.
#[derive(Clone, Debug, PartialEq)]
pub struct SizeEmbedder {
    kind: EmbedderKind,
    params: ParamSet,
}

impl SizeEmbedder {
    pub fn new(kind: EmbedderKind, seed: u64) -> Self {
        let mut rng = stream_rng(seed, Stream::Init, 100 + kind as u64);
        let c = kind.in_channels();
        let d = SIZE_EMBED_DIM;
        let mut params = ParamSet::new();
        params.push("w1", he_normal(&mut rng, &[d, c, 1, 1], c));
        params.push("b1", Tensor::zeros(&[d]));
        params.push("w2", he_normal(&mut rng, &[d, d, 1, 1], d));
        params.push("b2", Tensor::zeros(&[d]));
        Self { kind, params }
    }

    pub fn from_params(kind: EmbedderKind, params: ParamSet) -> Result<Self> {
        let c = kind.in_channels();
        let d = SIZE_EMBED_DIM;
        let expected: [(&str, Vec<usize>); 4] = [
            ("w1", vec![d, c, 1, 1]),
            ("b1", vec![d]),
            ("w2", vec![d, d, 1, 1]),
            ("b2", vec![d]),
        ];
        for (name, shape) in &expected {
            let t = params.require(name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Validation(format!(
                    "embedder parameter `{name}` has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self { kind, params })
    }

    pub fn kind(&self) -> EmbedderKind {
        self.kind
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Embeds one input vector with the current parameters.
    pub fn apply(&self, input: &[f64]) -> [f64; SIZE_EMBED_DIM] {
        let c = self.kind.in_channels();
        assert_eq!(input.len(), c);
        let p = |n| self.params.get(n).expect("validated").data();
        let (w1, b1, w2, b2) = (p("w1"), p("b1"), p("w2"), p("b2"));
        let hidden: Vec<f64> = (0..SIZE_EMBED_DIM)
            .map(|o| {
                let s: f64 = (0..c).map(|i| w1[o * c + i] * input[i]).sum::<f64>() + b1[o];
                s.max(0.0)
            })
            .collect();
        let mut out = [0.0; SIZE_EMBED_DIM];
        for (o, v) in out.iter_mut().enumerate() {
            *v = (0..SIZE_EMBED_DIM)
                .map(|i| w2[o * SIZE_EMBED_DIM + i] * hidden[i])
                .sum::<f64>()
                + b2[o];
        }
        out
    }

    /// Graph version over a `[B, in, H, W]` raster. `mask` is `[B, 10, H, W]`
    /// and zeroes the output on background pixels. Parameters are looked up
    /// in `bound` under `prefix`.
    pub fn forward(
        g: &mut Graph,
        bound: &Bound,
        prefix: &str,
        input: Var,
        mask: Var,
    ) -> Result<Var> {
        let w1 = bound.var(&format!("{prefix}w1"))?;
        let b1 = bound.var(&format!("{prefix}b1"))?;
        let w2 = bound.var(&format!("{prefix}w2"))?;
        let b2 = bound.var(&format!("{prefix}b2"))?;
        let h = g.conv2d(input, w1, Some(b1), 1, 0)?;
        let h = g.relu(h)?;
        let out = g.conv2d(h, w2, Some(b2), 1, 0)?;
        Ok(g.mul(out, mask)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graph_and_direct_evaluation_agree() {
        let e = SizeEmbedder::new(EmbedderKind::Dims, 4);
        let input = [0.3, -1.2, 2.0, 0.1, 0.0, 0.5];
        let mut g = Graph::new();
        let bound = e.params().bind(&mut g);
        // [1, 3, 1, 2]: two pixels.
        let x = g.constant(Tensor::new(vec![1, 3, 1, 2], input.to_vec()).unwrap());
        let mask = g.constant(Tensor::ones(&[1, SIZE_EMBED_DIM, 1, 2]));
        let y = SizeEmbedder::forward(&mut g, &bound, "", x, mask).unwrap();
        let out = g.value(y);
        for px in 0..2 {
            let direct = e.apply(&[input[px], input[2 + px], input[4 + px]]);
            for (c, v) in direct.iter().enumerate() {
                assert!((out.at(&[0, c, 0, px]) - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shapes_are_checked() {
        let e = SizeEmbedder::new(EmbedderKind::Area, 0);
        assert!(SizeEmbedder::from_params(EmbedderKind::Dims, e.params().clone()).is_err());
        assert!(SizeEmbedder::from_params(EmbedderKind::Area, e.params().clone()).is_ok());
    }
}
