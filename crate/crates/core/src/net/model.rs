use cuedepth_autodiff::{Graph, Tensor, Var};

use super::config::{Head, NetConfig};
use crate::cues::{
    channel_count, CueConfig, CueEmbedders, CueInputs, CueMap, EmbedderKind, SizeEmbedder,
    SIZE_EMBED_DIM,
};
use crate::error::{Error, Result};
use crate::params::{he_normal, Bound, ParamSet};
use crate::rng::{stream_rng, Stream};

/// Floor added to every bin width before renormalizing.
pub const WIDTH_FLOOR: f64 = 1e-3;
/// Offset added after the relu of the plain head.
pub const PLAIN_OFFSET: f64 = 1e-4;

/// Bin partition of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct BinState {
    pub widths: Vec<f64>,
    pub centers: Vec<f64>,
}

/// Graph handles produced by the adaptive-bin head.
#[derive(Clone, Copy, Debug)]
pub struct BinVars {
    /// `[B, N]`, each row positive and summing to one.
    pub widths: Var,
    /// `[B, N]` metres.
    pub centers: Var,
    /// `[B, N, H, W]`.
    pub probs: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct NetOutput {
    /// `[B, 1, H, W]` metres.
    pub depth: Var,
    pub bins: Option<BinVars>,
}

enum Layer {
    Conv { cin: usize, cout: usize, k: usize },
    Dense { cin: usize, cout: usize },
}

fn layers(cfg: &NetConfig) -> Vec<(&'static str, Layer)> {
    let (c, w, n) = (cfg.in_channels, cfg.base_width, cfg.n_bins);
    let conv = |cin, cout, k| Layer::Conv { cin, cout, k };
    let mut l = vec![
        ("enc1.conv", conv(c, w, 3)),
        ("enc1.down", conv(w, w, 3)),
        ("enc2.conv", conv(w, 2 * w, 3)),
        ("enc2.down", conv(2 * w, 2 * w, 3)),
        ("enc3.conv", conv(2 * w, 2 * w, 3)),
        ("enc3.down", conv(2 * w, 2 * w, 3)),
        ("dec3", conv(4 * w, 2 * w, 3)),
        ("dec2", conv(4 * w, w, 3)),
        ("dec1", conv(2 * w, w, 3)),
    ];
    match cfg.head {
        Head::Adabins => {
            l.push(("head.logits", conv(w, n, 1)));
            l.push((
                "head.fc1",
                Layer::Dense {
                    cin: 2 * w,
                    cout: 2 * w,
                },
            ));
            l.push((
                "head.fc2",
                Layer::Dense {
                    cin: 2 * w,
                    cout: n,
                },
            ));
        }
        Head::Plain => l.push(("head.out", conv(w, 1, 1))),
    }
    l
}

fn expected_shapes(cfg: &NetConfig) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    for (name, layer) in layers(cfg) {
        match layer {
            Layer::Conv { cin, cout, k } => {
                out.push((format!("{name}.k"), vec![cout, cin, k, k]));
                out.push((format!("{name}.b"), vec![cout]));
            }
            Layer::Dense { cin, cout } => {
                out.push((format!("{name}.w"), vec![cin, cout]));
                out.push((format!("{name}.b"), vec![cout]));
            }
        }
    }
    out
}

/// Encoder/decoder trunk and depth head.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthModel {
    config: NetConfig,
    params: ParamSet,
}

impl DepthModel {
    /// Fresh parameters drawn from the configured training seed.
    pub fn new(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(config.train.seed, Stream::Init, 0);
        let mut params = ParamSet::new();
        let (lo, hi) = config.depth_range;
        for (name, layer) in layers(&config) {
            match layer {
                Layer::Conv { cin, cout, k } => {
                    let mut kernel = he_normal(&mut rng, &[cout, cin, k, k], cin * k * k);
                    let mut bias = Tensor::zeros(&[cout]);
                    if name == "head.out" {
                        // Start the regression near the middle of the range.
                        kernel = kernel.map(|v| 0.1 * v);
                        bias = Tensor::full(&[cout], (lo * hi).sqrt());
                    }
                    params.push(format!("{name}.k"), kernel);
                    params.push(format!("{name}.b"), bias);
                }
                Layer::Dense { cin, cout } => {
                    let mut weight = he_normal(&mut rng, &[cin, cout], cin);
                    if name == "head.fc2" {
                        // Near-uniform bins at initialization.
                        weight = weight.map(|v| 0.1 * v);
                    }
                    params.push(format!("{name}.w"), weight);
                    params.push(format!("{name}.b"), Tensor::zeros(&[cout]));
                }
            }
        }
        Ok(Self { config, params })
    }

    pub fn from_params(config: NetConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let expected = expected_shapes(&config);
        if params.len() != expected.len() {
            return Err(Error::Validation(format!(
                "model needs {} parameter tensors, got {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, shape) in &expected {
            let t = params.require(name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Validation(format!(
                    "parameter `{name}` has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Number of scalar parameters implied by a configuration.
    pub fn parameter_count(config: &NetConfig) -> usize {
        expected_shapes(config)
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    /// Builds the forward pass on `x: [B, in_channels, H, W]`; `H` and `W`
    /// must be multiples of 8. Parameters are looked up under `prefix`.
    pub fn forward(
        g: &mut Graph,
        bound: &Bound,
        prefix: &str,
        cfg: &NetConfig,
        x: Var,
    ) -> Result<NetOutput> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != cfg.in_channels {
            return Err(Error::Config(format!(
                "model expects {} input channels, got input of shape {shape:?}",
                cfg.in_channels
            )));
        }
        if !shape[2].is_multiple_of(8) || !shape[3].is_multiple_of(8) {
            return Err(Error::Config(format!(
                "image extents {}x{} must be multiples of 8",
                shape[3], shape[2]
            )));
        }
        let p = |n: &str| bound.var(&format!("{prefix}{n}"));
        let conv = |g: &mut Graph, x: Var, name: &str, stride: usize| -> Result<Var> {
            let k = p(&format!("{name}.k"))?;
            let b = p(&format!("{name}.b"))?;
            let pad = if g.shape(k)[2] == 3 { 1 } else { 0 };
            let y = g.conv2d(x, k, Some(b), stride, pad)?;
            Ok(g.relu(y)?)
        };
        let e1 = conv(g, x, "enc1.conv", 1)?;
        let d1 = conv(g, e1, "enc1.down", 2)?;
        let e2 = conv(g, d1, "enc2.conv", 1)?;
        let d2 = conv(g, e2, "enc2.down", 2)?;
        let e3 = conv(g, d2, "enc3.conv", 1)?;
        let d3 = conv(g, e3, "enc3.down", 2)?;

        let up = g.upsample2x(d3)?;
        let cat = g.concat(&[up, e3], 1)?;
        let u3 = conv(g, cat, "dec3", 1)?;
        let up = g.upsample2x(u3)?;
        let cat = g.concat(&[up, e2], 1)?;
        let u2 = conv(g, cat, "dec2", 1)?;
        let up = g.upsample2x(u2)?;
        let cat = g.concat(&[up, e1], 1)?;
        let u1 = conv(g, cat, "dec1", 1)?;

        match cfg.head {
            Head::Plain => {
                let y = g.conv2d(u1, p("head.out.k")?, Some(p("head.out.b")?), 1, 0)?;
                let y = g.relu(y)?;
                Ok(NetOutput {
                    depth: g.shift(y, PLAIN_OFFSET),
                    bins: None,
                })
            }
            Head::Adabins => {
                let n = cfg.n_bins as f64;
                let (lo, hi) = cfg.depth_range;
                let logits = g.conv2d(u1, p("head.logits.k")?, Some(p("head.logits.b")?), 1, 0)?;
                let probs = g.softmax(logits, 1)?;

                let pooled = g.spatial_mean(d3)?;
                let h = g.linear(pooled, p("head.fc1.w")?, p("head.fc1.b")?)?;
                let h = g.relu(h)?;
                let h = g.linear(h, p("head.fc2.w")?, p("head.fc2.b")?)?;
                let raw = g.softmax(h, 1)?;
                let floored = g.shift(raw, WIDTH_FLOOR);
                let widths = g.scale(floored, 1.0 / (1.0 + n * WIDTH_FLOOR));

                let cum = g.cumsum(widths, 1)?;
                let half = g.scale(widths, 0.5);
                let mid = g.sub(cum, half)?;
                let scaled = g.scale(mid, hi - lo);
                let centers = g.shift(scaled, lo);
                let depth = g.bin_expectation(probs, centers)?;
                Ok(NetOutput {
                    depth,
                    bins: Some(BinVars {
                        widths,
                        centers,
                        probs,
                    }),
                })
            }
        }
    }

    /// Depth map `[H, W]` for a complete cue map.
    pub fn predict(&self, cue_map: &CueMap) -> Result<Tensor> {
        let s = cue_map.data.shape();
        let (h, w) = (s[1], s[2]);
        let x = cue_map.data.clone().reshape(&[1, s[0], h, w])?;
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g);
        let x = g.constant(x);
        let out = Self::forward(&mut g, &bound, "", &self.config, x)?;
        Ok(g.value(out.depth).clone().reshape(&[h, w])?)
    }
}

/// Cue inputs of several images stacked along a leading batch axis.
#[derive(Clone, Debug)]
pub struct CueBatch {
    pub fixed: Tensor,
    pub area: Option<Tensor>,
    pub dims: Option<Tensor>,
    /// Foreground mask repeated over the embedding channels.
    pub mask: Option<Tensor>,
}

impl CueBatch {
    pub fn new(items: &[&CueInputs]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::Degenerate {
            op: "batch",
            msg: "no samples".into(),
        })?;
        let (h, w) = (first.height, first.width);
        if items
            .iter()
            .any(|i| (i.height, i.width, i.fixed_channels) != (h, w, first.fixed_channels))
        {
            return Err(Error::Validation(
                "batch items differ in size or channels".into(),
            ));
        }
        let b = items.len();
        let stack = |c: usize, get: &dyn Fn(&CueInputs) -> &[f64]| -> Result<Tensor> {
            let mut data = Vec::with_capacity(b * c * h * w);
            for i in items {
                data.extend_from_slice(get(i));
            }
            Ok(Tensor::new(vec![b, c, h, w], data)?)
        };
        let fixed = stack(first.fixed_channels, &|i| &i.fixed)?;
        let area = match first.area {
            Some(_) => Some(stack(1, &|i| i.area.as_deref().unwrap_or(&[]))?),
            None => None,
        };
        let dims = match first.dims {
            Some(_) => Some(stack(3, &|i| i.dims.as_deref().unwrap_or(&[]))?),
            None => None,
        };
        let mask = if area.is_some() || dims.is_some() {
            let mut data = Vec::with_capacity(b * SIZE_EMBED_DIM * h * w);
            for i in items {
                for _ in 0..SIZE_EMBED_DIM {
                    data.extend_from_slice(&i.foreground);
                }
            }
            Some(Tensor::new(vec![b, SIZE_EMBED_DIM, h, w], data)?)
        } else {
            None
        };
        Ok(Self {
            fixed,
            area,
            dims,
            mask,
        })
    }

    pub fn len(&self) -> usize {
        self.fixed.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

const NET_PREFIX: &str = "net.";
const AREA_PREFIX: &str = "embed.area.";
const DIMS_PREFIX: &str = "embed.dims.";

/// Prediction for one image.
#[derive(Clone, Debug)]
pub struct Prediction {
    /// `[H, W]` metres.
    pub depth: Tensor,
    pub bins: Option<BinState>,
}

/// Size embedders plus depth model, trained jointly end to end.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictor {
    net: NetConfig,
    cues: CueConfig,
    params: ParamSet,
}

impl Predictor {
    pub fn new(net: NetConfig, cues: CueConfig) -> Result<Self> {
        Self::check(&net, &cues)?;
        let mut params = ParamSet::new();
        let embedders = CueEmbedders::new(&cues, net.train.seed);
        if let Some(e) = &embedders.area {
            params.extend_prefixed(AREA_PREFIX, e.params());
        }
        if let Some(e) = &embedders.dims {
            params.extend_prefixed(DIMS_PREFIX, e.params());
        }
        params.extend_prefixed(NET_PREFIX, DepthModel::new(net)?.params());
        Ok(Self { net, cues, params })
    }

    /// Reassembles a predictor from stored parameters, checking every shape.
    pub fn from_parts(net: NetConfig, cues: CueConfig, params: ParamSet) -> Result<Self> {
        Self::check(&net, &cues)?;
        let p = Self { net, cues, params };
        p.embedders()?;
        p.depth_model()?;
        let expected = Self::new(net, cues)?.params;
        if expected.len() != p.params.len() {
            return Err(Error::Validation("unexpected parameter tensors".into()));
        }
        Ok(p)
    }

    fn check(net: &NetConfig, cues: &CueConfig) -> Result<()> {
        cues.validate()?;
        net.validate()?;
        let need = channel_count(cues);
        if net.in_channels != need {
            return Err(Error::Config(format!(
                "network takes {} input channels but the cue configuration produces {need}",
                net.in_channels
            )));
        }
        Ok(())
    }

    pub fn net_config(&self) -> &NetConfig {
        &self.net
    }

    pub fn cue_config(&self) -> &CueConfig {
        &self.cues
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Snapshot of the current embedder parameters.
    pub fn embedders(&self) -> Result<CueEmbedders> {
        let get = |kind, prefix| -> Result<Option<SizeEmbedder>> {
            let sub = self.params.subset(prefix);
            if sub.is_empty() {
                Ok(None)
            } else {
                SizeEmbedder::from_params(kind, sub).map(Some)
            }
        };
        let e = CueEmbedders {
            area: get(EmbedderKind::Area, AREA_PREFIX)?,
            dims: get(EmbedderKind::Dims, DIMS_PREFIX)?,
        };
        if e.area.is_some() != (self.cues.area != crate::cues::AreaMode::Off)
            || e.dims.is_some() != self.cues.size
        {
            return Err(Error::Validation(
                "embedder parameters do not match the cue configuration".into(),
            ));
        }
        Ok(e)
    }

    /// Snapshot of the trunk and head.
    pub fn depth_model(&self) -> Result<DepthModel> {
        DepthModel::from_params(self.net, self.params.subset(NET_PREFIX))
    }

    pub fn forward(&self, g: &mut Graph, bound: &Bound, batch: &CueBatch) -> Result<NetOutput> {
        let mut parts = vec![g.constant(batch.fixed.clone())];
        let mask = batch.mask.as_ref().map(|m| g.constant(m.clone()));
        for (input, prefix) in [(&batch.area, AREA_PREFIX), (&batch.dims, DIMS_PREFIX)] {
            if let Some(t) = input {
                let x = g.constant(t.clone());
                let m = mask.expect("mask accompanies embedder inputs");
                parts.push(SizeEmbedder::forward(g, bound, prefix, x, m)?);
            }
        }
        let x = if parts.len() == 1 {
            parts[0]
        } else {
            g.concat(&parts, 1)?
        };
        DepthModel::forward(g, bound, NET_PREFIX, &self.net, x)
    }

    pub fn predict(&self, inputs: &[&CueInputs]) -> Result<Vec<Prediction>> {
        let batch = CueBatch::new(inputs)?;
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g);
        let out = self.forward(&mut g, &bound, &batch)?;
        Ok(split_predictions(&g, &out))
    }
}

pub(crate) fn split_predictions(g: &Graph, out: &NetOutput) -> Vec<Prediction> {
    let depth = g.value(out.depth);
    let s = depth.shape();
    let (b, h, w) = (s[0], s[2], s[3]);
    (0..b)
        .map(|i| Prediction {
            depth: depth
                .item_slice(i)
                .reshape(&[h, w])
                .expect("item slice has H*W values"),
            bins: out.bins.map(|bv| {
                let wt = g.value(bv.widths);
                let ct = g.value(bv.centers);
                let n = wt.shape()[1];
                BinState {
                    widths: wt.data()[i * n..(i + 1) * n].to_vec(),
                    centers: ct.data()[i * n..(i + 1) * n].to_vec(),
                }
            }),
        })
        .collect()
}
