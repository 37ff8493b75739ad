//! Per-pixel cue channels: semantic embeddings, instance area and metric size
//! priors, concatenated after the appearance channels.

mod embedder;
mod prior;
mod table;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use cuedepth_autodiff::{io, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{LabelMap, SceneSample};

pub use embedder::{EmbedderKind, SizeEmbedder, SIZE_EMBED_DIM};
pub use prior::SizePriorTable;
pub use table::{
    embed_class_name, load_embedding_table, make_random_table, synthetic_language_table,
    ClassEmbedding, EmbeddingStats, EmbeddingTable, EMBED_DIM,
};

/// Number of appearance channels: albedo and the two pixel coordinates.
pub const APPEARANCE_CHANNELS: usize = 3;

/// Reference length for the log-size input of the dims embedder. Every real
/// prior maps to a positive value, leaving zero for "no prior".
pub const DIMS_REFERENCE_M: f64 = 0.01;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SemRepr {
    /// One channel holding the semantic label as a float.
    Raw,
    /// Fixed random vectors matching the language table's statistics.
    Random,
    #[default]
    Language,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AreaMode {
    #[default]
    Off,
    /// Pixel count of the instance mask.
    Mask,
    /// Area of the instance's bounding rectangle.
    Bbox,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CueConfig {
    pub sem1: bool,
    pub sem2: bool,
    pub sem_repr: SemRepr,
    pub area: AreaMode,
    pub size: bool,
}

impl CueConfig {
    pub fn baseline() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        let needs_labels = self.sem2 || self.area != AreaMode::Off || self.size;
        if needs_labels && !self.sem1 {
            return Err(Error::Config(
                "sem2, area and size cues require sem1 to be enabled".into(),
            ));
        }
        Ok(())
    }

    pub fn is_baseline(&self) -> bool {
        !self.sem1
    }

    pub fn sem_width(&self) -> usize {
        match self.sem_repr {
            SemRepr::Raw => 1,
            SemRepr::Random | SemRepr::Language => EMBED_DIM,
        }
    }

    pub fn layout(&self) -> CueLayout {
        let mut blocks = Vec::new();
        let mut offset = 0;
        let mut add = |name: &str, width: usize| {
            blocks.push(Block {
                name: name.to_string(),
                offset,
                width,
            });
            offset += width;
        };
        add("appearance", APPEARANCE_CHANNELS);
        if self.sem1 {
            add("sem1", self.sem_width());
        }
        if self.sem2 {
            add("sem2", self.sem_width());
        }
        if self.area != AreaMode::Off {
            add("area", SIZE_EMBED_DIM);
        }
        if self.size {
            add("size", SIZE_EMBED_DIM);
        }
        CueLayout { blocks }
    }

    /// Channels that do not depend on learned parameters.
    pub fn fixed_channels(&self) -> usize {
        APPEARANCE_CHANNELS
            + if self.sem1 { self.sem_width() } else { 0 }
            + if self.sem2 { self.sem_width() } else { 0 }
    }
}

impl fmt::Display for CueConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.sem1 {
            return f.write_str("baseline");
        }
        let repr = match self.sem_repr {
            SemRepr::Raw => "raw",
            SemRepr::Random => "random",
            SemRepr::Language => "language",
        };
        write!(f, "sem1({repr})")?;
        if self.sem2 {
            f.write_str("+sem2")?;
        }
        match self.area {
            AreaMode::Off => {}
            AreaMode::Mask => f.write_str("+area(M)")?,
            AreaMode::Bbox => f.write_str("+area(B)")?,
        }
        if self.size {
            f.write_str("+size")?;
        }
        Ok(())
    }
}

pub fn channel_count(config: &CueConfig) -> usize {
    config.layout().channels()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub offset: usize,
    pub width: usize,
}

/// Names and channel ranges of the blocks in a cue map.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CueLayout {
    pub blocks: Vec<Block>,
}

impl CueLayout {
    pub fn channels(&self) -> usize {
        self.blocks.iter().map(|b| b.width).sum()
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }
}

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn area(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

/// Pixel count and tight bounding box of every instance id in a map.
pub fn instance_extents(map: &LabelMap) -> BTreeMap<u32, (usize, BBox)> {
    let mut out: BTreeMap<u32, (usize, BBox)> = BTreeMap::new();
    for y in 0..map.height {
        for x in 0..map.width {
            let id = map.get(x, y);
            if id == 0 {
                continue;
            }
            let e = out.entry(id).or_insert((
                0,
                BBox {
                    x0: x,
                    y0: y,
                    x1: x + 1,
                    y1: y + 1,
                },
            ));
            e.0 += 1;
            e.1.x0 = e.1.x0.min(x);
            e.1.y0 = e.1.y0.min(y);
            e.1.x1 = e.1.x1.max(x + 1);
            e.1.y1 = e.1.y1.max(y + 1);
        }
    }
    out
}

/// Area of instance `id` as a fraction of the image.
pub fn instance_area(map: &LabelMap, id: u32, mode: AreaMode) -> Result<f64> {
    let (count, bbox) = *instance_extents(map)
        .get(&id)
        .filter(|_| id > 0)
        .ok_or_else(|| Error::Lookup(format!("instance id {id} is not in the map")))?;
    let px = match mode {
        AreaMode::Mask => count,
        AreaMode::Bbox => bbox.area(),
        AreaMode::Off => return Err(Error::Config("area mode is off".into())),
    };
    Ok(px as f64 / map.len() as f64)
}

/// Re-labels each instance with probability `p`, choosing uniformly among
/// the other entries of `labels`. Every pixel of an instance keeps one label.
pub fn flip_labels(
    semantic: &LabelMap,
    instance: &LabelMap,
    labels: &[u32],
    p: f64,
    rng: &mut impl Rng,
) -> LabelMap {
    let mut remap: BTreeMap<u32, u32> = BTreeMap::new();
    for id in instance.ids() {
        let first = instance
            .data
            .iter()
            .position(|&v| v == id)
            .expect("id present");
        let current = semantic.data[first];
        let flip = rng.gen::<f64>() < p;
        let others: Vec<u32> = labels.iter().copied().filter(|&l| l != current).collect();
        let label = if flip && !others.is_empty() {
            others[rng.gen_range(0..others.len())]
        } else {
            current
        };
        remap.insert(id, label);
    }
    let mut out = semantic.clone();
    for (o, &id) in out.data.iter_mut().zip(&instance.data) {
        if id > 0 {
            *o = remap[&id];
        }
    }
    out
}

/// Label rasters and appearance for one image, from the simulator or from an
/// external segmentation.
#[derive(Clone, Copy, Debug)]
pub struct Frame<'a> {
    pub appearance: &'a Tensor,
    pub semantic: &'a LabelMap,
    /// Second, independent labelling for the sem2 block. The first map is
    /// reused when absent.
    pub semantic2: Option<&'a LabelMap>,
    pub instance: &'a LabelMap,
    /// Bounding boxes supplied by the segmenter, used instead of boxes
    /// measured from the raster.
    pub bboxes: Option<&'a BTreeMap<u32, BBox>>,
}

impl<'a> Frame<'a> {
    pub fn of(sample: &'a SceneSample) -> Self {
        Self {
            appearance: &sample.appearance,
            semantic: &sample.semantic,
            semantic2: None,
            instance: &sample.instance,
            bboxes: None,
        }
    }
}

/// Embedding and prior sources for semantic labels.
#[derive(Clone, Debug)]
pub struct CueTables {
    /// Language or random vectors, keyed by class name.
    pub semantic: EmbeddingTable,
    pub priors: SizePriorTable,
}

#[derive(Clone, Debug)]
struct ClassCues {
    sem: Vec<f64>,
    dims: [f64; 3],
}

/// Per-label cue values resolved once from the tables.
#[derive(Clone, Debug)]
pub struct CueResolver {
    config: CueConfig,
    classes: BTreeMap<u32, ClassCues>,
    oov: Vec<String>,
}

impl CueResolver {
    /// `names` maps every semantic label that may appear to its class name.
    pub fn new(
        config: CueConfig,
        tables: &CueTables,
        names: &BTreeMap<u32, String>,
    ) -> Result<Self> {
        config.validate()?;
        let mut classes = BTreeMap::new();
        let mut oov = Vec::new();
        for (&label, name) in names {
            let sem = match config.sem_repr {
                SemRepr::Raw => vec![label as f64],
                SemRepr::Random | SemRepr::Language => {
                    let e = embed_class_name(&tables.semantic, name);
                    if e.oov && config.sem1 {
                        oov.push(name.clone());
                    }
                    e.vector
                }
            };
            let dims = tables
                .priors
                .get(name)
                .map_or([0.0; 3], |d| d.map(|v| (v / DIMS_REFERENCE_M).ln()));
            classes.insert(label, ClassCues { sem, dims });
        }
        Ok(Self {
            config,
            classes,
            oov,
        })
    }

    pub fn config(&self) -> &CueConfig {
        &self.config
    }

    /// Class names that fell back to the zero vector.
    pub fn oov(&self) -> &[String] {
        &self.oov
    }

    fn class(&self, label: u32) -> Result<&ClassCues> {
        self.classes
            .get(&label)
            .ok_or_else(|| Error::Lookup(format!("semantic label {label} has no class name")))
    }

    /// Parameter-free cue channels plus the raw inputs of the size embedders.
    pub fn inputs(&self, frame: &Frame) -> Result<CueInputs> {
        let cfg = &self.config;
        let (w, h) = (frame.semantic.width, frame.semantic.height);
        let hw = w * h;
        if frame.appearance.shape() != [APPEARANCE_CHANNELS, h, w]
            || (frame.instance.width, frame.instance.height) != (w, h)
            || frame
                .semantic2
                .is_some_and(|s| (s.width, s.height) != (w, h))
        {
            return Err(Error::Validation(format!(
                "appearance {:?} and label rasters {}x{} disagree in size",
                frame.appearance.shape(),
                w,
                h
            )));
        }
        let fixed_channels = cfg.fixed_channels();
        let mut fixed = vec![0.0; fixed_channels * hw];
        fixed[..APPEARANCE_CHANNELS * hw].copy_from_slice(frame.appearance.data());
        let sw = cfg.sem_width();
        let mut write_sem = |map: &LabelMap, start: usize| -> Result<()> {
            for (p, &label) in map.data.iter().enumerate() {
                if label > 0 {
                    for (c, v) in self.class(label)?.sem.iter().enumerate() {
                        fixed[(start + c) * hw + p] = *v;
                    }
                }
            }
            Ok(())
        };
        if cfg.sem1 {
            write_sem(frame.semantic, APPEARANCE_CHANNELS)?;
        }
        if cfg.sem2 {
            write_sem(
                frame.semantic2.unwrap_or(frame.semantic),
                APPEARANCE_CHANNELS + sw,
            )?;
        }

        let foreground: Vec<f64> = frame
            .semantic
            .data
            .iter()
            .map(|&l| if l > 0 { 1.0 } else { 0.0 })
            .collect();
        let area = if cfg.area != AreaMode::Off {
            let extents = instance_extents(frame.instance);
            let mut fraction = BTreeMap::new();
            for (&id, &(count, bbox)) in &extents {
                let px = match cfg.area {
                    AreaMode::Mask => count,
                    _ => frame
                        .bboxes
                        .and_then(|b| b.get(&id))
                        .map_or(bbox.area(), BBox::area),
                };
                fraction.insert(id, px as f64 / hw as f64);
            }
            Some(
                frame
                    .instance
                    .data
                    .iter()
                    .map(|id| fraction.get(id).copied().unwrap_or(0.0))
                    .collect(),
            )
        } else {
            None
        };
        let dims = if cfg.size {
            let mut d = vec![0.0; 3 * hw];
            for (p, &label) in frame.semantic.data.iter().enumerate() {
                if label > 0 {
                    for (c, v) in self.class(label)?.dims.iter().enumerate() {
                        d[c * hw + p] = *v;
                    }
                }
            }
            Some(d)
        } else {
            None
        };
        Ok(CueInputs {
            width: w,
            height: h,
            fixed_channels,
            fixed,
            area,
            dims,
            foreground,
        })
    }
}

/// Everything needed to assemble a cue map once embedder parameters are
/// known. Rasters are channel-major `[C, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CueInputs {
    pub width: usize,
    pub height: usize,
    pub fixed_channels: usize,
    pub fixed: Vec<f64>,
    pub area: Option<Vec<f64>>,
    pub dims: Option<Vec<f64>>,
    pub foreground: Vec<f64>,
}

/// The learned embedders a configuration needs.
#[derive(Clone, Debug, PartialEq)]
pub struct CueEmbedders {
    pub area: Option<SizeEmbedder>,
    pub dims: Option<SizeEmbedder>,
}

impl CueEmbedders {
    pub fn new(config: &CueConfig, seed: u64) -> Self {
        Self {
            area: (config.area != AreaMode::Off)
                .then(|| SizeEmbedder::new(EmbedderKind::Area, seed)),
            dims: config
                .size
                .then(|| SizeEmbedder::new(EmbedderKind::Dims, seed)),
        }
    }
}

/// Channel stack `[C, H, W]` with its block layout.
#[derive(Clone, Debug, PartialEq)]
pub struct CueMap {
    pub data: Tensor,
    pub layout: CueLayout,
}

impl CueMap {
    /// Writes `<stem>.cdt` and `<stem>.layout.json`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let tensor_path = dir.join(format!("{stem}.cdt"));
        io::save(&tensor_path, &self.data).map_err(|e| Error::file(&tensor_path, e))?;
        let layout_path = dir.join(format!("{stem}.layout.json"));
        let text = serde_json::to_string_pretty(&self.layout).expect("layout serializes");
        fs::write(&layout_path, text).map_err(|e| Error::io(&layout_path, e))
    }
}

/// Assembles the full cue map of one frame using a snapshot of the embedder
/// parameters.
pub fn build_cue_map(
    frame: &Frame,
    resolver: &CueResolver,
    embedders: &CueEmbedders,
) -> Result<CueMap> {
    let cfg = resolver.config();
    let inputs = resolver.inputs(frame)?;
    let hw = inputs.width * inputs.height;
    let mut data = inputs.fixed.clone();
    let mut embed = |input: &[f64], e: Option<&SizeEmbedder>, name: &str| -> Result<()> {
        let e =
            e.ok_or_else(|| Error::Config(format!("{name} cue enabled without an embedder")))?;
        let c = e.kind().in_channels();
        let mut block = vec![0.0; SIZE_EMBED_DIM * hw];
        let mut cache: Vec<(Vec<f64>, [f64; SIZE_EMBED_DIM])> = Vec::new();
        for p in 0..hw {
            if inputs.foreground[p] == 0.0 {
                continue;
            }
            let x: Vec<f64> = (0..c).map(|i| input[i * hw + p]).collect();
            let y = match cache.iter().find(|(k, _)| *k == x) {
                Some((_, y)) => *y,
                None => {
                    let y = e.apply(&x);
                    cache.push((x, y));
                    y
                }
            };
            for (k, v) in y.iter().enumerate() {
                block[k * hw + p] = *v;
            }
        }
        data.extend(block);
        Ok(())
    };
    if let Some(a) = &inputs.area {
        embed(a, embedders.area.as_ref(), "area")?;
    }
    if let Some(d) = &inputs.dims {
        embed(d, embedders.dims.as_ref(), "size")?;
    }
    let layout = cfg.layout();
    let data = Tensor::new(vec![layout.channels(), inputs.height, inputs.width], data)?;
    Ok(CueMap { data, layout })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_arithmetic() {
        let mut c = CueConfig::baseline();
        assert_eq!(channel_count(&c), 3);
        c.sem1 = true;
        assert_eq!(channel_count(&c), 28);
        c.sem2 = true;
        c.area = AreaMode::Mask;
        c.size = true;
        assert_eq!(channel_count(&c), 73);
        c.sem_repr = SemRepr::Raw;
        assert_eq!(channel_count(&c), 3 + 1 + 1 + 10 + 10);
    }

    #[test]
    fn cues_need_sem1() {
        let c = CueConfig {
            size: true,
            ..CueConfig::default()
        };
        assert!(c.validate().unwrap_err().is_config());
    }

    #[test]
    fn summaries() {
        let c = CueConfig {
            sem1: true,
            area: AreaMode::Bbox,
            size: true,
            ..CueConfig::default()
        };
        assert_eq!(c.to_string(), "sem1(language)+area(B)+size");
        assert_eq!(CueConfig::baseline().to_string(), "baseline");
    }

    #[test]
    fn area_fractions() {
        let mut m = LabelMap::zeros(200, 200);
        for y in 10..60 {
            for x in 20..70 {
                m.data[y * 200 + x] = 3;
            }
        }
        assert_eq!(instance_area(&m, 3, AreaMode::Mask).unwrap(), 0.0625);
        assert_eq!(instance_area(&m, 3, AreaMode::Bbox).unwrap(), 0.0625);
        assert!(matches!(
            instance_area(&m, 4, AreaMode::Mask),
            Err(Error::Lookup(_))
        ));
        let full = LabelMap {
            width: 4,
            height: 3,
            data: vec![1; 12],
        };
        assert_eq!(instance_area(&full, 1, AreaMode::Mask).unwrap(), 1.0);
        assert_eq!(instance_area(&full, 1, AreaMode::Bbox).unwrap(), 1.0);
    }

    #[test]
    fn l_shape_bbox_exceeds_mask() {
        let mut m = LabelMap::zeros(4, 4);
        for p in [0, 1, 2, 4, 8] {
            m.data[p] = 1;
        }
        let mask = instance_area(&m, 1, AreaMode::Mask).unwrap();
        let bbox = instance_area(&m, 1, AreaMode::Bbox).unwrap();
        assert_eq!((mask, bbox), (5.0 / 16.0, 9.0 / 16.0));
    }
}
