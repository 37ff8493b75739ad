//! Cue inputs from segmentations produced outside the simulator.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use cuedepth_autodiff::{io, Tensor};
use serde::{Deserialize, Serialize};

use crate::cues::{BBox, Frame};
use crate::error::{Error, Result};
use crate::scene::{appearance_stack, LabelMap};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescribedInstance {
    pub id: u32,
    /// Bounding box reported by the segmenter; measured from the raster
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
}

/// Instance raster location plus the instances it contains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDescriptor {
    pub instance_raster: PathBuf,
    pub instances: Vec<DescribedInstance>,
}

impl InstanceDescriptor {
    /// Reads the JSON descriptor; a relative raster path is taken relative
    /// to the descriptor.
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut d: Self = serde_json::from_str(&text).map_err(|e| Error::file(path, e))?;
        if d.instance_raster.is_relative() {
            if let Some(base) = path.parent() {
                d.instance_raster = base.join(&d.instance_raster);
            }
        }
        Ok(d)
    }
}

/// Reads an `id,name` CSV mapping semantic labels to class names.
pub fn read_class_names(path: &Path) -> Result<BTreeMap<u32, String>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::file(path, e))?;
    let headers = reader.headers().map_err(|e| Error::file(path, e))?;
    if headers.iter().collect::<Vec<_>>() != ["id", "name"] {
        return Err(Error::file(path, "expected header `id,name`"));
    }
    let mut names = BTreeMap::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        let id: u32 = rec[0].parse().map_err(|_| Error::Parse {
            line,
            msg: format!("`{}` is not a class id", &rec[0]),
        })?;
        if id == 0 {
            return Err(Error::Parse {
                line,
                msg: "class id 0 is reserved for background".into(),
            });
        }
        names.insert(id, rec[1].to_string());
    }
    Ok(names)
}

/// An externally segmented image: everything a cue map needs, no depth.
#[derive(Clone, Debug, PartialEq)]
pub struct IngestedSample {
    pub appearance: Tensor,
    pub semantic: LabelMap,
    pub instance: LabelMap,
    pub bboxes: BTreeMap<u32, BBox>,
    pub names: BTreeMap<u32, String>,
}

impl IngestedSample {
    pub fn from_parts(
        appearance: Tensor,
        semantic: LabelMap,
        instance: LabelMap,
        descriptor: &InstanceDescriptor,
        names: BTreeMap<u32, String>,
    ) -> Result<Self> {
        let (w, h) = (semantic.width, semantic.height);
        if (instance.width, instance.height) != (w, h) {
            return Err(Error::Validation(format!(
                "dimension mismatch: label raster is {w}x{h}, instance raster is {}x{}",
                instance.width, instance.height
            )));
        }
        let appearance = match appearance.shape() {
            [ah, aw] | [1, ah, aw] if (*aw, *ah) == (w, h) => {
                appearance_stack(appearance.into_data(), w, h)
            }
            [3, ah, aw] if (*aw, *ah) == (w, h) => appearance,
            s => {
                return Err(Error::Validation(format!(
                    "dimension mismatch: appearance raster {s:?} does not fit labels {w}x{h} \
                     (expected [H, W], [1, H, W] or [3, H, W])"
                )))
            }
        };
        let described: BTreeSet<u32> = descriptor.instances.iter().map(|d| d.id).collect();
        if let Some(id) = instance
            .ids()
            .into_iter()
            .find(|id| !described.contains(id))
        {
            return Err(Error::Validation(format!(
                "instance id {id} appears in the raster but not in the descriptor"
            )));
        }
        let mut bboxes = BTreeMap::new();
        for d in &descriptor.instances {
            if let Some(b) = d.bbox {
                if b.x0 >= b.x1 || b.y0 >= b.y1 || b.x1 > w || b.y1 > h {
                    return Err(Error::Validation(format!(
                        "instance id {}: bbox {b:?} is empty or outside {w}x{h}",
                        d.id
                    )));
                }
                bboxes.insert(d.id, b);
            }
        }
        if let Some(label) = semantic
            .data
            .iter()
            .copied()
            .find(|&l| l > 0 && !names.contains_key(&l))
        {
            return Err(Error::Lookup(format!(
                "class id {label} has no name in the class list"
            )));
        }
        Ok(Self {
            appearance,
            semantic,
            instance,
            bboxes,
            names,
        })
    }

    pub fn frame(&self) -> Frame<'_> {
        Frame {
            appearance: &self.appearance,
            semantic: &self.semantic,
            semantic2: None,
            instance: &self.instance,
            bboxes: Some(&self.bboxes),
        }
    }
}

fn read_labels(path: &Path) -> Result<LabelMap> {
    let t = io::load(path).map_err(|e| Error::file(path, e))?;
    LabelMap::from_tensor(&t).map_err(|e| Error::file(path, e))
}

/// Loads a label raster, an instance descriptor (which names the instance
/// raster), an appearance raster and an `id,name` class list.
pub fn ingest_external_sample(
    labels: &Path,
    descriptor: &Path,
    appearance: &Path,
    class_names: &Path,
) -> Result<IngestedSample> {
    let desc = InstanceDescriptor::read(descriptor)?;
    let semantic = read_labels(labels)?;
    let instance = read_labels(&desc.instance_raster)?;
    let app = io::load(appearance).map_err(|e| Error::file(appearance, e))?;
    let names = read_class_names(class_names)?;
    IngestedSample::from_parts(app, semantic, instance, &desc, names)
}
