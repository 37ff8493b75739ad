use std::fs;
use std::path::{Path, PathBuf};

use cuedepth_autodiff::io;
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{render, sample_scene, Camera, Catalog, LabelMap, SceneConfig, SceneSample};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to regenerate a dataset bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub count: usize,
    #[serde(flatten)]
    pub scene: SceneConfig,
    #[serde(default)]
    pub camera: Camera,
    pub catalog: Catalog,
}

impl DatasetManifest {
    pub fn new(scene: SceneConfig, catalog: Catalog, seed: u64, count: usize) -> Self {
        Self {
            seed,
            count,
            scene,
            camera: Camera::default(),
            catalog,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        self.scene.validate()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::file(path, e))?;
        m.validate()?;
        Ok(m)
    }

    /// Renders sample `index` from its own seed streams.
    pub fn sample(&self, index: usize) -> Result<SceneSample> {
        let scene_seed = stream_rng(self.seed, Stream::Scene, index as u64).next_u64();
        let noise_seed = stream_rng(self.seed, Stream::Render, index as u64).next_u64();
        let scene = sample_scene(&self.catalog, &self.camera, &self.scene, scene_seed)?;
        Ok(render(
            &scene,
            &self.camera,
            self.scene.sigma_app,
            noise_seed,
        ))
    }
}

fn sample_paths(dir: &Path, index: usize) -> [PathBuf; 4] {
    ["app", "sem", "inst", "depth"].map(|kind| dir.join(format!("{index:05}.{kind}.cdt")))
}

/// Writes the manifest and every sample under `dir`.
pub fn generate_dataset(manifest: &DatasetManifest, dir: &Path) -> Result<()> {
    manifest.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    (0..manifest.count).into_par_iter().try_for_each(|i| {
        let s = manifest.sample(i)?;
        let tensors = [
            s.appearance,
            s.semantic.to_tensor(),
            s.instance.to_tensor(),
            s.depth,
        ];
        for (path, t) in sample_paths(dir, i).iter().zip(&tensors) {
            io::save(path, t).map_err(|e| Error::file(path, e))?;
        }
        Ok(())
    })
}

/// Samples held in memory together with their manifest.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<SceneSample>,
}

impl Dataset {
    /// Renders the dataset in memory without touching disk.
    pub fn generate(manifest: DatasetManifest) -> Result<Self> {
        manifest.validate()?;
        let samples = (0..manifest.count)
            .into_par_iter()
            .map(|i| manifest.sample(i))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { manifest, samples })
    }

    /// Reads a dataset written by [`generate_dataset`]. Instance lists are
    /// regenerated from the manifest; rasters come from disk.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = DatasetManifest::read(&dir.join(MANIFEST_FILE))?;
        let (w, h) = (manifest.camera.width_px, manifest.camera.height_px);
        let mut samples = Vec::with_capacity(manifest.count);
        for i in 0..manifest.count {
            let [app, sem, inst, depth] = sample_paths(dir, i);
            let read = |p: &Path| io::load(p).map_err(|e| Error::file(p, e));
            let appearance = read(&app)?;
            let depth_t = read(&depth)?;
            let semantic = LabelMap::from_tensor(&read(&sem)?).map_err(|e| Error::file(&sem, e))?;
            let instance =
                LabelMap::from_tensor(&read(&inst)?).map_err(|e| Error::file(&inst, e))?;
            if appearance.shape() != [3, h, w]
                || depth_t.shape() != [h, w]
                || (semantic.width, semantic.height) != (w, h)
                || (instance.width, instance.height) != (w, h)
            {
                return Err(Error::file(
                    &app,
                    "sample extents disagree with the manifest camera",
                ));
            }
            let scene = manifest.sample(i)?.scene;
            samples.push(SceneSample {
                appearance,
                semantic,
                instance,
                depth: depth_t,
                scene,
            });
        }
        Ok(Self { manifest, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}
