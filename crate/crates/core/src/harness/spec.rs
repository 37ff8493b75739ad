use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cues::{channel_count, CueConfig};
use crate::error::{Error, Result};
use crate::net::{bin_range, NetConfig};
use crate::scene::{Camera, Catalog, DatasetManifest, ObjectClass, Preset, SceneConfig};

/// A built-in catalog by name, or an inline list of classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CatalogRef {
    Named(String),
    Inline(Vec<ObjectClass>),
}

impl CatalogRef {
    pub fn resolve(&self) -> Result<Catalog> {
        match self {
            CatalogRef::Named(n) => match n.as_str() {
                "indoor" => Ok(Catalog::indoor()),
                "ambiguous" => Ok(Catalog::ambiguous()),
                _ => Err(Error::Config(format!(
                    "unknown catalog `{n}` (expected `indoor` or `ambiguous`)"
                ))),
            },
            CatalogRef::Inline(classes) => Catalog::new(classes.clone()),
        }
    }
}

/// Inline description of a dataset to render in memory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateBlock {
    pub seed: u64,
    pub count: usize,
    #[serde(flatten)]
    pub scene: SceneConfig,
    /// Defaults to `ambiguous` for the ambiguous preset, `indoor` otherwise.
    #[serde(default)]
    pub catalog: Option<CatalogRef>,
    #[serde(default)]
    pub camera: Camera,
}

impl GenerateBlock {
    pub fn manifest(&self) -> Result<DatasetManifest> {
        let catalog = match &self.catalog {
            Some(c) => c.resolve()?,
            None if self.scene.preset == Preset::Ambiguous => Catalog::ambiguous(),
            None => Catalog::indoor(),
        };
        let m = DatasetManifest {
            seed: self.seed,
            count: self.count,
            scene: self.scene.clone(),
            camera: self.camera.clone(),
            catalog,
        };
        m.validate()?;
        Ok(m)
    }
}

/// Where an experiment's samples come from: exactly one of a dataset
/// directory written by `gen`, or an inline generation block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRef {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<GenerateBlock>,
}

impl DatasetRef {
    pub fn generated(block: GenerateBlock) -> Self {
        Self {
            dir: None,
            generate: Some(block),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.dir, &self.generate) {
            (Some(_), None) | (None, Some(_)) => Ok(()),
            _ => Err(Error::Config(
                "dataset needs exactly one of `dir` or `generate`".into(),
            )),
        }
    }
}

/// Sources for the semantic vectors and size priors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TableConfig {
    /// Word-vector text file. When absent a synthetic table whose vectors
    /// track log object size is derived from the catalog.
    pub language: Option<PathBuf>,
    /// Size prior CSV. When absent the familiar classes of the catalog are
    /// used.
    pub priors: Option<PathBuf>,
    /// Seed of the random table and of the synthetic language table.
    pub seed: u64,
}

impl Default for TableConfig {
    fn default() -> Self {
        Self {
            language: None,
            priors: None,
            seed: 17,
        }
    }
}

/// Simulated segmentation errors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Probability that an instance's primary label is wrong.
    pub label_flip: f64,
    /// Probability that an instance's label in the second map differs.
    pub sem2_flip: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            label_flip: 0.0,
            sem2_flip: 0.15,
        }
    }
}

/// One experiment: a dataset, a cue configuration, a network, and the seeds
/// to train it with. Written as TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    pub dataset: DatasetRef,
    #[serde(default)]
    pub cues: CueConfig,
    /// `in_channels` is derived from the cue configuration; `train.seed` is
    /// replaced by each entry of `seeds`.
    #[serde(default)]
    pub net: NetConfig,
    #[serde(default)]
    pub tables: TableConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut spec: Self =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        spec.normalize();
        spec.validate()?;
        Ok(spec)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec = Self::from_toml(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        // Relative paths inside a spec are relative to the spec file.
        if let Some(base) = path.parent() {
            let fix = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            };
            if let Some(d) = spec.dataset.dir.as_mut() {
                fix(d);
            }
            if let Some(p) = spec.tables.language.as_mut() {
                fix(p);
            }
            if let Some(p) = spec.tables.priors.as_mut() {
                fix(p);
            }
        }
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("spec serializes")
    }

    /// Derives `in_channels` and the bin range from the cues and the
    /// generated camera.
    pub fn normalize(&mut self) {
        self.net.in_channels = channel_count(&self.cues);
        if let Some(g) = &self.dataset.generate {
            self.net.depth_range = bin_range(g.camera.depth_range);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config(format!(
                "invalid experiment name `{}`",
                self.name
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        for p in [&self.noise.label_flip, &self.noise.sem2_flip] {
            if !(0.0..=1.0).contains(p) {
                return Err(Error::Config(
                    "flip probabilities must lie in [0, 1]".into(),
                ));
            }
        }
        self.dataset.validate()?;
        self.cues.validate()?;
        self.net.validate()
    }

    /// Network configuration for one seed.
    pub fn net_for_seed(&self, seed: u64) -> NetConfig {
        let mut net = self.net;
        net.in_channels = channel_count(&self.cues);
        net.train.seed = seed;
        net
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.output.join(&self.name).join(seed.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPEC: &str = r#"
name = "baseline"
seeds = [0, 1]

[dataset.generate]
seed = 3
count = 20
preset = "ambiguous"
instances = [1, 2]

[net]
base_width = 4
n_bins = 8

[net.train]
epochs = 2
"#;

    #[test]
    fn parses_and_derives_channels() {
        let s = ExperimentSpec::from_toml(SPEC).unwrap();
        assert_eq!(s.net.in_channels, 3);
        assert_eq!(s.net.train.epochs, 2);
        assert_eq!(s.net.train.batch, 8);
        let m = s.dataset.generate.as_ref().unwrap().manifest().unwrap();
        assert_eq!(m.catalog, Catalog::ambiguous());
        assert_eq!(m.scene.instances, (1, 2));
        let back = ExperimentSpec::from_toml(&s.to_toml()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn rejects_bad_specs() {
        let no_seeds = SPEC.replace("seeds = [0, 1]", "seeds = []");
        assert!(ExperimentSpec::from_toml(&no_seeds)
            .unwrap_err()
            .is_config());
        let typo = SPEC.replace("base_width", "base_widht");
        assert!(ExperimentSpec::from_toml(&typo).unwrap_err().is_config());
        let bad_cues = format!("{SPEC}\n[cues]\nsize = true\n");
        assert!(ExperimentSpec::from_toml(&bad_cues)
            .unwrap_err()
            .is_config());
    }
}
