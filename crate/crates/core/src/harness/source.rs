use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;

use cuedepth_autodiff::Tensor;

use super::spec::{DatasetRef, NoiseConfig, TableConfig};
use crate::cues::{
    build_cue_map, embed_class_name, flip_labels, load_embedding_table, make_random_table,
    synthetic_language_table, CueConfig, CueEmbedders, CueInputs, CueMap, CueResolver, CueTables,
    EmbeddingTable, Frame, SemRepr, SizePriorTable,
};
use crate::error::{Error, Result};
use crate::net::SampleSource;
use crate::rng::{stream_rng, Stream};
use crate::scene::{Catalog, Dataset, DatasetManifest, LabelMap, MANIFEST_FILE};

pub fn load_dataset(r: &DatasetRef) -> Result<Dataset> {
    r.validate()?;
    match (&r.dir, &r.generate) {
        (Some(dir), _) => Dataset::load(dir),
        (_, Some(block)) => Dataset::generate(block.manifest()?),
        _ => unreachable!("validated"),
    }
}

/// Catalog of a dataset reference without rendering any samples.
pub fn dataset_catalog(r: &DatasetRef) -> Result<Catalog> {
    r.validate()?;
    match (&r.dir, &r.generate) {
        (Some(dir), _) => Ok(DatasetManifest::read(&dir.join(MANIFEST_FILE))?.catalog),
        (_, Some(block)) => Ok(block.manifest()?.catalog),
        _ => unreachable!("validated"),
    }
}

/// Semantic label to class name for every class of a catalog.
pub fn label_names(catalog: &Catalog) -> BTreeMap<u32, String> {
    catalog
        .classes()
        .iter()
        .enumerate()
        .map(|(i, c)| (Catalog::label(i), c.name.clone()))
        .collect()
}

/// The language table named by the configuration, or the synthetic one.
pub fn language_table(cfg: &TableConfig, catalog: &Catalog) -> Result<EmbeddingTable> {
    match &cfg.language {
        Some(path) => {
            let f = File::open(path).map_err(|e| Error::io(path, e))?;
            let (table, duplicates) =
                load_embedding_table(BufReader::new(f)).map_err(|e| Error::file(path, e))?;
            if duplicates > 0 {
                log::warn!(
                    "{}: {duplicates} duplicate tokens, last kept",
                    path.display()
                );
            }
            Ok(table)
        }
        None => Ok(synthetic_language_table(catalog, cfg.seed)),
    }
}

/// Tables for one cue configuration. Random vectors follow the statistics of
/// the language vectors of the catalog's classes.
pub fn build_tables(cfg: &TableConfig, catalog: &Catalog, cues: &CueConfig) -> Result<CueTables> {
    let language = language_table(cfg, catalog)?;
    let priors = match &cfg.priors {
        Some(path) => {
            let f = File::open(path).map_err(|e| Error::io(path, e))?;
            SizePriorTable::from_csv(f).map_err(|e| Error::file(path, e))?
        }
        None => SizePriorTable::from_catalog(catalog),
    };
    let semantic = match cues.sem_repr {
        SemRepr::Random => {
            let names: Vec<String> = catalog.classes().iter().map(|c| c.name.clone()).collect();
            let used = EmbeddingTable::from_entries(
                names
                    .iter()
                    .map(|n| (n.clone(), embed_class_name(&language, n).vector)),
            )?;
            let stats = used.stats().ok_or_else(|| {
                Error::Config("random embeddings need a non-empty catalog".into())
            })?;
            make_random_table(&names, stats, cfg.seed)
        }
        _ => language,
    };
    Ok(CueTables { semantic, priors })
}

/// Cue inputs for simulated samples, with simulated segmentation noise that
/// is fixed per sample.
pub struct SimSource<'a> {
    dataset: &'a Dataset,
    resolver: CueResolver,
    labels: Vec<u32>,
    noise: NoiseConfig,
}

impl<'a> SimSource<'a> {
    pub fn new(
        dataset: &'a Dataset,
        cues: CueConfig,
        tables: &CueTables,
        noise: NoiseConfig,
    ) -> Result<Self> {
        let names = label_names(&dataset.manifest.catalog);
        let resolver = CueResolver::new(cues, tables, &names)?;
        if !resolver.oov().is_empty() {
            log::warn!("classes without embeddings: {}", resolver.oov().join(", "));
        }
        Ok(Self {
            dataset,
            resolver,
            labels: names.keys().copied().collect(),
            noise,
        })
    }

    pub fn resolver(&self) -> &CueResolver {
        &self.resolver
    }

    /// Cue map of sample `index` with the same label noise training sees.
    pub fn cue_map(&self, index: usize, embedders: &CueEmbedders) -> Result<CueMap> {
        self.with_frame(index, |frame| {
            build_cue_map(frame, &self.resolver, embedders)
        })
    }

    fn with_frame<T>(&self, index: usize, f: impl FnOnce(&Frame) -> Result<T>) -> Result<T> {
        let s = &self.dataset.samples[index];
        let seed = self.dataset.manifest.seed;
        let flip = |base: &LabelMap, p: f64, stream: u64| {
            let mut rng = stream_rng(seed, Stream::Labels, 2 * index as u64 + stream);
            flip_labels(base, &s.instance, &self.labels, p, &mut rng)
        };
        let primary =
            (self.noise.label_flip > 0.0).then(|| flip(&s.semantic, self.noise.label_flip, 0));
        let semantic = primary.as_ref().unwrap_or(&s.semantic);
        let second = self
            .resolver
            .config()
            .sem2
            .then(|| flip(semantic, self.noise.sem2_flip, 1));
        let frame = Frame {
            appearance: &s.appearance,
            semantic,
            semantic2: second.as_ref(),
            instance: &s.instance,
            bboxes: None,
        };
        f(&frame)
    }
}

impl SampleSource for SimSource<'_> {
    fn len(&self) -> usize {
        self.dataset.len()
    }

    fn inputs(&self, index: usize) -> Result<CueInputs> {
        self.with_frame(index, |frame| self.resolver.inputs(frame))
    }

    fn depth(&self, index: usize) -> &Tensor {
        &self.dataset.samples[index].depth
    }
}
