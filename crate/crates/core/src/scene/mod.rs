//! Synthetic pinhole scenes of fronto-parallel billboards.

mod catalog;
mod dataset;
mod render;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use catalog::{Catalog, ObjectClass};
pub use dataset::{generate_dataset, Dataset, DatasetManifest, MANIFEST_FILE};
pub use render::{appearance_stack, render, LabelMap, SceneSample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub focal_px: f64,
    pub width_px: usize,
    pub height_px: usize,
    pub depth_range: (f64, f64),
    pub background_depth: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Self {
            focal_px: 64.0,
            width_px: 64,
            height_px: 64,
            depth_range: (1.0, 10.0),
            background_depth: 10.0,
        }
    }
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.depth_range;
        if !(self.focal_px > 0.0) {
            return Err(Error::Config(format!(
                "focal_px {} must be positive",
                self.focal_px
            )));
        }
        if self.width_px == 0 || self.height_px == 0 {
            return Err(Error::Config("image extents must be positive".into()));
        }
        if !(lo > 0.0 && lo < hi) {
            return Err(Error::Config(format!("invalid depth range ({lo}, {hi})")));
        }
        if !(lo..=hi).contains(&self.background_depth) {
            return Err(Error::Config(format!(
                "background depth {} outside ({lo}, {hi})",
                self.background_depth
            )));
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.width_px * self.height_px
    }
}

/// Which size cue a scene is built to expose.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Familiar classes at independent depths.
    Familiar,
    /// At least two instances of one class at distinct depths.
    Relative,
    /// Unfamiliar classes only.
    Absolute,
    /// The first two catalog classes, which look alike but differ in size.
    /// Instances are kept inside the frame and never overlap, so apparent
    /// area is fully observable.
    Ambiguous,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Familiar => "familiar",
            Preset::Relative => "relative",
            Preset::Absolute => "absolute",
            Preset::Ambiguous => "ambiguous",
        })
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "familiar" => Ok(Preset::Familiar),
            "relative" => Ok(Preset::Relative),
            "absolute" => Ok(Preset::Absolute),
            "ambiguous" => Ok(Preset::Ambiguous),
            _ => Err(Error::Config(format!("unknown preset `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub preset: Preset,
    /// Inclusive range of instance counts per scene.
    pub instances: (usize, usize),
    /// Standard deviation of additive albedo noise.
    pub sigma_app: f64,
    /// Minimum albedo difference between an object and the background.
    pub min_contrast: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            preset: Preset::Familiar,
            instances: (1, 4),
            sigma_app: 0.02,
            min_contrast: 0.1,
        }
    }
}

impl SceneConfig {
    pub fn preset(preset: Preset) -> Self {
        Self {
            preset,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.instances;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!(
                "invalid instance range ({lo}, {hi})"
            )));
        }
        if !(self.sigma_app >= 0.0) {
            return Err(Error::Config("sigma_app must be non-negative".into()));
        }
        if !(0.0..0.5).contains(&self.min_contrast) {
            return Err(Error::Config("min_contrast must lie in [0, 0.5)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneInstance {
    pub instance_id: u32,
    pub class_id: usize,
    /// Visible width and height in metres after per-instance scaling.
    pub true_dims: (f64, f64),
    pub depth_z: f64,
    pub center_px: (f64, f64),
    pub albedo: f64,
}

/// Instances plus the per-image background albedo.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub instances: Vec<SceneInstance>,
    pub background_albedo: f64,
}

/// Clipped image-plane rectangle of a projected instance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Footprint {
    pub u0: f64,
    pub v0: f64,
    pub w_px: f64,
    pub h_px: f64,
}

impl Footprint {
    /// Pixel columns and rows whose centres fall inside the rectangle.
    pub fn pixel_span(&self) -> (Range<usize>, Range<usize>) {
        (
            center_span(self.u0, self.u0 + self.w_px),
            center_span(self.v0, self.v0 + self.h_px),
        )
    }

    pub fn pixel_count(&self) -> usize {
        let (xs, ys) = self.pixel_span();
        xs.len() * ys.len()
    }
}

/// Pixels `i` with `lo <= i + 0.5 < hi`; both ends are non-negative.
fn center_span(lo: f64, hi: f64) -> Range<usize> {
    let a = (lo - 0.5).ceil().max(0.0) as usize;
    let b = (hi - 0.5).ceil().max(0.0) as usize;
    a..b.max(a)
}

/// Unclipped projected extents of an instance in pixels.
pub fn projected_size(instance: &SceneInstance, camera: &Camera) -> (f64, f64) {
    let (w, h) = instance.true_dims;
    (
        camera.focal_px * w / instance.depth_z,
        camera.focal_px * h / instance.depth_z,
    )
}

/// Projects an instance to its clipped image rectangle. Returns `None` when
/// no pixel centre is covered, in which case the caller should resample.
pub fn project(instance: &SceneInstance, camera: &Camera) -> Option<Footprint> {
    debug_assert!(instance.depth_z > 0.0);
    let (w, h) = projected_size(instance, camera);
    let (u, v) = instance.center_px;
    let x0 = (u - w / 2.0).max(0.0);
    let x1 = (u + w / 2.0).min(camera.width_px as f64);
    let y0 = (v - h / 2.0).max(0.0);
    let y1 = (v + h / 2.0).min(camera.height_px as f64);
    if x1 <= x0 || y1 <= y0 {
        return None;
    }
    let fp = Footprint {
        u0: x0,
        v0: y0,
        w_px: x1 - x0,
        h_px: y1 - y0,
    };
    (fp.pixel_count() > 0).then_some(fp)
}

/// Depth at which a billboard of the given metric size covers `area_px`
/// pixels.
pub fn depth_from_area(focal_px: f64, width_m: f64, height_m: f64, area_px: f64) -> f64 {
    focal_px * (width_m * height_m / area_px).sqrt()
}

/// True when the unclipped rectangle lies inside the frame.
pub fn fully_in_frame(instance: &SceneInstance, camera: &Camera) -> bool {
    let (w, h) = projected_size(instance, camera);
    let (u, v) = instance.center_px;
    u - w / 2.0 >= 0.0
        && v - h / 2.0 >= 0.0
        && u + w / 2.0 <= camera.width_px as f64
        && v + h / 2.0 <= camera.height_px as f64
}

const MAX_TRIES: usize = 1000;
const MIN_DEPTH_GAP: f64 = 0.1;

/// Draws the instances of one scene. Deterministic in `seed`.
pub fn sample_scene(
    catalog: &Catalog,
    camera: &Camera,
    config: &SceneConfig,
    seed: u64,
) -> Result<Scene> {
    camera.validate()?;
    config.validate()?;
    let fail = |msg: String| Error::Generation {
        preset: config.preset.to_string(),
        msg,
    };
    if catalog.is_empty() {
        return Err(fail("empty catalog".into()));
    }
    let pool: Vec<usize> = match config.preset {
        Preset::Familiar => (0..catalog.len())
            .filter(|&i| catalog.classes()[i].familiar)
            .collect(),
        Preset::Absolute => (0..catalog.len())
            .filter(|&i| !catalog.classes()[i].familiar)
            .collect(),
        Preset::Relative => (0..catalog.len()).collect(),
        Preset::Ambiguous => {
            let c = catalog.classes();
            if c.len() < 2 || c[0].mean_dims == c[1].mean_dims {
                return Err(fail(
                    "needs two leading classes with different mean_dims".into(),
                ));
            }
            vec![0, 1]
        }
    };
    if pool.is_empty() {
        return Err(fail("no eligible classes in catalog".into()));
    }
    let (lo, hi) = config.instances;
    if config.preset == Preset::Relative && hi < 2 {
        return Err(fail("needs room for at least two instances".into()));
    }
    let (d_min, _) = camera.depth_range;
    if config.preset == Preset::Relative && camera.background_depth - d_min <= MIN_DEPTH_GAP {
        return Err(fail("depth range too narrow for distinct depths".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background_albedo: f64 = rng.gen();
    let mut n = rng.gen_range(lo..=hi);
    if config.preset == Preset::Relative {
        n = n.max(2);
    }
    let shared = *pool.choose(&mut rng).expect("non-empty pool");

    let mut instances: Vec<SceneInstance> = Vec::with_capacity(n);
    let mut spans = Vec::with_capacity(n);
    for k in 0..n {
        let class_id = if config.preset == Preset::Relative && k < 2 {
            shared
        } else {
            *pool.choose(&mut rng).expect("non-empty pool")
        };
        let class = &catalog.classes()[class_id];
        let mut placed = None;
        for _ in 0..MAX_TRIES {
            let scale = (class.size_sigma * rng.sample::<f64, _>(StandardNormal)).exp();
            let depth_z = log_uniform(&mut rng, d_min, camera.background_depth);
            let albedo = contrasting_albedo(&mut rng, background_albedo, config.min_contrast);
            let inst = SceneInstance {
                instance_id: k as u32 + 1,
                class_id,
                true_dims: (class.mean_dims[0] * scale, class.mean_dims[1] * scale),
                depth_z,
                center_px: (
                    rng.gen::<f64>() * camera.width_px as f64,
                    rng.gen::<f64>() * camera.height_px as f64,
                ),
                albedo,
            };
            if config.preset == Preset::Relative
                && k == 1
                && (depth_z - instances[0].depth_z).abs() <= MIN_DEPTH_GAP
            {
                continue;
            }
            let Some(fp) = project(&inst, camera) else {
                continue;
            };
            if config.preset == Preset::Ambiguous {
                let span = fp.pixel_span();
                if !fully_in_frame(&inst, camera) || spans.iter().any(|s| overlaps(s, &span)) {
                    continue;
                }
                spans.push(span);
            }
            placed = Some(inst);
            break;
        }
        match placed {
            Some(inst) => instances.push(inst),
            // Crowded scenes keep what fits once the minimum count is met.
            None if k
                >= lo.max(if config.preset == Preset::Relative {
                    2
                } else {
                    1
                }) =>
            {
                break
            }
            None => {
                return Err(fail(format!(
                    "could not place instance {} of class `{}` after {MAX_TRIES} tries",
                    k + 1,
                    class.name
                )))
            }
        }
    }
    Ok(Scene {
        instances,
        background_albedo,
    })
}

fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    (lo.ln() + rng.gen::<f64>() * (hi / lo).ln())
        .exp()
        .clamp(lo, hi)
}

/// Uniform albedo at least `gap` away from the background value.
fn contrasting_albedo(rng: &mut impl Rng, background: f64, gap: f64) -> f64 {
    loop {
        let a: f64 = rng.gen();
        if (a - background).abs() >= gap {
            return a;
        }
    }
}

fn overlaps(a: &(Range<usize>, Range<usize>), b: &(Range<usize>, Range<usize>)) -> bool {
    a.0.start < b.0.end && b.0.start < a.0.end && a.1.start < b.1.end && b.1.start < a.1.end
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_instance(z: f64, center: (f64, f64)) -> SceneInstance {
        SceneInstance {
            instance_id: 1,
            class_id: 0,
            true_dims: (1.0, 1.0),
            depth_z: z,
            center_px: center,
            albedo: 0.5,
        }
    }

    #[test]
    fn center_span_counts_covered_centres() {
        assert_eq!(center_span(0.0, 3.0), 0..3);
        assert_eq!(center_span(0.6, 1.4), 1..1);
        assert_eq!(center_span(0.4, 1.6), 0..2);
    }

    #[test]
    fn off_screen_instance_projects_to_nothing() {
        let cam = Camera::default();
        assert!(project(&unit_instance(2.0, (-100.0, 10.0)), &cam).is_none());
    }

    #[test]
    fn clipping_keeps_rectangle_inside_image() {
        let cam = Camera::default();
        let fp = project(&unit_instance(1.0, (0.0, 0.0)), &cam).unwrap();
        assert_eq!((fp.u0, fp.v0, fp.w_px, fp.h_px), (0.0, 0.0, 32.0, 32.0));
        assert_eq!(fp.pixel_count(), 32 * 32);
    }

    #[test]
    fn log_uniform_stays_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let z = log_uniform(&mut rng, 1.0, 10.0);
            assert!((1.0..=10.0).contains(&z));
        }
    }

    #[test]
    fn ambiguous_preset_needs_distinct_sizes() {
        let c = ObjectClass::new("a", [1.0, 1.0, 1.0], 0.0, true);
        let mut d = c.clone();
        d.name = "b".into();
        let cat = Catalog::new(vec![c, d]).unwrap();
        let err = sample_scene(
            &cat,
            &Camera::default(),
            &SceneConfig::preset(Preset::Ambiguous),
            0,
        )
        .unwrap_err();
        assert!(err.to_string().contains("ambiguous"));
    }
}
