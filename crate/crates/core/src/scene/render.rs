use cuedepth_autodiff::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{project, Camera, Catalog, Scene, SceneInstance};
use crate::error::{Error, Result};

/// Integer raster (semantic labels or instance ids), row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u32>,
}

impl LabelMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.data[y * self.width + x]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Distinct non-zero values in ascending order.
    pub fn ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.data.iter().copied().filter(|&v| v > 0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.height, self.width],
            self.data.iter().map(|&v| v as f64).collect(),
        )
        .expect("extents match data")
    }

    /// Reads a rank-2 raster of integral, non-negative values.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let shape = t.shape();
        let (height, width) = match *shape {
            [h, w] => (h, w),
            [1, h, w] => (h, w),
            _ => {
                return Err(Error::Format(format!(
                    "label raster must be rank 2, got shape {shape:?}"
                )))
            }
        };
        let mut data = Vec::with_capacity(t.len());
        for (i, &v) in t.data().iter().enumerate() {
            if !(v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64) {
                return Err(Error::Format(format!(
                    "label raster value {v} at pixel {i} is not a non-negative integer"
                )));
            }
            data.push(v as u32);
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }
}

/// One rendered image with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    /// `[3, H, W]`: albedo, u / width, v / height.
    pub appearance: Tensor,
    pub semantic: LabelMap,
    pub instance: LabelMap,
    /// `[H, W]` metres.
    pub depth: Tensor,
    pub scene: Scene,
}

impl SceneSample {
    pub fn width(&self) -> usize {
        self.semantic.width
    }

    pub fn height(&self) -> usize {
        self.semantic.height
    }

    pub fn find(&self, instance_id: u32) -> Option<&SceneInstance> {
        self.scene
            .instances
            .iter()
            .find(|i| i.instance_id == instance_id)
    }
}

/// Appends the normalized x and y pixel-centre coordinate channels to a
/// single intensity channel, giving `[3, H, W]`.
pub fn appearance_stack(mut intensity: Vec<f64>, width: usize, height: usize) -> Tensor {
    assert_eq!(intensity.len(), width * height, "intensity extent");
    intensity.reserve(2 * width * height);
    for _ in 0..height {
        intensity.extend((0..width).map(|x| (x as f64 + 0.5) / width as f64));
    }
    for y in 0..height {
        intensity.extend(std::iter::repeat_n((y as f64 + 0.5) / height as f64, width));
    }
    Tensor::new(vec![3, height, width], intensity).expect("extents match data")
}

/// Z-buffered rasterization. A pixel belongs to an instance when its centre
/// lies inside the projected rectangle; the nearer instance wins, and equal
/// depths go to the lower instance id.
pub fn render(scene: &Scene, camera: &Camera, sigma_app: f64, noise_seed: u64) -> SceneSample {
    let (w, h) = (camera.width_px, camera.height_px);
    let mut depth = vec![camera.background_depth; w * h];
    let mut albedo = vec![scene.background_albedo; w * h];
    let mut semantic = LabelMap::zeros(w, h);
    let mut instance = LabelMap::zeros(w, h);
    for inst in &scene.instances {
        let Some(fp) = project(inst, camera) else {
            continue;
        };
        let (xs, ys) = fp.pixel_span();
        for y in ys {
            for x in xs.clone() {
                let p = y * w + x;
                if instance.data[p] == 0 || inst.depth_z < depth[p] {
                    depth[p] = inst.depth_z;
                    albedo[p] = inst.albedo;
                    semantic.data[p] = Catalog::label(inst.class_id);
                    instance.data[p] = inst.instance_id;
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let mut app = Vec::with_capacity(3 * w * h);
    for &a in &albedo {
        let noise = if sigma_app > 0.0 {
            sigma_app * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
        app.push((a + noise).clamp(0.0, 1.0));
    }
    SceneSample {
        appearance: appearance_stack(app, w, h),
        semantic,
        instance,
        depth: Tensor::new(vec![h, w], depth).expect("extents match data"),
        scene: scene.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::SceneInstance;

    fn inst(id: u32, class_id: usize, z: f64, center: (f64, f64)) -> SceneInstance {
        SceneInstance {
            instance_id: id,
            class_id,
            true_dims: (0.25, 0.25),
            depth_z: z,
            center_px: center,
            albedo: 0.25 * id as f64,
        }
    }

    #[test]
    fn nearer_instance_wins_overlap() {
        let cam = Camera::default();
        let scene = Scene {
            instances: vec![inst(1, 0, 3.0, (32.0, 32.0)), inst(2, 1, 1.0, (32.0, 32.0))],
            background_albedo: 0.9,
        };
        let s = render(&scene, &cam, 0.0, 0);
        let p = 32 * 64 + 32;
        assert_eq!(s.instance.data[p], 2);
        assert_eq!(s.semantic.data[p], 2);
        assert_eq!(s.depth.data()[p], 1.0);
        assert_eq!(s.appearance.data()[p], 0.5);
    }

    #[test]
    fn coordinate_channels_span_unit_square() {
        let s = render(
            &Scene {
                instances: vec![],
                background_albedo: 0.3,
            },
            &Camera::default(),
            0.0,
            0,
        );
        assert_eq!(s.appearance.at(&[1, 0, 0]), 0.5 / 64.0);
        assert_eq!(s.appearance.at(&[1, 5, 63]), 63.5 / 64.0);
        assert_eq!(s.appearance.at(&[2, 63, 5]), 63.5 / 64.0);
        assert!(s.depth.data().iter().all(|&d| d == 10.0));
    }

    #[test]
    fn label_map_tensor_round_trip() {
        let mut m = LabelMap::zeros(3, 2);
        m.data[4] = 7;
        assert_eq!(LabelMap::from_tensor(&m.to_tensor()).unwrap(), m);
        let bad = Tensor::new(vec![1, 2], vec![0.5, 1.0]).unwrap();
        assert!(LabelMap::from_tensor(&bad).is_err());
    }
}
