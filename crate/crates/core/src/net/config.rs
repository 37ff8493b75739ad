use cuedepth_autodiff::OptimizerKind;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    /// Per-image adaptive bins with per-pixel bin probabilities.
    #[default]
    Adabins,
    /// Single-channel regression: `relu(x) + 1e-4`.
    Plain,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    #[default]
    Adam,
}

impl From<Optimizer> for OptimizerKind {
    fn from(o: Optimizer) -> Self {
        match o {
            Optimizer::Sgd => OptimizerKind::Sgd,
            Optimizer::Adam => OptimizerKind::Adam,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub silog_lambda: f64,
    pub silog_alpha: f64,
    /// Weight of the bin-centre chamfer term; ignored by the plain head.
    pub bin_loss_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            silog_lambda: 0.85,
            silog_alpha: 10.0,
            bin_loss_weight: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub weight_decay: f64,
    /// Share of samples held out for validation.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-3,
            epochs: 12,
            batch: 8,
            seed: 0,
            optimizer: Optimizer::Adam,
            weight_decay: 0.0,
            val_fraction: 0.1,
        }
    }
}

/// Factor by which the bin range extends beyond the scene's depth range.
/// Bin centres lie strictly inside the range, so targets on its boundary
/// (the background plane) would otherwise only be reached with saturated
/// probabilities.
pub const BIN_RANGE_MARGIN: f64 = 1.25;

/// Bin range for scenes whose depths lie in `scene_range`.
pub fn bin_range(scene_range: (f64, f64)) -> (f64, f64) {
    (
        scene_range.0 / BIN_RANGE_MARGIN,
        scene_range.1 * BIN_RANGE_MARGIN,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub in_channels: usize,
    pub base_width: usize,
    pub n_bins: usize,
    pub depth_range: (f64, f64),
    pub head: Head,
    pub loss: LossConfig,
    pub train: TrainConfig,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            base_width: 16,
            n_bins: 32,
            depth_range: bin_range((1.0, 10.0)),
            head: Head::Adabins,
            loss: LossConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        let (lo, hi) = self.depth_range;
        if self.in_channels == 0 || self.base_width == 0 {
            return err("in_channels and base_width must be positive".into());
        }
        if self.n_bins < 2 {
            return err(format!("n_bins must be at least 2, got {}", self.n_bins));
        }
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return err(format!("invalid depth range ({lo}, {hi})"));
        }
        if !(self.loss.bin_loss_weight >= 0.0) {
            return err("bin_loss_weight must be non-negative".into());
        }
        if !(self.loss.silog_alpha > 0.0 && (0.0..=1.0).contains(&self.loss.silog_lambda)) {
            return err("silog_alpha must be positive and silog_lambda in [0, 1]".into());
        }
        let t = &self.train;
        if !(t.lr >= 0.0) || t.batch == 0 || !(0.0..1.0).contains(&t.val_fraction) {
            return err("lr >= 0, batch > 0 and val_fraction in [0, 1) required".into());
        }
        if !(t.weight_decay >= 0.0) {
            return err("weight_decay must be non-negative".into());
        }
        Ok(())
    }

    /// Bin-loss weight actually applied.
    pub fn bin_weight(&self) -> f64 {
        match self.head {
            Head::Adabins => self.loss.bin_loss_weight,
            Head::Plain => 0.0,
        }
    }
}
