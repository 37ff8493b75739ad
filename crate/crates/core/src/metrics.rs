//! Standard monocular depth error metrics over a masked pixel set.
//!
//! Threshold accuracies use a strict `<` and all logarithms are natural.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rms: f64,
    pub rms_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    #[serde(rename = "T")]
    pub t: usize,
}

impl MetricsReport {
    pub const NAMES: [&'static str; 7] = [
        "abs_rel", "sq_rel", "rms", "rms_log", "delta1", "delta2", "delta3",
    ];

    pub fn values(&self) -> [f64; 7] {
        [
            self.abs_rel,
            self.sq_rel,
            self.rms,
            self.rms_log,
            self.delta1,
            self.delta2,
            self.delta3,
        ]
    }

    pub fn csv_header() -> String {
        let mut s = Self::NAMES.join(",");
        s.push_str(",T");
        s
    }

    pub fn csv_row(&self) -> String {
        let mut parts: Vec<String> = self.values().iter().map(|v| v.to_string()).collect();
        parts.push(self.t.to_string());
        parts.join(",")
    }
}

/// Masked `(pred, gt)` pairs, validated once for every metric.
struct Pairs {
    pred: Vec<f64>,
    gt: Vec<f64>,
}

fn gather(
    op: &'static str,
    pred: &[f64],
    gt: &[f64],
    mask: Option<&[bool]>,
    positive_pred: bool,
) -> Result<Pairs> {
    if pred.len() != gt.len() || mask.is_some_and(|m| m.len() != gt.len()) {
        return Err(Error::Validation(format!(
            "{op}: prediction ({}), ground truth ({}) and mask lengths differ",
            pred.len(),
            gt.len()
        )));
    }
    let mut pairs = Pairs {
        pred: Vec::with_capacity(gt.len()),
        gt: Vec::with_capacity(gt.len()),
    };
    for i in 0..gt.len() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        if !(gt[i] > 0.0) {
            return Err(Error::Domain {
                op,
                index: i,
                value: gt[i],
            });
        }
        if positive_pred && !(pred[i] > 0.0) {
            return Err(Error::Domain {
                op,
                index: i,
                value: pred[i],
            });
        }
        pairs.pred.push(pred[i]);
        pairs.gt.push(gt[i]);
    }
    if pairs.gt.is_empty() {
        return Err(Error::Degenerate {
            op,
            msg: "mask selects no pixels".into(),
        });
    }
    Ok(pairs)
}

impl Pairs {
    fn mean(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        let s: f64 = self.pred.iter().zip(&self.gt).map(|(&y, &t)| f(y, t)).sum();
        s / self.gt.len() as f64
    }

    fn delta(&self, n: i32) -> f64 {
        let thr = 1.25f64.powi(n);
        self.mean(|y, t| if (y / t).max(t / y) < thr { 1.0 } else { 0.0 })
    }
}

pub fn abs_rel(pred: &[f64], gt: &[f64], mask: Option<&[bool]>) -> Result<f64> {
    Ok(gather("abs_rel", pred, gt, mask, false)?.mean(|y, t| (y - t).abs() / t))
}

pub fn sq_rel(pred: &[f64], gt: &[f64], mask: Option<&[bool]>) -> Result<f64> {
    Ok(gather("sq_rel", pred, gt, mask, false)?.mean(|y, t| (y - t).powi(2) / t))
}

pub fn rms(pred: &[f64], gt: &[f64], mask: Option<&[bool]>) -> Result<f64> {
    Ok(gather("rms", pred, gt, mask, false)?
        .mean(|y, t| (y - t).powi(2))
        .sqrt())
}

pub fn rms_log(pred: &[f64], gt: &[f64], mask: Option<&[bool]>) -> Result<f64> {
    Ok(gather("rms_log", pred, gt, mask, true)?
        .mean(|y, t| (y.ln() - t.ln()).powi(2))
        .sqrt())
}

/// Fraction of pixels with `max(y/y*, y*/y) < 1.25^n`.
pub fn delta_acc(pred: &[f64], gt: &[f64], mask: Option<&[bool]>, n: u32) -> Result<f64> {
    if !(1..=3).contains(&n) {
        return Err(Error::Validation(format!(
            "delta order {n} is not 1, 2 or 3"
        )));
    }
    Ok(gather("delta_acc", pred, gt, mask, true)?.delta(n as i32))
}

pub fn evaluate(pred: &[f64], gt: &[f64], mask: Option<&[bool]>) -> Result<MetricsReport> {
    let p = gather("evaluate", pred, gt, mask, true)?;
    Ok(MetricsReport {
        abs_rel: p.mean(|y, t| (y - t).abs() / t),
        sq_rel: p.mean(|y, t| (y - t).powi(2) / t),
        rms: p.mean(|y, t| (y - t).powi(2)).sqrt(),
        rms_log: p.mean(|y, t| (y.ln() - t.ln()).powi(2)).sqrt(),
        delta1: p.delta(1),
        delta2: p.delta(2),
        delta3: p.delta(3),
        t: p.gt.len(),
    })
}
