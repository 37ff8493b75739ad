//! Offline summaries of finished runs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::ablation::{align, mean_std};
use super::run::{HISTORY_FILE, METRICS_FILE};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;

pub const PLOT_FILE: &str = "val_loss.svg";

#[derive(Debug, Deserialize)]
struct HistoryRow {
    epoch: usize,
    val_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeedSummary {
    pub seed: String,
    pub metrics: MetricsReport,
    /// `(epoch, val_loss)` per epoch.
    pub val_loss: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSummary {
    pub name: String,
    pub dir: PathBuf,
    pub seeds: Vec<SeedSummary>,
}

impl ExperimentSummary {
    pub fn render_text(&self) -> String {
        let mut header = vec!["seed".to_string()];
        header.extend(MetricsReport::NAMES.iter().map(|s| s.to_string()));
        header.push("T".into());
        let mut lines = vec![header];
        for s in &self.seeds {
            let mut row = vec![s.seed.clone()];
            row.extend(s.metrics.values().iter().map(|v| format!("{v:.4}")));
            row.push(s.metrics.t.to_string());
            lines.push(row);
        }
        let reports: Vec<MetricsReport> = self.seeds.iter().map(|s| s.metrics).collect();
        let (mean, std) = mean_std(&reports);
        let mut row = vec!["mean±std".to_string()];
        row.extend(mean.iter().zip(&std).map(|(m, s)| format!("{m:.4}±{s:.4}")));
        lines.push(row);
        format!("{}\n{}", self.name, align(&lines))
    }

    /// One polyline of validation loss per seed.
    pub fn svg(&self) -> String {
        let (w, h, pad) = (640.0, 400.0, 50.0);
        let points: Vec<(usize, f64)> = self
            .seeds
            .iter()
            .flat_map(|s| s.val_loss.iter().copied())
            .filter(|(_, v)| v.is_finite())
            .collect();
        let max_epoch = points.iter().map(|p| p.0).max().unwrap_or(1).max(2);
        let min_epoch = points
            .iter()
            .map(|p| p.0)
            .min()
            .unwrap_or(1)
            .min(max_epoch - 1);
        let lo = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if lo.is_finite() && hi > lo {
            (lo, hi)
        } else {
            (0.0, lo.abs().max(1.0))
        };
        let x = |e: usize| {
            pad + (e - min_epoch) as f64 / (max_epoch - min_epoch) as f64 * (w - 2.0 * pad)
        };
        let y = |v: f64| h - pad - (v - lo) / (hi - lo) * (h - 2.0 * pad);
        let colors = [
            "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
        ];
        let mut out = String::new();
        writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#).unwrap();
        writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
        writeln!(
            out,
            r#"<rect x="{pad}" y="{pad}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            w - 2.0 * pad,
            h - 2.0 * pad
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{}" y="30" text-anchor="middle" font-size="14">{} validation loss</text>"#,
            w / 2.0,
            self.name
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{pad}" y="{}" font-size="11">epoch {min_epoch}</text>"#,
            h - pad + 18.0
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="end" font-size="11">epoch {max_epoch}</text>"#,
            w - pad,
            h - pad + 18.0
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="end" font-size="11">{hi:.3}</text>"#,
            pad - 4.0,
            pad + 4.0
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="end" font-size="11">{lo:.3}</text>"#,
            pad - 4.0,
            h - pad
        )
        .unwrap();
        for (i, s) in self.seeds.iter().enumerate() {
            let color = colors[i % colors.len()];
            let pts: Vec<String> = s
                .val_loss
                .iter()
                .filter(|(_, v)| v.is_finite())
                .map(|&(e, v)| format!("{:.2},{:.2}", x(e), y(v)))
                .collect();
            writeln!(
                out,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                pts.join(" ")
            )
            .unwrap();
            writeln!(
                out,
                r#"<text x="{}" y="{}" font-size="11" fill="{color}">seed {}</text>"#,
                w - pad + 4.0,
                pad + 14.0 * (i as f64 + 1.0),
                s.seed
            )
            .unwrap();
        }
        out.push_str("</svg>\n");
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub experiments: Vec<ExperimentSummary>,
}

impl RunReport {
    pub fn render_text(&self) -> String {
        self.experiments
            .iter()
            .map(ExperimentSummary::render_text)
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Writes one plot per experiment and returns the paths.
    pub fn write_plots(&self) -> Result<Vec<PathBuf>> {
        self.experiments
            .iter()
            .map(|e| {
                let path = e.dir.join(PLOT_FILE);
                fs::write(&path, e.svg()).map_err(|err| Error::io(&path, err))?;
                Ok(path)
            })
            .collect()
    }
}

fn seed_dirs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if dir.join(HISTORY_FILE).is_file() || dir.join(METRICS_FILE).is_file() {
        out.push(dir.to_path_buf());
        return Ok(());
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    for e in entries {
        seed_dirs(&e, out)?;
    }
    Ok(())
}

fn read_seed(dir: &Path) -> Result<SeedSummary> {
    let metrics_path = dir.join(METRICS_FILE);
    let text = fs::read_to_string(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let metrics: MetricsReport =
        serde_json::from_str(&text).map_err(|e| Error::file(&metrics_path, e))?;
    let history_path = dir.join(HISTORY_FILE);
    let mut reader =
        csv::Reader::from_path(&history_path).map_err(|e| Error::file(&history_path, e))?;
    let val_loss = reader
        .deserialize::<HistoryRow>()
        .map(|r| r.map(|r| (r.epoch, r.val_loss)))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::file(&history_path, e))?;
    Ok(SeedSummary {
        seed: dir
            .file_name()
            .map_or_else(String::new, |n| n.to_string_lossy().into_owned()),
        metrics,
        val_loss,
    })
}

/// Collects every `<experiment>/<seed>/` directory below `dir`.
pub fn report(dir: &Path) -> Result<RunReport> {
    let expected = || {
        format!(
            "expected <experiment>/<seed>/{HISTORY_FILE} and <experiment>/<seed>/{METRICS_FILE} below {}",
            dir.display()
        )
    };
    if !dir.is_dir() {
        return Err(Error::file(dir, format!("not a directory; {}", expected())));
    }
    let mut dirs = Vec::new();
    seed_dirs(dir, &mut dirs)?;
    if dirs.is_empty() {
        return Err(Error::file(dir, format!("no runs found; {}", expected())));
    }
    let mut missing = Vec::new();
    for d in &dirs {
        for f in [HISTORY_FILE, METRICS_FILE] {
            if !d.join(f).is_file() {
                missing.push(d.join(f).display().to_string());
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::file(
            dir,
            format!("missing files: {}", missing.join(", ")),
        ));
    }
    let mut experiments: Vec<ExperimentSummary> = Vec::new();
    for d in dirs {
        let seed = read_seed(&d)?;
        let exp_dir = d.parent().unwrap_or(dir).to_path_buf();
        match experiments.iter_mut().find(|e| e.dir == exp_dir) {
            Some(e) => e.seeds.push(seed),
            None => experiments.push(ExperimentSummary {
                name: exp_dir
                    .strip_prefix(dir)
                    .ok()
                    .filter(|p| !p.as_os_str().is_empty())
                    .unwrap_or(&exp_dir)
                    .display()
                    .to_string(),
                dir: exp_dir,
                seeds: vec![seed],
            }),
        }
    }
    for e in &mut experiments {
        e.seeds.sort_by(
            |a, b| match (a.seed.parse::<u64>(), b.seed.parse::<u64>()) {
                (Ok(x), Ok(y)) => x.cmp(&y),
                _ => a.seed.cmp(&b.seed),
            },
        );
    }
    Ok(RunReport { experiments })
}
