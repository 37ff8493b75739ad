use std::fmt::Write as _;
use std::str::FromStr;

use super::run::{run_on_dataset, RunOptions, RunOutcome};
use super::source::load_dataset;
use super::spec::{DatasetRef, ExperimentSpec, GenerateBlock};
use crate::cues::{AreaMode, CueConfig, SemRepr};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::net::NetConfig;
use crate::scene::{Camera, Preset, SceneConfig};

const METRICS: usize = MetricsReport::NAMES.len();

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub name: String,
    pub cues: String,
    pub seeds: Vec<u64>,
    pub reports: Vec<MetricsReport>,
    pub mean: [f64; METRICS],
    pub std: [f64; METRICS],
    /// Whether the row's mean RMSE is below the baseline row's; `None` for
    /// the baseline itself or when the suite has no baseline.
    pub direction_check: Option<bool>,
}

impl AblationRow {
    pub fn new(name: &str, cues: &CueConfig, seeds: Vec<u64>, reports: Vec<MetricsReport>) -> Self {
        let (mean, std) = mean_std(&reports);
        Self {
            name: name.to_string(),
            cues: cues.to_string(),
            seeds,
            reports,
            mean,
            std,
            direction_check: None,
        }
    }

    pub fn mean_rms(&self) -> f64 {
        self.mean[2]
    }
}

/// Per-metric mean and sample standard deviation.
pub fn mean_std(reports: &[MetricsReport]) -> ([f64; METRICS], [f64; METRICS]) {
    let n = reports.len() as f64;
    let mut mean = [0.0; METRICS];
    let mut std = [0.0; METRICS];
    if reports.is_empty() {
        return ([f64::NAN; METRICS], [f64::NAN; METRICS]);
    }
    for r in reports {
        for (m, v) in mean.iter_mut().zip(r.values()) {
            *m += v / n;
        }
    }
    if reports.len() > 1 {
        for r in reports {
            for ((s, v), m) in std.iter_mut().zip(r.values()).zip(mean) {
                *s += (v - m).powi(2) / (n - 1.0);
            }
        }
        std.iter_mut().for_each(|s| *s = s.sqrt());
    }
    (mean, std)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Builds the table and fills `direction_check` against the first
    /// baseline row.
    pub fn new(mut rows: Vec<AblationRow>) -> Self {
        let baseline = rows
            .iter()
            .find(|r| r.cues == CueConfig::baseline().to_string())
            .map(|r| r.mean_rms());
        for r in &mut rows {
            r.direction_check = match baseline {
                Some(b) if r.cues != CueConfig::baseline().to_string() => Some(r.mean_rms() < b),
                _ => None,
            };
        }
        Self { rows }
    }

    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,cues,seeds");
        for n in MetricsReport::NAMES {
            write!(out, ",{n}_mean,{n}_std").unwrap();
        }
        out.push_str(",direction_check\n");
        for r in &self.rows {
            write!(out, "{},{},{}", r.name, r.cues, r.seeds.len()).unwrap();
            for (m, s) in r.mean.iter().zip(&r.std) {
                write!(out, ",{m},{s}").unwrap();
            }
            let check = r.direction_check.map(|c| c.to_string()).unwrap_or_default();
            writeln!(out, ",{check}").unwrap();
        }
        out
    }

    /// One line per (row, seed) with the full report.
    pub fn seeds_csv(&self) -> String {
        let mut out = format!("name,seed,{}\n", MetricsReport::csv_header());
        for r in &self.rows {
            for (seed, rep) in r.seeds.iter().zip(&r.reports) {
                writeln!(out, "{},{seed},{}", r.name, rep.csv_row()).unwrap();
            }
        }
        out
    }

    pub fn render_text(&self) -> String {
        let mut header: Vec<String> = vec!["name".into(), "cues".into(), "n".into()];
        header.extend(MetricsReport::NAMES.iter().map(|s| s.to_string()));
        header.push("beats_baseline".into());
        let mut lines = vec![header];
        for r in &self.rows {
            let mut cells = vec![r.name.clone(), r.cues.clone(), r.seeds.len().to_string()];
            cells.extend(
                r.mean
                    .iter()
                    .zip(&r.std)
                    .map(|(m, s)| format!("{m:.4}±{s:.4}")),
            );
            cells.push(match r.direction_check {
                Some(true) => "yes".into(),
                Some(false) => "no".into(),
                None => "-".into(),
            });
            lines.push(cells);
        }
        align(&lines)
    }
}

/// Left-aligns columns separated by two spaces.
pub(crate) fn align(lines: &[Vec<String>]) -> String {
    let cols = lines.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            lines
                .iter()
                .filter_map(|l| l.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for l in lines {
        let row: Vec<String> = l
            .iter()
            .zip(&widths)
            .map(|(s, &w)| format!("{s}{}", " ".repeat(w - s.chars().count())))
            .collect();
        out.push_str(row.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Checks that the specs can be compared row against row.
pub fn check_suite(specs: &[ExperimentSpec]) -> Result<()> {
    if specs.len() < 2 {
        return Err(Error::Config(format!(
            "an ablation needs at least two specs, got {}",
            specs.len()
        )));
    }
    let first = &specs[0];
    let comparable = |n: &NetConfig| NetConfig {
        in_channels: 0,
        ..*n
    };
    for s in &specs[1..] {
        if s.dataset != first.dataset {
            return Err(Error::Config(format!(
                "`{}` uses a different dataset than `{}`",
                s.name, first.name
            )));
        }
        if comparable(&s.net) != comparable(&first.net) {
            return Err(Error::Config(format!(
                "`{}` uses a different network configuration than `{}`",
                s.name, first.name
            )));
        }
        if s.seeds != first.seeds {
            return Err(Error::Config(format!(
                "`{}` uses different seeds than `{}`",
                s.name, first.name
            )));
        }
    }
    let mut names: Vec<&str> = specs.iter().map(|s| s.name.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("experiment names must be distinct".into()));
    }
    Ok(())
}

#[derive(Debug)]
pub struct AblationRun {
    pub table: AblationTable,
    pub outcomes: Vec<RunOutcome>,
}

impl AblationRun {
    pub fn succeeded(&self) -> bool {
        self.outcomes.iter().all(RunOutcome::succeeded)
    }
}

/// Trains every spec independently on one shared dataset. Rows keep only the
/// seeds that succeeded in every spec so that all rows have equal counts.
pub fn run_ablation_suite(specs: &[ExperimentSpec], opts: RunOptions) -> Result<AblationRun> {
    check_suite(specs)?;
    for s in specs {
        s.validate()?;
        if opts.persist {
            super::run::check_outputs(s, opts.force)?;
        }
    }
    let dataset = load_dataset(&specs[0].dataset)?;
    let outcomes = specs
        .iter()
        .map(|s| {
            log::info!("training `{}` ({})", s.name, s.cues);
            run_on_dataset(s, &dataset, opts)
        })
        .collect::<Result<Vec<_>>>()?;
    let common: Vec<u64> = specs[0]
        .seeds
        .iter()
        .copied()
        .filter(|seed| {
            outcomes
                .iter()
                .all(|o| o.results.iter().any(|r| r.seed == *seed))
        })
        .collect();
    let rows = specs
        .iter()
        .zip(&outcomes)
        .map(|(s, o)| {
            let reports = common
                .iter()
                .map(|seed| o.results.iter().find(|r| r.seed == *seed).unwrap().metrics)
                .collect();
            AblationRow::new(&s.name, &s.cues, common.clone(), reports)
        })
        .collect();
    Ok(AblationRun {
        table: AblationTable::new(rows),
        outcomes,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SuitePreset {
    CueLadder,
    EmbeddingAblation,
}

impl SuitePreset {
    pub const ALL: [SuitePreset; 2] = [SuitePreset::CueLadder, SuitePreset::EmbeddingAblation];

    pub fn name(self) -> &'static str {
        match self {
            SuitePreset::CueLadder => "paper-table2-mini",
            SuitePreset::EmbeddingAblation => "embedding-ablation",
        }
    }

    /// Row names and cue configurations, baseline first.
    pub fn rows(self) -> Vec<(&'static str, CueConfig)> {
        let sem = |repr| CueConfig {
            sem1: true,
            sem_repr: repr,
            ..CueConfig::baseline()
        };
        let lang = sem(SemRepr::Language);
        match self {
            SuitePreset::CueLadder => vec![
                ("baseline", CueConfig::baseline()),
                ("sem1", lang),
                (
                    "sem1-area-mask",
                    CueConfig {
                        area: AreaMode::Mask,
                        ..lang
                    },
                ),
                (
                    "sem1-area-bbox",
                    CueConfig {
                        area: AreaMode::Bbox,
                        ..lang
                    },
                ),
                (
                    "sem1-area-mask-size",
                    CueConfig {
                        area: AreaMode::Mask,
                        size: true,
                        ..lang
                    },
                ),
                (
                    "sem1-sem2-area-mask-size",
                    CueConfig {
                        sem2: true,
                        area: AreaMode::Mask,
                        size: true,
                        ..lang
                    },
                ),
            ],
            SuitePreset::EmbeddingAblation => vec![
                ("baseline", CueConfig::baseline()),
                ("raw", sem(SemRepr::Raw)),
                ("random", sem(SemRepr::Random)),
                ("language", lang),
            ],
        }
    }

    /// One spec per row, sharing everything but the cues with `base`.
    pub fn specs(self, base: &ExperimentSpec) -> Result<Vec<ExperimentSpec>> {
        self.rows()
            .into_iter()
            .map(|(name, cues)| {
                let mut s = base.clone();
                s.name = name.to_string();
                s.cues = cues;
                s.output = base.output.join(self.name());
                s.normalize();
                s.validate()?;
                Ok(s)
            })
            .collect()
    }
}

impl FromStr for SuitePreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = Self::ALL.iter().map(|p| p.name()).collect();
                Error::Config(format!(
                    "unknown preset `{s}` (known: {})",
                    known.join(", ")
                ))
            })
    }
}

/// Experiment template used by the built-in suites when no configuration is
/// given: a generated `familiar` dataset and the default network.
pub fn default_base(seeds: Vec<u64>) -> ExperimentSpec {
    let mut spec = ExperimentSpec {
        name: "base".into(),
        seeds,
        output: "runs".into(),
        dataset: DatasetRef::generated(GenerateBlock {
            seed: 0,
            count: 400,
            scene: SceneConfig::preset(Preset::Familiar),
            catalog: None,
            camera: Camera::default(),
        }),
        cues: CueConfig::baseline(),
        net: NetConfig::default(),
        tables: Default::default(),
        noise: Default::default(),
    };
    spec.normalize();
    spec
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(rms: f64) -> MetricsReport {
        MetricsReport {
            abs_rel: 0.1,
            sq_rel: 0.2,
            rms,
            rms_log: 0.3,
            delta1: 0.8,
            delta2: 0.9,
            delta3: 1.0,
            t: 10,
        }
    }

    #[test]
    fn direction_check_against_baseline() {
        let base = AblationRow::new(
            "b",
            &CueConfig::baseline(),
            vec![0, 1],
            vec![report(2.0), report(4.0)],
        );
        let cue = CueConfig {
            sem1: true,
            ..CueConfig::baseline()
        };
        let better = AblationRow::new("s", &cue, vec![0, 1], vec![report(1.0), report(2.0)]);
        let worse = AblationRow::new("w", &cue, vec![0, 1], vec![report(5.0), report(2.0)]);
        let t = AblationTable::new(vec![base, better, worse]);
        assert_eq!(t.rows[0].direction_check, None);
        assert_eq!(t.rows[1].direction_check, Some(true));
        assert_eq!(t.rows[2].direction_check, Some(false));
        assert_eq!(t.rows[0].mean_rms(), 3.0);
        assert!((t.rows[0].std[2] - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(t.to_csv().lines().count(), 4);
        assert_eq!(t.seeds_csv().lines().count(), 7);
        let text = t.render_text();
        let line = text.lines().nth(1).unwrap();
        assert!(line.starts_with("b ") && line.contains(" baseline ") && line.ends_with(" -"));
    }

    #[test]
    fn presets_have_expected_rows() {
        let base = default_base(vec![0]);
        let specs = SuitePreset::CueLadder.specs(&base).unwrap();
        let cues: Vec<String> = specs.iter().map(|s| s.cues.to_string()).collect();
        assert_eq!(
            cues,
            [
                "baseline",
                "sem1(language)",
                "sem1(language)+area(M)",
                "sem1(language)+area(B)",
                "sem1(language)+area(M)+size",
                "sem1(language)+sem2+area(M)+size"
            ]
        );
        assert_eq!(specs[5].net.in_channels, 73);
        check_suite(&specs).unwrap();
        let emb = SuitePreset::EmbeddingAblation.specs(&base).unwrap();
        let ch: Vec<usize> = emb.iter().map(|s| s.net.in_channels).collect();
        assert_eq!(ch, [3, 4, 28, 28]);
        assert!("nope".parse::<SuitePreset>().unwrap_err().is_config());
    }

    #[test]
    fn suite_preconditions() {
        let base = default_base(vec![0]);
        assert!(check_suite(std::slice::from_ref(&base))
            .unwrap_err()
            .is_config());
        let mut specs = SuitePreset::EmbeddingAblation.specs(&base).unwrap();
        specs[1].seeds = vec![1];
        assert!(check_suite(&specs).unwrap_err().is_config());
        let mut specs = SuitePreset::EmbeddingAblation.specs(&base).unwrap();
        if let Some(g) = specs[2].dataset.generate.as_mut() {
            g.seed = 9;
        }
        assert!(check_suite(&specs).unwrap_err().is_config());
    }
}
