use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use cuedepth::cues::{
    build_cue_map, synthetic_language_table, AreaMode, BBox, CueConfig, CueEmbedders, CueResolver,
    CueTables, SizePriorTable,
};
use cuedepth::harness::{
    check_suite, ingest_external_sample, label_names, report, run_ablation_suite, run_experiment,
    DescribedInstance, ExperimentSpec, IngestedSample, InstanceDescriptor, RunOptions, SuitePreset,
    HISTORY_FILE, METRICS_FILE, PLOT_FILE,
};
use cuedepth::scene::{appearance_stack, Catalog, LabelMap};
use cuedepth::Error;
use cuedepth_autodiff::{io, Tensor};

fn spec_text(name: &str, seeds: &str, out: &Path) -> String {
    format!(
        r#"
name = "{name}"
seeds = {seeds}
output = "{}"

[dataset.generate]
seed = 3
count = 6
preset = "familiar"

[dataset.generate.camera]
focal_px = 16.0
width_px = 16
height_px = 16
depth_range = [1.0, 10.0]
background_depth = 10.0

[net]
base_width = 4
n_bins = 8

[net.train]
epochs = 2
batch = 2
val_fraction = 0.34
"#,
        out.display()
    )
}

fn spec(name: &str, seeds: &str, out: &Path) -> ExperimentSpec {
    ExperimentSpec::from_toml(&spec_text(name, seeds, out)).unwrap()
}

#[test]
fn baseline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec("baseline", "[0]", dir.path());
    let out = run_experiment(&s, RunOptions::default()).unwrap();
    assert!(out.succeeded());
    assert!(out.results[0].metrics.t > 0);
    let seed_dir = dir.path().join("baseline").join("0");
    for f in [
        METRICS_FILE,
        HISTORY_FILE,
        "checkpoint/model.json",
        "checkpoint/model.cdt",
    ] {
        assert!(seed_dir.join(f).is_file(), "{f}");
    }
    assert!(dir.path().join("baseline").join("spec.toml").is_file());
}

#[test]
fn rerun_needs_force_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec("repeat", "[1]", dir.path());
    run_experiment(&s, RunOptions::default()).unwrap();
    let metrics = dir.path().join("repeat").join("1").join(METRICS_FILE);
    let first = fs::read(&metrics).unwrap();
    fs::write(&metrics, b"sentinel").unwrap();

    let err = run_experiment(&s, RunOptions::default()).unwrap_err();
    assert!(err.is_config(), "{err}");
    assert!(err.to_string().contains("--force"));
    assert_eq!(fs::read(&metrics).unwrap(), b"sentinel");

    run_experiment(
        &s,
        RunOptions {
            force: true,
            persist: true,
        },
    )
    .unwrap();
    assert_eq!(fs::read(&metrics).unwrap(), first);
}

#[test]
fn experiment_level_errors_abort_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = spec("partial", "[0, 1]", dir.path());
    // A catalog without familiar classes cannot produce a familiar dataset,
    // which is an experiment-level error rather than a seed failure.
    s.dataset.generate.as_mut().unwrap().catalog =
        Some(cuedepth::harness::CatalogRef::Inline(vec![
            cuedepth::scene::ObjectClass::new("crate", [0.4, 0.4, 0.4], 0.1, false),
        ]));
    assert!(matches!(
        run_experiment(&s, RunOptions::default()).unwrap_err(),
        Error::Generation { .. }
    ));
}

#[test]
fn suite_preconditions() {
    let dir = tempfile::tempdir().unwrap();
    let base = spec("base", "[0]", dir.path());
    assert!(
        run_ablation_suite(std::slice::from_ref(&base), RunOptions::default())
            .unwrap_err()
            .is_config()
    );

    let mut other = base.clone();
    other.name = "other".into();
    other.dataset.generate.as_mut().unwrap().seed = 4;
    assert!(check_suite(&[base.clone(), other]).unwrap_err().is_config());

    let rows = SuitePreset::EmbeddingAblation.specs(&base).unwrap();
    let names: Vec<&str> = rows.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, ["baseline", "raw", "random", "language"]);
    check_suite(&rows).unwrap();
}

#[test]
fn ablation_table_means_match_rows() {
    let dir = tempfile::tempdir().unwrap();
    let base = spec("base", "[0, 1]", dir.path());
    let specs: Vec<ExperimentSpec> = SuitePreset::EmbeddingAblation
        .specs(&base)
        .unwrap()
        .into_iter()
        .take(2)
        .collect();
    let run = run_ablation_suite(&specs, RunOptions::default()).unwrap();
    assert!(run.succeeded());
    let rows = &run.table.rows;
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert_eq!(r.reports.len(), 2);
        let mean = r.reports.iter().map(|m| m.rms).sum::<f64>() / 2.0;
        assert!((mean - r.mean_rms()).abs() < 1e-12);
    }
    assert_eq!(rows[0].direction_check, None);
    assert_eq!(
        rows[1].direction_check,
        Some(rows[1].mean_rms() < rows[0].mean_rms())
    );
    let csv = run.table.to_csv();
    assert_eq!(csv.lines().count(), 3);
    assert!(run.table.render_text().contains("raw"));
}

fn rect_instances() -> (LabelMap, LabelMap) {
    let (w, h) = (12, 10);
    let mut sem = LabelMap::zeros(w, h);
    let mut inst = LabelMap::zeros(w, h);
    for (id, label, xs, ys) in [(1u32, 1u32, 1..4, 2..6), (2, 2, 6..11, 0..3)] {
        for y in ys {
            for x in xs.clone() {
                sem.data[y * w + x] = label;
                inst.data[y * w + x] = id;
            }
        }
    }
    (sem, inst)
}

fn names() -> BTreeMap<u32, String> {
    [(1, "chair".to_string()), (2, "table".to_string())].into()
}

fn descriptor(ids: &[u32], with_boxes: bool) -> InstanceDescriptor {
    let boxes = [
        BBox {
            x0: 1,
            y0: 2,
            x1: 4,
            y1: 6,
        },
        BBox {
            x0: 6,
            y0: 0,
            x1: 11,
            y1: 3,
        },
    ];
    InstanceDescriptor {
        instance_raster: "instances.cdt".into(),
        instances: ids
            .iter()
            .map(|&id| DescribedInstance {
                id,
                bbox: with_boxes.then_some(boxes[id as usize - 1]),
            })
            .collect(),
    }
}

fn appearance() -> Tensor {
    Tensor::new(vec![10, 12], vec![0.5; 120]).unwrap()
}

#[test]
fn ingest_validates_its_inputs() {
    let (sem, inst) = rect_instances();
    let ok = IngestedSample::from_parts(
        appearance(),
        sem.clone(),
        inst.clone(),
        &descriptor(&[1, 2], false),
        names(),
    )
    .unwrap();
    assert_eq!(ok.appearance.shape(), [3, 10, 12]);
    assert_eq!(ok.appearance, appearance_stack(vec![0.5; 120], 12, 10));

    let err = IngestedSample::from_parts(
        appearance(),
        sem.clone(),
        inst.clone(),
        &descriptor(&[1], false),
        names(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Validation(_)));
    assert!(err.to_string().contains("instance id 2"), "{err}");

    let small = LabelMap::zeros(5, 5);
    let err = IngestedSample::from_parts(
        appearance(),
        sem.clone(),
        small,
        &descriptor(&[1, 2], false),
        names(),
    )
    .unwrap_err();
    assert!(err.to_string().contains("dimension mismatch"), "{err}");

    let one_name: BTreeMap<u32, String> = [(1, "chair".to_string())].into();
    let err = IngestedSample::from_parts(
        appearance(),
        sem,
        inst,
        &descriptor(&[1, 2], false),
        one_name,
    )
    .unwrap_err();
    assert!(matches!(err, Error::Lookup(_)));
    assert!(err.to_string().contains("class id 2"), "{err}");
}

#[test]
fn descriptor_boxes_and_raster_boxes_agree_on_rectangles() {
    let (sem, inst) = rect_instances();
    let cat = Catalog::indoor();
    let tables = CueTables {
        semantic: synthetic_language_table(&cat, 1),
        priors: SizePriorTable::from_catalog(&cat),
    };
    let cfg = CueConfig {
        sem1: true,
        area: AreaMode::Bbox,
        ..CueConfig::baseline()
    };
    let resolver = CueResolver::new(cfg, &tables, &names()).unwrap();
    let maps: Vec<_> = [true, false]
        .into_iter()
        .map(|boxes| {
            let s = IngestedSample::from_parts(
                appearance(),
                sem.clone(),
                inst.clone(),
                &descriptor(&[1, 2], boxes),
                names(),
            )
            .unwrap();
            let inputs = resolver.inputs(&s.frame()).unwrap();
            let map = build_cue_map(&s.frame(), &resolver, &CueEmbedders::new(&cfg, 0)).unwrap();
            (inputs.area.unwrap(), map)
        })
        .collect();
    assert_eq!(maps[0], maps[1]);
    let area = &maps[0].0;
    assert_eq!(area[2 * 12 + 1], 12.0 / 120.0);
    assert_eq!(area[6], 15.0 / 120.0);
}

#[test]
fn ingest_reads_files() {
    let dir = tempfile::tempdir().unwrap();
    let (sem, inst) = rect_instances();
    io::save(dir.path().join("labels.cdt"), &sem.to_tensor()).unwrap();
    io::save(dir.path().join("instances.cdt"), &inst.to_tensor()).unwrap();
    io::save(dir.path().join("app.cdt"), &appearance()).unwrap();
    fs::write(
        dir.path().join("classes.csv"),
        "id,name\n1,chair\n2,table\n",
    )
    .unwrap();
    fs::write(
        dir.path().join("desc.json"),
        r#"{"instance_raster": "instances.cdt", "instances": [{"id": 1}, {"id": 2, "bbox": {"x0": 6, "y0": 0, "x1": 11, "y1": 3}}]}"#,
    )
    .unwrap();
    let s = ingest_external_sample(
        &dir.path().join("labels.cdt"),
        &dir.path().join("desc.json"),
        &dir.path().join("app.cdt"),
        &dir.path().join("classes.csv"),
    )
    .unwrap();
    assert_eq!(s.instance, inst);
    assert_eq!(s.bboxes.len(), 1);
    assert_eq!(s.names, names());

    fs::write(
        dir.path().join("classes.csv"),
        "id,name\n1,chair\nx,table\n",
    )
    .unwrap();
    let err = ingest_external_sample(
        &dir.path().join("labels.cdt"),
        &dir.path().join("desc.json"),
        &dir.path().join("app.cdt"),
        &dir.path().join("classes.csv"),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
}

#[test]
fn report_counts_seeds_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec("three", "[0, 1, 2]", dir.path());
    run_experiment(&s, RunOptions::default()).unwrap();
    let r = report(dir.path()).unwrap();
    assert_eq!(r.experiments.len(), 1);
    assert_eq!(r.experiments[0].seeds.len(), 3);
    let text = r.render_text();
    // Title, header, three seeds, summary.
    assert_eq!(text.lines().count(), 6);
    assert!(text.lines().last().unwrap().starts_with("mean±std"));
    let plots = r.write_plots().unwrap();
    assert_eq!(plots, vec![dir.path().join("three").join(PLOT_FILE)]);
    let svg = fs::read_to_string(&plots[0]).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 3);
}

#[test]
fn report_on_empty_directory_lists_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    let err = report(dir.path()).unwrap_err().to_string();
    assert!(
        err.contains(HISTORY_FILE) && err.contains(METRICS_FILE),
        "{err}"
    );
    assert!(err.contains("<experiment>/<seed>/"), "{err}");

    let seed = dir.path().join("exp").join("0");
    fs::create_dir_all(&seed).unwrap();
    fs::write(seed.join(HISTORY_FILE), "epoch,train_loss,val_loss\n").unwrap();
    let err = report(dir.path()).unwrap_err().to_string();
    assert!(
        err.contains("missing files") && err.contains(METRICS_FILE),
        "{err}"
    );
}

#[test]
fn catalog_labels_start_at_one() {
    let names = label_names(&Catalog::ambiguous());
    assert_eq!(names.keys().copied().collect::<Vec<_>>(), [1, 2]);
}
