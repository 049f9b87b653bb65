use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use alpr_cli::{
    bench_table, cmd_bench, cmd_decode_grid, cmd_eval, cmd_run, cmd_synth, BenchCorpus, ConfigArgs,
    RunSummary,
};
use alpr_core::dataset_io::{to_json, write_document, FixtureDoc, FramesDoc};
use alpr_core::synth::SynthOptions;
use alpr_core::{GridTensor, PipelineConfig};

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn golden_options() -> SynthOptions {
    SynthOptions {
        frames: 24,
        seed: 2017,
        max_plates: 5,
        max_confusions: 3,
        allow_ambiguous: false,
        small_plate_rate: 0.15,
        duplicate_rate: 0.3,
        grid_rate: 0.04,
        frame_space_rate: 0.3,
        min_plate_px: 50,
    }
}

/// Set `UPDATE_GOLDEN=1` to rewrite the committed files.
#[test]
fn golden_corpus_reads_back_unchanged() {
    let dir = golden_dir();
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    let scratch = tempfile::tempdir().unwrap();
    let target = if update {
        dir.clone()
    } else {
        scratch.path().to_owned()
    };

    cmd_synth(&golden_options(), &target).unwrap();
    let cfg = PipelineConfig::default();
    let results = to_json(
        &cmd_run(
            &target.join("frames.json"),
            &target.join("fixture.json"),
            None,
            &cfg,
        )
        .unwrap(),
    );
    if update {
        fs::write(dir.join("results.json"), &results).unwrap();
    }

    for name in ["frames.json", "fixture.json", "annotations.json"] {
        let fresh = fs::read_to_string(target.join(name)).unwrap();
        let committed = fs::read_to_string(dir.join(name)).unwrap();
        assert!(fresh == committed, "{name} drifted from the generator");
    }
    let committed = fs::read_to_string(dir.join("results.json")).unwrap();
    assert!(
        results == committed,
        "results differ from golden results.json"
    );

    let eval = cmd_eval(&dir.join("results.json"), &dir.join("annotations.json")).unwrap();
    let rec = eval.report.recognition;
    assert!(rec.total > 0);
    assert_eq!(rec.exact_correct, rec.total, "{}", eval.report);
    assert_eq!(eval.config, Some(cfg));
}

#[test]
fn no_heuristics_reports_raw_strings() {
    let dir = golden_dir();
    let cfg = ConfigArgs {
        no_heuristics: true,
        ..Default::default()
    }
    .resolve()
    .unwrap();
    let doc = cmd_run(
        &dir.join("frames.json"),
        &dir.join("fixture.json"),
        None,
        &cfg,
    )
    .unwrap();
    let mut raw_differs = false;
    for r in doc.frames.iter().flat_map(|f| &f.readings) {
        assert!(r.changes.is_empty());
        assert_eq!(r.final_string, r.raw_string);
        raw_differs |= !r.valid;
    }
    // the golden corpus carries substitutions, so some raw strings are invalid
    assert!(raw_differs);
    assert!(!doc.config.unwrap().heuristics_enabled);
}

#[test]
fn empty_frame_list() {
    let dir = tempfile::tempdir().unwrap();
    let frames = dir.path().join("frames.json");
    let fixture = dir.path().join("fixture.json");
    write_document(&FramesDoc::new(vec![]), &frames).unwrap();
    write_document(&FixtureDoc::default(), &fixture).unwrap();
    let doc = cmd_run(&frames, &fixture, None, &PipelineConfig::default()).unwrap();
    assert!(doc.frames.is_empty());
    assert_eq!(RunSummary::of(&doc), RunSummary::default());
}

#[test]
fn config_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("alpr.toml");
    fs::write(
        &path,
        "det_iou = 0.4\nchar_conf = 0.3\nbatch_sizes = [1, 8]\n",
    )
    .unwrap();

    let from_file = ConfigArgs {
        config: Some(path.clone()),
        ..Default::default()
    }
    .resolve()
    .unwrap();
    assert_eq!(from_file.det_iou, 0.4);
    assert_eq!(from_file.char_conf, 0.3);
    assert_eq!(from_file.batch_sizes, vec![1, 8]);
    assert_eq!(from_file.char_iou, 0.5);

    let flagged = ConfigArgs {
        config: Some(path.clone()),
        det_iou: Some(0.7),
        jobs: Some(3),
        ..Default::default()
    }
    .resolve()
    .unwrap();
    assert_eq!(flagged.det_iou, 0.7);
    assert_eq!(flagged.char_conf, 0.3);
    assert_eq!(flagged.jobs, 3);

    fs::write(&path, "det_iou = 0.4\nbogus = 1\n").unwrap();
    assert!(ConfigArgs {
        config: Some(path),
        ..Default::default()
    }
    .resolve()
    .is_err());
    assert!(ConfigArgs {
        batch_sizes: Some(vec![4, 2]),
        ..Default::default()
    }
    .resolve()
    .is_err());
}

#[test]
fn bench_columns_follow_batch_sizes() {
    let corpus = |frames| BenchCorpus {
        frames,
        max_plates: 10,
        seed: 3,
    };
    let cfg = |sizes: Vec<usize>| PipelineConfig {
        batch_sizes: sizes,
        ..Default::default()
    };

    let two = cmd_bench(&cfg(vec![1, 32]), &corpus(64)).unwrap();
    assert_eq!(
        two.timing.iter().map(|t| t.batch_size).collect::<Vec<_>>(),
        vec![1, 32]
    );
    assert_eq!(two.results.len(), 64);
    assert_eq!(
        two.report.recognition.exact_correct,
        two.report.recognition.total
    );
    let header = bench_table(&two).lines().next().unwrap().to_owned();
    assert_eq!(
        header.split_whitespace().collect::<Vec<_>>(),
        ["batch", "size", "1", "32"]
    );

    let one = cmd_bench(&cfg(vec![1]), &corpus(64)).unwrap();
    assert_eq!(one.timing.len(), 1);

    let empty = cmd_bench(&cfg(vec![1, 2]), &corpus(0)).unwrap();
    for t in &empty.timing {
        assert_eq!(t.fps, 0.0);
        assert_eq!(t.frame_ms_median, 0.0);
        assert!(t.stage_ms.values().all(|&v| v == 0.0));
    }
}

fn write_grid(dir: &Path, name: &str, tensor: GridTensor) -> PathBuf {
    let path = dir.join(name);
    let fixture = alpr_core::dataset_io::CharFixture::Grid { tensor };
    fs::write(&path, serde_json::to_string(&fixture).unwrap()).unwrap();
    path
}

#[test]
fn decode_grid_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig::default();

    let silent = write_grid(dir.path(), "silent.json", GridTensor::filled(-10.0));
    assert!(cmd_decode_grid(&silent, &cfg)
        .unwrap()
        .detections
        .is_empty());

    let mut hot = GridTensor::filled(-10.0);
    {
        let c = hot.cell_mut(5, 3);
        c[0] = 10.0;
        c[1] = 0.0;
        c[2] = 0.0;
        c[3] = 0.0;
        c[4] = 0.0;
        c[5 + 7] = 10.0;
    }
    let path = write_grid(dir.path(), "hot.json", hot.clone());
    let doc = cmd_decode_grid(&path, &cfg).unwrap();
    assert_eq!(doc.detections.len(), 1);
    let d = &doc.detections[0];
    assert_eq!(d.cell, Some([5, 3]));
    assert_eq!(d.center, [44.0, 28.0]);
    assert_eq!(d.bbox, [40.0, 24.0, 48.0, 32.0]);
    assert_eq!(d.symbol, '7');

    // neighbour predicting the same class with a box wide enough to overlap
    // at IoU 0.6: one survives
    let mut dup = hot;
    for col in [5, 6] {
        let c = dup.cell_mut(col, 3);
        c[0] = 10.0;
        c[3] = 4f32.ln();
        c[5 + 7] = 10.0;
    }
    dup.cell_mut(6, 3)[0] = 9.0;
    let path = write_grid(dir.path(), "dup.json", dup);
    let doc = cmd_decode_grid(&path, &cfg).unwrap();
    assert_eq!(doc.detections.len(), 1);
    assert_eq!(doc.detections[0].cell, Some([5, 3]));
}

#[test]
fn exit_status() {
    let bin = env!("CARGO_BIN_EXE_alpr");
    let dir = golden_dir();
    let ok = Command::new(bin)
        .arg("run")
        .arg(dir.join("frames.json"))
        .arg(dir.join("fixture.json"))
        .arg("--out")
        .arg(tempfile::tempdir().unwrap().path().join("r.json"))
        .env_remove("ALPR_DET_IOU")
        .output()
        .unwrap();
    assert!(ok.status.success());
    let line = String::from_utf8(ok.stdout).unwrap();
    assert!(line.starts_with("frames 24  plates read "), "{line}");

    let missing = Command::new(bin)
        .args([
            "run",
            "/nonexistent/frames.json",
            "/nonexistent/fixture.json",
        ])
        .output()
        .unwrap();
    assert!(!missing.status.success());

    let bad_env = Command::new(bin)
        .arg("run")
        .arg(dir.join("frames.json"))
        .arg(dir.join("fixture.json"))
        .env("ALPR_DET_IOU", "1.5")
        .output()
        .unwrap();
    assert!(!bad_env.status.success());
    assert!(String::from_utf8_lossy(&bad_env.stderr).contains("det_iou"));
}
