use alpr_core::dataset_io::{to_json, ResultsDoc};
use alpr_core::synth::{generate, SynthOptions};
use alpr_core::{evaluate, process_batch, PipelineConfig};

fn run(opts: &SynthOptions, cfg: &PipelineConfig, batch: usize) -> ResultsDoc {
    let corpus = generate(opts);
    let run = process_batch(
        &corpus.frames.frames,
        &corpus.fixture.plate_source(),
        &corpus.fixture.char_source(),
        cfg,
        batch,
    )
    .unwrap();
    ResultsDoc::from_results(&run.results, cfg)
}

#[test]
fn every_plate_is_read_back() {
    let opts = SynthOptions {
        frames: 200,
        max_plates: 10,
        small_plate_rate: 0.15,
        grid_rate: 0.3,
        ..Default::default()
    };
    let corpus = generate(&opts);
    let results = run(&opts, &PipelineConfig::default(), 8);
    let report = evaluate(&results, &corpus.annotations).unwrap();
    assert_eq!(report.detection.false_positives, 0, "{report}");
    assert_eq!(report.detection.false_negatives, 0, "{report}");
    assert!(report.recognition.total > 100);
    assert_eq!(
        report.recognition.exact_correct, report.recognition.total,
        "{report}"
    );
    for frame in &results.frames {
        assert!(frame.errors.is_empty(), "{:?}", frame.errors);
        assert!(frame.readings.iter().all(|r| r.valid));
    }
}

#[test]
fn batch_size_and_threads_do_not_change_results() {
    let opts = SynthOptions {
        frames: 60,
        max_plates: 6,
        grid_rate: 0.2,
        small_plate_rate: 0.1,
        ..Default::default()
    };
    let reference = to_json(&run(&opts, &PipelineConfig::default(), 1));
    for (batch, jobs) in [(2, 1), (7, 1), (32, 4), (60, 3)] {
        let cfg = PipelineConfig {
            jobs,
            ..Default::default()
        };
        let mut doc = run(&opts, &cfg, batch);
        doc.config = Some(PipelineConfig::default());
        assert_eq!(to_json(&doc), reference, "batch {batch} jobs {jobs}");
    }
}
