//! Command implementations behind the `alpr` binary.
//!
//! Each `cmd_*` function does the work of one subcommand and returns a value
//! describing the outcome, so the commands can be driven from tests without
//! spawning a process.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use alpr_core::dataset_io::{
    load_document, summarize, to_json, write_document, AnnotationDoc, CharFixture, DatasetSummary,
    FixtureDoc, FrameRecord, FramesDoc, ResultsDoc, TimingSummary, SCHEMA_VERSION,
};
use alpr_core::pipeline::StageTimes;
use alpr_core::synth::{generate, SynthCorpus, SynthOptions};
use alpr_core::{decode_grid, evaluate, process_batch, CharDetection, EvalReport, PipelineConfig};

/// Pipeline settings. Each flag can also be set through an `ALPR_*`
/// environment variable or a key of the same name in the `--config` file.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML file with pipeline settings.
    #[arg(long, env = "ALPR_CONFIG", global = true)]
    pub config: Option<PathBuf>,
    /// IoU threshold for plate NMS.
    #[arg(long, env = "ALPR_DET_IOU", global = true)]
    pub det_iou: Option<f64>,
    /// Minimum character confidence for grid decoding.
    #[arg(long, env = "ALPR_CHAR_CONF", global = true)]
    pub char_conf: Option<f64>,
    /// IoU threshold for character NMS.
    #[arg(long, env = "ALPR_CHAR_IOU", global = true)]
    pub char_iou: Option<f64>,
    /// Plates narrower or shorter than this many pixels are not read.
    #[arg(long, env = "ALPR_MIN_PLATE_PX", global = true)]
    pub min_plate_px: Option<f64>,
    /// Comma-separated, strictly increasing batch sizes.
    #[arg(long, env = "ALPR_BATCH_SIZES", value_delimiter = ',', global = true)]
    pub batch_sizes: Option<Vec<usize>>,
    /// Report arranged strings as read, without look-alike correction.
    #[arg(long, env = "ALPR_NO_HEURISTICS", global = true)]
    pub no_heuristics: bool,
    /// Worker threads.
    #[arg(long, env = "ALPR_JOBS", global = true)]
    pub jobs: Option<usize>,
}

impl ConfigArgs {
    /// Flag (or environment) over config file over built-in default.
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                toml::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => PipelineConfig::default(),
        };
        if let Some(v) = self.det_iou {
            cfg.det_iou = v;
        }
        if let Some(v) = self.char_conf {
            cfg.char_conf = v;
        }
        if let Some(v) = self.char_iou {
            cfg.char_iou = v;
        }
        if let Some(v) = self.min_plate_px {
            cfg.min_plate_px = v;
        }
        if let Some(v) = &self.batch_sizes {
            cfg.batch_sizes = v.clone();
        }
        if self.no_heuristics {
            cfg.heuristics_enabled = false;
        }
        if let Some(v) = self.jobs {
            cfg.jobs = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Writes `text` to `out`, or to stdout for `-`.
fn emit(text: &str, out: &Path) -> Result<()> {
    if out == Path::new("-") {
        std::io::stdout().lock().write_all(text.as_bytes())?;
    } else {
        fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// run

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunSummary {
    pub frames: usize,
    pub plates_read: usize,
    pub rejected: usize,
    pub invalid: usize,
    pub errors: usize,
}

impl RunSummary {
    pub fn of(doc: &ResultsDoc) -> Self {
        let mut s = Self {
            frames: doc.frames.len(),
            ..Self::default()
        };
        for f in &doc.frames {
            s.plates_read += f.readings.len();
            s.rejected += f.rejected.len();
            s.invalid += f.readings.iter().filter(|r| !r.valid).count();
            s.errors += f.errors.len();
        }
        s
    }
}

impl std::fmt::Display for RunSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "frames {}  plates read {}  rejected {}  invalid {}  errors {}",
            self.frames, self.plates_read, self.rejected, self.invalid, self.errors
        )
    }
}

/// Runs the pipeline over recorded detector output. Character payloads come
/// from `chars` when given, otherwise from the plate fixture.
pub fn cmd_run(
    frames: &Path,
    plates: &Path,
    chars: Option<&Path>,
    cfg: &PipelineConfig,
) -> Result<ResultsDoc> {
    let frames: FramesDoc = load_document(frames)?;
    let plate_doc: FixtureDoc = load_document(plates)?;
    let char_doc: Option<FixtureDoc> = chars.map(load_document).transpose()?;
    let char_doc = char_doc.as_ref().unwrap_or(&plate_doc);

    let batch = *cfg
        .batch_sizes
        .last()
        .expect("validated config has batch sizes");
    let run = process_batch(
        &frames.frames,
        &plate_doc.plate_source(),
        &char_doc.char_source(),
        cfg,
        batch,
    )?;
    Ok(ResultsDoc::from_results(&run.results, cfg))
}

// ---------------------------------------------------------------------------
// eval

/// Evaluation output, echoing the configuration that produced the results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalDoc {
    pub schema: String,
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<PipelineConfig>,
    pub report: EvalReport,
}

pub fn cmd_eval(results: &Path, annotations: &Path) -> Result<EvalDoc> {
    let results: ResultsDoc = load_document(results)?;
    let annotations: AnnotationDoc = load_document(annotations)?;
    let report = evaluate(&results, &annotations)?;
    Ok(EvalDoc {
        schema: "alpr.eval".into(),
        version: SCHEMA_VERSION,
        config: results.config,
        report,
    })
}

// ---------------------------------------------------------------------------
// bench

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCorpus {
    pub frames: usize,
    pub max_plates: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchDoc {
    pub schema: String,
    pub version: u32,
    pub config: PipelineConfig,
    pub corpus: BenchCorpus,
    /// One entry per batch size.
    pub timing: Vec<TimingSummary>,
    /// Accuracy against the generated ground truth.
    pub report: EvalReport,
    #[serde(skip)]
    pub results: Vec<FrameRecord>,
}

/// The corpus used by `bench`: every plate readable except the deliberately
/// small ones, a mix of box and grid recognizer payloads, duplicates and
/// look-alike substitutions.
pub fn bench_corpus(corpus: &BenchCorpus) -> SynthCorpus {
    generate(&SynthOptions {
        frames: corpus.frames,
        seed: corpus.seed,
        max_plates: corpus.max_plates,
        max_confusions: 3,
        allow_ambiguous: false,
        small_plate_rate: 0.1,
        duplicate_rate: 0.2,
        grid_rate: 0.2,
        frame_space_rate: 0.2,
        min_plate_px: 50,
    })
}

/// Times the pipeline at every configured batch size on a generated corpus.
/// Fails if any batch size produces different readings from the first.
pub fn cmd_bench(cfg: &PipelineConfig, corpus: &BenchCorpus) -> Result<BenchDoc> {
    let synth = bench_corpus(corpus);
    let frames = &synth.frames.frames;
    let plates = synth.fixture.plate_source();
    let chars = synth.fixture.char_source();

    let mut timing = Vec::with_capacity(cfg.batch_sizes.len());
    let mut reference: Option<Vec<FrameRecord>> = None;
    for &size in &cfg.batch_sizes {
        let run = process_batch(frames, &plates, &chars, cfg, size)?;
        let records: Vec<FrameRecord> = run.results.iter().map(FrameRecord::from).collect();
        match &reference {
            None => reference = Some(records),
            Some(first) if *first != records => {
                bail!(
                    "batch size {size} disagrees with batch size {}",
                    cfg.batch_sizes[0]
                )
            }
            Some(_) => {}
        }
        timing.push(TimingSummary::from(&run.timings));
    }
    let results = reference.unwrap_or_default();
    let report = evaluate(&ResultsDoc::new(None, results.clone()), &synth.annotations)?;
    Ok(BenchDoc {
        schema: "alpr.bench".into(),
        version: SCHEMA_VERSION,
        config: cfg.clone(),
        corpus: corpus.clone(),
        timing,
        report,
        results,
    })
}

/// Batch sizes as columns, FPS and latency as rows.
pub fn bench_table(doc: &BenchDoc) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<22}", "batch size");
    for t in &doc.timing {
        let _ = write!(out, "{:>10}", t.batch_size);
    }
    out.push('\n');
    let mut row = |label: &str, f: &dyn Fn(&TimingSummary) -> f64, precision: usize| {
        let _ = write!(out, "{label:<22}");
        for t in &doc.timing {
            let _ = write!(out, "{:>10.*}", precision, f(t));
        }
        out.push('\n');
    };
    row("FPS", &|t| t.fps, 0);
    row("frame ms median", &|t| t.frame_ms_median, 4);
    row("frame ms p99", &|t| t.frame_ms_p99, 4);
    for stage in StageTimes::NAMES {
        row(
            &format!("{stage} ms median"),
            &|t| t.stage_ms_median[stage],
            4,
        );
        row(&format!("{stage} ms p99"), &|t| t.stage_ms_p99[stage], 4);
    }
    out
}

// ---------------------------------------------------------------------------
// decode-grid

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedChar {
    pub symbol: char,
    pub class_id: u32,
    pub confidence: f64,
    /// `[x1, y1, x2, y2]` in recognizer input pixels.
    pub bbox: [f64; 4],
    pub center: [f64; 2],
    pub cell: Option<[usize; 2]>,
}

impl From<&CharDetection> for DecodedChar {
    fn from(c: &CharDetection) -> Self {
        Self {
            symbol: c.symbol(),
            class_id: c.class_id,
            confidence: c.confidence,
            bbox: [c.bbox.x1(), c.bbox.y1(), c.bbox.x2(), c.bbox.y2()],
            center: [c.center.0, c.center.1],
            cell: c.cell.map(|(col, row)| [col, row]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeDoc {
    pub schema: String,
    pub version: u32,
    pub config: PipelineConfig,
    pub detections: Vec<DecodedChar>,
}

/// Decodes a recorded grid, given as a `{"kind": "grid", "tensor": ...}`
/// character payload.
pub fn cmd_decode_grid(tensor: &Path, cfg: &PipelineConfig) -> Result<DecodeDoc> {
    let text =
        fs::read_to_string(tensor).with_context(|| format!("reading {}", tensor.display()))?;
    let fixture: CharFixture =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", tensor.display()))?;
    let CharFixture::Grid { tensor } = fixture else {
        bail!("expected a grid payload, found character boxes");
    };
    let dets = decode_grid(&tensor, cfg.char_conf, cfg.char_iou)?;
    Ok(DecodeDoc {
        schema: "alpr.decoded".into(),
        version: SCHEMA_VERSION,
        config: cfg.clone(),
        detections: dets.iter().map(DecodedChar::from).collect(),
    })
}

pub fn decode_table(doc: &DecodeDoc) -> String {
    let mut out = format!(
        "{:<4}{:>8}{:>10}{:>10}{:>10}{:>10}{:>8}\n",
        "sym", "conf", "x1", "y1", "x2", "y2", "cell"
    );
    for d in &doc.detections {
        let cell = d.cell.map_or("-".to_owned(), |[c, r]| format!("{c},{r}"));
        let _ = writeln!(
            out,
            "{:<4}{:>8.4}{:>10.2}{:>10.2}{:>10.2}{:>10.2}{:>8}",
            d.symbol, d.confidence, d.bbox[0], d.bbox[1], d.bbox[2], d.bbox[3], cell
        );
    }
    out
}

// ---------------------------------------------------------------------------
// synth and summarize

/// Writes `frames.json`, `fixture.json` and `annotations.json` into `dir`.
pub fn cmd_synth(opts: &SynthOptions, dir: &Path) -> Result<SynthCorpus> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let corpus = generate(opts);
    write_document(&corpus.frames, &dir.join("frames.json"))?;
    write_document(&corpus.fixture, &dir.join("fixture.json"))?;
    write_document(&corpus.annotations, &dir.join("annotations.json"))?;
    Ok(corpus)
}

pub fn cmd_summarize(annotations: &Path) -> Result<DatasetSummary> {
    let doc: AnnotationDoc = load_document(annotations)?;
    Ok(summarize(&doc))
}

pub fn write_json<D: Serialize>(doc: &D, out: &Path) -> Result<()> {
    emit(&to_json(doc), out)
}
