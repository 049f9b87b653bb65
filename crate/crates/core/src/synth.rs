//! Deterministic synthetic corpora: frames, detector fixtures and matching
//! ground truth.
//!
//! Every plate is a random well-formed layout rendered as character boxes in
//! reading order (then shuffled), optionally with look-alike substitutions
//! from the correction tables. Substitutions are only injected where the
//! string's layout stays identifiable, i.e. no other split of the same length
//! matches the letter/digit pattern at least as well.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset_io::{
    AnnotationDoc, CharFixture, FixtureDoc, FrameAnnotation, FramesDoc, PlateAnnotation,
};
use crate::format_rules::{
    PlateLayout, DIGIT_TO_LETTER, EXCLUDED_CHECKSUM_LETTERS, EXCLUDED_SERIES_LETTERS,
    LETTER_TO_DIGIT, MAX_DIGITS, MAX_PREFIX_LETTERS,
};
use crate::geometry::BBox;
use crate::grid_decode::{symbol_to_class, GridTensor, CHANNELS};
use crate::pipeline::{crop_id, CoordSpace, Frame};

pub const FRAME_WIDTH: u32 = 1920;
pub const FRAME_HEIGHT: u32 = 1080;
const SLOT_COLS: usize = 5;
const SLOT_ROWS: usize = 2;
pub const MAX_PLATES_PER_FRAME: usize = SLOT_COLS * SLOT_ROWS;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub frames: usize,
    pub seed: u64,
    /// Plates per frame are drawn uniformly from `0..=max_plates`.
    pub max_plates: usize,
    /// Upper bound on injected look-alike substitutions per plate.
    pub max_confusions: usize,
    /// Keep substitutions even when they make another layout fit the string
    /// at least as well. Such plates cannot be read back reliably.
    pub allow_ambiguous: bool,
    /// Probability that a plate is drawn below the readable size.
    pub small_plate_rate: f64,
    /// Probability of an extra overlapping, lower-scored detection per plate.
    pub duplicate_rate: f64,
    /// Probability that a plate's characters come as a recognizer grid.
    pub grid_rate: f64,
    /// Probability that character boxes are given in frame coordinates.
    pub frame_space_rate: f64,
    pub min_plate_px: u32,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            frames: 100,
            seed: 7,
            max_plates: 4,
            max_confusions: 3,
            allow_ambiguous: false,
            small_plate_rate: 0.0,
            duplicate_rate: 0.2,
            grid_rate: 0.0,
            frame_space_rate: 0.2,
            min_plate_px: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub frames: FramesDoc,
    pub fixture: FixtureDoc,
    pub annotations: AnnotationDoc,
}

const LETTERS: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ";
const DIGITS: &[u8] = b"0123456789";

fn pick(rng: &mut impl Rng, pool: &[u8], exclude: &[char]) -> char {
    loop {
        let c = *pool.choose(rng).expect("non-empty pool") as char;
        if !exclude.contains(&c) {
            return c;
        }
    }
}

/// A random layout satisfying every letter restriction.
pub fn random_layout(rng: &mut impl Rng) -> PlateLayout {
    let series = rng.random_range(0..MAX_PREFIX_LETTERS);
    let digits = rng.random_range(1..=MAX_DIGITS);
    PlateLayout {
        vehicle_class: pick(rng, LETTERS, &[]),
        alpha_series: (0..series)
            .map(|_| pick(rng, LETTERS, &EXCLUDED_SERIES_LETTERS))
            .collect(),
        numeric_series: (0..digits).map(|_| pick(rng, DIGITS, &[])).collect(),
        checksum_letter: pick(rng, LETTERS, &EXCLUDED_CHECKSUM_LETTERS),
    }
}

/// Whether `(prefix, digits)` is the unique best letter/digit fit for `s`,
/// with ties going to the split with more digits.
pub fn layout_identifiable(s: &[char], prefix: usize, digits: usize) -> bool {
    let fit = |p: usize, d: usize| {
        s.iter()
            .enumerate()
            .filter(|&(i, c)| {
                if i >= p && i < p + d {
                    c.is_ascii_digit()
                } else {
                    c.is_ascii_uppercase()
                }
            })
            .count()
    };
    let own = fit(prefix, digits);
    (1..=MAX_PREFIX_LETTERS)
        .filter(|&p| p != prefix && s.len() > p + 1 && s.len() - p - 1 <= MAX_DIGITS)
        .all(|p| {
            let d = s.len() - p - 1;
            let other = fit(p, d);
            other < own || (other == own && d < digits)
        })
}

/// Characters that the correction tables would turn back into `c`.
pub fn lookalikes(c: char, digit_part: bool) -> Vec<char> {
    let table: &[(char, char)] = if digit_part {
        &LETTER_TO_DIGIT
    } else {
        &DIGIT_TO_LETTER
    };
    table
        .iter()
        .filter(|(_, to)| *to == c)
        .map(|&(from, _)| from)
        .collect()
}

/// The recognizer's view of `layout` (the merged `O` class reads as `0`)
/// with up to `max` table-covered substitutions. Unless `allow_ambiguous`,
/// substitutions that leave the layout unidentifiable are redrawn, falling
/// back to the clean string.
pub fn observed_string(
    rng: &mut impl Rng,
    layout: &PlateLayout,
    max: usize,
    allow_ambiguous: bool,
) -> String {
    let prefix = 1 + layout.alpha_series.len();
    let digits = layout.numeric_series.len();
    let base: Vec<char> = layout
        .to_string()
        .chars()
        .map(|c| if c == 'O' { '0' } else { c })
        .collect();

    let k = rng.random_range(0..=max);
    for _ in 0..8 {
        let mut s = base.clone();
        let mut positions: Vec<usize> = (0..s.len()).collect();
        positions.shuffle(rng);
        let mut injected = 0;
        for &pos in &positions {
            if injected == k {
                break;
            }
            let digit_part = pos >= prefix && pos < prefix + digits;
            let original = layout.to_string().chars().nth(pos).expect("in range");
            let choices = lookalikes(original, digit_part);
            if let Some(&c) = choices.choose(rng) {
                s[pos] = c;
                injected += 1;
            }
        }
        if allow_ambiguous || layout_identifiable(&s, prefix, digits) {
            return s.into_iter().collect();
        }
    }
    base.into_iter().collect()
}

fn char_box(x: f64, y: f64, w: f64, h: f64, symbol: char, score: f64) -> BBox {
    let class = symbol_to_class(symbol).expect("plate alphabet");
    BBox::new(x, y, x + w, y + h, score, class).expect("positive extent")
}

/// Character boxes in crop coordinates, reading order.
fn render_boxes(
    rng: &mut impl Rng,
    text: &[char],
    prefix: usize,
    double: bool,
    w: f64,
    h: f64,
) -> Vec<BBox> {
    let score = |rng: &mut dyn rand::RngCore| (rng.random_range(80..100) as f64) / 100.0;
    let row = |rng: &mut dyn rand::RngCore, chars: &[char], top: f64, height: f64| -> Vec<BBox> {
        let margin = (w * 0.05).floor();
        let pitch = ((w - 2.0 * margin) / chars.len() as f64).floor();
        let cw = (pitch * 0.8).floor().max(1.0);
        chars
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let jitter = rng.random_range(0..3) as f64;
                char_box(
                    margin + i as f64 * pitch,
                    top + jitter,
                    cw,
                    height,
                    c,
                    score(rng),
                )
            })
            .collect()
    };
    if double {
        let second_top = (w * 0.38).ceil();
        let mut out = row(rng, &text[..prefix], (h * 0.08).floor(), (w * 0.25).floor());
        out.extend(row(
            rng,
            &text[prefix..],
            second_top,
            (h - second_top - 3.0).max(1.0),
        ));
        out
    } else {
        row(rng, text, (h * 0.15).floor(), (h * 0.7).floor())
    }
}

/// A recognizer grid with one confident cell per character.
fn render_grid(text: &[char], prefix: usize, double: bool) -> GridTensor {
    let mut t = GridTensor::filled(-10.0);
    let mut place = |c: char, col: usize, row: usize| {
        let cell = t.cell_mut(col, row);
        debug_assert_eq!(cell.len(), CHANNELS);
        cell[0] = 10.0;
        cell[3] = 3f32.ln();
        cell[4] = 6f32.ln();
        cell[5 + symbol_to_class(c).expect("plate alphabet") as usize] = 10.0;
    };
    if double {
        for (i, &c) in text[..prefix].iter().enumerate() {
            place(c, 2 + 4 * i, 4);
        }
        for (i, &c) in text[prefix..].iter().enumerate() {
            place(c, 2 + 4 * i, 16);
        }
    } else {
        for (i, &c) in text.iter().enumerate() {
            place(c, 2 + 4 * i, 12);
        }
    }
    t
}

fn timestamp(index: usize) -> String {
    // 30 fps capture starting 2017-12-01 08:00:00
    let secs = index / 30;
    let millis = (index % 30) * 1000 / 30;
    format!(
        "2017-12-01T{:02}:{:02}:{:02}.{millis:03}",
        8 + secs / 3600,
        (secs / 60) % 60,
        secs % 60
    )
}

struct Placed {
    bbox: BBox,
    annotation: PlateAnnotation,
    chars: Option<CharFixture>,
}

fn make_plate(rng: &mut impl Rng, opts: &SynthOptions, slot: usize) -> Placed {
    let slot_w = (FRAME_WIDTH as usize / SLOT_COLS) as f64;
    let slot_h = (FRAME_HEIGHT as usize / SLOT_ROWS) as f64;
    let sx = (slot % SLOT_COLS) as f64 * slot_w;
    let sy = (slot / SLOT_COLS) as f64 * slot_h;

    let layout = random_layout(rng);
    let truth = layout.to_string();
    let double = rng.random_bool(0.5);
    let min = opts.min_plate_px as f64;
    let small = rng.random_bool(opts.small_plate_rate);

    let (w, h) = if small {
        let short = rng.random_range(10..opts.min_plate_px.max(11)) as f64;
        if rng.random_bool(0.5) {
            (short, rng.random_range(10..120) as f64)
        } else {
            (rng.random_range(10..200) as f64, short)
        }
    } else if double {
        let w = rng.random_range(120..=220) as f64;
        (w, (w * 2.0 / 3.0).round().max(min))
    } else {
        let w = rng.random_range(150..=300) as f64;
        (w, rng.random_range(min as u32..=90) as f64)
    };
    let x = sx + rng.random_range(0..(slot_w - w - 20.0) as u32) as f64;
    let y = sy + rng.random_range(0..(slot_h - h - 20.0) as u32) as f64;
    let bbox = BBox::new(
        x,
        y,
        x + w,
        y + h,
        rng.random_range(60..100) as f64 / 100.0,
        0,
    )
    .expect("positive extent");

    let recognizable = !small;
    let annotation = PlateAnnotation {
        bbox: [x, y, x + w, y + h],
        lines: if double { 2 } else { 1 },
        recognizable,
        plate_string: recognizable.then(|| truth.clone()),
    };

    let chars = recognizable.then(|| {
        let text: Vec<char> =
            observed_string(rng, &layout, opts.max_confusions, opts.allow_ambiguous)
                .chars()
                .collect();
        let prefix = 1 + layout.alpha_series.len();
        if rng.random_bool(opts.grid_rate) {
            return CharFixture::Grid {
                tensor: render_grid(&text, prefix, double),
            };
        }
        let mut boxes = render_boxes(rng, &text, prefix, double, w, h);
        boxes.shuffle(rng);
        if rng.random_bool(opts.frame_space_rate) {
            let boxes = boxes
                .into_iter()
                .map(|b| b.translated(x, y).expect("finite"))
                .collect();
            CharFixture::Boxes {
                space: CoordSpace::Frame,
                detections: boxes,
            }
        } else {
            CharFixture::Boxes {
                space: CoordSpace::Crop,
                detections: boxes,
            }
        }
    });

    Placed {
        bbox,
        annotation,
        chars,
    }
}

pub fn generate(opts: &SynthOptions) -> SynthCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let max_plates = opts.max_plates.min(MAX_PLATES_PER_FRAME);

    let mut frames = Vec::with_capacity(opts.frames);
    let mut fixture = FixtureDoc::default();
    let mut annotations = Vec::with_capacity(opts.frames);

    for fi in 0..opts.frames {
        let frame_id = format!("frame_{fi:05}");
        frames.push(Frame {
            frame_id: frame_id.clone(),
            width: FRAME_WIDTH,
            height: FRAME_HEIGHT,
            source_uri: format!("synthetic://{}/{fi}", opts.seed),
        });

        let n = rng.random_range(0..=max_plates);
        let mut slots: Vec<usize> = (0..MAX_PLATES_PER_FRAME).collect();
        slots.shuffle(&mut rng);
        let placed: Vec<Placed> = slots[..n]
            .iter()
            .map(|&s| make_plate(&mut rng, opts, s))
            .collect();

        // detector output: each plate, some near-duplicates, shuffled
        let mut dets: Vec<(Option<usize>, BBox)> = Vec::new();
        for (pi, p) in placed.iter().enumerate() {
            dets.push((Some(pi), p.bbox));
            if rng.random_bool(opts.duplicate_rate) {
                let shift = rng.random_range(1..4) as f64;
                let dup = p
                    .bbox
                    .translated(shift, shift)
                    .and_then(|b| b.with_score((p.bbox.score() - 0.05).max(0.0)))
                    .expect("valid duplicate");
                dets.push((None, dup));
            }
        }
        dets.shuffle(&mut rng);

        for (index, (owner, _)) in dets.iter().enumerate() {
            if let Some(chars) = owner.and_then(|pi| placed[pi].chars.clone()) {
                fixture.chars.insert(crop_id(&frame_id, index), chars);
            }
        }
        fixture
            .plates
            .insert(frame_id.clone(), dets.iter().map(|d| d.1).collect());
        annotations.push(FrameAnnotation {
            frame_id,
            timestamp: Some(timestamp(fi)),
            split: Some("test".into()),
            plates: placed.into_iter().map(|p| p.annotation).collect(),
            extra: Default::default(),
        });
    }

    SynthCorpus {
        frames: FramesDoc::new(frames),
        fixture,
        annotations: AnnotationDoc::new(annotations),
    }
}
