//! Deterministic inputs for the criterion benches.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use alpr_core::grid_decode::{ALPHABET, CHANNELS, GRID_HEIGHT, GRID_WIDTH};
use alpr_core::{BBox, CharDetection, FrameBox, GridTensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` boxes spread over a few clusters, so NMS has real work to do.
pub fn clustered_boxes(rng: &mut impl Rng, n: usize, classes: u32) -> Vec<BBox> {
    let centers: Vec<(f64, f64)> = (0..12)
        .map(|_| (rng.random_range(0.0..1800.0), rng.random_range(0.0..1000.0)))
        .collect();
    (0..n)
        .map(|_| {
            let &(cx, cy) = centers.choose(rng).expect("centers");
            let x = cx + rng.random_range(-20.0..20.0);
            let y = cy + rng.random_range(-20.0..20.0);
            let w = rng.random_range(40.0..160.0);
            let h = rng.random_range(30.0..90.0);
            BBox::new(
                x,
                y,
                x + w,
                y + h,
                rng.random_range(0.0..1.0),
                rng.random_range(0..classes),
            )
            .expect("positive extent")
        })
        .collect()
}

/// `frames` frames of `per_frame` boxes each, tagged for batched NMS.
pub fn frame_batch(
    rng: &mut impl Rng,
    frames: usize,
    per_frame: usize,
    classes: u32,
) -> Vec<FrameBox> {
    (0..frames)
        .flat_map(|frame| {
            clustered_boxes(rng, per_frame, classes)
                .into_iter()
                .map(move |bbox| FrameBox { frame, bbox })
        })
        .collect()
}

/// A recognizer grid with `hot` confident cells on a noisy background.
pub fn noisy_grid(rng: &mut impl Rng, hot: usize) -> GridTensor {
    let mut values = vec![0f32; GRID_WIDTH * GRID_HEIGHT * CHANNELS];
    for cell in values.chunks_mut(CHANNELS) {
        cell[0] = rng.random_range(-12.0..-4.0);
        for v in &mut cell[1..] {
            *v = rng.random_range(-2.0..2.0);
        }
    }
    let mut t = GridTensor::new(GRID_WIDTH, GRID_HEIGHT, CHANNELS, values).expect("grid shape");
    for i in 0..hot {
        let cell = t.cell_mut(2 + (4 * i) % (GRID_WIDTH - 4), 6 + 10 * (i % 2));
        cell[0] = 8.0;
        cell[5 + rng.random_range(0..ALPHABET.len())] = 9.0;
    }
    t
}

/// A two-line plate's worth of character boxes in shuffled order.
pub fn plate_chars(rng: &mut impl Rng, n: usize) -> Vec<CharDetection> {
    (0..n)
        .map(|i| {
            let second = i >= n / 2;
            let x = 10.0
                + 22.0 * (if second { i - n / 2 } else { i }) as f64
                + rng.random_range(0.0..2.0);
            let y = if second { 80.0 } else { 10.0 } + rng.random_range(0.0..3.0);
            let b = BBox::new(
                x,
                y,
                x + 18.0,
                y + 40.0,
                0.9,
                rng.random_range(0..ALPHABET.len() as u32),
            )
            .expect("positive extent");
            CharDetection::from_bbox(b).expect("alphabet class")
        })
        .collect()
}
