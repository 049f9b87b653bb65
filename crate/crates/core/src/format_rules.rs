//! Singapore plate layout: a vehicle-class letter, up to two series letters,
//! one to four digits and a checksum letter.
//!
//! [`correct`] locates the four parts in a recognized string, swaps
//! look-alike characters into the class each part requires and validates the
//! letter restrictions. The checksum letter itself is not recomputed.

use std::fmt;

use serde::{Deserialize, Serialize};

pub const MIN_PLATE_LEN: usize = 3;
pub const MAX_PLATE_LEN: usize = 8;
pub const MAX_PREFIX_LETTERS: usize = 3;
pub const MAX_DIGITS: usize = 4;

/// Digits read in a letter position, rewritten to the letter they resemble.
pub const DIGIT_TO_LETTER: [(char, char); 9] = [
    ('5', 'S'),
    ('3', 'S'),
    ('8', 'B'),
    ('7', 'Z'),
    ('2', 'Z'),
    ('4', 'A'),
    ('1', 'T'),
    ('0', 'O'),
    ('6', 'G'),
];

/// Letters read in the numeric series, rewritten to the digit they resemble.
pub const LETTER_TO_DIGIT: [(char, char); 11] = [
    ('S', '5'),
    ('B', '8'),
    ('Z', '7'),
    ('A', '4'),
    ('I', '1'),
    ('T', '1'),
    ('L', '1'),
    ('D', '0'),
    ('O', '0'),
    ('Q', '0'),
    ('G', '6'),
];

/// Letters never issued in the alphabetical series.
pub const EXCLUDED_SERIES_LETTERS: [char; 2] = ['I', 'O'];
/// Letters never used as the checksum.
pub const EXCLUDED_CHECKSUM_LETTERS: [char; 7] = ['F', 'I', 'N', 'O', 'Q', 'V', 'W'];

fn lookup(table: &[(char, char)], c: char) -> Option<char> {
    table.iter().find(|(from, _)| *from == c).map(|&(_, to)| to)
}

pub fn digit_to_letter(c: char) -> Option<char> {
    lookup(&DIGIT_TO_LETTER, c)
}

pub fn letter_to_digit(c: char) -> Option<char> {
    lookup(&LETTER_TO_DIGIT, c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    VehicleClass,
    AlphaSeries,
    NumericSeries,
    Checksum,
}

impl Part {
    pub fn wants_digit(self) -> bool {
        self == Part::NumericSeries
    }
}

/// A split of a string of length `prefix_letters + digits + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Partition {
    pub prefix_letters: usize,
    pub digits: usize,
    /// Positions whose letter/digit class already fits the part.
    pub score: usize,
}

impl Partition {
    pub fn plate_len(&self) -> usize {
        self.prefix_letters + self.digits + 1
    }

    pub fn part_at(&self, position: usize) -> Part {
        if position == 0 {
            Part::VehicleClass
        } else if position < self.prefix_letters {
            Part::AlphaSeries
        } else if position < self.prefix_letters + self.digits {
            Part::NumericSeries
        } else {
            Part::Checksum
        }
    }

    fn fits(&self, position: usize, c: char) -> bool {
        if self.part_at(position).wants_digit() {
            c.is_ascii_digit()
        } else {
            c.is_ascii_uppercase()
        }
    }
}

/// All layouts a string of this length could follow, best class match first;
/// equal scores prefer more digits. Empty when the length is out of range.
pub fn partition(s: &str) -> Vec<Partition> {
    let chars: Vec<char> = s.chars().collect();
    partition_chars(&chars)
}

fn partition_chars(chars: &[char]) -> Vec<Partition> {
    let len = chars.len();
    if !(MIN_PLATE_LEN..=MAX_PLATE_LEN).contains(&len) {
        return Vec::new();
    }
    let mut out: Vec<Partition> = (1..=MAX_PREFIX_LETTERS)
        .filter_map(|p| {
            let d = len.checked_sub(p + 1)?;
            (1..=MAX_DIGITS).contains(&d).then_some(Partition {
                prefix_letters: p,
                digits: d,
                score: 0,
            })
        })
        .map(|mut part| {
            part.score = chars
                .iter()
                .enumerate()
                .filter(|&(i, &c)| part.fits(i, c))
                .count();
            part
        })
        .collect();
    out.sort_by(|a, b| b.score.cmp(&a.score).then(b.digits.cmp(&a.digits)));
    out
}

/// The four parts of a structurally well-formed plate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlateLayout {
    pub vehicle_class: char,
    pub alpha_series: String,
    pub numeric_series: String,
    pub checksum_letter: char,
}

impl PlateLayout {
    /// Splits `s` by `partition`, or `None` when some character is of the
    /// wrong class for its part.
    pub fn from_partition(s: &str, partition: &Partition) -> Option<Self> {
        let chars: Vec<char> = s.chars().collect();
        if chars.len() != partition.plate_len()
            || !chars.iter().enumerate().all(|(i, &c)| partition.fits(i, c))
        {
            return None;
        }
        let p = partition.prefix_letters;
        let d = partition.digits;
        Some(Self {
            vehicle_class: chars[0],
            alpha_series: chars[1..p].iter().collect(),
            numeric_series: chars[p..p + d].iter().collect(),
            checksum_letter: chars[p + d],
        })
    }
}

impl fmt::Display for PlateLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{}{}{}",
            self.vehicle_class, self.alpha_series, self.numeric_series, self.checksum_letter
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// Length outside 3..=8.
    Length { len: usize },
    /// A character left in a part whose class it does not fit.
    WrongClass {
        position: usize,
        symbol: char,
        part: Part,
    },
    /// `I` or `O` in the alphabetical series.
    SeriesLetter { position: usize, letter: char },
    /// Checksum drawn from the excluded set.
    ChecksumLetter { letter: char },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Length { len } => {
                write!(f, "length {len} outside {MIN_PLATE_LEN}..={MAX_PLATE_LEN}")
            }
            Violation::WrongClass {
                position,
                symbol,
                part,
            } => write!(
                f,
                "{symbol:?} at {position} does not fit {part:?} and has no look-alike"
            ),
            Violation::SeriesLetter { position, letter } => {
                write!(
                    f,
                    "series letter {letter:?} at {position} is never issued (I, O)"
                )
            }
            Violation::ChecksumLetter { letter } => write!(
                f,
                "checksum letter {letter:?} is in the excluded set {{F, I, N, O, Q, V, W}}"
            ),
        }
    }
}

/// Letter restrictions on an already well-formed layout. Empty means valid.
pub fn validate(layout: &PlateLayout) -> Vec<Violation> {
    let mut violations: Vec<Violation> = layout
        .alpha_series
        .chars()
        .enumerate()
        .filter(|(_, c)| EXCLUDED_SERIES_LETTERS.contains(c))
        .map(|(i, letter)| Violation::SeriesLetter {
            position: i + 1,
            letter,
        })
        .collect();
    if EXCLUDED_CHECKSUM_LETTERS.contains(&layout.checksum_letter) {
        violations.push(Violation::ChecksumLetter {
            letter: layout.checksum_letter,
        });
    }
    violations
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Change {
    pub position: usize,
    pub from: char,
    pub to: char,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrectionResult {
    pub corrected: String,
    pub layout: Option<PlateLayout>,
    pub valid: bool,
    pub changes: Vec<Change>,
    pub violations: Vec<Violation>,
}

impl CorrectionResult {
    fn unpartitionable(s: &str, len: usize) -> Self {
        Self {
            corrected: s.to_owned(),
            layout: None,
            valid: false,
            changes: Vec::new(),
            violations: vec![Violation::Length { len }],
        }
    }
}

fn apply(s: &str, rewrite: bool) -> CorrectionResult {
    let mut chars: Vec<char> = s.chars().collect();
    let Some(best) = partition_chars(&chars).into_iter().next() else {
        return CorrectionResult::unpartitionable(s, chars.len());
    };

    let mut changes = Vec::new();
    let mut violations = Vec::new();
    for (position, c) in chars.iter_mut().enumerate() {
        if best.fits(position, *c) {
            continue;
        }
        let part = best.part_at(position);
        let swap = if part.wants_digit() {
            letter_to_digit(*c)
        } else {
            digit_to_letter(*c)
        };
        match swap.filter(|_| rewrite) {
            Some(to) => {
                changes.push(Change {
                    position,
                    from: *c,
                    to,
                });
                *c = to;
            }
            None => violations.push(Violation::WrongClass {
                position,
                symbol: *c,
                part,
            }),
        }
    }

    let corrected: String = chars.into_iter().collect();
    let layout = PlateLayout::from_partition(&corrected, &best);
    if let Some(layout) = &layout {
        violations.extend(validate(layout));
    }
    CorrectionResult {
        valid: layout.is_some() && violations.is_empty(),
        corrected,
        layout,
        changes,
        violations,
    }
}

/// Best-partition look-alike correction followed by layout validation.
pub fn correct(s: &str) -> CorrectionResult {
    apply(s, true)
}

/// Validation only: same partition search as [`correct`] but nothing is
/// rewritten.
pub fn check(s: &str) -> CorrectionResult {
    apply(s, false)
}

/// Reapplies `changes` to `s`.
pub fn replay(s: &str, changes: &[Change]) -> String {
    let mut chars: Vec<char> = s.chars().collect();
    for ch in changes {
        if let Some(c) = chars.get_mut(ch.position) {
            *c = ch.to;
        }
    }
    chars.into_iter().collect()
}
