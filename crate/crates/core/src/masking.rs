//! Sequence masks, multi-granularity padding masks, observation matrices and
//! information increments.
//!
//! Steps are stored 0-based. Granularity `i` admits the pair `(a, b)` when
//! `i` divides `a − b`, which does not depend on the index origin.

use std::fmt::Write as _;
use std::io::Write;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::point::Point;

/// Fraction of missing history steps, as the half-open interval `(lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissingRate {
    pub lo: f64,
    pub hi: f64,
}

impl MissingRate {
    pub const LOW: MissingRate = MissingRate { lo: 0.0, hi: 0.3 };
    pub const MEDIUM: MissingRate = MissingRate { lo: 0.3, hi: 0.6 };
    pub const HIGH: MissingRate = MissingRate { lo: 0.6, hi: 0.9 };
    pub const STANDARD: [MissingRate; 3] = [Self::LOW, Self::MEDIUM, Self::HIGH];

    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&lo) || !(lo < hi && hi < 1.0) {
            return Err(CoreError::InvalidInterval { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    /// Inclusive range of missing counts `k` with `lo·len < k ≤ hi·len`,
    /// capped at `len − 1` so at least one step stays observed.
    pub fn count_range(&self, len: usize) -> Result<(usize, usize)> {
        // 1e-9 absorbs representation error such as 0.3·10 landing just above 3
        let lo_k = (self.lo * len as f64 + 1e-9).floor() as usize + 1;
        let hi_k = ((self.hi * len as f64 + 1e-9).floor() as usize).min(len.saturating_sub(1));
        if len == 0 || lo_k > hi_k {
            return Err(CoreError::EmptyInterval {
                lo: self.lo,
                hi: self.hi,
                len,
            });
        }
        Ok((lo_k, hi_k))
    }

    /// `"lo,hi"` as accepted on the command line.
    pub fn parse(s: &str) -> Result<Self> {
        let (lo, hi) = s
            .split_once(',')
            .ok_or_else(|| CoreError::Config(format!("interval {s:?} is not of the form lo,hi")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| CoreError::Config(format!("interval bound {v:?} is not a number")))
        };
        Self::new(parse(lo)?, parse(hi)?)
    }

    /// Short label such as `(0.3,0.6]`.
    pub fn label(&self) -> String {
        format!("({},{}]", self.lo, self.hi)
    }
}

/// Per-step availability of a history: `true` = observed.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SequenceMask {
    values: Vec<bool>,
}

impl SequenceMask {
    /// Fails if every step is missing.
    pub fn new(values: Vec<bool>) -> Result<Self> {
        if !values.iter().any(|&v| v) {
            return Err(CoreError::InvalidMask("at least one step must be observed".into()));
        }
        Ok(Self { values })
    }

    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(CoreError::InvalidMask(format!("entry {b} is not 0 or 1")));
        }
        Self::new(bits.iter().map(|&b| b == 1).collect())
    }

    pub fn all_observed(len: usize) -> Self {
        Self {
            values: vec![true; len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_observed(&self, step: usize) -> bool {
        self.values[step]
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn bits(&self) -> Vec<u8> {
        self.values.iter().map(|&v| u8::from(v)).collect()
    }

    pub fn observed_count(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }

    pub fn last_observed(&self) -> usize {
        self.values.iter().rposition(|&v| v).expect("mask has an observed step")
    }
}

/// Draws a mask whose missing count is uniform over the interval's admissible
/// counts and whose missing positions are uniform without replacement.
pub fn sample_sequence_mask(len: usize, rate: MissingRate, rng: &mut impl Rng) -> Result<SequenceMask> {
    let (lo_k, hi_k) = rate.count_range(len)?;
    let k = rng.gen_range(lo_k..=hi_k);
    let mut values = vec![true; len];
    for i in index::sample(rng, len, k) {
        values[i] = false;
    }
    SequenceMask::new(values)
}

/// Zeroes every missing step; observed steps are copied unchanged.
pub fn apply_mask(history: &[Point], mask: &SequenceMask) -> Result<Vec<Point>> {
    if history.len() != mask.len() {
        return Err(CoreError::LengthMismatch {
            what: "apply_mask",
            expected: mask.len(),
            actual: history.len(),
        });
    }
    Ok(history
        .iter()
        .zip(mask.values())
        .map(|(&p, &m)| if m { p } else { Point::ORIGIN })
        .collect())
}

/// Square 0/1 matrix stored row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMatrix {
    len: usize,
    cells: Vec<bool>,
}

impl BinaryMatrix {
    pub fn from_fn(len: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut cells = Vec::with_capacity(len * len);
        for a in 0..len {
            for b in 0..len {
                cells.push(f(a, b));
            }
        }
        Self { len, cells }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.len + col]
    }

    pub fn row(&self, row: usize) -> &[bool] {
        &self.cells[row * self.len..(row + 1) * self.len]
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn row_sum(&self, row: usize) -> usize {
        self.row(row).iter().filter(|&&c| c).count()
    }

    /// One line per row, `1`/`0` separated by spaces.
    pub fn to_grid(&self) -> String {
        let mut s = String::new();
        for r in 0..self.len {
            let line: Vec<&str> = self.row(r).iter().map(|&c| if c { "1" } else { "0" }).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s
    }
}

/// One padding mask per attention head; head `h` (0-based) has granularity `h + 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaddingMaskSet {
    matrices: Vec<BinaryMatrix>,
}

impl PaddingMaskSet {
    pub fn heads(&self) -> usize {
        self.matrices.len()
    }

    pub fn len(&self) -> usize {
        self.matrices[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Matrix for the 1-based granularity `i`.
    pub fn granularity(&self, i: usize) -> &BinaryMatrix {
        &self.matrices[i - 1]
    }

    pub fn matrices(&self) -> &[BinaryMatrix] {
        &self.matrices
    }

    /// Every head uses granularity 1 (all pairs admitted).
    pub fn uniform(len: usize, heads: usize) -> Result<Self> {
        let base = build_padding_masks(len, 1)?;
        Ok(Self {
            matrices: vec![base.matrices[0].clone(); heads],
        })
    }
}

pub fn build_padding_masks(len: usize, heads: usize) -> Result<PaddingMaskSet> {
    if len == 0 || heads == 0 {
        return Err(CoreError::Config(format!(
            "padding masks need len ≥ 1 and heads ≥ 1 (got {len}, {heads})"
        )));
    }
    let matrices = (1..=heads)
        .map(|i| BinaryMatrix::from_fn(len, |a, b| a.abs_diff(b) % i == 0))
        .collect();
    Ok(PaddingMaskSet { matrices })
}

/// Padding masks with missing key columns zeroed, one per head.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObservationMatrixSet {
    matrices: Vec<BinaryMatrix>,
}

impl ObservationMatrixSet {
    pub fn matrices(&self) -> &[BinaryMatrix] {
        &self.matrices
    }

    pub fn heads(&self) -> usize {
        self.matrices.len()
    }

    pub fn len(&self) -> usize {
        self.matrices.first().map_or(0, BinaryMatrix::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Attention masks for the heads: the observation matrices, except that a
    /// row with no admissible entry gets its diagonal re-enabled so the
    /// softmax stays defined.
    pub fn attention_masks(&self) -> Vec<BinaryMatrix> {
        self.matrices
            .iter()
            .map(|m| {
                BinaryMatrix::from_fn(m.len(), |a, b| m.get(a, b) || (a == b && m.row_sum(a) == 0))
            })
            .collect()
    }
}

pub fn observation_matrices(mask: &SequenceMask, padding: &PaddingMaskSet) -> Result<ObservationMatrixSet> {
    if mask.len() != padding.len() {
        return Err(CoreError::LengthMismatch {
            what: "observation_matrices",
            expected: padding.len(),
            actual: mask.len(),
        });
    }
    let matrices = padding
        .matrices()
        .iter()
        .map(|p| BinaryMatrix::from_fn(p.len(), |j, l| p.get(j, l) && mask.is_observed(l)))
        .collect();
    Ok(ObservationMatrixSet { matrices })
}

/// Row sums of the observation matrices: entry `[h][j]` counts the observed
/// steps query `j` can attend to at head `h`'s granularity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InfoIncrement {
    sigma: Vec<Vec<u32>>,
}

impl InfoIncrement {
    pub fn head(&self, h: usize) -> &[u32] {
        &self.sigma[h]
    }

    pub fn heads(&self) -> usize {
        self.sigma.len()
    }

    pub fn rows(&self) -> &[Vec<u32>] {
        &self.sigma
    }
}

pub fn info_increment(obs: &ObservationMatrixSet) -> InfoIncrement {
    let sigma = obs
        .matrices()
        .iter()
        .map(|m| (0..m.len()).map(|j| m.row_sum(j) as u32).collect())
        .collect();
    InfoIncrement { sigma }
}

/// Writes `sample_id,step,m_s` rows for a batch of masks.
pub fn write_mask_csv<W: Write>(out: W, masks: &[(u64, &SequenceMask)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sample_id", "step", "m_s"])?;
    for (id, mask) in masks {
        for (step, bit) in mask.bits().into_iter().enumerate() {
            w.write_record([id.to_string(), step.to_string(), bit.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
