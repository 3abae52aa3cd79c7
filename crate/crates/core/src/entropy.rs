//! Spatial entropy of gray-level maps.
//!
//! All entropies are Shannon entropies in bits, estimated by relative
//! frequency. Pair statistics for an offset `(k, l)` count every pixel pair
//! `(X[i][j], X[i + k][j + l])` with both endpoints inside the map; nothing
//! wraps around and nothing is padded.
//!
//! Entropy sums run over the non-zero counts in ascending count order, so
//! a value depends only on the multiset of counts. That makes transposed
//! histograms, mirrored offsets and relabelled gray levels give bit-identical
//! results.
//!
//! The relative entropy `H_R(k, l) = (H(k, l) - H(0)) / H(0)` uses the
//! univariate entropy `H(0)` of the whole map, while the pair marginals
//! leave out a border strip. On real maps `H_R` can therefore land slightly
//! below 0 or above 1.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::GrayMap;

pub const LEVELS: usize = 256;

/// Probability vector over a finite set of outcomes.
#[derive(Clone, Debug, PartialEq)]
pub struct Distribution {
    p: Vec<f64>,
}

impl Distribution {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidArgument("distribution has no outcomes".into()));
        }
        if let Some(i) = p.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "probability {} at index {i} is not a non-negative number",
                p[i]
            )));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::InvalidArgument(format!("probabilities sum to {sum}")));
        }
        Ok(Distribution { p })
    }

    /// Normalises non-negative counts.
    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::InvalidArgument("all counts are zero".into()));
        }
        Self::new(counts.iter().map(|&c| c as f64 / total as f64).collect())
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

/// `-Σ p log2 p`, with `0 log 0 = 0`.
pub fn entropy(dist: &Distribution) -> f64 {
    let mut p: Vec<f64> = dist.p.iter().copied().filter(|&v| v > 0.0).collect();
    p.sort_by(f64::total_cmp);
    0.0 - p.iter().map(|&v| v * v.log2()).sum::<f64>()
}

/// Replaces outcomes `i` and `j` by a single outcome carrying `p_i + p_j`,
/// placed at `min(i, j)`; the other outcomes keep their order.
pub fn merge_outcomes(dist: &Distribution, i: usize, j: usize) -> Result<Distribution> {
    let n = dist.p.len();
    if i >= n || j >= n {
        return Err(Error::InvalidArgument(format!(
            "merge indices ({i}, {j}) out of range for {n} outcomes"
        )));
    }
    if i == j {
        return Err(Error::InvalidArgument(format!("cannot merge outcome {i} with itself")));
    }
    let (lo, hi) = (i.min(j), i.max(j));
    let mut p = dist.p.clone();
    p[lo] += p[hi];
    p.remove(hi);
    Ok(Distribution { p })
}

/// Entropy in bits of a frequency table, summed over non-zero counts in
/// ascending count order.
fn entropy_of_counts(mut counts: Vec<u64>, total: u64) -> f64 {
    counts.retain(|&c| c > 0);
    counts.sort_unstable();
    let total = total as f64;
    0.0 - counts
        .iter()
        .map(|&c| {
            let p = c as f64 / total;
            p * p.log2()
        })
        .sum::<f64>()
}

/// Spatial displacement: `k` rows down, `l` columns right.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Offset {
    pub k: isize,
    pub l: isize,
}

impl Offset {
    pub const fn new(k: isize, l: isize) -> Self {
        Offset { k, l }
    }

    pub fn reversed(self) -> Self {
        Offset { k: -self.k, l: -self.l }
    }

    fn check(self, map: &GrayMap) -> Result<()> {
        if self.k.unsigned_abs() >= map.height() || self.l.unsigned_abs() >= map.width() {
            return Err(Error::OffsetOutOfBounds {
                k: self.k,
                l: self.l,
                height: map.height(),
                width: map.width(),
            });
        }
        Ok(())
    }
}

/// The four nearest-neighbour offsets averaged by the aura matrix entropy.
pub const AURA_OFFSETS: [Offset; 4] = [
    Offset::new(-1, 0),
    Offset::new(0, -1),
    Offset::new(1, 0),
    Offset::new(0, 1),
];

/// 256x256 co-occurrence counts for one offset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JointHistogram {
    counts: Vec<u64>,
    total: u64,
    offset: Offset,
}

impl JointHistogram {
    /// Builds a histogram from a raw 256x256 row-major count table.
    pub fn from_counts(counts: Vec<u64>, offset: Offset) -> Result<Self> {
        if counts.len() != LEVELS * LEVELS {
            return Err(Error::Shape(format!(
                "joint histogram needs {} cells, got {}",
                LEVELS * LEVELS,
                counts.len()
            )));
        }
        let total = counts.iter().sum();
        Ok(JointHistogram { counts, total, offset })
    }

    /// Number of pairs with first value `g` and second value `g2`.
    pub fn count(&self, g: u8, g2: u8) -> u64 {
        self.counts[g as usize * LEVELS + g2 as usize]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn offset(&self) -> Offset {
        self.offset
    }

    /// Swaps the roles of the two pixels; equals the histogram of the
    /// reversed offset.
    pub fn transpose(&self) -> JointHistogram {
        let mut counts = vec![0; LEVELS * LEVELS];
        for g in 0..LEVELS {
            for g2 in 0..LEVELS {
                counts[g2 * LEVELS + g] = self.counts[g * LEVELS + g2];
            }
        }
        JointHistogram {
            counts,
            total: self.total,
            offset: self.offset.reversed(),
        }
    }

    /// Distribution of the first pixel of each pair.
    pub fn row_marginal(&self) -> Result<Distribution> {
        let rows: Vec<u64> = self.counts.chunks_exact(LEVELS).map(|r| r.iter().sum()).collect();
        Distribution::from_counts(&rows)
    }

    /// Distribution of the second pixel of each pair.
    pub fn col_marginal(&self) -> Result<Distribution> {
        let mut cols = vec![0u64; LEVELS];
        for row in self.counts.chunks_exact(LEVELS) {
            for (c, v) in cols.iter_mut().zip(row) {
                *c += v;
            }
        }
        Distribution::from_counts(&cols)
    }
}

fn level_counts(map: &GrayMap) -> Vec<u64> {
    let mut counts = vec![0u64; LEVELS];
    for &p in map.pixels() {
        counts[p as usize] += 1;
    }
    counts
}

/// `H(0)`: entropy of the intensity histogram, pixels taken as independent.
pub fn univariate_entropy(map: &GrayMap) -> f64 {
    entropy_of_counts(level_counts(map), map.pixels().len() as u64)
}

/// Visits every in-bounds pair `(X[i][j], X[i + k][j + l])` in row-major
/// order of the first pixel.
fn for_each_pair(map: &GrayMap, offset: Offset, mut f: impl FnMut(u8, u8)) {
    let (h, w) = (map.height() as isize, map.width() as isize);
    let i0 = 0.max(-offset.k);
    let i1 = h.min(h - offset.k);
    let j0 = 0.max(-offset.l);
    let j1 = w.min(w - offset.l);
    for i in i0..i1 {
        for j in j0..j1 {
            f(
                map.get(i as usize, j as usize),
                map.get((i + offset.k) as usize, (j + offset.l) as usize),
            );
        }
    }
}

pub fn joint_histogram(map: &GrayMap, offset: Offset) -> Result<JointHistogram> {
    offset.check(map)?;
    let mut counts = vec![0u64; LEVELS * LEVELS];
    let mut total = 0;
    for_each_pair(map, offset, |g, g2| {
        counts[g as usize * LEVELS + g2 as usize] += 1;
        total += 1;
    });
    Ok(JointHistogram { counts, total, offset })
}

/// `H(k, l)` of a co-occurrence table.
pub fn bivariate_entropy(hist: &JointHistogram) -> Result<f64> {
    if hist.total == 0 {
        return Err(Error::InvalidArgument("joint histogram is empty".into()));
    }
    Ok(entropy_of_counts(hist.counts.clone(), hist.total))
}

/// `H(k, l)` straight from the map, without materialising the 256x256
/// table. Bit-identical to `bivariate_entropy(&joint_histogram(..))`.
fn pair_entropy(map: &GrayMap, offset: Offset) -> f64 {
    let mut codes = Vec::with_capacity(map.pixels().len());
    for_each_pair(map, offset, |g, g2| codes.push(((g as u32) << 8) | g2 as u32));
    codes.sort_unstable();
    let total = codes.len() as u64;
    let mut counts = Vec::new();
    let mut iter = codes.into_iter();
    if let Some(first) = iter.next() {
        let (mut current, mut run) = (first, 1u64);
        for code in iter {
            if code == current {
                run += 1;
            } else {
                counts.push(run);
                current = code;
                run = 1;
            }
        }
        counts.push(run);
    }
    entropy_of_counts(counts, total)
}

fn relative(h_pair: f64, h0: f64) -> f64 {
    if h0 == 0.0 {
        0.0
    } else {
        (h_pair - h0) / h0
    }
}

/// `H_R(k, l) = (H(k, l) - H(0)) / H(0)`, defined as 0 when `H(0) = 0`.
pub fn relative_entropy(map: &GrayMap, offset: Offset) -> Result<f64> {
    offset.check(map)?;
    Ok(relative(pair_entropy(map, offset), univariate_entropy(map)))
}

/// Mean of `H_R` over the four nearest-neighbour offsets, summed in
/// ascending order.
pub fn aura_matrix_entropy(map: &GrayMap) -> Result<f64> {
    if map.width() < 2 || map.height() < 2 {
        return Err(Error::Shape(format!(
            "aura matrix entropy needs at least a 2x2 map, got {}x{}",
            map.height(),
            map.width()
        )));
    }
    let h0 = univariate_entropy(map);
    let mut terms = AURA_OFFSETS.map(|o| relative(pair_entropy(map, o), h0));
    terms.sort_by(f64::total_cmp);
    Ok(terms.iter().sum::<f64>() / 4.0)
}

/// Largest map accepted by [`spatial_disorder_entropy`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SdeCap {
    pub height: usize,
    pub width: usize,
}

impl Default for SdeCap {
    fn default() -> Self {
        SdeCap {
            height: 64,
            width: 64,
        }
    }
}

/// Mean of `H_R(a, b)` over every offset with `|a| < m`, `|b| < n`, each
/// weighted by its pair count `(m - |a|)(n - |b|)`. The zero offset
/// contributes `H_R(0, 0) = 0`.
pub fn spatial_disorder_entropy(map: &GrayMap, cap: SdeCap) -> Result<f64> {
    let (m, n) = (map.height(), map.width());
    if m < 2 || n < 2 {
        return Err(Error::Shape(format!(
            "spatial disorder entropy needs at least a 2x2 map, got {m}x{n}"
        )));
    }
    if m > cap.height || n > cap.width {
        return Err(Error::SdeTooLarge {
            height: m,
            width: n,
            cap_height: cap.height,
            cap_width: cap.width,
        });
    }
    let h0 = univariate_entropy(map);
    let (mi, ni) = (m as isize, n as isize);
    // offsets with a >= 0; those with a < 0 mirror them exactly
    let half: Vec<Offset> = (0..mi)
        .flat_map(|a| (-(ni - 1)..ni).map(move |b| Offset::new(a, b)))
        .collect();
    let values: Vec<f64> = half
        .par_iter()
        .map(|&o| relative(pair_entropy(map, o), h0))
        .collect();
    let lookup = |o: Offset| -> f64 {
        let c = if o.k >= 0 { o } else { o.reversed() };
        let row = c.k as usize * (2 * n - 1);
        values[row + (c.l + ni - 1) as usize]
    };
    // terms summed in ascending order, so transposing the map cannot
    // change the result
    let mut terms = Vec::with_capacity((2 * m - 1) * (2 * n - 1));
    let mut weights = 0u64;
    for a in -(mi - 1)..mi {
        for b in -(ni - 1)..ni {
            let w = ((m - a.unsigned_abs()) * (n - b.unsigned_abs())) as u64;
            terms.push(w as f64 * lookup(Offset::new(a, b)));
            weights += w;
        }
    }
    terms.sort_by(f64::total_cmp);
    Ok(terms.iter().sum::<f64>() / weights as f64)
}
