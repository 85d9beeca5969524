//! Differentiable soft ranking.
//!
//! `soft_rank(x)` is the Euclidean projection of `x / epsilon` onto the
//! permutahedron generated by `(1, ..., m)`: sort descending, run L2
//! isotonic regression against the staircase `(m, m-1, ..., 1)` with
//! pool-adjacent-violators, subtract, and undo the sort. The PAV block
//! partition is kept so the backward pass is a per-block centering at
//! O(m) cost.
//!
//! Convention: the largest input gets the largest rank value `m` in the
//! well-separated limit. As `epsilon` grows the ranks contract toward the
//! centroid `(m+1)/2`.

use crate::error::{Error, Result};

/// Regularization strength of the soft-rank operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftRankConfig {
    pub epsilon: f64,
}

impl SoftRankConfig {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !epsilon.is_finite() || epsilon <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "soft-rank epsilon must be positive and finite, got {epsilon}"
            )));
        }
        Ok(Self { epsilon })
    }
}

impl Default for SoftRankConfig {
    /// 0.1: small enough to resolve gaps between probabilities in [0, 1],
    /// large enough that gradients do not vanish.
    fn default() -> Self {
        Self { epsilon: 0.1 }
    }
}

/// Forward result of [`soft_rank`], carrying what the backward pass needs.
#[derive(Debug, Clone)]
pub struct SoftRanks {
    values: Vec<f64>,
    /// `(start, len)` runs of sorted positions pooled by PAV.
    blocks: Vec<(usize, usize)>,
    /// `permutation[j]` = original index of the j-th largest input.
    permutation: Vec<usize>,
}

impl SoftRanks {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn blocks(&self) -> &[(usize, usize)] {
        &self.blocks
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// L2 isotonic regression with a non-increasing constraint via
/// pool-adjacent-violators. Returns the fitted value and the block runs.
fn pav_non_increasing(d: &[f64]) -> (Vec<f64>, Vec<(usize, usize)>) {
    let n = d.len();
    let mut sums: Vec<f64> = Vec::with_capacity(n);
    let mut lens: Vec<usize> = Vec::with_capacity(n);
    for &v in d {
        sums.push(v);
        lens.push(1);
        // merge while the fit would have to increase left to right
        while sums.len() > 1 {
            let top = sums.len() - 1;
            if sums[top - 1] * lens[top] as f64 >= sums[top] * lens[top - 1] as f64 {
                break;
            }
            let s = sums.pop().unwrap();
            let l = lens.pop().unwrap();
            *sums.last_mut().unwrap() += s;
            *lens.last_mut().unwrap() += l;
        }
    }
    let mut fitted = Vec::with_capacity(n);
    let mut blocks = Vec::with_capacity(sums.len());
    let mut start = 0;
    for (s, l) in sums.iter().zip(&lens) {
        let mean = s / *l as f64;
        fitted.extend(std::iter::repeat_n(mean, *l));
        blocks.push((start, *l));
        start += l;
    }
    (fitted, blocks)
}

/// Projects `x / cfg.epsilon` onto the permutahedron of `(1, ..., m)`.
pub fn soft_rank(x: &[f64], cfg: &SoftRankConfig) -> Result<SoftRanks> {
    let m = x.len();
    if m < 2 {
        return Err(Error::InvalidInput(format!(
            "soft_rank needs at least 2 entries, got {m}"
        )));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "non-finite entry {} at index {i}",
            x[i]
        )));
    }
    let eps = SoftRankConfig::new(cfg.epsilon)?.epsilon;

    let mut permutation: Vec<usize> = (0..m).collect();
    permutation.sort_unstable_by(|&a, &b| x[b].partial_cmp(&x[a]).unwrap().then(a.cmp(&b)));

    let scaled: Vec<f64> = permutation.iter().map(|&i| x[i] / eps).collect();
    let residual: Vec<f64> = scaled
        .iter()
        .enumerate()
        .map(|(j, &s)| s - (m - j) as f64)
        .collect();
    let (fitted, blocks) = pav_non_increasing(&residual);

    let mut values = vec![0.0; m];
    for (j, &i) in permutation.iter().enumerate() {
        values[i] = scaled[j] - fitted[j];
    }
    Ok(SoftRanks {
        values,
        blocks,
        permutation,
    })
}

/// `J^T * upstream` for the Jacobian of [`soft_rank`] at the stored input.
///
/// Within each PAV block the map is a centering scaled by `1/epsilon`, so
/// the transpose acts the same way; at block boundaries this is the
/// one-sided derivative implied by the forward partition.
pub fn soft_rank_vjp(
    state: &SoftRanks,
    upstream: &[f64],
    cfg: &SoftRankConfig,
) -> Result<Vec<f64>> {
    let m = state.len();
    if upstream.len() != m {
        return Err(Error::InvalidInput(format!(
            "upstream length {} does not match rank length {m}",
            upstream.len()
        )));
    }
    if let Some(i) = upstream.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "non-finite upstream entry {} at index {i}",
            upstream[i]
        )));
    }
    let eps = SoftRankConfig::new(cfg.epsilon)?.epsilon;

    let sorted_upstream: Vec<f64> = state.permutation.iter().map(|&i| upstream[i]).collect();
    let mut out = vec![0.0; m];
    for &(start, len) in &state.blocks {
        let mean: f64 = sorted_upstream[start..start + len].iter().sum::<f64>() / len as f64;
        for j in start..start + len {
            out[state.permutation[j]] = (sorted_upstream[j] - mean) / eps;
        }
    }
    Ok(out)
}

/// Integer ranks: `m` for the largest entry, 1 for the smallest. Among
/// tied entries the smaller index receives the larger rank, consistent
/// with the top-k tie rule.
pub fn hard_ranks(x: &[f64]) -> Result<Vec<usize>> {
    if x.is_empty() {
        return Err(Error::InvalidInput(
            "hard_ranks needs at least 1 entry".into(),
        ));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "non-finite entry {} at index {i}",
            x[i]
        )));
    }
    let m = x.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_unstable_by(|&a, &b| x[b].partial_cmp(&x[a]).unwrap().then(a.cmp(&b)));
    let mut ranks = vec![0; m];
    for (j, &i) in order.iter().enumerate() {
        ranks[i] = m - j;
    }
    Ok(ranks)
}
