//! Probability-distribution primitives: temperature softmax, top-k
//! selection, nucleus size, and the top-k union two objectives operate on.
//!
//! Ties in every selection routine break toward the smaller vocabulary
//! index so repeated runs produce identical index lists.

use crate::error::{Error, Result};

/// Tolerance on `sum(p) == 1` for a valid [`ProbVector`].
pub const PROB_SUM_TOL: f64 = 1e-9;

/// Unnormalized model scores over a vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector {
    values: Vec<f64>,
}

impl LogitVector {
    /// Validates length >= 2 and finiteness.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "logit vector needs at least 2 entries, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite logit {} at index {i}",
                values[i]
            )));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A probability distribution over a vocabulary: entries >= 0, sum within
/// [`PROB_SUM_TOL`] of 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector {
    values: Vec<f64>,
}

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "probability vector needs at least 2 entries, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "invalid probability {} at index {i}",
                values[i]
            )));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::InvalidInput(format!(
                "probabilities sum to {sum}, expected 1 within {PROB_SUM_TOL}"
            )));
        }
        Ok(Self { values })
    }

    /// Builds a distribution from non-negative weights by dividing out the
    /// sum. Used when loading 32-bit dumps whose rows drift off 1.
    pub fn renormalized(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "probability vector needs at least 2 entries, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "invalid probability {} at index {i}",
                values[i]
            )));
        }
        let sum: f64 = values.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidInput("all-zero probability vector".into()));
        }
        let values = values.into_iter().map(|v| v / sum).collect();
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// The union of teacher and student top-k index sets, with the probability
/// sub-vectors gathered at those indices. Ordered by descending teacher
/// probability (ties toward the smaller index).
#[derive(Debug, Clone)]
pub struct TopKUnion {
    pub indices: Vec<usize>,
    pub p_sub: Vec<f64>,
    pub q_sub: Vec<f64>,
    pub k: usize,
}

impl TopKUnion {
    /// Assembles a union from pre-gathered parts, checking shape only.
    /// Intended for tests and for feeding the ranking loss directly.
    pub fn from_parts(
        indices: Vec<usize>,
        p_sub: Vec<f64>,
        q_sub: Vec<f64>,
        k: usize,
    ) -> Result<Self> {
        if indices.len() != p_sub.len() || indices.len() != q_sub.len() {
            return Err(Error::InvalidInput(format!(
                "union parts disagree on length: {} indices, {} teacher probs, {} student probs",
                indices.len(),
                p_sub.len(),
                q_sub.len()
            )));
        }
        let mut seen = indices.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput("union indices are not distinct".into()));
        }
        Ok(Self {
            indices,
            p_sub,
            q_sub,
            k,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// `softmax(z / tau)` with max-subtraction for stability.
pub fn softmax_with_temperature(logits: &LogitVector, tau: f64) -> Result<ProbVector> {
    if !tau.is_finite() || tau <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "temperature must be positive and finite, got {tau}"
        )));
    }
    let z = logits.values();
    let max = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) / tau;
    let mut exps: Vec<f64> = z.iter().map(|&v| (v / tau - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    for e in &mut exps {
        *e /= sum;
    }
    ProbVector::new(exps)
}

fn descending_by_prob(values: &[f64]) -> impl Fn(&usize, &usize) -> std::cmp::Ordering + '_ {
    move |&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .expect("probabilities are finite")
            .then(a.cmp(&b))
    }
}

/// Indices of the k largest probabilities in descending order, ties broken
/// toward the smaller index.
pub fn top_k_indices(dist: &ProbVector, k: usize) -> Result<Vec<usize>> {
    let v = dist.len();
    if k == 0 || k > v {
        return Err(Error::InvalidParameter(format!(
            "top-k requires 1 <= k <= {v}, got {k}"
        )));
    }
    let values = dist.values();
    if k * 4 >= v {
        let mut idx: Vec<usize> = (0..v).collect();
        let cmp = descending_by_prob(values);
        if k < v {
            idx.select_nth_unstable_by(k - 1, |a, b| cmp(a, b));
            idx.truncate(k);
        }
        idx.sort_unstable_by(|a, b| cmp(a, b));
        return Ok(idx);
    }

    // small k: select on packed keys. Probabilities are non-negative, so
    // their IEEE bit patterns sort like the values; inverting the bits
    // makes the ascending key order descending in probability with ties
    // falling to the smaller index. `p + 0.0` folds -0.0 into +0.0.
    let mut keys: Vec<u128> = values
        .iter()
        .enumerate()
        .map(|(i, &p)| (!((p + 0.0).to_bits()) as u128) << 32 | i as u128)
        .collect();
    keys.select_nth_unstable(k - 1);
    keys.truncate(k);
    keys.sort_unstable();
    Ok(keys
        .into_iter()
        .map(|key| (key & 0xffff_ffff) as usize)
        .collect())
}

/// Union of the two models' top-k index sets, ordered by descending
/// teacher probability. `k <= len <= 2k`.
pub fn union_top_k(teacher: &ProbVector, student: &ProbVector, k: usize) -> Result<TopKUnion> {
    if teacher.len() != student.len() {
        return Err(Error::InvalidInput(format!(
            "vocabulary sizes differ: teacher {}, student {}",
            teacher.len(),
            student.len()
        )));
    }
    let top_p = top_k_indices(teacher, k)?;
    let top_q = top_k_indices(student, k)?;

    // student-only extras, then merge with top_p: both runs are already
    // in descending teacher order, so one merge replaces a full sort
    let mut extras: Vec<usize> = top_q.into_iter().filter(|i| !top_p.contains(i)).collect();
    extras.sort_unstable_by(descending_by_prob(teacher.values()));

    let m = top_p.len() + extras.len();
    let mut indices = Vec::with_capacity(m);
    let mut p_sub = Vec::with_capacity(m);
    let mut q_sub = Vec::with_capacity(m);
    let cmp = descending_by_prob(teacher.values());
    let (mut a, mut b) = (top_p.into_iter().peekable(), extras.into_iter().peekable());
    loop {
        let next = match (a.peek(), b.peek()) {
            (Some(&x), Some(&y)) => {
                if cmp(&x, &y).is_le() {
                    a.next()
                } else {
                    b.next()
                }
            }
            (Some(_), None) => a.next(),
            (None, Some(_)) => b.next(),
            (None, None) => break,
        };
        let i = next.expect("peeked");
        indices.push(i);
        p_sub.push(teacher.values()[i]);
        q_sub.push(student.values()[i]);
    }
    Ok(TopKUnion {
        indices,
        p_sub,
        q_sub,
        k,
    })
}

/// Size of the smallest highest-probability set with cumulative mass >= p.
///
/// The running sum is compensated so that thresholds expressible as exact
/// sums of the entries (uniform rows, for one) land on the intended side.
pub fn nucleus_size(dist: &ProbVector, p: f64) -> Result<usize> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "nucleus threshold must lie in (0, 1], got {p}"
        )));
    }
    let mut idx: Vec<usize> = (0..dist.len()).collect();
    idx.sort_unstable_by(descending_by_prob(dist.values()));
    let mut sum = 0.0;
    let mut comp = 0.0;
    for (count, &i) in idx.iter().enumerate() {
        let y = dist.values()[i] - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
        if sum >= p - 1e-12 {
            return Ok(count + 1);
        }
    }
    Ok(dist.len())
}
