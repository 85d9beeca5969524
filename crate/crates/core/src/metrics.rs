//! Evaluation battery: consistency rate (CR), mean overlap rate (MOR),
//! perplexity, and the multi-modal proportion of a prediction set.
//!
//! CR at k is the percentage of positions where the two models' ordered
//! top-k lists are element-wise identical; OR at k is the fraction of
//! shared categories ignoring order, and MOR averages OR over positions.
//! Accumulators are streaming so dumps larger than memory can be scanned
//! in one pass, and partial accumulators merge deterministically.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::prob::{nucleus_size, softmax_with_temperature, top_k_indices, LogitVector, ProbVector};

/// CR@k and MOR@k percentages over a set of prediction positions.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    /// k -> percentage of positions with identical ordered top-k lists.
    pub cr: BTreeMap<usize, f64>,
    /// k -> mean overlap percentage of the top-k sets.
    pub mor: BTreeMap<usize, f64>,
    pub n_positions: u64,
}

/// Default CR ranges, matching the report-table layout.
pub const DEFAULT_CR_KS: [usize; 5] = [1, 2, 3, 4, 5];
/// Default MOR ranges, matching the report-table layout.
pub const DEFAULT_MOR_KS: [usize; 4] = [3, 5, 10, 20];

/// Streaming CR/MOR accumulator over (teacher, student) position pairs.
///
/// Counts are integers, so partial accumulators merge exactly: any split
/// of the positions over workers reproduces the single-pass totals bit
/// for bit.
#[derive(Debug, Clone)]
pub struct ConsistencyAccumulator {
    cr_ks: Vec<usize>,
    mor_ks: Vec<usize>,
    max_k: usize,
    /// Top-list length every position must share (set by the first push).
    list_len: Option<usize>,
    cr_hits: Vec<u64>,
    /// Summed overlap counts; OR divides by the effective k at report time.
    or_numerators: Vec<u64>,
    n: u64,
}

impl ConsistencyAccumulator {
    pub fn new(cr_ks: &[usize], mor_ks: &[usize]) -> Result<Self> {
        if cr_ks.is_empty() && mor_ks.is_empty() {
            return Err(Error::InvalidParameter(
                "at least one CR or MOR range is required".into(),
            ));
        }
        if cr_ks.iter().chain(mor_ks).any(|&k| k == 0) {
            return Err(Error::InvalidParameter(
                "evaluation ranges must be >= 1".into(),
            ));
        }
        let max_k = cr_ks.iter().chain(mor_ks).copied().max().unwrap_or(1);
        Ok(Self {
            cr_ks: cr_ks.to_vec(),
            mor_ks: mor_ks.to_vec(),
            max_k,
            list_len: None,
            cr_hits: vec![0; cr_ks.len()],
            or_numerators: vec![0; mor_ks.len()],
            n: 0,
        })
    }

    /// CR at top-1..5 and MOR at top-3/5/10/20.
    pub fn with_default_ranges() -> Self {
        Self::new(&DEFAULT_CR_KS, &DEFAULT_MOR_KS).expect("default ranges are valid")
    }

    /// Largest k any configured range needs; pre-extracted top-k lists
    /// passed to [`Self::push_top_k`] must be at least this long (or the
    /// whole vocabulary when it is smaller).
    pub fn max_k(&self) -> usize {
        self.max_k
    }

    pub fn push(&mut self, teacher: &ProbVector, student: &ProbVector) -> Result<()> {
        if teacher.len() != student.len() {
            return Err(Error::InvalidInput(format!(
                "vocabulary sizes differ: teacher {}, student {}",
                teacher.len(),
                student.len()
            )));
        }
        let k = self.max_k.min(teacher.len());
        let top_p = top_k_indices(teacher, k)?;
        let top_q = top_k_indices(student, k)?;
        self.push_top_k(&top_p, &top_q)
    }

    /// Accumulates one position from pre-extracted ordered top-k lists
    /// (the sparse-dump path). Every position of a run must supply lists
    /// of the same length.
    pub fn push_top_k(&mut self, teacher_top: &[usize], student_top: &[usize]) -> Result<()> {
        if teacher_top.len() != student_top.len() {
            return Err(Error::InvalidInput(format!(
                "top-k lists differ in length: {} vs {}",
                teacher_top.len(),
                student_top.len()
            )));
        }
        match self.list_len {
            None => self.list_len = Some(teacher_top.len()),
            Some(len) if len != teacher_top.len() => {
                return Err(Error::InvalidInput(format!(
                    "top-k list length changed mid-stream: {len} vs {}",
                    teacher_top.len()
                )));
            }
            Some(_) => {}
        }
        for (slot, &k) in self.cr_ks.iter().enumerate() {
            let k = k.min(teacher_top.len());
            if teacher_top[..k] == student_top[..k] {
                self.cr_hits[slot] += 1;
            }
        }
        for (slot, &k) in self.mor_ks.iter().enumerate() {
            let k = k.min(teacher_top.len());
            let shared = teacher_top[..k]
                .iter()
                .filter(|i| student_top[..k].contains(i))
                .count();
            self.or_numerators[slot] += shared as u64;
        }
        self.n += 1;
        Ok(())
    }

    /// Folds a partial accumulator in; integer totals make the result
    /// independent of how positions were split across workers.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if self.cr_ks != other.cr_ks || self.mor_ks != other.mor_ks {
            return Err(Error::InvalidInput(
                "cannot merge accumulators with different ranges".into(),
            ));
        }
        match (self.list_len, other.list_len) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::InvalidInput(format!(
                    "cannot merge accumulators over different list lengths: {a} vs {b}"
                )));
            }
            (None, b) => self.list_len = b,
            _ => {}
        }
        for (a, b) in self.cr_hits.iter_mut().zip(&other.cr_hits) {
            *a += b;
        }
        for (a, b) in self.or_numerators.iter_mut().zip(&other.or_numerators) {
            *a += b;
        }
        self.n += other.n;
        Ok(())
    }

    pub fn n_positions(&self) -> u64 {
        self.n
    }

    pub fn report(&self) -> Result<ConsistencyReport> {
        if self.n == 0 {
            return Err(Error::InvalidInput(
                "no positions accumulated; cannot report consistency".into(),
            ));
        }
        let n = self.n as f64;
        let list_len = self.list_len.unwrap_or(self.max_k);
        let cr = self
            .cr_ks
            .iter()
            .zip(&self.cr_hits)
            .map(|(&k, &hits)| (k, 100.0 * hits as f64 / n))
            .collect();
        let mor = self
            .mor_ks
            .iter()
            .zip(&self.or_numerators)
            .map(|(&k, &shared)| {
                let k_eff = k.min(list_len);
                (k, 100.0 * shared as f64 / (k_eff as f64 * n))
            })
            .collect();
        Ok(ConsistencyReport {
            cr,
            mor,
            n_positions: self.n,
        })
    }
}

/// Percentage of positions whose ordered top-k lists agree exactly.
pub fn cr_at_k(pairs: &[(ProbVector, ProbVector)], k: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("empty pair sequence".into()));
    }
    let mut acc = ConsistencyAccumulator::new(&[k], &[])?;
    for (teacher, student) in pairs {
        acc.push(teacher, student)?;
    }
    Ok(acc.report()?.cr[&k])
}

/// Mean overlap percentage of the top-k sets.
pub fn mor_at_k(pairs: &[(ProbVector, ProbVector)], k: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("empty pair sequence".into()));
    }
    let mut acc = ConsistencyAccumulator::new(&[], &[k])?;
    for (teacher, student) in pairs {
        acc.push(teacher, student)?;
    }
    Ok(acc.report()?.mor[&k])
}

/// `exp(-mean(log_probs))` over the realized next tokens.
pub fn perplexity(log_probs: &[f64]) -> Result<f64> {
    if log_probs.is_empty() {
        return Err(Error::InvalidInput("empty log-probability sequence".into()));
    }
    if let Some(&bad) = log_probs.iter().find(|v| !v.is_finite() || **v > 0.0) {
        return Err(Error::InvalidInput(format!(
            "log-probabilities must be finite and <= 0, got {bad}"
        )));
    }
    let mean = log_probs.iter().sum::<f64>() / log_probs.len() as f64;
    Ok((-mean).exp())
}

/// Nucleus-size statistics of a prediction set at one temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiModalReport {
    pub temperature: f64,
    pub top_p: f64,
    /// Fraction of positions whose nucleus holds more than one token.
    pub proportion_multimodal: f64,
    /// Nucleus size -> number of positions.
    pub histogram: BTreeMap<usize, u64>,
}

/// Streaming counterpart of [`multimodal_proportion`].
#[derive(Debug, Clone)]
pub struct MultiModalAccumulator {
    top_p: f64,
    temperature: f64,
    histogram: BTreeMap<usize, u64>,
    n: u64,
}

impl MultiModalAccumulator {
    pub fn new(top_p: f64, temperature: f64) -> Result<Self> {
        if !(top_p > 0.0 && top_p <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "top_p must lie in (0, 1], got {top_p}"
            )));
        }
        if !temperature.is_finite() || temperature <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "temperature must be positive and finite, got {temperature}"
            )));
        }
        Ok(Self {
            top_p,
            temperature,
            histogram: BTreeMap::new(),
            n: 0,
        })
    }

    /// Pushes a position given as a ready distribution. Only valid at
    /// temperature 1: rescaling needs the raw logits.
    pub fn push_dist(&mut self, dist: &ProbVector) -> Result<()> {
        if self.temperature != 1.0 {
            return Err(Error::InvalidInput(
                "temperature != 1 requires raw logits, not a probability dump".into(),
            ));
        }
        let size = nucleus_size(dist, self.top_p)?;
        *self.histogram.entry(size).or_insert(0) += 1;
        self.n += 1;
        Ok(())
    }

    pub fn push_logits(&mut self, logits: &LogitVector) -> Result<()> {
        let dist = softmax_with_temperature(logits, self.temperature)?;
        let size = nucleus_size(&dist, self.top_p)?;
        *self.histogram.entry(size).or_insert(0) += 1;
        self.n += 1;
        Ok(())
    }

    pub fn report(&self) -> Result<MultiModalReport> {
        if self.n == 0 {
            return Err(Error::InvalidInput("no positions accumulated".into()));
        }
        let multi: u64 = self
            .histogram
            .iter()
            .filter(|(&size, _)| size > 1)
            .map(|(_, &count)| count)
            .sum();
        Ok(MultiModalReport {
            temperature: self.temperature,
            top_p: self.top_p,
            proportion_multimodal: multi as f64 / self.n as f64,
            histogram: self.histogram.clone(),
        })
    }
}

/// Applies `temperature` (via the raw logits when it is not 1), computes
/// the nucleus size of every position, and reports the fraction with
/// size > 1 together with the full size histogram.
pub fn multimodal_proportion(
    dists: &[ProbVector],
    top_p: f64,
    temperature: f64,
    raw_logits: Option<&[LogitVector]>,
) -> Result<MultiModalReport> {
    let mut acc = MultiModalAccumulator::new(top_p, temperature)?;
    match raw_logits {
        Some(logits) => {
            for z in logits {
                acc.push_logits(z)?;
            }
        }
        None => {
            for d in dists {
                acc.push_dist(d)?;
            }
        }
    }
    acc.report()
}
