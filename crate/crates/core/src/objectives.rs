//! Distillation objectives: word-level divergences (KL, RKL, JSD, TVD,
//! AKL), the rank-correlation losses over the top-k union, and their
//! fixed or dynamic combination. Every loss comes with an analytic
//! gradient with respect to the student logits.
//!
//! Gradients flow through the student softmax and, for the ranking term,
//! through the soft-rank operator on the student sub-vector. The union
//! index selection and the dynamic coefficient are piecewise-constant in
//! the logits, so the backward pass treats them as constants; their true
//! derivative is zero away from ties. The teacher side carries no
//! gradient.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::prob::{
    softmax_with_temperature, top_k_indices, union_top_k, LogitVector, ProbVector, TopKUnion,
};
use crate::softrank::{hard_ranks, soft_rank, soft_rank_vjp, SoftRankConfig};

/// Probabilities below this floor are lifted before entering a log term,
/// so 32-bit underflow in dump rows cannot produce infinities.
const LOG_CLAMP_FLOOR: f64 = 1e-30;

/// Guard added to correlation denominators.
const CORR_GUARD: f64 = 1e-12;

/// How log terms treat zero probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZeroPolicy {
    /// Clamp the offending probability to 1e-30 inside the log.
    #[default]
    Clamp,
    /// Raise [`Error::DivergenceInfinite`] instead.
    Exact,
}

/// The word-level base divergence of a distillation objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseDivergence {
    Kl,
    Rkl,
    Jsd,
    Tvd,
    Akl,
    /// Ranking-only training.
    None,
}

impl fmt::Display for BaseDivergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BaseDivergence::Kl => "KL",
            BaseDivergence::Rkl => "RKL",
            BaseDivergence::Jsd => "JSD",
            BaseDivergence::Tvd => "TVD",
            BaseDivergence::Akl => "AKL",
            BaseDivergence::None => "None",
        };
        f.write_str(s)
    }
}

/// Which correlation the ranking term maximizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RankCorrelation {
    #[default]
    Srcc,
    Pearson,
}

/// How the ranking and base terms are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Allocation {
    /// `lambda * ranking + base`.
    #[default]
    Fixed,
    /// `lambda * ranking + (|top-k overlap| / k) * base`; only meaningful
    /// for the asymmetric KL and RKL.
    Dynamic,
}

/// Full configuration of a distillation objective.
#[derive(Debug, Clone)]
pub struct ObjectiveSpec {
    pub base: BaseDivergence,
    pub use_ranking: bool,
    pub rank_correlation: RankCorrelation,
    /// Top-k range of the ranking term (and of the dynamic coefficient).
    pub rank_k: usize,
    /// Weight on the ranking term.
    pub lambda: f64,
    pub allocation: Allocation,
    /// Cumulative-mass threshold splitting AKL's head from its tail.
    pub akl_mu: f64,
    /// Distillation temperature applied to both models' logits.
    pub tau: f64,
    pub softrank: SoftRankConfig,
    /// Use integer ranks on the teacher side (it carries no gradient, so
    /// only the forward values change). Ablation switch.
    pub teacher_hard_ranks: bool,
    /// Apply the Pearson objective to soft ranks instead of raw
    /// probabilities.
    pub pearson_on_ranks: bool,
    pub zero_policy: ZeroPolicy,
}

impl ObjectiveSpec {
    /// Defaults: `lambda` 2, `tau` 1, AKL `mu` 0.5, fixed allocation, and
    /// `rank_k` 15 for ranking-only training or 5 when mixed with a base
    /// divergence.
    pub fn new(base: BaseDivergence, use_ranking: bool) -> Result<Self> {
        let spec = Self {
            base,
            use_ranking,
            rank_correlation: RankCorrelation::Srcc,
            rank_k: if base == BaseDivergence::None { 15 } else { 5 },
            lambda: 2.0,
            allocation: Allocation::Fixed,
            akl_mu: 0.5,
            tau: 1.0,
            softrank: SoftRankConfig::default(),
            teacher_hard_ranks: false,
            pearson_on_ranks: false,
            zero_policy: ZeroPolicy::Clamp,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.base == BaseDivergence::None && !self.use_ranking {
            return Err(Error::InvalidParameter(
                "no active loss: base is None and ranking is disabled".into(),
            ));
        }
        if self.allocation == Allocation::Dynamic
            && !matches!(self.base, BaseDivergence::Kl | BaseDivergence::Rkl)
        {
            return Err(Error::InvalidParameter(format!(
                "dynamic allocation applies to KL and RKL only, base is {}",
                self.base
            )));
        }
        if self.rank_k == 0 {
            return Err(Error::InvalidParameter("rank_k must be positive".into()));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "lambda must be non-negative and finite, got {}",
                self.lambda
            )));
        }
        if !(self.akl_mu > 0.0 && self.akl_mu < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "AKL mu must lie in (0, 1), got {}",
                self.akl_mu
            )));
        }
        if !self.tau.is_finite() || self.tau <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "temperature must be positive and finite, got {}",
                self.tau
            )));
        }
        SoftRankConfig::new(self.softrank.epsilon)?;
        Ok(())
    }

    /// Every objective configuration the gradient checks sweep: each base
    /// divergence with and without ranking, the dynamic-allocation
    /// variants where legal, ranking-only, and Pearson-only.
    pub fn standard_battery() -> Vec<ObjectiveSpec> {
        let bases = [
            BaseDivergence::Kl,
            BaseDivergence::Rkl,
            BaseDivergence::Jsd,
            BaseDivergence::Tvd,
            BaseDivergence::Akl,
        ];
        let mut battery = Vec::new();
        for base in bases {
            for use_ranking in [false, true] {
                battery.push(Self::new(base, use_ranking).expect("valid battery config"));
            }
        }
        for base in [BaseDivergence::Kl, BaseDivergence::Rkl] {
            for use_ranking in [false, true] {
                let mut cfg = Self::new(base, use_ranking).expect("valid battery config");
                cfg.allocation = Allocation::Dynamic;
                battery.push(cfg);
            }
        }
        battery.push(Self::new(BaseDivergence::None, true).expect("valid battery config"));
        let mut pearson = Self::new(BaseDivergence::None, true).expect("valid battery config");
        pearson.rank_correlation = RankCorrelation::Pearson;
        battery.push(pearson);
        battery
    }

    /// Human-readable objective name in the style of the report tables,
    /// e.g. `KL`, `KL+R`, `Rank-15`, `KL+R(Dynamic)`.
    pub fn name(&self) -> String {
        let mut s = if self.base == BaseDivergence::None {
            format!("Rank-{}", self.rank_k)
        } else if self.use_ranking {
            format!("{}+R", self.base)
        } else {
            self.base.to_string()
        };
        if self.use_ranking && self.rank_correlation == RankCorrelation::Pearson {
            s.push_str("(Pearson)");
        }
        if self.allocation == Allocation::Dynamic {
            s.push_str("(Dynamic)");
        }
        s
    }
}

/// A loss value, its gradient with respect to the student logits, and the
/// named sub-terms that formed it.
#[derive(Debug, Clone)]
pub struct LossResult {
    pub value: f64,
    pub grad: Vec<f64>,
    pub parts: BTreeMap<String, f64>,
}

fn check_same_len(teacher: &ProbVector, student: &ProbVector) -> Result<()> {
    if teacher.len() != student.len() {
        return Err(Error::InvalidInput(format!(
            "vocabulary sizes differ: teacher {}, student {}",
            teacher.len(),
            student.len()
        )));
    }
    Ok(())
}

fn kl_sum(p: &[f64], q: &[f64], zeros: ZeroPolicy) -> Result<f64> {
    let mut acc = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi == 0.0 {
            continue; // 0 log 0 = 0
        }
        let q_eff = match zeros {
            ZeroPolicy::Clamp => qi.max(LOG_CLAMP_FLOOR),
            ZeroPolicy::Exact => {
                if qi == 0.0 {
                    return Err(Error::DivergenceInfinite(format!(
                        "support mismatch at index {i}: P = {pi}, Q = 0"
                    )));
                }
                qi
            }
        };
        acc += pi * (pi / q_eff).ln();
    }
    Ok(acc)
}

/// `D_KL(P || Q) = sum_i P(i) log(P(i) / Q(i))`.
pub fn kl_div(teacher: &ProbVector, student: &ProbVector, zeros: ZeroPolicy) -> Result<f64> {
    check_same_len(teacher, student)?;
    kl_sum(teacher.values(), student.values(), zeros)
}

/// `D_RKL(P || Q) = sum_i Q(i) log(Q(i) / P(i))`; the exact mirror of
/// [`kl_div`] with the roles swapped.
pub fn rkl_div(teacher: &ProbVector, student: &ProbVector, zeros: ZeroPolicy) -> Result<f64> {
    check_same_len(teacher, student)?;
    kl_sum(student.values(), teacher.values(), zeros)
}

/// Jensen-Shannon divergence; symmetric, bounded by `ln 2`.
pub fn jsd_div(teacher: &ProbVector, student: &ProbVector) -> Result<f64> {
    check_same_len(teacher, student)?;
    let mut acc = 0.0;
    for (&pi, &qi) in teacher.values().iter().zip(student.values()) {
        let mi = 0.5 * (pi + qi);
        if pi > 0.0 {
            acc += 0.5 * pi * (pi / mi).ln();
        }
        if qi > 0.0 {
            acc += 0.5 * qi * (qi / mi).ln();
        }
    }
    Ok(acc)
}

/// Total variation distance `0.5 * sum_i |P(i) - Q(i)|`.
pub fn tvd_div(teacher: &ProbVector, student: &ProbVector) -> Result<f64> {
    check_same_len(teacher, student)?;
    let acc: f64 = teacher
        .values()
        .iter()
        .zip(student.values())
        .map(|(p, q)| (p - q).abs())
        .sum();
    Ok(0.5 * acc)
}

/// Membership mask of the AKL head: the minimal prefix of
/// teacher-descending order whose cumulative teacher mass reaches `mu`
/// (the boundary index is part of the head).
fn akl_head(teacher: &ProbVector, mu: f64) -> Vec<bool> {
    let order = top_k_indices(teacher, teacher.len()).expect("full argsort");
    let mut in_head = vec![false; teacher.len()];
    let mut cum = 0.0;
    for &i in &order {
        in_head[i] = true;
        cum += teacher.values()[i];
        if cum >= mu {
            break;
        }
    }
    in_head
}

/// Adaptive KL: gap-weighted blend of KL and RKL. The head/tail split
/// comes from the teacher's cumulative mass at threshold `mu`; each
/// side's weight is its accumulated gap `|P(i) - Q(i)|`.
pub fn akl_div(
    teacher: &ProbVector,
    student: &ProbVector,
    mu: f64,
    zeros: ZeroPolicy,
) -> Result<f64> {
    check_same_len(teacher, student)?;
    if !(mu > 0.0 && mu < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "AKL mu must lie in (0, 1), got {mu}"
        )));
    }
    let in_head = akl_head(teacher, mu);
    let mut g_head = 0.0;
    let mut g_tail = 0.0;
    for (i, (&pi, &qi)) in teacher.values().iter().zip(student.values()).enumerate() {
        let gap = (pi - qi).abs();
        if in_head[i] {
            g_head += gap;
        } else {
            g_tail += gap;
        }
    }
    if g_head + g_tail < 1e-12 {
        return Ok(0.0);
    }
    let kl = kl_div(teacher, student, zeros)?;
    let rkl = rkl_div(teacher, student, zeros)?;
    Ok((g_head * kl + g_tail * rkl) / (g_head + g_tail))
}

/// Population Pearson correlation with a guarded denominator, plus the
/// derivative with respect to the second argument.
fn corr_and_grad_b(a: &[f64], b: &[f64]) -> (f64, Vec<f64>) {
    let m = a.len() as f64;
    let am: f64 = a.iter().sum::<f64>() / m;
    let bm: f64 = b.iter().sum::<f64>() / m;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - am) * (y - bm);
        var_a += (x - am) * (x - am);
        var_b += (y - bm) * (y - bm);
    }
    cov /= m;
    let sa = (var_a / m).sqrt();
    let sb = (var_b / m).sqrt();
    let denom = sa * sb + CORR_GUARD;
    let rho = cov / denom;

    let sb_safe = sb.max(CORR_GUARD);
    let grad = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let dcov = (x - am) / m;
            let dsb = (y - bm) / (m * sb_safe);
            (dcov * denom - cov * sa * dsb) / (denom * denom)
        })
        .collect();
    (rho, grad)
}

fn teacher_rank_values(union: &TopKUnion, cfg: &ObjectiveSpec) -> Result<Vec<f64>> {
    if cfg.teacher_hard_ranks {
        Ok(hard_ranks(&union.p_sub)?
            .into_iter()
            .map(|r| r as f64)
            .collect())
    } else {
        Ok(soft_rank(&union.p_sub, &cfg.softrank)?.values().to_vec())
    }
}

/// `1 - SRCC(p_sub, q_sub)` over the union, with soft ranks on the
/// student side (and by default on the teacher side too, keeping both
/// rank vectors on the same scale).
pub fn ranking_loss(union: &TopKUnion, cfg: &ObjectiveSpec) -> Result<f64> {
    if union.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "ranking loss needs a union of at least 2 indices, got {}",
            union.len()
        )));
    }
    let r_p = teacher_rank_values(union, cfg)?;
    let r_q = soft_rank(&union.q_sub, &cfg.softrank)?;
    let (rho, _) = corr_and_grad_b(&r_p, r_q.values());
    Ok(1.0 - rho)
}

/// `1 - Pearson(p_sub, q_sub)` on the raw probability values.
pub fn pearson_loss(union: &TopKUnion) -> Result<f64> {
    if union.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "pearson loss needs a union of at least 2 indices, got {}",
            union.len()
        )));
    }
    let (rho, _) = corr_and_grad_b(&union.p_sub, &union.q_sub);
    Ok(1.0 - rho)
}

/// `|p^k ∩ q^k| / k`, the overlap fraction of the two top-k sets.
pub fn dynamic_coefficient(teacher: &ProbVector, student: &ProbVector, k: usize) -> Result<f64> {
    check_same_len(teacher, student)?;
    let top_p = top_k_indices(teacher, k)?;
    let top_q = top_k_indices(student, k)?;
    let shared = top_p.iter().filter(|i| top_q.contains(i)).count();
    Ok(shared as f64 / k as f64)
}

/// Value and gradient (w.r.t. the student distribution Q) of a base
/// divergence, consistent with the clamped value computation.
fn base_value_and_grad(
    base: BaseDivergence,
    teacher: &ProbVector,
    student: &ProbVector,
    cfg: &ObjectiveSpec,
) -> Result<(f64, Vec<f64>)> {
    let p = teacher.values();
    let q = student.values();
    let n = p.len();
    match base {
        BaseDivergence::None => Ok((0.0, vec![0.0; n])),
        BaseDivergence::Kl => {
            let value = kl_div(teacher, student, cfg.zero_policy)?;
            let grad = p
                .iter()
                .zip(q)
                .map(|(&pi, &qi)| if qi > LOG_CLAMP_FLOOR { -pi / qi } else { 0.0 })
                .collect();
            Ok((value, grad))
        }
        BaseDivergence::Rkl => {
            let value = rkl_div(teacher, student, cfg.zero_policy)?;
            let grad = p
                .iter()
                .zip(q)
                .map(|(&pi, &qi)| {
                    if qi == 0.0 {
                        0.0
                    } else {
                        (qi / pi.max(LOG_CLAMP_FLOOR)).ln() + 1.0
                    }
                })
                .collect();
            Ok((value, grad))
        }
        BaseDivergence::Jsd => {
            let value = jsd_div(teacher, student)?;
            let grad = p
                .iter()
                .zip(q)
                .map(|(&pi, &qi)| {
                    if qi == 0.0 && pi == 0.0 {
                        0.0
                    } else {
                        let mi = 0.5 * (pi + qi);
                        0.5 * (qi.max(LOG_CLAMP_FLOOR) / mi).ln()
                    }
                })
                .collect();
            Ok((value, grad))
        }
        BaseDivergence::Tvd => {
            let value = tvd_div(teacher, student)?;
            let grad = p
                .iter()
                .zip(q)
                .map(|(&pi, &qi)| 0.5 * (qi - pi).signum() * f64::from(qi != pi))
                .collect();
            Ok((value, grad))
        }
        BaseDivergence::Akl => {
            let value = akl_div(teacher, student, cfg.akl_mu, cfg.zero_policy)?;
            let in_head = akl_head(teacher, cfg.akl_mu);
            let mut g_head = 0.0;
            let mut g_tail = 0.0;
            for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
                let gap = (pi - qi).abs();
                if in_head[i] {
                    g_head += gap;
                } else {
                    g_tail += gap;
                }
            }
            let total = g_head + g_tail;
            if total < 1e-12 {
                return Ok((0.0, vec![0.0; n]));
            }
            let kl = kl_div(teacher, student, cfg.zero_policy)?;
            let rkl = rkl_div(teacher, student, cfg.zero_policy)?;
            let grad = p
                .iter()
                .zip(q)
                .enumerate()
                .map(|(i, (&pi, &qi))| {
                    let sign = (qi - pi).signum() * f64::from(qi != pi);
                    let dkl = if qi > LOG_CLAMP_FLOOR { -pi / qi } else { 0.0 };
                    let drkl = if qi == 0.0 {
                        0.0
                    } else {
                        (qi / pi.max(LOG_CLAMP_FLOOR)).ln() + 1.0
                    };
                    let num = if in_head[i] {
                        sign * kl + g_head * dkl + g_tail * drkl
                    } else {
                        g_head * dkl + sign * rkl + g_tail * drkl
                    };
                    num / total - (g_head * kl + g_tail * rkl) * sign / (total * total)
                })
                .collect();
            Ok((value, grad))
        }
    }
}

/// Ranking-term value; the gradient w.r.t. the student distribution Q is
/// scaled by `-weight` (the loss is `1 - rho`) and scattered into
/// `grad_acc` at the union indices.
fn ranking_value_scatter_grad(
    union: &TopKUnion,
    cfg: &ObjectiveSpec,
    weight: f64,
    grad_acc: &mut [f64],
) -> Result<f64> {
    if union.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "ranking loss needs a union of at least 2 indices, got {}",
            union.len()
        )));
    }
    let on_ranks = matches!(cfg.rank_correlation, RankCorrelation::Srcc) || cfg.pearson_on_ranks;
    let (rho, grad_sub) = if on_ranks {
        let r_p = teacher_rank_values(union, cfg)?;
        let r_q = soft_rank(&union.q_sub, &cfg.softrank)?;
        let (rho, drho_dranks) = corr_and_grad_b(&r_p, r_q.values());
        let grad_sub = soft_rank_vjp(&r_q, &drho_dranks, &cfg.softrank)?;
        (rho, grad_sub)
    } else {
        let (rho, drho) = corr_and_grad_b(&union.p_sub, &union.q_sub);
        (rho, drho)
    };
    for (t, &i) in union.indices.iter().enumerate() {
        grad_acc[i] -= weight * grad_sub[t];
    }
    Ok(1.0 - rho)
}

/// Evaluates the configured objective on one position: softmaxes both
/// logit vectors at `cfg.tau`, combines the base and ranking terms, and
/// returns the value with its exact gradient w.r.t. the student logits.
pub fn total_loss(
    teacher_logits: &LogitVector,
    student_logits: &LogitVector,
    cfg: &ObjectiveSpec,
) -> Result<LossResult> {
    cfg.validate()?;
    if teacher_logits.len() != student_logits.len() {
        return Err(Error::InvalidInput(format!(
            "vocabulary sizes differ: teacher {}, student {}",
            teacher_logits.len(),
            student_logits.len()
        )));
    }
    let vocab = teacher_logits.len();
    let teacher = softmax_with_temperature(teacher_logits, cfg.tau)?;
    let student = softmax_with_temperature(student_logits, cfg.tau)?;

    let mut parts = BTreeMap::new();
    let mut grad_q = vec![0.0; vocab];
    let mut value = 0.0;

    let coeff = match cfg.allocation {
        Allocation::Fixed => 1.0,
        Allocation::Dynamic => {
            let c = dynamic_coefficient(&teacher, &student, cfg.rank_k)?;
            parts.insert("dynamic_coefficient".into(), c);
            c
        }
    };

    if cfg.base != BaseDivergence::None {
        let (base_val, base_grad) = base_value_and_grad(cfg.base, &teacher, &student, cfg)?;
        parts.insert("base".into(), base_val);
        value += coeff * base_val;
        for (g, b) in grad_q.iter_mut().zip(&base_grad) {
            *g += coeff * b;
        }
    }

    if cfg.use_ranking {
        let union = union_top_k(&teacher, &student, cfg.rank_k.min(vocab))?;
        let rank_val = ranking_value_scatter_grad(&union, cfg, cfg.lambda, &mut grad_q)?;
        parts.insert("ranking".into(), rank_val);
        value += cfg.lambda * rank_val;
    }

    // softmax backward: dL/dz_j = (1/tau) Q_j (g_j - <g, Q>)
    let q = student.values();
    let dot: f64 = grad_q.iter().zip(q).map(|(g, qi)| g * qi).sum();
    let grad = grad_q
        .iter()
        .zip(q)
        .map(|(g, qi)| qi * (g - dot) / cfg.tau)
        .collect();

    Ok(LossResult { value, grad, parts })
}
