//! Finite-difference verification harness: compares every objective's
//! analytic gradient against central differences on random logit pairs,
//! and checks the soft-rank backward pass the same way. Backs the
//! `gradcheck` CLI command.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::objectives::{total_loss, ObjectiveSpec};
use crate::prob::LogitVector;
use crate::softrank::{soft_rank, soft_rank_vjp, SoftRankConfig};

/// Step size for central differences.
pub const FD_STEP: f64 = 1e-5;
/// Pass threshold on the relative infinity-norm error.
pub const FD_TOLERANCE: f64 = 1e-4;

/// One row of the gradient-check table.
#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub trials: usize,
    pub dim: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }
}

fn random_logits(rng: &mut ChaCha8Rng, dim: usize) -> LogitVector {
    LogitVector::new((0..dim).map(|_| rng.random_range(-3.0..3.0)).collect())
        .expect("finite logits")
}

fn fd_gradient(
    teacher: &LogitVector,
    student: &LogitVector,
    cfg: &ObjectiveSpec,
) -> Result<Vec<f64>> {
    let z = student.values();
    let mut grad = Vec::with_capacity(z.len());
    for j in 0..z.len() {
        let mut plus = z.to_vec();
        plus[j] += FD_STEP;
        let mut minus = z.to_vec();
        minus[j] -= FD_STEP;
        let fp = total_loss(teacher, &LogitVector::new(plus)?, cfg)?.value;
        let fm = total_loss(teacher, &LogitVector::new(minus)?, cfg)?.value;
        grad.push((fp - fm) / (2.0 * FD_STEP));
    }
    Ok(grad)
}

fn rel_inf_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric
        .iter()
        .fold(0.0_f64, |a, &b| a.max(b.abs()))
        .max(1e-8);
    analytic
        .iter()
        .zip(numeric)
        .fold(0.0_f64, |a, (x, y)| a.max((x - y).abs()))
        / scale
}

/// Checks the soft-rank VJP against finite-difference directional
/// derivatives on random inputs.
fn check_softrank(trials: usize, dim: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let cfg = SoftRankConfig::default();
    let m = dim.clamp(2, 24);
    let mut max_err = 0.0_f64;
    for _ in 0..trials {
        let x: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let u: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let state = soft_rank(&x, &cfg)?;
        let vjp = soft_rank_vjp(&state, &u, &cfg)?;
        let lhs: f64 = vjp.iter().zip(&v).map(|(a, b)| a * b).sum();

        let h = 1e-6;
        let plus: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + h * b).collect();
        let minus: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a - h * b).collect();
        let rp = soft_rank(&plus, &cfg)?;
        let rm = soft_rank(&minus, &cfg)?;
        let rhs: f64 = rp
            .values()
            .iter()
            .zip(rm.values())
            .zip(&u)
            .map(|((p, q), ui)| ui * (p - q) / (2.0 * h))
            .sum();
        max_err = max_err.max((lhs - rhs).abs() / rhs.abs().max(1e-2));
    }
    Ok(max_err)
}

/// Runs the full battery. Deterministic for a fixed seed.
pub fn run_gradcheck(trials: usize, dim: usize, seed: u64) -> Result<GradCheckReport> {
    if trials == 0 {
        return Err(Error::InvalidParameter(
            "at least one trial is required".into(),
        ));
    }
    if dim < 2 {
        return Err(Error::InvalidParameter(format!(
            "dimension must be >= 2, got {dim}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for cfg in ObjectiveSpec::standard_battery() {
        let mut max_err = 0.0_f64;
        for _ in 0..trials {
            let teacher = random_logits(&mut rng, dim);
            let student = random_logits(&mut rng, dim);
            let res = total_loss(&teacher, &student, &cfg)?;
            let numeric = fd_gradient(&teacher, &student, &cfg)?;
            max_err = max_err.max(rel_inf_error(&res.grad, &numeric));
        }
        entries.push(GradCheckEntry {
            name: cfg.name(),
            max_rel_error: max_err,
            pass: max_err < FD_TOLERANCE,
        });
    }
    let softrank_err = check_softrank(trials, dim, &mut rng)?;
    entries.push(GradCheckEntry {
        name: "soft-rank vjp".into(),
        max_rel_error: softrank_err,
        pass: softrank_err < FD_TOLERANCE,
    });
    Ok(GradCheckReport {
        entries,
        trials,
        dim,
        tolerance: FD_TOLERANCE,
    })
}
