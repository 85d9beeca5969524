//! AdamW with decoupled weight decay and global-norm gradient clipping.

use crate::error::{Error, Result};
use crate::objectives::ObjectiveSpec;

/// Training hyperparameters.
///
/// `learning_rate` defaults to 1e-3, sized for the toy models here; the
/// larger-scale runs this tooling mirrors would use 2e-5.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub grad_clip_norm: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
    pub objective: ObjectiveSpec,
}

impl TrainConfig {
    pub fn new(objective: ObjectiveSpec) -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            grad_clip_norm: 1.0,
            batch_size: 32,
            steps: 1000,
            seed: 72,
            objective,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidParameter(format!(
                "betas must lie in [0, 1), got ({}, {})",
                self.beta1, self.beta2
            )));
        }
        if !self.grad_clip_norm.is_finite() || self.grad_clip_norm <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "gradient clip norm must be positive, got {}",
                self.grad_clip_norm
            )));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch size must be >= 1".into()));
        }
        self.objective.validate()
    }
}

/// First/second moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamWState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamWState {
    pub fn new(n_params: usize) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One AdamW update: clip the gradient to `cfg.grad_clip_norm` by global
/// norm, update biased moments, then apply the bias-corrected step and
/// decoupled weight decay.
pub fn adamw_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamWState,
    cfg: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::InvalidInput(format!(
            "shape mismatch: {} params, {} grads, {} state entries",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    let norm_sq: f64 = grads.iter().map(|g| g * g).sum();
    if !norm_sq.is_finite() {
        return Err(Error::TrainingDiverged {
            step: state.step,
            reason: "non-finite gradient".into(),
        });
    }
    let norm = norm_sq.sqrt();
    let clip_scale = if norm > cfg.grad_clip_norm {
        cfg.grad_clip_norm / norm
    } else {
        1.0
    };

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i] * clip_scale;
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -=
            cfg.learning_rate * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * params[i]);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{BaseDivergence, ObjectiveSpec};

    fn cfg() -> TrainConfig {
        TrainConfig::new(ObjectiveSpec::new(BaseDivergence::Kl, false).unwrap())
    }

    #[test]
    fn zero_grads_without_decay_leave_params_unchanged() {
        let mut c = cfg();
        c.weight_decay = 0.0;
        let mut params = vec![0.5, -0.25, 1.5];
        let before = params.clone();
        let mut state = AdamWState::new(3);
        adamw_step(&mut params, &[0.0; 3], &mut state, &c).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn clipping_scales_the_effective_gradient() {
        // grads with global norm 2, clip 1 -> halved before the update
        let mut c = cfg();
        c.weight_decay = 0.0;
        c.grad_clip_norm = 1.0;

        let grads = vec![
            2.0 / 3.0_f64.sqrt(),
            2.0 / 3.0_f64.sqrt(),
            2.0 / 3.0_f64.sqrt(),
        ];
        let norm: f64 = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!((norm - 2.0).abs() < 1e-12);

        let mut clipped_params = vec![0.0; 3];
        let mut clipped_state = AdamWState::new(3);
        adamw_step(&mut clipped_params, &grads, &mut clipped_state, &c).unwrap();

        let halved: Vec<f64> = grads.iter().map(|g| g / 2.0).collect();
        let mut c_wide = c.clone();
        c_wide.grad_clip_norm = 10.0;
        let mut manual_params = vec![0.0; 3];
        let mut manual_state = AdamWState::new(3);
        adamw_step(&mut manual_params, &halved, &mut manual_state, &c_wide).unwrap();

        assert_eq!(clipped_params, manual_params);
    }

    #[test]
    fn post_clip_norm_never_exceeds_threshold() {
        let c = cfg();
        let grads: Vec<f64> = (0..10).map(|i| (i as f64) - 4.5).collect();
        let norm: f64 = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        let scale = if norm > c.grad_clip_norm {
            c.grad_clip_norm / norm
        } else {
            1.0
        };
        let clipped: f64 = grads
            .iter()
            .map(|g| (g * scale).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(clipped <= c.grad_clip_norm + 1e-9);
    }

    #[test]
    fn three_step_trace_matches_closed_form() {
        // single scalar parameter, closed-form moment recomputation
        let mut c = cfg();
        c.learning_rate = 0.1;
        c.weight_decay = 0.01;
        c.grad_clip_norm = 100.0;
        let gs = [0.3, -0.2, 0.7];

        let mut param = vec![1.0];
        let mut state = AdamWState::new(1);
        let mut expected = 1.0;
        for (step, &g) in gs.iter().enumerate() {
            adamw_step(&mut param, &[g], &mut state, &c).unwrap();

            let t = step as i32 + 1;
            // m_t = (1 - b1) * sum_i b1^(t-i) g_i, same for v with g^2
            let m: f64 = (0..=step)
                .map(|i| (1.0 - c.beta1) * c.beta1.powi((step - i) as i32) * gs[i])
                .sum();
            let v: f64 = (0..=step)
                .map(|i| (1.0 - c.beta2) * c.beta2.powi((step - i) as i32) * gs[i] * gs[i])
                .sum();
            let m_hat = m / (1.0 - c.beta1.powi(t));
            let v_hat = v / (1.0 - c.beta2.powi(t));
            expected -=
                c.learning_rate * (m_hat / (v_hat.sqrt() + c.eps) + c.weight_decay * expected);
            assert!(
                (param[0] - expected).abs() < 1e-12,
                "step {t}: {} vs {expected}",
                param[0]
            );
        }
    }

    #[test]
    fn non_finite_grads_report_divergence() {
        let c = cfg();
        let mut params = vec![0.0];
        let mut state = AdamWState::new(1);
        let err = adamw_step(&mut params, &[f64::NAN], &mut state, &c).unwrap_err();
        assert!(matches!(err, Error::TrainingDiverged { .. }));
    }

    #[test]
    fn config_validation() {
        let mut c = cfg();
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.grad_clip_norm = -1.0;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.batch_size = 0;
        assert!(c.validate().is_err());
        assert!(cfg().validate().is_ok());
    }
}
