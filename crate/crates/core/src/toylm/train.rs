//! Distillation and pretraining loops over the toy models.
//!
//! Training only ever reads the data through contexts: the distillation
//! signal is the teacher's predicted distribution, never the realized
//! next token (which appears in evaluation perplexity only). Iteration
//! order is fixed and batches come from a seeded generator, so a run is
//! a pure function of (config, data, seed).

use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::{ConsistencyAccumulator, ConsistencyReport, DEFAULT_CR_KS, DEFAULT_MOR_KS};
use crate::objectives::total_loss;
use crate::prob::softmax_with_temperature;
use crate::toylm::model::{LogitTable, TinyLm};
use crate::toylm::optim::{adamw_step, AdamWState, TrainConfig};

/// A byte-token stream with a fixed context window.
#[derive(Debug, Clone)]
pub struct TokenDataset {
    tokens: Vec<u8>,
    context_length: usize,
}

impl TokenDataset {
    pub fn new(tokens: Vec<u8>, context_length: usize) -> Result<Self> {
        if context_length == 0 {
            return Err(Error::InvalidParameter(
                "context length must be >= 1".into(),
            ));
        }
        if tokens.len() <= context_length {
            return Err(Error::InvalidInput(format!(
                "dataset holds {} tokens, need more than the context length {}",
                tokens.len(),
                context_length
            )));
        }
        Ok(Self {
            tokens,
            context_length,
        })
    }

    pub fn context_length(&self) -> usize {
        self.context_length
    }

    /// Number of (context, next token) positions.
    pub fn num_positions(&self) -> usize {
        self.tokens.len() - self.context_length
    }

    pub fn fill_context(&self, position: usize, buf: &mut Vec<usize>) {
        buf.clear();
        buf.extend(
            self.tokens[position..position + self.context_length]
                .iter()
                .map(|&b| b as usize),
        );
    }

    /// The realized next token after the context at `position`.
    pub fn target(&self, position: usize) -> usize {
        self.tokens[position + self.context_length] as usize
    }

    pub fn tokens(&self) -> &[u8] {
        &self.tokens
    }
}

/// What to evaluate during a distillation run, and how often.
#[derive(Debug, Clone)]
pub struct EvalConfig {
    /// Evaluate every this many steps; 0 means start and end only.
    pub interval: u64,
    pub cr_ks: Vec<usize>,
    pub mor_ks: Vec<usize>,
    /// Cap on evaluation positions; positions are stride-sampled so the
    /// same set is used every time.
    pub max_eval_positions: usize,
    /// Final fraction of the position range reserved as a held-out
    /// split; 0 disables the split.
    pub held_out_fraction: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            interval: 0,
            cr_ks: DEFAULT_CR_KS.to_vec(),
            mor_ks: DEFAULT_MOR_KS.to_vec(),
            max_eval_positions: 2000,
            held_out_fraction: 0.0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.held_out_fraction) {
            return Err(Error::InvalidParameter(format!(
                "held-out fraction must lie in [0, 1), got {}",
                self.held_out_fraction
            )));
        }
        if self.max_eval_positions == 0 {
            return Err(Error::InvalidParameter(
                "at least one evaluation position is required".into(),
            ));
        }
        ConsistencyAccumulator::new(&self.cr_ks, &self.mor_ks).map(|_| ())
    }
}

/// Evaluation of the held-out split.
#[derive(Debug, Clone)]
pub struct HeldOutEval {
    pub loss: f64,
    pub perplexity: f64,
    pub report: ConsistencyReport,
}

/// One evaluation snapshot during a run.
#[derive(Debug, Clone)]
pub struct EvalRecord {
    pub step: u64,
    /// "Start" for the step-0 row, the objective name afterwards.
    pub label: String,
    /// Mean objective value over the training-side evaluation positions.
    pub loss: f64,
    /// Student perplexity on the realized next tokens of those positions.
    pub perplexity: f64,
    pub report: ConsistencyReport,
    pub held_out: Option<HeldOutEval>,
}

/// A finished distillation run.
#[derive(Debug, Clone)]
pub struct DistillRun {
    pub history: Vec<EvalRecord>,
    /// Mean batch loss at every training step.
    pub step_losses: Vec<f64>,
    /// Wall time spent in training steps, excluding evaluation.
    pub train_seconds: f64,
    pub steps: u64,
}

/// Deterministic evaluation subset: up to `cap` positions spread evenly
/// over `[start, end)`.
pub fn stride_positions(start: usize, end: usize, cap: usize) -> Vec<usize> {
    let n = end.saturating_sub(start);
    if n == 0 {
        return Vec::new();
    }
    let take = n.min(cap);
    (0..take).map(|i| start + i * n / take).collect()
}

/// First position of the held-out split; positions below it train.
pub fn train_split_end(n_positions: usize, held_out_fraction: f64) -> usize {
    ((n_positions as f64) * (1.0 - held_out_fraction)).floor() as usize
}

fn log_softmax_at(logits: &[f64], index: usize) -> f64 {
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits[index] - lse
}

fn evaluate_split(
    teacher: &TinyLm,
    student: &TinyLm,
    data: &TokenDataset,
    positions: &[usize],
    cfg: &TrainConfig,
    eval: &EvalConfig,
) -> Result<(f64, f64, ConsistencyReport)> {
    let mut acc = ConsistencyAccumulator::new(&eval.cr_ks, &eval.mor_ks)?;
    let mut loss_sum = 0.0;
    let mut log_probs = Vec::with_capacity(positions.len());
    let mut ctx = Vec::with_capacity(data.context_length());
    for &pos in positions {
        data.fill_context(pos, &mut ctx);
        let t_logits = teacher.forward(&ctx)?;
        let s_logits = student.forward(&ctx)?;
        loss_sum += total_loss(&t_logits, &s_logits, &cfg.objective)?.value;
        let p = softmax_with_temperature(&t_logits, 1.0)?;
        let q = softmax_with_temperature(&s_logits, 1.0)?;
        acc.push(&p, &q)?;
        log_probs.push(log_softmax_at(s_logits.values(), data.target(pos)));
    }
    let loss = loss_sum / positions.len() as f64;
    let ppl = crate::metrics::perplexity(&log_probs)?;
    Ok((loss, ppl, acc.report()?))
}

#[allow(clippy::too_many_arguments)]
fn make_record(
    step: u64,
    label: String,
    teacher: &TinyLm,
    student: &TinyLm,
    data: &TokenDataset,
    train_evals: &[usize],
    held_evals: &[usize],
    cfg: &TrainConfig,
    eval: &EvalConfig,
) -> Result<EvalRecord> {
    let (loss, perplexity, report) =
        evaluate_split(teacher, student, data, train_evals, cfg, eval)?;
    let held_out = if held_evals.is_empty() {
        None
    } else {
        let (loss, perplexity, report) =
            evaluate_split(teacher, student, data, held_evals, cfg, eval)?;
        Some(HeldOutEval {
            loss,
            perplexity,
            report,
        })
    };
    Ok(EvalRecord {
        step,
        label,
        loss,
        perplexity,
        report,
        held_out,
    })
}

/// Distills `student` toward `teacher` on sampled positions of `data`,
/// evaluating CR/MOR/perplexity at the configured cadence. Pure soft
/// targets: the realized next tokens never enter the update.
pub fn distill(
    teacher: &TinyLm,
    student: &mut TinyLm,
    data: &TokenDataset,
    cfg: &TrainConfig,
    eval: &EvalConfig,
) -> Result<DistillRun> {
    cfg.validate()?;
    eval.validate()?;
    if teacher.dims().vocab_size != student.dims().vocab_size {
        return Err(Error::InvalidInput(format!(
            "teacher and student vocabularies differ: {} vs {}",
            teacher.dims().vocab_size,
            student.dims().vocab_size
        )));
    }
    if teacher.dims().context_length != student.dims().context_length
        || teacher.dims().context_length != data.context_length()
    {
        return Err(Error::InvalidInput(
            "teacher, student, and dataset must share one context length".into(),
        ));
    }

    let n_pos = data.num_positions();
    let train_end = train_split_end(n_pos, eval.held_out_fraction);
    if train_end == 0 {
        return Err(Error::InvalidInput(
            "held-out split leaves no training data".into(),
        ));
    }
    let train_evals = stride_positions(0, train_end, eval.max_eval_positions);
    let held_evals = stride_positions(train_end, n_pos, eval.max_eval_positions);

    let name = cfg.objective.name();
    let mut history = vec![make_record(
        0,
        "Start".into(),
        teacher,
        student,
        data,
        &train_evals,
        &held_evals,
        cfg,
        eval,
    )?];

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamWState::new(student.n_params());
    let mut grads = vec![0.0; student.n_params()];
    let mut ctx = Vec::with_capacity(data.context_length());
    let mut step_losses = Vec::with_capacity(cfg.steps as usize);
    let mut train_seconds = 0.0;
    let inv_batch = 1.0 / cfg.batch_size as f64;

    for step in 1..=cfg.steps {
        let tick = Instant::now();
        grads.fill(0.0);
        let mut batch_loss = 0.0;
        for _ in 0..cfg.batch_size {
            let pos = rng.random_range(0..train_end);
            data.fill_context(pos, &mut ctx);
            let t_logits = teacher.forward(&ctx)?;
            let (s_logits, cache) = student.forward_cached(&ctx)?;
            let res = total_loss(&t_logits, &s_logits, &cfg.objective)?;
            batch_loss += res.value * inv_batch;
            let upstream: Vec<f64> = res.grad.iter().map(|g| g * inv_batch).collect();
            student.backward_accumulate(&ctx, &cache, &upstream, &mut grads)?;
        }
        if !batch_loss.is_finite() {
            return Err(Error::TrainingDiverged {
                step,
                reason: format!("non-finite batch loss {batch_loss}"),
            });
        }
        adamw_step(student.params_mut(), &grads, &mut state, cfg).map_err(|e| match e {
            Error::TrainingDiverged { reason, .. } => Error::TrainingDiverged { step, reason },
            other => other,
        })?;
        step_losses.push(batch_loss);
        train_seconds += tick.elapsed().as_secs_f64();

        let due = eval.interval > 0 && step % eval.interval == 0;
        if step == cfg.steps || due {
            history.push(make_record(
                step,
                name.clone(),
                teacher,
                student,
                data,
                &train_evals,
                &held_evals,
                cfg,
                eval,
            )?);
        }
    }

    Ok(DistillRun {
        history,
        step_losses,
        train_seconds,
        steps: cfg.steps,
    })
}

/// Pretrains a model on `data` with cross-entropy against the realized
/// next token. Returns the per-step mean loss curve.
pub fn train_teacher(
    model: &mut TinyLm,
    data: &TokenDataset,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if model.dims().context_length != data.context_length() {
        return Err(Error::InvalidInput(
            "model and dataset context lengths differ".into(),
        ));
    }
    let n_pos = data.num_positions();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamWState::new(model.n_params());
    let mut grads = vec![0.0; model.n_params()];
    let mut ctx = Vec::with_capacity(data.context_length());
    let mut losses = Vec::with_capacity(cfg.steps as usize);
    let inv_batch = 1.0 / cfg.batch_size as f64;

    for step in 1..=cfg.steps {
        grads.fill(0.0);
        let mut batch_loss = 0.0;
        for _ in 0..cfg.batch_size {
            let pos = rng.random_range(0..n_pos);
            data.fill_context(pos, &mut ctx);
            let target = data.target(pos);
            let (logits, cache) = model.forward_cached(&ctx)?;
            let probs = softmax_with_temperature(&logits, 1.0)?;
            batch_loss -= log_softmax_at(logits.values(), target) * inv_batch;
            // d(-log q_t)/dz = q - onehot(t)
            let mut upstream: Vec<f64> = probs.values().iter().map(|&q| q * inv_batch).collect();
            upstream[target] -= inv_batch;
            model.backward_accumulate(&ctx, &cache, &upstream, &mut grads)?;
        }
        if !batch_loss.is_finite() {
            return Err(Error::TrainingDiverged {
                step,
                reason: format!("non-finite batch loss {batch_loss}"),
            });
        }
        adamw_step(model.params_mut(), &grads, &mut state, cfg).map_err(|e| match e {
            Error::TrainingDiverged { reason, .. } => Error::TrainingDiverged { step, reason },
            other => other,
        })?;
        losses.push(batch_loss);
    }
    Ok(losses)
}

/// History of a table-vs-table distillation run.
#[derive(Debug, Clone)]
pub struct TableDistillRun {
    /// (step, mean loss, report) at every evaluation.
    pub history: Vec<(u64, f64, ConsistencyReport)>,
    pub steps_run: u64,
}

/// Full-batch distillation of a [`LogitTable`] student toward a fixed
/// teacher table: the cleanest isolation of the loss dynamics, with no
/// representation bottleneck. Stops early when `stop` returns true on a
/// fresh evaluation.
pub fn distill_table(
    teacher: &LogitTable,
    student: &mut LogitTable,
    cfg: &TrainConfig,
    eval_interval: u64,
    stop: Option<&dyn Fn(&ConsistencyReport) -> bool>,
) -> Result<TableDistillRun> {
    cfg.validate()?;
    if teacher.n_contexts() != student.n_contexts() || teacher.vocab_size() != student.vocab_size()
    {
        return Err(Error::InvalidInput(format!(
            "table shapes differ: {}x{} vs {}x{}",
            teacher.n_contexts(),
            teacher.vocab_size(),
            student.n_contexts(),
            student.vocab_size()
        )));
    }
    if eval_interval == 0 {
        return Err(Error::InvalidParameter(
            "evaluation interval must be >= 1".into(),
        ));
    }
    let n = teacher.n_contexts();
    let v = teacher.vocab_size();
    let inv_n = 1.0 / n as f64;

    let evaluate = |student: &LogitTable| -> Result<ConsistencyReport> {
        let mut acc = ConsistencyAccumulator::with_default_ranges();
        for row in 0..n {
            acc.push(&teacher.row_probs(row)?, &student.row_probs(row)?)?;
        }
        acc.report()
    };

    let mut state = AdamWState::new(n * v);
    let mut grads = vec![0.0; n * v];
    let mut history = Vec::new();
    let mut steps_run = 0;

    for step in 1..=cfg.steps {
        grads.fill(0.0);
        let mut mean_loss = 0.0;
        for row in 0..n {
            let t_logits = teacher.row_logits(row)?;
            let s_logits = student.row_logits(row)?;
            let res = total_loss(&t_logits, &s_logits, &cfg.objective)?;
            mean_loss += res.value * inv_n;
            for (slot, g) in res.grad.iter().enumerate() {
                grads[row * v + slot] = g * inv_n;
            }
        }
        if !mean_loss.is_finite() {
            return Err(Error::TrainingDiverged {
                step,
                reason: format!("non-finite loss {mean_loss}"),
            });
        }
        adamw_step(student.logits_mut(), &grads, &mut state, cfg).map_err(|e| match e {
            Error::TrainingDiverged { reason, .. } => Error::TrainingDiverged { step, reason },
            other => other,
        })?;
        steps_run = step;

        if step % eval_interval == 0 || step == cfg.steps {
            let report = evaluate(student)?;
            let done = stop.map(|f| f(&report)).unwrap_or(false);
            history.push((step, mean_loss, report));
            if done {
                break;
            }
        }
    }
    Ok(TableDistillRun { history, steps_run })
}
