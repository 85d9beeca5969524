//! Experiment configuration: a flat `key = value` text file.
//!
//! Lines are `key = value`, `#` starts a comment, blank lines are
//! skipped. Unknown keys are errors rather than warnings so a typo in a
//! sweep cannot silently fall back to a default.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rankdistill::error::{Error, Result};
use rankdistill::objectives::{
    Allocation, BaseDivergence, ObjectiveSpec, RankCorrelation, ZeroPolicy,
};
use rankdistill::softrank::SoftRankConfig;
use rankdistill::toylm::{EvalConfig, TinyLmDims, TrainConfig};

/// Everything a `distill` or `train-teacher` run needs.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub corpus_path: PathBuf,
    /// Tokenization mode; only byte-level (V = 256) is supported.
    pub vocab: String,
    pub context_length: usize,
    pub teacher_embed_dim: usize,
    pub teacher_hidden_dim: usize,
    pub student_embed_dim: usize,
    pub student_hidden_dim: usize,
    pub teacher_checkpoint: PathBuf,
    pub student_checkpoint: Option<PathBuf>,

    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub grad_clip_norm: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,

    pub objective: String,
    pub use_ranking: bool,
    pub rank_correlation: String,
    pub rank_k: Option<usize>,
    pub lambda: f64,
    pub allocation: String,
    pub akl_mu: f64,
    pub tau: f64,
    pub softrank_epsilon: f64,
    pub teacher_hard_ranks: bool,
    pub pearson_on_ranks: bool,
    pub exact_zeros: bool,

    pub cr_ks: Vec<usize>,
    pub mor_ks: Vec<usize>,
    pub eval_interval: u64,
    pub max_eval_positions: usize,
    pub held_out_fraction: f64,

    pub output_dir: PathBuf,
    /// Write teacher/student distribution dumps of the evaluation
    /// positions at the end of a distillation run.
    pub dump_probs: bool,
    /// 0 writes dense dumps; a positive K writes sparse top-K dumps.
    pub dump_top_k: u32,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            corpus_path: PathBuf::from("corpus.txt"),
            vocab: "byte".into(),
            context_length: 4,
            teacher_embed_dim: 64,
            teacher_hidden_dim: 256,
            student_embed_dim: 16,
            student_hidden_dim: 64,
            teacher_checkpoint: PathBuf::from("teacher.tlm"),
            student_checkpoint: None,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.01,
            grad_clip_norm: 1.0,
            batch_size: 32,
            steps: 5000,
            seed: 72,
            objective: "KL".into(),
            use_ranking: false,
            rank_correlation: "srcc".into(),
            rank_k: None,
            lambda: 2.0,
            allocation: "fixed".into(),
            akl_mu: 0.5,
            tau: 1.0,
            softrank_epsilon: 0.1,
            teacher_hard_ranks: false,
            pearson_on_ranks: false,
            exact_zeros: false,
            cr_ks: vec![1, 2, 3, 4, 5],
            mor_ks: vec![3, 5, 10, 20],
            eval_interval: 500,
            max_eval_positions: 2000,
            held_out_fraction: 0.1,
            output_dir: PathBuf::from("out"),
            dump_probs: false,
            dump_top_k: 32,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("cannot parse `{value}` for key `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(Error::InvalidParameter(format!(
            "cannot parse `{other}` as a boolean for key `{key}`"
        ))),
    }
}

fn parse_k_list(key: &str, value: &str) -> Result<Vec<usize>> {
    let ks: Vec<usize> = value
        .split(',')
        .map(|s| parse_value(key, s.trim()))
        .collect::<Result<_>>()?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidParameter(format!(
            "key `{key}` needs a non-empty list of positive integers"
        )));
    }
    Ok(ks)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::InvalidParameter(format!(
                    "line {}: expected `key = value`, got `{raw}`",
                    line_no + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            match key {
                "corpus_path" => cfg.corpus_path = PathBuf::from(value),
                "vocab" => cfg.vocab = value.to_string(),
                "context_length" => cfg.context_length = parse_value(key, value)?,
                "teacher_embed_dim" => cfg.teacher_embed_dim = parse_value(key, value)?,
                "teacher_hidden_dim" => cfg.teacher_hidden_dim = parse_value(key, value)?,
                "student_embed_dim" => cfg.student_embed_dim = parse_value(key, value)?,
                "student_hidden_dim" => cfg.student_hidden_dim = parse_value(key, value)?,
                "teacher_checkpoint" => cfg.teacher_checkpoint = PathBuf::from(value),
                "student_checkpoint" => cfg.student_checkpoint = Some(PathBuf::from(value)),
                "learning_rate" => cfg.learning_rate = parse_value(key, value)?,
                "beta1" => cfg.beta1 = parse_value(key, value)?,
                "beta2" => cfg.beta2 = parse_value(key, value)?,
                "weight_decay" => cfg.weight_decay = parse_value(key, value)?,
                "grad_clip_norm" => cfg.grad_clip_norm = parse_value(key, value)?,
                "batch_size" => cfg.batch_size = parse_value(key, value)?,
                "steps" => cfg.steps = parse_value(key, value)?,
                "seed" => cfg.seed = parse_value(key, value)?,
                "objective" => cfg.objective = value.to_string(),
                "use_ranking" => cfg.use_ranking = parse_bool(key, value)?,
                "rank_correlation" => cfg.rank_correlation = value.to_string(),
                "rank_k" => cfg.rank_k = Some(parse_value(key, value)?),
                "lambda" => cfg.lambda = parse_value(key, value)?,
                "allocation" => cfg.allocation = value.to_string(),
                "akl_mu" => cfg.akl_mu = parse_value(key, value)?,
                "tau" => cfg.tau = parse_value(key, value)?,
                "softrank_epsilon" => cfg.softrank_epsilon = parse_value(key, value)?,
                "teacher_hard_ranks" => cfg.teacher_hard_ranks = parse_bool(key, value)?,
                "pearson_on_ranks" => cfg.pearson_on_ranks = parse_bool(key, value)?,
                "exact_zeros" => cfg.exact_zeros = parse_bool(key, value)?,
                "cr_ks" => cfg.cr_ks = parse_k_list(key, value)?,
                "mor_ks" => cfg.mor_ks = parse_k_list(key, value)?,
                "eval_interval" => cfg.eval_interval = parse_value(key, value)?,
                "max_eval_positions" => cfg.max_eval_positions = parse_value(key, value)?,
                "held_out_fraction" => cfg.held_out_fraction = parse_value(key, value)?,
                "output_dir" => cfg.output_dir = PathBuf::from(value),
                "dump_probs" => cfg.dump_probs = parse_bool(key, value)?,
                "dump_top_k" => cfg.dump_top_k = parse_value(key, value)?,
                unknown => {
                    return Err(Error::InvalidParameter(format!(
                        "line {}: unknown key `{unknown}`",
                        line_no + 1
                    )));
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses the file and checks that referenced input paths exist.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg = Self::parse(&text)?;
        if !cfg.corpus_path.exists() {
            return Err(Error::InvalidParameter(format!(
                "corpus path {} does not exist",
                cfg.corpus_path.display()
            )));
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab != "byte" {
            return Err(Error::InvalidParameter(format!(
                "unsupported vocab mode `{}`; only `byte` is available",
                self.vocab
            )));
        }
        self.objective_spec()?;
        self.train_config()?.validate()?;
        self.eval_config().validate()?;
        TinyLmDims {
            vocab_size: 256,
            context_length: self.context_length,
            embed_dim: self.teacher_embed_dim,
            hidden_dim: self.teacher_hidden_dim,
        }
        .validate()?;
        TinyLmDims {
            vocab_size: 256,
            context_length: self.context_length,
            embed_dim: self.student_embed_dim,
            hidden_dim: self.student_hidden_dim,
        }
        .validate()?;
        Ok(())
    }

    pub fn teacher_dims(&self) -> TinyLmDims {
        TinyLmDims {
            vocab_size: 256,
            context_length: self.context_length,
            embed_dim: self.teacher_embed_dim,
            hidden_dim: self.teacher_hidden_dim,
        }
    }

    pub fn student_dims(&self) -> TinyLmDims {
        TinyLmDims {
            vocab_size: 256,
            context_length: self.context_length,
            embed_dim: self.student_embed_dim,
            hidden_dim: self.student_hidden_dim,
        }
    }

    pub fn objective_spec(&self) -> Result<ObjectiveSpec> {
        let base = match self.objective.to_ascii_uppercase().as_str() {
            "KL" => BaseDivergence::Kl,
            "RKL" => BaseDivergence::Rkl,
            "JSD" => BaseDivergence::Jsd,
            "TVD" => BaseDivergence::Tvd,
            "AKL" => BaseDivergence::Akl,
            "NONE" => BaseDivergence::None,
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown objective `{other}` (KL, RKL, JSD, TVD, AKL, none)"
                )))
            }
        };
        let mut spec = ObjectiveSpec::new(base, self.use_ranking)?;
        spec.rank_correlation = match self.rank_correlation.to_ascii_lowercase().as_str() {
            "srcc" => RankCorrelation::Srcc,
            "pearson" => RankCorrelation::Pearson,
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown rank correlation `{other}` (srcc, pearson)"
                )))
            }
        };
        if let Some(k) = self.rank_k {
            spec.rank_k = k;
        }
        spec.lambda = self.lambda;
        spec.allocation = match self.allocation.to_ascii_lowercase().as_str() {
            "fixed" => Allocation::Fixed,
            "dynamic" => Allocation::Dynamic,
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown allocation `{other}` (fixed, dynamic)"
                )))
            }
        };
        spec.akl_mu = self.akl_mu;
        spec.tau = self.tau;
        spec.softrank = SoftRankConfig::new(self.softrank_epsilon)?;
        spec.teacher_hard_ranks = self.teacher_hard_ranks;
        spec.pearson_on_ranks = self.pearson_on_ranks;
        spec.zero_policy = if self.exact_zeros {
            ZeroPolicy::Exact
        } else {
            ZeroPolicy::Clamp
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::new(self.objective_spec()?);
        cfg.learning_rate = self.learning_rate;
        cfg.beta1 = self.beta1;
        cfg.beta2 = self.beta2;
        cfg.weight_decay = self.weight_decay;
        cfg.grad_clip_norm = self.grad_clip_norm;
        cfg.batch_size = self.batch_size;
        cfg.steps = self.steps;
        cfg.seed = self.seed;
        Ok(cfg)
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            interval: self.eval_interval,
            cr_ks: self.cr_ks.clone(),
            mor_ks: self.mor_ks.clone(),
            max_eval_positions: self.max_eval_positions,
            held_out_fraction: self.held_out_fraction,
        }
    }

    /// Resolved key-value view for the run manifest.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            map.insert(k.to_string(), v);
        };
        put("corpus_path", self.corpus_path.display().to_string());
        put("vocab", self.vocab.clone());
        put("context_length", self.context_length.to_string());
        put("teacher_embed_dim", self.teacher_embed_dim.to_string());
        put("teacher_hidden_dim", self.teacher_hidden_dim.to_string());
        put("student_embed_dim", self.student_embed_dim.to_string());
        put("student_hidden_dim", self.student_hidden_dim.to_string());
        put(
            "teacher_checkpoint",
            self.teacher_checkpoint.display().to_string(),
        );
        if let Some(p) = &self.student_checkpoint {
            put("student_checkpoint", p.display().to_string());
        }
        put("learning_rate", self.learning_rate.to_string());
        put("beta1", self.beta1.to_string());
        put("beta2", self.beta2.to_string());
        put("weight_decay", self.weight_decay.to_string());
        put("grad_clip_norm", self.grad_clip_norm.to_string());
        put("batch_size", self.batch_size.to_string());
        put("steps", self.steps.to_string());
        put("seed", self.seed.to_string());
        put("objective", self.objective.clone());
        put("use_ranking", self.use_ranking.to_string());
        put("rank_correlation", self.rank_correlation.clone());
        if let Some(k) = self.rank_k {
            put("rank_k", k.to_string());
        }
        put("lambda", self.lambda.to_string());
        put("allocation", self.allocation.clone());
        put("akl_mu", self.akl_mu.to_string());
        put("tau", self.tau.to_string());
        put("softrank_epsilon", self.softrank_epsilon.to_string());
        put("teacher_hard_ranks", self.teacher_hard_ranks.to_string());
        put("pearson_on_ranks", self.pearson_on_ranks.to_string());
        put("exact_zeros", self.exact_zeros.to_string());
        put(
            "cr_ks",
            self.cr_ks
                .iter()
                .map(|k| k.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        put(
            "mor_ks",
            self.mor_ks
                .iter()
                .map(|k| k.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        put("eval_interval", self.eval_interval.to_string());
        put("max_eval_positions", self.max_eval_positions.to_string());
        put("held_out_fraction", self.held_out_fraction.to_string());
        put("output_dir", self.output_dir.display().to_string());
        put("dump_probs", self.dump_probs.to_string());
        put("dump_top_k", self.dump_top_k.to_string());
        map
    }
}
