//! `rankdistill`: distillation runs, consistency evaluation, dump
//! tooling, and gradient checks over the toy models.
//!
//! Exit codes: 0 success, 1 failed gradient check, 2 usage or invalid
//! configuration, 3 training divergence, 4 I/O or file-format error.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rankdistill::error::Error;
use rankdistill::gradcheck::run_gradcheck;
use rankdistill::metrics::MultiModalAccumulator;
use rankdistill::prob::{softmax_with_temperature, ProbVector};
use rankdistill::toylm::{
    distill, generate_corpus, stride_positions, train_split_end, train_teacher, TinyLm,
    TokenDataset,
};
use rankdistill_cli::config::ExperimentConfig;
use rankdistill_cli::dump::{DumpKind, DumpReader, DumpRow, DumpWriter, ProbDumpHeader};
use rankdistill_cli::report::{
    consistency_table, held_out_csv, history_csv, multimodal_table, ConsistencyJson,
    MultiModalJson, RunManifest,
};

#[derive(Parser)]
#[command(
    name = "rankdistill",
    version,
    about = "Word-level distillation objectives with a ranking loss, and the consistency metrics to judge them"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Distill a student toward a pretrained teacher checkpoint
    Distill {
        #[arg(long)]
        config: PathBuf,
    },
    /// Pretrain the toy teacher on the corpus with cross-entropy
    TrainTeacher {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare two probability dumps with CR and MOR
    EvalConsistency {
        #[arg(long)]
        dump_a: PathBuf,
        #[arg(long)]
        dump_b: PathBuf,
        /// CR ranges, comma-separated
        #[arg(long, value_delimiter = ',', default_values_t = vec![1, 2, 3, 4, 5])]
        cr_ks: Vec<usize>,
        /// MOR ranges, comma-separated
        #[arg(long, value_delimiter = ',', default_values_t = vec![3, 5, 10, 20])]
        mor_ks: Vec<usize>,
        /// Also write the report as JSON
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Nucleus-size statistics of a dense dump or a model checkpoint
    MultimodalStats {
        /// A dense probability dump or a TLM1 checkpoint
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.9)]
        top_p: f64,
        /// Sampling temperatures; values other than 1 need a checkpoint
        #[arg(long, value_delimiter = ',', default_values_t = vec![1.0])]
        temperatures: Vec<f64>,
        /// Corpus supplying contexts when the input is a checkpoint
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Context window when the input is a checkpoint
        #[arg(long, default_value_t = 4)]
        context_length: usize,
        /// Cap on evaluated positions
        #[arg(long, default_value_t = 2000)]
        positions: usize,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Check analytic gradients against central finite differences
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 72)]
        seed: u64,
    },
    /// Convert a dump between dense and sparse encodings
    DumpConvert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// K for dense-to-sparse conversion
        #[arg(long, default_value_t = 32)]
        top_k: u32,
    },
    /// Generate the deterministic synthetic byte corpus
    GenCorpus {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 2_000_000)]
        bytes: usize,
        #[arg(long, default_value_t = 72)]
        seed: u64,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidInput(_) | Error::InvalidParameter(_) => 2,
        Error::TrainingDiverged { .. } | Error::DivergenceInfinite(_) => 3,
        Error::Format(_) | Error::Io(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Distill { config } => cmd_distill(&config),
        Command::TrainTeacher { config } => cmd_train_teacher(&config),
        Command::EvalConsistency {
            dump_a,
            dump_b,
            cr_ks,
            mor_ks,
            json,
        } => cmd_eval_consistency(&dump_a, &dump_b, &cr_ks, &mor_ks, json.as_deref()),
        Command::MultimodalStats {
            input,
            top_p,
            temperatures,
            corpus,
            context_length,
            positions,
            json,
        } => cmd_multimodal_stats(
            &input,
            top_p,
            &temperatures,
            corpus.as_deref(),
            context_length,
            positions,
            json.as_deref(),
        ),
        Command::Gradcheck { trials, dim, seed } => return cmd_gradcheck(trials, dim, seed),
        Command::DumpConvert {
            input,
            output,
            top_k,
        } => cmd_dump_convert(&input, &output, top_k),
        Command::GenCorpus {
            output,
            bytes,
            seed,
        } => cmd_gen_corpus(&output, bytes, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn load_dataset(cfg: &ExperimentConfig) -> Result<TokenDataset, Error> {
    let bytes = fs::read(&cfg.corpus_path)?;
    TokenDataset::new(bytes, cfg.context_length)
}

fn cmd_distill(config_path: &Path) -> Result<(), Error> {
    let cfg = ExperimentConfig::load(config_path)?;
    if !cfg.teacher_checkpoint.exists() {
        return Err(Error::InvalidParameter(format!(
            "teacher checkpoint {} does not exist; run train-teacher first",
            cfg.teacher_checkpoint.display()
        )));
    }
    let data = load_dataset(&cfg)?;
    let teacher = TinyLm::load(&cfg.teacher_checkpoint)?;
    if teacher.dims() != cfg.teacher_dims() {
        return Err(Error::InvalidParameter(format!(
            "teacher checkpoint dims {:?} do not match the config's {:?}",
            teacher.dims(),
            cfg.teacher_dims()
        )));
    }
    let mut student = TinyLm::random(cfg.student_dims(), cfg.seed.wrapping_add(1))?;

    let train_cfg = cfg.train_config()?;
    let eval_cfg = cfg.eval_config();
    let run = distill(&teacher, &mut student, &data, &train_cfg, &eval_cfg)?;

    fs::create_dir_all(&cfg.output_dir)?;
    let csv = history_csv(&run.history, &cfg.cr_ks, &cfg.mor_ks);
    fs::write(cfg.output_dir.join("metrics.csv"), &csv)?;
    if let Some(held) = held_out_csv(&run.history, &cfg.cr_ks, &cfg.mor_ks) {
        fs::write(cfg.output_dir.join("heldout_metrics.csv"), held)?;
    }

    let last = run.history.last().expect("history has a start row");
    let manifest = RunManifest {
        version: format!("rankdistill-v{}", env!("CARGO_PKG_VERSION")),
        seed: cfg.seed,
        objective: train_cfg.objective.name(),
        steps: run.steps,
        seconds_per_step: if run.steps > 0 {
            run.train_seconds / run.steps as f64
        } else {
            0.0
        },
        train_seconds: run.train_seconds,
        final_loss: last.loss,
        final_perplexity: last.perplexity,
        config: cfg.echo(),
    };
    fs::write(
        cfg.output_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;

    if let Some(path) = &cfg.student_checkpoint {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        student.save(path)?;
    }
    if cfg.dump_probs {
        write_eval_dumps(&cfg, &teacher, &student, &data)?;
    }

    print!(
        "{}",
        consistency_table(&format!("{} train split", manifest.objective), &last.report)
    );
    if let Some(held) = &last.held_out {
        print!(
            "{}",
            consistency_table(
                &format!("{} held-out split", manifest.objective),
                &held.report
            )
        );
    }
    println!(
        "loss {:.6}  perplexity {:.4}  ({} steps, {:.1} ms/step)",
        last.loss,
        last.perplexity,
        run.steps,
        manifest.seconds_per_step * 1e3,
    );
    println!("reports written to {}", cfg.output_dir.display());
    Ok(())
}

fn write_eval_dumps(
    cfg: &ExperimentConfig,
    teacher: &TinyLm,
    student: &TinyLm,
    data: &TokenDataset,
) -> Result<(), Error> {
    let train_end = train_split_end(data.num_positions(), cfg.held_out_fraction);
    let positions = stride_positions(0, train_end, cfg.max_eval_positions);
    let kind = if cfg.dump_top_k == 0 {
        DumpKind::Dense
    } else {
        DumpKind::Sparse { k: cfg.dump_top_k }
    };
    let ext = if cfg.dump_top_k == 0 { "pdmp" } else { "pdsk" };
    let header = ProbDumpHeader {
        kind,
        vocab_size: teacher.dims().vocab_size as u32,
        n_rows: positions.len() as u64,
    };
    let mut teacher_dump =
        DumpWriter::create(&cfg.output_dir.join(format!("teacher.{ext}")), header)?;
    let mut student_dump =
        DumpWriter::create(&cfg.output_dir.join(format!("student.{ext}")), header)?;
    let mut ctx = Vec::with_capacity(data.context_length());
    for &pos in &positions {
        data.fill_context(pos, &mut ctx);
        teacher_dump.write_row(&softmax_with_temperature(&teacher.forward(&ctx)?, 1.0)?)?;
        student_dump.write_row(&softmax_with_temperature(&student.forward(&ctx)?, 1.0)?)?;
    }
    teacher_dump.finish()?;
    student_dump.finish()?;
    Ok(())
}

fn cmd_train_teacher(config_path: &Path) -> Result<(), Error> {
    let cfg = ExperimentConfig::load(config_path)?;
    let data = load_dataset(&cfg)?;
    let mut model = TinyLm::random(cfg.teacher_dims(), cfg.seed)?;
    let losses = train_teacher(&mut model, &data, &cfg.train_config()?)?;

    if let Some(parent) = cfg.teacher_checkpoint.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    model.save(&cfg.teacher_checkpoint)?;

    let window = losses.len().min(50);
    let recent: f64 = losses[losses.len() - window..].iter().sum::<f64>() / window as f64;
    println!(
        "teacher trained for {} steps; mean cross-entropy over the last {window} steps {recent:.4} (ppl {:.2})",
        losses.len(),
        recent.exp()
    );
    println!("checkpoint written to {}", cfg.teacher_checkpoint.display());
    Ok(())
}

fn cmd_eval_consistency(
    dump_a: &Path,
    dump_b: &Path,
    cr_ks: &[usize],
    mor_ks: &[usize],
    json: Option<&Path>,
) -> Result<(), Error> {
    let mut reader_a = DumpReader::open(dump_a)?;
    let mut reader_b = DumpReader::open(dump_b)?;
    let (ha, hb) = (reader_a.header(), reader_b.header());
    if ha.vocab_size != hb.vocab_size || ha.n_rows != hb.n_rows {
        return Err(Error::InvalidInput(format!(
            "dump headers disagree: {}x{} vs {}x{}",
            ha.n_rows, ha.vocab_size, hb.n_rows, hb.vocab_size
        )));
    }
    let mut acc = rankdistill::metrics::ConsistencyAccumulator::new(cr_ks, mor_ks)?;
    let list_len = acc.max_k().min(ha.vocab_size as usize);
    for header in [ha, hb] {
        if let DumpKind::Sparse { k } = header.kind {
            if (k as usize) < list_len {
                return Err(Error::InvalidParameter(format!(
                    "requested ranges need top-{list_len} but the sparse dump stores only {k} entries per row"
                )));
            }
        }
    }
    while let Some(row_a) = reader_a.next_row()? {
        let row_b = reader_b.next_row()?.ok_or_else(|| {
            Error::Format("second dump ended before its promised row count".into())
        })?;
        acc.push_top_k(&row_a.top_k(list_len)?, &row_b.top_k(list_len)?)?;
    }
    for (path, reader) in [(dump_a, &reader_a), (dump_b, &reader_b)] {
        if reader.warnings() > 0 {
            eprintln!(
                "warning: {}: {} rows renormalized ({})",
                path.display(),
                reader.warnings(),
                reader.first_warning().unwrap_or("sum drift")
            );
        }
    }
    let report = acc.report()?;
    print!("{}", consistency_table("dump consistency", &report));
    if let Some(path) = json {
        fs::write(
            path,
            serde_json::to_string_pretty(&ConsistencyJson::from(&report))
                .expect("report serializes"),
        )?;
    }
    Ok(())
}

enum StatsInput {
    DenseDump,
    SparseDump,
    Checkpoint,
}

fn sniff_input(path: &Path) -> Result<StatsInput, Error> {
    let mut file = fs::File::open(path)?;
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)?;
    match &magic {
        b"PDMP" => Ok(StatsInput::DenseDump),
        b"PDSK" => Ok(StatsInput::SparseDump),
        b"TLM1" => Ok(StatsInput::Checkpoint),
        other => Err(Error::Format(format!(
            "unrecognized input magic {other:?}; expected a dump or checkpoint"
        ))),
    }
}

fn cmd_multimodal_stats(
    input: &Path,
    top_p: f64,
    temperatures: &[f64],
    corpus: Option<&Path>,
    context_length: usize,
    positions: usize,
    json: Option<&Path>,
) -> Result<(), Error> {
    if temperatures.is_empty() {
        return Err(Error::InvalidParameter(
            "at least one temperature is required".into(),
        ));
    }
    let mut reports = Vec::new();
    match sniff_input(input)? {
        StatsInput::SparseDump => {
            return Err(Error::InvalidParameter(
                "sparse dumps truncate the tail mass, so nucleus sizes are not computable; \
                 use a dense dump or a checkpoint"
                    .into(),
            ));
        }
        StatsInput::DenseDump => {
            if let Some(&tau) = temperatures.iter().find(|&&t| t != 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "temperature {tau} needs raw logits: probability dumps only support \
                     temperature 1; pass a TLM1 checkpoint instead"
                )));
            }
            for &tau in temperatures {
                let mut reader = DumpReader::open(input)?;
                let mut acc = MultiModalAccumulator::new(top_p, tau)?;
                while let Some(row) = reader.next_row()? {
                    match row {
                        DumpRow::Dense(probs) => acc.push_dist(&probs)?,
                        DumpRow::Sparse(_) => unreachable!("dense header"),
                    }
                }
                reports.push(acc.report()?);
            }
        }
        StatsInput::Checkpoint => {
            let corpus_path = corpus.ok_or_else(|| {
                Error::InvalidParameter(
                    "a checkpoint input needs --corpus to supply contexts".into(),
                )
            })?;
            let model = TinyLm::load(input)?;
            if model.dims().context_length != context_length {
                return Err(Error::InvalidParameter(format!(
                    "checkpoint context length {} does not match --context-length {context_length}",
                    model.dims().context_length
                )));
            }
            let data = TokenDataset::new(fs::read(corpus_path)?, context_length)?;
            let eval_positions = stride_positions(0, data.num_positions(), positions);
            let mut ctx = Vec::with_capacity(context_length);
            let mut logits = Vec::with_capacity(eval_positions.len());
            for &pos in &eval_positions {
                data.fill_context(pos, &mut ctx);
                logits.push(model.forward(&ctx)?);
            }
            for &tau in temperatures {
                let mut acc = MultiModalAccumulator::new(top_p, tau)?;
                for z in &logits {
                    acc.push_logits(z)?;
                }
                reports.push(acc.report()?);
            }
        }
    }
    print!("{}", multimodal_table(&reports));
    if let Some(path) = json {
        let payload: Vec<MultiModalJson> = reports.iter().map(MultiModalJson::from).collect();
        fs::write(
            path,
            serde_json::to_string_pretty(&payload).expect("reports serialize"),
        )?;
    }
    Ok(())
}

fn cmd_gradcheck(trials: usize, dim: usize, seed: u64) -> ExitCode {
    let report = match run_gradcheck(trials, dim, seed) {
        Ok(report) => report,
        Err(err) => {
            eprintln!("error: {err}");
            return ExitCode::from(exit_code(&err));
        }
    };
    println!(
        "gradient check: {} trials, dim {}, seed {}, tolerance {:.0e}",
        report.trials, report.dim, seed, report.tolerance
    );
    println!("  {:<18} {:>14}  result", "objective", "max rel error");
    for entry in &report.entries {
        println!(
            "  {:<18} {:>14.3e}  {}",
            entry.name,
            entry.max_rel_error,
            if entry.pass { "pass" } else { "FAIL" }
        );
    }
    if report.all_pass() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn cmd_dump_convert(input: &Path, output: &Path, top_k: u32) -> Result<(), Error> {
    let mut reader = DumpReader::open(input)?;
    let header = reader.header();
    match header.kind {
        DumpKind::Dense => {
            if top_k == 0 || top_k > header.vocab_size {
                return Err(Error::InvalidParameter(format!(
                    "--top-k must lie in [1, {}], got {top_k}",
                    header.vocab_size
                )));
            }
            let out_header = ProbDumpHeader {
                kind: DumpKind::Sparse { k: top_k },
                ..header
            };
            let mut writer = DumpWriter::create(output, out_header)?;
            while let Some(row) = reader.next_row()? {
                match row {
                    DumpRow::Dense(probs) => writer.write_row(&probs)?,
                    DumpRow::Sparse(_) => unreachable!("dense header"),
                }
            }
            writer.finish()?;
            println!(
                "wrote sparse top-{top_k} dump ({} rows) to {}",
                header.n_rows,
                output.display()
            );
        }
        DumpKind::Sparse { k } => {
            // densify: stored entries keep their probabilities, the
            // missing tail mass is spread uniformly over the other ids
            let v = header.vocab_size as usize;
            let out_header = ProbDumpHeader {
                kind: DumpKind::Dense,
                ..header
            };
            let mut writer = DumpWriter::create(output, out_header)?;
            while let Some(row) = reader.next_row()? {
                let entries = match row {
                    DumpRow::Sparse(entries) => entries,
                    DumpRow::Dense(_) => unreachable!("sparse header"),
                };
                let stored: f64 = entries.iter().map(|&(_, p)| p).sum();
                let residual = (1.0 - stored).max(0.0);
                let fill = if v > entries.len() {
                    residual / (v - entries.len()) as f64
                } else {
                    0.0
                };
                let mut probs = vec![fill; v];
                for (i, p) in entries {
                    probs[i] = p;
                }
                writer.write_row(&ProbVector::renormalized(probs)?)?;
            }
            writer.finish()?;
            println!(
                "densified sparse top-{k} dump ({} rows) to {}",
                header.n_rows,
                output.display()
            );
        }
    }
    Ok(())
}

fn cmd_gen_corpus(output: &Path, bytes: usize, seed: u64) -> Result<(), Error> {
    if bytes == 0 {
        return Err(Error::InvalidParameter(
            "corpus size must be positive".into(),
        ));
    }
    let text = generate_corpus(seed, bytes);
    if let Some(parent) = output.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(output, &text)?;
    println!(
        "wrote {} bytes of corpus to {}",
        text.len(),
        output.display()
    );
    Ok(())
}
