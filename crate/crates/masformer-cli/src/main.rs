//! Command-line front end: cost reporting, training, continual training,
//! evaluation, greedy generation, and the built-in check suites.
//!
//! Data goes to stdout, diagnostics to stderr, and the exit code is zero
//! exactly when the command succeeded.

mod config;

use clap::{Parser, Subcommand};
use config::RunConfig;
use masformer::cost::{format_millions, nominal_cost, reference_table};
use masformer::model::{load_checkpoint, save_checkpoint, ModelConfig};
use masformer::numerics::RngState;
use masformer::plan_spec::{format_pattern, parse_plan};
use masformer::training::{
    bucket_eval, continual_train, decode_bytes, format_loss_log, gen_retrieval, greedy_decode,
    load_corpus, perplexity, retrieval_accuracy, retrieval_corpus, train, Corpus,
    RetrievalTaskSpec, TrainOutcome, TrainSpec, BYTE_VOCAB, SEP_TOKEN,
};
use masformer::{Error, Result};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

// Substream labels under the run seed. Model init and batch sampling use
// labels 1 and 2 inside the library; task data must not collide with them.
const TASK_STREAM: u64 = 3;
const EVAL_STREAM: u64 = 4;

#[derive(Parser)]
#[command(name = "masformer", version, about = "Mixed-span transformer workbench")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print per-layer and total attention costs for a span plan.
    CostReport {
        /// Layer count the plan is expanded over.
        #[arg(long, default_value_t = 24)]
        layers: usize,
        /// Sequence length the costs are evaluated at.
        #[arg(long = "seq-len", default_value_t = 8192)]
        seq_len: usize,
        /// Span plan, e.g. "full", "block:1024", "bottom:2@block:1024".
        #[arg(long, default_value = "full")]
        plan: String,
        /// Print the standard named configurations instead.
        #[arg(long = "reference-table", default_value_t = false)]
        reference_table: bool,
    },
    /// Train a model from a key=value config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Extend a trained checkpoint to longer sequences and keep training.
    ContinualTrain {
        #[arg(long)]
        config: PathBuf,
    },
    /// Perplexity of a checkpoint over a corpus, optionally per length bucket.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Binary corpus file.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Plain text file, one document per blank-line-separated block.
        #[arg(long)]
        text: Option<PathBuf>,
        #[arg(long, default_value_t = false)]
        bucketed: bool,
        #[arg(long = "bucket-width", default_value_t = 1024)]
        bucket_width: usize,
    },
    /// Greedy continuation of a prompt file, printed as text.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// UTF-8 prompt; generation continues its byte sequence.
        #[arg(long = "prompt-file")]
        prompt_file: PathBuf,
        /// Number of tokens to append.
        #[arg(long = "max-new")]
        max_new: usize,
    },
    /// Run the built-in verification suites; nonzero exit on any failure.
    Selfcheck,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::CostReport { layers, seq_len, plan, reference_table } => {
            cmd_cost_report(layers, seq_len, &plan, reference_table)
        }
        Cmd::Train { config } => cmd_train(&config),
        Cmd::ContinualTrain { config } => cmd_continual_train(&config),
        Cmd::Eval { checkpoint, corpus, text, bucketed, bucket_width } => {
            cmd_eval(&checkpoint, corpus.as_deref(), text.as_deref(), bucketed, bucket_width)
        }
        Cmd::Generate { checkpoint, prompt_file, max_new } => {
            cmd_generate(&checkpoint, &prompt_file, max_new)
        }
        Cmd::Selfcheck => cmd_selfcheck(),
    }
}

fn cmd_cost_report(layers: usize, seq_len: usize, plan: &str, table: bool) -> Result<()> {
    if table {
        for row in reference_table() {
            println!("{}\t{}", row.label, row.display);
        }
        return Ok(());
    }
    let plan = parse_plan(plan, layers)?;
    let report = nominal_cost(&plan, seq_len);
    println!("layer\tpattern\tnominal\texact");
    for (i, pattern) in plan.patterns().iter().enumerate() {
        println!(
            "{i}\t{}\t{}\t{}",
            format_pattern(pattern),
            report.per_layer_nominal[i],
            report.per_layer_exact[i]
        );
    }
    println!(
        "total\t{}\t{}\t{}",
        format_millions(report.total_nominal),
        report.total_nominal,
        report.total_exact
    );
    Ok(())
}

/// Training data plus the vocabulary it implies.
enum TaskData {
    Retrieval { spec: RetrievalTaskSpec, corpus: Corpus },
    File { corpus: Corpus, vocab: usize },
}

impl TaskData {
    fn vocab(&self) -> usize {
        match self {
            TaskData::Retrieval { spec, .. } => spec.vocab(),
            TaskData::File { vocab, .. } => *vocab,
        }
    }

    fn corpus(&self) -> &Corpus {
        match self {
            TaskData::Retrieval { corpus, .. } => corpus,
            TaskData::File { corpus, .. } => corpus,
        }
    }
}

fn load_task(cfg: &RunConfig) -> Result<TaskData> {
    match cfg.get("task").unwrap_or("file") {
        "retrieval" => {
            if cfg.get("vocab").is_some() {
                return Err(Error::Config(
                    "the retrieval task derives its own vocab; drop the vocab key".to_string(),
                ));
            }
            let seq_len = cfg.require_usize("seq_len")?;
            // Documents shorter than the training window pack several retrieval
            // episodes into each chunk, which densifies the answer signal.
            let doc_len = cfg.usize_or("doc_len", seq_len)?;
            if doc_len == 0 || seq_len % doc_len != 0 {
                return Err(Error::Config(format!(
                    "doc_len must divide seq_len so chunks hold whole documents, got {doc_len} vs {seq_len}"
                )));
            }
            let spec = RetrievalTaskSpec {
                seq_len: doc_len,
                num_keys: cfg.usize_or("num_keys", 8)?,
                num_values: cfg.usize_or("num_values", 8)?,
                min_gap: cfg.usize_or("min_gap", doc_len / 2)?,
                max_gap: cfg.usize_or("max_gap", doc_len.saturating_sub(5))?,
                pairs: cfg.usize_or("pairs", 1)?,
            };
            spec.validate()?;
            let count = cfg.usize_or("train_samples", 512)?;
            let mut rng = RngState::new(cfg.u64_or("seed", 0)?).substream(TASK_STREAM);
            let samples = gen_retrieval(&spec, count, &mut rng)?;
            Ok(TaskData::Retrieval { spec, corpus: retrieval_corpus(&samples) })
        }
        "file" => {
            let corpus = read_corpus(cfg.get("corpus"), cfg.get("text"))?;
            Ok(TaskData::File { corpus, vocab: cfg.usize_or("vocab", BYTE_VOCAB)? })
        }
        other => Err(Error::Config(format!("task must be retrieval or file, got '{other}'"))),
    }
}

fn read_corpus(binary: Option<&str>, text: Option<&str>) -> Result<Corpus> {
    match (binary, text) {
        (Some(path), None) => load_corpus(Path::new(path)),
        (None, Some(path)) => Ok(Corpus::from_text(&std::fs::read_to_string(path)?)),
        (Some(_), Some(_)) => {
            Err(Error::Config("give either a corpus or a text source, not both".to_string()))
        }
        (None, None) => Err(Error::Config("a corpus or text source is required".to_string())),
    }
}

fn build_train_spec(cfg: &RunConfig) -> Result<TrainSpec> {
    Ok(TrainSpec {
        steps: cfg.require_usize("steps")?,
        warmup_steps: cfg.usize_or("warmup_steps", 0)?,
        batch_size: cfg.usize_or("batch_size", 8)?,
        seq_len: cfg.require_usize("seq_len")?,
        learning_rate: cfg.f32_or("learning_rate", 1e-3)?,
        seed: cfg.u64_or("seed", 0)?,
    })
}

fn build_model_config(cfg: &RunConfig, vocab: usize) -> Result<ModelConfig> {
    let layers = cfg.require_usize("layers")?;
    let d_model = cfg.require_usize("d_model")?;
    let seq_len = cfg.require_usize("seq_len")?;
    Ok(ModelConfig {
        layers,
        d_model,
        n_heads: cfg.usize_or("n_heads", 4)?,
        d_ff: cfg.usize_or("d_ff", 4 * d_model)?,
        vocab,
        max_pos: cfg.usize_or("max_pos", seq_len)?,
        plan: parse_plan(cfg.require("plan")?, layers)?,
        seed: cfg.u64_or("seed", 0)?,
    })
}

/// Persist the outcome, report progress on stderr, and print the task's
/// summary line on stdout.
fn finish_run(cfg: &RunConfig, task: &TaskData, outcome: TrainOutcome) -> Result<()> {
    let checkpoint = cfg.require("checkpoint")?;
    save_checkpoint(&outcome.model, Path::new(checkpoint))?;
    if let Some(log_path) = cfg.get("log") {
        std::fs::write(log_path, format_loss_log(&outcome.log))?;
    }
    if let Some(last) = outcome.log.last() {
        eprintln!("trained {} steps, final loss {:.6}", last.step, last.loss);
    }
    match task {
        TaskData::Retrieval { spec, .. } => {
            let count = cfg.usize_or("eval_samples", 256)?;
            let mut rng = RngState::new(cfg.u64_or("seed", 0)?).substream(EVAL_STREAM);
            let samples = gen_retrieval(spec, count, &mut rng)?;
            let acc = retrieval_accuracy(&outcome.model, &samples)?;
            println!("accuracy\t{acc:.4}");
        }
        TaskData::File { .. } => {
            if let Some(last) = outcome.log.last() {
                println!("loss\t{:.6}", last.loss);
            }
        }
    }
    Ok(())
}

fn cmd_train(config_path: &Path) -> Result<()> {
    let cfg = RunConfig::from_file(config_path)?;
    eprint!("{}", cfg.serialize());
    let task = load_task(&cfg)?;
    let model_config = build_model_config(&cfg, task.vocab())?;
    let spec = build_train_spec(&cfg)?;
    let outcome = train(model_config, task.corpus(), &spec)?;
    finish_run(&cfg, &task, outcome)
}

fn cmd_continual_train(config_path: &Path) -> Result<()> {
    let cfg = RunConfig::from_file(config_path)?;
    eprint!("{}", cfg.serialize());
    let model = load_checkpoint(Path::new(cfg.require("init_checkpoint")?))?;
    let factor = cfg.usize_or("extend_factor", 1)?;
    let plan = match cfg.get("plan") {
        Some(s) => parse_plan(s, model.config.layers)?,
        None => model.config.plan.clone(),
    };
    let task = load_task(&cfg)?;
    let spec = build_train_spec(&cfg)?;
    let outcome = continual_train(model, factor, plan, task.corpus(), &spec)?;
    finish_run(&cfg, &task, outcome)
}

fn cmd_eval(
    checkpoint: &Path,
    corpus: Option<&Path>,
    text: Option<&Path>,
    bucketed: bool,
    bucket_width: usize,
) -> Result<()> {
    let model = load_checkpoint(checkpoint)?;
    let corpus = read_corpus(
        corpus.map(|p| p.to_str().unwrap_or_default()),
        text.map(|p| p.to_str().unwrap_or_default()),
    )?;
    if bucketed {
        for report in bucket_eval(&model, &corpus, bucket_width)? {
            let ppl = match report.perplexity {
                Some(p) => format!("{p:.6}"),
                None => "-".to_string(),
            };
            println!("{}\t{}\t{}", report.bucket, report.docs, ppl);
        }
    }
    let overall = perplexity(&model, &corpus)?;
    println!("ppl\t{overall:.6}");
    Ok(())
}

fn cmd_generate(checkpoint: &Path, prompt_file: &Path, max_new: usize) -> Result<()> {
    let model = load_checkpoint(checkpoint)?;
    let text = std::fs::read_to_string(prompt_file)?;
    let prompt: Vec<u16> = text.bytes().map(u16::from).collect();
    // Stop at the document separator; a trained byte model emits it at
    // document ends.
    let tokens = greedy_decode(&model, &prompt, max_new, Some(SEP_TOKEN))?;
    print!("{}", decode_bytes(&tokens));
    Ok(())
}

fn cmd_selfcheck() -> Result<()> {
    let reports = masformer::selfcheck::run_all();
    let mut failed = 0;
    for r in &reports {
        println!("{}\t{}\t{}", r.name, if r.passed { "PASS" } else { "FAIL" }, r.detail);
        if !r.passed {
            failed += 1;
        }
    }
    if failed == 0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{failed} of {} suites failed", reports.len())))
    }
}
