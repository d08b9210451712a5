//! `taco`: train, run and evaluate the prompt-compression policy.

use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use taco_core::checkpoint::{file_digest, load_checkpoint, load_checkpoint_expecting, save_checkpoint};
use taco_core::compressor::{compress_document, CompressOptions, SelectionMode};
use taco_core::corpus::{chunk, detokenize, heuristic_labels, load_dataset, tokenize, Sample, Vocabulary};
use taco_core::evaluator::{evaluate, EvalMetric, EvalOptions, DEFAULT_RATES};
use taco_core::oracle::{cache_stats, clear_cache, CachedOracle, LocalOracle, Oracle, RemoteConfig, RemoteOracle};
use taco_core::policy::{supervised_bootstrap, BootstrapConfig, Dims, LabeledSequence, PolicyParameters};
use taco_core::rewards::CorpusStats;
use taco_core::trainer::{build_units, parse_key_values, run_training, RunOptions, Scorer, TrainConfig};
use taco_core::{Error, Exec};

#[derive(Parser)]
#[command(name = "taco", version, about = "Task-aware prompt compression with a REINFORCE-trained keep/drop policy")]
struct Cli {
    /// Run every data-parallel loop on one thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a vocabulary and fit the policy to heuristic keep labels.
    Bootstrap(BootstrapArgs),
    /// Fine-tune a checkpoint with REINFORCE against oracle rewards.
    Train(TrainArgs),
    /// Compress text with a trained checkpoint.
    Compress(CompressArgs),
    /// Score compressed prompts across keep rates.
    Evaluate(EvaluateArgs),
    /// Inspect or clear the oracle response cache.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Args)]
struct BootstrapArgs {
    /// JSON Lines dataset.
    #[arg(long)]
    data: PathBuf,
    /// Output checkpoint; the vocabulary goes to `<out>.vocab.json`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 1)]
    depth: usize,
    #[arg(long, default_value_t = 3)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 512)]
    max_seq_len: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleKind {
    Local,
    Remote,
}

#[derive(Args)]
struct OracleArgs {
    /// `local` never touches the network; `remote` reads TACO_API_KEY.
    #[arg(long, value_enum, default_value = "local")]
    oracle: OracleKind,
    /// Chat-completions base URL for the remote oracle.
    #[arg(long, default_value = "https://api.openai.com/v1")]
    endpoint: String,
    #[arg(long, default_value = "gpt-3.5-turbo")]
    model: String,
    #[arg(long, default_value_t = 5)]
    max_attempts: u32,
    #[arg(long, default_value = ".taco-cache")]
    cache_dir: PathBuf,
    /// Skip the on-disk response cache.
    #[arg(long)]
    no_cache: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Starting checkpoint (normally from `bootstrap`).
    #[arg(long)]
    init: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Flat `key = value` file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set tolerance=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from the checkpoint at `--out`.
    #[arg(long)]
    resume: bool,
    /// Stop after this global step; the run stays resumable.
    #[arg(long)]
    stop_at: Option<u64>,
    /// Step log (JSON Lines, appended); defaults to `<out>.log.jsonl`.
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    oracle: OracleArgs,
}

#[derive(Args)]
struct CompressArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Input file, or `-` for stdin.
    #[arg(long, conflicts_with = "text")]
    input: Option<PathBuf>,
    #[arg(long)]
    text: Option<String>,
    /// Fraction of tokens to keep, in (0, 1].
    #[arg(long, default_value_t = 0.5)]
    rate: f64,
    #[arg(long, default_value = "topk")]
    mode: String,
    #[arg(long, default_value_t = 512)]
    chunk_len: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated keep rates.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_RATES.to_vec())]
    rates: Vec<f64>,
    /// Comma-separated metrics, or `all`.
    #[arg(long, default_value = "all")]
    metrics: String,
    #[arg(long, default_value_t = 64)]
    max_output_tokens: usize,
    #[arg(long, default_value_t = 512)]
    chunk_len: usize,
    /// JSON Lines report; the table is written next to it as `.txt`.
    #[arg(long, default_value = "eval.jsonl")]
    out: PathBuf,
    #[command(flatten)]
    oracle: OracleArgs,
}

#[derive(Subcommand)]
enum CacheAction {
    Stats {
        #[arg(long, default_value = ".taco-cache")]
        cache_dir: PathBuf,
    },
    Clear {
        #[arg(long, default_value = ".taco-cache")]
        cache_dir: PathBuf,
    },
}

fn vocab_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.file_name().unwrap_or_default().to_os_string();
    name.push(".vocab.json");
    checkpoint.with_file_name(name)
}

fn read_dataset(path: &Path) -> anyhow::Result<Vec<Sample>> {
    if !path.is_file() {
        bail!(Error::Config(format!("dataset {} does not exist", path.display())));
    }
    let samples = load_dataset(path).with_context(|| format!("reading dataset {}", path.display()))?;
    if samples.is_empty() {
        bail!(Error::Config(format!("dataset {} is empty", path.display())));
    }
    Ok(samples)
}

fn load_model(checkpoint: &Path) -> anyhow::Result<(PolicyParameters, u64, Vocabulary)> {
    let sidecar = vocab_path(checkpoint);
    let vocab = Vocabulary::load(&sidecar).with_context(|| format!("loading vocabulary {}", sidecar.display()))?;
    let (params, step) =
        load_checkpoint(checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    if params.dims().vocab != vocab.len() {
        bail!(Error::Version(format!(
            "checkpoint has {} embedding rows, vocabulary has {} tokens",
            params.dims().vocab,
            vocab.len()
        )));
    }
    Ok((params, step, vocab))
}

fn corpus_stats(samples: &[Sample]) -> Arc<CorpusStats> {
    Arc::new(CorpusStats::build(samples.iter().map(|s| s.context.as_str())))
}

/// Remote credentials are checked before any work starts.
fn remote_config(args: &OracleArgs) -> anyhow::Result<Option<RemoteConfig>> {
    match args.oracle {
        OracleKind::Local => Ok(None),
        OracleKind::Remote => {
            let mut cfg = RemoteConfig::from_env(args.endpoint.clone(), args.model.clone())?;
            cfg.max_attempts = args.max_attempts;
            Ok(Some(cfg))
        }
    }
}

fn build_oracle(args: &OracleArgs, remote: Option<RemoteConfig>, stats: Arc<CorpusStats>) -> anyhow::Result<Box<dyn Oracle>> {
    let inner: Box<dyn Oracle> = match remote {
        Some(cfg) => Box::new(RemoteOracle::new(cfg)?),
        None => Box::new(LocalOracle::new(stats)),
    };
    log::info!("oracle {}", inner.id());
    if args.no_cache {
        Ok(inner)
    } else {
        Ok(Box::new(CachedOracle::new(inner, &args.cache_dir)))
    }
}

fn cmd_bootstrap(args: BootstrapArgs) -> anyhow::Result<()> {
    let samples = read_dataset(&args.data)?;
    let vocab = Vocabulary::build(
        samples
            .iter()
            .flat_map(|s| std::iter::once(s.context.as_str()).chain(s.question.as_deref())),
    );
    let dims = Dims::new(vocab.len(), args.hidden, args.depth)?;
    let init = PolicyParameters::init(args.seed, dims)?;
    let mut labeled = Vec::new();
    for s in &samples {
        for piece in chunk(&tokenize(&s.context, &vocab)?, args.max_seq_len) {
            labeled.push(LabeledSequence {
                labels: heuristic_labels(&piece),
                seq: piece,
            });
        }
    }
    let params = supervised_bootstrap(
        &init,
        &labeled,
        BootstrapConfig {
            epochs: args.epochs,
            lr: args.lr,
            seed: args.seed,
        },
    )?;
    save_checkpoint(&params, 0, &args.out)?;
    vocab.save(&vocab_path(&args.out))?;
    println!(
        "bootstrap: {} samples, {} sequences, vocab {}, hidden {}, depth {}, epochs {}, lr {}, seed {}",
        samples.len(),
        labeled.len(),
        vocab.len(),
        args.hidden,
        args.depth,
        args.epochs,
        args.lr,
        args.seed
    );
    println!("checkpoint {} sha256 {}", args.out.display(), file_digest(&args.out)?);
    Ok(())
}

fn train_config(args: &TrainArgs) -> anyhow::Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        for (k, v) in parse_key_values(&text)? {
            cfg.set(&k, &v)?;
        }
    }
    for item in &args.overrides {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {item:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = args.lr {
        cfg.lr = lr;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(args: TrainArgs, exec: Exec) -> anyhow::Result<()> {
    let cfg = train_config(&args)?;
    let remote = remote_config(&args.oracle)?;
    let samples = read_dataset(&args.data)?;
    let (base, _, vocab) = load_model(&args.init)?;
    let (start, start_step) = if args.resume {
        if !args.out.exists() {
            bail!(Error::Config(format!("--resume: no checkpoint at {}", args.out.display())));
        }
        load_checkpoint_expecting(&args.out, base.dims())?
    } else {
        (base, 0)
    };
    let stats = corpus_stats(&samples);
    let oracle = build_oracle(&args.oracle, remote, Arc::clone(&stats))?;
    let scorer = Scorer::new(&cfg.reward, Some(stats))?;
    let units = build_units(&samples, &vocab, cfg.max_seq_len)?;
    let log_path = args.log.clone().unwrap_or_else(|| {
        let mut name = args.out.file_name().unwrap_or_default().to_os_string();
        name.push(".log.jsonl");
        args.out.with_file_name(name)
    });
    println!(
        "train: {} units, epochs {}, lr {}, schedule {:?}, c {}, L {}, seed {}, start step {start_step}",
        units.len(),
        cfg.epochs,
        cfg.lr,
        cfg.schedule,
        cfg.reward.keep_rate,
        cfg.reward.tolerance,
        cfg.seed
    );
    let out = run_training(
        &units,
        &start,
        &oracle,
        &scorer,
        &cfg,
        &RunOptions {
            checkpoint_path: Some(args.out.clone()),
            log_path: Some(log_path),
            start_step,
            stop_at: args.stop_at,
            exec,
        },
    )?;
    vocab.save(&vocab_path(&args.out))?;
    for e in &out.epochs {
        println!(
            "epoch {:>3}: steps {:>5} skipped {:>3} mean_r {:+.4} mean_delta {:+.2} kept {:.3} y_orig_requests {}",
            e.epoch + 1,
            e.steps,
            e.skipped,
            e.mean_reward,
            e.mean_delta,
            e.mean_kept_fraction,
            e.y_orig_requests
        );
    }
    println!(
        "checkpoint {} step {} sha256 {}",
        args.out.display(),
        out.step,
        file_digest(&args.out)?
    );
    Ok(())
}

fn cmd_compress(args: CompressArgs, exec: Exec) -> anyhow::Result<()> {
    let text = match (&args.text, &args.input) {
        (Some(t), _) => t.clone(),
        (None, Some(p)) if p.as_os_str() == "-" => {
            let mut buf = String::new();
            io::stdin().read_to_string(&mut buf).context("reading stdin")?;
            buf
        }
        (None, Some(p)) => {
            if !p.is_file() {
                bail!(Error::Config(format!("input {} does not exist", p.display())));
            }
            fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?
        }
        (None, None) => bail!(Error::Config("give --text or --input".into())),
    };
    let mode: SelectionMode = args.mode.parse()?;
    let (params, _, vocab) = load_model(&args.checkpoint)?;
    let seq = tokenize(&text, &vocab)?;
    let result = compress_document(
        &seq,
        &params,
        &CompressOptions {
            keep_rate: args.rate,
            mode,
            chunk_len: args.chunk_len,
            exec,
        },
    )?;
    println!("{}", detokenize(&result.prompt.seq));
    let s = result.stats;
    eprintln!(
        "original_n={} compressed_n={} tau={:.4} cr={:.4}",
        s.original_n, s.compressed_n, s.rate, s.ratio
    );
    Ok(())
}

fn parse_metrics(spec: &str) -> anyhow::Result<Vec<EvalMetric>> {
    if spec == "all" {
        return Ok(EvalMetric::ALL.to_vec());
    }
    Ok(spec.split(',').map(|m| m.trim().parse()).collect::<Result<_, Error>>()?)
}

fn cmd_evaluate(args: EvaluateArgs, exec: Exec) -> anyhow::Result<()> {
    let metrics = parse_metrics(&args.metrics)?;
    let remote = remote_config(&args.oracle)?;
    let samples = read_dataset(&args.data)?;
    let (params, _, vocab) = load_model(&args.checkpoint)?;
    let oracle = build_oracle(&args.oracle, remote, corpus_stats(&samples))?;
    let report = evaluate(
        &samples,
        &vocab,
        &params,
        &args.rates,
        &oracle,
        &metrics,
        &EvalOptions {
            max_output_tokens: args.max_output_tokens,
            chunk_len: args.chunk_len,
            exec,
        },
    )?;
    let table = report.to_table();
    fs::write(&args.out, report.to_jsonl()).with_context(|| format!("writing {}", args.out.display()))?;
    let table_path = args.out.with_extension("txt");
    fs::write(&table_path, &table).with_context(|| format!("writing {}", table_path.display()))?;
    if report.incomplete() {
        let worst = report.rows.iter().map(|r| r.coverage()).fold(1.0, f64::min);
        eprintln!("WARNING: incomplete evaluation; lowest coverage {worst:.3}. Means cover only the samples the oracle answered.");
    }
    print!("{table}");
    println!("report {} table {}", args.out.display(), table_path.display());
    Ok(())
}

fn cmd_cache(action: CacheAction) -> anyhow::Result<()> {
    match action {
        CacheAction::Stats { cache_dir } => {
            let s = cache_stats(&cache_dir)?;
            println!("{}: {} entries, {} bytes", cache_dir.display(), s.entries, s.bytes);
        }
        CacheAction::Clear { cache_dir } => {
            let n = clear_cache(&cache_dir)?;
            println!("{}: removed {n} entries", cache_dir.display());
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Config(_) | Error::Io { .. } | Error::EmptyInput) => 2,
        Some(
            Error::Parse { .. }
            | Error::Schema { .. }
            | Error::Dim(_)
            | Error::Vocab { .. }
            | Error::EmptyCompression
            | Error::Version(_)
            | Error::Integrity(_),
        ) => 3,
        Some(Error::OracleUnavailable { .. }) => 4,
        Some(Error::Numerical { .. }) => 5,
        None => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    let result = match cli.command {
        Command::Bootstrap(a) => cmd_bootstrap(a),
        Command::Train(a) => cmd_train(a, exec),
        Command::Compress(a) => cmd_compress(a, exec),
        Command::Evaluate(a) => cmd_evaluate(a, exec),
        Command::Cache { action } => cmd_cache(action),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
