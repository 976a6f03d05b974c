use std::collections::BTreeMap;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use sslreg::augment::{make_satp_instance, AugmentContext, OpSet};
use sslreg::masking::{mask_tokens, MaskStats};
use sslreg::numerics::{GradCheckOptions, Precision};
use sslreg::runner::{
    self, evaluate_checkpoint, gradcheck_suite, prepare, sweep, training_examples, write_synthetic, ExperimentConfig,
    Split, CHECKPOINT_FILE,
};
use sslreg::text::{load_stopwords, StopwordSet};
use sslreg::training::{stream_rng, Regime, Stream, THREADS_ENV};

#[derive(Debug, Parser)]
#[command(name = "sslreg", version, about = "Transformer text classification with self-supervised regularization")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment file (flat TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Floating-point width for training and evaluation.
    #[arg(long, global = true, value_parser = parse_precision)]
    precision: Option<Precision>,
    /// Evaluation threads (0 = all cores).
    #[arg(long, global = true, env = THREADS_ENV, hide_env_values = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic corpus (train/dev/test) and its lexicon.
    Gen {
        #[arg(long)]
        num_examples: Option<usize>,
        #[arg(long)]
        num_classes: Option<usize>,
        #[arg(long)]
        vocab_size: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Train one model and write its artifacts.
    Train {
        #[arg(long)]
        regime: Option<Regime>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        run_name: Option<String>,
    },
    /// Score a checkpoint on one split and print the metrics as JSON.
    Evaluate {
        /// Defaults to the best checkpoint of the configured run.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "dev")]
        split: Split,
    },
    /// Stream augmented training sentences as JSON lines.
    Augment {
        /// Operator subset, e.g. `SR+RD`.
        #[arg(long)]
        ops: Option<OpSet>,
        /// Print a summary instead of the sentences.
        #[arg(long)]
        stats: bool,
        /// Passes over the training corpus.
        #[arg(long, default_value_t = 1)]
        repeat: usize,
    },
    /// Stream masked training sequences as JSON lines.
    Mask {
        #[arg(long)]
        p_mask: Option<f64>,
        #[arg(long)]
        stats: bool,
        #[arg(long, default_value_t = 1)]
        repeat: usize,
    },
    /// Train once per lambda and summarize.
    Sweep {
        /// Comma-separated values, e.g. `0.01,0.1,1`.
        #[arg(long, value_delimiter = ',', required = true)]
        lambdas: Vec<f64>,
    },
    /// Finite-difference check of every loss gradient.
    Gradcheck {
        /// Consecutive seeds starting at `--seed` (default 0).
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    let bits: u32 = s.parse().map_err(|_| format!("expected 32 or 64, got {s:?}"))?;
    Precision::try_from(bits)
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.train.seed = seed;
    }
    if let Some(out) = &c.out {
        cfg.run.out_dir = out.clone();
    }
    if let Some(p) = c.precision {
        cfg.run.precision = p;
    }
    Ok(cfg)
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn gen(
    mut cfg: ExperimentConfig,
    num_examples: Option<usize>,
    num_classes: Option<usize>,
    vocab_size: Option<usize>,
    noise: Option<f64>,
) -> Result<()> {
    let s = &mut cfg.synthetic;
    if let Some(n) = num_examples {
        s.num_train = n;
    }
    if let Some(k) = num_classes {
        s.num_classes = k;
    }
    if let Some(v) = vocab_size {
        s.vocab_size = v;
    }
    if let Some(x) = noise {
        s.noise = x;
    }
    s.validate()?;
    let dir = &cfg.run.out_dir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let files = write_synthetic(&cfg.synthetic, cfg.train.seed, dir)?;
    print_json(&files)
}

fn train(mut cfg: ExperimentConfig, regime: Option<Regime>, lambda: Option<f64>, run_name: Option<String>) -> Result<()> {
    if let Some(r) = regime {
        cfg.train.regime = r;
    }
    if let Some(l) = lambda {
        cfg.train.lambda = l;
    }
    if let Some(n) = run_name {
        cfg.run.run_name = n;
    }
    cfg.validate()?;
    let summary = runner::run(&cfg)?;
    log::info!("artifacts in {}", cfg.run_dir().display());
    print_json(&summary)
}

fn augment(cfg: ExperimentConfig, ops: Option<OpSet>, stats: bool, repeat: usize) -> Result<()> {
    let ops = ops.unwrap_or_else(|| cfg.train.active_ops.clone());
    let (examples, lexicon) = training_examples(&cfg)?;
    let stopwords = match &cfg.run.stopwords_path {
        Some(p) => load_stopwords(p)?,
        None => StopwordSet::english(),
    };
    let ctx = AugmentContext {
        lexicon: &lexicon,
        stopwords: &stopwords,
        rate: cfg.train.aug_rate,
        p_delete: cfg.train.p_delete,
    };
    let mut rng = stream_rng(cfg.train.seed, Stream::SslData);
    let mut counts: BTreeMap<String, usize> = ops.ops().iter().map(|o| (o.name().to_string(), 0)).collect();
    let (mut skipped, mut len_in, mut len_out) = (0usize, 0usize, 0usize);
    let mut out = BufWriter::new(io::stdout().lock());
    for _ in 0..repeat {
        for ex in &examples {
            let Some(inst) = make_satp_instance(&ex.sentence, &ops, &ctx, &mut rng)? else {
                skipped += 1;
                continue;
            };
            *counts.entry(inst.op.name().to_string()).or_default() += 1;
            len_in += ex.sentence.len();
            len_out += inst.sentence.len();
            if !stats {
                writeln!(out, "{}", json!({ "tokens": inst.sentence.tokens(), "op": inst.op.name() }))?;
            }
        }
    }
    if stats {
        let total: usize = counts.values().sum();
        let freq: BTreeMap<&String, f64> = counts.iter().map(|(k, &v)| (k, v as f64 / total.max(1) as f64)).collect();
        let report = json!({
            "instances": total,
            "skipped": skipped,
            "op_counts": counts,
            "op_frequencies": freq,
            "mean_length_in": len_in as f64 / total.max(1) as f64,
            "mean_length_out": len_out as f64 / total.max(1) as f64,
        });
        writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    }
    out.flush()?;
    Ok(())
}

fn mask(cfg: ExperimentConfig, p_mask: Option<f64>, stats: bool, repeat: usize) -> Result<()> {
    let p = p_mask.unwrap_or(cfg.train.p_mask);
    let prep = prepare(&cfg)?;
    let mut rng = stream_rng(cfg.train.seed, Stream::SslData);
    let mut totals = MaskStats::default();
    let mut out = BufWriter::new(io::stdout().lock());
    for _ in 0..repeat {
        for ids in &prep.train.ids {
            let inst = mask_tokens(ids, p, &prep.vocab, &mut rng)?;
            totals.record(ids, inst.as_ref());
            if let (false, Some(inst)) = (stats, &inst) {
                writeln!(out, "{}", serde_json::to_string(inst)?)?;
            }
        }
    }
    if stats {
        let (m, r, k) = totals.branch_fractions();
        let report = json!({
            "p_mask": p,
            "counts": totals,
            "selected_fraction": totals.selected_fraction(),
            "mask_fraction": m,
            "random_fraction": r,
            "keep_fraction": k,
        });
        writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    }
    out.flush()?;
    Ok(())
}

fn gradcheck(first_seed: u64, seeds: u64, samples: usize) -> Result<bool> {
    let opts = GradCheckOptions {
        samples,
        ..GradCheckOptions::default()
    };
    let mut all_passed = true;
    for seed in first_seed..first_seed + seeds {
        for (name, r) in gradcheck_suite(seed, &opts)? {
            println!(
                "seed {seed} {name:<15} checked {:>4} max_rel {:.3e} mean_rel {:.3e} {}",
                r.checked,
                r.max_rel_error,
                r.mean_rel_error,
                if r.passed { "ok" } else { "FAILED" }
            );
            all_passed &= r.passed;
        }
    }
    Ok(all_passed)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(n) = cli.common.threads {
        // read once by the evaluation pool
        std::env::set_var(THREADS_ENV, n.to_string());
    }
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Gen {
            num_examples,
            num_classes,
            vocab_size,
            noise,
        } => gen(cfg, num_examples, num_classes, vocab_size, noise)?,
        Command::Train {
            regime,
            lambda,
            run_name,
        } => train(cfg, regime, lambda, run_name)?,
        Command::Evaluate { checkpoint, split } => {
            let path = checkpoint.unwrap_or_else(|| cfg.run_dir().join(CHECKPOINT_FILE));
            print_json(&evaluate_checkpoint(&cfg, &path, split)?)?;
        }
        Command::Augment { ops, stats, repeat } => augment(cfg, ops, stats, repeat)?,
        Command::Mask { p_mask, stats, repeat } => mask(cfg, p_mask, stats, repeat)?,
        Command::Sweep { lambdas } => {
            if lambdas.is_empty() {
                bail!("--lambdas needs at least one value");
            }
            print_json(&sweep(&cfg, &lambdas)?)?;
        }
        Command::Gradcheck { seeds, samples } => {
            return gradcheck(cli.common.seed.unwrap_or(0), seeds, samples);
        }
    }
    Ok(true)
}
