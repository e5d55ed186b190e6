use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use casejudge::checkpoint::Checkpoint;
use casejudge::config::TrainConfig;
use casejudge::corpus::{load_cases, save_cases, synth_generate, Case};
use casejudge::train::{
    evaluate_checkpoint, format_ablation_table, format_hop_table, hop_sweep, kfold_splits, run_ablations, split_cases,
    standard_ablations, train, EvalReport, Splits,
};

#[derive(Parser)]
#[command(
    name = "casejudge",
    version,
    about = "Claim-level judgment prediction over court debates"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus as JSON lines.
    Generate {
        #[arg(long, default_value_t = 13)]
        seed: u64,
        #[arg(long, default_value_t = 2500)]
        cases: usize,
        #[arg(long)]
        out: PathBuf,
        /// Config whose `[synth]` table sets the generator profile.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a model and save the best checkpoint.
    Train {
        #[command(flatten)]
        opts: TrainOpts,
        #[arg(long)]
        out: PathBuf,
        /// Also write per-epoch reports and the test evaluation here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Run k-fold cross-validation over `--corpus` instead of one split.
        /// Fold `i` is saved next to `--out` with a `.fold<i>` suffix.
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Evaluate a checkpoint on a corpus.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train the full model and each single-component ablation.
    Ablate {
        #[command(flatten)]
        opts: TrainOpts,
        /// Comma-separated seeds.
        #[arg(long, default_value = "1,2,3", value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train and evaluate one model per hop count.
    Hops {
        #[command(flatten)]
        opts: TrainOpts,
        #[arg(long, default_value_t = 1)]
        min: usize,
        #[arg(long, default_value_t = 6)]
        max: usize,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Finite-difference gradient checks of every primitive and the model.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Serve predictions over HTTP.
    Serve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

#[derive(Args)]
struct TrainOpts {
    /// TOML config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Single corpus, split by the configured fractions.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    word_dim: Option<usize>,
    #[arg(long)]
    role_dim: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    hops: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    drop_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_role: bool,
    #[arg(long)]
    no_utterance_memory: bool,
    #[arg(long)]
    no_fact_memory: bool,
    #[arg(long)]
    no_self_attention: bool,
    #[arg(long)]
    single_task: bool,
}

impl TrainOpts {
    fn config(&self) -> anyhow::Result<TrainConfig> {
        let mut c = match &self.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag.clone() { c.$($field).+ = v; })*
            };
        }
        set!(
            word_dim => model.word_dim,
            role_dim => model.role_dim,
            hidden => model.hidden,
            hops => model.hops,
            learning_rate => learning_rate,
            batch_size => batch_size,
            epochs => epochs,
            patience => patience,
            drop_rate => model.drop_rate,
            seed => seed,
        );
        for (p, slot) in [
            (&self.corpus, &mut c.corpus),
            (&self.train, &mut c.train_path),
            (&self.valid, &mut c.valid_path),
            (&self.test, &mut c.test_path),
        ] {
            if p.is_some() {
                *slot = p.clone();
            }
        }
        let a = &mut c.model.ablation;
        a.no_role |= self.no_role;
        a.no_utterance_memory |= self.no_utterance_memory;
        a.no_fact_memory |= self.no_fact_memory;
        a.no_self_attention |= self.no_self_attention;
        a.single_task |= self.single_task;
        c.validate()?;
        Ok(c)
    }
}

fn load(path: &Path) -> anyhow::Result<Vec<Case>> {
    load_cases(path).with_context(|| format!("loading {}", path.display()))
}

fn splits(c: &TrainConfig) -> anyhow::Result<Splits> {
    match (&c.train_path, &c.valid_path, &c.corpus) {
        (Some(train), Some(valid), _) => Ok(Splits {
            train: load(train)?,
            valid: load(valid)?,
            test: match &c.test_path {
                Some(p) => load(p)?,
                None => Vec::new(),
            },
        }),
        (None, None, Some(corpus)) => Ok(split_cases(&load(corpus)?, c.split, c.seed)),
        _ => bail!("give either --corpus, or --train and --valid (optionally --test)"),
    }
}

fn write_json(path: &Option<PathBuf>, value: &impl Serialize) -> anyhow::Result<()> {
    if let Some(p) = path {
        fs::write(p, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn summary(label: &str, r: &EvalReport) {
    let j = &r.judgment;
    println!(
        "{label}: claims {} micro F1 {:.4} macro F1 {:.4} (P {:.4} R {:.4})",
        j.claims, j.micro_f1, j.macro_f1, j.macro_precision, j.macro_recall
    );
    if let Some(f) = &r.facts {
        println!("{label}: facts micro F1 {:.4} macro F1 {:.4}", f.micro_f1, f.macro_f1);
    }
}

#[derive(Serialize)]
struct TrainReport<'a> {
    config: &'a TrainConfig,
    best_epoch: usize,
    epochs: &'a [casejudge::train::EpochReport],
    test: Option<EvalReport>,
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Generate {
            seed,
            cases,
            out,
            config,
        } => {
            anyhow::ensure!(cases >= 1, "--cases must be at least 1");
            let profile = match config {
                Some(p) => TrainConfig::load(p)?.synth,
                None => Default::default(),
            };
            let corpus = synth_generate(seed, cases, &profile);
            save_cases(&out, &corpus)?;
            println!("wrote {} cases to {}", corpus.len(), out.display());
        }
        Command::Train {
            opts,
            out,
            report,
            folds: Some(k),
        } => {
            let c = opts.config()?;
            let path = c
                .corpus
                .as_ref()
                .context("--folds needs a single --corpus to partition")?;
            let cases = load(path)?;
            let mut reports = Vec::new();
            for fold in 0..k {
                let s = kfold_splits(&cases, k, fold, c.seed)?;
                let outcome = train(&c, &s.train, &s.valid, |_| {})?;
                let fold_out = out.with_extension(format!("fold{fold}.json"));
                outcome.best.save(&fold_out)?;
                let r = evaluate_checkpoint(&outcome.best, &s.test)?;
                summary(&format!("fold {fold} (best epoch {})", outcome.best_epoch), &r);
                reports.push(r);
            }
            let mean = |f: &dyn Fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / k as f64;
            println!(
                "{k}-fold mean: micro F1 {:.4} macro F1 {:.4}",
                mean(&|r| r.judgment.micro_f1),
                mean(&|r| r.judgment.macro_f1)
            );
            write_json(&report, &reports)?;
        }
        Command::Train { opts, out, report, .. } => {
            let c = opts.config()?;
            let s = splits(&c)?;
            println!(
                "train {} / valid {} / test {} cases, variant {}",
                s.train.len(),
                s.valid.len(),
                s.test.len(),
                c.model.ablation.name()
            );
            let outcome = train(&c, &s.train, &s.valid, |e| {
                println!(
                    "epoch {:>3}  loss {:.4}  valid micro F1 {:.4}  macro F1 {:.4}{}  {:.1}s",
                    e.epoch,
                    e.train_loss,
                    e.valid.judgment.micro_f1,
                    e.valid.judgment.macro_f1,
                    e.valid
                        .facts
                        .as_ref()
                        .map_or(String::new(), |f| format!("  fact micro F1 {:.4}", f.micro_f1)),
                    e.seconds
                )
            })?;
            outcome.best.save(&out)?;
            println!("best epoch {} saved to {}", outcome.best_epoch, out.display());
            let test = if s.test.is_empty() {
                None
            } else {
                let r = evaluate_checkpoint(&outcome.best, &s.test)?;
                summary("test", &r);
                Some(r)
            };
            write_json(
                &report,
                &TrainReport {
                    config: &c,
                    best_epoch: outcome.best_epoch,
                    epochs: &outcome.epochs,
                    test,
                },
            )?;
        }
        Command::Eval {
            checkpoint,
            corpus,
            report,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let r = evaluate_checkpoint(&ck, &load(&corpus)?)?;
            summary("eval", &r);
            println!("confusion [gold][pred]: {:?}", r.judgment.confusion.0);
            write_json(&report, &r)?;
        }
        Command::Ablate { opts, seeds, report } => {
            let c = opts.config()?;
            let s = splits(&c)?;
            anyhow::ensure!(!s.test.is_empty(), "ablations are scored on a test split");
            let table = run_ablations(&c, &s, &standard_ablations(), &seeds, |r| {
                println!("{:<20} median micro F1 {:.4}", r.variant, r.median_micro_f1)
            })?;
            print!("{}", format_ablation_table(&table));
            write_json(&report, &table)?;
        }
        Command::Hops { opts, min, max, report } => {
            anyhow::ensure!(min >= 1 && min <= max, "need 1 <= --min <= --max");
            let c = opts.config()?;
            let s = splits(&c)?;
            anyhow::ensure!(!s.test.is_empty(), "the hop sweep is scored on a test split");
            let rows = hop_sweep(&c, &s, min..=max, |r| {
                println!("hops {} done in {:.1}s", r.hops, r.train_seconds)
            })?;
            print!("{}", format_hop_table(&rows));
            write_json(&report, &rows)?;
        }
        Command::Gradcheck { seeds, tolerance } => {
            let r = casejudge::gradcheck::run(seeds, tolerance)?;
            for c in &r.checks {
                println!(
                    "{:<24} max rel err {:.3e}  {}",
                    c.name,
                    c.max_relative_error,
                    if c.passed { "ok" } else { "FAIL" }
                );
            }
            println!("{} seeds in {:.1}s", seeds, r.seconds);
            if !r.passed() {
                bail!("gradient check failed");
            }
        }
        Command::Serve { checkpoint, host, port } => {
            let ck = Checkpoint::load(&checkpoint)?;
            tokio::runtime::Runtime::new()?.block_on(casejudge::serve::serve(ck, &host, port))?;
        }
    }
    Ok(())
}
