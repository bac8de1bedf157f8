use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};

use clap::{Parser, Subcommand};
use mvps::commands::{cmd_eval, cmd_oracle, cmd_synth, cmd_train, make_scorer, Layout};
use mvps::{CliError, RunConfig};

static INTERRUPTED: AtomicBool = AtomicBool::new(false);

#[derive(Parser)]
#[command(name = "mvps", version, about = "Learned in-context prompt selection: data, training, evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// TOML file with run settings; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run directory holding data/, checkpoints/ and reports/.
    #[arg(long, global = true, default_value = "mvps-out")]
    out: PathBuf,
    /// `surrogate` or `external:CMD`.
    #[arg(long, global = true)]
    scorer: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic train and test embedding files.
    Synth,
    /// Meta-train the retriever.
    Train,
    /// Evaluate methods over a k sweep.
    Eval {
        /// Methods to evaluate (mvps, mvps_tta, topk, random, oracle).
        #[arg(long, value_delimiter = ',')]
        method: Vec<String>,
        #[arg(long = "k-list", value_delimiter = ',')]
        k_list: Vec<usize>,
        #[arg(long)]
        reps: Option<usize>,
        /// Defaults to <out>/checkpoints/best.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score every prompt subset of sampled test pools.
    Oracle,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.seed = cli.seed.unwrap_or(cfg.seed);
    cfg.threads = cli.threads.unwrap_or(cfg.threads);
    if let Some(s) = cli.scorer {
        cfg.scorer = s;
    }
    let mut checkpoint = None;
    if let Cmd::Eval { method, k_list, reps, checkpoint: ck } = &cli.command {
        if !method.is_empty() {
            cfg.methods = method.clone();
        }
        if !k_list.is_empty() {
            cfg.k_list = k_list.clone();
        }
        cfg.reps = reps.unwrap_or(cfg.reps);
        checkpoint = ck.clone();
    }
    cfg.validate()?;
    let out = Layout::new(&cli.out);
    match cli.command {
        Cmd::Synth => {
            let (train, test) = cmd_synth(&cfg, &out)?;
            println!("wrote {} and {}", train.display(), test.display());
        }
        Cmd::Train => {
            ctrlc::set_handler(|| INTERRUPTED.store(true, Ordering::Relaxed))
                .map_err(|e| CliError::Runtime(format!("installing interrupt handler: {e}")))?;
            let mut scorer = make_scorer(&cfg)?;
            let res = cmd_train(&cfg, &out, &mut *scorer, Some(&INTERRUPTED), true)?;
            let s = &res.summary;
            if s.interrupted {
                eprintln!("interrupted after {} epochs", s.epochs.len());
            }
            println!(
                "trained {} epochs, {} steps, best epoch {}; checkpoints in {}",
                s.epochs.len(),
                s.steps,
                s.best_epoch.map_or("-".into(), |e| e.to_string()),
                out.checkpoints().display()
            );
        }
        Cmd::Eval { .. } => {
            let report = cmd_eval(&cfg, &out, checkpoint.as_deref(), &|| make_scorer(&cfg))?;
            print!("{}", report.render());
        }
        Cmd::Oracle => {
            let mut scorer = make_scorer(&cfg)?;
            let summary = cmd_oracle(&cfg, &out, &mut *scorer)?;
            for t in &summary.tasks {
                println!(
                    "task {}: {} subsets, max {:.4}, min {:.4}, mean {:.4}, topk {:.4}, best {:?}",
                    t.task, t.subsets, t.max, t.min, t.mean, t.topk_reward, t.best
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
