//! The `synth`, `train`, `eval` and `oracle` jobs.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::thread;
use std::time::Instant;

use mvps_core::baselines::{exhaustive_oracle, random_select, topk_for_episode};
use mvps_core::datamodel::{sample_meta_task, split_heldout, Dataset, Episode, Phase};
use mvps_core::environment::{reward, score_selection, synth_generate, Score, Scorer, Surrogate};
use mvps_core::retriever::Retriever;
use mvps_core::rng::{self, derive_seed, Rng};
use mvps_core::training::{meta_train, policy_topk, tta_select, EpochStats, TrainHooks, TtaConfig};

use crate::checkpoint::Checkpoint;
use crate::config::{RunConfig, ScorerSpec};
use crate::embfile::{load_manifest, write_with_manifest};
use crate::error::{CliError, FormatError};
use crate::external::ExternalScorer;
use crate::report::{
    oracle_rows, write_csv, write_json, OracleSummary, OracleTaskSummary, RunRow, ScoreReport, TrainSummary,
};

const MODEL_STREAM: u64 = 99;
const EVAL_STREAM: u64 = 1000;
const ORACLE_STREAM: u64 = 2000;

pub type BoxedScorer = Box<dyn Scorer + Send>;

/// Builds fresh scorers; evaluation threads each get their own.
pub type ScorerFactory<'a> = dyn Fn() -> Result<BoxedScorer, CliError> + Sync + 'a;

pub fn make_scorer(cfg: &RunConfig) -> Result<BoxedScorer, CliError> {
    Ok(match ScorerSpec::parse(&cfg.scorer)? {
        ScorerSpec::Surrogate => Box::new(Surrogate(cfg.surrogate())),
        ScorerSpec::External(cmd) => Box::new(ExternalScorer::spawn(&cmd)?),
    })
}

/// Directory layout of a run.
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn best_checkpoint(&self) -> PathBuf {
        self.checkpoints().join("best.ckpt")
    }

    pub fn last_checkpoint(&self) -> PathBuf {
        self.checkpoints().join("last.ckpt")
    }

    fn ensure(&self, dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(dir).map_err(|e| FormatError::Io { path: dir.to_path_buf(), source: e }.into())
    }

    /// Writes the effective configuration next to the outputs.
    pub fn snapshot(&self, cfg: &RunConfig) -> Result<(), CliError> {
        self.ensure(&self.root)?;
        let path = self.root.join("config.toml");
        fs::write(&path, cfg.to_toml()).map_err(|e| FormatError::Io { path, source: e }.into())
    }
}

/// Generates the synthetic train and test files; returns their manifests.
pub fn cmd_synth(cfg: &RunConfig, out: &Layout) -> Result<(PathBuf, PathBuf), CliError> {
    cfg.validate()?;
    out.snapshot(cfg)?;
    let ds = synth_generate(&cfg.synth_spec())?;
    let n_train = cfg.train_records;
    let train = ds.subset(format!("{}-train", cfg.dataset_name), 0..n_train)?;
    let train = split_heldout(&train, &cfg.heldout_labels.iter().copied().collect())
        .map_err(|e| CliError::config(format!("held-out labels: {e}")))?;
    let test = ds.subset(format!("{}-test", cfg.dataset_name), n_train..ds.len())?;
    let a = write_with_manifest(&train, &out.data(), "train")?;
    let b = write_with_manifest(&test, &out.data(), "test")?;
    Ok((a, b))
}

fn load_checked(path: &Path, d: usize) -> Result<Dataset, CliError> {
    let ds = load_manifest(path)?;
    if ds.d() != d {
        return Err(FormatError::DimensionMismatch { expected: d, found: ds.d() }.into());
    }
    Ok(ds)
}

pub struct TrainOutput {
    pub summary: TrainSummary,
    pub best: Checkpoint,
    pub last: Checkpoint,
}

/// Meta-trains a fresh retriever on the training manifest and writes
/// `checkpoints/{best,last}.ckpt` and `reports/train_report.{csv,json}`.
pub fn cmd_train(
    cfg: &RunConfig,
    out: &Layout,
    scorer: &mut dyn Scorer,
    interrupt: Option<&AtomicBool>,
    progress: bool,
) -> Result<TrainOutput, CliError> {
    cfg.validate()?;
    out.snapshot(cfg)?;
    let ds = load_checked(&cfg.train_manifest(&out.root), cfg.d)?;
    let mut model = Retriever::new(cfg.retriever(), derive_seed(cfg.seed, MODEL_STREAM))?;
    let initial = model.clone();
    let started = Instant::now();
    let clock = || started.elapsed().as_secs_f64();
    let mut log = |e: &EpochStats| {
        if progress {
            eprintln!(
                "epoch {:>3}  shaped {:+.4}  raw {:.4}  val {:.4}  {:.1}s",
                e.epoch, e.mean_shaped_reward, e.mean_raw_reward, e.val_reward, e.seconds
            );
        }
    };
    let hooks = TrainHooks { clock: Some(&clock), interrupt, on_epoch: Some(&mut log) };
    let outcome = meta_train(&mut model, &ds, &cfg.train(), scorer, hooks)?;

    let mut best_model = initial;
    if let Some(p) = &outcome.best_params {
        best_model.params_mut().load_values(p)?;
    }
    let best = Checkpoint { model: best_model, step: outcome.steps };
    let last = Checkpoint { model, step: outcome.steps };
    out.ensure(&out.checkpoints())?;
    best.save(&out.best_checkpoint())?;
    last.save(&out.last_checkpoint())?;
    let summary = TrainSummary::new(&outcome.report, outcome.best_epoch, outcome.steps, cfg.hash());
    out.ensure(&out.reports())?;
    summary.write(&out.reports())?;
    Ok(TrainOutput { summary, best, last })
}

/// Folds `parts` into a seed, one derivation per part.
fn stream(seed: u64, parts: &[u64]) -> Rng {
    rng::seeded(parts.iter().fold(seed, |s, &p| derive_seed(s, p)))
}

struct EvalJob<'a> {
    cfg: &'a RunConfig,
    test: &'a Dataset,
    model: Option<&'a Retriever>,
}

impl EvalJob<'_> {
    fn select(
        &self,
        method: &str,
        ep: &Episode,
        k: usize,
        rng: &mut Rng,
        scorer: &mut dyn Scorer,
    ) -> Result<Vec<usize>, CliError> {
        let model = || self.model.ok_or_else(|| CliError::Runtime(format!("method {method} needs a checkpoint")));
        Ok(match method {
            "mvps" => policy_topk(model()?, ep, k)?,
            "mvps_tta" => {
                let n = match self.cfg.tta_seed_labeled {
                    0 => ep.query.len(),
                    n => n.min(ep.query.len()),
                };
                let tta = TtaConfig {
                    lr: self.cfg.tta_lr,
                    rounds: self.cfg.tta_rounds,
                    set_size: k,
                    samples: self.cfg.tta_samples,
                    baselines: self.cfg.baselines,
                };
                tta_select(model()?, ep, ep.query[..n].to_vec(), k, &tta, scorer, rng)?
            }
            "topk" => topk_for_episode(ep, k)?,
            "random" => random_select(ep.support.len(), k, rng)?,
            "oracle" => exhaustive_oracle(ep, k, scorer, self.cfg.oracle_cap as u128)?.best,
            other => return Err(CliError::config(format!("unknown method `{other}`"))),
        })
    }

    /// Every (method, k) score of one repetition, method-major.
    fn repetition(&self, rep: usize, scorer: &mut dyn Scorer) -> Result<Vec<RunRow>, CliError> {
        let cfg = self.cfg;
        let rep_seed = derive_seed(derive_seed(cfg.seed, EVAL_STREAM), rep as u64);
        let mut task_rng = rng::seeded(rep_seed);
        let episodes = (0..cfg.eval_tasks)
            .map(|_| {
                let task = sample_meta_task(self.test, cfg.eval_pool, cfg.eval_queries, Phase::Train, &mut task_rng)?;
                Ok(self.test.materialize(&task)?)
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let mut rows = Vec::new();
        for method in &cfg.methods {
            let tag = method.bytes().fold(0u64, |h, b| rng::splitmix64(h ^ u64::from(b)));
            for &k in &cfg.k_list {
                let mut total = Score { dice: 0.0, miou: 0.0 };
                for (t, ep) in episodes.iter().enumerate() {
                    let mut rng = stream(rep_seed, &[tag, k as u64, t as u64]);
                    let picks = self.select(method, ep, k, &mut rng, scorer)?;
                    let s = score_selection(&picks, ep, scorer)?;
                    total.dice += s.dice;
                    total.miou += s.miou;
                }
                let n = episodes.len() as f64;
                rows.push(RunRow { method: method.clone(), k, rep, dice: total.dice / n, miou: total.miou / n });
            }
        }
        Ok(rows)
    }
}

/// Runs the k-sweep for every configured method and writes
/// `reports/score_report.{csv,json}` and `reports/score_runs.csv`.
///
/// Repetitions are spread over `cfg.threads` workers; results do not depend
/// on the thread count.
pub fn cmd_eval(
    cfg: &RunConfig,
    out: &Layout,
    checkpoint: Option<&Path>,
    scorers: &ScorerFactory<'_>,
) -> Result<ScoreReport, CliError> {
    cfg.validate()?;
    out.snapshot(cfg)?;
    let test = load_checked(&cfg.test_manifest(&out.root), cfg.d)?;
    let needs_model = cfg.methods.iter().any(|m| m.starts_with("mvps"));
    let model = if needs_model {
        let path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| out.best_checkpoint());
        let ck = Checkpoint::load(&path)?;
        if ck.model.config().d_in != test.d() {
            return Err(FormatError::DimensionMismatch { expected: test.d(), found: ck.model.config().d_in }.into());
        }
        Some(ck.model)
    } else {
        None
    };
    let job = EvalJob { cfg, test: &test, model: model.as_ref() };
    let workers = cfg.threads.min(cfg.reps);
    let mut per_rep: Vec<Option<Vec<RunRow>>> = vec![None; cfg.reps];
    thread::scope(|s| -> Result<(), CliError> {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let job = &job;
                s.spawn(move || -> Result<Vec<(usize, Vec<RunRow>)>, CliError> {
                    let mut scorer = scorers()?;
                    (w..cfg.reps).step_by(workers).map(|rep| Ok((rep, job.repetition(rep, &mut *scorer)?))).collect()
                })
            })
            .collect();
        for h in handles {
            for (rep, rows) in h.join().map_err(|_| CliError::Runtime("evaluation worker panicked".into()))?? {
                per_rep[rep] = Some(rows);
            }
        }
        Ok(())
    })?;
    let per_rep: Vec<Vec<RunRow>> = per_rep.into_iter().map(|r| r.expect("every repetition ran")).collect();
    let cells = cfg.methods.len() * cfg.k_list.len();
    let runs = (0..cells).flat_map(|c| per_rep.iter().map(move |rows| rows[c].clone())).collect();
    let report = ScoreReport::from_runs(runs, cfg.hash());
    out.ensure(&out.reports())?;
    report.write(&out.reports())?;
    Ok(report)
}

/// Scores every `oracle_k`-subset of `oracle_tasks` test pools and writes
/// `reports/oracle_table.csv` and `reports/oracle_summary.json`.
pub fn cmd_oracle(cfg: &RunConfig, out: &Layout, scorer: &mut dyn Scorer) -> Result<OracleSummary, CliError> {
    cfg.validate()?;
    out.snapshot(cfg)?;
    let test = load_checked(&cfg.test_manifest(&out.root), cfg.d)?;
    let mut rng = rng::seeded(derive_seed(cfg.seed, ORACLE_STREAM));
    let mut rows = Vec::new();
    let mut tasks = Vec::new();
    for t in 0..cfg.oracle_tasks {
        let task = sample_meta_task(&test, cfg.oracle_pool, cfg.eval_queries, Phase::Train, &mut rng)?;
        let ep = test.materialize(&task)?;
        let res = exhaustive_oracle(&ep, cfg.oracle_k, scorer, cfg.oracle_cap as u128)?;
        let rewards: Vec<f64> = res.table.iter().map(|r| r.1).collect();
        tasks.push(OracleTaskSummary {
            task: t,
            n: cfg.oracle_pool,
            k: cfg.oracle_k,
            subsets: rewards.len(),
            best: res.best.clone(),
            max: res.best_reward,
            min: res.worst_reward(),
            mean: rewards.iter().sum::<f64>() / rewards.len() as f64,
            topk_reward: reward(&topk_for_episode(&ep, cfg.oracle_k)?, &ep, scorer)?,
        });
        rows.extend(oracle_rows(t, &res));
    }
    let summary = OracleSummary { config_hash: cfg.hash(), tasks };
    out.ensure(&out.reports())?;
    write_csv(&out.reports().join("oracle_table.csv"), &rows)?;
    write_json(&out.reports().join("oracle_summary.json"), &summary)?;
    Ok(summary)
}
