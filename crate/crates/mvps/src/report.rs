//! CSV and JSON report files.

use std::fs;
use std::path::Path;

use mvps_core::baselines::OracleResult;
use mvps_core::training::TrainReport;
use serde::Serialize;

use crate::error::CliError;

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub mean_shaped_reward: f64,
    pub mean_raw_reward: f64,
    pub val_reward: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub config_hash: String,
    pub initial_val_reward: Option<f64>,
    pub best_epoch: Option<usize>,
    pub steps: u64,
    pub interrupted: bool,
    pub epochs: Vec<EpochRow>,
}

impl TrainSummary {
    pub fn new(report: &TrainReport, best_epoch: Option<usize>, steps: u64, config_hash: String) -> Self {
        TrainSummary {
            config_hash,
            initial_val_reward: report.initial_val_reward,
            best_epoch,
            steps,
            interrupted: report.interrupted,
            epochs: report
                .epochs
                .iter()
                .map(|e| EpochRow {
                    epoch: e.epoch,
                    mean_shaped_reward: e.mean_shaped_reward,
                    mean_raw_reward: e.mean_raw_reward,
                    val_reward: e.val_reward,
                    seconds: e.seconds,
                })
                .collect(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        write_csv(&dir.join("train_report.csv"), &self.epochs)?;
        write_json(&dir.join("train_report.json"), self)
    }
}

/// Score of one method at one `k` in one repetition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRow {
    pub method: String,
    pub k: usize,
    pub rep: usize,
    pub dice: f64,
    pub miou: f64,
}

/// Aggregate over repetitions; `std_*` is the sample standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreRow {
    pub method: String,
    pub k: usize,
    pub reps: usize,
    pub mean_dice: f64,
    pub std_dice: f64,
    pub mean_miou: f64,
    pub std_miou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    pub config_hash: String,
    pub rows: Vec<ScoreRow>,
    #[serde(skip)]
    pub runs: Vec<RunRow>,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl ScoreReport {
    /// Aggregates `runs` per (method, k) in first-appearance order.
    pub fn from_runs(runs: Vec<RunRow>, config_hash: String) -> Self {
        let mut keys: Vec<(String, usize)> = Vec::new();
        for r in &runs {
            if !keys.iter().any(|(m, k)| *m == r.method && *k == r.k) {
                keys.push((r.method.clone(), r.k));
            }
        }
        let rows = keys
            .into_iter()
            .map(|(method, k)| {
                let sel: Vec<&RunRow> = runs.iter().filter(|r| r.method == method && r.k == k).collect();
                let (mean_dice, std_dice) = mean_std(&sel.iter().map(|r| r.dice).collect::<Vec<_>>());
                let (mean_miou, std_miou) = mean_std(&sel.iter().map(|r| r.miou).collect::<Vec<_>>());
                ScoreRow { method, k, reps: sel.len(), mean_dice, std_dice, mean_miou, std_miou }
            })
            .collect();
        ScoreReport { config_hash, rows, runs }
    }

    pub fn row(&self, method: &str, k: usize) -> Option<&ScoreRow> {
        self.rows.iter().find(|r| r.method == method && r.k == k)
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        write_csv(&dir.join("score_report.csv"), &self.rows)?;
        write_csv(&dir.join("score_runs.csv"), &self.runs)?;
        write_json(&dir.join("score_report.json"), self)
    }

    /// Plain-text table, rounded for reading.
    pub fn render(&self) -> String {
        let mut s = format!("{:<10} {:>3} {:>5} {:>16} {:>16}\n", "method", "k", "reps", "dice", "miou");
        for r in &self.rows {
            s += &format!(
                "{:<10} {:>3} {:>5} {:>8.4} ± {:<6.4} {:>8.4} ± {:<6.4}\n",
                r.method, r.k, r.reps, r.mean_dice, r.std_dice, r.mean_miou, r.std_miou
            );
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleRow {
    pub task: usize,
    /// Support positions joined by `;`.
    pub subset: String,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleTaskSummary {
    pub task: usize,
    pub n: usize,
    pub k: usize,
    pub subsets: usize,
    pub best: Vec<usize>,
    pub max: f64,
    pub min: f64,
    pub mean: f64,
    pub topk_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSummary {
    pub config_hash: String,
    pub tasks: Vec<OracleTaskSummary>,
}

pub fn oracle_rows(task: usize, res: &OracleResult) -> Vec<OracleRow> {
    res.table
        .iter()
        .map(|(s, r)| OracleRow {
            task,
            subset: s.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(";"),
            reward: *r,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn rows_group_by_method_and_k() {
        let run = |method: &str, k, rep, dice| RunRow { method: method.into(), k, rep, dice, miou: dice / 2.0 };
        let rep = ScoreReport::from_runs(
            vec![run("topk", 2, 0, 0.2), run("random", 2, 0, 0.1), run("topk", 2, 1, 0.4), run("random", 2, 1, 0.3)],
            String::new(),
        );
        assert_eq!(rep.rows.len(), 2);
        let t = rep.row("topk", 2).unwrap();
        assert_eq!(t.reps, 2);
        assert!((t.mean_dice - 0.3).abs() < 1e-15);
        assert!(rep.render().contains("random"));
    }
}
