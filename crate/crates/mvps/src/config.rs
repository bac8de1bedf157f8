//! Flat key/value run configuration, read from TOML.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use mvps_core::environment::{SurrogateParams, SynthSpec};
use mvps_core::retriever::RetrieverConfig;
use mvps_core::training::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const METHODS: [&str; 5] = ["mvps", "mvps_tta", "topk", "random", "oracle"];

/// Every tunable of a run. Unknown keys are rejected when parsing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: usize,
    /// `surrogate` or `external:<command>`.
    pub scorer: String,

    // synthetic data
    pub dataset_name: String,
    pub classes: u16,
    pub domains: u16,
    pub d: usize,
    /// Records in the training file.
    pub train_records: usize,
    /// Records in the test file, generated after the training records.
    pub test_records: usize,
    pub sigma: f64,
    pub mask_h: usize,
    pub mask_w: usize,
    pub heldout_labels: Vec<u16>,
    /// Empty means `<out>/data/train.json`.
    pub train_manifest: String,
    /// Empty means `<out>/data/test.json`.
    pub test_manifest: String,

    // retriever
    pub d_model: usize,
    pub n_heads: usize,
    pub n_encoder: usize,
    pub n_decoder: usize,
    pub d_ff: usize,
    pub max_support: usize,
    pub max_query: usize,
    pub init_std: f64,
    pub identity_init: bool,

    // training
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub tasks_per_epoch: usize,
    pub mixup_ratio: f64,
    pub mixup_max_lambda: f64,
    pub k_train: usize,
    pub baselines: usize,
    pub n_support: usize,
    pub n_query: usize,
    pub validation_tasks: usize,
    pub validation_heldout_fraction: f64,

    // surrogate scorer
    pub w_sim: f64,
    pub w_dom: f64,
    pub scorer_seed: u64,

    // evaluation
    pub methods: Vec<String>,
    pub k_list: Vec<usize>,
    pub reps: usize,
    /// Test tasks averaged within one repetition.
    pub eval_tasks: usize,
    pub eval_pool: usize,
    pub eval_queries: usize,
    pub tta_lr: f64,
    pub tta_rounds: usize,
    /// Policy samples per adaptation step.
    pub tta_samples: usize,
    /// Labeled query items the adaptation starts from; 0 takes the whole
    /// query set.
    pub tta_seed_labeled: usize,

    // oracle study
    pub oracle_pool: usize,
    pub oracle_k: usize,
    pub oracle_tasks: usize,
    pub oracle_cap: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let r = RetrieverConfig::default();
        let s = SurrogateParams::default();
        let synth = SynthSpec::default();
        RunConfig {
            seed: 0,
            threads: 1,
            scorer: "surrogate".into(),
            dataset_name: synth.name,
            classes: synth.classes,
            domains: synth.domains,
            d: synth.d,
            train_records: 4500,
            test_records: 1500,
            sigma: synth.sigma,
            mask_h: synth.mask_h,
            mask_w: synth.mask_w,
            heldout_labels: vec![6, 7],
            train_manifest: String::new(),
            test_manifest: String::new(),
            d_model: r.d_model,
            n_heads: r.n_heads,
            n_encoder: r.n_encoder,
            n_decoder: r.n_decoder,
            d_ff: r.d_ff,
            max_support: r.max_support,
            max_query: r.max_query,
            init_std: r.init_std,
            identity_init: r.identity_init,
            lr: t.lr,
            batch_size: t.batch_size,
            epochs: t.epochs,
            tasks_per_epoch: t.tasks_per_epoch,
            mixup_ratio: t.mixup_ratio,
            mixup_max_lambda: t.mixup_max_lambda,
            k_train: t.k_train,
            baselines: t.baselines,
            n_support: t.n_support,
            n_query: t.n_query,
            validation_tasks: t.validation_tasks,
            validation_heldout_fraction: t.validation_heldout_fraction,
            w_sim: s.w_sim,
            w_dom: s.w_dom,
            scorer_seed: s.seed,
            methods: vec!["mvps".into(), "topk".into(), "random".into()],
            k_list: vec![2, 4, 8, 16, 32],
            reps: 30,
            eval_tasks: 10,
            eval_pool: 1000,
            eval_queries: 100,
            tta_lr: t.tta_lr,
            tta_rounds: 10,
            tta_samples: 16,
            tta_seed_labeled: 0,
            oracle_pool: 100,
            oracle_k: 2,
            oracle_tasks: 1,
            oracle_cap: 10_000,
        }
    }
}

impl RunConfig {
    /// The desk-scale setup: pools of 50, query sets of 20, a 3000/1000
    /// train/test split of one 4000-record synthetic draw.
    pub fn desk() -> Self {
        RunConfig {
            train_records: 3000,
            test_records: 1000,
            lr: 1e-3,
            batch_size: 16,
            baselines: 4,
            n_support: 50,
            n_query: 20,
            tta_lr: 1e-4,
            eval_pool: 50,
            eval_queries: 20,
            ..RunConfig::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        RunConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the TOML snapshot, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            name: self.dataset_name.clone(),
            classes: self.classes,
            domains: self.domains,
            d: self.d,
            records: self.train_records + self.test_records,
            sigma: self.sigma,
            seed: self.seed,
            mask_h: self.mask_h,
            mask_w: self.mask_w,
        }
    }

    pub fn retriever(&self) -> RetrieverConfig {
        RetrieverConfig {
            d_in: self.d,
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_encoder: self.n_encoder,
            n_decoder: self.n_decoder,
            d_ff: self.d_ff,
            max_support: self.max_support,
            max_query: self.max_query,
            init_std: self.init_std,
            identity_init: self.identity_init,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            tasks_per_epoch: self.tasks_per_epoch,
            mixup_ratio: self.mixup_ratio,
            mixup_max_lambda: self.mixup_max_lambda,
            k_train: self.k_train,
            seed: self.seed,
            tta_lr: self.tta_lr,
            baselines: self.baselines,
            n_support: self.n_support,
            n_query: self.n_query,
            validation_tasks: self.validation_tasks,
            validation_heldout_fraction: self.validation_heldout_fraction,
        }
    }

    pub fn surrogate(&self) -> SurrogateParams {
        SurrogateParams { w_sim: self.w_sim, w_dom: self.w_dom, seed: self.scorer_seed }
    }

    pub fn train_manifest(&self, out: &Path) -> PathBuf {
        manifest_or(&self.train_manifest, out, "train")
    }

    pub fn test_manifest(&self, out: &Path) -> PathBuf {
        manifest_or(&self.test_manifest, out, "test")
    }

    /// Checks every value before any work starts.
    pub fn validate(&self) -> Result<(), CliError> {
        let wrap = |e: mvps_core::Error| CliError::config(e.to_string());
        self.synth_spec().validate().map_err(wrap)?;
        self.retriever().validate().map_err(wrap)?;
        self.train().validate().map_err(wrap)?;
        self.surrogate().validate().map_err(wrap)?;
        if self.threads == 0 {
            return Err(CliError::config("threads must be at least 1"));
        }
        if self.train_records == 0 || self.test_records == 0 {
            return Err(CliError::config("train_records and test_records must be positive"));
        }
        if let Some(&l) = self.heldout_labels.iter().find(|&&l| l >= self.classes) {
            return Err(CliError::config(format!("held-out label {l} is not below classes = {}", self.classes)));
        }
        if self.heldout_labels.iter().collect::<BTreeSet<_>>().len() == self.classes as usize {
            return Err(CliError::config("every class is held out; no training labels remain"));
        }
        if let Some(m) = self.methods.iter().find(|m| !METHODS.contains(&m.as_str())) {
            return Err(CliError::config(format!("unknown method `{m}`; expected one of {}", METHODS.join(", "))));
        }
        if self.methods.is_empty() || self.k_list.is_empty() {
            return Err(CliError::config("methods and k_list must be nonempty"));
        }
        for (name, v) in [
            ("reps", self.reps),
            ("eval_tasks", self.eval_tasks),
            ("eval_pool", self.eval_pool),
            ("eval_queries", self.eval_queries),
            ("tta_samples", self.tta_samples),
            ("oracle_pool", self.oracle_pool),
            ("oracle_k", self.oracle_k),
            ("oracle_tasks", self.oracle_tasks),
        ] {
            if v == 0 {
                return Err(CliError::config(format!("{name} must be positive")));
            }
        }
        if let Some(&k) = self.k_list.iter().find(|&&k| k == 0 || k > self.eval_pool) {
            return Err(CliError::config(format!("k = {k} is outside 1..={}", self.eval_pool)));
        }
        if self.tta_seed_labeled > self.eval_queries {
            return Err(CliError::config("tta_seed_labeled exceeds eval_queries"));
        }
        if self.oracle_k > self.oracle_pool {
            return Err(CliError::config("oracle_k exceeds oracle_pool"));
        }
        ScorerSpec::parse(&self.scorer)?;
        Ok(())
    }
}

fn manifest_or(explicit: &str, out: &Path, stem: &str) -> PathBuf {
    if explicit.is_empty() {
        out.join("data").join(format!("{stem}.json"))
    } else {
        PathBuf::from(explicit)
    }
}

/// Which scorer backs rewards.
#[derive(Debug, Clone, PartialEq)]
pub enum ScorerSpec {
    Surrogate,
    External(String),
}

impl ScorerSpec {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        match text.split_once(':') {
            _ if text == "surrogate" => Ok(ScorerSpec::Surrogate),
            Some(("external", cmd)) if !cmd.trim().is_empty() => Ok(ScorerSpec::External(cmd.to_owned())),
            _ => Err(CliError::config(format!("scorer `{text}`: expected `surrogate` or `external:CMD`"))),
        }
    }
}
