//! TOML configuration files for training and benchmarking.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use hevrp_core::env::EnvFlags;
use hevrp_core::instance::GeneratorConfig;
use hevrp_core::policy::PolicyConfig;
use hevrp_core::train::{InstanceSource, TrainConfig};

use crate::checkpoint::PolicyConfigDoc;

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvDoc {
    pub tw_hard: bool,
    pub depot_harbor: bool,
    pub full_recharge_minutes: f64,
    pub prune_detours: bool,
}

impl Default for EnvDoc {
    fn default() -> Self {
        EnvFlags::default().into()
    }
}

impl From<EnvFlags> for EnvDoc {
    fn from(f: EnvFlags) -> Self {
        Self {
            tw_hard: f.tw_hard,
            depot_harbor: f.depot_harbor,
            full_recharge_minutes: f.full_recharge_minutes,
            prune_detours: f.prune_detours,
        }
    }
}

impl From<EnvDoc> for EnvFlags {
    fn from(d: EnvDoc) -> Self {
        Self {
            tw_hard: d.tw_hard,
            depot_harbor: d.depot_harbor,
            full_recharge_minutes: d.full_recharge_minutes,
            prune_detours: d.prune_detours,
        }
    }
}

/// Synthetic instance family: customers, vehicles from the desk fleet, stations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstancesDoc {
    pub customers: usize,
    pub vehicles: usize,
    pub stations: usize,
}

impl Default for InstancesDoc {
    fn default() -> Self {
        Self {
            customers: 10,
            vehicles: 2,
            stations: 1,
        }
    }
}

impl InstancesDoc {
    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig::desk(self.customers, self.vehicles, self.stations)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainDoc {
    pub batch_size: usize,
    pub epochs: usize,
    pub instances_per_epoch: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub significance: f64,
    pub eval_size: usize,
    pub penalty_factor: f64,
    /// Write a checkpoint every this many epochs; 0 keeps only the final one.
    pub checkpoint_every: usize,
}

impl Default for TrainDoc {
    fn default() -> Self {
        let d = TrainConfig::desk();
        Self {
            batch_size: d.batch_size,
            epochs: d.epochs,
            instances_per_epoch: d.instances_per_epoch,
            lr: d.lr,
            lr_decay: d.lr_decay,
            significance: d.significance,
            eval_size: d.eval_size,
            penalty_factor: d.penalty_factor,
            checkpoint_every: 1,
        }
    }
}

/// Contents of a `train --config` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFile {
    pub seed: u64,
    /// Seed of the initial parameters; defaults to `seed`.
    pub init_seed: Option<u64>,
    pub policy: PolicyConfigDoc,
    pub train: TrainDoc,
    pub instances: InstancesDoc,
    pub env: EnvDoc,
}

impl Default for TrainFile {
    fn default() -> Self {
        Self {
            seed: 1,
            init_seed: None,
            policy: PolicyConfigDoc::default(),
            train: TrainDoc::default(),
            instances: InstancesDoc::default(),
            env: EnvDoc::default(),
        }
    }
}

impl TrainFile {
    pub fn policy_config(&self) -> PolicyConfig {
        self.policy.into()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            instances_per_epoch: self.train.instances_per_epoch,
            lr: self.train.lr,
            lr_decay: self.train.lr_decay,
            significance: self.train.significance,
            seed: self.seed,
            source: InstanceSource::Generate(self.instances.generator()),
            eval_size: self.train.eval_size,
            env: self.env.into(),
            penalty_factor: self.train.penalty_factor,
        }
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed.unwrap_or(self.seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    /// The trained policy, once per configured decode mode.
    Policy,
    Nearest,
    /// Nearest-feasible followed by local search.
    LocalSearch,
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecodeKind {
    Greedy,
    /// Best of each configured sample count.
    Sampling,
}

/// Benchmark, ablation and ratio-sweep settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Customer counts.
    pub sizes: Vec<usize>,
    pub vehicles: usize,
    pub stations: usize,
    /// Instances per seed and size.
    pub instances: usize,
    /// Each seed contributes its own block of instances.
    pub seeds: Vec<u64>,
    pub methods: Vec<MethodKind>,
    pub decode_modes: Vec<DecodeKind>,
    pub samples: Vec<usize>,
    /// Station-to-customer ratios for the sweep.
    pub ratios: Vec<f64>,
    pub out_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub local_search_budget: usize,
    pub exact_max_customers: usize,
    pub exact_node_limit: u64,
    pub env: EnvDoc,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![6, 10],
            vehicles: 2,
            stations: 1,
            instances: 100,
            seeds: vec![2024],
            methods: vec![MethodKind::Policy, MethodKind::Nearest, MethodKind::LocalSearch, MethodKind::Exact],
            decode_modes: vec![DecodeKind::Greedy, DecodeKind::Sampling],
            samples: vec![128],
            ratios: vec![0.02, 0.05, 0.10, 0.20],
            out_dir: PathBuf::from("results"),
            checkpoint: None,
            local_search_budget: 20_000,
            exact_max_customers: 6,
            exact_node_limit: 50_000_000,
            env: EnvDoc::default(),
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(!self.methods.is_empty(), "at least one method is required");
        ensure!(!self.seeds.is_empty(), "seeds must be listed explicitly");
        ensure!(!self.sizes.is_empty(), "at least one size is required");
        ensure!(self.instances > 0, "instances must be positive");
        ensure!(self.vehicles > 0, "vehicles must be positive");
        if self.methods.contains(&MethodKind::Policy) {
            ensure!(!self.decode_modes.is_empty(), "the policy method needs a decode mode");
            if self.decode_modes.contains(&DecodeKind::Sampling) {
                ensure!(!self.samples.is_empty() && self.samples.iter().all(|&s| s > 0), "sample counts must be positive");
            }
        }
        Ok(())
    }
}
