//! Training runs with a CSV log and periodic checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use hevrp_core::policy::{PolicyParams, Variant};
use hevrp_core::train::{EpochStats, Trainer};

use crate::checkpoint;
use crate::config::TrainFile;

pub const LOG_FILE: &str = "train-log.csv";
pub const FINAL_CHECKPOINT: &str = "policy.ckpt";

/// What a checkpoint was trained on; two ablation variants are comparable
/// only when these agree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainBudget(pub BTreeMap<String, String>);

const BUDGET_KEYS: [&str; 8] = ["epochs", "instances_per_epoch", "batch_size", "lr", "lr_decay", "customers", "vehicles", "stations"];

impl TrainBudget {
    pub fn of(file: &TrainFile) -> Self {
        let t = &file.train;
        let i = &file.instances;
        let values = [
            t.epochs.to_string(),
            t.instances_per_epoch.to_string(),
            t.batch_size.to_string(),
            t.lr.to_string(),
            t.lr_decay.to_string(),
            i.customers.to_string(),
            i.vehicles.to_string(),
            i.stations.to_string(),
        ];
        Self(BUDGET_KEYS.iter().map(|k| k.to_string()).zip(values).collect())
    }

    /// `None` when the metadata lacks any budget key.
    pub fn from_meta(meta: &BTreeMap<String, String>) -> Option<Self> {
        BUDGET_KEYS
            .iter()
            .map(|&k| meta.get(k).map(|v| (k.to_string(), v.clone())))
            .collect::<Option<BTreeMap<_, _>>>()
            .map(Self)
    }

    pub fn describe(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
    }
}

pub fn checkpoint_meta(file: &TrainFile, epochs_done: usize) -> BTreeMap<String, String> {
    let mut meta = TrainBudget::of(file).0;
    meta.insert("seed".into(), file.seed.to_string());
    meta.insert("init_seed".into(), file.init_seed().to_string());
    meta.insert("epochs_completed".into(), epochs_done.to_string());
    meta.insert("hevrp_version".into(), env!("CARGO_PKG_VERSION").into());
    meta
}

pub struct TrainOutcome {
    pub policy: PolicyParams,
    pub epochs: Vec<EpochStats>,
    pub checkpoint: PathBuf,
}

/// Trains from `file`, optionally as an ablation variant, writing the log and
/// checkpoints under `out_dir`.
pub fn run_training(file: &TrainFile, variant: Option<Variant>, out_dir: &Path, mut progress: impl FnMut(&EpochStats)) -> Result<TrainOutcome> {
    let mut file = file.clone();
    if let Some(v) = variant {
        file.policy = hevrp_core::policy::PolicyConfig::from(file.policy).with_variant(v).into();
    }
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    fs::write(out_dir.join("train-config.toml"), toml::to_string_pretty(&file)?)?;
    let policy = PolicyParams::new(file.policy_config(), file.init_seed())?;
    let mut trainer = Trainer::new(file.train_config(), policy)?;

    let log_path = out_dir.join(LOG_FILE);
    let mut log = csv::Writer::from_path(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    log.write_record(["epoch", "mean_cost", "baseline_cost", "grad_norm", "infeasible_rate"])?;
    log.flush()?;
    let every = file.train.checkpoint_every;
    let mut failure: Option<anyhow::Error> = None;
    let epochs = trainer.run(|st, params| {
        if failure.is_some() {
            return;
        }
        let mut step = || -> Result<()> {
            log.write_record([
                st.epoch.to_string(),
                format!("{:.6}", st.mean_cost),
                format!("{:.6}", st.baseline_cost),
                format!("{:.6e}", st.grad_norm),
                format!("{:.6}", st.infeasible_rate),
            ])?;
            log.flush()?;
            if every > 0 && (st.epoch + 1) % every == 0 {
                let path = out_dir.join(format!("epoch-{:04}.ckpt", st.epoch + 1));
                checkpoint::save(&path, params, checkpoint_meta(&file, st.epoch + 1))?;
            }
            Ok(())
        };
        if let Err(e) = step() {
            failure = Some(e);
        }
        progress(st);
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let path = out_dir.join(FINAL_CHECKPOINT);
    checkpoint::save(&path, &trainer.policy, checkpoint_meta(&file, epochs.len()))?;
    Ok(TrainOutcome {
        policy: trainer.policy,
        epochs,
        checkpoint: path,
    })
}
