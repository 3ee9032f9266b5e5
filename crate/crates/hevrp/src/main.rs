use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use hevrp::bench::{self, AblationEntry, Report, RunMetadata};
use hevrp::checkpoint;
use hevrp::config::{read_toml, BenchConfig, TrainFile};
use hevrp::io;
use hevrp::training::{self, TrainBudget};
use hevrp_core::baselines::{local_search, nearest_feasible, solve_exact, ExactConfig, ExactOutcome};
use hevrp_core::env::EnvFlags;
use hevrp_core::instance::{generate_instance, GeneratorConfig};
use hevrp_core::policy::{DecodeMode, PolicyConfig, Variant};

#[derive(Parser)]
#[command(name = "hevrp", version, about = "Electric fleet routing with time windows: generate, train, solve, benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Greedy,
    Sampling,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineMethod {
    /// Nearest-feasible construction.
    Nn,
    /// Nearest-feasible followed by local search.
    Ls,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic instances as JSON.
    Generate {
        /// Customer count.
        #[arg(long)]
        size: usize,
        #[arg(long, default_value_t = 2)]
        vehicles: usize,
        #[arg(long, default_value_t = 1)]
        stations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of instances; more than one writes `instance-<k>.json` files into `--out`.
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy from a TOML config.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        ablation: AblationFlags,
    },
    /// Decode one instance with a trained policy.
    Solve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, value_enum, default_value = "greedy")]
        mode: Mode,
        #[arg(long, default_value_t = 128)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Benchmark methods on generated instance sets.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config's checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Overrides the config's output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Compare the four ablation variants; trains any variant without a checkpoint.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Training config for variants that need training.
        #[arg(long)]
        train_config: Option<PathBuf>,
        #[arg(long)]
        full: Option<PathBuf>,
        #[arg(long)]
        no_ee: Option<PathBuf>,
        #[arg(long)]
        no_twe: Option<PathBuf>,
        #[arg(long)]
        no_hd: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Policy cost and time across station-to-customer ratios.
    RatioSweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Solve a small instance to optimality.
    Oracle {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, default_value_t = 8)]
        max_customers: usize,
        #[arg(long, default_value_t = 50_000_000)]
        node_limit: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a non-neural baseline on one instance.
    Baseline {
        #[arg(long, value_enum)]
        method: BaselineMethod,
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, default_value_t = 20_000)]
        budget: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a solution file against an instance.
    Verify {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        solution: PathBuf,
    },
}

#[derive(clap::Args)]
struct AblationFlags {
    /// Drop edge features from the encoder.
    #[arg(long)]
    no_ee: bool,
    /// Drop the time-window graph attention branch.
    #[arg(long)]
    no_twe: bool,
    /// Replace the vehicle decoder by round-robin.
    #[arg(long)]
    no_hd: bool,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Generate {
            size,
            vehicles,
            stations,
            seed,
            count,
            out,
        } => generate(size, vehicles, stations, seed, count, &out),
        Command::Train { config, out_dir, ablation } => train(config.as_deref(), &out_dir, &ablation),
        Command::Solve {
            checkpoint,
            instance,
            mode,
            samples,
            seed,
            out,
        } => {
            let (policy, _) = checkpoint::load(&checkpoint)?;
            let inst = io::read_instance(&instance)?;
            let mode = match mode {
                Mode::Greedy => DecodeMode::Greedy,
                Mode::Sampling => DecodeMode::Sampling { samples },
            };
            let decoded = policy.decode(&inst, EnvFlags::default(), mode, seed)?;
            match decoded.solution() {
                Some(sol) => emit_solution(&inst, sol, out.as_deref()),
                None => bail!(
                    "no feasible decode in {} episode(s): {}",
                    decoded.episodes,
                    decoded.deadlock.map(|d| d.to_string()).unwrap_or_default()
                ),
            }
        }
        Command::Eval { config, checkpoint, out_dir } => {
            let mut cfg = bench_config(config.as_deref())?;
            override_paths(&mut cfg, checkpoint, out_dir);
            let policy = match &cfg.checkpoint {
                Some(p) => Some(checkpoint::load(p)?.0),
                None => None,
            };
            let report = bench::run_bench(&cfg, policy.as_ref())?;
            let ckpts = cfg.checkpoint.iter().map(|p| p.display().to_string()).collect();
            finish(&cfg, &report, RunMetadata::new("eval", &cfg, ckpts))
        }
        Command::Ablate {
            config,
            train_config,
            full,
            no_ee,
            no_twe,
            no_hd,
            out_dir,
        } => {
            let mut cfg = bench_config(config.as_deref())?;
            override_paths(&mut cfg, None, out_dir);
            let train_file: TrainFile = match &train_config {
                Some(p) => read_toml(p)?,
                None => TrainFile::default(),
            };
            let mut entries = Vec::new();
            let mut ckpts = Vec::new();
            for (variant, given) in Variant::ALL.into_iter().zip([full, no_ee, no_twe, no_hd]) {
                let path = match given {
                    Some(p) => p,
                    None => {
                        let dir = cfg.out_dir.join("variants").join(variant.label());
                        eprintln!("training {variant} into {}", dir.display());
                        training::run_training(&train_file, Some(variant), &dir, |st| eprintln!("  {variant} epoch {} cost {:.2}", st.epoch, st.mean_cost))?
                            .checkpoint
                    }
                };
                let (params, manifest) = checkpoint::load(&path)?;
                entries.push(AblationEntry {
                    params,
                    budget: TrainBudget::from_meta(&manifest.meta),
                });
                ckpts.push(path.display().to_string());
            }
            let report = bench::run_ablation(&cfg, &entries)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            finish(&cfg, &report, RunMetadata::new("ablate", &cfg, ckpts))
        }
        Command::RatioSweep { config, checkpoint, out_dir } => {
            let mut cfg = bench_config(config.as_deref())?;
            override_paths(&mut cfg, checkpoint, out_dir);
            let path = cfg.checkpoint.clone().context("ratio-sweep needs a checkpoint")?;
            let (policy, _) = checkpoint::load(&path)?;
            let report = bench::run_ratio_sweep(&cfg, &policy)?;
            finish(&cfg, &report, RunMetadata::new("ratio-sweep", &cfg, vec![path.display().to_string()]))
        }
        Command::Oracle {
            instance,
            max_customers,
            node_limit,
            out,
        } => {
            let inst = io::read_instance(&instance)?;
            let ec = ExactConfig {
                max_customers,
                max_vehicles: inst.fleet().len(),
                node_limit,
                warm_start: true,
            };
            let (outcome, stats) = solve_exact(&inst, EnvFlags::default(), &ec)?;
            eprintln!("searched {} nodes, pruned {}", stats.nodes, stats.pruned);
            match outcome {
                ExactOutcome::Optimal(sol) => emit_solution(&inst, &sol, out.as_deref()),
                ExactOutcome::Infeasible => bail!("instance has no feasible solution"),
            }
        }
        Command::Baseline {
            method,
            instance,
            budget,
            out,
        } => {
            let inst = io::read_instance(&instance)?;
            let env = EnvFlags::default();
            let sol = nearest_feasible(&inst, env)?;
            let sol = match method {
                BaselineMethod::Nn => sol,
                BaselineMethod::Ls => local_search(&sol, &inst, env, budget).0,
            };
            emit_solution(&inst, &sol, out.as_deref())
        }
        Command::Verify { instance, solution } => {
            let inst = io::read_instance(&instance)?;
            let sol = io::read_solution(&solution)?;
            let cost = bench::verify(&inst, &sol, &EnvFlags::default())?;
            println!("ok: cost {cost:.6}");
            Ok(())
        }
    }
}

fn generate(size: usize, vehicles: usize, stations: usize, seed: u64, count: usize, out: &Path) -> Result<()> {
    let g = GeneratorConfig::desk(size, vehicles, stations);
    if count == 1 {
        return io::write_instance(out, &generate_instance(&g, seed)?);
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for k in 0..count {
        let inst = generate_instance(&g, seed.wrapping_add(k as u64))?;
        io::write_instance(&out.join(format!("instance-{k}.json")), &inst)?;
    }
    Ok(())
}

fn train(config: Option<&Path>, out_dir: &Path, flags: &AblationFlags) -> Result<()> {
    let mut file: TrainFile = match config {
        Some(p) => read_toml(p)?,
        None => TrainFile::default(),
    };
    let mut policy = PolicyConfig::from(file.policy);
    policy.use_ee &= !flags.no_ee;
    policy.use_twe &= !flags.no_twe;
    policy.use_hd &= !flags.no_hd;
    file.policy = policy.into();
    let outcome = training::run_training(&file, None, out_dir, |st| {
        eprintln!(
            "epoch {:>3}  cost {:>10.2}  baseline {:>10.2}  grad {:.3e}  infeasible {:.3}{}",
            st.epoch,
            st.mean_cost,
            st.baseline_cost,
            st.grad_norm,
            st.infeasible_rate,
            if st.baseline_updated { "  baseline updated" } else { "" }
        )
    })?;
    eprintln!("wrote {}", outcome.checkpoint.display());
    Ok(())
}

fn bench_config(path: Option<&Path>) -> Result<BenchConfig> {
    match path {
        Some(p) => read_toml(p),
        None => Ok(BenchConfig::default()),
    }
}

fn override_paths(cfg: &mut BenchConfig, checkpoint: Option<PathBuf>, out_dir: Option<PathBuf>) {
    if checkpoint.is_some() {
        cfg.checkpoint = checkpoint;
    }
    if let Some(d) = out_dir {
        cfg.out_dir = d;
    }
}

fn finish(cfg: &BenchConfig, report: &dyn Report, meta: RunMetadata) -> Result<()> {
    bench::write_report(&cfg.out_dir, report, &meta)?;
    print!("{}", report.summary_md());
    eprintln!("results in {}", cfg.out_dir.display());
    Ok(())
}

fn emit_solution(inst: &hevrp_core::Instance, sol: &hevrp_core::Solution, out: Option<&Path>) -> Result<()> {
    let cost = bench::verify(inst, sol, &EnvFlags::default())?;
    match out {
        Some(p) => {
            io::write_solution(p, sol)?;
            eprintln!("cost {cost:.6}, written to {}", p.display());
        }
        None => println!("{}", io::solution_to_json(sol)),
    }
    Ok(())
}
