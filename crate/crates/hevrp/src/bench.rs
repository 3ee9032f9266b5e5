//! Benchmark tables: methods against each other, ablation variants, and a
//! station-ratio sweep.
//!
//! Every solution is re-verified with the environment checker before it is
//! counted. Result CSVs hold only deterministic columns so that repeated runs
//! with the same configuration produce identical bytes; wall times go to a
//! separate timing table.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use hevrp_core::baselines::{local_search, nearest_feasible, solve_exact, ExactConfig, ExactError};
use hevrp_core::env::{check_solution, EnvFlags, Solution, Verdict};
use hevrp_core::instance::{generate_instance, GeneratorConfig, Instance};
use hevrp_core::policy::{DecodeMode, PolicyParams, Variant};
use hevrp_core::train::derive_seed;

use crate::config::{BenchConfig, DecodeKind, MethodKind};
use crate::training::TrainBudget;

/// Reported and re-verified costs must agree this closely.
pub const COST_TOLERANCE: f64 = 1e-9;

const TAG_DECODE: u64 = 0xdec0de;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Policy(DecodeMode),
    Nearest,
    LocalSearch,
    Exact,
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Policy(DecodeMode::Greedy) => "greedy".into(),
            Method::Policy(DecodeMode::Sampling { samples }) => format!("sampling-{samples}"),
            Method::Nearest => "nearest".into(),
            Method::LocalSearch => "local-search".into(),
            Method::Exact => "exact".into(),
        }
    }
}

pub fn decode_modes(cfg: &BenchConfig) -> Vec<DecodeMode> {
    let mut out = Vec::new();
    for kind in &cfg.decode_modes {
        match kind {
            DecodeKind::Greedy => out.push(DecodeMode::Greedy),
            DecodeKind::Sampling => out.extend(cfg.samples.iter().map(|&samples| DecodeMode::Sampling { samples })),
        }
    }
    out.dedup();
    out
}

/// Concrete methods in configuration order.
pub fn expand_methods(cfg: &BenchConfig) -> Vec<Method> {
    let mut out = Vec::new();
    for m in &cfg.methods {
        match m {
            MethodKind::Policy => out.extend(decode_modes(cfg).into_iter().map(Method::Policy)),
            MethodKind::Nearest => out.push(Method::Nearest),
            MethodKind::LocalSearch => out.push(Method::LocalSearch),
            MethodKind::Exact => out.push(Method::Exact),
        }
    }
    let mut seen = Vec::new();
    out.retain(|m| {
        let fresh = !seen.contains(m);
        seen.push(*m);
        fresh
    });
    out
}

fn generator(cfg: &BenchConfig, size: usize, stations: usize) -> GeneratorConfig {
    GeneratorConfig::desk(size, cfg.vehicles, stations)
}

/// The instance set of one row: `instances` per seed, seeds in order.
pub fn bench_instances(cfg: &BenchConfig, size: usize, stations: usize) -> Result<Vec<Instance>> {
    let g = generator(cfg, size, stations);
    let mut out = Vec::with_capacity(cfg.seeds.len() * cfg.instances);
    for &seed in &cfg.seeds {
        for k in 0..cfg.instances {
            out.push(generate_instance(&g, derive_seed(seed, size as u64, k as u64))?);
        }
    }
    Ok(out)
}

fn decode_seed(cfg: &BenchConfig, index: usize) -> u64 {
    derive_seed(cfg.seeds[0], TAG_DECODE, index as u64)
}

/// Solution (if any) of one method on one instance, and the time it took.
fn solve(method: Method, inst: &Instance, policy: Option<&PolicyParams>, cfg: &BenchConfig, seed: u64) -> Result<(Option<Solution>, Duration)> {
    let env: EnvFlags = cfg.env.into();
    let start = Instant::now();
    let sol = match method {
        Method::Policy(mode) => {
            let p = policy.context("policy methods need a checkpoint")?;
            p.decode(inst, env, mode, seed)?.solution().cloned()
        }
        Method::Nearest => nearest_feasible(inst, env).ok(),
        Method::LocalSearch => nearest_feasible(inst, env).ok().map(|s| local_search(&s, inst, env, cfg.local_search_budget).0),
        Method::Exact => {
            let ec = ExactConfig {
                max_customers: cfg.exact_max_customers,
                max_vehicles: cfg.vehicles,
                node_limit: cfg.exact_node_limit,
                warm_start: true,
            };
            match solve_exact(inst, env, &ec) {
                Ok((out, _)) => out.solution().cloned(),
                Err(ExactError::NodeLimit(_)) => None,
                Err(e) => return Err(e.into()),
            }
        }
    };
    Ok((sol, start.elapsed()))
}

/// Checker verdict for a produced solution; errors on any disagreement.
pub fn verify(inst: &Instance, sol: &Solution, env: &EnvFlags) -> Result<f64> {
    match check_solution(inst, sol, env) {
        Verdict::Pass { cost } => {
            ensure!(
                (cost - sol.total_cost).abs() <= COST_TOLERANCE,
                "reported cost {} differs from verified cost {cost}",
                sol.total_cost
            );
            Ok(cost)
        }
        Verdict::Fail(v) => bail!("solution fails verification: {} (vehicle {:?}, position {:?})", v.kind, v.vehicle, v.position),
    }
}

/// Verified per-instance costs of one method on one instance set.
struct RowRun {
    costs: Vec<Option<f64>>,
    wall: Duration,
}

fn run_row(method: Method, set: &[Instance], policy: Option<&PolicyParams>, cfg: &BenchConfig) -> Result<RowRun> {
    let env: EnvFlags = cfg.env.into();
    let per: Vec<Result<(Option<f64>, Duration)>> = set
        .par_iter()
        .enumerate()
        .map(|(k, inst)| {
            let (sol, wall) = solve(method, inst, policy, cfg, decode_seed(cfg, k))?;
            let cost = match &sol {
                Some(s) => Some(verify(inst, s, &env).with_context(|| format!("instance {k}"))?),
                None => None,
            };
            Ok((cost, wall))
        })
        .collect();
    let mut costs = Vec::with_capacity(per.len());
    let mut wall = Duration::ZERO;
    for r in per {
        let (c, w) = r?;
        costs.push(c);
        wall += w;
    }
    Ok(RowRun { costs, wall })
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

fn mean_ms(wall: Duration, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        wall.as_secs_f64() * 1e3 / n as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: String,
    pub size: usize,
    pub instances: usize,
    /// Instances without a verified solution.
    pub infeasible: usize,
    /// Over this method's solved instances.
    pub mean_cost: Option<f64>,
    /// Relative to the row anchor, over instances both solved.
    pub gap: Option<f64>,
    /// Instances entering the gap.
    pub compared: usize,
    pub mean_wall_ms: f64,
    /// Diagnostic of a row aborted by a verification failure.
    pub error: Option<String>,
    /// Per-instance verified costs.
    pub costs: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<ResultRow>,
    /// Gap anchor method per size.
    pub anchors: Vec<(usize, String)>,
    pub notes: Vec<String>,
}

/// Index of the gap anchor among `runs`: exact when present, otherwise the
/// method with the lowest mean cost on the instances every method solved,
/// falling back to the method that solved the most instances.
fn pick_anchor(labels: &[String], runs: &[&[Option<f64>]]) -> Option<usize> {
    if runs.is_empty() {
        return None;
    }
    if let Some(k) = labels.iter().position(|l| l == "exact") {
        return Some(k);
    }
    let n = runs[0].len();
    let common: Vec<usize> = (0..n).filter(|&i| runs.iter().all(|r| r[i].is_some())).collect();
    let score = |k: usize, idx: &mut dyn Iterator<Item = usize>| mean(idx.filter_map(|i| runs[k][i])).unwrap_or(f64::INFINITY);
    if !common.is_empty() {
        return (0..runs.len()).min_by(|&a, &b| score(a, &mut common.iter().copied()).total_cmp(&score(b, &mut common.iter().copied())));
    }
    (0..runs.len()).min_by(|&a, &b| {
        let fa = runs[a].iter().filter(|c| c.is_some()).count();
        let fb = runs[b].iter().filter(|c| c.is_some()).count();
        fb.cmp(&fa).then(score(a, &mut (0..n)).total_cmp(&score(b, &mut (0..n))))
    })
}

/// `sum(method) / sum(anchor) - 1` over instances both solved.
fn gap(method: &[Option<f64>], anchor: &[Option<f64>]) -> (Option<f64>, usize) {
    let (mut a, mut b, mut n) = (0.0, 0.0, 0);
    for (x, y) in method.iter().zip(anchor) {
        if let (Some(x), Some(y)) = (x, y) {
            a += x;
            b += y;
            n += 1;
        }
    }
    ((n > 0 && b > 0.0).then(|| a / b - 1.0), n)
}

pub fn run_bench(cfg: &BenchConfig, policy: Option<&PolicyParams>) -> Result<BenchReport> {
    cfg.validate()?;
    let methods = expand_methods(cfg);
    if methods.iter().any(|m| matches!(m, Method::Policy(_))) && policy.is_none() {
        bail!("a checkpoint is required for the policy method");
    }
    let mut notes = Vec::new();
    let mut tasks = Vec::new();
    let mut sets = Vec::new();
    for (si, &size) in cfg.sizes.iter().enumerate() {
        sets.push(bench_instances(cfg, size, cfg.stations)?);
        for &m in &methods {
            if m == Method::Exact && size > cfg.exact_max_customers {
                notes.push(format!("exact skipped for size {size} (limit {} customers)", cfg.exact_max_customers));
                continue;
            }
            tasks.push((si, m));
        }
    }
    let runs: Vec<(usize, Method, Result<RowRun>)> = tasks
        .par_iter()
        .map(|&(si, m)| (si, m, run_row(m, &sets[si], policy, cfg)))
        .collect();

    let mut rows = Vec::new();
    let mut anchors = Vec::new();
    for (si, &size) in cfg.sizes.iter().enumerate() {
        let mut block: Vec<ResultRow> = Vec::new();
        for (_, m, run) in runs.iter().filter(|r| r.0 == si) {
            let n = sets[si].len();
            block.push(match run {
                Ok(run) => ResultRow {
                    method: m.label(),
                    size,
                    instances: n,
                    infeasible: run.costs.iter().filter(|c| c.is_none()).count(),
                    mean_cost: mean(run.costs.iter().flatten().copied()),
                    gap: None,
                    compared: 0,
                    mean_wall_ms: mean_ms(run.wall, n),
                    error: None,
                    costs: run.costs.clone(),
                },
                Err(e) => ResultRow {
                    method: m.label(),
                    size,
                    instances: n,
                    infeasible: n,
                    mean_cost: None,
                    gap: None,
                    compared: 0,
                    mean_wall_ms: 0.0,
                    error: Some(format!("{e:#}")),
                    costs: Vec::new(),
                },
            });
        }
        let live: Vec<usize> = (0..block.len()).filter(|&k| block[k].error.is_none()).collect();
        let labels: Vec<String> = live.iter().map(|&k| block[k].method.clone()).collect();
        let costs: Vec<&[Option<f64>]> = live.iter().map(|&k| block[k].costs.as_slice()).collect();
        if let Some(a) = pick_anchor(&labels, &costs) {
            let anchor = block[live[a]].costs.clone();
            anchors.push((size, labels[a].clone()));
            for &k in &live {
                let (g, c) = gap(&block[k].costs, &anchor);
                block[k].gap = g;
                block[k].compared = c;
            }
            block[live[a]].gap = block[live[a]].gap.map(|_| 0.0);
        }
        rows.extend(block);
    }
    notes.dedup();
    Ok(BenchReport { rows, anchors, notes })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationEntry {
    pub params: PolicyParams,
    pub budget: Option<TrainBudget>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub size: usize,
    pub parameters: usize,
    pub instances: usize,
    pub infeasible: usize,
    pub mean_cost: Option<f64>,
    pub mean_wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub warnings: Vec<String>,
}

/// Greedy-decode comparison of the four variants on every configured size.
pub fn run_ablation(cfg: &BenchConfig, entries: &[AblationEntry]) -> Result<AblationReport> {
    cfg.validate()?;
    let mut ordered: Vec<&AblationEntry> = Vec::new();
    for v in Variant::ALL {
        let found: Vec<&AblationEntry> = entries.iter().filter(|e| e.params.config().variant() == Some(v)).collect();
        ensure!(found.len() == 1, "expected exactly one {v} checkpoint, found {}", found.len());
        ordered.push(found[0]);
    }
    ensure!(entries.len() == Variant::ALL.len(), "ablation takes exactly the four variants");

    let mut warnings = Vec::new();
    let reference = ordered[0].budget.as_ref();
    for (v, e) in Variant::ALL.iter().zip(&ordered) {
        match (&e.budget, reference) {
            (None, _) => warnings.push(format!("{v}: training budget not recorded")),
            (Some(b), Some(r)) if b != r => warnings.push(format!("{v}: training budget {} differs from full ({})", b.describe(), r.describe())),
            _ => {}
        }
    }

    let env: EnvFlags = cfg.env.into();
    let mut rows = Vec::new();
    for &size in &cfg.sizes {
        let set = bench_instances(cfg, size, cfg.stations)?;
        let block: Vec<Result<AblationRow>> = Variant::ALL
            .par_iter()
            .zip(ordered.par_iter())
            .map(|(&variant, e)| {
                let mut costs = Vec::with_capacity(set.len());
                let mut wall = Duration::ZERO;
                for (k, inst) in set.iter().enumerate() {
                    let start = Instant::now();
                    let sol = e.params.decode(inst, env, DecodeMode::Greedy, decode_seed(cfg, k))?.solution().cloned();
                    wall += start.elapsed();
                    costs.push(match &sol {
                        Some(s) => Some(verify(inst, s, &env).with_context(|| format!("{variant} size {size} instance {k}"))?),
                        None => None,
                    });
                }
                Ok(AblationRow {
                    variant,
                    size,
                    parameters: e.params.scalar_count(),
                    instances: set.len(),
                    infeasible: costs.iter().filter(|c| c.is_none()).count(),
                    mean_cost: mean(costs.iter().flatten().copied()),
                    mean_wall_ms: mean_ms(wall, set.len()),
                })
            })
            .collect();
        for r in block {
            rows.push(r?);
        }
    }
    Ok(AblationReport { rows, warnings })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioRow {
    pub ratio: f64,
    pub size: usize,
    pub stations: usize,
    pub method: String,
    pub instances: usize,
    pub infeasible: usize,
    pub mean_cost: Option<f64>,
    pub mean_wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioReport {
    pub rows: Vec<RatioRow>,
}

/// Policy decodes on instances regenerated at each station-to-customer ratio.
pub fn run_ratio_sweep(cfg: &BenchConfig, policy: &PolicyParams) -> Result<RatioReport> {
    cfg.validate()?;
    ensure!(!cfg.ratios.is_empty(), "no ratios configured");
    let mut plan = Vec::new();
    for &size in &cfg.sizes {
        for &ratio in &cfg.ratios {
            let stations = GeneratorConfig::stations_for_ratio(size, ratio).with_context(|| format!("ratio {ratio} with {size} customers"))?;
            plan.push((size, ratio, stations));
        }
    }
    let modes = decode_modes(cfg);
    ensure!(!modes.is_empty(), "no decode modes configured");
    let mut rows = Vec::new();
    for (size, ratio, stations) in plan {
        let set = bench_instances(cfg, size, stations)?;
        for &mode in &modes {
            let run = run_row(Method::Policy(mode), &set, Some(policy), cfg).with_context(|| format!("ratio {ratio} size {size}"))?;
            rows.push(RatioRow {
                ratio,
                size,
                stations,
                method: Method::Policy(mode).label(),
                instances: set.len(),
                infeasible: run.costs.iter().filter(|c| c.is_none()).count(),
                mean_cost: mean(run.costs.iter().flatten().copied()),
                mean_wall_ms: mean_ms(run.wall, set.len()),
            });
        }
    }
    Ok(RatioReport { rows })
}

fn opt(x: Option<f64>, digits: usize) -> String {
    x.map(|v| format!("{v:.digits$}")).unwrap_or_default()
}

fn csv_string(header: &[&str], records: impl Iterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory CSV");
    for r in records {
        w.write_record(&r).expect("in-memory CSV");
    }
    String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("CSV output is UTF-8")
}

/// Tables that can be written as results.csv, timing.csv and summary.md.
pub trait Report {
    /// Deterministic columns only.
    fn results_csv(&self) -> String;
    fn timing_csv(&self) -> String;
    fn summary_md(&self) -> String;
}

impl Report for BenchReport {
    fn results_csv(&self) -> String {
        csv_string(
            &["method", "size", "instances", "infeasible", "mean_cost", "gap_pct", "compared", "status"],
            self.rows.iter().map(|r| {
                vec![
                    r.method.clone(),
                    r.size.to_string(),
                    r.instances.to_string(),
                    r.infeasible.to_string(),
                    opt(r.mean_cost, 6),
                    opt(r.gap.map(|g| 100.0 * g), 4),
                    r.compared.to_string(),
                    if r.error.is_some() { "verification-failed".into() } else { "ok".into() },
                ]
            }),
        )
    }

    fn timing_csv(&self) -> String {
        csv_string(
            &["method", "size", "instances", "mean_wall_ms"],
            self.rows
                .iter()
                .map(|r| vec![r.method.clone(), r.size.to_string(), r.instances.to_string(), format!("{:.4}", r.mean_wall_ms)]),
        )
    }

    fn summary_md(&self) -> String {
        let mut s = String::from("# Benchmark\n\n| method | size | cost | gap | time (ms) | infeasible |\n|---|---|---|---|---|---|\n");
        for r in &self.rows {
            let gap = r.gap.map(|g| format!("{:.2}%", 100.0 * g)).unwrap_or_else(|| "-".into());
            let cost = r.mean_cost.map(|c| format!("{c:.2}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(s, "| {} | {} | {cost} | {gap} | {:.2} | {}/{} |", r.method, r.size, r.mean_wall_ms, r.infeasible, r.instances);
        }
        s.push_str("\nGaps compare total cost on the instances both the method and the anchor solved.\n");
        for (size, a) in &self.anchors {
            let _ = writeln!(s, "- size {size}: anchor `{a}`");
        }
        for r in self.rows.iter().filter(|r| r.error.is_some()) {
            let _ = writeln!(s, "- **{} size {} aborted**: {}", r.method, r.size, r.error.as_deref().unwrap_or(""));
        }
        for n in &self.notes {
            let _ = writeln!(s, "- {n}");
        }
        s
    }
}

impl Report for AblationReport {
    fn results_csv(&self) -> String {
        csv_string(
            &["variant", "size", "parameters", "instances", "infeasible", "mean_cost"],
            self.rows.iter().map(|r| {
                vec![
                    r.variant.label().into(),
                    r.size.to_string(),
                    r.parameters.to_string(),
                    r.instances.to_string(),
                    r.infeasible.to_string(),
                    opt(r.mean_cost, 6),
                ]
            }),
        )
    }

    fn timing_csv(&self) -> String {
        csv_string(
            &["variant", "size", "instances", "mean_wall_ms"],
            self.rows
                .iter()
                .map(|r| vec![r.variant.label().into(), r.size.to_string(), r.instances.to_string(), format!("{:.4}", r.mean_wall_ms)]),
        )
    }

    fn summary_md(&self) -> String {
        let mut s = String::from("# Ablation (greedy decode)\n\n| variant | size | parameters | cost | time (ms) | infeasible |\n|---|---|---|---|---|---|\n");
        for r in &self.rows {
            let cost = r.mean_cost.map(|c| format!("{c:.2}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(s, "| {} | {} | {} | {cost} | {:.2} | {}/{} |", r.variant, r.size, r.parameters, r.mean_wall_ms, r.infeasible, r.instances);
        }
        if !self.warnings.is_empty() {
            s.push_str("\n## Warnings\n\n");
            for w in &self.warnings {
                let _ = writeln!(s, "- {w}");
            }
        }
        s
    }
}

impl Report for RatioReport {
    fn results_csv(&self) -> String {
        csv_string(
            &["ratio", "size", "stations", "method", "instances", "infeasible", "mean_cost"],
            self.rows.iter().map(|r| {
                vec![
                    format!("{}", r.ratio),
                    r.size.to_string(),
                    r.stations.to_string(),
                    r.method.clone(),
                    r.instances.to_string(),
                    r.infeasible.to_string(),
                    opt(r.mean_cost, 6),
                ]
            }),
        )
    }

    fn timing_csv(&self) -> String {
        csv_string(
            &["ratio", "size", "method", "instances", "mean_wall_ms"],
            self.rows.iter().map(|r| {
                vec![
                    format!("{}", r.ratio),
                    r.size.to_string(),
                    r.method.clone(),
                    r.instances.to_string(),
                    format!("{:.4}", r.mean_wall_ms),
                ]
            }),
        )
    }

    fn summary_md(&self) -> String {
        let mut s = String::from("# Station-to-customer ratio sweep\n\n| ratio | size | stations | method | cost | time (ms) | infeasible |\n|---|---|---|---|---|---|---|\n");
        for r in &self.rows {
            let cost = r.mean_cost.map(|c| format!("{c:.2}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "| {:.0}% | {} | {} | {} | {cost} | {:.2} | {}/{} |",
                100.0 * r.ratio,
                r.size,
                r.stations,
                r.method,
                r.mean_wall_ms,
                r.infeasible,
                r.instances
            );
        }
        s
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunMetadata {
    pub command: String,
    pub seeds: Vec<u64>,
    pub config: BenchConfig,
    pub checkpoints: Vec<String>,
    pub versions: Versions,
    pub hardware: String,
    pub timing_scope: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub hevrp: &'static str,
    pub format_checkpoint: u32,
    pub format_instance: u32,
}

impl RunMetadata {
    pub fn new(command: &str, cfg: &BenchConfig, checkpoints: Vec<String>) -> Self {
        Self {
            command: command.into(),
            seeds: cfg.seeds.clone(),
            config: cfg.clone(),
            checkpoints,
            versions: Versions {
                hevrp: env!("CARGO_PKG_VERSION"),
                format_checkpoint: crate::checkpoint::FORMAT_VERSION,
                format_instance: crate::io::INSTANCE_SCHEMA,
            },
            hardware: hardware_string(),
            timing_scope: "per instance, decode or search only; excludes instance generation and checkpoint loading",
        }
    }
}

/// CPU model (when the OS exposes it), architecture, OS and thread count.
pub fn hardware_string() -> String {
    let cpu = fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|t| t.lines().find(|l| l.starts_with("model name")).and_then(|l| l.split(':').nth(1)).map(|s| s.trim().to_string()))
        .unwrap_or_else(|| "unknown cpu".into());
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!("{cpu}; {} {}; {threads} threads", std::env::consts::ARCH, std::env::consts::OS)
}

/// Writes results.csv, timing.csv, summary.md and run-metadata.json.
pub fn write_report(dir: &Path, report: &dyn Report, meta: &RunMetadata) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("results.csv"), report.results_csv())?;
    fs::write(dir.join("timing.csv"), report.timing_csv())?;
    fs::write(dir.join("summary.md"), report.summary_md())?;
    fs::write(dir.join("run-metadata.json"), serde_json::to_string_pretty(meta)?)?;
    Ok(())
}
