//! JSON documents for instances and solutions.
//!
//! Instances carry their travel-time and energy matrices explicitly, so a
//! file can describe a road network the generator never produced. The
//! time-window adjacency is derived on load.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use hevrp_core::env::{Solution, VehicleRoute, Visit};
use hevrp_core::instance::{Instance, NodeKind, NodeRecord, SquareMatrix, Vehicle};

pub const INSTANCE_SCHEMA: u32 = 1;
pub const SOLUTION_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindDoc {
    Depot,
    Customer,
    Station,
}

impl From<NodeKind> for KindDoc {
    fn from(k: NodeKind) -> Self {
        match k {
            NodeKind::Depot => KindDoc::Depot,
            NodeKind::Customer => KindDoc::Customer,
            NodeKind::Station => KindDoc::Station,
        }
    }
}

impl From<KindDoc> for NodeKind {
    fn from(k: KindDoc) -> Self {
        match k {
            KindDoc::Depot => NodeKind::Depot,
            KindDoc::Customer => NodeKind::Customer,
            KindDoc::Station => NodeKind::Station,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDoc {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub tw_open: f64,
    pub tw_close: f64,
    pub kind: KindDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleDoc {
    pub battery_capacity: f64,
    pub cargo_capacity: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceDoc {
    pub schema_version: u32,
    pub t_max: f64,
    pub nodes: Vec<NodeDoc>,
    pub demands: Vec<u32>,
    pub fleet: Vec<VehicleDoc>,
    pub tt_matrix: Vec<Vec<f64>>,
    pub ec_matrix: Vec<Vec<f64>>,
}

impl InstanceDoc {
    pub fn from_instance(inst: &Instance) -> Self {
        Self {
            schema_version: INSTANCE_SCHEMA,
            t_max: inst.t_max(),
            nodes: inst
                .nodes()
                .iter()
                .map(|n| NodeDoc {
                    id: n.id,
                    x: n.x,
                    y: n.y,
                    tw_open: n.tw_open,
                    tw_close: n.tw_close,
                    kind: n.kind.into(),
                })
                .collect(),
            demands: inst.demands().to_vec(),
            fleet: inst
                .fleet()
                .iter()
                .map(|v| VehicleDoc {
                    battery_capacity: v.battery_capacity,
                    cargo_capacity: v.cargo_capacity,
                })
                .collect(),
            tt_matrix: inst.travel_time().rows(),
            ec_matrix: inst.energy().rows(),
        }
    }

    pub fn to_instance(&self) -> Result<Instance> {
        if self.schema_version != INSTANCE_SCHEMA {
            bail!("unsupported instance schema_version {} (expected {INSTANCE_SCHEMA})", self.schema_version);
        }
        let nodes = self
            .nodes
            .iter()
            .map(|n| NodeRecord {
                id: n.id,
                x: n.x,
                y: n.y,
                tw_open: n.tw_open,
                tw_close: n.tw_close,
                kind: n.kind.into(),
            })
            .collect();
        let fleet = self.fleet.iter().map(|v| Vehicle::new(v.battery_capacity, v.cargo_capacity)).collect();
        let tt = SquareMatrix::from_rows(&self.tt_matrix).context("tt_matrix")?;
        let ec = SquareMatrix::from_rows(&self.ec_matrix).context("ec_matrix")?;
        Ok(Instance::new(self.t_max, nodes, self.demands.clone(), fleet, tt, ec)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitDoc {
    pub node: usize,
    pub arrival: f64,
    pub departure: f64,
    pub energy_arrival: f64,
    pub energy_departure: f64,
    pub cargo_departure: u32,
    pub closing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteDoc {
    pub vehicle: usize,
    pub visits: Vec<VisitDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionDoc {
    pub schema_version: u32,
    pub total_cost: f64,
    pub step_cost: f64,
    pub return_cost: f64,
    pub routes: Vec<RouteDoc>,
}

impl SolutionDoc {
    pub fn from_solution(sol: &Solution) -> Self {
        Self {
            schema_version: SOLUTION_SCHEMA,
            total_cost: sol.total_cost,
            step_cost: sol.step_cost,
            return_cost: sol.return_cost,
            routes: sol
                .routes
                .iter()
                .map(|r| RouteDoc {
                    vehicle: r.vehicle,
                    visits: r
                        .visits
                        .iter()
                        .map(|v| VisitDoc {
                            node: v.node,
                            arrival: v.arrival,
                            departure: v.departure,
                            energy_arrival: v.energy_arrival,
                            energy_departure: v.energy_departure,
                            cargo_departure: v.cargo_departure,
                            closing: v.closing,
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn to_solution(&self) -> Result<Solution> {
        if self.schema_version != SOLUTION_SCHEMA {
            bail!("unsupported solution schema_version {} (expected {SOLUTION_SCHEMA})", self.schema_version);
        }
        Ok(Solution {
            routes: self
                .routes
                .iter()
                .map(|r| VehicleRoute {
                    vehicle: r.vehicle,
                    visits: r
                        .visits
                        .iter()
                        .map(|v| Visit {
                            node: v.node,
                            arrival: v.arrival,
                            departure: v.departure,
                            energy_arrival: v.energy_arrival,
                            energy_departure: v.energy_departure,
                            cargo_departure: v.cargo_departure,
                            closing: v.closing,
                        })
                        .collect(),
                })
                .collect(),
            step_cost: self.step_cost,
            return_cost: self.return_cost,
            total_cost: self.total_cost,
        })
    }
}

pub fn instance_to_json(inst: &Instance) -> String {
    serde_json::to_string_pretty(&InstanceDoc::from_instance(inst)).expect("instance documents always serialise")
}

pub fn instance_from_json(text: &str) -> Result<Instance> {
    let doc: InstanceDoc = serde_json::from_str(text).context("parsing instance JSON")?;
    doc.to_instance()
}

pub fn solution_to_json(sol: &Solution) -> String {
    serde_json::to_string_pretty(&SolutionDoc::from_solution(sol)).expect("solution documents always serialise")
}

pub fn solution_from_json(text: &str) -> Result<Solution> {
    let doc: SolutionDoc = serde_json::from_str(text).context("parsing solution JSON")?;
    doc.to_solution()
}

pub fn read_instance(path: &Path) -> Result<Instance> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    instance_from_json(&text).with_context(|| format!("loading {}", path.display()))
}

pub fn write_instance(path: &Path, inst: &Instance) -> Result<()> {
    fs::write(path, instance_to_json(inst)).with_context(|| format!("writing {}", path.display()))
}

pub fn read_solution(path: &Path) -> Result<Solution> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    solution_from_json(&text).with_context(|| format!("loading {}", path.display()))
}

pub fn write_solution(path: &Path, sol: &Solution) -> Result<()> {
    fs::write(path, solution_to_json(sol)).with_context(|| format!("writing {}", path.display()))
}
