//! Problem description: nodes with time windows, demands, a heterogeneous
//! EV fleet and dense travel-time / energy matrices.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::util;

/// Default planning horizon in minutes (latest window start 720 + longest window 180).
pub const DEFAULT_T_MAX: f64 = 900.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Depot,
    Customer,
    Station,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub tw_open: f64,
    pub tw_close: f64,
    pub kind: NodeKind,
}

/// One EV of the fleet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vehicle {
    /// kWh
    pub battery_capacity: f64,
    /// demand units
    pub cargo_capacity: u32,
}

impl Vehicle {
    pub fn new(battery_capacity: f64, cargo_capacity: u32) -> Self {
        Self {
            battery_capacity,
            cargo_capacity,
        }
    }
}

/// Dense row-major `n x n` matrix with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    /// Builds from rows; every row must have `rows.len()` entries.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, InstanceError> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(InstanceError::Dimension {
                    what: "matrix row",
                    index: i,
                    expected: n,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { n, data })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }
}

/// Binary time-window reachability over all nodes, self-loops included.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TwAdjacency {
    n: usize,
    bits: Vec<bool>,
}

impl TwAdjacency {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.bits[i * self.n..(i + 1) * self.n]
    }

    /// Replaces the matrix wholesale; used to probe that encoders ignore it.
    pub fn from_bits(n: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), n * n);
        Self { n, bits }
    }
}

/// Some departure `x` in `[open_i, close_i]` arrives (`x + tt`) inside `[open_j, close_j]`.
#[inline]
pub fn windows_connect(open_i: f64, close_i: f64, open_j: f64, close_j: f64, tt: f64) -> bool {
    open_i + tt <= close_j && open_j <= close_i + tt
}

/// Time-window adjacency over every node (depot included), with `a_ii = 1`.
pub fn build_adjacency(nodes: &[NodeRecord], travel_time: &SquareMatrix) -> TwAdjacency {
    let n = nodes.len();
    let mut bits = vec![false; n * n];
    for (i, a) in nodes.iter().enumerate() {
        for (j, b) in nodes.iter().enumerate() {
            bits[i * n + j] =
                i == j || windows_connect(a.tw_open, a.tw_close, b.tw_open, b.tw_close, travel_time.get(i, j));
        }
    }
    TwAdjacency { n, bits }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InstanceError {
    #[error("instance has no nodes")]
    Empty,
    #[error("node {0}: node ids must equal their position")]
    BadId(usize),
    #[error("node 0 must be the depot and it must be the only one (offending node {0})")]
    Depot(usize),
    #[error("node {node}: window [{open}, {close}] is not ordered within [0, {t_max}]")]
    Window {
        node: usize,
        open: f64,
        close: f64,
        t_max: f64,
    },
    #[error("node {0}: depot and stations must span the whole horizon")]
    HorizonWindow(usize),
    #[error("{what} {index}: expected {expected} entries, found {found}")]
    Dimension {
        what: &'static str,
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("{what}[{i}][{j}] = {value} is invalid (must be finite, >= 0, zero on the diagonal)")]
    Attribute {
        what: &'static str,
        i: usize,
        j: usize,
        value: f64,
    },
    #[error("node {node}: demand {demand} is invalid for its kind")]
    Demand { node: usize, demand: u32 },
    #[error("vehicle {0}: capacities must be positive and finite")]
    Vehicle(usize),
    #[error("fleet is empty")]
    EmptyFleet,
    #[error("horizon t_max must be positive and finite")]
    Horizon,
    #[error("generator: {0}")]
    Generator(&'static str),
}

/// Immutable problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    t_max: f64,
    nodes: Vec<NodeRecord>,
    demands: Vec<u32>,
    fleet: Vec<Vehicle>,
    travel_time: SquareMatrix,
    energy: SquareMatrix,
    adjacency: TwAdjacency,
    customers: Vec<usize>,
    stations: Vec<usize>,
    metric: bool,
}

impl Instance {
    /// Validates every invariant and derives the adjacency.
    pub fn new(
        t_max: f64,
        nodes: Vec<NodeRecord>,
        demands: Vec<u32>,
        fleet: Vec<Vehicle>,
        travel_time: SquareMatrix,
        energy: SquareMatrix,
    ) -> Result<Self, InstanceError> {
        if !(t_max.is_finite() && t_max > 0.0) {
            return Err(InstanceError::Horizon);
        }
        let n = nodes.len();
        if n == 0 {
            return Err(InstanceError::Empty);
        }
        let mut customers = Vec::new();
        let mut stations = Vec::new();
        for (i, node) in nodes.iter().enumerate() {
            if node.id != i {
                return Err(InstanceError::BadId(i));
            }
            if (i == 0) != (node.kind == NodeKind::Depot) {
                return Err(InstanceError::Depot(i));
            }
            let ok = node.tw_open.is_finite()
                && node.tw_close.is_finite()
                && 0.0 <= node.tw_open
                && node.tw_open <= node.tw_close
                && node.tw_close <= t_max;
            if !ok {
                return Err(InstanceError::Window {
                    node: i,
                    open: node.tw_open,
                    close: node.tw_close,
                    t_max,
                });
            }
            match node.kind {
                NodeKind::Customer => customers.push(i),
                NodeKind::Station => stations.push(i),
                NodeKind::Depot => {}
            }
            if node.kind != NodeKind::Customer && (node.tw_open != 0.0 || node.tw_close != t_max) {
                return Err(InstanceError::HorizonWindow(i));
            }
        }
        if fleet.is_empty() {
            return Err(InstanceError::EmptyFleet);
        }
        for (j, v) in fleet.iter().enumerate() {
            if !(v.battery_capacity.is_finite() && v.battery_capacity > 0.0 && v.cargo_capacity > 0) {
                return Err(InstanceError::Vehicle(j));
            }
        }
        if demands.len() != n {
            return Err(InstanceError::Dimension {
                what: "demands",
                index: 0,
                expected: n,
                found: demands.len(),
            });
        }
        let max_q = fleet.iter().map(|v| v.cargo_capacity).max().unwrap_or(0);
        for (i, (&d, node)) in demands.iter().zip(&nodes).enumerate() {
            let ok = match node.kind {
                NodeKind::Customer => d > 0 && d <= max_q,
                _ => d == 0,
            };
            if !ok {
                return Err(InstanceError::Demand { node: i, demand: d });
            }
        }
        for (what, m) in [("tt_matrix", &travel_time), ("ec_matrix", &energy)] {
            if m.dim() != n {
                return Err(InstanceError::Dimension {
                    what,
                    index: 0,
                    expected: n,
                    found: m.dim(),
                });
            }
            for i in 0..n {
                for j in 0..n {
                    let v = m.get(i, j);
                    let ok = v.is_finite() && v >= 0.0 && (i != j || v == 0.0);
                    if !ok {
                        return Err(InstanceError::Attribute { what, i, j, value: v });
                    }
                }
            }
        }
        let adjacency = build_adjacency(&nodes, &travel_time);
        let metric = satisfies_triangle(&travel_time);
        Ok(Self {
            t_max,
            nodes,
            demands,
            fleet,
            travel_time,
            energy,
            adjacency,
            customers,
            stations,
            metric,
        })
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[NodeRecord] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &NodeRecord {
        &self.nodes[i]
    }

    pub fn kind(&self, i: usize) -> NodeKind {
        self.nodes[i].kind
    }

    pub fn demands(&self) -> &[u32] {
        &self.demands
    }

    pub fn demand(&self, i: usize) -> u32 {
        self.demands[i]
    }

    pub fn fleet(&self) -> &[Vehicle] {
        &self.fleet
    }

    pub fn customers(&self) -> &[usize] {
        &self.customers
    }

    pub fn stations(&self) -> &[usize] {
        &self.stations
    }

    #[inline]
    pub fn tt(&self, i: usize, j: usize) -> f64 {
        self.travel_time.get(i, j)
    }

    #[inline]
    pub fn ec(&self, i: usize, j: usize) -> f64 {
        self.energy.get(i, j)
    }

    pub fn travel_time(&self) -> &SquareMatrix {
        &self.travel_time
    }

    pub fn energy(&self) -> &SquareMatrix {
        &self.energy
    }

    pub fn adjacency(&self) -> &TwAdjacency {
        &self.adjacency
    }

    /// Overrides the adjacency; the encoder without the time-window branch must not care.
    pub fn with_adjacency(mut self, adjacency: TwAdjacency) -> Self {
        assert_eq!(adjacency.dim(), self.len());
        self.adjacency = adjacency;
        self
    }

    /// Travel times obey the triangle inequality (up to 1e-9).
    pub fn is_metric(&self) -> bool {
        self.metric
    }

    /// Relabels nodes: new node `k` is old node `perm[k]`. `perm[0]` must be 0.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self, InstanceError> {
        let n = self.len();
        assert_eq!(perm.len(), n);
        let nodes = perm
            .iter()
            .enumerate()
            .map(|(k, &old)| NodeRecord {
                id: k,
                ..self.nodes[old].clone()
            })
            .collect();
        let demands = perm.iter().map(|&old| self.demands[old]).collect();
        let tt = SquareMatrix::from_fn(n, |a, b| self.tt(perm[a], perm[b]));
        let ec = SquareMatrix::from_fn(n, |a, b| self.ec(perm[a], perm[b]));
        Instance::new(self.t_max, nodes, demands, self.fleet.clone(), tt, ec)
    }

    /// Same instance with the fleet reordered: new vehicle `k` is old vehicle `perm[k]`.
    pub fn with_fleet(&self, fleet: Vec<Vehicle>) -> Result<Self, InstanceError> {
        Instance::new(
            self.t_max,
            self.nodes.clone(),
            self.demands.clone(),
            fleet,
            self.travel_time.clone(),
            self.energy.clone(),
        )
    }

    pub fn max_battery(&self) -> f64 {
        self.fleet.iter().map(|v| v.battery_capacity).fold(0.0, f64::max)
    }

    pub fn max_cargo(&self) -> u32 {
        self.fleet.iter().map(|v| v.cargo_capacity).max().unwrap_or(0)
    }

    /// Largest coordinate extent, used to scale raw features.
    pub fn coord_extent(&self) -> f64 {
        let (mut lo_x, mut hi_x, mut lo_y, mut hi_y) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in &self.nodes {
            lo_x = lo_x.min(p.x);
            hi_x = hi_x.max(p.x);
            lo_y = lo_y.min(p.y);
            hi_y = hi_y.max(p.y);
        }
        let e = (hi_x - lo_x).max(hi_y - lo_y);
        if e > 0.0 {
            e
        } else {
            1.0
        }
    }
}

fn satisfies_triangle(tt: &SquareMatrix) -> bool {
    let n = tt.dim();
    for i in 0..n {
        for j in 0..n {
            let ij = tt.get(i, j);
            for k in 0..n {
                if tt.get(i, k) > ij + tt.get(j, k) + 1e-9 {
                    return false;
                }
            }
        }
    }
    true
}

/// Cargo / battery capacities used in the published experiments, for 20, 50 and 100 customers.
pub fn paper_fleet(customers: usize) -> Option<Vec<Vehicle>> {
    match customers {
        20 => Some(
            [(20, 450.0), (30, 500.0), (40, 550.0)]
                .iter()
                .map(|&(q, e)| Vehicle::new(e, q))
                .collect(),
        ),
        50 => Some((0..5).map(|k| Vehicle::new(400.0 + 50.0 * k as f64, 20 + 10 * k)).collect()),
        100 => Some((0..11).map(|k| Vehicle::new(375.0 + 25.0 * k as f64, 25 + 5 * k)).collect()),
        _ => None,
    }
}

/// Small-instance fleet: cargo 20, 30, ... and batteries sized so a 50 km
/// square needs the occasional recharge.
pub fn desk_fleet(vehicles: usize) -> Vec<Vehicle> {
    (0..vehicles)
        .map(|k| Vehicle::new(120.0 + 30.0 * k as f64, 20 + 10 * k as u32))
        .collect()
}

/// Synthetic instance distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub customers: usize,
    pub stations: usize,
    pub fleet: Vec<Vehicle>,
    /// Side of the square the nodes are drawn from, km.
    pub side_km: f64,
    pub speed_km_per_min: f64,
    pub kwh_per_km: f64,
    pub t_max: f64,
    pub tw_open_max: f64,
    pub tw_duration: (f64, f64),
    pub demand_max: u32,
    /// Redraw a customer window that closes before the customer can be reached from the depot.
    pub ensure_reachable: bool,
}

impl GeneratorConfig {
    pub fn new(customers: usize, stations: usize, fleet: Vec<Vehicle>) -> Self {
        Self {
            customers,
            stations,
            fleet,
            side_km: 50.0,
            speed_km_per_min: 1.0,
            kwh_per_km: 1.0,
            t_max: DEFAULT_T_MAX,
            tw_open_max: 720.0,
            tw_duration: (60.0, 180.0),
            demand_max: 9,
            ensure_reachable: true,
        }
    }

    /// Published configuration for 20, 50 or 100 customers (stations = vehicles).
    pub fn paper(customers: usize) -> Option<Self> {
        let fleet = paper_fleet(customers)?;
        Some(Self::new(customers, fleet.len(), fleet))
    }

    pub fn desk(customers: usize, vehicles: usize, stations: usize) -> Self {
        Self::new(customers, stations, desk_fleet(vehicles))
    }

    /// Station count for a station-to-customer ratio, rounded half away from zero.
    pub fn stations_for_ratio(customers: usize, ratio: f64) -> Result<usize, InstanceError> {
        let s = util::round(ratio * customers as f64);
        if !(s >= 1.0) {
            return Err(InstanceError::Generator("station ratio yields zero stations"));
        }
        Ok(s as usize)
    }
}

/// Draws one instance. Node order: depot, customers, stations.
pub fn generate_instance(cfg: &GeneratorConfig, seed: u64) -> Result<Instance, InstanceError> {
    if cfg.fleet.is_empty() {
        return Err(InstanceError::EmptyFleet);
    }
    for (j, v) in cfg.fleet.iter().enumerate() {
        if !(v.battery_capacity.is_finite() && v.battery_capacity > 0.0 && v.cargo_capacity > 0) {
            return Err(InstanceError::Vehicle(j));
        }
    }
    if cfg.demand_max == 0 || cfg.demand_max > cfg.fleet.iter().map(|v| v.cargo_capacity).max().unwrap_or(0) {
        return Err(InstanceError::Generator("demand_max must be within the largest cargo capacity"));
    }
    if !(cfg.side_km > 0.0 && cfg.speed_km_per_min > 0.0 && cfg.kwh_per_km >= 0.0) {
        return Err(InstanceError::Generator("geometry parameters must be positive"));
    }
    let (dmin, dmax) = cfg.tw_duration;
    if !(0.0 <= dmin && dmin <= dmax && cfg.tw_open_max >= 0.0 && cfg.tw_open_max + dmax <= cfg.t_max) {
        return Err(InstanceError::Generator("time windows do not fit in the horizon"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 1 + cfg.customers + cfg.stations;
    let coords: Vec<(f64, f64)> = (0..n)
        .map(|_| (rng.gen::<f64>() * cfg.side_km, rng.gen::<f64>() * cfg.side_km))
        .collect();
    let dist = |i: usize, j: usize| {
        if i == j {
            0.0
        } else {
            util::hypot(coords[i].0 - coords[j].0, coords[i].1 - coords[j].1)
        }
    };
    let tt = SquareMatrix::from_fn(n, |i, j| dist(i, j) / cfg.speed_km_per_min);
    let ec = SquareMatrix::from_fn(n, |i, j| dist(i, j) * cfg.kwh_per_km);

    let mut nodes = Vec::with_capacity(n);
    let mut demands = Vec::with_capacity(n);
    for (i, &(x, y)) in coords.iter().enumerate() {
        let kind = if i == 0 {
            NodeKind::Depot
        } else if i <= cfg.customers {
            NodeKind::Customer
        } else {
            NodeKind::Station
        };
        let (tw_open, tw_close, demand) = match kind {
            NodeKind::Customer => {
                let (open, close) = loop {
                    let open = rng.gen::<f64>() * cfg.tw_open_max;
                    let close = open + dmin + rng.gen::<f64>() * (dmax - dmin);
                    if !cfg.ensure_reachable || close >= tt.get(0, i) {
                        break (open, close);
                    }
                };
                (open, close, rng.gen_range(1..=cfg.demand_max))
            }
            _ => (0.0, cfg.t_max, 0),
        };
        nodes.push(NodeRecord {
            id: i,
            x,
            y,
            tw_open,
            tw_close,
            kind,
        });
        demands.push(demand);
    }
    Instance::new(cfg.t_max, nodes, demands, cfg.fleet.clone(), tt, ec)
}
