//! Network model: transmission grid, distribution feeders, boundary links.
//!
//! A *case* bundles one transmission network with a set of feeder templates
//! and boundary links. Each link attaches `beta` parallel copies of a feeder
//! template to a transmission bus, so a single solved feeder scales to the
//! aggregate load seen by the transmission side.
//!
//! Conventions:
//! * transmission powers in MW / MVAr, impedances in pu on `base_mva`;
//! * feeder powers in kW / kVAr per phase, impedances in pu on `s_base_kva`;
//! * voltages everywhere in pu.

mod caseio;

pub use caseio::{load_case, load_case_str, save_case};

use thiserror::Error;

/// Reactive capability fraction of an IBR's inverter capacity rating that is
/// available at any active-power output (fixed-envelope model).
pub const IBR_Q_FRACTION: f64 = 0.3287;

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    /// Underlying document syntax error; the message carries line/column.
    #[error("parse error in {path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: String },
    #[error("{referrer} references unknown {kind} {id}")]
    DanglingRef {
        referrer: String,
        kind: &'static str,
        id: String,
    },
    #[error("feeder {feeder} is not a tree rooted at node 0: {reason}")]
    FeederNotTree { feeder: String, reason: String },
    #[error("invalid case: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum ContingencyError {
    #[error("contingency references unknown branch index {0}")]
    UnknownBranch(usize),
    #[error("branch {0} is already out of service")]
    AlreadyOut(usize),
}

// ---------------------------------------------------------------------------
// Transmission side
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TxBus {
    pub id: usize,
    pub kind: BusKind,
    /// Native load attached directly to the bus (MW / MVAr), on top of any
    /// feeder-backed load from boundary links.
    pub base_load_p: f64,
    pub base_load_q: f64,
    pub v_min: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TxBranch {
    pub from: usize,
    pub to: usize,
    /// Series impedance, pu.
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance, pu (split half/half at the ends).
    pub b_shunt: f64,
    pub in_service: bool,
}

/// Reactive capability envelope of a generating unit.
#[derive(Debug, Clone, PartialEq)]
pub enum CapabilityCurve {
    /// Fixed box, independent of active output.
    Box { q_min: f64, q_max: f64 },
    /// Apparent-power circle: |q| <= sqrt(s^2 - p^2).
    Circle { s_rating: f64 },
    /// IBR envelope: |q| <= IBR_Q_FRACTION * icr at every output level.
    IbrFraction { icr: f64 },
}

impl CapabilityCurve {
    /// Reactive limits (q_min, q_max) at active output `p`.
    pub fn q_limits(&self, p: f64) -> (f64, f64) {
        match *self {
            CapabilityCurve::Box { q_min, q_max } => (q_min, q_max),
            CapabilityCurve::Circle { s_rating } => der_q_limits(s_rating, p),
            CapabilityCurve::IbrFraction { icr } => ibr_q_limits(icr),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenUnit {
    pub bus: usize,
    /// Active-power dispatch, MW (ignored for the slack unit, which balances).
    pub p_out: f64,
    /// Voltage setpoint, pu.
    pub v_set: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub p_max: f64,
    pub capability: CapabilityCurve,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IbrKind {
    Solar,
    Wind,
}

/// Inverter-based resource. Holds its bus voltage like a generator but with
/// the narrow fixed reactive envelope of [`ibr_q_limits`].
#[derive(Debug, Clone, PartialEq)]
pub struct IbrUnit {
    pub bus: usize,
    /// Active output, MW (resource-driven; does not participate in load pickup).
    pub p_out: f64,
    /// Inverter capacity rating, MVA.
    pub icr: f64,
    pub kind: IbrKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionNetwork {
    pub base_mva: f64,
    /// Sorted by ascending bus id.
    pub buses: Vec<TxBus>,
    pub branches: Vec<TxBranch>,
    /// Sorted by ascending bus id.
    pub gens: Vec<GenUnit>,
    /// Sorted by ascending bus id.
    pub ibrs: Vec<IbrUnit>,
}

/// Uniform view of a voltage-controlling unit (generator or IBR) used by the
/// power-flow and optimization layers. Ordering contract everywhere in the
/// crate: generators first, then IBRs, each group by ascending bus id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitView {
    pub bus: usize,
    pub p_out: f64,
    pub v_set: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub p_max: f64,
    pub is_ibr: bool,
}

impl TransmissionNetwork {
    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.buses.binary_search_by_key(&id, |b| b.id).ok()
    }

    pub fn slack_index(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .expect("validated case has exactly one slack bus")
    }

    /// Generators and IBRs in the crate-wide unit ordering. IBRs get a
    /// default voltage setpoint of 1.0 pu; operating points may override it.
    pub fn units(&self) -> Vec<UnitView> {
        let mut out: Vec<UnitView> = self
            .gens
            .iter()
            .map(|g| UnitView {
                bus: g.bus,
                p_out: g.p_out,
                v_set: g.v_set,
                q_min: g.q_min,
                q_max: g.q_max,
                p_max: g.p_max,
                is_ibr: false,
            })
            .collect();
        out.extend(self.ibrs.iter().map(|u| {
            let (q_min, q_max) = ibr_q_limits(u.icr);
            UnitView {
                bus: u.bus,
                p_out: u.p_out,
                v_set: 1.0,
                q_min,
                q_max,
                p_max: u.icr,
                is_ibr: true,
            }
        }));
        out
    }

    /// Effective reactive limits of unit `idx` (crate-wide ordering) when
    /// running at active output `p_now` MW: the capability envelope at that
    /// output, intersected with the unit's hard q box.
    pub fn unit_q_limits(&self, idx: usize, p_now: f64) -> (f64, f64) {
        if idx < self.gens.len() {
            let g = &self.gens[idx];
            let (lo, hi) = g.capability.q_limits(p_now);
            (lo.max(g.q_min), hi.min(g.q_max))
        } else {
            ibr_q_limits(self.ibrs[idx - self.gens.len()].icr)
        }
    }

    /// True when every bus is reachable over in-service branches.
    pub fn is_connected(&self) -> bool {
        if self.buses.is_empty() {
            return true;
        }
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for br in self.branches.iter().filter(|b| b.in_service) {
            let (f, t) = (
                self.bus_index(br.from).unwrap(),
                self.bus_index(br.to).unwrap(),
            );
            adj[f].push(t);
            adj[t].push(f);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Total native active load, MW (excludes feeder-backed load).
    pub fn native_load_p(&self) -> f64 {
        self.buses.iter().map(|b| b.base_load_p).sum()
    }
}

// ---------------------------------------------------------------------------
// Distribution side
// ---------------------------------------------------------------------------

pub const PHASES: usize = 3;

/// OLTC tap positions between `tap_min` and `tap_max` (32 steps, 33 positions).
pub const OLTC_STEPS: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct DxNode {
    pub id: usize,
    /// Constant-power load per phase, kW.
    pub load_p: [f64; PHASES],
    /// kVAr.
    pub load_q: [f64; PHASES],
    /// Voltage-magnitude limits, pu.
    pub v_min: f64,
    pub v_max: f64,
}

impl DxNode {
    /// Limits on the squared-magnitude scale used by LinDistFlow.
    pub fn v_min_sq(&self) -> f64 {
        self.v_min * self.v_min
    }
    pub fn v_max_sq(&self) -> f64 {
        self.v_max * self.v_max
    }
    pub fn total_load_p(&self) -> f64 {
        self.load_p.iter().sum()
    }
    pub fn total_load_q(&self) -> f64 {
        self.load_q.iter().sum()
    }
}

/// Directed feeder edge, parent -> child. `z_phase` (row-major 3x3, pu) is
/// used by the three-phase sweep when present; otherwise the positive-sequence
/// `r + jx` is replicated on the diagonal with zero mutual coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct DxEdge {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub z_phase: Option<ZPhase>,
}

/// Row-major 3x3 complex impedance stored as separate real/imag parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ZPhase {
    pub r: [f64; 9],
    pub x: [f64; 9],
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerUnit {
    pub node: usize,
    /// Active generation, kW (constant during dispatch).
    pub p_gen: f64,
    /// Inverter rating, kVA.
    pub s_rating: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeederModel {
    pub id: String,
    /// Power base for the feeder's pu impedances, kVA.
    pub s_base_kva: f64,
    /// OLTC tap ratio range at the substation transformer.
    pub tap_min: f64,
    pub tap_max: f64,
    /// `nodes[0]` is the substation secondary (id 0).
    pub nodes: Vec<DxNode>,
    pub edges: Vec<DxEdge>,
    pub ders: Vec<DerUnit>,
}

/// Parent/child structure of a validated feeder tree.
#[derive(Debug, Clone)]
pub struct FeederTopo {
    /// For each node index: Some((parent node index, edge index)) except the root.
    pub parent: Vec<Option<(usize, usize)>>,
    /// For each node index: (child node index, edge index) pairs.
    pub children: Vec<Vec<(usize, usize)>>,
    /// Node indices in breadth-first order from the root.
    pub order: Vec<usize>,
}

impl FeederModel {
    pub fn node_index(&self, id: usize) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    /// Breadth-first topology rooted at node 0. Panics on an unvalidated
    /// non-tree feeder; `load_case` guarantees the invariant.
    pub fn topology(&self) -> FeederTopo {
        let n = self.nodes.len();
        let mut parent = vec![None; n];
        let mut children: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for (ei, e) in self.edges.iter().enumerate() {
            let (f, t) = (
                self.node_index(e.from).expect("validated edge endpoint"),
                self.node_index(e.to).expect("validated edge endpoint"),
            );
            parent[t] = Some((f, ei));
            children[f].push((t, ei));
        }
        let root = self.node_index(0).expect("validated root node 0");
        let mut order = Vec::with_capacity(n);
        let mut queue = std::collections::VecDeque::from([root]);
        while let Some(i) = queue.pop_front() {
            order.push(i);
            for &(c, _) in &children[i] {
                queue.push_back(c);
            }
        }
        FeederTopo {
            parent,
            children,
            order,
        }
    }

    /// Total constant-power load over all nodes and phases, (kW, kVAr).
    pub fn total_load(&self) -> (f64, f64) {
        let p = self.nodes.iter().map(|n| n.total_load_p()).sum();
        let q = self.nodes.iter().map(|n| n.total_load_q()).sum();
        (p, q)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryLink {
    pub tx_bus: usize,
    pub feeder: String,
    /// Number of identical parallel feeder copies behind this bus.
    pub beta: u32,
    pub kv_base_tx: f64,
    pub kv_base_dx: f64,
}

// ---------------------------------------------------------------------------
// Case
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub tx: TransmissionNetwork,
    pub feeders: Vec<FeederModel>,
    pub links: Vec<BoundaryLink>,
}

impl Case {
    pub fn feeder_index(&self, id: &str) -> Option<usize> {
        self.feeders.iter().position(|f| f.id == id)
    }

    /// Bus ids carrying load: native load or at least one boundary link.
    /// This ordering defines the `P_L`/`Q_L` slots of the margin state vector.
    pub fn load_buses(&self) -> Vec<usize> {
        self.tx
            .buses
            .iter()
            .filter(|b| {
                b.base_load_p != 0.0
                    || b.base_load_q != 0.0
                    || self.links.iter().any(|l| l.tx_bus == b.id)
            })
            .map(|b| b.id)
            .collect()
    }

    /// Boundary links attached to a bus, as indices into `self.links`.
    pub fn links_at(&self, bus_id: usize) -> Vec<usize> {
        self.links
            .iter()
            .enumerate()
            .filter(|(_, l)| l.tx_bus == bus_id)
            .map(|(i, _)| i)
            .collect()
    }

    /// Base-case total transmission-side active load in MW: native bus loads
    /// plus beta-scaled feeder loads. This is the normalizing quantity in the
    /// margin definition `vsm = (lambda_max - 1) * total_base_load`.
    pub fn total_base_load_mw(&self) -> f64 {
        let native = self.tx.native_load_p();
        let feeder: f64 = self
            .links
            .iter()
            .map(|l| {
                let f = &self.feeders[self.feeder_index(&l.feeder).unwrap()];
                l.beta as f64 * f.total_load().0 / 1000.0
            })
            .sum();
        native + feeder
    }

    pub fn validate(&self) -> Result<(), CaseError> {
        validate(self)
    }
}

// ---------------------------------------------------------------------------
// Contingencies
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Contingency {
    /// Base topology, no outage.
    None,
    /// Single branch outage, indexed into `tx.branches`.
    BranchOut(usize),
}

impl Contingency {
    pub fn label(&self) -> String {
        match self {
            Contingency::None => "none".into(),
            Contingency::BranchOut(i) => format!("br{i}"),
        }
    }

    pub fn parse(s: &str) -> Option<Contingency> {
        if s == "none" {
            return Some(Contingency::None);
        }
        s.strip_prefix("br")
            .and_then(|n| n.parse().ok())
            .map(Contingency::BranchOut)
    }
}

/// Returns a modified copy of the network with the contingency applied.
/// The input is never mutated.
pub fn apply_contingency(
    net: &TransmissionNetwork,
    contingency: Contingency,
) -> Result<TransmissionNetwork, ContingencyError> {
    let mut out = net.clone();
    match contingency {
        Contingency::None => {}
        Contingency::BranchOut(i) => {
            let br = out
                .branches
                .get_mut(i)
                .ok_or(ContingencyError::UnknownBranch(i))?;
            if !br.in_service {
                return Err(ContingencyError::AlreadyOut(i));
            }
            br.in_service = false;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Capability helpers
// ---------------------------------------------------------------------------

/// Symmetric reactive envelope of an IBR: +/- IBR_Q_FRACTION * icr,
/// independent of the operating point.
pub fn ibr_q_limits(icr: f64) -> (f64, f64) {
    let q = IBR_Q_FRACTION * icr;
    (-q, q)
}

/// Reactive headroom of a DER inverter at active output `p_gen`:
/// +/- sqrt(s_rating^2 - p_gen^2), collapsing to (0, 0) at full rating.
pub fn der_q_limits(s_rating: f64, p_gen: f64) -> (f64, f64) {
    let head = (s_rating * s_rating - p_gen * p_gen).max(0.0).sqrt();
    (-head, head)
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

fn validate(case: &Case) -> Result<(), CaseError> {
    let tx = &case.tx;
    if tx.base_mva <= 0.0 {
        return Err(CaseError::Invalid("base_mva must be positive".into()));
    }
    // Unique, sorted bus ids.
    for w in tx.buses.windows(2) {
        if w[1].id == w[0].id {
            return Err(CaseError::DuplicateId {
                kind: "bus",
                id: w[0].id.to_string(),
            });
        }
    }
    let slacks = tx.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
    if slacks != 1 {
        return Err(CaseError::Invalid(format!(
            "expected exactly one slack bus, found {slacks}"
        )));
    }
    for b in &tx.buses {
        if !(b.v_min > 0.0 && b.v_min < b.v_max) {
            return Err(CaseError::Invalid(format!(
                "bus {}: voltage limits must satisfy 0 < v_min < v_max",
                b.id
            )));
        }
    }
    for (i, br) in tx.branches.iter().enumerate() {
        for end in [br.from, br.to] {
            if tx.bus_index(end).is_none() {
                return Err(CaseError::DanglingRef {
                    referrer: format!("branch {i}"),
                    kind: "bus",
                    id: end.to_string(),
                });
            }
        }
        if br.from == br.to {
            return Err(CaseError::Invalid(format!("branch {i} is a self-loop")));
        }
        if br.r < 0.0 || br.x == 0.0 {
            return Err(CaseError::Invalid(format!(
                "branch {i}: need r >= 0 and x != 0"
            )));
        }
    }
    // One voltage-controlling unit per bus, on a slack/pv bus that exists.
    let mut unit_buses = std::collections::BTreeSet::new();
    for (label, bus) in tx
        .gens
        .iter()
        .map(|g| ("generator", g.bus))
        .chain(tx.ibrs.iter().map(|u| ("ibr", u.bus)))
    {
        let Some(bi) = tx.bus_index(bus) else {
            return Err(CaseError::DanglingRef {
                referrer: format!("{label} at bus {bus}"),
                kind: "bus",
                id: bus.to_string(),
            });
        };
        if !unit_buses.insert(bus) {
            return Err(CaseError::Invalid(format!(
                "bus {bus} has more than one generating unit"
            )));
        }
        if tx.buses[bi].kind == BusKind::Pq {
            return Err(CaseError::Invalid(format!(
                "{label} at bus {bus}: bus must be declared slack or pv"
            )));
        }
    }
    for b in tx.buses.iter().filter(|b| b.kind != BusKind::Pq) {
        if !unit_buses.contains(&b.id) {
            return Err(CaseError::Invalid(format!(
                "bus {} is declared {:?} but has no generating unit",
                b.id, b.kind
            )));
        }
    }
    for g in &tx.gens {
        if g.q_min > g.q_max {
            return Err(CaseError::Invalid(format!(
                "generator at bus {}: q_min > q_max",
                g.bus
            )));
        }
        if g.p_out < 0.0 || g.p_out > g.p_max {
            return Err(CaseError::Invalid(format!(
                "generator at bus {}: need 0 <= p_out <= p_max",
                g.bus
            )));
        }
    }
    for u in &tx.ibrs {
        if u.icr <= 0.0 || u.p_out < 0.0 || u.p_out > u.icr {
            return Err(CaseError::Invalid(format!(
                "ibr at bus {}: need 0 <= p_out <= icr",
                u.bus
            )));
        }
    }
    if !tx.is_connected() {
        return Err(CaseError::Invalid(
            "transmission network is not connected over in-service branches".into(),
        ));
    }

    // Feeders.
    let mut feeder_ids = std::collections::BTreeSet::new();
    for f in &case.feeders {
        if !feeder_ids.insert(f.id.clone()) {
            return Err(CaseError::DuplicateId {
                kind: "feeder",
                id: f.id.clone(),
            });
        }
        validate_feeder(f)?;
    }
    for (i, l) in case.links.iter().enumerate() {
        if tx.bus_index(l.tx_bus).is_none() {
            return Err(CaseError::DanglingRef {
                referrer: format!("boundary link {i}"),
                kind: "bus",
                id: l.tx_bus.to_string(),
            });
        }
        if case.feeder_index(&l.feeder).is_none() {
            return Err(CaseError::DanglingRef {
                referrer: format!("boundary link {i}"),
                kind: "feeder",
                id: l.feeder.clone(),
            });
        }
        if l.beta == 0 {
            return Err(CaseError::Invalid(format!(
                "boundary link {i}: beta must be a positive integer"
            )));
        }
        if l.kv_base_tx <= 0.0 || l.kv_base_dx <= 0.0 {
            return Err(CaseError::Invalid(format!(
                "boundary link {i}: kV bases must be positive"
            )));
        }
    }
    Ok(())
}

fn validate_feeder(f: &FeederModel) -> Result<(), CaseError> {
    let err = |reason: String| CaseError::FeederNotTree {
        feeder: f.id.clone(),
        reason,
    };
    if f.s_base_kva <= 0.0 {
        return Err(CaseError::Invalid(format!(
            "feeder {}: s_base_kva must be positive",
            f.id
        )));
    }
    if !(0.0 < f.tap_min && f.tap_min <= f.tap_max) {
        return Err(CaseError::Invalid(format!(
            "feeder {}: need 0 < tap_min <= tap_max",
            f.id
        )));
    }
    let mut ids = std::collections::BTreeSet::new();
    for n in &f.nodes {
        if !ids.insert(n.id) {
            return Err(CaseError::DuplicateId {
                kind: "feeder node",
                id: format!("{}/{}", f.id, n.id),
            });
        }
        if !(n.v_min > 0.0 && n.v_min < n.v_max) {
            return Err(CaseError::Invalid(format!(
                "feeder {} node {}: voltage limits must satisfy 0 < v_min < v_max",
                f.id, n.id
            )));
        }
    }
    if f.node_index(0).is_none() {
        return Err(err("missing substation node 0".into()));
    }
    if f.edges.len() + 1 != f.nodes.len() {
        return Err(err(format!(
            "{} nodes require {} edges, found {}",
            f.nodes.len(),
            f.nodes.len() - 1,
            f.edges.len()
        )));
    }
    let mut has_parent = vec![false; f.nodes.len()];
    for (ei, e) in f.edges.iter().enumerate() {
        let Some(_fi) = f.node_index(e.from) else {
            return Err(CaseError::DanglingRef {
                referrer: format!("feeder {} edge {}", f.id, ei),
                kind: "node",
                id: e.from.to_string(),
            });
        };
        let Some(ti) = f.node_index(e.to) else {
            return Err(CaseError::DanglingRef {
                referrer: format!("feeder {} edge {}", f.id, ei),
                kind: "node",
                id: e.to.to_string(),
            });
        };
        if e.to == 0 {
            return Err(err(format!("edge {ei} points into the root")));
        }
        if has_parent[ti] {
            return Err(err(format!("node {} has two parents", e.to)));
        }
        has_parent[ti] = true;
        if e.r < 0.0 || e.x < 0.0 || (e.r == 0.0 && e.x == 0.0) {
            return Err(CaseError::Invalid(format!(
                "feeder {} edge {}: need non-negative impedance with r + x > 0",
                f.id, ei
            )));
        }
    }
    // Every non-root node has a parent and is reachable from the root.
    let topo = {
        // Reachability check without assuming tree-ness: walk child lists.
        let n = f.nodes.len();
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        for e in &f.edges {
            children[f.node_index(e.from).unwrap()].push(f.node_index(e.to).unwrap());
        }
        let mut seen = vec![false; n];
        let mut stack = vec![f.node_index(0).unwrap()];
        seen[stack[0]] = true;
        while let Some(i) = stack.pop() {
            for &c in &children[i] {
                if !seen[c] {
                    seen[c] = true;
                    stack.push(c);
                }
            }
        }
        seen
    };
    if let Some(i) = topo.iter().position(|s| !s) {
        return Err(err(format!(
            "node {} is unreachable from the root",
            f.nodes[i].id
        )));
    }
    for d in &f.ders {
        if f.node_index(d.node).is_none() {
            return Err(CaseError::DanglingRef {
                referrer: format!("feeder {} der", f.id),
                kind: "node",
                id: d.node.to_string(),
            });
        }
        if d.s_rating <= 0.0 || d.p_gen < 0.0 || d.p_gen > d.s_rating {
            return Err(CaseError::Invalid(format!(
                "feeder {} der at node {}: need 0 <= p_gen <= s_rating",
                f.id, d.node
            )));
        }
    }
    Ok(())
}
