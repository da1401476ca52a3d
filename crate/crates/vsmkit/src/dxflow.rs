//! Distribution feeder solvers.
//!
//! Two views of the same radial feeder:
//!
//! * [`solve_bfs`] — three-phase backward/forward sweep with constant-power
//!   loads, full 3x3 phase impedance matrices where provided, an OLTC that
//!   snaps the substation secondary to the nearest discrete tap, and DER
//!   reactive injections. Convergence failure is a meaningful result (a
//!   collapsed feeder), reported through the `converged` flag.
//! * [`lindistflow`] — the linear branch-flow approximation on squared
//!   voltage magnitudes, `v_j = v_i - 2 (r P_ij + x Q_ij)`, aggregated over
//!   phases. On a tree it needs no iteration: flows come from one backward
//!   accumulation, voltages from one forward pass. It is the model inside the
//!   feeder dispatch LPs; the sweep is the truth it is checked against.
//!
//! Feeder quantities are kW / kVAr and pu on `s_base_kva`.

use crate::netmodel::{BoundaryLink, FeederModel, OLTC_STEPS, PHASES};
use num_complex::Complex64;
use thiserror::Error;

/// Fixed-point tolerance on the worst per-phase voltage update, pu.
pub const BFS_TOL: f64 = 1e-8;
pub const BFS_MAX_SWEEPS: usize = 100;
/// Divergence guard: any phase magnitude below this aborts the sweep.
const V_FLOOR: f64 = 0.2;

#[derive(Debug, Error)]
pub enum DxError {
    #[error("der dispatch has {got} entries, feeder {feeder} has {want} ders")]
    ShapeMismatch {
        feeder: String,
        got: usize,
        want: usize,
    },
}

/// Reactive dispatch for a feeder's DERs, kVAr.
#[derive(Debug, Clone)]
pub enum DerDispatch {
    /// One total per DER, split equally across its three phases.
    Balanced(Vec<f64>),
    /// Explicit per-phase injections (what the redispatch LP emits).
    PerPhase(Vec<[f64; PHASES]>),
}

impl DerDispatch {
    /// All-zero dispatch for a feeder.
    pub fn zero(feeder: &FeederModel) -> Self {
        DerDispatch::Balanced(vec![0.0; feeder.ders.len()])
    }

    pub fn len(&self) -> usize {
        match self {
            DerDispatch::Balanced(v) => v.len(),
            DerDispatch::PerPhase(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn per_phase(&self, i: usize) -> [f64; PHASES] {
        match self {
            DerDispatch::Balanced(v) => [v[i] / 3.0; PHASES],
            DerDispatch::PerPhase(v) => v[i],
        }
    }

    /// Total injection per DER, kVAr.
    pub fn totals(&self) -> Vec<f64> {
        match self {
            DerDispatch::Balanced(v) => v.clone(),
            DerDispatch::PerPhase(v) => v.iter().map(|q| q.iter().sum()).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DxSolution {
    pub converged: bool,
    pub sweeps: usize,
    /// Complex phase voltages per node (feeder node order), pu.
    pub v: Vec<[Complex64; PHASES]>,
    /// Chosen OLTC tap ratio.
    pub tap: f64,
    /// Power entering the feeder at the substation per phase, kW / kVAr.
    pub head_p: [f64; PHASES],
    pub head_q: [f64; PHASES],
    /// Worst per-phase voltage update of the final sweep, pu — the distance
    /// to the fixed point at which node current balance holds exactly.
    pub max_mismatch: f64,
}

impl DxSolution {
    /// Aggregate head flow over phases, (kW, kVAr).
    pub fn head_total(&self) -> (f64, f64) {
        (self.head_p.iter().sum(), self.head_q.iter().sum())
    }

    pub fn v_mag(&self, node: usize, phase: usize) -> f64 {
        self.v[node][phase].norm()
    }
}

/// Discrete OLTC tap that brings `tap * v_interface` closest to 1.0 pu.
pub fn choose_tap(feeder: &FeederModel, v_interface: f64) -> f64 {
    let step = (feeder.tap_max - feeder.tap_min) / OLTC_STEPS as f64;
    let ideal = 1.0 / v_interface.max(1e-6);
    let k = ((ideal - feeder.tap_min) / step).round();
    let k = k.clamp(0.0, OLTC_STEPS as f64);
    feeder.tap_min + k * step
}

/// Tap choice with a hold-over deadband against a previous position.
///
/// When the interface voltage sits near a quantization boundary, the bare
/// argmin rule flips between two adjacent taps on successive boundary
/// exchanges and the coupled iteration rings forever (tap hunting). Real
/// regulators carry a deadband for exactly this reason: keep the old tap
/// unless the new one improves |tap·V − 1| by more than half a step.
pub fn choose_tap_from(feeder: &FeederModel, v_interface: f64, prev: Option<f64>) -> f64 {
    let cand = choose_tap(feeder, v_interface);
    let Some(prev) = prev else { return cand };
    let step = (feeder.tap_max - feeder.tap_min) / OLTC_STEPS as f64;
    let obj = |t: f64| (t * v_interface - 1.0).abs();
    if obj(cand) < obj(prev) - 0.5 * step {
        cand
    } else {
        prev
    }
}

/// Three-phase backward/forward sweep.
///
/// `v_interface` is the transmission-side positive-sequence phasor (magnitude
/// pu, angle rad); the feeder sees a balanced abc set scaled by the OLTC tap.
/// `load_scale` multiplies every node load (DER active output is unaffected).
/// `prev_tap` is the regulator's held position from an earlier solve, if any;
/// see [`choose_tap_from`] for the deadband it enables.
pub fn solve_bfs(
    feeder: &FeederModel,
    v_interface: (f64, f64),
    load_scale: f64,
    der_q: &DerDispatch,
    prev_tap: Option<f64>,
) -> Result<DxSolution, DxError> {
    if der_q.len() != feeder.ders.len() {
        return Err(DxError::ShapeMismatch {
            feeder: feeder.id.clone(),
            got: der_q.len(),
            want: feeder.ders.len(),
        });
    }
    let topo = feeder.topology();
    let n = feeder.nodes.len();
    // Per-phase power base: s_base_kva is the three-phase base.
    let s_base = feeder.s_base_kva / 3.0;

    let (v_tm, ang) = v_interface;
    let tap = choose_tap_from(feeder, v_tm, prev_tap);
    let rot = Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI / 3.0);
    let head = Complex64::from_polar(tap * v_tm, ang);
    let v0 = [head, head * rot, head * rot * rot];

    // Net constant-power draw per node and phase, pu.
    let mut s_spec = vec![[Complex64::new(0.0, 0.0); PHASES]; n];
    for (ni, node) in feeder.nodes.iter().enumerate() {
        for ph in 0..PHASES {
            s_spec[ni][ph] = Complex64::new(
                load_scale * node.load_p[ph] / s_base,
                load_scale * node.load_q[ph] / s_base,
            );
        }
    }
    for (di, der) in feeder.ders.iter().enumerate() {
        let ni = feeder.node_index(der.node).unwrap();
        let q = der_q.per_phase(di);
        for ph in 0..PHASES {
            s_spec[ni][ph] -= Complex64::new(der.p_gen / 3.0 / s_base, q[ph] / s_base);
        }
    }

    // Edge impedance matrices, row-major 3x3.
    let z: Vec<[Complex64; 9]> = feeder
        .edges
        .iter()
        .map(|e| match &e.z_phase {
            Some(zp) => std::array::from_fn(|k| Complex64::new(zp.r[k], zp.x[k])),
            None => {
                let zs = Complex64::new(e.r, e.x);
                let mut m = [Complex64::new(0.0, 0.0); 9];
                m[0] = zs;
                m[4] = zs;
                m[8] = zs;
                m
            }
        })
        .collect();

    let root = topo.order[0];
    let mut v = vec![v0; n];
    let mut edge_i = vec![[Complex64::new(0.0, 0.0); PHASES]; feeder.edges.len()];
    let mut sweeps = 0;
    let mut delta = f64::INFINITY;

    while sweeps < BFS_MAX_SWEEPS {
        sweeps += 1;
        // Backward: accumulate phase currents from the leaves toward the root.
        let mut inj = vec![[Complex64::new(0.0, 0.0); PHASES]; n];
        for &ni in topo.order.iter().rev() {
            for ph in 0..PHASES {
                // Constant-power draw at the present voltage iterate.
                inj[ni][ph] += (s_spec[ni][ph] / v[ni][ph]).conj();
            }
            if let Some((parent, ei)) = topo.parent[ni] {
                let below = inj[ni];
                edge_i[ei] = below;
                for ph in 0..PHASES {
                    inj[parent][ph] += below[ph];
                }
            }
        }
        // Forward: propagate voltage drops from the substation.
        delta = 0.0;
        v[root] = v0;
        for &ni in topo.order.iter() {
            let Some((parent, ei)) = topo.parent[ni] else {
                continue;
            };
            let zm = &z[ei];
            let iv = edge_i[ei];
            for ph in 0..PHASES {
                let drop = zm[3 * ph] * iv[0] + zm[3 * ph + 1] * iv[1] + zm[3 * ph + 2] * iv[2];
                let new = v[parent][ph] - drop;
                delta = delta.max((new - v[ni][ph]).norm());
                v[ni][ph] = new;
                if !new.norm().is_finite() || new.norm() < V_FLOOR {
                    return Ok(fail_solution(feeder, &v, tap, sweeps));
                }
            }
        }
        if delta <= BFS_TOL {
            break;
        }
    }
    let converged = delta <= BFS_TOL;

    // Head power: root injections at the final voltages.
    let head_i = {
        let mut inj = vec![[Complex64::new(0.0, 0.0); PHASES]; n];
        for &ni in topo.order.iter().rev() {
            for ph in 0..PHASES {
                inj[ni][ph] += (s_spec[ni][ph] / v[ni][ph]).conj();
            }
            if let Some((parent, _)) = topo.parent[ni] {
                let below = inj[ni];
                for ph in 0..PHASES {
                    inj[parent][ph] += below[ph];
                }
            }
        }
        inj[root]
    };
    let mut head_p = [0.0; PHASES];
    let mut head_q = [0.0; PHASES];
    for ph in 0..PHASES {
        let s = v[root][ph] * head_i[ph].conj() * s_base;
        head_p[ph] = s.re;
        head_q[ph] = s.im;
    }

    Ok(DxSolution {
        converged,
        sweeps,
        v,
        tap,
        head_p,
        head_q,
        max_mismatch: delta,
    })
}

fn fail_solution(feeder: &FeederModel, v: &[[Complex64; PHASES]], tap: f64, sweeps: usize) -> DxSolution {
    let _ = feeder;
    DxSolution {
        converged: false,
        sweeps,
        v: v.to_vec(),
        tap,
        head_p: [f64::NAN; PHASES],
        head_q: [f64::NAN; PHASES],
        max_mismatch: f64::INFINITY,
    }
}

// ---------------------------------------------------------------------------
// LinDistFlow
// ---------------------------------------------------------------------------

/// Linear branch-flow solution on the squared-magnitude scale.
#[derive(Debug, Clone)]
pub struct LinDistFlow {
    /// Squared voltage magnitude per node, pu^2 (feeder node order).
    pub v_sq: Vec<f64>,
    /// Sending-end flow per edge (feeder edge order), kW / kVAr, all phases.
    pub edge_p: Vec<f64>,
    pub edge_q: Vec<f64>,
    /// Substation inflow, kW / kVAr.
    pub head_p: f64,
    pub head_q: f64,
}

/// Non-iterative LinDistFlow evaluation: backward flow accumulation (each
/// edge carries everything in the subtree below it — the model is lossless),
/// then forward voltage propagation from `v0_sq`.
///
/// `der_q` holds one total kVAr injection per DER.
pub fn lindistflow(
    feeder: &FeederModel,
    v0_sq: f64,
    load_scale: f64,
    der_q: &[f64],
) -> Result<LinDistFlow, DxError> {
    if der_q.len() != feeder.ders.len() {
        return Err(DxError::ShapeMismatch {
            feeder: feeder.id.clone(),
            got: der_q.len(),
            want: feeder.ders.len(),
        });
    }
    let topo = feeder.topology();
    let n = feeder.nodes.len();
    let s_base = feeder.s_base_kva;

    // Net nodal draw, kW / kVAr.
    let mut node_p = vec![0.0; n];
    let mut node_q = vec![0.0; n];
    for (ni, node) in feeder.nodes.iter().enumerate() {
        node_p[ni] = load_scale * node.total_load_p();
        node_q[ni] = load_scale * node.total_load_q();
    }
    for (di, der) in feeder.ders.iter().enumerate() {
        let ni = feeder.node_index(der.node).unwrap();
        node_p[ni] -= der.p_gen;
        node_q[ni] -= der_q[di];
    }

    // Backward accumulation: subtree sums.
    let mut sub_p = node_p.clone();
    let mut sub_q = node_q.clone();
    for &ni in topo.order.iter().rev() {
        if let Some((parent, _)) = topo.parent[ni] {
            sub_p[parent] += sub_p[ni];
            sub_q[parent] += sub_q[ni];
        }
    }
    let mut edge_p = vec![0.0; feeder.edges.len()];
    let mut edge_q = vec![0.0; feeder.edges.len()];
    for (ni, parent) in topo.parent.iter().enumerate() {
        if let Some((_, ei)) = parent {
            edge_p[*ei] = sub_p[ni];
            edge_q[*ei] = sub_q[ni];
        }
    }

    // Forward voltage propagation.
    let mut v_sq = vec![v0_sq; n];
    for &ni in topo.order.iter() {
        if let Some((parent, ei)) = topo.parent[ni] {
            let e = &feeder.edges[ei];
            v_sq[ni] =
                v_sq[parent] - 2.0 * (e.r * edge_p[ei] + e.x * edge_q[ei]) / s_base;
        }
    }

    let root = topo.order[0];
    Ok(LinDistFlow {
        v_sq,
        head_p: sub_p[root],
        head_q: sub_q[root],
        edge_p,
        edge_q,
    })
}

/// Transmission-side aggregate of one boundary link: `beta` parallel feeder
/// copies, kW -> MW.
pub fn boundary_aggregate(link: &BoundaryLink, head_p_kw: f64, head_q_kvar: f64) -> (f64, f64) {
    let k = link.beta as f64 / 1000.0;
    (k * head_p_kw, k * head_q_kvar)
}

/// Worst |V| gap between the three-phase sweep (phase-averaged magnitude) and
/// the LinDistFlow voltage, pu — the linearization error the dispatch LPs
/// inherit.
pub fn lindistflow_gap(feeder: &FeederModel, bfs: &DxSolution, ldf: &LinDistFlow) -> f64 {
    let mut worst: f64 = 0.0;
    for ni in 0..feeder.nodes.len() {
        let avg: f64 = (0..PHASES).map(|ph| bfs.v[ni][ph].norm()).sum::<f64>() / PHASES as f64;
        worst = worst.max((avg - ldf.v_sq[ni].sqrt()).abs());
    }
    worst
}

/// Total series losses implied by the sweep, kW (head inflow minus net load).
pub fn bfs_losses_kw(feeder: &FeederModel, sol: &DxSolution, load_scale: f64) -> f64 {
    let (head_p, _) = sol.head_total();
    let load: f64 = feeder
        .nodes
        .iter()
        .map(|n| load_scale * n.total_load_p())
        .sum();
    let der: f64 = feeder.ders.iter().map(|d| d.p_gen).sum();
    head_p - (load - der)
}
