//! Transmission–distribution co-simulation.
//!
//! Fixed-point (Gauss) alternation, distribution first: every feeder is swept
//! at the boundary voltage from the previous round, its head flow is scaled
//! by the link multiplicity into a MW/MVAr bus load, and the transmission
//! network is re-solved against those loads. Converged when the boundary
//! voltages and reactive aggregates both stop moving.
//!
//! Non-convergence of either side, or of the alternation itself, is reported
//! through [`CosimSolution::converged`] — it is the collapse signal the
//! margin search relies on, not an error.

use crate::dxflow::{self, DerDispatch, DxSolution};
use crate::netmodel::Case;
use crate::txflow::{self, TxOperatingPoint, TxSolution};
use thiserror::Error;

/// Boundary voltage agreement required between rounds, pu.
pub const COSIM_TOL_V: f64 = 1e-5;
/// Boundary reactive-aggregate agreement required between rounds, MVAr.
pub const COSIM_TOL_Q: f64 = 1e-3;
pub const COSIM_MAX_ROUNDS: usize = 50;

#[derive(Debug, Error)]
pub enum CosimError {
    #[error("operating point has {got} unit entries, case has {want}")]
    UnitShape { got: usize, want: usize },
    #[error("operating point has {got} der dispatch blocks, case has {want} links")]
    LinkShape { got: usize, want: usize },
    #[error("operating point has {got} bus support entries, case has {want} buses")]
    BusShape { got: usize, want: usize },
    #[error(transparent)]
    Dx(#[from] dxflow::DxError),
    #[error(transparent)]
    Tx(#[from] txflow::TxError),
}

/// One system-wide operating point: what every control is asked to do.
#[derive(Debug, Clone)]
pub struct OperatingPoint {
    /// Active-power setpoint per transmission unit, MW ([`Case::tx`] unit
    /// order). The slack machine's entry is the initial guess only.
    pub unit_p: Vec<f64>,
    /// Voltage setpoint per unit, pu.
    pub unit_v: Vec<f64>,
    /// Load multiplier applied to native transmission loads and to every
    /// feeder load. DER active output does not scale with it.
    pub lambda: f64,
    /// Scenario shape: per-bus multiplier on native loads, composed with
    /// `lambda` ([`Case::tx`] bus order).
    pub bus_scale: Vec<f64>,
    /// Scenario shape: per-link multiplier on feeder loads, composed with
    /// `lambda` ([`Case::links`] order).
    pub link_scale: Vec<f64>,
    /// DER reactive dispatch per boundary link ([`Case::links`] order), kVAr.
    pub der_q: Vec<DerDispatch>,
    /// Extra reactive support injected per transmission bus, MVAr (reduces
    /// the bus's net reactive load). Used to realize a dispatch directly at
    /// the boundary bus when bypassing the feeder model.
    pub bus_q_support: Vec<f64>,
}

impl OperatingPoint {
    /// Case-file setpoints: nominal load, no DER reactive dispatch.
    pub fn nominal(case: &Case) -> Self {
        let units = case.tx.units();
        OperatingPoint {
            unit_p: units.iter().map(|u| u.p_out).collect(),
            unit_v: units.iter().map(|u| u.v_set).collect(),
            lambda: 1.0,
            bus_scale: vec![1.0; case.tx.buses.len()],
            link_scale: vec![1.0; case.links.len()],
            der_q: case
                .links
                .iter()
                .map(|l| DerDispatch::zero(&case.feeders[case.feeder_index(&l.feeder).unwrap()]))
                .collect(),
            bus_q_support: vec![0.0; case.tx.buses.len()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CosimFailure {
    /// Transmission Newton iteration diverged or hit its iteration cap.
    TxDiverged,
    /// A feeder sweep diverged (feeder id).
    DxDiverged(String),
    /// The alternation itself failed to settle.
    RoundLimit,
}

#[derive(Debug, Clone)]
pub struct CosimSolution {
    pub converged: bool,
    pub rounds: usize,
    pub failure: Option<CosimFailure>,
    pub tx: TxSolution,
    /// Final feeder solutions, [`Case::links`] order.
    pub dx: Vec<DxSolution>,
    /// Boundary aggregates seen by the transmission side, MW / MVAr.
    pub link_p: Vec<f64>,
    pub link_q: Vec<f64>,
    /// Realized transmission bus loads in the final solve, MW / MVAr
    /// (native scaled load + boundary aggregates − bus support).
    pub load_p: Vec<f64>,
    pub load_q: Vec<f64>,
    /// Per round: (worst boundary |ΔV| pu, worst boundary |ΔQ| MVAr).
    pub round_trace: Vec<(f64, f64)>,
}

impl CosimSolution {
    /// Total realized transmission-side active load, MW.
    pub fn total_load_mw(&self) -> f64 {
        self.load_p.iter().sum()
    }
}

pub fn solve_cosim(case: &Case, op: &OperatingPoint) -> Result<CosimSolution, CosimError> {
    solve_cosim_from(case, op, None)
}

/// Co-simulate with an optional warm start from a nearby solution (used by
/// the margin search when marching the load multiplier).
pub fn solve_cosim_from(
    case: &Case,
    op: &OperatingPoint,
    warm: Option<&CosimSolution>,
) -> Result<CosimSolution, CosimError> {
    let net = &case.tx;
    let n_units = net.units().len();
    if op.unit_p.len() != n_units || op.unit_v.len() != n_units {
        return Err(CosimError::UnitShape {
            got: op.unit_p.len(),
            want: n_units,
        });
    }
    if op.der_q.len() != case.links.len() || op.link_scale.len() != case.links.len() {
        return Err(CosimError::LinkShape {
            got: op.der_q.len().max(op.link_scale.len()),
            want: case.links.len(),
        });
    }
    if op.bus_q_support.len() != net.buses.len() || op.bus_scale.len() != net.buses.len() {
        return Err(CosimError::BusShape {
            got: op.bus_q_support.len().max(op.bus_scale.len()),
            want: net.buses.len(),
        });
    }

    let link_bus: Vec<usize> = case
        .links
        .iter()
        .map(|l| net.bus_index(l.tx_bus).unwrap())
        .collect();
    let link_feeder: Vec<usize> = case
        .links
        .iter()
        .map(|l| case.feeder_index(&l.feeder).unwrap())
        .collect();

    // Boundary voltage estimates for the first distribution pass.
    let mut v_est: Vec<(f64, f64)> = match warm {
        Some(w) if w.tx.converged => link_bus
            .iter()
            .map(|&b| (w.tx.v_mag[b], w.tx.v_ang[b]))
            .collect(),
        _ => vec![(1.0, 0.0); case.links.len()],
    };
    let mut tx_warm: Option<TxSolution> = warm.map(|w| w.tx.clone());

    // OLTC positions persist across rounds (and across warm-started calls) so
    // the regulator deadband can suppress tap hunting at quantization edges.
    let mut taps: Vec<Option<f64>> = match warm {
        Some(w) if w.dx.len() == case.links.len() => {
            w.dx.iter().map(|d| Some(d.tap)).collect()
        }
        _ => vec![None; case.links.len()],
    };

    let mut dx: Vec<DxSolution> = Vec::new();
    let mut link_p = vec![0.0; case.links.len()];
    let mut link_q = vec![0.0; case.links.len()];
    let mut prev_q: Option<Vec<f64>> = None;
    let mut round_trace = Vec::new();
    let mut tx_sol: Option<TxSolution> = None;

    for round in 1..=COSIM_MAX_ROUNDS {
        // Distribution pass at the current boundary voltage estimates.
        dx.clear();
        for (li, link) in case.links.iter().enumerate() {
            let feeder = &case.feeders[link_feeder[li]];
            let scale = op.lambda * op.link_scale[li];
            let sol = dxflow::solve_bfs(feeder, v_est[li], scale, &op.der_q[li], taps[li])?;
            if !sol.converged {
                return Ok(finish(
                    false,
                    round,
                    Some(CosimFailure::DxDiverged(feeder.id.clone())),
                    tx_sol,
                    dx,
                    link_p,
                    link_q,
                    round_trace,
                    case,
                    op,
                ));
            }
            let (hp, hq) = sol.head_total();
            let (p, q) = dxflow::boundary_aggregate(link, hp, hq);
            link_p[li] = p;
            link_q[li] = q;
            taps[li] = Some(sol.tap);
            dx.push(sol);
        }

        // Transmission pass against the aggregated boundary loads.
        let tx_op = tx_operating_point(case, op, &link_bus, &link_p, &link_q);
        let warm_v = tx_warm
            .as_ref()
            .map(|s| (s.v_mag.as_slice(), s.v_ang.as_slice()));
        let sol = txflow::solve_nr_from(net, &tx_op, warm_v)?;
        if !sol.converged {
            return Ok(finish(
                false,
                round,
                Some(CosimFailure::TxDiverged),
                Some(sol),
                dx,
                link_p,
                link_q,
                round_trace,
                case,
                op,
            ));
        }

        // Boundary agreement: voltages the feeders were solved at vs. the
        // fresh transmission solution, and round-over-round aggregates.
        let mut dv: f64 = 0.0;
        for (li, &b) in link_bus.iter().enumerate() {
            dv = dv.max((sol.v_mag[b] - v_est[li].0).abs());
            v_est[li] = (sol.v_mag[b], sol.v_ang[b]);
        }
        let dq: f64 = match &prev_q {
            Some(prev) => link_q
                .iter()
                .zip(prev)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
            None if case.links.is_empty() => 0.0,
            None => f64::INFINITY,
        };
        prev_q = Some(link_q.clone());
        round_trace.push((dv, dq));
        tx_warm = Some(sol.clone());
        tx_sol = Some(sol);

        if dv <= COSIM_TOL_V && dq <= COSIM_TOL_Q {
            return Ok(finish(
                true, round, None, tx_sol, dx, link_p, link_q, round_trace, case, op,
            ));
        }
    }

    Ok(finish(
        false,
        COSIM_MAX_ROUNDS,
        Some(CosimFailure::RoundLimit),
        tx_sol,
        dx,
        link_p,
        link_q,
        round_trace,
        case,
        op,
    ))
}

fn tx_operating_point(
    case: &Case,
    op: &OperatingPoint,
    link_bus: &[usize],
    link_p: &[f64],
    link_q: &[f64],
) -> TxOperatingPoint {
    let net = &case.tx;
    let mut load_p: Vec<f64> = net
        .buses
        .iter()
        .enumerate()
        .map(|(i, b)| op.lambda * op.bus_scale[i] * b.base_load_p)
        .collect();
    let mut load_q: Vec<f64> = net
        .buses
        .iter()
        .enumerate()
        .map(|(i, b)| op.lambda * op.bus_scale[i] * b.base_load_q)
        .collect();
    for (li, &b) in link_bus.iter().enumerate() {
        load_p[b] += link_p[li];
        load_q[b] += link_q[li];
    }
    for (b, s) in op.bus_q_support.iter().enumerate() {
        load_q[b] -= s;
    }
    let unit_q_limits = (0..net.units().len())
        .map(|i| net.unit_q_limits(i, op.unit_p[i]))
        .collect();
    TxOperatingPoint {
        unit_p: op.unit_p.clone(),
        unit_v: op.unit_v.clone(),
        unit_q_limits,
        load_p,
        load_q,
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    converged: bool,
    rounds: usize,
    failure: Option<CosimFailure>,
    tx: Option<TxSolution>,
    dx: Vec<DxSolution>,
    link_p: Vec<f64>,
    link_q: Vec<f64>,
    round_trace: Vec<(f64, f64)>,
    case: &Case,
    op: &OperatingPoint,
) -> CosimSolution {
    let (load_p, load_q) = match &tx {
        Some(_) => {
            let link_bus: Vec<usize> = case
                .links
                .iter()
                .map(|l| case.tx.bus_index(l.tx_bus).unwrap())
                .collect();
            let tx_op = tx_operating_point(case, op, &link_bus, &link_p, &link_q);
            (tx_op.load_p, tx_op.load_q)
        }
        None => (vec![f64::NAN; case.tx.buses.len()], vec![f64::NAN; case.tx.buses.len()]),
    };
    let tx = tx.unwrap_or_else(|| TxSolution::empty(case.tx.buses.len(), case.tx.units().len()));
    CosimSolution {
        converged,
        rounds,
        failure,
        tx,
        dx,
        link_p,
        link_q,
        load_p,
        load_q,
        round_trace,
    }
}
