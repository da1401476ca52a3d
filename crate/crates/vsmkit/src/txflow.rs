//! Transmission AC power flow: full-Newton polar formulation with
//! generator reactive-limit (PV/PQ) switching, plus first-order sensitivities
//! extracted from the final Jacobian.
//!
//! Non-convergence is a *result*, not an error: the margin search uses the
//! `converged` flag as its collapse detector, so the solver returns
//! `TxSolution { converged: false, .. }` instead of failing.
//!
//! Mismatch layout (pu on `base_mva`):
//! `f = [dP at all non-slack buses; dQ at PQ buses]`, unknowns
//! `x = [theta at non-slack; |V| at PQ]`. The Jacobian is refactorized every
//! iteration; systems this size make factorization updates pointless.

use crate::netmodel::TransmissionNetwork;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

/// Convergence tolerance on the worst power mismatch, pu.
pub const NR_TOL: f64 = 1e-8;
/// Inner Newton iteration cap.
pub const NR_MAX_ITER: usize = 30;
/// Cap on PV->PQ / PQ->PV switches per solve.
const MAX_SWITCHES: usize = 20;
/// Voltage collapse guard: solutions below this magnitude are rejected.
const V_FLOOR: f64 = 0.2;

#[derive(Debug, Error)]
pub enum TxError {
    #[error("operating point has {got} entries for {what}, network needs {want}")]
    ShapeMismatch {
        what: &'static str,
        got: usize,
        want: usize,
    },
    #[error("jacobian is singular at the solution; sensitivities unavailable")]
    SingularJacobian,
    #[error("sensitivities require a converged solution")]
    NotConverged,
}

/// Transmission-side operating point. Unit vectors follow the crate-wide
/// ordering (generators by bus id, then IBRs by bus id); load vectors align
/// with `net.buses`.
#[derive(Debug, Clone)]
pub struct TxOperatingPoint {
    /// Active setpoints, MW. The slack unit's entry is nominal only.
    pub unit_p: Vec<f64>,
    /// Voltage setpoints, pu.
    pub unit_v: Vec<f64>,
    /// Reactive capability at the current output, MVAr.
    pub unit_q_limits: Vec<(f64, f64)>,
    /// Net load per bus, MW / MVAr (feeder aggregates already folded in).
    pub load_p: Vec<f64>,
    pub load_q: Vec<f64>,
}

impl TxOperatingPoint {
    /// Case-nominal point: unit setpoints from the case, native bus loads only.
    pub fn nominal(net: &TransmissionNetwork) -> Self {
        let units = net.units();
        TxOperatingPoint {
            unit_p: units.iter().map(|u| u.p_out).collect(),
            unit_v: units.iter().map(|u| u.v_set).collect(),
            unit_q_limits: units
                .iter()
                .enumerate()
                .map(|(i, u)| net.unit_q_limits(i, u.p_out))
                .collect(),
            load_p: net.buses.iter().map(|b| b.base_load_p).collect(),
            load_q: net.buses.iter().map(|b| b.base_load_q).collect(),
        }
    }

    fn check(&self, net: &TransmissionNetwork) -> Result<(), TxError> {
        let nu = net.gens.len() + net.ibrs.len();
        let nb = net.buses.len();
        for (what, got, want) in [
            ("unit_p", self.unit_p.len(), nu),
            ("unit_v", self.unit_v.len(), nu),
            ("unit_q_limits", self.unit_q_limits.len(), nu),
            ("load_p", self.load_p.len(), nb),
            ("load_q", self.load_q.len(), nb),
        ] {
            if got != want {
                return Err(TxError::ShapeMismatch { what, got, want });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TxSolution {
    pub converged: bool,
    /// Newton iterations summed over all PV/PQ switching rounds.
    pub iterations: usize,
    /// Worst mismatch after each Newton step, pu (debug trace).
    pub mismatch_trace: Vec<f64>,
    pub max_mismatch: f64,
    /// Per bus, aligned with `net.buses`.
    pub v_mag: Vec<f64>,
    pub v_ang: Vec<f64>,
    /// Realized unit outputs, MW / MVAr (slack P differs from its setpoint).
    pub unit_p: Vec<f64>,
    pub unit_q: Vec<f64>,
    /// True while the unit still holds its voltage setpoint (PV mode).
    pub unit_pv: Vec<bool>,
}

impl TxSolution {
    /// Placeholder for paths where no transmission solve ever ran.
    pub fn empty(n_bus: usize, n_units: usize) -> Self {
        TxSolution {
            converged: false,
            iterations: 0,
            mismatch_trace: Vec::new(),
            max_mismatch: f64::INFINITY,
            v_mag: vec![f64::NAN; n_bus],
            v_ang: vec![f64::NAN; n_bus],
            unit_p: vec![f64::NAN; n_units],
            unit_q: vec![f64::NAN; n_units],
            unit_pv: vec![false; n_units],
        }
    }
}

/// Complex bus admittance matrix over in-service branches.
fn ybus(net: &TransmissionNetwork) -> Vec<Vec<Complex64>> {
    let n = net.buses.len();
    let mut y = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    for br in net.branches.iter().filter(|b| b.in_service) {
        let f = net.bus_index(br.from).unwrap();
        let t = net.bus_index(br.to).unwrap();
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        let sh = Complex64::new(0.0, br.b_shunt / 2.0);
        y[f][f] += ys + sh;
        y[t][t] += ys + sh;
        y[f][t] -= ys;
        y[t][f] -= ys;
    }
    y
}

/// Bus-level complex power injection, pu.
fn injections(y: &[Vec<Complex64>], vm: &[f64], va: &[f64]) -> Vec<Complex64> {
    let n = vm.len();
    let v: Vec<Complex64> = (0..n)
        .map(|i| Complex64::from_polar(vm[i], va[i]))
        .collect();
    (0..n)
        .map(|i| {
            let i_inj: Complex64 = (0..n).map(|j| y[i][j] * v[j]).sum();
            v[i] * i_inj.conj()
        })
        .collect()
}

struct Roles {
    /// Unit index at each bus, if any.
    unit_at: Vec<Option<usize>>,
    slack_bus: usize,
    /// PV-mode flag per unit; false = pinned at a reactive limit.
    unit_pv: Vec<bool>,
    /// Pinned reactive value per unit (meaningful when !unit_pv), pu.
    unit_q_fix: Vec<f64>,
}

impl Roles {
    fn is_pv_bus(&self, bus: usize) -> bool {
        if bus == self.slack_bus {
            return false;
        }
        matches!(self.unit_at[bus], Some(u) if self.unit_pv[u])
    }
}

pub fn solve_nr(
    net: &TransmissionNetwork,
    op: &TxOperatingPoint,
) -> Result<TxSolution, TxError> {
    solve_nr_from(net, op, None)
}

/// Newton solve with an optional warm start `(v_mag, v_ang)` from a nearby
/// solution (used by the margin tracer while ramping load).
pub fn solve_nr_from(
    net: &TransmissionNetwork,
    op: &TxOperatingPoint,
    warm: Option<(&[f64], &[f64])>,
) -> Result<TxSolution, TxError> {
    solve_with_tol(net, op, warm, NR_TOL, NR_MAX_ITER)
}

/// Full solve with explicit tolerances; the finite-difference oracles tighten
/// these to keep truncation error out of derivative checks.
pub fn solve_with_tol(
    net: &TransmissionNetwork,
    op: &TxOperatingPoint,
    warm: Option<(&[f64], &[f64])>,
    tol: f64,
    max_iter: usize,
) -> Result<TxSolution, TxError> {
    op.check(net)?;
    let n = net.buses.len();
    let units = net.units();
    let y = ybus(net);

    let mut roles = Roles {
        unit_at: vec![None; n],
        slack_bus: net.slack_index(),
        unit_pv: vec![true; units.len()],
        unit_q_fix: vec![0.0; units.len()],
    };
    for (ui, u) in units.iter().enumerate() {
        roles.unit_at[net.bus_index(u.bus).unwrap()] = Some(ui);
    }

    // Start point: warm if supplied, else flat with setpoint magnitudes.
    let mut vm = vec![1.0; n];
    let mut va = vec![0.0; n];
    if let Some((wm, wa)) = warm {
        vm.copy_from_slice(wm);
        va.copy_from_slice(wa);
    }
    for (ui, u) in units.iter().enumerate() {
        let b = net.bus_index(u.bus).unwrap();
        if roles.unit_pv[ui] {
            vm[b] = op.unit_v[ui];
        }
    }

    // Specified injections, pu. P at every non-slack bus; Q contributions of
    // PV units are free, PQ units contribute their pinned value.
    let base = net.base_mva;
    let p_unit_spec: Vec<f64> = op.unit_p.iter().map(|p| p / base).collect();

    let mut trace = Vec::new();
    let mut total_iters = 0usize;
    let mut switches = 0usize;

    loop {
        let inner = newton_inner(
            net, &y, &roles, op, &p_unit_spec, &mut vm, &mut va, tol, max_iter, &mut trace,
        );
        total_iters += inner.iterations;
        if !inner.converged {
            return Ok(finish(
                net, &y, op, &roles, &vm, &va, false, total_iters, trace,
            ));
        }

        // Reactive outputs needed from PV units to hold their setpoints.
        let s = injections(&y, &vm, &va);
        let mut worst: Option<(usize, f64, bool)> = None; // (unit, violation, at_max)
        for (ui, u) in units.iter().enumerate() {
            if !roles.unit_pv[ui] {
                continue;
            }
            let b = net.bus_index(u.bus).unwrap();
            if b == roles.slack_bus {
                continue; // slack machine's Q is whatever balances
            }
            let q_gen = s[b].im + op.load_q[b] / base;
            let (q_lo, q_hi) = op.unit_q_limits[ui];
            let (q_lo, q_hi) = (q_lo / base, q_hi / base);
            let (viol, at_max) = if q_gen > q_hi {
                (q_gen - q_hi, true)
            } else if q_gen < q_lo {
                (q_lo - q_gen, false)
            } else {
                continue;
            };
            // Worst violator first; ties resolved toward the lowest bus id
            // (strict > keeps the earlier, lower-bus entry on ties).
            if worst.map_or(true, |(_, w, _)| viol > w) {
                worst = Some((ui, viol, at_max));
            }
        }

        match worst {
            Some((ui, _, at_max)) if switches < MAX_SWITCHES => {
                switches += 1;
                roles.unit_pv[ui] = false;
                let (q_lo, q_hi) = op.unit_q_limits[ui];
                roles.unit_q_fix[ui] = if at_max { q_hi / base } else { q_lo / base };
                // Bus magnitude becomes an unknown; keep current value as start.
                continue;
            }
            Some(_) => {
                // Switch budget exhausted while violations remain.
                return Ok(finish(
                    net, &y, op, &roles, &vm, &va, false, total_iters, trace,
                ));
            }
            None => {}
        }

        // Reverse switching: a pinned unit whose bus voltage has recovered
        // past its setpoint may resume voltage control. One per round.
        let mut back: Option<usize> = None;
        for (ui, u) in units.iter().enumerate() {
            if roles.unit_pv[ui] {
                continue;
            }
            let b = net.bus_index(u.bus).unwrap();
            let (q_lo, _q_hi) = op.unit_q_limits[ui];
            let at_max = roles.unit_q_fix[ui] > q_lo / base + f64::EPSILON;
            let recovers = (at_max && vm[b] > op.unit_v[ui]) || (!at_max && vm[b] < op.unit_v[ui]);
            if recovers {
                back = Some(ui);
                break; // lowest unit (lowest bus id) first
            }
        }
        if let Some(ui) = back {
            if switches < MAX_SWITCHES {
                switches += 1;
                roles.unit_pv[ui] = true;
                let b = net.bus_index(units[ui].bus).unwrap();
                vm[b] = op.unit_v[ui];
                continue;
            }
        }

        return Ok(finish(
            net, &y, op, &roles, &vm, &va, true, total_iters, trace,
        ));
    }
}

struct InnerResult {
    converged: bool,
    iterations: usize,
}

/// One Newton run with fixed PV/PQ roles. Mutates `vm`/`va` in place.
#[allow(clippy::too_many_arguments)]
fn newton_inner(
    net: &TransmissionNetwork,
    y: &[Vec<Complex64>],
    roles: &Roles,
    op: &TxOperatingPoint,
    p_unit_spec: &[f64],
    vm: &mut [f64],
    va: &mut [f64],
    tol: f64,
    max_iter: usize,
    trace: &mut Vec<f64>,
) -> InnerResult {
    let n = net.buses.len();
    let base = net.base_mva;
    let slack = roles.slack_bus;

    // Index maps for the unknown vector.
    let ang_buses: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let mag_buses: Vec<usize> = (0..n)
        .filter(|&i| i != slack && !roles.is_pv_bus(i))
        .collect();
    let n_ang = ang_buses.len();
    let n_mag = mag_buses.len();
    let dim = n_ang + n_mag;
    if dim == 0 {
        return InnerResult {
            converged: true,
            iterations: 0,
        };
    }
    let mut ang_pos = vec![usize::MAX; n];
    let mut mag_pos = vec![usize::MAX; n];
    for (k, &b) in ang_buses.iter().enumerate() {
        ang_pos[b] = k;
    }
    for (k, &b) in mag_buses.iter().enumerate() {
        mag_pos[b] = n_ang + k;
    }

    // Specified injections, pu.
    let mut p_spec = vec![0.0; n];
    let mut q_spec = vec![0.0; n];
    for i in 0..n {
        p_spec[i] = -op.load_p[i] / base;
        q_spec[i] = -op.load_q[i] / base;
        if let Some(ui) = roles.unit_at[i] {
            p_spec[i] += p_unit_spec[ui];
            if !roles.unit_pv[ui] {
                q_spec[i] += roles.unit_q_fix[ui];
            }
        }
    }

    for it in 0..max_iter {
        let s = injections(y, vm, va);
        let mut f = DVector::zeros(dim);
        for (k, &b) in ang_buses.iter().enumerate() {
            f[k] = s[b].re - p_spec[b];
        }
        for (k, &b) in mag_buses.iter().enumerate() {
            f[n_ang + k] = s[b].im - q_spec[b];
        }
        let worst = f.amax();
        if !worst.is_finite() {
            return InnerResult {
                converged: false,
                iterations: it,
            };
        }
        trace.push(worst);
        if worst <= tol {
            return InnerResult {
                converged: true,
                iterations: it,
            };
        }

        let jac = jacobian(y, vm, va, &s, &ang_buses, &mag_buses, &ang_pos, &mag_pos);
        let Some(step) = jac.lu().solve(&(-f)) else {
            return InnerResult {
                converged: false,
                iterations: it + 1,
            };
        };
        for (k, &b) in ang_buses.iter().enumerate() {
            va[b] += step[k];
        }
        for (k, &b) in mag_buses.iter().enumerate() {
            vm[b] += step[n_ang + k];
            if vm[b] < V_FLOOR {
                return InnerResult {
                    converged: false,
                    iterations: it + 1,
                };
            }
        }
    }
    InnerResult {
        converged: false,
        iterations: max_iter,
    }
}

/// Polar power-flow Jacobian for the given unknown layout.
#[allow(clippy::too_many_arguments)]
fn jacobian(
    y: &[Vec<Complex64>],
    vm: &[f64],
    va: &[f64],
    s: &[Complex64],
    ang_buses: &[usize],
    mag_buses: &[usize],
    ang_pos: &[usize],
    mag_pos: &[usize],
) -> DMatrix<f64> {
    let n_ang = ang_buses.len();
    let dim = n_ang + mag_buses.len();
    let mut j = DMatrix::zeros(dim, dim);

    // Row helper: fill dP_i/dx and dQ_i/dx entries.
    let mut fill = |row: usize, i: usize, is_p: bool| {
        for jx in 0..vm.len() {
            let gij = y[i][jx].re;
            let bij = y[i][jx].im;
            let (c, sn) = {
                let th = va[i] - va[jx];
                (th.cos(), th.sin())
            };
            // Angle columns.
            if ang_pos[jx] != usize::MAX && jx != i {
                let v = if is_p {
                    vm[i] * vm[jx] * (gij * sn - bij * c)
                } else {
                    -vm[i] * vm[jx] * (gij * c + bij * sn)
                };
                j[(row, ang_pos[jx])] = v;
            }
            // Magnitude columns.
            if mag_pos[jx] != usize::MAX && jx != i {
                let v = if is_p {
                    vm[i] * (gij * c + bij * sn)
                } else {
                    vm[i] * (gij * sn - bij * c)
                };
                j[(row, mag_pos[jx])] = v;
            }
        }
        let gii = y[i][i].re;
        let bii = y[i][i].im;
        if ang_pos[i] != usize::MAX {
            j[(row, ang_pos[i])] = if is_p {
                -s[i].im - bii * vm[i] * vm[i]
            } else {
                s[i].re - gii * vm[i] * vm[i]
            };
        }
        if mag_pos[i] != usize::MAX {
            j[(row, mag_pos[i])] = if is_p {
                s[i].re / vm[i] + gii * vm[i]
            } else {
                s[i].im / vm[i] - bii * vm[i]
            };
        }
    };

    for (k, &b) in ang_buses.iter().enumerate() {
        fill(k, b, true);
    }
    for (k, &b) in mag_buses.iter().enumerate() {
        fill(n_ang + k, b, false);
    }
    j
}

#[allow(clippy::too_many_arguments)]
fn finish(
    net: &TransmissionNetwork,
    y: &[Vec<Complex64>],
    op: &TxOperatingPoint,
    roles: &Roles,
    vm: &[f64],
    va: &[f64],
    converged: bool,
    iterations: usize,
    trace: Vec<f64>,
) -> TxSolution {
    let base = net.base_mva;
    let s = injections(y, vm, va);
    let units = net.units();
    let mut unit_p = vec![0.0; units.len()];
    let mut unit_q = vec![0.0; units.len()];
    for (ui, u) in units.iter().enumerate() {
        let b = net.bus_index(u.bus).unwrap();
        // Realized output = bus injection plus local load.
        unit_p[ui] = (s[b].re) * base + op.load_p[b];
        unit_q[ui] = (s[b].im) * base + op.load_q[b];
    }
    let max_mismatch = trace.last().copied().unwrap_or(0.0);
    TxSolution {
        converged,
        iterations,
        mismatch_trace: trace,
        max_mismatch,
        v_mag: vm.to_vec(),
        v_ang: va.to_vec(),
        unit_p,
        unit_q,
        unit_pv: roles.unit_pv.clone(),
    }
}

// ---------------------------------------------------------------------------
// Sensitivities
// ---------------------------------------------------------------------------

/// First-order responses extracted from the final power-flow Jacobian.
/// Columns follow the crate-wide unit ordering / the `load_buses` list.
#[derive(Debug, Clone)]
pub struct TxSensitivities {
    /// d|V_bus| / d(V_g setpoint), pu per pu. Rows align with `net.buses`.
    pub dv_dvg: Vec<Vec<f64>>,
    /// d|V_bus| / d(Q injection at load bus), pu per MVAr.
    pub dv_dq: Vec<Vec<f64>>,
    /// dQ_g/dV_g of each unit at its own bus, MVAr per pu.
    pub dqg_dvg: Vec<f64>,
    /// Bus ids of the `dv_dq` columns.
    pub load_buses: Vec<usize>,
}

/// Implicit-function sensitivities at a converged solution: for each control
/// `u`, solve `J dz = -dF/du` with the PV/PQ partition frozen at its final
/// state. Units pinned at a reactive limit get zero columns (their setpoint
/// no longer binds the solution).
pub fn sensitivities(
    net: &TransmissionNetwork,
    sol: &TxSolution,
    load_buses: &[usize],
) -> Result<TxSensitivities, TxError> {
    if !sol.converged {
        return Err(TxError::NotConverged);
    }
    let n = net.buses.len();
    let base = net.base_mva;
    let units = net.units();
    let y = ybus(net);
    let slack = net.slack_index();
    let vm = &sol.v_mag;
    let va = &sol.v_ang;
    let s = injections(&y, vm, va);

    let is_pv_bus = |b: usize| -> bool {
        if b == slack {
            return false;
        }
        units
            .iter()
            .enumerate()
            .any(|(ui, u)| net.bus_index(u.bus).unwrap() == b && sol.unit_pv[ui])
    };

    let ang_buses: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let mag_buses: Vec<usize> = (0..n).filter(|&i| i != slack && !is_pv_bus(i)).collect();
    let n_ang = ang_buses.len();
    let dim = n_ang + mag_buses.len();
    let mut ang_pos = vec![usize::MAX; n];
    let mut mag_pos = vec![usize::MAX; n];
    for (k, &b) in ang_buses.iter().enumerate() {
        ang_pos[b] = k;
    }
    for (k, &b) in mag_buses.iter().enumerate() {
        mag_pos[b] = n_ang + k;
    }

    let jac = jacobian(&y, vm, va, &s, &ang_buses, &mag_buses, &ang_pos, &mag_pos);
    let lu = jac.lu();

    // dF/dV_b for a PV bus b whose magnitude is a parameter: the column of
    // the full Jacobian with respect to V_b, restricted to the active rows.
    let df_dvb = |b: usize| -> DVector<f64> {
        let mut col = DVector::zeros(dim);
        for (k, &i) in ang_buses.iter().enumerate() {
            // dP_i/dV_b
            col[k] = if i == b {
                s[i].re / vm[i] + y[i][i].re * vm[i]
            } else {
                let th = va[i] - va[b];
                vm[i] * (y[i][b].re * th.cos() + y[i][b].im * th.sin())
            };
        }
        for (k, &i) in mag_buses.iter().enumerate() {
            // dQ_i/dV_b (i is PQ, so i != b)
            let th = va[i] - va[b];
            col[n_ang + k] = vm[i] * (y[i][b].re * th.sin() - y[i][b].im * th.cos());
        }
        col
    };

    let mut dv_dvg = vec![vec![0.0; units.len()]; n];
    let mut dqg_dvg = vec![0.0; units.len()];
    for (ui, u) in units.iter().enumerate() {
        let b = net.bus_index(u.bus).unwrap();
        // Pinned at a limit: the setpoint has no first-order effect (zero
        // column). The slack machine's magnitude is always a genuine control.
        if !sol.unit_pv[ui] && b != slack {
            continue;
        }
        let rhs = -df_dvb(b);
        let dz = lu.solve(&rhs).ok_or(TxError::SingularJacobian)?;
        for (k, &i) in mag_buses.iter().enumerate() {
            dv_dvg[i][ui] = dz[n_ang + k];
        }
        dv_dvg[b][ui] = 1.0;

        // dQ at bus b: direct term plus propagation through the state.
        let mut dq = {
            // dQ_b/dV_b (direct)
            s[b].im / vm[b] - y[b][b].im * vm[b]
        };
        for (k, &jb) in ang_buses.iter().enumerate() {
            // dQ_b/dtheta_j
            let d = if jb == b {
                s[b].re - y[b][b].re * vm[b] * vm[b]
            } else {
                let th = va[b] - va[jb];
                -vm[b] * vm[jb] * (y[b][jb].re * th.cos() + y[b][jb].im * th.sin())
            };
            dq += d * dz[k];
        }
        for (k, &jb) in mag_buses.iter().enumerate() {
            // dQ_b/dV_j, j != b (b is PV so its magnitude isn't a column)
            let th = va[b] - va[jb];
            let d = vm[b] * (y[b][jb].re * th.sin() - y[b][jb].im * th.cos());
            dq += d * dz[n_ang + k];
        }
        dqg_dvg[ui] = dq * base;
    }

    // Reactive injection columns: dF/dQ_m = -e_(Q row at m), so
    // J dz = e_(Q row at m); scale pu -> MVAr.
    let mut dv_dq = vec![vec![0.0; load_buses.len()]; n];
    for (col, &bus_id) in load_buses.iter().enumerate() {
        let b = net
            .bus_index(bus_id)
            .ok_or(TxError::ShapeMismatch {
                what: "load_buses",
                got: bus_id,
                want: n,
            })?;
        if mag_pos[b] == usize::MAX {
            continue; // PV or slack bus: injection absorbed by the unit
        }
        let mut rhs = DVector::zeros(dim);
        rhs[mag_pos[b]] = 1.0;
        let dz = lu.solve(&rhs).ok_or(TxError::SingularJacobian)?;
        for (k, &i) in mag_buses.iter().enumerate() {
            dv_dq[i][col] = dz[n_ang + k] / base;
        }
    }

    Ok(TxSensitivities {
        dv_dvg,
        dv_dq,
        dqg_dvg,
        load_buses: load_buses.to_vec(),
    })
}

/// Series + shunt active losses over in-service branches, MW. Non-negative
/// for passive branches; used by conservation tests.
pub fn branch_losses_mw(net: &TransmissionNetwork, sol: &TxSolution) -> f64 {
    let mut total = 0.0;
    for br in net.branches.iter().filter(|b| b.in_service) {
        let f = net.bus_index(br.from).unwrap();
        let t = net.bus_index(br.to).unwrap();
        let vf = Complex64::from_polar(sol.v_mag[f], sol.v_ang[f]);
        let vt = Complex64::from_polar(sol.v_mag[t], sol.v_ang[t]);
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        let i_series = (vf - vt) * ys;
        total += br.r * i_series.norm_sqr();
    }
    total * net.base_mva
}
