//! Transmission-level reactive coordination.
//!
//! Builds and solves the weighted least-effort problem: find the smallest
//! (sensitivity-weighted) shifts of generator voltage setpoints and boundary
//! reactive support that lift the stability margin to a floor, subject to
//!
//! * the linearized bus-voltage band (first-order response to every control),
//! * the linearized margin constraint from the trained model's gradient,
//! * each unit's reactive capability through its diagonal dQ/dV response —
//!   cross-responses to other setpoints and to boundary support are
//!   deliberately dropped from this row (the post-solve nonlinear recheck in
//!   [`verify_dispatch`] catches what the diagonal misses),
//! * the reactive-support travel box per boundary link.
//!
//! Everything here is a pure function of an explicit [`TsoProblem`], so
//! solver behavior is testable without a grid; [`build_tso_problem`] does the
//! wiring from a live co-simulated state, and [`verify_dispatch`] closes the
//! loop by re-running the nonlinear models under the proposed controls.
//!
//! Convention: the model is trained on *net* reactive load per bus, and
//! boundary support reduces net load, so the support sensitivity is the
//! negated model gradient — the flip happens in exactly one place, here.

use crate::cosim::{self, CosimError, CosimSolution, OperatingPoint};
use crate::lp::{self, LpProblem};
use crate::margin;
use crate::mlpvsm::VsmModel;
use crate::netmodel::Case;
use crate::qp::{check_qp_kkt, solve_qp, QpError, QpKktReport, QpProblem};
use crate::txflow::{self, TxError};
use thiserror::Error;

/// Objective weights below this are floored to keep the problem strictly
/// convex (a lone control in its group gets the literal weight 0).
const WEIGHT_FLOOR: f64 = 1e-10;
/// Below this total gradient magnitude the weighting is undefined.
const SENS_EPS: f64 = 1e-12;
/// Gen reactive rows with a weaker diagonal response than this are dropped:
/// the setpoint cannot move that unit's output at first order.
const COEF_EPS: f64 = 1e-9;
/// Violations at or below this in a zero-coefficient row count as float
/// noise, not real infeasibility.
const NOISE_SLACK: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum TsoError {
    #[error("sensitivity magnitudes sum to {0:.3e}; weights undefined")]
    DegenerateGradient(f64),
    #[error(
        "margin floor {vsm_min:.3} MW unreachable: best linearized margin {max_vsm:.3} MW"
    )]
    TargetUnreachable { max_vsm: f64, vsm_min: f64 },
    #[error("model is missing feature {0:?} for this case")]
    FeatureMismatch(String),
    #[error("co-simulation failed to settle at the evaluation point")]
    Diverged,
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Lp(#[from] lp::LpError),
    #[error(transparent)]
    Tx(#[from] TxError),
    #[error(transparent)]
    Cosim(#[from] CosimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    Sensitivity,
    Equal,
}

fn magnitude_weights(g: &[f64]) -> Result<Vec<f64>, TsoError> {
    if g.is_empty() {
        return Ok(Vec::new());
    }
    let total: f64 = g.iter().map(|v| v.abs()).sum();
    if total < SENS_EPS {
        return Err(TsoError::DegenerateGradient(total));
    }
    Ok(g.iter().map(|v| 1.0 - v.abs() / total).collect())
}

/// Per-group objective weights `a = 1 − |s| / Σ|s|`, so the most effective
/// control in each group is the cheapest to move. Each group independently
/// satisfies `Σ a = count − 1`. Equal mode sets every weight to 1.
pub fn build_weights(
    dvsm_dvg: &[f64],
    dvsm_dqg: &[f64],
    mode: WeightMode,
) -> Result<(Vec<f64>, Vec<f64>), TsoError> {
    match mode {
        WeightMode::Equal => Ok((vec![1.0; dvsm_dvg.len()], vec![1.0; dvsm_dqg.len()])),
        WeightMode::Sensitivity => Ok((
            magnitude_weights(dvsm_dvg)?,
            magnitude_weights(dvsm_dqg)?,
        )),
    }
}

/// Fully explicit problem data. Controls are ordered units-then-links; every
/// sensitivity is evaluated at the state the deltas are measured from.
#[derive(Debug, Clone)]
pub struct TsoProblem {
    /// Model-estimated margin at the current state, MW.
    pub vsm_current: f64,
    /// Margin floor to reach, MW.
    pub vsm_min: f64,
    /// ∂margin/∂V_g per unit, MW per pu (zeroed for units pinned at a
    /// reactive limit — their setpoint is inert at first order).
    pub dvsm_dvg: Vec<f64>,
    /// ∂margin/∂Q_support per link, MW per MVAr (net-load sign already
    /// flipped).
    pub dvsm_dqg: Vec<f64>,
    /// Objective weights, one per control in the same order.
    pub a_v: Vec<f64>,
    pub a_q: Vec<f64>,
    /// Voltage rows: per bus, id, current magnitude, band, and first-order
    /// response to each control.
    pub bus_ids: Vec<usize>,
    pub v_now: Vec<f64>,
    pub v_lo: Vec<f64>,
    pub v_hi: Vec<f64>,
    /// `dv_dvg[bus][unit]`, pu per pu.
    pub dv_dvg: Vec<Vec<f64>>,
    /// `dv_dq[bus][link]`, pu per MVAr of support.
    pub dv_dq: Vec<Vec<f64>>,
    /// Unit reactive state: bus id, current output, box, diagonal response.
    pub unit_bus: Vec<usize>,
    pub qg_now: Vec<f64>,
    pub qg_lo: Vec<f64>,
    pub qg_hi: Vec<f64>,
    pub dqg_dvg: Vec<f64>,
    /// Feeder names per link, for constraint labels.
    pub link_names: Vec<String>,
    /// Support travel box per link, MVAr.
    pub dq_lo: Vec<f64>,
    pub dq_hi: Vec<f64>,
}

impl TsoProblem {
    pub fn n_units(&self) -> usize {
        self.dvsm_dvg.len()
    }

    pub fn n_links(&self) -> usize {
        self.dvsm_dqg.len()
    }

    pub fn gap(&self) -> f64 {
        self.vsm_min - self.vsm_current
    }

    fn vsm_row(&self) -> Vec<f64> {
        let mut g = self.dvsm_dvg.clone();
        g.extend_from_slice(&self.dvsm_dqg);
        g
    }
}

/// Solver output: one delta per control plus the linearized predictions and
/// the independently checked optimality certificate.
#[derive(Debug, Clone)]
pub struct TsoDispatch {
    /// Voltage setpoint shifts per unit, pu.
    pub dv_g: Vec<f64>,
    /// Boundary support shifts per link, MVAr.
    pub dq_g: Vec<f64>,
    /// First-order bus voltages after the dispatch, pu.
    pub predicted_v: Vec<f64>,
    /// Linearized margin after the dispatch, MW.
    pub predicted_vsm: f64,
    pub objective: f64,
    /// Labels of constraints active at the optimum.
    pub active: Vec<String>,
    pub kkt: QpKktReport,
}

impl TsoDispatch {
    /// Count of controls actually moved (|Δ| above `tol`).
    pub fn moved(&self, tol: f64) -> usize {
        self.dv_g
            .iter()
            .chain(&self.dq_g)
            .filter(|d| d.abs() > tol)
            .count()
    }
}

/// All constraint rows except the margin row, in `aᵀΔ ≤ b` form with labels.
fn constraint_rows(p: &TsoProblem) -> (Vec<(Vec<f64>, f64)>, Vec<String>) {
    let nu = p.n_units();
    let nl = p.n_links();
    let n = nu + nl;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut push = |a: Vec<f64>, b: f64, label: String| {
        let coef = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        // A row no control can influence is float noise unless genuinely
        // violated, in which case it must stay and report infeasibility.
        if coef <= 1e-12 && b >= -NOISE_SLACK {
            return;
        }
        rows.push((a, b));
        labels.push(label);
    };

    for (bi, &id) in p.bus_ids.iter().enumerate() {
        let mut a = vec![0.0; n];
        for u in 0..nu {
            a[u] = p.dv_dvg[bi][u];
        }
        for l in 0..nl {
            a[nu + l] = p.dv_dq[bi][l];
        }
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        push(a, p.v_hi[bi] - p.v_now[bi], format!("v_max@bus{id}"));
        push(neg, p.v_now[bi] - p.v_lo[bi], format!("v_min@bus{id}"));
    }
    for u in 0..nu {
        if p.dqg_dvg[u].abs() <= COEF_EPS {
            continue;
        }
        let mut a = vec![0.0; n];
        a[u] = p.dqg_dvg[u];
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        push(a, p.qg_hi[u] - p.qg_now[u], format!("q_max@gen{}", p.unit_bus[u]));
        push(neg, p.qg_now[u] - p.qg_lo[u], format!("q_min@gen{}", p.unit_bus[u]));
    }
    for l in 0..nl {
        let mut a = vec![0.0; n];
        a[nu + l] = 1.0;
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        push(a, p.dq_hi[l], format!("dq_max@{}", p.link_names[l]));
        push(neg, -p.dq_lo[l], format!("dq_min@{}", p.link_names[l]));
    }
    (rows, labels)
}

/// The assembled strictly convex program and its row labels (margin row last).
fn assemble(p: &TsoProblem) -> Result<(QpProblem, Vec<String>), TsoError> {
    let mut w: Vec<f64> = Vec::with_capacity(p.n_units() + p.n_links());
    w.extend(p.a_v.iter().map(|a| a.max(WEIGHT_FLOOR)));
    w.extend(p.a_q.iter().map(|a| a.max(WEIGHT_FLOOR)));
    let mut qp = QpProblem::diag_weights(&w);
    let (rows, mut labels) = constraint_rows(p);
    for (a, b) in rows {
        qp.le(a, b)?;
    }
    qp.ge(p.vsm_row(), p.gap())?;
    labels.push("vsm_min".into());
    Ok((qp, labels))
}

/// Largest linearized margin gain the boxes and bands allow, ignoring the
/// margin floor — the diagnostic attached to an unreachable-target error.
fn max_linear_gain(p: &TsoProblem) -> Result<f64, TsoError> {
    let n = p.n_units() + p.n_links();
    let (rows, _) = constraint_rows(p);
    let g = p.vsm_row();
    // Free-sign deltas as split pairs; maximize gᵀΔ = minimize −gᵀΔ.
    let mut cost = vec![0.0; 2 * n];
    for i in 0..n {
        cost[i] = -g[i];
        cost[n + i] = g[i];
    }
    let mut prob = LpProblem::with_cost(cost);
    for (a, b) in rows {
        let mut row = vec![0.0; 2 * n];
        for i in 0..n {
            row[i] = a[i];
            row[n + i] = -a[i];
        }
        prob.le(row, b)?;
    }
    let sol = lp::solve_lp(&prob)?;
    Ok(-sol.objective)
}

/// Solve the coordination problem. A gap that is already closed returns the
/// zero dispatch immediately; an unreachable floor reports the best margin
/// the linearized constraints allow.
pub fn solve_tso(p: &TsoProblem) -> Result<TsoDispatch, TsoError> {
    let nu = p.n_units();
    let nl = p.n_links();
    if p.gap() <= 0.0 {
        return Ok(TsoDispatch {
            dv_g: vec![0.0; nu],
            dq_g: vec![0.0; nl],
            predicted_v: p.v_now.clone(),
            predicted_vsm: p.vsm_current,
            objective: 0.0,
            active: Vec::new(),
            kkt: QpKktReport {
                stationarity_residual: 0.0,
                primal_residual: 0.0,
                dual_sign_residual: 0.0,
                complementarity_residual: 0.0,
            },
        });
    }

    let (qp, labels) = assemble(p)?;
    let sol = match solve_qp(&qp) {
        Ok(s) => s,
        Err(QpError::Infeasible { .. }) => {
            let max_vsm = p.vsm_current + max_linear_gain(p)?;
            return Err(TsoError::TargetUnreachable {
                max_vsm,
                vsm_min: p.vsm_min,
            });
        }
        Err(e) => return Err(e.into()),
    };

    let dv_g = sol.x[..nu].to_vec();
    let dq_g = sol.x[nu..].to_vec();
    let predicted_v: Vec<f64> = (0..p.bus_ids.len())
        .map(|bi| {
            let dv: f64 = (0..nu).map(|u| p.dv_dvg[bi][u] * dv_g[u]).sum::<f64>()
                + (0..nl).map(|l| p.dv_dq[bi][l] * dq_g[l]).sum::<f64>();
            p.v_now[bi] + dv
        })
        .collect();
    let gain: f64 = p.vsm_row().iter().zip(&sol.x).map(|(g, d)| g * d).sum();
    let kkt = check_qp_kkt(&qp, &sol);
    Ok(TsoDispatch {
        dv_g,
        dq_g,
        predicted_v,
        predicted_vsm: p.vsm_current + gain,
        objective: sol.objective,
        active: sol.active.iter().map(|&i| labels[i].clone()).collect(),
        kkt,
    })
}

/// Wire a problem from a live co-simulated state: voltage and reactive
/// sensitivities from the final transmission Jacobian, margin sensitivities
/// from the trained model's analytic gradient at the current feature vector,
/// and unit reactive boxes evaluated at the current active output.
pub fn build_tso_problem(
    case: &Case,
    op: &OperatingPoint,
    sol: &CosimSolution,
    model: &VsmModel,
    vsm_current: f64,
    vsm_min: f64,
    dq_lo: &[f64],
    dq_hi: &[f64],
    mode: WeightMode,
) -> Result<TsoProblem, TsoError> {
    let units = case.tx.units();
    let link_buses: Vec<usize> = case.links.iter().map(|l| l.tx_bus).collect();
    let sens = txflow::sensitivities(&case.tx, &sol.tx, &link_buses)?;
    let x = margin::features_from(case, op, sol);
    let grad = model.gradient(&x);

    let mut dvsm_dvg = Vec::with_capacity(units.len());
    for (ui, u) in units.iter().enumerate() {
        let name = format!("vg_b{}", u.bus);
        let gi = model
            .feature_index(&name)
            .ok_or(TsoError::FeatureMismatch(name))?;
        // A unit pinned at a reactive limit no longer moves anything with
        // its setpoint; treating it as a live control would let the program
        // "buy" margin from an inert knob.
        let inert = !sol.tx.unit_pv[ui];
        dvsm_dvg.push(if inert { 0.0 } else { grad[gi] });
    }
    let mut dvsm_dqg = Vec::with_capacity(case.links.len());
    for link in &case.links {
        let name = format!("ql_b{}", link.tx_bus);
        let gi = model
            .feature_index(&name)
            .ok_or(TsoError::FeatureMismatch(name))?;
        // Net-load convention: support subtracts from the trained feature.
        dvsm_dqg.push(-grad[gi]);
    }
    let (a_v, a_q) = build_weights(&dvsm_dvg, &dvsm_dqg, mode)?;

    let qg: Vec<(f64, f64)> = units
        .iter()
        .enumerate()
        .map(|(ui, _)| case.tx.unit_q_limits(ui, sol.tx.unit_p[ui]))
        .collect();

    Ok(TsoProblem {
        vsm_current,
        vsm_min,
        dvsm_dvg,
        dvsm_dqg,
        a_v,
        a_q,
        bus_ids: case.tx.buses.iter().map(|b| b.id).collect(),
        v_now: sol.tx.v_mag.clone(),
        v_lo: case.tx.buses.iter().map(|b| b.v_min).collect(),
        v_hi: case.tx.buses.iter().map(|b| b.v_max).collect(),
        dv_dvg: sens.dv_dvg,
        dv_dq: sens.dv_dq,
        unit_bus: units.iter().map(|u| u.bus).collect(),
        qg_now: sol.tx.unit_q.clone(),
        qg_lo: qg.iter().map(|b| b.0).collect(),
        qg_hi: qg.iter().map(|b| b.1).collect(),
        dqg_dvg: sens.dqg_dvg,
        link_names: case.links.iter().map(|l| l.feeder.clone()).collect(),
        dq_lo: dq_lo.to_vec(),
        dq_hi: dq_hi.to_vec(),
    })
}

/// Co-simulate an operating point and read the margin off the trained model.
pub fn evaluate_vsm(
    case: &Case,
    op: &OperatingPoint,
    model: &VsmModel,
) -> Result<(f64, CosimSolution), TsoError> {
    let sol = cosim::solve_cosim(case, op)?;
    if !sol.converged {
        return Err(TsoError::Diverged);
    }
    let x = margin::features_from(case, op, &sol);
    Ok((model.forward(&x), sol))
}

/// Shift unit setpoints and realize boundary support as direct bus reactive
/// injections — the transmission-side stand-in used until feeder redispatch
/// allocates the request to individual DERs.
pub fn apply_dispatch(case: &Case, op: &OperatingPoint, d: &TsoDispatch) -> OperatingPoint {
    let mut next = op.clone();
    for (v, dv) in next.unit_v.iter_mut().zip(&d.dv_g) {
        *v += dv;
    }
    for (li, link) in case.links.iter().enumerate() {
        let b = case.tx.bus_index(link.tx_bus).expect("validated link bus");
        next.bus_q_support[b] += d.dq_g[li];
    }
    next
}

/// Apply a dispatch, re-run the nonlinear chain, and report the realized
/// margin — the honest check on everything the linearization promised.
pub fn verify_dispatch(
    case: &Case,
    op: &OperatingPoint,
    d: &TsoDispatch,
    model: &VsmModel,
) -> Result<(f64, CosimSolution, OperatingPoint), TsoError> {
    let next = apply_dispatch(case, op, d);
    let (vsm, sol) = evaluate_vsm(case, &next, model)?;
    Ok((vsm, sol, next))
}

#[cfg(test)]
pub(crate) mod testkit {
    //! Hand-built surrogates shared by the optimization-layer tests.
    use crate::margin;
    use crate::mlpvsm::{ModelMeta, VsmModel};
    use crate::netmodel::Case;

    /// Deterministic hand-built model over the case's feature layout,
    /// standardized at the supplied feature vector. Margin rises with unit
    /// voltage and falls with net load, in a mild tanh regime.
    pub(crate) fn synthetic_model(case: &Case, x0: &[f64]) -> VsmModel {
        let features = margin::feature_names(case);
        let d = features.len();
        let mu = x0.to_vec();
        let sigma: Vec<f64> = x0.iter().map(|v| (v.abs() * 0.1).max(0.1)).collect();
        let mut w = vec![vec![0.0; d]; 2];
        for (i, f) in features.iter().enumerate() {
            let (w0, w1) = if f.starts_with("vg_") {
                (0.8, 0.3)
            } else if f.starts_with("ql_") {
                (-0.15, -0.05)
            } else if f.starts_with("pl_") {
                (-0.05, 0.0)
            } else {
                (0.02, 0.0)
            };
            w[0][i] = w0;
            w[1][i] = w1;
        }
        VsmModel {
            features,
            mu,
            sigma,
            w,
            b: vec![0.1, -0.2],
            c: vec![12.0, 8.0],
            b_out: 80.0,
            meta: ModelMeta {
                target: "vsm_mw".into(),
                ..ModelMeta::default()
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::testkit::synthetic_model;
    use super::*;
    use crate::mlpvsm::ModelMeta;
    use crate::netmodel::load_case_str;
    use crate::qp::solve_qp_ref;
    use approx::assert_relative_eq;
    use rand::{Rng as _, SeedableRng as _};
    use rand_chacha::ChaCha8Rng;

    /// Synthetic problem: one bus per control, each unit holding its own bus
    /// 1:1, links coupling weakly; bands and reactive boxes wide enough to
    /// stay out of the way unless a test narrows them.
    fn toy_problem(dvsm_dvg: Vec<f64>, dvsm_dqg: Vec<f64>) -> TsoProblem {
        let nu = dvsm_dvg.len();
        let nl = dvsm_dqg.len();
        let nb = nu + nl;
        let mut dv_dvg = vec![vec![0.0; nu]; nb];
        let mut dv_dq = vec![vec![0.0; nl]; nb];
        for u in 0..nu {
            dv_dvg[u][u] = 1.0;
        }
        for l in 0..nl {
            dv_dq[nu + l][l] = 1e-3;
        }
        let (a_v, a_q) =
            build_weights(&dvsm_dvg, &dvsm_dqg, WeightMode::Sensitivity).unwrap();
        TsoProblem {
            vsm_current: 80.0,
            vsm_min: 90.0,
            dvsm_dvg,
            dvsm_dqg,
            a_v,
            a_q,
            bus_ids: (1..=nb).collect(),
            v_now: vec![1.0; nb],
            v_lo: vec![0.9; nb],
            v_hi: vec![1.1; nb],
            dv_dvg,
            dv_dq,
            unit_bus: (1..=nu).collect(),
            qg_now: vec![0.0; nu],
            qg_lo: vec![-500.0; nu],
            qg_hi: vec![500.0; nu],
            dqg_dvg: vec![50.0; nu],
            link_names: (0..nl).map(|l| format!("f{l}")).collect(),
            dq_lo: vec![-30.0; nl],
            dq_hi: vec![30.0; nl],
        }
    }

    #[test]
    fn equal_sensitivities_split_the_weight() {
        let (a_v, _) = build_weights(&[3.0, 3.0], &[], WeightMode::Sensitivity).unwrap();
        assert_relative_eq!(a_v[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(a_v[1], 0.5, epsilon = 1e-15);
        let n = 7;
        let (a_v, _) =
            build_weights(&vec![2.0; n], &[], WeightMode::Sensitivity).unwrap();
        for a in &a_v {
            assert_relative_eq!(*a, 1.0 - 1.0 / n as f64, epsilon = 1e-15);
        }
    }

    #[test]
    fn weight_identity_and_ordering() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let g: Vec<f64> = (0..6).map(|_| rng.gen_range(-4.0..4.0)).collect();
            if g.iter().map(|v| v.abs()).sum::<f64>() < 1e-6 {
                continue;
            }
            let (a, _) = build_weights(&g, &[], WeightMode::Sensitivity).unwrap();
            let sum: f64 = a.iter().sum();
            assert_relative_eq!(sum, (g.len() - 1) as f64, epsilon = 1e-12);
            // Ascending weight must rank descending magnitude.
            let mut by_a: Vec<usize> = (0..g.len()).collect();
            by_a.sort_by(|&i, &j| a[i].partial_cmp(&a[j]).unwrap());
            for pair in by_a.windows(2) {
                assert!(g[pair[0]].abs() >= g[pair[1]].abs() - 1e-12);
            }
        }
    }

    #[test]
    fn equal_mode_and_degenerate_gradient() {
        let (a_v, a_q) = build_weights(&[1.0, 9.0], &[4.0], WeightMode::Equal).unwrap();
        assert_eq!(a_v, vec![1.0, 1.0]);
        assert_eq!(a_q, vec![1.0]);
        assert!(matches!(
            build_weights(&[0.0, 0.0], &[1.0], WeightMode::Sensitivity),
            Err(TsoError::DegenerateGradient(_))
        ));
        // Empty groups are fine (a case with no boundary links).
        let (av, aq) = build_weights(&[1.0], &[], WeightMode::Sensitivity).unwrap();
        assert_eq!(av, vec![0.0]);
        assert!(aq.is_empty());
    }

    #[test]
    fn met_target_returns_zero_dispatch() {
        let mut p = toy_problem(vec![40.0], vec![2.0]);
        p.vsm_min = p.vsm_current - 1.0;
        let d = solve_tso(&p).unwrap();
        assert!(d.dv_g.iter().all(|v| *v == 0.0));
        assert!(d.dq_g.iter().all(|v| *v == 0.0));
        assert_eq!(d.objective, 0.0);
        assert_relative_eq!(d.predicted_vsm, p.vsm_current, epsilon = 1e-12);
    }

    #[test]
    fn single_control_closes_the_gap_exactly() {
        let mut p = toy_problem(vec![40.0], vec![]);
        p.vsm_min = p.vsm_current + 2.0;
        let d = solve_tso(&p).unwrap();
        assert_relative_eq!(d.dv_g[0], 2.0 / 40.0, epsilon = 1e-9);
        assert!(d.active.iter().any(|s| s == "vsm_min"));
        assert_relative_eq!(d.predicted_vsm, p.vsm_min, epsilon = 1e-9);
        assert!(d.kkt.passes(1e-6, 1e-5), "{:?}", d.kkt);
    }

    #[test]
    fn random_problems_match_reference_solver() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for trial in 0..20 {
            let g_v: Vec<f64> = (0..2).map(|_| rng.gen_range(10.0..80.0)).collect();
            let g_q: Vec<f64> = (0..3).map(|_| rng.gen_range(0.2..4.0)).collect();
            let mut p = toy_problem(g_v, g_q);
            p.vsm_min = p.vsm_current + rng.gen_range(0.5..4.0);
            let (qp, _) = assemble(&p).unwrap();
            let fast = solve_qp(&qp).unwrap();
            let slow = solve_qp_ref(&qp, 2_000_000, 1e-10).unwrap();
            let scale = fast.objective.abs().max(1.0);
            assert!(
                (fast.objective - slow.objective).abs() <= 1e-6 * scale,
                "trial {trial}: {} vs {}",
                fast.objective,
                slow.objective
            );
        }
    }

    #[test]
    fn gradient_scaling_leaves_the_argmin_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..10 {
            let g_v: Vec<f64> = (0..2).map(|_| rng.gen_range(10.0..80.0)).collect();
            let g_q: Vec<f64> = (0..3).map(|_| rng.gen_range(0.2..4.0)).collect();
            let mut p = toy_problem(g_v.clone(), g_q.clone());
            p.vsm_min = p.vsm_current + 2.0;
            let base = solve_tso(&p).unwrap();

            // Measure the margin in different units: gradient and gap both
            // scale by c, the feasible set and weights do not change.
            let c = 7.3;
            let mut scaled = toy_problem(
                g_v.iter().map(|g| c * g).collect(),
                g_q.iter().map(|g| c * g).collect(),
            );
            scaled.vsm_min = scaled.vsm_current + c * 2.0;
            for (a, b) in scaled.a_v.iter().zip(&p.a_v) {
                assert_relative_eq!(*a, *b, epsilon = 1e-12);
            }
            let s = solve_tso(&scaled).unwrap();
            for (x, y) in base.dv_g.iter().zip(&s.dv_g) {
                assert_relative_eq!(*x, *y, epsilon = 1e-9);
            }
            for (x, y) in base.dq_g.iter().zip(&s.dq_g) {
                assert_relative_eq!(*x, *y, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn sensitivity_weights_dispatch_fewer_controls() {
        // Strongly heterogeneous sensitivities: magnitudes log-spaced over
        // two decades. Weighting by sensitivity concentrates the response,
        // so the count of meaningfully moved controls can only drop.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut total_sens = 0usize;
        let mut total_eq = 0usize;
        for _ in 0..20 {
            let nl = 8;
            let mut mags: Vec<f64> = (0..nl)
                .map(|i| 0.01f64 * (100.0f64).powf(i as f64 / (nl - 1) as f64))
                .collect();
            // Shuffle assignment and flip some signs.
            for i in (1..nl).rev() {
                let j = rng.gen_range(0..=i);
                mags.swap(i, j);
            }
            let g_q: Vec<f64> = mags
                .iter()
                .map(|m| if rng.gen_bool(0.5) { *m } else { -*m })
                .collect();
            let gap = rng.gen_range(0.12..0.25);

            let mut p = toy_problem(vec![], g_q.clone());
            p.vsm_min = p.vsm_current + gap;
            let sens = solve_tso(&p).unwrap();

            let mut eq = p.clone();
            (eq.a_v, eq.a_q) = build_weights(&[], &g_q, WeightMode::Equal).unwrap();
            let equal = solve_tso(&eq).unwrap();

            let c_sens = sens.moved(1e-3);
            let c_eq = equal.moved(1e-3);
            assert!(c_sens <= c_eq, "{c_sens} > {c_eq}");
            total_sens += c_sens;
            total_eq += c_eq;
        }
        assert!(total_sens < total_eq, "{total_sens} vs {total_eq}");
    }

    #[test]
    fn unreachable_floor_reports_best_margin() {
        let mut p = toy_problem(vec![], vec![2.0]);
        p.dq_lo = vec![-1.0];
        p.dq_hi = vec![1.0];
        p.vsm_min = p.vsm_current + 10.0;
        match solve_tso(&p) {
            Err(TsoError::TargetUnreachable { max_vsm, vsm_min }) => {
                // One link, ±1 MVAr box, 2 MW/MVAr: best gain is 2 MW.
                assert_relative_eq!(max_vsm, p.vsm_current + 2.0, epsilon = 1e-6);
                assert_relative_eq!(vsm_min, p.vsm_min, epsilon = 1e-12);
            }
            other => panic!("expected unreachable-target error, got {other:?}"),
        }
    }

    #[test]
    fn generator_reactive_box_binds() {
        // Narrow the unit's reactive headroom so the margin row cannot be
        // met by voltage alone; the q_max row must go active.
        let mut p = toy_problem(vec![40.0], vec![2.0]);
        p.vsm_min = p.vsm_current + 3.0;
        p.qg_hi = vec![1.0]; // 50 MVAr/pu · ΔV ≤ 1 → ΔV ≤ 0.02
        let d = solve_tso(&p).unwrap();
        assert!(d.dv_g[0] <= 0.02 + 1e-9);
        assert!(d.active.iter().any(|s| s == "q_max@gen1"), "{:?}", d.active);
        assert!(d.kkt.passes(1e-6, 1e-5));
        assert_relative_eq!(d.predicted_vsm, p.vsm_min, epsilon = 1e-8);
    }

    // ------------------------------------------------------------------
    // Wiring against the bundled case
    // ------------------------------------------------------------------

    fn five_bus() -> Case {
        load_case_str(include_str!("../cases/five_bus.case")).unwrap()
    }

    #[test]
    fn support_sensitivity_is_the_negated_load_gradient() {
        let case = five_bus();
        let op = OperatingPoint::nominal(&case);
        let sol = cosim::solve_cosim(&case, &op).unwrap();
        let x = margin::features_from(&case, &op, &sol);
        let model = synthetic_model(&case, &x);
        let (vsm, _) = evaluate_vsm(&case, &op, &model).unwrap();
        let p = build_tso_problem(
            &case,
            &op,
            &sol,
            &model,
            vsm,
            vsm + 2.0,
            &vec![-5.0; case.links.len()],
            &vec![5.0; case.links.len()],
            WeightMode::Sensitivity,
        )
        .unwrap();
        let grad = model.gradient(&x);
        for (li, link) in case.links.iter().enumerate() {
            let gi = model
                .feature_index(&format!("ql_b{}", link.tx_bus))
                .unwrap();
            assert_eq!(p.dvsm_dqg[li], -grad[gi]);
        }
    }

    #[test]
    fn zero_dispatch_is_idempotent() {
        let case = five_bus();
        let op = OperatingPoint::nominal(&case);
        let sol = cosim::solve_cosim(&case, &op).unwrap();
        let x = margin::features_from(&case, &op, &sol);
        let model = synthetic_model(&case, &x);
        let (before, _) = evaluate_vsm(&case, &op, &model).unwrap();
        let zero = TsoDispatch {
            dv_g: vec![0.0; case.tx.units().len()],
            dq_g: vec![0.0; case.links.len()],
            predicted_v: sol.tx.v_mag.clone(),
            predicted_vsm: before,
            objective: 0.0,
            active: Vec::new(),
            kkt: check_qp_kkt(
                &QpProblem::diag_weights(&[1.0]),
                &crate::qp::QpSolution {
                    x: vec![0.0],
                    objective: 0.0,
                    dual: vec![],
                    active: vec![],
                    iterations: 0,
                },
            ),
        };
        let (after, _, _) = verify_dispatch(&case, &op, &zero, &model).unwrap();
        assert_relative_eq!(after, before, epsilon = 1e-9);
    }

    #[test]
    fn small_dispatch_tracks_the_linear_prediction() {
        let case = five_bus();
        let op = OperatingPoint::nominal(&case);
        let sol = cosim::solve_cosim(&case, &op).unwrap();
        let x = margin::features_from(&case, &op, &sol);
        let model = synthetic_model(&case, &x);
        let (before, _) = evaluate_vsm(&case, &op, &model).unwrap();
        let grad = model.gradient(&x);

        // Nudge one generator setpoint only and compare the nonlinear margin
        // change against the first-order prediction.
        let units = case.tx.units();
        let dv = 0.002;
        let gi = model
            .feature_index(&format!("vg_b{}", units[0].bus))
            .unwrap();
        let predicted = grad[gi] * dv;
        let mut dv_g = vec![0.0; units.len()];
        dv_g[0] = dv;
        let d = TsoDispatch {
            dv_g,
            dq_g: vec![0.0; case.links.len()],
            predicted_v: sol.tx.v_mag.clone(),
            predicted_vsm: before + predicted,
            objective: 0.0,
            active: Vec::new(),
            kkt: check_qp_kkt(
                &QpProblem::diag_weights(&[1.0]),
                &crate::qp::QpSolution {
                    x: vec![0.0],
                    objective: 0.0,
                    dual: vec![],
                    active: vec![],
                    iterations: 0,
                },
            ),
        };
        let (after, _, _) = verify_dispatch(&case, &op, &d, &model).unwrap();
        let realized = after - before;
        assert!(
            (realized - predicted).abs() <= 0.2 * predicted.abs(),
            "realized {realized} vs predicted {predicted}"
        );
    }

    #[test]
    fn bundled_case_roundtrip_raises_the_margin() {
        let case = five_bus();
        let op = OperatingPoint::nominal(&case);
        let sol = cosim::solve_cosim(&case, &op).unwrap();
        let x = margin::features_from(&case, &op, &sol);
        let model = synthetic_model(&case, &x);
        let (vsm0, _) = evaluate_vsm(&case, &op, &model).unwrap();
        let target = vsm0 + 2.0;
        let p = build_tso_problem(
            &case,
            &op,
            &sol,
            &model,
            vsm0,
            target,
            &vec![-5.0; case.links.len()],
            &vec![5.0; case.links.len()],
            WeightMode::Sensitivity,
        )
        .unwrap();
        let d = solve_tso(&p).unwrap();
        assert!(d.predicted_vsm >= target - 1e-6);
        assert!(d.kkt.passes(1e-6, 1e-5), "{:?}", d.kkt);
        let (vsm1, csol, _) = verify_dispatch(&case, &op, &d, &model).unwrap();
        assert!(csol.converged);
        assert!(vsm1 > vsm0, "margin did not rise: {vsm0} -> {vsm1}");

        // Bit-reproducible: the whole chain reruns to identical dispatch.
        let d2 = solve_tso(&p).unwrap();
        assert_eq!(d.dv_g, d2.dv_g);
        assert_eq!(d.dq_g, d2.dq_g);
    }
}
