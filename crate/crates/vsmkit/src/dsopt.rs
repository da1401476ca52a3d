//! Distribution-side reactive dispatch.
//!
//! Three pieces, all built on the linearized feeder model and the dense LP
//! solver:
//!
//! * [`capability_range`] — the aggregate reactive band the feeder's DERs can
//!   present at the substation, found by minimizing and maximizing the same
//!   LP under voltage limits and inverter boxes;
//! * [`dx_weights`] — per-DER weighting factors from the trained feeder
//!   model's gradient, so electrically effective units are used first;
//! * [`redispatch`] — split a boundary reactive request across DERs (and
//!   then across phases, inside an unbalance band) at minimum weighted cost.
//!
//! Aggregates follow the boundary convention: a feeder-level kVAr total maps
//! to link MVAr through the replication factor `beta / 1000`.

use crate::dxflow::{self, DerDispatch};
use crate::lp::{solve_lp, LpError, LpProblem, LpSolution, Rel};
use crate::mlpvsm::{ModelError, VsmModel};
use crate::dxflow::DxError;
use crate::netmodel::{der_q_limits, BoundaryLink, FeederModel, PHASES};
use thiserror::Error;

/// Slack added to the per-phase unbalance band so it stays feasible at
/// `q ≈ 0`, in kVAr.
pub const EPS_BAND_KVAR: f64 = 0.01;
/// Below this total gradient magnitude the weighting is undefined.
const SENS_EPS: f64 = 1e-12;
/// Row slack below this counts as binding in constraint reports.
const BINDING_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DsoError {
    #[error("{context}: infeasible (residual {residual:.3e})")]
    Infeasible { context: String, residual: f64 },
    #[error("sensitivity magnitudes sum to {0:.3e}; weights undefined")]
    DegenerateSensitivity(f64),
    #[error("request {request:.3} kVAr outside capability [{lo:.3}, {hi:.3}] kVAr")]
    OutOfRange { request: f64, lo: f64, hi: f64 },
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Dx(#[from] DxError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Aggregate DER reactive band at the substation, kVAr, with the constraints
/// active at each extreme.
#[derive(Debug, Clone)]
pub struct CapabilityRange {
    pub q_min_agg: f64,
    pub q_max_agg: f64,
    pub binding_min: Vec<String>,
    pub binding_max: Vec<String>,
}

/// Shared LP skeleton: DER aggregate injections (shifted to ≥ 0) plus the
/// head voltage on the squared scale (free within the OLTC tap band), with
/// two voltage rows per node.
///
/// Each DER's injection is carried as a split pair `q_j = q⁺_j − q⁻_j` with
/// both halves nonnegative, so `|q_j| = q⁺_j + q⁻_j` is linear. At a simplex
/// vertex at most one half is nonzero (their columns are exact negatives), so
/// the split never manufactures fictitious circulation.
struct FeederLp {
    /// Problem with box and voltage rows installed; objective left to caller.
    lp: LpProblem,
    /// Number of DERs; columns are `[q⁺ × nj, q⁻ × nj, V0 shift]`.
    nj: usize,
    /// Labels for binding-constraint reports, one per row.
    row_labels: Vec<String>,
}

impl FeederLp {
    fn per_der(&self, s: &LpSolution) -> Vec<f64> {
        (0..self.nj).map(|j| s.x[j] - s.x[self.nj + j]).collect()
    }

    /// Row of `+1` over q⁺ and `−1` over q⁻: the aggregate Σ q_j.
    fn aggregate_row(&self) -> Vec<f64> {
        let mut a = vec![0.0; 2 * self.nj + 1];
        for j in 0..self.nj {
            a[j] = 1.0;
            a[self.nj + j] = -1.0;
        }
        a
    }
}

fn feeder_lp(feeder: &FeederModel, v_tm: f64, load_scale: f64) -> Result<FeederLp, DsoError> {
    let nj = feeder.ders.len();
    let boxes: Vec<(f64, f64)> = feeder
        .ders
        .iter()
        .map(|d| der_q_limits(d.s_rating, d.p_gen))
        .collect();
    let v0_lo = (v_tm * feeder.tap_min).powi(2);
    let v0_hi = (v_tm * feeder.tap_max).powi(2);

    // Baseline voltages at zero injection with the head at the bottom of the
    // tap band; unit probes give the exact affine columns of each DER.
    let zeros = vec![0.0; nj];
    let base = dxflow::lindistflow(feeder, v0_lo, load_scale, &zeros)?;
    let mut cols = vec![vec![0.0; feeder.nodes.len()]; nj];
    for j in 0..nj {
        let mut probe = zeros.clone();
        probe[j] = 1.0;
        let sol = dxflow::lindistflow(feeder, v0_lo, load_scale, &probe)?;
        for (n, c) in cols[j].iter_mut().enumerate() {
            *c = sol.v_sq[n] - base.v_sq[n];
        }
    }

    // Variables: x[j] = q⁺_j, x[nj+j] = q⁻_j, x[2nj] = V0² − v0_lo.
    let ncols = 2 * nj + 1;
    let mut lp = LpProblem::new(ncols);
    let mut row_labels = Vec::new();
    for (j, b) in boxes.iter().enumerate() {
        let mut a = vec![0.0; ncols];
        a[j] = 1.0;
        lp.le(a, b.1.max(0.0))?;
        row_labels.push(format!("q_max@der{j}"));
        let mut a = vec![0.0; ncols];
        a[nj + j] = 1.0;
        lp.le(a, (-b.0).max(0.0))?;
        row_labels.push(format!("q_min@der{j}"));
    }
    {
        let mut a = vec![0.0; ncols];
        a[2 * nj] = 1.0;
        lp.le(a, v0_hi - v0_lo)?;
        row_labels.push("v0_max".into());
    }
    for (n, node) in feeder.nodes.iter().enumerate() {
        let mut a = vec![0.0; ncols];
        for j in 0..nj {
            a[j] = cols[j][n];
            a[nj + j] = -cols[j][n];
        }
        a[2 * nj] = 1.0;
        lp.le(a.clone(), node.v_max_sq() - base.v_sq[n])?;
        row_labels.push(format!("v_max@node{}", node.id));
        lp.ge(a, node.v_min_sq() - base.v_sq[n])?;
        row_labels.push(format!("v_min@node{}", node.id));
    }
    Ok(FeederLp {
        lp,
        nj,
        row_labels,
    })
}

/// Rows active at the optimum, by label; `v0_min` when the head variable
/// rests on its lower bound.
fn binding_report(skel: &FeederLp, s: &LpSolution) -> Vec<String> {
    let mut out = Vec::new();
    for (i, row) in skel.lp.rows.iter().enumerate() {
        let ax: f64 = row.a.iter().zip(&s.x).map(|(a, v)| a * v).sum();
        let slack = match row.rel {
            Rel::Le => row.b - ax,
            Rel::Ge => ax - row.b,
            Rel::Eq => continue,
        };
        if slack.abs() <= BINDING_TOL {
            out.push(skel.row_labels[i].clone());
        }
    }
    if s.x[2 * skel.nj].abs() <= BINDING_TOL {
        out.push("v0_min".into());
    }
    out
}

/// Range of the aggregate DER reactive contribution visible at the feeder
/// head, found by solving the capability LP in both directions.
///
/// `v_tm` is the transmission-side boundary voltage; the head voltage is free
/// within the squared tap band it implies. `load_scale` fixes the feeder
/// loading the range is evaluated at.
pub fn capability_range(
    feeder: &FeederModel,
    v_tm: f64,
    load_scale: f64,
) -> Result<CapabilityRange, DsoError> {
    if feeder.ders.is_empty() {
        return Ok(CapabilityRange {
            q_min_agg: 0.0,
            q_max_agg: 0.0,
            binding_min: Vec::new(),
            binding_max: Vec::new(),
        });
    }
    let skel = feeder_lp(feeder, v_tm, load_scale)?;
    let nj = skel.nj;

    let run = |sign: f64, what: &str| -> Result<(f64, Vec<String>), DsoError> {
        let mut lp = skel.lp.clone();
        for j in 0..nj {
            lp.cost[j] = sign;
            lp.cost[nj + j] = -sign;
        }
        let sol = solve_lp(&lp).map_err(|e| match e {
            LpError::Infeasible { residual } => DsoError::Infeasible {
                context: format!("capability {what} on feeder {}", feeder.id),
                residual,
            },
            other => DsoError::Lp(other),
        })?;
        let agg = skel.per_der(&sol).iter().sum();
        Ok((agg, binding_report(&skel, &sol)))
    };

    let (q_min_agg, binding_min) = run(1.0, "minimum")?;
    let (q_max_agg, binding_max) = run(-1.0, "maximum")?;
    Ok(CapabilityRange {
        q_min_agg,
        q_max_agg,
        binding_min,
        binding_max,
    })
}

/// Weighting factors `w_j = 1 − |s_j| / Σ|s|` from the feeder model's
/// gradient at the current DER dispatch, so the cheapest (most effective)
/// units carry the smallest weight. Identity: `Σ w = J − 1`.
pub fn dx_weights(model: &VsmModel, q_now: &[f64]) -> Result<Vec<f64>, DsoError> {
    let grad = model.gradient(q_now);
    let total: f64 = grad.iter().map(|g| g.abs()).sum();
    if total < SENS_EPS {
        return Err(DsoError::DegenerateSensitivity(total));
    }
    Ok(grad.iter().map(|g| 1.0 - g.abs() / total).collect())
}

/// Per-DER, per-phase dispatch meeting a boundary reactive request.
#[derive(Debug, Clone)]
pub struct Redispatch {
    /// Phase-resolved injections, kVAr.
    pub per_phase: Vec<[f64; PHASES]>,
    /// Aggregate per DER, kVAr.
    pub per_der: Vec<f64>,
    /// Σ per_der, kVAr.
    pub aggregate_kvar: f64,
    /// Aggregate seen at the transmission bus, MVAr.
    pub boundary_mvar: f64,
    /// Weighted objective Σ w_j q_j actually attained.
    pub objective: f64,
    /// Constraints active at the optimum of the aggregate pass.
    pub binding: Vec<String>,
}

impl Redispatch {
    pub fn dispatch(&self) -> DerDispatch {
        DerDispatch::PerPhase(self.per_phase.clone())
    }
}

/// Meet a boundary reactive request `request_mvar` with minimal weighted DER
/// effort, then split each DER's aggregate across phases.
///
/// The aggregate pass is an LP over per-DER totals: inverter boxes, the
/// linearized voltage rows, head voltage free in the tap band, and the
/// equality tying Σ q_j to the request scaled through the link. The cost is
/// the weighted effort `Σ w_j |q_j|`, so an idle system stays idle on a zero
/// request and absorption is never used to subsidize injection elsewhere.
/// The phase pass is a deterministic split: phases start equal, and with
/// `alpha > 0` each DER's heavier-phase share grows proportionally to the
/// feeder's per-phase reactive load imbalance, capped at `alpha·|q_avg|` so
/// the band `|q^φ − q^avg| ≤ alpha·|q^avg| + ε` always holds strictly.
pub fn redispatch(
    feeder: &FeederModel,
    link: &BoundaryLink,
    request_mvar: f64,
    v_tm: f64,
    load_scale: f64,
    weights: &[f64],
    alpha: f64,
) -> Result<Redispatch, DsoError> {
    let nj = feeder.ders.len();
    assert_eq!(weights.len(), nj, "one weight per DER");
    let q_target = request_mvar * 1000.0 / link.beta as f64;

    if nj == 0 {
        if q_target.abs() > 1e-9 {
            return Err(DsoError::OutOfRange {
                request: q_target,
                lo: 0.0,
                hi: 0.0,
            });
        }
        return Ok(Redispatch {
            per_phase: Vec::new(),
            per_der: Vec::new(),
            aggregate_kvar: 0.0,
            boundary_mvar: 0.0,
            objective: 0.0,
            binding: Vec::new(),
        });
    }

    let skel = feeder_lp(feeder, v_tm, load_scale)?;
    let mut lp = skel.lp.clone();
    for j in 0..nj {
        lp.cost[j] = weights[j];
        lp.cost[nj + j] = weights[j];
    }
    lp.eq(skel.aggregate_row(), q_target)?;

    let sol = solve_lp(&lp).map_err(|e| match e {
        LpError::Infeasible { residual } => DsoError::Infeasible {
            context: format!(
                "redispatch of {q_target:.3} kVAr on feeder {} (voltage or box limits)",
                feeder.id
            ),
            residual,
        },
        other => DsoError::Lp(other),
    })?;

    let per_der = skel.per_der(&sol);
    let aggregate_kvar: f64 = per_der.iter().sum();
    let objective: f64 = weights
        .iter()
        .zip(&per_der)
        .map(|(w, q)| w * q.abs())
        .sum();
    let per_phase = split_phases(feeder, &per_der, load_scale, alpha);

    Ok(Redispatch {
        per_phase,
        per_der,
        aggregate_kvar,
        boundary_mvar: link.beta as f64 * aggregate_kvar / 1000.0,
        objective,
        binding: binding_report(&skel, &sol),
    })
}

/// Deterministic phase split. Heavier-loaded phases receive more injection;
/// the deviation is capped at `alpha·|q_avg|` and scaled back wherever a
/// per-phase inverter box (one third of the aggregate box) would be crossed.
fn split_phases(
    feeder: &FeederModel,
    per_der: &[f64],
    load_scale: f64,
    alpha: f64,
) -> Vec<[f64; PHASES]> {
    let mut phase_q = [0.0; PHASES];
    for node in &feeder.nodes {
        for ph in 0..PHASES {
            phase_q[ph] += load_scale * node.load_q[ph];
        }
    }
    let mean = phase_q.iter().sum::<f64>() / PHASES as f64;
    let imbalance: Vec<f64> = phase_q.iter().map(|q| q - mean).collect();
    let peak = imbalance.iter().fold(0.0f64, |m, e| m.max(e.abs()));

    per_der
        .iter()
        .zip(&feeder.ders)
        .map(|(&q, der)| {
            let avg = q / PHASES as f64;
            if alpha == 0.0 || peak < 1e-12 {
                return [avg; PHASES];
            }
            let (lo, hi) = der_q_limits(der.s_rating, der.p_gen);
            let (lo_ph, hi_ph) = (lo / PHASES as f64, hi / PHASES as f64);
            let mut delta = [0.0; PHASES];
            for ph in 0..PHASES {
                delta[ph] = alpha * avg.abs() * imbalance[ph] / peak;
            }
            // Uniform scale-back keeps Σδ = 0 while honoring the phase box.
            let mut gamma = 1.0f64;
            for ph in 0..PHASES {
                if delta[ph] > 0.0 {
                    gamma = gamma.min((hi_ph - avg) / delta[ph]);
                } else if delta[ph] < 0.0 {
                    gamma = gamma.min((avg - lo_ph) / -delta[ph]);
                }
            }
            let gamma = gamma.clamp(0.0, 1.0);
            let mut out = [0.0; PHASES];
            for ph in 0..PHASES {
                out[ph] = avg + gamma * delta[ph];
            }
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::check_lp_kkt;
    use crate::netmodel::load_case_str;
    use approx::assert_relative_eq;

    /// Two-node feeder with `n_der` identical 10-kVA DERs at the far node.
    /// Loose voltage limits unless `tight_vmax` caps the DER node — in that
    /// mode the tap is pinned at 1.0 so the regulator cannot rescue the cap.
    fn toy_feeder(n_der: usize, tight_vmax: Option<f64>) -> crate::netmodel::Case {
        let vmax = tight_vmax.unwrap_or(1.5);
        let (tap_lo, tap_hi) = if tight_vmax.is_some() {
            (1.0, 1.0)
        } else {
            (0.9, 1.1)
        };
        let mut doc = format!(
            r#"
            [transmission]
            base_mva = 100.0
            branches = []
            [[transmission.buses]]
            id = 1
            kind = "slack"
            [[transmission.generators]]
            bus = 1
            p_out = 0.0
            v_set = 1.0
            q_min = -10.0
            q_max = 10.0
            p_max = 10.0
            [[boundary]]
            tx_bus = 1
            feeder = "f"
            beta = 100
            kv_base_tx = 132.0
            kv_base_dx = 4.16
            [[feeders]]
            id = "f"
            s_base_kva = 1000.0
            tap_min = {tap_lo}
            tap_max = {tap_hi}
            [[feeders.nodes]]
            id = 0
            v_min = 0.5
            v_max = 1.5
            [[feeders.nodes]]
            id = 1
            load_p = [40.0, 30.0, 30.0]
            load_q = [25.0, 15.0, 10.0]
            v_min = 0.5
            v_max = {vmax}
            [[feeders.edges]]
            from = 0
            to = 1
            r = 0.01
            x = 0.02
            "#
        );
        for _ in 0..n_der {
            doc.push_str(
                r#"
            [[feeders.ders]]
            node = 1
            p_gen = 0.0
            s_rating = 10.0
            "#,
            );
        }
        load_case_str(&doc).unwrap()
    }

    /// Feasibility oracle under the linear model: an aggregate `q` per DER is
    /// feasible iff some head voltage in the tap band keeps every node inside
    /// its limits.
    fn ldf_feasible(f: &FeederModel, v_tm: f64, q: &[f64]) -> bool {
        let lo = (v_tm * f.tap_min).powi(2);
        let hi = (v_tm * f.tap_max).powi(2);
        let sol = dxflow::lindistflow(f, lo, 1.0, q).unwrap();
        // v_n(V0) = sol.v_sq[n] + (V0 − lo); intersect the feasible V0 bands.
        let mut need_lo = lo;
        let mut need_hi = hi;
        for (n, node) in f.nodes.iter().enumerate() {
            need_lo = need_lo.max(node.v_min_sq() - sol.v_sq[n] + lo);
            need_hi = need_hi.min(node.v_max_sq() - sol.v_sq[n] + lo);
        }
        need_lo <= need_hi + 1e-12
    }

    #[test]
    fn single_der_range_is_the_inverter_box() {
        let case = toy_feeder(1, None);
        let f = &case.feeders[0];
        let r = capability_range(f, 1.0, 1.0).unwrap();
        assert_relative_eq!(r.q_min_agg, -10.0, epsilon = 1e-9);
        assert_relative_eq!(r.q_max_agg, 10.0, epsilon = 1e-9);
        assert!(r.binding_min.iter().any(|s| s == "q_min@der0"));
        assert!(r.binding_max.iter().any(|s| s == "q_max@der0"));
        // Grid oracle agrees that the whole box is admissible.
        for k in -10..=10 {
            assert!(ldf_feasible(f, 1.0, &[k as f64]));
        }
    }

    #[test]
    fn zero_ders_collapse_the_range() {
        let case = toy_feeder(0, None);
        let r = capability_range(&case.feeders[0], 1.0, 1.0).unwrap();
        assert_eq!(r.q_min_agg, r.q_max_agg);
        assert_eq!(r.q_min_agg, 0.0);
    }

    #[test]
    fn tight_voltage_cap_clips_the_maximum() {
        // With the tap pinned at 1.0 the DER node sits at v² = 0.996 + 4e-5·q,
        // so v_max = 0.9981 (v² ≈ 0.99620) clips the maximum near q ≈ 5 —
        // between the zero-injection voltage and the +10 kVAr box edge.
        let case = toy_feeder(1, Some(0.9981));
        let f = &case.feeders[0];
        let r = capability_range(f, 1.0, 1.0).unwrap();
        assert!(
            r.q_max_agg < 10.0 - 1e-6,
            "expected clip, got {}",
            r.q_max_agg
        );
        assert!(r.binding_max.iter().any(|s| s == "v_max@node1"));
        // Fine grid oracle: the LP extreme matches the last feasible step.
        let step = 0.01;
        let mut best = f64::NEG_INFINITY;
        let mut q = -10.0;
        while q <= 10.0 + 1e-9 {
            if ldf_feasible(f, 1.0, &[q]) {
                best = q;
            }
            q += step;
        }
        assert!((r.q_max_agg - best).abs() <= step + 1e-9);
        // Monotonicity: the minimum side is still the box edge.
        assert_relative_eq!(r.q_min_agg, -10.0, epsilon = 1e-9);
    }

    #[test]
    fn capability_grows_with_inverter_rating() {
        let case = toy_feeder(2, None);
        let mut f = case.feeders[0].clone();
        let mut prev = capability_range(&f, 1.0, 1.0).unwrap().q_max_agg;
        for _ in 0..3 {
            for d in f.ders.iter_mut() {
                d.s_rating += 2.0;
            }
            let now = capability_range(&f, 1.0, 1.0).unwrap().q_max_agg;
            assert!(now >= prev - 1e-9);
            prev = now;
        }
    }

    #[test]
    fn weights_sum_and_order_follow_the_gradient() {
        let case = toy_feeder(3, None);
        let f = &case.feeders[0];
        let model =
            crate::mlpvsm::train_dx_model(f, &case.links[0], &crate::mlpvsm::DxTrainConfig::default())
                .unwrap()
                .0;
        let q0 = vec![0.0; 3];
        let w = dx_weights(&model, &q0).unwrap();
        assert_eq!(w.len(), 3);
        let sum: f64 = w.iter().sum();
        assert_relative_eq!(sum, 2.0, epsilon = 1e-12);
        let grad = model.gradient(&q0);
        // Largest |gradient| ↔ smallest weight.
        let mut by_g: Vec<usize> = (0..3).collect();
        by_g.sort_by(|&a, &b| grad[b].abs().partial_cmp(&grad[a].abs()).unwrap());
        let mut by_w: Vec<usize> = (0..3).collect();
        by_w.sort_by(|&a, &b| w[a].partial_cmp(&w[b]).unwrap());
        assert_eq!(by_g, by_w);
    }

    #[test]
    fn degenerate_gradient_is_an_error() {
        let case = toy_feeder(2, None);
        let f = &case.feeders[0];
        let (mut model, _) =
            crate::mlpvsm::train_dx_model(f, &case.links[0], &crate::mlpvsm::DxTrainConfig::default())
                .unwrap();
        for c in model.c.iter_mut() {
            *c = 0.0;
        }
        assert!(matches!(
            dx_weights(&model, &[0.0, 0.0]),
            Err(DsoError::DegenerateSensitivity(_))
        ));
    }

    #[test]
    fn cheap_der_supplies_first() {
        // w = [0.2, 0.8], target 5 kVAr. Hand oracle over the vertices: the
        // cheap DER carries the whole request alone (objective 0.2·5 = 1.0);
        // any absorb-to-inject shuffle, e.g. (10, −5), costs 6.0.
        let case = toy_feeder(2, None);
        let f = &case.feeders[0];
        let link = &case.links[0];
        let request_mvar = 5.0 * link.beta as f64 / 1000.0;
        let r = redispatch(f, link, request_mvar, 1.0, 1.0, &[0.2, 0.8], 0.0).unwrap();
        assert_relative_eq!(r.per_der[0], 5.0, epsilon = 1e-8);
        assert_relative_eq!(r.per_der[1], 0.0, epsilon = 1e-8);
        assert_relative_eq!(r.aggregate_kvar, 5.0, epsilon = 1e-9);
        assert_relative_eq!(r.objective, 1.0, epsilon = 1e-8);
        assert_relative_eq!(r.boundary_mvar, request_mvar, epsilon = 1e-9);
        // Effort minimization never absorbs to subsidize injection.
        assert!(r.per_der.iter().all(|q| *q >= -1e-9));
    }

    #[test]
    fn aggregate_lp_passes_independent_kkt() {
        let case = toy_feeder(2, None);
        let f = &case.feeders[0];
        let skel = feeder_lp(f, 1.0, 1.0).unwrap();
        let mut lp = skel.lp.clone();
        for (j, w) in [0.2, 0.8].into_iter().enumerate() {
            lp.cost[j] = w;
            lp.cost[skel.nj + j] = w;
        }
        lp.eq(skel.aggregate_row(), 5.0).unwrap();
        let sol = solve_lp(&lp).unwrap();
        let rep = check_lp_kkt(&lp, &sol);
        assert!(rep.passes(1e-6, 1e-5), "{rep:?}");
    }

    #[test]
    fn zero_request_with_positive_weights_idles_everyone() {
        let case = toy_feeder(3, None);
        let f = &case.feeders[0];
        let r = redispatch(&f, &case.links[0], 0.0, 1.0, 1.0, &[0.4, 0.5, 0.6], 0.0).unwrap();
        for q in &r.per_der {
            assert_relative_eq!(*q, 0.0, epsilon = 1e-8);
        }
        assert_relative_eq!(r.objective, 0.0, epsilon = 1e-8);
    }

    #[test]
    fn alpha_zero_means_exactly_equal_phases() {
        let case = toy_feeder(2, None);
        let f = &case.feeders[0];
        let link = &case.links[0];
        let r = redispatch(f, link, 0.8, 1.0, 1.0, &[0.3, 0.7], 0.0).unwrap();
        for (j, ph) in r.per_phase.iter().enumerate() {
            assert_relative_eq!(ph[0], ph[1], epsilon = 1e-12);
            assert_relative_eq!(ph[1], ph[2], epsilon = 1e-12);
            assert_relative_eq!(
                ph.iter().sum::<f64>(),
                r.per_der[j],
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn alpha_band_shifts_toward_the_heavy_phase_within_limits() {
        let alpha = 0.1;
        let case = toy_feeder(2, None);
        let f = &case.feeders[0];
        let link = &case.links[0];
        let r = redispatch(f, link, 0.8, 1.0, 1.0, &[0.3, 0.7], alpha).unwrap();
        for (j, ph) in r.per_phase.iter().enumerate() {
            let avg = r.per_der[j] / PHASES as f64;
            for &v in ph {
                assert!((v - avg).abs() <= alpha * avg.abs() + EPS_BAND_KVAR + 1e-12);
            }
            assert_relative_eq!(ph.iter().sum::<f64>(), r.per_der[j], epsilon = 1e-9);
            if r.per_der[j].abs() > 1e-6 {
                // Phase a carries the largest reactive load in the toy feeder.
                assert!(ph[0] > ph[2]);
            }
        }
    }

    #[test]
    fn request_outside_capability_is_infeasible() {
        let case = toy_feeder(1, None);
        let f = &case.feeders[0];
        let link = &case.links[0];
        // 20 kVAr against a ±10 kVAr box.
        let request = 20.0 * link.beta as f64 / 1000.0;
        assert!(matches!(
            redispatch(f, link, request, 1.0, 1.0, &[0.5], 0.0),
            Err(DsoError::Infeasible { .. })
        ));
    }

    #[test]
    fn bfs_confirms_the_linear_boundary_prediction() {
        let case = load_case_str(include_str!("../cases/five_bus.case")).unwrap();
        let link = &case.links[0];
        let f = &case.feeders[case.feeder_index(&link.feeder).unwrap()];
        let nj = f.ders.len();
        let w: Vec<f64> = (0..nj).map(|j| 0.3 + 0.1 * j as f64).collect();
        let cap = capability_range(f, 1.0, 1.0).unwrap();
        let target_kvar = 0.5 * cap.q_max_agg;
        let request = target_kvar * link.beta as f64 / 1000.0;
        let r = redispatch(f, link, request, 1.0, 1.0, &w, 0.0).unwrap();

        // Linear prediction vs a full sweep at the matching head voltage.
        let v0_sq = (1.0 * crate::dxflow::choose_tap(f, 1.0)).powi(2);
        let ldf = dxflow::lindistflow(f, v0_sq, 1.0, &r.per_der).unwrap();
        let bfs = dxflow::solve_bfs(f, (1.0, 0.0), 1.0, &r.dispatch(), None).unwrap();
        assert!(bfs.converged);
        let (_, bq) = bfs.head_total();
        let scale = ldf.head_q.abs().max(1.0);
        assert!(
            ((bq - ldf.head_q) / scale).abs() <= 0.05,
            "bfs {bq} vs ldf {}",
            ldf.head_q
        );
    }

    #[test]
    fn redispatch_is_deterministic() {
        let case = toy_feeder(3, None);
        let f = &case.feeders[0];
        let link = &case.links[0];
        let a = redispatch(f, link, 1.2, 1.0, 1.0, &[0.5, 0.4, 0.6], 0.1).unwrap();
        let b = redispatch(f, link, 1.2, 1.0, 1.0, &[0.5, 0.4, 0.6], 0.1).unwrap();
        assert_eq!(a.per_phase, b.per_phase);
        assert_eq!(a.objective, b.objective);
    }
}
