//! Iterative transmission–distribution coordination.
//!
//! Repeats a simple bargain until the stability margin clears its target: the
//! transmission QP proposes setpoint shifts and boundary reactive requests
//! ([`crate::tsopt`]), each feeder realizes its request on actual DERs through
//! the redispatch LP ([`crate::dsopt`]), and a fresh co-simulation verifies
//! what the linearizations promised. Every round lands in a
//! [`CoordinationTrace`]; the writers at the bottom turn a trace into
//! plot-ready CSVs and a human report.
//!
//! Setpoint shifts are re-optimized every round rather than frozen after the
//! first one, so later rounds can trade voltage headroom consumed by earlier
//! redispatch. Requests that exceed a feeder's capability are clamped to the
//! capability range and the shortfall is logged in the trace; the remaining
//! gap simply persists into the next round.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::cosim::OperatingPoint;
use crate::dsopt::{self, CapabilityRange, DsoError, Redispatch};
use crate::mlpvsm::VsmModel;
use crate::netmodel::Case;
use crate::tsopt::{self, TsoError, WeightMode};

/// Stop once the verified margin is within this of the target, MW.
pub const VSM_TOL_MW: f64 = 0.5;
/// Default cap on coordination rounds.
pub const MAX_ITERS: usize = 10;
/// A verified margin drop beyond this aborts the run: the linearization is
/// lying and further rounds would oscillate, MW.
const DECREASE_ABORT_MW: f64 = 1.0;
/// Requests below this are treated as "no request" for a link, MVAr.
const DQ_EPS_MVAR: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CoordError {
    #[error("no boundary-sensitivity model for feeder '{0}'")]
    MissingDxModel(String),
    #[error(transparent)]
    Tso(#[from] TsoError),
    #[error(transparent)]
    Dso(#[from] DsoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Knobs for one coordination run.
#[derive(Debug, Clone)]
pub struct LoopConfig {
    /// Margin the loop must reach, MW.
    pub target_mw: f64,
    pub mode: WeightMode,
    pub max_iters: usize,
    pub tol_mw: f64,
    /// Phase-imbalance allowance handed to the feeder redispatch.
    pub alpha: f64,
}

impl LoopConfig {
    pub fn new(target_mw: f64, mode: WeightMode) -> Self {
        LoopConfig {
            target_mw,
            mode,
            max_iters: MAX_ITERS,
            tol_mw: VSM_TOL_MW,
            alpha: 0.0,
        }
    }
}

/// One feeder's share of a round: the boundary request it was asked to
/// realize and what the redispatch actually produced.
#[derive(Debug, Clone)]
pub struct FeederRecord {
    pub feeder: String,
    /// Index into [`Case::links`].
    pub link_index: usize,
    /// Increment forwarded after the capability clamp, MVAr.
    pub requested_mvar: f64,
    /// Portion of the raw request the clamp dropped, MVAr (signed).
    pub shortfall_mvar: f64,
    /// Aggregate DER setpoint before this round, kVAr (single-feeder scale).
    pub prior_kvar: f64,
    /// Aggregate realized across DERs after this round, kVAr.
    pub realized_kvar: f64,
    /// Realized aggregate seen at the transmission bus, MVAr.
    pub realized_mvar: f64,
    /// Absolute per-DER setpoints after this round, kVAr.
    pub per_der_kvar: Vec<f64>,
    /// Phase-resolved setpoints after this round, kVAr.
    pub per_phase_kvar: Vec<[f64; 3]>,
    /// DER weights used by the redispatch objective.
    pub weights: Vec<f64>,
    /// Constraints active at the redispatch optimum.
    pub binding: Vec<String>,
}

/// One coordination round: what the transmission QP asked for and what the
/// verified nonlinear margin came back as.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    /// 1-based round number.
    pub iteration: usize,
    pub vsm_before: f64,
    /// Margin the linearization promised for this round, MW.
    pub predicted_vsm: f64,
    /// Margin verified by co-simulation after applying the round, MW.
    pub vsm_after: f64,
    /// Remaining gap to target after the round, MW.
    pub gap_after: f64,
    /// Setpoint shifts per unit, pu ([`crate::netmodel::TransmissionNetwork`] unit order).
    pub dv_g: Vec<f64>,
    /// Support the QP requested per link, MVAr (pre-clamp).
    pub dq_requested: Vec<f64>,
    /// Support forwarded per link after the capability clamp, MVAr.
    pub dq_applied: Vec<f64>,
    /// Voltage-control weights used this round, one per unit.
    pub a_v: Vec<f64>,
    /// Support-control weights used this round, one per link.
    pub a_q: Vec<f64>,
    /// Constraints active at the QP optimum.
    pub active: Vec<String>,
    /// Redispatch outcomes, one per link that received a request.
    pub feeders: Vec<FeederRecord>,
}

/// Complete record of a coordination run.
#[derive(Debug, Clone)]
pub struct CoordinationTrace {
    pub mode: WeightMode,
    pub target_mw: f64,
    pub tol_mw: f64,
    pub vsm_initial: f64,
    pub vsm_final: f64,
    /// True iff the verified margin reached `target_mw - tol_mw`.
    pub converged: bool,
    /// Diagnostic when the loop stopped early (unreachable target or the
    /// oscillation guard); `None` for convergence or the iteration cap.
    pub abort: Option<String>,
    pub iterations: Vec<IterationRecord>,
}

impl CoordinationTrace {
    pub fn n_iterations(&self) -> usize {
        self.iterations.len()
    }

    /// Σ |ΔQ| forwarded to feeders over the whole run (post-clamp), MVAr.
    pub fn total_requested_mvar(&self) -> f64 {
        self.iterations
            .iter()
            .flat_map(|it| it.dq_applied.iter())
            .map(|q| q.abs())
            .sum()
    }

    pub fn gap_final(&self) -> f64 {
        self.target_mw - self.vsm_final
    }
}

/// Per-link environment frozen at the top of a round: remaining capability at
/// the present boundary voltage and load scale.
struct LinkEnv {
    feeder_index: usize,
    v_tm: f64,
    load_scale: f64,
    cap: CapabilityRange,
    prior_kvar: f64,
}

/// Work order for one feeder redispatch within a round.
struct DsoJob {
    link_index: usize,
    /// Absolute aggregate target, kVAr.
    target_kvar: f64,
    /// Increment forwarded, MVAr (post-clamp).
    applied_mvar: f64,
    shortfall_mvar: f64,
}

/// Run the coordination loop from the case's nominal operating point.
pub fn run_loop(
    case: &Case,
    model: &VsmModel,
    dx_models: &HashMap<String, VsmModel>,
    cfg: &LoopConfig,
) -> Result<CoordinationTrace, CoordError> {
    run_loop_from(case, &OperatingPoint::nominal(case), model, dx_models, cfg)
}

/// Run the coordination loop from an explicit starting point (scenario
/// studies start from stressed operating points, not the nominal one).
pub fn run_loop_from(
    case: &Case,
    op0: &OperatingPoint,
    model: &VsmModel,
    dx_models: &HashMap<String, VsmModel>,
    cfg: &LoopConfig,
) -> Result<CoordinationTrace, CoordError> {
    let nl = case.links.len();
    if cfg.mode == WeightMode::Sensitivity {
        for link in &case.links {
            if !dx_models.contains_key(&link.feeder) {
                return Err(CoordError::MissingDxModel(link.feeder.clone()));
            }
        }
    }

    let mut op = op0.clone();
    let (mut vsm, mut sol) = tsopt::evaluate_vsm(case, &op, model)?;
    let vsm_initial = vsm;
    // Absolute per-DER aggregates currently dispatched, kVAr, per link.
    let mut q_der: Vec<Vec<f64>> = op.der_q.iter().map(|d| d.totals()).collect();

    let mut iterations: Vec<IterationRecord> = Vec::new();
    let mut abort: Option<String> = None;

    while abort.is_none()
        && vsm < cfg.target_mw - cfg.tol_mw
        && iterations.len() < cfg.max_iters
    {
        // Remaining capability per link, expressed on the transmission side.
        // The boxes always admit zero: if capability shrank under the current
        // dispatch (voltages moved since it was granted), the QP is not
        // forced to unwind it — the realization clamp handles the drift.
        let mut envs: Vec<LinkEnv> = Vec::with_capacity(nl);
        let mut dq_lo = vec![0.0; nl];
        let mut dq_hi = vec![0.0; nl];
        for (li, link) in case.links.iter().enumerate() {
            let fi = case.feeder_index(&link.feeder).expect("validated link feeder");
            let bi = case.tx.bus_index(link.tx_bus).expect("validated link bus");
            let v_tm = sol.tx.v_mag[bi];
            let load_scale = op.lambda * op.link_scale[li];
            let cap = dsopt::capability_range(&case.feeders[fi], v_tm, load_scale)?;
            let beta = f64::from(link.beta);
            let prior_kvar: f64 = q_der[li].iter().sum();
            dq_lo[li] = ((cap.q_min_agg - prior_kvar) * beta / 1000.0).min(0.0);
            dq_hi[li] = ((cap.q_max_agg - prior_kvar) * beta / 1000.0).max(0.0);
            envs.push(LinkEnv {
                feeder_index: fi,
                v_tm,
                load_scale,
                cap,
                prior_kvar,
            });
        }

        let prob = tsopt::build_tso_problem(
            case,
            &op,
            &sol,
            model,
            vsm,
            cfg.target_mw,
            &dq_lo,
            &dq_hi,
            cfg.mode,
        )?;
        let disp = match tsopt::solve_tso(&prob) {
            Ok(d) => d,
            Err(TsoError::TargetUnreachable { max_vsm, vsm_min }) => {
                abort = Some(format!(
                    "target {vsm_min:.3} MW unreachable from round {}: \
                     linearized ceiling {max_vsm:.3} MW",
                    iterations.len() + 1,
                ));
                break;
            }
            Err(e) => return Err(e.into()),
        };

        // Forward each nonzero request to its feeder, clamped to capability.
        let mut dq_applied = vec![0.0; nl];
        let mut jobs: Vec<DsoJob> = Vec::new();
        for (li, env) in envs.iter().enumerate() {
            let raw = disp.dq_g[li];
            if raw.abs() <= DQ_EPS_MVAR {
                continue;
            }
            let beta = f64::from(case.links[li].beta);
            let target_raw = env.prior_kvar + raw * 1000.0 / beta;
            let target_kvar = target_raw.clamp(env.cap.q_min_agg, env.cap.q_max_agg);
            let applied = (target_kvar - env.prior_kvar) * beta / 1000.0;
            dq_applied[li] = applied;
            jobs.push(DsoJob {
                link_index: li,
                target_kvar,
                applied_mvar: applied,
                shortfall_mvar: raw - applied,
            });
        }

        // Redispatch LPs are independent per feeder; solve them concurrently.
        let solved: Vec<(usize, Redispatch, Vec<f64>)> = jobs
            .par_iter()
            .map(|job| -> Result<_, CoordError> {
                let li = job.link_index;
                let env = &envs[li];
                let link = &case.links[li];
                let feeder = &case.feeders[env.feeder_index];
                let weights = match cfg.mode {
                    WeightMode::Sensitivity => {
                        let dx = dx_models
                            .get(&link.feeder)
                            .ok_or_else(|| CoordError::MissingDxModel(link.feeder.clone()))?;
                        dsopt::dx_weights(dx, &q_der[li])?
                    }
                    WeightMode::Equal => vec![1.0; feeder.ders.len()],
                };
                let beta = f64::from(link.beta);
                let r = dsopt::redispatch(
                    feeder,
                    link,
                    job.target_kvar * beta / 1000.0,
                    env.v_tm,
                    env.load_scale,
                    &weights,
                    cfg.alpha,
                )?;
                Ok((li, r, weights))
            })
            .collect::<Result<_, _>>()?;

        // Apply: setpoint shifts plus realized feeder dispatch. The direct
        // bus-support channel stays untouched — feeders carry the support.
        for (v, dv) in op.unit_v.iter_mut().zip(&disp.dv_g) {
            *v += dv;
        }
        let mut feeders: Vec<FeederRecord> = Vec::with_capacity(solved.len());
        for ((li, r, weights), job) in solved.into_iter().zip(&jobs) {
            op.der_q[li] = r.dispatch();
            q_der[li] = r.per_der.clone();
            feeders.push(FeederRecord {
                feeder: case.links[li].feeder.clone(),
                link_index: li,
                requested_mvar: job.applied_mvar,
                shortfall_mvar: job.shortfall_mvar,
                prior_kvar: envs[li].prior_kvar,
                realized_kvar: r.aggregate_kvar,
                realized_mvar: r.boundary_mvar,
                per_der_kvar: r.per_der,
                per_phase_kvar: r.per_phase,
                weights,
                binding: r.binding,
            });
        }

        let vsm_before = vsm;
        let (vsm_next, sol_next) = tsopt::evaluate_vsm(case, &op, model)?;
        if vsm_next < vsm_before - DECREASE_ABORT_MW {
            abort = Some(format!(
                "margin fell {:.3} MW ({:.3} → {:.3}) in round {}: \
                 linearization untrustworthy here, stopping",
                vsm_before - vsm_next,
                vsm_before,
                vsm_next,
                iterations.len() + 1,
            ));
        }
        iterations.push(IterationRecord {
            iteration: iterations.len() + 1,
            vsm_before,
            predicted_vsm: disp.predicted_vsm,
            vsm_after: vsm_next,
            gap_after: cfg.target_mw - vsm_next,
            dv_g: disp.dv_g,
            dq_requested: disp.dq_g,
            dq_applied,
            a_v: prob.a_v.clone(),
            a_q: prob.a_q.clone(),
            active: disp.active,
            feeders,
        });
        vsm = vsm_next;
        sol = sol_next;
    }

    let converged = abort.is_none() && vsm >= cfg.target_mw - cfg.tol_mw;
    Ok(CoordinationTrace {
        mode: cfg.mode,
        target_mw: cfg.target_mw,
        tol_mw: cfg.tol_mw,
        vsm_initial,
        vsm_final: vsm,
        converged,
        abort,
        iterations,
    })
}

// ---------------------------------------------------------------------------
// Artifact writers
// ---------------------------------------------------------------------------

fn mode_name(mode: WeightMode) -> &'static str {
    match mode {
        WeightMode::Sensitivity => "sensitivity",
        WeightMode::Equal => "equal",
    }
}

fn join6(vals: &[f64]) -> String {
    vals.iter()
        .map(|v| format!("{v:.6}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Structured text record of a run. Line-oriented `key = value` blocks, one
/// `[iteration N]` block per round, `[feeder …]` sub-blocks per redispatch.
pub fn render_trace(trace: &CoordinationTrace, case: &Case) -> String {
    let mut s = String::new();
    let w = &mut s;
    let _ = writeln!(w, "coordination trace");
    let _ = writeln!(w, "mode = {}", mode_name(trace.mode));
    let _ = writeln!(w, "target_mw = {:.6}", trace.target_mw);
    let _ = writeln!(w, "tol_mw = {:.6}", trace.tol_mw);
    let _ = writeln!(w, "vsm_initial_mw = {:.6}", trace.vsm_initial);
    let _ = writeln!(w, "vsm_final_mw = {:.6}", trace.vsm_final);
    let _ = writeln!(w, "converged = {}", trace.converged);
    let _ = writeln!(w, "iterations = {}", trace.n_iterations());
    let _ = writeln!(w, "total_requested_mvar = {:.6}", trace.total_requested_mvar());
    if let Some(msg) = &trace.abort {
        let _ = writeln!(w, "abort = {msg}");
    }
    for it in &trace.iterations {
        let _ = writeln!(w, "\n[iteration {}]", it.iteration);
        let _ = writeln!(w, "vsm_before_mw = {:.6}", it.vsm_before);
        let _ = writeln!(w, "predicted_vsm_mw = {:.6}", it.predicted_vsm);
        let _ = writeln!(w, "vsm_after_mw = {:.6}", it.vsm_after);
        let _ = writeln!(w, "gap_after_mw = {:.6}", it.gap_after);
        let _ = writeln!(w, "dv_g_pu = {}", join6(&it.dv_g));
        let _ = writeln!(w, "dq_requested_mvar = {}", join6(&it.dq_requested));
        let _ = writeln!(w, "dq_applied_mvar = {}", join6(&it.dq_applied));
        let _ = writeln!(w, "a_v = {}", join6(&it.a_v));
        let _ = writeln!(w, "a_q = {}", join6(&it.a_q));
        let _ = writeln!(w, "active = {}", it.active.join(", "));
        for f in &it.feeders {
            let bus = case.links[f.link_index].tx_bus;
            let _ = writeln!(w, "[feeder {} @ bus {}]", f.feeder, bus);
            let _ = writeln!(w, "requested_mvar = {:.6}", f.requested_mvar);
            let _ = writeln!(w, "shortfall_mvar = {:.6}", f.shortfall_mvar);
            let _ = writeln!(w, "prior_kvar = {:.6}", f.prior_kvar);
            let _ = writeln!(w, "realized_kvar = {:.6}", f.realized_kvar);
            let _ = writeln!(w, "realized_mvar = {:.6}", f.realized_mvar);
            let _ = writeln!(w, "weights = {}", join6(&f.weights));
            let _ = writeln!(w, "per_der_kvar = {}", join6(&f.per_der_kvar));
            let _ = writeln!(w, "binding = {}", f.binding.join(", "));
        }
    }
    s
}

/// Margin trajectory for plotting. Header
/// `iteration,vsm_mw,predicted_vsm_mw,gap_mw`; row 0 is the starting point.
pub fn render_vsm_csv(trace: &CoordinationTrace) -> String {
    let mut s = String::from("iteration,vsm_mw,predicted_vsm_mw,gap_mw\n");
    let _ = writeln!(
        s,
        "0,{:.8e},{:.8e},{:.8e}",
        trace.vsm_initial,
        trace.vsm_initial,
        trace.target_mw - trace.vsm_initial,
    );
    for it in &trace.iterations {
        let _ = writeln!(
            s,
            "{},{:.8e},{:.8e},{:.8e}",
            it.iteration, it.vsm_after, it.predicted_vsm, it.gap_after,
        );
    }
    s
}

/// Transmission-side controls per round. Header
/// `iteration,control,bus,delta,cumulative,units`; `vg` rows are setpoint
/// shifts in pu, `dq` rows are applied boundary support in MVAr.
pub fn render_tx_csv(trace: &CoordinationTrace, case: &Case) -> String {
    let units = case.tx.units();
    let mut s = String::from("iteration,control,bus,delta,cumulative,units\n");
    let mut cum_v = vec![0.0; units.len()];
    let mut cum_q = vec![0.0; case.links.len()];
    for it in &trace.iterations {
        for (ui, u) in units.iter().enumerate() {
            cum_v[ui] += it.dv_g[ui];
            let _ = writeln!(
                s,
                "{},vg,{},{:.8e},{:.8e},pu",
                it.iteration, u.bus, it.dv_g[ui], cum_v[ui],
            );
        }
        for (li, link) in case.links.iter().enumerate() {
            cum_q[li] += it.dq_applied[li];
            let _ = writeln!(
                s,
                "{},dq,{},{:.8e},{:.8e},MVAr",
                it.iteration, link.tx_bus, it.dq_applied[li], cum_q[li],
            );
        }
    }
    s
}

/// Per-feeder DER setpoints after each round that touched the feeder. Header
/// `iteration,der,node,q_kvar,q_a_kvar,q_b_kvar,q_c_kvar`; setpoints are
/// absolute, single-feeder scale. Returns `(file name, body)` per link.
pub fn render_dx_csvs(trace: &CoordinationTrace, case: &Case) -> Vec<(String, String)> {
    let mut out = Vec::with_capacity(case.links.len());
    for (li, link) in case.links.iter().enumerate() {
        let shared = case.links.iter().filter(|l| l.feeder == link.feeder).count() > 1;
        let name = if shared {
            format!("dispatch_dx_{}_bus{}.csv", link.feeder, link.tx_bus)
        } else {
            format!("dispatch_dx_{}.csv", link.feeder)
        };
        let fi = case.feeder_index(&link.feeder).expect("validated link feeder");
        let feeder = &case.feeders[fi];
        let mut s = String::from("iteration,der,node,q_kvar,q_a_kvar,q_b_kvar,q_c_kvar\n");
        for it in &trace.iterations {
            let Some(f) = it.feeders.iter().find(|f| f.link_index == li) else {
                continue;
            };
            for (di, der) in feeder.ders.iter().enumerate() {
                let ph = f.per_phase_kvar[di];
                let _ = writeln!(
                    s,
                    "{},{},{},{:.8e},{:.8e},{:.8e},{:.8e}",
                    it.iteration, di, der.node, f.per_der_kvar[di], ph[0], ph[1], ph[2],
                );
            }
        }
        out.push((name, s));
    }
    out
}

/// Human-readable run summary in Markdown.
pub fn render_report(trace: &CoordinationTrace, case: &Case) -> String {
    let units = case.tx.units();
    let mut s = String::new();
    let w = &mut s;
    let _ = writeln!(w, "# Coordination run report\n");
    let _ = writeln!(w, "- weight mode: {}", mode_name(trace.mode));
    let _ = writeln!(
        w,
        "- margin target: {:.3} MW (tolerance {:.3} MW)",
        trace.target_mw, trace.tol_mw
    );
    let _ = writeln!(w, "- initial margin: {:.3} MW", trace.vsm_initial);
    let _ = writeln!(w, "- final margin: {:.3} MW", trace.vsm_final);
    let _ = writeln!(
        w,
        "- converged: {} ({} round{})",
        if trace.converged { "yes" } else { "no" },
        trace.n_iterations(),
        if trace.n_iterations() == 1 { "" } else { "s" },
    );
    let _ = writeln!(
        w,
        "- total boundary support forwarded: {:.3} MVAr",
        trace.total_requested_mvar()
    );
    if let Some(msg) = &trace.abort {
        let _ = writeln!(w, "\n> **Aborted:** {msg}");
    }
    if trace.iterations.is_empty() {
        let _ = writeln!(w, "\nMargin already within tolerance; nothing dispatched.");
        return s;
    }

    let _ = writeln!(w, "\n## Margin trajectory\n");
    let _ = writeln!(
        w,
        "| round | before (MW) | predicted (MW) | verified (MW) | gap (MW) |"
    );
    let _ = writeln!(w, "|---:|---:|---:|---:|---:|");
    for it in &trace.iterations {
        let _ = writeln!(
            w,
            "| {} | {:.3} | {:.3} | {:.3} | {:.3} |",
            it.iteration, it.vsm_before, it.predicted_vsm, it.vsm_after, it.gap_after,
        );
    }

    let _ = writeln!(w, "\n## Transmission controls\n");
    let _ = writeln!(w, "| control | location | total change |");
    let _ = writeln!(w, "|---|---|---:|");
    for (ui, u) in units.iter().enumerate() {
        let total: f64 = trace.iterations.iter().map(|it| it.dv_g[ui]).sum();
        let _ = writeln!(
            w,
            "| voltage setpoint | bus {} | {:+.4} pu |",
            u.bus, total
        );
    }
    for (li, link) in case.links.iter().enumerate() {
        let total: f64 = trace.iterations.iter().map(|it| it.dq_applied[li]).sum();
        let _ = writeln!(
            w,
            "| boundary support | {} @ bus {} | {:+.3} MVAr |",
            link.feeder, link.tx_bus, total
        );
    }

    let first = &trace.iterations[0];
    let _ = writeln!(w, "\n## Control weights (round 1)\n");
    let _ = writeln!(w, "| control | weight |");
    let _ = writeln!(w, "|---|---:|");
    for (ui, u) in units.iter().enumerate() {
        let _ = writeln!(w, "| V_g @ bus {} | {:.4} |", u.bus, first.a_v[ui]);
    }
    for (li, link) in case.links.iter().enumerate() {
        let _ = writeln!(w, "| Q_g @ {} | {:.4} |", link.feeder, first.a_q[li]);
    }

    let _ = writeln!(w, "\n## Feeder redispatch\n");
    for (li, link) in case.links.iter().enumerate() {
        let fi = case.feeder_index(&link.feeder).expect("validated link feeder");
        let feeder = &case.feeders[fi];
        let Some(last) = trace
            .iterations
            .iter()
            .rev()
            .find_map(|it| it.feeders.iter().find(|f| f.link_index == li))
        else {
            let _ = writeln!(
                w,
                "### {} @ bus {}\n\nNo request forwarded.\n",
                link.feeder, link.tx_bus
            );
            continue;
        };
        let _ = writeln!(w, "### {} @ bus {}\n", link.feeder, link.tx_bus);
        let _ = writeln!(w, "| DER | node | weight | setpoint (kVAr) |");
        let _ = writeln!(w, "|---:|---:|---:|---:|");
        for (di, der) in feeder.ders.iter().enumerate() {
            let _ = writeln!(
                w,
                "| {} | {} | {:.4} | {:+.2} |",
                di, der.node, last.weights[di], last.per_der_kvar[di],
            );
        }
        let _ = writeln!(
            w,
            "\nAggregate {:.2} kVAr → {:+.3} MVAr at the boundary bus.",
            last.realized_kvar, last.realized_mvar
        );
        let shortfall: f64 = trace
            .iterations
            .iter()
            .flat_map(|it| it.feeders.iter())
            .filter(|f| f.link_index == li)
            .map(|f| f.shortfall_mvar.abs())
            .sum();
        if shortfall > 1e-9 {
            let _ = writeln!(
                w,
                "Capability clamp withheld {shortfall:.3} MVAr over the run."
            );
        }
        let _ = writeln!(w);
    }
    s
}

/// Write the full artifact set for a run into `dir`:
/// `trace.txt`, `vsm_iterations.csv`, `dispatch_tx.csv`,
/// `dispatch_dx_<feeder>.csv` (one per boundary link), `report.md`.
pub fn write_outputs(
    trace: &CoordinationTrace,
    case: &Case,
    dir: &Path,
) -> Result<(), CoordError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("trace.txt"), render_trace(trace, case))?;
    fs::write(dir.join("vsm_iterations.csv"), render_vsm_csv(trace))?;
    fs::write(dir.join("dispatch_tx.csv"), render_tx_csv(trace, case))?;
    for (name, body) in render_dx_csvs(trace, case) {
        fs::write(dir.join(name), body)?;
    }
    fs::write(dir.join("report.md"), render_report(trace, case))?;
    Ok(())
}
