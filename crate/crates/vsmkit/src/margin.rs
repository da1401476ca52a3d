//! Long-term voltage-stability margin and training-data generation.
//!
//! The margin of an operating point is found by ramping the system load
//! multiplier λ until the co-simulation stops converging: a coarse march
//! brackets the collapse point, bisection narrows the bracket, and
//!
//! ```text
//! VSM = (λ_max − 1) × total base transmission-side active load   [MW]
//! ```
//!
//! Load growth is followed by the non-slack generators in proportion to
//! their active-power headroom (they all reach their limits together); the
//! slack machine picks up losses and anything beyond that.
//!
//! [`generate_dataset`] wraps the margin search in probabilistic scenario
//! sampling (load level/shape, conventional dispatch, inverter output,
//! voltage setpoints) crossed with a contingency list, and writes one CSV row
//! per (scenario, contingency): the feature vector the stability-margin
//! model trains on, plus λ_max and the margin itself.

use crate::cosim::{self, CosimSolution, OperatingPoint};
use crate::netmodel::{apply_contingency, Case, Contingency, ContingencyError};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MarginError {
    #[error("contingency {label} islands the network; margin undefined")]
    Islanding { label: String },
    #[error("co-simulation fails at the base operating point (λ = 1): {reason}")]
    BaseInfeasible { reason: String },
    #[error("margin exceeds the search cap λ = {cap}; case is not meaningfully stressed")]
    Unbounded { cap: f64 },
    #[error(transparent)]
    Cosim(#[from] cosim::CosimError),
    #[error(transparent)]
    Contingency(#[from] ContingencyError),
    #[error("dataset config: {0}")]
    Config(String),
    #[error("dataset io: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset parse at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Margin-search knobs. The defaults are what the published results use.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarginConfig {
    /// Coarse march step on λ.
    pub lambda_step: f64,
    /// Final bracket width on λ.
    pub bisect_width: f64,
    /// Safety cap on the search.
    pub lambda_cap: f64,
}

impl Default for MarginConfig {
    fn default() -> Self {
        MarginConfig {
            lambda_step: 0.05,
            bisect_width: 1e-3,
            lambda_cap: 15.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MarginResult {
    pub lambda_max: f64,
    /// (λ_max − 1) × base load, MW.
    pub vsm_mw: f64,
    /// Realized transmission-side active load at λ = 1, MW.
    pub base_load_mw: f64,
    /// Base-point co-simulation (feature source).
    pub base: CosimSolution,
    /// Every λ probed and whether it converged, in probe order.
    pub trace: Vec<(f64, bool)>,
    pub cosim_count: usize,
}

/// Redispatch `base` for load multiplier `lambda`: headroom-proportional
/// participation of the non-slack conventional units. Inverter output and
/// every voltage setpoint stay put; the slack entry is untouched (it is only
/// the Newton initial guess).
pub fn dispatch_for_lambda(case: &Case, base: &OperatingPoint, lambda: f64) -> OperatingPoint {
    let net = &case.tx;
    let units = net.units();
    let slack_bus = net.buses[net.slack_index()].id;

    let mut op = base.clone();
    op.lambda = lambda;

    let delta = (lambda - 1.0) * estimated_base_load_mw(case, base);
    let participants: Vec<usize> = (0..net.gens.len())
        .filter(|&i| units[i].bus != slack_bus)
        .collect();
    let headroom: Vec<f64> = participants
        .iter()
        .map(|&i| (units[i].p_max - base.unit_p[i]).max(0.0))
        .collect();
    let total: f64 = headroom.iter().sum();
    if total > 0.0 {
        let take = delta.clamp(0.0, total);
        for (k, &i) in participants.iter().enumerate() {
            op.unit_p[i] = base.unit_p[i] + headroom[k] / total * take;
        }
    }
    op
}

/// Static estimate of the transmission-side active load served at λ = 1
/// under the scenario's load shape (losses excluded — they are the slack's
/// job). Used to size generator participation.
fn estimated_base_load_mw(case: &Case, op: &OperatingPoint) -> f64 {
    let native: f64 = case
        .tx
        .buses
        .iter()
        .enumerate()
        .map(|(i, b)| op.bus_scale[i] * b.base_load_p)
        .sum();
    let feeders: f64 = case
        .links
        .iter()
        .enumerate()
        .map(|(li, l)| {
            let f = &case.feeders[case.feeder_index(&l.feeder).unwrap()];
            let der: f64 = f.ders.iter().map(|d| d.p_gen).sum();
            l.beta as f64 * (op.link_scale[li] * f.total_load().0 - der) / 1000.0
        })
        .sum();
    native + feeders
}

/// One co-simulation at load multiplier `lambda` (dispatch follows λ).
pub fn solve_at_lambda(
    case: &Case,
    base: &OperatingPoint,
    lambda: f64,
    warm: Option<&CosimSolution>,
) -> Result<CosimSolution, cosim::CosimError> {
    let op = dispatch_for_lambda(case, base, lambda);
    cosim::solve_cosim_from(case, &op, warm)
}

/// Search the loadability limit of `base` under `contingency`.
pub fn compute_vsm(
    case: &Case,
    base: &OperatingPoint,
    contingency: Contingency,
    cfg: &MarginConfig,
) -> Result<MarginResult, MarginError> {
    let mut ctg_case = case.clone();
    ctg_case.tx = apply_contingency(&case.tx, contingency)?;
    if !ctg_case.tx.is_connected() {
        return Err(MarginError::Islanding {
            label: contingency.label(),
        });
    }

    let mut trace = Vec::new();
    let mut count = 0usize;
    let probe = |lambda: f64,
                     warm: Option<&CosimSolution>,
                     trace: &mut Vec<(f64, bool)>,
                     count: &mut usize|
     -> Result<CosimSolution, MarginError> {
        let sol = solve_at_lambda(&ctg_case, base, lambda, warm)?;
        trace.push((lambda, sol.converged));
        *count += 1;
        Ok(sol)
    };

    let base_sol = probe(1.0, None, &mut trace, &mut count)?;
    if !base_sol.converged {
        return Err(MarginError::BaseInfeasible {
            reason: format!("{:?}", base_sol.failure),
        });
    }
    let base_load_mw = base_sol.total_load_mw();

    // Coarse march until the first failure brackets the collapse point.
    let mut lo = 1.0;
    let mut lo_sol = base_sol.clone();
    let mut hi = None;
    let mut lambda = 1.0;
    while hi.is_none() {
        lambda += cfg.lambda_step;
        if lambda > cfg.lambda_cap {
            return Err(MarginError::Unbounded { cap: cfg.lambda_cap });
        }
        let sol = probe(lambda, Some(&lo_sol), &mut trace, &mut count)?;
        if sol.converged {
            lo = lambda;
            lo_sol = sol;
        } else {
            hi = Some(lambda);
        }
    }
    let mut hi = hi.unwrap();

    // Bisect the bracket down to the requested width.
    while hi - lo > cfg.bisect_width {
        let mid = 0.5 * (lo + hi);
        let sol = probe(mid, Some(&lo_sol), &mut trace, &mut count)?;
        if sol.converged {
            lo = mid;
            lo_sol = sol;
        } else {
            hi = mid;
        }
    }

    Ok(MarginResult {
        lambda_max: lo,
        vsm_mw: (lo - 1.0) * base_load_mw,
        base_load_mw,
        base: base_sol,
        trace,
        cosim_count: count,
    })
}

// ---------------------------------------------------------------------------
// Scenario sampling
// ---------------------------------------------------------------------------

/// Probabilistic scenario bands. Every draw is uniform.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub n_scenarios: usize,
    pub seed: u64,
    /// System load-level band (multiplier on all loads).
    pub load_scale: [f64; 2],
    /// Per-bus / per-feeder shape jitter: multiplier band 1 ± jitter.
    pub load_jitter: f64,
    /// Conventional dispatch band (multiplier on each unit's case output).
    pub gen_scale: [f64; 2],
    /// Inverter output band as a fraction of installed capacity.
    pub ibr_range: [f64; 2],
    /// Voltage-setpoint band, ± pu around the case value.
    pub vg_band: f64,
    /// Contingency labels crossed with every scenario ("none", "br3", ...).
    pub contingencies: Vec<String>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            n_scenarios: 100,
            seed: 1,
            load_scale: [0.9, 1.1],
            load_jitter: 0.05,
            gen_scale: [0.9, 1.1],
            ibr_range: [0.2, 0.9],
            vg_band: 0.02,
            contingencies: vec!["none".into()],
        }
    }
}

fn band(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.gen_range(range[0]..range[1])
    }
}

/// Deterministic scenario `k` of a sampling plan: one independent RNG per
/// scenario, fixed draw order (load level, bus shapes, link shapes,
/// conventional dispatch, inverter output, voltage setpoints).
pub fn sample_scenario(case: &Case, cfg: &SamplingConfig, k: u64) -> OperatingPoint {
    let mut rng = ChaCha8Rng::seed_from_u64(
        cfg.seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(k),
    );
    let net = &case.tx;
    let units = net.units();
    let slack_bus = net.buses[net.slack_index()].id;
    let mut op = OperatingPoint::nominal(case);

    let level = band(&mut rng, cfg.load_scale);
    for s in op.bus_scale.iter_mut() {
        *s = level * band(&mut rng, [1.0 - cfg.load_jitter, 1.0 + cfg.load_jitter]);
    }
    for s in op.link_scale.iter_mut() {
        *s = level * band(&mut rng, [1.0 - cfg.load_jitter, 1.0 + cfg.load_jitter]);
    }
    for i in 0..net.gens.len() {
        let scale = band(&mut rng, cfg.gen_scale);
        if units[i].bus != slack_bus {
            op.unit_p[i] = (units[i].p_out * scale).clamp(0.0, units[i].p_max);
        }
    }
    for (j, ibr) in net.ibrs.iter().enumerate() {
        op.unit_p[net.gens.len() + j] = ibr.icr * band(&mut rng, cfg.ibr_range);
    }
    for v in op.unit_v.iter_mut() {
        *v += band(&mut rng, [-cfg.vg_band, cfg.vg_band]);
    }
    op
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub sampling: SamplingConfig,
    pub margin: MarginConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataRow {
    pub scenario: u64,
    pub contingency: String,
    /// Feature vector: unit P (MW), unit V setpoints (pu), load-bus P, Q (MW,
    /// MVAr), in [`feature_names`] order.
    pub x: Vec<f64>,
    pub lambda_max: f64,
    pub vsm_mw: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    /// Feature column names (without the id / target columns).
    pub features: Vec<String>,
    pub rows: Vec<DataRow>,
}

/// Feature layout: realized unit P, unit V setpoints, then realized P and Q
/// per load bus. Unit and bus order are the case orders (ascending ids).
pub fn feature_names(case: &Case) -> Vec<String> {
    let units = case.tx.units();
    let mut names = Vec::new();
    for u in &units {
        names.push(format!("pg_b{}", u.bus));
    }
    for u in &units {
        names.push(format!("vg_b{}", u.bus));
    }
    for &id in &case.load_buses() {
        names.push(format!("pl_b{id}"));
    }
    for &id in &case.load_buses() {
        names.push(format!("ql_b{id}"));
    }
    names
}

/// Feature vector of a solved base point. Unit P is realized (the slack
/// deviates from its setpoint), unit V is the commanded setpoint, loads are
/// the realized transmission-side bus loads.
pub fn features_from(case: &Case, op: &OperatingPoint, sol: &CosimSolution) -> Vec<f64> {
    let mut x = Vec::new();
    x.extend_from_slice(&sol.tx.unit_p);
    x.extend_from_slice(&op.unit_v);
    let lb: Vec<usize> = case
        .load_buses()
        .iter()
        .map(|&id| case.tx.bus_index(id).unwrap())
        .collect();
    x.extend(lb.iter().map(|&b| sol.load_p[b]));
    x.extend(lb.iter().map(|&b| sol.load_q[b]));
    x
}

/// Contingency labels -> parsed list, validated against the case.
pub fn parse_contingencies(
    case: &Case,
    labels: &[String],
) -> Result<Vec<Contingency>, MarginError> {
    labels
        .iter()
        .map(|s| {
            let c = Contingency::parse(s)
                .ok_or_else(|| MarginError::Config(format!("bad contingency label {s:?}")))?;
            if let Contingency::BranchOut(i) = c {
                if i >= case.tx.branches.len() {
                    return Err(MarginError::Config(format!(
                        "contingency {s:?} exceeds branch count {}",
                        case.tx.branches.len()
                    )));
                }
            }
            Ok(c)
        })
        .collect()
}

/// Run the full sampling × contingency grid. Rows come back in scenario-major
/// order regardless of thread count; scenarios whose base point is infeasible
/// and contingencies that island the grid are skipped with a warning string.
pub fn generate_dataset(
    case: &Case,
    cfg: &DatasetConfig,
) -> Result<(Dataset, Vec<String>), MarginError> {
    let contingencies = parse_contingencies(case, &cfg.sampling.contingencies)?;
    if contingencies.is_empty() {
        return Err(MarginError::Config("contingency list is empty".into()));
    }
    // Drop islanding contingencies once, up front.
    let mut kept = Vec::new();
    let mut warnings = Vec::new();
    for (c, label) in contingencies.iter().zip(&cfg.sampling.contingencies) {
        let net = apply_contingency(&case.tx, *c)?;
        if net.is_connected() {
            kept.push(*c);
        } else {
            warnings.push(format!("skipping contingency {label}: islands the network"));
        }
    }
    if kept.is_empty() {
        return Err(MarginError::Config(
            "every listed contingency islands the network".into(),
        ));
    }

    let results: Vec<(u64, Vec<Result<DataRow, String>>)> = (0..cfg.sampling.n_scenarios as u64)
        .into_par_iter()
        .map(|k| {
            let op = sample_scenario(case, &cfg.sampling, k);
            let rows = kept
                .iter()
                .map(|&ctg| {
                    match compute_vsm(case, &op, ctg, &cfg.margin) {
                        Ok(res) => Ok(DataRow {
                            scenario: k,
                            contingency: ctg.label(),
                            x: features_from(case, &op, &res.base),
                            lambda_max: res.lambda_max,
                            vsm_mw: res.vsm_mw,
                        }),
                        Err(e) => Err(format!(
                            "skipping scenario {k} / {}: {e}",
                            ctg.label()
                        )),
                    }
                })
                .collect();
            (k, rows)
        })
        .collect();

    let mut rows = Vec::new();
    for (_, scen_rows) in results {
        for r in scen_rows {
            match r {
                Ok(row) => rows.push(row),
                Err(w) => warnings.push(w),
            }
        }
    }
    Ok((
        Dataset {
            features: feature_names(case),
            rows,
        },
        warnings,
    ))
}

impl Dataset {
    /// CSV with a fixed 9-significant-digit float format: regenerating the
    /// same dataset yields byte-identical output.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("scenario,contingency");
        for f in &self.features {
            out.push(',');
            out.push_str(f);
        }
        out.push_str(",lambda_max,vsm_mw\n");
        for r in &self.rows {
            out.push_str(&format!("{},{}", r.scenario, r.contingency));
            for v in &r.x {
                out.push_str(&format!(",{v:.8e}"));
            }
            out.push_str(&format!(",{:.8e},{:.8e}\n", r.lambda_max, r.vsm_mw));
        }
        out
    }

    pub fn save_csv(&self, path: &std::path::Path) -> Result<(), MarginError> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn from_csv(text: &str) -> Result<Dataset, MarginError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(MarginError::Parse {
            line: 1,
            msg: "empty file".into(),
        })?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 4 || cols[0] != "scenario" || cols[1] != "contingency" {
            return Err(MarginError::Parse {
                line: 1,
                msg: "expected header starting scenario,contingency".into(),
            });
        }
        let n = cols.len();
        if cols[n - 2] != "lambda_max" || cols[n - 1] != "vsm_mw" {
            return Err(MarginError::Parse {
                line: 1,
                msg: "expected trailing lambda_max,vsm_mw columns".into(),
            });
        }
        let features: Vec<String> = cols[2..n - 2].iter().map(|s| s.to_string()).collect();
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != n {
                return Err(MarginError::Parse {
                    line: i + 1,
                    msg: format!("expected {n} fields, got {}", parts.len()),
                });
            }
            let num = |s: &str, what: &str| -> Result<f64, MarginError> {
                s.parse().map_err(|_| MarginError::Parse {
                    line: i + 1,
                    msg: format!("bad {what}: {s:?}"),
                })
            };
            rows.push(DataRow {
                scenario: parts[0].parse().map_err(|_| MarginError::Parse {
                    line: i + 1,
                    msg: format!("bad scenario id {:?}", parts[0]),
                })?,
                contingency: parts[1].to_string(),
                x: parts[2..n - 2]
                    .iter()
                    .map(|s| num(s, "feature"))
                    .collect::<Result<_, _>>()?,
                lambda_max: num(parts[n - 2], "lambda_max")?,
                vsm_mw: num(parts[n - 1], "vsm_mw")?,
            });
        }
        Ok(Dataset { features, rows })
    }

    pub fn load_csv(path: &std::path::Path) -> Result<Dataset, MarginError> {
        Dataset::from_csv(&std::fs::read_to_string(path)?)
    }
}

/// Hex SHA-256 of the serialized dataset (recorded in model artifacts).
pub fn dataset_sha256(csv: &str) -> String {
    let mut h = Sha256::new();
    h.update(csv.as_bytes());
    let d = h.finalize();
    d.iter().map(|b| format!("{b:02x}")).collect()
}
