//! Case file reading and writing.
//!
//! A case is a single TOML document with three top-level sections:
//! `[transmission]` (buses, branches, generators, ibrs), `[[feeders]]`
//! (templates with nodes, edges, ders) and `[[boundary]]` (links binding
//! `beta` parallel feeder copies to a transmission bus). Unknown fields are
//! rejected so typos fail loudly instead of silently defaulting.
//!
//! Three-phase edge impedances are written as two row-major 9-element arrays
//! `z_phase_r` / `z_phase_x`; when absent the positive-sequence `r`/`x` is
//! replicated per phase.

use super::*;
use serde::{Deserialize, Serialize};

pub fn load_case(path: &std::path::Path) -> Result<Case, CaseError> {
    let text = std::fs::read_to_string(path).map_err(|source| CaseError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse(&text, &path.display().to_string())
}

/// Parse a case from an in-memory document (used by tests and bundled cases).
pub fn load_case_str(text: &str) -> Result<Case, CaseError> {
    parse(text, "<string>")
}

fn parse(text: &str, path: &str) -> Result<Case, CaseError> {
    let raw: RawCase = toml::from_str(text).map_err(|e| CaseError::Parse {
        path: path.to_string(),
        msg: e.to_string(),
    })?;
    let case = raw.into_domain();
    case.validate()?;
    Ok(case)
}

/// Serialize a case to the document format `load_case` reads. Feeder-node
/// voltage limits are written per node (defaults already resolved), so a
/// save/load cycle reproduces a structurally equal model.
pub fn save_case(case: &Case) -> String {
    toml::to_string_pretty(&RawCase::from_domain(case)).expect("case serialization cannot fail")
}

const DEFAULT_V_MIN: f64 = 0.95;
const DEFAULT_V_MAX: f64 = 1.05;

fn default_v_min() -> f64 {
    DEFAULT_V_MIN
}
fn default_v_max() -> f64 {
    DEFAULT_V_MAX
}
fn default_true() -> bool {
    true
}
fn is_true(b: &bool) -> bool {
    *b
}
fn default_tap_min() -> f64 {
    0.95
}
fn default_tap_max() -> f64 {
    1.05
}
fn zero3() -> [f64; 3] {
    [0.0; 3]
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCase {
    transmission: RawTransmission,
    #[serde(default)]
    feeders: Vec<RawFeeder>,
    #[serde(default)]
    boundary: Vec<RawLink>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTransmission {
    base_mva: f64,
    buses: Vec<RawBus>,
    branches: Vec<RawBranch>,
    #[serde(default)]
    generators: Vec<RawGen>,
    #[serde(default)]
    ibrs: Vec<RawIbr>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBus {
    id: usize,
    kind: BusKind,
    #[serde(default)]
    load_p: f64,
    #[serde(default)]
    load_q: f64,
    #[serde(default = "default_v_min")]
    v_min: f64,
    #[serde(default = "default_v_max")]
    v_max: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBranch {
    from: usize,
    to: usize,
    r: f64,
    x: f64,
    #[serde(default)]
    b_shunt: f64,
    #[serde(default = "default_true", skip_serializing_if = "is_true")]
    in_service: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGen {
    bus: usize,
    p_out: f64,
    v_set: f64,
    q_min: f64,
    q_max: f64,
    p_max: f64,
    /// Present: apparent-power circle capability; absent: fixed q box.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    s_rating: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIbr {
    bus: usize,
    p_out: f64,
    icr: f64,
    kind: IbrKind,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFeeder {
    id: String,
    s_base_kva: f64,
    #[serde(default = "default_tap_min")]
    tap_min: f64,
    #[serde(default = "default_tap_max")]
    tap_max: f64,
    /// Feeder-wide node voltage limits; individual nodes may override.
    #[serde(default = "default_v_min")]
    v_min: f64,
    #[serde(default = "default_v_max")]
    v_max: f64,
    nodes: Vec<RawNode>,
    edges: Vec<RawEdge>,
    #[serde(default)]
    ders: Vec<RawDer>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    id: usize,
    #[serde(default = "zero3")]
    load_p: [f64; 3],
    #[serde(default = "zero3")]
    load_q: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    v_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    v_max: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEdge {
    from: usize,
    to: usize,
    r: f64,
    x: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    z_phase_r: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    z_phase_x: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDer {
    node: usize,
    p_gen: f64,
    s_rating: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLink {
    tx_bus: usize,
    feeder: String,
    beta: u32,
    kv_base_tx: f64,
    kv_base_dx: f64,
}

impl RawCase {
    fn into_domain(self) -> Case {
        let mut buses: Vec<TxBus> = self
            .transmission
            .buses
            .into_iter()
            .map(|b| TxBus {
                id: b.id,
                kind: b.kind,
                base_load_p: b.load_p,
                base_load_q: b.load_q,
                v_min: b.v_min,
                v_max: b.v_max,
            })
            .collect();
        buses.sort_by_key(|b| b.id);
        let branches = self
            .transmission
            .branches
            .into_iter()
            .map(|b| TxBranch {
                from: b.from,
                to: b.to,
                r: b.r,
                x: b.x,
                b_shunt: b.b_shunt,
                in_service: b.in_service,
            })
            .collect();
        let mut gens: Vec<GenUnit> = self
            .transmission
            .generators
            .into_iter()
            .map(|g| GenUnit {
                bus: g.bus,
                p_out: g.p_out,
                v_set: g.v_set,
                q_min: g.q_min,
                q_max: g.q_max,
                p_max: g.p_max,
                capability: match g.s_rating {
                    Some(s) => CapabilityCurve::Circle { s_rating: s },
                    None => CapabilityCurve::Box {
                        q_min: g.q_min,
                        q_max: g.q_max,
                    },
                },
            })
            .collect();
        gens.sort_by_key(|g| g.bus);
        let mut ibrs: Vec<IbrUnit> = self
            .transmission
            .ibrs
            .into_iter()
            .map(|u| IbrUnit {
                bus: u.bus,
                p_out: u.p_out,
                icr: u.icr,
                kind: u.kind,
            })
            .collect();
        ibrs.sort_by_key(|u| u.bus);

        let feeders = self
            .feeders
            .into_iter()
            .map(|f| {
                let nodes = f
                    .nodes
                    .into_iter()
                    .map(|n| DxNode {
                        id: n.id,
                        load_p: n.load_p,
                        load_q: n.load_q,
                        v_min: n.v_min.unwrap_or(f.v_min),
                        v_max: n.v_max.unwrap_or(f.v_max),
                    })
                    .collect();
                let edges = f
                    .edges
                    .into_iter()
                    .map(|e| DxEdge {
                        from: e.from,
                        to: e.to,
                        r: e.r,
                        x: e.x,
                        z_phase: match (e.z_phase_r, e.z_phase_x) {
                            (Some(r), Some(x)) if r.len() == 9 && x.len() == 9 => Some(ZPhase {
                                r: r.try_into().unwrap(),
                                x: x.try_into().unwrap(),
                            }),
                            _ => None,
                        },
                    })
                    .collect();
                let ders = f
                    .ders
                    .into_iter()
                    .map(|d| DerUnit {
                        node: d.node,
                        p_gen: d.p_gen,
                        s_rating: d.s_rating,
                    })
                    .collect();
                FeederModel {
                    id: f.id,
                    s_base_kva: f.s_base_kva,
                    tap_min: f.tap_min,
                    tap_max: f.tap_max,
                    nodes,
                    edges,
                    ders,
                }
            })
            .collect();

        let links = self
            .boundary
            .into_iter()
            .map(|l| BoundaryLink {
                tx_bus: l.tx_bus,
                feeder: l.feeder,
                beta: l.beta,
                kv_base_tx: l.kv_base_tx,
                kv_base_dx: l.kv_base_dx,
            })
            .collect();

        Case {
            tx: TransmissionNetwork {
                base_mva: self.transmission.base_mva,
                buses,
                branches,
                gens,
                ibrs,
            },
            feeders,
            links,
        }
    }

    fn from_domain(case: &Case) -> RawCase {
        RawCase {
            transmission: RawTransmission {
                base_mva: case.tx.base_mva,
                buses: case
                    .tx
                    .buses
                    .iter()
                    .map(|b| RawBus {
                        id: b.id,
                        kind: b.kind,
                        load_p: b.base_load_p,
                        load_q: b.base_load_q,
                        v_min: b.v_min,
                        v_max: b.v_max,
                    })
                    .collect(),
                branches: case
                    .tx
                    .branches
                    .iter()
                    .map(|b| RawBranch {
                        from: b.from,
                        to: b.to,
                        r: b.r,
                        x: b.x,
                        b_shunt: b.b_shunt,
                        in_service: b.in_service,
                    })
                    .collect(),
                generators: case
                    .tx
                    .gens
                    .iter()
                    .map(|g| RawGen {
                        bus: g.bus,
                        p_out: g.p_out,
                        v_set: g.v_set,
                        q_min: g.q_min,
                        q_max: g.q_max,
                        p_max: g.p_max,
                        s_rating: match g.capability {
                            CapabilityCurve::Circle { s_rating } => Some(s_rating),
                            _ => None,
                        },
                    })
                    .collect(),
                ibrs: case
                    .tx
                    .ibrs
                    .iter()
                    .map(|u| RawIbr {
                        bus: u.bus,
                        p_out: u.p_out,
                        icr: u.icr,
                        kind: u.kind,
                    })
                    .collect(),
            },
            feeders: case
                .feeders
                .iter()
                .map(|f| RawFeeder {
                    id: f.id.clone(),
                    s_base_kva: f.s_base_kva,
                    tap_min: f.tap_min,
                    tap_max: f.tap_max,
                    v_min: DEFAULT_V_MIN,
                    v_max: DEFAULT_V_MAX,
                    nodes: f
                        .nodes
                        .iter()
                        .map(|n| RawNode {
                            id: n.id,
                            load_p: n.load_p,
                            load_q: n.load_q,
                            v_min: Some(n.v_min),
                            v_max: Some(n.v_max),
                        })
                        .collect(),
                    edges: f
                        .edges
                        .iter()
                        .map(|e| RawEdge {
                            from: e.from,
                            to: e.to,
                            r: e.r,
                            x: e.x,
                            z_phase_r: e.z_phase.as_ref().map(|z| z.r.to_vec()),
                            z_phase_x: e.z_phase.as_ref().map(|z| z.x.to_vec()),
                        })
                        .collect(),
                    ders: f
                        .ders
                        .iter()
                        .map(|d| RawDer {
                            node: d.node,
                            p_gen: d.p_gen,
                            s_rating: d.s_rating,
                        })
                        .collect(),
                })
                .collect(),
            boundary: case
                .links
                .iter()
                .map(|l| RawLink {
                    tx_bus: l.tx_bus,
                    feeder: l.feeder.clone(),
                    beta: l.beta,
                    kv_base_tx: l.kv_base_tx,
                    kv_base_dx: l.kv_base_dx,
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_cases_parse_and_round_trip() {
        for text in [
            include_str!("../../cases/two_bus.case"),
            include_str!("../../cases/five_bus.case"),
            include_str!("../../cases/ieee30_37.case"),
        ] {
            let case = load_case_str(text).unwrap();
            let reparsed = load_case_str(&save_case(&case)).unwrap();
            assert_eq!(case, reparsed);
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let doc = r#"
            [transmission]
            base_mva = 100.0
            frequency = 60.0
            buses = []
            branches = []
        "#;
        let err = load_case_str(doc).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("frequency"), "unexpected message: {msg}");
    }

    #[test]
    fn duplicate_bus_id_is_rejected() {
        let doc = r#"
            [transmission]
            base_mva = 100.0
            branches = []
            [[transmission.buses]]
            id = 1
            kind = "slack"
            [[transmission.buses]]
            id = 1
            kind = "pq"
        "#;
        let err = load_case_str(doc).unwrap_err();
        assert!(matches!(err, CaseError::DuplicateId { kind: "bus", .. }), "{err}");
    }

    #[test]
    fn dangling_branch_endpoint_is_rejected() {
        let doc = r#"
            [transmission]
            base_mva = 100.0
            [[transmission.buses]]
            id = 1
            kind = "slack"
            [[transmission.branches]]
            from = 1
            to = 7
            r = 0.0
            x = 0.1
            [[transmission.generators]]
            bus = 1
            p_out = 0.0
            v_set = 1.0
            q_min = -10.0
            q_max = 10.0
            p_max = 10.0
        "#;
        let err = load_case_str(doc).unwrap_err();
        assert!(matches!(err, CaseError::DanglingRef { .. }), "{err}");
    }

    #[test]
    fn non_tree_feeder_is_rejected() {
        // Two parents for node 2.
        let doc = r#"
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

            [[feeders]]
            id = "f"
            s_base_kva = 1000.0
            [[feeders.nodes]]
            id = 0
            [[feeders.nodes]]
            id = 1
            [[feeders.nodes]]
            id = 2
            [[feeders.edges]]
            from = 0
            to = 1
            r = 0.01
            x = 0.01
            [[feeders.edges]]
            from = 0
            to = 2
            r = 0.01
            x = 0.01
            [[feeders.edges]]
            from = 1
            to = 2
            r = 0.01
            x = 0.01
        "#;
        let err = load_case_str(doc).unwrap_err();
        assert!(matches!(err, CaseError::FeederNotTree { .. }), "{err}");
    }

    #[test]
    fn two_slack_buses_are_rejected() {
        let doc = r#"
            [transmission]
            base_mva = 100.0
            branches = []
            [[transmission.buses]]
            id = 1
            kind = "slack"
            [[transmission.buses]]
            id = 2
            kind = "slack"
        "#;
        assert!(load_case_str(doc).is_err());
    }
}
