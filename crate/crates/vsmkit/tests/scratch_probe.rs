//! Temporary calibration probes for the acceptance suite. Deleted before release.

use std::collections::HashMap;

use vsmkit::cosim::OperatingPoint;
use vsmkit::margin::{self, MarginConfig};
use vsmkit::netmodel::{apply_contingency, load_case_str, Contingency};

fn five_bus() -> vsmkit::netmodel::Case {
    load_case_str(include_str!("../cases/five_bus.case")).unwrap()
}

#[test]
fn probe_contingency_connectivity() {
    let case = five_bus();
    for i in 0..case.tx.branches.len() {
        let net = apply_contingency(&case.tx, Contingency::BranchOut(i)).unwrap();
        println!(
            "br{i}: connected={} ({}-{})",
            net.is_connected(),
            case.tx.branches[i].from,
            case.tx.branches[i].to
        );
    }
}

#[test]
fn probe_margin_per_contingency() {
    let case = five_bus();
    let base = OperatingPoint::nominal(&case);
    let cfg = MarginConfig::default();
    for label in ["none", "br1", "br2", "br3", "br4", "br5"] {
        let c = Contingency::parse(label).unwrap();
        match margin::compute_vsm(&case, &base, c, &cfg) {
            Ok(r) => println!(
                "{label}: lambda_max={:.4} vsm={:.1} MW cosims={}",
                r.lambda_max, r.vsm_mw, r.cosim_count
            ),
            Err(e) => println!("{label}: ERR {e}"),
        }
    }
}

#[test]
fn probe_scan_cost() {
    // Exhaustive 1e-3 scan on the "none" contingency: how long?
    let case = five_bus();
    let base = OperatingPoint::nominal(&case);
    let t0 = std::time::Instant::now();
    let mut lambda = 1.0;
    let mut warm = None;
    let mut n = 0usize;
    loop {
        match margin::solve_at_lambda(&case, &base, lambda, warm.as_ref()) {
            Ok(sol) if sol.converged => {
                warm = Some(sol);
                lambda += 1e-3;
                n += 1;
            }
            _ => break,
        }
    }
    println!(
        "scan: first failure at {:.4} after {} solves, {:.1} s",
        lambda,
        n,
        t0.elapsed().as_secs_f64()
    );
}

#[test]
fn probe_paired_regime_real_model() {
    // C9 calibration: intact-topology model, bands as bundled; probe targets.
    let case = five_bus();
    let ds_cfg = vsmkit::margin::DatasetConfig {
        sampling: vsmkit::margin::SamplingConfig {
            n_scenarios: 260,
            seed: 42,
            contingencies: vec!["none".into()],
            ..Default::default()
        },
        margin: MarginConfig::default(),
    };
    let t0 = std::time::Instant::now();
    let (ds, warns) = margin::generate_dataset(&case, &ds_cfg).unwrap();
    println!("dataset: {} rows, {} warnings, {:.1} s", ds.rows.len(), warns.len(), t0.elapsed().as_secs_f64());
    let sha = margin::dataset_sha256(&ds.to_csv());
    let tr_cfg = vsmkit::mlpvsm::TrainConfig {
        epochs: 6000,
        ..Default::default()
    };
    let (model, rep) = vsmkit::mlpvsm::train_model(&ds, &tr_cfg, &sha).unwrap();
    println!(
        "train: val R2 {:.4} MAE {:.2}% ({:.1} s total)",
        rep.val_r2,
        rep.val_mae_pct,
        t0.elapsed().as_secs_f64()
    );

    let mut dx_models = HashMap::new();
    for link in &case.links {
        let fi = case.feeder_index(&link.feeder).unwrap();
        let (dx, _) = vsmkit::mlpvsm::train_dx_model(
            &case.feeders[fi],
            link,
            &vsmkit::mlpvsm::DxTrainConfig::default(),
        )
        .unwrap();
        dx_models.insert(link.feeder.clone(), dx);
    }

    let op = OperatingPoint::nominal(&case);
    let (vsm0, _) = vsmkit::tsopt::evaluate_vsm(&case, &op, &model).unwrap();
    println!("vsm0 = {vsm0:.2} MW");

    let pinched = case.clone();
    for delta in [48.0] {
        for mode in [
            vsmkit::tsopt::WeightMode::Sensitivity,
            vsmkit::tsopt::WeightMode::Equal,
        ] {
            let cfg = vsmkit::coord::LoopConfig::new(vsm0 + delta, mode);
            match vsmkit::coord::run_loop(&pinched, &model, &dx_models, &cfg) {
                Ok(tr) => {
                    let moved_v = case
                        .tx
                        .units()
                        .iter()
                        .enumerate()
                        .filter(|(ui, _)| {
                            tr.iterations.iter().map(|it| it.dv_g[*ui]).sum::<f64>().abs() > 1e-4
                        })
                        .count();
                    let moved_q = (0..case.links.len())
                        .filter(|li| {
                            tr.iterations
                                .iter()
                                .map(|it| it.dq_applied[*li])
                                .sum::<f64>()
                                .abs()
                                > 1e-3
                        })
                        .count();
                    println!(
                        "delta {delta} {:?}: conv={} iters={} mvar={:.6e} final={:.4} active_v={} active_q={} abort={:?}",
                        mode,
                        tr.converged,
                        tr.n_iterations(),
                        tr.total_requested_mvar(),
                        tr.vsm_final,
                        moved_v,
                        moved_q,
                        tr.abort
                    );
                    for it in &tr.iterations {
                        println!(
                            "   round {}: dv={:?} dq_req={:?} dq_app={:?}",
                            it.iteration, it.dv_g, it.dq_requested, it.dq_applied
                        );
                    }
                }
                Err(e) => println!("delta {delta} {:?}: ERR {e}", mode),
            }
            // Single-round comparison for the strict-closeness check.
            let mut one = vsmkit::coord::LoopConfig::new(vsm0 + delta, mode);
            one.max_iters = 1;
            if let Ok(tr) = vsmkit::coord::run_loop(&pinched, &model, &dx_models, &one) {
                println!(
                    "   single-round {:?}: final={:.4} gap={:.4}",
                    mode,
                    tr.vsm_final,
                    (vsm0 + delta - tr.vsm_final).abs()
                );
            }
        }
    }
}
