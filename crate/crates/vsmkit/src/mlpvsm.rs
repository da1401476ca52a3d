//! Explicit stability-margin expression: a one-hidden-layer tanh network
//!
//! ```text
//! y = b_out + Σ_k c[k] · tanh(w[k] · z + b[k]),    z = (x − μ) / σ
//! ```
//!
//! small enough to write down in closed form, with an analytic gradient the
//! dispatch optimizers consume directly. Training is full-batch iRprop−
//! (sign-based steps with per-parameter step-size adaptation — no learning
//! rate to tune), holding out a validation split and keeping the
//! best-validation parameters. Inputs and target are z-scored internally;
//! the target scaling is folded back into `c`/`b_out` before the model is
//! returned, so stored parameters always map physical inputs to physical
//! output (MW for the transmission model, MVAr for feeder models).

use crate::dxflow::{self, DerDispatch};
use crate::margin::Dataset;
use crate::netmodel::{der_q_limits, BoundaryLink, FeederModel};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

pub const ETA_PLUS: f64 = 1.2;
pub const ETA_MINUS: f64 = 0.5;
pub const DELTA_INIT: f64 = 0.1;
pub const DELTA_MIN: f64 = 1e-6;
pub const DELTA_MAX: f64 = 50.0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("target has no variance; nothing to fit")]
    DegenerateTarget,
    #[error("dataset is empty or shapes disagree: {0}")]
    Shape(String),
    #[error("model artifact parse: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Dx(#[from] dxflow::DxError),
}

#[derive(Debug, Clone, Default)]
pub struct ModelMeta {
    /// What the output means ("vsm_mw" or "boundary_q_mvar").
    pub target: String,
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub train_r2: f64,
    pub val_r2: f64,
    pub val_mae_pct: f64,
    /// Hash of the training CSV, empty when trained from memory.
    pub dataset_sha256: String,
}

/// The trained expression. `w` is one row per hidden neuron.
#[derive(Debug, Clone)]
pub struct VsmModel {
    pub features: Vec<String>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub b_out: f64,
    pub meta: ModelMeta,
}

/// The same expression with standardization composed into the weights:
/// `y = b_out + Σ c tanh(w · x + b)` on raw physical inputs.
#[derive(Debug, Clone)]
pub struct PhysicalForm {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub b_out: f64,
}

impl PhysicalForm {
    pub fn forward(&self, x: &[f64]) -> f64 {
        let mut y = self.b_out;
        for (k, row) in self.w.iter().enumerate() {
            let a: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b[k];
            y += self.c[k] * a.tanh();
        }
        y
    }
}

impl VsmModel {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn hidden(&self) -> usize {
        self.b.len()
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mu.iter().zip(&self.sigma))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim(), "feature vector length");
        let z = self.standardize(x);
        let mut y = self.b_out;
        for (k, row) in self.w.iter().enumerate() {
            let a: f64 = row.iter().zip(&z).map(|(w, v)| w * v).sum::<f64>() + self.b[k];
            y += self.c[k] * a.tanh();
        }
        y
    }

    /// Analytic ∂y/∂x_i: `Σ_k c_k (1 − tanh²) w_ki / σ_i`.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim(), "feature vector length");
        let z = self.standardize(x);
        let mut g = vec![0.0; self.dim()];
        for (k, row) in self.w.iter().enumerate() {
            let a: f64 = row.iter().zip(&z).map(|(w, v)| w * v).sum::<f64>() + self.b[k];
            let t = a.tanh();
            let scale = self.c[k] * (1.0 - t * t);
            for (i, w) in row.iter().enumerate() {
                g[i] += scale * w / self.sigma[i];
            }
        }
        g
    }

    /// Fold μ/σ into the weights: `w' = w/σ`, `b' = b − w · (μ/σ)`.
    pub fn to_physical(&self) -> PhysicalForm {
        let w: Vec<Vec<f64>> = self
            .w
            .iter()
            .map(|row| row.iter().zip(&self.sigma).map(|(w, s)| w / s).collect())
            .collect();
        let b: Vec<f64> = self
            .w
            .iter()
            .zip(&self.b)
            .map(|(row, b)| {
                b - row
                    .iter()
                    .zip(self.mu.iter().zip(&self.sigma))
                    .map(|(w, (m, s))| w * m / s)
                    .sum::<f64>()
            })
            .collect();
        PhysicalForm {
            w,
            b,
            c: self.c.clone(),
            b_out: self.b_out,
        }
    }

    /// Position of a feature name, for wiring gradients to controls.
    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f == name)
    }
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Coefficient of determination. Errors when the target is constant.
pub fn r2(y: &[f64], y_hat: &[f64]) -> Result<f64, ModelError> {
    assert_eq!(y.len(), y_hat.len());
    if y.is_empty() {
        return Err(ModelError::Shape("empty target".into()));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot <= 0.0 {
        return Err(ModelError::DegenerateTarget);
    }
    let ss_res: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Mean absolute percentage error over samples with |y| ≥ 1e-6.
pub fn mae_pct(y: &[f64], y_hat: &[f64]) -> Result<f64, ModelError> {
    assert_eq!(y.len(), y_hat.len());
    let mut sum = 0.0;
    let mut n = 0usize;
    for (a, b) in y.iter().zip(y_hat) {
        if a.abs() >= 1e-6 {
            sum += (a - b).abs() / a.abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(ModelError::DegenerateTarget);
    }
    Ok(100.0 * sum / n as f64)
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Held-out fraction used for best-parameter selection.
    pub val_frac: f64,
    /// Cross-validation fold count.
    pub folds: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: 20,
            epochs: 3000,
            seed: 7,
            val_frac: 0.2,
            folds: 5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub train_r2: f64,
    pub val_r2: f64,
    pub val_mae_pct: f64,
    /// Standardized training MSE per epoch.
    pub loss_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FoldMetrics {
    pub r2: f64,
    pub mae_pct: f64,
    pub n_test: usize,
}

/// Flat parameter layout: w rows, then b, c, b_out.
struct ParamView {
    d: usize,
    k: usize,
}

impl ParamView {
    fn len(&self) -> usize {
        self.k * self.d + 2 * self.k + 1
    }
    fn w<'a>(&self, p: &'a [f64], row: usize) -> &'a [f64] {
        &p[row * self.d..(row + 1) * self.d]
    }
    fn b<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.k * self.d..self.k * self.d + self.k]
    }
    fn c<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.k * self.d + self.k..self.k * self.d + 2 * self.k]
    }
    fn b_out(&self, p: &[f64]) -> f64 {
        p[self.len() - 1]
    }
}

/// MSE and its gradient over the standardized batch.
fn loss_grad(view: &ParamView, p: &[f64], z: &[Vec<f64>], y: &[f64], grad: &mut [f64]) -> f64 {
    let n = z.len();
    grad.fill(0.0);
    let mut loss = 0.0;
    let kd = view.k * view.d;
    for (zn, &yn) in z.iter().zip(y) {
        // Forward with activations kept for the backward pass.
        let mut y_hat = view.b_out(p);
        let mut t = vec![0.0; view.k];
        for k in 0..view.k {
            let a: f64 =
                view.w(p, k).iter().zip(zn).map(|(w, v)| w * v).sum::<f64>() + view.b(p)[k];
            t[k] = a.tanh();
            y_hat += view.c(p)[k] * t[k];
        }
        let e = 2.0 * (y_hat - yn) / n as f64;
        loss += (y_hat - yn).powi(2) / n as f64;
        grad[view.len() - 1] += e;
        for k in 0..view.k {
            let ck = view.c(p)[k];
            grad[kd + view.k + k] += e * t[k];
            let back = e * ck * (1.0 - t[k] * t[k]);
            grad[kd + k] += back;
            for (i, v) in zn.iter().enumerate() {
                grad[k * view.d + i] += back * v;
            }
        }
    }
    loss
}

struct Rprop {
    delta: Vec<f64>,
    prev: Vec<f64>,
}

impl Rprop {
    fn new(n: usize) -> Self {
        Rprop {
            delta: vec![DELTA_INIT; n],
            prev: vec![0.0; n],
        }
    }

    /// iRprop−: grow the step while the gradient keeps its sign, shrink and
    /// skip one update when it flips.
    fn step(&mut self, params: &mut [f64], grad: &mut [f64]) {
        for i in 0..params.len() {
            let s = grad[i] * self.prev[i];
            if s > 0.0 {
                self.delta[i] = (self.delta[i] * ETA_PLUS).min(DELTA_MAX);
            } else if s < 0.0 {
                self.delta[i] = (self.delta[i] * ETA_MINUS).max(DELTA_MIN);
                grad[i] = 0.0;
            }
            if grad[i] > 0.0 {
                params[i] -= self.delta[i];
            } else if grad[i] < 0.0 {
                params[i] += self.delta[i];
            }
            self.prev[i] = grad[i];
        }
    }
}

fn standardize_stats(rows: &[&Vec<f64>], d: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mut mu = vec![0.0; d];
    for r in rows {
        for (m, v) in mu.iter_mut().zip(r.iter()) {
            *m += v / n;
        }
    }
    let mut sigma = vec![0.0; d];
    for r in rows {
        for (i, v) in r.iter().enumerate() {
            sigma[i] += (v - mu[i]).powi(2) / n;
        }
    }
    for s in sigma.iter_mut() {
        *s = s.sqrt();
        // Constant features standardize to zero instead of blowing up.
        if *s < 1e-12 {
            *s = 1.0;
        }
    }
    (mu, sigma)
}

/// Core fit on an explicit matrix. `x` is row-major (one sample per entry).
pub fn train_on(
    x: &[Vec<f64>],
    y: &[f64],
    features: &[String],
    cfg: &TrainConfig,
    target: &str,
    dataset_sha256: &str,
) -> Result<(VsmModel, TrainReport), ModelError> {
    let n = x.len();
    let d = features.len();
    if n == 0 || y.len() != n || x.iter().any(|r| r.len() != d) {
        return Err(ModelError::Shape(format!(
            "{} samples, {} targets, want {} features",
            n,
            y.len(),
            d
        )));
    }
    if n < 5 {
        return Err(ModelError::Shape(format!("{n} samples is too few")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Shuffled split: validation first, training the rest.
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    let n_val = ((n as f64 * cfg.val_frac).round() as usize).min(n - 2);
    let (val_idx, train_idx) = idx.split_at(n_val);

    let train_rows: Vec<&Vec<f64>> = train_idx.iter().map(|&i| &x[i]).collect();
    let (mu, sigma) = standardize_stats(&train_rows, d);
    let y_train_raw: Vec<f64> = train_idx.iter().map(|&i| y[i]).collect();
    let y_mu = y_train_raw.iter().sum::<f64>() / y_train_raw.len() as f64;
    let y_sd = (y_train_raw
        .iter()
        .map(|v| (v - y_mu).powi(2))
        .sum::<f64>()
        / y_train_raw.len() as f64)
        .sqrt();
    if y_sd < 1e-12 {
        return Err(ModelError::DegenerateTarget);
    }

    let std_rows = |ids: &[usize]| -> Vec<Vec<f64>> {
        ids.iter()
            .map(|&i| {
                x[i].iter()
                    .zip(mu.iter().zip(&sigma))
                    .map(|(v, (m, s))| (v - m) / s)
                    .collect()
            })
            .collect()
    };
    let z_train = std_rows(train_idx);
    let z_val = std_rows(val_idx);
    let yz_train: Vec<f64> = train_idx.iter().map(|&i| (y[i] - y_mu) / y_sd).collect();
    let yz_val: Vec<f64> = val_idx.iter().map(|&i| (y[i] - y_mu) / y_sd).collect();

    // Init: uniform ±1/√fan_in.
    let view = ParamView {
        d,
        k: cfg.hidden,
    };
    let mut params = vec![0.0; view.len()];
    let wb = 1.0 / (d as f64).sqrt();
    for p in params.iter_mut().take(view.k * view.d) {
        *p = rng.gen_range(-wb..wb);
    }
    let cb = 1.0 / (cfg.hidden as f64).sqrt();
    for k in 0..view.k {
        params[view.k * view.d + view.k + k] = rng.gen_range(-cb..cb);
    }

    let mut opt = Rprop::new(view.len());
    let mut grad = vec![0.0; view.len()];
    let mut best = (f64::INFINITY, params.clone(), 0usize);
    let mut loss_trace = Vec::with_capacity(cfg.epochs);

    let val_mse = |p: &[f64]| -> f64 {
        if z_val.is_empty() {
            return f64::NAN;
        }
        z_val
            .iter()
            .zip(&yz_val)
            .map(|(zn, &yn)| {
                let mut y_hat = view.b_out(p);
                for k in 0..view.k {
                    let a: f64 = view.w(p, k).iter().zip(zn).map(|(w, v)| w * v).sum::<f64>()
                        + view.b(p)[k];
                    y_hat += view.c(p)[k] * a.tanh();
                }
                (y_hat - yn).powi(2)
            })
            .sum::<f64>()
            / z_val.len() as f64
    };

    for epoch in 1..=cfg.epochs {
        let loss = loss_grad(&view, &params, &z_train, &yz_train, &mut grad);
        loss_trace.push(loss);
        opt.step(&mut params, &mut grad);
        let score = if z_val.is_empty() { loss } else { val_mse(&params) };
        if score < best.0 {
            best = (score, params.clone(), epoch);
        }
    }
    let (_, best_params, best_epoch) = best;

    // Unpack, folding the target scaling back into c / b_out.
    let mut model = VsmModel {
        features: features.to_vec(),
        mu,
        sigma,
        w: (0..view.k)
            .map(|k| view.w(&best_params, k).to_vec())
            .collect(),
        b: view.b(&best_params).to_vec(),
        c: view
            .c(&best_params)
            .iter()
            .map(|c| c * y_sd)
            .collect(),
        b_out: y_mu + y_sd * view.b_out(&best_params),
        meta: ModelMeta::default(),
    };

    let eval = |ids: &[usize]| -> (Vec<f64>, Vec<f64>) {
        let truth: Vec<f64> = ids.iter().map(|&i| y[i]).collect();
        let pred: Vec<f64> = ids.iter().map(|&i| model.forward(&x[i])).collect();
        (truth, pred)
    };
    let (ty, tp) = eval(train_idx);
    let train_r2 = r2(&ty, &tp)?;
    let (val_r2, val_mae) = if val_idx.is_empty() {
        (train_r2, mae_pct(&ty, &tp)?)
    } else {
        let (vy, vp) = eval(val_idx);
        (r2(&vy, &vp)?, mae_pct(&vy, &vp)?)
    };

    model.meta = ModelMeta {
        target: target.to_string(),
        seed: cfg.seed,
        epochs_run: cfg.epochs,
        best_epoch,
        train_r2,
        val_r2,
        val_mae_pct: val_mae,
        dataset_sha256: dataset_sha256.to_string(),
    };
    let report = TrainReport {
        epochs_run: cfg.epochs,
        best_epoch,
        train_r2,
        val_r2,
        val_mae_pct: val_mae,
        loss_trace,
    };
    Ok((model, report))
}

/// Fit the transmission-side margin expression from a generated dataset.
pub fn train_model(
    ds: &Dataset,
    cfg: &TrainConfig,
    dataset_sha256: &str,
) -> Result<(VsmModel, TrainReport), ModelError> {
    let x: Vec<Vec<f64>> = ds.rows.iter().map(|r| r.x.clone()).collect();
    let y: Vec<f64> = ds.rows.iter().map(|r| r.vsm_mw).collect();
    train_on(&x, &y, &ds.features, cfg, "vsm_mw", dataset_sha256)
}

/// k-fold cross-validation (shuffled contiguous folds), reporting held-fold
/// metrics per fold.
pub fn kfold_cv(
    x: &[Vec<f64>],
    y: &[f64],
    features: &[String],
    cfg: &TrainConfig,
) -> Result<Vec<FoldMetrics>, ModelError> {
    let n = x.len();
    let k = cfg.folds;
    if k < 2 || n < 2 * k {
        return Err(ModelError::Shape(format!(
            "{n} samples cannot support {k} folds"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5DEE_CE66);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    let mut out = Vec::with_capacity(k);
    for f in 0..k {
        let lo = f * n / k;
        let hi = (f + 1) * n / k;
        let test: Vec<usize> = idx[lo..hi].to_vec();
        let train: Vec<usize> = idx[..lo].iter().chain(&idx[hi..]).copied().collect();
        let tx: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
        let ty: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let fold_cfg = TrainConfig {
            seed: cfg.seed.wrapping_add(1 + f as u64),
            ..cfg.clone()
        };
        let (model, _) = train_on(&tx, &ty, features, &fold_cfg, "cv", "")?;
        let truth: Vec<f64> = test.iter().map(|&i| y[i]).collect();
        let pred: Vec<f64> = test.iter().map(|&i| model.forward(&x[i])).collect();
        out.push(FoldMetrics {
            r2: r2(&truth, &pred)?,
            mae_pct: mae_pct(&truth, &pred)?,
            n_test: test.len(),
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Feeder-side model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DxTrainConfig {
    pub samples: usize,
    pub seed: u64,
    pub hidden: usize,
    pub epochs: usize,
}

impl Default for DxTrainConfig {
    fn default() -> Self {
        DxTrainConfig {
            samples: 200,
            seed: 11,
            hidden: 8,
            epochs: 1500,
        }
    }
}

/// Fit a feeder response surface: DER reactive injections (kVAr) → boundary
/// reactive aggregate (MVAr), sampled with the three-phase sweep at nominal
/// interface voltage. Its gradient ranks DERs by electrical effectiveness.
pub fn train_dx_model(
    feeder: &FeederModel,
    link: &BoundaryLink,
    cfg: &DxTrainConfig,
) -> Result<(VsmModel, TrainReport), ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let limits: Vec<(f64, f64)> = feeder
        .ders
        .iter()
        .map(|d| der_q_limits(d.s_rating, d.p_gen))
        .collect();
    let mut x = Vec::with_capacity(cfg.samples);
    let mut y = Vec::with_capacity(cfg.samples);
    for _ in 0..cfg.samples {
        let q: Vec<f64> = limits
            .iter()
            .map(|&(lo, hi)| if hi > lo { rng.gen_range(lo..hi) } else { lo })
            .collect();
        let sol = dxflow::solve_bfs(feeder, (1.0, 0.0), 1.0, &DerDispatch::Balanced(q.clone()), None)?;
        if !sol.converged {
            continue;
        }
        let (_, hq) = sol.head_total();
        let (_, q_mvar) = dxflow::boundary_aggregate(link, f64::NAN, hq);
        x.push(q);
        y.push(q_mvar);
    }
    let features: Vec<String> = feeder
        .ders
        .iter()
        .map(|d| format!("q_n{}", d.node))
        .collect();
    let tc = TrainConfig {
        hidden: cfg.hidden,
        epochs: cfg.epochs,
        seed: cfg.seed,
        val_frac: 0.2,
        folds: 2,
    };
    train_on(&x, &y, &features, &tc, "boundary_q_mvar", "")
}

// ---------------------------------------------------------------------------
// Artifact serialization
// ---------------------------------------------------------------------------

fn fmt_vec(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.16e}")).collect();
    format!("[{}]", items.join(", "))
}

impl VsmModel {
    /// TOML artifact with 17-significant-digit floats: save → load → save is
    /// byte-stable and parameters survive bit-exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("# y = b_out + sum_k c[k] * tanh(w[k] . z + b[k]),  z = (x - mu) / sigma\n");
        s.push_str("[model]\n");
        s.push_str(&format!("target = {:?}\n", self.meta.target));
        s.push_str(&format!("hidden = {}\n", self.hidden()));
        s.push_str(&format!("seed = {}\n", self.meta.seed));
        s.push_str(&format!("epochs_run = {}\n", self.meta.epochs_run));
        s.push_str(&format!("best_epoch = {}\n", self.meta.best_epoch));
        s.push_str(&format!("train_r2 = {:.16e}\n", self.meta.train_r2));
        s.push_str(&format!("val_r2 = {:.16e}\n", self.meta.val_r2));
        s.push_str(&format!("val_mae_pct = {:.16e}\n", self.meta.val_mae_pct));
        s.push_str(&format!(
            "dataset_sha256 = {:?}\n",
            self.meta.dataset_sha256
        ));
        let feats: Vec<String> = self.features.iter().map(|f| format!("{f:?}")).collect();
        s.push_str(&format!("features = [{}]\n", feats.join(", ")));
        s.push_str("\n[params]\n");
        s.push_str(&format!("mu = {}\n", fmt_vec(&self.mu)));
        s.push_str(&format!("sigma = {}\n", fmt_vec(&self.sigma)));
        s.push_str(&format!("b = {}\n", fmt_vec(&self.b)));
        s.push_str(&format!("c = {}\n", fmt_vec(&self.c)));
        s.push_str(&format!("b_out = {:.16e}\n", self.b_out));
        s.push_str("w = [\n");
        for row in &self.w {
            s.push_str(&format!("  {},\n", fmt_vec(row)));
        }
        s.push_str("]\n");
        s
    }

    pub fn from_text(text: &str) -> Result<VsmModel, ModelError> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct RawModel {
            target: String,
            hidden: usize,
            seed: u64,
            epochs_run: usize,
            best_epoch: usize,
            train_r2: f64,
            val_r2: f64,
            val_mae_pct: f64,
            dataset_sha256: String,
            features: Vec<String>,
        }
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct RawParams {
            mu: Vec<f64>,
            sigma: Vec<f64>,
            b: Vec<f64>,
            c: Vec<f64>,
            b_out: f64,
            w: Vec<Vec<f64>>,
        }
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct RawArtifact {
            model: RawModel,
            params: RawParams,
        }
        let raw: RawArtifact =
            toml::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
        let d = raw.model.features.len();
        let k = raw.model.hidden;
        let p = &raw.params;
        if p.mu.len() != d
            || p.sigma.len() != d
            || p.b.len() != k
            || p.c.len() != k
            || p.w.len() != k
            || p.w.iter().any(|r| r.len() != d)
        {
            return Err(ModelError::Parse(format!(
                "parameter shapes disagree with {d} features / {k} hidden"
            )));
        }
        Ok(VsmModel {
            features: raw.model.features,
            mu: raw.params.mu,
            sigma: raw.params.sigma,
            w: raw.params.w,
            b: raw.params.b,
            c: raw.params.c,
            b_out: raw.params.b_out,
            meta: ModelMeta {
                target: raw.model.target,
                seed: raw.model.seed,
                epochs_run: raw.model.epochs_run,
                best_epoch: raw.model.best_epoch,
                train_r2: raw.model.train_r2,
                val_r2: raw.model.val_r2,
                val_mae_pct: raw.model.val_mae_pct,
                dataset_sha256: raw.model.dataset_sha256,
            },
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<VsmModel, ModelError> {
        VsmModel::from_text(&std::fs::read_to_string(path)?)
    }
}
