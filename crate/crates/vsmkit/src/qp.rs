//! Dense convex quadratic programs.
//!
//! [`solve_qp`] is a deterministic dual active-set method for strictly convex
//! problems
//!
//! ```text
//!   minimize ½ xᵀH x + cᵀx   subject to   aᵢᵀx ≤ bᵢ
//! ```
//!
//! It starts at the unconstrained minimum, repeatedly pulls in the most
//! violated constraint, and drops working-set members whose multipliers would
//! go negative; ties break by lowest row index, so runs are bit-reproducible.
//! Every subproblem is a dense factorization — no warm-started updates — which
//! is the right trade at the problem sizes this crate ever builds (tens of
//! variables).
//!
//! [`solve_qp_ref`] is a slow accelerated projected-gradient ascent on the
//! dual, kept as an independently-derived cross-check for tests, and
//! [`check_qp_kkt`] certifies a claimed optimum from the problem data alone.

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

/// Constraint violations below this count as satisfied inside the solver.
pub const QP_FEAS_TOL: f64 = 1e-9;
/// Cap on working-set changes (adds + drops) before giving up.
pub const QP_MAX_ITERS: usize = 10_000;
/// Directional derivatives below this mean the primal step is empty.
const ZERO_DIR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum QpError {
    #[error("row has {got} coefficients, problem has {want} variables")]
    Shape { got: usize, want: usize },
    #[error("hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("no point satisfies all constraints (detected at row {row})")]
    Infeasible { row: usize },
    #[error("no optimum after {0} working-set changes")]
    Stalled(usize),
}

/// One inequality `aᵀx ≤ b`; `ge` rows are stored negated.
#[derive(Debug, Clone)]
pub struct QpRow {
    pub a: Vec<f64>,
    pub b: f64,
}

/// `minimize ½ xᵀH x + cᵀx` over the rows. `h` must be positive definite
/// (it is symmetrized internally, so only one triangle needs filling).
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub n: usize,
    pub h: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    pub rows: Vec<QpRow>,
}

impl QpProblem {
    pub fn new(h: Vec<Vec<f64>>, c: Vec<f64>) -> Result<Self, QpError> {
        let n = c.len();
        if h.len() != n || h.iter().any(|r| r.len() != n) {
            return Err(QpError::Shape { got: h.len(), want: n });
        }
        Ok(Self {
            n,
            h,
            c,
            rows: Vec::new(),
        })
    }

    /// Pure weighted-least-effort objective `Σ wᵢ xᵢ²`: `H = 2·diag(w)`,
    /// `c = 0`. Callers must keep every weight strictly positive.
    pub fn diag_weights(w: &[f64]) -> Self {
        let n = w.len();
        let mut h = vec![vec![0.0; n]; n];
        for (i, wi) in w.iter().enumerate() {
            h[i][i] = 2.0 * wi;
        }
        Self {
            n,
            h,
            c: vec![0.0; n],
            rows: Vec::new(),
        }
    }

    pub fn le(&mut self, a: Vec<f64>, b: f64) -> Result<(), QpError> {
        if a.len() != self.n {
            return Err(QpError::Shape {
                got: a.len(),
                want: self.n,
            });
        }
        self.rows.push(QpRow { a, b });
        Ok(())
    }

    /// `aᵀx ≥ b`, stored as `(−a)ᵀx ≤ −b`.
    pub fn ge(&mut self, a: Vec<f64>, b: f64) -> Result<(), QpError> {
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        self.le(neg, -b)
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut quad = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                quad += 0.5 * self.sym(i, j) * x[i] * x[j];
            }
        }
        quad + self.c.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    fn sym(&self, i: usize, j: usize) -> f64 {
        0.5 * (self.h[i][j] + self.h[j][i])
    }

    fn sym_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.sym(i, j))
    }
}

/// Optimal point with its multipliers (`dual[i] ≥ 0` for row `i`, zero off
/// the active set) and the final working set, sorted ascending.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub dual: Vec<f64>,
    pub active: Vec<usize>,
    pub iterations: usize,
}

fn row_dot(a: &[f64], x: &DVector<f64>) -> f64 {
    a.iter().zip(x.iter()).map(|(p, q)| p * q).sum()
}

pub fn solve_qp(p: &QpProblem) -> Result<QpSolution, QpError> {
    let n = p.n;
    let h = p.sym_matrix();
    let chol = Cholesky::new(h).ok_or(QpError::NotPositiveDefinite)?;
    let c = DVector::from_column_slice(&p.c);
    let mut x = chol.solve(&(-&c));

    // Working set, its multipliers, and the change count.
    let mut active: Vec<usize> = Vec::new();
    let mut lam: Vec<f64> = Vec::new();
    let mut iterations = 0usize;

    loop {
        // Most violated inactive row; lowest index wins ties.
        let mut pick = None;
        let mut worst = QP_FEAS_TOL;
        for (i, row) in p.rows.iter().enumerate() {
            if active.contains(&i) {
                continue;
            }
            let v = row_dot(&row.a, &x) - row.b;
            if v > worst {
                worst = v;
                pick = Some(i);
            }
        }
        let Some(pi) = pick else {
            break;
        };

        // Incoming normal in ≥ orientation, so multipliers stay nonnegative.
        let nplus = DVector::from_iterator(n, p.rows[pi].a.iter().map(|v| -*v));
        let mut u_in = 0.0f64;
        loop {
            iterations += 1;
            if iterations > QP_MAX_ITERS {
                return Err(QpError::Stalled(QP_MAX_ITERS));
            }
            let hin = chol.solve(&nplus);
            // Primal direction z (moves toward satisfying row pi without
            // leaving the active constraints) and dual rates r.
            let (z, r) = if active.is_empty() {
                (hin.clone(), DVector::zeros(0))
            } else {
                let k = active.len();
                let nmat = DMatrix::from_fn(n, k, |ri, ci| -p.rows[active[ci]].a[ri]);
                let hinv_n = chol.solve(&nmat);
                let gram = nmat.transpose() * &hinv_n;
                let rhs = nmat.transpose() * &hin;
                let r = gram
                    .lu()
                    .solve(&rhs)
                    .ok_or(QpError::Stalled(iterations))?;
                let z = &hin - &hinv_n * &r;
                (z, r)
            };

            let ztn = z.dot(&nplus);
            let has_dir = ztn > ZERO_DIR;
            // Slack of the incoming row: negative while still violated.
            let s_in = p.rows[pi].b - row_dot(&p.rows[pi].a, &x);
            let t_full = if has_dir { -s_in / ztn } else { f64::INFINITY };

            // First multiplier driven to zero limits the step.
            let mut t_block = f64::INFINITY;
            let mut blocker = None;
            for (k, rk) in r.iter().enumerate() {
                if *rk > ZERO_DIR {
                    let ratio = lam[k] / rk;
                    if ratio < t_block {
                        t_block = ratio;
                        blocker = Some(k);
                    }
                }
            }

            let t = t_block.min(t_full);
            if !t.is_finite() {
                return Err(QpError::Infeasible { row: pi });
            }
            if has_dir {
                x.axpy(t, &z, 1.0);
            }
            for (k, rk) in r.iter().enumerate() {
                lam[k] -= t * rk;
            }
            u_in += t;

            if has_dir && t_full <= t_block {
                active.push(pi);
                lam.push(u_in);
                break;
            }
            // Partial or pure dual step: retire the blocker, keep courting pi.
            let kb = blocker.expect("finite blocking step implies a blocker");
            active.remove(kb);
            lam.remove(kb);
        }
    }

    let mut dual = vec![0.0; p.rows.len()];
    for (k, &i) in active.iter().enumerate() {
        dual[i] = lam[k].max(0.0);
    }
    let xv: Vec<f64> = x.iter().copied().collect();
    let objective = p.objective(&xv);
    active.sort_unstable();
    Ok(QpSolution {
        x: xv,
        objective,
        dual,
        active,
        iterations,
    })
}

/// Reference solver: accelerated projected-gradient ascent on the dual
/// `g(λ) = min_x L(x, λ)`, with `x(λ) = −H⁻¹(c + Aᵀλ)` closed-form.
///
/// Orders of magnitude slower than [`solve_qp`] and kept only as an
/// independently-derived oracle; it assumes the problem is feasible and
/// errors with [`QpError::Stalled`] if the projected-gradient residual has
/// not dropped below `tol` within `max_iters` sweeps.
pub fn solve_qp_ref(p: &QpProblem, max_iters: usize, tol: f64) -> Result<QpSolution, QpError> {
    let n = p.n;
    let h = p.sym_matrix();
    let chol = Cholesky::new(h).ok_or(QpError::NotPositiveDefinite)?;
    let c = DVector::from_column_slice(&p.c);
    let x0 = chol.solve(&(-&c));
    let m = p.rows.len();
    if m == 0 {
        let xv: Vec<f64> = x0.iter().copied().collect();
        let objective = p.objective(&xv);
        return Ok(QpSolution {
            x: xv,
            objective,
            dual: Vec::new(),
            active: Vec::new(),
            iterations: 0,
        });
    }

    let a = DMatrix::from_fn(m, n, |i, j| p.rows[i].a[j]);
    let b = DVector::from_fn(m, |i, _| p.rows[i].b);
    let hinv_at = chol.solve(&a.transpose());
    let kmat = &a * &hinv_at; // A H⁻¹ Aᵀ, PSD
    let g0 = &a * &x0 - &b; // ∇g(0)

    // 1/L step from the ∞-norm bound on the curvature matrix.
    let l_bound = kmat
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0f64, f64::max);
    let step = 1.0 / l_bound.max(1e-12);

    let grad = |lam: &DVector<f64>| -> DVector<f64> { &g0 - &kmat * lam };
    let project = |v: DVector<f64>| -> DVector<f64> { v.map(|e| e.max(0.0)) };

    let mut lam = DVector::zeros(m);
    let mut lam_prev = lam.clone();
    let mut tk = 1.0f64;
    let mut done = None;
    for it in 0..max_iters {
        let tk1 = 0.5 * (1.0 + (1.0 + 4.0 * tk * tk).sqrt());
        let beta = (tk - 1.0) / tk1;
        let y = &lam + (&lam - &lam_prev) * beta;
        let next = project(&y + grad(&y) * step);
        // Gradient restart keeps the momentum from overshooting the cone.
        if grad(&lam).dot(&(&next - &lam)) < 0.0 {
            tk = 1.0;
        } else {
            tk = tk1;
        }
        lam_prev = std::mem::replace(&mut lam, next);
        if it % 16 == 0 {
            let fixed = project(&lam + grad(&lam) * step);
            let res = (&fixed - &lam).amax() / step;
            if res <= tol {
                done = Some(it + 1);
                break;
            }
        }
    }
    let Some(iterations) = done else {
        return Err(QpError::Stalled(max_iters));
    };

    let x = &x0 - &hinv_at * &lam;
    let xv: Vec<f64> = x.iter().copied().collect();
    let objective = p.objective(&xv);
    let dual: Vec<f64> = lam.iter().copied().collect();
    let active: Vec<usize> = (0..m).filter(|&i| dual[i] > 1e-8).collect();
    Ok(QpSolution {
        x: xv,
        objective,
        dual,
        active,
        iterations,
    })
}

/// KKT residuals of a claimed optimum, from problem data only.
#[derive(Debug, Clone)]
pub struct QpKktReport {
    /// `‖Hx + c + Aᵀλ‖∞`, scaled by the gradient's own magnitude.
    pub stationarity_residual: f64,
    /// Worst constraint violation `max(0, aᵢᵀx − bᵢ)`.
    pub primal_residual: f64,
    /// Most negative multiplier (0 when none).
    pub dual_sign_residual: f64,
    /// Worst product `|λᵢ · (bᵢ − aᵢᵀx)|`, scaled by the larger factor.
    pub complementarity_residual: f64,
}

impl QpKktReport {
    pub fn passes(&self, feas_tol: f64, stat_tol: f64) -> bool {
        self.primal_residual <= feas_tol
            && self.dual_sign_residual <= feas_tol
            && self.complementarity_residual <= feas_tol
            && self.stationarity_residual <= stat_tol
    }
}

/// Check a claimed optimum against the KKT conditions using only the problem
/// data — never the solver's internal state — so it serves as an independent
/// certificate.
pub fn check_qp_kkt(p: &QpProblem, s: &QpSolution) -> QpKktReport {
    let n = p.n;
    let mut grad = vec![0.0; n];
    let mut scale = 1.0f64;
    for i in 0..n {
        let hx: f64 = (0..n).map(|j| p.sym(i, j) * s.x[j]).sum();
        grad[i] = hx + p.c[i];
        scale = scale.max(hx.abs()).max(p.c[i].abs());
    }
    let mut primal = 0.0f64;
    let mut dual_sign = 0.0f64;
    let mut comp = 0.0f64;
    for (row, &l) in p.rows.iter().zip(&s.dual) {
        let ax: f64 = row.a.iter().zip(&s.x).map(|(a, v)| a * v).sum();
        primal = primal.max(ax - row.b);
        dual_sign = dual_sign.max(-l);
        let slack = row.b - ax;
        comp = comp.max((l * slack).abs() / l.abs().max(slack.abs()).max(1.0));
        for (g, a) in grad.iter_mut().zip(&row.a) {
            *g += l * a;
        }
    }
    let stationarity = grad.iter().fold(0.0f64, |m, g| m.max(g.abs())) / scale;
    QpKktReport {
        stationarity_residual: stationarity,
        primal_residual: primal.max(0.0),
        dual_sign_residual: dual_sign.max(0.0),
        complementarity_residual: comp,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng as _, SeedableRng as _};
    use rand_chacha::ChaCha8Rng;

    /// Exact oracle: enumerate every candidate active set of size ≤ n, solve
    /// the equality-constrained KKT system, keep candidates that are primal
    /// feasible with nonnegative multipliers, return the best objective.
    fn enumerate_qp(p: &QpProblem) -> Option<(Vec<f64>, f64)> {
        let n = p.n;
        let m = p.rows.len();
        let mut best: Option<(Vec<f64>, f64)> = None;
        for mask in 0u32..(1 << m) {
            let set: Vec<usize> = (0..m).filter(|i| mask >> i & 1 == 1).collect();
            if set.len() > n {
                continue;
            }
            let k = set.len();
            let dim = n + k;
            let mut kkt = DMatrix::zeros(dim, dim);
            let mut rhs = DVector::zeros(dim);
            for i in 0..n {
                for j in 0..n {
                    kkt[(i, j)] = p.sym(i, j);
                }
                rhs[i] = -p.c[i];
            }
            for (s, &ri) in set.iter().enumerate() {
                for j in 0..n {
                    kkt[(j, n + s)] = p.rows[ri].a[j];
                    kkt[(n + s, j)] = p.rows[ri].a[j];
                }
                rhs[n + s] = p.rows[ri].b;
            }
            let Some(sol) = kkt.lu().solve(&rhs) else {
                continue;
            };
            let x: Vec<f64> = sol.iter().take(n).copied().collect();
            if (0..k).any(|s| sol[n + s] < -1e-9) {
                continue;
            }
            let feasible = p
                .rows
                .iter()
                .all(|r| r.a.iter().zip(&x).map(|(a, v)| a * v).sum::<f64>() <= r.b + 1e-7);
            if !feasible {
                continue;
            }
            let obj = p.objective(&x);
            if best.as_ref().is_none_or(|(_, b)| obj < *b) {
                best = Some((x, obj));
            }
        }
        best
    }

    /// Random strictly convex instance that is feasible by construction: an
    /// anchor point gets nonnegative slack in every generated row.
    fn random_instance(rng: &mut ChaCha8Rng, n: usize, m: usize) -> (QpProblem, Vec<f64>) {
        let mut mat = vec![vec![0.0; n]; n];
        for r in mat.iter_mut() {
            for v in r.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        let mut h = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                h[i][j] = (0..n).map(|k| mat[k][i] * mat[k][j]).sum::<f64>();
            }
            h[i][i] += 1.0;
        }
        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let anchor: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut p = QpProblem::new(h, c).unwrap();
        for _ in 0..m {
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let slack = rng.gen_range(0.0..2.0);
            let b = a.iter().zip(&anchor).map(|(ai, xi)| ai * xi).sum::<f64>() + slack;
            p.le(a, b).unwrap();
        }
        (p, anchor)
    }

    #[test]
    fn unconstrained_minimum_is_neg_hinv_c() {
        let p = QpProblem::new(vec![vec![2.0, 0.0], vec![0.0, 4.0]], vec![-2.0, -8.0]).unwrap();
        let s = solve_qp(&p).unwrap();
        assert_relative_eq!(s.x[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.x[1], 2.0, epsilon = 1e-12);
        assert_relative_eq!(s.objective, -9.0, epsilon = 1e-12);
        assert_eq!(s.iterations, 0);
        assert!(s.active.is_empty());
    }

    #[test]
    fn textbook_corner_instance() {
        // min (x1−1)² + (x2−2.5)²; the first row −x1+2x2 ≤ 2 is active at the
        // optimum (1.4, 1.7) with multiplier 0.8; quad-form objective −6.45.
        let mut p =
            QpProblem::new(vec![vec![2.0, 0.0], vec![0.0, 2.0]], vec![-2.0, -5.0]).unwrap();
        p.le(vec![-1.0, 2.0], 2.0).unwrap();
        p.le(vec![1.0, 2.0], 6.0).unwrap();
        p.le(vec![1.0, -2.0], 2.0).unwrap();
        p.le(vec![-1.0, 0.0], 0.0).unwrap();
        p.le(vec![0.0, -1.0], 0.0).unwrap();
        let s = solve_qp(&p).unwrap();
        assert_relative_eq!(s.x[0], 1.4, epsilon = 1e-9);
        assert_relative_eq!(s.x[1], 1.7, epsilon = 1e-9);
        assert_relative_eq!(s.objective, -6.45, epsilon = 1e-9);
        assert_eq!(s.active, vec![0]);
        assert_relative_eq!(s.dual[0], 0.8, epsilon = 1e-9);
        assert!(s.dual[1..].iter().all(|l| *l == 0.0));
    }

    #[test]
    fn nondiagonal_fixed_instance() {
        // Exact solution from the equality KKT system of the active row Σx ≤ 3:
        // x = (131/71, −2/71, 84/71), λ = 46/71, objective −716/71.
        let mut p = QpProblem::new(
            vec![
                vec![4.0, 1.0, 0.0],
                vec![1.0, 3.0, 0.5],
                vec![0.0, 0.5, 2.0],
            ],
            vec![-8.0, -3.0, -3.0],
        )
        .unwrap();
        p.le(vec![1.0, 1.0, 1.0], 3.0).unwrap();
        p.le(vec![1.0, 0.0, 0.0], 2.0).unwrap();
        p.ge(vec![0.0, 1.0, 0.0], -1.0).unwrap();
        p.le(vec![-1.0, 2.0, -1.0], 1.0).unwrap();
        let s = solve_qp(&p).unwrap();
        assert_relative_eq!(s.x[0], 131.0 / 71.0, epsilon = 1e-9);
        assert_relative_eq!(s.x[1], -2.0 / 71.0, epsilon = 1e-9);
        assert_relative_eq!(s.x[2], 84.0 / 71.0, epsilon = 1e-9);
        assert_relative_eq!(s.objective, -716.0 / 71.0, epsilon = 1e-9);
        assert_eq!(s.active, vec![0]);
        assert_relative_eq!(s.dual[0], 46.0 / 71.0, epsilon = 1e-9);
    }

    #[test]
    fn single_control_closed_form() {
        // min w·x² s.t. s·x ≥ g with room to spare → x = g/s, row active.
        let (w, sens, gap) = (0.7, 2.0, 3.0);
        let mut p = QpProblem::diag_weights(&[w]);
        p.ge(vec![sens], gap).unwrap();
        let s = solve_qp(&p).unwrap();
        assert_relative_eq!(s.x[0], gap / sens, epsilon = 1e-12);
        assert_relative_eq!(s.objective, w * (gap / sens).powi(2), epsilon = 1e-12);
        assert_eq!(s.active, vec![0]);
        // Stationarity 2wx = λ·s fixes the multiplier.
        assert_relative_eq!(s.dual[0], 2.0 * w * (gap / sens) / sens, epsilon = 1e-12);
    }

    #[test]
    fn feasible_origin_stays_put() {
        let mut p = QpProblem::diag_weights(&[1.0, 0.5, 2.0]);
        p.le(vec![1.0, 1.0, 1.0], 4.0).unwrap();
        p.ge(vec![1.0, -1.0, 0.0], -3.0).unwrap();
        let s = solve_qp(&p).unwrap();
        assert!(s.x.iter().all(|v| v.abs() < 1e-12));
        assert_eq!(s.objective, 0.0);
        assert_eq!(s.iterations, 0);
        assert!(s.dual.iter().all(|l| *l == 0.0));
    }

    #[test]
    fn contradictory_rows_are_infeasible() {
        let mut p = QpProblem::diag_weights(&[1.0]);
        p.le(vec![1.0], -1.0).unwrap();
        p.ge(vec![1.0], 1.0).unwrap();
        assert!(matches!(solve_qp(&p), Err(QpError::Infeasible { .. })));
    }

    #[test]
    fn indefinite_hessian_is_rejected() {
        let p = QpProblem::new(vec![vec![0.0]], vec![1.0]).unwrap();
        assert!(matches!(solve_qp(&p), Err(QpError::NotPositiveDefinite)));
    }

    #[test]
    fn enumeration_oracle_agrees_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        for trial in 0..200 {
            let n = rng.gen_range(2..=4);
            let m = rng.gen_range(1..=7);
            let (p, _) = random_instance(&mut rng, n, m);
            let s = solve_qp(&p).unwrap();
            let (ox, oobj) = enumerate_qp(&p).expect("feasible by construction");
            let scale = oobj.abs().max(1.0);
            assert!(
                (s.objective - oobj).abs() <= 1e-8 * scale,
                "trial {trial}: solver {} vs enumeration {oobj}",
                s.objective
            );
            for (sv, ov) in s.x.iter().zip(&ox) {
                assert!((sv - ov).abs() <= 1e-6, "trial {trial}: {sv} vs {ov}");
            }
        }
    }

    #[test]
    fn reference_solver_matches_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..20 {
            let n = rng.gen_range(2..=5);
            let m = rng.gen_range(1..=8);
            let (p, _) = random_instance(&mut rng, n, m);
            let fast = solve_qp(&p).unwrap();
            let slow = solve_qp_ref(&p, 500_000, 1e-10).unwrap();
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
    fn kkt_checker_certifies_and_rejects() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (p, _) = random_instance(&mut rng, 3, 5);
        let mut s = solve_qp(&p).unwrap();
        let rep = check_qp_kkt(&p, &s);
        assert!(rep.passes(1e-6, 1e-5), "{rep:?}");
        // A nudged primal point must fail stationarity or complementarity.
        s.x[0] += 1e-2;
        let bad = check_qp_kkt(&p, &s);
        assert!(!bad.passes(1e-6, 1e-5));
    }

    #[test]
    fn repeated_solves_are_bitwise_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (p, _) = random_instance(&mut rng, 4, 6);
        let a = solve_qp(&p).unwrap();
        let b = solve_qp(&p).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.dual, b.dual);
        assert_eq!(a.iterations, b.iterations);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]
        #[test]
        fn optimum_beats_the_anchor(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(1..=4);
            let m = rng.gen_range(0..=6);
            let (p, anchor) = random_instance(&mut rng, n, m);
            let s = solve_qp(&p).unwrap();
            let at_anchor = p.objective(&anchor);
            prop_assert!(s.objective <= at_anchor + 1e-9 * at_anchor.abs().max(1.0));
            let rep = check_qp_kkt(&p, &s);
            prop_assert!(rep.passes(1e-6, 1e-5), "{rep:?}");
        }
    }
}
