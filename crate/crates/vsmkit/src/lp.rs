//! Dense two-phase simplex for small linear programs.
//!
//! Problems are stated as `min cᵀx` over `x ≥ 0` with mixed `≤ / = / ≥` rows;
//! callers with general bounds shift variables into this form. Bland's rule
//! makes the pivot sequence cycle-free and deterministic, which matters more
//! than speed at the sizes used here (tens of variables).
//!
//! [`check_lp_kkt`] verifies a solution against the problem data alone —
//! primal feasibility, dual feasibility, and complementary slackness — so a
//! claimed optimum can be audited without trusting the solver internals.

use thiserror::Error;

/// Entries smaller than this are treated as zero during pivoting.
pub const LP_PIVOT_TOL: f64 = 1e-9;
/// Phase-1 artificial residual above this means the problem is infeasible.
pub const LP_FEAS_TOL: f64 = 1e-7;
/// Iteration cap; Bland's rule cannot cycle, so hitting this is a bug signal.
const LP_MAX_PIVOTS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rel {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
pub struct LpRow {
    pub a: Vec<f64>,
    pub rel: Rel,
    pub b: f64,
}

/// `min cost·x` subject to the collected rows and `x ≥ 0`.
#[derive(Debug, Clone, Default)]
pub struct LpProblem {
    pub n: usize,
    pub cost: Vec<f64>,
    pub rows: Vec<LpRow>,
}

impl LpProblem {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            cost: vec![0.0; n],
            rows: Vec::new(),
        }
    }

    pub fn with_cost(cost: Vec<f64>) -> Self {
        Self {
            n: cost.len(),
            cost,
            rows: Vec::new(),
        }
    }

    fn push(&mut self, a: Vec<f64>, rel: Rel, b: f64) -> Result<(), LpError> {
        if a.len() != self.n {
            return Err(LpError::Shape {
                got: a.len(),
                want: self.n,
            });
        }
        self.rows.push(LpRow { a, rel, b });
        Ok(())
    }

    pub fn le(&mut self, a: Vec<f64>, b: f64) -> Result<(), LpError> {
        self.push(a, Rel::Le, b)
    }

    pub fn eq(&mut self, a: Vec<f64>, b: f64) -> Result<(), LpError> {
        self.push(a, Rel::Eq, b)
    }

    pub fn ge(&mut self, a: Vec<f64>, b: f64) -> Result<(), LpError> {
        self.push(a, Rel::Ge, b)
    }

    /// Human-readable dump in an LP-file-like layout, for debugging.
    pub fn to_debug_string(&self) -> String {
        use std::fmt::Write as _;
        let term = |a: &[f64]| {
            let mut s = String::new();
            let mut first = true;
            for (j, &v) in a.iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                if first {
                    let _ = write!(s, "{v} x{j}");
                    first = false;
                } else if v < 0.0 {
                    let _ = write!(s, " - {} x{j}", -v);
                } else {
                    let _ = write!(s, " + {v} x{j}");
                }
            }
            if first {
                s.push('0');
            }
            s
        };
        let mut out = format!("min {}\ns.t.\n", term(&self.cost));
        for (i, r) in self.rows.iter().enumerate() {
            let rel = match r.rel {
                Rel::Le => "<=",
                Rel::Eq => "=",
                Rel::Ge => ">=",
            };
            let _ = writeln!(out, "  r{i}: {} {rel} {}", term(&r.a), r.b);
        }
        out.push_str("  x >= 0\n");
        out
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// One multiplier per input row, in the row's original orientation.
    pub dual: Vec<f64>,
    pub iterations: usize,
    /// Basic column indices of the internal standard-form system.
    pub basis: Vec<usize>,
}

#[derive(Debug, Error)]
pub enum LpError {
    #[error("row has {got} coefficients, problem has {want} variables")]
    Shape { got: usize, want: usize },
    #[error("infeasible (phase-1 residual {residual:.3e})")]
    Infeasible { residual: f64 },
    #[error("objective unbounded below along column {col}")]
    Unbounded { col: usize },
    #[error("pivot limit {0} exceeded")]
    Stalled(usize),
}

struct Tableau {
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    cost: Vec<f64>,
    cost_rhs: f64,
    basis: Vec<usize>,
    banned: Vec<bool>,
}

impl Tableau {
    fn pivot(&mut self, r: usize, j: usize) {
        let p = self.a[r][j];
        for v in self.a[r].iter_mut() {
            *v /= p;
        }
        self.b[r] /= p;
        let prow = self.a[r].clone();
        let pb = self.b[r];
        for r2 in 0..self.a.len() {
            if r2 == r {
                continue;
            }
            let f = self.a[r2][j];
            if f != 0.0 {
                for (v, pv) in self.a[r2].iter_mut().zip(&prow) {
                    *v -= f * pv;
                }
                self.b[r2] -= f * pb;
            }
        }
        let f = self.cost[j];
        if f != 0.0 {
            for (v, pv) in self.cost.iter_mut().zip(&prow) {
                *v -= f * pv;
            }
            self.cost_rhs -= f * pb;
        }
        self.basis[r] = j;
    }

    /// Rebuild the reduced-cost row for a fresh objective over the current basis.
    fn set_objective(&mut self, cost: Vec<f64>) {
        self.cost = cost;
        self.cost_rhs = 0.0;
        for r in 0..self.a.len() {
            let f = self.cost[self.basis[r]];
            if f != 0.0 {
                let row = self.a[r].clone();
                let rb = self.b[r];
                for (v, pv) in self.cost.iter_mut().zip(&row) {
                    *v -= f * pv;
                }
                self.cost_rhs -= f * rb;
            }
        }
    }

    /// Bland's rule iteration to optimality. Returns pivot count.
    fn run(&mut self) -> Result<usize, LpError> {
        let m = self.a.len();
        let ncols = self.cost.len();
        let mut iters = 0;
        loop {
            let Some(j) = (0..ncols).find(|&j| !self.banned[j] && self.cost[j] < -LP_PIVOT_TOL)
            else {
                return Ok(iters);
            };
            let mut best: Option<(usize, f64)> = None;
            for r in 0..m {
                if self.a[r][j] > LP_PIVOT_TOL {
                    let ratio = self.b[r] / self.a[r][j];
                    best = match best {
                        None => Some((r, ratio)),
                        Some((br, bratio)) => {
                            if ratio < bratio - 1e-12
                                || ((ratio - bratio).abs() <= 1e-12
                                    && self.basis[r] < self.basis[br])
                            {
                                Some((r, ratio))
                            } else {
                                Some((br, bratio))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = best else {
                return Err(LpError::Unbounded { col: j });
            };
            self.pivot(r, j);
            iters += 1;
            if iters > LP_MAX_PIVOTS {
                return Err(LpError::Stalled(LP_MAX_PIVOTS));
            }
        }
    }
}

/// Two-phase primal simplex with Bland's rule.
pub fn solve_lp(p: &LpProblem) -> Result<LpSolution, LpError> {
    let n = p.n;
    let m = p.rows.len();
    for r in &p.rows {
        if r.a.len() != n {
            return Err(LpError::Shape {
                got: r.a.len(),
                want: n,
            });
        }
    }

    // Normalize to b >= 0, remembering flipped rows for dual reporting.
    let mut rows: Vec<LpRow> = p.rows.clone();
    let mut flipped = vec![false; m];
    for (i, r) in rows.iter_mut().enumerate() {
        if r.b < 0.0 {
            for v in r.a.iter_mut() {
                *v = -*v;
            }
            r.b = -r.b;
            r.rel = match r.rel {
                Rel::Le => Rel::Ge,
                Rel::Ge => Rel::Le,
                Rel::Eq => Rel::Eq,
            };
            flipped[i] = true;
        }
    }

    // Column layout: structural, then one slack/surplus per inequality row,
    // then one artificial per Ge/Eq row.
    let mut aux_col = vec![usize::MAX; m];
    let mut ncols = n;
    for (i, r) in rows.iter().enumerate() {
        if r.rel != Rel::Eq {
            aux_col[i] = ncols;
            ncols += 1;
        }
    }
    let mut art_col = vec![usize::MAX; m];
    for (i, r) in rows.iter().enumerate() {
        if r.rel != Rel::Le {
            art_col[i] = ncols;
            ncols += 1;
        }
    }

    let mut t = Tableau {
        a: vec![vec![0.0; ncols]; m],
        b: vec![0.0; m],
        cost: vec![0.0; ncols],
        cost_rhs: 0.0,
        basis: vec![0; m],
        banned: vec![false; ncols],
    };
    for (i, r) in rows.iter().enumerate() {
        t.a[i][..n].copy_from_slice(&r.a);
        t.b[i] = r.b;
        match r.rel {
            Rel::Le => {
                t.a[i][aux_col[i]] = 1.0;
                t.basis[i] = aux_col[i];
            }
            Rel::Ge => {
                t.a[i][aux_col[i]] = -1.0;
                t.a[i][art_col[i]] = 1.0;
                t.basis[i] = art_col[i];
            }
            Rel::Eq => {
                t.a[i][art_col[i]] = 1.0;
                t.basis[i] = art_col[i];
            }
        }
    }

    // Phase 1: minimize the artificial total.
    let mut iterations = 0;
    let any_art = art_col.iter().any(|&c| c != usize::MAX);
    if any_art {
        let mut c1 = vec![0.0; ncols];
        for &c in &art_col {
            if c != usize::MAX {
                c1[c] = 1.0;
            }
        }
        t.set_objective(c1);
        iterations += t.run()?;
        let residual = -t.cost_rhs;
        if residual > LP_FEAS_TOL {
            return Err(LpError::Infeasible { residual });
        }
        // Ban artificials; pivot any still-basic ones out where possible. A
        // row with no eligible entry is redundant and its artificial stays
        // frozen at zero, which is harmless.
        for &c in &art_col {
            if c != usize::MAX {
                t.banned[c] = true;
            }
        }
        for r in 0..m {
            if art_col.contains(&t.basis[r]) {
                if let Some(j) = (0..ncols)
                    .find(|&j| !t.banned[j] && t.a[r][j].abs() > LP_PIVOT_TOL)
                {
                    t.pivot(r, j);
                    iterations += 1;
                }
            }
        }
    }

    // Phase 2: the real objective.
    let mut c2 = vec![0.0; ncols];
    c2[..n].copy_from_slice(&p.cost);
    t.set_objective(c2);
    iterations += t.run()?;

    let mut x = vec![0.0; n];
    for (r, &col) in t.basis.iter().enumerate() {
        if col < n {
            x[col] = t.b[r];
        }
    }
    let objective = p.cost.iter().zip(&x).map(|(c, v)| c * v).sum();

    // Duals from the final reduced-cost row: a unit column e_i with phase-2
    // cost 0 has reduced cost −y_i (slack, artificial) or +y_i (surplus).
    let mut dual = vec![0.0; m];
    for i in 0..m {
        let y = match rows[i].rel {
            Rel::Le => -t.cost[aux_col[i]],
            Rel::Ge => t.cost[aux_col[i]],
            Rel::Eq => -t.cost[art_col[i]],
        };
        dual[i] = if flipped[i] { -y } else { y };
    }

    Ok(LpSolution {
        x,
        objective,
        dual,
        iterations,
        basis: t.basis,
    })
}

/// Optimality audit from problem data alone.
#[derive(Debug, Clone)]
pub struct LpKktReport {
    /// Worst violation of a row constraint by `x`.
    pub primal_residual: f64,
    /// Most negative entry of `x` (0 when none).
    pub nonneg_residual: f64,
    /// Most negative reduced cost `c_j − yᵀa_j` (dual feasibility).
    pub stationarity_residual: f64,
    /// Worst dual sign violation (`y ≤ 0` on ≤-rows, `y ≥ 0` on ≥-rows).
    pub dual_sign_residual: f64,
    /// Worst complementary-slackness product.
    pub complementarity_residual: f64,
    /// |cᵀx − yᵀb| (strong duality).
    pub duality_gap: f64,
}

impl LpKktReport {
    pub fn passes(&self, feas_tol: f64, stat_tol: f64) -> bool {
        self.primal_residual <= feas_tol
            && self.nonneg_residual <= feas_tol
            && self.stationarity_residual <= stat_tol
            && self.dual_sign_residual <= stat_tol
            && self.complementarity_residual <= stat_tol
            && self.duality_gap <= stat_tol
    }
}

/// Check a claimed optimum `(x, y)` of `p` against the KKT conditions.
///
/// Uses only the problem data — never the solver's tableau — so it serves as
/// an independent certificate. Products in the complementarity check are
/// scaled by the larger factor to keep the test meaningful for large entries.
pub fn check_lp_kkt(p: &LpProblem, s: &LpSolution) -> LpKktReport {
    let m = p.rows.len();
    let mut primal: f64 = 0.0;
    let mut comp: f64 = 0.0;
    let mut dual_sign: f64 = 0.0;
    let mut ytb = 0.0;
    for i in 0..m {
        let r = &p.rows[i];
        let ax: f64 = r.a.iter().zip(&s.x).map(|(a, v)| a * v).sum();
        let slack = match r.rel {
            Rel::Le => r.b - ax,
            Rel::Ge => ax - r.b,
            Rel::Eq => -(ax - r.b).abs(),
        };
        primal = primal.max(-slack);
        let y = s.dual[i];
        match r.rel {
            Rel::Le => dual_sign = dual_sign.max(y),
            Rel::Ge => dual_sign = dual_sign.max(-y),
            Rel::Eq => {}
        }
        comp = comp.max((y * slack).abs() / slack.abs().max(y.abs()).max(1.0));
        ytb += y * r.b;
    }
    let mut nonneg: f64 = 0.0;
    for &v in &s.x {
        nonneg = nonneg.max(-v);
    }
    let mut stat: f64 = 0.0;
    for j in 0..p.n {
        let rc = p.cost[j]
            - (0..m).map(|i| s.dual[i] * p.rows[i].a[j]).sum::<f64>();
        stat = stat.max(-rc);
        comp = comp.max((rc * s.x[j]).abs() / rc.abs().max(s.x[j].abs()).max(1.0));
    }
    let ctx: f64 = p.cost.iter().zip(&s.x).map(|(c, v)| c * v).sum();
    let scale = ctx.abs().max(ytb.abs()).max(1.0);
    LpKktReport {
        primal_residual: primal,
        nonneg_residual: nonneg,
        stationarity_residual: stat,
        dual_sign_residual: dual_sign,
        complementarity_residual: comp,
        duality_gap: (ctx - ytb).abs() / scale,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng as _, SeedableRng as _};
    use rand_chacha::ChaCha8Rng;

    fn assert_kkt(p: &LpProblem, s: &LpSolution) {
        let rep = check_lp_kkt(p, s);
        assert!(
            rep.passes(1e-6, 1e-5),
            "kkt failed: {rep:?}\n{}",
            p.to_debug_string()
        );
    }

    #[test]
    fn two_variable_corner_by_hand() {
        // min −x −2y inside {x+y ≤ 4, x ≤ 2, y ≤ 3}: optimum (1,3), value −7.
        let mut p = LpProblem::with_cost(vec![-1.0, -2.0]);
        p.le(vec![1.0, 1.0], 4.0).unwrap();
        p.le(vec![1.0, 0.0], 2.0).unwrap();
        p.le(vec![0.0, 1.0], 3.0).unwrap();
        let s = solve_lp(&p).unwrap();
        assert_relative_eq!(s.objective, -7.0, epsilon = 1e-9);
        assert_relative_eq!(s.x[0], 1.0, epsilon = 1e-9);
        assert_relative_eq!(s.x[1], 3.0, epsilon = 1e-9);
        assert_kkt(&p, &s);
    }

    #[test]
    fn degenerate_cycling_example_terminates() {
        // Beale's construction makes largest-coefficient pivoting cycle
        // forever; Bland's rule must grind through to (0.04, 0, 1, 0).
        let mut p = LpProblem::with_cost(vec![-0.75, 150.0, -0.02, 6.0]);
        p.le(vec![0.25, -60.0, -0.04, 9.0], 0.0).unwrap();
        p.le(vec![0.5, -90.0, -0.02, 3.0], 0.0).unwrap();
        p.le(vec![0.0, 0.0, 1.0, 0.0], 1.0).unwrap();
        let s = solve_lp(&p).unwrap();
        assert_relative_eq!(s.objective, -0.05, epsilon = 1e-9);
        assert_relative_eq!(s.x[0], 0.04, epsilon = 1e-9);
        assert_relative_eq!(s.x[2], 1.0, epsilon = 1e-9);
        assert!(s.iterations < 100);
        assert_kkt(&p, &s);
    }

    #[test]
    fn mixed_equality_and_inequality_rows() {
        // min 2x+3y+z, x+y+z = 10, x−y ≤ 2, y+2z ≤ 12 → (10/3, 4/3, 16/3).
        let mut p = LpProblem::with_cost(vec![2.0, 3.0, 1.0]);
        p.eq(vec![1.0, 1.0, 1.0], 10.0).unwrap();
        p.le(vec![1.0, -1.0, 0.0], 2.0).unwrap();
        p.le(vec![0.0, 1.0, 2.0], 12.0).unwrap();
        let s = solve_lp(&p).unwrap();
        assert_relative_eq!(s.objective, 16.0, epsilon = 1e-9);
        assert_relative_eq!(s.x[0], 10.0 / 3.0, epsilon = 1e-9);
        assert_relative_eq!(s.x[1], 4.0 / 3.0, epsilon = 1e-9);
        assert_relative_eq!(s.x[2], 16.0 / 3.0, epsilon = 1e-9);
        assert_kkt(&p, &s);
    }

    #[test]
    fn infeasible_and_unbounded_are_reported() {
        let mut p = LpProblem::with_cost(vec![1.0]);
        p.le(vec![1.0], -1.0).unwrap();
        assert!(matches!(solve_lp(&p), Err(LpError::Infeasible { .. })));

        let mut p = LpProblem::with_cost(vec![-1.0]);
        p.ge(vec![1.0], 1.0).unwrap();
        assert!(matches!(solve_lp(&p), Err(LpError::Unbounded { .. })));
    }

    #[test]
    fn redundant_equality_rows_are_tolerated() {
        let mut p = LpProblem::with_cost(vec![1.0, 1.0]);
        p.eq(vec![1.0, 1.0], 2.0).unwrap();
        p.eq(vec![2.0, 2.0], 4.0).unwrap();
        p.le(vec![1.0, 0.0], 1.5).unwrap();
        let s = solve_lp(&p).unwrap();
        assert_relative_eq!(s.objective, 2.0, epsilon = 1e-9);
        assert_kkt(&p, &s);
    }

    #[test]
    fn negative_rhs_rows_are_normalized() {
        // x − y ≥ −3 written with a negative b; optimum pushed to the wall.
        let mut p = LpProblem::with_cost(vec![0.0, -1.0]);
        p.ge(vec![1.0, -1.0], -3.0).unwrap();
        p.le(vec![1.0, 0.0], 1.0).unwrap();
        let s = solve_lp(&p).unwrap();
        // y ≤ x + 3 ≤ 4.
        assert_relative_eq!(s.objective, -4.0, epsilon = 1e-9);
        assert_relative_eq!(s.x[1], 4.0, epsilon = 1e-9);
        assert_kkt(&p, &s);
    }

    /// All vertices of a 2-variable system: pairwise constraint
    /// intersections (including the axes) filtered by feasibility.
    fn vertex_enumeration_2var(p: &LpProblem) -> Option<(f64, Vec<f64>)> {
        assert_eq!(p.n, 2);
        let mut lines: Vec<(f64, f64, f64)> =
            p.rows.iter().map(|r| (r.a[0], r.a[1], r.b)).collect();
        lines.push((1.0, 0.0, 0.0));
        lines.push((0.0, 1.0, 0.0));
        let feasible = |x: f64, y: f64| {
            if x < -1e-9 || y < -1e-9 {
                return false;
            }
            p.rows.iter().all(|r| {
                let ax = r.a[0] * x + r.a[1] * y;
                match r.rel {
                    Rel::Le => ax <= r.b + 1e-9,
                    Rel::Ge => ax >= r.b - 1e-9,
                    Rel::Eq => (ax - r.b).abs() <= 1e-9,
                }
            })
        };
        let mut best: Option<(f64, Vec<f64>)> = None;
        for i in 0..lines.len() {
            for j in i + 1..lines.len() {
                let (a1, b1, c1) = lines[i];
                let (a2, b2, c2) = lines[j];
                let det = a1 * b2 - a2 * b1;
                if det.abs() < 1e-12 {
                    continue;
                }
                let x = (c1 * b2 - c2 * b1) / det;
                let y = (a1 * c2 - a2 * c1) / det;
                if !feasible(x, y) {
                    continue;
                }
                let obj = p.cost[0] * x + p.cost[1] * y;
                if best.as_ref().is_none_or(|(b, _)| obj < b - 1e-12) {
                    best = Some((obj, vec![x, y]));
                }
            }
        }
        best
    }

    #[test]
    fn random_two_variable_problems_match_vertex_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut solved = 0;
        for _ in 0..200 {
            let mut p = LpProblem::with_cost(vec![
                rng.gen_range(-5..=5) as f64,
                rng.gen_range(-5..=5) as f64,
            ]);
            for _ in 0..4 {
                p.le(
                    vec![rng.gen_range(-4..=4) as f64, rng.gen_range(-4..=4) as f64],
                    rng.gen_range(1..=8) as f64,
                )
                .unwrap();
            }
            // Box rows keep every instance bounded; origin keeps it feasible.
            p.le(vec![1.0, 0.0], 10.0).unwrap();
            p.le(vec![0.0, 1.0], 10.0).unwrap();
            let s = solve_lp(&p).unwrap();
            let (obj, _) = vertex_enumeration_2var(&p).unwrap();
            assert_relative_eq!(s.objective, obj, epsilon = 1e-8);
            assert_kkt(&p, &s);
            solved += 1;
        }
        assert_eq!(solved, 200);
    }

    #[test]
    fn resolving_is_bit_identical() {
        let mut p = LpProblem::with_cost(vec![-1.0, -2.0, 0.5]);
        p.le(vec![1.0, 1.0, 1.0], 7.0).unwrap();
        p.ge(vec![0.0, 1.0, -1.0], 1.0).unwrap();
        p.eq(vec![1.0, 0.0, 2.0], 3.0).unwrap();
        let a = solve_lp(&p).unwrap();
        let b = solve_lp(&p).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.dual, b.dual);
        assert_eq!(a.iterations, b.iterations);
    }

    proptest! {
        // Feasible-by-construction instances: rhs is offset from a known
        // interior point, so the solver must find something at least as good.
        #[test]
        fn solver_beats_the_seed_point(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(2..5);
            let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..3.0)).collect();
            let mut p = LpProblem::with_cost(
                (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            );
            for _ in 0..rng.gen_range(1..5) {
                let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let ax: f64 = a.iter().zip(&x0).map(|(a, v)| a * v).sum();
                p.le(a, ax + rng.gen_range(0.1..2.0)).unwrap();
            }
            for j in 0..n {
                let mut a = vec![0.0; n];
                a[j] = 1.0;
                p.le(a, 10.0).unwrap();
            }
            let s = solve_lp(&p).unwrap();
            let c_x0: f64 = p.cost.iter().zip(&x0).map(|(c, v)| c * v).sum();
            prop_assert!(s.objective <= c_x0 + 1e-9);
            let rep = check_lp_kkt(&p, &s);
            prop_assert!(rep.passes(1e-6, 1e-5), "{rep:?}");
        }
    }
}
