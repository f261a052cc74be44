//! Inner empirical-likelihood engine.
//!
//! For constraint vectors `g_1, .., g_m` in `R^r` the EL weights are
//! `p_j = 1 / (m (1 + lambda' g_j))` where `lambda` minimizes the convex dual
//! `D(lambda) = -sum_j log(1 + lambda' g_j)`.
//!
//! Log-EL convention: [`log_el_at`] and [`ElSolution::log_ratio`] omit the
//! constant `-m log m`, i.e. they return `sum_j log(m p_j)`, which is `0` when
//! the constraints are slack and negative otherwise. All profile likelihoods in
//! this crate use that convention.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub(crate) const MAX_ITER: usize = 100;
pub(crate) const GRAD_TOL: f64 = 1e-9;
const MAX_HALVINGS: usize = 60;
const ARMIJO: f64 = 1e-4;

/// Row-major `m x r` matrix whose row `j` is the constraint vector `g_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintMatrix {
    m: usize,
    r: usize,
    data: Vec<f64>,
}

impl ConstraintMatrix {
    pub fn new(m: usize, r: usize, data: Vec<f64>) -> Result<Self> {
        if r == 0 || data.len() != m * r {
            return Err(Error::InvalidArgument(format!(
                "constraint matrix of shape {m}x{r} needs {} values, got {}",
                m * r,
                data.len()
            )));
        }
        if m <= r {
            return Err(Error::InvalidArgument(format!(
                "{m} constraint rows for {r} constraints"
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite constraint value".into()));
        }
        Ok(Self { m, r, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let r = rows.first().map_or(0, |row| row.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * r);
        for row in rows {
            if row.as_ref().len() != r {
                return Err(Error::InvalidArgument("ragged constraint rows".into()));
            }
            data.extend_from_slice(row.as_ref());
        }
        Self::new(rows.len(), r, data)
    }

    /// Single-constraint matrix from one column of values.
    pub fn from_column(values: &[f64]) -> Result<Self> {
        Self::new(values.len(), 1, values.to_vec())
    }

    pub fn nrows(&self) -> usize {
        self.m
    }

    pub fn ncols(&self) -> usize {
        self.r
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.r..(j + 1) * self.r]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.r)
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.m, self.r, &self.data)
    }

    fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |a, &v| a.max(v.abs()))
    }

    /// Some column is nonzero and never changes sign, so no positive weights
    /// can zero it out. Columns at rounding level are left to the solver.
    fn has_one_signed_column(&self) -> bool {
        let negligible = 1e-12 * self.max_abs().max(1.0);
        (0..self.r).any(|k| {
            let (mut pos, mut neg, mut size) = (false, false, 0.0_f64);
            for row in self.rows() {
                pos |= row[k] > 0.0;
                neg |= row[k] < 0.0;
                size = size.max(row[k].abs());
            }
            pos != neg && size > negligible
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum ElStatus {
    Converged,
    HullViolation,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct ElSolution {
    pub lambda: Vec<f64>,
    pub weights: Vec<f64>,
    /// `sum_j log p_j`, including the `-m log m` constant.
    pub log_el: f64,
    pub status: ElStatus,
    pub iterations: usize,
}

impl ElSolution {
    pub fn converged(&self) -> bool {
        self.status == ElStatus::Converged
    }

    /// `log_el + m log m`, i.e. `-sum_j log(1 + lambda' g_j)`.
    pub fn log_ratio(&self) -> f64 {
        let m = self.weights.len() as f64;
        self.log_el + m * m.ln()
    }

    fn failed(r: usize, m: usize, status: ElStatus, iterations: usize) -> Self {
        Self {
            lambda: vec![f64::NAN; r],
            weights: vec![f64::NAN; m],
            log_el: f64::NEG_INFINITY,
            status,
            iterations,
        }
    }
}

/// `-sum_j log(1 + lambda' g_j)`; errors if some `1 + lambda' g_j <= 0`.
pub fn log_el_at(g: &ConstraintMatrix, lambda: &[f64]) -> Result<f64> {
    if lambda.len() != g.ncols() {
        return Err(Error::InvalidArgument(
            "multiplier length does not match constraints".into(),
        ));
    }
    let mut total = 0.0;
    for (j, row) in g.rows().enumerate() {
        let z = 1.0 + dot(lambda, row);
        if !(z > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "1 + lambda'g is not positive at row {}",
                j + 1
            )));
        }
        total -= z.ln();
    }
    Ok(total)
}

/// Solve the dual problem starting from `lambda = 0`.
pub fn solve_dual(g: &ConstraintMatrix) -> ElSolution {
    solve_impl(g, None, None)
}

/// Solve the dual problem from `init` when it is strictly inside the working
/// domain, otherwise from zero.
pub fn solve_dual_from(g: &ConstraintMatrix, init: &[f64]) -> ElSolution {
    solve_impl(g, Some(init), None)
}

/// Symmetric pseudo-inverse solve of `h x = b`, tolerant of zero columns.
pub(crate) fn pinv_solve(h: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if let Some(chol) = h.clone().cholesky() {
        let x = chol.solve(b);
        if x.iter().all(|v| v.is_finite()) {
            return x;
        }
    }
    let eig = h.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
    let cut = max * 1e-12;
    let coords = eig.eigenvectors.transpose() * b;
    let scaled = DVector::from_iterator(
        coords.len(),
        coords
            .iter()
            .zip(eig.eigenvalues.iter())
            .map(|(&c, &l)| if l.abs() > cut { c / l } else { 0.0 }),
    );
    &eig.eigenvectors * scaled
}

fn solve_impl(
    g: &ConstraintMatrix,
    init: Option<&[f64]>,
    mut trace: Option<&mut Vec<f64>>,
) -> ElSolution {
    let (m, r) = (g.nrows(), g.ncols());
    if g.has_one_signed_column() {
        return ElSolution::failed(r, m, ElStatus::HullViolation, 0);
    }
    let mf = m as f64;
    let floor = 1.0 / mf;
    let tol = GRAD_TOL * g.max_abs().max(1.0);

    let mut lambda = vec![0.0; r];
    if let Some(start) = init {
        if start.len() == r && g.rows().all(|row| 1.0 + dot(start, row) > floor) {
            lambda.copy_from_slice(start);
        }
    }
    let objective = |lam: &[f64]| -> Option<f64> {
        let mut d = 0.0;
        for row in g.rows() {
            let z = 1.0 + dot(lam, row);
            if !(z > floor) {
                return None;
            }
            d -= z.ln();
        }
        Some(d)
    };
    let mut d = objective(&lambda).expect("starting point is feasible");
    if let Some(tr) = trace.as_deref_mut() {
        tr.push(d);
    }

    let mut grad = DVector::zeros(r);
    let mut hess = DMatrix::zeros(r, r);
    for iter in 0..MAX_ITER {
        grad.fill(0.0);
        hess.fill(0.0);
        for row in g.rows() {
            let z = 1.0 + dot(&lambda, row);
            let w = 1.0 / z;
            for a in 0..r {
                grad[a] -= row[a] * w;
                let wa = row[a] * w * w;
                for b in 0..=a {
                    hess[(a, b)] += wa * row[b];
                }
            }
        }
        for a in 0..r {
            for b in 0..a {
                hess[(b, a)] = hess[(a, b)];
            }
        }
        let step = -pinv_solve(&hess, &grad);
        // The gradient also vanishes as |lambda| -> infinity when zero is
        // outside the hull; sum_j p_j = 1 - lambda' grad / m separates the two.
        let mass_gap = lambda
            .iter()
            .zip(grad.iter())
            .map(|(l, gr)| l * gr)
            .sum::<f64>()
            / mf;
        if grad.amax() < tol && mass_gap.abs() < 1e-10 {
            // One more full Newton step costs nothing and lands at machine precision.
            // Only a genuinely small correction is taken; rounding-level
            // columns can otherwise produce a huge pseudo-inverse step.
            let small =
                step.amax() <= 1e-6 * (1.0 + lambda.iter().fold(0.0_f64, |a, l| a.max(l.abs())));
            let polished: Vec<f64> = lambda
                .iter()
                .zip(step.iter())
                .map(|(l, st)| l + st)
                .collect();
            if let Some(dp) = objective(&polished).filter(|_| small) {
                if dp <= d + 1e-12 * (1.0 + d.abs()) {
                    lambda = polished;
                }
            }
            return finish(g, lambda, iter);
        }
        let slope = grad.dot(&step);
        if !(slope < 0.0) {
            return ElSolution::failed(r, m, ElStatus::HullViolation, iter);
        }
        let mut s = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand: Vec<f64> = lambda
                .iter()
                .zip(step.iter())
                .map(|(l, st)| l + s * st)
                .collect();
            if let Some(dc) = objective(&cand) {
                // Slack for rounding in D, which otherwise stalls Newton near the optimum.
                let slack = 16.0 * f64::EPSILON * (1.0 + d.abs());
                if dc <= d + ARMIJO * s * slope + slack {
                    accepted = Some((cand, dc));
                    break;
                }
            }
            s *= 0.5;
        }
        match accepted {
            Some((cand, dc)) => {
                lambda = cand;
                d = dc;
                if let Some(tr) = trace.as_deref_mut() {
                    tr.push(d);
                }
            }
            // Rounding can stall the line search right at the optimum.
            None if grad.amax() < 1e3 * tol && mass_gap.abs() < 1e-9 => {
                return finish(g, lambda, iter)
            }
            None => return ElSolution::failed(r, m, ElStatus::HullViolation, iter),
        }
        // An unbounded-below dual means zero is outside the hull.
        if d < -30.0 * mf {
            return ElSolution::failed(r, m, ElStatus::HullViolation, iter + 1);
        }
    }
    let mut sol = finish(g, lambda, MAX_ITER);
    sol.status = ElStatus::MaxIter;
    sol
}

fn finish(g: &ConstraintMatrix, lambda: Vec<f64>, iterations: usize) -> ElSolution {
    let mf = g.nrows() as f64;
    let mut weights = Vec::with_capacity(g.nrows());
    let mut log_el = 0.0;
    for row in g.rows() {
        let z = 1.0 + dot(&lambda, row);
        let p = 1.0 / (mf * z);
        log_el += p.ln();
        weights.push(p);
    }
    let status = if weights.iter().all(|&p| p > 0.0 && p.is_finite()) {
        ElStatus::Converged
    } else {
        ElStatus::HullViolation
    };
    ElSolution {
        lambda,
        weights,
        log_el,
        status,
        iterations,
    }
}

/// True iff zero lies strictly inside the convex hull of the rows: the rows
/// span `R^r` and some strictly positive weights average them to zero.
pub fn check_hull(g: &ConstraintMatrix) -> bool {
    use microlp::{ComparisonOp, OptimizationDirection, Problem};

    let gm = g.to_dmatrix();
    let gram = gm.transpose() * &gm;
    let eig = gram.symmetric_eigenvalues();
    let max = eig.iter().fold(0.0_f64, |a, &v| a.max(v));
    if !(max > 0.0) || eig.iter().any(|&v| v <= 1e-12 * max) {
        return false;
    }

    // maximize s subject to sum_j w_j g_j = 0, sum_j w_j = 1, w_j >= s.
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let s = lp.add_var(1.0, (-1.0, 1.0));
    let w: Vec<_> = (0..g.nrows())
        .map(|_| lp.add_var(0.0, (0.0, 1.0)))
        .collect();
    let scale = g.max_abs().max(f64::MIN_POSITIVE);
    for k in 0..g.ncols() {
        let terms: Vec<_> = w
            .iter()
            .zip(g.rows())
            .map(|(&wj, row)| (wj, row[k] / scale))
            .collect();
        lp.add_constraint(terms, ComparisonOp::Eq, 0.0);
    }
    lp.add_constraint(
        w.iter().map(|&wj| (wj, 1.0)).collect::<Vec<_>>(),
        ComparisonOp::Eq,
        1.0,
    );
    for &wj in &w {
        lp.add_constraint([(wj, 1.0), (s, -1.0)], ComparisonOp::Ge, 0.0);
    }
    match lp.solve() {
        Ok(sol) => sol.objective() > 1e-9,
        Err(_) => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn col(v: &[f64]) -> ConstraintMatrix {
        ConstraintMatrix::from_column(v).unwrap()
    }

    #[test]
    fn symmetric_rows_give_uniform_weights() {
        let sol = solve_dual(&col(&[-1.0, 0.0, 1.0]));
        assert!(sol.converged());
        assert_abs_diff_eq!(sol.lambda[0], 0.0, epsilon = 1e-12);
        for p in &sol.weights {
            assert_abs_diff_eq!(*p, 1.0 / 3.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(sol.log_ratio(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn closed_form_single_constraint() {
        // -1/(1-l) + 2/(1+2l) = 0  =>  l = 1/4.
        let sol = solve_dual(&col(&[-1.0, 0.0, 2.0]));
        assert!(sol.converged());
        assert_abs_diff_eq!(sol.lambda[0], 0.25, epsilon = 1e-10);
        let expect = [4.0 / 9.0, 1.0 / 3.0, 2.0 / 9.0];
        for (p, e) in sol.weights.iter().zip(expect) {
            assert_abs_diff_eq!(*p, e, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(sol.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        let resid: f64 = sol
            .weights
            .iter()
            .zip([-1.0, 0.0, 2.0])
            .map(|(p, g)| p * g)
            .sum();
        assert!(resid.abs() < 1e-12);
    }

    #[test]
    fn positive_rows_violate_hull() {
        let sol = solve_dual(&col(&[1.0, 2.0, 3.0]));
        assert_eq!(sol.status, ElStatus::HullViolation);
        assert!(!check_hull(&col(&[1.0, 2.0, 3.0])));
    }

    #[test]
    fn hull_violation_without_one_signed_column() {
        // Both columns change sign but every row has x + y > 0.
        let g = ConstraintMatrix::from_rows(&[[2.0, -1.0], [-1.0, 2.0], [1.0, 1.0], [3.0, -2.5]])
            .unwrap();
        assert!(!check_hull(&g));
        assert_eq!(solve_dual(&g).status, ElStatus::HullViolation);
    }

    #[test]
    fn log_el_at_values() {
        let g = col(&[-1.0, 0.0, 2.0]);
        assert_eq!(log_el_at(&g, &[0.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            log_el_at(&g, &[0.25]).unwrap(),
            -(9.0f64 / 8.0).ln(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(log_el_at(&g, &[0.25]).unwrap(), -0.1178, epsilon = 1e-4);
        assert!(log_el_at(&g, &[1.0]).is_err());
    }

    #[test]
    fn hull_checks() {
        assert!(check_hull(&col(&[-1.0, 0.0, 2.0])));
        let cloud = ConstraintMatrix::from_rows(&[
            [1.0, 0.5],
            [-0.7, 1.2],
            [-1.1, -0.4],
            [0.6, -0.9],
            [0.2, 0.1],
            [2.0, 1.5],
        ])
        .unwrap();
        assert!(check_hull(&cloud));
        // zero on the boundary is not strictly inside
        assert!(!check_hull(&col(&[0.0, 1.0, 2.0])));
        // rows confined to a line through zero do not span the plane
        let flat = ConstraintMatrix::from_rows(&[[1.0, 1.0], [-1.0, -1.0], [2.0, 2.0]]).unwrap();
        assert!(!check_hull(&flat));
    }

    #[test]
    fn zero_column_is_tolerated() {
        let g = ConstraintMatrix::from_rows(&[[-1.0, 0.0], [0.0, 0.0], [2.0, 0.0]]).unwrap();
        let sol = solve_dual(&g);
        assert!(sol.converged());
        assert_abs_diff_eq!(sol.lambda[0], 0.25, epsilon = 1e-10);
        assert_abs_diff_eq!(sol.lambda[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn warm_start_from_infeasible_point_falls_back() {
        let g = col(&[-1.0, 0.0, 2.0]);
        let sol = solve_dual_from(&g, &[5.0]);
        assert!(sol.converged());
        assert_abs_diff_eq!(sol.lambda[0], 0.25, epsilon = 1e-10);
        let warm = solve_dual_from(&g, &[0.2499]);
        assert!(warm.iterations <= 2);
    }

    #[test]
    fn shape_validation() {
        assert!(ConstraintMatrix::new(2, 2, vec![1.0; 4]).is_err());
        assert!(ConstraintMatrix::new(3, 1, vec![1.0, f64::NAN, 0.0]).is_err());
        assert!(ConstraintMatrix::from_rows(&[vec![1.0, 2.0], vec![1.0]]).is_err());
    }

    /// Independent primal route: Newton ascent of `sum log p` restricted to
    /// the affine set `{sum p = 1, sum p g = 0}`, parameterized by a basis of
    /// the constraint null space.
    fn primal_oracle(g: &ConstraintMatrix) -> f64 {
        let (m, r) = (g.nrows(), g.ncols());
        let mut c = DMatrix::zeros(r + 1, m);
        for j in 0..m {
            c[(0, j)] = 1.0;
            for k in 0..r {
                c[(k + 1, j)] = g.row(j)[k];
            }
        }
        let eig = (c.transpose() * &c).symmetric_eigen();
        let null: Vec<usize> = (0..m)
            .filter(|&k| eig.eigenvalues[k].abs() < 1e-10)
            .collect();
        let basis = DMatrix::from_fn(m, null.len(), |i, k| eig.eigenvectors[(i, null[k])]);

        let cct_inv = (&c * c.transpose()).pseudo_inverse(1e-12).unwrap();
        let target = DVector::from_iterator(r + 1, (0..=r).map(|k| if k == 0 { 1.0 } else { 0.0 }));
        let uniform = DVector::from_element(m, 1.0 / m as f64);
        let mut p = &uniform + c.transpose() * &cct_inv * (target - &c * &uniform);
        if p.iter().any(|&v| v <= 0.0) {
            // Any strictly feasible point works as a start.
            p = DVector::from_vec(solve_dual(g).weights);
        }
        let f = |p: &DVector<f64>| p.iter().map(|v| v.ln()).sum::<f64>();
        for _ in 0..200 {
            let grad = basis.transpose() * DVector::from_iterator(m, p.iter().map(|v| 1.0 / v));
            let d2 =
                DMatrix::from_diagonal(&DVector::from_iterator(m, p.iter().map(|v| 1.0 / (v * v))));
            let neg_hess = basis.transpose() * d2 * &basis;
            let dir = &basis * neg_hess.cholesky().unwrap().solve(&grad);
            let base = f(&p);
            let mut s = 1.0;
            while s > 1e-16 {
                let cand = &p + &dir * s;
                if cand.iter().all(|&v| v > 0.0) && f(&cand) >= base {
                    p = cand;
                    break;
                }
                s *= 0.5;
            }
            if grad.amax() < 1e-12 {
                break;
            }
        }
        f(&p)
    }

    #[test]
    fn agrees_with_primal_oracle_on_fixed_instance() {
        let g = ConstraintMatrix::from_rows(&[
            [-1.0, 0.3],
            [0.5, -1.2],
            [1.5, 0.9],
            [-0.4, 0.8],
            [0.2, -0.6],
        ])
        .unwrap();
        let sol = solve_dual(&g);
        assert!(sol.converged());
        assert_abs_diff_eq!(sol.log_el, primal_oracle(&g), epsilon = 1e-4);
    }

    fn instance() -> impl Strategy<Value = ConstraintMatrix> {
        (1usize..=2, 4usize..=6).prop_flat_map(|(r, m)| {
            proptest::collection::vec(-3.0f64..3.0, m * r)
                .prop_map(move |data| ConstraintMatrix::new(m, r, data).unwrap())
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(96))]

        #[test]
        fn dual_matches_primal_and_satisfies_constraints(g in instance()) {
            let sol = solve_dual(&g);
            if check_hull(&g) {
                prop_assert!(sol.converged());
            }
            if sol.converged() {
                prop_assert!((sol.weights.iter().sum::<f64>() - 1.0).abs() < 1e-10);
                for k in 0..g.ncols() {
                    let resid: f64 = sol.weights.iter().zip(g.rows()).map(|(p, row)| p * row[k]).sum();
                    prop_assert!(resid.abs() < 1e-8);
                }
                let m = g.nrows() as f64;
                prop_assert!(sol.log_el <= -m * m.ln() + 1e-10);
                prop_assert!((sol.log_el - primal_oracle(&g)).abs() < 1e-4);
            }
        }

        #[test]
        fn dual_objective_never_increases(g in instance()) {
            let mut trace = Vec::new();
            let _ = solve_impl(&g, None, Some(&mut trace));
            for w in trace.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-13 * (1.0 + w[0].abs()));
            }
        }

        #[test]
        fn column_scaling_invariance(g in instance(), c in prop_oneof![-5.0f64..-0.2, 0.2f64..5.0]) {
            let sol = solve_dual(&g);
            prop_assume!(sol.converged());
            let r = g.ncols();
            let scaled: Vec<f64> = g.rows().flat_map(|row| {
                let mut row = row.to_vec();
                row[0] *= c;
                row
            }).collect();
            let gs = ConstraintMatrix::new(g.nrows(), r, scaled).unwrap();
            let sol_s = solve_dual(&gs);
            prop_assert!(sol_s.converged());
            prop_assert!((sol.log_el - sol_s.log_el).abs() < 1e-8);
            for (a, b) in sol.weights.iter().zip(&sol_s.weights) {
                prop_assert!((a - b).abs() < 1e-8);
            }
            prop_assert!((sol_s.lambda[0] - sol.lambda[0] / c).abs() < 1e-6 * (1.0 + sol.lambda[0].abs()));
        }
    }
}
