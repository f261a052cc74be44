//! Plug-in variance machinery shared by both SEL approaches: linearized
//! influence vectors, their covariance, the scaling constant of the ratio
//! statistic and the sandwich variance of `(mu1, theta)`.

use nalgebra::{DMatrix, DVector};

use crate::data::ObservedSample;
use crate::error::{Error, Result};
use crate::models::{OrFit, PsFit};

/// Per-unit linearization of the six SEL1 estimating functions
/// `(T g1, (1 - T) g0)` evaluated at `(mu1, theta)`, one row per unit.
///
/// Every population expectation is replaced by its sample mean over the
/// whole sample, with the fitted propensity scores and outcome predictions in
/// place of the true ones.
pub fn influence_sel1(
    sample: &ObservedSample,
    ps: &PsFit,
    or: &OrFit,
    mu1: f64,
    theta: f64,
) -> Result<DMatrix<f64>> {
    let parts = Linearization::new(sample, ps, or, mu1, theta)?;
    let n = sample.n();
    Ok(DMatrix::from_fn(n, 6, |j, k| parts.component(j, k)))
}

/// The four SEL2 components: entries 2, 3, 5, 6 of [`influence_sel1`].
pub fn influence_sel2(
    sample: &ObservedSample,
    ps: &PsFit,
    or: &OrFit,
    mu1: f64,
    theta: f64,
) -> Result<DMatrix<f64>> {
    let parts = Linearization::new(sample, ps, or, mu1, theta)?;
    let n = sample.n();
    const KEEP: [usize; 4] = [1, 2, 4, 5];
    Ok(DMatrix::from_fn(n, 4, |j, k| parts.component(j, KEEP[k])))
}

struct Linearization<'a> {
    sample: &'a ObservedSample,
    ps: &'a PsFit,
    or: &'a OrFit,
    mu1: f64,
    theta: f64,
    e_tau: f64,
    /// Row vectors `c D^{-1}` for c in G + H, J, K, L - H, M, N.
    gh: DVector<f64>,
    j: DVector<f64>,
    k: DVector<f64>,
    lh: DVector<f64>,
    m: DVector<f64>,
    nn: DVector<f64>,
}

impl<'a> Linearization<'a> {
    fn new(
        sample: &'a ObservedSample,
        ps: &'a PsFit,
        or: &'a OrFit,
        mu1: f64,
        theta: f64,
    ) -> Result<Self> {
        let n = sample.n();
        let nf = n as f64;
        let xt = &ps.design;
        let q = xt.ncols();
        let tau = &ps.tau_hat;
        let t = sample.t();
        let y = sample.y();
        let e_tau = ps.mean_tau();

        let mut d = DMatrix::zeros(q, q);
        let mut g = DVector::zeros(q);
        let mut h = DVector::zeros(q);
        let mut jv = DVector::zeros(q);
        let mut kv = DVector::zeros(q);
        let mut l = DVector::zeros(q);
        let mut m = DVector::zeros(q);
        let mut nv = DVector::zeros(q);
        for i in 0..n {
            let x = xt.row(i).transpose();
            let tj = tau[i];
            let w = tj * (1.0 - tj);
            d.ger(-w / nf, &x, &x, 1.0);
            g.axpy(-e_tau * (1.0 - tj) / nf, &x, 1.0);
            h.axpy(w / nf, &x, 1.0);
            jv.axpy((or.m1_hat[i] - or.mbar1) * (1.0 - tj) / nf, &x, 1.0);
            l.axpy((1.0 - e_tau) * tj / nf, &x, 1.0);
            m.axpy(tj * (or.m0_hat[i] - or.mbar0) / nf, &x, 1.0);
            if t[i] {
                kv.axpy(-(1.0 - tj) * (y[i] - mu1) / tj / nf, &x, 1.0);
            } else {
                nv.axpy(tj * (y[i] - mu1 + theta) / (1.0 - tj) / nf, &x, 1.0);
            }
        }
        // D is negative definite; D^{-1} = -(-D)^{-1}.
        let neg_d = -d;
        let chol = neg_d
            .cholesky()
            .ok_or_else(|| Error::Singular("propensity score information matrix".into()))?;
        // c D^{-1} as a column vector: -(-D)^{-1} c', using symmetry of D.
        let solve = |c: DVector<f64>| -chol.solve(&c);
        Ok(Self {
            sample,
            ps,
            or,
            mu1,
            theta,
            e_tau,
            gh: solve(&g + &h),
            j: solve(jv),
            k: solve(kv),
            lh: solve(&l - &h),
            m: solve(m),
            nn: solve(nv),
        })
    }

    fn component(&self, i: usize, comp: usize) -> f64 {
        let x = self.ps.design.row(i).transpose();
        let tau = self.ps.tau_hat[i];
        let t = if self.sample.t()[i] { 1.0 } else { 0.0 };
        let y = self.sample.y()[i];
        let resid = t - tau;
        match comp {
            0 => resid - (t / tau - 1.0) * self.e_tau + resid * self.gh.dot(&x),
            1 => (t / tau - 1.0) * (self.or.m1_hat[i] - self.or.mbar1) + resid * self.j.dot(&x),
            2 => t * (y - self.mu1) / tau - resid * self.k.dot(&x),
            // The propensity-score correction enters with a plus sign: the
            // derivative of this component in alpha is H - L.
            3 => {
                (1.0 - (1.0 - t) / (1.0 - tau)) * (1.0 - self.e_tau)
                    + (tau - t)
                    + resid * self.lh.dot(&x)
            }
            4 => {
                ((1.0 - t) / (1.0 - tau) - 1.0) * (self.or.m0_hat[i] - self.or.mbar0)
                    - resid * self.m.dot(&x)
            }
            5 => (1.0 - t) * (y - self.mu1 + self.theta) / (1.0 - tau) - resid * self.nn.dot(&x),
            _ => unreachable!("six components"),
        }
    }
}

/// `n^{-1} sum_j (b_j - bbar)(b_j - bbar)'` over the rows of `b`.
pub fn centered_covariance(b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = b.nrows() as f64;
    let mean = b.row_mean();
    let mut centered = b.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    centered.transpose() * centered / n
}

/// Symmetric PSD square root with negative eigenvalues floored at zero.
pub fn psd_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Scaling constant and sandwich variance derived from one set of inputs.
#[derive(Debug, Clone)]
pub struct VarianceSummary {
    pub omega: DMatrix<f64>,
    pub a11: DMatrix<f64>,
    /// `[1,1]` block of the inverse of the unrestricted bordered matrix.
    pub a_inv11: DMatrix<f64>,
    /// `[1,2]` block of the same inverse.
    pub a_inv12: DMatrix<f64>,
    /// `[1,1]` block of the inverse of the restricted bordered matrix.
    pub b_inv11: DMatrix<f64>,
    /// Eigenvalues of `Omega^{1/2} (B^{11} - A^{11}) Omega^{1/2}`, sorted by
    /// decreasing magnitude.
    pub eigenvalues: Vec<f64>,
    pub delta: f64,
    /// Asymptotic covariance of `sqrt(n) (mu1_hat - mu1, theta_hat - theta)`.
    pub v: DMatrix<f64>,
    pub n: usize,
}

impl VarianceSummary {
    pub fn se_mu1(&self) -> f64 {
        (self.v[(0, 0)].max(0.0) / self.n as f64).sqrt()
    }

    pub fn se_theta(&self) -> f64 {
        (self.v[(1, 1)].max(0.0) / self.n as f64).sqrt()
    }

    /// Largest magnitude among the non-leading eigenvalues relative to `|delta|`.
    pub fn rank_one_ratio(&self) -> f64 {
        self.eigenvalues.get(1).map_or(0.0, |v| v.abs()) / self.delta.abs()
    }
}

/// Assemble the bordered matrices for per-arm blocks `w1`, `w0` (both `k x k`,
/// the last coordinate being the parameter constraint) and influence
/// covariance `omega` (`2k x 2k`), then derive the scaling constant and the
/// sandwich variance.
pub fn summarize(
    omega: DMatrix<f64>,
    w1: &DMatrix<f64>,
    w0: &DMatrix<f64>,
    n: usize,
) -> Result<VarianceSummary> {
    let k = w1.nrows();
    let s = 2 * k;
    let mut a11 = DMatrix::zeros(s, s);
    a11.view_mut((0, 0), (k, k)).copy_from(w1);
    a11.view_mut((k, k), (k, k)).copy_from(w0);

    let mut a = DMatrix::zeros(s + 2, s + 2);
    a.view_mut((0, 0), (s, s)).copy_from(&a11);
    // Columns for mu1 and theta; the parameter enters the last coordinate of
    // each arm's constraint vector.
    let border = [(k - 1, s, 1.0), (s - 1, s, 1.0), (s - 1, s + 1, -1.0)];
    for (r, c, v) in border {
        a[(r, c)] = v;
        a[(c, r)] = v;
    }
    let mut b = DMatrix::zeros(s + 1, s + 1);
    b.view_mut((0, 0), (s, s)).copy_from(&a11);
    for r in [k - 1, s - 1] {
        b[(r, s)] = 1.0;
        b[(s, r)] = 1.0;
    }

    let a_inv = a
        .try_inverse()
        .ok_or_else(|| Error::Singular("bordered matrix A".into()))?;
    let b_inv = b
        .try_inverse()
        .ok_or_else(|| Error::Singular("bordered matrix B".into()))?;
    let a_inv11 = a_inv.view((0, 0), (s, s)).into_owned();
    let a_inv12 = a_inv.view((0, s), (s, 2)).into_owned();
    let b_inv11 = b_inv.view((0, 0), (s, s)).into_owned();

    let root = psd_sqrt(&omega);
    let diff = &b_inv11 - &a_inv11;
    let mat = &root * ((&diff + diff.transpose()) * 0.5) * &root;
    let mut eigenvalues: Vec<f64> = mat.symmetric_eigenvalues().iter().copied().collect();
    eigenvalues.sort_by(|x, y| y.abs().total_cmp(&x.abs()));
    let delta = eigenvalues[0];

    let v = a_inv12.transpose() * &omega * &a_inv12;
    Ok(VarianceSummary {
        omega,
        a11,
        a_inv11,
        a_inv12,
        b_inv11,
        eigenvalues,
        delta,
        v,
        n,
    })
}

/// `n^{-1} sum_j g_j g_j'` over the given rows.
pub fn outer_mean<'r>(rows: impl Iterator<Item = &'r [f64]>, dim: usize, n: usize) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(dim, dim);
    for row in rows {
        for a in 0..dim {
            for c in 0..dim {
                w[(a, c)] += row[a] * row[c];
            }
        }
    }
    w / n as f64
}
