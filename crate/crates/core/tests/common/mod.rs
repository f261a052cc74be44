#![allow(dead_code)]

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use selate::simulation::{Calibration, Population};

pub fn population() -> &'static Population {
    static POP: OnceLock<Population> = OnceLock::new();
    POP.get_or_init(Population::standard)
}

pub fn calibration(t: f64, rho: f64) -> Calibration {
    Calibration::compute(population(), t, rho).unwrap()
}

/// Maximize `sum log p` subject to `sum p = 1` and `G' p = 0` by Newton's
/// method with an infeasible start (uniform weights). Returns the weights,
/// or `None` when the iteration fails to reach a feasible interior point.
pub fn primal_weights(rows: &[Vec<f64>]) -> Option<Vec<f64>> {
    let m = rows.len();
    let r = rows[0].len();
    let mut a = DMatrix::zeros(r + 1, m);
    for j in 0..m {
        a[(0, j)] = 1.0;
        for k in 0..r {
            a[(k + 1, j)] = rows[j][k];
        }
    }
    let mut b = DVector::zeros(r + 1);
    b[0] = 1.0;
    let mut p = DVector::from_element(m, 1.0 / m as f64);
    let mut nu = DVector::zeros(r + 1);
    // Minimize f(p) = -sum log p.
    let residual = |p: &DVector<f64>, nu: &DVector<f64>| {
        let dual = DVector::from_iterator(m, p.iter().map(|v| -1.0 / v)) + a.transpose() * nu;
        let primal = &a * p - &b;
        (dual, primal)
    };
    for _ in 0..500 {
        let (rd, rp) = residual(&p, &nu);
        let norm = (rd.norm_squared() + rp.norm_squared()).sqrt();
        if norm < 1e-13 {
            return Some(p.iter().copied().collect());
        }
        let mut kkt = DMatrix::zeros(m + r + 1, m + r + 1);
        for j in 0..m {
            kkt[(j, j)] = 1.0 / (p[j] * p[j]);
        }
        kkt.view_mut((0, m), (m, r + 1)).copy_from(&a.transpose());
        kkt.view_mut((m, 0), (r + 1, m)).copy_from(&a);
        let mut rhs = DVector::zeros(m + r + 1);
        rhs.rows_mut(0, m).copy_from(&(-&rd));
        rhs.rows_mut(m, r + 1).copy_from(&(-&rp));
        let step = kkt.lu().solve(&rhs)?;
        let dp = step.rows(0, m).into_owned();
        let dnu = step.rows(m, r + 1).into_owned();
        let mut s = 1.0;
        loop {
            let cand = &p + &dp * s;
            if cand.iter().all(|&v| v > 0.0) {
                let cnu = &nu + &dnu * s;
                let (cd, cp) = residual(&cand, &cnu);
                if (cd.norm_squared() + cp.norm_squared()).sqrt() <= (1.0 - 0.01 * s) * norm {
                    p = cand;
                    nu = cnu;
                    break;
                }
            }
            s *= 0.5;
            if s < 1e-14 {
                return None;
            }
        }
    }
    None
}

/// Deterministic small `(m x r)` instances for oracle comparisons.
pub fn small_instances(count: usize, seed: u64) -> Vec<Vec<Vec<f64>>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let r = rng.random_range(1..=2);
            let m = rng.random_range(r + 2..=6);
            (0..m)
                .map(|_| (0..r).map(|_| rng.random_range(-3.0..3.0)).collect())
                .collect()
        })
        .collect()
}
