//! Reference implementations used by the integration tests. They share no
//! code with the library beyond the kernel definition.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use aoi_copilot::gpr::{GprDatabase, GprHyperparams};
use aoi_copilot::wireless::ChannelDraw;

/// Solves `a x = b` column by column with Gaussian elimination and partial pivoting.
pub fn gauss_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n);
    assert_eq!(b.nrows(), n);
    let mut m = a.clone();
    let mut x = b.clone();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[(i, col)].abs().total_cmp(&m[(j, col)].abs()))
            .unwrap();
        assert!(m[(pivot, col)] != 0.0, "singular system");
        m.swap_rows(col, pivot);
        x.swap_rows(col, pivot);
        for row in col + 1..n {
            let f = m[(row, col)] / m[(col, col)];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                m[(row, c)] -= f * m[(col, c)];
            }
            for c in 0..x.ncols() {
                x[(row, c)] -= f * x[(col, c)];
            }
        }
    }
    for col in (0..n).rev() {
        for c in 0..x.ncols() {
            let mut s = x[(col, c)];
            for k in col + 1..n {
                s -= m[(col, k)] * x[(k, c)];
            }
            x[(col, c)] = s / m[(col, col)];
        }
    }
    x
}

/// Conditions the joint Gaussian of `(observations, target)` on the observations.
///
/// `cov` is the joint covariance with the first `n_obs` coordinates observed.
pub fn condition(cov: &DMatrix<f64>, n_obs: usize, observed: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let total = cov.nrows();
    let n_t = total - n_obs;
    let c_oo = cov.view((0, 0), (n_obs, n_obs)).into_owned();
    let c_to = cov.view((n_obs, 0), (n_t, n_obs)).into_owned();
    let c_tt = cov.view((n_obs, n_obs), (n_t, n_t)).into_owned();
    let w = gauss_solve(&c_oo, &c_to.transpose());
    let obs = DMatrix::from_column_slice(n_obs, 1, observed.as_slice());
    let mean = w.transpose() * obs;
    let var = c_tt - &c_to * &w;
    (DVector::from_column_slice(mean.as_slice()), var)
}

/// Independent posterior at `k_test` for a database with identity output correlation.
///
/// The joint vector orders all outputs of each observation time, then the test time.
pub fn gpr_oracle(db: &GprDatabase, k_test: i64, hp: &GprHyperparams, dim: usize) -> (DVector<f64>, DMatrix<f64>) {
    let times: Vec<f64> = db.iter().map(|(t, _)| *t as f64).chain([k_test as f64]).collect();
    let n = db.len();
    let total = (n + 1) * dim;
    let kern = |a: f64, b: f64| hp.h * hp.h * (-((a - b) / hp.lambda).powi(2)).exp();
    let cov = DMatrix::from_fn(total, total, |r, c| {
        let (i, d) = (r / dim, r % dim);
        let (j, e) = (c / dim, c % dim);
        if d != e {
            return 0.0;
        }
        let noise = if i == j && i < n { hp.jitter } else { 0.0 };
        kern(times[i], times[j]) + noise
    });
    let obs = DVector::from_iterator(n * dim, db.iter().flat_map(|(_, v)| v.iter().copied()));
    condition(&cov, n * dim, &obs)
}

/// Posterior of `x ~ N(0, sigma)` given `y = sqrt(P) H x + n`, `n ~ N(0, N0 I)`.
pub fn mmse_oracle(y: &DVector<f64>, power: f64, channel: &ChannelDraw, sigma: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let d = sigma.nrows();
    let g = DMatrix::from_diagonal(channel.gains()) * power.sqrt();
    // joint vector (y, x)
    let c_yy = &g * sigma * g.transpose() + DMatrix::identity(d, d) * channel.n0();
    let c_yx = &g * sigma;
    let mut cov = DMatrix::zeros(2 * d, 2 * d);
    cov.view_mut((0, 0), (d, d)).copy_from(&c_yy);
    cov.view_mut((0, d), (d, d)).copy_from(&c_yx);
    cov.view_mut((d, 0), (d, d)).copy_from(&c_yx.transpose());
    cov.view_mut((d, d), (d, d)).copy_from(sigma);
    condition(&cov, d, y)
}

pub fn random_spd<R: Rng>(rng: &mut R, d: usize) -> DMatrix<f64> {
    let l: DMatrix<f64> = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    (&l * l.transpose()) / d as f64 + DMatrix::<f64>::identity(d, d) * 0.1
}

pub fn random_vector<R: Rng>(rng: &mut R, d: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(d, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

/// Database with `n` strictly increasing integer times and values of dimension `dim`.
pub fn random_database<R: Rng>(rng: &mut R, n: usize, dim: usize) -> GprDatabase {
    let mut db = GprDatabase::new(64);
    let mut t: i64 = rng.random_range(0..50);
    for _ in 0..n {
        db.push(t, random_vector(rng, dim, 1.0)).unwrap();
        t += rng.random_range(1..8);
    }
    db
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}
