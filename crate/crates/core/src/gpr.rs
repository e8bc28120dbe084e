//! Multi-output Gaussian process regression over slot time.
//!
//! The kernel is separable: a squared-exponential kernel on time times an
//! identity output-correlation matrix. With identity coregionalization the
//! `nD x nD` block system decouples into `D` scalar GPs that share one
//! `n x n` time Gram matrix, which is what [`predict`] solves. The full block
//! form is kept in [`predict_dense`] for cross-checking.

use std::collections::VecDeque;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub const DEFAULT_WINDOW: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GprHyperparams {
    /// Output scale, in state units.
    pub h: f64,
    /// Time length-scale, in slots.
    pub lambda: f64,
    /// Diagonal regularizer added to the Gram matrix.
    pub jitter: f64,
}

impl GprHyperparams {
    /// Jitter defaults to `1e-4 h^2`.
    pub fn new(h: f64, lambda: f64) -> Self {
        Self { h, lambda, jitter: 1e-4 * h * h }
    }
}

impl Default for GprHyperparams {
    fn default() -> Self {
        Self::new(1.0, 20.0)
    }
}

/// `h^2 exp(-((t1 - t2) / lambda)^2)`
pub fn se_kernel(t1: f64, t2: f64, hp: &GprHyperparams) -> f64 {
    let r = (t1 - t2) / hp.lambda;
    hp.h * hp.h * (-r * r).exp()
}

/// Sliding window of received `(slot, estimate)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct GprDatabase {
    entries: VecDeque<(i64, DVector<f64>)>,
    w_max: usize,
}

impl GprDatabase {
    pub fn new(w_max: usize) -> Self {
        assert!(w_max >= 1, "window must hold at least one entry");
        Self { entries: VecDeque::with_capacity(w_max), w_max }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.w_max
    }

    pub fn last_time(&self) -> Option<i64> {
        self.entries.back().map(|(t, _)| *t)
    }

    pub fn iter(&self) -> impl Iterator<Item = &(i64, DVector<f64>)> {
        self.entries.iter()
    }

    /// Appends an entry, evicting the oldest one when the window is full.
    pub fn push(&mut self, t: i64, value: DVector<f64>) -> Result<()> {
        if let Some(last) = self.last_time() {
            if t <= last {
                return Err(Error::NonIncreasingTime { last, new: t });
            }
        }
        if let Some((_, first)) = self.entries.front() {
            if first.len() != value.len() {
                return Err(Error::Dimension(format!("value has {} outputs, database holds {}", value.len(), first.len())));
            }
        }
        if self.entries.len() == self.w_max {
            self.entries.pop_front();
        }
        self.entries.push_back((t, value));
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GprPrediction {
    pub x_hat: DVector<f64>,
    pub k_star: DMatrix<f64>,
    pub tr_k: f64,
}

impl GprPrediction {
    fn prior(dim: usize, hp: &GprHyperparams) -> Self {
        let var = hp.h * hp.h;
        Self { x_hat: DVector::zeros(dim), k_star: DMatrix::identity(dim, dim) * var, tr_k: var * dim as f64 }
    }
}

/// Factorized time Gram matrix of a database. Valid until the next push.
#[derive(Debug, Clone)]
pub struct GramFactor {
    times: Vec<f64>,
    // n x D, one stored estimate per row
    values: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    hp: GprHyperparams,
}

impl GramFactor {
    /// `None` for an empty database.
    pub fn new(db: &GprDatabase, hp: &GprHyperparams) -> Result<Option<Self>> {
        let n = db.len();
        if n == 0 {
            return Ok(None);
        }
        let times: Vec<f64> = db.iter().map(|(t, _)| *t as f64).collect();
        let dim = db.iter().next().map(|(_, v)| v.len()).unwrap_or(0);
        let values = DMatrix::from_fn(n, dim, |i, d| db.entries[i].1[d]);
        let gram = DMatrix::from_fn(n, n, |i, j| {
            se_kernel(times[i], times[j], hp) + if i == j { hp.jitter } else { 0.0 }
        });
        let chol = gram.cholesky().ok_or(Error::Singular("GPR Gram matrix"))?;
        Ok(Some(Self { times, values, chol, hp: *hp }))
    }

    pub fn predict(&self, k_test: i64) -> GprPrediction {
        let dim = self.values.ncols();
        let kt = k_test as f64;
        let k_star = DVector::from_iterator(self.times.len(), self.times.iter().map(|t| se_kernel(kt, *t, &self.hp)));
        let weights = self.chol.solve(&k_star);
        let x_hat = self.values.tr_mul(&weights);
        let kappa = (se_kernel(kt, kt, &self.hp) - k_star.dot(&weights)).max(0.0);
        GprPrediction { x_hat, k_star: DMatrix::identity(dim, dim) * kappa, tr_k: kappa * dim as f64 }
    }
}

/// Posterior mean and covariance at `k_test` (factorized path).
///
/// An empty database returns the zero-mean prior, which needs the output
/// dimension: it is taken from `dim`.
pub fn predict(db: &GprDatabase, k_test: i64, hp: &GprHyperparams, dim: usize) -> Result<GprPrediction> {
    Ok(match GramFactor::new(db, hp)? {
        Some(f) => f.predict(k_test),
        None => GprPrediction::prior(dim, hp),
    })
}

/// Same posterior evaluated with explicit `nD x nD` block matrices.
pub fn predict_dense(db: &GprDatabase, k_test: i64, hp: &GprHyperparams, dim: usize) -> Result<GprPrediction> {
    let n = db.len();
    if n == 0 {
        return Ok(GprPrediction::prior(dim, hp));
    }
    let times: Vec<f64> = db.iter().map(|(t, _)| *t as f64).collect();
    let nd = n * dim;
    // block (i, j) is K(t_i, t_j) * I_D
    let k_nn = DMatrix::from_fn(nd, nd, |r, c| {
        let (i, d) = (r / dim, r % dim);
        let (j, e) = (c / dim, c % dim);
        if d != e {
            0.0
        } else {
            se_kernel(times[i], times[j], hp) + if i == j { hp.jitter } else { 0.0 }
        }
    });
    let kt = k_test as f64;
    let k_kn = DMatrix::from_fn(dim, nd, |d, c| {
        let (j, e) = (c / dim, c % dim);
        if d == e {
            se_kernel(kt, times[j], hp)
        } else {
            0.0
        }
    });
    let f_n = DVector::from_iterator(nd, db.iter().flat_map(|(_, v)| v.iter().copied()));
    let lu = k_nn.lu();
    let alpha = lu.solve(&f_n).ok_or(Error::Singular("GPR block Gram matrix"))?;
    let proj = lu.solve(&k_kn.transpose()).ok_or(Error::Singular("GPR block Gram matrix"))?;
    let x_hat = &k_kn * alpha;
    let k_kk = DMatrix::identity(dim, dim) * se_kernel(kt, kt, hp);
    let k_star = k_kk - &k_kn * proj;
    let k_star = (&k_star + k_star.transpose()) * 0.5;
    let tr_k = k_star.trace();
    Ok(GprPrediction { x_hat, k_star, tr_k })
}
