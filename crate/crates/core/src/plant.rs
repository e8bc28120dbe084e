//! Linear time-invariant plant, LQR synthesis and the cart-pole instance.
//!
//! Every loop in the simulator is `x' = A x + B u + w` with `w ~ N(0, W)`,
//! closed through `u = -Phi x_est`, where the estimate is either the
//! received MMSE estimate or the local GPR prediction.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Index of the pendulum angle (rad) in the cart-pole state vector.
pub const PENDULUM_ANGLE: usize = 2;

/// Sampling period of the discretized plant, in seconds.
pub const SAMPLE_PERIOD_S: f64 = 0.01;

pub const DEFAULT_NOISE_VAR: f64 = 0.01;

const PSD_TOL: f64 = 1e-9;
const RICCATI_MAX_ITERS: usize = 10_000;
const RICCATI_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct LqrWeights {
    pub state: DMatrix<f64>,
    pub input: DMatrix<f64>,
}

impl LqrWeights {
    /// `Qw = I`, `Rw = I`.
    pub fn identity(state_dim: usize, input_dim: usize) -> Self {
        Self {
            state: DMatrix::identity(state_dim, state_dim),
            input: DMatrix::identity(input_dim, input_dim),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    w: DMatrix<f64>,
    phi: DMatrix<f64>,
    // Symmetric square root of W, used to colour unit normals.
    noise_factor: DMatrix<f64>,
}

impl PlantModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, w: DMatrix<f64>, phi: DMatrix<f64>) -> Result<Self> {
        let d = a.nrows();
        if !a.is_square() {
            return Err(Error::Dimension(format!("A is {}x{}", a.nrows(), a.ncols())));
        }
        let p = b.ncols();
        if b.nrows() != d {
            return Err(Error::Dimension(format!("B has {} rows, expected {d}", b.nrows())));
        }
        if w.shape() != (d, d) {
            return Err(Error::Dimension(format!("W is {:?}, expected ({d}, {d})", w.shape())));
        }
        if phi.shape() != (p, d) {
            return Err(Error::Dimension(format!("Phi is {:?}, expected ({p}, {d})", phi.shape())));
        }
        let noise_factor = psd_sqrt(&w)?;
        Ok(Self { a, b, w, phi, noise_factor })
    }

    /// Builds the model and synthesizes its LQR gain.
    pub fn with_lqr(a: DMatrix<f64>, b: DMatrix<f64>, w: DMatrix<f64>, weights: &LqrWeights) -> Result<Self> {
        let phi = lqr_gain(&a, &b, weights)?;
        Self::new(a, b, w, phi)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn noise_cov(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// `A - B Phi`.
    pub fn closed_loop(&self) -> DMatrix<f64> {
        &self.a - &self.b * &self.phi
    }

    /// Induced 2-norm of the closed loop. Diagnostic only: it can exceed 1
    /// even when the spectral radius is below 1.
    pub fn closed_loop_norm2(&self) -> f64 {
        self.closed_loop().svd(false, false).singular_values.max()
    }

    /// Zero-mean Gaussian draw with covariance `W`.
    pub fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.state_dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.noise_factor * z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub x: DVector<f64>,
    pub k: u64,
}

impl PlantState {
    pub fn new(x: DVector<f64>) -> Self {
        Self { x, k: 0 }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().all(|v| v.is_finite())
    }
}

/// `x' = A x + B u + w`, advancing the slot index.
pub fn step(model: &PlantModel, state: &PlantState, u: &DVector<f64>, w: &DVector<f64>) -> Result<PlantState> {
    let d = model.state_dim();
    if state.x.len() != d || w.len() != d || u.len() != model.input_dim() {
        return Err(Error::Dimension(format!(
            "step: x={}, u={}, w={} for D={d}, p={}",
            state.x.len(),
            u.len(),
            w.len(),
            model.input_dim()
        )));
    }
    let x = &model.a * &state.x + &model.b * u + w;
    Ok(PlantState { x, k: state.k + 1 })
}

/// Draws plant noise for an arbitrary PSD covariance.
pub fn draw_plant_noise<R: Rng + ?Sized>(rng: &mut R, w: &DMatrix<f64>) -> Result<DVector<f64>> {
    let factor = psd_sqrt(w)?;
    let z = DVector::from_fn(w.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(factor * z)
}

/// Symmetric square root `U sqrt(L) U^T` of a PSD matrix.
fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::Dimension(format!("covariance is {}x{}", m.nrows(), m.ncols())));
    }
    let sym = (m + m.transpose()) * 0.5;
    if (&sym - m).amax() > 1e-9 * (1.0 + m.amax()) {
        return Err(Error::NotPsd { min_eigenvalue: f64::NAN });
    }
    let eig = sym.symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min < -PSD_TOL {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// Fixed point of the discrete algebraic Riccati equation by value
/// iteration from `P0 = Qw`.
pub fn solve_dare(a: &DMatrix<f64>, b: &DMatrix<f64>, weights: &LqrWeights) -> Result<DMatrix<f64>> {
    let d = a.nrows();
    let p = b.ncols();
    if !a.is_square() || b.nrows() != d || weights.state.shape() != (d, d) || weights.input.shape() != (p, p) {
        return Err(Error::Dimension("lqr: A, B, Qw, Rw shapes disagree".into()));
    }
    let at = a.transpose();
    let bt = b.transpose();
    let mut pm = weights.state.clone();
    let mut rel = f64::INFINITY;
    for _ in 0..RICCATI_MAX_ITERS {
        let next = riccati_map(a, &at, b, &bt, &pm, weights)?;
        rel = (&next - &pm).norm() / next.norm().max(f64::MIN_POSITIVE);
        pm = (&next + next.transpose()) * 0.5;
        if rel < RICCATI_REL_TOL {
            return Ok(pm);
        }
    }
    Err(Error::RiccatiDiverged { iterations: RICCATI_MAX_ITERS, residual: rel })
}

/// One application of `P -> A'PA - A'PB (R + B'PB)^-1 B'PA + Q`.
pub fn riccati_map(
    a: &DMatrix<f64>,
    at: &DMatrix<f64>,
    b: &DMatrix<f64>,
    bt: &DMatrix<f64>,
    pm: &DMatrix<f64>,
    weights: &LqrWeights,
) -> Result<DMatrix<f64>> {
    let pa = pm * a;
    let s = &weights.input + bt * pm * b;
    let chol = s.cholesky().ok_or(Error::Singular("R + B'PB"))?;
    let gain = chol.solve(&(bt * &pa));
    Ok(at * &pa - at * pm * b * gain + &weights.state)
}

/// LQR feedback gain `Phi = (R + B'PB)^-1 B'PA`.
pub fn lqr_gain(a: &DMatrix<f64>, b: &DMatrix<f64>, weights: &LqrWeights) -> Result<DMatrix<f64>> {
    let pm = solve_dare(a, b, weights)?;
    let bt = b.transpose();
    let s = &weights.input + &bt * &pm * b;
    let chol = s.cholesky().ok_or(Error::Singular("R + B'PB"))?;
    Ok(chol.solve(&(bt * pm * a)))
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    assert!(m.is_square(), "spectral radius of a non-square matrix");
    if m.is_empty() {
        return 0.0;
    }
    m.complex_eigenvalues().iter().map(|l| l.norm()).fold(0.0, f64::max)
}

/// `u = -Phi x_bar` in remote-control mode, `u = -Phi x_hat` otherwise.
pub fn control_input(model: &PlantModel, delivered: bool, x_bar: &DVector<f64>, x_hat: &DVector<f64>) -> DVector<f64> {
    let est = if delivered { x_bar } else { x_hat };
    -(model.gain() * est)
}

pub fn pendulum_matrices() -> (DMatrix<f64>, DMatrix<f64>) {
    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(4, 4, &[
        1.0, 0.0,    0.0,   0.0,
        0.0, 2.055, -0.722, 4.828,
        0.0, 0.023,  0.91,  0.037,
        0.0, 0.677, -0.453, 2.055,
    ]);
    let b = DMatrix::from_column_slice(4, 1, &[0.034, 0.168, 0.019, 0.105]);
    (a, b)
}

/// Cart-pole discretized at 10 ms, `W = 0.01 I`, LQR with `Qw = I`, `Rw = 0.1`.
pub fn make_pendulum() -> PlantModel {
    make_pendulum_with_noise(DEFAULT_NOISE_VAR).expect("pendulum model is well formed")
}

pub fn make_pendulum_with_noise(noise_var: f64) -> Result<PlantModel> {
    let (a, b) = pendulum_matrices();
    let w = DMatrix::identity(4, 4) * noise_var;
    PlantModel::with_lqr(a, b, w, &pendulum_weights())
}

/// `Qw = I`, `Rw = 0.1`: the closed loop contracts an initial tilt by 1e3 within 100 slots.
pub fn pendulum_weights() -> LqrWeights {
    LqrWeights { state: DMatrix::identity(4, 4), input: DMatrix::from_element(1, 1, 0.1) }
}
