//! Block-fading uplink with analog uncoded transmission and MMSE reception.
//!
//! Each loop owns `D` parallel orthogonal subchannels. Gains are real
//! Rayleigh magnitudes with unit mean power, redrawn independently every
//! slot. The controller knows the gains exactly.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDraw {
    gains: DVector<f64>,
    n0: f64,
}

impl ChannelDraw {
    pub fn new(gains: DVector<f64>, n0: f64) -> Self {
        assert!(n0 > 0.0, "noise level must be positive");
        assert!(gains.iter().all(|g| *g >= 0.0), "channel gains must be non-negative");
        Self { gains, n0 }
    }

    pub fn gains(&self) -> &DVector<f64> {
        &self.gains
    }

    pub fn n0(&self) -> f64 {
        self.n0
    }

    pub fn dim(&self) -> usize {
        self.gains.len()
    }

    /// Diagonal channel matrix `H`.
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.gains)
    }

    /// Squared Frobenius norm of `H`.
    pub fn norm_sq(&self) -> f64 {
        self.gains.norm_squared()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadioParams {
    pub p_max: f64,
    /// Linear (not dB) decoding threshold.
    pub snr_th: f64,
    pub n0: f64,
    /// Prior state covariance assumed by the estimator.
    pub sigma_x: DMatrix<f64>,
}

impl RadioParams {
    pub fn with_identity_prior(p_max: f64, snr_th: f64, n0: f64, dim: usize) -> Self {
        Self { p_max, snr_th, n0, sigma_x: DMatrix::identity(dim, dim) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmseResult {
    pub x_bar: DVector<f64>,
    pub v: DMatrix<f64>,
    pub tr_v: f64,
}

/// Independent Rayleigh gains with `E[h^2] = 1` on each of `dim` subchannels.
pub fn draw_channel<R: Rng + ?Sized>(rng: &mut R, dim: usize, n0: f64) -> ChannelDraw {
    let gains = DVector::from_fn(dim, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        ((re * re + im * im) * 0.5).sqrt()
    });
    ChannelDraw::new(gains, n0)
}

/// Received SNR `P ||H||_F^2 / N0`.
pub fn snr(power: f64, channel: &ChannelDraw) -> f64 {
    power * channel.norm_sq() / channel.n0
}

pub fn success(snr_value: f64, snr_th: f64) -> bool {
    snr_value >= snr_th
}

/// `y = sqrt(P) H x + n`, `n ~ N(0, N0 I)`.
pub fn transmit<R: Rng + ?Sized>(x: &DVector<f64>, power: f64, channel: &ChannelDraw, rng: &mut R) -> DVector<f64> {
    let sd = channel.n0.sqrt();
    let noise = DVector::from_fn(x.len(), |_, _| sd * rng.sample::<f64, _>(StandardNormal));
    transmit_with_noise(x, power, channel, &noise)
}

pub fn transmit_with_noise(x: &DVector<f64>, power: f64, channel: &ChannelDraw, noise: &DVector<f64>) -> DVector<f64> {
    assert!(power >= 0.0, "negative transmit power");
    x.component_mul(&channel.gains) * power.sqrt() + noise
}

// Cholesky factor of the innovation covariance `P H Sx H' + N0 I`.
fn innovation(power: f64, channel: &ChannelDraw, sigma_x: &DMatrix<f64>) -> Result<(DMatrix<f64>, nalgebra::Cholesky<f64, nalgebra::Dyn>)> {
    let d = channel.dim();
    if sigma_x.shape() != (d, d) {
        return Err(Error::Dimension(format!("Sigma_x is {:?}, channel has {d} subchannels", sigma_x.shape())));
    }
    if power < 0.0 {
        return Err(Error::Dimension(format!("negative power {power}")));
    }
    let h = channel.matrix();
    let sx_ht = sigma_x * h.transpose();
    let s = (&h * &sx_ht) * power + DMatrix::identity(d, d) * channel.n0;
    let chol = s.cholesky().ok_or(Error::Singular("MMSE innovation covariance"))?;
    Ok((sx_ht, chol))
}

/// Estimation error covariance `V`. It depends only on the power, the channel
/// and the prior, so it is available before anything is transmitted.
pub fn mmse_error_cov(power: f64, channel: &ChannelDraw, sigma_x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (sx_ht, chol) = innovation(power, channel, sigma_x)?;
    let gain_t = chol.solve(&sx_ht.transpose());
    let v = sigma_x - &sx_ht * gain_t * power;
    Ok((&v + v.transpose()) * 0.5)
}

/// Linear-Gaussian conditional mean of `x` given `y`, and its error covariance.
pub fn mmse_estimate(y: &DVector<f64>, power: f64, channel: &ChannelDraw, sigma_x: &DMatrix<f64>) -> Result<MmseResult> {
    if y.len() != channel.dim() {
        return Err(Error::Dimension(format!("y has {} entries, channel has {}", y.len(), channel.dim())));
    }
    let (sx_ht, chol) = innovation(power, channel, sigma_x)?;
    let x_bar = &sx_ht * chol.solve(y) * power.sqrt();
    let gain_t = chol.solve(&sx_ht.transpose());
    let v = sigma_x - &sx_ht * gain_t * power;
    let v = (&v + v.transpose()) * 0.5;
    let tr_v = v.trace();
    Ok(MmseResult { x_bar, v, tr_v })
}
