//! Separable prior covariance: an anisotropic Matérn-3/2 spatial kernel with
//! unit variance times a Matérn-1/2 (Ornstein-Uhlenbeck) temporal kernel
//! carrying the full process variance.
//!
//! The amplitude lives entirely in the temporal factor, so the stationary
//! covariance of the OU state-space representation equals the product
//! kernel's marginal variance.

use crate::error::{Error, Result};
use crate::linalg::{Mat, Scalar};

/// Spatial length scales in degrees. The spatial kernel has unit variance.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialParams<S> {
    pub ell_lon: S,
    pub ell_lat: S,
}

impl<S: Scalar> SpatialParams<S> {
    pub fn new(ell_lon: S, ell_lat: S) -> Result<Self> {
        if ell_lon.val() <= 0.0 || ell_lat.val() <= 0.0 {
            return Err(Error::invalid("spatial length scales must be positive"));
        }
        Ok(SpatialParams { ell_lon, ell_lat })
    }
}

/// Temporal length scale (ka) and process standard deviation (°C).
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalParams<S> {
    pub ell_t: S,
    pub sigma_f: S,
}

impl<S: Scalar> TemporalParams<S> {
    pub fn new(ell_t: S, sigma_f: S) -> Result<Self> {
        if ell_t.val() <= 0.0 || sigma_f.val() <= 0.0 {
            return Err(Error::invalid(
                "temporal length scale and sigma_f must be positive",
            ));
        }
        Ok(TemporalParams { ell_t, sigma_f })
    }
}

/// Anisotropic Matérn-3/2: (1 + √3 r) exp(−√3 r) with
/// r² = (Δlon/ℓ_lon)² + (Δlat/ℓ_lat)².
pub fn eval_spatial<S: Scalar>(x1: (S, S), x2: (S, S), p: &SpatialParams<S>) -> Result<S> {
    for c in [&x1.0, &x1.1, &x2.0, &x2.1] {
        if !c.val().is_finite() {
            return Err(Error::invalid("non-finite spatial coordinate"));
        }
    }
    let dlon = (x1.0 - x2.0) / p.ell_lon.clone();
    let dlat = (x1.1 - x2.1) / p.ell_lat.clone();
    let r2 = dlon.clone() * dlon + dlat.clone() * dlat;
    if r2.val() == 0.0 {
        // k = 1 − (3/2) r² + O(r³): smooth in r², while √r² is not
        return Ok(S::one() - S::from_f64(1.5) * r2);
    }
    let s3r = (S::from_f64(3.0) * r2).sqrt();
    Ok((S::one() + s3r.clone()) * (-s3r).exp())
}

/// OU covariance σ_f² exp(−|dt|/ℓ_t), in °C².
pub fn eval_temporal<S: Scalar>(dt: S, p: &TemporalParams<S>) -> Result<S> {
    if !dt.val().is_finite() {
        return Err(Error::invalid("non-finite time gap"));
    }
    let sf2 = p.sigma_f.clone() * p.sigma_f.clone();
    Ok(sf2 * (-(dt.abs() / p.ell_t.clone())).exp())
}

/// Cross-covariance matrix between two coordinate lists. When `x1` and `x2`
/// are the same list (a self-gram), pass `jitter > 0`; it is added to the
/// diagonal to keep the Cholesky factorization stable.
pub fn spatial_gram<S: Scalar>(
    x1: &[(S, S)],
    x2: &[(S, S)],
    p: &SpatialParams<S>,
    jitter: Option<f64>,
) -> Result<Mat<S>> {
    if x1.is_empty() || x2.is_empty() {
        return Err(Error::invalid("spatial_gram called with empty point list"));
    }
    let mut out = Mat::zeros(x1.len(), x2.len());
    for (i, a) in x1.iter().enumerate() {
        for (j, b) in x2.iter().enumerate() {
            out[(i, j)] = eval_spatial(a.clone(), b.clone(), p)?;
        }
    }
    if let Some(jit) = jitter {
        if x1.len() != x2.len() {
            return Err(Error::invalid("jitter only applies to square self-grams"));
        }
        for i in 0..x1.len() {
            out[(i, i)] = out[(i, i)].clone() + S::from_f64(jit);
        }
    }
    Ok(out)
}

/// Exact state-space form of the OU temporal kernel (d = 1).
#[derive(Clone, Debug)]
pub struct StateSpaceRep<S> {
    params: TemporalParams<S>,
}

impl<S: Scalar> StateSpaceRep<S> {
    pub fn state_dim(&self) -> usize {
        1
    }

    /// Emission row vector H.
    pub fn emission(&self) -> Mat<S> {
        Mat::identity(1)
    }

    /// Stationary covariance P∞ = [σ_f²].
    pub fn stationary_cov(&self) -> Mat<S> {
        let sf2 = self.params.sigma_f.clone() * self.params.sigma_f.clone();
        let mut m = Mat::zeros(1, 1);
        m[(0, 0)] = sf2;
        m
    }

    /// A(Δ) = [exp(−Δ/ℓ_t)], Δ ≥ 0.
    pub fn transition(&self, dt: S) -> Result<Mat<S>> {
        let mut m = Mat::zeros(1, 1);
        m[(0, 0)] = self.transition_scalar(dt)?;
        Ok(m)
    }

    /// Q(Δ) = [σ_f² (1 − exp(−2Δ/ℓ_t))], Δ ≥ 0.
    pub fn process_noise(&self, dt: S) -> Result<Mat<S>> {
        let a = self.transition_scalar(dt)?;
        let sf2 = self.params.sigma_f.clone() * self.params.sigma_f.clone();
        let mut m = Mat::zeros(1, 1);
        m[(0, 0)] = sf2 * (S::one() - a.clone() * a);
        Ok(m)
    }

    /// Scalar decay factor exp(−Δ/ℓ_t); the d = 1 transition.
    pub fn transition_scalar(&self, dt: S) -> Result<S> {
        if dt.val() < 0.0 || !dt.val().is_finite() {
            return Err(Error::invalid("time gap must be finite and >= 0"));
        }
        Ok((-(dt / self.params.ell_t.clone())).exp())
    }

    pub fn params(&self) -> &TemporalParams<S> {
        &self.params
    }
}

/// Build the OU state-space representation from temporal parameters.
pub fn ou_state_space<S: Scalar>(p: &TemporalParams<S>) -> StateSpaceRep<S> {
    StateSpaceRep { params: p.clone() }
}
