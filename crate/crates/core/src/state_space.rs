//! Exact linear-time Gaussian inference over Markov chains: Kalman filter,
//! RTS smoother, chain-to-chain KL divergence, and the two-sided bridge
//! conditional used for prediction between temporal knots.
//!
//! Sites (the per-knot variational factors) are kept in natural form
//! (λ1, Λ2). Λ2 may be singular (a zero site is a valid no-op factor), so the
//! measurement update uses the square-root form
//! `P⁺ = L (I + Lᵀ Λ2 L)⁻¹ Lᵀ` with `P⁻ = L Lᵀ`, which stays symmetric PSD
//! for any PSD Λ2. Covariances are re-symmetrized after every step and
//! Cholesky failures surface as errors naming the step, never as silent
//! regularization.

use crate::error::{Error, Result};
use crate::linalg::{dot, vec_add, vec_sub, Mat, Scalar};

/// Stationary between-knot dynamics, needed to condition at off-knot times.
#[derive(Clone, Debug)]
pub enum Dynamics<S> {
    /// Kronecker OU: A(Δ) = exp(−Δ/ℓ_t)·I and Q(Δ) = (1 − exp(−2Δ/ℓ_t))·P₀.
    /// Scalar OU chains are the n = 1 case.
    OuKronecker { ell_t: S },
    /// Transition matrices are only known at the knot gaps; bridge queries at
    /// arbitrary times are not available.
    Explicit,
}

/// Gaussian Markov prior over the inducing states.
#[derive(Clone, Debug)]
pub struct LinearGaussianChain<S> {
    times: Vec<f64>,
    state_dim: usize,
    transitions: Vec<Mat<S>>,
    noises: Vec<Mat<S>>,
    initial_cov: Mat<S>,
    initial_mean: Vec<S>,
    dynamics: Dynamics<S>,
}

impl<S: Scalar> LinearGaussianChain<S> {
    pub fn from_parts(
        times: Vec<f64>,
        transitions: Vec<Mat<S>>,
        noises: Vec<Mat<S>>,
        initial_cov: Mat<S>,
        dynamics: Dynamics<S>,
    ) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::invalid("chain needs at least one knot"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(
                "knot times must be strictly increasing (duplicates rejected)",
            ));
        }
        let n = initial_cov.nrows();
        if initial_cov.ncols() != n {
            return Err(Error::invalid("initial covariance must be square"));
        }
        if transitions.len() != times.len() - 1 || noises.len() != times.len() - 1 {
            return Err(Error::invalid("need one transition/noise per knot gap"));
        }
        for m in transitions.iter().chain(noises.iter()) {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::invalid("transition/noise dimension mismatch"));
            }
        }
        Ok(LinearGaussianChain {
            times,
            state_dim: n,
            transitions,
            noises,
            initial_cov,
            initial_mean: vec![S::zero(); n],
            dynamics,
        })
    }

    /// Stationary chain with Kronecker OU dynamics: P₀ given, A_j = a_j I,
    /// Q_j = (1 − a_j²) P₀ with a_j = exp(−Δτ_j/ℓ_t).
    pub fn stationary_ou_kron(times: Vec<f64>, ell_t: S, p0: Mat<S>) -> Result<Self> {
        let n = p0.nrows();
        let mut transitions = Vec::new();
        let mut noises = Vec::new();
        for w in times.windows(2) {
            let dt = S::from_f64(w[1] - w[0]);
            let a = (-(dt / ell_t.clone())).exp();
            let a2 = a.clone() * a.clone();
            transitions.push(Mat::identity(n).scale(a));
            noises.push(p0.scale(S::one() - a2));
        }
        Self::from_parts(times, transitions, noises, p0, Dynamics::OuKronecker { ell_t })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn num_knots(&self) -> usize {
        self.times.len()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn transition(&self, j: usize) -> &Mat<S> {
        &self.transitions[j]
    }

    pub fn noise(&self, j: usize) -> &Mat<S> {
        &self.noises[j]
    }

    pub fn initial_cov(&self) -> &Mat<S> {
        &self.initial_cov
    }

    pub fn initial_mean(&self) -> &[S] {
        &self.initial_mean
    }

    pub fn dynamics(&self) -> &Dynamics<S> {
        &self.dynamics
    }
}

/// Per-knot Gaussian factor in natural form: exp(λ1ᵀs − ½ sᵀ Λ2 s).
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSite<S> {
    pub lambda1: Vec<S>,
    pub lambda2: Mat<S>,
}

impl<S: Scalar> GaussianSite<S> {
    pub fn zero(n: usize) -> Self {
        GaussianSite {
            lambda1: vec![S::zero(); n],
            lambda2: Mat::zeros(n, n),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.lambda1.iter().all(|x| x.val() == 0.0) && self.lambda2.max_abs() == 0.0
    }
}

/// Smoothed posterior of a sited chain.
#[derive(Clone, Debug)]
pub struct ChainPosterior<S> {
    pub smoothed_means: Vec<Vec<S>>,
    pub smoothed_covs: Vec<Mat<S>>,
    /// Cov(s_j, s_{j+1}) under the posterior, one per knot gap.
    pub pair_cross_covs: Vec<Mat<S>>,
    /// log ∫ p(u) ∏_j exp(λ1_jᵀ s_j − ½ s_jᵀ Λ2_j s_j) du.
    ///
    /// Sites carry no normalizing constants of their own; when they are built
    /// from Gaussian observations, the per-observation constants
    /// −½ log(2πR) − y²/(2R) must be added to recover a marginal likelihood.
    pub log_normalizer: S,
}

struct FilterStep<S> {
    pred_mean: Vec<S>,
    pred_chol: crate::linalg::Chol<S>,
    filt_mean: Vec<S>,
    filt_cov: Mat<S>,
}

fn filter_update<S: Scalar>(
    pred_mean: &[S],
    pred_cov: &Mat<S>,
    site: &GaussianSite<S>,
    step: usize,
) -> Result<(FilterStep<S>, S)> {
    let n = pred_cov.nrows();
    let chol = pred_cov
        .symmetrized()
        .cholesky()
        .map_err(|e| Error::numerical(format!("filter step {step}"), e.to_string()))?;
    let l = chol.factor().clone();
    // G = I + Lᵀ Λ2 L, symmetric positive definite for PSD Λ2
    let g = Mat::identity(n)
        .add(&l.t().matmul(&site.lambda2).matmul(&l))
        .symmetrized();
    let gchol = g
        .cholesky()
        .map_err(|e| Error::numerical(format!("filter step {step}"), e.to_string()))?;
    // P⁺ = L G⁻¹ Lᵀ
    let filt_cov = l.matmul(&gchol.solve_mat(&l.t())).symmetrized();
    // m⁺ = L G⁻¹ (L⁻¹ m⁻ + Lᵀ λ1)
    let u = chol.solve_lower(pred_mean);
    let w = vec_add(&u, &l.t().mat_vec(&site.lambda1));
    let filt_mean = l.mat_vec(&gchol.solve_vec(&w));
    // log ∫ N(s; m⁻, P⁻) exp(λ1ᵀs − ½ sᵀΛ2 s) ds
    //   = −½ log|G| + ½ hᵀ m⁺ − ½ m⁻ᵀ P⁻⁻¹ m⁻,  h = P⁻⁻¹ m⁻ + λ1
    let pinv_m = chol.solve_upper(&u);
    let h = vec_add(&pinv_m, &site.lambda1);
    let half = S::from_f64(0.5);
    let log_c = half.clone() * (dot(&h, &filt_mean) - dot(&u, &u)) - half * gchol.log_det();
    Ok((
        FilterStep {
            pred_mean: pred_mean.to_vec(),
            pred_chol: chol,
            filt_mean,
            filt_cov,
        },
        log_c,
    ))
}

/// Forward Kalman filter plus RTS backward smoother against natural-form
/// sites. Cost is linear in the number of knots and cubic in the state
/// dimension.
pub fn kalman_filter_smooth<S: Scalar>(
    chain: &LinearGaussianChain<S>,
    sites: &[GaussianSite<S>],
) -> Result<ChainPosterior<S>> {
    let m_t = chain.num_knots();
    let n = chain.state_dim();
    if sites.len() != m_t {
        return Err(Error::invalid(format!(
            "expected {m_t} sites, got {}",
            sites.len()
        )));
    }
    for (j, s) in sites.iter().enumerate() {
        if s.lambda1.len() != n || s.lambda2.nrows() != n || s.lambda2.ncols() != n {
            return Err(Error::invalid(format!("site {j} dimension mismatch")));
        }
    }

    // forward pass
    let mut steps: Vec<FilterStep<S>> = Vec::with_capacity(m_t);
    let mut log_norm = S::zero();
    for j in 0..m_t {
        let (pred_mean, pred_cov) = if j == 0 {
            (chain.initial_mean().to_vec(), chain.initial_cov().clone())
        } else {
            let a = chain.transition(j - 1);
            let prev = &steps[j - 1];
            let m = a.mat_vec(&prev.filt_mean);
            let p = a
                .matmul(&prev.filt_cov)
                .matmul(&a.t())
                .add(chain.noise(j - 1));
            (m, p)
        };
        let (step, log_c) = filter_update(&pred_mean, &pred_cov, &sites[j], j)?;
        log_norm = log_norm + log_c;
        steps.push(step);
    }

    // backward RTS pass
    let mut means = vec![Vec::new(); m_t];
    let mut covs = vec![Mat::zeros(0, 0); m_t];
    let mut crosses = vec![Mat::zeros(0, 0); m_t.saturating_sub(1)];
    means[m_t - 1] = steps[m_t - 1].filt_mean.clone();
    covs[m_t - 1] = steps[m_t - 1].filt_cov.clone();
    for j in (0..m_t.saturating_sub(1)).rev() {
        let next = &steps[j + 1];
        let a = chain.transition(j);
        // gain G_j = P_j Aᵀ (P⁻_{j+1})⁻¹
        let gain = next.pred_chol.solve_mat(&a.matmul(&steps[j].filt_cov)).t();
        let mean = vec_add(
            &steps[j].filt_mean,
            &gain.mat_vec(&vec_sub(&means[j + 1], &next.pred_mean)),
        );
        let pred_cov = {
            let l = next.pred_chol.factor();
            l.matmul(&l.t())
        };
        let cov = steps[j]
            .filt_cov
            .add(&gain.matmul(&covs[j + 1].sub(&pred_cov)).matmul(&gain.t()))
            .symmetrized();
        crosses[j] = gain.matmul(&covs[j + 1]); // Cov(s_j, s_{j+1}) = G_j S_{j+1}
        means[j] = mean;
        covs[j] = cov;
    }

    Ok(ChainPosterior {
        smoothed_means: means,
        smoothed_covs: covs,
        pair_cross_covs: crosses,
        log_normalizer: log_norm,
    })
}

/// Exact KL(q ‖ p) between the smoothed Markov posterior `q` and the prior
/// chain `p`, accumulated over the initial marginal and the per-gap
/// conditionals.
pub fn chain_kl<S: Scalar>(q: &ChainPosterior<S>, p: &LinearGaussianChain<S>) -> Result<S> {
    let m_t = p.num_knots();
    let n = p.state_dim();
    if q.smoothed_means.len() != m_t || q.pair_cross_covs.len() + 1 != m_t.max(1) {
        return Err(Error::invalid("posterior/chain knot count mismatch"));
    }
    if q.smoothed_covs[0].nrows() != n {
        return Err(Error::invalid("posterior/chain state dimension mismatch"));
    }
    let half = S::from_f64(0.5);
    let nf = S::from_f64(n as f64);

    // KL(q(s_1) ‖ p(s_1)), p(s_1) = N(0, P₀)
    let p0c = p
        .initial_cov()
        .cholesky()
        .map_err(|e| Error::numerical("chain_kl initial", e.to_string()))?;
    let s1c = q.smoothed_covs[0]
        .cholesky()
        .map_err(|e| Error::numerical("chain_kl initial", e.to_string()))?;
    let m1 = &q.smoothed_means[0];
    let mut kl = half.clone()
        * (p0c.solve_mat(&q.smoothed_covs[0]).trace() + dot(m1, &p0c.solve_vec(m1)) - nf.clone()
            + p0c.log_det()
            - s1c.log_det());

    for j in 0..m_t - 1 {
        let sj = &q.smoothed_covs[j];
        let sj1 = &q.smoothed_covs[j + 1];
        let cj = &q.pair_cross_covs[j];
        let sjc = sj
            .cholesky()
            .map_err(|e| Error::numerical(format!("chain_kl gap {j}"), e.to_string()))?;
        // q conditional: s_{j+1}|s_j ~ N(F s_j + b, Qq)
        let f = sjc.solve_mat(cj).t(); // Cᵀ S_j⁻¹
        let qq = sj1.sub(&f.matmul(cj)).symmetrized();
        let qp = p.noise(j);
        let qpc = qp
            .cholesky()
            .map_err(|e| Error::numerical(format!("chain_kl gap {j}"), e.to_string()))?;
        let qqc = qq
            .cholesky()
            .map_err(|e| Error::numerical(format!("chain_kl gap {j}"), e.to_string()))?;
        let a = p.transition(j);
        let delta = vec_sub(&q.smoothed_means[j + 1], &a.mat_vec(&q.smoothed_means[j]));
        let d = f.sub(a);
        kl = kl
            + half.clone()
                * (qpc.solve_mat(&qq).trace() - nf.clone() + qpc.log_det() - qqc.log_det()
                    + dot(&delta, &qpc.solve_vec(&delta))
                    + qpc.solve_mat(&d.matmul(sj).matmul(&d.t())).trace());
    }

    // exact-zero clamp for the q = p case, where roundoff can leave a tiny
    // negative residue
    if kl.val() < 0.0 {
        if kl.val() < -1e-6 {
            return Err(Error::numerical(
                "chain_kl",
                format!("significantly negative KL {}", kl.val()),
            ));
        }
        return Ok(S::zero());
    }
    Ok(kl)
}

/// Conditional of the state at time `t` given its neighbor knots.
#[derive(Clone, Debug)]
pub struct BridgeCoeffs<S> {
    /// Index of the left neighbor knot (τ₋ ≤ t), if any.
    pub left: Option<usize>,
    /// Index of the right neighbor knot (t ≤ τ₊), if any.
    pub right: Option<usize>,
    /// Coefficient on s(τ₋); zero matrix when `left` is `None`.
    pub c_minus: Mat<S>,
    /// Coefficient on s(τ₊); zero matrix when `right` is `None`.
    pub c_plus: Mat<S>,
    /// Gap covariance V of s(t) | neighbors.
    pub v: Mat<S>,
}

/// s(t) | s(τ₋), s(τ₊) ~ N(C₋ s(τ₋) + C₊ s(τ₊), V) for a stationary chain.
/// Outside the knot range the conditional is one-sided Markov extrapolation
/// (C = A(Δ), V = Q(Δ)); exactly on a knot it degenerates to the identity.
pub fn bridge_conditional<S: Scalar>(
    t: f64,
    chain: &LinearGaussianChain<S>,
) -> Result<BridgeCoeffs<S>> {
    let n = chain.state_dim();
    let times = chain.times();
    let ell_t = match chain.dynamics() {
        Dynamics::OuKronecker { ell_t } => ell_t.clone(),
        Dynamics::Explicit => {
            return Err(Error::invalid(
                "bridge_conditional needs stationary OU-Kronecker dynamics",
            ))
        }
    };
    let decay = |gap: f64| -> S { (-(S::from_f64(gap) / ell_t.clone())).exp() };
    let one = S::one;

    // exact knot hit
    if let Ok(j) = times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
        return Ok(BridgeCoeffs {
            left: Some(j),
            right: None,
            c_minus: Mat::identity(n),
            c_plus: Mat::zeros(n, n),
            v: Mat::zeros(n, n),
        });
    }

    let p0 = chain.initial_cov();
    if t < times[0] {
        let a = decay(times[0] - t);
        let a2 = a.clone() * a.clone();
        return Ok(BridgeCoeffs {
            left: None,
            right: Some(0),
            c_minus: Mat::zeros(n, n),
            c_plus: Mat::identity(n).scale(a),
            v: p0.scale(one() - a2),
        });
    }
    let last = times.len() - 1;
    if t > times[last] {
        let a = decay(t - times[last]);
        let a2 = a.clone() * a.clone();
        return Ok(BridgeCoeffs {
            left: Some(last),
            right: None,
            c_minus: Mat::identity(n).scale(a),
            c_plus: Mat::zeros(n, n),
            v: p0.scale(one() - a2),
        });
    }

    // strictly between two knots
    let j = times.partition_point(|x| *x < t) - 1;
    let a = decay(t - times[j]);
    let b = decay(times[j + 1] - t);
    let a2 = a.clone() * a.clone();
    let b2 = b.clone() * b.clone();
    let denom = one() - a2.clone() * b2.clone();
    let c_minus = a.clone() * (one() - b2.clone()) / denom.clone();
    let c_plus = b * (one() - a2.clone()) / denom.clone();
    let v_frac = (one() - a2) * (one() - b2) / denom;
    Ok(BridgeCoeffs {
        left: Some(j),
        right: Some(j + 1),
        c_minus: Mat::identity(n).scale(c_minus),
        c_plus: Mat::identity(n).scale(c_plus),
        v: p0.scale(v_frac),
    })
}
