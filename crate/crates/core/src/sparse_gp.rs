//! The doubly sparse variational model: a Kronecker-structured Markov prior
//! over inducing states, minibatched ELBO, CVI natural-gradient site updates,
//! and posterior prediction at arbitrary (x, t).
//!
//! Everything on the ELBO path is generic over [`Scalar`], so hyperparameter
//! gradients come from running the identical code on dual numbers; finite
//! differences on the `f64` path then validate the same function.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::kernels::{eval_spatial, spatial_gram, SpatialParams, TemporalParams};
use crate::linalg::{dot, quad_form, vec_add, vec_scale, Chol, Dual, Mat, Scalar};
use crate::state_space::{
    bridge_conditional, chain_kl, kalman_filter_smooth, ChainPosterior, GaussianSite,
    LinearGaussianChain,
};

/// Spatial bounding box of the training data, in degrees.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundingBox {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
}

impl BoundingBox {
    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        lon >= self.lon_min && lon <= self.lon_max && lat >= self.lat_min && lat <= self.lat_max
    }

    pub fn clamp(&self, lon: f64, lat: f64) -> (f64, f64) {
        (
            lon.clamp(self.lon_min, self.lon_max),
            lat.clamp(self.lat_min, self.lat_max),
        )
    }

    pub fn from_points<'a>(pts: impl Iterator<Item = (f64, f64)>) -> Result<Self> {
        let mut b = BoundingBox {
            lon_min: f64::INFINITY,
            lon_max: f64::NEG_INFINITY,
            lat_min: f64::INFINITY,
            lat_max: f64::NEG_INFINITY,
        };
        let mut any = false;
        for (lon, lat) in pts {
            any = true;
            b.lon_min = b.lon_min.min(lon);
            b.lon_max = b.lon_max.max(lon);
            b.lat_min = b.lat_min.min(lat);
            b.lat_max = b.lat_max.max(lat);
        }
        if !any {
            return Err(Error::invalid("cannot build bounding box from no points"));
        }
        Ok(b)
    }
}

/// M_s spatial inducing locations and M_t fixed temporal knots.
#[derive(Clone, Debug)]
pub struct InducingStructure<S> {
    pub z_s: Vec<(S, S)>,
    pub t_z: Vec<f64>,
    pub bounding_box: BoundingBox,
}

impl<S: Scalar> InducingStructure<S> {
    pub fn new(z_s: Vec<(S, S)>, t_z: Vec<f64>, bounding_box: BoundingBox) -> Result<Self> {
        if z_s.is_empty() || t_z.is_empty() {
            return Err(Error::invalid("need at least one inducing point and knot"));
        }
        if t_z.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("temporal knots must be strictly increasing"));
        }
        for (lon, lat) in &z_s {
            if !bounding_box.contains(lon.val(), lat.val()) {
                return Err(Error::invalid(format!(
                    "inducing point ({}, {}) outside bounding box",
                    lon.val(),
                    lat.val()
                )));
            }
        }
        Ok(InducingStructure {
            z_s,
            t_z,
            bounding_box,
        })
    }

    pub fn m_s(&self) -> usize {
        self.z_s.len()
    }

    pub fn m_t(&self) -> usize {
        self.t_z.len()
    }
}

impl InducingStructure<f64> {
    /// k-means++-style seeding over the training coordinates plus equally
    /// spaced temporal knots spanning the data's time range (endpoints
    /// included).
    pub fn init_from_data(
        coords: &[(f64, f64)],
        time_range: (f64, f64),
        m_s: usize,
        m_t: usize,
        seed: u64,
    ) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::invalid("no coordinates to initialize from"));
        }
        let bbox = BoundingBox::from_points(coords.iter().copied())?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        // dedupe exact repeats so selected centers are distinct
        let mut unique: Vec<(f64, f64)> = Vec::new();
        for &c in coords {
            if !unique.iter().any(|u| *u == c) {
                unique.push(c);
            }
        }
        if unique.len() < m_s {
            return Err(Error::invalid(format!(
                "only {} distinct coordinates for {m_s} inducing points",
                unique.len()
            )));
        }
        let mut centers: Vec<(f64, f64)> = vec![unique[rng.gen_range(0..unique.len())]];
        let d2 = |a: (f64, f64), b: (f64, f64)| {
            let dx = a.0 - b.0;
            let dy = a.1 - b.1;
            dx * dx + dy * dy
        };
        while centers.len() < m_s {
            let dists: Vec<f64> = unique
                .iter()
                .map(|&p| {
                    centers
                        .iter()
                        .map(|&c| d2(p, c))
                        .fold(f64::INFINITY, f64::min)
                })
                .collect();
            let total: f64 = dists.iter().sum();
            if total <= 0.0 {
                return Err(Error::invalid("degenerate coordinate cloud"));
            }
            let mut target = rng.gen_range(0.0..total);
            let mut pick = unique.len() - 1;
            for (i, d) in dists.iter().enumerate() {
                if target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            centers.push(unique[pick]);
        }

        let (t_lo, t_hi) = time_range;
        if !(t_hi > t_lo) && m_t > 1 {
            return Err(Error::invalid("time range must have positive span"));
        }
        let t_z: Vec<f64> = if m_t == 1 {
            vec![0.5 * (t_lo + t_hi)]
        } else {
            (0..m_t)
                .map(|j| t_lo + (t_hi - t_lo) * j as f64 / (m_t - 1) as f64)
                .collect()
        };
        InducingStructure::new(centers, t_z, bbox)
    }
}

/// All trainable parameters: kernel scales, likelihood noise, and the
/// (trainable) spatial inducing coordinates.
#[derive(Clone, Debug)]
pub struct Hyperparams<S> {
    pub spatial: SpatialParams<S>,
    pub temporal: TemporalParams<S>,
    pub noise_sigma: S,
    pub inducing: InducingStructure<S>,
}

impl<S: Scalar> Hyperparams<S> {
    pub fn new(
        spatial: SpatialParams<S>,
        temporal: TemporalParams<S>,
        noise_sigma: S,
        inducing: InducingStructure<S>,
    ) -> Result<Self> {
        if noise_sigma.val() <= 0.0 {
            return Err(Error::invalid("noise_sigma must be positive"));
        }
        Ok(Hyperparams {
            spatial,
            temporal,
            noise_sigma,
            inducing,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.inducing.m_s()
    }
}

/// Number of unconstrained coordinates (positive parameters are
/// log-transformed; inducing coordinates stay raw).
pub fn n_params(m_s: usize, train_inducing: bool) -> usize {
    5 + if train_inducing { 2 * m_s } else { 0 }
}

impl Hyperparams<f64> {
    /// (log ℓ_lon, log ℓ_lat, log ℓ_t, log σ_f, log σ, Z_s...)
    pub fn to_unconstrained(&self, train_inducing: bool) -> Vec<f64> {
        let mut v = vec![
            self.spatial.ell_lon.ln(),
            self.spatial.ell_lat.ln(),
            self.temporal.ell_t.ln(),
            self.temporal.sigma_f.ln(),
            self.noise_sigma.ln(),
        ];
        if train_inducing {
            for &(lon, lat) in &self.inducing.z_s {
                v.push(lon);
                v.push(lat);
            }
        }
        v
    }

    /// Rebuild from an unconstrained vector; inducing coordinates are clamped
    /// to the bounding box.
    pub fn from_unconstrained(&self, theta: &[f64], train_inducing: bool) -> Result<Self> {
        let expect = n_params(self.inducing.m_s(), train_inducing);
        if theta.len() != expect {
            return Err(Error::invalid(format!(
                "expected {expect} unconstrained parameters, got {}",
                theta.len()
            )));
        }
        let z_s: Vec<(f64, f64)> = if train_inducing {
            (0..self.inducing.m_s())
                .map(|i| {
                    self.inducing
                        .bounding_box
                        .clamp(theta[5 + 2 * i], theta[5 + 2 * i + 1])
                })
                .collect()
        } else {
            self.inducing.z_s.clone()
        };
        Hyperparams::new(
            SpatialParams::new(theta[0].exp(), theta[1].exp())?,
            TemporalParams::new(theta[2].exp(), theta[3].exp())?,
            theta[4].exp(),
            InducingStructure::new(
                z_s,
                self.inducing.t_z.clone(),
                self.inducing.bounding_box,
            )?,
        )
    }

    /// Seed dual numbers so the tangent space is the unconstrained
    /// parameterization (d/d log p = p for positive parameters).
    pub fn to_duals(&self, train_inducing: bool) -> Hyperparams<Dual> {
        let p = n_params(self.inducing.m_s(), train_inducing);
        let pos = |v: f64, i: usize| {
            let mut d = Dual::variable(v, i, p);
            d.g[i] = v;
            d
        };
        let z_s: Vec<(Dual, Dual)> = self
            .inducing
            .z_s
            .iter()
            .enumerate()
            .map(|(i, &(lon, lat))| {
                if train_inducing {
                    (
                        Dual::variable(lon, 5 + 2 * i, p),
                        Dual::variable(lat, 5 + 2 * i + 1, p),
                    )
                } else {
                    (Dual::constant(lon), Dual::constant(lat))
                }
            })
            .collect();
        Hyperparams {
            spatial: SpatialParams {
                ell_lon: pos(self.spatial.ell_lon, 0),
                ell_lat: pos(self.spatial.ell_lat, 1),
            },
            temporal: TemporalParams {
                ell_t: pos(self.temporal.ell_t, 2),
                sigma_f: pos(self.temporal.sigma_f, 3),
            },
            noise_sigma: pos(self.noise_sigma, 4),
            inducing: InducingStructure {
                z_s,
                t_z: self.inducing.t_z.clone(),
                bounding_box: self.inducing.bounding_box,
            },
        }
    }
}

/// One centered training point as consumed by the ELBO.
#[derive(Clone, Copy, Debug)]
pub struct ObsPoint {
    pub lon: f64,
    pub lat: f64,
    /// Internal time axis t = −age/1000, in ka.
    pub t_ka: f64,
    /// Centered value Ȳ = Y − m(x), °C.
    pub y: f64,
}

/// Prior chain together with the spatial gram structures `project` needs.
pub struct PriorStructures<S> {
    pub chain: LinearGaussianChain<S>,
    pub kzz: Mat<S>,
    pub kzz_chol: Chol<S>,
    pub jitter: f64,
}

/// Build the Markov prior over inducing states: P₀ = K_zz ⊗ P∞,
/// A_j = I ⊗ A_t(Δτ_j), Q_j = K_zz ⊗ Q_t(Δτ_j). With d = 1 the Kronecker
/// factors are scalars, so the blocks are scalar multiples of K_zz.
pub fn build_prior_chain<S: Scalar>(h: &Hyperparams<S>, jitter: f64) -> Result<PriorStructures<S>> {
    let kzz = spatial_gram(&h.inducing.z_s, &h.inducing.z_s, &h.spatial, Some(jitter))?;
    let kzz_chol = kzz.cholesky().map_err(|e| {
        Error::numerical("build_prior_chain", format!("K_zz singular after jitter: {e}"))
    })?;
    let sf2 = h.temporal.sigma_f.clone() * h.temporal.sigma_f.clone();
    let p0 = kzz.scale(sf2);
    let chain = LinearGaussianChain::stationary_ou_kron(
        h.inducing.t_z.clone(),
        h.temporal.ell_t.clone(),
        p0,
    )?;
    Ok(PriorStructures {
        chain,
        kzz,
        kzz_chol,
        jitter,
    })
}

/// Conditional of the latent field value f(x,t) on its two neighbor inducing
/// states: f | s(τ₋), s(τ₊) ~ N(W₋ s(τ₋) + W₊ s(τ₊), γ).
#[derive(Clone, Debug)]
pub struct Projection<S> {
    pub left: Option<usize>,
    pub right: Option<usize>,
    pub w_minus: Vec<S>,
    pub w_plus: Vec<S>,
    pub gamma: S,
}

pub fn project<S: Scalar>(
    x: (S, S),
    t: f64,
    h: &Hyperparams<S>,
    prior: &PriorStructures<S>,
) -> Result<Projection<S>> {
    // spatial weights b(x)ᵀ = k_x(x, Z_s) K_zz⁻¹
    let kxz: Vec<S> = h
        .inducing
        .z_s
        .iter()
        .map(|z| eval_spatial(x.clone(), z.clone(), &h.spatial))
        .collect::<Result<_>>()?;
    let b = prior.kzz_chol.solve_vec(&kxz);

    let bridge = bridge_conditional(t, &prior.chain)?;
    let w_minus = bridge.c_minus.t().mat_vec(&b);
    let w_plus = bridge.c_plus.t().mat_vec(&b);

    // spatial Nyström gap at full temporal variance, plus the temporal
    // bridge gap mapped through the spatial weights
    let sf2 = h.temporal.sigma_f.clone() * h.temporal.sigma_f.clone();
    let kxx = eval_spatial(x.clone(), x, &h.spatial)?;
    let mut gamma = sf2 * (kxx - dot(&b, &kxz)) + quad_form(&bridge.v, &b);
    if gamma.val() < 0.0 {
        gamma = S::zero();
    }
    Ok(Projection {
        left: bridge.left,
        right: bridge.right,
        w_minus,
        w_plus,
        gamma,
    })
}

/// Marginal q(f) = N(mean, var) of the latent field under a chain posterior,
/// using the joint (including cross-covariance) of the neighbor pair.
pub fn latent_marginal<S: Scalar>(proj: &Projection<S>, post: &ChainPosterior<S>) -> (S, S) {
    let (mean, mut var) = match (proj.left, proj.right) {
        (Some(j), Some(k)) => {
            debug_assert_eq!(k, j + 1);
            let m = dot(&proj.w_minus, &post.smoothed_means[j])
                + dot(&proj.w_plus, &post.smoothed_means[k]);
            let cross = &post.pair_cross_covs[j];
            let v = quad_form(&post.smoothed_covs[j], &proj.w_minus)
                + quad_form(&post.smoothed_covs[k], &proj.w_plus)
                + S::from_f64(2.0) * dot(&proj.w_minus, &cross.mat_vec(&proj.w_plus));
            (m, v)
        }
        (Some(j), None) => (
            dot(&proj.w_minus, &post.smoothed_means[j]),
            quad_form(&post.smoothed_covs[j], &proj.w_minus),
        ),
        (None, Some(k)) => (
            dot(&proj.w_plus, &post.smoothed_means[k]),
            quad_form(&post.smoothed_covs[k], &proj.w_plus),
        ),
        (None, None) => unreachable!("projection with no neighbors"),
    };
    var = var + proj.gamma.clone();
    if var.val() < 0.0 {
        var = S::zero();
    }
    (mean, var)
}

/// E_q[log N(y; f, σ²)] for q(f) = N(mean, var_latent).
pub fn expected_log_lik<S: Scalar>(y: S, mean: S, var_latent: S, sigma: S) -> Result<S> {
    if sigma.val() <= 0.0 {
        return Err(Error::invalid("sigma must be positive"));
    }
    if var_latent.val() < 0.0 {
        return Err(Error::invalid("var_latent must be non-negative"));
    }
    let two = S::from_f64(2.0);
    let s2 = sigma.clone() * sigma;
    let resid = y - mean;
    let tau = S::from_f64(2.0 * std::f64::consts::PI);
    Ok(-(tau * s2.clone()).ln() / two.clone()
        - (resid.clone() * resid + var_latent) / (two * s2))
}

/// Gaussian site natural parameters per temporal knot plus the cached chain
/// posterior (refreshed after every site or hyperparameter change).
#[derive(Clone, Debug)]
pub struct VariationalState {
    pub sites: Vec<GaussianSite<f64>>,
    pub cache: ChainPosterior<f64>,
}

impl VariationalState {
    /// Zero sites: the variational posterior equals the prior.
    pub fn prior(prior: &PriorStructures<f64>) -> Result<Self> {
        let n = prior.chain.state_dim();
        let sites = vec![GaussianSite::zero(n); prior.chain.num_knots()];
        let cache = kalman_filter_smooth(&prior.chain, &sites)?;
        Ok(VariationalState { sites, cache })
    }

    pub fn refresh(&mut self, prior: &PriorStructures<f64>) -> Result<()> {
        self.cache = kalman_filter_smooth(&prior.chain, &self.sites)?;
        Ok(())
    }
}

fn sites_as<S: Scalar>(sites: &[GaussianSite<f64>]) -> Vec<GaussianSite<S>> {
    sites
        .iter()
        .map(|s| GaussianSite {
            lambda1: s.lambda1.iter().map(|&x| S::from_f64(x)).collect(),
            lambda2: crate::linalg::mat_from_f64(&s.lambda2),
        })
        .collect()
}

/// Minibatch ELBO estimate:
/// (N_total/|batch|) Σ E_q[log p(y|f)] − KL(q(u) ‖ p(u)).
///
/// Generic so the identical computation yields gradients on dual numbers;
/// the sites enter as constants (CVI treats them as fixed during the
/// hyperparameter step).
pub fn elbo_generic<S: Scalar>(
    batch: &[ObsPoint],
    sites: &[GaussianSite<f64>],
    h: &Hyperparams<S>,
    n_total: usize,
    jitter: f64,
) -> Result<S> {
    if batch.is_empty() {
        return Err(Error::invalid("elbo needs a nonempty batch"));
    }
    if n_total < batch.len() {
        return Err(Error::invalid("n_total must be >= batch size"));
    }
    let prior = build_prior_chain(h, jitter)?;
    let sites_s = sites_as::<S>(sites);
    let post = kalman_filter_smooth(&prior.chain, &sites_s)?;

    let mut lik = S::zero();
    for p in batch {
        let proj = project(
            (S::from_f64(p.lon), S::from_f64(p.lat)),
            p.t_ka,
            h,
            &prior,
        )?;
        let (mean, var) = latent_marginal(&proj, &post);
        lik = lik + expected_log_lik(S::from_f64(p.y), mean, var, h.noise_sigma.clone())?;
    }
    let scale = S::from_f64(n_total as f64 / batch.len() as f64);
    let kl = chain_kl(&post, &prior.chain)?;
    Ok(scale * lik - kl)
}

/// f64 ELBO.
pub fn elbo(
    batch: &[ObsPoint],
    v: &VariationalState,
    h: &Hyperparams<f64>,
    n_total: usize,
    jitter: f64,
) -> Result<f64> {
    elbo_generic::<f64>(batch, &v.sites, h, n_total, jitter)
}

/// Gradient of the ELBO with respect to the unconstrained hyperparameters
/// (log-transformed positive scales, raw inducing coordinates), computed by
/// forward-mode dual numbers. Returns (elbo value, gradient).
pub fn hyper_gradient(
    batch: &[ObsPoint],
    v: &VariationalState,
    h: &Hyperparams<f64>,
    n_total: usize,
    jitter: f64,
    train_inducing: bool,
) -> Result<(f64, Vec<f64>)> {
    let hd = h.to_duals(train_inducing);
    let out = elbo_generic::<Dual>(batch, &v.sites, &hd, n_total, jitter)?;
    let p = n_params(h.inducing.m_s(), train_inducing);
    let mut g = out.g;
    g.resize(p, 0.0);
    Ok((out.v, g))
}

/// One CVI natural-gradient update of the sites with step size ρ ∈ (0, 1].
///
/// Each datum's likelihood tilt is mapped through its projection weights and
/// attributed to its two bridge-neighbor knots, so the per-knot site
/// structure is preserved. With ρ = 1, inducing points at the data, and a
/// full batch, one step lands on the exact conjugate posterior.
pub fn natgrad_step(
    batch: &[ObsPoint],
    v: &VariationalState,
    h: &Hyperparams<f64>,
    prior: &PriorStructures<f64>,
    n_total: usize,
    rho: f64,
) -> Result<VariationalState> {
    if !(rho > 0.0 && rho <= 1.0) {
        if rho == 0.0 {
            return Ok(v.clone());
        }
        return Err(Error::invalid("rho must lie in (0, 1]"));
    }
    let n = prior.chain.state_dim();
    let m_t = prior.chain.num_knots();
    let sigma2 = h.noise_sigma * h.noise_sigma;
    let scale = n_total as f64 / batch.len() as f64;

    let mut tilt1 = vec![vec![0.0; n]; m_t];
    let mut tilt2 = vec![Mat::<f64>::zeros(n, n); m_t];
    for p in batch {
        let proj = project((p.lon, p.lat), p.t_ka, h, prior)?;
        let (mean, _var) = latent_marginal(&proj, &v.cache);
        // tilt gradients of E[log p(y|f)] w.r.t. the marginal mean/variance
        let g1 = (p.y - mean) / sigma2;
        let g2 = -0.5 / sigma2;
        for (knot, w) in [(proj.left, &proj.w_minus), (proj.right, &proj.w_plus)] {
            let Some(j) = knot else { continue };
            // natural-parameter increments: λ1 += Wᵀ(g1 − 2 g2 m), Λ2 += −2 g2 WᵀW
            let c1 = g1 - 2.0 * g2 * mean;
            for i in 0..n {
                tilt1[j][i] += w[i] * c1;
                for k in 0..n {
                    tilt2[j][(i, k)] += -2.0 * g2 * w[i] * w[k];
                }
            }
        }
    }

    let mut sites = Vec::with_capacity(m_t);
    for j in 0..m_t {
        let old = &v.sites[j];
        let lambda1 = vec_add(
            &vec_scale(&old.lambda1, 1.0 - rho),
            &vec_scale(&tilt1[j], rho * scale),
        );
        let lambda2 = old
            .lambda2
            .scale(1.0 - rho)
            .add(&tilt2[j].scale(rho * scale))
            .symmetrized();
        sites.push(GaussianSite { lambda1, lambda2 });
    }
    let cache = kalman_filter_smooth(&prior.chain, &sites)?;
    Ok(VariationalState { sites, cache })
}

/// Posterior predictive summary at one query point.
#[derive(Clone, Copy, Debug)]
pub struct PredictiveMarginal {
    /// Posterior mean of C(x,t) = baseline m(x) + centered field, °C.
    pub mean: f64,
    /// Variance of the latent field C(x,t), °C².
    pub var_latent: f64,
    /// var_latent + σ² (posterior predictive variance of an observation).
    pub var_observation: f64,
}

/// Predict the latent posterior at arbitrary points; `baseline` is the mean
/// value m(x) to add back, supplied per point by the caller.
pub fn predict_centered(
    points: &[(f64, f64, f64)],
    v: &VariationalState,
    h: &Hyperparams<f64>,
    prior: &PriorStructures<f64>,
) -> Result<Vec<PredictiveMarginal>> {
    let sigma2 = h.noise_sigma * h.noise_sigma;
    points
        .iter()
        .map(|&(lon, lat, t)| {
            let proj = project((lon, lat), t, h, prior)?;
            let (mean, var) = latent_marginal(&proj, &v.cache);
            Ok(PredictiveMarginal {
                mean,
                var_latent: var,
                var_observation: var + sigma2,
            })
        })
        .collect()
}
