//! Independent dense oracles used by the integration tests. Everything here
//! is built on nalgebra and plain multivariate-Gaussian algebra, deliberately
//! sharing no code with the implementation's Kalman/sparse path.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use paleogp::kernels::{eval_spatial, eval_temporal, SpatialParams, TemporalParams};
use paleogp::state_space::{GaussianSite, LinearGaussianChain};

/// Product-kernel Gram matrix over spatiotemporal points, with optional
/// spatial jitter matching the implementation's self-gram convention
/// (added when two points share the same spatial-site index).
pub fn product_gram(
    pts: &[(f64, f64, f64)],
    site_idx: Option<&[usize]>,
    sp: &SpatialParams<f64>,
    tp: &TemporalParams<f64>,
    jitter: f64,
) -> DMatrix<f64> {
    let n = pts.len();
    DMatrix::from_fn(n, n, |i, j| {
        let kx = eval_spatial((pts[i].0, pts[i].1), (pts[j].0, pts[j].1), sp).unwrap();
        let kt = eval_temporal(pts[i].2 - pts[j].2, tp).unwrap();
        let jit = match site_idx {
            Some(s) if s[i] == s[j] => jitter,
            None if i == j => jitter,
            _ => 0.0,
        };
        (kx + jit) * kt
    })
}

/// Exact dense GP regression: latent posterior at query points plus the log
/// marginal likelihood of the training set.
pub struct DenseGp {
    pub lml: f64,
    pub alpha: DVector<f64>,
    ky_inv: DMatrix<f64>,
    train: Vec<(f64, f64, f64)>,
    sp: SpatialParams<f64>,
    tp: TemporalParams<f64>,
}

impl DenseGp {
    pub fn fit(
        train: &[(f64, f64, f64)],
        y: &[f64],
        sp: &SpatialParams<f64>,
        tp: &TemporalParams<f64>,
        sigma: f64,
        jitter: f64,
    ) -> Self {
        let n = train.len();
        let k = product_gram(train, None, sp, tp, jitter);
        let ky = &k + DMatrix::identity(n, n) * (sigma * sigma);
        let ky_inv = ky.clone().try_inverse().expect("K+sigma^2 I invertible");
        let yv = DVector::from_column_slice(y);
        let alpha = &ky_inv * &yv;
        let lml = -0.5 * yv.dot(&alpha)
            - 0.5 * ky.determinant().ln()
            - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        DenseGp {
            lml,
            alpha,
            ky_inv,
            train: train.to_vec(),
            sp: sp.clone(),
            tp: tp.clone(),
        }
    }

    fn cross(&self, q: (f64, f64, f64)) -> DVector<f64> {
        DVector::from_fn(self.train.len(), |i, _| {
            let p = self.train[i];
            eval_spatial((q.0, q.1), (p.0, p.1), &self.sp).unwrap()
                * eval_temporal(q.2 - p.2, &self.tp).unwrap()
        })
    }

    /// Latent posterior mean and variance at a query point.
    pub fn predict(&self, q: (f64, f64, f64)) -> (f64, f64) {
        let ks = self.cross(q);
        let mean = ks.dot(&self.alpha);
        let prior = eval_spatial((q.0, q.1), (q.0, q.1), &self.sp).unwrap()
            * eval_temporal(0.0, &self.tp).unwrap();
        let var = prior - (ks.transpose() * &self.ky_inv * &ks)[(0, 0)];
        (mean, var)
    }
}

/// Dense joint covariance of a linear-Gaussian chain (zero mean), built by
/// mean/covariance propagation: Cov(s_j, s_k) = P_j (A_{k-1}···A_j)ᵀ.
pub fn dense_chain_joint(chain: &LinearGaussianChain<f64>) -> DMatrix<f64> {
    let m_t = chain.num_knots();
    let n = chain.state_dim();
    let to_na = |m: &paleogp::linalg::Mat<f64>| {
        DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    };
    let mut marg: Vec<DMatrix<f64>> = vec![to_na(chain.initial_cov())];
    for j in 0..m_t - 1 {
        let a = to_na(chain.transition(j));
        let q = to_na(chain.noise(j));
        let next = &a * &marg[j] * a.transpose() + q;
        marg.push(next);
    }
    let mut joint = DMatrix::zeros(m_t * n, m_t * n);
    for j in 0..m_t {
        for k in j..m_t {
            // Cov(s_j, s_k) = P_j Aᵀ(...) for k > j
            let mut block = marg[j].clone();
            for g in j..k {
                let a = to_na(chain.transition(g));
                block = block * a.transpose();
            }
            joint.view_mut((j * n, k * n), (n, n)).copy_from(&block);
            joint
                .view_mut((k * n, j * n), (n, n))
                .copy_from(&block.transpose());
        }
    }
    joint
}

/// Exact posterior of a zero-mean Gaussian prior tilted by natural-form
/// sites: returns (mean, covariance, log ∫ prior · ∏ sites).
pub fn dense_site_posterior(
    joint: &DMatrix<f64>,
    sites: &[GaussianSite<f64>],
) -> (DVector<f64>, DMatrix<f64>, f64) {
    let total = joint.nrows();
    let n = total / sites.len();
    let mut lambda1 = DVector::zeros(total);
    let mut lambda2 = DMatrix::zeros(total, total);
    for (j, s) in sites.iter().enumerate() {
        for i in 0..n {
            lambda1[j * n + i] = s.lambda1[i];
            for k in 0..n {
                lambda2[(j * n + i, j * n + k)] = s.lambda2[(i, k)];
            }
        }
    }
    let prior_prec = joint.clone().try_inverse().expect("prior joint invertible");
    let post_prec = &prior_prec + &lambda2;
    let cov = post_prec.try_inverse().expect("posterior precision invertible");
    let mean = &cov * &lambda1;
    // log ∫ N(u; 0, Σ) exp(λᵀu − ½uᵀΛu) du
    //   = −½ log|I + ΣΛ| + ½ λᵀ (Σ⁻¹ + Λ)⁻¹ λ
    let log_norm = -0.5 * (DMatrix::identity(total, total) + joint * &lambda2)
        .determinant()
        .ln()
        + 0.5 * lambda1.dot(&mean);
    (mean, cov, log_norm)
}

/// KL( N(m0, s0) ‖ N(m1, s1) ) for dense Gaussians.
pub fn gaussian_kl(
    m0: &DVector<f64>,
    s0: &DMatrix<f64>,
    m1: &DVector<f64>,
    s1: &DMatrix<f64>,
) -> f64 {
    let n = m0.len() as f64;
    let s1_inv = s1.clone().try_inverse().unwrap();
    let d = m1 - m0;
    0.5 * ((&s1_inv * s0).trace() + d.dot(&(&s1_inv * &d)) - n
        + s1.determinant().ln()
        - s0.determinant().ln())
}

/// Log-density constant a Gaussian observation site drops when written in
/// natural form: N(y; s, r) = exp(λ1 s − ½ λ2 s²) · exp(const).
pub fn obs_site_constant(y: f64, r: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * r).ln() - y * y / (2.0 * r)
}

use paleogp::linalg::Mat;
use paleogp::state_space::Dynamics;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

pub fn random_psd(n: usize, rng: &mut ChaCha12Rng, ridge: f64) -> Mat<f64> {
    let b = Mat::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let mut m = b.matmul(&b.t());
    for i in 0..n {
        m[(i, i)] += ridge;
    }
    m
}

/// Random well-conditioned explicit chain for oracle comparisons.
pub fn random_chain(n: usize, m_t: usize, rng: &mut ChaCha12Rng) -> LinearGaussianChain<f64> {
    let mut times = vec![0.0];
    for _ in 1..m_t {
        times.push(times.last().unwrap() + rng.gen_range(0.2..2.0));
    }
    let transitions: Vec<Mat<f64>> = (0..m_t - 1)
        .map(|_| Mat::from_fn(n, n, |_, _| rng.gen_range(-0.6..0.6) / n as f64))
        .collect();
    let noises: Vec<Mat<f64>> = (0..m_t - 1).map(|_| random_psd(n, rng, 0.3)).collect();
    let p0 = random_psd(n, rng, 0.5);
    LinearGaussianChain::from_parts(times, transitions, noises, p0, Dynamics::Explicit).unwrap()
}

pub fn random_sites(
    n: usize,
    m_t: usize,
    rng: &mut ChaCha12Rng,
    scale: f64,
) -> Vec<GaussianSite<f64>> {
    (0..m_t)
        .map(|_| {
            let b = Mat::from_fn(n, n, |_, _| rng.gen_range(-scale..scale));
            GaussianSite {
                lambda1: (0..n).map(|_| rng.gen_range(-scale..scale)).collect(),
                lambda2: b.matmul(&b.t()),
            }
        })
        .collect()
}

use paleogp::sparse_gp::{BoundingBox, Hyperparams, InducingStructure, ObsPoint};
use rand::SeedableRng;

/// Scattered regression problem with inducing points placed at the data.
pub struct TinyProblem {
    pub batch: Vec<ObsPoint>,
    pub h: Hyperparams<f64>,
    pub pts: Vec<(f64, f64, f64)>,
    pub y: Vec<f64>,
}

pub fn tiny_problem(n: usize, seed: u64, sigma: f64) -> TinyProblem {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut pts: Vec<(f64, f64, f64)> = Vec::new();
    let mut times: Vec<f64> = Vec::new();
    while pts.len() < n {
        let p = (
            rng.gen_range(-10.0..40.0),
            rng.gen_range(35.0..70.0),
            rng.gen_range(-21.0..-6.0),
        );
        // distinct sites and times keep the inducing structure nondegenerate
        if pts
            .iter()
            .all(|q| (q.0 - p.0).abs() > 0.3 || (q.1 - p.1).abs() > 0.3)
            && times.iter().all(|&t| (t - p.2).abs() > 1e-3)
        {
            times.push(p.2);
            pts.push(p);
        }
    }
    let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let z_s: Vec<(f64, f64)> = pts.iter().map(|p| (p.0, p.1)).collect();
    let mut t_z = times.clone();
    t_z.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let bbox = BoundingBox::from_points(z_s.iter().copied()).unwrap();
    let h = Hyperparams::new(
        SpatialParams::new(19.6, 13.2).unwrap(),
        TemporalParams::new(9.9, 2.9).unwrap(),
        sigma,
        InducingStructure::new(z_s, t_z, bbox).unwrap(),
    )
    .unwrap();
    let batch: Vec<ObsPoint> = pts
        .iter()
        .zip(&y)
        .map(|(&(lon, lat, t), &y)| ObsPoint {
            lon,
            lat,
            t_ka: t,
            y,
        })
        .collect();
    TinyProblem { batch, h, pts, y }
}

pub const TINY_JITTER: f64 = 1e-10;
