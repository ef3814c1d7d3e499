//! Training loop (natural-gradient site updates alternated with Adam
//! hyperparameter updates over epochs and minibatches) and the validation
//! statistics.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

use crate::baseline::BaselineModel;
use crate::data::ObservationRecord;
use crate::error::{Error, Result};
use crate::sparse_gp::{
    build_prior_chain, hyper_gradient, natgrad_step, predict_centered, Hyperparams,
    InducingStructure, ObsPoint, PredictiveMarginal, VariationalState,
};

/// Deterministic per-consumer RNG: one root seed, named substreams.
pub fn substream(seed: u64, name: &str) -> ChaCha12Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut eight = [0u8; 8];
    eight.copy_from_slice(&digest[..8]);
    ChaCha12Rng::seed_from_u64(u64::from_le_bytes(eight))
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub m_s: usize,
    pub m_t: usize,
    /// Natural-gradient step size after warm-up.
    pub rho: f64,
    /// First `warmup_steps` natural-gradient updates use `warmup_rho`.
    pub warmup_steps: usize,
    pub warmup_rho: f64,
    pub adam_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub jitter: f64,
    pub train_inducing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 1000,
            m_s: 100,
            m_t: 6,
            rho: 0.5,
            warmup_steps: 5,
            warmup_rho: 0.1,
            adam_lr: 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            jitter: 1e-6,
            train_inducing: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.m_s == 0 || self.m_t == 0 {
            return Err(Error::invalid("counts must be >= 1"));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) || !(self.warmup_rho > 0.0 && self.warmup_rho <= 1.0)
        {
            return Err(Error::invalid("rho must lie in (0, 1]"));
        }
        if self.adam_lr <= 0.0 || self.jitter <= 0.0 {
            return Err(Error::invalid("adam_lr and jitter must be positive"));
        }
        Ok(())
    }
}

/// Bias-corrected Adam accumulators (minimization convention: the returned
/// delta is subtracted-from-parameters for a descent step).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: usize,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        AdamState {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
        }
    }
}

/// One Adam update. Returns the parameter delta for minimizing the objective
/// whose gradient is `grad`; the caller applies it (and clamps afterwards).
pub fn adam_step(
    grad: &[f64],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Vec<f64> {
    assert_eq!(grad.len(), state.m.len());
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - beta1.powf(t);
    let bc2 = 1.0 - beta2.powf(t);
    let mut delta = vec![0.0; grad.len()];
    for i in 0..grad.len() {
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grad[i];
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grad[i] * grad[i];
        let mhat = state.m[i] / bc1;
        let vhat = state.v[i] / bc2;
        delta[i] = -lr * mhat / (vhat.sqrt() + eps);
    }
    delta
}

/// Everything needed to predict: hyperparameters, variational sites, and the
/// spatial baseline to add back.
#[derive(Clone, Debug)]
pub struct FittedModel {
    pub hyper: Hyperparams<f64>,
    pub state: VariationalState,
    pub baseline: BaselineModel,
    pub jitter: f64,
}

impl FittedModel {
    /// Posterior predictive at (lon, lat, age_bp) points, on the uncentered
    /// temperature scale.
    pub fn predict(&self, points: &[(f64, f64, f64)]) -> Result<Vec<PredictiveMarginal>> {
        let centered: Vec<(f64, f64, f64)> = points
            .iter()
            .map(|&(lon, lat, age)| (lon, lat, -age / 1000.0))
            .collect();
        let prior = build_prior_chain(&self.hyper, self.jitter)?;
        let mut preds = predict_centered(&centered, &self.state, &self.hyper, &prior)?;
        for (p, &(lon, lat, _)) in preds.iter_mut().zip(points) {
            p.mean += self.baseline.eval(lon, lat);
        }
        Ok(preds)
    }
}

/// One row of the ELBO trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub epoch: usize,
    pub elbo_estimate: f64,
}

fn to_obs(records: &[ObservationRecord]) -> Result<Vec<ObsPoint>> {
    records
        .iter()
        .map(|r| {
            Ok(ObsPoint {
                lon: r.lon,
                lat: r.lat,
                t_ka: r.t_ka(),
                y: r
                    .value_centered
                    .ok_or_else(|| Error::invalid("records must be centered before fitting"))?,
            })
        })
        .collect()
}

fn init_hyper(obs: &[ObsPoint], cfg: &TrainConfig) -> Result<Hyperparams<f64>> {
    use crate::kernels::{SpatialParams, TemporalParams};
    let coords: Vec<(f64, f64)> = obs.iter().map(|o| (o.lon, o.lat)).collect();
    let (mut t_lo, mut t_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for o in obs {
        t_lo = t_lo.min(o.t_ka);
        t_hi = t_hi.max(o.t_ka);
    }
    let inducing = InducingStructure::init_from_data(
        &coords,
        (t_lo, t_hi),
        cfg.m_s,
        cfg.m_t,
        substream_seed(cfg.seed, "inducing-init"),
    )?;
    let bbox = inducing.bounding_box;
    // moderate-fraction-of-range scales and data-scale amplitudes: the paper
    // leaves initialization open, so start broad and let Adam move them
    let ell_lon = (0.3 * (bbox.lon_max - bbox.lon_min)).max(1e-3);
    let ell_lat = (0.3 * (bbox.lat_max - bbox.lat_min)).max(1e-3);
    let ell_t = (0.5 * (t_hi - t_lo)).max(1e-3);
    let n = obs.len() as f64;
    let mean = obs.iter().map(|o| o.y).sum::<f64>() / n;
    let var = obs.iter().map(|o| (o.y - mean) * (o.y - mean)).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-3);
    Hyperparams::new(
        SpatialParams::new(ell_lon, ell_lat)?,
        TemporalParams::new(ell_t, sd)?,
        0.5 * sd,
        inducing,
    )
}

fn substream_seed(seed: u64, name: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut eight = [0u8; 8];
    eight.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(eight)
}

fn dump_hyper(h: &Hyperparams<f64>) -> String {
    format!(
        "ell_lon={} ell_lat={} ell_t={} sigma_f={} sigma={}",
        h.spatial.ell_lon, h.spatial.ell_lat, h.temporal.ell_t, h.temporal.sigma_f, h.noise_sigma
    )
}

/// Run the optimization loop: per minibatch, a natural-gradient site update
/// followed by one Adam step on the (unconstrained) hyperparameters, with
/// inducing coordinates clamped back into the bounding box.
pub fn fit(
    cfg: &TrainConfig,
    records: &[ObservationRecord],
    baseline: &BaselineModel,
) -> Result<(FittedModel, Vec<TraceRow>)> {
    cfg.validate()?;
    let obs = to_obs(records)?;
    if obs.is_empty() {
        return Err(Error::invalid("no training data"));
    }
    let n_total = obs.len();

    let mut hyper = init_hyper(&obs, cfg)?;
    let mut prior = build_prior_chain(&hyper, cfg.jitter)?;
    let mut state = VariationalState::prior(&prior)?;
    let mut adam = AdamState::new(crate::sparse_gp::n_params(cfg.m_s, cfg.train_inducing));
    let mut rng = substream(cfg.seed, "batch-shuffle");

    let mut trace = Vec::new();
    let mut iteration = 0usize;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n_total).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<ObsPoint> = chunk.iter().map(|&i| obs[i]).collect();
            let rho = if iteration < cfg.warmup_steps {
                cfg.warmup_rho
            } else {
                cfg.rho
            };
            fn fail(iteration: usize, hyper: &Hyperparams<f64>, e: Error) -> Error {
                Error::numerical(
                    format!("training iteration {iteration}"),
                    format!("{e}; hyperparameters: {}", dump_hyper(hyper)),
                )
            }
            state = natgrad_step(&batch, &state, &hyper, &prior, n_total, rho)
                .map_err(|e| fail(iteration, &hyper, e))?;
            let (elbo_est, grad) =
                hyper_gradient(&batch, &state, &hyper, n_total, cfg.jitter, cfg.train_inducing)
                    .map_err(|e| fail(iteration, &hyper, e))?;
            // Adam minimizes, the ELBO is maximized: feed the negated gradient
            let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
            let delta = adam_step(
                &neg,
                &mut adam,
                cfg.adam_lr,
                cfg.adam_beta1,
                cfg.adam_beta2,
                cfg.adam_eps,
            );
            let mut theta = hyper.to_unconstrained(cfg.train_inducing);
            for (t, d) in theta.iter_mut().zip(&delta) {
                *t += d;
            }
            // from_unconstrained clamps Z_s to the bounding box
            hyper = hyper
                .from_unconstrained(&theta, cfg.train_inducing)
                .map_err(|e| fail(iteration, &hyper, e))?;
            debug_assert!(hyper
                .inducing
                .z_s
                .iter()
                .all(|&(lon, lat)| hyper.inducing.bounding_box.contains(lon, lat)));
            prior =
                build_prior_chain(&hyper, cfg.jitter).map_err(|e| fail(iteration, &hyper, e))?;
            state.refresh(&prior).map_err(|e| fail(iteration, &hyper, e))?;

            trace.push(TraceRow {
                iteration,
                epoch,
                elbo_estimate: elbo_est,
            });
            iteration += 1;
        }
    }

    Ok((
        FittedModel {
            hyper,
            state,
            baseline: baseline.clone(),
            jitter: cfg.jitter,
        },
        trace,
    ))
}

/// Linearly interpolated empirical quantile (type-7 convention) of a sorted
/// sample.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty() && (0.0..=1.0).contains(&p));
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Validation statistics on the uncentered temperature scale.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub n: usize,
    pub mean_error: f64,
    pub mean_abs_error: f64,
    /// Central intervals of the raw error distribution at 20/40/60/80/95%.
    pub intervals: Vec<(f64, f64, f64)>,
    /// Coverage within 1σ/2σ/3σ of the posterior predictive.
    pub coverage: [f64; 3],
    /// error_i = PP mean − value_i.
    pub errors: Vec<f64>,
    /// normalized_i = error_i / PP std.
    pub normalized_errors: Vec<f64>,
}

pub const INTERVAL_LEVELS: [f64; 5] = [0.20, 0.40, 0.60, 0.80, 0.95];

impl EvalReport {
    pub fn from_errors(errors: Vec<f64>, normalized: Vec<f64>) -> Self {
        assert_eq!(errors.len(), normalized.len());
        let n = errors.len();
        let mean_error = errors.iter().sum::<f64>() / n as f64;
        let mean_abs_error = errors.iter().map(|e| e.abs()).sum::<f64>() / n as f64;
        let mut sorted = errors.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let intervals = INTERVAL_LEVELS
            .iter()
            .map(|&lvl| {
                let alpha = 0.5 * (1.0 - lvl);
                (
                    lvl,
                    quantile_type7(&sorted, alpha),
                    quantile_type7(&sorted, 1.0 - alpha),
                )
            })
            .collect();
        let mut coverage = [0.0; 3];
        for (k, cov) in coverage.iter_mut().enumerate() {
            let within = normalized
                .iter()
                .filter(|z| z.abs() <= (k + 1) as f64)
                .count();
            *cov = within as f64 / n as f64;
        }
        EvalReport {
            n,
            mean_error,
            mean_abs_error,
            intervals,
            coverage,
            errors,
            normalized_errors: normalized,
        }
    }

    /// Gaussian KDE of the normalized errors with Silverman bandwidth,
    /// evaluated on a regular grid — the density-plot payload.
    pub fn normalized_error_density(&self, grid_points: usize) -> Vec<(f64, f64)> {
        let xs = &self.normalized_errors;
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
        let mut sorted = xs.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let iqr = quantile_type7(&sorted, 0.75) - quantile_type7(&sorted, 0.25);
        let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
        let h = (0.9 * spread * n.powf(-0.2)).max(1e-6);
        let (lo, hi) = (sorted[0] - 3.0 * h, sorted[sorted.len() - 1] + 3.0 * h);
        (0..grid_points)
            .map(|i| {
                let x = lo + (hi - lo) * i as f64 / (grid_points - 1).max(1) as f64;
                let d: f64 = xs
                    .iter()
                    .map(|&xi| {
                        let z = (x - xi) / h;
                        (-0.5 * z * z).exp()
                    })
                    .sum::<f64>()
                    / (n * h * (2.0 * std::f64::consts::PI).sqrt());
                (x, d)
            })
            .collect()
    }
}

/// Score a model on held-out records (uncentered scale).
pub fn validate(model: &FittedModel, test: &[ObservationRecord]) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let points: Vec<(f64, f64, f64)> = test.iter().map(|r| (r.lon, r.lat, r.age_bp)).collect();
    let preds = model.predict(&points)?;
    let mut errors = Vec::with_capacity(test.len());
    let mut normalized = Vec::with_capacity(test.len());
    for (p, r) in preds.iter().zip(test) {
        let err = p.mean - r.value;
        errors.push(err);
        normalized.push(err / p.var_observation.sqrt());
    }
    Ok(EvalReport::from_errors(errors, normalized))
}

/// One fit + validate per held-out simulation slice; per-slice fits run on
/// up to `threads` OS threads. Returns per-age reports plus the aggregate
/// over the concatenated error distributions.
pub fn sweep_leave_one_out(
    cfg: &TrainConfig,
    records: &[ObservationRecord],
    simulation_id: &str,
    baseline: &BaselineModel,
    threads: usize,
) -> Result<(Vec<(f64, EvalReport)>, EvalReport)> {
    let ages = crate::data::ages_of_source(records, simulation_id);
    if ages.len() < 2 {
        return Err(Error::invalid("simulation needs >= 2 slices for a sweep"));
    }
    let threads = threads.max(1).min(ages.len());
    let results: std::sync::Mutex<Vec<Option<Result<(f64, EvalReport)>>>> =
        std::sync::Mutex::new((0..ages.len()).map(|_| None).collect());
    let next = std::sync::atomic::AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= ages.len() {
                    break;
                }
                let age = ages[i];
                let run = || -> Result<(f64, EvalReport)> {
                    let (train, test) =
                        crate::data::split_leave_time_slice_out(records, age, simulation_id)?;
                    let (model, _) = fit(cfg, &train, baseline)?;
                    Ok((age, validate(&model, &test)?))
                };
                let out = run();
                results.lock().unwrap()[i] = Some(out);
            });
        }
    });
    let mut reports = Vec::with_capacity(ages.len());
    for slot in results.into_inner().unwrap() {
        reports.push(slot.expect("worker filled every slot")?);
    }
    let mut all_errors = Vec::new();
    let mut all_normalized = Vec::new();
    for (_, r) in &reports {
        all_errors.extend_from_slice(&r.errors);
        all_normalized.extend_from_slice(&r.normalized_errors);
    }
    let aggregate = EvalReport::from_errors(all_errors, all_normalized);
    Ok((reports, aggregate))
}
