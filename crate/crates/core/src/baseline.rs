//! Empirical spatial baseline m(x): one thin-plate-spline interpolant per
//! mid-Holocene slice, averaged on evaluation.
//!
//! The thin-plate basis φ(r) = r² log r with an affine polynomial term is
//! parameter-free and reproduces node values exactly, so each slice's
//! interpolant passes through its grid values and m(x) is their mean.

use crate::error::{Error, Result};
use crate::linalg::lu_solve;

/// One gridded field used to build the baseline.
#[derive(Clone, Debug)]
pub struct GriddedSlice {
    pub id: String,
    /// (lon, lat, value) triples; masked cells are simply absent.
    pub nodes: Vec<(f64, f64, f64)>,
}

/// Thin-plate spline f(x) = Σ w_i φ(|x − c_i|) + a₀ + a₁ lon + a₂ lat.
#[derive(Clone, Debug)]
pub struct TpsInterpolant {
    pub centers: Vec<(f64, f64)>,
    pub weights: Vec<f64>,
    /// Affine coefficients (a₀, a₁, a₂).
    pub affine: [f64; 3],
}

fn phi(r2: f64) -> f64 {
    // r² log r = ½ r² log r²; zero at r = 0 by continuity
    if r2 <= 0.0 {
        0.0
    } else {
        0.5 * r2 * r2.ln()
    }
}

impl TpsInterpolant {
    /// Solve the saddle-point system
    /// [Φ P; Pᵀ 0] [w; a] = [v; 0], P = [1 lon lat],
    /// which is singular iff the nodes are collinear.
    pub fn fit(nodes: &[(f64, f64, f64)]) -> Result<Self> {
        // duplicate coordinates make Φ rows identical; keep first occurrence
        let mut uniq: Vec<(f64, f64, f64)> = Vec::with_capacity(nodes.len());
        for &n in nodes {
            if uniq
                .iter()
                .all(|u| (u.0 - n.0).abs() > 1e-12 || (u.1 - n.1).abs() > 1e-12)
            {
                uniq.push(n);
            }
        }
        let n = uniq.len();
        if n < 3 {
            return Err(Error::invalid("thin-plate spline needs >= 3 distinct nodes"));
        }
        let dim = n + 3;
        let mut a: crate::linalg::Mat<f64> = crate::linalg::Mat::zeros(dim, dim);
        let mut rhs = vec![0.0; dim];
        for i in 0..n {
            for j in 0..n {
                let dx = uniq[i].0 - uniq[j].0;
                let dy = uniq[i].1 - uniq[j].1;
                a[(i, j)] = phi(dx * dx + dy * dy);
            }
            a[(i, n)] = 1.0;
            a[(i, n + 1)] = uniq[i].0;
            a[(i, n + 2)] = uniq[i].1;
            a[(n, i)] = 1.0;
            a[(n + 1, i)] = uniq[i].0;
            a[(n + 2, i)] = uniq[i].1;
            rhs[i] = uniq[i].2;
        }
        let sol = lu_solve(&a, &rhs)
            .map_err(|e| Error::numerical("tps fit", format!("singular system: {e}")))?;
        Ok(TpsInterpolant {
            centers: uniq.iter().map(|u| (u.0, u.1)).collect(),
            weights: sol[..n].to_vec(),
            affine: [sol[n], sol[n + 1], sol[n + 2]],
        })
    }

    pub fn eval(&self, lon: f64, lat: f64) -> f64 {
        let mut out = self.affine[0] + self.affine[1] * lon + self.affine[2] * lat;
        for (c, w) in self.centers.iter().zip(&self.weights) {
            let dx = lon - c.0;
            let dy = lat - c.1;
            out += w * phi(dx * dx + dy * dy);
        }
        out
    }
}

/// Average of per-slice interpolants.
#[derive(Clone, Debug)]
pub struct BaselineModel {
    pub interpolants: Vec<TpsInterpolant>,
}

impl BaselineModel {
    /// Fit one interpolant per slice. Slices larger than `max_nodes` are
    /// subsampled by keeping every k-th node (dense solves are cubic).
    pub fn fit(slices: &[GriddedSlice], max_nodes: usize) -> Result<Self> {
        if slices.is_empty() {
            return Err(Error::invalid("baseline needs at least one slice"));
        }
        let max_nodes = max_nodes.max(3);
        let mut interpolants = Vec::with_capacity(slices.len());
        for slice in slices {
            let nodes: Vec<(f64, f64, f64)> = if slice.nodes.len() > max_nodes {
                let k = slice.nodes.len().div_ceil(max_nodes);
                slice.nodes.iter().step_by(k).copied().collect()
            } else {
                slice.nodes.clone()
            };
            let interp = TpsInterpolant::fit(&nodes).map_err(|e| match e {
                Error::Numerical { detail, .. } => {
                    Error::numerical(format!("baseline slice `{}`", slice.id), detail)
                }
                other => other,
            })?;
            interpolants.push(interp);
        }
        Ok(BaselineModel { interpolants })
    }

    /// m(x) ≡ c, as a degenerate three-node spline (useful for synthetic
    /// corpora and as an untrained fallback).
    pub fn constant(c: f64) -> Self {
        let nodes = [(0.0, 0.0, c), (1.0, 0.0, c), (0.0, 1.0, c)];
        BaselineModel {
            interpolants: vec![TpsInterpolant::fit(&nodes).expect("non-collinear by construction")],
        }
    }

    pub fn eval(&self, lon: f64, lat: f64) -> f64 {
        let sum: f64 = self.interpolants.iter().map(|i| i.eval(lon, lat)).sum();
        sum / self.interpolants.len() as f64
    }
}
