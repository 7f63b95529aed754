//! The covariate-dependent Gaussian mixture of experts: softmax gating of
//! cluster probabilities, per-cluster mean regressions on the hidden
//! features, time-constant covariances, and the biomass-weighted log
//! pseudolikelihood.

use crate::data::BinnedCytogram;
use crate::error::{MoeError, Result};
use crate::linalg::Cholesky;
use crate::num::{log_sum_exp, pairwise_sum, softmax_inplace, Real};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Covariance diagonal floor applied after every update.
pub const SIGMA_FLOOR: f64 = 1e-10;

/// All regression coefficients and covariances of a K-cluster model.
///
/// The last cluster is the gating anchor: its intercept and slope column are
/// identically zero, which pins down the softmax parametrization once the
/// L1 penalty removes slope translation invariance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MoeParams<R> {
    /// Gating intercepts, length K.
    pub alpha0: Array1<R>,
    /// Gating slopes, `n_h x K`.
    pub alpha: Array2<R>,
    /// Mean intercepts, `K x d`.
    pub beta0: Array2<R>,
    /// Mean slopes, one `n_h x d` matrix per cluster.
    pub beta: Vec<Array2<R>>,
    /// Symmetric positive-definite covariances, one `d x d` per cluster.
    pub sigma: Vec<Array2<R>>,
}

impl<R: Real> MoeParams<R> {
    pub fn k(&self) -> usize {
        self.alpha0.len()
    }

    pub fn d(&self) -> usize {
        self.beta0.ncols()
    }

    pub fn n_features(&self) -> usize {
        self.alpha.nrows()
    }

    /// Zero-coefficient model with unit covariances.
    pub fn zeros(k: usize, d: usize, n_h: usize) -> Self {
        Self {
            alpha0: Array1::zeros(k),
            alpha: Array2::zeros((n_h, k)),
            beta0: Array2::zeros((k, d)),
            beta: (0..k).map(|_| Array2::zeros((n_h, d))).collect(),
            sigma: (0..k).map(|_| Array2::eye(d)).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if k == 0 {
            return Err(MoeError::config("model needs at least one cluster"));
        }
        if self.alpha.ncols() != k || self.beta0.nrows() != k || self.beta.len() != k || self.sigma.len() != k {
            return Err(MoeError::dim("cluster count mismatch across parameter blocks"));
        }
        let n_h = self.n_features();
        let d = self.d();
        for b in &self.beta {
            if b.nrows() != n_h || b.ncols() != d {
                return Err(MoeError::dim("mean slope block has wrong shape"));
            }
        }
        for s in &self.sigma {
            if s.nrows() != d || s.ncols() != d {
                return Err(MoeError::dim("covariance block has wrong shape"));
            }
        }
        let last = k - 1;
        if self.alpha0[last] != R::zero() || self.alpha.column(last).iter().any(|&v| v != R::zero()) {
            return Err(MoeError::config("gating anchor violated: last cluster must stay at zero"));
        }
        Ok(())
    }

    /// Sum of absolute gating slopes (the alpha L1 penalty term).
    pub fn alpha_l1(&self) -> R {
        self.alpha.iter().fold(R::zero(), |acc, &v| acc + v.abs())
    }

    /// Sum of absolute mean slopes (the beta L1 penalty term).
    pub fn beta_l1(&self) -> R {
        self.beta
            .iter()
            .flat_map(|b| b.iter())
            .fold(R::zero(), |acc, &v| acc + v.abs())
    }
}

/// Cluster means and probabilities at one time point.
#[derive(Debug, Clone)]
pub struct ModelPrediction<R> {
    /// `K x d` cluster means.
    pub mu: Array2<R>,
    /// Gating probabilities, non-negative and summing to one.
    pub pi: Array1<R>,
}

/// Evaluates the gating softmax and expert means at one feature vector.
pub fn predict<R: Real>(params: &MoeParams<R>, features: &ArrayView1<R>) -> Result<ModelPrediction<R>> {
    let k = params.k();
    let d = params.d();
    let n_h = params.n_features();
    if features.len() != n_h {
        return Err(MoeError::dim(format!(
            "feature vector has length {}, expected {n_h}",
            features.len()
        )));
    }
    let mut mu = Array2::zeros((k, d));
    for c in 0..k {
        for j in 0..d {
            let mut acc = params.beta0[[c, j]];
            for h in 0..n_h {
                acc += params.beta[c][[h, j]] * features[h];
            }
            mu[[c, j]] = acc;
        }
    }
    let mut logits: Vec<R> = (0..k)
        .map(|c| {
            let mut acc = params.alpha0[c];
            for h in 0..n_h {
                acc += params.alpha[[h, c]] * features[h];
            }
            acc
        })
        .collect();
    softmax_inplace(&mut logits);
    Ok(ModelPrediction {
        mu,
        pi: Array1::from_vec(logits),
    })
}

/// Cached Cholesky factors of the per-cluster covariances, reused across
/// every point and time index during a likelihood pass.
pub struct SigmaCache<R> {
    chols: Vec<Cholesky<R>>,
    log_norms: Vec<R>,
}

impl<R: Real> SigmaCache<R> {
    pub fn new(params: &MoeParams<R>) -> Result<Self> {
        let d = params.d();
        let half_d_log_2pi = R::of(0.5 * d as f64) * R::of(2.0 * std::f64::consts::PI).ln();
        let mut chols = Vec::with_capacity(params.k());
        let mut log_norms = Vec::with_capacity(params.k());
        for (c, s) in params.sigma.iter().enumerate() {
            let ch = Cholesky::factor(&s.view()).map_err(|e| {
                MoeError::solver(format!("covariance of cluster {c} is not positive definite: {e}"))
            })?;
            log_norms.push(-half_d_log_2pi - ch.log_det() * R::of(0.5));
            chols.push(ch);
        }
        Ok(Self { chols, log_norms })
    }

    /// Gaussian log density of `y` under cluster `c` with mean `mu`.
    pub fn log_density(&self, c: usize, y: &ArrayView1<R>, mu: &ArrayView1<R>) -> R {
        let diff = Array1::from_shape_fn(y.len(), |j| y[j] - mu[j]);
        self.log_norms[c] - self.chols[c].mahalanobis_sq(&diff.view()) * R::of(0.5)
    }
}

/// Log density of `y` under cluster `k` at the given feature vector.
pub fn per_cluster_logdensity<R: Real>(
    params: &MoeParams<R>,
    features: &ArrayView1<R>,
    y: &ArrayView1<R>,
    k: usize,
) -> Result<R> {
    if k >= params.k() {
        return Err(MoeError::dim(format!("cluster index {k} out of range")));
    }
    let cache = SigmaCache::new(params)?;
    let pred = predict(params, features)?;
    Ok(cache.log_density(k, y, &pred.mu.row(k)))
}

/// Per-time contribution: `(sum_b c_b * log f(y_b), sum_b c_b)`.
fn time_contribution<R: Real>(
    params: &MoeParams<R>,
    cache: &SigmaCache<R>,
    bins: &BinnedCytogram<R>,
    features: &ArrayView1<R>,
) -> Result<(R, R)> {
    if bins.is_empty() {
        return Ok((R::zero(), R::zero()));
    }
    let pred = predict(params, features)?;
    let k = params.k();
    let log_pi: Vec<R> = pred.pi.iter().map(|&p| p.ln()).collect();
    let mut terms: Vec<R> = Vec::with_capacity(bins.len());
    let mut logs = vec![R::zero(); k];
    for b in 0..bins.len() {
        let y = bins.centers.row(b);
        for c in 0..k {
            logs[c] = log_pi[c] + cache.log_density(c, &y, &pred.mu.row(c));
        }
        terms.push(bins.weights[b] * log_sum_exp(&logs));
    }
    Ok((pairwise_sum(&terms), bins.total_weight()))
}

/// Weight-normalized log pseudolikelihood of the binned series:
/// `(1/C) * sum_t sum_b c_b log f(y_b)` with `C` the total weight.
///
/// Parallelizes over time indices; each per-time term is computed
/// independently and reduced in index order, so the value does not depend
/// on the thread count.
pub fn log_pseudolikelihood<R: Real>(
    params: &MoeParams<R>,
    data: &[BinnedCytogram<R>],
    feats: &ArrayView2<R>,
) -> Result<R> {
    if data.len() != feats.nrows() {
        return Err(MoeError::dim(format!(
            "{} cytograms but {} feature rows",
            data.len(),
            feats.nrows()
        )));
    }
    if data.is_empty() {
        return Err(MoeError::data("empty dataset"));
    }
    params.validate()?;
    let cache = SigmaCache::new(params)?;
    let contributions: Result<Vec<(R, R)>> = data
        .par_iter()
        .enumerate()
        .map(|(t, bins)| time_contribution(params, &cache, bins, &feats.row(t)))
        .collect();
    let contributions = contributions?;
    let values: Vec<R> = contributions.iter().map(|&(v, _)| v).collect();
    let weights: Vec<R> = contributions.iter().map(|&(_, w)| w).collect();
    let total_weight = pairwise_sum(&weights);
    if !(total_weight > R::zero()) {
        return Err(MoeError::data("dataset has zero total weight"));
    }
    Ok(pairwise_sum(&values) / total_weight)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::{rng_from_seed, uniform_symmetric};
    use ndarray::array;
    use proptest::prelude::*;

    fn random_params(k: usize, d: usize, n_h: usize, seed: u64) -> MoeParams<f64> {
        let mut rng = rng_from_seed(seed);
        let mut p = MoeParams::zeros(k, d, n_h);
        for c in 0..k - 1 {
            p.alpha0[c] = uniform_symmetric(&mut rng, 1.0);
            for h in 0..n_h {
                p.alpha[[h, c]] = uniform_symmetric(&mut rng, 1.0);
            }
        }
        for c in 0..k {
            for j in 0..d {
                p.beta0[[c, j]] = uniform_symmetric(&mut rng, 2.0);
                for h in 0..n_h {
                    p.beta[c][[h, j]] = uniform_symmetric(&mut rng, 0.5);
                }
            }
            let mut b = Array2::zeros((d, d));
            for i in 0..d {
                for j in 0..d {
                    b[[i, j]] = uniform_symmetric(&mut rng, 1.0);
                }
            }
            let mut s = b.t().dot(&b);
            for i in 0..d {
                s[[i, i]] += 0.3;
            }
            p.sigma[c] = s;
        }
        p
    }

    fn one_bin(t: u64, y: Vec<f64>, w: f64) -> BinnedCytogram<f64> {
        let d = y.len();
        BinnedCytogram {
            time: t,
            centers: Array2::from_shape_vec((1, d), y).unwrap(),
            weights: array![w],
        }
    }

    #[test]
    fn zero_gating_gives_uniform_probabilities() {
        let p = MoeParams::<f64>::zeros(3, 1, 4);
        let f = array![0.2, -0.5, 1.0, 0.0];
        let pred = predict(&p, &f.view()).unwrap();
        for c in 0..3 {
            assert!((pred.pi[c] - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_slopes_give_constant_means() {
        let mut p = MoeParams::<f64>::zeros(2, 2, 3);
        p.beta0 = array![[1.0, -1.0], [0.5, 2.0]];
        for f in [array![0.0, 0.0, 0.0], array![5.0, -3.0, 1.0]] {
            let pred = predict(&p, &f.view()).unwrap();
            assert_eq!(pred.mu, p.beta0);
        }
    }

    #[test]
    fn softmax_matches_direct_formula() {
        let p = random_params(4, 1, 5, 3);
        let f = array![0.3, -0.2, 0.9, -1.5, 0.05];
        let pred = predict(&p, &f.view()).unwrap();
        // direct evaluation without max subtraction, fine at this scale
        let mut logits = vec![0.0f64; 4];
        for c in 0..4 {
            logits[c] = p.alpha0[c] + (0..5).map(|h| p.alpha[[h, c]] * f[h]).sum::<f64>();
        }
        let z: f64 = logits.iter().map(|v| v.exp()).sum();
        for c in 0..4 {
            assert!((pred.pi[c] - logits[c].exp() / z).abs() < 1e-14);
        }
    }

    #[test]
    fn standard_normal_at_mode() {
        let p = MoeParams::<f64>::zeros(1, 1, 2);
        let data = vec![one_bin(1, vec![0.0], 1.0)];
        let feats = Array2::zeros((1, 2));
        let v = log_pseudolikelihood(&p, &data, &feats.view()).unwrap();
        let want = -0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((v - want).abs() < 1e-12, "{v} vs {want}");
    }

    #[test]
    fn doubling_weights_leaves_value_unchanged() {
        let p = random_params(2, 2, 3, 5);
        let mut rng = rng_from_seed(8);
        let feats = Array2::from_shape_fn((4, 3), |_| uniform_symmetric::<f64>(&mut rng, 1.0));
        let data: Vec<BinnedCytogram<f64>> = (0..4)
            .map(|t| {
                let m = 5;
                let centers = Array2::from_shape_fn((m, 2), |_| uniform_symmetric::<f64>(&mut rng, 2.0));
                let weights = Array1::from_shape_fn(m, |_| uniform_symmetric::<f64>(&mut rng, 0.4) + 1.0);
                BinnedCytogram { time: t as u64 + 1, centers, weights }
            })
            .collect();
        let v1 = log_pseudolikelihood(&p, &data, &feats.view()).unwrap();
        let doubled: Vec<BinnedCytogram<f64>> = data
            .iter()
            .map(|b| BinnedCytogram {
                time: b.time,
                centers: b.centers.clone(),
                weights: &b.weights * 2.0,
            })
            .collect();
        let v2 = log_pseudolikelihood(&p, &doubled, &feats.view()).unwrap();
        assert!((v1 - v2).abs() < 1e-12);
    }

    #[test]
    fn log_density_closed_forms() {
        let mut p = MoeParams::<f64>::zeros(1, 1, 2);
        p.sigma[0] = array![[4.0]];
        let f = array![0.0, 0.0];
        let v = per_cluster_logdensity(&p, &f.view(), &array![0.0].view(), 0).unwrap();
        let want = -0.5 * (2.0 * std::f64::consts::PI * 4.0).ln();
        assert!((v - want).abs() < 1e-13);

        let p2 = MoeParams::<f64>::zeros(1, 2, 2);
        let v2 = per_cluster_logdensity(&p2, &f.view(), &array![3.0, 4.0].view(), 0).unwrap();
        let want2 = -(2.0 * std::f64::consts::PI).ln() - 12.5;
        assert!((v2 - want2).abs() < 1e-12);
    }

    #[test]
    fn log_density_matches_explicit_inverse_oracle_d3() {
        let p = random_params(2, 3, 4, 17);
        let f = array![0.1, -0.4, 0.8, 0.3];
        let y = array![0.5, -1.0, 2.0];
        let v = per_cluster_logdensity(&p, &f.view(), &y.view(), 1).unwrap();
        // oracle: explicit inverse and determinant via cofactors
        let pred = predict(&p, &f.view()).unwrap();
        let mu = pred.mu.row(1);
        let s = &p.sigma[1];
        let det = s[[0, 0]] * (s[[1, 1]] * s[[2, 2]] - s[[1, 2]] * s[[2, 1]])
            - s[[0, 1]] * (s[[1, 0]] * s[[2, 2]] - s[[1, 2]] * s[[2, 0]])
            + s[[0, 2]] * (s[[1, 0]] * s[[2, 1]] - s[[1, 1]] * s[[2, 0]]);
        let mut inv = Array2::zeros((3, 3));
        for i in 0..3 {
            for j in 0..3 {
                let (a, b, c, d_) = match (i, j) {
                    (0, 0) => (s[[1, 1]], s[[1, 2]], s[[2, 1]], s[[2, 2]]),
                    (0, 1) => (s[[0, 2]], s[[0, 1]], s[[2, 2]], s[[2, 1]]),
                    (0, 2) => (s[[0, 1]], s[[0, 2]], s[[1, 1]], s[[1, 2]]),
                    (1, 0) => (s[[1, 2]], s[[1, 0]], s[[2, 2]], s[[2, 0]]),
                    (1, 1) => (s[[0, 0]], s[[0, 2]], s[[2, 0]], s[[2, 2]]),
                    (1, 2) => (s[[0, 2]], s[[0, 0]], s[[1, 2]], s[[1, 0]]),
                    (2, 0) => (s[[1, 0]], s[[1, 1]], s[[2, 0]], s[[2, 1]]),
                    (2, 1) => (s[[0, 1]], s[[0, 0]], s[[2, 1]], s[[2, 0]]),
                    _ => (s[[0, 0]], s[[0, 1]], s[[1, 0]], s[[1, 1]]),
                };
                inv[[j, i]] = (a * d_ - b * c) / det;
            }
        }
        let diff = array![y[0] - mu[0], y[1] - mu[1], y[2] - mu[2]];
        let quad = diff.dot(&inv.dot(&diff));
        let want = -1.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln() - 0.5 * quad;
        assert!((v - want).abs() < 1e-11, "{v} vs {want}");
    }

    #[test]
    fn pseudolikelihood_matches_dense_oracle() {
        let p = random_params(2, 2, 3, 29);
        let mut rng = rng_from_seed(30);
        let t_count = 5;
        let feats = Array2::from_shape_fn((t_count, 3), |_| uniform_symmetric::<f64>(&mut rng, 1.0));
        let data: Vec<BinnedCytogram<f64>> = (0..t_count)
            .map(|t| {
                let m = 10;
                let centers = Array2::from_shape_fn((m, 2), |_| uniform_symmetric::<f64>(&mut rng, 3.0));
                let weights = Array1::from_shape_fn(m, |_| uniform_symmetric::<f64>(&mut rng, 0.4) + 0.5);
                BinnedCytogram { time: t as u64 + 1, centers, weights }
            })
            .collect();
        let v = log_pseudolikelihood(&p, &data, &feats.view()).unwrap();
        // oracle: densities via explicit 2x2 inverse, plain summation
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for (t, bins) in data.iter().enumerate() {
            let pred = predict(&p, &feats.row(t)).unwrap();
            for b in 0..bins.len() {
                let y = bins.centers.row(b);
                let mut mix = 0.0f64;
                for c in 0..2 {
                    let s = &p.sigma[c];
                    let det = s[[0, 0]] * s[[1, 1]] - s[[0, 1]] * s[[1, 0]];
                    let dx = y[0] - pred.mu[[c, 0]];
                    let dy = y[1] - pred.mu[[c, 1]];
                    let quad = (s[[1, 1]] * dx * dx - 2.0 * s[[0, 1]] * dx * dy + s[[0, 0]] * dy * dy) / det;
                    let dens = (-0.5 * quad).exp() / (2.0 * std::f64::consts::PI * det.sqrt());
                    mix += pred.pi[c] * dens;
                }
                num += bins.weights[b] * mix.ln();
                den += bins.weights[b];
            }
        }
        assert!((v - num / den).abs() < 1e-10, "{v} vs {}", num / den);
    }

    proptest! {
        // adding a constant to every gating logit leaves pi unchanged
        #[test]
        fn softmax_shift_invariance(shift in -30.0f64..30.0, seed in 0u64..50) {
            let mut p = random_params(3, 1, 4, seed);
            let f = array![0.5, -0.3, 0.2, 0.9];
            let base = predict(&p, &f.view()).unwrap();
            for c in 0..3 {
                p.alpha0[c] += shift;
            }
            // the anchor is broken on purpose here, so skip validation
            let k = p.k();
            let d = p.d();
            let n_h = p.n_features();
            let mut mu = Array2::<f64>::zeros((k, d));
            for c in 0..k {
                for j in 0..d {
                    mu[[c, j]] = p.beta0[[c, j]] + (0..n_h).map(|h| p.beta[c][[h, j]] * f[h]).sum::<f64>();
                }
            }
            let mut logits: Vec<f64> = (0..k)
                .map(|c| p.alpha0[c] + (0..n_h).map(|h| p.alpha[[h, c]] * f[h]).sum::<f64>())
                .collect();
            softmax_inplace(&mut logits);
            for c in 0..3 {
                prop_assert!((logits[c] - base.pi[c]).abs() < 1e-14);
            }
        }

        // adding v to all beta0 rows and to all data leaves the value unchanged
        #[test]
        fn translation_equivariance(shift in -5.0f64..5.0, seed in 0u64..30) {
            let p = random_params(2, 1, 3, seed);
            let mut rng = rng_from_seed(seed + 1000);
            let feats = Array2::from_shape_fn((3, 3), |_| uniform_symmetric::<f64>(&mut rng, 1.0));
            let data: Vec<BinnedCytogram<f64>> = (0..3)
                .map(|t| {
                    let centers = Array2::from_shape_fn((4, 1), |_| uniform_symmetric::<f64>(&mut rng, 2.0));
                    let weights = Array1::from_shape_fn(4, |_| uniform_symmetric::<f64>(&mut rng, 0.4) + 0.5);
                    BinnedCytogram { time: t as u64 + 1, centers, weights }
                })
                .collect();
            let v1 = log_pseudolikelihood(&p, &data, &feats.view()).unwrap();
            let mut p2 = p.clone();
            for c in 0..2 {
                p2.beta0[[c, 0]] += shift;
            }
            let data2: Vec<BinnedCytogram<f64>> = data
                .iter()
                .map(|b| BinnedCytogram {
                    time: b.time,
                    centers: &b.centers + shift,
                    weights: b.weights.clone(),
                })
                .collect();
            let v2 = log_pseudolikelihood(&p2, &data2, &feats.view()).unwrap();
            prop_assert!((v1 - v2).abs() < 1e-10);
        }

        // finite result even when every individual density underflows
        #[test]
        fn log_sum_exp_keeps_far_data_finite(offset in 100.0f64..500.0) {
            let p = MoeParams::<f64>::zeros(2, 1, 2);
            let data = vec![one_bin(1, vec![offset], 1.0)];
            let feats = Array2::zeros((1, 2));
            let v = log_pseudolikelihood(&p, &data, &feats.view()).unwrap();
            prop_assert!(v.is_finite());
        }
    }
}
