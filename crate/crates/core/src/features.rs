//! Covariate feature pipeline: column standardization, PCA projection, and
//! a fixed random-weight hidden layer.
//!
//! The hidden layer draws its weight matrix once from `Unif(-a, a)` and
//! freezes it; only output-layer coefficients are ever fitted. Setting the
//! map to [`linear_feature_map`] reproduces the linear baseline in which the
//! regressors are the principal components themselves.

use crate::data::CovariateMatrix;
use crate::error::{MoeError, Result};
use crate::linalg::sym_eigen;
use crate::num::{logistic, rng_from_seed, uniform_symmetric, Real};
use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

/// Column centering and unit-variance scaling fitted on training covariates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Standardizer<R> {
    pub means: Array1<R>,
    pub scales: Array1<R>,
}

impl<R: Real> Standardizer<R> {
    /// Fits means and sample standard deviations. Constant columns are
    /// rejected: they carry no variation and would divide by zero.
    pub fn fit(x: &Array2<R>) -> Result<Self> {
        let t = x.nrows();
        let p = x.ncols();
        if t < 2 {
            return Err(MoeError::data("standardizer needs at least 2 rows"));
        }
        let nf = R::of(t as f64);
        let mut means = Array1::zeros(p);
        let mut scales = Array1::zeros(p);
        for j in 0..p {
            let col = x.column(j);
            let mean = col.sum() / nf;
            let mut ss = R::zero();
            for &v in col.iter() {
                let d = v - mean;
                ss += d * d;
            }
            let sd = (ss / R::of((t - 1) as f64)).sqrt();
            if sd <= R::of(1e-12) * (R::one() + mean.abs()) {
                return Err(MoeError::data(format!(
                    "covariate column {j} is constant; remove it before fitting"
                )));
            }
            means[j] = mean;
            scales[j] = sd;
        }
        Ok(Self { means, scales })
    }

    /// Identity transform for callers whose covariates are already features.
    pub fn identity(p: usize) -> Self {
        Self {
            means: Array1::zeros(p),
            scales: Array1::ones(p),
        }
    }

    pub fn apply_row(&self, x: &ArrayView1<R>) -> Result<Array1<R>> {
        if x.len() != self.means.len() {
            return Err(MoeError::dim(format!(
                "covariate vector has length {}, expected {}",
                x.len(),
                self.means.len()
            )));
        }
        Ok(Array1::from_shape_fn(x.len(), |j| {
            (x[j] - self.means[j]) / self.scales[j]
        }))
    }

    pub fn apply(&self, x: &Array2<R>) -> Result<Array2<R>> {
        if x.ncols() != self.means.len() {
            return Err(MoeError::dim("covariate matrix width mismatch"));
        }
        let mut z = x.clone();
        for mut row in z.rows_mut() {
            for j in 0..row.len() {
                row[j] = (row[j] - self.means[j]) / self.scales[j];
            }
        }
        Ok(z)
    }
}

/// Leading principal-component loadings of the standardized covariates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PcaProjection<R> {
    /// `p x q` loading matrix with orthonormal columns.
    pub loadings: Array2<R>,
    /// Variance fraction carried by each retained component.
    pub explained: Array1<R>,
    pub q: usize,
}

impl<R: Real> PcaProjection<R> {
    /// Identity projection: every covariate passes through unchanged.
    pub fn identity(p: usize) -> Self {
        Self {
            loadings: Array2::eye(p),
            explained: Array1::from_elem(p, R::of(1.0 / p as f64)),
            q: p,
        }
    }
}

/// Fits the standardizer and PCA loadings, keeping the smallest `q` whose
/// cumulative explained variance reaches `threshold`.
pub fn fit_pca<R: Real>(
    x: &CovariateMatrix<R>,
    threshold: f64,
) -> Result<(Standardizer<R>, PcaProjection<R>)> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(MoeError::config(format!(
            "PCA threshold must lie in (0, 1], got {threshold}"
        )));
    }
    let standardizer = Standardizer::fit(&x.x)?;
    let z = standardizer.apply(&x.x)?;
    let t = z.nrows();
    let p = z.ncols();
    let corr = z.t().dot(&z) / R::of((t - 1) as f64);
    let (mut values, vectors) = sym_eigen(&corr.view());
    for v in values.iter_mut() {
        if *v < R::zero() {
            *v = R::zero();
        }
    }
    let total: R = values.iter().copied().sum();
    if !(total > R::zero()) {
        return Err(MoeError::data("covariate matrix has no variance"));
    }
    let fractions: Vec<R> = values.iter().map(|&v| v / total).collect();
    let thr = R::of(threshold) - R::of(1e-12);
    let mut q = p;
    let mut cum = R::zero();
    for (j, &f) in fractions.iter().enumerate() {
        cum += f;
        if cum >= thr {
            q = j + 1;
            break;
        }
    }
    let mut loadings = Array2::zeros((p, q));
    for c in 0..q {
        // sign convention: largest-magnitude entry of each column is positive
        let col = vectors.column(c);
        let mut arg = 0usize;
        for i in 1..p {
            if col[i].abs() > col[arg].abs() {
                arg = i;
            }
        }
        let flip = if col[arg] < R::zero() { -R::one() } else { R::one() };
        for i in 0..p {
            loadings[[i, c]] = col[i] * flip;
        }
    }
    let explained = Array1::from_vec(fractions[..q].to_vec());
    Ok((standardizer, PcaProjection { loadings, explained, q }))
}

/// Projects one covariate vector onto the retained components.
pub fn project<R: Real>(
    standardizer: &Standardizer<R>,
    pca: &PcaProjection<R>,
    x: &ArrayView1<R>,
) -> Result<Array1<R>> {
    let z = standardizer.apply_row(x)?;
    Ok(pca.loadings.t().dot(&z))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Logistic,
    Identity,
}

impl std::str::FromStr for Activation {
    type Err = MoeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(Activation::Logistic),
            "identity" => Ok(Activation::Identity),
            other => Err(MoeError::config(format!(
                "unknown activation '{other}' (expected 'logistic' or 'identity')"
            ))),
        }
    }
}

/// Frozen random hidden layer: `h = W' (1, psi')'` followed by the
/// activation. `W` has one bias row plus one row per input component.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RandomFeatureMap<R> {
    /// `(q + 1) x n_h` weights; the first row multiplies the constant 1.
    pub w: Array2<R>,
    pub a: R,
    pub activation: Activation,
    pub seed: u64,
}

impl<R: Real> RandomFeatureMap<R> {
    pub fn input_dim(&self) -> usize {
        self.w.nrows() - 1
    }

    pub fn n_features(&self) -> usize {
        self.w.ncols()
    }

    /// Activated hidden-layer output for one projected covariate vector.
    pub fn hidden(&self, psi: &ArrayView1<R>) -> Result<Array1<R>> {
        let q = self.input_dim();
        if psi.len() != q {
            return Err(MoeError::dim(format!(
                "feature input has length {}, expected {q}",
                psi.len()
            )));
        }
        let n_h = self.n_features();
        let mut h = Array1::zeros(n_h);
        for c in 0..n_h {
            let mut acc = self.w[[0, c]];
            for j in 0..q {
                acc += self.w[[j + 1, c]] * psi[j];
            }
            h[c] = acc;
        }
        match self.activation {
            Activation::Logistic => Ok(h.mapv(logistic)),
            Activation::Identity => Ok(h),
        }
    }
}

/// Draws the hidden-layer weights i.i.d. `Unif(-a, a)` from a seeded stream.
pub fn make_random_features<R: Real>(
    seed: u64,
    q: usize,
    n_h: usize,
    a: R,
    activation: Activation,
) -> Result<RandomFeatureMap<R>> {
    if n_h == 0 {
        return Err(MoeError::config("hidden width must be at least 1"));
    }
    if a < R::zero() {
        return Err(MoeError::config("weight half-width must be non-negative"));
    }
    let mut rng = rng_from_seed(seed);
    let w = Array2::from_shape_fn((q + 1, n_h), |_| uniform_symmetric(&mut rng, a));
    Ok(RandomFeatureMap { w, a, activation, seed })
}

/// Pass-through map whose features are exactly the `q` inputs. Fitting on
/// these features gives the linear mixture-of-experts baseline.
pub fn linear_feature_map<R: Real>(q: usize) -> Result<RandomFeatureMap<R>> {
    if q == 0 {
        return Err(MoeError::config("linear feature map needs at least 1 input"));
    }
    let mut w = Array2::zeros((q + 1, q));
    for j in 0..q {
        w[[j + 1, j]] = R::one();
    }
    Ok(RandomFeatureMap {
        w,
        a: R::zero(),
        activation: Activation::Identity,
        seed: 0,
    })
}

/// How the raw covariates are reduced before the hidden layer.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum PcaMode {
    /// Standardize, then keep the smallest q reaching this explained-variance
    /// threshold.
    Threshold(f64),
    /// Use the covariates as-is (they are already features, e.g. simulated
    /// principal components).
    None,
}

/// Configuration for fitting a [`FeaturePipeline`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub pca: PcaMode,
    pub n_h: usize,
    pub a: f64,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            pca: PcaMode::Threshold(0.95),
            n_h: 70,
            a: 0.5,
            activation: Activation::Logistic,
            seed: 0,
        }
    }
}

/// Standardizer + PCA + random hidden layer, fitted once and frozen.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeaturePipeline<R> {
    pub standardizer: Standardizer<R>,
    pub pca: PcaProjection<R>,
    pub rfm: RandomFeatureMap<R>,
}

impl<R: Real> FeaturePipeline<R> {
    pub fn fit(x: &CovariateMatrix<R>, cfg: &FeatureConfig) -> Result<Self> {
        let (standardizer, pca) = match cfg.pca {
            PcaMode::Threshold(thr) => fit_pca(x, thr)?,
            PcaMode::None => (
                Standardizer::identity(x.n_covariates()),
                PcaProjection::identity(x.n_covariates()),
            ),
        };
        let rfm = match cfg.activation {
            Activation::Logistic => {
                make_random_features(cfg.seed, pca.q, cfg.n_h, R::of(cfg.a), Activation::Logistic)?
            }
            Activation::Identity => linear_feature_map(pca.q)?,
        };
        Ok(Self { standardizer, pca, rfm })
    }

    pub fn q(&self) -> usize {
        self.pca.q
    }

    pub fn n_features(&self) -> usize {
        self.rfm.n_features()
    }

    /// Projected principal components for one covariate vector.
    pub fn components_for(&self, x: &ArrayView1<R>) -> Result<Array1<R>> {
        project(&self.standardizer, &self.pca, x)
    }

    /// Activated features for one covariate vector.
    pub fn features_for(&self, x: &ArrayView1<R>) -> Result<Array1<R>> {
        let psi = self.components_for(x)?;
        self.rfm.hidden(&psi.view())
    }

    /// `T x n_h` feature matrix for a covariate matrix.
    pub fn feature_matrix(&self, x: &CovariateMatrix<R>) -> Result<Array2<R>> {
        let mut out = Array2::zeros((x.len(), self.n_features()));
        for (t, row) in x.x.rows().into_iter().enumerate() {
            let f = self.features_for(&row)?;
            out.row_mut(t).assign(&f);
        }
        Ok(out)
    }

    /// `T x q` matrix of projected components (the PCA scores).
    pub fn component_matrix(&self, x: &CovariateMatrix<R>) -> Result<Array2<R>> {
        let mut out = Array2::zeros((x.len(), self.q()));
        for (t, row) in x.x.rows().into_iter().enumerate() {
            let psi = self.components_for(&row)?;
            out.row_mut(t).assign(&psi);
        }
        Ok(out)
    }
}
