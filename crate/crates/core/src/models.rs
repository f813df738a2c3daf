//! Base probabilistic predictors and versioned JSON persistence.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dist::{CategoricalDist, GaussianDist, PredictiveDistribution};
use crate::error::{Error, Result};
use crate::nn::{sgd_train, Architecture, NeuralNet, Standardizer, Trace, TrainConfig, TrainLog};

pub const FORMAT_VERSION: u32 = 1;

/// Anything that maps a feature vector to a forecast.
pub trait ProbabilisticModel {
    fn predict_dist(&self, x: &[f64]) -> Result<PredictiveDistribution>;
}

impl<T: ProbabilisticModel + ?Sized> ProbabilisticModel for Box<T> {
    fn predict_dist(&self, x: &[f64]) -> Result<PredictiveDistribution> {
        (**self).predict_dist(x)
    }
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    version: u32,
    kind: String,
    body: T,
}

/// Types that can be written to and read from the versioned JSON format.
pub trait Persist: Serialize + DeserializeOwned + Sized {
    const KIND: &'static str;

    /// Shape and value checks run after loading.
    fn check(self) -> Result<Self> {
        Ok(self)
    }

    fn to_json(&self) -> Result<String> {
        let env = Envelope {
            format: "calibrax".to_string(),
            version: FORMAT_VERSION,
            kind: Self::KIND.to_string(),
            body: self,
        };
        Ok(serde_json::to_string_pretty(&env)?)
    }

    fn from_json(s: &str) -> Result<Self> {
        let env: Envelope<Self> = serde_json::from_str(s)?;
        if env.format != "calibrax" || env.version != FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "unsupported model file {} v{}",
                env.format, env.version
            )));
        }
        if env.kind != Self::KIND {
            return Err(Error::Schema(format!("expected a {} file, found {}", Self::KIND, env.kind)));
        }
        env.body.check()
    }

    fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesianRidgeModel {
    pub weight_mean: Vec<f64>,
    /// Row-major posterior covariance.
    pub weight_cov: Vec<Vec<f64>>,
    pub noise_precision: f64,
    pub prior_precision: f64,
}

pub const DEFAULT_PRIOR_PRECISION: f64 = 1e-6;

fn design(x: &[Vec<f64>], y: &[f64]) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::domain(format!("design has {} rows, target has {}", x.len(), y.len())));
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(Error::domain("design rows must share a positive width"));
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::domain("design and target must be finite"));
    }
    Ok((
        DMatrix::from_fn(x.len(), d, |i, j| x[i][j]),
        DVector::from_column_slice(y),
    ))
}

/// `1 / residual variance` of the minimum-norm least-squares fit.
fn residual_precision(xm: &DMatrix<f64>, yv: &DVector<f64>) -> Result<f64> {
    let svd = xm.clone().svd(true, true);
    let w = svd
        .solve(yv, 1e-12)
        .map_err(|e| Error::Numeric(format!("least squares failed: {e}")))?;
    let r = yv - xm * w;
    let var = r.norm_squared() / yv.len() as f64;
    Ok(1.0 / var.max(1e-12))
}

/// Conjugate Gaussian posterior over linear weights. `beta = None` sets the
/// noise precision to the inverse least-squares residual variance;
/// `evidence_iters > 0` then refines `(alpha, beta)` by evidence maximization.
pub fn fit_bayesian_ridge(
    x: &[Vec<f64>],
    y: &[f64],
    alpha: f64,
    beta: Option<f64>,
    evidence_iters: usize,
) -> Result<BayesianRidgeModel> {
    let (xm, yv) = design(x, y)?;
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::domain("prior precision must be finite and nonnegative"));
    }
    let mut alpha = alpha;
    let mut beta = match beta {
        Some(b) if b > 0.0 && b.is_finite() => b,
        Some(_) => return Err(Error::domain("noise precision must be positive")),
        None => residual_precision(&xm, &yv)?,
    };
    let xtx = xm.transpose() * &xm;
    let xty = xm.transpose() * &yv;
    let eig = SymmetricEigen::new(xtx.clone()).eigenvalues;
    let d = xtx.nrows();
    let n = y.len() as f64;
    for _ in 0..evidence_iters {
        let (mean, _) = posterior(&xtx, &xty, alpha, beta)?;
        let gamma: f64 = eig.iter().map(|&l| beta * l.max(0.0) / (alpha + beta * l.max(0.0))).sum();
        let wn = mean.norm_squared();
        let rn = (&yv - &xm * &mean).norm_squared();
        if wn > 0.0 {
            alpha = (gamma / wn).max(1e-12);
        }
        if n - gamma > 0.0 && rn > 0.0 {
            beta = (n - gamma) / rn;
        }
    }
    let (mean, cov) = posterior(&xtx, &xty, alpha, beta)?;
    Ok(BayesianRidgeModel {
        weight_mean: mean.iter().copied().collect(),
        weight_cov: (0..d).map(|i| (0..d).map(|j| cov[(i, j)]).collect()).collect(),
        noise_precision: beta,
        prior_precision: alpha,
    })
}

fn posterior(xtx: &DMatrix<f64>, xty: &DVector<f64>, alpha: f64, beta: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = xtx.nrows();
    let a = DMatrix::identity(d, d) * alpha + xtx * beta;
    let eig = SymmetricEigen::new(a.clone()).eigenvalues;
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v.abs())));
    if !(lo > 1e-12 * hi.max(1.0)) {
        return Err(Error::Numeric(format!(
            "posterior precision is singular (smallest eigenvalue {lo:e}); use a positive prior precision"
        )));
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Numeric("posterior precision is not positive definite".into()))?;
    let mut cov = chol.inverse();
    cov = (&cov + cov.transpose()) * 0.5;
    let mean = &cov * xty * beta;
    Ok((mean, cov))
}

impl BayesianRidgeModel {
    pub fn dim(&self) -> usize {
        self.weight_mean.len()
    }

    pub fn predict(&self, x: &[f64]) -> Result<GaussianDist> {
        if x.len() != self.dim() {
            return Err(Error::domain(format!("expected {} features, got {}", self.dim(), x.len())));
        }
        let mu: f64 = x.iter().zip(&self.weight_mean).map(|(a, b)| a * b).sum();
        let mut quad = 0.0;
        for (i, row) in self.weight_cov.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                quad += x[i] * c * x[j];
            }
        }
        GaussianDist::new(mu, (quad.max(0.0) + 1.0 / self.noise_precision).sqrt())
    }
}

pub fn predict_bayesian_ridge(model: &BayesianRidgeModel, x: &[f64]) -> Result<GaussianDist> {
    model.predict(x)
}

impl ProbabilisticModel for BayesianRidgeModel {
    fn predict_dist(&self, x: &[f64]) -> Result<PredictiveDistribution> {
        Ok(self.predict(x)?.into())
    }
}

impl Persist for BayesianRidgeModel {
    const KIND: &'static str = "bayesian_ridge";

    fn check(self) -> Result<Self> {
        let d = self.weight_mean.len();
        if d == 0 || self.weight_cov.len() != d || self.weight_cov.iter().any(|r| r.len() != d) {
            return Err(Error::Schema("covariance shape does not match weights".into()));
        }
        if !(self.noise_precision > 0.0 && self.prior_precision >= 0.0) {
            return Err(Error::Schema("precisions must be positive".into()));
        }
        Ok(self)
    }
}

pub const SIGMA_FLOOR: f64 = 1e-3;

fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else {
        v.exp().ln_1p()
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// MLP with a mean head and a softplus standard-deviation head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMlp {
    pub net: NeuralNet,
    pub x_norm: Standardizer,
    pub y_mean: f64,
    pub y_scale: f64,
}

impl GaussianMlp {
    fn heads(&self, out: &[f64]) -> (f64, f64) {
        (
            self.y_mean + self.y_scale * out[0],
            self.y_scale * softplus(out[1]) + SIGMA_FLOOR,
        )
    }

    pub fn predict(&self, x: &[f64]) -> Result<GaussianDist> {
        if x.len() != self.x_norm.dim() {
            return Err(Error::domain(format!("expected {} features, got {}", self.x_norm.dim(), x.len())));
        }
        let out = self.net.forward(&self.x_norm.apply(x))?;
        let (mu, sigma) = self.heads(&out);
        GaussianDist::new(mu, sigma)
    }
}

impl ProbabilisticModel for GaussianMlp {
    fn predict_dist(&self, x: &[f64]) -> Result<PredictiveDistribution> {
        Ok(self.predict(x)?.into())
    }
}

impl Persist for GaussianMlp {
    const KIND: &'static str = "gaussian_mlp";

    fn check(mut self) -> Result<Self> {
        self.net = self.net.validated()?;
        if self.net.arch().input_dim != self.x_norm.dim() || self.net.arch().output_dim != 2 {
            return Err(Error::Schema("network shape does not match the Gaussian head".into()));
        }
        Ok(self)
    }
}

fn y_stats(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let m = y.iter().sum::<f64>() / n;
    let s = (y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
    (m, if s > 1e-12 { s } else { 1.0 })
}

/// Trains a Gaussian MLP on mean log loss. `hidden` gives the hidden widths;
/// layers use dense skips.
pub fn fit_mlp_gaussian(
    x: &[Vec<f64>],
    y: &[f64],
    hidden: &[usize],
    cfg: &TrainConfig,
) -> Result<(GaussianMlp, TrainLog)> {
    let _ = design(x, y)?;
    let x_norm = Standardizer::fit(x)?;
    let xs: Vec<Vec<f64>> = x.iter().map(|r| x_norm.apply(r)).collect();
    let (y_mean, y_scale) = y_stats(y);
    let arch = Architecture::new(x_norm.dim(), hidden.to_vec(), 2, true)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = GaussianMlp {
        net: NeuralNet::init(&arch, &mut rng),
        x_norm,
        y_mean,
        y_scale,
    };
    let mut net = model.net.clone();
    let mut trace = Trace::default();
    let log = sgd_train(&mut net, y.len(), cfg, &mut rng, |net, idx, _, grad, _| {
        let w = 1.0 / idx.len() as f64;
        let mut loss = 0.0;
        for &i in idx {
            net.forward_trace(&xs[i], &mut trace)?;
            let out = trace.output();
            let mu = y_mean + y_scale * out[0];
            let sigma = y_scale * softplus(out[1]) + SIGMA_FLOOR;
            let r = y[i] - mu;
            loss += w * (sigma.ln() + 0.5 * (r / sigma).powi(2) + 0.5 * (2.0 * std::f64::consts::PI).ln());
            let dmu = -r / (sigma * sigma);
            let dsigma = 1.0 / sigma - r * r / sigma.powi(3);
            let dout = [w * dmu * y_scale, w * dsigma * y_scale * sigmoid(out[1])];
            net.backward_into(&trace, &dout, grad, None)?;
        }
        Ok(loss)
    }, |net, i| {
        let out = net.forward(&xs[i])?;
        let mu = y_mean + y_scale * out[0];
        let sigma = y_scale * softplus(out[1]) + SIGMA_FLOOR;
        Ok(sigma.ln() + 0.5 * ((y[i] - mu) / sigma).powi(2) + 0.5 * (2.0 * std::f64::consts::PI).ln())
    })?;
    model.net = net;
    Ok((model, log))
}

/// MLP classifier with a softmax output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxMlp {
    pub net: NeuralNet,
    pub x_norm: Standardizer,
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl SoftmaxMlp {
    pub fn num_classes(&self) -> usize {
        self.net.arch().output_dim
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.x_norm.dim() {
            return Err(Error::domain(format!("expected {} features, got {}", self.x_norm.dim(), x.len())));
        }
        self.net.forward(&self.x_norm.apply(x))
    }

    pub fn predict(&self, x: &[f64]) -> Result<CategoricalDist> {
        CategoricalDist::from_weights(&softmax(&self.logits(x)?))
    }
}

impl ProbabilisticModel for SoftmaxMlp {
    fn predict_dist(&self, x: &[f64]) -> Result<PredictiveDistribution> {
        Ok(self.predict(x)?.into())
    }
}

impl Persist for SoftmaxMlp {
    const KIND: &'static str = "softmax_mlp";

    fn check(mut self) -> Result<Self> {
        self.net = self.net.validated()?;
        if self.net.arch().input_dim != self.x_norm.dim() || self.net.arch().output_dim < 2 {
            return Err(Error::Schema("network shape does not match the classifier".into()));
        }
        Ok(self)
    }
}

/// Trains a softmax classifier on mean cross-entropy. Labels must lie in
/// `0..num_classes`.
pub fn fit_softmax_classifier(
    x: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    hidden: &[usize],
    cfg: &TrainConfig,
) -> Result<(SoftmaxMlp, TrainLog)> {
    if num_classes < 2 {
        return Err(Error::domain("need at least two classes"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::domain(format!("label {bad} outside 0..{num_classes}")));
    }
    let _ = design(x, &vec![0.0; labels.len()])?;
    let x_norm = Standardizer::fit(x)?;
    let xs: Vec<Vec<f64>> = x.iter().map(|r| x_norm.apply(r)).collect();
    let arch = Architecture::new(x_norm.dim(), hidden.to_vec(), num_classes, true)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = NeuralNet::init(&arch, &mut rng);
    let mut trace = Trace::default();
    let log = sgd_train(&mut net, labels.len(), cfg, &mut rng, |net, idx, _, grad, _| {
        let w = 1.0 / idx.len() as f64;
        let mut loss = 0.0;
        let mut dout = vec![0.0; num_classes];
        for &i in idx {
            net.forward_trace(&xs[i], &mut trace)?;
            let p = softmax(trace.output());
            loss -= w * p[labels[i]].max(1e-300).ln();
            for (k, d) in dout.iter_mut().enumerate() {
                *d = w * (p[k] - if k == labels[i] { 1.0 } else { 0.0 });
            }
            net.backward_into(&trace, &dout, grad, None)?;
        }
        Ok(loss)
    }, |net, i| Ok(-softmax(&net.forward(&xs[i])?)[labels[i]].max(1e-300).ln()))?;
    Ok((SoftmaxMlp { net, x_norm }, log))
}
