//! Synthetic generators with known ground truth, the isotonic PIT baseline,
//! and the experiment runner that fits, recalibrates, scores and reports.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use crate::data::{load_csv, save_csv, split, Dataset, DEFAULT_SPLIT};
use crate::data::format_f64;
use crate::dist::{
    featurize, normal_quantile, CategoricalDist, GaussianDist, PredictiveDistribution, QuantileGridDist,
    DECILES,
};
use crate::error::{Error, Result};
use crate::metrics::{
    accuracy, classification_calibration_error, confidence_reliability, ece_classification, mae_mape,
    quantile_calibration_error, quantile_reliability, ReliabilityTable,
};
use crate::models::{
    fit_bayesian_ridge, fit_mlp_gaussian, fit_softmax_classifier, softmax, BayesianRidgeModel, GaussianMlp,
    Persist, ProbabilisticModel, SoftmaxMlp, DEFAULT_PRIOR_PRECISION,
};
use crate::nn::TrainConfig;
use crate::recalibrate::{
    fit_kde_recalibrator, fit_multiclass_platt, fit_platt, fit_quantile_recalibrator, fit_simplex_recalibrator,
    fit_temperature, BandwidthRule, KdeRecalibrator, MulticlassPlatt, PlattScaler, QuantileRecalConfig,
    QuantileRecalibrator, Recalibrator, SimplexRecalConfig, SimplexRecalibrator, TemperatureScaler,
};
use crate::scoring::{brier, crps, log_loss, pinball_avg};

// ---------------------------------------------------------------------------
// generators

/// Conditional mean of the heteroscedastic generator.
pub fn hetero_mean(x: f64) -> f64 {
    x + 0.5 * (4.0 * PI * x).sin()
}

/// Conditional standard deviation of the heteroscedastic generator.
pub fn hetero_sd(x: f64) -> f64 {
    0.05 + 0.5 * x
}

/// True conditional `tau`-quantile of `y` given `x`.
pub fn hetero_quantile(x: f64, tau: f64) -> f64 {
    hetero_mean(x) + hetero_sd(x) * normal_quantile(tau)
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::domain("generator needs n >= 1"));
    }
    Ok(())
}

fn hetero_draws(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = rng.random();
        let e: f64 = rng.sample(StandardNormal);
        xs.push(x);
        ys.push(hetero_mean(x) + hetero_sd(x) * e);
    }
    (xs, ys)
}

/// `x ~ U[0,1]`, `y = x + 0.5 sin(4πx) + (0.05 + 0.5x) ε`.
pub fn gen_heteroscedastic(n: usize, seed: u64) -> Result<Dataset> {
    check_n(n)?;
    let (xs, ys) = hetero_draws(n, seed);
    Dataset::new(vec!["x".into()], "y", xs.into_iter().map(|x| vec![x]).collect(), ys)
}

/// Base forecasts that get the mean right but shrink the spread.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MisscaledOracle {
    pub shrink: f64,
}

impl MisscaledOracle {
    pub fn new(shrink: f64) -> Result<Self> {
        if !(shrink > 0.0 && shrink.is_finite()) {
            return Err(Error::domain(format!("shrink must be positive, got {shrink}")));
        }
        Ok(Self { shrink })
    }

    pub fn predict(&self, x: &[f64]) -> Result<GaussianDist> {
        if x.len() != 1 {
            return Err(Error::Schema(format!("expected 1 feature, got {}", x.len())));
        }
        GaussianDist::new(hetero_mean(x[0]), self.shrink * hetero_sd(x[0]))
    }

    /// The exact recalibration map: quantile `tau` of the true law behind
    /// forecast `f`.
    pub fn recalibrated_quantile(&self, f: &GaussianDist, tau: f64) -> f64 {
        f.mu() + f.sigma() / self.shrink * normal_quantile(tau)
    }
}

impl ProbabilisticModel for MisscaledOracle {
    fn predict_dist(&self, x: &[f64]) -> Result<PredictiveDistribution> {
        Ok(self.predict(x)?.into())
    }
}

/// Outcomes from the heteroscedastic law with the shrunken forecasts.
#[derive(Debug, Clone)]
pub struct MisscaledStream {
    pub data: Dataset,
    pub forecasts: Vec<GaussianDist>,
    pub oracle: MisscaledOracle,
}

pub fn gen_variance_misscaled(n: usize, seed: u64, shrink: f64) -> Result<MisscaledStream> {
    check_n(n)?;
    let oracle = MisscaledOracle::new(shrink)?;
    let data = gen_heteroscedastic(n, seed)?;
    let forecasts = data.x.iter().map(|x| oracle.predict(x)).collect::<Result<Vec<_>>>()?;
    Ok(MisscaledStream { data, forecasts, oracle })
}

/// True `P(Y = 1 | score)` for the distorted binary stream.
pub fn distorted_binary_truth(score: f64) -> f64 {
    score.clamp(0.0, 1.0).sqrt()
}

/// `p ~ U[0,1]`, score `p²`, label `~ Bernoulli(p)`.
pub fn gen_distorted_binary(n: usize, seed: u64) -> Result<Dataset> {
    check_n(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let p: f64 = rng.random();
        let u: f64 = rng.random();
        xs.push(vec![p * p]);
        ys.push(if u < p { 1.0 } else { 0.0 });
    }
    Dataset::new(vec!["score".into()], "label", xs, ys)
}

/// True class probabilities behind a forecast whose logits were multiplied
/// by `distortion`.
pub fn distorted_multiclass_truth(forecast: &[f64], distortion: f64) -> Vec<f64> {
    let z: Vec<f64> = forecast
        .iter()
        .map(|p| p.max(f64::MIN_POSITIVE).ln() / distortion)
        .collect();
    softmax(&z)
}

/// Logits `ℓ ~ N(0, I_k)`, label `~ softmax(ℓ)`, forecast features
/// `softmax(distortion · ℓ)` in columns `p0..p{k-1}`.
pub fn gen_distorted_multiclass(n: usize, seed: u64, k: usize, distortion: f64) -> Result<Dataset> {
    check_n(n)?;
    if k < 2 {
        return Err(Error::domain("need at least two classes"));
    }
    if !(distortion > 0.0 && distortion.is_finite()) {
        return Err(Error::domain(format!("distortion must be positive, got {distortion}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    let mut logits = vec![0.0; k];
    for _ in 0..n {
        for l in logits.iter_mut() {
            *l = rng.sample(StandardNormal);
        }
        let truth = softmax(&logits);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut label = k - 1;
        for (c, p) in truth.iter().enumerate() {
            acc += p;
            if u < acc {
                label = c;
                break;
            }
        }
        let scaled: Vec<f64> = logits.iter().map(|l| distortion * l).collect();
        xs.push(softmax(&scaled));
        ys.push(label as f64);
    }
    Dataset::new((0..k).map(|c| format!("p{c}")).collect(), "label", xs, ys)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Heteroscedastic,
    VarianceMisscaled,
    DistortedBinary,
    DistortedMulticlass,
}

impl GeneratorKind {
    pub fn name(self) -> &'static str {
        match self {
            GeneratorKind::Heteroscedastic => "heteroscedastic",
            GeneratorKind::VarianceMisscaled => "variance_misscaled",
            GeneratorKind::DistortedBinary => "distorted_binary",
            GeneratorKind::DistortedMulticlass => "distorted_multiclass",
        }
    }
}

impl FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        from_name(s, "generator kind")
    }
}

fn from_name<T: for<'de> Deserialize<'de>>(s: &str, what: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| Error::domain(format!("unknown {what} `{s}`")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_shrink")]
    pub shrink: f64,
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_distortion")]
    pub distortion: f64,
}

fn default_shrink() -> f64 {
    0.5
}

fn default_classes() -> usize {
    3
}

fn default_distortion() -> f64 {
    3.0
}

impl GeneratorSpec {
    pub fn new(kind: GeneratorKind, n: usize, seed: u64) -> Self {
        Self {
            kind,
            n,
            seed,
            shrink: default_shrink(),
            classes: default_classes(),
            distortion: default_distortion(),
        }
    }
}

/// Draws the dataset described by `spec`. The variance-misscaled kind yields
/// its `(x, y)` pairs; its forecasts come from [`MisscaledOracle`].
pub fn generate(spec: &GeneratorSpec) -> Result<Dataset> {
    let ds = match spec.kind {
        GeneratorKind::Heteroscedastic => gen_heteroscedastic(spec.n, spec.seed)?,
        GeneratorKind::VarianceMisscaled => gen_variance_misscaled(spec.n, spec.seed, spec.shrink)?.data,
        GeneratorKind::DistortedBinary => gen_distorted_binary(spec.n, spec.seed)?,
        GeneratorKind::DistortedMulticlass => {
            gen_distorted_multiclass(spec.n, spec.seed, spec.classes, spec.distortion)?
        }
    };
    Ok(ds.with_origin(spec.kind.name()))
}

// ---------------------------------------------------------------------------
// isotonic PIT baseline

/// Pool-adjacent-violators: the nondecreasing fit minimizing weighted
/// squared error. Returns `(start, end, value, weight)` blocks.
fn pav(ys: &[f64], ws: &[f64]) -> Vec<(usize, usize, f64, f64)> {
    let mut blocks: Vec<(usize, usize, f64, f64)> = Vec::with_capacity(ys.len());
    for (i, (&y, &w)) in ys.iter().zip(ws).enumerate() {
        blocks.push((i, i + 1, y, w));
        while blocks.len() > 1 {
            let b = blocks[blocks.len() - 1];
            let a = blocks[blocks.len() - 2];
            if a.2 <= b.2 {
                break;
            }
            let w = a.3 + b.3;
            blocks.pop();
            *blocks.last_mut().unwrap() = (a.0, b.1, (a.2 * a.3 + b.2 * b.3) / w, w);
        }
    }
    blocks
}

/// Isotonic map from the base forecast's PIT value to its empirical
/// frequency, piecewise linear through strictly increasing knots that start
/// at `(0, 0)` and end at `(1, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicRecalibrator {
    pub knots_u: Vec<f64>,
    pub knots_p: Vec<f64>,
    pub output_levels: Vec<f64>,
}

const LEVEL_CLAMP: f64 = 1e-6;

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    let last = xs.len() - 1;
    if x >= xs[last] {
        return ys[last];
    }
    let j = xs.partition_point(|&v| v <= x);
    let (x0, x1, y0, y1) = (xs[j - 1], xs[j], ys[j - 1], ys[j]);
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

impl IsotonicRecalibrator {
    /// `R(u)`: recalibrated CDF level for base PIT value `u`.
    pub fn map(&self, u: f64) -> f64 {
        interp(&self.knots_u, &self.knots_p, u)
    }

    /// `R⁻¹(tau)`.
    pub fn inverse(&self, tau: f64) -> f64 {
        interp(&self.knots_p, &self.knots_u, tau)
    }

    /// Quantiles of the recalibrated forecast at `levels`.
    pub fn apply(&self, dist: &PredictiveDistribution, levels: &[f64]) -> Result<QuantileGridDist> {
        if matches!(dist, PredictiveDistribution::Categorical(_)) {
            return Err(Error::domain("isotonic recalibration needs a continuous forecast"));
        }
        let mut values = levels
            .iter()
            .map(|&t| dist.quantile_at(self.inverse(t).clamp(LEVEL_CLAMP, 1.0 - LEVEL_CLAMP)))
            .collect::<Result<Vec<_>>>()?;
        values.sort_by(f64::total_cmp);
        QuantileGridDist::new(levels.to_vec(), values)
    }
}

/// Regresses the empirical CDF of the PIT values `F_i(y_i)` on the PIT
/// values themselves.
pub fn fit_isotonic(
    forecasts: &[PredictiveDistribution],
    ys: &[f64],
    output_levels: &[f64],
) -> Result<IsotonicRecalibrator> {
    if forecasts.len() != ys.len() || ys.is_empty() {
        return Err(Error::domain("forecasts and outcomes must be nonempty and aligned"));
    }
    crate::dist::validate_levels(output_levels)?;
    let mut u = forecasts
        .iter()
        .zip(ys)
        .map(|(f, &y)| f.cdf_at(y).map(|v| v.clamp(0.0, 1.0)))
        .collect::<Result<Vec<_>>>()?;
    u.sort_by(f64::total_cmp);
    let n = u.len();
    // empirical frequency P(U <= u_i), ties sharing the largest rank
    let mut freq = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && u[j + 1] == u[i] {
            j += 1;
        }
        for f in &mut freq[i..=j] {
            *f = (j + 1) as f64 / n as f64;
        }
        i = j + 1;
    }
    let blocks = pav(&freq, &vec![1.0; n]);
    let mut knots_u = vec![0.0];
    let mut knots_p = vec![0.0];
    for (s, e, v, _) in blocks {
        let um = u[s..e].iter().sum::<f64>() / (e - s) as f64;
        if um > *knots_u.last().unwrap() && v > *knots_p.last().unwrap() && um < 1.0 && v < 1.0 {
            knots_u.push(um);
            knots_p.push(v);
        }
    }
    knots_u.push(1.0);
    knots_p.push(1.0);
    Ok(IsotonicRecalibrator {
        knots_u,
        knots_p,
        output_levels: output_levels.to_vec(),
    })
}

impl Recalibrator for IsotonicRecalibrator {
    fn recalibrate(&self, dist: &PredictiveDistribution) -> Result<PredictiveDistribution> {
        Ok(self.apply(dist, &self.output_levels)?.into())
    }
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

impl Persist for IsotonicRecalibrator {
    const KIND: &'static str = "isotonic_recalibrator";

    fn check(self) -> Result<Self> {
        crate::dist::validate_levels(&self.output_levels)?;
        let ok = self.knots_u.len() == self.knots_p.len()
            && self.knots_u.len() >= 2
            && strictly_increasing(&self.knots_u)
            && strictly_increasing(&self.knots_p)
            && self.knots_u[0] == 0.0
            && self.knots_p[0] == 0.0
            && *self.knots_u.last().unwrap() == 1.0
            && *self.knots_p.last().unwrap() == 1.0;
        if !ok {
            return Err(Error::Schema("isotonic knots must increase from (0,0) to (1,1)".into()));
        }
        Ok(self)
    }
}

// ---------------------------------------------------------------------------
// base models

/// Bayesian ridge over an intercept and per-feature powers `x_j^1..x_j^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyRidge {
    pub degree: usize,
    pub features: usize,
    pub model: BayesianRidgeModel,
}

fn poly_row(x: &[f64], degree: usize) -> Vec<f64> {
    let mut r = Vec::with_capacity(1 + x.len() * degree);
    r.push(1.0);
    for &v in x {
        let mut p = 1.0;
        for _ in 0..degree {
            p *= v;
            r.push(p);
        }
    }
    r
}

impl PolyRidge {
    pub fn fit(x: &[Vec<f64>], y: &[f64], degree: usize) -> Result<Self> {
        if degree == 0 {
            return Err(Error::domain("polynomial degree must be at least 1"));
        }
        let features = x.first().map_or(0, Vec::len);
        let design: Vec<Vec<f64>> = x.iter().map(|r| poly_row(r, degree)).collect();
        let model = fit_bayesian_ridge(&design, y, DEFAULT_PRIOR_PRECISION, None, 20)?;
        Ok(Self { degree, features, model })
    }

    pub fn predict(&self, x: &[f64]) -> Result<GaussianDist> {
        if x.len() != self.features {
            return Err(Error::Schema(format!("expected {} features, got {}", self.features, x.len())));
        }
        self.model.predict(&poly_row(x, self.degree))
    }
}

impl ProbabilisticModel for PolyRidge {
    fn predict_dist(&self, x: &[f64]) -> Result<PredictiveDistribution> {
        Ok(self.predict(x)?.into())
    }
}

/// Treats the feature row as an existing forecast: one column is the
/// probability of class 1, several columns are class probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassthroughClassifier {
    pub features: usize,
}

impl PassthroughClassifier {
    pub fn num_classes(&self) -> usize {
        self.features.max(2)
    }

    pub fn predict(&self, x: &[f64]) -> Result<CategoricalDist> {
        if x.len() != self.features {
            return Err(Error::Schema(format!("expected {} features, got {}", self.features, x.len())));
        }
        if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Schema("forecast columns must be probabilities in [0, 1]".into()));
        }
        if x.len() == 1 {
            CategoricalDist::new(vec![1.0 - x[0], x[0]])
        } else {
            CategoricalDist::from_weights(x)
        }
    }
}

impl ProbabilisticModel for PassthroughClassifier {
    fn predict_dist(&self, x: &[f64]) -> Result<PredictiveDistribution> {
        Ok(self.predict(x)?.into())
    }
}

/// Any base model the runner and CLI can fit, save and load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AnyModel {
    BayesianRidge(PolyRidge),
    GaussianMlp(GaussianMlp),
    Softmax(SoftmaxMlp),
    Passthrough(PassthroughClassifier),
    MisscaledOracle(MisscaledOracle),
}

impl AnyModel {
    /// Number of feature columns the model reads.
    pub fn num_features(&self) -> usize {
        match self {
            AnyModel::BayesianRidge(m) => m.features,
            AnyModel::GaussianMlp(m) => m.x_norm.dim(),
            AnyModel::Softmax(m) => m.x_norm.dim(),
            AnyModel::Passthrough(m) => m.features,
            AnyModel::MisscaledOracle(_) => 1,
        }
    }

    pub fn is_classifier(&self) -> bool {
        matches!(self, AnyModel::Softmax(_) | AnyModel::Passthrough(_))
    }
}

impl ProbabilisticModel for AnyModel {
    fn predict_dist(&self, x: &[f64]) -> Result<PredictiveDistribution> {
        if x.len() != self.num_features() {
            return Err(Error::Schema(format!(
                "model expects {} features, got {}",
                self.num_features(),
                x.len()
            )));
        }
        match self {
            AnyModel::BayesianRidge(m) => m.predict_dist(x),
            AnyModel::GaussianMlp(m) => m.predict_dist(x),
            AnyModel::Softmax(m) => m.predict_dist(x),
            AnyModel::Passthrough(m) => m.predict_dist(x),
            AnyModel::MisscaledOracle(m) => m.predict_dist(x),
        }
    }
}

impl Persist for AnyModel {
    const KIND: &'static str = "model";

    fn check(self) -> Result<Self> {
        Ok(match self {
            AnyModel::BayesianRidge(m) => {
                let model = m.model.check()?;
                if model.dim() != 1 + m.features * m.degree {
                    return Err(Error::Schema("ridge weights do not match the polynomial design".into()));
                }
                AnyModel::BayesianRidge(PolyRidge { model, ..m })
            }
            AnyModel::GaussianMlp(m) => AnyModel::GaussianMlp(m.check()?),
            AnyModel::Softmax(m) => AnyModel::Softmax(m.check()?),
            AnyModel::Passthrough(m) => {
                if m.features == 0 {
                    return Err(Error::Schema("passthrough needs at least one column".into()));
                }
                AnyModel::Passthrough(m)
            }
            AnyModel::MisscaledOracle(m) => AnyModel::MisscaledOracle(
                MisscaledOracle::new(m.shrink).map_err(|e| Error::Schema(e.to_string()))?,
            ),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BaseModelSpec {
    BayesianRidge {
        #[serde(default = "default_degree")]
        degree: usize,
    },
    GaussianMlp {
        #[serde(default = "default_hidden")]
        hidden: Vec<usize>,
        #[serde(default)]
        train: TrainConfig,
    },
    Softmax {
        #[serde(default = "default_hidden")]
        hidden: Vec<usize>,
        #[serde(default)]
        train: TrainConfig,
    },
    Passthrough,
    MisscaledOracle,
}

fn default_degree() -> usize {
    3
}

fn default_hidden() -> Vec<usize> {
    vec![32, 32]
}

impl BaseModelSpec {
    /// The base model used when a config names none.
    pub fn default_for(data: &DataSource) -> Self {
        match data {
            DataSource::Generator(g) => match g.kind {
                GeneratorKind::Heteroscedastic => BaseModelSpec::BayesianRidge { degree: default_degree() },
                GeneratorKind::VarianceMisscaled => BaseModelSpec::MisscaledOracle,
                GeneratorKind::DistortedBinary | GeneratorKind::DistortedMulticlass => {
                    BaseModelSpec::Passthrough
                }
            },
            DataSource::Csv { target, .. } if target == "label" => BaseModelSpec::Softmax {
                hidden: default_hidden(),
                train: TrainConfig::default(),
            },
            DataSource::Csv { .. } => BaseModelSpec::BayesianRidge { degree: 1 },
        }
    }
}

/// Fits the base model on `train`. `shrink` feeds the misscaled oracle.
pub fn fit_base(spec: &BaseModelSpec, train: &Dataset, shrink: Option<f64>, seed: u64) -> Result<AnyModel> {
    if train.is_empty() {
        return Err(Error::domain("training set is empty"));
    }
    let with_seed = |t: &TrainConfig| TrainConfig { seed, ..t.clone() };
    Ok(match spec {
        BaseModelSpec::BayesianRidge { degree } => AnyModel::BayesianRidge(PolyRidge::fit(&train.x, &train.y, *degree)?),
        BaseModelSpec::GaussianMlp { hidden, train: t } => {
            AnyModel::GaussianMlp(fit_mlp_gaussian(&train.x, &train.y, hidden, &with_seed(t))?.0)
        }
        BaseModelSpec::Softmax { hidden, train: t } => {
            let labels = train.labels()?;
            let k = labels.iter().max().map_or(2, |m| (m + 1).max(2));
            AnyModel::Softmax(fit_softmax_classifier(&train.x, &labels, k, hidden, &with_seed(t))?.0)
        }
        BaseModelSpec::Passthrough => AnyModel::Passthrough(PassthroughClassifier {
            features: train.feature_names.len(),
        }),
        BaseModelSpec::MisscaledOracle => {
            let shrink = shrink.ok_or_else(|| {
                Error::domain("the misscaled oracle base needs the variance_misscaled generator")
            })?;
            AnyModel::MisscaledOracle(MisscaledOracle::new(shrink)?)
        }
    })
}

// ---------------------------------------------------------------------------
// recalibration methods

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Uncalibrated,
    Isotonic,
    Quantile,
    Kde,
    Platt,
    Temperature,
    MulticlassPlatt,
    Simplex,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Uncalibrated,
        Method::Isotonic,
        Method::Quantile,
        Method::Kde,
        Method::Platt,
        Method::Temperature,
        Method::MulticlassPlatt,
        Method::Simplex,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Uncalibrated => "uncalibrated",
            Method::Isotonic => "isotonic",
            Method::Quantile => "quantile",
            Method::Kde => "kde",
            Method::Platt => "platt",
            Method::Temperature => "temperature",
            Method::MulticlassPlatt => "multiclass_platt",
            Method::Simplex => "simplex",
        }
    }

    /// Methods run when a config lists none.
    pub fn defaults(task: Task) -> Vec<Method> {
        match task {
            Task::Regression => vec![Method::Uncalibrated, Method::Isotonic, Method::Quantile],
            Task::Classification { classes: 2 } => vec![Method::Uncalibrated, Method::Platt, Method::Kde],
            Task::Classification { .. } => vec![
                Method::Uncalibrated,
                Method::Temperature,
                Method::MulticlassPlatt,
                Method::Simplex,
            ],
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        from_name(s, "method")
    }
}

/// Method hyperparameters. Training seeds are replaced by the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodSettings {
    pub quantile: QuantileRecalConfig,
    pub simplex: SimplexRecalConfig,
    pub kde_bandwidth: BandwidthRule,
    /// Levels of the quantile forecasts emitted by the isotonic baseline.
    pub isotonic_levels: Vec<f64>,
}

impl Default for MethodSettings {
    fn default() -> Self {
        Self {
            quantile: QuantileRecalConfig::default(),
            simplex: SimplexRecalConfig::default(),
            kde_bandwidth: BandwidthRule::Silverman,
            isotonic_levels: DECILES.to_vec(),
        }
    }
}

/// Any fitted recalibrator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AnyRecal {
    Identity,
    Isotonic(IsotonicRecalibrator),
    Quantile(QuantileRecalibrator),
    Kde(KdeRecalibrator),
    Platt(PlattScaler),
    Temperature(TemperatureScaler),
    MulticlassPlatt(MulticlassPlatt),
    Simplex(SimplexRecalibrator),
}

impl Recalibrator for AnyRecal {
    fn recalibrate(&self, dist: &PredictiveDistribution) -> Result<PredictiveDistribution> {
        match self {
            AnyRecal::Identity => Ok(dist.clone()),
            AnyRecal::Isotonic(r) => r.recalibrate(dist),
            AnyRecal::Quantile(r) => r.recalibrate(dist),
            AnyRecal::Kde(r) => r.recalibrate(dist),
            AnyRecal::Platt(r) => r.recalibrate(dist),
            AnyRecal::Temperature(r) => r.recalibrate(dist),
            AnyRecal::MulticlassPlatt(r) => r.recalibrate(dist),
            AnyRecal::Simplex(r) => r.recalibrate(dist),
        }
    }
}

impl Persist for AnyRecal {
    const KIND: &'static str = "recalibrator";

    fn check(self) -> Result<Self> {
        Ok(match self {
            AnyRecal::Identity => AnyRecal::Identity,
            AnyRecal::Isotonic(r) => AnyRecal::Isotonic(r.check()?),
            AnyRecal::Quantile(r) => AnyRecal::Quantile(r.check()?),
            AnyRecal::Kde(r) => AnyRecal::Kde(r.check()?),
            AnyRecal::Platt(r) => AnyRecal::Platt(r.check()?),
            AnyRecal::Temperature(r) => AnyRecal::Temperature(r.check()?),
            AnyRecal::MulticlassPlatt(r) => AnyRecal::MulticlassPlatt(r.check()?),
            AnyRecal::Simplex(r) => AnyRecal::Simplex(r.check()?),
        })
    }
}

fn categoricals(forecasts: &[PredictiveDistribution]) -> Result<Vec<CategoricalDist>> {
    forecasts
        .iter()
        .map(|f| match f {
            PredictiveDistribution::Categorical(c) => Ok(c.clone()),
            _ => Err(Error::domain("this method needs categorical forecasts")),
        })
        .collect()
}

fn class_labels(ys: &[f64]) -> Result<Vec<usize>> {
    ys.iter()
        .map(|&y| {
            if y >= 0.0 && y.fract() == 0.0 && y.is_finite() {
                Ok(y as usize)
            } else {
                Err(Error::Schema(format!("label {y} is not a class index")))
            }
        })
        .collect()
}

fn binary_parts(forecasts: &[PredictiveDistribution], ys: &[f64]) -> Result<(Vec<f64>, Vec<bool>)> {
    let cats = categoricals(forecasts)?;
    if cats.iter().any(|c| c.num_classes() != 2) {
        return Err(Error::domain("this method needs binary forecasts"));
    }
    let labels = class_labels(ys)?;
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::Schema("binary labels must be 0 or 1".into()));
    }
    Ok((cats.iter().map(|c| c.prob(1)).collect(), labels.iter().map(|&l| l == 1).collect()))
}

/// Fits `method` on the base forecasts over the recalibration set.
pub fn fit_method(
    method: Method,
    forecasts: &[PredictiveDistribution],
    ys: &[f64],
    settings: &MethodSettings,
    seed: u64,
) -> Result<AnyRecal> {
    if forecasts.len() != ys.len() || ys.is_empty() {
        return Err(Error::domain("forecasts and outcomes must be nonempty and aligned"));
    }
    Ok(match method {
        Method::Uncalibrated => AnyRecal::Identity,
        Method::Isotonic => AnyRecal::Isotonic(fit_isotonic(forecasts, ys, &settings.isotonic_levels)?),
        Method::Quantile => {
            if matches!(forecasts[0], PredictiveDistribution::Categorical(_)) {
                return Err(Error::domain("quantile recalibration needs continuous forecasts"));
            }
            let phis = forecasts
                .iter()
                .map(|f| featurize(f, &DECILES))
                .collect::<Result<Vec<_>>>()?;
            let mut cfg = settings.quantile.clone();
            cfg.train.seed = seed;
            AnyRecal::Quantile(fit_quantile_recalibrator(&phis, ys, &cfg)?.0)
        }
        Method::Kde => {
            let (s, l) = binary_parts(forecasts, ys)?;
            AnyRecal::Kde(fit_kde_recalibrator(&s, &l, settings.kde_bandwidth)?)
        }
        Method::Platt => {
            let (s, l) = binary_parts(forecasts, ys)?;
            AnyRecal::Platt(fit_platt(&s, &l)?)
        }
        Method::Temperature => {
            let cats = categoricals(forecasts)?;
            let logits: Vec<Vec<f64>> = cats
                .iter()
                .map(|c| c.probs().iter().map(|p| p.max(1e-300).ln()).collect())
                .collect();
            AnyRecal::Temperature(fit_temperature(&logits, &class_labels(ys)?)?)
        }
        Method::MulticlassPlatt => {
            AnyRecal::MulticlassPlatt(fit_multiclass_platt(&categoricals(forecasts)?, &class_labels(ys)?)?)
        }
        Method::Simplex => {
            let mut cfg = settings.simplex.clone();
            cfg.train.seed = seed;
            let cats = categoricals(forecasts)?;
            AnyRecal::Simplex(fit_simplex_recalibrator(&cats, &class_labels(ys)?, &cfg)?.0)
        }
    })
}

// ---------------------------------------------------------------------------
// metrics

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    Regression,
    Classification { classes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Check score averaged over the nine deciles.
    Chk,
    /// Decile calibration error for regression, binned class-probability
    /// calibration error for classification.
    Calibration,
    Crps,
    LogLoss,
    Mae,
    Mape,
    Accuracy,
    Ece,
    Brier,
}

/// Bins used by the classification diagnostics in reports.
pub const REPORT_BINS: usize = 10;

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Chk => "chk",
            Metric::Calibration => "calibration",
            Metric::Crps => "crps",
            Metric::LogLoss => "log_loss",
            Metric::Mae => "mae",
            Metric::Mape => "mape",
            Metric::Accuracy => "accuracy",
            Metric::Ece => "ece",
            Metric::Brier => "brier",
        }
    }

    pub fn defaults(task: Task) -> Vec<Metric> {
        match task {
            Task::Regression => vec![Metric::Chk, Metric::Calibration, Metric::Crps, Metric::Mae, Metric::Mape],
            Task::Classification { .. } => vec![
                Metric::Accuracy,
                Metric::Calibration,
                Metric::Ece,
                Metric::LogLoss,
                Metric::Brier,
            ],
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        from_name(s, "metric")
    }
}

fn mean_of(v: impl Iterator<Item = Result<f64>>) -> Result<f64> {
    let mut s = 0.0;
    let mut n = 0usize;
    for x in v {
        s += x?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::domain("empty evaluation set"));
    }
    Ok(s / n as f64)
}

/// Scores forecasts against outcomes (class indices for categorical
/// forecasts).
pub fn evaluate_metric(metric: Metric, dists: &[PredictiveDistribution], ys: &[f64]) -> Result<f64> {
    if dists.len() != ys.len() || ys.is_empty() {
        return Err(Error::domain("forecasts and outcomes must be nonempty and aligned"));
    }
    let pairs = || dists.iter().zip(ys);
    let classification = matches!(dists[0], PredictiveDistribution::Categorical(_));
    match (metric, classification) {
        (Metric::Chk, false) => mean_of(pairs().map(|(d, &y)| pinball_avg(d, y, &DECILES))),
        (Metric::Calibration, false) => quantile_calibration_error(dists, ys, &DECILES),
        (Metric::Crps, _) => mean_of(pairs().map(|(d, &y)| crps(d, y))),
        (Metric::LogLoss, _) => mean_of(pairs().map(|(d, &y)| log_loss(d, y))),
        (Metric::Mae | Metric::Mape, false) => {
            let med: Vec<f64> = dists.iter().map(PredictiveDistribution::median).collect();
            let m = mae_mape(&med, ys)?;
            Ok(if metric == Metric::Mae { m.mae } else { m.mape })
        }
        (Metric::Calibration | Metric::Accuracy | Metric::Ece | Metric::Brier, true) => {
            let cats = categoricals(dists)?;
            let labels = class_labels(ys)?;
            match metric {
                Metric::Calibration => classification_calibration_error(&cats, &labels, REPORT_BINS),
                Metric::Accuracy => accuracy(&cats, &labels),
                Metric::Ece => ece_classification(&cats, &labels, REPORT_BINS),
                _ => mean_of(cats.iter().zip(&labels).map(|(c, &l)| brier(c, l))),
            }
        }
        (m, true) => Err(Error::domain(format!("{} is not defined for categorical forecasts", m.name()))),
        (m, false) => Err(Error::domain(format!("{} needs categorical forecasts", m.name()))),
    }
}

/// Decile reliability for continuous forecasts, confidence reliability for
/// categorical ones.
pub fn reliability(dists: &[PredictiveDistribution], ys: &[f64]) -> Result<ReliabilityTable> {
    if matches!(dists.first(), Some(PredictiveDistribution::Categorical(_))) {
        confidence_reliability(&categoricals(dists)?, &class_labels(ys)?, REPORT_BINS)
    } else {
        quantile_reliability(dists, ys, &DECILES)
    }
}

// ---------------------------------------------------------------------------
// reports

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// SVG 1.1 reliability diagram: nominal level on x, observed frequency on y,
/// with the diagonal for reference. Empty bins are skipped.
pub fn reliability_svg(title: &str, table: &ReliabilityTable) -> String {
    const SIZE: f64 = 400.0;
    const PAD: f64 = 50.0;
    let span = SIZE - 2.0 * PAD;
    let px = |v: f64| PAD + v.clamp(0.0, 1.0) * span;
    let py = |v: f64| SIZE - PAD - v.clamp(0.0, 1.0) * span;
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="25" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
        SIZE / 2.0,
        xml_escape(title)
    );
    let (x0, y0, x1, y1) = (px(0.0), py(0.0), px(1.0), py(1.0));
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="10">{v:.1}</text>"#,
            px(v),
            y0 + 15.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="10">{v:.1}</text>"#,
            x0 - 5.0,
            py(v) + 3.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">nominal</text>"#,
        SIZE / 2.0,
        SIZE - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 14 {})">observed</text>"#,
        SIZE / 2.0,
        SIZE / 2.0
    );
    let _ = writeln!(
        s,
        r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y1}" stroke="gray" stroke-dasharray="4 4"/>"#
    );
    let pts: Vec<(f64, f64)> = table
        .bins
        .iter()
        .filter(|b| b.count > 0)
        .map(|b| (px(b.nominal_level), py(b.empirical_freq)))
        .collect();
    if !pts.is_empty() {
        let list: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
            list.join(" ")
        );
        for (x, y) in &pts {
            let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="steelblue"/>"#);
        }
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Generator(GeneratorSpec),
    Csv { path: PathBuf, target: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub data: DataSource,
    /// `None` picks [`BaseModelSpec::default_for`].
    #[serde(default)]
    pub base: Option<BaseModelSpec>,
    /// Empty picks [`Method::defaults`].
    #[serde(default)]
    pub methods: Vec<Method>,
    /// Empty picks [`Metric::defaults`].
    #[serde(default)]
    pub metrics: Vec<Metric>,
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub settings: MethodSettings,
}

fn default_split() -> [f64; 3] {
    DEFAULT_SPLIT
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl ExperimentConfig {
    pub fn new(name: impl Into<String>, data: DataSource) -> Self {
        Self {
            name: name.into(),
            data,
            base: None,
            methods: Vec::new(),
            metrics: Vec::new(),
            split: DEFAULT_SPLIT,
            seeds: default_seeds(),
            settings: MethodSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.split.iter().any(|f| !(0.0..=1.0).contains(f)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::domain(format!("split fractions {:?} must sum to 1", self.split)));
        }
        if self.seeds.is_empty() {
            return Err(Error::domain("at least one seed is required"));
        }
        if let DataSource::Generator(g) = &self.data {
            check_n(g.n)?;
        }
        let mut seen = BTreeSet::new();
        if let Some(m) = self.methods.iter().find(|m| !seen.insert(**m)) {
            return Err(Error::domain(format!("method {} listed twice", m.name())));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::Schema(format!("bad experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub method: String,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Partial,
}

/// Everything needed to regenerate a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub status: RunStatus,
    pub error: Option<String>,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| Error::Schema(format!("bad manifest: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub manifest: Manifest,
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    /// Value of `metric` for `method` at `seed`.
    pub fn value(&self, method: Method, metric: Metric, seed: u64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method.name() && r.metric == metric.name() && r.seed == seed)
            .map(|r| r.value)
    }
}

struct SeedOutcome {
    rows: Vec<ReportRow>,
    diagrams: Vec<(Method, ReliabilityTable)>,
}

fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedOutcome> {
    let (data, shrink) = match &cfg.data {
        DataSource::Generator(g) => {
            let spec = GeneratorSpec {
                seed: g.seed.wrapping_add(seed),
                ..g.clone()
            };
            let shrink = (g.kind == GeneratorKind::VarianceMisscaled).then_some(g.shrink);
            (generate(&spec)?, shrink)
        }
        DataSource::Csv { path, target } => (load_csv(path, target)?, None),
    };
    let (train, recal, test) = split(&data, cfg.split, seed)?;
    if recal.is_empty() || test.is_empty() {
        return Err(Error::domain("recalibration and test sets must be nonempty"));
    }
    let spec = cfg.base.clone().unwrap_or_else(|| BaseModelSpec::default_for(&cfg.data));
    let base = fit_base(&spec, &train, shrink, seed)?;
    let predict = |ds: &Dataset| ds.x.iter().map(|x| base.predict_dist(x)).collect::<Result<Vec<_>>>();
    let recal_f = predict(&recal)?;
    let test_f = predict(&test)?;
    let task = match &test_f[0] {
        PredictiveDistribution::Categorical(c) => Task::Classification {
            classes: c.num_classes(),
        },
        _ => Task::Regression,
    };
    let methods = if cfg.methods.is_empty() { Method::defaults(task) } else { cfg.methods.clone() };
    let metrics = if cfg.metrics.is_empty() { Metric::defaults(task) } else { cfg.metrics.clone() };
    let mut out = SeedOutcome {
        rows: Vec::new(),
        diagrams: Vec::new(),
    };
    for &method in &methods {
        let r = fit_method(method, &recal_f, &recal.y, &cfg.settings, seed)?;
        let dists = test_f.iter().map(|f| r.recalibrate(f)).collect::<Result<Vec<_>>>()?;
        for &metric in &metrics {
            out.rows.push(ReportRow {
                dataset: cfg.name.clone(),
                method: method.name().to_string(),
                metric: metric.name().to_string(),
                value: evaluate_metric(metric, &dists, &test.y)?,
                seed,
            });
        }
        out.diagrams.push((method, reliability(&dists, &test.y)?));
    }
    Ok(out)
}

/// Worker count from `CALIBRAX_THREADS`, default 1.
pub fn thread_budget() -> usize {
    std::env::var("CALIBRAX_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t >= 1)
        .unwrap_or(1)
}

fn run_seeds(cfg: &ExperimentConfig, threads: usize) -> Vec<(u64, Result<SeedOutcome>)> {
    let mut results = Vec::with_capacity(cfg.seeds.len());
    for chunk in cfg.seeds.chunks(threads.max(1)) {
        if chunk.len() == 1 {
            results.push((chunk[0], run_seed(cfg, chunk[0])));
            continue;
        }
        std::thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|&seed| (seed, s.spawn(move || run_seed(cfg, seed)))).collect();
            for (seed, h) in handles {
                let r = h
                    .join()
                    .unwrap_or_else(|_| Err(Error::Training(format!("seed {seed} panicked"))));
                results.push((seed, r));
            }
        });
        if results.iter().any(|(_, r)| r.is_err()) {
            break;
        }
    }
    results
}

fn write_report_csv(rows: &[ReportRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["dataset", "method", "metric", "value", "seed"])?;
    for r in rows {
        w.write_record([
            r.dataset.as_str(),
            r.method.as_str(),
            r.metric.as_str(),
            &format_f64(r.value),
            &r.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Runs every seed of `cfg` and writes `report.csv`, `report.json`,
/// `manifest.json` and one `reliability_<method>.svg` per method (first
/// seed) into `out_dir`. On failure the outputs written so far are marked
/// partial in the manifest and the error is returned.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentReport> {
    run_experiment_with_threads(cfg, out_dir, thread_budget())
}

pub fn run_experiment_with_threads(cfg: &ExperimentConfig, out_dir: &Path, threads: usize) -> Result<ExperimentReport> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut rows = Vec::new();
    let mut diagrams = None;
    let mut failure = None;
    for (seed, r) in run_seeds(cfg, threads) {
        match r {
            Ok(o) => {
                rows.extend(o.rows);
                diagrams.get_or_insert(o.diagrams);
            }
            Err(e) => {
                failure = Some((seed, e));
                break;
            }
        }
    }
    let mut files = vec!["report.csv".to_string(), "report.json".to_string()];
    for (method, table) in diagrams.iter().flatten() {
        let name = format!("reliability_{}.svg", method.name());
        let title = format!("{}: {}", cfg.name, method.name());
        std::fs::write(out_dir.join(&name), reliability_svg(&title, table))?;
        files.push(name);
    }
    let manifest = Manifest {
        tool: "calibrax".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        seeds: cfg.seeds.clone(),
        status: if failure.is_some() { RunStatus::Partial } else { RunStatus::Complete },
        error: failure.as_ref().map(|(s, e)| format!("seed {s}: {e}")),
        files,
    };
    let report = ExperimentReport { manifest, rows };
    write_report_csv(&report.rows, &out_dir.join("report.csv"))?;
    std::fs::write(out_dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    std::fs::write(out_dir.join("manifest.json"), serde_json::to_string_pretty(&report.manifest)?)?;
    match failure {
        Some((_, e)) => Err(e),
        None => Ok(report),
    }
}

/// Reruns the experiment recorded in a manifest.
pub fn rerun_manifest(manifest: &Path, out_dir: &Path) -> Result<ExperimentReport> {
    run_experiment(&Manifest::load(manifest)?.config, out_dir)
}
