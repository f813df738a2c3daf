//! Recalibrators trained over a base model's forecasts, and the two-stage
//! fit that composes them with the base model.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dist::{
    featurize, normal_quantile, CategoricalDist, FeatureKind, Featurization, PredictiveDistribution,
    QuantileGridDist, DECILES,
};
use crate::error::{Error, Result};
use crate::models::{softmax, Persist, ProbabilisticModel};
use crate::nn::{sgd_train, Architecture, NeuralNet, Standardizer, Trace, TrainConfig, TrainLog};
use crate::scoring::check_score;

/// Maps a base forecast to a recalibrated one.
pub trait Recalibrator {
    fn recalibrate(&self, dist: &PredictiveDistribution) -> Result<PredictiveDistribution>;
}

/// Leaves forecasts unchanged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IdentityRecalibrator;

impl Recalibrator for IdentityRecalibrator {
    fn recalibrate(&self, dist: &PredictiveDistribution) -> Result<PredictiveDistribution> {
        Ok(dist.clone())
    }
}

/// A base model followed by a recalibrator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposedModel<H, R> {
    pub base: H,
    pub recal: R,
}

impl<H: ProbabilisticModel, R: Recalibrator> ProbabilisticModel for ComposedModel<H, R> {
    fn predict_dist(&self, x: &[f64]) -> Result<PredictiveDistribution> {
        self.recal.recalibrate(&self.base.predict_dist(x)?)
    }
}

/// Fits the base model on `d`, then fits the recalibrator on the base
/// model's forecasts over `c`.
pub fn algorithm1_fit<H, R, FB, FR>(d: &Dataset, c: &Dataset, base_fit: FB, recal_fit: FR) -> Result<ComposedModel<H, R>>
where
    H: ProbabilisticModel,
    R: Recalibrator,
    FB: FnOnce(&Dataset) -> Result<H>,
    FR: FnOnce(&[PredictiveDistribution], &[f64]) -> Result<R>,
{
    if d.is_empty() {
        return Err(Error::domain("training set is empty"));
    }
    if c.is_empty() {
        return Err(Error::domain("recalibration set is empty"));
    }
    d.check_disjoint(c)?;
    let base = base_fit(d)?;
    let forecasts = c.x.iter().map(|x| base.predict_dist(x)).collect::<Result<Vec<_>>>()?;
    let recal = recal_fit(&forecasts, &c.y)?;
    Ok(ComposedModel { base, recal })
}

const TAU_CLAMP: f64 = 1e-6;

fn probit(tau: f64) -> f64 {
    normal_quantile(tau.clamp(TAU_CLAMP, 1.0 - TAU_CLAMP))
}

/// How the network output becomes an outcome value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    /// `c(φ) + s(φ)·(z_τ + u) + s_y·v`, where `c` and `s` are the location
    /// and scale of the normal matched to the input quantiles. A zero
    /// network reproduces Gaussian inputs exactly.
    #[default]
    LocationScale,
    /// `c(φ) + s(φ)·u + s_y·v` with `c` the mean of the input quantiles.
    Plain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuantileRecalConfig {
    pub train: TrainConfig,
    pub hidden: Vec<usize>,
    pub head: OutputHead,
    /// Levels of the forecast emitted by [`Recalibrator::recalibrate`].
    pub output_levels: Vec<f64>,
}

impl Default for QuantileRecalConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig {
                step_size: 0.01,
                ..TrainConfig::default()
            },
            hidden: vec![20, 20],
            head: OutputHead::LocationScale,
            output_levels: DECILES.to_vec(),
        }
    }
}

/// Learned quantile function `R(τ; φ)` over quantile featurizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileRecalibrator {
    pub net: NeuralNet,
    pub input_levels: Vec<f64>,
    pub phi_norm: Standardizer,
    pub y_scale: f64,
    pub config: QuantileRecalConfig,
}

/// Per-forecast quantities the head needs, computed once.
struct PhiView {
    input_tail: Vec<f64>,
    center: f64,
    spread: f64,
}

impl QuantileRecalibrator {
    fn view(&self, phi: &Featurization) -> Result<PhiView> {
        view(phi, &self.input_levels, &self.phi_norm)
    }

    fn value(&self, v: &PhiView, tau: f64, input: &mut [f64], trace: &mut Trace) -> Result<f64> {
        input[0] = probit(tau);
        input[1..].copy_from_slice(&v.input_tail);
        self.net.forward_trace(input, trace)?;
        let out = trace.output();
        Ok(head_base(self.config.head, v, input[0]) + v.spread * out[0] + self.y_scale * out[1])
    }

    /// Network outputs at `out_levels` before monotonization.
    pub fn raw_values(&self, phi: &Featurization, out_levels: &[f64]) -> Result<Vec<f64>> {
        crate::dist::validate_levels(out_levels)?;
        let v = self.view(phi)?;
        let mut input = vec![0.0; self.net.arch().input_dim];
        let mut trace = Trace::default();
        out_levels
            .iter()
            .map(|&t| self.value(&v, t, &mut input, &mut trace))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.net.arch().input_dim
    }
}

fn spread_of(levels: &[f64], values: &[f64]) -> f64 {
    let d = levels.len();
    let dz = normal_quantile(levels[d - 1]) - normal_quantile(levels[0]);
    ((values[d - 1] - values[0]) / dz).max(0.0)
}

fn view(phi: &Featurization, levels: &[f64], norm: &Standardizer) -> Result<PhiView> {
    if phi.kind != FeatureKind::QuantileGrid || phi.params.len() != levels.len() {
        return Err(Error::domain(format!(
            "expected a {}-level quantile featurization",
            levels.len()
        )));
    }
    Ok(PhiView {
        input_tail: norm.apply(&phi.params),
        center: phi.params.iter().sum::<f64>() / phi.params.len() as f64,
        spread: spread_of(levels, &phi.params),
    })
}

fn head_base(head: OutputHead, v: &PhiView, z: f64) -> f64 {
    match head {
        OutputHead::LocationScale => v.center + v.spread * z,
        OutputHead::Plain => v.center,
    }
}

/// Descends the mean check score `ρ_τ(y - R(τ; φ))` with Monte-Carlo `τ`.
/// Each example draws `tau_samples_per_example` stratified jittered levels
/// plus one decile that rotates with the epoch.
pub fn fit_quantile_recalibrator(
    phis: &[Featurization],
    ys: &[f64],
    cfg: &QuantileRecalConfig,
) -> Result<(QuantileRecalibrator, TrainLog)> {
    if phis.len() != ys.len() {
        return Err(Error::domain(format!("{} featurizations but {} outcomes", phis.len(), ys.len())));
    }
    if ys.len() < 50 {
        return Err(Error::domain("need at least 50 recalibration examples"));
    }
    if ys.iter().any(|y| !y.is_finite()) {
        return Err(Error::domain("outcomes must be finite"));
    }
    crate::dist::validate_levels(&cfg.output_levels)?;
    let levels = match phis[0].kind {
        FeatureKind::QuantileGrid => phis[0].params.len(),
        _ => return Err(Error::domain("quantile recalibration needs quantile featurizations")),
    };
    // featurizations carry values only; the levels are the deciles unless the
    // grid size says otherwise
    let input_levels: Vec<f64> = if levels == DECILES.len() {
        DECILES.to_vec()
    } else {
        (1..=levels).map(|i| i as f64 / (levels + 1) as f64).collect()
    };
    fit_quantile_recalibrator_at(phis, ys, &input_levels, cfg)
}

/// As [`fit_quantile_recalibrator`] with explicit featurization levels.
pub fn fit_quantile_recalibrator_at(
    phis: &[Featurization],
    ys: &[f64],
    input_levels: &[f64],
    cfg: &QuantileRecalConfig,
) -> Result<(QuantileRecalibrator, TrainLog)> {
    crate::dist::validate_levels(input_levels)?;
    let raw: Vec<Vec<f64>> = phis.iter().map(|p| p.params.clone()).collect();
    let phi_norm = Standardizer::fit(&raw)?;
    let n = ys.len() as f64;
    let ym = ys.iter().sum::<f64>() / n;
    let ysd = (ys.iter().map(|y| (y - ym).powi(2)).sum::<f64>() / n).sqrt();
    let y_scale = if ysd > 1e-12 { ysd } else { 1.0 };
    let views = phis
        .iter()
        .map(|p| view(p, input_levels, &phi_norm))
        .collect::<Result<Vec<_>>>()?;
    let arch = Architecture::new(input_levels.len() + 1, cfg.hidden.clone(), 2, true)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut model = QuantileRecalibrator {
        net: NeuralNet::init(&arch, &mut rng),
        input_levels: input_levels.to_vec(),
        phi_norm,
        y_scale,
        config: cfg.clone(),
    };
    let head = cfg.head;
    let k = cfg.train.tau_samples_per_example;
    let mut net = model.net.clone();
    let mut input = vec![0.0; arch.input_dim];
    let mut trace = Trace::default();
    let mut taus = Vec::with_capacity(k + 1);
    let inv_scale = 1.0 / y_scale;
    let log = sgd_train(
        &mut net,
        ys.len(),
        &cfg.train,
        &mut rng,
        |net, idx, epoch, grad, rng| {
            let mut loss = 0.0;
            let w = 1.0 / (idx.len() * (k + 1)) as f64;
            for &i in idx {
                let v = &views[i];
                taus.clear();
                for j in 0..k {
                    taus.push((j as f64 + rng.random::<f64>()) / k as f64);
                }
                taus.push(DECILES[(i + epoch) % DECILES.len()]);
                for &tau in &taus {
                    input[0] = probit(tau);
                    input[1..].copy_from_slice(&v.input_tail);
                    net.forward_trace(&input, &mut trace)?;
                    let out = trace.output();
                    let r = head_base(head, v, input[0]) + v.spread * out[0] + y_scale * out[1];
                    let e = ys[i] - r;
                    loss += w * inv_scale * check_score(tau, ys[i], r);
                    // d rho / d r
                    let g = if e > 0.0 {
                        -tau
                    } else if e < 0.0 {
                        1.0 - tau
                    } else {
                        0.0
                    };
                    let g = w * inv_scale * g;
                    net.backward_into(&trace, &[g * v.spread, g * y_scale], grad, None)?;
                }
            }
            Ok(loss)
        },
        |net, i| {
            let v = &views[i];
            let mut inp = vec![0.0; net.arch().input_dim];
            let mut tr = Trace::default();
            let mut s = 0.0;
            for &tau in DECILES.iter() {
                inp[0] = probit(tau);
                inp[1..].copy_from_slice(&v.input_tail);
                net.forward_trace(&inp, &mut tr)?;
                let out = tr.output();
                let r = head_base(head, v, inp[0]) + v.spread * out[0] + y_scale * out[1];
                s += check_score(tau, ys[i], r);
            }
            Ok(s * inv_scale / DECILES.len() as f64)
        },
    )?;
    model.net = net;
    Ok((model, log))
}

/// Evaluates `R(τ_j; φ)` at each output level and sorts the values.
pub fn apply_quantile_recalibrator(
    r: &QuantileRecalibrator,
    phi: &Featurization,
    out_levels: &[f64],
) -> Result<QuantileGridDist> {
    let mut values = r.raw_values(phi, out_levels)?;
    values.sort_by(f64::total_cmp);
    QuantileGridDist::new(out_levels.to_vec(), values)
}

impl Recalibrator for QuantileRecalibrator {
    fn recalibrate(&self, dist: &PredictiveDistribution) -> Result<PredictiveDistribution> {
        let phi = featurize(dist, &self.input_levels)?;
        Ok(apply_quantile_recalibrator(self, &phi, &self.config.output_levels)?.into())
    }
}

impl Persist for QuantileRecalibrator {
    const KIND: &'static str = "quantile_recalibrator";

    fn check(mut self) -> Result<Self> {
        self.net = self.net.validated()?;
        crate::dist::validate_levels(&self.input_levels)?;
        if self.net.arch().input_dim != self.input_levels.len() + 1
            || self.net.arch().output_dim != 2
            || self.phi_norm.dim() != self.input_levels.len()
        {
            return Err(Error::Schema("quantile recalibrator shapes are inconsistent".into()));
        }
        Ok(self)
    }
}

/// Nadaraya–Watson estimate of `P(Y = 1 | score)` with a Gaussian kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeRecalibrator {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
    pub bandwidth: f64,
    pub clip: f64,
    /// Set when the scores had no spread and the base rate is returned.
    pub constant: Option<f64>,
    #[serde(skip)]
    table: Vec<f64>,
}

/// Kernel weights beyond this many bandwidths are dropped (`e^{-18}`).
const KDE_CUTOFF: f64 = 6.0;
/// Resolution of the interpolation table over `[0, 1]`.
const KDE_GRID: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    /// `1.06 σ̂ T^{-1/5}`.
    Silverman,
    Fixed(f64),
}

pub fn fit_kde_recalibrator(scores: &[f64], labels: &[bool], rule: BandwidthRule) -> Result<KdeRecalibrator> {
    if scores.len() != labels.len() {
        return Err(Error::domain("scores and labels differ in length"));
    }
    let t = scores.len();
    if t < 20 {
        return Err(Error::domain("need at least 20 recalibration points"));
    }
    if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
        return Err(Error::domain("scores must lie in [0, 1]"));
    }
    let clip = 1.0 / (2.0 * t as f64);
    let n = t as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let sd = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt();
    let base_rate = labels.iter().filter(|&&l| l).count() as f64 / n;
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut model = KdeRecalibrator {
        scores: order.iter().map(|&i| scores[i]).collect(),
        labels: order.iter().map(|&i| labels[i]).collect(),
        bandwidth: 0.0,
        clip,
        constant: None,
        table: Vec::new(),
    };
    if sd <= 1e-12 {
        model.bandwidth = 1.0;
        model.constant = Some(base_rate.clamp(clip, 1.0 - clip));
        return Ok(model);
    }
    model.bandwidth = match rule {
        BandwidthRule::Silverman => 1.06 * sd * n.powf(-0.2),
        BandwidthRule::Fixed(h) if h > 0.0 && h.is_finite() => h,
        BandwidthRule::Fixed(h) => return Err(Error::domain(format!("bandwidth {h} must be positive"))),
    };
    model.build_table();
    Ok(model)
}

impl KdeRecalibrator {
    fn build_table(&mut self) {
        if self.constant.is_some() {
            return;
        }
        self.table = (0..=KDE_GRID)
            .map(|i| self.apply_exact(i as f64 / KDE_GRID as f64))
            .collect();
    }

    /// Direct kernel sum at `p`, clipped to `[ε, 1-ε]`.
    pub fn apply_exact(&self, p: f64) -> f64 {
        if let Some(c) = self.constant {
            return c;
        }
        let h = self.bandwidth;
        let lo = self.scores.partition_point(|&s| s < p - KDE_CUTOFF * h);
        let hi = self.scores.partition_point(|&s| s <= p + KDE_CUTOFF * h);
        let (mut num, mut den) = (0.0, 0.0);
        for j in lo..hi {
            let u = (p - self.scores[j]) / h;
            let k = (-0.5 * u * u).exp();
            den += k;
            if self.labels[j] {
                num += k;
            }
        }
        let est = if den > 0.0 {
            num / den
        } else {
            // no support within the cutoff: use the nearest score
            let j = lo.min(self.scores.len() - 1);
            let j = if j > 0 && (p - self.scores[j - 1]).abs() < (self.scores[j] - p).abs() { j - 1 } else { j };
            if self.labels[j] {
                1.0
            } else {
                0.0
            }
        };
        est.clamp(self.clip, 1.0 - self.clip)
    }

    /// Recalibrated probability, linearly interpolated from a precomputed
    /// table of [`Self::apply_exact`].
    pub fn apply(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::domain(format!("score {p} outside [0, 1]")));
        }
        if let Some(c) = self.constant {
            return Ok(c);
        }
        if self.table.is_empty() {
            return Ok(self.apply_exact(p));
        }
        let x = p * KDE_GRID as f64;
        let i = (x.floor() as usize).min(KDE_GRID - 1);
        let f = x - i as f64;
        Ok(self.table[i] * (1.0 - f) + self.table[i + 1] * f)
    }
}

fn binary_prob(dist: &PredictiveDistribution) -> Result<f64> {
    match dist {
        PredictiveDistribution::Categorical(c) if c.num_classes() == 2 => Ok(c.prob(1)),
        _ => Err(Error::domain("expected a two-class forecast")),
    }
}

fn binary_dist(p1: f64) -> Result<PredictiveDistribution> {
    Ok(CategoricalDist::new(vec![1.0 - p1, p1])?.into())
}

impl Recalibrator for KdeRecalibrator {
    fn recalibrate(&self, dist: &PredictiveDistribution) -> Result<PredictiveDistribution> {
        binary_dist(self.apply(binary_prob(dist)?)?)
    }
}

impl Persist for KdeRecalibrator {
    const KIND: &'static str = "kde_recalibrator";

    fn check(mut self) -> Result<Self> {
        if self.scores.len() != self.labels.len() || self.scores.len() < 20 || !(self.bandwidth > 0.0) {
            return Err(Error::Schema("kde recalibrator fields are inconsistent".into()));
        }
        if self.scores.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Schema("kde support must be sorted".into()));
        }
        self.build_table();
        Ok(self)
    }
}

const LOG_FLOOR: f64 = 1e-12;

fn centered_logs(p: &[f64]) -> Vec<f64> {
    let l: Vec<f64> = p.iter().map(|v| v.max(LOG_FLOOR).ln()).collect();
    let m = l.iter().sum::<f64>() / l.len() as f64;
    l.into_iter().map(|v| v - m).collect()
}

/// Network from the simplex to the simplex, fed centered log-probabilities
/// and closed by a softmax. It starts at the identity map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexRecalibrator {
    pub net: NeuralNet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimplexRecalConfig {
    pub train: TrainConfig,
    pub hidden: Vec<usize>,
}

impl Default for SimplexRecalConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            hidden: vec![20, 20],
        }
    }
}

impl SimplexRecalibrator {
    pub fn num_classes(&self) -> usize {
        self.net.arch().output_dim
    }

    pub fn apply(&self, p: &CategoricalDist) -> Result<CategoricalDist> {
        if p.num_classes() != self.num_classes() {
            return Err(Error::domain(format!(
                "expected {} classes, got {}",
                self.num_classes(),
                p.num_classes()
            )));
        }
        CategoricalDist::from_weights(&softmax(&self.net.forward(&centered_logs(p.probs()))?))
    }
}

pub fn fit_simplex_recalibrator(
    probs: &[CategoricalDist],
    labels: &[usize],
    cfg: &SimplexRecalConfig,
) -> Result<(SimplexRecalibrator, TrainLog)> {
    if probs.is_empty() || probs.len() != labels.len() {
        return Err(Error::domain("forecasts and labels must be nonempty and aligned"));
    }
    let k = probs[0].num_classes();
    if probs.iter().any(|p| p.num_classes() != k) {
        return Err(Error::domain("forecasts differ in class count"));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::domain(format!("label {l} outside 0..{k}")));
    }
    let inputs: Vec<Vec<f64>> = probs.iter().map(|p| centered_logs(p.probs())).collect();
    let arch = Architecture::new(k, cfg.hidden.clone(), k, true)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut net = NeuralNet::init(&arch, &mut rng);
    let out_layer = net.layers().len() - 1;
    for c in 0..k {
        *net.weight_mut(out_layer, c, c) = 1.0;
    }
    let mut trace = Trace::default();
    let mut dout = vec![0.0; k];
    let log = sgd_train(
        &mut net,
        labels.len(),
        &cfg.train,
        &mut rng,
        |net, idx, _, grad, _| {
            let w = 1.0 / idx.len() as f64;
            let mut loss = 0.0;
            for &i in idx {
                net.forward_trace(&inputs[i], &mut trace)?;
                let q = softmax(trace.output());
                loss -= w * q[labels[i]].max(1e-300).ln();
                for (c, d) in dout.iter_mut().enumerate() {
                    *d = w * (q[c] - if c == labels[i] { 1.0 } else { 0.0 });
                }
                net.backward_into(&trace, &dout, grad, None)?;
            }
            Ok(loss)
        },
        |net, i| Ok(-softmax(&net.forward(&inputs[i])?)[labels[i]].max(1e-300).ln()),
    )?;
    Ok((SimplexRecalibrator { net }, log))
}

impl Recalibrator for SimplexRecalibrator {
    fn recalibrate(&self, dist: &PredictiveDistribution) -> Result<PredictiveDistribution> {
        match dist {
            PredictiveDistribution::Categorical(c) => Ok(self.apply(c)?.into()),
            _ => Err(Error::domain("simplex recalibration needs a categorical forecast")),
        }
    }
}

impl Persist for SimplexRecalibrator {
    const KIND: &'static str = "simplex_recalibrator";

    fn check(mut self) -> Result<Self> {
        self.net = self.net.validated()?;
        if self.net.arch().input_dim != self.net.arch().output_dim || self.net.arch().output_dim < 2 {
            return Err(Error::Schema("simplex recalibrator must map K classes to K classes".into()));
        }
        Ok(self)
    }
}

/// Parameter bound for the convex scalers; hitting it marks a fallback.
pub const SCALER_BOUND: f64 = 50.0;

fn logit(p: f64) -> f64 {
    let p = p.clamp(LOG_FLOOR, 1.0 - LOG_FLOOR);
    (p / (1.0 - p)).ln()
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// `p' = σ(a · logit(p) + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlattScaler {
    pub a: f64,
    pub b: f64,
    pub fallback: bool,
    pub warning: Option<String>,
}

impl PlattScaler {
    pub fn apply(&self, p: f64) -> f64 {
        sigmoid(self.a * logit(p) + self.b)
    }
}

/// Mean binary log loss of `σ(a·z + b)`.
pub fn platt_loss(z: &[f64], y: &[bool], a: f64, b: f64) -> f64 {
    z.iter()
        .zip(y)
        .map(|(&z, &y)| {
            let v = a * z + b;
            // log(1 + e^{-v}) or log(1 + e^{v}), stably
            let s = if y { -v } else { v };
            s.max(0.0) + (-s.abs()).exp().ln_1p()
        })
        .sum::<f64>()
        / z.len() as f64
}

/// Newton's method with backtracking on the 2-parameter Platt log loss.
pub fn fit_platt(scores: &[f64], labels: &[bool]) -> Result<PlattScaler> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(Error::domain("scores and labels must be nonempty and aligned"));
    }
    if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
        return Err(Error::domain("scores must lie in [0, 1]"));
    }
    let n = scores.len() as f64;
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == labels.len() {
        let eps = 1.0 / (2.0 * n);
        let rate = if pos == 0 { eps } else { 1.0 - eps };
        return Ok(PlattScaler {
            a: 0.0,
            b: logit(rate),
            fallback: true,
            warning: Some("all labels belong to one class; returning a clipped constant".into()),
        });
    }
    let z: Vec<f64> = scores.iter().map(|&s| logit(s)).collect();
    let extent = |want: bool, pick: fn(f64, f64) -> f64, init: f64| {
        z.iter().zip(labels).filter(|&(_, &l)| l == want).map(|(&v, _)| v).fold(init, pick)
    };
    let (neg_hi, pos_lo) = (extent(false, f64::max, f64::NEG_INFINITY), extent(true, f64::min, f64::INFINITY));
    let (neg_lo, pos_hi) = (extent(false, f64::min, f64::INFINITY), extent(true, f64::max, f64::NEG_INFINITY));
    if neg_hi < pos_lo || pos_hi < neg_lo {
        // the loss has no minimizer; put the steepest admissible step at the gap
        let (sign, mid) = if neg_hi < pos_lo { (1.0, 0.5 * (neg_hi + pos_lo)) } else { (-1.0, 0.5 * (pos_hi + neg_lo)) };
        let a = sign * SCALER_BOUND / mid.abs().max(1.0);
        return Ok(PlattScaler {
            a,
            b: -a * mid,
            fallback: true,
            warning: Some("classes are perfectly separated by the score; parameters set at the bound".into()),
        });
    }
    let (mut a, mut b) = (1.0, 0.0);
    let mut loss = platt_loss(&z, labels, a, b);
    let mut hit_bound = false;
    for _ in 0..200 {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&zi, &yi) in z.iter().zip(labels) {
            let p = sigmoid(a * zi + b);
            let r = p - if yi { 1.0 } else { 0.0 };
            let w = p * (1.0 - p);
            ga += r * zi;
            gb += r;
            haa += w * zi * zi;
            hab += w * zi;
            hbb += w;
        }
        let (ga, gb) = (ga / n, gb / n);
        let (haa, hab, hbb) = (haa / n + 1e-12, hab / n, hbb / n + 1e-12);
        if ga.hypot(gb) < 1e-12 {
            break;
        }
        let det = haa * hbb - hab * hab;
        let (mut da, mut db) = if det > 1e-18 {
            (-(hbb * ga - hab * gb) / det, -(haa * gb - hab * ga) / det)
        } else {
            (-ga, -gb)
        };
        let mut improved = false;
        for _ in 0..60 {
            let na = (a + da).clamp(-SCALER_BOUND, SCALER_BOUND);
            let nb = (b + db).clamp(-SCALER_BOUND, SCALER_BOUND);
            let nl = platt_loss(&z, labels, na, nb);
            if nl <= loss {
                hit_bound |= na.abs() == SCALER_BOUND || nb.abs() == SCALER_BOUND;
                improved = nl < loss;
                a = na;
                b = nb;
                loss = nl;
                break;
            }
            da *= 0.5;
            db *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Ok(PlattScaler {
        a,
        b,
        fallback: hit_bound,
        warning: hit_bound.then(|| "data look separable; parameters stopped at the bound".to_string()),
    })
}

impl Recalibrator for PlattScaler {
    fn recalibrate(&self, dist: &PredictiveDistribution) -> Result<PredictiveDistribution> {
        binary_dist(self.apply(binary_prob(dist)?))
    }
}

impl Persist for PlattScaler {
    const KIND: &'static str = "platt_scaler";
}

/// `softmax(z / T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureScaler {
    pub temperature: f64,
    pub fallback: bool,
    pub warning: Option<String>,
}

pub fn temperature_loss(logits: &[Vec<f64>], labels: &[usize], t: f64) -> f64 {
    logits
        .iter()
        .zip(labels)
        .map(|(z, &y)| {
            let s: Vec<f64> = z.iter().map(|v| v / t).collect();
            let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + s.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - s[y]
        })
        .sum::<f64>()
        / logits.len() as f64
}

impl TemperatureScaler {
    pub fn apply_logits(&self, z: &[f64]) -> Vec<f64> {
        softmax(&z.iter().map(|v| v / self.temperature).collect::<Vec<_>>())
    }
}

/// Minimizes the log loss over the inverse temperature `β = 1/T`, where it
/// is convex, by safeguarded Newton on the derivative.
pub fn fit_temperature(logits: &[Vec<f64>], labels: &[usize]) -> Result<TemperatureScaler> {
    if logits.is_empty() || logits.len() != labels.len() {
        return Err(Error::domain("logits and labels must be nonempty and aligned"));
    }
    let k = logits[0].len();
    if k < 2 || logits.iter().any(|z| z.len() != k || z.iter().any(|v| !v.is_finite())) {
        return Err(Error::domain("logits must be finite vectors of one length K >= 2"));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::domain(format!("label {l} outside 0..{k}")));
    }
    let n = labels.len() as f64;
    // first and second derivative of the mean loss in β
    let derivs = |beta: f64| -> (f64, f64) {
        let (mut d1, mut d2) = (0.0, 0.0);
        for (z, &y) in logits.iter().zip(labels) {
            let p = softmax(&z.iter().map(|v| beta * v).collect::<Vec<_>>());
            let ez: f64 = p.iter().zip(z).map(|(p, z)| p * z).sum();
            let ez2: f64 = p.iter().zip(z).map(|(p, z)| p * z * z).sum();
            d1 += ez - z[y];
            d2 += ez2 - ez * ez;
        }
        (d1 / n, d2 / n)
    };
    let (lo_b, hi_b) = (1.0 / SCALER_BOUND, SCALER_BOUND);
    let single_class = labels.iter().all(|&l| l == labels[0]);
    let (d_lo, _) = derivs(lo_b);
    let (d_hi, _) = derivs(hi_b);
    let fallback = |beta: f64, why: &str| TemperatureScaler {
        temperature: 1.0 / beta,
        fallback: true,
        warning: Some(why.to_string()),
    };
    if d_hi < 0.0 {
        return Ok(fallback(
            hi_b,
            if single_class {
                "all labels belong to one class; temperature stopped at the bound"
            } else {
                "loss still decreasing at the smallest temperature; data look separable"
            },
        ));
    }
    if d_lo > 0.0 {
        return Ok(fallback(lo_b, "loss still decreasing at the largest temperature"));
    }
    let (mut lo, mut hi) = (lo_b, hi_b);
    let mut beta = 1.0f64.clamp(lo, hi);
    for _ in 0..200 {
        let (d1, d2) = derivs(beta);
        if d1.abs() < 1e-14 {
            break;
        }
        if d1 > 0.0 {
            hi = beta;
        } else {
            lo = beta;
        }
        let newton = beta - d1 / d2;
        beta = if d2 > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo < 1e-15 * hi {
            break;
        }
    }
    Ok(TemperatureScaler {
        temperature: 1.0 / beta,
        fallback: single_class,
        warning: single_class.then(|| "all labels belong to one class".to_string()),
    })
}

impl Recalibrator for TemperatureScaler {
    fn recalibrate(&self, dist: &PredictiveDistribution) -> Result<PredictiveDistribution> {
        match dist {
            PredictiveDistribution::Categorical(c) => {
                let z: Vec<f64> = c.probs().iter().map(|p| p.max(LOG_FLOOR).ln()).collect();
                Ok(CategoricalDist::from_weights(&self.apply_logits(&z))?.into())
            }
            _ => Err(Error::domain("temperature scaling needs a categorical forecast")),
        }
    }
}

impl Persist for TemperatureScaler {
    const KIND: &'static str = "temperature_scaler";

    fn check(self) -> Result<Self> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Schema("temperature must be positive".into()));
        }
        Ok(self)
    }
}

/// Multi-class Platt scaling: `softmax(W p)` over the class probabilities,
/// with the last row of `W` pinned at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassPlatt {
    /// `K × K`, row-major.
    pub weights: Vec<Vec<f64>>,
}

const MC_PLATT_RIDGE: f64 = 1e-8;

impl MulticlassPlatt {
    pub fn apply(&self, p: &CategoricalDist) -> Result<CategoricalDist> {
        let k = self.weights.len();
        if p.num_classes() != k {
            return Err(Error::domain(format!("expected {k} classes, got {}", p.num_classes())));
        }
        let s: Vec<f64> = self
            .weights
            .iter()
            .map(|row| row.iter().zip(p.probs()).map(|(w, q)| w * q).sum())
            .collect();
        CategoricalDist::from_weights(&softmax(&s))
    }
}

pub fn multiclass_platt_loss(m: &MulticlassPlatt, probs: &[CategoricalDist], labels: &[usize]) -> Result<f64> {
    let mut s = 0.0;
    for (p, &y) in probs.iter().zip(labels) {
        s -= m.apply(p)?.prob(y).max(1e-300).ln();
    }
    Ok(s / probs.len() as f64)
}

/// Newton's method with backtracking on the ridge-stabilized log loss.
pub fn fit_multiclass_platt(probs: &[CategoricalDist], labels: &[usize]) -> Result<MulticlassPlatt> {
    if probs.is_empty() || probs.len() != labels.len() {
        return Err(Error::domain("forecasts and labels must be nonempty and aligned"));
    }
    let k = probs[0].num_classes();
    if probs.iter().any(|p| p.num_classes() != k) {
        return Err(Error::domain("forecasts differ in class count"));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::domain(format!("label {l} outside 0..{k}")));
    }
    let n = probs.len() as f64;
    let dim = (k - 1) * k;
    let unpack = |theta: &DVector<f64>| -> MulticlassPlatt {
        let mut w = vec![vec![0.0; k]; k];
        for c in 0..k - 1 {
            for j in 0..k {
                w[c][j] = theta[c * k + j];
            }
        }
        MulticlassPlatt { weights: w }
    };
    let objective = |theta: &DVector<f64>| -> Result<f64> {
        Ok(multiclass_platt_loss(&unpack(theta), probs, labels)? + 0.5 * MC_PLATT_RIDGE * theta.norm_squared())
    };
    // start from W = c·I, which is the identity map up to a monotone warp
    let mut theta = DVector::zeros(dim);
    for c in 0..k - 1 {
        theta[c * k + c] = 1.0;
    }
    let mut f = objective(&theta)?;
    for _ in 0..100 {
        let m = unpack(&theta);
        let mut g = DVector::zeros(dim);
        let mut h = DMatrix::zeros(dim, dim);
        for (p, &y) in probs.iter().zip(labels) {
            let q = m.apply(p)?;
            let x = p.probs();
            for c in 0..k - 1 {
                let r = q.prob(c) - if c == y { 1.0 } else { 0.0 };
                for j in 0..k {
                    g[c * k + j] += r * x[j] / n;
                }
                for d in 0..k - 1 {
                    let w = if c == d { q.prob(c) * (1.0 - q.prob(c)) } else { -q.prob(c) * q.prob(d) };
                    for i in 0..k {
                        for j in 0..k {
                            h[(c * k + i, d * k + j)] += w * x[i] * x[j] / n;
                        }
                    }
                }
            }
        }
        g += &theta * MC_PLATT_RIDGE;
        for i in 0..dim {
            h[(i, i)] += MC_PLATT_RIDGE;
        }
        if g.norm() < 1e-12 {
            break;
        }
        let step = h
            .cholesky()
            .map(|c| -c.solve(&g))
            .unwrap_or_else(|| -g.clone());
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let cand = &theta + &step * t;
            let fc = objective(&cand)?;
            if fc <= f {
                moved = fc < f;
                theta = cand;
                f = fc;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok(unpack(&theta))
}

impl Recalibrator for MulticlassPlatt {
    fn recalibrate(&self, dist: &PredictiveDistribution) -> Result<PredictiveDistribution> {
        match dist {
            PredictiveDistribution::Categorical(c) => Ok(self.apply(c)?.into()),
            _ => Err(Error::domain("multi-class Platt scaling needs a categorical forecast")),
        }
    }
}

impl Persist for MulticlassPlatt {
    const KIND: &'static str = "multiclass_platt";

    fn check(self) -> Result<Self> {
        let k = self.weights.len();
        if k < 2 || self.weights.iter().any(|r| r.len() != k) {
            return Err(Error::Schema("multi-class Platt weights must be K x K".into()));
        }
        Ok(self)
    }
}
