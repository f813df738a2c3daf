//! Predictive distributions and their parameterizations.
//!
//! Three forecast shapes are supported: Gaussian, categorical over class
//! indices `0..K`, and a quantile grid (levels paired with outcome values).
//! Every shape answers CDF, quantile and density queries, which is all the
//! scoring and recalibration code needs.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erfc_inv};
use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};

/// Density reported at a jump of a quantile-grid CDF.
pub const DENSITY_CAP: f64 = 1e12;

/// The nine deciles used as the default featurization grid.
pub const DECILES: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / SQRT_2))
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Standard normal quantile (probit). `p` must lie in (0, 1).
pub fn normal_quantile(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianDist {
    mu: f64,
    sigma: f64,
}

impl GaussianDist {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(Error::domain(format!("gaussian mean must be finite, got {mu}")));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::domain(format!(
                "gaussian sigma must be finite and positive, got {sigma}"
            )));
        }
        Ok(Self { mu, sigma })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalDist {
    probs: Vec<f64>,
}

impl CategoricalDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::domain("categorical needs at least two classes"));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::domain("categorical probabilities must lie in [0, 1]"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!(
                "categorical probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self { probs })
    }

    /// Builds from nonnegative weights, renormalizing them to the simplex.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total.is_finite() && total > 0.0) || weights.iter().any(|w| *w < 0.0) {
            return Err(Error::domain("weights must be nonnegative with positive sum"));
        }
        let mut probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        // push rounding residue into the largest entry so the sum is exact
        let resid = 1.0 - probs.iter().sum::<f64>();
        let top = argmax(&probs);
        probs[top] = (probs[top] + resid).clamp(0.0, 1.0);
        Self::new(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    pub fn prob(&self, class: usize) -> f64 {
        self.probs.get(class).copied().unwrap_or(0.0)
    }

    /// Index of the most probable class (lowest index on ties).
    pub fn mode(&self) -> usize {
        argmax(&self.probs)
    }
}

#[cfg(test)]
pub(crate) fn argmin(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x < xs[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// A distribution described by its quantile function sampled on a grid.
///
/// The CDF is piecewise linear through `(values[i], levels[i])`, extended
/// linearly past both ends with the slope of the boundary segment and
/// clamped to `[0, 1]`. Repeated values create a jump in the CDF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileGridDist {
    levels: Vec<f64>,
    values: Vec<f64>,
}

impl QuantileGridDist {
    pub fn new(levels: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        validate_levels(&levels)?;
        if values.len() != levels.len() {
            return Err(Error::domain(format!(
                "{} levels but {} values",
                levels.len(),
                values.len()
            )));
        }
        if levels.len() < 2 {
            return Err(Error::domain("quantile grid needs at least two points"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("quantile grid values must be finite"));
        }
        if values.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::domain("quantile grid values must be nondecreasing"));
        }
        Ok(Self { levels, values })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn left_slope(&self) -> f64 {
        slope(self.values[0], self.values[1], self.levels[0], self.levels[1])
    }

    fn right_slope(&self) -> f64 {
        let d = self.values.len();
        slope(
            self.values[d - 2],
            self.values[d - 1],
            self.levels[d - 2],
            self.levels[d - 1],
        )
    }

    fn cdf(&self, y: f64) -> f64 {
        let d = self.values.len();
        let (v0, vl) = (self.values[0], self.values[d - 1]);
        if y < v0 {
            let s = self.left_slope();
            return if s.is_finite() {
                (self.levels[0] - s * (v0 - y)).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
        if y >= vl {
            let s = self.right_slope();
            return if s.is_finite() {
                (self.levels[d - 1] + s * (y - vl)).clamp(0.0, 1.0)
            } else {
                1.0
            };
        }
        // largest i with values[i] <= y; right-continuous at ties
        let i = self.values.partition_point(|&v| v <= y) - 1;
        let (va, vb) = (self.values[i], self.values[i + 1]);
        let (la, lb) = (self.levels[i], self.levels[i + 1]);
        la + (lb - la) * (y - va) / (vb - va)
    }

    fn quantile(&self, tau: f64) -> f64 {
        let d = self.values.len();
        if tau < self.levels[0] {
            let s = self.left_slope();
            return if s.is_finite() && s > 0.0 {
                self.values[0] - (self.levels[0] - tau) / s
            } else {
                self.values[0]
            };
        }
        if tau > self.levels[d - 1] {
            let s = self.right_slope();
            return if s.is_finite() && s > 0.0 {
                self.values[d - 1] + (tau - self.levels[d - 1]) / s
            } else {
                self.values[d - 1]
            };
        }
        let i = self
            .levels
            .partition_point(|&l| l <= tau)
            .saturating_sub(1)
            .min(d - 2);
        let (la, lb) = (self.levels[i], self.levels[i + 1]);
        let (va, vb) = (self.values[i], self.values[i + 1]);
        va + (vb - va) * (tau - la) / (lb - la)
    }

    fn density(&self, y: f64) -> f64 {
        let d = self.values.len();
        // a jump sits exactly on a repeated value
        if self.values.windows(2).any(|w| w[0] == w[1] && w[0] == y) {
            return DENSITY_CAP;
        }
        let (v0, vl) = (self.values[0], self.values[d - 1]);
        if y < v0 || y > vl {
            let c = self.cdf(y);
            if c <= 0.0 || c >= 1.0 {
                return 0.0;
            }
            let s = if y < v0 { self.left_slope() } else { self.right_slope() };
            return s.min(DENSITY_CAP);
        }
        if y == vl {
            let s = self.right_slope();
            return s.min(DENSITY_CAP);
        }
        let i = self.values.partition_point(|&v| v <= y) - 1;
        slope(
            self.values[i],
            self.values[i + 1],
            self.levels[i],
            self.levels[i + 1],
        )
        .min(DENSITY_CAP)
    }

    /// Support of the piecewise-linear CDF: where it leaves 0 and reaches 1.
    pub fn support(&self) -> (f64, f64) {
        let d = self.values.len();
        let sl = self.left_slope();
        let sr = self.right_slope();
        let lo = if sl.is_finite() && sl > 0.0 {
            self.values[0] - self.levels[0] / sl
        } else {
            self.values[0]
        };
        let hi = if sr.is_finite() && sr > 0.0 {
            self.values[d - 1] + (1.0 - self.levels[d - 1]) / sr
        } else {
            self.values[d - 1]
        };
        (lo, hi)
    }
}

fn slope(va: f64, vb: f64, la: f64, lb: f64) -> f64 {
    if vb > va {
        (lb - la) / (vb - va)
    } else {
        f64::INFINITY
    }
}

/// Checks that `levels` are strictly increasing inside (0, 1).
pub fn validate_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::domain("level vector is empty"));
    }
    if levels.iter().any(|&l| !(l > 0.0 && l < 1.0)) {
        return Err(Error::domain("levels must lie strictly inside (0, 1)"));
    }
    if levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain("levels must be strictly increasing"));
    }
    Ok(())
}

/// A probabilistic forecast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PredictiveDistribution {
    Gaussian(GaussianDist),
    Categorical(CategoricalDist),
    QuantileGrid(QuantileGridDist),
}

impl From<GaussianDist> for PredictiveDistribution {
    fn from(d: GaussianDist) -> Self {
        Self::Gaussian(d)
    }
}

impl From<CategoricalDist> for PredictiveDistribution {
    fn from(d: CategoricalDist) -> Self {
        Self::Categorical(d)
    }
}

impl From<QuantileGridDist> for PredictiveDistribution {
    fn from(d: QuantileGridDist) -> Self {
        Self::QuantileGrid(d)
    }
}

impl PredictiveDistribution {
    /// `P(Y <= y)`. Categorical outcomes are the class indices `0..K`.
    pub fn cdf_at(&self, y: f64) -> Result<f64> {
        if !y.is_finite() {
            return Err(Error::domain(format!("cdf query at non-finite point {y}")));
        }
        Ok(match self {
            Self::Gaussian(g) => normal_cdf((y - g.mu) / g.sigma),
            Self::Categorical(c) => {
                if y < 0.0 {
                    0.0
                } else {
                    let k = (y.floor() as usize).min(c.probs.len() - 1);
                    c.probs[..=k].iter().sum::<f64>().min(1.0)
                }
            }
            Self::QuantileGrid(q) => q.cdf(y),
        })
    }

    /// Generalized inverse of the CDF, `inf { y : F(y) >= tau }`.
    pub fn quantile_at(&self, tau: f64) -> Result<f64> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::domain(format!("quantile level {tau} outside (0, 1)")));
        }
        Ok(match self {
            Self::Gaussian(g) => g.mu + g.sigma * normal_quantile(tau),
            Self::Categorical(c) => {
                let mut acc = 0.0;
                let mut class = c.probs.len() - 1;
                for (k, p) in c.probs.iter().enumerate() {
                    acc += p;
                    if acc >= tau {
                        class = k;
                        break;
                    }
                }
                class as f64
            }
            Self::QuantileGrid(q) => q.quantile(tau),
        })
    }

    /// Density (continuous shapes) or mass (categorical) at `y`.
    pub fn density_at(&self, y: f64) -> Result<f64> {
        if !y.is_finite() {
            return Err(Error::domain(format!("density query at non-finite point {y}")));
        }
        Ok(match self {
            Self::Gaussian(g) => normal_pdf((y - g.mu) / g.sigma) / g.sigma,
            Self::Categorical(c) => {
                if y >= 0.0 && y.fract() == 0.0 {
                    c.prob(y as usize)
                } else {
                    0.0
                }
            }
            Self::QuantileGrid(q) => q.density(y),
        })
    }

    /// Median, used as the point prediction.
    pub fn median(&self) -> f64 {
        self.quantile_at(0.5).expect("0.5 is a valid level")
    }

    /// Inverse-CDF sampling; deterministic for a given generator state.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let u = open_unit(rng);
                self.quantile_at(u).expect("open unit draw is a valid level")
            })
            .collect()
    }

    /// The distribution of `shift + scale * Y`, for `scale > 0`.
    pub fn affine(&self, shift: f64, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::domain("affine scale must be positive"));
        }
        match self {
            Self::Gaussian(g) => Ok(GaussianDist::new(shift + scale * g.mu, scale * g.sigma)?.into()),
            Self::QuantileGrid(q) => Ok(QuantileGridDist::new(
                q.levels.clone(),
                q.values.iter().map(|v| shift + scale * v).collect(),
            )?
            .into()),
            Self::Categorical(_) => Err(Error::domain("categorical outcomes cannot be rescaled")),
        }
    }
}

/// Uniform draw on the open interval (0, 1).
pub(crate) fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Which parameterization a [`Featurization`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    GaussianParams,
    QuantileGrid,
    ClassProbs,
}

/// Parameter vector presented to a recalibrator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Featurization {
    pub params: Vec<f64>,
    pub kind: FeatureKind,
}

impl Featurization {
    pub fn new(params: Vec<f64>, kind: FeatureKind) -> Result<Self> {
        if kind == FeatureKind::GaussianParams && params.len() != 2 {
            return Err(Error::domain("gaussian parameters have exactly two entries"));
        }
        if params.is_empty() {
            return Err(Error::domain("empty featurization"));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::domain("featurization entries must be finite"));
        }
        Ok(Self { params, kind })
    }

    /// `(mu, sigma)` of a Gaussian.
    pub fn gaussian_params(g: &GaussianDist) -> Self {
        Self {
            params: vec![g.mu, g.sigma],
            kind: FeatureKind::GaussianParams,
        }
    }

    pub fn class_probs(c: &CategoricalDist) -> Self {
        Self {
            params: c.probs.clone(),
            kind: FeatureKind::ClassProbs,
        }
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    /// Rebuilds the quantile-grid distribution this featurization describes.
    pub fn to_quantile_grid(&self, levels: &[f64]) -> Result<QuantileGridDist> {
        if self.kind != FeatureKind::QuantileGrid {
            return Err(Error::domain("featurization is not a quantile grid"));
        }
        let mut values = self.params.clone();
        // featurizations of valid dists are already sorted; this guards rounding
        values.sort_by(f64::total_cmp);
        QuantileGridDist::new(levels.to_vec(), values)
    }
}

/// Featurizes `dist` by its quantiles at `levels`.
pub fn featurize(dist: &PredictiveDistribution, levels: &[f64]) -> Result<Featurization> {
    validate_levels(levels)?;
    let params = levels
        .iter()
        .map(|&l| dist.quantile_at(l))
        .collect::<Result<Vec<_>>>()?;
    Ok(Featurization {
        params,
        kind: FeatureKind::QuantileGrid,
    })
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Reference implementations that avoid the erf-based code paths.

    /// Standard normal CDF by composite Simpson quadrature of the density.
    pub fn phi(z: f64) -> f64 {
        let n = 20_000;
        let h = z / n as f64;
        let f = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = f(0.0) + f(z);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(i as f64 * h);
        }
        0.5 + s * h / 3.0
    }

    /// Inverse of [`phi`] by bisection.
    pub fn probit(p: f64) -> f64 {
        let (mut lo, mut hi) = (-12.0, 12.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if phi(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}
