//! Proper scoring rules, oriented so that lower is better.
//!
//! Also hosts the empirical calibration/refinement decomposition of the
//! log-loss over grouped forecasts.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::dist::{
    normal_cdf, normal_pdf, validate_levels, CategoricalDist, PredictiveDistribution,
    QuantileGridDist,
};
use crate::error::{Error, Result};

/// Floor applied to densities and probabilities inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// A proper loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "loss", rename_all = "snake_case")]
pub enum LossSpec {
    Log,
    Crps,
    Check { tau: f64 },
    PinballAvg { levels: Vec<f64> },
    Brier,
    Misclassification,
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            LossSpec::Check { tau } if !(*tau > 0.0 && *tau < 1.0) => {
                Err(Error::domain(format!("check level {tau} outside (0, 1)")))
            }
            LossSpec::PinballAvg { levels } => validate_levels(levels),
            _ => Ok(()),
        }
    }

    /// Loss of forecast `dist` at outcome `y` (class index for categorical).
    pub fn score(&self, dist: &PredictiveDistribution, y: f64) -> Result<f64> {
        self.validate()?;
        match self {
            LossSpec::Log => log_loss(dist, y),
            LossSpec::Crps => crps(dist, y),
            LossSpec::Check { tau } => Ok(check_score(*tau, y, dist.quantile_at(*tau)?)),
            LossSpec::PinballAvg { levels } => pinball_avg(dist, y, levels),
            LossSpec::Brier => brier(as_categorical(dist)?, class_index(y)?),
            LossSpec::Misclassification => {
                let c = as_categorical(dist)?;
                let y = class_index(y)?;
                Ok(if c.num_classes() == 2 {
                    misclassification_loss(c.prob(1), y)
                } else if c.mode() == y {
                    0.0
                } else {
                    1.0
                })
            }
        }
    }

    /// Precomputes whatever depends only on the forecast, returning a closure
    /// over outcomes. Used by the Monte-Carlo routines.
    pub fn prepare<'a>(
        &'a self,
        dist: &'a PredictiveDistribution,
    ) -> Result<Box<dyn Fn(f64) -> Result<f64> + 'a>> {
        self.validate()?;
        match self {
            LossSpec::Check { tau } => {
                let q = dist.quantile_at(*tau)?;
                let tau = *tau;
                Ok(Box::new(move |y| Ok(check_score(tau, y, q))))
            }
            LossSpec::PinballAvg { levels } => {
                let qs = levels
                    .iter()
                    .map(|&l| dist.quantile_at(l))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Box::new(move |y| {
                    Ok(levels
                        .iter()
                        .zip(&qs)
                        .map(|(&t, &q)| check_score(t, y, q))
                        .sum::<f64>()
                        / levels.len() as f64)
                }))
            }
            _ => Ok(Box::new(move |y| self.score(dist, y))),
        }
    }
}

fn as_categorical(dist: &PredictiveDistribution) -> Result<&CategoricalDist> {
    match dist {
        PredictiveDistribution::Categorical(c) => Ok(c),
        _ => Err(Error::domain("loss requires a categorical forecast")),
    }
}

fn class_index(y: f64) -> Result<usize> {
    if y >= 0.0 && y.fract() == 0.0 && y.is_finite() {
        Ok(y as usize)
    } else {
        Err(Error::domain(format!("{y} is not a class index")))
    }
}

/// Negative log density (or mass), with the density floored at [`PROB_FLOOR`].
pub fn log_loss(dist: &PredictiveDistribution, y: f64) -> Result<f64> {
    Ok(-dist.density_at(y)?.max(PROB_FLOOR).ln())
}

/// Continuous ranked probability score, `∫ (F(z) - 1{z >= y})² dz`.
///
/// Closed form for Gaussians; for categorical forecasts the integral over
/// the integer outcome grid reduces to the ranked probability score. Quantile
/// grids have a piecewise-linear CDF, so the integrand is piecewise quadratic
/// and Simpson's rule on each piece is exact.
pub fn crps(dist: &PredictiveDistribution, y: f64) -> Result<f64> {
    if !y.is_finite() {
        return Err(Error::domain("crps at non-finite outcome"));
    }
    match dist {
        PredictiveDistribution::Gaussian(g) => {
            let z = (y - g.mu()) / g.sigma();
            Ok(g.sigma() * (z * (2.0 * normal_cdf(z) - 1.0) + 2.0 * normal_pdf(z) - 1.0 / PI.sqrt()))
        }
        PredictiveDistribution::Categorical(c) => {
            let mut cum = 0.0;
            let mut total = 0.0;
            for k in 0..c.num_classes() - 1 {
                cum += c.prob(k);
                let step = if (k as f64) >= y { 1.0 } else { 0.0 };
                total += (cum - step).powi(2);
            }
            Ok(total)
        }
        PredictiveDistribution::QuantileGrid(q) => crps_grid(q, dist, y),
    }
}

fn crps_grid(q: &QuantileGridDist, dist: &PredictiveDistribution, y: f64) -> Result<f64> {
    let (lo, hi) = q.support();
    let mut knots: Vec<f64> = q.values().to_vec();
    knots.extend([lo, hi, y]);
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let resid = |z: f64| -> Result<f64> {
        let step = if z >= y { 1.0 } else { 0.0 };
        Ok(dist.cdf_at(z)? - step)
    };
    let mut total = 0.0;
    for w in knots.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        // evaluate strictly inside the piece so jumps at the knots are excluded
        let eps = (b - a) * 1e-12;
        let fa = resid(a + eps)?;
        let fm = resid(0.5 * (a + b))?;
        let fb = resid(b - eps)?;
        total += (b - a) / 6.0 * (fa * fa + 4.0 * fm * fm + fb * fb);
    }
    if !total.is_finite() {
        return Err(Error::Numeric(format!(
            "crps quadrature produced {total} over support [{lo}, {hi}]"
        )));
    }
    Ok(total)
}

/// Check (pinball) score of a `tau`-quantile forecast `f` at outcome `y`.
pub fn check_score(tau: f64, y: f64, f: f64) -> f64 {
    if y >= f {
        tau * (y - f)
    } else {
        (1.0 - tau) * (f - y)
    }
}

/// Mean check score over `levels` using the forecast's own quantiles.
pub fn pinball_avg(dist: &PredictiveDistribution, y: f64, levels: &[f64]) -> Result<f64> {
    validate_levels(levels)?;
    let mut total = 0.0;
    for &tau in levels {
        total += check_score(tau, y, dist.quantile_at(tau)?);
    }
    Ok(total / levels.len() as f64)
}

/// Multi-class Brier score `Σ_k (p_k - 1{k = y})²`.
pub fn brier(dist: &CategoricalDist, y: usize) -> Result<f64> {
    if y >= dist.num_classes() {
        return Err(Error::domain(format!("class {y} out of range")));
    }
    Ok(dist
        .probs()
        .iter()
        .enumerate()
        .map(|(k, p)| (p - if k == y { 1.0 } else { 0.0 }).powi(2))
        .sum())
}

/// 0-1 loss of the decision `1{p >= 0.5}` against binary outcome `y`.
pub fn misclassification_loss(p: f64, y: usize) -> f64 {
    let predicted = usize::from(p >= 0.5);
    if predicted == y {
        0.0
    } else {
        1.0
    }
}

/// A Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
}

/// `E_{y ~ truth} loss(forecast, y)` by Monte Carlo.
pub fn expected_score<R: Rng + ?Sized>(
    loss: &LossSpec,
    forecast: &PredictiveDistribution,
    truth: &PredictiveDistribution,
    n_mc: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    if n_mc < 100 {
        return Err(Error::domain("expected_score needs at least 100 draws"));
    }
    let f = loss.prepare(forecast)?;
    let ys = truth.sample(rng, n_mc);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for y in ys {
        let s = f(y)?;
        sum += s;
        sum_sq += s * s;
    }
    let n = n_mc as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(McEstimate {
        mean,
        std_error: (var / n).sqrt(),
    })
}

/// Empirical log-loss decomposition over grouped forecasts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub mean_loss: f64,
    pub calibration_term: f64,
    pub refinement_term: f64,
    pub n: usize,
    pub bin_count: usize,
}

/// Splits the mean log-loss into `Σ w_v KL(q_v ‖ f_v)` and `Σ w_v H(q_v)`,
/// grouping samples by their exact forecast vector.
pub fn decompose_binned(forecasts: &[CategoricalDist], outcomes: &[usize]) -> Result<ScoreReport> {
    if forecasts.len() != outcomes.len() {
        return Err(Error::domain("forecasts and outcomes differ in length"));
    }
    if forecasts.is_empty() {
        return Err(Error::domain("no samples to decompose"));
    }
    let k = forecasts[0].num_classes();
    if forecasts.iter().any(|f| f.num_classes() != k) {
        return Err(Error::domain("forecasts disagree on class count"));
    }
    if let Some(&bad) = outcomes.iter().find(|&&y| y >= k) {
        return Err(Error::domain(format!("outcome class {bad} out of range")));
    }

    // key on the bit patterns so grouping is exact
    let mut groups: BTreeMap<Vec<u64>, (usize, Vec<f64>)> = BTreeMap::new();
    let mut loss_sum = 0.0;
    for (f, &y) in forecasts.iter().zip(outcomes) {
        loss_sum -= f.prob(y).max(PROB_FLOOR).ln();
        let key: Vec<u64> = f.probs().iter().map(|p| p.to_bits()).collect();
        let entry = groups.entry(key).or_insert_with(|| (0, vec![0.0; k]));
        entry.0 += 1;
        entry.1[y] += 1.0;
    }

    let n = forecasts.len() as f64;
    let mut calibration = 0.0;
    let mut refinement = 0.0;
    for (key, (count, class_counts)) in &groups {
        let w = *count as f64 / n;
        let mut kl = 0.0;
        let mut h = 0.0;
        for (bits, c) in key.iter().zip(class_counts) {
            if *c == 0.0 {
                continue;
            }
            let q = c / *count as f64;
            let f = f64::from_bits(*bits).max(PROB_FLOOR);
            kl += q * (q / f).ln();
            h -= q * q.ln();
        }
        calibration += w * kl;
        refinement += w * h;
    }
    Ok(ScoreReport {
        mean_loss: loss_sum / n,
        calibration_term: calibration.max(0.0),
        refinement_term: refinement,
        n: forecasts.len(),
        bin_count: groups.len(),
    })
}

/// Snaps every class probability to the centre of one of `bins` uniform
/// bins and renormalizes, so continuous forecasts can be grouped.
pub fn snap_to_bins(forecasts: &[CategoricalDist], bins: usize) -> Result<Vec<CategoricalDist>> {
    if bins == 0 {
        return Err(Error::domain("bin count must be positive"));
    }
    let b = bins as f64;
    forecasts
        .iter()
        .map(|f| {
            let snapped: Vec<f64> = f
                .probs()
                .iter()
                .map(|&p| ((p * b).floor().min(b - 1.0) + 0.5) / b)
                .collect();
            CategoricalDist::from_weights(&snapped)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{oracle, GaussianDist, DECILES};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gauss(mu: f64, sigma: f64) -> PredictiveDistribution {
        GaussianDist::new(mu, sigma).unwrap().into()
    }

    fn cat(p: &[f64]) -> PredictiveDistribution {
        CategoricalDist::new(p.to_vec()).unwrap().into()
    }

    /// Trapezoid integration of the CRPS integrand, independent of the
    /// closed form and the piecewise path.
    fn crps_oracle(dist: &PredictiveDistribution, y: f64, lo: f64, hi: f64) -> f64 {
        // split at y so the step never falls inside a trapezoid panel
        let panel = |a: f64, b: f64, step: f64| {
            let n = 200_000;
            let h = (b - a) / n as f64;
            let f = |z: f64| (dist.cdf_at(z).unwrap() - step).powi(2);
            let mut s = 0.5 * (f(a) + f(b));
            for i in 1..n {
                s += f(a + i as f64 * h);
            }
            s * h
        };
        panel(lo, y, 0.0) + panel(y, hi, 1.0)
    }

    #[test]
    fn log_loss_examples() {
        let v = log_loss(&gauss(0.0, 1.0), 0.0).unwrap();
        assert!((v - 0.5 * (2.0 * PI).ln()).abs() < 1e-12);
        assert!((v - 0.918939).abs() < 1e-5);
        assert_eq!(log_loss(&cat(&[1.0, 0.0]), 0.0).unwrap(), 0.0);
        let floored = log_loss(&cat(&[1.0, 0.0]), 1.0).unwrap();
        assert!((floored - 27.631).abs() < 1e-3);
    }

    #[test]
    fn crps_examples() {
        let g = gauss(0.0, 1.0);
        let v = crps(&g, 0.0).unwrap();
        let oracle = crps_oracle(&g, 0.0, -12.0, 12.0);
        assert!((v - oracle).abs() < 1e-6, "{v} vs {oracle}");
        assert!((v - 0.23370).abs() < 1e-4);
        let v2 = crps(&gauss(0.0, 2.0), 0.0).unwrap();
        assert!((v2 - 2.0 * 0.23370).abs() < 2e-4);
        let point: PredictiveDistribution =
            QuantileGridDist::new(DECILES.to_vec(), vec![1.5; 9]).unwrap().into();
        assert!(crps(&point, 1.5).unwrap().abs() < 1e-6);
    }

    #[test]
    fn crps_grid_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let mut vals: Vec<f64> = (0..9).map(|_| rng.random_range(-3.0..3.0)).collect();
            vals.sort_by(f64::total_cmp);
            let q = QuantileGridDist::new(DECILES.to_vec(), vals).unwrap();
            let (lo, hi) = q.support();
            let d: PredictiveDistribution = q.into();
            let y = rng.random_range(-5.0..5.0);
            let got = crps(&d, y).unwrap();
            let want = crps_oracle(&d, y, lo.min(y) - 1.0, hi.max(y) + 1.0);
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn crps_scale_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let mut vals: Vec<f64> = (0..9).map(|_| rng.random_range(-3.0..3.0)).collect();
            vals.sort_by(f64::total_cmp);
            let dists = [
                gauss(rng.random_range(-2.0..2.0), rng.random_range(0.2..2.0)),
                QuantileGridDist::new(DECILES.to_vec(), vals).unwrap().into(),
            ];
            let c = rng.random_range(0.1..10.0);
            let y = rng.random_range(-4.0..4.0);
            for d in dists {
                let scaled = d.affine(0.0, c).unwrap();
                let lhs = crps(&scaled, c * y).unwrap();
                let rhs = c * crps(&d, y).unwrap();
                assert!((lhs - rhs).abs() < 1e-6, "{lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn check_score_examples() {
        assert!((check_score(0.9, 2.0, 1.0) - 0.9).abs() < 1e-15);
        assert!((check_score(0.9, 1.0, 2.0) - 0.1).abs() < 1e-15);
        assert_eq!(check_score(0.3, 4.2, 4.2), 0.0);
    }

    #[test]
    fn pinball_examples() {
        let point: PredictiveDistribution =
            QuantileGridDist::new(DECILES.to_vec(), vec![0.7; 9]).unwrap().into();
        assert_eq!(pinball_avg(&point, 0.7, &DECILES).unwrap(), 0.0);

        // brute force with the bisection probit
        let brute: f64 = DECILES
            .iter()
            .map(|&t| check_score(t, 0.0, oracle::probit(t)))
            .sum::<f64>()
            / 9.0;
        let got = pinball_avg(&gauss(0.0, 1.0), 0.0, &DECILES).unwrap();
        assert!((got - brute).abs() < 1e-9);
        assert!((got - 0.123364).abs() < 1e-6);

        // symmetric levels around the median: lower half mirrors the upper half
        let upper: f64 = [0.6, 0.7, 0.8, 0.9]
            .iter()
            .map(|&t| check_score(t, 0.0, oracle::probit(t)))
            .sum();
        assert!((got * 9.0 - 2.0 * upper).abs() < 1e-9);
    }

    #[test]
    fn misclassification_examples() {
        assert_eq!(misclassification_loss(0.7, 1), 0.0);
        assert_eq!(misclassification_loss(0.7, 0), 1.0);
        assert_eq!(misclassification_loss(0.5, 1), 0.0);
        assert_eq!(misclassification_loss(0.2, 0), 0.0);
    }

    #[test]
    fn expected_score_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = cat(&[0.5, 0.5]);
        let est = expected_score(&LossSpec::Brier, &f, &f, 10_000, &mut rng).unwrap();
        // Brier of [0.5, 0.5] is 0.5 for either outcome
        assert!((est.mean - 0.5).abs() <= 3.0 * est.std_error + 1e-12);
        let sure = cat(&[1.0, 0.0]);
        let est = expected_score(&LossSpec::Log, &sure, &sure, 1000, &mut rng).unwrap();
        assert_eq!(est.mean, 0.0);
        assert!(expected_score(&LossSpec::Log, &sure, &sure, 10, &mut rng).is_err());
    }

    #[test]
    fn expected_score_deterministic() {
        let f = gauss(0.3, 1.2);
        let g = gauss(0.0, 1.0);
        let a = expected_score(&LossSpec::Crps, &f, &g, 500, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let b = expected_score(&LossSpec::Crps, &f, &g, 500, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn propriety_probe_gaussians() {
        let f = gauss(1.0, 0.5);
        let g = gauss(0.0, 1.0);
        for loss in [
            LossSpec::Log,
            LossSpec::Crps,
            LossSpec::PinballAvg { levels: DECILES.to_vec() },
        ] {
            let a = expected_score(&loss, &f, &g, 20_000, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            let b = expected_score(&loss, &g, &g, 20_000, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            assert!(a.mean >= b.mean - 3.0 * b.std_error, "{loss:?}");
        }
    }

    #[test]
    fn pinball_minimized_at_truth_over_shift_family() {
        let truth = gauss(0.0, 1.0);
        let levels = DECILES.to_vec();
        let ys = truth.sample(&mut ChaCha8Rng::seed_from_u64(17), 200_000);
        let shifts: Vec<f64> = (-20..=20).map(|i| i as f64 * 0.05).collect();
        let risk: Vec<f64> = shifts
            .iter()
            .map(|&s| {
                let f = truth.affine(s, 1.0).unwrap();
                let qs: Vec<f64> = levels.iter().map(|&l| f.quantile_at(l).unwrap()).collect();
                ys.iter()
                    .map(|&y| {
                        levels
                            .iter()
                            .zip(&qs)
                            .map(|(&t, &q)| check_score(t, y, q))
                            .sum::<f64>()
                    })
                    .sum::<f64>()
            })
            .collect();
        let best = crate::dist::argmin(&risk);
        assert!(shifts[best].abs() <= 0.05 + 1e-12, "argmin at {}", shifts[best]);
    }

    #[test]
    fn decomposition_base_rate_is_calibrated() {
        let outcomes: Vec<usize> = (0..1000).map(|i| usize::from(i % 4 == 0)).collect();
        let f = CategoricalDist::new(vec![0.75, 0.25]).unwrap();
        let forecasts = vec![f; 1000];
        let r = decompose_binned(&forecasts, &outcomes).unwrap();
        assert!(r.calibration_term.abs() < 1e-9);
        assert!((r.mean_loss - r.calibration_term - r.refinement_term).abs() < 1e-9);
        assert_eq!(r.bin_count, 1);
    }

    /// Direct empirical KL by nested loops, independent of the grouped path.
    fn brute_calibration(fs: &[f64], ys: &[usize]) -> f64 {
        let mut total = 0.0;
        let n = fs.len() as f64;
        for &v in &[0.2, 0.8] {
            let idx: Vec<usize> = (0..fs.len()).filter(|&i| fs[i] == v).collect();
            if idx.is_empty() {
                continue;
            }
            let q1 = idx.iter().filter(|&&i| ys[i] == 1).count() as f64 / idx.len() as f64;
            let mut kl = 0.0;
            if q1 > 0.0 {
                kl += q1 * (q1 / v).ln();
            }
            if q1 < 1.0 {
                kl += (1.0 - q1) * ((1.0 - q1) / (1.0 - v)).ln();
            }
            total += idx.len() as f64 / n * kl;
        }
        total
    }

    #[test]
    fn decomposition_matching_conditionals_small_calibration() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut ps = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..10_000 {
            let p: f64 = if rng.random::<bool>() { 0.2 } else { 0.8 };
            ps.push(p);
            ys.push(usize::from(rng.random::<f64>() < p));
        }
        let forecasts: Vec<CategoricalDist> = ps
            .iter()
            .map(|&p| CategoricalDist::new(vec![1.0 - p, p]).unwrap())
            .collect();
        let r = decompose_binned(&forecasts, &ys).unwrap();
        let brute = brute_calibration(&ps, &ys);
        assert!((r.calibration_term - brute).abs() < 1e-12);
        assert!(r.calibration_term <= 0.003, "{}", r.calibration_term);
    }

    #[test]
    fn decomposition_deterministic_data_zero_refinement() {
        let ys = vec![0, 1, 1, 0, 1];
        let forecasts: Vec<CategoricalDist> = ys
            .iter()
            .map(|&y| {
                let mut p = vec![0.0, 0.0];
                p[y] = 1.0;
                CategoricalDist::new(p).unwrap()
            })
            .collect();
        let r = decompose_binned(&forecasts, &ys).unwrap();
        assert_eq!(r.refinement_term, 0.0);
        assert_eq!(r.mean_loss, 0.0);
    }

    #[test]
    fn decomposition_rejects_bad_input() {
        let f = CategoricalDist::new(vec![0.5, 0.5]).unwrap();
        assert!(decompose_binned(&[], &[]).is_err());
        assert!(decompose_binned(&[f.clone()], &[0, 1]).is_err());
        assert!(decompose_binned(&[f], &[2]).is_err());
    }

    #[test]
    fn snapping_groups_continuous_forecasts() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let fs: Vec<CategoricalDist> = (0..500)
            .map(|_| {
                let p = rng.random::<f64>();
                CategoricalDist::new(vec![1.0 - p, p]).unwrap()
            })
            .collect();
        let ys: Vec<usize> = (0..500).map(|i| i % 2).collect();
        let snapped = snap_to_bins(&fs, 20).unwrap();
        let r = decompose_binned(&snapped, &ys).unwrap();
        assert!(r.bin_count <= 20);
        assert!((r.mean_loss - r.calibration_term - r.refinement_term).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn check_score_convex_in_forecast(
            tau in 0.001f64..0.999, y in -10.0f64..10.0,
            f1 in -10.0f64..10.0, f2 in -10.0f64..10.0, lam in 0.0f64..1.0,
        ) {
            let mixed = check_score(tau, y, lam * f1 + (1.0 - lam) * f2);
            let bound = lam * check_score(tau, y, f1) + (1.0 - lam) * check_score(tau, y, f2);
            prop_assert!(mixed <= bound + 1e-12);
        }

        #[test]
        fn check_score_zero_iff_equal(tau in 0.001f64..0.999, y in -10.0f64..10.0, f in -10.0f64..10.0) {
            let s = check_score(tau, y, f);
            prop_assert!(s >= 0.0);
            prop_assert_eq!(s == 0.0, y == f);
        }

        #[test]
        fn decomposition_identity(
            seed in 0u64..1000, n in 1usize..300, groups in 1usize..6, k in 2usize..5,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pool: Vec<CategoricalDist> = (0..groups)
                .map(|_| {
                    let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
                    CategoricalDist::from_weights(&w).unwrap()
                })
                .collect();
            let fs: Vec<CategoricalDist> = (0..n).map(|_| pool[rng.random_range(0..groups)].clone()).collect();
            let ys: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let r = decompose_binned(&fs, &ys).unwrap();
            prop_assert!((r.mean_loss - r.calibration_term - r.refinement_term).abs() < 1e-9);
            prop_assert!(r.calibration_term >= 0.0);
        }
    }
}
