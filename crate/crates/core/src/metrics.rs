//! Calibration diagnostics and point-accuracy metrics.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::dist::{validate_levels, CategoricalDist, Featurization, PredictiveDistribution};
use crate::error::{Error, Result};

/// Cells with fewer samples are excluded from binned diagnostics.
pub const MIN_BIN_COUNT: usize = 10;

/// Upper bound on the number of cells of the parameter-binning grid.
pub const MAX_PARAM_CELLS: usize = 125;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub nominal_level: f64,
    pub empirical_freq: f64,
    pub count: usize,
}

/// Nominal versus observed frequencies; bin counts sum to the sample size.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReliabilityTable {
    pub bins: Vec<ReliabilityBin>,
}

impl ReliabilityTable {
    pub fn total_count(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    /// Empirical frequency at the bin whose nominal level is closest to `level`.
    pub fn freq_at(&self, level: f64) -> Option<f64> {
        self.bins
            .iter()
            .min_by(|a, b| {
                (a.nominal_level - level)
                    .abs()
                    .total_cmp(&(b.nominal_level - level).abs())
            })
            .map(|b| b.empirical_freq)
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::domain(format!("length mismatch: {a} vs {b}")));
    }
    if a == 0 {
        return Err(Error::domain("empty input"));
    }
    Ok(())
}

/// Observed coverage `P(y <= F^{-1}(p))` at each level.
pub fn quantile_coverage(
    dists: &[PredictiveDistribution],
    ys: &[f64],
    levels: &[f64],
) -> Result<Vec<f64>> {
    check_lengths(dists.len(), ys.len())?;
    validate_levels(levels)?;
    let mut hits = vec![0usize; levels.len()];
    for (d, &y) in dists.iter().zip(ys) {
        for (h, &p) in hits.iter_mut().zip(levels) {
            if y <= d.quantile_at(p)? {
                *h += 1;
            }
        }
    }
    let n = ys.len() as f64;
    Ok(hits.into_iter().map(|h| h as f64 / n).collect())
}

/// `Σ_j (p_j - p̂_j)²` where `p̂_j` is the observed coverage of level `p_j`.
pub fn quantile_calibration_error(
    dists: &[PredictiveDistribution],
    ys: &[f64],
    levels: &[f64],
) -> Result<f64> {
    let cov = quantile_coverage(dists, ys, levels)?;
    Ok(levels
        .iter()
        .zip(&cov)
        .map(|(p, c)| (p - c).powi(2))
        .sum())
}

/// Reliability table of quantile coverage. Each bin counts the samples newly
/// covered at its level; a final bin at level 1 holds the remainder.
pub fn quantile_reliability(
    dists: &[PredictiveDistribution],
    ys: &[f64],
    levels: &[f64],
) -> Result<ReliabilityTable> {
    let cov = quantile_coverage(dists, ys, levels)?;
    let n = ys.len();
    let mut bins = Vec::with_capacity(levels.len() + 1);
    let mut covered = 0usize;
    for (&p, &c) in levels.iter().zip(&cov) {
        let now = (c * n as f64).round() as usize;
        bins.push(ReliabilityBin {
            nominal_level: p,
            empirical_freq: c,
            count: now.saturating_sub(covered),
        });
        covered = covered.max(now);
    }
    bins.push(ReliabilityBin {
        nominal_level: 1.0,
        empirical_freq: 1.0,
        count: n - covered,
    });
    Ok(ReliabilityTable { bins })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    /// Bin index along each binned coordinate.
    pub cell: Vec<usize>,
    pub count: usize,
    pub table: ReliabilityTable,
    pub calibration_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionCalibrationReport {
    /// Featurization coordinates the grid was built on.
    pub coordinates: Vec<usize>,
    pub cells: Vec<CellReport>,
    /// Cells below [`MIN_BIN_COUNT`], with their sizes.
    pub excluded: Vec<(Vec<usize>, usize)>,
    /// Count-weighted mean calibration error over retained cells.
    pub aggregate: f64,
}

/// Coordinates used for parameter binning: all of them when the grid fits
/// in [`MAX_PARAM_CELLS`], otherwise an evenly spaced subset that does.
pub fn binning_coordinates(dim: usize, param_bins: usize) -> Vec<usize> {
    if param_bins <= 1 || dim == 0 {
        return (0..dim.min(1)).collect();
    }
    let mut k = 0usize;
    while k < dim && param_bins.pow((k + 1) as u32) <= MAX_PARAM_CELLS {
        k += 1;
    }
    let k = k.max(1);
    if k >= dim {
        return (0..dim).collect();
    }
    if k == 1 {
        return vec![dim / 2];
    }
    (0..k)
        .map(|i| (i * (dim - 1) + (k - 1) / 2) / (k - 1))
        .collect()
}

/// Checks calibration conditional on the forecast itself: forecasts are
/// grouped by a uniform grid over their featurization and quantile
/// calibration is measured inside each group.
pub fn distribution_calibration_diagnostic(
    featurizations: &[Featurization],
    dists: &[PredictiveDistribution],
    ys: &[f64],
    levels: &[f64],
    param_bins: usize,
) -> Result<DistributionCalibrationReport> {
    check_lengths(featurizations.len(), dists.len())?;
    check_lengths(dists.len(), ys.len())?;
    validate_levels(levels)?;
    if param_bins == 0 {
        return Err(Error::domain("param_bins must be at least 1"));
    }
    let dim = featurizations[0].dim();
    if featurizations.iter().any(|f| f.dim() != dim) {
        return Err(Error::domain("featurizations differ in dimension"));
    }
    let coords = binning_coordinates(dim, param_bins);
    let ranges: Vec<(f64, f64)> = coords
        .iter()
        .map(|&c| {
            featurizations.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), f| {
                (lo.min(f.params[c]), hi.max(f.params[c]))
            })
        })
        .collect();

    let mut groups: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    for (i, f) in featurizations.iter().enumerate() {
        let cell: Vec<usize> = coords
            .iter()
            .zip(&ranges)
            .map(|(&c, &(lo, hi))| {
                if hi > lo {
                    let t = (f.params[c] - lo) / (hi - lo);
                    ((t * param_bins as f64).floor() as usize).min(param_bins - 1)
                } else {
                    0
                }
            })
            .collect();
        groups.entry(cell).or_default().push(i);
    }

    let mut cells = Vec::new();
    let mut excluded = Vec::new();
    let mut weighted = 0.0;
    let mut retained = 0usize;
    for (cell, idx) in groups {
        if idx.len() < MIN_BIN_COUNT {
            excluded.push((cell, idx.len()));
            continue;
        }
        let ds: Vec<PredictiveDistribution> = idx.iter().map(|&i| dists[i].clone()).collect();
        let yy: Vec<f64> = idx.iter().map(|&i| ys[i]).collect();
        let err = quantile_calibration_error(&ds, &yy, levels)?;
        let table = quantile_reliability(&ds, &yy, levels)?;
        weighted += err * idx.len() as f64;
        retained += idx.len();
        cells.push(CellReport {
            cell,
            count: idx.len(),
            table,
            calibration_error: err,
        });
    }
    if retained == 0 {
        return Err(Error::domain("every parameter cell fell below the minimum occupancy"));
    }
    Ok(DistributionCalibrationReport {
        coordinates: coords,
        cells,
        excluded,
        aggregate: weighted / retained as f64,
    })
}

/// Confidence-binned reliability of the top-class probability.
pub fn confidence_reliability(
    dists: &[CategoricalDist],
    labels: &[usize],
    bins: usize,
) -> Result<ReliabilityTable> {
    check_lengths(dists.len(), labels.len())?;
    if bins == 0 {
        return Err(Error::domain("bins must be at least 1"));
    }
    let mut conf = vec![0.0; bins];
    let mut acc = vec![0.0; bins];
    let mut count = vec![0usize; bins];
    for (d, &y) in dists.iter().zip(labels) {
        let top = d.mode();
        let c = d.prob(top);
        let b = ((c * bins as f64).floor() as usize).min(bins - 1);
        conf[b] += c;
        acc[b] += if top == y { 1.0 } else { 0.0 };
        count[b] += 1;
    }
    Ok(ReliabilityTable {
        bins: (0..bins)
            .map(|b| {
                let n = count[b].max(1) as f64;
                ReliabilityBin {
                    nominal_level: if count[b] > 0 { conf[b] / n } else { (b as f64 + 0.5) / bins as f64 },
                    empirical_freq: acc[b] / n,
                    count: count[b],
                }
            })
            .collect(),
    })
}

/// Expected calibration error `Σ_b (n_b / n) |acc_b - conf_b|`.
pub fn ece_classification(dists: &[CategoricalDist], labels: &[usize], bins: usize) -> Result<f64> {
    let table = confidence_reliability(dists, labels, bins)?;
    let n = labels.len() as f64;
    Ok(table
        .bins
        .iter()
        .filter(|b| b.count > 0)
        .map(|b| b.count as f64 / n * (b.empirical_freq - b.nominal_level).abs())
        .sum())
}

/// One-vs-rest reliability over every class probability.
pub fn class_probability_reliability(
    dists: &[CategoricalDist],
    labels: &[usize],
    bins: usize,
) -> Result<ReliabilityTable> {
    check_lengths(dists.len(), labels.len())?;
    if bins == 0 {
        return Err(Error::domain("bins must be at least 1"));
    }
    let mut pred = vec![0.0; bins];
    let mut hit = vec![0.0; bins];
    let mut count = vec![0usize; bins];
    for (d, &y) in dists.iter().zip(labels) {
        for (k, &p) in d.probs().iter().enumerate() {
            let b = ((p * bins as f64).floor() as usize).min(bins - 1);
            pred[b] += p;
            hit[b] += if k == y { 1.0 } else { 0.0 };
            count[b] += 1;
        }
    }
    Ok(ReliabilityTable {
        bins: (0..bins)
            .map(|b| {
                let n = count[b].max(1) as f64;
                ReliabilityBin {
                    nominal_level: if count[b] > 0 { pred[b] / n } else { (b as f64 + 0.5) / bins as f64 },
                    empirical_freq: hit[b] / n,
                    count: count[b],
                }
            })
            .collect(),
    })
}

/// Classification calibration error in the `Σ_j (p_j - p̂_j)²` form: every
/// class probability is binned, and each bin with at least
/// [`MIN_BIN_COUNT`] entries contributes the squared gap between its mean
/// predicted probability and its observed frequency.
pub fn classification_calibration_error(
    dists: &[CategoricalDist],
    labels: &[usize],
    bins: usize,
) -> Result<f64> {
    let table = class_probability_reliability(dists, labels, bins)?;
    Ok(table
        .bins
        .iter()
        .filter(|b| b.count >= MIN_BIN_COUNT)
        .map(|b| (b.nominal_level - b.empirical_freq).powi(2))
        .sum())
}

/// Binned ℓ1 calibration error of binary probabilities:
/// `Σ_b (n_b / n) |mean p_b - freq_b|` over `bins` uniform bins.
pub fn binary_calibration_error_l1(probs: &[f64], labels: &[bool], bins: usize) -> Result<f64> {
    check_lengths(probs.len(), labels.len())?;
    if bins == 0 {
        return Err(Error::domain("bins must be at least 1"));
    }
    let mut sp = vec![0.0; bins];
    let mut sy = vec![0.0; bins];
    let mut count = vec![0usize; bins];
    for (&p, &y) in probs.iter().zip(labels) {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::domain(format!("probability {p} outside [0, 1]")));
        }
        let b = ((p * bins as f64).floor() as usize).min(bins - 1);
        sp[b] += p;
        sy[b] += if y { 1.0 } else { 0.0 };
        count[b] += 1;
    }
    let n = probs.len() as f64;
    Ok((0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| (sp[b] - sy[b]).abs() / n)
        .sum())
}

pub fn accuracy(dists: &[CategoricalDist], labels: &[usize]) -> Result<f64> {
    check_lengths(dists.len(), labels.len())?;
    let hits = dists
        .iter()
        .zip(labels)
        .filter(|(d, &y)| d.mode() == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaeMape {
    pub mae: f64,
    pub mape: f64,
    /// Samples with `y = 0`, left out of the MAPE average.
    pub zeros_excluded: usize,
}

pub fn mae_mape(point_preds: &[f64], ys: &[f64]) -> Result<MaeMape> {
    check_lengths(point_preds.len(), ys.len())?;
    let n = ys.len() as f64;
    let mae = point_preds
        .iter()
        .zip(ys)
        .map(|(p, y)| (y - p).abs())
        .sum::<f64>()
        / n;
    let mut ape = 0.0;
    let mut kept = 0usize;
    for (p, &y) in point_preds.iter().zip(ys) {
        if y != 0.0 {
            ape += (y - p).abs() / y.abs();
            kept += 1;
        }
    }
    if kept == 0 {
        return Err(Error::domain("MAPE is undefined when every target is zero"));
    }
    Ok(MaeMape {
        mae,
        mape: ape / kept as f64,
        zeros_excluded: ys.len() - kept,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{featurize, normal_cdf, GaussianDist, DECILES};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gauss(mu: f64, sigma: f64) -> PredictiveDistribution {
        GaussianDist::new(mu, sigma).unwrap().into()
    }

    /// Heteroscedastic truth: `y ~ N(mu(x), sd(x))` with `x ~ U[0,1]`.
    fn hetero(n: usize, seed: u64, shrink: f64) -> (Vec<PredictiveDistribution>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dists = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let x: f64 = rng.random();
            let mu = x + 0.5 * (4.0 * std::f64::consts::PI * x).sin();
            let sd = 0.05 + 0.5 * x;
            let e: f64 = rng.sample(StandardNormal);
            ys.push(mu + sd * e);
            dists.push(gauss(mu, shrink * sd));
        }
        (dists, ys)
    }

    /// Expected coverage of a forecast N(mu, s·sd) at nominal p when the
    /// truth is N(mu, sd): Φ(s · z_p).
    fn misscaled_coverage(p: f64, s: f64) -> f64 {
        normal_cdf(s * crate::dist::oracle::probit(p))
    }

    #[test]
    fn calibrated_forecasts_have_small_error() {
        let (d, y) = hetero(50_000, 1, 1.0);
        let e = quantile_calibration_error(&d, &y, &DECILES).unwrap();
        assert!(e <= 0.002, "{e}");
    }

    #[test]
    fn shrunk_forecasts_match_normal_oracle() {
        let expected: f64 = DECILES
            .iter()
            .map(|&p| (p - misscaled_coverage(p, 0.5)).powi(2))
            .sum();
        assert!((expected - 0.112821).abs() < 1e-5, "oracle {expected}");
        let (d, y) = hetero(50_000, 2, 0.5);
        let e = quantile_calibration_error(&d, &y, &DECILES).unwrap();
        assert!((e - expected).abs() < 0.01, "{e} vs {expected}");
        assert!((misscaled_coverage(0.9, 0.5) - 0.739).abs() < 1e-3);
    }

    #[test]
    fn single_sample_below_median() {
        let e = quantile_calibration_error(&[gauss(0.0, 1.0)], &[-1.0], &[0.5]).unwrap();
        // y = -1 is below the median, so coverage at 0.5 is 1: (0.5 - 1)^2
        assert_eq!(e, 0.25);
        let e = quantile_calibration_error(&[gauss(0.0, 1.0)], &[1.0], &[0.5]).unwrap();
        assert_eq!(e, 0.25);
        assert!(quantile_calibration_error(&[], &[], &[0.5]).is_err());
    }

    #[test]
    fn monotone_transform_invariance() {
        use crate::dist::QuantileGridDist;
        let (d, y) = hetero(2_000, 3, 0.7);
        let base = quantile_calibration_error(&d, &y, &DECILES).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..20 {
            let a = rng.random_range(0.1..3.0);
            let b = rng.random_range(-2.0..2.0);
            let c = rng.random_range(0.0..1.0);
            let g = |v: f64| a * v + b + c * v.powi(3);
            let td: Vec<PredictiveDistribution> = d
                .iter()
                .map(|dist| {
                    let vals: Vec<f64> = DECILES.iter().map(|&l| g(dist.quantile_at(l).unwrap())).collect();
                    QuantileGridDist::new(DECILES.to_vec(), vals).unwrap().into()
                })
                .collect();
            let ty: Vec<f64> = y.iter().map(|&v| g(v)).collect();
            let e = quantile_calibration_error(&td, &ty, &DECILES).unwrap();
            assert!((e - base).abs() < 1e-12);
        }
    }

    #[test]
    fn reliability_counts_sum_to_n() {
        let (d, y) = hetero(1_000, 4, 0.5);
        let t = quantile_reliability(&d, &y, &DECILES).unwrap();
        assert_eq!(t.total_count(), 1_000);
        assert!(t.bins.iter().all(|b| (0.0..=1.0).contains(&b.empirical_freq)));
    }

    #[test]
    fn diagnostic_reduces_to_plain_error_with_one_bin() {
        let (d, y) = hetero(3_000, 5, 0.6);
        let f: Vec<Featurization> = d.iter().map(|x| featurize(x, &DECILES).unwrap()).collect();
        let r = distribution_calibration_diagnostic(&f, &d, &y, &DECILES, 1).unwrap();
        let plain = quantile_calibration_error(&d, &y, &DECILES).unwrap();
        assert_eq!(r.aggregate, plain);
        assert_eq!(r.cells.len(), 1);
    }

    #[test]
    fn diagnostic_small_for_correct_forecasts() {
        let (d, y) = hetero(50_000, 6, 1.0);
        let f: Vec<Featurization> = d.iter().map(|x| featurize(x, &DECILES).unwrap()).collect();
        let r = distribution_calibration_diagnostic(&f, &d, &y, &DECILES, 5).unwrap();
        assert!(r.aggregate <= 0.01, "{}", r.aggregate);
        assert!(r.cells.len() <= MAX_PARAM_CELLS);
    }

    #[test]
    fn diagnostic_shows_misscaled_coverage_in_every_cell() {
        let (d, y) = hetero(50_000, 7, 0.5);
        let f: Vec<Featurization> = d.iter().map(|x| featurize(x, &DECILES).unwrap()).collect();
        let r = distribution_calibration_diagnostic(&f, &d, &y, &DECILES, 5).unwrap();
        let want = misscaled_coverage(0.9, 0.5);
        for cell in r.cells.iter().filter(|c| c.count >= 500) {
            let got = cell.table.freq_at(0.9).unwrap();
            assert!((got - want).abs() < 0.02 + 3.0 * (0.25 / cell.count as f64).sqrt(), "{got}");
        }
        // large cells alone must be tight
        let big: Vec<&CellReport> = r.cells.iter().filter(|c| c.count >= 5_000).collect();
        assert!(!big.is_empty());
        for cell in big {
            assert!((cell.table.freq_at(0.9).unwrap() - want).abs() < 0.02);
        }
    }

    #[test]
    fn binning_coordinates_respect_cap() {
        assert_eq!(binning_coordinates(2, 5), vec![0, 1]);
        assert_eq!(binning_coordinates(9, 5), vec![0, 4, 8]);
        assert_eq!(binning_coordinates(9, 1), vec![0]);
        assert_eq!(binning_coordinates(9, 200), vec![4]);
        for d in 1..12 {
            for b in 1..8 {
                let c = binning_coordinates(d, b);
                assert!(b.pow(c.len() as u32) <= MAX_PARAM_CELLS.max(b));
            }
        }
    }

    #[test]
    fn tiny_cells_are_excluded() {
        let d = vec![gauss(0.0, 1.0); 25];
        let mut f: Vec<Featurization> = d.iter().map(|x| featurize(x, &DECILES).unwrap()).collect();
        for item in f.iter_mut().take(3) {
            item.params.iter_mut().for_each(|v| *v += 10.0);
        }
        let y = vec![0.0; 25];
        let r = distribution_calibration_diagnostic(&f, &d, &y, &DECILES, 5).unwrap();
        assert_eq!(r.excluded.len(), 1);
        assert_eq!(r.excluded[0].1, 3);
    }

    fn cat(p: &[f64]) -> CategoricalDist {
        CategoricalDist::new(p.to_vec()).unwrap()
    }

    #[test]
    fn ece_examples() {
        let d = vec![cat(&[1.0, 0.0]), cat(&[0.0, 1.0])];
        assert_eq!(ece_classification(&d, &[0, 1], 10).unwrap(), 0.0);
        assert_eq!(ece_classification(&d, &[1, 0], 10).unwrap(), 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 10_000;
        let labels: Vec<usize> = (0..n).map(|_| usize::from(rng.random::<f64>() >= 0.7)).collect();
        let d = vec![cat(&[0.7, 0.3]); n];
        let e = ece_classification(&d, &labels, 10).unwrap();
        // one occupied bin: |acc - 0.7| has sd sqrt(0.21 / n) ≈ 0.0046
        assert!(e <= 0.02, "{e}");
    }

    #[test]
    fn ece_within_binomial_envelope_for_calibrated_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 20_000;
        let bins = 10;
        let mut d = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let p: f64 = rng.random_range(0.5..1.0);
            d.push(cat(&[p, 1.0 - p]));
            labels.push(usize::from(rng.random::<f64>() >= p));
        }
        let e = ece_classification(&d, &labels, bins).unwrap();
        // Σ_b (n_b/n) E|acc_b - conf_b| ≤ Σ_b (n_b/n) sqrt(1/(4 n_b)) ≤ sqrt(B / (4n)); 3x slack
        let envelope = 3.0 * (bins as f64 / (4.0 * n as f64)).sqrt();
        assert!(e <= envelope, "{e} > {envelope}");
    }

    #[test]
    fn classification_error_zero_for_exact_frequencies() {
        let d = vec![cat(&[0.5, 0.5]); 20];
        let labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
        assert!(classification_calibration_error(&d, &labels, 10).unwrap() < 1e-15);
        let sure = vec![cat(&[1.0, 0.0]); 20];
        let wrong = vec![1usize; 20];
        // two bins with gap 1 each
        assert!((classification_calibration_error(&sure, &wrong, 10).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn binary_l1_examples() {
        assert_eq!(binary_calibration_error_l1(&[1.0, 0.0], &[true, false], 20).unwrap(), 0.0);
        assert_eq!(binary_calibration_error_l1(&[1.0, 0.0], &[false, true], 20).unwrap(), 1.0);
        let e = binary_calibration_error_l1(&[0.5; 4], &[true, true, true, false], 20).unwrap();
        assert!((e - 0.25).abs() < 1e-15);
        assert!(binary_calibration_error_l1(&[1.5], &[true], 20).is_err());
    }

    #[test]
    fn mae_mape_examples() {
        let r = mae_mape(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!((r.mae, r.mape), (0.0, 0.0));
        let r = mae_mape(&[2.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!((r.mae, r.mape), (0.5, 0.5));
        let r = mae_mape(&[1.0, 1.0], &[0.0, 1.0]).unwrap();
        assert_eq!((r.mae, r.mape, r.zeros_excluded), (0.5, 0.0, 1));
        assert!(mae_mape(&[1.0], &[0.0]).is_err());
    }
}
