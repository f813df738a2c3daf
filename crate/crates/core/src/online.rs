//! Online recalibration of a binary event stream.
//!
//! A calibrated forecaster plays grid points `i/N` by regret matching over
//! swap regrets measured with the squared loss. The bucketed wrapper routes
//! each raw probability to one of `M` such forecasters by the interval it
//! falls in, and a [`RegretLedger`] records the run so every calibration
//! and regret quantity can be recomputed from history.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Power-iteration stopping tolerance (L1 change between iterates).
pub const STATIONARY_TOL: f64 = 1e-10;
pub const STATIONARY_MAX_ITERS: usize = 10_000;

/// `(y - p)²`.
pub fn l2_loss(p: f64, y: bool) -> f64 {
    let y = if y { 1.0 } else { 0.0 };
    (y - p) * (y - p)
}

/// 1 when thresholding `p` at 0.5 gets `y` wrong.
pub fn mc_loss(p: f64, y: bool) -> f64 {
    if (p >= 0.5) == y {
        0.0
    } else {
        1.0
    }
}

/// `|ρ - p|`.
pub fn l1_distance(rho: f64, p: f64) -> f64 {
    (rho - p).abs()
}

/// `(ρ - p)²`.
pub fn l2_distance(rho: f64, p: f64) -> f64 {
    (rho - p) * (rho - p)
}

/// Forecaster over `{0, 1/N, …, 1}` with small internal regret.
#[derive(Debug, Clone)]
pub struct CalibratedForecasterState {
    n: usize,
    /// `(N+1) × (N+1)`, row-major: cumulative gain from having played `j`
    /// whenever `i` was played.
    swap_regret: Vec<f64>,
    play_counts: Vec<u64>,
    outcome_sums: Vec<f64>,
    rng: ChaCha8Rng,
    /// Last stationary distribution, used to warm-start the next one.
    mixed: Vec<f64>,
    pending: Option<usize>,
    fallbacks: u64,
    iterations: u64,
}

impl CalibratedForecasterState {
    pub fn new(n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("grid resolution N must be at least 1"));
        }
        let k = n + 1;
        Ok(Self {
            n,
            swap_regret: vec![0.0; k * k],
            play_counts: vec![0; k],
            outcome_sums: vec![0.0; k],
            rng: ChaCha8Rng::seed_from_u64(seed),
            mixed: vec![1.0 / k as f64; k],
            pending: None,
            fallbacks: 0,
            iterations: 0,
        })
    }

    pub fn resolution(&self) -> usize {
        self.n
    }

    pub fn swap_regret(&self, i: usize, j: usize) -> f64 {
        self.swap_regret[i * (self.n + 1) + j]
    }

    pub fn play_counts(&self) -> &[u64] {
        &self.play_counts
    }

    pub fn outcome_sums(&self) -> &[f64] {
        &self.outcome_sums
    }

    /// `ρ_T(i/N)`, or `None` if `i/N` was never played.
    pub fn empirical_rate(&self, i: usize) -> Option<f64> {
        (self.play_counts[i] > 0).then(|| self.outcome_sums[i] / self.play_counts[i] as f64)
    }

    /// How many predictions fell back to the uniform distribution.
    pub fn fallbacks(&self) -> u64 {
        self.fallbacks
    }

    /// Total vector-matrix products spent on stationary distributions.
    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    /// Distribution the next prediction is drawn from.
    pub fn mixed_strategy(&self) -> &[f64] {
        &self.mixed
    }

    /// Stationary distribution of `P = I + (R⁺ - D)/μ`, where `R⁺` holds
    /// the positive swap regrets, `D` their row sums and `μ` twice the
    /// largest row sum, reached by powering `P` from the previous
    /// distribution. A few plain sweeps usually suffice; otherwise `P` is
    /// squared repeatedly so the iterate advances `2^s` steps at a time.
    /// Returns false if neither converged within the sweep budget.
    fn update_mixed(&mut self) -> bool {
        let k = self.n + 1;
        let pos: Vec<f64> = self.swap_regret.iter().map(|r| r.max(0.0)).collect();
        let rows: Vec<f64> = (0..k).map(|i| pos[i * k..(i + 1) * k].iter().sum()).collect();
        let mu = 2.0 * rows.iter().copied().fold(0.0, f64::max);
        if mu <= 0.0 {
            // no regret anywhere: every distribution is stationary
            return true;
        }
        let mut p = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                p[i * k + j] = pos[i * k + j] / mu;
            }
            p[i * k + i] += 1.0 - rows[i] / mu;
        }
        let mut q = self.mixed.clone();
        let mut next = vec![0.0; k];
        let mut step = |q: &[f64], m: &[f64], out: &mut [f64]| -> f64 {
            out.fill(0.0);
            for (i, &qi) in q.iter().enumerate() {
                if qi != 0.0 {
                    for (o, v) in out.iter_mut().zip(&m[i * k..(i + 1) * k]) {
                        *o += qi * v;
                    }
                }
            }
            let s: f64 = out.iter().sum();
            out.iter_mut().for_each(|v| *v /= s);
            self.iterations += 1;
            out.iter().zip(q).map(|(a, b)| (a - b).abs()).sum()
        };
        const PLAIN_SWEEPS: usize = 64;
        let mut sweeps = 0;
        while sweeps < PLAIN_SWEEPS {
            let d = step(&q, &p, &mut next);
            sweeps += 1;
            std::mem::swap(&mut q, &mut next);
            if d < STATIONARY_TOL {
                self.mixed = q;
                return true;
            }
        }
        let mut sq = vec![0.0; k * k];
        while sweeps < STATIONARY_MAX_ITERS {
            // p <- p·p, rows renormalized against rounding drift
            for i in 0..k {
                let row = &mut sq[i * k..(i + 1) * k];
                row.fill(0.0);
                for l in 0..k {
                    let a = p[i * k + l];
                    if a != 0.0 {
                        for (o, v) in row.iter_mut().zip(&p[l * k..(l + 1) * k]) {
                            *o += a * v;
                        }
                    }
                }
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= s);
            }
            std::mem::swap(&mut p, &mut sq);
            let d = step(&q, &p, &mut next);
            sweeps += 2;
            std::mem::swap(&mut q, &mut next);
            if d < STATIONARY_TOL {
                self.mixed = q;
                return true;
            }
            if sweeps > PLAIN_SWEEPS + 2 * 128 {
                break;
            }
        }
        false
    }

    fn choose<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<usize> {
        if self.pending.is_some() {
            return Err(Error::Protocol("predict called twice without an update".into()));
        }
        let k = self.n + 1;
        if !self.update_mixed() {
            self.fallbacks += 1;
            self.mixed = vec![1.0 / k as f64; k];
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = k - 1;
        for (i, &p) in self.mixed.iter().enumerate() {
            acc += p;
            if u < acc {
                pick = i;
                break;
            }
        }
        self.pending = Some(pick);
        Ok(pick)
    }

    /// Draws the next grid index using the state's own generator.
    pub fn predict_index(&mut self) -> Result<usize> {
        let mut rng = self.rng.clone();
        let i = self.choose(&mut rng);
        self.rng = rng;
        i
    }

    /// Draws the next grid index from an external generator.
    pub fn predict_index_with<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<usize> {
        self.choose(rng)
    }

    /// The next forecast, `i/N`.
    pub fn predict(&mut self) -> Result<f64> {
        Ok(self.predict_index()? as f64 / self.n as f64)
    }

    /// Records the outcome for the pending prediction.
    pub fn update(&mut self, y: bool) -> Result<()> {
        let Some(i) = self.pending.take() else {
            return Err(Error::Protocol("update called without a pending prediction".into()));
        };
        let k = self.n + 1;
        let n = self.n as f64;
        let li = l2_loss(i as f64 / n, y);
        for j in 0..k {
            self.swap_regret[i * k + j] += li - l2_loss(j as f64 / n, y);
        }
        self.play_counts[i] += 1;
        if y {
            self.outcome_sums[i] += 1.0;
        }
        Ok(())
    }
}

/// Index of the half-open interval `[j/M, (j+1)/M)` holding `p`, with the
/// last interval closed at 1.
pub fn bucket_of(p: f64, m: usize) -> usize {
    ((p * m as f64).floor() as usize).min(m - 1)
}

/// One row of a run trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerStep {
    pub p_raw: f64,
    pub bucket: usize,
    /// Grid index of the forecast; the forecast is `out / N`.
    pub out: usize,
    pub y: bool,
}

/// Full history of an online run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretLedger {
    pub n: usize,
    pub steps: Vec<LedgerStep>,
}

impl RegretLedger {
    pub fn new(n: usize) -> Self {
        Self { n, steps: Vec::new() }
    }

    pub fn push(&mut self, p_raw: f64, bucket: usize, out: usize, y: bool) -> Result<()> {
        if out > self.n {
            return Err(Error::domain(format!("grid index {out} exceeds N = {}", self.n)));
        }
        self.steps.push(LedgerStep { p_raw, bucket, out, y });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn forecast(&self, s: &LedgerStep) -> f64 {
        s.out as f64 / self.n as f64
    }

    /// Play counts `T_i` and positive-outcome counts per grid point.
    fn tallies<'a>(&self, steps: impl Iterator<Item = &'a LedgerStep>) -> (Vec<u64>, Vec<u64>) {
        let mut plays = vec![0u64; self.n + 1];
        let mut ones = vec![0u64; self.n + 1];
        for s in steps {
            plays[s.out] += 1;
            ones[s.out] += u64::from(s.y);
        }
        (plays, ones)
    }

    fn cal_error_of<'a>(&self, steps: impl Iterator<Item = &'a LedgerStep>, dist: &impl Fn(f64, f64) -> f64) -> f64 {
        let (plays, ones) = self.tallies(steps);
        let total: u64 = plays.iter().sum();
        if total == 0 {
            return 0.0;
        }
        (0..=self.n)
            .filter(|&i| plays[i] > 0)
            .map(|i| {
                let rho = ones[i] as f64 / plays[i] as f64;
                dist(rho, i as f64 / self.n as f64) * plays[i] as f64 / total as f64
            })
            .sum()
    }

    /// `C_{T,ℓ} = Σ_i ℓ(ρ_T(i/N), i/N) · T_i / T`.
    pub fn calibration_error(&self, dist: impl Fn(f64, f64) -> f64) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::domain("ledger is empty"));
        }
        Ok(self.cal_error_of(self.steps.iter(), &dist))
    }

    /// The swap-regret matrix `R_ij = Σ_t 𝕀{p_t = i/N}(ℓ(i/N, y_t) - ℓ(j/N, y_t))`.
    pub fn swap_regrets(&self, loss: impl Fn(f64, bool) -> f64) -> Vec<Vec<f64>> {
        let (plays, ones) = self.tallies(self.steps.iter());
        let n = self.n as f64;
        (0..=self.n)
            .map(|i| {
                let (t1, t0) = (ones[i] as f64, (plays[i] - ones[i]) as f64);
                (0..=self.n)
                    .map(|j| {
                        let (pi, pj) = (i as f64 / n, j as f64 / n);
                        t1 * (loss(pi, true) - loss(pj, true)) + t0 * (loss(pi, false) - loss(pj, false))
                    })
                    .collect()
            })
            .collect()
    }

    /// `R^int_T = max_{i,j} R_ij`; never negative since `R_ii = 0`.
    pub fn internal_regret(&self, loss: impl Fn(f64, bool) -> f64) -> f64 {
        self.swap_regrets(loss)
            .iter()
            .flatten()
            .copied()
            .fold(0.0, f64::max)
    }

    /// Mean per-step loss of the forecasts minus that of the raw stream.
    pub fn external_regret(&self, loss: impl Fn(f64, bool) -> f64) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::domain("ledger is empty"));
        }
        let d: f64 = self
            .steps
            .iter()
            .map(|s| loss(self.forecast(s), s.y) - loss(s.p_raw, s.y))
            .sum();
        Ok(d / self.len() as f64)
    }

    /// The merged calibration error and the route-weighted average of the
    /// per-bucket errors, which bounds it for convex `ℓ`.
    pub fn merged_calibration_check(&self, dist: impl Fn(f64, f64) -> f64) -> Result<MergedCheck> {
        let merged = self.calibration_error(&dist)?;
        let buckets = self.steps.iter().map(|s| s.bucket).max().unwrap_or(0) + 1;
        let total = self.len() as f64;
        let mut weighted_sum = 0.0;
        for j in 0..buckets {
            let count = self.steps.iter().filter(|s| s.bucket == j).count();
            if count > 0 {
                let c = self.cal_error_of(self.steps.iter().filter(|s| s.bucket == j), &dist);
                weighted_sum += count as f64 / total * c;
            }
        }
        Ok(MergedCheck { merged, weighted_sum })
    }

    pub fn write_trace_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "p_raw", "bucket", "p_out", "y"])?;
        for (t, s) in self.steps.iter().enumerate() {
            w.write_record([
                (t + 1).to_string(),
                s.p_raw.to_string(),
                s.bucket.to_string(),
                self.forecast(s).to_string(),
                u8::from(s.y).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self, m: usize, fallbacks: u64) -> Result<OnlineSummary> {
        let c_l1 = self.calibration_error(l1_distance)?;
        let c_l2 = self.calibration_error(l2_distance)?;
        let merged = self.merged_calibration_check(l1_distance)?;
        Ok(OnlineSummary {
            n: self.n,
            m,
            t: self.len(),
            c_l1,
            c_l2,
            internal_regret_l2: self.internal_regret(l2_loss),
            internal_regret_mc: self.internal_regret(mc_loss),
            external_regret_l2: self.external_regret(l2_loss)?,
            external_regret_mc: self.external_regret(mc_loss)?,
            merged_l1: merged.merged,
            weighted_l1: merged.weighted_sum,
            fallbacks,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergedCheck {
    pub merged: f64,
    pub weighted_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineSummary {
    pub n: usize,
    pub m: usize,
    pub t: usize,
    pub c_l1: f64,
    pub c_l2: f64,
    pub internal_regret_l2: f64,
    pub internal_regret_mc: f64,
    /// Per step.
    pub external_regret_l2: f64,
    /// Per step.
    pub external_regret_mc: f64,
    pub merged_l1: f64,
    pub weighted_l1: f64,
    pub fallbacks: u64,
}

impl OnlineSummary {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(serde_json::to_string_pretty(self)?.as_bytes())?;
        Ok(())
    }
}

/// `M` calibrated forecasters, one per raw-probability interval, sharing
/// one generator.
#[derive(Debug, Clone)]
pub struct BucketedRecalState {
    sub: Vec<CalibratedForecasterState>,
    route_counts: Vec<u64>,
    rng: ChaCha8Rng,
    ledger: RegretLedger,
}

impl BucketedRecalState {
    pub fn new(n: usize, m: usize, seed: u64) -> Result<Self> {
        if m == 0 {
            return Err(Error::domain("bucket count M must be at least 1"));
        }
        let sub = (0..m)
            .map(|_| CalibratedForecasterState::new(n, seed))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            sub,
            route_counts: vec![0; m],
            rng: ChaCha8Rng::seed_from_u64(seed),
            ledger: RegretLedger::new(n),
        })
    }

    pub fn buckets(&self) -> usize {
        self.sub.len()
    }

    pub fn resolution(&self) -> usize {
        self.ledger.n
    }

    pub fn route_counts(&self) -> &[u64] {
        &self.route_counts
    }

    pub fn sub_forecaster(&self, j: usize) -> &CalibratedForecasterState {
        &self.sub[j]
    }

    pub fn ledger(&self) -> &RegretLedger {
        &self.ledger
    }

    pub fn into_ledger(self) -> RegretLedger {
        self.ledger
    }

    pub fn fallbacks(&self) -> u64 {
        self.sub.iter().map(|s| s.fallbacks()).sum()
    }

    /// Forecast for a raw probability, before its outcome is known.
    pub fn predict(&mut self, p_raw: f64) -> Result<(usize, f64)> {
        if !(0.0..=1.0).contains(&p_raw) {
            return Err(Error::domain(format!("raw probability {p_raw} outside [0, 1]")));
        }
        let j = bucket_of(p_raw, self.sub.len());
        let i = self.sub[j].predict_index_with(&mut self.rng)?;
        Ok((j, i as f64 / self.ledger.n as f64))
    }

    /// Routes, predicts, observes `y`, and records the step.
    pub fn step(&mut self, p_raw: f64, y: bool) -> Result<f64> {
        let (j, p) = self.predict(p_raw)?;
        self.observe(p_raw, j, y)?;
        Ok(p)
    }

    fn observe(&mut self, p_raw: f64, j: usize, y: bool) -> Result<()> {
        let i = self.sub[j]
            .pending
            .ok_or_else(|| Error::Protocol("no pending prediction for this bucket".into()))?;
        self.sub[j].update(y)?;
        self.route_counts[j] += 1;
        self.ledger.push(p_raw, j, i, y)
    }

    /// Records the outcome for a forecast made with [`Self::predict`].
    pub fn update(&mut self, p_raw: f64, y: bool) -> Result<()> {
        if !(0.0..=1.0).contains(&p_raw) {
            return Err(Error::domain(format!("raw probability {p_raw} outside [0, 1]")));
        }
        self.observe(p_raw, bucket_of(p_raw, self.sub.len()), y)
    }
}

/// Runs the bucketed recalibrator over a stream of `(p_raw, y)`.
pub fn simulate(
    stream: impl IntoIterator<Item = (f64, bool)>,
    n: usize,
    m: usize,
    seed: u64,
) -> Result<(RegretLedger, u64)> {
    let mut st = BucketedRecalState::new(n, m, seed)?;
    for (p, y) in stream {
        st.step(p, y)?;
    }
    let fb = st.fallbacks();
    Ok((st.into_ledger(), fb))
}
