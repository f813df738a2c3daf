//! A small fully connected network with PReLU units and optional dense skip
//! connections, plus a momentum SGD trainer.
//!
//! With dense skips, hidden layer `l` reads the concatenation of the network
//! input and every earlier hidden activation, and the linear output layer
//! reads all of them.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub dense_skip: bool,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize, dense_skip: bool) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden.contains(&0) {
            return Err(Error::domain("network dimensions must be positive"));
        }
        Ok(Self {
            input_dim,
            hidden,
            output_dim,
            dense_skip,
        })
    }

    pub fn layers(&self) -> Vec<LayerShape> {
        let mut out = Vec::with_capacity(self.hidden.len() + 1);
        let mut offset = self.input_dim;
        let mut prev = (0, self.input_dim);
        let mut param = 0;
        for l in 0..=self.hidden.len() {
            let is_out = l == self.hidden.len();
            let width = if is_out { self.output_dim } else { self.hidden[l] };
            let (start, end) = if self.dense_skip { (0, offset) } else { prev };
            let shape = LayerShape {
                input_start: start,
                input_end: end,
                output_offset: offset,
                width,
                prelu: !is_out,
                param_offset: param,
            };
            param += shape.num_params();
            prev = (offset, offset + width);
            offset += width;
            out.push(shape);
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.layers().iter().map(LayerShape::num_params).sum()
    }

    fn buffer_len(&self) -> usize {
        self.input_dim + self.hidden.iter().sum::<usize>() + self.output_dim
    }
}

/// Placement of one dense layer inside the activation buffer and the flat
/// parameter vector. Parameters are laid out as weights (row-major,
/// `width × fan_in`), then biases, then PReLU slopes for hidden layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub input_start: usize,
    pub input_end: usize,
    pub output_offset: usize,
    pub width: usize,
    pub prelu: bool,
    pub param_offset: usize,
}

impl LayerShape {
    pub fn fan_in(&self) -> usize {
        self.input_end - self.input_start
    }

    pub fn num_params(&self) -> usize {
        self.width * self.fan_in() + self.width + if self.prelu { self.width } else { 0 }
    }

    fn bias_offset(&self) -> usize {
        self.param_offset + self.width * self.fan_in()
    }

    fn slope_offset(&self) -> usize {
        self.bias_offset() + self.width
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralNet {
    arch: Architecture,
    params: Vec<f64>,
    #[serde(skip)]
    layers: Vec<LayerShape>,
}

/// Activations and pre-activations from one forward pass.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    acts: Vec<f64>,
    pre: Vec<f64>,
    out_dim: usize,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        &self.acts[self.acts.len() - self.out_dim..]
    }
}

pub const DEFAULT_PRELU_SLOPE: f64 = 0.25;

impl NeuralNet {
    /// All weights and biases zero, PReLU slopes at their default.
    pub fn zeros(arch: &Architecture) -> Self {
        let layers = arch.layers();
        let mut params = vec![0.0; arch.num_params()];
        for l in layers.iter().filter(|l| l.prelu) {
            params[l.slope_offset()..l.slope_offset() + l.width].fill(DEFAULT_PRELU_SLOPE);
        }
        Self {
            arch: arch.clone(),
            params,
            layers,
        }
    }

    /// He-normal hidden weights, zero biases, zero output layer.
    pub fn init<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Self {
        let mut net = Self::zeros(arch);
        for l in net.layers.clone().iter().filter(|l| l.prelu) {
            let sd = (2.0 / l.fan_in() as f64).sqrt();
            for w in &mut net.params[l.param_offset..l.bias_offset()] {
                *w = sd * rng.sample::<f64, _>(StandardNormal);
            }
        }
        net
    }

    pub fn from_params(arch: &Architecture, params: Vec<f64>) -> Result<Self> {
        if params.len() != arch.num_params() {
            return Err(Error::domain(format!(
                "expected {} parameters, got {}",
                arch.num_params(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::domain("network parameters must be finite"));
        }
        Ok(Self {
            arch: arch.clone(),
            layers: arch.layers(),
            params,
        })
    }

    /// Rebuilds derived layout after deserialization and checks shapes.
    pub fn validated(self) -> Result<Self> {
        Self::from_params(&self.arch, self.params)
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    /// Weight `(row, col)` of layer `l`.
    pub fn weight_mut(&mut self, l: usize, row: usize, col: usize) -> &mut f64 {
        let s = self.layers[l];
        &mut self.params[s.param_offset + row * s.fan_in() + col]
    }

    pub fn bias_mut(&mut self, l: usize, row: usize) -> &mut f64 {
        let s = self.layers[l];
        &mut self.params[s.bias_offset() + row]
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut trace = Trace::default();
        self.forward_trace(input, &mut trace)?;
        Ok(trace.output().to_vec())
    }

    pub fn forward_trace(&self, input: &[f64], trace: &mut Trace) -> Result<()> {
        if input.len() != self.arch.input_dim {
            return Err(Error::domain(format!(
                "input has {} features, network expects {}",
                input.len(),
                self.arch.input_dim
            )));
        }
        trace.acts.clear();
        trace.acts.resize(self.arch.buffer_len(), 0.0);
        trace.acts[..input.len()].copy_from_slice(input);
        trace.pre.clear();
        trace.out_dim = self.arch.output_dim;
        for s in &self.layers {
            let fan = s.fan_in();
            for r in 0..s.width {
                let w = &self.params[s.param_offset + r * fan..s.param_offset + (r + 1) * fan];
                let x = &trace.acts[s.input_start..s.input_end];
                let z = self.params[s.bias_offset() + r]
                    + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                let a = if s.prelu {
                    trace.pre.push(z);
                    if z > 0.0 {
                        z
                    } else {
                        self.params[s.slope_offset() + r] * z
                    }
                } else {
                    z
                };
                trace.acts[s.output_offset + r] = a;
            }
        }
        Ok(())
    }

    /// Adds the parameter gradient of a scalar loss with output gradient
    /// `dout` into `grad`; optionally writes the input gradient.
    pub fn backward_into(
        &self,
        trace: &Trace,
        dout: &[f64],
        grad: &mut [f64],
        dinput: Option<&mut [f64]>,
    ) -> Result<()> {
        if dout.len() != self.arch.output_dim || grad.len() != self.params.len() {
            return Err(Error::domain("gradient buffer shape mismatch"));
        }
        let mut dacts = vec![0.0; trace.acts.len()];
        let out_off = trace.acts.len() - self.arch.output_dim;
        dacts[out_off..].copy_from_slice(dout);
        let mut pre_end = trace.pre.len();
        for s in self.layers.iter().rev() {
            let fan = s.fan_in();
            let pre_start = if s.prelu { pre_end - s.width } else { pre_end };
            for r in 0..s.width {
                let da = dacts[s.output_offset + r];
                let dz = if s.prelu {
                    let z = trace.pre[pre_start + r];
                    if z > 0.0 {
                        da
                    } else {
                        grad[s.slope_offset() + r] += da * z;
                        da * self.params[s.slope_offset() + r]
                    }
                } else {
                    da
                };
                if dz == 0.0 {
                    continue;
                }
                grad[s.bias_offset() + r] += dz;
                let wo = s.param_offset + r * fan;
                for c in 0..fan {
                    grad[wo + c] += dz * trace.acts[s.input_start + c];
                    dacts[s.input_start + c] += dz * self.params[wo + c];
                }
            }
            pre_end = pre_start;
        }
        if let Some(di) = dinput {
            di.copy_from_slice(&dacts[..self.arch.input_dim]);
        }
        Ok(())
    }

    pub fn backward(&self, trace: &Trace, dout: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.params.len()];
        self.backward_into(trace, dout, &mut g, None)?;
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub step_size: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub tau_samples_per_example: usize,
    /// Step size decays linearly to `step_size * final_step_fraction`.
    pub final_step_fraction: f64,
    /// Minibatch gradients are rescaled to at most this norm (0 disables).
    pub grad_clip: f64,
    /// Per-step decay of the exponential parameter average that training
    /// returns (0 returns the raw iterate).
    pub averaging: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            step_size: 0.003,
            momentum: 0.9,
            epochs: 40,
            batch_size: 128,
            seed: 0,
            tau_samples_per_example: 8,
            final_step_fraction: 0.1,
            grad_clip: 10.0,
            averaging: 0.99,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::domain("step_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::domain("momentum must lie in [0, 1)"));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.tau_samples_per_example == 0 {
            return Err(Error::domain("epochs, batch_size and tau_samples_per_example must be positive"));
        }
        if !(self.final_step_fraction > 0.0 && self.final_step_fraction <= 1.0) {
            return Err(Error::domain("final_step_fraction must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.averaging) {
            return Err(Error::domain("averaging must lie in [0, 1)"));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::domain("grad_clip must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean training loss over every example at the end of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Median minibatch loss seen during each epoch.
    pub batch_medians: Vec<f64>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Minibatch SGD with momentum over `n` examples. `batch_grad` receives the
/// batch indices and epoch, must add the mean gradient into its buffer and
/// return the mean loss. `example_loss` evaluates one example at the current
/// parameters; its mean over all examples is logged after every epoch.
pub fn sgd_train<R, F, L>(
    net: &mut NeuralNet,
    n: usize,
    cfg: &TrainConfig,
    rng: &mut R,
    mut batch_grad: F,
    mut example_loss: L,
) -> Result<TrainLog>
where
    R: Rng + ?Sized,
    F: FnMut(&NeuralNet, &[usize], usize, &mut [f64], &mut R) -> Result<f64>,
    L: FnMut(&NeuralNet, usize) -> Result<f64>,
{
    cfg.validate()?;
    if n == 0 {
        return Err(Error::Training("no training examples".into()));
    }
    let bs = cfg.batch_size.min(n);
    let batches = n.div_ceil(bs);
    let total = (cfg.epochs * batches) as f64;
    let mut order: Vec<usize> = (0..n).collect();
    let mut velocity = vec![0.0; net.num_params()];
    let mut grad = vec![0.0; net.num_params()];
    let mut log = TrainLog::default();
    let mut step = 0usize;
    let mut avg = net.clone();
    for epoch in 0..cfg.epochs {
        shuffle(&mut order, rng);
        let mut losses = Vec::with_capacity(batches);
        for b in 0..batches {
            let idx = &order[b * bs..((b + 1) * bs).min(n)];
            grad.fill(0.0);
            let loss = batch_grad(net, idx, epoch, &mut grad, rng)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training(format!(
                    "diverged at epoch {epoch}, batch {b}: loss {loss}"
                )));
            }
            losses.push(loss);
            if cfg.grad_clip > 0.0 {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > cfg.grad_clip {
                    let s = cfg.grad_clip / norm;
                    grad.iter_mut().for_each(|g| *g *= s);
                }
            }
            let frac = step as f64 / total;
            let lr = cfg.step_size * (1.0 - (1.0 - cfg.final_step_fraction) * frac);
            for ((p, v), g) in net.params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = cfg.momentum * *v - lr * g;
                *p += *v;
            }
            step += 1;
            // bias-corrected so early averages are not pulled toward the init
            let d = cfg.averaging.min(1.0 - 1.0 / (step as f64 + 1.0));
            for (a, p) in avg.params.iter_mut().zip(&net.params) {
                *a = d * *a + (1.0 - d) * p;
            }
        }
        log.batch_medians.push(median(&mut losses));
        let mut total = 0.0;
        for i in 0..n {
            total += example_loss(&avg, i)?;
        }
        let m = total / n as f64;
        if !m.is_finite() {
            return Err(Error::Training(format!("training loss became non-finite at epoch {epoch}")));
        }
        log.epoch_losses.push(m);
    }
    if avg.params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Training("parameters became non-finite".into()));
    }
    net.params = avg.params;
    Ok(log)
}

/// Fisher–Yates shuffle driven by the caller's generator.
pub fn shuffle<T, R: Rng + ?Sized>(v: &mut [T], rng: &mut R) {
    for i in (1..v.len()).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
}

/// Per-column mean and standard deviation; zero spreads become 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::domain("cannot standardize an empty set"));
        };
        let d = first.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::domain("rows differ in length"));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        let scale = var
            .into_iter()
            .map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            scale: vec![1.0; d],
        }
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for (((o, v), m), s) in out.iter_mut().zip(x).zip(&self.mean).zip(&self.scale) {
            *o = (v - m) / s;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.apply_into(x, &mut out);
        out
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_net(rng: &mut ChaCha8Rng) -> NeuralNet {
        let input = rng.random_range(1..6);
        let depth = rng.random_range(0..4);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(1..8)).collect();
        let out = rng.random_range(1..4);
        let arch = Architecture::new(input, hidden, out, rng.random_bool(0.5)).unwrap();
        let params = (0..arch.num_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        NeuralNet::from_params(&arch, params).unwrap()
    }

    /// Scalar probe loss `Σ c_k out_k + ½ Σ out_k²`.
    fn probe_loss(net: &NeuralNet, x: &[f64], c: &[f64]) -> f64 {
        net.forward(x)
            .unwrap()
            .iter()
            .zip(c)
            .map(|(o, c)| c * o + 0.5 * o * o)
            .sum()
    }

    pub(crate) fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-3))
            .fold(0.0, f64::max)
    }

    #[test]
    fn finite_difference_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        for _ in 0..20 {
            let net = random_net(&mut rng);
            let d = net.arch().input_dim;
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let c: Vec<f64> = (0..net.arch().output_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut trace = Trace::default();
            net.forward_trace(&x, &mut trace).unwrap();
            let dout: Vec<f64> = trace.output().iter().zip(&c).map(|(o, c)| c + o).collect();
            let mut analytic = vec![0.0; net.num_params()];
            let mut dinput = vec![0.0; d];
            net.backward_into(&trace, &dout, &mut analytic, Some(&mut dinput)).unwrap();

            let mut numeric = vec![0.0; net.num_params()];
            for (k, g) in numeric.iter_mut().enumerate() {
                let mut plus = net.clone();
                plus.params_mut()[k] += h;
                let mut minus = net.clone();
                minus.params_mut()[k] -= h;
                *g = (probe_loss(&plus, &x, &c) - probe_loss(&minus, &x, &c)) / (2.0 * h);
            }
            assert!(max_relative_error(&analytic, &numeric) <= 1e-5);

            let num_in: Vec<f64> = (0..d)
                .map(|i| {
                    let mut xp = x.clone();
                    xp[i] += h;
                    let mut xm = x.clone();
                    xm[i] -= h;
                    (probe_loss(&net, &xp, &c) - probe_loss(&net, &xm, &c)) / (2.0 * h)
                })
                .collect();
            assert!(max_relative_error(&dinput, &num_in) <= 1e-5);
        }
    }

    #[test]
    fn identity_layer_and_zero_propagation() {
        let arch = Architecture::new(3, vec![], 3, false).unwrap();
        let mut net = NeuralNet::zeros(&arch);
        for i in 0..3 {
            *net.weight_mut(0, i, i) = 1.0;
        }
        assert_eq!(net.forward(&[1.5, -2.0, 0.25]).unwrap(), vec![1.5, -2.0, 0.25]);

        let arch = Architecture::new(4, vec![5, 5], 2, true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = NeuralNet::init(&arch, &mut rng);
        for l in 0..net.layers().len() {
            for r in 0..net.layers()[l].width {
                *net.bias_mut(l, r) = 0.0;
            }
        }
        let out = net.forward(&[0.0; 4]).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layout_counts() {
        let arch = Architecture::new(10, vec![20, 20], 2, true).unwrap();
        // 20*10+20+20, 20*30+20+20, 2*50+2
        assert_eq!(arch.num_params(), 240 + 640 + 102);
        let arch = Architecture::new(10, vec![20, 20], 2, false).unwrap();
        assert_eq!(arch.num_params(), 240 + 440 + 42);
    }

    #[test]
    fn shape_errors() {
        let arch = Architecture::new(2, vec![3], 1, true).unwrap();
        let net = NeuralNet::zeros(&arch);
        assert!(net.forward(&[1.0]).is_err());
        assert!(NeuralNet::from_params(&arch, vec![0.0; 3]).is_err());
        assert!(Architecture::new(0, vec![], 1, false).is_err());
    }

    #[test]
    fn sgd_fits_linear_map() {
        let arch = Architecture::new(1, vec![8], 1, true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = NeuralNet::init(&arch, &mut rng);
        let xs: Vec<f64> = (0..200).map(|i| i as f64 / 100.0 - 1.0).collect();
        let cfg = TrainConfig {
            epochs: 100,
            batch_size: 20,
            step_size: 0.05,
            ..Default::default()
        };
        let mut trace = Trace::default();
        let log = sgd_train(&mut net, xs.len(), &cfg, &mut rng, |net, idx, _, grad, _| {
            let mut loss = 0.0;
            for &i in idx {
                net.forward_trace(&[xs[i]], &mut trace)?;
                let r = trace.output()[0] - (2.0 * xs[i] + 1.0);
                loss += 0.5 * r * r / idx.len() as f64;
                net.backward_into(&trace, &[r / idx.len() as f64], grad, None)?;
            }
            Ok(loss)
        }, |net, i| {
            let r = net.forward(&[xs[i]])?[0] - (2.0 * xs[i] + 1.0);
            Ok(0.5 * r * r)
        })
        .unwrap();
        assert!(*log.epoch_losses.last().unwrap() < 1e-3);
        let y = net.forward(&[0.5]).unwrap()[0];
        assert!((y - 2.0).abs() < 0.05, "{y}");
    }

    #[test]
    fn standardizer_handles_constant_columns() {
        let s = Standardizer::fit(&[vec![1.0, 5.0], vec![3.0, 5.0]]).unwrap();
        assert_eq!(s.mean, vec![2.0, 5.0]);
        assert_eq!(s.scale, vec![1.0, 1.0]);
        assert_eq!(s.apply(&[3.0, 5.0]), vec![1.0, 0.0]);
    }
}
