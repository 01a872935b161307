//! Fully connected noise predictor trained on the denoising objective
//! `E_{t, x0, eps} ||eps - eps_theta(x_t, t)||^2`.

use rand::seq::SliceRandom;
use rand::Rng;

use super::denoiser::Denoiser;
use super::schedule::Schedule;
use crate::error::{ensure, LoridError, Result};
use crate::nn::{finite_difference_check, Activation, Mlp, Optimizer, OptimizerState};
use crate::rng::standard_normal;
use crate::tensor::Tensor;

/// Sinusoidal frequencies appended to `t/T`.
pub const TIME_FREQUENCIES: usize = 4;
const TIME_FEATURES: usize = 1 + 2 * TIME_FREQUENCIES;

fn time_features(t: usize, steps: usize, out: &mut [f64]) {
    let tau = t as f64 / steps as f64;
    out[0] = tau;
    for k in 0..TIME_FREQUENCIES {
        let w = std::f64::consts::PI * (1u32 << k) as f64 * tau;
        out[1 + 2 * k] = w.sin();
        out[2 + 2 * k] = w.cos();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpDenoiser {
    net: Mlp,
    sample_shape: Vec<usize>,
    steps: usize,
}

impl MlpDenoiser {
    pub fn new<R: Rng + ?Sized>(
        sample_shape: &[usize],
        hidden: &[usize],
        activation: Activation,
        steps: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let d: usize = sample_shape.iter().product();
        let mut sizes = vec![d + TIME_FEATURES];
        sizes.extend_from_slice(hidden);
        sizes.push(d);
        Ok(Self {
            net: Mlp::new(&sizes, activation, rng)?,
            sample_shape: sample_shape.to_vec(),
            steps,
        })
    }

    pub fn from_network(net: Mlp, sample_shape: Vec<usize>, steps: usize) -> Result<Self> {
        let d: usize = sample_shape.iter().product();
        ensure!(
            net.input_dim() == d + TIME_FEATURES && net.output_dim() == d,
            Shape,
            "network {:?} does not fit samples of shape {sample_shape:?}",
            net.sizes()
        );
        ensure!(steps >= 1, InvalidArgument, "steps must be >= 1");
        Ok(Self {
            net,
            sample_shape,
            steps,
        })
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn dim(&self) -> usize {
        self.sample_shape.iter().product()
    }

    fn features(&self, xs: &[&[f64]], ts: &[usize]) -> Vec<f64> {
        let d = self.dim();
        let width = d + TIME_FEATURES;
        let mut input = vec![0.0; xs.len() * width];
        for (s, (x, &t)) in xs.iter().zip(ts).enumerate() {
            let row = &mut input[s * width..(s + 1) * width];
            row[..d].copy_from_slice(x);
            time_features(t, self.steps, &mut row[d..]);
        }
        input
    }

    /// Batched prediction over rows of `xs` (each of sample size).
    pub fn predict_batch(&self, xs: &[&[f64]], ts: &[usize]) -> Result<Vec<f64>> {
        self.net.predict(&self.features(xs, ts), xs.len())
    }
}

impl Denoiser for MlpDenoiser {
    fn predict_eps(&self, x_t: &Tensor, t: usize) -> Result<Tensor> {
        ensure!(
            x_t.shape() == self.sample_shape.as_slice(),
            Shape,
            "denoiser expects {:?}, got {:?}",
            self.sample_shape,
            x_t.shape()
        );
        ensure!(
            t >= 1 && t <= self.steps,
            OutOfRange,
            "time step {t} outside 1..={}",
            self.steps
        );
        let out = self.predict_batch(&[x_t.data()], &[t])?;
        Tensor::new(self.sample_shape.clone(), out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    /// Restrict the sampled time steps to `lo..=hi`; `None` covers `1..=T`.
    pub t_range: Option<(usize, usize)>,
    /// Number of parameters probed by the finite-difference check.
    pub grad_check_params: usize,
    /// Fresh samples used for the final objective estimate.
    pub eval_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 64,
            optimizer: Optimizer::Adam,
            t_range: None,
            grad_check_params: 24,
            eval_samples: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean objective per epoch.
    pub epoch_losses: Vec<f64>,
    /// Objective estimated on fresh noise after training.
    pub final_loss: f64,
    /// Worst relative error of analytic vs finite-difference gradients at
    /// initialization.
    pub grad_check_rel_error: f64,
}

// One minibatch worth of (x_t, eps, t).
struct Batch {
    inputs: Vec<f64>,
    targets: Vec<f64>,
    size: usize,
}

fn draw_batch<R: Rng + ?Sized>(
    model: &MlpDenoiser,
    samples: &[&[f64]],
    schedule: &Schedule,
    t_lo: usize,
    t_hi: usize,
    rng: &mut R,
) -> Batch {
    let d = model.dim();
    let mut xts = Vec::with_capacity(samples.len());
    let mut ts = Vec::with_capacity(samples.len());
    let mut targets = Vec::with_capacity(samples.len() * d);
    for x0 in samples {
        let t = rng.random_range(t_lo..=t_hi);
        let ab = schedule.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        let mut xt = Vec::with_capacity(d);
        for &v in x0.iter() {
            let e = standard_normal(rng);
            targets.push(e);
            xt.push(a * v + b * e);
        }
        xts.push(xt);
        ts.push(t);
    }
    let refs: Vec<&[f64]> = xts.iter().map(Vec::as_slice).collect();
    Batch {
        inputs: model.features(&refs, &ts),
        targets,
        size: samples.len(),
    }
}

fn batch_loss(net: &Mlp, batch: &Batch) -> Result<f64> {
    let out = net.predict(&batch.inputs, batch.size)?;
    Ok(out
        .iter()
        .zip(&batch.targets)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / batch.size as f64)
}

/// Fit an [`MlpDenoiser`] to a dataset `(N, ...)` by minibatch gradient
/// descent on the noise-prediction objective.
pub fn train_mlp_denoiser<R: Rng + ?Sized>(
    dataset: &Tensor,
    schedule: &Schedule,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<(MlpDenoiser, TrainReport)> {
    ensure!(
        dataset.order() >= 2 && dataset.shape()[0] >= 1,
        InvalidArgument,
        "dataset must be (N, ...) with N >= 1"
    );
    ensure!(config.batch_size >= 1, InvalidArgument, "batch size must be >= 1");
    ensure!(
        config.learning_rate > 0.0 && config.learning_rate.is_finite(),
        InvalidArgument,
        "learning rate must be positive"
    );
    let steps = schedule.steps();
    let (t_lo, t_hi) = config.t_range.unwrap_or((1, steps));
    ensure!(
        t_lo >= 1 && t_lo <= t_hi && t_hi <= steps,
        InvalidArgument,
        "time range {t_lo}..={t_hi} outside 1..={steps}"
    );
    let shape = &dataset.shape()[1..];
    let n = dataset.shape()[0];
    let d: usize = shape.iter().product();
    let rows: Vec<&[f64]> = dataset.data().chunks(d).collect();

    let mut model = MlpDenoiser::new(shape, &config.hidden, config.activation, steps, rng)?;

    // Gradient check at initialization on a small fixed batch.
    let probe_rows: Vec<&[f64]> = rows.iter().take(4.min(n)).copied().collect();
    let probe = draw_batch(&model, &probe_rows, schedule, t_lo, t_hi, rng);
    let grad_check_rel_error = {
        let net = &model.net;
        let cache = net.forward(&probe.inputs, probe.size)?;
        let d_out: Vec<f64> = cache
            .output()
            .iter()
            .zip(&probe.targets)
            .map(|(a, b)| 2.0 * (a - b) / probe.size as f64)
            .collect();
        let (grad, _) = net.backward(&cache, &d_out)?;
        let total = net.params().len();
        let k = config.grad_check_params.min(total).max(1);
        let indices: Vec<usize> = (0..k).map(|i| i * total / k).collect();
        finite_difference_check(net.params(), &grad, &indices, 1e-6, |p| {
            let trial = Mlp::from_params(net.sizes().to_vec(), net.activation(), p.to_vec())
                .expect("same layout");
            batch_loss(&trial, &probe).unwrap_or(f64::NAN)
        })
    };

    let mut opt = OptimizerState::new(config.optimizer, model.net.params().len(), config.learning_rate);
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let samples: Vec<&[f64]> = chunk.iter().map(|&i| rows[i]).collect();
            let batch = draw_batch(&model, &samples, schedule, t_lo, t_hi, rng);
            let cache = model.net.forward(&batch.inputs, batch.size)?;
            let mut loss = 0.0;
            let d_out: Vec<f64> = cache
                .output()
                .iter()
                .zip(&batch.targets)
                .map(|(a, b)| {
                    loss += (a - b) * (a - b);
                    2.0 * (a - b) / batch.size as f64
                })
                .collect();
            if !loss.is_finite() {
                return Err(LoridError::Diverged { epoch, loss });
            }
            let (grad, _) = model.net.backward(&cache, &d_out)?;
            opt.update(model.net.params_mut(), &grad);
            total += loss;
            count += batch.size;
        }
        let mean = total / count as f64;
        if !mean.is_finite() || model.net.params().iter().any(|p| !p.is_finite()) {
            return Err(LoridError::Diverged { epoch, loss: mean });
        }
        epoch_losses.push(mean);
    }

    let final_loss = evaluate_objective(&model, dataset, schedule, config.eval_samples, (t_lo, t_hi), rng)?;
    Ok((
        model,
        TrainReport {
            epoch_losses,
            final_loss,
            grad_check_rel_error,
        },
    ))
}

/// Monte Carlo estimate of `E ||eps - eps_theta(x_t, t)||^2` with `t`
/// uniform on `t_range` and `x0` drawn from the dataset.
pub fn evaluate_objective<R: Rng + ?Sized>(
    model: &MlpDenoiser,
    dataset: &Tensor,
    schedule: &Schedule,
    samples: usize,
    t_range: (usize, usize),
    rng: &mut R,
) -> Result<f64> {
    let n = dataset.shape()[0];
    let d = model.dim();
    let rows: Vec<&[f64]> = dataset.data().chunks(d).collect();
    let mut total = 0.0;
    let mut count = 0;
    let samples = samples.max(1);
    while count < samples {
        let take = 256.min(samples - count);
        let picks: Vec<&[f64]> = (0..take).map(|_| rows[rng.random_range(0..n)]).collect();
        let batch = draw_batch(model, &picks, schedule, t_range.0, t_range.1, rng);
        total += batch_loss(&model.net, &batch)? * take as f64;
        count += take;
    }
    Ok(total / samples as f64)
}
