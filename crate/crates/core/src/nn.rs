//! Small fully connected networks with hand-written backpropagation.
//!
//! All parameters live in one flat vector: for each layer the weight matrix
//! `(out x in, row-major)` followed by the bias. Batches are row-major
//! `(batch x features)` slices.

use rand::Rng;

use crate::error::{ensure, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    // Derivative expressed through the activation output `a`.
    #[inline]
    fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(format!("unknown activation '{other}' (expected tanh or relu)")),
        }
    }
}

/// Multi-layer perceptron with a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

/// Activations saved by the forward pass; `layers[0]` is the input.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    layers: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.layers.last().expect("non-empty cache")
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        ensure!(sizes.len() >= 2, InvalidArgument, "need input and output sizes");
        ensure!(sizes.iter().all(|&s| s >= 1), InvalidArgument, "layer sizes must be >= 1");
        let mut params = Vec::with_capacity(Self::count_params(sizes));
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            activation,
            params,
        })
    }

    pub fn from_params(sizes: Vec<usize>, activation: Activation, params: Vec<f64>) -> Result<Self> {
        ensure!(sizes.len() >= 2, InvalidArgument, "need input and output sizes");
        ensure!(
            params.len() == Self::count_params(&sizes),
            Shape,
            "parameter count {} does not match layer sizes {:?}",
            params.len(),
            sizes
        );
        ensure!(params.iter().all(|p| p.is_finite()), NonFinite, "network parameters");
        Ok(Self {
            sizes,
            activation,
            params,
        })
    }

    fn count_params(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Weight and bias slices of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let off = self.layer_offset(l);
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        (
            &self.params[off..off + i * o],
            &self.params[off + i * o..off + i * o + o],
        )
    }

    fn layer_offset(&self, l: usize) -> usize {
        Self::count_params(&self.sizes[..=l])
    }

    pub fn forward(&self, input: &[f64], batch: usize) -> Result<ForwardCache> {
        ensure!(
            input.len() == batch * self.input_dim(),
            Shape,
            "input length {} for batch {batch} x {}",
            input.len(),
            self.input_dim()
        );
        let n_layers = self.sizes.len() - 1;
        let mut layers = Vec::with_capacity(n_layers + 1);
        layers.push(input.to_vec());
        for l in 0..n_layers {
            let (w, b) = self.layer(l);
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let prev = &layers[l];
            let mut out = vec![0.0; batch * fan_out];
            for s in 0..batch {
                let x = &prev[s * fan_in..(s + 1) * fan_in];
                let y = &mut out[s * fan_out..(s + 1) * fan_out];
                for (o, yo) in y.iter_mut().enumerate() {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    *yo = b[o] + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
                }
            }
            if l + 1 < n_layers {
                out.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            layers.push(out);
        }
        Ok(ForwardCache { batch, layers })
    }

    pub fn predict(&self, input: &[f64], batch: usize) -> Result<Vec<f64>> {
        Ok(self.forward(input, batch)?.layers.pop().unwrap())
    }

    /// Backpropagate `d_out = dL/d(output)`. Returns the parameter gradient
    /// and `dL/d(input)`.
    pub fn backward(&self, cache: &ForwardCache, d_out: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let batch = cache.batch;
        ensure!(
            d_out.len() == batch * self.output_dim(),
            Shape,
            "output gradient length {}",
            d_out.len()
        );
        let n_layers = self.sizes.len() - 1;
        let mut grad = vec![0.0; self.params.len()];
        let mut delta = d_out.to_vec();
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.layer_offset(l);
            let (w, _) = self.layer(l);
            let prev = &cache.layers[l];
            {
                let (gw, gb) = grad[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
                for s in 0..batch {
                    let d = &delta[s * fan_out..(s + 1) * fan_out];
                    let x = &prev[s * fan_in..(s + 1) * fan_in];
                    for (o, &dv) in d.iter().enumerate() {
                        if dv == 0.0 {
                            continue;
                        }
                        gb[o] += dv;
                        for (g, &xv) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(x) {
                            *g += dv * xv;
                        }
                    }
                }
            }
            let mut prev_delta = vec![0.0; batch * fan_in];
            for s in 0..batch {
                let d = &delta[s * fan_out..(s + 1) * fan_out];
                let pd = &mut prev_delta[s * fan_in..(s + 1) * fan_in];
                for (o, &dv) in d.iter().enumerate() {
                    if dv == 0.0 {
                        continue;
                    }
                    for (p, &wv) in pd.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                        *p += dv * wv;
                    }
                }
            }
            if l > 0 {
                for (p, &a) in prev_delta.iter_mut().zip(prev) {
                    *p *= self.activation.derivative(a);
                }
            }
            delta = prev_delta;
        }
        Ok((grad, delta))
    }
}

/// Adam optimizer state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Which first-order method drives training.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Optimizer {
    Sgd { momentum: f64 },
    #[default]
    Adam,
}

/// Stateful wrapper over the optimizer choice.
#[derive(Debug, Clone)]
pub(crate) enum OptimizerState {
    Sgd { lr: f64, momentum: f64, velocity: Vec<f64> },
    Adam(Adam),
}

impl OptimizerState {
    pub(crate) fn new(kind: Optimizer, n: usize, lr: f64) -> Self {
        match kind {
            Optimizer::Sgd { momentum } => OptimizerState::Sgd {
                lr,
                momentum,
                velocity: vec![0.0; n],
            },
            Optimizer::Adam => OptimizerState::Adam(Adam::new(n, lr)),
        }
    }

    pub(crate) fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        match self {
            OptimizerState::Sgd { lr, momentum, velocity } => {
                for ((p, g), v) in params.iter_mut().zip(grad).zip(velocity.iter_mut()) {
                    *v = *momentum * *v - *lr * g;
                    *p += *v;
                }
            }
            OptimizerState::Adam(adam) => adam.update(params, grad),
        }
    }
}

/// Largest relative discrepancy between `analytic[i]` and a central finite
/// difference of `loss` for each index in `indices`.
pub fn finite_difference_check(
    params: &[f64],
    analytic: &[f64],
    indices: &[usize],
    step: f64,
    mut loss: impl FnMut(&[f64]) -> f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    let mut p = params.to_vec();
    for &i in indices {
        let orig = p[i];
        p[i] = orig + step;
        let up = loss(&p);
        p[i] = orig - step;
        let down = loss(&p);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn sq_loss(net: &Mlp, x: &[f64], y: &[f64], batch: usize) -> f64 {
        let out = net.predict(x, batch).unwrap();
        out.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / batch as f64
    }

    fn check_gradients(activation: Activation) {
        let mut rng = seeded(11);
        let mut net = Mlp::new(&[3, 5, 4, 2], activation, &mut rng).unwrap();
        // Nonzero biases keep ReLU pre-activations away from the kink at 0.
        net.params_mut().iter_mut().for_each(|p| *p += 0.05);
        let batch = 4;
        let x: Vec<f64> = (0..batch * 3).map(|i| ((i as f64) * 0.37).sin()).collect();
        let y: Vec<f64> = (0..batch * 2).map(|i| ((i as f64) * 0.91).cos()).collect();
        let cache = net.forward(&x, batch).unwrap();
        let d_out: Vec<f64> = cache
            .output()
            .iter()
            .zip(&y)
            .map(|(a, b)| 2.0 * (a - b) / batch as f64)
            .collect();
        let (grad, d_in) = net.backward(&cache, &d_out).unwrap();
        let all: Vec<usize> = (0..net.params().len()).collect();
        let rel = finite_difference_check(net.params(), &grad, &all, 1e-6, |p| {
            let probe = Mlp::from_params(net.sizes().to_vec(), activation, p.to_vec()).unwrap();
            sq_loss(&probe, &x, &y, batch)
        });
        assert!(rel < 1e-5, "parameter gradient rel err {rel}");
        let in_idx: Vec<usize> = (0..x.len()).collect();
        let rel_in = finite_difference_check(&x, &d_in, &in_idx, 1e-6, |xi| sq_loss(&net, xi, &y, batch));
        assert!(rel_in < 1e-5, "input gradient rel err {rel_in}");
    }

    #[test]
    fn tanh_gradients_match_finite_differences() {
        check_gradients(Activation::Tanh);
    }

    #[test]
    fn relu_gradients_match_finite_differences() {
        check_gradients(Activation::Relu);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.1);
        for _ in 0..500 {
            let g: Vec<f64> = p.iter().map(|v| 2.0 * v).collect();
            opt.update(&mut p, &g);
        }
        assert!(p.iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn rejects_bad_shapes() {
        let net = Mlp::new(&[2, 3, 1], Activation::Tanh, &mut seeded(0)).unwrap();
        assert!(net.forward(&[1.0, 2.0, 3.0], 1).is_err());
        assert!(Mlp::from_params(vec![2, 1], Activation::Tanh, vec![0.0; 2]).is_err());
        assert!(Mlp::new(&[2], Activation::Tanh, &mut seeded(0)).is_err());
    }
}
