//! A small softmax classifier and black-box FGSM/PGD adversaries that see
//! the classifier but never the purifier.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::diffusion::{Denoiser, Schedule};
use crate::error::{ensure, LoridError, Result};
use crate::nn::{finite_difference_check, Activation, Mlp, Optimizer, OptimizerState};
use crate::purify::{purify_batch, LoridConfig};
use crate::rng::derived;
use crate::tensor::Tensor;
use crate::tucker::{tf_apply_batch, TuckerBasis};

/// Softmax classifier over flattened inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyClassifier {
    net: Mlp,
    input_shape: Vec<usize>,
}

fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    row.iter_mut().for_each(|v| *v /= z);
}

impl ToyClassifier {
    pub fn new<R: Rng + ?Sized>(
        input_shape: &[usize],
        hidden: &[usize],
        activation: Activation,
        classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        ensure!(classes >= 2, InvalidArgument, "need at least two classes");
        let d: usize = input_shape.iter().product();
        let mut sizes = vec![d];
        sizes.extend_from_slice(hidden);
        sizes.push(classes);
        Ok(Self {
            net: Mlp::new(&sizes, activation, rng)?,
            input_shape: input_shape.to_vec(),
        })
    }

    pub fn from_network(net: Mlp, input_shape: Vec<usize>) -> Result<Self> {
        let d: usize = input_shape.iter().product();
        ensure!(net.input_dim() == d, Shape, "network input {} for samples of size {d}", net.input_dim());
        ensure!(net.output_dim() >= 2, InvalidArgument, "need at least two classes");
        Ok(Self { net, input_shape })
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn classes(&self) -> usize {
        self.net.output_dim()
    }

    fn dim(&self) -> usize {
        self.input_shape.iter().product()
    }

    fn batch_rows(&self, data: &Tensor) -> Result<usize> {
        ensure!(
            data.order() >= 2 && &data.shape()[1..] == self.input_shape.as_slice(),
            Shape,
            "classifier expects (N, {:?}), got {:?}",
            self.input_shape,
            data.shape()
        );
        Ok(data.shape()[0])
    }

    /// Class probabilities for a batch `(N, ...)`, row-major `(N, classes)`.
    pub fn probabilities(&self, data: &Tensor) -> Result<Vec<f64>> {
        let n = self.batch_rows(data)?;
        let mut out = self.net.predict(data.data(), n)?;
        out.chunks_mut(self.classes()).for_each(softmax_in_place);
        Ok(out)
    }

    pub fn predict(&self, data: &Tensor) -> Result<Vec<usize>> {
        let probs = self.probabilities(data)?;
        Ok(probs
            .chunks(self.classes())
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
                    .0
            })
            .collect())
    }

    pub fn accuracy(&self, data: &Tensor, labels: &[usize]) -> Result<f64> {
        let pred = self.predict(data)?;
        ensure!(pred.len() == labels.len(), Shape, "{} predictions for {} labels", pred.len(), labels.len());
        let hits = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
        Ok(hits as f64 / labels.len() as f64)
    }

    // Mean cross-entropy, its parameter gradient and input gradient.
    fn loss_and_grads(&self, inputs: &[f64], labels: &[usize]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let n = labels.len();
        let k = self.classes();
        let cache = self.net.forward(inputs, n)?;
        let mut d_out = cache.output().to_vec();
        let mut loss = 0.0;
        for (row, &y) in d_out.chunks_mut(k).zip(labels) {
            ensure!(y < k, OutOfRange, "label {y} with {k} classes");
            softmax_in_place(row);
            loss -= row[y].max(f64::MIN_POSITIVE).ln();
            row[y] -= 1.0;
            row.iter_mut().for_each(|v| *v /= n as f64);
        }
        let (grad, d_in) = self.net.backward(&cache, &d_out)?;
        Ok((loss / n as f64, grad, d_in))
    }

    /// Gradient of the cross-entropy of one sample w.r.t. its input.
    pub fn input_gradient(&self, x: &Tensor, label: usize) -> Result<Tensor> {
        ensure!(x.shape() == self.input_shape.as_slice(), Shape, "sample shape {:?}", x.shape());
        let (_, _, d_in) = self.loss_and_grads(x.data(), &[label])?;
        Tensor::new(self.input_shape.clone(), d_in)
    }

    pub fn loss(&self, data: &Tensor, labels: &[usize]) -> Result<f64> {
        self.batch_rows(data)?;
        Ok(self.loss_and_grads(data.data(), labels)?.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub grad_check_params: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32],
            activation: Activation::Tanh,
            learning_rate: 1e-2,
            epochs: 30,
            batch_size: 32,
            optimizer: Optimizer::Adam,
            grad_check_params: 24,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierReport {
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
    pub grad_check_rel_error: f64,
}

/// Minibatch cross-entropy training on `(N, ...)` data.
pub fn train_classifier<R: Rng + ?Sized>(
    data: &Tensor,
    labels: &[usize],
    config: &ClassifierConfig,
    rng: &mut R,
) -> Result<(ToyClassifier, ClassifierReport)> {
    ensure!(data.order() >= 2, Shape, "data must be (N, ...)");
    let n = data.shape()[0];
    ensure!(labels.len() == n, Shape, "{} labels for {n} samples", labels.len());
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut seen = vec![false; classes];
    labels.iter().for_each(|&y| seen[y] = true);
    ensure!(
        seen.iter().filter(|s| **s).count() >= 2,
        InvalidArgument,
        "training data must contain at least two classes"
    );
    ensure!(config.batch_size >= 1, InvalidArgument, "batch size must be >= 1");
    let mut clf = ToyClassifier::new(&data.shape()[1..], &config.hidden, config.activation, classes, rng)?;
    let d = clf.dim();
    let rows: Vec<&[f64]> = data.data().chunks(d).collect();

    let probe = 8.min(n);
    let probe_in: Vec<f64> = rows[..probe].concat();
    let probe_y = &labels[..probe];
    let grad_check_rel_error = {
        let (_, grad, _) = clf.loss_and_grads(&probe_in, probe_y)?;
        let total = grad.len();
        let k = config.grad_check_params.min(total).max(1);
        let indices: Vec<usize> = (0..k).map(|i| i * total / k).collect();
        let net = &clf.net;
        finite_difference_check(net.params(), &grad, &indices, 1e-6, |p| {
            let trial = ToyClassifier {
                net: Mlp::from_params(net.sizes().to_vec(), net.activation(), p.to_vec()).expect("same layout"),
                input_shape: clf.input_shape.clone(),
            };
            trial.loss_and_grads(&probe_in, probe_y).map_or(f64::NAN, |r| r.0)
        })
    };

    let mut opt = OptimizerState::new(config.optimizer, clf.net.params().len(), config.learning_rate);
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let inputs: Vec<f64> = chunk.iter().flat_map(|&i| rows[i].iter().copied()).collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, grad, _) = clf.loss_and_grads(&inputs, &ys)?;
            if !loss.is_finite() {
                return Err(LoridError::Diverged { epoch, loss });
            }
            opt.update(clf.net.params_mut(), &grad);
            total += loss * chunk.len() as f64;
        }
        let mean = total / n as f64;
        if !mean.is_finite() || clf.net.params().iter().any(|p| !p.is_finite()) {
            return Err(LoridError::Diverged { epoch, loss: mean });
        }
        epoch_losses.push(mean);
    }
    let train_accuracy = clf.accuracy(data, labels)?;
    Ok((
        clf,
        ClassifierReport {
            epoch_losses,
            train_accuracy,
            grad_check_rel_error,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackNorm {
    Linf,
    L2,
}

impl std::str::FromStr for AttackNorm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "linf" => Ok(AttackNorm::Linf),
            "l2" => Ok(AttackNorm::L2),
            other => Err(format!("unknown norm '{other}' (expected linf or l2)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackBudget {
    pub norm: AttackNorm,
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    /// Valid input range; adversarial inputs are clamped into it.
    pub clamp: Option<(f64, f64)>,
}

impl AttackBudget {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.epsilon >= 0.0 && self.epsilon.is_finite(), InvalidArgument, "epsilon must be finite and >= 0");
        ensure!(self.steps >= 1, InvalidArgument, "steps must be >= 1");
        ensure!(self.step_size > 0.0 && self.step_size.is_finite(), InvalidArgument, "step size must be positive");
        if let Some((lo, hi)) = self.clamp {
            ensure!(lo < hi, InvalidArgument, "empty clamp range");
        }
        Ok(())
    }

    // Nearest point of the budget ball around `x0`, then the valid range.
    fn project(&self, x0: &Tensor, x: &Tensor) -> Result<Tensor> {
        let delta = x.sub(x0)?;
        let delta = match self.norm {
            AttackNorm::Linf => delta.clamp(-self.epsilon, self.epsilon),
            AttackNorm::L2 => {
                let n = delta.frobenius_norm();
                if n > self.epsilon {
                    delta.scale(self.epsilon / n)
                } else {
                    delta
                }
            }
        };
        let out = x0.add(&delta)?;
        Ok(match self.clamp {
            Some((lo, hi)) => out.clamp(lo, hi),
            None => out,
        })
    }

    // Steepest ascent direction of unit size in the budget norm.
    fn direction(&self, g: &Tensor) -> Tensor {
        match self.norm {
            AttackNorm::Linf => g.map(|v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 }),
            AttackNorm::L2 => g.scale(1.0 / g.frobenius_norm()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub adversarial: Tensor,
    /// The loss gradient vanished, so the input was returned unchanged.
    pub zero_gradient: bool,
}

/// One full-budget step along the loss gradient.
pub fn fgsm(clf: &ToyClassifier, x: &Tensor, label: usize, budget: &AttackBudget) -> Result<AttackResult> {
    budget.validate()?;
    let g = clf.input_gradient(x, label)?;
    if g.max_abs() == 0.0 {
        return Ok(AttackResult {
            adversarial: x.clone(),
            zero_gradient: true,
        });
    }
    let stepped = x.axpby(1.0, &budget.direction(&g), budget.epsilon)?;
    Ok(AttackResult {
        adversarial: budget.project(x, &stepped)?,
        zero_gradient: false,
    })
}

/// Projected gradient ascent from a uniform random start inside the ball.
pub fn pgd<R: Rng + ?Sized>(
    clf: &ToyClassifier,
    x: &Tensor,
    label: usize,
    budget: &AttackBudget,
    rng: &mut R,
) -> Result<AttackResult> {
    budget.validate()?;
    let start = match budget.norm {
        AttackNorm::Linf => {
            let mut s = x.clone();
            for v in s.data_mut() {
                *v += rng.random_range(-1.0..=1.0) * budget.epsilon;
            }
            s
        }
        AttackNorm::L2 => {
            let z = crate::rng::gaussian_tensor(x.shape(), rng);
            let r = budget.epsilon * rng.random::<f64>().powf(1.0 / x.len() as f64);
            let n = z.frobenius_norm().max(f64::MIN_POSITIVE);
            x.axpby(1.0, &z, r / n)?
        }
    };
    let mut cur = budget.project(x, &start)?;
    let mut zero_gradient = false;
    for _ in 0..budget.steps {
        let g = clf.input_gradient(&cur, label)?;
        if g.max_abs() == 0.0 {
            zero_gradient = true;
            break;
        }
        let stepped = cur.axpby(1.0, &budget.direction(&g), budget.step_size)?;
        cur = budget.project(x, &stepped)?;
    }
    if zero_gradient && cur == *x {
        return Ok(AttackResult {
            adversarial: x.clone(),
            zero_gradient,
        });
    }
    Ok(AttackResult {
        adversarial: cur,
        zero_gradient,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    Fgsm,
    Pgd,
}

impl std::str::FromStr for AttackKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "fgsm" => Ok(AttackKind::Fgsm),
            "pgd" => Ok(AttackKind::Pgd),
            other => Err(format!("unknown attack '{other}' (expected fgsm or pgd)")),
        }
    }
}

/// Attack every sample of `(N, ...)`; sample `i` uses stream `i` of `seed`.
pub fn attack_batch(
    clf: &ToyClassifier,
    data: &Tensor,
    labels: &[usize],
    budget: &AttackBudget,
    kind: AttackKind,
    seed: u64,
) -> Result<Tensor> {
    let samples = data.unstack()?;
    ensure!(samples.len() == labels.len(), Shape, "{} labels for {} samples", labels.len(), samples.len());
    let out = samples
        .par_iter()
        .zip(labels.par_iter())
        .enumerate()
        .map(|(i, (x, &y))| {
            let r = match kind {
                AttackKind::Fgsm => fgsm(clf, x, y, budget)?,
                AttackKind::Pgd => pgd(clf, x, y, budget, &mut derived(seed, i as u64))?,
            };
            Ok(r.adversarial)
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack(&out)
}

/// A purification front-end placed before the classifier.
#[derive(Debug, Clone)]
pub enum Defense {
    Identity,
    TuckerOnly(TuckerBasis),
    Lorid(LoridConfig),
}

impl Defense {
    /// Purify a batch; `seed` drives the diffusion noise.
    pub fn apply(&self, batch: &Tensor, denoiser: &dyn Denoiser, schedule: &Schedule, seed: u64) -> Result<Tensor> {
        match self {
            Defense::Identity => Ok(batch.clone()),
            Defense::TuckerOnly(b) => tf_apply_batch(batch, b),
            Defense::Lorid(cfg) => {
                let mut cfg = cfg.clone();
                cfg.seed = seed;
                purify_batch(batch, &cfg, denoiser, schedule)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyRow {
    pub name: String,
    pub clean_accuracy: f64,
    pub robust_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyTable {
    /// Clean accuracy without any defense.
    pub standard_accuracy: f64,
    /// Attacked accuracy without any defense.
    pub attacked_accuracy: f64,
    pub rows: Vec<AccuracyRow>,
}

impl AccuracyTable {
    pub fn row(&self, name: &str) -> Option<&AccuracyRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Columns: `defense,clean_accuracy,robust_accuracy`.
    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        let mut out = vec![vec![
            "none".to_string(),
            self.standard_accuracy.to_string(),
            self.attacked_accuracy.to_string(),
        ]];
        out.extend(
            self.rows
                .iter()
                .map(|r| vec![r.name.clone(), r.clean_accuracy.to_string(), r.robust_accuracy.to_string()]),
        );
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{:<12} {:>8} {:>8}\n", "defense", "clean", "robust");
        let _ = writeln!(s, "{:<12} {:>8.4} {:>8.4}", "none", self.standard_accuracy, self.attacked_accuracy);
        for r in &self.rows {
            let _ = writeln!(s, "{:<12} {:>8.4} {:>8.4}", r.name, r.clean_accuracy, r.robust_accuracy);
        }
        s
    }
}

/// Standard and robust accuracy with and without each defense. The attack
/// targets the classifier alone; purification runs afterwards.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    clf: &ToyClassifier,
    defenses: &[(String, Defense)],
    data: &Tensor,
    labels: &[usize],
    budget: &AttackBudget,
    attack: AttackKind,
    denoiser: &dyn Denoiser,
    schedule: &Schedule,
    seed: u64,
) -> Result<AccuracyTable> {
    let adversarial = attack_batch(clf, data, labels, budget, attack, seed)?;
    let standard_accuracy = clf.accuracy(data, labels)?;
    let attacked_accuracy = clf.accuracy(&adversarial, labels)?;
    let mut rows = Vec::with_capacity(defenses.len());
    for (k, (name, defense)) in defenses.iter().enumerate() {
        let s = seed.wrapping_add(1 + 2 * k as u64);
        let clean = defense.apply(data, denoiser, schedule, s)?;
        let robust = defense.apply(&adversarial, denoiser, schedule, s.wrapping_add(1))?;
        rows.push(AccuracyRow {
            name: name.clone(),
            clean_accuracy: clf.accuracy(&clean, labels)?,
            robust_accuracy: clf.accuracy(&robust, labels)?,
        });
    }
    Ok(AccuracyTable {
        standard_accuracy,
        attacked_accuracy,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_two_gaussians;
    use crate::diffusion::ZeroDenoiser;
    use crate::rng::seeded;

    fn trained() -> (ToyClassifier, Tensor, Vec<usize>, ClassifierReport) {
        let (x, y) = gen_two_gaussians(400, 8.0, 1).unwrap();
        let cfg = ClassifierConfig {
            hidden: vec![8],
            epochs: 20,
            ..Default::default()
        };
        let (clf, rep) = train_classifier(&x, &y, &cfg, &mut seeded(2)).unwrap();
        (clf, x, y, rep)
    }

    #[test]
    fn separable_task_is_learned() {
        let (clf, x, y, rep) = trained();
        assert!(rep.grad_check_rel_error < 1e-5, "{}", rep.grad_check_rel_error);
        assert!(clf.accuracy(&x, &y).unwrap() >= 0.99);
        let p = clf.probabilities(&x).unwrap();
        for row in p.chunks(2) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_class_rejected() {
        let x = Tensor::zeros(&[4, 2]);
        assert!(train_classifier(&x, &[1, 1, 1, 1], &ClassifierConfig::default(), &mut seeded(0)).is_err());
    }

    #[test]
    fn fgsm_respects_budget() {
        let (clf, x, y, _) = trained();
        let s = x.slice_first(0).unwrap();
        let mut b = AttackBudget {
            norm: AttackNorm::Linf,
            epsilon: 0.0,
            steps: 1,
            step_size: 0.1,
            clamp: None,
        };
        assert_eq!(fgsm(&clf, &s, y[0], &b).unwrap().adversarial, s);
        b.epsilon = 0.3;
        let adv = fgsm(&clf, &s, y[0], &b).unwrap().adversarial;
        let d = adv.sub(&s).unwrap();
        assert!(d.data().iter().all(|v| (v.abs() - 0.3).abs() < 1e-12));
        b.norm = AttackNorm::L2;
        let adv = pgd(&clf, &s, y[0], &b, &mut seeded(1)).unwrap().adversarial;
        assert!(adv.sub(&s).unwrap().frobenius_norm() <= 0.3 + 1e-12);
    }

    #[test]
    fn identity_defense_matches_no_defense() {
        let (clf, x, y, _) = trained();
        let budget = AttackBudget {
            norm: AttackNorm::Linf,
            epsilon: 2.0,
            steps: 5,
            step_size: 0.5,
            clamp: None,
        };
        let defenses = vec![("identity".to_string(), Defense::Identity)];
        let sched = Schedule::default();
        let t = evaluate(&clf, &defenses, &x, &y, &budget, AttackKind::Pgd, &ZeroDenoiser, &sched, 3).unwrap();
        assert_eq!(t.rows[0].robust_accuracy, t.attacked_accuracy);
        assert_eq!(t.rows[0].clean_accuracy, t.standard_accuracy);
        assert!(t.attacked_accuracy < t.standard_accuracy);
    }
}
