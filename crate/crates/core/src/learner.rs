//! Softmax regression / one-hidden-layer tanh classifier over flat
//! parameter vectors, with hand-written gradients.
//!
//! Parameter layout (row-major):
//! - `hidden == 0`: `W[L x d]`, `b[L]`
//! - `hidden > 0`: `W1[H x d]`, `b1[H]`, `W2[L x H]`, `b2[L]`

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::data::Dataset;
use crate::math::log_sum_exp;
use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LearnerError {
    #[error("learning rate must be positive and finite, got {0}")]
    InvalidLearningRate(f64),
    #[error("cannot evaluate on an empty test set")]
    EmptyEvaluationSet,
    #[error("loss probe must contain at least one sample")]
    EmptyProbe,
    #[error("non-finite loss encountered")]
    NonFinite,
    #[error("parameter vector has {got} values, shape expects {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("dataset has dim {data_dim} / {data_classes} classes, model expects {model_dim} / {model_classes}")]
    IncompatibleData {
        data_dim: usize,
        data_classes: usize,
        model_dim: usize,
        model_classes: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelShape {
    pub dim: usize,
    /// Hidden units; zero selects plain softmax regression.
    pub hidden: usize,
    pub classes: usize,
}

impl ModelShape {
    pub fn new(dim: usize, hidden: usize, classes: usize) -> Self {
        Self { dim, hidden, classes }
    }

    pub fn param_count(&self) -> usize {
        if self.hidden == 0 {
            self.classes * self.dim + self.classes
        } else {
            self.hidden * self.dim + self.hidden + self.classes * self.hidden + self.classes
        }
    }
}

/// Flat parameter vector of one server's model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    shape: ModelShape,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(shape: ModelShape) -> Self {
        Self {
            shape,
            values: vec![0.0; shape.param_count()],
        }
    }

    pub fn from_values(shape: ModelShape, values: Vec<f64>) -> Result<Self, LearnerError> {
        if values.len() != shape.param_count() {
            return Err(LearnerError::ShapeMismatch {
                expected: shape.param_count(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LearnerError::NonFinite);
        }
        Ok(Self { shape, values })
    }

    /// Xavier-uniform weights in `[-a, a]`, `a = sqrt(6 / (fan_in + fan_out))`;
    /// biases start at zero.
    pub fn xavier(shape: ModelShape, rng: &mut SimRng) -> Self {
        let mut p = Self::zeros(shape);
        let mut fill = |slice: &mut [f64], fan_in: usize, fan_out: usize| {
            let a = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
            for v in slice {
                *v = rng.random_range(-a..=a);
            }
        };
        let (d, h, l) = (shape.dim, shape.hidden, shape.classes);
        if h == 0 {
            fill(&mut p.values[..l * d], d, l);
        } else {
            fill(&mut p.values[..h * d], d, h);
            let w2 = h * d + h;
            fill(&mut p.values[w2..w2 + l * h], h, l);
        }
        p
    }

    pub fn shape(&self) -> ModelShape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn check_data(&self, ds: &Dataset) -> Result<(), LearnerError> {
        if ds.dim() != self.shape.dim || ds.n_classes() != self.shape.classes {
            return Err(LearnerError::IncompatibleData {
                data_dim: ds.dim(),
                data_classes: ds.n_classes(),
                model_dim: self.shape.dim,
                model_classes: self.shape.classes,
            });
        }
        Ok(())
    }

    /// Logits for one input; `hidden` receives the tanh activations.
    fn forward(&self, x: &[f64], hidden: &mut [f64], logits: &mut [f64]) {
        let ModelShape { dim: d, hidden: h, classes: l } = self.shape;
        let v = &self.values;
        if h == 0 {
            let (w, b) = v.split_at(l * d);
            for c in 0..l {
                logits[c] = b[c] + dot(&w[c * d..(c + 1) * d], x);
            }
        } else {
            let w1 = &v[..h * d];
            let b1 = &v[h * d..h * d + h];
            let w2 = &v[h * d + h..h * d + h + l * h];
            let b2 = &v[h * d + h + l * h..];
            for j in 0..h {
                hidden[j] = libm::tanh(b1[j] + dot(&w1[j * d..(j + 1) * d], x));
            }
            for c in 0..l {
                logits[c] = b2[c] + dot(&w2[c * h..(c + 1) * h], hidden);
            }
        }
    }

    /// Predicted class; ties go to the lowest index.
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut hidden = vec![0.0; self.shape.hidden];
        let mut logits = vec![0.0; self.shape.classes];
        self.forward(x, &mut hidden, &mut logits);
        argmax(&logits)
    }

    fn sample_loss(&self, x: &[f64], label: usize, hidden: &mut [f64], logits: &mut [f64]) -> f64 {
        self.forward(x, hidden, logits);
        log_sum_exp(logits) - logits[label]
    }

    /// Mean cross-entropy and its gradient over `idx`. Empty input gives
    /// zero loss and a zero gradient.
    pub fn loss_and_grad(&self, ds: &Dataset, idx: &[usize]) -> (f64, Vec<f64>) {
        let ModelShape { dim: d, hidden: h, classes: l } = self.shape;
        let mut grad = vec![0.0; self.values.len()];
        if idx.is_empty() {
            return (0.0, grad);
        }
        let mut hidden = vec![0.0; h];
        let mut logits = vec![0.0; l];
        let mut dhidden = vec![0.0; h];
        let mut total = 0.0;
        for &i in idx {
            let x = ds.features(i);
            let y = ds.label(i);
            self.forward(x, &mut hidden, &mut logits);
            let lse = log_sum_exp(&logits);
            total += lse - logits[y];
            // dL/dlogit = softmax - onehot
            for (c, z) in logits.iter_mut().enumerate() {
                *z = libm::exp(*z - lse) - if c == y { 1.0 } else { 0.0 };
            }
            if h == 0 {
                let (gw, gb) = grad.split_at_mut(l * d);
                for c in 0..l {
                    axpy(logits[c], x, &mut gw[c * d..(c + 1) * d]);
                    gb[c] += logits[c];
                }
            } else {
                let w2_at = h * d + h;
                let b2_at = w2_at + l * h;
                dhidden.iter_mut().for_each(|v| *v = 0.0);
                for c in 0..l {
                    let w2c = &self.values[w2_at + c * h..w2_at + (c + 1) * h];
                    axpy(logits[c], w2c, &mut dhidden);
                    axpy(logits[c], &hidden, &mut grad[w2_at + c * h..w2_at + (c + 1) * h]);
                    grad[b2_at + c] += logits[c];
                }
                for j in 0..h {
                    let pre = dhidden[j] * (1.0 - hidden[j] * hidden[j]);
                    axpy(pre, x, &mut grad[j * d..(j + 1) * d]);
                    grad[h * d + j] += pre;
                }
            }
        }
        let scale = 1.0 / idx.len() as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        (total * scale, grad)
    }

    /// Mean cross-entropy only.
    pub fn mean_loss(&self, ds: &Dataset, idx: &[usize]) -> f64 {
        if idx.is_empty() {
            return 0.0;
        }
        let mut hidden = vec![0.0; self.shape.hidden];
        let mut logits = vec![0.0; self.shape.classes];
        let total: f64 = idx
            .iter()
            .map(|&i| self.sample_loss(ds.features(i), ds.label(i), &mut hidden, &mut logits))
            .sum();
        total / idx.len() as f64
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate().skip(1) {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub steps: usize,
    pub mean_loss: f64,
    pub params_out: ModelParams,
    /// Set when a non-finite loss or gradient aborted training; the input
    /// parameters are returned unchanged in that case.
    pub diverged: bool,
}

/// Mini-batch gradient descent on mean cross-entropy.
pub fn local_train(
    params: &ModelParams,
    ds: &Dataset,
    idx: &[usize],
    opts: TrainOptions,
    rng: &mut SimRng,
) -> Result<TrainReport, LearnerError> {
    if !(opts.lr > 0.0 && opts.lr.is_finite()) {
        return Err(LearnerError::InvalidLearningRate(opts.lr));
    }
    params.check_data(ds)?;
    let mut out = params.clone();
    if idx.is_empty() {
        return Ok(TrainReport {
            steps: 0,
            mean_loss: 0.0,
            params_out: out,
            diverged: false,
        });
    }
    let batch = opts.batch.max(1);
    let mut order = idx.to_vec();
    let mut steps = 0;
    let mut loss_sum = 0.0;
    for _ in 0..opts.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch) {
            let (loss, grad) = out.loss_and_grad(ds, chunk);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                log::warn!("local training diverged after {steps} steps; keeping input parameters");
                return Ok(TrainReport {
                    steps,
                    mean_loss: 0.0,
                    params_out: params.clone(),
                    diverged: true,
                });
            }
            axpy(-opts.lr, &grad, &mut out.values);
            loss_sum += loss;
            steps += 1;
        }
    }
    if !out.is_finite() {
        log::warn!("local training produced non-finite parameters; keeping input parameters");
        return Ok(TrainReport {
            steps,
            mean_loss: 0.0,
            params_out: params.clone(),
            diverged: true,
        });
    }
    Ok(TrainReport {
        steps,
        mean_loss: if steps == 0 { 0.0 } else { loss_sum / steps as f64 },
        params_out: out,
        diverged: false,
    })
}

/// Argmax accuracy over the whole test set.
pub fn evaluate_accuracy(params: &ModelParams, test: &Dataset) -> Result<f64, LearnerError> {
    accuracy_on(params, test, &test.all_indices())
}

pub fn accuracy_on(params: &ModelParams, ds: &Dataset, idx: &[usize]) -> Result<f64, LearnerError> {
    if idx.is_empty() {
        return Err(LearnerError::EmptyEvaluationSet);
    }
    params.check_data(ds)?;
    let correct = idx
        .iter()
        .filter(|&&i| params.predict(ds.features(i)) == ds.label(i))
        .count();
    Ok(correct as f64 / idx.len() as f64)
}

/// Cross-entropy of every probe sample, forward pass only.
pub fn per_sample_losses(params: &ModelParams, ds: &Dataset, probe: &[usize]) -> Result<Vec<f64>, LearnerError> {
    if probe.is_empty() {
        return Err(LearnerError::EmptyProbe);
    }
    params.check_data(ds)?;
    let mut hidden = vec![0.0; params.shape.hidden];
    let mut logits = vec![0.0; params.shape.classes];
    let losses: Vec<f64> = probe
        .iter()
        .map(|&i| params.sample_loss(ds.features(i), ds.label(i), &mut hidden, &mut logits))
        .collect();
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(LearnerError::NonFinite);
    }
    Ok(losses)
}

/// Maximum relative error between the analytic gradient and central finite
/// differences on up to 50 random coordinates.
pub fn gradient_check(params: &ModelParams, ds: &Dataset, idx: &[usize], epsilon: f64, rng: &mut SimRng) -> f64 {
    assert!(epsilon > 0.0, "epsilon must be positive");
    let (_, analytic) = params.loss_and_grad(ds, idx);
    let n = params.values.len();
    let coords = index::sample(rng, n, n.min(50));
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for c in coords {
        let orig = probe.values[c];
        probe.values[c] = orig + epsilon;
        let up = probe.mean_loss(ds, idx);
        probe.values[c] = orig - epsilon;
        let down = probe.mean_loss(ds, idx);
        probe.values[c] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        let diff = libm::fabs(numeric - analytic[c]);
        let scale = libm::fabs(numeric).max(libm::fabs(analytic[c])).max(1e-8);
        worst = worst.max(if diff == 0.0 { 0.0 } else { diff / scale });
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic_dataset, Dataset};
    use crate::rng::{stream, Stream};

    fn rng(seed: u64) -> SimRng {
        stream(seed, Stream::Learner, 0, 0)
    }

    fn two_class_toy() -> Dataset {
        // Separable by the sign of the first coordinate, margin 1.
        let mut f = Vec::new();
        let mut l = Vec::new();
        let mut r = rng(99);
        for i in 0..100 {
            let y = i % 2;
            let x0 = if y == 1 { 1.0 + r.random::<f64>() } else { -1.0 - r.random::<f64>() };
            f.extend([x0, r.random_range(-1.0..1.0)]);
            l.push(y);
        }
        Dataset::new(f, l, 2, 2).unwrap()
    }

    #[test]
    fn param_counts() {
        assert_eq!(ModelShape::new(8, 0, 4).param_count(), 36);
        assert_eq!(ModelShape::new(8, 5, 4).param_count(), 40 + 5 + 20 + 4);
    }

    #[test]
    fn empty_data_leaves_params() {
        let ds = two_class_toy();
        let p = ModelParams::xavier(ModelShape::new(2, 0, 2), &mut rng(1));
        let opts = TrainOptions { lr: 0.1, epochs: 3, batch: 8 };
        let rep = local_train(&p, &ds, &[], opts, &mut rng(2)).unwrap();
        assert_eq!(rep.steps, 0);
        assert_eq!(rep.params_out, p);
    }

    #[test]
    fn rejects_non_positive_lr() {
        let ds = two_class_toy();
        let p = ModelParams::zeros(ModelShape::new(2, 0, 2));
        let opts = TrainOptions { lr: 0.0, epochs: 1, batch: 8 };
        assert!(matches!(
            local_train(&p, &ds, &[0, 1], opts, &mut rng(2)),
            Err(LearnerError::InvalidLearningRate(_))
        ));
    }

    #[test]
    fn separable_toy_is_learned() {
        let ds = two_class_toy();
        for hidden in [0, 4] {
            let p = ModelParams::xavier(ModelShape::new(2, hidden, 2), &mut rng(3));
            let idx = ds.all_indices();
            // 100 samples / batch 10 = 10 steps per epoch, 200 steps
            let opts = TrainOptions { lr: 0.5, epochs: 20, batch: 10 };
            let rep = local_train(&p, &ds, &idx, opts, &mut rng(4)).unwrap();
            assert_eq!(rep.steps, 200);
            assert!(accuracy_on(&rep.params_out, &ds, &idx).unwrap() >= 0.95);
        }
    }

    #[test]
    fn tiny_step_respects_update_bound() {
        let ds = two_class_toy();
        let p = ModelParams::xavier(ModelShape::new(2, 3, 2), &mut rng(5));
        let idx: Vec<usize> = (0..10).collect();
        let lr = 1e-12;
        let (_, grad) = p.loss_and_grad(&ds, &idx);
        let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let opts = TrainOptions { lr, epochs: 1, batch: 10 };
        let rep = local_train(&p, &ds, &idx, opts, &mut rng(6)).unwrap();
        assert_eq!(rep.steps, 1);
        let dmax = p
            .values()
            .iter()
            .zip(rep.params_out.values())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(dmax <= lr * gmax * (1.0 + 1e-6) + f64::EPSILON);
    }

    #[test]
    fn constant_predictor_accuracy() {
        let ds = Dataset::new(vec![0.3, -2.0, 5.0], vec![0, 0, 0], 3, 1).unwrap();
        let mut p = ModelParams::zeros(ModelShape::new(1, 0, 3));
        // bias for class 0
        p.values_mut()[3] = 1.0;
        assert_eq!(evaluate_accuracy(&p, &ds).unwrap(), 1.0);
        // all-zero logits: tie broken toward class 0
        let z = ModelParams::zeros(ModelShape::new(1, 0, 3));
        assert_eq!(evaluate_accuracy(&z, &ds).unwrap(), 1.0);
        assert!(matches!(accuracy_on(&p, &ds, &[]), Err(LearnerError::EmptyEvaluationSet)));
    }

    #[test]
    fn random_params_are_near_chance() {
        let ds = gen_synthetic_dataset(4, 8, 2000, &mut rng(7));
        let mut accs = Vec::new();
        for s in 0..20 {
            let mut p = ModelParams::zeros(ModelShape::new(8, 0, 4));
            let mut r = rng(100 + s);
            for v in p.values_mut() {
                *v = r.random_range(-1.0..1.0);
            }
            accs.push(evaluate_accuracy(&p, &ds).unwrap());
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        assert!((mean - 0.25).abs() <= 0.05, "{mean}");
    }

    #[test]
    fn accuracy_is_deterministic() {
        let ds = gen_synthetic_dataset(3, 4, 50, &mut rng(8));
        let p = ModelParams::xavier(ModelShape::new(4, 2, 3), &mut rng(9));
        assert_eq!(evaluate_accuracy(&p, &ds).unwrap(), evaluate_accuracy(&p, &ds).unwrap());
    }

    #[test]
    fn saturated_and_uniform_losses() {
        let ds = Dataset::new(vec![1.0, 1.0, 1.0], vec![0, 1, 2], 3, 1).unwrap();
        let mut p = ModelParams::zeros(ModelShape::new(1, 0, 3));
        let uniform = per_sample_losses(&p, &ds, &[0, 1, 2]).unwrap();
        for l in uniform {
            assert!((l - libm::log(3.0)).abs() < 1e-15);
        }
        // logit margin 25 for class 0
        p.values_mut()[0] = 25.0;
        let conf = per_sample_losses(&p, &ds, &[0]).unwrap();
        assert_eq!(conf.len(), 1);
        assert!(conf[0] <= 1e-6);
        assert!(matches!(per_sample_losses(&p, &ds, &[]), Err(LearnerError::EmptyProbe)));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let ds = gen_synthetic_dataset(3, 5, 20, &mut rng(10));
        let idx = ds.all_indices();
        for hidden in [0, 6] {
            let p = ModelParams::xavier(ModelShape::new(5, hidden, 3), &mut rng(11));
            let err = gradient_check(&p, &ds, &idx, 1e-5, &mut rng(12));
            assert!(err <= 1e-4, "hidden={hidden}: {err}");
        }
        let p = ModelParams::xavier(ModelShape::new(5, 2, 3), &mut rng(13));
        assert_eq!(gradient_check(&p, &ds, &[], 1e-5, &mut rng(14)), 0.0);
    }

    #[test]
    fn full_batch_descent_reduces_loss() {
        let ds = gen_synthetic_dataset(4, 8, 100, &mut rng(15));
        let idx = ds.all_indices();
        let p = ModelParams::xavier(ModelShape::new(8, 8, 4), &mut rng(16));
        let before = p.mean_loss(&ds, &idx);
        let opts = TrainOptions { lr: 1e-3, epochs: 100, batch: idx.len() };
        let rep = local_train(&p, &ds, &idx, opts, &mut rng(17)).unwrap();
        assert!(rep.params_out.mean_loss(&ds, &idx) < before);
    }

    #[test]
    fn pooled_synthetic_task_is_separable() {
        let ds = gen_synthetic_dataset(4, 8, 500, &mut rng(18));
        let idx = ds.all_indices();
        let p = ModelParams::zeros(ModelShape::new(8, 0, 4));
        let opts = TrainOptions { lr: 0.1, epochs: 30, batch: 32 };
        let rep = local_train(&p, &ds, &idx, opts, &mut rng(19)).unwrap();
        assert!(evaluate_accuracy(&rep.params_out, &ds).unwrap() > 0.9);
    }
}
