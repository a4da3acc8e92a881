//! Multinomial linear-softmax classifier trained with cross-entropy and Adam.
//!
//! This is the only learned component: each item model, the router and every
//! expert are instances of [`LinearSoftmaxModel`].

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Probabilities are clamped to this value before taking the log.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// Affine map followed by softmax.
///
/// Parameters are stored in one flat buffer: the `class_count x input_dim`
/// weight matrix in row-major order, then `class_count` biases. Gradients and
/// Adam moments share this layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSoftmaxModel<T> {
    class_count: usize,
    input_dim: usize,
    params: Vec<T>,
}

impl<T: Scalar> LinearSoftmaxModel<T> {
    /// All-zero model; predicts the uniform distribution.
    pub fn zeros(class_count: usize, input_dim: usize) -> Result<Self> {
        if class_count < 2 {
            return Err(Error::domain(format!("class_count {class_count} < 2")));
        }
        if input_dim == 0 {
            return Err(Error::domain("input_dim must be positive"));
        }
        Ok(LinearSoftmaxModel {
            class_count,
            input_dim,
            params: vec![T::zero(); class_count * (input_dim + 1)],
        })
    }

    /// `weights` is row-major `class_count x input_dim`.
    pub fn from_parts(class_count: usize, input_dim: usize, weights: Vec<T>, bias: Vec<T>) -> Result<Self> {
        let mut m = Self::zeros(class_count, input_dim)?;
        if weights.len() != class_count * input_dim || bias.len() != class_count {
            return Err(Error::domain(format!(
                "parameter shapes ({}, {}) do not match {class_count} classes x {input_dim} inputs",
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|p| !p.is_finite()) {
            return Err(Error::numeric("model parameters must be finite"));
        }
        m.params = weights;
        m.params.extend(bias);
        Ok(m)
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn weights(&self) -> &[T] {
        &self.params[..self.class_count * self.input_dim]
    }

    pub fn bias(&self) -> &[T] {
        &self.params[self.class_count * self.input_dim..]
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    fn weight_row(&self, c: usize) -> &[T] {
        &self.params[c * self.input_dim..(c + 1) * self.input_dim]
    }

    /// Checks model invariants after deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 || self.input_dim == 0 {
            return Err(Error::domain("model must have >= 2 classes and a positive input dimension"));
        }
        if self.params.len() != self.class_count * (self.input_dim + 1) {
            return Err(Error::domain("parameter buffer length does not match model shape"));
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::numeric("model parameters must be finite"));
        }
        Ok(())
    }

    pub fn logits(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.input_dim {
            return Err(Error::domain(format!(
                "input has {} components, model expects {}",
                x.len(),
                self.input_dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("input contains non-finite values"));
        }
        let bias = self.bias();
        Ok((0..self.class_count)
            .map(|c| {
                let row = self.weight_row(c);
                row.iter().zip(x).fold(bias[c], |acc, (&w, &xi)| acc + w * xi)
            })
            .collect())
    }

    pub fn predict_proba(&self, x: &[T]) -> Result<Vec<T>> {
        softmax(&self.logits(x)?)
    }

    /// Most probable class, lowest index on ties.
    pub fn predict_class(&self, x: &[T]) -> Result<usize> {
        Ok(argmax(&self.predict_proba(x)?))
    }
}

/// Free-function form of [`LinearSoftmaxModel::predict_proba`].
pub fn predict_proba<T: Scalar>(model: &LinearSoftmaxModel<T>, x: &[T]) -> Result<Vec<T>> {
    model.predict_proba(x)
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax<T: Scalar>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax<T: Scalar>(logits: &[T]) -> Result<Vec<T>> {
    if logits.len() < 2 {
        return Err(Error::domain(format!("softmax needs >= 2 logits, got {}", logits.len())));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("softmax input contains non-finite values"));
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `-ln p[true_class]`, with `p` floored at [`PROBABILITY_FLOOR`].
pub fn cross_entropy<T: Scalar>(probabilities: &[T], true_class: usize) -> Result<T> {
    let p = probabilities.get(true_class).copied().ok_or_else(|| {
        Error::domain(format!(
            "class {true_class} out of range for {} probabilities",
            probabilities.len()
        ))
    })?;
    Ok(-p.max(T::lit(PROBABILITY_FLOOR)).ln())
}

pub fn loss<T: Scalar>(model: &LinearSoftmaxModel<T>, x: &[T], true_class: usize) -> Result<T> {
    cross_entropy(&model.predict_proba(x)?, true_class)
}

/// Gradient buffer laid out like [`LinearSoftmaxModel::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    class_count: usize,
    input_dim: usize,
    values: Vec<T>,
}

impl<T: Scalar> Gradients<T> {
    fn zeros_like(model: &LinearSoftmaxModel<T>) -> Self {
        Gradients {
            class_count: model.class_count,
            input_dim: model.input_dim,
            values: vec![T::zero(); model.params.len()],
        }
    }

    pub fn weights(&self) -> &[T] {
        &self.values[..self.class_count * self.input_dim]
    }

    pub fn bias(&self) -> &[T] {
        &self.values[self.class_count * self.input_dim..]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Adds `scale * d loss / d params` for one sample.
    fn accumulate(&mut self, probs: &[T], x: &[T], true_class: usize, scale: T) {
        let d = self.input_dim;
        let bias_offset = self.class_count * d;
        for (c, &p) in probs.iter().enumerate() {
            let delta = if c == true_class { p - T::one() } else { p } * scale;
            for (g, &xi) in self.values[c * d..(c + 1) * d].iter_mut().zip(x) {
                *g = *g + delta * xi;
            }
            self.values[bias_offset + c] = self.values[bias_offset + c] + delta;
        }
    }
}

/// Analytic cross-entropy gradient for a single sample.
///
/// Weight row `c` is `(p_c - [c == y]) * x`; the bias gradient is `p - onehot(y)`.
/// The floor in [`cross_entropy`] is ignored here; it only matters once a
/// probability has underflowed below 1e-12.
pub fn grad<T: Scalar>(model: &LinearSoftmaxModel<T>, x: &[T], true_class: usize) -> Result<Gradients<T>> {
    if true_class >= model.class_count {
        return Err(Error::domain(format!(
            "class {true_class} out of range for {} classes",
            model.class_count
        )));
    }
    let probs = model.predict_proba(x)?;
    let mut g = Gradients::zeros_like(model);
    g.accumulate(&probs, x, true_class, T::one());
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState<T> {
    pub first_moment: Vec<T>,
    pub second_moment: Vec<T>,
    pub step_count: u64,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
}

impl<T: Scalar> AdamState<T> {
    /// Zero moments with beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8.
    pub fn new(len: usize) -> Self {
        AdamState {
            first_moment: vec![T::zero(); len],
            second_moment: vec![T::zero(); len],
            step_count: 0,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            epsilon: T::lit(1e-8),
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step<T: Scalar>(params: &mut [T], grads: &[T], state: &mut AdamState<T>, learning_rate: T) -> Result<()> {
    let n = params.len();
    if grads.len() != n || state.first_moment.len() != n || state.second_moment.len() != n {
        return Err(Error::domain(format!(
            "shape mismatch: {n} params, {} grads, moments {}/{}",
            grads.len(),
            state.first_moment.len(),
            state.second_moment.len()
        )));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let correction1 = T::one() - b1.powi(t);
    let correction2 = T::one() - b2.powi(t);
    for i in 0..n {
        let g = grads[i];
        let m = b1 * state.first_moment[i] + (T::one() - b1) * g;
        let v = b2 * state.second_moment[i] + (T::one() - b2) * g * g;
        state.first_moment[i] = m;
        state.second_moment[i] = v;
        let m_hat = m / correction1;
        let v_hat = v / correction2;
        params[i] = params[i] - learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            epochs: 5,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Item-model settings: lr 0.001, 5 epochs.
    pub fn bottom_up(seed: u64) -> Self {
        TrainConfig { seed, ..Default::default() }
    }

    /// Router and expert settings: lr 0.001, 10 epochs.
    pub fn top_down(seed: u64) -> Self {
        TrainConfig {
            epochs: 10,
            seed,
            ..Default::default()
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        TrainConfig { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::domain(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::domain("epochs and batch_size must be >= 1"));
        }
        Ok(())
    }
}

/// Labelled training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub features: Vec<T>,
    pub label: usize,
}

impl<T> Sample<T> {
    pub fn new(features: Vec<T>, label: usize) -> Self {
        Sample { features, label }
    }
}

/// Trains a model from zero initialization with mini-batch Adam.
///
/// Each epoch visits the samples in an order drawn from a ChaCha8 generator
/// seeded with `config.seed`; the result is a pure function of the inputs.
pub fn train<T: Scalar>(class_count: usize, samples: &[Sample<T>], config: &TrainConfig) -> Result<LinearSoftmaxModel<T>> {
    config.validate()?;
    let first = samples.first().ok_or_else(|| Error::domain("no training samples"))?;
    let dim = first.features.len();
    let mut model = LinearSoftmaxModel::zeros(class_count, dim)?;
    for (i, s) in samples.iter().enumerate() {
        if s.label >= class_count {
            return Err(Error::domain(format!(
                "sample {i} has label {} but class_count is {class_count}",
                s.label
            )));
        }
        if s.features.len() != dim {
            return Err(Error::domain(format!(
                "sample {i} has {} features, expected {dim}",
                s.features.len()
            )));
        }
        if s.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("sample {i} has non-finite features")));
        }
    }

    let lr = T::lit(config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = AdamState::new(model.params.len());
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut g = Gradients::zeros_like(&model);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            g.values.iter_mut().for_each(|v| *v = T::zero());
            let scale = T::one() / T::lit(batch.len() as f64);
            for &i in batch {
                let s = &samples[i];
                let probs = model.predict_proba(&s.features)?;
                g.accumulate(&probs, &s.features, s.label, scale);
            }
            adam_step(&mut model.params, &g.values, &mut state, lr)?;
        }
    }
    Ok(model)
}

/// Fraction of samples whose argmax class equals the label.
pub fn accuracy<T: Scalar>(model: &LinearSoftmaxModel<T>, samples: &[Sample<T>]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::domain("accuracy of an empty sample set"));
    }
    let mut hits = 0usize;
    for s in samples {
        if model.predict_class(&s.features)? == s.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0f64; 4]).unwrap(), vec![0.25; 4]);

        // e^1, e^2, e^3 normalised, evaluated directly.
        let e: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|x| x.exp()).collect();
        let z: f64 = e.iter().sum();
        let p = softmax(&[1.0f64, 2.0, 3.0]).unwrap();
        for (pi, ei) in p.iter().zip(&e) {
            assert_abs_diff_eq!(*pi, ei / z, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(p[0], 0.0900, epsilon = 1e-4);
        assert_abs_diff_eq!(p[1], 0.2447, epsilon = 1e-4);
        assert_abs_diff_eq!(p[2], 0.6652, epsilon = 1e-4);

        let p = softmax(&[1000.0f64, 0.0]).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn softmax_rejects_bad_input() {
        assert!(matches!(softmax(&[1.0f64, f64::NAN]), Err(Error::Numeric(_))));
        assert!(matches!(softmax(&[1.0f64]), Err(Error::Domain(_))));
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&[1.0f64, 0.0], 0).unwrap(), 0.0);
        assert_abs_diff_eq!(cross_entropy(&[0.5f64, 0.5], 1).unwrap(), 2f64.ln(), epsilon = 1e-15);
        assert_eq!(cross_entropy(&[1e-15f64, 1.0 - 1e-15], 0).unwrap(), -(1e-12f64).ln());
        assert!(cross_entropy(&[0.5f64, 0.5], 2).is_err());
    }

    #[test]
    fn gradient_vanishes_at_onehot_and_bias_sums_to_zero() {
        // Huge bias makes p numerically onehot.
        let m = LinearSoftmaxModel::from_parts(3, 2, vec![0.0f64; 6], vec![0.0, 800.0, 0.0]).unwrap();
        let g = grad(&m, &[0.3, -0.2], 1).unwrap();
        assert!(g.values().iter().all(|&v| v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let w: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let m = LinearSoftmaxModel::from_parts(4, 3, w, b).unwrap();
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let g = grad(&m, &x, rng.random_range(0..4)).unwrap();
            assert_abs_diff_eq!(g.bias().iter().sum::<f64>(), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut p = vec![1.0f64, -2.0, 3.5];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &[0.0; 3], &mut s, 0.001).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        for g in [0.5f64, -3.0, 1e-2, 42.0] {
            let mut p = vec![0.0f64; 4];
            let mut s = AdamState::new(4);
            adam_step(&mut p, &[g; 4], &mut s, 0.001).unwrap();
            for v in p {
                assert_abs_diff_eq!(v.abs(), 0.001, epsilon = 1e-6);
                assert_eq!(v.signum(), -g.signum());
            }
        }
    }

    #[test]
    fn adam_is_deterministic_and_checks_shapes() {
        let run = || {
            let mut p = vec![0.1f64, 0.2];
            let mut s = AdamState::new(2);
            for _ in 0..5 {
                adam_step(&mut p, &[0.3, -0.7], &mut s, 0.01).unwrap();
            }
            (p, s)
        };
        assert_eq!(run(), run());
        let mut s = AdamState::<f64>::new(2);
        assert!(adam_step(&mut [0.0; 3], &[0.0; 3], &mut s, 0.1).is_err());
    }

    #[test]
    fn zero_model_predicts_uniform() {
        let m = LinearSoftmaxModel::<f64>::zeros(5, 64).unwrap();
        let p = m.predict_proba(&vec![3.0; 64]).unwrap();
        assert!(p.iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn predict_proba_matches_manual_affine_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let (c, d) = (rng.random_range(2..6), rng.random_range(1..10));
            let w: Vec<f64> = (0..c * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            let m = LinearSoftmaxModel::from_parts(c, d, w.clone(), b.clone()).unwrap();
            let manual: Vec<f64> = (0..c)
                .map(|k| b[k] + (0..d).map(|j| w[k * d + j] * x[j]).sum::<f64>())
                .collect();
            let expected: Vec<f64> = {
                let e: Vec<f64> = manual.iter().map(|z| z.exp()).collect();
                let s: f64 = e.iter().sum();
                e.iter().map(|v| v / s).collect()
            };
            let got = m.predict_proba(&x).unwrap();
            for (a, b) in got.iter().zip(&expected) {
                assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
            }
            assert_abs_diff_eq!(got.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn train_rejects_bad_inputs() {
        let cfg = TrainConfig::default();
        assert!(train::<f64>(2, &[], &cfg).is_err());
        assert!(train(2, &[Sample::new(vec![1.0f64], 2)], &cfg).is_err());
        let bad = TrainConfig { epochs: 0, ..cfg };
        assert!(train(2, &[Sample::new(vec![1.0f64], 0)], &bad).is_err());
    }

    #[test]
    fn single_class_data_predicts_that_class() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let samples: Vec<Sample<f64>> = (0..100)
            .map(|_| Sample::new((0..64).map(|_| rng.random_range(-1.0..1.0)).collect(), 0))
            .collect();
        let cfg = TrainConfig { epochs: 500, ..Default::default() };
        let m = train(2, &samples, &cfg).unwrap();
        assert_eq!(accuracy(&m, &samples).unwrap(), 1.0);
    }

    #[test]
    fn f32_models_train_too() {
        let samples: Vec<Sample<f32>> = (0..64)
            .map(|i| {
                let label = i % 2;
                let mut x = vec![0.0f32; 8];
                x[0] = if label == 1 { 1.0 } else { -1.0 };
                Sample::new(x, label)
            })
            .collect();
        let cfg = TrainConfig { epochs: 20, ..Default::default() };
        let m = train(2, &samples, &cfg).unwrap();
        assert_eq!(accuracy(&m, &samples).unwrap(), 1.0);
    }
}
