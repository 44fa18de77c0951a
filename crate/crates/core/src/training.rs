//! Cost function, weight decay, Adam, the mini-batch epoch loop and the
//! finite-difference gradient check.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::dataset::Window;
use crate::error::{HarError, Result};
use crate::numerics::{SeededRng, Vector};
use crate::recurrent::{
    network_backward, network_forward, predict, Aggregation, Gradients, NetworkParams, TensorKind, DEFAULT_HIDDEN,
    INPUT_CHANNELS, NUM_CLASSES,
};
use crate::reference::{reference_loss, DoubleDouble, Real};

/// Probabilities are clamped to this floor before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparameters {
    /// Samples per window.
    pub window_size: usize,
    /// Offset between consecutive window starts.
    pub stride: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Weight-decay coefficient on non-bias parameters.
    pub l2_coeff: f64,
    /// Units per LSTM layer.
    pub hidden: usize,
    /// Number of stacked LSTM layers. Always 2.
    pub layers: usize,
    pub seed: u64,
    pub aggregation: Aggregation,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            window_size: 180,
            stride: 100,
            batch_size: 64,
            epochs: 75,
            learning_rate: 0.0025,
            l2_coeff: 0.0015,
            hidden: DEFAULT_HIDDEN,
            layers: 2,
            seed: 42,
            aggregation: Aggregation::Sum,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarError::InvalidHyperparameter(m.to_string()));
        if self.window_size == 0 || self.stride == 0 || self.batch_size == 0 || self.hidden == 0 {
            return bad("window_size, stride, batch_size and hidden must be at least 1");
        }
        if self.layers != 2 {
            return bad("the network has exactly 2 LSTM layers");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.l2_coeff >= 0.0 && self.l2_coeff.is_finite()) {
            return bad("l2_coeff must be non-negative");
        }
        Ok(())
    }
}

/// `-(1/B) Σ ln p_b[label_b]` with probabilities floored at [`PROB_FLOOR`].
pub fn mean_cross_entropy(probs_batch: &[Vector], labels: &[usize]) -> Result<f64> {
    if probs_batch.is_empty() {
        return Err(HarError::EmptyBatch);
    }
    if probs_batch.len() != labels.len() {
        return Err(HarError::LengthMismatch {
            left: labels.len(),
            right: probs_batch.len(),
        });
    }
    let mut total = 0.0;
    for (p, &y) in probs_batch.iter().zip(labels) {
        let py = *p.data.get(y).ok_or(HarError::LabelOutOfRange(y))?;
        total -= py.max(PROB_FLOOR).ln();
    }
    Ok(total / probs_batch.len() as f64)
}

/// `coeff/2 · Σθ²` over weights and peepholes, and its gradient. Biases are exempt.
pub fn l2_penalty(np: &NetworkParams, coeff: f64) -> (f64, Gradients) {
    let mut grad = np.zeros_like();
    let mut loss = 0.0;
    if coeff == 0.0 {
        return (0.0, grad);
    }
    for (src, dst) in np.tensors().into_iter().zip(grad.tensors_mut()) {
        if src.kind == TensorKind::Bias {
            continue;
        }
        for (g, &w) in dst.data.iter_mut().zip(src.data) {
            loss += w * w;
            *g = coeff * w;
        }
    }
    (0.5 * coeff * loss, grad)
}

/// Adam moments and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: NetworkParams,
    pub v: NetworkParams,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &NetworkParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(state: &mut AdamState, params: &mut NetworkParams, grads: &Gradients, lr: f64) -> Result<()> {
    if lr.is_nan() || lr <= 0.0 {
        return Err(HarError::InvalidHyperparameter(format!(
            "learning rate {lr} must be positive"
        )));
    }
    let grad_tensors = grads.tensors();
    let shapes_match = |a: &NetworkParams| {
        a.tensors()
            .iter()
            .zip(&grad_tensors)
            .all(|(x, y)| x.data.len() == y.data.len())
            && a.tensors().len() == grad_tensors.len()
    };
    if !shapes_match(params) || !shapes_match(&state.m) {
        return Err(HarError::ShapeMismatch {
            op: "adam_step",
            left: (params.hidden(), params.input_size()),
            right: (grads.hidden(), grads.input_size()),
        });
    }
    if let Some(t) = grad_tensors.iter().find(|t| t.data.iter().any(|v| !v.is_finite())) {
        return Err(HarError::NonFiniteGradient(t.name.clone()));
    }

    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let bc1 = 1.0 - b1.powi(state.t as i32);
    let bc2 = 1.0 - b2.powi(state.t as i32);
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grad_tensors)
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut())
    {
        for (((w, &gi), mi), vi) in p
            .data
            .iter_mut()
            .zip(g.data)
            .zip(m.data.iter_mut())
            .zip(v.data.iter_mut())
        {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Summary of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
}

impl EpochStats {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,train_acc,test_loss,test_acc";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.epoch, self.train_loss, self.train_acc, self.test_loss, self.test_acc
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub wall_time: Duration,
}

impl TrainReport {
    /// Epoch history as CSV with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(EpochStats::CSV_HEADER);
        out.push('\n');
        for e in &self.epochs {
            out.push_str(&e.csv_row());
            out.push('\n');
        }
        out
    }

    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }
}

/// Mean cross-entropy and accuracy of a window set, with per-window
/// predictions in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
}

pub fn evaluate(np: &NetworkParams, windows: &[Window], aggregation: Aggregation) -> Result<Evaluation> {
    if windows.is_empty() {
        return Ok(Evaluation {
            loss: f64::NAN,
            accuracy: f64::NAN,
            predictions: Vec::new(),
        });
    }
    let probs: Vec<Vector> = windows
        .par_iter()
        .map(|w| predict(np, &w.values, aggregation))
        .collect::<Result<_>>()?;
    let labels: Vec<usize> = windows.iter().map(|w| w.label.index()).collect();
    let loss = mean_cross_entropy(&probs, &labels)?;
    let predictions: Vec<usize> = probs.iter().map(Vector::argmax).collect();
    let correct = predictions.iter().zip(&labels).filter(|(p, y)| p == y).count();
    Ok(Evaluation {
        loss,
        accuracy: correct as f64 / windows.len() as f64,
        predictions,
    })
}

/// Mean data loss and mean gradient over a batch. Per-window work runs in
/// parallel; the reduction is sequential in batch order.
pub fn batch_gradient(np: &NetworkParams, batch: &[&Window], aggregation: Aggregation) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(HarError::EmptyBatch);
    }
    let parts: Vec<(f64, Gradients)> = batch
        .par_iter()
        .map(|w| {
            let (_, trace) = network_forward(np, &w.values, aggregation)?;
            let label = w.label.index();
            let loss = trace.probs.data[label].max(PROB_FLOOR).ln();
            Ok((-loss, network_backward(np, &trace, label)?))
        })
        .collect::<Result<_>>()?;
    let mut grad = np.zeros_like();
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        grad.axpy(1.0, g);
    }
    let inv = 1.0 / batch.len() as f64;
    grad.scale(inv);
    Ok((loss * inv, grad))
}

/// Freshly initialised network for these hyperparameters, drawing from `rng`.
pub fn initial_params(hp: &Hyperparameters, rng: &mut SeededRng) -> Result<NetworkParams> {
    NetworkParams::init(INPUT_CHANNELS, hp.hidden, NUM_CLASSES, rng)
}

pub fn train(
    train_windows: &[Window],
    test_windows: &[Window],
    hp: &Hyperparameters,
) -> Result<(NetworkParams, TrainReport)> {
    train_with_progress(train_windows, test_windows, hp, |_| {})
}

/// Same as [`train`], calling `on_epoch` after each epoch.
pub fn train_with_progress<F: FnMut(&EpochStats)>(
    train_windows: &[Window],
    test_windows: &[Window],
    hp: &Hyperparameters,
    mut on_epoch: F,
) -> Result<(NetworkParams, TrainReport)> {
    hp.validate()?;
    if train_windows.is_empty() {
        return Err(HarError::EmptyInput("training windows"));
    }
    for w in train_windows.iter().chain(test_windows) {
        if w.values.len() != hp.window_size {
            return Err(HarError::WindowLength {
                got: w.values.len(),
                expected: hp.window_size,
            });
        }
    }

    let start = Instant::now();
    let mut rng = SeededRng::new(hp.seed);
    let mut params = initial_params(hp, &mut rng)?;
    let mut adam = AdamState::new(&params);
    let mut order: Vec<usize> = (0..train_windows.len()).collect();
    let mut report = TrainReport::default();

    for epoch in 1..=hp.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(hp.batch_size) {
            let batch: Vec<&Window> = chunk.iter().map(|&i| &train_windows[i]).collect();
            let (_, mut grad) = batch_gradient(&params, &batch, hp.aggregation)?;
            let (_, decay) = l2_penalty(&params, hp.l2_coeff);
            grad.axpy(1.0, &decay);
            adam_step(&mut adam, &mut params, &grad, hp.learning_rate)?;
        }
        let tr = evaluate(&params, train_windows, hp.aggregation)?;
        let te = evaluate(&params, test_windows, hp.aggregation)?;
        let stats = EpochStats {
            epoch,
            train_loss: tr.loss,
            train_acc: tr.accuracy,
            test_loss: te.loss,
            test_acc: te.accuracy,
        };
        on_epoch(&stats);
        report.epochs.push(stats);
    }
    report.wall_time = start.elapsed();
    Ok((params, report))
}

/// Largest relative difference between `analytic` and central finite
/// differences of the window loss, over every parameter. The loss is
/// evaluated in double-double precision so that small gradient entries are
/// not swamped by f64 rounding. The denominator is
/// `max(|a|, |b|, 1e-8)`.
pub fn gradient_check_against<R: AsRef<[f64]>>(
    np: &NetworkParams,
    window: &[R],
    label: usize,
    step: f64,
    aggregation: Aggregation,
    analytic: &Gradients,
) -> Result<f64> {
    let mut probe = np.clone();
    let analytic_tensors = analytic.tensors();
    let mut worst = 0.0f64;
    for (ti, tensor) in analytic_tensors.iter().enumerate() {
        for (k, &a) in tensor.data.iter().enumerate() {
            let original = probe.tensors()[ti].data[k];
            let (up, down) = (original + step, original - step);
            probe.tensors_mut()[ti].data[k] = up;
            let plus: DoubleDouble = reference_loss(&probe, window, label, aggregation);
            probe.tensors_mut()[ti].data[k] = down;
            let minus: DoubleDouble = reference_loss(&probe, window, label, aggregation);
            probe.tensors_mut()[ti].data[k] = original;

            // divide by the step actually taken, which rounding may have changed
            let width = DoubleDouble::from_f64(up) - DoubleDouble::from_f64(down);
            let numeric = ((plus - minus) / width).to_f64();
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

/// Checks [`network_backward`] against central finite differences.
pub fn gradient_check<R: AsRef<[f64]>>(
    np: &NetworkParams,
    window: &[R],
    label: usize,
    step: f64,
    aggregation: Aggregation,
) -> Result<f64> {
    let (_, trace) = network_forward(np, window, aggregation)?;
    let analytic = network_backward(np, &trace, label)?;
    gradient_check_against(np, window, label, step, aggregation, &analytic)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recurrent::parameter_count;

    #[test]
    fn defaults_match_the_reference_configuration() {
        let hp = Hyperparameters::default();
        assert_eq!(hp.window_size, 180);
        assert_eq!(hp.stride, 100);
        assert_eq!(hp.batch_size, 64);
        assert_eq!(hp.epochs, 75);
        assert_eq!(hp.learning_rate, 0.0025);
        assert_eq!(hp.l2_coeff, 0.0015);
        assert_eq!(hp.hidden, 30);
        assert_eq!(hp.layers, 2);
        assert!(hp.validate().is_ok());
    }

    #[test]
    fn invalid_hyperparameters() {
        for hp in [
            Hyperparameters {
                batch_size: 0,
                ..Default::default()
            },
            Hyperparameters {
                learning_rate: 0.0,
                ..Default::default()
            },
            Hyperparameters {
                l2_coeff: -1.0,
                ..Default::default()
            },
            Hyperparameters {
                layers: 3,
                ..Default::default()
            },
        ] {
            assert!(hp.validate().is_err(), "{hp:?}");
        }
    }

    #[test]
    fn cross_entropy_cases() {
        let one_hot = |k: usize| {
            let mut v = Vector::zeros(6);
            v.data[k] = 1.0;
            v
        };
        let perfect = mean_cross_entropy(&[one_hot(2), one_hot(5)], &[2, 5]).unwrap();
        assert_eq!(perfect, 0.0);
        let uniform = Vector::filled(6, 1.0 / 6.0);
        for label in 0..6 {
            let l = mean_cross_entropy(std::slice::from_ref(&uniform), &[label]).unwrap();
            assert!((l - 6f64.ln()).abs() < 1e-15);
        }
        // clamped, not infinite
        let l = mean_cross_entropy(&[one_hot(0)], &[1]).unwrap();
        assert!((l - (-PROB_FLOOR.ln())).abs() < 1e-12);
        assert_eq!(mean_cross_entropy(&[], &[]).unwrap_err(), HarError::EmptyBatch);
    }

    #[test]
    fn cross_entropy_mixed_batch_matches_per_item_mean() {
        let mut rng = SeededRng::new(11);
        let mut probs = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..17 {
            let raw: Vec<f64> = (0..6).map(|_| rng.uniform(0.01, 1.0)).collect();
            let s: f64 = raw.iter().sum();
            probs.push(Vector::from_vec(raw.iter().map(|v| v / s).collect()));
            labels.push(rng.below(6));
        }
        let mut naive = 0.0;
        for (p, &y) in probs.iter().zip(&labels) {
            naive += -(p.data[y].ln());
        }
        naive /= 17.0;
        let got = mean_cross_entropy(&probs, &labels).unwrap();
        assert!((got - naive).abs() < 1e-14);
        assert!(got >= 0.0);
    }

    #[test]
    fn l2_cases() {
        let mut np = NetworkParams::zeros(1, 1, 1);
        let (loss, grad) = l2_penalty(&np, 0.0015);
        assert_eq!(loss, 0.0);
        assert!(grad.tensors().iter().all(|t| t.data.iter().all(|&v| v == 0.0)));

        np.head_w.set(0, 0, 2.0);
        np.head_b.data[0] = 5.0;
        let (loss, grad) = l2_penalty(&np, 0.0015);
        assert!((loss - 0.003).abs() < 1e-15);
        assert!((grad.head_w.get(0, 0) - 0.003).abs() < 1e-15);
        assert_eq!(grad.head_b.data[0], 0.0);

        let rich = NetworkParams::init(3, 4, 6, &mut SeededRng::new(1)).unwrap();
        let (loss, grad) = l2_penalty(&rich, 0.0);
        assert_eq!(loss, 0.0);
        assert!(grad.tensors().iter().all(|t| t.data.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut np = NetworkParams::init(3, 4, 6, &mut SeededRng::new(3)).unwrap();
        let before = np.clone();
        let mut st = AdamState::new(&np);
        adam_step(&mut st, &mut np, &before.zeros_like(), 0.01).unwrap();
        assert_eq!(np, before);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        for g in [1e-3, 0.5, -3.0, 1e4] {
            let mut np = NetworkParams::zeros(1, 1, 1);
            let mut grad = np.zeros_like();
            grad.head_w.set(0, 0, g);
            let mut st = AdamState::new(&np);
            adam_step(&mut st, &mut np, &grad, 0.0025).unwrap();
            let moved = np.head_w.get(0, 0);
            assert!((moved.abs() - 0.0025).abs() < 1e-6, "g={g} moved={moved}");
            assert_eq!(moved.signum(), -g.signum());
        }
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut np = NetworkParams::zeros(3, 2, 6);
        let mut grad = np.zeros_like();
        grad.layer2.peep_f.data[1] = f64::NAN;
        let mut st = AdamState::new(&np);
        assert_eq!(
            adam_step(&mut st, &mut np, &grad, 0.01).unwrap_err(),
            HarError::NonFiniteGradient("layer2.peep.f".into())
        );
        assert_eq!(st.t, 0);
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut np = NetworkParams::zeros(3, 2, 6);
        let grad = NetworkParams::zeros(3, 3, 6);
        let mut st = AdamState::new(&np);
        assert!(matches!(
            adam_step(&mut st, &mut np, &grad, 0.01),
            Err(HarError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn default_sized_network_is_small() {
        let np = NetworkParams::init_default(&mut SeededRng::new(0)).unwrap();
        assert_eq!(parameter_count(&np), 11_766);
    }
}
