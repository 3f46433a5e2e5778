//! Regularized reconstruction loss and Nesterov-momentum SGD with early
//! stopping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::LayerParams;
use crate::model::{build_model, Arch, ModelParams};
use crate::patch::{LabeledPatchPair, Provenance};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Stream index of the shuffling generator, kept apart from the noise streams.
const SHUFFLE_STREAM: u64 = u64::MAX;
const EVAL_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub arch: Arch,
    pub learning_rate: f64,
    pub momentum: f64,
    pub l1_coeff: f64,
    pub l2_coeff: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Relative drop in validation loss that counts as an improvement.
    pub min_improvement: f64,
    pub seed: u64,
    pub noise_std: f64,
    pub validation_fraction: f64,
    pub init: Init,
}

/// Weight initialization applied by [`train`] before the first step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Init {
    /// Uniform fan-in scaling only.
    He,
    /// Fan-in scaling followed by [`ModelParams::scale_to_data`] on up to
    /// `samples` training patches.
    DataScaled {
        hidden_std: f64,
        output_std: f64,
        samples: usize,
    },
}

impl Default for Init {
    fn default() -> Self {
        Init::DataScaled {
            hidden_std: 3.0,
            output_std: 0.05,
            samples: 256,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arch: Arch::Model1,
            learning_rate: 1e-4,
            momentum: 0.975,
            l1_coeff: 1e-4,
            l2_coeff: 1e-4,
            batch_size: 128,
            max_epochs: 100,
            patience: 10,
            min_improvement: 0.005,
            seed: 0,
            noise_std: 0.1,
            validation_fraction: 0.2,
            init: Init::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.l1_coeff >= 0.0 && self.l2_coeff >= 0.0) {
            return bad("regularization coefficients must be >= 0".into());
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!(
                "validation_fraction must be in (0, 1), got {}",
                self.validation_fraction
            ));
        }
        if let Init::DataScaled {
            hidden_std,
            output_std,
            samples,
        } = self.init
        {
            if !(hidden_std > 0.0 && output_std > 0.0) || samples == 0 {
                return bad("data-scaled init needs positive targets and samples >= 1".into());
            }
        }
        Ok(())
    }
}

/// Components of the regularized loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Loss {
    /// `mse + l2_coeff * reg_l2 + l1_coeff * reg_l1`.
    pub total: f64,
    /// Mean over samples of the per-pixel mean squared error.
    pub mse: f64,
    /// `sqrt(sum of squared weights)` over all layers; biases excluded.
    pub reg_l2: f64,
    /// Sum of absolute weights over all layers; biases excluded.
    pub reg_l1: f64,
}

impl Loss {
    /// Unweighted regularizer `R(W)`.
    pub fn reg(&self) -> f64 {
        self.reg_l2 + self.reg_l1
    }
}

/// Mean over the batch of the per-sample mean squared error, and its
/// gradient with respect to `pred`.
pub fn mse_with_grad(pred: &Tensor, label: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != label.shape() {
        return Err(Error::ShapeMismatch {
            left: pred.shape().to_vec(),
            right: label.shape().to_vec(),
        });
    }
    let n = pred.len() as f64;
    let diff = pred.sub(label)?;
    let mse = diff.sum_squares() / n;
    Ok((mse, diff.scale(2.0 / n)))
}

/// Regularizer terms `(sqrt(sum W^2), sum |W|)` over all weight tensors.
pub fn regularizer(model: &ModelParams) -> (f64, f64) {
    let (sq, abs) = model.weight_tensors().fold((0.0, 0.0), |(sq, abs), w| {
        (
            sq + w.sum_squares(),
            abs + w.data().iter().fold(0.0, |a, v| a + v.abs()),
        )
    });
    (sq.sqrt(), abs)
}

pub fn loss(model: &ModelParams, pred: &Tensor, label: &Tensor, l1_coeff: f64, l2_coeff: f64) -> Result<Loss> {
    let (mse, _) = mse_with_grad(pred, label)?;
    let (reg_l2, reg_l1) = regularizer(model);
    Ok(Loss {
        total: mse + l2_coeff * reg_l2 + l1_coeff * reg_l1,
        mse,
        reg_l2,
        reg_l1,
    })
}

/// Adds the regularizer subgradient to the weight gradients: `l1 * sign(W)`
/// with `sign(0) = 0`, and `l2 * W / ||W||` (zero when `||W|| = 0`).
pub fn add_regularizer_grad(model: &ModelParams, grads: &mut [Option<LayerParams>], l1_coeff: f64, l2_coeff: f64) {
    let (norm, _) = regularizer(model);
    let l2_scale = if norm > 0.0 { l2_coeff / norm } else { 0.0 };
    for (layer, grad) in model.layers.iter().zip(grads.iter_mut()) {
        let (Some(params), Some(grad)) = (layer.params.as_ref(), grad.as_mut()) else {
            continue;
        };
        for (g, &w) in grad.weights.data_mut().iter_mut().zip(params.weights.data()) {
            let sign = if w > 0.0 {
                1.0
            } else if w < 0.0 {
                -1.0
            } else {
                0.0
            };
            *g += l1_coeff * sign + l2_scale * w;
        }
    }
}

/// Loss and full parameter gradient for one batch at the given parameters.
pub fn loss_and_grad(
    model: &ModelParams,
    inputs: &Tensor,
    labels: &Tensor,
    l1_coeff: f64,
    l2_coeff: f64,
    rng: &mut SeededRng,
) -> Result<(Loss, Vec<Option<LayerParams>>)> {
    let (pred, trace) = model.forward_train(inputs, rng)?;
    let (mse, grad_pred) = mse_with_grad(&pred, labels)?;
    let (_, mut grads) = model.backward(&trace, &grad_pred)?;
    add_regularizer_grad(model, &mut grads, l1_coeff, l2_coeff);
    let (reg_l2, reg_l1) = regularizer(model);
    Ok((
        Loss {
            total: mse + l2_coeff * reg_l2 + l1_coeff * reg_l1,
            mse,
            reg_l2,
            reg_l1,
        },
        grads,
    ))
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ModelParams,
    /// Same layout as the parameters of `params`.
    pub velocity: Vec<Option<LayerParams>>,
    pub epoch: usize,
    pub step: usize,
    pub best_val_loss: f64,
    pub epochs_since_best: usize,
}

impl TrainState {
    pub fn new(params: ModelParams) -> Self {
        let velocity = params
            .layers
            .iter()
            .map(|l| l.params.as_ref().map(LayerParams::zeros_like))
            .collect();
        Self {
            params,
            velocity,
            epoch: 0,
            step: 0,
            best_val_loss: f64::INFINITY,
            epochs_since_best: 0,
        }
    }

    pub fn velocity_matches_params(&self) -> bool {
        self.params.layers.len() == self.velocity.len()
            && self.params.layers.iter().zip(&self.velocity).all(|(l, v)| match (&l.params, v) {
                (Some(p), Some(v)) => {
                    p.weights.shape() == v.weights.shape() && p.bias.shape() == v.bias.shape()
                }
                (None, None) => true,
                _ => false,
            })
    }
}

/// One Nesterov step: `g = grad L(W + mu v)`, `v <- mu v - alpha g`,
/// `W <- W + v`. With `mu = 0` this is plain gradient descent.
///
/// Returns the loss evaluated at the look-ahead point.
pub fn sgd_step(
    state: &mut TrainState,
    inputs: &Tensor,
    labels: &Tensor,
    config: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<Loss> {
    if inputs.shape().first().copied().unwrap_or(0) == 0 {
        return Err(Error::Empty("training batch"));
    }
    let mu = config.momentum;
    let mut lookahead = state.params.clone();
    if mu != 0.0 {
        for (layer, v) in lookahead.layers.iter_mut().zip(&state.velocity) {
            if let (Some(p), Some(v)) = (layer.params.as_mut(), v) {
                p.weights.axpy(mu, &v.weights)?;
                p.bias.axpy(mu, &v.bias)?;
            }
        }
    }
    let (loss, grads) = loss_and_grad(&lookahead, inputs, labels, config.l1_coeff, config.l2_coeff, rng)?;
    let non_finite = |what| Error::NonFinite {
        epoch: state.epoch,
        step: state.step,
        what,
    };
    if !loss.total.is_finite() {
        return Err(non_finite("loss"));
    }
    if grads
        .iter()
        .flatten()
        .any(|g| !g.weights.is_finite() || !g.bias.is_finite())
    {
        return Err(non_finite("gradient"));
    }
    let alpha = config.learning_rate;
    for ((layer, v), g) in state.params.layers.iter_mut().zip(&mut state.velocity).zip(&grads) {
        if let (Some(p), Some(v), Some(g)) = (layer.params.as_mut(), v.as_mut(), g) {
            for (vel, grad, param) in [
                (&mut v.weights, &g.weights, &mut p.weights),
                (&mut v.bias, &g.bias, &mut p.bias),
            ] {
                for ((vv, &gg), pp) in vel.data_mut().iter_mut().zip(grad.data()).zip(param.data_mut()) {
                    *vv = mu * *vv - alpha * gg;
                    *pp += *vv;
                }
            }
        }
    }
    state.step += 1;
    Ok(loss)
}

/// One row of the loss history. Epoch 0 is the untrained model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Training loss including the weighted regularizer.
    pub train_total: f64,
    pub train_mse: f64,
    pub val_total: f64,
    /// Validation reconstruction error; this drives early stopping.
    pub val_mse: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub train_size: usize,
    pub val_size: usize,
}

impl TrainHistory {
    pub fn initial_val_mse(&self) -> Option<f64> {
        self.records.first().map(|r| r.val_mse)
    }

    pub fn best_val_mse(&self) -> Option<f64> {
        self.records.iter().map(|r| r.val_mse).reduce(f64::min)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_total,train_mse,val_total,val_mse\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{:.10e},{:.10e},{:.10e},{:.10e}\n",
                r.epoch, r.train_total, r.train_mse, r.val_total, r.val_mse
            ));
        }
        out
    }
}

/// Stacks patch pairs into `[n, 1, m, n]` input and label batches.
pub fn stack_pairs<'a>(pairs: impl IntoIterator<Item = &'a LabeledPatchPair>) -> Result<(Tensor, Tensor)> {
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    let mut shape: Option<Vec<usize>> = None;
    let mut count = 0;
    for pair in pairs {
        match &shape {
            None => shape = Some(pair.input.shape().to_vec()),
            Some(s) if s != pair.input.shape() || s != pair.label.shape() => {
                return Err(Error::ShapeMismatch {
                    left: s.clone(),
                    right: pair.input.shape().to_vec(),
                })
            }
            _ => {}
        }
        inputs.extend_from_slice(pair.input.data());
        labels.extend_from_slice(pair.label.data());
        count += 1;
    }
    let shape = shape.ok_or(Error::Empty("patch batch"))?;
    let mut full = vec![count, 1];
    full.extend_from_slice(&shape);
    Ok((Tensor::new(&full, inputs)?, Tensor::new(&full, labels)?))
}

/// Mean per-sample MSE over `pairs` in inference mode.
pub fn evaluate_mse(model: &ModelParams, pairs: &[&LabeledPatchPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut sum = 0.0;
    for chunk in pairs.chunks(EVAL_BATCH) {
        let (x, y) = stack_pairs(chunk.iter().copied())?;
        let pred = model.predict(&x)?;
        let (mse, _) = mse_with_grad(&pred, &y)?;
        sum += mse * chunk.len() as f64;
    }
    Ok(sum / pairs.len() as f64)
}

/// Mean output activation on centred-egg patches against the mean over all
/// other patches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selectivity {
    pub positive_mean: f64,
    pub other_mean: f64,
    pub positives: usize,
    pub others: usize,
}

impl Selectivity {
    pub fn ratio(&self) -> f64 {
        self.positive_mean / self.other_mean
    }
}

pub fn selectivity(model: &ModelParams, pairs: &[&LabeledPatchPair]) -> Result<Selectivity> {
    let (pos, other): (Vec<&LabeledPatchPair>, Vec<&LabeledPatchPair>) =
        pairs.iter().partition(|p| p.provenance == Provenance::CenteredEgg);
    if pos.is_empty() || other.is_empty() {
        return Err(Error::Empty("selectivity split"));
    }
    let mean_output = |set: &[&LabeledPatchPair]| -> Result<f64> {
        let mut sum = 0.0;
        let mut n = 0;
        for chunk in set.chunks(EVAL_BATCH) {
            let (x, _) = stack_pairs(chunk.iter().copied())?;
            let y = model.predict(&x)?;
            sum += y.data().iter().sum::<f64>();
            n += y.len();
        }
        Ok(sum / n as f64)
    };
    Ok(Selectivity {
        positive_mean: mean_output(&pos)?,
        other_mean: mean_output(&other)?,
        positives: pos.len(),
        others: other.len(),
    })
}

/// Deterministic 80/20-style split: shuffled indices, validation taken from
/// the tail.
pub fn split_indices(n: usize, validation_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 patch pairs to split into train and validation, got {n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    SeededRng::child(seed, SHUFFLE_STREAM).shuffle(&mut idx);
    let val = ((n as f64 * validation_fraction).round() as usize).clamp(1, n - 1);
    let val_idx = idx.split_off(n - val);
    Ok((idx, val_idx))
}

pub fn train(data: &[LabeledPatchPair], config: &TrainConfig) -> Result<(ModelParams, TrainHistory)> {
    let model = initial_model(data, config)?;
    train_model(model, data, config, |_| {})
}

/// The untrained model for `config`, including its initialization. Data
/// scaling uses an even spread of the training split only.
pub fn initial_model(data: &[LabeledPatchPair], config: &TrainConfig) -> Result<ModelParams> {
    config.validate()?;
    let mut model = build_model(config.arch, config.seed)?;
    model.set_noise_std(config.noise_std)?;
    if let Init::DataScaled {
        hidden_std,
        output_std,
        samples,
    } = config.init
    {
        let (train_idx, _) = split_indices(data.len(), config.validation_fraction, config.seed)?;
        let step = (train_idx.len() / samples).max(1);
        let (x, _) = stack_pairs(train_idx.iter().step_by(step).take(samples).map(|&i| &data[i]))?;
        model.scale_to_data(&x, hidden_std, output_std)?;
    }
    Ok(model)
}

/// Trains `model` on `data`, reporting each epoch to `progress`, and returns
/// the parameters with the lowest validation loss.
pub fn train_model(
    model: ModelParams,
    data: &[LabeledPatchPair],
    config: &TrainConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<(ModelParams, TrainHistory)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    let (train_idx, val_idx) = split_indices(data.len(), config.validation_fraction, config.seed)?;
    let val: Vec<&LabeledPatchPair> = val_idx.iter().map(|&i| &data[i]).collect();
    let train_set: Vec<&LabeledPatchPair> = train_idx.iter().map(|&i| &data[i]).collect();

    let mut state = TrainState::new(model);
    let reg_total = |m: &ModelParams| {
        let (l2, l1) = regularizer(m);
        config.l2_coeff * l2 + config.l1_coeff * l1
    };

    let initial_val = evaluate_mse(&state.params, &val)?;
    let initial_train = evaluate_mse(&state.params, &train_set)?;
    let reg0 = reg_total(&state.params);
    let first = EpochRecord {
        epoch: 0,
        train_total: initial_train + reg0,
        train_mse: initial_train,
        val_total: initial_val + reg0,
        val_mse: initial_val,
    };
    progress(&first);
    let mut history = TrainHistory {
        records: vec![first],
        best_epoch: 0,
        stopped_early: false,
        train_size: train_set.len(),
        val_size: val.len(),
    };
    let mut best = state.params.clone();
    let mut best_val = initial_val;
    let mut reference_val = initial_val;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=config.max_epochs {
        state.epoch = epoch;
        SeededRng::child(config.seed ^ SHUFFLE_STREAM, epoch as u64).shuffle(&mut order);
        let (mut total_sum, mut mse_sum) = (0.0, 0.0);
        for batch in order.chunks(config.batch_size) {
            let (x, y) = stack_pairs(batch.iter().map(|&i| train_set[i]))?;
            let mut noise = SeededRng::child(config.seed, state.step as u64);
            let loss = sgd_step(&mut state, &x, &y, config, &mut noise)?;
            debug_assert!(state.velocity_matches_params());
            total_sum += loss.total * batch.len() as f64;
            mse_sum += loss.mse * batch.len() as f64;
        }
        let n = train_set.len() as f64;
        let val_mse = evaluate_mse(&state.params, &val)?;
        if !val_mse.is_finite() {
            return Err(Error::NonFinite {
                epoch,
                step: state.step,
                what: "validation loss",
            });
        }
        let record = EpochRecord {
            epoch,
            train_total: total_sum / n,
            train_mse: mse_sum / n,
            val_total: val_mse + reg_total(&state.params),
            val_mse,
        };
        progress(&record);
        history.records.push(record);

        if val_mse < best_val {
            best_val = val_mse;
            best = state.params.clone();
            history.best_epoch = epoch;
        }
        if val_mse < reference_val * (1.0 - config.min_improvement) {
            reference_val = val_mse;
            state.epochs_since_best = 0;
        } else {
            state.epochs_since_best += 1;
        }
        state.best_val_loss = best_val;
        if state.epochs_since_best > config.patience {
            history.stopped_early = true;
            break;
        }
    }
    Ok((best, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::LayerSpec;

    fn scalar_model(w: f64) -> ModelParams {
        // A single 1x1 dense unit: y = ReLU(w x + b).
        let mut m = ModelParams::from_specs(Arch::Custom, &[1], vec![LayerSpec::Dense { in_units: 1, units: 1 }], 0)
            .unwrap();
        m.layers[0].params.as_mut().unwrap().weights = Tensor::full(&[1, 1], w);
        m
    }

    #[test]
    fn perfect_prediction_zero_weights_zero_loss() {
        let mut m = scalar_model(0.0);
        m.layers[0].params.as_mut().unwrap().bias = Tensor::zeros(&[1]);
        let y = Tensor::full(&[2, 1], 0.3);
        let l = loss(&m, &y, &y, 1e-4, 1e-4).unwrap();
        assert_eq!(l.total, 0.0);
    }

    #[test]
    fn unit_residual_gives_unit_mse() {
        let pred = Tensor::zeros(&[1, 1, 2, 2]);
        let label = Tensor::full(&[1, 1, 2, 2], 1.0);
        let (mse, _) = mse_with_grad(&pred, &label).unwrap();
        assert_eq!(mse, 1.0);
        assert!(mse_with_grad(&pred, &Tensor::zeros(&[1, 1, 2, 3])).is_err());
    }

    #[test]
    fn regularizer_three_four() {
        let m = ModelParams {
            arch: Arch::Custom,
            input_shape: vec![2],
            layers: vec![crate::layers::Layer {
                spec: LayerSpec::Dense { in_units: 2, units: 1 },
                params: Some(LayerParams {
                    weights: Tensor::new(&[1, 2], vec![3.0, 4.0]).unwrap(),
                    bias: Tensor::full(&[1], 100.0),
                }),
            }],
        };
        let (l2, l1) = regularizer(&m);
        assert_eq!(l2 + l1, 12.0);
    }

    fn quadratic_config(mu: f64, alpha: f64) -> TrainConfig {
        TrainConfig {
            learning_rate: alpha,
            momentum: mu,
            l1_coeff: 0.0,
            l2_coeff: 0.0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn plain_gradient_step() {
        // L = mean((w*x - 0)^2) with x = 1: dL/dw = 2w = 2 at w = 1.
        let mut state = TrainState::new(scalar_model(1.0));
        let x = Tensor::full(&[1, 1], 1.0);
        let y = Tensor::zeros(&[1, 1]);
        sgd_step(&mut state, &x, &y, &quadratic_config(0.0, 0.1), &mut SeededRng::new(0)).unwrap();
        let w = state.params.layers[0].params.as_ref().unwrap().weights.data()[0];
        assert!((w - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        // Dead ReLU: negative weight on positive input gives zero gradient.
        let mut state = TrainState::new(scalar_model(-1.0));
        let before = state.params.clone();
        let x = Tensor::full(&[1, 1], 1.0);
        sgd_step(&mut state, &x, &Tensor::zeros(&[1, 1]), &quadratic_config(0.975, 0.1), &mut SeededRng::new(0))
            .unwrap();
        assert_eq!(state.params, before);
    }

    #[test]
    fn nesterov_recurrence_matches_closed_form() {
        // f(w) = (w - 0)^2 with x = 1, label 0 while w > 0: grad = 2 w.
        let (mu, alpha) = (0.975, 0.01);
        let mut state = TrainState::new(scalar_model(2.0));
        let x = Tensor::full(&[1, 1], 1.0);
        let y = Tensor::zeros(&[1, 1]);
        // Weight and bias both see the gradient of the output w + b.
        let (mut w, mut b, mut vw, mut vb) = (2.0f64, 0.0f64, 0.0f64, 0.0f64);
        for _ in 0..5 {
            sgd_step(&mut state, &x, &y, &quadratic_config(mu, alpha), &mut SeededRng::new(0)).unwrap();
            let g = 2.0 * ((w + mu * vw) + (b + mu * vb));
            vw = mu * vw - alpha * g;
            vb = mu * vb - alpha * g;
            w += vw;
            b += vb;
            let p = state.params.layers[0].params.as_ref().unwrap();
            let (got_w, got_b) = (p.weights.data()[0], p.bias.data()[0]);
            assert!((got_w - w).abs() < 1e-14, "{got_w} vs {w}");
            assert!((got_b - b).abs() < 1e-14, "{got_b} vs {b}");
            assert!(state.velocity_matches_params());
        }
    }

    #[test]
    fn split_is_eighty_twenty() {
        let (t, v) = split_indices(100, 0.2, 1).unwrap();
        assert_eq!((t.len(), v.len()), (80, 20));
        let mut all: Vec<_> = t.iter().chain(&v).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert!(split_indices(1, 0.2, 1).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { momentum: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
