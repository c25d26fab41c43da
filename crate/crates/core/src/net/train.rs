use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::model::{loss_and_grad_into, ConditionVector, ModelParams, NetConfig, Sample};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, GaussianRng};
use crate::noise::SeedBank;
use crate::toyflow::{build_dataset, interpolant, ShapeSpec, TrainingPair};

const SHUFFLE_STREAM: u64 = 0x5348;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// `None` trains full-batch; otherwise minibatches of this size over a
    /// per-epoch shuffle.
    pub batch_size: Option<usize>,
    pub master_seed: u64,
    /// Final training MSE under which the model counts as having memorized its paths.
    pub overfit_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 2000,
            learning_rate: 3e-4,
            weight_decay: 0.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: Some(128),
            master_seed: 0,
            overfit_threshold: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::param("epochs must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::param(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::param(format!("weight decay must be non-negative, got {}", self.weight_decay)));
        }
        let unit = 0.0..1.0;
        if !unit.contains(&self.adam_beta1) || !unit.contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::param("adam betas must lie in [0, 1) and eps must be positive"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::param("batch size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }
}

/// Bias-corrected Adam with L2 weight decay folded into the gradient.
pub fn adam_step(theta: &mut [f64], grad: &[f64], state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    if theta.len() != grad.len() || theta.len() != state.m.len() {
        return Err(Error::Contract(format!(
            "adam buffers disagree: params {}, grads {}, state {}",
            theta.len(),
            grad.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - libm::pow(b1, state.step as f64);
    let c2 = 1.0 - libm::pow(b2, state.step as f64);
    for (((p, &g), m), v) in theta.iter_mut().zip(grad).zip(&mut state.m).zip(&mut state.v) {
        let g = g + cfg.weight_decay * *p;
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        *p -= cfg.learning_rate * (*m / c1) / (libm::sqrt(*v / c2) + cfg.adam_eps);
    }
    Ok(())
}

/// Paths memorized under one condition.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub cond: ConditionVector,
    pub pairs: Vec<TrainingPair>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Mean minibatch loss per epoch, `(epoch, loss)` with epochs from 1.
    pub log: Vec<(usize, f64)>,
    pub initial_mse: f64,
    /// Full-dataset MSE after the last update.
    pub final_mse: f64,
    pub memorized: bool,
}

/// One dataset per `(shape, seed)`: each seed in a shape's bank is labelled
/// with its position in that bank as the embedding slot.
pub fn toy_datasets(shapes: &[ShapeSpec], banks: &SeedBank, n_pairs: usize, grid_size: usize) -> Result<Vec<LabeledDataset>> {
    let mut out = Vec::new();
    for shape in shapes {
        let name = shape.kind().name();
        let seeds = banks.get(name).ok_or_else(|| Error::param(format!("no seed bank for {name}")))?;
        for (slot, &seed) in seeds.iter().enumerate() {
            out.push(LabeledDataset { cond: ConditionVector::new(shape, slot), pairs: build_dataset(shape, seed, n_pairs, grid_size)? });
        }
    }
    Ok(out)
}

/// Every `(x(t), t, cond, v*)` on the paths' time grids.
pub fn expand_samples(datasets: &[LabeledDataset]) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for d in datasets {
        for pair in &d.pairs {
            for &t in &pair.t_grid {
                let (x, target) = interpolant(pair, t)?;
                out.push(Sample { x, t, cond: d.cond, target });
            }
        }
    }
    Ok(out)
}

/// Trains from a seeded initialization until the epoch budget is spent.
/// Deterministic in `config.master_seed`; the Fourier projection is never touched.
pub fn train(datasets: &[LabeledDataset], net: NetConfig, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if datasets.is_empty() {
        return Err(Error::EmptyInput("training datasets"));
    }
    let samples = expand_samples(datasets)?;
    if samples.is_empty() {
        return Err(Error::EmptyInput("training samples"));
    }
    let mut params = ModelParams::init(net, config.master_seed)?;
    let n = samples.len();
    let bs = config.batch_size.unwrap_or(n).min(n);
    let mut grad = vec![0.0; params.learnable().len()];
    let mut adam = AdamState::new(grad.len());
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffler = GaussianRng::new(derive_seed(config.master_seed, SHUFFLE_STREAM));
    let initial_mse = loss_and_grad_into(&params, samples.iter(), n, &mut grad)?;
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        if bs < n {
            shuffler.shuffle(&mut order);
        }
        let mut total = 0.0;
        for chunk in order.chunks(bs) {
            let loss = loss_and_grad_into(&params, chunk.iter().map(|&i| &samples[i]), chunk.len(), &mut grad)?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            total += loss * chunk.len() as f64;
            adam_step(params.learnable_mut(), &grad, &mut adam, config)?;
        }
        log.push((epoch, total / n as f64));
    }
    let final_mse = loss_and_grad_into(&params, samples.iter(), n, &mut grad)?;
    if !final_mse.is_finite() {
        return Err(Error::TrainingDiverged { epoch: config.epochs });
    }
    Ok(TrainOutcome { params, log, initial_mse, final_mse, memorized: final_mse < config.overfit_threshold })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toyflow::{build_dataset, ShapeKind};

    fn tiny_sets() -> Vec<LabeledDataset> {
        ShapeKind::ALL
            .iter()
            .map(|k| {
                let spec = k.default_spec();
                LabeledDataset { cond: ConditionVector::new(&spec, k.index()), pairs: build_dataset(&spec, 100 + k.index() as u64, 4, 3).unwrap() }
            })
            .collect()
    }

    fn tiny_net() -> NetConfig {
        NetConfig { rff_features: 16, rff_scale: 2.0, width: 16, blocks: 2, embed_dim: 4, embed_slots: 3 }
    }

    #[test]
    fn zero_grad_leaves_params() {
        let mut theta = vec![0.5, -1.0, 2.0];
        let mut st = AdamState::new(3);
        adam_step(&mut theta, &[0.0; 3], &mut st, &TrainConfig::default()).unwrap();
        assert_eq!(theta, vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn first_step_is_sign_scaled() {
        let cfg = TrainConfig { learning_rate: 0.01, ..TrainConfig::default() };
        let g = [3.0, -0.2, 1e-3];
        let mut theta = vec![0.0; 3];
        let mut st = AdamState::new(3);
        adam_step(&mut theta, &g, &mut st, &cfg).unwrap();
        // m̂ = g and v̂ = g², so the step is −lr·g/(|g| + eps).
        for (p, gi) in theta.iter().zip(g) {
            assert!((p + 0.01 * gi / (gi.abs() + cfg.adam_eps)).abs() < 1e-15);
        }
    }

    #[test]
    fn quadratic_decreases_monotonically() {
        let cfg = TrainConfig { learning_rate: 0.01, ..TrainConfig::default() };
        let mut theta = vec![3.0];
        let mut st = AdamState::new(1);
        let mut prev = f64::INFINITY;
        for _ in 0..100 {
            let loss = (theta[0] - 1.0) * (theta[0] - 1.0);
            assert!(loss < prev);
            prev = loss;
            let g = [2.0 * (theta[0] - 1.0)];
            adam_step(&mut theta, &g, &mut st, &cfg).unwrap();
        }
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let cfg = TrainConfig { epochs: 30, learning_rate: 3e-3, batch_size: Some(8), master_seed: 7, ..TrainConfig::default() };
        let a = train(&tiny_sets(), tiny_net(), &cfg).unwrap();
        let b = train(&tiny_sets(), tiny_net(), &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.final_mse < a.initial_mse);
        assert_eq!(a.log.len(), 30);
        let init = ModelParams::init(tiny_net(), 7).unwrap();
        assert_eq!(init.rff_matrix(), a.params.rff_matrix());
    }

    #[test]
    fn full_batch_and_errors() {
        let cfg = TrainConfig { epochs: 2, batch_size: None, ..TrainConfig::default() };
        assert_eq!(train(&tiny_sets(), tiny_net(), &cfg).unwrap().log.len(), 2);
        assert!(train(&[], tiny_net(), &cfg).is_err());
        assert!(train(&tiny_sets(), tiny_net(), &TrainConfig { epochs: 0, ..cfg }).is_err());
        let huge = TrainConfig { learning_rate: 1e300, epochs: 3, ..cfg };
        assert!(matches!(train(&tiny_sets(), tiny_net(), &huge), Err(Error::TrainingDiverged { .. }) | Err(Error::NonFinite { .. })));
    }
}
