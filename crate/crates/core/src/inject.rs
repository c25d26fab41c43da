//! Temporal prediction weighting, noise blending and the four-stage
//! erase / aggregate / blend / generate pipeline over any denoiser.
//!
//! Model time runs over `[0, horizon]` with `horizon` the pure-noise end, as
//! in diffusion step indices. Flow models integrate flow time `s ∈ [0, 1]`
//! from noise to data and are queried at `t = horizon · (1 − s)`.

use alloc::format;
use core::marker::PhantomData;
use alloc::vec::Vec;

use crate::error::{Error, Result, Stage};
use crate::net::{velocity_field, ConditionVector, ModelParams};
use crate::noise::{erase, sample_gaussian};
use crate::rng::derive_seed;
use crate::sampler::{ddpm_reverse_step, heun_integrate, VelocityConvention};
use crate::schedule::{DiffusionSchedule, WeightSchedule};
use crate::tensor::NoiseTensor;

/// Model time span of flow models, matching 1000-step diffusion indices.
pub const FLOW_HORIZON: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Predicts the added noise ε.
    EpsilonDiffusion,
    /// Predicts a velocity v.
    VelocityFlow,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::EpsilonDiffusion => "epsilon",
            ModelKind::VelocityFlow => "velocity",
        }
    }
}

pub trait Denoiser {
    type Cond;

    fn kind(&self) -> ModelKind;

    /// ε or v at model time `t`; the output has the latent's shape.
    fn predict(&self, latent: &NoiseTensor, t: f64, cond: &Self::Cond) -> Result<NoiseTensor>;

    fn horizon(&self) -> f64 {
        FLOW_HORIZON
    }

    /// Whether `predict` may be called concurrently on shared references.
    fn reentrant(&self) -> bool {
        false
    }
}

/// Closure-backed denoiser.
pub struct FnDenoiser<C, F> {
    kind: ModelKind,
    horizon: f64,
    f: F,
    _cond: PhantomData<fn(&C)>,
}

impl<C, F> FnDenoiser<C, F>
where
    F: Fn(&NoiseTensor, f64, &C) -> Result<NoiseTensor>,
{
    pub fn new(kind: ModelKind, f: F) -> Self {
        FnDenoiser { kind, horizon: FLOW_HORIZON, f, _cond: PhantomData }
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }
}

impl<C, F> Denoiser for FnDenoiser<C, F>
where
    F: Fn(&NoiseTensor, f64, &C) -> Result<NoiseTensor>,
{
    type Cond = C;

    fn kind(&self) -> ModelKind {
        self.kind
    }

    fn predict(&self, latent: &NoiseTensor, t: f64, cond: &C) -> Result<NoiseTensor> {
        (self.f)(latent, t, cond)
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }
}

/// The trained toy velocity network over `[M, 2]` point-set latents.
#[derive(Debug, Clone, Copy)]
pub struct ToyFlowModel<'a> {
    pub params: &'a ModelParams,
}

impl Denoiser for ToyFlowModel<'_> {
    type Cond = ConditionVector;

    fn kind(&self) -> ModelKind {
        ModelKind::VelocityFlow
    }

    fn predict(&self, latent: &NoiseTensor, t: f64, cond: &ConditionVector) -> Result<NoiseTensor> {
        if latent.shape().len() != 2 || latent.shape()[1] != 2 {
            return Err(Error::InvalidShape(latent.shape().to_vec()));
        }
        let s = 1.0 - t / FLOW_HORIZON;
        let mut out = alloc::vec![0.0; latent.len()];
        velocity_field(self.params, latent.data(), s, cond, &mut out)?;
        Ok(NoiseTensor::from_parts_unchecked(out, latent.shape().to_vec()))
    }

    fn reentrant(&self) -> bool {
        true
    }
}

fn checked_predict<D: Denoiser>(model: &D, z: &NoiseTensor, t: f64, cond: &D::Cond) -> Result<NoiseTensor> {
    let out = model.predict(z, t, cond)?;
    if out.shape() != z.shape() {
        return Err(Error::Contract(format!(
            "model returned shape {:?} for latent {:?} at t = {t}",
            out.shape(),
            z.shape()
        )));
    }
    Ok(out)
}

fn require_kind<D: Denoiser>(model: &D, want: ModelKind) -> Result<()> {
    if model.kind() != want {
        return Err(Error::Contract(format!("expected a {} model, got {}", want.as_str(), model.kind().as_str())));
    }
    Ok(())
}

fn weighted_sum<D: Denoiser>(model: &D, z: &NoiseTensor, cond: &D::Cond, ws: &WeightSchedule) -> Result<Vec<f64>> {
    let mut acc = alloc::vec![0.0; z.len()];
    for (t, w) in ws.iter() {
        let pred = checked_predict(model, z, t, cond)?;
        for (a, p) in acc.iter_mut().zip(pred.data()) {
            *a += w * p;
        }
    }
    Ok(acc)
}

/// `Σ w_k ε(z, t_k) / √(Σ w_k²)`, the same latent at every `t_k`.
pub fn tpw_eps<D: Denoiser>(model: &D, z: &NoiseTensor, cond: &D::Cond, ws: &WeightSchedule) -> Result<NoiseTensor> {
    require_kind(model, ModelKind::EpsilonDiffusion)?;
    let norm = libm::sqrt(ws.sum_sq());
    let acc = weighted_sum(model, z, cond, ws)?;
    Ok(NoiseTensor::from_parts_unchecked(acc.into_iter().map(|a| a / norm).collect(), z.shape().to_vec()))
}

/// `Σ w_k v(z, t_k)`; velocities are not renormalized.
pub fn tpw_velocity<D: Denoiser>(model: &D, z: &NoiseTensor, cond: &D::Cond, ws: &WeightSchedule) -> Result<NoiseTensor> {
    require_kind(model, ModelKind::VelocityFlow)?;
    let acc = weighted_sum(model, z, cond, ws)?;
    Ok(NoiseTensor::from_parts_unchecked(acc, z.shape().to_vec()))
}

fn check_delta(delta: f64) -> Result<()> {
    if delta >= 0.0 && delta.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!("blend strength must be finite and non-negative, got {delta}")))
    }
}

/// `(z + δ ε_agg) / √(1 + δ²)`.
pub fn blend_eps(z: &NoiseTensor, eps_agg: &NoiseTensor, delta: f64) -> Result<NoiseTensor> {
    check_delta(delta)?;
    z.ensure_same_shape(eps_agg)?;
    let norm = libm::sqrt(1.0 + delta * delta);
    let data = z.data().iter().zip(eps_agg.data()).map(|(a, e)| (a + delta * e) / norm).collect();
    Ok(NoiseTensor::from_parts_unchecked(data, z.shape().to_vec()))
}

/// `z + δ v_agg`.
pub fn blend_velocity(z: &NoiseTensor, v_agg: &NoiseTensor, delta: f64) -> Result<NoiseTensor> {
    check_delta(delta)?;
    z.ensure_same_shape(v_agg)?;
    let data = z.data().iter().zip(v_agg.data()).map(|(a, v)| a + delta * v).collect();
    Ok(NoiseTensor::from_parts_unchecked(data, z.shape().to_vec()))
}

/// The generator run in the final stage.
#[derive(Debug, Clone, PartialEq)]
pub enum SamplerConfig {
    /// Heun over flow time `[0, 1]`, noise at 0.
    Heun { steps: usize, convention: VelocityConvention },
    /// Ancestral DDPM from `t = T` down to 1, ζ drawn from `derive_seed(zeta_seed, t)`.
    Ddpm { schedule: DiffusionSchedule, zeta_seed: u64 },
}

/// Standard sampling from an initial latent.
pub fn generate<D: Denoiser>(model: &D, z0: &NoiseTensor, cond: &D::Cond, sampler: &SamplerConfig) -> Result<NoiseTensor> {
    match sampler {
        SamplerConfig::Heun { steps, convention } => {
            require_kind(model, ModelKind::VelocityFlow)?;
            let sign = convention.sign();
            let horizon = model.horizon();
            let shape = z0.shape().to_vec();
            let field = |z: &[f64], s: f64, out: &mut [f64]| {
                let latent = NoiseTensor::from_parts_unchecked(z.to_vec(), shape.clone());
                let v = checked_predict(model, &latent, horizon * (1.0 - s), cond)?;
                for (o, vi) in out.iter_mut().zip(v.data()) {
                    *o = sign * vi;
                }
                Ok(())
            };
            let traj = heun_integrate(field, z0.data(), 0.0, 1.0, *steps)?;
            Ok(NoiseTensor::from_parts_unchecked(traj.final_state().to_vec(), z0.shape().to_vec()))
        }
        SamplerConfig::Ddpm { schedule, zeta_seed } => {
            require_kind(model, ModelKind::EpsilonDiffusion)?;
            let mut x = z0.clone();
            for t in (1..=schedule.steps()).rev() {
                let eps = checked_predict(model, &x, t as f64, cond)?;
                let zeta = sample_gaussian(derive_seed(*zeta_seed, t as u64), x.shape())?;
                x = ddpm_reverse_step(schedule, &x, t, &eps, &zeta)?;
                if x.data().iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { step: schedule.steps() + 1 - t });
                }
            }
            Ok(x)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub n_erase: usize,
    pub weight_schedule: WeightSchedule,
    pub delta: f64,
    pub model_kind: ModelKind,
    pub latent_shape: Vec<usize>,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_erase == 0 {
            return Err(Error::param("n_erase must be at least 1"));
        }
        check_delta(self.delta)?;
        crate::tensor::check_shape(&self.latent_shape)?;
        Ok(())
    }
}

/// Seeds the pipeline draws for a master seed: the master itself, then
/// derived streams, so `n = 1` samples exactly the master seed.
pub fn pipeline_seeds(master: u64, n: usize) -> Vec<u64> {
    (0..n).map(|i| if i == 0 { master } else { derive_seed(master, i as u64) }).collect()
}

/// What a pipeline run consumed.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub seeds: Vec<u64>,
    pub timesteps: Vec<f64>,
    pub weights: Vec<f64>,
    pub delta: f64,
    pub model_kind: ModelKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub initial: NoiseTensor,
    pub adjusted: NoiseTensor,
    pub sample: NoiseTensor,
    pub provenance: Provenance,
}

/// Erase `seeds.len()` draws, aggregate the model's predictions on the erased
/// latent, blend them in, then sample. Errors carry the failing stage.
pub fn run_pipeline<D: Denoiser>(
    model: &D,
    cond: &D::Cond,
    cfg: &PipelineConfig,
    seeds: &[u64],
    sampler: &SamplerConfig,
) -> Result<PipelineOutput> {
    cfg.validate()?;
    if seeds.len() != cfg.n_erase {
        return Err(Error::param(format!("pipeline expects {} seeds, got {}", cfg.n_erase, seeds.len())));
    }
    if model.kind() != cfg.model_kind {
        return Err(Error::Contract(format!(
            "pipeline configured for a {} model, got {}",
            cfg.model_kind.as_str(),
            model.kind().as_str()
        )));
    }
    let erase_stage = || -> Result<NoiseTensor> {
        let draws = seeds.iter().map(|&s| sample_gaussian(s, &cfg.latent_shape)).collect::<Result<Vec<_>>>()?;
        erase(&draws)
    };
    let initial = erase_stage().map_err(|e| e.at(Stage::Erase))?;
    let adjusted = if cfg.delta == 0.0 {
        initial.clone()
    } else {
        let ws = &cfg.weight_schedule;
        let agg = match cfg.model_kind {
            ModelKind::EpsilonDiffusion => tpw_eps(model, &initial, cond, ws),
            ModelKind::VelocityFlow => tpw_velocity(model, &initial, cond, ws),
        }
        .map_err(|e| e.at(Stage::Inject))?;
        match cfg.model_kind {
            ModelKind::EpsilonDiffusion => blend_eps(&initial, &agg, cfg.delta),
            ModelKind::VelocityFlow => blend_velocity(&initial, &agg, cfg.delta),
        }
        .map_err(|e| e.at(Stage::Adjust))?
    };
    let sample = generate(model, &adjusted, cond, sampler).map_err(|e| e.at(Stage::Generate))?;
    let provenance = Provenance {
        seeds: seeds.to_vec(),
        timesteps: cfg.weight_schedule.timesteps().to_vec(),
        weights: cfg.weight_schedule.weights().to_vec(),
        delta: cfg.delta,
        model_kind: cfg.model_kind,
    };
    Ok(PipelineOutput { initial, adjusted, sample, provenance })
}
