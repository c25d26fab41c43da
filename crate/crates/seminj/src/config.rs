//! TOML run configuration. Every key is optional; see `configs/default.toml`
//! for the full list with defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use seminj_core::metrics::ProtocolConfig;
use seminj_core::net::{NetConfig, TrainConfig};
use seminj_core::sampler::VelocityConvention;
use seminj_core::schedule::{
    evenly_spaced_timesteps, power_weights, snr_weights, DiffusionSchedule, ScheduleSpec, SigmaMode, WeightSchedule,
};
use seminj_core::toyflow::{ShapeKind, ShapeSpec};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] seminj_core::Error),
}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: String,
    pub schedule: ScheduleSection,
    pub toy: ToySection,
    pub net: NetSection,
    pub train: TrainSection,
    pub sampling: SamplingSection,
    pub pipeline: PipelineSection,
    pub protocol: ProtocolSection,
    pub sweep: SweepSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: "runs".into(),
            schedule: ScheduleSection::default(),
            toy: ToySection::default(),
            net: NetSection::default(),
            train: TrainSection::default(),
            sampling: SamplingSection::default(),
            pipeline: PipelineSection::default(),
            protocol: ProtocolSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    #[serde(rename = "T")]
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub sigma_mode: String,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        let s = ScheduleSpec::default();
        ScheduleSection { steps: s.steps, beta_min: s.beta_min, beta_max: s.beta_max, sigma_mode: s.sigma_mode.as_str().into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToySection {
    pub n_pairs: usize,
    pub grid_size: usize,
    pub circle_radius: f64,
    pub ellipse_a: f64,
    pub ellipse_b: f64,
    pub spiral_b: f64,
    pub spiral_theta_min: f64,
    pub spiral_theta_max: f64,
}

impl Default for ToySection {
    fn default() -> Self {
        let (ShapeSpec::Circle { radius }, ShapeSpec::Ellipse { a, b }, ShapeSpec::Spiral { b: sb, theta_min, theta_max }) = (
            ShapeKind::Circle.default_spec(),
            ShapeKind::Ellipse.default_spec(),
            ShapeKind::Spiral.default_spec(),
        ) else {
            unreachable!("default specs match their kinds")
        };
        ToySection {
            n_pairs: 24,
            grid_size: 14,
            circle_radius: radius,
            ellipse_a: a,
            ellipse_b: b,
            spiral_b: sb,
            spiral_theta_min: theta_min,
            spiral_theta_max: theta_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSection {
    pub rff_features: usize,
    pub rff_scale: f64,
    pub width: usize,
    pub blocks: usize,
    pub embed_dim: usize,
}

impl Default for NetSection {
    fn default() -> Self {
        let n = NetConfig::default();
        NetSection { rff_features: n.rff_features, rff_scale: n.rff_scale, width: n.width, blocks: n.blocks, embed_dim: n.embed_dim }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// 0 trains full-batch.
    pub batch_size: usize,
    pub overfit_threshold: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_eps: t.adam_eps,
            batch_size: t.batch_size.unwrap_or(0),
            overfit_threshold: t.overfit_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSection {
    pub heun_steps: usize,
    /// `add` (f = v) or `subtract` (f = −v); recorded in checkpoints.
    pub convention: String,
}

impl Default for SamplingSection {
    fn default() -> Self {
        SamplingSection { heun_steps: 15, convention: VelocityConvention::Add.as_str().into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub n_erase: usize,
    pub k_steps: usize,
    pub delta: f64,
    /// Vertex of the power weight curve, in the 1000-step model time.
    pub center: f64,
    /// `power`, `snr` or `uniform`.
    pub weights: String,
    pub snr_exponent: f64,
    pub shape: String,
    pub slot: usize,
    pub n_points: usize,
}

impl Default for PipelineSection {
    fn default() -> Self {
        PipelineSection {
            n_erase: 1,
            k_steps: 1,
            delta: 0.0,
            center: 1000.0,
            weights: "power".into(),
            snr_exponent: 0.5,
            shape: "circle".into(),
            slot: 0,
            n_points: 24,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSection {
    pub repeats: usize,
    pub n_erase: usize,
    pub delta: f64,
    pub k_steps: usize,
    pub center: f64,
    pub reference_points: usize,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        let p = ProtocolConfig::default();
        ProtocolSection {
            repeats: p.repeats,
            n_erase: p.n_erase,
            delta: p.delta,
            k_steps: p.weight_schedule.len(),
            center: 1000.0,
            reference_points: p.reference_points,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub n_erase: Vec<usize>,
    pub delta: Vec<f64>,
    pub center: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection { n_erase: vec![1, 2, 5, 10, 20], delta: vec![], center: vec![] }
    }
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        let s = &self.schedule;
        let spec = ScheduleSpec {
            steps: s.steps,
            beta_min: s.beta_min,
            beta_max: s.beta_max,
            sigma_mode: SigmaMode::parse(&s.sigma_mode)?,
        };
        Ok(spec.build()?)
    }

    pub fn shape(&self, kind: ShapeKind) -> Result<ShapeSpec> {
        let t = &self.toy;
        let spec = match kind {
            ShapeKind::Circle => ShapeSpec::Circle { radius: t.circle_radius },
            ShapeKind::Ellipse => ShapeSpec::Ellipse { a: t.ellipse_a, b: t.ellipse_b },
            ShapeKind::Spiral => ShapeSpec::Spiral { b: t.spiral_b, theta_min: t.spiral_theta_min, theta_max: t.spiral_theta_max },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn net(&self) -> Result<NetConfig> {
        let n = &self.net;
        let cfg = NetConfig {
            rff_features: n.rff_features,
            rff_scale: n.rff_scale,
            width: n.width,
            blocks: n.blocks,
            embed_dim: n.embed_dim,
            ..NetConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let cfg = TrainConfig {
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_eps: t.adam_eps,
            batch_size: (t.batch_size > 0).then_some(t.batch_size),
            master_seed: self.seed,
            overfit_threshold: t.overfit_threshold,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn convention(&self) -> Result<VelocityConvention> {
        Ok(VelocityConvention::parse(&self.sampling.convention)?)
    }

    /// `k` timesteps evenly spaced down from 1000, weighted per `[pipeline].weights`.
    pub fn weight_schedule(&self, k: usize, center: f64) -> Result<WeightSchedule> {
        let steps = evenly_spaced_timesteps(1000, k)?;
        let ts: Vec<f64> = steps.iter().map(|&t| t as f64).collect();
        match self.pipeline.weights.as_str() {
            "power" => Ok(power_weights(&ts, center)?),
            "uniform" => Ok(WeightSchedule::uniform(ts)?),
            "snr" => {
                let sched = self.schedule()?;
                if sched.steps() != 1000 {
                    return Err(invalid("snr weights need a 1000-step schedule ([schedule] T = 1000)"));
                }
                Ok(snr_weights(&sched, &steps, self.pipeline.snr_exponent)?)
            }
            other => Err(invalid(format!("unknown weights {other:?} (expected power|snr|uniform)"))),
        }
    }

    pub fn protocol(&self) -> Result<ProtocolConfig> {
        let p = &self.protocol;
        Ok(ProtocolConfig {
            repeats: p.repeats,
            n_points: self.toy.n_pairs,
            heun_steps: self.sampling.heun_steps,
            convention: self.convention()?,
            n_erase: p.n_erase,
            delta: p.delta,
            weight_schedule: self.weight_schedule(p.k_steps, p.center)?,
            reference_points: p.reference_points,
            mse_threshold: self.train.overfit_threshold,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule()?;
        for k in ShapeKind::ALL {
            self.shape(k)?;
        }
        self.net()?;
        self.train()?;
        self.convention()?;
        ShapeKind::parse(&self.pipeline.shape)?;
        if self.toy.n_pairs == 0 || self.toy.grid_size < 2 {
            return Err(invalid("toy.n_pairs must be positive and toy.grid_size at least 2"));
        }
        if self.sampling.heun_steps == 0 {
            return Err(invalid("sampling.heun_steps must be positive"));
        }
        self.protocol()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c, RunConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn shipped_default_file_matches_defaults() {
        let text = include_str!("../../../configs/default.toml");
        assert_eq!(RunConfig::parse(text).unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = RunConfig::default();
        c.train.epochs = 7;
        c.sweep.delta = vec![0.1, 0.2];
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn schedule_keys_and_unknown_fields() {
        let c = RunConfig::parse("[schedule]\nT = 50\nbeta_min = 0.001\nbeta_max = 0.01\nsigma_mode = \"posterior\"\n").unwrap();
        assert_eq!(c.schedule().unwrap().steps(), 50);
        assert!(RunConfig::parse("[schedule]\nsteps = 50\n").is_err());
        assert!(RunConfig::parse("[train]\nepochs = 0\n").unwrap().validate().is_err());
    }
}
