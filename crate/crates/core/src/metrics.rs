//! Point-set metrics and the four-condition generation protocol.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::inject::{run_pipeline, ModelKind, PipelineConfig, SamplerConfig, ToyFlowModel};
use crate::net::{ConditionVector, ModelParams};
use crate::noise::SeedBank;
use crate::sampler::VelocityConvention;
use crate::schedule::WeightSchedule;
use crate::toyflow::{reference_curve, Point, ShapeKind, ShapeSpec};

fn dist(a: Point, b: Point) -> f64 {
    libm::hypot(a[0] - b[0], a[1] - b[1])
}

/// Distance from each point of `from` to its nearest neighbour in `to`,
/// by a sweep over `to` sorted on the first coordinate.
fn nearest_distances(from: &[Point], to: &[Point]) -> Vec<f64> {
    let mut sorted = to.to_vec();
    sorted.sort_by(|p, q| p[0].total_cmp(&q[0]));
    from.iter()
        .map(|&p| {
            let start = sorted.partition_point(|q| q[0] < p[0]);
            let mut best = f64::INFINITY;
            for q in &sorted[start..] {
                if q[0] - p[0] >= best {
                    break;
                }
                best = best.min(dist(p, *q));
            }
            for q in sorted[..start].iter().rev() {
                if p[0] - q[0] >= best {
                    break;
                }
                best = best.min(dist(p, *q));
            }
            best
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Symmetric mean nearest-neighbour distance
/// `½ [mean_a min_b ‖a − b‖ + mean_b min_a ‖a − b‖]`, unsquared.
pub fn chamfer(a: &[Point], b: &[Point]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("chamfer point set"));
    }
    if a.iter().chain(b).any(|p| !(p[0].is_finite() && p[1].is_finite())) {
        return Err(Error::param("chamfer points must be finite"));
    }
    Ok(0.5 * (mean(&nearest_distances(a, b)) + mean(&nearest_distances(b, a))))
}

/// Reference implementation of [`chamfer`] by exhaustive search.
pub fn chamfer_naive(a: &[Point], b: &[Point]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("chamfer point set"));
    }
    let one_way = |x: &[Point], y: &[Point]| {
        mean(&x.iter().map(|&p| y.iter().map(|&q| dist(p, q)).fold(f64::INFINITY, f64::min)).collect::<Vec<_>>())
    };
    Ok(0.5 * (one_way(a, b) + one_way(b, a)))
}

/// `exp(−chamfer)`.
pub fn fit_score(chamfer_value: f64) -> Result<f64> {
    if !(chamfer_value >= 0.0) {
        return Err(Error::param(format!("chamfer distance must be non-negative, got {chamfer_value}")));
    }
    Ok(libm::exp(-chamfer_value))
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("quantile input"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::param(format!("quantile level {p} outside [0, 1]")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p;
    let lo = libm::floor(h) as usize;
    let hi = (lo + 1).min(v.len() - 1);
    Ok(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Condition {
    Matched,
    Mismatched,
    Erased,
    Injected,
}

impl Condition {
    pub const ALL: [Condition; 4] = [Condition::Matched, Condition::Mismatched, Condition::Erased, Condition::Injected];

    pub fn name(self) -> &'static str {
        match self {
            Condition::Matched => "matched",
            Condition::Mismatched => "mismatched",
            Condition::Erased => "erased",
            Condition::Injected => "injected",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::param(format!("unknown condition {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionStats {
    pub condition: Condition,
    pub chamfer: Vec<f64>,
    pub fit: Vec<f64>,
    pub median: f64,
    pub iqr: f64,
}

impl ConditionStats {
    pub fn from_chamfer(condition: Condition, chamfer: Vec<f64>) -> Result<Self> {
        let fit = chamfer.iter().map(|&c| fit_score(c)).collect::<Result<Vec<_>>>()?;
        let median = quantile(&chamfer, 0.5)?;
        let iqr = quantile(&chamfer, 0.75)? - quantile(&chamfer, 0.25)?;
        Ok(ConditionStats { condition, chamfer, fit, median, iqr })
    }

    pub fn repeats(&self) -> usize {
        self.chamfer.len()
    }
}

/// Pass/fail of the qualitative orderings on median Chamfer distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Orderings {
    pub matched_below_mismatched: bool,
    pub erased_below_mismatched: bool,
    pub injected_below_mismatched: bool,
    /// `median(Mismatched) − median(Matched) > IQR(Matched)`.
    pub gap_exceeds_matched_iqr: bool,
}

impl Orderings {
    pub fn all(&self) -> bool {
        self.matched_below_mismatched
            && self.erased_below_mismatched
            && self.injected_below_mismatched
            && self.gap_exceeds_matched_iqr
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub shape: ShapeKind,
    /// In [`Condition::ALL`] order.
    pub conditions: Vec<ConditionStats>,
    /// Set when the model's recorded training loss is missing or above the
    /// memorization threshold.
    pub untrained_warning: bool,
}

impl ExperimentReport {
    pub fn stats(&self, c: Condition) -> &ConditionStats {
        self.conditions.iter().find(|s| s.condition == c).expect("report holds every condition")
    }

    pub fn orderings(&self) -> Orderings {
        let m = self.stats(Condition::Matched);
        let x = self.stats(Condition::Mismatched).median;
        Orderings {
            matched_below_mismatched: m.median < x,
            erased_below_mismatched: self.stats(Condition::Erased).median < x,
            injected_below_mismatched: self.stats(Condition::Injected).median < x,
            gap_exceeds_matched_iqr: x - m.median > m.iqr,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub repeats: usize,
    /// Generated points per set; equal to the memorized pairs per seed so a
    /// matched draw reproduces the training noise exactly.
    pub n_points: usize,
    pub heun_steps: usize,
    pub convention: VelocityConvention,
    pub n_erase: usize,
    pub delta: f64,
    pub weight_schedule: WeightSchedule,
    pub reference_points: usize,
    pub mse_threshold: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            repeats: 20,
            n_points: 24,
            heun_steps: 15,
            convention: VelocityConvention::Add,
            n_erase: 10,
            delta: 0.1,
            weight_schedule: WeightSchedule::uniform(vec![1000.0]).expect("single timestep"),
            reference_points: 512,
            mse_threshold: 1e-3,
        }
    }
}

/// Seeds and condition slots of one repeat.
#[derive(Debug, Clone, PartialEq)]
pub struct RepeatPlan {
    pub matched_seed: u64,
    pub matched_slot: usize,
    pub mismatched_seed: u64,
    pub mismatched_slot: usize,
    pub erase_seeds: Vec<u64>,
}

/// Repeat `r` for a target bank: the matched seed cycles through the bank;
/// the mismatched draw takes another shape's seed under a different slot;
/// erasure sums `n_erase` consecutive seeds from the other banks.
pub fn plan_repeat(target: &[u64], others: &[u64], r: usize, n_erase: usize) -> Result<RepeatPlan> {
    if target.len() < 2 || others.is_empty() {
        return Err(Error::param("protocol needs a target bank of at least two seeds and another bank"));
    }
    let k = target.len();
    let j = r % k;
    let shift = 1 + (r / k) % (k - 1);
    Ok(RepeatPlan {
        matched_seed: target[j],
        matched_slot: j,
        mismatched_seed: others[r % others.len()],
        mismatched_slot: (j + shift) % k,
        erase_seeds: (0..n_erase).map(|i| others[(r + i) % others.len()]).collect(),
    })
}

/// Runs Matched, Mismatched, Erased and Injected generation `repeats` times
/// for one shape and scores each set against the shape's reference curve.
pub fn run_experiment(
    params: &ModelParams,
    banks: &SeedBank,
    shape: &ShapeSpec,
    cfg: &ProtocolConfig,
    recorded_mse: Option<f64>,
) -> Result<ExperimentReport> {
    if cfg.repeats == 0 {
        return Err(Error::param("protocol needs at least one repeat"));
    }
    let kind = shape.kind();
    let target = banks.get(kind.name()).ok_or_else(|| Error::param(format!("no seed bank for {}", kind.name())))?;
    let others: Vec<u64> = banks.iter().filter(|(name, _)| *name != kind.name()).flat_map(|(_, s)| s.iter().copied()).collect();
    let reference = reference_curve(shape, cfg.reference_points)?;
    let model = ToyFlowModel { params };
    let sampler = SamplerConfig::Heun { steps: cfg.heun_steps, convention: cfg.convention };
    let pipeline = |n: usize, delta: f64| PipelineConfig {
        n_erase: n,
        weight_schedule: cfg.weight_schedule.clone(),
        delta,
        model_kind: ModelKind::VelocityFlow,
        latent_shape: vec![cfg.n_points, 2],
    };
    let score = |seeds: &[u64], slot: usize, n: usize, delta: f64| -> Result<f64> {
        let cond = ConditionVector::new(shape, slot);
        let out = run_pipeline(&model, &cond, &pipeline(n, delta), seeds, &sampler)?;
        chamfer(&out.sample.to_points()?, &reference.points)
    };
    let mut values = vec![Vec::with_capacity(cfg.repeats); 4];
    for r in 0..cfg.repeats {
        let p = plan_repeat(target, &others, r, cfg.n_erase)?;
        values[0].push(score(&[p.matched_seed], p.matched_slot, 1, 0.0)?);
        values[1].push(score(&[p.mismatched_seed], p.mismatched_slot, 1, 0.0)?);
        values[2].push(score(&p.erase_seeds, p.mismatched_slot, cfg.n_erase, 0.0)?);
        values[3].push(score(&[p.mismatched_seed], p.mismatched_slot, 1, cfg.delta)?);
    }
    let conditions = Condition::ALL
        .into_iter()
        .zip(values)
        .map(|(c, v)| ConditionStats::from_chamfer(c, v))
        .collect::<Result<Vec<_>>>()?;
    let untrained_warning = !matches!(recorded_mse, Some(m) if m <= cfg.mse_threshold);
    Ok(ExperimentReport { shape: kind, conditions, untrained_warning })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetConfig;
    use crate::rng::GaussianRng;
    use crate::toyflow::default_seed_banks;

    fn cloud(seed: u64, n: usize) -> Vec<Point> {
        let mut rng = GaussianRng::new(seed);
        (0..n).map(|_| [rng.normal(), rng.normal()]).collect()
    }

    #[test]
    fn chamfer_examples() {
        let a = cloud(1, 30);
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        assert_eq!(chamfer(&[[0.0, 0.0]], &[[3.0, 4.0]]).unwrap(), 5.0);
        let b = cloud(2, 17);
        assert_eq!(chamfer(&a, &b).unwrap(), chamfer(&b, &a).unwrap());
        assert!(chamfer(&[], &b).is_err());
    }

    #[test]
    fn sweep_matches_naive() {
        for s in 0..20 {
            let a = cloud(10 + s, 1 + (s as usize * 37) % 512);
            let b = cloud(100 + s, 1 + (s as usize * 91) % 512);
            let fast = chamfer(&a, &b).unwrap();
            let slow = chamfer_naive(&a, &b).unwrap();
            assert!((fast - slow).abs() < 1e-12, "{fast} {slow}");
        }
    }

    #[test]
    fn fit_score_examples() {
        assert_eq!(fit_score(0.0).unwrap(), 1.0);
        assert!((fit_score(core::f64::consts::LN_2).unwrap() - 0.5).abs() < 1e-15);
        assert!(fit_score(0.3).unwrap() > fit_score(0.31).unwrap());
        assert!(fit_score(-0.1).is_err());
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(quantile(&v, 0.5).unwrap(), 2.5);
        assert_eq!(quantile(&v, 0.25).unwrap(), 1.75);
        assert_eq!(quantile(&v, 1.0).unwrap(), 4.0);
        assert_eq!(quantile(&[7.0], 0.75).unwrap(), 7.0);
    }

    #[test]
    fn repeat_plan_never_reuses_slot() {
        let banks = default_seed_banks();
        let target = banks.get("circle").unwrap();
        let others: Vec<u64> = banks.iter().filter(|(n, _)| *n != "circle").flat_map(|(_, s)| s.to_vec()).collect();
        for r in 0..100 {
            let p = plan_repeat(target, &others, r, 10).unwrap();
            assert_ne!(p.matched_slot, p.mismatched_slot);
            assert!(!target.contains(&p.mismatched_seed));
            assert_eq!(p.erase_seeds.len(), 10);
        }
    }

    #[test]
    fn single_repeat_report_has_every_condition() {
        let net = NetConfig { rff_features: 8, width: 8, blocks: 1, embed_dim: 2, ..NetConfig::default() };
        let params = ModelParams::init(net, 1).unwrap();
        let cfg = ProtocolConfig { repeats: 1, heun_steps: 3, reference_points: 64, ..ProtocolConfig::default() };
        let rep = run_experiment(&params, &default_seed_banks(), &ShapeKind::Ellipse.default_spec(), &cfg, None).unwrap();
        assert_eq!(rep.conditions.len(), 4);
        assert!(rep.conditions.iter().all(|c| c.repeats() == 1 && c.median.is_finite()));
        assert!(rep.untrained_warning);
        let ok = run_experiment(&params, &default_seed_banks(), &ShapeKind::Ellipse.default_spec(), &cfg, Some(1e-4)).unwrap();
        assert!(!ok.untrained_warning);
    }
}
