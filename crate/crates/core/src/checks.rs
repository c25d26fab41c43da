//! Self-contained numerical checks with pinned tolerances, shared by the
//! `verify` command and the acceptance tests.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::inject::{blend_eps, generate, pipeline_seeds, run_pipeline, tpw_eps, FnDenoiser, ModelKind, PipelineConfig, SamplerConfig, ToyFlowModel};
use crate::net::{loss_and_grad, ConditionVector, ModelParams, NetConfig, Sample};
use crate::noise::{erase, erase_seeds, mi_per_source, sample_gaussian, source_correlation, MomentReport};
use crate::oracle::{cost_ratio, sample_world, verify_claim1, verify_snr_phases, verify_time_shift};
use crate::rng::{derive_seed, GaussianRng};
use crate::sampler::{heun_integrate, VelocityConvention};
use crate::schedule::{
    classify_phase, evenly_spaced_timesteps, make_linear_schedule, power_weights, snr_from_alpha_bar, snr_weights, Phase,
    PhaseThresholds, WeightSchedule,
};
use crate::tensor::NoiseTensor;
use crate::toyflow::ShapeKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CheckId {
    Nln,
    Correlation,
    Tpw,
    Claim1,
    Snr,
    TimeShift,
    Heun,
    Gradient,
    Degeneracy,
    Cost,
}

impl CheckId {
    pub const ALL: [CheckId; 10] = [
        CheckId::Nln,
        CheckId::Correlation,
        CheckId::Tpw,
        CheckId::Claim1,
        CheckId::Snr,
        CheckId::TimeShift,
        CheckId::Heun,
        CheckId::Gradient,
        CheckId::Degeneracy,
        CheckId::Cost,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckId::Nln => "nln",
            CheckId::Correlation => "correlation",
            CheckId::Tpw => "tpw",
            CheckId::Claim1 => "claim1",
            CheckId::Snr => "snr",
            CheckId::TimeShift => "time-shift",
            CheckId::Heun => "heun",
            CheckId::Gradient => "gradient",
            CheckId::Degeneracy => "degeneracy",
            CheckId::Cost => "cost",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::param(format!("unknown check {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub id: CheckId,
    pub passed: bool,
    pub summary: String,
    /// Measured quantities, for machine-readable reports.
    pub values: Vec<(String, f64)>,
}

impl CheckResult {
    fn new(id: CheckId, passed: bool, summary: String, values: Vec<(&str, f64)>) -> Self {
        CheckResult { id, passed, summary, values: values.into_iter().map(|(k, v)| (k.into(), v)).collect() }
    }
}

pub fn run_check(id: CheckId, seed: u64) -> Result<CheckResult> {
    match id {
        CheckId::Nln => nln(seed),
        CheckId::Correlation => correlation(seed),
        CheckId::Tpw => tpw(seed),
        CheckId::Claim1 => claim1(seed),
        CheckId::Snr => snr(),
        CheckId::TimeShift => time_shift(),
        CheckId::Heun => heun(),
        CheckId::Gradient => gradient(seed),
        CheckId::Degeneracy => degeneracy(seed),
        CheckId::Cost => cost(),
    }
}

pub fn run_checks(ids: &[CheckId], seed: u64) -> Result<Vec<CheckResult>> {
    ids.iter().map(|&id| run_check(id, seed)).collect()
}

/// 10⁴ erased samples of 16 sources in 8 dimensions.
fn nln(seed: u64) -> Result<CheckResult> {
    let (draws, n, d) = (10_000usize, 16usize, 8usize);
    let mut rows = Vec::with_capacity(draws * d);
    for i in 0..draws {
        let seeds: Vec<u64> = (0..n).map(|j| derive_seed(seed, (i * n + j) as u64)).collect();
        rows.extend_from_slice(erase_seeds(&seeds, &[d])?.data());
    }
    let rep = MomentReport::from_rows(&rows, d)?;
    let cov = rep.cov_diag_max_dev.max(rep.cov_offdiag_max_abs);
    Ok(CheckResult::new(
        CheckId::Nln,
        rep.mean_max_abs < 0.02 && cov < 0.05,
        format!("mean max-abs {:.4} (< 0.02), covariance deviation {:.4} (< 0.05)", rep.mean_max_abs, cov),
        vec![("mean_max_abs", rep.mean_max_abs), ("cov_max_dev", cov)],
    ))
}

fn correlation(seed: u64) -> Result<CheckResult> {
    let rho = source_correlation(4, 1, 100_000, seed)?;
    let mut decreasing = true;
    let mut prev = f64::INFINITY;
    for n in 2..=100 {
        let mi = mi_per_source(n, 8)?;
        decreasing &= mi < prev;
        prev = mi;
    }
    Ok(CheckResult::new(
        CheckId::Correlation,
        libm::fabs(rho - 0.5) <= 0.03 && decreasing,
        format!("corr(z_i, erased) at n = 4: {rho:.4} (0.5 ± 0.03); per-source MI decreasing on 2..100: {decreasing}"),
        vec![("correlation_n4", rho), ("mi_decreasing", decreasing as u8 as f64)],
    ))
}

/// Synthetic ε model returning a fresh N(0, I) draw on every call.
fn tpw(seed: u64) -> Result<CheckResult> {
    let sched = make_linear_schedule(1000, 1e-4, 2e-2)?;
    let ts = evenly_spaced_timesteps(1000, 5)?;
    let tsf: Vec<f64> = ts.iter().map(|&t| t as f64).collect();
    let schedules = [
        WeightSchedule::uniform(tsf.clone())?,
        power_weights(&tsf, 800.0)?,
        snr_weights(&sched, &ts, 0.5)?,
        WeightSchedule::new(vec![900.0, 100.0], vec![0.9, 0.1])?,
    ];
    let (draws, d) = (20_000usize, 4usize);
    let mut worst = 0.0f64;
    let counter = core::cell::Cell::new(0u64);
    let model = FnDenoiser::new(ModelKind::EpsilonDiffusion, |z: &NoiseTensor, _t: f64, _: &()| {
        counter.set(counter.get() + 1);
        sample_gaussian(derive_seed(seed ^ 0x7450, counter.get()), z.shape())
    });
    for (si, ws) in schedules.iter().enumerate() {
        let mut agg_rows = Vec::with_capacity(draws * d);
        let mut adj_rows = vec![Vec::with_capacity(draws * d); 3];
        for i in 0..draws {
            let z = sample_gaussian(derive_seed(seed, (si * draws + i) as u64), &[d])?;
            let agg = tpw_eps(&model, &z, &(), ws)?;
            for (rows, delta) in adj_rows.iter_mut().zip([0.3, 0.7, 1.5]) {
                rows.extend_from_slice(blend_eps(&z, &agg, delta)?.data());
            }
            agg_rows.extend_from_slice(agg.data());
        }
        for rows in core::iter::once(&agg_rows).chain(adj_rows.iter()) {
            let rep = MomentReport::from_rows(rows, d)?;
            worst = worst.max(rep.cov_diag_max_dev).max(rep.cov_offdiag_max_abs);
        }
    }
    Ok(CheckResult::new(
        CheckId::Tpw,
        worst < 0.05,
        format!("largest covariance deviation over 4 weight schedules, aggregate and δ ∈ {{0.3, 0.7, 1.5}}: {worst:.4} (< 0.05)"),
        vec![("cov_max_dev", worst)],
    ))
}

fn claim1(seed: u64) -> Result<CheckResult> {
    let sched = make_linear_schedule(1000, 1e-4, 2e-2)?;
    let mut rng = GaussianRng::new(seed);
    let mut worst = 0.0f64;
    for k in 0..10u64 {
        let world = sample_world(derive_seed(seed, k), 8, 0.5 + 1.5 * rng.uniform(), 0.2 + rng.uniform(), sched.clone())?;
        let t = 1 + rng.below(1000);
        let mut x = vec![0.0; 8];
        rng.fill_normal(&mut x);
        let lambda = 10.0 * rng.uniform();
        worst = worst.max(verify_claim1(&world, t, &x, lambda)?.discrepancy);
    }
    Ok(CheckResult::new(
        CheckId::Claim1,
        worst < 1e-8,
        format!("max |guided − unguided − λγ∇log p(y|x_t)| over 10 configurations: {worst:.3e} (< 1e-8)"),
        vec![("max_discrepancy", worst)],
    ))
}

fn snr() -> Result<CheckResult> {
    let sched = make_linear_schedule(1000, 1e-4, 2e-2)?;
    let thr = PhaseThresholds::default();
    let rep = verify_snr_phases(&sched, &thr, 8)?;
    let unit = snr_from_alpha_bar(0.5);
    let classes = classify_phase(1e-3, &thr)? == Phase::Early
        && classify_phase(unit, &thr)? == Phase::Middle
        && classify_phase(1e3, &thr)? == Phase::Late;
    Ok(CheckResult::new(
        CheckId::Snr,
        rep.passed() && unit == 1.0 && classes,
        format!(
            "strictly decreasing in t: {}; snr(ᾱ = 0.5) = {unit}; Late t ≤ {}, Early t ≥ {}; power identity error {:.1e}",
            rep.first_violation.is_none(),
            rep.late_until.map_or("none".into(), |t| t.to_string()),
            rep.early_from.map_or("none".into(), |t| t.to_string()),
            rep.power_identity_error
        ),
        vec![
            ("monotone", rep.first_violation.is_none() as u8 as f64),
            ("snr_half", unit),
            ("power_identity_error", rep.power_identity_error),
        ],
    ))
}

/// Linear field with `v = z`, sampled with `f = −v`: the exact flow is `e^{−t} z`.
fn time_shift() -> Result<CheckResult> {
    let v = |z: &[f64], _t: f64, out: &mut [f64]| -> Result<()> {
        out.copy_from_slice(z);
        Ok(())
    };
    let rep = verify_time_shift(v, VelocityConvention::Subtract, &[1.0, 1.0], &[0.1, 0.05, 0.025], None)?;
    Ok(CheckResult::new(
        CheckId::TimeShift,
        rep.second_order(),
        format!("e(β)/e(β/2) for β = 0.1, 0.05: {:.3?} (in [3.5, 4.5])", rep.ratios),
        rep.ratios.iter().map(|&r| ("ratio", r)).collect(),
    ))
}

fn heun() -> Result<CheckResult> {
    let grow = |z: &[f64], _t: f64, out: &mut [f64]| -> Result<()> {
        out.copy_from_slice(z);
        Ok(())
    };
    let err = |steps| -> Result<f64> {
        let traj = heun_integrate(grow, &[1.0], 0.0, 1.0, steps)?;
        Ok(libm::fabs(traj.final_state()[0] - core::f64::consts::E))
    };
    let (e100, e200) = (err(100)?, err(200)?);
    let ratio = e100 / e200;
    Ok(CheckResult::new(
        CheckId::Heun,
        e100 < 1e-3 && (3.5..=4.5).contains(&ratio),
        format!("dz/dt = z: error {e100:.2e} at 100 steps, halving ratio {ratio:.3} (in [3.5, 4.5])"),
        vec![("error_100", e100), ("ratio", ratio)],
    ))
}

/// Width-16 network; every group's analytic gradient against central differences.
pub fn gradient_errors(seed: u64) -> Result<Vec<(String, f64)>> {
    let net = NetConfig { rff_features: 16, rff_scale: 2.0, width: 16, blocks: 3, embed_dim: 4, embed_slots: 6 };
    let mut params = ModelParams::init(net, seed)?;
    let mut rng = GaussianRng::new(derive_seed(seed, 1));
    let batch: Vec<Sample> = (0..12)
        .map(|i| Sample {
            x: [rng.normal(), rng.normal()],
            t: rng.uniform(),
            cond: ConditionVector::new(&ShapeKind::ALL[i % 3].default_spec(), i % 6),
            target: [rng.normal(), rng.normal()],
        })
        .collect();
    let (_, grad) = loss_and_grad(&params, &batch)?;
    let h = 1e-5;
    let mut out = Vec::new();
    for g in params.groups() {
        let (mut diff, mut norm) = (0.0, 0.0);
        for i in g.range.clone() {
            let orig = params.learnable()[i];
            params.learnable_mut()[i] = orig + h;
            let up = loss_and_grad(&params, &batch)?.0;
            params.learnable_mut()[i] = orig - h;
            let down = loss_and_grad(&params, &batch)?.0;
            params.learnable_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            diff += (grad[i] - fd) * (grad[i] - fd);
            norm += fd * fd;
        }
        let rel = if norm == 0.0 { libm::sqrt(diff) } else { libm::sqrt(diff / norm) };
        out.push((g.name, rel));
    }
    Ok(out)
}

fn gradient(seed: u64) -> Result<CheckResult> {
    let errs = gradient_errors(seed)?;
    let (name, worst) = errs.iter().fold((String::new(), 0.0f64), |acc, (n, e)| if *e > acc.1 { (n.clone(), *e) } else { acc });
    Ok(CheckResult::new(
        CheckId::Gradient,
        worst < 1e-4,
        format!("{} parameter groups; largest relative error {worst:.2e} in {name} (< 1e-4)", errs.len()),
        vec![("max_relative_error", worst)],
    ))
}

/// `(n = 1, δ = 0)` pipeline against plain sampling, and single-source erasure.
fn degeneracy(seed: u64) -> Result<CheckResult> {
    let net = NetConfig { rff_features: 16, width: 16, blocks: 2, embed_dim: 4, ..NetConfig::default() };
    let params = ModelParams::init(net, seed)?;
    let model = ToyFlowModel { params: &params };
    let cond = ConditionVector::new(&ShapeKind::Spiral.default_spec(), 2);
    let sampler = SamplerConfig::Heun { steps: 12, convention: VelocityConvention::Add };
    let cfg = PipelineConfig {
        n_erase: 1,
        weight_schedule: WeightSchedule::uniform(vec![1000.0, 900.0])?,
        delta: 0.0,
        model_kind: ModelKind::VelocityFlow,
        latent_shape: vec![32, 2],
    };
    let seeds = pipeline_seeds(seed, 1);
    let piped = run_pipeline(&model, &cond, &cfg, &seeds, &sampler)?;
    let z = sample_gaussian(seeds[0], &[32, 2])?;
    let plain = generate(&model, &z, &cond, &sampler)?;
    let pipeline_same = piped.sample.data().iter().zip(plain.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    let erased = erase(core::slice::from_ref(&z))?;
    let erase_same = erased.data().iter().zip(z.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    Ok(CheckResult::new(
        CheckId::Degeneracy,
        pipeline_same && erase_same,
        format!("pipeline(n = 1, δ = 0) bitwise equal to sampling: {pipeline_same}; erase of one draw is identity: {erase_same}"),
        vec![("pipeline_identical", pipeline_same as u8 as f64), ("erase_identity", erase_same as u8 as f64)],
    ))
}

fn cost() -> Result<CheckResult> {
    let r = cost_ratio(50, 10, 0.1, 10)?;
    Ok(CheckResult::new(
        CheckId::Cost,
        r == 1.22,
        format!("cost_ratio(50, 10, 0.1, 10) = {r} (exactly 1.22)"),
        vec![("ratio", r)],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for id in CheckId::ALL {
            assert_eq!(CheckId::parse(id.name()).unwrap(), id);
        }
        assert!(CheckId::parse("nope").is_err());
    }

    #[test]
    fn fast_checks_pass() {
        for id in [CheckId::Snr, CheckId::Heun, CheckId::Cost, CheckId::Claim1, CheckId::Degeneracy, CheckId::TimeShift] {
            let r = run_check(id, 0).unwrap();
            assert!(r.passed, "{}: {}", id.name(), r.summary);
        }
    }
}
