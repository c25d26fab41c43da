//! Analytic Gaussian world with closed-form scores, plus numerical checks of
//! the semantic-gradient step, the SNR phase ordering, the first-order time
//! shift behind velocity injection, and the overhead formula.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::noise::sample_gaussian;
use crate::sampler::{ddpm_reverse_step, flow_map, VelocityConvention};
use crate::schedule::{classify_phase, DiffusionSchedule, Phase, PhaseThresholds};
use crate::tensor::NoiseTensor;

/// Prior `x₀ ~ N(0, I_d)`, observation `y | x₀ ~ N(a x₀, s² I)`, diffused by `sched`.
/// The forward marginal of `x_t` stays `N(0, I)` at every step.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianWorld {
    pub a: f64,
    pub s: f64,
    pub y: Vec<f64>,
    pub sched: DiffusionSchedule,
}

impl GaussianWorld {
    pub fn new(a: f64, s: f64, y: Vec<f64>, sched: DiffusionSchedule) -> Result<Self> {
        if !(s > 0.0 && s.is_finite() && a.is_finite()) {
            return Err(Error::param(format!("need finite a and s > 0, got a = {a}, s = {s}")));
        }
        if y.is_empty() {
            return Err(Error::EmptyInput("observation y"));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("observation must be finite"));
        }
        Ok(GaussianWorld { a, s, y, sched })
    }

    pub fn dim(&self) -> usize {
        self.y.len()
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::ShapeMismatch { expected: vec![self.dim()], got: vec![x.len()] });
        }
        Ok(())
    }

    /// `(a√ᾱ, a²(1−ᾱ) + s²)`: mean gain and variance of `y | x_t`.
    fn likelihood(&self, t: usize) -> Result<(f64, f64)> {
        let ab = self.sched.alpha_bar(t)?;
        let g = self.a * libm::sqrt(ab);
        Ok((g, self.a * self.a * (1.0 - ab) + self.s * self.s))
    }

    /// `(mean gain on y, variance)` of `x_t | y` from the joint Gaussian.
    fn posterior(&self, t: usize) -> Result<(f64, f64)> {
        let ab = self.sched.alpha_bar(t)?;
        let vy = self.a * self.a + self.s * self.s;
        let cov = self.a * libm::sqrt(ab);
        Ok((cov / vy, 1.0 - cov * cov / vy))
    }

    /// `log p(x_t)` up to its constant.
    pub fn log_marginal(&self, x: &[f64]) -> f64 {
        -0.5 * x.iter().map(|v| v * v).sum::<f64>()
    }

    /// `log p(y | x_t)` up to a constant.
    pub fn log_likelihood(&self, x: &[f64], t: usize) -> Result<f64> {
        self.check_x(x)?;
        let (g, var) = self.likelihood(t)?;
        Ok(-0.5 * x.iter().zip(&self.y).map(|(xi, yi)| (yi - g * xi) * (yi - g * xi)).sum::<f64>() / var)
    }

    /// `log p(x_t | y)` up to a constant.
    pub fn log_posterior(&self, x: &[f64], t: usize) -> Result<f64> {
        self.check_x(x)?;
        let (k, var) = self.posterior(t)?;
        Ok(-0.5 * x.iter().zip(&self.y).map(|(xi, yi)| (xi - k * yi) * (xi - k * yi)).sum::<f64>() / var)
    }

    /// `∇ log p(x_t) = −x_t`.
    pub fn uncond_score(&self, x: &[f64], t: usize) -> Result<Vec<f64>> {
        self.check_x(x)?;
        self.sched.alpha_bar(t)?;
        Ok(x.iter().map(|v| -v).collect())
    }

    /// `∇ log p(x_t | y)` from the conditional Gaussian.
    pub fn cond_score(&self, x: &[f64], t: usize) -> Result<Vec<f64>> {
        self.check_x(x)?;
        let (k, var) = self.posterior(t)?;
        Ok(x.iter().zip(&self.y).map(|(xi, yi)| -(xi - k * yi) / var).collect())
    }

    /// `∇ log p(y | x_t) = a√ᾱ (y − a√ᾱ x_t) / (a²(1−ᾱ) + s²)`.
    pub fn semantic_grad(&self, x: &[f64], t: usize) -> Result<Vec<f64>> {
        self.check_x(x)?;
        let (g, var) = self.likelihood(t)?;
        Ok(x.iter().zip(&self.y).map(|(xi, yi)| g * (yi - g * xi) / var).collect())
    }

    /// Exact noise prediction `ε = −√(1−ᾱ) · score`.
    fn eps_from_score(&self, score: &[f64], t: usize) -> Result<Vec<f64>> {
        let c = libm::sqrt(1.0 - self.sched.alpha_bar(t)?);
        Ok(score.iter().map(|v| -c * v).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Claim1Report {
    /// Guided minus unguided deterministic reverse step.
    pub semantic_increment: Vec<f64>,
    /// `λ γ_t ∇ log p(y | x_t)`.
    pub predicted: Vec<f64>,
    pub discrepancy: f64,
}

/// Runs one guided and one unguided ζ = 0 reverse step with exact ε
/// predictions and compares their difference with `λ γ_t ∇ log p(y | x_t)`.
pub fn verify_claim1(world: &GaussianWorld, t: usize, x_t: &[f64], lambda: f64) -> Result<Claim1Report> {
    let eps_u = world.eps_from_score(&world.uncond_score(x_t, t)?, t)?;
    let eps_c = world.eps_from_score(&world.cond_score(x_t, t)?, t)?;
    let eps_g: Vec<f64> = eps_u.iter().zip(&eps_c).map(|(u, c)| u + lambda * (c - u)).collect();
    let shape = vec![world.dim()];
    let x = NoiseTensor::new(x_t.to_vec(), shape.clone())?;
    let zero = NoiseTensor::zeros(shape.clone())?;
    let guided = ddpm_reverse_step(&world.sched, &x, t, &NoiseTensor::new(eps_g, shape.clone())?, &zero)?;
    let plain = ddpm_reverse_step(&world.sched, &x, t, &NoiseTensor::new(eps_u, shape)?, &zero)?;
    let semantic_increment: Vec<f64> = guided.data().iter().zip(plain.data()).map(|(g, p)| g - p).collect();
    let gamma = world.sched.gamma(t)?;
    let predicted: Vec<f64> = world.semantic_grad(x_t, t)?.into_iter().map(|g| lambda * gamma * g).collect();
    let discrepancy = semantic_increment.iter().zip(&predicted).map(|(a, b)| libm::fabs(a - b)).fold(0.0, f64::max);
    Ok(Claim1Report { semantic_increment, predicted, discrepancy })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnrPhaseReport {
    /// First `t` at which `snr(t) ≥ snr(t − 1)`, if any.
    pub first_violation: Option<usize>,
    /// Largest `t` classified Late, if any.
    pub late_until: Option<usize>,
    /// Smallest `t` classified Early, if any.
    pub early_from: Option<usize>,
    /// Count of steps per phase in `[Early, Middle, Late]` order.
    pub phase_counts: [usize; 3],
    /// Phase of each `t`, same order, as an ordering check: Late ≤ Middle ≤ Early in `t`.
    pub phases_ordered: bool,
    /// Largest relative gap between `ᾱd / ((1−ᾱ)d)` and `snr(t)`.
    pub power_identity_error: f64,
}

impl SnrPhaseReport {
    pub fn passed(&self) -> bool {
        self.first_violation.is_none() && self.phases_ordered && self.power_identity_error <= 1e-12
    }
}

/// Checks that SNR strictly falls with `t`, that phases appear in the order
/// Late → Middle → Early as `t` grows, and that signal and residual power
/// `ᾱd`, `(1−ᾱ)d` reproduce `snr` for a `dim`-dimensional signal.
pub fn verify_snr_phases(sched: &DiffusionSchedule, thr: &PhaseThresholds, dim: usize) -> Result<SnrPhaseReport> {
    if dim == 0 {
        return Err(Error::param("signal dimension must be positive"));
    }
    let d = dim as f64;
    let mut first_violation = None;
    let mut counts = [0usize; 3];
    let mut late_until = None;
    let mut early_from = None;
    let mut phases_ordered = true;
    let mut last_rank = 0u8;
    let mut worst = 0.0f64;
    let mut prev = f64::INFINITY;
    for t in 1..=sched.steps() {
        let snr = sched.snr(t)?;
        if !(snr < prev) && first_violation.is_none() {
            first_violation = Some(t);
        }
        prev = snr;
        let ab = sched.alpha_bar(t)?;
        let ratio = (ab * d) / ((1.0 - ab) * d);
        worst = worst.max(libm::fabs(ratio - snr) / snr.abs().max(f64::MIN_POSITIVE));
        let phase = classify_phase(snr, thr)?;
        let rank = match phase {
            Phase::Late => 0,
            Phase::Middle => 1,
            Phase::Early => 2,
        };
        if rank < last_rank {
            phases_ordered = false;
        }
        last_rank = rank;
        counts[2 - rank as usize] += 1;
        if phase == Phase::Late {
            late_until = Some(t);
        }
        if phase == Phase::Early && early_from.is_none() {
            early_from = Some(t);
        }
    }
    Ok(SnrPhaseReport {
        first_violation,
        late_until,
        early_from,
        phase_counts: counts,
        phases_ordered,
        power_identity_error: worst,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeShiftReport {
    /// `(β, e(β))` in the given order.
    pub errors: Vec<(f64, f64)>,
    /// `e(βᵢ) / e(βᵢ₊₁)` for consecutive entries.
    pub ratios: Vec<f64>,
}

impl TimeShiftReport {
    /// Ratios within `[3.5, 4.5]`, i.e. a second-order residual under halving.
    pub fn second_order(&self) -> bool {
        !self.ratios.is_empty() && self.ratios.iter().all(|r| (3.5..=4.5).contains(r))
    }
}

/// Integration step used for the reference flows; far below the β² signal.
const SHIFT_STEP: f64 = 5e-4;

/// For each β compares sampling from the injected latent with starting the
/// same flow β earlier: `e(β) = ‖Φ_{0→1}(z + β·f̂₀) − Φ_{−β→1}(z)‖`, where
/// `f = sign · v` per `convention` and `f̂₀ = sign · (v(z, 0) + ε₀)`.
/// `velocity(z, t, out)` writes the model velocity `v`.
pub fn verify_time_shift<F>(
    mut velocity: F,
    convention: VelocityConvention,
    z: &[f64],
    betas: &[f64],
    eps0: Option<&[f64]>,
) -> Result<TimeShiftReport>
where
    F: FnMut(&[f64], f64, &mut [f64]) -> Result<()>,
{
    if betas.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
        return Err(Error::param("time shifts must be finite and non-negative"));
    }
    if let Some(e) = eps0 {
        if e.len() != z.len() {
            return Err(Error::ShapeMismatch { expected: vec![z.len()], got: vec![e.len()] });
        }
    }
    let sign = convention.sign();
    let mut v0 = vec![0.0; z.len()];
    velocity(z, 0.0, &mut v0)?;
    if let Some(e) = eps0 {
        for (v, ei) in v0.iter_mut().zip(e) {
            *v += ei;
        }
    }
    let mut field = |x: &[f64], t: f64, out: &mut [f64]| -> Result<()> {
        velocity(x, t, out)?;
        for o in out.iter_mut() {
            *o *= sign;
        }
        Ok(())
    };
    let steps = |len: f64| libm::ceil(len / SHIFT_STEP) as usize;
    let mut errors = Vec::with_capacity(betas.len());
    for &beta in betas {
        let injected: Vec<f64> = z.iter().zip(&v0).map(|(zi, vi)| zi + beta * sign * vi).collect();
        let a = flow_map(&mut field, &injected, 0.0, 1.0, steps(1.0))?;
        let b = flow_map(&mut field, z, -beta, 1.0, steps(1.0 + beta))?;
        let e = libm::sqrt(a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>());
        errors.push((beta, e));
    }
    let ratios = errors.windows(2).map(|w| w[0].1 / w[1].1).collect();
    Ok(TimeShiftReport { errors, ratios })
}

/// Relative cost `1 + N/S₀ + (k/c)·n/S₀` of `n` erasure draws and `N`
/// extra model calls on top of an `S₀`-step sampler.
pub fn cost_ratio(s0: usize, extra_calls: usize, k_over_c: f64, n: usize) -> Result<f64> {
    if s0 == 0 {
        return Err(Error::param("base step count S0 must be positive"));
    }
    if !(k_over_c >= 0.0 && k_over_c.is_finite()) {
        return Err(Error::param(format!("k/c must be non-negative, got {k_over_c}")));
    }
    let s0 = s0 as f64;
    Ok((s0 + extra_calls as f64 + k_over_c * n as f64) / s0)
}

/// Random configuration helper for the oracle checks: a world with the given
/// dimension and an observation drawn from the model itself.
pub fn sample_world(seed: u64, dim: usize, a: f64, s: f64, sched: DiffusionSchedule) -> Result<GaussianWorld> {
    let x0 = sample_gaussian(seed, &[dim])?;
    let noise = sample_gaussian(crate::rng::derive_seed(seed, 1), &[dim])?;
    let y = x0.data().iter().zip(noise.data()).map(|(x, n)| a * x + s * n).collect();
    GaussianWorld::new(a, s, y, sched)
}
