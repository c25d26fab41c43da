//! Fixed-step integrators: Heun for probability-flow ODEs and the ancestral
//! DDPM reverse step.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::schedule::DiffusionSchedule;
use crate::tensor::NoiseTensor;

/// How a learned velocity `v` enters the ODE `dz/dt = f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VelocityConvention {
    /// f = v: the sampler adds the prediction.
    #[default]
    Add,
    /// f = −v: the sampler subtracts the prediction.
    Subtract,
}

impl VelocityConvention {
    pub fn sign(self) -> f64 {
        match self {
            VelocityConvention::Add => 1.0,
            VelocityConvention::Subtract => -1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VelocityConvention::Add => "add",
            VelocityConvention::Subtract => "subtract",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "add" => Ok(VelocityConvention::Add),
            "subtract" => Ok(VelocityConvention::Subtract),
            other => Err(Error::param(format!("unknown velocity convention {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Classic Heun (explicit trapezoid) with `steps` uniform steps from
/// `t_start` to `t_end`. `field(z, t, out)` writes `dz/dt` into `out`.
/// The returned trajectory holds `steps + 1` states, both endpoints included.
pub fn heun_integrate<F>(mut field: F, z0: &[f64], t_start: f64, t_end: f64, steps: usize) -> Result<Trajectory>
where
    F: FnMut(&[f64], f64, &mut [f64]) -> Result<()>,
{
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(t_start);
    states.push(z0.to_vec());
    heun_drive(&mut field, z0, t_start, t_end, steps, |t, z| {
        times.push(t);
        states.push(z.to_vec());
    })?;
    Ok(Trajectory { times, states })
}

/// Final state of [`heun_integrate`] from `s` to `t`; `s == t` is the identity.
/// `s` may be negative, extending the flow backward past zero.
pub fn flow_map<F>(mut field: F, z: &[f64], s: f64, t: f64, steps: usize) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], f64, &mut [f64]) -> Result<()>,
{
    if s == t {
        return Ok(z.to_vec());
    }
    let mut out = z.to_vec();
    heun_drive(&mut field, z, s, t, steps, |_, zz| out.copy_from_slice(zz))?;
    Ok(out)
}

fn heun_drive<F, O>(field: &mut F, z0: &[f64], t_start: f64, t_end: f64, steps: usize, mut observe: O) -> Result<()>
where
    F: FnMut(&[f64], f64, &mut [f64]) -> Result<()>,
    O: FnMut(f64, &[f64]),
{
    if steps == 0 {
        return Err(Error::param("heun needs at least one step"));
    }
    if t_start == t_end || !t_start.is_finite() || !t_end.is_finite() {
        return Err(Error::param(format!("degenerate integration interval [{t_start}, {t_end}]")));
    }
    let n = z0.len();
    let h = (t_end - t_start) / steps as f64;
    let mut z = z0.to_vec();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut pred = vec![0.0; n];
    for i in 0..steps {
        let t = t_start + h * i as f64;
        let t_next = if i + 1 == steps { t_end } else { t_start + h * (i + 1) as f64 };
        field(&z, t, &mut k1)?;
        for j in 0..n {
            pred[j] = z[j] + h * k1[j];
        }
        field(&pred, t_next, &mut k2)?;
        for j in 0..n {
            z[j] += 0.5 * h * (k1[j] + k2[j]);
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: i + 1 });
        }
        observe(t_next, &z);
    }
    Ok(())
}

/// One ancestral DDPM step
/// `x_{t−1} = (x_t − β_t/√(1−ᾱ_t) · ε̂) / √α_t + σ_t ζ`, with σ forced to zero at `t = 1`.
pub fn ddpm_reverse_step(
    sched: &DiffusionSchedule,
    x_t: &NoiseTensor,
    t: usize,
    eps_pred: &NoiseTensor,
    zeta: &NoiseTensor,
) -> Result<NoiseTensor> {
    x_t.ensure_same_shape(eps_pred)?;
    x_t.ensure_same_shape(zeta)?;
    let beta = sched.beta(t)?;
    let inv_sqrt_alpha = 1.0 / libm::sqrt(sched.alpha(t)?);
    let eps_coef = beta / libm::sqrt(1.0 - sched.alpha_bar(t)?);
    let sigma = if t == 1 { 0.0 } else { sched.sigma(t)? };
    let data = x_t
        .data()
        .iter()
        .zip(eps_pred.data())
        .zip(zeta.data())
        .map(|((x, e), z)| inv_sqrt_alpha * (x - eps_coef * e) + sigma * z)
        .collect();
    Ok(NoiseTensor::from_parts_unchecked(data, x_t.shape().to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::sample_gaussian;
    use crate::schedule::make_linear_schedule;
    use core::f64::consts::E;

    fn linear_field(rate: f64) -> impl FnMut(&[f64], f64, &mut [f64]) -> Result<()> {
        move |z, _t, out| {
            for (o, v) in out.iter_mut().zip(z) {
                *o = rate * v;
            }
            Ok(())
        }
    }

    #[test]
    fn zero_field_is_constant() {
        let traj = heun_integrate(|_, _, out: &mut [f64]| { out.fill(0.0); Ok(()) }, &[1.0, -2.0], 0.0, 1.0, 7).unwrap();
        assert_eq!(traj.times.len(), 8);
        assert!(traj.states.iter().all(|s| s == &[1.0, -2.0]));
        assert_eq!(*traj.times.last().unwrap(), 1.0);
    }

    #[test]
    fn exponential_growth_second_order() {
        let err = |steps| (heun_integrate(linear_field(1.0), &[1.0], 0.0, 1.0, steps).unwrap().final_state()[0] - E).abs();
        let e100 = err(100);
        assert!(e100 < 1e-3, "{e100}");
        let ratio = e100 / err(200);
        assert!((3.5..=4.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn contraction_decreases_norm() {
        let traj = heun_integrate(linear_field(-1.0), &[3.0, 4.0], 0.0, 2.0, 20).unwrap();
        let norms: Vec<f64> = traj.states.iter().map(|s| libm::hypot(s[0], s[1])).collect();
        assert!(norms.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn non_finite_reports_step() {
        let r = heun_integrate(|_, t, out: &mut [f64]| { out[0] = if t > 0.25 { f64::INFINITY } else { 1.0 }; Ok(()) }, &[0.0], 0.0, 1.0, 4);
        assert!(matches!(r, Err(Error::NonFinite { step: 2 })), "{r:?}");
        assert!(heun_integrate(linear_field(1.0), &[1.0], 0.0, 1.0, 0).is_err());
        assert!(heun_integrate(linear_field(1.0), &[1.0], 0.5, 0.5, 4).is_err());
    }

    #[test]
    fn flow_map_identity_semigroup_and_reversal() {
        let z = [0.7, -1.3];
        assert_eq!(flow_map(linear_field(-0.8), &z, 0.3, 0.3, 10).unwrap(), z.to_vec());
        let direct = flow_map(linear_field(-0.8), &z, 0.0, 1.0, 200).unwrap();
        let mid = flow_map(linear_field(-0.8), &z, 0.0, 0.4, 80).unwrap();
        let composed = flow_map(linear_field(-0.8), &mid, 0.4, 1.0, 120).unwrap();
        // Heun global error here is ~ h^2/6 |z| ~ 1e-5; allow ten times that.
        for (a, b) in direct.iter().zip(&composed) {
            assert!((a - b).abs() < 1e-4);
        }
        let back = flow_map(linear_field(-0.8), &direct, 1.0, 0.0, 200).unwrap();
        for (a, b) in back.iter().zip(&z) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn ddpm_step_reductions() {
        let s = make_linear_schedule(100, 1e-4, 2e-2).unwrap();
        let x = sample_gaussian(1, &[6]).unwrap();
        let zero = NoiseTensor::zeros(alloc::vec![6]).unwrap();
        let out = ddpm_reverse_step(&s, &x, 50, &zero, &zero).unwrap();
        let a = libm::sqrt(s.alpha(50).unwrap());
        for (o, xi) in out.data().iter().zip(x.data()) {
            assert_eq!(*o, (1.0 / a) * xi);
        }
        let bad = NoiseTensor::zeros(alloc::vec![5]).unwrap();
        assert!(matches!(ddpm_reverse_step(&s, &x, 50, &bad, &zero), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn ddpm_step_tiny_beta_is_identity() {
        let s = DiffusionSchedule::from_betas(alloc::vec![1e-14, 1e-14]).unwrap();
        let x = sample_gaussian(2, &[4]).unwrap();
        let e = sample_gaussian(3, &[4]).unwrap();
        let zero = NoiseTensor::zeros(alloc::vec![4]).unwrap();
        let out = ddpm_reverse_step(&s, &x, 2, &e, &zero).unwrap();
        for (o, xi) in out.data().iter().zip(x.data()) {
            assert!((o - xi).abs() < 1e-6);
        }
    }

    #[test]
    fn ddpm_step_matches_scalar_reevaluation() {
        let s = make_linear_schedule(1000, 1e-4, 2e-2).unwrap();
        for (k, t) in [1usize, 2, 250, 999, 1000].into_iter().enumerate() {
            let seed = 10 * k as u64;
            let x = sample_gaussian(seed, &[16]).unwrap();
            let e = sample_gaussian(seed + 1, &[16]).unwrap();
            let z = sample_gaussian(seed + 2, &[16]).unwrap();
            let out = ddpm_reverse_step(&s, &x, t, &e, &z).unwrap();
            // Independent scalar evaluation straight from the betas.
            let betas = s.betas();
            let beta = betas[t - 1];
            let alpha = 1.0 - beta;
            let mut ab = 1.0;
            for b in &betas[..t] {
                ab *= 1.0 - b;
            }
            let sigma = if t == 1 { 0.0 } else { libm::sqrt(beta) };
            for i in 0..16 {
                let want = (x.data()[i] - beta / libm::sqrt(1.0 - ab) * e.data()[i]) / libm::sqrt(alpha) + sigma * z.data()[i];
                assert!((out.data()[i] - want).abs() < 1e-12, "t={t} i={i}");
            }
        }
    }
}
