//! Discrete VP/DDPM schedules, signal-to-noise phases and the temporal
//! weight schedules used to aggregate predictions across timesteps.
//!
//! Timesteps are 1-based: `t = 1` is the cleanest step and `t = T` the noisiest.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Reverse-step noise scale choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SigmaMode {
    /// σ_t² = β_t
    #[default]
    Beta,
    /// σ_t² = β̃_t = β_t (1 − ᾱ_{t−1}) / (1 − ᾱ_t)
    Posterior,
}

impl SigmaMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SigmaMode::Beta => "beta",
            SigmaMode::Posterior => "posterior",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "beta" => Ok(SigmaMode::Beta),
            "posterior" => Ok(SigmaMode::Posterior),
            other => Err(Error::param(format!("unknown sigma mode {other:?} (expected beta|posterior)"))),
        }
    }
}

/// Which closed form to use for the semantic-gradient coefficient γ_t.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GammaForm {
    /// γ_t = β_t / √α_t, the coefficient that falls out of a single guided reverse step.
    #[default]
    ReverseStep,
    /// γ_t = β_t √(1 − ᾱ_t) / √α_t, the variant quoted for accumulated TPW increments.
    Accumulated,
}

/// Serializable description of a linear schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleSpec {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub sigma_mode: SigmaMode,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self { steps: 1000, beta_min: 1e-4, beta_max: 2e-2, sigma_mode: SigmaMode::Beta }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<DiffusionSchedule> {
        Ok(make_linear_schedule(self.steps, self.beta_min, self.beta_max)?.with_sigma_mode(self.sigma_mode))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sigmas: Vec<f64>,
    sigma_mode: SigmaMode,
}

/// β linearly interpolated from `beta_min` (t = 1) to `beta_max` (t = T).
pub fn make_linear_schedule(steps: usize, beta_min: f64, beta_max: f64) -> Result<DiffusionSchedule> {
    if steps < 2 {
        return Err(Error::param(format!("schedule needs at least 2 steps, got {steps}")));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::param(format!("need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]")));
    }
    let span = (steps - 1) as f64;
    let betas = (0..steps).map(|i| beta_min + (beta_max - beta_min) * (i as f64 / span)).collect();
    DiffusionSchedule::from_betas(betas)
}

impl DiffusionSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::EmptyInput("schedule needs at least one beta"));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::param(format!("beta {b} outside (0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        let mut s = Self { sigmas: Vec::new(), betas, alphas, alpha_bars, sigma_mode: SigmaMode::Beta };
        s.sigmas = s.compute_sigmas(SigmaMode::Beta);
        Ok(s)
    }

    pub fn with_sigma_mode(mut self, mode: SigmaMode) -> Self {
        self.sigmas = self.compute_sigmas(mode);
        self.sigma_mode = mode;
        self
    }

    fn compute_sigmas(&self, mode: SigmaMode) -> Vec<f64> {
        match mode {
            SigmaMode::Beta => self.betas.iter().map(|b| libm::sqrt(*b)).collect(),
            SigmaMode::Posterior => (0..self.betas.len())
                .map(|i| {
                    let prev = if i == 0 { 1.0 } else { self.alpha_bars[i - 1] };
                    libm::sqrt(self.betas[i] * (1.0 - prev) / (1.0 - self.alpha_bars[i]))
                })
                .collect(),
        }
    }

    /// Number of steps T.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn sigma_mode(&self) -> SigmaMode {
        self.sigma_mode
    }

    fn idx(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.betas.len() {
            return Err(Error::IndexOutOfRange { index: t, max: self.betas.len() });
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.betas[self.idx(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alphas[self.idx(t)?])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bars[self.idx(t)?])
    }

    pub fn sigma(&self, t: usize) -> Result<f64> {
        Ok(self.sigmas[self.idx(t)?])
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// SNR(t) = ᾱ_t / (1 − ᾱ_t).
    pub fn snr(&self, t: usize) -> Result<f64> {
        let ab = self.alpha_bar(t)?;
        Ok(ab / (1.0 - ab))
    }

    /// γ_t = β_t / √α_t.
    pub fn gamma(&self, t: usize) -> Result<f64> {
        self.gamma_with(t, GammaForm::ReverseStep)
    }

    pub fn gamma_with(&self, t: usize, form: GammaForm) -> Result<f64> {
        let i = self.idx(t)?;
        let base = self.betas[i] / libm::sqrt(self.alphas[i]);
        Ok(match form {
            GammaForm::ReverseStep => base,
            GammaForm::Accumulated => base * libm::sqrt(1.0 - self.alpha_bars[i]),
        })
    }

    pub fn spec(&self) -> Option<ScheduleSpec> {
        let n = self.betas.len();
        let (lo, hi) = (self.betas[0], self.betas[n - 1]);
        let rebuilt = make_linear_schedule(n, lo, hi).ok()?;
        (rebuilt.betas == self.betas).then_some(ScheduleSpec {
            steps: n,
            beta_min: lo,
            beta_max: hi,
            sigma_mode: self.sigma_mode,
        })
    }
}

/// SNR(ᾱ) = ᾱ / (1 − ᾱ) for a bare cumulative alpha.
pub fn snr_from_alpha_bar(alpha_bar: f64) -> f64 {
    alpha_bar / (1.0 - alpha_bar)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Low SNR: global layout / background.
    Early,
    /// SNR near one: mid-frequency structure.
    Middle,
    /// High SNR: fine detail.
    Late,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseThresholds {
    low: f64,
    high: f64,
}

impl Default for PhaseThresholds {
    fn default() -> Self {
        Self { low: 1e-2, high: 1e2 }
    }
}

impl PhaseThresholds {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if !(low > 0.0 && low < high) {
            return Err(Error::param(format!("need 0 < low < high, got ({low}, {high})")));
        }
        Ok(Self { low, high })
    }

    pub fn low(&self) -> f64 {
        self.low
    }

    pub fn high(&self) -> f64 {
        self.high
    }
}

/// Early below `low`, Late above `high`, Middle on the closed interval between.
pub fn classify_phase(snr: f64, thr: &PhaseThresholds) -> Result<Phase> {
    if !(snr >= 0.0) {
        return Err(Error::param(format!("snr must be non-negative, got {snr}")));
    }
    Ok(if snr < thr.low {
        Phase::Early
    } else if snr > thr.high {
        Phase::Late
    } else {
        Phase::Middle
    })
}

/// Selected timesteps `t_k` with non-negative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSchedule {
    timesteps: Vec<f64>,
    weights: Vec<f64>,
}

pub const WEIGHT_SUM_TOL: f64 = 1e-12;

impl WeightSchedule {
    pub fn new(timesteps: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if timesteps.is_empty() {
            return Err(Error::EmptyInput("weight schedule needs at least one timestep"));
        }
        if timesteps.len() != weights.len() {
            return Err(Error::param(format!("{} timesteps but {} weights", timesteps.len(), weights.len())));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::param(format!("weight {w} is negative or non-finite")));
        }
        let sum: f64 = weights.iter().sum();
        if libm::fabs(sum - 1.0) > WEIGHT_SUM_TOL {
            return Err(Error::param(format!("weights sum to {sum}, expected 1")));
        }
        Ok(Self { timesteps, weights })
    }

    /// Normalizes arbitrary non-negative scores; falls back to uniform when they are all zero.
    pub fn from_scores(timesteps: Vec<f64>, scores: Vec<f64>) -> Result<Self> {
        if timesteps.is_empty() {
            return Err(Error::EmptyInput("weight schedule needs at least one timestep"));
        }
        let total: f64 = scores.iter().sum();
        let weights = if total > 0.0 {
            scores.iter().map(|s| s / total).collect()
        } else {
            alloc::vec![1.0 / timesteps.len() as f64; timesteps.len()]
        };
        Self::new(timesteps, weights)
    }

    pub fn uniform(timesteps: Vec<f64>) -> Result<Self> {
        let n = timesteps.len();
        Self::from_scores(timesteps, alloc::vec![1.0; n])
    }

    pub fn timesteps(&self) -> &[f64] {
        &self.timesteps
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Σ w_k²
    pub fn sum_sq(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.timesteps.iter().copied().zip(self.weights.iter().copied())
    }
}

/// Quadratic bump `max(0, 1000 − ((t − center)/5)²)`; zero once |t − center| exceeds 5√1000 ≈ 158.1.
pub fn power_score(t: f64, center: f64) -> f64 {
    let u = (t - center) / 5.0;
    (1000.0 - u * u).max(0.0)
}

/// Weights proportional to [`power_score`]; uniform if every score clamps to zero.
pub fn power_weights(timesteps: &[f64], center: f64) -> Result<WeightSchedule> {
    let scores = timesteps.iter().map(|&t| power_score(t, center)).collect();
    WeightSchedule::from_scores(timesteps.to_vec(), scores)
}

/// Weights proportional to SNR(t_k)^exponent.
pub fn snr_weights(sched: &DiffusionSchedule, timesteps: &[usize], exponent: f64) -> Result<WeightSchedule> {
    let scores = timesteps
        .iter()
        .map(|&t| Ok(libm::pow(sched.snr(t)?, exponent)))
        .collect::<Result<Vec<f64>>>()?;
    WeightSchedule::from_scores(timesteps.iter().map(|&t| t as f64).collect(), scores)
}

/// `k` timesteps evenly spaced over `[1, steps]`, rounded to integers, descending
/// from the noisiest. `k = 1` picks `steps`.
pub fn evenly_spaced_timesteps(steps: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 || steps == 0 || k > steps {
        return Err(Error::param(format!("cannot pick {k} timesteps out of {steps}")));
    }
    if k == 1 {
        return Ok(alloc::vec![steps]);
    }
    let span = (steps - 1) as f64;
    Ok((0..k)
        .map(|i| {
            let t = steps as f64 - span * i as f64 / (k - 1) as f64;
            libm::round(t) as usize
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear() -> DiffusionSchedule {
        make_linear_schedule(1000, 1e-4, 2e-2).unwrap()
    }

    #[test]
    fn linear_schedule_endpoints() {
        let s = linear();
        assert!(s.alpha_bar(1000).unwrap() < 0.01);
        assert!(s.alpha_bar(1).unwrap() > 0.99);
    }

    #[test]
    fn two_step_schedule() {
        let s = make_linear_schedule(2, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bars(), &[0.5, 0.25]);
    }

    #[test]
    fn schedule_rejects_bad_betas() {
        assert!(make_linear_schedule(10, 1e-4, 1.0).is_err());
        assert!(make_linear_schedule(10, 0.0, 0.1).is_err());
        assert!(make_linear_schedule(10, 0.2, 0.1).is_err());
        assert!(make_linear_schedule(1, 0.1, 0.1).is_err());
    }

    #[test]
    fn snr_values() {
        let s = DiffusionSchedule::from_betas(alloc::vec![0.5, 0.01]).unwrap();
        assert_eq!(s.snr(1).unwrap(), 1.0);
        assert_eq!(snr_from_alpha_bar(0.5), 1.0);
        assert!((snr_from_alpha_bar(0.99) - 99.0).abs() < 1e-9);
        assert!(matches!(s.snr(0), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(s.snr(3), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn snr_increases_toward_clean_end() {
        let s = linear();
        for t in 1..1000 {
            assert!(s.snr(t).unwrap() > s.snr(t + 1).unwrap());
        }
    }

    #[test]
    fn phases() {
        let thr = PhaseThresholds::default();
        assert_eq!(classify_phase(1e-3, &thr).unwrap(), Phase::Early);
        assert_eq!(classify_phase(1.0, &thr).unwrap(), Phase::Middle);
        assert_eq!(classify_phase(1e3, &thr).unwrap(), Phase::Late);
        assert_eq!(classify_phase(1e-2, &thr).unwrap(), Phase::Middle);
        assert_eq!(classify_phase(1e2, &thr).unwrap(), Phase::Middle);
        assert!(classify_phase(-1.0, &thr).is_err());
        assert!(PhaseThresholds::new(1.0, 0.5).is_err());
    }

    #[test]
    fn gamma_values() {
        let s = DiffusionSchedule::from_betas(alloc::vec![0.02, 1e-12]).unwrap();
        let g = s.gamma(1).unwrap();
        // 0.02 / sqrt(0.98)
        assert!((g - 0.020_203_050_891_044_214).abs() < 1e-15, "{g}");
        assert!(s.gamma(2).unwrap() < 1e-11);
        let l = linear();
        for t in 1..=1000 {
            assert!(l.gamma(t).unwrap() > 0.0);
            let alt = l.gamma_with(t, GammaForm::Accumulated).unwrap();
            assert!(alt > 0.0 && alt < l.gamma(t).unwrap());
        }
    }

    #[test]
    fn power_weight_shape() {
        assert_eq!(power_score(300.0, 300.0), 1000.0);
        let u: f64 = 160.0 / 5.0;
        assert_eq!(1000.0 - u * u, -24.0);
        assert_eq!(power_score(460.0, 300.0), 0.0);
        let w = power_weights(&[290.0, 310.0], 300.0).unwrap();
        assert_eq!(w.weights(), &[0.5, 0.5]);
        let fallback = power_weights(&[0.0, 900.0], 450.0).unwrap();
        assert_eq!(fallback.weights(), &[0.5, 0.5]);
        assert!(power_weights(&[], 0.0).is_err());
    }

    #[test]
    fn snr_weight_shape() {
        let s = linear();
        let ts = [100, 400, 800];
        let flat = snr_weights(&s, &ts, 0.0).unwrap();
        for w in flat.weights() {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
        let peaked = snr_weights(&s, &ts, 1.0).unwrap();
        let argmax = peaked.weights().iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(argmax, 0);

        // alpha_bar 0.5 -> SNR 1, alpha_bar 0.75 -> SNR 3
        let two = DiffusionSchedule::from_betas(alloc::vec![0.25, 1.0 / 3.0]).unwrap();
        assert!((two.snr(1).unwrap() - 3.0).abs() < 1e-12);
        assert!((two.snr(2).unwrap() - 1.0).abs() < 1e-12);
        let w = snr_weights(&two, &[2, 1], 1.0).unwrap();
        assert!((w.weights()[0] - 0.25).abs() < 1e-12 && (w.weights()[1] - 0.75).abs() < 1e-12);
        assert!(snr_weights(&two, &[3], 1.0).is_err());
    }

    #[test]
    fn weight_schedule_validation() {
        assert!(WeightSchedule::new(alloc::vec![1.0], alloc::vec![0.9]).is_err());
        assert!(WeightSchedule::new(alloc::vec![1.0, 2.0], alloc::vec![1.5, -0.5]).is_err());
        assert!(WeightSchedule::new(alloc::vec![1.0], alloc::vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn even_timesteps() {
        assert_eq!(evenly_spaced_timesteps(1000, 1).unwrap(), alloc::vec![1000]);
        assert_eq!(evenly_spaced_timesteps(1000, 2).unwrap(), alloc::vec![1000, 1]);
        let ts = evenly_spaced_timesteps(1000, 10).unwrap();
        assert_eq!(ts.len(), 10);
        assert!(ts.windows(2).all(|w| w[0] > w[1]));
        assert!(evenly_spaced_timesteps(5, 6).is_err());
    }

    #[test]
    fn posterior_sigma_vanishes_at_first_step() {
        let s = linear().with_sigma_mode(SigmaMode::Posterior);
        assert_eq!(s.sigma(1).unwrap(), 0.0);
        assert!(s.sigma(500).unwrap() > 0.0 && s.sigma(500).unwrap() < libm::sqrt(s.beta(500).unwrap()));
    }

    #[test]
    fn spec_round_trip() {
        let spec = ScheduleSpec { steps: 50, beta_min: 1e-3, beta_max: 0.05, sigma_mode: SigmaMode::Posterior };
        assert_eq!(spec.build().unwrap().spec(), Some(spec));
    }
}
