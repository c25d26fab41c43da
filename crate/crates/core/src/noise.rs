//! Seeded Gaussian sampling, the aggregate-and-restandardize erasure operator
//! and the statistics used to validate it.
//!
//! The statistical guarantees of [`erase`] (standard-normal output, per-source
//! information shrinking with `n`) hold only when the inputs are i.i.d.
//! standard normal. `erase` itself does not check this.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::GaussianRng;
use crate::tensor::{check_shape, NoiseTensor};

/// Standard-normal tensor, filled row-major from a [`GaussianRng`] seeded with `seed`.
///
/// A longer tensor from the same seed extends a shorter one: the first `k`
/// entries only depend on `seed`.
pub fn sample_gaussian(seed: u64, shape: &[usize]) -> Result<NoiseTensor> {
    let len = check_shape(shape)?;
    let mut data = vec![0.0; len];
    GaussianRng::new(seed).fill_normal(&mut data);
    Ok(NoiseTensor::from_parts_unchecked(data, shape.to_vec()))
}

/// `(1/√n) Σ zᵢ`: sums the inputs in order, then rescales.
pub fn erase(noises: &[NoiseTensor]) -> Result<NoiseTensor> {
    let first = noises.first().ok_or(Error::EmptyInput("erase needs at least one tensor"))?;
    let mut acc = first.data().to_vec();
    for z in &noises[1..] {
        first.ensure_same_shape(z)?;
        for (a, v) in acc.iter_mut().zip(z.data()) {
            *a += v;
        }
    }
    let scale = 1.0 / libm::sqrt(noises.len() as f64);
    for a in &mut acc {
        *a *= scale;
    }
    Ok(NoiseTensor::from_parts_unchecked(acc, first.shape().to_vec()))
}

/// Erases one fresh draw of `shape` per seed.
pub fn erase_seeds(seeds: &[u64], shape: &[usize]) -> Result<NoiseTensor> {
    let draws = seeds.iter().map(|&s| sample_gaussian(s, shape)).collect::<Result<Vec<_>>>()?;
    erase(&draws)
}

/// Sample moments of a batch of vectors compared against N(0, I).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentReport {
    pub mean_max_abs: f64,
    /// max |Cᵢᵢ − 1|
    pub cov_diag_max_dev: f64,
    pub cov_offdiag_max_abs: f64,
    pub n_draws: usize,
}

impl MomentReport {
    /// Moments of `samples`, laid out as `n_draws` consecutive rows of length `dim`.
    pub fn from_rows(samples: &[f64], dim: usize) -> Result<Self> {
        if dim == 0 || samples.len() % dim != 0 {
            return Err(Error::param(format!("{} values do not form rows of width {dim}", samples.len())));
        }
        let n = samples.len() / dim;
        if n < 2 {
            return Err(Error::param("need at least two draws for a covariance"));
        }
        let mut mean = vec![0.0; dim];
        for row in samples.chunks_exact(dim) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut cov = vec![0.0; dim * dim];
        for row in samples.chunks_exact(dim) {
            for i in 0..dim {
                let di = row[i] - mean[i];
                for j in i..dim {
                    cov[i * dim + j] += di * (row[j] - mean[j]);
                }
            }
        }
        let denom = (n - 1) as f64;
        let mut diag = 0.0f64;
        let mut off = 0.0f64;
        for i in 0..dim {
            diag = diag.max(libm::fabs(cov[i * dim + i] / denom - 1.0));
            for j in i + 1..dim {
                off = off.max(libm::fabs(cov[i * dim + j] / denom));
            }
        }
        let mean_max_abs = mean.iter().fold(0.0f64, |m, v| m.max(libm::fabs(*v)));
        Ok(Self { mean_max_abs, cov_diag_max_dev: diag, cov_offdiag_max_abs: off, n_draws: n })
    }

    /// True when the mean is within `mean_tol` of zero and every covariance
    /// entry is within `cov_tol` of the identity.
    pub fn within(&self, mean_tol: f64, cov_tol: f64) -> bool {
        self.mean_max_abs < mean_tol && self.cov_diag_max_dev < cov_tol && self.cov_offdiag_max_abs < cov_tol
    }
}

/// Monte Carlo estimate of the per-coordinate covariance between one source
/// `z₁` and the erased aggregate `s̄ = (1/√n) Σ zᵢ`. The exact value is `1/√n`.
pub fn source_correlation(n: usize, dim: usize, n_draws: usize, seed: u64) -> Result<f64> {
    if n < 2 {
        return Err(Error::param(format!("source_correlation needs n >= 2, got {n}")));
    }
    if dim == 0 {
        return Err(Error::param("dim must be positive"));
    }
    if n_draws < 1000 {
        return Err(Error::param(format!("n_draws must be at least 1000, got {n_draws}")));
    }
    let mut rng = GaussianRng::new(seed);
    let scale = 1.0 / libm::sqrt(n as f64);
    let (mut sz, mut ss, mut szs) = (0.0, 0.0, 0.0);
    for _ in 0..n_draws {
        for _ in 0..dim {
            let z1 = rng.normal();
            let mut sum = z1;
            for _ in 1..n {
                sum += rng.normal();
            }
            let agg = sum * scale;
            sz += z1;
            ss += agg;
            szs += z1 * agg;
        }
    }
    let m = (n_draws * dim) as f64;
    Ok((szs - sz * ss / m) / (m - 1.0))
}

/// Mutual information, in nats, between one of `n` sources and their erased
/// aggregate: `(dim/2) ln(n/(n−1))`.
pub fn mi_per_source(n: usize, dim: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::param(format!("mi_per_source diverges for n < 2, got {n}")));
    }
    Ok(0.5 * dim as f64 * libm::log1p(1.0 / (n - 1) as f64))
}

/// Ordered seed lists keyed by a shape-kind identifier.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SeedBank {
    entries: BTreeMap<String, Vec<u64>>,
}

impl SeedBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, kind: impl Into<String>, seeds: Vec<u64>) -> Result<()> {
        let kind = kind.into();
        if seeds.is_empty() {
            return Err(Error::param(format!("seed list for {kind} is empty")));
        }
        for (i, s) in seeds.iter().enumerate() {
            if seeds[..i].contains(s) {
                return Err(Error::param(format!("seed {s} repeated in bank {kind}")));
            }
        }
        self.entries.insert(kind, seeds);
        Ok(())
    }

    pub fn get(&self, kind: &str) -> Option<&[u64]> {
        self.entries.get(kind).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[u64])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}
