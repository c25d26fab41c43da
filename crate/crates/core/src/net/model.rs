use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, GaussianRng};
use crate::toyflow::{Point, ShapeSpec};

/// Width of the padded shape-parameter block in the condition.
pub const SHAPE_PARAM_DIM: usize = 3;
/// One-hot shape, shape parameters and `t` around the seed embedding.
const FIXED_COND: usize = 3 + SHAPE_PARAM_DIM + 1;

const RFF_STREAM: u64 = 0x5246;
const WEIGHT_STREAM: u64 = 0x5747;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetConfig {
    /// Total Fourier features (cos and sin halves); even.
    pub rff_features: usize,
    pub rff_scale: f64,
    pub width: usize,
    pub blocks: usize,
    pub embed_dim: usize,
    /// Rows of the seed-embedding table (seed positions within a bank).
    pub embed_slots: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { rff_features: 64, rff_scale: 4.0, width: 64, blocks: 3, embed_dim: 16, embed_slots: 6 }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rff_features == 0 || self.rff_features % 2 != 0 {
            return Err(Error::param(format!("rff_features must be even and positive, got {}", self.rff_features)));
        }
        if !(self.rff_scale.is_finite() && self.rff_scale > 0.0) {
            return Err(Error::param(format!("rff_scale must be positive, got {}", self.rff_scale)));
        }
        if self.width == 0 || self.blocks == 0 || self.embed_dim == 0 || self.embed_slots == 0 {
            return Err(Error::param("width, blocks, embed_dim and embed_slots must be positive"));
        }
        Ok(())
    }

    pub fn cond_dim(&self) -> usize {
        FIXED_COND + self.embed_dim
    }

    fn block_in(&self, l: usize) -> usize {
        if l == 0 {
            self.rff_features
        } else {
            self.width
        }
    }

    fn layout(&self) -> Layout {
        let mut off = 0;
        let mut take = |n: usize| {
            let r = off..off + n;
            off += n;
            r
        };
        let (w, cd) = (self.width, self.cond_dim());
        let blocks = (0..self.blocks)
            .map(|l| BlockLayout {
                lin_w: take(self.block_in(l) * w),
                lin_b: take(w),
                film_w: take(cd * 2 * w),
                film_b: take(2 * w),
            })
            .collect();
        let head_w = take(w * 2);
        let head_b = take(2);
        let embed = take(self.embed_slots * self.embed_dim);
        Layout { blocks, head_w, head_b, embed, total: off }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct BlockLayout {
    lin_w: Range<usize>,
    lin_b: Range<usize>,
    film_w: Range<usize>,
    film_b: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    blocks: Vec<BlockLayout>,
    head_w: Range<usize>,
    head_b: Range<usize>,
    embed: Range<usize>,
    total: usize,
}

/// A named slice of the learnable vector. Matrices are row-major `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroup {
    pub name: String,
    pub range: Range<usize>,
    pub shape: Vec<usize>,
}

/// Condition fed to FiLM: shape identity and parameters plus the position of
/// the seed inside its bank, which selects a learned embedding row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionVector {
    pub shape_onehot: [f64; 3],
    pub shape_params: [f64; SHAPE_PARAM_DIM],
    pub seed_slot: usize,
}

impl ConditionVector {
    pub fn new(shape: &ShapeSpec, seed_slot: usize) -> Self {
        let mut shape_onehot = [0.0; 3];
        shape_onehot[shape.kind().index()] = 1.0;
        ConditionVector { shape_onehot, shape_params: shape.params(), seed_slot }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: NetConfig,
    layout: Layout,
    /// Frozen `[rff_features / 2, 2]` projection.
    rff: Vec<f64>,
    theta: Vec<f64>,
}

impl ModelParams {
    /// Fresh parameters: `B ~ N(0, 1)`, linear maps uniform in `±1/√fan_in`,
    /// embeddings `N(0, 0.1²)`.
    pub fn init(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        let mut rng = GaussianRng::new(derive_seed(seed, RFF_STREAM));
        let mut rff = vec![0.0; config.rff_features];
        rng.fill_normal(&mut rff);
        let mut rng = GaussianRng::new(derive_seed(seed, WEIGHT_STREAM));
        let mut theta = vec![0.0; layout.total];
        let mut uniform = |r: Range<usize>, fan_in: usize, theta: &mut [f64]| {
            let bound = 1.0 / libm::sqrt(fan_in as f64);
            for v in &mut theta[r] {
                *v = bound * (2.0 * rng.uniform() - 1.0);
            }
        };
        for (l, b) in layout.blocks.iter().enumerate() {
            let fan = config.block_in(l);
            uniform(b.lin_w.clone(), fan, &mut theta);
            uniform(b.lin_b.clone(), fan, &mut theta);
            uniform(b.film_w.clone(), config.cond_dim(), &mut theta);
            uniform(b.film_b.clone(), config.cond_dim(), &mut theta);
        }
        uniform(layout.head_w.clone(), config.width, &mut theta);
        uniform(layout.head_b.clone(), config.width, &mut theta);
        for v in &mut theta[layout.embed.clone()] {
            *v = 0.1 * rng.normal();
        }
        Ok(ModelParams { config, layout, rff, theta })
    }

    /// Reassembles parameters from stored arrays.
    pub fn from_parts(config: NetConfig, rff: Vec<f64>, learnable: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if rff.len() != config.rff_features {
            return Err(Error::LengthMismatch { len: rff.len(), shape: vec![config.rff_features / 2, 2] });
        }
        if learnable.len() != layout.total {
            return Err(Error::LengthMismatch { len: learnable.len(), shape: vec![layout.total] });
        }
        let p = ModelParams { config, layout, rff, theta: learnable };
        p.check_finite()?;
        Ok(p)
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn rff_matrix(&self) -> &[f64] {
        &self.rff
    }

    pub fn learnable(&self) -> &[f64] {
        &self.theta
    }

    pub fn learnable_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.rff.iter().chain(&self.theta).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { step: 0 })
        }
    }

    /// Every learnable tensor in layout order.
    pub fn groups(&self) -> Vec<ParamGroup> {
        let c = &self.config;
        let (w, cd) = (c.width, c.cond_dim());
        let mut out = Vec::new();
        for (l, b) in self.layout.blocks.iter().enumerate() {
            let g = |suffix: &str, range: &Range<usize>, shape: Vec<usize>| ParamGroup {
                name: format!("block{l}.{suffix}"),
                range: range.clone(),
                shape,
            };
            out.push(g("weight", &b.lin_w, vec![c.block_in(l), w]));
            out.push(g("bias", &b.lin_b, vec![w]));
            out.push(g("film_weight", &b.film_w, vec![cd, 2 * w]));
            out.push(g("film_bias", &b.film_b, vec![2 * w]));
        }
        out.push(ParamGroup { name: "head.weight".into(), range: self.layout.head_w.clone(), shape: vec![w, 2] });
        out.push(ParamGroup { name: "head.bias".into(), range: self.layout.head_b.clone(), shape: vec![2] });
        out.push(ParamGroup {
            name: "seed_embedding".into(),
            range: self.layout.embed.clone(),
            shape: vec![c.embed_slots, c.embed_dim],
        });
        out
    }

    fn check_cond(&self, cond: &ConditionVector) -> Result<()> {
        if cond.seed_slot >= self.config.embed_slots {
            return Err(Error::IndexOutOfRange { index: cond.seed_slot, max: self.config.embed_slots - 1 });
        }
        Ok(())
    }

    fn cond_into(&self, cond: &ConditionVector, t: f64, out: &mut [f64]) {
        let e = self.config.embed_dim;
        let row = &self.theta[self.layout.embed.start + cond.seed_slot * e..][..e];
        out[..3].copy_from_slice(&cond.shape_onehot);
        out[3..3 + SHAPE_PARAM_DIM].copy_from_slice(&cond.shape_params);
        out[3 + SHAPE_PARAM_DIM..3 + SHAPE_PARAM_DIM + e].copy_from_slice(row);
        out[3 + SHAPE_PARAM_DIM + e] = t;
    }
}

/// `[cos(s·Bx); sin(s·Bx)]` for the frozen projection `B`.
pub fn rff_embed(x: Point, params: &ModelParams) -> Vec<f64> {
    let mut out = vec![0.0; params.config.rff_features];
    rff_into(params, x, &mut out);
    out
}

fn rff_into(params: &ModelParams, x: Point, out: &mut [f64]) {
    let half = params.config.rff_features / 2;
    let s = params.config.rff_scale;
    for (j, row) in params.rff.chunks_exact(2).enumerate() {
        let p = s * (row[0] * x[0] + row[1] * x[1]);
        let (sin, cos) = libm::sincos(p);
        out[j] = cos;
        out[half + j] = sin;
    }
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-u))
}

/// Activations of one evaluation, kept for the backward pass.
struct Cache {
    cond: Vec<f64>,
    /// `inputs[l]` feeds block `l`; `inputs[blocks]` feeds the head.
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    film: Vec<Vec<f64>>,
    act: Vec<Vec<f64>>,
    sig: Vec<Vec<f64>>,
    slot: usize,
    v: [f64; 2],
}

impl Cache {
    fn new(c: &NetConfig) -> Self {
        let w = c.width;
        let mut inputs = vec![vec![0.0; c.rff_features]];
        inputs.extend((0..c.blocks).map(|_| vec![0.0; w]));
        Cache {
            cond: vec![0.0; c.cond_dim()],
            inputs,
            pre: vec![vec![0.0; w]; c.blocks],
            film: vec![vec![0.0; 2 * w]; c.blocks],
            act: vec![vec![0.0; w]; c.blocks],
            sig: vec![vec![0.0; w]; c.blocks],
            slot: 0,
            v: [0.0; 2],
        }
    }
}

fn forward_cached(p: &ModelParams, x: Point, t: f64, cond: &ConditionVector, cache: &mut Cache) {
    let w = p.config.width;
    p.cond_into(cond, t, &mut cache.cond);
    cache.slot = cond.seed_slot;
    rff_into(p, x, &mut cache.inputs[0]);
    for (l, b) in p.layout.blocks.iter().enumerate() {
        let (head, tail) = cache.inputs.split_at_mut(l + 1);
        let input = &head[l];
        let pre = &mut cache.pre[l];
        pre.copy_from_slice(&p.theta[b.lin_b.clone()]);
        for (i, row) in p.theta[b.lin_w.clone()].chunks_exact(w).enumerate() {
            axpy(pre, input[i], row);
        }
        let film = &mut cache.film[l];
        film.copy_from_slice(&p.theta[b.film_b.clone()]);
        for (row, &c) in p.theta[b.film_w.clone()].chunks_exact(2 * w).zip(&cache.cond) {
            if c != 0.0 {
                axpy(film, c, row);
            }
        }
        let act = &mut cache.act[l];
        let sig = &mut cache.sig[l];
        let out = &mut tail[0];
        for o in 0..w {
            let u = pre[o] * (1.0 + film[o]) + film[w + o];
            act[o] = u;
            sig[o] = sigmoid(u);
            out[o] = u * sig[o];
        }
    }
    let h = &cache.inputs[p.config.blocks];
    let hw = &p.theta[p.layout.head_w.clone()];
    let mut v = [p.theta[p.layout.head_b.start], p.theta[p.layout.head_b.start + 1]];
    for (i, row) in hw.chunks_exact(2).enumerate() {
        v[0] += h[i] * row[0];
        v[1] += h[i] * row[1];
    }
    cache.v = v;
}

/// Accumulates `∂L/∂θ` into `grad` for upstream `dv = ∂L/∂v`.
fn backward(p: &ModelParams, cache: &Cache, dv: [f64; 2], grad: &mut [f64], scratch: &mut Backward) {
    let w = p.config.width;
    let e = p.config.embed_dim;
    let hidx = p.config.blocks;
    let h = &cache.inputs[hidx];
    let hw = &p.theta[p.layout.head_w.clone()];
    {
        let g = &mut grad[p.layout.head_w.clone()];
        for (i, row) in g.chunks_exact_mut(2).enumerate() {
            row[0] += h[i] * dv[0];
            row[1] += h[i] * dv[1];
        }
    }
    grad[p.layout.head_b.start] += dv[0];
    grad[p.layout.head_b.start + 1] += dv[1];
    let dh = &mut scratch.dh;
    for (i, row) in hw.chunks_exact(2).enumerate() {
        dh[i] = row[0] * dv[0] + row[1] * dv[1];
    }
    let demb = &mut scratch.demb;
    demb.fill(0.0);
    for (l, b) in p.layout.blocks.iter().enumerate().rev() {
        let pre = &cache.pre[l];
        let film = &cache.film[l];
        let act = &cache.act[l];
        let sig = &cache.sig[l];
        let dpre = &mut scratch.dpre;
        let dfilm = &mut scratch.dfilm;
        for o in 0..w {
            let u = act[o];
            let s = sig[o];
            let du = dh[o] * s * (1.0 + u * (1.0 - s));
            dpre[o] = du * (1.0 + film[o]);
            dfilm[o] = du * pre[o];
            dfilm[w + o] = du;
        }
        let emb_rows = FIXED_COND - 1..FIXED_COND - 1 + e;
        {
            let fw = &p.theta[b.film_w.clone()];
            for (k, j) in emb_rows.clone().enumerate() {
                demb[k] += dot(&fw[j * 2 * w..(j + 1) * 2 * w], dfilm);
            }
        }
        for (row, &c) in grad[b.film_w.clone()].chunks_exact_mut(2 * w).zip(&cache.cond) {
            if c != 0.0 {
                axpy(row, c, dfilm);
            }
        }
        axpy(&mut grad[b.film_b.clone()], 1.0, dfilm);
        let input = &cache.inputs[l];
        for (row, &hi) in grad[b.lin_w.clone()].chunks_exact_mut(w).zip(input) {
            axpy(row, hi, dpre);
        }
        axpy(&mut grad[b.lin_b.clone()], 1.0, dpre);
        if l > 0 {
            let lw = &p.theta[b.lin_w.clone()];
            for (i, row) in lw.chunks_exact(w).enumerate() {
                dh[i] = dot(row, dpre);
            }
        }
    }
    let slot = p.layout.embed.start + cache.slot * e;
    axpy(&mut grad[slot..slot + e], 1.0, demb);
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

struct Backward {
    dh: Vec<f64>,
    dpre: Vec<f64>,
    dfilm: Vec<f64>,
    demb: Vec<f64>,
}

impl Backward {
    fn new(c: &NetConfig) -> Self {
        Backward {
            dh: vec![0.0; c.width],
            dpre: vec![0.0; c.width],
            dfilm: vec![0.0; 2 * c.width],
            demb: vec![0.0; c.embed_dim],
        }
    }
}

/// One supervised point: position on a memorized path, its time and target velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub x: Point,
    pub t: f64,
    pub cond: ConditionVector,
    pub target: Point,
}

/// Single evaluation `v_θ(x, t | cond)`.
pub fn forward(params: &ModelParams, x: Point, t: f64, cond: &ConditionVector) -> Result<Point> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::param(format!("model time {t} outside [0, 1]")));
    }
    params.check_cond(cond)?;
    let mut cache = Cache::new(&params.config);
    forward_cached(params, x, t, cond, &mut cache);
    finite_point(cache.v)
}

fn finite_point(v: Point) -> Result<Point> {
    if v[0].is_finite() && v[1].is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { step: 0 })
    }
}

/// Evaluates the model on a flat `[x₀, y₀, x₁, y₁, …]` point set at a shared
/// `(t, cond)`, writing velocities into `out`. Times are clamped to `[0, 1]`
/// so an integrator's last stage cannot step outside by rounding.
pub fn velocity_field(params: &ModelParams, points: &[f64], t: f64, cond: &ConditionVector, out: &mut [f64]) -> Result<()> {
    if points.len() % 2 != 0 || out.len() != points.len() {
        return Err(Error::Contract(format!(
            "velocity field expects matching even-length buffers, got {} and {}",
            points.len(),
            out.len()
        )));
    }
    params.check_cond(cond)?;
    let t = t.clamp(0.0, 1.0);
    let mut cache = Cache::new(&params.config);
    for (x, o) in points.chunks_exact(2).zip(out.chunks_exact_mut(2)) {
        forward_cached(params, [x[0], x[1]], t, cond, &mut cache);
        let v = finite_point(cache.v)?;
        o.copy_from_slice(&v);
    }
    Ok(())
}

/// `L = (1/N) Σ ‖v_θ(xᵢ, tᵢ) − v*ᵢ‖²` and its exact gradient with respect to
/// the learnable vector. The Fourier projection has no gradient.
pub fn loss_and_grad(params: &ModelParams, batch: &[Sample]) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; params.theta.len()];
    let loss = loss_and_grad_into(params, batch.iter(), batch.len(), &mut grad)?;
    Ok((loss, grad))
}

pub(super) fn loss_and_grad_into<'a>(
    params: &ModelParams,
    batch: impl Iterator<Item = &'a Sample>,
    n: usize,
    grad: &mut [f64],
) -> Result<f64> {
    if n == 0 {
        return Err(Error::EmptyInput("training batch"));
    }
    grad.fill(0.0);
    let mut cache = Cache::new(&params.config);
    let mut scratch = Backward::new(&params.config);
    let scale = 1.0 / n as f64;
    let mut loss = 0.0;
    for s in batch {
        params.check_cond(&s.cond)?;
        forward_cached(params, s.x, s.t, &s.cond, &mut cache);
        let r = [cache.v[0] - s.target[0], cache.v[1] - s.target[1]];
        loss += r[0] * r[0] + r[1] * r[1];
        backward(params, &cache, [2.0 * scale * r[0], 2.0 * scale * r[1]], grad, &mut scratch);
    }
    Ok(loss * scale)
}
