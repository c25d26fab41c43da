//! Parametric planar shapes and the seed-coupled straight-path dataset used
//! to overfit the toy velocity model.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};

use crate::error::{Error, Result};
use crate::noise::{sample_gaussian, SeedBank};
use crate::rng::{derive_seed, GaussianRng};

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ShapeKind {
    Circle,
    Ellipse,
    Spiral,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Circle, ShapeKind::Ellipse, ShapeKind::Spiral];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Circle => "circle",
            ShapeKind::Ellipse => "ellipse",
            ShapeKind::Spiral => "spiral",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::param(format!("unknown shape {s:?} (expected circle|ellipse|spiral)")))
    }

    /// Default parameters; every shape fits inside roughly the unit scale of N(0, I).
    pub fn default_spec(self) -> ShapeSpec {
        match self {
            ShapeKind::Circle => ShapeSpec::Circle { radius: 1.0 },
            ShapeKind::Ellipse => ShapeSpec::Ellipse { a: 1.5, b: 0.75 },
            ShapeKind::Spiral => ShapeSpec::Spiral { b: 0.08, theta_min: 0.0, theta_max: 6.0 * PI },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapeSpec {
    Circle { radius: f64 },
    /// Semi-axes `a ≥ b`.
    Ellipse { a: f64, b: f64 },
    /// Archimedean spiral `r = b θ` for θ in `[theta_min, theta_max]`.
    Spiral { b: f64, theta_min: f64, theta_max: f64 },
}

impl ShapeSpec {
    pub fn kind(&self) -> ShapeKind {
        match self {
            ShapeSpec::Circle { .. } => ShapeKind::Circle,
            ShapeSpec::Ellipse { .. } => ShapeKind::Ellipse,
            ShapeSpec::Spiral { .. } => ShapeKind::Spiral,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ShapeSpec::Circle { radius } => radius > 0.0,
            ShapeSpec::Ellipse { a, b } => a >= b && b > 0.0,
            ShapeSpec::Spiral { b, theta_min, theta_max } => b > 0.0 && theta_min >= 0.0 && theta_min < theta_max,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::param(format!("invalid shape parameters {self:?}")))
        }
    }

    /// Parameters padded to a fixed width of three, as fed to the conditioning vector.
    pub fn params(&self) -> [f64; 3] {
        match *self {
            ShapeSpec::Circle { radius } => [radius, 0.0, 0.0],
            ShapeSpec::Ellipse { a, b } => [a, b, 0.0],
            ShapeSpec::Spiral { b, theta_min, theta_max } => [b, theta_min, theta_max],
        }
    }

    pub fn is_closed(&self) -> bool {
        !matches!(self, ShapeSpec::Spiral { .. })
    }

    /// Point at curve parameter `u ∈ [0, 1]`.
    pub fn point(&self, u: f64) -> Point {
        match *self {
            ShapeSpec::Circle { radius } => {
                let (s, c) = libm::sincos(TAU * u);
                [radius * c, radius * s]
            }
            ShapeSpec::Ellipse { a, b } => {
                let (s, c) = libm::sincos(TAU * u);
                [a * c, b * s]
            }
            ShapeSpec::Spiral { b, theta_min, theta_max } => {
                let theta = theta_min + (theta_max - theta_min) * u;
                let (s, c) = libm::sincos(theta);
                [b * theta * c, b * theta * s]
            }
        }
    }

    /// Residual of the implicit curve equation at `p`; zero on the curve.
    ///
    /// For the spiral this is `|p| − b·θ(p)` with θ the unwrapped angle closest
    /// to the parameter range.
    pub fn residual(&self, p: Point) -> f64 {
        match *self {
            ShapeSpec::Circle { radius } => libm::hypot(p[0], p[1]) - radius,
            ShapeSpec::Ellipse { a, b } => (p[0] / a) * (p[0] / a) + (p[1] / b) * (p[1] / b) - 1.0,
            ShapeSpec::Spiral { b, theta_min, theta_max } => {
                let r = libm::hypot(p[0], p[1]);
                let base = libm::atan2(p[1], p[0]).rem_euclid_tau();
                let mut best = f64::INFINITY;
                let mut theta = base;
                while theta <= theta_max + TAU {
                    if theta >= theta_min - TAU {
                        let d = r - b * theta;
                        if libm::fabs(d) < libm::fabs(best) {
                            best = d;
                        }
                    }
                    theta += TAU;
                }
                best
            }
        }
    }
}

trait RemEuclidTau {
    fn rem_euclid_tau(self) -> f64;
}

impl RemEuclidTau for f64 {
    fn rem_euclid_tau(self) -> f64 {
        let r = libm::fmod(self, TAU);
        if r < 0.0 {
            r + TAU
        } else {
            r
        }
    }
}

/// `n` points at uniformly spaced curve parameters. Closed curves do not
/// repeat their starting point; the spiral includes both ends.
pub fn curve_points(shape: &ShapeSpec, n: usize) -> Result<Vec<Point>> {
    shape.validate()?;
    if n == 0 {
        return Err(Error::param("need at least one curve point"));
    }
    let denom = if shape.is_closed() || n == 1 { n as f64 } else { (n - 1) as f64 };
    Ok((0..n).map(|i| shape.point(i as f64 / denom)).collect())
}

/// Dense sampling of a shape used as the Chamfer reference.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceCurve {
    pub points: Vec<Point>,
}

pub const MIN_REFERENCE_POINTS: usize = 16;

pub fn reference_curve(shape: &ShapeSpec, n_points: usize) -> Result<ReferenceCurve> {
    if n_points < MIN_REFERENCE_POINTS {
        return Err(Error::param(format!("reference curve needs at least {MIN_REFERENCE_POINTS} points, got {n_points}")));
    }
    Ok(ReferenceCurve { points: curve_points(shape, n_points)? })
}

/// One memorized straight path from a noise point to a shape point.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub x0: Point,
    pub x1: Point,
    pub t_grid: Vec<f64>,
}

/// Position and target velocity on the straight path at time `t`.
pub fn interpolant(pair: &TrainingPair, t: f64) -> Result<(Point, Point)> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::param(format!("interpolation time {t} outside [0, 1]")));
    }
    let x = [(1.0 - t) * pair.x0[0] + t * pair.x1[0], (1.0 - t) * pair.x0[1] + t * pair.x1[1]];
    let v = [pair.x1[0] - pair.x0[0], pair.x1[1] - pair.x0[1]];
    Ok((x, v))
}

/// Open uniform grid `j / (size + 1)` for `j = 1..=size`.
pub fn open_time_grid(size: usize) -> Vec<f64> {
    (1..=size).map(|j| j as f64 / (size + 1) as f64).collect()
}

/// Stream id for the curve-parameter draws, kept apart from the noise stream.
const TARGET_STREAM: u64 = 1;

/// Deterministic dataset for one `(shape, seed)`: `x₀` is row `i` of
/// `sample_gaussian(seed, [n_pairs, 2])`, `x₁` sits on the curve at a
/// parameter drawn uniformly from a stream derived from the same seed.
pub fn build_dataset(shape: &ShapeSpec, seed: u64, n_pairs: usize, grid_size: usize) -> Result<Vec<TrainingPair>> {
    shape.validate()?;
    if n_pairs == 0 {
        return Err(Error::param("n_pairs must be at least 1"));
    }
    if grid_size < 2 {
        return Err(Error::param(format!("grid_size must be at least 2, got {grid_size}")));
    }
    let noise = sample_gaussian(seed, &[n_pairs, 2])?;
    let mut targets = GaussianRng::new(derive_seed(seed, TARGET_STREAM));
    let grid = open_time_grid(grid_size);
    Ok(noise
        .data()
        .chunks_exact(2)
        .map(|x0| TrainingPair { x0: [x0[0], x0[1]], x1: shape.point(targets.uniform()), t_grid: grid.clone() })
        .collect())
}

/// Seed banks of the toy experiment, keyed by [`ShapeKind::name`].
pub fn default_seed_banks() -> SeedBank {
    let mut bank = SeedBank::new();
    let lists: [(ShapeKind, [u64; 6]); 3] = [
        (ShapeKind::Circle, [101, 103, 104, 105, 106, 107]),
        (ShapeKind::Ellipse, [201, 211, 212, 213, 214, 215]),
        (ShapeKind::Spiral, [301, 313, 314, 315, 316, 317]),
    ];
    for (kind, seeds) in lists {
        bank.insert(kind.name(), seeds.to_vec()).expect("static banks are valid");
    }
    bank
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_quarter_turns() {
        let pts = curve_points(&ShapeSpec::Circle { radius: 1.0 }, 4).unwrap();
        let want = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];
        for (p, w) in pts.iter().zip(want) {
            assert!((p[0] - w[0]).abs() < 1e-12 && (p[1] - w[1]).abs() < 1e-12, "{p:?}");
        }
    }

    #[test]
    fn ellipse_points_on_curve() {
        let shape = ShapeSpec::Ellipse { a: 2.0, b: 1.0 };
        for p in reference_curve(&shape, 512).unwrap().points {
            assert!(((p[0] / 2.0).powi(2) + p[1] * p[1] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn spiral_radii_increase() {
        let shape = ShapeSpec::Spiral { b: 0.1, theta_min: 0.0, theta_max: 4.0 * PI };
        let pts = reference_curve(&shape, 256).unwrap().points;
        let radii: Vec<f64> = pts.iter().map(|p| libm::hypot(p[0], p[1])).collect();
        assert!(radii.windows(2).all(|w| w[1] > w[0]));
        for p in &pts {
            assert!(shape.residual(*p).abs() < 1e-9, "{p:?} {}", shape.residual(*p));
        }
    }

    #[test]
    fn reference_curve_validation() {
        assert!(reference_curve(&ShapeSpec::Circle { radius: 1.0 }, 15).is_err());
        assert!(reference_curve(&ShapeSpec::Circle { radius: -1.0 }, 64).is_err());
        assert!(ShapeSpec::Ellipse { a: 1.0, b: 2.0 }.validate().is_err());
        assert!(ShapeSpec::Spiral { b: 0.1, theta_min: 2.0, theta_max: 1.0 }.validate().is_err());
    }

    #[test]
    fn interpolant_endpoints_and_midpoint() {
        let pair = TrainingPair { x0: [0.0, 0.0], x1: [2.0, 4.0], t_grid: open_time_grid(3) };
        assert_eq!(interpolant(&pair, 0.0).unwrap().0, pair.x0);
        assert_eq!(interpolant(&pair, 1.0).unwrap().0, pair.x1);
        assert_eq!(interpolant(&pair, 0.5).unwrap(), ([1.0, 2.0], [2.0, 4.0]));
        assert!(interpolant(&pair, 1.5).is_err());
        assert!(interpolant(&pair, -0.1).is_err());
    }

    #[test]
    fn open_grid_of_five() {
        let g = open_time_grid(5);
        let want = [1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0, 4.0 / 6.0, 5.0 / 6.0];
        for (a, b) in g.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn dataset_is_deterministic_and_on_curve() {
        for kind in ShapeKind::ALL {
            let shape = kind.default_spec();
            let a = build_dataset(&shape, 101, 32, 5).unwrap();
            let b = build_dataset(&shape, 101, 32, 5).unwrap();
            assert_eq!(a, b);
            for pair in &a {
                assert!(shape.residual(pair.x1).abs() < 1e-9);
                assert_eq!(pair.t_grid.len(), 5);
            }
        }
        assert!(build_dataset(&ShapeKind::Circle.default_spec(), 1, 0, 5).is_err());
        assert!(build_dataset(&ShapeKind::Circle.default_spec(), 1, 4, 1).is_err());
    }

    #[test]
    fn dataset_noise_matches_seed_draw() {
        let pairs = build_dataset(&ShapeKind::Ellipse.default_spec(), 211, 8, 3).unwrap();
        let z = sample_gaussian(211, &[8, 2]).unwrap();
        for (p, row) in pairs.iter().zip(z.data().chunks_exact(2)) {
            assert_eq!(p.x0, [row[0], row[1]]);
        }
    }

    #[test]
    fn banks() {
        let b = default_seed_banks();
        assert_eq!(b.get("circle").unwrap()[0], 101);
        assert_eq!(b.get("ellipse").unwrap(), &[201, 211, 212, 213, 214, 215]);
        assert_eq!(b.get("spiral").unwrap(), &[301, 313, 314, 315, 316, 317]);
        assert!(b.iter().all(|(_, s)| s.len() == 6));
    }
}
