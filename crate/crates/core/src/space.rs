//! Finite-dimensional inner-product space primitives.
//!
//! Points are plain coordinate vectors in `R^n` with the Euclidean inner
//! product. Balls come in open and closed flavours, and every sampler draws
//! from a per-index ChaCha stream so that a given `(seed, index)` always yields
//! the same point no matter how the work is scheduled across threads.

use std::ops::{Add, Mul, Neg, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Draws allowed per accepted point in rejection sampling; fewer than one hit
/// in this many means the acceptance rate is below 1e-6.
pub const MAX_REJECTION_ATTEMPTS: u64 = 1_000_000;

/// A point of `R^n`.
///
/// Coordinates are finite on construction. Arithmetic through the operator
/// impls assumes matching dimensions and panics otherwise; use [`inner`] and
/// friends when the dimensions come from untrusted input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::EmptyPoint);
        }
        if let Some((index, &value)) = coords.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Point(coords))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "dimension must be positive");
        Point(vec![0.0; dim])
    }

    /// The standard basis vector `e_{axis+1}` (zero-based `axis`).
    pub fn basis(dim: usize, axis: usize) -> Self {
        assert!(axis < dim, "axis {axis} out of range for dimension {dim}");
        let mut p = Point::zeros(dim);
        p.0[axis] = 1.0;
        p
    }

    /// Pads `coords` with zeros up to `dim`.
    pub fn padded(coords: &[f64], dim: usize) -> Result<Self> {
        if coords.len() > dim {
            return Err(Error::DimensionMismatch { left: coords.len(), right: dim });
        }
        let mut v = coords.to_vec();
        v.resize(dim, 0.0);
        Point::new(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.0
    }

    /// `<self, e_{axis+1}>`.
    pub fn coord(&self, axis: usize) -> f64 {
        self.0[axis]
    }

    pub(crate) fn coords_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn dot(&self, other: &Point) -> f64 {
        assert_same_dim(self, other);
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn norm_squared(&self) -> f64 {
        self.0.iter().map(|a| a * a).sum()
    }

    pub fn distance(&self, other: &Point) -> f64 {
        self.distance_squared(other).sqrt()
    }

    pub fn distance_squared(&self, other: &Point) -> f64 {
        assert_same_dim(self, other);
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    pub fn scale(&self, factor: f64) -> Point {
        Point(self.0.iter().map(|a| a * factor).collect())
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &Point, b: f64) -> Point {
        assert_same_dim(self, other);
        Point(self.0.iter().zip(&other.0).map(|(x, y)| a * x + b * y).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        if self.dim() == dim {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { left: self.dim(), right: dim })
        }
    }
}

fn assert_same_dim(a: &Point, b: &Point) {
    assert_eq!(a.dim(), b.dim(), "dimension mismatch in point arithmetic");
}

impl TryFrom<Vec<f64>> for Point {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Point::new(v)
    }
}

impl From<Point> for Vec<f64> {
    fn from(p: Point) -> Self {
        p.0
    }
}

impl Add for &Point {
    type Output = Point;

    fn add(self, rhs: &Point) -> Point {
        assert_same_dim(self, rhs);
        Point(self.0.iter().zip(&rhs.0).map(|(a, b)| a + b).collect())
    }
}

impl Sub for &Point {
    type Output = Point;

    fn sub(self, rhs: &Point) -> Point {
        assert_same_dim(self, rhs);
        Point(self.0.iter().zip(&rhs.0).map(|(a, b)| a - b).collect())
    }
}

impl Mul<&Point> for f64 {
    type Output = Point;

    fn mul(self, rhs: &Point) -> Point {
        rhs.scale(self)
    }
}

impl Neg for &Point {
    type Output = Point;

    fn neg(self) -> Point {
        Point(self.0.iter().map(|a| -a).collect())
    }
}

/// Euclidean inner product.
pub fn inner(x: &Point, y: &Point) -> Result<f64> {
    x.check_dim(y.dim())?;
    Ok(x.dot(y))
}

pub fn norm(x: &Point) -> f64 {
    x.norm()
}

/// Largest pairwise distance within a finite point set.
pub fn diam_estimate(points: &[Point]) -> Result<f64> {
    let first = points.first().ok_or(Error::EmptyPointSet)?;
    for p in points {
        p.check_dim(first.dim())?;
    }
    let mut best: f64 = 0.0;
    for (i, p) in points.iter().enumerate() {
        for q in &points[i + 1..] {
            best = best.max(p.distance(q));
        }
    }
    Ok(best)
}

/// `B(center, radius)` when open, `B[center, radius]` when closed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Point,
    pub radius: f64,
    pub closed: bool,
}

impl Ball {
    pub fn closed(center: Point, radius: f64) -> Result<Self> {
        Self::new(center, radius, true)
    }

    pub fn open(center: Point, radius: f64) -> Result<Self> {
        Self::new(center, radius, false)
    }

    pub fn new(center: Point, radius: f64, closed: bool) -> Result<Self> {
        if !(radius.is_finite() && radius >= 0.0) {
            return Err(Error::InvalidBall(format!("radius {radius} must be finite and >= 0")));
        }
        Ok(Ball { center, radius, closed })
    }

    pub fn dim(&self) -> usize {
        self.center.dim()
    }

    pub fn contains(&self, x: &Point) -> bool {
        let d = x.distance(&self.center);
        if self.closed {
            d <= self.radius
        } else {
            d < self.radius
        }
    }

    /// Diameter of the ball as a set, `2 * radius`.
    pub fn diameter(&self) -> f64 {
        2.0 * self.radius
    }
}

/// Seed and sample count for a deterministic sampler.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub seed: u64,
    pub count: usize,
}

impl SamplerConfig {
    pub fn new(seed: u64, count: usize) -> Self {
        SamplerConfig { seed, count }
    }

    /// Same seed, different count.
    pub fn with_count(self, count: usize) -> Self {
        SamplerConfig { count, ..self }
    }

    /// An independent child configuration keyed by `tag`.
    pub fn derive(self, tag: u64, count: usize) -> Self {
        SamplerConfig { seed: splitmix64(self.seed ^ splitmix64(tag)), count }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE5_E9B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// RNG for sample `index` of the stream identified by `seed`.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// A uniformly distributed unit vector.
pub fn random_unit<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Point {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-300 {
            return Point(v.into_iter().map(|a| a / n).collect());
        }
    }
}

/// A uniformly random unit vector orthogonal to the unit vector `u`.
/// Requires `u.dim() >= 2`.
pub fn random_orthogonal_unit<R: Rng + ?Sized>(rng: &mut R, u: &Point) -> Point {
    assert!(u.dim() >= 2, "no orthogonal direction in dimension 1");
    loop {
        let w = random_unit(rng, u.dim());
        let v = w.combine(1.0, u, -w.dot(u));
        let n = v.norm();
        if n > 1e-6 {
            return v.scale(1.0 / n);
        }
    }
}

fn draw_in_ball<R: Rng + ?Sized>(rng: &mut R, ball: &Ball) -> Point {
    let dim = ball.dim();
    loop {
        let dir = random_unit(rng, dim);
        let u: f64 = rng.random();
        let rho = ball.radius * u.powf(1.0 / dim as f64);
        let p = ball.center.combine(1.0, &dir, rho);
        if ball.contains(&p) {
            return p;
        }
    }
}

/// `count` points uniformly distributed in `ball`.
pub fn sample_ball(ball: &Ball, cfg: SamplerConfig) -> Result<Vec<Point>> {
    if ball.radius <= 0.0 {
        return Err(Error::InvalidBall(format!("sampling needs radius > 0, got {}", ball.radius)));
    }
    Ok((0..cfg.count as u64)
        .into_par_iter()
        .map(|i| draw_in_ball(&mut stream_rng(cfg.seed, i), ball))
        .collect())
}

/// `count` points uniformly distributed in `outer` with norm at least
/// `inner_radius`, by rejection from the ball.
pub fn sample_annulus(outer: &Ball, inner_radius: f64, cfg: SamplerConfig) -> Result<Vec<Point>> {
    if outer.radius <= 0.0 {
        return Err(Error::InvalidBall(format!("sampling needs radius > 0, got {}", outer.radius)));
    }
    let farthest = outer.center.norm() + outer.radius;
    if farthest <= inner_radius {
        return Err(Error::EmptyRegion(format!(
            "every point of the ball has norm below {inner_radius} (max {farthest})"
        )));
    }
    (0..cfg.count as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(cfg.seed, i);
            for _ in 0..MAX_REJECTION_ATTEMPTS {
                let p = draw_in_ball(&mut rng, outer);
                if p.norm() >= inner_radius {
                    return Ok(p);
                }
            }
            Err(Error::LowAcceptance { attempts: MAX_REJECTION_ATTEMPTS })
        })
        .collect()
}

/// `count` points uniformly distributed on the sphere of `radius` around
/// `center`.
pub fn sample_sphere(center: &Point, radius: f64, cfg: SamplerConfig) -> Vec<Point> {
    (0..cfg.count as u64)
        .into_par_iter()
        .map(|i| {
            let dir = random_unit(&mut stream_rng(cfg.seed, i), center.dim());
            center.combine(1.0, &dir, radius)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(c: &[f64]) -> Point {
        Point::new(c.to_vec()).unwrap()
    }

    #[test]
    fn inner_examples() {
        assert_eq!(inner(&p(&[1.0, 0.0]), &p(&[0.0, 1.0])).unwrap(), 0.0);
        assert_eq!(inner(&p(&[3.0, 4.0]), &p(&[3.0, 4.0])).unwrap(), 25.0);
        assert_eq!(inner(&p(&[1.0, 2.0, 3.0]), &p(&[4.0, 5.0, 6.0])).unwrap(), 32.0);
    }

    #[test]
    fn inner_rejects_dimension_mismatch() {
        let err = inner(&p(&[1.0, 0.0]), &p(&[1.0, 0.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { left: 2, right: 3 }));
    }

    #[test]
    fn norm_examples() {
        assert_eq!(norm(&p(&[0.0, 0.0])), 0.0);
        assert_eq!(norm(&p(&[3.0, 4.0])), 5.0);
        assert_eq!(norm(&p(&[1.0, 1.0, 1.0, 1.0])), 2.0);
    }

    #[test]
    fn point_rejects_non_finite() {
        assert!(matches!(Point::new(vec![1.0, f64::NAN]), Err(Error::NonFinite { index: 1, .. })));
        assert!(matches!(Point::new(vec![]), Err(Error::EmptyPoint)));
        assert!(serde_json::from_str::<Point>("[1.0, 2.0]").is_ok());
        assert!(serde_json::from_str::<Point>("[]").is_err());
    }

    #[test]
    fn diam_examples() {
        assert_eq!(diam_estimate(&[p(&[0.0, 0.0])]).unwrap(), 0.0);
        assert_eq!(diam_estimate(&[p(&[0.0, 0.0]), p(&[3.0, 4.0])]).unwrap(), 5.0);
        assert!(matches!(diam_estimate(&[]), Err(Error::EmptyPointSet)));

        let unit = Ball::closed(Point::zeros(2), 1.0).unwrap();
        let pts = sample_ball(&unit, SamplerConfig::new(3, 100)).unwrap();
        assert!(diam_estimate(&pts).unwrap() <= 2.0);
    }

    #[test]
    fn ball_membership_respects_closed_flag() {
        let closed = Ball::closed(Point::zeros(2), 1.0).unwrap();
        let open = Ball::open(Point::zeros(2), 1.0).unwrap();
        let edge = p(&[1.0, 0.0]);
        assert!(closed.contains(&edge));
        assert!(!open.contains(&edge));
        assert!(Ball::closed(Point::zeros(2), -1.0).is_err());
    }

    #[test]
    fn sample_ball_membership_and_determinism() {
        let unit = Ball::closed(Point::zeros(2), 1.0).unwrap();
        let pts = sample_ball(&unit, SamplerConfig::new(7, 1000)).unwrap();
        assert_eq!(pts.len(), 1000);
        assert!(pts.iter().all(|x| x.norm() <= 1.0));

        let b = Ball::closed(p(&[0.75f64.sqrt(), 0.5]), 4.0).unwrap();
        let a1 = sample_ball(&b, SamplerConfig::new(7, 1)).unwrap();
        let a2 = sample_ball(&b, SamplerConfig::new(7, 1)).unwrap();
        assert_eq!(a1, a2);
    }

    #[test]
    fn sample_ball_mean_norm_matches_disk_moment() {
        // For the uniform unit disk, E|x| = int_0^1 r * 2r dr = 2/3.
        let unit = Ball::closed(Point::zeros(2), 1.0).unwrap();
        let pts = sample_ball(&unit, SamplerConfig::new(11, 20_000)).unwrap();
        let mean = pts.iter().map(Point::norm).sum::<f64>() / pts.len() as f64;
        assert!((mean - 2.0 / 3.0).abs() < 0.02, "mean norm {mean}");
    }

    #[test]
    fn sample_prefix_is_stable_across_counts() {
        let unit = Ball::closed(Point::zeros(3), 1.0).unwrap();
        let short = sample_ball(&unit, SamplerConfig::new(5, 10)).unwrap();
        let long = sample_ball(&unit, SamplerConfig::new(5, 100)).unwrap();
        assert_eq!(&long[..10], &short[..]);
    }

    #[test]
    fn annulus_examples() {
        let unit = Ball::closed(Point::zeros(2), 1.0).unwrap();
        let pts = sample_annulus(&unit, 0.5, SamplerConfig::new(1, 500)).unwrap();
        assert!(pts.iter().all(|x| (0.5..=1.0).contains(&x.norm())));

        let tiny = Ball::closed(Point::zeros(2), 0.4).unwrap();
        assert!(matches!(
            sample_annulus(&tiny, 0.5, SamplerConfig::new(1, 10)),
            Err(Error::EmptyRegion(_))
        ));

        // The shell 0.5 <= |x| < 0.6 covers 0.11/16 of B[x0, 4], about 69 of 10^4 draws.
        let b = Ball::closed(p(&[0.75f64.sqrt(), 0.5]), 4.0).unwrap();
        let pts = sample_annulus(&b, 0.5, SamplerConfig::new(7, 10_000)).unwrap();
        assert!(pts.iter().any(|x| x.norm() < 0.6));
        assert!(pts.iter().all(|x| x.norm() >= 0.5 && b.contains(x)));
    }

    #[test]
    fn sphere_samples_have_exact_radius() {
        let c = p(&[1.0, -2.0, 0.5]);
        for x in sample_sphere(&c, 0.7, SamplerConfig::new(2, 200)) {
            assert!((x.distance(&c) - 0.7).abs() < 1e-14);
        }
    }

    #[test]
    fn orthogonal_unit_is_orthonormal() {
        let mut rng = stream_rng(9, 0);
        for dim in [2, 3, 5, 10] {
            let u = random_unit(&mut rng, dim);
            let w = random_orthogonal_unit(&mut rng, &u);
            assert!(u.dot(&w).abs() < 1e-12);
            assert!((w.norm() - 1.0).abs() < 1e-12);
        }
    }
}
