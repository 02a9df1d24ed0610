//! Closed sets with closed-form projections.
//!
//! Every set here has an exact nearest-point rule. The convex kinds have a
//! single-valued projection everywhere; the spheres are single-valued
//! everywhere except the origin, where [`SetDescriptor::project`] refuses to
//! pick a point.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Stage};
use crate::space::Point;

/// Orthonormality and unit-norm checks use this slack.
const SHAPE_TOL: f64 = 1e-12;

/// Default absolute tolerance for membership tests.
pub const MEMBERSHIP_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SetKind {
    /// `{x : |x| = 1}`.
    UnitSphere,
    /// `{x : |x| = radius}`.
    ScaledSphere { radius: f64 },
    /// `{t e_1 + lambda e_2 : t real}`.
    Line { lambda: f64 },
    /// `base + span(directions)`, directions orthonormal.
    AffineSubspace { base: Point, directions: Vec<Point> },
    /// `{x : <normal, x> <= offset}`, normal of unit length.
    Halfspace { normal: Point, offset: f64 },
    ClosedBall { center: Point, radius: f64 },
    Box { lower: Point, upper: Point },
}

/// A closed subset of `R^dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSet", into = "RawSet")]
pub struct SetDescriptor {
    kind: SetKind,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct RawSet {
    #[serde(flatten)]
    kind: SetKind,
    dim: usize,
}

impl TryFrom<RawSet> for SetDescriptor {
    type Error = Error;

    fn try_from(raw: RawSet) -> Result<Self> {
        SetDescriptor::new(raw.kind, raw.dim)
    }
}

impl From<SetDescriptor> for RawSet {
    fn from(s: SetDescriptor) -> Self {
        RawSet { kind: s.kind, dim: s.dim }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidSet(msg.into())
}

impl SetDescriptor {
    pub fn new(kind: SetKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dimension must be positive"));
        }
        match &kind {
            SetKind::UnitSphere => {}
            SetKind::ScaledSphere { radius } => {
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(invalid(format!("sphere radius {radius} must be > 0")));
                }
            }
            SetKind::Line { lambda } => {
                if dim < 2 {
                    return Err(invalid("the line L_lambda needs dimension >= 2"));
                }
                if !(lambda.is_finite() && *lambda >= 0.0) {
                    return Err(invalid(format!("line offset {lambda} must be >= 0")));
                }
            }
            SetKind::AffineSubspace { base, directions } => {
                base.check_dim(dim)?;
                for (i, d) in directions.iter().enumerate() {
                    d.check_dim(dim)?;
                    for (j, e) in directions.iter().enumerate().skip(i) {
                        let expected = if i == j { 1.0 } else { 0.0 };
                        if (d.dot(e) - expected).abs() > SHAPE_TOL {
                            return Err(invalid(format!(
                                "directions {i} and {j} are not orthonormal"
                            )));
                        }
                    }
                }
            }
            SetKind::Halfspace { normal, offset } => {
                normal.check_dim(dim)?;
                if (normal.norm() - 1.0).abs() > SHAPE_TOL {
                    return Err(invalid("halfspace normal must have unit length"));
                }
                if !offset.is_finite() {
                    return Err(invalid("halfspace offset must be finite"));
                }
            }
            SetKind::ClosedBall { center, radius } => {
                center.check_dim(dim)?;
                if !(radius.is_finite() && *radius >= 0.0) {
                    return Err(invalid(format!("ball radius {radius} must be >= 0")));
                }
            }
            SetKind::Box { lower, upper } => {
                lower.check_dim(dim)?;
                upper.check_dim(dim)?;
                if lower.coords().iter().zip(upper.coords()).any(|(l, u)| l > u) {
                    return Err(invalid("box needs lower <= upper coordinatewise"));
                }
            }
        }
        Ok(SetDescriptor { kind, dim })
    }

    pub fn unit_sphere(dim: usize) -> Self {
        Self::new(SetKind::UnitSphere, dim).expect("valid unit sphere")
    }

    pub fn scaled_sphere(radius: f64, dim: usize) -> Result<Self> {
        Self::new(SetKind::ScaledSphere { radius }, dim)
    }

    pub fn line(lambda: f64, dim: usize) -> Result<Self> {
        Self::new(SetKind::Line { lambda }, dim)
    }

    pub fn affine(base: Point, directions: Vec<Point>) -> Result<Self> {
        let dim = base.dim();
        Self::new(SetKind::AffineSubspace { base, directions }, dim)
    }

    pub fn halfspace(normal: Point, offset: f64) -> Result<Self> {
        let dim = normal.dim();
        Self::new(SetKind::Halfspace { normal, offset }, dim)
    }

    pub fn closed_ball(center: Point, radius: f64) -> Result<Self> {
        let dim = center.dim();
        Self::new(SetKind::ClosedBall { center, radius }, dim)
    }

    pub fn boxed(lower: Point, upper: Point) -> Result<Self> {
        let dim = lower.dim();
        Self::new(SetKind::Box { lower, upper }, dim)
    }

    pub fn kind(&self) -> &SetKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_convex(&self) -> bool {
        !matches!(self.kind, SetKind::UnitSphere | SetKind::ScaledSphere { .. })
    }

    fn sphere_radius(&self) -> Option<f64> {
        match self.kind {
            SetKind::UnitSphere => Some(1.0),
            SetKind::ScaledSphere { radius } => Some(radius),
            _ => None,
        }
    }

    /// Nearest point of the set to `x`.
    pub fn project(&self, x: &Point) -> Result<Point> {
        x.check_dim(self.dim)?;
        let p = match &self.kind {
            SetKind::UnitSphere | SetKind::ScaledSphere { .. } => {
                let n = x.norm();
                if n == 0.0 {
                    return Err(Error::MultiValuedProjection {
                        set: self.to_string(),
                        stage: Stage::Direct,
                    });
                }
                let radius = self.sphere_radius().unwrap();
                let coords = x.coords().iter().map(|a| a / n * radius).collect();
                Point::new(coords)?
            }
            SetKind::Line { lambda } => {
                let mut p = Point::zeros(self.dim);
                p.coords_mut()[0] = x.coord(0);
                p.coords_mut()[1] = *lambda;
                p
            }
            SetKind::AffineSubspace { base, directions } => {
                let offset = x - base;
                directions.iter().fold(base.clone(), |acc, d| acc.combine(1.0, d, offset.dot(d)))
            }
            SetKind::Halfspace { normal, offset } => {
                let excess = normal.dot(x) - offset;
                if excess > 0.0 {
                    x.combine(1.0, normal, -excess)
                } else {
                    x.clone()
                }
            }
            SetKind::ClosedBall { center, radius } => {
                let d = x.distance(center);
                if d <= *radius {
                    x.clone()
                } else {
                    center.combine(1.0, &(x - center), radius / d)
                }
            }
            SetKind::Box { lower, upper } => {
                let coords = x
                    .coords()
                    .iter()
                    .zip(lower.coords().iter().zip(upper.coords()))
                    .map(|(v, (l, u))| v.clamp(*l, *u))
                    .collect();
                Point::new(coords)?
            }
        };
        Ok(p)
    }

    /// `2 P x - x`.
    pub fn reflect(&self, x: &Point) -> Result<Point> {
        let p = self.project(x)?;
        Ok(p.combine(2.0, x, -1.0))
    }

    /// Euclidean distance from `x` to the set. Defined at the origin for
    /// spheres even though the projection is not.
    pub fn distance(&self, x: &Point) -> Result<f64> {
        x.check_dim(self.dim)?;
        if let Some(radius) = self.sphere_radius() {
            return Ok((x.norm() - radius).abs());
        }
        Ok(x.distance(&self.project(x)?))
    }

    pub fn contains(&self, x: &Point, tol: f64) -> bool {
        matches!(self.distance(x), Ok(d) if d <= tol)
    }
}

impl fmt::Display for SetDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            SetKind::UnitSphere => write!(f, "unit_sphere"),
            SetKind::ScaledSphere { radius } => write!(f, "sphere({radius})"),
            SetKind::Line { lambda } => write!(f, "line({lambda})"),
            SetKind::AffineSubspace { directions, .. } => {
                write!(f, "affine(rank {})", directions.len())
            }
            SetKind::Halfspace { offset, .. } => write!(f, "halfspace(offset {offset})"),
            SetKind::ClosedBall { radius, .. } => write!(f, "ball({radius})"),
            SetKind::Box { .. } => write!(f, "box"),
        }
    }
}

/// Points where the unit sphere meets `L_lambda`.
///
/// Two points for `0 <= lambda < 1`, the tangent point for `lambda = 1`.
pub fn intersection_points_sphere_line(lambda: f64, dim: usize) -> Result<Vec<Point>> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!("lambda {lambda} must be >= 0")));
    }
    if dim < 2 {
        return Err(invalid("the line L_lambda needs dimension >= 2"));
    }
    if lambda > 1.0 {
        return Err(Error::EmptyIntersection { lambda });
    }
    if lambda == 1.0 {
        return Ok(vec![Point::padded(&[0.0, 1.0], dim)?]);
    }
    let t = (1.0 - lambda * lambda).sqrt();
    Ok(vec![Point::padded(&[t, lambda], dim)?, Point::padded(&[-t, lambda], dim)?])
}
