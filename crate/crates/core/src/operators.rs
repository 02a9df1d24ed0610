//! Douglas-Rachford operator, the three-parameter family around it, the von
//! Neumann operator and the iteration driver.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Stage};
use crate::output::{fmt_f64, write_csv_header};
use crate::sets::SetDescriptor;
use crate::space::{sample_annulus, Ball, Point, SamplerConfig};

/// A map `R^n -> R^n` that may fail (typically at the origin of a sphere).
///
/// `prepare` is a hint that the given points are about to be evaluated.
/// Stateless operators ignore it; stateful ones (lazy extensions) use it to fix
/// the order in which they commit to values.
pub trait Operator: Sync {
    fn apply(&self, x: &Point) -> Result<Point>;

    fn prepare(&self, _points: &[Point]) {}
}

impl<F> Operator for F
where
    F: Fn(&Point) -> Result<Point> + Sync,
{
    fn apply(&self, x: &Point) -> Result<Point> {
        self(x)
    }
}

/// The identity map.
#[derive(Clone, Copy, Debug, Default)]
pub struct Identity;

impl Operator for Identity {
    fn apply(&self, x: &Point) -> Result<Point> {
        Ok(x.clone())
    }
}

/// `(s1, s2, s3)` selecting
/// `s1 I + (1-s1)(s2 I + (1-s2) R_B)(s3 I + (1-s3) R_A)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct FamilyParams {
    s1: f64,
    s2: f64,
    s3: f64,
}

impl FamilyParams {
    /// Douglas-Rachford, `(1/2, 0, 0)`.
    pub const DR: FamilyParams = FamilyParams { s1: 0.5, s2: 0.0, s3: 0.0 };
    /// Von Neumann alternating projections `P_B P_A`, `(0, 1/2, 1/2)`.
    pub const VN: FamilyParams = FamilyParams { s1: 0.0, s2: 0.5, s3: 0.5 };

    pub fn new(s1: f64, s2: f64, s3: f64) -> Result<Self> {
        for (name, s) in [("s1", s1), ("s2", s2), ("s3", s3)] {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::InvalidParameter(format!("{name} = {s} must lie in [0, 1]")));
            }
        }
        Ok(FamilyParams { s1, s2, s3 })
    }

    pub fn s1(&self) -> f64 {
        self.s1
    }

    pub fn s2(&self) -> f64 {
        self.s2
    }

    pub fn s3(&self) -> f64 {
        self.s3
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.s1, self.s2, self.s3]
    }
}

impl TryFrom<[f64; 3]> for FamilyParams {
    type Error = Error;

    fn try_from([s1, s2, s3]: [f64; 3]) -> Result<Self> {
        FamilyParams::new(s1, s2, s3)
    }
}

impl From<FamilyParams> for [f64; 3] {
    fn from(p: FamilyParams) -> Self {
        p.as_array()
    }
}

impl std::fmt::Display for FamilyParams {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.s1, self.s2, self.s3)
    }
}

/// `T_{A,B} x = (x + R_B R_A x) / 2`.
pub fn dr_step(a: &SetDescriptor, b: &SetDescriptor, x: &Point) -> Result<Point> {
    let ra = a.reflect(x).map_err(|e| e.at_stage(Stage::Inner))?;
    let rb = b.reflect(&ra).map_err(|e| e.at_stage(Stage::Outer))?;
    Ok((x + &rb).scale(0.5))
}

/// Evaluates the family member selected by `p`. Factors with weight one on
/// the identity skip their reflection, so e.g. `s1 = 1` is defined everywhere.
pub fn family_step(p: FamilyParams, a: &SetDescriptor, b: &SetDescriptor, x: &Point) -> Result<Point> {
    if p == FamilyParams::DR {
        return dr_step(a, b, x);
    }
    if p.s1 == 1.0 {
        return Ok(x.clone());
    }
    let z = if p.s3 == 1.0 {
        x.clone()
    } else {
        let ra = a.reflect(x).map_err(|e| e.at_stage(Stage::Inner))?;
        x.combine(p.s3, &ra, 1.0 - p.s3)
    };
    let w = if p.s2 == 1.0 {
        z
    } else {
        let rb = b.reflect(&z).map_err(|e| e.at_stage(Stage::Outer))?;
        z.combine(p.s2, &rb, 1.0 - p.s2)
    };
    Ok(x.combine(p.s1, &w, 1.0 - p.s1))
}

/// `P_C P_S x` with `S` the unit sphere.
pub fn vn_step(c: &SetDescriptor, x: &Point) -> Result<Point> {
    let sphere = SetDescriptor::unit_sphere(c.dim());
    let ps = sphere.project(x).map_err(|e| e.at_stage(Stage::Inner))?;
    c.project(&ps).map_err(|e| e.at_stage(Stage::Outer))
}

#[derive(Clone, Debug)]
pub struct DouglasRachford {
    pub a: SetDescriptor,
    pub b: SetDescriptor,
}

impl DouglasRachford {
    pub fn new(a: SetDescriptor, b: SetDescriptor) -> Result<Self> {
        if a.dim() != b.dim() {
            return Err(Error::DimensionMismatch { left: a.dim(), right: b.dim() });
        }
        Ok(DouglasRachford { a, b })
    }

    /// `T_{S,C}` with `S` the unit sphere.
    pub fn sphere_first(c: SetDescriptor) -> Self {
        DouglasRachford { a: SetDescriptor::unit_sphere(c.dim()), b: c }
    }
}

impl Operator for DouglasRachford {
    fn apply(&self, x: &Point) -> Result<Point> {
        dr_step(&self.a, &self.b, x)
    }
}

#[derive(Clone, Debug)]
pub struct FamilyOperator {
    pub params: FamilyParams,
    pub a: SetDescriptor,
    pub b: SetDescriptor,
}

impl FamilyOperator {
    pub fn new(params: FamilyParams, a: SetDescriptor, b: SetDescriptor) -> Result<Self> {
        if a.dim() != b.dim() {
            return Err(Error::DimensionMismatch { left: a.dim(), right: b.dim() });
        }
        Ok(FamilyOperator { params, a, b })
    }

    /// `T^{s}_{S,C}` with `S` the unit sphere.
    pub fn sphere_first(params: FamilyParams, c: SetDescriptor) -> Self {
        FamilyOperator { params, a: SetDescriptor::unit_sphere(c.dim()), b: c }
    }
}

impl Operator for FamilyOperator {
    fn apply(&self, x: &Point) -> Result<Point> {
        family_step(self.params, &self.a, &self.b, x)
    }
}

#[derive(Clone, Debug)]
pub struct VonNeumann {
    pub c: SetDescriptor,
}

impl Operator for VonNeumann {
    fn apply(&self, x: &Point) -> Result<Point> {
        vn_step(&self.c, x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum StopReason {
    MaxIter,
    Converged { tol: f64 },
    ProjectionUndefined,
}

/// The orbit `x_0, x_1 = T x_0, ...` and why it stopped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub points: Vec<Point>,
    pub stop_reason: StopReason,
}

impl IterationTrace {
    pub fn last(&self) -> &Point {
        self.points.last().expect("trace holds at least x0")
    }

    /// Number of steps taken.
    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }

    /// `|x_{k+1} - x_k|` for each step.
    pub fn step_norms(&self) -> Vec<f64> {
        self.points.windows(2).map(|w| w[0].distance(&w[1])).collect()
    }

    /// Largest `|x_{k+1} - op(x_k)|` over the trace.
    pub fn replay(&self, op: &dyn Operator) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for w in self.points.windows(2) {
            worst = worst.max(op.apply(&w[0])?.distance(&w[1]));
        }
        Ok(worst)
    }

    /// One row per iterate: `n, x_1..x_d, |x_{n+1} - x_n|`. The last row has
    /// an empty step column.
    pub fn write_csv<W: Write>(&self, mut out: W, metadata: &[(&str, String)]) -> Result<()> {
        write_csv_header(&mut out, metadata)?;
        let dim = self.points[0].dim();
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["n".to_string()];
        header.extend((1..=dim).map(|i| format!("x{i}")));
        header.push("step_norm".into());
        wtr.write_record(&header)?;
        let steps = self.step_norms();
        for (n, x) in self.points.iter().enumerate() {
            let mut row = vec![n.to_string()];
            row.extend(x.coords().iter().map(|&v| fmt_f64(v)));
            row.push(steps.get(n).map(|&s| fmt_f64(s)).unwrap_or_default());
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Runs `x_{k+1} = step(x_k)` until `|x_{k+1} - x_k| <= conv_tol` or `max_n`
/// steps. A projection failure ends the trace early instead of erroring.
pub fn iterate(step: &dyn Operator, x0: &Point, max_n: usize, conv_tol: f64) -> Result<IterationTrace> {
    let mut points = vec![x0.clone()];
    for _ in 0..max_n {
        let current = points.last().unwrap();
        match step.apply(current) {
            Ok(next) => {
                let d = next.distance(current);
                points.push(next);
                if d <= conv_tol {
                    return Ok(IterationTrace { points, stop_reason: StopReason::Converged { tol: conv_tol } });
                }
            }
            Err(e) if e.is_projection_failure() => {
                return Ok(IterationTrace { points, stop_reason: StopReason::ProjectionUndefined });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(IterationTrace { points, stop_reason: StopReason::MaxIter })
}

/// Whether `P_A x` lies (within `tol`) in both `A` and `B`.
pub fn is_fixed_point(a: &SetDescriptor, b: &SetDescriptor, x: &Point, tol: f64) -> Result<bool> {
    let p = a.project(x)?;
    Ok(a.contains(&p, tol) && b.contains(&p, tol))
}

/// Which of `H_+`, `H_-`, `H_0` a point falls in, by the sign of its first
/// coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignClass {
    Plus,
    Minus,
    Zero,
}

pub fn sign_class(x: &Point, tol: f64) -> SignClass {
    let c = x.coord(0);
    if c > tol {
        SignClass::Plus
    } else if c < -tol {
        SignClass::Minus
    } else {
        SignClass::Zero
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SignViolation {
    pub x: Point,
    pub image: Point,
    pub before: SignClass,
    pub after: SignClass,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SignInvarianceReport {
    pub lambda: f64,
    pub dim: usize,
    pub seed: u64,
    pub samples: usize,
    pub violations: Vec<SignViolation>,
    /// Starts with first coordinate exactly zero.
    pub zero_starts: usize,
    /// Largest `|<T x, e_1>|` over the zero starts.
    pub zero_max_abs: f64,
    /// Zero starts whose image left the `1e-12` band.
    pub zero_violations: usize,
    /// Samples where `T` was undefined.
    pub undefined: usize,
}

impl SignInvarianceReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.zero_violations == 0
    }
}

/// Samples `B[0,5] \ B(0,0.01)` and checks that `T_{S,L_lambda}` keeps each
/// point's sign class. Every sample also yields a start with its first
/// coordinate zeroed.
pub fn check_sign_invariance(lambda: f64, dim: usize, cfg: SamplerConfig) -> Result<SignInvarianceReport> {
    let line = SetDescriptor::line(lambda, dim)?;
    let op = DouglasRachford::sphere_first(line);
    let outer = Ball::closed(Point::zeros(dim), 5.0)?;
    let samples = sample_annulus(&outer, 0.01, cfg)?;
    let mut report = SignInvarianceReport {
        lambda,
        dim,
        seed: cfg.seed,
        samples: samples.len(),
        violations: Vec::new(),
        zero_starts: 0,
        zero_max_abs: 0.0,
        zero_violations: 0,
        undefined: 0,
    };
    for x in &samples {
        match op.apply(x) {
            Ok(tx) => {
                let (before, after) = (sign_class(x, 0.0), sign_class(&tx, 0.0));
                if before != after {
                    report.violations.push(SignViolation { x: x.clone(), image: tx, before, after });
                }
            }
            Err(e) if e.is_projection_failure() => report.undefined += 1,
            Err(e) => return Err(e),
        }
        let mut z = x.clone();
        z.coords_mut()[0] = 0.0;
        if z.norm() < 0.01 {
            continue;
        }
        report.zero_starts += 1;
        match op.apply(&z) {
            Ok(tz) => {
                let c = tz.coord(0).abs();
                report.zero_max_abs = report.zero_max_abs.max(c);
                if c > 1e-12 {
                    report.zero_violations += 1;
                }
            }
            Err(e) if e.is_projection_failure() => report.undefined += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sets::intersection_points_sphere_line;

    fn p(c: &[f64]) -> Point {
        Point::new(c.to_vec()).unwrap()
    }

    fn sphere() -> SetDescriptor {
        SetDescriptor::unit_sphere(2)
    }

    fn line(l: f64) -> SetDescriptor {
        SetDescriptor::line(l, 2).unwrap()
    }

    #[test]
    fn dr_step_examples() {
        assert_eq!(dr_step(&sphere(), &line(0.0), &p(&[1.0, 0.0])).unwrap(), p(&[1.0, 0.0]));
        // R_S (3,4) = (-1.8,-2.4), mirrored to (-1.8, 2.4), averaged with (3,4).
        let t = dr_step(&sphere(), &line(0.0), &p(&[3.0, 4.0])).unwrap();
        assert!(t.distance(&p(&[0.6, 3.2])) < 1e-15);
        let err = dr_step(&sphere(), &line(0.0), &p(&[0.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::MultiValuedProjection { stage: Stage::Inner, .. }));
    }

    #[test]
    fn dr_step_reports_outer_stage() {
        // R_L (0, 0.5) lands exactly at the origin; the sphere is then the outer set.
        let err = dr_step(&line(0.25), &sphere(), &p(&[0.0, 0.5])).unwrap_err();
        assert!(matches!(err, Error::MultiValuedProjection { stage: Stage::Outer, .. }));
    }

    #[test]
    fn family_step_examples() {
        let x = p(&[3.0, 4.0]);
        let dr = family_step(FamilyParams::DR, &sphere(), &line(0.0), &x).unwrap();
        assert!(dr.distance(&p(&[0.6, 3.2])) < 1e-15);
        let vn = family_step(FamilyParams::VN, &sphere(), &line(0.0), &x).unwrap();
        assert!(vn.distance(&p(&[0.6, 0.0])) < 1e-15);
        let id = FamilyParams::new(1.0, 0.3, 0.9).unwrap();
        assert_eq!(family_step(id, &sphere(), &line(0.0), &x).unwrap(), x);
        assert_eq!(family_step(id, &sphere(), &line(0.0), &p(&[0.0, 0.0])).unwrap(), p(&[0.0, 0.0]));
    }

    #[test]
    fn family_params_validation() {
        assert!(FamilyParams::new(1.1, 0.0, 0.0).is_err());
        assert!(FamilyParams::new(0.0, -0.1, 0.0).is_err());
        assert!(serde_json::from_str::<FamilyParams>("[0.5, 0, 0]").unwrap() == FamilyParams::DR);
        assert!(serde_json::from_str::<FamilyParams>("[0.5, 0, 2]").is_err());
    }

    #[test]
    fn vn_step_examples() {
        assert!(vn_step(&line(0.0), &p(&[3.0, 4.0])).unwrap().distance(&p(&[0.6, 0.0])) < 1e-15);
        let x0 = p(&[0.75f64.sqrt(), 0.5]);
        assert!(vn_step(&line(0.5), &x0).unwrap().distance(&x0) < 1e-15);
        assert!(vn_step(&line(0.0), &p(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn iterate_converges_for_feasible_lines() {
        let op = DouglasRachford::sphere_first(line(0.0));
        let trace = iterate(&op, &p(&[3.0, 4.0]), 10_000, 1e-10).unwrap();
        assert!(matches!(trace.stop_reason, StopReason::Converged { .. }));
        assert!(trace.last().distance(&p(&[1.0, 0.0])) < 1e-6);
        assert!(trace.replay(&op).unwrap() <= 1e-12);

        let op = DouglasRachford::sphere_first(line(0.5));
        let trace = iterate(&op, &p(&[3.0, 4.0]), 10_000, 1e-10).unwrap();
        let target = &intersection_points_sphere_line(0.5, 2).unwrap()[0];
        assert!(trace.last().distance(target) < 1e-6);
    }

    #[test]
    fn iterate_does_not_converge_past_tangency() {
        let op = DouglasRachford::sphere_first(line(1.5));
        let trace = iterate(&op, &p(&[3.0, 4.0]), 100_000, 1e-10).unwrap();
        assert_eq!(trace.stop_reason, StopReason::MaxIter);
        assert_eq!(trace.steps(), 100_000);
    }

    #[test]
    fn iterate_stops_at_undefined_projection() {
        let op = DouglasRachford::sphere_first(line(0.0));
        let trace = iterate(&op, &p(&[0.0, 0.0]), 10, 1e-10).unwrap();
        assert_eq!(trace.stop_reason, StopReason::ProjectionUndefined);
        assert_eq!(trace.points.len(), 1);
    }

    #[test]
    fn fixed_point_examples() {
        let x0 = p(&[0.75f64.sqrt(), 0.5]);
        assert!(is_fixed_point(&sphere(), &line(0.5), &x0, 1e-12).unwrap());
        assert!(!is_fixed_point(&sphere(), &line(0.5), &p(&[3.0, 4.0]), 1e-12).unwrap());
        assert!(is_fixed_point(&sphere(), &line(0.0), &p(&[2.0, 0.0]), 1e-12).unwrap());
    }

    #[test]
    fn off_sphere_point_on_the_axis_is_not_fixed() {
        // R_S (2,0) = (0,0) lies on L_0, so T (2,0) = ((2,0) + (0,0)) / 2.
        let t = dr_step(&sphere(), &line(0.0), &p(&[2.0, 0.0])).unwrap();
        assert_eq!(t, p(&[1.0, 0.0]));
    }

    #[test]
    fn sign_class_examples() {
        assert_eq!(sign_class(&p(&[3.0, 4.0]), 0.0), SignClass::Plus);
        assert_eq!(sign_class(&p(&[0.0, 7.0]), 0.0), SignClass::Zero);
        assert_eq!(sign_class(&p(&[-1e-3, 0.0]), 1e-6), SignClass::Minus);
    }

    #[test]
    fn sign_invariance_examples() {
        let report = check_sign_invariance(0.5, 2, SamplerConfig::new(1, 10_000)).unwrap();
        assert!(report.passed(), "{:?}", report.violations.first());
        assert_eq!(report.samples, 10_000);

        let t = dr_step(&sphere(), &line(0.0), &p(&[0.0, 2.0])).unwrap();
        assert_eq!(t.coord(0), 0.0);
        let t = dr_step(&sphere(), &line(0.0), &p(&[3.0, 4.0])).unwrap();
        assert_eq!(sign_class(&t, 0.0), SignClass::Plus);
    }

    #[test]
    fn trace_csv_has_one_row_per_iterate() {
        let op = DouglasRachford::sphere_first(line(0.5));
        let trace = iterate(&op, &p(&[3.0, 4.0]), 5, 0.0).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf, &[("seed", "0".into())]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows[0], "n,x1,x2,step_norm");
        assert_eq!(rows.len(), 1 + 6);
        assert!(rows[6].ends_with(','));
    }
}
