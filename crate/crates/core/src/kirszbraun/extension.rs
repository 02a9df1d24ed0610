use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::RwLock;

use rayon::prelude::*;

use super::minimax::{max_gap, solve_constraints, Constraint, MinimaxSettings};
use crate::error::{Error, Result};
use crate::lipschitz::family_bound;
use crate::operators::{FamilyOperator, FamilyParams, Operator, VonNeumann};
use crate::output::{fmt_f64, write_csv_header};
use crate::sets::{SetDescriptor, SetKind, MEMBERSHIP_TOL};
use crate::space::{sample_annulus, sample_sphere, Ball, Point, SamplerConfig};

/// Slack in `|v_i - v_j| <= L |a_i - a_j| + slack`.
pub const CONSISTENCY_SLACK: f64 = 1e-9;
/// Anchors closer than this count as the same point.
pub const MIN_ANCHOR_DISTANCE: f64 = 1e-12;
/// Largest accepted max-gap of an extension value.
pub const FEASIBILITY_TOL: f64 = 1e-6;
/// Points with `|x| >= inner_radius - EXCISION_TOL` use the closed-form map.
pub const EXCISION_TOL: f64 = 1e-12;

fn key(x: &Point) -> Vec<u64> {
    x.coords().iter().map(|v| v.to_bits()).collect()
}

/// Anchor/value pairs of a map known to be `L`-Lipschitz on the anchors.
#[derive(Clone, Debug)]
pub struct LipschitzSample {
    anchors: Vec<Point>,
    values: Vec<Point>,
    lipschitz: f64,
    index: HashMap<Vec<u64>, usize>,
}

impl LipschitzSample {
    /// Checks distinctness and consistency of every pair.
    pub fn new(pairs: Vec<(Point, Point)>, lipschitz: f64) -> Result<Self> {
        if !(lipschitz.is_finite() && lipschitz > 0.0) {
            return Err(Error::InvalidParameter(format!("Lipschitz constant {lipschitz} must be positive")));
        }
        if pairs.is_empty() {
            return Err(Error::EmptyPointSet);
        }
        let (adim, vdim) = (pairs[0].0.dim(), pairs[0].1.dim());
        let mut sample = LipschitzSample { anchors: Vec::new(), values: Vec::new(), lipschitz, index: HashMap::new() };
        for (a, v) in pairs {
            a.check_dim(adim)?;
            v.check_dim(vdim)?;
            sample.index.insert(key(&a), sample.anchors.len());
            sample.anchors.push(a);
            sample.values.push(v);
        }
        sample.check_consistency()?;
        Ok(sample)
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn anchors(&self) -> &[Point] {
        &self.anchors
    }

    pub fn values(&self) -> &[Point] {
        &self.values
    }

    pub fn anchor_dim(&self) -> usize {
        self.anchors[0].dim()
    }

    pub fn value_dim(&self) -> usize {
        self.values[0].dim()
    }

    /// Stored value at an anchor with bitwise identical coordinates.
    pub fn lookup(&self, x: &Point) -> Option<&Point> {
        self.index.get(&key(x)).map(|&i| &self.values[i])
    }

    fn pair_violation(&self, i: usize, a: &Point, v: &Point) -> Option<Error> {
        let anchor_gap = a.distance(&self.anchors[i]);
        let value_gap = v.distance(&self.values[i]);
        if anchor_gap <= MIN_ANCHOR_DISTANCE || value_gap > self.lipschitz * anchor_gap + CONSISTENCY_SLACK {
            Some(Error::InconsistentSample {
                i,
                j: self.len(),
                ratio: value_gap / anchor_gap,
                lipschitz: self.lipschitz,
                value_gap,
                anchor_gap,
            })
        } else {
            None
        }
    }

    /// First violating pair in `(i, j)` order, `i < j`.
    pub fn check_consistency(&self) -> Result<()> {
        let found = (0..self.len()).into_par_iter().find_map_first(|j| {
            (0..j).find_map(|i| {
                let anchor_gap = self.anchors[j].distance(&self.anchors[i]);
                let value_gap = self.values[j].distance(&self.values[i]);
                (anchor_gap <= MIN_ANCHOR_DISTANCE || value_gap > self.lipschitz * anchor_gap + CONSISTENCY_SLACK).then(
                    || Error::InconsistentSample {
                        i,
                        j,
                        ratio: value_gap / anchor_gap,
                        lipschitz: self.lipschitz,
                        value_gap,
                        anchor_gap,
                    },
                )
            })
        });
        found.map_or(Ok(()), Err)
    }

    /// Appends a pair after checking it against every stored pair.
    pub fn push(&mut self, anchor: Point, value: Point) -> Result<()> {
        anchor.check_dim(self.anchor_dim())?;
        value.check_dim(self.value_dim())?;
        let violation = if self.len() > 4096 {
            (0..self.len()).into_par_iter().find_map_first(|i| self.pair_violation(i, &anchor, &value))
        } else {
            (0..self.len()).find_map(|i| self.pair_violation(i, &anchor, &value))
        };
        if let Some(e) = violation {
            return Err(e);
        }
        self.index.insert(key(&anchor), self.len());
        self.anchors.push(anchor);
        self.values.push(value);
        Ok(())
    }

    /// Flat table `a1..ad, v1..vk, L`, one row per pair.
    pub fn write_csv<W: Write>(&self, mut out: W, metadata: &[(&str, String)]) -> Result<()> {
        write_csv_header(&mut out, metadata)?;
        let mut wtr = csv::Writer::from_writer(out);
        let header: Vec<String> = (1..=self.anchor_dim())
            .map(|k| format!("a{k}"))
            .chain((1..=self.value_dim()).map(|k| format!("v{k}")))
            .chain(std::iter::once("L".to_string()))
            .collect();
        wtr.write_record(&header)?;
        for (a, v) in self.anchors.iter().zip(&self.values) {
            let row: Vec<String> = a
                .coords()
                .iter()
                .chain(v.coords())
                .map(|&c| fmt_f64(c))
                .chain(std::iter::once(fmt_f64(self.lipschitz)))
                .collect();
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads the table written by [`LipschitzSample::write_csv`].
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let header = rdr.headers()?.clone();
        let adim = header.iter().filter(|h| h.starts_with('a')).count();
        let vdim = header.iter().filter(|h| h.starts_with('v')).count();
        if adim == 0 || vdim == 0 || header.len() != adim + vdim + 1 {
            return Err(Error::InvalidParameter("sample table needs columns a1.., v1.., L".into()));
        }
        let mut pairs = Vec::new();
        let mut lipschitz = None;
        for record in rdr.records() {
            let record = record?;
            let nums: Vec<f64> = record
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidParameter(format!("sample table: {e}")))?;
            pairs.push((Point::new(nums[..adim].to_vec())?, Point::new(nums[adim..adim + vdim].to_vec())?));
            lipschitz = Some(nums[adim + vdim]);
        }
        LipschitzSample::new(pairs, lipschitz.ok_or(Error::EmptyPointSet)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtensionSettings {
    pub minimax: MinimaxSettings,
    pub feasibility_tol: f64,
    /// Append each strictly feasible `(query, result)` pair to the sample.
    pub memoize: bool,
}

impl Default for ExtensionSettings {
    fn default() -> Self {
        ExtensionSettings { minimax: MinimaxSettings::default(), feasibility_tol: FEASIBILITY_TOL, memoize: true }
    }
}

/// Pointwise Kirszbraun extension of a [`LipschitzSample`].
///
/// `extend(x)` returns the deepest point of the balls
/// `B[v_i, L |x - a_i|]`. With memoization on, evaluation appends to the
/// sample, so results depend on the order of calls; callers that need
/// reproducibility evaluate sequentially.
#[derive(Debug)]
pub struct ExtensionMap {
    sample: RwLock<LipschitzSample>,
    settings: ExtensionSettings,
    range: Option<SetDescriptor>,
}

/// Range sets the solver can take as extra constraints.
fn range_constraints(range: &SetDescriptor) -> Option<Vec<Constraint>> {
    match range.kind() {
        SetKind::ClosedBall { center, radius } => Some(vec![Constraint::ball(center.clone(), *radius)]),
        SetKind::Halfspace { normal, offset } => Constraint::halfspace(normal, *offset).ok().map(|c| vec![c]),
        SetKind::Box { lower, upper } => {
            let dim = range.dim();
            let mut out = Vec::new();
            for k in 0..dim {
                let e = Point::basis(dim, k);
                out.push(Constraint::halfspace(&e, upper.coord(k)).ok()?);
                out.push(Constraint::halfspace(&e.scale(-1.0), -lower.coord(k)).ok()?);
            }
            Some(out)
        }
        _ => None,
    }
}

impl ExtensionMap {
    pub fn new(sample: LipschitzSample, settings: ExtensionSettings, range: Option<SetDescriptor>) -> Result<Self> {
        if let Some(r) = &range {
            if !r.is_convex() {
                return Err(Error::InvalidSet(format!("extension range {r} must be convex")));
            }
            r.check_value_dim(sample.value_dim())?;
        }
        Ok(ExtensionMap { sample: RwLock::new(sample), settings, range })
    }

    pub fn settings(&self) -> &ExtensionSettings {
        &self.settings
    }

    pub fn range(&self) -> Option<&SetDescriptor> {
        self.range.as_ref()
    }

    pub fn len(&self) -> usize {
        self.sample.read().expect("sample lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> LipschitzSample {
        self.sample.read().expect("sample lock").clone()
    }

    /// Adds a pair if it is new and consistent with the sample.
    pub fn register(&self, anchor: Point, value: Point) -> Result<bool> {
        let mut sample = self.sample.write().expect("sample lock");
        if sample.lookup(&anchor).is_some() {
            return Ok(false);
        }
        match sample.push(anchor, value) {
            Ok(()) => Ok(true),
            Err(Error::InconsistentSample { .. }) => Ok(false),
            Err(e) => Err(e),
        }
    }

    /// Max-gap of `y` against the balls of query `x`.
    pub fn gap_at(&self, x: &Point, y: &Point) -> Result<f64> {
        let cons = self.constraints(&self.sample.read().expect("sample lock"), x)?;
        Ok(max_gap(&cons, y.coords()).0)
    }

    fn constraints(&self, sample: &LipschitzSample, x: &Point) -> Result<Vec<Constraint>> {
        x.check_dim(sample.anchor_dim())?;
        let l = sample.lipschitz();
        Ok(sample
            .anchors()
            .iter()
            .zip(sample.values())
            .map(|(a, v)| Constraint::ball(v.clone(), l * x.distance(a)))
            .collect())
    }

    pub fn extend(&self, x: &Point) -> Result<Point> {
        let tol = self.settings.feasibility_tol;
        let (y, h) = {
            let sample = self.sample.read().expect("sample lock");
            if let Some(v) = sample.lookup(x) {
                return Ok(v.clone());
            }
            let balls = self.constraints(&sample, x)?;
            let sol = solve_constraints(&balls, None, &self.settings.minimax)?;
            let (mut y, mut h) = (sol.point, sol.value);
            if let Some(range) = &self.range {
                y = range.project(&y)?;
                h = max_gap(&balls, y.coords()).0;
                if h > tol {
                    if let Some(extra) = range_constraints(range) {
                        let mut all = balls.clone();
                        all.extend(extra);
                        let sol = solve_constraints(&all, Some(&y), &self.settings.minimax)?;
                        y = range.project(&sol.point)?;
                        h = max_gap(&balls, y.coords()).0;
                    }
                }
            }
            (y, h)
        };
        if !(h <= tol) {
            return Err(Error::InfeasibleExtension { achieved: h, tolerance: tol });
        }
        if self.settings.memoize && h <= 0.0 {
            self.register(x.clone(), y.clone())?;
        }
        Ok(y)
    }
}

impl Operator for ExtensionMap {
    fn apply(&self, x: &Point) -> Result<Point> {
        self.extend(x)
    }
}

impl SetDescriptor {
    fn check_value_dim(&self, dim: usize) -> Result<()> {
        if self.dim() == dim {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { left: self.dim(), right: dim })
        }
    }
}

/// A closed-form map outside `B(0, inner_radius)` glued to a lazy extension
/// inside it.
pub struct ExcisedOperator {
    outer: Box<dyn Operator + Send>,
    extension: ExtensionMap,
    inner_radius: f64,
}

impl std::fmt::Debug for ExcisedOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExcisedOperator")
            .field("inner_radius", &self.inner_radius)
            .field("anchors", &self.extension.len())
            .finish_non_exhaustive()
    }
}

impl ExcisedOperator {
    pub fn new(outer: Box<dyn Operator + Send>, extension: ExtensionMap, inner_radius: f64) -> Self {
        ExcisedOperator { outer, extension, inner_radius }
    }

    pub fn inner_radius(&self) -> f64 {
        self.inner_radius
    }

    pub fn lipschitz(&self) -> f64 {
        self.extension.sample.read().expect("sample lock").lipschitz()
    }

    pub fn extension(&self) -> &ExtensionMap {
        &self.extension
    }

    pub fn outer(&self) -> &dyn Operator {
        self.outer.as_ref()
    }

    /// True when `x` is handled by the closed-form map.
    pub fn is_outside(&self, x: &Point) -> bool {
        x.norm() >= self.inner_radius - EXCISION_TOL
    }
}

impl Operator for ExcisedOperator {
    fn apply(&self, x: &Point) -> Result<Point> {
        if self.is_outside(x) {
            self.outer.apply(x)
        } else {
            self.extension.extend(x)
        }
    }

    /// Registers the closed-form values at the outside points, so that later
    /// inside evaluations respect them as well.
    fn prepare(&self, points: &[Point]) {
        for x in points.iter().filter(|x| self.is_outside(x)) {
            if let Ok(v) = self.outer.apply(x) {
                let _ = self.extension.register(x.clone(), v);
            }
        }
    }
}

/// Knobs of [`build_f_with`].
#[derive(Clone, Debug, Default)]
pub struct BuildOptions {
    /// Reflect anchors into `{x_1 >= 0}`.
    pub upper_half_only: bool,
    pub range: Option<SetDescriptor>,
    pub extension: ExtensionSettings,
}

fn upper_half(x: Point) -> Point {
    let mut c = x.into_coords();
    c[0] = c[0].abs();
    Point::new(c).expect("finite coordinates")
}

/// `F` agreeing with `T^{p}_{S,C}` on `|x| >= 1 - beta` and extending it
/// inside with constant `family_bound(p, beta)`.
///
/// `anchors.count` points are split between `(1 - beta) S` and
/// `region \ B(0, 1 - beta)`; the region center is added when it lies outside
/// the excised ball.
pub fn build_f(c: &SetDescriptor, beta: f64, p: FamilyParams, anchors: SamplerConfig, region: &Ball) -> Result<ExcisedOperator> {
    build_f_with(c, beta, p, anchors, region, &BuildOptions::default())
}

pub fn build_f_with(
    c: &SetDescriptor,
    beta: f64,
    p: FamilyParams,
    anchors: SamplerConfig,
    region: &Ball,
    options: &BuildOptions,
) -> Result<ExcisedOperator> {
    if !c.is_convex() {
        return Err(Error::InvalidSet(format!("{c} must be convex")));
    }
    region.center.check_dim(c.dim())?;
    let lipschitz = family_bound(p, beta)?.value;
    let rho = 1.0 - beta;
    let op = FamilyOperator::sphere_first(p, c.clone());

    let n_sphere = anchors.count.div_ceil(2);
    let mut points = sample_sphere(&Point::zeros(c.dim()), rho, anchors.derive(1, n_sphere));
    points.extend(sample_annulus(region, rho, anchors.derive(2, anchors.count - n_sphere))?);
    if region.center.norm() >= rho {
        points.push(region.center.clone());
    }
    if options.upper_half_only {
        points = points.into_iter().map(upper_half).collect();
    }
    let mut pairs = Vec::with_capacity(points.len());
    let mut seen = std::collections::HashSet::new();
    for a in points {
        if seen.insert(key(&a)) {
            let v = op.apply(&a)?;
            pairs.push((a, v));
        }
    }
    let sample = LipschitzSample::new(pairs, lipschitz)?;
    let extension = ExtensionMap::new(sample, options.extension, options.range.clone())?;
    Ok(ExcisedOperator::new(Box::new(op), extension, rho))
}

/// `F_1` equal to `P_C P_S` on `|x| >= 1 - beta` and, inside, the extension
/// of `P_C P_S` restricted to `(1 - beta) S` with constant `1/(1 - beta)` and
/// range `B[x0, r]`.
pub fn build_f1(c: &SetDescriptor, beta: f64, x0: &Point, r: f64, anchors: SamplerConfig) -> Result<ExcisedOperator> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::BoundUndefined { beta });
    }
    if !(r >= 2.0) {
        return Err(Error::InvalidParameter(format!("F1 needs r >= 2, got {r}")));
    }
    if !c.is_convex() {
        return Err(Error::InvalidSet(format!("{c} must be convex")));
    }
    x0.check_dim(c.dim())?;
    let sphere = SetDescriptor::unit_sphere(c.dim());
    if !(sphere.contains(x0, MEMBERSHIP_TOL) && c.contains(x0, MEMBERSHIP_TOL)) {
        return Err(Error::InvalidParameter(format!("x0 must lie on the sphere and in {c}")));
    }
    let rho = 1.0 - beta;
    let op = VonNeumann { c: c.clone() };
    let mut pairs = Vec::with_capacity(anchors.count);
    for a in sample_sphere(&Point::zeros(c.dim()), rho, anchors.derive(1, anchors.count)) {
        let v = op.apply(&a)?;
        pairs.push((a, v));
    }
    let sample = LipschitzSample::new(pairs, 1.0 / rho)?;
    let range = SetDescriptor::closed_ball(x0.clone(), r)?;
    let extension = ExtensionMap::new(sample, ExtensionSettings::default(), Some(range))?;
    Ok(ExcisedOperator::new(Box::new(op), extension, rho))
}
