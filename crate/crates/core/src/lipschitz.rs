//! Closed-form Lipschitz constants for the sphere operators away from the
//! origin, and a sampling estimator to check them against.
//!
//! All constants refer to the region `H \ B(0, 1 - beta)`. The estimator
//! draws random pairs from a domain and, for maps built from the sphere, adds
//! nearly tangential pairs on the inner sphere where those maps stretch the
//! most.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{DouglasRachford, FamilyOperator, FamilyParams, Operator};
use crate::output::{fmt_f64, write_csv_header};
use crate::sets::SetDescriptor;
use crate::space::{
    random_orthogonal_unit, random_unit, sample_annulus, sample_ball, stream_rng, Ball, Point,
    SamplerConfig,
};

/// Pairs closer than this are skipped; the ratio is rounding noise there.
pub const MIN_PAIR_DISTANCE: f64 = 1e-12;

/// Absolute slack when comparing an estimate to a closed-form constant.
pub const BOUND_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "map", rename_all = "snake_case")]
pub enum BoundKind {
    /// `R_S`.
    SphereReflection,
    /// `P_S`.
    SphereProjection,
    /// `T_{S,C}` for convex `C`.
    DouglasRachford,
    /// `T^{s}_{S,C}`, from the four-term expansion of the family.
    Family { params: FamilyParams },
    /// `T^{s}_{S,C}`, from composing the factor constants.
    FamilyComposition { params: FamilyParams },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzBound {
    pub value: f64,
    pub kind: BoundKind,
    /// The bound holds on `H \ B(0, inner_radius)`.
    pub inner_radius: f64,
}

fn check_beta(beta: f64) -> Result<()> {
    if (0.0..1.0).contains(&beta) {
        Ok(())
    } else {
        Err(Error::BoundUndefined { beta })
    }
}

/// `(1 + beta) / (1 - beta)`.
pub fn sphere_reflection_bound(beta: f64) -> Result<LipschitzBound> {
    check_beta(beta)?;
    Ok(LipschitzBound {
        value: (1.0 + beta) / (1.0 - beta),
        kind: BoundKind::SphereReflection,
        inner_radius: 1.0 - beta,
    })
}

/// `1 / (1 - beta)`, for `P_S` on the annulus.
pub fn sphere_projection_bound(beta: f64) -> Result<LipschitzBound> {
    check_beta(beta)?;
    Ok(LipschitzBound { value: 1.0 / (1.0 - beta), kind: BoundKind::SphereProjection, inner_radius: 1.0 - beta })
}

/// The pairwise factor `max{1/|x|, 1/|y|}` in
/// `|x/|x| - y/|y|| <= max{1/|x|, 1/|y|} |x - y|`.
pub fn projection_pair_bound(x: &Point, y: &Point) -> Result<f64> {
    y.check_dim(x.dim())?;
    let (nx, ny) = (x.norm(), y.norm());
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::InvalidParameter("projection pair bound needs nonzero points".into()));
    }
    Ok((1.0 / nx).max(1.0 / ny))
}

/// `1 / (1 - beta)`, for `T_{S,C}` with convex `C`.
pub fn dr_bound(beta: f64) -> Result<LipschitzBound> {
    check_beta(beta)?;
    Ok(LipschitzBound { value: 1.0 / (1.0 - beta), kind: BoundKind::DouglasRachford, inner_radius: 1.0 - beta })
}

/// Coefficients of `I`, `R_S`, `R_C` and `R_C R_S` in the four-term expansion
/// behind [`family_bound`].
///
/// They do not sum to one in general, e.g. `(1/2, 0, 0)` gives `1/2`, and the
/// family is not that linear combination once `R_C` is nonlinear, so
/// [`family_bound`] can undershoot the true constant. See
/// [`family_composition_bound`].
pub fn family_expansion_coefficients(p: FamilyParams) -> [f64; 4] {
    let (s1, s2, s3) = (p.s1(), p.s2(), p.s3());
    [
        s1 + (1.0 - s1) * (s2 + s3),
        (1.0 - s1) * s2 * (1.0 - s3),
        (1.0 - s1) * (1.0 - s2) * s3,
        (1.0 - s1) * s2 * s3,
    ]
}

/// `(1 + beta - 2 c beta) / (1 - beta)` with
/// `c = s1 + (1-s1)(s2+s3) + (1-s1)(1-s2) s3`.
///
/// Errors when the expression is not positive (e.g. the von Neumann preset
/// for `beta >= 2/3`).
pub fn family_bound(p: FamilyParams, beta: f64) -> Result<LipschitzBound> {
    check_beta(beta)?;
    let [c0, _, c2, _] = family_expansion_coefficients(p);
    let c = c0 + c2;
    // Written as 1 + (1 - 2c) beta so the DR preset (c = 1/2) gives exactly 1/(1-beta).
    let value = (1.0 + (1.0 - 2.0 * c) * beta) / (1.0 - beta);
    if value <= 0.0 {
        return Err(Error::NonPositiveBound { beta, value });
    }
    Ok(LipschitzBound { value, kind: BoundKind::Family { params: p }, inner_radius: 1.0 - beta })
}

/// `s1 + (1-s1) (s3 + (1-s3)(1+beta)/(1-beta))`: the constant obtained by
/// chaining the factor bounds (`R_S` as above, `R_C` and `I` non-expansive).
/// Agrees with [`family_bound`] on the DR preset and with `s2 = 0`.
pub fn family_composition_bound(p: FamilyParams, beta: f64) -> Result<LipschitzBound> {
    let reflection = sphere_reflection_bound(beta)?.value;
    let value = p.s1() + (1.0 - p.s1()) * (p.s3() + (1.0 - p.s3()) * reflection);
    Ok(LipschitzBound { value, kind: BoundKind::FamilyComposition { params: p }, inner_radius: 1.0 - beta })
}

/// Where the estimator draws its points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "domain", rename_all = "snake_case")]
pub enum Domain {
    Ball { ball: Ball },
    /// Points of `outer` with norm at least `inner_radius`.
    Annulus { outer: Ball, inner_radius: f64 },
}

impl Domain {
    pub fn annulus(outer: Ball, inner_radius: f64) -> Self {
        Domain::Annulus { outer, inner_radius }
    }

    pub fn sample(&self, cfg: SamplerConfig) -> Result<Vec<Point>> {
        match self {
            Domain::Ball { ball } => sample_ball(ball, cfg),
            Domain::Annulus { outer, inner_radius } => sample_annulus(outer, *inner_radius, cfg),
        }
    }
}

/// Nearly tangential pairs `(rho u, rho (cos eps u + sin eps w))` on the
/// domain's inner sphere.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TangentialPass {
    pub count: usize,
    pub eps: f64,
}

impl Default for TangentialPass {
    fn default() -> Self {
        TangentialPass { count: 2_000, eps: 1e-4 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalConfig {
    pub pairs: usize,
    pub seed: u64,
    pub tangential: Option<TangentialPass>,
}

impl EmpiricalConfig {
    pub fn random(pairs: usize, seed: u64) -> Self {
        EmpiricalConfig { pairs, seed, tangential: None }
    }

    pub fn with_tangential(pairs: usize, seed: u64) -> Self {
        EmpiricalConfig { pairs, seed, tangential: Some(TangentialPass::default()) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalEstimate {
    pub sup_ratio: f64,
    pub argmax_pair: Option<(Point, Point)>,
    pub pairs_tested: usize,
    /// Pairs dropped because the map failed on a point or the points coincided.
    pub skipped: usize,
    pub seed: u64,
}

/// Random pairs from `domain`, followed by the tangential pairs if requested.
pub fn sample_pairs(domain: &Domain, cfg: &EmpiricalConfig) -> Result<Vec<(Point, Point)>> {
    if cfg.pairs == 0 && cfg.tangential.is_none() {
        return Err(Error::InvalidParameter("the estimator needs at least one pair".into()));
    }
    let base = SamplerConfig::new(cfg.seed, 0);
    let points = if cfg.pairs > 0 { domain.sample(base.derive(1, 2 * cfg.pairs))? } else { Vec::new() };
    let mut pairs: Vec<(Point, Point)> =
        points.chunks_exact(2).map(|c| (c[0].clone(), c[1].clone())).collect();

    if let (Some(pass), Domain::Annulus { outer, inner_radius }) = (cfg.tangential, domain) {
        let rho = *inner_radius;
        if rho > 0.0 && outer.dim() >= 2 {
            let seed = base.derive(2, 0).seed;
            let (c, s) = (pass.eps.cos(), pass.eps.sin());
            let tangential: Vec<(Point, Point)> = (0..pass.count as u64)
                .into_par_iter()
                .map(|k| {
                    let mut rng = stream_rng(seed, k);
                    let u = random_unit(&mut rng, outer.dim());
                    let w = random_orthogonal_unit(&mut rng, &u);
                    (u.scale(rho), u.combine(rho * c, &w, rho * s))
                })
                .filter(|(x, y)| outer.contains(x) && outer.contains(y))
                .collect();
            pairs.extend(tangential);
        }
    }
    Ok(pairs)
}

/// Largest `|f(x) - f(y)| / |x - y|` over the given pairs.
///
/// Points are evaluated sequentially in pair order after a single
/// [`Operator::prepare`] call, so stateful maps see a fixed order.
pub fn estimate_on_pairs(map: &dyn Operator, pairs: &[(Point, Point)], seed: u64) -> EmpiricalEstimate {
    let flat: Vec<Point> = pairs.iter().flat_map(|(x, y)| [x.clone(), y.clone()]).collect();
    map.prepare(&flat);
    let values: Vec<Option<Point>> = flat.iter().map(|x| map.apply(x).ok()).collect();

    let best = (0..pairs.len())
        .into_par_iter()
        .filter_map(|k| {
            let (x, y) = &pairs[k];
            let d = x.distance(y);
            match (&values[2 * k], &values[2 * k + 1]) {
                (Some(fx), Some(fy)) if d >= MIN_PAIR_DISTANCE => Some((fx.distance(fy) / d, k)),
                _ => None,
            }
        })
        .reduce_with(|a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a });

    let tested = (0..pairs.len())
        .filter(|&k| {
            values[2 * k].is_some()
                && values[2 * k + 1].is_some()
                && pairs[k].0.distance(&pairs[k].1) >= MIN_PAIR_DISTANCE
        })
        .count();
    EmpiricalEstimate {
        sup_ratio: best.map_or(0.0, |b| b.0),
        argmax_pair: best.map(|(_, k)| pairs[k].clone()),
        pairs_tested: tested,
        skipped: pairs.len() - tested,
        seed,
    }
}

/// Sampled estimate of the Lipschitz constant of `map` on `domain`.
pub fn empirical_lipschitz(map: &dyn Operator, domain: &Domain, cfg: &EmpiricalConfig) -> Result<EmpiricalEstimate> {
    let pairs = sample_pairs(domain, cfg)?;
    Ok(estimate_on_pairs(map, &pairs, cfg.seed))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CounterexampleScale {
    pub radius: f64,
    pub max_ratio: f64,
}

/// Evidence that `T_{C,S}` has no Lipschitz constant near the points that
/// `R_C` sends to the origin.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CounterexampleReport {
    /// `R_C(0)`; for affine `C` this is where `R_C` vanishes.
    pub focus: Point,
    pub scales: Vec<CounterexampleScale>,
    pub max_ratio: f64,
    pub argmax_pair: Option<(Point, Point)>,
}

/// Samples pairs in shrinking balls around `R_C(0)` and reports the
/// difference quotients of `T_{C,S}` there.
pub fn swapped_order_counterexample(c: &SetDescriptor, cfg: SamplerConfig) -> Result<CounterexampleReport> {
    let focus = c.reflect(&Point::zeros(c.dim()))?;
    let op = DouglasRachford::new(c.clone(), SetDescriptor::unit_sphere(c.dim()))?;
    let mut report = CounterexampleReport { focus: focus.clone(), scales: Vec::new(), max_ratio: 0.0, argmax_pair: None };
    for (i, radius) in [1e-1, 1e-2, 1e-3, 1e-4, 1e-5].into_iter().enumerate() {
        let domain = Domain::Ball { ball: Ball::closed(focus.clone(), radius)? };
        let est = empirical_lipschitz(&op, &domain, &EmpiricalConfig::random(cfg.count, cfg.derive(i as u64, 0).seed))?;
        if est.sup_ratio > report.max_ratio {
            report.max_ratio = est.sup_ratio;
            report.argmax_pair = est.argmax_pair.clone();
        }
        report.scales.push(CounterexampleScale { radius, max_ratio: est.sup_ratio });
    }
    Ok(report)
}

/// One line of the bounds-vs-empirical table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub kind: String,
    pub beta: f64,
    pub params: String,
    pub theoretical: f64,
    pub empirical: f64,
    pub pairs: usize,
    pub seed: u64,
}

impl BoundRow {
    /// NaN constants (undefined closed forms) count as violated.
    pub fn violated(&self) -> bool {
        !(self.empirical <= self.theoretical + BOUND_SLACK)
    }
}

#[derive(Clone, Debug)]
pub struct TableSpec {
    pub betas: Vec<f64>,
    pub set: SetDescriptor,
    pub family: FamilyParams,
    pub pairs: usize,
    pub seed: u64,
    /// Outer radius of the sampled annulus around the origin.
    pub radius: f64,
}

/// Estimates `R_S`, `P_S`, `T_{S,C}` and `T^{s}_{S,C}` on
/// `B[0, radius] \ B(0, 1 - beta)` for each `beta`.
pub fn bounds_table(spec: &TableSpec) -> Result<Vec<BoundRow>> {
    let dim = spec.set.dim();
    let sphere = SetDescriptor::unit_sphere(dim);
    let mut rows = Vec::new();
    for (bi, &beta) in spec.betas.iter().enumerate() {
        let domain = Domain::annulus(Ball::closed(Point::zeros(dim), spec.radius)?, 1.0 - beta);
        let cfg = EmpiricalConfig::with_tangential(spec.pairs, SamplerConfig::new(spec.seed, 0).derive(bi as u64, 0).seed);
        let pairs = sample_pairs(&domain, &cfg)?;
        let tested = |map: &dyn Operator| estimate_on_pairs(map, &pairs, cfg.seed);

        let reflect = |x: &Point| sphere.reflect(x);
        let project = |x: &Point| sphere.project(x);
        let dr = DouglasRachford::sphere_first(spec.set.clone());
        let fam = FamilyOperator::sphere_first(spec.family, spec.set.clone());

        let entries: [(&str, String, f64, &dyn Operator); 4] = [
            ("sphere_reflection", format!("dim={dim}"), sphere_reflection_bound(beta)?.value, &reflect),
            ("sphere_projection", format!("dim={dim}"), sphere_projection_bound(beta)?.value, &project),
            ("douglas_rachford", format!("dim={dim} set={}", spec.set), dr_bound(beta)?.value, &dr),
            (
                "family",
                format!("dim={dim} set={} s={}", spec.set, spec.family),
                family_bound(spec.family, beta).map_or(f64::NAN, |b| b.value),
                &fam,
            ),
        ];
        for (kind, params, theoretical, map) in entries {
            let est = tested(map);
            rows.push(BoundRow {
                kind: kind.into(),
                beta,
                params,
                theoretical,
                empirical: est.sup_ratio,
                pairs: est.pairs_tested,
                seed: est.seed,
            });
        }
    }
    Ok(rows)
}

pub fn write_bounds_csv<W: Write>(rows: &[BoundRow], mut out: W, metadata: &[(&str, String)]) -> Result<()> {
    write_csv_header(&mut out, metadata)?;
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["kind", "beta", "params", "theoretical", "empirical", "pairs", "seed"])?;
    for r in rows {
        wtr.write_record([
            r.kind.clone(),
            fmt_f64(r.beta),
            r.params.clone(),
            fmt_f64(r.theoretical),
            fmt_f64(r.empirical),
            r.pairs.to_string(),
            r.seed.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
