//! Smoothing `G = (1 - gamma) F + gamma theta` of a Lipschitz map `F` and the
//! three pipelines that build `F` from a feasibility operator around the
//! sphere, then measure how far `G` is from the operator and how fast its
//! iterates coalesce.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kirszbraun::{build_f, build_f1, ExcisedOperator};
use crate::lipschitz::{dr_bound, family_bound};
use crate::operators::{FamilyOperator, FamilyParams, Operator, VonNeumann};
use crate::output::{fmt_f64, write_csv_header};
use crate::sets::{SetDescriptor, MEMBERSHIP_TOL};
use crate::space::{sample_annulus, sample_ball, sample_sphere, Ball, Point, SamplerConfig};

/// Added to the approximation bound wherever an extension value is compared.
pub const EXTENSION_SLACK: f64 = 1e-3;
/// Added to closed-form comparisons.
pub const REPORT_SLACK: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    /// `T = T_{S,C}`, constant `1/(1 - beta)`.
    DouglasRachford,
    /// `T = T^{s}_{S,C}`, constant `kappa(s, beta)`.
    Family,
    /// `T = P_C P_S`, constant `1/(1 - beta)`, only `r >= 2` needed.
    VonNeumann,
}

impl std::fmt::Display for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Pipeline::DouglasRachford => "douglas_rachford",
            Pipeline::Family => "family",
            Pipeline::VonNeumann => "von_neumann",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingPlan {
    pub beta: f64,
    pub alpha: f64,
    pub r: f64,
    pub x0: Point,
    pub theta: Point,
    pub family: FamilyParams,
}

impl SmoothingPlan {
    /// Plan with `theta = x0`.
    pub fn new(beta: f64, alpha: f64, r: f64, x0: Point, family: FamilyParams) -> Self {
        SmoothingPlan { beta, alpha, r, theta: x0.clone(), x0, family }
    }

    /// Lipschitz constant of `F` for the pipeline.
    pub fn lipschitz(&self, pipeline: Pipeline) -> Result<f64> {
        Ok(match pipeline {
            Pipeline::DouglasRachford | Pipeline::VonNeumann => dr_bound(self.beta)?.value,
            Pipeline::Family => family_bound(self.family, self.beta)?.value,
        })
    }

    /// `1 - alpha / L`.
    pub fn gamma(&self, pipeline: Pipeline) -> Result<f64> {
        Ok(1.0 - self.alpha / self.lipschitz(pipeline)?)
    }

    /// `sup |Gx - Tx|` allowed by the pipeline's guarantee.
    pub fn approx_bound(&self, pipeline: Pipeline) -> Result<f64> {
        Ok(match pipeline {
            Pipeline::DouglasRachford | Pipeline::VonNeumann => 2.0 * self.r * (1.0 - self.alpha * (1.0 - self.beta)),
            Pipeline::Family => 2.0 * self.r * (1.0 - self.alpha / self.lipschitz(pipeline)?),
        })
    }

    /// Each failed hypothesis as "inequality: lhs op rhs".
    pub fn violations(&self, pipeline: Pipeline, c: &SetDescriptor) -> Vec<String> {
        let mut out = Vec::new();
        let (b, a, r) = (self.beta, self.alpha, self.r);
        if !(0.0..1.0).contains(&b) {
            out.push(format!("0 ≤ β < 1: β = {b}"));
            return out;
        }
        if !(a >= 0.0 && a.is_finite()) {
            out.push(format!("α ≥ 0: α = {a}"));
        }
        match pipeline {
            Pipeline::DouglasRachford => {
                let need = 2.0 / (1.0 - b);
                if !(r >= need) {
                    out.push(format!("r ≥ 2/(1−β): {r} < {need}"));
                }
                let l = 1.0 / (1.0 - b);
                if a > l {
                    out.push(format!("α ≤ 1/(1−β): {a} > {l}"));
                }
            }
            Pipeline::Family => match family_bound(self.family, b) {
                Ok(k) => {
                    let need = 2.0 * k.value;
                    if !(r >= need) {
                        out.push(format!("r ≥ 2κ: {r} < {need}"));
                    }
                    if a > k.value {
                        out.push(format!("α ≤ κ: {a} > {}", k.value));
                    }
                }
                Err(Error::NonPositiveBound { value, .. }) => out.push(format!("κ > 0: κ = {value}")),
                Err(e) => out.push(e.to_string()),
            },
            Pipeline::VonNeumann => {
                if !(r >= 2.0) {
                    out.push(format!("r ≥ 2: {r} < 2"));
                }
                let l = 1.0 / (1.0 - b);
                if a > l {
                    out.push(format!("α ≤ 1/(1−β): {a} > {l}"));
                }
            }
        }
        if !c.is_convex() {
            out.push(format!("C convex: {c} is not"));
        }
        if self.x0.dim() != c.dim() || self.theta.dim() != c.dim() {
            out.push(format!("dim x0 = dim θ = dim C: {}, {} vs {}", self.x0.dim(), self.theta.dim(), c.dim()));
            return out;
        }
        let sphere_gap = (self.x0.norm() - 1.0).abs();
        let set_gap = c.distance(&self.x0).unwrap_or(f64::INFINITY);
        if sphere_gap.max(set_gap) > MEMBERSHIP_TOL {
            out.push(format!("x0 ∈ S∩C: distance {}", sphere_gap.max(set_gap)));
        }
        let theta_gap = self.theta.distance(&self.x0);
        if theta_gap > r {
            out.push(format!("θ ∈ B[x0,r]: |θ − x0| = {theta_gap} > {r}"));
        }
        out
    }

    pub fn validate(&self, pipeline: Pipeline, c: &SetDescriptor) -> Result<()> {
        let v = self.violations(pipeline, c);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidPlan(v))
        }
    }
}

/// `G x = (1 - gamma) F x + gamma theta`.
#[derive(Debug)]
pub struct Smoothed<F> {
    pub inner: F,
    pub gamma: f64,
    pub theta: Point,
}

impl<F: Operator> Smoothed<F> {
    pub fn new(inner: F, gamma: f64, theta: Point) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidParameter(format!("γ = {gamma} must lie in [0, 1]")));
        }
        Ok(Smoothed { inner, gamma, theta })
    }
}

impl<F: Operator> Operator for Smoothed<F> {
    fn apply(&self, x: &Point) -> Result<Point> {
        if self.gamma == 1.0 {
            return Ok(self.theta.clone());
        }
        Ok(self.inner.apply(x)?.combine(1.0 - self.gamma, &self.theta, self.gamma))
    }

    fn prepare(&self, points: &[Point]) {
        self.inner.prepare(points);
    }
}

/// Smooths `f` (with constant `lipschitz`) to constant `plan.alpha`.
pub fn smooth<F: Operator>(f: F, lipschitz: f64, plan: &SmoothingPlan) -> Result<Smoothed<F>> {
    if plan.alpha > lipschitz {
        return Err(Error::AlphaExceedsLipschitz { alpha: plan.alpha, lipschitz });
    }
    if !(plan.alpha >= 0.0 && lipschitz > 0.0) {
        return Err(Error::InvalidParameter(format!("need α ≥ 0 and L > 0, got α = {}, L = {lipschitz}", plan.alpha)));
    }
    Smoothed::new(f, 1.0 - plan.alpha / lipschitz, plan.theta.clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayPoint {
    pub n: usize,
    /// `sup |G^n x - G^n y|` over the sampled pairs.
    pub observed: f64,
    /// `2 r alpha^n`.
    pub bound: f64,
    /// `sup |G^n x - G^n y| / |x - y|`.
    pub max_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    pub points: Vec<DecayPoint>,
    pub samples: usize,
    pub pairs: usize,
    /// Set when an evaluation failed; `points` then stops early.
    pub aborted: Option<String>,
}

impl DecayCurve {
    pub fn holds(&self, slack: f64) -> bool {
        self.aborted.is_none() && self.points.iter().all(|p| p.observed <= p.bound + slack)
    }

    pub fn write_csv<W: Write>(&self, mut out: W, metadata: &[(&str, String)]) -> Result<()> {
        write_csv_header(&mut out, metadata)?;
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["n", "observed", "bound"])?;
        for p in &self.points {
            wtr.write_record([p.n.to_string(), fmt_f64(p.observed), fmt_f64(p.bound)])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Iterates `g` from `cfg.count` points of `region` and records, for
/// `n = 1..=n_max`, the largest distance between any two orbits.
pub fn verify_decay(g: &dyn Operator, region: &Ball, alpha: f64, r: f64, n_max: usize, cfg: SamplerConfig) -> Result<DecayCurve> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidParameter(format!("decay check needs α > 0, got {alpha}")));
    }
    let mut current = sample_ball(region, cfg)?;
    let m = current.len();
    let starts = current.clone();
    let gaps: Vec<f64> = pairs(m).map(|(i, j)| starts[i].distance(&starts[j])).collect();
    let mut curve = DecayCurve { points: Vec::new(), samples: m, pairs: gaps.len(), aborted: None };
    for n in 1..=n_max {
        let next: Result<Vec<Point>> = current.iter().map(|x| g.apply(x)).collect();
        match next {
            Ok(v) => current = v,
            Err(e) => {
                curve.aborted = Some(format!("n = {n}: {e}"));
                break;
            }
        }
        let (mut observed, mut max_ratio) = (0.0f64, 0.0f64);
        for ((i, j), gap) in pairs(m).zip(&gaps) {
            let d = current[i].distance(&current[j]);
            observed = observed.max(d);
            if *gap > 0.0 {
                max_ratio = max_ratio.max(d / gap);
            }
        }
        curve.points.push(DecayPoint { n, observed, bound: 2.0 * r * alpha.powi(n as i32), max_ratio });
    }
    Ok(curve)
}

fn pairs(m: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..m).flat_map(move |i| (i + 1..m).map(move |j| (i, j)))
}

/// Sample sizes and seed of a pipeline run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Anchors of the extension.
    pub anchors: usize,
    /// Points for the approximation sup and the inclusion check.
    pub samples: usize,
    /// Orbits for the decay check; all pairs among them are compared.
    pub decay_samples: usize,
    pub n_max: usize,
}

impl PipelineConfig {
    pub fn new(seed: u64) -> Self {
        PipelineConfig { seed, anchors: 512, samples: 10_000, decay_samples: 200, n_max: 60 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErgodicReport {
    pub pipeline: Pipeline,
    pub set: SetDescriptor,
    pub plan: SmoothingPlan,
    pub config: PipelineConfig,
    pub lipschitz: f64,
    pub gamma: f64,
    pub approx_sup: f64,
    pub approx_bound: f64,
    /// Slack used in the approximation comparison.
    pub approx_slack: f64,
    pub approx_samples: usize,
    /// `sup |F x - x0|` over samples of `B[x0, r]`; at most `r` when `F` maps the ball into itself.
    pub inclusion_sup: f64,
    /// `sup |P_C P_S x - P_C P_S x0|` (von Neumann pipeline only), at most 2.
    pub projection_spread: Option<f64>,
    pub fixed_point_residual: f64,
    pub decay: DecayCurve,
    pub pass: bool,
}

impl ErgodicReport {
    pub fn inclusion_holds(&self) -> bool {
        self.inclusion_sup <= self.plan.r + REPORT_SLACK
    }

    pub fn approx_holds(&self) -> bool {
        self.approx_sup <= self.approx_bound + self.approx_slack
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// The map `F` and the operator `T` it agrees with away from the origin.
pub struct PipelineMaps {
    pub f: ExcisedOperator,
    pub t: Box<dyn Operator + Send>,
    pub lipschitz: f64,
}

/// Builds `F` and `T` for a validated plan.
pub fn pipeline_maps(pipeline: Pipeline, c: &SetDescriptor, plan: &SmoothingPlan, cfg: &PipelineConfig) -> Result<PipelineMaps> {
    plan.validate(pipeline, c)?;
    let lipschitz = plan.lipschitz(pipeline)?;
    let anchors = SamplerConfig::new(cfg.seed, 0).derive(1, cfg.anchors);
    let region = Ball::closed(plan.x0.clone(), plan.r)?;
    let (f, t): (ExcisedOperator, Box<dyn Operator + Send>) = match pipeline {
        Pipeline::DouglasRachford | Pipeline::Family => {
            let p = if pipeline == Pipeline::DouglasRachford { FamilyParams::DR } else { plan.family };
            (build_f(c, plan.beta, p, anchors, &region)?, Box::new(FamilyOperator::sphere_first(p, c.clone())))
        }
        Pipeline::VonNeumann => (
            build_f1(c, plan.beta, &plan.x0, plan.r, anchors)?,
            Box::new(VonNeumann { c: c.clone() }),
        ),
    };
    Ok(PipelineMaps { f, t, lipschitz })
}

/// Uniform points of `domain` plus points on its inner and outer spheres.
fn approx_points(pipeline: Pipeline, plan: &SmoothingPlan, cfg: SamplerConfig) -> Result<Vec<Point>> {
    let region = Ball::closed(plan.x0.clone(), plan.r)?;
    let rho = 1.0 - plan.beta;
    let edge = cfg.count / 10;
    let bulk = cfg.count - 2 * edge;
    let mut points = match pipeline {
        Pipeline::VonNeumann => sample_ball(&region, cfg.derive(1, bulk))?,
        _ => sample_annulus(&region, rho, cfg.derive(1, bulk))?,
    };
    let zero = Point::zeros(plan.x0.dim());
    points.extend(sample_sphere(&zero, rho, cfg.derive(2, edge)).into_iter().filter(|x| region.contains(x)));
    points.extend(
        sample_sphere(&plan.x0, plan.r, cfg.derive(3, edge))
            .into_iter()
            .filter(|x| pipeline == Pipeline::VonNeumann || x.norm() >= rho),
    );
    points.retain(|x| x.norm() > 0.0);
    Ok(points)
}

/// Runs a pipeline end to end. The plan is validated before anything else.
pub fn run_pipeline(pipeline: Pipeline, c: &SetDescriptor, plan: &SmoothingPlan, cfg: &PipelineConfig) -> Result<ErgodicReport> {
    let PipelineMaps { f, t, lipschitz } = pipeline_maps(pipeline, c, plan, cfg)?;
    let base = SamplerConfig::new(cfg.seed, 0);
    let region = Ball::closed(plan.x0.clone(), plan.r)?;

    let mut inclusion_sup = 0.0f64;
    let mut projection_spread = None;
    let t_x0 = t.apply(&plan.x0)?;
    for x in sample_ball(&region, base.derive(2, cfg.samples))? {
        inclusion_sup = inclusion_sup.max(f.apply(&x)?.distance(&plan.x0));
        if pipeline == Pipeline::VonNeumann && x.norm() > 0.0 {
            let spread = t.apply(&x)?.distance(&t_x0);
            projection_spread = Some(projection_spread.map_or(spread, |s: f64| s.max(spread)));
        }
    }

    let g = smooth(f, lipschitz, plan)?;
    let mut approx_sup = 0.0f64;
    let mut used_extension = false;
    let points = approx_points(pipeline, plan, base.derive(3, cfg.samples))?;
    for x in &points {
        used_extension |= !g.inner.is_outside(x);
        approx_sup = approx_sup.max(g.apply(x)?.distance(&t.apply(x)?));
    }
    let fixed_point_residual = g.apply(&plan.x0)?.distance(&plan.x0);
    let decay = verify_decay(&g, &region, plan.alpha, plan.r, cfg.n_max, base.derive(4, cfg.decay_samples))?;

    let approx_bound = plan.approx_bound(pipeline)?;
    let approx_slack = if used_extension { EXTENSION_SLACK } else { REPORT_SLACK };
    let pass = approx_sup <= approx_bound + approx_slack && decay.holds(REPORT_SLACK);
    Ok(ErgodicReport {
        pipeline,
        set: c.clone(),
        plan: plan.clone(),
        config: *cfg,
        lipschitz,
        gamma: g.gamma,
        approx_sup,
        approx_bound,
        approx_slack,
        approx_samples: points.len(),
        inclusion_sup,
        projection_spread,
        fixed_point_residual,
        decay,
        pass,
    })
}

pub fn run_pipeline_dr(c: &SetDescriptor, plan: &SmoothingPlan, cfg: &PipelineConfig) -> Result<ErgodicReport> {
    run_pipeline(Pipeline::DouglasRachford, c, plan, cfg)
}

pub fn run_pipeline_family(c: &SetDescriptor, plan: &SmoothingPlan, cfg: &PipelineConfig) -> Result<ErgodicReport> {
    run_pipeline(Pipeline::Family, c, plan, cfg)
}

pub fn run_pipeline_vn(c: &SetDescriptor, plan: &SmoothingPlan, cfg: &PipelineConfig) -> Result<ErgodicReport> {
    run_pipeline(Pipeline::VonNeumann, c, plan, cfg)
}
