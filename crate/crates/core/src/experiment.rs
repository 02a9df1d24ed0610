//! JSON-configured experiment runs behind the `feasops` binary.
//!
//! A run validates its config first and writes nothing when validation
//! fails. Every output file embeds the resolved config and seed: CSV files in
//! `# key: value` header lines, JSON files in `config`/`seed` fields next to
//! the result.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ergodic::{run_pipeline, Pipeline, PipelineConfig, SmoothingPlan};
use crate::kirszbraun::{build_f, LipschitzSample};
use crate::lipschitz::{bounds_table, dr_bound, empirical_lipschitz, write_bounds_csv, Domain, EmpiricalConfig, TableSpec};
use crate::operators::{check_sign_invariance, iterate, DouglasRachford, FamilyParams, Operator, StopReason};
use crate::output::write_atomic;
use crate::sets::{SetDescriptor, SetKind, MEMBERSHIP_TOL};
use crate::space::{sample_annulus, Ball, Point, SamplerConfig};

/// Slack on the empirical Lipschitz check of an extension.
pub const EXTENSION_CHECK_SLACK: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Trajectory,
    LipschitzTable,
    ErgodicDr,
    ErgodicFamily,
    ErgodicVn,
    SignInvariance,
    ExtensionCheck,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Trajectory,
        Command::LipschitzTable,
        Command::ErgodicDr,
        Command::ErgodicFamily,
        Command::ErgodicVn,
        Command::SignInvariance,
        Command::ExtensionCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Trajectory => "trajectory",
            Command::LipschitzTable => "lipschitz-table",
            Command::ErgodicDr => "ergodic-dr",
            Command::ErgodicFamily => "ergodic-family",
            Command::ErgodicVn => "ergodic-vn",
            Command::SignInvariance => "sign-invariance",
            Command::ExtensionCheck => "extension-check",
        }
    }

    fn pipeline(self) -> Option<Pipeline> {
        match self {
            Command::ErgodicDr => Some(Pipeline::DouglasRachford),
            Command::ErgodicFamily => Some(Pipeline::Family),
            Command::ErgodicVn => Some(Pipeline::VonNeumann),
            _ => None,
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Command::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| {
            let names: Vec<_> = Command::ALL.iter().map(|c| c.name()).collect();
            format!("unknown command {s:?}; expected one of {}", names.join(", "))
        })
    }
}

/// Flat experiment description. Every field has a default, so `{}` is a
/// valid config for most commands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Optional in the file; the command line supplies it otherwise.
    pub command: Option<Command>,
    pub dim: usize,
    /// Height of the line `L_lambda`, used when `set` is absent.
    pub lambda: f64,
    /// The convex set `C`; defaults to `L_lambda`.
    pub set: Option<SetDescriptor>,
    pub beta: f64,
    pub alpha: f64,
    pub r: f64,
    /// A point of `S ∩ C`; defaults to `(sqrt(1 - lambda^2), lambda, 0, ...)`
    /// for a line.
    pub x0: Option<Vec<f64>>,
    /// Anchor of the smoothing; defaults to `x0`.
    pub theta: Option<Vec<f64>>,
    pub family: FamilyParams,
    pub seed: u64,
    pub samples: usize,
    pub anchors: usize,
    pub decay_samples: usize,
    pub n_max: usize,
    pub pairs: usize,
    pub betas: Vec<f64>,
    /// Outer radius of the annulus in the bounds table.
    pub radius: f64,
    pub start: Option<Vec<f64>>,
    pub max_n: usize,
    pub conv_tol: f64,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            command: None,
            dim: 2,
            lambda: 0.5,
            set: None,
            beta: 0.5,
            alpha: 0.9,
            r: 4.0,
            x0: None,
            theta: None,
            family: FamilyParams::DR,
            seed: 0,
            samples: 10_000,
            anchors: 512,
            decay_samples: 200,
            n_max: 60,
            pairs: 10_000,
            betas: vec![0.1, 0.5, 0.9],
            radius: 3.0,
            start: None,
            max_n: 5_000,
            conv_tol: 1e-12,
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// The set `C`: `set` if given, else the line `L_lambda`.
    pub fn convex_set(&self) -> Result<SetDescriptor> {
        match &self.set {
            Some(s) => Ok(s.clone()),
            None => SetDescriptor::line(self.lambda, self.dim),
        }
    }

    pub fn x0_point(&self) -> Result<Point> {
        match &self.x0 {
            Some(c) => Point::new(c.clone()),
            None => {
                let lambda = match self.set.as_ref().map(|s| s.kind()) {
                    None => self.lambda,
                    Some(SetKind::Line { lambda }) => *lambda,
                    Some(_) => return Err(Error::InvalidParameter("x0 is required unless C is a line".into())),
                };
                Point::padded(&[(1.0 - lambda * lambda).max(0.0).sqrt(), lambda], self.dim)
            }
        }
    }

    pub fn plan(&self) -> Result<SmoothingPlan> {
        let mut plan = SmoothingPlan::new(self.beta, self.alpha, self.r, self.x0_point()?, self.family);
        if let Some(t) = &self.theta {
            plan.theta = Point::new(t.clone())?;
        }
        Ok(plan)
    }

    fn start_point(&self) -> Result<Point> {
        match &self.start {
            Some(c) => Point::new(c.clone()),
            None => Point::padded(&[3.0, 4.0], self.dim),
        }
    }

    fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            seed: self.seed,
            anchors: self.anchors,
            samples: self.samples,
            decay_samples: self.decay_samples,
            n_max: self.n_max,
        }
    }
}

/// Every failed precondition for running `command` with `cfg`. Empty iff the
/// run may proceed.
pub fn validate(command: Command, cfg: &ExperimentConfig) -> Vec<String> {
    let mut out = Vec::new();
    if let Some(c) = cfg.command {
        if c != command {
            out.push(format!("command: config says {c}, invoked as {command}"));
        }
    }
    if cfg.dim < 2 {
        out.push(format!("dim ≥ 2: {} < 2", cfg.dim));
        return out;
    }
    let c = match cfg.convex_set() {
        Ok(c) => c,
        Err(e) => {
            out.push(format!("set: {e}"));
            return out;
        }
    };
    if c.dim() != cfg.dim {
        out.push(format!("dim C = dim: {} vs {}", c.dim(), cfg.dim));
        return out;
    }
    let positive = |out: &mut Vec<String>, name: &str, v: usize| {
        if v == 0 {
            out.push(format!("{name} > 0: {name} = 0"));
        }
    };
    match command {
        Command::Trajectory => {
            match cfg.start_point() {
                Ok(s) if s.dim() != cfg.dim => out.push(format!("dim start = dim: {} vs {}", s.dim(), cfg.dim)),
                Ok(_) => {}
                Err(e) => out.push(format!("start: {e}")),
            }
            positive(&mut out, "max_n", cfg.max_n);
            if !(cfg.conv_tol >= 0.0) {
                out.push(format!("conv_tol ≥ 0: conv_tol = {}", cfg.conv_tol));
            }
        }
        Command::LipschitzTable => {
            if cfg.betas.is_empty() {
                out.push("betas nonempty: got []".into());
            }
            for b in &cfg.betas {
                if !(0.0..1.0).contains(b) {
                    out.push(format!("0 ≤ β < 1: β = {b}"));
                }
                if !(cfg.radius > 1.0 - b) {
                    out.push(format!("radius > 1−β: {} ≤ {}", cfg.radius, 1.0 - b));
                }
            }
            positive(&mut out, "pairs", cfg.pairs);
        }
        Command::ErgodicDr | Command::ErgodicFamily | Command::ErgodicVn => {
            match cfg.plan() {
                Ok(plan) => out.extend(plan.violations(command.pipeline().expect("ergodic command"), &c)),
                Err(e) => out.push(format!("x0: {e}")),
            }
            positive(&mut out, "samples", cfg.samples);
            positive(&mut out, "anchors", cfg.anchors);
            positive(&mut out, "decay_samples", cfg.decay_samples);
            positive(&mut out, "n_max", cfg.n_max);
        }
        Command::SignInvariance => {
            if cfg.set.is_some() {
                out.push("set: sign-invariance uses the line L_lambda only".into());
            }
            if cfg.lambda.abs() > 1.0 {
                out.push(format!("|λ| ≤ 1: λ = {}", cfg.lambda));
            }
            positive(&mut out, "samples", cfg.samples);
        }
        Command::ExtensionCheck => {
            if !(0.0..1.0).contains(&cfg.beta) {
                out.push(format!("0 ≤ β < 1: β = {}", cfg.beta));
            }
            if !(cfg.r > 0.0) {
                out.push(format!("r > 0: r = {}", cfg.r));
            }
            match cfg.x0_point() {
                Ok(x0) if x0.dim() != cfg.dim => out.push(format!("dim x0 = dim: {} vs {}", x0.dim(), cfg.dim)),
                Ok(x0) => {
                    let gap = (x0.norm() - 1.0).abs().max(c.distance(&x0).unwrap_or(f64::INFINITY));
                    if gap > MEMBERSHIP_TOL {
                        out.push(format!("x0 ∈ S∩C: distance {gap}"));
                    }
                }
                Err(e) => out.push(format!("x0: {e}")),
            }
            if !c.is_convex() {
                out.push(format!("C convex: {c} is not"));
            }
            positive(&mut out, "anchors", cfg.anchors);
            positive(&mut out, "samples", cfg.samples);
            positive(&mut out, "pairs", cfg.pairs);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Pass,
    /// An inequality that should hold was violated on the samples.
    BoundViolation,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub status: Status,
    pub files: Vec<PathBuf>,
    pub summary: String,
}

#[derive(Debug)]
pub enum RunError {
    Validation(Vec<String>),
    /// The run failed midway. `files` lists outputs already written; an
    /// `error.json` flagging them is written next to them when possible.
    Runtime { error: Error, files: Vec<PathBuf> },
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Validation(v) => write!(f, "invalid config:\n  {}", v.join("\n  ")),
            RunError::Runtime { error, .. } => write!(f, "run failed: {error}"),
        }
    }
}

impl std::error::Error for RunError {}

/// Process exit code for a run result: 0 pass, 1 validation failure,
/// 2 runtime failure, 3 bound violation.
pub fn exit_code(result: &Result<RunOutcome, RunError>) -> i32 {
    match result {
        Ok(RunOutcome { status: Status::Pass, .. }) => 0,
        Ok(RunOutcome { status: Status::BoundViolation, .. }) => 3,
        Err(RunError::Validation(_)) => 1,
        Err(RunError::Runtime { .. }) => 2,
    }
}

struct Writer<'a> {
    dir: &'a Path,
    config_json: String,
    seed: u64,
    files: Vec<PathBuf>,
}

impl Writer<'_> {
    fn metadata(&self) -> Vec<(&'static str, String)> {
        vec![("config", self.config_json.clone()), ("seed", self.seed.to_string())]
    }

    fn csv(&mut self, name: &str, body: impl FnOnce(&mut Vec<u8>, &[(&str, String)]) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        body(&mut buf, &self.metadata())?;
        self.put(name, &buf)
    }

    fn json<T: Serialize>(&mut self, name: &str, result: &T) -> Result<()> {
        let config: serde_json::Value = serde_json::from_str(&self.config_json)?;
        let doc = serde_json::json!({ "config": config, "seed": self.seed, "result": result });
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        self.put(name, text.as_bytes())
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes)?;
        self.files.push(path);
        Ok(())
    }
}

/// Validates, then runs `command`, writing into `cfg.out_dir` (default `.`).
pub fn run(command: Command, cfg: &ExperimentConfig) -> Result<RunOutcome, RunError> {
    let violations = validate(command, cfg);
    if !violations.is_empty() {
        return Err(RunError::Validation(violations));
    }
    let mut resolved = cfg.clone();
    resolved.command = Some(command);
    let dir = resolved.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    let config_json = serde_json::to_string(&resolved).expect("config serializes");
    let mut w = Writer { dir: &dir, config_json, seed: resolved.seed, files: Vec::new() };
    let result = std::fs::create_dir_all(&dir).map_err(Error::from).and_then(|_| execute(command, &resolved, &mut w));
    match result {
        Ok((status, summary)) => Ok(RunOutcome { status, files: w.files, summary }),
        Err(error) => {
            let files = w.files.clone();
            let partial: Vec<String> = files.iter().map(|p| p.display().to_string()).collect();
            let note = serde_json::json!({ "error": error.to_string(), "partial_files": partial });
            // Best effort: the directory itself may be what failed.
            let _ = w.json("error.json", &note);
            Err(RunError::Runtime { error, files })
        }
    }
}

fn verdict(ok: bool) -> Status {
    if ok {
        Status::Pass
    } else {
        Status::BoundViolation
    }
}

fn execute(command: Command, cfg: &ExperimentConfig, w: &mut Writer) -> Result<(Status, String)> {
    let c = cfg.convex_set()?;
    match command {
        Command::Trajectory => {
            let op = DouglasRachford::sphere_first(c);
            let trace = iterate(&op, &cfg.start_point()?, cfg.max_n, cfg.conv_tol)?;
            w.csv("trajectory.csv", |buf, meta| trace.write_csv(buf, meta))?;
            let reason = match trace.stop_reason {
                StopReason::MaxIter => "max_iter".to_string(),
                StopReason::Converged { tol } => format!("converged (tol {tol:e})"),
                StopReason::ProjectionUndefined => "projection undefined".to_string(),
            };
            Ok((Status::Pass, format!("{} steps, {reason}, last {:?}", trace.steps(), trace.last().coords())))
        }
        Command::LipschitzTable => {
            let spec = TableSpec {
                betas: cfg.betas.clone(),
                set: c,
                family: cfg.family,
                pairs: cfg.pairs,
                seed: cfg.seed,
                radius: cfg.radius,
            };
            let rows = bounds_table(&spec)?;
            w.csv("bounds.csv", |buf, meta| write_bounds_csv(&rows, buf, meta))?;
            let bad: Vec<String> = rows
                .iter()
                .filter(|r| r.violated())
                .map(|r| format!("{} β={} ({} > {})", r.kind, r.beta, r.empirical, r.theoretical))
                .collect();
            let summary = if bad.is_empty() {
                format!("{} rows, all within bound", rows.len())
            } else {
                format!("{} of {} rows exceed their bound: {}", bad.len(), rows.len(), bad.join("; "))
            };
            Ok((verdict(bad.is_empty()), summary))
        }
        Command::ErgodicDr | Command::ErgodicFamily | Command::ErgodicVn => {
            let pipeline = command.pipeline().expect("ergodic command");
            let report = run_pipeline(pipeline, &c, &cfg.plan()?, &cfg.pipeline_config())?;
            w.csv("decay.csv", |buf, meta| report.decay.write_csv(buf, meta))?;
            w.json("report.json", &report)?;
            let summary = format!(
                "approx sup {:.6} (bound {}), decay {} iterates, pass = {}",
                report.approx_sup,
                report.approx_bound,
                report.decay.points.len(),
                report.pass
            );
            Ok((verdict(report.pass), summary))
        }
        Command::SignInvariance => {
            let report = check_sign_invariance(cfg.lambda, cfg.dim, SamplerConfig::new(cfg.seed, cfg.samples))?;
            w.json("sign_invariance.json", &report)?;
            let summary = format!(
                "{} samples, {} sign changes, {} zero-start escapes",
                report.samples,
                report.violations.len(),
                report.zero_violations
            );
            Ok((verdict(report.passed()), summary))
        }
        Command::ExtensionCheck => {
            let report = extension_check(cfg, &c)?;
            w.csv("anchors.csv", |buf, meta| report.1.write_csv(buf, meta))?;
            w.json("extension.json", &report.0)?;
            let r = &report.0;
            let summary = format!(
                "empirical {:.6} vs bound {} (+{EXTENSION_CHECK_SLACK}), {} mismatches with T outside",
                r.empirical, r.bound, r.outside_mismatches
            );
            Ok((verdict(r.pass), summary))
        }
    }
}

#[derive(Clone, Debug, Serialize)]
struct ExtensionCheckReport {
    bound: f64,
    empirical: f64,
    slack: f64,
    outside_samples: usize,
    /// Outside points where `F` and `T` differ in any bit.
    outside_mismatches: usize,
    initial_anchors: usize,
    final_anchors: usize,
    pass: bool,
}

fn extension_check(cfg: &ExperimentConfig, c: &SetDescriptor) -> Result<(ExtensionCheckReport, LipschitzSample)> {
    let x0 = cfg.x0_point()?;
    let region = Ball::closed(x0, cfg.r)?;
    let base = SamplerConfig::new(cfg.seed, 0);
    let f = build_f(c, cfg.beta, FamilyParams::DR, base.derive(1, cfg.anchors), &region)?;
    let initial_anchors = f.extension().len();
    let t = DouglasRachford::sphere_first(c.clone());
    let outside = sample_annulus(&region, 1.0 - cfg.beta, base.derive(2, cfg.samples));
    // The region may sit entirely inside B(0, 1 - beta); then nothing to compare.
    let outside = match outside {
        Ok(v) => v,
        Err(Error::EmptyRegion(_)) => Vec::new(),
        Err(e) => return Err(e),
    };
    let mut mismatches = 0;
    for x in &outside {
        if f.apply(x)? != t.apply(x)? {
            mismatches += 1;
        }
    }
    let est = empirical_lipschitz(&f, &Domain::Ball { ball: region }, &EmpiricalConfig::random(cfg.pairs, base.derive(3, 0).seed))?;
    let bound = dr_bound(cfg.beta)?.value;
    let pass = mismatches == 0 && est.skipped == 0 && est.sup_ratio <= bound + EXTENSION_CHECK_SLACK;
    let sample = f.extension().snapshot();
    sample.check_consistency()?;
    Ok((
        ExtensionCheckReport {
            bound,
            empirical: est.sup_ratio,
            slack: EXTENSION_CHECK_SLACK,
            outside_samples: outside.len(),
            outside_mismatches: mismatches,
            initial_anchors,
            final_anchors: sample.len(),
            pass,
        },
        sample,
    ))
}
