use std::fmt;

/// Which projection inside a composed operator failed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// A bare projection or reflection.
    Direct,
    /// The first set applied by an operator (`A` in `T_{A,B}`).
    Inner,
    /// The second set applied by an operator (`B` in `T_{A,B}`).
    Outer,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Direct => "direct",
            Stage::Inner => "inner",
            Stage::Outer => "outer",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("point must have at least one coordinate")]
    EmptyPoint,

    #[error("non-finite coordinate {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("operation needs at least one point")]
    EmptyPointSet,

    #[error("invalid ball: {0}")]
    InvalidBall(String),

    #[error("sampling region is empty: {0}")]
    EmptyRegion(String),

    #[error("rejection sampling acceptance below 1e-6 (no hit in {attempts} draws)")]
    LowAcceptance { attempts: u64 },

    #[error("invalid set: {0}")]
    InvalidSet(String),

    #[error("projection onto {set} is multi-valued at the origin ({stage} stage)")]
    MultiValuedProjection { set: String, stage: Stage },

    #[error("sphere and line L_{lambda} do not intersect")]
    EmptyIntersection { lambda: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("bound undefined for beta = {beta} (needs 0 <= beta < 1)")]
    BoundUndefined { beta: f64 },

    #[error("closed-form constant is not positive ({value}) for beta = {beta}")]
    NonPositiveBound { beta: f64, value: f64 },

    #[error(
        "sample inconsistent with L = {lipschitz}: pair ({i}, {j}) has ratio {ratio} \
         (value gap {value_gap}, anchor gap {anchor_gap})"
    )]
    InconsistentSample {
        i: usize,
        j: usize,
        ratio: f64,
        lipschitz: f64,
        value_gap: f64,
        anchor_gap: f64,
    },

    #[error("extension infeasible: best max-gap {achieved} exceeds tolerance {tolerance}")]
    InfeasibleExtension { achieved: f64, tolerance: f64 },

    #[error("smoothing needs alpha <= L, got alpha = {alpha}, L = {lipschitz}")]
    AlphaExceedsLipschitz { alpha: f64, lipschitz: f64 },

    #[error("plan violates preconditions: {}", .0.join("; "))]
    InvalidPlan(Vec<String>),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Tags a projection failure with the stage of the composed operator it
    /// happened in. Other errors pass through untouched.
    pub(crate) fn at_stage(self, stage: Stage) -> Self {
        match self {
            Error::MultiValuedProjection { set, .. } => Error::MultiValuedProjection { set, stage },
            other => other,
        }
    }

    pub fn is_projection_failure(&self) -> bool {
        matches!(self, Error::MultiValuedProjection { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
