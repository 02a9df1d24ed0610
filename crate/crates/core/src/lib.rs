//! Projection-based feasibility operators around the unit sphere, their
//! Lipschitz behaviour away from the origin, and a Kirszbraun-based smoothing
//! that turns a locally Lipschitz operator into a globally Lipschitz one with
//! an ergodic averaging guarantee.
//!
//! The crate is organised bottom-up:
//!
//! * [`space`]: points, balls, seeded samplers.
//! * [`sets`]: set descriptors with projections and reflections.
//! * [`operators`]: Douglas-Rachford, the three-parameter family, iteration.
//! * [`lipschitz`]: closed-form constants and a sampling estimator.
//! * [`kirszbraun`]: the minimax solver and lazy Lipschitz extensions.
//! * [`ergodic`]: the smoothed operator and its approximation/decay checks.
//! * [`experiment`]: JSON-configured runs behind the `feasops` binary.

pub mod ergodic;
pub mod error;
pub mod experiment;
pub mod kirszbraun;
pub mod lipschitz;
pub mod operators;
pub mod output;
pub mod sets;
pub mod space;

pub use error::{Error, Result, Stage};
pub use operators::{DouglasRachford, FamilyOperator, FamilyParams, Identity, Operator, VonNeumann};
pub use sets::{SetDescriptor, SetKind};
pub use space::{Ball, Point, SamplerConfig};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    struct Intro;
    #[doc = include_str!("../../../book/src/operators.md")]
    struct Operators;
    #[doc = include_str!("../../../book/src/lipschitz.md")]
    struct Lipschitz;
    #[doc = include_str!("../../../book/src/kirszbraun.md")]
    struct Kirszbraun;
    #[doc = include_str!("../../../book/src/ergodic.md")]
    struct Ergodic;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
