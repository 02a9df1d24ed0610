//! Pointwise Kirszbraun extension: given `L`-Lipschitz data `a_i -> v_i`,
//! the value at `x` is the deepest point of the balls `B[v_i, L |x - a_i|]`,
//! whose intersection Kirszbraun's theorem guarantees to be nonempty.

mod extension;
mod minimax;

pub use extension::{
    build_f, build_f1, build_f_with, BuildOptions, ExcisedOperator, ExtensionMap, ExtensionSettings,
    LipschitzSample, CONSISTENCY_SLACK, EXCISION_TOL, FEASIBILITY_TOL, MIN_ANCHOR_DISTANCE,
};
pub use minimax::{max_gap, solve_constraints, solve_minimax, Constraint, MinimaxSettings, MinimaxSolution};
