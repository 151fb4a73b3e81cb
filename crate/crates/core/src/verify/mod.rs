//! Certified bounds for `g(f(x)) - μ(x)` over hyperrectangles and the
//! multi-resolution refinement driver built on them.

mod bounds;
mod engine;
mod problem;

pub use bounds::{cell_bounds, certified_min, certified_range, local_lipschitz, CellBounds};
pub use engine::{
    initial_grid_counts, lipschitz_envelope, run_analysis, CellEval, CellResult, CellStatus,
    LipschitzEnvelope, VerificationReport, WaveStats,
};
pub use problem::{Exclusion, Image, MapFn, Observable, ProblemSpec, ScalarFn, StateMap, TargetBound};

pub use crate::rect::Hyperrectangle;
