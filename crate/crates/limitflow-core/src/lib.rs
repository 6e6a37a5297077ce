//! Soft inductive systems, j-convergence diagnostics and semigroup checkers on
//! finite scale chains.

pub mod inductive;
pub mod linalg;
pub mod report;
pub mod semigroup;

pub use inductive::{
    CoreError, CoreResult, Direction, ElementNet, FunctionalNet, LevelSpace, NormKind,
    ScaleChain, SoftSystem,
};
pub use report::{Tolerances, Verdict};
