//! HJB residuals, Lie point symmetries, invariant reductions and a reduced-PDE
//! solver for optimal consumption and investment with an illiquid asset under
//! exponential utility.
//!
//! The modules build on each other: [`model`] and [`utility`] hold the data,
//! [`hjb`] evaluates the equations, [`symmetry`] and [`reduction`] act on
//! them, [`solver`] solves the admissible reduction and [`montecarlo`] scores
//! the resulting policy. [`verify`] bundles the property suites run by the
//! command-line tool.

pub mod ad;
pub mod error;
pub mod hjb;
pub mod model;
pub mod montecarlo;
pub mod reduction;
pub mod solver;
pub mod symmetry;
pub mod utility;
pub mod verify;

pub use error::{Error, Result};

/// The guide's chapters, compiled so that their snippets run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/hjb.md")]
    mod hjb {}
    #[doc = include_str!("../../../book/src/symmetries.md")]
    mod symmetries {}
    #[doc = include_str!("../../../book/src/reductions.md")]
    mod reductions {}
    #[doc = include_str!("../../../book/src/solver.md")]
    mod solver {}
    #[doc = include_str!("../../../book/src/montecarlo.md")]
    mod montecarlo {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
