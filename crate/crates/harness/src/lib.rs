//! Scenario generation, baseline policies, parameter sweeps and the
//! command-line front end for the utility-cost ratio solver.

// `!(x > 0.0)` style checks reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod policy;
pub mod scenario;
pub mod sweep;
