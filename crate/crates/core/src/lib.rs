//! Utility-cost ratio maximization for multi-user wireless VR delivery.

// `!(x > 0.0)` style checks reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

pub mod fp;
pub mod model;
pub mod rootfind;
pub mod p5;
pub mod optimizer;
pub mod fit;
