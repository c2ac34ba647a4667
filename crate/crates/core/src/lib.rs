//! Comparison-geometry toolkit for finite sampled metric spaces.
//!
//! Strainers, regular points of extremal subsets, distance-map charts,
//! Hausdorff measure and dimension estimates, gradient flows and the gluing
//! of local charts into global projections, all evaluated on model spaces
//! with known ground truth.

// `!(x > 0.0)` guards deliberately reject NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod charts;
pub mod cli;
pub mod error;
pub mod flow;
pub mod glue;
pub mod io;
pub mod kplane;
pub mod models;
pub mod space;
pub mod strainers;

pub use error::{Error, Result};
