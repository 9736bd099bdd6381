//! Numerical laboratory for multicritical circle maps: arbitrary-precision
//! lifts, combinatorial tuning, dynamical partitions and distortion tools.

pub mod arithmetic;
pub mod circlemap;
pub mod distortion;
pub mod error;
pub mod experiments;
pub mod numerics;
pub mod partition;
pub mod rotation;
pub mod svg;

pub use error::{Error, Result};
pub use numerics::{CirclePoint, CircleInterval, PrecisionContext, Real};
