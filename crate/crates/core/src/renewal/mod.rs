//! Renewal transform of a measure realized as an M/G/∞ queue, and the
//! identities linking its cycle statistics back to the measure.

mod analysis;
mod sim;
mod transform;

pub use analysis::*;
pub use sim::*;
pub use transform::*;
