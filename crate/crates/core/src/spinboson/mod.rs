//! Generalized spin-boson models with finitely many boson modes.

mod bounds;
mod exact;
mod fk;
mod model;

pub use bounds::*;
pub use exact::*;
pub use fk::*;
pub use model::*;
