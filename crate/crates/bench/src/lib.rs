//! Shared inputs for the criterion benches.

use renewal_spectra::measure::fixtures::{atom_plus_uniform, exponential, two_atom};
use renewal_spectra::ProbabilityMeasure;

/// Named measures covering purely atomic, mixed and atomless cases.
pub fn measures() -> Vec<(&'static str, ProbabilityMeasure)> {
    vec![
        ("two-atom", two_atom(0.5, 1.0)),
        ("atom+uniform", atom_plus_uniform(0.5, 1.0, 2.0)),
        ("exponential", exponential(1.0)),
    ]
}
