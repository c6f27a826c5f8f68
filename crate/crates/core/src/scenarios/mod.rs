//! Concrete models and OCP builders.

use serde::{Deserialize, Serialize};

use crate::logic::LogicMode;

pub mod docking;
pub mod pdg;
pub mod polytope;
pub mod ugv;

pub use polytope::{load_polytopes, pyramid_regions, save_polytopes, Polytope, PolytopeDim};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    /// Binary indicators with big-M rows.
    Minlp,
    /// Continuous indicators with vanishing product rows.
    Mpvc,
}

impl Formulation {
    pub fn indicator_mode(self) -> LogicMode {
        match self {
            Formulation::Minlp => LogicMode::IndicatorBigM,
            Formulation::Mpvc => LogicMode::IndicatorVanishing,
        }
    }
}
