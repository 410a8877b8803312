//! The bundled two-mode reference system.
//!
//! Both modes are non-contracting on R², but their Jacobians are
//! block-diagonal in the basis {[1,1], [1,-1]}: each mode contracts on one of
//! the two lines and expands on the other.

use crate::config::SystemConfig;
use crate::model::SwitchedSystem;

pub const TWO_MODE_JSON: &str = include_str!("../data/two_mode.json");
pub const TWO_MODE_UNWEIGHTED_JSON: &str = include_str!("../data/two_mode_unweighted.json");

/// Default initial pair for trajectory experiments.
pub const INITIAL_PAIR: [[f64; 2]; 2] = [[2.0, -1.0], [-2.0, 1.0]];

pub fn two_mode_config() -> SystemConfig {
    SystemConfig::from_json(TWO_MODE_JSON).expect("bundled config is valid")
}

pub fn two_mode_unweighted_config() -> SystemConfig {
    SystemConfig::from_json(TWO_MODE_UNWEIGHTED_JSON).expect("bundled config is valid")
}

pub fn two_mode_system() -> SwitchedSystem {
    two_mode_config().system().expect("bundled system is valid")
}
