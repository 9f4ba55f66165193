//! Shared fixtures for the benchmarks.

use chance_nav_core::scenario::{LandmarkChoice, Scenario};
use chance_nav_core::{ChanceSpec, SynthesisProblem};

pub const CORRIDOR: &str = include_str!("../../../scenarios/corridor.json");

pub fn corridor() -> Scenario {
    Scenario::from_json_str(CORRIDOR).expect("bundled corridor scenario is valid")
}

pub fn corridor_problem(choice: LandmarkChoice) -> SynthesisProblem {
    let s = corridor();
    let spec: ChanceSpec = s.chance;
    s.problem(&s.start_cell, choice, spec).expect("corridor problem builds")
}
