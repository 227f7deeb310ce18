//! The bundled 24-service Astronomy Shop model and its two reference
//! scenarios, compiled into the binary.

use crate::environment::Environment;
use crate::knowledge_base::Codebook;
use crate::scenario::{Scenario, ScenarioError};

pub const CODEBOOK: &str = include_str!("../data/astronomy_shop/codebook.json");
pub const ENVIRONMENT: &str = include_str!("../data/astronomy_shop/environment.json");
pub const FAULT_SCENARIO: &str = include_str!("../data/astronomy_shop/scenario_fault.json");
pub const HEALTHY_SCENARIO: &str = include_str!("../data/astronomy_shop/scenario_healthy.json");

/// Resolves the file names used by the bundled scenarios.
pub fn resolve(name: &str) -> Result<String, ScenarioError> {
    match name {
        "codebook.json" => Ok(CODEBOOK.to_owned()),
        "environment.json" => Ok(ENVIRONMENT.to_owned()),
        other => Err(ScenarioError::Io {
            path: other.to_owned(),
            message: "not a bundled file".into(),
        }),
    }
}

pub fn codebook() -> Codebook {
    Codebook::from_json(CODEBOOK).expect("bundled codebook is valid")
}

pub fn environment() -> Environment {
    Environment::from_json(ENVIRONMENT, &codebook()).expect("bundled environment is valid")
}

pub fn fault_scenario() -> Scenario {
    Scenario::from_json(FAULT_SCENARIO, resolve).expect("bundled fault scenario is valid")
}

pub fn healthy_scenario() -> Scenario {
    Scenario::from_json(HEALTHY_SCENARIO, resolve).expect("bundled healthy scenario is valid")
}
