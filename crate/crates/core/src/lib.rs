//! Causal intelligence engine.
//!
//! Maintains a topology graph, a codebook of root causes and symptoms, the
//! causality graph instantiated from the two, and an attribute dependency
//! graph. Health, impact, root-cause and remediation questions are answered
//! from pre-computed state through a line-oriented JSON tool service.

pub mod attributes;
pub mod bundled;
pub mod causality;
pub mod engine;
pub mod environment;
pub mod impact;
pub mod inference;
pub mod knowledge_base;
pub mod query_service;
pub mod scenario;
pub mod topology;
