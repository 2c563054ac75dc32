//! A deterministic synthetic IPv6 universe: planted responders answering
//! in-process, a mock resolver, and the ground truth every acceptance
//! test compares against.

mod responder;
pub mod serve;
mod spec;
mod truth;
mod universe;

pub use responder::{App, Plant, Service};
pub use spec::{
    AddressSpec, Behavior, ClusterSpec, DeploymentSpec, HarnessError, PlantFlags, PlantTemplate, UniverseSpec, Weakness,
};
pub use truth::{GroundTruth, PortTruth, TruthRecord};
pub use universe::{build_universe, MockResolver, Universe};
