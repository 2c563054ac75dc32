//! Discovery and security assessment of IoT services reachable over IPv6.
//!
//! The pipeline runs seed ingestion, target generation, polite probing,
//! validation, provenance tracing, alias detection and security grading.
//! Every stage talks to the network through [`prober::Dispatcher`], and
//! [`harness`] provides a deterministic in-process universe of planted
//! responders for tests and dry campaigns.

pub mod addr;
pub mod aliaser;
pub mod assessor;
pub mod blockdedup;
pub mod clock;
pub mod generators;
pub mod harness;
pub mod jsonl;
pub mod model;
pub mod pipeline;
pub mod prober;
pub mod proto;
pub mod seeds;
pub mod tracer;
pub mod validator;

pub use addr::{Addr128, Prefix};
pub use model::{Protocol, ProtocolSpec, SeedSource, SourceTag, Transport, Variant};
