//! Simulation and evaluation of revenue attribution under privacy-preserving
//! install postbacks.
//!
//! A pipeline run goes: synthetic users ([`synthgen`]) -> conversion-value
//! schema and update windows ([`schema`]) -> postbacks and count matrices
//! ([`postback`]) -> crowd-anonymity threshold ([`privacy`]) -> per-campaign
//! revenue estimates ([`attribution`]) -> error against ground truth
//! ([`metrics`]). [`pipeline`] and [`benchmark`] wire the stages together and
//! [`io`] handles the on-disk formats.

pub mod attribution;
pub mod benchmark;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod postback;
pub mod privacy;
pub mod rng;
pub mod schema;
pub mod synthgen;

pub use error::{Error, Result};
pub use model::{CampaignKey, CampaignSet, CellKey, Cents, Event, EventKind, Timestamp, UserRecord, WeekKey};
pub use schema::{BitLayout, SchemaKind, SchemaSpec};
