//! Batch toolkit for one-ticket transit operating data.
//!
//! The crate is organised as a pipeline of stages, each usable on its own:
//!
//! * [`model`] shared domain types, geodesy and CSV tables
//! * [`genesis`] deterministic synthetic city with ground truth
//! * [`timesync`] AFC/AVL clock offset estimation and boarding-stop matching
//! * [`avlrepair`] travel-time models for missing stop records
//! * [`journeys`] alighting inference, stage identification, ridership analytics
//! * [`chains`] closed trip-chain mining and behavioural analytics
//! * [`choice`] route-choice features and multinomial-logit preference models
//! * [`assign`] ridership redistribution when a new route appears
//! * [`optimize`] particle-swarm design of express routes
//! * [`pipeline`] configuration, orchestration and replication experiments

pub mod assign;
pub mod avlrepair;
pub mod chains;
pub mod choice;
pub mod error;
pub mod genesis;
pub mod journeys;
pub mod model;
pub mod optimize;
pub mod pipeline;
pub mod stats;
pub mod timesync;

pub use error::{Error, Result};
pub use model::{
    distance, CardId, Direction, LatLon, Network, Route, RouteId, ScheduleEntry, SpeedClass, Stop,
    StopEvent, StopId, SwipeRecord, TripRun, VehicleId, Zone,
};

/// Tool identifier embedded in every output artifact.
pub const TOOL_VERSION: &str = concat!("otdkit/", env!("CARGO_PKG_VERSION"));
