//! Find a periodically transmitting radio beacon with drone-mounted
//! receivers.
//!
//! A low-power node somewhere in the field transmits a short message every
//! few seconds. Fixed gateways hear it and produce a coarse position fix —
//! hundreds of meters off. This crate plans and simulates the refinement:
//! drones carrying gateway radios fly measurement patterns around the
//! current estimate, every reception becomes a distance constraint through
//! a fitted path-loss model, and multilateration shrinks the search circle
//! iteration by iteration until the node is pinned down to a few meters.
//!
//! The crate is organized as a pipeline of small modules:
//!
//! - [`geo`]: WGS-84 geodetic positions and a local east/north/up frame.
//! - [`signal`]: ESP/RSSI conversions, antenna compensation, path-loss
//!   models, and model fitting from characterization data.
//! - [`multilat`]: weighted nonlinear least-squares position estimation
//!   from signal-strength datapoints.
//! - [`planner`]: the shrinking-circle mission state machine that turns
//!   estimates into waypoint and orbit tasks.
//! - [`wire`]: the newline-delimited JSON message schema connecting
//!   gateways, drones, and the server.
//! - [`coord`]: the coordination server that ingests uplinks, runs
//!   estimates, and tasks drones; journals every message for replay.
//! - [`sim`]: a deterministic simulated world (beacon, propagation,
//!   packet loss, drone kinematics) driven by a single seed.
//! - [`run`]: end-to-end mission runs, Monte Carlo campaigns, and file
//!   artifacts.
//!
//! # Example
//!
//! Simulate one three-drone mission and inspect the outcome:
//!
//! ```
//! use lorafind::run::{run_mission, RunConfig};
//!
//! let cfg = RunConfig::preset("discrete-3drone").unwrap();
//! let (result, _world) = run_mission(&cfg, 42, None).unwrap();
//! assert!(result.error_m < 60.0);
//! assert_eq!(result.iterations_run, 2);
//! ```
//!
//! Everything is deterministic: the same configuration and seed reproduce
//! the same mission byte for byte, down to the message journal.

// Validation guards are written `!(x > 0.0)` so that NaN fails closed;
// rewriting them via `partial_cmp` would obscure that intent.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coord;
pub mod geo;
pub mod multilat;
pub mod planner;
pub mod run;
pub mod signal;
pub mod sim;
pub mod wire;

pub use coord::{replay_store, serve, CoordConfig, Coordinator, InitialEstimate};
pub use geo::{GeoPoint, LocalPoint};
pub use multilat::{estimate_position, Datapoint, EstimateOptions, PositionEstimate};
pub use planner::{MissionConfig, MissionMode};
pub use run::{campaign, run_campaign, run_mission, simulate, MissionResult, RunConfig};
pub use signal::{AntennaModel, NoiseModel, PathLossModel};
pub use sim::{DroneSpec, World, WorldConfig};
pub use wire::Message;

// Every fenced Rust block in the guide compiles and runs as a doctest, so
// the book cannot drift from the library.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            pub struct $name;
        };
    }

    chapter!(Introduction, "../../../book/src/introduction.md");
    chapter!(SignalModel, "../../../book/src/signal-model.md");
    chapter!(Multilateration, "../../../book/src/multilateration.md");
    chapter!(SearchStrategy, "../../../book/src/search-strategy.md");
    chapter!(WireProtocol, "../../../book/src/wire-protocol.md");
    chapter!(Simulation, "../../../book/src/simulation.md");
    chapter!(Campaigns, "../../../book/src/campaigns.md");
}
