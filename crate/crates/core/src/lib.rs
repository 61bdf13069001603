//! Offline vehicle routing with online bookings.
//!
//! The crate covers the offline routing problem (pickup windows, capacity,
//! route-duration limits), a greedy construction heuristic, a simulated
//! annealing improver usable as an anytime solver, an exact solver for tiny
//! instances, and the online layer that picks a tight pickup window for each
//! booking with a learned value function over hand-crafted features.

pub mod demand;
pub mod error;
pub mod feasibility;
pub mod features;
pub mod generate;
pub mod greedy;
pub mod history;
pub mod instance;
pub mod model;
pub mod oracle;
pub mod policy;
pub mod schedule;
pub mod simanneal;
pub mod simulator;

pub use error::{Error, Result};
pub use feasibility::{check_feasibility, occupancy_profile, Violation, ViolationKind};
pub use model::{
    route_bounds, solution_cost, Location, LocationId, Problem, ProblemConfig, Route, Seconds, Solution, Stop,
    StopKind, TimeWindow, TravelTimeMatrix, TripId, TripRequest,
};
