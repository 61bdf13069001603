use thiserror::Error;

use crate::model::TripId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("route has no stops")]
    EmptyRoute,

    #[error("trip {trip} is dropped off before it is picked up")]
    PairOrder { trip: TripId },

    #[error("trip {trip} is not part of the problem")]
    UnknownTrip { trip: TripId },

    #[error("instance has {trips} trips, exact solver limit is {limit}")]
    TooLarge { trips: usize, limit: usize },

    #[error("no feasible solution exists")]
    Infeasible,

    #[error("trip {trip} cannot be served even by a dedicated route")]
    Unserviceable { trip: TripId },

    #[error("initial solution is infeasible ({violations} violations)")]
    InfeasibleStart { violations: usize },

    #[error("trip {trip} is not served by the solution")]
    TripNotServed { trip: TripId },

    #[error("training diverged: loss became {loss}")]
    TrainingDiverged { loss: f64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
