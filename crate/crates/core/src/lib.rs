//! Minimum-energy transmission scheduling for deadline-constrained packet
//! sequences over a time-invariant AWGN link.
//!
//! The crate is organised bottom-up:
//!
//! * [`energy`] holds the convex rate-to-power map and exact energy of
//!   piecewise-constant-rate schedules.
//! * [`curves`] holds packets, cumulative arrival / minimum-departure curves,
//!   schedules and the feasibility check.
//! * [`taut_string`] is the optimal offline scheduler for FIFO sequences.
//! * [`nonfifo`] handles a sequence with a single non-FIFO packet through
//!   split-and-reorder and a four-way cascade.
//! * [`online`] replans with the offline optimum at every arrival.
//! * [`oracle`] contains brute-force validators used by tests and `verify`.
//! * [`workload`] is the Monte-Carlo experiment harness.

pub mod curves;
pub mod energy;
mod error;
pub mod nonfifo;
pub mod online;
pub mod oracle;
pub mod taut_string;
pub mod workload;

pub use curves::{
    arrival_curve, is_feasible, min_departure_curve, CumulativeCurve, CurveKind,
    FeasibilityReport, Packet, PacketSequence, Piece, Schedule, Segment, Violation,
    ViolationKind, DEFAULT_TOLERANCE,
};
pub use energy::EnergyModel;
pub use error::{Error, Result};
pub use nonfifo::{
    detect_non_fifo, fifo_baseline, schedule_non_fifo, split_and_reorder, NonFifoDecision,
    NonFifoInstance, Possibility,
};
pub use online::{run_online, OnlinePolicy, OnlineRun, OnlineScheduler, OnlineStats, TraceEvent};
pub use oracle::{discrete_convex_oracle, grid_split_oracle, DiscreteSolution, GridOutcome};
pub use taut_string::{schedule_fifo, string_tautening};
pub use workload::{
    generate_workload, run_comparison, ExperimentConfig, ResultTable, SchedulerKind, TrialRecord,
};
