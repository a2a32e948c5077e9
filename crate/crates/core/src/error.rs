use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A rate or power argument outside the domain of the power function.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid energy model: {0}")]
    InvalidModel(String),

    #[error("invalid packet {id}: {reason}")]
    InvalidPacket { id: u64, reason: String },

    #[error("invalid packet sequence: {0}")]
    InvalidSequence(String),

    /// Overlapping segments, negative durations or negative rates.
    #[error("malformed schedule: {0}")]
    Structural(String),

    /// No feasible departure curve exists. `packet_id` names the packet whose
    /// deadline cannot be met when it is known.
    #[error("infeasible at t = {time}{}", .packet_id.map(|id| format!(" (packet {id})")).unwrap_or_default())]
    Infeasible { time: f64, packet_id: Option<u64> },

    /// The sequence carries a non-FIFO packet; use the non-FIFO scheduler.
    #[error("packet at position {index} is non-FIFO; use the non-FIFO scheduler")]
    NotFifo { index: usize },

    /// The sequence is FIFO-consistent; use the FIFO scheduler.
    #[error("sequence has no non-FIFO packet; use the FIFO scheduler")]
    NoNonFifo,

    /// More than one deadline inversion.
    #[error("unsupported input: {0}")]
    Unsupported(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
}
