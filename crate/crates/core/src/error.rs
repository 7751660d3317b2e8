use thiserror::Error;

use crate::state::{ElectronId, ModeLabel};

/// Errors surfaced by state construction, circuit elements, and protocol runs.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("electron ids {0:?} appear on both sides of a tensor product")]
    OverlappingElectronIds(Vec<ElectronId>),

    #[error("duplicate electron id {0} within a configuration")]
    DuplicateElectronId(ElectronId),

    #[error(
        "inconsistent electron ids across configurations: expected {expected:?}, found {found:?}"
    )]
    InconsistentElectronSets {
        expected: Vec<ElectronId>,
        found: Vec<ElectronId>,
    },

    #[error("states span different electron sets")]
    MismatchedElectronSets,

    #[error("unknown electron id {0}")]
    UnknownElectron(ElectronId),

    #[error("configuration {0} matches no partition predicate")]
    NonExhaustivePartition(String),

    #[error("configuration {0} matches more than one partition predicate")]
    OverlappingPartition(String),

    #[error("cannot normalize a zero-amplitude state")]
    ZeroNorm,

    #[error("invalid PBS spec: {0}")]
    InvalidPbs(String),

    #[error("PBS on ports ({0}, {1}) touches no electron in any configuration")]
    PbsNotConnected(ModeLabel, ModeLabel),

    #[error("matrix is not unitary within {0}")]
    NotUnitary(f64),

    #[error("no unique electron occupies mode {0}")]
    AmbiguousModeOccupant(ModeLabel),

    #[error("electron {0} occupies different modes across configurations")]
    AmbiguousElectronMode(ElectronId),

    #[error("mode {0} is not occupied in any configuration")]
    ModeNotOccupied(ModeLabel),

    #[error("target mode {0} is already occupied")]
    ModeOccupied(ModeLabel),

    #[error("partition must split the electron set into two disjoint non-empty halves")]
    InvalidPartition,

    #[error("Schmidt rank exceeds 2 across the requested cut")]
    SchmidtRankTooHigh,

    #[error("alpha_sq {0} lies outside [0, 1]")]
    AlphaSqOutOfRange(f64),

    #[error("coefficients do not satisfy |alpha|^2 + |beta|^2 = 1")]
    NotNormalizedPair,

    #[error("degenerate Schmidt pair: protocol success probability is zero")]
    DegenerateSchmidtPair,

    #[error("recycle_failure called on a successful round outcome")]
    RecycleOnSuccess,

    #[error("state is not of shared GHZ form (every configuration must be all-up or all-down)")]
    NotGhzForm,

    #[error("ancilla mismatch pushes round {round} ancilla alpha_sq to {value}, outside (0, 1)")]
    MismatchOutOfRange { round: u32, value: f64 },

    #[error("{field}: {message}")]
    InvalidConfig {
        field: &'static str,
        message: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
