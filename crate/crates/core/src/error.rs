use thiserror::Error;

/// Failure classes shared by every module in the crate.
///
/// Contract violations that a caller can trigger with bad data come back as
/// values; internal logic errors panic instead.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid system descriptor: {0}")]
    InvalidDescriptor(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("Jacobian is singular at sampled point {point:?} (|det| <= 1e-12)")]
    SingularJacobian { point: Vec<f64> },

    #[error("cocycle entries overflowed f64 at step {step}; use the QR-factored spectrum instead of the raw product")]
    CocycleOverflow { step: usize },

    #[error("orthonormal frame degenerated (diagonal entry {entry:.3e} < 1e-300); reduce qr_stride")]
    FrameDegenerate { entry: f64 },

    #[error("finite-time spectral gap {gap:.3e} at index {index} is below threshold {threshold:.3e}; splitting is indeterminate")]
    IndeterminateSplitting { index: usize, gap: f64, threshold: f64 },

    #[error("splitting subspaces are nearly parallel (|det [E|F]| = {det:.3e} <= 1e-8)")]
    DegenerateSplitting { det: f64 },

    #[error("no splitting available at orbit index {orbit_index}: {reason}")]
    SplittingUnavailable { orbit_index: i64, reason: String },

    #[error("matrix is rank deficient: smallest singular value {smallest:.3e}")]
    RankDeficient { smallest: f64 },

    #[error("graph image folded at step {step}: two images share base coordinates within 1e-10")]
    GraphFolded { step: usize },

    #[error("graph sample {index} leaves the local chart (offset norm {norm:.3e} >= 0.5)")]
    ChartRadiusExceeded { index: usize, norm: f64 },

    #[error("graph sample {index} exits the Bowen ball at step {step}")]
    SampleOutsideBowenBall { index: usize, step: usize },

    #[error("graph needs at least two samples with distinct base points")]
    DegenerateGraph,

    #[error("grid estimator supports dimension <= 2, got {dim}")]
    GridUnsupportedDimension { dim: usize },

    #[error("no survivors at stage {stage}; increase the stage population")]
    SurvivorExtinction { stage: usize },

    #[error("Bowen measure estimate is zero at n = {n}; increase resolution or population")]
    EmptyEstimate { n: usize },

    #[error("all {count} points failed local entropy estimation")]
    AllPointsFailed { count: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
