use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Pre- and post-selected states are (numerically) orthogonal.
    #[error("overlap |<post|pre>| = {overlap:e} is below {epsilon:e}; weak value diverges")]
    ZeroOverlap { overlap: f64, epsilon: f64 },

    #[error(
        "quadrature did not reach relative tolerance {tolerance:e} (estimated error {estimated:e})"
    )]
    QuadratureFailure { tolerance: f64, estimated: f64 },

    #[error("post-selection probability {probability:e} is below floor {floor:e}")]
    VanishingPostselection { probability: f64, floor: f64 },

    #[error("first-order formula is singular at theta = {theta} (theta = 0 mod pi)")]
    AngleSingularity { theta: f64 },

    #[error("total internal reflection: sin(theta_t) = {sin_t} >= 1")]
    TotalInternalReflection { sin_t: f64 },

    #[error("r_p = {r_p:e} vanishes (Brewster angle or index-matched interface)")]
    BrewsterSingularity { r_p: f64 },

    #[error("outcome probability p+ = {p_plus} is degenerate")]
    DegenerateOutcome { p_plus: f64 },

    #[error("probability map is not strictly monotonic on [{lo}, {hi}]")]
    NonMonotonicInterval { lo: f64, hi: f64 },

    #[error("count record has no photons")]
    EmptyCounts,

    #[error("frame has no counts")]
    EmptyFrame,
}
