use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("index {index} out of range for {len} levels")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("matrix is not Hermitian (max deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("{what} not converged: change {change:.3e} exceeds tolerance {tolerance:.1e}")]
    NotConverged {
        what: String,
        change: f64,
        tolerance: f64,
    },

    #[error(
        "ambiguous label {label:?}: dressed states {first} and {second} have overlaps {first_overlap:.3} and {second_overlap:.3}"
    )]
    AmbiguousLabel {
        label: (usize, usize),
        first: usize,
        second: usize,
        first_overlap: f64,
        second_overlap: f64,
    },

    #[error("label {0:?} not present in the dressed spectrum")]
    MissingLabel((usize, usize)),

    #[error("unitarity defect {defect:.3e} exceeds tolerance after step refinement")]
    NotUnitary { defect: f64 },

    #[error("norm defect {defect:.3e} exceeds tolerance after step refinement")]
    NormDefect { defect: f64 },

    #[error(
        "photon number {reached:.1} exceeds the dispersion range {limit:.1} by more than 20%; increase eps_max"
    )]
    PhotonRangeExceeded { reached: f64, limit: f64 },

    #[error("top Fock levels carry occupancy {occupancy:.2e} (limit 1e-4); increase the photon truncation")]
    PhotonTruncation { occupancy: f64 },

    #[error("{name} = {value} outside bounds [{lower}, {upper}]")]
    OutOfBounds {
        name: String,
        value: f64,
        lower: f64,
        upper: f64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
