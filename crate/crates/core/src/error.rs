use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the geometry, encoding, transform, solver and I/O layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("depth must be positive, got {0}")]
    DepthNonPositive(f64),

    #[error("quaternion norm {0} is not within 1e-6 of 1")]
    NonUnitQuaternion(f64),

    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("image extent {img_w}x{img_h} does not match intrinsics extent {k_w}x{k_h}")]
    IntrinsicsMismatch {
        img_w: usize,
        img_h: usize,
        k_w: usize,
        k_h: usize,
    },

    #[error("PE channel count must be a positive multiple of 4, got {0}")]
    BadPeConfig(usize),

    #[error("transform produces an empty output extent {width}x{height}")]
    DegenerateOutput { width: usize, height: usize },

    #[error("region [{u0}, {v0}, {u1}, {v1}] does not intersect the image")]
    EmptyIntersection { u0: f64, v0: f64, u1: f64, v1: f64 },

    #[error("degenerate region of interest: {0}")]
    DegenerateRoi(String),

    #[error("required plane {0} is missing")]
    MissingPlane(&'static str),

    #[error("extent mismatch: {0}")]
    ExtentMismatch(String),

    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("only {kept} pairs survive trimming, at least 3 are required")]
    TooFewInliers { kept: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("mask selects no pixels")]
    EmptyMask,

    #[error("pose sampling unsatisfiable after {0} attempts")]
    Unsatisfiable(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {field}: {msg}")]
    Format {
        path: PathBuf,
        field: String,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    /// True for failures caused by degenerate numeric input rather than bad data.
    pub fn is_degenerate(&self) -> bool {
        matches!(
            self,
            Error::DepthNonPositive(_)
                | Error::NonUnitQuaternion(_)
                | Error::DegenerateOutput { .. }
                | Error::EmptyIntersection { .. }
                | Error::DegenerateRoi(_)
                | Error::DegenerateConfiguration(_)
                | Error::TooFewInliers { .. }
                | Error::EmptyMask
                | Error::Unsatisfiable(_)
        )
    }

    pub(crate) fn format(path: impl Into<PathBuf>, field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            field: field.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
