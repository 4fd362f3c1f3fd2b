use core::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Bounding box with `min >= max` on some axis, or non-finite bounds.
    InvalidBbox,
    /// A shrink target that is not contained in the current grid bounds.
    BboxNotContained,
    /// Grid shape that cannot be interpolated (resolution < 2, zero channels).
    InvalidFieldShape,
    ZeroQuaternion,
    ZeroDirection,
    NonPositiveRoughness,
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    ImageSizeMismatch,
    NonFiniteLoss {
        view: usize,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidBbox => write!(f, "invalid field: degenerate or non-finite bounding box"),
            Error::BboxNotContained => {
                write!(f, "new bounding box is not contained in the current one")
            }
            Error::InvalidFieldShape => {
                write!(f, "invalid field: resolution must be >= 2 and channel counts > 0")
            }
            Error::ZeroQuaternion => write!(f, "invalid parameter: zero-length quaternion"),
            Error::ZeroDirection => write!(f, "invalid input: zero-length direction"),
            Error::NonPositiveRoughness => write!(f, "invalid input: roughness must be positive"),
            Error::DimensionMismatch { what, expected, got } => {
                write!(f, "dimension mismatch for {what}: expected {expected}, got {got}")
            }
            Error::ImageSizeMismatch => write!(f, "image dimensions do not match"),
            Error::NonFiniteLoss { view } => write!(f, "non-finite loss on view {view}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T, E = Error> = core::result::Result<T, E>;
