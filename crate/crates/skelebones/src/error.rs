//! Crate-wide error type.

use crate::pose::PoseFrame;

/// Errors produced by any stage of the rigging / reanimation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Point configuration too degenerate for a rotation fit (fewer than 3
    /// points or rank-deficient covariance).
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    /// Array dimensions do not agree.
    #[error("shape mismatch: {0}")]
    ShapeError(String),

    /// Vertex count varies across frames of a sequence.
    #[error("inconsistent topology: {0}")]
    InconsistentTopology(String),

    #[error("i/o error ({context}): {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    /// A rig archive failed a validity check on load.
    #[error("corrupt archive: {0}")]
    CorruptArchive(String),

    #[error("index out of range: {0}")]
    IndexError(String),

    #[error("clustering failed: {0}")]
    ClusteringFailed(String),

    /// A cluster's canonical points are collinear or coincident.
    #[error("degenerate cluster {0}")]
    DegenerateCluster(usize),

    /// Laplacian contraction grew the bounding box instead of shrinking it.
    #[error("contraction diverged after {iterations} iterations")]
    ContractionFailed { iterations: usize },

    /// Skeleton has no joint candidates at all (single isolated sample).
    #[error("single-bone skeleton: {0}")]
    SingleBoneSkeleton(String),

    /// Pose solve hit a non-finite objective; carries the last finite pose.
    #[error("pose solver diverged at frame {frame}")]
    SolverDiverged {
        frame: usize,
        last_pose: Box<PoseFrame>,
    },

    #[error("empty point set")]
    EmptyPointSet,

    #[error("insufficient frames: {0}")]
    InsufficientFrames(String),

    /// Wraps a failure with the pipeline stage it occurred in.
    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{0}")]
    Usage(String),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
