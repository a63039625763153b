//! Distributed dense N-dimensional arrays.
//!
//! Arrays are decomposed along a single split axis across the ranks of a
//! [`Communicator`]; every rank runs the same program and exchanges data only
//! through the transport's point-to-point and collective calls. On top of
//! that sit four distributed algorithms: single-pass statistical moments,
//! ring-based pairwise Euclidean distances, Lloyd's k-means and LASSO
//! coordinate descent.
//!
//! ```
//! use dndarray::{run, DndArray, LoopbackConfig};
//!
//! let lshapes = run(LoopbackConfig::new(3), |comm| {
//!     let a = DndArray::<f64>::zeros(&[5, 4, 3], Some(0), &comm).unwrap();
//!     a.lshape().to_vec()
//! });
//! assert_eq!(lshapes, vec![vec![2, 4, 3], vec![2, 4, 3], vec![1, 4, 3]]);
//! ```

pub mod array;
pub mod cli;
pub mod cluster;
pub mod dataio;
pub mod distribution;
pub mod moments;
pub mod pairwise;
pub mod regression;
mod scalar;
pub mod transport;

#[cfg(doctest)]
mod book {
    macro_rules! chapters {
        ($($name:ident => $file:literal),* $(,)?) => {
            $(
                #[doc = include_str!(concat!("../../../book/src/", $file))]
                mod $name {}
            )*
        };
    }

    chapters! {
        introduction => "introduction.md",
        distribution => "distribution.md",
        communication => "communication.md",
        moments => "moments.md",
        pairwise => "pairwise.md",
        kmeans => "kmeans.md",
        lasso => "lasso.md",
        data_files => "data-files.md",
        cli => "cli.md",
    }
}

pub use array::{matmul_local, transpose, DndArray, ReduceOp};
pub use cluster::{KMeans, KMeansModel};
pub use distribution::{chunk_map, ChunkMap, LayoutError, Tile};
pub use moments::MomentState;
pub use regression::{Lasso, LassoModel};
pub use scalar::{DType, Scalar};
pub use transport::{run, try_run, Communicator, LoopbackConfig, TransportError};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Format(#[from] dataio::FormatError),
    #[error("axis {axis} out of range for {ndim} dimensions")]
    InvalidAxis { axis: usize, ndim: usize },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("split mismatch: {left:?} vs {right:?}")]
    SplitMismatch { left: Option<usize>, right: Option<usize> },
    #[error("moment states of arity {left} and {right} cannot be combined")]
    Arity { left: usize, right: usize },
    #[error("{n} samples are not enough for ddof={ddof}")]
    NotEnoughSamples { n: u64, ddof: u64 },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

impl transport::AbortCause for Error {
    fn is_abort_echo(&self) -> bool {
        matches!(self, Error::Transport(TransportError::Aborted { .. }))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
