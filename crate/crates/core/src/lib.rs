//! Graph-constrained optimal changepoint detection.
//!
//! A signal is modelled as a sequence of constant-mean segments. Every segment
//! is labelled with a state of a [`ConstraintGraph`], and every change between
//! segments must follow one of the graph's edges: the edge fixes the direction
//! of the jump in mean, its minimum size, and the penalty paid for taking it.
//! [`solve`] returns the segmentation minimising squared error plus penalties,
//! exactly, using a dynamic program over piecewise-quadratic cost functions
//! (see [`piecewise`]).
//!
//! The [`ecg`] module applies the model to raw ECG samples to locate R-peaks,
//! and [`eval`] scores detections against reference annotations.
//!
//! ```
//! use gccd::{parse_graph, solve};
//!
//! let graph = parse_graph(
//!     "state B\nstate R\n\
//!      edge B R up gap=1 penalty=1\n\
//!      edge R B down gap=1 penalty=1\n",
//! )?;
//! let seg = solve(&[0.0, 0.0, 0.0, 10.0, 10.0, 10.0], &graph)?;
//! assert_eq!(seg.segments.len(), 2);
//! assert_eq!(graph.vertex(seg.segments[1].state).name, "R");
//! assert!((seg.total_cost - 1.0).abs() < 1e-9);
//! # Ok::<(), gccd::Error>(())
//! ```

pub mod ecg;
mod error;
pub mod eval;
pub mod graph;
pub mod oracle;
pub mod piecewise;
pub mod solver;

pub use error::{Error, Result};
pub use graph::{parse_graph, ConstraintGraph, Direction, Edge, EdgeId, Vertex, VertexId};
pub use piecewise::{PiecewiseQuad, Quad};
pub use solver::{cost_of, decode_states, solve, Segment, Segmentation};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/piecewise.md")]
    mod piecewise {}
    #[doc = include_str!("../../../book/src/solver.md")]
    mod solver {}
    #[doc = include_str!("../../../book/src/graphs.md")]
    mod graphs {}
    #[doc = include_str!("../../../book/src/ecg.md")]
    mod ecg {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
}
