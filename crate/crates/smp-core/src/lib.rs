//! Structural message-passing (SMP) graph networks, from scratch.
//!
//! Nodes carry `n x c` local-context matrices instead of feature vectors;
//! propagating them equivariantly lets the network learn topological
//! properties that ordinary message passing cannot. This crate provides:
//!
//! - [`tensor`]: a reverse-mode autodiff engine over dense f64 arrays,
//!   row-wise MLPs, Adam, finite-difference gradient checks and a binary
//!   checkpoint format;
//! - [`graph`]: graph and permutation types plus the exact combinatorial
//!   oracles (shortest paths, cycle counts, receptive fields, spectral
//!   radius) used both as training targets and as test references;
//! - [`layers`]: local-context initialization, the equivariant linear
//!   block, Fast and Default SMP layers, pooling extractors, an MPNN
//!   baseline and the construction that embeds any MPNN into SMP;
//! - [`coloring`]: identifier compression via greedy coloring of a graph
//!   power;
//! - [`datasets`]: seeded synthetic generators for cycle detection and
//!   multi-task property regression, with JSON-lines persistence;
//! - [`harness`]: training/evaluation loops, the verification suite and
//!   layer micro-benchmarks behind the CLI.

pub mod coloring;
pub mod datasets;
pub mod graph;
pub mod harness;
pub mod layers;
pub mod tensor;

pub use graph::{Graph, Permutation};
pub use layers::LocalContext;
pub use tensor::DiffTensor;

