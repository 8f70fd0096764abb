//! Core library for 2D PDE-constrained shape optimisation of a two-phase
//! transmission problem.
//!
//! The crate provides body-fitted triangulations of the unit square with an
//! internal interface, a P1 finite element solver for the transmission state
//! and adjoint equations, assembly of the distributed (tensor) form of the
//! shape derivative, shape gradients in vector-valued reproducing kernel
//! Hilbert spaces with radial kernels as well as in H1 and Euclidean metrics,
//! and the fixed-metric and variable-metric (sigma-annealing) descent loops.
//!
//! The crate is `no_std` (with `alloc`); all IO, file formats and the command
//! line interface live in the companion `shapeopt-cli` crate.

#![no_std]

extern crate alloc;

pub mod error;
pub mod field;
pub mod fem;
pub mod geom;
pub mod gradients;
pub mod kernels;
pub mod linalg;
pub(crate) mod math;
pub mod mesh;
pub mod optimizer;
pub mod tensors;

pub use error::Error;
pub use geom::{Mat2, Vec2};
pub use mesh::{InterfaceEdge, Label, QualityFloors, QualityReport, ShapeSpec, TriMesh};
