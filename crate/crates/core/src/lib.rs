//! Spectral Galerkin solver and verification suite for 3D incompressible
//! Navier-Stokes flow in the ball with Navier friction boundary conditions.
//!
//! The crate builds an exactly divergence-free, boundary-tangent polynomial
//! vector basis on the ball, assembles the Stokes bilinear forms in both the
//! full-gradient and symmetric-gradient formulations, solves the generalized
//! eigenproblem that underlies the Galerkin truncation, integrates the
//! resulting quadratic ODE system, and certifies energy inequalities,
//! Poincare-type constants, rigid-rotation steady states and exponential
//! decay rates on the computed trajectories.

pub mod basis;
pub mod cli;
pub mod dynamics;
pub mod geometry;
pub mod gronwall;
pub mod linalg;
pub mod operators;
pub mod poly;
