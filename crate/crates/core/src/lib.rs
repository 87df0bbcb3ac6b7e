//! Lyapunov energies for one-dimensional, possibly degenerate, fully
//! nonlinear parabolic equations on `[0, 1]`.
//!
//! The pipeline is: a [`models::ProblemSpec`] describes the equation and its
//! boundary data; [`characteristics`] produces `g(x, u, p)`;
//! [`lagrangian`] assembles `L(x, u, p)` with `L_pp = f_q exp(g)`; [`solver`]
//! evolves the equation by the method of lines; [`energy`] evaluates
//! `E = int L dx` along the computed solution and checks its decay.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod characteristics;
pub mod cli;
pub mod energy;
pub mod idw;
pub mod lagrangian;
pub mod models;
pub mod ode;
pub mod quadrature;
pub mod solver;
mod unbounded;
