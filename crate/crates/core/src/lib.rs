//! Numerical laboratory for stochastic porous media dynamics on finite
//! discrete measure spaces: maximal monotone diffusivity graphs with exact
//! scalar resolvents, symmetric Dirichlet operators and their dual-norm
//! scale, diagonal multiplicative noise, the three-level regularized
//! time-stepping schemes, and a Monte Carlo verifier for the `L^p` moment
//! identity of step-function stochastic integrals.

pub mod config;
pub mod dirichlet;
pub mod ito;
pub mod monotone;
pub mod noise;
pub mod resolvent;
pub mod sim;
pub mod suites;

pub use dirichlet::{BernsteinFn, DirichletOperator, MeasureSpace, OperatorKind, ScalarMap};
pub use monotone::{MonotoneGraph, PieceKind, YosidaView};
pub use noise::{DiagonalNoise, IncrementStream, StreamId, WienerIncrement};
pub use resolvent::{solve_resolvent, ResolventProblem, ResolventSolution};
