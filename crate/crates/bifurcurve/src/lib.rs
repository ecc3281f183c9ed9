//! Detection of candidate bifurcation values of polynomial maps `F: R^n -> R^(n-1)`.
//!
//! At a regular value of such a map the fiber `F^-1(t)` is a smooth curve: a
//! finite union of circles and lines. A value can still be atypical because of
//! behaviour at infinity — a component of nearby fibers may escape to infinity
//! (vanishing) or a family of components may merge in the limit (splitting).
//! This crate traces fibers numerically, measures their topology, probes the
//! infinity phenomena, and sweeps parameter regions to assemble the candidate
//! bifurcation set.
//!
//! The main entry points are:
//!
//! * [`poly::PolynomialMap::parse`] — exact sparse polynomial maps,
//! * [`trace::enumerate_fiber`] — predictor–corrector tracing of one fiber,
//! * [`topology::fiber_invariants`] — component counts, Betti numbers and the
//!   Euler characteristic by two independent routes,
//! * [`asymptotics`] — vanishing / splitting / circle-breaking detectors,
//! * [`milnor`] — Milnor set tracing, asymptotic value estimation and the
//!   intersection-parity test (planar maps),
//! * [`scan::classify_value`] and [`scan::scan`] — the decision procedure and
//!   the region sweep,
//! * [`cli::run`] — the command line frontend used by the `bifurcurve` binary.
//!
//! See the crate examples for one runnable program per capability.

pub mod asymptotics;
pub mod milnor;
pub mod poly;
pub mod session;
pub mod topology;
pub mod trace;

mod newton;

pub use poly::{ParseError, Polynomial, PolynomialMap};
pub use trace::{enumerate_fiber, FiberComponent, FiberSnapshot, TraceConfig};
