//! Desk-scale toolkit for long-term voltage stability work on coupled
//! transmission/distribution grids.
//!
//! The crate covers the full pipeline:
//!
//! 1. [`netmodel`] — case files describing a transmission grid with
//!    feeder-backed loads, plus contingency and capability helpers.
//! 2. [`txflow`] / [`dxflow`] — Newton-Raphson transmission power flow and a
//!    three-phase backward/forward distribution sweep with a LinDistFlow
//!    linearization.
//! 3. [`cosim`] — master-loop coupling of the two solvers at boundary buses.
//! 4. [`margin`] — voltage stability margin (VSM) search by load scaling and
//!    scenario-based dataset generation.
//!
//!    **Unit convention:** the VSM of an operating point is
//!    `(lambda_max - 1) * total_base_active_load`, expressed in **MW**, where
//!    `lambda_max` is the largest uniform load multiplier the coupled system
//!    can sustain. A margin of 0 MW means the base point itself is on the
//!    edge of collapse.
//! 5. [`mlpvsm`] — a single-hidden-layer tanh network fitted with resilient
//!    backpropagation that turns the sampled margins into an explicit,
//!    differentiable expression.
//! 6. [`dsopt`] / [`tsopt`] / [`coord`] — LP-based feeder reactive dispatch,
//!    a QP that raises the margin with minimal control effort, and the
//!    coordination loop that alternates the two against the co-simulator.

pub mod coord;
pub mod cosim;
pub mod dsopt;
pub mod dxflow;
pub mod lp;
pub mod margin;
pub mod mlpvsm;
pub mod netmodel;
pub mod qp;
pub mod tsopt;
pub mod txflow;
