//! Event-triggered safe boundary control of the one-phase Stefan problem
//! with first-order actuator dynamics.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`]: plant data, initial data, assumption checks and the energy
//!   functional `sigma`.
//! * [`solver`]: boundary-immobilised explicit integrator for the coupled
//!   heat equation / interface ODE / actuator integrator, plus the closed-loop
//!   run loop.
//! * [`cbf`]: control barrier functions and safe-set audits.
//! * [`controller`]: nominal nonovershooting law, zero-order-hold
//!   event-triggered controller and the minimum dwell-time analysis.
//! * [`diagnostics`]: backstepping transformation, Lyapunov functionals and
//!   the exponential decay report.
//! * [`harness`]: scenario runner, continuous baseline, parameter sweeps and
//!   offline audits behind the `stefan-etc` CLI.

pub mod cbf;
pub mod config;
pub mod controller;
pub mod diagnostics;
pub mod harness;
pub mod model;
pub mod quad;
pub mod solver;
pub mod trace;

pub use cbf::CbfSnapshot;
pub use config::{Config, ConfigError};
pub use controller::{ControllerGains, EtcController, EventLog, TriggerSide};
pub use model::{InitialCondition, PlantParams, Setpoint, StefanState};
pub use solver::{Solver, SolverError, SolverSettings, StencilOrder};
pub use trace::{Trace, TraceRecord};
