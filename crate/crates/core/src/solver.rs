//! Boundary-immobilised explicit integrator and the closed-loop run loop.
//!
//! With `y = x/s(t)` and `u = T − T_m`, the heat equation becomes a
//! conservation law for `E = s·u`:
//!
//! ```text
//! E_t = ∂_y F,   F = (α/s)·u_y + ṡ·y·u,
//! F(0) = −α·q_c/k,   u(1) = 0,   ṡ = −(β/s)·u_y(1).
//! ```
//!
//! The grid has `N` nodes `y_i = iΔy`. Node 0 owns a half cell, interior
//! nodes a full cell, and the last node is pinned at `T_m`. Face fluxes use a
//! central diffusive part and an upwind advective part. The half-cell
//! balance at node 0 is algebraically the same as a second-order ghost node
//! `u₋₁ = u₁ + 2Δy·s·q_c/k`.
//!
//! With the first-order interface stencil `ṡ = (β/s)·u_{N−2}/Δy` the
//! interface velocity equals `−(β/α)` times the flux through the last face,
//! so the discrete heat content and the interface position exchange energy
//! exactly. Combined with the exact step average of `q_c` at the boundary,
//! `σⁿ⁺¹ − σⁿ = −∫ q_c dt` holds to round-off at every step. The second-order
//! interface stencil is more accurate pointwise but breaks that identity.

use std::fmt;

use thiserror::Error;

use crate::cbf;
use crate::config::Config;
use crate::controller::{ControlAction, ControlLaw, ControllerError, EventLog};
use crate::diagnostics;
use crate::model::{PlantParams, StefanState};
use crate::trace::{Trace, TraceRecord};

/// Order of the one-sided interface-gradient stencil.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StencilOrder {
    First,
    Second,
}

impl StencilOrder {
    pub fn order(&self) -> u8 {
        match self {
            Self::First => 1,
            Self::Second => 2,
        }
    }
}

impl fmt::Display for StencilOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.order())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub n: usize,
    /// Base step; the controller is consulted once per base step.
    pub dt: f64,
    pub cfl_safety: f64,
    pub stencil: StencilOrder,
}

impl SolverSettings {
    /// `cfl·s²Δy²/(2α)`, the largest stable explicit step at interface
    /// position `s`.
    pub fn stability_limit(s: f64, n: usize, alpha: f64, cfl: f64) -> f64 {
        let dy = 1.0 / (n.max(2) - 1) as f64;
        cfl * s * s * dy * dy / (2.0 * alpha)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n < 8 {
            return Err(format!("N must be at least 8, got {}", self.n));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(format!("cfl_safety must be in (0, 1], got {}", self.cfl_safety));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum SolverError {
    #[error("t = {t}: interface position {s} fell below the floor {s_min}")]
    StabilityViolation { t: f64, s: f64, s_min: f64 },
    #[error("t = {t}: non-finite state")]
    NonFiniteState { t: f64 },
    #[error("t = {t}: {source}")]
    Controller { t: f64, source: ControllerError },
}

impl SolverError {
    pub fn time(&self) -> f64 {
        match *self {
            Self::StabilityViolation { t, .. } | Self::NonFiniteState { t } | Self::Controller { t, .. } => t,
        }
    }
}

/// Interface velocity `ṡ = −(β/s)·T_y(1)` from a one-sided difference.
pub fn interface_velocity(state: &StefanState, params: &PlantParams, stencil: StencilOrder) -> f64 {
    let n = state.theta.len();
    let dy = state.dy();
    let u = |i: usize| state.theta[i] - params.t_melt;
    let slope = match stencil {
        // u_y(1) ≈ (u_{N−1} − u_{N−2})/Δy with u_{N−1} = 0.
        StencilOrder::First => (u(n - 1) - u(n - 2)) / dy,
        StencilOrder::Second => (3.0 * u(n - 1) - 4.0 * u(n - 2) + u(n - 3)) / (2.0 * dy),
    };
    -params.beta / state.s * slope
}

/// Reusable integrator with scratch storage.
///
/// The interface position is accumulated in compensated arithmetic: the
/// solver keeps the rounding error of `s` as a low-order word for the state
/// it produced last. Near the setpoint `s` barely moves, and plain `s += h·ṡ`
/// would round every increment to `ulp(s)`, which over millions of steps
/// biases `σ` by `(k/β)·ulp(s)` per step.
#[derive(Debug, Clone)]
pub struct Solver {
    pub params: PlantParams,
    pub settings: SolverSettings,
    flux: Vec<f64>,
    s_lo: f64,
    s_last: f64,
}

impl Solver {
    pub fn new(params: PlantParams, settings: SolverSettings) -> Self {
        Self {
            params,
            settings,
            flux: Vec::new(),
            s_lo: 0.0,
            s_last: f64::NAN,
        }
    }

    /// Low-order part of the interface position, so that the exact
    /// accumulated position is `state.s + interface_carry(state)`.
    ///
    /// Zero for any state this solver did not just produce.
    pub fn interface_carry(&self, state: &StefanState) -> f64 {
        if state.s == self.s_last {
            self.s_lo
        } else {
            0.0
        }
    }

    fn s_min(&self) -> f64 {
        1e-6 * self.params.length
    }

    /// Returns the state advanced by `dt` under constant `U`.
    pub fn step(&mut self, state: &StefanState, u: f64, dt: f64) -> Result<StefanState, SolverError> {
        let mut next = state.clone();
        self.step_in_place(&mut next, u, dt)?;
        Ok(next)
    }

    /// Advances `state` by `dt` under constant `U`, splitting into as many
    /// equal substeps as the stability limit requires.
    pub fn step_in_place(&mut self, state: &mut StefanState, u: f64, dt: f64) -> Result<(), SolverError> {
        if dt <= 0.0 {
            return Ok(());
        }
        if state.s != self.s_last {
            self.s_lo = 0.0;
        }
        let limit = SolverSettings::stability_limit(state.s, state.len(), self.params.alpha, self.settings.cfl_safety);
        let substeps = (dt / limit).ceil().max(1.0);
        if !substeps.is_finite() || substeps > 1e9 {
            return Err(SolverError::StabilityViolation {
                t: state.t,
                s: state.s,
                s_min: self.s_min(),
            });
        }
        let h = dt / substeps;
        let t0 = state.t;
        for k in 0..substeps as usize {
            self.euler(state, u, h);
            state.t = t0 + (k + 1) as f64 * h;
            if !(state.s >= self.s_min()) {
                if !state.s.is_finite() {
                    return Err(SolverError::NonFiniteState { t: state.t });
                }
                return Err(SolverError::StabilityViolation {
                    t: state.t,
                    s: state.s,
                    s_min: self.s_min(),
                });
            }
        }
        state.t = t0 + dt;
        self.s_last = state.s;
        if !state.is_finite() {
            return Err(SolverError::NonFiniteState { t: state.t });
        }
        Ok(())
    }

    /// One explicit Euler substep on the conservative form.
    fn euler(&mut self, state: &mut StefanState, u_in: f64, h: f64) {
        let n = state.theta.len();
        let tm = self.params.t_melt;
        let PlantParams { alpha, k, .. } = self.params;
        let s = state.s;
        let dy = state.dy();
        let sdot = interface_velocity(state, &self.params, self.settings.stencil);

        // Exact average of the linearly ramping flux over the substep.
        let q_bar = state.qc + 0.5 * h * u_in;

        self.flux.resize(n - 1, 0.0);
        let theta = &state.theta;
        let diff = alpha / (s * dy);
        for (i, f) in self.flux.iter_mut().enumerate() {
            let (ul, ur) = (theta[i] - tm, theta[i + 1] - tm);
            let y_face = (i as f64 + 0.5) * dy;
            let upwind = if sdot >= 0.0 { ur } else { ul };
            *f = diff * (ur - ul) + sdot * y_face * upwind;
        }

        // TwoSum of the high word and the increment plus the carried low word.
        let inc = h * sdot + self.s_lo;
        let s_new = s + inc;
        let back = s_new - s;
        self.s_lo = (s - (s_new - back)) + (inc - back);
        let inv = 1.0 / s_new;
        let flux = &self.flux;
        let theta = &mut state.theta;
        let u0 = theta[0] - tm;
        let e0 = s * u0 + 2.0 * h / dy * (flux[0] + alpha * q_bar / k);
        theta[0] = tm + e0 * inv;
        for i in 1..n - 1 {
            let ui = theta[i] - tm;
            let ei = s * ui + h / dy * (flux[i] - flux[i - 1]);
            theta[i] = tm + ei * inv;
        }
        theta[n - 1] = tm;

        state.s = s_new;
        state.qc += h * u_in;
    }
}

/// Builds one logged row, including the backstepping/Lyapunov columns.
///
/// `params` must be the parameters `state` is expressed in (see [`run`]).
pub fn make_record(
    state: &StefanState,
    params: &PlantParams,
    cfg: &Config,
    bp: &diagnostics::BacksteppingParams,
    consts: &diagnostics::LyapunovConstants,
    snap: &cbf::CbfSnapshot,
    action: &ControlAction,
) -> TraceRecord {
    let w = diagnostics::forward_transform(state, &cfg.setpoint, bp, params);
    let x_err = state.s - cfg.setpoint.s_r;
    let v = diagnostics::lyapunov_v(&w, state.s, x_err, params, cfg.epsilon);
    let vh = diagnostics::lyapunov_vh(snap.h1, snap.h3, consts);
    TraceRecord {
        t: state.t,
        s: state.s,
        qc: state.qc,
        u_applied: action.u_applied,
        u_star: action.u_star,
        h1: snap.h1,
        h2: snap.h2,
        h3: snap.h3,
        h_min: snap.h_min,
        sdot: interface_velocity(state, params, cfg.settings.stencil),
        v,
        vh,
        vbar: diagnostics::lyapunov_vbar(v, vh, consts),
        phi: diagnostics::norm_phi(state, params, &cfg.setpoint),
        event_flag: action.event.is_some() as u8,
    }
}

/// Runs the closed loop from the configured initial condition.
///
/// Before every base step the controller sees the current CBF snapshot and
/// its decision is held over the step. Rows are logged every
/// `record_interval`, at every control update and at the final time. The
/// run ends at `t_final` or, if `stop_fraction > 0`, as soon as the
/// interface is within `stop_fraction·(s_r − s0)` of the setpoint.
///
/// Internally the loop integrates the excess `T − T_m` with the melting
/// point shifted to zero. Every logged quantity depends on `T − T_m` only,
/// so this is an exact change of variables, but it keeps full precision once
/// the liquid is within millikelvins of `T_m`. Storing absolute temperatures
/// near 420 °C would round the excess to `ulp(420) ≈ 6·10⁻¹⁴` on every step
/// and bias the energy balance over millions of steps.
pub fn run(cfg: &Config, ctl: &mut dyn ControlLaw) -> Result<Trace, SolverError> {
    let params = PlantParams {
        t_melt: 0.0,
        ..cfg.params
    };
    let mut solver = Solver::new(params, cfg.settings);
    let mut state = StefanState::from_initial(&cfg.initial_condition());
    state.theta.iter_mut().for_each(|t| *t -= cfg.params.t_melt);
    let bp = cfg.backstepping();
    let consts = cfg.lyapunov();
    let dt = cfg.settings.dt;

    let total_steps = if cfg.t_final > 0.0 {
        // Guard against `t_final/dt` landing a hair above an integer.
        (cfg.t_final / dt * (1.0 - 1e-12)).ceil() as usize
    } else {
        0
    };
    let stride = if cfg.record_interval > 0.0 {
        ((cfg.record_interval / dt).round() as usize).max(1)
    } else {
        1
    };
    let stop_band = cfg.stop_fraction * (cfg.setpoint.s_r - cfg.s0);

    let mut records = Vec::with_capacity(total_steps / stride + 16);
    let mut steps = 0;
    loop {
        let mut snap = cbf::snapshot(&state, &params, &cfg.setpoint, &cfg.gains);
        let carry = solver.interface_carry(&state);
        if carry != 0.0 {
            let sigma = snap.h1 - params.k / params.beta * carry;
            snap = cbf::CbfSnapshot::from_parts(snap.t, sigma, state.qc, snap.h_min, &cfg.gains);
        }
        let action = ctl
            .decide(&snap)
            .map_err(|source| SolverError::Controller { t: state.t, source })?;
        let done = steps >= total_steps || (stop_band > 0.0 && (cfg.setpoint.s_r - state.s).abs() < stop_band);
        // Event rows are kept for the event-triggered log only; a continuous
        // controller updates every step and would defeat decimation.
        let event_row = action.event.is_some() && ctl.event_log().is_some();
        if done || steps % stride == 0 || event_row {
            records.push(make_record(&state, &params, cfg, &bp, &consts, &snap, &action));
        }
        if done {
            break;
        }
        steps += 1;
        let h = if steps == total_steps {
            cfg.t_final - (steps - 1) as f64 * dt
        } else {
            dt
        };
        let t_next = if steps == total_steps {
            cfg.t_final
        } else {
            steps as f64 * dt
        };
        solver.step_in_place(&mut state, action.u_applied, h)?;
        // Pin time to the grid so long runs do not accumulate drift.
        state.t = t_next;
    }

    Ok(Trace {
        records,
        events: ctl.event_log().cloned().unwrap_or_else(EventLog::default),
        steps,
        updates: ctl.update_count(),
        dt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::ConstantInput;
    use crate::model::{sigma, InitialCondition, MaterialPreset, ProfileShape, Setpoint};

    fn settings(n: usize) -> SolverSettings {
        SolverSettings {
            n,
            dt: 1e-3,
            cfl_safety: 0.9,
            stencil: StencilOrder::First,
        }
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let p = MaterialPreset::Zinc.params();
        let st = StefanState::equilibrium(&p, 0.3, 50);
        let mut solver = Solver::new(p, settings(50));
        let next = solver.step(&st, 0.0, 10.0).unwrap();
        assert_eq!(next.theta, st.theta);
        assert_eq!((next.s, next.qc, next.t), (st.s, st.qc, 10.0));
    }

    #[test]
    fn zero_step_is_identity() {
        let p = MaterialPreset::Zinc.params();
        let ic = InitialCondition::from_shape(&p, ProfileShape::Linear, 0.05, 1.0, 40, 3.0);
        let st = StefanState::from_initial(&ic);
        let mut solver = Solver::new(p, settings(40));
        assert_eq!(solver.step(&st, 5.0, 0.0).unwrap(), st);
    }

    #[test]
    fn linear_profile_velocity() {
        let p = MaterialPreset::Zinc.params();
        let ic = InitialCondition::from_shape(&p, ProfileShape::Linear, 0.05, 1.0, 33, 0.0);
        let st = StefanState::from_initial(&ic);
        let want = p.beta * 1.0 / 0.05;
        for order in [StencilOrder::First, StencilOrder::Second] {
            let got = interface_velocity(&st, &p, order);
            assert!((got - want).abs() < 1e-12 * want, "{order}: {got}");
        }
        let flat = StefanState::equilibrium(&p, 0.1, 33);
        assert_eq!(interface_velocity(&flat, &p, StencilOrder::Second), 0.0);
    }

    #[test]
    fn constant_flux_energy_line() {
        // σ(t) − σ(0) = −q̄·t; the scheme conserves this to round-off.
        let p = MaterialPreset::Zinc.params();
        let sp = Setpoint { s_r: 0.3 };
        let q = 2.0e4;
        let ic = InitialCondition::from_shape(&p, ProfileShape::Linear, 0.05, 1.0, 64, q);
        let mut st = StefanState::from_initial(&ic);
        let sigma0 = sigma(&st, &p, &sp);
        let mut solver = Solver::new(p, settings(64));
        let dt = SolverSettings::stability_limit(0.05, 64, p.alpha, 0.9);
        for _ in 0..2000 {
            solver.step_in_place(&mut st, 0.0, dt).unwrap();
        }
        let drop = sigma(&st, &p, &sp) - sigma0;
        let want = -q * st.t;
        assert!((drop - want).abs() < 1e-9 * sigma0, "{drop} vs {want}");
        assert!(st.theta.iter().all(|t| *t >= p.t_melt));
    }

    #[test]
    fn ramping_flux_energy_line() {
        let p = MaterialPreset::Zinc.params();
        let sp = Setpoint { s_r: 0.3 };
        let ic = InitialCondition::from_shape(&p, ProfileShape::Linear, 0.05, 2.0, 48, 0.0);
        let mut st = StefanState::from_initial(&ic);
        let sigma0 = sigma(&st, &p, &sp);
        let mut solver = Solver::new(p, settings(48));
        let u = 50.0;
        // A step well above the stability limit forces substepping.
        for _ in 0..100 {
            solver.step_in_place(&mut st, u, 0.5).unwrap();
        }
        let want = -0.5 * u * st.t * st.t;
        let drop = sigma(&st, &p, &sp) - sigma0;
        assert!((drop - want).abs() < 1e-9 * sigma0, "{drop} vs {want}");
        assert!((st.qc - u * 50.0).abs() < 1e-9);
    }

    #[test]
    fn interface_carry_keeps_sub_ulp_increments() {
        // Every increment of s is below half an ulp of 0.3; the position only
        // advances through the carried low word.
        let p = PlantParams {
            t_melt: 0.0,
            ..MaterialPreset::Zinc.params()
        };
        let sp = Setpoint { s_r: 0.31 };
        let ic = InitialCondition::from_shape(&p, ProfileShape::Linear, 0.3, 1e-11, 32, 0.0);
        let mut st = StefanState::from_initial(&ic);
        let sigma0 = sigma(&st, &p, &sp);
        let heat0 = p.k / p.alpha * st.heat_content(&p);
        let mut solver = Solver::new(p, settings(32));
        let dt = SolverSettings::stability_limit(0.3, 32, p.alpha, 0.9);
        for _ in 0..5000 {
            solver.step_in_place(&mut st, 0.0, dt).unwrap();
        }
        // Uncompensated, x + h·ṡ == x for every one of these steps.
        let first_increment = dt * p.beta * 1e-11 / (0.3 * 0.3);
        assert_eq!(0.3 + first_increment, 0.3);
        assert!(st.s > 0.3);
        let melted = heat0 - p.k / p.alpha * st.heat_content(&p);
        assert!(melted > 0.1 * heat0);
        let compensated = sigma(&st, &p, &sp) - p.k / p.beta * solver.interface_carry(&st) - sigma0;
        assert!(compensated.abs() < 1e-9 * melted, "{compensated} vs {melted}");

        // A state the solver did not produce carries nothing.
        let mut other = st.clone();
        other.s += 1e-3;
        assert_eq!(solver.interface_carry(&other), 0.0);
    }

    #[test]
    fn collapse_is_reported_with_time() {
        let p = MaterialPreset::Nondimensional.params();
        let mut st = StefanState::equilibrium(&p, 0.1, 16);
        // Undercooled liquid drives the interface backwards.
        st.theta.iter_mut().take(15).for_each(|t| *t = -50.0);
        let mut solver = Solver::new(p, settings(16));
        let mut err = None;
        for _ in 0..100_000 {
            if let Err(e) = solver.step_in_place(&mut st, 0.0, 1e-4) {
                err = Some(e);
                break;
            }
        }
        let err = err.expect("interface should collapse");
        assert!(err.time() > 0.0, "{err}");
    }

    #[test]
    fn run_with_zero_horizon_logs_one_row() {
        let cfg = Config::parse("t_final = 0\nN = 16").unwrap();
        let tr = run(&cfg, &mut ConstantInput(0.0)).unwrap();
        assert_eq!(tr.records.len(), 1);
        assert_eq!(tr.steps, 0);
        assert_eq!(tr.records[0].t, 0.0);
    }

    #[test]
    fn run_at_equilibrium_is_constant() {
        let cfg = Config::parse("T0_profile = flat\ns0 = 0.3\ns_r = 0.3\nN = 16\nt_final = 30\nrecord_interval = 0")
            .unwrap_or_else(|e| panic!("{e}"));
        let tr = run(&cfg, &mut ConstantInput(0.0)).unwrap();
        assert!(tr.records.len() > 2);
        let first = &tr.records[0];
        for r in &tr.records {
            assert_eq!((r.s, r.qc, r.h1, r.h_min, r.phi), (first.s, first.qc, first.h1, first.h_min, first.phi));
        }
        assert_eq!(tr.last().unwrap().t, 30.0);
    }
}
