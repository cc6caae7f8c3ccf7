//! Nominal nonovershooting law, zero-order-hold event-triggered controller
//! and the minimum dwell-time analysis.
//!
//! Under ZOH the `(h₂, h₃)` pair obeys `ḣ₂ = U(t_j)`, `ḣ₃ = −U(t_j) − c₁h₂`
//! between events, so everything between two events is a polynomial in
//! `t − t_j`. The controller samples the trigger once per base step; the
//! continuous-time crossing is overshot by at most one step.

use std::fmt;

use thiserror::Error;

use crate::cbf::CbfSnapshot;
use crate::model::AssumptionViolation;

/// Feedback gains `c₁, c₂` and trigger slack `δ₁, δ₂`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerGains {
    pub c1: f64,
    pub c2: f64,
    pub delta1: f64,
    pub delta2: f64,
}

impl ControllerGains {
    pub fn new(c1: f64, c2: f64, delta1: f64, delta2: f64) -> Self {
        Self {
            c1,
            c2,
            delta1,
            delta2,
        }
    }

    /// `μ₁ = min{δ₁c₁, (1 − δ₂)c₂}`.
    pub fn mu1(&self) -> f64 {
        (self.delta1 * self.c1).min((1.0 - self.delta2) * self.c2)
    }

    /// `c̄₁ = (1 + δ₁)c₁`.
    pub fn cbar1(&self) -> f64 {
        (1.0 + self.delta1) * self.c1
    }

    /// `c̄₂ = (1 + δ₂)c₂`.
    pub fn cbar2(&self) -> f64 {
        (1.0 + self.delta2) * self.c2
    }

    pub fn violations(&self) -> Vec<AssumptionViolation> {
        let mut out = Vec::new();
        if !(self.c1 > 0.0 && self.c1.is_finite()) {
            out.push(AssumptionViolation::new("gains: c1 > 0", self.c1, 0.0));
        }
        if !(self.c2 > 0.0 && self.c2.is_finite()) {
            out.push(AssumptionViolation::new("gains: c2 > 0", self.c2, 0.0));
        }
        if !(self.delta1 >= 0.0 && self.delta1.is_finite()) {
            out.push(AssumptionViolation::new("gains: delta1 >= 0", self.delta1, 0.0));
        }
        if !(self.delta2 > 0.0) {
            out.push(AssumptionViolation::new("gains: delta2 > 0", self.delta2, 0.0));
        }
        if !(self.delta2 < 1.0) {
            out.push(AssumptionViolation::new("gains: delta2 < 1", self.delta2, 1.0));
        }
        out
    }
}

/// Which side of the triggering band produced an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TriggerSide {
    Initial,
    Lower,
    Upper,
}

impl TriggerSide {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Initial => "initial",
            Self::Lower => "lower",
            Self::Upper => "upper",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name.trim() {
            "initial" => Some(Self::Initial),
            "lower" => Some(Self::Lower),
            "upper" => Some(Self::Upper),
            _ => None,
        }
    }
}

impl fmt::Display for TriggerSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Nonovershooting law `U* = −c₁h₂ + c₂h₃`.
pub fn nominal_control(snap: &CbfSnapshot, gains: &ControllerGains) -> f64 {
    -gains.c1 * snap.h2 + gains.c2 * snap.h3
}

/// The same law written in plant variables: `U* = −(c₁ + c₂)q_c + c₁c₂σ`.
pub fn nominal_control_from_plant(qc: f64, sigma: f64, gains: &ControllerGains) -> f64 {
    -(gains.c1 + gains.c2) * qc + gains.c1 * gains.c2 * sigma
}

/// Held-control bookkeeping between two events.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtcState {
    /// Last event time `t_j`.
    pub t_j: f64,
    /// `U*(t_j)`, applied until the next event.
    pub u_held: f64,
    pub h2_at_event: f64,
    pub h3_at_event: f64,
    pub event_count: usize,
}

impl EtcState {
    /// State right after an event at `snap.t`.
    pub fn at_event(snap: &CbfSnapshot, gains: &ControllerGains, event_count: usize) -> Self {
        Self {
            t_j: snap.t,
            u_held: nominal_control(snap, gains),
            h2_at_event: snap.h2,
            h3_at_event: snap.h3,
            event_count,
        }
    }
}

/// Combined safety/stability trigger.
///
/// Fires on `−δ₂c₂h₃ > Ũ*` (lower) or `Ũ* > μ₁h₂ + δ₂c₂h₃` (upper) with
/// `Ũ* = U*(t) − U*(t_j)`. Both are strict; the lower side wins a tie.
pub fn trigger_fired(snap: &CbfSnapshot, etc: &EtcState, gains: &ControllerGains) -> Option<TriggerSide> {
    let u_err = nominal_control(snap, gains) - etc.u_held;
    let slack = gains.delta2 * gains.c2 * snap.h3;
    if -slack > u_err {
        Some(TriggerSide::Lower)
    } else if u_err > gains.mu1() * snap.h2 + slack {
        Some(TriggerSide::Upper)
    } else {
        None
    }
}

/// Safety-only trigger with upper bound `δ₁c₁h₂ + c₂h₃`.
///
/// Analysis aid only; the shipped controller uses [`trigger_fired`].
pub fn safety_trigger_fired(
    snap: &CbfSnapshot,
    etc: &EtcState,
    gains: &ControllerGains,
) -> Option<TriggerSide> {
    let u_err = nominal_control(snap, gains) - etc.u_held;
    if -gains.delta2 * gains.c2 * snap.h3 > u_err {
        Some(TriggerSide::Lower)
    } else if u_err > gains.delta1 * gains.c1 * snap.h2 + gains.c2 * snap.h3 {
        Some(TriggerSide::Upper)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum ControllerError {
    #[error("controller consulted at t = {requested} after t = {previous}")]
    NonMonotoneTime { previous: f64, requested: f64 },
}

/// Outcome of one [`etc_update`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtcUpdate {
    pub u: f64,
    pub state: EtcState,
    pub fired: Option<TriggerSide>,
}

/// One ZOH controller consultation.
///
/// `etc = None` means no event has happened yet, which always produces the
/// initial event.
pub fn etc_update(
    snap: &CbfSnapshot,
    etc: Option<&EtcState>,
    gains: &ControllerGains,
) -> Result<EtcUpdate, ControllerError> {
    let Some(prev) = etc else {
        let state = EtcState::at_event(snap, gains, 1);
        return Ok(EtcUpdate {
            u: state.u_held,
            state,
            fired: Some(TriggerSide::Initial),
        });
    };
    if snap.t < prev.t_j {
        return Err(ControllerError::NonMonotoneTime {
            previous: prev.t_j,
            requested: snap.t,
        });
    }
    if snap.t == prev.t_j {
        return Ok(EtcUpdate {
            u: prev.u_held,
            state: *prev,
            fired: None,
        });
    }
    match trigger_fired(snap, prev, gains) {
        Some(side) => {
            let state = EtcState::at_event(snap, gains, prev.event_count + 1);
            Ok(EtcUpdate {
                u: state.u_held,
                state,
                fired: Some(side),
            })
        }
        None => Ok(EtcUpdate {
            u: prev.u_held,
            state: *prev,
            fired: None,
        }),
    }
}

/// `(h₂(t), h₃(t))` under a held input, integrated exactly from `t_j`.
pub fn h23_closed_form(etc: &EtcState, gains: &ControllerGains, t: f64) -> (f64, f64) {
    let dt = t - etc.t_j;
    let u = etc.u_held;
    let h2 = etc.h2_at_event + u * dt;
    let h3 = etc.h3_at_event - u * dt - gains.c1 * (etc.h2_at_event * dt + 0.5 * u * dt * dt);
    (h2, h3)
}

/// Explicit quadratic solutions for the trigger margins
/// `m₁ = μ₁h₂ + δ₂c₂h₃ − Ũ*` and `m₂ = Ũ* + δ₂c₂h₃`.
///
/// Coefficients are written in terms of `h₂(t_j)`, `h₃(t_j)` only, so
/// `etc.u_held` must equal `U*(t_j)`.
pub fn m_functions(etc: &EtcState, gains: &ControllerGains, t: f64) -> (f64, f64) {
    let ControllerGains { c1, c2, delta2, .. } = *gains;
    let mu1 = gains.mu1();
    let cbar2 = gains.cbar2();
    let (h2, h3) = (etc.h2_at_event, etc.h3_at_event);
    let dt = t - etc.t_j;
    let drift = c1 * h2 - c2 * h3;

    let m1 = -0.5 * (1.0 - delta2) * c1 * c2 * drift * dt * dt
        - (c1 * (mu1 + c1) * h2 - c2 * (mu1 + c1 + c2 * (1.0 - delta2)) * h3) * dt
        + mu1 * h2
        + delta2 * c2 * h3;
    let m2 = 0.5 * c1 * cbar2 * drift * dt * dt + (c1 * c1 * h2 - (c1 + cbar2) * c2 * h3) * dt + delta2 * c2 * h3;
    (m1, m2)
}

/// Bracketed lower-bound quadratic for `m₁ / h₂(t_j)` at elapsed time `dt`.
pub fn m1_lower_bound_poly(gains: &ControllerGains, dt: f64) -> f64 {
    let ControllerGains { c1, c2, delta2, .. } = *gains;
    let mu1 = gains.mu1();
    -0.5 * (1.0 - delta2) * c1 * c1 * c2 * dt * dt - c1 * (mu1 + c1) * dt + mu1
}

/// Bracketed lower-bound quadratic for `m₂ / (c₂h₃(t_j))` at elapsed time `dt`.
pub fn m2_lower_bound_poly(gains: &ControllerGains, dt: f64) -> f64 {
    let c1 = gains.c1;
    let cbar2 = gains.cbar2();
    -0.5 * c1 * cbar2 * dt * dt - (c1 + cbar2) * dt + gains.delta2
}

/// Minimum dwell time `τ = min{τ₁, τ₂}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DwellTime {
    pub tau: f64,
    pub tau1: f64,
    pub tau2: f64,
}

/// Positive root of `−a·x² − b·x + c` (a, b, c > 0), rationalised to avoid
/// cancellation when `4ac ≪ b²`.
fn positive_root(a: f64, b: f64, c: f64) -> f64 {
    2.0 * c / (b + (b * b + 4.0 * a * c).sqrt())
}

pub fn min_dwell_time(gains: &ControllerGains) -> DwellTime {
    let ControllerGains { c1, c2, delta2, .. } = *gains;
    let mu1 = gains.mu1();
    let cbar2 = gains.cbar2();
    let tau1 = positive_root(0.5 * (1.0 - delta2) * c1 * c1 * c2, c1 * (mu1 + c1), mu1);
    let tau2 = positive_root(0.5 * c1 * cbar2, c1 + cbar2, delta2);
    DwellTime {
        tau: tau1.min(tau2),
        tau1,
        tau2,
    }
}

/// One control update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRecord {
    pub t: f64,
    pub u_held: f64,
    pub side: TriggerSide,
}

/// Ordered list of control updates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    pub entries: Vec<EventRecord>,
}

impl EventLog {
    pub fn push(&mut self, t: f64, u_held: f64, side: TriggerSide) {
        self.entries.push(EventRecord { t, u_held, side });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Inter-event gaps, one per consecutive pair.
    pub fn gaps(&self) -> Vec<f64> {
        self.entries.windows(2).map(|w| w[1].t - w[0].t).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZenoReport {
    pub passed: bool,
    pub event_count: usize,
    pub tau: f64,
    pub min_gap: Option<f64>,
    pub mean_gap: Option<f64>,
    /// First offending pair `(t_j, t_{j+1})`.
    pub violation: Option<(f64, f64)>,
}

/// Checks every inter-event gap against `τ − dt`.
pub fn zeno_audit(log: &EventLog, gains: &ControllerGains, dt: f64) -> ZenoReport {
    let tau = min_dwell_time(gains).tau;
    let gaps = log.gaps();
    let violation = log
        .entries
        .windows(2)
        .find(|w| w[1].t - w[0].t < tau - dt)
        .map(|w| (w[0].t, w[1].t));
    let min_gap = gaps.iter().copied().reduce(f64::min);
    let mean_gap = (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64);
    ZenoReport {
        passed: violation.is_none(),
        event_count: log.len(),
        tau,
        min_gap,
        mean_gap,
        violation,
    }
}

/// What the controller decided at one consultation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlAction {
    pub u_applied: f64,
    pub u_star: f64,
    pub event: Option<TriggerSide>,
}

/// Controller consulted by the run loop once per base step.
pub trait ControlLaw {
    fn decide(&mut self, snap: &CbfSnapshot) -> Result<ControlAction, ControllerError>;

    /// Number of control updates so far.
    fn update_count(&self) -> usize;

    fn event_log(&self) -> Option<&EventLog> {
        None
    }
}

/// ZOH controller with the combined safety/stability trigger.
#[derive(Debug, Clone)]
pub struct EtcController {
    gains: ControllerGains,
    state: Option<EtcState>,
    last_t: f64,
    log: EventLog,
}

impl EtcController {
    pub fn new(gains: ControllerGains) -> Self {
        Self {
            gains,
            state: None,
            last_t: f64::NEG_INFINITY,
            log: EventLog::default(),
        }
    }

    pub fn state(&self) -> Option<&EtcState> {
        self.state.as_ref()
    }

    pub fn into_log(self) -> EventLog {
        self.log
    }
}

impl ControlLaw for EtcController {
    fn decide(&mut self, snap: &CbfSnapshot) -> Result<ControlAction, ControllerError> {
        if snap.t < self.last_t {
            return Err(ControllerError::NonMonotoneTime {
                previous: self.last_t,
                requested: snap.t,
            });
        }
        self.last_t = snap.t;
        let update = etc_update(snap, self.state.as_ref(), &self.gains)?;
        if let Some(side) = update.fired {
            self.log.push(snap.t, update.u, side);
        }
        self.state = Some(update.state);
        Ok(ControlAction {
            u_applied: update.u,
            u_star: nominal_control(snap, &self.gains),
            event: update.fired,
        })
    }

    fn update_count(&self) -> usize {
        self.log.len()
    }

    fn event_log(&self) -> Option<&EventLog> {
        Some(&self.log)
    }
}

/// Continuous-time comparator: `U = U*` recomputed at every consultation.
#[derive(Debug, Clone)]
pub struct ContinuousController {
    gains: ControllerGains,
    updates: usize,
}

impl ContinuousController {
    pub fn new(gains: ControllerGains) -> Self {
        Self { gains, updates: 0 }
    }
}

impl ControlLaw for ContinuousController {
    fn decide(&mut self, snap: &CbfSnapshot) -> Result<ControlAction, ControllerError> {
        let u = nominal_control(snap, &self.gains);
        let side = if self.updates == 0 {
            TriggerSide::Initial
        } else {
            TriggerSide::Upper
        };
        self.updates += 1;
        Ok(ControlAction {
            u_applied: u,
            u_star: u,
            event: Some(side),
        })
    }

    fn update_count(&self) -> usize {
        self.updates
    }
}

/// Applies a fixed input and never fires.
#[derive(Debug, Clone, Copy)]
pub struct ConstantInput(pub f64);

impl ControlLaw for ConstantInput {
    fn decide(&mut self, _snap: &CbfSnapshot) -> Result<ControlAction, ControllerError> {
        Ok(ControlAction {
            u_applied: self.0,
            u_star: self.0,
            event: None,
        })
    }

    fn update_count(&self) -> usize {
        0
    }
}
