//! Control barrier functions and safe-set audits.
//!
//! `h₁ = σ` (energy deficit), `h₂ = q_c` (heat flux), `h₃ = −q_c + c₁σ`, and
//! `h(x, t) = T − T_m` sampled on the grid nodes.

use crate::controller::ControllerGains;
use crate::model::{self, PlantParams, Setpoint, StefanState};
use crate::trace::{TraceError, TraceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CbfSnapshot {
    pub t: f64,
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
    /// `min_x (T − T_m)` over the grid nodes.
    pub h_min: f64,
}

impl CbfSnapshot {
    /// Builds a snapshot from `σ` and `q_c`; `h₃` is derived, never stored
    /// independently.
    pub fn from_parts(t: f64, sigma: f64, qc: f64, h_min: f64, gains: &ControllerGains) -> Self {
        Self {
            t,
            h1: sigma,
            h2: qc,
            h3: -qc + gains.c1 * sigma,
            h_min,
        }
    }
}

pub fn snapshot(state: &StefanState, params: &PlantParams, sp: &Setpoint, gains: &ControllerGains) -> CbfSnapshot {
    let sigma = model::sigma(state, params, sp);
    let h_min = state
        .theta
        .iter()
        .map(|t| t - params.t_melt)
        .fold(f64::INFINITY, f64::min);
    CbfSnapshot::from_parts(state.t, sigma, state.qc, h_min, gains)
}

/// Max residual of `ḣ₁ = −c₁h₁ + h₃` with `ḣ₁` from central differences on
/// the (possibly non-uniform) record times.
pub fn h1_ode_residual(trace: &[TraceRecord], gains: &ControllerGains) -> Result<f64, TraceError> {
    if trace.len() < 3 {
        return Err(TraceError::EmptyTrace);
    }
    let mut worst = 0.0f64;
    for w in trace.windows(3) {
        let (a, b, c) = (&w[0], &w[1], &w[2]);
        let (ha, hb) = (b.t - a.t, c.t - b.t);
        if ha <= 0.0 || hb <= 0.0 {
            continue;
        }
        // Second-order derivative estimate on a non-uniform stencil.
        let deriv = (-hb / (ha * (ha + hb))) * a.h1
            + ((hb - ha) / (ha * hb)) * b.h1
            + (ha / (hb * (ha + hb))) * c.h1;
        let rhs = -gains.c1 * b.h1 + b.h3;
        worst = worst.max((deriv - rhs).abs());
    }
    Ok(worst)
}

/// Tolerances for [`safe_set_check`]; CBFs carry heterogeneous units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafeSetTolerance {
    /// Applied to `h₁, h₂, h₃`.
    pub cbf: f64,
    /// Applied to `h_min` [°C].
    pub temperature: f64,
    /// Applied to `s ≤ s_r` [m].
    pub position: f64,
}

impl SafeSetTolerance {
    /// `10⁻⁹·max(|σ(0)|, max|q_c|)` for the CBFs and `10⁻⁹` absolute for
    /// temperature and position.
    pub fn relative_to(trace: &[TraceRecord]) -> Self {
        let sigma0 = trace.first().map(|r| r.h1.abs()).unwrap_or(0.0);
        let qc_scale = trace.iter().map(|r| r.qc.abs()).fold(0.0, f64::max);
        Self {
            cbf: 1e-9 * sigma0.max(qc_scale),
            temperature: 1e-9,
            position: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafeSetViolation {
    pub index: usize,
    pub t: f64,
    pub quantity: &'static str,
    pub value: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafeSetReport {
    pub records: usize,
    pub min_h1: f64,
    pub min_h2: f64,
    pub min_h3: f64,
    pub min_h: f64,
    pub max_s: f64,
    pub first_violation: Option<SafeSetViolation>,
}

impl SafeSetReport {
    pub fn passed(&self) -> bool {
        self.first_violation.is_none()
    }
}

/// Checks `h₁, h₂, h_min ≥ −tol` and `s₀ ≤ s ≤ s_r + tol` at every record.
///
/// `h₃` is reported but not gated here; its positivity is the controller's
/// guarantee, not a standing plant constraint.
pub fn safe_set_check(trace: &[TraceRecord], s_r: f64, tol: &SafeSetTolerance) -> SafeSetReport {
    let s0 = trace.first().map(|r| r.s).unwrap_or(0.0);
    let mut report = SafeSetReport {
        records: trace.len(),
        min_h1: f64::INFINITY,
        min_h2: f64::INFINITY,
        min_h3: f64::INFINITY,
        min_h: f64::INFINITY,
        max_s: f64::NEG_INFINITY,
        first_violation: None,
    };
    for (i, r) in trace.iter().enumerate() {
        report.min_h1 = report.min_h1.min(r.h1);
        report.min_h2 = report.min_h2.min(r.h2);
        report.min_h3 = report.min_h3.min(r.h3);
        report.min_h = report.min_h.min(r.h_min);
        report.max_s = report.max_s.max(r.s);
        if report.first_violation.is_some() {
            continue;
        }
        let checks = [
            ("h1", r.h1, -tol.cbf),
            ("h2", r.h2, -tol.cbf),
            ("h_min", r.h_min, -tol.temperature),
            ("s - s0", r.s - s0, -tol.position),
            ("s_r - s", s_r - r.s, -tol.position),
        ];
        if let Some(&(quantity, value, bound)) = checks.iter().find(|(_, v, b)| !(*v >= *b)) {
            report.first_violation = Some(SafeSetViolation {
                index: i,
                t: r.t,
                quantity,
                value,
                bound,
            });
        }
    }
    report
}
