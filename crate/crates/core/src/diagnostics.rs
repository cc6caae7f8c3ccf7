//! Backstepping transformation, Lyapunov functionals and the decay report.
//!
//! All of this is post-processing: nothing here feeds back into the control
//! loop. The transforms act on `h(x) = T(x) − T_m` sampled on the uniform
//! physical grid `x_i = i·s/(N−1)` and use the trapezoid rule throughout.

use thiserror::Error;

use crate::controller::ControllerGains;
use crate::model::{PlantParams, Setpoint, StefanState};
use crate::quad;
use crate::trace::{TraceError, TraceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum DiagnosticsError {
    #[error("epsilon = {epsilon} outside the admissible interval (0, {upper})")]
    EpsilonOutOfRange { epsilon: f64, upper: f64 },
}

/// Kernel parameters of the backstepping pair.
///
/// Forward kernel `φ(x) = c₁x/β − ε`; inverse kernel
/// `ψ(x) = e^{λ̄x}(p₁ sin ωx + ε cos ωx)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BacksteppingParams {
    pub epsilon: f64,
    pub c1: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda_bar: f64,
    pub omega: f64,
    pub p1: f64,
}

impl BacksteppingParams {
    /// Upper end of the admissible interval, `2√(αc₁)/β`.
    pub fn epsilon_upper(params: &PlantParams, c1: f64) -> f64 {
        2.0 * (params.alpha * c1).sqrt() / params.beta
    }

    /// Midpoint default `√(αc₁)/β`.
    pub fn default_epsilon(params: &PlantParams, c1: f64) -> f64 {
        0.5 * Self::epsilon_upper(params, c1)
    }

    pub fn new(params: &PlantParams, c1: f64, epsilon: f64) -> Result<Self, DiagnosticsError> {
        let upper = Self::epsilon_upper(params, c1);
        if !(epsilon > 0.0 && epsilon < upper) {
            return Err(DiagnosticsError::EpsilonOutOfRange { epsilon, upper });
        }
        let PlantParams { alpha, beta, .. } = *params;
        let eb2 = (epsilon * beta).powi(2);
        let omega = ((4.0 * alpha * c1 - eb2) / (4.0 * alpha * alpha)).sqrt();
        Ok(Self {
            epsilon,
            c1,
            alpha,
            beta,
            lambda_bar: beta * epsilon / (2.0 * alpha),
            omega,
            p1: -(2.0 * alpha * c1 - eb2) / (2.0 * alpha * beta * omega),
        })
    }

    pub fn phi(&self, x: f64) -> f64 {
        self.c1 * x / self.beta - self.epsilon
    }

    pub fn psi(&self, x: f64) -> f64 {
        let (sin, cos) = (self.omega * x).sin_cos();
        (self.lambda_bar * x).exp() * (self.p1 * sin + self.epsilon * cos)
    }
}

/// Right-cumulative trapezoid integrals `∫_{x_i}^{x_{N−1}} f dy`.
fn tail_integrals(f: impl Fn(usize) -> f64, n: usize, dx: f64) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for i in (0..n.saturating_sub(1)).rev() {
        out[i] = out[i + 1] + 0.5 * dx * (f(i) + f(i + 1));
    }
    out
}

/// `w(x) = h(x) − (β/α)∫ₓ^s φ(x−y)h(y)dy − φ(x−s)X` on the grid over `[0, s]`.
///
/// `φ` is affine, so the kernel integral splits into two running tail sums
/// and the whole transform is `O(N)`. The split is exact for the trapezoid
/// rule because the rule is linear in the integrand.
pub fn forward_transform_profile(h: &[f64], s: f64, x_err: f64, bp: &BacksteppingParams) -> Vec<f64> {
    let n = h.len();
    if n == 0 {
        return Vec::new();
    }
    let dx = if n > 1 { s / (n - 1) as f64 } else { 0.0 };
    let x = |i: usize| i as f64 * dx;
    let i0 = tail_integrals(|j| h[j], n, dx);
    let i1 = tail_integrals(|j| x(j) * h[j], n, dx);
    let slope = bp.c1 / bp.beta;
    let gain = bp.beta / bp.alpha;
    (0..n)
        .map(|i| {
            let kernel = slope * x(i) * i0[i] - slope * i1[i] - bp.epsilon * i0[i];
            // x_i − s taken from the index so it is exactly 0 at the interface.
            let offset = -((n - 1 - i) as f64) * dx;
            h[i] - gain * kernel - bp.phi(offset) * x_err
        })
        .collect()
}

/// `h(x) = w(x) − (β/α)∫ₓ^s ψ(x−y)w(y)dy − ψ(x−s)X`; `O(N²)`.
pub fn inverse_transform_profile(w: &[f64], s: f64, x_err: f64, bp: &BacksteppingParams) -> Vec<f64> {
    let n = w.len();
    if n == 0 {
        return Vec::new();
    }
    let dx = if n > 1 { s / (n - 1) as f64 } else { 0.0 };
    let gain = bp.beta / bp.alpha;
    // ψ only depends on the index offset on a uniform grid.
    let psi: Vec<f64> = (0..n).map(|k| bp.psi(-(k as f64) * dx)).collect();
    (0..n)
        .map(|i| {
            let integrand: Vec<f64> = (i..n).map(|j| psi[j - i] * w[j]).collect();
            let integral = quad::trapezoid(&integrand, dx);
            w[i] - gain * integral - psi[n - 1 - i] * x_err
        })
        .collect()
}

/// Forward transform of a plant state with `X = s − s_r`.
pub fn forward_transform(state: &StefanState, sp: &Setpoint, bp: &BacksteppingParams, params: &PlantParams) -> Vec<f64> {
    forward_transform_profile(&state.excess(params), state.s, state.s - sp.s_r, bp)
}

pub fn inverse_transform(w: &[f64], s: f64, x_err: f64, bp: &BacksteppingParams) -> Vec<f64> {
    inverse_transform_profile(w, s, x_err, bp)
}

/// `V = ‖w‖²/(2α) + εX²/(2β)` with `‖·‖` the trapezoid L² norm on `[0, s]`.
pub fn lyapunov_v(w: &[f64], s: f64, x_err: f64, params: &PlantParams, epsilon: f64) -> f64 {
    let dx = if w.len() > 1 { s / (w.len() - 1) as f64 } else { 0.0 };
    quad::trapezoid_map(w, dx, |v| v * v) / (2.0 * params.alpha) + epsilon * x_err * x_err / (2.0 * params.beta)
}

/// Constants of the composite Lyapunov argument.
///
/// The generic gain `c` inside `a` and `b` is taken to be `c₁`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovConstants {
    pub a: f64,
    pub b: f64,
    pub q: f64,
    pub p: f64,
    pub b_bar: f64,
}

impl LyapunovConstants {
    pub fn new(params: &PlantParams, sp: &Setpoint, gains: &ControllerGains, epsilon: f64) -> Self {
        let PlantParams { alpha, beta, k, .. } = *params;
        let (c, s_r) = (gains.c1, sp.s_r);
        let a = 2.0 * beta * epsilon / alpha * (alpha * c * c * s_r / (2.0 * beta.powi(3) * epsilon.powi(3))).max(1.0);
        let b = 0.125 * (alpha / (s_r * s_r)).min(c);
        Self {
            a,
            b,
            q: 2.0 * gains.c1 * gains.mu1(),
            p: 8.0 * s_r / (gains.c2 * k * k * (1.0 - gains.delta2)),
            b_bar: b.min(2.0 * s_r / (k * k)),
        }
    }

    /// Right-hand side `(−b̄ + a·ṡ)·V̄` of the differential inequality.
    pub fn bound_rhs(&self, vbar: f64, sdot: f64) -> f64 {
        (-self.b_bar + self.a * sdot) * vbar
    }
}

/// `V_h = h₃²/2 + q·h₁²/2`.
pub fn lyapunov_vh(h1: f64, h3: f64, consts: &LyapunovConstants) -> f64 {
    0.5 * h3 * h3 + 0.5 * consts.q * h1 * h1
}

/// `V̄ = V + p·V_h`.
pub fn lyapunov_vbar(v: f64, vh: f64, consts: &LyapunovConstants) -> f64 {
    v + consts.p * vh
}

/// `Φ = ‖T − T_m‖² + (s − s_r)² + q_c²`.
pub fn norm_phi(state: &StefanState, params: &PlantParams, sp: &Setpoint) -> f64 {
    let l2 = quad::trapezoid_map(&state.theta, state.dx(), |t| (t - params.t_melt).powi(2));
    l2 + (state.s - sp.s_r).powi(2) + state.qc * state.qc
}

/// Outcome of [`decay_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    pub records: usize,
    /// Consecutive record pairs on which the discrete `ΔV̄/Δt` was compared.
    pub inequality_checked: usize,
    /// Pairs where `ΔV̄/Δt > (−b̄ + a·ṡ)V̄ + slack`.
    pub inequality_violations: usize,
    /// Largest excess of the left side over the right side (0 if none).
    pub worst_excess: f64,
    pub phi_initial: f64,
    pub phi_final: f64,
    pub phi_ratio: f64,
    /// Least-squares slope of `ln Φ(t)` over all records.
    pub log_slope: f64,
    /// Least-squares slope of the log of the decreasing envelope
    /// `Φ̂(t) = max_{t' ≥ t} Φ(t')`.
    pub envelope_slope: f64,
    /// Fitted rate `b̂ = −envelope_slope`.
    pub b_hat: f64,
    /// Smallest `M` with `Φ(t) ≤ M·Φ(0)·e^{−b̂t}` on every record.
    pub m_const: f64,
}

impl DecayReport {
    /// Property-level check: the envelope strictly decays.
    pub fn decays(&self) -> bool {
        self.envelope_slope < 0.0 && self.m_const.is_finite()
    }
}

fn ls_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    if points.len() < 2 {
        return 0.0;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}

/// Post-hoc decay analysis of a trace carrying `V̄`, `Φ` and `ṡ` columns.
///
/// The differential-inequality check is report-grade: the constants `a`,
/// `b̄` are only guaranteed for `ε` below an existential threshold, so
/// violations are counted rather than treated as failures.
pub fn decay_report(trace: &[TraceRecord], consts: &LyapunovConstants) -> Result<DecayReport, TraceError> {
    let first = trace.first().ok_or(TraceError::EmptyTrace)?;
    let last = trace.last().unwrap();
    let vbar_scale = trace.iter().map(|r| r.vbar.abs()).fold(0.0, f64::max);
    let slack = 1e-9 * vbar_scale;

    let mut checked = 0;
    let mut violations = 0;
    let mut worst = 0.0f64;
    for w in trace.windows(2) {
        let dt = w[1].t - w[0].t;
        if dt <= 0.0 {
            continue;
        }
        checked += 1;
        let lhs = (w[1].vbar - w[0].vbar) / dt;
        let excess = lhs - consts.bound_rhs(w[0].vbar, w[0].sdot);
        if excess > slack / dt {
            violations += 1;
            worst = worst.max(excess);
        }
    }

    let logs: Vec<(f64, f64)> = trace.iter().filter(|r| r.phi > 0.0).map(|r| (r.t, r.phi.ln())).collect();
    let mut envelope = Vec::with_capacity(trace.len());
    let mut running = f64::NEG_INFINITY;
    for r in trace.iter().rev() {
        running = running.max(r.phi);
        if running > 0.0 {
            envelope.push((r.t, running.ln()));
        }
    }
    envelope.reverse();
    let envelope_slope = ls_slope(&envelope);
    let b_hat = -envelope_slope;

    let m_const = if first.phi > 0.0 {
        trace
            .iter()
            .map(|r| r.phi * (b_hat * (r.t - first.t)).exp() / first.phi)
            .fold(0.0, f64::max)
    } else if trace.iter().all(|r| r.phi == 0.0) {
        1.0
    } else {
        f64::INFINITY
    };

    Ok(DecayReport {
        records: trace.len(),
        inequality_checked: checked,
        inequality_violations: violations,
        worst_excess: worst,
        phi_initial: first.phi,
        phi_final: last.phi,
        phi_ratio: if first.phi > 0.0 { last.phi / first.phi } else { 0.0 },
        log_slope: ls_slope(&logs),
        envelope_slope,
        b_hat,
        m_const,
    })
}

/// One row of `diagnostics.csv`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DiagnosticsRow {
    pub t: f64,
    #[serde(rename = "V")]
    pub v: f64,
    #[serde(rename = "Vh")]
    pub vh: f64,
    #[serde(rename = "Vbar")]
    pub vbar: f64,
    #[serde(rename = "Phi")]
    pub phi: f64,
    pub sdot: f64,
    pub bound_rhs: f64,
}

pub fn diagnostics_rows(trace: &[TraceRecord], consts: &LyapunovConstants) -> Vec<DiagnosticsRow> {
    trace
        .iter()
        .map(|r| DiagnosticsRow {
            t: r.t,
            v: r.v,
            vh: r.vh,
            vbar: r.vbar,
            phi: r.phi,
            sdot: r.sdot,
            bound_rhs: consts.bound_rhs(r.vbar, r.sdot),
        })
        .collect()
}
