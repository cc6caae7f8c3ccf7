//! Plant data model, assumption checks and the energy functional.

use std::fmt;

use crate::controller::ControllerGains;
use crate::quad;
use crate::trace::{TraceError, TraceRecord};

/// Physical constants of the one-phase Stefan plant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantParams {
    /// Thermal diffusivity of the liquid [m²/s].
    pub alpha: f64,
    /// Stefan coefficient multiplying the interface gradient [m²/(s·K)].
    pub beta: f64,
    /// Thermal conductivity [W/(m·K)].
    pub k: f64,
    /// Material length `L` [m].
    pub length: f64,
    /// Melting temperature [°C].
    pub t_melt: f64,
}

impl PlantParams {
    pub fn violations(&self) -> Vec<AssumptionViolation> {
        let mut out = Vec::new();
        for (name, value) in [
            ("alpha > 0", self.alpha),
            ("beta > 0", self.beta),
            ("k > 0", self.k),
            ("L > 0", self.length),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                out.push(AssumptionViolation::new(name, value, 0.0));
            }
        }
        if !self.t_melt.is_finite() {
            out.push(AssumptionViolation::new("T_m finite", self.t_melt, 0.0));
        }
        out
    }
}

/// Named material presets.
///
/// `Zinc` derives `alpha = k/(rho·c_p)` and `beta = k/(rho·ΔH)` from the
/// handbook values used in the backstepping Stefan literature:
/// `rho = 6570 kg/m³`, `c_p = 389.5 J/(kg·K)`, `ΔH = 111 961 J/kg`,
/// `k = 116 W/(m·K)`, `T_m = 420 °C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaterialPreset {
    Zinc,
    Nondimensional,
}

pub const ZINC_DENSITY: f64 = 6570.0;
pub const ZINC_HEAT_CAPACITY: f64 = 389.5;
pub const ZINC_LATENT_HEAT: f64 = 111_961.0;
pub const ZINC_CONDUCTIVITY: f64 = 116.0;
pub const ZINC_MELTING_POINT: f64 = 420.0;

/// Default material length; strictly above the 0.30 m setpoint of the zinc
/// scenario.
pub const DEFAULT_LENGTH: f64 = 0.35;

impl MaterialPreset {
    pub fn from_name(name: &str) -> Option<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "zinc" => Some(Self::Zinc),
            "nondimensional" | "nondim" | "unit" => Some(Self::Nondimensional),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Zinc => "zinc",
            Self::Nondimensional => "nondimensional",
        }
    }

    pub fn params(&self) -> PlantParams {
        match self {
            Self::Zinc => PlantParams {
                alpha: ZINC_CONDUCTIVITY / (ZINC_DENSITY * ZINC_HEAT_CAPACITY),
                beta: ZINC_CONDUCTIVITY / (ZINC_DENSITY * ZINC_LATENT_HEAT),
                k: ZINC_CONDUCTIVITY,
                length: DEFAULT_LENGTH,
                t_melt: ZINC_MELTING_POINT,
            },
            Self::Nondimensional => PlantParams {
                alpha: 1.0,
                beta: 1.0,
                k: 1.0,
                length: DEFAULT_LENGTH,
                t_melt: 0.0,
            },
        }
    }
}

/// Shape of the initial liquid temperature profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileShape {
    /// `T0(x) = T_m + amplitude·(1 − x/s0)`.
    Linear,
    /// `T0 ≡ T_m`.
    Flat,
}

impl ProfileShape {
    pub fn from_name(name: &str) -> Option<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "linear" => Some(Self::Linear),
            "flat" => Some(Self::Flat),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Flat => "flat",
        }
    }
}

/// Initial interface position, temperature samples and heat flux.
///
/// `theta0` holds `N` samples of `T0` on the normalized coordinate
/// `y = x/s0 ∈ [0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialCondition {
    pub s0: f64,
    pub theta0: Vec<f64>,
    pub qc0: f64,
}

impl InitialCondition {
    pub fn from_shape(
        params: &PlantParams,
        shape: ProfileShape,
        s0: f64,
        amplitude: f64,
        n: usize,
        qc0: f64,
    ) -> Self {
        let dy = 1.0 / (n.max(2) - 1) as f64;
        let theta0 = (0..n)
            .map(|i| match shape {
                ProfileShape::Linear if i + 1 == n => params.t_melt,
                ProfileShape::Linear => params.t_melt + amplitude * (1.0 - i as f64 * dy),
                ProfileShape::Flat => params.t_melt,
            })
            .collect();
        Self { s0, theta0, qc0 }
    }

    /// `∫₀^{s0} (T0 − T_m) dx` by the trapezoid rule.
    pub fn heat_content(&self, params: &PlantParams) -> f64 {
        let n = self.theta0.len();
        if n < 2 {
            return 0.0;
        }
        let dx = self.s0 / (n - 1) as f64;
        quad::trapezoid_map(&self.theta0, dx, |t| t - params.t_melt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Setpoint {
    pub s_r: f64,
}

/// Instantaneous plant state on the boundary-immobilised grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StefanState {
    /// Time [s].
    pub t: f64,
    /// Interface position [m].
    pub s: f64,
    /// Boundary heat flux [W/m²].
    pub qc: f64,
    /// Temperature samples on `y = x/s ∈ [0, 1]` [°C].
    pub theta: Vec<f64>,
}

impl StefanState {
    pub fn from_initial(ic: &InitialCondition) -> Self {
        Self {
            t: 0.0,
            s: ic.s0,
            qc: ic.qc0,
            theta: ic.theta0.clone(),
        }
    }

    /// Uniform equilibrium state `T ≡ T_m`, `q_c = 0`.
    pub fn equilibrium(params: &PlantParams, s: f64, n: usize) -> Self {
        Self {
            t: 0.0,
            s,
            qc: 0.0,
            theta: vec![params.t_melt; n],
        }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Normalized grid spacing `Δy`.
    pub fn dy(&self) -> f64 {
        1.0 / (self.theta.len() - 1) as f64
    }

    /// Physical grid spacing `s·Δy`.
    pub fn dx(&self) -> f64 {
        self.s * self.dy()
    }

    /// Physical node positions `x_i = s·y_i`.
    pub fn nodes(&self) -> Vec<f64> {
        let dx = self.dx();
        (0..self.theta.len()).map(|i| i as f64 * dx).collect()
    }

    /// `T − T_m` at every node.
    pub fn excess(&self, params: &PlantParams) -> Vec<f64> {
        self.theta.iter().map(|t| t - params.t_melt).collect()
    }

    /// `∫₀^s (T − T_m) dx` by the trapezoid rule.
    pub fn heat_content(&self, params: &PlantParams) -> f64 {
        quad::trapezoid_map(&self.theta, self.dx(), |t| t - params.t_melt)
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.s.is_finite()
            && self.qc.is_finite()
            && self.theta.iter().all(|v| v.is_finite())
    }
}

/// Energy functional `σ = −[(k/α)∫₀^s (T − T_m) dx + (k/β)(s − s_r)]`.
pub fn sigma(state: &StefanState, params: &PlantParams, sp: &Setpoint) -> f64 {
    -(params.k / params.alpha * state.heat_content(params) + params.k / params.beta * (state.s - sp.s_r))
}

/// One failed assumption with the offending value and the bound it broke.
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionViolation {
    pub name: String,
    pub actual: f64,
    pub bound: f64,
}

impl AssumptionViolation {
    pub fn new(name: impl Into<String>, actual: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            actual,
            bound,
        }
    }
}

impl fmt::Display for AssumptionViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} violated: actual {} vs bound {}", self.name, self.actual, self.bound)
    }
}

/// Gain condition `c₁ ≥ q_c(0)/σ(0)`, checked in the multiplied form
/// `q_c(0) ≤ c₁·σ(0)` so that `q_c(0) = 0` passes whenever `σ(0) ≥ 0`.
pub fn check_gain_condition(qc0: f64, sigma0: f64, c1: f64) -> Option<AssumptionViolation> {
    if qc0 <= c1 * sigma0 {
        None
    } else {
        let bound = if sigma0 > 0.0 { qc0 / sigma0 } else { f64::INFINITY };
        Some(AssumptionViolation::new("gain condition", c1, bound))
    }
}

/// Checks the initial-data assumptions and the gain condition.
///
/// Returns every violated assumption, not just the first.
pub fn validate_config(
    params: &PlantParams,
    ic: &InitialCondition,
    sp: &Setpoint,
    gains: &ControllerGains,
) -> Result<(), Vec<AssumptionViolation>> {
    let mut out = params.violations();
    out.extend(gains.violations());
    if !out.is_empty() {
        return Err(out);
    }

    if !(ic.s0 > 0.0) {
        out.push(AssumptionViolation::new("Assumption 1", ic.s0, 0.0));
    }
    if !(ic.s0 < params.length) {
        out.push(AssumptionViolation::new("Assumption 1", ic.s0, params.length));
    }
    if ic.theta0.len() < 2 {
        out.push(AssumptionViolation::new("Assumption 1", ic.theta0.len() as f64, 2.0));
        return Err(out);
    }
    if let Some(min) = ic.theta0.iter().copied().reduce(f64::min) {
        if !(min >= params.t_melt) {
            out.push(AssumptionViolation::new("Assumption 1", min, params.t_melt));
        }
    }
    let last = *ic.theta0.last().unwrap();
    if last != params.t_melt {
        out.push(AssumptionViolation::new("Assumption 1", last, params.t_melt));
    }

    if !(ic.qc0 >= 0.0) {
        out.push(AssumptionViolation::new("Assumption 2", ic.qc0, 0.0));
    }

    let lower = ic.s0 + params.beta / params.alpha * ic.heat_content(params);
    if !(lower <= sp.s_r) {
        out.push(AssumptionViolation::new("Assumption 3", sp.s_r, lower));
    }
    if !(sp.s_r < params.length) {
        out.push(AssumptionViolation::new("Assumption 3", sp.s_r, params.length));
    }

    let state = StefanState::from_initial(ic);
    if ic.s0 > 0.0 {
        let sigma0 = sigma(&state, params, sp);
        if let Some(v) = check_gain_condition(ic.qc0, sigma0, gains.c1) {
            out.push(v);
        }
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// `max_t |σ(t) − σ(0) + ∫₀ᵗ q_c dτ|` over a completed trace.
///
/// The flux integral uses the trapezoid rule on the recorded times.
pub fn energy_balance_defect(trace: &[TraceRecord]) -> Result<f64, TraceError> {
    let first = trace.first().ok_or(TraceError::EmptyTrace)?;
    let sigma0 = first.h1;
    let mut integral = 0.0;
    let mut worst = 0.0f64;
    for pair in trace.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        integral += 0.5 * (b.t - a.t) * (a.qc + b.qc);
        worst = worst.max((b.h1 - sigma0 + integral).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_params() -> PlantParams {
        MaterialPreset::Nondimensional.params()
    }

    fn zinc_gains() -> ControllerGains {
        ControllerGains::new(3.2e-3, 5e-3, 10.0, 0.3)
    }

    fn zinc_ic(n: usize) -> (PlantParams, InitialCondition, Setpoint) {
        let p = MaterialPreset::Zinc.params();
        let ic = InitialCondition::from_shape(&p, ProfileShape::Linear, 0.05, 1.0, n, 0.0);
        (p, ic, Setpoint { s_r: 0.30 })
    }

    #[test]
    fn zinc_scenario_is_valid() {
        let (p, ic, sp) = zinc_ic(200);
        assert_eq!(validate_config(&p, &ic, &sp, &zinc_gains()), Ok(()));
    }

    #[test]
    fn interface_at_length_breaks_assumption_one() {
        let (p, _, sp) = zinc_ic(50);
        let ic = InitialCondition::from_shape(&p, ProfileShape::Linear, p.length, 1.0, 50, 0.0);
        let errs = validate_config(&p, &ic, &sp, &zinc_gains()).unwrap_err();
        assert!(errs.iter().any(|v| v.name == "Assumption 1"));
    }

    #[test]
    fn gain_condition_arithmetic() {
        let v = check_gain_condition(1.0, 100.0, 0.005).expect("0.005 < 1/100");
        assert_eq!(v.name, "gain condition");
        assert!((v.bound - 0.01).abs() < 1e-15);
        assert!(check_gain_condition(0.0, 100.0, 1e-9).is_none());
        assert!(check_gain_condition(1.0, 100.0, 0.01).is_none());
    }

    #[test]
    fn single_field_mutations_are_rejected() {
        let (p, ic, sp) = zinc_ic(64);
        let g = zinc_gains();
        let expect = |p: &PlantParams, ic: &InitialCondition, sp: &Setpoint, g: &ControllerGains, name: &str| {
            let errs = validate_config(p, ic, sp, g).unwrap_err();
            assert!(errs.iter().any(|v| v.name.contains(name)), "{name}: {errs:?}");
        };

        let mut bad = ic.clone();
        bad.qc0 = -1.0;
        expect(&p, &bad, &sp, &g, "Assumption 2");

        let mut bad = ic.clone();
        bad.theta0[3] = p.t_melt - 0.5;
        expect(&p, &bad, &sp, &g, "Assumption 1");

        let mut bad = ic.clone();
        *bad.theta0.last_mut().unwrap() += 0.1;
        expect(&p, &bad, &sp, &g, "Assumption 1");

        expect(&p, &ic, &Setpoint { s_r: 0.36 }, &g, "Assumption 3");
        expect(&p, &ic, &Setpoint { s_r: 0.04 }, &g, "Assumption 3");

        let mut bad = ic.clone();
        bad.qc0 = 1e9;
        expect(&p, &bad, &sp, &g, "gain condition");

        expect(&p, &ic, &sp, &ControllerGains::new(3.2e-3, 5e-3, 10.0, 1.5), "delta2");
        expect(&p, &ic, &sp, &ControllerGains::new(-1.0, 5e-3, 10.0, 0.3), "c1");

        let mut bp = p;
        bp.alpha = 0.0;
        expect(&bp, &ic, &sp, &g, "alpha");
    }

    #[test]
    fn sigma_vanishes_at_equilibrium() {
        let p = MaterialPreset::Zinc.params();
        for n in [8, 33, 200] {
            let st = StefanState::equilibrium(&p, 0.3, n);
            assert_eq!(sigma(&st, &p, &Setpoint { s_r: 0.3 }), 0.0);
        }
    }

    #[test]
    fn sigma_of_linear_profile() {
        let p = unit_params();
        let ic = InitialCondition::from_shape(&p, ProfileShape::Linear, 0.05, 1.0, 101, 0.0);
        let st = StefanState::from_initial(&ic);
        let got = sigma(&st, &p, &Setpoint { s_r: 0.30 });
        assert!((got - 0.225).abs() < 1e-14, "{got}");
    }

    #[test]
    fn sigma_of_flat_profile_below_setpoint() {
        let p = MaterialPreset::Zinc.params();
        let st = StefanState::equilibrium(&p, 0.2, 40);
        let got = sigma(&st, &p, &Setpoint { s_r: 0.3 });
        let want = p.k / p.beta * 0.1;
        assert!((got - want).abs() <= 1e-12 * want);
    }

    #[test]
    fn energy_defect_trivial_traces() {
        assert_eq!(energy_balance_defect(&[]), Err(TraceError::EmptyTrace));
        let rec = TraceRecord {
            h1: 3.0,
            ..TraceRecord::default()
        };
        assert_eq!(energy_balance_defect(std::slice::from_ref(&rec)), Ok(0.0));
        let mut later = rec.clone();
        later.t = 10.0;
        assert_eq!(energy_balance_defect(&[rec, later]), Ok(0.0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn sigma_is_affine_in_uniform_shift(
                samples in proptest::collection::vec(0.0f64..5.0, 8..60),
                shift in -2.0f64..2.0,
                s in 0.01f64..0.3,
            ) {
                let p = MaterialPreset::Zinc.params();
                let sp = Setpoint { s_r: 0.3 };
                let theta: Vec<f64> = samples.iter().map(|v| p.t_melt + v).collect();
                let st = StefanState { t: 0.0, s, qc: 0.0, theta };
                let mut shifted = st.clone();
                shifted.theta.iter_mut().for_each(|v| *v += shift);
                let lhs = sigma(&shifted, &p, &sp);
                let rhs = sigma(&st, &p, &sp) - p.k / p.alpha * s * shift;
                let scale = sigma(&st, &p, &sp).abs().max(p.k / p.alpha * s * shift.abs()).max(1.0);
                prop_assert!((lhs - rhs).abs() <= 1e-12 * scale);
            }
        }
    }
}
