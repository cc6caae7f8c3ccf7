//! Independent reference computations checked against the library.
//!
//! Nothing here calls back into the quantity being tested: dwell times come
//! from bisection, the held-input subsystem from RK4, and the solver is
//! compared with the exact similarity solution of the one-phase problem.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stefan_etc::cbf::CbfSnapshot;
use stefan_etc::controller::{
    h23_closed_form, m1_lower_bound_poly, m2_lower_bound_poly, m_functions, min_dwell_time, trigger_fired,
    EtcState,
};
use stefan_etc::diagnostics::{forward_transform_profile, inverse_transform_profile, BacksteppingParams};
use stefan_etc::model::MaterialPreset;
use stefan_etc::{ControllerGains, PlantParams, Solver, SolverSettings, StefanState, StencilOrder};

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Root of a function that is positive at 0 and decreasing, by bisection.
fn bisect_root(f: impl Fn(f64) -> f64) -> f64 {
    let mut hi = 1.0;
    while f(hi) > 0.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

fn random_gains(rng: &mut ChaCha8Rng) -> ControllerGains {
    let log_uniform = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| (rng.gen_range(lo.ln()..hi.ln())).exp();
    let c1 = log_uniform(rng, 1e-4, 10.0);
    let c2 = log_uniform(rng, 1e-4, 10.0);
    let d1 = log_uniform(rng, 0.1, 20.0);
    let d2 = rng.gen_range(0.02..0.98);
    ControllerGains::new(c1, c2, d1, d2)
}

#[test]
fn dwell_time_matches_bisection_on_random_gains() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_d3e1);
    for _ in 0..100 {
        let g = random_gains(&mut rng);
        let mu1 = (g.delta1 * g.c1).min((1.0 - g.delta2) * g.c2);
        let cbar2 = (1.0 + g.delta2) * g.c2;
        let p1 = |x: f64| -0.5 * (1.0 - g.delta2) * g.c1 * g.c1 * g.c2 * x * x - g.c1 * (mu1 + g.c1) * x + mu1;
        let p2 = |x: f64| -0.5 * g.c1 * cbar2 * x * x - (g.c1 + cbar2) * x + g.delta2;
        let (t1, t2) = (bisect_root(p1), bisect_root(p2));
        let dwell = min_dwell_time(&g);
        assert!(rel_err(dwell.tau1, t1) <= 1e-9, "{g:?}: tau1 {} vs {t1}", dwell.tau1);
        assert!(rel_err(dwell.tau2, t2) <= 1e-9, "{g:?}: tau2 {} vs {t2}", dwell.tau2);
        assert!(rel_err(dwell.tau, t1.min(t2)) <= 1e-9);
        // The library's bound polynomials are the same quadratics.
        for x in [0.0, 0.5 * t1, t1, 2.0 * t1] {
            assert!((m1_lower_bound_poly(&g, x) - p1(x)).abs() <= 1e-12 * (1.0 + p1(x).abs()));
        }
        for x in [0.0, 0.5 * t2, t2, 2.0 * t2] {
            assert!((m2_lower_bound_poly(&g, x) - p2(x)).abs() <= 1e-12 * (1.0 + p2(x).abs()));
        }
    }
}

/// RK4 for `ḣ₂ = U`, `ḣ₃ = −U − c₁h₂`.
fn rk4_h23(h2: f64, h3: f64, u: f64, c1: f64, t: f64, steps: usize) -> (f64, f64) {
    let f = |h2: f64| (u, -u - c1 * h2);
    let h = t / steps as f64;
    let (mut a, mut b) = (h2, h3);
    for _ in 0..steps {
        let k1 = f(a);
        let k2 = f(a + 0.5 * h * k1.0);
        let k3 = f(a + 0.5 * h * k2.0);
        let k4 = f(a + h * k3.0);
        a += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        b += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
    }
    (a, b)
}

fn event_state(h2: f64, h3: f64, t_j: f64, g: &ControllerGains) -> EtcState {
    let snap = CbfSnapshot { t: t_j, h1: 0.0, h2, h3, h_min: 0.0 };
    EtcState::at_event(&snap, g, 1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn closed_form_matches_rk4(
        h2 in 0.0..1e3f64,
        h3 in 0.0..1e3f64,
        c1 in 1e-3..5.0f64,
        c2 in 1e-3..5.0f64,
        d2 in 0.05..0.95f64,
        frac in 0.0..3.0f64,
    ) {
        let g = ControllerGains::new(c1, c2, 10.0, d2);
        let etc = event_state(h2, h3, 7.0, &g);
        let t = frac * min_dwell_time(&g).tau;
        let (a, b) = h23_closed_form(&etc, &g, 7.0 + t);
        let (ra, rb) = rk4_h23(h2, h3, etc.u_held, c1, t, 64);
        let scale = h2.abs() + h3.abs() + etc.u_held.abs() * t + 1e-300;
        prop_assert!((a - ra).abs() <= 1e-10 * scale, "h2 {a} vs {ra}");
        prop_assert!((b - rb).abs() <= 1e-10 * scale, "h3 {b} vs {rb}");
    }

    /// `m₁ = μ₁h₂ + δ₂c₂h₃ − Ũ*`, `m₂ = Ũ* + δ₂c₂h₃` evaluated from the RK4
    /// trajectory agree with the explicit quadratics.
    #[test]
    fn m_functions_match_definition(
        h2 in 0.0..1e3f64,
        h3 in 0.0..1e3f64,
        c1 in 1e-3..5.0f64,
        c2 in 1e-3..5.0f64,
        d1 in 0.1..20.0f64,
        d2 in 0.05..0.95f64,
        frac in 0.0..3.0f64,
    ) {
        let g = ControllerGains::new(c1, c2, d1, d2);
        let mu1 = (d1 * c1).min((1.0 - d2) * c2);
        let etc = event_state(h2, h3, 0.0, &g);
        let t = frac * min_dwell_time(&g).tau;
        let (a, b) = rk4_h23(h2, h3, etc.u_held, c1, t, 64);
        let u_err = (-c1 * a + c2 * b) - (-c1 * h2 + c2 * h3);
        let m1 = mu1 * a + d2 * c2 * b - u_err;
        let m2 = u_err + d2 * c2 * b;
        let (l1, l2) = m_functions(&etc, &g, t);
        let scale = (c1 + c2 + mu1) * (h2 + h3 + etc.u_held.abs() * t) + 1e-300;
        prop_assert!((l1 - m1).abs() <= 1e-12 * scale, "m1 {l1} vs {m1}");
        prop_assert!((l2 - m2).abs() <= 1e-12 * scale, "m2 {l2} vs {m2}");
    }

    /// For `h₂(t_j), h₃(t_j) ≥ 0` the margins dominate the bound quadratics.
    #[test]
    fn bound_quadratics_are_lower_bounds(
        h2 in 0.0..1e3f64,
        h3 in 0.0..1e3f64,
        c1 in 1e-3..5.0f64,
        c2 in 1e-3..5.0f64,
        d1 in 0.1..20.0f64,
        d2 in 0.05..0.95f64,
        frac in 0.0..2.0f64,
    ) {
        let g = ControllerGains::new(c1, c2, d1, d2);
        let etc = event_state(h2, h3, 0.0, &g);
        let t = frac * min_dwell_time(&g).tau;
        let (m1, m2) = m_functions(&etc, &g, t);
        let tol = 1e-12 * (c1 + c2) * (1.0 + h2 + h3) * (1.0 + t);
        prop_assert!(m1 >= h2 * m1_lower_bound_poly(&g, t) - tol);
        prop_assert!(m2 >= c2 * h3 * m2_lower_bound_poly(&g, t) - tol);
    }

    /// While the trigger is quiet the held input keeps both barrier rates
    /// above their class-K bounds.
    #[test]
    fn quiet_trigger_implies_barrier_rates(
        h2 in 0.0..10.0f64,
        h3 in 0.0..10.0f64,
        u_held in -5.0..5.0f64,
        c1 in 1e-3..2.0f64,
        c2 in 1e-3..2.0f64,
        d1 in 0.1..20.0f64,
        d2 in 0.05..0.95f64,
    ) {
        let g = ControllerGains::new(c1, c2, d1, d2);
        let snap = CbfSnapshot { t: 1.0, h1: 0.0, h2, h3, h_min: 0.0 };
        let etc = EtcState { t_j: 0.0, u_held, h2_at_event: 0.0, h3_at_event: 0.0, event_count: 1 };
        if trigger_fired(&snap, &etc, &g).is_none() {
            let h2_dot = u_held;
            let h3_dot = -u_held - c1 * h2;
            let tol = 1e-12 * (1.0 + u_held.abs() + h2 + h3);
            prop_assert!(h2_dot >= -(1.0 + d1) * c1 * h2 - tol);
            prop_assert!(h3_dot >= -(1.0 + d2) * c2 * h3 - tol);
        }
    }
}

fn smooth_profile(rng: &mut ChaCha8Rng, s: f64, n: usize) -> Vec<f64> {
    let a: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
    (0..n)
        .map(|i| {
            let y = i as f64 / (n - 1) as f64;
            let shape = a[0] + a[1] * (std::f64::consts::PI * y).sin() + a[2] * (3.0 * y).cos() * y + a[3] * y * y;
            // Vanishes at the interface, like any admissible temperature excess.
            shape * (1.0 - y) * s.max(1.0)
        })
        .collect()
}

fn roundtrip_error(h: &[f64], s: f64, x_err: f64, bp: &BacksteppingParams) -> f64 {
    let w = forward_transform_profile(h, s, x_err, bp);
    let back = inverse_transform_profile(&w, s, x_err, bp);
    let scale = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    back.iter().zip(h).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale
}

#[test]
fn transform_roundtrip_converges_at_second_order() {
    let params = MaterialPreset::Nondimensional.params();
    let c1 = 3.2;
    let bp = BacksteppingParams::new(&params, c1, BacksteppingParams::default_epsilon(&params, c1)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..10 {
        let s = rng.gen_range(0.05..0.3);
        let x_err = s - 0.3;
        let coarse_n = 101;
        let fine_n = 201;
        let coeffs = rng.gen::<u64>();
        let h_coarse = smooth_profile(&mut ChaCha8Rng::seed_from_u64(coeffs), s, coarse_n);
        let h_fine = smooth_profile(&mut ChaCha8Rng::seed_from_u64(coeffs), s, fine_n);
        let e_coarse = roundtrip_error(&h_coarse, s, x_err, &bp);
        let e_fine = roundtrip_error(&h_fine, s, x_err, &bp);
        let ratio = e_coarse / e_fine;
        assert!((3.5..4.5).contains(&ratio), "refinement ratio {ratio} ({e_coarse} -> {e_fine})");

        let w = forward_transform_profile(&h_fine, s, x_err, &bp);
        assert_eq!(*w.last().unwrap(), bp.epsilon * x_err);
    }
}

/// Neumann similarity solution with `s = 2λ√(αt)`:
/// `T = T_m + A(erf λ − erf(x/(2√(αt))))` with `A = λα√π·e^{λ²}/β`, driven
/// by the boundary flux `kA/√(παt)`.
struct Similarity {
    params: PlantParams,
    lambda: f64,
    amp: f64,
}

impl Similarity {
    fn new(params: PlantParams, lambda: f64) -> Self {
        let amp = lambda * params.alpha * std::f64::consts::PI.sqrt() * (lambda * lambda).exp() / params.beta;
        Self { params, lambda, amp }
    }

    fn s(&self, t: f64) -> f64 {
        2.0 * self.lambda * (self.params.alpha * t).sqrt()
    }

    fn flux(&self, t: f64) -> f64 {
        self.params.k * self.amp / (std::f64::consts::PI * self.params.alpha * t).sqrt()
    }

    fn state(&self, t: f64, n: usize) -> StefanState {
        let s = self.s(t);
        let root = 2.0 * (self.params.alpha * t).sqrt();
        let theta = (0..n)
            .map(|i| {
                let x = s * i as f64 / (n - 1) as f64;
                self.params.t_melt + self.amp * (libm::erf(self.lambda) - libm::erf(x / root))
            })
            .collect();
        StefanState { t, s, qc: self.flux(t), theta }
    }
}

fn similarity_error(n: usize, stencil: StencilOrder) -> f64 {
    let params = MaterialPreset::Nondimensional.params();
    let exact = Similarity::new(params, 0.5);
    let (t0, t1) = (0.01, 0.09);
    let dt = SolverSettings::stability_limit(exact.s(t0), n, params.alpha, 0.9);
    let steps = ((t1 - t0) / dt).ceil() as usize;
    let dt = (t1 - t0) / steps as f64;
    let settings = SolverSettings { n, dt, cfl_safety: 0.9, stencil };
    let mut solver = Solver::new(params, settings);
    let mut state = exact.state(t0, n);
    let mut worst = 0.0f64;
    for k in 0..steps {
        let (ta, tb) = (t0 + k as f64 * dt, t0 + (k + 1) as f64 * dt);
        state.qc = exact.flux(ta);
        let u = (exact.flux(tb) - exact.flux(ta)) / dt;
        solver.step_in_place(&mut state, u, dt).unwrap();
        worst = worst.max((state.s - exact.s(tb)).abs() / exact.s(tb));
    }
    worst
}

#[test]
fn solver_tracks_similarity_solution() {
    for stencil in [StencilOrder::First, StencilOrder::Second] {
        let coarse = similarity_error(50, stencil);
        let fine = similarity_error(100, stencil);
        assert!(fine < 1e-2, "{stencil}: relative front error {fine}");
        assert!(fine < 0.75 * coarse, "{stencil}: no convergence ({coarse} -> {fine})");
    }
}
