//! Two-level sweeps through an avoided crossing against the closed-form
//! transition probability.

use num_complex::Complex64 as C64;

use mist_core::floquet::landau_zener_probability;
use mist_core::ode::{dopri5, Tolerance};
use mist_core::propagate::{DrivenSystem, LawsonRk4, SplitVec};

const SWEEP: f64 = 100.0;

/// Adiabatic eigenvectors `(ground, excited)` of `[[d, g], [g, -d]]`.
fn adiabatic(d: f64, g: f64) -> ([f64; 2], [f64; 2]) {
    let e = d.hypot(g);
    let norm = |v: [f64; 2]| {
        let n = v[0].hypot(v[1]);
        [v[0] / n, v[1] / n]
    };
    (norm([g, -d - e]), norm([g, e - d]))
}

/// `H = (v t/2) σz + (Δ/2) σx` from `-T` to `T`, starting in the adiabatic
/// ground state; returns the population of the adiabatic excited state,
/// i.e. the probability of the diabatic passage.
fn passage_dopri(gap: f64, rate: f64) -> f64 {
    let t_end = SWEEP / rate.sqrt();
    let g = 0.5 * gap;
    // y = (Re a, Im a, Re b, Im b), i ȧ = d a + g b, i ḃ = g a - d b.
    let f = |t: f64, y: &[f64; 4]| -> [f64; 4] {
        let d = 0.5 * rate * t;
        let (ar, ai, br, bi) = (y[0], y[1], y[2], y[3]);
        [d * ai + g * bi, -(d * ar + g * br), g * ai - d * bi, -(g * ar - d * br)]
    };
    let (ground, _) = adiabatic(-0.5 * rate * t_end, g);
    let mut h = 1e-3;
    let tol = Tolerance {
        atol: 1e-11,
        rtol: 1e-11,
        max_steps: 50_000_000,
    };
    let y = dopri5(&f, -t_end, t_end, [ground[0], 0.0, ground[1], 0.0], &mut h, tol).unwrap();
    let (_, excited) = adiabatic(0.5 * rate * t_end, g);
    let re = excited[0] * y[0] + excited[1] * y[2];
    let im = excited[0] * y[1] + excited[1] * y[3];
    re * re + im * im
}

/// Same sweep with the library's integrating-factor stepper, written in the
/// σx eigenbasis `{|-⟩, |+⟩}` so that the gap is the static part and the
/// sweep the drive.
fn passage_lawson(gap: f64, rate: f64) -> f64 {
    let t_end = SWEEP / rate.sqrt();
    let g = 0.5 * gap;
    let sys = DrivenSystem::new(vec![-g, g], vec![0.0, 0.5, 0.5, 0.0]);
    let steps = 400_000;
    let h = 2.0 * t_end / steps as f64;
    let mut stepper = LawsonRk4::new(&sys, h);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let to_x = |v: [f64; 2]| [C64::new(s * (v[0] - v[1]), 0.0), C64::new(s * (v[0] + v[1]), 0.0)];
    let (ground, _) = adiabatic(-0.5 * rate * t_end, g);
    let mut u = SplitVec::from_complex(&to_x(ground));
    for k in 0..steps {
        let t = -t_end + k as f64 * h;
        stepper.step(&mut u, [rate * t, rate * (t + 0.5 * h), rate * (t + h)]);
    }
    let (_, excited) = adiabatic(0.5 * rate * t_end, g);
    let e = to_x(excited);
    let psi = u.to_complex();
    (e[0].conj() * psi[0] + e[1].conj() * psi[1]).norm_sqr()
}

fn check(route: impl Fn(f64, f64) -> f64, name: &str) {
    for x in [0.1f64, 0.3, 0.6, 1.0, 1.5, 2.0, 3.0] {
        let rate: f64 = 1.0;
        let gap = (x * rate).sqrt();
        let numeric = route(gap, rate);
        let exact = (-std::f64::consts::PI * x / 2.0).exp();
        assert!(
            (numeric / exact - 1.0).abs() < 0.05,
            "{name}: Δ²/v = {x}: {numeric} vs {exact}"
        );
        assert!((landau_zener_probability(gap, rate) - exact).abs() < 1e-15);
    }
}

#[test]
fn dopri_sweep_matches_closed_form() {
    check(passage_dopri, "dopri5");
}

#[test]
fn lawson_sweep_matches_closed_form() {
    check(passage_lawson, "lawson");
}
