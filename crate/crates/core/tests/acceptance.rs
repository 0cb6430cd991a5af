//! Acceptance suite. Runs every criterion in turn, prints one PASS/FAIL line
//! for each and exits non-zero if any failed.
//!
//! The long quantum tier of criterion 14 runs only with `MIST_LONG_TIER=1`.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mist_core::circuit::{resonance_condition_map, ResonanceQuery};
use mist_core::dynamics::{
    eps_d_for_photons, lorentzian_photons, steady_state_photon_number, DriveProtocol, ReadoutModel, ReadoutSettings,
};
use mist_core::fitting::{best, fit_multistart, FitModel, ModelVariant, SpectroscopyTargets};
use mist_core::floquet::{
    circular_distance, floquet_eigensystem, fold, landau_zener_probability, DispersionCurve, DrivenTransmon,
};
use mist_core::maps::{high_frequency_power, is_non_monotone, is_resolved, slice, survival_drops, transition_map, MapRow, MapSpec};
use mist_core::ode::{dopri5, Tolerance};
use mist_core::oracle::{evolve_density_matrix, evolve_model, OracleModel, Truncation};
use mist_core::presets::{preset, Preset};
use mist_core::transmon::{
    charge_dispersion, half_period_grid, inductance_from_energy, series_inductance_harmonics, Spectrum,
    TransmonParams,
};
use mist_core::units::{from_ghz, from_mhz, to_ghz, to_khz, to_mhz};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn device_b() -> Preset {
    preset("device-B-multiharmonic").unwrap()
}

/// Rounds to `digits` significant figures.
fn sig(x: f64, digits: i32) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let scale = 10f64.powi(digits - 1 - x.abs().log10().floor() as i32);
    (x * scale).round() / scale
}

fn free_rotor() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let e_c = from_ghz(rng.gen_range(0.05..2.0));
        let n_g = rng.gen_range(-1.0..1.0);
        let p = TransmonParams::new(e_c, vec![0.0], n_g, 0.0).map_err(|e| e.to_string())?;
        let s = Spectrum::solve(&p, 20).map_err(|e| e.to_string())?;
        let mut exact: Vec<f64> = (-40..=40).map(|k: i32| 4.0 * e_c * (k as f64 - n_g).powi(2)).collect();
        exact.sort_by(f64::total_cmp);
        for (a, b) in s.energies.iter().zip(&exact) {
            worst = worst.max((a - b).abs() / b.abs().max(e_c));
        }
    }
    ensure(worst < 1e-10, format!("max relative error {worst:.2e}"))
}

fn dispersion() -> Outcome {
    let grid = half_period_grid(51);
    let a = charge_dispersion(&preset("device-A").unwrap().circuit.transmon, 1, &grid).map_err(|e| e.to_string())?;
    let b = charge_dispersion(&device_b().circuit.transmon, 1, &grid).map_err(|e| e.to_string())?;
    let (a_mhz, b_khz) = (to_mhz(a), to_khz(b));
    ensure(
        (6.0..=13.5).contains(&a_mhz) && (25.0..=100.0).contains(&b_khz),
        format!("device A {a_mhz:.3} MHz, device B {b_khz:.2} kHz"),
    )
}

fn fit_targets() -> SpectroscopyTargets {
    SpectroscopyTargets::synthesize(&device_b().circuit, &SpectroscopyTargets::standard_kinds()).unwrap()
}

fn fit_round_trip() -> Outcome {
    let p = device_b();
    let init = FitModel {
        circuit: p.circuit.clone(),
        e_l: None,
    };
    let truth = init.vector(ModelVariant::Multiharmonic).map_err(|e| e.to_string())?;
    let results = fit_multistart(&fit_targets(), ModelVariant::Multiharmonic, &init, 5, 2024).map_err(|e| e.to_string())?;
    let mut good = 0;
    let mut worst = Vec::new();
    for r in &results {
        let x = r.model.vector(ModelVariant::Multiharmonic).map_err(|e| e.to_string())?;
        let err = x.iter().zip(&truth).map(|(a, b)| ((a - b) / b).abs()).fold(0.0, f64::max);
        worst.push(format!("{err:.1e}"));
        if err < 1e-3 {
            good += 1;
        }
    }
    ensure(good >= 4, format!("{good}/5 seeds within 0.1% (worst relative error per seed {worst:?})"))
}

fn model_contrast() -> Outcome {
    let p = device_b();
    let targets = fit_targets();
    let multi = fit_multistart(
        &targets,
        ModelVariant::Multiharmonic,
        &FitModel {
            circuit: p.circuit.clone(),
            e_l: None,
        },
        5,
        7,
    )
    .map_err(|e| e.to_string())?;
    let mut single = p.circuit.clone();
    single.transmon.e_j.truncate(1);
    let conv = fit_multistart(
        &targets.restricted(2),
        ModelVariant::Conventional,
        &FitModel {
            circuit: single,
            e_l: None,
        },
        5,
        7,
    )
    .map_err(|e| e.to_string())?;
    let rm = best(&multi).unwrap().ej_ec_ratio();
    let rc = best(&conv).unwrap().ej_ec_ratio();
    ensure(
        (rc - 43.5).abs() <= 0.5 && (rm - 40.2).abs() <= 0.3,
        format!("conventional E_J/E_C = {rc:.3}, multiharmonic {rm:.3}"),
    )
}

fn series_identities() -> Outcome {
    let h = series_inductance_harmonics(from_ghz(8.693), from_ghz(284.2)).map_err(|e| e.to_string())?;
    let r2 = 100.0 * h[1] / h[0];
    let r3 = 100.0 * h[2] / h[0];
    let l_nh = inductance_from_energy(from_ghz(284.2)) * 1e9;
    ensure(
        sig(r2, 3) == -0.765 && sig(r3, 3) == 0.0117 && sig(l_nh, 3) == 0.575,
        format!("E_J2/E_J1 = {r2:.5}%, E_J3/E_J1 = {r3:.6}%, L = {l_nh:.5} nH"),
    )
}

fn floquet_zero_drive() -> Outcome {
    let p = device_b();
    let t = DrivenTransmon::new(&p.circuit.transmon, 20, p.omega_d).map_err(|e| e.to_string())?;
    let u = t.propagator(0.0).map_err(|e| e.to_string())?;
    let fp = floquet_eigensystem(&u, p.omega_d).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for &e in t.energies() {
        let target = fold(e, p.omega_d);
        let d = fp
            .quasienergies
            .iter()
            .map(|&q| circular_distance(q, target, p.omega_d))
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(d);
    }
    let rel = worst / p.omega_d;
    ensure(rel < 1e-8 && fp.dim() == 20, format!("max distance {rel:.2e} ω_d"))
}

/// Device B at `n_g = 0.23` up to 160 photons, shared by criteria 7, 9, 12
/// and 13.
fn reference_model() -> ReadoutModel {
    let p = device_b();
    ReadoutModel::build(&p.circuit.with_n_g(0.23), p.omega_d, &ReadoutSettings::new(160.0)).unwrap()
}

fn critical_photons(model: &ReadoutModel) -> Outcome {
    let crit = model.track(0).map_err(|e| e.to_string())?.critical_photon_numbers();
    let ok = crit.len() >= 2 && (crit[0] - 88.0).abs() <= 9.0 && (crit[1] - 133.0).abs() <= 13.0;
    ensure(ok, format!("ground track switches at {crit:.1?}"))
}

fn crossing_structure() -> Outcome {
    let p = device_b();
    let settings = ReadoutSettings::new(110.0);
    let at = |n_g: f64| ReadoutModel::build(&p.circuit.with_n_g(n_g), p.omega_d, &settings).map(|m| m.crossings);
    let c01 = at(0.01).map_err(|e| e.to_string())?;
    let c11 = at(0.11).map_err(|e| e.to_string())?;
    let b09: Vec<f64> = c01.iter().filter(|c| c.branches == (0, 9)).map(|c| c.n_r).collect();
    let b08_resolved = c01.iter().any(|c| c.branches == (0, 8) && is_resolved(c));
    let b08: Vec<f64> = c11.iter().filter(|c| c.branches == (0, 8)).map(|c| c.n_r).collect();
    let ok = b09.iter().any(|n| (n - 95.0).abs() <= 10.0) && !b08_resolved && b08.iter().any(|n| (n - 40.0).abs() <= 6.0);
    ensure(
        ok,
        format!("n_g=0.01: B0/B9 at {b09:.1?}, resolved B0/B8 {b08_resolved}; n_g=0.11: B0/B8 at {b08:.1?}"),
    )
}

fn kerr_slopes(model: &ReadoutModel) -> Outcome {
    let mut slopes = Vec::new();
    for i in [0, 1] {
        let d = model.diabatic_dispersion(i).map_err(|e| e.to_string())?;
        let crit = model.track(i).map_err(|e| e.to_string())?.critical_photon_numbers();
        let end = crit.first().copied().unwrap_or(d.n_max());
        let s = d.slope(1.0, 0.75 * end).ok_or("too few samples in the Kerr window")?;
        slopes.push(to_khz(s));
    }
    let ok = (slopes[0] / -6.6 - 1.0).abs() <= 0.2 && (slopes[1] / -5.5 - 1.0).abs() <= 0.2;
    ensure(ok, format!("K_0 = {:.3} kHz, K_1 = {:.3} kHz", slopes[0], slopes[1]))
}

fn linear_cavity() -> Outcome {
    let omega_r = from_ghz(7.0);
    let kappa = from_mhz(1.0);
    let eps = from_mhz(2.0);
    let curve = DispersionCurve::constant(omega_r, 1e6);
    let mut worst: f64 = 0.0;
    for k in 0..20 {
        let detuning = from_mhz(-5.0 + 0.5 * k as f64 + 0.1);
        let n = steady_state_photon_number(eps, omega_r - detuning, &curve, kappa)
            .map_err(|e| e.to_string())?
            .lowest();
        let expect = (0.5 * eps).powi(2) / (detuning * detuning + 0.25 * kappa * kappa);
        worst = worst.max((n / expect - 1.0).abs());
        worst = worst.max((lorentzian_photons(eps, detuning, kappa) / expect - 1.0).abs());
    }
    ensure(worst < 1e-6, format!("max relative deviation {worst:.2e} over 20 detunings"))
}

/// Sweep of `(v t/2) σz + (Δ/2) σx` from the adiabatic ground state;
/// population of the adiabatic excited state at the end.
fn landau_zener_passage(gap: f64, rate: f64) -> f64 {
    let t_end = 100.0 / rate.sqrt();
    let g = 0.5 * gap;
    let adiabatic = |d: f64| {
        let e = d.hypot(g);
        let n0 = g.hypot(d + e);
        let n1 = g.hypot(e - d);
        ([g / n0, (-d - e) / n0], [g / n1, (e - d) / n1])
    };
    let f = |t: f64, y: &[f64; 4]| -> [f64; 4] {
        let d = 0.5 * rate * t;
        let (ar, ai, br, bi) = (y[0], y[1], y[2], y[3]);
        [d * ai + g * bi, -(d * ar + g * br), g * ai - d * bi, -(g * ar - d * br)]
    };
    let (ground, _) = adiabatic(-0.5 * rate * t_end);
    let tol = Tolerance {
        atol: 1e-11,
        rtol: 1e-11,
        max_steps: 50_000_000,
    };
    let mut h = 1e-3;
    let y = dopri5(&f, -t_end, t_end, [ground[0], 0.0, ground[1], 0.0], &mut h, tol).unwrap();
    let (_, excited) = adiabatic(0.5 * rate * t_end);
    let re = excited[0] * y[0] + excited[1] * y[2];
    let im = excited[0] * y[1] + excited[1] * y[3];
    re * re + im * im
}

fn landau_zener() -> Outcome {
    let mut worst: f64 = 0.0;
    for x in [0.1f64, 0.3, 0.6, 1.0, 1.5, 2.0, 3.0] {
        let exact = (-std::f64::consts::PI * x / 2.0).exp();
        worst = worst.max((landau_zener_passage(x.sqrt(), 1.0) / exact - 1.0).abs());
        worst = worst.max((landau_zener_probability(x.sqrt(), 1.0) / exact - 1.0).abs());
    }
    ensure(worst < 0.05, format!("max relative deviation {worst:.2e} over Δ²/v in [0.1, 3]"))
}

/// Drive amplitudes that give the requested peak photon numbers on the
/// ground-state track at the reference gate charge.
fn calibrated_amplitudes(model: &ReadoutModel, targets: &[f64]) -> Vec<f64> {
    let p = device_b();
    let disp = model.diabatic_dispersion(0).unwrap();
    let pulse = DriveProtocol::new(0.0, p.omega_d, 0);
    targets
        .iter()
        .map(|&n| eps_d_for_photons(n, &disp, p.circuit.kappa, &pulse).unwrap())
        .collect()
}

fn map_spec(ng_grid: Vec<f64>, eps_d_grid: Vec<f64>, collapse: Vec<bool>) -> MapSpec {
    MapSpec {
        ng_grid,
        eps_d_grid,
        initials: vec![0, 1],
        collapse,
        t_up: DriveProtocol::DEFAULT_T_UP,
        t_final: DriveProtocol::DEFAULT_T_FINAL,
        settings: ReadoutSettings::new(160.0),
    }
}

fn dynamics_map(model: &ReadoutModel) -> Outcome {
    let p = device_b();
    let targets: Vec<f64> = (0..12).map(|k| 10.0 + 115.0 * k as f64 / 11.0).collect();
    let eps = calibrated_amplitudes(model, &targets);
    let ng: Vec<f64> = (0..11).map(|k| 0.05 * k as f64).collect();
    let rows: Vec<MapRow> = transition_map(&p.circuit, p.omega_d, &map_spec(ng, eps, vec![true])).map_err(|e| e.to_string())?;
    let mut drops = Vec::new();
    let mut non_monotone = 0;
    for r in &rows {
        for i in [0, 1] {
            drops.extend(survival_drops(r, i, true, 0.30, 0.10));
            if is_non_monotone(r, i, true, 0.02) {
                non_monotone += 1;
            }
        }
    }
    let unexplained: Vec<String> = drops
        .iter()
        .filter(|d| !d.explained)
        .map(|d| format!("n_g {:.2} i {} {:.1}->{:.1}", d.n_g, d.initial, d.n_before, d.n_after))
        .collect();
    ensure(
        !drops.is_empty() && unexplained.is_empty() && non_monotone > 0,
        format!(
            "{} drops >= 30 pp, unexplained {unexplained:?}; {non_monotone} non-monotone slices",
            drops.len()
        ),
    )
}

fn fringes(model: &ReadoutModel) -> Outcome {
    let p = device_b();
    let eps = calibrated_amplitudes(model, &FRINGE_TARGETS);
    let step = 0.002;
    let ng: Vec<f64> = (0..41).map(|k| 0.20 + step * k as f64).collect();
    let rows = transition_map(&p.circuit, p.omega_d, &map_spec(ng, eps.clone(), vec![true, false])).map_err(|e| e.to_string())?;
    let series = |i: usize, k: usize, collapse: bool| -> Vec<f64> {
        rows.iter().map(|r| slice(r, i, collapse)[k].survival).collect()
    };
    let mut power = [[0.0; 2]; 2];
    for i in [0, 1] {
        for k in 0..eps.len() {
            power[i][0] += high_frequency_power(&series(i, k, false), step, 0.02);
            power[i][1] += high_frequency_power(&series(i, k, true), step, 0.02);
        }
    }
    let coherent = power[0][0] + power[1][0];
    let collapsed = power[0][1] + power[1][1];
    ensure(
        coherent > FRINGE_CONTRAST * collapsed,
        format!(
            "power at periods < 0.02, collapse=false vs true: {coherent:.3e} vs {collapsed:.3e} \
             (|0>: {:.3e} vs {:.3e}, |1>: {:.3e} vs {:.3e})",
            power[0][0], power[0][1], power[1][0], power[1][1]
        ),
    )
}

const FRINGE_TARGETS: [f64; 3] = [104.0, 114.5, 125.0];
/// Required excess of the coherent map over the collapsed baseline.
const FRINGE_CONTRAST: f64 = 2.0;

fn oracle_short_tier() -> Outcome {
    let t = TransmonParams::new(from_mhz(216.6), vec![from_ghz(8.718)], 0.0, 0.0).map_err(|e| e.to_string())?;
    let c = mist_core::circuit::CircuitParams::new(t, from_ghz(7.04767), from_mhz(186.5), from_mhz(10.0))
        .map_err(|e| e.to_string())?;
    let mut pulse = DriveProtocol::new(from_mhz(8.0), from_ghz(7.0535), 1);
    pulse.t_up = 60.0;
    pulse.t_final = 100.0;
    let m = OracleModel::new(
        &c,
        &pulse,
        Truncation {
            n_transmon: 3,
            n_photon: 8,
        },
    )
    .map_err(|e| e.to_string())?;
    let me = evolve_density_matrix(&m, 10.0).map_err(|e| e.to_string())?;
    let mc = evolve_model(&m, 500, 7, 10.0).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    let mut compare = |a: f64, b: f64, sigma: f64| {
        let excess = (a - b).abs() - 3.0 * sigma - 1e-9;
        worst = worst.max((a - b).abs() / (3.0 * sigma + 1e-9));
        excess <= 0.0
    };
    let mut ok = me.times.len() == mc.times.len();
    for k in 0..me.times.len().min(mc.times.len()) {
        ok &= compare(mc.survival[k], me.survival[k], mc.survival_error[k]);
        ok &= compare(mc.photons[k], me.photons[k], mc.photons_error[k]);
        for j in 0..3 {
            ok &= compare(
                mc.transmon_populations[k][j],
                me.transmon_populations[k][j],
                mc.transmon_populations_error[k][j],
            );
        }
    }
    ensure(
        ok,
        format!("3x8 toy, 500 trajectories: largest |MC - ME| is {worst:.2} of the 3σ bound"),
    )
}

/// Photon number at the first sample where the survival has fallen halfway
/// to its final value, or `None` when it barely moves.
fn onset(survival: &[f64], photons: &[f64]) -> Option<f64> {
    let last = *survival.last()?;
    if 1.0 - last < 0.05 {
        return None;
    }
    let half = 1.0 - 0.5 * (1.0 - last);
    survival.iter().position(|&s| s < half).map(|k| photons[k])
}

fn oracle_long_tier() -> Outcome {
    let p = device_b();
    let eps_d = from_mhz(16.0);
    let mut notes = Vec::new();
    let mut ok = true;
    for n_g in [0.42, 0.45, 0.48] {
        let c = p.circuit.with_n_g(n_g);
        let settings = ReadoutSettings::new(60.0);
        let model = ReadoutModel::build(&c, p.omega_d, &settings).map_err(|e| e.to_string())?;
        let pulse = DriveProtocol::new(eps_d, p.omega_d, 1);
        let sc = model.readout(&pulse, &settings, true, Some(5)).map_err(|e| e.to_string())?;
        let sc_survival: Vec<f64> = sc.populations.iter().map(|x| x[1]).collect();
        let truncation = Truncation::DESK.covering(sc.n_r_max);
        let om = OracleModel::new(&c, &pulse, truncation).map_err(|e| e.to_string())?;
        let q = evolve_model(&om, 500, 2025, 5.0).map_err(|e| e.to_string())?;
        let sc_onset = onset(&sc_survival, &sc.n_r);
        let q_onset = onset(&q.survival, &q.photons);
        let q_final = *q.survival.last().unwrap();
        ok &= (q_final - sc.survival).abs() <= 0.10;
        match (sc_onset, q_onset) {
            (Some(a), Some(b)) => ok &= (b / a - 1.0).abs() <= 0.10,
            (None, None) => {}
            _ => ok = false,
        }
        notes.push(format!(
            "n_g {n_g}: survival sc {:.3} q {q_final:.3}, onset sc {sc_onset:.1?} q {q_onset:.1?}",
            sc.survival
        ));
    }
    ensure(ok, notes.join("; "))
}

fn resonance_loci() -> Outcome {
    let flux: Vec<f64> = (0..=50).map(|k| 0.01 * k as f64).collect();
    let a = preset("device-A").unwrap();
    let qa = ResonanceQuery {
        transitions: vec![(0, 2)],
        max_order: 1,
        spurious: None,
    };
    let lines = resonance_condition_map(&a.circuit, a.omega_d, &flux, &[0.0], &qa).map_err(|e| e.to_string())?;
    let a_flux: Vec<f64> = lines
        .iter()
        .filter(|l| l.order == 1)
        .flat_map(|l| l.locus.iter().map(|x| x.0))
        .collect();
    let b = device_b();
    let qb = ResonanceQuery {
        transitions: vec![(0, 2)],
        max_order: 1,
        spurious: Some(from_ghz(0.78)),
    };
    let ng = [0.0, 0.25, 0.5];
    let lines = resonance_condition_map(&b.circuit, b.omega_d, &flux, &ng, &qb).map_err(|e| e.to_string())?;
    let mut w01 = Vec::new();
    for l in lines.iter().filter(|l| l.order == 1 && l.spurious_offset > 0.0) {
        for &(f, n_g) in &l.locus {
            let s = Spectrum::solve(&b.circuit.transmon.with_flux(f).with_n_g(n_g), 2).map_err(|e| e.to_string())?;
            w01.push(to_ghz(s.transition(0, 1).map_err(|e| e.to_string())?));
        }
    }
    let ok = a_flux.len() == 1
        && (a_flux[0] - 0.23).abs() <= 0.01
        && w01.len() == ng.len()
        && w01.iter().all(|w| (w - 3.26).abs() <= 0.05);
    ensure(
        ok,
        format!("device A 0->2 line at flux {a_flux:.4?}; device B spurious line at ω_01/2π = {w01:.3?} GHz"),
    )
}

fn main() -> ExitCode {
    let mut failures = 0;
    let mut report = |id: usize, name: &str, run: &dyn Fn() -> Outcome| {
        let t0 = Instant::now();
        let (status, msg) = match run() {
            Ok(m) => ("PASS", m),
            Err(m) => {
                failures += 1;
                ("FAIL", m)
            }
        };
        println!("{status} criterion {id:>2} {name}: {msg} [{:.1} s]", t0.elapsed().as_secs_f64());
    };
    report(1, "free rotor", &free_rotor);
    report(2, "charge dispersion", &dispersion);
    report(3, "fit round trip", &fit_round_trip);
    report(4, "model contrast", &model_contrast);
    report(5, "series-inductance identities", &series_identities);
    report(6, "Floquet zero drive", &floquet_zero_drive);
    let model = reference_model();
    report(7, "critical photon numbers", &|| critical_photons(&model));
    report(8, "charge-dependent crossings", &crossing_structure);
    report(9, "Kerr slopes", &|| kerr_slopes(&model));
    report(10, "linear cavity", &linear_cavity);
    report(11, "Landau-Zener", &landau_zener);
    report(12, "dynamics map", &|| dynamics_map(&model));
    report(13, "interference fringes", &|| fringes(&model));
    report(14, "quantum-semiclassical agreement (short tier)", &oracle_short_tier);
    if std::env::var("MIST_LONG_TIER").is_ok_and(|v| v == "1") {
        report(14, "quantum-semiclassical agreement (long tier)", &oracle_long_tier);
    } else {
        println!("SKIP criterion 14 long tier: set MIST_LONG_TIER=1 to run (hours)");
    }
    report(15, "resonance loci", &resonance_loci);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
