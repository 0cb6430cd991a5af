//! Semiclassical readout dynamics.
//!
//! The resonator amplitude obeys
//! `α̇ = -i[ω̃_r(|α|²) - ω_d]α - κα/2 - iε_d/2` while the drive is on. The
//! transmon then sees `ε_t(t) = 2g√n̄_r(t)` and is evolved period by period.

use std::f64::consts::PI;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::circuit::CircuitParams;
use crate::error::{Error, Result};
use crate::floquet::{
    assign_branches, detect_avoided_crossings, diabatic_track, drive_amplitude, floquet_eigensystem_of,
    floquet_points, photon_number, AvoidedCrossing, DiabaticTrack, DispersionCurve, DrivenTransmon,
    FloquetBranchSet, FloquetPoint, QuasienergyCurve, DEFAULT_FLOQUET_LEVELS,
};
use crate::linalg::{hermitian_eigen, HermitianMatrix, C64};
use crate::ode::{dopri5, Tolerance};
use crate::propagate::{LawsonRk4, SplitVec};

/// Allowed overshoot of the dispersion range before a trajectory is rejected.
pub const PHOTON_RANGE_MARGIN: f64 = 0.2;
/// Norm defect tolerated over a whole Schrödinger evolution.
pub const NORM_TOL: f64 = 1e-8;

/// Readout pulse: drive on during `[0, t_up)`, free ring-down until `t_final`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveProtocol {
    /// Resonator drive amplitude (rad/ns).
    pub eps_d: f64,
    pub omega_d: f64,
    /// Drive-on duration (ns).
    pub t_up: f64,
    /// End of the simulation (ns).
    pub t_final: f64,
    pub initial: usize,
}

impl DriveProtocol {
    pub const DEFAULT_T_UP: f64 = 200.0;
    pub const DEFAULT_T_FINAL: f64 = 1200.0;

    pub fn new(eps_d: f64, omega_d: f64, initial: usize) -> Self {
        Self {
            eps_d,
            omega_d,
            t_up: Self::DEFAULT_T_UP,
            t_final: Self::DEFAULT_T_FINAL,
            initial,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_up > 0.0 && self.t_up < self.t_final && self.t_final.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < t_up < t_final, got {} and {}",
                self.t_up, self.t_final
            )));
        }
        if !(self.eps_d >= 0.0 && self.eps_d.is_finite()) || !(self.omega_d > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "invalid drive eps_d = {}, omega_d = {}",
                self.eps_d, self.omega_d
            )));
        }
        Ok(())
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega_d
    }

    /// Whole drive periods in `[0, t)`.
    pub fn periods_until(&self, t: f64) -> usize {
        (t / self.period()).round() as usize
    }
}

/// Resonator amplitude sampled every half drive period.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResonatorTrajectory {
    pub times: Vec<f64>,
    pub alpha: Vec<(f64, f64)>,
    pub n_max: f64,
    pub branch: usize,
    pub diabatic: bool,
    /// Largest photon number at which the dispersion was extrapolated.
    pub extrapolated_to: Option<f64>,
}

impl ResonatorTrajectory {
    pub fn photons(&self, k: usize) -> f64 {
        let (re, im) = self.alpha[k];
        re * re + im * im
    }

    pub fn photon_series(&self) -> Vec<f64> {
        (0..self.times.len()).map(|k| self.photons(k)).collect()
    }

    /// Linear interpolation of `n̄_r(t)`.
    pub fn photons_at(&self, t: f64) -> f64 {
        let dt = self.times[1] - self.times[0];
        let x = (t / dt).clamp(0.0, (self.times.len() - 1) as f64);
        let k = (x.floor() as usize).min(self.times.len() - 2);
        let f = x - k as f64;
        (1.0 - f) * self.photons(k) + f * self.photons(k + 1)
    }

    /// Photon number at the middle of drive period `p`.
    pub fn mid_period_photons(&self, p: usize) -> f64 {
        self.photons(2 * p + 1)
    }

    pub fn n_periods(&self) -> usize {
        (self.times.len() - 1) / 2
    }
}

/// Integrates the resonator equation of motion with the given dispersion.
pub fn resonator_trajectory(protocol: &DriveProtocol, dispersion: &DispersionCurve, kappa: f64) -> Result<ResonatorTrajectory> {
    protocol.validate()?;
    if !(kappa > 0.0) {
        return Err(Error::InvalidParameter(format!("kappa must be positive, got {kappa}")));
    }
    let half = 0.5 * protocol.period();
    let samples = 2 * protocol.periods_until(protocol.t_final);
    let limit = dispersion.n_max() * (1.0 + PHOTON_RANGE_MARGIN);
    let wd = protocol.omega_d;
    let rhs = |drive: f64| {
        move |_t: f64, y: &[f64; 2]| {
            let n = y[0] * y[0] + y[1] * y[1];
            let w = dispersion.at(n) - wd;
            [w * y[1] - 0.5 * kappa * y[0], -w * y[0] - 0.5 * kappa * y[1] - 0.5 * drive]
        }
    };
    let on = rhs(protocol.eps_d);
    let off = rhs(0.0);
    let tol = Tolerance::default();
    let mut y = [0.0, 0.0];
    let mut h = 0.1 * half;
    let mut times = Vec::with_capacity(samples + 1);
    let mut alpha = Vec::with_capacity(samples + 1);
    let mut n_max: f64 = 0.0;
    let mut extrapolated: Option<f64> = None;
    times.push(0.0);
    alpha.push((0.0, 0.0));
    for k in 0..samples {
        let (t0, t1) = (k as f64 * half, (k + 1) as f64 * half);
        if t1 <= protocol.t_up {
            y = dopri5(&on, t0, t1, y, &mut h, tol)?;
        } else if t0 >= protocol.t_up {
            y = dopri5(&off, t0, t1, y, &mut h, tol)?;
        } else {
            y = dopri5(&on, t0, protocol.t_up, y, &mut h, tol)?;
            y = dopri5(&off, protocol.t_up, t1, y, &mut h, tol)?;
        }
        let n = y[0] * y[0] + y[1] * y[1];
        if n > limit {
            return Err(Error::PhotonRangeExceeded {
                reached: n,
                limit: dispersion.n_max(),
            });
        }
        if n > dispersion.n_max() {
            extrapolated = Some(extrapolated.map_or(n, |e: f64| e.max(n)));
        }
        n_max = n_max.max(n);
        times.push(t1);
        alpha.push((y[0], y[1]));
    }
    if let Some(n) = extrapolated {
        log::warn!(
            "dispersion extrapolated linearly from {:.1} to {n:.1} photons",
            dispersion.n_max()
        );
    }
    Ok(ResonatorTrajectory {
        times,
        alpha,
        n_max,
        branch: dispersion.branch,
        diabatic: dispersion.diabatic,
        extrapolated_to: extrapolated,
    })
}

/// Self-consistent steady-state photon numbers in ascending order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SteadyState {
    pub photons: Vec<f64>,
    /// More than one fixed point.
    pub bistable: bool,
}

impl SteadyState {
    pub fn lowest(&self) -> f64 {
        self.photons[0]
    }
}

/// Lorentzian response `(ε_d/2)² / [(ω - ω_d)² + κ²/4]`.
pub fn lorentzian_photons(eps_d: f64, detuning: f64, kappa: f64) -> f64 {
    0.25 * eps_d * eps_d / (detuning * detuning + 0.25 * kappa * kappa)
}

/// Fixed points of `n = Lorentzian(ω̃_r(n))`, located by scanning
/// `F(n) = n[(ω̃_r(n) - ω_d)² + κ²/4] - (ε_d/2)²` and bisecting each sign
/// change.
pub fn steady_state_photon_number(eps_d: f64, omega_d: f64, dispersion: &DispersionCurve, kappa: f64) -> Result<SteadyState> {
    if !(kappa > 0.0) {
        return Err(Error::InvalidParameter(format!("kappa must be positive, got {kappa}")));
    }
    if eps_d == 0.0 {
        return Ok(SteadyState {
            photons: vec![0.0],
            bistable: false,
        });
    }
    let f = |n: f64| n * ((dispersion.at(n) - omega_d).powi(2) + 0.25 * kappa * kappa) - 0.25 * eps_d * eps_d;
    // No fixed point can exceed the on-resonance response.
    let upper = lorentzian_photons(eps_d, 0.0, kappa) * (1.0 + 1e-9);
    let mut nodes: Vec<f64> = (0..=4000).map(|k| upper * k as f64 / 4000.0).collect();
    nodes.extend(dispersion.photons.iter().copied().filter(|&p| p > 0.0 && p < upper));
    nodes.sort_by(f64::total_cmp);
    nodes.dedup();
    let mut roots = Vec::new();
    for w in nodes.windows(2) {
        let (mut a, mut b) = (w[0], w[1]);
        let mut fa = f(a);
        let fb = f(b);
        if fb == 0.0 {
            roots.push(b);
            continue;
        }
        if fa.signum() == fb.signum() {
            continue;
        }
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            let fm = f(m);
            if fm.signum() == fa.signum() {
                a = m;
                fa = fm;
            } else {
                b = m;
            }
            if (b - a) <= 1e-14 * b.max(1e-300) {
                break;
            }
        }
        roots.push(0.5 * (a + b));
    }
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());
    if roots.is_empty() {
        return Err(Error::NotConverged {
            what: "steady-state photon number".into(),
            change: f64::NAN,
            tolerance: 0.0,
        });
    }
    Ok(SteadyState {
        bistable: roots.len() > 1,
        photons: roots,
    })
}

/// Photon number from an ac-Stark shift: `n̄ = Δω_q / χ`.
pub fn stark_photon_number(shift: f64, chi: f64) -> Result<f64> {
    if chi == 0.0 {
        return Err(Error::InvalidParameter("chi must be non-zero".into()));
    }
    Ok(shift / chi)
}

/// Mapping from drive amplitude to peak photon number for each initial state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhotonCalibration {
    pub chi: f64,
    pub eps_d: Vec<f64>,
    /// `n_max[s][k]` for state `states[s]` at `eps_d[k]`.
    pub n_max: Vec<Vec<f64>>,
    pub states: Vec<usize>,
    /// Steady state of the first dispersion at each amplitude.
    pub steady: Vec<f64>,
    /// Low-power slope `dn̄/d(ε_d²)` of the first dispersion.
    pub low_power_slope: f64,
}

/// Peak photon numbers over `pulse` for each dispersion and amplitude.
pub fn calibrate_photon_axis(
    chi: f64,
    kappa: f64,
    omega_d: f64,
    dispersions: &[DispersionCurve],
    pulse: &DriveProtocol,
    eps_d_grid: &[f64],
) -> Result<PhotonCalibration> {
    if chi == 0.0 {
        return Err(Error::InvalidParameter("chi must be non-zero".into()));
    }
    let first = dispersions
        .first()
        .ok_or_else(|| Error::InvalidParameter("no dispersion curves".into()))?;
    let mut n_max = Vec::new();
    for d in dispersions {
        let mut row = Vec::new();
        for &eps in eps_d_grid {
            let p = DriveProtocol {
                eps_d: eps,
                omega_d,
                ..pulse.clone()
            };
            row.push(resonator_trajectory(&p, d, kappa)?.n_max);
        }
        n_max.push(row);
    }
    let steady = eps_d_grid
        .iter()
        .map(|&e| steady_state_photon_number(e, omega_d, first, kappa).map(|s| s.lowest()))
        .collect::<Result<Vec<_>>>()?;
    Ok(PhotonCalibration {
        chi,
        eps_d: eps_d_grid.to_vec(),
        n_max,
        states: dispersions.iter().map(|d| d.branch).collect(),
        steady,
        low_power_slope: lorentzian_photons(1.0, first.at(0.0) - omega_d, kappa),
    })
}

/// Single factor `s` with `ε_d = s·V` that best maps applied voltages to the
/// photon numbers measured through the ac-Stark shift in the linear regime.
pub fn voltage_scale(voltages: &[f64], photons: &[f64], low_power_slope: f64) -> Result<f64> {
    if voltages.len() != photons.len() || voltages.is_empty() || low_power_slope <= 0.0 {
        return Err(Error::InvalidParameter("voltage calibration needs matching non-empty data".into()));
    }
    // n = slope·s²·V², linear least squares in s².
    let num: f64 = voltages.iter().zip(photons).map(|(v, n)| v * v * n).sum();
    let den: f64 = voltages.iter().map(|v| v.powi(4)).sum::<f64>() * low_power_slope;
    Ok((num / den).sqrt())
}

/// Drive amplitude whose pulse peaks at `target` photons, by bisection.
pub fn eps_d_for_photons(target: f64, dispersion: &DispersionCurve, kappa: f64, pulse: &DriveProtocol) -> Result<f64> {
    let peak = |e: f64| -> Result<f64> {
        resonator_trajectory(
            &DriveProtocol {
                eps_d: e,
                ..pulse.clone()
            },
            dispersion,
            kappa,
        )
        .map(|t| t.n_max)
        .or_else(|e| match e {
            // Past the dispersion range, hence past any reachable target.
            Error::PhotonRangeExceeded { .. } => Ok(f64::INFINITY),
            e => Err(e),
        })
    };
    if target > dispersion.n_max() {
        return Err(Error::PhotonRangeExceeded {
            reached: target,
            limit: dispersion.n_max(),
        });
    }
    // Linear-cavity guess, then bracket.
    let guess = (target / lorentzian_photons(1.0, dispersion.at(0.0) - pulse.omega_d, kappa)).sqrt();
    let mut lo = 0.0;
    let mut hi = guess.max(1e-6);
    while peak(hi)? < target {
        lo = hi;
        hi *= 1.5;
        if hi > 1e3 * guess.max(1e-3) {
            return Err(Error::NotConverged {
                what: "drive amplitude bracket".into(),
                change: hi,
                tolerance: 0.0,
            });
        }
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if peak(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-10 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Dense row-major complex square matrix used in the per-period kernels.
#[derive(Debug, Clone)]
struct Dense {
    n: usize,
    data: Vec<C64>,
}

impl Dense {
    fn from_mat(m: &Mat<C64>) -> Self {
        let n = m.nrows();
        let mut data = Vec::with_capacity(n * n);
        for a in 0..n {
            for b in 0..n {
                data.push(m[(a, b)]);
            }
        }
        Self { n, data }
    }

    fn apply(&self, x: &[C64], out: &mut [C64]) {
        for (a, o) in out.iter_mut().enumerate() {
            *o = self.data[a * self.n..(a + 1) * self.n]
                .iter()
                .zip(x)
                .map(|(m, v)| m * v)
                .sum();
        }
    }

    fn apply_adjoint(&self, x: &[C64], out: &mut [C64]) {
        out.iter_mut().for_each(|o| *o = C64::new(0.0, 0.0));
        for (a, &xa) in x.iter().enumerate() {
            for (b, o) in out.iter_mut().enumerate() {
                *o += self.data[a * self.n + b].conj() * xa;
            }
        }
    }
}

/// `W = U_k† U_{k+1} = V diag(e^{iθ}) V†`.
#[derive(Debug, Clone)]
struct Generator {
    v: Dense,
    theta: Vec<f64>,
}

/// Exactly unitary one-period propagators on the branch-set amplitude grid,
/// with geodesic interpolation `U(ε_k + fδ) = U_k W_k^f` in between.
#[derive(Debug, Clone)]
pub struct PropagatorTable {
    pub omega_d: f64,
    pub delta: f64,
    pub eps_max: f64,
    base: Vec<Dense>,
    steps: Vec<Generator>,
}

impl PropagatorTable {
    pub fn from_points(points: &[FloquetPoint], omega_d: f64) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidParameter("propagator table needs two amplitudes".into()));
        }
        let delta = points[1].eps_t - points[0].eps_t;
        let mats: Vec<Mat<C64>> = points.iter().map(|p| p.propagator(omega_d)).collect();
        let mut steps = Vec::with_capacity(mats.len() - 1);
        for w in mats.windows(2) {
            let m = w[0].adjoint() * &w[1];
            let n = m.nrows();
            // For a unitary with all phases in (-π/2, π/2), the Hermitian part
            // (W - W†)/2i = V diag(sin θ) V† fixes an orthonormal eigenbasis.
            let s = Mat::<C64>::from_fn(n, n, |a, b| (m[(a, b)] - m[(b, a)].conj()) * C64::new(0.0, -0.5));
            let eig = hermitian_eigen(&HermitianMatrix::new(s)?, n)?;
            let v = eig.vectors;
            let mut theta = Vec::with_capacity(n);
            for k in 0..n {
                let col: Vec<C64> = (0..n).map(|r| v[(r, k)]).collect();
                let lam: C64 = (0..n)
                    .map(|a| col[a].conj() * (0..n).map(|b| m[(a, b)] * col[b]).sum::<C64>())
                    .sum();
                if lam.re <= 0.0 {
                    return Err(Error::InvalidParameter(
                        "amplitude step too coarse for propagator interpolation".into(),
                    ));
                }
                theta.push(lam.arg());
            }
            steps.push(Generator {
                v: Dense::from_mat(&v),
                theta,
            });
        }
        Ok(Self {
            omega_d,
            delta,
            eps_max: points.last().map_or(0.0, |p| p.eps_t),
            base: mats.iter().map(Dense::from_mat).collect(),
            steps,
        })
    }

    pub fn dim(&self) -> usize {
        self.base[0].n
    }

    fn locate(&self, eps: f64) -> Result<(usize, f64)> {
        if eps < -1e-12 || eps > self.eps_max * (1.0 + 1e-12) {
            return Err(Error::PhotonRangeExceeded {
                reached: eps,
                limit: self.eps_max,
            });
        }
        let x = (eps / self.delta).max(0.0);
        let k = (x.floor() as usize).min(self.steps.len() - 1);
        Ok((k, (x - k as f64).clamp(0.0, 1.0)))
    }

    /// `ψ ← U(ε) ψ`.
    pub fn apply(&self, eps: f64, psi: &mut [C64], scratch: &mut [C64]) -> Result<()> {
        let (k, f) = self.locate(eps)?;
        if f > 0.0 {
            let g = &self.steps[k];
            g.v.apply_adjoint(psi, scratch);
            for (s, th) in scratch.iter_mut().zip(&g.theta) {
                *s *= C64::from_polar(1.0, f * th);
            }
            g.v.apply(scratch, psi);
        }
        self.base[k].apply(psi, scratch);
        psi.copy_from_slice(scratch);
        Ok(())
    }

    /// `ψ ← U(ε)† ψ`.
    pub fn apply_adjoint(&self, eps: f64, psi: &mut [C64], scratch: &mut [C64]) -> Result<()> {
        let (k, f) = self.locate(eps)?;
        self.base[k].apply_adjoint(psi, scratch);
        psi.copy_from_slice(scratch);
        if f > 0.0 {
            let g = &self.steps[k];
            g.v.apply_adjoint(psi, scratch);
            for (s, th) in scratch.iter_mut().zip(&g.theta) {
                *s *= C64::from_polar(1.0, -f * th);
            }
            g.v.apply(scratch, psi);
        }
        Ok(())
    }

    /// Interpolated propagator as a matrix.
    pub fn matrix(&self, eps: f64) -> Result<Mat<C64>> {
        let n = self.dim();
        let mut out = Mat::<C64>::zeros(n, n);
        let mut scratch = vec![C64::new(0.0, 0.0); n];
        for c in 0..n {
            let mut col = vec![C64::new(0.0, 0.0); n];
            col[c] = C64::new(1.0, 0.0);
            self.apply(eps, &mut col, &mut scratch)?;
            for r in 0..n {
                out[(r, c)] = col[r];
            }
        }
        Ok(out)
    }
}

/// Time integration scheme for the driven transmon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Integrator {
    /// One interpolated Floquet propagator per drive period, with the
    /// amplitude taken at mid-period.
    Stroboscopic,
    /// Lawson RK4 with the amplitude held constant within each step.
    Lawson { steps_per_period: usize },
}

/// States at period boundaries `t = p T`.
#[derive(Debug, Clone)]
pub struct StateHistory {
    pub periods: Vec<usize>,
    pub times: Vec<f64>,
    pub states: Vec<Vec<C64>>,
    pub norm_defect: f64,
}

impl StateHistory {
    pub fn last(&self) -> &[C64] {
        self.states.last().expect("history holds the initial state")
    }
}

fn norm_sqr(v: &[C64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum()
}

/// Evolves `psi0` from period `from` to period `to` (either direction),
/// recording every `stride` periods.
pub fn evolve_stroboscopic(
    table: &PropagatorTable,
    trajectory: &ResonatorTrajectory,
    g: f64,
    psi0: &[C64],
    from: usize,
    to: usize,
    stride: usize,
) -> Result<StateHistory> {
    let period = 2.0 * PI / table.omega_d;
    let n = table.dim();
    if psi0.len() != n {
        return Err(Error::InvalidParameter(format!(
            "state has {} components, table {}",
            psi0.len(),
            n
        )));
    }
    if from.max(to) > trajectory.n_periods() {
        return Err(Error::InvalidParameter("evolution beyond the trajectory".into()));
    }
    let stride = stride.max(1);
    let mut psi = psi0.to_vec();
    let mut scratch = vec![C64::new(0.0, 0.0); n];
    let norm0 = norm_sqr(&psi);
    let mut hist = StateHistory {
        periods: vec![from],
        times: vec![from as f64 * period],
        states: vec![psi.clone()],
        norm_defect: 0.0,
    };
    let mut p = from;
    while p != to {
        if to > from {
            let eps = drive_amplitude(trajectory.mid_period_photons(p), g);
            table.apply(eps, &mut psi, &mut scratch)?;
            p += 1;
        } else {
            let eps = drive_amplitude(trajectory.mid_period_photons(p - 1), g);
            table.apply_adjoint(eps, &mut psi, &mut scratch)?;
            p -= 1;
        }
        if p.abs_diff(from) % stride == 0 || p == to {
            hist.periods.push(p);
            hist.times.push(p as f64 * period);
            hist.states.push(psi.clone());
        }
    }
    hist.norm_defect = (norm_sqr(&psi) - norm0).abs();
    if hist.norm_defect > NORM_TOL {
        return Err(Error::NormDefect {
            defect: hist.norm_defect,
        });
    }
    Ok(hist)
}

/// Lawson RK4 evolution over periods `from..to` with `ε_t` held at the
/// step-midpoint value; the step count doubles until the norm defect is
/// below [`NORM_TOL`].
pub fn evolve_lawson(
    transmon: &DrivenTransmon,
    trajectory: &ResonatorTrajectory,
    g: f64,
    psi0: &[C64],
    from: usize,
    to: usize,
    steps_per_period: usize,
    stride: usize,
) -> Result<StateHistory> {
    let mut steps = steps_per_period.max(1);
    let mut last = f64::NAN;
    for _ in 0..3 {
        let hist = lawson_once(transmon, trajectory, g, psi0, from, to, steps, stride.max(1));
        if hist.norm_defect <= NORM_TOL {
            return Ok(hist);
        }
        last = hist.norm_defect;
        steps *= 2;
    }
    Err(Error::NormDefect { defect: last })
}

#[allow(clippy::too_many_arguments)]
fn lawson_once(
    transmon: &DrivenTransmon,
    trajectory: &ResonatorTrajectory,
    g: f64,
    psi0: &[C64],
    from: usize,
    to: usize,
    steps: usize,
    stride: usize,
) -> StateHistory {
    let period = transmon.period();
    let h = period / steps as f64;
    let w = transmon.omega_d;
    let mut stepper = LawsonRk4::new(&transmon.system, h);
    let mut u = SplitVec::from_complex(psi0);
    let norm0 = u.norm_sqr();
    let mut hist = StateHistory {
        periods: vec![from],
        times: vec![from as f64 * period],
        states: vec![psi0.to_vec()],
        norm_defect: 0.0,
    };
    for p in from..to {
        for k in 0..steps {
            let t = p as f64 * period + k as f64 * h;
            let eps = drive_amplitude(trajectory.photons_at(t + 0.5 * h), g);
            let s = [
                eps * (w * t).cos(),
                eps * (w * (t + 0.5 * h)).cos(),
                eps * (w * (t + h)).cos(),
            ];
            stepper.step(&mut u, s);
        }
        if (p + 1 - from) % stride == 0 || p + 1 == to {
            hist.periods.push(p + 1);
            hist.times.push((p + 1) as f64 * period);
            hist.states.push(u.to_complex());
        }
    }
    hist.norm_defect = (u.norm_sqr() - norm0).abs();
    hist
}

/// Per-gate-charge readout model: branch set, crossings, diabatic tracks and
/// the propagator table, shared by every cell with this `n_g`.
#[derive(Debug, Clone)]
pub struct ReadoutModel {
    pub circuit: CircuitParams,
    pub transmon: DrivenTransmon,
    pub branches: FloquetBranchSet,
    pub crossings: Vec<AvoidedCrossing>,
    pub table: PropagatorTable,
}

/// Numerical settings of the readout pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReadoutSettings {
    pub n_levels: usize,
    /// Amplitude increment (rad/ns).
    pub delta_eps: f64,
    /// Largest photon number covered by the branch set.
    pub n_r_max: f64,
    pub integrator: Integrator,
}

impl ReadoutSettings {
    pub fn new(n_r_max: f64) -> Self {
        Self {
            n_levels: DEFAULT_FLOQUET_LEVELS,
            delta_eps: crate::units::from_mhz(5.0),
            n_r_max,
            integrator: Integrator::Stroboscopic,
        }
    }
}

impl ReadoutModel {
    pub fn build(circuit: &CircuitParams, omega_d: f64, settings: &ReadoutSettings) -> Result<Self> {
        circuit.validate()?;
        let transmon = DrivenTransmon::new(&circuit.transmon, settings.n_levels, omega_d)?;
        let grid = crate::floquet::amplitude_grid(drive_amplitude(settings.n_r_max, circuit.g), settings.delta_eps)?;
        let (points, defect) = floquet_points(&transmon, &grid)?;
        let table = PropagatorTable::from_points(&points, omega_d)?;
        let mut branches = assign_branches(points, omega_d, settings.delta_eps)?;
        branches.n_g = circuit.transmon.n_g;
        branches.max_unitarity_defect = defect;
        let crossings = detect_avoided_crossings(&branches, circuit.g);
        Ok(Self {
            circuit: circuit.clone(),
            transmon,
            branches,
            crossings,
            table,
        })
    }

    pub fn g(&self) -> f64 {
        self.circuit.g
    }

    pub fn track(&self, initial: usize) -> Result<DiabaticTrack> {
        diabatic_track(&self.branches, &self.crossings, initial)
    }

    /// `ω̃^diab_{r,i}(n̄)` over the branch-set range.
    pub fn diabatic_dispersion(&self, initial: usize) -> Result<DispersionCurve> {
        let track = self.track(initial)?;
        let curve = QuasienergyCurve::diabatic(&self.branches, &track);
        DispersionCurve::from_curve(&curve, self.circuit.omega_r, self.circuit.g, initial, true)
    }

    /// Floquet modes at an arbitrary amplitude, columns ordered by branch.
    pub fn instantaneous_basis(&self, eps_t: f64) -> Result<FloquetPoint> {
        let u = self.table.matrix(eps_t)?;
        let p = floquet_eigensystem_of(&u, eps_t, self.branches.omega_d)?;
        let reference = &self.branches.points[self.branches.nearest_index(eps_t)];
        let n = p.dim();
        let mut pairs = Vec::with_capacity(n * n);
        for i in 0..n {
            for m in 0..n {
                let o: C64 = (0..n).map(|r| reference.modes[(r, i)].conj() * p.modes[(r, m)]).sum();
                pairs.push((o.norm_sqr(), i, m));
            }
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut order = vec![usize::MAX; n];
        let mut taken = vec![false; n];
        for (_, i, m) in pairs {
            if order[i] == usize::MAX && !taken[m] {
                order[i] = m;
                taken[m] = true;
            }
        }
        Ok(FloquetPoint {
            eps_t,
            quasienergies: order.iter().map(|&m| p.quasienergies[m]).collect(),
            modes: Mat::from_fn(n, n, |r, c| p.modes[(r, order[c])]),
            populations: order.iter().map(|&m| p.populations[m]).collect(),
            degenerate: Vec::new(),
        })
    }

    fn amplitude_at_period(&self, trajectory: &ResonatorTrajectory, p: usize) -> f64 {
        drive_amplitude(trajectory.photons(2 * p), self.circuit.g)
    }

    fn evolve(
        &self,
        settings: &ReadoutSettings,
        trajectory: &ResonatorTrajectory,
        psi0: &[C64],
        from: usize,
        to: usize,
        stride: usize,
    ) -> Result<StateHistory> {
        match settings.integrator {
            Integrator::Stroboscopic => evolve_stroboscopic(&self.table, trajectory, self.circuit.g, psi0, from, to, stride),
            Integrator::Lawson { steps_per_period } => {
                if to < from {
                    return Err(Error::InvalidParameter(
                        "Lawson integration runs forward only".into(),
                    ));
                }
                evolve_lawson(&self.transmon, trajectory, self.circuit.g, psi0, from, to, steps_per_period, stride)
            }
        }
    }

    /// Full readout simulation for one cell.
    pub fn readout(
        &self,
        protocol: &DriveProtocol,
        settings: &ReadoutSettings,
        collapse: bool,
        trace_stride: Option<usize>,
    ) -> Result<TransitionRecord> {
        let dispersion = self.diabatic_dispersion(protocol.initial)?;
        let trajectory = resonator_trajectory(protocol, &dispersion, self.circuit.kappa)?;
        self.readout_with_trajectory(protocol, settings, &trajectory, collapse, trace_stride)
    }

    pub fn readout_with_trajectory(
        &self,
        protocol: &DriveProtocol,
        settings: &ReadoutSettings,
        trajectory: &ResonatorTrajectory,
        collapse: bool,
        trace_stride: Option<usize>,
    ) -> Result<TransitionRecord> {
        let n = self.table.dim();
        let i = protocol.initial;
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, len: n });
        }
        let p_up = protocol.periods_until(protocol.t_up);
        let p_f = trajectory.n_periods();
        let stride = trace_stride.unwrap_or(usize::MAX / 4);
        let mut psi0 = vec![C64::new(0.0, 0.0); n];
        psi0[i] = C64::new(1.0, 0.0);

        let up = self.evolve(settings, trajectory, &psi0, 0, p_up, stride)?;
        let basis_up = self.instantaneous_basis(self.amplitude_at_period(trajectory, p_up))?;
        let p_up_pop = project(&basis_up, up.last());
        let basis_f = self.instantaneous_basis(self.amplitude_at_period(trajectory, p_f))?;

        let mut record = TransitionRecord {
            initial: i,
            collapse,
            times: Vec::new(),
            n_r: Vec::new(),
            populations: Vec::new(),
            survival: f64::NAN,
            p_up: p_up_pop.clone(),
            n_r_max: trajectory.n_max,
            norm_defect: up.norm_defect,
        };
        if trace_stride.is_some() {
            for (k, psi) in up.states.iter().enumerate() {
                record.push_sample(self, trajectory, up.periods[k], psi)?;
            }
        }

        if !collapse {
            let down = self.evolve(settings, trajectory, up.last(), p_up, p_f, stride)?;
            record.norm_defect = record.norm_defect.max(down.norm_defect);
            if trace_stride.is_some() {
                for (k, psi) in down.states.iter().enumerate().skip(1) {
                    record.push_sample(self, trajectory, down.periods[k], psi)?;
                }
            }
            record.survival = project(&basis_f, down.last())[i];
            return Ok(record);
        }

        if trace_stride.is_some() {
            // Evolve every populated mode separately and add populations.
            let mut acc: Option<Vec<(usize, Vec<f64>)>> = None;
            for (j, &w) in p_up_pop.iter().enumerate() {
                if w < 1e-10 {
                    continue;
                }
                let phi = mode(&basis_up, j);
                let down = self.evolve(settings, trajectory, &phi, p_up, p_f, stride)?;
                record.norm_defect = record.norm_defect.max(down.norm_defect);
                let mut rows = Vec::new();
                for (k, psi) in down.states.iter().enumerate().skip(1) {
                    let basis = self.instantaneous_basis(self.amplitude_at_period(trajectory, down.periods[k]))?;
                    rows.push((down.periods[k], project(&basis, psi).iter().map(|x| x * w).collect()));
                }
                acc = Some(match acc {
                    None => rows,
                    Some(prev) => prev
                        .into_iter()
                        .zip(rows)
                        .map(|((p, a), (_, b))| (p, a.iter().zip(&b).map(|(x, y)| x + y).collect()))
                        .collect(),
                });
            }
            for (p, pops) in acc.unwrap_or_default() {
                record.times.push(p as f64 * protocol.period());
                record.n_r.push(trajectory.photons(2 * p));
                record.populations.push(pops);
            }
        }
        // P(i|i) = Σ_j |⟨U† φ_i(t_f) | φ_j(t_up)⟩|² P_up(j|i).
        let back = self.evolve_backward(settings, trajectory, &mode(&basis_f, i), p_f, p_up)?;
        record.norm_defect = record.norm_defect.max(back.norm_defect);
        let p_down = project(&basis_up, back.last());
        record.survival = p_down.iter().zip(&p_up_pop).map(|(d, u)| d * u).sum();
        Ok(record)
    }

    fn evolve_backward(
        &self,
        settings: &ReadoutSettings,
        trajectory: &ResonatorTrajectory,
        psi: &[C64],
        from: usize,
        to: usize,
    ) -> Result<StateHistory> {
        match settings.integrator {
            Integrator::Stroboscopic => {
                evolve_stroboscopic(&self.table, trajectory, self.circuit.g, psi, from, to, usize::MAX / 4)
            }
            // A forward integrator cannot run backward; evolve every mode
            // forward instead and build the overlaps from those.
            Integrator::Lawson { .. } => {
                let n = psi.len();
                let basis_up = self.instantaneous_basis(self.amplitude_at_period(trajectory, to))?;
                let mut out = vec![C64::new(0.0, 0.0); n];
                let mut defect: f64 = 0.0;
                for j in 0..n {
                    let fwd = self.evolve(settings, trajectory, &mode(&basis_up, j), to, from, usize::MAX / 4)?;
                    defect = defect.max(fwd.norm_defect);
                    let amp: C64 = fwd.last().iter().zip(psi).map(|(a, b)| a.conj() * b).sum();
                    for (o, m) in out.iter_mut().zip(mode(&basis_up, j)) {
                        *o += m * amp;
                    }
                }
                Ok(StateHistory {
                    periods: vec![to],
                    times: vec![],
                    states: vec![out],
                    norm_defect: defect,
                })
            }
        }
    }
}

fn mode(basis: &FloquetPoint, j: usize) -> Vec<C64> {
    (0..basis.modes.nrows()).map(|r| basis.modes[(r, j)]).collect()
}

/// `|⟨φ_j|ψ⟩|²` for every branch `j`.
pub fn project(basis: &FloquetPoint, psi: &[C64]) -> Vec<f64> {
    (0..basis.dim())
        .map(|j| {
            (0..psi.len())
                .map(|r| basis.modes[(r, j)].conj() * psi[r])
                .sum::<C64>()
                .norm_sqr()
        })
        .collect()
}

/// Branch populations of a state history in the instantaneous Floquet basis.
pub fn floquet_projection(model: &ReadoutModel, trajectory: &ResonatorTrajectory, history: &StateHistory, initial: usize) -> Result<TransitionRecord> {
    let mut record = TransitionRecord {
        initial,
        collapse: false,
        times: Vec::new(),
        n_r: Vec::new(),
        populations: Vec::new(),
        survival: f64::NAN,
        p_up: Vec::new(),
        n_r_max: trajectory.n_max,
        norm_defect: history.norm_defect,
    };
    for (k, psi) in history.states.iter().enumerate() {
        record.push_sample(model, trajectory, history.periods[k], psi)?;
    }
    record.survival = record.populations.last().map_or(f64::NAN, |p| p[initial]);
    Ok(record)
}

/// Outcome of one readout simulation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub initial: usize,
    pub collapse: bool,
    pub times: Vec<f64>,
    pub n_r: Vec<f64>,
    /// `populations[t][j] = P(j|i)` at `times[t]`.
    pub populations: Vec<Vec<f64>>,
    /// Final `P(i|i)`.
    pub survival: f64,
    /// `P_up(j|i)` at the end of the ramp-up.
    pub p_up: Vec<f64>,
    pub n_r_max: f64,
    pub norm_defect: f64,
}

impl TransitionRecord {
    fn push_sample(&mut self, model: &ReadoutModel, trajectory: &ResonatorTrajectory, p: usize, psi: &[C64]) -> Result<()> {
        let basis = model.instantaneous_basis(model.amplitude_at_period(trajectory, p))?;
        self.times.push(p as f64 * 2.0 * PI / model.branches.omega_d);
        self.n_r.push(trajectory.photons(2 * p));
        self.populations.push(project(&basis, psi));
        Ok(())
    }

    /// Probability outside the tracked branches at each sample.
    pub fn other(&self) -> Vec<f64> {
        self.populations
            .iter()
            .map(|p| (1.0 - p.iter().sum::<f64>()).max(0.0))
            .collect()
    }

    pub fn transition_probability(&self) -> f64 {
        1.0 - self.survival
    }
}

/// Survival of `initial` at the end of `protocol`.
pub fn readout_transition_probability(
    circuit: &CircuitParams,
    protocol: &DriveProtocol,
    settings: &ReadoutSettings,
    collapse: bool,
) -> Result<TransitionRecord> {
    let model = ReadoutModel::build(circuit, protocol.omega_d, settings)?;
    model.readout(protocol, settings, collapse, None)
}

/// Photon number of the branch set at grid index `k`.
pub fn grid_photons(model: &ReadoutModel, k: usize) -> f64 {
    photon_number(model.branches.grid[k], model.circuit.g)
}
