//! The isolated multiharmonic transmon in the charge basis.
//!
//! `H_t = 4 E_C (n̂ - n_g)² - Σ_m E_Jm cos(m φ̂)`, with `cos(m φ̂)` coupling
//! charge states that differ by `m` Cooper pairs. All energies are angular
//! frequencies in rad/ns.

use std::f64::consts::PI;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen, HermitianMatrix, C64};

/// Default charge cutoff `N_c` (basis `-N_c..=N_c`).
pub const DEFAULT_CHARGE_CUTOFF: usize = 40;
/// Smallest charge cutoff accepted by [`build_charge_hamiltonian`].
pub const MIN_CHARGE_CUTOFF: usize = 10;
/// Relative energy change tolerated when the charge cutoff is doubled.
pub const CONVERGENCE_TOL: f64 = 1e-9;
/// Highest Josephson harmonic retained.
pub const MAX_HARMONIC: usize = 3;

/// Parameters of the multiharmonic transmon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmonParams {
    /// Charging energy (rad/ns).
    pub e_c: f64,
    /// Josephson harmonics `E_J1..E_Jm` at zero flux (rad/ns).
    pub e_j: Vec<f64>,
    /// Gate charge in units of 2e.
    pub n_g: f64,
    /// External flux in units of the flux quantum.
    pub flux: f64,
}

impl TransmonParams {
    pub fn new(e_c: f64, e_j: Vec<f64>, n_g: f64, flux: f64) -> Result<Self> {
        let p = Self { e_c, e_j, n_g, flux };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.e_c > 0.0 && self.e_c.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "e_c must be positive, got {}",
                self.e_c
            )));
        }
        if self.e_j.is_empty() || self.e_j.len() > MAX_HARMONIC {
            return Err(Error::InvalidParameter(format!(
                "expected 1..={MAX_HARMONIC} Josephson harmonics, got {}",
                self.e_j.len()
            )));
        }
        if !(self.e_j[0] >= 0.0) || self.e_j.iter().any(|e| !e.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "first Josephson harmonic must be non-negative and finite, got {:?}",
                self.e_j
            )));
        }
        if !self.n_g.is_finite() || !self.flux.is_finite() {
            return Err(Error::InvalidParameter("n_g and flux must be finite".into()));
        }
        Ok(())
    }

    /// Copy with a different gate charge.
    pub fn with_n_g(&self, n_g: f64) -> Self {
        Self {
            n_g,
            ..self.clone()
        }
    }

    pub fn with_flux(&self, flux: f64) -> Self {
        Self {
            flux,
            ..self.clone()
        }
    }

    /// Harmonics after flux tuning. Every harmonic scales with the same
    /// `|cos(π φ_ext/φ_0)|` factor as the first one.
    pub fn effective_harmonics(&self) -> Vec<f64> {
        let scale = flux_scaled_ej(1.0, self.flux);
        self.e_j.iter().map(|e| e * scale).collect()
    }

    /// `E_J1 / E_C` at the current flux.
    pub fn ej_ec_ratio(&self) -> f64 {
        self.effective_harmonics()[0] / self.e_c
    }
}

/// `E_Jmax |cos(π φ_ext/φ_0)|` for a symmetric SQUID.
pub fn flux_scaled_ej(e_j_max: f64, flux: f64) -> f64 {
    e_j_max * (PI * flux).cos().abs()
}

/// Copy of `params` with the gate charge shifted by one electron (0.5 in 2e units).
pub fn parity_shifted(params: &TransmonParams) -> TransmonParams {
    params.with_n_g(params.n_g + 0.5)
}

/// Charge-basis Hamiltonian on states `-cutoff..=cutoff`.
pub fn build_charge_hamiltonian(params: &TransmonParams, cutoff: usize) -> Result<HermitianMatrix> {
    params.validate()?;
    if cutoff < MIN_CHARGE_CUTOFF {
        return Err(Error::InvalidParameter(format!(
            "charge cutoff {cutoff} below minimum {MIN_CHARGE_CUTOFF}"
        )));
    }
    let dim = 2 * cutoff + 1;
    let harmonics = params.effective_harmonics();
    let mut h = Mat::<f64>::zeros(dim, dim);
    for idx in 0..dim {
        let k = idx as f64 - cutoff as f64;
        h[(idx, idx)] = 4.0 * params.e_c * (k - params.n_g).powi(2);
        for (m, e_jm) in harmonics.iter().enumerate() {
            let shift = m + 1;
            if idx + shift < dim {
                h[(idx, idx + shift)] = -0.5 * e_jm;
                h[(idx + shift, idx)] = -0.5 * e_jm;
            }
        }
    }
    HermitianMatrix::from_real_symmetric(&h)
}

/// Lowest eigenpairs of the isolated transmon.
#[derive(Debug, Clone)]
pub struct Spectrum {
    /// Eigenvalues in ascending order (rad/ns).
    pub energies: Vec<f64>,
    /// Eigenvectors in the charge basis, one column per level.
    pub states: Mat<C64>,
    pub charge_cutoff: usize,
    pub n_levels: usize,
}

impl Spectrum {
    /// Diagonalizes at the default cutoff and verifies convergence by
    /// doubling it.
    pub fn solve(params: &TransmonParams, n_levels: usize) -> Result<Self> {
        let spec = Self::solve_with_cutoff(params, n_levels, DEFAULT_CHARGE_CUTOFF)?;
        let fine = Self::solve_with_cutoff(params, n_levels, 2 * DEFAULT_CHARGE_CUTOFF)?;
        let change = relative_change(&spec.energies, &fine.energies, params.e_c);
        if change > CONVERGENCE_TOL {
            return Err(Error::NotConverged {
                what: "transmon spectrum under charge-cutoff doubling".into(),
                change,
                tolerance: CONVERGENCE_TOL,
            });
        }
        Ok(spec)
    }

    pub fn solve_with_cutoff(params: &TransmonParams, n_levels: usize, cutoff: usize) -> Result<Self> {
        let h = build_charge_hamiltonian(params, cutoff)?;
        eigensystem(&h, n_levels)
    }

    /// `ω_j - ω_i`.
    pub fn transition(&self, i: usize, j: usize) -> Result<f64> {
        transition_frequency(self, i, j)
    }

    /// Energies measured from the ground state.
    pub fn relative_energies(&self) -> Vec<f64> {
        self.energies.iter().map(|e| e - self.energies[0]).collect()
    }

    /// Charge number of each basis row.
    fn charge_of_row(&self, row: usize) -> f64 {
        row as f64 - self.charge_cutoff as f64
    }
}

fn relative_change(a: &[f64], b: &[f64], scale: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(scale))
        .fold(0.0, f64::max)
}

/// Lowest `n_levels` eigenpairs of a charge-basis Hamiltonian.
pub fn eigensystem(h: &HermitianMatrix, n_levels: usize) -> Result<Spectrum> {
    let dim = h.dim();
    if dim % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "charge basis must have odd dimension, got {dim}"
        )));
    }
    let pairs = hermitian_eigen(h, n_levels)?;
    Ok(Spectrum {
        energies: pairs.values,
        states: pairs.vectors,
        charge_cutoff: (dim - 1) / 2,
        n_levels,
    })
}

/// `ω_j - ω_i` for `i <= j < n_levels`.
pub fn transition_frequency(spec: &Spectrum, i: usize, j: usize) -> Result<f64> {
    for idx in [i, j] {
        if idx >= spec.n_levels {
            return Err(Error::IndexOutOfRange {
                index: idx,
                len: spec.n_levels,
            });
        }
    }
    if i > j {
        return Err(Error::InvalidParameter(format!(
            "transition {i}->{j} must have i <= j"
        )));
    }
    Ok(spec.energies[j] - spec.energies[i])
}

/// Peak-to-peak variation of `ω_{0,level}` over a gate-charge grid covering
/// `[0, 0.5]` with at least 11 points.
pub fn charge_dispersion(params: &TransmonParams, level: usize, grid: &[f64]) -> Result<f64> {
    if grid.len() < 11 {
        return Err(Error::InvalidParameter(format!(
            "charge grid needs at least 11 points, got {}",
            grid.len()
        )));
    }
    let lo = grid.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo > 1e-12 || hi < 0.5 - 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "charge grid [{lo}, {hi}] does not cover [0, 0.5]"
        )));
    }
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &n_g in grid {
        let spec = Spectrum::solve_with_cutoff(&params.with_n_g(n_g), level + 1, DEFAULT_CHARGE_CUTOFF)?;
        let w = transition_frequency(&spec, 0, level)?;
        min = min.min(w);
        max = max.max(w);
    }
    Ok(max - min)
}

/// Evenly spaced gate-charge grid on `[0, 0.5]`.
pub fn half_period_grid(points: usize) -> Vec<f64> {
    let n = points.max(2);
    (0..n).map(|k| 0.5 * k as f64 / (n - 1) as f64).collect()
}

/// Harmonics `(E_J1, E_J2, E_J3)` of a junction `E_J` in series with a stray
/// inductance `E_L`, expanded to the orders valid for `E_J/E_L ≪ 1`.
pub fn series_inductance_harmonics(e_j: f64, e_l: f64) -> Result<[f64; 3]> {
    if !(e_l > 0.0) || !(e_j >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "series inductance needs e_j >= 0 and e_l > 0, got {e_j}, {e_l}"
        )));
    }
    let x = e_j / e_l;
    if x >= 0.2 {
        return Err(Error::InvalidParameter(format!(
            "E_J/E_L = {x:.3} outside the perturbative range (< 0.2)"
        )));
    }
    let e_j1 = e_j * (1.0 - x.powi(2) / 8.0 + x.powi(4) / 192.0);
    let e_j2 = e_j * (-x / 4.0 + x.powi(3) / 12.0 - x.powi(5) / 96.0);
    let e_j3 = e_j * (x.powi(2) / 8.0 - 9.0 * x.powi(4) / 128.0);
    Ok([e_j1, e_j2, e_j3])
}

/// Linear inductance (henry) for an inductive energy `e_l` in rad/ns:
/// `L = φ_0² / (4π² E_L) = ħ / (4 e² ω_L)`.
pub fn inductance_from_energy(e_l: f64) -> f64 {
    const HBAR: f64 = 1.054_571_817e-34;
    const E_CHARGE: f64 = 1.602_176_634e-19;
    HBAR / (4.0 * E_CHARGE * E_CHARGE * e_l * 1e9)
}

/// `n̂ - n_g` expressed in the transmon eigenbasis.
#[derive(Debug, Clone)]
pub struct ChargeOperator {
    pub matrix: Mat<C64>,
    pub dimension: usize,
}

impl ChargeOperator {
    pub fn new(spec: &Spectrum, n_g: f64) -> Self {
        let n = spec.n_levels;
        let rows = spec.states.nrows();
        let mut matrix = Mat::<C64>::zeros(n, n);
        for a in 0..n {
            for b in a..n {
                let mut acc = C64::new(0.0, 0.0);
                for r in 0..rows {
                    let q = spec.charge_of_row(r) - n_g;
                    acc += spec.states[(r, a)].conj() * spec.states[(r, b)] * q;
                }
                matrix[(a, b)] = acc;
                matrix[(b, a)] = acc.conj();
            }
        }
        Self { matrix, dimension: n }
    }

    /// Largest `|N_ab - conj(N_ba)|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.dimension;
        let mut dev: f64 = 0.0;
        for a in 0..n {
            for b in 0..n {
                dev = dev.max((self.matrix[(a, b)] - self.matrix[(b, a)].conj()).norm());
            }
        }
        dev
    }

    /// Row-major real part. Exact when the eigenvectors are real, which holds
    /// for every transmon Hamiltonian built here.
    pub fn real_row_major(&self) -> Vec<f64> {
        let n = self.dimension;
        let mut out = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                out[a * n + b] = self.matrix[(a, b)].re;
            }
        }
        out
    }

    pub fn max_imaginary(&self) -> f64 {
        let n = self.dimension;
        let mut m: f64 = 0.0;
        for a in 0..n {
            for b in 0..n {
                m = m.max(self.matrix[(a, b)].im.abs());
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::{from_ghz, from_mhz, to_ghz};

    fn device_a(n_g: f64) -> TransmonParams {
        TransmonParams::new(from_mhz(365.0), vec![from_ghz(6.71)], n_g, 0.0).unwrap()
    }

    #[test]
    fn hamiltonian_structure() {
        let p = TransmonParams::new(1.0, vec![10.0, -0.1, 0.01], 0.2, 0.0).unwrap();
        let h = build_charge_hamiltonian(&p, 10).unwrap();
        assert_eq!(h.dim(), 21);
        // k = -10 sits at row 0.
        assert!((h.get(0, 0).re - 4.0 * (-10.2f64).powi(2)).abs() < 1e-12);
        assert!((h.get(3, 4).re + 5.0).abs() < 1e-15);
        assert!((h.get(3, 5).re - 0.05).abs() < 1e-15);
        assert!((h.get(3, 6).re + 0.005).abs() < 1e-15);
        assert_eq!(h.get(3, 7).re, 0.0);
    }

    #[test]
    fn rejects_small_cutoff() {
        assert!(build_charge_hamiltonian(&device_a(0.0), 9).is_err());
    }

    #[test]
    fn rejects_invalid_params() {
        assert!(TransmonParams::new(0.0, vec![1.0], 0.0, 0.0).is_err());
        assert!(TransmonParams::new(1.0, vec![], 0.0, 0.0).is_err());
        assert!(TransmonParams::new(1.0, vec![1.0, 0.1, 0.01, 0.001], 0.0, 0.0).is_err());
    }

    #[test]
    fn free_rotor_limit() {
        let p = TransmonParams::new(0.7, vec![0.0], 0.3, 0.0).unwrap();
        let spec = Spectrum::solve_with_cutoff(&p, 10, 20).unwrap();
        let mut exact: Vec<f64> = (-20..=20).map(|k| 4.0 * 0.7 * (k as f64 - 0.3).powi(2)).collect();
        exact.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (e, x) in spec.energies.iter().zip(&exact) {
            assert!((e - x).abs() <= 1e-10 * x.abs().max(1.0), "{e} vs {x}");
        }
    }

    #[test]
    fn transition_indices() {
        let spec = Spectrum::solve(&device_a(0.0), 5).unwrap();
        assert_eq!(transition_frequency(&spec, 2, 2).unwrap(), 0.0);
        assert!(transition_frequency(&spec, 0, 1).unwrap() > 0.0);
        assert!(matches!(
            transition_frequency(&spec, 0, 5),
            Err(Error::IndexOutOfRange { index: 5, len: 5 })
        ));
        assert!(transition_frequency(&spec, 3, 1).is_err());
    }

    #[test]
    fn flux_scaling() {
        assert_eq!(flux_scaled_ej(3.0, 0.0), 3.0);
        assert!(flux_scaled_ej(3.0, 0.5).abs() < 1e-15);
        assert!((flux_scaled_ej(3.0, 0.25) - 3.0 / 2f64.sqrt()).abs() < 1e-15);
        let p = TransmonParams::new(1.0, vec![10.0, -0.1], 0.0, 0.25).unwrap();
        let h = p.effective_harmonics();
        assert!((h[1] / h[0] + 0.01).abs() < 1e-15);
    }

    #[test]
    fn series_inductance_limits() {
        let [a, b, c] = series_inductance_harmonics(5.0, 1e9).unwrap();
        assert!((a - 5.0).abs() < 1e-12 && b.abs() < 1e-7 && c.abs() < 1e-12);
        assert!(series_inductance_harmonics(5.0, 20.0).is_err());
        assert!(series_inductance_harmonics(5.0, 0.0).is_err());
    }

    #[test]
    fn parity_shift_twice_restores_spectrum() {
        let p = device_a(0.1);
        let once = parity_shifted(&p);
        assert!((once.n_g - 0.6).abs() < 1e-15);
        let twice = parity_shifted(&once);
        let s0 = Spectrum::solve(&p, 6).unwrap();
        let s2 = Spectrum::solve(&twice, 6).unwrap();
        for (a, b) in s0.energies.iter().zip(&s2.energies) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn charge_operator_selection_rule_at_zero_gate_charge() {
        let p = device_a(0.0);
        let spec = Spectrum::solve(&p, 8).unwrap();
        let n = ChargeOperator::new(&spec, 0.0);
        assert!(n.hermiticity_defect() < 1e-12);
        // Levels above the barrier form near-degenerate parity doublets whose
        // numerical eigenvectors need not be parity eigenstates.
        for a in 0..6 {
            for b in 0..6 {
                if (a + b) % 2 == 0 {
                    assert!(n.matrix[(a, b)].norm() < 1e-10, "N[{a},{b}] = {}", n.matrix[(a, b)]);
                }
            }
        }
        assert!(n.matrix[(0, 1)].norm() > 0.1);
    }

    #[test]
    fn charge_operator_diagonal_vanishes_at_half_integer() {
        let p = device_a(0.5);
        let spec = Spectrum::solve(&p, 6).unwrap();
        let n = ChargeOperator::new(&spec, 0.5);
        for a in 0..6 {
            assert!(n.matrix[(a, a)].norm() < 1e-10);
        }
    }

    #[test]
    fn dispersion_grid_validation() {
        let p = device_a(0.0);
        assert!(charge_dispersion(&p, 1, &half_period_grid(5)).is_err());
        assert!(charge_dispersion(&p, 1, &[0.0, 0.1, 0.2, 0.3, 0.4, 0.41, 0.42, 0.43, 0.44, 0.45, 0.46]).is_err());
        let d = charge_dispersion(&p, 1, &half_period_grid(11)).unwrap();
        assert!(to_ghz(d) > 1e-3);
    }
}
