//! The static transmon–resonator system
//! `H = H_t + ω_r a†a - i g (n̂ - n_g)(a - a†)`, dressed-state labels, pulled
//! resonator frequencies and low-power resonance loci.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen, HermitianMatrix, C64};
use crate::transmon::{ChargeOperator, Spectrum, TransmonParams, DEFAULT_CHARGE_CUTOFF};

/// Smallest truncations accepted for fit-target use.
pub const MIN_TRANSMON_LEVELS: usize = 10;
pub const MIN_PHOTONS: usize = 15;
/// Relative shift of retained dressed energies tolerated when the photon
/// cutoff is doubled.
pub const PHOTON_CONVERGENCE_TOL: f64 = 1e-6;
/// Labels whose best and second-best overlaps differ by less than this are
/// ambiguous.
pub const LABEL_MARGIN: f64 = 0.05;
/// Flux tolerance of the resonance-locus bisection.
pub const FLUX_TOL: f64 = 1e-6;
/// Residual `|ω_ij + sω_s - nω_d|` (rad/ns) below which a bracketed root is a
/// resonance: 0.1 MHz.
pub const RESONANCE_TOL: f64 = 2.0 * std::f64::consts::PI * 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitParams {
    pub transmon: TransmonParams,
    /// Bare resonator frequency (rad/ns).
    pub omega_r: f64,
    /// Coupling (rad/ns).
    pub g: f64,
    /// Resonator decay rate (rad/ns).
    pub kappa: f64,
}

impl CircuitParams {
    pub fn new(transmon: TransmonParams, omega_r: f64, g: f64, kappa: f64) -> Result<Self> {
        let c = Self {
            transmon,
            omega_r,
            g,
            kappa,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.transmon.validate()?;
        for (name, v) in [("omega_r", self.omega_r), ("g", self.g), ("kappa", self.kappa)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.g > 0.1 * self.omega_r {
            log::warn!(
                "g/omega_r = {:.3}: outside the dispersive regime",
                self.g / self.omega_r
            );
        }
        Ok(())
    }

    pub fn with_n_g(&self, n_g: f64) -> Self {
        Self {
            transmon: self.transmon.with_n_g(n_g),
            ..self.clone()
        }
    }

    pub fn with_flux(&self, flux: f64) -> Self {
        Self {
            transmon: self.transmon.with_flux(flux),
            ..self.clone()
        }
    }
}

fn check_truncation(n_transmon: usize, n_photon: usize) -> Result<()> {
    if n_transmon < 2 || n_photon < 2 {
        return Err(Error::InvalidParameter(format!(
            "truncation ({n_transmon}, {n_photon}) too small"
        )));
    }
    Ok(())
}

/// Coupled Hamiltonian on `transmon ⊗ resonator`, with the transmon in its
/// eigenbasis. Basis index of `|i, n⟩` is `i * n_photon + n`.
pub fn build_coupled_hamiltonian(circuit: &CircuitParams, n_transmon: usize, n_photon: usize) -> Result<HermitianMatrix> {
    check_truncation(n_transmon, n_photon)?;
    let spec = Spectrum::solve_with_cutoff(&circuit.transmon, n_transmon, DEFAULT_CHARGE_CUTOFF)?;
    let charge = ChargeOperator::new(&spec, circuit.transmon.n_g);
    let dim = n_transmon * n_photon;
    let mut h = Mat::<C64>::zeros(dim, dim);
    for i in 0..n_transmon {
        for n in 0..n_photon {
            h[(i * n_photon + n, i * n_photon + n)] =
                C64::new(spec.energies[i] + circuit.omega_r * n as f64, 0.0);
        }
    }
    // -i g N (a - a†): ⟨i,n|·|j,n+1⟩ = -i g N_ij √(n+1), ⟨i,n+1|·|j,n⟩ = +i g N_ij √(n+1).
    for i in 0..n_transmon {
        for j in 0..n_transmon {
            let nij = charge.matrix[(i, j)];
            for n in 0..n_photon - 1 {
                let amp = circuit.g * ((n + 1) as f64).sqrt();
                h[(i * n_photon + n, j * n_photon + n + 1)] += C64::new(0.0, -amp) * nij;
                h[(i * n_photon + n + 1, j * n_photon + n)] += C64::new(0.0, amp) * nij;
            }
        }
    }
    HermitianMatrix::new(h)
}

/// Real-gauge form `g N (a + a†)`, unitarily equivalent under `a → i a`.
fn real_gauge_hamiltonian(spec: &Spectrum, charge: &ChargeOperator, omega_r: f64, g: f64, n_photon: usize) -> Mat<f64> {
    let n_transmon = spec.n_levels;
    let dim = n_transmon * n_photon;
    let mut h = Mat::<f64>::zeros(dim, dim);
    for i in 0..n_transmon {
        for n in 0..n_photon {
            h[(i * n_photon + n, i * n_photon + n)] = spec.energies[i] + omega_r * n as f64;
        }
        for j in 0..n_transmon {
            let nij = charge.matrix[(i, j)].re;
            for n in 0..n_photon - 1 {
                let v = g * ((n + 1) as f64).sqrt() * nij;
                h[(i * n_photon + n, j * n_photon + n + 1)] += v;
                h[(i * n_photon + n + 1, j * n_photon + n)] += v;
            }
        }
    }
    h
}

/// Best and runner-up dressed states for one bare label.
#[derive(Debug, Clone, Copy)]
struct LabelChoice {
    index: usize,
    overlap: f64,
    runner_up: usize,
    runner_up_overlap: f64,
}

/// Dressed eigenpairs with `(transmon, photon)` labels.
#[derive(Debug, Clone)]
pub struct DressedSpectrum {
    pub energies: Vec<f64>,
    /// Eigenvectors in the bare product basis.
    pub states: Mat<C64>,
    pub n_transmon: usize,
    pub n_photon: usize,
    /// `labels[k]` is the bare label assigned to dressed state `k`.
    pub labels: Vec<(usize, usize)>,
    choices: Vec<Option<LabelChoice>>,
}

impl DressedSpectrum {
    /// Diagonalizes the coupled system at the given truncation.
    pub fn solve(circuit: &CircuitParams, n_transmon: usize, n_photon: usize) -> Result<Self> {
        check_truncation(n_transmon, n_photon)?;
        circuit.validate()?;
        let spec = Spectrum::solve_with_cutoff(&circuit.transmon, n_transmon, DEFAULT_CHARGE_CUTOFF)?;
        let charge = ChargeOperator::new(&spec, circuit.transmon.n_g);
        let h = real_gauge_hamiltonian(&spec, &charge, circuit.omega_r, circuit.g, n_photon);
        let dim = h.nrows();
        let pairs = hermitian_eigen(&HermitianMatrix::from_real_symmetric(&h)?, dim)?;
        Ok(Self::labeled(pairs.values, pairs.vectors, n_transmon, n_photon))
    }

    /// As [`DressedSpectrum::solve`], then checks that doubling the photon
    /// cutoff moves the labeled states with `n < n_photon/2` by less than
    /// [`PHOTON_CONVERGENCE_TOL`] relative.
    pub fn solve_converged(circuit: &CircuitParams, n_transmon: usize, n_photon: usize) -> Result<Self> {
        let ds = Self::solve(circuit, n_transmon, n_photon)?;
        let fine = Self::solve(circuit, n_transmon, 2 * n_photon)?;
        let mut change: f64 = 0.0;
        for i in 0..n_transmon / 2 {
            for n in 0..n_photon / 2 {
                let (Ok(a), Ok(b)) = (ds.energy((i, n)), fine.energy((i, n))) else {
                    continue;
                };
                change = change.max((a - b).abs() / a.abs().max(circuit.omega_r));
            }
        }
        if change > PHOTON_CONVERGENCE_TOL {
            return Err(Error::NotConverged {
                what: "dressed spectrum under photon-cutoff doubling".into(),
                change,
                tolerance: PHOTON_CONVERGENCE_TOL,
            });
        }
        Ok(ds)
    }

    fn labeled(energies: Vec<f64>, states: Mat<C64>, n_transmon: usize, n_photon: usize) -> Self {
        let dim = energies.len();
        let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(dim * dim);
        for k in 0..dim {
            for b in 0..dim {
                let o = states[(b, k)].norm_sqr();
                if o > 1e-6 {
                    pairs.push((o, b, k));
                }
            }
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut bare_of = vec![usize::MAX; dim];
        let mut dressed_of = vec![usize::MAX; dim];
        for &(_, b, k) in &pairs {
            if bare_of[k] == usize::MAX && dressed_of[b] == usize::MAX {
                bare_of[k] = b;
                dressed_of[b] = k;
            }
        }
        // Anything left over (negligible overlaps everywhere) pairs up in order.
        let free: Vec<usize> = (0..dim).filter(|&b| dressed_of[b] == usize::MAX).collect();
        let mut free_bare = free.into_iter();
        for k in 0..dim {
            if bare_of[k] == usize::MAX {
                let b = free_bare.next().expect("square assignment");
                bare_of[k] = b;
                dressed_of[b] = k;
            }
        }
        let choices = (0..dim)
            .map(|b| {
                let k = dressed_of[b];
                let (runner_up, runner_up_overlap) = (0..dim)
                    .filter(|&q| q != k)
                    .map(|q| (q, states[(b, q)].norm_sqr()))
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .unwrap_or((k, 0.0));
                Some(LabelChoice {
                    index: k,
                    overlap: states[(b, k)].norm_sqr(),
                    runner_up,
                    runner_up_overlap,
                })
            })
            .collect();
        let labels = bare_of.iter().map(|&b| (b / n_photon, b % n_photon)).collect();
        Self {
            energies,
            states,
            n_transmon,
            n_photon,
            labels,
            choices,
        }
    }

    /// Dressed index carrying `label`, failing if the assignment is ambiguous.
    pub fn index_of(&self, label: (usize, usize)) -> Result<usize> {
        let (i, n) = label;
        if i >= self.n_transmon || n >= self.n_photon {
            return Err(Error::MissingLabel(label));
        }
        let c = self.choices[i * self.n_photon + n].ok_or(Error::MissingLabel(label))?;
        if c.overlap - c.runner_up_overlap < LABEL_MARGIN {
            return Err(Error::AmbiguousLabel {
                label,
                first: c.index,
                second: c.runner_up,
                first_overlap: c.overlap,
                second_overlap: c.runner_up_overlap,
            });
        }
        Ok(c.index)
    }

    pub fn energy(&self, label: (usize, usize)) -> Result<f64> {
        Ok(self.energies[self.index_of(label)?])
    }
}

/// `ω_{r,i} = E(i,1) - E(i,0)`.
pub fn pulled_resonator_frequency(ds: &DressedSpectrum, i: usize) -> Result<f64> {
    Ok(ds.energy((i, 1))? - ds.energy((i, 0))?)
}

/// Root locus of `ω_ij + s ω_s = n ω_d`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResonanceLine {
    pub transition: (usize, usize),
    pub order: usize,
    /// `s ω_s` (rad/ns); zero for plain multiphoton lines.
    pub spurious_offset: f64,
    /// `(flux, n_g)` points.
    pub locus: Vec<(f64, f64)>,
}

/// Which resonances to look for.
#[derive(Debug, Clone)]
pub struct ResonanceQuery {
    pub transitions: Vec<(usize, usize)>,
    pub max_order: usize,
    /// Spurious-mode frequency; lines with and without it are returned.
    pub spurious: Option<f64>,
}

impl ResonanceQuery {
    /// Transitions out of the qubit states `0` and `1` up to level `max_level`.
    pub fn from_qubit_states(max_level: usize, max_order: usize, spurious: Option<f64>) -> Self {
        let mut transitions = Vec::new();
        for i in 0..2 {
            for j in i + 1..=max_level {
                transitions.push((i, j));
            }
        }
        Self {
            transitions,
            max_order,
            spurious,
        }
    }
}

/// Resonance loci over `(flux, n_g)`, found by bisection in flux between
/// consecutive points of `flux_grid` for each `n_g`.
pub fn resonance_condition_map(
    circuit: &CircuitParams,
    omega_d: f64,
    flux_grid: &[f64],
    ng_grid: &[f64],
    query: &ResonanceQuery,
) -> Result<Vec<ResonanceLine>> {
    if query.max_order > 4 {
        return Err(Error::InvalidParameter(format!(
            "max_order {} exceeds 4",
            query.max_order
        )));
    }
    if flux_grid.len() < 2 || ng_grid.is_empty() {
        return Err(Error::InvalidParameter("resonance grids must be non-empty".into()));
    }
    let top = query.transitions.iter().map(|t| t.0.max(t.1)).max().unwrap_or(0);
    let n_levels = top + 1;
    let freq = |flux: f64, n_g: f64| -> Result<Vec<f64>> {
        let p = circuit.transmon.with_flux(flux).with_n_g(n_g);
        Ok(Spectrum::solve_with_cutoff(&p, n_levels, DEFAULT_CHARGE_CUTOFF)?.energies)
    };
    let offsets: Vec<f64> = match query.spurious {
        Some(ws) => vec![0.0, ws],
        None => vec![0.0],
    };
    let mut lines: Vec<ResonanceLine> = Vec::new();
    for &(i, j) in &query.transitions {
        for order in 0..=query.max_order {
            for &off in &offsets {
                lines.push(ResonanceLine {
                    transition: (i, j),
                    order,
                    spurious_offset: off,
                    locus: Vec::new(),
                });
            }
        }
    }
    for &n_g in ng_grid {
        let samples = flux_grid
            .iter()
            .map(|&f| freq(f, n_g))
            .collect::<Result<Vec<_>>>()?;
        for line in lines.iter_mut() {
            let (i, j) = line.transition;
            let target = line.order as f64 * omega_d - line.spurious_offset;
            let resid = |e: &[f64]| e[j] - e[i] - target;
            for w in 0..flux_grid.len() - 1 {
                let (mut lo, mut hi) = (flux_grid[w], flux_grid[w + 1]);
                let mut f_lo = resid(&samples[w]);
                let f_hi = resid(&samples[w + 1]);
                if f_lo == 0.0 {
                    line.locus.push((lo, n_g));
                    continue;
                }
                if f_lo.signum() == f_hi.signum() {
                    continue;
                }
                while (hi - lo).abs() > FLUX_TOL {
                    let mid = 0.5 * (lo + hi);
                    let f_mid = resid(&freq(mid, n_g)?);
                    if f_mid.signum() == f_lo.signum() {
                        lo = mid;
                        f_lo = f_mid;
                    } else {
                        hi = mid;
                    }
                }
                let root = 0.5 * (lo + hi);
                if resid(&freq(root, n_g)?).abs() < RESONANCE_TOL {
                    line.locus.push((root, n_g));
                }
            }
        }
    }
    Ok(lines)
}

/// Flux in `[lo, hi]` at which `ω_0j(flux)` equals `target`, by bisection.
pub fn flux_for_transition(
    transmon: &TransmonParams,
    level: usize,
    target: f64,
    lo: f64,
    hi: f64,
) -> Result<Option<f64>> {
    let f = |flux: f64| -> Result<f64> {
        let s = Spectrum::solve_with_cutoff(&transmon.with_flux(flux), level + 1, DEFAULT_CHARGE_CUTOFF)?;
        Ok(s.energies[level] - s.energies[0] - target)
    };
    let (mut a, mut b) = (lo, hi);
    let mut fa = f(a)?;
    let fb = f(b)?;
    if fa.signum() == fb.signum() {
        return Ok(None);
    }
    while (b - a).abs() > FLUX_TOL {
        let m = 0.5 * (a + b);
        let fm = f(m)?;
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Ok(Some(0.5 * (a + b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::{from_ghz, from_mhz, to_mhz};

    fn device_b() -> CircuitParams {
        let ej = from_ghz(8.718);
        CircuitParams::new(
            TransmonParams::new(from_mhz(216.6), vec![ej, -0.00768 * ej, 0.000398 * ej], 0.0, 0.0).unwrap(),
            from_ghz(7.04767),
            from_mhz(186.5),
            from_mhz(0.92),
        )
        .unwrap()
    }

    #[test]
    fn uncoupled_energies_are_bare_sums() {
        let mut c = device_b();
        c.g = 1e-300;
        let ds = DressedSpectrum::solve(&c, 6, 5).unwrap();
        let spec = Spectrum::solve_with_cutoff(&c.transmon, 6, DEFAULT_CHARGE_CUTOFF).unwrap();
        for i in 0..6 {
            for n in 0..5 {
                let e = ds.energy((i, n)).unwrap();
                let bare = spec.energies[i] + n as f64 * c.omega_r;
                assert!((e - bare).abs() <= 1e-10 * bare.abs().max(1.0));
            }
        }
        assert!((pulled_resonator_frequency(&ds, 0).unwrap() - c.omega_r).abs() < 1e-10);
    }

    #[test]
    fn complex_and_real_gauge_agree() {
        let c = device_b().with_n_g(0.23);
        let h = build_coupled_hamiltonian(&c, 6, 6).unwrap();
        let complex = hermitian_eigen(&h, 36).unwrap().values;
        let ds = DressedSpectrum::solve(&c, 6, 6).unwrap();
        for (a, b) in complex.iter().zip(&ds.energies) {
            assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
        }
    }

    #[test]
    fn dispersive_shift_is_negative() {
        let ds = DressedSpectrum::solve_converged(&device_b(), 10, 15).unwrap();
        let chi = pulled_resonator_frequency(&ds, 1).unwrap() - pulled_resonator_frequency(&ds, 0).unwrap();
        assert!(chi < 0.0);
        assert!((to_mhz(chi) + 2.5).abs() < 0.625, "chi = {} MHz", to_mhz(chi));
    }

    #[test]
    fn no_zero_order_resonances() {
        let q = ResonanceQuery {
            transitions: vec![(0, 1), (0, 2)],
            max_order: 0,
            spurious: None,
        };
        let lines = resonance_condition_map(&device_b(), from_ghz(7.0), &[0.0, 0.2, 0.4], &[0.0], &q).unwrap();
        assert!(lines.iter().all(|l| l.locus.is_empty()));
    }
}
