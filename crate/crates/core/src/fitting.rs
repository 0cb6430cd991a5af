//! Fitting circuit parameters to spectroscopy.
//!
//! The loss is `Σ w_k |ω_k^model - ω_k^exp|` in GHz, with default weights
//! `1/i` for qubit transitions `ω_0i` and 1 for pulled resonator frequencies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{pulled_resonator_frequency, CircuitParams, DressedSpectrum};
use crate::error::{Error, Result};
use crate::transmon::series_inductance_harmonics;
use crate::units::to_ghz;

/// Transmon and photon truncations of the dressed model used in the fit.
pub const FIT_TRANSMON_LEVELS: usize = 10;
pub const FIT_PHOTONS: usize = 15;
pub const MAX_ITERATIONS: usize = 2000;
/// Stop once the simplex spread in loss (GHz) falls below this.
pub const LOSS_TOL: f64 = 1e-10;
pub const DEFAULT_SEEDS: usize = 5;
/// Relative spread of the multi-start initial points.
pub const SEED_SPREAD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum TargetKind {
    /// `ω_0i` at gate charge `n_g`.
    Qubit { level: usize, n_g: f64 },
    /// `ω_{r,i}`.
    Resonator { state: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub kind: TargetKind,
    /// Measured frequency (rad/ns).
    pub frequency: f64,
    pub weight: Option<f64>,
}

impl Target {
    pub fn weight(&self) -> f64 {
        self.weight.unwrap_or(match self.kind {
            TargetKind::Qubit { level, .. } => 1.0 / level as f64,
            TargetKind::Resonator { .. } => 1.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectroscopyTargets {
    pub targets: Vec<Target>,
}

impl SpectroscopyTargets {
    /// Qubit levels 1..=3 at `n_g = 0`, 2..=3 at `n_g = 0.5`, resonator for 0 and 1.
    pub fn standard_kinds() -> Vec<TargetKind> {
        let mut kinds: Vec<TargetKind> = (1..=3).map(|level| TargetKind::Qubit { level, n_g: 0.0 }).collect();
        kinds.extend((2..=3).map(|level| TargetKind::Qubit { level, n_g: 0.5 }));
        kinds.extend((0..=1).map(|state| TargetKind::Resonator { state }));
        kinds
    }

    /// Model frequencies of `circuit` for each kind.
    pub fn synthesize(circuit: &CircuitParams, kinds: &[TargetKind]) -> Result<Self> {
        let freqs = model_frequencies(circuit, kinds)?;
        Ok(Self {
            targets: kinds
                .iter()
                .zip(freqs)
                .map(|(&kind, frequency)| Target {
                    kind,
                    frequency,
                    weight: None,
                })
                .collect(),
        })
    }

    /// Keeps only the qubit transitions up to `max_level`.
    pub fn restricted(&self, max_level: usize) -> Self {
        Self {
            targets: self
                .targets
                .iter()
                .filter(|t| match t.kind {
                    TargetKind::Qubit { level, .. } => level <= max_level,
                    TargetKind::Resonator { .. } => true,
                })
                .cloned()
                .collect(),
        }
    }

    pub fn kinds(&self) -> Vec<TargetKind> {
        self.targets.iter().map(|t| t.kind).collect()
    }

    pub fn validate(&self, free_parameters: usize) -> Result<()> {
        if self.targets.len() < free_parameters {
            return Err(Error::InvalidParameter(format!(
                "{} targets for {free_parameters} free parameters",
                self.targets.len()
            )));
        }
        for t in &self.targets {
            if !(t.frequency > 0.0 && t.frequency.is_finite()) {
                return Err(Error::InvalidParameter(format!("target {:?} has non-positive frequency", t.kind)));
            }
            if let TargetKind::Qubit { level: 0, .. } = t.kind {
                return Err(Error::InvalidParameter("qubit targets need level >= 1".into()));
            }
        }
        Ok(())
    }
}

/// Model frequencies (rad/ns) from the dressed spectrum, one diagonalization
/// per distinct gate charge.
pub fn model_frequencies(circuit: &CircuitParams, kinds: &[TargetKind]) -> Result<Vec<f64>> {
    let base = circuit.transmon.n_g;
    let mut charges: Vec<f64> = kinds
        .iter()
        .map(|k| match *k {
            TargetKind::Qubit { n_g, .. } => n_g,
            TargetKind::Resonator { .. } => base,
        })
        .collect();
    charges.sort_by(f64::total_cmp);
    charges.dedup();
    let spectra = charges
        .iter()
        .map(|&n_g| DressedSpectrum::solve(&circuit.with_n_g(n_g), FIT_TRANSMON_LEVELS, FIT_PHOTONS))
        .collect::<Result<Vec<_>>>()?;
    let at = |n_g: f64| &spectra[charges.iter().position(|&x| x == n_g).expect("charge listed")];
    let mut out = Vec::with_capacity(kinds.len());
    for kind in kinds {
        let f = match *kind {
            TargetKind::Qubit { level, n_g } => {
                let ds = at(n_g);
                ds.energy((level, 0))? - ds.energy((0, 0))?
            }
            TargetKind::Resonator { state } => pulled_resonator_frequency(at(base), state)?,
        };
        out.push(f);
    }
    Ok(out)
}

/// Signed weighted deviations in GHz.
pub fn weighted_residuals(circuit: &CircuitParams, targets: &SpectroscopyTargets) -> Result<Vec<f64>> {
    let model = model_frequencies(circuit, &targets.kinds())?;
    Ok(targets
        .targets
        .iter()
        .zip(model)
        .map(|(t, m)| t.weight() * to_ghz(m - t.frequency))
        .collect())
}

pub fn loss(circuit: &CircuitParams, targets: &SpectroscopyTargets) -> Result<f64> {
    Ok(weighted_residuals(circuit, targets)?.iter().map(|r| r.abs()).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelVariant {
    /// `(E_C, E_J1, E_J2/E_J1, E_J3/E_J1, g, ω_r)`.
    Multiharmonic,
    /// `(E_C, E_J, g, ω_r)` with a single cosine.
    Conventional,
    /// `(E_C, E_J, E_L, g, ω_r)` with harmonics from a series inductance.
    SeriesInductance,
}

impl ModelVariant {
    pub fn n_parameters(self) -> usize {
        match self {
            Self::Multiharmonic => 6,
            Self::Conventional => 4,
            Self::SeriesInductance => 5,
        }
    }

    pub fn parameter_names(self) -> &'static [&'static str] {
        match self {
            Self::Multiharmonic => &["e_c", "e_j1", "e_j2_ratio", "e_j3_ratio", "g", "omega_r"],
            Self::Conventional => &["e_c", "e_j", "g", "omega_r"],
            Self::SeriesInductance => &["e_c", "e_j", "e_l", "g", "omega_r"],
        }
    }

    fn is_ratio(self, k: usize) -> bool {
        self == Self::Multiharmonic && (k == 2 || k == 3)
    }
}

/// Starting point of a fit: circuit plus the series inductive energy for
/// [`ModelVariant::SeriesInductance`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitModel {
    pub circuit: CircuitParams,
    pub e_l: Option<f64>,
}

impl FitModel {
    pub fn vector(&self, variant: ModelVariant) -> Result<Vec<f64>> {
        let c = &self.circuit;
        let t = &c.transmon;
        let ej = |m: usize| t.e_j.get(m).copied().unwrap_or(0.0);
        Ok(match variant {
            ModelVariant::Multiharmonic => vec![t.e_c, ej(0), ej(1) / ej(0), ej(2) / ej(0), c.g, c.omega_r],
            ModelVariant::Conventional => vec![t.e_c, ej(0), c.g, c.omega_r],
            ModelVariant::SeriesInductance => {
                let e_l = self
                    .e_l
                    .ok_or_else(|| Error::InvalidParameter("series-inductance fit needs e_l".into()))?;
                vec![t.e_c, ej(0), e_l, c.g, c.omega_r]
            }
        })
    }

    pub fn from_vector(&self, variant: ModelVariant, x: &[f64]) -> Result<Self> {
        let mut c = self.circuit.clone();
        let mut e_l = None;
        match variant {
            ModelVariant::Multiharmonic => {
                c.transmon.e_c = x[0];
                c.transmon.e_j = vec![x[1], x[2] * x[1], x[3] * x[1]];
                c.g = x[4];
                c.omega_r = x[5];
            }
            ModelVariant::Conventional => {
                c.transmon.e_c = x[0];
                c.transmon.e_j = vec![x[1]];
                c.g = x[2];
                c.omega_r = x[3];
            }
            ModelVariant::SeriesInductance => {
                c.transmon.e_c = x[0];
                c.transmon.e_j = series_inductance_harmonics(x[1], x[2])?.to_vec();
                e_l = Some(x[2]);
                c.g = x[3];
                c.omega_r = x[4];
            }
        }
        c.validate()?;
        Ok(Self { circuit: c, e_l })
    }
}

/// Box constraints on the fit vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    /// ±20% of each initial value; harmonic ratios in [-5%, 5%].
    pub fn around(x0: &[f64], variant: ModelVariant) -> Self {
        let mut lower = Vec::with_capacity(x0.len());
        let mut upper = Vec::with_capacity(x0.len());
        for (k, &v) in x0.iter().enumerate() {
            if variant.is_ratio(k) {
                lower.push(-0.05);
                upper.push(0.05);
            } else {
                lower.push(v - 0.2 * v.abs());
                upper.push(v + 0.2 * v.abs());
            }
        }
        Self { lower, upper }
    }

    pub fn check(&self, x: &[f64], names: &[&str]) -> Result<()> {
        for (k, &v) in x.iter().enumerate() {
            if v < self.lower[k] || v > self.upper[k] {
                return Err(Error::OutOfBounds {
                    name: names[k].to_string(),
                    value: v,
                    lower: self.lower[k],
                    upper: self.upper[k],
                });
            }
        }
        Ok(())
    }

    fn clamp(&self, x: &mut [f64]) {
        for (k, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[k], self.upper[k]);
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Residual {
    pub kind: TargetKind,
    pub target: f64,
    pub model: f64,
    /// Weighted signed deviation in GHz.
    pub weighted: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub variant: ModelVariant,
    pub model: FitModel,
    pub loss: f64,
    pub residuals: Vec<Residual>,
    pub iterations: usize,
    pub converged: bool,
    pub seed: Option<u64>,
}

impl FitResult {
    pub fn ej_ec_ratio(&self) -> f64 {
        self.model.circuit.transmon.e_j[0] / self.model.circuit.transmon.e_c
    }
}

/// Loss of the vector `x`, or infinity where the model cannot be evaluated.
struct Objective<'a> {
    base: &'a FitModel,
    variant: ModelVariant,
    targets: &'a SpectroscopyTargets,
}

impl Objective<'_> {
    fn residuals(&self, x: &[f64]) -> Option<Vec<f64>> {
        let m = self.base.from_vector(self.variant, x).ok()?;
        weighted_residuals(&m.circuit, self.targets).ok()
    }

    fn loss(&self, x: &[f64]) -> f64 {
        self.residuals(x)
            .map_or(f64::INFINITY, |r| r.iter().map(|v| v.abs()).sum())
    }
}

/// Nelder-Mead on the box-clamped, scale-normalized vector.
fn nelder_mead(obj: &Objective, x0: &[f64], bounds: &Bounds) -> (Vec<f64>, f64, usize, bool) {
    let n = x0.len();
    let scale: Vec<f64> = (0..n).map(|k| (bounds.upper[k] - bounds.lower[k]) * 0.5).collect();
    let to_x = |u: &[f64]| -> Vec<f64> {
        let mut x: Vec<f64> = (0..n).map(|k| x0[k] + u[k] * scale[k]).collect();
        bounds.clamp(&mut x);
        x
    };
    let f = |u: &[f64]| obj.loss(&to_x(u));
    let mut simplex: Vec<Vec<f64>> = vec![vec![0.0; n]];
    for k in 0..n {
        let mut u = vec![0.0; n];
        u[k] = 0.05;
        simplex.push(u);
    }
    let mut values: Vec<f64> = simplex.iter().map(|u| f(u)).collect();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITERATIONS {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&k| simplex[k].clone()).collect();
        values = order.iter().map(|&k| values[k]).collect();
        if values[n] - values[0] < LOSS_TOL {
            converged = true;
            break;
        }
        iterations += 1;
        let centroid: Vec<f64> = (0..n).map(|k| simplex[..n].iter().map(|u| u[k]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|k| centroid[k] + t * (simplex[n][k] - centroid[k])).collect() };
        let xr = along(-1.0);
        let fr = f(&xr);
        if fr < values[0] {
            let xe = along(-2.0);
            let fe = f(&xe);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
        } else {
            let (xc, fc) = if fr < values[n] {
                let xc = along(-0.5);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = f(&xc);
                (xc, fc)
            };
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
            } else {
                for k in 1..=n {
                    simplex[k] = (0..n).map(|d| simplex[0][d] + 0.5 * (simplex[k][d] - simplex[0][d])).collect();
                    values[k] = f(&simplex[k]);
                }
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
    (to_x(&simplex[best]), values[best], iterations, converged)
}

/// Damped Gauss-Newton on the weighted residuals, kept only while it lowers
/// the L1 loss. Finite-difference step is 1e-6 relative.
fn polish(obj: &Objective, x0: Vec<f64>, f0: f64, bounds: &Bounds) -> (Vec<f64>, f64) {
    let n = x0.len();
    let (mut x, mut fx) = (x0, f0);
    let mut lambda = 1e-6;
    for _ in 0..30 {
        let Some(r) = obj.residuals(&x) else { break };
        let m = r.len();
        let mut jac = vec![vec![0.0; n]; m];
        let mut ok = true;
        for k in 0..n {
            let h = 1e-6 * x[k].abs().max(1e-4);
            let mut xp = x.clone();
            xp[k] += h;
            let Some(rp) = obj.residuals(&xp) else {
                ok = false;
                break;
            };
            for i in 0..m {
                jac[i][k] = (rp[i] - r[i]) / h;
            }
        }
        if !ok {
            break;
        }
        let mut improved = false;
        for _ in 0..8 {
            // (JᵀJ + λ diag) δ = -Jᵀr
            let mut a = vec![vec![0.0; n]; n];
            let mut b = vec![0.0; n];
            for p in 0..n {
                for q in 0..n {
                    a[p][q] = (0..m).map(|i| jac[i][p] * jac[i][q]).sum();
                }
                b[p] = -(0..m).map(|i| jac[i][p] * r[i]).sum::<f64>();
            }
            for p in 0..n {
                a[p][p] *= 1.0 + lambda;
            }
            let Some(delta) = solve_dense(a, b) else { break };
            let mut xn: Vec<f64> = x.iter().zip(&delta).map(|(v, d)| v + d).collect();
            bounds.clamp(&mut xn);
            let fnew = obj.loss(&xn);
            if fnew < fx {
                x = xn;
                fx = fnew;
                lambda = (lambda * 0.1).max(1e-12);
                improved = true;
                break;
            }
            lambda *= 10.0;
        }
        if !improved || fx < 1e-13 {
            break;
        }
    }
    (x, fx)
}

fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-300 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        x[r] = (b[r] - (r + 1..n).map(|k| a[r][k] * x[k]).sum::<f64>()) / a[r][r];
    }
    Some(x)
}

/// Single local fit from `initial` within `bounds`.
pub fn fit(targets: &SpectroscopyTargets, variant: ModelVariant, initial: &FitModel, bounds: &Bounds) -> Result<FitResult> {
    targets.validate(variant.n_parameters())?;
    let x0 = initial.vector(variant)?;
    bounds.check(&x0, variant.parameter_names())?;
    let obj = Objective {
        base: initial,
        variant,
        targets,
    };
    let f0 = obj.loss(&x0);
    if !f0.is_finite() {
        return Err(Error::InvalidParameter("model cannot be evaluated at the initial point".into()));
    }
    let (x, fx, iterations, converged) = nelder_mead(&obj, &x0, bounds);
    let (x, _) = polish(&obj, x, fx, bounds);
    let model = initial.from_vector(variant, &x)?;
    let kinds = targets.kinds();
    let freqs = model_frequencies(&model.circuit, &kinds)?;
    let residuals: Vec<Residual> = targets
        .targets
        .iter()
        .zip(freqs)
        .map(|(t, m)| Residual {
            kind: t.kind,
            target: t.frequency,
            model: m,
            weighted: t.weight() * to_ghz(m - t.frequency),
        })
        .collect();
    let loss = residuals.iter().map(|r| r.weighted.abs()).sum();
    Ok(FitResult {
        variant,
        model,
        loss,
        residuals,
        iterations,
        converged,
        seed: None,
    })
}

/// Runs [`fit`] from `n_seeds` starts, each a ±5% uniform perturbation of
/// `initial` drawn from `master_seed`. Bounds are centered on `initial`.
pub fn fit_multistart(
    targets: &SpectroscopyTargets,
    variant: ModelVariant,
    initial: &FitModel,
    n_seeds: usize,
    master_seed: u64,
) -> Result<Vec<FitResult>> {
    let x0 = initial.vector(variant)?;
    let bounds = Bounds::around(&x0, variant);
    let starts: Vec<(u64, FitModel)> = (0..n_seeds as u64)
        .map(|s| {
            let seed = master_seed.wrapping_add(s);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = x0
                .iter()
                .map(|v| v * (1.0 + rng.gen_range(-SEED_SPREAD..=SEED_SPREAD)))
                .collect();
            initial.from_vector(variant, &x).map(|m| (seed, m))
        })
        .collect::<Result<_>>()?;
    starts
        .into_par_iter()
        .map(|(seed, start)| {
            let mut r = fit(targets, variant, &start, &bounds)?;
            r.seed = Some(seed);
            Ok(r)
        })
        .collect()
}

/// Lowest-loss result.
pub fn best(results: &[FitResult]) -> Option<&FitResult> {
    results.iter().min_by(|a, b| a.loss.total_cmp(&b.loss))
}
