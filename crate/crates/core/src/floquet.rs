//! Floquet analysis of the driven transmon
//! `H(t) = H_t + ε_t cos(ω_d t) (n̂ - n_g)`.
//!
//! Branches are followed in drive amplitude by maximum overlap, avoided
//! crossings are located from minima of the folded quasienergy distance
//! together with a population exchange, and the diabatic track of a qubit
//! state switches branch at each such crossing.

use std::f64::consts::PI;

use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{unitarity_defect, unitary_eigen, C64};
use crate::propagate::{DrivenSystem, LawsonRk4, SplitVec};
use crate::transmon::{ChargeOperator, Spectrum, TransmonParams};

pub const DEFAULT_STEPS_PER_PERIOD: usize = 512;
pub const DEFAULT_FLOQUET_LEVELS: usize = 20;
pub const MIN_FLOQUET_LEVELS: usize = 15;
/// Unitarity defect accepted before the step count is doubled.
pub const UNITARITY_TOL: f64 = 1e-6;
const MAX_REFINEMENTS: usize = 4;
/// Fraction of the population difference that must be exchanged for a
/// quasienergy near-degeneracy to count as an avoided crossing.
pub const SWAP_THRESHOLD: f64 = 0.25;
/// Tracking overlap below which a branch point is marked broken.
pub const BROKEN_OVERLAP: f64 = 0.3;
/// Eigenvalues of the propagator closer than this are flagged degenerate.
pub const DEGENERACY_TOL: f64 = 1e-12;
const CROSSING_WINDOW: usize = 40;

/// Photon number `(ε_t / 2g)²` for effective drive amplitude `eps_t`.
pub fn photon_number(eps_t: f64, g: f64) -> f64 {
    (eps_t / (2.0 * g)).powi(2)
}

/// Effective drive amplitude `2g√n̄`.
pub fn drive_amplitude(n_r: f64, g: f64) -> f64 {
    2.0 * g * n_r.max(0.0).sqrt()
}

/// Maps `x` into `[-ω/2, ω/2)`.
pub fn fold(x: f64, omega: f64) -> f64 {
    x - omega * ((x + 0.5 * omega) / omega).floor()
}

/// Distance between two quasienergies on the Brillouin-zone circle.
pub fn circular_distance(a: f64, b: f64, omega: f64) -> f64 {
    fold(a - b, omega).abs()
}

/// `exp(-π Δ² / 2v)` for gap `gap` and rate `rate` of the diabatic energy
/// difference (both angular units).
pub fn landau_zener_probability(gap: f64, rate: f64) -> f64 {
    if rate <= 0.0 {
        return 0.0;
    }
    (-PI * gap * gap / (2.0 * rate)).exp()
}

/// Transmon eigenbasis plus drive operator, ready for time stepping.
#[derive(Debug, Clone)]
pub struct DrivenTransmon {
    pub params: TransmonParams,
    pub omega_d: f64,
    pub system: DrivenSystem,
    pub steps_per_period: usize,
}

impl DrivenTransmon {
    /// Diagonalizes `params` (with the cutoff convergence check) and keeps
    /// `n_levels` levels.
    pub fn new(params: &TransmonParams, n_levels: usize, omega_d: f64) -> Result<Self> {
        let spec = Spectrum::solve(params, n_levels)?;
        let charge = ChargeOperator::new(&spec, params.n_g);
        Self::from_parts(params, &spec, &charge, omega_d)
    }

    pub fn from_parts(
        params: &TransmonParams,
        spec: &Spectrum,
        charge: &ChargeOperator,
        omega_d: f64,
    ) -> Result<Self> {
        if !(omega_d > 0.0 && omega_d.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "drive frequency must be positive, got {omega_d}"
            )));
        }
        if charge.dimension != spec.n_levels {
            return Err(Error::InvalidParameter(format!(
                "charge operator has {} levels, spectrum {}",
                charge.dimension, spec.n_levels
            )));
        }
        if charge.max_imaginary() > 1e-12 {
            return Err(Error::InvalidParameter(
                "drive operator must be real in the transmon eigenbasis".into(),
            ));
        }
        Ok(Self {
            params: params.clone(),
            omega_d,
            system: DrivenSystem::new(spec.energies.clone(), charge.real_row_major()),
            steps_per_period: DEFAULT_STEPS_PER_PERIOD,
        })
    }

    pub fn n_levels(&self) -> usize {
        self.system.dim()
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega_d
    }

    pub fn energies(&self) -> &[f64] {
        &self.system.energies
    }

    /// One-period propagator with the step count doubled until the
    /// unitarity defect is below [`UNITARITY_TOL`].
    pub fn propagator(&self, eps_t: f64) -> Result<Propagator> {
        if !(eps_t >= 0.0 && eps_t.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "drive amplitude must be non-negative, got {eps_t}"
            )));
        }
        let mut steps = self.steps_per_period;
        let mut last = f64::NAN;
        for _ in 0..=MAX_REFINEMENTS {
            let matrix = self.integrate_period(eps_t, steps);
            let defect = unitarity_defect(&matrix);
            if defect <= UNITARITY_TOL {
                return Ok(Propagator {
                    matrix,
                    eps_t,
                    steps_per_period: steps,
                    unitarity_defect: defect,
                });
            }
            log::debug!("propagator defect {defect:.2e} at {steps} steps; refining");
            last = defect;
            steps *= 2;
        }
        Err(Error::NotUnitary { defect: last })
    }

    fn integrate_period(&self, eps_t: f64, steps: usize) -> Mat<C64> {
        let n = self.n_levels();
        let h = self.period() / steps as f64;
        let w = self.omega_d;
        let mut stepper = LawsonRk4::new(&self.system, h);
        let mut out = Mat::<C64>::zeros(n, n);
        for col in 0..n {
            let mut u = SplitVec::basis(n, col);
            for k in 0..steps {
                let t = k as f64 * h;
                let s = [
                    eps_t * (w * t).cos(),
                    eps_t * (w * (t + 0.5 * h)).cos(),
                    eps_t * (w * (t + h)).cos(),
                ];
                stepper.step(&mut u, s);
            }
            for row in 0..n {
                out[(row, col)] = C64::new(u.re[row], u.im[row]);
            }
        }
        out
    }
}

/// Time-ordered propagator over one drive period starting at `t = 0`.
#[derive(Debug, Clone)]
pub struct Propagator {
    pub matrix: Mat<C64>,
    pub eps_t: f64,
    pub steps_per_period: usize,
    pub unitarity_defect: f64,
}

/// One-period propagator for the transmon described by `spec` and `charge_op`.
pub fn one_period_propagator(
    params: &TransmonParams,
    spec: &Spectrum,
    charge_op: &ChargeOperator,
    eps_t: f64,
    omega_d: f64,
    n_levels: usize,
) -> Result<Propagator> {
    if n_levels < MIN_FLOQUET_LEVELS {
        return Err(Error::InvalidParameter(format!(
            "Floquet analysis needs at least {MIN_FLOQUET_LEVELS} levels, got {n_levels}"
        )));
    }
    if n_levels != spec.n_levels {
        return Err(Error::InvalidParameter(format!(
            "requested {n_levels} levels but spectrum holds {}",
            spec.n_levels
        )));
    }
    DrivenTransmon::from_parts(params, spec, charge_op, omega_d)?.propagator(eps_t)
}

/// Floquet modes and quasienergies at one drive amplitude.
#[derive(Debug, Clone)]
pub struct FloquetPoint {
    pub eps_t: f64,
    /// Folded into `[-ω_d/2, ω_d/2)`.
    pub quasienergies: Vec<f64>,
    /// Modes `|φ_i(0)⟩` in the transmon eigenbasis, one per column.
    pub modes: Mat<C64>,
    /// Mean transmon excitation `N_t = Σ_j j |⟨j|φ⟩|²` of each mode.
    pub populations: Vec<f64>,
    /// Pairs of modes whose propagator eigenvalues nearly coincide.
    pub degenerate: Vec<(usize, usize)>,
}

impl FloquetPoint {
    pub fn dim(&self) -> usize {
        self.quasienergies.len()
    }

    /// `|⟨m|φ_k⟩|²` as a row-major matrix indexed `[m][k]`.
    pub fn mode_column(&self, k: usize) -> Vec<C64> {
        (0..self.modes.nrows()).map(|r| self.modes[(r, k)]).collect()
    }

    /// Rebuilds `Σ_k e^{-iε_k T} |φ_k⟩⟨φ_k|`, exactly unitary.
    pub fn propagator(&self, omega_d: f64) -> Mat<C64> {
        let n = self.dim();
        let period = 2.0 * PI / omega_d;
        let phases: Vec<C64> = self
            .quasienergies
            .iter()
            .map(|e| C64::from_polar(1.0, -e * period))
            .collect();
        Mat::from_fn(n, n, |a, b| {
            (0..n)
                .map(|k| self.modes[(a, k)] * phases[k] * self.modes[(b, k)].conj())
                .sum()
        })
    }

    fn permuted(&self, order: &[usize]) -> Self {
        let n = self.modes.nrows();
        Self {
            eps_t: self.eps_t,
            quasienergies: order.iter().map(|&k| self.quasienergies[k]).collect(),
            modes: Mat::from_fn(n, order.len(), |r, c| self.modes[(r, order[c])]),
            populations: order.iter().map(|&k| self.populations[k]).collect(),
            degenerate: self
                .degenerate
                .iter()
                .filter_map(|&(a, b)| {
                    let pa = order.iter().position(|&k| k == a)?;
                    let pb = order.iter().position(|&k| k == b)?;
                    Some((pa.min(pb), pa.max(pb)))
                })
                .collect(),
        }
    }
}

/// Diagonalizes a one-period propagator.
pub fn floquet_eigensystem(u: &Propagator, omega_d: f64) -> Result<FloquetPoint> {
    floquet_eigensystem_of(&u.matrix, u.eps_t, omega_d)
}

pub fn floquet_eigensystem_of(u: &Mat<C64>, eps_t: f64, omega_d: f64) -> Result<FloquetPoint> {
    let defect = unitarity_defect(u);
    if defect > UNITARITY_TOL {
        return Err(Error::NotUnitary { defect });
    }
    let period = 2.0 * PI / omega_d;
    let (values, modes) = unitary_eigen(u)?;
    let n = values.len();
    let quasienergies: Vec<f64> = values
        .iter()
        .map(|l| fold(-l.arg() / period, omega_d))
        .collect();
    let populations = (0..n)
        .map(|k| {
            (0..modes.nrows())
                .map(|j| j as f64 * modes[(j, k)].norm_sqr())
                .sum()
        })
        .collect();
    let mut degenerate = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if (values[a] - values[b]).norm() < DEGENERACY_TOL {
                degenerate.push((a, b));
            }
        }
    }
    Ok(FloquetPoint {
        eps_t,
        quasienergies,
        modes,
        populations,
        degenerate,
    })
}

fn overlap_sqr(a: &Mat<C64>, ca: usize, b: &Mat<C64>, cb: usize) -> f64 {
    (0..a.nrows())
        .map(|r| a[(r, ca)].conj() * b[(r, cb)])
        .sum::<C64>()
        .norm_sqr()
}

/// Branches `B_i` over an amplitude grid. `points[k]` holds the Floquet point
/// at `grid[k]` with column `i` belonging to branch `B_i`.
#[derive(Debug, Clone)]
pub struct FloquetBranchSet {
    pub omega_d: f64,
    pub n_g: f64,
    pub delta_eps: f64,
    pub grid: Vec<f64>,
    pub points: Vec<FloquetPoint>,
    /// `overlap[k][i] = |⟨B_i[k]|B_i[k-1]⟩|²`, 1 at `k = 0`.
    pub overlap: Vec<Vec<f64>>,
    /// Largest overlap of `B_i[k]` with another branch at `k-1`, and that branch.
    pub leak: Vec<Vec<(usize, f64)>>,
    pub broken: Vec<Vec<bool>>,
    pub max_unitarity_defect: f64,
}

impl FloquetBranchSet {
    pub fn n_branches(&self) -> usize {
        self.points.first().map_or(0, |p| p.dim())
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn eps_max(&self) -> f64 {
        self.grid.last().copied().unwrap_or(0.0)
    }

    pub fn quasienergy(&self, branch: usize, k: usize) -> f64 {
        self.points[k].quasienergies[branch]
    }

    pub fn population(&self, branch: usize, k: usize) -> f64 {
        self.points[k].populations[branch]
    }

    /// Quasienergies of one branch along the grid, unwrapped by continuity.
    pub fn unwrapped(&self, branch: usize) -> Vec<f64> {
        unwrap_sequence(
            self.points.iter().map(|p| p.quasienergies[branch]),
            self.omega_d,
        )
    }

    /// Grid index closest to `eps_t`.
    pub fn nearest_index(&self, eps_t: f64) -> usize {
        if self.grid.len() < 2 {
            return 0;
        }
        let k = (eps_t / self.delta_eps).round();
        (k.max(0.0) as usize).min(self.grid.len() - 1)
    }
}

fn unwrap_sequence(values: impl Iterator<Item = f64>, omega: f64) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for v in values {
        match out.last() {
            None => out.push(v),
            Some(&prev) => out.push(prev + fold(v - prev, omega)),
        }
    }
    out
}

/// Amplitude grid `0, δ, 2δ, …` reaching at least `eps_max`.
pub fn amplitude_grid(eps_max: f64, delta_eps: f64) -> Result<Vec<f64>> {
    if !(delta_eps > 0.0) || !(eps_max >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need delta_eps > 0 and eps_max >= 0, got {delta_eps}, {eps_max}"
        )));
    }
    let steps = (eps_max / delta_eps - 1e-9).ceil().max(0.0) as usize;
    Ok((0..=steps).map(|k| k as f64 * delta_eps).collect())
}

/// Floquet points at every amplitude of `grid`, computed in parallel.
pub fn floquet_points(transmon: &DrivenTransmon, grid: &[f64]) -> Result<(Vec<FloquetPoint>, f64)> {
    let results: Vec<Result<(FloquetPoint, f64)>> = grid
        .par_iter()
        .map(|&eps| {
            let u = transmon.propagator(eps)?;
            let p = floquet_eigensystem(&u, transmon.omega_d)?;
            Ok((p, u.unitarity_defect))
        })
        .collect();
    let mut points = Vec::with_capacity(grid.len());
    let mut defect: f64 = 0.0;
    for r in results {
        let (p, d) = r?;
        defect = defect.max(d);
        points.push(p);
    }
    Ok((points, defect))
}

/// Adiabatic branch tracking from the bare states over `0..=eps_max`.
pub fn track_branches(transmon: &DrivenTransmon, eps_max: f64, delta_eps: f64) -> Result<FloquetBranchSet> {
    let grid = amplitude_grid(eps_max, delta_eps)?;
    let (points, defect) = floquet_points(transmon, &grid)?;
    let mut set = assign_branches(points, transmon.omega_d, delta_eps)?;
    set.n_g = transmon.params.n_g;
    set.max_unitarity_defect = defect;
    Ok(set)
}

/// Orders precomputed Floquet points into branches. `points[0]` must be the
/// zero-drive point.
pub fn assign_branches(points: Vec<FloquetPoint>, omega_d: f64, delta_eps: f64) -> Result<FloquetBranchSet> {
    let Some(first) = points.first() else {
        return Err(Error::InvalidParameter("empty amplitude grid".into()));
    };
    let n = first.dim();
    if first.eps_t != 0.0 {
        return Err(Error::InvalidParameter(
            "branch tracking must start at zero drive".into(),
        ));
    }
    // At zero drive the modes are the bare states; label each by its dominant
    // component and fix it to exactly |i⟩.
    let mut order = vec![usize::MAX; n];
    for k in 0..n {
        let dominant = (0..n)
            .max_by(|&a, &b| {
                first.modes[(a, k)]
                    .norm_sqr()
                    .total_cmp(&first.modes[(b, k)].norm_sqr())
            })
            .unwrap_or(0);
        if order[dominant] != usize::MAX {
            return Err(Error::Eigen(format!(
                "zero-drive Floquet modes {k} and {} share bare state {dominant}",
                order[dominant]
            )));
        }
        order[dominant] = k;
    }
    let mut start = first.permuted(&order);
    start.modes = Mat::from_fn(n, n, |r, c| {
        if r == c {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    start.populations = (0..n).map(|i| i as f64).collect();

    let grid: Vec<f64> = points.iter().map(|p| p.eps_t).collect();
    let mut tracked = vec![start];
    let mut overlap = vec![vec![1.0; n]];
    let mut leak = vec![vec![(usize::MAX, 0.0); n]];
    let mut broken = vec![vec![false; n]];
    for p in points.into_iter().skip(1) {
        let prev = tracked.last().expect("seeded with zero drive");
        let mut ov = vec![0.0; n * n];
        let mut pairs = Vec::with_capacity(n * n);
        for i in 0..n {
            for m in 0..n {
                let o = overlap_sqr(&prev.modes, i, &p.modes, m);
                ov[i * n + m] = o;
                pairs.push((o, i, m));
            }
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut assigned = vec![usize::MAX; n];
        let mut taken = vec![false; n];
        let mut left = n;
        for (_, i, m) in pairs {
            if left == 0 {
                break;
            }
            if assigned[i] == usize::MAX && !taken[m] {
                assigned[i] = m;
                taken[m] = true;
                left -= 1;
            }
        }
        let ov_row: Vec<f64> = (0..n).map(|i| ov[i * n + assigned[i]]).collect();
        let leak_row: Vec<(usize, f64)> = (0..n)
            .map(|i| {
                let m = assigned[i];
                (0..n)
                    .filter(|&j| j != i)
                    .map(|j| (j, ov[j * n + m]))
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .unwrap_or((usize::MAX, 0.0))
            })
            .collect();
        broken.push(ov_row.iter().map(|&o| o < BROKEN_OVERLAP).collect());
        overlap.push(ov_row);
        leak.push(leak_row);
        let mut next = p.permuted(&assigned);
        // Align each mode's global phase with its predecessor so that mode
        // vectors vary continuously along the branch.
        for i in 0..n {
            let c: C64 = (0..n).map(|r| prev.modes[(r, i)].conj() * next.modes[(r, i)]).sum();
            if c.norm() > 0.0 {
                let phase = c.conj() / c.norm();
                for r in 0..n {
                    next.modes[(r, i)] *= phase;
                }
            }
        }
        tracked.push(next);
    }
    Ok(FloquetBranchSet {
        omega_d,
        n_g: f64::NAN,
        delta_eps,
        grid,
        points: tracked,
        overlap,
        leak,
        broken,
        max_unitarity_defect: 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrossingKind {
    Resolved,
    UnresolvedAtGrid,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AvoidedCrossing {
    /// Branch pair, `branches.0 < branches.1`.
    pub branches: (usize, usize),
    pub index: usize,
    pub eps_t: f64,
    pub n_r: f64,
    /// Minimum folded quasienergy distance (rad/ns).
    pub gap: f64,
    /// Exchanged fraction of the population difference across the crossing.
    pub swap: f64,
    /// `|d(ε_i - ε_j)/dε_t|` away from the crossing, used for Landau-Zener
    /// speeds `v = rate · dε_t/dt`.
    pub slope: f64,
    pub kind: CrossingKind,
}

impl AvoidedCrossing {
    pub fn involves(&self, branch: usize) -> bool {
        self.branches.0 == branch || self.branches.1 == branch
    }

    pub fn partner(&self, branch: usize) -> usize {
        if self.branches.0 == branch {
            self.branches.1
        } else {
            self.branches.0
        }
    }

    /// Landau-Zener probability of passing diabatically when the drive
    /// amplitude changes at `deps_dt`.
    pub fn landau_zener(&self, deps_dt: f64) -> f64 {
        landau_zener_probability(self.gap, self.slope * deps_dt.abs())
    }
}

/// Exchanged fraction of the population difference between branches `i` and
/// `j` from grid index `a` to `b`.
fn swap_fraction(set: &FloquetBranchSet, i: usize, j: usize, a: usize, b: usize) -> f64 {
    let d = set.population(j, a) - set.population(i, a);
    if d.abs() < 1e-3 {
        return 0.0;
    }
    let di = (set.population(i, b) - set.population(i, a)) / d;
    let dj = -(set.population(j, b) - set.population(j, a)) / d;
    di.min(dj).clamp(0.0, 1.0)
}

/// Smaller of `|⟨B_i[b]|B_j[a]⟩|²` and `|⟨B_j[b]|B_i[a]⟩|²`: how far the two
/// modes traded character between grid indices `a` and `b`.
fn mode_exchange(set: &FloquetBranchSet, i: usize, j: usize, a: usize, b: usize) -> f64 {
    let pa = &set.points[a].modes;
    let pb = &set.points[b].modes;
    overlap_sqr(pb, i, pa, j).min(overlap_sqr(pb, j, pa, i))
}

fn pair_slope(set: &FloquetBranchSet, i: usize, j: usize, a: usize, b: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    // The adiabatic difference bends through the gap; treat it as V-shaped
    // between the window ends.
    let w = set.omega_d;
    let diff = |k: usize| fold(set.quasienergy(i, k) - set.quasienergy(j, k), w).abs();
    (diff(a) + diff(b)) / (set.grid[b] - set.grid[a])
}

/// Avoided crossings between every pair of branches.
pub fn detect_avoided_crossings(set: &FloquetBranchSet, g: f64) -> Vec<AvoidedCrossing> {
    let n = set.n_branches();
    let len = set.len();
    let mut out = Vec::new();
    if len < 3 {
        return out;
    }
    let w = set.omega_d;
    for i in 0..n {
        for j in i + 1..n {
            let d: Vec<f64> = (0..len)
                .map(|k| circular_distance(set.quasienergy(i, k), set.quasienergy(j, k), w))
                .collect();
            let mut resolved_at = Vec::new();
            for k in 1..len - 1 {
                if !(d[k - 1] > d[k] && d[k] <= d[k + 1]) {
                    continue;
                }
                let mut a = k;
                while a > 0 && k - a < CROSSING_WINDOW && d[a - 1] > d[a] {
                    a -= 1;
                }
                let mut b = k;
                while b + 1 < len && b - k < CROSSING_WINDOW && d[b + 1] > d[b] {
                    b += 1;
                }
                let swap = swap_fraction(set, i, j, a, b);
                if swap < SWAP_THRESHOLD || mode_exchange(set, i, j, a, b) < SWAP_THRESHOLD {
                    continue;
                }
                resolved_at.push(k);
                out.push(AvoidedCrossing {
                    branches: (i, j),
                    index: k,
                    eps_t: set.grid[k],
                    n_r: photon_number(set.grid[k], g),
                    gap: d[k],
                    swap,
                    slope: pair_slope(set, i, j, a, b),
                    kind: CrossingKind::Resolved,
                });
            }
            // Hybridization completed between two grid points.
            for k in 1..len {
                let mixes = |x: usize, y: usize| {
                    let (partner, o) = set.leak[k][x];
                    partner == y && o >= SWAP_THRESHOLD
                };
                if !(mixes(i, j) || mixes(j, i)) {
                    continue;
                }
                if resolved_at.iter().any(|&r| r.abs_diff(k) <= 2) {
                    continue;
                }
                if out
                    .iter()
                    .any(|c| c.branches == (i, j) && c.index.abs_diff(k) <= 1)
                {
                    continue;
                }
                let a = k.saturating_sub(2);
                let b = (k + 1).min(len - 1);
                let swap = swap_fraction(set, i, j, a, b);
                if swap < SWAP_THRESHOLD || mode_exchange(set, i, j, a, b) < SWAP_THRESHOLD {
                    continue;
                }
                let kk = if d[k - 1] < d[k] { k - 1 } else { k };
                out.push(AvoidedCrossing {
                    branches: (i, j),
                    index: kk,
                    eps_t: set.grid[kk],
                    n_r: photon_number(set.grid[kk], g),
                    gap: d[kk],
                    swap,
                    slope: pair_slope(set, i, j, a, b),
                    kind: CrossingKind::UnresolvedAtGrid,
                });
            }
        }
    }
    out.sort_by(|a, b| {
        a.index
            .cmp(&b.index)
            .then(a.branches.cmp(&b.branches))
    });
    out
}

/// One stretch of a diabatic track on a single branch, over grid indices
/// `start..=end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSegment {
    pub branch: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiabaticTrack {
    pub initial: usize,
    pub segments: Vec<TrackSegment>,
    /// Crossings at which the tracked branch changed, in order.
    pub switches: Vec<AvoidedCrossing>,
    /// Set when two candidate switches fell within one grid step.
    pub ambiguous: bool,
}

impl DiabaticTrack {
    /// Critical photon numbers: photon numbers of all branch switches.
    pub fn critical_photon_numbers(&self) -> Vec<f64> {
        self.switches.iter().map(|c| c.n_r).collect()
    }

    /// Branch followed at grid index `k`.
    pub fn branch_at(&self, k: usize) -> usize {
        self.segments
            .iter()
            .find(|s| s.start <= k && k <= s.end)
            .or(self.segments.last())
            .map_or(self.initial, |s| s.branch)
    }
}

/// Follows the character of `initial` through the recorded crossings.
pub fn diabatic_track(
    set: &FloquetBranchSet,
    crossings: &[AvoidedCrossing],
    initial: usize,
) -> Result<DiabaticTrack> {
    if initial >= set.n_branches() {
        return Err(Error::IndexOutOfRange {
            index: initial,
            len: set.n_branches(),
        });
    }
    let last = set.len().saturating_sub(1);
    let mut sorted: Vec<&AvoidedCrossing> = crossings.iter().collect();
    sorted.sort_by_key(|c| c.index);
    let mut current = initial;
    let mut start = 0;
    let mut segments = Vec::new();
    let mut switches: Vec<AvoidedCrossing> = Vec::new();
    let mut ambiguous = false;
    loop {
        let after = switches.last().map(|s| s.index);
        let Some(first) = sorted
            .iter()
            .find(|c| c.involves(current) && after.map_or(true, |l| c.index > l))
        else {
            break;
        };
        let candidates: Vec<&&AvoidedCrossing> = sorted
            .iter()
            .filter(|c| c.involves(current) && c.index >= first.index && c.index <= first.index + 1)
            .collect();
        ambiguous |= candidates.len() > 1;
        let best = candidates
            .into_iter()
            .max_by(|a, b| a.swap.total_cmp(&b.swap))
            .expect("first is a candidate");
        if best.index > start {
            segments.push(TrackSegment {
                branch: current,
                start,
                end: best.index - 1,
            });
            start = best.index;
        }
        current = best.partner(current);
        switches.push((*best).clone());
    }
    segments.push(TrackSegment {
        branch: current,
        start,
        end: last,
    });
    Ok(DiabaticTrack {
        initial,
        segments,
        switches,
        ambiguous,
    })
}

/// Quasienergy curve along the grid, unwrapped by continuity; either one
/// adiabatic branch or a diabatic track.
#[derive(Debug, Clone)]
pub struct QuasienergyCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub omega_d: f64,
    /// Grid indices where consecutive values jumped by more than `ω_d/4`
    /// before unwrapping was applied.
    pub fold_flags: Vec<usize>,
}

impl QuasienergyCurve {
    pub fn branch(set: &FloquetBranchSet, branch: usize) -> Self {
        Self::from_raw(
            set,
            (0..set.len()).map(|k| set.quasienergy(branch, k)).collect(),
        )
    }

    pub fn diabatic(set: &FloquetBranchSet, track: &DiabaticTrack) -> Self {
        Self::from_raw(
            set,
            (0..set.len())
                .map(|k| set.quasienergy(track.branch_at(k), k))
                .collect(),
        )
    }

    fn from_raw(set: &FloquetBranchSet, raw: Vec<f64>) -> Self {
        let w = set.omega_d;
        let fold_flags = raw
            .windows(2)
            .enumerate()
            .filter(|(_, p)| fold(p[1] - p[0], w).abs() > 0.25 * w)
            .map(|(k, _)| k + 1)
            .collect();
        Self {
            grid: set.grid.clone(),
            values: unwrap_sequence(raw.into_iter(), w),
            omega_d: w,
            fold_flags,
        }
    }

    /// Cubic Lagrange interpolation on the uniform amplitude grid.
    pub fn at(&self, eps_t: f64) -> f64 {
        let len = self.values.len();
        if len == 1 {
            return self.values[0];
        }
        let h = self.grid[1] - self.grid[0];
        let x = eps_t / h;
        let base = (x.floor() as isize - 1).clamp(0, len.saturating_sub(4) as isize) as usize;
        let pts = (base..(base + 4).min(len)).collect::<Vec<_>>();
        let mut acc = 0.0;
        for &a in &pts {
            let mut l = 1.0;
            for &b in &pts {
                if a != b {
                    l *= (x - b as f64) / (a as f64 - b as f64);
                }
            }
            acc += l * self.values[a];
        }
        acc
    }

    pub fn eps_max(&self) -> f64 {
        *self.grid.last().unwrap_or(&0.0)
    }
}

/// `ω̃_r(n̄) = ω_r + ε(2g√(n̄+1)) - ε(2g√n̄)`.
pub fn effective_resonator_frequency(curve: &QuasienergyCurve, n_r: f64, omega_r: f64, g: f64) -> Result<f64> {
    let hi = drive_amplitude(n_r + 1.0, g);
    if hi > curve.eps_max() * (1.0 + 1e-12) {
        return Err(Error::InvalidParameter(format!(
            "n_r = {n_r} needs amplitude {hi:.4} beyond the grid maximum {:.4}",
            curve.eps_max()
        )));
    }
    let diff = curve.at(hi) - curve.at(drive_amplitude(n_r, g));
    Ok(omega_r + diff)
}

/// Photon-number dependent resonator frequency sampled on `photons`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DispersionCurve {
    pub photons: Vec<f64>,
    pub omega: Vec<f64>,
    /// Branch that starts the curve.
    pub branch: usize,
    pub diabatic: bool,
}

impl DispersionCurve {
    /// Samples `ω̃_r` at `0, 1, …` up to the largest photon number the grid
    /// supports.
    pub fn from_curve(curve: &QuasienergyCurve, omega_r: f64, g: f64, branch: usize, diabatic: bool) -> Result<Self> {
        let n_max = photon_number(curve.eps_max(), g) - 1.0;
        if n_max < 1.0 {
            return Err(Error::InvalidParameter(
                "amplitude grid too short for a dispersion curve".into(),
            ));
        }
        let photons: Vec<f64> = (0..=n_max.floor() as usize).map(|n| n as f64).collect();
        let omega = photons
            .iter()
            .map(|&n| effective_resonator_frequency(curve, n, omega_r, g))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            photons,
            omega,
            branch,
            diabatic,
        })
    }

    pub fn constant(omega: f64, n_max: f64) -> Self {
        Self {
            photons: vec![0.0, n_max],
            omega: vec![omega, omega],
            branch: 0,
            diabatic: false,
        }
    }

    pub fn n_max(&self) -> f64 {
        *self.photons.last().unwrap_or(&0.0)
    }

    /// Piecewise-linear value, linearly extrapolated outside the samples.
    pub fn at(&self, n: f64) -> f64 {
        let p = &self.photons;
        let len = p.len();
        if len == 1 {
            return self.omega[0];
        }
        let seg = match p.iter().position(|&x| x > n) {
            Some(0) => 0,
            Some(i) => i - 1,
            None => len - 2,
        }
        .min(len - 2);
        let t = (n - p[seg]) / (p[seg + 1] - p[seg]);
        self.omega[seg] + t * (self.omega[seg + 1] - self.omega[seg])
    }

    /// Least-squares slope of `ω̃_r` over `[lo, hi]` photons.
    pub fn slope(&self, lo: f64, hi: f64) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .photons
            .iter()
            .zip(&self.omega)
            .filter(|(n, _)| **n >= lo && **n <= hi)
            .map(|(&n, &w)| (n, w))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let m = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Some(sxy / sxx)
    }
}
