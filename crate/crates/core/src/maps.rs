//! Transition maps over gate charge and drive amplitude.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::CircuitParams;
use crate::dynamics::{DriveProtocol, ReadoutModel, ReadoutSettings};
use crate::error::Result;
use crate::floquet::{AvoidedCrossing, CrossingKind};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapSpec {
    pub ng_grid: Vec<f64>,
    /// Resonator drive amplitudes (rad/ns).
    pub eps_d_grid: Vec<f64>,
    pub initials: Vec<usize>,
    pub collapse: Vec<bool>,
    pub t_up: f64,
    pub t_final: f64,
    pub settings: ReadoutSettings,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapCell {
    pub n_g: f64,
    pub eps_d: f64,
    pub initial: usize,
    pub collapse: bool,
    pub n_r_max: f64,
    pub survival: f64,
    pub norm_defect: f64,
}

/// Everything computed for one gate charge.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapRow {
    pub n_g: f64,
    pub cells: Vec<MapCell>,
    /// Critical photon numbers of the diabatic track of each initial state.
    pub critical: Vec<(usize, Vec<f64>)>,
    pub crossings: Vec<AvoidedCrossing>,
    pub max_unitarity_defect: f64,
}

impl MapRow {
    pub fn critical_for(&self, initial: usize) -> &[f64] {
        self.critical
            .iter()
            .find(|(i, _)| *i == initial)
            .map_or(&[], |(_, c)| c.as_slice())
    }
}

/// Cells for one gate charge, ordered by initial state, amplitude, collapse flag.
pub fn map_row(circuit: &CircuitParams, omega_d: f64, n_g: f64, spec: &MapSpec) -> Result<MapRow> {
    let model = ReadoutModel::build(&circuit.with_n_g(n_g), omega_d, &spec.settings)?;
    let mut cells = Vec::new();
    let mut critical = Vec::new();
    for &initial in &spec.initials {
        critical.push((initial, model.track(initial)?.critical_photon_numbers()));
        let dispersion = model.diabatic_dispersion(initial)?;
        for &eps_d in &spec.eps_d_grid {
            let protocol = DriveProtocol {
                eps_d,
                omega_d,
                t_up: spec.t_up,
                t_final: spec.t_final,
                initial,
            };
            let trajectory = crate::dynamics::resonator_trajectory(&protocol, &dispersion, circuit.kappa)?;
            for &collapse in &spec.collapse {
                let r = model.readout_with_trajectory(&protocol, &spec.settings, &trajectory, collapse, None)?;
                cells.push(MapCell {
                    n_g,
                    eps_d,
                    initial,
                    collapse,
                    n_r_max: r.n_r_max,
                    survival: r.survival,
                    norm_defect: r.norm_defect,
                });
            }
        }
    }
    Ok(MapRow {
        n_g,
        cells,
        critical,
        crossings: model.crossings.clone(),
        max_unitarity_defect: model.branches.max_unitarity_defect,
    })
}

/// All rows, computed in parallel and returned in grid order.
pub fn transition_map(circuit: &CircuitParams, omega_d: f64, spec: &MapSpec) -> Result<Vec<MapRow>> {
    spec.ng_grid
        .par_iter()
        .map(|&n_g| map_row(circuit, omega_d, n_g, spec))
        .collect()
}

/// Crossing dataset over gate charge: every crossing of the branch set.
pub fn crossing_map(circuit: &CircuitParams, omega_d: f64, ng_grid: &[f64], settings: &ReadoutSettings) -> Result<Vec<(f64, Vec<AvoidedCrossing>)>> {
    ng_grid
        .par_iter()
        .map(|&n_g| {
            let model = ReadoutModel::build(&circuit.with_n_g(n_g), omega_d, settings)?;
            Ok((n_g, model.crossings))
        })
        .collect()
}

/// A drop of survival between neighbouring amplitudes of one slice.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurvivalDrop {
    pub n_g: f64,
    pub initial: usize,
    pub n_before: f64,
    pub n_after: f64,
    pub drop: f64,
    /// Nearest critical photon number of the track.
    pub nearest_critical: Option<f64>,
    /// Whether a critical photon number lies in `[0.9 n_before, 1.1 n_after]`.
    pub explained: bool,
}

/// Survival of one `(n_g, initial, collapse)` slice ordered by amplitude.
pub fn slice<'a>(row: &'a MapRow, initial: usize, collapse: bool) -> Vec<&'a MapCell> {
    let mut s: Vec<&MapCell> = row
        .cells
        .iter()
        .filter(|c| c.initial == initial && c.collapse == collapse)
        .collect();
    s.sort_by(|a, b| a.eps_d.total_cmp(&b.eps_d));
    s
}

/// Consecutive-amplitude drops of at least `threshold`.
pub fn survival_drops(row: &MapRow, initial: usize, collapse: bool, threshold: f64, tolerance: f64) -> Vec<SurvivalDrop> {
    let s = slice(row, initial, collapse);
    let crit = row.critical_for(initial);
    let mut out = Vec::new();
    for w in s.windows(2) {
        let drop = w[0].survival - w[1].survival;
        if drop < threshold {
            continue;
        }
        let (lo, hi) = (w[0].n_r_max.min(w[1].n_r_max), w[0].n_r_max.max(w[1].n_r_max));
        let mid = 0.5 * (lo + hi);
        let nearest = crit
            .iter()
            .copied()
            .min_by(|a, b| (a - mid).abs().total_cmp(&(b - mid).abs()));
        let explained = crit
            .iter()
            .any(|&c| c >= (1.0 - tolerance) * lo && c <= (1.0 + tolerance) * hi);
        out.push(SurvivalDrop {
            n_g: row.n_g,
            initial,
            n_before: w[0].n_r_max,
            n_after: w[1].n_r_max,
            drop,
            nearest_critical: nearest,
            explained,
        });
    }
    out
}

/// Whether survival along the slice ever increases with `n̄_r,max` by more than `margin`.
pub fn is_non_monotone(row: &MapRow, initial: usize, collapse: bool, margin: f64) -> bool {
    let mut s = slice(row, initial, collapse);
    s.sort_by(|a, b| a.n_r_max.total_cmp(&b.n_r_max));
    s.windows(2).any(|w| w[1].survival > w[0].survival + margin)
}

/// Fraction of detrended spectral power at spatial periods below `max_period`.
///
/// `values` are samples on a uniform grid of spacing `step`.
pub fn high_frequency_power(values: &[f64], step: f64, max_period: f64) -> f64 {
    let n = values.len();
    if n < 4 {
        return 0.0;
    }
    // Remove the least-squares line.
    let xs: Vec<f64> = (0..n).map(|k| k as f64).collect();
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = values.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(values).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let r: Vec<f64> = xs.iter().zip(values).map(|(x, y)| y - my - slope * (x - mx)).collect();
    let length = n as f64 * step;
    let mut power = 0.0;
    for k in 1..=n / 2 {
        let freq = k as f64 / length;
        if freq * max_period < 1.0 {
            continue;
        }
        let (mut re, mut im) = (0.0, 0.0);
        for (j, v) in r.iter().enumerate() {
            let ph = 2.0 * std::f64::consts::PI * (k * j) as f64 / n as f64;
            re += v * ph.cos();
            im -= v * ph.sin();
        }
        power += (re * re + im * im) / n as f64;
    }
    power
}

/// `true` when a crossing is a resolved avoided crossing.
pub fn is_resolved(c: &AvoidedCrossing) -> bool {
    c.kind == CrossingKind::Resolved
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn high_frequency_power_separates_scales() {
        let step = 0.002;
        let slow: Vec<f64> = (0..41).map(|k| (k as f64 * step * 10.0).sin()).collect();
        let fast: Vec<f64> = (0..41)
            .map(|k| (k as f64 * step * 10.0).sin() + 0.1 * (2.0 * std::f64::consts::PI * k as f64 * step / 0.01).sin())
            .collect();
        let p_slow = high_frequency_power(&slow, step, 0.02);
        let p_fast = high_frequency_power(&fast, step, 0.02);
        assert!(p_fast > 10.0 * p_slow, "{p_fast} {p_slow}");
    }

    #[test]
    fn linear_trend_has_no_power() {
        let v: Vec<f64> = (0..20).map(|k| 0.3 + 0.01 * k as f64).collect();
        assert!(high_frequency_power(&v, 0.01, 0.05) < 1e-20);
    }
}
