//! Experiment configuration: TOML with unit-suffixed fields.

use std::path::Path;

use serde::{Deserialize, Serialize};

use mist_core::circuit::CircuitParams;
use mist_core::presets::preset;
use mist_core::transmon::{series_inductance_harmonics, TransmonParams};
use mist_core::units::{from_ghz, from_mhz, to_ghz, to_mhz};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Spectrum,
    Fit,
    ResonanceMap,
    FloquetMap,
    DynamicsMap,
    Calibrate,
    Oracle,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Spectrum => "spectrum",
            Self::Fit => "fit",
            Self::ResonanceMap => "resonance-map",
            Self::FloquetMap => "floquet-map",
            Self::DynamicsMap => "dynamics-map",
            Self::Calibrate => "calibrate",
            Self::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Option<Kind>,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 uses all cores.
    #[serde(default)]
    pub workers: usize,
    pub out_dir: Option<String>,
    #[serde(default)]
    pub device: DeviceConfig,
    #[serde(default)]
    pub grids: GridConfig,
    #[serde(default)]
    pub numerics: NumericsConfig,
    #[serde(default)]
    pub dynamics: DynamicsConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub resonance: ResonanceConfig,
    #[serde(default)]
    pub calibrate: CalibrateConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
}

/// Device block: a preset, raw parameters, or a preset with field overrides.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    pub preset: Option<String>,
    pub e_c_mhz: Option<f64>,
    /// Josephson harmonics `E_J1..E_Jm`.
    pub e_j_ghz: Option<Vec<f64>>,
    /// Series inductive energy; with a single `e_j_ghz` entry the harmonics
    /// are derived from it.
    pub e_l_ghz: Option<f64>,
    pub omega_r_ghz: Option<f64>,
    pub g_mhz: Option<f64>,
    pub kappa_mhz: Option<f64>,
    pub omega_d_ghz: Option<f64>,
    pub n_g: Option<f64>,
    pub flux: Option<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl Range {
    pub fn values(&self) -> Vec<f64> {
        match self.count {
            0 => Vec::new(),
            1 => vec![self.start],
            n => (0..n)
                .map(|k| self.start + (self.stop - self.start) * k as f64 / (n - 1) as f64)
                .collect(),
        }
    }
}

/// A grid given either as an explicit list or as a range.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    List(Vec<f64>),
    Range(Range),
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Self::List(v) => v.clone(),
            Self::Range(r) => r.values(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_g: Option<Grid>,
    pub flux: Option<Grid>,
    pub eps_d_mhz: Option<Grid>,
    /// Alternative to `eps_d_mhz`: peak photon numbers of the ground-state
    /// pulse at `photon_reference_n_g`, converted to drive amplitudes.
    pub n_r_max: Option<Grid>,
    pub photon_reference_n_g: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericsConfig {
    pub n_levels: usize,
    pub delta_eps_mhz: f64,
    /// Photon number covered by the Floquet branch set.
    pub floquet_n_r_max: f64,
    pub lawson_steps_per_period: Option<usize>,
}

impl Default for NumericsConfig {
    fn default() -> Self {
        Self {
            n_levels: mist_core::floquet::DEFAULT_FLOQUET_LEVELS,
            delta_eps_mhz: 5.0,
            floquet_n_r_max: 160.0,
            lawson_steps_per_period: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsConfig {
    pub t_up_ns: f64,
    pub t_final_ns: f64,
    pub initial_states: Vec<usize>,
    pub collapse: Vec<bool>,
    /// Write time-resolved traces for every cell.
    pub traces: bool,
    /// Trace sampling interval.
    pub trace_every_ns: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            t_up_ns: 200.0,
            t_final_ns: 1200.0,
            initial_states: vec![0, 1],
            collapse: vec![true],
            traces: false,
            trace_every_ns: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Multiharmonic,
    Conventional,
    SeriesInductance,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub variant: Variant,
    /// CSV with columns `kind,level,n_g,frequency_ghz[,weight]`.
    pub targets_file: Option<String>,
    /// Synthesize targets from this preset instead of reading a file.
    pub synthesize_from: Option<String>,
    pub seeds: usize,
    /// For the conventional variant, keep qubit transitions up to this level.
    pub max_level: Option<usize>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Multiharmonic,
            targets_file: None,
            synthesize_from: None,
            seeds: mist_core::fitting::DEFAULT_SEEDS,
            max_level: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResonanceConfig {
    pub max_level: usize,
    pub max_order: usize,
    pub spurious_ghz: Option<f64>,
}

impl Default for ResonanceConfig {
    fn default() -> Self {
        Self {
            max_level: 8,
            max_order: 3,
            spurious_ghz: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrateConfig {
    /// Dispersive shift for the ac-Stark conversion; computed when absent.
    pub chi_mhz: Option<f64>,
    /// Applied voltages and measured qubit shifts for the scale fit.
    pub voltages: Vec<f64>,
    pub stark_shifts_mhz: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub n_traj: usize,
    pub n_transmon: usize,
    pub n_photon: usize,
    pub eps_d_mhz: f64,
    pub initial_state: usize,
    pub sample_every_ns: f64,
    pub steps_per_period: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            n_traj: 500,
            n_transmon: 15,
            n_photon: 60,
            eps_d_mhz: 16.0,
            initial_state: 1,
            sample_every_ns: 5.0,
            steps_per_period: mist_core::oracle::DEFAULT_STEPS_PER_PERIOD,
        }
    }
}

/// Resolved device.
#[derive(Debug, Clone, Serialize)]
pub struct Device {
    pub circuit: CircuitParams,
    pub omega_d: f64,
    pub e_l: Option<f64>,
}

/// Parses TOML text, applies `key=value` overrides and validates the schema.
pub fn parse(text: &str, overrides: &[String]) -> Result<ExperimentConfig, CliError> {
    let mut value: toml::Value = toml::from_str(text).map_err(|e| CliError::Config(format!("invalid TOML: {e}")))?;
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    let cfg: ExperimentConfig =
        serde_path_to_error::deserialize(value).map_err(|e| CliError::Config(format!("at `{}`: {}", e.path(), e.inner())))?;
    Ok(cfg)
}

pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig, CliError> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?,
        None => String::new(),
    };
    parse(&text, overrides)
}

fn apply_override(root: &mut toml::Value, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{spec}` is not key=value")))?;
    let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut node = root;
    for (k, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override `{key}`: `{}` is not a table", parts[..k].join("."))))?;
        if k + 1 == parts.len() {
            table.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    Err(CliError::Config(format!("empty override key in `{spec}`")))
}

impl ExperimentConfig {
    /// Device parameters from the preset and explicit fields.
    pub fn device(&self) -> Result<Device, CliError> {
        let d = &self.device;
        let base = match &d.preset {
            Some(name) => Some(preset(name).map_err(|e| CliError::Config(format!("at `device.preset`: {e}")))?),
            None => None,
        };
        let need = |v: Option<f64>, field: &str, from_preset: Option<f64>| -> Result<f64, CliError> {
            v.or(from_preset)
                .ok_or_else(|| CliError::Config(format!("at `device.{field}`: required without a preset")))
        };
        let b = base.as_ref();
        let e_c = from_mhz(need(d.e_c_mhz, "e_c_mhz", b.map(|p| to_mhz(p.circuit.transmon.e_c)))?);
        let e_l = d.e_l_ghz.map(from_ghz).or(b.and_then(|p| p.e_l).filter(|_| d.e_j_ghz.is_none()));
        let e_j = match (&d.e_j_ghz, e_l) {
            (Some(v), Some(el)) if v.len() == 1 => series_inductance_harmonics(from_ghz(v[0]), el)
                .map_err(|e| CliError::Config(format!("at `device.e_l_ghz`: {e}")))?
                .to_vec(),
            (Some(v), _) => v.iter().map(|&x| from_ghz(x)).collect(),
            (None, _) => b
                .map(|p| p.circuit.transmon.e_j.clone())
                .ok_or_else(|| CliError::Config("at `device.e_j_ghz`: required without a preset".into()))?,
        };
        let omega_r = from_ghz(need(d.omega_r_ghz, "omega_r_ghz", b.map(|p| to_ghz(p.circuit.omega_r)))?);
        let g = from_mhz(need(d.g_mhz, "g_mhz", b.map(|p| to_mhz(p.circuit.g)))?);
        let kappa = from_mhz(need(d.kappa_mhz, "kappa_mhz", b.map(|p| to_mhz(p.circuit.kappa)))?);
        let omega_d = from_ghz(need(d.omega_d_ghz, "omega_d_ghz", b.map(|p| to_ghz(p.omega_d)))?);
        let transmon = TransmonParams::new(e_c, e_j, d.n_g.unwrap_or(0.0), d.flux.unwrap_or(0.0))
            .map_err(|e| CliError::Config(format!("at `device`: {e}")))?;
        let circuit = CircuitParams::new(transmon, omega_r, g, kappa).map_err(|e| CliError::Config(format!("at `device`: {e}")))?;
        if !(omega_d > 0.0) {
            return Err(CliError::Config("at `device.omega_d_ghz`: must be positive".into()));
        }
        Ok(Device { circuit, omega_d, e_l })
    }

    pub fn grid(&self, name: &str, grid: &Option<Grid>, default: Option<Vec<f64>>) -> Result<Vec<f64>, CliError> {
        let v = match grid {
            Some(g) => g.values(),
            None => default.ok_or_else(|| CliError::Config(format!("at `grids.{name}`: required for this experiment")))?,
        };
        if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
            return Err(CliError::Config(format!("at `grids.{name}`: must be non-empty and finite")));
        }
        Ok(v)
    }

    /// Checks everything that does not require computation.
    pub fn validate(&self, kind: Kind) -> Result<(), CliError> {
        self.device()?;
        let n = &self.numerics;
        if n.n_levels < mist_core::floquet::MIN_FLOQUET_LEVELS {
            return Err(CliError::Config(format!(
                "at `numerics.n_levels`: need at least {}",
                mist_core::floquet::MIN_FLOQUET_LEVELS
            )));
        }
        if !(n.delta_eps_mhz > 0.0) || !(n.floquet_n_r_max > 0.0) {
            return Err(CliError::Config("at `numerics`: increments and ranges must be positive".into()));
        }
        let dy = &self.dynamics;
        if !(dy.t_up_ns > 0.0 && dy.t_up_ns < dy.t_final_ns) {
            return Err(CliError::Config("at `dynamics`: need 0 < t_up_ns < t_final_ns".into()));
        }
        if dy.initial_states.is_empty() || dy.collapse.is_empty() {
            return Err(CliError::Config("at `dynamics`: initial_states and collapse must be non-empty".into()));
        }
        match kind {
            Kind::DynamicsMap | Kind::Calibrate => {
                if self.grids.eps_d_mhz.is_some() == self.grids.n_r_max.is_some() {
                    return Err(CliError::Config(
                        "at `grids`: give exactly one of eps_d_mhz and n_r_max".into(),
                    ));
                }
            }
            Kind::Fit => {
                if self.fit.targets_file.is_some() == self.fit.synthesize_from.is_some() {
                    return Err(CliError::Config(
                        "at `fit`: give exactly one of targets_file and synthesize_from".into(),
                    ));
                }
                if self.fit.seeds == 0 {
                    return Err(CliError::Config("at `fit.seeds`: must be positive".into()));
                }
            }
            Kind::Oracle => {
                let o = &self.oracle;
                if o.n_traj == 0 || o.n_transmon < 2 || o.n_photon < 2 || o.steps_per_period == 0 {
                    return Err(CliError::Config("at `oracle`: counts and truncations must be positive".into()));
                }
                if !(o.sample_every_ns > 0.0) {
                    return Err(CliError::Config("at `oracle.sample_every_ns`: must be positive".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_field_reports_path() {
        let e = parse("[device]\ne_c_ghz = 1.0\n", &[]).unwrap_err();
        assert!(e.to_string().contains("device"), "{e}");
    }

    #[test]
    fn overrides_create_nested_keys() {
        let c = parse("", &["device.preset=\"device-A\"".into(), "numerics.n_levels=16".into()]).unwrap();
        assert_eq!(c.device.preset.as_deref(), Some("device-A"));
        assert_eq!(c.numerics.n_levels, 16);
    }

    #[test]
    fn bare_string_override() {
        let c = parse("", &["device.preset=device-A".into()]).unwrap();
        assert_eq!(c.device.preset.as_deref(), Some("device-A"));
        let d = c.device().unwrap();
        assert!((to_ghz(d.omega_d) - 6.11972).abs() < 1e-12);
    }

    #[test]
    fn raw_device_requires_fields() {
        let c = parse("[device]\ne_c_mhz = 200.0\n", &[]).unwrap();
        let e = c.device().unwrap_err();
        assert!(e.to_string().contains("e_j_ghz"), "{e}");
    }

    #[test]
    fn ranges_expand() {
        let r = Range {
            start: 0.0,
            stop: 0.5,
            count: 11,
        };
        let v = r.values();
        assert_eq!(v.len(), 11);
        assert!((v[10] - 0.5).abs() < 1e-15);
    }
}
