//! Built-in device parameter sets.

use serde::Serialize;

use crate::circuit::CircuitParams;
use crate::error::{Error, Result};
use crate::transmon::{series_inductance_harmonics, Spectrum, TransmonParams};
use crate::units::{from_ghz, from_mhz};

pub const PRESET_NAMES: [&str; 5] = [
    "device-A",
    "device-B-multiharmonic",
    "device-B-conventional",
    "device-B-series-L",
    "deep-transmon-appF",
];

#[derive(Debug, Clone, Serialize)]
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub circuit: CircuitParams,
    /// Readout drive frequency (rad/ns).
    pub omega_d: f64,
    /// Series inductive energy, when the harmonics derive from one (rad/ns).
    pub e_l: Option<f64>,
}

fn circuit(e_c_mhz: f64, e_j: Vec<f64>, omega_r_ghz: f64, g_mhz: f64, kappa_mhz: f64) -> Result<CircuitParams> {
    CircuitParams::new(
        TransmonParams::new(from_mhz(e_c_mhz), e_j, 0.0, 0.0)?,
        from_ghz(omega_r_ghz),
        from_mhz(g_mhz),
        from_mhz(kappa_mhz),
    )
}

const DEVICE_B_KAPPA_MHZ: f64 = 0.92;
const DEVICE_B_DRIVE_GHZ: f64 = 7.0535;

pub fn preset(name: &str) -> Result<Preset> {
    let p = match name {
        "device-A" => Preset {
            name: "device-A",
            description: "shallow transmon, single harmonic",
            circuit: circuit(365.0, vec![from_ghz(6.71)], 6.12, 13.0, 2.6)?,
            omega_d: from_ghz(6.11972),
            e_l: None,
        },
        "device-B-multiharmonic" => {
            let ej1 = from_ghz(8.718);
            Preset {
                name: "device-B-multiharmonic",
                description: "device B, fitted with three Josephson harmonics",
                circuit: circuit(
                    216.6,
                    vec![ej1, -0.768e-2 * ej1, 0.0398e-2 * ej1],
                    7.04767,
                    186.5,
                    DEVICE_B_KAPPA_MHZ,
                )?,
                omega_d: from_ghz(DEVICE_B_DRIVE_GHZ),
                e_l: None,
            }
        }
        "device-B-conventional" => Preset {
            name: "device-B-conventional",
            description: "device B, fitted with a single cosine",
            circuit: circuit(205.6, vec![from_ghz(8.948)], 7.04765, 181.9, DEVICE_B_KAPPA_MHZ)?,
            omega_d: from_ghz(DEVICE_B_DRIVE_GHZ),
            e_l: None,
        },
        "device-B-series-L" => {
            let (e_j, e_l) = (from_ghz(8.693), from_ghz(284.2));
            Preset {
                name: "device-B-series-L",
                description: "device B, junction in series with a stray inductance",
                circuit: circuit(
                    217.4,
                    series_inductance_harmonics(e_j, e_l)?.to_vec(),
                    7.04805,
                    180.7,
                    DEVICE_B_KAPPA_MHZ,
                )?,
                omega_d: from_ghz(DEVICE_B_DRIVE_GHZ),
                e_l: Some(e_l),
            }
        }
        "deep-transmon-appF" => {
            let e_c = deep_transmon_charging_energy()?;
            let mut c = circuit(1.0, vec![100.0 * e_c], 7.04767, 186.5, DEVICE_B_KAPPA_MHZ)?;
            c.transmon.e_c = e_c;
            Preset {
                name: "deep-transmon-appF",
                description: "E_J/E_C = 100 with a 3.61 GHz qubit, device B resonator",
                circuit: c,
                omega_d: from_ghz(DEVICE_B_DRIVE_GHZ),
                e_l: None,
            }
        }
        other => {
            return Err(Error::InvalidParameter(format!(
                "unknown preset '{other}', expected one of {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Ok(p)
}

/// `E_C` giving `ω_01/2π = 3.61 GHz` at `E_J/E_C = 100` and `n_g = 0`.
fn deep_transmon_charging_energy() -> Result<f64> {
    let target = from_ghz(3.61);
    let w01 = |e_c: f64| -> Result<f64> {
        Spectrum::solve(&TransmonParams::new(e_c, vec![100.0 * e_c], 0.0, 0.0)?, 2)?.transition(0, 1)
    };
    // ω_01 is linear in E_C at fixed ratio.
    let e_c = target / w01(1.0)?;
    let e_c = e_c * target / w01(e_c)?;
    Ok(e_c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::to_ghz;

    #[test]
    fn all_presets_build() {
        for name in PRESET_NAMES {
            let p = preset(name).unwrap();
            assert_eq!(p.name, name);
            p.circuit.validate().unwrap();
        }
        assert!(preset("device-C").is_err());
    }

    #[test]
    fn deep_transmon_qubit_frequency() {
        let p = preset("deep-transmon-appF").unwrap();
        let t = &p.circuit.transmon;
        assert!((t.e_j[0] / t.e_c - 100.0).abs() < 1e-12);
        let w = Spectrum::solve(t, 2).unwrap().transition(0, 1).unwrap();
        assert!((to_ghz(w) - 3.61).abs() < 1e-9);
    }
}
