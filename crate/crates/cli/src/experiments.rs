//! One function per experiment kind.

use std::path::Path;

use log::info;
use rayon::prelude::*;
use serde_json::json;

use mist_core::circuit::{pulled_resonator_frequency, resonance_condition_map, DressedSpectrum, ResonanceQuery};
use mist_core::dynamics::{
    calibrate_photon_axis, eps_d_for_photons, resonator_trajectory, stark_photon_number, voltage_scale, DriveProtocol,
    Integrator, ReadoutModel, ReadoutSettings, TransitionRecord,
};
use mist_core::fitting::{
    best, fit_multistart, FitModel, FitResult, ModelVariant, SpectroscopyTargets, Target, TargetKind, FIT_PHOTONS,
    FIT_TRANSMON_LEVELS,
};
use mist_core::floquet::CrossingKind;
use mist_core::oracle::{evolve_density_matrix, evolve_model, OracleModel, Truncation};
use mist_core::presets::preset;
use mist_core::transmon::{charge_dispersion, half_period_grid, Spectrum};
use mist_core::units::{from_ghz, from_mhz, to_ghz, to_mhz};

use crate::config::{Device, DeviceConfig, ExperimentConfig, Kind, Variant};
use crate::error::CliError;
use crate::output::{num, Run, Table};

pub fn run(cfg: &ExperimentConfig, kind: Kind, out: &Path) -> Result<(), CliError> {
    cfg.validate(kind)?;
    let device = cfg.device()?;
    let resolved = device_block(
        &FitModel {
            circuit: device.circuit.clone(),
            e_l: None,
        },
        &device,
    );
    let mut run = Run::open(out, cfg, kind)?;
    run.finish(cfg, &resolved, serde_json::Value::Null, false)?;
    let summary = match kind {
        Kind::Spectrum => spectrum(cfg, &device, &mut run)?,
        Kind::Fit => fit(cfg, &device, &mut run)?,
        Kind::ResonanceMap => resonance_map(cfg, &device, &mut run)?,
        Kind::FloquetMap => floquet_map(cfg, &device, &mut run)?,
        Kind::DynamicsMap => dynamics_map(cfg, &device, &mut run)?,
        Kind::Calibrate => calibrate(cfg, &device, &mut run)?,
        Kind::Oracle => oracle(cfg, &device, &mut run)?,
    };
    run.finish(cfg, &resolved, summary, true)
}

fn readout_settings(cfg: &ExperimentConfig) -> ReadoutSettings {
    let n = &cfg.numerics;
    ReadoutSettings {
        n_levels: n.n_levels,
        delta_eps: from_mhz(n.delta_eps_mhz),
        n_r_max: n.floquet_n_r_max,
        integrator: match n.lawson_steps_per_period {
            Some(steps_per_period) => Integrator::Lawson { steps_per_period },
            None => Integrator::Stroboscopic,
        },
    }
}

fn pulse(cfg: &ExperimentConfig, device: &Device, eps_d: f64, initial: usize) -> DriveProtocol {
    DriveProtocol {
        eps_d,
        omega_d: device.omega_d,
        t_up: cfg.dynamics.t_up_ns,
        t_final: cfg.dynamics.t_final_ns,
        initial,
    }
}

/// Computes rows `0..n` not yet present in every table, in parallel batches,
/// and appends them in grid order.
fn sweep<F>(n: usize, tables: &mut [Table], compute: F) -> Result<(), CliError>
where
    F: Fn(usize) -> Result<Vec<Vec<Vec<String>>>, CliError> + Sync,
{
    let done = tables.iter().map(Table::completed).min().unwrap_or(0).min(n);
    for t in tables.iter_mut() {
        t.truncate_to(done)?;
    }
    if done > 0 {
        info!("resuming after {done} of {n} rows");
    }
    let batch = rayon::current_num_threads().max(1);
    let mut next = done;
    while next < n {
        let end = (next + batch).min(n);
        let results: Vec<_> = (next..end).into_par_iter().map(&compute).collect();
        for (k, r) in results.into_iter().enumerate() {
            let per_table = r?;
            for (t, records) in tables.iter_mut().zip(per_table) {
                t.append_row(&records)?;
            }
            info!("row {} of {n} written", next + k + 1);
        }
        next = end;
    }
    Ok(())
}

fn spectrum(cfg: &ExperimentConfig, device: &Device, run: &mut Run) -> Result<serde_json::Value, CliError> {
    let ng = cfg.grid("n_g", &cfg.grids.n_g, Some(vec![device.circuit.transmon.n_g]))?;
    let flux = cfg.grid("flux", &cfg.grids.flux, Some(vec![device.circuit.transmon.flux]))?;
    let n_levels = cfg.numerics.n_levels;
    let mut tables = vec![
        run.table("spectrum.csv", &["n_g", "flux", "level", "energy_ghz", "transition_0j_ghz"])?,
        run.table(
            "resonator.csv",
            &["n_g", "flux", "omega_r0_ghz", "omega_r1_ghz", "stark_shift_per_photon_mhz"],
        )?,
    ];
    sweep(ng.len(), &mut tables, |r| {
        let mut levels = Vec::new();
        let mut res = Vec::new();
        for &f in &flux {
            let c = device.circuit.with_n_g(ng[r]).with_flux(f);
            let s = Spectrum::solve(&c.transmon, n_levels)?;
            for (j, e) in s.energies.iter().enumerate() {
                levels.push(vec![num(ng[r]), num(f), j.to_string(), num(to_ghz(*e)), num(to_ghz(e - s.energies[0]))]);
            }
            let ds = DressedSpectrum::solve(&c, FIT_TRANSMON_LEVELS, FIT_PHOTONS)?;
            let (w0, w1) = (pulled_resonator_frequency(&ds, 0)?, pulled_resonator_frequency(&ds, 1)?);
            res.push(vec![num(ng[r]), num(f), num(to_ghz(w0)), num(to_ghz(w1)), num(to_mhz(w1 - w0))]);
        }
        Ok(vec![levels, res])
    })?;
    let grid = half_period_grid(51);
    let dispersion = (1..=3)
        .map(|l| charge_dispersion(&device.circuit.transmon, l, &grid).map(to_mhz))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(json!({
        "ej_ec_ratio": device.circuit.transmon.ej_ec_ratio(),
        "charge_dispersion_0j_mhz": dispersion,
    }))
}

/// Targets CSV: `kind,level,n_g,frequency_ghz[,weight]`; for resonator rows
/// `level` is the qubit state.
pub fn read_targets(path: &Path) -> Result<SpectroscopyTargets, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| CliError::Config(format!("at `fit.targets_file`: {e}")))?;
    let mut targets = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Config(format!("at `fit.targets_file` record {}: {e}", line + 1)))?;
        let bad = |what: &str| CliError::Config(format!("at `fit.targets_file` record {}: {what}", line + 1));
        let field = |k: usize| rec.get(k).filter(|s| !s.is_empty());
        let parse = |k: usize, name: &str| -> Result<f64, CliError> {
            field(k)
                .ok_or_else(|| bad(&format!("missing {name}")))?
                .parse::<f64>()
                .map_err(|_| bad(&format!("{name} is not a number")))
        };
        let level = field(1)
            .ok_or_else(|| bad("missing level"))?
            .parse::<usize>()
            .map_err(|_| bad("level is not a non-negative integer"))?;
        let kind = match field(0) {
            Some("qubit") => TargetKind::Qubit {
                level,
                n_g: parse(2, "n_g")?,
            },
            Some("resonator") => TargetKind::Resonator { state: level },
            _ => return Err(bad("kind must be `qubit` or `resonator`")),
        };
        let weight = match field(4) {
            Some(_) => Some(parse(4, "weight")?),
            None => None,
        };
        targets.push(Target {
            kind,
            frequency: from_ghz(parse(3, "frequency_ghz")?),
            weight,
        });
    }
    Ok(SpectroscopyTargets { targets })
}

fn device_block(model: &FitModel, device: &Device) -> DeviceConfig {
    let c = &model.circuit;
    DeviceConfig {
        preset: None,
        e_c_mhz: Some(to_mhz(c.transmon.e_c)),
        e_j_ghz: Some(c.transmon.e_j.iter().map(|&e| to_ghz(e)).collect()),
        e_l_ghz: None,
        omega_r_ghz: Some(to_ghz(c.omega_r)),
        g_mhz: Some(to_mhz(c.g)),
        kappa_mhz: Some(to_mhz(c.kappa)),
        omega_d_ghz: Some(to_ghz(device.omega_d)),
        n_g: Some(c.transmon.n_g),
        flux: Some(c.transmon.flux),
    }
}

fn fit(cfg: &ExperimentConfig, device: &Device, run: &mut Run) -> Result<serde_json::Value, CliError> {
    let f = &cfg.fit;
    let mut targets = match (&f.targets_file, &f.synthesize_from) {
        (Some(p), _) => read_targets(Path::new(p))?,
        (None, Some(name)) => {
            let p = preset(name).map_err(|e| CliError::Config(format!("at `fit.synthesize_from`: {e}")))?;
            SpectroscopyTargets::synthesize(&p.circuit, &SpectroscopyTargets::standard_kinds())?
        }
        (None, None) => unreachable!("checked by validate"),
    };
    if let Some(l) = f.max_level {
        targets = targets.restricted(l);
    }
    let variant = match f.variant {
        Variant::Multiharmonic => ModelVariant::Multiharmonic,
        Variant::Conventional => ModelVariant::Conventional,
        Variant::SeriesInductance => ModelVariant::SeriesInductance,
    };
    if variant == ModelVariant::SeriesInductance && device.e_l.is_none() {
        return Err(CliError::Config("at `device.e_l_ghz`: required for the series-inductance fit".into()));
    }
    targets
        .validate(variant.n_parameters())
        .map_err(|e| CliError::Config(format!("at `fit`: {e}")))?;
    let initial = FitModel {
        circuit: device.circuit.clone(),
        e_l: device.e_l,
    };
    let results = fit_multistart(&targets, variant, &initial, f.seeds, cfg.seed)?;
    let best = best(&results).expect("at least one seed").clone();

    let names = variant.parameter_names();
    let mut columns = vec!["seed", "loss_ghz", "converged", "iterations", "ej_ec_ratio"];
    columns.extend_from_slice(names);
    let records: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            let mut rec = vec![
                r.seed.unwrap_or(0).to_string(),
                num(r.loss),
                r.converged.to_string(),
                r.iterations.to_string(),
                num(r.ej_ec_ratio()),
            ];
            rec.extend(physical_vector(r, variant)?.into_iter().map(num));
            Ok(rec)
        })
        .collect::<Result<_, CliError>>()?;
    run.write_table("fit_seeds.csv", &columns, &records)?;

    let residuals: Vec<Vec<String>> = best
        .residuals
        .iter()
        .map(|r| {
            let (kind, level, n_g) = match r.kind {
                TargetKind::Qubit { level, n_g } => ("qubit", level, num(n_g)),
                TargetKind::Resonator { state } => ("resonator", state, String::new()),
            };
            vec![
                kind.to_string(),
                level.to_string(),
                n_g,
                num(to_ghz(r.target)),
                num(to_ghz(r.model)),
                num(r.weighted),
            ]
        })
        .collect();
    run.write_table(
        "residuals.csv",
        &["kind", "level", "n_g", "target_ghz", "model_ghz", "weighted_ghz"],
        &residuals,
    )?;
    let mut block = device_block(&best.model, device);
    if let Some(e_l) = best.model.e_l {
        block.e_j_ghz = Some(vec![physical_vector(&best, variant)?[1]]);
        block.e_l_ghz = Some(to_ghz(e_l));
    }
    #[derive(serde::Serialize)]
    struct Fitted {
        device: DeviceConfig,
    }
    let text = toml::to_string(&Fitted { device: block }).map_err(|e| CliError::Io(e.to_string()))?;
    run.write_text("fitted_device.toml", &text)?;
    Ok(json!({
        "variant": variant,
        "best_seed": best.seed,
        "best_loss_ghz": best.loss,
        "ej_ec_ratio": best.ej_ec_ratio(),
        "parameters": names.iter().zip(physical_vector(&best, variant)?).map(|(n, v)| ((*n).to_string(), json!(v))).collect::<serde_json::Map<_, _>>(),
        "parameter_units": "e_c and g in MHz, other energies and frequencies in GHz, ratios dimensionless",
    }))
}

/// Fit vector in output units: `E_C` and `g` in MHz, other energies in GHz.
fn physical_vector(r: &FitResult, variant: ModelVariant) -> Result<Vec<f64>, CliError> {
    let x = r.model.vector(variant)?;
    Ok(variant
        .parameter_names()
        .iter()
        .zip(x)
        .map(|(n, v)| match *n {
            "e_c" | "g" => to_mhz(v),
            "e_j2_ratio" | "e_j3_ratio" => v,
            _ => to_ghz(v),
        })
        .collect())
}

fn resonance_map(cfg: &ExperimentConfig, device: &Device, run: &mut Run) -> Result<serde_json::Value, CliError> {
    let ng = cfg.grid("n_g", &cfg.grids.n_g, Some(vec![0.0, 0.25, 0.5]))?;
    let flux = cfg.grid("flux", &cfg.grids.flux, Some((0..=200).map(|k| 0.5 * k as f64 / 200.0).collect()))?;
    let r = &cfg.resonance;
    let query = ResonanceQuery::from_qubit_states(r.max_level, r.max_order, r.spurious_ghz.map(from_ghz));
    let mut tables = vec![run.table(
        "resonances.csv",
        &["n_g", "flux", "i", "j", "order", "spurious_offset_ghz"],
    )?];
    sweep(ng.len(), &mut tables, |k| {
        let lines = resonance_condition_map(&device.circuit, device.omega_d, &flux, &[ng[k]], &query)?;
        let mut rec = Vec::new();
        for l in &lines {
            for &(f, n_g) in &l.locus {
                rec.push(vec![
                    num(n_g),
                    num(f),
                    l.transition.0.to_string(),
                    l.transition.1.to_string(),
                    l.order.to_string(),
                    num(to_ghz(l.spurious_offset)),
                ]);
            }
        }
        Ok(vec![rec])
    })?;
    Ok(json!({ "transitions": query.transitions, "max_order": r.max_order }))
}

fn critical_records(model: &ReadoutModel, n_g: f64, initials: &[usize]) -> Result<Vec<Vec<String>>, CliError> {
    let mut rec = Vec::new();
    for &i in initials {
        let track = model.track(i)?;
        for (k, s) in track.switches.iter().enumerate() {
            rec.push(vec![
                num(n_g),
                i.to_string(),
                k.to_string(),
                num(s.n_r),
                s.partner(track.segments[k].branch).to_string(),
                track.ambiguous.to_string(),
            ]);
        }
    }
    Ok(rec)
}

const CRITICAL_COLUMNS: [&str; 6] = ["n_g", "initial", "switch", "n_r", "to_branch", "ambiguous"];

fn floquet_map(cfg: &ExperimentConfig, device: &Device, run: &mut Run) -> Result<serde_json::Value, CliError> {
    let ng = cfg.grid("n_g", &cfg.grids.n_g, Some(vec![device.circuit.transmon.n_g]))?;
    let settings = readout_settings(cfg);
    let initials = cfg.dynamics.initial_states.clone();
    let mut tables = vec![
        run.table(
            "crossings.csv",
            &["n_g", "branch_a", "branch_b", "n_r", "eps_t_mhz", "gap_mhz", "swap", "resolved"],
        )?,
        run.table("critical.csv", &CRITICAL_COLUMNS)?,
        run.table("branches.csv", &["n_g", "max_unitarity_defect", "n_points"])?,
    ];
    sweep(ng.len(), &mut tables, |k| {
        let model = ReadoutModel::build(&device.circuit.with_n_g(ng[k]), device.omega_d, &settings)?;
        let crossings = model
            .crossings
            .iter()
            .map(|c| {
                vec![
                    num(ng[k]),
                    c.branches.0.to_string(),
                    c.branches.1.to_string(),
                    num(c.n_r),
                    num(to_mhz(c.eps_t)),
                    num(to_mhz(c.gap)),
                    num(c.swap),
                    (c.kind == CrossingKind::Resolved).to_string(),
                ]
            })
            .collect();
        let info = vec![vec![
            num(ng[k]),
            num(model.branches.max_unitarity_defect),
            model.branches.len().to_string(),
        ]];
        Ok(vec![crossings, critical_records(&model, ng[k], &initials)?, info])
    })?;
    Ok(json!({ "rows": ng.len() }))
}

/// Drive amplitudes of a map: explicit, or solved from ground-state peak
/// photon numbers at the reference gate charge.
fn amplitude_grid(cfg: &ExperimentConfig, device: &Device) -> Result<(Vec<f64>, Option<f64>), CliError> {
    if let Some(g) = &cfg.grids.eps_d_mhz {
        let v = cfg.grid("eps_d_mhz", &Some(g.clone()), None)?;
        return Ok((v.into_iter().map(from_mhz).collect(), None));
    }
    let targets = cfg.grid("n_r_max", &cfg.grids.n_r_max, None)?;
    let n_ref = cfg.grids.photon_reference_n_g.unwrap_or(device.circuit.transmon.n_g);
    let settings = readout_settings(cfg);
    let model = ReadoutModel::build(&device.circuit.with_n_g(n_ref), device.omega_d, &settings)?;
    let dispersion = model.diabatic_dispersion(0)?;
    let p = pulse(cfg, device, 0.0, 0);
    let eps = targets
        .iter()
        .map(|&n| eps_d_for_photons(n, &dispersion, device.circuit.kappa, &p))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((eps, Some(n_ref)))
}

fn dynamics_map(cfg: &ExperimentConfig, device: &Device, run: &mut Run) -> Result<serde_json::Value, CliError> {
    let ng = cfg.grid("n_g", &cfg.grids.n_g, Some(vec![device.circuit.transmon.n_g]))?;
    let settings = readout_settings(cfg);
    let (eps, reference) = amplitude_grid(cfg, device)?;
    let dy = &cfg.dynamics;
    let period = 2.0 * std::f64::consts::PI / device.omega_d;
    let stride = dy.traces.then(|| ((dy.trace_every_ns / period).round() as usize).max(1));
    let mut survival_cols = vec![
        "n_g",
        "eps_d_mhz",
        "initial",
        "collapse",
        "n_r_max",
        "survival",
        "norm_defect",
    ];
    let level_cols: Vec<String> = (0..settings.n_levels).map(|j| format!("p_{j}")).collect();
    let p_up_cols: Vec<String> = (0..settings.n_levels).map(|j| format!("p_up_{j}")).collect();
    survival_cols.extend(p_up_cols.iter().map(String::as_str));
    let mut tables = vec![
        run.table("survival.csv", &survival_cols)?,
        run.table("critical.csv", &CRITICAL_COLUMNS)?,
    ];
    if stride.is_some() {
        let mut cols = vec!["n_g", "eps_d_mhz", "initial", "collapse", "t_ns", "n_r"];
        cols.extend(level_cols.iter().map(String::as_str));
        tables.push(run.table("traces.csv", &cols)?);
    }
    sweep(ng.len(), &mut tables, |k| {
        let n_g = ng[k];
        let model = ReadoutModel::build(&device.circuit.with_n_g(n_g), device.omega_d, &settings)?;
        let mut cells = Vec::new();
        let mut traces = Vec::new();
        for &initial in &dy.initial_states {
            let dispersion = model.diabatic_dispersion(initial)?;
            for &e in &eps {
                let protocol = pulse(cfg, device, e, initial);
                let trajectory = resonator_trajectory(&protocol, &dispersion, device.circuit.kappa)?;
                for &collapse in &dy.collapse {
                    let r: TransitionRecord =
                        model.readout_with_trajectory(&protocol, &settings, &trajectory, collapse, stride)?;
                    let mut rec = vec![
                        num(n_g),
                        num(to_mhz(e)),
                        initial.to_string(),
                        collapse.to_string(),
                        num(r.n_r_max),
                        num(r.survival),
                        num(r.norm_defect),
                    ];
                    rec.extend(r.p_up.iter().map(|&p| num(p)));
                    cells.push(rec);
                    if stride.is_some() {
                        for (t, (n_r, pops)) in r.times.iter().zip(r.n_r.iter().zip(&r.populations)) {
                            let mut rec = vec![
                                num(n_g),
                                num(to_mhz(e)),
                                initial.to_string(),
                                collapse.to_string(),
                                num(*t),
                                num(*n_r),
                            ];
                            rec.extend(pops.iter().map(|&p| num(p)));
                            traces.push(rec);
                        }
                    }
                }
            }
        }
        let mut out = vec![cells, critical_records(&model, n_g, &dy.initial_states)?];
        if stride.is_some() {
            out.push(traces);
        }
        Ok(out)
    })?;
    Ok(json!({
        "eps_d_mhz": eps.iter().map(|&e| to_mhz(e)).collect::<Vec<_>>(),
        "photon_reference_n_g": reference,
    }))
}

fn calibrate(cfg: &ExperimentConfig, device: &Device, run: &mut Run) -> Result<serde_json::Value, CliError> {
    let c = &device.circuit;
    let settings = readout_settings(cfg);
    let model = ReadoutModel::build(c, device.omega_d, &settings)?;
    let states = &cfg.dynamics.initial_states;
    let dispersions = states
        .iter()
        .map(|&i| model.diabatic_dispersion(i))
        .collect::<Result<Vec<_>, _>>()?;
    let chi = match cfg.calibrate.chi_mhz {
        Some(x) => from_mhz(x),
        None => {
            let ds = DressedSpectrum::solve(c, FIT_TRANSMON_LEVELS, FIT_PHOTONS)?;
            pulled_resonator_frequency(&ds, 1)? - pulled_resonator_frequency(&ds, 0)?
        }
    };
    let (eps, _) = amplitude_grid(cfg, device)?;
    let cal = calibrate_photon_axis(chi, c.kappa, device.omega_d, &dispersions, &pulse(cfg, device, 0.0, 0), &eps)?;
    let mut columns = vec!["eps_d_mhz".to_string(), "steady_n".to_string()];
    columns.extend(cal.states.iter().map(|s| format!("n_max_{s}")));
    let records: Vec<Vec<String>> = (0..eps.len())
        .map(|k| {
            let mut r = vec![num(to_mhz(eps[k])), num(cal.steady[k])];
            r.extend(cal.n_max.iter().map(|row| num(row[k])));
            r
        })
        .collect();
    let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
    run.write_table("calibration.csv", &cols, &records)?;

    let cc = &cfg.calibrate;
    let mut scale = None;
    if !cc.voltages.is_empty() || !cc.stark_shifts_mhz.is_empty() {
        if cc.voltages.len() != cc.stark_shifts_mhz.len() {
            return Err(CliError::Config(
                "at `calibrate`: voltages and stark_shifts_mhz must have equal length".into(),
            ));
        }
        let photons = cc
            .stark_shifts_mhz
            .iter()
            .map(|&s| stark_photon_number(from_mhz(s), chi))
            .collect::<Result<Vec<_>, _>>()?;
        let s = voltage_scale(&cc.voltages, &photons, cal.low_power_slope)?;
        let rec: Vec<Vec<String>> = cc
            .voltages
            .iter()
            .zip(&photons)
            .map(|(&v, &n)| vec![num(v), num(n), num(to_mhz(s * v))])
            .collect();
        run.write_table("voltage.csv", &["voltage", "stark_photons", "eps_d_mhz"], &rec)?;
        scale = Some(to_mhz(s));
    }
    Ok(json!({
        "stark_shift_per_photon_mhz": to_mhz(chi),
        "low_power_slope_per_mhz2": cal.low_power_slope / to_mhz(1.0).powi(2),
        "eps_d_mhz_per_volt": scale,
    }))
}

fn oracle(cfg: &ExperimentConfig, device: &Device, run: &mut Run) -> Result<serde_json::Value, CliError> {
    let o = &cfg.oracle;
    let protocol = pulse(cfg, device, from_mhz(o.eps_d_mhz), o.initial_state);
    let truncation = Truncation {
        n_transmon: o.n_transmon,
        n_photon: o.n_photon,
    };
    let mut model = OracleModel::new(&device.circuit, &protocol, truncation)?;
    model.steps_per_period = o.steps_per_period;
    let ens = evolve_model(&model, o.n_traj, cfg.seed, o.sample_every_ns)?;
    let mut columns = vec![
        "t_ns".to_string(),
        "survival".into(),
        "survival_err".into(),
        "photons".into(),
        "photons_err".into(),
        "photon_variance".into(),
    ];
    columns.extend((0..o.n_transmon).flat_map(|j| [format!("p_{j}"), format!("p_{j}_err")]));
    let records: Vec<Vec<String>> = (0..ens.times.len())
        .map(|k| {
            let mut r = vec![
                num(ens.times[k]),
                num(ens.survival[k]),
                num(ens.survival_error[k]),
                num(ens.photons[k]),
                num(ens.photons_error[k]),
                num(ens.photon_variance[k]),
            ];
            for j in 0..o.n_transmon {
                r.push(num(ens.transmon_populations[k][j]));
                r.push(num(ens.transmon_populations_error[k][j]));
            }
            r
        })
        .collect();
    let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
    run.write_table("trajectories.csv", &cols, &records)?;
    let mut trace_defect = None;
    if model.dim() <= 400 {
        let d = evolve_density_matrix(&model, o.sample_every_ns)?;
        let records: Vec<Vec<String>> = (0..d.times.len())
            .map(|k| {
                let mut r = vec![num(d.times[k]), num(d.survival[k]), num(d.photons[k])];
                r.extend(d.transmon_populations[k].iter().map(|&p| num(p)));
                r
            })
            .collect();
        let mut columns = vec!["t_ns".to_string(), "survival".into(), "photons".into()];
        columns.extend((0..o.n_transmon).map(|j| format!("p_{j}")));
        let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
        run.write_table("master_equation.csv", &cols, &records)?;
        trace_defect = Some(d.trace_defect);
    }
    let jumps = ens.jumps.iter().sum::<usize>() as f64 / ens.n_traj as f64;
    Ok(json!({
        "projector": ens.projector,
        "mean_jumps": jumps,
        "max_edge_occupancy": ens.max_edge_occupancy,
        "final_survival": ens.survival.last(),
        "master_equation_trace_defect": trace_defect,
    }))
}
