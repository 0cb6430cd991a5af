use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod config;
mod error;
mod experiments;
mod output;

use config::Kind;
use error::CliError;

#[derive(Parser)]
#[command(name = "mist", version, about = "Measurement-induced transition experiments for driven transmons")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; overrides `workers`.
    #[arg(long)]
    workers: Option<usize>,
    /// Device preset; overrides `device.preset`.
    #[arg(long)]
    preset: Option<String>,
    /// `key=value` with a dotted key, e.g. `grids.n_g=[0.0,0.25]`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Transmon levels and pulled resonator frequencies.
    Spectrum(Common),
    /// Fit circuit parameters to spectroscopy targets.
    Fit(Common),
    /// Multiphoton resonance loci over flux and gate charge.
    ResonanceMap(Common),
    /// Floquet crossings and critical photon numbers over gate charge.
    FloquetMap(Common),
    /// Readout survival over gate charge and drive amplitude.
    DynamicsMap(Common),
    /// Drive amplitude to photon number calibration.
    Calibrate(Common),
    /// Quantum-trajectory reference simulation.
    Oracle(Common),
    /// List the built-in devices.
    Presets,
}

fn execute(kind: Kind, c: Common) -> Result<(), CliError> {
    let mut overrides = Vec::new();
    if let Some(p) = &c.preset {
        overrides.push(format!("device.preset={}", toml::Value::String(p.clone())));
    }
    overrides.extend(c.overrides);
    let mut cfg = config::load(c.config.as_deref(), &overrides)?;
    if let Some(k) = cfg.kind {
        if k != kind {
            return Err(CliError::Config(format!(
                "at `kind`: config is for `{}` but `{}` was requested",
                k.name(),
                kind.name()
            )));
        }
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(w) = c.workers {
        cfg.workers = w;
    }
    let out = c
        .out
        .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
        .ok_or_else(|| CliError::Config("at `out_dir`: no output directory (use --out)".into()))?;
    cfg.validate(kind)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build_global()
        .map_err(|e| CliError::Io(e.to_string()))?;
    experiments::run(&cfg, kind, &out)
}

fn presets() -> Result<(), CliError> {
    use mist_core::units::{to_ghz, to_mhz};
    for name in mist_core::presets::PRESET_NAMES {
        let p = mist_core::presets::preset(name)?;
        let t = &p.circuit.transmon;
        println!(
            "{name:<24} E_C {:.2} MHz  E_J1 {:.4} GHz  E_J/E_C {:.2}  f_r {:.5} GHz  g {:.1} MHz  kappa {:.2} MHz  f_d {:.5} GHz  ({})",
            to_mhz(t.e_c),
            to_ghz(t.e_j[0]),
            t.ej_ec_ratio(),
            to_ghz(p.circuit.omega_r),
            to_mhz(p.circuit.g),
            to_mhz(p.circuit.kappa),
            to_ghz(p.omega_d),
            p.description
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Spectrum(c) => execute(Kind::Spectrum, c),
        Command::Fit(c) => execute(Kind::Fit, c),
        Command::ResonanceMap(c) => execute(Kind::ResonanceMap, c),
        Command::FloquetMap(c) => execute(Kind::FloquetMap, c),
        Command::DynamicsMap(c) => execute(Kind::DynamicsMap, c),
        Command::Calibrate(c) => execute(Kind::Calibrate, c),
        Command::Oracle(c) => execute(Kind::Oracle, c),
        Command::Presets => presets(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mist: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
