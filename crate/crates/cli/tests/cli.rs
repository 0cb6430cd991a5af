use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mist(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mist"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("mist-cli-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&d);
    fs::create_dir_all(&d).unwrap();
    d
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn resonance_args(out: &Path) -> Vec<String> {
    [
        "resonance-map",
        "--preset",
        "device-A",
        "--out",
        out.to_str().unwrap(),
        "--override",
        "grids.n_g=[0.0,0.1,0.2,0.3]",
        "--override",
        "grids.flux={start=0.0,stop=0.5,count=41}",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn run_strings(args: &[String]) -> Output {
    let a: Vec<&str> = args.iter().map(String::as_str).collect();
    mist(&a)
}

#[test]
fn unknown_field_exits_2_with_path() {
    let d = scratch("unknown");
    let cfg = d.join("c.toml");
    fs::write(&cfg, "[device]\npreset = \"device-A\"\n[grids]\nng = [0.0]\n").unwrap();
    let o = mist(&["spectrum", "--config", cfg.to_str().unwrap(), "--out", d.join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("grids.ng"), "{}", stderr(&o));
    assert!(!d.join("o").exists(), "no output before validation");
}

#[test]
fn missing_device_exits_2() {
    let d = scratch("missing");
    let o = mist(&["spectrum", "--out", d.join("o").to_str().unwrap(), "--override", "device.e_c_mhz=200.0"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("device.e_j_ghz"), "{}", stderr(&o));
}

#[test]
fn mismatched_kind_exits_2() {
    let d = scratch("kind");
    let cfg = d.join("c.toml");
    fs::write(&cfg, "kind = \"fit\"\n[device]\npreset = \"device-A\"\n").unwrap();
    let o = mist(&["spectrum", "--config", cfg.to_str().unwrap(), "--out", d.join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn numerical_failure_exits_3() {
    let d = scratch("numerical");
    let o = mist(&[
        "oracle",
        "--preset",
        "device-A",
        "--out",
        d.join("o").to_str().unwrap(),
        "--override",
        "oracle.n_transmon=3",
        "--override",
        "oracle.n_photon=3",
        "--override",
        "oracle.eps_d_mhz=50.0",
        "--override",
        "oracle.n_traj=2",
        "--override",
        "dynamics.t_up_ns=20.0",
        "--override",
        "dynamics.t_final_ns=40.0",
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("truncation"), "{}", stderr(&o));
}

#[test]
fn outputs_carry_metadata() {
    let d = scratch("meta");
    let out = d.join("o");
    let o = mist(&[
        "spectrum",
        "--preset",
        "device-B-multiharmonic",
        "--out",
        out.to_str().unwrap(),
        "--override",
        "grids.n_g=[0.0,0.5]",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["status"], "complete");
    let hash = meta["config_sha256"].as_str().unwrap();
    for f in ["spectrum.csv", "resonator.csv"] {
        let text = fs::read_to_string(out.join(f)).unwrap();
        assert!(text.starts_with("# tool: mist"), "{f}");
        assert!(text.contains(hash), "{f}");
        assert!(text.contains("# numerics: "), "{f}");
    }
    let ratio = meta["summary"]["ej_ec_ratio"].as_f64().unwrap();
    assert!((ratio - 8.718 / 0.2166).abs() < 1e-9);
    // The effective config is itself a valid config for the same run.
    let echo = out.join("effective_config.toml");
    let again = mist(&["spectrum", "--config", echo.to_str().unwrap(), "--out", d.join("p").to_str().unwrap()]);
    assert!(again.status.success(), "{}", stderr(&again));
    assert_eq!(
        fs::read(out.join("spectrum.csv")).unwrap(),
        fs::read(d.join("p").join("spectrum.csv")).unwrap()
    );
}

#[test]
fn identical_config_gives_identical_outputs() {
    let d = scratch("determinism");
    let mut a = resonance_args(&d.join("a"));
    a.extend(["--workers".into(), "1".into()]);
    let mut b = resonance_args(&d.join("b"));
    b.extend(["--workers".into(), "3".into()]);
    assert!(run_strings(&a).status.success());
    assert!(run_strings(&b).status.success());
    for f in ["resonances.csv", "metadata.json"] {
        assert_eq!(fs::read(d.join("a").join(f)).unwrap(), fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn interrupted_sweep_resumes_to_identical_output() {
    let d = scratch("resume");
    let full = d.join("full");
    assert!(run_strings(&resonance_args(&full)).status.success());
    let reference = fs::read_to_string(full.join("resonances.csv")).unwrap();

    // Keep the first two rows and a torn third one.
    let cut = reference.find("# row 1 done\n").unwrap() + "# row 1 done\n".len();
    let torn = format!("{}0.2,0.1", &reference[..cut]);
    let partial = d.join("partial");
    fs::create_dir_all(&partial).unwrap();
    fs::write(partial.join("resonances.csv"), torn).unwrap();
    let o = run_strings(&resonance_args(&partial));
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(partial.join("resonances.csv")).unwrap(), reference);
}

#[test]
fn resume_refuses_other_configuration() {
    let d = scratch("refuse");
    let out = d.join("o");
    assert!(run_strings(&resonance_args(&out)).status.success());
    let mut other = resonance_args(&out);
    other.extend(["--override".into(), "resonance.max_order=2".into()]);
    let o = run_strings(&other);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn device_a_two_photon_line() {
    let d = scratch("lineA");
    let out = d.join("o");
    let o = mist(&[
        "resonance-map",
        "--preset",
        "device-A",
        "--out",
        out.to_str().unwrap(),
        "--override",
        "grids.n_g=[0.0]",
        "--override",
        "resonance.max_order=1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("resonances.csv")).unwrap();
    let flux: Vec<f64> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').collect::<Vec<_>>())
        .filter(|f| f[2] == "0" && f[3] == "2" && f[4] == "1")
        .map(|f| f[1].parse().unwrap())
        .collect();
    assert_eq!(flux.len(), 1, "{text}");
    assert!((flux[0] - 0.23).abs() < 0.01, "{flux:?}");
}

#[test]
fn presets_lists_all_devices() {
    let o = mist(&["presets"]);
    assert!(o.status.success());
    let s = String::from_utf8(o.stdout).unwrap();
    for name in mist_core::presets::PRESET_NAMES {
        assert!(s.contains(name), "{name}");
    }
}

#[test]
fn targets_file_errors_name_the_record() {
    let d = scratch("targets");
    let t = d.join("t.csv");
    fs::write(&t, "kind,level,n_g,frequency_ghz\nqubit,1,0.0,3.6\nphonon,1,0.0,3.6\n").unwrap();
    let o = mist(&[
        "fit",
        "--preset",
        "device-B-multiharmonic",
        "--out",
        d.join("o").to_str().unwrap(),
        "--override",
        &format!("fit.targets_file=\"{}\"", t.display()),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("record 2"), "{}", stderr(&o));
}
