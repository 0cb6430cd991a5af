use mist_core::circuit::CircuitParams;
use mist_core::dynamics::DriveProtocol;
use mist_core::oracle::{evolve_model, OracleModel, Truncation};
use mist_core::transmon::TransmonParams;
use mist_core::units::{from_ghz, from_mhz};

fn toy(eps_mhz: f64) -> OracleModel {
    let t = TransmonParams::new(from_mhz(216.6), vec![from_ghz(8.718)], 0.0, 0.0).unwrap();
    let c = CircuitParams::new(t, from_ghz(7.04767), from_mhz(186.5), from_mhz(10.0)).unwrap();
    let mut p = DriveProtocol::new(from_mhz(eps_mhz), from_ghz(7.0535), 1);
    p.t_up = 30.0;
    p.t_final = 40.0;
    OracleModel::new(
        &c,
        &p,
        Truncation {
            n_transmon: 3,
            n_photon: 8,
        },
    )
    .unwrap()
}

#[test]
fn same_seed_gives_same_ensemble() {
    let m = toy(6.0);
    let a = evolve_model(&m, 16, 3, 10.0).unwrap();
    let b = evolve_model(&m, 16, 3, 10.0).unwrap();
    assert_eq!(a.survival, b.survival);
    assert_eq!(a.jumps, b.jumps);
}

#[test]
fn photon_variance_grows_with_drive() {
    let weak = evolve_model(&toy(3.0), 32, 1, 10.0).unwrap();
    let strong = evolve_model(&toy(6.0), 32, 1, 10.0).unwrap();
    // Sample at the end of the ramp-up.
    let k = weak.times.iter().position(|&t| t > 29.0).unwrap();
    assert!(weak.photon_variance[k] > 0.0);
    assert!(strong.photon_variance[k] > 2.0 * weak.photon_variance[k]);
    assert!(strong.photons[k] > 2.0 * weak.photons[k]);
    for e in [&weak, &strong] {
        assert!((e.survival[0] - 1.0).abs() < 1e-12);
        assert!(e.survival.iter().all(|s| (0.0..=1.0 + 1e-12).contains(s)));
    }
}
