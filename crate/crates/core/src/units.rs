//! Conversions between ordinary frequencies used at the I/O boundary and the
//! angular frequencies (rad/ns, ħ = 1) used internally.

use std::f64::consts::TAU;

/// GHz → rad/ns.
pub fn from_ghz(f: f64) -> f64 {
    f * TAU
}

/// MHz → rad/ns.
pub fn from_mhz(f: f64) -> f64 {
    f * TAU * 1e-3
}

/// kHz → rad/ns.
pub fn from_khz(f: f64) -> f64 {
    f * TAU * 1e-6
}

/// rad/ns → GHz.
pub fn to_ghz(w: f64) -> f64 {
    w / TAU
}

/// rad/ns → MHz.
pub fn to_mhz(w: f64) -> f64 {
    w / TAU * 1e3
}

/// rad/ns → kHz.
pub fn to_khz(w: f64) -> f64 {
    w / TAU * 1e6
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        assert!((to_ghz(from_ghz(7.0535)) - 7.0535).abs() < 1e-15);
        assert!((to_mhz(from_mhz(0.92)) - 0.92).abs() < 1e-15);
        assert!((from_ghz(1.0) - 1e3 * from_mhz(1.0)).abs() < 1e-12);
        assert!((to_khz(from_khz(-6.6)) + 6.6).abs() < 1e-12);
    }
}
