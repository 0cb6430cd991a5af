//! Integrating-factor (Lawson) fourth-order Runge–Kutta for
//! `i dψ/dt = [diag(E) + s(t) N] ψ` with a real symmetric drive operator `N`.
//!
//! The diagonal part is propagated exactly, so step size is set by the drive
//! term alone. State vectors are stored split into real and imaginary parts.

use num_complex::Complex64 as C64;

/// Diagonal energies plus a real symmetric drive operator, both in rad/ns.
#[derive(Debug, Clone)]
pub struct DrivenSystem {
    pub energies: Vec<f64>,
    /// Row-major `n x n`.
    pub coupling: Vec<f64>,
}

impl DrivenSystem {
    pub fn new(energies: Vec<f64>, coupling: Vec<f64>) -> Self {
        assert_eq!(coupling.len(), energies.len() * energies.len());
        Self { energies, coupling }
    }

    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    /// Largest absolute row sum of `N`, a bound on its spectral norm.
    pub fn coupling_norm(&self) -> f64 {
        let n = self.dim();
        (0..n)
            .map(|a| self.coupling[a * n..(a + 1) * n].iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// Split complex vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitVec {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl SplitVec {
    pub fn zeros(n: usize) -> Self {
        Self {
            re: vec![0.0; n],
            im: vec![0.0; n],
        }
    }

    pub fn basis(n: usize, k: usize) -> Self {
        let mut v = Self::zeros(n);
        v.re[k] = 1.0;
        v
    }

    pub fn from_complex(v: &[C64]) -> Self {
        Self {
            re: v.iter().map(|c| c.re).collect(),
            im: v.iter().map(|c| c.im).collect(),
        }
    }

    pub fn to_complex(&self) -> Vec<C64> {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(&r, &i)| C64::new(r, i))
            .collect()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.re.iter().map(|x| x * x).sum::<f64>() + self.im.iter().map(|x| x * x).sum::<f64>()
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }
}

/// Fixed-step Lawson RK4 stepper with precomputed phase factors.
pub struct LawsonRk4<'a> {
    sys: &'a DrivenSystem,
    h: f64,
    half: Vec<(f64, f64)>,
    full: Vec<(f64, f64)>,
    k1: SplitVec,
    f2: SplitVec,
    f3: SplitVec,
    f4: SplitVec,
    a: SplitVec,
    x: SplitVec,
    y: SplitVec,
}

impl<'a> LawsonRk4<'a> {
    /// `h` may be negative for backward propagation.
    pub fn new(sys: &'a DrivenSystem, h: f64) -> Self {
        let n = sys.dim();
        let phase = |e: f64, dt: f64| {
            let (s, c) = (-e * dt).sin_cos();
            (c, s)
        };
        Self {
            sys,
            h,
            half: sys.energies.iter().map(|&e| phase(e, 0.5 * h)).collect(),
            full: sys.energies.iter().map(|&e| phase(e, h)).collect(),
            k1: SplitVec::zeros(n),
            f2: SplitVec::zeros(n),
            f3: SplitVec::zeros(n),
            f4: SplitVec::zeros(n),
            a: SplitVec::zeros(n),
            x: SplitVec::zeros(n),
            y: SplitVec::zeros(n),
        }
    }

    pub fn step_size(&self) -> f64 {
        self.h
    }

    /// `out = -i s N x`.
    fn drive(sys: &DrivenSystem, s: f64, x: &SplitVec, out: &mut SplitVec) {
        let n = sys.dim();
        for a in 0..n {
            let row = &sys.coupling[a * n..(a + 1) * n];
            let mut yr = 0.0;
            let mut yi = 0.0;
            for b in 0..n {
                yr += row[b] * x.re[b];
                yi += row[b] * x.im[b];
            }
            out.re[a] = s * yi;
            out.im[a] = -s * yr;
        }
    }

    /// Advances `u` by one step; `s` holds the drive scalar at the start,
    /// midpoint and end of the step.
    pub fn step(&mut self, u: &mut SplitVec, s: [f64; 3]) {
        let n = self.sys.dim();
        let h = self.h;
        Self::drive(self.sys, s[0], u, &mut self.k1);
        for k in 0..n {
            let (c, sn) = self.half[k];
            self.a.re[k] = c * u.re[k] - sn * u.im[k];
            self.a.im[k] = c * u.im[k] + sn * u.re[k];
            let kr = self.k1.re[k];
            let ki = self.k1.im[k];
            self.x.re[k] = self.a.re[k] + 0.5 * h * (c * kr - sn * ki);
            self.x.im[k] = self.a.im[k] + 0.5 * h * (c * ki + sn * kr);
        }
        Self::drive(self.sys, s[1], &self.x, &mut self.f2);
        for k in 0..n {
            self.x.re[k] = self.a.re[k] + 0.5 * h * self.f2.re[k];
            self.x.im[k] = self.a.im[k] + 0.5 * h * self.f2.im[k];
        }
        Self::drive(self.sys, s[1], &self.x, &mut self.f3);
        for k in 0..n {
            let (c, sn) = self.half[k];
            let r = self.a.re[k] + h * self.f3.re[k];
            let i = self.a.im[k] + h * self.f3.im[k];
            self.y.re[k] = c * r - sn * i;
            self.y.im[k] = c * i + sn * r;
        }
        Self::drive(self.sys, s[2], &self.y, &mut self.f4);
        let w = h / 6.0;
        for k in 0..n {
            let (ch, sh) = self.half[k];
            let (cf, sf) = self.full[k];
            let ur = u.re[k] + w * self.k1.re[k];
            let ui = u.im[k] + w * self.k1.im[k];
            let mr = 2.0 * w * (self.f2.re[k] + self.f3.re[k]);
            let mi = 2.0 * w * (self.f2.im[k] + self.f3.im[k]);
            u.re[k] = cf * ur - sf * ui + ch * mr - sh * mi + w * self.f4.re[k];
            u.im[k] = cf * ui + sf * ur + ch * mi + sh * mr + w * self.f4.im[k];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_evolution_is_exact() {
        let sys = DrivenSystem::new(vec![0.0, 3.0, 7.5], vec![0.0; 9]);
        let mut st = LawsonRk4::new(&sys, 0.37);
        let mut u = SplitVec::from_complex(&[C64::new(0.6, 0.0), C64::new(0.0, 0.8), C64::new(0.0, 0.0)]);
        for _ in 0..10 {
            st.step(&mut u, [1.0, 1.0, 1.0]);
        }
        let t = 3.7;
        let expect = C64::new(0.0, 0.8) * C64::new(0.0, -3.0 * t).exp();
        assert!((u.to_complex()[1] - expect).norm() < 1e-13);
        assert!((u.to_complex()[0] - C64::new(0.6, 0.0)).norm() < 1e-13);
    }

    #[test]
    fn static_two_level_rabi() {
        // Degenerate levels with constant coupling: |c1|² = sin²(Ω t).
        let sys = DrivenSystem::new(vec![0.0, 0.0], vec![0.0, 1.0, 1.0, 0.0]);
        let h = 1e-3;
        let mut st = LawsonRk4::new(&sys, h);
        let mut u = SplitVec::basis(2, 0);
        let omega = 0.8;
        for _ in 0..1000 {
            st.step(&mut u, [omega; 3]);
        }
        let p1 = u.re[1].powi(2) + u.im[1].powi(2);
        assert!((p1 - (omega * 1.0f64).sin().powi(2)).abs() < 1e-10);
        assert!((u.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn backward_step_inverts_forward() {
        let sys = DrivenSystem::new(vec![0.0, 1.3, 2.9], vec![0.1, 0.5, 0.0, 0.5, -0.2, 0.7, 0.0, 0.7, 0.3]);
        let mut fwd = LawsonRk4::new(&sys, 1e-3);
        let mut bwd = LawsonRk4::new(&sys, -1e-3);
        let mut u = SplitVec::basis(3, 1);
        let start = u.clone();
        let drive = |t: f64| 2.0 * (5.0 * t).cos();
        for k in 0..500 {
            let t = k as f64 * 1e-3;
            fwd.step(&mut u, [drive(t), drive(t + 5e-4), drive(t + 1e-3)]);
        }
        for k in (0..500).rev() {
            let t = (k + 1) as f64 * 1e-3;
            bwd.step(&mut u, [drive(t), drive(t - 5e-4), drive(t - 1e-3)]);
        }
        for k in 0..3 {
            assert!((u.re[k] - start.re[k]).abs() < 1e-10);
            assert!((u.im[k] - start.im[k]).abs() < 1e-10);
        }
    }
}
