//! Quantum-trajectory and master-equation reference for the full
//! transmon-resonator model.
//!
//! In the real gauge `a → i a` the model is
//! `H = H_t + ω_r a†a + g N (a + a†) + ε_d sin(ω_d t)(a + a†)` with a single
//! collapse operator `√κ a`. Both integrators use Lawson RK4 with the bare
//! diagonal (and the `-κ n/2` damping) as integrating factor.

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::CircuitParams;
use crate::dynamics::DriveProtocol;
use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen, HermitianMatrix, C64};
use crate::transmon::{ChargeOperator, Spectrum};

/// Upper bound on the occupation of the two highest Fock states.
pub const TRUNCATION_OCCUPANCY_TOL: f64 = 1e-4;
/// Default integration steps per drive period.
pub const DEFAULT_STEPS_PER_PERIOD: usize = 128;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Truncation {
    pub n_transmon: usize,
    pub n_photon: usize,
}

impl Truncation {
    pub const DESK: Self = Self {
        n_transmon: 15,
        n_photon: 60,
    };

    /// Smallest photon cutoff that is at least `1.5 n̄_max` and at least `self`.
    pub fn covering(self, n_max: f64) -> Self {
        Self {
            n_transmon: self.n_transmon,
            n_photon: self.n_photon.max((1.5 * n_max).ceil() as usize),
        }
    }

    pub fn dim(&self) -> usize {
        self.n_transmon * self.n_photon
    }
}

/// Sparse real symmetric operator, both triangles stored.
#[derive(Debug, Clone, Default)]
struct Sparse {
    entries: Vec<(usize, usize, f64)>,
}

impl Sparse {
    fn push_sym(&mut self, r: usize, c: usize, v: f64) {
        if v != 0.0 {
            self.entries.push((r, c, v));
            if r != c {
                self.entries.push((c, r, v));
            }
        }
    }

    /// `out += s · A x`.
    fn apply_add(&self, s: f64, x: &[C64], out: &mut [C64]) {
        for &(r, c, v) in &self.entries {
            out[r] += x[c] * (s * v);
        }
    }
}

/// Full model on the truncated product space; index of `|i, n⟩` is
/// `i * n_photon + n`.
#[derive(Debug, Clone)]
pub struct OracleModel {
    pub truncation: Truncation,
    /// Bare diagonal `E_i + ω_r n`.
    pub diagonal: Vec<f64>,
    coupling: Sparse,
    field: Sparse,
    pub kappa: f64,
    pub protocol: DriveProtocol,
    /// Steps per drive period.
    pub steps_per_period: usize,
}

impl OracleModel {
    pub fn new(circuit: &CircuitParams, protocol: &DriveProtocol, truncation: Truncation) -> Result<Self> {
        circuit.validate()?;
        protocol.validate()?;
        let Truncation {
            n_transmon: nt,
            n_photon: np,
        } = truncation;
        if nt < 2 || np < 2 {
            return Err(Error::InvalidParameter(format!(
                "oracle truncation {nt} x {np} is too small"
            )));
        }
        let spec = Spectrum::solve(&circuit.transmon, nt)?;
        let charge = ChargeOperator::new(&spec, circuit.transmon.n_g);
        let e0 = spec.energies[0];
        let mut diagonal = Vec::with_capacity(nt * np);
        for i in 0..nt {
            for n in 0..np {
                diagonal.push(spec.energies[i] - e0 + circuit.omega_r * n as f64);
            }
        }
        let mut coupling = Sparse::default();
        let mut field = Sparse::default();
        for n in 0..np - 1 {
            let s = ((n + 1) as f64).sqrt();
            for i in 0..nt {
                for j in 0..nt {
                    let nij = charge.matrix[(i, j)].re;
                    // ⟨i,n|N a|j,n+1⟩; the transpose supplies N a†.
                    if nij != 0.0 {
                        coupling.entries.push((i * np + n, j * np + n + 1, circuit.g * s * nij));
                        coupling.entries.push((j * np + n + 1, i * np + n, circuit.g * s * nij));
                    }
                }
                field.push_sym(i * np + n, i * np + n + 1, s);
            }
        }
        Ok(Self {
            truncation,
            diagonal,
            coupling,
            field,
            kappa: circuit.kappa,
            protocol: protocol.clone(),
            steps_per_period: DEFAULT_STEPS_PER_PERIOD,
        })
    }

    pub fn dim(&self) -> usize {
        self.diagonal.len()
    }

    fn photons_of(&self, k: usize) -> usize {
        k % self.truncation.n_photon
    }

    fn drive(&self, t: f64) -> f64 {
        if t < self.protocol.t_up {
            self.protocol.eps_d * (self.protocol.omega_d * t).sin()
        } else {
            0.0
        }
    }

    pub fn step_size(&self) -> f64 {
        self.protocol.period() / self.steps_per_period as f64
    }

    /// Static Hamiltonian `H_t + ω_r a†a + g N (a + a†)` as a dense matrix.
    pub fn static_hamiltonian(&self) -> Mat<f64> {
        let d = self.dim();
        let mut h = Mat::<f64>::zeros(d, d);
        for (k, &e) in self.diagonal.iter().enumerate() {
            h[(k, k)] = e;
        }
        for &(r, c, v) in &self.coupling.entries {
            h[(r, c)] += v;
        }
        h
    }

    /// `-i (V(t) x)` for the off-diagonal Hamiltonian part.
    fn off_diagonal(&self, t: f64, x: &[C64], out: &mut [C64]) {
        let mut acc = vec![C64::new(0.0, 0.0); x.len()];
        self.coupling.apply_add(1.0, x, &mut acc);
        let s = self.drive(t);
        if s != 0.0 {
            self.field.apply_add(s, x, &mut acc);
        }
        for (o, a) in out.iter_mut().zip(acc) {
            *o = C64::new(a.im, -a.re);
        }
    }

    /// `a x`.
    fn annihilate(&self, x: &[C64]) -> Vec<C64> {
        let np = self.truncation.n_photon;
        let mut out = vec![C64::new(0.0, 0.0); x.len()];
        for (k, o) in out.iter_mut().enumerate() {
            let n = k % np;
            if n + 1 < np {
                *o = x[k + 1] * ((n + 1) as f64).sqrt();
            }
        }
        out
    }
}

/// One Lawson RK4 step of `y' = λ∘y + f(t, y)`.
fn lawson_step(lambda_half: &[C64], y: &mut [C64], t: f64, h: f64, f: &dyn Fn(f64, &[C64], &mut [C64])) {
    let n = y.len();
    let e: &[C64] = lambda_half;
    let mut k1 = vec![C64::new(0.0, 0.0); n];
    let mut k2 = k1.clone();
    let mut k3 = k1.clone();
    let mut k4 = k1.clone();
    let mut tmp = k1.clone();
    f(t, y, &mut k1);
    for i in 0..n {
        tmp[i] = e[i] * (y[i] + k1[i] * (0.5 * h));
    }
    f(t + 0.5 * h, &tmp, &mut k2);
    for i in 0..n {
        tmp[i] = e[i] * y[i] + k2[i] * (0.5 * h);
    }
    f(t + 0.5 * h, &tmp, &mut k3);
    for i in 0..n {
        tmp[i] = e[i] * e[i] * y[i] + e[i] * k3[i] * h;
    }
    f(t + h, &tmp, &mut k4);
    for i in 0..n {
        let e2 = e[i] * e[i];
        y[i] = e2 * y[i] + (e2 * k1[i] + e[i] * (k2[i] + k3[i]) * 2.0 + k4[i]) * (h / 6.0);
    }
}

/// Qubit-like quantum branch: dressed eigenstates of the static model reached
/// from the state closest to `|i, 0⟩` by repeated application of `a†`,
/// each time keeping the eigenstate of largest overlap.
#[derive(Debug, Clone)]
pub struct QuantumBranch {
    pub initial: usize,
    /// Dressed eigenvectors, one per photon number.
    pub states: Vec<Vec<C64>>,
    pub energies: Vec<f64>,
}

impl QuantumBranch {
    pub fn new(model: &OracleModel, initial: usize) -> Result<Self> {
        let np = model.truncation.n_photon;
        if initial >= model.truncation.n_transmon {
            return Err(Error::IndexOutOfRange {
                index: initial,
                len: model.truncation.n_transmon,
            });
        }
        let d = model.dim();
        let eig = hermitian_eigen(&HermitianMatrix::from_real_symmetric(&model.static_hamiltonian())?, d)?;
        let col = |k: usize| -> Vec<C64> { (0..d).map(|r| eig.vectors[(r, k)]).collect() };
        let best = |v: &[C64], used: &[usize]| -> usize {
            (0..d)
                .filter(|k| !used.contains(k))
                .map(|k| {
                    let o: C64 = (0..d).map(|r| eig.vectors[(r, k)].conj() * v[r]).sum();
                    (k, o.norm_sqr())
                })
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .map_or(0, |x| x.0)
        };
        let mut bare = vec![C64::new(0.0, 0.0); d];
        bare[initial * np] = C64::new(1.0, 0.0);
        let mut used = vec![best(&bare, &[])];
        // Stop below the cutoff, where a† is truncated.
        for _ in 1..np - 1 {
            let prev = col(*used.last().expect("non-empty"));
            let mut up = vec![C64::new(0.0, 0.0); d];
            for (k, u) in up.iter_mut().enumerate() {
                let n = k % np;
                if n > 0 {
                    *u = prev[k - 1] * (n as f64).sqrt();
                }
            }
            used.push(best(&up, &used));
        }
        Ok(Self {
            initial,
            energies: used.iter().map(|&k| eig.values[k]).collect(),
            states: used.iter().map(|&k| col(k)).collect(),
        })
    }

    pub fn ground_state(&self) -> &[C64] {
        &self.states[0]
    }

    /// Weight of a normalized or unnormalized state in the branch.
    pub fn survival(&self, psi: &[C64]) -> f64 {
        let norm: f64 = psi.iter().map(|c| c.norm_sqr()).sum();
        let p: f64 = self
            .states
            .iter()
            .map(|s| s.iter().zip(psi).map(|(a, b)| a.conj() * b).sum::<C64>().norm_sqr())
            .sum();
        p / norm
    }

    pub fn survival_density(&self, rho: &[C64], d: usize) -> f64 {
        let mut p = 0.0;
        for s in &self.states {
            for r in 0..d {
                for c in 0..d {
                    p += (s[r].conj() * rho[r * d + c] * s[c]).re;
                }
            }
        }
        p
    }
}

/// Ensemble-averaged observables at the sample times.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryEnsemble {
    pub n_traj: usize,
    pub seed: u64,
    pub truncation: Truncation,
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub survival_error: Vec<f64>,
    pub photons: Vec<f64>,
    pub photons_error: Vec<f64>,
    /// Total photon-number variance across the ensemble.
    pub photon_variance: Vec<f64>,
    /// `transmon_populations[t][j]`.
    pub transmon_populations: Vec<Vec<f64>>,
    pub transmon_populations_error: Vec<Vec<f64>>,
    pub jumps: Vec<usize>,
    /// Largest top-two Fock occupancy seen.
    pub max_edge_occupancy: f64,
    pub projector: String,
}

/// Observables of one trajectory at each sample.
struct TrajectoryRecord {
    survival: Vec<f64>,
    photons: Vec<f64>,
    photons_sq: Vec<f64>,
    populations: Vec<Vec<f64>>,
    jumps: usize,
    edge: f64,
}

struct Observables {
    survival: f64,
    photons: f64,
    photons_sq: f64,
    populations: Vec<f64>,
    edge: f64,
}

fn observe(model: &OracleModel, branch: &QuantumBranch, psi: &[C64]) -> Observables {
    let Truncation {
        n_transmon: nt,
        n_photon: np,
    } = model.truncation;
    let norm: f64 = psi.iter().map(|c| c.norm_sqr()).sum();
    let mut photons = 0.0;
    let mut photons_sq = 0.0;
    let mut populations = vec![0.0; nt];
    let mut edge = 0.0;
    for (k, c) in psi.iter().enumerate() {
        let p = c.norm_sqr() / norm;
        let n = (k % np) as f64;
        photons += n * p;
        photons_sq += n * n * p;
        populations[k / np] += p;
        if k % np + 2 >= np {
            edge += p;
        }
    }
    Observables {
        survival: branch.survival(psi),
        photons,
        photons_sq,
        populations,
        edge,
    }
}

fn sample_schedule(model: &OracleModel, sample_every: f64) -> (usize, usize, f64) {
    let h = model.step_size();
    let total = (model.protocol.t_final / h).round() as usize;
    let stride = ((sample_every / h).round() as usize).max(1);
    (total, stride, h)
}

fn run_trajectory(model: &OracleModel, branch: &QuantumBranch, psi0: &[C64], rng: &mut ChaCha8Rng, sample_every: f64) -> TrajectoryRecord {
    let (total, stride, h) = sample_schedule(model, sample_every);
    let lambda_half: Vec<C64> = (0..model.dim())
        .map(|k| {
            let n = model.photons_of(k) as f64;
            (C64::new(-0.5 * model.kappa * n, -model.diagonal[k]) * (0.5 * h)).exp()
        })
        .collect();
    let f = |t: f64, x: &[C64], out: &mut [C64]| model.off_diagonal(t, x, out);
    let mut psi = psi0.to_vec();
    let mut threshold: f64 = rng.gen();
    let mut rec = TrajectoryRecord {
        survival: Vec::new(),
        photons: Vec::new(),
        photons_sq: Vec::new(),
        populations: Vec::new(),
        jumps: 0,
        edge: 0.0,
    };
    let push = |psi: &[C64], rec: &mut TrajectoryRecord| {
        let o = observe(model, branch, psi);
        rec.survival.push(o.survival);
        rec.photons.push(o.photons);
        rec.photons_sq.push(o.photons_sq);
        rec.populations.push(o.populations);
        rec.edge = rec.edge.max(o.edge);
    };
    push(&psi, &mut rec);
    for step in 0..total {
        let t = step as f64 * h;
        lawson_step(&lambda_half, &mut psi, t, h, &f);
        let norm: f64 = psi.iter().map(|c| c.norm_sqr()).sum();
        if norm < threshold {
            let jumped = model.annihilate(&psi);
            let jn: f64 = jumped.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            if jn > 0.0 {
                psi = jumped.into_iter().map(|c| c / jn).collect();
                rec.jumps += 1;
            }
            threshold = rng.gen();
        }
        if (step + 1) % stride == 0 {
            push(&psi, &mut rec);
        }
    }
    rec
}

fn mean_and_error(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Jump-unraveled evolution of `n_traj` trajectories from the dressed
/// `|initial, 0⟩` state.
pub fn evolve_trajectories(
    circuit: &CircuitParams,
    protocol: &DriveProtocol,
    n_traj: usize,
    truncation: Truncation,
    seed: u64,
    sample_every: f64,
) -> Result<TrajectoryEnsemble> {
    let model = OracleModel::new(circuit, protocol, truncation)?;
    evolve_model(&model, n_traj, seed, sample_every)
}

pub fn evolve_model(model: &OracleModel, n_traj: usize, seed: u64, sample_every: f64) -> Result<TrajectoryEnsemble> {
    if n_traj == 0 {
        return Err(Error::InvalidParameter("need at least one trajectory".into()));
    }
    let branch = QuantumBranch::new(model, model.protocol.initial)?;
    let psi0 = branch.ground_state().to_vec();
    let records: Vec<TrajectoryRecord> = (0..n_traj)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            run_trajectory(model, &branch, &psi0, &mut rng, sample_every)
        })
        .collect();
    let max_edge = records.iter().map(|r| r.edge).fold(0.0, f64::max);
    if max_edge > TRUNCATION_OCCUPANCY_TOL {
        return Err(Error::PhotonTruncation { occupancy: max_edge });
    }
    let (_, stride, h) = sample_schedule(model, sample_every);
    let n_samples = records[0].survival.len();
    let nt = model.truncation.n_transmon;
    let mut ens = TrajectoryEnsemble {
        n_traj,
        seed,
        truncation: model.truncation,
        times: (0..n_samples).map(|s| (s * stride) as f64 * h).collect(),
        survival: Vec::with_capacity(n_samples),
        survival_error: Vec::with_capacity(n_samples),
        photons: Vec::with_capacity(n_samples),
        photons_error: Vec::with_capacity(n_samples),
        photon_variance: Vec::with_capacity(n_samples),
        transmon_populations: Vec::with_capacity(n_samples),
        transmon_populations_error: Vec::with_capacity(n_samples),
        jumps: records.iter().map(|r| r.jumps).collect(),
        max_edge_occupancy: max_edge,
        projector: "quantum branch: dressed eigenstates reached from |i,0> by a-dagger ladder".into(),
    };
    for s in 0..n_samples {
        let (m, e) = mean_and_error(records.iter().map(|r| r.survival[s]), n_traj);
        ens.survival.push(m);
        ens.survival_error.push(e);
        let (m, e) = mean_and_error(records.iter().map(|r| r.photons[s]), n_traj);
        ens.photons.push(m);
        ens.photons_error.push(e);
        let second = records.iter().map(|r| r.photons_sq[s]).sum::<f64>() / n_traj as f64;
        ens.photon_variance.push(second - m * m);
        let (pm, pe): (Vec<f64>, Vec<f64>) = (0..nt)
            .map(|j| mean_and_error(records.iter().map(|r| r.populations[s][j]), n_traj))
            .unzip();
        ens.transmon_populations.push(pm);
        ens.transmon_populations_error.push(pe);
    }
    Ok(ens)
}

/// Branch survival with its Monte-Carlo error.
pub fn branch_survival(ensemble: &TrajectoryEnsemble) -> Vec<(f64, f64, f64)> {
    ensemble
        .times
        .iter()
        .zip(&ensemble.survival)
        .zip(&ensemble.survival_error)
        .map(|((&t, &s), &e)| (t, s, e))
        .collect()
}

/// Observables of the direct density-matrix integration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityEvolution {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub photons: Vec<f64>,
    pub transmon_populations: Vec<Vec<f64>>,
    pub trace_defect: f64,
}

/// Direct Lindblad integration, for small truncations.
pub fn evolve_density_matrix(model: &OracleModel, sample_every: f64) -> Result<DensityEvolution> {
    let d = model.dim();
    if d > 400 {
        return Err(Error::InvalidParameter(format!(
            "density-matrix reference limited to dimension 400, got {d}"
        )));
    }
    let branch = QuantumBranch::new(model, model.protocol.initial)?;
    let psi0 = branch.ground_state();
    let (total, stride, h) = sample_schedule(model, sample_every);
    let mut rho: Vec<C64> = (0..d * d).map(|k| psi0[k / d] * psi0[k % d].conj()).collect();
    let lambda_half: Vec<C64> = (0..d * d)
        .map(|k| {
            let (r, c) = (k / d, k % d);
            let nr = model.photons_of(r) as f64;
            let nc = model.photons_of(c) as f64;
            (C64::new(-0.5 * model.kappa * (nr + nc), -(model.diagonal[r] - model.diagonal[c])) * (0.5 * h)).exp()
        })
        .collect();
    let np = model.truncation.n_photon;
    let kappa = model.kappa;
    // -i[V, ρ] + κ a ρ a†.
    let f = |t: f64, x: &[C64], out: &mut [C64]| {
        let s = model.drive(t);
        out.iter_mut().for_each(|o| *o = C64::new(0.0, 0.0));
        let mut add = |op: &Sparse, scale: f64| {
            for &(r, c, v) in &op.entries {
                let w = v * scale;
                // (Vρ)[r, :] += w ρ[c, :]; (ρV)[:, c] += w ρ[:, r].
                for q in 0..d {
                    let a = x[c * d + q] * w;
                    out[r * d + q] += C64::new(a.im, -a.re);
                    let b = x[q * d + r] * w;
                    out[q * d + c] -= C64::new(b.im, -b.re);
                }
            }
        };
        add(&model.coupling, 1.0);
        if s != 0.0 {
            add(&model.field, s);
        }
        for r in 0..d {
            if r % np + 1 >= np {
                continue;
            }
            let sr = ((r % np + 1) as f64).sqrt();
            for c in 0..d {
                if c % np + 1 >= np {
                    continue;
                }
                let sc = ((c % np + 1) as f64).sqrt();
                out[r * d + c] += x[(r + 1) * d + c + 1] * (kappa * sr * sc);
            }
        }
    };
    let nt = model.truncation.n_transmon;
    let mut ev = DensityEvolution {
        times: Vec::new(),
        survival: Vec::new(),
        photons: Vec::new(),
        transmon_populations: Vec::new(),
        trace_defect: 0.0,
    };
    let push = |rho: &[C64], t: f64, ev: &mut DensityEvolution| {
        let mut photons = 0.0;
        let mut pops = vec![0.0; nt];
        let mut trace = 0.0;
        for k in 0..d {
            let p = rho[k * d + k].re;
            trace += p;
            photons += p * (k % np) as f64;
            pops[k / np] += p;
        }
        ev.times.push(t);
        ev.survival.push(branch.survival_density(rho, d));
        ev.photons.push(photons);
        ev.transmon_populations.push(pops);
        ev.trace_defect = ev.trace_defect.max((trace - 1.0).abs());
    };
    push(&rho, 0.0, &mut ev);
    for step in 0..total {
        lawson_step(&lambda_half, &mut rho, step as f64 * h, h, &f);
        if (step + 1) % stride == 0 {
            push(&rho, (step + 1) as f64 * h, &mut ev);
        }
    }
    Ok(ev)
}
