//! Time propagation of `i d|ψ⟩/dt = H(t)|ψ⟩` for the full system and its
//! gate-pair and spectator subsystems.
//!
//! The fixed-step RK4 integrator carries a second solution at twice the step
//! alongside the main one and reports the Richardson estimate
//! `|ψ_h − ψ_2h| / 15` of the global error; a run whose estimate exceeds
//! the configured tolerance is rejected. Norms are never renormalized.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{basis_label, AtomChain, HamiltonianTerms, Operator, StateVector, SystemParams};
use crate::pulses::{ProtocolSpec, Segment};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    FixedRK4,
    AdaptiveRK,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    /// Base time step (initial step for the adaptive method).
    pub step: f64,
    /// Global error bound for fixed RK4, local error per step for adaptive.
    pub tolerance: f64,
    pub method: Method,
    /// Trajectory samples stored per pulse segment.
    #[serde(default = "default_samples")]
    pub samples_per_pulse: usize,
}

fn default_samples() -> usize {
    200
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig { step: 2e-3, tolerance: 1e-8, method: Method::FixedRK4, samples_per_pulse: 200 }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidParameter(format!("step must be > 0, got {}", self.step)));
        }
        if !(self.tolerance > 0.0 && self.tolerance <= 1e-6) {
            return Err(Error::InvalidParameter(format!(
                "tolerance must lie in (0, 1e-6], got {}",
                self.tolerance
            )));
        }
        Ok(())
    }

    pub fn with_step(mut self, step: f64) -> Self {
        self.step = step;
        self
    }

    /// Keep only the initial and final states.
    pub fn endpoints_only(mut self) -> Self {
        self.samples_per_pulse = 0;
        self
    }
}

/// Sampled time evolution of one initial state.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<StateVector>,
    /// Largest `|‖ψ(t)‖² − ‖ψ(0)‖²|` seen at any integration step.
    pub norm_drift: f64,
    /// Estimated global error of the final amplitudes (fixed RK4), or the
    /// sum of accepted local error estimates (adaptive).
    pub error_estimate: f64,
    pub steps: usize,
}

impl Trajectory {
    pub fn final_state(&self) -> &StateVector {
        self.states.last().expect("trajectory holds at least the initial state")
    }

    pub fn initial_state(&self) -> &StateVector {
        &self.states[0]
    }

    /// CSV with `t` followed by `re_<label>, im_<label>` for each tracked basis index.
    pub fn write_csv<W: Write>(&self, tracked: &[usize], mut w: W) -> std::io::Result<()> {
        let n = self.initial_state().n_atoms();
        write!(w, "t")?;
        for &i in tracked {
            let l = basis_label(i, n);
            write!(w, ",re_{l},im_{l}")?;
        }
        writeln!(w)?;
        for (t, s) in self.times.iter().zip(&self.states) {
            write!(w, "{t:.12e}")?;
            for &i in tracked {
                let a = s.amplitudes()[i];
                write!(w, ",{:.12e},{:.12e}", a.re, a.im)?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn export_csv(&self, tracked: &[usize], path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(tracked, std::io::BufWriter::new(f)).map_err(|e| Error::io(path, e))
    }
}

/// Propagate the full three-atom system.
pub fn propagate(
    psi0: &StateVector,
    spec: &ProtocolSpec,
    params: &SystemParams,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    params.validate()?;
    propagate_chain(&AtomChain::full(params), params.omega0, psi0, spec, cfg)
}

/// Propagate the gate atoms alone under H_cz.
pub fn propagate_gate_pair(
    psi0: &StateVector,
    spec: &ProtocolSpec,
    params: &SystemParams,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    params.validate()?;
    propagate_chain(&AtomChain::gate_pair(params.v12), params.omega0, psi0, spec, cfg)
}

/// Propagate the spectator alone under H₃.
pub fn propagate_third_alone(
    psi0: &StateVector,
    spec: &ProtocolSpec,
    params: &SystemParams,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    params.validate()?;
    propagate_chain(&AtomChain::spectator(params.epsilon), params.omega0, psi0, spec, cfg)
}

pub fn propagate_chain(
    chain: &AtomChain,
    omega0: f64,
    psi0: &StateVector,
    spec: &ProtocolSpec,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    let mut out = propagate_batch(chain, omega0, std::slice::from_ref(psi0), spec, cfg)?;
    Ok(out.pop().unwrap())
}

/// Propagate several initial states through the same Hamiltonian, sharing
/// the per-step matrix assembly.
pub fn propagate_batch(
    chain: &AtomChain,
    omega0: f64,
    psi0: &[StateVector],
    spec: &ProtocolSpec,
    cfg: &IntegratorConfig,
) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    spec.validate()?;
    let dim = chain.dim();
    for p in psi0 {
        if p.dim() != dim {
            return Err(Error::InvalidParameter(format!(
                "initial state has dimension {}, system has {dim}",
                p.dim()
            )));
        }
    }
    let terms = HamiltonianTerms::new(chain);
    let integ = Integrator { terms: &terms, omega0, cfg };
    let segments = spec.segments();
    let mut runs: Vec<Run> = psi0.iter().map(Run::new).collect();
    let mut steps = 0;
    for seg in &segments {
        steps += match cfg.method {
            Method::FixedRK4 => integ.fixed_segment(seg, &mut runs),
            Method::AdaptiveRK => integ.adaptive_segment(seg, &mut runs)?,
        };
    }
    runs.into_iter()
        .map(|r| {
            let traj = r.finish(steps);
            if traj.error_estimate > cfg.tolerance {
                return Err(Error::NotConverged { estimate: traj.error_estimate, tolerance: cfg.tolerance });
            }
            Ok(traj)
        })
        .collect()
}

struct Run {
    y: Vec<C64>,
    coarse: Vec<C64>,
    norm0: f64,
    norm_drift: f64,
    error: f64,
    times: Vec<f64>,
    states: Vec<StateVector>,
}

impl Run {
    fn new(psi0: &StateVector) -> Self {
        Run {
            y: psi0.amplitudes().to_vec(),
            coarse: psi0.amplitudes().to_vec(),
            norm0: psi0.norm_sqr(),
            norm_drift: 0.0,
            error: 0.0,
            times: vec![0.0],
            states: vec![psi0.clone()],
        }
    }

    fn track_norm(&mut self) {
        let n: f64 = self.y.iter().map(|a| a.norm_sqr()).sum();
        self.norm_drift = self.norm_drift.max((n - self.norm0).abs());
    }

    fn sample(&mut self, t: f64) {
        if self.times.last().is_some_and(|&last| t <= last) {
            // coincides with the previous sample (segment joint)
            *self.states.last_mut().unwrap() = StateVector::from_amplitudes(self.y.clone()).unwrap();
            return;
        }
        self.times.push(t);
        self.states.push(StateVector::from_amplitudes(self.y.clone()).unwrap());
    }

    fn finish(mut self, steps: usize) -> Trajectory {
        self.track_norm();
        Trajectory {
            times: self.times,
            states: self.states,
            norm_drift: self.norm_drift,
            error_estimate: self.error,
            steps,
        }
    }
}

struct Integrator<'a> {
    terms: &'a HamiltonianTerms,
    omega0: f64,
    cfg: &'a IntegratorConfig,
}

/// `out = −i H y`.
#[inline]
fn deriv(h: &Operator, y: &[C64], out: &mut [C64]) {
    h.apply_into(y, out);
    for o in out.iter_mut() {
        *o = C64::new(o.im, -o.re);
    }
}

/// Scratch buffers for one RK4 step.
struct Rk4Work {
    k1: Vec<C64>,
    k2: Vec<C64>,
    k3: Vec<C64>,
    k4: Vec<C64>,
    tmp: Vec<C64>,
}

impl Rk4Work {
    fn new(dim: usize) -> Self {
        let z = vec![C64::new(0.0, 0.0); dim];
        Rk4Work { k1: z.clone(), k2: z.clone(), k3: z.clone(), k4: z.clone(), tmp: z }
    }

    /// Classical RK4 step with H at the start, midpoint and end.
    fn step(&mut self, y: &mut [C64], h: f64, h0: &Operator, hm: &Operator, h1: &Operator) {
        let n = y.len();
        deriv(h0, y, &mut self.k1);
        for i in 0..n {
            self.tmp[i] = y[i] + self.k1[i] * (0.5 * h);
        }
        deriv(hm, &self.tmp, &mut self.k2);
        for i in 0..n {
            self.tmp[i] = y[i] + self.k2[i] * (0.5 * h);
        }
        deriv(hm, &self.tmp, &mut self.k3);
        for i in 0..n {
            self.tmp[i] = y[i] + self.k3[i] * h;
        }
        deriv(h1, &self.tmp, &mut self.k4);
        for i in 0..n {
            y[i] += (self.k1[i] + (self.k2[i] + self.k3[i]) * 2.0 + self.k4[i]) * (h / 6.0);
        }
    }
}

impl Integrator<'_> {
    fn hamiltonian(&self, seg: &Segment, s: f64, out: &mut Operator) {
        let (w, d) = seg.drive_local(s);
        self.terms.assemble_into(w * self.omega0, d * self.omega0, out);
    }

    fn sample_stride(&self, n_steps: usize) -> usize {
        if self.cfg.samples_per_pulse == 0 {
            usize::MAX
        } else {
            (n_steps / self.cfg.samples_per_pulse).max(1)
        }
    }

    fn fixed_segment(&self, seg: &Segment, runs: &mut [Run]) -> usize {
        let dim = self.terms.dim();
        let len = seg.pulse.duration;
        // even step count so the coarse solution lands on the segment end
        let mut n = (len / self.cfg.step).ceil() as usize;
        n += n % 2;
        n = n.max(2);
        let h = len / n as f64;
        let stride = self.sample_stride(n);

        let (mut h_start, mut h_half, mut h_mid, mut h_3q, mut h_end) = (
            Operator::zeros(dim),
            Operator::zeros(dim),
            Operator::zeros(dim),
            Operator::zeros(dim),
            Operator::zeros(dim),
        );
        let mut work = Rk4Work::new(dim);
        let mut coarse_work = Rk4Work::new(dim);
        for r in runs.iter_mut() {
            r.coarse.copy_from_slice(&r.y);
        }
        self.hamiltonian(seg, 0.0, &mut h_start);
        for pair in 0..n / 2 {
            let s0 = (2 * pair) as f64 * h;
            self.hamiltonian(seg, s0 + 0.5 * h, &mut h_half);
            self.hamiltonian(seg, s0 + h, &mut h_mid);
            self.hamiltonian(seg, s0 + 1.5 * h, &mut h_3q);
            let s2 = if 2 * pair + 2 == n { len } else { s0 + 2.0 * h };
            self.hamiltonian(seg, s2, &mut h_end);
            for r in runs.iter_mut() {
                work.step(&mut r.y, h, &h_start, &h_half, &h_mid);
                r.track_norm();
                if (2 * pair + 1) % stride == 0 {
                    r.sample(seg.start + s0 + h);
                }
                work.step(&mut r.y, h, &h_mid, &h_3q, &h_end);
                r.track_norm();
                coarse_work.step(&mut r.coarse, 2.0 * h, &h_start, &h_mid, &h_end);
                if (2 * pair + 2) % stride == 0 || 2 * pair + 2 == n {
                    r.sample(if 2 * pair + 2 == n { seg.end() } else { seg.start + s2 });
                }
            }
            std::mem::swap(&mut h_start, &mut h_end);
        }
        for r in runs.iter_mut() {
            // Richardson: error of the fine solution ≈ |y_h − y_2h| / (2⁴ − 1)
            let diff = r.y.iter().zip(&r.coarse).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            r.error += diff / 15.0;
            let end = *r.times.last().unwrap();
            if end < seg.end() {
                r.sample(seg.end());
            }
        }
        n
    }

    /// Dormand–Prince 5(4) with local error control on the max-norm.
    fn adaptive_segment(&self, seg: &Segment, runs: &mut [Run]) -> Result<usize> {
        const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
        const A: [[f64; 6]; 7] = [
            [0.0; 6],
            [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
            [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
            [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
            [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
            [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
        ];
        const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
        const B4: [f64; 7] = [
            5179.0 / 57600.0,
            0.0,
            7571.0 / 16695.0,
            393.0 / 640.0,
            -92097.0 / 339200.0,
            187.0 / 2100.0,
            1.0 / 40.0,
        ];

        let dim = self.terms.dim();
        let len = seg.pulse.duration;
        let tol = self.cfg.tolerance;
        let n_samples = self.cfg.samples_per_pulse;
        let sample_times: Vec<f64> =
            (1..=n_samples.max(1)).map(|k| len * k as f64 / n_samples.max(1) as f64).collect();
        let mut next_sample = 0;

        let mut hmat: Vec<Operator> = (0..7).map(|_| Operator::zeros(dim)).collect();
        let mut k: Vec<Vec<Vec<C64>>> = runs.iter().map(|_| vec![vec![C64::new(0.0, 0.0); dim]; 7]).collect();
        let mut tmp = vec![C64::new(0.0, 0.0); dim];
        let mut trial: Vec<Vec<C64>> = runs.iter().map(|_| vec![C64::new(0.0, 0.0); dim]).collect();
        let mut s = 0.0;
        let mut h = self.cfg.step.min(len);
        let mut steps = 0;
        let mut rejects = 0usize;
        while s < len {
            let target = sample_times.get(next_sample).copied().unwrap_or(len);
            let h_try = h.min(target - s);
            for (stage, m) in hmat.iter_mut().enumerate() {
                self.hamiltonian(seg, (s + C[stage] * h_try).min(len), m);
            }
            let mut err = 0.0f64;
            for (ri, r) in runs.iter().enumerate() {
                let ks = &mut k[ri];
                for stage in 0..7 {
                    for i in 0..dim {
                        let mut acc = r.y[i];
                        for (j, kj) in ks.iter().enumerate().take(stage) {
                            acc += kj[i] * (A[stage][j] * h_try);
                        }
                        tmp[i] = acc;
                    }
                    deriv(&hmat[stage], &tmp, &mut ks[stage]);
                }
                for i in 0..dim {
                    let mut y5 = r.y[i];
                    let mut e = C64::new(0.0, 0.0);
                    for stage in 0..7 {
                        y5 += ks[stage][i] * (B5[stage] * h_try);
                        e += ks[stage][i] * ((B5[stage] - B4[stage]) * h_try);
                    }
                    trial[ri][i] = y5;
                    err = err.max(e.norm());
                }
            }
            if err <= tol {
                s += h_try;
                steps += 1;
                let at_sample = (s - target).abs() < 1e-12 * len.max(1.0);
                if at_sample {
                    s = target;
                    next_sample += 1;
                }
                for (ri, r) in runs.iter_mut().enumerate() {
                    r.y.copy_from_slice(&trial[ri]);
                    r.error += err;
                    r.track_norm();
                    if at_sample && (n_samples > 0 || s >= len) {
                        r.sample(seg.start + s);
                    }
                }
            } else {
                rejects += 1;
                if rejects > 100_000 || h_try < 1e-12 {
                    return Err(Error::NotConverged { estimate: err, tolerance: tol });
                }
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * (tol / err).powf(0.2)).clamp(0.2, 5.0) };
            h = (h_try * factor).max(1e-12);
        }
        // the sum of local errors is a diagnostic here, not a global bound
        for r in runs.iter_mut() {
            r.error = 0.0;
        }
        Ok(steps)
    }
}
