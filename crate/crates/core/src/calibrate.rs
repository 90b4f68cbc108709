//! Calibration of the Gaussian detuning so that a pulse realizes a
//! controlled-phase gate on the two gate atoms.
//!
//! For a gate with conditional phase χ the ideal map is
//! `|01⟩ → e^{iφ}|01⟩`, `|11⟩ → e^{i(2φ−χ)}|11⟩` with a free single-qubit
//! phase φ. The objective is one minus the normalized trace overlap of the
//! simulated and ideal gates on the qubit block, maximized over φ:
//!
//! `1 − max_φ |1 + 2c₀₁e^{−iφ} + c₁₁e^{−i(2φ−χ)}|² / 16`.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{propagate_batch, IntegratorConfig};
use crate::error::{Error, Result};
use crate::hilbert::{AtomChain, Level, StateVector};
use crate::optimize::{brent, nelder_mead, NelderMeadOptions};
use crate::pulses::{ProtocolSpec, PulseParams, DEFAULT_RAMP_FRACTION};

/// Objective threshold below which a calibration counts as converged.
pub const CONVERGED_INFIDELITY: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateTarget {
    /// Conditional phase χ; π for CZ.
    pub conditional_phase: f64,
}

impl GateTarget {
    pub fn cz() -> Self {
        GateTarget { conditional_phase: PI }
    }

    pub fn controlled_half_pi() -> Self {
        GateTarget { conditional_phase: PI / 2.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.conditional_phase > 0.0 && self.conditional_phase < TAU) {
            return Err(Error::InvalidParameter(format!(
                "conditional phase must lie in (0, 2π), got {}",
                self.conditional_phase
            )));
        }
        Ok(())
    }
}

/// Overlap `|1 + 2c₀₁e^{−iφ} + c₁₁e^{−i(2φ−χ)}|² / 16` for a given φ.
pub fn gate_overlap(c01: C64, c11: C64, chi: f64, phi: f64) -> f64 {
    let z = C64::from_polar(1.0, -phi);
    (C64::new(1.0, 0.0) + 2.0 * c01 * z + c11 * C64::from_polar(1.0, chi) * z * z).norm_sqr() / 16.0
}

/// The φ ∈ [0, 2π) maximizing [`gate_overlap`], with the maximal overlap.
pub fn best_single_qubit_phase(c01: C64, c11: C64, chi: f64) -> (f64, f64) {
    const GRID: usize = 64;
    let h = TAU / GRID as f64;
    let start = (0..GRID)
        .map(|k| k as f64 * h)
        .max_by(|&a, &b| gate_overlap(c01, c11, chi, a).total_cmp(&gate_overlap(c01, c11, chi, b)))
        .unwrap();
    let (phi, neg) = brent(|p| -gate_overlap(c01, c11, chi, p), start - h, start + h, 1e-12);
    (phi.rem_euclid(TAU), -neg)
}

/// Final amplitudes `(⟨01|ψ⟩, ⟨11|ψ⟩)` after running `spec` on `|01⟩` and `|11⟩`.
pub fn gate_amplitudes(spec: &ProtocolSpec, v12: f64, cfg: &IntegratorConfig) -> Result<(C64, C64)> {
    use Level::*;
    let cfg = cfg.endpoints_only();
    let states = [StateVector::basis(&[Q0, Q1]), StateVector::basis(&[Q1, Q1])];
    let out = propagate_batch(&AtomChain::gate_pair(v12), 1.0, &states, spec, &cfg)?;
    Ok((out[0].final_state().amp(&[Q0, Q1]), out[1].final_state().amp(&[Q1, Q1])))
}

/// Infidelity of `spec` with respect to the controlled-phase target, plus
/// the optimal single-qubit phase.
pub fn protocol_gate_error(
    spec: &ProtocolSpec,
    target: &GateTarget,
    v12: f64,
    cfg: &IntegratorConfig,
) -> Result<(f64, f64)> {
    let (c01, c11) = gate_amplitudes(spec, v12, cfg)?;
    let (phi, overlap) = best_single_qubit_phase(c01, c11, target.conditional_phase);
    Ok(((1.0 - overlap).max(0.0), phi))
}

/// Gate objective of a single pulse.
pub fn gate_fidelity_objective(
    pulse: &PulseParams,
    target: &GateTarget,
    v12: f64,
    cfg: &IntegratorConfig,
) -> Result<f64> {
    if !(v12 > 0.0) {
        return Err(Error::InvalidParameter(format!("v12 must be > 0, got {v12}")));
    }
    target.validate()?;
    Ok(protocol_gate_error(&ProtocolSpec::single(*pulse), target, v12, cfg)?.0)
}

/// Starting points `(delta_amp, delta_width, delta_center)` for the multi-start search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedGrid {
    pub seeds: Vec<[f64; 3]>,
}

impl SeedGrid {
    /// Log-spaced amplitudes and widths (both detuning signs), linear centers.
    pub fn log_spaced(
        amp: (f64, f64, usize),
        width: (f64, f64, usize),
        center: (f64, f64, usize),
        both_signs: bool,
    ) -> Self {
        let logs = |(lo, hi, n): (f64, f64, usize)| -> Vec<f64> {
            if n <= 1 {
                return vec![(lo * hi).sqrt()];
            }
            (0..n).map(|k| lo * (hi / lo).powf(k as f64 / (n - 1) as f64)).collect()
        };
        let lin = |(lo, hi, n): (f64, f64, usize)| -> Vec<f64> {
            if n <= 1 {
                return vec![0.5 * (lo + hi)];
            }
            (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
        };
        let mut amps = logs(amp);
        if both_signs {
            amps = amps.iter().flat_map(|&a| [a, -a]).collect();
        }
        let mut seeds = Vec::new();
        for &a in &amps {
            for &w in &logs(width) {
                for &c in &lin(center) {
                    seeds.push([a, w, c]);
                }
            }
        }
        SeedGrid { seeds }
    }
}

/// Conventions and search settings for [`calibrate_pulse`]. Missing
/// fields in a config file take their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationSettings {
    /// Pulse duration T, and the starting point when it is optimized.
    pub duration: f64,
    /// Let the optimizer adjust T within `duration_bounds`.
    pub optimize_duration: bool,
    pub duration_bounds: (f64, f64),
    pub ramp_fraction: f64,
    pub seeds: SeedGrid,
    /// Number of best-screened seeds refined by Nelder–Mead.
    pub refine_starts: usize,
    pub max_evals: usize,
    /// Integrator used inside the search.
    pub search_integrator: IntegratorConfig,
    /// Integrator used for the final, reported objective.
    pub integrator: IntegratorConfig,
}

/// Default pulse duration (units of 1/Ω₀).
pub const DEFAULT_DURATION: f64 = 19.5;
pub const DEFAULT_DURATION_BOUNDS: (f64, f64) = (18.0, 26.0);

impl Default for CalibrationSettings {
    fn default() -> Self {
        let t = DEFAULT_DURATION;
        CalibrationSettings::new(
            t,
            SeedGrid::log_spaced((0.3, 9.0, 12), (0.03 * t, 0.6 * t, 10), (0.0, 0.0, 1), true),
        )
    }
}

impl CalibrationSettings {
    pub fn new(duration: f64, seeds: SeedGrid) -> Self {
        CalibrationSettings {
            duration,
            optimize_duration: true,
            duration_bounds: DEFAULT_DURATION_BOUNDS,
            ramp_fraction: DEFAULT_RAMP_FRACTION,
            seeds,
            refine_starts: 6,
            max_evals: 2000,
            search_integrator: IntegratorConfig { step: 5e-3, tolerance: 1e-6, ..IntegratorConfig::default() }
                .endpoints_only(),
            integrator: IntegratorConfig::default(),
        }
    }

    /// Fixed duration `duration`, no T search.
    pub fn fixed_duration(mut self, duration: f64) -> Self {
        self.duration = duration;
        self.optimize_duration = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.seeds.is_empty() {
            return Err(Error::InvalidParameter("empty seed grid".into()));
        }
        if self.refine_starts == 0 {
            return Err(Error::InvalidParameter("refine_starts must be ≥ 1".into()));
        }
        let (lo, hi) = self.duration_bounds;
        if self.optimize_duration && !(lo > 0.0 && lo <= self.duration && self.duration <= hi) {
            return Err(Error::InvalidParameter(format!(
                "duration {} outside bounds [{lo}, {hi}]",
                self.duration
            )));
        }
        self.search_integrator.validate()?;
        self.integrator.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub target: GateTarget,
    pub v12: f64,
    pub pulse: PulseParams,
    /// Single-qubit phase φ of the realized gate.
    pub single_qubit_phase: f64,
    pub gate_infidelity: f64,
    pub converged: bool,
    pub evaluations: usize,
}

impl CalibrationResult {
    pub fn protocol(&self) -> ProtocolSpec {
        ProtocolSpec::single(self.pulse)
    }
}

/// Screen every seed, then refine the best few with Nelder–Mead over
/// `(delta_amp, ln delta_width, delta_center[, T])`. Several distinct
/// pulses usually reach the target; the shortest one is returned.
pub fn calibrate_pulse(target: &GateTarget, v12: f64, settings: &CalibrationSettings) -> Result<CalibrationResult> {
    target.validate()?;
    if !(v12 > 0.0) {
        return Err(Error::InvalidParameter(format!("v12 must be > 0, got {v12}")));
    }
    settings.validate()?;
    let (t_lo, t_hi) = settings.duration_bounds;
    let make = |x: &[f64]| PulseParams {
        delta_amp: x[0],
        delta_width: x[1].exp(),
        delta_center: x[2],
        duration: if settings.optimize_duration { x[3] } else { settings.duration },
        ramp_fraction: settings.ramp_fraction,
    };
    let objective = |x: &[f64]| -> f64 {
        let p = make(x);
        if p.validate().is_err() || (settings.optimize_duration && !(t_lo..=t_hi).contains(&p.duration)) {
            return 1.0;
        }
        match protocol_gate_error(&ProtocolSpec::single(p), target, v12, &settings.search_integrator) {
            Ok((e, _)) => e,
            Err(_) => 1.0,
        }
    };
    let start = |s: &[f64; 3]| {
        let mut x = vec![s[0], s[1].ln(), s[2]];
        if settings.optimize_duration {
            x.push(settings.duration);
        }
        x
    };

    // indexed collects keep the outcome independent of thread scheduling
    let mut screened: Vec<(f64, Vec<f64>)> = settings
        .seeds
        .seeds
        .par_iter()
        .map(|s| {
            let x = start(s);
            (objective(&x), x)
        })
        .collect();
    screened.sort_by(|a, b| a.0.total_cmp(&b.0));
    screened.truncate(settings.refine_starts);

    let opts = NelderMeadOptions { initial_step: 0.05, xatol: 1e-10, fatol: 1e-14, max_evals: settings.max_evals };
    let runs: Vec<_> = screened.par_iter().map(|(_, x)| nelder_mead(objective, x, &opts)).collect();
    let evaluations = settings.seeds.seeds.len() + runs.iter().map(|m| m.evals).sum::<usize>();
    // among starts that clearly reached the target, the shortest gate wins
    let duration_of = |x: &[f64]| make(x).duration;
    let best = runs
        .iter()
        .filter(|m| m.f <= 0.1 * CONVERGED_INFIDELITY)
        .min_by(|a, b| duration_of(&a.x).total_cmp(&duration_of(&b.x)).then(a.f.total_cmp(&b.f)))
        .or_else(|| runs.iter().min_by(|a, b| a.f.total_cmp(&b.f)))
        .unwrap();
    let pulse = make(&best.x);
    let (gate_infidelity, phi) =
        protocol_gate_error(&ProtocolSpec::single(pulse), target, v12, &settings.integrator)?;
    if gate_infidelity > CONVERGED_INFIDELITY {
        return Err(Error::CalibrationFailed {
            best_infidelity: gate_infidelity,
            starts: settings.refine_starts,
            best_pulse: Box::new(pulse),
        });
    }
    Ok(CalibrationResult {
        target: *target,
        v12,
        pulse,
        single_qubit_phase: phi,
        gate_infidelity,
        converged: true,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_gate_has_zero_objective() {
        for chi in [PI, PI / 2.0] {
            let phi_hat = 0.83;
            let c01 = C64::from_polar(1.0, phi_hat);
            let c11 = C64::from_polar(1.0, 2.0 * phi_hat - chi);
            let (phi, ov) = best_single_qubit_phase(c01, c11, chi);
            assert!((1.0 - ov).abs() < 1e-12);
            assert!((phi - phi_hat).abs() < 1e-6);
        }
    }

    #[test]
    fn identity_is_not_cz() {
        let one = C64::new(1.0, 0.0);
        let (_, ov) = best_single_qubit_phase(one, one, PI);
        // brute force over a fine φ grid as an independent check
        let brute = (0..100_000)
            .map(|k| gate_overlap(one, one, PI, TAU * k as f64 / 100_000.0))
            .fold(0.0, f64::max);
        assert!((ov - brute).abs() < 1e-9);
        assert!(1.0 - ov > 0.1);
    }

    #[test]
    fn gauge_invariance() {
        let c01 = C64::from_polar(0.97, 0.4);
        let c11 = C64::from_polar(0.91, -1.3);
        let (_, base) = best_single_qubit_phase(c01, c11, PI);
        for delta in [0.3, 1.7, -2.2] {
            let (_, shifted) = best_single_qubit_phase(
                c01 * C64::from_polar(1.0, delta),
                c11 * C64::from_polar(1.0, 2.0 * delta),
                PI,
            );
            assert!((base - shifted).abs() < 1e-10);
        }
    }

    #[test]
    fn leakage_raises_objective() {
        let chi = PI;
        for (a, b) in [(0.99, 1.0), (1.0, 0.98), (0.95, 0.9)] {
            let c01 = C64::from_polar(a, 0.2);
            let c11 = C64::from_polar(b, 0.4 - chi);
            let (_, ov) = best_single_qubit_phase(c01, c11, chi);
            let bound = (2.0 * (1.0 - a * a) + (1.0 - b * b)) / 16.0;
            assert!(1.0 - ov >= bound * 0.999, "objective {} bound {}", 1.0 - ov, bound);
        }
    }

    #[test]
    fn target_validation() {
        assert!(GateTarget { conditional_phase: 0.0 }.validate().is_err());
        assert!(GateTarget::cz().validate().is_ok());
    }

    #[test]
    fn seed_grid_shape() {
        let g = SeedGrid::log_spaced((0.5, 5.0, 2), (0.5, 4.0, 2), (-1.0, 1.0, 1), true);
        assert_eq!(g.seeds.len(), 8);
        assert!(g.seeds.iter().any(|s| s[0] < 0.0));
    }

    #[test]
    fn too_short_pulse_does_not_converge() {
        let seeds = SeedGrid::log_spaced((0.5, 5.0, 2), (0.005, 0.04, 1), (0.0, 0.0, 1), false);
        let mut settings = CalibrationSettings::new(0.1, seeds).fixed_duration(0.1);
        settings.max_evals = 150;
        settings.search_integrator = settings.search_integrator.with_step(1e-4);
        settings.integrator = settings.integrator.with_step(1e-4);
        let err = calibrate_pulse(&GateTarget::cz(), 21.1, &settings).unwrap_err();
        assert!(matches!(err, Error::CalibrationFailed { .. }), "{err:?}");
    }
}
