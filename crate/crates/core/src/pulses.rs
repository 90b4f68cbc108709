//! Pulse ansatz and single/double-pulse protocols.
//!
//! The Rabi envelope is normalized to a peak of 1; the dynamics scale it by
//! Ω₀. Detuning is in units of Ω₀ and time in units of 1/Ω₀.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{self, GaussLegendre};

pub const DEFAULT_RAMP_FRACTION: f64 = 0.15;

/// Gaussian detuning sweep under a flat-top Rabi envelope with sin² ramps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseParams {
    /// Peak detuning of the Gaussian sweep.
    pub delta_amp: f64,
    /// Standard deviation of the Gaussian.
    pub delta_width: f64,
    /// Offset of the Gaussian peak from the pulse midpoint.
    pub delta_center: f64,
    /// Pulse length T.
    pub duration: f64,
    /// Fraction of T spent on each of the ramp-up and ramp-down.
    pub ramp_fraction: f64,
}

impl PulseParams {
    pub fn new(delta_amp: f64, delta_width: f64, delta_center: f64, duration: f64) -> Self {
        PulseParams { delta_amp, delta_width, delta_center, duration, ramp_fraction: DEFAULT_RAMP_FRACTION }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::InvalidParameter(format!("duration must be > 0, got {}", self.duration)));
        }
        if !(self.delta_width > 0.0 && self.delta_width.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "delta_width must be > 0, got {}",
                self.delta_width
            )));
        }
        if !(self.ramp_fraction > 0.0 && self.ramp_fraction < 0.5) {
            return Err(Error::InvalidParameter(format!(
                "ramp_fraction must lie in (0, 0.5), got {}",
                self.ramp_fraction
            )));
        }
        if !(self.delta_amp.is_finite() && self.delta_center.is_finite()) {
            return Err(Error::InvalidParameter("detuning parameters must be finite".into()));
        }
        Ok(())
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.duration).contains(&t) {
            return Err(Error::TimeOutOfRange { t, start: 0.0, end: self.duration });
        }
        Ok(())
    }

    pub fn ramp_time(&self) -> f64 {
        self.ramp_fraction * self.duration
    }

    /// Envelope without domain check; zero outside [0, T].
    pub fn envelope_at(&self, t: f64) -> f64 {
        let tr = self.ramp_time();
        if t <= 0.0 || t >= self.duration {
            0.0
        } else if t < tr {
            (0.5 * PI * t / tr).sin().powi(2)
        } else if t > self.duration - tr {
            (0.5 * PI * (self.duration - t) / tr).sin().powi(2)
        } else {
            1.0
        }
    }

    /// Detuning without domain check.
    pub fn detuning_at(&self, t: f64) -> f64 {
        let x = t - 0.5 * self.duration - self.delta_center;
        self.delta_amp * (-x * x / (2.0 * self.delta_width * self.delta_width)).exp()
    }

    /// Points where the integrands change character: ramp edges and the
    /// Gaussian core.
    fn breakpoints(&self, offset: f64) -> Vec<f64> {
        let tr = self.ramp_time();
        let peak = 0.5 * self.duration + self.delta_center;
        let mut b = vec![offset + tr, offset + self.duration - tr];
        for k in [-8.0, -4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0, 8.0] {
            b.push(offset + peak + k * self.delta_width);
        }
        b
    }
}

/// Normalized Rabi envelope (peak 1 = Ω₀).
pub fn rabi_envelope(p: &PulseParams, t: f64) -> Result<f64> {
    p.check_time(t)?;
    Ok(p.envelope_at(t))
}

/// Gaussian detuning Δ(t).
pub fn detuning(p: &PulseParams, t: f64) -> Result<f64> {
    p.check_time(t)?;
    Ok(p.detuning_at(t))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProtocolKind {
    SinglePulse,
    DoublePulse,
}

/// A single pulse, or two identical pulses back to back with the Rabi
/// phase jumped by `theta` for the second one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSpec {
    pub kind: ProtocolKind,
    pub pulse: PulseParams,
    #[serde(default)]
    pub theta: f64,
}

/// One constant-shape piece of a protocol.
#[derive(Clone, Copy, Debug)]
pub struct Segment {
    pub start: f64,
    pub pulse: PulseParams,
    pub phase: f64,
}

impl Segment {
    pub fn end(&self) -> f64 {
        self.start + self.pulse.duration
    }

    /// Drive at local time `s` within the segment.
    #[inline]
    pub fn drive_local(&self, s: f64) -> (C64, f64) {
        let env = self.pulse.envelope_at(s);
        (C64::from_polar(env, self.phase), self.pulse.detuning_at(s))
    }
}

impl ProtocolSpec {
    pub fn single(pulse: PulseParams) -> Self {
        ProtocolSpec { kind: ProtocolKind::SinglePulse, pulse, theta: 0.0 }
    }

    pub fn double(pulse: PulseParams, theta: f64) -> Self {
        ProtocolSpec { kind: ProtocolKind::DoublePulse, pulse, theta: theta.rem_euclid(TAU) }
    }

    pub fn validate(&self) -> Result<()> {
        self.pulse.validate()?;
        if !self.theta.is_finite() {
            return Err(Error::InvalidParameter("theta must be finite".into()));
        }
        Ok(())
    }

    pub fn total_duration(&self) -> f64 {
        match self.kind {
            ProtocolKind::SinglePulse => self.pulse.duration,
            ProtocolKind::DoublePulse => 2.0 * self.pulse.duration,
        }
    }

    pub fn segments(&self) -> Vec<Segment> {
        let first = Segment { start: 0.0, pulse: self.pulse, phase: 0.0 };
        match self.kind {
            ProtocolKind::SinglePulse => vec![first],
            ProtocolKind::DoublePulse => vec![
                first,
                Segment { start: self.pulse.duration, pulse: self.pulse, phase: self.theta },
            ],
        }
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let end = self.total_duration();
        if !(0.0..=end).contains(&t) {
            return Err(Error::TimeOutOfRange { t, start: 0.0, end });
        }
        Ok(())
    }

    /// Drive without domain check. At the joint `t = T` of a double pulse
    /// the first segment is used (the envelope vanishes there either way).
    #[inline]
    pub fn drive_at(&self, t: f64) -> (C64, f64) {
        let tp = self.pulse.duration;
        match self.kind {
            ProtocolKind::DoublePulse if t > tp => {
                let (env, det) = (self.pulse.envelope_at(t - tp), self.pulse.detuning_at(t - tp));
                (C64::from_polar(env, self.theta), det)
            }
            _ => (C64::new(self.pulse.envelope_at(t), 0.0), self.pulse.detuning_at(t)),
        }
    }

    /// Breakpoints in global time for quadrature panels.
    pub(crate) fn breakpoints(&self) -> Vec<f64> {
        let mut b = Vec::new();
        for seg in self.segments() {
            b.push(seg.start);
            b.push(seg.end());
            b.extend(seg.pulse.breakpoints(seg.start));
        }
        b
    }

    /// Panel boundaries on [a, b] fine enough for integrands oscillating at
    /// the detuning frequency.
    pub(crate) fn quadrature_bounds(&self, a: f64, b: f64) -> Vec<f64> {
        let max_panel = (1.0 / self.pulse.delta_amp.abs().max(1.0)).min(0.5);
        let coarse = quadrature::panels(a, b, &self.breakpoints(), 1);
        let mut out = vec![a];
        for w in coarse.windows(2) {
            let n = ((w[1] - w[0]) / max_panel).ceil().max(1.0) as usize;
            for k in 1..=n {
                out.push(if k == n { w[1] } else { w[0] + (w[1] - w[0]) * k as f64 / n as f64 });
            }
        }
        out
    }
}

/// `(Ω(t)/Ω₀, Δ(t))` with the phase jump applied to the second half.
pub fn protocol_drive(spec: &ProtocolSpec, t: f64) -> Result<(C64, f64)> {
    spec.check_time(t)?;
    Ok(spec.drive_at(t))
}

pub(crate) const PHASE_RULE_POINTS: usize = 20;

/// φ(t, t₀) = ∫ Δ dt′ over [t₀, t].
pub fn accumulated_phase(spec: &ProtocolSpec, t: f64, t0: f64) -> Result<f64> {
    if t0 > t {
        return Err(Error::ReversedLimits { t0, t });
    }
    spec.check_time(t)?;
    spec.check_time(t0)?;
    if t == t0 {
        return Ok(0.0);
    }
    let rule = GaussLegendre::new(PHASE_RULE_POINTS);
    let bounds = quadrature::panels(t0, t, &spec.breakpoints(), 2);
    Ok(quadrature::composite(&rule, &bounds, |s| spec.drive_at(s).1))
}

/// θ = φ(t_f/2, t₀) − φ(t₀, t₀): the detuning phase accumulated over one
/// half of the double protocol, reduced to [0, 2π).
///
/// Whether θ or θ + π actually cancels the spectator's first-order Rydberg
/// amplitude is decided by [`crate::perturb::select_phase_jump`].
pub fn phase_jump_theta(p: &PulseParams) -> Result<f64> {
    Ok(phase_jump_unreduced(p)?.rem_euclid(TAU))
}

/// θ before the mod-2π reduction.
pub fn phase_jump_unreduced(p: &PulseParams) -> Result<f64> {
    p.validate()?;
    accumulated_phase(&ProtocolSpec::single(*p), p.duration, 0.0)
}
