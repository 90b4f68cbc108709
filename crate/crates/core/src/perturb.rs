//! Dyson expansion of the spectator's propagator to second order in √ε.
//!
//! With `a(t) = Ω(t)/Ω₀ · e^{−iφ(t)}` and `G(t) = ∫₀ᵗ a`, the expansion
//! coefficients (√ε and ε factored out) are
//!
//! ```text
//! ⟨r|U|1⟩ ≈ −(i/2) G(t_f)
//! ⟨1|U|1⟩ ≈ 1 − (1/4) ∫ a*(t) G(t) dt
//! ⟨r|U|r⟩ ≈ 1 − (1/4) ∫ a(t) G*(t) dt
//! ```
//!
//! so the time-ordered double integrals collapse onto one cumulative
//! quadrature. Every node value of `G` and `φ` is itself computed by
//! Gauss–Legendre on the sub-interval from the panel start.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pulses::{phase_jump_unreduced, ProtocolSpec, PulseParams};
use crate::quadrature::GaussLegendre;

const RULE_POINTS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbReport {
    /// ⟨r|U|1⟩ per unit √ε.
    pub first_order_ryd_amp: C64,
    /// β: phase of ⟨1|U|1⟩ is βε to leading order.
    pub second_order_phase: f64,
    /// α: Rydberg population is αε to leading order.
    pub alpha: f64,
    /// arg of the Rydberg amplitude.
    pub ryd_phase: f64,
    /// c = β²/4 in 1 − F₃ = cε² when the first order vanishes.
    pub predicted_infid_coeff: f64,
    pub coeff_11: C64,
    pub coeff_rr: C64,
}

impl PerturbReport {
    /// Leading third-atom infidelity for the spectator in (|0⟩+|1⟩)/√2:
    /// `(α/2)ε + (β²/4)ε²`.
    pub fn third_infidelity(&self, epsilon: f64) -> f64 {
        0.5 * self.alpha * epsilon + self.predicted_infid_coeff * epsilon * epsilon
    }
}

/// Node tables of `a` and `G` on the protocol's quadrature panels.
struct Cumulative {
    /// (weight, a, G) at every node.
    nodes: Vec<(f64, C64, C64)>,
    total: C64,
}

impl Cumulative {
    fn new(spec: &ProtocolSpec) -> Result<Self> {
        spec.validate()?;
        let rule = GaussLegendre::new(RULE_POINTS);
        let bounds = spec.quadrature_bounds(0.0, spec.total_duration());
        let detuning = |t: f64| spec.drive_at(t).1;
        // φ(y) − φ(l) and a(y) given φ(l)
        let phase_from = |l: f64, y: f64| rule.integrate(l, y, detuning);
        let a_at = |y: f64, phi: f64| spec.drive_at(y).0 * C64::from_polar(1.0, -phi);

        let mut nodes = Vec::with_capacity((bounds.len() - 1) * RULE_POINTS);
        let (mut phi_l, mut g_l) = (0.0, C64::new(0.0, 0.0));
        for w in bounds.windows(2) {
            let (l, u) = (w[0], w[1]);
            for (x, wx) in rule.mapped(l, u) {
                let ax = a_at(x, phi_l + phase_from(l, x));
                let gx = g_l
                    + rule.mapped(l, x).map(|(y, wy)| wy * a_at(y, phi_l + phase_from(l, y))).sum::<C64>();
                nodes.push((wx, ax, gx));
            }
            g_l += rule.mapped(l, u).map(|(y, wy)| wy * a_at(y, phi_l + phase_from(l, y))).sum::<C64>();
            phi_l += phase_from(l, u);
        }
        Ok(Cumulative { nodes, total: g_l })
    }
}

/// −(i/2) ∫ Ω(t)/Ω₀ e^{−iφ(t)} dt over the whole protocol.
pub fn first_order_amplitude(spec: &ProtocolSpec) -> Result<C64> {
    Ok(C64::new(0.0, -0.5) * Cumulative::new(spec)?.total)
}

/// `(coeff_rr, coeff_11)` of the second-order term.
pub fn second_order_elements(spec: &ProtocolSpec) -> Result<(C64, C64)> {
    let c = Cumulative::new(spec)?;
    Ok(second_order_from(&c))
}

fn second_order_from(c: &Cumulative) -> (C64, C64) {
    let (mut rr, mut oo) = (C64::new(0.0, 0.0), C64::new(0.0, 0.0));
    for &(w, a, g) in &c.nodes {
        rr += w * a * g.conj();
        oo += w * a.conj() * g;
    }
    (rr * -0.25, oo * -0.25)
}

pub fn perturb_report(spec: &ProtocolSpec) -> Result<PerturbReport> {
    let c = Cumulative::new(spec)?;
    let amp = C64::new(0.0, -0.5) * c.total;
    let (coeff_rr, coeff_11) = second_order_from(&c);
    let beta = coeff_11.im;
    Ok(PerturbReport {
        first_order_ryd_amp: amp,
        second_order_phase: beta,
        alpha: amp.norm_sqr(),
        ryd_phase: amp.arg(),
        predicted_infid_coeff: 0.25 * beta * beta,
        coeff_11,
        coeff_rr,
    })
}

/// Leading-order 1 − F₃ of the spectator prepared in (|0⟩+|1⟩)/√2.
pub fn predict_third_infidelity(spec: &ProtocolSpec, epsilon: f64) -> Result<f64> {
    if !(0.0..=0.1).contains(&epsilon) {
        return Err(Error::InvalidParameter(format!("epsilon must lie in [0, 0.1], got {epsilon}")));
    }
    if epsilon == 0.0 {
        return Ok(0.0);
    }
    Ok(perturb_report(spec)?.third_infidelity(epsilon))
}

/// The two phase-jump candidates for a double pulse and which one cancels
/// the first-order Rydberg amplitude.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseJumpChoice {
    /// Detuning phase accumulated over one pulse, mod 2π.
    pub theta_accumulated: f64,
    /// The same shifted by π, mod 2π.
    pub theta_shifted: f64,
    pub amp_accumulated: f64,
    pub amp_shifted: f64,
    /// The candidate with the smaller |first-order amplitude|.
    pub selected: f64,
    /// |first-order amplitude| of the single pulse, for reference.
    pub amp_single: f64,
}

pub fn select_phase_jump(pulse: &PulseParams) -> Result<PhaseJumpChoice> {
    let phi = phase_jump_unreduced(pulse)?;
    let theta_accumulated = phi.rem_euclid(TAU);
    let theta_shifted = (phi + PI).rem_euclid(TAU);
    let amp_accumulated = first_order_amplitude(&ProtocolSpec::double(*pulse, theta_accumulated))?.norm();
    let amp_shifted = first_order_amplitude(&ProtocolSpec::double(*pulse, theta_shifted))?.norm();
    let amp_single = first_order_amplitude(&ProtocolSpec::single(*pulse))?.norm();
    let selected = if amp_shifted < amp_accumulated { theta_shifted } else { theta_accumulated };
    Ok(PhaseJumpChoice { theta_accumulated, theta_shifted, amp_accumulated, amp_shifted, selected, amp_single })
}

/// Double protocol with the cancelling phase jump.
pub fn echo_protocol(pulse: &PulseParams) -> Result<ProtocolSpec> {
    Ok(ProtocolSpec::double(*pulse, select_phase_jump(pulse)?.selected))
}
