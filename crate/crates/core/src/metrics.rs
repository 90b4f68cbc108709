//! Fidelities of the spectator and of the effective three-qubit gate, the
//! phases the spectator accumulates, and the diagonal circuit that removes
//! them.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_1_SQRT_2, PI, TAU};
use std::fmt;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{propagate_batch, IntegratorConfig};
use crate::error::{Error, Result};
use crate::hilbert::{basis_index, AtomChain, Level, Operator, StateVector, SystemParams, FULL_DIM};
use crate::pulses::ProtocolSpec;

/// Gate-atom input states in the order used throughout.
pub const GATE_STATES: [&str; 4] = ["00", "01", "10", "11"];

fn bit_level(b: usize) -> Level {
    if b == 0 {
        Level::Q0
    } else {
        Level::Q1
    }
}

/// 27-dim index of the qubit basis state with bits `b₁b₂b₃` (`q = 4b₁ + 2b₂ + b₃`).
pub fn qubit_index(q: usize) -> usize {
    basis_index(&[bit_level(q >> 2 & 1), bit_level(q >> 1 & 1), bit_level(q & 1)])
}

/// Index of a two-letter gate state such as `"01"`.
pub fn gate_state_bits(label: &str) -> Result<usize> {
    GATE_STATES
        .iter()
        .position(|&s| s == label)
        .ok_or_else(|| Error::InvalidParameter(format!("unknown gate state {label:?}")))
}

/// `(|0⟩ + |1⟩)/√2` on the spectator, gate atoms in `|b₁b₂⟩`.
pub fn gate_state_input(gate_bits: usize) -> StateVector {
    let mut amps = vec![C64::new(0.0, 0.0); FULL_DIM];
    for b3 in 0..2 {
        amps[qubit_index(gate_bits << 1 | b3)] = C64::new(FRAC_1_SQRT_2, 0.0);
    }
    StateVector::from_amplitudes(amps).unwrap()
}

/// All three atoms in `(|0⟩ + |1⟩)/√2`.
pub fn superposition_input() -> StateVector {
    let p = StateVector::plus();
    p.tensor(&p).tensor(&p)
}

/// `Ψ_t = ½(|00⟩ + |01⟩ + |10⟩ − |11⟩) ⊗ (|0⟩ + |1⟩)/√2`.
pub fn ideal_target() -> StateVector {
    let mut amps = vec![C64::new(0.0, 0.0); FULL_DIM];
    for q in 0..8 {
        let sign = if q >> 1 == 3 { -1.0 } else { 1.0 };
        amps[qubit_index(q)] = C64::new(sign * 0.5 * FRAC_1_SQRT_2, 0.0);
    }
    StateVector::from_amplitudes(amps).unwrap()
}

/// CZ applied to `|b₁b₂⟩ ⊗ (|0⟩ + |1⟩)/√2`.
fn ideal_for_gate_state(gate_bits: usize) -> StateVector {
    let mut s = gate_state_input(gate_bits);
    if gate_bits == 3 {
        for a in s.amplitudes_mut() {
            *a = -*a;
        }
    }
    s
}

/// Removes the calibrated single-qubit phase: `e^{−iφ}` for each gate atom in `|1⟩`.
pub fn apply_virtual_z(psi: &StateVector, phi: f64) -> StateVector {
    assert_eq!(psi.dim(), FULL_DIM, "virtual Z acts on the three-atom space");
    let mut out = psi.clone();
    for (i, a) in out.amplitudes_mut().iter_mut().enumerate() {
        let ones = [i / 9, (i / 3) % 3].iter().filter(|&&l| l == Level::Q1.index()).count();
        if ones > 0 {
            *a *= C64::from_polar(1.0, -phi * ones as f64);
        }
    }
    out
}

/// F₃ = |⟨Ψ₀|ψ⟩|² for the spectator. Accepts a single-atom state, or a
/// three-atom state whose gate atoms are projected onto `|00⟩`.
pub fn third_atom_fidelity(psi: &StateVector) -> Result<f64> {
    let plus = StateVector::plus();
    match psi.dim() {
        3 => Ok(plus.inner(psi).norm_sqr()),
        FULL_DIM => {
            let amps = psi.amplitudes();
            let reduced = StateVector::from_amplitudes(amps[..3].to_vec())?;
            Ok(plus.inner(&reduced).norm_sqr())
        }
        d => Err(Error::InvalidParameter(format!("expected a 3- or 27-dim state, got {d}"))),
    }
}

/// `|⟨Ψ_t|ψ⟩|²` after removing the gate atoms' single-qubit phase `phi`.
pub fn three_qubit_fidelity(psi: &StateVector, phi: f64) -> f64 {
    ideal_target().inner(&apply_virtual_z(psi, phi)).norm_sqr()
}

/// Final states of the eight computational basis inputs; any qubit-space
/// input then follows by linearity.
#[derive(Clone, Debug)]
pub struct QubitEvolution {
    finals: Vec<StateVector>,
    pub norm_drift: f64,
    pub error_estimate: f64,
}

impl QubitEvolution {
    pub fn new(params: &SystemParams, spec: &ProtocolSpec, cfg: &IntegratorConfig) -> Result<Self> {
        params.validate()?;
        let inputs: Vec<StateVector> = (0..8)
            .map(|q| {
                let mut amps = vec![C64::new(0.0, 0.0); FULL_DIM];
                amps[qubit_index(q)] = C64::new(1.0, 0.0);
                StateVector::from_amplitudes(amps).unwrap()
            })
            .collect();
        let runs = propagate_batch(&AtomChain::full(params), params.omega0, &inputs, spec, &cfg.endpoints_only())?;
        let norm_drift = runs.iter().map(|r| r.norm_drift).fold(0.0, f64::max);
        let error_estimate = runs.iter().map(|r| r.error_estimate).fold(0.0, f64::max);
        Ok(QubitEvolution { finals: runs.iter().map(|r| r.final_state().clone()).collect(), norm_drift, error_estimate })
    }

    /// Final state of the basis input `q = 4b₁ + 2b₂ + b₃`.
    pub fn basis_final(&self, q: usize) -> &StateVector {
        &self.finals[q]
    }

    /// `⟨out|U|in⟩` between qubit basis states.
    pub fn element(&self, out: usize, input: usize) -> C64 {
        self.finals[input].amplitudes()[qubit_index(out)]
    }

    /// Final state for an input supported on the qubit subspace.
    pub fn evolve(&self, psi0: &StateVector) -> StateVector {
        let mut amps = vec![C64::new(0.0, 0.0); FULL_DIM];
        for q in 0..8 {
            let c = psi0.amplitudes()[qubit_index(q)];
            if c == C64::new(0.0, 0.0) {
                continue;
            }
            for (o, a) in amps.iter_mut().zip(self.finals[q].amplitudes()) {
                *o += c * a;
            }
        }
        StateVector::from_amplitudes(amps).unwrap()
    }
}

/// Fidelities of one protocol run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    /// Spectator fidelity with the gate atoms in `|00⟩`.
    pub f3: f64,
    /// Three-qubit gate fidelity with every atom in `(|0⟩ + |1⟩)/√2`.
    pub f_three_qubit: f64,
    /// Three-qubit infidelity for each gate input, spectator in `(|0⟩ + |1⟩)/√2`.
    pub per_initial_state: BTreeMap<String, f64>,
}

/// Fidelities after the virtual Z and, optionally, a phase correction.
pub fn fidelity_report(evolution: &QubitEvolution, phi: f64, correction: Option<&PhaseCorrection>) -> FidelityReport {
    let finish = |psi0: &StateVector| {
        let out = apply_virtual_z(&evolution.evolve(psi0), phi);
        match correction {
            Some(c) => c.apply(&out),
            None => out,
        }
    };
    let mut per_initial_state = BTreeMap::new();
    let mut f3 = 0.0;
    for (g, label) in GATE_STATES.iter().enumerate() {
        let out = finish(&gate_state_input(g));
        let f = ideal_for_gate_state(g).inner(&out).norm_sqr();
        if g == 0 {
            f3 = third_atom_fidelity(&out).unwrap();
        }
        per_initial_state.insert(label.to_string(), (1.0 - f).max(0.0));
    }
    let f_three_qubit = ideal_target().inner(&finish(&superposition_input())).norm_sqr();
    FidelityReport { f3, f_three_qubit, per_initial_state }
}

/// Reduce to (−π, π].
pub fn wrap_phase(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Spectator-induced phases and the circuit phases that undo them.
///
/// `phi*` are the phases of `|001⟩`, `|011⟩`, `|101⟩`, `|111⟩` relative to
/// their spectator-`|0⟩` partners after the virtual Z. The correction
/// applies `−(varphi1 + varphi2_13·b₁ + varphi2·b₂ + varphi3·b₁b₂)` to
/// states with the spectator in `|1⟩`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSet {
    pub phi1: f64,
    /// From `|011⟩` (pair 2–3).
    pub phi2: f64,
    /// From `|101⟩` (pair 1–3); equals `phi2` for a symmetric arrangement.
    pub phi2_13: f64,
    pub phi3: f64,
    pub varphi1: f64,
    pub varphi2: f64,
    pub varphi2_13: f64,
    pub varphi3: f64,
    /// Whether the pair 1–3 phase was taken from `|011⟩` (V₁₃ = V₂₃).
    pub symmetric: bool,
}

impl PhaseSet {
    /// Circuit phases for measured phases; `phi2_13 = None` uses `phi2` for both pairs.
    pub fn from_phases(phi1: f64, phi2: f64, phi2_13: Option<f64>, phi3: f64) -> Self {
        let symmetric = phi2_13.is_none();
        let p13 = phi2_13.unwrap_or(phi2);
        PhaseSet {
            phi1: wrap_phase(phi1),
            phi2: wrap_phase(phi2),
            phi2_13: wrap_phase(p13),
            phi3: wrap_phase(phi3),
            varphi1: wrap_phase(phi1),
            varphi2: wrap_phase(phi2 - phi1),
            varphi2_13: wrap_phase(p13 - phi1),
            varphi3: wrap_phase(phi3 + phi1 - phi2 - p13),
            symmetric,
        }
    }

    /// Phases reproduced by the circuit phases, in the order `|001⟩, |011⟩, |101⟩, |111⟩`.
    pub fn reconstruct(&self) -> [f64; 4] {
        [
            wrap_phase(self.varphi1),
            wrap_phase(self.varphi1 + self.varphi2),
            wrap_phase(self.varphi1 + self.varphi2_13),
            wrap_phase(self.varphi1 + self.varphi2 + self.varphi2_13 + self.varphi3),
        ]
    }
}

impl fmt::Display for PhaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "phi1    = {:+.6e}   varphi1    = {:+.6e}", self.phi1, self.varphi1)?;
        writeln!(f, "phi2    = {:+.6e}   varphi2    = {:+.6e}", self.phi2, self.varphi2)?;
        writeln!(f, "phi2_13 = {:+.6e}   varphi2_13 = {:+.6e}", self.phi2_13, self.varphi2_13)?;
        write!(f, "phi3    = {:+.6e}   varphi3    = {:+.6e}", self.phi3, self.varphi3)
    }
}

fn diagonal_phase(evolution: &QubitEvolution, phi: f64, q: usize) -> Result<f64> {
    let out = apply_virtual_z(evolution.basis_final(q), phi);
    let a = out.amplitudes()[qubit_index(q)];
    if a.norm() < 0.5 {
        return Err(Error::IllDefinedPhase {
            state: crate::hilbert::basis_label(qubit_index(q), 3),
            amplitude: a.norm(),
        });
    }
    Ok(a.arg())
}

/// Phases of `|g1⟩` relative to `|g0⟩` for every gate state `g`.
pub fn phases_from_evolution(evolution: &QubitEvolution, phi: f64, symmetric: bool) -> Result<PhaseSet> {
    let mut rel = [0.0; 4];
    for (g, r) in rel.iter_mut().enumerate() {
        *r = diagonal_phase(evolution, phi, g << 1 | 1)? - diagonal_phase(evolution, phi, g << 1)?;
    }
    let [p001, p011, p101, p111] = rel;
    Ok(PhaseSet::from_phases(p001, p011, if symmetric { None } else { Some(p101) }, p111))
}

/// Propagate the qubit basis and extract the spectator phases. `phi` is
/// the gate atoms' single-qubit phase for this protocol.
pub fn extract_phases(params: &SystemParams, spec: &ProtocolSpec, phi: f64, cfg: &IntegratorConfig) -> Result<PhaseSet> {
    let evolution = QubitEvolution::new(params, spec, cfg)?;
    phases_from_evolution(&evolution, phi, params.v13 == params.v23)
}

/// Diagonal phase-cancellation circuit on the qubit subspace.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseCorrection {
    /// Diagonal entries indexed by `q = 4b₁ + 2b₂ + b₃`.
    pub diagonal: [C64; 8],
}

pub fn correction_unitary(phases: &PhaseSet) -> PhaseCorrection {
    let mut diagonal = [C64::new(1.0, 0.0); 8];
    for (q, d) in diagonal.iter_mut().enumerate() {
        if q & 1 == 0 {
            continue;
        }
        let (b1, b2) = ((q >> 2 & 1) as f64, (q >> 1 & 1) as f64);
        let angle = phases.varphi1 + phases.varphi2_13 * b1 + phases.varphi2 * b2 + phases.varphi3 * b1 * b2;
        *d = C64::from_polar(1.0, -angle);
    }
    PhaseCorrection { diagonal }
}

impl PhaseCorrection {
    /// Apply to a three-atom state; components outside the qubit subspace are untouched.
    pub fn apply(&self, psi: &StateVector) -> StateVector {
        let mut out = psi.clone();
        let amps = out.amplitudes_mut();
        for (q, d) in self.diagonal.iter().enumerate() {
            amps[qubit_index(q)] *= d;
        }
        out
    }

    /// The correction as an 8×8 operator.
    pub fn to_operator(&self) -> Operator {
        let mut op = Operator::zeros(8);
        for (q, d) in self.diagonal.iter().enumerate() {
            op[(q, q)] = *d;
        }
        op
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Level::*;

    #[test]
    fn qubit_indices() {
        assert_eq!(qubit_index(0), 0);
        assert_eq!(qubit_index(1), basis_index(&[Q0, Q0, Q1]));
        assert_eq!(qubit_index(6), basis_index(&[Q1, Q1, Q0]));
        assert_eq!(gate_state_bits("10").unwrap(), 2);
        assert!(gate_state_bits("1r").is_err());
    }

    #[test]
    fn third_atom_fidelity_values() {
        assert!((third_atom_fidelity(&StateVector::plus()).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(third_atom_fidelity(&StateVector::basis(&[Ryd])).unwrap(), 0.0);
        let full = StateVector::basis(&[Q0, Q0]).tensor(&StateVector::plus());
        assert!((third_atom_fidelity(&full).unwrap() - 1.0).abs() < 1e-15);
        assert!(third_atom_fidelity(&StateVector::basis(&[Q0, Q0])).is_err());
    }

    #[test]
    fn ideal_target_is_normalized_and_scored_one() {
        let t = ideal_target();
        assert!((t.norm_sqr() - 1.0).abs() < 1e-15);
        assert!((three_qubit_fidelity(&t, 0.0) - 1.0).abs() < 1e-15);
        // a CZ with single-qubit phase φ is recognized once φ is removed
        let phi = 0.7;
        let mut s = t.clone();
        for q in 0..8 {
            let ones = (q >> 2 & 1) + (q >> 1 & 1);
            s.amplitudes_mut()[qubit_index(q)] *= C64::from_polar(1.0, phi * ones as f64);
        }
        assert!((three_qubit_fidelity(&s, phi) - 1.0).abs() < 1e-14);
        assert!(three_qubit_fidelity(&s, 0.0) < 0.9);
    }

    #[test]
    fn phase_round_trip() {
        let ps = PhaseSet::from_phases(0.1, -0.3, None, 0.25);
        let r = ps.reconstruct();
        assert!((r[0] - 0.1).abs() < 1e-15 && (r[1] + 0.3).abs() < 1e-15);
        assert!((r[2] - r[1]).abs() < 1e-15 && (r[3] - 0.25).abs() < 1e-15);
        let asym = PhaseSet::from_phases(0.1, -0.3, Some(0.4), 3.0);
        let r = asym.reconstruct();
        assert!((r[2] - 0.4).abs() < 1e-15 && (r[3] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn correction_inverts_phases() {
        let ps = PhaseSet::from_phases(0.2, 0.5, Some(-0.1), -2.0);
        let corr = correction_unitary(&ps);
        let measured = [0.2, 0.5, -0.1, -2.0];
        for (k, q) in [1, 3, 5, 7].into_iter().enumerate() {
            let z = corr.diagonal[q] * C64::from_polar(1.0, measured[k]);
            assert!((z - C64::new(1.0, 0.0)).norm() < 1e-14);
        }
        for q in [0, 2, 4, 6] {
            assert_eq!(corr.diagonal[q], C64::new(1.0, 0.0));
        }
        let zero = correction_unitary(&PhaseSet::from_phases(0.0, 0.0, None, 0.0));
        assert!(zero.to_operator().max_abs_diff(&Operator::identity(8)) < 1e-15);
    }

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_phase(PI), PI);
        assert!((wrap_phase(-PI) - PI).abs() < 1e-15);
        assert!((wrap_phase(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn virtual_z_phases() {
        let s = StateVector::basis(&[Q1, Q1, Q1]);
        let out = apply_virtual_z(&s, 0.3);
        assert!((out.amp(&[Q1, Q1, Q1]) - C64::from_polar(1.0, -0.6)).norm() < 1e-15);
        let r = StateVector::basis(&[Ryd, Q1, Q0]);
        assert!((apply_virtual_z(&r, 0.3).amp(&[Ryd, Q1, Q0]) - C64::from_polar(1.0, -0.3)).norm() < 1e-15);
    }
}
