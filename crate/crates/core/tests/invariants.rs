//! Structural invariants of the propagator, calibration and sweep runner,
//! using a fixed pair of calibrated pulses so no calibration runs here.

use crosstalk::calibrate::{calibrate_pulse, protocol_gate_error, CalibrationSettings, GateTarget, SeedGrid};
use crosstalk::dynamics::{propagate, propagate_gate_pair, propagate_third_alone, IntegratorConfig};
use crosstalk::hilbert::{Level, StateVector, SystemParams, V12_REFERENCE};
use crosstalk::metrics::{extract_phases, fidelity_report, QubitEvolution};
use crosstalk::perturb::{perturb_report, select_phase_jump};
use crosstalk::pulses::{ProtocolKind, ProtocolSpec, PulseParams};
use crosstalk::sweeps::{
    evaluate_point, run_epsilon_sweep, run_vdw_sweep, CalibratedPulses, ExperimentConfig, PreparedProtocol,
    SweepAxis, SweepVariable,
};
use crosstalk::Error;

fn cz_pulse() -> PulseParams {
    PulseParams::new(1.059995, 2.682046, 0.0, 19.343102)
}

fn half_pulse() -> PulseParams {
    PulseParams::new(-2.522084, 0.529781, 0.0, 19.103603)
}

fn double() -> ProtocolSpec {
    ProtocolSpec::double(half_pulse(), select_phase_jump(&half_pulse()).unwrap().selected)
}

fn coarse() -> IntegratorConfig {
    IntegratorConfig { tolerance: 1e-6, ..IntegratorConfig::default().with_step(5e-3).endpoints_only() }
}

#[test]
fn gate_state_00_factorizes() {
    use Level::*;
    let params = SystemParams::symmetric(V12_REFERENCE, 0.02);
    let cfg = IntegratorConfig::default().endpoints_only();
    let spec = double();
    let plus = StateVector::plus();
    let pair0 = StateVector::basis(&[Q0, Q0]);
    let full = propagate(&pair0.tensor(&plus), &spec, &params, &cfg).unwrap();
    let pair = propagate_gate_pair(&pair0, &spec, &params, &cfg).unwrap();
    let third = propagate_third_alone(&plus, &spec, &params, &cfg).unwrap();
    let product = pair.final_state().tensor(third.final_state());
    assert!(full.final_state().max_abs_diff(&product) < 1e-8);
}

#[test]
fn blockade_keeps_double_rydberg_small() {
    use Level::*;
    let params = SystemParams::symmetric(V12_REFERENCE, 0.0);
    for spec in [ProtocolSpec::single(cz_pulse()), double()] {
        let t = propagate_gate_pair(&StateVector::basis(&[Q1, Q1]), &spec, &params, &IntegratorConfig::default())
            .unwrap();
        let worst = t.states.iter().map(|s| s.amp(&[Ryd, Ryd]).norm_sqr()).fold(0.0, f64::max);
        assert!(worst < 0.05, "{worst}");
    }
}

#[test]
fn rk4_error_is_fourth_order() {
    use Level::*;
    let params = SystemParams::symmetric(V12_REFERENCE, 0.0);
    let spec = ProtocolSpec::single(cz_pulse());
    let psi0 = StateVector::basis(&[Q1, Q1]);
    let run = |h: f64| {
        let cfg = IntegratorConfig { tolerance: 1e-6, ..IntegratorConfig::default().with_step(h).endpoints_only() };
        propagate_gate_pair(&psi0, &spec, &params, &cfg).unwrap().final_state().clone()
    };
    let (a, b, c) = (run(8e-3), run(4e-3), run(2e-3));
    let ratio = a.max_abs_diff(&b) / b.max_abs_diff(&c);
    assert!((12.0..20.0).contains(&ratio), "{ratio}");
}

#[test]
fn calibration_is_bit_stable() {
    let settings = CalibrationSettings {
        refine_starts: 2,
        max_evals: 40,
        search_integrator: coarse(),
        integrator: coarse(),
        ..CalibrationSettings::new(19.5, SeedGrid::log_spaced((1.0, 3.0, 2), (0.5, 2.0, 2), (0.0, 0.0, 1), true))
            .fixed_duration(19.5)
    };
    let run = || match calibrate_pulse(&GateTarget::cz(), V12_REFERENCE, &settings) {
        Ok(r) => (r.gate_infidelity, r.pulse),
        Err(Error::CalibrationFailed { best_infidelity, best_pulse, .. }) => (best_infidelity, *best_pulse),
        Err(e) => panic!("{e}"),
    };
    let (f1, p1) = run();
    let (f2, p2) = run();
    assert_eq!(f1.to_bits(), f2.to_bits());
    assert_eq!(p1, p2);
}

#[test]
fn small_eps_phase_matches_oracle() {
    // at ε = 1e-4 the higher orders are well below the 5% level
    let spec = double();
    let (_, phi) = protocol_gate_error(&spec, &GateTarget::cz(), V12_REFERENCE, &IntegratorConfig::default()).unwrap();
    let eps = 1e-4;
    let phases = extract_phases(&SystemParams::symmetric(V12_REFERENCE, eps), &spec, phi, &IntegratorConfig::default())
        .unwrap();
    let beta = perturb_report(&spec).unwrap().second_order_phase;
    // the spectator phase enters as e^{iβε} on ⟨1|, i.e. relative to |0⟩
    assert!((phases.phi1 / (eps * beta) - 1.0).abs() < 0.05, "{} vs {}", phases.phi1, eps * beta);
}

#[test]
fn oracle_at_1e5() {
    let spec = ProtocolSpec::single(cz_pulse());
    let r = perturb_report(&spec).unwrap();
    let eps = 1e-5;
    let t = propagate_third_alone(
        &StateVector::basis(&[Level::Q1]),
        &spec,
        &SystemParams::symmetric(V12_REFERENCE, eps),
        &IntegratorConfig::default(),
    )
    .unwrap();
    let f = t.final_state();
    assert!((f.amp(&[Level::Ryd]).norm_sqr() / (eps * r.alpha) - 1.0).abs() < 0.01);
    assert!((f.amp(&[Level::Q1]).arg() / (eps * r.second_order_phase) - 1.0).abs() < 0.02);
}

#[test]
fn factorized_fidelity_bounded_by_components() {
    let spec = double();
    let cfg = IntegratorConfig::default();
    let (_, phi) = protocol_gate_error(&spec, &GateTarget::cz(), V12_REFERENCE, &cfg).unwrap();
    for eps in [0.0, 0.03] {
        let ev = QubitEvolution::new(&SystemParams::symmetric(V12_REFERENCE, eps), &spec, &cfg).unwrap();
        let r = fidelity_report(&ev, phi, None);
        // gate atoms in |00⟩ evolve on their own: F = F_pair · F₃ ≤ F₃
        let f00 = 1.0 - r.per_initial_state["00"];
        assert!(f00 <= r.f3 + 1e-12, "{f00} > {}", r.f3);
        assert!(r.f_three_qubit <= 1.0 + 1e-12);
    }
    let ev = QubitEvolution::new(&SystemParams::symmetric(V12_REFERENCE, 0.0), &spec, &cfg).unwrap();
    assert!((fidelity_report(&ev, phi, None).f3 - 1.0).abs() < 1e-9);
}

fn fake_pulses() -> CalibratedPulses {
    use crosstalk::calibrate::CalibrationResult;
    let result = |chi: f64, pulse| CalibrationResult {
        target: GateTarget { conditional_phase: chi },
        v12: V12_REFERENCE,
        pulse,
        single_qubit_phase: 0.0,
        gate_infidelity: 0.0,
        converged: true,
        evaluations: 0,
    };
    CalibratedPulses {
        cz: result(std::f64::consts::PI, cz_pulse()),
        half: result(std::f64::consts::FRAC_PI_2, half_pulse()),
        phase_jump: select_phase_jump(&half_pulse()).unwrap(),
    }
}

#[test]
fn sweep_points_are_independent_and_consistent() {
    let pulses = fake_pulses();
    let cfg = ExperimentConfig { integrator: coarse(), ..ExperimentConfig::default() };
    let prot = PreparedProtocol::new(ProtocolKind::DoublePulse, &pulses, V12_REFERENCE, &cfg.integrator).unwrap();
    let points = [cfg.system.with_epsilon(1e-3), cfg.system.with_epsilon(2e-2)];
    let forward: Vec<_> = points.iter().map(|p| evaluate_point(p, &prot, &cfg.integrator, true).unwrap()).collect();
    let backward: Vec<_> =
        points.iter().rev().map(|p| evaluate_point(p, &prot, &cfg.integrator, true).unwrap()).collect();
    for (a, b) in forward.iter().zip(backward.iter().rev()) {
        assert_eq!(a.infidelity, b.infidelity);
        assert_eq!(a.corrected, b.corrected);
    }

    let eps = cfg.system.epsilon;
    let eps_cfg = ExperimentConfig { sweep: SweepAxis { variable: SweepVariable::Epsilon, grid: vec![eps] }, ..cfg.clone() };
    let vdw_cfg = ExperimentConfig {
        sweep: SweepAxis { variable: SweepVariable::VSym, grid: vec![cfg.system.v13] },
        ..cfg.clone()
    };
    let a = run_epsilon_sweep(&eps_cfg, &pulses).unwrap();
    let b = run_vdw_sweep(&vdw_cfg, &pulses).unwrap();
    assert_eq!(a, b);
}

#[test]
fn ill_defined_phase_leaves_corrected_cell_empty() {
    // strong crosstalk drives the single-pulse spectator far out of |1⟩
    let pulses = fake_pulses();
    let cfg = ExperimentConfig { integrator: coarse(), ..ExperimentConfig::default() };
    let prot = PreparedProtocol::new(ProtocolKind::SinglePulse, &pulses, V12_REFERENCE, &cfg.integrator).unwrap();
    let r = evaluate_point(&cfg.system.with_epsilon(0.1), &prot, &cfg.integrator, true).unwrap();
    assert!(r.corrected.is_none());
    assert!(r.infidelity.iter().all(|x| x.is_finite()));
}
