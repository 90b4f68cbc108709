//! End-to-end acceptance checks. Each test prints one PASS/FAIL line on
//! stdout (uncaptured) and then asserts. Calibration and the sweeps are
//! computed once and shared.

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use num_complex::Complex64 as C64;

use crosstalk::calibrate::{protocol_gate_error, GateTarget};
use crosstalk::dynamics::{propagate, propagate_third_alone, IntegratorConfig};
use crosstalk::hilbert::{build_hamiltonian, Level, StateVector, SystemParams, V12_REFERENCE};
use crosstalk::metrics::{correction_unitary, fidelity_report, superposition_input, PhaseSet, QubitEvolution};
use crosstalk::perturb::perturb_report;
use crosstalk::pulses::ProtocolKind;
use crosstalk::sweeps::{
    default_epsilon_grid, default_vdw_grid, fixed_power_coefficient, loglog_fit, run_epsilon_sweep, run_vdw_sweep,
    series, slope_crossing, summarize_vdw, CalibratedPulses, CorrectionKind, ExperimentConfig, InitialState,
    PreparedProtocol, SweepAxis, SweepRecord, SweepVariable,
};

// criterion 1
const GATE_OBJECTIVE_MAX: f64 = 1e-5;
const COMPOSED_CZ_MAX: f64 = 1e-4;
const CALIBRATION_SECONDS_MAX: f64 = 300.0;
// criterion 2
const FIT_WINDOW: (f64, f64) = (3e-3, 3e-2);
const SLOPE_TOL: f64 = 0.05;
const CROSSOVER_RANGE: (f64, f64) = (3e-4, 3e-3);
const CROSSOVER_LEVEL: f64 = 1.5;
// criterion 3
const COEFF_REL_TOL: f64 = 0.05;
const COEFF_RANGE: (f64, f64) = (1.0, 50.0);
// criterion 4
const SUPPRESSION_MIN: f64 = 30.0;
const REFERENCE_EPS: f64 = 1e-2;
// criterion 5
const VDW_EPS: f64 = 0.008;
const REGIME_SUPPRESSION_MIN: f64 = 10.0;
const FAILURE_SUPPRESSION_MAX: f64 = 3.0;
const FAILURE_WINDOW: (f64, f64) = (0.3, 3.0);
// criterion 6
const CORRECTION_GAIN_MIN: f64 = 3.0;
const CORRECTION_RANGE: (f64, f64) = (1e-3, 1e-1);
// criterion 7
const ORACLE_EPS: f64 = 1e-6;
const POPULATION_REL_TOL: f64 = 0.01;
const PHASE_REL_TOL: f64 = 0.02;
// criterion 8
const NORM_DRIFT_MAX: f64 = 1e-9;
const HERMITICITY_MAX: f64 = 1e-12;
const ZERO_EPS_FIDELITY_TOL: f64 = 1e-9;
const SWAP_TOL: f64 = 1e-12;
const EXPANSION_UNITARITY_TOL: f64 = 1e-8;
const POPULATION_TOL: f64 = 1e-14;

fn report(criterion: u32, pass: bool, detail: &str) {
    let line = format!("criterion {criterion}: {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    // bypass the harness's output capture
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

struct Calibrated {
    pulses: CalibratedPulses,
    seconds: f64,
}

fn calibrated() -> &'static Calibrated {
    static CELL: OnceLock<Calibrated> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let pulses = CalibratedPulses::calibrate(V12_REFERENCE, &Default::default()).expect("calibration");
        Calibrated { pulses, seconds: start.elapsed().as_secs_f64() }
    })
}

fn base_config(variable: SweepVariable, grid: Vec<f64>, epsilon: f64) -> ExperimentConfig {
    ExperimentConfig {
        system: SystemParams::symmetric(V12_REFERENCE, epsilon),
        sweep: SweepAxis { variable, grid },
        corrections: vec![CorrectionKind::None, CorrectionKind::PhaseCircuit],
        fit_window: FIT_WINDOW,
        ..ExperimentConfig::default()
    }
}

fn epsilon_records() -> &'static [SweepRecord] {
    static CELL: OnceLock<Vec<SweepRecord>> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = base_config(SweepVariable::Epsilon, default_epsilon_grid(), 0.0);
        run_epsilon_sweep(&cfg, &calibrated().pulses).expect("epsilon sweep")
    })
}

fn vdw_records() -> &'static [SweepRecord] {
    static CELL: OnceLock<Vec<SweepRecord>> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut cfg = base_config(SweepVariable::VSym, default_vdw_grid(), VDW_EPS);
        cfg.corrections = vec![CorrectionKind::None];
        run_vdw_sweep(&cfg, &calibrated().pulses).expect("vdW sweep")
    })
}

fn window(pts: &[(f64, f64)], (lo, hi): (f64, f64)) -> Vec<(f64, f64)> {
    pts.iter().copied().filter(|p| p.0 >= lo * (1.0 - 1e-9) && p.0 <= hi * (1.0 + 1e-9)).collect()
}

fn at(pts: &[(f64, f64)], x: f64) -> f64 {
    pts.iter().find(|p| (p.0 / x - 1.0).abs() < 1e-9).map(|p| p.1).expect("grid point")
}

fn eps(r: &SweepRecord) -> f64 {
    r.epsilon
}

#[test]
fn criterion_1_calibration() {
    let c = calibrated();
    let (cz, half) = (&c.pulses.cz, &c.pulses.half);
    let composed = protocol_gate_error(&c.pulses.double(), &GateTarget::cz(), V12_REFERENCE, &IntegratorConfig::default())
        .unwrap()
        .0;
    let pass = cz.gate_infidelity <= GATE_OBJECTIVE_MAX
        && half.gate_infidelity <= GATE_OBJECTIVE_MAX
        && composed <= COMPOSED_CZ_MAX
        && c.seconds <= CALIBRATION_SECONDS_MAX;
    report(
        1,
        pass,
        &format!(
            "cz 1-F = {:.2e}, half 1-F = {:.2e} (max {GATE_OBJECTIVE_MAX:.0e}); two halves vs CZ {composed:.2e} (max {COMPOSED_CZ_MAX:.0e}); {:.0} s (max {CALIBRATION_SECONDS_MAX:.0})",
            cz.gate_infidelity, half.gate_infidelity, c.seconds
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_2_scaling_laws() {
    use InitialState::*;
    use ProtocolKind::*;
    let recs = epsilon_records();
    let inf = |r: &SweepRecord| Some(r.infidelity);
    let d00 = series(recs, DoublePulse, G00, eps, inf);
    let s_sup = series(recs, SinglePulse, Superposition, eps, inf);
    let d_sup = series(recs, DoublePulse, Superposition, eps, inf);
    let slope_d = loglog_fit(&window(&d00, FIT_WINDOW)).unwrap().0;
    let slope_s = loglog_fit(&window(&s_sup, FIT_WINDOW)).unwrap().0;
    let cross = slope_crossing(&d_sup, CROSSOVER_LEVEL);
    let ok_cross = cross.is_some_and(|x| (CROSSOVER_RANGE.0..=CROSSOVER_RANGE.1).contains(&x));
    let pass = (slope_d - 2.0).abs() <= SLOPE_TOL && (slope_s - 1.0).abs() <= SLOPE_TOL && ok_cross;
    report(
        2,
        pass,
        &format!(
            "double |00> slope {slope_d:.3} (want 2 ± {SLOPE_TOL}); single superposition slope {slope_s:.3} (want 1 ± {SLOPE_TOL}); crossover {} (want within [{:.0e}, {:.0e}])",
            cross.map_or("none".to_string(), |x| format!("{x:.2e}")),
            CROSSOVER_RANGE.0,
            CROSSOVER_RANGE.1
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_3_quadratic_coefficient() {
    let recs = epsilon_records();
    let d00 = series(recs, ProtocolKind::DoublePulse, InitialState::G00, eps, |r| Some(r.infidelity));
    let fitted = fixed_power_coefficient(&window(&d00, FIT_WINDOW), 2.0).unwrap();
    let predicted = perturb_report(&calibrated().pulses.double()).unwrap().predicted_infid_coeff;
    let rel = (fitted / predicted - 1.0).abs();
    let pass = rel <= COEFF_REL_TOL && (COEFF_RANGE.0..=COEFF_RANGE.1).contains(&predicted);
    report(
        3,
        pass,
        &format!(
            "predicted c = {predicted:.4}, fitted c = {fitted:.4}, relative difference {rel:.3} (max {COEFF_REL_TOL}); c within [{}, {}]",
            COEFF_RANGE.0, COEFF_RANGE.1
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_4_suppression() {
    use ProtocolKind::*;
    let recs = epsilon_records();
    let inf = |r: &SweepRecord| Some(r.infidelity);
    let s = at(&series(recs, SinglePulse, InitialState::Superposition, eps, inf), REFERENCE_EPS);
    let d = at(&series(recs, DoublePulse, InitialState::Superposition, eps, inf), REFERENCE_EPS);
    let pass = s / d >= SUPPRESSION_MIN;
    report(
        4,
        pass,
        &format!("single {s:.3e} / double {d:.3e} = {:.1} at eps = {REFERENCE_EPS:.0e} (min {SUPPRESSION_MIN})", s / d),
    );
    assert!(pass);
}

#[test]
fn criterion_5_vdw_regimes() {
    let summary = summarize_vdw(vdw_records());
    let strong = summary.strong_min.unwrap();
    let weak = summary.weak_min.unwrap();
    let dip = summary
        .suppression
        .iter()
        .filter(|p| (FAILURE_WINDOW.0..=FAILURE_WINDOW.1).contains(&p.0))
        .map(|p| p.1)
        .fold(f64::INFINITY, f64::min);
    let pass = strong >= REGIME_SUPPRESSION_MIN && weak >= REGIME_SUPPRESSION_MIN && dip <= FAILURE_SUPPRESSION_MAX;
    report(
        5,
        pass,
        &format!(
            "min suppression for V >= 10: {strong:.1}, for V <= 0.1: {weak:.1} (min {REGIME_SUPPRESSION_MIN}); min in [{}, {}]: {dip:.2} (max {FAILURE_SUPPRESSION_MAX})",
            FAILURE_WINDOW.0, FAILURE_WINDOW.1
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_6_phase_correction() {
    let recs = epsilon_records();
    let d = |y: fn(&SweepRecord) -> Option<f64>| {
        series(recs, ProtocolKind::DoublePulse, InitialState::Superposition, eps, y)
    };
    let plain = d(|r| Some(r.infidelity));
    let corrected = d(|r| r.infidelity_corrected);
    let gain = at(&plain, REFERENCE_EPS) / at(&corrected, REFERENCE_EPS);
    let in_range = window(&plain, CORRECTION_RANGE);
    let worse: Vec<f64> = in_range
        .iter()
        .filter(|(e, u)| corrected.iter().find(|c| c.0 == *e).map_or(true, |c| c.1 > *u))
        .map(|p| p.0)
        .collect();
    let pass = gain >= CORRECTION_GAIN_MIN && worse.is_empty();
    report(
        6,
        pass,
        &format!(
            "uncorrected/corrected = {gain:.2} at eps = {REFERENCE_EPS:.0e} (min {CORRECTION_GAIN_MIN}); correction worse or undefined at {} of {} points in [{:.0e}, {:.0e}]",
            worse.len(),
            in_range.len(),
            CORRECTION_RANGE.0,
            CORRECTION_RANGE.1
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_7_oracle_equivalence() {
    let spec = calibrated().pulses.single();
    let r = perturb_report(&spec).unwrap();
    let params = SystemParams::symmetric(V12_REFERENCE, ORACLE_EPS);
    let t = propagate_third_alone(&StateVector::basis(&[Level::Q1]), &spec, &params, &IntegratorConfig::default()).unwrap();
    let f = t.final_state();
    let pop = f.amp(&[Level::Ryd]).norm_sqr();
    let phase = f.amp(&[Level::Q1]).arg();
    let (want_pop, want_phase) = (ORACLE_EPS * r.alpha, ORACLE_EPS * r.second_order_phase);
    let (e_pop, e_phase) = ((pop / want_pop - 1.0).abs(), (phase / want_phase - 1.0).abs());
    let pass = e_pop <= POPULATION_REL_TOL && e_phase <= PHASE_REL_TOL;
    report(
        7,
        pass,
        &format!(
            "Rydberg population {pop:.5e} vs eps*alpha {want_pop:.5e} (rel {e_pop:.1e}, max {POPULATION_REL_TOL}); phase {phase:.5e} vs eps*beta {want_phase:.5e} (rel {e_phase:.1e}, max {PHASE_REL_TOL})"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_8_properties() {
    use Level::*;
    let pulses = &calibrated().pulses;
    let cfg = IntegratorConfig::default();
    let mut notes = Vec::new();

    let params = SystemParams::symmetric(V12_REFERENCE, 0.05);
    let mut drift = 0.0f64;
    for spec in [pulses.single(), pulses.double()] {
        for l in [[Q1, Q1, Q1], [Q0, Q1, Q1], [Q1, Q0, Q0]] {
            drift = drift.max(propagate(&StateVector::basis(&l), &spec, &params, &cfg).unwrap().norm_drift);
        }
    }
    let ok_norm = drift < NORM_DRIFT_MAX;
    notes.push(format!("norm drift {drift:.1e}"));

    let spec = pulses.double();
    let herm = (0..200)
        .map(|k| {
            let (w, d) = spec.drive_at(spec.total_duration() * k as f64 / 199.0);
            build_hamiltonian(&params, w, d).matrix.hermiticity_defect()
        })
        .fold(0.0, f64::max);
    let ok_herm = herm < HERMITICITY_MAX;
    notes.push(format!("hermiticity {herm:.1e}"));

    let mut zero = 0.0f64;
    let mut swap = 0.0f64;
    for kind in [ProtocolKind::SinglePulse, ProtocolKind::DoublePulse] {
        let prot = PreparedProtocol::new(kind, pulses, V12_REFERENCE, &cfg).unwrap();
        let ev = QubitEvolution::new(&params.with_epsilon(0.0), &prot.spec, &cfg).unwrap();
        zero = zero.max((1.0 - fidelity_report(&ev, prot.gate_phase, None).f3).abs());
        let ev = QubitEvolution::new(&params, &prot.spec, &cfg).unwrap();
        let rep = fidelity_report(&ev, prot.gate_phase, None);
        swap = swap.max((rep.per_initial_state["01"] - rep.per_initial_state["10"]).abs());
    }
    let ok_zero = zero < ZERO_EPS_FIDELITY_TOL;
    let ok_swap = swap < SWAP_TOL;
    notes.push(format!("eps=0 |1-F3| {zero:.1e}"));
    notes.push(format!("01/10 asymmetry {swap:.1e}"));

    let unit = [pulses.single(), pulses.double()]
        .iter()
        .map(|s| {
            let r = perturb_report(s).unwrap();
            (2.0 * r.coeff_11.re + r.alpha).abs()
        })
        .fold(0.0, f64::max);
    let ok_unit = unit < EXPANSION_UNITARITY_TOL;
    notes.push(format!("2Re(c11)+alpha {unit:.1e}"));

    let corr = correction_unitary(&PhaseSet::from_phases(0.3, -1.1, Some(0.7), 2.9));
    let mut amps = superposition_input().into_amplitudes();
    amps[4] += C64::new(0.2, -0.1);
    let psi = StateVector::from_amplitudes(amps).unwrap().normalized();
    let pop = psi
        .amplitudes()
        .iter()
        .zip(corr.apply(&psi).amplitudes())
        .map(|(a, b)| (a.norm_sqr() - b.norm_sqr()).abs())
        .fold(0.0, f64::max);
    let ok_pop = pop < POPULATION_TOL;
    notes.push(format!("correction population change {pop:.1e}"));

    let pass = ok_norm && ok_herm && ok_zero && ok_swap && ok_unit && ok_pop;
    report(8, pass, &notes.join("; "));
    assert!(pass);
}

/// Dropping either endpoint of the fit window moves a slope by less than this.
const FIT_STABILITY_TOL: f64 = 0.02;

#[test]
fn fit_window_stability() {
    use InitialState::*;
    use ProtocolKind::*;
    let recs = epsilon_records();
    let inf = |r: &SweepRecord| Some(r.infidelity);
    let mut worst: f64 = 0.0;
    for (p, s) in [(DoublePulse, G00), (SinglePulse, Superposition)] {
        let pts = window(&series(recs, p, s, eps, inf), FIT_WINDOW);
        let full = loglog_fit(&pts).unwrap().0;
        for sub in [&pts[1..], &pts[..pts.len() - 1]] {
            worst = worst.max((loglog_fit(sub).unwrap().0 - full).abs());
        }
    }
    let pass = worst < FIT_STABILITY_TOL;
    let line = format!(
        "fit stability: {} largest slope change on dropping an endpoint {worst:.3} (max {FIT_STABILITY_TOL})\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
    assert!(pass);
}
