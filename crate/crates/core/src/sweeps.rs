//! Experiment runner: ε sweeps, spectator-interaction sweeps and the
//! corrected/uncorrected comparison, plus persistence of their results.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::{calibrate_pulse, protocol_gate_error, CalibrationResult, CalibrationSettings, GateTarget};
use crate::dynamics::IntegratorConfig;
use crate::error::{Error, Result};
use crate::hilbert::{SystemParams, V12_REFERENCE};
use crate::metrics::{
    correction_unitary, fidelity_report, gate_state_bits, phases_from_evolution, PhaseSet, QubitEvolution,
};
use crate::perturb::{perturb_report, select_phase_jump, PerturbReport, PhaseJumpChoice};
use crate::plot::{LogLogPlot, Series};
use crate::pulses::{ProtocolKind, ProtocolSpec};

pub const CSV_SCHEMA_VERSION: u32 = 1;
pub const CSV_HEADER: [&str; 9] = [
    "epsilon",
    "v12",
    "v13",
    "v23",
    "protocol",
    "initial_state",
    "infidelity",
    "infidelity_corrected",
    "perturb_prediction",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    Epsilon,
    /// V₁₃ and V₂₃ varied independently over the grid (a map).
    V13V23Pair,
    /// V₁₃ = V₂₃ varied together.
    VSym,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum InitialState {
    #[serde(rename = "00")]
    G00,
    #[serde(rename = "01")]
    G01,
    #[serde(rename = "10")]
    G10,
    #[serde(rename = "11")]
    G11,
    #[serde(rename = "superposition")]
    Superposition,
}

impl InitialState {
    pub const ALL: [InitialState; 5] = [
        InitialState::G00,
        InitialState::G01,
        InitialState::G10,
        InitialState::G11,
        InitialState::Superposition,
    ];

    pub fn label(self) -> &'static str {
        match self {
            InitialState::G00 => "00",
            InitialState::G01 => "01",
            InitialState::G10 => "10",
            InitialState::G11 => "11",
            InitialState::Superposition => "superposition",
        }
    }
}

impl fmt::Display for InitialState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionKind {
    None,
    PhaseCircuit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
    Svg,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            "svg" => Ok(OutputFormat::Svg),
            other => Err(Error::Config(format!("unknown output format {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepAxis {
    pub variable: SweepVariable,
    pub grid: Vec<f64>,
}

impl SweepAxis {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::Config("sweep grid is empty".into()));
        }
        if !self.grid.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::Config("sweep grid must be strictly increasing".into()));
        }
        if self.grid.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("sweep grid values must be finite and ≥ 0".into()));
        }
        Ok(())
    }
}

/// `n` log-spaced points on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|k| lo * (hi / lo).powf(k as f64 / (n - 1) as f64)).collect()
}

pub fn default_epsilon_grid() -> Vec<f64> {
    log_grid(1e-4, 1e-1, 25)
}

pub fn default_vdw_grid() -> Vec<f64> {
    log_grid(1e-2, 1e2, 30)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputSpec {
    pub dir: PathBuf,
    #[serde(default)]
    pub formats: Vec<OutputFormat>,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec { dir: PathBuf::from("out"), formats: vec![OutputFormat::Csv] }
    }
}

/// Calibrated pulses for both protocols at one V₁₂.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibratedPulses {
    /// Single CZ pulse.
    pub cz: CalibrationResult,
    /// Controlled-π/2 pulse; two of them form the double protocol.
    pub half: CalibrationResult,
    /// Phase jump of the double protocol.
    pub phase_jump: PhaseJumpChoice,
}

impl CalibratedPulses {
    pub fn calibrate(v12: f64, settings: &CalibrationSettings) -> Result<Self> {
        let cz = calibrate_pulse(&GateTarget::cz(), v12, settings)?;
        let half = calibrate_pulse(&GateTarget::controlled_half_pi(), v12, settings)?;
        let phase_jump = select_phase_jump(&half.pulse)?;
        Ok(CalibratedPulses { cz, half, phase_jump })
    }

    pub fn single(&self) -> ProtocolSpec {
        ProtocolSpec::single(self.cz.pulse)
    }

    pub fn double(&self) -> ProtocolSpec {
        ProtocolSpec::double(self.half.pulse, self.phase_jump.selected)
    }

    pub fn protocol(&self, kind: ProtocolKind) -> ProtocolSpec {
        match kind {
            ProtocolKind::SinglePulse => self.single(),
            ProtocolKind::DoublePulse => self.double(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn default_fit_window() -> (f64, f64) {
    (3e-3, 3e-2)
}

fn default_states() -> Vec<InitialState> {
    InitialState::ALL.to_vec()
}

fn default_corrections() -> Vec<CorrectionKind> {
    vec![CorrectionKind::None]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Template; the swept quantity overrides its field.
    pub system: SystemParams,
    #[serde(default)]
    pub calibration: CalibrationSettings,
    /// Calibrated pulses written by the `calibrate` step.
    #[serde(default)]
    pub calibration_file: Option<PathBuf>,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    pub sweep: SweepAxis,
    #[serde(default = "default_states")]
    pub initial_states: Vec<InitialState>,
    #[serde(default = "default_corrections")]
    pub corrections: Vec<CorrectionKind>,
    /// ε window for log-log slope fits.
    #[serde(default = "default_fit_window")]
    pub fit_window: (f64, f64),
    #[serde(default)]
    pub output: OutputSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            system: SystemParams::symmetric(V12_REFERENCE, 0.008),
            calibration: CalibrationSettings::default(),
            calibration_file: None,
            integrator: IntegratorConfig::default(),
            sweep: SweepAxis { variable: SweepVariable::Epsilon, grid: default_epsilon_grid() },
            initial_states: default_states(),
            corrections: default_corrections(),
            fit_window: default_fit_window(),
            output: OutputSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        // calibration paths are relative to the config file
        if let (Some(f), Some(dir)) = (&cfg.calibration_file, path.parent()) {
            if f.is_relative() {
                cfg.calibration_file = Some(dir.join(f));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        self.integrator.validate()?;
        self.sweep.validate()?;
        if self.initial_states.is_empty() {
            return Err(Error::Config("no initial states requested".into()));
        }
        let (lo, hi) = self.fit_window;
        if !(lo > 0.0 && hi > lo) {
            return Err(Error::Config(format!("invalid fit window ({lo}, {hi})")));
        }
        Ok(())
    }

    /// Load the calibration artifact named in the config.
    pub fn pulses(&self) -> Result<CalibratedPulses> {
        let path = self.calibration_file.as_ref().ok_or_else(|| {
            Error::MissingCalibration("no calibration_file in the configuration; run `calibrate` first".into())
        })?;
        if !path.exists() {
            return Err(Error::MissingCalibration(format!("{} does not exist", path.display())));
        }
        let pulses = CalibratedPulses::load(path)?;
        if (pulses.cz.v12 - self.system.v12).abs() > 1e-12 * self.system.v12 {
            return Err(Error::MissingCalibration(format!(
                "{} was calibrated at V12 = {}, configuration uses {}",
                path.display(),
                pulses.cz.v12,
                self.system.v12
            )));
        }
        Ok(pulses)
    }

    fn wants_correction(&self) -> bool {
        self.corrections.contains(&CorrectionKind::PhaseCircuit)
    }
}

/// One row of output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub epsilon: f64,
    pub v12: f64,
    pub v13: f64,
    pub v23: f64,
    pub protocol: ProtocolKind,
    pub initial_state: InitialState,
    pub infidelity: f64,
    pub infidelity_corrected: Option<f64>,
    pub perturb_prediction: Option<f64>,
}

/// Records of the grid points completed before a failure, and the failure.
#[derive(Debug)]
pub struct SweepFailure {
    pub records: Vec<SweepRecord>,
    pub error: Error,
}

impl fmt::Display for SweepFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sweep aborted after {} records: {}", self.records.len(), self.error)
    }
}

impl std::error::Error for SweepFailure {}

impl From<Error> for SweepFailure {
    fn from(error: Error) -> Self {
        SweepFailure { records: Vec::new(), error }
    }
}

/// Everything about a protocol that does not depend on the sweep point.
#[derive(Clone, Debug)]
pub struct PreparedProtocol {
    pub kind: ProtocolKind,
    pub spec: ProtocolSpec,
    /// Single-qubit phase of the gate atoms removed before scoring.
    pub gate_phase: f64,
    pub perturb: PerturbReport,
}

impl PreparedProtocol {
    pub fn new(kind: ProtocolKind, pulses: &CalibratedPulses, v12: f64, cfg: &IntegratorConfig) -> Result<Self> {
        let spec = pulses.protocol(kind);
        let (_, gate_phase) = protocol_gate_error(&spec, &GateTarget::cz(), v12, cfg)?;
        Ok(PreparedProtocol { kind, spec, gate_phase, perturb: perturb_report(&spec)? })
    }
}

/// Result of one protocol at one system point.
#[derive(Clone, Debug)]
pub struct PointResult {
    pub params: SystemParams,
    pub kind: ProtocolKind,
    /// Infidelity per initial state, in [`InitialState::ALL`] order.
    pub infidelity: [f64; 5],
    pub corrected: Option<[f64; 5]>,
    pub phases: Option<PhaseSet>,
    pub norm_drift: f64,
}

/// Propagate one protocol at one system point and score it.
pub fn evaluate_point(
    params: &SystemParams,
    protocol: &PreparedProtocol,
    cfg: &IntegratorConfig,
    with_correction: bool,
) -> Result<PointResult> {
    let evolution = QubitEvolution::new(params, &protocol.spec, cfg)?;
    let collect = |r: &crate::metrics::FidelityReport| -> [f64; 5] {
        let mut out = [0.0; 5];
        for (k, s) in InitialState::ALL[..4].iter().enumerate() {
            out[k] = r.per_initial_state[s.label()];
        }
        out[4] = (1.0 - r.f_three_qubit).max(0.0);
        out
    };
    let plain = fidelity_report(&evolution, protocol.gate_phase, None);
    let (corrected, phases) = if with_correction {
        // a spectator driven far out of the qubit space has no usable phase; leave the cell empty
        match phases_from_evolution(&evolution, protocol.gate_phase, params.v13 == params.v23) {
            Ok(phases) => {
                let report = fidelity_report(&evolution, protocol.gate_phase, Some(&correction_unitary(&phases)));
                (Some(collect(&report)), Some(phases))
            }
            Err(Error::IllDefinedPhase { .. }) => (None, None),
            Err(e) => return Err(e),
        }
    } else {
        (None, None)
    };
    Ok(PointResult {
        params: *params,
        kind: protocol.kind,
        infidelity: collect(&plain),
        corrected,
        phases,
        norm_drift: evolution.norm_drift,
    })
}

fn records_for(point: &PointResult, states: &[InitialState], perturb: &PerturbReport) -> Vec<SweepRecord> {
    let p = &point.params;
    states
        .iter()
        .map(|&s| {
            let k = InitialState::ALL.iter().position(|&x| x == s).unwrap();
            let perturb_prediction = (s == InitialState::G00 && p.epsilon <= 0.1).then(|| perturb.third_infidelity(p.epsilon));
            SweepRecord {
                epsilon: p.epsilon,
                v12: p.v12,
                v13: p.v13,
                v23: p.v23,
                protocol: point.kind,
                initial_state: s,
                infidelity: point.infidelity[k],
                infidelity_corrected: point.corrected.map(|c| c[k]),
                perturb_prediction,
            }
        })
        .collect()
}

/// Evaluate every (point, protocol) pair concurrently; results come back in
/// input order, truncated at the first failure.
fn run_points(
    cfg: &ExperimentConfig,
    points: &[SystemParams],
    protocols: &[PreparedProtocol],
) -> std::result::Result<Vec<PointResult>, (Vec<PointResult>, Error)> {
    let jobs: Vec<(usize, usize)> =
        (0..points.len()).flat_map(|i| (0..protocols.len()).map(move |j| (i, j))).collect();
    let results: Vec<Result<PointResult>> = jobs
        .par_iter()
        .map(|&(i, j)| evaluate_point(&points[i], &protocols[j], &cfg.integrator, cfg.wants_correction()))
        .collect();
    let mut done = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(p) => done.push(p),
            Err(e) => return Err((done, e)),
        }
    }
    Ok(done)
}

fn run_grid(
    cfg: &ExperimentConfig,
    pulses: &CalibratedPulses,
    points: Vec<SystemParams>,
    kinds: &[ProtocolKind],
) -> std::result::Result<Vec<SweepRecord>, SweepFailure> {
    cfg.validate()?;
    let protocols: Vec<PreparedProtocol> = kinds
        .iter()
        .map(|&k| PreparedProtocol::new(k, pulses, cfg.system.v12, &cfg.integrator))
        .collect::<Result<_>>()?;
    let to_records = |pts: &[PointResult]| -> Vec<SweepRecord> {
        pts.iter()
            .flat_map(|p| {
                let prot = protocols.iter().find(|q| q.kind == p.kind).unwrap();
                records_for(p, &cfg.initial_states, &prot.perturb)
            })
            .collect()
    };
    match run_points(cfg, &points, &protocols) {
        Ok(pts) => Ok(to_records(&pts)),
        Err((pts, error)) => Err(SweepFailure { records: to_records(&pts), error }),
    }
}

const BOTH: [ProtocolKind; 2] = [ProtocolKind::SinglePulse, ProtocolKind::DoublePulse];

/// Both protocols over the ε grid of `cfg.sweep`.
pub fn run_epsilon_sweep(
    cfg: &ExperimentConfig,
    pulses: &CalibratedPulses,
) -> std::result::Result<Vec<SweepRecord>, SweepFailure> {
    if cfg.sweep.variable != SweepVariable::Epsilon {
        return Err(Error::Config("run_epsilon_sweep needs sweep.variable = \"epsilon\"".into()).into());
    }
    let points = cfg.sweep.grid.iter().map(|&e| cfg.system.with_epsilon(e)).collect();
    run_grid(cfg, pulses, points, &BOTH)
}

/// Both protocols over spectator interaction strengths at `cfg.system.epsilon`.
pub fn run_vdw_sweep(
    cfg: &ExperimentConfig,
    pulses: &CalibratedPulses,
) -> std::result::Result<Vec<SweepRecord>, SweepFailure> {
    let g = &cfg.sweep.grid;
    let points: Vec<SystemParams> = match cfg.sweep.variable {
        SweepVariable::VSym => g.iter().map(|&v| cfg.system.with_spectator(v, v)).collect(),
        SweepVariable::V13V23Pair => {
            g.iter().flat_map(|&a| g.iter().map(move |&b| (a, b))).map(|(a, b)| cfg.system.with_spectator(a, b)).collect()
        }
        SweepVariable::Epsilon => {
            return Err(Error::Config("run_vdw_sweep needs sweep.variable = \"v_sym\" or \"v13_v23_pair\"".into()).into())
        }
    };
    run_grid(cfg, pulses, points, &BOTH)
}

/// Double protocol over the ε grid, with and without the phase circuit.
pub fn run_correction_comparison(
    cfg: &ExperimentConfig,
    pulses: &CalibratedPulses,
) -> std::result::Result<Vec<SweepRecord>, SweepFailure> {
    if cfg.sweep.variable != SweepVariable::Epsilon {
        return Err(Error::Config("run_correction_comparison needs sweep.variable = \"epsilon\"".into()).into());
    }
    let mut cfg = cfg.clone();
    if !cfg.wants_correction() {
        cfg.corrections.push(CorrectionKind::PhaseCircuit);
    }
    let points = cfg.sweep.grid.iter().map(|&e| cfg.system.with_epsilon(e)).collect();
    run_grid(&cfg, pulses, points, &[ProtocolKind::DoublePulse])
}

/// Least-squares slope and intercept of `ln y` against `ln x`.
pub fn loglog_fit(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Coefficient `c` of `y = c·x^power` by least squares in log space.
pub fn fixed_power_coefficient(points: &[(f64, f64)], power: f64) -> Option<f64> {
    let logs: Vec<f64> = points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| y.ln() - power * x.ln()).collect();
    if logs.is_empty() {
        return None;
    }
    Some((logs.iter().sum::<f64>() / logs.len() as f64).exp())
}

/// `(x, y)` pairs of the selected series, sorted by `x`.
pub fn series(
    records: &[SweepRecord],
    protocol: ProtocolKind,
    state: InitialState,
    x: impl Fn(&SweepRecord) -> f64,
    y: impl Fn(&SweepRecord) -> Option<f64>,
) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.protocol == protocol && r.initial_state == state)
        .filter_map(|r| y(r).map(|v| (x(r), v)))
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

fn in_window(pts: &[(f64, f64)], (lo, hi): (f64, f64)) -> Vec<(f64, f64)> {
    let tol = 1e-9;
    pts.iter().copied().filter(|(x, _)| *x >= lo * (1.0 - tol) && *x <= hi * (1.0 + tol)).collect()
}

/// Where the local log-log slope of `pts` first falls below `level` when
/// moving towards smaller `x`, interpolated in `ln x`.
pub fn slope_crossing(pts: &[(f64, f64)], level: f64) -> Option<f64> {
    let local: Vec<(f64, f64)> = pts
        .windows(2)
        .filter(|w| w[0].1 > 0.0 && w[1].1 > 0.0)
        .map(|w| ((w[0].0 * w[1].0).sqrt(), (w[1].1 / w[0].1).ln() / (w[1].0 / w[0].0).ln()))
        .collect();
    for w in local.windows(2).rev() {
        let (hi, lo) = (w[1], w[0]);
        if hi.1 >= level && lo.1 < level {
            let f = (level - lo.1) / (hi.1 - lo.1);
            return Some((lo.0.ln() + f * (hi.0.ln() - lo.0.ln())).exp());
        }
    }
    None
}

/// Fits and comparisons of an ε sweep.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSummary {
    pub fit_window: (f64, f64),
    /// Slope for gate state 00 under the double pulse.
    pub slope_double_00: Option<f64>,
    /// Slope for the superposition input under the single pulse.
    pub slope_single_superposition: Option<f64>,
    /// c in 1 − F = cε² fitted to gate state 00 under the double pulse.
    pub fitted_coefficient: Option<f64>,
    pub predicted_coefficient: Option<f64>,
    /// ε where the double-pulse superposition curve turns from slope 2 to 1.
    pub crossover_epsilon: Option<f64>,
    /// Single/double superposition infidelity ratio at the grid point closest to ε = 10⁻².
    pub suppression_at_1e2: Option<(f64, f64)>,
    /// Uncorrected/corrected ratio at the grid point closest to ε = 10⁻² (double pulse).
    pub correction_gain_at_1e2: Option<(f64, f64)>,
}

fn closest(pts: &[(f64, f64)], x: f64) -> Option<(f64, f64)> {
    pts.iter().copied().min_by(|a, b| (a.0.ln() - x.ln()).abs().total_cmp(&(b.0.ln() - x.ln()).abs()))
}

pub fn summarize_epsilon(records: &[SweepRecord], fit_window: (f64, f64)) -> EpsilonSummary {
    use InitialState::*;
    use ProtocolKind::*;
    let eps = |r: &SweepRecord| r.epsilon;
    let d00 = series(records, DoublePulse, G00, eps, |r| Some(r.infidelity));
    let s_sup = series(records, SinglePulse, Superposition, eps, |r| Some(r.infidelity));
    let d_sup = series(records, DoublePulse, Superposition, eps, |r| Some(r.infidelity));
    let d_sup_corr = series(records, DoublePulse, Superposition, eps, |r| r.infidelity_corrected);
    let predicted = records
        .iter()
        .find(|r| r.protocol == DoublePulse && r.initial_state == G00 && r.epsilon > 0.0)
        .and_then(|r| r.perturb_prediction.map(|p| p / (r.epsilon * r.epsilon)));

    let suppression_at_1e2 = closest(&s_sup, 1e-2).and_then(|(e, s)| {
        d_sup.iter().find(|p| p.0 == e).map(|&(_, d)| (e, s / d))
    });
    let correction_gain_at_1e2 = closest(&d_sup_corr, 1e-2).and_then(|(e, c)| {
        d_sup.iter().find(|p| p.0 == e).map(|&(_, u)| (e, u / c))
    });
    EpsilonSummary {
        fit_window,
        slope_double_00: loglog_fit(&in_window(&d00, fit_window)).map(|f| f.0),
        slope_single_superposition: loglog_fit(&in_window(&s_sup, fit_window)).map(|f| f.0),
        fitted_coefficient: fixed_power_coefficient(&in_window(&d00, fit_window), 2.0),
        predicted_coefficient: predicted,
        crossover_epsilon: slope_crossing(&d_sup, 1.5),
        suppression_at_1e2,
        correction_gain_at_1e2,
    }
}

/// Suppression factors of a V₁₃ = V₂₃ scan and the regimes they fall into.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VdwSummary {
    pub epsilon: f64,
    /// `(V, single/double superposition infidelity)`.
    pub suppression: Vec<(f64, f64)>,
    /// Smallest factor for V ≥ 10 (blockaded spectator).
    pub strong_min: Option<f64>,
    /// Smallest factor for V ≤ 0.1 (free spectator).
    pub weak_min: Option<f64>,
    /// Smallest factor overall and where it occurs.
    pub worst: Option<(f64, f64)>,
    /// Range of V where the factor is at most 3.
    pub failure_band: Option<(f64, f64)>,
}

pub fn summarize_vdw(records: &[SweepRecord]) -> VdwSummary {
    use InitialState::Superposition;
    use ProtocolKind::*;
    let v = |r: &SweepRecord| r.v13;
    let sym: Vec<SweepRecord> = records.iter().filter(|r| r.v13 == r.v23).cloned().collect();
    let s = series(&sym, SinglePulse, Superposition, v, |r| Some(r.infidelity));
    let d = series(&sym, DoublePulse, Superposition, v, |r| Some(r.infidelity));
    let suppression: Vec<(f64, f64)> =
        s.iter().filter_map(|&(x, a)| d.iter().find(|p| p.0 == x).map(|&(_, b)| (x, a / b))).collect();
    let min_of = |f: &dyn Fn(f64) -> bool| {
        suppression.iter().filter(|p| f(p.0)).map(|p| p.1).min_by(f64::total_cmp)
    };
    let band: Vec<f64> = suppression.iter().filter(|p| p.1 <= 3.0).map(|p| p.0).collect();
    VdwSummary {
        epsilon: sym.first().map(|r| r.epsilon).unwrap_or_default(),
        strong_min: min_of(&|x| x >= 10.0),
        weak_min: min_of(&|x| x <= 0.1),
        worst: suppression.iter().copied().min_by(|a, b| a.1.total_cmp(&b.1)),
        failure_band: band.first().map(|&lo| (lo, *band.last().unwrap())),
        suppression,
    }
}

/// Remove 2π jumps between neighbouring entries.
pub fn unwrap_phases(phases: &mut [f64]) {
    for k in 1..phases.len() {
        let d = phases[k] - phases[k - 1];
        phases[k] -= std::f64::consts::TAU * (d / std::f64::consts::TAU).round();
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.12e}")).unwrap_or_default()
}

/// CSV with the schema version in a leading comment line.
pub fn write_csv<W: Write>(records: &[SweepRecord], mut w: W) -> Result<()> {
    writeln!(w, "# crosstalk sweep schema v{CSV_SCHEMA_VERSION}").map_err(|e| Error::io("<csv>", e))?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    for r in records {
        out.write_record([
            format!("{:.12e}", r.epsilon),
            format!("{:.12e}", r.v12),
            format!("{:.12e}", r.v13),
            format!("{:.12e}", r.v23),
            match r.protocol {
                ProtocolKind::SinglePulse => "single".to_string(),
                ProtocolKind::DoublePulse => "double".to_string(),
            },
            r.initial_state.label().to_string(),
            format!("{:.12e}", r.infidelity),
            fmt_opt(r.infidelity_corrected),
            fmt_opt(r.perturb_prediction),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Which figure layout to draw.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    Epsilon,
    Vdw,
    Correction,
}

fn plots(records: &[SweepRecord], kind: PlotKind) -> Vec<(String, LogLogPlot)> {
    use InitialState::*;
    use ProtocolKind::*;
    let eps = |r: &SweepRecord| r.epsilon;
    let inf = |r: &SweepRecord| Some(r.infidelity);
    match kind {
        PlotKind::Epsilon => [(G00, "a"), (G01, "b"), (G11, "c"), (Superposition, "d")]
            .into_iter()
            .map(|(s, tag)| {
                let mut p = LogLogPlot::new(format!("({tag}) gate input {s}"), "ε", "1 − F");
                p.push(Series::new("single", series(records, SinglePulse, s, eps, inf)));
                p.push(Series::new("double", series(records, DoublePulse, s, eps, inf)));
                let pred = series(records, DoublePulse, s, eps, |r| r.perturb_prediction);
                if !pred.is_empty() {
                    p.push(Series::new("double, perturbative", pred).dashed());
                }
                (format!("epsilon_{tag}.svg"), p)
            })
            .collect(),
        PlotKind::Vdw => {
            let v = |r: &SweepRecord| r.v13;
            let sym: Vec<SweepRecord> = records.iter().filter(|r| r.v13 == r.v23).cloned().collect();
            let mut p = LogLogPlot::new("V13 = V23 scan".to_string(), "V/Ω₀", "1 − F");
            p.push(Series::new("single", series(&sym, SinglePulse, Superposition, v, inf)));
            p.push(Series::new("double", series(&sym, DoublePulse, Superposition, v, inf)));
            vec![("vdw.svg".to_string(), p)]
        }
        PlotKind::Correction => {
            let mut p = LogLogPlot::new("phase correction".to_string(), "ε", "1 − F");
            p.push(Series::new("double", series(records, DoublePulse, Superposition, eps, inf)));
            p.push(Series::new(
                "double + correction",
                series(records, DoublePulse, Superposition, eps, |r| r.infidelity_corrected),
            ));
            vec![("correction.svg".to_string(), p)]
        }
    }
}

/// Write `records.csv`, and on request `summary.json` and SVG plots, into `dir`.
pub fn emit_outputs(
    records: &[SweepRecord],
    summary: &impl Serialize,
    kind: PlotKind,
    formats: &[OutputFormat],
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::InvalidParameter("no records to write".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let formats = if formats.is_empty() { &[OutputFormat::Csv][..] } else { formats };
    for f in formats {
        match f {
            OutputFormat::Csv => {
                let path = dir.join("records.csv");
                let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
                write_csv(records, std::io::BufWriter::new(file)).map_err(|e| match e {
                    Error::Io { source, .. } => Error::io(&path, source),
                    other => other,
                })?;
                written.push(path);
            }
            OutputFormat::Json => {
                let path = dir.join("summary.json");
                let text = serde_json::to_string_pretty(summary)?;
                std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
                written.push(path);
            }
            OutputFormat::Svg => {
                for (name, plot) in plots(records, kind) {
                    let path = dir.join(name);
                    std::fs::write(&path, plot.render()).map_err(|e| Error::io(&path, e))?;
                    written.push(path);
                }
            }
        }
    }
    Ok(written)
}

/// Parse `csv,json,svg`.
pub fn parse_formats(s: &str) -> Result<Vec<OutputFormat>> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(OutputFormat::from_str).collect()
}

/// Validate a gate-state label against the known inputs.
pub fn parse_initial_state(s: &str) -> Result<InitialState> {
    if s == "superposition" {
        return Ok(InitialState::Superposition);
    }
    Ok(InitialState::ALL[gate_state_bits(s)?])
}
