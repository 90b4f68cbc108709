use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crosstalk::calibrate::CalibrationResult;
use crosstalk::dynamics::propagate;
use crosstalk::hilbert::{basis_index, Level};
use crosstalk::metrics::{
    fidelity_report, gate_state_input, phases_from_evolution, superposition_input, PhaseSet, QubitEvolution,
};
use crosstalk::perturb::perturb_report;
use crosstalk::pulses::ProtocolKind;
use crosstalk::sweeps::{
    emit_outputs, parse_formats, parse_initial_state, run_correction_comparison, run_epsilon_sweep, run_vdw_sweep,
    summarize_epsilon, summarize_vdw, unwrap_phases, CalibratedPulses, ExperimentConfig, InitialState, OutputFormat,
    PlotKind, PreparedProtocol, SweepFailure, SweepRecord, SweepVariable,
};
use crosstalk::{Error, Result};

#[derive(Parser)]
#[command(name = "crosstalk", version, about = "Rydberg CZ crosstalk on a spectator atom")]
struct Cli {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory [default: the config's, else `out`].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Comma-separated output formats: csv, json, svg [default: the config's, else csv].
    #[arg(long, global = true)]
    format: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Protocol {
    Single,
    Double,
}

impl From<Protocol> for ProtocolKind {
    fn from(p: Protocol) -> Self {
        match p {
            Protocol::Single => ProtocolKind::SinglePulse,
            Protocol::Double => ProtocolKind::DoublePulse,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate the CZ and controlled-π/2 pulses and write calibration.toml.
    Calibrate,
    /// Run one protocol at the configured system point.
    Simulate {
        #[arg(long, value_enum, default_value = "double")]
        protocol: Protocol,
        /// Gate input 00, 01, 10, 11, or `superposition`.
        #[arg(long, default_value = "superposition")]
        state: String,
        /// Override ε.
        #[arg(long)]
        epsilon: Option<f64>,
        /// Write the sampled trajectory of the chosen input as CSV.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Infidelity against ε for both protocols.
    SweepEps,
    /// Infidelity against the spectator interaction strength.
    SweepVdw,
    /// Double pulse with and without the phase-cancellation circuit.
    Correct,
    /// Perturbative coefficients of both calibrated protocols.
    Perturb,
    /// Spectator phases and correction-circuit phases along the ε grid.
    Phases {
        #[arg(long, value_enum, default_value = "double")]
        protocol: Protocol,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    if let Some(f) = &cli.format {
        cfg.output.formats = parse_formats(f)?;
    }
    if cfg.calibration_file.is_none() {
        cfg.calibration_file = Some(cfg.output.dir.join("calibration.toml"));
    }
    Ok(cfg)
}

fn print_calibration(name: &str, c: &CalibrationResult) {
    let p = &c.pulse;
    println!(
        "{name}: A = {:.6}, w = {:.6}, c = {:.6}, T = {:.6}, phi = {:.6}, 1-F = {:.3e} ({} evaluations)",
        p.delta_amp, p.delta_width, p.delta_center, p.duration, c.single_qubit_phase, c.gate_infidelity, c.evaluations
    );
}

fn calibrate(cfg: &ExperimentConfig) -> Result<()> {
    let pulses = CalibratedPulses::calibrate(cfg.system.v12, &cfg.calibration)?;
    print_calibration("cz", &pulses.cz);
    print_calibration("half", &pulses.half);
    println!(
        "phase jump: theta = {:.6} (first-order amplitude {:.3e}, single pulse {:.3e})",
        pulses.phase_jump.selected,
        pulses.phase_jump.amp_accumulated.min(pulses.phase_jump.amp_shifted),
        pulses.phase_jump.amp_single
    );
    std::fs::create_dir_all(&cfg.output.dir).map_err(|e| Error::Io { path: cfg.output.dir.clone(), source: e })?;
    let path = cfg.output.dir.join("calibration.toml");
    pulses.save(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn simulate(
    cfg: &ExperimentConfig,
    kind: ProtocolKind,
    state: InitialState,
    epsilon: Option<f64>,
    trajectory: Option<&Path>,
) -> Result<()> {
    let pulses = cfg.pulses()?;
    let params = epsilon.map_or(cfg.system, |e| cfg.system.with_epsilon(e));
    params.validate()?;
    let prot = PreparedProtocol::new(kind, &pulses, cfg.system.v12, &cfg.integrator)?;
    let evolution = QubitEvolution::new(&params, &prot.spec, &cfg.integrator)?;
    let report = fidelity_report(&evolution, prot.gate_phase, None);
    println!("protocol {kind:?}, epsilon = {}, V13 = {}, V23 = {}", params.epsilon, params.v13, params.v23);
    println!("F3 = {:.9}  three-qubit F = {:.9}", report.f3, report.f_three_qubit);
    for (s, v) in &report.per_initial_state {
        println!("  1-F[{s}] = {v:.3e}");
    }
    println!("norm drift {:.1e}", evolution.norm_drift);
    if let Some(path) = trajectory {
        let psi0 = match state {
            InitialState::Superposition => superposition_input(),
            s => gate_state_input(InitialState::ALL.iter().position(|&x| x == s).unwrap()),
        };
        let traj = propagate(&psi0, &prot.spec, &params, &cfg.integrator)?;
        use Level::*;
        let tracked: Vec<usize> = [[Q0, Q0, Q0], [Q0, Q0, Q1], [Q0, Q0, Ryd], [Q1, Q1, Q1], [Ryd, Q1, Q1], [Q1, Ryd, Q1], [Q1, Q1, Ryd]]
            .iter()
            .map(|l| basis_index(l))
            .collect();
        traj.export_csv(&tracked, path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// Write whatever the sweep produced, then report its failure if any.
fn finish_sweep<S: serde::Serialize>(
    cfg: &ExperimentConfig,
    outcome: std::result::Result<Vec<SweepRecord>, SweepFailure>,
    summarize: impl Fn(&[SweepRecord]) -> S,
    kind: PlotKind,
) -> Result<()> {
    let (records, failure) = match outcome {
        Ok(r) => (r, None),
        Err(SweepFailure { records, error }) => (records, Some(error)),
    };
    if !records.is_empty() {
        let summary = summarize(&records);
        println!("{}", serde_json::to_string_pretty(&summary)?);
        for p in emit_outputs(&records, &summary, kind, &cfg.output.formats, &cfg.output.dir)? {
            println!("wrote {}", p.display());
        }
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn perturb(cfg: &ExperimentConfig) -> Result<()> {
    let pulses = cfg.pulses()?;
    for spec in [pulses.single(), pulses.double()] {
        let r = perturb_report(&spec)?;
        println!(
            "{:?}: |A1| = {:.3e}, alpha = {:.4e}, beta = {:.6}, c = {:.6}",
            spec.kind,
            r.first_order_ryd_amp.norm(),
            r.alpha,
            r.second_order_phase,
            r.predicted_infid_coeff
        );
    }
    let j = &pulses.phase_jump;
    println!(
        "theta candidates: {:.6} -> {:.3e}, {:.6} -> {:.3e}; selected {:.6}",
        j.theta_accumulated, j.amp_accumulated, j.theta_shifted, j.amp_shifted, j.selected
    );
    Ok(())
}

fn phases(cfg: &ExperimentConfig, kind: ProtocolKind) -> Result<()> {
    let pulses = cfg.pulses()?;
    let prot = PreparedProtocol::new(kind, &pulses, cfg.system.v12, &cfg.integrator)?;
    let grid = match cfg.sweep.variable {
        SweepVariable::Epsilon => cfg.sweep.grid.clone(),
        _ => vec![cfg.system.epsilon],
    };
    let sets: Vec<PhaseSet> = grid
        .par_iter()
        .map(|&e| {
            let params = cfg.system.with_epsilon(e);
            let ev = QubitEvolution::new(&params, &prot.spec, &cfg.integrator)?;
            phases_from_evolution(&ev, prot.gate_phase, params.v13 == params.v23)
        })
        .collect::<Result<_>>()?;
    // columns: phi1, phi2, phi2_13, phi3, varphi1, varphi2, varphi2_13, varphi3
    let mut cols: Vec<Vec<f64>> = (0..8)
        .map(|k| {
            sets.iter()
                .map(|s| [s.phi1, s.phi2, s.phi2_13, s.phi3, s.varphi1, s.varphi2, s.varphi2_13, s.varphi3][k])
                .collect()
        })
        .collect();
    cols.iter_mut().for_each(|c| unwrap_phases(c));
    let header = "epsilon,phi1,phi2,phi2_13,phi3,varphi1,varphi2,varphi2_13,varphi3";
    let mut text = format!("{header}\n");
    for (i, e) in grid.iter().enumerate() {
        text += &format!("{e:.6e}");
        for c in &cols {
            text += &format!(",{:.9e}", c[i]);
        }
        text += "\n";
    }
    print!("{text}");
    if cfg.output.formats.contains(&OutputFormat::Csv) {
        std::fs::create_dir_all(&cfg.output.dir).map_err(|e| Error::Io { path: cfg.output.dir.clone(), source: e })?;
        let path = cfg.output.dir.join("phases.csv");
        std::fs::write(&path, text).map_err(|e| Error::Io { path: path.clone(), source: e })?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let mut cfg = load_config(&cli)?;
    match &cli.command {
        Command::Calibrate => calibrate(&cfg),
        Command::Simulate { protocol, state, epsilon, trajectory } => {
            simulate(&cfg, (*protocol).into(), parse_initial_state(state)?, *epsilon, trajectory.as_deref())
        }
        Command::SweepEps => {
            let pulses = cfg.pulses()?;
            let window = cfg.fit_window;
            finish_sweep(&cfg, run_epsilon_sweep(&cfg, &pulses), |r| summarize_epsilon(r, window), PlotKind::Epsilon)
        }
        Command::SweepVdw => {
            if cfg.sweep.variable == SweepVariable::Epsilon {
                cfg.sweep.variable = SweepVariable::VSym;
                cfg.sweep.grid = crosstalk::sweeps::default_vdw_grid();
            }
            let pulses = cfg.pulses()?;
            finish_sweep(&cfg, run_vdw_sweep(&cfg, &pulses), summarize_vdw, PlotKind::Vdw)
        }
        Command::Correct => {
            let pulses = cfg.pulses()?;
            let window = cfg.fit_window;
            finish_sweep(&cfg, run_correction_comparison(&cfg, &pulses), |r| summarize_epsilon(r, window), PlotKind::Correction)
        }
        Command::Perturb => perturb(&cfg),
        Command::Phases { protocol } => phases(&cfg, (*protocol).into()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
