//! Configuration-driven experiment runner with seeded, reproducible
//! artifacts.
//!
//! A single JSON config selects one experiment kind, the physical system, the
//! solver settings, and the sweep grid. Each run writes CSV artifacts plus a
//! JSON manifest into the output directory:
//!
//! - `subcarriers.csv` — one row per (grid point, trial, subcarrier)
//! - `trials.csv` — one row per (grid point, trial)
//! - `summary.csv` — one aggregate row per grid point
//! - `probes.csv` — bisection probe log, when an effective-bandwidth search
//!   is requested
//! - `iterations.jsonl` — per-outer-iteration optimizer records, for the
//!   convergence sweep
//! - `manifest.json` — config echo, seeds, versions, wall clock, status
//!
//! Reruns with the same config and master seed produce byte-identical CSV
//! bodies; timestamps only ever appear in the manifest. Channel realizations
//! are derived from the trial seed alone, so grid points are paired across
//! the same set of channels.

use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::bandwidth::{bisect_effective_bandwidth, BandSpec, BisectionResult};
use crate::channel::ScatterVolume;
use crate::error::{Error, Result};
use crate::evaluation::{
    build_single_layer_baseline, evaluate_capacity, monte_carlo, run_baseline_single_carrier,
    CapacityReport, LinkBudget, SignalModel, TrialOutcome,
};
use crate::geometry::StackConfig;
use crate::optimizer::{OptimizationReport, SolverSettings};
use crate::seeding::derive_seed;
use crate::system::{ChannelSpec, SystemSpec};
use crate::SPEED_OF_LIGHT;

/// One experiment family per figure-style study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    FitErrorVsBandwidth,
    CapacityVsSubcarriers,
    CapacityVsLayers,
    CapacityVsAtoms,
    ConvergenceSweep,
    BaselineComparison,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::FitErrorVsBandwidth => "fit_error_vs_bandwidth",
            ExperimentKind::CapacityVsSubcarriers => "capacity_vs_subcarriers",
            ExperimentKind::CapacityVsLayers => "capacity_vs_layers",
            ExperimentKind::CapacityVsAtoms => "capacity_vs_atoms",
            ExperimentKind::ConvergenceSweep => "convergence_sweep",
            ExperimentKind::BaselineComparison => "baseline_comparison",
        }
    }
}

/// Stack geometry in config units; optional fields default from the carrier
/// wavelength (`atom_spacing_m`, `antenna_spacing_m` to half a wavelength,
/// `atom_area_m2` to a quarter squared wavelength).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackParams {
    pub layers: usize,
    pub atoms_x: usize,
    pub atoms_z: usize,
    #[serde(default)]
    pub atom_count: Option<usize>,
    #[serde(default)]
    pub atom_spacing_m: Option<f64>,
    pub total_thickness_m: f64,
    #[serde(default)]
    pub atom_area_m2: Option<f64>,
    #[serde(default)]
    pub antenna_spacing_m: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeParams {
    #[serde(default = "default_axial_min")]
    pub axial_min_frac: f64,
    #[serde(default = "default_axial_max")]
    pub axial_max_frac: f64,
    #[serde(default = "default_half_width")]
    pub transverse_half_width_m: f64,
}

fn default_axial_min() -> f64 {
    0.1
}
fn default_axial_max() -> f64 {
    0.9
}
fn default_half_width() -> f64 {
    25.0
}

impl Default for VolumeParams {
    fn default() -> Self {
        VolumeParams {
            axial_min_frac: default_axial_min(),
            axial_max_frac: default_axial_max(),
            transverse_half_width_m: default_half_width(),
        }
    }
}

/// Physical system in config units. dB-valued fields carry explicit unit
/// suffixes; they are converted to linear watts at this boundary only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub center_frequency_hz: f64,
    pub bandwidth_hz: f64,
    pub subcarriers: usize,
    pub streams: usize,
    pub link_distance_m: f64,
    pub scatterers: usize,
    #[serde(default)]
    pub scatter_volume: VolumeParams,
    pub tx_power_dbm: f64,
    pub noise_dbm: f64,
    pub antenna_gain_dbi: f64,
    pub system_loss_db: f64,
    pub tx_stack: StackParams,
    pub rx_stack: StackParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerPair {
    pub tx: usize,
    pub rx: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomGrid {
    pub atoms_x: usize,
    pub atoms_z: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyPoint {
    pub penalty_init: f64,
    pub growth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BisectionSpec {
    pub threshold: f64,
    pub low_hz: f64,
    pub high_hz: f64,
    pub tolerance_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub bandwidths_hz: Option<Vec<f64>>,
    pub subcarrier_counts: Option<Vec<usize>>,
    pub layer_counts: Option<Vec<LayerPair>>,
    pub atom_grids: Option<Vec<AtomGrid>>,
    pub penalty_params: Option<Vec<PenaltyPoint>>,
    pub effective_bandwidth: Option<BisectionSpec>,
}

fn default_signal_model() -> SignalModel {
    SignalModel::TargetDiagonal
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub trials: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub workers: Option<usize>,
    pub system: SystemConfig,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default = "default_signal_model")]
    pub signal_model: SignalModel,
}

/// One validation finding, addressed by config field path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Reads and parses a config file. Parse errors (malformed JSON, unknown or
/// missing fields) surface as a single configuration error.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

/// Collects every semantic violation; an empty list means the config can run.
pub fn validate_config(cfg: &ExperimentConfig) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut push = |path: &str, message: String| {
        out.push(Diagnostic {
            path: path.to_string(),
            message,
        })
    };

    if cfg.trials == 0 {
        push("trials", "must run at least one trial".into());
    }
    let sys = &cfg.system;
    if !(sys.center_frequency_hz > 0.0) {
        push("system.center_frequency_hz", "must be positive".into());
    }
    if !(sys.bandwidth_hz > 0.0) {
        push("system.bandwidth_hz", "must be positive".into());
    }
    if sys.subcarriers == 0 {
        push("system.subcarriers", "must be at least 1".into());
    }
    if sys.streams == 0 {
        push("system.streams", "must be at least 1".into());
    }
    if sys.scatterers == 0 {
        push("system.scatterers", "path count must be at least 1".into());
    }
    if !(sys.link_distance_m
        > sys.tx_stack.total_thickness_m + sys.rx_stack.total_thickness_m)
    {
        push(
            "system.link_distance_m",
            "must exceed the combined stack thicknesses".into(),
        );
    }
    let vol = &sys.scatter_volume;
    if !(vol.axial_min_frac >= 0.0
        && vol.axial_min_frac < vol.axial_max_frac
        && vol.axial_max_frac <= 1.0)
    {
        push(
            "system.scatter_volume",
            "needs 0 <= axial_min_frac < axial_max_frac <= 1".into(),
        );
    }
    if !(vol.transverse_half_width_m > 0.0) {
        push(
            "system.scatter_volume.transverse_half_width_m",
            "must be positive".into(),
        );
    }
    for (name, stack) in [("tx_stack", &sys.tx_stack), ("rx_stack", &sys.rx_stack)] {
        let base = format!("system.{name}");
        if stack.layers == 0 {
            push(&format!("{base}.layers"), "must be at least 1".into());
        }
        if stack.atoms_x == 0 || stack.atoms_z == 0 {
            push(&format!("{base}.atoms_x/atoms_z"), "must be at least 1".into());
        }
        if !(stack.total_thickness_m > 0.0) {
            push(&format!("{base}.total_thickness_m"), "must be positive".into());
        }
        if let Some(s) = stack.atom_spacing_m {
            if !(s > 0.0) {
                push(&format!("{base}.atom_spacing_m"), "must be positive".into());
            }
        }
        if let Some(a) = stack.atom_area_m2 {
            if !(a > 0.0) {
                push(&format!("{base}.atom_area_m2"), "must be positive".into());
            }
        }
        if let Some(s) = stack.antenna_spacing_m {
            if !(s > 0.0) {
                push(&format!("{base}.antenna_spacing_m"), "must be positive".into());
            }
        }
        let full = stack.atoms_x * stack.atoms_z;
        let count = stack.atom_count.unwrap_or(full);
        if count == 0 || count > full {
            push(
                &format!("{base}.atom_count"),
                format!("must lie in 1..={full}"),
            );
        }
        if sys.streams > count {
            push(
                &format!("{base}.atom_count"),
                format!("{count} atoms cannot carry {} streams", sys.streams),
            );
        }
    }

    let solver = &cfg.solver;
    if !(solver.penalty_growth > 1.0) {
        push("solver.penalty_growth", "must exceed 1".into());
    }
    if !(solver.tx_penalty_init > 0.0 && solver.rx_penalty_init > 0.0) {
        push("solver.tx_penalty_init/rx_penalty_init", "must be positive".into());
    }
    if solver.tx_penalty_max < solver.tx_penalty_init
        || solver.rx_penalty_max < solver.rx_penalty_init
    {
        push(
            "solver.tx_penalty_max/rx_penalty_max",
            "must be at least the initial penalties".into(),
        );
    }
    if solver.max_outer_iterations == 0
        || solver.max_tx_inner_iterations == 0
        || solver.max_rx_inner_iterations == 0
    {
        push("solver.max_*_iterations", "iteration caps must be at least 1".into());
    }
    for (name, v) in [
        ("solver.objective_tol", solver.objective_tol),
        ("solver.step_tol", solver.step_tol),
        ("solver.slack_tol", solver.slack_tol),
        ("solver.overall_tol", solver.overall_tol),
        ("solver.subproblem.kkt_tol", solver.subproblem.kkt_tol),
    ] {
        if !(v > 0.0) {
            push(name, "must be positive".into());
        }
    }

    let sweep = &cfg.sweep;
    let require = |field: &str,
                   nonempty: bool,
                   out: &mut Vec<Diagnostic>| {
        if !nonempty {
            out.push(Diagnostic {
                path: format!("sweep.{field}"),
                message: format!(
                    "experiment {} needs a nonempty {field} grid",
                    cfg.experiment.as_str()
                ),
            });
        }
    };
    match cfg.experiment {
        ExperimentKind::FitErrorVsBandwidth => {
            let ok = sweep.bandwidths_hz.as_ref().is_some_and(|v| !v.is_empty());
            require("bandwidths_hz", ok, &mut out);
            if let Some(list) = &sweep.bandwidths_hz {
                if list.iter().any(|&b| !(b > 0.0)) {
                    out.push(Diagnostic {
                        path: "sweep.bandwidths_hz".into(),
                        message: "every bandwidth must be positive".into(),
                    });
                }
            }
        }
        ExperimentKind::CapacityVsSubcarriers => {
            let ok = sweep
                .subcarrier_counts
                .as_ref()
                .is_some_and(|v| !v.is_empty() && v.iter().all(|&n| n >= 1));
            require("subcarrier_counts", ok, &mut out);
        }
        ExperimentKind::CapacityVsLayers => {
            let ok = sweep
                .layer_counts
                .as_ref()
                .is_some_and(|v| !v.is_empty() && v.iter().all(|p| p.tx >= 1 && p.rx >= 1));
            require("layer_counts", ok, &mut out);
        }
        ExperimentKind::CapacityVsAtoms => {
            let ok = sweep
                .atom_grids
                .as_ref()
                .is_some_and(|v| !v.is_empty() && v.iter().all(|g| g.atoms_x >= 1 && g.atoms_z >= 1));
            require("atom_grids", ok, &mut out);
        }
        ExperimentKind::ConvergenceSweep => {
            let ok = sweep
                .penalty_params
                .as_ref()
                .is_some_and(|v| !v.is_empty() && v.iter().all(|p| p.penalty_init > 0.0 && p.growth > 1.0));
            require("penalty_params", ok, &mut out);
        }
        ExperimentKind::BaselineComparison => {}
    }
    if let Some(b) = &sweep.effective_bandwidth {
        if !(b.threshold > 0.0 && b.low_hz > 0.0 && b.low_hz < b.high_hz && b.tolerance_hz > 0.0) {
            out.push(Diagnostic {
                path: "sweep.effective_bandwidth".into(),
                message: "needs threshold > 0, 0 < low_hz < high_hz, tolerance_hz > 0".into(),
            });
        }
    }
    out
}

fn resolve_stack(params: &StackParams, streams: usize, wavelength: f64) -> StackConfig {
    StackConfig {
        num_layers: params.layers,
        atoms_x: params.atoms_x,
        atoms_z: params.atoms_z,
        atom_count: params.atom_count.unwrap_or(params.atoms_x * params.atoms_z),
        atom_spacing: params.atom_spacing_m.unwrap_or(wavelength / 2.0),
        total_thickness: params.total_thickness_m,
        atom_area: params.atom_area_m2.unwrap_or(wavelength * wavelength / 4.0),
        num_antennas: streams,
        antenna_spacing: params.antenna_spacing_m.unwrap_or(wavelength / 2.0),
    }
}

/// Builds the base physical spec and link budget from a validated config.
pub fn resolve_system(cfg: &SystemConfig) -> (SystemSpec, LinkBudget) {
    let wavelength = SPEED_OF_LIGHT / cfg.center_frequency_hz;
    let budget = LinkBudget::from_db(
        cfg.tx_power_dbm,
        cfg.noise_dbm,
        cfg.antenna_gain_dbi,
        cfg.system_loss_db,
    );
    let spec = SystemSpec {
        band: BandSpec {
            center_frequency: cfg.center_frequency_hz,
            bandwidth: cfg.bandwidth_hz,
            num_subcarriers: cfg.subcarriers,
        },
        tx: resolve_stack(&cfg.tx_stack, cfg.streams, wavelength),
        rx: resolve_stack(&cfg.rx_stack, cfg.streams, wavelength),
        channel: ChannelSpec {
            num_paths: cfg.scatterers,
            volume: ScatterVolume {
                axial_min_frac: cfg.scatter_volume.axial_min_frac,
                axial_max_frac: cfg.scatter_volume.axial_max_frac,
                transverse_half_width: cfg.scatter_volume.transverse_half_width_m,
            },
            link_distance: cfg.link_distance_m,
            antenna_gain: crate::evaluation::db_to_linear(cfg.antenna_gain_dbi),
            system_loss: crate::evaluation::db_to_linear(cfg.system_loss_db),
        },
    };
    (spec, budget)
}

/// How a grid point's trial turns a built system into a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PointMode {
    /// Optimize jointly over the whole subcarrier grid.
    MultiCarrier,
    /// Optimize the center frequency only, then evaluate over the band.
    SingleCarrier,
}

struct GridPoint {
    label: String,
    spec: SystemSpec,
    solver: SolverSettings,
    mode: PointMode,
}

fn grid_points(cfg: &ExperimentConfig) -> Vec<GridPoint> {
    let (base, _) = resolve_system(&cfg.system);
    let wavelength = SPEED_OF_LIGHT / cfg.system.center_frequency_hz;
    let mk = |label: String, spec: SystemSpec, solver: SolverSettings, mode: PointMode| GridPoint {
        label,
        spec,
        solver,
        mode,
    };
    match cfg.experiment {
        ExperimentKind::FitErrorVsBandwidth => cfg
            .sweep
            .bandwidths_hz
            .as_ref()
            .expect("validated")
            .iter()
            .map(|&b| {
                let mut spec = base.clone();
                spec.band.bandwidth = b;
                mk(
                    format!("bandwidth_hz={b}"),
                    spec,
                    cfg.solver.clone(),
                    PointMode::MultiCarrier,
                )
            })
            .collect(),
        ExperimentKind::CapacityVsSubcarriers => cfg
            .sweep
            .subcarrier_counts
            .as_ref()
            .expect("validated")
            .iter()
            .map(|&n| {
                let mut spec = base.clone();
                spec.band.num_subcarriers = n;
                mk(
                    format!("subcarriers={n}"),
                    spec,
                    cfg.solver.clone(),
                    PointMode::MultiCarrier,
                )
            })
            .collect(),
        ExperimentKind::CapacityVsLayers => cfg
            .sweep
            .layer_counts
            .as_ref()
            .expect("validated")
            .iter()
            .map(|p| {
                let mut spec = base.clone();
                spec.tx.num_layers = p.tx;
                spec.rx.num_layers = p.rx;
                mk(
                    format!("layers={}x{}", p.tx, p.rx),
                    spec,
                    cfg.solver.clone(),
                    PointMode::MultiCarrier,
                )
            })
            .collect(),
        ExperimentKind::CapacityVsAtoms => cfg
            .sweep
            .atom_grids
            .as_ref()
            .expect("validated")
            .iter()
            .map(|g| {
                let mut spec = base.clone();
                for stack in [&mut spec.tx, &mut spec.rx] {
                    stack.atoms_x = g.atoms_x;
                    stack.atoms_z = g.atoms_z;
                    stack.atom_count = g.atoms_x * g.atoms_z;
                }
                mk(
                    format!("atoms={}x{}", g.atoms_x, g.atoms_z),
                    spec,
                    cfg.solver.clone(),
                    PointMode::MultiCarrier,
                )
            })
            .collect(),
        ExperimentKind::ConvergenceSweep => cfg
            .sweep
            .penalty_params
            .as_ref()
            .expect("validated")
            .iter()
            .map(|p| {
                let mut solver = cfg.solver.clone();
                solver.tx_penalty_init = p.penalty_init;
                solver.rx_penalty_init = p.penalty_init;
                solver.penalty_growth = p.growth;
                mk(
                    format!("penalty={},growth={}", p.penalty_init, p.growth),
                    base.clone(),
                    solver,
                    PointMode::MultiCarrier,
                )
            })
            .collect(),
        ExperimentKind::BaselineComparison => {
            let (single_tx, single_rx) =
                build_single_layer_baseline(&base.tx, &base.rx, wavelength);
            let mut single_layer = base.clone();
            single_layer.tx = single_tx;
            single_layer.rx = single_rx;
            vec![
                mk(
                    "variant=multi_carrier".into(),
                    base.clone(),
                    cfg.solver.clone(),
                    PointMode::MultiCarrier,
                ),
                mk(
                    "variant=single_carrier".into(),
                    base.clone(),
                    cfg.solver.clone(),
                    PointMode::SingleCarrier,
                ),
                mk(
                    "variant=single_layer".into(),
                    single_layer,
                    cfg.solver.clone(),
                    PointMode::MultiCarrier,
                ),
            ]
        }
    }
}

struct TrialDetail {
    capacity: CapacityReport,
    optimization: OptimizationReport,
}

fn run_trial(
    point: &GridPoint,
    point_index: usize,
    trial_seed: u64,
    budget: &LinkBudget,
    model: SignalModel,
) -> Result<(TrialOutcome, TrialDetail)> {
    let channel_seed = derive_seed(trial_seed, 0);
    let solver_seed = derive_seed(trial_seed, 101 + point_index as u64);
    let system = point.spec.build(channel_seed)?;
    let solver = SolverSettings {
        seed: solver_seed,
        ..point.solver.clone()
    };
    let (capacity, optimization) = match point.mode {
        PointMode::MultiCarrier => {
            let (state, report) = system.optimize(&solver);
            (evaluate_capacity(&system, &state, budget, model)?, report)
        }
        PointMode::SingleCarrier => {
            let (_, cap, report) = run_baseline_single_carrier(&system, &solver, budget, model)?;
            (cap, report)
        }
    };
    let outcome = TrialOutcome::from_parts(&capacity, &optimization);
    Ok((
        outcome,
        TrialDetail {
            capacity,
            optimization,
        },
    ))
}

struct CsvFiles {
    subcarriers: File,
    trials: File,
    summary: File,
    probes: Option<File>,
    iterations: Option<File>,
}

const SUBCARRIER_HEADER: &str =
    "point,trial,seed,subcarrier,frequency_hz,nmse,spectral_efficiency_bps_hz,stream_powers_w\n";
const TRIAL_HEADER: &str =
    "point,trial,seed,nmse,capacity_bps,converged,convergence_reason,outer_iterations,restarts\n";
const SUMMARY_HEADER: &str = "point,trials,completed,failures,mean_nmse,std_nmse,mean_capacity_bps,std_capacity_bps,mc_win_rate\n";
const PROBE_HEADER: &str = "probe,kind,bandwidth_hz,omega,converged\n";

/// Artifact names a run produces (probes/iterations only for the kinds that
/// use them).
pub fn artifact_names(kind: ExperimentKind, with_bisection: bool) -> Vec<&'static str> {
    let mut names = vec!["subcarriers.csv", "trials.csv", "summary.csv", "manifest.json"];
    if with_bisection {
        names.push("probes.csv");
    }
    if kind == ExperimentKind::ConvergenceSweep {
        names.push("iterations.jsonl");
    }
    names
}

/// Outcome of a completed run.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub points: usize,
    pub trials: usize,
    pub failures: usize,
    pub effective_bandwidth_hz: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub overwrite: bool,
}

fn format_powers(powers: &[f64]) -> String {
    powers
        .iter()
        .map(|p| p.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

/// Executes a validated config and writes all artifacts.
///
/// Fails before writing anything if artifacts already exist and `overwrite`
/// is off. A mid-run failure still writes the manifest, with a failure
/// status, next to whatever point data had completed.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    output_dir: &Path,
    options: RunOptions,
) -> Result<RunSummary> {
    let diagnostics = validate_config(cfg);
    if !diagnostics.is_empty() {
        let text = diagnostics
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::InvalidConfig(text));
    }
    let with_bisection = cfg.sweep.effective_bandwidth.is_some()
        && cfg.experiment == ExperimentKind::FitErrorVsBandwidth;
    let names = artifact_names(cfg.experiment, with_bisection);
    if !options.overwrite {
        for name in &names {
            let path = output_dir.join(name);
            if path.exists() {
                return Err(Error::InvalidInput(format!(
                    "{} already exists; pass --overwrite to replace it",
                    path.display()
                )));
            }
        }
    }
    std::fs::create_dir_all(output_dir)?;

    let started = std::time::Instant::now();
    let started_unix = unix_now();
    let result = execute(cfg, output_dir, with_bisection);
    let (status, error, summary) = match &result {
        Ok(s) => ("complete".to_string(), None, Some(s)),
        Err(e) => ("failed".to_string(), Some(e.to_string()), None),
    };

    let manifest = serde_json::json!({
        "status": status,
        "error": error,
        "experiment": cfg.experiment.as_str(),
        "config": serde_json::to_value(cfg)?,
        "config_digest": format!("{:016x}", config_digest(cfg)),
        "master_seed": cfg.master_seed,
        "trials": cfg.trials,
        "trial_seeds": (0..cfg.trials).map(|t| derive_seed(cfg.master_seed, t as u64)).collect::<Vec<_>>(),
        "crate_version": env!("CARGO_PKG_VERSION"),
        "started_unix_s": started_unix,
        "finished_unix_s": unix_now(),
        "wall_clock_s": started.elapsed().as_secs_f64(),
        "artifacts": names,
        "effective_bandwidth_hz": summary.and_then(|s| s.effective_bandwidth_hz),
    });
    let mut f = File::create(output_dir.join("manifest.json"))?;
    f.write_all(serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    f.write_all(b"\n")?;

    result
}

fn unix_now() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Stable digest of the full experiment config.
pub fn config_digest(cfg: &ExperimentConfig) -> u64 {
    let text = serde_json::to_string(cfg).unwrap_or_default();
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for byte in text.as_bytes() {
        hash ^= *byte as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash
}

fn execute(cfg: &ExperimentConfig, output_dir: &Path, with_bisection: bool) -> Result<RunSummary> {
    let (_, budget) = resolve_system(&cfg.system);
    let points = grid_points(cfg);
    let mut files = CsvFiles {
        subcarriers: File::create(output_dir.join("subcarriers.csv"))?,
        trials: File::create(output_dir.join("trials.csv"))?,
        summary: File::create(output_dir.join("summary.csv"))?,
        probes: None,
        iterations: if cfg.experiment == ExperimentKind::ConvergenceSweep {
            Some(File::create(output_dir.join("iterations.jsonl"))?)
        } else {
            None
        },
    };
    files.subcarriers.write_all(SUBCARRIER_HEADER.as_bytes())?;
    files.trials.write_all(TRIAL_HEADER.as_bytes())?;
    files.summary.write_all(SUMMARY_HEADER.as_bytes())?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidInput(format!("worker pool: {e}")))?;

    let mut total_failures = 0;
    // capacity of the multi-carrier variant per trial, for win-rate pairing
    let mut reference_capacity: Vec<Option<f64>> = vec![None; cfg.trials];

    for (point_index, point) in points.iter().enumerate() {
        let details: Mutex<Vec<Option<TrialDetail>>> =
            Mutex::new((0..cfg.trials).map(|_| None).collect());
        let report = pool.install(|| {
            monte_carlo(cfg.trials, cfg.master_seed, |trial, seed| {
                let (outcome, detail) = run_trial(point, point_index, seed, &budget, cfg.signal_model)?;
                details.lock().unwrap()[trial] = Some(detail);
                Ok(outcome)
            })
        });
        let details = details.into_inner().unwrap();
        total_failures += report.failures;

        for row in &report.rows {
            let detail = details[row.trial].as_ref();
            if let (Some(outcome), Some(detail)) = (row.outcome.as_ref(), detail) {
                for (i, m) in detail.capacity.per_subcarrier.iter().enumerate() {
                    writeln!(
                        files.subcarriers,
                        "{},{},{},{},{},{},{},{}",
                        point.label,
                        row.trial,
                        row.seed,
                        i + 1,
                        m.frequency,
                        m.nmse,
                        m.spectral_efficiency,
                        format_powers(&m.stream_powers)
                    )?;
                }
                writeln!(
                    files.trials,
                    "{},{},{},{},{},{},{},{},{}",
                    point.label,
                    row.trial,
                    row.seed,
                    outcome.nmse,
                    outcome.capacity_bps,
                    outcome.converged,
                    detail.optimization.reason.as_str(),
                    detail.optimization.outer_history.len(),
                    detail.optimization.restarts
                )?;
                if let Some(iters) = files.iterations.as_mut() {
                    for rec in &detail.optimization.outer_history {
                        let line = serde_json::json!({
                            "point": point.label,
                            "trial": row.trial,
                            "seed": row.seed,
                            "outer": rec.outer,
                            "gamma": rec.gamma,
                            "penalized": rec.penalized,
                            "alpha": rec.alpha,
                            "max_slack_l1": rec.max_slack_l1,
                            "inner_iterations": rec.inner_iterations,
                            "restarts": rec.restarts,
                        });
                        writeln!(iters, "{line}")?;
                    }
                }
                if point_index == 0 {
                    reference_capacity[row.trial] = Some(outcome.capacity_bps);
                }
            } else {
                writeln!(
                    files.trials,
                    "{},{},{},,,false,{},0,0",
                    point.label,
                    row.trial,
                    row.seed,
                    row.error.as_deref().unwrap_or("failed")
                )?;
            }
        }

        // win rate of the first grid point over this one, paired by trial
        let win_rate = if cfg.experiment == ExperimentKind::BaselineComparison && point_index > 0 {
            let mut wins = 0usize;
            let mut paired = 0usize;
            for row in &report.rows {
                if let (Some(reference), Some(outcome)) =
                    (reference_capacity[row.trial], row.outcome.as_ref())
                {
                    paired += 1;
                    if reference > outcome.capacity_bps {
                        wins += 1;
                    }
                }
            }
            if paired > 0 {
                (wins as f64 / paired as f64).to_string()
            } else {
                String::new()
            }
        } else {
            String::new()
        };
        writeln!(
            files.summary,
            "{},{},{},{},{},{},{},{},{}",
            point.label,
            cfg.trials,
            report.completed,
            report.failures,
            report.mean_nmse,
            report.std_nmse,
            report.mean_capacity_bps,
            report.std_capacity_bps,
            win_rate
        )?;
    }

    // optional effective-bandwidth bisection on one dedicated channel draw
    let mut effective_bandwidth = None;
    if with_bisection {
        let bis = cfg.sweep.effective_bandwidth.as_ref().expect("checked");
        let (base, _) = resolve_system(&cfg.system);
        let channel_seed = derive_seed(cfg.master_seed, 0xB15E);
        let base_system = base.build(channel_seed)?;
        let result: BisectionResult = bisect_effective_bandwidth(
            &base.band,
            bis.threshold,
            bis.low_hz,
            bis.high_hz,
            bis.tolerance_hz,
            &cfg.solver,
            derive_seed(cfg.master_seed, 0xB15E + 1),
            |band| {
                let sys = base_system.with_band(band).expect("band rebuild");
                (sys.contexts, sys.transfers)
            },
        )?;
        let mut probe_file = File::create(output_dir.join("probes.csv"))?;
        probe_file.write_all(PROBE_HEADER.as_bytes())?;
        for p in &result.probes {
            writeln!(
                probe_file,
                "{},{:?},{},{},{}",
                p.index, p.kind, p.bandwidth, p.omega, p.converged
            )?;
        }
        files.probes = Some(probe_file);
        effective_bandwidth = Some(result.effective_bandwidth);
    }

    Ok(RunSummary {
        output_dir: output_dir.to_path_buf(),
        points: points.len(),
        trials: cfg.trials,
        failures: total_failures,
        effective_bandwidth_hz: effective_bandwidth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_config(kind: ExperimentKind) -> ExperimentConfig {
        let stack = StackParams {
            layers: 1,
            atoms_x: 2,
            atoms_z: 2,
            atom_count: None,
            atom_spacing_m: None,
            total_thickness_m: 0.05,
            atom_area_m2: None,
            antenna_spacing_m: None,
        };
        ExperimentConfig {
            experiment: kind,
            output_dir: None,
            trials: 1,
            master_seed: 1,
            workers: Some(1),
            system: SystemConfig {
                center_frequency_hz: 28e9,
                bandwidth_hz: 1e6,
                subcarriers: 1,
                streams: 1,
                link_distance_m: 250.0,
                scatterers: 6,
                scatter_volume: VolumeParams::default(),
                tx_power_dbm: 20.0,
                noise_dbm: -110.0,
                antenna_gain_dbi: 9.0,
                system_loss_db: 3.0,
                tx_stack: stack.clone(),
                rx_stack: stack,
            },
            solver: SolverSettings {
                max_outer_iterations: 4,
                ..SolverSettings::default()
            },
            sweep: SweepConfig::default(),
            signal_model: SignalModel::TargetDiagonal,
        }
    }

    #[test]
    fn validation_collects_all_violations_with_paths() {
        let mut cfg = minimal_config(ExperimentKind::ConvergenceSweep);
        cfg.solver.penalty_growth = 0.9;
        cfg.system.subcarriers = 0;
        cfg.trials = 0;
        let diags = validate_config(&cfg);
        let paths: Vec<&str> = diags.iter().map(|d| d.path.as_str()).collect();
        assert!(paths.contains(&"solver.penalty_growth"));
        assert!(paths.contains(&"system.subcarriers"));
        assert!(paths.contains(&"trials"));
        assert!(paths.contains(&"sweep.penalty_params"));
        assert!(diags.len() >= 4);
    }

    #[test]
    fn valid_config_has_no_diagnostics() {
        let mut cfg = minimal_config(ExperimentKind::BaselineComparison);
        assert!(validate_config(&cfg).is_empty());
        cfg.experiment = ExperimentKind::FitErrorVsBandwidth;
        cfg.sweep.bandwidths_hz = Some(vec![1e6, 2e6]);
        assert!(validate_config(&cfg).is_empty());
    }

    #[test]
    fn config_roundtrips_through_json() {
        let mut cfg = minimal_config(ExperimentKind::CapacityVsLayers);
        cfg.sweep.layer_counts = Some(vec![LayerPair { tx: 1, rx: 2 }]);
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
        // unknown fields are rejected at parse time
        let broken = text.replace("\"trials\"", "\"trails\"");
        assert!(serde_json::from_str::<ExperimentConfig>(&broken).is_err());
    }

    #[test]
    fn grid_point_labels_and_specs() {
        let mut cfg = minimal_config(ExperimentKind::CapacityVsLayers);
        cfg.sweep.layer_counts = Some(vec![
            LayerPair { tx: 1, rx: 1 },
            LayerPair { tx: 2, rx: 3 },
        ]);
        let points = grid_points(&cfg);
        assert_eq!(points.len(), 2);
        assert_eq!(points[1].label, "layers=2x3");
        assert_eq!(points[1].spec.tx.num_layers, 2);
        assert_eq!(points[1].spec.rx.num_layers, 3);

        let base = minimal_config(ExperimentKind::BaselineComparison);
        let points = grid_points(&base);
        assert_eq!(points.len(), 3);
        assert_eq!(points[0].label, "variant=multi_carrier");
        assert_eq!(points[1].mode, PointMode::SingleCarrier);
        assert_eq!(points[2].spec.tx.num_layers, 1);
        assert_eq!(points[2].spec.tx.atoms(), 4);
    }

    #[test]
    fn minimal_run_emits_expected_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = minimal_config(ExperimentKind::BaselineComparison);
        let summary = run_experiment(&cfg, dir.path(), RunOptions { overwrite: false }).unwrap();
        assert_eq!(summary.points, 3);
        assert_eq!(summary.failures, 0);
        for name in ["subcarriers.csv", "trials.csv", "summary.csv", "manifest.json"] {
            assert!(dir.path().join(name).exists(), "{name} missing");
        }
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap())
                .unwrap();
        assert_eq!(manifest["status"], "complete");
        assert_eq!(manifest["trials"], 1);

        // a second run without --overwrite refuses to clobber
        let again = run_experiment(&cfg, dir.path(), RunOptions { overwrite: false });
        assert!(again.is_err());
        let forced = run_experiment(&cfg, dir.path(), RunOptions { overwrite: true });
        assert!(forced.is_ok());
    }

    #[test]
    fn reruns_are_byte_identical() {
        let cfg = {
            let mut c = minimal_config(ExperimentKind::CapacityVsSubcarriers);
            c.trials = 2;
            c.sweep.subcarrier_counts = Some(vec![1, 2]);
            c
        };
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        run_experiment(&cfg, dir_a.path(), RunOptions { overwrite: false }).unwrap();
        run_experiment(&cfg, dir_b.path(), RunOptions { overwrite: false }).unwrap();
        for name in ["subcarriers.csv", "trials.csv", "summary.csv"] {
            let a = std::fs::read(dir_a.path().join(name)).unwrap();
            let b = std::fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }
    }

    #[test]
    fn convergence_sweep_writes_iteration_stream() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = minimal_config(ExperimentKind::ConvergenceSweep);
        cfg.sweep.penalty_params = Some(vec![
            PenaltyPoint {
                penalty_init: 0.6,
                growth: 1.3,
            },
            PenaltyPoint {
                penalty_init: 2.0,
                growth: 1.1,
            },
        ]);
        run_experiment(&cfg, dir.path(), RunOptions { overwrite: false }).unwrap();
        let text = std::fs::read_to_string(dir.path().join("iterations.jsonl")).unwrap();
        assert!(!text.is_empty());
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v.get("gamma").is_some());
            assert!(v.get("point").is_some());
        }
    }

    #[test]
    fn bandwidth_experiment_with_bisection_writes_probe_log() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = minimal_config(ExperimentKind::FitErrorVsBandwidth);
        cfg.sweep.bandwidths_hz = Some(vec![1e6]);
        cfg.sweep.effective_bandwidth = Some(BisectionSpec {
            threshold: 0.0065,
            low_hz: 1e6,
            high_hz: 16e6,
            tolerance_hz: 4e6,
        });
        let summary = run_experiment(&cfg, dir.path(), RunOptions { overwrite: false }).unwrap();
        assert!(summary.effective_bandwidth_hz.is_some());
        let probes = std::fs::read_to_string(dir.path().join("probes.csv")).unwrap();
        assert!(probes.lines().count() >= 3, "{probes}");
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap())
                .unwrap();
        assert!(manifest["effective_bandwidth_hz"].is_number());
    }

    #[test]
    fn invalid_config_fails_before_writing() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = minimal_config(ExperimentKind::FitErrorVsBandwidth);
        cfg.sweep.bandwidths_hz = None;
        let r = run_experiment(&cfg, dir.path(), RunOptions { overwrite: false });
        assert!(r.is_err());
        assert!(!dir.path().join("summary.csv").exists());
    }
}
