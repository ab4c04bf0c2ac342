//! Capacity metrics, baselines, and Monte-Carlo aggregation.
//!
//! Power is allocated jointly over subcarriers and spatial streams by exact
//! water-filling on the effective gains `|alpha * lambda_{i,s}|^2`. The
//! per-subcarrier spectral efficiency treats residual off-diagonal leakage of
//! the achieved end-to-end channel as interference, and capacity integrates
//! it over the subcarrier grid. All dB-valued inputs are converted to linear
//! watts at the configuration boundary; everything here is linear scale.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::StackConfig;
use crate::objective::end_to_end;
use crate::optimizer::{ConvergenceReason, OptimizationReport, SolverSettings};
use crate::propagation::PhaseState;
use crate::seeding::derive_seed;
use crate::system::SimSystem;

/// Link power budget, linear scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    /// Total transmit power in watts.
    pub transmit_power: f64,
    /// Receiver noise power in watts.
    pub noise_power: f64,
    pub antenna_gain: f64,
    pub system_loss: f64,
}

impl LinkBudget {
    /// Converts the usual dB-valued link parameters to linear watts.
    pub fn from_db(
        tx_power_dbm: f64,
        noise_dbm: f64,
        antenna_gain_dbi: f64,
        system_loss_db: f64,
    ) -> Self {
        LinkBudget {
            transmit_power: dbm_to_watts(tx_power_dbm),
            noise_power: dbm_to_watts(noise_dbm),
            antenna_gain: db_to_linear(antenna_gain_dbi),
            system_loss: db_to_linear(system_loss_db),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.transmit_power > 0.0
            && self.noise_power > 0.0
            && self.antenna_gain > 0.0
            && self.system_loss > 0.0)
        {
            return Err(Error::InvalidConfig(
                "link budget entries must be positive".into(),
            ));
        }
        Ok(())
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    1e-3 * 10f64.powf(dbm / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Water-filling solution over a flat list of effective gains.
#[derive(Debug, Clone, PartialEq)]
pub struct Waterfill {
    /// Power per gain entry; zero where the floor sits above the water level.
    pub powers: Vec<f64>,
    pub level: f64,
}

/// Exact water-filling: solves the piecewise-linear budget equation on the
/// sorted noise floors, so the powers satisfy
/// `p_j = max(0, level - noise/gain_j)` and sum to the budget to rounding.
pub fn waterfill(gains: &[f64], noise_power: f64, total_power: f64) -> Result<Waterfill> {
    if gains.is_empty() {
        return Err(Error::InvalidInput("no gains supplied".into()));
    }
    if !(noise_power > 0.0) || !(total_power > 0.0) {
        return Err(Error::InvalidInput(
            "noise and total power must be positive".into(),
        ));
    }
    if gains.iter().any(|&g| g < 0.0) {
        return Err(Error::InvalidInput("gains must be nonnegative".into()));
    }
    let mut order: Vec<usize> = (0..gains.len()).filter(|&j| gains[j] > 0.0).collect();
    if order.is_empty() {
        return Err(Error::Degenerate("all gains are zero".into()));
    }
    let floor = |j: usize| noise_power / gains[j];
    order.sort_by(|&a, &b| floor(a).partial_cmp(&floor(b)).unwrap());

    let mut level = 0.0;
    let mut active = 0;
    let mut prefix = 0.0;
    for (k, &j) in order.iter().enumerate() {
        prefix += floor(j);
        let candidate = (total_power + prefix) / (k + 1) as f64;
        if candidate > floor(j) {
            level = candidate;
            active = k + 1;
        }
    }
    let mut powers = vec![0.0; gains.len()];
    for &j in order.iter().take(active) {
        powers[j] = level - floor(j);
    }
    Ok(Waterfill { powers, level })
}

/// Which diagonal feeds the signal term of the spectral efficiency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalModel {
    /// The target singular values (the printed formula).
    TargetDiagonal,
    /// The magnitudes actually achieved on the diagonal.
    AchievedDiagonal,
}

/// Per-subcarrier spectral efficiency in bits/s/Hz:
/// `sum_s log2(1 + p_s |alpha sig_s|^2 / (sum_{s'!=s} p_{s'} |alpha h_{s,s'}|^2 + noise))`
/// where `h` is the achieved end-to-end matrix and `sig` the signal diagonal
/// selected by `model`.
pub fn spectral_efficiency(
    achieved: &DMatrix<Complex64>,
    target: &[f64],
    powers: &[f64],
    alpha: f64,
    noise_power: f64,
    model: SignalModel,
) -> Result<f64> {
    let streams = target.len();
    assert_eq!(achieved.nrows(), streams, "achieved matrix shape");
    assert_eq!(achieved.ncols(), streams, "achieved matrix shape");
    assert_eq!(powers.len(), streams, "one power per stream");
    if powers.iter().any(|&p| p < 0.0) {
        return Err(Error::InvalidInput("negative stream power".into()));
    }
    let alpha_sq = alpha * alpha;
    let mut eta = 0.0;
    for s in 0..streams {
        let signal_amp = match model {
            SignalModel::TargetDiagonal => target[s],
            SignalModel::AchievedDiagonal => achieved[(s, s)].norm(),
        };
        let signal = powers[s] * alpha_sq * signal_amp * signal_amp;
        let mut interference = 0.0;
        for (sp, &p) in powers.iter().enumerate() {
            if sp != s {
                interference += p * alpha_sq * achieved[(s, sp)].norm_sqr();
            }
        }
        eta += (1.0 + signal / (interference + noise_power)).log2();
    }
    Ok(eta)
}

/// Band capacity in bits/s: `sum_i spacing * eta_i`.
pub fn capacity(spectral_efficiencies: &[f64], spacing: f64) -> f64 {
    spectral_efficiencies.iter().sum::<f64>() * spacing
}

/// Per-subcarrier evaluation row.
#[derive(Debug, Clone, Serialize)]
pub struct SubcarrierMetrics {
    pub frequency: f64,
    /// `||alpha H_i - D_i||_F^2 / ||D_i||_F^2`.
    pub nmse: f64,
    pub spectral_efficiency: f64,
    pub stream_powers: Vec<f64>,
}

/// Capacity and fitting metrics of one configured link.
#[derive(Debug, Clone, Serialize)]
pub struct CapacityReport {
    pub per_subcarrier: Vec<SubcarrierMetrics>,
    /// Summed per-subcarrier normalized error (one Monte-Carlo sample of the
    /// NMSE metric).
    pub nmse: f64,
    pub capacity_bps: f64,
    pub water_level: f64,
    pub alpha: f64,
    /// Seed of the channel realization this report was computed on.
    pub channel_seed: u64,
    /// Stable digest of the system spec, for pairing rows across runs.
    pub config_digest: u64,
}

/// Evaluates a phase configuration on a system: exact water-filling over the
/// effective gains `|alpha lambda_{i,s}|^2`, then spectral efficiency with
/// residual-interference accounting, then band capacity.
pub fn evaluate_capacity(
    system: &SimSystem,
    state: &PhaseState,
    budget: &LinkBudget,
    model: SignalModel,
) -> Result<CapacityReport> {
    budget.validate()?;
    let streams = system.spec.streams();
    let contexts = &system.contexts;
    let n_sc = contexts.len();

    let mut gains = Vec::with_capacity(n_sc * streams);
    for ctx in contexts {
        for s in 0..streams {
            let g = state.alpha * ctx.target[s];
            gains.push(g * g);
        }
    }
    let fill = waterfill(&gains, budget.noise_power, budget.transmit_power)?;

    let mut per_subcarrier = Vec::with_capacity(n_sc);
    let mut nmse_total = 0.0;
    let mut etas = Vec::with_capacity(n_sc);
    for (i, ctx) in contexts.iter().enumerate() {
        let h = end_to_end(state, contexts, &system.transfers, i);
        let powers = &fill.powers[i * streams..(i + 1) * streams];
        let eta = spectral_efficiency(
            &h,
            ctx.target.as_slice(),
            powers,
            state.alpha,
            budget.noise_power,
            model,
        )?;
        let alpha_c = Complex64::new(state.alpha, 0.0);
        let mut err = 0.0;
        for r in 0..streams {
            for c in 0..streams {
                let want = if r == c {
                    Complex64::new(ctx.target[r], 0.0)
                } else {
                    Complex64::default()
                };
                err += (alpha_c * h[(r, c)] - want).norm_sqr();
            }
        }
        let nmse_i = err / ctx.target_norm_sq();
        nmse_total += nmse_i;
        etas.push(eta);
        per_subcarrier.push(SubcarrierMetrics {
            frequency: ctx.frequency,
            nmse: nmse_i,
            spectral_efficiency: eta,
            stream_powers: powers.to_vec(),
        });
    }

    Ok(CapacityReport {
        per_subcarrier,
        nmse: nmse_total,
        capacity_bps: capacity(&etas, system.spec.band.spacing()),
        water_level: fill.level,
        alpha: state.alpha,
        channel_seed: system.channel_seed,
        config_digest: spec_digest(&system.spec),
    })
}

/// Stable FNV-1a digest of the serialized system spec.
pub fn spec_digest(spec: &crate::system::SystemSpec) -> u64 {
    let text = serde_json::to_string(spec).unwrap_or_default();
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for byte in text.as_bytes() {
        hash ^= *byte as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash
}

/// The single-carrier baseline: phases optimized for the center frequency
/// only, then frozen and evaluated across the whole band.
pub fn run_baseline_single_carrier(
    system: &SimSystem,
    settings: &SolverSettings,
    budget: &LinkBudget,
    model: SignalModel,
) -> Result<(PhaseState, CapacityReport, OptimizationReport)> {
    let narrow = system.single_carrier()?;
    let (state, report) = narrow.optimize(settings);
    let capacity_report = evaluate_capacity(system, &state, budget, model)?;
    Ok((state, capacity_report, report))
}

/// Reshapes each stack into a single layer holding the same total number of
/// meta-atoms on a `ceil(sqrt(total))`-sided grid with pitch
/// `5 lambda0 / ceil(sqrt(total))`, which preserves the overall metasurface
/// extent. All other parameters are inherited.
pub fn build_single_layer_baseline(
    tx: &StackConfig,
    rx: &StackConfig,
    wavelength: f64,
) -> (StackConfig, StackConfig) {
    let reshape = |cfg: &StackConfig| {
        let total = cfg.atoms() * cfg.num_layers;
        let side = (total as f64).sqrt().ceil() as usize;
        StackConfig {
            num_layers: 1,
            atoms_x: side,
            atoms_z: side,
            atom_count: total,
            atom_spacing: 5.0 * wavelength / side as f64,
            ..cfg.clone()
        }
    };
    (reshape(tx), reshape(rx))
}

/// One Monte-Carlo trial result.
#[derive(Debug, Clone, Serialize)]
pub struct TrialOutcome {
    pub nmse: f64,
    pub capacity_bps: f64,
    pub converged: bool,
}

impl TrialOutcome {
    pub fn from_parts(report: &CapacityReport, opt: &OptimizationReport) -> Self {
        TrialOutcome {
            nmse: report.nmse,
            capacity_bps: report.capacity_bps,
            converged: opt.reason != ConvergenceReason::BudgetExhausted,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialRow {
    pub trial: usize,
    pub seed: u64,
    pub outcome: Option<TrialOutcome>,
    pub error: Option<String>,
}

/// Aggregate over independent trials.
#[derive(Debug, Clone, Serialize)]
pub struct MonteCarloReport {
    pub rows: Vec<TrialRow>,
    pub completed: usize,
    pub failures: usize,
    pub mean_nmse: f64,
    pub std_nmse: f64,
    pub mean_capacity_bps: f64,
    pub std_capacity_bps: f64,
}

/// Runs `num_trials` independent trials with per-trial seeds derived from the
/// master seed, in parallel, and aggregates in trial order. Trial failures
/// are recorded and excluded from the aggregate rather than aborting the
/// campaign. Deterministic for a fixed master seed.
pub fn monte_carlo<F>(num_trials: usize, master_seed: u64, run: F) -> MonteCarloReport
where
    F: Fn(usize, u64) -> Result<TrialOutcome> + Sync,
{
    assert!(num_trials >= 1, "at least one trial required");
    let rows: Vec<TrialRow> = (0..num_trials)
        .into_par_iter()
        .map(|trial| {
            let seed = derive_seed(master_seed, trial as u64);
            match run(trial, seed) {
                Ok(outcome) => TrialRow {
                    trial,
                    seed,
                    outcome: Some(outcome),
                    error: None,
                },
                Err(e) => TrialRow {
                    trial,
                    seed,
                    outcome: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();

    let ok: Vec<&TrialOutcome> = rows.iter().filter_map(|r| r.outcome.as_ref()).collect();
    let completed = ok.len();
    let failures = num_trials - completed;
    let mean = |f: &dyn Fn(&TrialOutcome) -> f64| -> f64 {
        if completed == 0 {
            f64::NAN
        } else {
            ok.iter().map(|o| f(o)).sum::<f64>() / completed as f64
        }
    };
    let std = |f: &dyn Fn(&TrialOutcome) -> f64, mean: f64| -> f64 {
        if completed < 2 {
            0.0
        } else {
            (ok.iter().map(|o| (f(o) - mean).powi(2)).sum::<f64>() / (completed as f64 - 1.0))
                .sqrt()
        }
    };
    let mean_nmse = mean(&|o: &TrialOutcome| o.nmse);
    let std_nmse = std(&|o: &TrialOutcome| o.nmse, mean_nmse);
    let mean_capacity = mean(&|o: &TrialOutcome| o.capacity_bps);
    let std_capacity = std(&|o: &TrialOutcome| o.capacity_bps, mean_capacity);
    MonteCarloReport {
        rows,
        completed,
        failures,
        mean_nmse,
        std_nmse,
        mean_capacity_bps: mean_capacity,
        std_capacity_bps: std_capacity,
    }
}
