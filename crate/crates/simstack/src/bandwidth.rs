//! Subcarrier grids and the effective-bandwidth search.
//!
//! The effective bandwidth is the widest band over which the optimized
//! cascade keeps the normalized fitting error under a threshold. Each probe
//! of a candidate bandwidth re-optimizes the phases from scratch with a seed
//! derived from the probe index, and a bisection narrows the feasible
//! bracket. Bisection is correct under the working assumption that the error
//! crosses the threshold once; no global monotonicity is required or checked.

use serde::{Deserialize, Serialize};

use crate::channel::SubcarrierContext;
use crate::error::{Error, Result};
use crate::optimizer::{bcd_pccp, ConvergenceReason, SolverSettings};
use crate::propagation::{PhaseState, TransferSet};
use crate::seeding::derive_seed;

/// A symmetric subcarrier grid: `f_i = f0 + (i - (Ne+1)/2) * B/Ne` for
/// `i = 1..=Ne`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub center_frequency: f64,
    pub bandwidth: f64,
    pub num_subcarriers: usize,
}

impl BandSpec {
    pub fn new(center_frequency: f64, bandwidth: f64, num_subcarriers: usize) -> Result<Self> {
        let spec = BandSpec {
            center_frequency,
            bandwidth,
            num_subcarriers,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_subcarriers == 0 {
            return Err(Error::InvalidConfig("subcarrier count must be >= 1".into()));
        }
        if !(self.bandwidth > 0.0) {
            return Err(Error::InvalidConfig("bandwidth must be positive".into()));
        }
        if !(self.center_frequency > 0.0) {
            return Err(Error::InvalidConfig("center frequency must be positive".into()));
        }
        let lowest = self.center_frequency
            + (1.0 - (self.num_subcarriers as f64 + 1.0) / 2.0) * self.spacing();
        if !(lowest > 0.0) {
            return Err(Error::InvalidConfig(
                "band extends to non-positive frequencies".into(),
            ));
        }
        Ok(())
    }

    /// Subcarrier spacing `B / Ne`.
    pub fn spacing(&self) -> f64 {
        self.bandwidth / self.num_subcarriers as f64
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let df = self.spacing();
        let half = (self.num_subcarriers as f64 + 1.0) / 2.0;
        (1..=self.num_subcarriers)
            .map(|i| self.center_frequency + (i as f64 - half) * df)
            .collect()
    }

    /// The single-carrier band at the same center frequency.
    pub fn single_carrier(&self) -> BandSpec {
        BandSpec {
            center_frequency: self.center_frequency,
            bandwidth: self.bandwidth,
            num_subcarriers: 1,
        }
    }
}

/// Result of probing one candidate bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbeOutcome {
    /// Normalized fitting error of the optimized configuration.
    pub omega: f64,
    /// False when the optimizer exhausted its restart budget.
    pub converged: bool,
}

/// Builds the system for `band`, optimizes phases from a seeded random
/// initialization, and returns the final normalized fitting error.
pub fn normalized_fit<B>(
    band: &BandSpec,
    mut builder: B,
    settings: &SolverSettings,
    seed: u64,
) -> ProbeOutcome
where
    B: FnMut(&BandSpec) -> (Vec<SubcarrierContext>, TransferSet),
{
    use rand::SeedableRng;
    let (contexts, transfers) = builder(band);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let init = PhaseState::random(transfers.dims(), &mut rng);
    let run_settings = SolverSettings {
        seed: derive_seed(seed, 1),
        ..settings.clone()
    };
    let (_, report) = bcd_pccp(&contexts, &transfers, &run_settings, init);
    ProbeOutcome {
        omega: report.final_nmse,
        converged: report.reason != ConvergenceReason::BudgetExhausted,
    }
}

/// What a bisection probe evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    LowerEndpoint,
    UpperEndpoint,
    Midpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbeRecord {
    pub index: usize,
    pub kind: ProbeKind,
    pub bandwidth: f64,
    pub omega: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct BisectionResult {
    /// Widest probed bandwidth whose error stays under the threshold.
    pub effective_bandwidth: f64,
    pub probes: Vec<ProbeRecord>,
    /// Midpoint evaluations spent; never exceeds `probe_bound`.
    pub midpoint_probes: usize,
    /// `ceil(log2(range / tolerance))`.
    pub probe_bound: usize,
}

/// Bisects the threshold crossing of `probe` over `[b_low, b_high]`.
///
/// The two endpoints are evaluated first: an infeasible lower endpoint is an
/// error, a feasible upper endpoint returns immediately. Otherwise midpoint
/// probes (at most `ceil(log2(range/tol))`) shrink the bracket to `tol_hz`
/// and the feasible lower end is returned, which is then within `tol_hz` of
/// the crossing.
pub fn bisect_with_probe<P>(
    threshold: f64,
    b_low: f64,
    b_high: f64,
    tol_hz: f64,
    mut probe: P,
) -> Result<BisectionResult>
where
    P: FnMut(usize, f64) -> ProbeOutcome,
{
    if !(threshold > 0.0 && tol_hz > 0.0 && b_low < b_high && b_low > 0.0) {
        return Err(Error::InvalidInput(
            "bisection needs 0 < b_low < b_high and positive threshold/tolerance".into(),
        ));
    }
    let probe_bound = ((b_high - b_low) / tol_hz).log2().ceil().max(0.0) as usize;
    let mut probes = Vec::new();
    let mut run = |index: usize, kind: ProbeKind, bandwidth: f64, probes: &mut Vec<ProbeRecord>| {
        let out = probe(index, bandwidth);
        probes.push(ProbeRecord {
            index,
            kind,
            bandwidth,
            omega: out.omega,
            converged: out.converged,
        });
        out
    };

    let low = run(0, ProbeKind::LowerEndpoint, b_low, &mut probes);
    if low.omega > threshold {
        return Err(Error::Infeasible(format!(
            "error {} at the lower bracket {} already exceeds the threshold {}",
            low.omega, b_low, threshold
        )));
    }
    let high = run(1, ProbeKind::UpperEndpoint, b_high, &mut probes);
    if high.omega <= threshold {
        return Ok(BisectionResult {
            effective_bandwidth: b_high,
            probes,
            midpoint_probes: 0,
            probe_bound,
        });
    }

    let (mut lo, mut hi) = (b_low, b_high);
    let mut midpoints = 0;
    while hi - lo > tol_hz && midpoints < probe_bound {
        let mid = 0.5 * (lo + hi);
        let out = run(2 + midpoints, ProbeKind::Midpoint, mid, &mut probes);
        midpoints += 1;
        if out.omega <= threshold {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(BisectionResult {
        effective_bandwidth: lo,
        probes,
        midpoint_probes: midpoints,
        probe_bound,
    })
}

/// Bisection wired to the optimizer: each probe builds the system at the
/// candidate bandwidth (same channel realization, new subcarrier grid) and
/// re-optimizes from scratch with a seed derived from the probe index.
#[allow(clippy::too_many_arguments)]
pub fn bisect_effective_bandwidth<B>(
    template: &BandSpec,
    threshold: f64,
    b_low: f64,
    b_high: f64,
    tol_hz: f64,
    settings: &SolverSettings,
    master_seed: u64,
    mut builder: B,
) -> Result<BisectionResult>
where
    B: FnMut(&BandSpec) -> (Vec<SubcarrierContext>, TransferSet),
{
    bisect_with_probe(threshold, b_low, b_high, tol_hz, |index, bandwidth| {
        let band = BandSpec {
            center_frequency: template.center_frequency,
            bandwidth,
            num_subcarriers: template.num_subcarriers,
        };
        normalized_fit(
            &band,
            &mut builder,
            settings,
            derive_seed(master_seed, index as u64),
        )
    })
}
