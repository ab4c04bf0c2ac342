//! Assembly of a full simulated link: stack geometry on both ends, the
//! scattered channel between their facing layers, per-subcarrier transfer
//! matrices, and SVD targets.
//!
//! Coordinate frame: the transmit stack sits at the origin radiating along
//! +y; the receive stack sits `link_distance` down the y axis radiating along
//! -y, so its last layer faces the transmitter. Scatterer angles and path
//! lengths are measured from the two facing layer centers.

use serde::{Deserialize, Serialize};

use crate::bandwidth::BandSpec;
use crate::channel::{
    channel_matrix, draw_scatterers, svd_targets, PathGainModel, ScatterVolume, Scatterer,
    SubcarrierContext,
};
use crate::error::{Error, Result};
use crate::geometry::{build_stack_geometry, SimGeometry, StackConfig};
use crate::optimizer::{bcd_pccp, OptimizationReport, SolverSettings};
use crate::propagation::{PhaseState, TransferSet};
use crate::SPEED_OF_LIGHT;

/// Multipath environment parameters. Gains are linear scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    /// Total path count including the line-of-sight path.
    pub num_paths: usize,
    pub volume: ScatterVolume,
    /// Transmitter-to-receiver distance in meters (origin to origin).
    pub link_distance: f64,
    pub antenna_gain: f64,
    pub system_loss: f64,
}

/// Everything needed to instantiate a link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub band: BandSpec,
    pub tx: StackConfig,
    pub rx: StackConfig,
    pub channel: ChannelSpec,
}

impl SystemSpec {
    pub fn validate(&self) -> Result<()> {
        self.band.validate()?;
        self.tx.validate()?;
        self.rx.validate()?;
        if self.tx.num_antennas != self.rx.num_antennas {
            return Err(Error::InvalidConfig(
                "transmit and receive antenna counts must match".into(),
            ));
        }
        let streams = self.tx.num_antennas;
        if streams > self.tx.atoms().min(self.rx.atoms()) {
            return Err(Error::InvalidConfig(format!(
                "stream count {streams} exceeds the atom count of a layer"
            )));
        }
        if self.channel.num_paths == 0 {
            return Err(Error::InvalidConfig("path count must be >= 1".into()));
        }
        self.channel.volume.validate()?;
        if !(self.channel.link_distance
            > self.tx.total_thickness + self.rx.total_thickness)
        {
            return Err(Error::InvalidConfig(
                "link distance must exceed the combined stack thicknesses".into(),
            ));
        }
        if !(self.channel.antenna_gain > 0.0 && self.channel.system_loss > 0.0) {
            return Err(Error::InvalidConfig(
                "antenna gain and system loss must be positive (linear)".into(),
            ));
        }
        Ok(())
    }

    pub fn streams(&self) -> usize {
        self.tx.num_antennas
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.band.center_frequency
    }

    /// Draws the channel for `channel_seed` and precomputes every
    /// frequency-dependent matrix of the band.
    pub fn build(&self, channel_seed: u64) -> Result<SimSystem> {
        use rand::SeedableRng;
        self.validate()?;
        let tx_geometry = build_stack_geometry(&self.tx, [0.0, 0.0, 0.0], 1);
        let rx_geometry =
            build_stack_geometry(&self.rx, [0.0, self.channel.link_distance, 0.0], -1);
        let gains = PathGainModel {
            wavelength: self.wavelength(),
            antenna_gain: self.channel.antenna_gain,
            system_loss: self.channel.system_loss,
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(channel_seed);
        let scatterers = draw_scatterers(
            &mut rng,
            self.channel.num_paths,
            tx_geometry.face_center(),
            rx_geometry.face_center(),
            &self.channel.volume,
            &gains,
        )?;
        SimSystem::assemble(self.clone(), tx_geometry, rx_geometry, scatterers, channel_seed)
    }
}

/// A fully instantiated link, immutable once built.
#[derive(Debug, Clone)]
pub struct SimSystem {
    pub spec: SystemSpec,
    pub channel_seed: u64,
    pub tx_geometry: SimGeometry,
    pub rx_geometry: SimGeometry,
    pub scatterers: Vec<Scatterer>,
    pub transfers: TransferSet,
    pub contexts: Vec<SubcarrierContext>,
}

impl SimSystem {
    fn assemble(
        spec: SystemSpec,
        tx_geometry: SimGeometry,
        rx_geometry: SimGeometry,
        scatterers: Vec<Scatterer>,
        channel_seed: u64,
    ) -> Result<SimSystem> {
        let frequencies = spec.band.frequencies();
        let transfers = TransferSet::build(&tx_geometry, &rx_geometry, &frequencies);
        let tx_grid = spec.tx.grid();
        let rx_grid = spec.rx.grid();
        let streams = spec.streams();
        let contexts = frequencies
            .iter()
            .map(|&f| {
                let g = channel_matrix(&scatterers, f, &tx_grid, &rx_grid);
                svd_targets(g, f, streams)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SimSystem {
            spec,
            channel_seed,
            tx_geometry,
            rx_geometry,
            scatterers,
            transfers,
            contexts,
        })
    }

    /// Same channel realization and geometry on a different subcarrier grid.
    pub fn with_band(&self, band: &BandSpec) -> Result<SimSystem> {
        band.validate()?;
        let mut spec = self.spec.clone();
        spec.band = *band;
        SimSystem::assemble(
            spec,
            self.tx_geometry.clone(),
            self.rx_geometry.clone(),
            self.scatterers.clone(),
            self.channel_seed,
        )
    }

    /// The same link reduced to a single subcarrier at the center frequency.
    pub fn single_carrier(&self) -> Result<SimSystem> {
        self.with_band(&self.spec.band.single_carrier())
    }

    /// Runs the phase optimization from a seeded random initialization.
    pub fn optimize(&self, settings: &SolverSettings) -> (PhaseState, OptimizationReport) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(settings.seed);
        let init = PhaseState::random(self.transfers.dims(), &mut rng);
        bcd_pccp(&self.contexts, &self.transfers, settings, init)
    }
}
