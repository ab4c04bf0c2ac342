//! Synthetic random instances with unit-scale matrices.
//!
//! These bypass the physical layout and draw every transfer matrix and
//! channel entry from a circular complex Gaussian. They exercise the
//! objective and optimizer algebra on unstructured data and are the instance
//! generator used by the randomized test suites.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

use crate::channel::{svd_targets, SubcarrierContext};
use crate::propagation::{SubcarrierTransfers, TransferSet};

#[derive(Debug, Clone, Copy)]
pub struct SyntheticDims {
    pub streams: usize,
    pub tx_atoms: usize,
    pub rx_atoms: usize,
    pub tx_layers: usize,
    pub rx_layers: usize,
    pub subcarriers: usize,
}

fn random_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<Complex64> {
    let scale = 1.0 / (2.0 * cols as f64).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| {
        Complex64::new(
            rng.random_range(-1.0..1.0) * scale,
            rng.random_range(-1.0..1.0) * scale,
        )
    })
}

/// Draws a full synthetic system: random transfers per subcarrier plus random
/// channels with their SVD targets. Frequencies are a nominal 1 Hz grid; the
/// synthetic matrices do not depend on them.
pub fn random_system<R: Rng>(
    dims: SyntheticDims,
    rng: &mut R,
) -> (TransferSet, Vec<SubcarrierContext>) {
    assert!(dims.streams <= dims.tx_atoms.min(dims.rx_atoms));
    let mut subcarriers = Vec::with_capacity(dims.subcarriers);
    let mut contexts = Vec::with_capacity(dims.subcarriers);
    for i in 0..dims.subcarriers {
        let frequency = 1.0 + i as f64;
        let mut tx_layers = vec![random_matrix(dims.tx_atoms, dims.streams, rng)];
        for _ in 1..dims.tx_layers {
            tx_layers.push(random_matrix(dims.tx_atoms, dims.tx_atoms, rng));
        }
        let mut rx_layers = vec![random_matrix(dims.streams, dims.rx_atoms, rng)];
        for _ in 1..dims.rx_layers {
            rx_layers.push(random_matrix(dims.rx_atoms, dims.rx_atoms, rng));
        }
        subcarriers.push(SubcarrierTransfers {
            frequency,
            tx_layers,
            rx_layers,
        });
        let g = random_matrix(dims.rx_atoms, dims.tx_atoms, rng);
        contexts.push(svd_targets(g, frequency, dims.streams).expect("synthetic svd"));
    }
    (TransferSet { subcarriers }, contexts)
}
