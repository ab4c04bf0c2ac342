//! Precomputes the layer transfer matrices of both stacks, applies a random
//! phase configuration, and verifies the split-product identity used by the
//! per-layer optimization.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use simstack::geometry::{build_stack_geometry, StackConfig};
use simstack::propagation::{
    cascade_rx, cascade_tx, partial_products_tx, PhaseState, TransferSet,
};
use simstack::SPEED_OF_LIGHT;

fn main() {
    let f0 = 28e9;
    let wavelength = SPEED_OF_LIGHT / f0;
    let config = StackConfig::new(
        3,
        4,
        4,
        wavelength / 2.0,
        0.05,
        wavelength * wavelength / 4.0,
        2,
        wavelength / 2.0,
    )
    .unwrap();
    let tx = build_stack_geometry(&config, [0.0, 0.0, 0.0], 1);
    let rx = build_stack_geometry(&config, [0.0, 250.0, 0.0], -1);

    // a narrow band around the carrier
    let frequencies: Vec<f64> = (0..4).map(|i| f0 + (i as f64 - 1.5) * 5e6).collect();
    let transfers = TransferSet::build(&tx, &rx, &frequencies);
    let dims = transfers.dims();
    println!(
        "transfer set: {} subcarriers, {} tx layers of {} atoms, {} rx layers of {} atoms",
        transfers.num_subcarriers(),
        dims.tx_layers,
        dims.tx_atoms,
        dims.rx_layers,
        dims.rx_atoms
    );

    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let state = PhaseState::random(dims, &mut rng);

    for i in 0..transfers.num_subcarriers() {
        let p = cascade_tx(&transfers, &state, i);
        let q = cascade_rx(&transfers, &state, i);
        println!(
            "subcarrier {i}: ||P|| = {:.4e} ({}x{}), ||Q|| = {:.4e} ({}x{})",
            p.norm(),
            p.nrows(),
            p.ncols(),
            q.norm(),
            q.nrows(),
            q.ncols()
        );

        // reconstruct P around each layer: P = left * diag(phi_l) * right
        for layer in 1..=dims.tx_layers {
            let (left, right) = partial_products_tx(&transfers, &state, i, layer);
            let phi = state.tx_coefficients(layer);
            let mut diag = DMatrix::zeros(phi.len(), phi.len());
            for (m, &v) in phi.iter().enumerate() {
                diag[(m, m)] = v;
            }
            let rebuilt = left * diag * right;
            println!(
                "  split at tx layer {layer}: reconstruction error {:.2e}",
                (&rebuilt - &p).norm() / p.norm()
            );
        }
    }
}
