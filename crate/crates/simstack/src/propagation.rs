//! Frequency-dependent layer transmissions and cascaded stack transfer
//! functions.
//!
//! Every pair of elements on adjacent planes is coupled by a
//! Rayleigh-Sommerfeld diffraction coefficient. Per subcarrier these
//! coefficients form the transfer matrices `W^l` (transmit stack) and `U^k`
//! (receive stack), which depend only on geometry and frequency and are
//! precomputed once. The configurable part is a diagonal phase screen per
//! layer; the transmit cascade is
//! `P_i = Phi^L W^L_i ... Phi^1 W^1_i` and the receive cascade is
//! `Q_i = U^1_i Psi^1 ... U^K_i Psi^K`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

use crate::geometry::{distance, PlaneRef, SimGeometry};
use crate::SPEED_OF_LIGHT;

/// Rayleigh-Sommerfeld transmission coefficient between two elements.
///
/// `atom_area` is the area of the radiating element, `layer_gap` the axial
/// plane separation, and `distance` the element-to-element Euclidean
/// distance (all three distance occurrences in the kernel use this one
/// length). Zero area is allowed and yields zero coupling.
pub fn rs_coefficient(atom_area: f64, layer_gap: f64, distance: f64, frequency: f64) -> Complex64 {
    assert!(distance > 0.0, "distance must be positive");
    assert!(layer_gap > 0.0, "layer_gap must be positive");
    assert!(frequency > 0.0, "frequency must be positive");
    let inv_wavelen = frequency / SPEED_OF_LIGHT;
    let prefactor = atom_area * layer_gap / (distance * distance);
    let rational = Complex64::new(1.0 / (2.0 * std::f64::consts::PI * distance), -inv_wavelen);
    let phase = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * distance * inv_wavelen);
    prefactor * rational * phase
}

/// Transfer matrix between two element planes: entry `(m, m')` couples source
/// element `m'` to destination element `m`.
pub fn plane_transfer_matrix(
    dest: &[[f64; 3]],
    source: &[[f64; 3]],
    atom_area: f64,
    layer_gap: f64,
    frequency: f64,
) -> DMatrix<Complex64> {
    DMatrix::from_fn(dest.len(), source.len(), |m, mp| {
        rs_coefficient(atom_area, layer_gap, distance(dest[m], source[mp]), frequency)
    })
}

/// Transmit-side `W^l_i`: from layer `l - 1` (or the antenna plane when
/// `l == 1`) onto layer `l`.
pub fn tx_layer_transfer(geom: &SimGeometry, layer: usize, frequency: f64) -> DMatrix<Complex64> {
    let source = if layer == 1 {
        PlaneRef::Antennas
    } else {
        PlaneRef::Layer(layer - 1)
    };
    plane_transfer_matrix(
        geom.plane_positions(PlaneRef::Layer(layer)),
        geom.plane_positions(source),
        geom.config().atom_area,
        geom.layer_gap(),
        frequency,
    )
}

/// Receive-side `U^k_i`: from layer `k` onto layer `k - 1` (or the antenna
/// plane when `k == 1`).
pub fn rx_layer_transfer(geom: &SimGeometry, layer: usize, frequency: f64) -> DMatrix<Complex64> {
    let dest = if layer == 1 {
        PlaneRef::Antennas
    } else {
        PlaneRef::Layer(layer - 1)
    };
    plane_transfer_matrix(
        geom.plane_positions(dest),
        geom.plane_positions(PlaneRef::Layer(layer)),
        geom.config().atom_area,
        geom.layer_gap(),
        frequency,
    )
}

/// Precomputed transfer matrices for every subcarrier.
///
/// `tx_layers[l-1]` is `W^l` (`W^1` is atoms x antennas, the rest are square)
/// and `rx_layers[k-1]` is `U^k` (`U^1` is antennas x atoms).
#[derive(Debug, Clone)]
pub struct SubcarrierTransfers {
    pub frequency: f64,
    pub tx_layers: Vec<DMatrix<Complex64>>,
    pub rx_layers: Vec<DMatrix<Complex64>>,
}

/// Transfer matrices for a whole subcarrier grid; immutable after build.
#[derive(Debug, Clone)]
pub struct TransferSet {
    pub subcarriers: Vec<SubcarrierTransfers>,
}

impl TransferSet {
    pub fn build(tx_geom: &SimGeometry, rx_geom: &SimGeometry, frequencies: &[f64]) -> Self {
        let subcarriers = frequencies
            .iter()
            .map(|&f| SubcarrierTransfers {
                frequency: f,
                tx_layers: (1..=tx_geom.config().num_layers)
                    .map(|l| tx_layer_transfer(tx_geom, l, f))
                    .collect(),
                rx_layers: (1..=rx_geom.config().num_layers)
                    .map(|k| rx_layer_transfer(rx_geom, k, f))
                    .collect(),
            })
            .collect();
        TransferSet { subcarriers }
    }

    pub fn num_subcarriers(&self) -> usize {
        self.subcarriers.len()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.subcarriers.iter().map(|s| s.frequency).collect()
    }

    /// (tx layers, tx atoms, rx layers, rx atoms, antennas per side)
    pub fn dims(&self) -> StackDims {
        let s = &self.subcarriers[0];
        StackDims {
            tx_layers: s.tx_layers.len(),
            tx_atoms: s.tx_layers[0].nrows(),
            rx_layers: s.rx_layers.len(),
            rx_atoms: s.rx_layers[0].ncols(),
            streams: s.tx_layers[0].ncols(),
        }
    }
}

/// Problem dimensions shared by phase states and transfer sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StackDims {
    pub tx_layers: usize,
    pub tx_atoms: usize,
    pub rx_layers: usize,
    pub rx_atoms: usize,
    pub streams: usize,
}

/// Phase-shift configuration of both stacks plus the scaling factor.
///
/// Phases are stored in radians; transmission coefficients `e^{j theta}` are
/// derived on demand and therefore have unit modulus by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    /// `tx_phases[l-1]` holds `theta^l`, one angle per transmit meta-atom.
    pub tx_phases: Vec<DVector<f64>>,
    /// `rx_phases[k-1]` holds `zeta^k`, one angle per receive meta-atom.
    pub rx_phases: Vec<DVector<f64>>,
    /// Real scaling factor applied to the end-to-end cascade.
    pub alpha: f64,
}

impl PhaseState {
    pub fn zeros(dims: StackDims) -> Self {
        PhaseState {
            tx_phases: vec![DVector::zeros(dims.tx_atoms); dims.tx_layers],
            rx_phases: vec![DVector::zeros(dims.rx_atoms); dims.rx_layers],
            alpha: 1.0,
        }
    }

    /// Phases i.i.d. uniform on `[0, 2*pi)`; alpha left at 1.
    pub fn random<R: Rng>(dims: StackDims, rng: &mut R) -> Self {
        let tau = 2.0 * std::f64::consts::PI;
        PhaseState {
            tx_phases: (0..dims.tx_layers)
                .map(|_| DVector::from_fn(dims.tx_atoms, |_, _| rng.random_range(0.0..tau)))
                .collect(),
            rx_phases: (0..dims.rx_layers)
                .map(|_| DVector::from_fn(dims.rx_atoms, |_, _| rng.random_range(0.0..tau)))
                .collect(),
            alpha: 1.0,
        }
    }

    /// `phi^l = e^{j theta^l}` for transmit layer `l` (1-based).
    pub fn tx_coefficients(&self, layer: usize) -> DVector<Complex64> {
        unit_phases(&self.tx_phases[layer - 1])
    }

    /// `psi^k = e^{j zeta^k}` for receive layer `k` (1-based).
    pub fn rx_coefficients(&self, layer: usize) -> DVector<Complex64> {
        unit_phases(&self.rx_phases[layer - 1])
    }
}

/// Elementwise `e^{j theta}`.
pub fn unit_phases(angles: &DVector<f64>) -> DVector<Complex64> {
    angles.map(|t| Complex64::from_polar(1.0, t))
}

fn scale_rows(mat: &mut DMatrix<Complex64>, phases: &DVector<Complex64>) {
    assert_eq!(mat.nrows(), phases.len(), "phase length must match rows");
    for (r, &p) in phases.iter().enumerate() {
        for c in 0..mat.ncols() {
            mat[(r, c)] *= p;
        }
    }
}

fn scale_cols(mat: &mut DMatrix<Complex64>, phases: &DVector<Complex64>) {
    assert_eq!(mat.ncols(), phases.len(), "phase length must match columns");
    for (c, &p) in phases.iter().enumerate() {
        for r in 0..mat.nrows() {
            mat[(r, c)] *= p;
        }
    }
}

/// Transmit cascade `P_i = Phi^L W^L ... Phi^1 W^1`, evaluated right to left
/// so intermediates stay atoms x antennas.
pub fn cascade_tx(transfers: &TransferSet, state: &PhaseState, subcarrier: usize) -> DMatrix<Complex64> {
    let sc = &transfers.subcarriers[subcarrier];
    assert_eq!(sc.tx_layers.len(), state.tx_phases.len(), "layer count mismatch");
    let mut p = sc.tx_layers[0].clone();
    scale_rows(&mut p, &state.tx_coefficients(1));
    for l in 2..=sc.tx_layers.len() {
        p = &sc.tx_layers[l - 1] * p;
        scale_rows(&mut p, &state.tx_coefficients(l));
    }
    p
}

/// Receive cascade `Q_i = U^1 Psi^1 ... U^K Psi^K`, evaluated left to right
/// so intermediates stay antennas x atoms.
pub fn cascade_rx(transfers: &TransferSet, state: &PhaseState, subcarrier: usize) -> DMatrix<Complex64> {
    let sc = &transfers.subcarriers[subcarrier];
    assert_eq!(sc.rx_layers.len(), state.rx_phases.len(), "layer count mismatch");
    let mut q = sc.rx_layers[0].clone();
    scale_cols(&mut q, &state.rx_coefficients(1));
    for k in 2..=sc.rx_layers.len() {
        q = q * &sc.rx_layers[k - 1];
        scale_cols(&mut q, &state.rx_coefficients(k));
    }
    q
}

/// Splits the transmit cascade around layer `l`:
/// `P_i = left * diag(phi^l) * right` with
/// `left = Phi^L W^L ... Phi^{l+1} W^{l+1}` (identity when `l == L`) and
/// `right = W^l Phi^{l-1} W^{l-1} ... Phi^1 W^1` (just `W^1` when `l == 1`).
pub fn partial_products_tx(
    transfers: &TransferSet,
    state: &PhaseState,
    subcarrier: usize,
    layer: usize,
) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
    let sc = &transfers.subcarriers[subcarrier];
    let num_layers = sc.tx_layers.len();
    assert!((1..=num_layers).contains(&layer), "layer {layer} out of range");
    let atoms = sc.tx_layers[0].nrows();

    let mut right = sc.tx_layers[0].clone();
    for j in 2..=layer {
        scale_rows(&mut right, &state.tx_coefficients(j - 1));
        right = &sc.tx_layers[j - 1] * right;
    }

    let mut left = DMatrix::identity(atoms, atoms);
    for j in (layer + 1)..=num_layers {
        let mut factor = sc.tx_layers[j - 1].clone();
        scale_rows(&mut factor, &state.tx_coefficients(j));
        left = factor * left;
    }
    (left, right)
}

/// Splits the receive cascade around layer `k`:
/// `Q_i = left * diag(psi^k) * right` with
/// `left = U^1 Psi^1 ... U^k` (just `U^1` when `k == 1`) and
/// `right = U^{k+1} Psi^{k+1} ... U^K Psi^K` (identity when `k == K`).
pub fn partial_products_rx(
    transfers: &TransferSet,
    state: &PhaseState,
    subcarrier: usize,
    layer: usize,
) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
    let sc = &transfers.subcarriers[subcarrier];
    let num_layers = sc.rx_layers.len();
    assert!((1..=num_layers).contains(&layer), "layer {layer} out of range");
    let atoms = sc.rx_layers[num_layers - 1].ncols();

    let mut left = sc.rx_layers[0].clone();
    for j in 2..=layer {
        scale_cols(&mut left, &state.rx_coefficients(j - 1));
        left = left * &sc.rx_layers[j - 1];
    }

    let mut right = DMatrix::identity(atoms, atoms);
    for j in (layer + 1)..=num_layers {
        let mut factor = sc.rx_layers[j - 1].clone();
        scale_cols(&mut factor, &state.rx_coefficients(j));
        right = right * factor;
    }
    (left, right)
}
