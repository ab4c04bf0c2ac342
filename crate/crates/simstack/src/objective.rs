//! Channel-fitting objective and its exact per-layer quadratic forms.
//!
//! The objective is `Gamma = sum_i || alpha Q_i G_i P_i - D_i ||_F^2` where
//! `D_i` is the diagonal of target singular values. Holding every layer but
//! one fixed, `Gamma` is an exact quadratic in that layer's phase vector:
//!
//! `Gamma(x) = alpha^2 x^H A x - 2 alpha Re(b^H x) + c`
//!
//! with `A` a Hadamard product of two Gram matrices (Hermitian positive
//! semidefinite by the Schur product theorem), `b` the diagonal of a cross
//! term, and `c` the accumulated squared target norm. These identities hold
//! globally in `x`, not just near the current iterate, which is what lets a
//! convex solver take each block step.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::channel::SubcarrierContext;
use crate::error::{Error, Result};
use crate::propagation::{
    cascade_rx, cascade_tx, partial_products_rx, partial_products_tx, PhaseState, TransferSet,
};

/// Exact quadratic representation of the fitting error in one layer's
/// transmission coefficients: `alpha^2 x^H A x - 2 alpha Re(b^H x) + c`.
#[derive(Debug, Clone)]
pub struct QuadraticForm {
    /// Hermitian positive semidefinite coupling matrix.
    pub matrix: DMatrix<Complex64>,
    /// Linear term collecting both conjugate cross traces.
    pub linear: DVector<Complex64>,
    /// Accumulated squared Frobenius norm of the targets.
    pub constant: f64,
}

impl QuadraticForm {
    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    /// Evaluates the form at coefficient vector `x` with scaling `alpha`.
    pub fn evaluate(&self, x: &DVector<Complex64>, alpha: f64) -> f64 {
        let ax = &self.matrix * x;
        let quad = x.dotc(&ax).re;
        let cross = self.linear.dotc(x).re;
        alpha * alpha * quad - 2.0 * alpha * cross + self.constant
    }

    /// Gradient of the form with respect to `x` (Wirtinger, scaled so that a
    /// vanishing value characterizes stationarity): `2 alpha^2 A x - 2 alpha b`.
    pub fn gradient(&self, x: &DVector<Complex64>, alpha: f64) -> DVector<Complex64> {
        let mut g = &self.matrix * x;
        g *= Complex64::new(2.0 * alpha * alpha, 0.0);
        g.axpy(Complex64::new(-2.0 * alpha, 0.0), &self.linear, Complex64::new(1.0, 0.0));
        g
    }
}

fn check_shapes(contexts: &[SubcarrierContext], transfers: &TransferSet) {
    assert_eq!(
        contexts.len(),
        transfers.num_subcarriers(),
        "context/transfer subcarrier counts must match"
    );
}

/// End-to-end unscaled channel `H_i = Q_i G_i P_i` for one subcarrier.
pub fn end_to_end(
    state: &PhaseState,
    contexts: &[SubcarrierContext],
    transfers: &TransferSet,
    subcarrier: usize,
) -> DMatrix<Complex64> {
    let p = cascade_tx(transfers, state, subcarrier);
    let q = cascade_rx(transfers, state, subcarrier);
    q * &contexts[subcarrier].channel * p
}

/// Direct evaluation of `Gamma` summed over all supplied subcarriers.
pub fn fitting_error(
    state: &PhaseState,
    contexts: &[SubcarrierContext],
    transfers: &TransferSet,
) -> f64 {
    check_shapes(contexts, transfers);
    let alpha = Complex64::new(state.alpha, 0.0);
    let mut total = 0.0;
    for (i, ctx) in contexts.iter().enumerate() {
        let h = end_to_end(state, contexts, transfers, i);
        let s = ctx.target.len();
        for r in 0..s {
            for c in 0..s {
                let want = if r == c {
                    Complex64::new(ctx.target[r], 0.0)
                } else {
                    Complex64::default()
                };
                total += (alpha * h[(r, c)] - want).norm_sqr();
            }
        }
    }
    total
}

/// `B (.) conj(C)` entrywise; with both factors Hermitian PSD the result is
/// Hermitian PSD.
fn hadamard_conj(b: &DMatrix<Complex64>, c: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    DMatrix::from_fn(b.nrows(), b.ncols(), |r, col| b[(r, col)] * c[(r, col)].conj())
}

/// Quadratic form of the fitting error in transmit layer `l`'s coefficients,
/// with every other layer and `alpha` held fixed.
pub fn quadratic_form_tx(
    layer: usize,
    state: &PhaseState,
    contexts: &[SubcarrierContext],
    transfers: &TransferSet,
) -> QuadraticForm {
    check_shapes(contexts, transfers);
    let atoms = state.tx_phases[layer - 1].len();
    let mut matrix = DMatrix::<Complex64>::zeros(atoms, atoms);
    let mut linear = DVector::<Complex64>::zeros(atoms);
    let mut constant = 0.0;
    for (i, ctx) in contexts.iter().enumerate() {
        let (left, right) = partial_products_tx(transfers, state, i, layer);
        let q = cascade_rx(transfers, state, i);
        let qg = q * &ctx.channel; // streams x atoms
        let qg_left = &qg * &left; // streams x atoms
        let gram_left = qg_left.adjoint() * &qg_left;
        let gram_right = &right * right.adjoint();
        matrix += hadamard_conj(&gram_left, &gram_right);

        // b_m = sum_s [ (Q G P_left)^H D ]_{m,s} * conj(P_right[m,s])
        let cross = qg_left.adjoint() * ctx.target_matrix();
        for m in 0..atoms {
            let mut acc = Complex64::default();
            for s in 0..ctx.target.len() {
                acc += cross[(m, s)] * right[(m, s)].conj();
            }
            linear[m] += acc;
        }
        constant += ctx.target_norm_sq();
    }
    QuadraticForm {
        matrix,
        linear,
        constant,
    }
}

/// Quadratic form of the fitting error in receive layer `k`'s coefficients.
pub fn quadratic_form_rx(
    layer: usize,
    state: &PhaseState,
    contexts: &[SubcarrierContext],
    transfers: &TransferSet,
) -> QuadraticForm {
    check_shapes(contexts, transfers);
    let atoms = state.rx_phases[layer - 1].len();
    let mut matrix = DMatrix::<Complex64>::zeros(atoms, atoms);
    let mut linear = DVector::<Complex64>::zeros(atoms);
    let mut constant = 0.0;
    for (i, ctx) in contexts.iter().enumerate() {
        let (left, right) = partial_products_rx(transfers, state, i, layer);
        let p = cascade_tx(transfers, state, i);
        let gp = &ctx.channel * p; // atoms x streams
        let right_gp = &right * &gp; // atoms x streams
        let gram_left = left.adjoint() * &left;
        let gram_right = &right_gp * right_gp.adjoint();
        matrix += hadamard_conj(&gram_left, &gram_right);

        // b_n = sum_s [ Q_left^H D ]_{n,s} * conj((R G P)[n,s])
        let cross = left.adjoint() * ctx.target_matrix();
        for n in 0..atoms {
            let mut acc = Complex64::default();
            for s in 0..ctx.target.len() {
                acc += cross[(n, s)] * right_gp[(n, s)].conj();
            }
            linear[n] += acc;
        }
        constant += ctx.target_norm_sq();
    }
    QuadraticForm {
        matrix,
        linear,
        constant,
    }
}

/// Closed-form minimizer of `Gamma` over the real scaling factor:
/// `alpha = sum_i Re Tr(D_i^H H_i) / sum_i ||H_i||_F^2`.
pub fn optimal_alpha(
    state: &PhaseState,
    contexts: &[SubcarrierContext],
    transfers: &TransferSet,
) -> Result<f64> {
    check_shapes(contexts, transfers);
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, ctx) in contexts.iter().enumerate() {
        let h = end_to_end(state, contexts, transfers, i);
        for s in 0..ctx.target.len() {
            num += ctx.target[s] * h[(s, s)].re;
        }
        den += h.norm_squared();
    }
    if den <= f64::MIN_POSITIVE {
        return Err(Error::Degenerate(
            "all-zero effective cascade; alpha undefined".into(),
        ));
    }
    Ok(num / den)
}

/// Per-subcarrier normalized fitting error, summed over subcarriers:
/// `sum_i ||alpha H_i - D_i||_F^2 / ||D_i||_F^2`.
pub fn nmse(
    state: &PhaseState,
    contexts: &[SubcarrierContext],
    transfers: &TransferSet,
) -> Result<f64> {
    check_shapes(contexts, transfers);
    let alpha = Complex64::new(state.alpha, 0.0);
    let mut total = 0.0;
    for (i, ctx) in contexts.iter().enumerate() {
        let denom = ctx.target_norm_sq();
        if denom <= f64::MIN_POSITIVE {
            return Err(Error::Degenerate(format!(
                "zero target norm at subcarrier {i}"
            )));
        }
        let h = end_to_end(state, contexts, transfers, i);
        let s = ctx.target.len();
        let mut err = 0.0;
        for r in 0..s {
            for c in 0..s {
                let want = if r == c {
                    Complex64::new(ctx.target[r], 0.0)
                } else {
                    Complex64::default()
                };
                err += (alpha * h[(r, c)] - want).norm_sqr();
            }
        }
        total += err / denom;
    }
    Ok(total)
}
