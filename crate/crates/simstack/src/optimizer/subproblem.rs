//! Convex per-layer subproblem and its solver.
//!
//! One PCCP step minimizes, over the layer's complex coefficient vector `x`
//! and nonnegative slacks `s`,
//!
//! `alpha^2 x^H A x - 2 alpha Re(b^H x) + c + rho * sum(s)`
//!
//! subject to `|x_m|^2 <= 1 + s_{M+m}` and
//! `|x0_m|^2 - 2 Re(x_m^* x0_m) <= s_m - 1`, where `x0` is the unit-modulus
//! previous iterate serving as the linearization reference. Eliminating the
//! slacks at their minimal feasible values leaves an unconstrained convex
//! composite whose nonsmooth part separates per coordinate:
//!
//! `h(x) = quad(x) + rho * sum_m [ (|x_m|^2 - 1)_+ + (2 - 2 Re(x0_m^* x_m))_+ ]`
//!
//! The solver runs cyclic coordinate descent with an exact complex-scalar
//! minimizer per coordinate and certifies stationarity through the
//! prox-gradient fixed-point residual. Descent from the reference point is
//! guaranteed because every coordinate step is an exact minimization.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::objective::QuadraticForm;

/// Stopping controls for the subproblem solver.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SubproblemSettings {
    /// Target on the prox-gradient stationarity residual.
    pub kkt_tol: f64,
    /// Hard cap on coordinate-descent sweeps.
    pub max_sweeps: usize,
}

impl Default for SubproblemSettings {
    fn default() -> Self {
        SubproblemSettings {
            kkt_tol: 1e-8,
            max_sweeps: 20_000,
        }
    }
}

/// One penalized convex restriction of the fitting error.
#[derive(Debug, Clone)]
pub struct PccpSubproblem<'a> {
    pub form: &'a QuadraticForm,
    /// Unit-modulus previous iterate (the linearization reference).
    pub reference: DVector<Complex64>,
    /// Slack penalty `rho >= 0`.
    pub penalty: f64,
    /// Scaling factor held fixed during the solve.
    pub alpha: f64,
}

/// Validates the reference modulus and penalty sign.
pub fn build_pccp_subproblem<'a>(
    form: &'a QuadraticForm,
    reference: &DVector<Complex64>,
    penalty: f64,
    alpha: f64,
) -> Result<PccpSubproblem<'a>> {
    if reference.len() != form.dim() {
        return Err(Error::InvalidInput(format!(
            "reference length {} does not match form dimension {}",
            reference.len(),
            form.dim()
        )));
    }
    for (m, z) in reference.iter().enumerate() {
        if (z.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "reference entry {m} has modulus {}, expected 1",
                z.norm()
            )));
        }
    }
    if !(penalty >= 0.0) {
        return Err(Error::InvalidInput("penalty must be nonnegative".into()));
    }
    Ok(PccpSubproblem {
        form,
        reference: reference.clone(),
        penalty,
        alpha,
    })
}

impl PccpSubproblem<'_> {
    /// Minimal feasible slacks at `x`: first the reference-hinge block, then
    /// the modulus block.
    pub fn slacks(&self, x: &DVector<Complex64>) -> DVector<f64> {
        let m = x.len();
        let mut s = DVector::zeros(2 * m);
        for i in 0..m {
            s[i] = (2.0 - 2.0 * (self.reference[i].conj() * x[i]).re).max(0.0);
            s[m + i] = (x[i].norm_sqr() - 1.0).max(0.0);
        }
        s
    }

    /// Penalized objective at `x` with slacks eliminated.
    pub fn objective(&self, x: &DVector<Complex64>) -> f64 {
        self.form.evaluate(x, self.alpha) + self.penalty * self.slacks(x).sum()
    }
}

/// Result of one subproblem solve.
#[derive(Debug, Clone)]
pub struct SubproblemSolution {
    pub coefficients: DVector<Complex64>,
    /// Minimal feasible slacks at the solution, length `2 M`.
    pub slacks: DVector<f64>,
    /// Penalized objective at the solution.
    pub objective: f64,
    /// Prox-gradient stationarity residual at exit.
    pub kkt_residual: f64,
    pub sweeps: usize,
    pub converged: bool,
}

/// Exact minimizer of the convex scalar function
/// `f(z) = a |z|^2 + 2 Re(conj(u) z) + t (|z|^2 - 1)_+ + t (2 - 2 Re(conj(c) z))_+`
/// with `a >= 0`, `t >= 0`, `|c| = 1`.
///
/// The frame is rotated so the reference is 1, every stationary-point
/// configuration of the two hinges contributes a closed-form candidate, and
/// the best candidate wins. Convexity puts the true minimizer in the list.
pub fn minimize_scalar(a: f64, u: Complex64, t: f64, reference: Complex64) -> Complex64 {
    let up = reference.conj() * u;
    let (p, q) = (up.re, up.im);

    let value = |x: f64, y: f64| -> f64 {
        let r2 = x * x + y * y;
        a * r2 + 2.0 * (p * x + q * y) + t * (r2 - 1.0).max(0.0) + t * (2.0 - 2.0 * x).max(0.0)
    };
    // corner z = reference is always admissible
    let mut best_xy = (1.0, 0.0);
    let mut best_val = value(1.0, 0.0);
    let consider = |x: f64, y: f64, best_xy: &mut (f64, f64), best_val: &mut f64| {
        if x.is_finite() && y.is_finite() {
            let v = value(x, y);
            if v < *best_val {
                *best_val = v;
                *best_xy = (x, y);
            }
        }
    };

    if a > 0.0 {
        // both hinges inactive
        consider(-p / a, -q / a, &mut best_xy, &mut best_val);
        // reference hinge active, modulus hinge inactive
        consider((t - p) / a, -q / a, &mut best_xy, &mut best_val);
    }
    if a + t > 0.0 {
        // modulus hinge active, reference hinge inactive
        consider(-p / (a + t), -q / (a + t), &mut best_xy, &mut best_val);
        // both hinges active
        consider((t - p) / (a + t), -q / (a + t), &mut best_xy, &mut best_val);
        // on the line x = 1 with |z| > 1
        consider(1.0, -q / (a + t), &mut best_xy, &mut best_val);
    }
    // on the unit circle, with and without the reference hinge
    for dir in [(t - p, -q), (-p, -q)] {
        let n = (dir.0 * dir.0 + dir.1 * dir.1).sqrt();
        if n > 0.0 {
            consider(dir.0 / n, dir.1 / n, &mut best_xy, &mut best_val);
        }
    }

    reference * Complex64::new(best_xy.0, best_xy.1)
}

/// Gershgorin bound on the spectral radius of the Hermitian form matrix.
fn spectral_bound(form: &QuadraticForm) -> f64 {
    let n = form.dim();
    let mut bound = 0.0f64;
    for r in 0..n {
        let mut row = 0.0;
        for c in 0..n {
            row += form.matrix[(r, c)].norm();
        }
        bound = bound.max(row);
    }
    bound
}

/// Solves the penalized convex subproblem by cyclic coordinate descent with
/// exact scalar minimization, starting from the reference point.
///
/// At exit the returned slacks are exactly feasible, the objective never
/// exceeds the objective at the reference, and `kkt_residual` is the norm of
/// the prox-gradient mapping (zero exactly at the minimizer).
pub fn solve_subproblem(sub: &PccpSubproblem, settings: &SubproblemSettings) -> SubproblemSolution {
    let n = sub.form.dim();
    let alpha = sub.alpha;
    let alpha_sq = alpha * alpha;
    let rho = sub.penalty;
    let mut x = sub.reference.clone();
    let mut coupled = &sub.form.matrix * &x;

    let lip = 2.0 * alpha_sq * spectral_bound(sub.form);
    let eta = if lip > 0.0 { 1.0 / lip } else { 1.0 };

    let residual = |x: &DVector<Complex64>, coupled: &DVector<Complex64>| -> f64 {
        // gradient of the smooth quadratic, reusing the maintained product
        let mut acc = 0.0;
        for m in 0..n {
            let grad = Complex64::new(2.0 * alpha_sq, 0.0) * coupled[m]
                - Complex64::new(2.0 * alpha, 0.0) * sub.form.linear[m];
            let v = x[m] - grad * eta;
            let prox = minimize_scalar(
                1.0 / (2.0 * eta),
                -v / (2.0 * eta),
                rho,
                sub.reference[m],
            );
            acc += (x[m] - prox).norm_sqr();
        }
        acc.sqrt() / eta
    };

    let mut kkt = residual(&x, &coupled);
    let mut sweeps = 0;
    let mut converged = kkt <= settings.kkt_tol;
    while !converged && sweeps < settings.max_sweeps {
        for m in 0..n {
            let diag = sub.form.matrix[(m, m)].re.max(0.0);
            let off = coupled[m] - sub.form.matrix[(m, m)] * x[m];
            let linear = Complex64::new(alpha_sq, 0.0) * off
                - Complex64::new(alpha, 0.0) * sub.form.linear[m];
            let z = minimize_scalar(alpha_sq * diag, linear, rho, sub.reference[m]);
            let delta = z - x[m];
            if delta.norm_sqr() > 0.0 {
                for r in 0..n {
                    coupled[r] += sub.form.matrix[(r, m)] * delta;
                }
                x[m] = z;
            }
        }
        sweeps += 1;
        if sweeps % 64 == 0 {
            // refresh against incremental drift
            coupled = &sub.form.matrix * &x;
        }
        kkt = residual(&x, &coupled);
        converged = kkt <= settings.kkt_tol;
    }

    let slacks = sub.slacks(&x);
    let objective = sub.form.evaluate(&x, alpha) + rho * slacks.sum();
    SubproblemSolution {
        coefficients: x,
        slacks,
        objective,
        kkt_residual: kkt,
        sweeps,
        converged,
    }
}
