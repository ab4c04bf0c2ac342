//! Geometric multipath channel between the two stacks and its SVD targets.
//!
//! The air channel couples the emitting face of the transmit stack to the
//! receiving face of the receive stack through one line-of-sight path and a
//! set of point scatterers. Per subcarrier the channel is a sum of
//! rank-one terms `g_p e^{-j 2 pi f tau_p} a_r a_t^H` built from planar-array
//! steering vectors, and its singular value decomposition supplies the
//! diagonal matrix the phase optimizer tries to reproduce end to end.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PlanarGrid;
use crate::SPEED_OF_LIGHT;

/// Wavenumber `k = 2 pi f / c` in rad/m.
pub fn wavenumber(frequency: f64) -> f64 {
    2.0 * std::f64::consts::PI * frequency / SPEED_OF_LIGHT
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PathKind {
    LineOfSight,
    Scattered,
}

/// One propagation path: a scatterer position with its derived complex gain,
/// delay, and departure/arrival angles. Angles follow the planar-array
/// convention: elevation measured from the z axis in `[0, pi)`, azimuth
/// measured from the stack boresight in `[-pi/2, pi/2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    pub position: [f64; 3],
    pub gain: Complex64,
    pub delay: f64,
    pub tx_elevation: f64,
    pub tx_azimuth: f64,
    pub rx_elevation: f64,
    pub rx_azimuth: f64,
    pub kind: PathKind,
}

/// Axis-aligned scatterer box, parameterized relative to the TX-RX line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatterVolume {
    /// Start of the box along the link, as a fraction of the TX-RX distance.
    pub axial_min_frac: f64,
    /// End of the box along the link, as a fraction of the TX-RX distance.
    pub axial_max_frac: f64,
    /// Half-width of the box in both transverse directions, meters.
    pub transverse_half_width: f64,
}

impl Default for ScatterVolume {
    fn default() -> Self {
        ScatterVolume {
            axial_min_frac: 0.1,
            axial_max_frac: 0.9,
            transverse_half_width: 25.0,
        }
    }
}

impl ScatterVolume {
    pub fn validate(&self) -> Result<()> {
        if !(self.axial_min_frac >= 0.0
            && self.axial_min_frac < self.axial_max_frac
            && self.axial_max_frac <= 1.0
            && self.transverse_half_width > 0.0)
        {
            return Err(Error::InvalidInput(format!(
                "degenerate scatter volume: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Deterministic part of the path-gain law, all quantities linear scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathGainModel {
    /// Carrier wavelength in meters; gains are frequency-flat across the band.
    pub wavelength: f64,
    pub antenna_gain: f64,
    pub system_loss: f64,
}

fn unit(v: [f64; 3]) -> ([f64; 3], f64) {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    ([v[0] / n, v[1] / n, v[2] / n], n)
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// (elevation, azimuth) of direction `u` seen from an array whose plane spans
/// the global x-z axes and whose boresight is `b`.
fn array_angles(u: [f64; 3], b: [f64; 3]) -> (f64, f64) {
    let elevation = u[2].clamp(-1.0, 1.0).acos();
    let azimuth = u[0].atan2(dot(u, b));
    (elevation, azimuth)
}

/// Orthonormal basis of the plane orthogonal to `axis`.
fn transverse_basis(axis: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let pick = if axis[2].abs() < 0.9 {
        [0.0, 0.0, 1.0]
    } else {
        [1.0, 0.0, 0.0]
    };
    let cross = [
        axis[1] * pick[2] - axis[2] * pick[1],
        axis[2] * pick[0] - axis[0] * pick[2],
        axis[0] * pick[1] - axis[1] * pick[0],
    ];
    let (e1, _) = unit(cross);
    let e2 = [
        axis[1] * e1[2] - axis[2] * e1[1],
        axis[2] * e1[0] - axis[0] * e1[2],
        axis[0] * e1[1] - axis[1] * e1[0],
    ];
    (e1, e2)
}

/// Draws the path set: one line-of-sight path plus `count - 1` scatterers
/// uniform in the volume, with geometrically consistent angles and delays.
///
/// The line-of-sight gain follows a free-space law with the antenna gain and
/// system loss folded in; scattered gains take a circular complex Gaussian
/// reflection coefficient whose variance makes the aggregate scattered power
/// equal the line-of-sight power. Deterministic given the generator state.
pub fn draw_scatterers<R: Rng>(
    rng: &mut R,
    count: usize,
    tx_position: [f64; 3],
    rx_position: [f64; 3],
    volume: &ScatterVolume,
    gains: &PathGainModel,
) -> Result<Vec<Scatterer>> {
    if count == 0 {
        return Err(Error::InvalidInput("path count must be >= 1".into()));
    }
    volume.validate()?;
    let (axis, link_distance) = unit(sub(rx_position, tx_position));
    if !(link_distance > 0.0) || !link_distance.is_finite() {
        return Err(Error::InvalidInput("tx and rx positions coincide".into()));
    }
    let rx_boresight = [-axis[0], -axis[1], -axis[2]];

    let four_pi = 4.0 * std::f64::consts::PI;
    let los_gain = gains.wavelength / (four_pi * link_distance)
        * (gains.antenna_gain / gains.system_loss).sqrt();

    let (tx_el, tx_az) = array_angles(axis, axis);
    let (rx_el, rx_az) = array_angles(rx_boresight, rx_boresight);
    let mut paths = vec![Scatterer {
        position: rx_position,
        gain: Complex64::new(los_gain, 0.0),
        delay: link_distance / SPEED_OF_LIGHT,
        tx_elevation: tx_el,
        tx_azimuth: tx_az,
        rx_elevation: rx_el,
        rx_azimuth: rx_az,
        kind: PathKind::LineOfSight,
    }];

    // positions first, then reflection coefficients, in a fixed draw order
    let (e1, e2) = transverse_basis(axis);
    let mut amplitudes = Vec::with_capacity(count - 1);
    for _ in 1..count {
        let s = rng.random_range(volume.axial_min_frac..volume.axial_max_frac) * link_distance;
        let t1 = rng.random_range(-volume.transverse_half_width..volume.transverse_half_width);
        let t2 = rng.random_range(-volume.transverse_half_width..volume.transverse_half_width);
        let position = [
            tx_position[0] + s * axis[0] + t1 * e1[0] + t2 * e2[0],
            tx_position[1] + s * axis[1] + t1 * e1[1] + t2 * e2[1],
            tx_position[2] + s * axis[2] + t1 * e1[2] + t2 * e2[2],
        ];
        let (to_scat, d_tx) = unit(sub(position, tx_position));
        let (to_scat_rx, d_rx) = unit(sub(position, rx_position));
        let (tx_el, tx_az) = array_angles(to_scat, axis);
        let (rx_el, rx_az) = array_angles(to_scat_rx, rx_boresight);
        let amplitude = gains.wavelength / (four_pi * (d_tx + d_rx));
        amplitudes.push(amplitude);
        paths.push(Scatterer {
            position,
            gain: Complex64::default(), // filled below
            delay: (d_tx + d_rx) / SPEED_OF_LIGHT,
            tx_elevation: tx_el,
            tx_azimuth: tx_az,
            rx_elevation: rx_el,
            rx_azimuth: rx_az,
            kind: PathKind::Scattered,
        });
    }

    if count > 1 {
        let power: f64 = amplitudes.iter().map(|a| a * a).sum();
        let sigma = los_gain / power.sqrt();
        let normal = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).unwrap();
        for (p, amplitude) in amplitudes.iter().enumerate() {
            let zeta = Complex64::new(normal.sample(rng), normal.sample(rng)) * sigma;
            paths[p + 1].gain = zeta * amplitude;
        }
    }
    Ok(paths)
}

/// Which stack an angle pair refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Tx,
    Rx,
}

/// Spatial frequencies `(psi_x, psi_z)` of one path at one subcarrier:
/// `psi_x = k r sin(elevation) sin(azimuth)`, `psi_z = k r cos(elevation)`.
pub fn electrical_angles(
    scatterer: &Scatterer,
    frequency: f64,
    spacing: f64,
    side: Side,
) -> (f64, f64) {
    let (el, az) = match side {
        Side::Tx => (scatterer.tx_elevation, scatterer.tx_azimuth),
        Side::Rx => (scatterer.rx_elevation, scatterer.rx_azimuth),
    };
    let kr = wavenumber(frequency) * spacing;
    (kr * el.sin() * az.sin(), kr * el.cos())
}

/// Full-grid steering vector `a_x (x) a_z` with
/// `[a_x]_mx = e^{j (mx - 1) psi_x}`; the first entry is always 1.
pub fn steering_vector(psi_x: f64, psi_z: f64, grid_x: usize, grid_z: usize) -> DVector<Complex64> {
    steering_for_grid(
        psi_x,
        psi_z,
        &PlanarGrid {
            atoms_x: grid_x,
            atoms_z: grid_z,
            count: grid_x * grid_z,
            spacing: 0.0,
        },
    )
}

/// Steering vector over a possibly truncated grid, atom index order matching
/// the stack geometry (`m = m_x * atoms_z + m_z`).
pub fn steering_for_grid(psi_x: f64, psi_z: f64, grid: &PlanarGrid) -> DVector<Complex64> {
    DVector::from_fn(grid.count, |m, _| {
        let mx = (m / grid.atoms_z) as f64;
        let mz = (m % grid.atoms_z) as f64;
        Complex64::from_polar(1.0, mx * psi_x + mz * psi_z)
    })
}

/// Channel matrix `G(f)` from the transmit face (columns) to the receive face
/// (rows): `G = sum_p g_p e^{-j 2 pi f tau_p} a_r a_t^H`. Element pitch is
/// taken from each grid.
pub fn channel_matrix(
    scatterers: &[Scatterer],
    frequency: f64,
    tx_grid: &PlanarGrid,
    rx_grid: &PlanarGrid,
) -> DMatrix<Complex64> {
    assert!(!scatterers.is_empty(), "scatterer list must be nonempty");
    let mut g = DMatrix::<Complex64>::zeros(rx_grid.count, tx_grid.count);
    for path in scatterers {
        let (tpx, tpz) = electrical_angles(path, frequency, tx_grid.spacing, Side::Tx);
        let (rpx, rpz) = electrical_angles(path, frequency, rx_grid.spacing, Side::Rx);
        let at = steering_for_grid(tpx, tpz, tx_grid);
        let ar = steering_for_grid(rpx, rpz, rx_grid);
        let coeff = path.gain
            * Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * frequency * path.delay);
        for n in 0..rx_grid.count {
            let row = coeff * ar[n];
            for m in 0..tx_grid.count {
                g[(n, m)] += row * at[m].conj();
            }
        }
    }
    g
}

/// Per-subcarrier channel with its SVD factors and the diagonal target.
#[derive(Debug, Clone)]
pub struct SubcarrierContext {
    pub frequency: f64,
    /// `G_i`, receive atoms x transmit atoms.
    pub channel: DMatrix<Complex64>,
    /// Left singular vectors (columns), diagnostics for the reference combiner.
    pub left_singular: DMatrix<Complex64>,
    /// All singular values, sorted non-increasing.
    pub singular_values: DVector<f64>,
    /// Right singular vectors (columns), diagnostics for the reference precoder.
    pub right_singular: DMatrix<Complex64>,
    /// The `S` dominant singular values: the diagonal the optimizer targets.
    pub target: DVector<f64>,
}

impl SubcarrierContext {
    /// The target as a complex diagonal matrix.
    pub fn target_matrix(&self) -> DMatrix<Complex64> {
        let s = self.target.len();
        DMatrix::from_fn(s, s, |i, j| {
            if i == j {
                Complex64::new(self.target[i], 0.0)
            } else {
                Complex64::default()
            }
        })
    }

    /// Squared Frobenius norm of the target diagonal.
    pub fn target_norm_sq(&self) -> f64 {
        self.target.iter().map(|l| l * l).sum()
    }
}

/// Decomposes `G = E Lambda F^H` and extracts the `streams` dominant
/// singular values as the diagonalization target.
pub fn svd_targets(
    channel: DMatrix<Complex64>,
    frequency: f64,
    streams: usize,
) -> Result<SubcarrierContext> {
    let min_dim = channel.nrows().min(channel.ncols());
    if streams == 0 || streams > min_dim {
        return Err(Error::InvalidInput(format!(
            "streams {streams} outside 1..={min_dim}"
        )));
    }
    let svd = channel
        .clone()
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::SvdFailure("iteration did not converge".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let u = svd.u.expect("svd computed with u");
    let vt = svd.v_t.expect("svd computed with v_t");
    let sorted = DVector::from_fn(order.len(), |i, _| svd.singular_values[order[i]]);
    let left = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let right = DMatrix::from_fn(vt.ncols(), order.len(), |r, c| vt[(order[c], r)].conj());
    let target = DVector::from_fn(streams, |i, _| sorted[i]);
    Ok(SubcarrierContext {
        frequency,
        channel,
        left_singular: left,
        singular_values: sorted,
        right_singular: right,
        target,
    })
}

/// Writes scatterer records as JSON for reproduction across runs.
pub fn save_scatterers(path: &std::path::Path, scatterers: &[Scatterer]) -> Result<()> {
    let text = serde_json::to_string_pretty(scatterers)?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Reads scatterer records written by [`save_scatterers`].
pub fn load_scatterers(path: &std::path::Path) -> Result<Vec<Scatterer>> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const F0: f64 = 28e9;

    fn lam() -> f64 {
        SPEED_OF_LIGHT / F0
    }

    fn gains() -> PathGainModel {
        PathGainModel {
            wavelength: lam(),
            antenna_gain: 7.943,
            system_loss: 1.995,
        }
    }

    fn grid(nx: usize, nz: usize) -> PlanarGrid {
        PlanarGrid {
            atoms_x: nx,
            atoms_z: nz,
            count: nx * nz,
            spacing: lam() / 2.0,
        }
    }

    fn draw(count: usize, seed: u64) -> Vec<Scatterer> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        draw_scatterers(
            &mut rng,
            count,
            [0.0, 0.05, 0.0],
            [0.0, 249.95, 0.0],
            &ScatterVolume::default(),
            &gains(),
        )
        .unwrap()
    }

    #[test]
    fn los_only_channel_is_rank_one() {
        let paths = draw(1, 7);
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].kind, PathKind::LineOfSight);
        // broadside on both sides
        assert!((paths[0].tx_elevation - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!(paths[0].tx_azimuth.abs() < 1e-12);
        assert!((paths[0].rx_elevation - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!(paths[0].rx_azimuth.abs() < 1e-12);
        for f in [F0 - 1e7, F0, F0 + 1e7] {
            let g = channel_matrix(&paths, f, &grid(3, 2), &grid(2, 2));
            let ctx = svd_targets(g, f, 1).unwrap();
            assert!(ctx.singular_values[1] <= 1e-12 * ctx.singular_values[0]);
        }
    }

    #[test]
    fn same_seed_reproduces_scatterers() {
        let a = draw(12, 99);
        let b = draw(12, 99);
        assert_eq!(a, b);
        let c = draw(12, 100);
        assert_ne!(a, c);
    }

    #[test]
    fn delays_respect_triangle_inequality() {
        let paths = draw(10, 3);
        let tx = [0.0, 0.05, 0.0];
        let rx = [0.0, 249.95, 0.0];
        let los_delay = paths[0].delay;
        for p in &paths[1..] {
            // independent recomputation from positions
            let d_tx = sub(p.position, tx);
            let d_rx = sub(p.position, rx);
            let total = (dot(d_tx, d_tx).sqrt() + dot(d_rx, d_rx).sqrt()) / SPEED_OF_LIGHT;
            assert!((p.delay - total).abs() <= 1e-15 * total.max(1e-9));
            assert!(p.delay >= los_delay);
            // angle ranges
            assert!((0.0..std::f64::consts::PI).contains(&p.tx_elevation));
            assert!(p.tx_azimuth.abs() <= std::f64::consts::FRAC_PI_2);
            assert!((0.0..std::f64::consts::PI).contains(&p.rx_elevation));
            assert!(p.rx_azimuth.abs() <= std::f64::consts::FRAC_PI_2);
        }
    }

    #[test]
    fn scattered_power_matches_los_power_in_expectation() {
        // aggregate E|g_p|^2 over scatterers is constructed to equal g_0^2
        let mut total = 0.0;
        let mut los = 0.0;
        let trials = 200;
        for seed in 0..trials {
            let paths = draw(30, seed);
            los = paths[0].gain.norm_sqr();
            total += paths[1..].iter().map(|p| p.gain.norm_sqr()).sum::<f64>();
        }
        let mean = total / trials as f64;
        assert!(
            (mean / los - 1.0).abs() < 0.2,
            "rician balance off: mean {mean:.3e} vs los {los:.3e}"
        );
    }

    #[test]
    fn electrical_angles_reference_points() {
        let mut s = draw(1, 1)[0].clone();
        s.tx_elevation = std::f64::consts::FRAC_PI_2;
        s.tx_azimuth = 0.0;
        let (px, pz) = electrical_angles(&s, F0, lam() / 2.0, Side::Tx);
        assert!(px.abs() < 1e-12 && pz.abs() < 1e-12);

        s.tx_azimuth = std::f64::consts::FRAC_PI_2;
        let (px, pz) = electrical_angles(&s, F0, lam() / 2.0, Side::Tx);
        assert!((px - std::f64::consts::PI).abs() < 1e-12);
        assert!(pz.abs() < 1e-12);
    }

    #[test]
    fn electrical_angles_match_trig_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut s = draw(1, 1)[0].clone();
        for _ in 0..100 {
            use rand::Rng;
            s.rx_elevation = rng.random_range(0.0..std::f64::consts::PI);
            s.rx_azimuth = rng.random_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2);
            let spacing = rng.random_range(1e-4..1e-2);
            let f = rng.random_range(27e9..29e9);
            let (px, pz) = electrical_angles(&s, f, spacing, Side::Rx);
            let k = 2.0 * std::f64::consts::PI * f / SPEED_OF_LIGHT;
            let ox = k * spacing * s.rx_elevation.sin() * s.rx_azimuth.sin();
            let oz = k * spacing * s.rx_elevation.cos();
            assert!((px - ox).abs() <= 1e-12 * ox.abs().max(1.0));
            assert!((pz - oz).abs() <= 1e-12 * oz.abs().max(1.0));
        }
    }

    #[test]
    fn steering_vector_reference_cases() {
        let ones = steering_vector(0.0, 0.0, 3, 4);
        assert_eq!(ones.len(), 12);
        for v in ones.iter() {
            assert_eq!(*v, Complex64::new(1.0, 0.0));
        }
        // 2x2 grid, psi_x = pi: sign alternates in x only under m = mx*Mz + mz
        let alt = steering_vector(std::f64::consts::PI, 0.0, 2, 2);
        let want = [1.0, 1.0, -1.0, -1.0];
        for (v, w) in alt.iter().zip(want) {
            assert!((v - Complex64::new(w, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn steering_vector_matches_exponent_oracle_and_kronecker() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            use rand::Rng;
            let px: f64 = rng.random_range(-3.0..3.0);
            let pz: f64 = rng.random_range(-3.0..3.0);
            let v = steering_vector(px, pz, 3, 2);
            assert_eq!(v[0], Complex64::new(1.0, 0.0));
            for m in 0..6 {
                let mx = (m / 2) as f64;
                let mz = (m % 2) as f64;
                let want = Complex64::from_polar(1.0, mx * px + mz * pz);
                assert!((v[m] - want).norm() < 1e-12);
                assert!((v[m].norm() - 1.0).abs() < 1e-15);
            }
            let ax = DVector::from_fn(3, |i, _| Complex64::from_polar(1.0, i as f64 * px));
            let az = DVector::from_fn(2, |i, _| Complex64::from_polar(1.0, i as f64 * pz));
            let kron = ax.kronecker(&az);
            assert!((&v - &kron).norm() < 1e-12);
        }
    }

    #[test]
    fn truncated_steering_matches_full_prefix() {
        let full = steering_vector(0.7, -1.1, 3, 3);
        let grid = PlanarGrid {
            atoms_x: 3,
            atoms_z: 3,
            count: 7,
            spacing: 0.0,
        };
        let trunc = steering_for_grid(0.7, -1.1, &grid);
        assert_eq!(trunc.len(), 7);
        for m in 0..7 {
            assert_eq!(trunc[m], full[m]);
        }
    }

    #[test]
    fn single_unit_path_yields_unit_outer_product() {
        let mut s = draw(1, 5)[0].clone();
        s.gain = Complex64::new(1.0, 0.0);
        s.delay = 0.0;
        let tg = grid(2, 2);
        let rg = grid(3, 1);
        let g = channel_matrix(&[s.clone()], F0, &tg, &rg);
        let (tpx, tpz) = electrical_angles(&s, F0, lam() / 2.0, Side::Tx);
        let (rpx, rpz) = electrical_angles(&s, F0, lam() / 2.0, Side::Rx);
        let at = steering_for_grid(tpx, tpz, &tg);
        let ar = steering_for_grid(rpx, rpz, &rg);
        let outer = &ar * at.adjoint();
        assert!((&g - &outer).norm() < 1e-12);
        // unit-modulus outer product: frobenius norm sqrt(M N), rank 1
        assert!((g.norm() - (12.0f64).sqrt()).abs() < 1e-10);
        let ctx = svd_targets(g, F0, 1).unwrap();
        assert!(ctx.singular_values[1] < 1e-12 * ctx.singular_values[0]);
        // frequency-flat magnitude when delay is zero
        for f in [F0 - 5e8, F0 + 5e8] {
            let gf = channel_matrix(&[s.clone()], f, &tg, &rg);
            assert!((gf.norm() - (12.0f64).sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_gains_give_zero_matrix() {
        let mut paths = draw(4, 2);
        for p in &mut paths {
            p.gain = Complex64::default();
        }
        let g = channel_matrix(&paths, F0, &grid(2, 2), &grid(2, 2));
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn three_paths_match_term_accumulation_oracle() {
        let paths = draw(3, 11);
        let tg = grid(2, 3);
        let rg = grid(2, 2);
        let f = F0 + 3e6;
        let g = channel_matrix(&paths, f, &tg, &rg);
        let mut oracle = DMatrix::<Complex64>::zeros(4, 6);
        for p in &paths {
            let (tpx, tpz) = electrical_angles(p, f, lam() / 2.0, Side::Tx);
            let (rpx, rpz) = electrical_angles(p, f, lam() / 2.0, Side::Rx);
            let at = steering_for_grid(tpx, tpz, &tg);
            let ar = steering_for_grid(rpx, rpz, &rg);
            let c = p.gain * Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * f * p.delay);
            for n in 0..4 {
                for m in 0..6 {
                    oracle[(n, m)] += c * ar[n] * at[m].conj();
                }
            }
        }
        assert!((&g - &oracle).norm() <= 1e-12 * oracle.norm());
    }

    #[test]
    fn svd_targets_diagonal_and_identity_cases() {
        let d = DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(3.0, 0.0),
                Complex64::default(),
                Complex64::default(),
                Complex64::new(1.0, 0.0),
            ],
        );
        let ctx = svd_targets(d, F0, 1).unwrap();
        assert!((ctx.target[0] - 3.0).abs() < 1e-12);

        let eye = DMatrix::<Complex64>::identity(2, 2);
        let ctx = svd_targets(eye, F0, 2).unwrap();
        assert!((ctx.target[0] - 1.0).abs() < 1e-12);
        assert!((ctx.target[1] - 1.0).abs() < 1e-12);

        let bad = svd_targets(DMatrix::<Complex64>::identity(2, 2), F0, 3);
        assert!(bad.is_err());
    }

    /// Independent oracle: cyclic Jacobi eigensolver on the Hermitian matrix
    /// `G^H G`; its eigenvalues are the squared singular values.
    fn jacobi_eigenvalues(mut h: DMatrix<Complex64>) -> Vec<f64> {
        let n = h.nrows();
        let scale = h.norm().max(1e-300);
        for _sweep in 0..200 {
            let mut off = 0.0f64;
            for p in 0..n {
                for q in (p + 1)..n {
                    off += h[(p, q)].norm_sqr();
                }
            }
            if off.sqrt() <= 1e-15 * scale {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let b = h[(p, q)];
                    if b.norm() <= 1e-300 {
                        continue;
                    }
                    let beta = b.arg();
                    let alpha = h[(p, p)].re;
                    let gamma = h[(q, q)].re;
                    let tau = (gamma - alpha) / (2.0 * b.norm());
                    let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    // columns then rows: H <- J^H H J with J[(p,p)]=c,
                    // J[(p,q)] = s e^{j beta}, J[(q,p)] = -s e^{-j beta}, J[(q,q)] = c
                    let e = Complex64::from_polar(1.0, beta);
                    for r in 0..n {
                        let hp = h[(r, p)];
                        let hq = h[(r, q)];
                        h[(r, p)] = hp * c - hq * s * e.conj();
                        h[(r, q)] = hp * s * e + hq * c;
                    }
                    for col in 0..n {
                        let hp = h[(p, col)];
                        let hq = h[(q, col)];
                        h[(p, col)] = hp * c - hq * s * e;
                        h[(q, col)] = hp * s * e.conj() + hq * c;
                    }
                }
            }
        }
        let mut eigs: Vec<f64> = (0..n).map(|i| h[(i, i)].re).collect();
        eigs.sort_by(|a, b| b.partial_cmp(a).unwrap());
        eigs
    }

    #[test]
    fn random_svd_matches_jacobi_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for trial in 0..10 {
            use rand::Rng;
            let g = DMatrix::from_fn(6, 6, |_, _| {
                Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            });
            // sanity of the oracle itself: trace and frobenius preserved
            let h = g.adjoint() * &g;
            let eigs = jacobi_eigenvalues(h.clone());
            let trace: f64 = (0..6).map(|i| h[(i, i)].re).sum();
            assert!((eigs.iter().sum::<f64>() - trace).abs() < 1e-10 * trace.abs());

            let ctx = svd_targets(g, F0, 3).unwrap();
            for (i, e) in eigs.iter().enumerate() {
                let want = e.max(0.0).sqrt();
                assert!(
                    (ctx.singular_values[i] - want).abs() <= 1e-9 * ctx.singular_values[0],
                    "trial {trial} sv {i}: {} vs {want}",
                    ctx.singular_values[i]
                );
            }
        }
    }

    #[test]
    fn svd_invariants_and_reference_diagonalization() {
        let paths = draw(8, 13);
        let g = channel_matrix(&paths, F0, &grid(3, 2), &grid(2, 3));
        let s = 2;
        let ctx = svd_targets(g.clone(), F0, s).unwrap();
        // sorted non-negative
        for i in 0..ctx.singular_values.len() {
            assert!(ctx.singular_values[i] >= 0.0);
            if i > 0 {
                assert!(ctx.singular_values[i] <= ctx.singular_values[i - 1] + 1e-15);
            }
        }
        // orthonormal factors
        let eye_e = ctx.left_singular.adjoint() * &ctx.left_singular;
        assert!((&eye_e - DMatrix::<Complex64>::identity(6, 6)).norm() < 1e-10);
        let eye_f = ctx.right_singular.adjoint() * &ctx.right_singular;
        assert!((&eye_f - DMatrix::<Complex64>::identity(6, 6)).norm() < 1e-10);
        // reconstruction
        let lam_m = DMatrix::from_fn(6, 6, |i, j| {
            if i == j {
                Complex64::new(ctx.singular_values[i], 0.0)
            } else {
                Complex64::default()
            }
        });
        let rec = &ctx.left_singular * lam_m * ctx.right_singular.adjoint();
        assert!((&rec - &g).norm() <= 1e-10 * g.norm());
        // reference precoder/combiner realize the target diagonal (sanity of
        // the optimizer's goal): E_s^H G F_s = diag(target)
        let e_s = ctx.left_singular.columns(0, s).into_owned();
        let f_s = ctx.right_singular.columns(0, s).into_owned();
        let h = e_s.adjoint() * &g * f_s;
        let mut err = 0.0f64;
        for i in 0..s {
            for j in 0..s {
                let want = if i == j {
                    Complex64::new(ctx.target[i], 0.0)
                } else {
                    Complex64::default()
                };
                err += (h[(i, j)] - want).norm_sqr();
            }
        }
        assert!(err.sqrt() <= 1e-9 * ctx.target.iter().map(|t| t * t).sum::<f64>().sqrt());
    }

    #[test]
    fn scatterer_dump_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("paths.json");
        let paths = draw(6, 21);
        save_scatterers(&path, &paths).unwrap();
        let loaded = load_scatterers(&path).unwrap();
        assert_eq!(paths, loaded);
    }

    #[test]
    fn degenerate_volume_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bad = ScatterVolume {
            axial_min_frac: 0.9,
            axial_max_frac: 0.1,
            transverse_half_width: 25.0,
        };
        let r = draw_scatterers(&mut rng, 5, [0.0; 3], [0.0, 1.0, 0.0], &bad, &gains());
        assert!(r.is_err());
        let r2 = draw_scatterers(
            &mut rng,
            5,
            [0.0; 3],
            [0.0; 3],
            &ScatterVolume::default(),
            &gains(),
        );
        assert!(r2.is_err());
    }
}
