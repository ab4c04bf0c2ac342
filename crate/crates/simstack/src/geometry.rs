//! Physical layout of the metasurface stacks and antenna arrays.
//!
//! Both transceiver stacks use the same convention: the antenna array sits in
//! the stack's origin plane, layer 1 lies one inter-layer gap `d` beyond it
//! along the propagation axis, and the last layer is the face that exchanges
//! energy with the air channel. The receive stack is built with the opposite
//! axis sign so its last layer faces the transmitter.
//!
//! Within a layer the meta-atoms form a centered uniform grid in the x-z
//! plane. Atom index `m` (0-based) maps to grid coordinates as
//! `m = m_x * atoms_z + m_z`, i.e. the z coordinate varies fastest.

use crate::error::{Error, Result};

/// Structural parameters of one metasurface stack plus its antenna array.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StackConfig {
    /// Number of metasurface layers (`L` on the transmit side, `K` on receive).
    pub num_layers: usize,
    /// Grid extent along x.
    pub atoms_x: usize,
    /// Grid extent along z.
    pub atoms_z: usize,
    /// Meta-atoms actually populated, `<= atoms_x * atoms_z`. The grid is
    /// filled in index order, so a deficit truncates the trailing rows.
    pub atom_count: usize,
    /// Pitch between adjacent meta-atoms in meters.
    pub atom_spacing: f64,
    /// Stack thickness in meters; the inter-layer gap is `thickness / layers`.
    pub total_thickness: f64,
    /// Area of a single meta-atom in square meters.
    pub atom_area: f64,
    /// Number of antennas (one per spatial stream).
    pub num_antennas: usize,
    /// Pitch of the antenna line in meters.
    pub antenna_spacing: f64,
}

impl StackConfig {
    /// Full-grid constructor; validates every invariant.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        num_layers: usize,
        atoms_x: usize,
        atoms_z: usize,
        atom_spacing: f64,
        total_thickness: f64,
        atom_area: f64,
        num_antennas: usize,
        antenna_spacing: f64,
    ) -> Result<Self> {
        let cfg = StackConfig {
            num_layers,
            atoms_x,
            atoms_z,
            atom_count: atoms_x * atoms_z,
            atom_spacing,
            total_thickness,
            atom_area,
            num_antennas,
            antenna_spacing,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Replaces the populated atom count, keeping the grid extents. Used by
    /// the single-layer baseline whose atom total is not a perfect square.
    pub fn with_atom_count(mut self, count: usize) -> Result<Self> {
        self.atom_count = count;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_layers == 0 {
            return fail("num_layers must be >= 1".into());
        }
        if self.atoms_x == 0 || self.atoms_z == 0 {
            return fail("atoms_x and atoms_z must be >= 1".into());
        }
        if self.atom_count == 0 || self.atom_count > self.atoms_x * self.atoms_z {
            return fail(format!(
                "atom_count {} outside 1..={}",
                self.atom_count,
                self.atoms_x * self.atoms_z
            ));
        }
        if !(self.atom_spacing > 0.0) {
            return fail("atom_spacing must be positive".into());
        }
        if !(self.total_thickness > 0.0) {
            return fail("total_thickness must be positive".into());
        }
        if !(self.atom_area > 0.0) {
            return fail("atom_area must be positive".into());
        }
        if self.num_antennas == 0 {
            return fail("num_antennas must be >= 1".into());
        }
        if !(self.antenna_spacing > 0.0) {
            return fail("antenna_spacing must be positive".into());
        }
        Ok(())
    }

    /// Number of populated meta-atoms per layer (`M` or `N`).
    pub fn atoms(&self) -> usize {
        self.atom_count
    }

    /// Inter-layer gap `d = total_thickness / num_layers`.
    pub fn layer_gap(&self) -> f64 {
        self.total_thickness / self.num_layers as f64
    }

    /// The in-plane grid seen by steering-vector construction.
    pub fn grid(&self) -> PlanarGrid {
        PlanarGrid {
            atoms_x: self.atoms_x,
            atoms_z: self.atoms_z,
            count: self.atom_count,
            spacing: self.atom_spacing,
        }
    }
}

/// In-plane description of one layer's atom grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarGrid {
    pub atoms_x: usize,
    pub atoms_z: usize,
    pub count: usize,
    pub spacing: f64,
}

/// Identifies a source or destination plane inside one stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlaneRef {
    /// The antenna plane at the stack origin.
    Antennas,
    /// Metasurface layer `1..=num_layers`.
    Layer(usize),
}

/// Concrete 3D positions of every element of one stack.
#[derive(Debug, Clone)]
pub struct SimGeometry {
    config: StackConfig,
    origin: [f64; 3],
    axis_sign: f64,
    /// `layers[l-1][m]` is the position of atom `m` on layer `l`.
    layers: Vec<Vec<[f64; 3]>>,
    antennas: Vec<[f64; 3]>,
}

/// Builds the stack layout: layer `l` sits at signed offset `l * d` from the
/// origin along the y axis, atoms form a centered grid at the configured
/// pitch, and the antennas form a centered line along x in the origin plane.
pub fn build_stack_geometry(config: &StackConfig, origin: [f64; 3], axis_sign: i8) -> SimGeometry {
    assert!(
        axis_sign == 1 || axis_sign == -1,
        "axis_sign must be +1 or -1"
    );
    config.validate().expect("StackConfig invariants must hold");
    let sign = axis_sign as f64;
    let d = config.layer_gap();

    let mut layers = Vec::with_capacity(config.num_layers);
    for l in 1..=config.num_layers {
        let y = origin[1] + sign * l as f64 * d;
        let mut atoms = Vec::with_capacity(config.atom_count);
        for m in 0..config.atom_count {
            let (dx, dz) = grid_offset(&config.grid(), m);
            atoms.push([origin[0] + dx, y, origin[2] + dz]);
        }
        layers.push(atoms);
    }

    let s = config.num_antennas;
    let antennas = (0..s)
        .map(|i| {
            let dx = (i as f64 - (s as f64 - 1.0) / 2.0) * config.antenna_spacing;
            [origin[0] + dx, origin[1], origin[2]]
        })
        .collect();

    SimGeometry {
        config: config.clone(),
        origin,
        axis_sign: sign,
        layers,
        antennas,
    }
}

/// In-plane offset of atom `m` from the layer center.
pub(crate) fn grid_offset(grid: &PlanarGrid, m: usize) -> (f64, f64) {
    debug_assert!(m < grid.count);
    let mx = m / grid.atoms_z;
    let mz = m % grid.atoms_z;
    let dx = (mx as f64 - (grid.atoms_x as f64 - 1.0) / 2.0) * grid.spacing;
    let dz = (mz as f64 - (grid.atoms_z as f64 - 1.0) / 2.0) * grid.spacing;
    (dx, dz)
}

impl SimGeometry {
    pub fn config(&self) -> &StackConfig {
        &self.config
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn axis_sign(&self) -> f64 {
        self.axis_sign
    }

    pub fn layer_gap(&self) -> f64 {
        self.config.layer_gap()
    }

    /// Atom positions of layer `l` (1-based).
    pub fn layer_positions(&self, l: usize) -> &[[f64; 3]] {
        assert!(
            (1..=self.config.num_layers).contains(&l),
            "layer index {l} out of range 1..={}",
            self.config.num_layers
        );
        &self.layers[l - 1]
    }

    pub fn antenna_positions(&self) -> &[[f64; 3]] {
        &self.antennas
    }

    pub fn plane_positions(&self, plane: PlaneRef) -> &[[f64; 3]] {
        match plane {
            PlaneRef::Antennas => self.antenna_positions(),
            PlaneRef::Layer(l) => self.layer_positions(l),
        }
    }

    /// Center of the layer facing the air channel (the last layer).
    pub fn face_center(&self) -> [f64; 3] {
        let y = self.origin[1] + self.axis_sign * self.config.num_layers as f64 * self.layer_gap();
        [self.origin[0], y, self.origin[2]]
    }

    /// Euclidean distance between two elements on adjacent planes.
    ///
    /// The planes must be consecutive: antenna plane to layer 1, or layer `l`
    /// to layer `l + 1` (in either order). Always `>= layer_gap()`.
    pub fn inter_layer_distance(
        &self,
        from: PlaneRef,
        from_idx: usize,
        to: PlaneRef,
        to_idx: usize,
    ) -> f64 {
        let rank = |p: PlaneRef| match p {
            PlaneRef::Antennas => 0usize,
            PlaneRef::Layer(l) => l,
        };
        let (a, b) = (rank(from), rank(to));
        assert!(
            a.abs_diff(b) == 1,
            "planes must be adjacent, got {from:?} and {to:?}"
        );
        let pa = self.plane_positions(from)[from_idx];
        let pb = self.plane_positions(to)[to_idx];
        distance(pa, pb)
    }
}

pub(crate) fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}
