//! Uniform Cartesian discretization of the container `D = Ω × (−1, 1)`.
//!
//! `Ω` is the box `(0, L₁) [× (0, L₂)]`; the last axis is always the vertical
//! one. Potentials live on nodes, densities and gradients on cells. Nodes on
//! the lateral wall `∂Ω × (−1, 1)` are pinned to zero; the top and bottom lids
//! carry natural boundary conditions.
//!
//! Cells and nodes are numbered row-major with the vertical index fastest, so
//! each vertical column of cells is a contiguous block.

use crate::error::{Error, Result};

/// Geometry and resolution of the discretized container.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    dim: usize,
    extents: Vec<f64>,
    cells: Vec<usize>,
    spacing: Vec<f64>,
    cell_strides: Vec<usize>,
    node_strides: Vec<usize>,
    corner_offsets: Vec<usize>,
}

impl DomainSpec {
    /// `extents` and `n_horizontal` describe `Ω` (one entry per horizontal
    /// axis: one in 2-D, two in 3-D); `n_z` is the number of cells across
    /// `(−1, 1)`.
    pub fn new(extents: &[f64], n_horizontal: &[usize], n_z: usize) -> Result<Self> {
        if extents.is_empty() || extents.len() > 2 {
            return Err(Error::InvalidParameter(format!(
                "Omega needs 1 or 2 horizontal axes, got {}",
                extents.len()
            )));
        }
        if extents.len() != n_horizontal.len() {
            return Err(Error::InvalidParameter(
                "extents and horizontal resolutions differ in length".into(),
            ));
        }
        if let Some(l) = extents.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::InvalidParameter(format!("extent {l} must be positive")));
        }
        let mut cells = n_horizontal.to_vec();
        cells.push(n_z);
        if let Some(n) = cells.iter().find(|n| **n < 2) {
            return Err(Error::InvalidParameter(format!("resolution {n} must be at least 2")));
        }
        let dim = cells.len();
        let mut spacing: Vec<f64> = extents.iter().zip(n_horizontal).map(|(l, n)| l / *n as f64).collect();
        spacing.push(2.0 / n_z as f64);

        let mut cell_strides = vec![1; dim];
        let mut node_strides = vec![1; dim];
        for a in (0..dim - 1).rev() {
            cell_strides[a] = cell_strides[a + 1] * cells[a + 1];
            node_strides[a] = node_strides[a + 1] * (cells[a + 1] + 1);
        }
        let corner_offsets = (0..1usize << dim)
            .map(|b| (0..dim).filter(|a| corner_bit(b, *a)).map(|a| node_strides[a]).sum())
            .collect();
        Ok(Self {
            dim,
            extents: extents.to_vec(),
            cells,
            spacing,
            cell_strides,
            node_strides,
            corner_offsets,
        })
    }

    /// Vertical cross-section `(0, length) × (−1, 1)`.
    pub fn two_d(length: f64, n_x: usize, n_z: usize) -> Result<Self> {
        Self::new(&[length], &[n_x], n_z)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extents(&self) -> &[f64] {
        &self.extents
    }

    /// Cells per axis, vertical last.
    pub fn cells_per_axis(&self) -> &[usize] {
        &self.cells
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn n_z(&self) -> usize {
        self.cells[self.dim - 1]
    }

    pub fn h_z(&self) -> f64 {
        self.spacing[self.dim - 1]
    }

    pub fn n_cells(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn n_nodes(&self) -> usize {
        self.cells.iter().map(|n| n + 1).product()
    }

    /// Number of vertical columns, i.e. horizontal cells of `Ω`.
    pub fn n_columns(&self) -> usize {
        self.n_cells() / self.n_z()
    }

    pub fn cell_measure(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// Horizontal area of one column.
    pub fn column_area(&self) -> f64 {
        self.spacing[..self.dim - 1].iter().product()
    }

    /// `|Ω|`.
    pub fn omega_measure(&self) -> f64 {
        self.extents.iter().product()
    }

    /// `|D| = 2|Ω|`.
    pub fn domain_measure(&self) -> f64 {
        2.0 * self.omega_measure()
    }

    pub fn cell_strides(&self) -> &[usize] {
        &self.cell_strides
    }

    pub fn node_strides(&self) -> &[usize] {
        &self.node_strides
    }

    /// Node offsets of the `2^dim` corners of a cell relative to its lowest
    /// corner. Bit `a` of the corner number selects the upper node on axis `a`.
    pub fn corner_offsets(&self) -> &[usize] {
        &self.corner_offsets
    }

    pub fn cell_multi_index(&self, cell: usize) -> [usize; 3] {
        let mut idx = [0; 3];
        let mut rest = cell;
        for a in 0..self.dim {
            idx[a] = rest / self.cell_strides[a];
            rest %= self.cell_strides[a];
        }
        idx
    }

    pub fn cell_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.cell_strides).map(|(i, s)| i * s).sum()
    }

    pub fn node_multi_index(&self, node: usize) -> [usize; 3] {
        let mut idx = [0; 3];
        let mut rest = node;
        for a in 0..self.dim {
            idx[a] = rest / self.node_strides[a];
            rest %= self.node_strides[a];
        }
        idx
    }

    pub fn node_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.node_strides).map(|(i, s)| i * s).sum()
    }

    /// Lowest corner node of a cell.
    pub fn cell_base_node(&self, cell: usize) -> usize {
        let idx = self.cell_multi_index(cell);
        self.node_index(&idx[..self.dim])
    }

    /// Physical coordinates of a node; entries past `dim` are zero.
    pub fn node_coords(&self, node: usize) -> [f64; 3] {
        let idx = self.node_multi_index(node);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = self.axis_origin(a) + idx[a] as f64 * self.spacing[a];
        }
        x
    }

    pub fn cell_center(&self, cell: usize) -> [f64; 3] {
        let idx = self.cell_multi_index(cell);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = self.axis_origin(a) + (idx[a] as f64 + 0.5) * self.spacing[a];
        }
        x
    }

    /// Height of the center of a cell.
    pub fn cell_z(&self, cell: usize) -> f64 {
        -1.0 + ((cell % self.n_z()) as f64 + 0.5) * self.h_z()
    }

    /// Vertical layer of a cell, 0 at the bottom.
    pub fn layer(&self, cell: usize) -> usize {
        cell % self.n_z()
    }

    pub fn column(&self, cell: usize) -> usize {
        cell / self.n_z()
    }

    fn axis_origin(&self, axis: usize) -> f64 {
        if axis == self.dim - 1 {
            -1.0
        } else {
            0.0
        }
    }

    /// Whether a node lies on the lateral wall and is pinned to zero.
    pub fn is_lateral_node(&self, node: usize) -> bool {
        let idx = self.node_multi_index(node);
        (0..self.dim - 1).any(|a| idx[a] == 0 || idx[a] == self.cells[a])
    }

    pub fn lateral_mask(&self) -> Vec<bool> {
        (0..self.n_nodes()).map(|n| self.is_lateral_node(n)).collect()
    }

    pub(crate) fn check_len(&self, expected: usize, found: usize) -> Result<()> {
        if expected == found {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected, found })
        }
    }
}

#[inline]
pub(crate) fn corner_bit(corner: usize, axis: usize) -> bool {
    corner >> axis & 1 == 1
}

/// Node-based magnetic potential; zero on the lateral wall.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialField {
    values: Vec<f64>,
}

impl PotentialField {
    pub fn zeros(spec: &DomainSpec) -> Self {
        Self { values: vec![0.0; spec.n_nodes()] }
    }

    /// Samples `f` at the nodes; lateral nodes are set to zero regardless.
    pub fn from_fn(spec: &DomainSpec, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..spec.n_nodes())
            .map(|n| {
                if spec.is_lateral_node(n) {
                    0.0
                } else {
                    f(&spec.node_coords(n)[..spec.dim()])
                }
            })
            .collect();
        Self { values }
    }

    /// Rejects vectors of the wrong length or with nonzero lateral values.
    pub fn from_values(spec: &DomainSpec, values: Vec<f64>) -> Result<Self> {
        spec.check_len(spec.n_nodes(), values.len())?;
        if let Some(n) = (0..values.len()).find(|&n| spec.is_lateral_node(n) && values[n] != 0.0) {
            return Err(Error::InvalidParameter(format!(
                "node {n} lies on the lateral wall but has value {}",
                values[n]
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("potential has non-finite values".into()));
        }
        Ok(Self { values })
    }

    /// Builds a field from a vector whose lateral entries are known to be zero.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self { values: self.values.iter().map(|v| alpha * v).collect() }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Cell-based ferrofluid density `ρ ∈ [0, 1]`; binary when it is an indicator.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    values: Vec<f64>,
}

impl DensityField {
    pub fn constant(spec: &DomainSpec, value: f64) -> Result<Self> {
        Self::from_values(vec![value; spec.n_cells()])
    }

    /// Rejects values outside `[0, 1]`.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if let Some((cell, &value)) = values.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::IllPosed { cell, value });
        }
        Ok(Self { values })
    }

    pub fn from_fn(spec: &DomainSpec, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        Self::from_values((0..spec.n_cells()).map(|c| f(&spec.cell_center(c)[..spec.dim()])).collect())
    }

    /// Indicator of the cells for which `pred` holds.
    pub fn indicator(spec: &DomainSpec, mut pred: impl FnMut(usize) -> bool) -> Self {
        Self { values: (0..spec.n_cells()).map(|c| if pred(c) { 1.0 } else { 0.0 }).collect() }
    }

    /// `χ_{z<0}`: the undisturbed flat layer.
    pub fn flat_layer(spec: &DomainSpec) -> Self {
        Self::indicator(spec, |c| spec.cell_z(c) < 0.0)
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
        Self { values }
    }

    #[cfg(test)]
    pub(crate) fn from_raw_unchecked_for_tests(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// `(1 − t)·self + t·other`.
    pub fn blend(&self, other: &Self, t: f64) -> Self {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| ((1.0 - t) * a + t * b).clamp(0.0, 1.0))
            .collect();
        Self { values }
    }

    /// Number of cells where the two fields differ.
    pub fn count_differences(&self, other: &Self) -> usize {
        self.values.iter().zip(&other.values).filter(|(a, b)| a != b).count()
    }
}

/// Interface height `η` per column of `Ω`, strictly inside `(−1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightField {
    values: Vec<f64>,
}

impl HeightField {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if let Some((column, &value)) = values.iter().enumerate().find(|(_, v)| !(v.abs() < 1.0)) {
            return Err(Error::HeightOutOfRange { column, value });
        }
        Ok(Self { values })
    }

    /// Samples `f` at the column centers.
    pub fn from_fn(spec: &DomainSpec, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let nz = spec.n_z();
        Self::from_values(
            (0..spec.n_columns())
                .map(|col| f(&spec.cell_center(col * nz)[..spec.dim() - 1]))
                .collect(),
        )
    }

    pub fn constant(spec: &DomainSpec, value: f64) -> Result<Self> {
        Self::from_values(vec![value; spec.n_columns()])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// One `dim`-vector per cell, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct CellVectors {
    dim: usize,
    data: Vec<f64>,
}

impl CellVectors {
    pub fn zeros(spec: &DomainSpec) -> Self {
        Self { dim: spec.dim(), data: vec![0.0; spec.n_cells() * spec.dim()] }
    }

    pub fn from_values(spec: &DomainSpec, data: Vec<f64>) -> Result<Self> {
        spec.check_len(spec.n_cells() * spec.dim(), data.len())?;
        Ok(Self { dim: spec.dim(), data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_cells(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn get(&self, cell: usize) -> &[f64] {
        &self.data[cell * self.dim..(cell + 1) * self.dim]
    }

    pub fn get_mut(&mut self, cell: usize) -> &mut [f64] {
        &mut self.data[cell * self.dim..(cell + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }
}

/// Gradient at the center of `cell` of the multilinear interpolant of the
/// corner values of `u`. Writes the first `dim` entries of `out`.
#[inline]
pub fn cell_gradient(spec: &DomainSpec, cell: usize, u: &[f64], out: &mut [f64; 3]) {
    let base = spec.cell_base_node(cell);
    gradient_from_base(spec, base, u, out);
}

#[inline]
pub(crate) fn gradient_from_base(spec: &DomainSpec, base: usize, u: &[f64], out: &mut [f64; 3]) {
    let dim = spec.dim;
    *out = [0.0; 3];
    for (b, off) in spec.corner_offsets.iter().enumerate() {
        let v = u[base + off];
        for (a, o) in out.iter_mut().enumerate().take(dim) {
            if corner_bit(b, a) {
                *o += v;
            } else {
                *o -= v;
            }
        }
    }
    let corners_per_edge = (1usize << (dim - 1)) as f64;
    for a in 0..dim {
        out[a] /= corners_per_edge * spec.spacing[a];
    }
}

/// Adds `Gᵀw` for one cell into the node vector `out`, where `G` is the
/// cell-center gradient operator of [`cell_gradient`].
#[inline]
pub(crate) fn scatter_gradient_transpose(spec: &DomainSpec, base: usize, w: &[f64; 3], out: &mut [f64]) {
    let dim = spec.dim;
    let corners_per_edge = (1usize << (dim - 1)) as f64;
    let mut scaled = [0.0; 3];
    for a in 0..dim {
        scaled[a] = w[a] / (corners_per_edge * spec.spacing[a]);
    }
    for (b, off) in spec.corner_offsets.iter().enumerate() {
        let mut acc = 0.0;
        for (a, s) in scaled.iter().enumerate().take(dim) {
            if corner_bit(b, a) {
                acc += s;
            } else {
                acc -= s;
            }
        }
        out[base + off] += acc;
    }
}

/// Iterates `(cell, base node)` pairs without re-deriving multi-indices.
pub(crate) fn for_each_cell(spec: &DomainSpec, mut f: impl FnMut(usize, usize)) {
    let nz = spec.n_z();
    let node_col_stride = spec.node_strides[spec.dim - 2];
    let mut cell = 0;
    for col in 0..spec.n_columns() {
        // Base node of the bottom cell of this column.
        let mut rest = col;
        let mut base = 0;
        for a in (0..spec.dim - 1).rev() {
            let n = spec.cells[a];
            let i = rest % n;
            rest /= n;
            base += i * spec.node_strides[a];
        }
        let _ = node_col_stride;
        for k in 0..nz {
            f(cell, base + k);
            cell += 1;
        }
    }
}

/// Cellwise gradient of a potential.
pub fn gradient(spec: &DomainSpec, u: &PotentialField) -> Result<CellVectors> {
    spec.check_len(spec.n_nodes(), u.len())?;
    let dim = spec.dim();
    let mut out = CellVectors::zeros(spec);
    let mut g = [0.0; 3];
    for_each_cell(spec, |cell, base| {
        gradient_from_base(spec, base, u.as_slice(), &mut g);
        out.get_mut(cell).copy_from_slice(&g[..dim]);
    });
    Ok(out)
}

/// Forward differences of a cell field, zero across the outer boundary.
/// `out` holds `dim` entries per cell.
pub fn forward_difference(spec: &DomainSpec, rho: &[f64], out: &mut [f64]) {
    let dim = spec.dim;
    let nz = spec.n_z();
    let n = spec.n_cells();
    debug_assert_eq!(out.len(), n * dim);
    let inv_h: Vec<f64> = spec.spacing.iter().map(|h| 1.0 / h).collect();
    if dim == 2 {
        let nx = spec.cells[0];
        for i in 0..nx {
            for k in 0..nz {
                let c = i * nz + k;
                let r = rho[c];
                out[2 * c] = if i + 1 < nx { (rho[c + nz] - r) * inv_h[0] } else { 0.0 };
                out[2 * c + 1] = if k + 1 < nz { (rho[c + 1] - r) * inv_h[1] } else { 0.0 };
            }
        }
        return;
    }
    for c in 0..n {
        let idx = spec.cell_multi_index(c);
        for a in 0..dim {
            out[c * dim + a] = if idx[a] + 1 < spec.cells[a] {
                (rho[c + spec.cell_strides[a]] - rho[c]) * inv_h[a]
            } else {
                0.0
            };
        }
    }
}

/// Adjoint of [`forward_difference`] (a negative discrete divergence).
pub fn forward_difference_adjoint(spec: &DomainSpec, y: &[f64], out: &mut [f64]) {
    let dim = spec.dim;
    let nz = spec.n_z();
    let n = spec.n_cells();
    debug_assert_eq!(y.len(), n * dim);
    let inv_h: Vec<f64> = spec.spacing.iter().map(|h| 1.0 / h).collect();
    out.iter_mut().for_each(|o| *o = 0.0);
    if dim == 2 {
        let nx = spec.cells[0];
        for i in 0..nx {
            for k in 0..nz {
                let c = i * nz + k;
                if i + 1 < nx {
                    let v = y[2 * c] * inv_h[0];
                    out[c] -= v;
                    out[c + nz] += v;
                }
                if k + 1 < nz {
                    let v = y[2 * c + 1] * inv_h[1];
                    out[c] -= v;
                    out[c + 1] += v;
                }
            }
        }
        return;
    }
    for c in 0..n {
        let idx = spec.cell_multi_index(c);
        for a in 0..dim {
            if idx[a] + 1 < spec.cells[a] {
                let v = y[c * dim + a] * inv_h[a];
                out[c] -= v;
                out[c + spec.cell_strides[a]] += v;
            }
        }
    }
}

/// `‖∇⁺‖²` bound `Σ_a 4/h_a²` for the forward-difference operator.
pub fn forward_difference_norm_sq_bound(spec: &DomainSpec) -> f64 {
    spec.spacing.iter().map(|h| 4.0 / (h * h)).sum()
}

/// Euclidean norm of the forward-difference gradient of `rho` at `cell`.
#[inline]
pub(crate) fn local_tv_density(spec: &DomainSpec, rho: &[f64], cell: usize, idx: &[usize; 3]) -> f64 {
    let mut s = 0.0;
    for a in 0..spec.dim {
        if idx[a] + 1 < spec.cells[a] {
            let d = (rho[cell + spec.cell_strides[a]] - rho[cell]) / spec.spacing[a];
            s += d * d;
        }
    }
    s.sqrt()
}

/// Isotropic total variation of a cell field, measured inside the open
/// container: differences across the outer boundary contribute nothing.
pub fn total_variation(spec: &DomainSpec, rho: &DensityField) -> Result<f64> {
    spec.check_len(spec.n_cells(), rho.len())?;
    Ok(total_variation_raw(spec, rho.as_slice()))
}

pub(crate) fn total_variation_raw(spec: &DomainSpec, rho: &[f64]) -> f64 {
    let dim = spec.dim;
    let mut buf = vec![0.0; rho.len() * dim];
    forward_difference(spec, rho, &mut buf);
    let sum: f64 = buf
        .chunks_exact(dim)
        .map(|q| q.iter().map(|v| v * v).sum::<f64>().sqrt())
        .sum();
    sum * spec.cell_measure()
}

/// `∫_D ρ`.
pub fn volume(spec: &DomainSpec, rho: &DensityField) -> Result<f64> {
    spec.check_len(spec.n_cells(), rho.len())?;
    Ok(volume_raw(spec, rho.as_slice()))
}

pub(crate) fn volume_raw(spec: &DomainSpec, rho: &[f64]) -> f64 {
    rho.iter().sum::<f64>() * spec.cell_measure()
}

/// `χ_{z<η}` sampled at cell centers.
pub fn indicator_from_graph(spec: &DomainSpec, eta: &HeightField) -> Result<DensityField> {
    spec.check_len(spec.n_columns(), eta.len())?;
    let eta = eta.as_slice();
    Ok(DensityField::indicator(spec, |c| spec.cell_z(c) < eta[spec.column(c)]))
}

/// Inverse of [`indicator_from_graph`]: per column, the height of the single
/// fluid/air cut. Columns with overhangs, bubbles, floating drops, or no cut
/// strictly inside `(−1, 1)` are reported as [`Error::NotAGraph`].
pub fn graph_from_indicator(spec: &DomainSpec, chi: &DensityField) -> Result<HeightField> {
    spec.check_len(spec.n_cells(), chi.len())?;
    if !chi.is_binary() {
        return Err(Error::InvalidParameter("graph extraction needs a binary indicator".into()));
    }
    let nz = spec.n_z();
    let mut heights = Vec::with_capacity(spec.n_columns());
    for (column, cells) in chi.as_slice().chunks_exact(nz).enumerate() {
        let filled = cells.iter().take_while(|v| **v == 1.0).count();
        if filled == 0 || filled == nz || cells[filled..].iter().any(|v| *v != 0.0) {
            return Err(Error::NotAGraph { column });
        }
        heights.push(-1.0 + filled as f64 * spec.h_z());
    }
    HeightField::from_values(heights)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec2(nx: usize, nz: usize) -> DomainSpec {
        DomainSpec::two_d(1.0, nx, nz).unwrap()
    }

    #[test]
    fn measures() {
        let s = DomainSpec::new(&[2.0, 0.5], &[4, 3], 6).unwrap();
        assert_eq!(s.dim(), 3);
        assert_eq!(s.n_cells(), 72);
        assert_eq!(s.n_nodes(), 5 * 4 * 7);
        assert!((s.omega_measure() - 1.0).abs() < 1e-15);
        assert!((s.domain_measure() - 2.0).abs() < 1e-15);
        assert!((s.cell_measure() * s.n_cells() as f64 - 2.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_coarse_or_empty_grids() {
        assert!(DomainSpec::two_d(1.0, 1, 4).is_err());
        assert!(DomainSpec::two_d(1.0, 4, 1).is_err());
        assert!(DomainSpec::two_d(0.0, 4, 4).is_err());
        assert!(DomainSpec::new(&[1.0, 1.0, 1.0], &[2, 2, 2], 2).is_err());
    }

    #[test]
    fn lateral_mask_covers_side_walls_only() {
        let s = spec2(3, 4);
        let mask = s.lateral_mask();
        for n in 0..s.n_nodes() {
            let idx = s.node_multi_index(n);
            assert_eq!(mask[n], idx[0] == 0 || idx[0] == 3);
        }
    }

    #[test]
    fn gradient_of_z_is_unit_vertical() {
        let s = spec2(5, 6);
        // Build the raw field directly: the lateral wall is not zero for u = z.
        let u: Vec<f64> = (0..s.n_nodes()).map(|n| s.node_coords(n)[1]).collect();
        let mut g = [0.0; 3];
        for c in 0..s.n_cells() {
            cell_gradient(&s, c, &u, &mut g);
            assert!(g[0].abs() < 1e-13 && (g[1] - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn gradient_of_bilinear_field_on_two_by_two() {
        let s = spec2(2, 2);
        let u: Vec<f64> = (0..s.n_nodes())
            .map(|n| {
                let x = s.node_coords(n);
                x[0] * x[1]
            })
            .collect();
        // Cell centers: x ∈ {0.25, 0.75}, z ∈ {−0.5, 0.5}; ∇(xz) = (z, x).
        let mut g = [0.0; 3];
        for (cell, (gx, gz)) in [(0, (-0.5, 0.25)), (1, (0.5, 0.25)), (2, (-0.5, 0.75)), (3, (0.5, 0.75))] {
            cell_gradient(&s, cell, &u, &mut g);
            assert!((g[0] - gx).abs() < 1e-14 && (g[1] - gz).abs() < 1e-14, "cell {cell}: {g:?}");
        }
    }

    #[test]
    fn gradient_rejects_wrong_length() {
        let s = spec2(3, 3);
        let other = spec2(4, 3);
        assert!(matches!(
            gradient(&s, &PotentialField::zeros(&other)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn forward_difference_adjoint_identity() {
        let s = DomainSpec::new(&[1.0, 0.7], &[3, 4], 5).unwrap();
        let n = s.n_cells();
        let rho: Vec<f64> = (0..n).map(|i| ((i * 37) % 11) as f64 / 11.0).collect();
        let y: Vec<f64> = (0..n * 3).map(|i| ((i * 17) % 7) as f64 - 3.0).collect();
        let mut krho = vec![0.0; n * 3];
        let mut kty = vec![0.0; n];
        forward_difference(&s, &rho, &mut krho);
        forward_difference_adjoint(&s, &y, &mut kty);
        let lhs: f64 = krho.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = rho.iter().zip(&kty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn tv_of_flat_layer_is_omega() {
        for (nx, nz) in [(2, 2), (7, 10), (32, 64)] {
            let s = spec2(nx, nz);
            let tv = total_variation(&s, &DensityField::flat_layer(&s)).unwrap();
            assert!((tv - 1.0).abs() < 1e-12, "{tv}");
        }
        let s = spec2(6, 6);
        assert_eq!(total_variation(&s, &DensityField::constant(&s, 0.3).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn volumes() {
        let s = spec2(4, 8);
        let one = DensityField::constant(&s, 1.0).unwrap();
        let half = DensityField::constant(&s, 0.5).unwrap();
        assert!((volume(&s, &one).unwrap() - 2.0).abs() < 1e-14);
        assert!((volume(&s, &half).unwrap() - 1.0).abs() < 1e-14);
        assert!((volume(&s, &DensityField::flat_layer(&s)).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn graph_round_trip() {
        let s = spec2(16, 20);
        let eta = HeightField::from_fn(&s, |x| 0.3 * (2.0 * std::f64::consts::PI * x[0]).sin()).unwrap();
        let chi = indicator_from_graph(&s, &eta).unwrap();
        let back = graph_from_indicator(&s, &chi).unwrap();
        for (a, b) in eta.as_slice().iter().zip(back.as_slice()) {
            assert!((a - b).abs() <= 0.5 * s.h_z() + 1e-14);
        }
        let flat = graph_from_indicator(&s, &DensityField::flat_layer(&s)).unwrap();
        assert!(flat.as_slice().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn bottom_layer_from_low_graph() {
        let s = spec2(5, 10);
        let eta = HeightField::constant(&s, -1.0 + 0.5 * s.h_z() + 1e-9).unwrap();
        let chi = indicator_from_graph(&s, &eta).unwrap();
        for c in 0..s.n_cells() {
            assert_eq!(chi.as_slice()[c], if s.layer(c) == 0 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn heights_out_of_range_are_rejected() {
        assert!(matches!(
            HeightField::from_values(vec![0.0, 1.0]),
            Err(Error::HeightOutOfRange { column: 1, .. })
        ));
    }

    #[test]
    fn bubble_is_not_a_graph() {
        let s = spec2(3, 8);
        let chi = DensityField::indicator(&s, |c| {
            let (col, k) = (s.column(c), s.layer(c));
            k < 4 && !(col == 1 && k == 2)
        });
        assert_eq!(graph_from_indicator(&s, &chi), Err(Error::NotAGraph { column: 1 }));
        let drop = DensityField::indicator(&s, |c| s.layer(c) == 5);
        assert_eq!(graph_from_indicator(&s, &drop), Err(Error::NotAGraph { column: 0 }));
    }
}
