//! Discretized policy grids: the lattice spec and normalized distributions over it.
//!
//! The first grid dimension is always phase; the remaining dimensions are
//! spatial. Cell storage is row-major with phase as the slowest-varying index,
//! so a "phase slice" is a contiguous block of spatial cells.

use serde::{Deserialize, Serialize};

use super::PolicyError;

/// Lattice over (phase, spatial...) space: per-dimension bounds and cell counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    bounds: Vec<(f64, f64)>,
    cells: Vec<usize>,
}

impl GridSpec {
    /// Dimension 0 is phase. Requires at least two cells per dimension and
    /// `min < max` bounds.
    pub fn new(bounds: Vec<(f64, f64)>, cells: Vec<usize>) -> Result<Self, PolicyError> {
        if bounds.is_empty() || bounds.len() != cells.len() {
            return Err(PolicyError::InvalidSpec(format!(
                "bounds/cells length mismatch: {} vs {}",
                bounds.len(),
                cells.len()
            )));
        }
        for (d, (&(lo, hi), &n)) in bounds.iter().zip(&cells).enumerate() {
            if lo >= hi || !lo.is_finite() || !hi.is_finite() {
                return Err(PolicyError::InvalidSpec(format!(
                    "dimension {d}: bounds ({lo}, {hi}) must be finite with min < max"
                )));
            }
            if n < 2 {
                return Err(PolicyError::InvalidSpec(format!(
                    "dimension {d}: need at least 2 cells, got {n}"
                )));
            }
        }
        Ok(Self { bounds, cells })
    }

    /// Phase on [0, 1] plus `spatial_cells.len()` spatial dimensions.
    pub fn with_phase(
        phase_cells: usize,
        spatial_bounds: Vec<(f64, f64)>,
        spatial_cells: Vec<usize>,
    ) -> Result<Self, PolicyError> {
        let mut bounds = vec![(0.0, 1.0)];
        bounds.extend(spatial_bounds);
        let mut cells = vec![phase_cells];
        cells.extend(spatial_cells);
        Self::new(bounds, cells)
    }

    pub fn ndim(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    /// Total cell count.
    pub fn len(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn phase_cells(&self) -> usize {
        self.cells[0]
    }

    /// Sub-spec over the spatial dimensions (everything but phase).
    pub fn spatial(&self) -> GridSpec {
        GridSpec {
            bounds: self.bounds[1..].to_vec(),
            cells: self.cells[1..].to_vec(),
        }
    }

    pub fn spatial_len(&self) -> usize {
        self.cells[1..].iter().product()
    }

    pub fn cell_width(&self, dim: usize) -> f64 {
        let (lo, hi) = self.bounds[dim];
        (hi - lo) / self.cells[dim] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.ndim()).map(|d| self.cell_width(d)).product()
    }

    /// Center coordinate of cell `i` along `dim`.
    pub fn center(&self, dim: usize, i: usize) -> f64 {
        let (lo, _) = self.bounds[dim];
        lo + (i as f64 + 0.5) * self.cell_width(dim)
    }

    /// Center point of a cell given its multi-index.
    pub fn cell_center(&self, multi: &[usize]) -> Vec<f64> {
        multi
            .iter()
            .enumerate()
            .map(|(d, &i)| self.center(d, i))
            .collect()
    }

    /// Row-major flat index for a multi-index.
    pub fn flatten(&self, multi: &[usize]) -> usize {
        debug_assert_eq!(multi.len(), self.ndim());
        let mut idx = 0;
        for (d, &i) in multi.iter().enumerate() {
            debug_assert!(i < self.cells[d]);
            idx = idx * self.cells[d] + i;
        }
        idx
    }

    /// Multi-index for a row-major flat index.
    pub fn unflatten(&self, mut idx: usize) -> Vec<usize> {
        let mut multi = vec![0; self.ndim()];
        for d in (0..self.ndim()).rev() {
            multi[d] = idx % self.cells[d];
            idx /= self.cells[d];
        }
        multi
    }

    /// Cell index along `dim` containing coordinate `x`, clamped to the grid.
    pub fn cell_along(&self, dim: usize, x: f64) -> usize {
        let (lo, _) = self.bounds[dim];
        let i = ((x - lo) / self.cell_width(dim)).floor() as isize;
        i.clamp(0, self.cells[dim] as isize - 1) as usize
    }

    /// Multi-index of the cell containing `point`, clamped to the grid.
    pub fn cell_of(&self, point: &[f64]) -> Vec<usize> {
        debug_assert_eq!(point.len(), self.ndim());
        point
            .iter()
            .enumerate()
            .map(|(d, &x)| self.cell_along(d, x))
            .collect()
    }

    /// True if `point` lies within the grid bounds (closed box).
    pub fn contains(&self, point: &[f64]) -> bool {
        point
            .iter()
            .zip(&self.bounds)
            .all(|(&x, &(lo, hi))| x >= lo && x <= hi)
    }
}

/// Discretized probability distribution over a [`GridSpec`] lattice.
///
/// Values are non-negative; a normalized distribution sums to 1 within 1e-9.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDistribution {
    spec: GridSpec,
    values: Vec<f64>,
    normalized: bool,
}

pub(crate) const NORM_TOL: f64 = 1e-9;

impl GridDistribution {
    /// Wrap raw cell values. Rejects negative or non-finite entries.
    pub fn from_values(spec: GridSpec, values: Vec<f64>) -> Result<Self, PolicyError> {
        if values.len() != spec.len() {
            return Err(PolicyError::InvalidSpec(format!(
                "value count {} does not match grid size {}",
                values.len(),
                spec.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(PolicyError::InvalidSpec(
                "cell values must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = values.iter().sum();
        let normalized = (sum - 1.0).abs() <= NORM_TOL;
        Ok(Self {
            spec,
            values,
            normalized,
        })
    }

    /// Every cell equal, summing to 1.
    pub fn uniform(spec: GridSpec) -> Self {
        let n = spec.len();
        Self {
            values: vec![1.0 / n as f64; n],
            spec,
            normalized: true,
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Rescale to sum 1. Errors if total mass is zero.
    pub fn into_normalized(mut self) -> Result<Self, PolicyError> {
        let sum = self.sum();
        if sum <= 0.0 {
            return Err(PolicyError::ZeroMass);
        }
        for v in &mut self.values {
            *v /= sum;
        }
        self.normalized = true;
        Ok(self)
    }

    /// Shannon entropy in nats (0·ln 0 treated as 0).
    pub fn entropy(&self) -> f64 {
        -self
            .values
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>()
    }

    pub fn value_at(&self, multi: &[usize]) -> f64 {
        self.values[self.spec.flatten(multi)]
    }

    /// Contiguous spatial block for phase cell `t`.
    pub fn phase_slice(&self, t: usize) -> &[f64] {
        let stride = self.spec.spatial_len();
        &self.values[t * stride..(t + 1) * stride]
    }

    pub(crate) fn set_normalized(&mut self, normalized: bool) {
        self.normalized = normalized;
    }
}

const GRID_MAGIC: &[u8; 4] = b"NFGD";
const GRID_VERSION: u16 = 1;

impl GridDistribution {
    /// Binary layout: magic, version, ndim, per-dim (cells u32, min f64, max f64),
    /// then row-major cell values as little-endian f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.spec.ndim() * 20 + self.values.len() * 8);
        out.extend_from_slice(GRID_MAGIC);
        out.extend_from_slice(&GRID_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.spec.ndim() as u16).to_le_bytes());
        for d in 0..self.spec.ndim() {
            out.extend_from_slice(&(self.spec.cells[d] as u32).to_le_bytes());
            out.extend_from_slice(&self.spec.bounds[d].0.to_le_bytes());
            out.extend_from_slice(&self.spec.bounds[d].1.to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PolicyError> {
        let bad = |msg: &str| PolicyError::InvalidSpec(format!("grid deserialization: {msg}"));
        if bytes.len() < 8 || &bytes[0..4] != GRID_MAGIC {
            return Err(bad("missing magic"));
        }
        let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
        if version != GRID_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let ndim = u16::from_le_bytes(bytes[6..8].try_into().unwrap()) as usize;
        let mut off = 8;
        let mut cells = Vec::with_capacity(ndim);
        let mut bounds = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            if bytes.len() < off + 20 {
                return Err(bad("truncated header"));
            }
            cells.push(u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize);
            let lo = f64::from_le_bytes(bytes[off + 4..off + 12].try_into().unwrap());
            let hi = f64::from_le_bytes(bytes[off + 12..off + 20].try_into().unwrap());
            bounds.push((lo, hi));
            off += 20;
        }
        let spec = GridSpec::new(bounds, cells)?;
        let n = spec.len();
        if bytes.len() != off + n * 8 {
            return Err(bad("value payload size mismatch"));
        }
        let mut values = Vec::with_capacity(n);
        for i in 0..n {
            let s = off + i * 8;
            values.push(f64::from_le_bytes(bytes[s..s + 8].try_into().unwrap()));
        }
        Self::from_values(spec, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_2x3() -> GridSpec {
        GridSpec::new(vec![(0.0, 1.0), (0.0, 3.0)], vec![2, 3]).unwrap()
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(GridSpec::new(vec![(0.0, 1.0)], vec![1]).is_err());
        assert!(GridSpec::new(vec![(1.0, 0.0)], vec![4]).is_err());
        assert!(GridSpec::new(vec![], vec![]).is_err());
        assert!(GridSpec::new(vec![(0.0, 1.0), (0.0, 1.0)], vec![4]).is_err());
    }

    #[test]
    fn flatten_roundtrip() {
        let spec = spec_2x3();
        for idx in 0..spec.len() {
            assert_eq!(spec.flatten(&spec.unflatten(idx)), idx);
        }
        // Row-major: phase is the slow axis.
        assert_eq!(spec.flatten(&[1, 0]), 3);
    }

    #[test]
    fn cell_centers() {
        let spec = spec_2x3();
        assert_eq!(spec.cell_center(&[0, 0]), vec![0.25, 0.5]);
        assert_eq!(spec.cell_center(&[1, 2]), vec![0.75, 2.5]);
        assert_eq!(spec.cell_of(&[0.9, 2.9]), vec![1, 2]);
        // Out-of-bounds points clamp to edge cells.
        assert_eq!(spec.cell_of(&[-5.0, 99.0]), vec![0, 2]);
    }

    #[test]
    fn uniform_is_flat_and_normalized() {
        let u = GridDistribution::uniform(spec_2x3());
        assert!(u.is_normalized());
        assert!(u.values().iter().all(|&v| (v - 1.0 / 6.0).abs() < 1e-15));
        assert!((u.entropy() - (6.0f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn normalize_zero_mass_errors() {
        let d = GridDistribution::from_values(spec_2x3(), vec![0.0; 6]).unwrap();
        assert!(matches!(d.into_normalized(), Err(PolicyError::ZeroMass)));
    }

    #[test]
    fn binary_roundtrip_is_exact() {
        let spec = spec_2x3();
        let vals = vec![0.1, 0.2, 0.05, 0.15, 0.3, 0.2];
        let d = GridDistribution::from_values(spec, vals.clone()).unwrap();
        let bytes = d.to_bytes();
        let back = GridDistribution::from_bytes(&bytes).unwrap();
        assert_eq!(back.values(), &vals[..]);
        assert_eq!(back.spec(), d.spec());
        // Byte-stable re-serialization.
        assert_eq!(back.to_bytes(), bytes);
    }
}
