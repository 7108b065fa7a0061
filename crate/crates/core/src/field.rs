use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Largest admissible per-node condition number of a metric.
pub const MAX_CONDITION: f64 = 1e8;

/// Real function sampled at every grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|i| f(&grid.coords(i)[..grid.dim()]))
            .collect();
        Self { grid, values }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn check_finite(&self, name: &str) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(name.to_string()))
        }
    }
}

/// Position of a tensor index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variance {
    Covariant,
    Contravariant,
}

/// Rank-k tensor per node. Components are stored node-major with the index
/// tuple `(i_1, ..., i_k)` flattened row-major in base `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    pub grid: Grid,
    pub signature: Vec<Variance>,
    pub data: Vec<f64>,
}

impl TensorField {
    pub fn zeros(grid: Grid, signature: Vec<Variance>) -> Self {
        let comps = grid.dim().pow(signature.len() as u32);
        Self {
            grid,
            data: vec![0.0; comps * grid.len()],
            signature,
        }
    }

    pub fn covariant(grid: Grid, rank: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(grid, vec![Variance::Covariant; rank], data)
    }

    pub fn new(grid: Grid, signature: Vec<Variance>, data: Vec<f64>) -> Result<Self> {
        let comps = grid.dim().pow(signature.len() as u32);
        if data.len() != comps * grid.len() {
            return Err(Error::GridMismatch);
        }
        Ok(Self {
            grid,
            signature,
            data,
        })
    }

    pub fn rank(&self) -> usize {
        self.signature.len()
    }

    pub fn components(&self) -> usize {
        self.grid.dim().pow(self.rank() as u32)
    }

    pub fn at(&self, node: usize) -> &[f64] {
        let c = self.components();
        &self.data[node * c..(node + 1) * c]
    }

    /// Flat component offset of an index tuple.
    pub fn offset(&self, idx: &[usize]) -> usize {
        let n = self.grid.dim();
        idx.iter().fold(0, |acc, &i| acc * n + i)
    }

    pub fn component(&self, idx: &[usize]) -> ScalarField {
        let c = self.components();
        let o = self.offset(idx);
        ScalarField {
            grid: self.grid,
            values: (0..self.grid.len()).map(|p| self.data[p * c + o]).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Pointwise sum with a field of the same shape.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.grid != other.grid || self.signature != other.signature {
            return Err(Error::GridMismatch);
        }
        Ok(Self {
            grid: self.grid,
            signature: self.signature.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }
}

/// Symmetric positive definite 2-tensor per node, stored as a full `n x n` block.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricField {
    pub grid: Grid,
    pub data: Vec<f64>,
}

impl MetricField {
    /// Validates symmetry, positivity and conditioning.
    pub fn new(grid: Grid, data: Vec<f64>) -> Result<Self> {
        let g = Self::new_unchecked(grid, data)?;
        g.validate()?;
        Ok(g)
    }

    pub(crate) fn new_unchecked(grid: Grid, data: Vec<f64>) -> Result<Self> {
        let n = grid.dim();
        if data.len() != n * n * grid.len() {
            return Err(Error::GridMismatch);
        }
        Ok(Self { grid, data })
    }

    pub fn flat(grid: Grid) -> Self {
        Self::scaled_identity(grid, 1.0)
    }

    pub fn scaled_identity(grid: Grid, c: f64) -> Self {
        let n = grid.dim();
        let mut data = vec![0.0; n * n * grid.len()];
        for block in data.chunks_mut(n * n) {
            for i in 0..n {
                block[i * n + i] = c;
            }
        }
        Self { grid, data }
    }

    /// Conformal metric `e^{2φ} δ`.
    pub fn conformal(phi: &ScalarField) -> Self {
        let grid = phi.grid;
        let n = grid.dim();
        let mut data = vec![0.0; n * n * grid.len()];
        for (p, block) in data.chunks_mut(n * n).enumerate() {
            let c = (2.0 * phi.values[p]).exp();
            for i in 0..n {
                block[i * n + i] = c;
            }
        }
        Self { grid, data }
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    #[inline]
    pub fn at(&self, node: usize) -> &[f64] {
        let nn = self.dim() * self.dim();
        &self.data[node * nn..(node + 1) * nn]
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: self.grid,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn as_tensor(&self) -> TensorField {
        TensorField {
            grid: self.grid,
            signature: vec![Variance::Covariant; 2],
            data: self.data.clone(),
        }
    }

    /// Overwrites each block with its exact symmetric part.
    pub fn symmetrize(&mut self) {
        let n = self.dim();
        for block in self.data.chunks_mut(n * n) {
            for i in 0..n {
                for j in (i + 1)..n {
                    let s = 0.5 * (block[i * n + j] + block[j * n + i]);
                    block[i * n + j] = s;
                    block[j * n + i] = s;
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        for p in 0..self.grid.len() {
            let b = self.at(p);
            if b.iter().any(|v| !v.is_finite()) {
                return Err(self.degenerate(p, "non-finite component".into()));
            }
            for i in 0..n {
                for j in (i + 1)..n {
                    if b[i * n + j] != b[j * n + i] {
                        return Err(self.degenerate(p, "asymmetric block".into()));
                    }
                }
            }
            let (lo, hi) = sym_eig_range(b, n);
            if lo <= 0.0 {
                return Err(self.degenerate(p, format!("smallest eigenvalue {lo:e}")));
            }
            if hi / lo >= MAX_CONDITION {
                return Err(self.degenerate(p, format!("condition number {:e}", hi / lo)));
            }
        }
        Ok(())
    }

    pub(crate) fn degenerate(&self, node: usize, reason: String) -> Error {
        Error::DegenerateMetric {
            node: self.grid.multi_index(node),
            reason,
        }
    }

    /// Largest deviation `max |g_ij - ref_ij|` over nodes and components.
    pub fn sup_distance(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Smallest and largest eigenvalue of a symmetric `n x n` block.
pub fn sym_eig_range(block: &[f64], n: usize) -> (f64, f64) {
    let ev = sym_eigenvalues(block, n);
    let lo = ev.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

pub fn sym_eigenvalues(block: &[f64], n: usize) -> Vec<f64> {
    match n {
        2 => {
            let m = 0.5 * (block[0] + block[3]);
            let d = 0.5 * (block[0] - block[3]);
            let r = (d * d + block[1] * block[2]).sqrt();
            vec![m - r, m + r]
        }
        3 => sym3_eigenvalues(block).to_vec(),
        _ => {
            let m = nalgebra::DMatrix::from_row_slice(n, n, block);
            m.symmetric_eigenvalues().iter().copied().collect()
        }
    }
}

/// Closed-form eigenvalues of a symmetric 3x3 block (trigonometric method).
fn sym3_eigenvalues(a: &[f64]) -> [f64; 3] {
    let p1 = a[1] * a[1] + a[2] * a[2] + a[5] * a[5];
    let q = (a[0] + a[4] + a[8]) / 3.0;
    if p1 == 0.0 {
        return [a[0], a[4], a[8]];
    }
    let p2 = (a[0] - q).powi(2) + (a[4] - q).powi(2) + (a[8] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let b: Vec<f64> = (0..9)
        .map(|k| (a[k] - if k % 4 == 0 { q } else { 0.0 }) / p)
        .collect();
    let det_b = b[0] * (b[4] * b[8] - b[5] * b[7]) - b[1] * (b[3] * b[8] - b[5] * b[6])
        + b[2] * (b[3] * b[7] - b[4] * b[6]);
    let r = (det_b / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let e1 = q + 2.0 * p * phi.cos();
    let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    [e3, 3.0 * q - e1 - e3, e1]
}

/// Generalized eigenvalue range of `a` relative to `b` (both SPD blocks).
pub fn generalized_eig_range(a: &[f64], b: &[f64], n: usize) -> Option<(f64, f64)> {
    let bm = nalgebra::DMatrix::from_row_slice(n, n, b);
    let am = nalgebra::DMatrix::from_row_slice(n, n, a);
    let chol = bm.cholesky()?;
    let linv = chol.l().try_inverse()?;
    let c = &linv * am * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let ev = c.symmetric_eigenvalues();
    Some((ev.min(), ev.max()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_validation() {
        let grid = Grid::torus(2, 8).unwrap();
        assert!(MetricField::flat(grid).validate().is_ok());
        let mut bad = MetricField::flat(grid);
        bad.data[0] = -1.0;
        match bad.validate() {
            Err(Error::DegenerateMetric { node, .. }) => assert_eq!(node, vec![0, 0]),
            other => panic!("unexpected {other:?}"),
        }
        let mut ill = MetricField::flat(grid);
        ill.data[4 * 5] = 1e-9;
        assert!(ill.validate().is_err());
        let mut asym = MetricField::flat(grid);
        asym.data[1] = 0.1;
        assert!(asym.validate().is_err());
    }

    #[test]
    fn closed_form_eigenvalues_match_dense() {
        let a = [2.0, 0.3, -0.1, 0.3, 1.5, 0.2, -0.1, 0.2, 0.7];
        let mut dense: Vec<f64> = nalgebra::DMatrix::from_row_slice(3, 3, &a)
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .collect();
        dense.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let mut closed = sym_eigenvalues(&a, 3);
        closed.sort_by(|x, y| x.partial_cmp(y).unwrap());
        for (x, y) in dense.iter().zip(&closed) {
            assert!((x - y).abs() < 1e-13);
        }
        let (lo, hi) = sym_eig_range(&[2.0, 1.0, 1.0, 2.0], 2);
        assert!((lo - 1.0).abs() < 1e-15 && (hi - 3.0).abs() < 1e-15);
    }

    #[test]
    fn generalized_range_of_scaled_metric() {
        let (lo, hi) = generalized_eig_range(&[4.0, 0.0, 0.0, 4.0], &[1.0, 0.0, 0.0, 1.0], 2).unwrap();
        assert!((lo - 4.0).abs() < 1e-14 && (hi - 4.0).abs() < 1e-14);
    }
}
