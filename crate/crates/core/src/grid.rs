use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform periodic grid on the torus `[0, L_0) x ... x [0, L_{n-1})`.
///
/// Nodes are stored row-major: the last axis varies fastest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    n: usize,
    lengths: [f64; 3],
}

impl Grid {
    pub fn new(dim: usize, n: usize, lengths: &[f64]) -> Result<Self> {
        if !(dim == 2 || dim == 3) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in {{2, 3}}")));
        }
        if n < 8 || n % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "points per axis must be even and >= 8, got {n}"
            )));
        }
        if lengths.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "expected {dim} domain lengths, got {}",
                lengths.len()
            )));
        }
        let mut l = [0.0; 3];
        for (a, &len) in lengths.iter().enumerate() {
            if !(len.is_finite() && len > 0.0) {
                return Err(Error::InvalidGrid(format!("domain length {len} must be positive")));
            }
            l[a] = len;
        }
        Ok(Self { dim, n, lengths: l })
    }

    /// Grid with side `2π` on every axis.
    pub fn torus(dim: usize, n: usize) -> Result<Self> {
        Self::new(dim, n, &vec![2.0 * std::f64::consts::PI; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.n
    }

    pub fn length(&self, axis: usize) -> f64 {
        self.lengths[axis]
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths[..self.dim]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.lengths[axis] / self.n as f64
    }

    pub fn min_spacing(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing(a)).fold(f64::INFINITY, f64::min)
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Volume of one grid cell in coordinate measure.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing(a)).product()
    }

    /// Distance in the flat index between neighbours along `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.dim - 1 - axis) as u32)
    }

    pub fn multi_index(&self, node: usize) -> Vec<usize> {
        (0..self.dim).map(|a| (node / self.stride(a)) % self.n).collect()
    }

    /// Flat index of the node shifted by `offset` along `axis`, with periodic wrap.
    #[inline]
    pub fn shift(&self, node: usize, axis: usize, offset: isize) -> usize {
        let s = self.stride(axis);
        let i = (node / s) % self.n;
        let j = (i as isize + offset).rem_euclid(self.n as isize) as usize;
        node + j * s - i * s
    }

    /// Coordinates of a node.
    pub fn coords(&self, node: usize) -> [f64; 3] {
        let mut x = [0.0; 3];
        for (a, xa) in x.iter_mut().enumerate().take(self.dim) {
            *xa = ((node / self.stride(a)) % self.n) as f64 * self.spacing(a);
        }
        x
    }

    /// Angular wave number `2πk/L` of integer mode `k` on `axis`.
    pub fn wave_number(&self, axis: usize, k: i64) -> f64 {
        2.0 * std::f64::consts::PI * k as f64 / self.lengths[axis]
    }

    /// Same grid with `n` points per axis.
    pub fn with_points(&self, n: usize) -> Result<Self> {
        Self::new(self.dim, n, self.lengths())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_sizes() {
        assert!(Grid::torus(2, 7).is_err());
        assert!(Grid::torus(2, 6).is_err());
        assert!(Grid::torus(4, 8).is_err());
        assert!(Grid::new(2, 8, &[1.0, -1.0]).is_err());
        assert!(Grid::torus(3, 8).is_ok());
    }

    #[test]
    fn shift_wraps() {
        let g = Grid::torus(2, 8).unwrap();
        let node = 7; // (0, 7)
        assert_eq!(g.multi_index(g.shift(node, 1, 1)), vec![0, 0]);
        assert_eq!(g.multi_index(g.shift(node, 0, -1)), vec![7, 7]);
        assert_eq!(g.shift(g.shift(node, 0, 3), 0, -3), node);
    }
}
