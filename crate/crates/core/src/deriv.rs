use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::grid::Grid;

/// Spatial differentiation scheme on the periodic grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeScheme {
    /// Fourier differentiation; the Nyquist derivative is set to zero so the
    /// operator stays real and skew-symmetric.
    Spectral,
    /// Five-point central stencil with periodic wrap.
    #[default]
    CentralOrder4,
}

/// First-derivative operator bound to a grid. Cheap to clone.
#[derive(Clone)]
pub struct Differentiator {
    grid: Grid,
    scheme: DerivativeScheme,
    fft: Option<(Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>)>,
}

impl std::fmt::Debug for Differentiator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Differentiator")
            .field("grid", &self.grid)
            .field("scheme", &self.scheme)
            .finish()
    }
}

impl Differentiator {
    pub fn new(grid: Grid, scheme: DerivativeScheme) -> Self {
        let fft = match scheme {
            DerivativeScheme::Spectral => {
                let mut planner = FftPlanner::new();
                let n = grid.points_per_axis();
                Some((planner.plan_fft_forward(n), planner.plan_fft_inverse(n)))
            }
            DerivativeScheme::CentralOrder4 => None,
        };
        Self { grid, scheme, fft }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn scheme(&self) -> DerivativeScheme {
        self.scheme
    }

    /// Derivative along `axis` of node-major data with `ncomp` components per node.
    pub fn diff(&self, data: &[f64], ncomp: usize, axis: usize) -> Vec<f64> {
        debug_assert_eq!(data.len(), ncomp * self.grid.len());
        match &self.fft {
            None => self.diff_fd(data, ncomp, axis),
            Some((fwd, inv)) => self.diff_fft(data, ncomp, axis, fwd.as_ref(), inv.as_ref()),
        }
    }

    pub fn diff_scalar(&self, values: &[f64], axis: usize) -> Vec<f64> {
        self.diff(values, 1, axis)
    }

    /// Coordinate gradient of a scalar: node-major with `n` components.
    pub fn gradient(&self, values: &[f64]) -> Vec<f64> {
        let n = self.grid.dim();
        let mut out = vec![0.0; n * values.len()];
        for a in 0..n {
            let da = self.diff(values, 1, a);
            for (p, v) in da.into_iter().enumerate() {
                out[p * n + a] = v;
            }
        }
        out
    }

    fn diff_fd(&self, data: &[f64], ncomp: usize, axis: usize) -> Vec<f64> {
        let g = &self.grid;
        let n = g.points_per_axis();
        let s = g.stride(axis);
        let inv = 1.0 / (12.0 * g.spacing(axis));
        let mut out = vec![0.0; data.len()];
        for p in 0..g.len() {
            let i = (p / s) % n;
            let base = p - i * s;
            let at = |j: usize| (base + ((i + j) % n) * s) * ncomp;
            let (p1, p2, m1, m2) = (at(1), at(2), at(n - 1), at(n - 2));
            let o = p * ncomp;
            for c in 0..ncomp {
                out[o + c] =
                    (8.0 * (data[p1 + c] - data[m1 + c]) - (data[p2 + c] - data[m2 + c])) * inv;
            }
        }
        out
    }

    fn diff_fft(
        &self,
        data: &[f64],
        ncomp: usize,
        axis: usize,
        fwd: &dyn Fft<f64>,
        inv: &dyn Fft<f64>,
    ) -> Vec<f64> {
        let g = &self.grid;
        let n = g.points_per_axis();
        let stride = g.stride(axis);
        let mult: Vec<f64> = (0..n)
            .map(|j| {
                let k = if j < n / 2 {
                    j as i64
                } else if j == n / 2 {
                    0
                } else {
                    j as i64 - n as i64
                };
                g.wave_number(axis, k) / n as f64
            })
            .collect();
        let mut out = vec![0.0; data.len()];
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        let mut scratch = vec![Complex::new(0.0, 0.0); fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len())];
        for base in 0..g.len() {
            if (base / stride) % n != 0 {
                continue;
            }
            for c in 0..ncomp {
                for (i, b) in buf.iter_mut().enumerate() {
                    *b = Complex::new(data[(base + i * stride) * ncomp + c], 0.0);
                }
                fwd.process_with_scratch(&mut buf, &mut scratch);
                for (b, &m) in buf.iter_mut().zip(&mult) {
                    *b = Complex::new(-b.im * m, b.re * m);
                }
                inv.process_with_scratch(&mut buf, &mut scratch);
                for (i, b) in buf.iter().enumerate() {
                    out[(base + i * stride) * ncomp + c] = b.re;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(grid: &Grid, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        (0..grid.len())
            .map(|p| {
                let x = grid.coords(p);
                f(x[0], x[1])
            })
            .collect()
    }

    #[test]
    fn spectral_is_exact_on_trig() {
        let grid = Grid::torus(2, 16).unwrap();
        let d = Differentiator::new(grid, DerivativeScheme::Spectral);
        let u = sample(&grid, |x, y| (3.0 * x).sin() * (2.0 * y).cos());
        let dx = d.diff(&u, 1, 0);
        let dy = d.diff(&u, 1, 1);
        let ex = sample(&grid, |x, y| 3.0 * (3.0 * x).cos() * (2.0 * y).cos());
        let ey = sample(&grid, |x, y| -2.0 * (3.0 * x).sin() * (2.0 * y).sin());
        for p in 0..grid.len() {
            assert!((dx[p] - ex[p]).abs() < 1e-12);
            assert!((dy[p] - ey[p]).abs() < 1e-12);
        }
    }

    #[test]
    fn fd_converges_at_fourth_order() {
        let err = |n: usize| {
            let grid = Grid::torus(2, n).unwrap();
            let d = Differentiator::new(grid, DerivativeScheme::CentralOrder4);
            let u = sample(&grid, |x, y| (x.sin() + 0.3 * y.cos()).exp());
            let dx = d.diff(&u, 1, 0);
            let ex = sample(&grid, |x, y| x.cos() * (x.sin() + 0.3 * y.cos()).exp());
            dx.iter().zip(&ex).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        };
        let order = (err(32) / err(64)).log2();
        assert!(order > 3.8, "order {order}");
    }

    #[test]
    fn multi_component_layout() {
        let grid = Grid::torus(3, 8).unwrap();
        for scheme in [DerivativeScheme::Spectral, DerivativeScheme::CentralOrder4] {
            let d = Differentiator::new(grid, scheme);
            let mut data = vec![0.0; 2 * grid.len()];
            for p in 0..grid.len() {
                let x = grid.coords(p);
                data[2 * p] = x[2].sin();
                data[2 * p + 1] = x[1].cos();
            }
            let dz = d.diff(&data, 2, 2);
            for p in 0..grid.len() {
                let x = grid.coords(p);
                assert!((dz[2 * p] - x[2].cos()).abs() < 2e-2);
                assert!(dz[2 * p + 1].abs() < 1e-12);
            }
        }
    }
}
