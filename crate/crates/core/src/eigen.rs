//! Fourier–Galerkin discretization of weighted Laplace-type operators and the
//! eigensolvers built on it.
//!
//! For a real trigonometric basis `φ_p` with `|k|∞ ≤ K`, the quadratic forms
//! `a(u,v) = Σ_x (C^ab ∂_a u ∂_b v + V u v)` and `b(u,v) = Σ_x ω u v` are
//! evaluated exactly on the grid through the DFT of the coefficient fields.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::init::half_lattice;

/// Unnormalized forward DFT `Σ_x v(x) e^{−i κ(m)·x}` over every axis.
pub fn dft(grid: &Grid, values: &[f64]) -> Vec<Complex<f64>> {
    let mut data: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
    transform(grid, &mut data, false);
    data
}

/// Unnormalized inverse DFT `Σ_m c(m) e^{i κ(m)·x}`.
pub fn idft(grid: &Grid, coeffs: &mut [Complex<f64>]) {
    transform(grid, coeffs, true);
}

fn transform(grid: &Grid, data: &mut [Complex<f64>], inverse: bool) {
    let n = grid.points_per_axis();
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    let mut line = vec![Complex::new(0.0, 0.0); n];
    for axis in 0..grid.dim() {
        let s = grid.stride(axis);
        for base in 0..grid.len() {
            if (base / s) % n != 0 {
                continue;
            }
            for (i, l) in line.iter_mut().enumerate() {
                *l = data[base + i * s];
            }
            fft.process(&mut line);
            for (i, l) in line.iter().enumerate() {
                data[base + i * s] = *l;
            }
        }
    }
}

/// Real trigonometric basis: the constant, then `cos(k·x)`, `sin(k·x)` for each
/// half-lattice wave vector with `|k|∞ ≤ K`.
#[derive(Debug, Clone)]
pub struct TrigBasis {
    pub grid: Grid,
    pub kmax: i64,
    pub modes: Vec<Vec<i64>>,
}

impl TrigBasis {
    pub fn new(grid: Grid, kmax: i64) -> Result<Self> {
        if kmax < 1 || kmax as usize > grid.points_per_axis() / 4 {
            return Err(Error::InvalidArgument(format!(
                "basis cutoff {kmax} must lie in [1, N/4 = {}]",
                grid.points_per_axis() / 4
            )));
        }
        Ok(Self {
            grid,
            kmax,
            modes: half_lattice(grid.dim(), kmax),
        })
    }

    /// Default cutoff `min(N/4, 8)` in 2D and `min(N/4, 4)` in 3D.
    pub fn default_for(grid: Grid) -> Self {
        let cap = if grid.dim() == 2 { 8 } else { 4 };
        let k = (grid.points_per_axis() / 4).min(cap) as i64;
        Self::new(grid, k).expect("default cutoff is admissible")
    }

    pub fn size(&self) -> usize {
        1 + 2 * self.modes.len()
    }

    fn flat_index(&self, m: &[i64]) -> usize {
        let n = self.grid.points_per_axis() as i64;
        m.iter()
            .enumerate()
            .map(|(a, &k)| k.rem_euclid(n) as usize * self.grid.stride(a))
            .sum()
    }

    /// Complex exponentials composing each real basis function:
    /// `φ_p = Σ (coefficient, wave vector)`.
    fn expansion(&self, p: usize) -> Vec<(Complex<f64>, Vec<i64>)> {
        if p == 0 {
            return vec![(Complex::new(1.0, 0.0), vec![0; self.grid.dim()])];
        }
        let m = &self.modes[(p - 1) / 2];
        let neg: Vec<i64> = m.iter().map(|v| -v).collect();
        if (p - 1) % 2 == 0 {
            vec![(Complex::new(0.5, 0.0), m.clone()), (Complex::new(0.5, 0.0), neg)]
        } else {
            vec![(Complex::new(0.0, -0.5), m.clone()), (Complex::new(0.0, 0.5), neg)]
        }
    }

    fn kappa(&self, m: &[i64]) -> Vec<f64> {
        m.iter()
            .enumerate()
            .map(|(a, &k)| self.grid.wave_number(a, k))
            .collect()
    }

    /// Galerkin matrices of `a` and `b`. `stiffness[a*n+b]` holds `C^ab`
    /// sampled on the grid (already multiplied by the quadrature weight).
    pub fn assemble(
        &self,
        stiffness: &[Vec<f64>],
        potential: Option<&[f64]>,
        mass: &[f64],
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.grid.dim();
        let chat: Vec<Vec<Complex<f64>>> = stiffness.iter().map(|c| dft(&self.grid, c)).collect();
        let vhat = potential.map(|v| dft(&self.grid, v));
        let mhat = dft(&self.grid, mass);
        let m = self.size();
        let exps: Vec<Vec<(Complex<f64>, Vec<i64>)>> = (0..m).map(|p| self.expansion(p)).collect();
        let mut a = DMatrix::zeros(m, m);
        let mut b = DMatrix::zeros(m, m);
        for p in 0..m {
            for q in p..m {
                let mut av = Complex::new(0.0, 0.0);
                let mut bv = Complex::new(0.0, 0.0);
                for (cp, kp) in &exps[p] {
                    let kap = self.kappa(kp);
                    for (cq, kq) in &exps[q] {
                        let kaq = self.kappa(kq);
                        let diff: Vec<i64> = kp.iter().zip(kq).map(|(x, y)| x - y).collect();
                        let idx = self.flat_index(&diff);
                        let w = cp.conj() * cq;
                        let mut s = Complex::new(0.0, 0.0);
                        for i in 0..n {
                            for j in 0..n {
                                s += chat[i * n + j][idx] * (kap[i] * kaq[j]);
                            }
                        }
                        if let Some(v) = &vhat {
                            s += v[idx];
                        }
                        av += w * s;
                        bv += w * mhat[idx];
                    }
                }
                a[(p, q)] = av.re;
                a[(q, p)] = av.re;
                b[(p, q)] = bv.re;
                b[(q, p)] = bv.re;
            }
        }
        (a, b)
    }

    /// Grid values of `Σ_p c_p φ_p`.
    pub fn evaluate(&self, coeffs: &DVector<f64>) -> Vec<f64> {
        let mut spec = vec![Complex::new(0.0, 0.0); self.grid.len()];
        for p in 0..self.size() {
            for (c, k) in self.expansion(p) {
                spec[self.flat_index(&k)] += c * coeffs[p];
            }
        }
        idft(&self.grid, &mut spec);
        spec.iter().map(|z| z.re).collect()
    }
}

/// Eigenpairs of `A c = λ B c` in ascending order.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: Vec<DVector<f64>>,
    pub residuals: Vec<f64>,
}

/// `‖A c − λ B c‖ / (max(1, |λ|) ‖B c‖)`.
pub fn relative_residual(a: &DMatrix<f64>, b: &DMatrix<f64>, lambda: f64, c: &DVector<f64>) -> f64 {
    let bc = b * c;
    let r = a * c - &bc * lambda;
    r.norm() / (lambda.abs().max(1.0) * bc.norm())
}

/// Dense generalized symmetric eigensolver through the Cholesky factor of `B`.
pub fn dense_generalized(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<EigenPairs> {
    let chol = b
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("mass matrix is not positive definite".into()))?;
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("singular mass factor".into()))?;
    let c = &linv * a * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
    let lt_inv = linv.transpose();
    let mut out = EigenPairs {
        values: vec![],
        vectors: vec![],
        residuals: vec![],
    };
    for i in order {
        let lambda = eig.eigenvalues[i];
        let v = &lt_inv * eig.eigenvectors.column(i);
        out.residuals.push(relative_residual(a, b, lambda, &v));
        out.values.push(lambda);
        out.vectors.push(v);
    }
    Ok(out)
}

/// Result of a shift-invert Lanczos solve for the smallest eigenpair.
#[derive(Debug, Clone)]
pub struct LanczosResult {
    pub value: f64,
    pub vector: DVector<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Smallest eigenpair of `A c = λ B c` by Lanczos on `(A − σB)^{-1} B` in the
/// `B` inner product with full reorthogonalization. `σ` must lie strictly
/// below the spectrum so that `A − σB` is positive definite.
pub fn lanczos_smallest(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    sigma: f64,
    tol: f64,
    max_iter: usize,
) -> Result<LanczosResult> {
    let m = a.nrows();
    let shifted = a - b * sigma;
    let chol = shifted.cholesky().ok_or_else(|| {
        Error::InvalidArgument(format!("shift {sigma} is not below the spectrum"))
    })?;
    let bdot = |x: &DVector<f64>, y: &DVector<f64>| x.dot(&(b * y));
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut q0 = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
    q0[0] += 1.0;
    let nrm = bdot(&q0, &q0).sqrt();
    let mut basis: Vec<DVector<f64>> = vec![q0 / nrm];
    let mut alpha: Vec<f64> = vec![];
    let mut beta: Vec<f64> = vec![];
    let limit = max_iter.min(m);
    let mut last_residual = f64::INFINITY;
    for j in 0..limit {
        let qj = basis[j].clone();
        let mut z = chol.solve(&(b * &qj));
        let aj = bdot(&qj, &z);
        alpha.push(aj);
        for _ in 0..2 {
            for qi in &basis {
                let c = bdot(qi, &z);
                z -= qi * c;
            }
        }
        let bj = bdot(&z, &z).sqrt();
        // Ritz pair of the tridiagonal matrix
        let k = alpha.len();
        let mut t = DMatrix::zeros(k, k);
        for i in 0..k {
            t[(i, i)] = alpha[i];
            if i + 1 < k {
                t[(i, i + 1)] = beta[i];
                t[(i + 1, i)] = beta[i];
            }
        }
        let eig = SymmetricEigen::new(t);
        let (imax, theta) = eig
            .eigenvalues
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
        let s = eig.eigenvectors.column(imax);
        let estimate = (bj * s[k - 1]).abs();
        let exhausted = bj <= 1e-14 * theta.abs() || j + 1 == limit;
        if estimate <= tol * theta.abs() || exhausted {
            let mut y = DVector::zeros(m);
            for (i, qi) in basis.iter().enumerate() {
                y += qi * s[i];
            }
            let yy = bdot(&y, &y);
            let value = y.dot(&(a * &y)) / yy;
            let residual = relative_residual(a, b, value, &y);
            last_residual = residual;
            if residual <= tol {
                return Ok(LanczosResult {
                    value,
                    vector: y,
                    iterations: j + 1,
                    residual,
                });
            }
            if exhausted {
                break;
            }
        }
        beta.push(bj);
        basis.push(z / bj);
    }
    Err(Error::NoConvergence {
        iterations: limit,
        residual: last_residual,
    })
}
