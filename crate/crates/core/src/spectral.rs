//! Spectrum of the drift Laplacian `−Δ_f` along a flow, the local upper bound
//! `λ_k(t) ≤ λ_k(t0)/(1 − 2(t − t0)λ_k(t0))` and the Gaussian soliton example
//! that saturates it.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conjugate::ConjugateFlow;
use crate::deriv::Differentiator;
use crate::eigen::{dense_generalized, TrigBasis};
use crate::error::{Error, Result};
use crate::field::{MetricField, ScalarField};
use crate::flow::Trajectory;
use crate::geometry::Geometry;
use crate::grid::Grid;

/// Eigenvalues within this relative distance are one cluster.
pub const MULTIPLICITY_TOL: f64 = 1e-6;
pub const RESIDUAL_TOL: f64 = 1e-8;

/// Number of nonconstant trigonometric modes with `|k|∞ ≤ N/4`.
pub fn resolvable_modes(grid: &Grid) -> usize {
    (2 * (grid.points_per_axis() / 4) + 1).pow(grid.dim() as u32) - 1
}

fn basis_for(grid: Grid, k_max: usize) -> Result<TrigBasis> {
    let available = resolvable_modes(&grid);
    if k_max == 0 || k_max > available {
        return Err(Error::TooManyModes { requested: k_max, available });
    }
    let mut basis = TrigBasis::default_for(grid);
    let cap = (grid.points_per_axis() / 4) as i64;
    while basis.size() - 1 < 4 * k_max && basis.kmax < cap {
        basis = TrigBasis::new(grid, basis.kmax + 1)?;
    }
    Ok(basis)
}

/// Smallest nonzero eigenvalues of `−Δ_f` with their relative residuals.
#[derive(Debug, Clone)]
pub struct DriftSpectrum {
    pub values: Vec<f64>,
    pub residuals: Vec<f64>,
}

impl DriftSpectrum {
    pub fn residual_max(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

/// Galerkin spectrum of `−Δ_f` on the `e^{−f}dV`-orthogonal complement of the constants.
pub fn drift_spectrum_geo(geo: &Geometry, f: &ScalarField, k_max: usize) -> Result<DriftSpectrum> {
    if f.grid != geo.grid {
        return Err(Error::GridMismatch);
    }
    let basis = basis_for(geo.grid, k_max)?;
    let n = geo.dim();
    let len = geo.grid.len();
    let cell = geo.grid.cell_volume();
    let weight: Vec<f64> = (0..len)
        .map(|p| geo.sqrt_det_at(p) * (-f.values[p]).exp() * cell)
        .collect();
    let stiffness: Vec<Vec<f64>> = (0..n * n)
        .map(|ab| (0..len).map(|p| geo.ginv_at(p)[ab] * weight[p]).collect())
        .collect();
    let (a, b) = basis.assemble(&stiffness, None, &weight);
    // Columns e_j − (B_0j / B_00) e_0 span the weighted complement of the constant.
    let m = basis.size();
    let mut q = DMatrix::zeros(m, m - 1);
    for j in 1..m {
        q[(j, j - 1)] = 1.0;
        q[(0, j - 1)] = -b[(0, j)] / b[(0, 0)];
    }
    let ar = q.transpose() * &a * &q;
    let br = q.transpose() * &b * &q;
    let pairs = dense_generalized(&ar, &br)?;
    let out = DriftSpectrum {
        values: pairs.values[..k_max].to_vec(),
        residuals: pairs.residuals[..k_max].to_vec(),
    };
    if let Some(&r) = out.residuals.iter().find(|&&r| !(r <= RESIDUAL_TOL)) {
        return Err(Error::NoConvergence { iterations: 1, residual: r });
    }
    Ok(out)
}

/// The `k_max` smallest nonzero eigenvalues of `−Δ_f` on `(g, e^{−f}dV)`.
pub fn drift_spectrum(g: &MetricField, f: &ScalarField, k_max: usize, d: &Differentiator) -> Result<Vec<f64>> {
    Ok(drift_spectrum_geo(&Geometry::compute(g, d)?, f, k_max)?.values)
}

/// `λ_1..λ_{k_max}` sampled along a flow.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumSeries {
    pub times: Vec<f64>,
    /// `eigenvalues[i][k-1] = λ_k(times[i])`.
    pub eigenvalues: Vec<Vec<f64>>,
    pub k_max: usize,
    pub residuals: Vec<f64>,
}

impl SpectrumSeries {
    pub fn lambda(&self, i: usize, k: usize) -> f64 {
        self.eigenvalues[i][k - 1]
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.eigenvalues.iter().map(|row| row[k - 1]).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.eigenvalues.len() != self.times.len() || self.residuals.len() != self.times.len() {
            return Err(Error::InvalidArgument("series columns differ in length".into()));
        }
        for (i, row) in self.eigenvalues.iter().enumerate() {
            if row.len() != self.k_max || row.iter().any(|&l| !(l > 0.0)) || row.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::InvalidArgument(format!(
                    "eigenvalues at t = {} are not positive and ascending",
                    self.times[i]
                )));
            }
        }
        if let Some(&r) = self.residuals.iter().find(|&&r| !(r <= RESIDUAL_TOL)) {
            return Err(Error::InvalidArgument(format!("solver residual {r:e} exceeds tolerance")));
        }
        Ok(())
    }

    fn index_of(&self, t: f64) -> Result<usize> {
        self.times
            .iter()
            .position(|&s| (s - t).abs() <= 1e-9 * t.abs().max(1.0))
            .ok_or_else(|| Error::InvalidTime(format!("t = {t} is not a sample time")))
    }
}

/// Drift spectrum at every checkpoint covered by `flow`, with `f` taken from the flow.
pub fn spectrum_series(traj: &Trajectory, flow: &ConjugateFlow, k_max: usize) -> Result<SpectrumSeries> {
    let d = Differentiator::new(traj.grid(), traj.cfg.derivatives);
    let rows: Vec<(f64, DriftSpectrum)> = flow
        .samples
        .par_iter()
        .map(|s| {
            let geo = Geometry::compute(&traj.checkpoints[s.checkpoint].g, &d)?;
            Ok((s.t, drift_spectrum_geo(&geo, &s.f, k_max)?))
        })
        .collect::<Result<_>>()?;
    Ok(SpectrumSeries {
        times: rows.iter().map(|r| r.0).collect(),
        residuals: rows.iter().map(|r| r.1.residual_max()).collect(),
        eigenvalues: rows.into_iter().map(|r| r.1.values).collect(),
        k_max,
    })
}

/// `λ(t0) / (1 − 2(t − t0)λ(t0))`.
pub fn bound_rhs(lambda0: f64, t0: f64, t: f64) -> f64 {
    lambda0 / (1.0 - 2.0 * (t - t0) * lambda0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundSample {
    pub t: f64,
    pub lambda: f64,
    pub rhs: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    pub k: usize,
    pub t0: f64,
    pub window_end: f64,
    pub tolerance: f64,
    pub samples: Vec<BoundSample>,
    pub min_margin: f64,
    pub pass: bool,
}

/// Checks the eigenvalue upper bound at every sample in `[t0, t0 + 1/(2λ_k(t0)))`.
pub fn eigenvalue_bound_check(series: &SpectrumSeries, k: usize, t0: f64, allowance: f64) -> Result<BoundReport> {
    if k == 0 || k > series.k_max {
        return Err(Error::InvalidArgument(format!("k = {k} outside 1..={}", series.k_max)));
    }
    let i0 = series.index_of(t0)?;
    let l0 = series.lambda(i0, k);
    let window_end = t0 + 1.0 / (2.0 * l0);
    let tolerance = 1e-6 + allowance;
    let samples: Vec<BoundSample> = (i0..series.times.len())
        .filter(|&i| series.times[i] < window_end)
        .map(|i| {
            let t = series.times[i];
            let lambda = series.lambda(i, k);
            let rhs = bound_rhs(l0, t0, t);
            BoundSample { t, lambda, rhs, margin: rhs - lambda }
        })
        .collect();
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "no samples after t0 = {t0} in the window ending at {window_end}"
        )));
    }
    let min_margin = samples.iter().map(|s| s.margin).fold(f64::INFINITY, f64::min);
    Ok(BoundReport {
        k,
        t0,
        window_end,
        tolerance,
        pass: min_margin >= -tolerance,
        samples,
        min_margin,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DifferentialSample {
    pub t: f64,
    pub derivative: f64,
    pub twice_square: f64,
    pub slack: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DifferentialReport {
    pub k: usize,
    pub samples: Vec<DifferentialSample>,
    /// Sample times skipped because the multiplicity of `λ_k` changes there.
    pub crossings: Vec<f64>,
    pub inconclusive: bool,
    pub pass: bool,
}

/// Indices `j` with `λ_j` in the cluster of `λ_k`.
fn cluster(row: &[f64], k: usize) -> Vec<usize> {
    let l = row[k - 1];
    (0..row.len())
        .filter(|&j| (row[j] - l).abs() <= MULTIPLICITY_TOL * l.abs().max(1.0))
        .collect()
}

/// Central-difference `λ_k'` against `2λ_k²` at interior samples.
pub fn differential_inequality_check(series: &SpectrumSeries, k: usize, allowance: f64) -> Result<DifferentialReport> {
    if k == 0 || k > series.k_max {
        return Err(Error::InvalidArgument(format!("k = {k} outside 1..={}", series.k_max)));
    }
    if series.times.len() < 3 {
        return Err(Error::InvalidArgument("need at least three samples".into()));
    }
    let mut samples = vec![];
    let mut crossings = vec![];
    for i in 1..series.times.len() - 1 {
        let c = cluster(&series.eigenvalues[i], k);
        if cluster(&series.eigenvalues[i - 1], k) != c || cluster(&series.eigenvalues[i + 1], k) != c {
            crossings.push(series.times[i]);
            continue;
        }
        let l = series.lambda(i, k);
        let derivative =
            (series.lambda(i + 1, k) - series.lambda(i - 1, k)) / (series.times[i + 1] - series.times[i - 1]);
        samples.push(DifferentialSample {
            t: series.times[i],
            derivative,
            twice_square: 2.0 * l * l,
            slack: 2.0 * l * l - derivative,
        });
    }
    let inconclusive = samples.is_empty();
    let pass = !inconclusive
        && samples
            .iter()
            .all(|s| s.slack >= -(1e-4 * 0.5 * s.twice_square + allowance));
    Ok(DifferentialReport { k, samples, crossings, inconclusive, pass })
}

/// Shrinking Gaussian soliton `g = u(t)δ`, `f = |x|²/4 + (n/2) log(u/u0)` on `ℝⁿ`
/// with `u(t) = u0 − (t − t0)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GaussianExample {
    pub n: usize,
    pub u0: f64,
    pub t0: f64,
}

impl GaussianExample {
    pub fn new(n: usize, u0: f64, t0: f64) -> Result<Self> {
        if n == 0 || !(u0 > 0.0) || !t0.is_finite() {
            return Err(Error::InvalidArgument(format!("n = {n}, u0 = {u0}, t0 = {t0}")));
        }
        Ok(Self { n, u0, t0 })
    }

    pub fn horizon(&self) -> (f64, f64) {
        (self.t0, self.t0 + self.u0)
    }

    pub fn u(&self, t: f64) -> Result<f64> {
        let (a, b) = self.horizon();
        if !(t >= a && t < b) {
            return Err(Error::InvalidTime(format!("t = {t} outside [{a}, {b})")));
        }
        Ok(self.u0 - (t - self.t0))
    }

    pub fn potential(&self, x: &[f64], t: f64) -> Result<f64> {
        let u = self.u(t)?;
        Ok(x.iter().map(|v| v * v).sum::<f64>() / 4.0 + 0.5 * self.n as f64 * (u / self.u0).ln())
    }
}

/// `(λ_1(t), λ_1(t0)/(1 − 2(t − t0)λ_1(t0)))` for the Gaussian example.
pub fn gaussian_example_eval(ex: &GaussianExample, t: f64) -> Result<(f64, f64)> {
    let u = ex.u(t)?;
    Ok((1.0 / (2.0 * u), bound_rhs(1.0 / (2.0 * ex.u0), ex.t0, t)))
}

/// Closed-form `λ_1` series of the Gaussian example at `samples` equispaced times.
pub fn gaussian_series(ex: &GaussianExample, samples: usize) -> Result<SpectrumSeries> {
    let (a, b) = ex.horizon();
    let times: Vec<f64> = (0..samples).map(|i| a + (b - a) * i as f64 / samples as f64).collect();
    let eigenvalues = times
        .iter()
        .map(|&t| Ok(vec![gaussian_example_eval(ex, t)?.0]))
        .collect::<Result<_>>()?;
    Ok(SpectrumSeries {
        residuals: vec![0.0; times.len()],
        times,
        eigenvalues,
        k_max: 1,
    })
}
