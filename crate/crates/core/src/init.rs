//! Initial data: flat, conformally perturbed and random smooth metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{MetricField, ScalarField};
use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    Flat,
    ConformalPerturbation,
    RandomFourier,
}

/// Description of an initial metric.
///
/// `modes` lists the excited integer wave vectors. For `conformal_perturbation`
/// the conformal factor is `φ = amplitude · Σ_m sin(k_m·x)`; for
/// `random_fourier` every component of `g − δ` is a seeded random combination
/// of those modes scaled so that `sup |g − δ| = amplitude`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialMetric {
    pub kind: InitialKind,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default)]
    pub modes: Vec<Vec<i64>>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl InitialMetric {
    pub fn flat() -> Self {
        Self {
            kind: InitialKind::Flat,
            amplitude: 0.0,
            modes: vec![],
            seed: None,
        }
    }

    pub fn conformal(amplitude: f64) -> Self {
        Self {
            kind: InitialKind::ConformalPerturbation,
            amplitude,
            modes: vec![],
            seed: None,
        }
    }

    pub fn random(amplitude: f64, seed: u64) -> Self {
        Self {
            kind: InitialKind::RandomFourier,
            amplitude,
            modes: vec![],
            seed: Some(seed),
        }
    }

    fn resolved_modes(&self, grid: &Grid) -> Result<Vec<Vec<i64>>> {
        let n = grid.dim();
        let modes = if !self.modes.is_empty() {
            self.modes.clone()
        } else if self.kind == InitialKind::RandomFourier {
            half_lattice(n, 2)
        } else {
            let mut m = vec![0; n];
            m[0] = 1;
            vec![m]
        };
        for m in &modes {
            if m.len() != n {
                return Err(Error::Config {
                    path: "initial_metric.modes".into(),
                    message: format!("mode {m:?} does not have {n} entries"),
                });
            }
            if m.iter().any(|&k| k.unsigned_abs() as usize >= grid.points_per_axis() / 2) {
                return Err(Error::Config {
                    path: "initial_metric.modes".into(),
                    message: format!("mode {m:?} is not resolved by the grid"),
                });
            }
        }
        Ok(modes)
    }

    pub fn build(&self, grid: Grid) -> Result<MetricField> {
        match self.kind {
            InitialKind::Flat => Ok(MetricField::flat(grid)),
            InitialKind::ConformalPerturbation => {
                let modes = self.resolved_modes(&grid)?;
                let phi = trig_sum(grid, &modes, &vec![(0.0, self.amplitude); modes.len()]);
                let g = MetricField::conformal(&phi);
                g.validate()?;
                Ok(g)
            }
            InitialKind::RandomFourier => {
                let seed = self.seed.ok_or_else(|| Error::Config {
                    path: "initial_metric.seed".into(),
                    message: "seed is mandatory for random_fourier".into(),
                })?;
                let modes = self.resolved_modes(&grid)?;
                let n = grid.dim();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut data = MetricField::flat(grid).data;
                for i in 0..n {
                    for j in i..n {
                        let coeffs: Vec<(f64, f64)> = modes
                            .iter()
                            .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                            .collect();
                        let h = trig_sum(grid, &modes, &coeffs);
                        let scale = self.amplitude / h.max_abs().max(f64::MIN_POSITIVE);
                        for p in 0..grid.len() {
                            let v = h.values[p] * scale;
                            data[p * n * n + i * n + j] += v;
                            if i != j {
                                data[p * n * n + j * n + i] += v;
                            }
                        }
                    }
                }
                MetricField::new(grid, data)
            }
        }
    }
}

/// Integer wave vectors `k ≠ 0` with `|k|∞ ≤ kmax`, one per `±k` pair.
pub fn half_lattice(n: usize, kmax: i64) -> Vec<Vec<i64>> {
    let mut out = Vec::new();
    let side = 2 * kmax + 1;
    for code in 0..side.pow(n as u32) {
        let mut k = vec![0i64; n];
        let mut c = code;
        for a in (0..n).rev() {
            k[a] = c % side - kmax;
            c /= side;
        }
        if let Some(&first) = k.iter().find(|&&v| v != 0) {
            if first > 0 {
                out.push(k);
            }
        }
    }
    out
}

/// `Σ_m (a_m cos(k_m·x) + b_m sin(k_m·x))`.
pub fn trig_sum(grid: Grid, modes: &[Vec<i64>], coeffs: &[(f64, f64)]) -> ScalarField {
    ScalarField::from_fn(grid, |x| {
        modes
            .iter()
            .zip(coeffs)
            .map(|(k, &(a, b))| {
                let arg: f64 = k
                    .iter()
                    .enumerate()
                    .map(|(ax, &ka)| grid.wave_number(ax, ka) * x[ax])
                    .sum();
                a * arg.cos() + b * arg.sin()
            })
            .sum()
    })
}

/// Seeded smooth random function built from modes with `|k|∞ ≤ kmax`,
/// coefficients decaying like `1/|k|²`.
pub fn smooth_random_field(grid: Grid, amplitude: f64, kmax: i64, seed: u64) -> ScalarField {
    let modes = half_lattice(grid.dim(), kmax);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs: Vec<(f64, f64)> = modes
        .iter()
        .map(|k| {
            let k2: i64 = k.iter().map(|v| v * v).sum();
            let w = amplitude / k2 as f64;
            (w * rng.gen_range(-1.0..1.0), w * rng.gen_range(-1.0..1.0))
        })
        .collect();
    let c0 = amplitude * rng.gen_range(-1.0..1.0);
    let mut f = trig_sum(grid, &modes, &coeffs);
    for v in &mut f.values {
        *v += c0;
    }
    f
}
