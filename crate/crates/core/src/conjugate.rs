//! Conjugate heat flows integrated backward along a recorded Ricci flow.
//!
//! A flow started at time `s` is advanced in `τ = s − t` with step `2·dt`,
//! taking its RK4 stage metrics from the exact fine states at `t`, `t − dt`
//! and `t − 2dt`. Segments are regenerated from checkpoints on demand, and
//! every active flow shares one backward sweep.

use serde::{Deserialize, Serialize};

use crate::deriv::Differentiator;
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::flow::{Stepper, Trajectory};
use crate::geometry::Geometry;
use crate::grid::Grid;

/// Unknown carried by the backward integration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConjugateForm {
    /// Linear `∂_τ u = Δu − R u − W·∇u` for `u = e^{−f}`.
    #[default]
    U,
    /// Nonlinear `∂_τ f = Δf − |∇f|² + R − W·∇f`.
    F,
}

/// `f` at a checkpoint of the underlying trajectory.
#[derive(Debug, Clone)]
pub struct ConjugateSample {
    pub checkpoint: usize,
    pub t: f64,
    pub f: ScalarField,
}

#[derive(Debug, Clone)]
pub struct ConjugateFlow {
    pub s: f64,
    pub start: usize,
    /// Ascending in `t`, one per checkpoint in `[0, s]`.
    pub samples: Vec<ConjugateSample>,
}

impl ConjugateFlow {
    pub fn at_checkpoint(&self, k: usize) -> Option<&ScalarField> {
        self.samples.get(k).filter(|s| s.checkpoint == k).map(|s| &s.f)
    }
}

/// Coefficients of the conjugate equations at one fine state.
struct Coefficients {
    ginv: Vec<f64>,
    sqrt_det: Vec<f64>,
    scalar: Vec<f64>,
    w: Option<Vec<f64>>,
}

impl Coefficients {
    fn new(geo: &Geometry, w: Option<Vec<f64>>) -> Self {
        let len = geo.grid.len();
        let nn = geo.dim() * geo.dim();
        let mut ginv = Vec::with_capacity(nn * len);
        for p in 0..len {
            ginv.extend_from_slice(geo.ginv_at(p));
        }
        Self {
            ginv,
            sqrt_det: (0..len).map(|p| geo.sqrt_det_at(p)).collect(),
            scalar: (0..len).map(|p| geo.scalar_at(p)).collect(),
            w,
        }
    }

    fn rhs(&self, d: &Differentiator, form: ConjugateForm, y: &[f64]) -> Vec<f64> {
        let grid = d.grid();
        let n = grid.dim();
        let len = grid.len();
        let dy = d.gradient(y);
        let mut flux = vec![0.0; n * len];
        for p in 0..len {
            let gi = &self.ginv[p * n * n..(p + 1) * n * n];
            for i in 0..n {
                let mut s = 0.0;
                for j in 0..n {
                    s += gi[i * n + j] * dy[p * n + j];
                }
                flux[p * n + i] = self.sqrt_det[p] * s;
            }
        }
        let mut lap = vec![0.0; len];
        for i in 0..n {
            let di = d.diff(&flux, n, i);
            for p in 0..len {
                lap[p] += di[p * n + i];
            }
        }
        (0..len)
            .map(|p| {
                let l = lap[p] / self.sqrt_det[p];
                let adv = self
                    .w
                    .as_ref()
                    .map_or(0.0, |w| (0..n).map(|k| w[p * n + k] * dy[p * n + k]).sum());
                match form {
                    ConjugateForm::U => l - self.scalar[p] * y[p] - adv,
                    ConjugateForm::F => {
                        let gi = &self.ginv[p * n * n..(p + 1) * n * n];
                        let g2 = crate::geometry::quad(gi, &dy[p * n..(p + 1) * n], &dy[p * n..(p + 1) * n], n);
                        l - g2 + self.scalar[p] - adv
                    }
                }
            })
            .collect()
    }
}

fn rk4(d: &Differentiator, form: ConjugateForm, c: [&Coefficients; 3], y: &[f64], h: f64) -> Vec<f64> {
    let axpy = |s: f64, k: &[f64]| -> Vec<f64> { y.iter().zip(k).map(|(a, b)| a + s * b).collect() };
    let k1 = c[0].rhs(d, form, y);
    let k2 = c[1].rhs(d, form, &axpy(0.5 * h, &k1));
    let k3 = c[1].rhs(d, form, &axpy(0.5 * h, &k2));
    let k4 = c[2].rhs(d, form, &axpy(h, &k3));
    (0..y.len())
        .map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Terminal datum `f(·, s)`.
#[derive(Debug, Clone)]
pub enum TerminalData {
    Zero,
    Field(ScalarField),
}

impl TerminalData {
    fn field(&self, grid: Grid) -> Result<ScalarField> {
        match self {
            TerminalData::Zero => Ok(ScalarField::constant(grid, 0.0)),
            TerminalData::Field(f) if f.grid == grid => Ok(f.clone()),
            TerminalData::Field(_) => Err(Error::GridMismatch),
        }
    }
}

/// Integrates one conjugate flow per entry of `s_list`, each from `f(s) = init`
/// down to `t = 0`, recording `f` at every checkpoint.
pub fn conjugate_sweep(
    traj: &Trajectory,
    s_list: &[f64],
    init: &TerminalData,
    form: ConjugateForm,
) -> Result<Vec<ConjugateFlow>> {
    let grid = traj.grid();
    if traj.cfg.checkpoint_stride % 2 != 0 {
        return Err(Error::InvalidArgument("checkpoint stride must be even".into()));
    }
    let starts: Vec<usize> = s_list
        .iter()
        .map(|&s| traj.checkpoint_index(s))
        .collect::<Result<_>>()?;
    let init_f = init.field(grid)?;
    let to_state = |f: &ScalarField| -> Vec<f64> {
        match form {
            ConjugateForm::U => f.values.iter().map(|v| (-v).exp()).collect(),
            ConjugateForm::F => f.values.clone(),
        }
    };
    let to_f = |y: &[f64]| -> ScalarField {
        ScalarField {
            grid,
            values: match form {
                ConjugateForm::U => y.iter().map(|v| -v.ln()).collect(),
                ConjugateForm::F => y.to_vec(),
            },
        }
    };
    let mut flows: Vec<ConjugateFlow> = s_list
        .iter()
        .zip(&starts)
        .map(|(&s, &k)| ConjugateFlow { s, start: k, samples: vec![] })
        .collect();
    let mut active: Vec<Option<Vec<f64>>> = vec![None; flows.len()];
    let top = starts.iter().copied().max().unwrap_or(0);
    let stepper = Stepper::new(grid, &traj.cfg)?;
    let d = &stepper.d;
    let h = 2.0 * traj.cfg.dt;
    for k in (0..=top).rev() {
        for (i, &ks) in starts.iter().enumerate() {
            if ks == k {
                active[i] = Some(to_state(&init_f));
            }
        }
        for (i, y) in active.iter().enumerate() {
            if let Some(y) = y {
                flows[i].samples.push(ConjugateSample {
                    checkpoint: k,
                    t: traj.checkpoints[k].t,
                    f: to_f(y),
                });
            }
        }
        if k == 0 {
            break;
        }
        if active.iter().all(|a| a.is_none()) {
            continue;
        }
        let fine = traj.replay_segment(k - 1)?;
        let coeffs: Vec<Coefficients> = fine
            .iter()
            .map(|s| {
                let geo = Geometry::compute(&s.g, d)?;
                let w = stepper.gauge_vector(&geo);
                Ok(Coefficients::new(&geo, w))
            })
            .collect::<Result<_>>()?;
        let mut m = coeffs.len() - 1;
        while m >= 2 {
            for y in active.iter_mut().flatten() {
                let next = rk4(d, form, [&coeffs[m], &coeffs[m - 1], &coeffs[m - 2]], y, h);
                if form == ConjugateForm::U {
                    if let Some((node, &value)) = next.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
                        return Err(Error::StepFailed {
                            t: fine[m - 2].t,
                            source: Box::new(Error::PositivityLoss { node, value }),
                        });
                    }
                } else if next.iter().any(|v| !v.is_finite()) {
                    return Err(Error::StepFailed {
                        t: fine[m - 2].t,
                        source: Box::new(Error::NonFinite("f".into())),
                    });
                }
                *y = next;
            }
            m -= 2;
        }
    }
    for f in &mut flows {
        f.samples.reverse();
    }
    Ok(flows)
}
