//! Explicit time integration of Ricci flow, conjugate heat flow and the
//! normalized coupled system.

use serde::{Deserialize, Serialize};

use crate::deriv::{DerivativeScheme, Differentiator};
use crate::error::{Error, Result};
use crate::field::{MetricField, ScalarField, TensorField, Variance};
use crate::geometry::Geometry;
use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TimeScheme {
    #[default]
    ExplicitRk4,
    ExplicitEuler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Gauge {
    None,
    #[default]
    Deturck,
}

/// Which PDE system `run_flow` integrates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FlowSystem {
    #[default]
    Ricci,
    Coupled,
}

/// Parameterization of the conjugate heat equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// `∂_t f = −Δf + |∇f|² − R`, with `g` following Ricci flow forward in `t`.
    TForm,
    /// `∂_τ f = Δf − |∇f|² + R`, with `g` following Ricci flow backward (`τ = s − t`).
    TauForm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub scheme: TimeScheme,
    pub dt: f64,
    pub t_end: f64,
    pub cfl_safety: f64,
    pub gauge: Gauge,
    /// DeTurck reference metric; `None` means the flat coordinate metric.
    pub background: Option<MetricField>,
    pub derivatives: DerivativeScheme,
    pub system: FlowSystem,
    /// Steps between recorded states in `run_flow`.
    pub checkpoint_stride: usize,
}

impl FlowConfig {
    /// Largest admissible step `cfl_safety · min(h)² / (4n)`.
    pub fn cfl_limit(grid: &Grid, cfl_safety: f64) -> f64 {
        cfl_safety * grid.min_spacing().powi(2) / (4.0 * grid.dim() as f64)
    }

    /// RK4 config whose checkpoints fall exactly on multiples of `sample_interval`.
    /// The stride is even so checkpoint times are reachable with step `2·dt`.
    pub fn sampled(grid: &Grid, cfl_safety: f64, t_end: f64, sample_interval: f64) -> Self {
        let limit = Self::cfl_limit(grid, cfl_safety);
        let mut stride = (sample_interval / limit).ceil() as usize;
        stride += stride % 2;
        Self {
            scheme: TimeScheme::ExplicitRk4,
            dt: sample_interval / stride as f64,
            t_end,
            cfl_safety,
            gauge: Gauge::Deturck,
            background: None,
            derivatives: DerivativeScheme::CentralOrder4,
            system: FlowSystem::Ricci,
            checkpoint_stride: stride,
        }
    }

    pub fn check_cfl(&self, grid: &Grid) -> Result<()> {
        let limit = Self::cfl_limit(grid, self.cfl_safety);
        if !(self.dt > 0.0) || !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "dt = {} and cfl_safety = {} must be positive (safety <= 1)",
                self.dt, self.cfl_safety
            )));
        }
        if self.dt > limit * (1.0 + 1e-12) {
            return Err(Error::Cfl { dt: self.dt, limit });
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt + 1e-9).floor().max(0.0) as usize
    }

    pub fn sample_interval(&self) -> f64 {
        self.dt * self.checkpoint_stride as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub t: f64,
    pub g: MetricField,
    pub f: Option<ScalarField>,
    /// DeTurck field `W^k` at the start of the last step.
    pub gauge_vector: Option<TensorField>,
    pub step_index: usize,
}

impl FlowState {
    pub fn new(g: MetricField) -> Self {
        Self {
            t: 0.0,
            g,
            f: None,
            gauge_vector: None,
            step_index: 0,
        }
    }

    pub fn with_potential(mut self, f: ScalarField) -> Self {
        self.f = Some(f);
        self
    }
}

/// Right-hand side ingredients shared by every system.
pub(crate) struct Stepper {
    pub d: Differentiator,
    pub gauge: Gauge,
    background_gamma: Option<Vec<f64>>,
    pub scheme: TimeScheme,
}

impl Stepper {
    pub fn new(grid: Grid, cfg: &FlowConfig) -> Result<Self> {
        cfg.check_cfl(&grid)?;
        let d = Differentiator::new(grid, cfg.derivatives);
        let background_gamma = match &cfg.background {
            Some(bg) if cfg.gauge == Gauge::Deturck => {
                if bg.grid != grid {
                    return Err(Error::GridMismatch);
                }
                let geo = Geometry::compute(bg, &d)?;
                let n3 = grid.dim().pow(3);
                Some((0..grid.len()).flat_map(|p| geo.gamma_at(p)[..n3].to_vec()).collect())
            }
            _ => None,
        };
        Ok(Self {
            d,
            gauge: cfg.gauge,
            background_gamma,
            scheme: cfg.scheme,
        })
    }

    fn grid(&self) -> &Grid {
        self.d.grid()
    }

    /// `W^k = g^ij (Γ^k_ij − Γ̃^k_ij)` or zero without gauge.
    pub fn gauge_vector(&self, geo: &Geometry) -> Option<Vec<f64>> {
        if self.gauge == Gauge::None {
            return None;
        }
        let mut w = geo.deturck_vector();
        if let Some(bg) = &self.background_gamma {
            let n = geo.dim();
            let nn = n * n;
            for p in 0..geo.grid.len() {
                let gi = geo.ginv_at(p);
                for k in 0..n {
                    let mut s = 0.0;
                    for ij in 0..nn {
                        s += gi[ij] * bg[p * n * nn + k * nn + ij];
                    }
                    w[p * n + k] -= s;
                }
            }
        }
        Some(w)
    }

    /// `(L_W g)_ij = ∇_i W_j + ∇_j W_i`, added into `out`.
    fn add_lie_derivative(&self, geo: &Geometry, w: &[f64], out: &mut [f64]) {
        let n = geo.dim();
        let nn = n * n;
        let len = geo.grid.len();
        let mut wl = vec![0.0; n * len];
        for p in 0..len {
            let g = geo.metric_at(p);
            for j in 0..n {
                wl[p * n + j] = (0..n).map(|k| g[j * n + k] * w[p * n + k]).sum();
            }
        }
        let dw: Vec<Vec<f64>> = (0..n).map(|a| self.d.diff(&wl, n, a)).collect();
        for p in 0..len {
            let gam = geo.gamma_at(p);
            let mut cov = [0.0; 9];
            for i in 0..n {
                for j in 0..n {
                    let mut v = dw[i][p * n + j];
                    for q in 0..n {
                        v -= gam[q * nn + i * n + j] * wl[p * n + q];
                    }
                    cov[i * n + j] = v;
                }
            }
            for i in 0..n {
                for j in 0..n {
                    out[p * nn + i * n + j] += cov[i * n + j] + cov[j * n + i];
                }
            }
        }
    }

    /// `−2Ric + L_W g`.
    pub fn ricci_rhs(&self, geo: &Geometry, w: Option<&[f64]>) -> Vec<f64> {
        let n = geo.dim();
        let nn = n * n;
        let mut out = vec![0.0; nn * geo.grid.len()];
        for p in 0..geo.grid.len() {
            for (o, r) in out[p * nn..(p + 1) * nn].iter_mut().zip(geo.ricci_at(p)) {
                *o = -2.0 * r;
            }
        }
        if let Some(w) = w {
            self.add_lie_derivative(geo, w, &mut out);
        }
        out
    }

    /// `W^k D_k u`.
    pub fn advect(&self, w: Option<&[f64]>, u: &[f64]) -> Option<Vec<f64>> {
        let w = w?;
        let n = self.grid().dim();
        let du = self.d.gradient(u);
        Some(
            (0..u.len())
                .map(|p| (0..n).map(|k| w[p * n + k] * du[p * n + k]).sum())
                .collect(),
        )
    }

    fn metric(&self, y: &[f64]) -> Result<MetricField> {
        let n = self.grid().dim();
        MetricField::new_unchecked(*self.grid(), y[..n * n * self.grid().len()].to_vec())
    }

    /// One explicit step of `y' = rhs(y)`.
    pub fn integrate<F>(&self, y: &[f64], dt: f64, rhs: F) -> Result<Vec<f64>>
    where
        F: Fn(&[f64]) -> Result<Vec<f64>>,
    {
        let axpy = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> {
            a.iter().zip(b).map(|(x, k)| x + s * k).collect()
        };
        match self.scheme {
            TimeScheme::ExplicitEuler => Ok(axpy(y, dt, &rhs(y)?)),
            TimeScheme::ExplicitRk4 => {
                let k1 = rhs(y)?;
                let k2 = rhs(&axpy(y, 0.5 * dt, &k1))?;
                let k3 = rhs(&axpy(y, 0.5 * dt, &k2))?;
                let k4 = rhs(&axpy(y, dt, &k3))?;
                Ok((0..y.len())
                    .map(|i| y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                    .collect())
            }
        }
    }

    fn finish(&self, state: &FlowState, y: &[f64], dt: f64, f: Option<ScalarField>) -> Result<FlowState> {
        let mut g = self.metric(y)?;
        g.symmetrize();
        g.validate()?;
        if let Some(f) = &f {
            f.check_finite("f")?;
        }
        Ok(FlowState {
            t: state.t + dt,
            g,
            f,
            gauge_vector: None,
            step_index: state.step_index + 1,
        })
    }

    pub fn ricci_step(&self, state: &FlowState, dt: f64) -> Result<FlowState> {
        let y = self.integrate(&state.g.data, dt, |y| {
            let geo = Geometry::compute(&self.metric(y)?, &self.d)?;
            let w = self.gauge_vector(&geo);
            Ok(self.ricci_rhs(&geo, w.as_deref()))
        })?;
        self.finish(state, &y, dt, state.f.clone())
    }

    /// Joint step of `g` and `f` for either conjugate parameterization.
    /// `dt` advances `t` for the t-form and `τ` for the τ-form.
    pub fn conjugate_step(&self, state: &FlowState, dt: f64, dir: Direction) -> Result<FlowState> {
        let f = state.f.as_ref().ok_or(Error::MissingPotential)?;
        let grid = *self.grid();
        let mg = state.g.data.len();
        let mut y0 = state.g.data.clone();
        y0.extend_from_slice(&f.values);
        let sign = match dir {
            Direction::TForm => 1.0,
            Direction::TauForm => -1.0,
        };
        let y = self.integrate(&y0, dt, |y| {
            let geo = Geometry::compute(&self.metric(y)?, &self.d)?;
            let w = self.gauge_vector(&geo);
            let mut out: Vec<f64> = self.ricci_rhs(&geo, w.as_deref()).iter().map(|v| sign * v).collect();
            let fv = ScalarField { grid, values: y[mg..].to_vec() };
            let lap = geo.laplacian(&self.d, &fv)?;
            let grad = geo.grad_norm_sq(&self.d, &fv)?;
            let adv = self.advect(w.as_deref(), &fv.values);
            for p in 0..grid.len() {
                let a = adv.as_ref().map_or(0.0, |a| a[p]);
                // t-form: −Δf + |∇f|² − R + W·∇f
                out.push(sign * (-lap.values[p] + grad.values[p] - geo.scalar_at(p) + a));
            }
            Ok(out)
        })?;
        let sgn_dt = sign * dt;
        let fnew = ScalarField { grid, values: y[mg..].to_vec() };
        self.finish(state, &y, sgn_dt, Some(fnew))
    }

    /// Joint τ-step of `g` (backward Ricci flow) and `u = e^{−f}` solving
    /// `∂_τ u = Δu − R u − W·∇u`.
    pub fn linear_heat_step(&self, state: &FlowState, dtau: f64) -> Result<FlowState> {
        let f = state.f.as_ref().ok_or(Error::MissingPotential)?;
        let grid = *self.grid();
        let mg = state.g.data.len();
        let mut y0 = state.g.data.clone();
        y0.extend(f.values.iter().map(|v| (-v).exp()));
        let y = self.integrate(&y0, dtau, |y| {
            let geo = Geometry::compute(&self.metric(y)?, &self.d)?;
            let w = self.gauge_vector(&geo);
            let mut out: Vec<f64> = self.ricci_rhs(&geo, w.as_deref()).iter().map(|v| -v).collect();
            let uv = ScalarField { grid, values: y[mg..].to_vec() };
            out.extend(self.u_rhs_from_geometry(&geo, w.as_deref(), &uv.values)?);
            Ok(out)
        })?;
        let u = &y[mg..];
        if let Some((node, &value)) = u.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
            return Err(Error::PositivityLoss { node, value });
        }
        let fnew = ScalarField { grid, values: u.iter().map(|v| -v.ln()).collect() };
        self.finish(state, &y, -dtau, Some(fnew))
    }

    fn u_rhs_from_geometry(&self, geo: &Geometry, w: Option<&[f64]>, u: &[f64]) -> Result<Vec<f64>> {
        let uv = ScalarField { grid: geo.grid, values: u.to_vec() };
        let lap = geo.laplacian(&self.d, &uv)?;
        let adv = self.advect(w, u);
        Ok((0..u.len())
            .map(|p| lap.values[p] - geo.scalar_at(p) * u[p] - adv.as_ref().map_or(0.0, |a| a[p]))
            .collect())
    }

    /// Joint step of the normalized coupled system
    /// `∂_t g = −2(Ric + ∇²f) + L_W g`, `∂_t f = −R − Δf + W·∇f`,
    /// carrying passengers with `∂_t u = Δ_f u + W·∇u` in the same stages.
    /// `Δf` is the trace of the same discrete Hessian that drives `g`, so
    /// `e^{−f} dV` is conserved pointwise by the semi-discrete system.
    pub fn coupled_step(&self, state: &FlowState, dt: f64, passengers: &[ScalarField]) -> Result<(FlowState, Vec<ScalarField>)> {
        let f = state.f.as_ref().ok_or(Error::MissingPotential)?;
        let grid = *self.grid();
        let len = grid.len();
        let n = grid.dim();
        let nn = n * n;
        let mg = state.g.data.len();
        let mut y0 = state.g.data.clone();
        y0.extend_from_slice(&f.values);
        for u in passengers {
            if u.grid != grid {
                return Err(Error::GridMismatch);
            }
            y0.extend_from_slice(&u.values);
        }
        let y = self.integrate(&y0, dt, |y| {
            let geo = Geometry::compute(&self.metric(y)?, &self.d)?;
            let w = self.gauge_vector(&geo);
            let mut out = self.ricci_rhs(&geo, w.as_deref());
            let fv = ScalarField { grid, values: y[mg..mg + len].to_vec() };
            let hess = geo.hessian(&self.d, &fv)?;
            let mut df = vec![0.0; len];
            let adv = self.advect(w.as_deref(), &fv.values);
            for p in 0..len {
                let h = hess.at(p);
                let gi = geo.ginv_at(p);
                let mut tr = 0.0;
                for ij in 0..nn {
                    out[p * nn + ij] -= 2.0 * h[ij];
                    tr += gi[ij] * h[ij];
                }
                df[p] = -geo.scalar_at(p) - tr + adv.as_ref().map_or(0.0, |a| a[p]);
            }
            out.extend(df);
            for k in 0..passengers.len() {
                let off = mg + len * (k + 1);
                let uv = ScalarField { grid, values: y[off..off + len].to_vec() };
                let lu = geo.drift_laplacian(&self.d, &fv, &uv)?;
                let adv = self.advect(w.as_deref(), &uv.values);
                out.extend((0..len).map(|p| lu.values[p] + adv.as_ref().map_or(0.0, |a| a[p])));
            }
            Ok(out)
        })?;
        let fnew = ScalarField { grid, values: y[mg..mg + len].to_vec() };
        let next = self.finish(state, &y, dt, Some(fnew))?;
        let us = (0..passengers.len())
            .map(|k| {
                let off = mg + len * (k + 1);
                ScalarField { grid, values: y[off..off + len].to_vec() }
            })
            .collect();
        Ok((next, us))
    }

    /// Attaches the DeTurck field of the current metric.
    pub fn attach_gauge(&self, state: &mut FlowState) -> Result<()> {
        if self.gauge == Gauge::None {
            return Ok(());
        }
        let geo = Geometry::compute(&state.g, &self.d)?;
        state.gauge_vector = self.gauge_vector(&geo).map(|w| TensorField {
            grid: *self.grid(),
            signature: vec![Variance::Contravariant],
            data: w,
        });
        Ok(())
    }

    pub fn step(&self, state: &FlowState, dt: f64, system: FlowSystem) -> Result<FlowState> {
        match system {
            FlowSystem::Ricci => self.ricci_step(state, dt),
            FlowSystem::Coupled => Ok(self.coupled_step(state, dt, &[])?.0),
        }
    }
}

fn check_state(state: &FlowState) -> Result<()> {
    if let Some(f) = &state.f {
        if f.grid != state.g.grid {
            return Err(Error::GridMismatch);
        }
    }
    Ok(())
}

/// One step of `∂_t g = −2Ric` (plus `L_W g` under DeTurck gauge).
pub fn step_ricci_flow(state: &FlowState, cfg: &FlowConfig) -> Result<FlowState> {
    check_state(state)?;
    Stepper::new(state.g.grid, cfg)?.ricci_step(state, cfg.dt)
}

/// One joint step of `(g, f)` for the chosen conjugate parameterization.
pub fn step_conjugate_heat(state: &FlowState, cfg: &FlowConfig, direction: Direction) -> Result<FlowState> {
    check_state(state)?;
    Stepper::new(state.g.grid, cfg)?.conjugate_step(state, cfg.dt, direction)
}

/// One joint τ-step of `(g, u = e^{−f})`; `f` is recovered as `−log u`.
pub fn step_linear_heat_u(state: &FlowState, cfg: &FlowConfig) -> Result<FlowState> {
    check_state(state)?;
    Stepper::new(state.g.grid, cfg)?.linear_heat_step(state, cfg.dt)
}

/// One step of the normalized coupled system.
pub fn step_coupled(state: &FlowState, cfg: &FlowConfig) -> Result<FlowState> {
    check_state(state)?;
    Ok(Stepper::new(state.g.grid, cfg)?.coupled_step(state, cfg.dt, &[])?.0)
}

/// One coupled step carrying `passengers` with `∂_t u = Δ_f u` through the same stages.
pub fn step_coupled_with(
    state: &FlowState,
    cfg: &FlowConfig,
    passengers: &[ScalarField],
) -> Result<(FlowState, Vec<ScalarField>)> {
    check_state(state)?;
    Stepper::new(state.g.grid, cfg)?.coupled_step(state, cfg.dt, passengers)
}

/// Integrates `cfg.system` to `cfg.t_end`, returning the initial state and
/// every `checkpoint_stride`-th state. `recorder` sees each recorded state.
pub fn run_flow(
    initial: &FlowState,
    cfg: &FlowConfig,
    mut recorder: impl FnMut(&FlowState) -> Result<()>,
) -> Result<Vec<FlowState>> {
    check_state(initial)?;
    initial.g.validate()?;
    if cfg.checkpoint_stride == 0 {
        return Err(Error::InvalidArgument("checkpoint_stride must be positive".into()));
    }
    if cfg.system == FlowSystem::Coupled && initial.f.is_none() {
        return Err(Error::MissingPotential);
    }
    let stepper = Stepper::new(initial.g.grid, cfg)?;
    let steps = cfg.steps();
    let t0 = initial.t;
    let mut first = initial.clone();
    stepper.attach_gauge(&mut first)?;
    recorder(&first)?;
    let mut out = vec![first];
    let mut state = initial.clone();
    for k in 1..=steps {
        let mut next = stepper
            .step(&state, cfg.dt, cfg.system)
            .map_err(|e| Error::StepFailed { t: state.t, source: Box::new(e) })?;
        next.t = t0 + k as f64 * cfg.dt;
        state = next;
        if k % cfg.checkpoint_stride == 0 {
            let mut rec = state.clone();
            stepper.attach_gauge(&mut rec)?;
            recorder(&rec)?;
            out.push(rec);
        }
    }
    Ok(out)
}

/// Checkpointed Ricci flow that can regenerate every intermediate step.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub cfg: FlowConfig,
    pub checkpoints: Vec<FlowState>,
}

impl Trajectory {
    pub fn run(initial: &FlowState, cfg: &FlowConfig) -> Result<Self> {
        let checkpoints = run_flow(initial, cfg, |_| Ok(()))?;
        Ok(Self { cfg: cfg.clone(), checkpoints })
    }

    pub fn grid(&self) -> Grid {
        self.checkpoints[0].g.grid
    }

    pub fn times(&self) -> Vec<f64> {
        self.checkpoints.iter().map(|s| s.t).collect()
    }

    /// Checkpoint whose time is within `1e-9` of `t`.
    pub fn checkpoint_index(&self, t: f64) -> Result<usize> {
        self.checkpoints
            .iter()
            .position(|s| (s.t - t).abs() <= 1e-9 * t.abs().max(1.0))
            .ok_or_else(|| Error::InvalidTime(format!("t = {t} is not a checkpoint time")))
    }

    /// The `stride + 1` fine states from checkpoint `k` to `k + 1`, regenerated
    /// with the exact stepper used for the original run.
    pub fn replay_segment(&self, k: usize) -> Result<Vec<FlowState>> {
        if k + 1 >= self.checkpoints.len() {
            return Err(Error::MissingCheckpoints(vec![format!("segment {k}")]));
        }
        let stepper = Stepper::new(self.grid(), &self.cfg)?;
        let start = &self.checkpoints[k];
        let t0 = self.checkpoints[0].t;
        let mut out = vec![start.clone()];
        let mut state = start.clone();
        for _ in 0..self.cfg.checkpoint_stride {
            let mut next = stepper
                .step(&state, self.cfg.dt, self.cfg.system)
                .map_err(|e| Error::StepFailed { t: state.t, source: Box::new(e) })?;
            next.t = t0 + next.step_index as f64 * self.cfg.dt;
            state = next;
            out.push(state.clone());
        }
        stepper.attach_gauge(out.last_mut().unwrap())?;
        Ok(out)
    }
}
