//! Residual checks of evolution identities along gauge-free flows, with
//! convergence studies in the grid spacing and the time step.
//!
//! Exact identities are tested as residuals that must vanish at the order of
//! the discretization. Identities whose lower-order terms are only known up to
//! universal contractions are tested as bounds with a fitted constant that must
//! be stable under refinement.

use serde::{Deserialize, Serialize};

use crate::conjugate::{conjugate_sweep, ConjugateForm, TerminalData};
use crate::deriv::{DerivativeScheme, Differentiator};
use crate::error::{Error, Result};
use crate::field::{MetricField, ScalarField};
use crate::flow::{
    step_coupled_with, FlowConfig, FlowState, FlowSystem, Gauge, Stepper, TimeScheme, Trajectory,
};
use crate::geometry::Geometry;
use crate::grid::Grid;
use crate::init::{smooth_random_field, InitialMetric};

pub const MIN_ORDER_TIME: f64 = 1.8;
pub const MIN_ORDER_SPACE: f64 = 3.5;
/// Finest residual relative to the largest term of the identity.
pub const RESIDUAL_CEILING: f64 = 1e-3;
/// Residuals below this fraction of the scale are roundoff.
pub const EXACT_FLOOR: f64 = 1e-10;
pub const CONSTANT_STABILITY: f64 = 0.15;
pub const WEIGHTED_VOLUME_TOL: f64 = 1e-6;
/// Relative drifts below this are summation roundoff.
pub const DRIFT_FLOOR: f64 = 1e-13;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IdentityReport {
    pub identity_id: String,
    pub resolutions: Vec<usize>,
    pub dts: Vec<f64>,
    /// One entry per level of the space study followed by the time study.
    pub sup_residuals: Vec<f64>,
    pub l2_residuals: Vec<f64>,
    /// Size of the largest term, for relative comparisons.
    pub scale: f64,
    pub order_space: Option<f64>,
    pub order_time: Option<f64>,
    /// Residual of the time derivative taken with the metric frozen at the midpoint.
    pub frozen_sup_residuals: Vec<f64>,
    /// Fitted constants of bound checks, one per level.
    pub fitted_constants: Vec<f64>,
    pub pass: bool,
    pub detail: String,
}

/// Residual field of one identity at one resolution.
#[derive(Debug, Clone)]
pub struct Residual {
    pub residual: ScalarField,
    pub scale: f64,
    pub frozen: Option<ScalarField>,
    /// Right-hand side of a bound check, if any.
    pub bound: Option<ScalarField>,
    pub volume_weights: Vec<f64>,
}

impl Residual {
    pub fn sup(&self) -> f64 {
        self.residual.max_abs()
    }

    pub fn l2(&self) -> f64 {
        self.residual
            .values
            .iter()
            .zip(&self.volume_weights)
            .map(|(r, w)| r * r * w)
            .sum::<f64>()
            .sqrt()
    }

    /// Smallest `C` with `|residual| ≤ C·bound` over nodes where the bound is
    /// at least 1% of its maximum.
    pub fn fitted_constant(&self) -> f64 {
        let Some(b) = &self.bound else { return 0.0 };
        let bmax = b.max_abs();
        if bmax == 0.0 {
            return 0.0;
        }
        self.residual
            .values
            .iter()
            .zip(&b.values)
            .filter(|(_, &bv)| bv >= 1e-2 * bmax)
            .map(|(r, bv)| r.abs() / bv)
            .fold(0.0, f64::max)
    }
}

fn require_gauge_free(cfg: &FlowConfig) -> Result<()> {
    if cfg.gauge != Gauge::None {
        return Err(Error::GaugeNotAllowed);
    }
    Ok(())
}

fn check_triple(states: &[FlowState]) -> Result<f64> {
    if states.len() != 3 {
        return Err(Error::InvalidArgument("expected three consecutive states".into()));
    }
    let (d1, d2) = (states[1].t - states[0].t, states[2].t - states[1].t);
    if !(d1 > 0.0) || (d1 - d2).abs() > 1e-9 * d1 {
        return Err(Error::InvalidArgument("states are not equally spaced in time".into()));
    }
    Ok(d1)
}

fn central(prev: &ScalarField, next: &ScalarField, dt: f64) -> ScalarField {
    prev.zip_map(next, |a, b| (b - a) / (2.0 * dt)).expect("same grid")
}

fn weights(geo: &Geometry) -> Vec<f64> {
    let cell = geo.grid.cell_volume();
    (0..geo.grid.len()).map(|p| geo.sqrt_det_at(p) * cell).collect()
}

/// `B = 2 R^{ij} (R_i^a R_aj + R_j^a R_ia + 2 R_kijl R^kl − 2 R_i^k R_kj)`.
pub fn ric_norm_reaction(geo: &Geometry) -> ScalarField {
    let n = geo.dim();
    let values = (0..geo.grid.len())
        .map(|p| {
            let gi = geo.ginv_at(p);
            let rc = geo.ricci_at(p);
            let rm = geo.riemann_at(p);
            let mut up = vec![0.0; n * n];
            let mut m = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    for a in 0..n {
                        for b in 0..n {
                            up[i * n + j] += gi[i * n + a] * rc[a * n + b] * gi[b * n + j];
                            m[i * n + j] += rc[i * n + a] * gi[a * n + b] * rc[b * n + j];
                        }
                    }
                }
            }
            let mut total = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let mut q = 0.0;
                    for k in 0..n {
                        for l in 0..n {
                            q += rm[((k * n + i) * n + j) * n + l] * up[k * n + l];
                        }
                    }
                    let x = m[i * n + j] + m[j * n + i] + 2.0 * q - 2.0 * m[i * n + j];
                    total += 2.0 * up[i * n + j] * x;
                }
            }
            total
        })
        .collect();
    ScalarField { grid: geo.grid, values }
}

fn max_abs_of(fields: &[&ScalarField]) -> f64 {
    fields.iter().map(|f| f.max_abs()).fold(0.0, f64::max)
}

/// `∂_t|Ric|² − (Δ|Ric|² − 2|∇Ric|² + B)` at the middle of three states.
pub fn ric_norm_residual(states: &[FlowState], d: &Differentiator) -> Result<Residual> {
    let dt = check_triple(states)?;
    let geos: Vec<Geometry> = states.iter().map(|s| Geometry::compute(&s.g, d)).collect::<Result<_>>()?;
    let (prev, mid, next) = (&geos[0], &geos[1], &geos[2]);
    let ric = mid.ricci();
    let lhs = central(&prev.norm_sq(&prev.ricci())?, &next.norm_sq(&next.ricci())?, dt);
    let frozen_lhs = central(&mid.norm_sq(&prev.ricci())?, &mid.norm_sq(&next.ricci())?, dt);
    let lap = mid.laplacian(d, &mid.norm_sq(&ric)?)?;
    let grad = mid.norm_sq(&mid.covariant_derivative(d, &ric)?)?;
    let b = ric_norm_reaction(mid);
    let rhs = ScalarField {
        grid: mid.grid,
        values: (0..mid.grid.len())
            .map(|p| lap.values[p] - 2.0 * grad.values[p] + b.values[p])
            .collect(),
    };
    let rm_norm = mid.norm(&mid.riemann())?;
    let ric_sq = mid.norm_sq(&ric)?;
    Ok(Residual {
        residual: lhs.zip_map(&rhs, |a, b| a - b)?,
        scale: max_abs_of(&[&lhs, &lap, &grad, &b]),
        frozen: Some(frozen_lhs.zip_map(&rhs, |a, b| a - b)?),
        bound: Some(rm_norm.zip_map(&ric_sq, |a, b| a * b)?),
        volume_weights: weights(mid),
    })
}

/// Reaction term `B` against `|Rm|·|Ric|²`: the constant of the inequality form.
pub fn ric_norm_inequality_constant(geo: &Geometry) -> Result<f64> {
    let b = ric_norm_reaction(geo);
    let ric_sq = geo.norm_sq(&geo.ricci())?;
    let bound = geo.norm(&geo.riemann())?.zip_map(&ric_sq, |a, b| a * b)?;
    let bmax = bound.max_abs();
    Ok(b.values
        .iter()
        .zip(&bound.values)
        .filter(|(_, &v)| v >= 1e-2 * bmax && bmax > 0.0)
        .map(|(b, v)| b / v)
        .fold(0.0, f64::max))
}

/// `□|∇^m Ric|² + 2|∇^{m+1}Ric|²` against `Σ_i |∇^i Rm||∇^{m−i}Ric||∇^m Ric|`.
pub fn higher_order_residual(states: &[FlowState], d: &Differentiator, m: usize) -> Result<Residual> {
    if m > 2 {
        return Err(Error::InvalidArgument(format!("order m = {m} exceeds 2")));
    }
    let dt = check_triple(states)?;
    let geos: Vec<Geometry> = states.iter().map(|s| Geometry::compute(&s.g, d)).collect::<Result<_>>()?;
    let nabla_ric = |geo: &Geometry, k: usize| geo.covariant_derivative_iter(d, &geo.ricci(), k);
    let (prev, mid, next) = (&geos[0], &geos[1], &geos[2]);
    let lhs = central(&prev.norm_sq(&nabla_ric(prev, m)?)?, &next.norm_sq(&nabla_ric(next, m)?)?, dt);
    let frozen_lhs = central(&mid.norm_sq(&nabla_ric(prev, m)?)?, &mid.norm_sq(&nabla_ric(next, m)?)?, dt);
    let tm = nabla_ric(mid, m)?;
    let tm_sq = mid.norm_sq(&tm)?;
    let lap = mid.laplacian(d, &tm_sq)?;
    let higher = mid.norm_sq(&mid.covariant_derivative(d, &tm)?)?;
    let rm = mid.riemann();
    let tm_norm = tm_sq.map(|v| v.max(0.0).sqrt());
    let mut bound = ScalarField::constant(mid.grid, 0.0);
    for i in 0..=m {
        let a = mid.norm(&mid.covariant_derivative_iter(d, &rm, i)?)?;
        let b = mid.norm(&nabla_ric(mid, m - i)?)?;
        for p in 0..mid.grid.len() {
            bound.values[p] += a.values[p] * b.values[p] * tm_norm.values[p];
        }
    }
    let residual = ScalarField {
        grid: mid.grid,
        values: (0..mid.grid.len())
            .map(|p| lhs.values[p] - lap.values[p] + 2.0 * higher.values[p])
            .collect(),
    };
    let frozen = ScalarField {
        grid: mid.grid,
        values: (0..mid.grid.len())
            .map(|p| frozen_lhs.values[p] - lap.values[p] + 2.0 * higher.values[p])
            .collect(),
    };
    Ok(Residual {
        residual,
        scale: max_abs_of(&[&lhs, &lap, &higher]),
        frozen: Some(frozen),
        bound: Some(bound),
        volume_weights: weights(mid),
    })
}

/// `∂_t|∇Ric|² − Δ|∇Ric|² + 2|∇²Ric|²` against `|Rm||∇Ric|² + |∇Rm||Ric||∇Ric|`.
pub fn grad_ric_residual(states: &[FlowState], d: &Differentiator) -> Result<Residual> {
    higher_order_residual(states, d, 1)
}

/// `Δ|∇f|² − 2⟨∇Δf, ∇f⟩ − 2Ric(∇f, ∇f) − 2|∇²f|²`.
pub fn bochner_residual(g: &MetricField, f: &ScalarField, d: &Differentiator) -> Result<Residual> {
    let geo = Geometry::compute(g, d)?;
    let n = geo.dim();
    let grad_sq = geo.grad_norm_sq(d, f)?;
    let lap_grad = geo.laplacian(d, &grad_sq)?;
    let lap_f = geo.laplacian(d, f)?;
    let dlap = d.gradient(&lap_f.values);
    let df = d.gradient(&f.values);
    let hess = geo.norm_sq(&geo.hessian(d, f)?)?;
    let len = geo.grid.len();
    let mut cross = vec![0.0; len];
    let mut ricff = vec![0.0; len];
    for p in 0..len {
        let gi = geo.ginv_at(p);
        let rc = geo.ricci_at(p);
        let dfp = &df[p * n..(p + 1) * n];
        let mut up = vec![0.0; n];
        for a in 0..n {
            for b in 0..n {
                up[a] += gi[a * n + b] * dfp[b];
                cross[p] += gi[a * n + b] * dlap[p * n + a] * dfp[b];
            }
        }
        for a in 0..n {
            for b in 0..n {
                ricff[p] += rc[a * n + b] * up[a] * up[b];
            }
        }
    }
    let residual = ScalarField {
        grid: geo.grid,
        values: (0..len)
            .map(|p| lap_grad.values[p] - 2.0 * cross[p] - 2.0 * ricff[p] - 2.0 * hess.values[p])
            .collect(),
    };
    let cross = ScalarField { grid: geo.grid, values: cross };
    Ok(Residual {
        residual,
        scale: max_abs_of(&[&lap_grad, &cross, &hess]),
        frozen: None,
        bound: None,
        volume_weights: weights(&geo),
    })
}

/// `J_uv`, `I_u`, `E_u` of the weighted calculus, and the right-hand sides
/// `−2D_uv`, `−2E_u`, `−2∫|∇²u|² e^{−f}`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WeightedQuantities {
    pub j_uv: f64,
    pub i_u: f64,
    pub e_u: f64,
    pub d_uv: f64,
    pub hess_u: f64,
}

pub fn weighted_quantities(
    g: &MetricField,
    f: &ScalarField,
    u: &ScalarField,
    v: &ScalarField,
    d: &Differentiator,
) -> Result<WeightedQuantities> {
    let geo = Geometry::compute(g, d)?;
    let n = geo.dim();
    let (du, dv) = (d.gradient(&u.values), d.gradient(&v.values));
    let len = geo.grid.len();
    let mut uv = vec![0.0; len];
    let mut grad_uv = vec![0.0; len];
    let mut grad_uu = vec![0.0; len];
    for p in 0..len {
        uv[p] = u.values[p] * v.values[p];
        let gi = geo.ginv_at(p);
        for a in 0..n {
            for b in 0..n {
                grad_uv[p] += gi[a * n + b] * du[p * n + a] * dv[p * n + b];
                grad_uu[p] += gi[a * n + b] * du[p * n + a] * du[p * n + b];
            }
        }
    }
    let wi = |vals: Vec<f64>| geo.weighted_integrate(&ScalarField { grid: geo.grid, values: vals }, f);
    Ok(WeightedQuantities {
        j_uv: wi(uv)?,
        i_u: wi(u.values.iter().map(|x| x * x).collect())?,
        e_u: wi(grad_uu)?,
        d_uv: wi(grad_uv)?,
        hess_u: geo.weighted_integrate(&geo.norm_sq(&geo.hessian(d, u)?)?, f)?,
    })
}

/// Scalar residuals `[J' + 2D_uv, I' + 2E_u, E' + 2∫|∇²u|²e^{−f}]` at the middle
/// of three coupled states, with the scales of the right-hand sides.
pub fn weighted_evolution_residuals(
    states: &[(FlowState, ScalarField, ScalarField)],
    d: &Differentiator,
) -> Result<([f64; 3], [f64; 3])> {
    let flows: Vec<FlowState> = states.iter().map(|s| s.0.clone()).collect();
    let dt = check_triple(&flows)?;
    let q: Vec<WeightedQuantities> = states
        .iter()
        .map(|(s, u, v)| weighted_quantities(&s.g, s.f.as_ref().ok_or(Error::MissingPotential)?, u, v, d))
        .collect::<Result<_>>()?;
    let fd = |a: f64, b: f64| (b - a) / (2.0 * dt);
    let m = &q[1];
    Ok((
        [
            fd(q[0].j_uv, q[2].j_uv) + 2.0 * m.d_uv,
            fd(q[0].i_u, q[2].i_u) + 2.0 * m.e_u,
            fd(q[0].e_u, q[2].e_u) + 2.0 * m.hess_u,
        ],
        [2.0 * m.d_uv.abs(), 2.0 * m.e_u.abs(), 2.0 * m.hess_u.abs()],
    ))
}

/// Largest relative change of `∫ e^{−f} dV` from the first state.
pub fn weighted_volume_drift(states: &[(&MetricField, &ScalarField)], d: &Differentiator) -> Result<f64> {
    let mut v0 = None;
    let mut drift: f64 = 0.0;
    for (g, f) in states {
        let geo = Geometry::compute(g, d)?;
        let v = geo.weighted_integrate(&ScalarField::constant(geo.grid, 1.0), f)?;
        let base = *v0.get_or_insert(v);
        drift = drift.max(((v - base) / base).abs());
    }
    Ok(drift)
}

/// Conservation of `∫ e^{−f} dV` along recorded states that carry `f`.
pub fn check_weighted_volume_conservation(states: &[FlowState], d: &Differentiator) -> Result<IdentityReport> {
    let pairs: Vec<(&MetricField, &ScalarField)> = states
        .iter()
        .map(|s| Ok((&s.g, s.f.as_ref().ok_or(Error::MissingPotential)?)))
        .collect::<Result<_>>()?;
    let drift = weighted_volume_drift(&pairs, d)?;
    Ok(IdentityReport {
        identity_id: "weighted_volume".into(),
        resolutions: vec![d.grid().points_per_axis()],
        sup_residuals: vec![drift],
        l2_residuals: vec![drift],
        scale: 1.0,
        pass: drift <= WEIGHTED_VOLUME_TOL,
        ..Default::default()
    })
}

/// Single-level report of an exact pointwise identity.
fn single_report(id: &str, r: &Residual, n: usize) -> IdentityReport {
    IdentityReport {
        identity_id: id.into(),
        resolutions: vec![n],
        sup_residuals: vec![r.sup()],
        l2_residuals: vec![r.l2()],
        scale: r.scale,
        frozen_sup_residuals: r.frozen.iter().map(|f| f.max_abs()).collect(),
        pass: r.sup() <= RESIDUAL_CEILING * r.scale.max(f64::MIN_POSITIVE) || r.scale == 0.0,
        ..Default::default()
    }
}

pub fn check_ric_norm_evolution(states: &[FlowState], cfg: &FlowConfig) -> Result<IdentityReport> {
    require_gauge_free(cfg)?;
    let d = Differentiator::new(states[0].g.grid, cfg.derivatives);
    let r = ric_norm_residual(states, &d)?;
    let mut rep = single_report("ric_norm", &r, d.grid().points_per_axis());
    rep.fitted_constants = vec![r.fitted_constant()];
    Ok(rep)
}

pub fn check_grad_ric_evolution(states: &[FlowState], cfg: &FlowConfig) -> Result<IdentityReport> {
    check_higher_order_structure(states, cfg, 1)
}

pub fn check_higher_order_structure(states: &[FlowState], cfg: &FlowConfig, m: usize) -> Result<IdentityReport> {
    require_gauge_free(cfg)?;
    let d = Differentiator::new(states[0].g.grid, cfg.derivatives);
    let r = higher_order_residual(states, &d, m)?;
    let c = r.fitted_constant();
    Ok(IdentityReport {
        identity_id: format!("higher_order_m{m}"),
        resolutions: vec![d.grid().points_per_axis()],
        sup_residuals: vec![r.sup()],
        l2_residuals: vec![r.l2()],
        scale: r.scale,
        fitted_constants: vec![c],
        pass: c.is_finite(),
        ..Default::default()
    })
}

pub fn check_bochner(g: &MetricField, f: &ScalarField, d: &Differentiator) -> Result<IdentityReport> {
    let r = bochner_residual(g, f, d)?;
    Ok(single_report("bochner", &r, d.grid().points_per_axis()))
}

pub fn check_weighted_evolutions(
    states: &[(FlowState, ScalarField, ScalarField)],
    cfg: &FlowConfig,
) -> Result<IdentityReport> {
    require_gauge_free(cfg)?;
    if cfg.system != FlowSystem::Coupled {
        return Err(Error::InvalidArgument("weighted evolutions need the coupled system".into()));
    }
    let d = Differentiator::new(states[0].0.g.grid, cfg.derivatives);
    let (res, scales) = weighted_evolution_residuals(states, &d)?;
    let sup = res.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
    let scale = scales.iter().copied().fold(0.0, f64::max);
    Ok(IdentityReport {
        identity_id: "weighted_evolutions".into(),
        resolutions: vec![d.grid().points_per_axis()],
        dts: vec![cfg.dt],
        sup_residuals: vec![sup],
        l2_residuals: vec![sup],
        scale,
        pass: sup <= RESIDUAL_CEILING * scale || scale == 0.0,
        ..Default::default()
    })
}

/// Parameters of the refinement studies.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySetup {
    pub dim: usize,
    pub initial: InitialMetric,
    /// Grid sizes of the space study (fourth-order differences). Its residuals
    /// are Richardson-extrapolated from `space_dt` and `space_dt/2` at
    /// `t = 2·space_dt`, which removes the `O(dt²)` error of the time derivative.
    pub space_ns: Vec<usize>,
    pub space_dt: f64,
    /// Grid size of the time study (spectral differences).
    pub time_n: usize,
    pub time_dts: Vec<f64>,
    /// Time at which time-study derivatives are taken.
    pub t_center: f64,
    pub seed: u64,
}

impl Default for StudySetup {
    fn default() -> Self {
        Self {
            dim: 2,
            initial: InitialMetric::conformal(0.1),
            space_ns: vec![32, 64, 128],
            space_dt: 2e-4,
            time_n: 16,
            time_dts: vec![0.016, 0.008, 0.004],
            t_center: 0.048,
            seed: 17,
        }
    }
}

fn gauge_free(dt: f64, t_end: f64, derivatives: DerivativeScheme, system: FlowSystem) -> FlowConfig {
    FlowConfig {
        scheme: TimeScheme::ExplicitRk4,
        dt,
        t_end,
        cfl_safety: 1.0,
        gauge: Gauge::None,
        background: None,
        derivatives,
        system,
        checkpoint_stride: 1,
    }
}

impl StudySetup {
    fn grid(&self, n: usize) -> Result<Grid> {
        Grid::torus(self.dim, n)
    }

    fn metric(&self, n: usize) -> Result<MetricField> {
        self.initial.build(self.grid(n)?)
    }

    /// Ricci-flow states at `(k−1)dt`, `k dt`, `(k+1)dt`.
    fn ricci_triple(&self, n: usize, dt: f64, k: usize, scheme: DerivativeScheme) -> Result<(Vec<FlowState>, FlowConfig)> {
        let cfg = gauge_free(dt, (k + 1) as f64 * dt, scheme, FlowSystem::Ricci);
        let grid = self.grid(n)?;
        let stepper = Stepper::new(grid, &cfg)?;
        let mut s = FlowState::new(self.metric(n)?);
        let mut out = vec![];
        for i in 0..=k + 1 {
            if i + 1 >= k {
                out.push(s.clone());
            }
            if i <= k {
                s = stepper.ricci_step(&s, dt)?;
            }
        }
        out.truncate(3);
        Ok((out, cfg))
    }

    fn time_steps(&self, dt: f64) -> Result<usize> {
        let k = (self.t_center / dt).round() as usize;
        if k == 0 || ((k as f64) * dt - self.t_center).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("t_center must be a positive multiple of dt = {dt}")));
        }
        Ok(k)
    }

    /// Initial potential and passengers of the coupled study.
    fn coupled_fields(&self, grid: Grid) -> (ScalarField, ScalarField, ScalarField) {
        (
            smooth_random_field(grid, 0.2, 2, self.seed),
            smooth_random_field(grid, 1.0, 2, self.seed + 1),
            smooth_random_field(grid, 1.0, 2, self.seed + 2),
        )
    }

    fn coupled_triple(
        &self,
        n: usize,
        dt: f64,
        k: usize,
        scheme: DerivativeScheme,
    ) -> Result<(Vec<(FlowState, ScalarField, ScalarField)>, FlowConfig)> {
        let cfg = gauge_free(dt, (k + 1) as f64 * dt, scheme, FlowSystem::Coupled);
        let grid = self.grid(n)?;
        let (f, u, v) = self.coupled_fields(grid);
        let mut s = FlowState::new(self.metric(n)?).with_potential(f);
        let mut pass = vec![u, v];
        let mut out = vec![];
        for i in 0..=k + 1 {
            if i + 1 >= k {
                out.push((s.clone(), pass[0].clone(), pass[1].clone()));
            }
            if i <= k {
                let (next, p) = step_coupled_with(&s, &cfg, &pass)?;
                s = next;
                pass = p;
            }
        }
        out.truncate(3);
        Ok((out, cfg))
    }
}

/// `min_i log(r_i / r_{i+1}) / log(ratio_i)` over levels whose finer residual
/// is above the roundoff floor; `None` when no such pair exists.
pub fn measured_order(residuals: &[f64], ratios: &[f64], floor: f64) -> Option<f64> {
    residuals
        .windows(2)
        .zip(ratios)
        .filter(|(w, _)| w[1] > floor)
        .map(|(w, r)| (w[0] / w[1]).ln() / r.ln())
        .reduce(f64::min)
}

fn ratios(levels: &[f64]) -> Vec<f64> {
    levels.windows(2).map(|w| (w[1] / w[0]).abs()).collect()
}

/// Combines space and time residual series into one exact-identity report.
fn exact_report(
    id: &str,
    setup: &StudySetup,
    space: &[(f64, f64, f64, Option<f64>)],
    time: &[(f64, f64, f64, Option<f64>)],
) -> IdentityReport {
    let scale = space.iter().chain(time).map(|r| r.2).fold(0.0, f64::max);
    let floor = EXACT_FLOOR * scale;
    let sup_s: Vec<f64> = space.iter().map(|r| r.0).collect();
    let sup_t: Vec<f64> = time.iter().map(|r| r.0).collect();
    let ns: Vec<f64> = setup.space_ns.iter().map(|&n| n as f64).collect();
    let dts_inv: Vec<f64> = setup.time_dts.iter().map(|dt| 1.0 / dt).collect();
    let order_space = if space.is_empty() { None } else { measured_order(&sup_s, &ratios(&ns), floor) };
    let order_time = if time.is_empty() { None } else { measured_order(&sup_t, &ratios(&dts_inv), floor) };
    let finest_ok = |v: &[f64]| v.last().is_none_or(|&r| r <= RESIDUAL_CEILING * scale.max(f64::MIN_POSITIVE));
    let space_ok = space.is_empty() || order_space.is_none_or(|o| o >= MIN_ORDER_SPACE);
    let time_ok = time.is_empty() || order_time.is_none_or(|o| o >= MIN_ORDER_TIME);
    let mut sup = sup_s.clone();
    sup.extend(&sup_t);
    IdentityReport {
        identity_id: id.into(),
        resolutions: if space.is_empty() { vec![setup.time_n] } else { setup.space_ns.clone() },
        dts: if time.is_empty() { vec![setup.space_dt] } else { setup.time_dts.clone() },
        sup_residuals: sup,
        l2_residuals: space.iter().chain(time).map(|r| r.1).collect(),
        scale,
        order_space,
        order_time,
        frozen_sup_residuals: space.iter().chain(time).filter_map(|r| r.3).collect(),
        fitted_constants: vec![],
        pass: space_ok && time_ok && finest_ok(&sup_s) && finest_ok(&sup_t),
        detail: String::new(),
    }
}

/// `(4 r(dt/2) − r(dt))/3`, keeping the first residual's metadata.
fn richardson(coarse: Residual, fine: Residual) -> Result<Residual> {
    let combine = |a: &ScalarField, b: &ScalarField| a.zip_map(b, |x, y| (4.0 * y - x) / 3.0);
    Ok(Residual {
        residual: combine(&coarse.residual, &fine.residual)?,
        frozen: match (&coarse.frozen, &fine.frozen) {
            (Some(a), Some(b)) => Some(combine(a, b)?),
            _ => None,
        },
        ..fine
    })
}

impl StudySetup {
    fn space_residual(
        &self,
        n: usize,
        eval: impl Fn(&[FlowState], &Differentiator) -> Result<Residual>,
    ) -> Result<(Residual, Vec<FlowState>, Differentiator)> {
        let (coarse, cfg) = self.ricci_triple(n, self.space_dt, 2, DerivativeScheme::CentralOrder4)?;
        let (fine, _) = self.ricci_triple(n, 0.5 * self.space_dt, 4, DerivativeScheme::CentralOrder4)?;
        let d = Differentiator::new(coarse[0].g.grid, cfg.derivatives);
        let r = richardson(eval(&coarse, &d)?, eval(&fine, &d)?)?;
        Ok((r, fine, d))
    }
}

fn summarize(r: &Residual) -> (f64, f64, f64, Option<f64>) {
    (r.sup(), r.l2(), r.scale, r.frozen.as_ref().map(|f| f.max_abs()))
}

/// `∂_t|Ric|² = Δ|Ric|² − 2|∇Ric|² + B` in `h` and `dt`, with the fitted
/// constant of the inequality form.
pub fn study_ric_norm(setup: &StudySetup) -> Result<IdentityReport> {
    let mut space = vec![];
    let mut constants = vec![];
    for &n in &setup.space_ns {
        let (r, states, d) = setup.space_residual(n, ric_norm_residual)?;
        space.push(summarize(&r));
        constants.push(ric_norm_inequality_constant(&Geometry::compute(&states[1].g, &d)?)?);
    }
    let mut time = vec![];
    for &dt in &setup.time_dts {
        let (states, cfg) = setup.ricci_triple(setup.time_n, dt, setup.time_steps(dt)?, DerivativeScheme::Spectral)?;
        let d = Differentiator::new(states[0].g.grid, cfg.derivatives);
        time.push(summarize(&ric_norm_residual(&states, &d)?));
    }
    let mut rep = exact_report("ric_norm", setup, &space, &time);
    rep.fitted_constants = constants;
    Ok(rep)
}

pub fn study_bochner(setup: &StudySetup) -> Result<IdentityReport> {
    let mut space = vec![];
    for &n in &setup.space_ns {
        let grid = setup.grid(n)?;
        let d = Differentiator::new(grid, DerivativeScheme::CentralOrder4);
        let f = smooth_random_field(grid, 1.0, 2, setup.seed);
        space.push(summarize(&bochner_residual(&setup.metric(n)?, &f, &d)?));
    }
    Ok(exact_report("bochner", setup, &space, &[]))
}

/// The three weighted-calculus identities along the coupled system, one report each.
pub fn study_weighted_evolutions(setup: &StudySetup) -> Result<Vec<IdentityReport>> {
    let names = ["weighted_inner_product", "weighted_norm", "weighted_energy"];
    let mut space: Vec<Vec<(f64, f64, f64, Option<f64>)>> = vec![vec![]; 3];
    for &n in &setup.space_ns {
        let (coarse, cfg) = setup.coupled_triple(n, setup.space_dt, 2, DerivativeScheme::CentralOrder4)?;
        let (fine, _) = setup.coupled_triple(n, 0.5 * setup.space_dt, 4, DerivativeScheme::CentralOrder4)?;
        let d = Differentiator::new(coarse[0].0.g.grid, cfg.derivatives);
        let (rc, _) = weighted_evolution_residuals(&coarse, &d)?;
        let (rf, scales) = weighted_evolution_residuals(&fine, &d)?;
        for i in 0..3 {
            let r = ((4.0 * rf[i] - rc[i]) / 3.0).abs();
            space[i].push((r, r, scales[i], None));
        }
    }
    let mut time: Vec<Vec<(f64, f64, f64, Option<f64>)>> = vec![vec![]; 3];
    for &dt in &setup.time_dts {
        let k = setup.time_steps(dt)?;
        let (states, cfg) = setup.coupled_triple(setup.time_n, dt, k, DerivativeScheme::Spectral)?;
        let d = Differentiator::new(states[0].0.g.grid, cfg.derivatives);
        let (res, scales) = weighted_evolution_residuals(&states, &d)?;
        for i in 0..3 {
            time[i].push((res[i].abs(), res[i].abs(), scales[i], None));
        }
    }
    Ok((0..3).map(|i| exact_report(names[i], setup, &space[i], &time[i])).collect())
}

/// Weighted-volume drift of the Ricci flow with a conjugate flow and of the
/// coupled system under `dt` refinement.
pub fn study_weighted_volume(setup: &StudySetup) -> Result<Vec<IdentityReport>> {
    let grid = setup.grid(setup.time_n)?;
    let t_end = 2.0 * setup.t_center;
    let mut pair = vec![];
    let mut coupled = vec![];
    for &dt in &setup.time_dts {
        let mut cfg = gauge_free(dt, t_end, DerivativeScheme::Spectral, FlowSystem::Ricci);
        cfg.checkpoint_stride = 2;
        let traj = Trajectory::run(&FlowState::new(setup.metric(setup.time_n)?), &cfg)?;
        let s = traj.times().last().copied().unwrap_or(0.0);
        let flows = conjugate_sweep(&traj, &[s], &TerminalData::Zero, ConjugateForm::U)?;
        let d = Differentiator::new(grid, cfg.derivatives);
        let states: Vec<(&MetricField, &ScalarField)> = flows[0]
            .samples
            .iter()
            .rev()
            .map(|x| (&traj.checkpoints[x.checkpoint].g, &x.f))
            .collect();
        let drift = weighted_volume_drift(&states, &d)?;
        pair.push((drift, drift, 1.0, None));

        let (f, _, _) = setup.coupled_fields(grid);
        let ccfg = gauge_free(dt, t_end, DerivativeScheme::Spectral, FlowSystem::Coupled);
        let states = crate::flow::run_flow(&FlowState::new(setup.metric(setup.time_n)?).with_potential(f), &ccfg, |_| Ok(()))?;
        let drift = check_weighted_volume_conservation(&states, &d)?.sup_residuals[0];
        coupled.push((drift, drift, 1.0, None));
    }
    let mut out = vec![];
    for (id, series) in [("weighted_volume_pair", pair), ("weighted_volume_coupled", coupled)] {
        let mut rep = exact_report(id, setup, &[], &series);
        let sups: Vec<f64> = series.iter().map(|r| r.0).collect();
        let dts_inv: Vec<f64> = setup.time_dts.iter().map(|dt| 1.0 / dt).collect();
        rep.order_time = measured_order(&sups, &ratios(&dts_inv), DRIFT_FLOOR);
        let finest = series.last().map_or(0.0, |r| r.0);
        rep.pass = rep.order_time.is_none_or(|o| o >= MIN_ORDER_TIME) && sups.iter().all(|&r| r <= WEIGHTED_VOLUME_TOL);
        rep.detail = format!("finest relative drift {finest:e}");
        out.push(rep);
    }
    Ok(out)
}

/// Fitted-constant bound check of `□|∇^m Ric|²` over the space levels.
pub fn study_higher_order(setup: &StudySetup, m: usize) -> Result<IdentityReport> {
    let mut constants = vec![];
    let mut sup = vec![];
    let mut l2 = vec![];
    let mut scale: f64 = 0.0;
    for &n in &setup.space_ns {
        let (r, _, _) = setup.space_residual(n, |s, d| higher_order_residual(s, d, m))?;
        constants.push(r.fitted_constant());
        sup.push(r.sup());
        l2.push(r.l2());
        scale = scale.max(r.scale);
    }
    let k = constants.len();
    let stable = k < 2 || {
        let (a, b) = (constants[k - 2], constants[k - 1]);
        (a == 0.0 && b == 0.0) || (a - b).abs() <= CONSTANT_STABILITY * b.abs()
    };
    let id = if m == 1 { "grad_ric".to_string() } else { format!("higher_order_m{m}") };
    Ok(IdentityReport {
        identity_id: id,
        resolutions: setup.space_ns.clone(),
        dts: vec![setup.space_dt],
        sup_residuals: sup,
        l2_residuals: l2,
        scale,
        fitted_constants: constants,
        pass: stable,
        detail: "bound constant compared between the two finest grids".into(),
        ..Default::default()
    })
}

/// Every study, in a fixed order.
pub fn verify_all(setup: &StudySetup) -> Result<Vec<IdentityReport>> {
    let mut out = vec![study_ric_norm(setup)?, study_bochner(setup)?];
    out.extend(study_weighted_evolutions(setup)?);
    out.extend(study_weighted_volume(setup)?);
    for m in 0..=2 {
        out.push(study_higher_order(setup, m)?);
    }
    Ok(out)
}
