//! Perelman's F-energy and λ-functional, the dynamical functionals built from
//! conjugate heat flows, and the checks derived from their monotonicity.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::conjugate::{conjugate_sweep, ConjugateFlow, ConjugateForm, TerminalData};
use crate::deriv::Differentiator;
use crate::eigen::{lanczos_smallest, TrigBasis};
use crate::error::{Error, Result};
use crate::field::{MetricField, ScalarField};
use crate::flow::Trajectory;
use crate::geometry::Geometry;

pub const LAMBDA_TOL: f64 = 1e-8;
pub const LAMBDA_MAX_ITER: usize = 10_000;

/// `∫ (|∇f|² + R) e^{−f} dV`.
pub fn energy_f(geo: &Geometry, d: &Differentiator, f: &ScalarField) -> Result<f64> {
    let g2 = geo.grad_norm_sq(d, f)?;
    let integrand = ScalarField {
        grid: geo.grid,
        values: (0..geo.grid.len()).map(|p| g2.values[p] + geo.scalar_at(p)).collect(),
    };
    geo.weighted_integrate(&integrand, f)
}

/// `2 ∫ |Ric + ∇²f|² e^{−f} dV`.
pub fn variation_rate(geo: &Geometry, d: &Differentiator, f: &ScalarField) -> Result<f64> {
    let ricf = geo.weighted_ricci(d, f)?;
    Ok(2.0 * geo.weighted_integrate(&geo.norm_sq(&ricf)?, f)?)
}

/// `sup |Ric + ∇²f|_g`.
pub fn sup_weighted_ricci(geo: &Geometry, d: &Differentiator, f: &ScalarField) -> Result<f64> {
    Ok(geo.norm(&geo.weighted_ricci(d, f)?)?.max())
}

/// `∫ e^{−f} dV`.
pub fn weighted_volume(geo: &Geometry, f: &ScalarField) -> Result<f64> {
    geo.weighted_integrate(&ScalarField::constant(geo.grid, 1.0), f)
}

/// Principal eigenpair of `−4Δ + R` and the induced minimizer `f_g`.
#[derive(Debug, Clone)]
pub struct MinimizerResult {
    /// Positive, `∫ w² dV = 1`.
    pub w: ScalarField,
    /// `−2 log w`, so that `∫ e^{−f_g} dV = 1`.
    pub f_g: ScalarField,
    pub lambda: f64,
    pub solver_iterations: usize,
    pub residual: f64,
}

/// λ-functional as the smallest eigenvalue of `−4Δ_g + R_g + shift`.
pub fn lambda_functional_shifted(
    geo: &Geometry,
    basis: &TrigBasis,
    shift: f64,
) -> Result<MinimizerResult> {
    if basis.grid != geo.grid {
        return Err(Error::GridMismatch);
    }
    let n = geo.dim();
    let len = geo.grid.len();
    let cell = geo.grid.cell_volume();
    let stiffness: Vec<Vec<f64>> = (0..n * n)
        .map(|ab| (0..len).map(|p| 4.0 * geo.ginv_at(p)[ab] * geo.sqrt_det_at(p) * cell).collect())
        .collect();
    let potential: Vec<f64> = (0..len)
        .map(|p| (geo.scalar_at(p) + shift) * geo.sqrt_det_at(p) * cell)
        .collect();
    let mass: Vec<f64> = (0..len).map(|p| geo.sqrt_det_at(p) * cell).collect();
    let (a, b) = basis.assemble(&stiffness, Some(&potential), &mass);
    let rmin = (0..len).map(|p| geo.scalar_at(p)).fold(f64::INFINITY, f64::min) + shift;
    let res = lanczos_smallest(&a, &b, rmin - 1.0, LAMBDA_TOL, LAMBDA_MAX_ITER)?;
    let mut w = basis.evaluate(&res.vector);
    if w.iter().sum::<f64>() < 0.0 {
        w.iter_mut().for_each(|v| *v = -*v);
    }
    let norm = (w.iter().zip(&mass).map(|(v, m)| v * v * m).sum::<f64>()).sqrt();
    w.iter_mut().for_each(|v| *v /= norm);
    if let Some((node, &value)) = w.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "principal eigenfunction not positive at node {node} ({value:e})"
        )));
    }
    let w = ScalarField { grid: geo.grid, values: w };
    let f_g = w.map(|v| -2.0 * v.ln());
    Ok(MinimizerResult {
        w,
        f_g,
        lambda: res.value,
        solver_iterations: res.iterations,
        residual: res.residual,
    })
}

pub fn lambda_functional(g: &MetricField, d: &Differentiator) -> Result<MinimizerResult> {
    let geo = Geometry::compute(g, d)?;
    lambda_functional_shifted(&geo, &TrigBasis::default_for(g.grid), 0.0)
}

/// Evaluation of the Łojasiewicz–Simon inequality
/// `‖Ric_{f_g}‖_{L²(e^{−f_g}dV)} ≥ |λ(g)|^{1−θ}`.
#[derive(Debug, Clone, Serialize)]
pub struct LsProbe {
    pub theta: f64,
    pub lambda: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

pub fn ls_probe(g: &MetricField, d: &Differentiator, theta: f64) -> Result<LsProbe> {
    if !(0.4..=0.5).contains(&theta) {
        return Err(Error::InvalidArgument(format!("theta = {theta} outside [2/5, 1/2]")));
    }
    let geo = Geometry::compute(g, d)?;
    let min = lambda_functional_shifted(&geo, &TrigBasis::default_for(g.grid), 0.0)?;
    let ricf = geo.weighted_ricci(d, &min.f_g)?;
    let lhs = geo.weighted_integrate(&geo.norm_sq(&ricf)?, &min.f_g)?.max(0.0).sqrt();
    let rhs = min.lambda.abs().powf(1.0 - theta);
    Ok(LsProbe {
        theta,
        lambda: min.lambda,
        lhs,
        rhs,
        holds: lhs >= rhs,
    })
}

/// Functionals of one conjugate flow at one checkpoint.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DynamicalPoint {
    pub t: f64,
    pub f_energy: f64,
    pub weighted_volume: f64,
    pub rate: f64,
    pub sup_weighted_ricci: f64,
}

impl DynamicalPoint {
    /// `F / ∫e^{−f}dV`, the value after the additive shift normalizing the weighted volume.
    pub fn normalized(&self) -> f64 {
        self.f_energy / self.weighted_volume
    }
}

/// `t ↦ λ^s_dyn(t)` together with its rate and weighted volume.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DynamicalSeries {
    pub s: f64,
    pub points: Vec<DynamicalPoint>,
}

/// Evaluates every flow at every checkpoint it covers.
pub fn dynamical_series(
    traj: &Trajectory,
    flows: &[ConjugateFlow],
    d: &Differentiator,
) -> Result<Vec<DynamicalSeries>> {
    let mut out: Vec<DynamicalSeries> = flows
        .iter()
        .map(|f| DynamicalSeries { s: f.s, points: vec![] })
        .collect();
    let top = flows.iter().map(|f| f.start).max().unwrap_or(0);
    for k in 0..=top {
        let geo = Geometry::compute(&traj.checkpoints[k].g, d)?;
        for (series, flow) in out.iter_mut().zip(flows) {
            if let Some(f) = flow.at_checkpoint(k) {
                series.points.push(DynamicalPoint {
                    t: traj.checkpoints[k].t,
                    f_energy: energy_f(&geo, d, f)?,
                    weighted_volume: weighted_volume(&geo, f)?,
                    rate: variation_rate(&geo, d, f)?,
                    sup_weighted_ricci: sup_weighted_ricci(&geo, d, f)?,
                });
            }
        }
    }
    Ok(out)
}

impl DynamicalSeries {
    /// Smallest step `λ(t_{k+1}) − λ(t_k)`; `+∞` for fewer than two points.
    pub fn min_increment(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| w[1].f_energy - w[0].f_energy)
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest `|V(t) − V(s)| / V(s)` of the weighted volume `∫e^{−f}dV`.
    pub fn weighted_volume_drift(&self) -> f64 {
        let Some(last) = self.points.last() else { return 0.0 };
        let v = last.weighted_volume;
        self.points
            .iter()
            .map(|p| (p.weighted_volume - v).abs() / v.abs())
            .fold(0.0, f64::max)
    }

    /// Compares the central difference of `λ` with the recorded rate at every
    /// interior point.
    pub fn rate_identity(&self, rel: f64, abs: f64) -> RateIdentity {
        let mut out = RateIdentity { samples: 0, matched: 0, fraction: 0.0, max_error: 0.0 };
        for w in self.points.windows(3) {
            let derivative = (w[2].f_energy - w[0].f_energy) / (w[2].t - w[0].t);
            let err = (derivative - w[1].rate).abs();
            out.samples += 1;
            out.max_error = out.max_error.max(err);
            if err <= (rel * w[1].rate.abs()).max(abs) {
                out.matched += 1;
            }
        }
        if out.samples > 0 {
            out.fraction = out.matched as f64 / out.samples as f64;
        }
        out
    }
}

/// Agreement of the discrete derivative of `λ^s_dyn` with its variation rate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RateIdentity {
    pub samples: usize,
    pub matched: usize,
    pub fraction: f64,
    pub max_error: f64,
}

/// `λ^s_dyn(t) = F[g(t), f^s(t)]` with `f^s(s) = 0`.
pub fn lambda_dyn_s(traj: &Trajectory, s: f64, t: f64) -> Result<f64> {
    if t > s {
        return Err(Error::InvalidTime(format!("t = {t} exceeds s = {s}")));
    }
    let k = traj.checkpoint_index(t)?;
    let flows = conjugate_sweep(traj, &[s], &TerminalData::Zero, ConjugateForm::U)?;
    let d = Differentiator::new(traj.grid(), traj.cfg.derivatives);
    let geo = Geometry::compute(&traj.checkpoints[k].g, &d)?;
    energy_f(&geo, &d, flows[0].at_checkpoint(k).expect("t <= s"))
}

/// Limit of `f^{s_i}(t)` along a schedule of start times.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaInfinity {
    pub t: f64,
    pub value: f64,
    pub normalized: f64,
    pub converged: bool,
    /// `sup |f^{s_{i+1}}(t) − f^{s_i}(t)|`.
    pub gaps: Vec<f64>,
    pub schedule: Vec<f64>,
}

/// Checks that start times move monotonically toward the end of the run,
/// i.e. strictly decrease on the reversed clock `−t`.
pub fn validate_schedule(schedule: &[f64]) -> Result<()> {
    if schedule.len() < 2 {
        return Err(Error::InvalidArgument("schedule needs at least two start times".into()));
    }
    if schedule.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument(
            "schedule must be strictly increasing in flow time".into(),
        ));
    }
    Ok(())
}

/// λ^∞ from precomputed flows (one per schedule entry, in schedule order).
pub fn lambda_infinity_from_flows(
    traj: &Trajectory,
    flows: &[ConjugateFlow],
    k: usize,
    tol: f64,
    d: &Differentiator,
) -> Result<LambdaInfinity> {
    let schedule: Vec<f64> = flows.iter().map(|f| f.s).collect();
    validate_schedule(&schedule)?;
    let fields: Vec<&ScalarField> = flows
        .iter()
        .map(|f| {
            f.at_checkpoint(k)
                .ok_or_else(|| Error::InvalidTime(format!("checkpoint {k} is later than s = {}", f.s)))
        })
        .collect::<Result<_>>()?;
    let gaps: Vec<f64> = fields
        .windows(2)
        .map(|w| {
            w[0].values
                .iter()
                .zip(&w[1].values)
                .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
        })
        .collect();
    let last = fields.last().expect("non-empty");
    let geo = Geometry::compute(&traj.checkpoints[k].g, d)?;
    let value = energy_f(&geo, d, last)?;
    let normalized = value / weighted_volume(&geo, last)?;
    Ok(LambdaInfinity {
        t: traj.checkpoints[k].t,
        value,
        normalized,
        converged: gaps.last().is_some_and(|&g| g < tol),
        gaps,
        schedule,
    })
}

pub fn lambda_dyn_infinity(traj: &Trajectory, t: f64, schedule: &[f64], tol: f64) -> Result<LambdaInfinity> {
    validate_schedule(schedule)?;
    if t > schedule[0] {
        return Err(Error::InvalidTime(format!("t = {t} exceeds first start time {}", schedule[0])));
    }
    let k = traj.checkpoint_index(t)?;
    let flows = conjugate_sweep(traj, schedule, &TerminalData::Zero, ConjugateForm::U)?;
    let d = Differentiator::new(traj.grid(), traj.cfg.derivatives);
    lambda_infinity_from_flows(traj, &flows, k, tol, &d)
}

/// Integrated monotonicity identity over `[t1, t2]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RigidityReport {
    pub t1: f64,
    pub t2: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub sup_weighted_ricci: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// `λ_dyn(t2) − λ_dyn(t1)` against the trapezoid integral of the recorded rate.
pub fn check_rigidity(series: &DynamicalSeries, t1: f64, t2: f64, eps: f64) -> Result<RigidityReport> {
    if !(t1 < t2) {
        return Err(Error::InvalidTime(format!("empty interval [{t1}, {t2}]")));
    }
    let find = |t: f64| {
        series
            .points
            .iter()
            .position(|p| (p.t - t).abs() <= 1e-9 * t.abs().max(1.0))
            .ok_or_else(|| Error::InvalidTime(format!("t = {t} not in series")))
    };
    let (i1, i2) = (find(t1)?, find(t2)?);
    let pts = &series.points[i1..=i2];
    let lhs = pts.last().unwrap().f_energy - pts[0].f_energy;
    let rhs: f64 = pts
        .windows(2)
        .map(|w| 0.5 * (w[1].t - w[0].t) * (w[0].rate + w[1].rate))
        .sum();
    let sup = pts.iter().map(|p| p.sup_weighted_ricci).fold(0.0, f64::max);
    let tolerance = (eps * lhs.abs().max(rhs.abs())).max(1e-6);
    Ok(RigidityReport {
        t1,
        t2,
        lhs,
        rhs,
        sup_weighted_ricci: sup,
        tolerance,
        pass: (lhs - rhs).abs() <= tolerance,
    })
}

/// One row of the functional time series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FunctionalRecord {
    pub t: f64,
    /// `F[g(t), f^∞(t)]` for the last schedule iterate.
    pub f_value: f64,
    pub lambda: f64,
    pub lambda_dyn_s: BTreeMap<String, f64>,
    pub lambda_dyn_s_normalized: BTreeMap<String, f64>,
    pub lambda_dyn_inf: Option<f64>,
    pub lambda_dyn_inf_normalized: Option<f64>,
    pub variation_rate: f64,
    pub sup_ric: f64,
    pub weighted_volume: f64,
}

/// Functional series along a run: λ at every checkpoint, λ^s for each `s`
/// and λ^∞ from the last flow of `schedule`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FunctionalSeries {
    pub s_list: Vec<f64>,
    pub schedule: Vec<f64>,
    pub records: Vec<FunctionalRecord>,
    pub dynamical: Vec<DynamicalSeries>,
    pub infinity: Vec<LambdaInfinity>,
    pub lambda_residual_max: f64,
}

pub fn s_key(s: f64) -> String {
    format!("{s}")
}

pub fn functional_series(
    traj: &Trajectory,
    s_list: &[f64],
    schedule: &[f64],
    tol: f64,
) -> Result<FunctionalSeries> {
    functional_series_from(traj, s_list, schedule, tol, &TerminalData::Zero)
}

/// As [`functional_series`], with every conjugate flow started from `init`.
pub fn functional_series_from(
    traj: &Trajectory,
    s_list: &[f64],
    schedule: &[f64],
    tol: f64,
    init: &TerminalData,
) -> Result<FunctionalSeries> {
    validate_schedule(schedule)?;
    let d = Differentiator::new(traj.grid(), traj.cfg.derivatives);
    let mut all: Vec<f64> = s_list.to_vec();
    all.extend_from_slice(schedule);
    let flows = conjugate_sweep(traj, &all, init, ConjugateForm::U)?;
    let dynamical = dynamical_series(traj, &flows, &d)?;
    let (s_flows, inf_flows) = flows.split_at(s_list.len());
    let basis = TrigBasis::default_for(traj.grid());
    let first = traj.checkpoint_index(schedule[0])?;
    let mut records = vec![];
    let mut infinity = vec![];
    let mut residual_max: f64 = 0.0;
    for (k, state) in traj.checkpoints.iter().enumerate() {
        let geo = Geometry::compute(&state.g, &d)?;
        let min = lambda_functional_shifted(&geo, &basis, 0.0)?;
        residual_max = residual_max.max(min.residual);
        let mut dyn_s = BTreeMap::new();
        let mut dyn_s_norm = BTreeMap::new();
        for (i, flow) in s_flows.iter().enumerate() {
            if k <= flow.start {
                let p = &dynamical[i].points[k];
                dyn_s.insert(s_key(flow.s), p.f_energy);
                dyn_s_norm.insert(s_key(flow.s), p.normalized());
            }
        }
        let (inf, inf_norm, f_value, rate, wv) = if k <= first {
            let li = lambda_infinity_from_flows(traj, inf_flows, k, tol, &d)?;
            let p = dynamical.last().unwrap().points[k];
            let out = (Some(li.value), Some(li.normalized), p.f_energy, p.rate, p.weighted_volume);
            infinity.push(li);
            out
        } else {
            (None, None, f64::NAN, f64::NAN, f64::NAN)
        };
        records.push(FunctionalRecord {
            t: state.t,
            f_value,
            lambda: min.lambda,
            lambda_dyn_s: dyn_s,
            lambda_dyn_s_normalized: dyn_s_norm,
            lambda_dyn_inf: inf,
            lambda_dyn_inf_normalized: inf_norm,
            variation_rate: rate,
            sup_ric: geo.sup_ricci(),
            weighted_volume: wv,
        });
    }
    Ok(FunctionalSeries {
        s_list: s_list.to_vec(),
        schedule: schedule.to_vec(),
        records,
        dynamical,
        infinity,
        lambda_residual_max: residual_max,
    })
}
