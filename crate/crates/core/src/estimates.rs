//! Decay estimates along a flow converging to a flat metric: the time cutoff
//! `ψ` and its integral, decay-rate fitting, the volume bound, s-uniform bounds
//! on conjugate flows and uniform equivalence with a reference metric.

use serde::{Deserialize, Serialize};

use crate::conjugate::ConjugateFlow;
use crate::deriv::Differentiator;
use crate::error::{Error, Result};
use crate::field::{generalized_eig_range, MetricField};
use crate::flow::Trajectory;
use crate::geometry::Geometry;

/// Parameters of `ψ(t) = n(n−1)c0` on `[0, T+½]`, `c1 t^{−β}` on `[T+1, ∞)`,
/// blended by the quintic `χ` in between.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CutoffParams {
    pub n: usize,
    pub c0: f64,
    pub c1: f64,
    pub beta: f64,
    pub t_transition: f64,
}

impl CutoffParams {
    pub fn new(n: usize, c0: f64, c1: f64, beta: f64, t_transition: f64) -> Result<Self> {
        if n < 2 || !(c0 > 0.0) || !(c1 > 0.0) || !(t_transition > 0.0) || !beta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "cutoff needs n >= 2 and positive c0, c1, T (n={n}, c0={c0}, c1={c1}, T={t_transition}, beta={beta})"
            )));
        }
        Ok(Self { n, c0, c1, beta, t_transition })
    }

    fn plateau(&self) -> f64 {
        (self.n * (self.n - 1)) as f64 * self.c0
    }
}

/// `1 − (10σ³ − 15σ⁴ + 6σ⁵)`, `σ = 2(t − T − ½)` clamped to `[0, 1]`.
pub fn chi(p: &CutoffParams, t: f64) -> f64 {
    let s = (2.0 * (t - p.t_transition - 0.5)).clamp(0.0, 1.0);
    1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

pub fn cutoff_psi(p: &CutoffParams, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::InvalidTime(format!("t = {t} is negative")));
    }
    let x = chi(p, t);
    if x == 1.0 {
        return Ok(p.plateau());
    }
    let tail = p.c1 * t.powf(-p.beta);
    Ok(x * p.plateau() + (1.0 - x) * tail)
}

/// Gauss–Legendre nodes and weights on `[−1, 1]`.
fn gauss_legendre(m: usize) -> Vec<(f64, f64)> {
    (1..=m)
        .map(|i| {
            let mut x = (std::f64::consts::PI * (i as f64 - 0.25) / (m as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=m {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

fn blend_integral(p: &CutoffParams, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    gauss_legendre(32)
        .iter()
        .map(|&(x, w)| w * cutoff_psi(p, mid + half * x).expect("t >= 0"))
        .sum::<f64>()
        * half
}

fn tail_integral(p: &CutoffParams, a: f64, b: f64) -> f64 {
    if (p.beta - 1.0).abs() < 1e-14 {
        p.c1 * (b / a).ln()
    } else {
        p.c1 * (b.powf(1.0 - p.beta) - a.powf(1.0 - p.beta)) / (1.0 - p.beta)
    }
}

/// `I(t) = ∫₀ᵗ ψ(u) du`, piecewise.
pub fn cutoff_integral(p: &CutoffParams, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::InvalidTime(format!("t = {t} is negative")));
    }
    let (t1, t2) = (p.t_transition + 0.5, p.t_transition + 1.0);
    Ok(p.plateau() * t.min(t1) + blend_integral(p, t1, t.min(t2)) + if t > t2 { tail_integral(p, t2, t) } else { 0.0 })
}

/// `I(∞)`; finite only for `β > 1`.
pub fn cutoff_integral_infinity(p: &CutoffParams) -> Result<f64> {
    if !(p.beta > 1.0) {
        return Err(Error::UnboundedIntegral(p.beta));
    }
    let t2 = p.t_transition + 1.0;
    Ok(cutoff_integral(p, t2)? + p.c1 * t2.powf(1.0 - p.beta) / (p.beta - 1.0))
}

/// Flow parameters `θ ∈ [2/5, 1/2]`, `β = θ/(1 − 2θ)` and per-order constants.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArfParams {
    pub theta: f64,
    /// Infinite at `θ = 1/2` (exponential regime).
    pub beta: f64,
    pub c_k: Vec<f64>,
    pub t_k: Vec<f64>,
}

impl ArfParams {
    pub fn new(theta: f64, c_k: Vec<f64>, t_k: Vec<f64>) -> Result<Self> {
        if !(0.4..=0.5).contains(&theta) {
            return Err(Error::InvalidArgument(format!("theta = {theta} outside [2/5, 1/2]")));
        }
        if c_k.len() != t_k.len() || c_k.len() > 4 {
            return Err(Error::InvalidArgument("constants C_k, T_k are given for k <= 3".into()));
        }
        Ok(Self { theta, beta: beta_of_theta(theta), c_k, t_k })
    }
}

pub fn beta_of_theta(theta: f64) -> f64 {
    if theta >= 0.5 {
        f64::INFINITY
    } else {
        theta / (1.0 - 2.0 * theta)
    }
}

pub fn theta_of_beta(beta: f64) -> f64 {
    if beta.is_infinite() {
        0.5
    } else {
        beta / (1.0 + 2.0 * beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayModel {
    /// `y = A t^{−β}`.
    Power,
    /// `y = A e^{−r t}`.
    Exponential,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DecayFit {
    pub model: DecayModel,
    pub exponent_or_rate: f64,
    pub amplitude: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
}

pub const DEFAULT_BURN_IN: f64 = 0.3;

/// Least-squares fit of `log y` against `log t` or `t` after discarding the
/// leading `burn_in` fraction of samples.
pub fn fit_decay(t: &[f64], y: &[f64], model: DecayModel, burn_in: f64) -> Result<DecayFit> {
    if t.len() != y.len() || t.len() < 10 {
        return Err(Error::InvalidArgument(format!("need at least 10 paired samples, got {}", t.len().min(y.len()))));
    }
    if !(0.0..1.0).contains(&burn_in) {
        return Err(Error::InvalidArgument(format!("burn-in fraction {burn_in} outside [0, 1)")));
    }
    if let Some(v) = y.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument(format!("nonpositive sample {v}")));
    }
    let start = (burn_in * t.len() as f64).floor() as usize;
    let (ts, ys) = (&t[start..], &y[start..]);
    if model == DecayModel::Power && ts.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument("power model needs t > 0 in the fit window".into()));
    }
    let xs: Vec<f64> = ts
        .iter()
        .map(|&v| if model == DecayModel::Power { v.ln() } else { v })
        .collect();
    let ls: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let m = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / m, ls.iter().sum::<f64>() / m);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ls).map(|(x, l)| (x - mx) * (l - my)).sum();
    let syy: f64 = ls.iter().map(|l| (l - my).powi(2)).sum();
    if xs.len() < 2 || !(sxx > 0.0) || !(syy > 0.0) {
        return Err(Error::InvalidArgument("degenerate fit window".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(&ls).map(|(x, l)| (l - intercept - slope * x).powi(2)).sum();
    Ok(DecayFit {
        model,
        exponent_or_rate: -slope,
        amplitude: intercept.exp(),
        r_squared: (1.0 - ss_res / syy).clamp(0.0, 1.0),
        window: (ts[0], *ts.last().unwrap()),
    })
}

/// `sup |Rm|`, `sup |Ric|` and `Vol` at every checkpoint of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvatureSeries {
    pub dim: usize,
    pub times: Vec<f64>,
    pub sup_riemann: Vec<f64>,
    pub sup_ricci: Vec<f64>,
    pub volume: Vec<f64>,
}

pub fn curvature_series(traj: &Trajectory) -> Result<CurvatureSeries> {
    let d = Differentiator::new(traj.grid(), traj.cfg.derivatives);
    let mut out = CurvatureSeries { dim: traj.grid().dim(), times: vec![], sup_riemann: vec![], sup_ricci: vec![], volume: vec![] };
    for s in &traj.checkpoints {
        let geo = Geometry::compute(&s.g, &d)?;
        out.times.push(s.t);
        out.sup_riemann.push(geo.sup_riemann());
        out.sup_ricci.push(geo.sup_ricci());
        out.volume.push(geo.volume());
    }
    Ok(out)
}

/// Cutoff parameters adapted to a recorded run: `c0 = max sup|Rm|`, `T` given,
/// `β = max(β̂, 2)` from a power fit of `sup|Ric|` and the smallest `c1` with
/// `sup|Ric|(t) ≤ c1 t^{−β}` at every sample `t ≥ T + 1`.
pub fn fit_cutoff(series: &CurvatureSeries, t_transition: f64) -> Result<CutoffParams> {
    let c0 = series.sup_riemann.iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let positive: Vec<(f64, f64)> = series
        .times
        .iter()
        .zip(&series.sup_ricci)
        .filter(|(t, y)| **t > 0.0 && **y > 0.0)
        .map(|(t, y)| (*t, *y))
        .collect();
    let beta_hat = if positive.len() >= 10 {
        let (ts, ys): (Vec<f64>, Vec<f64>) = positive.iter().copied().unzip();
        fit_decay(&ts, &ys, DecayModel::Power, DEFAULT_BURN_IN).map(|f| f.exponent_or_rate).unwrap_or(2.0)
    } else {
        2.0
    };
    let beta = beta_hat.max(2.0);
    let c1 = positive
        .iter()
        .filter(|(t, _)| *t >= t_transition + 1.0)
        .map(|(t, y)| y * t.powf(beta))
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    CutoffParams::new(series.dim, c0, c1, beta, t_transition)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VolumeReport {
    pub times: Vec<f64>,
    pub volumes: Vec<f64>,
    pub max_volume: f64,
    pub integral_infinity: f64,
    /// `Vol(g(0))·exp(I(∞))`.
    pub bound: f64,
    pub cutoff: CutoffParams,
    pub pass: bool,
}

pub fn volume_check(series: &CurvatureSeries, cutoff: &CutoffParams) -> Result<VolumeReport> {
    let i_inf = cutoff_integral_infinity(cutoff)?;
    let v0 = *series.volume.first().ok_or_else(|| Error::InvalidArgument("empty series".into()))?;
    let max_volume = series.volume.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bound = v0 * i_inf.exp();
    Ok(VolumeReport {
        times: series.times.clone(),
        volumes: series.volume.clone(),
        max_volume,
        integral_infinity: i_inf,
        bound,
        cutoff: *cutoff,
        pass: max_volume <= bound,
    })
}

/// Maxima of one conjugate flow over its lifetime.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConjugateBounds {
    pub s: f64,
    pub min_f: f64,
    pub max_f: f64,
    pub max_grad: f64,
    pub max_hessian_l2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConjugateBoundsReport {
    pub per_s: Vec<ConjugateBounds>,
    pub min_f: f64,
    /// `(max − min)/mean` across `s` for `max f`, `max |∇f|`, `max ∫|∇²f|²`.
    pub spreads: [f64; 3],
    pub lower_bound_pass: bool,
    pub uniform_pass: bool,
    pub pass: bool,
}

pub const SPREAD_TOL: f64 = 0.2;
pub const LOWER_BOUND_TOL: f64 = 1e-8;

fn spread(v: &[f64]) -> f64 {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if mean == 0.0 {
        if hi == lo { 0.0 } else { f64::INFINITY }
    } else {
        (hi - lo) / mean.abs()
    }
}

pub fn conjugate_bounds_check(traj: &Trajectory, flows: &[ConjugateFlow]) -> Result<ConjugateBoundsReport> {
    if flows.is_empty() {
        return Err(Error::InvalidArgument("no conjugate flows given".into()));
    }
    let d = Differentiator::new(traj.grid(), traj.cfg.derivatives);
    if let Some(f) = flows.iter().find(|f| f.samples.is_empty()) {
        return Err(Error::InvalidArgument(format!("flow for s = {} has no samples", f.s)));
    }
    let mut per_s: Vec<ConjugateBounds> = flows
        .iter()
        .map(|f| ConjugateBounds {
            s: f.s,
            min_f: f64::INFINITY,
            max_f: f64::NEG_INFINITY,
            max_grad: 0.0,
            max_hessian_l2: 0.0,
        })
        .collect();
    let top = flows.iter().map(|f| f.start).max().unwrap();
    for k in 0..=top {
        if flows.iter().all(|f| f.at_checkpoint(k).is_none()) {
            continue;
        }
        let geo = Geometry::compute(&traj.checkpoints[k].g, &d)?;
        for (b, flow) in per_s.iter_mut().zip(flows) {
            let Some(f) = flow.at_checkpoint(k) else { continue };
            b.min_f = b.min_f.min(f.min());
            b.max_f = b.max_f.max(f.max());
            b.max_grad = b.max_grad.max(geo.grad_norm_sq(&d, f)?.max().max(0.0).sqrt());
            let h2 = geo.integrate(&geo.norm_sq(&geo.hessian(&d, f)?)?)?;
            b.max_hessian_l2 = b.max_hessian_l2.max(h2);
        }
    }
    let col = |g: fn(&ConjugateBounds) -> f64| per_s.iter().map(g).collect::<Vec<_>>();
    let spreads = [
        spread(&col(|b| b.max_f)),
        spread(&col(|b| b.max_grad)),
        spread(&col(|b| b.max_hessian_l2)),
    ];
    let min_f = per_s.iter().map(|b| b.min_f).fold(f64::INFINITY, f64::min);
    let lower_bound_pass = min_f >= -LOWER_BOUND_TOL;
    let uniform_pass = spreads.iter().all(|&s| s <= SPREAD_TOL);
    Ok(ConjugateBoundsReport {
        per_s,
        min_f,
        spreads,
        lower_bound_pass,
        uniform_pass,
        pass: lower_bound_pass && uniform_pass,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquivalenceSample {
    pub t: f64,
    pub min_eig: f64,
    pub max_eig: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub samples: Vec<EquivalenceSample>,
    /// `max_t max(1/min_eig, max_eig)`.
    pub constant: f64,
}

/// Smallest `C` with `C⁻¹ g_ref ≤ g(t) ≤ C g_ref` at every recorded time.
pub fn metric_equivalence_check(times: &[f64], metrics: &[&MetricField], g_ref: &MetricField) -> Result<EquivalenceReport> {
    g_ref.validate()?;
    let n = g_ref.dim();
    let mut samples = vec![];
    for (&t, g) in times.iter().zip(metrics) {
        if g.grid != g_ref.grid {
            return Err(Error::GridMismatch);
        }
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in 0..g.grid.len() {
            let (a, b) = generalized_eig_range(g.at(p), g_ref.at(p), n)
                .ok_or_else(|| g_ref.degenerate(p, "reference metric is not positive definite".into()))?;
            lo = lo.min(a);
            hi = hi.max(b);
        }
        samples.push(EquivalenceSample { t, min_eig: lo, max_eig: hi });
    }
    let constant = samples
        .iter()
        .map(|s| (1.0 / s.min_eig).max(s.max_eig))
        .fold(1.0, f64::max);
    Ok(EquivalenceReport { samples, constant })
}
