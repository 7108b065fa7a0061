use nalgebra::{DMatrix, SymmetricEigen};
use riccilab::conjugate::{conjugate_sweep, ConjugateForm, TerminalData};
use riccilab::eigen::TrigBasis;
use riccilab::flow::{FlowConfig, FlowState, Trajectory};
use riccilab::functionals::{
    check_rigidity, dynamical_series, energy_f, functional_series, lambda_dyn_infinity, lambda_dyn_s,
    lambda_functional, lambda_functional_shifted, ls_probe, validate_schedule, weighted_volume,
};
use riccilab::init::InitialMetric;
use riccilab::{DerivativeScheme, Differentiator, Error, Geometry, Grid, MetricField, ScalarField};
use std::f64::consts::PI;

fn simpson_periodic(n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let h = 2.0 * PI / n as f64;
    (0..n).map(|i| f(i as f64 * h) * if i % 2 == 0 { 2.0 } else { 4.0 }).sum::<f64>() * h / 3.0
}

#[test]
fn energy_on_flat_torus_matches_quadrature() {
    let grid = Grid::torus(2, 64).unwrap();
    let d = Differentiator::new(grid, DerivativeScheme::CentralOrder4);
    let geo = Geometry::compute(&MetricField::flat(grid), &d).unwrap();
    let a = 0.7;
    let f = ScalarField::from_fn(grid, |x| a * x[0].sin());
    let expected = 2.0 * PI * simpson_periodic(4000, |x| a * a * x.cos().powi(2) * (-a * x.sin()).exp());
    let got = energy_f(&geo, &d, &f).unwrap();
    assert!((got - expected).abs() < 1e-5 * expected, "{got} vs {expected}");
    let wv = 2.0 * PI * simpson_periodic(4000, |x| (-a * x.sin()).exp());
    assert!((weighted_volume(&geo, &f).unwrap() - wv).abs() < 1e-10 * wv);
}

#[test]
fn total_scalar_curvature_of_torus_vanishes() {
    let grid = Grid::torus(2, 32).unwrap();
    let d = Differentiator::new(grid, DerivativeScheme::CentralOrder4);
    let g = InitialMetric::random(0.1, 11).build(grid).unwrap();
    let geo = Geometry::compute(&g, &d).unwrap();
    let zero = ScalarField::constant(grid, 0.0);
    assert!(energy_f(&geo, &d, &zero).unwrap().abs() < 1e-6);
}

#[test]
fn lambda_of_flat_torus_is_zero() {
    let grid = Grid::torus(2, 16).unwrap();
    let d = Differentiator::new(grid, DerivativeScheme::Spectral);
    let m = lambda_functional(&MetricField::flat(grid), &d).unwrap();
    assert!(m.lambda.abs() < 1e-10);
    let vol = 4.0 * PI * PI;
    assert!(m.f_g.values.iter().all(|&f| (f - vol.ln()).abs() < 1e-8));
    assert!(m.residual <= 1e-8);
}

/// Lowest eigenvalue of `-4 w'' - 2 φ'' w = λ e^{2φ} w` on the circle by second-order
/// finite differences, Richardson-extrapolated.
fn one_dimensional_lambda(phi: impl Fn(f64) -> f64, phi2: impl Fn(f64) -> f64) -> f64 {
    let solve = |n: usize| {
        let h = 2.0 * PI / n as f64;
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            let x = i as f64 * h;
            let s = (-phi(x)).exp();
            a[(i, i)] = (8.0 / (h * h) - 2.0 * phi2(x)) * s * s;
            let j = (i + 1) % n;
            let sj = (-phi(j as f64 * h)).exp();
            a[(i, j)] = -4.0 / (h * h) * s * sj;
            a[(j, i)] = a[(i, j)];
        }
        SymmetricEigen::new(a).eigenvalues.min()
    };
    let (coarse, fine) = (solve(400), solve(800));
    (4.0 * fine - coarse) / 3.0
}

#[test]
fn lambda_matches_independent_one_dimensional_solver() {
    let grid = Grid::torus(2, 32).unwrap();
    let amp = 0.15;
    let g = InitialMetric::conformal(amp).build(grid).unwrap();
    let d = Differentiator::new(grid, DerivativeScheme::Spectral);
    let m = lambda_functional(&g, &d).unwrap();
    let oracle = one_dimensional_lambda(|x| amp * x.sin(), |x| -amp * x.sin());
    assert!(oracle < 0.0);
    assert!((m.lambda - oracle).abs() < 1e-7, "{} vs {oracle}", m.lambda);
    assert!(m.w.min() > 0.0);
    let geo = Geometry::compute(&g, &d).unwrap();
    assert!((weighted_volume(&geo, &m.f_g).unwrap() - 1.0).abs() < 1e-12);
    let f_at_min = energy_f(&geo, &d, &m.f_g).unwrap();
    assert!((f_at_min - m.lambda).abs() < 1e-6, "{f_at_min} vs {}", m.lambda);
}

#[test]
fn lambda_shift_and_scaling() {
    let grid = Grid::torus(2, 32).unwrap();
    let d = Differentiator::new(grid, DerivativeScheme::CentralOrder4);
    let g = InitialMetric::random(0.05, 5).build(grid).unwrap();
    let geo = Geometry::compute(&g, &d).unwrap();
    let basis = TrigBasis::default_for(grid);
    let base = lambda_functional_shifted(&geo, &basis, 0.0).unwrap();
    let shifted = lambda_functional_shifted(&geo, &basis, 0.75).unwrap();
    assert!((shifted.lambda - base.lambda - 0.75).abs() < 1e-9);
    let scaled = lambda_functional(&g.scaled(4.0), &d).unwrap();
    assert!((scaled.lambda - base.lambda / 4.0).abs() < 1e-9 * base.lambda.abs().max(1e-3));
}

#[test]
fn ls_probe_scales_consistently() {
    let grid = Grid::torus(2, 32).unwrap();
    let d = Differentiator::new(grid, DerivativeScheme::CentralOrder4);
    let g = InitialMetric::conformal(0.1).build(grid).unwrap();
    let p = ls_probe(&g, &d, 0.5).unwrap();
    let q = ls_probe(&g.scaled(4.0), &d, 0.5).unwrap();
    assert!((q.lambda - p.lambda / 4.0).abs() < 1e-9 * p.lambda.abs());
    assert!((q.lhs - p.lhs / 4.0).abs() < 1e-6 * p.lhs);
    assert!((q.rhs - p.rhs / 2.0).abs() < 1e-6 * p.rhs);
    assert!(matches!(ls_probe(&g, &d, 0.3), Err(Error::InvalidArgument(_))));
    assert!(matches!(ls_probe(&g, &d, 0.55), Err(Error::InvalidArgument(_))));
}

fn short_run() -> Trajectory {
    let grid = Grid::torus(2, 32).unwrap();
    let g = InitialMetric::conformal(0.1).build(grid).unwrap();
    let cfg = FlowConfig::sampled(&grid, 0.5, 0.6, 0.05);
    Trajectory::run(&FlowState::new(g), &cfg).unwrap()
}

#[test]
fn dynamical_lambda_is_monotone_and_integrates_its_rate() {
    let traj = short_run();
    let d = Differentiator::new(traj.grid(), traj.cfg.derivatives);
    let flows = conjugate_sweep(&traj, &[0.6], &TerminalData::Zero, ConjugateForm::U).unwrap();
    let series = &dynamical_series(&traj, &flows, &d).unwrap()[0];
    assert_eq!(series.points.len(), 13);
    for w in series.points.windows(2) {
        assert!(w[1].f_energy >= w[0].f_energy - 1e-7);
        assert!(w[0].rate >= 0.0);
    }
    let r = check_rigidity(series, 0.0, 0.6, 0.05).unwrap();
    assert!(r.pass, "{r:?}");
    assert!(r.lhs > 0.0 && r.sup_weighted_ricci > 0.0);
    let direct = lambda_dyn_s(&traj, 0.6, 0.3).unwrap();
    assert!((direct - series.points[6].f_energy).abs() < 1e-12);
    assert!(matches!(lambda_dyn_s(&traj, 0.3, 0.4), Err(Error::InvalidTime(_))));
}

#[test]
fn rigidity_on_flat_torus_is_trivial() {
    let grid = Grid::torus(2, 16).unwrap();
    let cfg = FlowConfig::sampled(&grid, 0.5, 0.2, 0.05);
    let traj = Trajectory::run(&FlowState::new(MetricField::flat(grid)), &cfg).unwrap();
    let d = Differentiator::new(grid, cfg.derivatives);
    let flows = conjugate_sweep(&traj, &[0.2], &TerminalData::Zero, ConjugateForm::U).unwrap();
    let series = &dynamical_series(&traj, &flows, &d).unwrap()[0];
    let r = check_rigidity(series, 0.0, 0.2, 0.05).unwrap();
    assert!(r.pass && r.lhs == 0.0 && r.rhs == 0.0 && r.sup_weighted_ricci == 0.0);
}

#[test]
fn lambda_infinity_gaps_shrink() {
    let traj = short_run();
    let li = lambda_dyn_infinity(&traj, 0.1, &[0.3, 0.4, 0.5, 0.6], 1e-6).unwrap();
    assert_eq!(li.gaps.len(), 3);
    assert!(li.gaps.windows(2).all(|w| w[1] < w[0]), "{:?}", li.gaps);
    assert!(!li.converged);
    assert!(matches!(validate_schedule(&[0.5, 0.4]), Err(Error::InvalidArgument(_))));
    assert!(lambda_dyn_infinity(&traj, 0.4, &[0.3, 0.6], 1e-6).is_err());
}

#[test]
fn functional_series_bounds_lambda() {
    let traj = short_run();
    let fs = functional_series(&traj, &[0.3, 0.6], &[0.4, 0.5, 0.6], 1e-6).unwrap();
    assert_eq!(fs.records.len(), 13);
    for r in &fs.records {
        for (_, v) in &r.lambda_dyn_s_normalized {
            assert!(*v >= r.lambda - 1e-6, "t={} {v} < {}", r.t, r.lambda);
        }
        if let Some(v) = r.lambda_dyn_inf_normalized {
            assert!(v >= r.lambda - 1e-6);
        }
    }
    assert!(fs.records.windows(2).all(|w| w[1].lambda >= w[0].lambda - 1e-7));
    assert!(fs.lambda_residual_max <= 1e-8);
}
