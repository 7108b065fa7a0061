use riccilab::flow::{
    run_flow, step_conjugate_heat, step_coupled, step_linear_heat_u, step_ricci_flow, Direction, FlowConfig,
    FlowState, FlowSystem, Gauge, TimeScheme, Trajectory,
};
use riccilab::init::{smooth_random_field, InitialMetric};
use riccilab::{DerivativeScheme, Differentiator, Error, Geometry, Grid, MetricField, ScalarField};

fn cfg(grid: &Grid, dt: f64, t_end: f64, gauge: Gauge, derivatives: DerivativeScheme) -> FlowConfig {
    let _ = grid;
    FlowConfig {
        scheme: TimeScheme::ExplicitRk4,
        dt,
        t_end,
        cfl_safety: 1.0,
        gauge,
        background: None,
        derivatives,
        system: FlowSystem::Ricci,
        checkpoint_stride: 1,
    }
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn conformal(n: usize, amp: f64) -> (Grid, MetricField) {
    let grid = Grid::torus(2, n).unwrap();
    (grid, InitialMetric::conformal(amp).build(grid).unwrap())
}

#[test]
fn flat_metric_is_stationary() {
    let grid = Grid::torus(2, 16).unwrap();
    let s0 = FlowState::new(MetricField::flat(grid));
    let c = cfg(&grid, 1e-3, 0.01, Gauge::Deturck, DerivativeScheme::CentralOrder4);
    let s1 = step_ricci_flow(&s0, &c).unwrap();
    assert_eq!(s1.g, s0.g);
    assert_eq!(s1.step_index, 1);
    let states = run_flow(&s0, &c, |_| Ok(())).unwrap();
    assert_eq!(states.len(), 11);
    assert!(states.iter().all(|s| s.g == s0.g));
}

#[test]
fn euler_step_is_minus_two_ricci() {
    let grid = Grid::torus(2, 16).unwrap();
    let g = InitialMetric::random(0.05, 3).build(grid).unwrap();
    let mut c = cfg(&grid, 1e-3, 1.0, Gauge::None, DerivativeScheme::CentralOrder4);
    c.scheme = TimeScheme::ExplicitEuler;
    let s1 = step_ricci_flow(&FlowState::new(g.clone()), &c).unwrap();
    let geo = Geometry::compute(&g, &Differentiator::new(grid, c.derivatives)).unwrap();
    let ric = geo.ricci();
    let expected: Vec<f64> = g.data.iter().zip(&ric.data).map(|(a, r)| a - 2.0 * 1e-3 * r).collect();
    assert_eq!(s1.g.data, expected);
}

#[test]
fn cfl_violation_is_rejected() {
    let grid = Grid::torus(2, 32).unwrap();
    let limit = FlowConfig::cfl_limit(&grid, 0.5);
    let mut c = cfg(&grid, 1.01 * limit, 1.0, Gauge::None, DerivativeScheme::CentralOrder4);
    c.cfl_safety = 0.5;
    let s = FlowState::new(MetricField::flat(grid));
    assert!(matches!(step_ricci_flow(&s, &c), Err(Error::Cfl { .. })));
    c.dt = limit;
    assert!(step_ricci_flow(&s, &c).is_ok());
}

#[test]
fn perturbation_decays_and_rk4_self_converges() {
    let (grid, g) = conformal(32, 0.05);
    let flat = MetricField::flat(grid);
    let dt0 = FlowConfig::cfl_limit(&grid, 0.5);
    let mut c = cfg(&grid, dt0, 1.0, Gauge::Deturck, DerivativeScheme::CentralOrder4);
    c.checkpoint_stride = 40;
    let states = run_flow(&FlowState::new(g.clone()), &c, |_| Ok(())).unwrap();
    let devs: Vec<f64> = states.iter().map(|s| s.g.sup_distance(&flat)).collect();
    assert!(devs.windows(2).all(|w| w[1] < w[0]), "{devs:?}");

    // self-convergence in dt on a fixed grid over a short horizon
    let end = |dt: f64| {
        let mut c = cfg(&grid, dt, 0.4, Gauge::Deturck, DerivativeScheme::CentralOrder4);
        c.checkpoint_stride = c.steps();
        run_flow(&FlowState::new(g.clone()), &c, |_| Ok(())).unwrap().pop().unwrap().g
    };
    let dt = 0.4 / 128.0;
    let (a, b, cc) = (end(dt), end(dt / 2.0), end(dt / 4.0));
    let e1 = a.sup_distance(&b);
    let e2 = b.sup_distance(&cc);
    let order = (e1 / e2).log2();
    assert!(order >= 3.5, "order {order} ({e1:e}, {e2:e})");
}

#[test]
fn run_flow_zero_steps_and_checkpoint_count() {
    let (grid, g) = conformal(16, 0.05);
    let mut c = cfg(&grid, 1e-3, 0.0, Gauge::Deturck, DerivativeScheme::CentralOrder4);
    let s = FlowState::new(g.clone());
    assert_eq!(run_flow(&s, &c, |_| Ok(())).unwrap().len(), 1);
    c.t_end = 0.1;
    c.checkpoint_stride = 7;
    let mut seen = 0;
    let states = run_flow(&s, &c, |_| {
        seen += 1;
        Ok(())
    })
    .unwrap();
    assert_eq!(states.len(), (0.1f64 / (1e-3 * 7.0)).floor() as usize + 1);
    assert_eq!(seen, states.len());
}

#[test]
fn replay_reproduces_checkpoints_bitwise() {
    let (grid, g) = conformal(16, 0.05);
    let mut c = FlowConfig::sampled(&grid, 0.5, 0.2, 0.05);
    c.derivatives = DerivativeScheme::CentralOrder4;
    let traj = Trajectory::run(&FlowState::new(g), &c).unwrap();
    assert_eq!(traj.checkpoints.len(), 5);
    for k in 0..4 {
        let seg = traj.replay_segment(k).unwrap();
        let last = seg.last().unwrap();
        assert_eq!(last.g, traj.checkpoints[k + 1].g);
        assert_eq!(last.t, traj.checkpoints[k + 1].t);
    }
    assert!(traj.replay_segment(4).is_err());
}

#[test]
fn final_ricci_smaller_than_initial() {
    let (grid, g) = conformal(32, 0.05);
    let c = FlowConfig::sampled(&grid, 0.5, 2.0, 0.5);
    let traj = Trajectory::run(&FlowState::new(g), &c).unwrap();
    let d = Differentiator::new(grid, c.derivatives);
    let sup = |s: &FlowState| Geometry::compute(&s.g, &d).unwrap().sup_ricci();
    assert!(sup(traj.checkpoints.last().unwrap()) < sup(&traj.checkpoints[0]));
}

#[test]
fn conjugate_steps_keep_trivial_data() {
    let grid = Grid::torus(2, 16).unwrap();
    let c = cfg(&grid, 1e-3, 1.0, Gauge::Deturck, DerivativeScheme::CentralOrder4);
    for v in [0.0, 1.3] {
        let s = FlowState::new(MetricField::flat(grid)).with_potential(ScalarField::constant(grid, v));
        for dir in [Direction::TForm, Direction::TauForm] {
            let s1 = step_conjugate_heat(&s, &c, dir).unwrap();
            assert!(s1.f.unwrap().values.iter().all(|&x| (x - v).abs() < 1e-15));
        }
        let u = step_linear_heat_u(&s, &c).unwrap();
        assert!(u.f.unwrap().values.iter().all(|&x| (x - v).abs() < 1e-14));
    }
    let bare = FlowState::new(MetricField::flat(grid));
    assert!(matches!(step_conjugate_heat(&bare, &c, Direction::TForm), Err(Error::MissingPotential)));
}

#[test]
fn heat_mode_decays_at_unit_rate() {
    for n in [16, 32] {
        let grid = Grid::torus(2, n).unwrap();
        let dt = 1e-3;
        let c = cfg(&grid, dt, 1.0, Gauge::None, DerivativeScheme::CentralOrder4);
        let u0 = ScalarField::from_fn(grid, |x| 1.0 + 0.1 * x[0].sin());
        let mut s = FlowState::new(MetricField::flat(grid)).with_potential(u0.map(|u| -u.ln()));
        for _ in 0..100 {
            s = step_linear_heat_u(&s, &c).unwrap();
        }
        let u = s.f.unwrap().map(|f| (-f).exp());
        let exact = ScalarField::from_fn(grid, |x| 1.0 + (-0.1f64).exp() * 0.1 * x[0].sin());
        let h = grid.spacing(0);
        assert!(sup_diff(&u.values, &exact.values) < 1e-12 + 0.05 * h.powi(4), "n = {n}");
    }
}

fn general_state(grid: Grid) -> FlowState {
    let g = InitialMetric::random(0.05, 11).build(grid).unwrap();
    FlowState::new(g).with_potential(smooth_random_field(grid, 0.3, 2, 5))
}

#[test]
fn f_form_agrees_with_linear_u_form() {
    let grid = Grid::torus(2, 16).unwrap();
    let s = general_state(grid);
    let mut prev = f64::INFINITY;
    for dt in [4e-3, 2e-3, 1e-3] {
        let c = cfg(&grid, dt, 1.0, Gauge::Deturck, DerivativeScheme::Spectral);
        let a = step_conjugate_heat(&s, &c, Direction::TauForm).unwrap();
        let b = step_linear_heat_u(&s, &c).unwrap();
        let diff = sup_diff(&a.f.unwrap().values, &b.f.unwrap().values);
        assert!(diff <= dt * dt, "dt {dt}: {diff:e}");
        assert!(diff <= prev);
        prev = diff;
        assert_eq!(a.g, b.g);
    }
}

#[test]
fn t_form_and_tau_form_are_time_reversals() {
    let grid = Grid::torus(2, 16).unwrap();
    let s = general_state(grid);
    for dt in [2e-3, 1e-3] {
        let c = cfg(&grid, dt, 1.0, Gauge::Deturck, DerivativeScheme::Spectral);
        let fwd = step_conjugate_heat(&s, &c, Direction::TForm).unwrap();
        assert!((fwd.t - dt).abs() < 1e-15);
        let back = step_conjugate_heat(&fwd, &c, Direction::TauForm).unwrap();
        assert!(back.t.abs() < 1e-15);
        let diff = sup_diff(&back.f.unwrap().values, &s.f.as_ref().unwrap().values);
        assert!(diff <= dt * dt, "dt {dt}: {diff:e}");
        assert!(back.g.sup_distance(&s.g) <= dt * dt);
    }
}

#[test]
fn positivity_loss_is_reported() {
    let grid = Grid::torus(2, 16).unwrap();
    let mut c = cfg(&grid, 0.019, 1.0, Gauge::None, DerivativeScheme::Spectral);
    c.scheme = TimeScheme::ExplicitEuler;
    // On g = 0.1·δ one Euler step overshoots a high mode of u = e^{−f}.
    let f = ScalarField::from_fn(grid, |x| -(1.0 + 0.5 * (7.0 * x[0]).cos()).ln());
    let s = FlowState::new(MetricField::scaled_identity(grid, 0.1)).with_potential(f);
    assert!(matches!(step_linear_heat_u(&s, &c), Err(Error::PositivityLoss { .. })));
}

fn coupled_cfg(grid: &Grid, dt: f64) -> FlowConfig {
    let mut c = cfg(grid, dt, 1.0, Gauge::None, DerivativeScheme::Spectral);
    c.system = FlowSystem::Coupled;
    c
}

fn weighted_volume(s: &FlowState) -> f64 {
    let one = ScalarField::constant(s.g.grid, 1.0);
    riccilab::geometry::weighted_integrate(&one, &s.g, s.f.as_ref().unwrap()).unwrap()
}

#[test]
fn coupled_flat_is_fixed_point() {
    let grid = Grid::torus(2, 16).unwrap();
    let s = FlowState::new(MetricField::flat(grid)).with_potential(ScalarField::constant(grid, 0.0));
    let s1 = step_coupled(&s, &coupled_cfg(&grid, 1e-3)).unwrap();
    assert_eq!(s1.g, s.g);
    assert_eq!(s1.f, s.f);
}

#[test]
fn coupled_conserves_weighted_volume_and_self_converges() {
    let grid = Grid::torus(2, 16).unwrap();
    let g = InitialMetric::conformal(0.05).build(grid).unwrap();
    let f0 = ScalarField::from_fn(grid, |x| 0.05 * x[1].cos());
    let s0 = FlowState::new(g).with_potential(f0);
    let v0 = weighted_volume(&s0);
    let c = coupled_cfg(&grid, 2e-3);
    let mut s = s0.clone();
    for _ in 0..20 {
        let next = step_coupled(&s, &c).unwrap();
        let drift = (weighted_volume(&next) - weighted_volume(&s)).abs() / v0;
        assert!(drift <= 1e-8, "{drift:e}");
        s = next;
    }
    let end = |dt: f64| {
        let mut c = coupled_cfg(&grid, dt);
        c.t_end = 0.04;
        c.checkpoint_stride = c.steps();
        run_flow(&s0, &c, |_| Ok(())).unwrap().pop().unwrap()
    };
    let (a, b, cc) = (end(0.004), end(0.002), end(0.001));
    let e1 = a.g.sup_distance(&b.g).max(sup_diff(&a.f.as_ref().unwrap().values, &b.f.as_ref().unwrap().values));
    let e2 = b.g.sup_distance(&cc.g).max(sup_diff(&b.f.as_ref().unwrap().values, &cc.f.as_ref().unwrap().values));
    let order = (e1 / e2).log2();
    assert!(order >= 3.5, "order {order} ({e1:e}, {e2:e})");
}
