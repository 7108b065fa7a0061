use riccilab::conjugate::{conjugate_sweep, ConjugateForm, TerminalData};
use riccilab::flow::{FlowConfig, FlowState, FlowSystem, Gauge, TimeScheme, Trajectory};
use riccilab::init::InitialMetric;
use riccilab::{DerivativeScheme, Error, Geometry, Grid, MetricField, ScalarField, Differentiator};

fn config(dt: f64, t_end: f64, stride: usize, gauge: Gauge, derivatives: DerivativeScheme) -> FlowConfig {
    FlowConfig {
        scheme: TimeScheme::ExplicitRk4,
        dt,
        t_end,
        cfl_safety: 1.0,
        gauge,
        background: None,
        derivatives,
        system: FlowSystem::Ricci,
        checkpoint_stride: stride,
    }
}

fn conformal_run(n: usize, amp: f64, dt: f64, t_end: f64, stride: usize) -> Trajectory {
    let grid = Grid::torus(2, n).unwrap();
    let g = InitialMetric::conformal(amp).build(grid).unwrap();
    let cfg = config(dt, t_end, stride, Gauge::None, DerivativeScheme::Spectral);
    Trajectory::run(&FlowState::new(g), &cfg).unwrap()
}

fn sup_diff(a: &ScalarField, b: &ScalarField) -> f64 {
    a.values.iter().zip(&b.values).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

#[test]
fn flat_background_keeps_zero_potential() {
    let grid = Grid::torus(2, 16).unwrap();
    let cfg = config(1e-3, 0.02, 4, Gauge::Deturck, DerivativeScheme::CentralOrder4);
    let traj = Trajectory::run(&FlowState::new(MetricField::flat(grid)), &cfg).unwrap();
    let flows = conjugate_sweep(&traj, &[0.02, 0.012], &TerminalData::Zero, ConjugateForm::U).unwrap();
    assert_eq!(flows[0].samples.len(), 6);
    assert_eq!(flows[1].samples.len(), 4);
    for flow in &flows {
        for s in &flow.samples {
            assert!(s.f.values.iter().all(|&v| v == 0.0));
        }
    }
}

#[test]
fn terminal_datum_is_recorded_at_start() {
    let traj = conformal_run(16, 0.1, 2e-3, 0.04, 4);
    let fmode = ScalarField::from_fn(traj.grid(), |x| 0.3 * x[0].cos());
    let flows = conjugate_sweep(&traj, &[0.024], &TerminalData::Field(fmode.clone()), ConjugateForm::F).unwrap();
    let flow = &flows[0];
    assert_eq!(flow.start, 3);
    assert_eq!(flow.samples.last().unwrap().f, fmode);
    assert_eq!(flow.samples.len(), 4);
    assert!(flow.at_checkpoint(4).is_none());
    assert!(flows[0].samples.windows(2).all(|w| w[0].t < w[1].t));
}

#[test]
fn backward_heat_mode_on_flat_torus() {
    // u = e^{-f} = 1 + ε cos x solves the backward heat equation with u(t) = 1 + ε e^{-(s-t)} cos x.
    let grid = Grid::torus(2, 16).unwrap();
    let eps = 0.2;
    let s = 0.2;
    let cfg = config(2.5e-3, s, 8, Gauge::Deturck, DerivativeScheme::Spectral);
    let traj = Trajectory::run(&FlowState::new(MetricField::flat(grid)), &cfg).unwrap();
    let ft = ScalarField::from_fn(grid, |x| -(1.0 + eps * x[0].cos()).ln());
    for form in [ConjugateForm::U, ConjugateForm::F] {
        let flows = conjugate_sweep(&traj, &[s], &TerminalData::Field(ft.clone()), form).unwrap();
        for sample in &flows[0].samples {
            let decay = (-(s - sample.t)).exp();
            let exact = ScalarField::from_fn(grid, |x| -(1.0 + eps * decay * x[0].cos()).ln());
            let tol = if form == ConjugateForm::U { 1e-8 } else { 1e-5 };
            assert!(sup_diff(&sample.f, &exact) < tol, "{form:?} t={} err {}", sample.t, sup_diff(&sample.f, &exact));
        }
    }
}

#[test]
fn weighted_volume_is_conserved() {
    let traj = conformal_run(32, 0.1, 1e-3, 0.4, 20);
    let d = Differentiator::new(traj.grid(), traj.cfg.derivatives);
    let flows = conjugate_sweep(&traj, &[0.4], &TerminalData::Zero, ConjugateForm::U).unwrap();
    let v0 = Geometry::compute(&traj.checkpoints[0].g, &d).unwrap().volume();
    for sample in &flows[0].samples {
        let geo = Geometry::compute(&traj.checkpoints[sample.checkpoint].g, &d).unwrap();
        let one = ScalarField::constant(traj.grid(), 1.0);
        let wv = geo.weighted_integrate(&one, &sample.f).unwrap();
        assert!(((wv - geo.volume()) / v0).abs() < 1e-6, "t={} drift {}", sample.t, wv - geo.volume());
    }
}

#[test]
fn linear_and_nonlinear_forms_agree() {
    let traj = conformal_run(16, 0.1, 2e-3, 0.2, 10);
    let u = conjugate_sweep(&traj, &[0.2], &TerminalData::Zero, ConjugateForm::U).unwrap();
    let f = conjugate_sweep(&traj, &[0.2], &TerminalData::Zero, ConjugateForm::F).unwrap();
    let diff = sup_diff(&u[0].samples[0].f, &f[0].samples[0].f);
    let size = u[0].samples[0].f.max_abs();
    assert!(size > 1e-3);
    assert!(diff < 1e-8 * size.max(1.0), "{diff}");
}

#[test]
fn sweep_converges_with_time_step() {
    let mut errs = vec![];
    let reference = conformal_run(16, 0.2, 0.4 / 256.0, 0.4, 64);
    let fref = conjugate_sweep(&reference, &[0.4], &TerminalData::Zero, ConjugateForm::U).unwrap();
    for (dt, stride) in [(0.4 / 32.0, 8), (0.4 / 64.0, 16)] {
        let traj = conformal_run(16, 0.2, dt, 0.4, stride);
        let f = conjugate_sweep(&traj, &[0.4], &TerminalData::Zero, ConjugateForm::U).unwrap();
        errs.push(sup_diff(&f[0].samples[0].f, &fref[0].samples[0].f));
    }
    let order = (errs[0] / errs[1]).log2();
    assert!(order >= 1.8, "errors {errs:?} order {order}");
}

#[test]
fn odd_stride_and_unknown_start_are_rejected() {
    let traj = conformal_run(16, 0.1, 2e-3, 0.03, 3);
    assert!(matches!(
        conjugate_sweep(&traj, &[0.03], &TerminalData::Zero, ConjugateForm::U),
        Err(Error::InvalidArgument(_))
    ));
    let traj = conformal_run(16, 0.1, 2e-3, 0.04, 4);
    assert!(conjugate_sweep(&traj, &[0.01], &TerminalData::Zero, ConjugateForm::U).is_err());
}
