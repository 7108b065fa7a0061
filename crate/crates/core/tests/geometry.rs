use std::f64::consts::PI;

use proptest::prelude::*;
use riccilab::init::{smooth_random_field, InitialMetric};
use riccilab::{DerivativeScheme, Differentiator, Error, Geometry, Grid, MetricField, ScalarField, TensorField};

const AMP: f64 = 0.1;

fn conformal_2d(n: usize) -> (Grid, MetricField, ScalarField) {
    let grid = Grid::torus(2, n).unwrap();
    let phi = ScalarField::from_fn(grid, |x| AMP * x[0].sin());
    (grid, MetricField::conformal(&phi), phi)
}

fn sup_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Closed-form Christoffel symbols of `e^{2φ}δ`, φ = AMP sin x₁, order `[k][i][j]`.
fn conformal_gamma(x: &[f64]) -> [f64; 8] {
    let dphi = [AMP * x[0].cos(), 0.0];
    let mut out = [0.0; 8];
    for k in 0..2 {
        for i in 0..2 {
            for j in 0..2 {
                let dk = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
                out[k * 4 + i * 2 + j] = dk(k, i) * dphi[j] + dk(k, j) * dphi[i] - dk(i, j) * dphi[k];
            }
        }
    }
    out
}

/// Gauss curvature `−e^{−2φ}Δφ`.
fn conformal_k(x: &[f64]) -> f64 {
    (-2.0 * AMP * x[0].sin()).exp() * AMP * x[0].sin()
}

fn order(coarse: f64, fine: f64) -> f64 {
    (coarse / fine).log2()
}

#[test]
fn flat_and_constant_metrics_have_zero_curvature() {
    for dim in [2, 3] {
        let grid = Grid::torus(dim, 8).unwrap();
        for scheme in [DerivativeScheme::Spectral, DerivativeScheme::CentralOrder4] {
            let d = Differentiator::new(grid, scheme);
            for c in [1.0, 2.5] {
                let geo = Geometry::compute(&MetricField::scaled_identity(grid, c), &d).unwrap();
                assert_eq!(geo.christoffel().max_abs(), 0.0);
                assert_eq!(geo.riemann().max_abs(), 0.0);
                assert_eq!(geo.ricci().max_abs(), 0.0);
                assert_eq!(geo.scalar().max_abs(), 0.0);
            }
        }
    }
}

#[test]
fn conformal_christoffel_matches_closed_form() {
    let err = |n: usize| {
        let (grid, g, _) = conformal_2d(n);
        let d = Differentiator::new(grid, DerivativeScheme::CentralOrder4);
        let gam = riccilab::geometry::christoffel(&g, &d).unwrap();
        let mut e = 0.0f64;
        for p in 0..grid.len() {
            e = e.max(sup_err(gam.at(p), &conformal_gamma(&grid.coords(p))));
        }
        e
    };
    let (e32, e64) = (err(32), err(64));
    assert!(e64 < 1e-6, "error {e64}");
    assert!(order(e32, e64) >= 3.5, "order {}", order(e32, e64));
}

#[test]
fn conformal_curvature_converges_at_fourth_order() {
    let errs = |n: usize| {
        let (grid, g, _) = conformal_2d(n);
        let d = Differentiator::new(grid, DerivativeScheme::CentralOrder4);
        let geo = Geometry::compute(&g, &d).unwrap();
        let (mut ek, mut er) = (0.0f64, 0.0f64);
        for p in 0..grid.len() {
            let x = grid.coords(p);
            let k = conformal_k(&x);
            let det = (4.0 * AMP * x[0].sin()).exp();
            // R_1221 = K det g
            let r1221 = geo.riemann_at(p)[(2 + 1) * 2];
            ek = ek.max((r1221 / det - k).abs());
            er = er.max((geo.scalar_at(p) - 2.0 * k).abs());
        }
        (ek, er)
    };
    let (c, f) = (errs(32), errs(64));
    assert!(order(c.0, f.0) >= 3.5, "sectional order {}", order(c.0, f.0));
    assert!(order(c.1, f.1) >= 3.5, "scalar order {}", order(c.1, f.1));
}

#[test]
fn scalar_curvature_at_quarter_period() {
    let grid = Grid::torus(2, 64).unwrap();
    let phi = ScalarField::from_fn(grid, |x| AMP * x[0].sin());
    let d = Differentiator::new(grid, DerivativeScheme::Spectral);
    let r = riccilab::geometry::scalar_curvature(&MetricField::conformal(&phi), &d).unwrap();
    // node 16 along axis 0 sits at x₁ = π/2
    let p = 16 * grid.stride(0);
    assert!((grid.coords(p)[0] - PI / 2.0).abs() < 1e-15);
    assert!((r.values[p] - 0.2 * (-0.2f64).exp()).abs() < 1e-12);
}

#[test]
fn conformal_3d_scalar_curvature() {
    // R = −e^{−2φ}(4Δφ + 2|∇φ|²) for g = e^{2φ}δ in dimension 3.
    let grid = Grid::torus(3, 16).unwrap();
    let phi = ScalarField::from_fn(grid, |x| 0.05 * (x[0].sin() + x[1].cos() * x[2].sin()));
    let d = Differentiator::new(grid, DerivativeScheme::Spectral);
    let geo = Geometry::compute(&MetricField::conformal(&phi), &d).unwrap();
    for p in 0..grid.len() {
        let x = grid.coords(p);
        let (s0, c0, s1, c1, s2, c2) = (x[0].sin(), x[0].cos(), x[1].sin(), x[1].cos(), x[2].sin(), x[2].cos());
        let lap = -0.05 * (s0 + 2.0 * c1 * s2);
        let grad2 = 0.0025 * (c0 * c0 + s1 * s1 * s2 * s2 + c1 * c1 * c2 * c2);
        let expected = -(-2.0 * phi.values[p]).exp() * (4.0 * lap + 2.0 * grad2);
        assert!((geo.scalar_at(p) - expected).abs() < 1e-11);
    }
}

#[test]
fn two_dimensional_ricci_is_half_scalar_times_metric() {
    for seed in 0..3 {
        let grid = Grid::torus(2, 32).unwrap();
        let g = InitialMetric::random(0.1, seed).build(grid).unwrap();
        let d = Differentiator::new(grid, DerivativeScheme::CentralOrder4);
        let geo = Geometry::compute(&g, &d).unwrap();
        for p in 0..grid.len() {
            let r = geo.scalar_at(p);
            for (ric, gij) in geo.ricci_at(p).iter().zip(g.at(p)) {
                assert!((ric - 0.5 * r * gij).abs() < 1e-12);
            }
        }
    }
}

fn check_riemann_symmetries(geo: &Geometry, n: usize) {
    let rm = geo.riemann();
    let tol = 1e-10 * rm.max_abs() + 1e-14;
    for p in 0..geo.grid.len() {
        let r = geo.riemann_at(p);
        let at = |i: usize, j: usize, k: usize, l: usize| r[((i * n + j) * n + k) * n + l];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let v = at(i, j, k, l);
                        assert!((v + at(j, i, k, l)).abs() <= tol);
                        assert!((v + at(i, j, l, k)).abs() <= tol);
                        assert!((v - at(k, l, i, j)).abs() <= tol);
                    }
                }
            }
        }
        let ric = geo.ricci_at(p);
        for i in 0..n {
            for j in 0..n {
                assert_eq!(ric[i * n + j], ric[j * n + i]);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn riemann_symmetries_hold_for_random_metrics(seed in 0u64..1000, dim in 2usize..4, spectral in any::<bool>()) {
        let grid = Grid::torus(dim, 8).unwrap();
        let g = InitialMetric::random(0.2, seed).build(grid).unwrap();
        let scheme = if spectral { DerivativeScheme::Spectral } else { DerivativeScheme::CentralOrder4 };
        let geo = Geometry::compute(&g, &Differentiator::new(grid, scheme)).unwrap();
        check_riemann_symmetries(&geo, dim);
        let norm = geo.norm_sq(&geo.riemann()).unwrap();
        prop_assert!(norm.min() >= 0.0);
    }
}

#[test]
fn degenerate_metric_names_node() {
    let grid = Grid::torus(2, 8).unwrap();
    let mut g = MetricField::flat(grid);
    let p = 3 * grid.stride(0) + 5;
    g.data[p * 4] = -0.5;
    let d = Differentiator::new(grid, DerivativeScheme::CentralOrder4);
    match riccilab::geometry::christoffel(&g, &d) {
        Err(Error::DegenerateMetric { node, .. }) => assert_eq!(node, vec![3, 5]),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn weighted_ricci_examples() {
    let grid = Grid::torus(2, 32).unwrap();
    let d = Differentiator::new(grid, DerivativeScheme::Spectral);
    let flat = MetricField::flat(grid);
    let f = ScalarField::from_fn(grid, |x| 0.1 * x[0].sin());
    let ricf = riccilab::geometry::weighted_ricci(&flat, &f, &d).unwrap();
    for p in 0..grid.len() {
        let x = grid.coords(p);
        let b = ricf.at(p);
        assert!((b[0] + 0.1 * x[0].sin()).abs() < 1e-13);
        assert!(b[1].abs() < 1e-13 && b[2].abs() < 1e-13 && b[3].abs() < 1e-13);
    }
    let (_, g, _) = conformal_2d(32);
    let geo = Geometry::compute(&g, &d).unwrap();
    let c = ScalarField::constant(grid, 3.0);
    assert_eq!(geo.weighted_ricci(&d, &c).unwrap().data, geo.ricci().data);
}

/// Closed-form Hessian of f = exp(cos x₁ + cos x₂)/4 under e^{2φ}δ.
fn bump_hessian(x: &[f64]) -> [f64; 4] {
    let e = (x[0].cos() + x[1].cos()).exp() / 4.0;
    let df = [-x[0].sin() * e, -x[1].sin() * e];
    let ddf = [
        (x[0].sin().powi(2) - x[0].cos()) * e,
        x[0].sin() * x[1].sin() * e,
        x[0].sin() * x[1].sin() * e,
        (x[1].sin().powi(2) - x[1].cos()) * e,
    ];
    let gam = conformal_gamma(x);
    let mut h = [0.0; 4];
    for a in 0..2 {
        for b in 0..2 {
            h[a * 2 + b] = ddf[a * 2 + b] - gam[a * 2 + b] * df[0] - gam[4 + a * 2 + b] * df[1];
        }
    }
    h
}

#[test]
fn conformal_hessian_matches_closed_form() {
    let err = |n: usize| {
        let (grid, g, _) = conformal_2d(n);
        let d = Differentiator::new(grid, DerivativeScheme::CentralOrder4);
        let geo = Geometry::compute(&g, &d).unwrap();
        let f = ScalarField::from_fn(grid, |x| (x[0].cos() + x[1].cos()).exp() / 4.0);
        let h = geo.hessian(&d, &f).unwrap();
        let via_cov = geo
            .covariant_derivative_iter(&d, &TensorField::covariant(grid, 0, f.values.clone()).unwrap(), 2)
            .unwrap();
        let mut e = 0.0f64;
        for p in 0..grid.len() {
            let exact = bump_hessian(&grid.coords(p));
            e = e.max(sup_err(h.at(p), &exact));
            assert!(sup_err(via_cov.at(p), h.at(p)) < 1e-9);
        }
        e
    };
    let (c, f) = (err(32), err(64));
    assert!(order(c, f) >= 3.5, "order {}", order(c, f));
}

#[test]
fn covariant_derivative_flat_examples() {
    let grid = Grid::torus(2, 16).unwrap();
    let d = Differentiator::new(grid, DerivativeScheme::Spectral);
    let geo = Geometry::compute(&MetricField::flat(grid), &d).unwrap();
    let s = ScalarField::from_fn(grid, |x| x[0].sin());
    let t0 = TensorField::covariant(grid, 0, s.values.clone()).unwrap();
    let grad = geo.covariant_derivative(&d, &t0).unwrap();
    let hess = geo.covariant_derivative_iter(&d, &t0, 2).unwrap();
    for p in 0..grid.len() {
        let x = grid.coords(p);
        assert!((grad.at(p)[0] - x[0].cos()).abs() < 1e-13 && grad.at(p)[1].abs() < 1e-13);
        let h = hess.at(p);
        assert!((h[0] + x[0].sin()).abs() < 1e-13);
        assert!(h[1].abs() < 1e-13 && h[2].abs() < 1e-13 && h[3].abs() < 1e-13);
    }
    assert!(matches!(geo.covariant_derivative_iter(&d, &t0, 4), Err(Error::RankOverflow(4))));
}

#[test]
fn laplacian_and_integration_examples() {
    let grid = Grid::torus(2, 32).unwrap();
    let flat = MetricField::flat(grid);
    let one = ScalarField::constant(grid, 1.0);
    let area = (2.0 * PI).powi(2);
    assert!((riccilab::geometry::integrate(&one, &flat).unwrap() - area).abs() < 1e-12);
    let c = ScalarField::constant(grid, 0.7);
    let w = riccilab::geometry::weighted_integrate(&one, &flat, &c).unwrap();
    assert!((w - (-0.7f64).exp() * area).abs() < 1e-12);

    let d = Differentiator::new(grid, DerivativeScheme::Spectral);
    let s = ScalarField::from_fn(grid, |x| x[0].sin());
    let zero = ScalarField::constant(grid, 0.0);
    let lap = riccilab::geometry::drift_laplacian_apply(&flat, &zero, &s, &d).unwrap();
    assert!(sup_err(&lap.values, &s.map(|v| -v).values) < 1e-12);

    let bad = Grid::torus(2, 16).unwrap();
    assert!(matches!(
        riccilab::geometry::integrate(&ScalarField::constant(bad, 1.0), &flat),
        Err(Error::GridMismatch)
    ));
}

#[test]
fn drift_laplacian_is_weighted_self_adjoint() {
    for scheme in [DerivativeScheme::Spectral, DerivativeScheme::CentralOrder4] {
        for seed in 0..4u64 {
            let grid = Grid::torus(2, 32).unwrap();
            let g = InitialMetric::random(0.1, seed).build(grid).unwrap();
            let d = Differentiator::new(grid, scheme);
            let geo = Geometry::compute(&g, &d).unwrap();
            let f = smooth_random_field(grid, 0.3, 3, 100 + seed);
            let u = smooth_random_field(grid, 1.0, 4, 200 + seed);
            let v = smooth_random_field(grid, 1.0, 4, 300 + seed);
            let lu = geo.drift_laplacian(&d, &f, &u).unwrap();
            let lv = geo.drift_laplacian(&d, &f, &v).unwrap();
            let a = geo.weighted_integrate(&lu.zip_map(&v, |x, y| x * y).unwrap(), &f).unwrap();
            let b = geo.weighted_integrate(&lv.zip_map(&u, |x, y| x * y).unwrap(), &f).unwrap();
            assert!((a - b).abs() <= 1e-10 * a.abs().max(b.abs()), "{a} vs {b}");
            let total = geo.weighted_integrate(&lu, &f).unwrap();
            let unorm = geo.integrate(&u.map(|x| x * x)).unwrap().sqrt();
            assert!(total.abs() <= 1e-8 * unorm, "{total}");
        }
    }
}

#[test]
fn drift_laplacian_matches_expanded_form() {
    // Δ_f u = Δu − ⟨∇f, ∇u⟩ up to discretization error.
    let grid = Grid::torus(2, 32).unwrap();
    let g = InitialMetric::random(0.1, 9).build(grid).unwrap();
    let d = Differentiator::new(grid, DerivativeScheme::Spectral);
    let geo = Geometry::compute(&g, &d).unwrap();
    let f = smooth_random_field(grid, 0.3, 2, 1);
    let u = smooth_random_field(grid, 1.0, 2, 2);
    let drift = geo.drift_laplacian(&d, &f, &u).unwrap();
    let lap = geo.laplacian(&d, &u).unwrap();
    let df = d.gradient(&f.values);
    let du = d.gradient(&u.values);
    for p in 0..grid.len() {
        let gi = geo.ginv_at(p);
        let mut dot = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                dot += gi[i * 2 + j] * df[p * 2 + i] * du[p * 2 + j];
            }
        }
        assert!((drift.values[p] - (lap.values[p] - dot)).abs() < 1e-9);
    }
}
