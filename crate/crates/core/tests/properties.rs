use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::{Arc, OnceLock};

use vpl_core::geometry::{specular_commute_residual, Chart};
use vpl_core::grid::VelocityGrid;
use vpl_core::landau::{phi_kernel, OriginRule};
use vpl_core::operators::{random_smooth_profile, CollisionOperators};
use vpl_core::sym;

fn ops() -> &'static CollisionOperators {
    static OPS: OnceLock<CollisionOperators> = OnceLock::new();
    OPS.get_or_init(|| {
        let grid = Arc::new(VelocityGrid::new(5.0, 10).unwrap());
        CollisionOperators::new(grid, -3.0, OriginRule::Corrected).unwrap()
    })
}

fn profile(seed: u64) -> Vec<f64> {
    random_smooth_profile(&ops().grid, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn noise(seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..ops().n_v()).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn kernel_annihilates_its_argument(w in prop::array::uniform3(-8.0f64..8.0), gamma in -3.0f64..1.0) {
        prop_assume!(w.iter().map(|x| x * x).sum::<f64>() > 1e-6);
        let m = phi_kernel(&w, gamma).unwrap();
        let r = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
        let pw = sym::matvec(&m, &w);
        prop_assert!(max_abs(&pw) <= 1e-13 * r.powf(gamma + 3.0).max(1.0));
        prop_assert!(sym::eigenvalues(&m)[0] >= -1e-14 * r.powf(gamma + 2.0));
    }

    #[test]
    fn l_is_symmetric_and_nonnegative(a in any::<u64>(), b in any::<u64>()) {
        let ops = ops();
        let g = &ops.grid;
        let (f, h) = (noise(a), profile(b));
        let lf = ops.apply_l(&f);
        let lh = ops.apply_l(&h);
        let scale = (g.dot_v(&f, &f) * g.dot_v(&h, &h)).sqrt() * ops.apply_l(&f).iter().map(|x| x.abs()).sum::<f64>().max(1.0);
        prop_assert!((g.dot_v(&lf, &h) - g.dot_v(&f, &lh)).abs() <= 1e-12 * scale);
        prop_assert!(g.dot_v(&lf, &f) >= -1e-10 * g.dot_v(&f, &f));
    }

    #[test]
    fn l_kills_invariants_and_projection_is_idempotent(a in any::<u64>(), c in prop::array::uniform5(-2.0f64..2.0)) {
        let ops = ops();
        let g = &ops.grid;
        let mut f = vec![0.0; ops.n_v()];
        for (ci, e) in c.iter().zip(&ops.basis.e) {
            f.iter_mut().zip(e).for_each(|(x, y)| *x += ci * y);
        }
        prop_assert!(g.dot_v(&ops.apply_l(&f), &ops.apply_l(&f)).sqrt() <= 1e-12 * (1.0 + g.dot_v(&f, &f).sqrt()));
        let h = profile(a);
        let (p, _) = ops.project_p_cell(&h);
        let (pp, _) = ops.project_p_cell(&p);
        prop_assert!(p.iter().zip(&pp).all(|(x, y)| (x - y).abs() <= 1e-12 * max_abs(&h)));
    }

    #[test]
    fn gamma_conserves_mass_momentum_energy(a in any::<u64>()) {
        let ops = ops();
        let g = &ops.grid;
        let f = profile(a);
        let gm = ops.apply_gamma(&f, &f);
        let n = g.dot_v(&f, &f);
        for e in &ops.basis.e {
            prop_assert!(g.dot_v(&gm, e).abs() <= 1e-10 * n);
        }
    }

    #[test]
    fn gamma_is_linear_in_each_slot(a in any::<u64>(), b in any::<u64>(), s in -3.0f64..3.0) {
        let ops = ops();
        let (f, h) = (profile(a), profile(b));
        let sf: Vec<f64> = f.iter().map(|x| s * x).collect();
        let base = ops.apply_gamma(&h, &f);
        let scale = max_abs(&base).max(1e-300);
        let left = ops.apply_gamma(&sf, &h);
        let right = ops.apply_gamma(&h, &sf);
        let ref_left = ops.apply_gamma(&f, &h);
        let tol = 1e-12 * (1.0 + s.abs());
        prop_assert!(left.iter().zip(&ref_left).all(|(x, y)| (x - s * y).abs() <= tol * max_abs(&ref_left).max(1e-300)));
        prop_assert!(right.iter().zip(&base).all(|(x, y)| (x - s * y).abs() <= tol * scale));
    }

    #[test]
    fn specular_map_commutes_on_curved_walls(y1 in -0.4f64..0.4, y2 in -0.4f64..0.4, w in prop::array::uniform3(-3.0f64..3.0), pa in -1.0f64..1.0) {
        for chart in [Chart::Paraboloid { a: pa, b: 0.5 }, Chart::SphereCap { radius: 1.5 }] {
            prop_assert!(specular_commute_residual(&chart, y1, y2, &w) <= 1e-12);
        }
    }

    #[test]
    fn chart_derivatives_match_finite_differences(y1 in -0.5f64..0.5, y2 in -0.5f64..0.5) {
        let charts = [
            Chart::Paraboloid { a: 0.7, b: -0.3 },
            Chart::SphereCap { radius: 2.0 },
            Chart::Polynomial { coefficients: vec![[2.0, 1.0, 0.4], [0.0, 3.0, -0.2]] },
        ];
        let h = 1e-5;
        for chart in &charts {
            let d = chart.derivs(y1, y2);
            let px = chart.derivs(y1 + h, y2);
            let mx = chart.derivs(y1 - h, y2);
            let py = chart.derivs(y1, y2 + h);
            let my = chart.derivs(y1, y2 - h);
            let fd = |p: f64, m: f64| (p - m) / (2.0 * h);
            for (got, want) in [
                (d.r1, fd(px.r, mx.r)),
                (d.r2, fd(py.r, my.r)),
                (d.r11, fd(px.r1, mx.r1)),
                (d.r12, fd(py.r1, my.r1)),
                (d.r22, fd(py.r2, my.r2)),
                (d.r111, fd(px.r11, mx.r11)),
                (d.r112, fd(py.r11, my.r11)),
                (d.r122, fd(px.r22, mx.r22)),
                (d.r222, fd(py.r22, my.r22)),
            ] {
                prop_assert!((got - want).abs() <= 1e-7 * (1.0 + want.abs()), "{chart:?}: {got} vs {want}");
            }
        }
    }
}
