use std::sync::{Arc, OnceLock};

use num_complex::Complex64 as C64;
use proptest::prelude::*;

use relkin::analysis::{basic_decay_integral, calc_inequality_check, fit_decay_exponent, FitWindow};
use relkin::discretization::{build_grid, AngularRule};
use relkin::harness::format_g17;
use relkin::kernel_ops::{assemble_operator_matrices, AssemblyOptions, KernelModel, OperatorMatrices};
use relkin::kinematics::{post_collision, relative_invariants, Momentum3};
use relkin::mode_dynamics::{ModeState, RateSpec};
use relkin::nonlinear_dynamics::{NonlinearOperator, SlabField};
use relkin::semigroup_vidav::apply_g;

fn small() -> &'static (OperatorMatrices, NonlinearOperator) {
    static M: OnceLock<(OperatorMatrices, NonlinearOperator)> = OnceLock::new();
    M.get_or_init(|| {
        let grid = Arc::new(build_grid(4.0, 5).unwrap());
        let m = assemble_operator_matrices(
            &KernelModel::soft(1.0, 0.0).unwrap(),
            grid,
            AngularRule::new(4, 8, 0.0).unwrap(),
            AssemblyOptions { max_defect: 0.5, ..Default::default() },
        )
        .unwrap();
        let nl = NonlinearOperator::new(&m).unwrap();
        (m, nl)
    })
}

fn vec3(r: f64) -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(-r..r)
}

fn unit() -> impl Strategy<Value = [f64; 3]> {
    vec3(1.0).prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-4).prop_map(|v| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        [v[0] / n, v[1] / n, v[2] / n]
    })
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn collisions_conserve_and_preserve_g(p in vec3(30.0), q in vec3(30.0), w in unit()) {
        let (p, q) = (Momentum3::new(p).unwrap(), Momentum3::new(q).unwrap());
        let c = post_collision(&p, &q, w).unwrap();
        let e = p.energy() + q.energy();
        for i in 0..3 {
            let d = c.p_out.components()[i] + c.q_out.components()[i] - p.components()[i] - q.components()[i];
            prop_assert!(d.abs() <= 1e-12 * e);
        }
        prop_assert!((c.p_out.energy() + c.q_out.energy() - e).abs() <= 1e-12 * e);
        let g0 = relative_invariants(&p, &q).unwrap();
        let g1 = relative_invariants(&c.p_out, &c.q_out).unwrap();
        prop_assert!((g1.g - g0.g).abs() <= 1e-10 * g0.g.max(1.0));
        prop_assert!((g1.s - g0.s).abs() <= 1e-10 * g0.s);
        prop_assert!((-1.0..=1.0).contains(&c.cos_theta));
    }

    #[test]
    fn decay_fit_ignores_amplitude(c in 1e-6f64..1e6, a in 0.0f64..4.0) {
        let s: Vec<(f64, f64)> = (0..50).map(|i| {
            let t = 10.0 + 2.0 * i as f64;
            (t, c * (1.0 + t).powf(-a))
        }).collect();
        let f = fit_decay_exponent(&s, FitWindow::new(10.0, 120.0).unwrap()).unwrap();
        prop_assert!((f.exponent - a).abs() < 1e-9);
    }

    #[test]
    fn basic_decay_integral_is_symmetric(l in 0.0f64..4.0, mu in 0.0f64..4.0, t in 0.1f64..50.0) {
        // s ↦ t − s swaps the two exponents.
        let (a, b) = (basic_decay_integral(l, mu, t), basic_decay_integral(mu, l, t));
        prop_assert!((a - b).abs() <= 1e-10 * a);
        prop_assert!(a <= t);
    }

    #[test]
    fn elementary_bound_dominates_samples(a in 0.01f64..20.0, k in 0.0f64..6.0) {
        prop_assert!(calc_inequality_check(a, k, 100.0).unwrap().violation <= 1e-12);
    }

    #[test]
    fn sigma_is_affine_in_m(r in 1.0f64..2.0, m in 0.0f64..3.0) {
        let s0 = RateSpec::new(r, 0.0).unwrap().sigma_rm;
        let s = RateSpec::new(r, m).unwrap().sigma_rm;
        prop_assert!((s - s0 - m / 2.0).abs() < 1e-14);
    }

    #[test]
    fn g17_round_trips(x in prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO) {
        let s = format_g17(x);
        prop_assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{}", s);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn semigroup_law(k in vec3(2.0), t in 0.0f64..2.0, s in 0.0f64..2.0, seed in any::<u64>()) {
        let (m, _) = small();
        let grid = m.grid();
        let mut x = seed | 1;
        let mut next = || { x ^= x << 13; x ^= x >> 7; x ^= x << 17; (x >> 11) as f64 / (1u64 << 53) as f64 - 0.5 };
        let v: Vec<C64> = grid.sqrt_maxwellian().iter().map(|s| C64::new(next(), next()) * *s).collect();
        let st = ModeState::new(k, v).unwrap();
        let a = apply_g(m, &apply_g(m, &st, s).unwrap(), t).unwrap();
        let b = apply_g(m, &st, t + s).unwrap();
        let scale = grid.norm_sq(&st.values).sqrt();
        let d: Vec<C64> = a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect();
        prop_assert!(grid.norm_sq(&d).sqrt() <= 1e-10 * scale);
        prop_assert!(grid.norm_sq(&b.values) <= grid.norm_sq(&st.values) * (1.0 + 1e-12));
    }

    #[test]
    fn collision_preserves_hermitian_symmetry(c in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 3)) {
        let (m, nl) = small();
        let sj = m.grid().sqrt_maxwellian();
        let half: Vec<Vec<C64>> = c.iter().enumerate().map(|(n, &(re, im))| {
            sj.iter().map(|s| C64::new(re * s, if n == 0 { 0.0 } else { im * s })).collect()
        }).collect();
        let f = SlabField::from_nonnegative(0.5, half).unwrap();
        let g = nl.gamma_hat(&f);
        let scale = g.values.iter().flatten().map(|z| z.norm()).fold(0.0, f64::max).max(1e-300);
        prop_assert!(g.hermitian_defect() <= 1e-12 * scale);
    }
}
