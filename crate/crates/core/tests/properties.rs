use critical_ls::bubble::{bubble_value, projected_bubble, Bubble};
use critical_ls::coupling::{sync_profile, CouplingModel};
use critical_ls::domain::DomainModel;
use critical_ls::operator::{AnsatzState, Assembly, BasisParams, GalerkinBasis};
use critical_ls::point::{self, Point};
use critical_ls::verification::slope_regression;
use critical_ls::coupling::all_profiles;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use std::sync::OnceLock;

fn interior_point(r: f64) -> impl Strategy<Value = Point> {
    prop::array::uniform4(-1.0f64..1.0).prop_map(move |v| {
        let n = point::norm2(&v).sqrt().max(1e-12);
        let t = r * (n / 2.0).min(1.0);
        point::scale(&v, t / n)
    })
}

fn three_component() -> impl Strategy<Value = DMatrix<f64>> {
    (prop::array::uniform3(1.0f64..3.0), prop::array::uniform3(0.0f64..0.4)).prop_map(|(mu, off)| {
        let mut b = DMatrix::from_diagonal(&DVector::from_row_slice(&mu));
        for (k, (i, j)) in [(0, 1), (0, 2), (1, 2)].into_iter().enumerate() {
            b[(i, j)] = off[k];
            b[(j, i)] = off[k];
        }
        b
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn coupling_relabelling_permutes_coefficients(beta in three_component(), perm in Just([0usize, 1, 2]).prop_shuffle()) {
        let m = CouplingModel::new(beta.clone(), vec![0, 3]).unwrap();
        let p = sync_profile(&m, 0);
        prop_assume!(p.is_ok());
        let p = p.unwrap();
        let pb = DMatrix::from_fn(3, 3, |i, j| beta[(perm[i], perm[j])]);
        let q = sync_profile(&CouplingModel::new(pb, vec![0, 3]).unwrap(), 0).unwrap();
        for i in 0..3 {
            prop_assert!((q.c[i] - p.c[perm[i]]).abs() < 1e-12);
            prop_assert!((q.e[i] - p.e[perm[i]]).abs() < 1e-10);
        }
    }

    #[test]
    fn coupling_scaling_rescales_coefficients(beta in three_component(), t in 0.1f64..10.0) {
        let m = CouplingModel::new(beta.clone(), vec![0, 3]).unwrap();
        let p = sync_profile(&m, 0);
        prop_assume!(p.is_ok());
        let p = p.unwrap();
        let q = sync_profile(&CouplingModel::new(beta * t, vec![0, 3]).unwrap(), 0).unwrap();
        for i in 0..3 {
            prop_assert!((q.c[i] * t.sqrt() - p.c[i]).abs() < 1e-11);
            prop_assert!((q.e[i] - p.e[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn bubble_scale_covariance(delta in 1e-4f64..10.0, xi in interior_point(1.0), x in interior_point(2.0)) {
        let u = bubble_value(&Bubble::new(delta, xi).unwrap(), &x);
        let y = point::scale(&point::sub(&x, &xi), 1.0 / delta);
        let u1 = bubble_value(&Bubble::unit(), &y) / delta;
        prop_assert!((u - u1).abs() <= 1e-12 * u.abs());
    }

    #[test]
    fn projected_bubble_between_zero_and_bubble(delta in 1e-3f64..0.1, xi in interior_point(0.5), x in interior_point(0.99)) {
        let dom = DomainModel::unit_ball();
        let b = Bubble::new(delta, xi).unwrap();
        let pu = projected_bubble(&b, &dom, &x, 1).unwrap();
        prop_assert!(pu >= 0.0 && pu <= bubble_value(&b, &x));
    }

    #[test]
    fn regular_part_symmetric_ball(x in interior_point(0.9), y in interior_point(0.9)) {
        let dom = DomainModel::unit_ball();
        let a = dom.regular_part(&x, &y).unwrap();
        let b = dom.regular_part(&y, &x).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1e-3));
    }

    #[test]
    fn regular_part_symmetric_box(x in prop::array::uniform4(0.1f64..1.9), y in prop::array::uniform4(0.1f64..1.9)) {
        let dom = DomainModel::cuboid([0.0; 4], [2.0, 2.0, 1.5, 2.5]).unwrap();
        prop_assume!(dom.contains(&x) && dom.contains(&y));
        let a = dom.regular_part(&x, &y).unwrap();
        let b = dom.regular_part(&y, &x).unwrap();
        prop_assert!((a - b).abs() <= 1e-8 * a.abs().max(1e-3));
    }

    #[test]
    fn power_law_slope_recovered(c in 0.01f64..100.0, p in -3.0f64..3.0) {
        let pts: Vec<(f64, f64)> = (0..5).map(|k| {
            let x = 0.5f64.powi(k);
            (x, c * x.powf(p))
        }).collect();
        let s = slope_regression(&pts).unwrap();
        prop_assert!((s.p - p).abs() < 1e-10);
    }
}

fn basis() -> &'static (Assembly, GalerkinBasis) {
    static B: OnceLock<(Assembly, GalerkinBasis)> = OnceLock::new();
    B.get_or_init(|| {
        let c = CouplingModel::new(DMatrix::from_element(1, 1, 1.0), vec![0, 1]).unwrap();
        let p = all_profiles(&c).unwrap();
        let dom = DomainModel::unit_ball().with_eta(1e-3).unwrap();
        let s = AnsatzState::from_deltas(vec![1e-2], vec![1e-2], vec![[0.1, 0.0, 0.0, 0.0]], &c, &dom).unwrap();
        let bp = BasisParams { j_scales: 2, j_harm: 1, ..Default::default() };
        let asm = Assembly::new(&s, &c, &p, &dom, &bp).unwrap();
        let b = GalerkinBasis::new(&asm, &bp).unwrap();
        (asm, b)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn orthogonal_projection_identities(seed in prop::collection::vec(-1.0f64..1.0, 64)) {
        let (asm, b) = basis();
        let ns = asm.ns();
        let v = DVector::from_fn(ns, |i, _| seed[i % seed.len()] * (1.0 + i as f64 / ns as f64));
        let pv = b.project_k_perp(&v);
        let kv = b.project_k(&v);
        prop_assert!((&kv + &pv - &v).norm() <= 1e-14 * v.norm());
        prop_assert!((b.project_k_perp(&pv) - &pv).norm() <= 1e-10 * v.norm());
        for a in 0..asm.n_kernel {
            let mut e = DVector::zeros(ns);
            e[a] = 1.0;
            prop_assert!(b.inner(&pv, &e).abs() <= 1e-10 * v.norm());
        }
        // kernel-block vectors are annihilated
        let mut k = DVector::zeros(ns);
        for a in 0..asm.n_kernel {
            k[a] = seed[a];
        }
        prop_assert!(b.project_k_perp(&k).norm() <= 1e-12 * k.norm().max(1.0));
    }
}
