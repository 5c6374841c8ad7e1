use fairfed::environment::ContextSet;
use fairfed::fairness::MeritFn;
use fairfed::numkit::{SymMat, Vector};
use fairfed::optimizer::{gradient, objective, optimistic_theta, project, Ellipsoid, PgdConfig};
use fairfed::rng::{stream, Purpose};
use nalgebra::DMatrix;
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct Case {
    ellipsoid: Ellipsoid,
    ctx: ContextSet,
    c_f: f64,
}

fn case_strategy() -> impl Strategy<Value = Case> {
    (1usize..6, 1usize..8).prop_flat_map(|(d, k)| {
        (
            prop::collection::vec(-1.0f64..1.0, d * d),
            prop::collection::vec(-0.5f64..0.5, d),
            0.0f64..2.0,
            prop::collection::vec(prop::collection::vec(0.0f64..1.0, d), k),
            0.5f64..10.0,
        )
            .prop_map(move |(a, c, r, arms, c_f)| {
                let a = DMatrix::from_row_slice(d, d, &a);
                let m = &a * a.transpose();
                let mut metric = SymMat::from_matrix((&m + m.transpose()) * 0.5).unwrap();
                metric.add_diagonal(0.5);
                let arms = arms
                    .into_iter()
                    .map(|x| {
                        let x = Vector::from_vec(x);
                        let n = x.norm().max(1.0);
                        x / n
                    })
                    .collect();
                Case {
                    ellipsoid: Ellipsoid::new(Vector::from_vec(c), metric, r).unwrap(),
                    ctx: ContextSet::new(1, 1, arms),
                    c_f,
                }
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn returns_feasible_point_no_worse_than_center(case in case_strategy(), seed in any::<u64>()) {
        let f = MeritFn::exponential(case.c_f, -10.0, 10.0).unwrap();
        let mut rng = stream(seed, Purpose::Optimizer, 1, 1);
        let out = optimistic_theta(&case.ellipsoid, &case.ctx, &f, &PgdConfig::default(), &mut rng, None);
        prop_assert!(case.ellipsoid.contains(&out.theta));
        let center = objective(case.ellipsoid.center(), &case.ctx, &f);
        prop_assert!(out.value >= center - 1e-12);
        prop_assert!((objective(&out.theta, &case.ctx, &f) - out.value).abs() <= 1e-12 * (1.0 + out.value.abs()));
    }

    #[test]
    fn same_stream_same_answer(case in case_strategy(), seed in any::<u64>()) {
        let f = MeritFn::exponential(case.c_f, -10.0, 10.0).unwrap();
        let cfg = PgdConfig::default();
        let a = optimistic_theta(&case.ellipsoid, &case.ctx, &f, &cfg, &mut stream(seed, Purpose::Optimizer, 2, 3), None);
        let b = optimistic_theta(&case.ellipsoid, &case.ctx, &f, &cfg, &mut stream(seed, Purpose::Optimizer, 2, 3), None);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn warm_start_never_hurts_feasibility(case in case_strategy(), seed in any::<u64>()) {
        let f = MeritFn::exponential(case.c_f, -10.0, 10.0).unwrap();
        let d = case.ellipsoid.center().len();
        let warm = Vector::from_element(d, 5.0);
        let mut rng = stream(seed, Purpose::Optimizer, 1, 1);
        let out = optimistic_theta(&case.ellipsoid, &case.ctx, &f, &PgdConfig::default(), &mut rng, Some(&warm));
        prop_assert!(case.ellipsoid.contains(&out.theta));
    }

    #[test]
    fn gradient_matches_central_differences(case in case_strategy(), shift in -1.0f64..1.0) {
        let f = MeritFn::exponential(case.c_f, -10.0, 10.0).unwrap();
        let theta = case.ellipsoid.center().add_scalar(shift);
        let g = gradient(&theta, &case.ctx, &f);
        let h = 1e-5;
        for i in 0..theta.len() {
            let mut up = theta.clone();
            up[i] += h;
            let mut down = theta.clone();
            down[i] -= h;
            let fd = (objective(&up, &case.ctx, &f) - objective(&down, &case.ctx, &f)) / (2.0 * h);
            prop_assert!((fd - g[i]).abs() <= 1e-5, "coordinate {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn projection_is_idempotent_and_feasible(case in case_strategy(), p in prop::collection::vec(-10.0f64..10.0, 5)) {
        let d = case.ellipsoid.center().len();
        let theta = Vector::from_fn(d, |i, _| p[i]);
        let once = project(&theta, &case.ellipsoid);
        prop_assert!(case.ellipsoid.contains(&once));
        prop_assert_eq!(project(&once, &case.ellipsoid), once);
    }
}
