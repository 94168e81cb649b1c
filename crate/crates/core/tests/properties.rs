use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use snde_core::autodiff::{jacobian, loss_gradient, Real, Tape, Var};
use snde_core::evaluation::{hellinger_weights, occupation_measure, stable_time, GridSpec};
use snde_core::neural::{assemble_field, layer_shapes, FieldSpec, Mlp};
use snde_core::ode::{integrate, Solver, Trajectory, VectorField};
use snde_core::stabilization::{
    pseudo_inverse, ConstraintKind, ConstraintManifold, PseudoInverse, StabilizationMatrix, StabilizedField,
};
use snde_core::systems::{sample_times, ModelKind, System};
use snde_core::training::{adamw_step, chunk_and_split, generate_dataset, lr_at_epoch, AdamState};
use snde_core::Result;

struct Zero(usize);

impl<S: Real> VectorField<S> for Zero {
    fn dim(&self) -> usize {
        self.0
    }
    fn eval(&self, _t: f64, _u: &[S]) -> Result<Vec<S>> {
        Ok(vec![S::zero(); self.0])
    }
}

fn system() -> impl Strategy<Value = System> {
    prop::sample::select(System::ALL.to_vec())
}

fn learned(sys: System, kind: ModelKind, seed: u64) -> FieldSpec {
    let probe = FieldSpec::learned(sys, kind, Mlp::zeros(vec![(1, 1)]).unwrap());
    let (i, o) = probe.net_io().unwrap();
    FieldSpec::learned(sys, kind, Mlp::init(layer_shapes(i, 8, 2, o), seed).unwrap())
}

fn model_for(sys: System) -> ModelKind {
    match sys {
        System::TwoBody => ModelKind::SoNode,
        _ => ModelKind::Node,
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stabilization_vanishes_on_the_manifold(sys in system(), seed in any::<u64>(), gamma in 0.0f64..64.0) {
        let u0 = sys.sample_initial_state(&mut ChaCha8Rng::seed_from_u64(seed));
        let m = Arc::new(sys.manifold(&u0).unwrap());
        let base = assemble_field(&learned(sys, model_for(sys), seed)).unwrap();
        let f: Vec<f64> = base.eval(0.3, &u0).unwrap();
        let s: Vec<f64> = StabilizedField::new(base, m, gamma).unwrap().eval(0.3, &u0).unwrap();
        let d: Vec<f64> = f.iter().zip(&s).map(|(a, b)| a - b).collect();
        prop_assert!(norm(&d) <= 1e-12 * norm(&f).max(1e-300));
    }

    #[test]
    fn jacobian_times_pseudo_inverse_is_identity(
        m in 1usize..4,
        extra in 1usize..4,
        entries in prop::collection::vec(-2.0f64..2.0, 24),
        g in prop::collection::vec(-1.0f64..1.0, 3),
    ) {
        let n = m + extra;
        let jac: Vec<Vec<f64>> = (0..m).map(|i| entries[i * n..(i + 1) * n].to_vec()).collect();
        let gram: Vec<Vec<f64>> = (0..m)
            .map(|i| (0..m).map(|k| (0..n).map(|j| jac[i][j] * jac[k][j]).sum()).collect())
            .collect();
        prop_assume!(snde_core::stabilization::condition_number(&gram) < 1e6);
        let pinv = pseudo_inverse(&jac);
        for i in 0..m {
            for k in 0..m {
                let gp: f64 = (0..n).map(|j| jac[i][j] * pinv[j][k]).sum();
                let want = if i == k { 1.0 } else { 0.0 };
                prop_assert!((gp - want).abs() <= 1e-10, "GG⁺[{i}][{k}] = {gp}");
            }
        }
        // the Cholesky route solves the same system
        let y = PseudoInverse.apply(&jac, &g[..m]).unwrap();
        for i in 0..m {
            let gy: f64 = (0..n).map(|j| jac[i][j] * y[j]).sum();
            prop_assert!((gy - g[i]).abs() <= 1e-10 * (1.0 + g[i].abs()));
        }
    }

    #[test]
    fn affine_constraints_decay_exponentially(
        a in prop::collection::vec(-1.0f64..1.0, 3),
        u0 in prop::collection::vec(-2.0f64..2.0, 3),
        gamma in 0.5f64..16.0,
    ) {
        prop_assume!(norm(&a) > 0.1);
        let m = Arc::new(ConstraintManifold::new(ConstraintKind::Affine(vec![a]), 3, vec![0.0], None).unwrap());
        let g0 = m.residual(&u0)[0];
        prop_assume!(g0.abs() > 1e-3);
        let field = StabilizedField::new(Zero(3), m.clone(), gamma).unwrap();
        let times = [0.0, 0.1, 0.25, 0.5];
        let (tr, _) = integrate(&field, &u0, 0.0, &times, &Solver::tsit5(1e-12, 1e-12)).unwrap();
        for (i, &t) in times.iter().enumerate() {
            let g = m.residual(tr.state(i))[0];
            let want = g0 * (-gamma * t).exp();
            prop_assert!((g - want).abs() <= 1e-6 * g0.abs(), "t={t}: {g} vs {want}");
        }
    }

    #[test]
    fn circle_residual_is_monotone_in_time_and_gamma(
        u0 in prop::collection::vec(-2.0f64..2.0, 2),
        gamma in 0.5f64..8.0,
    ) {
        prop_assume!(norm(&u0) > 0.2);
        let m = Arc::new(
            ConstraintManifold::new(ConstraintKind::SquaredNorm { scale: 1.0 }, 2, vec![1.0], None).unwrap(),
        );
        let times = sample_times(0.05, 1.0);
        let solver = Solver::tsit5(1e-10, 1e-10);
        let run = |g: f64| {
            let (tr, _) = integrate(&StabilizedField::new(Zero(2), m.clone(), g).unwrap(), &u0, 0.0, &times, &solver)
                .unwrap();
            tr.states().map(|u| m.residual(u)[0].abs()).collect::<Vec<_>>()
        };
        let slow = run(gamma);
        let fast = run(2.0 * gamma);
        for w in slow.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-6);
        }
        for (s, f) in slow.iter().zip(&fast).skip(1) {
            prop_assert!(*f <= *s + 1e-9);
        }
    }

    #[test]
    fn second_order_lift_copies_velocities(sys in prop::sample::select(vec![System::TwoBody, System::DoublePendulum]), seed in any::<u64>(), t in 0.0f64..10.0) {
        let u = sys.sample_initial_state(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let field = assemble_field(&learned(sys, ModelKind::SoNode, seed)).unwrap();
        let du: Vec<f64> = field.eval(t, &u).unwrap();
        let k = u.len() / 2;
        prop_assert_eq!(&du[..k], &u[k..]);
    }

    #[test]
    fn hybrid_known_component_ignores_the_network(s1 in any::<u64>(), s2 in any::<u64>(), seed in any::<u64>()) {
        let sys = System::DoublePendulum;
        let u = sys.sample_initial_state(&mut ChaCha8Rng::seed_from_u64(seed));
        let a: Vec<f64> = assemble_field(&learned(sys, ModelKind::Hybrid, s1)).unwrap().eval(0.0, &u).unwrap();
        let b: Vec<f64> = assemble_field(&learned(sys, ModelKind::Hybrid, s2)).unwrap().eval(0.0, &u).unwrap();
        prop_assert_eq!(&a[..3], &b[..3]);
        let truth: Vec<f64> = sys.truth().eval(0.0, &u).unwrap();
        prop_assert_eq!(a[2], truth[2]);
    }

    #[test]
    fn output_times_are_hit_exactly_and_deterministically(
        mut ts in prop::collection::vec(0.0f64..5.0, 1..12),
        tol in prop::sample::select(vec![1e-3, 1e-6, 1e-9]),
    ) {
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        let mut times = vec![0.0];
        times.extend(ts.into_iter().filter(|&t| t > 0.0));
        let sys = System::RigidBody;
        let u0 = sys.sample_initial_state(&mut ChaCha8Rng::seed_from_u64(3));
        let solver = Solver::tsit5(tol, tol);
        let a = integrate(&sys.truth(), &u0, 0.0, &times, &solver).unwrap();
        let b = integrate(&sys.truth(), &u0, 0.0, &times, &solver).unwrap();
        prop_assert_eq!(a.0.times(), &times[..]);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn forward_jacobian_matches_reverse_gradient(x in prop::collection::vec(-2.0f64..2.0, 5)) {
        fn f<S: Real>(x: &[S]) -> S {
            let mut acc = (x[0] * x[0] + 1.0).sqrt();
            for w in x.windows(2) {
                acc = acc + w[0].sin() * w[1] + w[1].cos().relu();
            }
            acc
        }
        let jac = jacobian(|d| vec![f(d)], &x).unwrap();
        let (_, grad) = loss_gradient(|t: &Tape| -> Result<Var<'_>> { Ok(f(&t.params())) }, &x).unwrap();
        let (_, again) = loss_gradient(|t: &Tape| -> Result<Var<'_>> { Ok(f(&t.params())) }, &x).unwrap();
        prop_assert_eq!(&grad, &again);
        for (a, b) in jac[0].iter().zip(&grad) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0));
        }
    }

    #[test]
    fn sampled_states_lie_on_their_manifold(sys in system(), seed in any::<u64>()) {
        let a = sys.sample_initial_state(&mut ChaCha8Rng::seed_from_u64(seed));
        let b = sys.sample_initial_state(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(&a, &b);
        let m = sys.manifold(&a).unwrap();
        prop_assert!(m.residual(&a).iter().all(|g| *g == 0.0));
    }

    #[test]
    fn hellinger_is_a_bounded_metric(
        raw in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 6), 3),
    ) {
        let w: Vec<Vec<f64>> = raw
            .iter()
            .map(|r| {
                let s: f64 = r.iter().sum::<f64>() + 1e-3;
                r.iter().map(|x| (x + 1e-3 / 6.0) / s).collect()
            })
            .collect();
        let h = |a: usize, b: usize| hellinger_weights(&w[a], &w[b]).unwrap();
        prop_assert_eq!(h(0, 0), 0.0);
        prop_assert_eq!(h(0, 1), h(1, 0));
        prop_assert!((0.0..=1.0).contains(&h(0, 1)));
        prop_assert!(h(0, 2) <= h(0, 1) + h(1, 2) + 1e-12);
        if w[0] != w[1] {
            prop_assert!(h(0, 1) > 0.0);
        }
    }

    #[test]
    fn histograms_are_normalized(rows in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 4), 2..60), bins in 1usize..8) {
        let times: Vec<f64> = (0..rows.len()).map(|i| i as f64).collect();
        let tr = Trajectory::from_rows(times, &rows).unwrap();
        let angular = [true, true, false, false];
        let grid = GridSpec::from_envelope(&[&tr], bins, &angular, 0.1).unwrap();
        let h = occupation_measure(&tr, &grid, 0.0).unwrap();
        prop_assert!((h.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert_eq!(h.weights.len(), grid.n_boxes());
    }

    #[test]
    fn stable_time_grows_with_threshold(errors in prop::collection::vec(0.0f64..2e3, 1..40), a in 1.0f64..2e3, b in 1.0f64..2e3) {
        let times: Vec<f64> = (0..errors.len()).map(|i| 0.1 * i as f64).collect();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(stable_time(&errors, &times, lo) <= stable_time(&errors, &times, hi));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn chunks_partition_each_trajectory(n in 1usize..4, len in 2usize..6, seed in any::<u64>(), ratio in 0.2f64..0.9) {
        let set = generate_dataset(System::DcConverter, n, seed, Some(3.0)).unwrap();
        let data = chunk_and_split(&set, len, ratio, seed).unwrap();
        let mut seen = std::collections::HashSet::new();
        for c in &data.chunks {
            let tr = &set.trajectories[c.traj];
            prop_assert_eq!(c.times.len(), len);
            for (k, t) in c.times.iter().enumerate() {
                prop_assert_eq!(*t, tr.times()[c.start + k]);
                prop_assert_eq!(&c.states[k][..], tr.state(c.start + k));
                prop_assert!(seen.insert((c.traj, c.start + k)), "point reused");
            }
        }
        let mut all: Vec<usize> = data.train.iter().chain(&data.validation).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..data.chunks.len()).collect::<Vec<_>>());
    }

    #[test]
    fn schedule_decreases_between_exact_endpoints(epochs in 2usize..2000, hi in 1e-4f64..1e-2, ratio in 1e-3f64..0.9) {
        let lo = hi * ratio;
        prop_assert_eq!(lr_at_epoch(0, epochs, hi, lo), hi);
        prop_assert_eq!(lr_at_epoch(epochs - 1, epochs, hi, lo), lo);
        let k = epochs / 2;
        if k > 0 && k + 1 < epochs {
            prop_assert!(lr_at_epoch(k, epochs, hi, lo) < lr_at_epoch(k - 1, epochs, hi, lo));
        }
    }

    #[test]
    fn adamw_descends_a_convex_quadratic(x in prop::collection::vec(-3.0f64..3.0, 1..6)) {
        prop_assume!(norm(&x) > 1e-2);
        let loss = |p: &[f64]| p.iter().map(|v| v * v).sum::<f64>();
        let mut p = x.clone();
        let mut st = AdamState::new(p.len());
        let grad: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        for _ in 0..2 {
            adamw_step(&mut p, &grad, &mut st, 1e-3, 0.0).unwrap();
        }
        prop_assert!(loss(&p) < loss(&x));
    }
}
