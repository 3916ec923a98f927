mod common;

use common::{four_state, random_normal_problem, TinyLp};
use handsoff::lti::{discretize_zoh, expm};
use handsoff::oracle_1d::{handsoff_control_1d, min_time_1d};
use handsoff::self_triggered::{disturbance_sample, run_episode_stream, stability_report};
use handsoff::signals::EPS_ZERO;
use handsoff::solver::{solve, SolveOptions, SolveStatus};
use handsoff::sparse_control::{minimum_time, sat_shrink, solve_l0_exact, solve_l1, solve_l1l2, MinTimeOptions};
use handsoff::transcription::transcribe;
use handsoff::{
    ControlSignal, Disturbance, FiniteHorizonProblem, LtiSystem, Objective, Plant, ScalarPlant, SelfTriggeredConfig,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn interior_point_matches_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..50 {
        let lp = TinyLp::random(&mut rng);
        let expected = lp.vertex_optimum().expect("constructed feasible");
        let res = solve(&lp.program(), &SolveOptions::default()).unwrap();
        assert_eq!(res.status, SolveStatus::Optimal, "case {case}");
        assert!(res.kkt.max() <= 1e-8, "case {case}: {:?}", res.kkt);
        assert!(
            (res.objective - expected).abs() <= 1e-7 * expected.abs().max(1.0),
            "case {case}: {} vs {expected}",
            res.objective
        );
    }
}

#[test]
fn uniform_noise_statistics() {
    let delta = 0.7;
    let model = Disturbance::UniformNoise { seed: 3 };
    let draws = 1_000_000u64;
    let n = 2;
    let mut sum = [0.0; 2];
    let mut max: f64 = 0.0;
    for cell in 0..draws / n as u64 {
        let d = disturbance_sample(&model, delta, 0.0, &[0.0; 2], cell, 5);
        for i in 0..n {
            sum[i] += d[i];
            max = max.max(d[i].abs());
        }
    }
    assert!(max <= delta);
    assert!(max > 0.99 * delta);
    let per = (draws / n as u64) as f64;
    let sigma = delta / 3f64.sqrt() / per.sqrt();
    for s in sum {
        assert!((s / per).abs() <= 3.0 * sigma, "mean {} sigma {sigma}", s / per);
    }
}

#[test]
fn noise_streams_are_independent() {
    let model = Disturbance::UniformNoise { seed: 3 };
    let a = disturbance_sample(&model, 1.0, 0.0, &[0.0], 17, 0);
    let b = disturbance_sample(&model, 1.0, 0.0, &[0.0], 17, 1);
    let again = disturbance_sample(&model, 1.0, 9.0, &[4.0], 17, 0);
    assert_ne!(a, b);
    assert_eq!(a, again);
}

#[test]
fn mixed_control_follows_saturated_shrinkage_of_costate() {
    let prob = four_state(200, Objective::L1L2);
    let sol = solve_l1l2(&prob).unwrap();
    let s = sol.switching_function.as_ref().expect("costate available");
    let (lam, theta) = (prob.lambda[0], prob.theta[0]);
    let mut checked = 0;
    for k in 0..prob.steps {
        let w = s[(0, k)];
        if (w.abs() - lam).abs() < 1e-3 || (w.abs() - lam - theta).abs() < 1e-3 {
            continue;
        }
        let expected = -sat_shrink(w / theta, lam, theta);
        let u = sol.u.samples()[(0, k)];
        assert!((u - expected).abs() <= 1e-4, "k = {k}: u = {u}, law = {expected}");
        checked += 1;
    }
    assert!(checked > prob.steps / 2);
}

#[test]
fn l1_objective_non_increasing_in_horizon() {
    for (a, x0) in [(-1.0, 1.0), (-2.0, -0.6), (-0.5, 2.0)] {
        let sys = LtiSystem::scalar(a, a).unwrap();
        let dt = 0.01;
        let mut last = f64::INFINITY;
        for i in 0..12 {
            let horizon = 2.5 + 0.25 * i as f64;
            let steps = (horizon / dt).round() as usize;
            let prob = FiniteHorizonProblem::new(sys.clone(), vec![x0], horizon, steps, Objective::L1);
            let value = solve_l1(&prob).unwrap().objective_value;
            assert!(value <= last + 1e-9, "a = {a}, T = {horizon}: {value} > {last}");
            last = value;
        }
    }
}

#[test]
fn grid_solution_matches_scalar_closed_form() {
    let steps = 400;
    for (a, x0, horizon) in [(-1.0, 1.0, 2.0), (-1.0, 0.3, 1.5), (-2.0, -2.0, 1.0), (1.0, 0.25, 1.0), (1.0, -0.6, 2.0)] {
        let plant = ScalarPlant::linear(a).unwrap();
        let exact = handsoff_control_1d(&plant, x0, horizon).unwrap();
        let prob = FiniteHorizonProblem::new(plant.linear_model(), vec![x0], horizon, steps, Objective::L1);
        let sol = solve_l1(&prob).unwrap();
        let dt = prob.dt();
        let support = sol.u.support_count(0, EPS_ZERO).unwrap() as f64 * dt;
        assert!(
            (support - exact.active_length()).abs() <= dt + 1e-9,
            "a = {a}, x0 = {x0}: grid {support}, exact {}",
            exact.active_length()
        );
        // Cells that lie entirely inside one closed-form segment carry its value.
        for k in 0..steps {
            let (t0, t1) = (k as f64 * dt, (k + 1) as f64 * dt);
            if (t0..=t1).contains(&exact.tau) {
                continue;
            }
            let u = sol.u.samples()[(0, k)];
            assert!((u - exact.value_at(t0 + 0.5 * dt)).abs() <= 1e-6, "a = {a}, k = {k}: {u}");
        }
    }
}

#[test]
fn closed_form_minimum_time_matches_bisection() {
    let opts = MinTimeOptions::default();
    for (a, xs) in [(-1.0, vec![0.1, 0.5, 1.0, 2.0]), (1.0, vec![0.1, 0.5, 0.9])] {
        let plant = ScalarPlant::linear(a).unwrap();
        for x in xs {
            let exact = min_time_1d(&plant, x).unwrap();
            let grid = minimum_time(&plant.linear_model(), &[x], &[0.0], &opts).unwrap();
            assert!(grid >= exact - 1e-9, "a = {a}, x = {x}: {grid} < {exact}");
            assert!(grid - exact <= opts.tol_t + 1.0 / opts.per_unit, "a = {a}, x = {x}: {grid} vs {exact}");
        }
    }
}

#[test]
fn exact_bang_off_bang_solutions_reach_minimal_support() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut checked = 0;
    let mut tries = 0;
    while checked < 40 && tries < 400 {
        tries += 1;
        let mut prob = random_normal_problem(&mut rng, 3, 2..=10, 1.0..4.0);
        // Start from a state that some ternary control steers to the origin.
        let disc = discretize_zoh(&prob.sys, prob.horizon, prob.steps).unwrap();
        let u = DMatrix::from_fn(1, prob.steps, |_, _| [-1.0, 0.0, 0.0, 1.0][rng.gen_range(0..4)]);
        let drift = disc.simulate(&DVector::zeros(prob.sys.n()), &u).unwrap();
        let phi = expm(&(prob.sys.a() * prob.horizon)).unwrap();
        let Some(x0) = phi.try_inverse().map(|p| -p * drift.column(prob.steps)) else { continue };
        prob.x0 = x0.iter().copied().collect();
        let Ok(l1) = solve_l1(&prob) else { continue };
        if l1.certificates.bang_off_bang_distance > 1e-6 {
            continue;
        }
        let l0 = solve_l0_exact(&prob, 1_000_000).unwrap();
        assert_eq!(l0.support_cardinality(), l1.support_cardinality(), "{prob:?}");
        checked += 1;
    }
    assert!(checked >= 20, "only {checked} ternary instances");
}

#[test]
fn decoded_control_reproduces_equality_residual() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for objective in [Objective::L1, Objective::L1L2, Objective::L2] {
        for _ in 0..5 {
            let prob = random_normal_problem(&mut rng, 3, 5..=40, 1.0..4.0).with_objective(objective);
            let tr = transcribe(&prob).unwrap();
            let res = solve(&tr.program, &SolveOptions::default()).unwrap();
            if res.status != SolveStatus::Optimal {
                continue;
            }
            let residual = tr.program.a_eq() * &res.x - tr.program.b_eq();
            let u = tr.decode(&res.x).unwrap();
            let x = tr.disc.simulate(&DVector::from_vec(prob.x0.clone()), u.samples()).unwrap();
            let terminal = x.column(prob.steps) - DVector::from_vec(prob.x_target.clone());
            assert!((terminal - residual).amax() <= 1e-9);
        }
    }
}

#[test]
fn encode_decode_roundtrip() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for objective in [Objective::L1, Objective::L2] {
        let prob = four_state(30, objective);
        let tr = transcribe(&prob).unwrap();
        let samples = DMatrix::from_fn(1, 30, |_, _| match rng.gen_range(0..4) {
            0 => 0.0,
            1 => 1.0,
            2 => -1.0,
            _ => rng.gen_range(-1.0..1.0),
        });
        let u = ControlSignal::new(samples, prob.dt()).unwrap();
        let back = tr.decode(&tr.encode(&u).unwrap()).unwrap();
        assert_eq!(back.samples(), u.samples());
    }
}

fn scalar_episode(r: f64, disturbance: Disturbance) -> SelfTriggeredConfig {
    let plant = Plant::Scalar(ScalarPlant::linear(-1.0).unwrap());
    SelfTriggeredConfig::new(plant, vec![1.0], r, 0.1, 1.0, 30.0).with_disturbance(disturbance)
}

#[test]
fn noisy_episodes_respect_bounds() {
    let cfg = scalar_episode(0.6, Disturbance::UniformNoise { seed: 9 });
    let report = stability_report(&cfg).unwrap();
    assert!(report.condition_ok);
    for stream in 0..10 {
        let log = run_episode_stream(&cfg, stream).unwrap();
        assert!(log.events.len() as f64 <= cfg.total_time / cfg.t_min + 1.0);
        for e in &log.events {
            assert!(e.horizon >= cfg.t_min);
        }
        for (_, x) in log.sampled_states().iter().skip(1) {
            assert!(x[0].abs() <= report.gamma + 1e-6);
        }
        for e in log.events.iter().skip(1) {
            assert!(e.sup_norm <= report.h + 1e-6);
        }
        let again = run_episode_stream(&cfg, stream).unwrap();
        assert_eq!(log, again);
    }
}

#[test]
fn multi_state_episode_is_deterministic() {
    let sys = LtiSystem::from_rows(&[vec![-1.0, 0.5], vec![-0.5, -1.0]], &[vec![1.0], vec![0.5]]).unwrap();
    let cfg = SelfTriggeredConfig::new(Plant::Lti(sys), vec![0.5, -0.5], 0.6, 0.2, 0.05, 4.0)
        .with_disturbance(Disturbance::UniformNoise { seed: 1 });
    let a = run_episode_stream(&cfg, 2).unwrap();
    let b = run_episode_stream(&cfg, 2).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.dense, b.dense);
    for e in &a.events {
        assert!(e.horizon >= cfg.t_min);
    }
}
