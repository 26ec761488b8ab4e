use gripforge_core::cmaes::{minimize, Budget, CmaState, StopReason};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sphere(x: &DVector<f64>) -> f64 {
    x.norm_squared()
}

fn rosenbrock(x: &DVector<f64>) -> f64 {
    (0..x.len() - 1)
        .map(|i| 100.0 * (x[i + 1] - x[i] * x[i]).powi(2) + (1.0 - x[i]).powi(2))
        .sum()
}

fn start(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

#[test]
fn sphere_10d_all_seeds() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = start(&mut rng, 10, -3.0, 3.0);
        let state = CmaState::new(x0, 1.0).unwrap();
        let budget = Budget::evaluations(4000).with_target(1e-10);
        let (out, _) = minimize(state, sphere, &budget, &[], &mut rng, None).unwrap();
        assert!(
            out.best_fitness < 1e-10,
            "seed {seed}: {} after {} evals",
            out.best_fitness,
            out.evaluations
        );
        assert!(out.evaluations <= 4000);
    }
}

#[test]
fn rosenbrock_5d_most_seeds() {
    let mut solved = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let x0 = start(&mut rng, 5, -2.0, 2.0);
        let state = CmaState::new(x0, 0.5).unwrap();
        let budget = Budget::evaluations(30000).with_target(1e-6);
        let (out, _) = minimize(state, rosenbrock, &budget, &[], &mut rng, None).unwrap();
        if out.best_fitness < 1e-6 {
            solved += 1;
        }
    }
    assert!(solved >= 18, "solved {solved}/20");
}

#[test]
fn rank_invariance_under_exp() {
    let run = |transform: fn(f64) -> f64| {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut state = CmaState::new(vec![0.8, -0.4, 0.3, 1.1], 0.4).unwrap();
        let mut history = Vec::new();
        for _ in 0..60 {
            let cands = state.ask(&mut rng);
            let f: Vec<f64> = cands.iter().map(|x| transform(rosenbrock(x) * 0.01)).collect();
            state.tell(&cands, &f).unwrap();
            history.push((state.mean.clone(), state.sigma, state.cov.clone()));
        }
        history
    };
    let a = run(|v| v);
    let b = run(f64::exp);
    assert_eq!(a, b);
}

#[test]
fn noisy_objective_keeps_state_valid() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut noise = ChaCha8Rng::seed_from_u64(6);
    let mut state = CmaState::new(vec![0.0; 3], 1.0).unwrap();
    for _ in 0..100_000 {
        let cands = state.ask(&mut rng);
        let f: Vec<f64> = cands
            .iter()
            .map(|x| {
                if noise.random_bool(0.01) {
                    f64::NAN
                } else {
                    x.norm_squared() + noise.random_range(-1.0..1.0)
                }
            })
            .collect();
        state.tell(&cands, &f).unwrap();
        assert!(state.is_finite(), "gen {} sigma {}", state.generation, state.sigma);
        assert!(state.sigma > 0.0);
    }
    let eig = state.cov.clone().symmetric_eigen();
    assert!(eig.eigenvalues.iter().all(|v| *v > 0.0));
    assert!((&state.cov - state.cov.transpose()).amax() < 1e-10);
}

#[test]
fn replay_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let state = CmaState::new(vec![1.0; 6], 0.3).unwrap();
        let (out, _) = minimize(state, rosenbrock, &Budget::evaluations(2000), &[], &mut rng, None).unwrap();
        (out.best_x, out.trace)
    };
    assert_eq!(run(), run());
}

#[test]
fn parallel_evaluation_matches_serial() {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let run = |pool: Option<&rayon::ThreadPool>| {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let state = CmaState::new(vec![-1.0; 5], 0.5).unwrap();
        let (out, _) = minimize(state, rosenbrock, &Budget::evaluations(1500), &[], &mut rng, pool).unwrap();
        (out.best_x, out.best_fitness, out.stop)
    };
    let serial = run(None);
    assert_eq!(serial, run(Some(&pool)));
    assert_eq!(serial.2, StopReason::MaxEvaluations);
}
