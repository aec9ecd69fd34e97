use maxent_games::game::{evaluate_cost, Vector};
use maxent_games::merge::{MergeConfig, MergeScenario, PX, PY, STATE_DIM};
use maxent_games::solver::{
    best_unilateral_improvement, iterative_lq_solve_with, LocalNashSolution, RationalityBeta, SolverOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn solve_modes(sc: &MergeScenario) -> Vec<LocalNashSolution> {
    let x0 = sc.initial_state();
    let beta = RationalityBeta::new(sc.config.beta).unwrap();
    sc.seed_modes(&x0)
        .iter()
        .map(|seed| iterative_lq_solve_with(&sc.game, &x0, seed, beta, &SolverOptions::default()).unwrap())
        .collect()
}

fn position(x: &Vector, i: usize) -> [f64; 2] {
    [x[i * STATE_DIM + PX], x[i * STATE_DIM + PY]]
}

#[test]
fn seeds_converge_to_both_orderings() {
    let sc = MergeScenario::new(MergeConfig::default()).unwrap();
    let modes = solve_modes(&sc);
    for (z, m) in modes.iter().enumerate() {
        assert!(m.diagnostics.converged, "mode {z}: {:?}", m.diagnostics);
        assert_eq!(sc.leader(&m.nominal.states), z);
    }
    // positions when the leader of mode 0 reaches the merge point
    let k = modes[0]
        .nominal
        .states
        .iter()
        .position(|x| sc.progress(x, 0) >= 0.0)
        .unwrap();
    let gap = (0..2)
        .map(|i| {
            let (a, b) = (position(&modes[0].nominal.states[k], i), position(&modes[1].nominal.states[k], i));
            (a[0] - b[0]).hypot(a[1] - b[1])
        })
        .fold(0.0, f64::max);
    assert!(gap > 0.5, "modes only {gap} m apart");
}

#[test]
fn converged_modes_are_local_nash() {
    let sc = MergeScenario::new(MergeConfig::default()).unwrap();
    let x0 = sc.initial_state();
    let steps = sc.game.horizon() - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for m in solve_modes(&sc) {
        let devs: Vec<(usize, Vec<Vector>)> = (0..20)
            .map(|k| {
                let mut d: Vec<Vector> = (0..steps)
                    .map(|_| Vector::from_fn(2, |_, _| rng.random_range(-1.0..1.0)))
                    .collect();
                let norm = d.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
                d.iter_mut().for_each(|v| *v *= 1e-3 / norm);
                (k % 2, d)
            })
            .collect();
        let gain = best_unilateral_improvement(&sc.game, &x0, &m, &devs).unwrap();
        assert!(gain <= 1e-6, "mode {}: unilateral gain {gain}", m.mode);
    }
}

#[test]
fn mirrored_lanes_give_mirrored_modes() {
    let sc = MergeScenario::new(MergeConfig::default()).unwrap();
    let modes = solve_modes(&sc);
    let cost = |m: &LocalNashSolution, i| evaluate_cost(&sc.game, &m.nominal, i).unwrap();
    let (a, b) = (cost(&modes[0], 0), cost(&modes[1], 1));
    assert!((a - b).abs() < 1e-4 * a.abs().max(1.0), "{a} vs {b}");
    let (c, d) = (cost(&modes[0], 1), cost(&modes[1], 0));
    assert!((c - d).abs() < 1e-4 * c.abs().max(1.0), "{c} vs {d}");
    // going first is cheaper than yielding
    assert!(a < c);
    for (x0, x1) in modes[0].nominal.states.iter().zip(&modes[1].nominal.states) {
        let (p, q) = (position(x0, 0), position(x1, 1));
        assert!((p[0] - q[0]).abs() < 1e-3 && (p[1] + q[1]).abs() < 1e-3);
    }
}

#[test]
fn shipped_scenario_file_is_the_default() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/merge.toml");
    let cfg = MergeConfig::load(std::path::Path::new(path)).unwrap();
    assert_eq!(cfg, MergeConfig::default());
}
