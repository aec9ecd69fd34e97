use maxent_games::merge::{MergeConfig, MergeScenario, ACCEL, CONTROL_DIM, STEER_RATE};
use maxent_games::sim::{
    run_episode, EpisodeConfig, EpisodeLog, Outcome, Perturbation, Rates, Scheduling, StrategyKind,
};

fn scenario() -> MergeScenario {
    MergeScenario::new(MergeConfig::default()).unwrap()
}

fn short(scheduling: Scheduling) -> EpisodeConfig {
    EpisodeConfig {
        ego: StrategyKind::Qmdp,
        other: StrategyKind::NoYield,
        seed: 3,
        steps: 30,
        scheduling,
        ..EpisodeConfig::default()
    }
}

fn clip(sc: &MergeScenario, u: &[f64]) -> Vec<f64> {
    u.iter()
        .enumerate()
        .map(|(k, v)| match k % CONTROL_DIM {
            STEER_RATE => v.clamp(-sc.config.steer_rate_max, sc.config.steer_rate_max),
            _ => v.clamp(-sc.config.accel_max, sc.config.accel_max),
        })
        .collect()
}

fn assert_simplex(log: &EpisodeLog) {
    for r in &log.rows {
        for b in r.beliefs.iter().chain(std::iter::once(&r.naive)) {
            assert!(b.iter().all(|p| (0.0..=1.0).contains(p)), "step {}: {b:?}", r.step);
            assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12, "step {}: {b:?}", r.step);
        }
    }
}

#[test]
fn sequential_episodes_are_bit_identical() {
    let sc = scenario();
    let cfg = short(Scheduling::Sequential);
    let a = run_episode(&cfg, &sc).unwrap();
    let b = run_episode(&cfg, &sc).unwrap();
    assert_eq!(a.rows.len(), 30);
    assert!(a.same_trajectory(&b));
    let c = run_episode(&EpisodeConfig { seed: 4, ..cfg }, &sc).unwrap();
    assert!(!a.same_trajectory(&c));
}

#[test]
fn lockstep_multirate_matches_sequential() {
    let sc = scenario();
    let seq = run_episode(&short(Scheduling::Sequential), &sc).unwrap();
    let multi = run_episode(
        &EpisodeConfig {
            rates: Rates::lockstep(sc.config.dt),
            ..short(Scheduling::MultiRate)
        },
        &sc,
    )
    .unwrap();
    let gap = seq.max_trajectory_gap(&multi).unwrap();
    assert!(gap <= 1e-9, "gap {gap}");
}

#[test]
fn default_rates_resolve_every_ten_steps() {
    let sc = scenario();
    let log = run_episode(&short(Scheduling::MultiRate), &sc).unwrap();
    let solves: Vec<usize> = log.banks.iter().map(|b| b.solve_step).collect();
    assert_eq!(solves, vec![0, 10, 20]);
    assert_simplex(&log);
}

#[test]
fn threaded_episode_completes() {
    let sc = scenario();
    let log = run_episode(&EpisodeConfig { steps: 200, ..short(Scheduling::Threaded) }, &sc).unwrap();
    assert!(log.errors.is_empty(), "{:?}", log.errors);
    assert!(!log.banks.is_empty());
    assert!(log.banks.iter().all(|b| b.publish_step >= b.solve_step));
    assert_eq!(log.outcome, Outcome::Success);
    assert_simplex(&log);
}

#[test]
fn latency_delays_commands_by_whole_steps() {
    let sc = scenario();
    let lat = 2;
    let cfg = EpisodeConfig {
        latency_steps: lat,
        process_noise: 0.0,
        ..short(Scheduling::Sequential)
    };
    let log = run_episode(&cfg, &sc).unwrap();
    for (k, r) in log.rows.iter().enumerate() {
        let sent = &log.rows[k.saturating_sub(lat)].commanded;
        for (a, b) in r.applied.iter().zip(clip(&sc, sent)) {
            assert!((a - b).abs() < 1e-12, "step {k}: {a} vs {b}");
        }
    }
}

#[test]
fn sinusoid_disturbs_only_the_other_acceleration() {
    let sc = scenario();
    let (amplitude, period) = (0.8, 1.5);
    let cfg = EpisodeConfig {
        process_noise: 0.0,
        perturbation: Perturbation::Sinusoid { amplitude, period },
        ..short(Scheduling::Sequential)
    };
    let log = run_episode(&cfg, &sc).unwrap();
    let other_accel = CONTROL_DIM + ACCEL;
    for r in &log.rows {
        let mut expected = r.commanded.clone();
        expected[other_accel] += amplitude * (2.0 * std::f64::consts::PI * r.time / period).sin();
        for (a, b) in r.applied.iter().zip(clip(&sc, &expected)) {
            assert!((a - b).abs() < 1e-9, "step {}: {a} vs {b}", r.step);
        }
    }
}

#[test]
fn random_disturbance_is_seeded() {
    let sc = scenario();
    let cfg = EpisodeConfig {
        perturbation: Perturbation::Random { sigma: 0.3 },
        steps: 15,
        ..short(Scheduling::Sequential)
    };
    let a = run_episode(&cfg, &sc).unwrap();
    assert!(a.same_trajectory(&run_episode(&cfg, &sc).unwrap()));
    let quiet = run_episode(&EpisodeConfig { perturbation: Perturbation::None, ..cfg }, &sc).unwrap();
    assert!(a.max_trajectory_gap(&quiet).unwrap() > 1e-3);
}

#[test]
fn qmdp_identifies_a_consistent_opponent() {
    let sc = scenario();
    for (other, truth) in [(StrategyKind::NoYield, 1), (StrategyKind::Yield, 0)] {
        let log = run_episode(
            &EpisodeConfig {
                other,
                steps: 200,
                ..short(Scheduling::MultiRate)
            },
            &sc,
        )
        .unwrap();
        assert_eq!(log.outcome, Outcome::Success, "{other}");
        let b = &log.rows.last().unwrap().beliefs[0];
        assert!(b[truth] >= 0.9, "{other}: {b:?}");
        assert_simplex(&log);
    }
}

#[test]
fn episode_files_round_trip() {
    let sc = scenario();
    let log = run_episode(&short(Scheduling::MultiRate), &sc).unwrap();
    let dir = std::env::temp_dir().join(format!("maxent-games-sim-{}", std::process::id()));
    let paths = log.write_files(&dir, "episode").unwrap();

    let mut rd = csv::Reader::from_path(&paths[0]).unwrap();
    let header: Vec<String> = rd.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, log.csv_header());
    assert_eq!(&header[..4], ["step", "time", "ego_px", "ego_py"]);
    assert_eq!(header.last().unwrap(), "track_us");
    let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), log.rows.len());
    assert!(rows.iter().all(|r| r.len() == header.len()));
    let px: f64 = rows[5][2].parse().unwrap();
    assert_eq!(px, log.rows[5].state[0]);

    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&paths[2]).unwrap()).unwrap();
    assert_eq!(summary["ego"], "QMDP");
    assert_eq!(summary["steps"], log.rows.len());
    let modes = csv::Reader::from_path(&paths[1]).unwrap().records().count();
    assert_eq!(modes, log.banks.iter().map(|b| b.positions.iter().map(Vec::len).sum::<usize>()).sum::<usize>());
    std::fs::remove_dir_all(&dir).unwrap();
}
