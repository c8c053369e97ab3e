use laser::agent::{
    greedy_actions, pinned_behaviour_id, run_agent, run_sweep, HyperParams, RunOptions, SweepConfig,
};
use laser::replay::SharedReplay;
use laser_core::mdp::solve_q_exact;
use laser_core::math::argmax_set;
use laser_core::{zoo, RelevanceConfig};

fn grid_hp() -> HyperParams {
    HyperParams {
        learning_rate: 0.5,
        entropy_cost: 1.0,
        ..HyperParams::default()
    }
}

fn sweep(agents: Vec<HyperParams>, shared: bool, steps: u64, seed: u64) -> SweepConfig {
    SweepConfig {
        agents,
        shared_replay: shared,
        replay_capacity: 20_000,
        total_env_steps: steps,
        environment: "gridworld".into(),
        env_seed: 0,
        seed,
        max_episode_steps: 30,
        curve_interval: 1_000,
        pinned_behaviour: None,
    }
}

#[test]
fn single_agent_runs_are_bit_reproducible() {
    let mdp = zoo::by_name("gridworld", 0).unwrap();
    let opts = RunOptions {
        max_episode_steps: 30,
        curve_interval: 1_000,
        ..RunOptions::new(10_000)
    };
    let run = |seed| run_agent(&mdp, &grid_hp(), &SharedReplay::new(5_000).unwrap(), &opts, seed).unwrap();
    let a = run(3);
    assert_eq!(a, run(3));
    assert_ne!(a.params, run(4).params);
    assert!(a.params.is_finite());
}

#[test]
fn one_member_sweep_ignores_the_shared_flag() {
    let mdp = zoo::by_name("gridworld", 0).unwrap();
    let a = run_sweep(&mdp, &sweep(vec![grid_hp()], true, 8_000, 1)).unwrap();
    let b = run_sweep(&mdp, &sweep(vec![grid_hp()], false, 8_000, 1)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn sweeps_are_deterministic_and_rate_matched() {
    let mdp = zoo::by_name("gridworld", 0).unwrap();
    let mut members = grid_hp().grid3x3();
    members.truncate(4);
    members[3].trust_region = Some(RelevanceConfig::new(0.5).unwrap());
    let cfg = sweep(members, true, 12_000, 7);
    let a = run_sweep(&mdp, &cfg).unwrap();
    assert_eq!(a, run_sweep(&mdp, &cfg).unwrap());
    let bt = (cfg.agents[0].batch_size * cfg.agents[0].unroll_length) as u64;
    let steps: Vec<u64> = a.agents.iter().map(|r| r.env_steps).collect();
    let spread = steps.iter().max().unwrap() - steps.iter().min().unwrap();
    assert!(spread <= bt, "env steps {steps:?}");
    assert!(steps.iter().all(|&s| s <= cfg.total_env_steps));
    // every curve covers the same buckets and the best curve is their max
    for (i, p) in a.best.iter().enumerate() {
        let m = a.agents.iter().map(|r| r.curve[i].mean_return).fold(f64::MIN, f64::max);
        assert_eq!(p.mean_return, m);
    }
}

#[test]
fn mismatched_member_rates_are_refused() {
    let mdp = zoo::by_name("gridworld", 0).unwrap();
    let fast = HyperParams {
        online_fraction: 0.5,
        ..grid_hp()
    };
    let err = run_sweep(&mdp, &sweep(vec![grid_hp(), fast], true, 1_000, 0)).unwrap_err();
    assert!(err.to_string().contains("same rate"), "{err}");
}

#[test]
fn on_policy_agent_solves_the_bandit() {
    let mdp = zoo::prop2_bandit();
    let hp = HyperParams {
        learning_rate: 0.05,
        entropy_cost: 0.0,
        online_fraction: 1.0,
        discount: 0.9,
        ..HyperParams::default()
    };
    let res = run_agent(&mdp, &hp, &SharedReplay::new(1_000).unwrap(), &RunOptions::new(100_000), 0).unwrap();
    let q = solve_q_exact(&mdp, &res.params.policy()).unwrap();
    assert_eq!(argmax_set(&q[..2]), vec![greedy_actions(&res.params)[0]]);
    assert_eq!(greedy_actions(&res.params)[0], 1);
}

#[test]
fn pinned_behaviour_alone_feeds_replay() {
    let mdp = zoo::prop2_bandit();
    let hp = HyperParams {
        learning_rate: 0.05,
        entropy_cost: 0.0,
        online_fraction: 0.5,
        batch_size: 4,
        unroll_length: 5,
        discount: 0.9,
        ..HyperParams::default()
    };
    let opts = RunOptions {
        pinned_behaviour: Some(vec![vec![0.9, 0.1], vec![0.5, 0.5]]),
        ..RunOptions::new(2_000)
    };
    let replay = SharedReplay::new(10_000).unwrap();
    run_agent(&mdp, &hp, &replay, &opts, 0).unwrap();
    let buf = replay.snapshot();
    assert!(buf.n_episodes() > 0);
    for e in buf.episodes() {
        assert_eq!(e.trajectory.behaviour_id, pinned_behaviour_id(0));
        assert!(e.trajectory.transitions.iter().all(|t| t.behaviour == [0.9, 0.1]));
    }
}

#[test]
fn shared_replay_holds_every_members_data() {
    let mdp = zoo::by_name("gridworld", 0).unwrap();
    let mut members = grid_hp().grid3x3();
    members.truncate(3);
    let cfg = sweep(members, true, 3_000, 2);
    let res = run_sweep(&mdp, &cfg).unwrap();
    let total: u64 = res.agents.iter().map(|a| a.episodes).sum();
    assert!(total > 0);
    assert!(res.agents.iter().all(|a| a.learner_steps > 0));
}

#[test]
fn sweep_configs_validate() {
    let mut cfg = sweep(vec![], true, 10, 0);
    assert!(cfg.validate().is_err());
    cfg.agents = vec![grid_hp()];
    assert!(cfg.validate().is_ok());
    cfg.agents[0].online_fraction = 0.3;
    assert!(cfg.validate().unwrap_err().to_string().contains("agent 0"));
}
