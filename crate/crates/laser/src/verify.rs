//! One-shot run of the oracle-backed invariant suites, with optional
//! injected defects so the report can be shown to catch them.

use std::fmt;

use laser_core::estimators::{is_return, min_alpha, omega_row, q_alpha, q_omega, vtrace_return, AdvantageForm};
use laser_core::learner::{freeze_batch, surrogate_gradient, surrogate_loss, AgentParams, LearnerConfig};
use laser_core::math::argmax_set;
use laser_core::mdp::{rollout, sample_episode, solve_q_exact, solve_v_exact};
use laser_core::oracle::{
    contraction_probe, exact_estimator_expectation, monte_carlo_expectation, Behaviours, EnumerationSpec,
    OperatorKind,
};
use laser_core::trust_region::compute_mask;
use laser_core::{estimators::LabeledTrajectory, zoo, ClipConfig, RelevanceConfig, TabularPolicy, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{run_agent, run_sweep, HyperParams, RunOptions, SweepConfig};
use crate::experiments::{contraction_case, random_policy};
use crate::replay::{ReplayBuffer, SharedReplay};

/// Defects that can be injected into the checked components.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tamper {
    /// Use `rho_bar = 0.5 < c_bar = 1` as the clipping config.
    pub clip: bool,
    /// Flip the trust-region mask on steps that took action 0.
    pub action_dependent_mask: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub suite: &'static str,
    pub name: &'static str,
    pub passed: bool,
    /// Measurement on success, offending configuration on failure.
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<6} {:<12} {:<34} detail", "status", "suite", "check")?;
        for c in &self.checks {
            let status = if c.passed { "PASS" } else { "FAIL" };
            writeln!(f, "{status:<6} {:<12} {:<34} {}", c.suite, c.name, c.detail)?;
        }
        let failed = self.failures().count();
        writeln!(
            f,
            "{} checks, {} failed (seed {})",
            self.checks.len(),
            failed,
            self.seed
        )
    }
}

type Outcome = Result<String, String>;

/// Run every suite.
pub fn verify_all(seed: u64, tamper: Tamper) -> Report {
    let clip = if tamper.clip {
        ClipConfig {
            rho_bar: 0.5,
            c_bar: 1.0,
        }
    } else {
        ClipConfig::default()
    };
    let mask: MaskFn = if tamper.action_dependent_mask {
        tampered_mask
    } else {
        true_mask
    };
    let suites: Vec<(&'static str, &'static str, Box<dyn Fn() -> Outcome>)> = vec![
        ("mdp", "bellman-residual", Box::new(move || bellman(seed))),
        ("mdp", "q-averages-to-v", Box::new(move || q_averages(seed))),
        ("estimators", "clip-config", Box::new(move || clip_config(seed, clip))),
        ("estimators", "on-policy-reduction", Box::new(move || on_policy_reduction(seed, clip))),
        ("estimators", "implied-policy-fixed-point", Box::new(move || implied_fixed_point(seed))),
        ("estimators", "counterexample-threshold", Box::new(counterexample)),
        ("oracle", "is-unbiased-by-enumeration", Box::new(move || is_unbiased(seed))),
        ("oracle", "monte-carlo-agrees", Box::new(move || mc_agrees(seed))),
        ("trust_region", "mask-action-independent", Box::new(move || mask_independent(seed, mask))),
        ("trust_region", "infinite-threshold-accepts", Box::new(move || infinite_threshold(seed, mask))),
        ("oracle", "trusted-is-contraction", Box::new(move || contraction(seed, false))),
        ("oracle", "trusted-vtrace-shrinkage", Box::new(move || contraction(seed, true))),
        ("learner", "gradient-check", Box::new(move || gradient_check(seed))),
        ("replay", "fifo-capacity", Box::new(move || fifo(seed))),
        ("replay", "uniform-sampling", Box::new(move || uniform(seed))),
        ("agent", "deterministic", Box::new(move || deterministic(seed))),
        ("agent", "one-member-shared-equals-private", Box::new(move || shared_single(seed))),
    ];
    let checks = suites
        .into_iter()
        .map(|(suite, name, f)| {
            let (passed, detail) = match f() {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            CheckResult {
                suite,
                name,
                passed,
                detail,
            }
        })
        .collect();
    Report { seed, checks }
}

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn ensure(ok: bool, fail: impl FnOnce() -> String, pass: impl FnOnce() -> String) -> Outcome {
    if ok {
        Ok(pass())
    } else {
        Err(fail())
    }
}

fn bellman(seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..10 {
        let mdp = zoo::garnet(6, 3, 3, 0.9, rng.gen()).map_err(|e| e.to_string())?;
        let pi = random_policy(&mut rng, 6, 3, 0.1);
        let v = solve_v_exact(&mdp, &pi).map_err(|e| e.to_string())?;
        for s in 0..6 {
            let backup: f64 = (0..3)
                .map(|a| {
                    let next: f64 = mdp.transition_row(s, a).iter().zip(&v).map(|(p, x)| p * x).sum();
                    pi.prob(s, a) * (mdp.reward(s, a) + mdp.discount() * next)
                })
                .sum();
            let r = (backup - v[s]).abs();
            if r > 1e-9 {
                return Err(format!("garnet #{i}, state {s}: residual {r:e}"));
            }
            worst = worst.max(r);
        }
    }
    Ok(format!("max residual {worst:.1e}"))
}

fn q_averages(seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
    let mdp = zoo::garnet(5, 3, 3, 0.9, rng.gen()).map_err(|e| e.to_string())?;
    let pi = random_policy(&mut rng, 5, 3, 0.1);
    let v = solve_v_exact(&mdp, &pi).map_err(|e| e.to_string())?;
    let q = solve_q_exact(&mdp, &pi).map_err(|e| e.to_string())?;
    let gap = (0..5)
        .map(|s| ((0..3).map(|a| pi.prob(s, a) * q[s * 3 + a]).sum::<f64>() - v[s]).abs())
        .fold(0.0, f64::max);
    ensure(gap < 1e-10, || format!("gap {gap:e}"), || format!("gap {gap:.1e}"))
}

fn clip_config(seed: u64, clip: ClipConfig) -> Outcome {
    clip.validate().map_err(|e| {
        format!(
            "ClipConfig invariant rho_bar >= c_bar >= 1 violated by rho_bar={} c_bar={}: {e}",
            clip.rho_bar, clip.c_bar
        )
    })?;
    let mdp = zoo::prop2_bandit();
    let pi = TabularPolicy::uniform(2, 2);
    let t = sample_episode(&mdp, &pi, seed, 10);
    vtrace_return(&t, &pi, &[0.0, 0.0], 0.9, clip, t.len()).map_err(|e| e.to_string())?;
    Ok(format!("rho_bar={} c_bar={}", clip.rho_bar, clip.c_bar))
}

fn on_policy_reduction(seed: u64, clip: ClipConfig) -> Outcome {
    let mdp = zoo::by_name("gridworld", 0).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
    let pi = random_policy(&mut rng, mdp.n_states(), 4, 0.3);
    let v: Vec<f64> = (0..mdp.n_states()).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let g = mdp.discount();
    let mut worst = 0.0f64;
    let mut n = 0;
    for k in 0..2000u64 {
        let t = sample_episode(&mdp, &pi, seed.wrapping_mul(7919).wrapping_add(k), 400);
        if !t.terminated {
            continue;
        }
        let mc = t.transitions.iter().rev().fold(0.0, |acc, tr| tr.reward + g * acc);
        let est = vtrace_return(&t, &pi, &v, g, clip, t.len()).map_err(|e| format!("{e} (clip {clip:?})"))?;
        worst = worst.max((est.value - mc).abs() / mc.abs().max(1.0));
        n += 1;
        if n == 200 {
            break;
        }
    }
    ensure(worst <= 1e-12, || format!("relative error {worst:e}"), || format!("{n} episodes, max rel err {worst:.1e}"))
}

fn implied_fixed_point(seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
    let mut worst = 0.0f64;
    for i in 0..5 {
        let mdp = zoo::garnet(5, 3, 3, 0.9, rng.gen()).map_err(|e| e.to_string())?;
        let pi = random_policy(&mut rng, 5, 3, 0.05);
        let mu = random_policy(&mut rng, 5, 3, 0.05);
        let fp = laser_core::oracle::vtrace_fixed_point(&mdp, &pi, &mu, ClipConfig::default(), 1e-10)
            .map_err(|e| e.to_string())?;
        let rows = (0..5)
            .map(|s| laser_core::estimators::implied_policy(pi.row(s), mu.row(s), 1.0))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let main = solve_v_exact(&mdp, &TabularPolicy::from_rows(&rows).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let gap = sup(&fp.values, &main).max(fp.gap);
        if gap > 1e-8 {
            return Err(format!("MDP #{i}: gap {gap:e}"));
        }
        worst = worst.max(gap);
    }
    Ok(format!("max gap {worst:.1e}"))
}

fn counterexample() -> Outcome {
    let q = [2.0, 5.0];
    let qw = q_omega(&q, &omega_row(&[0.5, 0.5], &[0.9, 0.1], 1.0).map_err(|e| e.to_string())?);
    let a = min_alpha(&q, &qw, 1.0, 1.0).map_err(|e| e.to_string())?;
    let above = argmax_set(&q_alpha(&q, &qw, 1.0, 1.0, 0.26).map_err(|e| e.to_string())?);
    let below = argmax_set(&q_alpha(&q, &qw, 1.0, 1.0, 0.24).map_err(|e| e.to_string())?);
    ensure(
        (a - 0.25).abs() <= 1e-12 && above == [1] && below == [0],
        || format!("min_alpha {a}, argmax at 0.26 {above:?}, at 0.24 {below:?}"),
        || format!("min_alpha {a}"),
    )
}

fn is_unbiased(seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 4);
    let mut worst = 0.0f64;
    for i in 0..3 {
        let mdp = zoo::garnet(3, 2, 2, 0.05, rng.gen()).map_err(|e| e.to_string())?;
        let pi = random_policy(&mut rng, 3, 2, 0.2);
        let mu = random_policy(&mut rng, 3, 2, 0.2);
        let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let e = exact_estimator_expectation(
            &mdp,
            &pi,
            &Behaviours::single(mu),
            &v,
            &OperatorKind::is(),
            &EnumerationSpec::new(9, 1e-10),
        )
        .map_err(|e| e.to_string())?;
        let vpi = solve_v_exact(&mdp, &pi).map_err(|e| e.to_string())?;
        let got = e.or_bootstrap(&v);
        let d = sup(&got, &vpi);
        if d > e.tail_bound + 1e-12 {
            return Err(format!("garnet #{i}: deviation {d:e} exceeds tail bound {:e}", e.tail_bound));
        }
        worst = worst.max(d);
    }
    Ok(format!("max deviation {worst:.1e}"))
}

fn mc_agrees(seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 5);
    let mdp = zoo::garnet(3, 2, 2, 0.05, rng.gen()).map_err(|e| e.to_string())?;
    let pi = random_policy(&mut rng, 3, 2, 0.3);
    let mu = random_policy(&mut rng, 3, 2, 0.3);
    let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let exact = exact_estimator_expectation(
        &mdp,
        &pi,
        &Behaviours::single(mu.clone()),
        &v,
        &OperatorKind::is(),
        &EnumerationSpec::new(9, 1e-10),
    )
    .map_err(|e| e.to_string())?;
    let mut z = 0.0f64;
    for s in 0..3 {
        let target = exact.values[s].ok_or("state not covered")?;
        let mc = monte_carlo_expectation(
            |r| {
                let t = rollout(&mdp, &mu, r, s, 9, 0);
                is_return(&t, &pi, &v, 0.05, t.len()).map(|x| x.value).unwrap_or(f64::NAN)
            },
            50_000,
            seed.wrapping_add(s as u64),
        )
        .map_err(|e| e.to_string())?;
        if !mc.agrees(target, 3.0) {
            return Err(format!("state {s}: MC {} +- {} vs exact {target}", mc.mean, mc.std_error));
        }
        z = z.max((mc.mean - target).abs() / mc.std_error.max(1e-300));
    }
    Ok(format!("max |z| {z:.2}"))
}

type MaskFn = fn(&Trajectory, &TabularPolicy, &RelevanceConfig) -> Vec<bool>;

fn true_mask(t: &Trajectory, pi: &TabularPolicy, cfg: &RelevanceConfig) -> Vec<bool> {
    compute_mask(t, pi, cfg).mask
}

fn tampered_mask(t: &Trajectory, pi: &TabularPolicy, cfg: &RelevanceConfig) -> Vec<bool> {
    let mut m = compute_mask(t, pi, cfg).mask;
    for (flag, tr) in m.iter_mut().zip(&t.transitions) {
        if tr.action == 0 {
            *flag = !*flag;
        }
    }
    m
}

fn mask_cases(seed: u64) -> Result<Vec<(Trajectory, TabularPolicy)>, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 6);
    (0..50)
        .map(|_| {
            let mdp = zoo::garnet(4, 3, 2, 0.9, rng.gen()).map_err(|e| e.to_string())?;
            let pi = random_policy(&mut rng, 4, 3, 0.05);
            let mu = random_policy(&mut rng, 4, 3, 0.05);
            let len = rng.gen_range(1..15);
            let start = rng.gen_range(0..4);
            Ok((rollout(&mdp, &mu, &mut rng, start, len, 0), pi))
        })
        .collect()
}

fn mask_independent(seed: u64, mask: MaskFn) -> Outcome {
    let cases = mask_cases(seed)?;
    for (i, (t, pi)) in cases.iter().enumerate() {
        for b in [0.05, 0.2, 1.0] {
            let cfg = RelevanceConfig::new(b).map_err(|e| e.to_string())?;
            let base = mask(t, pi, &cfg);
            for shift in 1..3 {
                let mut p = t.clone();
                for tr in &mut p.transitions {
                    tr.action = (tr.action + shift) % 3;
                }
                if mask(&p, pi, &cfg) != base {
                    return Err(format!(
                        "action-independence violated: case {i}, b={b}, action shift {shift}, mask {base:?}"
                    ));
                }
            }
        }
    }
    Ok(format!("{} trajectories x 3 thresholds x 2 permutations", cases.len()))
}

fn infinite_threshold(seed: u64, mask: MaskFn) -> Outcome {
    let cfg = RelevanceConfig::new(f64::INFINITY).map_err(|e| e.to_string())?;
    for (i, (t, pi)) in mask_cases(seed)?.iter().enumerate() {
        if !mask(t, pi, &cfg).iter().all(|&m| m) {
            return Err(format!("case {i}: b=inf rejected a step"));
        }
    }
    Ok("all steps accepted".into())
}

fn contraction(seed: u64, vtrace: bool) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 7);
    let cfg = RelevanceConfig::new(0.1).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for i in 0..5 {
        let (mdp, pi, mus) = contraction_case(&mut rng, 0.9, 3).map_err(|e| e.to_string())?;
        let kind = if vtrace {
            OperatorKind::vtrace(ClipConfig::default()).trusted(cfg)
        } else {
            OperatorKind::is().trusted(cfg)
        };
        let report = contraction_probe(&mdp, &pi, &mus, &kind, 20, rng.gen()).map_err(|e| e.to_string())?;
        if let Some((j, p)) = report.probes.iter().enumerate().find(|(_, p)| !p.holds) {
            return Err(format!(
                "MDP #{i} probe {j}: in {:e} out {:e} ratio {}",
                p.input_distance, p.output_distance, p.ratio
            ));
        }
        worst = worst.max(report.max_ratio());
    }
    Ok(format!("max ratio {worst:.4}"))
}

fn gradient_check(seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 8);
    let (ns, na) = (4, 3);
    let mut worst = 0.0f64;
    for case in 0..20 {
        let params = AgentParams {
            n_states: ns,
            n_actions: na,
            logits: (0..ns * na).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            values: (0..ns).map(|_| rng.gen_range(-3.0..3.0)).collect(),
            iteration: 0,
        };
        let cfg = LearnerConfig {
            entropy_cost: 0.05,
            discount: 0.9,
            trust_region: (case % 2 == 0).then(|| RelevanceConfig::new(0.3).expect("positive")),
            advantage: AdvantageForm::VtraceTarget,
            ..LearnerConfig::default()
        };
        let mdp = zoo::garnet(ns, na, 2, 0.9, rng.gen()).map_err(|e| e.to_string())?;
        let batch: Vec<LabeledTrajectory> = (0..3)
            .map(|k| {
                let mu = random_policy(&mut rng, ns, na, 0.1);
                let start = rng.gen_range(0..ns);
                let t = rollout(&mdp, &mu, &mut rng, start, 6, 0);
                if k == 0 {
                    LabeledTrajectory::online(t)
                } else {
                    LabeledTrajectory::replay(t)
                }
            })
            .collect();
        let frozen = freeze_batch(&params, &batch, &cfg).map_err(|e| e.to_string())?;
        let (gl, gv) = surrogate_gradient(&params, &frozen, cfg.entropy_cost);
        let h = 1e-5;
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
        for j in 0..ns * na {
            let f = |d: f64| {
                let mut p = params.clone();
                p.logits[j] += d;
                surrogate_loss(&p, &frozen, cfg.entropy_cost)
            };
            worst = worst.max(rel(gl[j], (f(h) - f(-h)) / (2.0 * h)));
        }
        for j in 0..ns {
            let f = |d: f64| {
                let mut p = params.clone();
                p.values[j] += d;
                surrogate_loss(&p, &frozen, cfg.entropy_cost)
            };
            worst = worst.max(rel(gv[j], (f(h) - f(-h)) / (2.0 * h)));
        }
        if worst >= 1e-5 {
            return Err(format!("batch {case}: relative error {worst:e}"));
        }
    }
    Ok(format!("max rel err {worst:.1e}"))
}

fn episode(len: usize) -> Trajectory {
    let mdp = zoo::chain(len, 1.0, 0.9).expect("valid chain");
    sample_episode(&mdp, &TabularPolicy::uniform(len + 1, 1), 0, len)
}

fn fifo(seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 9);
    let cap = 100;
    let mut buf = ReplayBuffer::new(cap).map_err(|e| e.to_string())?;
    let mut model: std::collections::VecDeque<(u64, usize)> = Default::default();
    for step in 0..500u64 {
        let len = rng.gen_range(1..=30);
        let id = buf.add_episode(episode(len), 0, step).map_err(|e| e.to_string())?;
        model.push_back((id, len));
        while model.iter().map(|x| x.1).sum::<usize>() > cap {
            model.pop_front();
        }
        let ids: Vec<u64> = buf.episodes().map(|e| e.id).collect();
        let want: Vec<u64> = model.iter().map(|x| x.0).collect();
        if ids != want || buf.size() > cap {
            return Err(format!("after insert {step}: stored {ids:?}, expected {want:?}, size {}", buf.size()));
        }
    }
    Ok(format!("500 inserts, capacity {cap}, {} evictions", buf.evicted()))
}

/// Upper quantile of chi-square with `k` degrees of freedom at normal score
/// `z` (Wilson-Hilferty).
fn chi2_quantile(k: f64, z: f64) -> f64 {
    let a = 2.0 / (9.0 * k);
    k * (1.0 - a + z * a.sqrt()).powi(3)
}

fn uniform(seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 10);
    let mut buf = ReplayBuffer::new(1000).map_err(|e| e.to_string())?;
    for i in 0..20 {
        buf.add_episode(episode(1 + i % 7), 0, 0).map_err(|e| e.to_string())?;
    }
    let n = 40_000;
    let mut counts = [0usize; 20];
    for _ in 0..n {
        counts[buf.sample_episode(&mut rng).map_err(|e| e.to_string())?.id as usize] += 1;
    }
    let e = n as f64 / 20.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    // z = 3.09 is the one-sided 0.001 point
    let crit = chi2_quantile(19.0, 3.09);
    ensure(
        chi2 < crit,
        || format!("chi-square {chi2:.1} >= {crit:.1}, counts {counts:?}"),
        || format!("chi-square {chi2:.1} < {crit:.1}"),
    )
}

fn bandit_hp() -> HyperParams {
    HyperParams {
        learning_rate: 0.1,
        online_fraction: 0.5,
        batch_size: 4,
        unroll_length: 5,
        discount: 0.9,
        ..HyperParams::default()
    }
}

fn deterministic(seed: u64) -> Outcome {
    let mdp = zoo::prop2_bandit();
    let opts = RunOptions {
        curve_interval: 500,
        ..RunOptions::new(3000)
    };
    let run = || -> Result<_, String> {
        let replay = SharedReplay::new(1000).map_err(|e| e.to_string())?;
        run_agent(&mdp, &bandit_hp(), &replay, &opts, seed).map_err(|e| e.to_string())
    };
    let (a, b) = (run()?, run()?);
    ensure(
        a == b,
        || "two runs with the same seed differ".into(),
        || format!("{} learner steps reproduced", a.learner_steps),
    )
}

fn shared_single(seed: u64) -> Outcome {
    let mdp = zoo::prop2_bandit();
    let cfg = |shared| SweepConfig {
        agents: vec![bandit_hp()],
        shared_replay: shared,
        replay_capacity: 1000,
        total_env_steps: 3000,
        environment: "prop2-bandit".into(),
        env_seed: 0,
        seed,
        max_episode_steps: 100,
        curve_interval: 500,
        pinned_behaviour: None,
    };
    let a = run_sweep(&mdp, &cfg(true)).map_err(|e| e.to_string())?;
    let b = run_sweep(&mdp, &cfg(false)).map_err(|e| e.to_string())?;
    ensure(a == b, || "shared and private single-member sweeps differ".into(), || "identical".into())
}
