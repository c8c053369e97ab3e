mod common;

use common::{random_policy, random_values};
use laser_core::estimators::{AdvantageForm, LabeledTrajectory, Origin};
use laser_core::learner::{freeze_batch, learner_step, surrogate_gradient, surrogate_loss, AgentParams, FrozenBatch, LearnerConfig};
use laser_core::mdp::rollout;
use laser_core::{zoo, ClipConfig, RelevanceConfig, TabularPolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The learner objective written out from scratch over a frozen batch.
fn reference_loss(logits: &[f64], values: &[f64], na: usize, frozen: &FrozenBatch, entropy_cost: f64) -> f64 {
    let n = frozen.len() as f64;
    let mut total = 0.0;
    for st in frozen.steps.iter().filter(|s| s.accepted) {
        let row = &logits[st.state * na..(st.state + 1) * na];
        let m = row.iter().cloned().fold(f64::MIN, f64::max);
        let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        let logp: Vec<f64> = row.iter().map(|x| x - lse).collect();
        let h: f64 = -logp.iter().map(|l| l.exp() * l).sum::<f64>();
        let mut l = 0.5 * (st.value_target - values[st.state]).powi(2) - st.rho * st.advantage * logp[st.action];
        if st.origin == Origin::Online {
            l -= entropy_cost * h;
        }
        total += l;
    }
    total / n
}

fn random_batch(rng: &mut ChaCha8Rng, params: &AgentParams) -> Vec<LabeledTrajectory> {
    let mdp = zoo::garnet(params.n_states, params.n_actions, 2, 0.9, rng.gen_range(0..100)).unwrap();
    (0..rng.gen_range(1..5))
        .map(|_| {
            let mu = random_policy(rng, params.n_states, params.n_actions, 0.1);
            let s = rng.gen_range(0..params.n_states);
            let len = rng.gen_range(1..8);
            let t = rollout(&mdp, &mu, rng, s, len, 0);
            if rng.gen_bool(0.5) {
                LabeledTrajectory::online(t)
            } else {
                LabeledTrajectory::replay(t)
            }
        })
        .collect()
}

#[test]
fn analytic_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (ns, na) = (4, 3);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let params = AgentParams {
            n_states: ns,
            n_actions: na,
            logits: random_values(&mut rng, ns * na, 2.0),
            values: random_values(&mut rng, ns, 3.0),
            iteration: 0,
        };
        let cfg = LearnerConfig {
            learning_rate: 0.1,
            entropy_cost: if case % 2 == 0 { 0.05 } else { 0.0 },
            discount: 0.9,
            clip: ClipConfig::default(),
            trust_region: (case % 3 == 0).then(|| RelevanceConfig::new(0.2).unwrap()),
            advantage: [AdvantageForm::VtraceTarget, AdvantageForm::NextStateTarget, AdvantageForm::NextStateNoBaseline][case % 3],
        };
        let batch = random_batch(&mut rng, &params);
        let frozen = freeze_batch(&params, &batch, &cfg).unwrap();
        let (gl, gv) = surrogate_gradient(&params, &frozen, cfg.entropy_cost);
        let loss = |l: &[f64], v: &[f64]| reference_loss(l, v, na, &frozen, cfg.entropy_cost);
        assert!((surrogate_loss(&params, &frozen, cfg.entropy_cost) - loss(&params.logits, &params.values)).abs() < 1e-12);
        let h = 1e-4;
        let stencil = |f: &dyn Fn(f64) -> f64| (-f(2.0 * h) + 8.0 * f(h) - 8.0 * f(-h) + f(-2.0 * h)) / (12.0 * h);
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
        for j in 0..ns * na {
            let fd = stencil(&|d| {
                let mut l = params.logits.clone();
                l[j] += d;
                loss(&l, &params.values)
            });
            worst = worst.max(rel(gl[j], fd));
        }
        for j in 0..ns {
            let fd = stencil(&|d| {
                let mut v = params.values.clone();
                v[j] += d;
                loss(&params.logits, &v)
            });
            worst = worst.max(rel(gv[j], fd));
        }
    }
    assert!(worst < 1e-5, "max relative error {worst}");
}

/// Textbook advantage actor-critic step: n-step returns to the end of the
/// unroll, `A = G - V`, SGD on `1/2 (G - V)^2 - A log pi - c H`.
fn reference_on_policy_step(params: &AgentParams, batch: &[LabeledTrajectory], cfg: &LearnerConfig) -> AgentParams {
    let na = params.n_actions;
    let n: usize = batch.iter().map(|b| b.trajectory.len()).sum();
    let mut next = params.clone();
    let pi = params.policy();
    for lt in batch {
        let t = &lt.trajectory;
        let mut g = t.next_value(t.len() - 1, &params.values);
        let mut returns = vec![0.0; t.len()];
        for k in (0..t.len()).rev() {
            g = t.transitions[k].reward + cfg.discount * g;
            returns[k] = g;
        }
        for (tr, g) in t.transitions.iter().zip(returns) {
            let adv = g - params.values[tr.state];
            next.values[tr.state] += cfg.learning_rate * adv / n as f64;
            let row = pi.row(tr.state);
            let h: f64 = -row.iter().map(|p| p * p.ln()).sum::<f64>();
            for j in 0..na {
                let onehot = if j == tr.action { 1.0 } else { 0.0 };
                let pg = adv * (onehot - row[j]);
                let ent = -row[j] * (row[j].ln() + h);
                next.logits[tr.state * na + j] += cfg.learning_rate * (pg + cfg.entropy_cost * ent) / n as f64;
            }
        }
    }
    next.iteration += 1;
    next
}

#[test]
fn on_policy_step_is_plain_advantage_actor_critic() {
    let mdp = zoo::garnet(5, 3, 3, 0.9, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let params = AgentParams {
            n_states: 5,
            n_actions: 3,
            logits: random_values(&mut rng, 15, 1.5),
            values: random_values(&mut rng, 5, 2.0),
            iteration: 3,
        };
        let pi = params.policy();
        let batch: Vec<LabeledTrajectory> = (0..3)
            .map(|_| LabeledTrajectory::online(rollout(&mdp, &pi, &mut rng, 0, 7, 0)))
            .collect();
        let cfg = LearnerConfig {
            learning_rate: 0.3,
            entropy_cost: 0.02,
            discount: 0.9,
            ..LearnerConfig::default()
        };
        let (ours, _) = learner_step(&params, &batch, &cfg).unwrap();
        let reference = reference_on_policy_step(&params, &batch, &cfg);
        for (a, b) in ours.logits.iter().chain(&ours.values).zip(reference.logits.iter().chain(&reference.values)) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn parameters_stay_finite_over_many_steps() {
    let mdp = zoo::garnet(5, 3, 3, 0.9, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut params = AgentParams::zeros(5, 3);
    let mu = TabularPolicy::uniform(5, 3);
    let cfg = LearnerConfig {
        learning_rate: 1.0,
        entropy_cost: 0.01,
        discount: 0.9,
        clip: ClipConfig::new(4.0, 2.0).unwrap(),
        ..LearnerConfig::default()
    };
    for _ in 0..2000 {
        let batch: Vec<LabeledTrajectory> = (0..4)
            .map(|_| {
                let s = rng.gen_range(0..5);
                LabeledTrajectory::replay(rollout(&mdp, &mu, &mut rng, s, 10, 0))
            })
            .collect();
        params = learner_step(&params, &batch, &cfg).unwrap().0;
        assert!(params.is_finite());
        let pi = params.policy();
        for s in 0..5 {
            assert!((pi.row(s).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
