//! Actor/learner agents and concurrently running sweeps.
//!
//! Each sweep member owns an actor thread and a learner thread joined by a
//! bounded queue. All learners meet at a barrier every round, which keeps
//! the members in lockstep: every member acts the same number of env steps
//! per round, replay is sampled only after every member finished the
//! previous round's inserts, and inserts happen in member order. The
//! result is a pure function of the config and seeds.

use std::sync::mpsc::{channel, Receiver};
use std::sync::{Arc, Barrier};
use std::thread;

use laser_core::estimators::AdvantageForm;
use laser_core::learner::{learner_step, AgentParams, LearnerConfig, StepDiagnostics};
use laser_core::mdp::rollout;
use laser_core::{ClipConfig, Mdp, RelevanceConfig, TabularPolicy, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::replay::{
    compose_batch, online_queue, BatchSpec, EpisodeAssembler, ReplayError, Replayer, SharedReplay, Unroll,
};

/// Per-member hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    pub learning_rate: f64,
    pub entropy_cost: f64,
    /// Fraction `alpha` of batch slots filled with fresh online unrolls.
    pub online_fraction: f64,
    #[serde(default)]
    pub clip: ClipConfig,
    /// Absent disables the trust region.
    #[serde(default)]
    pub trust_region: Option<RelevanceConfig>,
    pub unroll_length: usize,
    pub batch_size: usize,
    pub discount: f64,
    #[serde(default)]
    pub advantage: AdvantageForm,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            learning_rate: 0.1,
            entropy_cost: 0.01,
            online_fraction: 0.125,
            clip: ClipConfig::default(),
            trust_region: None,
            unroll_length: 19,
            batch_size: 8,
            discount: 0.95,
            advantage: AdvantageForm::VtraceTarget,
        }
    }
}

impl HyperParams {
    pub fn learner_config(&self) -> LearnerConfig {
        LearnerConfig {
            learning_rate: self.learning_rate,
            entropy_cost: self.entropy_cost,
            discount: self.discount,
            clip: self.clip,
            trust_region: self.trust_region,
            advantage: self.advantage,
        }
    }

    pub fn batch_spec(&self) -> Result<BatchSpec, ReplayError> {
        BatchSpec::new(self.batch_size, self.online_fraction, self.unroll_length)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.learner_config().validate()?;
        self.batch_spec()?;
        Ok(())
    }

    /// Unrolls the actor produces per learner step. With no online slots the
    /// actor keeps the pace it would have at `alpha = 1/8`, so that replay
    /// still receives fresh data.
    pub fn actor_unrolls_per_step(&self, pinned: bool) -> usize {
        let n = (self.batch_size as f64 * self.online_fraction).round() as usize;
        if n > 0 || pinned {
            n
        } else {
            (self.batch_size / 8).max(1)
        }
    }

    /// The `{1/2, 1, 2}` learning-rate by entropy-cost grid around `self`.
    pub fn grid3x3(&self) -> Vec<HyperParams> {
        let f = [0.5, 1.0, 2.0];
        f.iter()
            .flat_map(|&a| {
                f.iter().map(move |&b| HyperParams {
                    learning_rate: self.learning_rate * a,
                    entropy_cost: self.entropy_cost * b,
                    ..*self
                })
            })
            .collect()
    }
}

/// Run-level options shared by every member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunOptions {
    pub total_env_steps: u64,
    /// Episodes are cut after this many steps and stored as truncated.
    #[serde(default = "default_max_episode_steps")]
    pub max_episode_steps: usize,
    /// Width of the env-step buckets of the learning curve.
    #[serde(default = "default_curve_interval")]
    pub curve_interval: u64,
    /// Fixed behaviour table `[state][action]` that alone feeds replay; the
    /// learner's own online data is then never inserted.
    #[serde(default)]
    pub pinned_behaviour: Option<Vec<Vec<f64>>>,
}

fn default_max_episode_steps() -> usize {
    100
}

fn default_curve_interval() -> u64 {
    5_000
}

impl RunOptions {
    pub fn new(total_env_steps: u64) -> Self {
        RunOptions {
            total_env_steps,
            max_episode_steps: default_max_episode_steps(),
            curve_interval: default_curve_interval(),
            pinned_behaviour: None,
        }
    }
}

/// A sweep: members, replay layout and budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub agents: Vec<HyperParams>,
    #[serde(default)]
    pub shared_replay: bool,
    pub replay_capacity: usize,
    pub total_env_steps: u64,
    pub environment: String,
    #[serde(default)]
    pub env_seed: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_episode_steps")]
    pub max_episode_steps: usize,
    #[serde(default = "default_curve_interval")]
    pub curve_interval: u64,
    #[serde(default)]
    pub pinned_behaviour: Option<Vec<Vec<f64>>>,
}

impl SweepConfig {
    pub fn options(&self) -> RunOptions {
        RunOptions {
            total_env_steps: self.total_env_steps,
            max_episode_steps: self.max_episode_steps,
            curve_interval: self.curve_interval,
            pinned_behaviour: self.pinned_behaviour.clone(),
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        anyhow::ensure!(!self.agents.is_empty(), "a sweep needs at least one agent");
        anyhow::ensure!(self.replay_capacity > 0, "replay_capacity must be positive");
        anyhow::ensure!(self.total_env_steps > 0, "total_env_steps must be positive");
        anyhow::ensure!(self.curve_interval > 0, "curve_interval must be positive");
        anyhow::ensure!(
            self.max_episode_steps > 0 && self.max_episode_steps <= self.replay_capacity,
            "max_episode_steps must be in [1, replay_capacity]"
        );
        for (i, hp) in self.agents.iter().enumerate() {
            hp.validate().map_err(|e| e.context(format!("agent {i}")))?;
        }
        Ok(())
    }
}

/// One bucket of a learning curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// End of the bucket in env steps.
    pub env_steps: u64,
    /// Mean undiscounted return of episodes finished in the bucket, carried
    /// over from the previous bucket when none finished.
    pub mean_return: f64,
    pub mask_acceptance: f64,
    pub value_loss: f64,
    pub policy_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentResult {
    pub agent_id: u64,
    pub hyper: HyperParams,
    pub curve: Vec<CurvePoint>,
    pub params: AgentParams,
    pub env_steps: u64,
    pub learner_steps: u64,
    pub fully_masked_steps: u64,
    /// Learner steps taken before replay held any data.
    pub replay_starved_steps: u64,
    pub episodes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub agents: Vec<AgentResult>,
    /// Pointwise max over members of the bucketed mean return.
    pub best: Vec<CurvePoint>,
}

/// Pointwise maximum over curves of equal length (other columns come from
/// the member attaining the max).
pub fn sweep_best(curves: &[&[CurvePoint]]) -> Vec<CurvePoint> {
    let n = curves.iter().map(|c| c.len()).min().unwrap_or(0);
    (0..n)
        .map(|i| {
            *curves
                .iter()
                .map(|c| &c[i])
                .max_by(|a, b| a.mean_return.total_cmp(&b.mean_return))
                .expect("at least one curve")
        })
        .collect()
}

struct ActorMessage {
    /// Segments with their episode-end flags.
    segments: Vec<(Trajectory, bool)>,
    /// `(env step at the end, return)` of episodes finished here.
    finished: Vec<(u64, f64)>,
    pinned: bool,
}

impl ActorMessage {
    fn unroll(&self) -> Unroll {
        self.segments.iter().map(|(t, _)| t.clone()).collect()
    }
}

/// Environment state of one actor stream.
struct Stream {
    state: Option<usize>,
    episode_len: usize,
    episode_return: f64,
    behaviour_id: u64,
}

impl Stream {
    fn new(behaviour_id: u64) -> Self {
        Stream {
            state: None,
            episode_len: 0,
            episode_return: 0.0,
            behaviour_id,
        }
    }

    fn unroll(
        &mut self,
        mdp: &Mdp,
        pi: &TabularPolicy,
        rng: &mut ChaCha8Rng,
        length: usize,
        max_episode: usize,
        env_steps: &mut u64,
    ) -> (Vec<(Trajectory, bool)>, Vec<(u64, f64)>) {
        let mut segments = Vec::new();
        let mut finished = Vec::new();
        let mut remaining = length;
        while remaining > 0 {
            let s = match self.state {
                Some(s) => s,
                None => {
                    self.episode_len = 0;
                    self.episode_return = 0.0;
                    mdp.sample_initial(rng)
                }
            };
            let budget = remaining.min(max_episode - self.episode_len);
            let seg = rollout(mdp, pi, rng, s, budget, self.behaviour_id);
            let n = seg.len();
            remaining -= n;
            *env_steps += n as u64;
            self.episode_len += n;
            self.episode_return += seg.total_reward();
            let end = seg.terminated || self.episode_len >= max_episode;
            if end {
                finished.push((*env_steps, self.episode_return));
                self.state = None;
            } else {
                self.state = Some(seg.final_state);
            }
            if n > 0 {
                segments.push((seg, end));
            }
        }
        (segments, finished)
    }
}

#[derive(Default, Clone, Copy)]
struct Bucket {
    return_sum: f64,
    episodes: u64,
    acceptance_sum: f64,
    value_loss_sum: f64,
    policy_loss_sum: f64,
    steps: u64,
}

struct CurveBuilder {
    interval: u64,
    buckets: Vec<Bucket>,
}

impl CurveBuilder {
    fn new(interval: u64, total: u64) -> Self {
        CurveBuilder {
            interval,
            buckets: vec![Bucket::default(); total.div_ceil(interval).max(1) as usize],
        }
    }

    fn slot(&mut self, env_step: u64) -> &mut Bucket {
        // the last round may overshoot the budget; fold it into the last bucket
        let i = ((env_step.saturating_sub(1) / self.interval) as usize).min(self.buckets.len() - 1);
        &mut self.buckets[i]
    }

    fn episode(&mut self, env_step: u64, ret: f64) {
        let b = self.slot(env_step);
        b.return_sum += ret;
        b.episodes += 1;
    }

    fn step(&mut self, env_step: u64, d: &StepDiagnostics) {
        let b = self.slot(env_step);
        b.acceptance_sum += d.mask_acceptance;
        b.value_loss_sum += d.value_loss;
        b.policy_loss_sum += d.policy_loss;
        b.steps += 1;
    }

    fn finish(self) -> Vec<CurvePoint> {
        let mut last = 0.0;
        self.buckets
            .iter()
            .enumerate()
            .map(|(i, b)| {
                if b.episodes > 0 {
                    last = b.return_sum / b.episodes as f64;
                }
                let per_step = |x: f64| if b.steps > 0 { x / b.steps as f64 } else { 0.0 };
                CurvePoint {
                    env_steps: (i as u64 + 1) * self.interval,
                    mean_return: last,
                    mask_acceptance: per_step(b.acceptance_sum),
                    value_loss: per_step(b.value_loss_sum),
                    policy_loss: per_step(b.policy_loss_sum),
                }
            })
            .collect()
    }
}

/// Behaviour id of the pinned stream of member `agent_id`.
pub fn pinned_behaviour_id(agent_id: u64) -> u64 {
    agent_id | 1 << 32
}

struct Member {
    agent_id: u64,
    hyper: HyperParams,
    replay: SharedReplay,
    seed: u64,
}

fn member_seed(seed: u64, agent_id: u64, stream: u64) -> u64 {
    // splitmix-style mixing keeps per-thread generators decorrelated
    let mut z = seed ^ agent_id.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn run_members(mdp: &Mdp, members: Vec<Member>, opts: &RunOptions) -> anyhow::Result<Vec<AgentResult>> {
    anyhow::ensure!(!members.is_empty(), "no agents to run");
    anyhow::ensure!(opts.max_episode_steps > 0, "max_episode_steps must be positive");
    anyhow::ensure!(opts.curve_interval > 0, "curve_interval must be positive");
    let pinned = match &opts.pinned_behaviour {
        Some(rows) => Some(Arc::new(TabularPolicy::from_rows(rows)?)),
        None => None,
    };
    if let Some(p) = &pinned {
        anyhow::ensure!(
            p.n_states() == mdp.n_states() && p.n_actions() == mdp.n_actions(),
            "pinned behaviour shape does not match the environment"
        );
    }
    for m in &members {
        m.hyper.validate()?;
    }
    // every member acts the same number of env steps per round
    let per_round: Vec<u64> = members
        .iter()
        .map(|m| {
            let n = m.hyper.actor_unrolls_per_step(pinned.is_some()) + usize::from(pinned.is_some());
            (n * m.hyper.unroll_length) as u64
        })
        .collect();
    anyhow::ensure!(
        per_round.iter().all(|&x| x == per_round[0]),
        "sweep members must act at the same rate (batch_size * online_fraction * unroll_length must agree)"
    );
    anyhow::ensure!(per_round[0] > 0, "agents would never act");
    // whole rounds only, so no member ever exceeds the budget
    let rounds = (opts.total_env_steps / per_round[0]).max(1);
    let barrier = Arc::new(Barrier::new(members.len()));
    let n_members = members.len();
    let mdp = Arc::new(mdp.clone());

    let handles: Vec<_> = members
        .into_iter()
        .enumerate()
        .map(|(order, m)| {
            let barrier = Arc::clone(&barrier);
            let mdp = Arc::clone(&mdp);
            let pinned = pinned.clone();
            let opts = opts.clone();
            thread::spawn(move || learner_thread(order, n_members, m, mdp, pinned, opts, rounds, barrier))
        })
        .collect();
    let mut out = Vec::with_capacity(handles.len());
    let mut first_err = None;
    for h in handles {
        match h.join() {
            Ok(Ok(r)) => out.push(r),
            Ok(Err(e)) => {
                first_err.get_or_insert(e);
            }
            Err(_) => {
                first_err.get_or_insert(anyhow::anyhow!("learner thread panicked"));
            }
        }
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

#[allow(clippy::too_many_arguments)]
fn learner_thread(
    order: usize,
    n_members: usize,
    m: Member,
    mdp: Arc<Mdp>,
    pinned: Option<Arc<TabularPolicy>>,
    opts: RunOptions,
    rounds: u64,
    barrier: Arc<Barrier>,
) -> anyhow::Result<AgentResult> {
    let hp = m.hyper;
    let spec = hp.batch_spec()?;
    let cfg = hp.learner_config();
    let n_act = hp.actor_unrolls_per_step(pinned.is_some());
    let per_round = n_act + usize::from(pinned.is_some());
    let (tx, rx) = online_queue::<ActorMessage>(per_round);
    let (snap_tx, snap_rx) = channel::<Arc<TabularPolicy>>();

    let actor = {
        let mdp = Arc::clone(&mdp);
        let pinned = pinned.clone();
        let seed = member_seed(m.seed, m.agent_id, 1);
        let agent_id = m.agent_id;
        let max_ep = opts.max_episode_steps;
        thread::spawn(move || {
            actor_thread(
                &mdp,
                snap_rx,
                tx,
                pinned.as_deref(),
                agent_id,
                seed,
                hp.unroll_length,
                n_act,
                max_ep,
            )
        })
    };

    let mut rng = ChaCha8Rng::seed_from_u64(member_seed(m.seed, m.agent_id, 2));
    let mut params = AgentParams::zeros(mdp.n_states(), mdp.n_actions());
    let mut replayer = Replayer::new();
    let mut online_asm = EpisodeAssembler::new();
    let mut pinned_asm = EpisodeAssembler::new();
    let mut curve = CurveBuilder::new(opts.curve_interval, opts.total_env_steps);
    let mut env_steps = 0u64;
    let mut fully_masked = 0u64;
    let mut starved = 0u64;
    let mut episodes = 0u64;
    let mut failure: Option<anyhow::Error> = None;
    let _ = snap_tx.send(Arc::new(params.policy()));

    for round in 0..rounds {
        let msgs = rx.recv_n(per_round).map_err(|_| anyhow::anyhow!("actor of agent {} stopped", m.agent_id));
        let msgs = match msgs {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                Vec::new()
            }
        };
        for msg in &msgs {
            for &(at, ret) in &msg.finished {
                if !msg.pinned {
                    curve.episode(at, ret);
                    episodes += 1;
                }
            }
            env_steps += msg.segments.iter().map(|(t, _)| t.len() as u64).sum::<u64>();
        }
        let online: Vec<Unroll> = if spec.n_online() > 0 {
            msgs.iter().filter(|x| !x.pinned).map(ActorMessage::unroll).collect()
        } else {
            Vec::new()
        };

        // previous round's inserts are complete everywhere
        barrier.wait();
        let batch = if failure.is_none() && online.len() == spec.n_online() {
            compose_batch(&m.replay, &mut replayer, online, &spec, &mut rng).map_err(anyhow::Error::from)
        } else {
            Err(anyhow::anyhow!("incomplete online data"))
        };
        // nobody inserts until everyone has sampled
        barrier.wait();
        for turn in 0..n_members {
            if turn == order {
                for msg in &msgs {
                    let insert = if msg.pinned { true } else { pinned.is_none() };
                    if !insert {
                        continue;
                    }
                    let asm = if msg.pinned { &mut pinned_asm } else { &mut online_asm };
                    for (seg, end) in &msg.segments {
                        if let Some(ep) = asm.push(seg.clone(), *end) {
                            if let Err(e) = m.replay.add_episode(ep, m.agent_id, round) {
                                failure.get_or_insert(e.into());
                            }
                        }
                    }
                }
            }
            barrier.wait();
        }

        match batch {
            Ok(batch) if failure.is_none() => {
                if batch.replay_missing {
                    starved += 1;
                }
                let labeled = batch.labeled();
                if !labeled.is_empty() {
                    match learner_step(&params, &labeled, &cfg) {
                        Ok((next, diag)) => {
                            if diag.fully_masked {
                                fully_masked += 1;
                            }
                            params = next;
                            curve.step(env_steps, &diag);
                        }
                        Err(e) => {
                            failure.get_or_insert(anyhow::anyhow!("agent {}: {e}", m.agent_id));
                        }
                    }
                }
            }
            Ok(_) => {}
            Err(e) => {
                failure.get_or_insert(e);
            }
        }
        if round + 1 < rounds {
            let _ = snap_tx.send(Arc::new(params.policy()));
        }
    }
    drop(snap_tx);
    drop(rx);
    let _ = actor.join();
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(AgentResult {
        agent_id: m.agent_id,
        hyper: hp,
        curve: curve.finish(),
        learner_steps: params.iteration,
        params,
        env_steps,
        fully_masked_steps: fully_masked,
        replay_starved_steps: starved,
        episodes,
    })
}

#[allow(clippy::too_many_arguments)]
fn actor_thread(
    mdp: &Mdp,
    snapshots: Receiver<Arc<TabularPolicy>>,
    queue: crate::replay::OnlineSender<ActorMessage>,
    pinned: Option<&TabularPolicy>,
    agent_id: u64,
    seed: u64,
    unroll_length: usize,
    n_act: usize,
    max_episode: usize,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pinned_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut online = Stream::new(agent_id);
    let mut behaviour = Stream::new(pinned_behaviour_id(agent_id));
    let mut env_steps = 0u64;
    while let Ok(pi) = snapshots.recv() {
        for _ in 0..n_act {
            let (segments, finished) = online.unroll(mdp, &pi, &mut rng, unroll_length, max_episode, &mut env_steps);
            let msg = ActorMessage {
                segments,
                finished,
                pinned: false,
            };
            if queue.send(msg).is_err() {
                return;
            }
        }
        if let Some(mu) = pinned {
            let (segments, finished) =
                behaviour.unroll(mdp, mu, &mut pinned_rng, unroll_length, max_episode, &mut env_steps);
            let msg = ActorMessage {
                segments,
                finished,
                pinned: true,
            };
            if queue.send(msg).is_err() {
                return;
            }
        }
    }
}

/// Run one agent against a replay handle. Deterministic in `(mdp, hp, opts,
/// seed)` as long as nothing else writes to `replay`.
pub fn run_agent(
    mdp: &Mdp,
    hp: &HyperParams,
    replay: &SharedReplay,
    opts: &RunOptions,
    seed: u64,
) -> anyhow::Result<AgentResult> {
    let member = Member {
        agent_id: 0,
        hyper: *hp,
        replay: replay.clone(),
        seed,
    };
    Ok(run_members(mdp, vec![member], opts)?.remove(0))
}

/// Run every member concurrently, in lockstep, on one shared buffer or on
/// private buffers of the same capacity.
pub fn run_sweep(mdp: &Mdp, cfg: &SweepConfig) -> anyhow::Result<SweepResult> {
    cfg.validate()?;
    let shared = SharedReplay::new(cfg.replay_capacity)?;
    let members = cfg
        .agents
        .iter()
        .enumerate()
        .map(|(i, hp)| {
            Ok(Member {
                agent_id: i as u64,
                hyper: *hp,
                replay: if cfg.shared_replay {
                    shared.clone()
                } else {
                    SharedReplay::new(cfg.replay_capacity)?
                },
                seed: cfg.seed,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let agents = run_members(mdp, members, &cfg.options())?;
    let curves: Vec<&[CurvePoint]> = agents.iter().map(|a| a.curve.as_slice()).collect();
    let best = sweep_best(&curves);
    Ok(SweepResult { agents, best })
}

/// Greedy action per state of a learned policy.
pub fn greedy_actions(params: &AgentParams) -> Vec<usize> {
    (0..params.n_states)
        .map(|s| {
            let row = params.logits_row(s);
            (0..row.len()).fold(0, |best, a| if row[a] > row[best] { a } else { best })
        })
        .collect()
}

/// Draw a fresh seed list from a base seed.
pub fn derive_seeds(base: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    (0..n).map(|_| rng.gen()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use laser_core::zoo;

    #[test]
    fn curve_buckets_carry_returns_forward() {
        let mut c = CurveBuilder::new(10, 30);
        c.episode(5, 2.0);
        c.episode(10, 4.0);
        c.episode(25, 1.0);
        let pts = c.finish();
        assert_eq!(pts.iter().map(|p| p.mean_return).collect::<Vec<_>>(), vec![3.0, 3.0, 1.0]);
        assert_eq!(pts[2].env_steps, 30);
    }

    #[test]
    fn sweep_best_is_pointwise_max() {
        let p = |r| CurvePoint {
            env_steps: 1,
            mean_return: r,
            mask_acceptance: 1.0,
            value_loss: 0.0,
            policy_loss: 0.0,
        };
        let a = vec![p(1.0), p(5.0)];
        let b = vec![p(2.0), p(3.0)];
        let best = sweep_best(&[&a, &b]);
        assert_eq!(best.iter().map(|x| x.mean_return).collect::<Vec<_>>(), vec![2.0, 5.0]);
    }

    #[test]
    fn stream_unrolls_have_fixed_length_and_split_at_episode_ends() {
        let mdp = zoo::prop2_bandit();
        let pi = TabularPolicy::uniform(2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = Stream::new(0);
        let mut steps = 0;
        let (segs, fin) = s.unroll(&mdp, &pi, &mut rng, 5, 100, &mut steps);
        assert_eq!(segs.len(), 5);
        assert_eq!(fin.len(), 5);
        assert_eq!(steps, 5);
        assert!(segs.iter().all(|(t, end)| t.len() == 1 && *end && t.terminated));
    }

    #[test]
    fn time_limit_cuts_episodes() {
        let mdp = zoo::chain(30, 1.0, 0.9).unwrap();
        let pi = TabularPolicy::uniform(mdp.n_states(), mdp.n_actions());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = Stream::new(0);
        let mut steps = 0;
        let (segs, fin) = s.unroll(&mdp, &pi, &mut rng, 19, 7, &mut steps);
        assert_eq!(segs.iter().map(|(t, _)| t.len()).sum::<usize>(), 19);
        assert_eq!(fin.len(), 2);
        assert!(segs[0].1 && !segs[0].0.terminated);
    }

    #[test]
    fn grid_is_three_by_three() {
        let g = HyperParams::default().grid3x3();
        assert_eq!(g.len(), 9);
        assert_eq!(g[0].learning_rate, 0.05);
        assert_eq!(g[8].entropy_cost, 0.02);
    }
}
