//! Finite MDPs, tabular policies, trajectories and exact policy evaluation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::{self, Matrix};
use crate::math::{is_simplex, sample_categorical};
use crate::{Error, Result};

/// Tolerance used when validating probability rows at construction.
pub const CONSTRUCTION_TOL: f64 = 1e-12;
/// Tolerance for rows that went through downstream arithmetic.
pub const DOWNSTREAM_TOL: f64 = 1e-10;

/// Raw fields of an [`Mdp`], validated by [`Mdp::new`].
///
/// `transition` is indexed `[s][a][s']` and `reward` `[s][a]`, both
/// flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpParts {
    pub n_states: usize,
    pub n_actions: usize,
    pub transition: Vec<f64>,
    pub reward: Vec<f64>,
    pub discount: f64,
    pub terminal: Vec<bool>,
    pub initial_distribution: Vec<f64>,
}

/// A finite MDP with deterministic rewards `r(s, a)`.
///
/// Terminal states self-loop with zero reward, so every quantity below can be
/// computed without special-casing episode ends.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    parts: MdpParts,
}

impl Mdp {
    pub fn new(parts: MdpParts) -> Result<Self> {
        let MdpParts {
            n_states: ns,
            n_actions: na,
            ..
        } = parts;
        if ns == 0 || na == 0 {
            return Err(Error::invalid("mdp", "n_states and n_actions must be positive"));
        }
        check_len("transition", ns * na * ns, parts.transition.len())?;
        check_len("reward", ns * na, parts.reward.len())?;
        check_len("terminal", ns, parts.terminal.len())?;
        check_len("initial_distribution", ns, parts.initial_distribution.len())?;
        if !(0.0..1.0).contains(&parts.discount) {
            return Err(Error::invalid(
                "discount",
                format!("{} is outside [0, 1)", parts.discount),
            ));
        }
        for s in 0..ns {
            for a in 0..na {
                let row = &parts.transition[(s * na + a) * ns..(s * na + a + 1) * ns];
                if !is_simplex(row, CONSTRUCTION_TOL) {
                    return Err(Error::invalid(
                        "transition",
                        format!("row P(.|{s},{a}) is not a probability distribution"),
                    ));
                }
                let r = parts.reward[s * na + a];
                if !r.is_finite() {
                    return Err(Error::invalid("reward", format!("r({s},{a}) is not finite")));
                }
                if parts.terminal[s] && (row[s] != 1.0 || r != 0.0) {
                    return Err(Error::invalid(
                        "terminal",
                        format!("terminal state {s} must self-loop with reward 0"),
                    ));
                }
            }
        }
        if !is_simplex(&parts.initial_distribution, CONSTRUCTION_TOL) {
            return Err(Error::invalid(
                "initial_distribution",
                "not a probability distribution",
            ));
        }
        Ok(Mdp { parts })
    }

    pub fn n_states(&self) -> usize {
        self.parts.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.parts.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.parts.discount
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.parts.terminal[s]
    }

    pub fn terminal(&self) -> &[bool] {
        &self.parts.terminal
    }

    pub fn initial_distribution(&self) -> &[f64] {
        &self.parts.initial_distribution
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.parts.reward[s * self.parts.n_actions + a]
    }

    /// Row `P(. | s, a)`.
    #[inline]
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let (na, ns) = (self.parts.n_actions, self.parts.n_states);
        &self.parts.transition[(s * na + a) * ns..(s * na + a + 1) * ns]
    }

    pub fn parts(&self) -> &MdpParts {
        &self.parts
    }

    pub fn into_parts(self) -> MdpParts {
        self.parts
    }

    /// Same dynamics with another discount.
    pub fn with_discount(&self, discount: f64) -> Result<Mdp> {
        let mut parts = self.parts.clone();
        parts.discount = discount;
        Mdp::new(parts)
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_categorical(rng, &self.parts.initial_distribution)
    }

    pub fn sample_next<R: Rng + ?Sized>(&self, rng: &mut R, s: usize, a: usize) -> usize {
        sample_categorical(rng, self.transition_row(s, a))
    }

    /// State-to-state matrix `P_pi(s, s')` and expected reward `r_pi(s)`.
    pub(crate) fn policy_dynamics(&self, policy: &TabularPolicy) -> (Matrix, Vec<f64>) {
        let ns = self.n_states();
        let mut p = Matrix::zeros(ns);
        let mut r = vec![0.0; ns];
        for s in 0..ns {
            for (a, &pa) in policy.row(s).iter().enumerate() {
                if pa == 0.0 {
                    continue;
                }
                r[s] += pa * self.reward(s, a);
                for (s2, &q) in self.transition_row(s, a).iter().enumerate() {
                    *p.at_mut(s, s2) += pa * q;
                }
            }
        }
        (p, r)
    }

    fn check_policy(&self, policy: &TabularPolicy) -> Result<()> {
        check_len("policy states", self.n_states(), policy.n_states())?;
        check_len("policy actions", self.n_actions(), policy.n_actions())
    }
}

fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Shape {
            what,
            expected,
            actual,
        })
    }
}

/// Per-state action distributions `pi(a|s)`; used for targets and behaviours.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        check_len("policy", n_states * n_actions, probs.len())?;
        if n_actions == 0 {
            return Err(Error::invalid("policy", "needs at least one action"));
        }
        for s in 0..n_states {
            if !is_simplex(&probs[s * n_actions..(s + 1) * n_actions], CONSTRUCTION_TOL) {
                return Err(Error::invalid(
                    "policy",
                    format!("row {s} is not a probability distribution"),
                ));
            }
        }
        Ok(TabularPolicy {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_actions = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_actions) {
            return Err(Error::invalid("policy", "ragged rows"));
        }
        Self::new(rows.len(), n_actions, rows.concat())
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        TabularPolicy {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    /// Row-wise softmax of a flattened logits table.
    pub fn from_logits(n_states: usize, n_actions: usize, logits: &[f64]) -> Self {
        debug_assert_eq!(logits.len(), n_states * n_actions);
        let probs = logits
            .chunks(n_actions)
            .flat_map(crate::math::softmax)
            .collect();
        TabularPolicy {
            n_states,
            n_actions,
            probs,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, rng: &mut R, s: usize) -> usize {
        sample_categorical(rng, self.row(s))
    }
}

/// One logged step: state, action, reward and the behaviour row `mu(.|s)`
/// that chose the action.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub behaviour: Vec<f64>,
}

/// A sequence of logged transitions.
///
/// `final_state` is the state reached after the last transition. When
/// `terminated` is set the final state is terminal and bootstraps with value
/// zero; otherwise estimators bootstrap from the value table there.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    pub behaviour_id: u64,
    pub start_state: usize,
    pub final_state: usize,
    pub terminated: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// State visited after step `t` (the final state for the last step).
    #[inline]
    pub fn next_state(&self, t: usize) -> usize {
        self.transitions
            .get(t + 1)
            .map_or(self.final_state, |tr| tr.state)
    }

    /// Whether the state after step `t` is terminal.
    #[inline]
    pub fn next_is_terminal(&self, t: usize) -> bool {
        self.terminated && t + 1 == self.transitions.len()
    }

    /// Bootstrap value of the state after step `t`.
    #[inline]
    pub fn next_value(&self, t: usize, values: &[f64]) -> f64 {
        if self.next_is_terminal(t) {
            0.0
        } else {
            values[self.next_state(t)]
        }
    }

    /// Contiguous sub-trajectory `[start, start + len)`, clamped to the end.
    pub fn slice(&self, start: usize, len: usize) -> Trajectory {
        let end = (start + len).min(self.transitions.len());
        let start = start.min(end);
        let transitions = self.transitions[start..end].to_vec();
        let reaches_end = end == self.transitions.len();
        let start_state = transitions.first().map_or(self.final_state, |t| t.state);
        Trajectory {
            start_state,
            final_state: if reaches_end {
                self.final_state
            } else {
                self.transitions[end].state
            },
            terminated: reaches_end && self.terminated,
            behaviour_id: self.behaviour_id,
            transitions,
        }
    }

    /// Check behaviour rows are simplex points with positive mass on the
    /// taken action.
    pub fn validate(&self) -> Result<()> {
        for (step, tr) in self.transitions.iter().enumerate() {
            if !is_simplex(&tr.behaviour, DOWNSTREAM_TOL) {
                return Err(Error::invalid(
                    "trajectory",
                    format!("behaviour row at step {step} is not a distribution"),
                ));
            }
            if tr.behaviour.get(tr.action).copied().unwrap_or(0.0) <= 0.0 {
                return Err(Error::ZeroBehaviourProbability {
                    step,
                    action: tr.action,
                });
            }
        }
        Ok(())
    }

    /// Undiscounted sum of rewards.
    pub fn total_reward(&self) -> f64 {
        self.transitions.iter().map(|t| t.reward).sum()
    }
}

/// Exact `V^pi` from `(I - gamma P_pi) V = r_pi`.
pub fn solve_v_exact(mdp: &Mdp, policy: &TabularPolicy) -> Result<Vec<f64>> {
    mdp.check_policy(policy)?;
    let ns = mdp.n_states();
    let (p, r) = mdp.policy_dynamics(policy);
    let mut a = Matrix::identity(ns);
    for (x, y) in a.data.iter_mut().zip(&p.data) {
        *x -= mdp.discount() * y;
    }
    linalg::solve(a, &r).ok_or(Error::Singular("evaluating the policy"))
}

/// `Q^pi(s, a) = r(s, a) + gamma sum_s' P(s'|s,a) V^pi(s')`, row-major.
pub fn solve_q_exact(mdp: &Mdp, policy: &TabularPolicy) -> Result<Vec<f64>> {
    let v = solve_v_exact(mdp, policy)?;
    Ok(q_from_v(mdp, &v))
}

pub(crate) fn q_from_v(mdp: &Mdp, v: &[f64]) -> Vec<f64> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut q = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            let cont: f64 = mdp
                .transition_row(s, a)
                .iter()
                .zip(v)
                .map(|(p, v)| p * v)
                .sum();
            q[s * na + a] = mdp.reward(s, a) + mdp.discount() * cont;
        }
    }
    q
}

/// Which state-visitation distribution [`state_distribution`] returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistributionKind {
    /// `(1 - gamma) sum_k gamma^k d0 P_pi^k`.
    Discounted,
    /// The unique stationary distribution of `P_pi`.
    Stationary,
}

pub fn state_distribution(
    mdp: &Mdp,
    policy: &TabularPolicy,
    kind: DistributionKind,
) -> Result<Vec<f64>> {
    mdp.check_policy(policy)?;
    let ns = mdp.n_states();
    let (p, _) = mdp.policy_dynamics(policy);
    match kind {
        DistributionKind::Discounted => {
            // d (I - gamma P) = (1 - gamma) d0, i.e. (I - gamma P)^T d^T = ...
            let g = mdp.discount();
            let mut a = Matrix::identity(ns);
            for (x, y) in a.data.iter_mut().zip(&p.data) {
                *x -= g * y;
            }
            let rhs: Vec<f64> = mdp
                .initial_distribution()
                .iter()
                .map(|x| (1.0 - g) * x)
                .collect();
            linalg::solve(a.transpose(), &rhs).ok_or(Error::Singular("solving visitation"))
        }
        DistributionKind::Stationary => {
            let classes = closed_classes(&p);
            if classes.len() != 1 {
                return Err(Error::NonUniqueStationary { classes });
            }
            // (P^T - I) d = 0 with the last equation replaced by sum(d) = 1.
            let mut a = p.transpose();
            for i in 0..ns {
                *a.at_mut(i, i) -= 1.0;
            }
            for j in 0..ns {
                *a.at_mut(ns - 1, j) = 1.0;
            }
            let mut rhs = vec![0.0; ns];
            rhs[ns - 1] = 1.0;
            let d = linalg::solve(a, &rhs).ok_or(Error::Singular("solving stationarity"))?;
            Ok(d.into_iter().map(|x| x.max(0.0)).collect())
        }
    }
}

/// Closed communicating classes of the chain with positive-probability edges.
fn closed_classes(p: &Matrix) -> Vec<Vec<usize>> {
    let n = p.n;
    let mut reach = vec![false; n * n];
    for s in 0..n {
        let mut stack = vec![s];
        reach[s * n + s] = true;
        while let Some(u) = stack.pop() {
            for v in 0..n {
                if p.at(u, v) > 0.0 && !reach[s * n + v] {
                    reach[s * n + v] = true;
                    stack.push(v);
                }
            }
        }
    }
    let mut seen = vec![false; n];
    let mut classes = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        let class: Vec<usize> = (0..n)
            .filter(|&t| reach[s * n + t] && reach[t * n + s])
            .collect();
        for &t in &class {
            seen[t] = true;
        }
        let closed = (0..n).all(|t| !reach[s * n + t] || class.contains(&t));
        if closed {
            classes.push(class);
        }
    }
    classes
}

/// Roll out `policy` from the initial distribution until a terminal state or
/// `max_steps` transitions. The same `(mdp, policy, seed, max_steps)` always
/// yields the same trajectory.
pub fn sample_episode(
    mdp: &Mdp,
    policy: &TabularPolicy,
    rng_seed: u64,
    max_steps: usize,
) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let start = mdp.sample_initial(&mut rng);
    rollout(mdp, policy, &mut rng, start, max_steps, 0)
}

/// Roll out from a given state with a caller-owned generator.
pub fn rollout<R: Rng + ?Sized>(
    mdp: &Mdp,
    policy: &TabularPolicy,
    rng: &mut R,
    start: usize,
    max_steps: usize,
    behaviour_id: u64,
) -> Trajectory {
    let mut transitions = Vec::new();
    let mut s = start;
    while transitions.len() < max_steps && !mdp.is_terminal(s) {
        let a = policy.sample_action(rng, s);
        let s2 = mdp.sample_next(rng, s, a);
        transitions.push(Transition {
            state: s,
            action: a,
            reward: mdp.reward(s, a),
            behaviour: policy.row(s).to_vec(),
        });
        s = s2;
    }
    Trajectory {
        transitions,
        behaviour_id,
        start_state: start,
        final_state: s,
        terminated: mdp.is_terminal(s),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo;

    fn single_state(reward: f64, discount: f64) -> Mdp {
        Mdp::new(MdpParts {
            n_states: 1,
            n_actions: 1,
            transition: vec![1.0],
            reward: vec![reward],
            discount,
            terminal: vec![false],
            initial_distribution: vec![1.0],
        })
        .unwrap()
    }

    #[test]
    fn geometric_series_value() {
        let m = single_state(1.0, 0.9);
        let v = solve_v_exact(&m, &TabularPolicy::uniform(1, 1)).unwrap();
        assert!((v[0] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn terminal_start_has_zero_value() {
        let m = zoo::chain(4, 1.0, 0.9).unwrap();
        let pi = TabularPolicy::uniform(m.n_states(), m.n_actions());
        let v = solve_v_exact(&m, &pi).unwrap();
        let q = solve_q_exact(&m, &pi).unwrap();
        let t = m.n_states() - 1;
        assert!(m.is_terminal(t));
        assert_eq!(v[t], 0.0);
        assert!(q[t * m.n_actions()..(t + 1) * m.n_actions()]
            .iter()
            .all(|&x| x == 0.0));
    }

    #[test]
    fn rejects_bad_rows() {
        let mut parts = single_state(1.0, 0.9).into_parts();
        parts.transition = vec![0.9];
        assert!(Mdp::new(parts.clone()).is_err());
        parts.transition = vec![1.0];
        parts.discount = 1.0;
        assert!(Mdp::new(parts.clone()).is_err());
        parts.discount = 0.5;
        parts.terminal = vec![true];
        assert!(Mdp::new(parts).is_err(), "terminal with reward must fail");
    }

    #[test]
    fn bandit_q_values() {
        let m = zoo::prop2_bandit();
        let pi = TabularPolicy::uniform(m.n_states(), m.n_actions());
        let q = solve_q_exact(&m, &pi).unwrap();
        assert_eq!(&q[0..2], &[2.0, 5.0]);
    }

    #[test]
    fn stationary_cycle_is_uniform() {
        let m = Mdp::new(MdpParts {
            n_states: 2,
            n_actions: 1,
            transition: vec![0.0, 1.0, 1.0, 0.0],
            reward: vec![0.0, 0.0],
            discount: 0.9,
            terminal: vec![false, false],
            initial_distribution: vec![0.5, 0.5],
        })
        .unwrap();
        let pi = TabularPolicy::uniform(2, 1);
        let d = state_distribution(&m, &pi, DistributionKind::Stationary).unwrap();
        assert!((d[0] - 0.5).abs() < 1e-12 && (d[1] - 0.5).abs() < 1e-12);
        let single = single_state(0.0, 0.5);
        let d = state_distribution(&single, &TabularPolicy::uniform(1, 1), DistributionKind::Discounted)
            .unwrap();
        assert!((d[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stationary_reports_disconnected_components() {
        let m = Mdp::new(MdpParts {
            n_states: 3,
            n_actions: 1,
            transition: vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.5, 0.5, 0.0],
            reward: vec![0.0; 3],
            discount: 0.9,
            terminal: vec![false; 3],
            initial_distribution: vec![0.0, 0.0, 1.0],
        })
        .unwrap();
        let err = state_distribution(&m, &TabularPolicy::uniform(3, 1), DistributionKind::Stationary)
            .unwrap_err();
        assert_eq!(
            err,
            Error::NonUniqueStationary {
                classes: vec![vec![0], vec![1]]
            }
        );
    }

    #[test]
    fn chain_episode_has_exact_length() {
        let m = zoo::chain(3, 1.0, 0.9).unwrap();
        let pi = TabularPolicy::uniform(m.n_states(), m.n_actions());
        let tr = sample_episode(&m, &pi, 11, 100);
        assert_eq!(tr.len(), 3);
        assert!(tr.terminated);
        let rewards: Vec<f64> = tr.transitions.iter().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn one_hot_policy_logs_one_hot_rows() {
        let m = zoo::garnet(5, 3, 2, 0.9, 4).unwrap();
        let mut probs = vec![0.0; 15];
        for s in 0..5 {
            probs[s * 3 + 1] = 1.0;
        }
        let pi = TabularPolicy::new(5, 3, probs).unwrap();
        let tr = sample_episode(&m, &pi, 5, 50);
        assert_eq!(tr.len(), 50);
        assert!(tr.transitions.iter().all(|t| t.behaviour == vec![0.0, 1.0, 0.0]));
    }

    #[test]
    fn slicing_keeps_bootstrap_state() {
        let m = zoo::chain(5, 1.0, 0.9).unwrap();
        let pi = TabularPolicy::uniform(m.n_states(), m.n_actions());
        let tr = sample_episode(&m, &pi, 0, 100);
        let head = tr.slice(0, 2);
        assert_eq!(head.final_state, tr.transitions[2].state);
        assert!(!head.terminated);
        let tail = tr.slice(3, 10);
        assert!(tail.terminated);
        assert_eq!(tail.len(), 2);
    }
}
