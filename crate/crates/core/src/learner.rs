//! Tabular softmax actor-critic update with V-trace targets and an optional
//! trust-region mask.
//!
//! For a batch of `N` transitions the minimised objective is
//!
//! ```text
//! L = 1/N sum_t M_t [ 1/2 (v_t - V(s_t))^2 - rho_t A_t log pi(a_t|s_t) ]
//!     - entropy_cost / N sum_{t online} M_t H(pi(.|s_t))
//! ```
//!
//! with `v_t`, `rho_t`, `A_t` and `M_t` computed once from the parameters at
//! the start of the step and then held fixed.

use alloc::vec;
use alloc::vec::Vec;

use crate::estimators::{prepare_steps, AdvantageForm, ClipConfig, LabeledTrajectory, Origin, PreparedStep};
use crate::math::{entropy, kl_divergence, log_softmax, softmax};
use crate::mdp::TabularPolicy;
use crate::trust_region::{compute_mask, kl_relevance, RelevanceConfig};
use crate::{Error, Result};

/// Learner-owned parameters: policy logits, value table and step counter.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AgentParams {
    pub n_states: usize,
    pub n_actions: usize,
    /// Row-major `n_states x n_actions`.
    pub logits: Vec<f64>,
    pub values: Vec<f64>,
    pub iteration: u64,
}

impl AgentParams {
    /// Uniform policy and zero values.
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        AgentParams {
            n_states,
            n_actions,
            logits: vec![0.0; n_states * n_actions],
            values: vec![0.0; n_states],
            iteration: 0,
        }
    }

    pub fn policy(&self) -> TabularPolicy {
        TabularPolicy::from_logits(self.n_states, self.n_actions, &self.logits)
    }

    pub fn logits_row(&self, s: usize) -> &[f64] {
        &self.logits[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn is_finite(&self) -> bool {
        self.logits.iter().chain(&self.values).all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LearnerConfig {
    pub learning_rate: f64,
    pub entropy_cost: f64,
    pub discount: f64,
    pub clip: ClipConfig,
    /// `None` disables the trust region (every step accepted).
    pub trust_region: Option<RelevanceConfig>,
    pub advantage: AdvantageForm,
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate", "must be positive and finite"));
        }
        if !(self.entropy_cost >= 0.0 && self.entropy_cost.is_finite()) {
            return Err(Error::invalid("entropy_cost", "must be nonnegative and finite"));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::invalid("discount", "must be in [0, 1)"));
        }
        self.clip.validate()?;
        if let Some(tr) = &self.trust_region {
            tr.validate()?;
        }
        Ok(())
    }
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            learning_rate: 0.1,
            entropy_cost: 0.01,
            discount: 0.99,
            clip: ClipConfig::default(),
            trust_region: None,
            advantage: AdvantageForm::VtraceTarget,
        }
    }
}

/// Targets, ratios, advantages and masks for one step, frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenBatch {
    pub steps: Vec<PreparedStep>,
    /// Mean `KL(pi || pi~_mu)` over steps.
    pub mean_kl_implied: f64,
    /// Mean `KL(pi || mu)` over steps.
    pub mean_kl_behaviour: f64,
}

impl FrozenBatch {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn accepted(&self) -> usize {
        self.steps.iter().filter(|s| s.accepted).count()
    }
}

/// Freeze everything that is treated as a constant by the update.
pub fn freeze_batch(params: &AgentParams, batch: &[LabeledTrajectory], cfg: &LearnerConfig) -> Result<FrozenBatch> {
    let pi = params.policy();
    let mut steps = Vec::new();
    let (mut kl_i, mut kl_b) = (0.0, 0.0);
    for labeled in batch {
        let traj = &labeled.trajectory;
        for tr in &traj.transitions {
            if tr.state >= params.n_states || tr.behaviour.len() != params.n_actions {
                return Err(Error::invalid("batch", "trajectory does not match the parameter shape"));
            }
            let row = pi.row(tr.state);
            kl_i += kl_relevance(row, &tr.behaviour, cfg.clip.rho_bar);
            kl_b += kl_divergence(row, &tr.behaviour);
        }
        let mask = cfg.trust_region.map(|tr| compute_mask(traj, &pi, &tr).mask);
        steps.extend(prepare_steps(
            labeled,
            &pi,
            &params.values,
            cfg.discount,
            cfg.clip,
            mask.as_deref(),
            cfg.advantage,
            false,
        )?);
    }
    let n = steps.len().max(1) as f64;
    Ok(FrozenBatch {
        steps,
        mean_kl_implied: kl_i / n,
        mean_kl_behaviour: kl_b / n,
    })
}

/// Value of the surrogate objective `L` at `params` for a frozen batch.
pub fn surrogate_loss(params: &AgentParams, frozen: &FrozenBatch, entropy_cost: f64) -> f64 {
    let n = frozen.len().max(1) as f64;
    let na = params.n_actions;
    frozen
        .steps
        .iter()
        .filter(|st| st.accepted)
        .map(|st| {
            let row = params.logits_row(st.state);
            let lp = log_softmax(row)[st.action];
            let err = st.value_target - params.values[st.state];
            let mut l = 0.5 * err * err - st.rho * st.advantage * lp;
            if st.origin == Origin::Online {
                l -= entropy_cost * entropy(&softmax(row));
            }
            debug_assert_eq!(row.len(), na);
            l / n
        })
        .sum()
}

/// Gradient of [`surrogate_loss`] as `(d logits, d values)`.
pub fn surrogate_gradient(params: &AgentParams, frozen: &FrozenBatch, entropy_cost: f64) -> (Vec<f64>, Vec<f64>) {
    let n = frozen.len().max(1) as f64;
    let na = params.n_actions;
    let mut g_logits = vec![0.0; params.logits.len()];
    let mut g_values = vec![0.0; params.values.len()];
    for st in frozen.steps.iter().filter(|st| st.accepted) {
        let probs = softmax(params.logits_row(st.state));
        g_values[st.state] -= (st.value_target - params.values[st.state]) / n;
        let g = &mut g_logits[st.state * na..(st.state + 1) * na];
        let pg = st.rho * st.advantage / n;
        for (j, (gj, &pj)) in g.iter_mut().zip(&probs).enumerate() {
            let onehot = if j == st.action { 1.0 } else { 0.0 };
            *gj -= pg * (onehot - pj);
        }
        if st.origin == Origin::Online && entropy_cost > 0.0 {
            let h = entropy(&probs);
            for (gj, &pj) in g.iter_mut().zip(&probs) {
                // dH/dz_j = -p_j (log p_j + H)
                if pj > 0.0 {
                    *gj += entropy_cost / n * pj * (libm::log(pj) + h);
                }
            }
        }
    }
    (g_logits, g_values)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepDiagnostics {
    pub transitions: usize,
    /// Fraction of transitions accepted by the mask.
    pub mask_acceptance: f64,
    /// Whole batch rejected; the step changed nothing.
    pub fully_masked: bool,
    pub value_loss: f64,
    pub policy_loss: f64,
    pub entropy: f64,
    pub mean_abs_advantage: f64,
    pub mean_kl_implied: f64,
    pub mean_kl_behaviour: f64,
}

/// One SGD step on the surrogate objective.
pub fn learner_step(
    params: &AgentParams,
    batch: &[LabeledTrajectory],
    cfg: &LearnerConfig,
) -> Result<(AgentParams, StepDiagnostics)> {
    cfg.validate()?;
    let frozen = freeze_batch(params, batch, cfg)?;
    let accepted = frozen.accepted();
    let n = frozen.len();
    let mut diag = StepDiagnostics {
        transitions: n,
        mask_acceptance: if n == 0 { 0.0 } else { accepted as f64 / n as f64 },
        fully_masked: accepted == 0,
        mean_kl_implied: frozen.mean_kl_implied,
        mean_kl_behaviour: frozen.mean_kl_behaviour,
        ..StepDiagnostics::default()
    };
    let mut next = params.clone();
    next.iteration += 1;
    if accepted == 0 {
        return Ok((next, diag));
    }
    let denom = accepted as f64;
    for st in frozen.steps.iter().filter(|s| s.accepted) {
        let row = params.logits_row(st.state);
        let err = st.value_target - params.values[st.state];
        diag.value_loss += 0.5 * err * err / denom;
        diag.policy_loss -= st.rho * st.advantage * log_softmax(row)[st.action] / denom;
        diag.entropy += entropy(&softmax(row)) / denom;
        diag.mean_abs_advantage += libm::fabs(st.advantage) / denom;
    }
    let (gl, gv) = surrogate_gradient(params, &frozen, cfg.entropy_cost);
    if gl.iter().chain(&gv).any(|g| !g.is_finite()) {
        return Err(Error::invalid("gradient", "non-finite gradient"));
    }
    for (p, g) in next.logits.iter_mut().zip(&gl) {
        *p -= cfg.learning_rate * g;
    }
    for (v, g) in next.values.iter_mut().zip(&gv) {
        *v -= cfg.learning_rate * g;
    }
    if !next.is_finite() {
        return Err(Error::invalid("parameters", "update produced non-finite values"));
    }
    Ok((next, diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{Trajectory, Transition};

    fn batch(behaviour: [f64; 2], action: usize, reward: f64) -> Vec<LabeledTrajectory> {
        vec![LabeledTrajectory::online(Trajectory {
            transitions: vec![Transition {
                state: 0,
                action,
                reward,
                behaviour: behaviour.to_vec(),
            }],
            behaviour_id: 0,
            start_state: 0,
            final_state: 1,
            terminated: true,
        })]
    }

    #[test]
    fn zero_advantage_changes_only_entropy_direction() {
        let mut params = AgentParams::zeros(2, 2);
        params.logits[0] = 0.7;
        params.values[0] = 2.0;
        let cfg = LearnerConfig {
            learning_rate: 0.5,
            entropy_cost: 0.1,
            discount: 0.9,
            ..LearnerConfig::default()
        };
        let pi0 = params.policy();
        let (next, diag) = learner_step(&params, &batch([pi0.prob(0, 0), pi0.prob(0, 1)], 0, 2.0), &cfg).unwrap();
        assert_eq!(next.values, params.values);
        assert_eq!(diag.mean_abs_advantage, 0.0);
        // entropy bonus pulls the logits together
        assert!(next.logits[0] - next.logits[1] < params.logits[0] - params.logits[1]);
    }

    #[test]
    fn fully_masked_batch_is_a_noop() {
        let params = AgentParams::zeros(2, 2);
        let cfg = LearnerConfig {
            trust_region: Some(RelevanceConfig::new(0.01).unwrap()),
            ..LearnerConfig::default()
        };
        let (next, diag) = learner_step(&params, &batch([0.99, 0.01], 0, 1.0), &cfg).unwrap();
        assert!(diag.fully_masked);
        assert_eq!(next.logits, params.logits);
        assert_eq!(next.values, params.values);
        assert_eq!(next.iteration, 1);
    }

    #[test]
    fn wide_trust_region_equals_disabled() {
        let mut params = AgentParams::zeros(2, 2);
        params.logits[1] = -0.4;
        let plain = LearnerConfig::default();
        let wide = LearnerConfig {
            trust_region: Some(RelevanceConfig::new(1e300).unwrap()),
            ..plain
        };
        let b = batch([0.8, 0.2], 1, 3.0);
        assert_eq!(learner_step(&params, &b, &plain).unwrap().0, learner_step(&params, &b, &wide).unwrap().0);
    }
}
