//! Importance-sampled and V-trace return estimators, the implied policy,
//! the V-trace distortion factor and the on/off-policy mixing threshold.
//!
//! Ratio products are accumulated as sums of log-ratios and exponentiated
//! when a term is used, so long unclipped products do not overflow midway.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::math::{argmax_set, is_simplex, log_softmax, softmax};
use crate::mdp::{TabularPolicy, Trajectory, DOWNSTREAM_TOL};
use crate::{Error, Result};

/// Clipping constants `rho_bar` (TD term) and `c_bar` (trace continuation).
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClipConfig {
    pub rho_bar: f64,
    pub c_bar: f64,
}

impl ClipConfig {
    /// No clipping at all: V-trace degenerates to plain importance sampling.
    pub const UNCLIPPED: ClipConfig = ClipConfig {
        rho_bar: f64::INFINITY,
        c_bar: f64::INFINITY,
    };

    /// Requires `rho_bar >= c_bar >= 1`.
    pub fn new(rho_bar: f64, c_bar: f64) -> Result<Self> {
        let c = ClipConfig { rho_bar, c_bar };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rho_bar.is_nan() || self.c_bar.is_nan() || !(self.rho_bar >= self.c_bar && self.c_bar >= 1.0) {
            return Err(Error::invalid(
                "clip",
                format!(
                    "need rho_bar >= c_bar >= 1, got rho_bar={} c_bar={}",
                    self.rho_bar, self.c_bar
                ),
            ));
        }
        Ok(())
    }
}

impl Default for ClipConfig {
    fn default() -> Self {
        ClipConfig {
            rho_bar: 1.0,
            c_bar: 1.0,
        }
    }
}

/// A return target plus the diagnostics of how it was accumulated.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReturnEstimate {
    pub value: f64,
    /// Number of correction terms summed before the estimator bootstrapped.
    pub bootstrap_step: usize,
    /// Coefficient multiplying `gamma^k delta_k` for every summed term.
    pub per_step_weights: Vec<f64>,
    /// Trust-region acceptance per step; all `true` for plain estimators.
    pub masked: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Correction {
    Importance,
    Vtrace(ClipConfig),
}

/// `ln(pi(a_t|s_t) / mu(a_t|s_t))` for every step.
pub(crate) fn log_ratios(traj: &Trajectory, target: &TabularPolicy) -> Result<Vec<f64>> {
    traj.transitions
        .iter()
        .enumerate()
        .map(|(step, tr)| {
            let mu = tr.behaviour.get(tr.action).copied().unwrap_or(0.0);
            if mu <= 0.0 {
                return Err(Error::ZeroBehaviourProbability {
                    step,
                    action: tr.action,
                });
            }
            Ok(libm::log(target.prob(tr.state, tr.action)) - libm::log(mu))
        })
        .collect()
}

fn check_shapes(traj: &Trajectory, target: &TabularPolicy, bootstrap: &[f64]) -> Result<()> {
    if bootstrap.len() != target.n_states() {
        return Err(Error::Shape {
            what: "bootstrap values",
            expected: target.n_states(),
            actual: bootstrap.len(),
        });
    }
    for tr in &traj.transitions {
        if tr.state >= target.n_states() || tr.action >= target.n_actions() {
            return Err(Error::invalid("trajectory", "state or action out of range"));
        }
    }
    Ok(())
}

/// Forward sum `V(s_0) + sum_k gamma^k w_k delta_k`, where `w_k` is the
/// (masked) ratio product of the chosen correction.
pub(crate) fn accumulate(
    traj: &Trajectory,
    target: &TabularPolicy,
    bootstrap: &[f64],
    discount: f64,
    horizon: usize,
    mask: Option<&[bool]>,
    correction: Correction,
) -> Result<ReturnEstimate> {
    check_shapes(traj, target, bootstrap)?;
    if horizon == 0 || horizon > traj.len() {
        return Err(Error::invalid(
            "horizon",
            format!("K={horizon} must be in 1..={}", traj.len()),
        ));
    }
    let lr = log_ratios(traj, target)?;
    let accepted = |t: usize| mask.is_none_or(|m| m[t]);
    // The sum is regrouped as rewards plus one coefficient per visited
    // state, `gamma^k (w_{k-1} - w_k) V(s_k)`. Equal consecutive weights then
    // cancel exactly instead of leaving rounding from `V` in the result.
    let mut rewards = 0.0;
    let mut values = 0.0;
    let mut prev_w = 1.0;
    let mut weights = Vec::with_capacity(horizon);
    // log of the trace product carried into step k
    let mut log_trace = 0.0;
    let mut discount_k = 1.0;
    let mut bootstrap_step = horizon;
    for k in 0..horizon {
        if !accepted(k) {
            bootstrap_step = k;
            break;
        }
        let tr = &traj.transitions[k];
        let log_w = match correction {
            Correction::Importance => {
                log_trace += lr[k];
                log_trace
            }
            Correction::Vtrace(clip) => {
                let w = log_trace + lr[k].min(libm::log(clip.rho_bar));
                log_trace += lr[k].min(libm::log(clip.c_bar));
                w
            }
        };
        let w = libm::exp(log_w);
        weights.push(w);
        if w != 0.0 {
            rewards += discount_k * w * tr.reward;
        }
        if prev_w != w {
            values += discount_k * (prev_w - w) * bootstrap[tr.state];
        }
        prev_w = w;
        discount_k *= discount;
    }
    let tail = if bootstrap_step == 0 {
        bootstrap[traj.start_state]
    } else if bootstrap_step < horizon {
        bootstrap[traj.transitions[bootstrap_step].state]
    } else {
        traj.next_value(horizon - 1, bootstrap)
    };
    if prev_w != 0.0 {
        values += discount_k * prev_w * tail;
    }
    Ok(ReturnEstimate {
        value: rewards + values,
        bootstrap_step,
        per_step_weights: weights,
        masked: match mask {
            Some(m) => m.to_vec(),
            None => vec![true; traj.len()],
        },
    })
}

/// Multi-step importance-sampled return over the first `horizon` steps:
/// `V(s_0) + sum_k gamma^k (prod_{i<=k} pi_i / mu_i) delta_k V`.
pub fn is_return(
    traj: &Trajectory,
    target: &TabularPolicy,
    bootstrap: &[f64],
    discount: f64,
    horizon: usize,
) -> Result<ReturnEstimate> {
    accumulate(traj, target, bootstrap, discount, horizon, None, Correction::Importance)
}

/// V-trace return: `V(s_0) + sum_k gamma^k (prod_{i<k} c_i) rho_k delta_k V`
/// with `rho = min(pi/mu, rho_bar)` and `c = min(pi/mu, c_bar)`.
pub fn vtrace_return(
    traj: &Trajectory,
    target: &TabularPolicy,
    bootstrap: &[f64],
    discount: f64,
    clip: ClipConfig,
    horizon: usize,
) -> Result<ReturnEstimate> {
    clip.validate()?;
    accumulate(
        traj,
        target,
        bootstrap,
        discount,
        horizon,
        None,
        Correction::Vtrace(clip),
    )
}

/// V-trace targets `v_t` for every step by the backward recursion
/// `v_t - V(s_t) = lambda_t (rho_t delta_t + gamma c_t (v_{t+1} - V(s_{t+1})))`.
///
/// Returns `(targets, clipped rho per step)`. With `clip = UNCLIPPED` this
/// is the importance-sampled return of every suffix.
pub fn vtrace_targets(
    traj: &Trajectory,
    target: &TabularPolicy,
    bootstrap: &[f64],
    discount: f64,
    clip: ClipConfig,
    mask: Option<&[bool]>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_shapes(traj, target, bootstrap)?;
    let lr = log_ratios(traj, target)?;
    let n = traj.len();
    let mut targets = vec![0.0; n];
    let mut rhos = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let tr = &traj.transitions[t];
        let rho = libm::exp(lr[t].min(libm::log(clip.rho_bar)));
        let c = libm::exp(lr[t].min(libm::log(clip.c_bar)));
        let delta = tr.reward + discount * traj.next_value(t, bootstrap) - bootstrap[tr.state];
        let lambda = mask.is_none_or(|m| m[t]);
        acc = if lambda {
            rho * delta + discount * c * acc
        } else {
            0.0
        };
        targets[t] = bootstrap[tr.state] + acc;
        rhos[t] = rho;
    }
    Ok((targets, rhos))
}

fn check_row_pair(target_row: &[f64], behaviour_row: &[f64]) -> Result<()> {
    if target_row.len() != behaviour_row.len() {
        return Err(Error::Shape {
            what: "behaviour row",
            expected: target_row.len(),
            actual: behaviour_row.len(),
        });
    }
    if !is_simplex(target_row, DOWNSTREAM_TOL) || !is_simplex(behaviour_row, DOWNSTREAM_TOL) {
        return Err(Error::invalid("policy row", "not a probability distribution"));
    }
    Ok(())
}

/// Policy whose value the V-trace operator converges to:
/// `pi~(a) = min(rho_bar mu(a), pi(a)) / sum_b min(rho_bar mu(b), pi(b))`.
pub fn implied_policy(target_row: &[f64], behaviour_row: &[f64], rho_bar: f64) -> Result<Vec<f64>> {
    check_row_pair(target_row, behaviour_row)?;
    if rho_bar.is_nan() || rho_bar < 1.0 {
        return Err(Error::invalid("rho_bar", "must be at least 1"));
    }
    let mins: Vec<f64> = target_row
        .iter()
        .zip(behaviour_row)
        .map(|(&p, &m)| if m == 0.0 { 0.0 } else { p.min(rho_bar * m) })
        .collect();
    let z: f64 = mins.iter().sum();
    if z <= 0.0 {
        return Err(Error::invalid(
            "implied policy",
            "behaviour does not overlap the target's support",
        ));
    }
    Ok(mins.into_iter().map(|x| x / z).collect())
}

/// Distortion `omega(a) = min(1, rho_bar mu(a) / pi(a))` of the V-trace
/// policy gradient.
pub fn omega(target_row: &[f64], behaviour_row: &[f64], rho_bar: f64, action: usize) -> Result<f64> {
    check_row_pair(target_row, behaviour_row)?;
    let p = *target_row
        .get(action)
        .ok_or_else(|| Error::invalid("action", "out of range"))?;
    if p <= 0.0 {
        return Err(Error::ZeroTargetProbability { action });
    }
    let m = behaviour_row[action];
    if m == 0.0 {
        return Ok(0.0);
    }
    Ok((rho_bar * m / p).min(1.0))
}

/// [`omega`] for every action.
pub fn omega_row(target_row: &[f64], behaviour_row: &[f64], rho_bar: f64) -> Result<Vec<f64>> {
    (0..target_row.len())
        .map(|a| omega(target_row, behaviour_row, rho_bar, a))
        .collect()
}

/// Implied action values `Q^omega = Q * omega` elementwise.
pub fn q_omega(q_row: &[f64], omega_row: &[f64]) -> Vec<f64> {
    q_row.iter().zip(omega_row).map(|(q, w)| q * w).collect()
}

/// `Q^alpha = alpha d_pi Q + (1 - alpha) d_mu Q^omega`.
pub fn q_alpha(q_row: &[f64], q_omega_row: &[f64], d_pi: f64, d_mu: f64, alpha: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid("alpha", "must be in [0, 1]"));
    }
    if d_pi < 0.0 || d_mu < 0.0 {
        return Err(Error::invalid("state distribution", "must be nonnegative"));
    }
    Ok(q_row
        .iter()
        .zip(q_omega_row)
        .map(|(q, qw)| q * d_pi * alpha + qw * d_mu * (1.0 - alpha))
        .collect())
}

/// Smallest on-policy fraction `alpha*` such that every `alpha > alpha*`
/// keeps the argmax of [`q_alpha`] inside the best-action set of `Q`.
///
/// With `R = min_{a* in A*} max_{b not in A*} (Qw(b) - Qw(a*)) / (Q(a*) - Q(b)) * d_mu / d_pi`
/// the condition is `alpha / (1 - alpha) > R`, so `alpha* = R / (1 + R)`,
/// or `0` when `R <= 0`.
pub fn min_alpha(q_row: &[f64], q_omega_row: &[f64], d_pi: f64, d_mu: f64) -> Result<f64> {
    if q_row.len() != q_omega_row.len() || q_row.is_empty() {
        return Err(Error::invalid("q rows", "must be nonempty and of equal length"));
    }
    let best = argmax_set(q_row);
    let others: Vec<usize> = (0..q_row.len()).filter(|b| !best.contains(b)).collect();
    if others.is_empty() || d_mu == 0.0 {
        return Ok(0.0);
    }
    let ratio = best
        .iter()
        .map(|&a| {
            others
                .iter()
                .map(|&b| (q_omega_row[b] - q_omega_row[a]) / (q_row[a] - q_row[b]))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .fold(f64::INFINITY, f64::min);
    if ratio <= 0.0 {
        return Ok(0.0);
    }
    if d_pi == 0.0 {
        return Err(Error::UnboundedThreshold);
    }
    let r = ratio * d_mu / d_pi;
    Ok(r / (1.0 + r))
}

/// Where a batch trajectory came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Origin {
    Online,
    Replay,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTrajectory {
    pub trajectory: Trajectory,
    pub origin: Origin,
}

impl LabeledTrajectory {
    pub fn online(trajectory: Trajectory) -> Self {
        LabeledTrajectory {
            trajectory,
            origin: Origin::Online,
        }
    }

    pub fn replay(trajectory: Trajectory) -> Self {
        LabeledTrajectory {
            trajectory,
            origin: Origin::Replay,
        }
    }
}

/// How the policy-gradient estimate treats the batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PgMode {
    /// Ignore behaviour rows: unit ratios, n-step returns.
    OnPolicy,
    /// Clipped V-trace ratios and targets on every trajectory.
    VtraceOffPolicy,
    /// `alpha * mean(online) + (1 - alpha) * mean(replay)`, both V-trace.
    Mixed { online_fraction: f64 },
}

/// Action-value target used in the policy-gradient term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum AdvantageForm {
    /// `A_t = v_t - V(s_t)` with `v_t` the V-trace target at `s_t`.
    #[default]
    VtraceTarget,
    /// `A_t = r_t + gamma v_{t+1} - V(s_t)`.
    NextStateTarget,
    /// `r_t + gamma v_{t+1}` with no baseline subtracted.
    NextStateNoBaseline,
}

/// Everything the losses need about one transition, with targets frozen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreparedStep {
    pub state: usize,
    pub action: usize,
    /// V-trace value target `v_t`.
    pub value_target: f64,
    pub advantage: f64,
    /// Clipped ratio weighting the policy-gradient term.
    pub rho: f64,
    pub accepted: bool,
    pub origin: Origin,
}

/// Freeze value targets, advantages and ratios for a trajectory.
///
/// `on_policy` forces unit ratios regardless of the logged behaviour.
#[allow(clippy::too_many_arguments)]
pub fn prepare_steps(
    labeled: &LabeledTrajectory,
    target: &TabularPolicy,
    bootstrap: &[f64],
    discount: f64,
    clip: ClipConfig,
    mask: Option<&[bool]>,
    form: AdvantageForm,
    on_policy: bool,
) -> Result<Vec<PreparedStep>> {
    let traj = &labeled.trajectory;
    traj.validate()?;
    let (targets, rhos) = if on_policy {
        let mut own = traj.clone();
        for tr in &mut own.transitions {
            tr.behaviour = target.row(tr.state).to_vec();
        }
        vtrace_targets(&own, target, bootstrap, discount, ClipConfig::default(), mask)?
    } else {
        vtrace_targets(traj, target, bootstrap, discount, clip, mask)?
    };
    let n = traj.len();
    Ok((0..n)
        .map(|t| {
            let tr = &traj.transitions[t];
            let next_target = if t + 1 < n {
                // a rejected successor bootstraps from V
                if mask.is_none_or(|m| m[t + 1]) {
                    targets[t + 1]
                } else {
                    bootstrap[traj.transitions[t + 1].state]
                }
            } else {
                traj.next_value(t, bootstrap)
            };
            let q = tr.reward + discount * next_target;
            let advantage = match form {
                AdvantageForm::VtraceTarget => targets[t] - bootstrap[tr.state],
                AdvantageForm::NextStateTarget => q - bootstrap[tr.state],
                AdvantageForm::NextStateNoBaseline => q,
            };
            PreparedStep {
                state: tr.state,
                action: tr.action,
                value_target: targets[t],
                advantage,
                rho: rhos[t],
                accepted: mask.is_none_or(|m| m[t]),
                origin: labeled.origin,
            }
        })
        .collect())
}

/// Ascent direction of `rho_t A_t log pi(a_t|s_t)` averaged over the batch,
/// as a gradient table over the policy logits (`n_states x n_actions`).
#[allow(clippy::too_many_arguments)]
pub fn policy_gradient_estimate(
    batch: &[LabeledTrajectory],
    logits: &[f64],
    n_actions: usize,
    bootstrap: &[f64],
    discount: f64,
    clip: ClipConfig,
    mode: PgMode,
    form: AdvantageForm,
) -> Result<Vec<f64>> {
    let n_states = bootstrap.len();
    if logits.len() != n_states * n_actions {
        return Err(Error::Shape {
            what: "logits",
            expected: n_states * n_actions,
            actual: logits.len(),
        });
    }
    let target = TabularPolicy::from_logits(n_states, n_actions, logits);
    let on_policy = matches!(mode, PgMode::OnPolicy);
    if let PgMode::Mixed { online_fraction } = mode {
        if !(0.0..=1.0).contains(&online_fraction) {
            return Err(Error::invalid("online fraction", "must be in [0, 1]"));
        }
        if !batch.iter().any(|l| l.origin == Origin::Online) {
            return Err(Error::NoOnlineData);
        }
    }
    let mut online = vec![0.0; logits.len()];
    let mut replay = vec![0.0; logits.len()];
    let (mut n_online, mut n_replay) = (0usize, 0usize);
    for labeled in batch {
        let steps = prepare_steps(labeled, &target, bootstrap, discount, clip, None, form, on_policy)?;
        let (acc, count) = match labeled.origin {
            Origin::Online => (&mut online, &mut n_online),
            Origin::Replay => (&mut replay, &mut n_replay),
        };
        for st in steps {
            add_log_prob_gradient(acc, target.row(st.state), st.state, st.action, st.rho * st.advantage);
            *count += 1;
        }
    }
    let (w_online, w_replay) = match mode {
        PgMode::Mixed { online_fraction } if n_replay > 0 => (
            online_fraction / n_online as f64,
            (1.0 - online_fraction) / n_replay as f64,
        ),
        _ => {
            let n = (n_online + n_replay).max(1) as f64;
            (1.0 / n, 1.0 / n)
        }
    };
    Ok(online
        .iter()
        .zip(&replay)
        .map(|(o, r)| o * w_online + r * w_replay)
        .collect())
}

/// `acc[s, .] += scale * (onehot(a) - pi(.|s))`, the softmax score function.
pub(crate) fn add_log_prob_gradient(acc: &mut [f64], probs: &[f64], state: usize, action: usize, scale: f64) {
    let na = probs.len();
    let row = &mut acc[state * na..(state + 1) * na];
    for (j, (g, &p)) in row.iter_mut().zip(probs).enumerate() {
        let onehot = if j == action { 1.0 } else { 0.0 };
        *g += scale * (onehot - p);
    }
}

/// `log pi(a|s)` for a logits table.
pub fn log_prob(logits: &[f64], n_actions: usize, state: usize, action: usize) -> f64 {
    log_softmax(&logits[state * n_actions..(state + 1) * n_actions])[action]
}

/// Softmax probabilities of one logits row.
pub fn policy_row(logits: &[f64], n_actions: usize, state: usize) -> Vec<f64> {
    softmax(&logits[state * n_actions..(state + 1) * n_actions])
}
