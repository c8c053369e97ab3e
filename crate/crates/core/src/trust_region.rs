//! Behaviour relevance, per-state acceptance masks and the trust-region
//! return estimators.
//!
//! A behaviour is accepted at a state when its relevance score there is
//! below the threshold `b`. Masks read only the stored behaviour row and the
//! target row of each visited state, never the sampled action.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::estimators::{accumulate, implied_policy, ClipConfig, Correction, ReturnEstimate};
use crate::math::kl_divergence;
use crate::mdp::{TabularPolicy, Trajectory};
use crate::{Error, Result};

/// Which divergence scores a behaviour against the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum RelevanceKind {
    /// `KL(pi || pi~_mu)` against the implied policy.
    #[default]
    KlImplied,
    /// `KL(pi || mu)` against the raw behaviour.
    KlBehaviour,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RelevanceConfig {
    /// Acceptance threshold `b` in nats.
    pub threshold_b: f64,
    pub kind: RelevanceKind,
    /// Clipping constant used to form the implied policy.
    pub rho_bar: f64,
}

impl RelevanceConfig {
    pub fn new(threshold_b: f64) -> Result<Self> {
        let cfg = RelevanceConfig {
            threshold_b,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold_b > 0.0) || self.threshold_b.is_nan() {
            return Err(Error::invalid("threshold_b", "must be positive"));
        }
        if !(self.rho_bar >= 1.0) {
            return Err(Error::invalid("rho_bar", "must be at least 1"));
        }
        Ok(())
    }

    /// Relevance score of one behaviour row at one state.
    pub fn relevance(&self, target_row: &[f64], behaviour_row: &[f64]) -> f64 {
        match self.kind {
            RelevanceKind::KlImplied => kl_relevance(target_row, behaviour_row, self.rho_bar),
            RelevanceKind::KlBehaviour => kl_divergence(target_row, behaviour_row),
        }
    }

    pub fn accepts(&self, target_row: &[f64], behaviour_row: &[f64]) -> bool {
        self.relevance(target_row, behaviour_row) < self.threshold_b
    }
}

impl Default for RelevanceConfig {
    fn default() -> Self {
        RelevanceConfig {
            threshold_b: 0.5,
            kind: RelevanceKind::KlImplied,
            rho_bar: 1.0,
        }
    }
}

/// `KL(pi || pi~_mu)`. Returns `+inf` when the behaviour misses the target's
/// support entirely, so such behaviour is always rejected.
pub fn kl_relevance(target_row: &[f64], behaviour_row: &[f64], rho_bar: f64) -> f64 {
    match implied_policy(target_row, behaviour_row, rho_bar) {
        Ok(implied) => kl_divergence(target_row, &implied),
        Err(_) => f64::INFINITY,
    }
}

/// A trajectory with its per-step acceptance flags `lambda_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedTrajectory {
    pub base: Trajectory,
    pub mask: Vec<bool>,
}

impl MaskedTrajectory {
    /// Mask that accepts every step.
    pub fn accept_all(base: Trajectory) -> Self {
        let mask = vec![true; base.len()];
        MaskedTrajectory { base, mask }
    }

    pub fn accepted(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

pub fn compute_mask(traj: &Trajectory, target: &TabularPolicy, cfg: &RelevanceConfig) -> MaskedTrajectory {
    let mask = traj
        .transitions
        .iter()
        .map(|tr| cfg.accepts(target.row(tr.state), &tr.behaviour))
        .collect();
    MaskedTrajectory {
        base: traj.clone(),
        mask,
    }
}

fn masked_return(
    masked: &MaskedTrajectory,
    target: &TabularPolicy,
    bootstrap: &[f64],
    discount: f64,
    correction: Correction,
) -> Result<ReturnEstimate> {
    if masked.mask.len() != masked.base.len() {
        return Err(Error::Shape {
            what: "mask",
            expected: masked.base.len(),
            actual: masked.mask.len(),
        });
    }
    match masked.mask.first() {
        None => Err(Error::invalid("trajectory", "empty")),
        Some(false) => Err(Error::Rejected {
            state: masked.base.start_state,
        }),
        Some(true) => accumulate(
            &masked.base,
            target,
            bootstrap,
            discount,
            masked.base.len(),
            Some(&masked.mask),
            correction,
        ),
    }
}

/// Importance-sampled return with every term after the first rejected step
/// dropped. A rejected head state yields [`Error::Rejected`].
pub fn trusted_is_return(
    masked: &MaskedTrajectory,
    target: &TabularPolicy,
    bootstrap: &[f64],
    discount: f64,
) -> Result<ReturnEstimate> {
    masked_return(masked, target, bootstrap, discount, Correction::Importance)
}

/// V-trace counterpart of [`trusted_is_return`].
pub fn trusted_vtrace_return(
    masked: &MaskedTrajectory,
    target: &TabularPolicy,
    bootstrap: &[f64],
    discount: f64,
    clip: ClipConfig,
) -> Result<ReturnEstimate> {
    clip.validate()?;
    masked_return(masked, target, bootstrap, discount, Correction::Vtrace(clip))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum EstimatorKind {
    Is,
    #[default]
    Vtrace,
}

/// How many `(state, behaviour)` pairs the mask rejected.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AcceptanceStats {
    pub pairs_total: usize,
    pub pairs_rejected: usize,
    /// Rejected fraction of the behaviours seen at each state, `None` when
    /// the state never appeared.
    pub per_state_rejected: Vec<Option<f64>>,
}

impl AcceptanceStats {
    pub fn fraction_rejected(&self) -> f64 {
        if self.pairs_total == 0 {
            0.0
        } else {
            self.pairs_rejected as f64 / self.pairs_total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrustedValueEstimate {
    /// Average accepted return per state; `None` when nothing was accepted.
    pub values: Vec<Option<f64>>,
    pub samples: Vec<usize>,
    pub stats: AcceptanceStats,
}

impl TrustedValueEstimate {
    /// Replace absent states by the bootstrap value.
    pub fn or_bootstrap(&self, bootstrap: &[f64]) -> Vec<f64> {
        self.values
            .iter()
            .zip(bootstrap)
            .map(|(v, b)| v.unwrap_or(*b))
            .collect()
    }
}

/// Per-state trust-region value estimate from a batch of trajectories.
///
/// Every step of every trajectory starts a return (the suffix from that
/// step). Steps whose behaviour is rejected at their state contribute
/// nothing; the estimate is the plain average over accepted samples.
#[allow(clippy::too_many_arguments)]
pub fn trusted_value_estimate(
    batch: &[Trajectory],
    target: &TabularPolicy,
    bootstrap: &[f64],
    discount: f64,
    clip: ClipConfig,
    cfg: &RelevanceConfig,
    kind: EstimatorKind,
) -> Result<TrustedValueEstimate> {
    let ns = target.n_states();
    let mut sums = vec![0.0; ns];
    let mut samples = vec![0usize; ns];
    // (state, behaviour id) -> accepted
    let mut pairs: BTreeMap<(usize, u64), bool> = BTreeMap::new();
    for traj in batch {
        traj.validate()?;
        let masked = compute_mask(traj, target, cfg);
        for (t, tr) in traj.transitions.iter().enumerate() {
            let entry = pairs.entry((tr.state, traj.behaviour_id)).or_insert(true);
            *entry &= masked.mask[t];
            if !masked.mask[t] {
                continue;
            }
            let suffix = MaskedTrajectory {
                base: traj.slice(t, traj.len()),
                mask: masked.mask[t..].to_vec(),
            };
            let est = match kind {
                EstimatorKind::Is => trusted_is_return(&suffix, target, bootstrap, discount)?,
                EstimatorKind::Vtrace => trusted_vtrace_return(&suffix, target, bootstrap, discount, clip)?,
            };
            sums[tr.state] += est.value;
            samples[tr.state] += 1;
        }
    }
    let mut seen = vec![0usize; ns];
    let mut rejected = vec![0usize; ns];
    for (&(s, _), &ok) in &pairs {
        seen[s] += 1;
        if !ok {
            rejected[s] += 1;
        }
    }
    let stats = AcceptanceStats {
        pairs_total: pairs.len(),
        pairs_rejected: rejected.iter().sum(),
        per_state_rejected: seen
            .iter()
            .zip(&rejected)
            .map(|(&n, &r)| (n > 0).then(|| r as f64 / n as f64))
            .collect(),
    };
    Ok(TrustedValueEstimate {
        values: sums
            .iter()
            .zip(&samples)
            .map(|(&s, &n)| (n > 0).then(|| s / n as f64))
            .collect(),
        samples,
        stats,
    })
}
