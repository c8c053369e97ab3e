//! Brute-force verifiers.
//!
//! Everything here is recomputed from the MDP tables directly: exhaustive
//! enumeration of action/next-state sequences, closed-form expected
//! operators, fixed-point iteration and plain Monte-Carlo. Nothing calls into
//! [`crate::estimators`] or [`crate::trust_region`] numerics; ratios, clipping,
//! implied policies and divergences are re-derived locally so that a bug in
//! one place cannot hide in both.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::estimators::ClipConfig;
use crate::linalg::{self, Matrix};
use crate::mdp::{solve_v_exact, Mdp, TabularPolicy};
use crate::trust_region::{EstimatorKind, RelevanceConfig, RelevanceKind};
use crate::{Error, Result};

/// Default cap on enumerated leaves.
pub const LEAF_BUDGET: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct EnumerationSpec {
    /// Depth `K` of every enumerated path.
    pub max_depth: usize,
    /// Largest acceptable bound on the truncated tail.
    pub tail_tolerance: f64,
    pub leaf_budget: u64,
}

impl EnumerationSpec {
    pub fn new(max_depth: usize, tail_tolerance: f64) -> Self {
        EnumerationSpec {
            max_depth,
            tail_tolerance,
            leaf_budget: LEAF_BUDGET,
        }
    }
}

/// A set of behaviour policies `mu_z` with mixing weights `p(z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Behaviours {
    pub policies: Vec<TabularPolicy>,
    pub weights: Vec<f64>,
}

impl Behaviours {
    /// Uniform weighting over `z`.
    pub fn uniform(policies: Vec<TabularPolicy>) -> Self {
        let w = 1.0 / policies.len().max(1) as f64;
        Behaviours {
            weights: vec![w; policies.len()],
            policies,
        }
    }

    pub fn single(policy: TabularPolicy) -> Self {
        Self::uniform(vec![policy])
    }

    pub fn weighted(policies: Vec<TabularPolicy>, weights: Vec<f64>) -> Result<Self> {
        if policies.len() != weights.len() || policies.is_empty() {
            return Err(Error::invalid("behaviours", "need one positive weight per policy"));
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::invalid("behaviours", "weights must be positive"));
        }
        Ok(Behaviours { policies, weights })
    }
}

/// Which per-step correction an operator applies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorKind {
    pub estimator: EstimatorKind,
    pub clip: ClipConfig,
    /// `None` accepts every behaviour at every state.
    pub relevance: Option<RelevanceConfig>,
}

impl OperatorKind {
    pub fn is() -> Self {
        OperatorKind {
            estimator: EstimatorKind::Is,
            clip: ClipConfig::UNCLIPPED,
            relevance: None,
        }
    }

    pub fn vtrace(clip: ClipConfig) -> Self {
        OperatorKind {
            estimator: EstimatorKind::Vtrace,
            clip,
            relevance: None,
        }
    }

    pub fn trusted(self, relevance: RelevanceConfig) -> Self {
        OperatorKind {
            relevance: Some(relevance),
            ..self
        }
    }

    /// `(trace coefficient, td coefficient)` for ratio `x`.
    fn coefficients(&self, x: f64) -> (f64, f64) {
        match self.estimator {
            EstimatorKind::Is => (x, x),
            EstimatorKind::Vtrace => (
                if x < self.clip.c_bar { x } else { self.clip.c_bar },
                if x < self.clip.rho_bar { x } else { self.clip.rho_bar },
            ),
        }
    }
}

fn implied_row(p: &[f64], m: &[f64], rho_bar: f64) -> Option<Vec<f64>> {
    let row: Vec<f64> = p
        .iter()
        .zip(m)
        .map(|(&p, &m)| if rho_bar * m < p { rho_bar * m } else { p })
        .collect();
    let z: f64 = row.iter().sum();
    (z > 0.0).then(|| row.into_iter().map(|x| x / z).collect())
}

/// `pi~(a) ∝ min(rho_bar mu(a), pi(a))`, state by state.
pub fn implied_policy_table(target: &TabularPolicy, behaviour: &TabularPolicy, rho_bar: f64) -> Result<TabularPolicy> {
    let mut probs = Vec::with_capacity(target.n_states() * target.n_actions());
    for s in 0..target.n_states() {
        let row = implied_row(target.row(s), behaviour.row(s), rho_bar)
            .ok_or_else(|| Error::invalid("implied policy", "behaviour misses the target's support"))?;
        probs.extend(row);
    }
    TabularPolicy::new(target.n_states(), target.n_actions(), probs)
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&x, &y) in p.iter().zip(q) {
        if x > 0.0 {
            if y <= 0.0 {
                return f64::INFINITY;
            }
            total += x * libm::log(x / y);
        }
    }
    if total < 0.0 {
        0.0
    } else {
        total
    }
}

/// Per-state acceptance of one behaviour under a relevance rule.
pub fn acceptance(target: &TabularPolicy, behaviour: &TabularPolicy, relevance: Option<&RelevanceConfig>) -> Vec<bool> {
    let ns = target.n_states();
    let Some(cfg) = relevance else {
        return vec![true; ns];
    };
    (0..ns)
        .map(|s| {
            let (p, m) = (target.row(s), behaviour.row(s));
            let score = match cfg.kind {
                RelevanceKind::KlBehaviour => kl(p, m),
                RelevanceKind::KlImplied => implied_row(p, m, cfg.rho_bar).map_or(f64::INFINITY, |q| kl(p, &q)),
            };
            score < cfg.threshold_b
        })
        .collect()
}

fn bootstrap_at(mdp: &Mdp, v: &[f64], s: usize) -> f64 {
    if mdp.is_terminal(s) {
        0.0
    } else {
        v[s]
    }
}

/// Result of an exhaustive enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct Expectation {
    /// Expected return per start state; `None` where no behaviour is
    /// accepted at that state.
    pub values: Vec<Option<f64>>,
    /// Bound on the contribution of the enumerated-away tail.
    pub tail_bound: f64,
    pub leaves: u64,
}

impl Expectation {
    pub fn or_bootstrap(&self, v: &[f64]) -> Vec<f64> {
        self.values.iter().zip(v).map(|(x, b)| x.unwrap_or(*b)).collect()
    }
}

/// Exact expectation of the depth-`K` estimator from every start state,
/// conditioned on acceptance at the start state and averaged over the
/// accepted behaviours with weights `p(z)`.
///
/// The enumeration visits every `(a, s')` branch with positive probability
/// under `mu_z` and the dynamics. Beyond depth `K` the omitted terms are
/// bounded by `gamma^K max|delta| / (1 - gamma)` (zero when every path has
/// terminated by then).
pub fn exact_estimator_expectation(
    mdp: &Mdp,
    target: &TabularPolicy,
    behaviours: &Behaviours,
    bootstrap: &[f64],
    kind: &OperatorKind,
    spec: &EnumerationSpec,
) -> Result<Expectation> {
    let ns = mdp.n_states();
    if bootstrap.len() != ns {
        return Err(Error::Shape {
            what: "bootstrap values",
            expected: ns,
            actual: bootstrap.len(),
        });
    }
    let accepts: Vec<Vec<bool>> = behaviours
        .policies
        .iter()
        .map(|mu| acceptance(target, mu, kind.relevance.as_ref()))
        .collect();

    let mut leaves = 0u64;
    let mut survives = false;
    for (mu, acc) in behaviours.policies.iter().zip(&accepts) {
        let (count, alive) = count_leaves(mdp, mu, acc, spec.max_depth);
        leaves = leaves.saturating_add(count);
        survives |= alive;
    }
    if leaves > spec.leaf_budget {
        return Err(Error::EnumerationBudget {
            leaves,
            budget: spec.leaf_budget,
        });
    }
    let g = mdp.discount();
    let tail_bound = if survives {
        libm::pow(g, spec.max_depth as f64) * max_abs_delta(mdp, bootstrap) / (1.0 - g)
    } else {
        0.0
    };
    if tail_bound > spec.tail_tolerance {
        return Err(Error::TailTolerance {
            bound: tail_bound,
            depth: spec.max_depth,
            tolerance: spec.tail_tolerance,
        });
    }

    let mut values = vec![None; ns];
    for (s, out) in values.iter_mut().enumerate() {
        if mdp.is_terminal(s) {
            *out = Some(0.0);
            continue;
        }
        let (mut num, mut den) = (0.0, 0.0);
        for ((mu, acc), &w) in behaviours.policies.iter().zip(&accepts).zip(&behaviours.weights) {
            if !acc[s] {
                continue;
            }
            let mut walker = Walker {
                mdp,
                target,
                mu,
                accept: acc,
                v: bootstrap,
                kind,
                depth: spec.max_depth,
            };
            num += w * (bootstrap[s] + walker.expand(s, 0, 1.0, 1.0, 1.0));
            den += w;
        }
        if den > 0.0 {
            *out = Some(num / den);
        }
    }
    Ok(Expectation {
        values,
        tail_bound,
        leaves,
    })
}

struct Walker<'a> {
    mdp: &'a Mdp,
    target: &'a TabularPolicy,
    mu: &'a TabularPolicy,
    accept: &'a [bool],
    v: &'a [f64],
    kind: &'a OperatorKind,
    depth: usize,
}

impl Walker<'_> {
    /// Expected sum of the remaining correction terms from state `s` at
    /// depth `k`, given path probability `prob`, trace product `trace`
    /// and discount `gk = gamma^k`.
    fn expand(&mut self, s: usize, k: usize, prob: f64, trace: f64, gk: f64) -> f64 {
        if k == self.depth || self.mdp.is_terminal(s) || !self.accept[s] {
            return 0.0;
        }
        let g = self.mdp.discount();
        let mut total = 0.0;
        for a in 0..self.mdp.n_actions() {
            let m = self.mu.prob(s, a);
            if m <= 0.0 {
                continue;
            }
            let x = self.target.prob(s, a) / m;
            let (c, rho) = self.kind.coefficients(x);
            let r = self.mdp.reward(s, a);
            for (s2, &p) in self.mdp.transition_row(s, a).iter().enumerate() {
                if p <= 0.0 {
                    continue;
                }
                let delta = r + g * bootstrap_at(self.mdp, self.v, s2) - self.v[s];
                let branch = prob * m * p;
                total += branch * gk * trace * rho * delta;
                if trace * c != 0.0 {
                    total += self.expand(s2, k + 1, branch, trace * c, gk * g);
                }
            }
        }
        total
    }
}

/// `(leaves, some path still alive at depth K)` for one behaviour, maximised
/// over start states.
fn count_leaves(mdp: &Mdp, mu: &TabularPolicy, accept: &[bool], depth: usize) -> (u64, bool) {
    let ns = mdp.n_states();
    // leaves[s] at remaining depth d, alive[s] likewise
    let mut leaves = vec![1u64; ns];
    let mut alive = vec![true; ns];
    for s in 0..ns {
        if mdp.is_terminal(s) {
            alive[s] = false;
        }
    }
    for _ in 0..depth {
        let mut next_leaves = vec![1u64; ns];
        let mut next_alive = vec![false; ns];
        for s in 0..ns {
            if mdp.is_terminal(s) || !accept[s] {
                continue;
            }
            let mut count = 0u64;
            for a in 0..mdp.n_actions() {
                if mu.prob(s, a) <= 0.0 {
                    continue;
                }
                for (s2, &p) in mdp.transition_row(s, a).iter().enumerate() {
                    if p > 0.0 {
                        count = count.saturating_add(leaves[s2]);
                        next_alive[s] |= alive[s2];
                    }
                }
            }
            next_leaves[s] = count.max(1);
        }
        leaves = next_leaves;
        alive = next_alive;
    }
    // the head state is always expanded, even when rejected elsewhere
    let head = (0..ns).filter(|&s| !mdp.is_terminal(s)).map(|s| leaves[s]).max().unwrap_or(1);
    (head.saturating_mul(ns as u64), alive.iter().any(|&x| x))
}

fn max_abs_delta(mdp: &Mdp, v: &[f64]) -> f64 {
    let g = mdp.discount();
    let mut m = 0.0f64;
    for s in 0..mdp.n_states() {
        if mdp.is_terminal(s) {
            continue;
        }
        for a in 0..mdp.n_actions() {
            for (s2, &p) in mdp.transition_row(s, a).iter().enumerate() {
                if p > 0.0 {
                    let d = libm::fabs(mdp.reward(s, a) + g * bootstrap_at(mdp, v, s2) - v[s]);
                    m = m.max(d);
                }
            }
        }
    }
    m
}

/// Closed-form expected operator of one behaviour:
/// `T V = V + (I - gamma C)^{-1} g` with
/// `C(s, s') = lambda(s) sum_a mu c P(s'|s,a)` over non-terminal `s'` and
/// `g(s) = lambda(s) sum_a mu rho (r + gamma P V - V)`.
///
/// Terminal states map to zero. `accept` is `lambda`; rows with
/// `lambda(s) = 0` return `V(s)` unchanged.
pub fn expected_operator(
    mdp: &Mdp,
    target: &TabularPolicy,
    behaviour: &TabularPolicy,
    kind: &OperatorKind,
    accept: &[bool],
    v: &[f64],
) -> Result<Vec<f64>> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let g = mdp.discount();
    let vb: Vec<f64> = (0..ns).map(|s| bootstrap_at(mdp, v, s)).collect();
    let mut a_mat = Matrix::identity(ns);
    let mut rhs = vec![0.0; ns];
    for s in 0..ns {
        if mdp.is_terminal(s) || !accept[s] {
            continue;
        }
        for a in 0..na {
            let m = behaviour.prob(s, a);
            if m <= 0.0 {
                if target.prob(s, a) > 0.0 && kind.estimator == EstimatorKind::Is {
                    return Err(Error::ZeroBehaviourProbability { step: s, action: a });
                }
                continue;
            }
            let (c, rho) = kind.coefficients(target.prob(s, a) / m);
            let row = mdp.transition_row(s, a);
            let next: f64 = row.iter().zip(&vb).map(|(p, x)| p * x).sum();
            rhs[s] += m * rho * (mdp.reward(s, a) + g * next - vb[s]);
            for (s2, &p) in row.iter().enumerate() {
                if p > 0.0 && !mdp.is_terminal(s2) {
                    *a_mat.at_mut(s, s2) -= g * m * c * p;
                }
            }
        }
    }
    let corr = linalg::solve(a_mat, &rhs).ok_or(Error::Singular("expected operator"))?;
    Ok(vb.iter().zip(corr).map(|(x, y)| x + y).collect())
}

/// Acceptance-weighted mixture of per-behaviour operators:
/// `T V(s) = sum_z p(z) lambda_z(s) T_z V(s) / sum_z p(z) lambda_z(s)`.
/// Returns the output and which states had any accepted behaviour; other
/// states keep `V(s)`.
pub fn trusted_expected_operator(
    mdp: &Mdp,
    target: &TabularPolicy,
    behaviours: &Behaviours,
    kind: &OperatorKind,
    v: &[f64],
) -> Result<(Vec<f64>, Vec<bool>)> {
    let ns = mdp.n_states();
    let mut num = vec![0.0; ns];
    let mut den = vec![0.0; ns];
    for (mu, &w) in behaviours.policies.iter().zip(&behaviours.weights) {
        let acc = acceptance(target, mu, kind.relevance.as_ref());
        let tv = expected_operator(mdp, target, mu, kind, &acc, v)?;
        for s in 0..ns {
            if acc[s] {
                num[s] += w * tv[s];
                den[s] += w;
            }
        }
    }
    let covered: Vec<bool> = (0..ns).map(|s| den[s] > 0.0 || mdp.is_terminal(s)).collect();
    let out = (0..ns)
        .map(|s| {
            if mdp.is_terminal(s) {
                0.0
            } else if den[s] > 0.0 {
                num[s] / den[s]
            } else {
                v[s]
            }
        })
        .collect();
    Ok((out, covered))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub values: Vec<f64>,
    pub iterations: usize,
    /// `V` of the implied policy from a direct linear solve.
    pub implied_values: Vec<f64>,
    /// Sup-norm gap between the two computations.
    pub gap: f64,
}

/// Iterate the expected V-trace operator of one behaviour from `V = 0`
/// until the sup-norm change drops below `tol`, and compare against the
/// directly solved value of the implied policy.
pub fn vtrace_fixed_point(
    mdp: &Mdp,
    target: &TabularPolicy,
    behaviour: &TabularPolicy,
    clip: ClipConfig,
    tol: f64,
) -> Result<FixedPoint> {
    if !(tol >= 1e-10) {
        return Err(Error::invalid("tol", "must be at least 1e-10"));
    }
    let kind = OperatorKind::vtrace(clip);
    let accept = vec![true; mdp.n_states()];
    let mut v = vec![0.0; mdp.n_states()];
    for it in 1..=100_000 {
        let next = expected_operator(mdp, target, behaviour, &kind, &accept, &v)?;
        let change = sup(&next, &v);
        v = next;
        if change < tol {
            let implied = implied_policy_table(target, behaviour, clip.rho_bar)?;
            let implied_values = solve_v_exact(mdp, &implied)?;
            let gap = sup(&v, &implied_values);
            return Ok(FixedPoint {
                values: v,
                iterations: it,
                implied_values,
                gap,
            });
        }
    }
    Err(Error::NoConvergence(100_000))
}

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max(libm::fabs(x - y)))
}

fn sup_over(a: &[f64], b: &[f64], mask: &[bool]) -> f64 {
    a.iter()
        .zip(b)
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold(0.0, |m, ((x, y), _)| m.max(libm::fabs(x - y)))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Probe {
    /// `||V - V_ref||` (importance sampling) or `max_z ||V - V^z||` (V-trace).
    pub input_distance: f64,
    /// `||T V - V_ref||` over states with an accepted behaviour.
    pub output_distance: f64,
    pub ratio: f64,
    /// Empirical per-behaviour rates `||T_z V - V^z|| / ||V - V^z||`.
    pub eta: Vec<f64>,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    /// `V^pi` (importance sampling) or the acceptance-weighted `V^beta`.
    pub reference: Vec<f64>,
    pub probes: Vec<Probe>,
}

impl ProbeReport {
    pub fn all_hold(&self) -> bool {
        self.probes.iter().all(|p| p.holds)
    }

    pub fn max_ratio(&self) -> f64 {
        self.probes.iter().map(|p| p.ratio).fold(0.0, f64::max)
    }
}

/// Apply the exact trusted operator to `n_probes` random value tables.
///
/// Importance sampling checks `||T V - V^pi|| <= gamma ||V - V^pi|| + 1e-9`.
/// V-trace checks `||T V - V^beta|| < max_z ||V - V^z||` with
/// `V^beta(s) = E_z[V^z(s) | accepted at s]` and `V^z` the value of the
/// implied policy of behaviour `z`.
pub fn contraction_probe(
    mdp: &Mdp,
    target: &TabularPolicy,
    behaviours: &Behaviours,
    kind: &OperatorKind,
    n_probes: usize,
    seed: u64,
) -> Result<ProbeReport> {
    let ns = mdp.n_states();
    let g = mdp.discount();
    let per_z: Vec<Vec<f64>> = match kind.estimator {
        EstimatorKind::Is => {
            let vpi = solve_v_exact(mdp, target)?;
            vec![vpi; behaviours.policies.len()]
        }
        EstimatorKind::Vtrace => behaviours
            .policies
            .iter()
            .map(|mu| solve_v_exact(mdp, &implied_policy_table(target, mu, kind.clip.rho_bar)?))
            .collect::<Result<_>>()?,
    };
    let accepts: Vec<Vec<bool>> = behaviours
        .policies
        .iter()
        .map(|mu| acceptance(target, mu, kind.relevance.as_ref()))
        .collect();
    let mut reference = vec![0.0; ns];
    let mut covered = vec![false; ns];
    for s in 0..ns {
        let (mut num, mut den) = (0.0, 0.0);
        for ((vz, acc), &w) in per_z.iter().zip(&accepts).zip(&behaviours.weights) {
            if acc[s] {
                num += w * vz[s];
                den += w;
            }
        }
        covered[s] = den > 0.0 && !mdp.is_terminal(s);
        reference[s] = if den > 0.0 { num / den } else { 0.0 };
    }

    let r_max = (0..ns)
        .flat_map(|s| (0..mdp.n_actions()).map(move |a| (s, a)))
        .map(|(s, a)| libm::fabs(mdp.reward(s, a)))
        .fold(0.0, f64::max);
    let scale = (r_max / (1.0 - g)).max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probes = Vec::with_capacity(n_probes);
    for _ in 0..n_probes {
        let v: Vec<f64> = (0..ns)
            .map(|s| {
                let x = rng.gen_range(-scale..scale);
                if mdp.is_terminal(s) {
                    0.0
                } else {
                    x
                }
            })
            .collect();
        let (tv, _) = trusted_expected_operator(mdp, target, behaviours, kind, &v)?;
        let output_distance = sup_over(&tv, &reference, &covered);
        let mut eta = Vec::with_capacity(per_z.len());
        for ((mu, acc), vz) in behaviours.policies.iter().zip(&accepts).zip(&per_z) {
            let tz = expected_operator(mdp, target, mu, kind, acc, &v)?;
            let accepted_states: Vec<bool> = (0..ns).map(|s| acc[s] && !mdp.is_terminal(s)).collect();
            let d_in = sup(&v, vz);
            eta.push(if d_in > 0.0 {
                sup_over(&tz, vz, &accepted_states) / d_in
            } else {
                0.0
            });
        }
        let (input_distance, holds) = match kind.estimator {
            EstimatorKind::Is => {
                let d = sup(&v, &per_z[0]);
                (d, output_distance <= g * d + 1e-9)
            }
            EstimatorKind::Vtrace => {
                let d = per_z
                    .iter()
                    .zip(&accepts)
                    .filter(|(_, acc)| acc.iter().any(|&x| x))
                    .map(|(vz, _)| sup(&v, vz))
                    .fold(0.0, f64::max);
                (d, output_distance < d)
            }
        };
        probes.push(Probe {
            input_distance,
            output_distance,
            ratio: if input_distance > 0.0 {
                output_distance / input_distance
            } else {
                0.0
            },
            eta,
            holds,
        });
    }
    Ok(ProbeReport { reference, probes })
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

impl McEstimate {
    /// Whether `x` lies within `k` standard errors of the mean.
    pub fn agrees(&self, x: f64, k: f64) -> bool {
        libm::fabs(self.mean - x) <= k * self.std_error
    }
}

/// Mean and standard error of `n_samples` iid draws of `sampler`.
pub fn monte_carlo_expectation<F>(mut sampler: F, n_samples: usize, seed: u64) -> Result<McEstimate>
where
    F: FnMut(&mut ChaCha8Rng) -> f64,
{
    if n_samples < 100 {
        return Err(Error::invalid("n_samples", "need at least 100 samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Welford
    let (mut mean, mut m2) = (0.0, 0.0);
    for i in 1..=n_samples {
        let x = sampler(&mut rng);
        let d = x - mean;
        mean += d / i as f64;
        m2 += d * (x - mean);
    }
    let var = m2 / (n_samples - 1) as f64;
    Ok(McEstimate {
        mean,
        std_error: libm::sqrt(var / n_samples as f64),
        n: n_samples,
    })
}

/// Exact expected policy-gradient direction at state `s` over the logits of
/// that state, for one-step samples `a ~ mu`:
/// `sum_a mu(a) rho(a) A(a) (onehot(a) - pi)` with `rho = min(rho_bar, pi/mu)`.
pub fn expected_policy_gradient(target_row: &[f64], behaviour_row: &[f64], advantages: &[f64], rho_bar: f64) -> Vec<f64> {
    let na = target_row.len();
    let mut g = vec![0.0; na];
    for a in 0..na {
        let m = behaviour_row[a];
        if m <= 0.0 {
            continue;
        }
        let x = target_row[a] / m;
        let rho = if x < rho_bar { x } else { rho_bar };
        let w = m * rho * advantages[a];
        for (j, gj) in g.iter_mut().enumerate() {
            *gj += w * (if j == a { 1.0 } else { 0.0 } - target_row[j]);
        }
    }
    g
}
