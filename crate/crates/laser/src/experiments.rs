//! Named experiments. Each one writes a `results.csv` (plus per-seed detail
//! CSVs) and a `verdict.json` that is computed from `results.csv` alone.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::thread;

use anyhow::{bail, Context};
use laser_core::estimators::{implied_policy, AdvantageForm};
use laser_core::mdp::{solve_q_exact, solve_v_exact};
use laser_core::oracle::{contraction_probe, vtrace_fixed_point, Behaviours, OperatorKind};
use laser_core::{zoo, ClipConfig, Mdp, RelevanceConfig, TabularPolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::agent::{greedy_actions, run_agent, run_sweep, CurvePoint, HyperParams, RunOptions, SweepConfig};
use crate::formats::{final_return, write_curve, write_summary};
use crate::replay::SharedReplay;

#[derive(Debug, Clone, Copy)]
pub struct ParamDoc {
    pub key: &'static str,
    pub default: &'static str,
    pub doc: &'static str,
}

#[derive(Debug, Clone, Copy)]
pub struct ExperimentInfo {
    pub name: &'static str,
    pub summary: &'static str,
    /// Whether the shared gridworld sweep parameters apply.
    pub gridworld: bool,
    pub extra: &'static [ParamDoc],
}

impl ExperimentInfo {
    pub fn params(&self) -> Vec<ParamDoc> {
        let mut p = if self.gridworld { GRID_PARAMS.to_vec() } else { Vec::new() };
        p.extend_from_slice(self.extra);
        p
    }
}

const fn doc(key: &'static str, default: &'static str, doc: &'static str) -> ParamDoc {
    ParamDoc { key, default, doc }
}

const GRID_PARAMS: &[ParamDoc] = &[
    doc("environment", "gridworld", "zoo environment name"),
    doc("env_seed", "0", "seed passed to the environment constructor"),
    doc("steps", "100000", "env steps per sweep member"),
    doc("learning_rate", "0.5", "base learning rate of the sweep"),
    doc("entropy_cost", "1.0", "base entropy cost of the sweep"),
    doc("members", "corners", "`corners` (lr x ent factors {1/2, 2}, 4 agents) or `grid` (factors {1/2, 1, 2}, 9 agents)"),
    doc("replay_capacity", "100000", "replay capacity in transitions"),
    doc("max_episode_steps", "30", "time limit per episode"),
    doc("batch_size", "8", "unrolls per learner batch"),
    doc("unroll_length", "19", "transitions per unroll"),
    doc("buckets", "20", "learning-curve buckets over the run"),
    doc("tail", "4", "final return averages this many last buckets"),
    doc("threshold", "8", "return threshold for steps-to-threshold"),
];

pub const CATALOG: &[ExperimentInfo] = &[
    ExperimentInfo {
        name: "prop2-counterexample",
        summary: "Two-armed bandit with the behaviour pinned to (0.9, 0.1): pure replay picks the worse arm, mixing in online data above the threshold fraction picks the better one",
        gridworld: false,
        extra: &[
            doc("steps", "100000", "env steps per run"),
            doc("learning_rate", "0.05", "SGD step size"),
            doc("batch_size", "10", "unrolls per learner batch"),
            doc("unroll_length", "19", "transitions per unroll"),
            doc("alpha_mixed", "0.3", "online fraction of the mixed run"),
        ],
    },
    ExperimentInfo {
        name: "implied-policy-fixpoint",
        summary: "Iterated exact V-trace operator versus the directly solved value of the implied policy on random MDPs",
        gridworld: false,
        extra: &[
            doc("mdps", "20", "random MDPs per seed"),
            doc("n_states", "5", "states per MDP"),
            doc("n_actions", "3", "actions per MDP"),
            doc("rho_bar", "1", "clipping constant"),
            doc("tol", "1e-10", "sup-norm stopping tolerance of the iteration"),
        ],
    },
    ExperimentInfo {
        name: "contraction",
        summary: "Random bootstrap probes through the exact trusted IS and trusted V-trace operators",
        gridworld: false,
        extra: &[
            doc("mdps", "20", "random MDPs per seed"),
            doc("probes", "50", "bootstrap tables per MDP"),
            doc("discount", "0.9", "discount of the random MDPs"),
            doc("behaviours", "3", "behaviour policies per MDP"),
            doc("threshold_b", "0.1", "trust-region threshold"),
        ],
    },
    ExperimentInfo {
        name: "mixing-ratio-sweep",
        summary: "Sweeps with private replay at several online fractions",
        gridworld: true,
        extra: &[doc("alphas", "0,0.125,0.25,0.5,1", "online fractions, one sweep each")],
    },
    ExperimentInfo {
        name: "replay-capacity-sweep",
        summary: "Sweeps with private replay at several capacities",
        gridworld: true,
        extra: &[
            doc("capacities", "1000,10000,100000", "replay capacities, one sweep each"),
            doc("online_fraction", "0.125", "online fraction of every sweep"),
        ],
    },
    ExperimentInfo {
        name: "shared-replay",
        summary: "No-replay baseline, naive shared replay, shared replay with trust region, private replay with trust region",
        gridworld: true,
        extra: &[
            doc("online_fraction", "0.125", "online fraction of the replay arms"),
            doc("threshold_b", "0.5", "trust-region threshold"),
        ],
    },
    ExperimentInfo {
        name: "clipping-sweep",
        summary: "Shared replay without trust region at several rho_bar, against shared replay with trust region",
        gridworld: true,
        extra: &[
            doc("rho_bars", "1,2,4", "clipping constants of the arms without trust region"),
            doc("online_fraction", "0.125", "online fraction of every arm"),
            doc("threshold_b", "0.5", "trust-region threshold"),
        ],
    },
];

pub fn lookup(name: &str) -> anyhow::Result<&'static ExperimentInfo> {
    CATALOG.iter().find(|e| e.name == name).ok_or_else(|| {
        let names: Vec<&str> = CATALOG.iter().map(|e| e.name).collect();
        anyhow::anyhow!("unknown experiment `{name}`; known: {}", names.join(", "))
    })
}

/// Parameter table of one experiment: defaults merged with overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    values: BTreeMap<String, String>,
}

impl Params {
    pub fn resolve(info: &ExperimentInfo, overrides: &BTreeMap<String, String>) -> anyhow::Result<Self> {
        let docs = info.params();
        let mut values: BTreeMap<String, String> =
            docs.iter().map(|d| (d.key.to_string(), d.default.to_string())).collect();
        for (k, v) in overrides {
            if !values.contains_key(k) {
                bail!("unknown parameter `{k}` for experiment {}", info.name);
            }
            values.insert(k.clone(), v.clone());
        }
        Ok(Params { values })
    }

    fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_default()
    }

    pub fn get<T: FromStr>(&self, key: &str) -> anyhow::Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .trim()
            .parse()
            .map_err(|e| anyhow::anyhow!("parameter `{key}` = `{}`: {e}", self.raw(key)))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> anyhow::Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        let items = self
            .raw(key)
            .split(',')
            .map(|s| s.trim().parse().map_err(|e| anyhow::anyhow!("parameter `{key}`: `{s}`: {e}")))
            .collect::<anyhow::Result<Vec<T>>>()?;
        anyhow::ensure!(!items.is_empty(), "parameter `{key}` is empty");
        Ok(items)
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }
}

/// Parse `k=v` pairs.
pub fn parse_overrides<S: AsRef<str>>(pairs: &[S]) -> anyhow::Result<BTreeMap<String, String>> {
    pairs
        .iter()
        .map(|p| {
            let p = p.as_ref();
            let (k, v) = p.split_once('=').with_context(|| format!("expected key=value, got `{p}`"))?;
            Ok((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub params: BTreeMap<String, String>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

/// Outcome of an experiment. `pass` is the conjunction of `checks`;
/// `observations` are reported but do not decide the verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub experiment: String,
    pub seeds: Vec<u64>,
    pub pass: bool,
    pub checks: BTreeMap<String, bool>,
    #[serde(default)]
    pub observations: BTreeMap<String, bool>,
    /// Non-finite values are written as `null`.
    #[serde(default)]
    pub metrics: BTreeMap<String, Option<f64>>,
}

impl Verdict {
    fn new(experiment: &str, seeds: Vec<u64>) -> Self {
        Verdict {
            experiment: experiment.to_string(),
            seeds,
            pass: false,
            checks: BTreeMap::new(),
            observations: BTreeMap::new(),
            metrics: BTreeMap::new(),
        }
    }

    fn check(&mut self, name: &str, ok: bool) {
        self.checks.insert(name.to_string(), ok);
    }

    fn observe(&mut self, name: &str, ok: bool) {
        self.observations.insert(name.to_string(), ok);
    }

    fn metric(&mut self, name: &str, x: f64) {
        self.metrics.insert(name.to_string(), x.is_finite().then_some(x));
    }

    fn finish(mut self) -> Self {
        self.pass = !self.checks.is_empty() && self.checks.values().all(|&c| c);
        self
    }
}

/// Run an experiment end to end and write its artifacts under
/// `output_dir/<name>/`.
pub fn run_experiment(spec: &ExperimentSpec) -> anyhow::Result<Verdict> {
    let info = lookup(&spec.name)?;
    anyhow::ensure!(!spec.seeds.is_empty(), "at least one seed is required");
    let params = Params::resolve(info, &spec.params)?;
    let dir = spec.output_dir.join(info.name);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let results = match info.name {
        "prop2-counterexample" => to_csv(&prop2(&params, &spec.seeds, &dir)?)?,
        "implied-policy-fixpoint" => to_csv(&fixpoint(&params, &spec.seeds)?)?,
        "contraction" => to_csv(&contraction(&params, &spec.seeds)?)?,
        _ => to_csv(&gridworld(info.name, &params, &spec.seeds, &dir)?)?,
    };
    fs::write(dir.join("results.csv"), &results)?;
    let verdict = verdict_from_results(info.name, &results)?;
    fs::write(dir.join("verdict.json"), serde_json::to_string_pretty(&verdict)? + "\n")?;
    Ok(verdict)
}

/// Recompute a verdict from the text of a `results.csv`.
pub fn verdict_from_results(name: &str, results_csv: &str) -> anyhow::Result<Verdict> {
    Ok(match name {
        "prop2-counterexample" => prop2_verdict(&from_csv(results_csv)?),
        "implied-policy-fixpoint" => fixpoint_verdict(&from_csv(results_csv)?),
        "contraction" => contraction_verdict(&from_csv(results_csv)?),
        "mixing-ratio-sweep" => mixing_verdict(&from_csv(results_csv)?),
        "replay-capacity-sweep" => capacity_verdict(&from_csv(results_csv)?),
        "shared-replay" => shared_verdict(&from_csv(results_csv)?),
        "clipping-sweep" => clipping_verdict(&from_csv(results_csv)?),
        other => bail!("unknown experiment `{other}`"),
    })
}

fn to_csv<T: Serialize>(rows: &[T]) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn from_csv<T: DeserializeOwned>(text: &str) -> anyhow::Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize().map(|row| Ok(row?)).collect()
}

fn seeds_of<'a>(rows: impl Iterator<Item = &'a u64>) -> Vec<u64> {
    let mut s: Vec<u64> = rows.copied().collect();
    s.sort_unstable();
    s.dedup();
    s
}

/// Run `f` for every seed on its own thread; results come back in seed order.
fn per_seed<T, F>(seeds: &[u64], f: F) -> anyhow::Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> anyhow::Result<T> + Sync,
{
    thread::scope(|scope| {
        let f = &f;
        let handles: Vec<_> = seeds.iter().map(|&s| scope.spawn(move || f(s))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(anyhow::anyhow!("seed worker panicked"))))
            .collect()
    })
}

/// Full-support random policy; every probability is at least `floor / n_actions`.
pub fn random_policy<R: Rng>(rng: &mut R, n_states: usize, n_actions: usize, floor: f64) -> TabularPolicy {
    let mut probs = Vec::with_capacity(n_states * n_actions);
    for _ in 0..n_states {
        let raw: Vec<f64> = (0..n_actions).map(|_| rng.gen::<f64>() + 1e-12).collect();
        let z: f64 = raw.iter().sum();
        probs.extend(raw.iter().map(|x| (1.0 - floor) * x / z + floor / n_actions as f64));
    }
    TabularPolicy::new(n_states, n_actions, probs).expect("rows are normalized")
}

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

// ---- prop2-counterexample ----

/// Behaviour of the pinned stream; the second row is the terminal state.
pub const PROP2_BEHAVIOUR: [[f64; 2]; 2] = [[0.9, 0.1], [0.5, 0.5]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop2Row {
    pub seed: u64,
    pub arm: String,
    pub online_fraction: f64,
    pub pi_0: f64,
    pub pi_1: f64,
    pub greedy_action: usize,
    pub optimal_action: usize,
    pub env_steps: u64,
}

pub fn prop2_hyper(online_fraction: f64, learning_rate: f64, batch_size: usize, unroll_length: usize) -> HyperParams {
    HyperParams {
        learning_rate,
        entropy_cost: 0.0,
        online_fraction,
        clip: ClipConfig::default(),
        trust_region: None,
        unroll_length,
        batch_size,
        discount: 0.9,
        advantage: AdvantageForm::NextStateNoBaseline,
    }
}

fn prop2(p: &Params, seeds: &[u64], dir: &Path) -> anyhow::Result<Vec<Prop2Row>> {
    let steps: u64 = p.get("steps")?;
    let lr: f64 = p.get("learning_rate")?;
    let b: usize = p.get("batch_size")?;
    let t: usize = p.get("unroll_length")?;
    let alpha: f64 = p.get("alpha_mixed")?;
    let mdp = zoo::prop2_bandit();
    let arms = [("off-policy", 0.0), ("mixed", alpha)];
    for (_, a) in arms {
        prop2_hyper(a, lr, b, t).validate()?;
    }
    let rows = per_seed(seeds, |seed| {
        let mut out = Vec::new();
        let sdir = dir.join(format!("seed-{seed}"));
        fs::create_dir_all(&sdir)?;
        for (arm, a) in arms {
            let hp = prop2_hyper(a, lr, b, t);
            let opts = RunOptions {
                pinned_behaviour: Some(PROP2_BEHAVIOUR.iter().map(|r| r.to_vec()).collect()),
                curve_interval: (steps / 20).max(1),
                ..RunOptions::new(steps)
            };
            let replay = SharedReplay::new(100_000)?;
            let res = run_agent(&mdp, &hp, &replay, &opts, seed)?;
            write_curve(fs::File::create(sdir.join(format!("{arm}.csv")))?, &res.curve)?;
            let pi = res.params.policy();
            let q = solve_q_exact(&mdp, &pi)?;
            out.push(Prop2Row {
                seed,
                arm: arm.to_string(),
                online_fraction: a,
                pi_0: pi.prob(0, 0),
                pi_1: pi.prob(0, 1),
                greedy_action: greedy_actions(&res.params)[0],
                optimal_action: if q[1] > q[0] { 1 } else { 0 },
                env_steps: res.env_steps,
            });
        }
        Ok(out)
    })?;
    Ok(rows.into_iter().flatten().collect())
}

pub fn prop2_verdict(rows: &[Prop2Row]) -> Verdict {
    let mut v = Verdict::new("prop2-counterexample", seeds_of(rows.iter().map(|r| &r.seed)));
    fn arm<'a>(rows: &'a [Prop2Row], name: &'a str) -> impl Iterator<Item = &'a Prop2Row> {
        rows.iter().filter(move |r| r.arm == name)
    }
    let wrong = arm(rows, "off-policy").count() > 0 && arm(rows, "off-policy").all(|r| r.greedy_action != r.optimal_action);
    let right = arm(rows, "mixed").count() > 0 && arm(rows, "mixed").all(|r| r.greedy_action == r.optimal_action);
    v.check("off-policy-converges-wrong", wrong);
    v.check("mixed-converges-right", right);
    for name in ["off-policy", "mixed"] {
        let p: Vec<f64> = arm(rows, name).map(|r| r.pi_1).collect();
        v.metric(&format!("{name}-median-pi_1"), median(&p));
    }
    v.finish()
}

// ---- implied-policy-fixpoint ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixpointRow {
    pub seed: u64,
    pub mdp: usize,
    pub iterations: usize,
    /// Iterated operator versus the solved implied policy built from the
    /// estimator crate's `implied_policy`.
    pub gap: f64,
    /// Same against the oracle's own implied-policy construction.
    pub oracle_gap: f64,
    /// `||V^z - V^pi||`, how far off the fixed point is from the target value.
    pub bias: f64,
}

/// Tolerance on both gaps.
pub const FIXPOINT_TOL: f64 = 1e-8;

fn fixpoint(p: &Params, seeds: &[u64]) -> anyhow::Result<Vec<FixpointRow>> {
    let n: usize = p.get("mdps")?;
    let ns: usize = p.get("n_states")?;
    let na: usize = p.get("n_actions")?;
    let rho: f64 = p.get("rho_bar")?;
    let tol: f64 = p.get("tol")?;
    let clip = ClipConfig::new(rho, 1.0)?;
    let rows = per_seed(seeds, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let mdp = zoo::garnet(ns, na, ns.min(3), 0.9, rng.gen())?;
                let pi = random_policy(&mut rng, ns, na, 0.05);
                let mu = random_policy(&mut rng, ns, na, 0.05);
                let fp = vtrace_fixed_point(&mdp, &pi, &mu, clip, tol)?;
                let rows = (0..ns)
                    .map(|s| implied_policy(pi.row(s), mu.row(s), rho))
                    .collect::<Result<Vec<_>, _>>()?;
                let main = solve_v_exact(&mdp, &TabularPolicy::from_rows(&rows)?)?;
                Ok(FixpointRow {
                    seed,
                    mdp: i,
                    iterations: fp.iterations,
                    gap: sup(&fp.values, &main),
                    oracle_gap: fp.gap,
                    bias: sup(&fp.values, &solve_v_exact(&mdp, &pi)?),
                })
            })
            .collect::<anyhow::Result<Vec<_>>>()
    })?;
    Ok(rows.into_iter().flatten().collect())
}

pub fn fixpoint_verdict(rows: &[FixpointRow]) -> Verdict {
    let mut v = Verdict::new("implied-policy-fixpoint", seeds_of(rows.iter().map(|r| &r.seed)));
    let max_gap = rows.iter().map(|r| r.gap.max(r.oracle_gap)).fold(0.0, f64::max);
    v.check("fixed-point-is-implied-value", !rows.is_empty() && max_gap <= FIXPOINT_TOL);
    v.metric("max-gap", max_gap);
    v.metric("max-bias", rows.iter().map(|r| r.bias).fold(0.0, f64::max));
    v.finish()
}

// ---- contraction ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionRow {
    pub seed: u64,
    pub mdp: usize,
    /// `is` or `vtrace`.
    pub kind: String,
    pub probe: usize,
    pub discount: f64,
    pub input_distance: f64,
    pub output_distance: f64,
    pub ratio: f64,
    pub max_eta: f64,
}

/// Random MDP, target and behaviours of one contraction case.
pub fn contraction_case(
    rng: &mut ChaCha8Rng,
    discount: f64,
    n_behaviours: usize,
) -> anyhow::Result<(Mdp, TabularPolicy, Behaviours)> {
    let mdp = zoo::garnet(5, 3, 3, discount, rng.gen())?;
    let pi = random_policy(rng, 5, 3, 0.1);
    let mus = (0..n_behaviours).map(|_| random_policy(rng, 5, 3, 0.1)).collect();
    Ok((mdp, pi, Behaviours::uniform(mus)))
}

fn contraction(p: &Params, seeds: &[u64]) -> anyhow::Result<Vec<ContractionRow>> {
    let n: usize = p.get("mdps")?;
    let probes: usize = p.get("probes")?;
    let g: f64 = p.get("discount")?;
    let nb: usize = p.get("behaviours")?;
    let cfg = RelevanceConfig::new(p.get("threshold_b")?)?;
    let rows = per_seed(seeds, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for i in 0..n {
            let (mdp, pi, mus) = contraction_case(&mut rng, g, nb)?;
            for (kind, op) in [
                ("is", OperatorKind::is().trusted(cfg)),
                ("vtrace", OperatorKind::vtrace(ClipConfig::default()).trusted(cfg)),
            ] {
                let report = contraction_probe(&mdp, &pi, &mus, &op, probes, rng.gen())?;
                out.extend(report.probes.iter().enumerate().map(|(j, pr)| ContractionRow {
                    seed,
                    mdp: i,
                    kind: kind.to_string(),
                    probe: j,
                    discount: g,
                    input_distance: pr.input_distance,
                    output_distance: pr.output_distance,
                    ratio: pr.ratio,
                    max_eta: pr.eta.iter().copied().fold(0.0, f64::max),
                }));
            }
        }
        Ok(out)
    })?;
    Ok(rows.into_iter().flatten().collect())
}

pub fn contraction_verdict(rows: &[ContractionRow]) -> Verdict {
    let mut v = Verdict::new("contraction", seeds_of(rows.iter().map(|r| &r.seed)));
    let is: Vec<&ContractionRow> = rows.iter().filter(|r| r.kind == "is").collect();
    let vt: Vec<&ContractionRow> = rows.iter().filter(|r| r.kind == "vtrace").collect();
    v.check(
        "is-ratios-within-discount",
        !is.is_empty() && is.iter().all(|r| r.output_distance <= r.discount * r.input_distance + 1e-9),
    );
    v.check(
        "vtrace-strictly-shrinks",
        !vt.is_empty() && vt.iter().all(|r| r.output_distance < r.input_distance),
    );
    v.metric("max-is-ratio", is.iter().map(|r| r.ratio).fold(0.0, f64::max));
    v.metric("max-vtrace-ratio", vt.iter().map(|r| r.ratio).fold(0.0, f64::max));
    v.metric("max-eta", vt.iter().map(|r| r.max_eta).fold(0.0, f64::max));
    v.finish()
}

// ---- gridworld sweeps ----

/// One sweep of one arm at one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmRow {
    pub seed: u64,
    pub arm: String,
    pub online_fraction: f64,
    pub rho_bar: f64,
    pub trust_region_b: Option<f64>,
    pub shared_replay: bool,
    pub replay_capacity: usize,
    /// Sweep-best return averaged over the last buckets.
    pub final_return: f64,
    /// First bucket end where the sweep-best return reaches the threshold;
    /// `inf` when it never does.
    pub steps_to_threshold: f64,
}

#[derive(Debug, Clone)]
struct Arm {
    name: String,
    hyper: HyperParams,
    shared: bool,
    capacity: usize,
}

#[derive(Debug, Clone)]
struct GridSettings {
    environment: String,
    env_seed: u64,
    steps: u64,
    base: HyperParams,
    full_grid: bool,
    capacity: usize,
    max_episode_steps: usize,
    buckets: u64,
    tail: usize,
    threshold: f64,
}

impl GridSettings {
    fn from_params(p: &Params) -> anyhow::Result<Self> {
        let members: String = p.get("members")?;
        let full_grid = match members.as_str() {
            "corners" => false,
            "grid" => true,
            other => bail!("parameter `members`: expected `corners` or `grid`, got `{other}`"),
        };
        let buckets: u64 = p.get("buckets")?;
        anyhow::ensure!(buckets > 0, "parameter `buckets` must be positive");
        Ok(GridSettings {
            environment: p.get("environment")?,
            env_seed: p.get("env_seed")?,
            steps: p.get("steps")?,
            base: HyperParams {
                learning_rate: p.get("learning_rate")?,
                entropy_cost: p.get("entropy_cost")?,
                batch_size: p.get("batch_size")?,
                unroll_length: p.get("unroll_length")?,
                ..HyperParams::default()
            },
            full_grid,
            capacity: p.get("replay_capacity")?,
            max_episode_steps: p.get("max_episode_steps")?,
            buckets,
            tail: p.get("tail")?,
            threshold: p.get("threshold")?,
        })
    }

    fn members(&self, hp: &HyperParams) -> Vec<HyperParams> {
        if self.full_grid {
            return hp.grid3x3();
        }
        let f = [0.5, 2.0];
        f.iter()
            .flat_map(|&a| {
                f.iter().map(move |&b| HyperParams {
                    learning_rate: hp.learning_rate * a,
                    entropy_cost: hp.entropy_cost * b,
                    ..*hp
                })
            })
            .collect()
    }

    fn arm(&self, name: String, online_fraction: f64, shared: bool) -> Arm {
        Arm {
            name,
            hyper: HyperParams {
                online_fraction,
                ..self.base
            },
            shared,
            capacity: self.capacity,
        }
    }
}

fn trust(b: f64, rho_bar: f64) -> anyhow::Result<RelevanceConfig> {
    let cfg = RelevanceConfig {
        rho_bar,
        ..RelevanceConfig::new(b)?
    };
    cfg.validate()?;
    Ok(cfg)
}

fn arms_for(name: &str, p: &Params, g: &GridSettings) -> anyhow::Result<Vec<Arm>> {
    Ok(match name {
        "mixing-ratio-sweep" => p
            .list::<f64>("alphas")?
            .into_iter()
            .map(|a| g.arm(format!("alpha={a}"), a, false))
            .collect(),
        "replay-capacity-sweep" => {
            let a: f64 = p.get("online_fraction")?;
            p.list::<usize>("capacities")?
                .into_iter()
                .map(|c| Arm {
                    capacity: c,
                    ..g.arm(format!("capacity={c}"), a, false)
                })
                .collect()
        }
        "shared-replay" => {
            let a: f64 = p.get("online_fraction")?;
            let tr = trust(p.get("threshold_b")?, 1.0)?;
            let with_tr = |mut arm: Arm| {
                arm.hyper.trust_region = Some(tr);
                arm
            };
            vec![
                g.arm("baseline".into(), 1.0, false),
                g.arm("shared".into(), a, true),
                with_tr(g.arm("shared-tr".into(), a, true)),
                with_tr(g.arm("private-tr".into(), a, false)),
            ]
        }
        "clipping-sweep" => {
            let a: f64 = p.get("online_fraction")?;
            let mut arms = Vec::new();
            for rho in p.list::<f64>("rho_bars")? {
                let mut arm = g.arm(format!("shared-rho={rho}"), a, true);
                arm.hyper.clip = ClipConfig::new(rho, 1.0)?;
                arms.push(arm);
            }
            let mut arm = g.arm("shared-tr".into(), a, true);
            arm.hyper.trust_region = Some(trust(p.get("threshold_b")?, 1.0)?);
            arms.push(arm);
            arms
        }
        other => bail!("`{other}` is not a gridworld experiment"),
    })
}

/// First bucket end at which the curve reaches `threshold`.
pub fn steps_to_threshold(curve: &[CurvePoint], threshold: f64) -> f64 {
    curve
        .iter()
        .find(|p| p.mean_return >= threshold)
        .map_or(f64::INFINITY, |p| p.env_steps as f64)
}

fn gridworld(name: &str, p: &Params, seeds: &[u64], dir: &Path) -> anyhow::Result<Vec<ArmRow>> {
    let g = GridSettings::from_params(p)?;
    let mdp = zoo::by_name(&g.environment, g.env_seed)?;
    let arms = arms_for(name, p, &g)?;
    let configs: Vec<(Arm, SweepConfig)> = arms
        .into_iter()
        .map(|arm| {
            let cfg = SweepConfig {
                agents: g.members(&arm.hyper),
                shared_replay: arm.shared,
                replay_capacity: arm.capacity,
                total_env_steps: g.steps,
                environment: g.environment.clone(),
                env_seed: g.env_seed,
                seed: 0,
                max_episode_steps: g.max_episode_steps,
                curve_interval: g.steps.div_ceil(g.buckets).max(1),
                pinned_behaviour: None,
            };
            cfg.validate().map_err(|e| e.context(format!("arm {}", arm.name)))?;
            Ok((arm, cfg))
        })
        .collect::<anyhow::Result<_>>()?;
    let rows = per_seed(seeds, |seed| {
        let mut out = Vec::new();
        for (arm, cfg) in &configs {
            let adir = dir.join(format!("seed-{seed}")).join(&arm.name);
            fs::create_dir_all(&adir)?;
            let cfg = SweepConfig { seed, ..cfg.clone() };
            let res = run_sweep(&mdp, &cfg)?;
            for a in &res.agents {
                write_curve(fs::File::create(adir.join(format!("agent-{}.csv", a.agent_id)))?, &a.curve)?;
            }
            write_curve(fs::File::create(adir.join("best.csv"))?, &res.best)?;
            write_summary(fs::File::create(adir.join("summary.csv"))?, &res.agents, g.tail)?;
            out.push(ArmRow {
                seed,
                arm: arm.name.clone(),
                online_fraction: arm.hyper.online_fraction,
                rho_bar: arm.hyper.clip.rho_bar,
                trust_region_b: arm.hyper.trust_region.map(|t| t.threshold_b),
                shared_replay: arm.shared,
                replay_capacity: arm.capacity,
                final_return: final_return(&res.best, g.tail),
                steps_to_threshold: steps_to_threshold(&res.best, g.threshold),
            });
        }
        Ok(out)
    })?;
    Ok(rows.into_iter().flatten().collect())
}

/// Per-arm medians over seeds, in first-appearance order.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmMedians {
    pub arm: String,
    pub template: ArmRow,
    pub final_return: f64,
    pub steps_to_threshold: f64,
}

pub fn arm_medians(rows: &[ArmRow]) -> Vec<ArmMedians> {
    let mut order: Vec<&str> = Vec::new();
    for r in rows {
        if !order.contains(&r.arm.as_str()) {
            order.push(&r.arm);
        }
    }
    order
        .into_iter()
        .map(|name| {
            let mine: Vec<&ArmRow> = rows.iter().filter(|r| r.arm == name).collect();
            ArmMedians {
                arm: name.to_string(),
                template: mine[0].clone(),
                final_return: median(&mine.iter().map(|r| r.final_return).collect::<Vec<_>>()),
                steps_to_threshold: median(&mine.iter().map(|r| r.steps_to_threshold).collect::<Vec<_>>()),
            }
        })
        .collect()
}

fn grid_verdict(name: &str, rows: &[ArmRow]) -> (Verdict, Vec<ArmMedians>) {
    let mut v = Verdict::new(name, seeds_of(rows.iter().map(|r| &r.seed)));
    let meds = arm_medians(rows);
    for m in &meds {
        v.metric(&format!("{}/median-final-return", m.arm), m.final_return);
        v.metric(&format!("{}/median-steps-to-threshold", m.arm), m.steps_to_threshold);
    }
    (v, meds)
}

fn find<'a>(meds: &'a [ArmMedians], arm: &str) -> Option<&'a ArmMedians> {
    meds.iter().find(|m| m.arm == arm)
}

pub fn mixing_verdict(rows: &[ArmRow]) -> Verdict {
    let (mut v, meds) = grid_verdict("mixing-ratio-sweep", rows);
    let by_alpha = |a: f64| meds.iter().find(|m| m.template.online_fraction == a);
    let mixes: Vec<&ArmMedians> = meds
        .iter()
        .filter(|m| m.template.online_fraction > 0.0 && m.template.online_fraction < 1.0)
        .collect();
    let zero = by_alpha(0.0);
    let one = by_alpha(1.0);
    v.check(
        "alpha0-below-every-mix",
        zero.is_some_and(|z| !mixes.is_empty() && mixes.iter().all(|m| z.final_return < m.final_return)),
    );
    v.check(
        "replay-reaches-threshold-before-on-policy",
        one.is_some_and(|o| mixes.iter().any(|m| m.steps_to_threshold < o.steps_to_threshold)),
    );
    v.observe(
        "alpha0-strictly-worst",
        zero.is_some_and(|z| meds.iter().all(|m| std::ptr::eq(m, z) || z.final_return < m.final_return)),
    );
    v.finish()
}

pub fn capacity_verdict(rows: &[ArmRow]) -> Verdict {
    let (mut v, meds) = grid_verdict("replay-capacity-sweep", rows);
    let small = meds.iter().min_by_key(|m| m.template.replay_capacity);
    let large = meds.iter().max_by_key(|m| m.template.replay_capacity);
    v.check(
        "largest-capacity-at-least-smallest",
        matches!((small, large), (Some(s), Some(l)) if l.final_return >= s.final_return),
    );
    v.observe(
        "largest-capacity-reaches-threshold-first",
        matches!((small, large), (Some(s), Some(l)) if l.steps_to_threshold <= s.steps_to_threshold),
    );
    v.finish()
}

pub fn shared_verdict(rows: &[ArmRow]) -> Verdict {
    let (mut v, meds) = grid_verdict("shared-replay", rows);
    let f = |arm: &str| find(&meds, arm).map(|m| m.final_return);
    let (base, shared, tr) = (f("baseline"), f("shared"), f("shared-tr"));
    let lt = |a: Option<f64>, b: Option<f64>| matches!((a, b), (Some(a), Some(b)) if a < b);
    v.check("shared-below-baseline", lt(shared, base));
    v.check("shared-below-trust-region", lt(shared, tr));
    v.check("trust-region-best", lt(base, tr) && lt(shared, tr));
    let t = |arm: &str| find(&meds, arm).map(|m| m.steps_to_threshold);
    v.observe("sharing-with-trust-region-reaches-threshold-first", lt(t("shared-tr"), t("private-tr")));
    v.finish()
}

pub fn clipping_verdict(rows: &[ArmRow]) -> Verdict {
    let (mut v, meds) = grid_verdict("clipping-sweep", rows);
    let tr = find(&meds, "shared-tr").map(|m| m.final_return);
    let raised: Vec<&ArmMedians> = meds
        .iter()
        .filter(|m| m.template.trust_region_b.is_none() && m.template.rho_bar > 1.0)
        .collect();
    for m in &raised {
        v.check(
            &format!("{}-below-trust-region", m.arm),
            tr.is_some_and(|t| m.final_return < t),
        );
    }
    if raised.is_empty() {
        v.check("has-raised-rho-arms", false);
    }
    if let Some(base) = find(&meds, "shared-rho=1") {
        v.observe("rho1-below-trust-region", tr.is_some_and(|t| base.final_return < t));
    }
    v.finish()
}
