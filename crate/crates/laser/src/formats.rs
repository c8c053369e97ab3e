//! On-disk formats: MDP JSON, sweep TOML and the fixed-header CSVs.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::Context;
use laser_core::mdp::MdpParts;
use laser_core::Mdp;
use serde::{Deserialize, Serialize};

use crate::agent::{AgentResult, CurvePoint, SweepConfig};

/// MDP as JSON. `transition[s][a][s']`, `reward[s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpFile {
    pub n_states: usize,
    pub n_actions: usize,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<f64>>,
    pub discount: f64,
    pub terminal: Vec<bool>,
    pub initial_distribution: Vec<f64>,
}

impl From<&Mdp> for MdpFile {
    fn from(mdp: &Mdp) -> Self {
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        MdpFile {
            n_states: ns,
            n_actions: na,
            transition: (0..ns)
                .map(|s| (0..na).map(|a| mdp.transition_row(s, a).to_vec()).collect())
                .collect(),
            reward: (0..ns).map(|s| (0..na).map(|a| mdp.reward(s, a)).collect()).collect(),
            discount: mdp.discount(),
            terminal: mdp.terminal().to_vec(),
            initial_distribution: mdp.initial_distribution().to_vec(),
        }
    }
}

impl MdpFile {
    pub fn to_mdp(&self) -> anyhow::Result<Mdp> {
        let (ns, na) = (self.n_states, self.n_actions);
        anyhow::ensure!(self.transition.len() == ns, "transition: expected {ns} state rows");
        anyhow::ensure!(self.reward.len() == ns, "reward: expected {ns} state rows");
        let mut transition = Vec::with_capacity(ns * na * ns);
        for (s, rows) in self.transition.iter().enumerate() {
            anyhow::ensure!(rows.len() == na, "transition[{s}]: expected {na} action rows");
            for (a, row) in rows.iter().enumerate() {
                anyhow::ensure!(row.len() == ns, "transition[{s}][{a}]: expected {ns} entries");
                transition.extend_from_slice(row);
            }
        }
        let mut reward = Vec::with_capacity(ns * na);
        for (s, row) in self.reward.iter().enumerate() {
            anyhow::ensure!(row.len() == na, "reward[{s}]: expected {na} entries");
            reward.extend_from_slice(row);
        }
        Ok(Mdp::new(MdpParts {
            n_states: ns,
            n_actions: na,
            transition,
            reward,
            discount: self.discount,
            terminal: self.terminal.clone(),
            initial_distribution: self.initial_distribution.clone(),
        })?)
    }
}

pub fn mdp_to_json(mdp: &Mdp) -> String {
    serde_json::to_string_pretty(&MdpFile::from(mdp)).expect("plain data serializes")
}

pub fn mdp_from_json(text: &str) -> anyhow::Result<Mdp> {
    let file: MdpFile = serde_json::from_str(text).context("parsing MDP JSON")?;
    file.to_mdp()
}

pub fn load_mdp(path: &Path) -> anyhow::Result<Mdp> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    mdp_from_json(&text).with_context(|| format!("in {}", path.display()))
}

pub fn sweep_from_toml(text: &str) -> anyhow::Result<SweepConfig> {
    let cfg: SweepConfig = toml::from_str(text).context("parsing sweep config")?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn sweep_to_toml(cfg: &SweepConfig) -> anyhow::Result<String> {
    Ok(toml::to_string_pretty(cfg)?)
}

pub const CURVE_HEADER: [&str; 5] = ["env_steps", "mean_return", "mask_acceptance", "value_loss", "policy_loss"];

/// Curve CSV with [`CURVE_HEADER`].
pub fn write_curve<W: Write>(out: W, curve: &[CurvePoint]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CURVE_HEADER)?;
    for p in curve {
        w.write_record([
            p.env_steps.to_string(),
            fmt_f64(p.mean_return),
            fmt_f64(p.mask_acceptance),
            fmt_f64(p.value_loss),
            fmt_f64(p.policy_loss),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_curve(text: &str) -> anyhow::Result<Vec<CurvePoint>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    anyhow::ensure!(header == CURVE_HEADER, "unexpected curve header {header:?}");
    r.deserialize().map(|row| Ok(row?)).collect()
}

pub const SUMMARY_HEADER: [&str; 12] = [
    "agent_id",
    "learning_rate",
    "entropy_cost",
    "online_fraction",
    "rho_bar",
    "trust_region_b",
    "env_steps",
    "learner_steps",
    "episodes",
    "fully_masked_steps",
    "final_return",
    "mean_mask_acceptance",
];

/// One row per sweep member with [`SUMMARY_HEADER`]. `final_return` averages
/// the last `tail` curve buckets.
pub fn write_summary<W: Write>(out: W, agents: &[AgentResult], tail: usize) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for a in agents {
        let acc = if a.curve.is_empty() {
            0.0
        } else {
            a.curve.iter().map(|p| p.mask_acceptance).sum::<f64>() / a.curve.len() as f64
        };
        w.write_record([
            a.agent_id.to_string(),
            fmt_f64(a.hyper.learning_rate),
            fmt_f64(a.hyper.entropy_cost),
            fmt_f64(a.hyper.online_fraction),
            fmt_f64(a.hyper.clip.rho_bar),
            a.hyper.trust_region.map_or("none".to_string(), |t| fmt_f64(t.threshold_b)),
            a.env_steps.to_string(),
            a.learner_steps.to_string(),
            a.episodes.to_string(),
            a.fully_masked_steps.to_string(),
            fmt_f64(final_return(&a.curve, tail)),
            fmt_f64(acc),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Mean return over the last `tail` buckets.
pub fn final_return(curve: &[CurvePoint], tail: usize) -> f64 {
    let tail = tail.clamp(1, curve.len().max(1));
    let pts = &curve[curve.len().saturating_sub(tail)..];
    if pts.is_empty() {
        return 0.0;
    }
    pts.iter().map(|p| p.mean_return).sum::<f64>() / pts.len() as f64
}

/// Shortest round-trip decimal, so identical runs give identical bytes.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use laser_core::zoo;

    #[test]
    fn mdp_json_round_trip() {
        for name in zoo::NAMES {
            let m = zoo::by_name(name, 3).unwrap();
            let back = mdp_from_json(&mdp_to_json(&m)).unwrap();
            assert_eq!(back.parts(), m.parts());
        }
    }

    #[test]
    fn mdp_json_uses_exact_field_names() {
        let v: serde_json::Value = serde_json::from_str(&mdp_to_json(&zoo::prop2_bandit())).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        keys.sort();
        assert_eq!(
            keys,
            ["discount", "initial_distribution", "n_actions", "n_states", "reward", "terminal", "transition"]
        );
    }

    #[test]
    fn bad_shapes_are_reported() {
        let mut f = MdpFile::from(&zoo::prop2_bandit());
        f.reward[1].pop();
        let err = f.to_mdp().unwrap_err().to_string();
        assert!(err.contains("reward[1]"), "{err}");
    }

    #[test]
    fn curve_round_trip() {
        let pts = vec![CurvePoint {
            env_steps: 10,
            mean_return: 0.1,
            mask_acceptance: 1.0,
            value_loss: 2.5,
            policy_loss: -0.3,
        }];
        let mut out = Vec::new();
        write_curve(&mut out, &pts).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("env_steps,mean_return,mask_acceptance,value_loss,policy_loss\n"));
        assert_eq!(read_curve(&text).unwrap(), pts);
    }

    #[test]
    fn final_return_averages_the_tail() {
        let p = |r| CurvePoint {
            env_steps: 0,
            mean_return: r,
            mask_acceptance: 0.0,
            value_loss: 0.0,
            policy_loss: 0.0,
        };
        let c = vec![p(1.0), p(2.0), p(4.0)];
        assert_eq!(final_return(&c, 2), 3.0);
        assert_eq!(final_return(&c, 10), 7.0 / 3.0);
        assert_eq!(final_return(&[], 3), 0.0);
    }
}
