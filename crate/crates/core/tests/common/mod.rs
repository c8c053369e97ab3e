#![allow(dead_code)]

use laser_core::mdp::{Trajectory, Transition};
use laser_core::TabularPolicy;
use rand::Rng;

/// Full-support random policy; every probability is at least `floor / n_actions`.
pub fn random_policy<R: Rng>(rng: &mut R, n_states: usize, n_actions: usize, floor: f64) -> TabularPolicy {
    let mut probs = Vec::with_capacity(n_states * n_actions);
    for _ in 0..n_states {
        let raw: Vec<f64> = (0..n_actions).map(|_| rng.gen::<f64>()).collect();
        let z: f64 = raw.iter().sum();
        probs.extend(raw.iter().map(|x| (1.0 - floor) * x / z + floor / n_actions as f64));
    }
    TabularPolicy::new(n_states, n_actions, probs).unwrap()
}

pub fn random_values<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

pub fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Hand-built trajectory from `(state, action, reward, behaviour)` steps.
pub fn trajectory(steps: &[(usize, usize, f64, &[f64])], final_state: usize, terminated: bool) -> Trajectory {
    Trajectory {
        transitions: steps
            .iter()
            .map(|&(state, action, reward, behaviour)| Transition {
                state,
                action,
                reward,
                behaviour: behaviour.to_vec(),
            })
            .collect(),
        behaviour_id: 0,
        start_state: steps.first().map_or(final_state, |s| s.0),
        final_state,
        terminated,
    }
}
