//! Named, reproducible environments.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mdp::{Mdp, MdpParts};
use crate::{Error, Result};

/// Names accepted by [`by_name`].
pub const NAMES: &[&str] = &["prop2-bandit", "chain", "garnet", "gridworld"];

/// Build a zoo environment by name. The seed only matters for randomly
/// generated environments.
pub fn by_name(name: &str, seed: u64) -> Result<Mdp> {
    match name {
        "prop2-bandit" => Ok(prop2_bandit()),
        "chain" => chain(8, 1.0, 0.9),
        "garnet" => garnet(5, 3, 2, 0.9, seed),
        "gridworld" => gridworld_suite(&default_tasks(), 0.95, 0.1),
        other => Err(Error::UnknownEnvironment(other.to_string())),
    }
}

/// One decision state with two actions that end the episode with rewards
/// 2 and 5, so `Q* = (2, 5)` at the decision state for every policy.
pub fn prop2_bandit() -> Mdp {
    Mdp::new(MdpParts {
        n_states: 2,
        n_actions: 2,
        transition: vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0],
        reward: vec![2.0, 5.0, 0.0, 0.0],
        discount: 0.9,
        terminal: vec![false, true],
        initial_distribution: vec![1.0, 0.0],
    })
    .expect("bandit is well formed")
}

/// Single-action chain `0 -> 1 -> ... -> n` with `reward` on the step into
/// the terminal state `n`.
pub fn chain(n: usize, reward: f64, discount: f64) -> Result<Mdp> {
    if n == 0 {
        return Err(Error::invalid("chain", "length must be positive"));
    }
    let ns = n + 1;
    let mut transition = vec![0.0; ns * ns];
    let mut rewards = vec![0.0; ns];
    for s in 0..n {
        transition[s * ns + s + 1] = 1.0;
    }
    transition[n * ns + n] = 1.0;
    rewards[n - 1] = reward;
    let mut terminal = vec![false; ns];
    terminal[n] = true;
    let mut initial = vec![0.0; ns];
    initial[0] = 1.0;
    Mdp::new(MdpParts {
        n_states: ns,
        n_actions: 1,
        transition,
        reward: rewards,
        discount,
        terminal,
        initial_distribution: initial,
    })
}

/// Random "garnet" MDP: every `(s, a)` reaches `branching` distinct states
/// with random probabilities; rewards are uniform in `[0, 1)`. No terminal
/// states, uniform start.
pub fn garnet(
    n_states: usize,
    n_actions: usize,
    branching: usize,
    discount: f64,
    seed: u64,
) -> Result<Mdp> {
    if branching == 0 || branching > n_states {
        return Err(Error::invalid("garnet", "branching must be in 1..=n_states"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transition = vec![0.0; n_states * n_actions * n_states];
    let mut reward = vec![0.0; n_states * n_actions];
    for sa in 0..n_states * n_actions {
        let targets = sample(&mut rng, n_states, branching);
        let mut cuts: Vec<f64> = (0..branching - 1).map(|_| rng.gen::<f64>()).collect();
        cuts.push(0.0);
        cuts.push(1.0);
        cuts.sort_by(f64::total_cmp);
        let mut weights: Vec<f64> = cuts.windows(2).map(|w| w[1] - w[0] + 1e-3).collect();
        let z: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= z);
        for (s2, w) in targets.iter().zip(weights) {
            transition[sa * n_states + s2] = w;
        }
        reward[sa] = rng.gen::<f64>();
    }
    Mdp::new(MdpParts {
        n_states,
        n_actions,
        transition,
        reward,
        discount,
        terminal: vec![false; n_states],
        initial_distribution: vec![1.0 / n_states as f64; n_states],
    })
}

/// A rectangular maze for [`gridworld_suite`]. Entering a goal cell pays its
/// reward and ends the episode.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTask {
    pub width: usize,
    pub height: usize,
    pub start: (usize, usize),
    pub goals: Vec<((usize, usize), f64)>,
    pub walls: Vec<(usize, usize)>,
}

/// Actions are up, down, left, right.
pub const GRID_ACTIONS: usize = 4;

/// Several mazes joined into one MDP: each episode starts in a uniformly
/// chosen task and stays there. State `offset(task) + y * width + x`; the
/// last state is the shared absorbing terminal. With probability `slip` the
/// move goes in a uniformly random direction instead.
pub fn gridworld_suite(tasks: &[GridTask], discount: f64, slip: f64) -> Result<Mdp> {
    if tasks.is_empty() {
        return Err(Error::invalid("gridworld", "needs at least one task"));
    }
    if !(0.0..=1.0).contains(&slip) {
        return Err(Error::invalid("gridworld", "slip must be a probability"));
    }
    let offsets: Vec<usize> = tasks
        .iter()
        .scan(0, |acc, t| {
            let o = *acc;
            *acc += t.width * t.height;
            Some(o)
        })
        .collect();
    let terminal_state = offsets.last().unwrap() + tasks.last().unwrap().width * tasks.last().unwrap().height;
    let ns = terminal_state + 1;
    let na = GRID_ACTIONS;
    let mut transition = vec![0.0; ns * na * ns];
    let mut reward = vec![0.0; ns * na];
    let mut initial = vec![0.0; ns];
    for (task, &off) in tasks.iter().zip(&offsets) {
        initial[off + task.start.1 * task.width + task.start.0] += 1.0 / tasks.len() as f64;
        for y in 0..task.height {
            for x in 0..task.width {
                let s = off + y * task.width + x;
                let blocked = task.walls.contains(&(x, y)) || task.goals.iter().any(|g| g.0 == (x, y));
                for a in 0..na {
                    let row = (s * na + a) * ns;
                    if blocked {
                        // unreachable cell; keep it a valid self-loop
                        transition[row + s] = 1.0;
                        continue;
                    }
                    for (b, w) in (0..na).map(|b| {
                        let w = slip / na as f64 + if a == b { 1.0 - slip } else { 0.0 };
                        (b, w)
                    }) {
                        if w == 0.0 {
                            continue;
                        }
                        let (nx, ny) = step_cell(task, x, y, b);
                        if let Some(&(_, r)) = task.goals.iter().find(|g| g.0 == (nx, ny)) {
                            transition[row + terminal_state] += w;
                            reward[s * na + a] += w * r;
                        } else {
                            transition[row + off + ny * task.width + nx] += w;
                        }
                    }
                }
            }
        }
    }
    for a in 0..na {
        transition[(terminal_state * na + a) * ns + terminal_state] = 1.0;
    }
    let mut terminal = vec![false; ns];
    terminal[terminal_state] = true;
    Mdp::new(MdpParts {
        n_states: ns,
        n_actions: na,
        transition,
        reward,
        discount,
        terminal,
        initial_distribution: initial,
    })
}

fn step_cell(task: &GridTask, x: usize, y: usize, action: usize) -> (usize, usize) {
    let (nx, ny) = match action {
        0 if y > 0 => (x, y - 1),
        1 if y + 1 < task.height => (x, y + 1),
        2 if x > 0 => (x - 1, y),
        3 if x + 1 < task.width => (x + 1, y),
        _ => (x, y),
    };
    if task.walls.contains(&(nx, ny)) {
        (x, y)
    } else {
        (nx, ny)
    }
}

/// The default four-task suite. Every maze has a small reward close to the
/// start and a large one further away, so greedy early policies plateau on
/// the small reward.
pub fn default_tasks() -> Vec<GridTask> {
    vec![
        GridTask {
            width: 5,
            height: 5,
            start: (0, 2),
            goals: vec![((0, 0), 3.0), ((4, 4), 10.0)],
            walls: vec![(2, 1), (2, 2), (2, 3)],
        },
        GridTask {
            width: 5,
            height: 5,
            start: (4, 2),
            goals: vec![((4, 4), 3.0), ((0, 0), 10.0)],
            walls: vec![(2, 1), (2, 2), (2, 3)],
        },
        GridTask {
            width: 5,
            height: 5,
            start: (2, 0),
            goals: vec![((4, 0), 3.0), ((2, 4), 10.0)],
            walls: vec![(1, 2), (2, 2), (3, 2)],
        },
        GridTask {
            width: 5,
            height: 5,
            start: (2, 4),
            goals: vec![((0, 4), 3.0), ((2, 0), 10.0)],
            walls: vec![(1, 2), (2, 2), (3, 2)],
        },
    ]
}
