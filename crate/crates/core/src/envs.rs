//! Generators for the three benchmark environment families.

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::{flat_dirichlet, Mdp};
use crate::rng::RngStream;

pub const DEFAULT_GAMMA: f64 = 0.9;

pub const CHAIN_LEFT: usize = 0;
pub const CHAIN_RIGHT: usize = 1;

/// Random MDP with flat-Dirichlet transition rows and Uniform([-1, 1])
/// deterministic rewards. No terminal states; uniform initial distribution.
pub fn gen_dirichlet_uniform(n_s: usize, n_a: usize, stream: RngStream) -> Result<Mdp> {
    if n_s == 0 || n_a == 0 {
        return Err(Error::InvalidDimensions(format!(
            "dirichlet-uniform MDP needs n_s >= 1 and n_a >= 1 (got {n_s}, {n_a})"
        )));
    }
    let mut rng = stream.rng();
    let mut transition = Vec::with_capacity(n_s * n_a * n_s);
    for _ in 0..n_s * n_a {
        transition.extend(flat_dirichlet(n_s, &mut rng));
    }
    let reward = (0..n_s * n_a)
        .map(|_| rng.random_range(-1.0..=1.0))
        .collect();
    Mdp::new(
        n_s,
        n_a,
        transition,
        reward,
        DEFAULT_GAMMA,
        vec![1.0 / n_s as f64; n_s],
        vec![false; n_s],
    )
}

/// Garnet MDP: each row spreads mass `1/n_b` over `n_b` distinct successor
/// states, and `floor(n_s / 10)` reward states pay 1 on every transition out
/// of them.
pub fn gen_garnet(n_s: usize, n_a: usize, n_b: usize, stream: RngStream) -> Result<Mdp> {
    if n_s == 0 || n_a == 0 || n_b == 0 {
        return Err(Error::InvalidDimensions(format!(
            "garnet needs positive sizes (got n_s={n_s}, n_a={n_a}, n_b={n_b})"
        )));
    }
    if n_b > n_s {
        return Err(Error::InvalidDimensions(format!(
            "branching factor {n_b} exceeds number of states {n_s}"
        )));
    }
    let mut rng = stream.rng();
    let mass = 1.0 / n_b as f64;
    let mut transition = vec![0.0; n_s * n_a * n_s];
    for row in transition.chunks_mut(n_s) {
        for y in index::sample(&mut rng, n_s, n_b) {
            row[y] = mass;
        }
    }
    let mut reward = vec![0.0; n_s * n_a];
    for x in index::sample(&mut rng, n_s, n_s / 10) {
        reward[x * n_a..(x + 1) * n_a].fill(1.0);
    }
    Mdp::new(
        n_s,
        n_a,
        transition,
        reward,
        DEFAULT_GAMMA,
        vec![1.0 / n_s as f64; n_s],
        vec![false; n_s],
    )
}

/// Chain options beyond the state count.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChainOptions {
    /// Reward for the `left` action.
    pub left_reward: f64,
    pub right_reward: f64,
    pub goal_reward: f64,
    pub gamma: f64,
}

impl Default for ChainOptions {
    fn default() -> Self {
        Self {
            left_reward: 0.0,
            right_reward: -1.0,
            goal_reward: 50.0,
            gamma: DEFAULT_GAMMA,
        }
    }
}

/// The deterministic chain with default options.
///
/// States `1..=n_s` of the usual presentation are indices `0..n_s` here; the
/// last one is terminal. Action 0 is `left`, action 1 is `right`. The initial
/// distribution is uniform over non-terminal states.
pub fn gen_chain(n_s: usize) -> Result<Mdp> {
    gen_chain_with(n_s, ChainOptions::default())
}

pub fn gen_chain_with(n_s: usize, opts: ChainOptions) -> Result<Mdp> {
    if n_s < 2 {
        return Err(Error::InvalidDimensions(format!(
            "chain needs at least 2 states (got {n_s})"
        )));
    }
    let goal = n_s - 1;
    let mut transition = vec![0.0; n_s * 2 * n_s];
    let mut reward = vec![0.0; n_s * 2];
    let mut set = |x: usize, a: usize, y: usize, r: f64| {
        transition[(x * 2 + a) * n_s + y] = 1.0;
        reward[x * 2 + a] = r;
    };
    for x in 0..goal {
        set(x, CHAIN_LEFT, x.saturating_sub(1), opts.left_reward);
        let r = if x + 1 == goal {
            opts.goal_reward
        } else {
            opts.right_reward
        };
        set(x, CHAIN_RIGHT, x + 1, r);
    }
    set(goal, CHAIN_LEFT, goal, 0.0);
    set(goal, CHAIN_RIGHT, goal, 0.0);
    let mut initial = vec![1.0 / goal as f64; n_s];
    initial[goal] = 0.0;
    let mut terminal = vec![false; n_s];
    terminal[goal] = true;
    Mdp::new(n_s, 2, transition, reward, opts.gamma, initial, terminal)
}
