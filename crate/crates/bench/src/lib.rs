//! Fixtures shared by the benchmarks.

use tradeoff_core::dp::{optimal_policy, VALUE_ITERATION_TOL};
use tradeoff_core::envs::{gen_chain, gen_dirichlet_uniform, gen_garnet};
use tradeoff_core::{Mdp, Policy, RngStream};

/// An MDP with a target and a behaviour policy.
pub struct Problem {
    pub mdp: Mdp,
    pub target: Policy,
    pub behaviour: Policy,
}

/// Flat-Dirichlet MDP and policies, streams laid out as in the CLI.
pub fn random(n_states: usize, n_actions: usize, seed: u64) -> Problem {
    let s = RngStream::from_seed(seed);
    Problem {
        mdp: gen_dirichlet_uniform(n_states, n_actions, s.child(0)).expect("valid sizes"),
        target: Policy::dirichlet(n_states, n_actions, s.child(1)),
        behaviour: Policy::dirichlet(n_states, n_actions, s.child(2)),
    }
}

pub fn garnet(n_states: usize, n_actions: usize, branching: usize, seed: u64) -> Problem {
    let s = RngStream::from_seed(seed);
    Problem {
        mdp: gen_garnet(n_states, n_actions, branching, s.child(0)).expect("valid sizes"),
        target: Policy::dirichlet(n_states, n_actions, s.child(1)),
        behaviour: Policy::dirichlet(n_states, n_actions, s.child(2)),
    }
}

/// Chain with the optimal target and a uniform behaviour policy.
pub fn chain(n_states: usize) -> Problem {
    let mdp = gen_chain(n_states).expect("valid size");
    let target = optimal_policy(&mdp, VALUE_ITERATION_TOL).expect("chain solves");
    Problem {
        behaviour: Policy::uniform(n_states, 2),
        target,
        mdp,
    }
}
