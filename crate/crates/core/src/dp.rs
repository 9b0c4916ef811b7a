//! Exact dynamic programming on dense tabular MDPs.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mdp::{Mdp, Policy, QTable, StateActionDist};

/// Default value-iteration tolerance on `||V_{k+1} - V_k||_inf`.
pub const VALUE_ITERATION_TOL: f64 = 1e-12;

/// The state-action transition matrix under `policy` with bootstrapping from
/// terminal states removed:
/// `P[(x,a),(y,b)] = P(y|x,a) policy(b|y)` for non-terminal `y`, else 0.
pub fn policy_matrix(mdp: &Mdp, policy: &Policy) -> DMatrix<f64> {
    state_action_matrix(mdp, |y, b| {
        if mdp.is_terminal(y) {
            0.0
        } else {
            policy.prob(y, b)
        }
    })
}

/// `P[(x,a),(y,b)] = P(y|x,a) weight(y, b)`.
pub(crate) fn state_action_matrix(mdp: &Mdp, weight: impl Fn(usize, usize) -> f64) -> DMatrix<f64> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let n = ns * na;
    let mut m = DMatrix::zeros(n, n);
    for x in 0..ns {
        for a in 0..na {
            let row = mdp.pair(x, a);
            for (y, &p) in mdp.next_dist(x, a).iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for b in 0..na {
                    let w = weight(y, b);
                    if w != 0.0 {
                        m[(row, y * na + b)] += p * w;
                    }
                }
            }
        }
    }
    m
}

/// Solves `A x = b` by LU decomposition.
pub(crate) fn solve(a: DMatrix<f64>, b: &DVector<f64>, what: &'static str) -> Result<DVector<f64>> {
    let x = a.lu().solve(b).ok_or(Error::Singular(what))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular(what));
    }
    Ok(x)
}

/// One application of the evaluation operator:
/// `(T Q)(x,a) = r(x,a) + gamma sum_{y,b} P(y|x,a) policy(b|y) Q(y,b)`.
pub fn bellman_op(mdp: &Mdp, policy: &Policy, q: &QTable) -> Result<QTable> {
    mdp.check_policy(policy)?;
    mdp.check_table(q)?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let v: Vec<f64> = (0..ns).map(|y| q.expected_value(mdp, policy, y)).collect();
    let mut out = QTable::zeros(ns, na);
    for x in 0..ns {
        for a in 0..na {
            let boot: f64 = mdp.next_dist(x, a).iter().zip(&v).map(|(p, v)| p * v).sum();
            out.set(x, a, mdp.reward(x, a) + mdp.gamma() * boot);
        }
    }
    Ok(out)
}

/// `Q^pi = (I - gamma P^pi)^{-1} r`.
pub fn exact_q(mdp: &Mdp, policy: &Policy) -> Result<QTable> {
    mdp.check_policy(policy)?;
    let n = mdp.n_pairs();
    let a = DMatrix::identity(n, n) - policy_matrix(mdp, policy) * mdp.gamma();
    let q = solve(a, &mdp.reward_vector(), "policy evaluation")?;
    Ok(QTable::from_dvector(mdp.n_states(), mdp.n_actions(), &q))
}

/// `V(x) = sum_a policy(a|x) Q(x,a)`.
pub fn state_values(mdp: &Mdp, policy: &Policy, q: &QTable) -> Vec<f64> {
    (0..mdp.n_states())
        .map(|x| q.expected_value(mdp, policy, x))
        .collect()
}

/// Optimal state values by value iteration, stopped once successive iterates
/// differ by at most `tol` in sup norm.
pub fn value_iteration(mdp: &Mdp, tol: f64) -> Result<Vec<f64>> {
    if !(tol > 0.0) {
        return Err(Error::OutOfRange {
            name: "tol",
            value: tol,
            range: "(0, inf)",
        });
    }
    let ns = mdp.n_states();
    let mut v = vec![0.0; ns];
    loop {
        let next: Vec<f64> = (0..ns)
            .map(|x| {
                if mdp.is_terminal(x) {
                    0.0
                } else {
                    (0..mdp.n_actions())
                        .map(|a| one_step(mdp, &v, x, a))
                        .fold(f64::NEG_INFINITY, f64::max)
                }
            })
            .collect();
        let delta = next
            .iter()
            .zip(&v)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        v = next;
        if delta <= tol {
            return Ok(v);
        }
    }
}

fn one_step(mdp: &Mdp, v: &[f64], x: usize, a: usize) -> f64 {
    let boot: f64 = mdp
        .next_dist(x, a)
        .iter()
        .enumerate()
        .filter(|(y, _)| !mdp.is_terminal(*y))
        .map(|(y, p)| p * v[y])
        .sum();
    mdp.reward(x, a) + mdp.gamma() * boot
}

/// Deterministic optimal policy: greedy with respect to the value-iteration
/// action values, lowest action index on ties.
pub fn optimal_policy(mdp: &Mdp, tol: f64) -> Result<Policy> {
    let v = value_iteration(mdp, tol)?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut q = QTable::zeros(ns, na);
    for x in 0..ns {
        for a in 0..na {
            q.set(x, a, one_step(mdp, &v, x, a));
        }
    }
    Ok(greedy(&q))
}

/// Point mass on the first maximising action of each row.
pub fn greedy(q: &QTable) -> Policy {
    let actions: Vec<usize> = (0..q.n_states())
        .map(|x| {
            let row = q.row(x);
            let mut best = 0;
            for (a, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = a;
                }
            }
            best
        })
        .collect();
    Policy::deterministic(q.n_actions(), &actions).expect("greedy actions are in range")
}

/// `alpha * pi + (1 - alpha) * mu`, row-wise.
pub fn mixture(pi: &Policy, mu: &Policy, alpha: f64) -> Result<Policy> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::OutOfRange {
            name: "alpha",
            value: alpha,
            range: "[0, 1]",
        });
    }
    if pi.n_states() != mu.n_states() || pi.n_actions() != mu.n_actions() {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", pi.n_states(), pi.n_actions()),
            found: format!("{}x{}", mu.n_states(), mu.n_actions()),
        });
    }
    let probs: Vec<f64> = pi
        .probs()
        .iter()
        .zip(mu.probs())
        .map(|(p, m)| m + alpha * (p - m))
        .collect();
    Policy::new(pi.n_states(), pi.n_actions(), probs)
}

/// Normalised discounted state-action visitation from `start`, following
/// `policy` thereafter. Terminal states absorb (and keep choosing actions by
/// `policy`), so the result always sums to one.
pub fn discounted_visitation(
    mdp: &Mdp,
    policy: &Policy,
    start: (usize, usize),
) -> Result<StateActionDist> {
    mdp.check_policy(policy)?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    if start.0 >= ns || start.1 >= na {
        return Err(Error::InvalidDimensions(format!("start pair {start:?} out of range")));
    }
    let gamma = mdp.gamma();
    let n = mdp.n_pairs();
    let p = state_action_matrix(mdp, |y, b| policy.prob(y, b));
    let a = (DMatrix::identity(n, n) - p * gamma).transpose();
    let mut rhs = DVector::zeros(n);
    rhs[mdp.pair(start.0, start.1)] = 1.0 - gamma;
    let d = solve(a, &rhs, "discounted visitation")?;
    // clean round-off so the distribution invariant holds exactly
    let mut w: Vec<f64> = d.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    StateActionDist::new(ns, na, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{gen_chain, gen_dirichlet_uniform, CHAIN_LEFT, CHAIN_RIGHT};
    use crate::rng::RngStream;
    use rand::Rng;

    fn single_state(reward: Vec<f64>, gamma: f64) -> Mdp {
        let na = reward.len();
        Mdp::new(1, na, vec![1.0; na], reward, gamma, vec![1.0], vec![false]).unwrap()
    }

    /// Iterative policy evaluation, independent of the linear solve.
    fn evaluate_by_iteration(mdp: &Mdp, policy: &Policy) -> QTable {
        let mut q = QTable::zeros(mdp.n_states(), mdp.n_actions());
        for _ in 0..5000 {
            q = bellman_op(mdp, policy, &q).unwrap();
        }
        q
    }

    #[test]
    fn bellman_op_examples() {
        let chain = gen_chain(5).unwrap().with_gamma(0.0).unwrap();
        let pi = Policy::uniform(5, 2);
        let q = QTable::constant(5, 2, 3.0);
        assert_eq!(bellman_op(&chain, &pi, &q).unwrap().values(), chain.rewards());

        let one = single_state(vec![1.0], 0.9);
        let q = QTable::constant(1, 1, 10.0);
        let tq = bellman_op(&one, &Policy::uniform(1, 1), &q).unwrap();
        assert!((tq.get(0, 0) - 10.0).abs() < 1e-12);

        let chain = gen_chain(3).unwrap();
        let tq = bellman_op(&chain, &pi_of(3), &QTable::zeros(3, 2)).unwrap();
        assert_eq!(tq.values(), chain.rewards());
    }

    fn pi_of(ns: usize) -> Policy {
        Policy::uniform(ns, 2)
    }

    #[test]
    fn bellman_op_dimension_mismatch() {
        let chain = gen_chain(3).unwrap();
        assert!(bellman_op(&chain, &Policy::uniform(2, 2), &QTable::zeros(3, 2)).is_err());
        assert!(bellman_op(&chain, &Policy::uniform(3, 2), &QTable::zeros(3, 3)).is_err());
    }

    #[test]
    fn terminal_rows_return_zero() {
        let chain = gen_chain(4).unwrap();
        let q = QTable::constant(4, 2, 7.0);
        let tq = bellman_op(&chain, &Policy::uniform(4, 2), &q).unwrap();
        assert_eq!(tq.row(3), &[0.0, 0.0]);
        // the pair stepping into the goal does not bootstrap
        assert_eq!(tq.get(2, CHAIN_RIGHT), 50.0);
    }

    #[test]
    fn exact_q_examples() {
        let one = single_state(vec![1.0], 0.9);
        let q = exact_q(&one, &Policy::uniform(1, 1)).unwrap();
        assert!((q.get(0, 0) - 10.0).abs() < 1e-12);

        let mdp = gen_dirichlet_uniform(4, 2, RngStream::from_seed(3)).unwrap().with_gamma(0.0).unwrap();
        let q = exact_q(&mdp, &Policy::uniform(4, 2)).unwrap();
        for (a, b) in q.values().iter().zip(mdp.rewards()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn exact_q_matches_iterative_oracle_on_chain() {
        let chain = gen_chain(20).unwrap();
        let pi = optimal_policy(&chain, VALUE_ITERATION_TOL).unwrap();
        let q = exact_q(&chain, &pi).unwrap();
        let oracle = evaluate_by_iteration(&chain, &pi);
        assert!(q.linf_distance(&oracle) < 1e-8);
        // greedy optimal values coincide with value iteration
        let v = value_iteration(&chain, 1e-13).unwrap();
        let vq = state_values(&chain, &pi, &q);
        for (a, b) in v.iter().zip(&vq) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn exact_q_residual_on_random_mdps() {
        for seed in 0..100 {
            let s = RngStream::new(seed, 0);
            let mdp = gen_dirichlet_uniform(6, 3, s).unwrap();
            let pi = Policy::dirichlet(6, 3, s.child(1));
            let q = exact_q(&mdp, &pi).unwrap();
            let tq = bellman_op(&mdp, &pi, &q).unwrap();
            assert!(q.linf_distance(&tq) <= 1e-10, "seed {seed}");
        }
    }

    #[test]
    fn optimal_policy_single_state() {
        let one = single_state(vec![1.0, 0.0], 0.9);
        let pi = optimal_policy(&one, 1e-12).unwrap();
        assert_eq!(pi.deterministic_action(0), Some(0));
    }

    #[test]
    fn optimal_policy_beats_every_deterministic_policy() {
        // exhaustive enumeration on small chains
        for n in 2..=6 {
            let chain = gen_chain(n).unwrap();
            let pi = optimal_policy(&chain, VALUE_ITERATION_TOL).unwrap();
            let best = exact_q(&chain, &pi).unwrap();
            let v_best = state_values(&chain, &pi, &best);
            for code in 0..(1usize << n) {
                let actions: Vec<usize> = (0..n).map(|x| (code >> x) & 1).collect();
                let p = Policy::deterministic(2, &actions).unwrap();
                let v = state_values(&chain, &p, &exact_q(&chain, &p).unwrap());
                for x in 0..n {
                    assert!(v[x] <= v_best[x] + 1e-10, "n={n} code={code} x={x}");
                }
            }
        }
    }

    #[test]
    fn optimal_policy_is_greedy_wrt_own_values() {
        for seed in 0..20 {
            let mdp = gen_dirichlet_uniform(5, 3, RngStream::from_seed(seed)).unwrap();
            let pi = optimal_policy(&mdp, VALUE_ITERATION_TOL).unwrap();
            let q = exact_q(&mdp, &pi).unwrap();
            assert_eq!(greedy(&q), pi, "seed {seed}");
        }
    }

    #[test]
    fn chain_optimal_policy_structure() {
        // walking right from the first state costs more than the discounted
        // goal reward is worth; from the second it is barely worth it
        let chain = gen_chain(20).unwrap();
        let pi = optimal_policy(&chain, VALUE_ITERATION_TOL).unwrap();
        assert_eq!(pi.deterministic_action(0), Some(CHAIN_LEFT));
        for x in 1..19 {
            assert_eq!(pi.deterministic_action(x), Some(CHAIN_RIGHT), "state {x}");
        }
    }

    #[test]
    fn greedy_and_mixture() {
        let q = QTable::from_vec(1, 3, vec![1.0, 3.0, 3.0]).unwrap();
        assert_eq!(greedy(&q).deterministic_action(0), Some(1));

        let pi = Policy::deterministic(2, &[0]).unwrap();
        let mu = Policy::deterministic(2, &[1]).unwrap();
        assert_eq!(mixture(&pi, &mu, 0.5).unwrap().row(0), &[0.5, 0.5]);
        assert_eq!(mixture(&pi, &mu, 1.0).unwrap(), pi);
        assert_eq!(mixture(&pi, &mu, 0.0).unwrap(), mu);
        assert!(mixture(&pi, &mu, 1.5).is_err());
        assert!(mixture(&pi, &mu, -0.1).is_err());
        assert!(mixture(&pi, &Policy::uniform(2, 2), 0.5).is_err());
    }

    #[test]
    fn visitation_single_self_loop() {
        let one = single_state(vec![1.0], 0.9);
        let d = discounted_visitation(&one, &Policy::uniform(1, 1), (0, 0)).unwrap();
        assert!((d.weight(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn visitation_small_gamma_concentrates_on_start() {
        let mdp = gen_dirichlet_uniform(4, 2, RngStream::from_seed(2))
            .unwrap()
            .with_gamma(1e-12)
            .unwrap();
        let d = discounted_visitation(&mdp, &Policy::uniform(4, 2), (2, 1)).unwrap();
        assert!((d.weight(2, 1) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn visitation_on_chain_closed_form() {
        let chain = gen_chain(4).unwrap();
        let right = Policy::deterministic(2, &[1, 1, 1, 1]).unwrap();
        let d = discounted_visitation(&chain, &right, (0, CHAIN_RIGHT)).unwrap();
        let g: f64 = 0.9;
        let expected = [1.0 - g, (1.0 - g) * g, (1.0 - g) * g * g, g.powi(3)];
        for (x, e) in expected.iter().enumerate() {
            assert!((d.weight(x, CHAIN_RIGHT) - e).abs() < 1e-12);
            assert_eq!(d.weight(x, CHAIN_LEFT), 0.0);
        }
    }

    /// Geometric-stopping Monte Carlo: the pair occupied at an independent
    /// Geometric(1 - gamma) time is distributed as the discounted visitation.
    #[test]
    fn visitation_matches_monte_carlo_on_chain6() {
        let chain = gen_chain(6).unwrap();
        let mu = Policy::uniform(6, 2);
        let start = (1, CHAIN_RIGHT);
        let d = discounted_visitation(&chain, &mu, start).unwrap();
        let mut rng = RngStream::new(11, 0).rng();
        let n = 100_000;
        let mut counts = vec![0usize; 12];
        for _ in 0..n {
            let (mut x, mut a) = start;
            while rng.random::<f64>() < chain.gamma() {
                x = crate::mdp::sample_index(chain.next_dist(x, a), &mut rng);
                a = mu.sample_action(x, &mut rng);
            }
            counts[chain.pair(x, a)] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            let p_hat = c as f64 / n as f64;
            let p = d.weights()[i];
            let se = (p * (1.0 - p) / n as f64).sqrt().max(1e-12);
            assert!((p_hat - p).abs() <= 3.0 * se + 1e-12, "pair {i}: {p_hat} vs {p}");
        }
    }
}
