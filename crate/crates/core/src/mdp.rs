//! Finite MDPs, policies and state-action tables.
//!
//! Everything is dense and row-major. A state-action pair `(x, a)` is stored
//! at index `x * n_actions + a`; transitions are indexed `(x, a, y)`.
//!
//! Terminal states are zero-reward absorbing states. Their values are never
//! bootstrapped from: every operator in this crate treats `Q(terminal, .)` as 0.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

pub(crate) const PROB_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Mdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    gamma: f64,
    initial_dist: Vec<f64>,
    terminal: Vec<bool>,
}

impl Mdp {
    /// Builds an MDP and checks every structural invariant.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        gamma: f64,
        initial_dist: Vec<f64>,
        terminal: Vec<bool>,
    ) -> Result<Self> {
        let mdp = Self {
            n_states,
            n_actions,
            transition,
            reward,
            gamma,
            initial_dist,
            terminal,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn validate(&self) -> Result<()> {
        let (ns, na) = (self.n_states, self.n_actions);
        if ns == 0 || na == 0 {
            return Err(Error::InvalidDimensions(format!(
                "n_states={ns}, n_actions={na}; both must be positive"
            )));
        }
        if self.transition.len() != ns * na * ns {
            return Err(Error::InvalidMdp(format!(
                "transition has {} entries, expected {}",
                self.transition.len(),
                ns * na * ns
            )));
        }
        if self.reward.len() != ns * na {
            return Err(Error::InvalidMdp(format!(
                "reward has {} entries, expected {}",
                self.reward.len(),
                ns * na
            )));
        }
        if self.initial_dist.len() != ns || self.terminal.len() != ns {
            return Err(Error::InvalidMdp(
                "initial_dist and terminal must have one entry per state".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::OutOfRange {
                name: "gamma",
                value: self.gamma,
                range: "[0, 1)",
            });
        }
        if self.reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidMdp("non-finite reward".into()));
        }
        for x in 0..ns {
            for a in 0..na {
                let row = self.next_dist(x, a);
                if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err(Error::InvalidMdp(format!(
                        "transition row ({x}, {a}) has an entry outside [0, 1]"
                    )));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > PROB_TOL {
                    return Err(Error::InvalidMdp(format!(
                        "transition row ({x}, {a}) sums to {sum}"
                    )));
                }
                if self.terminal[x] {
                    if row[x] != 1.0 {
                        return Err(Error::InvalidMdp(format!(
                            "terminal state {x} is not absorbing under action {a}"
                        )));
                    }
                    if self.reward(x, a) != 0.0 {
                        return Err(Error::InvalidMdp(format!(
                            "terminal state {x} has nonzero reward under action {a}"
                        )));
                    }
                }
            }
        }
        check_distribution(&self.initial_dist, "initial_dist")
            .map_err(|e| Error::InvalidMdp(e.to_string()))?;
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    #[inline]
    pub fn pair(&self, x: usize, a: usize) -> usize {
        x * self.n_actions + a
    }

    #[inline]
    pub fn transition(&self, x: usize, a: usize, y: usize) -> f64 {
        self.transition[(x * self.n_actions + a) * self.n_states + y]
    }

    /// Next-state distribution of `(x, a)`.
    #[inline]
    pub fn next_dist(&self, x: usize, a: usize) -> &[f64] {
        let start = (x * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    #[inline]
    pub fn reward(&self, x: usize, a: usize) -> f64 {
        self.reward[x * self.n_actions + a]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transition
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    #[inline]
    pub fn is_terminal(&self, x: usize) -> bool {
        self.terminal[x]
    }

    pub fn terminal_mask(&self) -> &[bool] {
        &self.terminal
    }

    pub fn has_terminal_states(&self) -> bool {
        self.terminal.iter().any(|&t| t)
    }

    /// Largest absolute immediate reward.
    pub fn r_max(&self) -> f64 {
        self.reward.iter().fold(0.0_f64, |m, r| m.max(r.abs()))
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        self.gamma = gamma;
        self.validate()?;
        Ok(self)
    }

    pub fn with_initial_dist(mut self, initial_dist: Vec<f64>) -> Result<Self> {
        self.initial_dist = initial_dist;
        self.validate()?;
        Ok(self)
    }

    pub(crate) fn reward_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.reward)
    }

    pub(crate) fn check_policy(&self, policy: &Policy) -> Result<()> {
        if policy.n_states != self.n_states || policy.n_actions != self.n_actions {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.n_states, self.n_actions),
                found: format!("{}x{}", policy.n_states, policy.n_actions),
            });
        }
        Ok(())
    }

    pub(crate) fn check_table(&self, q: &QTable) -> Result<()> {
        if q.n_states != self.n_states || q.n_actions != self.n_actions {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.n_states, self.n_actions),
                found: format!("{}x{}", q.n_states, q.n_actions),
            });
        }
        Ok(())
    }
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidPolicy(format!("{what} has an entry outside [0, 1]")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(Error::InvalidPolicy(format!("{what} sums to {sum}")));
    }
    Ok(())
}

/// Draws from the flat Dirichlet on the `n`-simplex by normalising
/// independent Exp(1) variates.
pub(crate) fn flat_dirichlet<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = w.iter().sum();
    if total > 0.0 {
        w.iter_mut().for_each(|v| *v /= total);
    } else {
        w.iter_mut().for_each(|v| *v = 1.0 / n as f64);
    }
    w
}

/// Samples an index from a probability vector.
#[inline]
pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// A Markov policy: one action distribution per state.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if n_states == 0 || n_actions == 0 || probs.len() != n_states * n_actions {
            return Err(Error::InvalidDimensions(format!(
                "policy table of {} entries for {n_states}x{n_actions}",
                probs.len()
            )));
        }
        for x in 0..n_states {
            check_distribution(&probs[x * n_actions..(x + 1) * n_actions], &format!("policy row {x}"))?;
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    /// Point mass on `actions[x]` in every state.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        if let Some(&a) = actions.iter().find(|&&a| a >= n_actions) {
            return Err(Error::InvalidPolicy(format!("action {a} out of range")));
        }
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (x, &a) in actions.iter().enumerate() {
            probs[x * n_actions + a] = 1.0;
        }
        Self::new(actions.len(), n_actions, probs)
    }

    /// Independent flat-Dirichlet action distribution in every state.
    pub fn dirichlet(n_states: usize, n_actions: usize, stream: RngStream) -> Self {
        let mut rng = stream.rng();
        let probs = (0..n_states)
            .flat_map(|_| flat_dirichlet(n_actions, &mut rng))
            .collect();
        Self {
            n_states,
            n_actions,
            probs,
        }
    }

    /// Mixes `epsilon` of the uniform policy into `self`.
    pub fn epsilon_soft(&self, epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::OutOfRange {
                name: "epsilon",
                value: epsilon,
                range: "[0, 1]",
            });
        }
        let u = 1.0 / self.n_actions as f64;
        let probs = self
            .probs
            .iter()
            .map(|p| (1.0 - epsilon) * p + epsilon * u)
            .collect();
        Ok(Self {
            n_states: self.n_states,
            n_actions: self.n_actions,
            probs,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn prob(&self, x: usize, a: usize) -> f64 {
        self.probs[x * self.n_actions + a]
    }

    #[inline]
    pub fn row(&self, x: usize) -> &[f64] {
        &self.probs[x * self.n_actions..(x + 1) * self.n_actions]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, x: usize, rng: &mut R) -> usize {
        sample_index(self.row(x), rng)
    }

    /// The action carrying all the mass in state `x`, if the row is a point mass.
    pub fn deterministic_action(&self, x: usize) -> Option<usize> {
        self.row(x).iter().position(|&p| p == 1.0)
    }
}

/// A real-valued table over state-action pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
        }
    }

    pub fn constant(n_states: usize, n_actions: usize, value: f64) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![value; n_states * n_actions],
        }
    }

    pub fn from_vec(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(Error::DimensionMismatch {
                expected: format!("{} values", n_states * n_actions),
                found: format!("{} values", values.len()),
            });
        }
        Ok(Self {
            n_states,
            n_actions,
            values,
        })
    }

    pub(crate) fn from_dvector(n_states: usize, n_actions: usize, v: &DVector<f64>) -> Self {
        Self {
            n_states,
            n_actions,
            values: v.as_slice().to_vec(),
        }
    }

    pub(crate) fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.values)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn get(&self, x: usize, a: usize) -> f64 {
        self.values[x * self.n_actions + a]
    }

    #[inline]
    pub fn set(&mut self, x: usize, a: usize, v: f64) {
        self.values[x * self.n_actions + a] = v;
    }

    #[inline]
    pub fn row(&self, x: usize) -> &[f64] {
        &self.values[x * self.n_actions..(x + 1) * self.n_actions]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn l2_distance(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn linf_distance(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn linf_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `sum_a policy(a|x) Q(x, a)`, or 0 when `x` is terminal.
    #[inline]
    pub fn expected_value(&self, mdp: &Mdp, policy: &Policy, x: usize) -> f64 {
        if mdp.is_terminal(x) {
            return 0.0;
        }
        self.row(x)
            .iter()
            .zip(policy.row(x))
            .map(|(q, p)| q * p)
            .sum()
    }
}

/// A probability distribution over state-action pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct StateActionDist {
    n_states: usize,
    n_actions: usize,
    weights: Vec<f64>,
}

impl StateActionDist {
    pub fn new(n_states: usize, n_actions: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != n_states * n_actions {
            return Err(Error::InvalidDimensions(format!(
                "{} weights for {n_states}x{n_actions}",
                weights.len()
            )));
        }
        if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidPolicy("negative or non-finite weight".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidPolicy(format!("weights sum to {sum}")));
        }
        Ok(Self {
            n_states,
            n_actions,
            weights,
        })
    }

    /// `nu(x, a) = initial(x) * behaviour(a | x)`: the distribution of the
    /// first pair of a trajectory started from the MDP's initial distribution.
    pub fn initial_pairs(mdp: &Mdp, behaviour: &Policy) -> Self {
        let weights = (0..mdp.n_states())
            .flat_map(|x| {
                let p0 = mdp.initial_dist()[x];
                behaviour.row(x).iter().map(move |m| p0 * m)
            })
            .collect();
        Self {
            n_states: mdp.n_states(),
            n_actions: mdp.n_actions(),
            weights,
        }
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let n = n_states * n_actions;
        Self {
            n_states,
            n_actions,
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn point_mass(n_states: usize, n_actions: usize, x: usize, a: usize) -> Self {
        let mut weights = vec![0.0; n_states * n_actions];
        weights[x * n_actions + a] = 1.0;
        Self {
            n_states,
            n_actions,
            weights,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn weight(&self, x: usize, a: usize) -> f64 {
        self.weights[x * self.n_actions + a]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let i = sample_index(&self.weights, rng);
        (i / self.n_actions, i % self.n_actions)
    }

    /// Weighted average of a per-pair quantity.
    pub fn average(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

/// Current on-disk schema version for MDP documents.
pub const MDP_SCHEMA_VERSION: u32 = 1;

/// Float wrapper written with 17 significant digits.
#[derive(Clone, Copy, Debug)]
struct Exact(f64);

impl Serialize for Exact {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let text = format!("{:.16e}", self.0);
        let raw = serde_json::value::RawValue::from_string(text).map_err(serde::ser::Error::custom)?;
        raw.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Exact {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        f64::deserialize(deserializer).map(Exact)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MdpDocument {
    version: u32,
    n_states: usize,
    n_actions: usize,
    gamma: Exact,
    transition: Vec<Vec<Vec<Exact>>>,
    reward: Vec<Vec<Exact>>,
    initial_dist: Vec<Exact>,
    terminal: Vec<bool>,
}

impl Mdp {
    /// Serialises to the JSON document format (17 significant digits per float).
    pub fn to_json(&self) -> Result<String> {
        let (ns, na) = (self.n_states, self.n_actions);
        let doc = MdpDocument {
            version: MDP_SCHEMA_VERSION,
            n_states: ns,
            n_actions: na,
            gamma: Exact(self.gamma),
            transition: (0..ns)
                .map(|x| {
                    (0..na)
                        .map(|a| self.next_dist(x, a).iter().map(|&p| Exact(p)).collect())
                        .collect()
                })
                .collect(),
            reward: (0..ns)
                .map(|x| (0..na).map(|a| Exact(self.reward(x, a))).collect())
                .collect(),
            initial_dist: self.initial_dist.iter().map(|&p| Exact(p)).collect(),
            terminal: self.terminal.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MdpDocument = serde_json::from_str(text)?;
        if doc.version != MDP_SCHEMA_VERSION {
            return Err(Error::InvalidMdp(format!(
                "unsupported schema version {} (expected {MDP_SCHEMA_VERSION})",
                doc.version
            )));
        }
        let (ns, na) = (doc.n_states, doc.n_actions);
        if doc.transition.len() != ns
            || doc.transition.iter().any(|r| r.len() != na || r.iter().any(|c| c.len() != ns))
            || doc.reward.len() != ns
            || doc.reward.iter().any(|r| r.len() != na)
        {
            return Err(Error::InvalidMdp("array shapes do not match n_states/n_actions".into()));
        }
        let transition = doc
            .transition
            .into_iter()
            .flatten()
            .flatten()
            .map(|e| e.0)
            .collect();
        let reward = doc.reward.into_iter().flatten().map(|e| e.0).collect();
        Mdp::new(
            ns,
            na,
            transition,
            reward,
            doc.gamma.0,
            doc.initial_dist.into_iter().map(|e| e.0).collect(),
            doc.terminal,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> Mdp {
        Mdp::new(
            2,
            1,
            vec![0.25, 0.75, 0.0, 1.0],
            vec![0.1, 0.0],
            0.9,
            vec![1.0, 0.0],
            vec![false, true],
        )
        .unwrap()
    }

    #[test]
    fn rejects_bad_rows() {
        let err = Mdp::new(1, 1, vec![0.5], vec![0.0], 0.9, vec![1.0], vec![false]);
        assert!(matches!(err, Err(Error::InvalidMdp(_))));
        let err = Mdp::new(1, 1, vec![1.0], vec![0.0], 1.0, vec![1.0], vec![false]);
        assert!(matches!(err, Err(Error::OutOfRange { name: "gamma", .. })));
    }

    #[test]
    fn terminal_must_absorb_with_zero_reward() {
        let err = Mdp::new(
            2,
            1,
            vec![0.0, 1.0, 0.0, 1.0],
            vec![0.0, 1.0],
            0.9,
            vec![1.0, 0.0],
            vec![false, true],
        );
        assert!(err.is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mdp = two_state();
        let text = mdp.to_json().unwrap();
        assert!(text.contains("7.5000000000000000e-1"));
        assert_eq!(Mdp::from_json(&text).unwrap(), mdp);
    }

    #[test]
    fn json_rejects_unknown_keys_and_versions() {
        let text = two_state().to_json().unwrap();
        let bumped = text.replacen("\"version\": 1", "\"version\": 2", 1);
        assert!(Mdp::from_json(&bumped).is_err());
        let extra = text.replacen("{", "{\n  \"colour\": 3,", 1);
        assert!(Mdp::from_json(&extra).is_err());
    }

    #[test]
    fn policy_validation() {
        assert!(Policy::new(1, 2, vec![0.5, 0.6]).is_err());
        assert!(Policy::deterministic(2, &[0, 2]).is_err());
        let p = Policy::deterministic(3, &[2, 0]).unwrap();
        assert_eq!(p.deterministic_action(0), Some(2));
        let soft = p.epsilon_soft(0.3).unwrap();
        assert!((soft.prob(0, 2) - 0.8).abs() < 1e-15);
        assert!((soft.prob(0, 0) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn initial_pair_distribution_sums_to_one() {
        let mdp = two_state();
        let nu = StateActionDist::initial_pairs(&mdp, &Policy::uniform(2, 1));
        assert_eq!(nu.weights(), &[1.0, 0.0]);
    }
}
