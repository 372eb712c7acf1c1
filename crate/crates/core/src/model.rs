//! POMDP data model: instances, beliefs, validation and the Bayes machinery
//! shared by the formulation, the simulator and the controllers.
//!
//! Emission probabilities are stored per action, `p(o | s', a)`, where `a`
//! is the action that led into the emitting state `s'`. Instances whose
//! slices all agree are flagged as action-independent and every slice then
//! holds the same bits, so `p(o | s)` reads are exact.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on probability rows of a validated instance.
pub const PROB_TOL: f64 = 1e-9;

/// Observations with a predictive probability at or below this are rejected
/// by [`belief_update`].
pub const IMPOSSIBLE_OBS_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("observation {observation} has probability zero after action {action}")]
    ImpossibleObservation { action: usize, observation: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid belief: {0}")]
    InvalidBelief(String),
}

/// Probability vector over states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Belief(Vec<f64>);

impl Belief {
    pub fn new(probs: Vec<f64>) -> Result<Self, ModelError> {
        if probs.is_empty() {
            return Err(ModelError::InvalidBelief("empty belief".into()));
        }
        if let Some((i, p)) = probs.iter().enumerate().find(|(_, p)| !(**p >= 0.0)) {
            return Err(ModelError::InvalidBelief(format!("entry {i} is {p}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_TOL {
            return Err(ModelError::InvalidBelief(format!("entries sum to {sum}")));
        }
        Ok(Belief(probs))
    }

    pub fn uniform(n: usize) -> Self {
        Belief(vec![1.0 / n as f64; n])
    }

    pub fn point(n: usize, state: usize) -> Self {
        let mut probs = vec![0.0; n];
        probs[state] = 1.0;
        Belief(probs)
    }

    /// Normalizes nonnegative weights into a belief.
    pub fn from_weights(weights: &[f64]) -> Result<Self, ModelError> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(ModelError::InvalidBelief("weights must be nonnegative with positive sum".into()));
        }
        Ok(Belief(weights.iter().map(|w| w / sum).collect()))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Emission table handed to [`PomdpInstance::from_tables`].
#[derive(Debug, Clone)]
pub enum Emission {
    /// `p(o | s)` indexed `[s][o]`.
    Independent(Vec<Vec<f64>>),
    /// `p(o | s', a)` indexed `[a][s'][o]`.
    PerAction(Vec<Vec<Vec<f64>>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PomdpInstance {
    states: Vec<String>,
    actions: Vec<String>,
    observations: Vec<String>,
    /// `[a][s][s']`
    transition: Vec<f64>,
    /// `[a][s'][o]`
    emission: Vec<f64>,
    action_dependent: bool,
    /// `[s][a]`
    reward: Vec<f64>,
    discount: f64,
    initial_belief: Belief,
}

impl PomdpInstance {
    /// Builds an instance from nested tables. Shapes are checked here;
    /// probabilistic invariants are left to [`validate`].
    ///
    /// Per-action emission slices that agree within [`PROB_TOL`] are
    /// collapsed onto the first slice.
    pub fn from_tables(
        states: Vec<String>,
        actions: Vec<String>,
        observations: Vec<String>,
        transition: Vec<Vec<Vec<f64>>>,
        emission: Emission,
        reward: Vec<Vec<f64>>,
        discount: f64,
        initial_belief: Option<Belief>,
    ) -> Result<Self, ModelError> {
        let (ns, na, no) = (states.len(), actions.len(), observations.len());
        if ns == 0 || na == 0 || no == 0 {
            return Err(ModelError::Shape("states, actions and observations must be nonempty".into()));
        }
        if transition.len() != na || transition.iter().any(|m| m.len() != ns || m.iter().any(|r| r.len() != ns)) {
            return Err(ModelError::Shape(format!("transition must be {na}x{ns}x{ns}")));
        }
        let per_action = match emission {
            Emission::Independent(m) => {
                if m.len() != ns || m.iter().any(|r| r.len() != no) {
                    return Err(ModelError::Shape(format!("emission must be {ns}x{no}")));
                }
                vec![m; na]
            }
            Emission::PerAction(t) => {
                if t.len() != na || t.iter().any(|m| m.len() != ns || m.iter().any(|r| r.len() != no)) {
                    return Err(ModelError::Shape(format!("emission must be {na}x{ns}x{no}")));
                }
                t
            }
        };
        if reward.len() != ns || reward.iter().any(|r| r.len() != na) {
            return Err(ModelError::Shape(format!("reward must be {ns}x{na}")));
        }
        let initial_belief = match initial_belief {
            Some(b) if b.len() != ns => {
                return Err(ModelError::Shape(format!("initial belief must have {ns} entries")))
            }
            Some(b) => b,
            None => Belief::uniform(ns),
        };
        let transition = transition.into_iter().flatten().flatten().collect();
        let mut emission: Vec<f64> = per_action.into_iter().flatten().flatten().collect();
        let slice = ns * no;
        let action_dependent = (1..na).any(|a| {
            (0..slice).any(|k| (emission[a * slice + k] - emission[k]).abs() > PROB_TOL)
        });
        if !action_dependent {
            for a in 1..na {
                let (head, tail) = emission.split_at_mut(a * slice);
                tail[..slice].copy_from_slice(&head[..slice]);
            }
        }
        Ok(PomdpInstance {
            states,
            actions,
            observations,
            transition,
            emission,
            action_dependent,
            reward: reward.into_iter().flatten().collect(),
            discount,
            initial_belief,
        })
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn num_observations(&self) -> usize {
        self.observations.len()
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn actions(&self) -> &[String] {
        &self.actions
    }

    pub fn observations(&self) -> &[String] {
        &self.observations
    }

    pub fn action_index(&self, name: &str) -> Option<usize> {
        self.actions.iter().position(|a| a == name)
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s == name)
    }

    pub fn observation_index(&self, name: &str) -> Option<usize> {
        self.observations.iter().position(|o| o == name)
    }

    /// `p(next | state, action)`
    #[inline]
    pub fn transition(&self, action: usize, state: usize, next: usize) -> f64 {
        let n = self.states.len();
        self.transition[(action * n + state) * n + next]
    }

    /// Row `p(· | state, action)`.
    #[inline]
    pub fn transition_row(&self, action: usize, state: usize) -> &[f64] {
        let n = self.states.len();
        let start = (action * n + state) * n;
        &self.transition[start..start + n]
    }

    /// `p(obs | state, prev_action)` where `prev_action` led into `state`.
    #[inline]
    pub fn emission(&self, prev_action: usize, state: usize, obs: usize) -> f64 {
        let no = self.observations.len();
        self.emission[(prev_action * self.states.len() + state) * no + obs]
    }

    #[inline]
    pub fn emission_row(&self, prev_action: usize, state: usize) -> &[f64] {
        let no = self.observations.len();
        let start = (prev_action * self.states.len() + state) * no;
        &self.emission[start..start + no]
    }

    /// Emission used for the step-0 observation, which no action precedes:
    /// the action-averaged table (exactly `p(o | s)` when emissions are
    /// action-independent). Step-0 rules never depend on it.
    pub fn initial_emission(&self, state: usize, obs: usize) -> f64 {
        if !self.action_dependent {
            return self.emission(0, state, obs);
        }
        let na = self.actions.len();
        (0..na).map(|a| self.emission(a, state, obs)).sum::<f64>() / na as f64
    }

    /// True when the source gave `p(o | s', a)` slices that differ.
    pub fn action_dependent_emission(&self) -> bool {
        self.action_dependent
    }

    #[inline]
    pub fn reward(&self, state: usize, action: usize) -> f64 {
        self.reward[state * self.actions.len() + action]
    }

    /// Largest absolute reward.
    pub fn reward_sup(&self) -> f64 {
        self.reward.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn initial_belief(&self) -> &Belief {
        &self.initial_belief
    }

    pub fn with_discount(&self, discount: f64) -> Self {
        PomdpInstance { discount, ..self.clone() }
    }

    pub fn with_initial_belief(&self, belief: Belief) -> Result<Self, ModelError> {
        if belief.len() != self.num_states() {
            return Err(ModelError::Shape("belief length does not match state count".into()));
        }
        Ok(PomdpInstance { initial_belief: belief, ..self.clone() })
    }

    /// Same instance with `r(s, a)` replaced by `f(s, a, r(s, a))`.
    pub fn map_rewards(&self, f: impl Fn(usize, usize, f64) -> f64) -> Self {
        let na = self.num_actions();
        let reward = self
            .reward
            .iter()
            .enumerate()
            .map(|(k, r)| f(k / na, k % na, *r))
            .collect();
        PomdpInstance { reward, ..self.clone() }
    }

    /// Reorders states, actions and observations: entry `i` of each
    /// permutation names the old index placed at new position `i`.
    pub fn permuted(&self, states: &[usize], actions: &[usize], observations: &[usize]) -> Self {
        let (ns, na, no) = (self.num_states(), self.num_actions(), self.num_observations());
        assert!(states.len() == ns && actions.len() == na && observations.len() == no);
        let transition = (0..na)
            .map(|a| {
                (0..ns)
                    .map(|s| (0..ns).map(|t| self.transition(actions[a], states[s], states[t])).collect())
                    .collect()
            })
            .collect();
        let emission = (0..na)
            .map(|a| {
                (0..ns)
                    .map(|s| (0..no).map(|o| self.emission(actions[a], states[s], observations[o])).collect())
                    .collect()
            })
            .collect();
        let reward = (0..ns)
            .map(|s| (0..na).map(|a| self.reward(states[s], actions[a])).collect())
            .collect();
        let belief = Belief(states.iter().map(|&s| self.initial_belief.0[s]).collect());
        PomdpInstance::from_tables(
            states.iter().map(|&s| self.states[s].clone()).collect(),
            actions.iter().map(|&a| self.actions[a].clone()).collect(),
            observations.iter().map(|&o| self.observations[o].clone()).collect(),
            transition,
            Emission::PerAction(emission),
            reward,
            self.discount,
            Some(belief),
        )
        .expect("permutation preserves shapes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    TransitionRowSum { action: usize, state: usize, sum: f64 },
    NegativeTransition { action: usize, state: usize, next: usize, value: f64 },
    EmissionRowSum { action: usize, state: usize, sum: f64 },
    NegativeEmission { action: usize, state: usize, obs: usize, value: f64 },
    BeliefSum { sum: f64 },
    NegativeBelief { state: usize, value: f64 },
    NonFiniteReward { state: usize, action: usize },
    Discount { value: f64 },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate(inst: &PomdpInstance) -> ValidationReport {
    let (ns, na) = (inst.num_states(), inst.num_actions());
    let mut violations = Vec::new();
    for a in 0..na {
        for s in 0..ns {
            let row = inst.transition_row(a, s);
            for (next, &value) in row.iter().enumerate() {
                if !(value >= 0.0) {
                    violations.push(Violation::NegativeTransition { action: a, state: s, next, value });
                }
            }
            let sum: f64 = row.iter().sum();
            if !((sum - 1.0).abs() <= PROB_TOL) {
                violations.push(Violation::TransitionRowSum { action: a, state: s, sum });
            }
        }
    }
    for a in 0..na {
        for s in 0..ns {
            let row = inst.emission_row(a, s);
            for (obs, &value) in row.iter().enumerate() {
                if !(value >= 0.0) {
                    violations.push(Violation::NegativeEmission { action: a, state: s, obs, value });
                }
            }
            let sum: f64 = row.iter().sum();
            if !((sum - 1.0).abs() <= PROB_TOL) {
                violations.push(Violation::EmissionRowSum { action: a, state: s, sum });
            }
        }
    }
    for (state, &value) in inst.initial_belief.probs().iter().enumerate() {
        if !(value >= 0.0) {
            violations.push(Violation::NegativeBelief { state, value });
        }
    }
    let sum: f64 = inst.initial_belief.probs().iter().sum();
    if !((sum - 1.0).abs() <= PROB_TOL) {
        violations.push(Violation::BeliefSum { sum });
    }
    for s in 0..ns {
        for a in 0..na {
            if !inst.reward(s, a).is_finite() {
                violations.push(Violation::NonFiniteReward { state: s, action: a });
            }
        }
    }
    if !(inst.discount > 0.0 && inst.discount <= 1.0) {
        violations.push(Violation::Discount { value: inst.discount });
    }
    ValidationReport { violations }
}

/// Fraction of exactly-zero entries across the transition tensor and the
/// per-action emission tensor: the denominator is `|S||O||A| + |S|²|A|`.
pub fn sparsity(inst: &PomdpInstance) -> f64 {
    let zeros = inst.transition.iter().chain(inst.emission.iter()).filter(|p| **p == 0.0).count();
    zeros as f64 / (inst.transition.len() + inst.emission.len()) as f64
}

/// Predicted next-state distribution `Σ_s p(s' | s, a) b(s)`.
pub fn predict(inst: &PomdpInstance, belief: &Belief, action: usize) -> Vec<f64> {
    let ns = inst.num_states();
    let mut next = vec![0.0; ns];
    for (s, &bs) in belief.probs().iter().enumerate() {
        if bs == 0.0 {
            continue;
        }
        for (t, p) in inst.transition_row(action, s).iter().enumerate() {
            next[t] += p * bs;
        }
    }
    next
}

/// `p(o | a, b) = Σ_{s', s} p(o | s', a) p(s' | s, a) b(s)`.
pub fn obs_given_action_belief(inst: &PomdpInstance, belief: &Belief, action: usize) -> Vec<f64> {
    let next = predict(inst, belief, action);
    let mut out = vec![0.0; inst.num_observations()];
    for (t, &pt) in next.iter().enumerate() {
        for (o, p) in inst.emission_row(action, t).iter().enumerate() {
            out[o] += p * pt;
        }
    }
    out
}

/// Bayes filter: posterior over the post-transition state after taking
/// `action` and observing `obs`.
pub fn belief_update(
    inst: &PomdpInstance,
    belief: &Belief,
    action: usize,
    obs: usize,
) -> Result<Belief, ModelError> {
    let next = predict(inst, belief, action);
    let weights: Vec<f64> = next
        .iter()
        .enumerate()
        .map(|(t, pt)| inst.emission(action, t, obs) * pt)
        .collect();
    let denom: f64 = weights.iter().sum();
    if denom <= IMPOSSIBLE_OBS_TOL {
        return Err(ModelError::ImpossibleObservation { action, observation: obs });
    }
    Ok(Belief(weights.into_iter().map(|w| w / denom).collect()))
}

/// `p(s | s', a', o)`: distribution of the current state given the previous
/// state-action pair and the current observation.
#[derive(Debug, Clone)]
pub struct ConditionalStateTable {
    ns: usize,
    na: usize,
    no: usize,
    /// `[a'][s'][o][s]`
    probs: Vec<f64>,
    /// `[a'][s'][o]`, true where `Σ_s p(o | s, a') p(s | s', a') = 0`.
    masked: Vec<bool>,
}

impl ConditionalStateTable {
    #[inline]
    pub fn prob(&self, prev_action: usize, prev_state: usize, obs: usize, state: usize) -> f64 {
        self.probs[((prev_action * self.ns + prev_state) * self.no + obs) * self.ns + state]
    }

    #[inline]
    pub fn is_masked(&self, prev_action: usize, prev_state: usize, obs: usize) -> bool {
        self.masked[(prev_action * self.ns + prev_state) * self.no + obs]
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.ns, self.na, self.no)
    }
}

pub fn conditional_state_given_obs(inst: &PomdpInstance) -> ConditionalStateTable {
    let (ns, na, no) = (inst.num_states(), inst.num_actions(), inst.num_observations());
    let mut probs = vec![0.0; na * ns * no * ns];
    let mut masked = vec![false; na * ns * no];
    for a in 0..na {
        for sp in 0..ns {
            for o in 0..no {
                let base = ((a * ns + sp) * no + o) * ns;
                let denom: f64 = (0..ns).map(|s| inst.emission(a, s, o) * inst.transition(a, sp, s)).sum();
                if denom <= 0.0 {
                    masked[(a * ns + sp) * no + o] = true;
                    continue;
                }
                for s in 0..ns {
                    probs[base + s] = inst.emission(a, s, o) * inst.transition(a, sp, s) / denom;
                }
            }
        }
    }
    ConditionalStateTable { ns, na, no, probs, masked }
}
