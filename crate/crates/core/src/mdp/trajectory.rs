use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{MdpModel, PolicyTable};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, PROBE_STREAM, TRAJECTORY_STREAM};

/// Cumulative-probability rows for inverse-CDF sampling.
#[derive(Debug, Clone)]
pub struct Categorical {
    width: usize,
    cumulative: Vec<f64>,
}

impl Categorical {
    /// `probs` holds consecutive rows of length `width`.
    pub fn new(probs: &[f64], width: usize) -> Self {
        let mut cumulative = Vec::with_capacity(probs.len());
        for row in probs.chunks(width) {
            let mut acc = 0.0;
            for p in row {
                acc += p;
                cumulative.push(acc);
            }
        }
        Self { width, cumulative }
    }

    pub fn from_matrix(m: &nalgebra::DMatrix<f64>) -> Self {
        let flat: Vec<f64> = m.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect();
        Self::new(&flat, m.ncols())
    }

    /// Draws an index from row `row`.
    pub fn sample<R: Rng>(&self, row: usize, rng: &mut R) -> usize {
        let cum = &self.cumulative[row * self.width..(row + 1) * self.width];
        let u = rng.gen::<f64>() * cum[self.width - 1];
        // Zero-probability entries share their predecessor's cumulative value and are never hit.
        cum.iter().position(|&c| u < c).unwrap_or_else(|| cum.iter().rposition(|&c| c > 0.0).map_or(0, |i| i))
    }
}

/// One transition (s_j, a_j, r_j, s_{j+1}, a_{j+1}) of the behavior trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
    pub a_next: usize,
}

/// How the first state of a trajectory is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum StartState {
    Fixed(usize),
    /// Drawn from the given distribution (typically the stationary one).
    Distribution(Vec<f64>),
}

/// A single chained sample path generated by following a behavior policy.
///
/// The generator is ChaCha8 keyed by the seed; the trajectory occupies stream 0 of
/// that key so other per-run randomness can use separate streams.
#[derive(Debug, Clone)]
pub struct TrajectoryStream {
    seed: u64,
    cursor: u64,
    rng: ChaCha8Rng,
    n_states: usize,
    n_actions: usize,
    transitions: Categorical,
    policy: Categorical,
    reward: Vec<f64>,
    state: usize,
    action: usize,
}

impl TrajectoryStream {
    pub fn new(mdp: &MdpModel, behavior: &PolicyTable, seed: u64, start: &StartState) -> Result<Self> {
        behavior.check_shape(mdp)?;
        let mut rng = stream_rng(seed, TRAJECTORY_STREAM);
        let n = mdp.n_states();
        let state = match start {
            StartState::Fixed(s) if *s < n => *s,
            StartState::Fixed(s) => {
                return Err(Error::InvalidModel(format!("start state {s} out of range")));
            }
            StartState::Distribution(p) => {
                if p.len() != n {
                    return Err(Error::DimensionMismatch { what: "start distribution", expected: n, found: p.len() });
                }
                Categorical::new(p, n).sample(0, &mut rng)
            }
        };
        let policy = Categorical::new(&behavior.rows().concat(), mdp.n_actions());
        let action = policy.sample(state, &mut rng);
        Ok(Self {
            seed,
            cursor: 0,
            rng,
            n_states: n,
            n_actions: mdp.n_actions(),
            transitions: Categorical::new(mdp.transition_tensor(), n),
            policy,
            reward: mdp.reward_tensor().to_vec(),
            state,
            action,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of samples emitted so far.
    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    /// The pair (s, a) that the next sample starts from.
    pub fn current(&self) -> (usize, usize) {
        (self.state, self.action)
    }

    pub fn next_transition(&mut self) -> Transition {
        let (s, a) = (self.state, self.action);
        let row = s * self.n_actions + a;
        let s_next = self.transitions.sample(row, &mut self.rng);
        let r = self.reward[row * self.n_states + s_next];
        let a_next = self.policy.sample(s_next, &mut self.rng);
        self.state = s_next;
        self.action = a_next;
        self.cursor += 1;
        Transition { s, a, r, s_next, a_next }
    }

    /// Fills `buf` with the next contiguous window of the path.
    pub fn fill_batch(&mut self, buf: &mut Vec<Transition>, m: usize) {
        buf.clear();
        buf.extend((0..m).map(|_| self.next_transition()));
    }
}

impl Iterator for TrajectoryStream {
    type Item = Transition;

    fn next(&mut self) -> Option<Transition> {
        Some(self.next_transition())
    }
}

/// The first `length` samples of the path started at state 0.
pub fn sample_trajectory(mdp: &MdpModel, behavior: &PolicyTable, seed: u64, length: usize) -> Result<Vec<Transition>> {
    if length == 0 {
        return Err(Error::Precondition("trajectory length must be at least 1".into()));
    }
    let stream = TrajectoryStream::new(mdp, behavior, seed, &StartState::Fixed(0))?;
    Ok(stream.take(length).collect())
}

/// Independent transitions with s ~ `mu`, a ~ π(·|s), s' ~ P(·|s, a) and
/// a' ~ π(·|s'), drawn on the probe stream of `seed`.
pub fn stationary_transitions(mdp: &MdpModel, policy: &PolicyTable, mu: &[f64], count: usize, seed: u64) -> Result<Vec<Transition>> {
    policy.check_shape(mdp)?;
    let n = mdp.n_states();
    if mu.len() != n {
        return Err(Error::DimensionMismatch { what: "state distribution", expected: n, found: mu.len() });
    }
    let mut rng = stream_rng(seed, PROBE_STREAM);
    let start = Categorical::new(mu, n);
    let actions = Categorical::new(&policy.rows().concat(), mdp.n_actions());
    let transitions = Categorical::new(mdp.transition_tensor(), n);
    let reward = mdp.reward_tensor();
    Ok((0..count)
        .map(|_| {
            let s = start.sample(0, &mut rng);
            let a = actions.sample(s, &mut rng);
            let row = s * mdp.n_actions() + a;
            let s_next = transitions.sample(row, &mut rng);
            let a_next = actions.sample(s_next, &mut rng);
            Transition { s, a, r: reward[row * n + s_next], s_next, a_next }
        })
        .collect())
}
