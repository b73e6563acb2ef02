use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;

use super::{induced_chain, stationary_distribution, MdpModel, PolicyTable};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

const GARNET_STREAM: u64 = 7;
const GARNET_ATTEMPTS: usize = 1000;

/// Baird's 7-state star: action 0 ("dashed") jumps uniformly to states 0..=5,
/// action 1 ("solid") jumps to state 6. All rewards are zero; γ = 0.99.
pub fn baird7() -> MdpModel {
    let (n, na) = (7, 2);
    let mut p = vec![0.0; n * na * n];
    for s in 0..n {
        for s2 in 0..6 {
            p[(s * na) * n + s2] = 1.0 / 6.0;
        }
        p[(s * na + 1) * n + 6] = 1.0;
    }
    MdpModel::new(n, na, p, vec![0.0; n * na * n], 0.99).expect("baird7 is well formed").with_name("baird7")
}

/// Two states, two actions: action 0 stays, action 1 switches state with
/// probability 1/2. Under the uniform policy the chain flips with probability
/// 1/4 from either state. Landing in state 0 pays 1; γ = 0.9.
pub fn twostate() -> MdpModel {
    let p = vec![
        1.0, 0.0, 0.5, 0.5, // s = 0
        0.0, 1.0, 0.5, 0.5, // s = 1
    ];
    let r: Vec<f64> = (0..8).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect();
    MdpModel::new(2, 2, p, r, 0.9).expect("twostate is well formed").with_name("twostate")
}

/// Transition matrix of the two-state chain with flip probabilities p (from 0) and q (from 1).
pub fn two_state_chain(p: f64, q: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[1.0 - p, p, q, 1.0 - q])
}

/// Garnet MDP: each (s, a) moves to `branching` distinct states with random
/// probabilities and pays a reward drawn uniformly from [−1, 1]. Instances whose
/// uniform-policy chain is not ergodic are redrawn from the same stream.
pub fn random_garnet(states: usize, actions: usize, branching: usize, seed: u64, gamma: f64) -> Result<MdpModel> {
    if states == 0 || actions == 0 || branching == 0 || branching > states {
        return Err(Error::InvalidModel(format!(
            "garnet needs states, actions ≥ 1 and 1 ≤ branching ≤ states (got {states}, {actions}, {branching})"
        )));
    }
    let mut rng = stream_rng(seed, GARNET_STREAM);
    for _ in 0..GARNET_ATTEMPTS {
        let mut p = vec![0.0; states * actions * states];
        let mut r = vec![0.0; states * actions * states];
        for row in 0..states * actions {
            let targets = sample(&mut rng, states, branching);
            let mut cuts: Vec<f64> = (0..branching - 1).map(|_| rng.gen::<f64>()).collect();
            cuts.push(0.0);
            cuts.push(1.0);
            cuts.sort_by(f64::total_cmp);
            for (k, s2) in targets.iter().enumerate() {
                p[row * states + s2] = cuts[k + 1] - cuts[k];
            }
            let total: f64 = p[row * states..(row + 1) * states].iter().sum();
            p[row * states..(row + 1) * states].iter_mut().for_each(|x| *x /= total);
            let reward = rng.gen_range(-1.0..=1.0);
            r[row * states..(row + 1) * states].iter_mut().for_each(|x| *x = reward);
        }
        let mdp = MdpModel::new(states, actions, p, r, gamma)?.with_reward_bound(1.0)?;
        let chain = induced_chain(&mdp, &PolicyTable::uniform(states, actions))?;
        if stationary_distribution(&chain).is_ok() {
            return Ok(mdp.with_name("random-garnet"));
        }
    }
    Err(Error::InvalidModel("could not draw an ergodic garnet instance".into()))
}
