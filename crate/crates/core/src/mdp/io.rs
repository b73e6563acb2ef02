use serde::{Deserialize, Serialize};

use super::MdpModel;
use crate::error::{Error, Result};

/// JSON form of an MDP: nested `[s][a][s']` arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpDocument {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl MdpDocument {
    pub fn into_model(self) -> Result<MdpModel> {
        let flatten = |what: &'static str, t: Vec<Vec<Vec<f64>>>| -> Result<Vec<f64>> {
            if t.len() != self.n_states || t.iter().any(|a| a.len() != self.n_actions || a.iter().any(|r| r.len() != self.n_states)) {
                return Err(Error::InvalidModel(format!("{what} must have shape [n_states][n_actions][n_states]")));
            }
            Ok(t.into_iter().flatten().flatten().collect())
        };
        let p = flatten("transition", self.transition.clone())?;
        let r = flatten("reward", self.reward.clone())?;
        let model = MdpModel::new(self.n_states, self.n_actions, p, r, self.gamma)?;
        Ok(match self.name {
            Some(n) => model.with_name(n),
            None => model,
        })
    }

    pub fn from_model(mdp: &MdpModel) -> Self {
        let (n, na) = (mdp.n_states(), mdp.n_actions());
        let nest = |f: &dyn Fn(usize, usize, usize) -> f64| -> Vec<Vec<Vec<f64>>> {
            (0..n).map(|s| (0..na).map(|a| (0..n).map(|s2| f(s, a, s2)).collect()).collect()).collect()
        };
        Self {
            n_states: n,
            n_actions: na,
            gamma: mdp.gamma(),
            transition: nest(&|s, a, s2| mdp.p(s, a, s2)),
            reward: nest(&|s, a, s2| mdp.r(s, a, s2)),
            name: mdp.name().map(str::to_owned),
        }
    }
}

impl MdpModel {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: MdpDocument = serde_json::from_str(text).map_err(|e| Error::InvalidModel(format!("MDP JSON: {e}")))?;
        doc.into_model()
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&MdpDocument::from_model(self)).expect("MDP serializes")
    }
}
