use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Mlp, NnError, Optimizer};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Network weights plus optimizer state, stored as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub task: String,
    pub net: Mlp,
    pub optimizer: Optimizer,
}

impl Checkpoint {
    pub fn new(task: &str, net: Mlp, optimizer: Optimizer) -> Self {
        Checkpoint { version: CHECKPOINT_VERSION, task: task.to_string(), net, optimizer }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, NnError> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Head;

    #[test]
    fn json_round_trip_is_exact() {
        let net = Mlp::new(&[3, 5, 2], Head::Softmax, 7).unwrap();
        let mut opt = Optimizer::adam(1e-3);
        let mut copy = net.clone();
        opt.step(copy.params_mut(), &[vec![0.1; 15], vec![0.2; 5], vec![-0.3; 10], vec![0.0; 2]]);
        let ck = Checkpoint::new("mnistadd", copy, opt);
        assert_eq!(Checkpoint::from_json(&ck.to_json()).unwrap(), ck);
    }

    #[test]
    fn wrong_version_rejected() {
        let ck = Checkpoint::new("x", Mlp::zeros(&[1, 1], Head::None).unwrap(), Optimizer::sgd(0.1));
        let text = ck.to_json().replacen("\"version\":1", "\"version\":99", 1);
        assert!(Checkpoint::from_json(&text).is_err());
    }
}
