use serde::{Deserialize, Serialize};

use crate::data::{NetworkKind, Sample};
use crate::error::{Error, Result};
use crate::metrics;
use crate::snet::SaliencyNetwork;
use crate::Scalar;

/// Best model seen so far for one network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub mae: f64,
    pub iteration: usize,
    /// Serialized parameters; persisted separately from the record itself.
    #[serde(skip)]
    pub params: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateAction {
    Accept,
    Reject,
    /// Gate disabled: the candidate is used unconditionally.
    Bypass,
}

impl GateAction {
    pub fn as_str(self) -> &'static str {
        match self {
            GateAction::Accept => "accept",
            GateAction::Reject => "reject",
            GateAction::Bypass => "bypass",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub iteration: usize,
    pub network: NetworkKind,
    pub candidate_mae: f64,
    pub previous_best: Option<f64>,
    pub action: GateAction,
}

/// Validation-MAE gate with a separate best record per network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CredibilityState {
    pub enabled: bool,
    pub best_rnet: Option<BestRecord>,
    pub best_snet: Option<BestRecord>,
    pub decisions: Vec<GateDecision>,
}

impl CredibilityState {
    pub fn new(enabled: bool) -> Self {
        CredibilityState { enabled, best_rnet: None, best_snet: None, decisions: Vec::new() }
    }

    pub fn best(&self, network: NetworkKind) -> Option<&BestRecord> {
        match network {
            NetworkKind::Rnet => self.best_rnet.as_ref(),
            NetworkKind::Snet => self.best_snet.as_ref(),
        }
    }

    fn best_mut(&mut self, network: NetworkKind) -> &mut Option<BestRecord> {
        match network {
            NetworkKind::Rnet => &mut self.best_rnet,
            NetworkKind::Snet => &mut self.best_snet,
        }
    }

    /// Best-MAE values after each accepted update of `network`, in order.
    pub fn accepted_history(&self, network: NetworkKind) -> Vec<f64> {
        self.decisions
            .iter()
            .filter(|d| d.network == network && d.action == GateAction::Accept)
            .map(|d| d.candidate_mae)
            .collect()
    }
}

/// Mean per-image MAE of `net` on samples carrying ground-truth labels.
pub fn validation_mae<T: Scalar>(net: &dyn SaliencyNetwork<T>, val: &[Sample<T>]) -> Result<f64> {
    if val.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }
    let refs: Vec<&Sample<T>> = val.iter().collect();
    let preds = net.predict(&refs)?;
    let mut total = 0.0;
    for (p, s) in preds.iter().zip(val) {
        let gt = s.label.as_ref().ok_or_else(|| Error::Data(format!("{}: validation sample without label", s.id)))?;
        total += metrics::mae(p, gt)?;
    }
    Ok(total / val.len() as f64)
}

/// Scores `candidate` on the validation set and decides whether it replaces
/// the stored best model of `network`. Iteration 1 and the first candidate
/// of a network are always accepted; later candidates must be strictly
/// better. The model to use for pseudo labels is afterwards
/// `state.best(network)`.
pub fn credibility_gate<T: Scalar>(
    candidate: &dyn SaliencyNetwork<T>,
    network: NetworkKind,
    val: &[Sample<T>],
    state: &mut CredibilityState,
    iteration: usize,
) -> Result<GateDecision> {
    let mae = validation_mae(candidate, val)?;
    let previous = state.best(network).map(|b| b.mae);
    let action = if !state.enabled {
        GateAction::Bypass
    } else if iteration == 1 || previous.is_none_or(|best| mae < best) {
        GateAction::Accept
    } else {
        GateAction::Reject
    };
    if action != GateAction::Reject {
        *state.best_mut(network) = Some(BestRecord { mae, iteration, params: candidate.save() });
    }
    let decision = GateDecision { iteration, network, candidate_mae: mae, previous_best: previous, action };
    state.decisions.push(decision.clone());
    Ok(decision)
}
