//! Scripted stand-in for the autonomous policy: a precomputed action
//! trajectory served in fixed-horizon chunks, executed receding-horizon
//! style (only the first action of each chunk runs).

use serde::{Deserialize, Serialize};

use crate::hand::JointConfig;
use crate::spatial::{Pose, Twist};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyAction {
    pub hand: JointConfig,
    pub arm: Pose,
    pub feedforward: Twist,
}

#[derive(Debug, Clone)]
pub struct MockPolicyStream {
    actions: Vec<PolicyAction>,
    pub horizon: usize,
}

impl MockPolicyStream {
    pub fn new(actions: Vec<PolicyAction>, horizon: usize) -> MockPolicyStream {
        assert!(horizon >= 1);
        assert!(!actions.is_empty());
        MockPolicyStream { actions, horizon }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Action chunk starting at `step` (shorter near the end of the stream).
    pub fn predict(&self, step: usize) -> &[PolicyAction] {
        let end = (step + self.horizon).min(self.actions.len());
        &self.actions[step..end]
    }

    pub fn action(&self, step: usize) -> &PolicyAction {
        &self.actions[step]
    }
}

/// Instrumentation counters for the receding-horizon contract: one
/// prediction per executed step, one executed action per chunk.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyProbe {
    pub predictions: usize,
    pub actions_executed: usize,
}
