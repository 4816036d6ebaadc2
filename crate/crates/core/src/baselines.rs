//! The three comparison retargeters: absolute teleoperation (the direct
//! switching backend), delta-command retargeting on top of it, and per-finger
//! damped-least-squares Jacobian mapping.

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::hand::{HandModel, JointConfig, ModelError};
use crate::keyvec::KeyVectors;
use crate::retarget::{report_from, run_solver, CostContext, CostWeights, RetargetError, SolveReport};
use crate::solver::SolverConfig;

/// Damping for the Jacobian baseline's pseudo-inverse (meters); bounds the
/// joint response to `||dq|| <= ||dtip|| / (2 * damping)` at singularities.
pub const DEFAULT_DLS_DAMPING: f64 = 1e-3;

/// Conventional absolute retargeting: minimizes the absolute variant of the
/// objective (shape tracks the human key vectors directly, no anchor
/// subtraction; safety and regularization unchanged).
pub fn absolute_retarget(
    model: &HandModel,
    human_now: &KeyVectors,
    q_prev: &JointConfig,
    w: &CostWeights,
    solver: &SolverConfig,
) -> Result<SolveReport, RetargetError> {
    let ctx = CostContext::new_absolute(model, human_now, q_prev, w)?;
    let min = run_solver(&ctx, model, &q_prev.0, solver)?;
    Ok(report_from(min))
}

/// Absolute teleoperation solver with its warm-start state: the backend that
/// both direct switching and delta-command retargeting run on. Stateless
/// across interventions except for the warm start.
#[derive(Debug, Clone)]
pub struct TeleopBackend {
    q_warm: JointConfig,
}

impl TeleopBackend {
    pub fn new(q_init: JointConfig) -> TeleopBackend {
        TeleopBackend { q_warm: q_init }
    }

    pub fn current(&self) -> &JointConfig {
        &self.q_warm
    }

    /// Advances the backend by one human sample and returns its command.
    pub fn step(
        &mut self,
        model: &HandModel,
        human_now: &KeyVectors,
        w: &CostWeights,
        solver: &SolverConfig,
    ) -> Result<&JointConfig, RetargetError> {
        let report = absolute_retarget(model, human_now, &self.q_warm, w, solver)?;
        self.q_warm = report.q_solution;
        Ok(&self.q_warm)
    }
}

/// Delta-command retargeting: the robot anchor plus the teleop backend's
/// change since its own anchor, then limit projection. Component order is
/// fixed (`anchor + (now - anchor_tel)`) so the closed form is bit-exact.
pub fn delta_cmd_retarget(
    model: &HandModel,
    q_robot_anchor: &JointConfig,
    q_tel_now: &JointConfig,
    q_tel_anchor: &JointConfig,
) -> Result<JointConfig, ModelError> {
    model.check_dims(q_robot_anchor)?;
    model.check_dims(q_tel_now)?;
    model.check_dims(q_tel_anchor)?;
    let n = q_robot_anchor.len();
    let mut out = JointConfig::zeros(n);
    for i in 0..n {
        out.0[i] = q_robot_anchor.0[i] + (q_tel_now.0[i] - q_tel_anchor.0[i]);
    }
    Ok(model.project_limits(&out))
}

/// Jacobian mapping: per finger, joint increments from the requested
/// fingertip displacement through a damped pseudo-inverse, then limit
/// projection. Off-chain joints never move.
pub fn jacobian_retarget(
    model: &HandModel,
    q_prev: &JointConfig,
    tip_displacements: &[Vector3<f64>],
    damping: f64,
) -> Result<JointConfig, ModelError> {
    model.check_dims(q_prev)?;
    if tip_displacements.len() != model.chains.len() {
        return Err(ModelError::DimensionMismatch {
            got: tip_displacements.len(),
            expected: model.chains.len(),
        });
    }
    let fk = model.forward_frames(q_prev)?;
    let mut q = q_prev.clone();
    for (finger, dtip) in tip_displacements.iter().enumerate() {
        let n = model.chains[finger].joints.len();
        let off = model.chain_offset(finger);
        let mut jac = DMatrix::<f64>::zeros(3, n);
        for (i, col) in fk.point_columns(finger, n, &fk.tips[finger]) {
            jac.column_mut(i).copy_from(&col);
        }
        // dq = J' (J J' + damping^2 I)^-1 dtip
        let jjt: Matrix3<f64> = Matrix3::from_iterator((&jac * jac.transpose()).iter().copied());
        let damped = jjt + Matrix3::identity() * (damping * damping);
        let rhs = damped
            .try_inverse()
            .expect("damped Gram matrix is positive definite")
            * dtip;
        let dq = jac.transpose() * rhs;
        for i in 0..n {
            q.0[off + i] += dq[i];
        }
    }
    Ok(model.project_limits(&q))
}
