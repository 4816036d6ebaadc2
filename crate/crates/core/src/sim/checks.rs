//! Self-check routines behind the CLI's `check` subcommands: finite
//! difference validation of the analytic gradient and the exhaustive grid
//! oracle on the toy finger.

use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::hand::{HandModel, JointConfig};
use crate::keyvec::{robot_keyvectors, thumb_distance};
use crate::retarget::{cost_gradient, cost_terms, gate_alpha, solve_step, AnchorState, CostWeights};
use crate::solver::SolverConfig;

use super::SimError;

pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub states: usize,
    pub worst_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares the analytic gradient against central finite differences
/// (h = 1e-6) at random states, resampling any state that lands within
/// 1e-4 of a Huber knee or the safety hinge boundary.
pub fn check_gradients(
    model: &HandModel,
    w: &CostWeights,
    states: usize,
    seed: u64,
) -> Result<GradCheckReport, SimError> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut attempts = 0;
    while checked < states {
        attempts += 1;
        if attempts > states * 1000 {
            return Err(SimError::InvalidScenario(
                "could not sample knee-free gradient states".into(),
            ));
        }
        let Some((q, q_prev, anchor, human_now)) = knee_free_instance(model, w, &mut rng) else {
            continue;
        };
        let grad = cost_gradient(model, &q, &q_prev, &anchor, &human_now, w)?;
        let mut fd = DVector::zeros(model.dof());
        for k in 0..model.dof() {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp.0[k] += h;
            qm.0[k] -= h;
            let fp = cost_terms(model, &qp, &q_prev, &anchor, &human_now, w)?.total;
            let fm = cost_terms(model, &qm, &q_prev, &anchor, &human_now, w)?.total;
            fd[k] = (fp - fm) / (2.0 * h);
        }
        let rel = (&grad - &fd).norm() / fd.norm().max(1e-12);
        worst = worst.max(rel);
        checked += 1;
    }
    Ok(GradCheckReport {
        states,
        worst_rel_err: worst,
        tolerance: GRAD_TOLERANCE,
        passed: worst <= GRAD_TOLERANCE,
    })
}

fn knee_free_instance(
    model: &HandModel,
    w: &CostWeights,
    rng: &mut impl Rng,
) -> Option<(JointConfig, JointConfig, AnchorState, crate::keyvec::KeyVectors)> {
    let lo = model.lower_limits();
    let hi = model.upper_limits();
    let mut rand_q = || {
        JointConfig(DVector::from_iterator(
            model.dof(),
            (0..model.dof()).map(|i| rng.random_range(lo[i]..hi[i])),
        ))
    };
    let q_anchor = rand_q();
    let ha = rand_q();
    let hn = rand_q();
    let q = rand_q();
    let q_prev = rand_q();
    let human_anchor = robot_keyvectors(model, &ha).ok()?;
    let human_now = robot_keyvectors(model, &hn).ok()?;
    let anchor = AnchorState::capture(model, &q_anchor, &human_anchor).ok()?;

    let margin = 1e-4;
    let robot_now = robot_keyvectors(model, &q).ok()?;
    for i in 0..model.chains.len() {
        let dv_rob = robot_now.wrist_to_tip(i) - anchor.robot_kv_anchor.wrist_to_tip(i);
        let dv_hum = human_now.wrist_to_tip(i) - anchor.human_kv_anchor.wrist_to_tip(i);
        if ((dv_rob - dv_hum).norm() - w.huber_delta).abs() < margin {
            return None;
        }
    }
    for &j in &w.opposition_set {
        let d_j = thumb_distance(&human_now, j).ok()?;
        let du = human_now.opposition(j).ok()? - anchor.human_kv_anchor.opposition(j).ok()?;
        let u_tgt = anchor.robot_kv_anchor.opposition(j).ok()? + du;
        let r = robot_now.opposition(j).ok()? - gate_alpha(d_j, w) * u_tgt;
        if (r.norm() - w.huber_delta).abs() < margin {
            return None;
        }
    }
    for (_, dist) in model.proximity_distances(&q).ok()? {
        if (dist - w.safety_margin).abs() < margin {
            return None;
        }
    }
    if ((&q.0 - &q_prev.0).norm() - w.huber_delta).abs() < margin {
        return None;
    }
    Some((q, q_prev, anchor, human_now))
}

pub const ORACLE_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleCheckReport {
    pub instances: usize,
    pub grid_resolution: f64,
    pub worst_gap: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Checks the per-step solver against an exhaustive 1e-3-rad grid on the
/// 2-DoF toy finger: the solver's cost must reach the grid minimum up to
/// [`ORACLE_TOLERANCE`].
pub fn check_toy_oracle(instances: usize, seed: u64) -> Result<OracleCheckReport, SimError> {
    let model = HandModel::toy_finger();
    let w = CostWeights {
        opposition_set: vec![],
        ..CostWeights::default()
    };
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut worst_gap = f64::NEG_INFINITY;
    for _ in 0..instances {
        let q_anchor = JointConfig::from_vec(vec![
            rng.random_range(0.2..0.8),
            rng.random_range(0.2..0.8),
        ]);
        let human_anchor = robot_keyvectors(&model, &q_anchor)?;
        let moved = JointConfig::from_vec(vec![
            q_anchor.0[0] + rng.random_range(-0.15..0.15),
            q_anchor.0[1] + rng.random_range(-0.15..0.15),
        ]);
        let human_now = robot_keyvectors(&model, &moved)?;
        let q_prev = JointConfig::from_vec(vec![
            (q_anchor.0[0] + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0),
            (q_anchor.0[1] + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0),
        ]);
        let anchor = AnchorState::capture(&model, &q_anchor, &human_anchor)?;
        let report = solve_step(&model, &anchor, &human_now, &q_prev, &w, &SolverConfig::default())?;

        let mut grid_min = f64::INFINITY;
        for i in 0..=1000 {
            for j in 0..=1000 {
                let q = JointConfig::from_vec(vec![i as f64 * 1e-3, j as f64 * 1e-3]);
                grid_min = grid_min.min(cost_terms(&model, &q, &q_prev, &anchor, &human_now, &w)?.total);
            }
        }
        worst_gap = worst_gap.max(report.cost - grid_min);
    }
    Ok(OracleCheckReport {
        instances,
        grid_resolution: 1e-3,
        worst_gap,
        tolerance: ORACLE_TOLERANCE,
        passed: worst_gap <= ORACLE_TOLERANCE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_check_passes_on_defaults() {
        let model = HandModel::default_21dof();
        let report = check_gradients(&model, &CostWeights::default(), 10, 1).unwrap();
        assert!(report.passed, "worst rel err {}", report.worst_rel_err);
    }

    #[test]
    fn oracle_check_passes_on_defaults() {
        let report = check_toy_oracle(3, 2).unwrap();
        assert!(report.passed, "worst gap {}", report.worst_gap);
    }
}
