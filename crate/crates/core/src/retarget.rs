//! Anchored relative hand retargeting: each control step solves for the hand
//! configuration that tracks the *changes* of the operator's key vectors
//! since the intervention anchor, under pinch-consistency, structural-safety,
//! and temporal-smoothness terms.
//!
//! The objective is a sum of four terms:
//! - global shaping: per-finger Huber of the relative wrist-to-tip residual,
//!   gated down as the human closes toward a pinch;
//! - precision grasping: Huber of the opposition residual against a target
//!   `u_rob(q_anchor) + delta_u_human`, scaled by a pinch activation that
//!   biases deep pinches toward a compact configuration, with a weight that
//!   grows as the human pinch closes;
//! - structural safety: quadratic hinge on sphere-pair distances below the
//!   safety margin;
//! - temporal regularization: Huber of the joint-space step from the previous
//!   command.
//!
//! Gates depend only on the *human* thumb-to-finger distances, so they are
//! constants within one solve.

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::hand::{FkFrames, HandModel, JointConfig, ModelError};
use crate::keyvec::{robot_keyvectors, KeyVecError, KeyVectors};
use crate::solver::{minimize_box, Minimum, SolverConfig, SolverError};

#[derive(Debug, thiserror::Error)]
pub enum RetargetError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    KeyVec(#[from] KeyVecError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("invalid cost weights: {0}")]
    InvalidWeights(String),
    #[error("key vectors have {got} fingers, model has {expected} chains")]
    FingerCount { got: usize, expected: usize },
}

/// All tunable parameters of the retargeting objective.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostWeights {
    /// Huber knee (meters) shared by the shape, grasp, and smoothness terms.
    pub huber_delta: f64,
    /// Shape gate: saturates at the floor below `shape_gate_lo` and at 1
    /// above `shape_gate_hi` (meters of human thumb-to-finger distance).
    pub shape_gate_lo: f64,
    pub shape_gate_hi: f64,
    /// Shape gate floor in [0, 1).
    pub shape_gate_floor: f64,
    /// Pinch activation: 0 at or below `pinch_gate_on`, 1 at or above
    /// `pinch_gate_off` (meters).
    pub pinch_gate_on: f64,
    pub pinch_gate_off: f64,
    /// Peak grasp-term weight at a deep pinch.
    pub grasp_weight_max: f64,
    /// Structural-safety hinge strength.
    pub safety_weight: f64,
    /// Sphere-pair distance below which the hinge activates (meters).
    pub safety_margin: f64,
    /// Temporal regularization strength.
    pub smoothness_weight: f64,
    /// Non-thumb finger indices participating in the grasp term.
    pub opposition_set: Vec<usize>,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            huber_delta: 0.01,
            shape_gate_lo: 0.03,
            shape_gate_hi: 0.08,
            shape_gate_floor: 0.1,
            pinch_gate_on: 0.02,
            pinch_gate_off: 0.05,
            grasp_weight_max: 2.0,
            safety_weight: 100.0,
            safety_margin: 0.01,
            smoothness_weight: 0.05,
            opposition_set: vec![1, 2, 3, 4],
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<(), RetargetError> {
        let bad = |m: String| Err(RetargetError::InvalidWeights(m));
        if !(self.shape_gate_lo > 0.0 && self.shape_gate_lo < self.shape_gate_hi) {
            return bad(format!(
                "need 0 < shape_gate_lo < shape_gate_hi, got {} and {}",
                self.shape_gate_lo, self.shape_gate_hi
            ));
        }
        if !(self.pinch_gate_on > 0.0 && self.pinch_gate_on < self.pinch_gate_off) {
            return bad(format!(
                "need 0 < pinch_gate_on < pinch_gate_off, got {} and {}",
                self.pinch_gate_on, self.pinch_gate_off
            ));
        }
        for (name, v) in [
            ("huber_delta", self.huber_delta),
            ("safety_weight", self.safety_weight),
            ("safety_margin", self.safety_margin),
            ("smoothness_weight", self.smoothness_weight),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.shape_gate_floor) {
            return bad(format!(
                "shape_gate_floor must be in [0, 1), got {}",
                self.shape_gate_floor
            ));
        }
        if self.grasp_weight_max < 0.0 {
            return bad(format!(
                "grasp_weight_max must be nonnegative, got {}",
                self.grasp_weight_max
            ));
        }
        Ok(())
    }

    fn check_opposition_set(&self, chains: usize) -> Result<(), RetargetError> {
        for &j in &self.opposition_set {
            if j == 0 || j >= chains {
                return Err(RetargetError::InvalidWeights(format!(
                    "opposition_set entry {j} invalid for a {chains}-chain model"
                )));
            }
        }
        Ok(())
    }
}

fn smoothstep(x: f64) -> f64 {
    let t = x.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Shape gate in `[beta_min, 1]`: saturated at the floor in a deep pinch,
/// 1 when the hand is open; monotone nondecreasing in `d`.
pub fn gate_beta(d: f64, w: &CostWeights) -> f64 {
    w.shape_gate_floor
        + (1.0 - w.shape_gate_floor)
            * smoothstep((d - w.shape_gate_lo) / (w.shape_gate_hi - w.shape_gate_lo))
}

/// Pinch activation in `[0, 1]`: 0 in a deep pinch, 1 when open.
pub fn gate_alpha(d: f64, w: &CostWeights) -> f64 {
    smoothstep((d - w.pinch_gate_on) / (w.pinch_gate_off - w.pinch_gate_on))
}

/// Grasp-term weight: peaks at a deep pinch, 0 when open.
pub fn gate_omega(d: f64, w: &CostWeights) -> f64 {
    w.grasp_weight_max * (1.0 - gate_alpha(d, w))
}

/// Huber penalty of a nonnegative scalar: quadratic below the knee, linear
/// above, C1 at the knee.
pub fn huber(x: f64, delta: f64) -> f64 {
    if x <= delta {
        0.5 * x * x
    } else {
        delta * (x - 0.5 * delta)
    }
}

/// d huber(||r||) / d r = r * min(1, delta / ||r||), branched so r = 0 stays
/// exact instead of dividing by zero.
fn huber_vector_gradient(r: &Vector3<f64>, norm: f64, delta: f64) -> Vector3<f64> {
    if norm <= delta {
        *r
    } else {
        r * (delta / norm)
    }
}

/// The human thumb-to-finger distance steering the thumb's own shape gate:
/// the minimum over all non-thumb fingers (the thumb is in a pinch as soon as
/// any finger closes on it). Open by convention when the model has no
/// opposition at all (single-chain models).
pub fn thumb_gate_distance(human: &KeyVectors) -> f64 {
    human
        .oppositions()
        .iter()
        .map(|u| u.norm())
        .fold(f64::INFINITY, f64::min)
}

/// Everything frozen at the intervention moment.
#[derive(Debug, Clone)]
pub struct AnchorState {
    pub q_anchor: JointConfig,
    pub robot_kv_anchor: KeyVectors,
    pub human_kv_anchor: KeyVectors,
}

impl AnchorState {
    /// Captures an anchor from the robot's current configuration and the
    /// operator's normalized key vectors; the robot anchor vectors are
    /// derived from `q_now` so the defining invariant holds by construction.
    pub fn capture(
        model: &HandModel,
        q_now: &JointConfig,
        human_now: &KeyVectors,
    ) -> Result<AnchorState, RetargetError> {
        if human_now.finger_count() != model.chains.len() {
            return Err(RetargetError::FingerCount {
                got: human_now.finger_count(),
                expected: model.chains.len(),
            });
        }
        Ok(AnchorState {
            robot_kv_anchor: robot_keyvectors(model, q_now)?,
            q_anchor: q_now.clone(),
            human_kv_anchor: human_now.clone(),
        })
    }
}

/// Outcome of one per-step solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub q_solution: JointConfig,
    pub cost: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
}

/// The four cost components and their sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostTerms {
    pub shape: f64,
    pub grasp: f64,
    pub safety: f64,
    pub smoothness: f64,
    pub total: f64,
}

struct GraspTerm {
    finger: usize,
    weight: f64,
    /// `alpha_j * (u_rob(q_anchor) + delta_u_human)`; the activation scales
    /// the target, biasing deep pinches toward a compact configuration.
    scaled_target: Vector3<f64>,
}

/// Per-solve precomputation: gates and targets depend only on the human
/// sample and the anchor, not on the decision variable.
pub struct CostContext<'a> {
    model: &'a HandModel,
    w: &'a CostWeights,
    q_prev: DVector<f64>,
    shape_gates: Vec<f64>,
    shape_targets: Vec<Vector3<f64>>,
    grasp_terms: Vec<GraspTerm>,
}

impl<'a> CostContext<'a> {
    pub fn new(
        model: &'a HandModel,
        anchor: &AnchorState,
        human_now: &KeyVectors,
        q_prev: &JointConfig,
        w: &'a CostWeights,
    ) -> Result<CostContext<'a>, RetargetError> {
        w.validate()?;
        w.check_opposition_set(model.chains.len())?;
        model.check_dims(q_prev)?;
        model.check_dims(&anchor.q_anchor)?;
        let chains = model.chains.len();
        for kv in [human_now, &anchor.human_kv_anchor, &anchor.robot_kv_anchor] {
            if kv.finger_count() != chains {
                return Err(RetargetError::FingerCount {
                    got: kv.finger_count(),
                    expected: chains,
                });
            }
        }

        let thumb_d = thumb_gate_distance(human_now);
        let mut shape_gates = Vec::with_capacity(chains);
        let mut shape_targets = Vec::with_capacity(chains);
        for i in 0..chains {
            let d = if i == 0 {
                thumb_d
            } else {
                human_now.opposition(i)?.norm()
            };
            shape_gates.push(gate_beta(d, w));
            // residual(q) = v_rob(q) - (v_rob(q0) + (v_hum(t) - v_hum(t0)))
            let delta_h = human_now.wrist_to_tip(i) - anchor.human_kv_anchor.wrist_to_tip(i);
            shape_targets.push(anchor.robot_kv_anchor.wrist_to_tip(i) + delta_h);
        }

        let mut grasp_terms = Vec::with_capacity(w.opposition_set.len());
        for &j in &w.opposition_set {
            let d = human_now.opposition(j)?.norm();
            let delta_u = human_now.opposition(j)? - anchor.human_kv_anchor.opposition(j)?;
            let target = anchor.robot_kv_anchor.opposition(j)? + delta_u;
            grasp_terms.push(GraspTerm {
                finger: j,
                weight: gate_omega(d, w),
                scaled_target: gate_alpha(d, w) * target,
            });
        }

        Ok(CostContext {
            model,
            w,
            q_prev: q_prev.0.clone(),
            shape_gates,
            shape_targets,
            grasp_terms,
        })
    }

    /// Absolute variant of the objective: the anchored targets are replaced
    /// by the human key vectors themselves, safety and regularization
    /// unchanged. This is the conventional teleoperation retargeter.
    pub fn new_absolute(
        model: &'a HandModel,
        human_now: &KeyVectors,
        q_prev: &JointConfig,
        w: &'a CostWeights,
    ) -> Result<CostContext<'a>, RetargetError> {
        w.validate()?;
        w.check_opposition_set(model.chains.len())?;
        model.check_dims(q_prev)?;
        let chains = model.chains.len();
        if human_now.finger_count() != chains {
            return Err(RetargetError::FingerCount {
                got: human_now.finger_count(),
                expected: chains,
            });
        }

        let thumb_d = thumb_gate_distance(human_now);
        let mut shape_gates = Vec::with_capacity(chains);
        let mut shape_targets = Vec::with_capacity(chains);
        for i in 0..chains {
            let d = if i == 0 {
                thumb_d
            } else {
                human_now.opposition(i)?.norm()
            };
            shape_gates.push(gate_beta(d, w));
            shape_targets.push(*human_now.wrist_to_tip(i));
        }

        let mut grasp_terms = Vec::with_capacity(w.opposition_set.len());
        for &j in &w.opposition_set {
            let d = human_now.opposition(j)?.norm();
            grasp_terms.push(GraspTerm {
                finger: j,
                weight: gate_omega(d, w),
                scaled_target: gate_alpha(d, w) * human_now.opposition(j)?,
            });
        }

        Ok(CostContext {
            model,
            w,
            q_prev: q_prev.0.clone(),
            shape_gates,
            shape_targets,
            grasp_terms,
        })
    }

    /// Cost terms and analytic gradient at `q`.
    pub fn eval(&self, q: &DVector<f64>) -> (CostTerms, DVector<f64>) {
        let model = self.model;
        let w = self.w;
        let fk = model
            .forward_frames(&JointConfig(q.clone()))
            .expect("dimensions checked at construction");
        let mut grad = DVector::zeros(q.len());

        let mut shape = 0.0;
        for (i, target) in self.shape_targets.iter().enumerate() {
            let r = fk.tips[i] - target;
            let n = r.norm();
            let gate = self.shape_gates[i];
            shape += gate * huber(n, w.huber_delta);
            let gr = gate * huber_vector_gradient(&r, n, w.huber_delta);
            self.accumulate_tip_jacobian(&fk, i, &gr, &mut grad, 1.0);
        }

        let mut grasp = 0.0;
        for term in &self.grasp_terms {
            let u = fk.tips[term.finger] - fk.tips[0];
            let r = u - term.scaled_target;
            let n = r.norm();
            grasp += term.weight * huber(n, w.huber_delta);
            let gr = term.weight * huber_vector_gradient(&r, n, w.huber_delta);
            self.accumulate_tip_jacobian(&fk, term.finger, &gr, &mut grad, 1.0);
            self.accumulate_tip_jacobian(&fk, 0, &gr, &mut grad, -1.0);
        }

        let mut safety = 0.0;
        for pair in model.pairs.iter().filter(|p| p.enabled) {
            let ca = model.sphere_center(&fk, pair.a);
            let cb = model.sphere_center(&fk, pair.b);
            let sep = ca - cb;
            let dist = sep.norm();
            let surface = dist - model.spheres[pair.a].radius - model.spheres[pair.b].radius;
            let depth = w.safety_margin - surface;
            if depth <= 0.0 {
                continue;
            }
            safety += w.safety_weight * depth * depth;
            if dist < 1e-12 {
                // Coincident centers: the distance direction is undefined.
                continue;
            }
            let gr = sep * (-2.0 * w.safety_weight * depth / dist);
            self.accumulate_sphere_jacobian(&fk, pair.a, &gr, &mut grad, 1.0);
            self.accumulate_sphere_jacobian(&fk, pair.b, &gr, &mut grad, -1.0);
        }

        let dq = q - &self.q_prev;
        let n = dq.norm();
        let smoothness = w.smoothness_weight * huber(n, w.huber_delta);
        let scale = if n <= w.huber_delta {
            1.0
        } else {
            w.huber_delta / n
        };
        grad += dq * (w.smoothness_weight * scale);

        let terms = CostTerms {
            shape,
            grasp,
            safety,
            smoothness,
            total: shape + grasp + safety + smoothness,
        };
        (terms, grad)
    }

    fn accumulate_tip_jacobian(
        &self,
        fk: &FkFrames,
        finger: usize,
        grad_point: &Vector3<f64>,
        grad: &mut DVector<f64>,
        sign: f64,
    ) {
        let off = self.model.chain_offset(finger);
        let moving = self.model.chains[finger].joints.len();
        for (i, col) in fk.point_columns(finger, moving, &fk.tips[finger]) {
            grad[off + i] += sign * grad_point.dot(&col);
        }
    }

    fn accumulate_sphere_jacobian(
        &self,
        fk: &FkFrames,
        sphere: usize,
        grad_point: &Vector3<f64>,
        grad: &mut DVector<f64>,
        sign: f64,
    ) {
        let s = &self.model.spheres[sphere];
        let center = self.model.sphere_center(fk, sphere);
        let off = self.model.chain_offset(s.chain);
        let moving = self.model.sphere_moving_joints(sphere);
        for (i, col) in fk.point_columns(s.chain, moving, &center) {
            grad[off + i] += sign * grad_point.dot(&col);
        }
    }
}

/// Evaluates the objective's four terms at `q` given the anchored state.
pub fn cost_terms(
    model: &HandModel,
    q: &JointConfig,
    q_prev: &JointConfig,
    anchor: &AnchorState,
    human_now: &KeyVectors,
    w: &CostWeights,
) -> Result<CostTerms, RetargetError> {
    model.check_dims(q)?;
    let ctx = CostContext::new(model, anchor, human_now, q_prev, w)?;
    Ok(ctx.eval(&q.0).0)
}

/// Analytic gradient of the total objective at `q`.
pub fn cost_gradient(
    model: &HandModel,
    q: &JointConfig,
    q_prev: &JointConfig,
    anchor: &AnchorState,
    human_now: &KeyVectors,
    w: &CostWeights,
) -> Result<DVector<f64>, RetargetError> {
    model.check_dims(q)?;
    let ctx = CostContext::new(model, anchor, human_now, q_prev, w)?;
    Ok(ctx.eval(&q.0).1)
}

/// One control step of anchored relative retargeting: a local minimum of the
/// objective from the warm start `q_prev`, projected to joint limits.
/// Deterministic given identical inputs.
pub fn solve_step(
    model: &HandModel,
    anchor: &AnchorState,
    human_now: &KeyVectors,
    q_prev: &JointConfig,
    w: &CostWeights,
    solver: &SolverConfig,
) -> Result<SolveReport, RetargetError> {
    let ctx = CostContext::new(model, anchor, human_now, q_prev, w)?;
    let min = run_solver(&ctx, model, &q_prev.0, solver)?;
    Ok(report_from(min))
}

pub(crate) fn run_solver(
    ctx: &CostContext<'_>,
    model: &HandModel,
    warm_start: &DVector<f64>,
    solver: &SolverConfig,
) -> Result<Minimum, SolverError> {
    minimize_box(
        |x| {
            let (terms, grad) = ctx.eval(x);
            (terms.total, grad)
        },
        warm_start,
        &model.lower_limits(),
        &model.upper_limits(),
        solver,
    )
}

pub(crate) fn report_from(min: Minimum) -> SolveReport {
    SolveReport {
        q_solution: JointConfig(min.x),
        cost: min.cost,
        iterations: min.iterations,
        gradient_norm: min.gradient_norm,
        converged: min.converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn random_config(model: &HandModel, rng: &mut impl Rng) -> JointConfig {
        let lo = model.lower_limits();
        let hi = model.upper_limits();
        JointConfig(DVector::from_iterator(
            model.dof(),
            (0..model.dof()).map(|i| rng.random_range(lo[i]..hi[i])),
        ))
    }

    fn open_human(model: &HandModel) -> KeyVectors {
        robot_keyvectors(model, &JointConfig::zeros(model.dof())).unwrap()
    }

    #[test]
    fn gate_endpoints_and_midpoints() {
        let w = CostWeights::default();
        assert_eq!(gate_beta(w.shape_gate_hi, &w), 1.0);
        assert_eq!(gate_beta(0.2, &w), 1.0);
        assert_eq!(gate_beta(w.shape_gate_lo, &w), w.shape_gate_floor);
        assert_eq!(gate_beta(0.0, &w), w.shape_gate_floor);
        let mid = 0.5 * (w.shape_gate_lo + w.shape_gate_hi);
        assert_relative_eq!(
            gate_beta(mid, &w),
            0.5 * (w.shape_gate_floor + 1.0),
            epsilon = 1e-15
        );

        assert_eq!(gate_alpha(w.pinch_gate_on, &w), 0.0);
        assert_eq!(gate_alpha(0.0, &w), 0.0);
        assert_eq!(gate_alpha(w.pinch_gate_off, &w), 1.0);
        let mid = 0.5 * (w.pinch_gate_on + w.pinch_gate_off);
        assert_relative_eq!(gate_alpha(mid, &w), 0.5, epsilon = 1e-15);

        assert_eq!(gate_omega(0.0, &w), w.grasp_weight_max);
        assert_eq!(gate_omega(w.pinch_gate_off, &w), 0.0);
        assert_relative_eq!(
            gate_omega(mid, &w),
            0.5 * w.grasp_weight_max,
            epsilon = 1e-15
        );
    }

    proptest! {
        #[test]
        fn gates_are_monotone(d1 in 0.0f64..0.2, d2 in 0.0f64..0.2) {
            let w = CostWeights::default();
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            prop_assert!(gate_beta(lo, &w) <= gate_beta(hi, &w));
            prop_assert!(gate_alpha(lo, &w) <= gate_alpha(hi, &w));
            prop_assert!(gate_omega(lo, &w) >= gate_omega(hi, &w));
            prop_assert!((0.0..=1.0).contains(&gate_alpha(lo, &w)));
            prop_assert!((w.shape_gate_floor..=1.0).contains(&gate_beta(lo, &w)));
        }
    }

    #[test]
    fn huber_values_and_knee() {
        let d = 0.01;
        assert_eq!(huber(0.0, d), 0.0);
        // Both branches agree at the knee.
        assert_relative_eq!(huber(d, d), 0.5 * d * d, epsilon = 1e-18);
        assert_relative_eq!(huber(2.0 * d, d), 1.5 * d * d, epsilon = 1e-18);
        // C1 at the knee: numeric slope from both sides matches delta.
        let h = 1e-9;
        let left = (huber(d, d) - huber(d - h, d)) / h;
        let right = (huber(d + h, d) - huber(d, d)) / h;
        assert_relative_eq!(left, d, epsilon = 1e-6);
        assert_relative_eq!(right, d, epsilon = 1e-6);
    }

    #[test]
    fn cost_vanishes_at_anchor_with_open_hand() {
        let model = HandModel::default_21dof();
        let w = CostWeights::default();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        // Robot mid-grasp, human open: the anchored residuals are all zero
        // and the open human keeps every pinch activation saturated at 1.
        let q_anchor = random_config(&model, &mut rng);
        let human = open_human(&model);
        let anchor = AnchorState::capture(&model, &q_anchor, &human).unwrap();
        let terms = cost_terms(&model, &q_anchor, &q_anchor, &anchor, &human, &w).unwrap();
        assert_eq!(terms.shape, 0.0);
        assert_eq!(terms.grasp, 0.0);
        assert_eq!(terms.smoothness, 0.0);
        // Safety can be nonzero for adversarial random configs; the total is
        // exactly whatever the hinge contributes.
        assert_eq!(terms.total, terms.safety);

        let q_open = JointConfig::zeros(model.dof());
        let anchor_open = AnchorState::capture(&model, &q_open, &human).unwrap();
        let t = cost_terms(&model, &q_open, &q_open, &anchor_open, &human, &w).unwrap();
        assert_eq!(t.total, 0.0);
    }

    #[test]
    fn safety_hinge_matches_proximity_distances() {
        let model = HandModel::default_21dof();
        let w = CostWeights::default();
        // Index and middle abducted toward each other until their tip
        // spheres penetrate.
        let mut q = JointConfig::zeros(model.dof());
        q.0[model.chain_offset(1)] = -0.0706;
        q.0[model.chain_offset(2)] = 0.0706;
        let human = open_human(&model);
        let anchor = AnchorState::capture(&model, &q, &human).unwrap();
        let terms = cost_terms(&model, &q, &q, &anchor, &human, &w).unwrap();

        let expected: f64 = model
            .proximity_distances(&q)
            .unwrap()
            .iter()
            .map(|(_, d)| w.safety_weight * (w.safety_margin - d).max(0.0).powi(2))
            .sum();
        assert!(expected > 0.0, "fixture must actually penetrate");
        assert_relative_eq!(terms.safety, expected, epsilon = 1e-15);
    }

    /// Straight-line transcription of the objective from its definition,
    /// written only in terms of the public per-term operations.
    fn transcribed_cost(
        model: &HandModel,
        q: &JointConfig,
        q_prev: &JointConfig,
        anchor: &AnchorState,
        human_now: &KeyVectors,
        w: &CostWeights,
    ) -> f64 {
        let robot_now = robot_keyvectors(model, q).unwrap();
        let chains = model.chains.len();

        let mut total = 0.0;
        for i in 0..chains {
            let d_i = if i == 0 {
                thumb_gate_distance(human_now)
            } else {
                crate::keyvec::thumb_distance(human_now, i).unwrap()
            };
            let dv_rob = robot_now.wrist_to_tip(i) - anchor.robot_kv_anchor.wrist_to_tip(i);
            let dv_hum = human_now.wrist_to_tip(i) - anchor.human_kv_anchor.wrist_to_tip(i);
            total += gate_beta(d_i, w) * huber((dv_rob - dv_hum).norm(), w.huber_delta);
        }
        for &j in &w.opposition_set {
            let d_j = crate::keyvec::thumb_distance(human_now, j).unwrap();
            let du_hum =
                human_now.opposition(j).unwrap() - anchor.human_kv_anchor.opposition(j).unwrap();
            let u_tgt = anchor.robot_kv_anchor.opposition(j).unwrap() + du_hum;
            let r = robot_now.opposition(j).unwrap() - gate_alpha(d_j, w) * u_tgt;
            total += gate_omega(d_j, w) * huber(r.norm(), w.huber_delta);
        }
        for (_, dist) in model.proximity_distances(q).unwrap() {
            total += w.safety_weight * (w.safety_margin - dist).max(0.0).powi(2);
        }
        total += w.smoothness_weight * huber((&q.0 - &q_prev.0).norm(), w.huber_delta);
        total
    }

    #[test]
    fn cost_matches_independent_transcription() {
        let model = HandModel::default_21dof();
        let w = CostWeights::default();
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        for _ in 0..50 {
            let q_anchor = random_config(&model, &mut rng);
            let human_anchor = robot_keyvectors(&model, &random_config(&model, &mut rng)).unwrap();
            let human_now = robot_keyvectors(&model, &random_config(&model, &mut rng)).unwrap();
            let anchor = AnchorState::capture(&model, &q_anchor, &human_anchor).unwrap();
            let q = random_config(&model, &mut rng);
            let q_prev = random_config(&model, &mut rng);
            let terms = cost_terms(&model, &q, &q_prev, &anchor, &human_now, &w).unwrap();
            let oracle = transcribed_cost(&model, &q, &q_prev, &anchor, &human_now, &w);
            assert!(
                (terms.total - oracle).abs() <= 1e-12 * oracle.max(1.0),
                "total {} vs transcription {}",
                terms.total,
                oracle
            );
        }
    }

    /// Draws a random instance whose residual norms stay clear of the Huber
    /// knees and whose sphere distances stay clear of the hinge boundary, so
    /// central differences see a twice-differentiable function.
    fn knee_free_instance(
        model: &HandModel,
        w: &CostWeights,
        rng: &mut impl Rng,
    ) -> Option<(JointConfig, JointConfig, AnchorState, KeyVectors)> {
        let q_anchor = random_config(model, rng);
        let human_anchor = robot_keyvectors(model, &random_config(model, rng)).ok()?;
        let human_now = robot_keyvectors(model, &random_config(model, rng)).ok()?;
        let anchor = AnchorState::capture(model, &q_anchor, &human_anchor).ok()?;
        let q = random_config(model, rng);
        let q_prev = random_config(model, rng);

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
            let d_j = crate::keyvec::thumb_distance(&human_now, j).ok()?;
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

    #[test]
    fn gradient_matches_central_differences() {
        let model = HandModel::default_21dof();
        let w = CostWeights::default();
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let h = 1e-6;
        let mut checked = 0;
        while checked < 20 {
            let Some((q, q_prev, anchor, human_now)) = knee_free_instance(&model, &w, &mut rng)
            else {
                continue;
            };
            let grad = cost_gradient(&model, &q, &q_prev, &anchor, &human_now, &w).unwrap();
            let mut fd = DVector::zeros(model.dof());
            for k in 0..model.dof() {
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp.0[k] += h;
                qm.0[k] -= h;
                let fp = cost_terms(&model, &qp, &q_prev, &anchor, &human_now, &w)
                    .unwrap()
                    .total;
                let fm = cost_terms(&model, &qm, &q_prev, &anchor, &human_now, &w)
                    .unwrap()
                    .total;
                fd[k] = (fp - fm) / (2.0 * h);
            }
            let rel = (&grad - &fd).norm() / fd.norm().max(1e-12);
            assert!(rel <= 1e-4, "gradient mismatch: rel err {rel}");
            checked += 1;
        }
    }

    #[test]
    fn safety_gradient_inactive_above_margin() {
        let model = HandModel::default_21dof();
        let w = CostWeights::default();
        let q = JointConfig::zeros(model.dof());
        for (_, d) in model.proximity_distances(&q).unwrap() {
            assert!(d > w.safety_margin);
        }
        let human = open_human(&model);
        let anchor = AnchorState::capture(&model, &q, &human).unwrap();
        let with_gamma = cost_gradient(&model, &q, &q, &anchor, &human, &w).unwrap();
        let mut tiny = w.clone();
        tiny.safety_weight = 1e-12;
        let without = cost_gradient(&model, &q, &q, &anchor, &human, &tiny).unwrap();
        assert_eq!(with_gamma, without);
    }

    #[test]
    fn still_human_returns_anchor() {
        let model = HandModel::default_21dof();
        let w = CostWeights::default();
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let human = open_human(&model);
        let mut checked = 0;
        while checked < 10 {
            // Robot in an arbitrary (possibly grasping) configuration with
            // the safety hinge inactive; a penetrating anchor would rightly
            // be pushed out by the safety term.
            let q_anchor = random_config(&model, &mut rng);
            if model
                .proximity_distances(&q_anchor)
                .unwrap()
                .iter()
                .any(|(_, d)| *d <= w.safety_margin)
            {
                continue;
            }
            checked += 1;
            let anchor = AnchorState::capture(&model, &q_anchor, &human).unwrap();
            let report = solve_step(
                &model,
                &anchor,
                &human,
                &q_anchor,
                &w,
                &SolverConfig::default(),
            )
            .unwrap();
            let jump = (&report.q_solution.0 - &q_anchor.0).norm();
            assert!(jump <= 1e-6, "boundary jump {jump} exceeds tolerance");
        }
    }

    #[test]
    fn solver_converges_at_interior_stationary_point() {
        let model = HandModel::default_21dof();
        let w = CostWeights::default();
        let human = open_human(&model);
        let q_anchor = JointConfig::zeros(model.dof());
        let anchor = AnchorState::capture(&model, &q_anchor, &human).unwrap();
        // Move the human slightly and solve; at convergence the projected
        // gradient norm respects the solver tolerance.
        let moved = KeyVectors::from_wrist_vectors(
            human
                .wrist_to_tips()
                .iter()
                .map(|v| v + Vector3::new(-0.002, 0.001, 0.003))
                .collect(),
        );
        let cfg = SolverConfig::default();
        let report = solve_step(&model, &anchor, &moved, &q_anchor, &w, &cfg).unwrap();
        assert!(report.converged);
        assert!(report.gradient_norm <= cfg.gradient_tolerance);
        let anchor_cost = cost_terms(&model, &q_anchor, &q_anchor, &anchor, &moved, &w)
            .unwrap()
            .total;
        assert!(report.cost <= anchor_cost);
    }

    #[test]
    fn toy_grid_oracle_single_instance() {
        let model = HandModel::toy_finger();
        let w = CostWeights {
            opposition_set: vec![],
            ..CostWeights::default()
        };
        let q_anchor = JointConfig::from_vec(vec![0.3, 0.4]);
        let human = robot_keyvectors(&model, &q_anchor).unwrap();
        let anchor = AnchorState::capture(&model, &q_anchor, &human).unwrap();
        // Human curls slightly.
        let human_now =
            robot_keyvectors(&model, &JointConfig::from_vec(vec![0.45, 0.5])).unwrap();
        let q_prev = q_anchor.clone();
        let report = solve_step(
            &model,
            &anchor,
            &human_now,
            &q_prev,
            &w,
            &SolverConfig::default(),
        )
        .unwrap();

        let mut best = f64::INFINITY;
        let steps = 1001; // 1e-3 rad over [0, 1]
        for i in 0..steps {
            for j in 0..steps {
                let q = JointConfig::from_vec(vec![i as f64 * 1e-3, j as f64 * 1e-3]);
                let t = cost_terms(&model, &q, &q_prev, &anchor, &human_now, &w).unwrap();
                best = best.min(t.total);
            }
        }
        assert!(
            report.cost <= best + 1e-5,
            "solver cost {} vs grid minimum {}",
            report.cost,
            best
        );
    }

    #[test]
    fn opening_human_extends_every_finger() {
        let model = HandModel::default_21dof();
        let w = CostWeights::default();
        // Mildly flexed anchor so every finger has room to extend.
        let mut q_anchor = JointConfig::zeros(model.dof());
        for (c, chain) in model.chains.iter().enumerate() {
            let off = model.chain_offset(c);
            for j in 1..chain.joints.len() {
                let joint = &chain.joints[j];
                // A third of the way into whichever side curls the finger.
                q_anchor.0[off + j] = if joint.upper.abs() > joint.lower.abs() {
                    0.3 * joint.upper
                } else {
                    0.3 * joint.lower
                };
            }
        }
        let human = open_human(&model);
        let anchor = AnchorState::capture(&model, &q_anchor, &human).unwrap();
        // Human extends every wrist-to-tip vector by +1 cm along itself.
        let opened = KeyVectors::from_wrist_vectors(
            human
                .wrist_to_tips()
                .iter()
                .map(|v| v * (1.0 + 0.01 / v.norm()))
                .collect(),
        );
        let report = solve_step(
            &model,
            &anchor,
            &opened,
            &q_anchor,
            &w,
            &SolverConfig::default(),
        )
        .unwrap();
        let before = anchor.robot_kv_anchor.clone();
        let after = robot_keyvectors(&model, &report.q_solution).unwrap();
        for i in 0..model.chains.len() {
            assert!(
                after.wrist_to_tip(i).norm() > before.wrist_to_tip(i).norm(),
                "finger {i} did not extend"
            );
        }
    }

    #[test]
    fn smoothness_weight_sweep_is_monotone() {
        let model = HandModel::default_21dof();
        let human = open_human(&model);
        let q_anchor = JointConfig::zeros(model.dof());
        let anchor = AnchorState::capture(&model, &q_anchor, &human).unwrap();
        let human_now = KeyVectors::from_wrist_vectors(
            human
                .wrist_to_tips()
                .iter()
                .map(|v| v + Vector3::new(-0.01, 0.004, 0.008))
                .collect(),
        );
        let mut last = f64::INFINITY;
        for lambda in [1e-6, 0.01, 0.05, 0.5, 5.0, 50.0] {
            let w = CostWeights {
                smoothness_weight: lambda,
                ..CostWeights::default()
            };
            let report = solve_step(
                &model,
                &anchor,
                &human_now,
                &q_anchor,
                &w,
                &SolverConfig::default(),
            )
            .unwrap();
            let step = (&report.q_solution.0 - &q_anchor.0).norm();
            assert!(
                step <= last + 1e-9,
                "step grew from {last} to {step} at lambda {lambda}"
            );
            last = step;
        }
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let model = HandModel::default_21dof();
        let human = open_human(&model);
        let q = JointConfig::zeros(model.dof());
        let anchor = AnchorState::capture(&model, &q, &human).unwrap();

        let bad = CostWeights {
            shape_gate_lo: 0.1, // above shape_gate_hi
            ..CostWeights::default()
        };
        assert!(matches!(
            solve_step(&model, &anchor, &human, &q, &bad, &SolverConfig::default()),
            Err(RetargetError::InvalidWeights(_))
        ));

        let w = CostWeights::default();
        let short = JointConfig::zeros(3);
        assert!(matches!(
            solve_step(&model, &anchor, &human, &short, &w, &SolverConfig::default()),
            Err(RetargetError::Model(ModelError::DimensionMismatch { .. }))
        ));

        // Non-finite human input surfaces as a solver error.
        let nan_kv =
            KeyVectors::from_wrist_vectors(vec![Vector3::new(f64::NAN, 0.0, 0.0); 5]);
        assert!(matches!(
            solve_step(&model, &anchor, &nan_kv, &q, &w, &SolverConfig::default()),
            Err(RetargetError::Solver(SolverError::NonFiniteCost))
        ));

        let bad_set = CostWeights {
            opposition_set: vec![0],
            ..CostWeights::default()
        };
        assert!(matches!(
            solve_step(&model, &anchor, &human, &q, &bad_set, &SolverConfig::default()),
            Err(RetargetError::InvalidWeights(_))
        ));
    }
}
