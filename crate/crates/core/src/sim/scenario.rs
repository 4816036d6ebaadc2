//! Deterministic synthetic scenarios: a scripted policy stream, a human
//! stream offset by a configurable joint-space misalignment, and a toggle
//! schedule. Every stream is a pure function of the spec and seed.
//!
//! Motion is shaped by a stillness envelope that vanishes inside a hold
//! window around every toggle edge: the operator and the policy are both at
//! rest when interventions engage or release, which is what makes the
//! boundary-jump measurement well posed. The misalignment parameter realizes
//! the human hand as the image of a configuration `m` radians (joint L2)
//! away from the policy's, so absolute retargeting at the boundary lands
//! about `m` away from the robot's current command.

use nalgebra::{DVector, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::hand::{HandModel, JointConfig};
use crate::intervene::InterventionMode;
use crate::keyvec::{robot_keyvectors, HumanHandSample};
use crate::retarget::gate_alpha;
use crate::spatial::{so3_exp, so3_log, Pose, Twist};

use super::policy::{MockPolicyStream, PolicyAction};
use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToggleSpec {
    pub t_on: f64,
    pub t_off: f64,
    pub mode: InterventionMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub seed: u64,
    /// Rollout length (seconds).
    pub duration: f64,
    /// Joint-space offset (rad, L2) between the human-implied configuration
    /// and the policy configuration at the toggles.
    pub misalignment: f64,
    /// Additive fingertip noise (meters, 1 sigma); suspended inside the
    /// stillness holds so anchors stay well defined.
    pub noise_sigma: f64,
    /// Stillness half-width around each toggle edge (seconds).
    pub hold: f64,
    /// Envelope ramp from stillness back to full motion (seconds).
    pub ramp: f64,
    /// Human finger curl amplitude (rad) and period (s) during intervention.
    pub finger_amplitude: f64,
    pub finger_period: f64,
    /// Human wrist translation amplitude (m) and period (s).
    pub wrist_amplitude: f64,
    pub wrist_period: f64,
    /// Policy hand motion amplitude (rad) and period (s).
    pub policy_amplitude: f64,
    pub policy_period: f64,
    /// Policy arm translation amplitude (m).
    pub arm_amplitude: f64,
    pub toggles: Vec<ToggleSpec>,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            seed: 0,
            duration: 5.0,
            misalignment: 0.5,
            noise_sigma: 0.0,
            hold: 0.2,
            ramp: 0.25,
            finger_amplitude: 0.25,
            finger_period: 1.6,
            wrist_amplitude: 0.03,
            wrist_period: 2.0,
            policy_amplitude: 0.15,
            policy_period: 2.4,
            arm_amplitude: 0.05,
            toggles: vec![
                ToggleSpec {
                    t_on: 0.8,
                    t_off: 1.8,
                    mode: InterventionMode::FullTakeover,
                },
                ToggleSpec {
                    t_on: 2.3,
                    t_off: 3.3,
                    mode: InterventionMode::FullTakeover,
                },
                ToggleSpec {
                    t_on: 3.8,
                    t_off: 4.8,
                    mode: InterventionMode::FullTakeover,
                },
            ],
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.duration.is_nan() || self.duration <= 0.0 {
            return Err(SimError::InvalidScenario("duration must be positive".into()));
        }
        if self.misalignment < 0.0 {
            return Err(SimError::InvalidScenario(
                "misalignment must be nonnegative".into(),
            ));
        }
        if self.noise_sigma < 0.0 {
            return Err(SimError::InvalidScenario("noise_sigma must be nonnegative".into()));
        }
        for t in &self.toggles {
            if t.t_on >= t.t_off || t.t_on.is_nan() || t.t_off.is_nan() || t.t_off > self.duration || t.t_on <= 0.0 {
                return Err(SimError::InvalidScenario(format!(
                    "toggle [{}, {}] outside (0, {}]",
                    t.t_on, t.t_off, self.duration
                )));
            }
            if !t.mode.is_intervention() {
                return Err(SimError::InvalidScenario(
                    "toggle spans must request an intervention mode".into(),
                ));
            }
        }
        let mut edges: Vec<f64> = self
            .toggles
            .iter()
            .flat_map(|t| [t.t_on, t.t_off])
            .collect();
        edges.sort_by(f64::total_cmp);
        for w in edges.windows(2) {
            if w[1] - w[0] < 2.0 * self.hold {
                return Err(SimError::InvalidScenario(
                    "toggle edges closer than twice the hold window".into(),
                ));
            }
        }
        Ok(())
    }

    /// Mode requested by the schedule at time `t`.
    pub fn mode_at(&self, t: f64) -> InterventionMode {
        for toggle in &self.toggles {
            if t >= toggle.t_on && t < toggle.t_off {
                return toggle.mode;
            }
        }
        InterventionMode::Autonomous
    }

    pub fn engage_times(&self) -> Vec<f64> {
        self.toggles.iter().map(|t| t.t_on).collect()
    }

    /// Stillness envelope: 0 within `hold` of any toggle edge, ramping
    /// smoothly to 1 with distance.
    pub fn envelope(&self, t: f64) -> f64 {
        let mut e = 1.0;
        for toggle in &self.toggles {
            for edge in [toggle.t_on, toggle.t_off] {
                let d = (t - edge).abs();
                let x = ((d - self.hold) / self.ramp).clamp(0.0, 1.0);
                e *= x * x * (3.0 - 2.0 * x);
            }
        }
        e
    }
}

/// Fully generated scenario streams, aligned at the control rate.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub human: Vec<HumanHandSample>,
    pub policy: MockPolicyStream,
    /// Configuration whose key vectors the human stream is built from at the
    /// toggles; its distance to the policy base realizes the misalignment.
    pub q_human_base: JointConfig,
    pub steps: usize,
}

/// Policy base pose: mild flexion keeps every joint interior.
fn policy_base(model: &HandModel) -> JointConfig {
    let mut q = JointConfig::zeros(model.dof());
    for (c, chain) in model.chains.iter().enumerate() {
        let off = model.chain_offset(c);
        for j in 1..chain.joints.len() {
            let joint = &chain.joints[j];
            q.0[off + j] = if joint.upper.abs() > joint.lower.abs() {
                0.25 * joint.upper
            } else {
                0.25 * joint.lower
            };
        }
    }
    q
}

/// Samples the human-implied configuration realizing the misalignment: the
/// human stream is offset along a random joint direction, with the step size
/// calibrated so that absolute retargeting from the policy base actually
/// lands `m` away in joint L2. (The hand is redundant, so an uncalibrated
/// joint offset would understate the realized jump: the solver finds the
/// nearest preimage of the offset key vectors.)
fn sample_misaligned(
    model: &HandModel,
    q_base: &JointConfig,
    spec: &ScenarioSpec,
    cfg: &SimConfig,
    rng: &mut ChaCha12Rng,
) -> Result<JointConfig, SimError> {
    if spec.misalignment == 0.0 {
        return Ok(q_base.clone());
    }
    let lo = model.lower_limits();
    let hi = model.upper_limits();
    let n = model.dof();
    let m = spec.misalignment;

    // Calibration runs a fully converged reference solve; the runtime solver
    // budget in `cfg.solver` must not change what a scenario means.
    let reference_solver = crate::solver::SolverConfig::default();
    let realized_jump = |q_alt: &JointConfig| -> Result<f64, SimError> {
        let kv = robot_keyvectors(model, q_alt)?;
        let report = crate::baselines::absolute_retarget(
            model,
            &kv,
            q_base,
            &cfg.weights,
            &reference_solver,
        )?;
        Ok((&report.q_solution.0 - &q_base.0).norm())
    };

    'directions: for _ in 0..200 {
        let mut dir = DVector::<f64>::zeros(n);
        for v in dir.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let norm = dir.norm();
        if norm < 1e-9 {
            continue;
        }
        dir /= norm;

        // Secant iteration on the offset scale until the realized jump hits m.
        let mut scale = m;
        for _ in 0..12 {
            let q_alt = JointConfig(&q_base.0 + &dir * scale);
            let inside = (0..n).all(|i| q_alt.0[i] >= lo[i] && q_alt.0[i] <= hi[i]);
            if !inside {
                continue 'directions;
            }
            let kv = robot_keyvectors(model, &q_alt)?;
            let open = kv
                .oppositions()
                .iter()
                .all(|u| gate_alpha(u.norm(), &cfg.weights) >= 1.0);
            if !open {
                continue 'directions;
            }
            let jump = realized_jump(&q_alt)?;
            if (jump - m).abs() <= 0.02 * m {
                return Ok(q_alt);
            }
            if jump < 1e-6 {
                continue 'directions;
            }
            scale *= m / jump;
            if scale > 4.0 * m {
                continue 'directions;
            }
        }
    }
    Err(SimError::InvalidScenario(format!(
        "could not place a misaligned open hand at m = {m}"
    )))
}

/// Generates the full scenario deterministically from the spec and seed.
pub fn generate_scenario(
    model: &HandModel,
    spec: &ScenarioSpec,
    cfg: &SimConfig,
) -> Result<Scenario, SimError> {
    spec.validate()?;
    let dt = cfg.armshare.control_period;
    let steps = (spec.duration / dt).round() as usize;
    if steps < 2 {
        return Err(SimError::InvalidScenario("duration shorter than two steps".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let q_base = policy_base(model);
    let q_human_base = sample_misaligned(model, &q_base, spec, cfg, &mut rng)?;

    // Per-joint phases for the policy and human curves.
    let n = model.dof();
    let policy_phase: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    let human_phase: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();

    // Policy hand curve keeps clear of the limits: headroom scales the sine.
    let lo = model.lower_limits();
    let hi = model.upper_limits();
    let amp_at = |q0: &DVector<f64>, i: usize, amp: f64| -> f64 {
        let room = (hi[i] - q0[i]).min(q0[i] - lo[i]).max(0.0);
        amp.min(0.8 * room)
    };

    let arm_base = Pose::new(Vector3::new(0.45, 0.0, 0.30), so3_exp(&Vector3::new(0.0, 0.0, 0.3)));

    let pose_at = |t: f64, e: f64| -> Pose {
        let w = std::f64::consts::TAU / spec.policy_period;
        let p = arm_base.position
            + e * spec.arm_amplitude
                * Vector3::new((w * t).sin(), (w * t + 1.3).sin(), 0.5 * (w * t + 2.1).sin());
        let rotvec = Vector3::new(0.0, 0.0, 0.15 * e * (w * t + 0.4).sin());
        Pose::new(p, arm_base.rotation.compose(&so3_exp(&rotvec)))
    };

    let mut actions = Vec::with_capacity(steps);
    for k in 0..steps {
        let t = k as f64 * dt;
        let e = spec.envelope(t);
        let mut hand = q_base.clone();
        let wq = std::f64::consts::TAU / spec.policy_period;
        for (i, phase) in policy_phase.iter().enumerate() {
            hand.0[i] +=
                amp_at(&q_base.0, i, spec.policy_amplitude) * e * (wq * t + phase).sin();
        }
        let arm = pose_at(t, e);
        // Feedforward from the curve itself: forward difference over one step.
        let e_next = spec.envelope(t + dt);
        let arm_next = pose_at(t + dt, e_next);
        let lin = (arm_next.position - arm.position) / dt;
        let ang_body = so3_log(&arm.rotation.inverse().compose(&arm_next.rotation))
            .map_err(|e| SimError::InvalidScenario(format!("policy curve rotation: {e}")))?
            / dt;
        let ang = arm.rotation.rotate(&ang_body);
        actions.push(PolicyAction {
            hand,
            arm,
            feedforward: Twist::new(lin, ang),
        });
    }

    // Human stream: finger curls on top of the misaligned base, wrist motion
    // in the world frame, fingertip noise suspended during holds. Curl
    // amplitude tapers toward the distal joints the way human fingers do.
    let depth_scale: Vec<f64> = model
        .chains
        .iter()
        .flat_map(|c| {
            (0..c.joints.len()).map(|j| match j {
                0 => 0.4,
                1 => 1.0,
                2 => 0.75,
                _ => 0.45,
            })
        })
        .collect();
    let mut human = Vec::with_capacity(steps);
    let wf = std::f64::consts::TAU / spec.finger_period;
    let ww = std::f64::consts::TAU / spec.wrist_period;
    for k in 0..steps {
        let t = k as f64 * dt;
        let e = spec.envelope(t);
        let mut qh = q_human_base.clone();
        for (i, phase) in human_phase.iter().enumerate() {
            qh.0[i] += amp_at(&q_human_base.0, i, spec.finger_amplitude * depth_scale[i])
                * e
                * (wf * t + phase).sin();
        }
        let tips_local = model.fk_fingertips(&qh)?;
        let wrist = Pose::new(
            e * spec.wrist_amplitude
                * Vector3::new((ww * t).sin(), (ww * t + 1.0).sin(), 0.5 * (ww * t + 2.0).sin()),
            so3_exp(&Vector3::new(
                0.10 * e * (ww * t + 0.5).sin(),
                0.15 * e * (ww * t + 1.5).sin(),
                0.20 * e * (ww * t + 2.5).sin(),
            )),
        );
        let tips_world = tips_local
            .iter()
            .map(|p| {
                let noisy = if spec.noise_sigma > 0.0 {
                    // Draws happen every step regardless of the envelope so
                    // the stream stays a pure function of (seed, spec).
                    let nx: f64 = sample_gauss(&mut rng);
                    let ny: f64 = sample_gauss(&mut rng);
                    let nz: f64 = sample_gauss(&mut rng);
                    p + e * spec.noise_sigma * Vector3::new(nx, ny, nz)
                } else {
                    *p
                };
                wrist.transform_point(&noisy)
            })
            .collect();
        human.push(HumanHandSample::new(t, wrist, tips_world));
    }

    Ok(Scenario {
        spec: spec.clone(),
        human,
        policy: MockPolicyStream::new(actions, cfg.policy_horizon),
        q_human_base,
        steps,
    })
}

/// Box-Muller standard normal from the scenario RNG.
fn sample_gauss(rng: &mut ChaCha12Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_byte_identical() {
        let model = HandModel::default_21dof();
        let cfg = SimConfig::default();
        let spec = ScenarioSpec {
            seed: 9,
            noise_sigma: 0.001,
            ..ScenarioSpec::default()
        };
        let a = generate_scenario(&model, &spec, &cfg).unwrap();
        let b = generate_scenario(&model, &spec, &cfg).unwrap();
        let ja = serde_json::to_vec(&a.human).unwrap();
        let jb = serde_json::to_vec(&b.human).unwrap();
        assert_eq!(ja, jb);
        for k in 0..a.steps {
            assert_eq!(a.policy.action(k), b.policy.action(k));
        }
    }

    #[test]
    fn different_seeds_differ() {
        let model = HandModel::default_21dof();
        let cfg = SimConfig::default();
        let a = generate_scenario(&model, &ScenarioSpec { seed: 1, ..Default::default() }, &cfg)
            .unwrap();
        let b = generate_scenario(&model, &ScenarioSpec { seed: 2, ..Default::default() }, &cfg)
            .unwrap();
        assert_ne!(a.q_human_base.0, b.q_human_base.0);
    }

    #[test]
    fn misalignment_is_realized_by_the_absolute_solver() {
        let model = HandModel::default_21dof();
        let cfg = SimConfig::default();
        for seed in 0..10 {
            let spec = ScenarioSpec {
                seed,
                misalignment: 0.6,
                ..ScenarioSpec::default()
            };
            let s = generate_scenario(&model, &spec, &cfg).unwrap();
            // Absolute retargeting from the policy base lands `m` away.
            let kv = robot_keyvectors(&model, &s.q_human_base).unwrap();
            let report = crate::baselines::absolute_retarget(
                &model,
                &kv,
                &policy_base(&model),
                &cfg.weights,
                &cfg.solver,
            )
            .unwrap();
            let jump = (&report.q_solution.0 - &policy_base(&model).0).norm();
            assert!((jump - 0.6).abs() <= 0.02 * 0.6, "realized jump {jump}");
            // And the implied human hand is open: every pinch gate saturated.
            for u in kv.oppositions() {
                assert!(u.norm() >= cfg.weights.pinch_gate_off);
            }
        }
    }

    #[test]
    fn zero_misalignment_keeps_policy_base() {
        let model = HandModel::default_21dof();
        let cfg = SimConfig::default();
        let spec = ScenarioSpec {
            misalignment: 0.0,
            ..ScenarioSpec::default()
        };
        let s = generate_scenario(&model, &spec, &cfg).unwrap();
        assert_eq!(s.q_human_base.0, policy_base(&model).0);
    }

    #[test]
    fn streams_are_still_inside_holds() {
        let model = HandModel::default_21dof();
        let cfg = SimConfig::default();
        let spec = ScenarioSpec {
            seed: 3,
            noise_sigma: 0.002,
            ..ScenarioSpec::default()
        };
        let s = generate_scenario(&model, &spec, &cfg).unwrap();
        let dt = cfg.armshare.control_period;
        for toggle in &spec.toggles {
            for edge in [toggle.t_on, toggle.t_off] {
                // One step inside each end: the hold boundary itself can land
                // on a control tick up to one ulp outside the window.
                let k0 = ((edge - spec.hold) / dt).ceil() as usize + 1;
                let k1 = ((edge + spec.hold) / dt).floor() as usize - 1;
                for k in k0..k1 {
                    let a = &s.human[k];
                    let b = &s.human[k + 1];
                    for (ta, tb) in a.tips.iter().zip(&b.tips) {
                        assert_eq!(ta, tb, "human tips moved inside hold at step {k}");
                    }
                    assert_eq!(a.wrist, b.wrist);
                    assert_eq!(s.policy.action(k).hand.0, s.policy.action(k + 1).hand.0);
                }
            }
        }
    }

    #[test]
    fn policy_stream_is_continuous() {
        let model = HandModel::default_21dof();
        let cfg = SimConfig::default();
        let s = generate_scenario(&model, &ScenarioSpec::default(), &cfg).unwrap();
        for k in 1..s.steps {
            let d = (&s.policy.action(k).hand.0 - &s.policy.action(k - 1).hand.0).norm();
            assert!(d < 0.08, "policy hand step {k} jumped by {d}");
        }
    }

    #[test]
    fn bad_specs_are_rejected() {
        let model = HandModel::default_21dof();
        let cfg = SimConfig::default();
        let mut spec = ScenarioSpec::default();
        spec.toggles[0].t_off = 9.0; // beyond duration
        assert!(matches!(
            generate_scenario(&model, &spec, &cfg),
            Err(SimError::InvalidScenario(_))
        ));
        let spec = ScenarioSpec {
            duration: -1.0,
            ..ScenarioSpec::default()
        };
        assert!(matches!(
            generate_scenario(&model, &spec, &cfg),
            Err(SimError::InvalidScenario(_))
        ));
    }
}
