//! Closed-loop kinematic replay: policy stream in, fused executed commands
//! out, with the correction log and metrics as products. Executed hand
//! commands become the achieved state at the next step (no dynamics); every
//! in-scope measurement concerns commands.

use std::str::FromStr;
use std::time::Instant;

use nalgebra::Vector3;

use crate::armshare::{
    estimate_residual_twist, integrate_twist, pd_track, ArmCommand, ArmShareError,
    OffsetAccumulator, ResidualMode, VrPoseWindow,
};
use crate::baselines::{absolute_retarget, delta_cmd_retarget, jacobian_retarget, TeleopBackend};
use crate::config::SimConfig;
use crate::hand::{HandModel, JointConfig};
use crate::intervene::{
    fuse_arm, fuse_hand, measure_discontinuity, CorrectionLog, CorrectionLogWriter,
    CorrectionRecord, FusedCommand, InterventionController, LogHeader, PolicyCommand,
};
use crate::keyvec::{normalize_human, NormalizationMap};
use crate::retarget::solve_step;
use crate::spatial::{so3_log, EmaFilter, Rotation, Twist};

use super::metrics::{MetricsReport, ResidualPoint, SolveTiming, TrackingPoint, METRICS_SCHEMA_VERSION};
use super::policy::PolicyProbe;
use super::scenario::Scenario;
use super::SimError;

/// Hand retargeting method driving the intervention segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Relative,
    Teleop,
    DeltaCmd,
    Jacobian,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Relative,
        Method::Teleop,
        Method::DeltaCmd,
        Method::Jacobian,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Relative => "relative",
            Method::Teleop => "teleop",
            Method::DeltaCmd => "deltacmd",
            Method::Jacobian => "jacobian",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.name())
    }
}

impl FromStr for Method {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relative" => Ok(Method::Relative),
            "teleop" => Ok(Method::Teleop),
            "deltacmd" => Ok(Method::DeltaCmd),
            "jacobian" => Ok(Method::Jacobian),
            other => Err(SimError::UnknownMethod(other.to_string())),
        }
    }
}

/// Everything a rollout produces: the parsed log, its exact bytes, and the
/// metrics report.
#[derive(Debug, Clone)]
pub struct RolloutOutput {
    pub log: CorrectionLog,
    pub log_bytes: Vec<u8>,
    pub metrics: MetricsReport,
}

impl RolloutOutput {
    pub fn commands(&self) -> Vec<FusedCommand> {
        self.log.commands()
    }
}

struct DeltaCmdState {
    backend: TeleopBackend,
    /// (executed hand command, backend command) frozen at engagement.
    anchors: Option<(JointConfig, JointConfig)>,
}

/// Runs one scenario under one method. Deterministic: identical
/// (scenario, config, method) produce byte-identical logs.
pub fn run_rollout(
    model: &HandModel,
    scenario: &Scenario,
    method: Method,
    cfg: &SimConfig,
) -> Result<RolloutOutput, SimError> {
    cfg.weights.validate().map_err(SimError::from)?;
    cfg.armshare.validate().map_err(SimError::from)?;
    let dt = cfg.armshare.control_period;
    let map = NormalizationMap::identity(model.chains.len());
    let header = LogHeader::new(
        model.name.clone(),
        method.name().to_string(),
        serde_json::to_value(&scenario.spec)?,
        serde_json::to_value(cfg)?,
    );

    let mut writer = CorrectionLogWriter::create(Vec::new(), &header)?;
    let mut records: Vec<CorrectionRecord> = Vec::with_capacity(scenario.steps);

    let mut q_robot = scenario.policy.action(0).hand.clone();
    let mut arm_pose = scenario.policy.action(0).arm;
    let mut arm_vel = Twist::zero();
    let mut window = VrPoseWindow::new((cfg.armshare.window_ticks + 1).max(8));
    let mut ema_lin = EmaFilter::new(cfg.armshare.ema_coefficient);
    let mut ema_ang = EmaFilter::new(cfg.armshare.ema_coefficient);
    let mut controller = InterventionController::new();
    let mut probe = PolicyProbe::default();
    let base_from_device = Rotation::identity();

    let mut delta_state = DeltaCmdState {
        backend: TeleopBackend::new(q_robot.clone()),
        anchors: None,
    };
    let mut jacobian_prev_tips: Option<Vec<Vector3<f64>>> = None;
    let mut offset_acc = OffsetAccumulator::new();

    let mut solve_ms: Vec<f64> = Vec::new();
    let mut tracking: Vec<TrackingPoint> = Vec::new();
    let mut residuals: Vec<ResidualPoint> = Vec::new();

    let abort = |step: usize, message: String, records: Vec<CorrectionRecord>| {
        let mut header = header.clone();
        header.aborted = true;
        SimError::Aborted {
            step,
            message,
            partial: Box::new(CorrectionLog { header, records }),
        }
    };

    for step in 0..scenario.steps {
        let t = step as f64 * dt;
        let chunk = scenario.policy.predict(step);
        probe.predictions += 1;
        let act = &chunk[0];
        probe.actions_executed += 1;

        let human = &scenario.human[step];
        window
            .push(human.timestamp, human.wrist)
            .map_err(SimError::from)?;
        let hkv = normalize_human(human, &map)?;

        // The parallel teleoperation system runs for the whole rollout.
        if method == Method::DeltaCmd {
            let start = Instant::now();
            delta_state
                .backend
                .step(model, &hkv, &cfg.weights, &cfg.solver)
                .map_err(|e| abort(step, e.to_string(), records.clone()))?;
            solve_ms.push(start.elapsed().as_secs_f64() * 1e3);
        }

        let requested = scenario.spec.mode_at(t);
        if requested != controller.mode() {
            let outcome = controller.toggle(model, requested, &q_robot, &hkv, &mut ema_lin, &mut ema_ang)?;
            if outcome == crate::intervene::ToggleOutcome::Engaged {
                delta_state.anchors =
                    Some((q_robot.clone(), delta_state.backend.current().clone()));
                jacobian_prev_tips =
                    Some(hkv.wrist_to_tips().to_vec());
                offset_acc.reset();
            }
        }

        let policy_cmd = ArmCommand {
            target: act.arm,
            commanded: Twist::zero(),
            feedforward: act.feedforward,
        };

        let mode = controller.mode();
        let (hand_exec, arm_fused, residual) = if mode.is_intervention() {
            let authority = mode.authority(&cfg.fusion.copilot);
            let anchor = controller.anchor().expect("engaged implies anchor");
            let human_cmd = match method {
                Method::Relative => {
                    let start = Instant::now();
                    let report = solve_step(model, anchor, &hkv, &q_robot, &cfg.weights, &cfg.solver)
                        .map_err(|e| abort(step, e.to_string(), records.clone()))?;
                    solve_ms.push(start.elapsed().as_secs_f64() * 1e3);
                    report.q_solution
                }
                Method::Teleop => {
                    let start = Instant::now();
                    let report = absolute_retarget(model, &hkv, &q_robot, &cfg.weights, &cfg.solver)
                        .map_err(|e| abort(step, e.to_string(), records.clone()))?;
                    solve_ms.push(start.elapsed().as_secs_f64() * 1e3);
                    report.q_solution
                }
                Method::DeltaCmd => {
                    let (exec_anchor, tel_anchor) =
                        delta_state.anchors.as_ref().expect("engaged implies anchors");
                    delta_cmd_retarget(model, exec_anchor, delta_state.backend.current(), tel_anchor)?
                }
                Method::Jacobian => {
                    let prev = jacobian_prev_tips.as_mut().expect("engaged implies tips");
                    let disp: Vec<Vector3<f64>> = hkv
                        .wrist_to_tips()
                        .iter()
                        .zip(prev.iter())
                        .map(|(now, was)| now - was)
                        .collect();
                    *prev = hkv.wrist_to_tips().to_vec();
                    jacobian_retarget(model, &q_robot, &disp, cfg.jacobian_damping)?
                }
            };
            let hand = fuse_hand(model, &act.hand, &human_cmd, authority.hand)?;
            let residual = match estimate_residual_twist(
                &window,
                &cfg.armshare,
                &base_from_device,
                &mut ema_lin,
                &mut ema_ang,
                t,
            ) {
                Ok(tw) => tw,
                Err(ArmShareError::NotReady { .. }) => Twist::zero(),
                Err(e) => return Err(e.into()),
            };
            let fused = match cfg.armshare.residual_mode {
                ResidualMode::Live => fuse_arm(&policy_cmd, &residual, authority.arm, &cfg.armshare),
                ResidualMode::Integrated => {
                    offset_acc.step(&residual.scale(authority.arm), &cfg.armshare);
                    ArmCommand {
                        target: offset_acc.compose(&policy_cmd.target),
                        ..policy_cmd
                    }
                }
            };
            (hand, fused, residual)
        } else {
            (model.project_limits(&act.hand), policy_cmd, Twist::zero())
        };

        let commanded = pd_track(
            &arm_pose,
            &arm_vel,
            &arm_fused.target,
            &arm_fused.feedforward,
            &cfg.armshare,
        )?;
        let arm_exec = ArmCommand {
            commanded,
            ..arm_fused
        };
        arm_pose = integrate_twist(&arm_pose, &commanded, dt);
        arm_vel = commanded;
        q_robot = hand_exec.clone();

        if mode.is_intervention() {
            let anchor = controller.anchor().expect("engaged implies anchor");
            let tips = model.fk_fingertips(&q_robot)?;
            let mut err = 0.0;
            for (i, tip) in tips.iter().enumerate() {
                let intent = anchor.robot_kv_anchor.wrist_to_tip(i)
                    + (hkv.wrist_to_tip(i) - anchor.human_kv_anchor.wrist_to_tip(i));
                err += (tip - intent).norm();
            }
            tracking.push(TrackingPoint {
                step: step as u64,
                t,
                tip_error: err / tips.len() as f64,
            });
            let offset_rot =
                so3_log(&policy_cmd.target.rotation.inverse().compose(&arm_exec.target.rotation))
                    .map(|v| v.norm())
                    .unwrap_or(f64::NAN);
            residuals.push(ResidualPoint {
                step: step as u64,
                t,
                linear: residual.linear.norm(),
                angular: residual.angular.norm(),
                offset_position: (arm_exec.target.position - policy_cmd.target.position).norm(),
                offset_rotation: offset_rot,
            });
        }

        let fused = FusedCommand {
            timestamp: t,
            mode,
            hand: hand_exec,
            arm: arm_exec,
        };
        let record = CorrectionRecord::new(
            step as u64,
            format!("{:08x}:{step:06}", scenario.spec.seed),
            fused,
            PolicyCommand {
                hand: act.hand.clone(),
                arm: policy_cmd,
            },
            human.clone(),
        );
        writer.record_step(&record)?;
        records.push(record);
    }

    let log_bytes = writer.into_inner();
    let log = CorrectionLog::read(log_bytes.as_slice())?;
    let commands = log.commands();
    let discontinuity = measure_discontinuity(&commands, &scenario.spec.engage_times())?;

    let metrics = MetricsReport {
        schema_version: METRICS_SCHEMA_VERSION,
        method: method.name().to_string(),
        seed: scenario.spec.seed,
        misalignment: scenario.spec.misalignment,
        steps: scenario.steps,
        policy_predictions: probe.predictions,
        actions_executed: probe.actions_executed,
        discontinuity,
        tracking,
        residuals,
        timing: SolveTiming::from_samples(solve_ms),
    };

    Ok(RolloutOutput {
        log,
        log_bytes,
        metrics,
    })
}

/// Re-runs the rollout recorded in a log from its embedded scenario and
/// config; with the same model this reproduces the fused commands exactly.
pub fn replay(model: &HandModel, log: &CorrectionLog) -> Result<RolloutOutput, SimError> {
    let spec: super::scenario::ScenarioSpec = serde_json::from_value(log.header.scenario.clone())?;
    let cfg: SimConfig = serde_json::from_value(log.header.config.clone())?;
    let method = Method::from_str(&log.header.method)?;
    if model.name != log.header.model {
        return Err(SimError::InvalidScenario(format!(
            "log was recorded on model {:?}, replaying on {:?}",
            log.header.model, model.name
        )));
    }
    let scenario = super::scenario::generate_scenario(model, &spec, &cfg)?;
    run_rollout(model, &scenario, method, &cfg)
}
