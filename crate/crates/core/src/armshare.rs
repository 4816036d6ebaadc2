//! Velocity-based shared arm control: finite-difference residual twist over a
//! short window of VR wrist poses, EMA smoothing, composition onto the live
//! policy target, and a task-space PD tracker.
//!
//! Residuals derive from *relative* wrist motion, so a still operator
//! produces a twist that decays geometrically under the EMA; composing onto
//! the live policy target (rather than integrating an offset) means no
//! persistent displacement accumulates and the operator never has to re-center.

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::spatial::{ema_step, so3_exp, so3_log, EmaFilter, Pose, Rotation, SpatialError, Twist};

#[derive(Debug, thiserror::Error)]
pub enum ArmShareError {
    #[error("window holds {got} samples, residual estimation needs {needed}")]
    NotReady { got: usize, needed: usize },
    #[error("VR samples must have strictly increasing timestamps")]
    NonMonotone,
    #[error(transparent)]
    Spatial(#[from] SpatialError),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("stream i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("stream line {line}: {source}")]
    Record {
        line: usize,
        source: serde_json::Error,
    },
}

/// How human residuals attach to the policy arm command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ResidualMode {
    /// Per-step composition onto the live policy target (default): offsets
    /// vanish as soon as the smoothed residual does.
    #[default]
    Live,
    /// Comparison variant: residual increments accumulate into a decaying
    /// offset state that is composed onto the policy target.
    Integrated,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArmShareConfig {
    /// Finite-difference window length in VR ticks.
    pub window_ticks: usize,
    /// VR tick period (seconds).
    pub tick_period: f64,
    /// Residual gains applied when integrating twists over a control step.
    pub gain_linear: f64,
    pub gain_angular: f64,
    /// Control period (seconds).
    pub control_period: f64,
    /// EMA smoothing coefficient for both twist channels.
    pub ema_coefficient: f64,
    pub kp_pos: f64,
    pub kp_rot: f64,
    pub kd_pos: f64,
    pub kd_rot: f64,
    pub residual_mode: ResidualMode,
    /// Integrated mode only: per-step decay factor applied to the offset.
    pub offset_decay: f64,
    /// Fail-safe: force the residual to zero when the newest VR sample is
    /// older than this many ticks.
    pub dropout_ticks: f64,
}

impl Default for ArmShareConfig {
    fn default() -> Self {
        ArmShareConfig {
            window_ticks: 2,
            tick_period: 0.02,
            gain_linear: 1.0,
            gain_angular: 1.0,
            control_period: 0.02,
            ema_coefficient: crate::spatial::DEFAULT_EMA_COEFFICIENT,
            kp_pos: 5.0,
            kp_rot: 5.0,
            kd_pos: 0.0,
            kd_rot: 0.0,
            residual_mode: ResidualMode::Live,
            offset_decay: 0.3,
            dropout_ticks: 3.0,
        }
    }
}

impl ArmShareConfig {
    pub fn validate(&self) -> Result<(), ArmShareError> {
        if self.window_ticks < 1 {
            return Err(ArmShareError::InvalidConfig("window_ticks must be >= 1".into()));
        }
        for (name, p) in [
            ("tick_period", self.tick_period),
            ("control_period", self.control_period),
        ] {
            if p.is_nan() || p <= 0.0 {
                return Err(ArmShareError::InvalidConfig(format!(
                    "{name} must be positive"
                )));
            }
        }
        let a = self.ema_coefficient;
        if a.is_nan() || a <= 0.0 || a > 1.0 {
            return Err(ArmShareError::InvalidConfig(
                "ema_coefficient must be in (0, 1]".into(),
            ));
        }
        for (name, g) in [
            ("gain_linear", self.gain_linear),
            ("gain_angular", self.gain_angular),
            ("kp_pos", self.kp_pos),
            ("kp_rot", self.kp_rot),
            ("kd_pos", self.kd_pos),
            ("kd_rot", self.kd_rot),
        ] {
            if g < 0.0 {
                return Err(ArmShareError::InvalidConfig(format!(
                    "{name} must be nonnegative"
                )));
            }
        }
        Ok(())
    }
}

/// Ring buffer of timestamped VR wrist poses (single producer, consumed by
/// the control thread; pushes never block the consumer).
#[derive(Debug, Clone)]
pub struct VrPoseWindow {
    samples: VecDeque<(f64, Pose)>,
    capacity: usize,
}

impl VrPoseWindow {
    pub fn new(capacity: usize) -> VrPoseWindow {
        assert!(capacity >= 2, "window needs room for at least two samples");
        VrPoseWindow {
            samples: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn push(&mut self, timestamp: f64, pose: Pose) -> Result<(), ArmShareError> {
        if let Some((t, _)) = self.samples.back() {
            if timestamp <= *t {
                return Err(ArmShareError::NonMonotone);
            }
        }
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back((timestamp, pose));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn latest(&self) -> Option<&(f64, Pose)> {
        self.samples.back()
    }

    fn nth_back(&self, k: usize) -> &(f64, Pose) {
        &self.samples[self.samples.len() - 1 - k]
    }
}

/// Estimates the operator's residual twist at time `now`: finite differences
/// over the last `window_ticks` VR ticks, EMA-smoothed, then re-expressed in
/// the robot base frame through the fixed calibration rotation.
///
/// Angular rate comes from the log map of the relative rotation (body frame
/// at the older sample), rotated into the tracking world frame before
/// smoothing so constant-axis motion is recovered exactly.
///
/// If the newest sample is staler than `dropout_ticks`, the residual is
/// forced to zero (the filters keep decaying on zero samples).
pub fn estimate_residual_twist(
    window: &VrPoseWindow,
    cfg: &ArmShareConfig,
    base_from_device: &Rotation,
    ema_linear: &mut EmaFilter,
    ema_angular: &mut EmaFilter,
    now: f64,
) -> Result<Twist, ArmShareError> {
    let needed = cfg.window_ticks + 1;
    if window.len() < needed {
        return Err(ArmShareError::NotReady {
            got: window.len(),
            needed,
        });
    }
    let (t_new, pose_new) = window.nth_back(0);
    if now - t_new > cfg.dropout_ticks * cfg.tick_period {
        ema_step(ema_linear, &Vector3::zeros());
        ema_step(ema_angular, &Vector3::zeros());
        return Ok(Twist::zero());
    }
    let (t_old, pose_old) = window.nth_back(cfg.window_ticks);
    let dt = t_new - t_old;

    let lin_raw = (pose_new.position - pose_old.position) / dt;
    let rel = pose_old.rotation.inverse().compose(&pose_new.rotation);
    let ang_body = so3_log(&rel)? / dt;
    let ang_world = pose_old.rotation.rotate(&ang_body);

    let lin = ema_step(ema_linear, &lin_raw);
    let ang = ema_step(ema_angular, &ang_world);
    Ok(Twist::new(
        base_from_device.rotate(&lin),
        base_from_device.rotate(&ang),
    ))
}

/// Composes a residual twist onto the live policy target: translation added
/// in the base frame, rotation post-multiplied as a body-frame increment.
/// A zero residual returns the policy pose bit-exactly, so zero-authority
/// fusion is the identity on policy commands.
pub fn compose_target(policy_pose: &Pose, residual: &Twist, cfg: &ArmShareConfig) -> Pose {
    let dp = cfg.gain_linear * residual.linear * cfg.control_period;
    let rot_inc = cfg.gain_angular * residual.angular * cfg.control_period;
    let rotation = if rot_inc == Vector3::zeros() {
        policy_pose.rotation
    } else {
        policy_pose.rotation.compose(&so3_exp(&rot_inc))
    };
    Pose {
        position: policy_pose.position + dp,
        rotation,
    }
}

/// Offset state for [`ResidualMode::Integrated`]: residual increments
/// accumulate in tangent coordinates and decay every step, so the offset
/// bleeds away once the operator stops.
#[derive(Debug, Clone, Default)]
pub struct OffsetAccumulator {
    pub position: Vector3<f64>,
    pub rotation_vec: Vector3<f64>,
}

impl OffsetAccumulator {
    pub fn new() -> OffsetAccumulator {
        OffsetAccumulator::default()
    }

    pub fn reset(&mut self) {
        *self = OffsetAccumulator::default();
    }

    pub fn step(&mut self, residual: &Twist, cfg: &ArmShareConfig) {
        let keep = 1.0 - cfg.offset_decay;
        self.position =
            keep * self.position + cfg.gain_linear * residual.linear * cfg.control_period;
        self.rotation_vec =
            keep * self.rotation_vec + cfg.gain_angular * residual.angular * cfg.control_period;
    }

    pub fn compose(&self, policy_pose: &Pose) -> Pose {
        Pose {
            position: policy_pose.position + self.position,
            rotation: policy_pose.rotation.compose(&so3_exp(&self.rotation_vec)),
        }
    }
}

/// An arm command: the (possibly residual-composed) target pose, the twist
/// the tracker commanded toward it, and the policy's feedforward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmCommand {
    pub target: Pose,
    pub commanded: Twist,
    pub feedforward: Twist,
}

impl ArmCommand {
    pub fn hold(pose: Pose) -> ArmCommand {
        ArmCommand {
            target: pose,
            commanded: Twist::zero(),
            feedforward: Twist::zero(),
        }
    }
}

/// Task-space PD tracker: proportional on pose error (rotation error through
/// the log map, re-expressed in the base frame), derivative on the current
/// velocity, plus feedforward.
pub fn pd_track(
    current: &Pose,
    current_vel: &Twist,
    target: &Pose,
    feedforward: &Twist,
    cfg: &ArmShareConfig,
) -> Result<Twist, SpatialError> {
    let rot_err_body = so3_log(&current.rotation.inverse().compose(&target.rotation))?;
    let rot_err_base = current.rotation.rotate(&rot_err_body);
    Ok(Twist::new(
        cfg.kp_pos * (target.position - current.position) - cfg.kd_pos * current_vel.linear
            + feedforward.linear,
        cfg.kp_rot * rot_err_base - cfg.kd_rot * current_vel.angular + feedforward.angular,
    ))
}

/// Advances a pose kinematically under a base-frame twist for `dt` seconds.
pub fn integrate_twist(pose: &Pose, twist: &Twist, dt: f64) -> Pose {
    Pose {
        position: pose.position + twist.linear * dt,
        rotation: so3_exp(&(twist.angular * dt)).compose(&pose.rotation),
    }
}

/// One line of the VR wrist stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VrStreamRecord {
    pub timestamp: f64,
    pub position: [f64; 3],
    pub quaternion: [f64; 4],
}

impl VrStreamRecord {
    pub fn pose(&self) -> Pose {
        Pose::new(
            Vector3::from(self.position),
            Rotation::from_quaternion_wxyz(self.quaternion),
        )
    }

    pub fn from_pose(timestamp: f64, pose: &Pose) -> VrStreamRecord {
        VrStreamRecord {
            timestamp,
            position: pose.position.into(),
            quaternion: pose.rotation.quaternion_wxyz(),
        }
    }
}

pub fn read_vr_stream(reader: impl BufRead) -> Result<Vec<VrStreamRecord>, ArmShareError> {
    let mut out: Vec<VrStreamRecord> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: VrStreamRecord =
            serde_json::from_str(&line).map_err(|source| ArmShareError::Record {
                line: i + 1,
                source,
            })?;
        if let Some(prev) = out.last() {
            if rec.timestamp <= prev.timestamp {
                return Err(ArmShareError::NonMonotone);
            }
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_vr_stream(
    mut writer: impl Write,
    records: &[VrStreamRecord],
) -> Result<(), ArmShareError> {
    for r in records {
        serde_json::to_writer(&mut writer, r).map_err(|e| ArmShareError::Io(e.into()))?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
