//! Intervention machinery: the mode state machine with its anchored state,
//! hand/arm command fusion under authority weights, boundary-jump
//! measurement, and the append-only correction log of executed rollouts.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::armshare::{compose_target, ArmCommand, ArmShareConfig};
use crate::hand::{HandModel, JointConfig, ModelError};
use crate::keyvec::{HumanHandSample, KeyVectors};
use crate::retarget::{AnchorState, RetargetError};
use crate::spatial::{EmaFilter, Twist};

#[derive(Debug, thiserror::Error)]
pub enum InterveneError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Retarget(#[from] RetargetError),
    #[error("toggle at t = {0} s lies outside the logged span")]
    ToggleOutsideLog(f64),
    #[error("records must be appended in timestamp order")]
    OutOfOrder,
    #[error("log i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("log line {line}: {source}")]
    Record {
        line: usize,
        source: serde_json::Error,
    },
    #[error("missing or invalid log header: {0}")]
    BadHeader(String),
}

/// Who is in charge of the executed command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionMode {
    Autonomous,
    FullTakeover,
    Copilot,
}

impl InterventionMode {
    pub fn is_intervention(&self) -> bool {
        !matches!(self, InterventionMode::Autonomous)
    }
}

impl std::fmt::Display for InterventionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InterventionMode::Autonomous => write!(f, "autonomous"),
            InterventionMode::FullTakeover => write!(f, "full_takeover"),
            InterventionMode::Copilot => write!(f, "copilot"),
        }
    }
}

/// Human authority weights for the arm and hand channels, both in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Authority {
    pub arm: f64,
    pub hand: f64,
}

impl Default for Authority {
    /// Copilot default: the policy remains primary.
    fn default() -> Self {
        Authority { arm: 0.3, hand: 0.3 }
    }
}

impl InterventionMode {
    /// Authority carried by each mode: autonomous forces zero, full takeover
    /// forces one, copilot uses the configured weights.
    pub fn authority(&self, copilot: &Authority) -> Authority {
        match self {
            InterventionMode::Autonomous => Authority { arm: 0.0, hand: 0.0 },
            InterventionMode::FullTakeover => Authority { arm: 1.0, hand: 1.0 },
            InterventionMode::Copilot => *copilot,
        }
    }
}

/// Outcome of a mode request against the current state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToggleOutcome {
    Engaged,
    /// Engage requested while already engaged: idempotent no-op.
    AlreadyEngaged,
    /// Mode switched mid-intervention; the anchor is kept.
    ModeChanged,
    Disengaged,
    AlreadyIdle,
}

/// Intervention state machine. Engaging captures the anchor (robot config,
/// robot key vectors, normalized human key vectors) and resets the arm EMA
/// filters; disengaging clears the anchor and lets residuals decay naturally.
#[derive(Debug)]
pub struct InterventionController {
    mode: InterventionMode,
    anchor: Option<AnchorState>,
}

impl Default for InterventionController {
    fn default() -> Self {
        Self::new()
    }
}

impl InterventionController {
    pub fn new() -> InterventionController {
        InterventionController {
            mode: InterventionMode::Autonomous,
            anchor: None,
        }
    }

    pub fn mode(&self) -> InterventionMode {
        self.mode
    }

    pub fn anchor(&self) -> Option<&AnchorState> {
        self.anchor.as_ref()
    }

    pub fn toggle(
        &mut self,
        model: &HandModel,
        requested: InterventionMode,
        q_now: &JointConfig,
        human_now: &KeyVectors,
        ema_linear: &mut EmaFilter,
        ema_angular: &mut EmaFilter,
    ) -> Result<ToggleOutcome, InterveneError> {
        let outcome = match (self.mode.is_intervention(), requested.is_intervention()) {
            (false, true) => {
                self.anchor = Some(AnchorState::capture(model, q_now, human_now)?);
                ema_linear.reset();
                ema_angular.reset();
                self.mode = requested;
                ToggleOutcome::Engaged
            }
            (true, true) if requested == self.mode => {
                log::warn!("intervention already engaged in mode {requested}; ignoring");
                ToggleOutcome::AlreadyEngaged
            }
            (true, true) => {
                self.mode = requested;
                ToggleOutcome::ModeChanged
            }
            (true, false) => {
                self.anchor = None;
                self.mode = InterventionMode::Autonomous;
                ToggleOutcome::Disengaged
            }
            (false, false) => ToggleOutcome::AlreadyIdle,
        };
        Ok(outcome)
    }
}

/// Joint-space hand fusion: `(1 - beta) * policy + beta * human` per joint,
/// then limit projection. Exact at both endpoints before projection.
pub fn fuse_hand(
    model: &HandModel,
    policy: &JointConfig,
    human: &JointConfig,
    beta_hand: f64,
) -> Result<JointConfig, ModelError> {
    model.check_dims(policy)?;
    model.check_dims(human)?;
    let n = policy.len();
    let mut out = JointConfig::zeros(n);
    for i in 0..n {
        out.0[i] = (1.0 - beta_hand) * policy.0[i] + beta_hand * human.0[i];
    }
    Ok(model.project_limits(&out))
}

/// Arm fusion: the residual twist scaled by the arm authority composes onto
/// the live policy target; feedforward is preserved.
pub fn fuse_arm(
    policy: &ArmCommand,
    residual: &Twist,
    beta_arm: f64,
    cfg: &ArmShareConfig,
) -> ArmCommand {
    ArmCommand {
        target: compose_target(&policy.target, &residual.scale(beta_arm), cfg),
        commanded: policy.commanded,
        feedforward: policy.feedforward,
    }
}

/// One executed command with its context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedCommand {
    pub timestamp: f64,
    pub mode: InterventionMode,
    pub hand: JointConfig,
    pub arm: ArmCommand,
}

/// The policy's own command at the same step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCommand {
    pub hand: JointConfig,
    pub arm: ArmCommand,
}

/// One correction-log line: everything needed to audit or replay the step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionRecord {
    pub step: u64,
    pub timestamp: f64,
    /// Id of the observation snapshot this step saw (scenario fixture key).
    pub observation: String,
    /// True exactly when the mode is not autonomous.
    pub intervention: bool,
    pub executed: FusedCommand,
    pub policy: PolicyCommand,
    pub human: HumanHandSample,
}

impl CorrectionRecord {
    pub fn new(
        step: u64,
        observation: String,
        executed: FusedCommand,
        policy: PolicyCommand,
        human: HumanHandSample,
    ) -> CorrectionRecord {
        CorrectionRecord {
            step,
            timestamp: executed.timestamp,
            observation,
            intervention: executed.mode.is_intervention(),
            executed,
            policy,
            human,
        }
    }
}

pub const LOG_SCHEMA: &str = "correction-log";
pub const LOG_VERSION: u32 = 1;

/// Versioned log header; carries everything needed to replay the rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub schema: String,
    pub version: u32,
    pub model: String,
    pub method: String,
    /// Scenario spec as self-describing JSON (schema owned by the harness).
    pub scenario: serde_json::Value,
    /// Full harness config as JSON, for bit-exact replay.
    pub config: serde_json::Value,
    #[serde(default)]
    pub aborted: bool,
}

impl LogHeader {
    pub fn new(
        model: String,
        method: String,
        scenario: serde_json::Value,
        config: serde_json::Value,
    ) -> LogHeader {
        LogHeader {
            schema: LOG_SCHEMA.to_string(),
            version: LOG_VERSION,
            model,
            method,
            scenario,
            config,
            aborted: false,
        }
    }
}

/// Streaming log writer: header first, then one record per line, flushed per
/// append so failures surface immediately at the offending step.
pub struct CorrectionLogWriter<W: Write> {
    inner: W,
    last_timestamp: Option<f64>,
}

impl<W: Write> CorrectionLogWriter<W> {
    pub fn create(mut inner: W, header: &LogHeader) -> Result<Self, InterveneError> {
        serde_json::to_writer(&mut inner, header).map_err(io_err)?;
        inner.write_all(b"\n")?;
        Ok(CorrectionLogWriter {
            inner,
            last_timestamp: None,
        })
    }

    /// Appends one record durably, enforcing timestamp order.
    pub fn record_step(&mut self, record: &CorrectionRecord) -> Result<(), InterveneError> {
        if let Some(last) = self.last_timestamp {
            if record.timestamp < last {
                return Err(InterveneError::OutOfOrder);
            }
        }
        serde_json::to_writer(&mut self.inner, record).map_err(io_err)?;
        self.inner.write_all(b"\n")?;
        self.inner.flush()?;
        self.last_timestamp = Some(record.timestamp);
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

fn io_err(e: serde_json::Error) -> InterveneError {
    InterveneError::Io(e.into())
}

/// A fully parsed correction log.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionLog {
    pub header: LogHeader,
    pub records: Vec<CorrectionRecord>,
}

impl CorrectionLog {
    pub fn read(reader: impl BufRead) -> Result<CorrectionLog, InterveneError> {
        let mut lines = reader.lines().enumerate();
        let header: LogHeader = loop {
            let Some((i, line)) = lines.next() else {
                return Err(InterveneError::BadHeader("empty file".into()));
            };
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            break serde_json::from_str(&line)
                .map_err(|source| InterveneError::Record { line: i + 1, source })?;
        };
        if header.schema != LOG_SCHEMA {
            return Err(InterveneError::BadHeader(format!(
                "unexpected schema {:?}",
                header.schema
            )));
        }
        if header.version != LOG_VERSION {
            return Err(InterveneError::BadHeader(format!(
                "unsupported version {}",
                header.version
            )));
        }
        let mut records = Vec::new();
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: CorrectionRecord = serde_json::from_str(&line)
                .map_err(|source| InterveneError::Record { line: i + 1, source })?;
            if let Some(prev) = records.last() {
                let prev: &CorrectionRecord = prev;
                if rec.timestamp < prev.timestamp {
                    return Err(InterveneError::OutOfOrder);
                }
            }
            records.push(rec);
        }
        Ok(CorrectionLog { header, records })
    }

    pub fn write(&self, inner: impl Write) -> Result<(), InterveneError> {
        let mut w = CorrectionLogWriter::create(inner, &self.header)?;
        for r in &self.records {
            w.record_step(r)?;
        }
        Ok(())
    }

    /// The correction dataset: only steps executed under intervention.
    pub fn interventions(&self) -> impl Iterator<Item = &CorrectionRecord> {
        self.records.iter().filter(|r| r.intervention)
    }

    /// A copy filtered to intervention steps (the exported dataset).
    pub fn export_interventions(&self) -> CorrectionLog {
        CorrectionLog {
            header: self.header.clone(),
            records: self.interventions().cloned().collect(),
        }
    }

    pub fn commands(&self) -> Vec<FusedCommand> {
        self.records.iter().map(|r| r.executed.clone()).collect()
    }
}

/// Per-intervention boundary jumps and their aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscontinuityReport {
    /// One entry per toggle: (toggle time, joint-space L2 jump in radians).
    pub jumps: Vec<ToggleJump>,
    pub mean: f64,
    /// 95% confidence half-width around the mean (Student t below 30
    /// samples); absent with fewer than two jumps.
    pub ci95_half_width: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToggleJump {
    pub toggle_time: f64,
    pub jump: f64,
}

/// Two-sided 95% Student-t critical values for 1..=30 degrees of freedom.
const T_CRIT_975: [f64; 30] = [
    12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179, 2.160,
    2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064, 2.060, 2.056,
    2.052, 2.048, 2.045, 2.042,
];

const Z_975: f64 = 1.959963984540054;

/// Measures the hand-command jump across each toggle boundary: the L2
/// difference between the executed commands immediately after and before the
/// toggle time.
pub fn measure_discontinuity(
    commands: &[FusedCommand],
    toggle_times: &[f64],
) -> Result<DiscontinuityReport, InterveneError> {
    let mut jumps = Vec::with_capacity(toggle_times.len());
    for &t0 in toggle_times {
        let after = commands
            .iter()
            .position(|c| c.timestamp >= t0)
            .ok_or(InterveneError::ToggleOutsideLog(t0))?;
        if after == 0 {
            return Err(InterveneError::ToggleOutsideLog(t0));
        }
        let jump = (&commands[after].hand.0 - &commands[after - 1].hand.0).norm();
        jumps.push(ToggleJump {
            toggle_time: t0,
            jump,
        });
    }
    let n = jumps.len();
    let mean = if n == 0 {
        0.0
    } else {
        jumps.iter().map(|j| j.jump).sum::<f64>() / n as f64
    };
    let ci95_half_width = if n < 2 {
        None
    } else {
        let var = jumps
            .iter()
            .map(|j| (j.jump - mean).powi(2))
            .sum::<f64>()
            / (n - 1) as f64;
        let crit = if n < 30 {
            T_CRIT_975[n - 2] // df = n - 1
        } else {
            Z_975
        };
        Some(crit * var.sqrt() / (n as f64).sqrt())
    };
    Ok(DiscontinuityReport {
        jumps,
        mean,
        ci95_half_width,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keyvec::robot_keyvectors;
    use crate::spatial::Pose;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;

    fn dummy_arm() -> ArmCommand {
        ArmCommand::hold(Pose::identity())
    }

    fn cmd(t: f64, mode: InterventionMode, hand: JointConfig) -> FusedCommand {
        FusedCommand {
            timestamp: t,
            mode,
            hand,
            arm: dummy_arm(),
        }
    }

    #[test]
    fn authority_invariants() {
        let copilot = Authority { arm: 0.4, hand: 0.25 };
        let a = InterventionMode::Autonomous.authority(&copilot);
        assert_eq!((a.arm, a.hand), (0.0, 0.0));
        let f = InterventionMode::FullTakeover.authority(&copilot);
        assert_eq!((f.arm, f.hand), (1.0, 1.0));
        let c = InterventionMode::Copilot.authority(&copilot);
        assert_eq!((c.arm, c.hand), (0.4, 0.25));
    }

    #[test]
    fn fuse_hand_endpoints_are_exact() {
        let model = HandModel::default_21dof();
        let mut policy = JointConfig::zeros(model.dof());
        let mut human = JointConfig::zeros(model.dof());
        for i in 0..model.dof() {
            policy.0[i] = 0.01 * i as f64;
            human.0[i] = 0.2 - 0.003 * i as f64;
        }
        let full = fuse_hand(&model, &policy, &human, 1.0).unwrap();
        assert_eq!(full.0, model.project_limits(&human).0);
        let auto = fuse_hand(&model, &policy, &human, 0.0).unwrap();
        assert_eq!(auto.0, model.project_limits(&policy).0);

        let mut p0 = JointConfig::zeros(model.dof());
        let mut h = JointConfig::zeros(model.dof());
        h.0[4] = 0.4;
        p0.0[4] = 0.0;
        let half = fuse_hand(&model, &p0, &h, 0.5).unwrap();
        assert_relative_eq!(half.0[4], 0.2, epsilon = 1e-15);
    }

    #[test]
    fn fuse_arm_scales_linearly_in_authority() {
        let cfg = ArmShareConfig::default();
        let policy = ArmCommand::hold(Pose::new(
            Vector3::new(0.2, 0.0, 0.1),
            crate::spatial::Rotation::identity(),
        ));
        let residual = Twist::new(Vector3::new(0.1, -0.05, 0.0), Vector3::zeros());
        let zero = fuse_arm(&policy, &residual, 0.0, &cfg);
        assert_eq!(zero, policy, "zero authority must be the exact identity");

        let one = fuse_arm(&policy, &residual, 1.0, &cfg);
        let expect = compose_target(&policy.target, &residual, &cfg);
        assert_eq!(one.target.position, expect.position);

        // Position offset scales linearly in the authority weight.
        let b = 0.37;
        let mid = fuse_arm(&policy, &residual, b, &cfg);
        let off_mid = mid.target.position - policy.target.position;
        let off_one = one.target.position - policy.target.position;
        assert_relative_eq!(off_mid, off_one * b, epsilon = 1e-15);
    }

    #[test]
    fn toggle_engages_anchors_and_is_idempotent() {
        let model = HandModel::default_21dof();
        let q = JointConfig::zeros(model.dof());
        let human = robot_keyvectors(&model, &q).unwrap();
        let mut ctl = InterventionController::new();
        let mut el = EmaFilter::with_state(0.3, Vector3::new(1.0, 0.0, 0.0));
        let mut ea = EmaFilter::new(0.3);

        let out = ctl
            .toggle(&model, InterventionMode::FullTakeover, &q, &human, &mut el, &mut ea)
            .unwrap();
        assert_eq!(out, ToggleOutcome::Engaged);
        assert!(ctl.anchor().is_some());
        // Engaging reset the filters.
        assert!(!el.is_initialized());
        assert_eq!(el.state(), Vector3::zeros());
        // The anchor holds the engagement configuration.
        assert_eq!(ctl.anchor().unwrap().q_anchor.0, q.0);

        let out = ctl
            .toggle(&model, InterventionMode::FullTakeover, &q, &human, &mut el, &mut ea)
            .unwrap();
        assert_eq!(out, ToggleOutcome::AlreadyEngaged);

        let out = ctl
            .toggle(&model, InterventionMode::Copilot, &q, &human, &mut el, &mut ea)
            .unwrap();
        assert_eq!(out, ToggleOutcome::ModeChanged);

        let out = ctl
            .toggle(&model, InterventionMode::Autonomous, &q, &human, &mut el, &mut ea)
            .unwrap();
        assert_eq!(out, ToggleOutcome::Disengaged);
        assert!(ctl.anchor().is_none());

        let out = ctl
            .toggle(&model, InterventionMode::Autonomous, &q, &human, &mut el, &mut ea)
            .unwrap();
        assert_eq!(out, ToggleOutcome::AlreadyIdle);
    }

    #[test]
    fn measure_identical_commands_is_zero() {
        let q = JointConfig::from_vec(vec![0.1, 0.2]);
        let commands = vec![
            cmd(0.00, InterventionMode::Autonomous, q.clone()),
            cmd(0.02, InterventionMode::FullTakeover, q.clone()),
            cmd(0.04, InterventionMode::FullTakeover, q.clone()),
        ];
        let report = measure_discontinuity(&commands, &[0.02]).unwrap();
        assert_eq!(report.jumps.len(), 1);
        assert_eq!(report.jumps[0].jump, 0.0);
        assert_eq!(report.mean, 0.0);
        assert!(report.ci95_half_width.is_none());
    }

    #[test]
    fn measure_uses_adjacent_boundary_commands() {
        let mk = |v: f64| JointConfig::from_vec(vec![v, 0.0]);
        let commands = vec![
            cmd(0.00, InterventionMode::Autonomous, mk(0.0)),
            cmd(0.02, InterventionMode::Autonomous, mk(0.0)),
            cmd(0.04, InterventionMode::FullTakeover, mk(0.3)),
            cmd(0.06, InterventionMode::FullTakeover, mk(0.3)),
        ];
        let report = measure_discontinuity(&commands, &[0.04]).unwrap();
        assert_relative_eq!(report.jumps[0].jump, 0.3, epsilon = 1e-15);
    }

    #[test]
    fn measure_ci_matches_t_table_by_hand() {
        // Jumps 1, 2, 3: mean 2, sd 1, half-width t(0.975, df=2) / sqrt(3).
        let mk = |v: f64| JointConfig::from_vec(vec![v]);
        let commands = vec![
            cmd(0.0, InterventionMode::Autonomous, mk(0.0)),
            cmd(1.0, InterventionMode::FullTakeover, mk(1.0)),
            cmd(2.0, InterventionMode::Autonomous, mk(1.0)),
            cmd(3.0, InterventionMode::FullTakeover, mk(3.0)),
            cmd(4.0, InterventionMode::Autonomous, mk(3.0)),
            cmd(5.0, InterventionMode::FullTakeover, mk(6.0)),
        ];
        let report = measure_discontinuity(&commands, &[1.0, 3.0, 5.0]).unwrap();
        assert_relative_eq!(report.mean, 2.0, epsilon = 1e-12);
        let expect = 4.303 * 1.0 / 3f64.sqrt();
        assert_relative_eq!(report.ci95_half_width.unwrap(), expect, epsilon = 1e-12);
    }

    #[test]
    fn toggle_outside_log_is_an_error() {
        let commands = vec![cmd(0.0, InterventionMode::Autonomous, JointConfig::zeros(1))];
        assert!(matches!(
            measure_discontinuity(&commands, &[5.0]),
            Err(InterveneError::ToggleOutsideLog(_))
        ));
        // A toggle before the first record has no "before" side either.
        assert!(matches!(
            measure_discontinuity(&commands, &[0.0]),
            Err(InterveneError::ToggleOutsideLog(_))
        ));
    }

    fn sample_record(step: u64, t: f64, mode: InterventionMode) -> CorrectionRecord {
        let hand = JointConfig::from_vec(vec![0.1 * step as f64, 0.2]);
        CorrectionRecord::new(
            step,
            format!("obs:{step:06}"),
            FusedCommand {
                timestamp: t,
                mode,
                hand: hand.clone(),
                arm: dummy_arm(),
            },
            PolicyCommand {
                hand,
                arm: dummy_arm(),
            },
            HumanHandSample::new(t, Pose::identity(), vec![Vector3::new(0.07, 0.0, 0.0)]),
        )
    }

    fn sample_header() -> LogHeader {
        LogHeader::new(
            "toy-finger".into(),
            "relative".into(),
            serde_json::json!({"seed": 7}),
            serde_json::json!({}),
        )
    }

    #[test]
    fn log_write_read_roundtrip() {
        let mut buf = Vec::new();
        let mut w = CorrectionLogWriter::create(&mut buf, &sample_header()).unwrap();
        for k in 0..5 {
            let mode = if k == 2 || k == 3 {
                InterventionMode::FullTakeover
            } else {
                InterventionMode::Autonomous
            };
            w.record_step(&sample_record(k, 0.02 * k as f64, mode)).unwrap();
        }
        let log = CorrectionLog::read(buf.as_slice()).unwrap();
        assert_eq!(log.header, sample_header());
        assert_eq!(log.records.len(), 5);
        assert!(log.records[2].intervention);
        assert!(!log.records[0].intervention);

        let mut buf2 = Vec::new();
        log.write(&mut buf2).unwrap();
        assert_eq!(buf, buf2, "rewrite must be byte-identical");
    }

    #[test]
    fn flag_transitions_once_per_span() {
        let mut buf = Vec::new();
        let mut w = CorrectionLogWriter::create(&mut buf, &sample_header()).unwrap();
        for k in 0..1000u64 {
            let mode = if (300..600).contains(&k) {
                InterventionMode::Copilot
            } else {
                InterventionMode::Autonomous
            };
            w.record_step(&sample_record(k, 0.02 * k as f64, mode)).unwrap();
        }
        let log = CorrectionLog::read(buf.as_slice()).unwrap();
        let transitions = log
            .records
            .windows(2)
            .filter(|w| w[0].intervention != w[1].intervention)
            .count();
        assert_eq!(transitions, 2);
    }

    #[test]
    fn export_filters_to_intervention_steps() {
        let mut buf = Vec::new();
        let mut w = CorrectionLogWriter::create(&mut buf, &sample_header()).unwrap();
        for k in 0..10u64 {
            let mode = if k % 3 == 0 {
                InterventionMode::FullTakeover
            } else {
                InterventionMode::Autonomous
            };
            w.record_step(&sample_record(k, 0.02 * k as f64, mode)).unwrap();
        }
        let log = CorrectionLog::read(buf.as_slice()).unwrap();
        let exported = log.export_interventions();
        assert_eq!(exported.records.len(), 4);
        assert!(exported.records.iter().all(|r| r.intervention));
    }

    #[test]
    fn out_of_order_appends_are_rejected() {
        let mut buf = Vec::new();
        let mut w = CorrectionLogWriter::create(&mut buf, &sample_header()).unwrap();
        w.record_step(&sample_record(0, 1.0, InterventionMode::Autonomous))
            .unwrap();
        assert!(matches!(
            w.record_step(&sample_record(1, 0.5, InterventionMode::Autonomous)),
            Err(InterveneError::OutOfOrder)
        ));
    }

    #[test]
    fn bad_headers_are_rejected() {
        assert!(matches!(
            CorrectionLog::read(&b""[..]),
            Err(InterveneError::BadHeader(_))
        ));
        let mut h = sample_header();
        h.schema = "something-else".into();
        let mut buf = Vec::new();
        serde_json::to_writer(&mut buf, &h).unwrap();
        buf.push(b'\n');
        assert!(matches!(
            CorrectionLog::read(buf.as_slice()),
            Err(InterveneError::BadHeader(_))
        ));
    }
}
