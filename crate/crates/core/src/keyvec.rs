//! Hand key vectors: wrist-to-fingertip vectors for global finger shape and
//! thumb-to-fingertip opposition vectors for pinch state, plus the mapping of
//! human samples into the robot wrist frame and the relative deltas tracked
//! by the retargeter.

use std::io::{BufRead, Write};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::hand::{HandModel, JointConfig, ModelError};
use crate::spatial::{Pose, Rotation};

#[derive(Debug, thiserror::Error)]
pub enum KeyVecError {
    #[error("finger index {0} is the thumb; opposition is undefined")]
    ThumbIndex(usize),
    #[error("finger index {got} out of range ({count} chains)")]
    BadFinger { got: usize, count: usize },
    #[error("sample has {got} fingertips, expected {expected}")]
    TipCount { got: usize, expected: usize },
    #[error("scale calibration degenerate: human finger {0} has near-zero length")]
    DegenerateScale(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("stream i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("stream line {line}: {source}")]
    Record {
        line: usize,
        source: serde_json::Error,
    },
    #[error("stream timestamps must be strictly increasing (line {0})")]
    NonMonotone(usize),
}

/// Wrist-to-fingertip vectors (thumb first) and thumb-tip-to-fingertip
/// opposition vectors, all in the wrist frame.
///
/// `opposition[j - 1] == wrist_to_tip[j] - wrist_to_tip[0]` holds exactly for
/// every produced value; constructors enforce it.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyVectors {
    wrist_to_tip: Vec<Vector3<f64>>,
    opposition: Vec<Vector3<f64>>,
}

/// Per-step changes of key vectors since the intervention anchor; same shape
/// as the vectors themselves.
pub type RelativeDeltas = KeyVectors;

impl KeyVectors {
    /// Builds key vectors from wrist-to-tip vectors; opposition is derived.
    pub fn from_wrist_vectors(wrist_to_tip: Vec<Vector3<f64>>) -> KeyVectors {
        let opposition = wrist_to_tip[1..]
            .iter()
            .map(|v| v - wrist_to_tip[0])
            .collect();
        KeyVectors {
            wrist_to_tip,
            opposition,
        }
    }

    pub fn finger_count(&self) -> usize {
        self.wrist_to_tip.len()
    }

    pub fn wrist_to_tip(&self, finger: usize) -> &Vector3<f64> {
        &self.wrist_to_tip[finger]
    }

    pub fn wrist_to_tips(&self) -> &[Vector3<f64>] {
        &self.wrist_to_tip
    }

    /// Opposition vector of a non-thumb finger (thumb tip to finger tip).
    pub fn opposition(&self, finger: usize) -> Result<&Vector3<f64>, KeyVecError> {
        if finger == 0 {
            return Err(KeyVecError::ThumbIndex(finger));
        }
        self.opposition
            .get(finger - 1)
            .ok_or(KeyVecError::BadFinger {
                got: finger,
                count: self.wrist_to_tip.len(),
            })
    }

    pub fn oppositions(&self) -> &[Vector3<f64>] {
        &self.opposition
    }
}

/// Human thumb-to-finger distance `|| u_finger ||` in meters.
pub fn thumb_distance(kv: &KeyVectors, finger: usize) -> Result<f64, KeyVecError> {
    Ok(kv.opposition(finger)?.norm())
}

/// Robot key vectors at a configuration: wrist-to-tip straight from forward
/// kinematics, opposition per the defining identity.
pub fn robot_keyvectors(model: &HandModel, q: &JointConfig) -> Result<KeyVectors, ModelError> {
    Ok(KeyVectors::from_wrist_vectors(model.fk_fingertips(q)?))
}

/// One motion-capture sample of the operator's hand, world frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanHandSample {
    pub timestamp: f64,
    pub wrist: Pose,
    pub tips: Vec<Vector3Repr>,
}

/// Plain-array 3-vector used in stream records.
pub type Vector3Repr = [f64; 3];

impl HumanHandSample {
    pub fn new(timestamp: f64, wrist: Pose, tips: Vec<Vector3<f64>>) -> Self {
        HumanHandSample {
            timestamp,
            wrist,
            tips: tips.into_iter().map(Into::into).collect(),
        }
    }

    pub fn tip(&self, i: usize) -> Vector3<f64> {
        Vector3::from(self.tips[i])
    }
}

/// Session calibration mapping human key vectors into the robot wrist frame:
/// a fixed human-wrist-to-robot-wrist rotation plus per-finger scales.
#[derive(Debug, Clone)]
pub struct NormalizationMap {
    pub frame: Rotation,
    pub scales: Vec<f64>,
}

impl NormalizationMap {
    /// Identity map (unit scales); useful when the human stream is already
    /// expressed in robot-hand terms, as in the synthetic harness.
    pub fn identity(fingers: usize) -> NormalizationMap {
        NormalizationMap {
            frame: Rotation::identity(),
            scales: vec![1.0; fingers],
        }
    }

    /// Computes per-finger scales from one calibration sample:
    /// robot wrist-to-tip length at a reference open pose divided by the
    /// human wrist-to-tip length in the sample.
    pub fn calibrate(
        model: &HandModel,
        reference_open: &JointConfig,
        sample: &HumanHandSample,
        frame: Rotation,
    ) -> Result<NormalizationMap, KeyVecError> {
        let robot = robot_keyvectors(model, reference_open)?;
        if sample.tips.len() != robot.finger_count() {
            return Err(KeyVecError::TipCount {
                got: sample.tips.len(),
                expected: robot.finger_count(),
            });
        }
        let inv = sample.wrist.rotation.inverse();
        let mut scales = Vec::with_capacity(robot.finger_count());
        for i in 0..robot.finger_count() {
            let human_len = inv.rotate(&(sample.tip(i) - sample.wrist.position)).norm();
            if human_len < 1e-6 {
                return Err(KeyVecError::DegenerateScale(i));
            }
            scales.push(robot.wrist_to_tip(i).norm() / human_len);
        }
        Ok(NormalizationMap { frame, scales })
    }
}

/// Maps a human sample into robot-wrist key vectors:
/// `v_i = s_i * R_map * (R_wrist^-1 (tip_i - p_wrist))`.
///
/// Working in the human wrist frame first makes the result invariant under
/// any rigid motion of the operator's wrist, not just translation.
pub fn normalize_human(
    sample: &HumanHandSample,
    map: &NormalizationMap,
) -> Result<KeyVectors, KeyVecError> {
    if sample.tips.len() != map.scales.len() {
        return Err(KeyVecError::TipCount {
            got: sample.tips.len(),
            expected: map.scales.len(),
        });
    }
    let inv = sample.wrist.rotation.inverse();
    let wrist_to_tip = (0..sample.tips.len())
        .map(|i| {
            let local = inv.rotate(&(sample.tip(i) - sample.wrist.position));
            map.scales[i] * map.frame.rotate(&local)
        })
        .collect();
    Ok(KeyVectors::from_wrist_vectors(wrist_to_tip))
}

/// Component-wise `current - anchor` for both vector families.
/// `relative_deltas(x, x)` is exactly zero; this is what makes anchoring
/// jump-free at the intervention moment.
pub fn relative_deltas(current: &KeyVectors, anchor: &KeyVectors) -> RelativeDeltas {
    debug_assert_eq!(current.finger_count(), anchor.finger_count());
    KeyVectors {
        wrist_to_tip: current
            .wrist_to_tip
            .iter()
            .zip(&anchor.wrist_to_tip)
            .map(|(c, a)| c - a)
            .collect(),
        opposition: current
            .opposition
            .iter()
            .zip(&anchor.opposition)
            .map(|(c, a)| c - a)
            .collect(),
    }
}

/// Reads a human stream: one JSON record per line, strictly increasing
/// timestamps.
pub fn read_human_stream(reader: impl BufRead) -> Result<Vec<HumanHandSample>, KeyVecError> {
    let mut out: Vec<HumanHandSample> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: HumanHandSample =
            serde_json::from_str(&line).map_err(|source| KeyVecError::Record {
                line: i + 1,
                source,
            })?;
        if let Some(prev) = out.last() {
            if sample.timestamp <= prev.timestamp {
                return Err(KeyVecError::NonMonotone(i + 1));
            }
        }
        out.push(sample);
    }
    Ok(out)
}

pub fn write_human_stream(
    mut writer: impl Write,
    samples: &[HumanHandSample],
) -> Result<(), KeyVecError> {
    for s in samples {
        serde_json::to_writer(&mut writer, s).map_err(|e| KeyVecError::Io(e.into()))?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
