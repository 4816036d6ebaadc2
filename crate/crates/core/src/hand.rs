//! Kinematic hand description: finger chains with joint limits, forward
//! kinematics for fingertips, fingertip point Jacobians, and sphere-pair
//! proximity distances for the structural-safety term.
//!
//! Models load from a versioned TOML document (`chains[].joints[]` with
//! `axis`/`offset`/`limits`, `chains[].tip_offset`, `spheres[]`, `pairs[]`).
//! Chain 0 is the thumb by convention. Collision geometry is a sphere set:
//! each sphere rides a joint frame (or the fingertip), giving the hinge
//! penalty a closed-form differentiable distance.

use nalgebra::{DMatrix, DVector, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::spatial::{Pose, Rotation};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("failed to read model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse model file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported model schema version {0} (expected 1)")]
    UnsupportedVersion(u32),
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("joint config has {got} entries, model has {expected} DoF")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("chain index {0} out of range")]
    BadChain(usize),
}

/// One revolute joint: rotation axis and parent offset in the parent frame.
#[derive(Debug, Clone)]
pub struct Joint {
    pub axis: Unit<Vector3<f64>>,
    pub offset: Vector3<f64>,
    pub lower: f64,
    pub upper: f64,
}

/// A serial finger chain rooted at the palm frame.
#[derive(Debug, Clone)]
pub struct Chain {
    pub name: String,
    pub joints: Vec<Joint>,
    pub tip_offset: Vector3<f64>,
}

/// A collision sphere riding a joint frame. `joint == joints.len()` places
/// the sphere at the fingertip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionSphere {
    pub chain: usize,
    pub joint: usize,
    pub radius: f64,
}

/// A configured sphere pair from the proximity set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProximityPair {
    pub a: usize,
    pub b: usize,
    pub enabled: bool,
}

/// Immutable kinematic hand description. Shareable across threads; all
/// kinematics functions are pure.
#[derive(Debug, Clone)]
pub struct HandModel {
    pub name: String,
    pub palm: Pose,
    pub chains: Vec<Chain>,
    pub spheres: Vec<CollisionSphere>,
    pub pairs: Vec<ProximityPair>,
    dof_offsets: Vec<usize>,
    dof: usize,
}

/// Joint-angle vector; the hand command.
#[derive(Debug, Clone, PartialEq)]
pub struct JointConfig(pub DVector<f64>);

impl JointConfig {
    pub fn zeros(n: usize) -> Self {
        JointConfig(DVector::zeros(n))
    }

    pub fn from_vec(v: Vec<f64>) -> Self {
        JointConfig(DVector::from_vec(v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.len() == 0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl Serialize for JointConfig {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.0.as_slice().serialize(s)
    }
}

impl<'de> Deserialize<'de> for JointConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(JointConfig(DVector::from_vec(Vec::<f64>::deserialize(d)?)))
    }
}

// ---------------------------------------------------------------------------
// Model file schema (TOML, version 1)
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: u32,
    name: String,
    #[serde(default)]
    palm: Option<PalmFile>,
    chains: Vec<ChainFile>,
    #[serde(default)]
    spheres: Vec<SphereFile>,
    #[serde(default)]
    pairs: Option<Vec<PairFile>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PalmFile {
    position: [f64; 3],
    quaternion: [f64; 4],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainFile {
    name: String,
    tip_offset: [f64; 3],
    joints: Vec<JointFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JointFile {
    axis: [f64; 3],
    offset: [f64; 3],
    limits: [f64; 2],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SphereFile {
    chain: usize,
    joint: usize,
    radius: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PairFile {
    a: usize,
    b: usize,
    #[serde(default = "default_true")]
    enabled: bool,
}

fn default_true() -> bool {
    true
}

const DEFAULT_21DOF_TOML: &str = include_str!("../models/default_21dof.toml");
const TOY_FINGER_TOML: &str = include_str!("../models/toy_finger.toml");

impl HandModel {
    /// The repo's stock 21-DoF five-chain hand (thumb 5 DoF, fingers 4 each).
    pub fn default_21dof() -> HandModel {
        HandModel::from_toml_str(DEFAULT_21DOF_TOML).expect("bundled model must parse")
    }

    /// A planar 2-DoF single-finger model used by the brute-force oracles.
    pub fn toy_finger() -> HandModel {
        HandModel::from_toml_str(TOY_FINGER_TOML).expect("bundled model must parse")
    }

    pub fn load(path: &std::path::Path) -> Result<HandModel, ModelError> {
        HandModel::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn from_toml_str(text: &str) -> Result<HandModel, ModelError> {
        let file: ModelFile = toml::from_str(text)?;
        if file.version != 1 {
            return Err(ModelError::UnsupportedVersion(file.version));
        }
        if file.chains.is_empty() || file.chains.len() > 5 {
            return Err(ModelError::Invalid(format!(
                "expected 1..=5 chains, got {}",
                file.chains.len()
            )));
        }
        let palm = match file.palm {
            Some(p) => Pose::new(
                Vector3::from(p.position),
                Rotation::from_quaternion_wxyz(p.quaternion),
            ),
            None => Pose::identity(),
        };
        let mut chains = Vec::with_capacity(file.chains.len());
        for c in &file.chains {
            if c.joints.is_empty() {
                return Err(ModelError::Invalid(format!("chain {} has no joints", c.name)));
            }
            let mut joints = Vec::with_capacity(c.joints.len());
            for (j, jf) in c.joints.iter().enumerate() {
                let axis = Vector3::from(jf.axis);
                if axis.norm() < 1e-9 {
                    return Err(ModelError::Invalid(format!(
                        "chain {} joint {j} has a zero axis",
                        c.name
                    )));
                }
                let [lo, hi] = jf.limits;
                if lo >= hi || lo.is_nan() || hi.is_nan() {
                    return Err(ModelError::Invalid(format!(
                        "chain {} joint {j} limits [{lo}, {hi}] need lo < hi",
                        c.name
                    )));
                }
                joints.push(Joint {
                    axis: Unit::new_normalize(axis),
                    offset: Vector3::from(jf.offset),
                    lower: lo,
                    upper: hi,
                });
            }
            chains.push(Chain {
                name: c.name.clone(),
                joints,
                tip_offset: Vector3::from(c.tip_offset),
            });
        }
        let mut spheres = Vec::with_capacity(file.spheres.len());
        for (i, s) in file.spheres.iter().enumerate() {
            let chain = chains
                .get(s.chain)
                .ok_or_else(|| ModelError::Invalid(format!("sphere {i}: chain {} out of range", s.chain)))?;
            if s.joint > chain.joints.len() {
                return Err(ModelError::Invalid(format!(
                    "sphere {i}: joint {} out of range for chain {}",
                    s.joint, s.chain
                )));
            }
            if s.radius <= 0.0 {
                return Err(ModelError::Invalid(format!("sphere {i}: radius must be positive")));
            }
            spheres.push(CollisionSphere {
                chain: s.chain,
                joint: s.joint,
                radius: s.radius,
            });
        }
        let pairs = match file.pairs {
            Some(list) => {
                let mut pairs = Vec::with_capacity(list.len());
                for (i, p) in list.iter().enumerate() {
                    if p.a == p.b || p.a >= spheres.len() || p.b >= spheres.len() {
                        return Err(ModelError::Invalid(format!("pair {i}: bad sphere indices")));
                    }
                    pairs.push(ProximityPair {
                        a: p.a,
                        b: p.b,
                        enabled: p.enabled,
                    });
                }
                pairs
            }
            // No explicit pair set: every cross-chain sphere pair applies.
            None => {
                let mut pairs = Vec::new();
                for a in 0..spheres.len() {
                    for b in (a + 1)..spheres.len() {
                        if spheres[a].chain != spheres[b].chain {
                            pairs.push(ProximityPair { a, b, enabled: true });
                        }
                    }
                }
                pairs
            }
        };
        let mut dof_offsets = Vec::with_capacity(chains.len());
        let mut dof = 0;
        for c in &chains {
            dof_offsets.push(dof);
            dof += c.joints.len();
        }
        Ok(HandModel {
            name: file.name,
            palm,
            chains,
            spheres,
            pairs,
            dof_offsets,
            dof,
        })
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    /// Index of the chain's first joint in the flat configuration vector.
    pub fn chain_offset(&self, chain: usize) -> usize {
        self.dof_offsets[chain]
    }

    pub fn check_dims(&self, q: &JointConfig) -> Result<(), ModelError> {
        if q.len() != self.dof {
            return Err(ModelError::DimensionMismatch {
                got: q.len(),
                expected: self.dof,
            });
        }
        Ok(())
    }

    /// Component-wise clamp of every joint to its limits. Idempotent.
    pub fn project_limits(&self, q: &JointConfig) -> JointConfig {
        let mut out = q.0.clone();
        let mut k = 0;
        for chain in &self.chains {
            for joint in &chain.joints {
                out[k] = out[k].clamp(joint.lower, joint.upper);
                k += 1;
            }
        }
        JointConfig(out)
    }

    pub fn lower_limits(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.dof,
            self.chains.iter().flat_map(|c| c.joints.iter().map(|j| j.lower)),
        )
    }

    pub fn upper_limits(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.dof,
            self.chains.iter().flat_map(|c| c.joints.iter().map(|j| j.upper)),
        )
    }

    /// Full forward pass: joint frames, fingertips, and sphere centers.
    pub fn forward_frames(&self, q: &JointConfig) -> Result<FkFrames, ModelError> {
        self.check_dims(q)?;
        let mut chains = Vec::with_capacity(self.chains.len());
        let mut tips = Vec::with_capacity(self.chains.len());
        let mut k = 0;
        for chain in &self.chains {
            let mut frames = Vec::with_capacity(chain.joints.len());
            let mut cursor = self.palm;
            for joint in &chain.joints {
                // The joint rotates about its own axis, so the axis reads the
                // same before and after applying q; use the pre-rotation frame.
                let axis_world = cursor.rotation.rotate(&joint.axis);
                let local = Pose::new(
                    joint.offset,
                    Rotation::from_axis_angle(&joint.axis, q.0[k]),
                );
                cursor = cursor.compose(&local);
                frames.push(JointFrame {
                    pose: cursor,
                    axis_world,
                });
                k += 1;
            }
            tips.push(cursor.transform_point(&chain.tip_offset));
            chains.push(frames);
        }
        Ok(FkFrames { chains, tips })
    }

    /// Fingertip positions in the wrist frame, thumb first.
    pub fn fk_fingertips(&self, q: &JointConfig) -> Result<Vec<Vector3<f64>>, ModelError> {
        Ok(self.forward_frames(q)?.tips)
    }

    /// 3xN position Jacobian of one fingertip; off-chain columns are zero.
    pub fn fingertip_jacobian(
        &self,
        q: &JointConfig,
        finger: usize,
    ) -> Result<DMatrix<f64>, ModelError> {
        if finger >= self.chains.len() {
            return Err(ModelError::BadChain(finger));
        }
        let fk = self.forward_frames(q)?;
        let mut jac = DMatrix::zeros(3, self.dof);
        let tip = fk.tips[finger];
        let off = self.dof_offsets[finger];
        for (i, col) in fk.point_columns(finger, self.chains[finger].joints.len(), &tip) {
            jac.column_mut(off + i).copy_from(&col);
        }
        Ok(jac)
    }

    /// Sphere center position given a forward pass.
    pub fn sphere_center(&self, fk: &FkFrames, sphere: usize) -> Vector3<f64> {
        let s = &self.spheres[sphere];
        if s.joint == self.chains[s.chain].joints.len() {
            fk.tips[s.chain]
        } else {
            fk.chains[s.chain][s.joint].pose.position
        }
    }

    /// Number of leading chain joints a sphere's center depends on.
    pub(crate) fn sphere_moving_joints(&self, sphere: usize) -> usize {
        let s = &self.spheres[sphere];
        if s.joint == self.chains[s.chain].joints.len() {
            // Fingertip: all chain joints move it.
            self.chains[s.chain].joints.len()
        } else {
            // A joint-frame origin moves with the joints before it only.
            s.joint
        }
    }

    /// Signed surface distances for every enabled pair of the configured set.
    /// Negative values mean penetration; coincident centers give -(ra + rb).
    pub fn proximity_distances(
        &self,
        q: &JointConfig,
    ) -> Result<Vec<(ProximityPair, f64)>, ModelError> {
        let fk = self.forward_frames(q)?;
        Ok(self.proximity_distances_from(&fk))
    }

    pub(crate) fn proximity_distances_from(&self, fk: &FkFrames) -> Vec<(ProximityPair, f64)> {
        self.pairs
            .iter()
            .filter(|p| p.enabled)
            .map(|p| {
                let ca = self.sphere_center(fk, p.a);
                let cb = self.sphere_center(fk, p.b);
                let d = (ca - cb).norm() - self.spheres[p.a].radius - self.spheres[p.b].radius;
                (*p, d)
            })
            .collect()
    }
}

/// One joint's frame after applying its rotation, plus its world-frame axis.
#[derive(Debug, Clone, Copy)]
pub struct JointFrame {
    pub pose: Pose,
    pub axis_world: Vector3<f64>,
}

/// Result of a forward pass: per-chain joint frames (pose after each joint)
/// plus fingertip positions, all in the wrist frame.
#[derive(Debug, Clone)]
pub struct FkFrames {
    chains: Vec<Vec<JointFrame>>,
    pub tips: Vec<Vector3<f64>>,
}

impl FkFrames {
    pub fn joint_origin(&self, chain: usize, joint: usize) -> Vector3<f64> {
        self.chains[chain][joint].pose.position
    }

    /// Jacobian columns for a point rigidly attached to `chain` after its
    /// first `moving` joints: `(local joint index, d point / d q_joint)`.
    pub(crate) fn point_columns<'a>(
        &'a self,
        chain: usize,
        moving: usize,
        point: &'a Vector3<f64>,
    ) -> impl Iterator<Item = (usize, Vector3<f64>)> + 'a {
        self.chains[chain][..moving].iter().enumerate().map(move |(i, frame)| {
            (i, frame.axis_world.cross(&(point - frame.pose.position)))
        })
    }
}
