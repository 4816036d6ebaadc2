//! Rotation, pose, and twist algebra plus EMA filtering of vector signals.
//!
//! Rotations are stored as unit quaternions and re-normalized after every
//! composition so that long control runs (millions of per-tick compositions)
//! stay orthonormal. The exp/log maps operate on the principal branch only:
//! control loops work with per-tick relative rotations, so angles near pi are
//! treated as a domain error rather than a best-effort value.

use nalgebra::{Matrix3, Quaternion, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// Angles above `PI - LOG_DOMAIN_MARGIN` are outside the log map's domain.
pub const LOG_DOMAIN_MARGIN: f64 = 1e-6;

const SMALL_ANGLE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpatialError {
    /// Rotation angle is within [`LOG_DOMAIN_MARGIN`] of pi, where the
    /// axis-angle vector is not uniquely defined.
    #[error("rotation angle {angle} rad is too close to pi for the log map")]
    LogNearPi { angle: f64 },
    #[error("non-finite component in {context}")]
    NonFinite { context: &'static str },
}

/// A 3D rotation. Internally a unit quaternion, exposed as a 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(UnitQuaternion<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(UnitQuaternion::identity())
    }

    /// Wraps a quaternion given as `[w, x, y, z]`. Near-unit inputs are kept
    /// bit-exact so machine-written streams round-trip; anything further off
    /// the unit sphere is normalized.
    pub fn from_quaternion_wxyz(q: [f64; 4]) -> Self {
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        if (quat.norm_squared() - 1.0).abs() < 1e-12 {
            Rotation(UnitQuaternion::new_unchecked(quat))
        } else {
            Rotation(UnitQuaternion::from_quaternion(quat))
        }
    }

    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = self.0.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    /// Rotation of `angle` radians about a (not necessarily unit) axis.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        if axis.norm() < SMALL_ANGLE {
            return Rotation::identity();
        }
        Rotation(UnitQuaternion::from_axis_angle(
            &Unit::new_normalize(*axis),
            angle,
        ))
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        self.0.to_rotation_matrix().into_inner()
    }

    /// Composition `self * other`; the result is re-normalized so repeated
    /// composition does not drift off the unit sphere.
    pub fn compose(&self, other: &Rotation) -> Rotation {
        Rotation(UnitQuaternion::new_normalize(
            self.0.into_inner() * other.0.into_inner(),
        ))
    }

    pub fn inverse(&self) -> Rotation {
        Rotation(self.0.inverse())
    }

    /// Applies the rotation to a vector.
    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// Rotation angle in [0, pi].
    pub fn angle(&self) -> f64 {
        self.0.angle()
    }

    /// Frobenius deviation of `R^T R` from the identity (orthonormality check).
    pub fn orthonormality_error(&self) -> f64 {
        let m = self.matrix();
        (m.transpose() * m - Matrix3::identity()).norm()
    }
}

/// Rodrigues exponential map: axis-angle vector to rotation.
///
/// The zero vector maps to the identity.
pub fn so3_exp(axis_angle: &Vector3<f64>) -> Rotation {
    let theta = axis_angle.norm();
    if theta < SMALL_ANGLE {
        // First-order quaternion: w = 1, xyz = v/2.
        let q = Quaternion::new(
            1.0,
            axis_angle.x * 0.5,
            axis_angle.y * 0.5,
            axis_angle.z * 0.5,
        );
        return Rotation(UnitQuaternion::from_quaternion(q));
    }
    let half = 0.5 * theta;
    let k = half.sin() / theta;
    let q = Quaternion::new(
        half.cos(),
        axis_angle.x * k,
        axis_angle.y * k,
        axis_angle.z * k,
    );
    Rotation(UnitQuaternion::from_quaternion(q))
}

/// Logarithm map: rotation to axis-angle vector on the principal branch.
///
/// Fails for angles within [`LOG_DOMAIN_MARGIN`] of pi, where the axis flips
/// sign discontinuously.
pub fn so3_log(r: &Rotation) -> Result<Vector3<f64>, SpatialError> {
    let q = r.0.quaternion();
    // q and -q are the same rotation; take the hemisphere with w >= 0 so the
    // recovered angle is the principal one.
    let (w, v) = if q.w >= 0.0 {
        (q.w, Vector3::new(q.i, q.j, q.k))
    } else {
        (-q.w, Vector3::new(-q.i, -q.j, -q.k))
    };
    let n = v.norm();
    if n < SMALL_ANGLE {
        return Ok(v * 2.0);
    }
    let angle = 2.0 * n.atan2(w);
    if angle > std::f64::consts::PI - LOG_DOMAIN_MARGIN {
        return Err(SpatialError::LogNearPi { angle });
    }
    Ok(v * (angle / n))
}

/// Rigid-body pose: position plus rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub rotation: Rotation,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            position: Vector3::zeros(),
            rotation: Rotation::identity(),
        }
    }

    pub fn new(position: Vector3<f64>, rotation: Rotation) -> Self {
        Pose { position, rotation }
    }

    /// `self * other`: other expressed in self's frame, mapped to the parent.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            position: self.position + self.rotation.rotate(&other.position),
            rotation: self.rotation.compose(&other.rotation),
        }
    }

    /// Maps a point from this frame to the parent frame.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.position + self.rotation.rotate(p)
    }
}

/// Spatial velocity: linear (m/s) and angular (rad/s) parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
}

impl Twist {
    pub fn zero() -> Self {
        Twist {
            linear: Vector3::zeros(),
            angular: Vector3::zeros(),
        }
    }

    pub fn new(linear: Vector3<f64>, angular: Vector3<f64>) -> Self {
        Twist { linear, angular }
    }

    pub fn scale(&self, s: f64) -> Twist {
        Twist {
            linear: self.linear * s,
            angular: self.angular * s,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.linear.iter().chain(self.angular.iter()).all(|c| c.is_finite())
    }
}

/// Exponential moving average over a 3-vector signal.
///
/// `y <- a * sample + (1 - a) * y`; the first sample initializes the state,
/// so a constant stream is tracked exactly from the start. A still (zero)
/// stream decays geometrically by `(1 - a)` per step.
#[derive(Debug, Clone)]
pub struct EmaFilter {
    coefficient: f64,
    state: Vector3<f64>,
    initialized: bool,
}

/// Default smoothing coefficient: a still residual decays below 1e-4 of its
/// initial value within 26 steps.
pub const DEFAULT_EMA_COEFFICIENT: f64 = 0.3;

impl EmaFilter {
    /// Creates an uninitialized filter; panics unless `coefficient` is in (0, 1].
    pub fn new(coefficient: f64) -> Self {
        assert!(
            coefficient > 0.0 && coefficient <= 1.0,
            "EMA coefficient must be in (0, 1], got {coefficient}"
        );
        EmaFilter {
            coefficient,
            state: Vector3::zeros(),
            initialized: false,
        }
    }

    /// Creates a filter whose state is already `y0`.
    pub fn with_state(coefficient: f64, y0: Vector3<f64>) -> Self {
        let mut f = Self::new(coefficient);
        f.state = y0;
        f.initialized = true;
        f
    }

    pub fn reset(&mut self) {
        self.state = Vector3::zeros();
        self.initialized = false;
    }

    pub fn state(&self) -> Vector3<f64> {
        self.state
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }
}

/// Advances the filter by one sample and returns the new smoothed value.
pub fn ema_step(filter: &mut EmaFilter, sample: &Vector3<f64>) -> Vector3<f64> {
    if !filter.initialized {
        filter.state = *sample;
        filter.initialized = true;
    } else {
        filter.state = filter.coefficient * sample + (1.0 - filter.coefficient) * filter.state;
    }
    filter.state
}

// Serde representations for streams and logs: rotations travel as [w, x, y, z].

impl Serialize for Rotation {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.quaternion_wxyz().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Rotation {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let q = <[f64; 4]>::deserialize(deserializer)?;
        Ok(Rotation::from_quaternion_wxyz(q))
    }
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    position: [f64; 3],
    quaternion: [f64; 4],
}

impl Serialize for Pose {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        PoseRepr {
            position: self.position.into(),
            quaternion: self.rotation.quaternion_wxyz(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = PoseRepr::deserialize(deserializer)?;
        Ok(Pose {
            position: Vector3::from(repr.position),
            rotation: Rotation::from_quaternion_wxyz(repr.quaternion),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct TwistRepr {
    linear: [f64; 3],
    angular: [f64; 3],
}

impl Serialize for Twist {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        TwistRepr {
            linear: self.linear.into(),
            angular: self.angular.into(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Twist {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = TwistRepr::deserialize(deserializer)?;
        Ok(Twist {
            linear: Vector3::from(repr.linear),
            angular: Vector3::from(repr.angular),
        })
    }
}
