//! Pose arithmetic for the end-effector model: positions in R^3, unit
//! quaternions for orientation, interpolation, and perturbation application.
//!
//! Axis convention (fixed across the whole crate): +X points in front of the
//! manipulator, +Y to its left, +Z up.
//!
//! Quaternions use the Hamilton convention, scalar-first `[w, x, y, z]`, and
//! are kept unit-norm and sign-canonical (`w >= 0`, ties broken by the first
//! nonzero vector component) so that equality and serialization are stable.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Neg, Sub};
use thiserror::Error;

/// Unit-norm tolerance enforced on every produced quaternion.
pub const UNIT_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("non-finite component in {0}")]
    NonFinite(&'static str),
    #[error("quaternion norm too small to normalize")]
    DegenerateNorm,
    #[error("interpolation parameter {0} outside [0, 1]")]
    ParamOutOfRange(f64),
}

// ---------------------------------------------------------------------------
// Position
// ---------------------------------------------------------------------------

/// A point (or displacement) in the manipulator frame, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position {
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(GeometryError::NonFinite("position"));
        }
        Ok(Self { x, y, z })
    }

    /// Origin.
    pub const ZERO: Position = Position {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (*self - *other).norm()
    }

    /// Horizontal (XY-plane) distance.
    pub fn distance_xy(&self, other: &Position) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }

    pub fn scaled(&self, k: f64) -> Position {
        Position {
            x: self.x * k,
            y: self.y * k,
            z: self.z * k,
        }
    }

    /// Linear interpolation; `s = 0` gives `self`, `s = 1` gives `other`.
    pub fn lerp(&self, other: &Position, s: f64) -> Position {
        Position {
            x: self.x + (other.x - self.x) * s,
            y: self.y + (other.y - self.y) * s,
            z: self.z + (other.z - self.z) * s,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Position {
    type Output = Position;
    fn add(self, rhs: Position) -> Position {
        Position {
            x: self.x + rhs.x,
            y: self.y + rhs.y,
            z: self.z + rhs.z,
        }
    }
}

impl Sub for Position {
    type Output = Position;
    fn sub(self, rhs: Position) -> Position {
        Position {
            x: self.x - rhs.x,
            y: self.y - rhs.y,
            z: self.z - rhs.z,
        }
    }
}

impl Neg for Position {
    type Output = Position;
    fn neg(self) -> Position {
        Position {
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }
}

/// Applies a position perturbation: componentwise `p + dp`.
pub fn apply_position_perturbation(p: &Position, dp: &Position) -> Result<Position, GeometryError> {
    if !p.is_finite() || !dp.is_finite() {
        return Err(GeometryError::NonFinite("position perturbation"));
    }
    Ok(*p + *dp)
}

// ---------------------------------------------------------------------------
// Orientation
// ---------------------------------------------------------------------------

/// A unit quaternion representing a 3D rotation, scalar-first.
///
/// Every constructor and operation re-normalizes and canonicalizes the sign,
/// so two `Orientation`s describing the same rotation compare equal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Orientation {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Orientation {
    /// Identity rotation.
    pub const IDENTITY: Orientation = Orientation {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Builds a unit quaternion from raw components, normalizing and
    /// canonicalizing. Rejects non-finite input and near-zero norm.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        if !(w.is_finite() && x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(GeometryError::NonFinite("quaternion"));
        }
        let norm_sq = w * w + x * x + y * y + z * z;
        if norm_sq < 1e-12 {
            return Err(GeometryError::DegenerateNorm);
        }
        let inv = 1.0 / norm_sq.sqrt();
        Ok(Self {
            w: w * inv,
            x: x * inv,
            y: y * inv,
            z: z * inv,
        }
        .canonicalized())
    }

    /// Rotation of `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Result<Self, GeometryError> {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if !n.is_finite() || !angle.is_finite() {
            return Err(GeometryError::NonFinite("axis-angle"));
        }
        if n < 1e-12 {
            return Ok(Self::IDENTITY);
        }
        let half = angle * 0.5;
        let s = half.sin() / n;
        Self::new(half.cos(), axis[0] * s, axis[1] * s, axis[2] * s)
    }

    /// Rotation about +Z, the disc spin axis.
    pub fn about_z(angle: f64) -> Orientation {
        Self::from_axis_angle([0.0, 0.0, 1.0], angle).expect("finite z rotation")
    }

    fn canonicalized(mut self) -> Self {
        let flip = if self.w < 0.0 {
            true
        } else if self.w == 0.0 {
            // Tie-break on the first nonzero vector component.
            if self.x != 0.0 {
                self.x < 0.0
            } else if self.y != 0.0 {
                self.y < 0.0
            } else {
                self.z < 0.0
            }
        } else {
            false
        };
        if flip {
            self.w = -self.w;
            self.x = -self.x;
            self.y = -self.y;
            self.z = -self.z;
        }
        // Scrub negative zeros so serialization is byte-stable.
        self.w += 0.0;
        self.x += 0.0;
        self.y += 0.0;
        self.z += 0.0;
        self
    }

    fn renormalized(self) -> Self {
        let norm = (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt();
        let inv = 1.0 / norm;
        Self {
            w: self.w * inv,
            x: self.x * inv,
            y: self.y * inv,
            z: self.z * inv,
        }
        .canonicalized()
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Conjugate; for unit quaternions this is the inverse rotation.
    pub fn inverse(&self) -> Orientation {
        Orientation {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
        .canonicalized()
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        2.0 * self.w.abs().min(1.0).acos()
    }

    /// Rotates a vector by this quaternion.
    pub fn rotate(&self, v: &Position) -> Position {
        // q v q^-1 expanded: v + 2 u x (u x v + w v), u = (x, y, z).
        let ux = self.x;
        let uy = self.y;
        let uz = self.z;
        let cx = uy * v.z - uz * v.y + self.w * v.x;
        let cy = uz * v.x - ux * v.z + self.w * v.y;
        let cz = ux * v.y - uy * v.x + self.w * v.z;
        Position {
            x: v.x + 2.0 * (uy * cz - uz * cy),
            y: v.y + 2.0 * (uz * cx - ux * cz),
            z: v.z + 2.0 * (ux * cy - uy * cx),
        }
    }

    /// Direction of the body +Z axis after rotation (used for peg/cylinder
    /// uprightness checks).
    pub fn body_z_axis(&self) -> Position {
        self.rotate(&Position {
            x: 0.0,
            y: 0.0,
            z: 1.0,
        })
    }

    /// Shortest-arc spherical interpolation. `s` must lie in `[0, 1]`;
    /// endpoints are returned exactly.
    pub fn slerp(&self, other: &Orientation, s: f64) -> Result<Orientation, GeometryError> {
        if !(0.0..=1.0).contains(&s) {
            return Err(GeometryError::ParamOutOfRange(s));
        }
        if s == 0.0 {
            return Ok(*self);
        }
        if s == 1.0 {
            return Ok(*other);
        }
        let mut dot = self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z;
        // Take the short way around the double cover.
        let mut b = *other;
        if dot < 0.0 {
            b = Orientation {
                w: -b.w,
                x: -b.x,
                y: -b.y,
                z: -b.z,
            };
            dot = -dot;
        }
        let (ka, kb) = if dot > 1.0 - 1e-10 {
            // Nearly parallel: fall back to linear blend.
            (1.0 - s, s)
        } else {
            let theta = dot.min(1.0).acos();
            let sin_theta = theta.sin();
            (
                ((1.0 - s) * theta).sin() / sin_theta,
                (s * theta).sin() / sin_theta,
            )
        };
        Ok(Orientation {
            w: ka * self.w + kb * b.w,
            x: ka * self.x + kb * b.x,
            y: ka * self.y + kb * b.y,
            z: ka * self.z + kb * b.z,
        }
        .renormalized())
    }
}

/// Hamilton product `a (x) b`, re-normalized and canonicalized.
pub fn quat_mul(a: &Orientation, b: &Orientation) -> Orientation {
    Orientation {
        w: a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        x: a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
        y: a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
        z: a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
    }
    .renormalized()
}

/// Applies an orientation perturbation by left-multiplication: `dq (x) q`.
pub fn apply_orientation_perturbation(q: &Orientation, dq: &Orientation) -> Orientation {
    quat_mul(dq, q)
}

/// Geodesic angle between two rotations, in `[0, pi]`. Computed from the
/// relative quaternion with atan2, which stays well-conditioned near zero
/// where the acos form loses eight digits.
pub fn angular_distance(a: &Orientation, b: &Orientation) -> f64 {
    // r = a^-1 (x) b, unnormalized Hamilton product of unit inputs.
    let rw = a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z;
    let rx = a.w * b.x - a.x * b.w - a.y * b.z + a.z * b.y;
    let ry = a.w * b.y + a.x * b.z - a.y * b.w - a.z * b.x;
    let rz = a.w * b.z - a.x * b.y + a.y * b.x - a.z * b.w;
    let vec_norm = (rx * rx + ry * ry + rz * rz).sqrt();
    2.0 * vec_norm.atan2(rw.abs())
}

// ---------------------------------------------------------------------------
// Pose
// ---------------------------------------------------------------------------

/// End-effector or object pose: position plus orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Position,
    pub orientation: Orientation,
}

impl Pose {
    pub fn new(position: Position, orientation: Orientation) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub const IDENTITY: Pose = Pose {
        position: Position::ZERO,
        orientation: Orientation::IDENTITY,
    };

    /// Rigid composition `self * local`: transforms `local` out of this
    /// pose's frame into the world frame.
    pub fn compose(&self, local: &Pose) -> Pose {
        Pose {
            position: self.position + self.orientation.rotate(&local.position),
            orientation: quat_mul(&self.orientation, &local.orientation),
        }
    }

    /// Expresses `world` in this pose's frame: the `local` such that
    /// `self.compose(&local) == world`.
    pub fn relative_to(&self, world: &Pose) -> Pose {
        let inv = self.orientation.inverse();
        Pose {
            position: inv.rotate(&(world.position - self.position)),
            orientation: quat_mul(&inv, &world.orientation),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn deg(d: f64) -> f64 {
        d * PI / 180.0
    }

    #[test]
    fn identity_mul_is_identity_case() {
        let q = Orientation::from_axis_angle([0.3, -0.4, 0.8], 1.1).unwrap();
        assert_eq!(quat_mul(&Orientation::IDENTITY, &q), q);
        assert_eq!(quat_mul(&q, &Orientation::IDENTITY), q);
    }

    #[test]
    fn basis_quaternions_follow_hamilton_product() {
        // i (x) j = k
        let i = Orientation::new(0.0, 1.0, 0.0, 0.0).unwrap();
        let j = Orientation::new(0.0, 0.0, 1.0, 0.0).unwrap();
        let k = quat_mul(&i, &j);
        assert!((k.z - 1.0).abs() < UNIT_TOL && k.w.abs() < UNIT_TOL);
    }

    #[test]
    fn two_quarter_turns_make_a_half_turn() {
        let q90 = Orientation::about_z(FRAC_PI_2);
        let q180 = Orientation::about_z(PI);
        let composed = quat_mul(&q90, &q90);
        assert!(angular_distance(&composed, &q180) < UNIT_TOL);
    }

    #[test]
    fn position_perturbation_adds_componentwise() {
        let p = Position::new(0.1, 0.0, 0.2).unwrap();
        let dp = Position::new(0.05, 0.0, 0.0).unwrap();
        let out = apply_position_perturbation(&p, &dp).unwrap();
        assert!(out.distance(&Position::new(0.15, 0.0, 0.2).unwrap()) < 1e-15);
        // Adding the inverse restores the input within float headroom.
        let back = apply_position_perturbation(&out, &(-dp)).unwrap();
        assert!(back.distance(&p) < 1e-12);
    }

    #[test]
    fn zero_perturbations_are_no_ops() {
        let p = Position::new(0.4, -0.2, 0.1).unwrap();
        assert_eq!(apply_position_perturbation(&p, &Position::ZERO).unwrap(), p);
        let q = Orientation::from_axis_angle([1.0, 2.0, 3.0], 0.7).unwrap();
        assert_eq!(
            apply_orientation_perturbation(&q, &Orientation::IDENTITY),
            q
        );
    }

    #[test]
    fn perturbation_on_identity_is_the_perturbation() {
        let dq = Orientation::from_axis_angle([1.0, 0.0, 0.0], deg(30.0)).unwrap();
        let out = apply_orientation_perturbation(&Orientation::IDENTITY, &dq);
        assert!(angular_distance(&out, &dq) < UNIT_TOL);
    }

    #[test]
    fn non_finite_inputs_are_rejected() {
        assert!(Position::new(f64::NAN, 0.0, 0.0).is_err());
        assert!(Orientation::new(f64::INFINITY, 0.0, 0.0, 0.0).is_err());
        assert_eq!(
            Orientation::new(0.0, 0.0, 0.0, 0.0),
            Err(GeometryError::DegenerateNorm)
        );
    }

    #[test]
    fn slerp_hits_endpoints_exactly() {
        let q0 = Orientation::from_axis_angle([0.2, 0.9, -0.1], 0.8).unwrap();
        let q1 = Orientation::from_axis_angle([-0.5, 0.1, 0.6], 2.0).unwrap();
        assert!(angular_distance(&q0.slerp(&q1, 0.0).unwrap(), &q0) < UNIT_TOL);
        assert!(angular_distance(&q0.slerp(&q1, 1.0).unwrap(), &q1) < UNIT_TOL);
    }

    #[test]
    fn slerp_midpoint_of_quarter_turn_is_eighth_turn() {
        let q1 = Orientation::about_z(FRAC_PI_2);
        let mid = Orientation::IDENTITY.slerp(&q1, 0.5).unwrap();
        let expected = Orientation::about_z(deg(45.0));
        assert!(angular_distance(&mid, &expected) < UNIT_TOL);
    }

    #[test]
    fn slerp_ignores_antipodal_representation() {
        let q0 = Orientation::from_axis_angle([0.0, 1.0, 0.0], 0.4).unwrap();
        let q1 = Orientation::from_axis_angle([1.0, 1.0, 0.0], 1.9).unwrap();
        let neg = Orientation {
            w: -q1.w,
            x: -q1.x,
            y: -q1.y,
            z: -q1.z,
        };
        // Canonicalization makes both representations identical up front,
        // so interpolants agree bitwise.
        let a = q0.slerp(&q1, 0.37).unwrap();
        let b = q0.slerp(&neg.renormalized(), 0.37).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn slerp_rejects_out_of_range_parameter() {
        let q1 = Orientation::about_z(1.0);
        assert!(matches!(
            Orientation::IDENTITY.slerp(&q1, 1.5),
            Err(GeometryError::ParamOutOfRange(_))
        ));
        assert!(Orientation::IDENTITY.slerp(&q1, -0.1).is_err());
    }

    #[test]
    fn angular_distance_basics() {
        let q = Orientation::from_axis_angle([0.1, 0.2, 0.3], 1.3).unwrap();
        assert_eq!(angular_distance(&q, &q), 0.0);
        let flip = Orientation::from_axis_angle([1.0, 0.0, 0.0], PI).unwrap();
        assert!((angular_distance(&Orientation::IDENTITY, &flip) - PI).abs() < 1e-9);
    }

    #[test]
    fn compose_and_relative_round_trip() {
        let base = Pose::new(
            Position::new(0.3, -0.1, 0.2).unwrap(),
            Orientation::from_axis_angle([0.0, 0.0, 1.0], 0.9).unwrap(),
        );
        let local = Pose::new(
            Position::new(0.0, 0.02, -0.005).unwrap(),
            Orientation::from_axis_angle([0.0, 1.0, 0.0], 0.3).unwrap(),
        );
        let world = base.compose(&local);
        let back = base.relative_to(&world);
        assert!(back.position.distance(&local.position) < 1e-12);
        assert!(angular_distance(&back.orientation, &local.orientation) < UNIT_TOL);
    }
}
