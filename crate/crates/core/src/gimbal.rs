//! Differential gear-train kinematics of the two-axis marker holder.
//!
//! Two side-by-side motors drive two sun gears; the planet gear between them
//! carries the marker. Co-rotating the motors tilts the marker about the
//! lateral axis (P), counter-rotating them turns it about the longitudinal
//! axis (C).

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Targets with `|d_y|` at or above this are too close to the lateral axis.
pub const DEGENERACY_MARGIN: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GimbalError {
    #[error("gear ratio `{name}` must be positive and finite, got {value}")]
    InvalidGearRatio { name: &'static str, value: f64 },
    #[error("target direction has norm {0}, expected 1")]
    NotUnit(f64),
    #[error("target lies on the lateral axis (|y| = {0}); no unique correction exists")]
    GimbalDegeneracy(f64),
    #[error("invalid servo limits: {0}")]
    InvalidServo(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GearParams {
    /// Motor A gear to sun gear.
    pub n_a: f64,
    /// Motor B gear to sun gear.
    pub n_b: f64,
    /// Sun gear to planet gear.
    pub n_s: f64,
}

impl Default for GearParams {
    fn default() -> Self {
        Self {
            n_a: 0.5,
            n_b: 0.5,
            n_s: 0.5,
        }
    }
}

impl GearParams {
    pub fn new(n_a: f64, n_b: f64, n_s: f64) -> Result<Self, GimbalError> {
        let g = Self { n_a, n_b, n_s };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), GimbalError> {
        for (name, value) in [("n_a", self.n_a), ("n_b", self.n_b), ("n_s", self.n_s)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(GimbalError::InvalidGearRatio { name, value });
            }
        }
        Ok(())
    }
}

/// Marker rotations: `d_theta_p` about the lateral (x) axis, `d_theta_c`
/// about the longitudinal (y) axis. Radians.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MarkerDeltas {
    pub d_theta_p: f64,
    pub d_theta_c: f64,
}

/// Motor rotations, radians.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MotorDeltas {
    pub d_theta_a: f64,
    pub d_theta_b: f64,
}

pub fn motor_deltas(m: MarkerDeltas, g: &GearParams) -> MotorDeltas {
    MotorDeltas {
        d_theta_a: g.n_a * (g.n_s * m.d_theta_p + m.d_theta_c),
        d_theta_b: g.n_b * (g.n_s * m.d_theta_p - m.d_theta_c),
    }
}

pub fn marker_deltas(m: MotorDeltas, g: &GearParams) -> MarkerDeltas {
    let a = m.d_theta_a / g.n_a;
    let b = m.d_theta_b / g.n_b;
    MarkerDeltas {
        d_theta_p: (a + b) / (2.0 * g.n_s),
        d_theta_c: (a - b) / 2.0,
    }
}

/// Direction of the marker normal after rotating by `theta_p` about x and
/// then by `theta_c` about y, starting from +z.
pub fn marker_normal(angles: MarkerDeltas) -> Vector3<f64> {
    let (sp, cp) = angles.d_theta_p.sin_cos();
    let (sc, cc) = angles.d_theta_c.sin_cos();
    Vector3::new(cp * sc, -sp, cp * cc)
}

/// Rotation matrix `Ry(theta_c) · Rx(theta_p)` of the marker holder.
pub fn marker_rotation(angles: MarkerDeltas) -> nalgebra::Rotation3<f64> {
    let rx = nalgebra::Rotation3::from_axis_angle(&Vector3::x_axis(), angles.d_theta_p);
    let ry = nalgebra::Rotation3::from_axis_angle(&Vector3::y_axis(), angles.d_theta_c);
    ry * rx
}

/// Marker angles that point the marker normal along `target` (unit vector in
/// the wrist-base frame). Yaw about the normal is not controllable.
pub fn correction_angles(target: &Vector3<f64>) -> Result<MarkerDeltas, GimbalError> {
    let n = target.norm();
    if (n - 1.0).abs() > 1e-9 || !n.is_finite() {
        return Err(GimbalError::NotUnit(n));
    }
    if target.y.abs() >= 1.0 - DEGENERACY_MARGIN {
        return Err(GimbalError::GimbalDegeneracy(target.y.abs()));
    }
    Ok(MarkerDeltas {
        d_theta_p: -target.y.asin(),
        d_theta_c: target.x.atan2(target.z),
    })
}

/// Rate and travel limits shared by both servos.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServoLimits {
    /// rad/s
    pub rate_limit: f64,
    /// Symmetric travel, ± radians.
    pub range: f64,
}

impl Default for ServoLimits {
    fn default() -> Self {
        Self {
            rate_limit: 6.0,
            range: std::f64::consts::FRAC_PI_2,
        }
    }
}

impl ServoLimits {
    pub fn validate(&self) -> Result<(), GimbalError> {
        if !(self.rate_limit > 0.0 && self.rate_limit.is_finite()) {
            return Err(GimbalError::InvalidServo(format!(
                "rate_limit must be positive, got {}",
                self.rate_limit
            )));
        }
        if !(self.range > 0.0 && self.range.is_finite()) {
            return Err(GimbalError::InvalidServo(format!(
                "range must be positive, got {}",
                self.range
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServoState {
    pub angle_a: f64,
    pub angle_b: f64,
    pub rate_limit: f64,
    pub range: f64,
}

impl ServoState {
    pub fn at_rest(limits: ServoLimits) -> Self {
        Self {
            angle_a: 0.0,
            angle_b: 0.0,
            rate_limit: limits.rate_limit,
            range: limits.range,
        }
    }

    pub fn angles(&self) -> MotorDeltas {
        MotorDeltas {
            d_theta_a: self.angle_a,
            d_theta_b: self.angle_b,
        }
    }
}

fn slew(current: f64, target: f64, max_step: f64, range: f64) -> f64 {
    let moved = current + (target - current).clamp(-max_step, max_step);
    moved.clamp(-range, range)
}

/// Advances both servos toward `command`, interpreted as motor angles
/// measured from the servo zero pose.
pub fn servo_step(s: ServoState, command: MotorDeltas, dt: f64) -> ServoState {
    let max_step = s.rate_limit * dt;
    ServoState {
        angle_a: slew(s.angle_a, command.d_theta_a, max_step, s.range),
        angle_b: slew(s.angle_b, command.d_theta_b, max_step, s.range),
        ..s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn md(p: f64, c: f64) -> MarkerDeltas {
        MarkerDeltas {
            d_theta_p: p,
            d_theta_c: c,
        }
    }

    #[test]
    fn forward_examples() {
        let g = GearParams::default();
        assert_eq!(motor_deltas(md(0.0, 0.0), &g), MotorDeltas::default());
        let m = motor_deltas(md(1.0, 0.0), &g);
        assert_eq!((m.d_theta_a, m.d_theta_b), (0.25, 0.25));
        let m = motor_deltas(md(0.0, 1.0), &g);
        assert_eq!((m.d_theta_a, m.d_theta_b), (0.5, -0.5));
    }

    #[test]
    fn inverse_examples() {
        let g = GearParams::default();
        assert_eq!(marker_deltas(MotorDeltas::default(), &g), MarkerDeltas::default());
        let back = marker_deltas(
            MotorDeltas {
                d_theta_a: 0.25,
                d_theta_b: 0.25,
            },
            &g,
        );
        assert_eq!(back, md(1.0, 0.0));
    }

    #[test]
    fn gear_params_validation() {
        assert!(GearParams::new(0.5, 0.0, 0.5).is_err());
        assert!(GearParams::new(0.5, 0.5, f64::NAN).is_err());
        assert!(GearParams::new(1.0, 2.0, 3.0).is_ok());
    }

    #[test]
    fn correction_examples() {
        assert_eq!(correction_angles(&Vector3::z()).unwrap(), md(0.0, 0.0));
        let a = correction_angles(&Vector3::x()).unwrap();
        assert_eq!(a.d_theta_p, 0.0);
        assert!((a.d_theta_c - FRAC_PI_2).abs() < 1e-15);
        assert!((marker_normal(a) - Vector3::x()).norm() < 1e-9);
        assert!(matches!(
            correction_angles(&Vector3::y()),
            Err(GimbalError::GimbalDegeneracy(_))
        ));
        assert!(matches!(
            correction_angles(&Vector3::new(0.0, 0.0, 2.0)),
            Err(GimbalError::NotUnit(_))
        ));
    }

    #[test]
    fn rotation_matches_closed_form_normal() {
        let a = md(0.4, -1.1);
        let n = marker_rotation(a) * Vector3::z();
        assert!((n - marker_normal(a)).norm() < 1e-12);
    }

    #[test]
    fn servo_examples() {
        let s = ServoState::at_rest(ServoLimits::default());
        let cmd = MotorDeltas {
            d_theta_a: 0.03,
            d_theta_b: -0.05,
        };
        let n = servo_step(s, cmd, 0.01);
        assert_eq!((n.angle_a, n.angle_b), (0.03, -0.05));

        let n = servo_step(
            s,
            MotorDeltas {
                d_theta_a: 1.0,
                d_theta_b: -1.0,
            },
            0.01,
        );
        assert!((n.angle_a - 0.06).abs() < 1e-15);
        assert!((n.angle_b + 0.06).abs() < 1e-15);

        let n = servo_step(
            s,
            MotorDeltas {
                d_theta_a: 3.0,
                d_theta_b: -3.0,
            },
            1.0,
        );
        assert_eq!((n.angle_a, n.angle_b), (FRAC_PI_2, -FRAC_PI_2));
    }

    fn arb_gear() -> impl Strategy<Value = GearParams> {
        (0.05f64..5.0, 0.05f64..5.0, 0.05f64..5.0).prop_map(|(a, b, s)| GearParams::new(a, b, s).unwrap())
    }

    proptest! {
        #[test]
        fn forward_inverse_round_trip(p in -PI..PI, c in -PI..PI, g in arb_gear()) {
            let back = marker_deltas(motor_deltas(md(p, c), &g), &g);
            prop_assert!((back.d_theta_p - p).abs() <= 1e-12);
            prop_assert!((back.d_theta_c - c).abs() <= 1e-12);
        }

        #[test]
        fn superposition(p1 in -3.0f64..3.0, c1 in -3.0f64..3.0, p2 in -3.0f64..3.0, c2 in -3.0f64..3.0, k in -2.0f64..2.0, g in arb_gear()) {
            let lhs = motor_deltas(md(p1 + k * p2, c1 + k * c2), &g);
            let a = motor_deltas(md(p1, c1), &g);
            let b = motor_deltas(md(p2, c2), &g);
            prop_assert!((lhs.d_theta_a - (a.d_theta_a + k * b.d_theta_a)).abs() <= 1e-12);
            prop_assert!((lhs.d_theta_b - (a.d_theta_b + k * b.d_theta_b)).abs() <= 1e-12);
        }

        #[test]
        fn symmetric_and_antisymmetric_commands(v in -3.0f64..3.0, n in 0.05f64..5.0, ns in 0.05f64..5.0) {
            let g = GearParams::new(n, n, ns).unwrap();
            let pure_c = motor_deltas(md(0.0, v), &g);
            prop_assert_eq!(pure_c.d_theta_a, -pure_c.d_theta_b);
            let pure_p = motor_deltas(md(v, 0.0), &g);
            prop_assert_eq!(pure_p.d_theta_a, pure_p.d_theta_b);
        }

        #[test]
        fn correction_reaches_target(x in -1.0f64..1.0, y in -0.99f64..0.99, z in -1.0f64..1.0) {
            let v = Vector3::new(x, y, z);
            prop_assume!(v.norm() > 1e-3);
            let t = v.normalize();
            prop_assume!(t.y.abs() < 1.0 - 1e-6);
            let a = correction_angles(&t).unwrap();
            prop_assert!((marker_rotation(a) * Vector3::z() - t).norm() <= 1e-9);
        }
    }
}
