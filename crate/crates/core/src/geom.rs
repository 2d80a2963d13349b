//! Planar vector math and closest-approach geometry.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

/// A 2D vector. Used for positions (m) and velocities (m/s).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Unit vector at angle `theta` from the x-axis.
    #[inline]
    pub fn from_angle(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self::new(c, s)
    }

    #[inline]
    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product.
    #[inline]
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    #[inline]
    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Unit vector in the same direction, or zero for the zero vector.
    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        if n > 0.0 {
            self / n
        } else {
            Vec2::ZERO
        }
    }

    /// Counter-clockwise rotation by `theta`.
    #[inline]
    pub fn rotated(self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    /// Left-hand perpendicular.
    #[inline]
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    #[inline]
    pub fn distance(self, o: Vec2) -> f64 {
        (self - o).norm()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    #[inline]
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    #[inline]
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    #[inline]
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl SubAssign for Vec2 {
    #[inline]
    fn sub_assign(&mut self, o: Vec2) {
        self.x -= o.x;
        self.y -= o.y;
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    #[inline]
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Mul<Vec2> for f64 {
    type Output = Vec2;
    #[inline]
    fn mul(self, v: Vec2) -> Vec2 {
        v * self
    }
}

impl Div<f64> for Vec2 {
    type Output = Vec2;
    #[inline]
    fn div(self, s: f64) -> Vec2 {
        Vec2::new(self.x / s, self.y / s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    #[inline]
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(theta: f64) -> f64 {
    let mut a = theta % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Time in `[0, horizon]` at which `offset + tau * rel_vel` is shortest.
#[inline]
pub fn closest_approach_time(offset: Vec2, rel_vel: Vec2, horizon: f64) -> f64 {
    let vv = rel_vel.norm_sq();
    if vv <= 0.0 {
        return 0.0;
    }
    (-offset.dot(rel_vel) / vv).clamp(0.0, horizon)
}

/// Minimum surface-to-surface distance between two discs moving at constant
/// velocity over `[0, dt]`. Negative values mean overlap.
pub fn min_separation(
    p: Vec2,
    v: Vec2,
    p_other: Vec2,
    v_other: Vec2,
    r: f64,
    r_other: f64,
    dt: f64,
) -> f64 {
    let offset = p_other - p;
    let rel_vel = v_other - v;
    let tau = closest_approach_time(offset, rel_vel, dt);
    (offset + rel_vel * tau).norm() - (r + r_other)
}

/// Distance from `target` to the segment traced by `start + tau * vel` for
/// `tau` in `[0, dt]`, with the minimizing `tau`.
pub fn segment_approach(start: Vec2, vel: Vec2, dt: f64, target: Vec2) -> (f64, f64) {
    let offset = target - start;
    // closest_approach_time minimizes |offset + tau*rel|; the target is fixed
    // and the mover approaches, so the relative velocity is -vel.
    let tau = closest_approach_time(offset, -vel, dt);
    ((offset - vel * tau).norm(), tau)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(0.5 + 4.0 * PI) - 0.5).abs() < 1e-12);
        assert!((wrap_angle(-0.5 - 2.0 * PI) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn static_discs() {
        let d = min_separation(
            Vec2::ZERO,
            Vec2::ZERO,
            Vec2::new(1.0, 0.0),
            Vec2::ZERO,
            0.3,
            0.3,
            1.0,
        );
        assert!((d - 0.4).abs() < 1e-12);
    }

    #[test]
    fn head_on_meets_at_end_of_window() {
        let d = min_separation(
            Vec2::ZERO,
            Vec2::new(1.0, 0.0),
            Vec2::new(2.0, 0.0),
            Vec2::new(-1.0, 0.0),
            0.3,
            0.3,
            1.0,
        );
        assert!((d + 0.6).abs() < 1e-12);
    }

    #[test]
    fn receding_uses_start() {
        let d = min_separation(
            Vec2::ZERO,
            Vec2::new(-1.0, 0.0),
            Vec2::new(2.0, 0.0),
            Vec2::new(1.0, 0.0),
            0.3,
            0.3,
            1.0,
        );
        assert!((d - 1.4).abs() < 1e-12);
    }

    #[test]
    fn segment_approach_passes_through() {
        let (d, tau) = segment_approach(Vec2::ZERO, Vec2::new(1.0, 0.0), 1.0, Vec2::new(0.4, 0.05));
        assert!((d - 0.05).abs() < 1e-12);
        assert!((tau - 0.4).abs() < 1e-12);
        let (d, tau) = segment_approach(Vec2::ZERO, Vec2::new(1.0, 0.0), 1.0, Vec2::new(3.0, 0.0));
        assert!((d - 2.0).abs() < 1e-12);
        assert_eq!(tau, 1.0);
    }

    #[test]
    fn rotation_matches_matrix() {
        let v = Vec2::new(0.3, -1.2);
        let t = 0.7_f64;
        let r = v.rotated(t);
        assert!((r.x - (t.cos() * 0.3 - t.sin() * -1.2)).abs() < 1e-15);
        assert!((r.y - (t.sin() * 0.3 + t.cos() * -1.2)).abs() < 1e-15);
    }
}
