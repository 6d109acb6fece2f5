//! Planar vectors, oriented rectangles and the separating-axis collision test.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis length tolerance accepted by [`OrientedBox::project`].
pub const UNIT_AXIS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Unit vector pointing along `angle` (radians, counterclockwise from +x).
    pub fn from_angle(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self { x: c, y: s }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3D cross product; positive when `other` lies to the left.
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    /// Counterclockwise rotation by `angle`.
    pub fn rotated(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    /// Left-hand normal (rotated by +90°).
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Maps any angle into (-π, π].
pub fn wrap_to_pi(angle: f64) -> f64 {
    let mut a = (angle + PI).rem_euclid(2.0 * PI) - PI;
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Closed scalar range produced by projecting a shape on an axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    /// Disjoint only when a strict gap exists; shared endpoints overlap.
    pub fn overlaps(&self, other: &Interval) -> bool {
        !(self.hi < other.lo || other.hi < self.lo)
    }
}

/// Rotated rectangle footprint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    pub center: Vec2,
    pub half_length: f64,
    pub half_width: f64,
    pub heading: f64,
}

impl OrientedBox {
    /// Validating constructor; the heading is wrapped into (-π, π].
    pub fn new(center: Vec2, half_length: f64, half_width: f64, heading: f64) -> Result<Self> {
        if !(half_length > 0.0 && half_width > 0.0) || !center.is_finite() || !heading.is_finite() {
            return Err(Error::Contract(format!(
                "invalid box: center {center:?}, half extents ({half_length}, {half_width}), heading {heading}"
            )));
        }
        Ok(Self {
            center,
            half_length,
            half_width,
            heading: wrap_to_pi(heading),
        })
    }

    /// Unit vectors along the box's length and width directions.
    pub fn axes(&self) -> [Vec2; 2] {
        let along = Vec2::from_angle(self.heading);
        [along, along.perp()]
    }

    /// World-space corners in counterclockwise order, starting front-left.
    pub fn corners(&self) -> [Vec2; 4] {
        let [u, n] = self.axes();
        let l = u * self.half_length;
        let w = n * self.half_width;
        let c = self.center;
        [c + l + w, c - l + w, c - l - w, c + l - w]
    }

    /// Projection of the four corners on a unit `axis`.
    pub fn project(&self, axis: Vec2) -> Result<Interval> {
        if (axis.norm() - 1.0).abs() > UNIT_AXIS_TOLERANCE {
            return Err(Error::Contract(format!(
                "projection axis must be unit length, got |{axis:?}| = {}",
                axis.norm()
            )));
        }
        Ok(self.project_unchecked(axis))
    }

    fn project_unchecked(&self, axis: Vec2) -> Interval {
        let corners = self.corners();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for c in corners {
            let d = c.dot(axis);
            lo = lo.min(d);
            hi = hi.max(d);
        }
        Interval { lo, hi }
    }

    /// Point containment, boundary inclusive.
    pub fn contains(&self, p: Vec2) -> bool {
        let [u, n] = self.axes();
        let d = p - self.center;
        d.dot(u).abs() <= self.half_length && d.dot(n).abs() <= self.half_width
    }

    /// Radius of the circumscribed circle.
    pub fn bounding_radius(&self) -> f64 {
        self.half_length.hypot(self.half_width)
    }
}

/// Separating-axis test between two rectangles. Touching counts as intersecting.
pub fn sat_intersects(a: &OrientedBox, b: &OrientedBox) -> bool {
    let [a0, a1] = a.axes();
    let [b0, b1] = b.axes();
    [a0, a1, b0, b1].into_iter().all(|axis| {
        a.project_unchecked(axis)
            .overlaps(&b.project_unchecked(axis))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;
    use std::f64::consts::FRAC_PI_4;

    fn bx(x: f64, y: f64, hl: f64, hw: f64, h: f64) -> OrientedBox {
        OrientedBox::new(Vec2::new(x, y), hl, hw, h).unwrap()
    }

    fn same_set(got: [Vec2; 4], want: [(f64, f64); 4]) {
        for (wx, wy) in want {
            assert!(
                got.iter()
                    .any(|c| (c.x - wx).abs() < 1e-12 && (c.y - wy).abs() < 1e-12),
                "missing corner ({wx}, {wy}) in {got:?}"
            );
        }
    }

    #[test]
    fn corners_axis_aligned() {
        let b = bx(0.0, 0.0, 1.0, 0.5, 0.0);
        same_set(
            b.corners(),
            [(1.0, 0.5), (-1.0, 0.5), (-1.0, -0.5), (1.0, -0.5)],
        );
    }

    #[test]
    fn corners_quarter_turn() {
        let b = bx(0.0, 0.0, 1.0, 0.5, FRAC_PI_2);
        same_set(
            b.corners(),
            [(-0.5, 1.0), (-0.5, -1.0), (0.5, -1.0), (0.5, 1.0)],
        );
    }

    #[test]
    fn corners_eighth_turn_offset_center() {
        // Hand-evaluated rotation matrix: R(π/4)·(±1, ±0.5) + (2, 3).
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let want = [
            (2.0 + s * (1.0 - 0.5), 3.0 + s * (1.0 + 0.5)),
            (2.0 + s * (-1.0 - 0.5), 3.0 + s * (-1.0 + 0.5)),
            (2.0 + s * (-1.0 + 0.5), 3.0 + s * (-1.0 - 0.5)),
            (2.0 + s * (1.0 + 0.5), 3.0 + s * (1.0 - 0.5)),
        ];
        let b = bx(2.0, 3.0, 1.0, 0.5, FRAC_PI_4);
        let got = b.corners();
        for (c, (wx, wy)) in got.iter().zip(want) {
            assert!((c.x - wx).abs() < 1e-12 && (c.y - wy).abs() < 1e-12);
        }
    }

    #[test]
    fn corners_are_counterclockwise() {
        let b = bx(1.0, -2.0, 2.5, 1.0, 2.2);
        let c = b.corners();
        for i in 0..4 {
            let e1 = c[(i + 1) % 4] - c[i];
            let e2 = c[(i + 2) % 4] - c[(i + 1) % 4];
            assert!(e1.cross(e2) > 0.0);
        }
    }

    #[test]
    fn projection_of_unit_square() {
        let b = bx(0.0, 0.0, 0.5, 0.5, 0.0);
        assert_eq!(
            b.project(Vec2::new(1.0, 0.0)).unwrap(),
            Interval { lo: -0.5, hi: 0.5 }
        );
        assert_eq!(
            b.project(Vec2::new(0.0, 1.0)).unwrap(),
            Interval { lo: -0.5, hi: 0.5 }
        );
    }

    #[test]
    fn projection_matches_corner_enumeration() {
        let b = bx(1.5, -0.5, 2.0, 0.7, 0.9);
        let axis = Vec2::new(1.0, 1.0) * std::f64::consts::FRAC_1_SQRT_2;
        let got = b.project(axis).unwrap();
        let dots: Vec<f64> = b
            .corners()
            .iter()
            .map(|c| c.x * axis.x + c.y * axis.y)
            .collect();
        let lo = dots.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = dots.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((got.lo - lo).abs() < 1e-12 && (got.hi - hi).abs() < 1e-12);
    }

    #[test]
    fn projection_rejects_non_unit_axis() {
        let b = bx(0.0, 0.0, 1.0, 1.0, 0.0);
        assert!(matches!(
            b.project(Vec2::new(2.0, 0.0)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn invalid_box_rejected() {
        assert!(OrientedBox::new(Vec2::ZERO, 0.0, 1.0, 0.0).is_err());
        assert!(OrientedBox::new(Vec2::new(f64::NAN, 0.0), 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn separated_squares() {
        let a = bx(0.0, 0.0, 0.5, 0.5, 0.0);
        let b = bx(3.0, 0.0, 0.5, 0.5, 0.0);
        assert!(!sat_intersects(&a, &b));
    }

    #[test]
    fn identical_boxes_intersect() {
        let a = bx(4.0, 1.0, 2.5, 1.0, 0.3);
        assert!(sat_intersects(&a, &a));
    }

    #[test]
    fn touching_edges_intersect() {
        let a = bx(0.0, 0.0, 0.5, 0.5, 0.0);
        let b = bx(1.0, 0.0, 0.5, 0.5, 0.0);
        assert!(sat_intersects(&a, &b));
    }

    #[test]
    fn rotated_corner_penetration() {
        let a = bx(0.0, 0.0, 1.0, 1.0, 0.0);
        // Diamond whose corner sits 0.1 m inside a's right edge.
        let r = std::f64::consts::SQRT_2;
        let b = bx(1.0 + r - 0.1, 0.0, 1.0, 1.0, FRAC_PI_4);
        assert!(sat_intersects(&a, &b));
        let c = bx(1.0 + r + 0.1, 0.0, 1.0, 1.0, FRAC_PI_4);
        assert!(!sat_intersects(&a, &c));
    }

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_to_pi(PI), PI);
        assert_eq!(wrap_to_pi(-PI), PI);
        assert!((wrap_to_pi(3.0 * PI / 2.0) + FRAC_PI_2).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_box() -> impl Strategy<Value = OrientedBox> {
            (
                -20.0..20.0f64,
                -20.0..20.0f64,
                0.5..3.0f64,
                0.5..3.0f64,
                -PI..PI,
            )
                .prop_map(|(x, y, hl, hw, h)| bx(x, y, hl, hw, h))
        }

        fn moved(b: &OrientedBox, f: impl Fn(Vec2) -> Vec2, dh: f64) -> OrientedBox {
            bx(
                f(b.center).x,
                f(b.center).y,
                b.half_length,
                b.half_width,
                b.heading + dh,
            )
        }

        /// Smallest gap over all four axes (negative when overlapping on every axis).
        fn margin(a: &OrientedBox, b: &OrientedBox) -> f64 {
            let [a0, a1] = a.axes();
            let [b0, b1] = b.axes();
            [a0, a1, b0, b1]
                .iter()
                .map(|&ax| {
                    let p = a.project_unchecked(ax);
                    let q = b.project_unchecked(ax);
                    (q.lo - p.hi).max(p.lo - q.hi)
                })
                .fold(f64::NEG_INFINITY, f64::max)
        }

        proptest! {
            #[test]
            fn symmetric(a in arb_box(), b in arb_box()) {
                prop_assert_eq!(sat_intersects(&a, &b), sat_intersects(&b, &a));
            }

            #[test]
            fn translation_invariant(a in arb_box(), b in arb_box(), dx in -50.0..50.0f64, dy in -50.0..50.0f64) {
                prop_assume!(margin(&a, &b).abs() > 1e-9);
                let t = Vec2::new(dx, dy);
                let a2 = moved(&a, |c| c + t, 0.0);
                let b2 = moved(&b, |c| c + t, 0.0);
                prop_assert_eq!(sat_intersects(&a, &b), sat_intersects(&a2, &b2));
            }

            #[test]
            fn rotation_invariant(a in arb_box(), b in arb_box(), px in -10.0..10.0f64, py in -10.0..10.0f64, th in -PI..PI) {
                prop_assume!(margin(&a, &b).abs() > 1e-9);
                let pivot = Vec2::new(px, py);
                let rot = |c: Vec2| pivot + (c - pivot).rotated(th);
                let a2 = moved(&a, rot, th);
                let b2 = moved(&b, rot, th);
                prop_assert_eq!(sat_intersects(&a, &b), sat_intersects(&a2, &b2));
            }

            #[test]
            fn contained_box_intersects(a in arb_box(), frac in 0.05..0.45f64, h in -PI..PI) {
                let inner = bx(a.center.x, a.center.y, a.half_width.min(a.half_length) * frac,
                    a.half_width.min(a.half_length) * frac, h);
                prop_assert!(inner.corners().iter().all(|&c| a.contains(c)));
                prop_assert!(sat_intersects(&a, &inner));
            }
        }
    }
}
