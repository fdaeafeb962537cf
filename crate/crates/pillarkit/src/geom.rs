//! Rotated-box geometry: BEV corners, rotated IoU, 3D IoU, heading error,
//! and rotated non-maximum suppression.
//!
//! Boxes are gravity-aligned. The only rotation is the yaw about the vertical
//! axis, so a box's bird's-eye-view footprint is a rotated rectangle and its
//! vertical extent is a plain interval. That makes the 3D IoU separable:
//! polygon overlap in BEV times interval overlap in z.
//!
//! All functions here are pure and safe to call concurrently.

use crate::{Error, Result};
use std::f64::consts::{PI, TAU};

/// Polygon slivers below this area (m²) are treated as empty intersections.
const SLIVER_AREA: f64 = 1e-12;

/// Distance tolerance (meters) for the inside-of-edge test during clipping.
/// Coordinates are meters at scene scale, so an absolute tolerance is safe.
const CLIP_EPS: f64 = 1e-9;

/// A 3D box: center, size, and yaw (counter-clockwise from +x, radians).
///
/// Invariants: positive sizes, finite fields, yaw in `[-pi, pi)`. Use
/// [`Box7::new`] to get normalization and validation; constructing the struct
/// literally bypasses both.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box7 {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub yaw: f64,
}

impl Box7 {
    /// Validate fields and normalize yaw into `[-pi, pi)`.
    pub fn new(
        cx: f64,
        cy: f64,
        cz: f64,
        length: f64,
        width: f64,
        height: f64,
        yaw: f64,
    ) -> Result<Self> {
        let fields = [cx, cy, cz, length, width, height, yaw];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!(
                "box has non-finite field: {fields:?}"
            )));
        }
        if length <= 0.0 || width <= 0.0 || height <= 0.0 {
            return Err(Error::Config(format!(
                "box sizes must be positive, got ({length}, {width}, {height})"
            )));
        }
        Ok(Box7 {
            cx,
            cy,
            cz,
            length,
            width,
            height,
            yaw: normalize_yaw(yaw),
        })
    }

    pub fn bev_area(&self) -> f64 {
        self.length * self.width
    }

    pub fn volume(&self) -> f64 {
        self.length * self.width * self.height
    }

    pub fn z_min(&self) -> f64 {
        self.cz - self.height * 0.5
    }

    pub fn z_max(&self) -> f64 {
        self.cz + self.height * 0.5
    }

    /// Radius of the circle circumscribing the BEV footprint.
    pub fn bev_radius(&self) -> f64 {
        0.5 * (self.length * self.length + self.width * self.width).sqrt()
    }

    /// True when `(px, py)` lies inside (or on) the BEV footprint.
    pub fn contains_bev(&self, px: f64, py: f64) -> bool {
        let (sin, cos) = self.yaw.sin_cos();
        let dx = px - self.cx;
        let dy = py - self.cy;
        // rotate into the box frame
        let lx = dx * cos + dy * sin;
        let ly = -dx * sin + dy * cos;
        lx.abs() <= self.length * 0.5 && ly.abs() <= self.width * 0.5
    }

    /// True when the 3D point lies inside the box (footprint and z-interval
    /// both inclusive).
    pub fn contains(&self, px: f64, py: f64, pz: f64) -> bool {
        pz >= self.z_min() && pz <= self.z_max() && self.contains_bev(px, py)
    }

    /// Lexicographic field ordering; used to make symmetric ops bit-exact.
    fn field_cmp(&self, other: &Box7) -> std::cmp::Ordering {
        let a = [
            self.cx,
            self.cy,
            self.cz,
            self.length,
            self.width,
            self.height,
            self.yaw,
        ];
        let b = [
            other.cx, other.cy, other.cz, other.length, other.width, other.height, other.yaw,
        ];
        for (x, y) in a.iter().zip(b.iter()) {
            let ord = x.total_cmp(y);
            if ord != std::cmp::Ordering::Equal {
                return ord;
            }
        }
        std::cmp::Ordering::Equal
    }
}

/// A decoded object: box, class, and confidence in `[0, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct Detection {
    pub bbox: Box7,
    pub class_id: usize,
    pub score: f64,
}

/// Wrap an angle into `[-pi, pi)`.
pub fn normalize_yaw(yaw: f64) -> f64 {
    let wrapped = (yaw + PI).rem_euclid(TAU) - PI;
    // rem_euclid can land exactly on TAU after rounding for inputs just
    // below -pi + 2k*pi; fold that back.
    if wrapped >= PI {
        wrapped - TAU
    } else {
        wrapped
    }
}

/// Absolute heading difference in `[0, pi]`.
pub fn heading_error(yaw_a: f64, yaw_b: f64) -> f64 {
    normalize_yaw(yaw_a - yaw_b).abs()
}

/// The four BEV corners in counter-clockwise order. Their centroid is the
/// box center.
pub fn bev_corners(b: &Box7) -> [[f64; 2]; 4] {
    let hl = b.length * 0.5;
    let hw = b.width * 0.5;
    let (sin, cos) = b.yaw.sin_cos();
    let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
    local.map(|[x, y]| [b.cx + x * cos - y * sin, b.cy + x * sin + y * cos])
}

/// Shoelace area; positive for counter-clockwise rings.
fn polygon_area(pts: &[[f64; 2]]) -> f64 {
    if pts.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..pts.len() {
        let [x0, y0] = pts[i];
        let [x1, y1] = pts[(i + 1) % pts.len()];
        acc += x0 * y1 - x1 * y0;
    }
    acc * 0.5
}

/// Sutherland–Hodgman clip of a convex `subject` ring against a convex
/// counter-clockwise `clip` ring.
fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]; 4]) -> Vec<[f64; 2]> {
    let mut poly: Vec<[f64; 2]> = subject.to_vec();
    let mut next: Vec<[f64; 2]> = Vec::with_capacity(8);
    for i in 0..clip.len() {
        if poly.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let ex = b[0] - a[0];
        let ey = b[1] - a[1];
        let edge_len = (ex * ex + ey * ey).sqrt();
        let tol = -CLIP_EPS * edge_len;
        // signed = cross(edge, p - a); >= tol means on the kept side
        let signed = |p: [f64; 2]| ex * (p[1] - a[1]) - ey * (p[0] - a[0]);

        next.clear();
        let mut prev = *poly.last().unwrap();
        let mut prev_side = signed(prev);
        for &cur in poly.iter() {
            let cur_side = signed(cur);
            if cur_side >= tol {
                if prev_side < tol {
                    next.push(edge_intersection(prev, cur, prev_side, cur_side));
                }
                next.push(cur);
            } else if prev_side >= tol {
                next.push(edge_intersection(prev, cur, prev_side, cur_side));
            }
            prev = cur;
            prev_side = cur_side;
        }
        std::mem::swap(&mut poly, &mut next);
    }
    poly
}

/// Intersection of segment `prev -> cur` with the clip line, parameterized by
/// the two signed distances (which have opposite signs by construction).
fn edge_intersection(prev: [f64; 2], cur: [f64; 2], d_prev: f64, d_cur: f64) -> [f64; 2] {
    let t = d_prev / (d_prev - d_cur);
    [
        prev[0] + t * (cur[0] - prev[0]),
        prev[1] + t * (cur[1] - prev[1]),
    ]
}

/// Area of the BEV footprint intersection of two boxes.
fn bev_intersection_area(a: &Box7, b: &Box7) -> f64 {
    // cheap reject before clipping
    let dx = a.cx - b.cx;
    let dy = a.cy - b.cy;
    let reach = a.bev_radius() + b.bev_radius();
    if dx * dx + dy * dy > reach * reach {
        return 0.0;
    }
    let ca = bev_corners(a);
    let cb = bev_corners(b);
    let inter = clip_convex(&ca, &cb);
    let area = polygon_area(&inter);
    if area < SLIVER_AREA {
        0.0
    } else {
        area
    }
}

/// Rotated IoU of the BEV footprints, in `[0, 1]`.
///
/// The argument pair is ordered canonically before clipping so that swapping
/// the arguments runs the identical float sequence: the result is exactly
/// symmetric, not just symmetric up to rounding.
pub fn rotated_bev_iou(a: &Box7, b: &Box7) -> f64 {
    let (p, q) = if a.field_cmp(b) == std::cmp::Ordering::Greater {
        (b, a)
    } else {
        (a, b)
    };
    let inter = bev_intersection_area(p, q);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = p.bev_area() + q.bev_area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// 3D IoU: BEV intersection area times vertical overlap, over the union
/// volume. In `[0, 1]`.
pub fn iou_3d(a: &Box7, b: &Box7) -> f64 {
    let (p, q) = if a.field_cmp(b) == std::cmp::Ordering::Greater {
        (b, a)
    } else {
        (a, b)
    };
    let dz = p.z_max().min(q.z_max()) - p.z_min().max(q.z_min());
    if dz <= 0.0 {
        return 0.0;
    }
    let inter_area = bev_intersection_area(p, q);
    if inter_area <= 0.0 {
        return 0.0;
    }
    let inter = inter_area * dz;
    let union = p.volume() + q.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Greedy rotated NMS. Returns kept indices in descending-score order.
///
/// Detections are visited by descending score (ties broken by lower input
/// index, so the result is deterministic). A detection is suppressed iff its
/// rotated BEV IoU with an already-kept detection strictly exceeds
/// `iou_threshold`; with `per_class` set, only kept detections of the same
/// class suppress.
pub fn nms_rotated(dets: &[Detection], iou_threshold: f64, per_class: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| dets[j].score.total_cmp(&dets[i].score).then(i.cmp(&j)));
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        let suppressed = kept.iter().any(|&k| {
            (!per_class || dets[k].class_id == dets[i].class_id)
                && rotated_bev_iou(&dets[k].bbox, &dets[i].bbox) > iou_threshold
        });
        if !suppressed {
            kept.push(i);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use crate::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn boxed(cx: f64, cy: f64, l: f64, w: f64, yaw: f64) -> Box7 {
        Box7::new(cx, cy, 0.0, l, w, 1.0, yaw).unwrap()
    }

    fn random_box(rng: &mut crate::Rng) -> Box7 {
        Box7::new(
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(0.5..5.0),
            rng.gen_range(0.5..5.0),
            rng.gen_range(0.5..3.0),
            rng.gen_range(-PI..PI),
        )
        .unwrap()
    }

    #[test]
    fn corners_unit_box() {
        let c = bev_corners(&boxed(0.0, 0.0, 1.0, 1.0, 0.0));
        assert_eq!(c[0], [0.5, 0.5]);
        assert_eq!(c[1], [-0.5, 0.5]);
        assert_eq!(c[2], [-0.5, -0.5]);
        assert_eq!(c[3], [0.5, -0.5]);
    }

    #[test]
    fn corners_quarter_turn_same_set() {
        let a = bev_corners(&boxed(0.0, 0.0, 1.0, 1.0, 0.0));
        let b = bev_corners(&boxed(0.0, 0.0, 1.0, 1.0, PI / 2.0));
        for corner in b {
            assert!(a
                .iter()
                .any(|c| (c[0] - corner[0]).abs() < 1e-12 && (c[1] - corner[1]).abs() < 1e-12));
        }
    }

    #[test]
    fn corners_match_rotation_matrix() {
        // box (1,2,0, 4,2,1, pi/6): rotate (±2, ±1) by pi/6, then translate
        let b = Box7::new(1.0, 2.0, 0.0, 4.0, 2.0, 1.0, PI / 6.0).unwrap();
        let got = bev_corners(&b);
        let (s, c) = (PI / 6.0).sin_cos();
        let local = [[2.0, 1.0], [-2.0, 1.0], [-2.0, -1.0], [2.0, -1.0]];
        for (g, [lx, ly]) in got.iter().zip(local.iter()) {
            let ex = 1.0 + lx * c - ly * s;
            let ey = 2.0 + lx * s + ly * c;
            assert!((g[0] - ex).abs() < 1e-12 && (g[1] - ey).abs() < 1e-12);
        }
    }

    #[test]
    fn corner_centroid_is_center() {
        let mut rng = rng_from_seed(11);
        for _ in 0..200 {
            let b = random_box(&mut rng);
            let c = bev_corners(&b);
            let mx = c.iter().map(|p| p[0]).sum::<f64>() / 4.0;
            let my = c.iter().map(|p| p[1]).sum::<f64>() / 4.0;
            assert!((mx - b.cx).abs() < 1e-9 && (my - b.cy).abs() < 1e-9);
        }
    }

    #[test]
    fn iou_identity_and_disjoint() {
        let a = boxed(0.3, -0.4, 2.0, 1.0, 0.7);
        assert_eq!(rotated_bev_iou(&a, &a), 1.0);
        let far = boxed(100.0, -0.4, 1.0, 1.0, 0.0);
        let near = boxed(0.0, -0.4, 1.0, 1.0, 0.0);
        assert_eq!(rotated_bev_iou(&near, &far), 0.0);
    }

    #[test]
    fn iou_axis_aligned_overlap() {
        // two 2x2 squares offset by (1, 0): inter 2, union 6
        let a = boxed(0.0, 0.0, 2.0, 2.0, 0.0);
        let b = boxed(1.0, 0.0, 2.0, 2.0, 0.0);
        assert!((rotated_bev_iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn iou_monte_carlo_spot_check() {
        let mut rng = rng_from_seed(42);
        for _ in 0..25 {
            let a = random_box(&mut rng);
            let b = random_box(&mut rng);
            let mc = oracle::mc_bev_iou(&a, &b, 200_000, &mut rng);
            assert!(
                (rotated_bev_iou(&a, &b) - mc).abs() < 5e-3,
                "bev iou disagrees with sampling: {} vs {}",
                rotated_bev_iou(&a, &b),
                mc
            );
        }
    }

    #[test]
    fn iou3d_identity_and_intervals() {
        let a = Box7::new(0.0, 0.0, 0.5, 2.0, 2.0, 1.0, 0.3).unwrap();
        assert_eq!(iou_3d(&a, &a), 1.0);
        // same footprint, vertical ranges [0,1] and [0.5,1.5]
        let b = Box7::new(0.0, 0.0, 1.0, 2.0, 2.0, 1.0, 0.3).unwrap();
        assert!((iou_3d(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        // equal vertical extent reduces to the BEV value
        let c = Box7::new(0.4, -0.2, 0.5, 1.5, 2.5, 1.0, -0.9).unwrap();
        assert!((iou_3d(&a, &c) - rotated_bev_iou(&a, &c)).abs() < 1e-12);
    }

    #[test]
    fn iou3d_monte_carlo_spot_check() {
        let mut rng = rng_from_seed(7);
        for _ in 0..25 {
            let a = random_box(&mut rng);
            let b = random_box(&mut rng);
            let mc = oracle::mc_iou_3d(&a, &b, 200_000, &mut rng);
            assert!((iou_3d(&a, &b) - mc).abs() < 5e-3);
        }
    }

    #[test]
    fn heading_error_cases() {
        assert_eq!(heading_error(0.3, 0.3), 0.0);
        assert!((heading_error(0.0, PI) - PI).abs() < 1e-12);
        assert!((heading_error(3.0, -3.0) - (TAU - 6.0)).abs() < 1e-12);
    }

    #[test]
    fn nms_basics() {
        let d = |score, cx| Detection {
            bbox: boxed(cx, 0.0, 2.0, 2.0, 0.0),
            class_id: 0,
            score,
        };
        assert_eq!(nms_rotated(&[d(0.7, 0.0)], 0.5, true), vec![0]);
        // identical boxes: only the higher score survives
        assert_eq!(nms_rotated(&[d(0.8, 0.0), d(0.9, 0.0)], 0.5, true), vec![1]);
        // equal scores tie-break on input index
        assert_eq!(nms_rotated(&[d(0.8, 0.0), d(0.8, 0.0)], 0.5, true), vec![0]);
        // different classes never suppress each other when per_class is set
        let mut cross = vec![d(0.9, 0.0), d(0.8, 0.0)];
        cross[1].class_id = 1;
        assert_eq!(nms_rotated(&cross, 0.5, true), vec![0, 1]);
        assert_eq!(nms_rotated(&cross, 0.5, false), vec![0]);
    }

    #[test]
    fn nms_matches_reference_oracle() {
        let mut rng = rng_from_seed(123);
        for _ in 0..50 {
            let n = rng.gen_range(1..=200);
            let dets: Vec<Detection> = (0..n)
                .map(|_| Detection {
                    bbox: random_box(&mut rng),
                    class_id: rng.gen_range(0..3),
                    score: rng.gen_range(0.0..1.0),
                })
                .collect();
            let thr = rng.gen_range(0.1..0.9);
            assert_eq!(
                nms_rotated(&dets, thr, true),
                oracle::nms_reference(&dets, thr, true)
            );
        }
    }

    #[test]
    fn box_validation() {
        assert!(Box7::new(0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0).is_err());
        assert!(Box7::new(f64::NAN, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0).is_err());
        let b = Box7::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 3.0 * PI).unwrap();
        assert!((-PI..PI).contains(&b.yaw));
    }

    proptest! {
        #[test]
        fn iou_symmetric_exactly(
            ax in -3.0f64..3.0, ay in -3.0f64..3.0,
            al in 0.5f64..4.0, aw in 0.5f64..4.0, ayaw in -3.1f64..3.1,
            bx in -3.0f64..3.0, by in -3.0f64..3.0,
            bl in 0.5f64..4.0, bw in 0.5f64..4.0, byaw in -3.1f64..3.1,
        ) {
            let a = boxed(ax, ay, al, aw, ayaw);
            let b = boxed(bx, by, bl, bw, byaw);
            let ab = rotated_bev_iou(&a, &b);
            prop_assert!(ab.to_bits() == rotated_bev_iou(&b, &a).to_bits());
            prop_assert!((0.0..=1.0).contains(&ab));
            let v = iou_3d(&a, &b);
            prop_assert!(v.to_bits() == iou_3d(&b, &a).to_bits());
            prop_assert!((0.0..=1.0).contains(&v));
        }

        #[test]
        fn iou_yaw_shift_invariant(
            ax in -2.0f64..2.0, ay in -2.0f64..2.0,
            al in 0.5f64..4.0, aw in 0.5f64..4.0, ayaw in -3.1f64..3.1,
            bx in -2.0f64..2.0, by in -2.0f64..2.0,
            bl in 0.5f64..4.0, bw in 0.5f64..4.0, byaw in -3.1f64..3.1,
            shift in -3.1f64..3.1,
        ) {
            let a = boxed(ax, ay, al, aw, ayaw);
            let b = boxed(bx, by, bl, bw, byaw);
            // rotate both boxes about the origin by `shift`
            let rot = |b: &Box7| {
                let (s, c) = shift.sin_cos();
                boxed(b.cx * c - b.cy * s, b.cx * s + b.cy * c, b.length, b.width, b.yaw + shift)
            };
            let before = rotated_bev_iou(&a, &b);
            let after = rotated_bev_iou(&rot(&a), &rot(&b));
            prop_assert!((before - after).abs() < 1e-6);
        }
    }
}
