//! Oriented 3D box geometry: view transforms, rotated IoU (BEV and 3D)
//! and non-maximum suppression.
//!
//! Boxes are parameterized by center, size and a heading angle about the
//! vertical axis. The BEV (bird's-eye view) footprint of a box is a
//! rotated rectangle in the horizontal plane; its intersection with
//! another footprint is computed by exact convex polygon clipping, not by
//! sampling or axis-aligned approximation.
//!
//! Every function here is pure and safe to call concurrently.

use std::cmp::Ordering;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Collinearity tolerance for polygon clipping, in meters.
const CLIP_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("invalid box: {0}")]
    InvalidBox(String),
}

/// Object categories used across the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClassId {
    Vehicle,
    Pedestrian,
    Cyclist,
}

impl ClassId {
    pub const ALL: [ClassId; 3] = [ClassId::Vehicle, ClassId::Pedestrian, ClassId::Cyclist];

    pub fn index(self) -> usize {
        match self {
            ClassId::Vehicle => 0,
            ClassId::Pedestrian => 1,
            ClassId::Cyclist => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<ClassId> {
        ClassId::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassId::Vehicle => "Vehicle",
            ClassId::Pedestrian => "Pedestrian",
            ClassId::Cyclist => "Cyclist",
        }
    }

    pub fn parse(s: &str) -> Option<ClassId> {
        match s {
            "Vehicle" => Some(ClassId::Vehicle),
            "Pedestrian" => Some(ClassId::Pedestrian),
            "Cyclist" => Some(ClassId::Cyclist),
            _ => None,
        }
    }
}

impl std::fmt::Display for ClassId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Normalize an angle into `(-pi, pi]`.
///
/// Angles already in range are returned bit-unchanged so that identity
/// transforms stay exact.
pub fn normalize_yaw(yaw: f64) -> f64 {
    if yaw > -PI && yaw <= PI {
        return yaw;
    }
    let two_pi = 2.0 * PI;
    let mut y = yaw.rem_euclid(two_pi); // [0, 2*pi)
    if y > PI {
        y -= two_pi;
    }
    y
}

/// An oriented 3D bounding box.
///
/// `l` runs along the heading direction, `w` across it, `h` vertically.
/// `yaw` is the heading about the vertical axis, kept in `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub yaw: f64,
}

impl Box3D {
    /// Validating constructor. Degenerate boxes (non-finite fields or any
    /// dimension <= 0) are rejected, never clamped.
    pub fn new(cx: f64, cy: f64, cz: f64, l: f64, w: f64, h: f64, yaw: f64) -> Result<Box3D, GeomError> {
        for (name, v) in [
            ("cx", cx),
            ("cy", cy),
            ("cz", cz),
            ("l", l),
            ("w", w),
            ("h", h),
            ("yaw", yaw),
        ] {
            if !v.is_finite() {
                return Err(GeomError::InvalidBox(format!("{name} is not finite: {v}")));
            }
        }
        if l <= 0.0 || w <= 0.0 || h <= 0.0 {
            return Err(GeomError::InvalidBox(format!(
                "dimensions must be positive, got l={l} w={w} h={h}"
            )));
        }
        Ok(Box3D {
            cx,
            cy,
            cz,
            l,
            w,
            h,
            yaw: normalize_yaw(yaw),
        })
    }

    pub fn center(&self) -> [f64; 3] {
        [self.cx, self.cy, self.cz]
    }

    /// BEV range of the box center from the sensor origin.
    pub fn range(&self) -> f64 {
        self.cx.hypot(self.cy)
    }

    pub fn area_bev(&self) -> f64 {
        self.l * self.w
    }

    pub fn volume(&self) -> f64 {
        self.l * self.w * self.h
    }

    /// Vertical extent as `(bottom, top)`.
    pub fn z_interval(&self) -> (f64, f64) {
        (self.cz - 0.5 * self.h, self.cz + 0.5 * self.h)
    }

    /// Footprint corners in counterclockwise order.
    pub fn corners_bev(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hl = 0.5 * self.l;
        let hw = 0.5 * self.w;
        [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]]
            .map(|[x, y]| [self.cx + c * x - s * y, self.cy + s * x + c * y])
    }

    /// Radius of the circumscribed circle of the footprint.
    pub fn bev_radius(&self) -> f64 {
        0.5 * self.l.hypot(self.w)
    }

    /// A copy with all dimensions scaled by `factor` about the center.
    pub fn enlarged(&self, factor: f64) -> Box3D {
        Box3D {
            l: self.l * factor,
            w: self.w * factor,
            h: self.h * factor,
            ..*self
        }
    }

    /// Whether `p` lies inside the box after enlarging it by `enlarge`
    /// (1.0 tests the box itself). Boundary points count as inside.
    pub fn contains_point(&self, p: [f64; 3], enlarge: f64) -> bool {
        if (p[2] - self.cz).abs() > 0.5 * self.h * enlarge {
            return false;
        }
        let dx = p[0] - self.cx;
        let dy = p[1] - self.cy;
        let (s, c) = self.yaw.sin_cos();
        // rotate the offset into the box frame
        let bx = c * dx + s * dy;
        let by = -s * dx + c * dy;
        bx.abs() <= 0.5 * self.l * enlarge && by.abs() <= 0.5 * self.w * enlarge
    }
}

/// A classified, scored box prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub box3d: Box3D,
    pub class_id: ClassId,
    /// Confidence in `[0, 1]`.
    pub score: f64,
}

impl Detection {
    pub fn new(box3d: Box3D, class_id: ClassId, score: f64) -> Detection {
        debug_assert!((0.0..=1.0).contains(&score), "score out of range: {score}");
        Detection {
            box3d,
            class_id,
            score,
        }
    }
}

/// An invertible flip + rotation acting on points and boxes in the
/// horizontal plane.
///
/// The forward action flips first (negating x and/or y), then rotates
/// about the origin. `inverse()` returns another `ViewTransform` whose
/// forward action undoes this one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewTransform {
    pub flip_x: bool,
    pub flip_y: bool,
    /// Rotation about the vertical axis, radians, applied after the flips.
    pub rotation: f64,
}

impl ViewTransform {
    pub fn new(flip_x: bool, flip_y: bool, rotation: f64) -> ViewTransform {
        ViewTransform {
            flip_x,
            flip_y,
            rotation: normalize_yaw(rotation),
        }
    }

    pub fn identity() -> ViewTransform {
        ViewTransform {
            flip_x: false,
            flip_y: false,
            rotation: 0.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        !self.flip_x && !self.flip_y && self.rotation == 0.0
    }

    /// The inverse view.
    ///
    /// Conjugating a rotation by a single reflection reverses its angle,
    /// so the inverse keeps the same flips and keeps the rotation angle
    /// when exactly one flip is active, negating it otherwise.
    pub fn inverse(&self) -> ViewTransform {
        let rotation = if self.flip_x ^ self.flip_y {
            self.rotation
        } else {
            -self.rotation
        };
        ViewTransform {
            flip_x: self.flip_x,
            flip_y: self.flip_y,
            rotation: normalize_yaw(rotation),
        }
    }

    pub fn apply_point(&self, p: [f64; 3]) -> [f64; 3] {
        let x = if self.flip_x { -p[0] } else { p[0] };
        let y = if self.flip_y { -p[1] } else { p[1] };
        let (s, c) = self.rotation.sin_cos();
        [c * x - s * y, s * x + c * y, p[2]]
    }

    pub fn apply_box(&self, b: &Box3D) -> Box3D {
        let [cx, cy, cz] = self.apply_point([b.cx, b.cy, b.cz]);
        let mut yaw = b.yaw;
        if self.flip_x {
            yaw = PI - yaw;
        }
        if self.flip_y {
            yaw = -yaw;
        }
        Box3D {
            cx,
            cy,
            cz,
            l: b.l,
            w: b.w,
            h: b.h,
            yaw: normalize_yaw(yaw + self.rotation),
        }
    }
}

/// Transform a point list into the view frame. Flips are applied first,
/// then the rotation; z is untouched.
pub fn transform_points(points: &[[f64; 3]], t: &ViewTransform) -> Vec<[f64; 3]> {
    points.iter().map(|&p| t.apply_point(p)).collect()
}

/// Transform a box into the view frame. The center moves like a point and
/// the heading is updated so the heading vector transforms consistently
/// (flip_x sends yaw to pi - yaw, flip_y to -yaw, rotation adds).
pub fn transform_box(b: &Box3D, t: &ViewTransform) -> Box3D {
    t.apply_box(b)
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn edge_intersection(p: [f64; 2], q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let d1 = cross(a, b, p);
    let d2 = cross(a, b, q);
    let denom = d1 - d2;
    if denom.abs() < 1e-300 {
        return p;
    }
    let t = d1 / denom;
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Clip `poly` by the half-plane on the left of the directed edge a -> b.
fn clip_half_plane(poly: &[[f64; 2]], a: [f64; 2], b: [f64; 2]) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(poly.len() + 1);
    let n = poly.len();
    for i in 0..n {
        let cur = poly[i];
        let prev = poly[(i + n - 1) % n];
        let cur_in = cross(a, b, cur) >= -CLIP_EPS;
        let prev_in = cross(a, b, prev) >= -CLIP_EPS;
        if cur_in {
            if !prev_in {
                out.push(edge_intersection(prev, cur, a, b));
            }
            out.push(cur);
        } else if prev_in {
            out.push(edge_intersection(prev, cur, a, b));
        }
    }
    out
}

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let [x0, y0] = poly[i];
        let [x1, y1] = poly[(i + 1) % poly.len()];
        acc += x0 * y1 - x1 * y0;
    }
    0.5 * acc.abs()
}

/// Exact intersection area of two box footprints (Sutherland-Hodgman
/// clipping of one rectangle against the other).
pub fn bev_intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    let dx = a.cx - b.cx;
    let dy = a.cy - b.cy;
    let reach = a.bev_radius() + b.bev_radius();
    if dx * dx + dy * dy > reach * reach {
        return 0.0;
    }
    let clip = b.corners_bev();
    let mut poly: Vec<[f64; 2]> = a.corners_bev().to_vec();
    for i in 0..4 {
        poly = clip_half_plane(&poly, clip[i], clip[(i + 1) % 4]);
        if poly.is_empty() {
            return 0.0;
        }
    }
    polygon_area(&poly)
}

/// Intersection-over-union of the two yaw-rotated footprints. Symmetric,
/// in `[0, 1]`, zero for disjoint footprints.
pub fn bev_iou(a: &Box3D, b: &Box3D) -> f64 {
    let inter = bev_intersection_area(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area_bev() + b.area_bev() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Volumetric IoU: BEV intersection area times vertical overlap, over the
/// union of volumes.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let (abot, atop) = a.z_interval();
    let (bbot, btop) = b.z_interval();
    let dz = atop.min(btop) - abot.max(bbot);
    if dz <= 0.0 {
        return 0.0;
    }
    let inter_area = bev_intersection_area(a, b);
    if inter_area <= 0.0 {
        return 0.0;
    }
    let inter = inter_area * dz;
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Which IoU definition a suppression or matching step uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NmsMode {
    Bev,
    Iou3d,
}

pub fn iou_for_mode(a: &Box3D, b: &Box3D, mode: NmsMode) -> f64 {
    match mode {
        NmsMode::Bev => bev_iou(a, b),
        NmsMode::Iou3d => iou_3d(a, b),
    }
}

/// Greedy per-class non-maximum suppression.
///
/// Detections are visited in descending score order (ties broken by
/// earlier input index); each kept detection suppresses later ones of the
/// same class whose IoU with it exceeds `iou_threshold`. The output is
/// sorted by descending score.
pub fn nms(dets: &[Detection], iou_threshold: f64, mode: NmsMode) -> Vec<Detection> {
    assert!(
        iou_threshold > 0.0 && iou_threshold < 1.0,
        "iou_threshold must be in (0, 1), got {iou_threshold}"
    );
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| {
        dets[j]
            .score
            .partial_cmp(&dets[i].score)
            .unwrap_or(Ordering::Equal)
            .then(i.cmp(&j))
    });
    let mut suppressed = vec![false; dets.len()];
    let mut keep = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(dets[i]);
        for &j in &order[pos + 1..] {
            if suppressed[j] || dets[j].class_id != dets[i].class_id {
                continue;
            }
            if iou_for_mode(&dets[i].box3d, &dets[j].box3d, mode) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    keep
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn boxed(cx: f64, cy: f64, cz: f64, l: f64, w: f64, h: f64, yaw: f64) -> Box3D {
        Box3D::new(cx, cy, cz, l, w, h, yaw).unwrap()
    }

    fn random_box(rng: &mut impl Rng) -> Box3D {
        boxed(
            rng.gen_range(-20.0..20.0),
            rng.gen_range(-20.0..20.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(0.4..6.0),
            rng.gen_range(0.4..3.0),
            rng.gen_range(0.5..3.0),
            rng.gen_range(-PI..=PI),
        )
    }

    fn random_view(rng: &mut impl Rng) -> ViewTransform {
        ViewTransform::new(rng.gen_bool(0.5), rng.gen_bool(0.5), rng.gen_range(-PI..PI))
    }

    /// Monte-Carlo BEV IoU estimate, sampling inside the intersection of
    /// the two axis-aligned hulls (the true intersection lies there).
    fn mc_bev_iou(a: &Box3D, b: &Box3D, samples: usize, rng: &mut impl Rng) -> f64 {
        let hull = |bx: &Box3D| {
            let cs = bx.corners_bev();
            let xs: Vec<f64> = cs.iter().map(|c| c[0]).collect();
            let ys: Vec<f64> = cs.iter().map(|c| c[1]).collect();
            (
                xs.iter().cloned().fold(f64::INFINITY, f64::min),
                xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                ys.iter().cloned().fold(f64::INFINITY, f64::min),
                ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            )
        };
        let (ax0, ax1, ay0, ay1) = hull(a);
        let (bx0, bx1, by0, by1) = hull(b);
        let x0 = ax0.max(bx0);
        let x1 = ax1.min(bx1);
        let y0 = ay0.max(by0);
        let y1 = ay1.min(by1);
        if x0 >= x1 || y0 >= y1 {
            return 0.0;
        }
        let area = (x1 - x0) * (y1 - y0);
        let mut hits = 0usize;
        for _ in 0..samples {
            let p = [rng.gen_range(x0..x1), rng.gen_range(y0..y1), 0.0];
            let pa = [p[0], p[1], a.cz];
            let pb = [p[0], p[1], b.cz];
            if a.contains_point(pa, 1.0) && b.contains_point(pb, 1.0) {
                hits += 1;
            }
        }
        let inter = area * hits as f64 / samples as f64;
        inter / (a.area_bev() + b.area_bev() - inter)
    }

    #[test]
    fn normalize_yaw_range() {
        assert_eq!(normalize_yaw(PI), PI);
        assert_eq!(normalize_yaw(-PI), PI);
        assert_eq!(normalize_yaw(0.0), 0.0);
        assert!((normalize_yaw(3.0 * PI) - PI).abs() < 1e-12);
        assert!((normalize_yaw(-2.5 * PI) - (-0.5 * PI)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_boxes_rejected() {
        assert!(Box3D::new(0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0).is_err());
        assert!(Box3D::new(0.0, 0.0, 0.0, 1.0, -1.0, 1.0, 0.0).is_err());
        assert!(Box3D::new(f64::NAN, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0).is_err());
        assert!(Box3D::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, f64::INFINITY).is_err());
    }

    #[test]
    fn transform_point_identity() {
        let t = ViewTransform::identity();
        assert_eq!(t.apply_point([1.0, 2.0, 3.0]), [1.0, 2.0, 3.0]);
    }

    #[test]
    fn transform_point_quarter_turn() {
        let t = ViewTransform::new(false, false, PI / 2.0);
        let p = t.apply_point([1.0, 0.0, 0.0]);
        assert!((p[0] - 0.0).abs() < 1e-12);
        assert!((p[1] - 1.0).abs() < 1e-12);
        assert_eq!(p[2], 0.0);
    }

    #[test]
    fn transform_point_matches_matrix_oracle() {
        // flip_x then rotate 22.5 degrees, checked against an explicit
        // 2x2 rotation matrix product.
        let theta = 22.5f64.to_radians();
        let t = ViewTransform::new(true, false, theta);
        let p = [1.0, 2.0, 3.0];
        let flipped = [-p[0], p[1]];
        let expect = [
            theta.cos() * flipped[0] - theta.sin() * flipped[1],
            theta.sin() * flipped[0] + theta.cos() * flipped[1],
        ];
        let got = t.apply_point(p);
        assert!((got[0] - expect[0]).abs() < 1e-12);
        assert!((got[1] - expect[1]).abs() < 1e-12);
        assert_eq!(got[2], 3.0);
    }

    #[test]
    fn transform_box_identity_and_rotation() {
        let b = boxed(1.0, 0.0, 0.5, 4.0, 2.0, 1.5, 0.0);
        assert_eq!(transform_box(&b, &ViewTransform::identity()), b);

        let t = ViewTransform::new(false, false, PI / 2.0);
        let r = transform_box(&b, &t);
        assert!((r.cx - 0.0).abs() < 1e-12);
        assert!((r.cy - 1.0).abs() < 1e-12);
        assert!((r.yaw - PI / 2.0).abs() < 1e-12);
        assert_eq!((r.l, r.w, r.h), (b.l, b.w, b.h));
    }

    #[test]
    fn transform_box_flip_yaw_rules() {
        let b = boxed(1.0, 2.0, 0.0, 4.0, 2.0, 1.5, 0.3);
        let fx = transform_box(&b, &ViewTransform::new(true, false, 0.0));
        assert!((fx.yaw - (PI - 0.3)).abs() < 1e-12);
        assert_eq!(fx.cx, -1.0);
        let fy = transform_box(&b, &ViewTransform::new(false, true, 0.0));
        assert!((fy.yaw - (-0.3)).abs() < 1e-12);
        assert_eq!(fy.cy, -2.0);
    }

    #[test]
    fn round_trip_randomized() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let b = random_box(&mut rng);
            let t = random_view(&mut rng);
            let back = transform_box(&transform_box(&b, &t), &t.inverse());
            assert!((back.cx - b.cx).abs() < 1e-9);
            assert!((back.cy - b.cy).abs() < 1e-9);
            assert!((back.cz - b.cz).abs() < 1e-9);
            let dyaw = normalize_yaw(back.yaw - b.yaw).abs();
            assert!(dyaw < 1e-9, "yaw drift {dyaw}");

            let p = [
                rng.gen_range(-30.0..30.0),
                rng.gen_range(-30.0..30.0),
                rng.gen_range(-3.0..3.0),
            ];
            let q = t.inverse().apply_point(t.apply_point(p));
            for k in 0..3 {
                assert!((q[k] - p[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn bev_iou_identical_and_disjoint() {
        let a = boxed(3.0, -2.0, 0.0, 4.2, 1.8, 1.5, 0.7);
        assert!((bev_iou(&a, &a) - 1.0).abs() < 1e-9);
        let b = boxed(50.0, 50.0, 0.0, 4.2, 1.8, 1.5, -0.4);
        assert_eq!(bev_iou(&a, &b), 0.0);
    }

    #[test]
    fn bev_iou_unit_squares_vs_monte_carlo() {
        // unit squares at (0,0) and (0.5,0), yaws 0 and 45 degrees
        let a = boxed(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        let b = boxed(0.5, 0.0, 0.0, 1.0, 1.0, 1.0, PI / 4.0);
        let exact = bev_iou(&a, &b);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mc = mc_bev_iou(&a, &b, 1_000_000, &mut rng);
        assert!(
            (exact - mc).abs() < 1e-2,
            "exact {exact} vs monte-carlo {mc}"
        );
    }

    #[test]
    fn bev_iou_randomized_vs_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for _ in 0..60 {
            let a = random_box(&mut rng);
            // keep b near a so intersections are common
            let b = boxed(
                a.cx + rng.gen_range(-2.0..2.0),
                a.cy + rng.gen_range(-2.0..2.0),
                a.cz,
                rng.gen_range(0.5..5.0),
                rng.gen_range(0.5..3.0),
                a.h,
                rng.gen_range(-PI..=PI),
            );
            let exact = bev_iou(&a, &b);
            let mc = mc_bev_iou(&a, &b, 200_000, &mut rng);
            assert!(
                (exact - mc).abs() < 1e-2,
                "exact {exact} vs mc {mc} for {a:?} {b:?}"
            );
        }
    }

    #[test]
    fn iou_3d_analytic_half_overlap() {
        // same footprint, vertical overlap half of height: 0.5V / (2V - 0.5V) = 1/3
        let a = boxed(0.0, 0.0, 0.0, 4.0, 2.0, 2.0, 0.3);
        let b = boxed(0.0, 0.0, 1.0, 4.0, 2.0, 2.0, 0.3);
        assert!((iou_3d(&a, &b) - 1.0 / 3.0).abs() < 1e-9);
        assert!((iou_3d(&a, &a) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn iou_3d_randomized_vs_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(4321);
        for _ in 0..40 {
            let a = random_box(&mut rng);
            let b = boxed(
                a.cx + rng.gen_range(-2.0..2.0),
                a.cy + rng.gen_range(-2.0..2.0),
                a.cz + rng.gen_range(-1.0..1.0),
                rng.gen_range(0.5..5.0),
                rng.gen_range(0.5..3.0),
                rng.gen_range(0.5..3.0),
                rng.gen_range(-PI..=PI),
            );
            // volume MC over the joint axis-aligned hull
            let (abot, atop) = a.z_interval();
            let (bbot, btop) = b.z_interval();
            let z0 = abot.max(bbot);
            let z1 = atop.min(btop);
            let exact = iou_3d(&a, &b);
            if z0 >= z1 {
                assert_eq!(exact, 0.0);
                continue;
            }
            let corners = |bx: &Box3D| bx.corners_bev();
            let all: Vec<[f64; 2]> = corners(&a).iter().chain(corners(&b).iter()).cloned().collect();
            let x0 = all.iter().map(|c| c[0]).fold(f64::INFINITY, f64::min);
            let x1 = all.iter().map(|c| c[0]).fold(f64::NEG_INFINITY, f64::max);
            let y0 = all.iter().map(|c| c[1]).fold(f64::INFINITY, f64::min);
            let y1 = all.iter().map(|c| c[1]).fold(f64::NEG_INFINITY, f64::max);
            let vol_box = (x1 - x0) * (y1 - y0) * (z1 - z0);
            let n = 200_000;
            let mut hits = 0usize;
            for _ in 0..n {
                let p = [
                    rng.gen_range(x0..x1),
                    rng.gen_range(y0..y1),
                    rng.gen_range(z0..z1),
                ];
                if a.contains_point(p, 1.0) && b.contains_point(p, 1.0) {
                    hits += 1;
                }
            }
            let inter = vol_box * hits as f64 / n as f64;
            let mc = inter / (a.volume() + b.volume() - inter);
            assert!((exact - mc).abs() < 1e-2, "exact {exact} vs mc {mc}");
        }
    }

    #[test]
    fn iou_invariant_under_rigid_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let a = random_box(&mut rng);
            let b = boxed(
                a.cx + rng.gen_range(-3.0..3.0),
                a.cy + rng.gen_range(-3.0..3.0),
                a.cz,
                rng.gen_range(0.5..5.0),
                rng.gen_range(0.5..3.0),
                a.h,
                rng.gen_range(-PI..=PI),
            );
            let t = random_view(&mut rng);
            let before = bev_iou(&a, &b);
            let after = bev_iou(&transform_box(&a, &t), &transform_box(&b, &t));
            assert!((before - after).abs() < 1e-9, "{before} vs {after}");
            let b3 = iou_3d(&a, &b);
            let a3 = iou_3d(&transform_box(&a, &t), &transform_box(&b, &t));
            assert!((b3 - a3).abs() < 1e-9);
        }
    }

    /// Straight-line reference NMS used to cross-check the main kernel.
    fn nms_reference(dets: &[Detection], thr: f64, mode: NmsMode) -> Vec<Detection> {
        let mut idx: Vec<usize> = (0..dets.len()).collect();
        idx.sort_by(|&i, &j| {
            dets[j]
                .score
                .partial_cmp(&dets[i].score)
                .unwrap()
                .then(i.cmp(&j))
        });
        let mut kept: Vec<usize> = Vec::new();
        for &i in &idx {
            let mut ok = true;
            for &k in &kept {
                if dets[k].class_id == dets[i].class_id
                    && iou_for_mode(&dets[k].box3d, &dets[i].box3d, mode) > thr
                {
                    ok = false;
                    break;
                }
            }
            if ok {
                kept.push(i);
            }
        }
        kept.into_iter().map(|i| dets[i]).collect()
    }

    #[test]
    fn nms_basics() {
        assert!(nms(&[], 0.5, NmsMode::Bev).is_empty());
        let b = boxed(0.0, 0.0, 0.0, 4.0, 2.0, 1.5, 0.2);
        let dets = vec![
            Detection::new(b, ClassId::Vehicle, 0.8),
            Detection::new(b, ClassId::Vehicle, 0.9),
        ];
        let out = nms(&dets, 0.5, NmsMode::Bev);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].score, 0.9);
    }

    #[test]
    fn nms_keeps_distinct_classes() {
        let b = boxed(0.0, 0.0, 0.0, 2.0, 2.0, 1.5, 0.0);
        let dets = vec![
            Detection::new(b, ClassId::Vehicle, 0.9),
            Detection::new(b, ClassId::Pedestrian, 0.8),
        ];
        assert_eq!(nms(&dets, 0.5, NmsMode::Bev).len(), 2);
    }

    #[test]
    fn nms_matches_reference_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..50 {
            let n = rng.gen_range(0..50);
            let dets: Vec<Detection> = (0..n)
                .map(|_| {
                    let cx = rng.gen_range(-8.0..8.0);
                    let cy = rng.gen_range(-8.0..8.0);
                    let b = boxed(
                        cx,
                        cy,
                        0.0,
                        rng.gen_range(1.0..5.0),
                        rng.gen_range(1.0..3.0),
                        1.5,
                        rng.gen_range(-PI..=PI),
                    );
                    let class = ClassId::from_index(rng.gen_range(0..3)).unwrap();
                    Detection::new(b, class, rng.gen_range(0.0..1.0))
                })
                .collect();
            for mode in [NmsMode::Bev, NmsMode::Iou3d] {
                let fast = nms(&dets, 0.5, mode);
                let slow = nms_reference(&dets, 0.5, mode);
                assert_eq!(fast, slow);
            }
        }
    }

    #[test]
    fn nms_survivors_respect_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let dets: Vec<Detection> = (0..40)
                .map(|_| {
                    let b = boxed(
                        rng.gen_range(-6.0..6.0),
                        rng.gen_range(-6.0..6.0),
                        0.0,
                        3.0,
                        1.5,
                        1.5,
                        rng.gen_range(-PI..=PI),
                    );
                    Detection::new(b, ClassId::Vehicle, rng.gen_range(0.0..1.0))
                })
                .collect();
            let out = nms(&dets, 0.4, NmsMode::Bev);
            for i in 0..out.len() {
                for j in i + 1..out.len() {
                    assert!(bev_iou(&out[i].box3d, &out[j].box3d) <= 0.4 + 1e-12);
                }
            }
        }
    }
}
