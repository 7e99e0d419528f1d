//! Rotated 3D box geometry.
//!
//! Boxes are gravity-aligned cuboids parameterized by center, extents and a
//! yaw about the vertical axis. The BEV footprint of a box is a rotated
//! rectangle; overlaps between footprints are computed by clipping one
//! rectangle against the half-planes of the other and taking the shoelace
//! area of what remains. 3D overlap multiplies the BEV intersection by the
//! vertical overlap of the two height intervals.

use std::cmp::Ordering;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod oracle;

/// Distance within which a point counts as lying on a clipping line.
pub const CLIP_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("box extent `{name}` must be finite and positive, got {value}")]
    BadExtent { name: &'static str, value: f64 },
    #[error("box parameter `{name}` must be finite, got {value}")]
    NonFinite { name: &'static str, value: f64 },
}

/// Which overlap measure to use when comparing two boxes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouMode {
    /// Full volumetric IoU.
    #[default]
    #[serde(rename = "3d")]
    ThreeD,
    /// Bird's-eye-view footprint IoU.
    Bev,
}

impl std::str::FromStr for IouMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "3d" => Ok(IouMode::ThreeD),
            "bev" => Ok(IouMode::Bev),
            other => Err(format!("unknown IoU mode `{other}` (expected `3d` or `bev`)")),
        }
    }
}

impl std::fmt::Display for IouMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            IouMode::ThreeD => "3d",
            IouMode::Bev => "bev",
        })
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_yaw(r: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut out = r - two_pi * ((r + PI) / two_pi).floor();
    // floor-based wrap lands in [-pi, pi); fold the lower edge onto +pi.
    if out <= -PI {
        out += two_pi;
    }
    if out > PI {
        out -= two_pi;
    }
    out
}

/// A 7-parameter oriented box `(x, y, z, w, l, h, r)`.
///
/// `l` is the extent along the heading `(cos r, sin r)`, `w` the extent
/// perpendicular to it in the ground plane and `h` the vertical extent.
/// `z` is the center height, so the box spans `[z - h/2, z + h/2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct Box3D {
    x: f64,
    y: f64,
    z: f64,
    w: f64,
    l: f64,
    h: f64,
    r: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct RawBox {
    x: f64,
    y: f64,
    z: f64,
    w: f64,
    l: f64,
    h: f64,
    r: f64,
}

impl TryFrom<RawBox> for Box3D {
    type Error = GeometryError;

    fn try_from(raw: RawBox) -> Result<Self, Self::Error> {
        Box3D::new(raw.x, raw.y, raw.z, raw.w, raw.l, raw.h, raw.r)
    }
}

impl From<Box3D> for RawBox {
    fn from(b: Box3D) -> Self {
        RawBox { x: b.x, y: b.y, z: b.z, w: b.w, l: b.l, h: b.h, r: b.r }
    }
}

impl Box3D {
    #[allow(clippy::too_many_arguments)]
    pub fn new(x: f64, y: f64, z: f64, w: f64, l: f64, h: f64, r: f64) -> Result<Self, GeometryError> {
        for (name, value) in [("x", x), ("y", y), ("z", z), ("r", r)] {
            if !value.is_finite() {
                return Err(GeometryError::NonFinite { name, value });
            }
        }
        for (name, value) in [("w", w), ("l", l), ("h", h)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(GeometryError::BadExtent { name, value });
            }
        }
        Ok(Box3D { x, y, z, w, l, h, r: normalize_yaw(r) })
    }

    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }
    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn l(&self) -> f64 {
        self.l
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn yaw(&self) -> f64 {
        self.r
    }

    /// The seven parameters in `(x, y, z, w, l, h, r)` order.
    pub fn params(&self) -> [f64; 7] {
        [self.x, self.y, self.z, self.w, self.l, self.h, self.r]
    }

    pub fn bev_area(&self) -> f64 {
        self.w * self.l
    }

    pub fn volume(&self) -> f64 {
        self.w * self.l * self.h
    }

    pub fn bottom(&self) -> f64 {
        self.z - 0.5 * self.h
    }

    pub fn top(&self) -> f64 {
        self.z + 0.5 * self.h
    }

    /// Radius of the BEV circle circumscribing the footprint.
    pub fn bev_radius(&self) -> f64 {
        0.5 * self.w.hypot(self.l)
    }

    /// Expresses a world point in the box frame: `(along heading, across heading, above center)`.
    pub fn to_local(&self, px: f64, py: f64, pz: f64) -> (f64, f64, f64) {
        let (s, c) = self.r.sin_cos();
        let dx = px - self.x;
        let dy = py - self.y;
        (c * dx + s * dy, -s * dx + c * dy, pz - self.z)
    }

    /// Closed containment test (boundary counts as inside).
    pub fn contains(&self, px: f64, py: f64, pz: f64) -> bool {
        let (lx, ly, lz) = self.to_local(px, py, pz);
        lx.abs() <= 0.5 * self.l && ly.abs() <= 0.5 * self.w && lz.abs() <= 0.5 * self.h
    }

    /// Open containment test (boundary counts as outside).
    pub fn strictly_contains(&self, px: f64, py: f64, pz: f64) -> bool {
        let (lx, ly, lz) = self.to_local(px, py, pz);
        lx.abs() < 0.5 * self.l && ly.abs() < 0.5 * self.w && lz.abs() < 0.5 * self.h
    }

    /// Returns a copy with different center and yaw, keeping extents.
    pub fn with_pose(&self, x: f64, y: f64, z: f64, r: f64) -> Result<Self, GeometryError> {
        Box3D::new(x, y, z, self.w, self.l, self.h, r)
    }

    /// Returns a copy with all extents multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, GeometryError> {
        Box3D::new(self.x, self.y, self.z, self.w * factor, self.l * factor, self.h * factor, self.r)
    }

    /// Lexicographic total order on the raw parameters; used to fix operand
    /// order in the pairwise kernels so that results are exactly symmetric.
    fn canonical_cmp(&self, other: &Self) -> Ordering {
        self.params()
            .iter()
            .zip(other.params().iter())
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }
}

/// Convex polygon with counter-clockwise vertices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BevPolygon {
    pub vertices: Vec<Point2>,
}

impl BevPolygon {
    pub fn new(vertices: Vec<Point2>) -> Self {
        BevPolygon { vertices }
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Shoelace area; positive for counter-clockwise order.
    pub fn signed_area(&self) -> f64 {
        shoelace(&self.vertices)
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    /// True when every consecutive edge pair turns left (or is collinear).
    pub fn is_convex_ccw(&self) -> bool {
        let n = self.vertices.len();
        if n < 3 {
            return false;
        }
        (0..n).all(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let c = self.vertices[(i + 2) % n];
            cross(sub(b, a), sub(c, b)) >= -CLIP_EPS
        })
    }
}

fn sub(a: Point2, b: Point2) -> Point2 {
    Point2::new(a.x - b.x, a.y - b.y)
}

fn cross(a: Point2, b: Point2) -> f64 {
    a.x * b.y - a.y * b.x
}

fn shoelace(v: &[Point2]) -> f64 {
    let n = v.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let p = v[i];
        let q = v[(i + 1) % n];
        acc += p.x * q.y - q.x * p.y;
    }
    0.5 * acc
}

/// The four BEV corners of `b`, counter-clockwise, starting at the
/// front-left corner.
pub fn bev_corners(b: &Box3D) -> BevPolygon {
    let (s, c) = b.r.sin_cos();
    let hl = 0.5 * b.l;
    let hw = 0.5 * b.w;
    let local = [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)];
    BevPolygon::new(
        local
            .iter()
            .map(|&(u, v)| Point2::new(b.x + c * u - s * v, b.y + s * u + c * v))
            .collect(),
    )
}

/// Clips `subject` against the half-plane left of the directed line `a -> b`.
fn clip_half_plane(subject: &[Point2], a: Point2, b: Point2, out: &mut Vec<Point2>) {
    out.clear();
    let n = subject.len();
    if n == 0 {
        return;
    }
    let edge = sub(b, a);
    let len = edge.x.hypot(edge.y);
    if len == 0.0 {
        out.extend_from_slice(subject);
        return;
    }
    let dist = |p: Point2| cross(edge, sub(p, a)) / len;
    let mut prev = subject[n - 1];
    let mut d_prev = dist(prev);
    for &cur in subject {
        let d_cur = dist(cur);
        let cur_in = d_cur >= -CLIP_EPS;
        let prev_in = d_prev >= -CLIP_EPS;
        if cur_in {
            if !prev_in {
                out.push(edge_crossing(prev, d_prev, cur, d_cur));
            }
            out.push(cur);
        } else if prev_in {
            out.push(edge_crossing(prev, d_prev, cur, d_cur));
        }
        prev = cur;
        d_prev = d_cur;
    }
}

fn edge_crossing(p: Point2, dp: f64, q: Point2, dq: f64) -> Point2 {
    let t = dp / (dp - dq);
    Point2::new(p.x + t * (q.x - p.x), p.y + t * (q.y - p.y))
}

/// Intersection polygon of two convex counter-clockwise polygons.
pub fn convex_intersection(a: &BevPolygon, b: &BevPolygon) -> BevPolygon {
    let mut current = a.vertices.clone();
    let mut scratch = Vec::with_capacity(current.len() + b.len());
    let m = b.vertices.len();
    for i in 0..m {
        if current.is_empty() {
            break;
        }
        clip_half_plane(&current, b.vertices[i], b.vertices[(i + 1) % m], &mut scratch);
        std::mem::swap(&mut current, &mut scratch);
    }
    BevPolygon::new(current)
}

/// Area of the intersection of two convex counter-clockwise polygons;
/// zero when they are disjoint.
pub fn convex_intersection_area(a: &BevPolygon, b: &BevPolygon) -> f64 {
    shoelace(&convex_intersection(a, b).vertices).max(0.0)
}

/// A box with its footprint precomputed, for repeated pairwise queries.
#[derive(Debug, Clone)]
pub struct PreparedBox {
    pub bbox: Box3D,
    corners: BevPolygon,
    radius: f64,
}

impl PreparedBox {
    pub fn new(bbox: Box3D) -> Self {
        PreparedBox { corners: bev_corners(&bbox), radius: bbox.bev_radius(), bbox }
    }
}

impl From<Box3D> for PreparedBox {
    fn from(b: Box3D) -> Self {
        PreparedBox::new(b)
    }
}

/// BEV intersection area, 0 when the circumscribed circles cannot touch.
fn bev_intersection(a: &PreparedBox, b: &PreparedBox) -> f64 {
    let (a, b) = match a.bbox.canonical_cmp(&b.bbox) {
        Ordering::Greater => (b, a),
        _ => (a, b),
    };
    let dx = a.bbox.x - b.bbox.x;
    let dy = a.bbox.y - b.bbox.y;
    if dx.hypot(dy) > a.radius + b.radius {
        return 0.0;
    }
    let inter = convex_intersection_area(&a.corners, &b.corners);
    inter.min(a.bbox.bev_area()).min(b.bbox.bev_area())
}

fn vertical_overlap(a: &Box3D, b: &Box3D) -> f64 {
    (a.top().min(b.top()) - a.bottom().max(b.bottom())).max(0.0)
}

fn ratio(inter: f64, total_a: f64, total_b: f64) -> f64 {
    let union = total_a + total_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

pub fn prepared_iou_bev(a: &PreparedBox, b: &PreparedBox) -> f64 {
    if a.bbox == b.bbox {
        return 1.0;
    }
    ratio(bev_intersection(a, b), a.bbox.bev_area(), b.bbox.bev_area())
}

pub fn prepared_iou_3d(a: &PreparedBox, b: &PreparedBox) -> f64 {
    if a.bbox == b.bbox {
        return 1.0;
    }
    let dz = vertical_overlap(&a.bbox, &b.bbox);
    if dz == 0.0 {
        return 0.0;
    }
    let inter = bev_intersection(a, b) * dz;
    ratio(inter, a.bbox.volume(), b.bbox.volume())
}

pub fn prepared_iou(a: &PreparedBox, b: &PreparedBox, mode: IouMode) -> f64 {
    match mode {
        IouMode::ThreeD => prepared_iou_3d(a, b),
        IouMode::Bev => prepared_iou_bev(a, b),
    }
}

/// IoU of the two BEV footprints.
pub fn iou_bev(a: &Box3D, b: &Box3D) -> f64 {
    prepared_iou_bev(&PreparedBox::new(*a), &PreparedBox::new(*b))
}

/// Volumetric IoU of two gravity-aligned boxes.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    prepared_iou_3d(&PreparedBox::new(*a), &PreparedBox::new(*b))
}

pub fn iou(a: &Box3D, b: &Box3D, mode: IouMode) -> f64 {
    match mode {
        IouMode::ThreeD => iou_3d(a, b),
        IouMode::Bev => iou_bev(a, b),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x: f64, y: f64, z: f64, w: f64, l: f64, h: f64, r: f64) -> Box3D {
        Box3D::new(x, y, z, w, l, h, r).unwrap()
    }

    fn square(x0: f64, y0: f64, side: f64) -> BevPolygon {
        BevPolygon::new(vec![
            Point2::new(x0, y0),
            Point2::new(x0 + side, y0),
            Point2::new(x0 + side, y0 + side),
            Point2::new(x0, y0 + side),
        ])
    }

    fn same_point_set(a: &BevPolygon, b: &BevPolygon) -> bool {
        a.len() == b.len()
            && a.vertices.iter().all(|p| {
                b.vertices.iter().any(|q| (p.x - q.x).abs() < 1e-12 && (p.y - q.y).abs() < 1e-12)
            })
    }

    #[test]
    fn rejects_degenerate_extents() {
        assert!(matches!(Box3D::new(0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0), Err(GeometryError::BadExtent { name: "w", .. })));
        assert!(Box3D::new(0.0, 0.0, 0.0, 1.0, -1.0, 1.0, 0.0).is_err());
        assert!(Box3D::new(0.0, 0.0, 0.0, 1.0, 1.0, f64::NAN, 0.0).is_err());
        assert!(Box3D::new(f64::INFINITY, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn yaw_is_normalized() {
        assert_eq!(normalize_yaw(PI), PI);
        assert_eq!(normalize_yaw(-PI), PI);
        assert!((normalize_yaw(3.0 * PI) - PI).abs() < 1e-12);
        assert!((normalize_yaw(-0.5) + 0.5).abs() < 1e-15);
        assert!((bx(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0 * PI + 0.25).yaw() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn corners_axis_aligned_square() {
        let c = bev_corners(&bx(0.0, 0.0, 0.0, 2.0, 2.0, 1.0, 0.0));
        assert!(same_point_set(&c, &square(-1.0, -1.0, 2.0)));
        assert!(c.signed_area() > 0.0);
    }

    #[test]
    fn corners_square_quarter_turn() {
        let a = bev_corners(&bx(0.0, 0.0, 0.0, 2.0, 2.0, 1.0, 0.0));
        let b = bev_corners(&bx(0.0, 0.0, 0.0, 2.0, 2.0, 1.0, PI / 2.0));
        assert!(same_point_set(&a, &b));
        assert_ne!(a.vertices[0], b.vertices[0]);
    }

    #[test]
    fn corners_rotated_rectangle() {
        let c = bev_corners(&bx(1.0, 1.0, 0.0, 2.0, 4.0, 1.0, PI / 4.0));
        let (s, k) = (PI / 4.0).sin_cos();
        let expected: Vec<Point2> = [(2.0, 1.0), (-2.0, 1.0), (-2.0, -1.0), (2.0, -1.0)]
            .iter()
            .map(|&(u, v)| Point2::new(1.0 + k * u - s * v, 1.0 + s * u + k * v))
            .collect();
        assert!(same_point_set(&c, &BevPolygon::new(expected)));
        assert!(c.is_convex_ccw());
    }

    #[test]
    fn intersection_area_examples() {
        let unit = square(0.0, 0.0, 1.0);
        assert_eq!(convex_intersection_area(&unit, &unit), 1.0);
        assert_eq!(convex_intersection_area(&unit, &square(2.0, 0.0, 1.0)), 0.0);
        assert!((convex_intersection_area(&square(0.0, 0.0, 2.0), &square(1.0, 1.0, 2.0)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn touching_squares_have_zero_area() {
        let a = square(0.0, 0.0, 1.0);
        let b = square(1.0, 0.0, 1.0);
        assert_eq!(convex_intersection_area(&a, &b), 0.0);
    }

    #[test]
    fn bev_iou_examples() {
        let a = bx(0.0, 0.0, 0.0, 2.0, 2.0, 2.0, 0.0);
        assert_eq!(iou_bev(&a, &a), 1.0);
        let b = bx(1.0, 0.0, 0.0, 2.0, 2.0, 2.0, 0.0);
        assert!((iou_bev(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn bev_iou_octagon_matches_closed_form() {
        // square of side 2 against itself turned by 45 degrees: the overlap is a
        // regular octagon with apothem 1, area 8 (sqrt 2 - 1).
        let a = bx(0.0, 0.0, 0.0, 2.0, 2.0, 2.0, 0.0);
        let b = bx(0.0, 0.0, 0.0, 2.0, 2.0, 2.0, PI / 4.0);
        let oct = 8.0 * (2f64.sqrt() - 1.0);
        let expected = oct / (8.0 - oct);
        assert!((iou_bev(&a, &b) - expected).abs() < 1e-12);
        let inter = convex_intersection(&bev_corners(&a), &bev_corners(&b));
        assert_eq!(inter.len(), 8);
        assert!(inter.is_convex_ccw());
    }

    #[test]
    fn iou_3d_examples() {
        let a = bx(0.0, 0.0, 0.0, 2.0, 2.0, 2.0, 0.0);
        assert_eq!(iou_3d(&a, &a), 1.0);
        let b = bx(1.0, 0.0, 0.0, 2.0, 2.0, 2.0, 0.0);
        assert!((iou_3d(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        let up = bx(0.0, 0.0, 2.0, 2.0, 2.0, 2.0, 0.0);
        assert_eq!(iou_3d(&a, &up), 0.0);
        let far_up = bx(0.0, 0.0, 5.0, 2.0, 2.0, 2.0, 0.0);
        assert_eq!(iou_3d(&a, &far_up), 0.0);
        assert_eq!(iou_bev(&a, &far_up), 1.0);
    }

    #[test]
    fn iou_3d_partial_height() {
        let a = bx(0.0, 0.0, 0.0, 2.0, 2.0, 2.0, 0.0);
        let b = bx(0.0, 0.0, 1.0, 2.0, 2.0, 2.0, 0.0);
        // overlap 4 x 1, union 8 + 8 - 4
        assert!((iou_3d(&a, &b) - 4.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn iou_mode_parses() {
        assert_eq!("3D".parse::<IouMode>().unwrap(), IouMode::ThreeD);
        assert_eq!("bev".parse::<IouMode>().unwrap(), IouMode::Bev);
        assert!("2d".parse::<IouMode>().is_err());
    }

    #[test]
    fn box_serde_rejects_invalid() {
        let ok: Box3D = serde_json::from_str(r#"{"x":0,"y":0,"z":0,"w":1,"l":2,"h":1,"r":0}"#).unwrap();
        assert_eq!(ok.l(), 2.0);
        assert!(serde_json::from_str::<Box3D>(r#"{"x":0,"y":0,"z":0,"w":-1,"l":2,"h":1,"r":0}"#).is_err());
    }

    fn arb_box() -> impl Strategy<Value = Box3D> {
        (-3.0..3.0f64, -3.0..3.0f64, -1.0..1.0f64, 0.5..5.0f64, 0.5..5.0f64, 0.5..5.0f64, -PI..PI)
            .prop_map(|(x, y, z, w, l, h, r)| Box3D::new(x, y, z, w, l, h, r).unwrap())
    }

    proptest! {
        #[test]
        fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou_3d(&a, &b);
            prop_assert_eq!(ab, iou_3d(&b, &a));
            prop_assert_eq!(iou_bev(&a, &b), iou_bev(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((0.0..=1.0).contains(&iou_bev(&a, &b)));
            prop_assert!((iou_3d(&a, &a) - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn intersection_bounded_by_smaller_area(a in arb_box(), b in arb_box()) {
            let (pa, pb) = (bev_corners(&a), bev_corners(&b));
            let inter = convex_intersection_area(&pa, &pb);
            prop_assert!(inter <= pa.area().min(pb.area()) + 1e-9);
            let poly = convex_intersection(&pa, &pb);
            prop_assert!(poly.len() <= 8);
        }

        #[test]
        fn rigid_motion_preserves_iou(
            a in arb_box(), b in arb_box(),
            tx in -50.0..50.0f64, ty in -50.0..50.0f64, tz in -5.0..5.0f64, dr in -PI..PI,
        ) {
            let (s, c) = dr.sin_cos();
            let moved = |bb: &Box3D| {
                let x = c * bb.x() - s * bb.y() + tx;
                let y = s * bb.x() + c * bb.y() + ty;
                bb.with_pose(x, y, bb.z() + tz, bb.yaw() + dr).unwrap()
            };
            let before = iou_3d(&a, &b);
            let after = iou_3d(&moved(&a), &moved(&b));
            prop_assert!((before - after).abs() <= 1e-6, "{before} vs {after}");
        }
    }
}
