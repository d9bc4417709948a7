//! Planar points, rigid transforms, labelled boundary polylines and
//! length-proportional boundary sampling.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of points sampled per object cloud.
pub const DEFAULT_CLOUD_SIZE: usize = 256;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ZERO: Point = Point { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the planar cross product.
    pub fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn distance(self, o: Point) -> f64 {
        (self - o).norm()
    }

    /// Rotated by +90°.
    pub fn perp(self) -> Point {
        Point::new(-self.y, self.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn lerp(self, o: Point, t: f64) -> Point {
        self + (o - self) * t
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

impl Neg for Point {
    type Output = Point;
    fn neg(self) -> Point {
        Point::new(-self.x, -self.y)
    }
}

/// Planar rigid motion: rotate by `angle`, then translate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub angle: f64,
    pub translation: Point,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        angle: 0.0,
        translation: Point::ZERO,
    };

    pub fn new(angle: f64, translation: Point) -> Self {
        Self { angle, translation }
    }

    pub fn translation(t: Point) -> Self {
        Self::new(0.0, t)
    }

    /// Rotation by `angle` about `pivot`.
    pub fn rotation_about(pivot: Point, angle: f64) -> Self {
        let r = Self::new(angle, Point::ZERO);
        Self::new(angle, pivot - r.rotate(pivot))
    }

    pub fn rotate(&self, p: Point) -> Point {
        let (s, c) = self.angle.sin_cos();
        Point::new(c * p.x - s * p.y, s * p.x + c * p.y)
    }

    pub fn apply(&self, p: Point) -> Point {
        self.rotate(p) + self.translation
    }

    pub fn inverse(&self) -> Self {
        let inv = Self::new(-self.angle, Point::ZERO);
        Self::new(-self.angle, -inv.rotate(self.translation))
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self::new(self.angle + other.angle, self.apply(other.translation))
    }

    /// Maps a world point into this frame.
    pub fn to_local(&self, p: Point) -> Point {
        let inv = Self::new(-self.angle, Point::ZERO);
        inv.rotate(p - self.translation)
    }
}

/// Semantic part tag carried by every boundary segment and sampled point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartLabel {
    Frame,
    Panel,
    Handle,
    Body,
    Support,
    Obstacle,
    Seat,
    Back,
    Leg,
    Marker,
}

impl PartLabel {
    pub const ALL: [PartLabel; 10] = [
        PartLabel::Frame,
        PartLabel::Panel,
        PartLabel::Handle,
        PartLabel::Body,
        PartLabel::Support,
        PartLabel::Obstacle,
        PartLabel::Seat,
        PartLabel::Back,
        PartLabel::Leg,
        PartLabel::Marker,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PartLabel::Frame => "frame",
            PartLabel::Panel => "panel",
            PartLabel::Handle => "handle",
            PartLabel::Body => "body",
            PartLabel::Support => "support",
            PartLabel::Obstacle => "obstacle",
            PartLabel::Seat => "seat",
            PartLabel::Back => "back",
            PartLabel::Leg => "leg",
            PartLabel::Marker => "marker",
        }
    }

    pub fn parse(s: &str) -> Option<PartLabel> {
        PartLabel::ALL.into_iter().find(|l| l.name() == s)
    }

    /// Labels the gripper can close on.
    pub fn graspable(self) -> bool {
        matches!(self, PartLabel::Handle | PartLabel::Body)
    }
}

impl fmt::Display for PartLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Point,
    pub b: Point,
    pub label: PartLabel,
}

impl Segment {
    pub fn new(a: Point, b: Point, label: PartLabel) -> Self {
        Self { a, b, label }
    }

    pub fn length(&self) -> f64 {
        self.a.distance(self.b)
    }

    pub fn at(&self, t: f64) -> Point {
        self.a.lerp(self.b, t)
    }

    /// Closest point on the segment to `p` and its parameter in [0, 1].
    pub fn closest_point(&self, p: Point) -> (Point, f64) {
        let d = self.b - self.a;
        let len_sq = d.norm_sq();
        let t = if len_sq > 0.0 {
            ((p - self.a).dot(d) / len_sq).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (self.at(t), t)
    }

    pub fn distance_to(&self, p: Point) -> f64 {
        self.closest_point(p).0.distance(p)
    }

    pub fn transformed(&self, tf: &RigidTransform) -> Segment {
        Segment::new(tf.apply(self.a), tf.apply(self.b), self.label)
    }

    /// Proper or touching intersection test.
    pub fn intersects(&self, o: &Segment) -> bool {
        segments_intersect(self.a, self.b, o.a, o.b)
    }
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b - a).cross(c - a)
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Whether closed segments `p1p2` and `q1q2` share at least one point.
pub fn segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// Ordered list of labelled segments (open or closed polyline).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundaryShape {
    pub segments: Vec<Segment>,
}

impl BoundaryShape {
    pub fn new(segments: Vec<Segment>) -> Self {
        Self { segments }
    }

    /// Closed polygon through `corners`, every edge carrying `label`.
    pub fn polygon(corners: &[Point], label: PartLabel) -> Self {
        let n = corners.len();
        let segments = (0..n)
            .map(|i| Segment::new(corners[i], corners[(i + 1) % n], label))
            .collect();
        Self { segments }
    }

    /// Axis-aligned rectangle with lower-left corner `min`.
    pub fn rect(min: Point, width: f64, height: f64, label: PartLabel) -> Self {
        Self::polygon(
            &[
                min,
                Point::new(min.x + width, min.y),
                Point::new(min.x + width, min.y + height),
                Point::new(min.x, min.y + height),
            ],
            label,
        )
    }

    pub fn total_length(&self) -> f64 {
        self.segments.iter().map(Segment::length).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::InvalidArgument("boundary shape has no segments".into()));
        }
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.a.is_finite() && s.b.is_finite()) {
                return Err(Error::NonFinite(format!("segment {i}")));
            }
            if s.length() <= 0.0 {
                return Err(Error::InvalidArgument(format!("segment {i} has zero length")));
            }
        }
        Ok(())
    }

    pub fn transformed(&self, tf: &RigidTransform) -> BoundaryShape {
        BoundaryShape::new(self.segments.iter().map(|s| s.transformed(tf)).collect())
    }

    pub fn distance_to(&self, p: Point) -> f64 {
        self.segments
            .iter()
            .map(|s| s.distance_to(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Even-odd point-in-polygon test; meaningful for closed shapes only.
    pub fn contains(&self, p: Point) -> bool {
        let mut inside = false;
        for s in &self.segments {
            let (a, b) = (s.a, s.b);
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
                if p.x < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Whether the boundaries cross or one closed shape contains the other.
    pub fn overlaps(&self, other: &BoundaryShape) -> bool {
        let crossing = self
            .segments
            .iter()
            .any(|s| other.segments.iter().any(|o| s.intersects(o)));
        crossing
            || self.segments.first().is_some_and(|s| other.contains(s.a))
            || other.segments.first().is_some_and(|s| self.contains(s.a))
    }

    /// (min, max) corners of the bounding box.
    pub fn bounds(&self) -> (Point, Point) {
        let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for s in &self.segments {
            for p in [s.a, s.b] {
                lo = Point::new(lo.x.min(p.x), lo.y.min(p.y));
                hi = Point::new(hi.x.max(p.x), hi.y.max(p.y));
            }
        }
        (lo, hi)
    }
}

/// Points sampled from an object's boundary, in the object's canonical
/// frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub object_id: usize,
    pub points: Vec<Point>,
    pub labels: Vec<PartLabel>,
    /// Index of the source segment of each point.
    pub segments: Vec<usize>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Reorders every per-point field by `order`.
    pub fn permuted(&self, order: &[usize]) -> PointCloud {
        PointCloud {
            object_id: self.object_id,
            points: order.iter().map(|&i| self.points[i]).collect(),
            labels: order.iter().map(|&i| self.labels[i]).collect(),
            segments: order.iter().map(|&i| self.segments[i]).collect(),
        }
    }
}

/// Samples `n` points along `shape`, spaced proportionally to segment length.
///
/// Jittered stratification: the total arc length is cut into `n` equal
/// strata and one point is drawn uniformly inside each, so per-segment counts
/// track length proportions closely. Equal seeds give identical clouds.
pub fn sample_boundary(shape: &BoundaryShape, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    shape.validate()?;
    let total = shape.total_length();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cumulative = Vec::with_capacity(shape.segments.len());
    let mut acc = 0.0;
    for s in &shape.segments {
        acc += s.length();
        cumulative.push(acc);
    }
    let stride = total / n as f64;
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut segments = Vec::with_capacity(n);
    let mut seg = 0;
    for i in 0..n {
        let u: f64 = rng.gen();
        let arc = ((i as f64 + u) * stride).min(total);
        while seg + 1 < shape.segments.len() && arc > cumulative[seg] {
            seg += 1;
        }
        let start = if seg == 0 { 0.0 } else { cumulative[seg - 1] };
        let s = &shape.segments[seg];
        let t = ((arc - start) / s.length()).clamp(0.0, 1.0);
        points.push(s.at(t));
        labels.push(s.label);
        segments.push(seg);
    }
    Ok(PointCloud {
        object_id: 0,
        points,
        labels,
        segments,
    })
}

pub fn to_world(cloud: &PointCloud, tf: &RigidTransform) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|&p| tf.apply(p)).collect(),
        ..cloud.clone()
    }
}

pub fn to_local(point: Point, tf: &RigidTransform) -> Point {
    tf.to_local(point)
}

/// Number of `points` strictly closer than `r` to `center`.
pub fn count_in_ball(points: &[Point], center: Point, r: f64) -> Result<usize> {
    if !(r > 0.0) {
        return Err(Error::InvalidArgument(format!("ball radius must be positive, got {r}")));
    }
    let r2 = r * r;
    Ok(points
        .iter()
        .filter(|p| (**p - center).norm_sq() < r2)
        .count())
}

/// Writes one line per point: `x y label [score...]`.
pub fn write_cloud_scores<W: std::io::Write>(
    w: &mut W,
    cloud: &PointCloud,
    scores: &[Vec<f64>],
) -> Result<()> {
    for (i, (p, l)) in cloud.points.iter().zip(&cloud.labels).enumerate() {
        write!(w, "{} {} {}", p.x, p.y, l)?;
        for channel in scores {
            let v = channel.get(i).ok_or_else(|| {
                Error::Shape(format!("score channel shorter than cloud ({})", cloud.len()))
            })?;
            write!(w, " {v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// One parsed line of the cloud score format.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredPoint {
    /// 1-based source line.
    pub line: usize,
    pub point: Point,
    pub label: PartLabel,
    pub scores: Vec<f64>,
}

/// Parses the cloud score format; errors carry the 1-based line number.
pub fn read_cloud_scores<R: std::io::BufRead>(r: R) -> Result<Vec<ScoredPoint>> {
    let mut out = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() < 3 {
            return Err(Error::Format(format!(
                "line {lineno}: expected `x y label [scores...]`"
            )));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Format(format!("line {lineno}: bad number {s:?}")))
        };
        let point = Point::new(num(fields[0])?, num(fields[1])?);
        let label = PartLabel::parse(fields[2])
            .ok_or_else(|| Error::Format(format!("line {lineno}: unknown label {:?}", fields[2])))?;
        let scores = fields[3..].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?;
        out.push(ScoredPoint {
            line: lineno,
            point,
            label,
            scores,
        });
    }
    Ok(out)
}
