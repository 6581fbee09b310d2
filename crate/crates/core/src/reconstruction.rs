//! From 2D detections and a depth map to 3D macro-features.
//!
//! Broken line segments are joined, the two vertical sides of each detection
//! are selected, sampled pixels along each side are back-projected with their
//! depth, a 3D line is fitted to each side and the segment endpoints are
//! projected onto it. The four resulting corners are moved to the world frame
//! with the camera pose.

use std::f64::consts::PI;

use nalgebra::SymmetricEigen;
use thiserror::Error;

use crate::geometry::{FeatureId, FeatureKind, GeometryError, MacroFeature, Point3, RigidTransform, Vector3};

pub type Point2 = nalgebra::Point2<f64>;

pub const DEFAULT_ANGLE_THRESHOLD_DEG: f64 = 2.0;
pub const DEFAULT_GAP_THRESHOLD_PX: f64 = 10.0;
/// Segments within this many degrees of the image vertical count as sides.
pub const VERTICAL_TOLERANCE_DEG: f64 = 20.0;
pub const SAMPLES_PER_SIDE: usize = 20;
pub const MIN_VALID_SAMPLES: usize = 8;
pub const DEFAULT_LINE_OUTLIER_THRESHOLD: f64 = 0.05;
pub const DEFAULT_MERGE_RADIUS: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReconstructionError {
    #[error("invalid camera intrinsics")]
    InvalidIntrinsics,
    #[error("segment endpoints must be distinct and finite")]
    DegenerateSegment,
    #[error("invalid detection box")]
    InvalidBox,
    #[error("invalid depth {0}")]
    InvalidDepth(f64),
    #[error("{0} side not found")]
    SideNotFound(Side),
    #[error("need at least 3 points to fit a line, got {0}")]
    TooFewPoints(usize),
    #[error("points are coincident")]
    DegenerateLine,
    #[error("too few inliers: {0} points left after outlier removal")]
    TooFewInliers(usize),
    #[error("insufficient depth on {side} side: {valid} of {SAMPLES_PER_SIDE} samples valid")]
    InsufficientDepth { side: Side, valid: usize },
    #[error("depth map: {0}")]
    DepthFormat(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Side::Left => "left",
            Side::Right => "right",
        })
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, ReconstructionError> {
        let valid = fx > 0.0 && fy > 0.0 && [fx, fy, cx, cy].iter().all(|v| v.is_finite());
        if !valid {
            return Err(ReconstructionError::InvalidIntrinsics);
        }
        Ok(Self { fx, fy, cx, cy })
    }

    /// Viewing ray through pixel `p`, scaled so that its z component is 1.
    pub fn ray(&self, p: &Point2) -> Vector3 {
        Vector3::new((p.x - self.cx) / self.fx, (p.y - self.cy) / self.fy, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment2D {
    start: Point2,
    end: Point2,
}

impl Segment2D {
    pub fn new(start: Point2, end: Point2) -> Result<Self, ReconstructionError> {
        let finite = start.coords.iter().chain(end.coords.iter()).all(|v| v.is_finite());
        if !finite || start == end {
            return Err(ReconstructionError::DegenerateSegment);
        }
        Ok(Self { start, end })
    }

    pub fn start(&self) -> &Point2 {
        &self.start
    }

    pub fn end(&self) -> &Point2 {
        &self.end
    }

    pub fn length(&self) -> f64 {
        (self.end - self.start).norm()
    }

    pub fn midpoint(&self) -> Point2 {
        nalgebra::center(&self.start, &self.end)
    }

    /// Undirected orientation in `[0, π)`.
    pub fn orientation(&self) -> f64 {
        let d = self.end - self.start;
        d.y.atan2(d.x).rem_euclid(PI)
    }

    /// Angle to the image vertical, in `[0, π/2]`.
    pub fn angle_from_vertical(&self) -> f64 {
        line_angle(self.orientation(), PI / 2.0)
    }

    /// Same segment with the endpoint of smaller `y` first.
    pub fn top_down(&self) -> Segment2D {
        if self.end.y < self.start.y {
            Segment2D { start: self.end, end: self.start }
        } else {
            *self
        }
    }

    fn endpoints(&self) -> [Point2; 2] {
        [self.start, self.end]
    }
}

/// Angle between two undirected line orientations.
fn line_angle(a: f64, b: f64) -> f64 {
    let d = (a - b).abs().rem_euclid(PI);
    d.min(PI - d)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionBox {
    pub kind: FeatureKind,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub confidence: f64,
}

impl DetectionBox {
    pub fn new(
        kind: FeatureKind,
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
        confidence: f64,
    ) -> Result<Self, ReconstructionError> {
        let finite = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite());
        if !finite || x_min >= x_max || y_min >= y_max || !(0.0..=1.0).contains(&confidence) {
            return Err(ReconstructionError::InvalidBox);
        }
        Ok(Self { kind, x_min, y_min, x_max, y_max, confidence })
    }

    fn contains_expanded(&self, p: &Point2, margin: f64) -> bool {
        p.x >= self.x_min - margin
            && p.x <= self.x_max + margin
            && p.y >= self.y_min - margin
            && p.y <= self.y_max + margin
    }
}

/// Row-major depth image in meters; non-positive or non-finite values are
/// invalid.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    depth: Vec<f32>,
}

impl DepthMap {
    pub const MAGIC: &'static [u8; 8] = b"MRDEPTH1";
    const HEADER_LEN: usize = 16;

    pub fn new(width: u32, height: u32, depth: Vec<f32>) -> Result<Self, ReconstructionError> {
        let expected = (width as usize).checked_mul(height as usize);
        if expected != Some(depth.len()) {
            return Err(ReconstructionError::DepthFormat(format!(
                "{}x{} map needs {} values, got {}",
                width,
                height,
                width as u64 * height as u64,
                depth.len()
            )));
        }
        Ok(Self { width, height, depth })
    }

    /// A map with every pixel invalid.
    pub fn empty(width: u32, height: u32) -> Self {
        Self { width, height, depth: vec![0.0; width as usize * height as usize] }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.depth
    }

    pub fn get(&self, x: u32, y: u32) -> Option<f32> {
        (x < self.width && y < self.height).then(|| self.depth[y as usize * self.width as usize + x as usize])
    }

    pub fn set(&mut self, x: u32, y: u32, value: f32) {
        if x < self.width && y < self.height {
            self.depth[y as usize * self.width as usize + x as usize] = value;
        }
    }

    /// Valid depth at the pixel whose center is nearest to `p` (pixel centers
    /// sit at integer coordinates).
    pub fn depth_at(&self, p: &Point2) -> Option<f64> {
        let (x, y) = (p.x.round(), p.y.round());
        if !(x >= 0.0 && y >= 0.0 && x < self.width as f64 && y < self.height as f64) {
            return None;
        }
        let d = f64::from(self.get(x as u32, y as u32)?);
        (d > 0.0 && d.is_finite()).then_some(d)
    }

    /// `MRDEPTH1`, width and height as little-endian u32, then the values as
    /// little-endian f32, row-major, top row first.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::HEADER_LEN + 4 * self.depth.len());
        out.extend_from_slice(Self::MAGIC);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        for v in &self.depth {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ReconstructionError> {
        let fail = |msg: &str| ReconstructionError::DepthFormat(msg.to_string());
        if bytes.len() < Self::HEADER_LEN {
            return Err(fail("truncated header"));
        }
        if &bytes[..8] != Self::MAGIC {
            return Err(fail("bad magic"));
        }
        let width = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        let height = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes"));
        let body = &bytes[Self::HEADER_LEN..];
        let expected = (width as u64 * height as u64).checked_mul(4);
        if expected != Some(body.len() as u64) {
            return Err(ReconstructionError::DepthFormat(format!(
                "{width}x{height} map does not match {} data bytes",
                body.len()
            )));
        }
        let depth = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Self { width, height, depth })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line3D {
    pub point: Point3,
    pub direction: Vector3,
}

impl Line3D {
    pub fn project(&self, p: &Point3) -> Point3 {
        self.point + self.direction * (p - self.point).dot(&self.direction)
    }

    pub fn distance(&self, p: &Point3) -> f64 {
        (p - self.project(p)).norm()
    }

    /// Point on the line closest to the ray `s · ray`, `s >= 0`, from the origin.
    fn closest_to_ray(&self, ray: &Vector3) -> Point3 {
        let d = self.direction;
        let w = self.point.coords;
        let b = d.dot(ray);
        let c = ray.dot(ray);
        let denom = c - b * b;
        if denom.abs() < 1e-12 * c {
            return self.point;
        }
        let s = (b * ray.dot(&w) - c * d.dot(&w)) / denom;
        self.point + d * s
    }
}

/// Repeatedly merges pairs of segments whose orientations differ by at most
/// `angle_threshold_deg` and whose closest endpoints are at most
/// `gap_threshold` pixels apart. A merged segment spans the two endpoints of
/// the pair that are farthest apart.
pub fn join_segments(segments: &[Segment2D], angle_threshold_deg: f64, gap_threshold: f64) -> Vec<Segment2D> {
    let angle_threshold = angle_threshold_deg.to_radians();
    let mut out = segments.to_vec();
    'restart: loop {
        for i in 0..out.len() {
            for j in i + 1..out.len() {
                if let Some(merged) = try_merge(&out[i], &out[j], angle_threshold, gap_threshold) {
                    out[i] = merged;
                    out.remove(j);
                    continue 'restart;
                }
            }
        }
        return out;
    }
}

fn try_merge(a: &Segment2D, b: &Segment2D, angle_threshold: f64, gap_threshold: f64) -> Option<Segment2D> {
    if line_angle(a.orientation(), b.orientation()) > angle_threshold {
        return None;
    }
    let gap = a
        .endpoints()
        .iter()
        .flat_map(|p| b.endpoints().map(|q| (p - q).norm()))
        .fold(f64::INFINITY, f64::min);
    if gap > gap_threshold {
        return None;
    }
    let pts = [a.start, a.end, b.start, b.end];
    let mut best = (0.0, 0, 1);
    for i in 0..4 {
        for j in i + 1..4 {
            let d = (pts[i] - pts[j]).norm();
            if d > best.0 {
                best = (d, i, j);
            }
        }
    }
    Segment2D::new(pts[best.1], pts[best.2]).ok()
}

/// The longest near-vertical segment on each side of `bbox`.
///
/// Candidates must have their midpoint inside the box grown by `gap_threshold`
/// and lie within [`VERTICAL_TOLERANCE_DEG`] of vertical; each candidate
/// belongs to whichever vertical box edge its midpoint is closer to.
pub fn select_vertical_sides(
    bbox: &DetectionBox,
    segments: &[Segment2D],
    gap_threshold: f64,
) -> Result<(Segment2D, Segment2D), ReconstructionError> {
    let tolerance = VERTICAL_TOLERANCE_DEG.to_radians();
    let mut left: Option<(&Segment2D, f64)> = None;
    let mut right: Option<(&Segment2D, f64)> = None;
    for seg in segments {
        let mid = seg.midpoint();
        if !bbox.contains_expanded(&mid, gap_threshold) || seg.angle_from_vertical() > tolerance {
            continue;
        }
        let to_left = (mid.x - bbox.x_min).abs();
        let to_right = (mid.x - bbox.x_max).abs();
        let (slot, edge_distance) = if to_left <= to_right { (&mut left, to_left) } else { (&mut right, to_right) };
        let better = match slot {
            None => true,
            Some((current, current_distance)) => {
                seg.length() > current.length()
                    || (seg.length() == current.length() && edge_distance < *current_distance)
            }
        };
        if better {
            *slot = Some((seg, edge_distance));
        }
    }
    let left = left.ok_or(ReconstructionError::SideNotFound(Side::Left))?.0;
    let right = right.ok_or(ReconstructionError::SideNotFound(Side::Right))?.0;
    Ok((*left, *right))
}

/// Pixel `p` at depth `d` into camera coordinates.
pub fn back_project(p: &Point2, d: f64, k: &CameraIntrinsics) -> Result<Point3, ReconstructionError> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(ReconstructionError::InvalidDepth(d));
    }
    Ok(Point3::from(k.ray(p) * d))
}

/// Perspective projection of a camera-frame point; `None` behind the camera.
pub fn project(p: &Point3, k: &CameraIntrinsics) -> Option<Point2> {
    (p.z > 0.0).then(|| Point2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
}

fn principal_line(points: &[Point3]) -> Result<Line3D, ReconstructionError> {
    let n = points.len() as f64;
    let centroid = Point3::from(points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / n);
    let scatter = points.iter().fold(nalgebra::Matrix3::zeros(), |acc, p| {
        let d = p - centroid;
        acc + d * d.transpose()
    });
    let eig = SymmetricEigen::new(scatter);
    let top = eig.eigenvalues.imax();
    if eig.eigenvalues[top].is_nan() || eig.eigenvalues[top] <= 0.0 {
        return Err(ReconstructionError::DegenerateLine);
    }
    let mut direction = eig.eigenvectors.column(top).normalize();
    if direction[direction.iamax()] < 0.0 {
        direction = -direction;
    }
    Ok(Line3D { point: centroid, direction })
}

/// Orthogonal-distance line fit in two passes: fit all points, drop those
/// farther than `outlier_threshold` from the first line, fit again.
pub fn fit_line_3d(points: &[Point3], outlier_threshold: f64) -> Result<Line3D, ReconstructionError> {
    if points.len() < 3 {
        return Err(ReconstructionError::TooFewPoints(points.len()));
    }
    let first = principal_line(points)?;
    let survivors: Vec<Point3> = points.iter().filter(|p| first.distance(p) <= outlier_threshold).copied().collect();
    if survivors.len() < 3 {
        return Err(ReconstructionError::TooFewInliers(survivors.len()));
    }
    principal_line(&survivors)
}

/// Top and bottom 3D endpoints of one vertical side, in camera coordinates.
fn reconstruct_side(
    seg: &Segment2D,
    side: Side,
    depth: &DepthMap,
    k: &CameraIntrinsics,
) -> Result<(Point3, Point3), ReconstructionError> {
    let seg = seg.top_down();
    let last = (SAMPLES_PER_SIDE - 1) as f64;
    let samples: Vec<Point3> = (0..SAMPLES_PER_SIDE)
        .filter_map(|i| {
            let p = seg.start() + (seg.end() - seg.start()) * (i as f64 / last);
            let d = depth.depth_at(&p)?;
            back_project(&p, d, k).ok()
        })
        .collect();
    if samples.len() < MIN_VALID_SAMPLES {
        return Err(ReconstructionError::InsufficientDepth { side, valid: samples.len() });
    }
    let line = fit_line_3d(&samples, DEFAULT_LINE_OUTLIER_THRESHOLD)?;
    let endpoint = |p: &Point2| match depth.depth_at(p) {
        Some(d) => back_project(p, d, k).map(|q| line.project(&q)),
        None => Ok(line.closest_to_ray(&k.ray(p))),
    };
    Ok((endpoint(seg.start())?, endpoint(seg.end())?))
}

/// Reconstructs one detection as a world-frame feature with corners ordered
/// (left-top, left-bottom, right-top, right-bottom) in image space.
///
/// `segments` should already be joined. `camera_pose` maps camera coordinates
/// to world coordinates.
pub fn reconstruct_feature(
    id: FeatureId,
    bbox: &DetectionBox,
    segments: &[Segment2D],
    depth: &DepthMap,
    k: &CameraIntrinsics,
    camera_pose: &RigidTransform,
) -> Result<MacroFeature, ReconstructionError> {
    let (left, right) = select_vertical_sides(bbox, segments, DEFAULT_GAP_THRESHOLD_PX)?;
    let (lt, lb) = reconstruct_side(&left, Side::Left, depth, k)?;
    let (rt, rb) = reconstruct_side(&right, Side::Right, depth, k)?;
    let corners = [lt, lb, rt, rb].map(|c| camera_pose.apply(&c));
    Ok(MacroFeature::with_corners(id, bbox.kind, corners)?)
}

/// Collapses repeated detections: same-kind features whose centroids chain
/// together within `merge_radius` form one cluster. The cluster keeps its
/// lowest id, sits at the mean of the member centroids and carries the first
/// member's corner quad shifted onto that mean. Output is sorted by id.
pub fn merge_duplicate_features(features: &[MacroFeature], merge_radius: f64) -> Vec<MacroFeature> {
    let mut assigned = vec![false; features.len()];
    let mut out = Vec::new();
    for seed in 0..features.len() {
        if assigned[seed] {
            continue;
        }
        assigned[seed] = true;
        let mut members = vec![seed];
        let mut frontier = vec![seed];
        while let Some(current) = frontier.pop() {
            for other in 0..features.len() {
                if !assigned[other]
                    && features[other].kind == features[current].kind
                    && (features[other].centroid() - features[current].centroid()).norm() <= merge_radius
                {
                    assigned[other] = true;
                    members.push(other);
                    frontier.push(other);
                }
            }
        }
        members.sort_unstable();
        let first = &features[members[0]];
        let mean = members.iter().fold(Vector3::zeros(), |acc, &m| acc + features[m].centroid().coords)
            / members.len() as f64;
        let id = members.iter().map(|&m| features[m].id).min().unwrap_or(first.id);
        out.push(first.translated(&(mean - first.centroid().coords)).with_id(id));
    }
    out.sort_by_key(|f| f.id);
    out
}
