//! Synthetic scenes with known ground truth.
//!
//! A reference layout of wall-mounted doors and windows is generated from a
//! [`SceneSpec`]; the observed set is the reference seen through the inverse
//! of the hidden transform, then corrupted by noise, dropout and spurious
//! detections. True observed features keep their reference id, so a
//! correspondence is correct exactly when its two ids agree.

use std::f64::consts::PI;
use std::str::FromStr;

use nalgebra::Matrix3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::geometry::{FeatureId, FeatureKind, FeatureSet, GeometryError, MacroFeature, Point3, RigidTransform, Vector3};
use crate::reconstruction::{project, CameraIntrinsics, DepthMap, DetectionBox, Point2, Segment2D};

pub const DOOR_SIZE: (f64, f64) = (0.9, 2.1);
pub const WINDOW_SIZE: (f64, f64) = (1.2, 1.5);
pub const DOOR_CENTER_HEIGHT: f64 = 1.05;
pub const WINDOW_CENTER_HEIGHT: f64 = 1.6;
const WINDOW_HEIGHT_JITTER: f64 = 0.15;
/// Smallest center-to-center spacing of features along a wall.
pub const MIN_SPACING: f64 = 1.6;
/// Along-wall placement jitter of corridor features.
const SLOT_JITTER: f64 = 0.05;
/// True features and spurious ones are kept at least this far apart.
pub const MIN_SEPARATION: f64 = 0.3;
/// Spurious feature ids start here (or above the largest reference id).
pub const SPURIOUS_ID_BASE: FeatureId = 1_000_000;
pub const MIN_FEATURES: usize = 6;

pub const DEFAULT_IMAGE_SIZE: (u32, u32) = (640, 480);
pub const DEFAULT_VIEW_DISTANCE: f64 = 3.0;
/// Pixels of slack around the projected quad that still receive depth.
const DEPTH_DILATION_PX: f64 = 1.5;
/// Gap left between the pieces of a split edge.
pub const SPLIT_GAP_PX: f64 = 6.0;
const SPLIT_PIECES: usize = 3;
const SPURIOUS_ATTEMPTS: usize = 10_000;

const REFERENCE_STREAM: u64 = 0;
const OBSERVED_STREAM: u64 = 1;
const TRANSFORM_STREAM: u64 = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("invalid scene: {0}")]
    InvalidSpec(String),
    #[error("infeasible layout: {0}")]
    Infeasible(String),
    #[error("feature {0} has no corners")]
    MissingCorners(FeatureId),
    #[error("feature is behind the camera")]
    BehindCamera,
    #[error("feature does not fit in the image")]
    OutOfView,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Layout {
    /// Two parallel walls facing each other, each divided into slots of
    /// [`MIN_SPACING`]; features fill a random subset of the slots.
    #[default]
    Corridor,
    /// Features scattered over a grid of cells, each facing an axis direction.
    Grid,
    /// Evenly spaced around a circle, facing its center. Highly symmetric.
    Ring,
}

impl Layout {
    pub fn as_str(self) -> &'static str {
        match self {
            Layout::Corridor => "corridor",
            Layout::Grid => "grid",
            Layout::Ring => "ring",
        }
    }
}

impl std::fmt::Display for Layout {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Layout {
    type Err = SceneError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "corridor" => Ok(Layout::Corridor),
            "grid" => Ok(Layout::Grid),
            "ring" => Ok(Layout::Ring),
            other => Err(SceneError::InvalidSpec(format!("unknown layout {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub layout: Layout,
    pub door_count: usize,
    pub window_count: usize,
    /// Size of the scene box in meters; the layout is placed in `[0, extent]`.
    pub extent: Vector3,
    pub noise_sigma: f64,
    pub dropout_rate: f64,
    pub spurious_rate: f64,
    /// Hidden observed-to-reference transform.
    pub transform: RigidTransform,
    pub rng_seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            layout: Layout::Corridor,
            door_count: 20,
            window_count: 10,
            extent: Vector3::new(40.0, 6.0, 3.0),
            noise_sigma: 0.0,
            dropout_rate: 0.0,
            spurious_rate: 0.0,
            transform: RigidTransform::identity(),
            rng_seed: 42,
        }
    }
}

impl SceneSpec {
    pub fn feature_count(&self) -> usize {
        self.door_count + self.window_count
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |msg: String| Err(SceneError::InvalidSpec(msg));
        if self.feature_count() < MIN_FEATURES {
            return bad(format!("need at least {MIN_FEATURES} features, got {}", self.feature_count()));
        }
        if !self.extent.iter().all(|v| v.is_finite() && *v > 0.0) {
            return bad("extent must be positive".into());
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!("noise sigma {} must be non-negative", self.noise_sigma));
        }
        for (name, rate) in [("dropout", self.dropout_rate), ("spurious", self.spurious_rate)] {
            if !(0.0..1.0).contains(&rate) {
                return bad(format!("{name} rate {rate} must lie in [0, 1)"));
            }
        }
        Ok(())
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A random pose for the hidden transform: any heading, roll and pitch within
/// ±20°, translation within ±10 m per axis.
pub fn random_transform(seed: u64) -> RigidTransform {
    let mut rng = stream_rng(seed, TRANSFORM_STREAM);
    let tilt = 20f64.to_radians();
    let roll = rng.random_range(-tilt..tilt);
    let pitch = rng.random_range(-tilt..tilt);
    let yaw = rng.random_range(-PI..PI);
    let t = Vector3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
    RigidTransform::from_euler(roll, pitch, yaw, t)
}

/// Wall-aligned quad centered at `center`, seen from the side `normal` points
/// to. Corners run (left-top, left-bottom, right-top, right-bottom) for a
/// viewer standing upright and facing the wall.
pub fn wall_quad(center: Point3, normal: Vector3, width: f64, height: f64) -> [Point3; 4] {
    let up = Vector3::z();
    let right = up.cross(&normal).normalize() * (width / 2.0);
    let up = up * (height / 2.0);
    [center - right + up, center - right - up, center + right + up, center + right - up]
}

fn kind_size(kind: FeatureKind) -> (f64, f64) {
    match kind {
        FeatureKind::Door => DOOR_SIZE,
        FeatureKind::Window => WINDOW_SIZE,
    }
}

fn center_height(kind: FeatureKind, rng: &mut ChaCha8Rng, jitter: bool) -> f64 {
    match kind {
        FeatureKind::Door => DOOR_CENTER_HEIGHT,
        FeatureKind::Window if jitter => {
            WINDOW_CENTER_HEIGHT + rng.random_range(-WINDOW_HEIGHT_JITTER..=WINDOW_HEIGHT_JITTER)
        }
        FeatureKind::Window => WINDOW_CENTER_HEIGHT,
    }
}

/// Along-wall jitter that keeps neighbors at least `MIN_SPACING - 0.2` apart.
fn slot_jitter(spacing: f64, rng: &mut ChaCha8Rng) -> f64 {
    let half = ((spacing - MIN_SPACING) / 2.0 + 0.1).min(0.4);
    rng.random_range(-half..=half)
}

/// Deterministic reference layout for `spec`; ids run from 0.
pub fn generate_reference(spec: &SceneSpec) -> Result<FeatureSet, SceneError> {
    spec.validate()?;
    let mut rng = stream_rng(spec.rng_seed, REFERENCE_STREAM);
    let n = spec.feature_count();
    let mut kinds: Vec<FeatureKind> = std::iter::repeat_n(FeatureKind::Door, spec.door_count)
        .chain(std::iter::repeat_n(FeatureKind::Window, spec.window_count))
        .collect();
    kinds.shuffle(&mut rng);

    let placements = match spec.layout {
        Layout::Corridor => corridor_slots(spec, n, &mut rng)?,
        Layout::Grid => grid_slots(spec, n, &mut rng)?,
        Layout::Ring => ring_slots(spec, n)?,
    };
    let jitter = spec.layout != Layout::Ring;
    let mut features = Vec::with_capacity(n);
    for (i, ((x, y, normal), kind)) in placements.into_iter().zip(kinds).enumerate() {
        let z = center_height(kind, &mut rng, jitter);
        let (w, h) = kind_size(kind);
        let quad = wall_quad(Point3::new(x, y, z), normal, w, h);
        features.push(MacroFeature::with_corners(i as FeatureId, kind, quad)?);
    }
    for (i, a) in features.iter().enumerate() {
        for b in &features[i + 1..] {
            if (a.centroid() - b.centroid()).norm() < MIN_SEPARATION {
                return Err(SceneError::Infeasible("features overlap; enlarge the extent".into()));
            }
        }
    }
    Ok(FeatureSet::new(features)?)
}

type Slot = (f64, f64, Vector3);

fn corridor_slots(spec: &SceneSpec, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Slot>, SceneError> {
    let (length, width) = (spec.extent.x, spec.extent.y);
    let per_wall = [n.div_ceil(2), n / 2];
    let slots_per_wall = (length / MIN_SPACING).floor() as usize;
    if slots_per_wall < per_wall[0] {
        return Err(SceneError::Infeasible(format!(
            "{n} features need a corridor at least {:.1} m long",
            MIN_SPACING * per_wall[0] as f64
        )));
    }
    let walls = [(0.0, Vector3::y()), (width, -Vector3::y())];
    let mut slots = Vec::with_capacity(n);
    for ((y, normal), count) in walls.into_iter().zip(per_wall) {
        let mut cells: Vec<usize> = (0..slots_per_wall).collect();
        cells.shuffle(rng);
        let mut used = cells[..count].to_vec();
        used.sort_unstable();
        for i in used {
            let x = (i as f64 + 0.5) * MIN_SPACING + rng.random_range(-SLOT_JITTER..=SLOT_JITTER);
            slots.push((x, y, normal));
        }
    }
    Ok(slots)
}

fn grid_slots(spec: &SceneSpec, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Slot>, SceneError> {
    let (ex, ey) = (spec.extent.x, spec.extent.y);
    let cols = ((n as f64 * ex / ey).sqrt().ceil() as usize).max(1);
    let rows = n.div_ceil(cols);
    let (cw, ch) = (ex / cols as f64, ey / rows as f64);
    if cw < MIN_SPACING || ch < MIN_SPACING {
        return Err(SceneError::Infeasible(format!(
            "{n} features need {cols}x{rows} cells of at least {MIN_SPACING} m"
        )));
    }
    let mut cells: Vec<usize> = (0..cols * rows).collect();
    cells.shuffle(rng);
    let normals = [Vector3::x(), -Vector3::x(), Vector3::y(), -Vector3::y()];
    let slots = cells[..n]
        .iter()
        .map(|&cell| {
            let (c, r) = (cell % cols, cell / cols);
            let x = (c as f64 + 0.5) * cw + slot_jitter(cw, rng);
            let y = (r as f64 + 0.5) * ch + slot_jitter(ch, rng);
            (x, y, normals[rng.random_range(0..normals.len())])
        })
        .collect();
    Ok(slots)
}

fn ring_slots(spec: &SceneSpec, n: usize) -> Result<Vec<Slot>, SceneError> {
    let radius = spec.extent.x.min(spec.extent.y) / 2.0;
    let spacing = 2.0 * radius * (PI / n as f64).sin();
    if spacing < MIN_SPACING {
        return Err(SceneError::Infeasible(format!("{n} features do not fit on a ring of radius {radius} m")));
    }
    let (cx, cy) = (spec.extent.x / 2.0, spec.extent.y / 2.0);
    Ok((0..n)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / n as f64;
            let (s, c) = a.sin_cos();
            (cx + radius * c, cy + radius * s, Vector3::new(-c, -s, 0.0))
        })
        .collect())
}

/// Observed set for `reference` under `spec`, plus the observed-to-reference
/// truth (`spec.transform`).
///
/// Geometry is mapped through the inverse of the truth, each feature is then
/// displaced by isotropic Gaussian noise (its corners additionally jitter
/// about the displaced centroid), features are dropped independently and
/// spurious features are added at free locations. Spurious ids start at
/// [`SPURIOUS_ID_BASE`] or one past the largest reference id.
pub fn generate_observed(reference: &FeatureSet, spec: &SceneSpec) -> Result<(FeatureSet, RigidTransform), SceneError> {
    spec.validate()?;
    let mut rng = stream_rng(spec.rng_seed, OBSERVED_STREAM);
    let to_observed = spec.transform.inverse();
    let sigma = spec.noise_sigma;
    let noise = Normal::new(0.0, sigma).map_err(|e| SceneError::InvalidSpec(e.to_string()))?;
    let draw = |rng: &mut ChaCha8Rng| Vector3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng));

    let mut observed = Vec::with_capacity(reference.len());
    for f in reference.iter() {
        let moved = f.transformed(&to_observed);
        let noisy = if sigma > 0.0 {
            let shift = draw(&mut rng);
            match moved.corners() {
                Some(corners) => {
                    let jitter: [Vector3; 4] = std::array::from_fn(|_| draw(&mut rng));
                    let mean = jitter.iter().sum::<Vector3>() / 4.0;
                    let noisy: [Point3; 4] = std::array::from_fn(|i| corners[i] + shift + jitter[i] - mean);
                    MacroFeature::with_corners(f.id, f.kind, noisy)?
                }
                None => moved.translated(&shift),
            }
        } else {
            moved
        };
        if rng.random::<f64>() >= spec.dropout_rate {
            observed.push(noisy);
        }
    }

    let spurious_count = (spec.spurious_rate * reference.len() as f64).round() as usize;
    let next_id = reference.iter().map(|f| f.id).max().map_or(0, |m| m.saturating_add(1));
    let first_id = next_id.max(SPURIOUS_ID_BASE);
    let (lo, hi) = bounding_box(reference);
    let lo = lo - Vector3::new(1.0, 1.0, 0.5);
    let hi = hi + Vector3::new(1.0, 1.0, 0.5);
    let mut added = 0;
    for _ in 0..SPURIOUS_ATTEMPTS {
        if added == spurious_count {
            break;
        }
        let c = Point3::new(
            rng.random_range(lo.x..=hi.x),
            rng.random_range(lo.y..=hi.y),
            rng.random_range(lo.z..=hi.z),
        );
        let kind = if rng.random::<bool>() { FeatureKind::Door } else { FeatureKind::Window };
        let heading = rng.random_range(-PI..PI);
        if reference.iter().any(|f| (f.centroid() - c).norm() < MIN_SEPARATION) {
            continue;
        }
        let (w, h) = kind_size(kind);
        let quad = wall_quad(c, Vector3::new(heading.cos(), heading.sin(), 0.0), w, h);
        let fake = MacroFeature::with_corners(first_id + added as FeatureId, kind, quad)?;
        observed.push(fake.transformed(&to_observed));
        added += 1;
    }
    Ok((FeatureSet::new(observed)?, spec.transform))
}

fn bounding_box(set: &FeatureSet) -> (Point3, Point3) {
    let mut lo = Point3::from(Vector3::repeat(f64::INFINITY));
    let mut hi = Point3::from(Vector3::repeat(f64::NEG_INFINITY));
    for f in set.iter() {
        lo = lo.inf(f.centroid());
        hi = hi.sup(f.centroid());
    }
    if set.is_empty() {
        (Point3::origin(), Point3::origin())
    } else {
        (lo, hi)
    }
}

/// Camera-to-world pose looking straight at the feature's quad from
/// `distance` meters, image x along the quad's left-to-right edge and image y
/// along its top-to-bottom edge.
pub fn facing_camera_pose(feature: &MacroFeature, distance: f64) -> Result<RigidTransform, SceneError> {
    let [lt, lb, rt, _] = *feature.corners().ok_or(SceneError::MissingCorners(feature.id))?;
    let x = (rt - lt).normalize();
    let z = x.cross(&(lb - lt)).normalize();
    let y = z.cross(&x);
    let rotation = Matrix3::from_columns(&[x, y, z]);
    let center = feature.centroid() - z * distance;
    Ok(RigidTransform::new(rotation, center.coords)?)
}

pub fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics { fx: 500.0, fy: 500.0, cx: 320.0, cy: 240.0 }
}

/// Synthetic sensor input for one feature: exact plane depth over the
/// projected quad (all other pixels invalid), the exact projected bounding
/// box, and the projected left and right edges. With `split`, each edge is
/// cut into three pieces separated by [`SPLIT_GAP_PX`].
pub fn render_depth_scene(
    feature: &MacroFeature,
    k: &CameraIntrinsics,
    camera_pose: &RigidTransform,
    image_size: (u32, u32),
    split: bool,
) -> Result<(DepthMap, DetectionBox, Vec<Segment2D>), SceneError> {
    let corners = feature.corners().ok_or(SceneError::MissingCorners(feature.id))?;
    let world_to_camera = camera_pose.inverse();
    let cam = corners.map(|c| world_to_camera.apply(&c));
    let mut px = [Point2::origin(); 4];
    for (p, c) in px.iter_mut().zip(&cam) {
        *p = project(c, k).ok_or(SceneError::BehindCamera)?;
    }
    let (w, h) = image_size;
    let x_min = px.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
    let x_max = px.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
    let y_min = px.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let y_max = px.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    if x_min < 0.0 || y_min < 0.0 || x_max > (w - 1) as f64 || y_max > (h - 1) as f64 {
        return Err(SceneError::OutOfView);
    }
    let bbox = DetectionBox::new(feature.kind, x_min, y_min, x_max, y_max, 1.0).map_err(|_| SceneError::OutOfView)?;

    let normal = (cam[1] - cam[0]).cross(&(cam[2] - cam[0]));
    let offset = normal.dot(&cam[0].coords);
    // boundary walk: left-top, right-top, right-bottom, left-bottom
    let polygon = [px[0], px[2], px[3], px[1]];
    let mut depth = DepthMap::empty(w, h);
    let y_range = (y_min - 2.0).floor().max(0.0) as u32..=((y_max + 2.0).ceil() as u32).min(h - 1);
    let x_range = (x_min - 2.0).floor().max(0.0) as u32..=((x_max + 2.0).ceil() as u32).min(w - 1);
    for y in y_range {
        for x in x_range.clone() {
            let p = Point2::new(x as f64, y as f64);
            if !near_polygon(&p, &polygon, DEPTH_DILATION_PX) {
                continue;
            }
            let d = offset / normal.dot(&k.ray(&p));
            if d > 0.0 && d.is_finite() {
                depth.set(x, y, d as f32);
            }
        }
    }

    let mut segments = Vec::new();
    for (a, b) in [(px[0], px[1]), (px[2], px[3])] {
        if split {
            segments.extend(split_segment(a, b)?);
        } else {
            segments.push(Segment2D::new(a, b).map_err(|_| SceneError::OutOfView)?);
        }
    }
    Ok((depth, bbox, segments))
}

fn split_segment(a: Point2, b: Point2) -> Result<Vec<Segment2D>, SceneError> {
    let len = (b - a).norm();
    let piece = (len - SPLIT_GAP_PX * (SPLIT_PIECES - 1) as f64) / SPLIT_PIECES as f64;
    if piece <= SPLIT_GAP_PX {
        return Err(SceneError::OutOfView);
    }
    let dir = (b - a) / len;
    (0..SPLIT_PIECES)
        .map(|i| {
            let s = i as f64 * (piece + SPLIT_GAP_PX);
            let end = if i + 1 == SPLIT_PIECES { b } else { a + dir * (s + piece) };
            Segment2D::new(a + dir * s, end).map_err(|_| SceneError::OutOfView)
        })
        .collect()
}

fn near_polygon(p: &Point2, polygon: &[Point2; 4], margin: f64) -> bool {
    let mut inside = false;
    let mut min_dist = f64::INFINITY;
    for i in 0..4 {
        let (a, b) = (polygon[i], polygon[(i + 1) % 4]);
        if (a.y > p.y) != (b.y > p.y) && p.x < a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y) {
            inside = !inside;
        }
        let ab = b - a;
        let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
        min_dist = min_dist.min((p - (a + ab * t)).norm());
    }
    inside || min_dist <= margin
}
