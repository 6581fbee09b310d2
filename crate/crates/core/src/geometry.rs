//! 3D primitives, rigid transforms and typed macro-feature sets.

use std::collections::HashMap;
use std::fmt;

use nalgebra::{Matrix3, Matrix4, Rotation3, Unit};
use thiserror::Error;

use crate::kdtree::KdTree;

pub type Point3 = nalgebra::Point3<f64>;
pub type Vector3 = nalgebra::Vector3<f64>;
pub type FeatureId = u64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("rotation is not orthonormal with det +1 (max deviation {0:.3e})")]
    NotARotation(f64),
    #[error("duplicate feature id {0}")]
    DuplicateId(FeatureId),
    #[error("feature {id}: centroid is not the mean of its corners (off by {offset:.3e})")]
    CentroidMismatch { id: FeatureId, offset: f64 },
    #[error("empty index")]
    EmptyIndex,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("unknown feature id {0}")]
    UnknownId(FeatureId),
}

/// Proper rigid motion `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3,
}

impl RigidTransform {
    /// Maximum per-entry deviation allowed in `RᵀR = I` and `det R = 1`.
    pub const TOLERANCE: f64 = 1e-9;

    pub fn new(rotation: Matrix3<f64>, translation: Vector3) -> Result<Self, GeometryError> {
        if rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let deviation = rotation_deviation(&rotation);
        if deviation > Self::TOLERANCE {
            return Err(GeometryError::NotARotation(deviation));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_translation(translation: Vector3) -> Self {
        Self { rotation: Matrix3::identity(), translation }
    }

    /// Rotation of `angle` radians about `axis` followed by `translation`.
    /// A zero axis yields a pure translation.
    pub fn from_axis_angle(axis: &Vector3, angle: f64, translation: Vector3) -> Self {
        let rotation = match Unit::try_new(*axis, 0.0) {
            Some(axis) => Rotation3::from_axis_angle(&axis, angle).into_inner(),
            None => Matrix3::identity(),
        };
        Self { rotation, translation }
    }

    /// Rotation from roll/pitch/yaw (radians, applied as `Rz(yaw) Ry(pitch) Rx(roll)`).
    pub fn from_euler(roll: f64, pitch: f64, yaw: f64, translation: Vector3) -> Self {
        Self {
            rotation: Rotation3::from_euler_angles(roll, pitch, yaw).into_inner(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3 {
        &self.translation
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn apply_vector(&self, v: &Vector3) -> Vector3 {
        self.rotation * v
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform { rotation: rt, translation: -(rt * self.translation) }
    }

    /// Rotation angle in radians, in `[0, π]`.
    ///
    /// Uses `atan2(|axis|, tr - 1)` rather than `acos` so that tiny angles keep
    /// full precision.
    pub fn rotation_angle(&self) -> f64 {
        let r = &self.rotation;
        let axis = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
        axis.norm().atan2(r.trace() - 1.0)
    }

    /// Angle of `R_self · R_otherᵀ`.
    pub fn rotation_angle_to(&self, other: &RigidTransform) -> f64 {
        let relative = RigidTransform {
            rotation: self.rotation * other.rotation.transpose(),
            translation: Vector3::zeros(),
        };
        relative.rotation_angle()
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Largest deviation from the rotation invariants; zero for an exact rotation.
    pub fn deviation(&self) -> f64 {
        rotation_deviation(&self.rotation)
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

fn rotation_deviation(r: &Matrix3<f64>) -> f64 {
    let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
    let det = (r.determinant() - 1.0).abs();
    if ortho.is_nan() || det.is_nan() {
        return f64::INFINITY;
    }
    ortho.max(det)
}

pub fn apply_transform(t: &RigidTransform, p: &Point3) -> Point3 {
    t.apply(p)
}

pub fn compose(t1: &RigidTransform, t2: &RigidTransform) -> RigidTransform {
    t1.compose(t2)
}

pub fn inverse(t: &RigidTransform) -> RigidTransform {
    t.inverse()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureKind {
    Door,
    Window,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Door => "door",
            FeatureKind::Window => "window",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "door" => Ok(FeatureKind::Door),
            "window" => Ok(FeatureKind::Window),
            other => Err(format!("unknown feature kind {other:?}")),
        }
    }
}

/// A door or window reduced to its centroid and, when known, its corner quad.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroFeature {
    pub id: FeatureId,
    pub kind: FeatureKind,
    centroid: Point3,
    corners: Option<[Point3; 4]>,
}

impl MacroFeature {
    pub fn new(id: FeatureId, kind: FeatureKind, centroid: Point3) -> Result<Self, GeometryError> {
        if !is_finite(&centroid) {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self { id, kind, centroid, corners: None })
    }

    /// Builds a feature whose centroid is the mean of `corners`.
    pub fn with_corners(
        id: FeatureId,
        kind: FeatureKind,
        corners: [Point3; 4],
    ) -> Result<Self, GeometryError> {
        if !corners.iter().all(is_finite) {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self { id, kind, centroid: corner_mean(&corners), corners: Some(corners) })
    }

    /// Builds a feature from a stored centroid and corner quad, checking that
    /// the two agree.
    pub fn from_parts(
        id: FeatureId,
        kind: FeatureKind,
        centroid: Point3,
        corners: Option<[Point3; 4]>,
    ) -> Result<Self, GeometryError> {
        let mut feature = Self::new(id, kind, centroid)?;
        if let Some(corners) = corners {
            if !corners.iter().all(is_finite) {
                return Err(GeometryError::NonFinite);
            }
            let mean = corner_mean(&corners);
            let offset = (mean - centroid).norm();
            let scale = 1.0 + corners.iter().map(|c| c.coords.amax()).fold(0.0, f64::max);
            if offset > 1e-9 * scale {
                return Err(GeometryError::CentroidMismatch { id, offset });
            }
            feature.corners = Some(corners);
        }
        Ok(feature)
    }

    pub fn centroid(&self) -> &Point3 {
        &self.centroid
    }

    pub fn corners(&self) -> Option<&[Point3; 4]> {
        self.corners.as_ref()
    }

    /// Copy of this feature with every point mapped through `t`.
    pub fn transformed(&self, t: &RigidTransform) -> MacroFeature {
        MacroFeature {
            id: self.id,
            kind: self.kind,
            centroid: t.apply(&self.centroid),
            corners: self.corners.map(|cs| cs.map(|c| t.apply(&c))),
        }
    }

    /// Copy of this feature rigidly shifted by `offset`.
    pub fn translated(&self, offset: &Vector3) -> MacroFeature {
        MacroFeature {
            id: self.id,
            kind: self.kind,
            centroid: self.centroid + offset,
            corners: self.corners.map(|cs| cs.map(|c| c + offset)),
        }
    }

    pub fn with_id(mut self, id: FeatureId) -> MacroFeature {
        self.id = id;
        self
    }
}

pub fn corner_mean(corners: &[Point3; 4]) -> Point3 {
    let sum = corners.iter().fold(Vector3::zeros(), |acc, c| acc + c.coords);
    Point3::from(sum / 4.0)
}

fn is_finite(p: &Point3) -> bool {
    p.coords.iter().all(|v| v.is_finite())
}

#[derive(Debug, Clone, Copy)]
pub struct Neighbor<'a> {
    pub feature: &'a MacroFeature,
    pub distance: f64,
}

/// Features with unique ids plus a k-d tree over their centroids.
///
/// Features pushed after construction are kept in a small linear tail until the
/// set doubles in size, at which point the tree is rebuilt over everything.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    features: Vec<MacroFeature>,
    by_id: HashMap<FeatureId, usize>,
    tree: KdTree,
    indexed: usize,
}

/// Two sets are equal when they hold the same features in the same order.
impl PartialEq for FeatureSet {
    fn eq(&self, other: &Self) -> bool {
        self.features == other.features
    }
}

impl FeatureSet {
    pub fn new(features: Vec<MacroFeature>) -> Result<Self, GeometryError> {
        let mut by_id = HashMap::with_capacity(features.len());
        for (i, f) in features.iter().enumerate() {
            if by_id.insert(f.id, i).is_some() {
                return Err(GeometryError::DuplicateId(f.id));
            }
        }
        let mut set = Self { features, by_id, tree: KdTree::default(), indexed: 0 };
        set.rebuild();
        Ok(set)
    }

    fn rebuild(&mut self) {
        let points: Vec<[f64; 3]> = self.features.iter().map(|f| point_array(f.centroid())).collect();
        let ids: Vec<FeatureId> = self.features.iter().map(|f| f.id).collect();
        self.tree = KdTree::build(points, ids);
        self.indexed = self.features.len();
    }

    pub fn push(&mut self, feature: MacroFeature) -> Result<(), GeometryError> {
        if self.by_id.contains_key(&feature.id) {
            return Err(GeometryError::DuplicateId(feature.id));
        }
        self.by_id.insert(feature.id, self.features.len());
        self.features.push(feature);
        if self.features.len() >= 2 * self.indexed.max(1) {
            self.rebuild();
        }
        Ok(())
    }

    pub fn features(&self) -> &[MacroFeature] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn get(&self, id: FeatureId) -> Option<&MacroFeature> {
        self.by_id.get(&id).map(|&i| &self.features[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &MacroFeature> {
        self.features.iter()
    }

    /// The `k` features nearest to `query`, ascending by distance then id.
    pub fn knn(&self, query: &Point3, k: usize) -> Result<Vec<Neighbor<'_>>, GeometryError> {
        self.search(query, k, None)
    }

    /// The `k` nearest neighbors of feature `id`, excluding the feature itself.
    pub fn knn_for(&self, id: FeatureId, k: usize) -> Result<Vec<Neighbor<'_>>, GeometryError> {
        let feature = self.get(id).ok_or(GeometryError::UnknownId(id))?;
        self.search(feature.centroid(), k, Some(id))
    }

    fn search(
        &self,
        query: &Point3,
        k: usize,
        exclude: Option<FeatureId>,
    ) -> Result<Vec<Neighbor<'_>>, GeometryError> {
        if self.features.is_empty() {
            return Err(GeometryError::EmptyIndex);
        }
        if k == 0 {
            return Err(GeometryError::ZeroK);
        }
        let q = point_array(query);
        let mut hits = self.tree.nearest(&q, k, exclude);
        for (i, f) in self.features.iter().enumerate().skip(self.indexed) {
            if Some(f.id) != exclude {
                hits.push((i, squared_distance(&q, &point_array(f.centroid()))));
            }
        }
        hits.sort_by(|a, b| a.1.total_cmp(&b.1).then(self.features[a.0].id.cmp(&self.features[b.0].id)));
        hits.truncate(k);
        Ok(hits
            .into_iter()
            .map(|(i, d2)| Neighbor { feature: &self.features[i], distance: d2.sqrt() })
            .collect())
    }
}

fn point_array(p: &Point3) -> [f64; 3] {
    [p.x, p.y, p.z]
}

pub(crate) fn squared_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}
