//! JSON file formats for feature sets, transforms, reference indexes and
//! reconstruction inputs.
//!
//! Every document carries a `format` tag and a `version`. Real numbers are
//! rounded to 12 significant digits before they are written, so writing a
//! parsed file reproduces it byte for byte.

use std::collections::BTreeMap;

use nalgebra::Matrix3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binning::{round_significant, BinningError, LookupTable, ValueKind};
use crate::descriptor::Descriptor64;
use crate::geometry::{FeatureId, FeatureKind, FeatureSet, GeometryError, MacroFeature, Point3, RigidTransform, Vector3};
use crate::pipeline::{PipelineError, ReferenceIndex};
use crate::reconstruction::{CameraIntrinsics, DetectionBox, Point2, ReconstructionError, Segment2D};

pub const VERSION: u32 = 1;
pub const FEATURES_FORMAT: &str = "macroreg-features";
pub const TRANSFORM_FORMAT: &str = "macroreg-transform";
pub const INDEX_FORMAT: &str = "macroreg-index";
pub const DETECTIONS_FORMAT: &str = "macroreg-detections";
pub const SEGMENTS_FORMAT: &str = "macroreg-segments";
pub const INTRINSICS_FORMAT: &str = "macroreg-intrinsics";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("malformed document: {0}")]
    Json(String),
    #[error("expected a {expected} document, found {found:?}")]
    WrongFormat { expected: &'static str, found: String },
    #[error("unsupported {format} version {found}")]
    UnsupportedVersion { format: &'static str, found: u32 },
    #[error("unknown feature kind {0:?}")]
    UnknownKind(String),
    #[error("unknown table kind {0:?}")]
    UnknownTableKind(String),
    #[error("bad descriptor for feature {0}")]
    BadDescriptor(FeatureId),
    #[error("duplicate descriptor for feature {0}")]
    DuplicateDescriptor(FeatureId),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Binning(#[from] BinningError),
    #[error(transparent)]
    Index(#[from] PipelineError),
    #[error(transparent)]
    Reconstruction(#[from] ReconstructionError),
}

fn num(x: f64) -> f64 {
    round_significant(x)
}

fn point(p: &Point3) -> [f64; 3] {
    [num(p.x), num(p.y), num(p.z)]
}

fn to_point(a: [f64; 3]) -> Point3 {
    Point3::new(a[0], a[1], a[2])
}

fn kind_from_str(s: &str) -> Result<FeatureKind, FormatError> {
    s.parse().map_err(|_| FormatError::UnknownKind(s.to_string()))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Envelope<T> {
    format: String,
    version: u32,
    #[serde(flatten)]
    body: T,
}

fn write_doc<T: Serialize>(format: &'static str, body: T) -> String {
    let doc = Envelope { format: format.to_string(), version: VERSION, body };
    let mut s = serde_json::to_string_pretty(&doc).expect("in-memory documents always serialize");
    s.push('\n');
    s
}

fn read_doc<T: DeserializeOwned>(format: &'static str, text: &str) -> Result<T, FormatError> {
    #[derive(Deserialize)]
    struct Header {
        format: String,
        version: u32,
    }
    let header: Header = serde_json::from_str(text).map_err(|e| FormatError::Json(e.to_string()))?;
    if header.format != format {
        return Err(FormatError::WrongFormat { expected: format, found: header.format });
    }
    if header.version != VERSION {
        return Err(FormatError::UnsupportedVersion { format, found: header.version });
    }
    let doc: Envelope<T> = serde_json::from_str(text).map_err(|e| FormatError::Json(e.to_string()))?;
    Ok(doc.body)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureRecord {
    id: FeatureId,
    kind: String,
    centroid: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    corners: Option<[[f64; 3]; 4]>,
}

impl FeatureRecord {
    fn from_feature(f: &MacroFeature) -> Self {
        Self {
            id: f.id,
            kind: f.kind.as_str().to_string(),
            centroid: point(f.centroid()),
            corners: f.corners().map(|cs| cs.map(|c| point(&c))),
        }
    }

    fn into_feature(self) -> Result<MacroFeature, FormatError> {
        let kind = kind_from_str(&self.kind)?;
        let corners = self.corners.map(|cs| cs.map(to_point));
        Ok(MacroFeature::from_parts(self.id, kind, to_point(self.centroid), corners)?)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeaturesBody {
    features: Vec<FeatureRecord>,
}

fn feature_records(set: &FeatureSet) -> Vec<FeatureRecord> {
    set.iter().map(FeatureRecord::from_feature).collect()
}

fn feature_set(records: Vec<FeatureRecord>) -> Result<FeatureSet, FormatError> {
    let features = records.into_iter().map(FeatureRecord::into_feature).collect::<Result<Vec<_>, _>>()?;
    Ok(FeatureSet::new(features)?)
}

/// The set exactly as it reads back after being written.
pub fn canonical_features(set: &FeatureSet) -> Result<FeatureSet, FormatError> {
    feature_set(feature_records(set))
}

pub fn write_features(set: &FeatureSet) -> String {
    write_doc(FEATURES_FORMAT, FeaturesBody { features: feature_records(set) })
}

pub fn parse_features(text: &str) -> Result<FeatureSet, FormatError> {
    feature_set(read_doc::<FeaturesBody>(FEATURES_FORMAT, text)?.features)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformBody {
    /// Row-major.
    rotation: [f64; 9],
    translation: [f64; 3],
}

impl TransformBody {
    fn from_transform(t: &RigidTransform) -> Self {
        let r = t.rotation();
        let tr = t.translation();
        Self {
            rotation: std::array::from_fn(|i| num(r[(i / 3, i % 3)])),
            translation: [num(tr.x), num(tr.y), num(tr.z)],
        }
    }

    fn into_transform(self) -> Result<RigidTransform, FormatError> {
        let rotation = Matrix3::from_row_slice(&self.rotation);
        Ok(RigidTransform::new(rotation, Vector3::from(self.translation))?)
    }
}

pub fn write_transform(t: &RigidTransform) -> String {
    write_doc(TRANSFORM_FORMAT, TransformBody::from_transform(t))
}

pub fn parse_transform(text: &str) -> Result<RigidTransform, FormatError> {
    read_doc::<TransformBody>(TRANSFORM_FORMAT, text)?.into_transform()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableRecord {
    kind: String,
    boundaries: Vec<f64>,
}

impl TableRecord {
    fn from_table(t: &LookupTable) -> Self {
        Self { kind: t.kind().as_str().to_string(), boundaries: t.boundaries().iter().map(|&b| num(b)).collect() }
    }

    fn into_table(self) -> Result<LookupTable, FormatError> {
        let kind = match self.kind.as_str() {
            "distance" => ValueKind::Distance,
            "angle" => ValueKind::Angle,
            _ => return Err(FormatError::UnknownTableKind(self.kind)),
        };
        Ok(LookupTable::from_boundaries(kind, self.boundaries)?)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DescriptorRecord {
    id: FeatureId,
    descriptor: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexBody {
    features: Vec<FeatureRecord>,
    distance_table: TableRecord,
    angle_table: TableRecord,
    descriptors: Vec<DescriptorRecord>,
}

/// Writes the index. Its reference set should be canonical (see
/// [`canonical_features`]) for the stored descriptors to survive a reload.
pub fn write_index(index: &ReferenceIndex) -> String {
    write_doc(
        INDEX_FORMAT,
        IndexBody {
            features: feature_records(index.reference()),
            distance_table: TableRecord::from_table(index.distance_table()),
            angle_table: TableRecord::from_table(index.angle_table()),
            descriptors: index
                .descriptors()
                .iter()
                .map(|(&id, d)| DescriptorRecord { id, descriptor: d.to_string() })
                .collect(),
        },
    )
}

/// Parses an index and checks its descriptors against the stored tables.
pub fn parse_index(text: &str) -> Result<ReferenceIndex, FormatError> {
    let body: IndexBody = read_doc(INDEX_FORMAT, text)?;
    let reference = feature_set(body.features)?;
    let mut descriptors = BTreeMap::new();
    for r in body.descriptors {
        let d: Descriptor64 = r.descriptor.parse().map_err(|_| FormatError::BadDescriptor(r.id))?;
        if descriptors.insert(r.id, d).is_some() {
            return Err(FormatError::DuplicateDescriptor(r.id));
        }
    }
    Ok(ReferenceIndex::from_parts(
        reference,
        body.distance_table.into_table()?,
        body.angle_table.into_table()?,
        &descriptors,
    )?)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionRecord {
    kind: String,
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
    confidence: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionsBody {
    detections: Vec<DetectionRecord>,
}

pub fn write_detections(boxes: &[DetectionBox]) -> String {
    let detections = boxes
        .iter()
        .map(|b| DetectionRecord {
            kind: b.kind.as_str().to_string(),
            x_min: num(b.x_min),
            y_min: num(b.y_min),
            x_max: num(b.x_max),
            y_max: num(b.y_max),
            confidence: num(b.confidence),
        })
        .collect();
    write_doc(DETECTIONS_FORMAT, DetectionsBody { detections })
}

pub fn parse_detections(text: &str) -> Result<Vec<DetectionBox>, FormatError> {
    read_doc::<DetectionsBody>(DETECTIONS_FORMAT, text)?
        .detections
        .into_iter()
        .map(|r| {
            let kind = kind_from_str(&r.kind)?;
            Ok(DetectionBox::new(kind, r.x_min, r.y_min, r.x_max, r.y_max, r.confidence)?)
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentRecord {
    start: [f64; 2],
    end: [f64; 2],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentsBody {
    segments: Vec<SegmentRecord>,
}

pub fn write_segments(segments: &[Segment2D]) -> String {
    let segments = segments
        .iter()
        .map(|s| SegmentRecord {
            start: [num(s.start().x), num(s.start().y)],
            end: [num(s.end().x), num(s.end().y)],
        })
        .collect();
    write_doc(SEGMENTS_FORMAT, SegmentsBody { segments })
}

pub fn parse_segments(text: &str) -> Result<Vec<Segment2D>, FormatError> {
    read_doc::<SegmentsBody>(SEGMENTS_FORMAT, text)?
        .segments
        .into_iter()
        .map(|r| {
            Ok(Segment2D::new(Point2::new(r.start[0], r.start[1]), Point2::new(r.end[0], r.end[1]))?)
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IntrinsicsBody {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
}

pub fn write_intrinsics(k: &CameraIntrinsics) -> String {
    write_doc(INTRINSICS_FORMAT, IntrinsicsBody { fx: num(k.fx), fy: num(k.fy), cx: num(k.cx), cy: num(k.cy) })
}

pub fn parse_intrinsics(text: &str) -> Result<CameraIntrinsics, FormatError> {
    let b: IntrinsicsBody = read_doc(INTRINSICS_FORMAT, text)?;
    Ok(CameraIntrinsics::new(b.fx, b.fy, b.cx, b.cy)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::{generate_reference, random_transform, SceneSpec};

    #[test]
    fn features_round_trip() {
        let set = generate_reference(&SceneSpec::default()).unwrap();
        let text = write_features(&set);
        let back = parse_features(&text).unwrap();
        assert_eq!(write_features(&back), text);
        assert_eq!(back, canonical_features(&set).unwrap());
        for (a, b) in back.iter().zip(set.iter()) {
            assert!((a.centroid() - b.centroid()).norm() < 1e-10);
        }
    }

    #[test]
    fn feature_document_shape() {
        let text = r#"{"format": "macroreg-features", "version": 1, "features": [
            {"id": 7, "kind": "window", "centroid": [1.5, 0, 2]}
        ]}"#;
        let set = parse_features(text).unwrap();
        assert_eq!(set.get(7).unwrap().kind, FeatureKind::Window);
        assert!(set.get(7).unwrap().corners().is_none());
        assert!(write_features(&set).contains("\"centroid\": [\n        1.5,"));
    }

    #[test]
    fn rejects_bad_documents() {
        let cases = [
            ("", "malformed"),
            (r#"{"format": "macroreg-transform", "version": 1, "features": []}"#, "expected a macroreg-features"),
            (r#"{"format": "macroreg-features", "version": 2, "features": []}"#, "unsupported"),
            (r#"{"format": "macroreg-features", "version": 1, "features": [{"id": 1, "kind": "gate", "centroid": [0,0,0]}]}"#, "unknown feature kind"),
            (r#"{"format": "macroreg-features", "version": 1, "features": [{"id": 1, "kind": "door", "centroid": [0,0,0]}, {"id": 1, "kind": "door", "centroid": [1,0,0]}]}"#, "duplicate"),
            (r#"{"format": "macroreg-features", "version": 1, "features": [], "extra": 1}"#, "malformed"),
            (
                r#"{"format": "macroreg-features", "version": 1, "features": [{"id": 1, "kind": "door", "centroid": [5,0,0],
                   "corners": [[0,0,0],[0,0,0],[0,0,0],[0,0,0]]}]}"#,
                "not the mean of its corners",
            ),
        ];
        for (text, needle) in cases {
            let err = parse_features(text).unwrap_err().to_string();
            assert!(err.contains(needle), "{err:?} lacks {needle:?}");
        }
    }

    #[test]
    fn transform_round_trip_and_validation() {
        let t = random_transform(9);
        let text = write_transform(&t);
        let back = parse_transform(&text).unwrap();
        assert!(back.rotation_angle_to(&t) < 1e-11);
        assert!((back.translation() - t.translation()).norm() < 1e-10);
        assert_eq!(write_transform(&back), text);

        let skew = r#"{"format": "macroreg-transform", "version": 1,
            "rotation": [1, 0, 0, 0, 1, 0, 0, 0, -1], "translation": [0, 0, 0]}"#;
        assert!(matches!(parse_transform(skew), Err(FormatError::Geometry(_))));
    }

    #[test]
    fn index_round_trip_is_exact() {
        let reference = canonical_features(&generate_reference(&SceneSpec::default()).unwrap()).unwrap();
        let index = ReferenceIndex::build(reference).unwrap();
        let text = write_index(&index);
        let back = parse_index(&text).unwrap();
        assert_eq!(back, index);
        assert_eq!(write_index(&back), text);

        let first = index.descriptors().values().next().unwrap().to_string();
        let flipped = format!("{:016x}", u64::from_str_radix(&first, 16).unwrap() ^ 1);
        let tampered = text.replacen(&first, &flipped, 1);
        assert!(matches!(parse_index(&tampered), Err(FormatError::Index(PipelineError::DescriptorMismatch { .. }))));
    }

    #[test]
    fn reconstruction_inputs_round_trip() {
        let boxes = vec![DetectionBox::new(FeatureKind::Door, 1.0, 2.0, 30.5, 40.0, 0.75).unwrap()];
        assert_eq!(parse_detections(&write_detections(&boxes)).unwrap(), boxes);
        let segs = vec![Segment2D::new(Point2::new(0.0, 0.0), Point2::new(0.0, 50.25)).unwrap()];
        assert_eq!(parse_segments(&write_segments(&segs)).unwrap(), segs);
        let k = CameraIntrinsics::new(500.0, 501.0, 320.0, 240.0).unwrap();
        assert_eq!(parse_intrinsics(&write_intrinsics(&k)).unwrap(), k);

        let inverted = r#"{"format": "macroreg-detections", "version": 1, "detections": [
            {"kind": "door", "x_min": 5, "y_min": 0, "x_max": 1, "y_max": 9, "confidence": 0.5}]}"#;
        assert!(parse_detections(inverted).is_err());
        let point = r#"{"format": "macroreg-segments", "version": 1, "segments": [{"start": [1, 1], "end": [1, 1]}]}"#;
        assert!(parse_segments(point).is_err());
        let empty = r#"{"format": "macroreg-detections", "version": 1, "detections": []}"#;
        assert!(parse_detections(empty).unwrap().is_empty());
    }
}
