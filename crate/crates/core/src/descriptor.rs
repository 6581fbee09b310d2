//! 64-bit macro-feature description vectors.
//!
//! A descriptor encodes a feature's kind and the quantized geometry of its five
//! nearest neighbors. The closest neighbor is the base: for each of the other
//! four the descriptor stores the binned distance from the feature and the
//! binned angle between the neighbor direction and the base direction. Only
//! relative geometry is used, so descriptors do not change under rigid motion.
//!
//! Bit layout, most significant first:
//!
//! ```text
//! | kind:1 | angle1:7 | dist1:8 | angle2:8 | dist2:8 | angle3:8 | dist3:8 | angle4:8 | dist4:8 |
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::binning::LookupTable;
use crate::geometry::{FeatureId, FeatureKind, FeatureSet, GeometryError, MacroFeature, Vector3};

/// Neighbors consumed per descriptor: one base plus four encoded.
pub const NEIGHBORS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DescriptorError {
    #[error("insufficient neighbors: feature {id} has {found}, need {NEIGHBORS}")]
    InsufficientNeighbors { id: FeatureId, found: usize },
    #[error("coincident centroids")]
    CoincidentCentroids,
    #[error("first angle bin {0} does not fit in 7 bits")]
    AngleOverflow(u8),
    #[error("descriptor must be 16 hex digits")]
    BadHex,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Unpacked descriptor fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DescriptorFields {
    pub kind: FeatureKind,
    pub angles: [u8; 4],
    pub distances: [u8; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Descriptor64(pub u64);

impl Descriptor64 {
    pub const KIND_BIT: u64 = 1 << 63;

    pub fn pack(fields: &DescriptorFields) -> Result<Self, DescriptorError> {
        if fields.angles[0] >= 0x80 {
            return Err(DescriptorError::AngleOverflow(fields.angles[0]));
        }
        let mut bits = match fields.kind {
            FeatureKind::Door => 0u64,
            FeatureKind::Window => 1u64,
        };
        bits = (bits << 7) | u64::from(fields.angles[0]);
        bits = (bits << 8) | u64::from(fields.distances[0]);
        for i in 1..4 {
            bits = (bits << 8) | u64::from(fields.angles[i]);
            bits = (bits << 8) | u64::from(fields.distances[i]);
        }
        Ok(Self(bits))
    }

    pub fn unpack(self) -> DescriptorFields {
        let byte = |shift: u32| ((self.0 >> shift) & 0xff) as u8;
        DescriptorFields {
            kind: self.kind(),
            angles: [byte(56) & 0x7f, byte(40), byte(24), byte(8)],
            distances: [byte(48), byte(32), byte(16), byte(0)],
        }
    }

    pub fn kind(self) -> FeatureKind {
        if self.0 & Self::KIND_BIT == 0 {
            FeatureKind::Door
        } else {
            FeatureKind::Window
        }
    }

    pub fn bits(self) -> u64 {
        self.0
    }
}

impl fmt::Display for Descriptor64 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl FromStr for Descriptor64 {
    type Err = DescriptorError;

    /// Exactly 16 lowercase hex digits.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != 16 || !s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
            return Err(DescriptorError::BadHex);
        }
        u64::from_str_radix(s, 16).map(Self).map_err(|_| DescriptorError::BadHex)
    }
}

/// Angle between two neighbor directions, in `[0, π]`.
pub fn neighbor_angle(a: &Vector3, b: &Vector3) -> Result<f64, DescriptorError> {
    let (na, nb) = (a.norm(), b.norm());
    if !(na > 0.0 && nb > 0.0) {
        return Err(DescriptorError::CoincidentCentroids);
    }
    Ok((a.dot(b) / (na * nb)).clamp(-1.0, 1.0).acos())
}

/// Offsets from `feature` to its five nearest neighbors, nearest first.
fn neighbor_offsets(feature: &MacroFeature, set: &FeatureSet) -> Result<[Vector3; NEIGHBORS], DescriptorError> {
    let neighbors = set.knn_for(feature.id, NEIGHBORS)?;
    if neighbors.len() < NEIGHBORS {
        return Err(DescriptorError::InsufficientNeighbors { id: feature.id, found: neighbors.len() });
    }
    let mut offsets = [Vector3::zeros(); NEIGHBORS];
    for (slot, n) in offsets.iter_mut().zip(&neighbors) {
        if n.distance == 0.0 {
            return Err(DescriptorError::CoincidentCentroids);
        }
        *slot = n.feature.centroid() - feature.centroid();
    }
    Ok(offsets)
}

/// Descriptor of `feature`, which must be a member of `set`.
pub fn compute_descriptor(
    feature: &MacroFeature,
    set: &FeatureSet,
    dist_table: &LookupTable,
    angle_table: &LookupTable,
) -> Result<Descriptor64, DescriptorError> {
    let offsets = neighbor_offsets(feature, set)?;
    let base = &offsets[0];
    let mut fields = DescriptorFields { kind: feature.kind, angles: [0; 4], distances: [0; 4] };
    for (i, offset) in offsets[1..].iter().enumerate() {
        fields.distances[i] = dist_table.quantize(offset.norm());
        fields.angles[i] = angle_table.quantize(neighbor_angle(offset, base)?);
    }
    Descriptor64::pack(&fields)
}

/// Descriptors for a whole set, keyed by id, plus the features that could not
/// be described.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DescriptorSet {
    pub descriptors: BTreeMap<FeatureId, Descriptor64>,
    pub skipped: Vec<(FeatureId, DescriptorError)>,
}

pub fn compute_all_descriptors(
    set: &FeatureSet,
    dist_table: &LookupTable,
    angle_table: &LookupTable,
) -> DescriptorSet {
    let mut out = DescriptorSet::default();
    for feature in set.iter() {
        match compute_descriptor(feature, set, dist_table, angle_table) {
            Ok(d) => {
                out.descriptors.insert(feature.id, d);
            }
            Err(e) => out.skipped.push((feature.id, e)),
        }
    }
    out.skipped.sort_by_key(|(id, _)| *id);
    out
}

/// Value populations the lookup tables are trained on.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingValues {
    pub distances: Vec<f64>,
    pub angles: Vec<f64>,
}

/// For every feature, the distances to all five neighbors (the base included)
/// and the four encoded angles.
pub fn collect_training_values(set: &FeatureSet) -> Result<TrainingValues, DescriptorError> {
    if set.len() < NEIGHBORS + 1 {
        return Err(DescriptorError::InsufficientNeighbors {
            id: set.features().first().map_or(0, |f| f.id),
            found: set.len().saturating_sub(1),
        });
    }
    let mut values = TrainingValues::default();
    for feature in set.iter() {
        let offsets = neighbor_offsets(feature, set)?;
        values.distances.extend(offsets.iter().map(|o| o.norm()));
        for offset in &offsets[1..] {
            values.angles.push(neighbor_angle(offset, &offsets[0])?);
        }
    }
    Ok(values)
}
