//! End-to-end localization: reference indexing and observed-set registration.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::binning::{build_lookup_table, BinningError, LookupTable, ValueKind};
use crate::descriptor::{collect_training_values, compute_all_descriptors, Descriptor64, DescriptorError, DescriptorSet};
use crate::geometry::{FeatureId, FeatureSet};
use crate::matching::{match_descriptors, Correspondence, MatchError, DEFAULT_MAX_HAMMING};
use crate::registration::{ransac_register, refine_with_corners, RansacConfig, RegistrationError, RegistrationResult, SAMPLE_SIZE};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
    #[error(transparent)]
    Binning(#[from] BinningError),
    #[error("{kind} table expected, found {found}")]
    WrongTableKind { kind: ValueKind, found: ValueKind },
    #[error("stored descriptor for feature {id} does not match its recomputed value")]
    DescriptorMismatch { id: FeatureId },
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error("insufficient matches: {found} correspondences, need {SAMPLE_SIZE}")]
    TooFewMatches { found: usize },
    #[error(transparent)]
    Registration(#[from] RegistrationError),
}

impl PipelineError {
    /// Pipeline stage the error came from.
    pub fn stage(&self) -> &'static str {
        match self {
            PipelineError::Descriptor(_)
            | PipelineError::Binning(_)
            | PipelineError::WrongTableKind { .. }
            | PipelineError::DescriptorMismatch { .. } => "descriptor",
            PipelineError::Match(_) | PipelineError::TooFewMatches { .. } => "match",
            PipelineError::Registration(_) => "ransac",
        }
    }
}

/// Reference features with the lookup tables trained on them and their
/// descriptors under those tables.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceIndex {
    reference: FeatureSet,
    distance_table: LookupTable,
    angle_table: LookupTable,
    descriptors: DescriptorSet,
}

impl ReferenceIndex {
    /// Trains both tables on `reference` and describes every feature.
    pub fn build(reference: FeatureSet) -> Result<Self, PipelineError> {
        let training = collect_training_values(&reference)?;
        let distance_table = build_lookup_table(&training.distances, ValueKind::Distance)?;
        let angle_table = build_lookup_table(&training.angles, ValueKind::Angle)?;
        let descriptors = compute_all_descriptors(&reference, &distance_table, &angle_table);
        Ok(Self { reference, distance_table, angle_table, descriptors })
    }

    /// Reassembles a stored index, checking that `descriptors` are exactly
    /// what the stored tables produce.
    pub fn from_parts(
        reference: FeatureSet,
        distance_table: LookupTable,
        angle_table: LookupTable,
        descriptors: &BTreeMap<FeatureId, Descriptor64>,
    ) -> Result<Self, PipelineError> {
        for (table, kind) in [(&distance_table, ValueKind::Distance), (&angle_table, ValueKind::Angle)] {
            if table.kind() != kind {
                return Err(PipelineError::WrongTableKind { kind, found: table.kind() });
            }
        }
        let computed = compute_all_descriptors(&reference, &distance_table, &angle_table);
        let ids = computed.descriptors.keys().chain(descriptors.keys());
        for &id in ids {
            if computed.descriptors.get(&id) != descriptors.get(&id) {
                return Err(PipelineError::DescriptorMismatch { id });
            }
        }
        Ok(Self { reference, distance_table, angle_table, descriptors: computed })
    }

    pub fn reference(&self) -> &FeatureSet {
        &self.reference
    }

    pub fn distance_table(&self) -> &LookupTable {
        &self.distance_table
    }

    pub fn angle_table(&self) -> &LookupTable {
        &self.angle_table
    }

    pub fn descriptors(&self) -> &BTreeMap<FeatureId, Descriptor64> {
        &self.descriptors.descriptors
    }

    /// Reference features that could not be described.
    pub fn skipped(&self) -> &[(FeatureId, DescriptorError)] {
        &self.descriptors.skipped
    }

    /// Describes `set` with this index's tables.
    pub fn describe(&self, set: &FeatureSet) -> DescriptorSet {
        compute_all_descriptors(set, &self.distance_table, &self.angle_table)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizeConfig {
    pub ransac: RansacConfig,
    pub max_hamming: u32,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        Self { ransac: RansacConfig::default(), max_hamming: DEFAULT_MAX_HAMMING }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Localization {
    pub observed_descriptors: DescriptorSet,
    pub matches: Vec<Correspondence>,
    /// Coarse RANSAC result followed by the corner re-fit.
    pub registration: RegistrationResult,
}

/// Describes and matches `observed` against the index, then registers the
/// matches. The transform maps observed coordinates into the reference frame.
pub fn localize(index: &ReferenceIndex, observed: &FeatureSet, cfg: &LocalizeConfig) -> Result<Localization, PipelineError> {
    let observed_descriptors = index.describe(observed);
    if observed_descriptors.descriptors.is_empty() {
        return Err(match observed_descriptors.skipped.first() {
            Some((_, e)) => PipelineError::Descriptor(e.clone()),
            None => PipelineError::Match(MatchError::NoObserved),
        });
    }
    let matches = match_descriptors(&observed_descriptors.descriptors, index.descriptors(), cfg.max_hamming)?;
    if matches.len() < SAMPLE_SIZE {
        return Err(PipelineError::TooFewMatches { found: matches.len() });
    }
    let coarse = ransac_register(&matches, observed, &index.reference, &cfg.ransac)?;
    let registration = refine_with_corners(&coarse, observed, &index.reference);
    Ok(Localization { observed_descriptors, matches, registration })
}
