//! Brute-force Hamming matching of observed descriptors against the reference.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::descriptor::Descriptor64;
use crate::geometry::FeatureId;

/// Distance reported for descriptors of different feature kinds.
pub const KIND_MISMATCH: u32 = 64;
/// Default acceptance ceiling: everything short of a kind mismatch.
pub const DEFAULT_MAX_HAMMING: u32 = 63;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MatchError {
    #[error("no observed descriptors to match")]
    NoObserved,
    #[error("no reference descriptors to match against")]
    NoReference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Correspondence {
    pub observed_id: FeatureId,
    pub reference_id: FeatureId,
    pub hamming: u32,
}

/// Population count of `d1 ^ d2`, or [`KIND_MISMATCH`] when the kind bits differ.
#[inline]
pub fn hamming_distance(d1: Descriptor64, d2: Descriptor64) -> u32 {
    let diff = d1.0 ^ d2.0;
    if diff & Descriptor64::KIND_BIT != 0 {
        KIND_MISMATCH
    } else {
        diff.count_ones()
    }
}

/// For every observed descriptor, the unique reference descriptor at minimum
/// Hamming distance.
///
/// Observed features whose minimum is shared by several reference features are
/// dropped, as are matches above `max_hamming` (kind mismatches never match).
/// Output is ordered by observed id.
pub fn match_descriptors(
    observed: &BTreeMap<FeatureId, Descriptor64>,
    reference: &BTreeMap<FeatureId, Descriptor64>,
    max_hamming: u32,
) -> Result<Vec<Correspondence>, MatchError> {
    if observed.is_empty() {
        return Err(MatchError::NoObserved);
    }
    if reference.is_empty() {
        return Err(MatchError::NoReference);
    }
    let limit = max_hamming.min(KIND_MISMATCH - 1);
    let reference: Vec<(FeatureId, Descriptor64)> = reference.iter().map(|(&id, &d)| (id, d)).collect();

    let mut out = Vec::new();
    for (&observed_id, &od) in observed {
        let mut best = u32::MAX;
        let mut best_id = None;
        let mut ambiguous = false;
        for &(reference_id, rd) in &reference {
            let d = hamming_distance(od, rd);
            if d < best {
                best = d;
                best_id = Some(reference_id);
                ambiguous = false;
            } else if d == best {
                ambiguous = true;
            }
        }
        if let Some(reference_id) = best_id {
            if !ambiguous && best <= limit {
                out.push(Correspondence { observed_id, reference_id, hamming: best });
            }
        }
    }
    Ok(out)
}
