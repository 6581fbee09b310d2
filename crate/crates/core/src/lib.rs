//! Localization against a reference building model by matching door and
//! window macro-features.
//!
//! The pipeline: reference features are indexed and described offline
//! ([`binning`], [`descriptor`]); observed features are reconstructed from
//! detections and depth ([`reconstruction`]), described with the same lookup
//! tables, matched by Hamming distance ([`matching`]) and registered with
//! RANSAC plus SVD least squares ([`registration`]). [`pipeline`] ties these
//! steps together; [`scenegen`] builds synthetic scenes with known truth,
//! [`eval`] scores results against it and [`io`] reads and writes the file
//! formats.

pub mod binning;
pub mod descriptor;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod kdtree;
pub mod matching;
pub mod pipeline;
pub mod reconstruction;
pub mod registration;
pub mod scenegen;

pub use geometry::{FeatureId, FeatureKind, FeatureSet, MacroFeature, Point3, RigidTransform, Vector3};
