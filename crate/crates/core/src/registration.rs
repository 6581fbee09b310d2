//! Rigid registration of matched features: RANSAC over centroid
//! correspondences, weighted SVD least squares, and a corner-level re-fit.

use nalgebra::{Matrix3, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{FeatureId, FeatureSet, GeometryError, Point3, RigidTransform, Vector3};
use crate::matching::Correspondence;

/// Points per hypothesis.
pub const SAMPLE_SIZE: usize = 4;
pub const DEFAULT_COPLANARITY_EPSILON: f64 = 0.01;
/// Degenerate draws allowed per planned hypothesis.
pub const REDRAW_FACTOR: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistrationError {
    #[error("invalid RANSAC parameters: {0}")]
    InvalidParameters(String),
    #[error("point sets differ in length ({source_len} source, {dest_len} destination, {weights} weights)")]
    LengthMismatch { source_len: usize, dest_len: usize, weights: usize },
    #[error("need at least {need} point pairs, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("weights must be positive and finite")]
    InvalidWeight,
    #[error("degenerate point set")]
    DegeneratePointSet,
    #[error("need at least {SAMPLE_SIZE} correspondences, got {0}")]
    TooFewCorrespondences(usize),
    #[error("correspondence refers to unknown feature {0}")]
    UnknownFeature(FeatureId),
    #[error("degenerate configuration: every sampled quadruple was coplanar")]
    DegenerateConfiguration,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    /// Desired probability `p` of drawing at least one all-inlier sample.
    pub success_probability: f64,
    /// Assumed inlier ratio `ω`.
    pub inlier_ratio: f64,
    pub sample_size: usize,
    /// Max centroid residual (meters) for a correspondence to count as inlier.
    pub inlier_threshold: f64,
    pub coplanarity_epsilon: f64,
    pub rng_seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            success_probability: 0.99,
            inlier_ratio: 0.5,
            sample_size: SAMPLE_SIZE,
            inlier_threshold: 0.3,
            coplanarity_epsilon: DEFAULT_COPLANARITY_EPSILON,
            rng_seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn hypotheses(&self) -> Result<usize, RegistrationError> {
        hypothesis_count(self.success_probability, self.inlier_ratio, self.sample_size)
    }

    fn validate(&self) -> Result<usize, RegistrationError> {
        if self.sample_size != SAMPLE_SIZE {
            return Err(RegistrationError::InvalidParameters(format!(
                "sample size must be {SAMPLE_SIZE}, got {}",
                self.sample_size
            )));
        }
        if !(self.inlier_threshold > 0.0 && self.inlier_threshold.is_finite()) {
            return Err(RegistrationError::InvalidParameters("inlier threshold must be positive".into()));
        }
        if self.coplanarity_epsilon.is_nan() || self.coplanarity_epsilon < 0.0 {
            return Err(RegistrationError::InvalidParameters("coplanarity epsilon must be non-negative".into()));
        }
        self.hypotheses()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    /// Maps observed coordinates into the reference frame.
    pub transform: RigidTransform,
    pub inliers: Vec<Correspondence>,
    /// Root-mean-square residual of the point pairs the transform was fitted
    /// on: inlier centroids, or corner pairs once refined.
    pub rmse: f64,
    pub hypotheses_used: usize,
    pub refined: bool,
}

/// Hypotheses needed to draw an all-inlier sample of size `m` with
/// probability `p` when each draw is an inlier with probability `ω`.
pub fn hypothesis_count(p: f64, omega: f64, m: usize) -> Result<usize, RegistrationError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(RegistrationError::InvalidParameters(format!("success probability {p} not in (0, 1)")));
    }
    if !(omega > 0.0 && omega < 1.0) {
        return Err(RegistrationError::InvalidParameters(format!("inlier ratio {omega} not in (0, 1)")));
    }
    if m == 0 {
        return Err(RegistrationError::InvalidParameters("sample size must be at least 1".into()));
    }
    let all_inliers = omega.powi(m as i32);
    let n = ((1.0 - p).ln() / (-all_inliers).ln_1p()).ceil();
    if !n.is_finite() || n > u32::MAX as f64 {
        return Err(RegistrationError::InvalidParameters(format!("ω^m = {all_inliers:e} needs unbounded hypotheses")));
    }
    Ok((n as usize).max(1))
}

/// `(x3 − x1) · [(x2 − x1) × (x4 − x1)]`
pub fn scalar_triple_product(x1: &Point3, x2: &Point3, x3: &Point3, x4: &Point3) -> f64 {
    (x3 - x1).dot(&(x2 - x1).cross(&(x4 - x1)))
}

/// True when the four points are coplanar (and hence also when any three are
/// collinear) within `epsilon`.
pub fn coplanarity_check(x1: &Point3, x2: &Point3, x3: &Point3, x4: &Point3, epsilon: f64) -> bool {
    scalar_triple_product(x1, x2, x3, x4).abs() < epsilon
}

/// Weighted least-squares rigid transform taking `source` onto `dest`.
///
/// Builds the weighted cross-covariance `S = X W Yᵀ` of the centered sets,
/// decomposes `S = U Σ Vᵀ` and returns `R = V D Uᵀ` with `D` flipping the
/// weakest singular direction when needed so that `det R = +1`, and
/// `t = b̄ − R ā`.
pub fn rigid_fit(source: &[Point3], dest: &[Point3], weights: &[f64]) -> Result<RigidTransform, RegistrationError> {
    if source.len() != dest.len() || source.len() != weights.len() {
        return Err(RegistrationError::LengthMismatch {
            source_len: source.len(),
            dest_len: dest.len(),
            weights: weights.len(),
        });
    }
    if source.len() < 3 {
        return Err(RegistrationError::TooFewPoints { need: 3, got: source.len() });
    }
    if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
        return Err(RegistrationError::InvalidWeight);
    }
    let total: f64 = weights.iter().sum();
    let weighted_mean = |pts: &[Point3]| {
        pts.iter().zip(weights).fold(Vector3::zeros(), |acc, (p, w)| acc + p.coords * *w) / total
    };
    let a_bar = weighted_mean(source);
    let b_bar = weighted_mean(dest);

    let mut cross = Matrix3::zeros();
    let mut scatter_a = Matrix3::zeros();
    let mut scatter_b = Matrix3::zeros();
    for ((a, b), w) in source.iter().zip(dest).zip(weights) {
        let x = a.coords - a_bar;
        let y = b.coords - b_bar;
        cross += x * y.transpose() * *w;
        scatter_a += x * x.transpose() * *w;
        scatter_b += y * y.transpose() * *w;
    }
    if is_collinear(&scatter_a) || is_collinear(&scatter_b) {
        return Err(RegistrationError::DegeneratePointSet);
    }

    let svd = cross.svd(true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Err(RegistrationError::DegeneratePointSet);
    };
    let v = v_t.transpose();
    let mut correction = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        let weakest = svd.singular_values.imin();
        correction[(weakest, weakest)] = -1.0;
    }
    let rotation = v * correction * u.transpose();
    let translation = b_bar - rotation * a_bar;
    Ok(RigidTransform::new(rotation, translation)?)
}

/// A centered scatter matrix whose second eigenvalue vanishes belongs to a
/// point set lying on a line (or a single point).
fn is_collinear(scatter: &Matrix3<f64>) -> bool {
    let mut eig = SymmetricEigen::new(*scatter).eigenvalues;
    eig.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    eig[0].is_nan() || eig[0] <= 0.0 || eig[1] <= eig[0] * 1e-12
}

fn rmse(transform: &RigidTransform, pairs: &[(Point3, Point3)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let sum: f64 = pairs.iter().map(|(a, b)| (transform.apply(a) - b).norm_squared()).sum();
    (sum / pairs.len() as f64).sqrt()
}

/// Root-mean-square residual of `pairs` under `transform`.
pub fn pair_rmse(transform: &RigidTransform, pairs: &[(Point3, Point3)]) -> f64 {
    rmse(transform, pairs)
}

fn centroid_pairs(
    correspondences: &[Correspondence],
    observed: &FeatureSet,
    reference: &FeatureSet,
) -> Result<Vec<(Point3, Point3)>, RegistrationError> {
    correspondences
        .iter()
        .map(|c| {
            let o = observed.get(c.observed_id).ok_or(RegistrationError::UnknownFeature(c.observed_id))?;
            let r = reference.get(c.reference_id).ok_or(RegistrationError::UnknownFeature(c.reference_id))?;
            Ok((*o.centroid(), *r.centroid()))
        })
        .collect()
}

fn fit_pairs(pairs: &[(Point3, Point3)]) -> Result<RigidTransform, RegistrationError> {
    let (src, dst): (Vec<Point3>, Vec<Point3>) = pairs.iter().copied().unzip();
    rigid_fit(&src, &dst, &vec![1.0; pairs.len()])
}

/// RANSAC over matched centroids.
///
/// Each hypothesis draws four distinct correspondences from its own RNG
/// stream, derived from `(rng_seed, hypothesis index)`. Draws whose observed
/// or reference centroids are coplanar are redrawn, with at most
/// `10 · N` redraws in total. The hypothesis with the most inliers wins (ties
/// go to the earlier hypothesis) and the transform is re-fitted on all of its
/// inliers.
pub fn ransac_register(
    correspondences: &[Correspondence],
    observed: &FeatureSet,
    reference: &FeatureSet,
    cfg: &RansacConfig,
) -> Result<RegistrationResult, RegistrationError> {
    let planned = cfg.validate()?;
    if correspondences.len() < SAMPLE_SIZE {
        return Err(RegistrationError::TooFewCorrespondences(correspondences.len()));
    }
    let pairs = centroid_pairs(correspondences, observed, reference)?;
    let n = pairs.len();
    let budget = REDRAW_FACTOR * planned;
    let mut redraws = 0usize;
    let mut used = 0usize;
    let mut best: Option<(Vec<usize>, RigidTransform)> = None;

    'hypotheses: for h in 0..planned {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        rng.set_stream(h as u64);
        let transform = loop {
            let sample = rand::seq::index::sample(&mut rng, n, SAMPLE_SIZE).into_vec();
            let quad: Vec<(Point3, Point3)> = sample.iter().map(|&i| pairs[i]).collect();
            let degenerate = coplanarity_check(&quad[0].0, &quad[1].0, &quad[2].0, &quad[3].0, cfg.coplanarity_epsilon)
                || coplanarity_check(&quad[0].1, &quad[1].1, &quad[2].1, &quad[3].1, cfg.coplanarity_epsilon);
            let fitted = if degenerate { None } else { fit_pairs(&quad).ok() };
            match fitted {
                Some(t) => break t,
                None => {
                    redraws += 1;
                    if redraws > budget {
                        break 'hypotheses;
                    }
                }
            }
        };
        used += 1;
        let inliers: Vec<usize> = (0..n)
            .filter(|&i| (transform.apply(&pairs[i].0) - pairs[i].1).norm() <= cfg.inlier_threshold)
            .collect();
        if best.as_ref().is_none_or(|(b, _)| inliers.len() > b.len()) {
            best = Some((inliers, transform));
        }
    }

    let Some((inlier_idx, hypothesis)) = best else {
        return Err(RegistrationError::DegenerateConfiguration);
    };
    let inlier_pairs: Vec<(Point3, Point3)> = inlier_idx.iter().map(|&i| pairs[i]).collect();
    let transform = fit_pairs(&inlier_pairs).unwrap_or(hypothesis);
    Ok(RegistrationResult {
        transform,
        rmse: rmse(&transform, &inlier_pairs),
        inliers: inlier_idx.iter().map(|&i| correspondences[i]).collect(),
        hypotheses_used: used,
        refined: false,
    })
}

/// Point pairs used by the corner re-fit: each observed corner of an inlier,
/// mapped through the coarse transform, is paired with the nearest corner of
/// its matched reference feature. Inliers without corners on both sides
/// contribute their centroids. The flag reports whether any corners were used.
pub fn corner_pairs(
    result: &RegistrationResult,
    observed: &FeatureSet,
    reference: &FeatureSet,
) -> (Vec<(Point3, Point3)>, bool) {
    let mut pairs = Vec::new();
    let mut any_corners = false;
    for c in &result.inliers {
        let (Some(o), Some(r)) = (observed.get(c.observed_id), reference.get(c.reference_id)) else {
            continue;
        };
        match (o.corners(), r.corners()) {
            (Some(oc), Some(rc)) => {
                any_corners = true;
                for corner in oc {
                    let moved = result.transform.apply(corner);
                    let nearest = rc
                        .iter()
                        .min_by(|a, b| (*a - moved).norm_squared().total_cmp(&(*b - moved).norm_squared()))
                        .copied()
                        .unwrap_or(*r.centroid());
                    pairs.push((*corner, nearest));
                }
            }
            _ => pairs.push((*o.centroid(), *r.centroid())),
        }
    }
    (pairs, any_corners)
}

/// Re-fits the transform on corner pairs of the inlier features.
///
/// Returns the input unchanged (with `refined` clear) when no inlier has
/// corners on both sides or the corner set is degenerate.
pub fn refine_with_corners(
    result: &RegistrationResult,
    observed: &FeatureSet,
    reference: &FeatureSet,
) -> RegistrationResult {
    let (pairs, any_corners) = corner_pairs(result, observed, reference);
    if !any_corners {
        return RegistrationResult { refined: false, ..result.clone() };
    }
    match fit_pairs(&pairs) {
        Ok(transform) => RegistrationResult {
            transform,
            rmse: rmse(&transform, &pairs),
            refined: true,
            ..result.clone()
        },
        Err(_) => RegistrationResult { refined: false, ..result.clone() },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{FeatureKind, MacroFeature};
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn hypothesis_count_examples() {
        assert_eq!(hypothesis_count(0.99, 0.5, 4).unwrap(), 72);
        assert_eq!(hypothesis_count(0.99, 0.7, 4).unwrap(), 17);
        assert_eq!(hypothesis_count(0.01, 0.999, 4).unwrap(), 1);
        for (p, w, m) in [(0.0, 0.5, 4), (1.0, 0.5, 4), (0.9, 0.0, 4), (0.9, 1.0, 4), (0.9, 0.5, 0)] {
            assert!(matches!(hypothesis_count(p, w, m), Err(RegistrationError::InvalidParameters(_))));
        }
    }

    fn p(x: f64, y: f64, z: f64) -> Point3 {
        Point3::new(x, y, z)
    }

    #[test]
    fn coplanarity_examples() {
        let o = p(0.0, 0.0, 0.0);
        assert_eq!(scalar_triple_product(&o, &p(1.0, 0.0, 0.0), &p(0.0, 1.0, 0.0), &p(1.0, 1.0, 0.0)), 0.0);
        assert!(coplanarity_check(&o, &p(1.0, 0.0, 0.0), &p(0.0, 1.0, 0.0), &p(1.0, 1.0, 0.0), 0.01));
        // (0,1,0)·[(1,0,0)×(0,0,1)] = (0,1,0)·(0,-1,0) = -1
        assert_eq!(scalar_triple_product(&o, &p(1.0, 0.0, 0.0), &p(0.0, 1.0, 0.0), &p(0.0, 0.0, 1.0)), -1.0);
        assert!(!coplanarity_check(&o, &p(1.0, 0.0, 0.0), &p(0.0, 1.0, 0.0), &p(0.0, 0.0, 1.0), 0.01));
        // three collinear points plus an arbitrary fourth
        assert!(coplanarity_check(&o, &p(1.0, 1.0, 1.0), &p(2.0, 2.0, 2.0), &p(5.0, -3.0, 7.0), 0.01));
        assert!(coplanarity_check(&p(5.0, -3.0, 7.0), &o, &p(1.0, 1.0, 1.0), &p(2.0, 2.0, 2.0), 0.01));
    }

    fn cube() -> Vec<Point3> {
        let mut v = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 1.0] {
                    v.push(p(x, y, z));
                }
            }
        }
        v
    }

    #[test]
    fn rigid_fit_identity_and_cube() {
        let src = cube();
        let ones = vec![1.0; src.len()];
        let t = rigid_fit(&src, &src, &ones).unwrap();
        assert!((t.rotation() - Matrix3::identity()).amax() < 1e-12);
        assert!(t.translation().amax() < 1e-12);

        let truth = RigidTransform::from_axis_angle(&Vector3::z(), 90f64.to_radians(), Vector3::new(1.0, 2.0, 3.0));
        let dst: Vec<Point3> = src.iter().map(|q| truth.apply(q)).collect();
        let t = rigid_fit(&src, &dst, &ones).unwrap();
        assert!((t.rotation() - truth.rotation()).amax() < 1e-9);
        assert!((t.translation() - truth.translation()).amax() < 1e-9);
    }

    #[test]
    fn rigid_fit_errors() {
        let line = vec![p(0.0, 0.0, 0.0), p(1.0, 0.0, 0.0), p(2.0, 0.0, 0.0), p(3.0, 0.0, 0.0)];
        assert_eq!(rigid_fit(&line, &line, &[1.0; 4]), Err(RegistrationError::DegeneratePointSet));
        let same = vec![p(1.0, 1.0, 1.0); 4];
        assert_eq!(rigid_fit(&same, &same, &[1.0; 4]), Err(RegistrationError::DegeneratePointSet));
        let c = cube();
        assert!(matches!(rigid_fit(&c, &c[..7], &[1.0; 8]), Err(RegistrationError::LengthMismatch { .. })));
        assert_eq!(rigid_fit(&c[..2], &c[..2], &[1.0; 2]), Err(RegistrationError::TooFewPoints { need: 3, got: 2 }));
        let mut w = vec![1.0; 8];
        w[3] = 0.0;
        assert_eq!(rigid_fit(&c, &c, &w), Err(RegistrationError::InvalidWeight));
    }

    /// Sum of squared residuals after the best translation for a fixed rotation.
    fn cost(r: &Matrix3<f64>, src: &[Point3], dst: &[Point3]) -> f64 {
        let n = src.len() as f64;
        let a = src.iter().fold(Vector3::zeros(), |s, q| s + q.coords) / n;
        let b = dst.iter().fold(Vector3::zeros(), |s, q| s + q.coords) / n;
        src.iter().zip(dst).map(|(x, y)| (r * (x.coords - a) - (y.coords - b)).norm_squared()).sum()
    }

    #[test]
    fn reflection_yields_best_proper_rotation() {
        let src = vec![p(0.0, 0.0, 0.0), p(2.0, 0.0, 0.0), p(0.0, 1.0, 0.0), p(0.0, 0.0, 0.5), p(1.0, 1.0, 1.0)];
        // mirror through the xy-plane
        let dst: Vec<Point3> = src.iter().map(|q| p(q.x, q.y, -q.z)).collect();
        let t = rigid_fit(&src, &dst, &[1.0; 5]).unwrap();
        assert!((t.rotation().determinant() - 1.0).abs() < 1e-9);
        let fitted = cost(t.rotation(), &src, &dst);

        // exhaustive search over a grid of proper rotations
        let mut best = f64::INFINITY;
        let steps = 36;
        for i in 0..steps {
            for j in 0..=steps / 2 {
                for k in 0..steps {
                    let step = std::f64::consts::TAU / steps as f64;
                    let r = RigidTransform::from_euler(i as f64 * step, j as f64 * step - std::f64::consts::FRAC_PI_2, k as f64 * step, Vector3::zeros());
                    best = best.min(cost(r.rotation(), &src, &dst));
                }
            }
        }
        assert!(fitted <= best + 1e-9, "svd {fitted} vs grid {best}");
    }

    #[test]
    fn weights_shift_the_solution() {
        let src = cube();
        let mut dst: Vec<Point3> = src.clone();
        dst[0] = p(0.3, -0.2, 0.1);
        let heavy: Vec<f64> = (0..8).map(|i| if i == 0 { 1e-6 } else { 1.0 }).collect();
        let t_heavy = rigid_fit(&src, &dst, &heavy).unwrap();
        let t_unit = rigid_fit(&src, &dst, &[1.0; 8]).unwrap();
        // down-weighting the perturbed point pulls the fit back toward identity
        assert!(t_heavy.rotation_angle() < t_unit.rotation_angle());
        assert!(t_heavy.translation().norm() < t_unit.translation().norm());
    }

    fn scattered_set(n: u64, rng: &mut ChaCha8Rng) -> FeatureSet {
        FeatureSet::new(
            (0..n)
                .map(|i| {
                    let c = p(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(0.0..3.0));
                    MacroFeature::new(i, FeatureKind::Door, c).unwrap()
                })
                .collect(),
        )
        .unwrap()
    }

    fn truth() -> RigidTransform {
        RigidTransform::from_euler(0.05, -0.1, 1.3, Vector3::new(4.0, -7.0, 0.5))
    }

    #[test]
    fn noiseless_consensus_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let reference = scattered_set(20, &mut rng);
        let observed = FeatureSet::new(reference.iter().map(|f| f.transformed(&truth().inverse())).collect()).unwrap();
        let corr: Vec<Correspondence> =
            (0..20).map(|i| Correspondence { observed_id: i, reference_id: i, hamming: 0 }).collect();
        let result = ransac_register(&corr, &observed, &reference, &RansacConfig::default()).unwrap();
        assert_eq!(result.inliers.len(), 20);
        assert!(result.transform.rotation_angle_to(&truth()) < 1e-9);
        assert!((result.transform.translation() - truth().translation()).norm() < 1e-9);
        assert!(result.rmse < 1e-9);
        assert_eq!(result.hypotheses_used, 72);
    }

    #[test]
    fn deterministic_for_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let reference = scattered_set(15, &mut rng);
        let observed = FeatureSet::new(reference.iter().map(|f| f.transformed(&truth().inverse())).collect()).unwrap();
        let corr: Vec<Correspondence> = (0..15)
            .map(|i| Correspondence { observed_id: i, reference_id: (i * 7) % 15, hamming: 3 })
            .collect();
        let cfg = RansacConfig { rng_seed: 99, ..Default::default() };
        let a = ransac_register(&corr, &observed, &reference, &cfg).unwrap();
        let b = ransac_register(&corr, &observed, &reference, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn coplanar_scene_is_degenerate() {
        let reference = FeatureSet::new(
            (0..12)
                .map(|i| MacroFeature::new(i, FeatureKind::Door, p(i as f64 * 1.7, 0.0, 1.0 + (i % 3) as f64 * 0.4)).unwrap())
                .collect(),
        )
        .unwrap();
        let observed = FeatureSet::new(reference.iter().map(|f| f.transformed(&truth().inverse())).collect()).unwrap();
        let corr: Vec<Correspondence> =
            (0..12).map(|i| Correspondence { observed_id: i, reference_id: i, hamming: 0 }).collect();
        let err = ransac_register(&corr, &observed, &reference, &RansacConfig::default()).unwrap_err();
        assert_eq!(err, RegistrationError::DegenerateConfiguration);
        assert!(err.to_string().contains("degenerate configuration"));
    }

    #[test]
    fn ransac_input_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let set = scattered_set(6, &mut rng);
        let corr: Vec<Correspondence> = (0..3).map(|i| Correspondence { observed_id: i, reference_id: i, hamming: 0 }).collect();
        assert_eq!(
            ransac_register(&corr, &set, &set, &RansacConfig::default()),
            Err(RegistrationError::TooFewCorrespondences(3))
        );
        let mut corr: Vec<Correspondence> = (0..5).map(|i| Correspondence { observed_id: i, reference_id: i, hamming: 0 }).collect();
        corr[2].reference_id = 77;
        assert_eq!(ransac_register(&corr, &set, &set, &RansacConfig::default()), Err(RegistrationError::UnknownFeature(77)));
        let cfg = RansacConfig { inlier_threshold: 0.0, ..Default::default() };
        assert!(matches!(ransac_register(&corr, &set, &set, &cfg), Err(RegistrationError::InvalidParameters(_))));
    }

    fn quad_feature(id: u64, centre: Point3, yaw: f64) -> MacroFeature {
        let u = Vector3::new(yaw.cos(), yaw.sin(), 0.0) * 0.45;
        let up = Vector3::z() * 1.05;
        MacroFeature::with_corners(id, FeatureKind::Door, [centre - u + up, centre - u - up, centre + u + up, centre + u - up]).unwrap()
    }

    fn cornered_scene(noise: f64, seed: u64) -> (FeatureSet, FeatureSet, Vec<Correspondence>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise.max(1e-300)).unwrap();
        let mut reference = Vec::new();
        let mut observed = Vec::new();
        for i in 0..10u64 {
            let c = p(i as f64 * 2.3, if i % 2 == 0 { 0.0 } else { 4.0 }, 1.05 + (i % 3) as f64 * 0.3);
            let f = quad_feature(i, c, (i as f64) * 0.4);
            let mut moved = f.transformed(&truth().inverse());
            if noise > 0.0 {
                let corners = moved.corners().unwrap().map(|q| q + Vector3::from_fn(|_, _| normal.sample(&mut rng)));
                moved = MacroFeature::with_corners(i, FeatureKind::Door, corners).unwrap();
            }
            reference.push(f);
            observed.push(moved);
        }
        let corr = (0..10).map(|i| Correspondence { observed_id: i, reference_id: i, hamming: 0 }).collect();
        (FeatureSet::new(observed).unwrap(), FeatureSet::new(reference).unwrap(), corr)
    }

    #[test]
    fn refine_zero_noise_keeps_transform() {
        let (observed, reference, corr) = cornered_scene(0.0, 0);
        let coarse = ransac_register(&corr, &observed, &reference, &RansacConfig::default()).unwrap();
        let refined = refine_with_corners(&coarse, &observed, &reference);
        assert!(refined.refined);
        assert!((refined.transform.rotation() - coarse.transform.rotation()).amax() < 1e-9);
        assert!((refined.transform.translation() - coarse.transform.translation()).amax() < 1e-9);
    }

    #[test]
    fn refine_does_not_increase_corner_rmse() {
        for seed in 0..5 {
            let (observed, reference, corr) = cornered_scene(0.02, seed);
            let coarse = ransac_register(&corr, &observed, &reference, &RansacConfig::default()).unwrap();
            assert_eq!(coarse.inliers.len(), 10);
            let (pairs, _) = corner_pairs(&coarse, &observed, &reference);
            assert_eq!(pairs.len(), 40);
            let refined = refine_with_corners(&coarse, &observed, &reference);
            assert!(refined.refined);
            assert!(refined.rmse <= pair_rmse(&coarse.transform, &pairs) + 1e-12);
        }
    }

    #[test]
    fn refine_without_corners_is_a_no_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let reference = scattered_set(10, &mut rng);
        let observed = FeatureSet::new(reference.iter().map(|f| f.transformed(&truth().inverse())).collect()).unwrap();
        let corr: Vec<Correspondence> = (0..10).map(|i| Correspondence { observed_id: i, reference_id: i, hamming: 0 }).collect();
        let coarse = ransac_register(&corr, &observed, &reference, &RansacConfig::default()).unwrap();
        let same = refine_with_corners(&coarse, &observed, &reference);
        assert_eq!(same, coarse);
        assert!(!same.refined);
    }
}
