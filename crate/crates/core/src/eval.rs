//! Scoring an estimated transform against ground truth.

use serde::Serialize;
use thiserror::Error;

use crate::geometry::{Point3, RigidTransform};
use crate::matching::Correspondence;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("trajectory length must be positive, got {0}")]
    InvalidTrajectoryLength(f64),
    #[error("trajectory percentage needs a goal point")]
    MissingGoal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalReport {
    pub rotation_error_deg: f64,
    pub translation_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub goal_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory_pct: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub match_accuracy: Option<f64>,
}

/// Rotation error is the angle of `R_est · R_truthᵀ`; translation error is
/// `‖t_est − t_truth‖`. With a goal point `g`, the goal error is
/// `‖T_est(g) − T_truth(g)‖`, and with a trajectory length it is also
/// reported as a percentage of that length.
pub fn evaluate(
    truth: &RigidTransform,
    estimate: &RigidTransform,
    goal: Option<&Point3>,
    trajectory_length: Option<f64>,
) -> Result<EvalReport, EvalError> {
    let goal_error = goal.map(|g| (estimate.apply(g) - truth.apply(g)).norm());
    let trajectory_pct = match (trajectory_length, goal_error) {
        (None, _) => None,
        (Some(len), _) if !(len > 0.0 && len.is_finite()) => return Err(EvalError::InvalidTrajectoryLength(len)),
        (Some(_), None) => return Err(EvalError::MissingGoal),
        (Some(len), Some(e)) => Some(100.0 * e / len),
    };
    Ok(EvalReport {
        rotation_error_deg: estimate.rotation_angle_to(truth).to_degrees(),
        translation_error: (estimate.translation() - truth.translation()).norm(),
        goal_error,
        trajectory_pct,
        match_accuracy: None,
    })
}

/// Fraction of correspondences that pair a feature with itself, for observed
/// sets whose true features carry their reference id. `None` when there are
/// no correspondences.
pub fn match_accuracy(correspondences: &[Correspondence]) -> Option<f64> {
    if correspondences.is_empty() {
        return None;
    }
    let correct = correspondences.iter().filter(|c| c.observed_id == c.reference_id).count();
    Some(correct as f64 / correspondences.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vector3;

    #[test]
    fn identical_transforms_score_zero() {
        let t = RigidTransform::from_euler(0.1, -0.2, 2.0, Vector3::new(1.0, 2.0, 3.0));
        let r = evaluate(&t, &t, Some(&Point3::new(5.0, 0.0, 0.0)), Some(10.0)).unwrap();
        assert_eq!(r.rotation_error_deg, 0.0);
        assert_eq!(r.translation_error, 0.0);
        assert_eq!(r.goal_error, Some(0.0));
        assert_eq!(r.trajectory_pct, Some(0.0));
    }

    #[test]
    fn translated_estimate() {
        let truth = RigidTransform::identity();
        let est = RigidTransform::from_translation(Vector3::new(0.14, 0.0, 0.0));
        let r = evaluate(&truth, &est, Some(&Point3::origin()), Some(7.0)).unwrap();
        assert!((r.goal_error.unwrap() - 0.14).abs() < 1e-15);
        assert!((r.trajectory_pct.unwrap() - 2.0).abs() < 1e-12);
        assert!((r.translation_error - 0.14).abs() < 1e-15);
    }

    #[test]
    fn one_degree_rotation() {
        let truth = RigidTransform::from_euler(0.0, 0.0, 0.3, Vector3::new(1.0, 0.0, 0.0));
        let rz = RigidTransform::from_axis_angle(&Vector3::z(), 1f64.to_radians(), Vector3::zeros());
        let r = evaluate(&truth, &truth.compose(&rz), None, None).unwrap();
        assert!((r.rotation_error_deg - 1.0).abs() < 1e-9);
        assert_eq!(r.goal_error, None);
    }

    #[test]
    fn trajectory_needs_goal_and_positive_length() {
        let t = RigidTransform::identity();
        assert_eq!(evaluate(&t, &t, None, Some(3.0)), Err(EvalError::MissingGoal));
        assert!(evaluate(&t, &t, Some(&Point3::origin()), Some(0.0)).is_err());
    }

    #[test]
    fn accuracy_counts_self_pairs() {
        let c = |o, r| Correspondence { observed_id: o, reference_id: r, hamming: 0 };
        assert_eq!(match_accuracy(&[]), None);
        assert_eq!(match_accuracy(&[c(1, 1), c(2, 3), c(4, 4), c(5, 5)]), Some(0.75));
    }
}
