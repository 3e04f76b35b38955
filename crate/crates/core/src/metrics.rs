//! Trajectory error metrics against ground truth.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim3::Sim3Pose;

/// Timestamps of estimate and truth must agree to this tolerance.
pub const TIMESTAMP_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("timestamp mismatch at index {index}: estimate {estimate}, truth {truth}")]
    TimestampMismatch { index: usize, estimate: f64, truth: f64 },
    #[error("trajectory lengths differ: estimate {estimate}, truth {truth}")]
    LengthMismatch { estimate: usize, truth: usize },
    #[error("empty trajectory")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alignment {
    #[default]
    None,
    /// Rotate and translate the estimate so its first pose coincides with the truth's.
    RigidFirstPose,
}

fn check_matched(est: &[(f64, Sim3Pose)], truth: &[(f64, Sim3Pose)]) -> Result<(), MetricsError> {
    if est.len() != truth.len() {
        return Err(MetricsError::LengthMismatch { estimate: est.len(), truth: truth.len() });
    }
    if est.is_empty() {
        return Err(MetricsError::Empty);
    }
    for (index, (e, t)) in est.iter().zip(truth).enumerate() {
        if (e.0 - t.0).abs() > TIMESTAMP_TOLERANCE {
            return Err(MetricsError::TimestampMismatch { index, estimate: e.0, truth: t.0 });
        }
    }
    Ok(())
}

/// Per-keyframe position error magnitudes.
pub fn position_errors(
    est: &[(f64, Sim3Pose)],
    truth: &[(f64, Sim3Pose)],
    alignment: Alignment,
) -> Result<Vec<f64>, MetricsError> {
    check_matched(est, truth)?;
    let align: Box<dyn Fn(Vector3<f64>) -> Vector3<f64>> = match alignment {
        Alignment::None => Box::new(|p| p),
        Alignment::RigidFirstPose => {
            let (e0, t0) = (&est[0].1, &truth[0].1);
            let r = t0.rotation().matrix() * e0.rotation().matrix().transpose();
            let (pe, pt) = (e0.position(), t0.position());
            Box::new(move |p| r * (p - pe) + pt)
        }
    };
    Ok(est
        .iter()
        .zip(truth)
        .map(|(e, t)| (align(e.1.position()) - t.1.position()).norm())
        .collect())
}

pub fn rmse(errors: &[f64]) -> f64 {
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

pub fn ate_rmse(
    est: &[(f64, Sim3Pose)],
    truth: &[(f64, Sim3Pose)],
    alignment: Alignment,
) -> Result<f64, MetricsError> {
    Ok(rmse(&position_errors(est, truth, alignment)?))
}

/// `|ŝ/s − 1|` per keyframe.
pub fn scale_error_series(
    est: &[(f64, Sim3Pose)],
    truth: &[(f64, Sim3Pose)],
) -> Result<Vec<f64>, MetricsError> {
    check_matched(est, truth)?;
    Ok(est.iter().zip(truth).map(|(e, t)| (e.1.scale() / t.1.scale() - 1.0).abs()).collect())
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
