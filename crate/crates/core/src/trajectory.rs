//! KITTI pose files and TUM trajectory files.
//!
//! KITTI: one pose per line, 12 floats forming the row-major 3×4 matrix
//! `[R | t]`. Timestamps come from a companion times file or are synthesized
//! at a fixed rate.
//!
//! TUM: `timestamp tx ty tz qx qy qz qw` per line, `#` starts a comment.

use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim3::{orthonormality_error, project_to_so3, Se3Pose};

/// Deviation from orthonormality above which a warning is logged.
pub const ORTHONORMALITY_WARN: f64 = 1e-3;
/// Deviation beyond which a rotation block is rejected outright.
pub const ORTHONORMALITY_REJECT: f64 = 0.5;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: rotation is not orthonormal (deviation {deviation:.3e})")]
    NonOrthonormalRotation { line: usize, deviation: f64 },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryFormat {
    KittiPose,
    TumTrajectory,
}

/// Axis convention applied after parsing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axes {
    /// Keep the file's world frame.
    #[default]
    Native,
    /// KITTI camera world frame (x right, y down, z forward) re-expressed
    /// as a level frame (x right, y forward, z up).
    KittiLevel,
}

impl Axes {
    fn matrix(self) -> Matrix3<f64> {
        match self {
            Axes::Native => Matrix3::identity(),
            Axes::KittiLevel => Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, -1.0, 0.0),
        }
    }

    /// Re-expresses a camera-to-world pose in the converted world frame.
    pub fn apply(self, pose: &Se3Pose) -> Se3Pose {
        if self == Axes::Native {
            return *pose;
        }
        let m = self.matrix();
        Se3Pose::new(
            Rotation3::from_matrix_unchecked(m * pose.rotation.matrix()),
            m * pose.translation,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StampedPose {
    pub timestamp: f64,
    pub pose: Se3Pose,
}

fn parse_floats(line: &str, lineno: usize, expected: usize) -> Result<Vec<f64>, TrajectoryError> {
    let values: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
    let values = values.map_err(|e| TrajectoryError::Parse { line: lineno, message: e.to_string() })?;
    if values.len() != expected {
        return Err(TrajectoryError::Parse {
            line: lineno,
            message: format!("expected {expected} values, found {}", values.len()),
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(TrajectoryError::Parse { line: lineno, message: "non-finite value".into() });
    }
    Ok(values)
}

fn checked_rotation(m: Matrix3<f64>, line: usize) -> Result<Rotation3<f64>, TrajectoryError> {
    let deviation = orthonormality_error(&m);
    if deviation > ORTHONORMALITY_REJECT || m.determinant() <= 0.0 {
        return Err(TrajectoryError::NonOrthonormalRotation { line, deviation });
    }
    if deviation > ORTHONORMALITY_WARN {
        warn!("line {line}: rotation deviates from orthonormal by {deviation:.3e}; re-orthonormalizing");
    }
    Ok(project_to_so3(&m))
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Parses a KITTI pose file. `timestamps` overrides the synthesized clock
/// `i / rate_hz` and must have one entry per pose.
pub fn parse_kitti(
    text: &str,
    timestamps: Option<&[f64]>,
    rate_hz: f64,
) -> Result<Vec<StampedPose>, TrajectoryError> {
    let mut out = Vec::new();
    for (lineno, line) in content_lines(text) {
        let v = parse_floats(line, lineno, 12)?;
        let r = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        let t = Vector3::new(v[3], v[7], v[11]);
        let idx = out.len();
        let timestamp = match timestamps {
            Some(ts) => *ts.get(idx).ok_or(TrajectoryError::Parse {
                line: lineno,
                message: format!("times file has only {} entries", ts.len()),
            })?,
            None => idx as f64 / rate_hz,
        };
        out.push(StampedPose { timestamp, pose: Se3Pose::new(checked_rotation(r, lineno)?, t) });
    }
    if let Some(ts) = timestamps {
        if ts.len() != out.len() {
            return Err(TrajectoryError::Parse {
                line: 0,
                message: format!("{} poses but {} timestamps", out.len(), ts.len()),
            });
        }
    }
    check_monotone(&out)?;
    Ok(out)
}

/// Parses a whitespace-separated list of timestamps, one per line.
pub fn parse_times(text: &str) -> Result<Vec<f64>, TrajectoryError> {
    content_lines(text).map(|(n, l)| Ok(parse_floats(l, n, 1)?[0])).collect()
}

pub fn parse_tum(text: &str) -> Result<Vec<StampedPose>, TrajectoryError> {
    let mut out = Vec::new();
    for (lineno, line) in content_lines(text) {
        let v = parse_floats(line, lineno, 8)?;
        let q = Quaternion::new(v[7], v[4], v[5], v[6]);
        let norm = q.norm();
        if !(norm > 1e-9) {
            return Err(TrajectoryError::NonOrthonormalRotation { line: lineno, deviation: 1.0 });
        }
        if (norm - 1.0).abs() > ORTHONORMALITY_WARN {
            warn!("line {lineno}: quaternion norm {norm}; normalizing");
        }
        let rotation = UnitQuaternion::from_quaternion(q).to_rotation_matrix();
        out.push(StampedPose {
            timestamp: v[0],
            pose: Se3Pose::new(rotation, Vector3::new(v[1], v[2], v[3])),
        });
    }
    check_monotone(&out)?;
    Ok(out)
}

fn check_monotone(poses: &[StampedPose]) -> Result<(), TrajectoryError> {
    for (i, w) in poses.windows(2).enumerate() {
        if !(w[1].timestamp > w[0].timestamp) {
            return Err(TrajectoryError::Parse {
                line: i + 2,
                message: "timestamps must be strictly increasing".into(),
            });
        }
    }
    Ok(())
}

pub fn format_kitti(poses: &[StampedPose]) -> String {
    let mut s = String::new();
    for p in poses {
        let r = p.pose.rotation.matrix();
        let t = p.pose.translation;
        for row in 0..3 {
            for col in 0..3 {
                write!(s, "{:e} ", r[(row, col)]).unwrap();
            }
            write!(s, "{:e}", t[row]).unwrap();
            s.push(if row == 2 { '\n' } else { ' ' });
        }
    }
    s
}

pub fn format_tum(poses: &[StampedPose]) -> String {
    let mut s = String::new();
    for p in poses {
        let q = UnitQuaternion::from_rotation_matrix(&p.pose.rotation);
        let t = p.pose.translation;
        writeln!(
            s,
            "{} {} {} {} {} {} {} {}",
            p.timestamp, t.x, t.y, t.z, q.i, q.j, q.k, q.w
        )
        .unwrap();
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestOptions {
    pub format: TrajectoryFormat,
    /// KITTI only: companion file with one timestamp per pose.
    #[serde(default)]
    pub times: Option<std::path::PathBuf>,
    /// KITTI only: clock rate used when no times file is given.
    #[serde(default = "default_rate")]
    pub rate_hz: f64,
    #[serde(default)]
    pub axes: Axes,
}

fn default_rate() -> f64 {
    10.0
}

/// Reads a trajectory file and applies the axis convention.
pub fn ingest_trajectory(path: &Path, opts: &IngestOptions) -> Result<Vec<StampedPose>, TrajectoryError> {
    let text = std::fs::read_to_string(path)?;
    let mut poses = match opts.format {
        TrajectoryFormat::KittiPose => {
            let times = match &opts.times {
                Some(p) => Some(parse_times(&std::fs::read_to_string(p)?)?),
                None => None,
            };
            parse_kitti(&text, times.as_deref(), opts.rate_hz)?
        }
        TrajectoryFormat::TumTrajectory => parse_tum(&text)?,
    };
    for p in &mut poses {
        p.pose = opts.axes.apply(&p.pose);
    }
    Ok(poses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim3::so3_exp;

    #[test]
    fn kitti_identity_line() {
        let p = parse_kitti("1 0 0 0 0 1 0 0 0 0 1 0\n", None, 10.0).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].pose, Se3Pose::identity());
        assert_eq!(p[0].timestamp, 0.0);
    }

    #[test]
    fn tum_identity_quaternion() {
        let p = parse_tum("# comment\n0.5 1 2 3 0 0 0 1\n").unwrap();
        assert_eq!(p[0].pose.rotation, Rotation3::identity());
        assert_eq!(p[0].pose.translation, Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(p[0].timestamp, 0.5);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse_kitti("1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0\n", None, 10.0).unwrap_err();
        assert!(matches!(err, TrajectoryError::Parse { line: 2, .. }), "{err}");
        let err = parse_tum("0 1 2 3 0 0 0 x\n").unwrap_err();
        assert!(matches!(err, TrajectoryError::Parse { line: 1, .. }));
        let err = parse_kitti("1 0 0 0 0 1 0 0 0 0 -1 0\n", None, 10.0).unwrap_err();
        assert!(matches!(err, TrajectoryError::NonOrthonormalRotation { line: 1, .. }));
    }

    #[test]
    fn slightly_skewed_rotation_is_projected() {
        let p = parse_kitti("1 0.002 0 0 0 1 0 0 0 0 1 0\n", None, 10.0).unwrap();
        assert!(orthonormality_error(p[0].pose.rotation.matrix()) < 1e-12);
    }

    fn sample() -> Vec<StampedPose> {
        (0..20)
            .map(|i| {
                let f = i as f64;
                StampedPose {
                    timestamp: 0.1 * f + 0.013,
                    pose: Se3Pose::new(
                        so3_exp(&Vector3::new(0.1 * f.sin(), 0.3 * f.cos(), 0.05 * f)),
                        Vector3::new(f * 1.5, -2.0 * f, 0.25 * f * f),
                    ),
                }
            })
            .collect()
    }

    #[test]
    fn export_ingest_round_trip() {
        let poses = sample();
        let tum = parse_tum(&format_tum(&poses)).unwrap();
        let times: Vec<f64> = poses.iter().map(|p| p.timestamp).collect();
        let kitti = parse_kitti(&format_kitti(&poses), Some(&times), 10.0).unwrap();
        for back in [tum, kitti] {
            for (a, b) in poses.iter().zip(&back) {
                assert_eq!(a.timestamp, b.timestamp);
                assert!((a.pose.to_matrix() - b.pose.to_matrix()).amax() < 1e-9);
            }
        }
    }

    #[test]
    fn kitti_level_axes() {
        let p = Se3Pose::new(Rotation3::identity(), Vector3::new(1.0, 2.0, 3.0));
        let q = Axes::KittiLevel.apply(&p);
        assert_eq!(q.translation, Vector3::new(1.0, 3.0, -2.0));
        assert!((q.rotation.matrix().determinant() - 1.0).abs() < 1e-15);
    }
}
