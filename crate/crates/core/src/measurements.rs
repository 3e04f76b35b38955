//! Inter-agent message schemas, factor residuals, Jacobians and weighting.
//!
//! All Jacobians are taken with respect to a right perturbation
//! `pose ← pose · exp(ξ)`, which is the update the solver applies.

use nalgebra::{DMatrix, DVector, Matrix3, RowSVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim3::{hat, Matrix7, Sim3Error, Sim3Pose, Twist7, Vector7};

pub type AgentId = u16;
pub type AnchorId = u16;

/// Distances below this make the range Jacobian undefined.
pub const MIN_RANGE_DISTANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasurementError {
    #[error("invalid message: {0}")]
    InvalidMessage(String),
    #[error("information matrix is not symmetric positive definite")]
    NonSpdInformation,
    #[error("range endpoints coincide (distance {distance} m)")]
    CoincidentPositions { distance: f64 },
    #[error(transparent)]
    Lie(#[from] Sim3Error),
}

/// Checks symmetry (to 1e-12 relative) and positive definiteness.
pub fn check_spd(m: &Matrix7) -> Result<(), MeasurementError> {
    let asym = (m - m.transpose()).amax();
    if !m.iter().all(|x| x.is_finite()) || asym > 1e-12 * m.amax().max(1.0) {
        return Err(MeasurementError::NonSpdInformation);
    }
    m.cholesky().map(|_| ()).ok_or(MeasurementError::NonSpdInformation)
}

fn invalid(msg: impl Into<String>) -> MeasurementError {
    MeasurementError::InvalidMessage(msg.into())
}

/// Keyframe pose broadcast by an agent, in the global frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeMsg {
    pub agent_id: AgentId,
    pub timestamp: f64,
    pub pose: Sim3Pose,
    /// Covariance in twist coordinates.
    pub covariance: Matrix7,
}

impl KeyframeMsg {
    pub fn new(
        agent_id: AgentId,
        timestamp: f64,
        pose: Sim3Pose,
        covariance: Matrix7,
    ) -> Result<Self, MeasurementError> {
        if !timestamp.is_finite() {
            return Err(invalid("keyframe timestamp must be finite"));
        }
        if !pose.is_finite() {
            return Err(invalid("keyframe pose must be finite"));
        }
        check_spd(&covariance)?;
        Ok(Self { agent_id, timestamp, pose, covariance })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterRangeMsg {
    pub agent_a: AgentId,
    pub agent_b: AgentId,
    pub timestamp: f64,
    pub range: f64,
    pub variance: f64,
}

impl InterRangeMsg {
    /// Builds a message with the canonical ordering `agent_a < agent_b`.
    pub fn new(
        agent_a: AgentId,
        agent_b: AgentId,
        timestamp: f64,
        range: f64,
        variance: f64,
    ) -> Result<Self, MeasurementError> {
        if agent_a == agent_b {
            return Err(invalid(format!("inter-agent range from agent {agent_a} to itself")));
        }
        check_range(timestamp, range, variance)?;
        let (a, b) = if agent_a < agent_b { (agent_a, agent_b) } else { (agent_b, agent_a) };
        Ok(Self { agent_a: a, agent_b: b, timestamp, range, variance })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorRangeMsg {
    pub agent_id: AgentId,
    pub anchor_id: AnchorId,
    pub timestamp: f64,
    pub range: f64,
    pub variance: f64,
}

impl AnchorRangeMsg {
    pub fn new(
        agent_id: AgentId,
        anchor_id: AnchorId,
        timestamp: f64,
        range: f64,
        variance: f64,
    ) -> Result<Self, MeasurementError> {
        check_range(timestamp, range, variance)?;
        Ok(Self { agent_id, anchor_id, timestamp, range, variance })
    }
}

fn check_range(timestamp: f64, range: f64, variance: f64) -> Result<(), MeasurementError> {
    if !timestamp.is_finite() {
        return Err(invalid("range timestamp must be finite"));
    }
    if !(range >= 0.0) || !range.is_finite() {
        return Err(invalid(format!("range must be non-negative, got {range}")));
    }
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(invalid(format!("range variance must be positive, got {variance}")));
    }
    Ok(())
}

/// Relative Sim(3) motion `Z ≈ S_j S_i⁻¹` between consecutive keyframes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdometryEdge {
    pub agent_id: AgentId,
    pub timestamp_i: f64,
    pub timestamp_j: f64,
    pub relative_pose: Sim3Pose,
    pub information: Matrix7,
}

impl OdometryEdge {
    pub fn new(
        agent_id: AgentId,
        timestamp_i: f64,
        timestamp_j: f64,
        relative_pose: Sim3Pose,
        information: Matrix7,
    ) -> Result<Self, MeasurementError> {
        if !(timestamp_i < timestamp_j) {
            return Err(invalid(format!(
                "odometry timestamps must increase ({timestamp_i} -> {timestamp_j})"
            )));
        }
        check_spd(&information)?;
        Ok(Self { agent_id, timestamp_i, timestamp_j, relative_pose, information })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorFactor {
    pub agent_id: AgentId,
    pub timestamp: f64,
    pub prior_pose: Sim3Pose,
    pub information: Matrix7,
}

impl PriorFactor {
    pub fn new(
        agent_id: AgentId,
        timestamp: f64,
        prior_pose: Sim3Pose,
        information: Matrix7,
    ) -> Result<Self, MeasurementError> {
        check_spd(&information)?;
        Ok(Self { agent_id, timestamp, prior_pose, information })
    }
}

/// `measured − ‖p_a − p_b‖`.
pub fn range_residual_points(
    p_a: &Vector3<f64>,
    p_b: &Vector3<f64>,
    measured: f64,
) -> Result<f64, MeasurementError> {
    let distance = (p_a - p_b).norm();
    if distance < MIN_RANGE_DISTANCE {
        return Err(MeasurementError::CoincidentPositions { distance });
    }
    Ok(measured - distance)
}

pub fn range_residual(
    pose_a: &Sim3Pose,
    pose_b: &Sim3Pose,
    measured: f64,
) -> Result<f64, MeasurementError> {
    range_residual_points(&pose_a.position(), &pose_b.position(), measured)
}

pub fn anchor_range_residual(
    pose: &Sim3Pose,
    anchor: &Vector3<f64>,
    measured: f64,
) -> Result<f64, MeasurementError> {
    range_residual_points(&pose.position(), anchor, measured)
}

/// `log(Z · S_i · S_j⁻¹)`; zero when `Z = S_j S_i⁻¹`.
pub fn odometry_residual(
    pose_i: &Sim3Pose,
    pose_j: &Sim3Pose,
    z: &Sim3Pose,
) -> Result<Twist7, Sim3Error> {
    z.compose(&pose_i.between(pose_j)).log()
}

/// `log(P · S⁻¹)`. For `pose = prior · exp(ξ)` this is `−Ad_prior ξ`.
pub fn prior_residual(pose: &Sim3Pose, prior: &Sim3Pose) -> Result<Twist7, Sim3Error> {
    prior.between(pose).log()
}

/// Residual `rᵀ W r` together with the whitened residual `Lᵀ r` where `W = L Lᵀ`.
pub fn whiten(
    residual: &DVector<f64>,
    information: &DMatrix<f64>,
) -> Result<(DVector<f64>, f64), MeasurementError> {
    if information.nrows() != residual.len() || information.ncols() != residual.len() {
        return Err(invalid("information dimension does not match residual"));
    }
    let asym = (information - information.transpose()).amax();
    if asym > 1e-12 * information.amax().max(1.0) {
        return Err(MeasurementError::NonSpdInformation);
    }
    let chol = information.clone().cholesky().ok_or(MeasurementError::NonSpdInformation)?;
    let weighted = chol.l().transpose() * residual;
    let cost = weighted.norm_squared();
    Ok((weighted, cost))
}

/// Derivative of the antenna position `transform_point(S, ℓ)` under `S ← S exp(ξ)`.
fn antenna_position_jacobian(pose: &Sim3Pose, lever_arm: &Vector3<f64>) -> nalgebra::SMatrix<f64, 3, 7> {
    let sr: Matrix3<f64> = pose.rotation().matrix() * pose.scale();
    let mut j = nalgebra::SMatrix::<f64, 3, 7>::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-sr * hat(lever_arm)));
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&sr);
    j.fixed_view_mut::<3, 1>(0, 6).copy_from(&(sr * lever_arm));
    j
}

/// A factor over indexed pose variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Factor {
    Prior {
        var: usize,
        prior: Sim3Pose,
        information: Matrix7,
    },
    Odometry {
        from: usize,
        to: usize,
        measurement: Sim3Pose,
        information: Matrix7,
    },
    InterRange {
        a: usize,
        b: usize,
        range: f64,
        /// Inverse variance.
        information: f64,
        lever_arm: Vector3<f64>,
    },
    AnchorRange {
        var: usize,
        anchor: Vector3<f64>,
        range: f64,
        information: f64,
        lever_arm: Vector3<f64>,
    },
}

/// Residual, information and per-variable Jacobian blocks at a linearization point.
#[derive(Debug, Clone)]
pub struct Linearized {
    pub residual: DVector<f64>,
    pub information: DMatrix<f64>,
    /// `(variable index, ∂r/∂ξ)` with each block of shape `dim × 7`.
    pub blocks: Vec<(usize, DMatrix<f64>)>,
}

impl Linearized {
    pub fn cost(&self) -> f64 {
        (self.residual.transpose() * &self.information * &self.residual)[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorKind {
    Prior,
    Odometry,
    InterRange,
    AnchorRange,
}

impl Factor {
    pub fn kind(&self) -> FactorKind {
        match self {
            Factor::Prior { .. } => FactorKind::Prior,
            Factor::Odometry { .. } => FactorKind::Odometry,
            Factor::InterRange { .. } => FactorKind::InterRange,
            Factor::AnchorRange { .. } => FactorKind::AnchorRange,
        }
    }

    pub fn variables(&self) -> Vec<usize> {
        match *self {
            Factor::Prior { var, .. } | Factor::AnchorRange { var, .. } => vec![var],
            Factor::Odometry { from, to, .. } => vec![from, to],
            Factor::InterRange { a, b, .. } => vec![a, b],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Factor::Prior { .. } | Factor::Odometry { .. } => 7,
            _ => 1,
        }
    }

    pub fn residual(&self, poses: &[Sim3Pose]) -> Result<DVector<f64>, MeasurementError> {
        Ok(match self {
            Factor::Prior { var, prior, .. } => {
                DVector::from_column_slice(prior_residual(&poses[*var], prior)?.0.as_slice())
            }
            Factor::Odometry { from, to, measurement, .. } => DVector::from_column_slice(
                odometry_residual(&poses[*from], &poses[*to], measurement)?.0.as_slice(),
            ),
            Factor::InterRange { a, b, range, lever_arm, .. } => {
                let pa = poses[*a].transform_point(lever_arm);
                let pb = poses[*b].transform_point(lever_arm);
                DVector::from_element(1, range_residual_points(&pa, &pb, *range)?)
            }
            Factor::AnchorRange { var, anchor, range, lever_arm, .. } => {
                let p = poses[*var].transform_point(lever_arm);
                DVector::from_element(1, range_residual_points(&p, anchor, *range)?)
            }
        })
    }

    pub fn information_matrix(&self) -> DMatrix<f64> {
        match self {
            Factor::Prior { information, .. } | Factor::Odometry { information, .. } => {
                DMatrix::from_column_slice(7, 7, information.as_slice())
            }
            Factor::InterRange { information, .. } | Factor::AnchorRange { information, .. } => {
                DMatrix::from_element(1, 1, *information)
            }
        }
    }

    pub fn cost(&self, poses: &[Sim3Pose]) -> Result<f64, MeasurementError> {
        let r = self.residual(poses)?;
        Ok((r.transpose() * self.information_matrix() * &r)[0])
    }

    /// Residual and analytic Jacobian blocks at `poses`.
    pub fn linearize(&self, poses: &[Sim3Pose]) -> Result<Linearized, MeasurementError> {
        let information = self.information_matrix();
        match self {
            Factor::Prior { var, prior, .. } => {
                let pose = &poses[*var];
                let e = prior_residual(pose, prior)?;
                let j: Matrix7 = -(e.right_jacobian_inverse() * pose.adjoint());
                Ok(Linearized {
                    residual: to_dvec(&e.0),
                    information,
                    blocks: vec![(*var, to_dmat(&j))],
                })
            }
            Factor::Odometry { from, to, measurement, .. } => {
                let (si, sj) = (&poses[*from], &poses[*to]);
                let e = odometry_residual(si, sj, measurement)?;
                let j_i: Matrix7 = e.right_jacobian_inverse() * sj.adjoint();
                Ok(Linearized {
                    residual: to_dvec(&e.0),
                    information,
                    blocks: vec![(*from, to_dmat(&j_i)), (*to, to_dmat(&-j_i))],
                })
            }
            Factor::InterRange { a, b, range, lever_arm, .. } => {
                let pa = poses[*a].transform_point(lever_arm);
                let pb = poses[*b].transform_point(lever_arm);
                let r = range_residual_points(&pa, &pb, *range)?;
                let u = (pa - pb).normalize();
                let ja: RowSVector<f64, 7> = -(u.transpose() * antenna_position_jacobian(&poses[*a], lever_arm));
                let jb: RowSVector<f64, 7> = u.transpose() * antenna_position_jacobian(&poses[*b], lever_arm);
                Ok(Linearized {
                    residual: DVector::from_element(1, r),
                    information,
                    blocks: vec![
                        (*a, DMatrix::from_row_slice(1, 7, ja.as_slice())),
                        (*b, DMatrix::from_row_slice(1, 7, jb.as_slice())),
                    ],
                })
            }
            Factor::AnchorRange { var, anchor, range, lever_arm, .. } => {
                let p = poses[*var].transform_point(lever_arm);
                let r = range_residual_points(&p, anchor, *range)?;
                let u = (p - anchor).normalize();
                let j: RowSVector<f64, 7> = -(u.transpose() * antenna_position_jacobian(&poses[*var], lever_arm));
                Ok(Linearized {
                    residual: DVector::from_element(1, r),
                    information,
                    blocks: vec![(*var, DMatrix::from_row_slice(1, 7, j.as_slice()))],
                })
            }
        }
    }
}

fn to_dvec(v: &Vector7) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

fn to_dmat(m: &Matrix7) -> DMatrix<f64> {
    DMatrix::from_column_slice(7, 7, m.as_slice())
}

/// Central finite-difference Jacobian blocks of a factor's residual, using
/// the same right-perturbation convention as [`Factor::linearize`].
pub fn numerical_jacobian(
    factor: &Factor,
    poses: &[Sim3Pose],
    step: f64,
) -> Result<Vec<(usize, DMatrix<f64>)>, MeasurementError> {
    let dim = factor.dim();
    let mut blocks = Vec::new();
    for var in factor.variables() {
        let mut block = DMatrix::zeros(dim, 7);
        for c in 0..7 {
            let mut delta = Vector7::zeros();
            delta[c] = step;
            let mut plus = poses.to_vec();
            plus[var] = poses[var].retract(&Twist7(delta));
            let mut minus = poses.to_vec();
            minus[var] = poses[var].retract(&Twist7(-delta));
            let diff = (factor.residual(&plus)? - factor.residual(&minus)?) / (2.0 * step);
            block.set_column(c, &diff);
        }
        blocks.push((var, block));
    }
    Ok(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim3::so3_exp;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut impl Rng) -> Sim3Pose {
        let w = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let t = Vector3::from_fn(|_, _| rng.random_range(-20.0..20.0));
        Sim3Pose::new(so3_exp(&w), t, rng.random_range(0.5..2.0)).unwrap()
    }

    fn random_twist(rng: &mut impl Rng, scale: f64) -> Twist7 {
        Twist7(Vector7::from_fn(|_, _| rng.random_range(-scale..scale)))
    }

    fn at(p: [f64; 3]) -> Sim3Pose {
        Sim3Pose::from_translation(Vector3::from(p))
    }

    #[test]
    fn range_residual_examples() {
        let a = at([0.0, 0.0, 0.0]);
        let b = at([3.0, 4.0, 0.0]);
        assert_eq!(range_residual(&a, &b, 5.0).unwrap(), 0.0);
        assert!((range_residual(&a, &b, 5.2).unwrap() - 0.2).abs() < 1e-15);
        assert!(matches!(
            range_residual(&a, &a, 1.0),
            Err(MeasurementError::CoincidentPositions { .. })
        ));
    }

    #[test]
    fn range_residual_matches_transform_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let z = rng.random_range(0.0..50.0);
            let pa = a.transform_point(&Vector3::zeros());
            let pb = b.transform_point(&Vector3::zeros());
            let expected = z - (pa - pb).norm();
            assert!((range_residual(&a, &b, z).unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn odometry_residual_zero_at_true_motion() {
        let i = Sim3Pose::identity();
        assert_eq!(odometry_residual(&i, &i, &i).unwrap().0, Vector7::zeros());
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let si = random_pose(&mut rng);
            let sj = random_pose(&mut rng);
            let z = sj.between(&si);
            assert!(odometry_residual(&si, &sj, &z).unwrap().norm() < 1e-10);
        }
    }

    #[test]
    fn odometry_residual_recovers_injected_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let si = random_pose(&mut rng);
            let sj = random_pose(&mut rng);
            let xi = random_twist(&mut rng, 0.05);
            let z = Sim3Pose::exp(&xi).compose(&sj.between(&si));
            let e = odometry_residual(&si, &sj, &z).unwrap();
            assert!((e.0 - xi.0).norm() < 1e-9);
        }
    }

    #[test]
    fn prior_residual_sign_convention() {
        let p = Sim3Pose::identity();
        assert_eq!(prior_residual(&p, &p).unwrap().0, Vector7::zeros());

        let xi = Twist7::new(Vector3::new(0.01, -0.02, 0.03), Vector3::new(0.1, 0.2, -0.1), 0.02);
        let e = prior_residual(&p.retract(&xi), &p).unwrap();
        assert!((e.0 + xi.0).norm() < 1e-12);

        let two = Sim3Pose::new(nalgebra::Rotation3::identity(), Vector3::zeros(), 2.0).unwrap();
        let e = prior_residual(&two, &Sim3Pose::identity()).unwrap();
        assert!((e.log_scale() + 2f64.ln()).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let prior = random_pose(&mut rng);
        let xi = random_twist(&mut rng, 1e-4);
        let e = prior_residual(&prior.retract(&xi), &prior).unwrap();
        assert!((e.0 + prior.adjoint() * xi.0).norm() < 1e-7);
    }

    #[test]
    fn whiten_examples() {
        let r = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let (_, cost) = whiten(&r, &DMatrix::identity(3, 3)).unwrap();
        assert!((cost - r.norm_squared()).abs() < 1e-15);

        let (_, cost) = whiten(&DVector::from_element(1, 0.2), &DMatrix::from_element(1, 1, 25.0)).unwrap();
        assert!((cost - 1.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let l = DMatrix::from_fn(4, 4, |i, j| if i >= j { rng.random_range(0.1..1.0) } else { 0.0 });
        let w = &l * l.transpose();
        let r = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
        let (_, cost) = whiten(&r, &w).unwrap();
        let expected = (l.transpose() * &r).norm_squared();
        assert!((cost - expected).abs() < 1e-12);

        let not_spd = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert_eq!(
            whiten(&DVector::zeros(2), &not_spd).unwrap_err(),
            MeasurementError::NonSpdInformation
        );
    }

    #[test]
    fn message_invariants_enforced() {
        assert!(InterRangeMsg::new(1, 1, 0.0, 1.0, 0.1).is_err());
        assert!(InterRangeMsg::new(1, 2, 0.0, -1.0, 0.1).is_err());
        assert!(InterRangeMsg::new(1, 2, 0.0, 1.0, 0.0).is_err());
        let m = InterRangeMsg::new(3, 1, 0.0, 1.0, 0.1).unwrap();
        assert_eq!((m.agent_a, m.agent_b), (1, 3));
        assert!(AnchorRangeMsg::new(1, 0, 0.0, 1.0, -0.1).is_err());
        assert!(OdometryEdge::new(0, 1.0, 1.0, Sim3Pose::identity(), Matrix7::identity()).is_err());
        assert!(PriorFactor::new(0, 0.0, Sim3Pose::identity(), -Matrix7::identity()).is_err());
        let mut asym = Matrix7::identity();
        asym[(0, 1)] = 0.5;
        assert!(KeyframeMsg::new(0, 0.0, Sim3Pose::identity(), asym).is_err());
    }

    fn check_against_fd(factor: &Factor, poses: &[Sim3Pose]) -> f64 {
        let analytic = factor.linearize(poses).unwrap().blocks;
        let numeric = numerical_jacobian(factor, poses, 1e-6).unwrap();
        let mut worst: f64 = 0.0;
        for ((va, ja), (vn, jn)) in analytic.iter().zip(&numeric) {
            assert_eq!(va, vn);
            for (x, y) in ja.iter().zip(jn.iter()) {
                worst = worst.max((x - y).abs() / y.abs().max(1e-8).max(1.0));
            }
        }
        worst
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..30 {
            let poses = vec![random_pose(&mut rng), random_pose(&mut rng)];
            let info = Matrix7::identity();
            let z = Sim3Pose::exp(&random_twist(&mut rng, 0.3)).compose(&poses[1].between(&poses[0]));
            let lever = Vector3::from_fn(|_, _| rng.random_range(-0.5..0.5));
            let factors = [
                Factor::Prior { var: 0, prior: random_pose(&mut rng), information: info },
                Factor::Odometry { from: 0, to: 1, measurement: z, information: info },
                Factor::InterRange { a: 0, b: 1, range: 10.0, information: 1.0, lever_arm: lever },
                Factor::AnchorRange {
                    var: 1,
                    anchor: Vector3::new(1.0, 2.0, 3.0),
                    range: 4.0,
                    information: 1.0,
                    lever_arm: Vector3::zeros(),
                },
            ];
            for f in &factors {
                if f.residual(&poses).is_err() {
                    continue;
                }
                let err = check_against_fd(f, &poses);
                assert!(err < 1e-5, "{:?}: {err}", f.kind());
            }
        }
    }

    #[test]
    fn anchor_range_has_no_rotational_or_scale_sensitivity() {
        let pose = Sim3Pose::new(so3_exp(&Vector3::new(0.2, 0.1, -0.3)), Vector3::new(5.0, 1.0, 0.0), 1.5)
            .unwrap();
        let f = Factor::AnchorRange {
            var: 0,
            anchor: Vector3::zeros(),
            range: 7.0,
            information: 1.0,
            lever_arm: Vector3::zeros(),
        };
        let numeric = numerical_jacobian(&f, &[pose], 1e-6).unwrap();
        let block = &numeric[0].1;
        for c in [0, 1, 2, 6] {
            assert!(block[(0, c)].abs() < 1e-8);
        }
        let analytic = f.linearize(&[pose]).unwrap();
        // translational block is −uᵀ s R
        let u = pose.position().normalize();
        let expected = -(u.transpose() * pose.rotation().matrix() * pose.scale());
        for c in 0..3 {
            assert!((analytic.blocks[0].1[(0, 3 + c)] - expected[c]).abs() < 1e-12);
        }
    }
}
