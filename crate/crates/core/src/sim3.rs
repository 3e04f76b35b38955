//! Lie-group machinery for SO(3), SE(3) and Sim(3).
//!
//! A [`Sim3Pose`] is stored as the triple `(R, t, s)` and corresponds to the
//! 4×4 matrix
//!
//! ```text
//! [ R   t  ]
//! [ 0  1/s ]
//! ```
//!
//! Every group law here (composition, inverse, point action) is the 4×4
//! matrix product of that form converted back to a triple. The point action
//! is the homogeneous product followed by dehomogenization, so a point `p`
//! maps to `s (R p + t)` and the position of a pose is `s t`.
//!
//! Tangent coordinates ([`Twist7`]) are ordered `(ω, v, λ)`: rotation,
//! translation, log-scale. The corresponding Lie-algebra element is
//!
//! ```text
//! [ ω^   v ]
//! [ 0   -λ ]
//! ```
//!
//! so that `exp((0, 0, λ)) = (I, 0, e^λ)`.

use nalgebra::{Matrix3, Matrix4, Rotation3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vector7 = SVector<f64, 7>;
pub type Matrix7 = SMatrix<f64, 7, 7>;

/// Rotations whose angle is at or beyond this bound are outside the principal
/// branch of the logarithm.
pub const MAX_LOG_ANGLE: f64 = std::f64::consts::PI - 1e-6;

/// Orthonormality drift above which compositions re-project onto SO(3).
const RENORMALIZE_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum Sim3Error {
    #[error("rotation angle {angle} rad is outside the principal branch of the logarithm")]
    AngleNearPi { angle: f64 },
    #[error("scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("matrix is not a valid Sim(3) element: {0}")]
    InvalidMatrix(&'static str),
}

/// Skew-symmetric matrix `w^` with `w^ x = w × x`.
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Inverse of [`hat`] for the antisymmetric part of `m`.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Frobenius distance of `RᵀR` from the identity.
pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).norm()
}

/// Nearest rotation in the Frobenius sense (polar projection via SVD).
pub fn project_to_so3(m: &Matrix3<f64>) -> Rotation3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    Rotation3::from_matrix_unchecked(r)
}

fn renormalized(r: Matrix3<f64>) -> Rotation3<f64> {
    if orthonormality_error(&r) > RENORMALIZE_THRESHOLD {
        project_to_so3(&r)
    } else {
        Rotation3::from_matrix_unchecked(r)
    }
}

/// Rodrigues' formula.
pub fn so3_exp(w: &Vector3<f64>) -> Rotation3<f64> {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let (a, b) = if theta < 1e-4 {
        (1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0, 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let k = hat(w);
    Rotation3::from_matrix_unchecked(Matrix3::identity() + k * a + k * k * b)
}

/// Principal-branch SO(3) logarithm.
pub fn so3_log(r: &Rotation3<f64>) -> Result<Vector3<f64>, Sim3Error> {
    let m = r.matrix();
    let cos = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let s = vee(m);
    let sin = s.norm();
    let theta = sin.atan2(cos);
    if theta >= MAX_LOG_ANGLE {
        return Err(Sim3Error::AngleNearPi { angle: theta });
    }
    if theta < 1e-4 {
        let t2 = theta * theta;
        Ok(s * (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0))
    } else {
        Ok(s * (theta / sin))
    }
}

/// Rotation angle of `r` in `[0, π]`.
pub fn rotation_angle(r: &Rotation3<f64>) -> f64 {
    let m = r.matrix();
    let cos = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    vee(m).norm().atan2(cos)
}

/// Rigid-body pose. `translation` may be up to scale for monocular odometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Se3Pose {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

impl Se3Pose {
    pub fn new(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(Rotation3::identity(), Vector3::zeros())
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn compose(&self, other: &Se3Pose) -> Se3Pose {
        Se3Pose::new(
            renormalized(self.rotation.matrix() * other.rotation.matrix()),
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Se3Pose {
        let r_inv = self.rotation.inverse();
        Se3Pose::new(r_inv, -(r_inv * self.translation))
    }
}

/// Minimal Sim(3) tangent coordinates ordered `(rotation, translation, log-scale)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Twist7(pub Vector7);

impl Twist7 {
    pub fn zero() -> Self {
        Self(Vector7::zeros())
    }

    pub fn new(rotation: Vector3<f64>, translation: Vector3<f64>, log_scale: f64) -> Self {
        let mut v = Vector7::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&rotation);
        v.fixed_rows_mut::<3>(3).copy_from(&translation);
        v[6] = log_scale;
        Self(v)
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self(Vector7::from_column_slice(s))
    }

    pub fn rotation(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3).into_owned()
    }

    pub fn log_scale(&self) -> f64 {
        self.0[6]
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// The 4×4 Lie-algebra element `[ω^ v; 0 -λ]`.
    pub fn to_algebra(&self) -> Matrix4<f64> {
        let mut m = Matrix4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&hat(&self.rotation()));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation());
        m[(3, 3)] = -self.log_scale();
        m
    }

    /// Matrix of the Lie bracket `ad_ξ`, i.e. `[ξ^, η^] = (ad_ξ η)^`.
    pub fn ad(&self) -> Matrix7 {
        let w = hat(&self.rotation());
        let v = self.translation();
        let lambda = self.log_scale();
        let mut m = Matrix7::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&w);
        m.fixed_view_mut::<3, 3>(3, 0).copy_from(&hat(&v));
        m.fixed_view_mut::<3, 3>(3, 3)
            .copy_from(&(w + Matrix3::identity() * lambda));
        m.fixed_view_mut::<3, 1>(3, 6).copy_from(&(-v));
        m
    }

    /// Right Jacobian `J_r(ξ) = Σ (-ad_ξ)^k / (k+1)!`, defined by
    /// `exp(ξ + δ) ≈ exp(ξ) exp(J_r δ)`.
    pub fn right_jacobian(&self) -> Matrix7 {
        let neg_ad = -self.ad();
        let mut sum = Matrix7::identity();
        let mut term = Matrix7::identity();
        for k in 1..40 {
            term = term * neg_ad / (k as f64 + 1.0);
            sum += term;
            if term.amax() < 1e-18 * sum.amax() {
                break;
            }
        }
        sum
    }

    /// `J_r(ξ)⁻¹`, so that `log(exp(ξ) exp(δ)) ≈ ξ + J_r⁻¹ δ`.
    pub fn right_jacobian_inverse(&self) -> Matrix7 {
        self.right_jacobian()
            .try_inverse()
            .expect("right Jacobian of a principal-branch twist is invertible")
    }
}

impl From<Vector7> for Twist7 {
    fn from(v: Vector7) -> Self {
        Self(v)
    }
}

/// `∫₀¹ τⁿ e^{λτ} dτ` for `n = 0..=max`.
fn exp_moments(lambda: f64, max: usize) -> Vec<f64> {
    let mut m = vec![0.0; max + 1];
    if lambda.abs() <= 4.0 {
        for (n, slot) in m.iter_mut().enumerate() {
            let mut term = 1.0;
            let mut sum = 0.0;
            for j in 0..80 {
                if j > 0 {
                    term *= lambda / j as f64;
                }
                let add = term / (n + j + 1) as f64;
                sum += add;
                if j > 4 && add.abs() < 1e-20 * sum.abs() {
                    break;
                }
            }
            *slot = sum;
        }
    } else {
        let e = lambda.exp();
        m[0] = (e - 1.0) / lambda;
        for n in 1..=max {
            m[n] = (e - n as f64 * m[n - 1]) / lambda;
        }
    }
    m
}

/// Coefficients `(c0, c1, c2)` with
/// `∫₀¹ e^{λτ} exp(τ ω^) dτ = c0 I + c1 ω^ + c2 ω^²`.
fn translation_coefficients(theta: f64, lambda: f64) -> (f64, f64, f64) {
    if theta < 0.1 {
        let m = exp_moments(lambda, 14);
        let t2 = theta * theta;
        let mut c1 = 0.0;
        let mut c2 = 0.0;
        let mut power = 1.0;
        let mut fact_odd = 1.0; // (2k+1)!
        let mut fact_even = 2.0; // (2k+2)!
        for k in 0..7 {
            if k > 0 {
                power *= -t2;
                fact_odd *= (2 * k) as f64 * (2 * k + 1) as f64;
                fact_even *= (2 * k + 1) as f64 * (2 * k + 2) as f64;
            }
            c1 += power * m[2 * k + 1] / fact_odd;
            c2 += power * m[2 * k + 2] / fact_even;
        }
        (m[0], c1, c2)
    } else {
        let c0 = exp_moments(lambda, 0)[0];
        let e = lambda.exp();
        let (sin, cos) = theta.sin_cos();
        let denom = lambda * lambda + theta * theta;
        let int_sin = (e * (lambda * sin - theta * cos) + theta) / denom;
        let int_cos = (e * (lambda * cos + theta * sin) - lambda) / denom;
        (c0, int_sin / theta, (c0 - int_cos) / (theta * theta))
    }
}

/// The matrix `V` with `t = V v` in `exp((ω, v, λ))`.
fn translation_jacobian(omega: &Vector3<f64>, lambda: f64) -> Matrix3<f64> {
    let theta = omega.norm();
    let (c0, c1, c2) = translation_coefficients(theta, lambda);
    let w = hat(omega);
    (Matrix3::identity() * c0 + w * c1 + w * w * c2) * (-lambda).exp()
}

/// Similarity transform stored as `(R, t, s)` with matrix form `[R t; 0 1/s]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sim3Pose {
    rotation: Rotation3<f64>,
    translation: Vector3<f64>,
    scale: f64,
}

impl Sim3Pose {
    pub fn new(
        rotation: Rotation3<f64>,
        translation: Vector3<f64>,
        scale: f64,
    ) -> Result<Self, Sim3Error> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Sim3Error::NonPositiveScale(scale));
        }
        Ok(Self { rotation, translation, scale })
    }

    pub fn identity() -> Self {
        Self { rotation: Rotation3::identity(), translation: Vector3::zeros(), scale: 1.0 }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self { translation: t, ..Self::identity() }
    }

    pub fn rotation(&self) -> &Rotation3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m[(3, 3)] = 1.0 / self.scale;
        m
    }

    /// Inverse of [`Sim3Pose::to_matrix`]. The rotation block is taken as-is.
    pub fn from_matrix(m: &Matrix4<f64>) -> Result<Self, Sim3Error> {
        if m[(3, 0)] != 0.0 || m[(3, 1)] != 0.0 || m[(3, 2)] != 0.0 {
            return Err(Sim3Error::InvalidMatrix("bottom row must be [0 0 0 1/s]"));
        }
        let inv_scale = m[(3, 3)];
        if !(inv_scale > 0.0) {
            return Err(Sim3Error::NonPositiveScale(1.0 / inv_scale));
        }
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        Self::new(
            Rotation3::from_matrix_unchecked(r),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
            1.0 / inv_scale,
        )
    }

    /// Matrix product `self · other`.
    pub fn compose(&self, other: &Sim3Pose) -> Sim3Pose {
        Sim3Pose {
            rotation: renormalized(self.rotation.matrix() * other.rotation.matrix()),
            translation: self.rotation * other.translation + self.translation / other.scale,
            scale: self.scale * other.scale,
        }
    }

    pub fn inverse(&self) -> Sim3Pose {
        let r_inv = self.rotation.inverse();
        Sim3Pose {
            rotation: r_inv,
            translation: -(r_inv * self.translation) * self.scale,
            scale: 1.0 / self.scale,
        }
    }

    /// `self · other⁻¹` without forming the inverse separately.
    pub fn between(&self, other: &Sim3Pose) -> Sim3Pose {
        self.compose(&other.inverse())
    }

    pub fn exp(xi: &Twist7) -> Sim3Pose {
        let omega = xi.rotation();
        let lambda = xi.log_scale();
        Sim3Pose {
            rotation: so3_exp(&omega),
            translation: translation_jacobian(&omega, lambda) * xi.translation(),
            scale: lambda.exp(),
        }
    }

    pub fn log(&self) -> Result<Twist7, Sim3Error> {
        let omega = so3_log(&self.rotation)?;
        let lambda = self.scale.ln();
        let v_mat = translation_jacobian(&omega, lambda);
        let v = v_mat
            .lu()
            .solve(&self.translation)
            .ok_or(Sim3Error::InvalidMatrix("singular translation Jacobian"))?;
        Ok(Twist7::new(omega, v, lambda))
    }

    /// `self · exp(xi)`, the update applied by the solver.
    pub fn retract(&self, xi: &Twist7) -> Sim3Pose {
        self.compose(&Sim3Pose::exp(xi))
    }

    /// Homogeneous action of the matrix form followed by dehomogenization.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        (self.rotation * p + self.translation) * self.scale
    }

    /// Position of the pose origin, `transform_point(self, 0) = s t`.
    pub fn position(&self) -> Vector3<f64> {
        self.translation * self.scale
    }

    /// Adjoint matrix with `exp(Ad ξ) = self · exp(ξ) · self⁻¹`.
    pub fn adjoint(&self) -> Matrix7 {
        let r = *self.rotation.matrix();
        let s = self.scale;
        let mut m = Matrix7::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m.fixed_view_mut::<3, 3>(3, 0).copy_from(&(hat(&self.translation) * r * s));
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(&(r * s));
        m.fixed_view_mut::<3, 1>(3, 6).copy_from(&(-self.translation * s));
        m[(6, 6)] = 1.0;
        m
    }

    /// Re-projects the rotation onto SO(3).
    pub fn renormalize(&self) -> Sim3Pose {
        Sim3Pose { rotation: project_to_so3(self.rotation.matrix()), ..*self }
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.matrix().iter().all(|x| x.is_finite())
            && self.translation.iter().all(|x| x.is_finite())
            && self.scale.is_finite()
    }
}

/// Lifts a local rigid pose into Sim(3): `diag(I, 1/s) · T`.
pub fn lift_se3(t: &Se3Pose, scale: f64) -> Result<Sim3Pose, Sim3Error> {
    Sim3Pose::new(t.rotation, t.translation, scale)
}
