//! 3-D/6-D building blocks shared by every other module.
//!
//! Six-vectors are ordered `[linear; angular]` for twists and `[force; torque]`
//! for wrenches, both expressed in a body frame unless stated otherwise.

use nalgebra::{Matrix3, Matrix6, Rotation3, UnitQuaternion, Vector3, Vector6};

use crate::error::{EmuError, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Mat6 = Matrix6<f64>;
/// Generalized velocity `(v, ω)`.
pub type Twist6 = Vector6<f64>;
/// Generalized force `(f, n)`.
pub type Wrench6 = Vector6<f64>;
pub type RotationMatrix = Rotation3<f64>;

/// Standard gravitational acceleration used throughout (m/s²).
pub const GRAVITY: f64 = 9.81;

/// Orthonormality tolerance for freshly constructed rotations.
pub const ROTATION_TOL: f64 = 1e-10;
/// Looser tolerance for rotations produced by long integrations.
pub const ROTATION_TOL_INTEGRATED: f64 = 1e-8;

pub fn skew(c: &Vec3) -> Mat3 {
    Mat3::new(0.0, -c.z, c.y, c.z, 0.0, -c.x, -c.y, c.x, 0.0)
}

pub fn six(top: &Vec3, bottom: &Vec3) -> Vector6<f64> {
    Vector6::new(top.x, top.y, top.z, bottom.x, bottom.y, bottom.z)
}

pub fn top(v: &Vector6<f64>) -> Vec3 {
    Vec3::new(v[0], v[1], v[2])
}

pub fn bottom(v: &Vector6<f64>) -> Vec3 {
    Vec3::new(v[3], v[4], v[5])
}

pub fn block_diag(a: &Mat3, b: &Mat3) -> Mat6 {
    let mut m = Mat6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(a);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(b);
    m
}

/// Wrench transformation from the sensor frame {S} to the payload CM frame {C}
/// for a CM located at `c` relative to the sensor origin.
pub fn sensor_transform(c: &Vec3) -> Mat6 {
    let mut t = Mat6::identity();
    t.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-skew(c)));
    t
}

pub fn sensor_transform_inverse(c: &Vec3) -> Mat6 {
    let mut t = Mat6::identity();
    t.fixed_view_mut::<3, 3>(3, 0).copy_from(&skew(c));
    t
}

/// Applies `T(c)` to a wrench without forming the 6×6 matrix.
pub fn transform_wrench(c: &Vec3, w: &Wrench6) -> Wrench6 {
    let f = top(w);
    six(&f, &(bottom(w) - c.cross(&f)))
}

pub fn inverse_transform_wrench(c: &Vec3, w: &Wrench6) -> Wrench6 {
    let f = top(w);
    six(&f, &(bottom(w) + c.cross(&f)))
}

/// Validates an arbitrary 3×3 matrix as a proper rotation.
pub fn rotation_from_matrix(m: &Mat3) -> Result<RotationMatrix> {
    let dev = orthonormality_error(m);
    if dev > ROTATION_TOL || !m.iter().all(|x| x.is_finite()) {
        return Err(EmuError::InvalidRotation(dev));
    }
    Ok(RotationMatrix::from_matrix_unchecked(*m))
}

/// `max(|RᵀR − I|, |det R − 1|)`.
pub fn orthonormality_error(m: &Mat3) -> f64 {
    let ortho = (m.transpose() * m - Mat3::identity()).abs().max();
    ortho.max((m.determinant() - 1.0).abs())
}

pub fn quaternion_from_rotation(r: &RotationMatrix) -> UnitQuaternion<f64> {
    UnitQuaternion::from_rotation_matrix(r)
}

pub fn is_symmetric(m: &Mat3, tol: f64) -> bool {
    (m - m.transpose()).abs().max() <= tol * m.abs().max().max(1.0)
}

/// Generalized rigid-body inertia `diag{m I, I_C}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inertia6 {
    mass: f64,
    inertia: Mat3,
}

impl Inertia6 {
    pub fn new(mass: f64, inertia: Mat3) -> Result<Self> {
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(EmuError::NonPositiveMass(mass));
        }
        if !inertia.iter().all(|x| x.is_finite()) {
            return Err(EmuError::NonSpdInertia("non-finite entry".into()));
        }
        if !is_symmetric(&inertia, ROTATION_TOL) {
            return Err(EmuError::NonSpdInertia("not symmetric".into()));
        }
        let eig = inertia.symmetric_eigenvalues();
        if eig.iter().any(|&l| l <= 0.0) {
            return Err(EmuError::NonSpdInertia(format!(
                "eigenvalues {:?}",
                eig.as_slice()
            )));
        }
        // Principal moments of a physical body satisfy the triangle inequality.
        let (a, b, c) = (eig[0], eig[1], eig[2]);
        let slack = ROTATION_TOL * (a + b + c);
        if a + b < c - slack || b + c < a - slack || a + c < b - slack {
            return Err(EmuError::NonSpdInertia(format!(
                "principal moments {a}, {b}, {c} violate the triangle inequality"
            )));
        }
        Ok(Self { mass, inertia })
    }

    pub fn from_diagonal(mass: f64, diag: [f64; 3]) -> Result<Self> {
        Self::new(mass, Mat3::from_diagonal(&Vec3::from(diag)))
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn inertia(&self) -> &Mat3 {
        &self.inertia
    }

    pub fn matrix(&self) -> Mat6 {
        block_diag(&(Mat3::identity() * self.mass), &self.inertia)
    }

    pub fn inverse_matrix(&self) -> Mat6 {
        let inv = self
            .inertia
            .cholesky()
            .expect("validated SPD inertia")
            .inverse();
        block_diag(&(Mat3::identity() / self.mass), &inv)
    }

    /// `M ν` without forming the 6×6 matrix.
    pub fn apply(&self, nu: &Twist6) -> Wrench6 {
        six(&(top(nu) * self.mass), &(self.inertia * bottom(nu)))
    }

    /// Largest eigenvalue of the 6×6 generalized inertia.
    pub fn lambda_max(&self) -> f64 {
        self.inertia.symmetric_eigenvalues().max().max(self.mass)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.mass * factor, self.inertia * factor)
    }
}

/// `block_inertia(m, I_C)` as a free function.
pub fn block_inertia(mass: f64, inertia: Mat3) -> Result<Inertia6> {
    Inertia6::new(mass, inertia)
}

pub fn rot_x(a: f64) -> RotationMatrix {
    RotationMatrix::from_axis_angle(&Vec3::x_axis(), a)
}

pub fn rot_y(a: f64) -> RotationMatrix {
    RotationMatrix::from_axis_angle(&Vec3::y_axis(), a)
}

pub fn rot_z(a: f64) -> RotationMatrix {
    RotationMatrix::from_axis_angle(&Vec3::z_axis(), a)
}

/// Spectral norm of an arbitrary dense matrix.
pub fn spectral_norm<R, C, S>(m: &nalgebra::Matrix<f64, R, C, S>) -> f64
where
    R: nalgebra::Dim,
    C: nalgebra::Dim,
    S: nalgebra::RawStorage<f64, R, C>,
{
    let d = nalgebra::DMatrix::from_iterator(m.nrows(), m.ncols(), m.iter().copied());
    d.singular_values().max()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn skew_zero_and_expansion() {
        assert_eq!(skew(&Vec3::zeros()), Mat3::zeros());
        let s = skew(&Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(s, Mat3::new(0.0, -3.0, 2.0, 3.0, 0.0, -1.0, -2.0, 1.0, 0.0));
        let c = Vec3::new(4.0, -1.0, 2.0);
        assert_eq!(skew(&c) * c, Vec3::zeros());
    }

    #[test]
    fn sensor_transform_cases() {
        assert_eq!(sensor_transform(&Vec3::zeros()), Mat6::identity());
        let c = Vec3::new(0.1, 0.0, 0.05);
        assert_relative_eq!(
            sensor_transform(&c) * sensor_transform(&(-c)),
            Mat6::identity(),
            epsilon = 1e-15
        );
        // n' = −c×f with c = 0.2 ẑ and f = 10 x̂ is (0, −2, 0).
        let c = Vec3::new(0.0, 0.0, 0.2);
        let w = Wrench6::new(10.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let out = sensor_transform(&c) * w;
        assert_relative_eq!(
            out,
            Wrench6::new(10.0, 0.0, 0.0, 0.0, -2.0, 0.0),
            epsilon = 1e-15
        );
        assert_eq!(transform_wrench(&c, &w), out);
        assert_eq!(
            sensor_transform_inverse(&c),
            sensor_transform(&c).try_inverse().unwrap()
        );
    }

    #[test]
    fn block_inertia_cases() {
        let b = block_inertia(1.0, Mat3::identity()).unwrap();
        assert_eq!(b.matrix(), Mat6::identity());
        let b = Inertia6::from_diagonal(2.0, [1.0, 2.0, 3.0]).unwrap();
        assert_eq!(
            b.matrix(),
            Mat6::from_diagonal(&Vector6::new(2.0, 2.0, 2.0, 1.0, 2.0, 3.0))
        );
        assert!(matches!(
            block_inertia(-1.0, Mat3::identity()),
            Err(EmuError::NonPositiveMass(_))
        ));
        assert!(matches!(
            Inertia6::from_diagonal(1.0, [1.0, -2.0, 3.0]),
            Err(EmuError::NonSpdInertia(_))
        ));
        assert!(matches!(
            Inertia6::from_diagonal(1.0, [1.0, 1.0, 3.0]),
            Err(EmuError::NonSpdInertia(_))
        ));
        let inv = b.inverse_matrix() * b.matrix();
        assert_relative_eq!(inv, Mat6::identity(), epsilon = 1e-14);
    }

    #[test]
    fn rotation_validation() {
        assert!(rotation_from_matrix(&rot_z(0.3).into_inner()).is_ok());
        assert!(rotation_from_matrix(&(Mat3::identity() * 1.001)).is_err());
        let reflect = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(rotation_from_matrix(&reflect).is_err());
    }

    fn vec3() -> impl Strategy<Value = Vec3> {
        (-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64).prop_map(|(a, b, c)| Vec3::new(a, b, c))
    }

    proptest! {
        #[test]
        fn skew_is_cross_and_anticommutes(a in vec3(), b in vec3()) {
            prop_assert!((skew(&a) * b - a.cross(&b)).norm() < 1e-12);
            prop_assert!((skew(&a) * b + skew(&b) * a).norm() < 1e-12);
        }

        #[test]
        fn sensor_transform_unit_determinant(c in vec3()) {
            prop_assert!((sensor_transform(&c).determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn renormalized_rotation_composition_stays_orthonormal() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut q = UnitQuaternion::identity();
        for _ in 0..1_000_000 {
            let axis = nalgebra::Unit::new_normalize(Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0) + 1e-3,
            ));
            let step = UnitQuaternion::from_axis_angle(&axis, rng.random_range(-0.1..0.1));
            q = UnitQuaternion::new_normalize((q * step).into_inner());
        }
        let r = q.to_rotation_matrix();
        assert!(orthonormality_error(r.matrix()) < ROTATION_TOL_INTEGRATED);
    }
}
