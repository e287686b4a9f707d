//! Free-floating flight spacecraft models (rigid and flexible) and their
//! direct integration. These are the reference trajectories every emulation
//! run is judged against.

use nalgebra::{DMatrix, DVector, Quaternion, UnitQuaternion};

use crate::error::{EmuError, Result};
use crate::ode::rk4_step;
use crate::spatial::{bottom, six, top, Inertia6, Mat6, RotationMatrix, Twist6, Vec3, Wrench6};

#[derive(Debug, Clone, PartialEq)]
pub struct RigidSpacecraft {
    pub name: String,
    pub inertia: Inertia6,
}

impl RigidSpacecraft {
    pub fn new(name: impl Into<String>, inertia: Inertia6) -> Self {
        Self {
            name: name.into(),
            inertia,
        }
    }
}

/// Spacecraft with `n_ξ` lumped flexural modes attached to a rigid hub.
///
/// Equations of motion in partitioned form:
///
/// ```text
/// [M_s    M_sf] [ν̇]   [h_sr]   [F_ext]
/// [M_sfᵀ  M_f ] [ξ̈] + [h_sf] = [  0  ]
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct FlexibleSpacecraft {
    pub name: String,
    pub rigid: Inertia6,
    /// Flexural inertia, `n_ξ × n_ξ`.
    pub m_f: DMatrix<f64>,
    /// Rigid/flexural cross inertia, `6 × n_ξ`.
    pub m_sf: DMatrix<f64>,
    pub k_f: DMatrix<f64>,
    pub d_f: DMatrix<f64>,
}

impl FlexibleSpacecraft {
    pub fn new(
        name: impl Into<String>,
        rigid: Inertia6,
        m_f: DMatrix<f64>,
        m_sf: DMatrix<f64>,
        k_f: DMatrix<f64>,
        d_f: DMatrix<f64>,
    ) -> Result<Self> {
        let n = m_f.nrows();
        let shape_ok = m_f.ncols() == n
            && m_sf.nrows() == 6
            && m_sf.ncols() == n
            && k_f.shape() == (n, n)
            && d_f.shape() == (n, n);
        if !shape_ok {
            return Err(EmuError::InvalidScenario(format!(
                "flexible matrices have inconsistent shapes: M_f {:?}, M_sf {:?}, K_f {:?}, D_f {:?}",
                m_f.shape(),
                m_sf.shape(),
                k_f.shape(),
                d_f.shape()
            )));
        }
        let sc = Self {
            name: name.into(),
            rigid,
            m_f,
            m_sf,
            k_f,
            d_f,
        };
        if n > 0 {
            check_spd(&sc.m_f, "M_f")?;
            check_spd(&sc.k_f, "K_f")?;
            check_psd(&sc.d_f, "D_f")?;
            check_spd(&sc.mass_matrix(), "partitioned mass matrix")?;
        }
        Ok(sc)
    }

    /// A flexible model with no modes; behaves exactly like the rigid hub.
    pub fn rigid_only(name: impl Into<String>, rigid: Inertia6) -> Self {
        Self {
            name: name.into(),
            rigid,
            m_f: DMatrix::zeros(0, 0),
            m_sf: DMatrix::zeros(6, 0),
            k_f: DMatrix::zeros(0, 0),
            d_f: DMatrix::zeros(0, 0),
        }
    }

    pub fn n_modes(&self) -> usize {
        self.m_f.nrows()
    }

    pub fn mass_matrix(&self) -> DMatrix<f64> {
        let n = self.n_modes();
        let mut m = DMatrix::zeros(6 + n, 6 + n);
        m.view_mut((0, 0), (6, 6)).copy_from(&self.rigid.matrix());
        m.view_mut((0, 6), (6, n)).copy_from(&self.m_sf);
        m.view_mut((6, 0), (n, 6)).copy_from(&self.m_sf.transpose());
        m.view_mut((6, 6), (n, n)).copy_from(&self.m_f);
        m
    }

    /// Body-frame linear and angular momentum (about the hub CM).
    pub fn momentum(&self, nu: &Twist6, xi_dot: &DVector<f64>) -> Wrench6 {
        let coupling = &self.m_sf * xi_dot;
        self.rigid.apply(nu) + Wrench6::from_column_slice(coupling.as_slice())
    }

    /// Nonlinear vectors `(h_sr, h_sf)`.
    ///
    /// `h_sr` is the gyroscopic term of the quasi-coordinate equations derived
    /// from the kinetic energy `½ zᵀ M z`, `z = (ν, ξ̇)`: with body momenta
    /// `p = ∂T/∂v`, `l = ∂T/∂ω` it is `(ω × p, ω × l + v × p)`, reducing to the
    /// rigid gyric term when `M_sf = 0`. `h_sf = D_f ξ̇ + K_f ξ`.
    pub fn bias(&self, nu: &Twist6, flex: &FlexState) -> (Wrench6, DVector<f64>) {
        let mom = self.momentum(nu, &flex.xi_dot);
        let (v, w) = (top(nu), bottom(nu));
        let (p, l) = (top(&mom), bottom(&mom));
        let h_sr = six(&w.cross(&p), &(w.cross(&l) + v.cross(&p)));
        let h_sf = &self.d_f * &flex.xi_dot + &self.k_f * &flex.xi;
        (h_sr, h_sf)
    }

    /// Kinetic plus strain energy.
    pub fn energy(&self, nu: &Twist6, flex: &FlexState) -> f64 {
        let mut z = DVector::zeros(6 + self.n_modes());
        z.rows_mut(0, 6).copy_from(nu);
        z.rows_mut(6, self.n_modes()).copy_from(&flex.xi_dot);
        0.5 * z.dot(&(self.mass_matrix() * &z)) + 0.5 * flex.xi.dot(&(&self.k_f * &flex.xi))
    }

    /// Eigen-frequencies (rad/s) of the free-floating structure: the flexural
    /// stiffness acting against the hub-reduced modal inertia
    /// `M_f − M_sfᵀ M_s⁻¹ M_sf`.
    pub fn free_modal_frequencies(&self) -> Vec<f64> {
        let reduced = &self.m_f
            - self.m_sf.transpose()
                * DMatrix::from_column_slice(6, 6, self.rigid.inverse_matrix().as_slice())
                * &self.m_sf;
        generalized_frequencies(&reduced, &self.k_f)
    }

    /// Frequencies of the appendages with the hub held fixed,
    /// `eig(M_f⁻¹ K_f)`.
    pub fn clamped_modal_frequencies(&self) -> Vec<f64> {
        generalized_frequencies(&self.m_f, &self.k_f)
    }
}

fn generalized_frequencies(m: &DMatrix<f64>, k: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    // M = L Lᵀ, frequencies² = eig(L⁻¹ K L⁻ᵀ)
    let Some(chol) = m.clone().cholesky() else {
        return Vec::new();
    };
    let l_inv = chol
        .l()
        .try_inverse()
        .expect("cholesky factor is invertible");
    let sym = &l_inv * k * l_inv.transpose();
    let sym = (&sym + sym.transpose()) * 0.5;
    let mut f: Vec<f64> = sym
        .symmetric_eigenvalues()
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .collect();
    f.sort_by(|a, b| a.total_cmp(b));
    f
}

fn check_spd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    let sym_err = (m - m.transpose()).abs().max();
    if sym_err > 1e-10 * m.abs().max().max(1.0) {
        return Err(EmuError::SingularMassMatrix(format!("{what} is not symmetric")));
    }
    if m.clone().cholesky().is_none() {
        return Err(EmuError::SingularMassMatrix(format!(
            "{what} is not positive definite"
        )));
    }
    Ok(())
}

fn check_psd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    let sym_err = (m - m.transpose()).abs().max();
    if sym_err > 1e-10 * m.abs().max().max(1.0) {
        return Err(EmuError::InvalidScenario(format!("{what} is not symmetric")));
    }
    let min = m.clone().symmetric_eigenvalues().min();
    if min < -1e-12 * m.abs().max().max(1.0) {
        return Err(EmuError::InvalidScenario(format!(
            "{what} is not positive semi-definite"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlexState {
    pub xi: DVector<f64>,
    pub xi_dot: DVector<f64>,
}

impl FlexState {
    pub fn zeros(n: usize) -> Self {
        Self {
            xi: DVector::zeros(n),
            xi_dot: DVector::zeros(n),
        }
    }

    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }
}

/// Pose and body-frame twist of a rigid body. Attitude is carried as a unit
/// quaternion and renormalized after every step.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidBodyState {
    pub position: Vec3,
    pub attitude: UnitQuaternion<f64>,
    pub nu: Twist6,
}

impl RigidBodyState {
    pub fn at_rest() -> Self {
        Self {
            position: Vec3::zeros(),
            attitude: UnitQuaternion::identity(),
            nu: Twist6::zeros(),
        }
    }

    pub fn new(position: Vec3, attitude: &RotationMatrix, nu: Twist6) -> Self {
        Self {
            position,
            attitude: UnitQuaternion::from_rotation_matrix(attitude),
            nu,
        }
    }

    pub fn rotation(&self) -> RotationMatrix {
        self.attitude.to_rotation_matrix()
    }

    const LEN: usize = 13;

    fn pack(&self, out: &mut DVector<f64>) {
        out.rows_mut(0, 3).copy_from(&self.position);
        let q = self.attitude.quaternion();
        out[3] = q.w;
        out[4] = q.i;
        out[5] = q.j;
        out[6] = q.k;
        out.rows_mut(7, 6).copy_from(&self.nu);
    }

    fn unpack(x: &DVector<f64>) -> Self {
        let q = Quaternion::new(x[3], x[4], x[5], x[6]);
        Self {
            position: Vec3::new(x[0], x[1], x[2]),
            attitude: UnitQuaternion::new_normalize(q),
            nu: Twist6::from_column_slice(&x.as_slice()[7..13]),
        }
    }
}

/// Pose kinematics `ṗ = R v`, `q̇ = ½ q ⊗ (0, ω)` written into `out[0..7]`.
fn pose_rates(x: &DVector<f64>, nu: &Twist6, out: &mut DVector<f64>) {
    let q = Quaternion::new(x[3], x[4], x[5], x[6]);
    let unit = UnitQuaternion::new_normalize(q);
    let pdot = unit * top(nu);
    out.rows_mut(0, 3).copy_from(&pdot);
    let w = bottom(nu);
    let qdot = q * Quaternion::new(0.0, w.x, w.y, w.z) * 0.5;
    out[3] = qdot.w;
    out[4] = qdot.i;
    out[5] = qdot.j;
    out[6] = qdot.k;
}

/// Gyric term `h(ν) = (m ω×v, ω × I_C ω)`.
pub fn gyric_term(inertia: &Inertia6, nu: &Twist6) -> Wrench6 {
    let (v, w) = (top(nu), bottom(nu));
    six(
        &(w.cross(&v) * inertia.mass()),
        &w.cross(&(inertia.inertia() * w)),
    )
}

/// `ν̇ = M_s⁻¹ (F_ext − h_s(ν))`.
pub fn rigid_forward_dynamics(sc: &RigidSpacecraft, nu: &Twist6, f_ext: &Wrench6) -> Twist6 {
    let rhs = f_ext - gyric_term(&sc.inertia, nu);
    let f = top(&rhs) / sc.inertia.mass();
    let n = sc
        .inertia
        .inertia()
        .cholesky()
        .expect("validated SPD inertia")
        .solve(&bottom(&rhs));
    six(&f, &n)
}

/// Solves the partitioned equations for `(ν̇, ξ̈)`.
pub fn flexible_forward_dynamics(
    sc: &FlexibleSpacecraft,
    nu: &Twist6,
    flex: &FlexState,
    f_ext: &Wrench6,
) -> Result<(Twist6, DVector<f64>)> {
    let n = sc.n_modes();
    let (h_sr, h_sf) = sc.bias(nu, flex);
    let mut rhs = DVector::zeros(6 + n);
    rhs.rows_mut(0, 6).copy_from(&(f_ext - h_sr));
    rhs.rows_mut(6, n).copy_from(&(-h_sf));
    let chol = sc
        .mass_matrix()
        .cholesky()
        .ok_or_else(|| EmuError::SingularMassMatrix("partitioned mass matrix".into()))?;
    let acc = chol.solve(&rhs);
    Ok((
        Twist6::from_column_slice(&acc.as_slice()[..6]),
        acc.rows(6, n).into_owned(),
    ))
}

/// Advances pose and twist over `dt` under a constant body acceleration.
pub fn integrate_pose(state: &RigidBodyState, nu_dot: &Twist6, dt: f64) -> RigidBodyState {
    let mut x = DVector::zeros(RigidBodyState::LEN);
    state.pack(&mut x);
    let next = rk4_step(0.0, &x, dt, |_, y| {
        let mut d = DVector::zeros(RigidBodyState::LEN);
        let nu = Twist6::from_column_slice(&y.as_slice()[7..13]);
        pose_rates(y, &nu, &mut d);
        d.rows_mut(7, 6).copy_from(nu_dot);
        Ok(d)
    })
    .expect("infallible derivative");
    RigidBodyState::unpack(&next)
}

/// State of the reference (oracle) integration for either model.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleState {
    pub body: RigidBodyState,
    pub flex: FlexState,
}

/// One RK4 step of a free-floating spacecraft under a wrench held constant over
/// the step. A model without flexural modes integrates the rigid equations.
pub fn oracle_step(
    sc: &FlexibleSpacecraft,
    state: &OracleState,
    f_ext: &Wrench6,
    dt: f64,
) -> Result<OracleState> {
    let n = sc.n_modes();
    let len = RigidBodyState::LEN + 2 * n;
    let mut x = DVector::zeros(len);
    state.body.pack(&mut x);
    x.rows_mut(13, n).copy_from(&state.flex.xi);
    x.rows_mut(13 + n, n).copy_from(&state.flex.xi_dot);
    let rigid = RigidSpacecraft::new(sc.name.clone(), sc.rigid);
    let next = rk4_step(0.0, &x, dt, |_, y| {
        let mut d = DVector::zeros(len);
        let nu = Twist6::from_column_slice(&y.as_slice()[7..13]);
        pose_rates(y, &nu, &mut d);
        if n == 0 {
            d.rows_mut(7, 6)
                .copy_from(&rigid_forward_dynamics(&rigid, &nu, f_ext));
        } else {
            let flex = FlexState {
                xi: y.rows(13, n).into_owned(),
                xi_dot: y.rows(13 + n, n).into_owned(),
            };
            let (nu_dot, xi_ddot) = flexible_forward_dynamics(sc, &nu, &flex, f_ext)?;
            d.rows_mut(7, 6).copy_from(&nu_dot);
            d.rows_mut(13, n).copy_from(&flex.xi_dot);
            d.rows_mut(13 + n, n).copy_from(&xi_ddot);
        }
        Ok(d)
    })?;
    Ok(OracleState {
        body: RigidBodyState::unpack(&next),
        flex: FlexState {
            xi: next.rows(13, n).into_owned(),
            xi_dot: next.rows(13 + n, n).into_owned(),
        },
    })
}

/// Generalized inertia as a dense 6×6 (convenience for the flexible blocks).
pub fn dense6(m: &Mat6) -> DMatrix<f64> {
    DMatrix::from_column_slice(6, 6, m.as_slice())
}
