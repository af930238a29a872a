//! Linear bicycle-model lateral dynamics in lane-relative error
//! coordinates, with a fixed-step RK4 integrator.
//!
//! The state is x = [e_y, de_y/dt, e_psi, de_psi/dt] and the dynamics are
//! dx/dt = A x + B delta + E dpsi_l/dt. Two A-matrix conventions are
//! available: `Paper` reproduces the printed matrices verbatim (including
//! the summed-moment term in the lateral row), `Standard` uses the common
//! reference form where that term carries the axle-moment difference.
//! Neither is silently corrected; the convention is an explicit input.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bicycle-model parameters. Defaults are the simulation parameter set
/// used throughout: C_af = C_ar = 80 kN/rad, l_f = 1.43 m, l_r = 1.47 m,
/// M = 1000 kg, I_z = 3344 kg m^2, w_v = 1.9 m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleParams {
    /// front cornering stiffness (N/rad)
    pub c_alpha_f: f64,
    /// rear cornering stiffness (N/rad)
    pub c_alpha_r: f64,
    /// CG to front axle (m)
    pub l_f: f64,
    /// CG to rear axle (m)
    pub l_r: f64,
    /// total mass (kg)
    pub mass: f64,
    /// yaw inertia (kg m^2)
    pub i_z: f64,
    /// vehicle width (m)
    pub w_v: f64,
    /// lateral marker distance from the parameter table; accepted in
    /// profiles for completeness but consumed by no equation
    pub d_y: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams {
            c_alpha_f: 80_000.0,
            c_alpha_r: 80_000.0,
            l_f: 1.43,
            l_r: 1.47,
            mass: 1000.0,
            i_z: 3344.0,
            w_v: 1.9,
            d_y: 0.5,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("c_alpha_f", self.c_alpha_f),
            ("c_alpha_r", self.c_alpha_r),
            ("l_f", self.l_f),
            ("l_r", self.l_r),
            ("mass", self.mass),
            ("i_z", self.i_z),
            ("w_v", self.w_v),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParams {
                    reason: format!("vehicle parameter {name} = {v} must be positive"),
                });
            }
        }
        Ok(())
    }
}

/// Which printed form of the A matrix to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MatrixConvention {
    /// The matrices exactly as printed (default).
    #[default]
    Paper,
    /// The common bicycle-model reference form; differs only in the
    /// e_psi_dot coefficient of the lateral acceleration row.
    Standard,
}

impl std::str::FromStr for MatrixConvention {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "paper" => Ok(MatrixConvention::Paper),
            "standard" => Ok(MatrixConvention::Standard),
            other => Err(format!("unknown matrix convention `{other}`")),
        }
    }
}

/// Lane-relative error state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub e_y: f64,
    pub e_y_dot: f64,
    pub e_psi: f64,
    pub e_psi_dot: f64,
}

impl VehicleState {
    pub fn zero() -> Self {
        VehicleState {
            e_y: 0.0,
            e_y_dot: 0.0,
            e_psi: 0.0,
            e_psi_dot: 0.0,
        }
    }

    pub fn to_vector(self) -> Vector4<f64> {
        Vector4::new(self.e_y, self.e_y_dot, self.e_psi, self.e_psi_dot)
    }

    pub fn from_vector(v: Vector4<f64>) -> Self {
        VehicleState {
            e_y: v[0],
            e_y_dot: v[1],
            e_psi: v[2],
            e_psi_dot: v[3],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.e_y.is_finite()
            && self.e_y_dot.is_finite()
            && self.e_psi.is_finite()
            && self.e_psi_dot.is_finite()
    }
}

/// State-space matrices at a frozen longitudinal speed.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMatrices {
    pub a: Matrix4<f64>,
    pub b: Vector4<f64>,
    pub e: Vector4<f64>,
    pub v_x: f64,
    pub convention: MatrixConvention,
}

/// Speed below which the linear tire model is not meaningful.
pub const V_X_FLOOR: f64 = 0.5;

/// Populates A, B, E at longitudinal speed `v_x` (m/s).
pub fn build_matrices(
    params: &VehicleParams,
    v_x: f64,
    convention: MatrixConvention,
) -> Result<StateMatrices> {
    params.validate()?;
    if !(v_x.is_finite() && v_x > V_X_FLOOR) {
        return Err(Error::SpeedBelowFloor { v_x });
    }
    let cf = params.c_alpha_f;
    let cr = params.c_alpha_r;
    let lf = params.l_f;
    let lr = params.l_r;
    let m = params.mass;
    let iz = params.i_z;

    let a12 = -(2.0 * cf + 2.0 * cr) / (m * v_x);
    let a13 = (2.0 * cf + 2.0 * cr) / m;
    let a14 = match convention {
        MatrixConvention::Paper => -(2.0 * cf * lf + 2.0 * cr * lr) / (m * v_x),
        MatrixConvention::Standard => -(2.0 * cf * lf - 2.0 * cr * lr) / (m * v_x),
    };
    let a42 = -(2.0 * cf * lf - 2.0 * cr * lr) / (iz * v_x);
    let a43 = (2.0 * cf * lf - 2.0 * cr * lr) / iz;
    let a44 = -(2.0 * cf * lf * lf + 2.0 * cr * lr * lr) / (iz * v_x);

    let a = Matrix4::new(
        0.0, 1.0, 0.0, 0.0, //
        0.0, a12, a13, a14, //
        0.0, 0.0, 0.0, 1.0, //
        0.0, a42, a43, a44,
    );
    let b = Vector4::new(0.0, 2.0 * cf / m, 0.0, 2.0 * cf * lf / iz);
    let e = Vector4::new(
        0.0,
        -(2.0 * cf * lf - 2.0 * cr * lr) / (m * v_x) - v_x,
        0.0,
        -(2.0 * cf * lf * lf + 2.0 * cr * lr * lr) / (iz * v_x),
    );
    Ok(StateMatrices {
        a,
        b,
        e,
        v_x,
        convention,
    })
}

/// One classical RK4 step of dx/dt = A x + u with u held constant.
pub fn rk4_affine(a: &Matrix4<f64>, u: &Vector4<f64>, x: &Vector4<f64>, dt: f64) -> Vector4<f64> {
    let k1 = a * x + u;
    let k2 = a * (x + 0.5 * dt * k1) + u;
    let k3 = a * (x + 0.5 * dt * k2) + u;
    let k4 = a * (x + dt * k3) + u;
    x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Integrates one step with steering and lane-heading-rate inputs held
/// constant (zero-order hold).
pub fn step(
    state: &VehicleState,
    matrices: &StateMatrices,
    delta: f64,
    psi_l_dot: f64,
    dt: f64,
) -> Result<VehicleState> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidParams {
            reason: format!("step size {dt} must be positive"),
        });
    }
    if !state.is_finite() || !delta.is_finite() || !psi_l_dot.is_finite() {
        return Err(Error::InvalidParams {
            reason: "non-finite state or input".into(),
        });
    }
    let u = matrices.b * delta + matrices.e * psi_l_dot;
    Ok(VehicleState::from_vector(rk4_affine(
        &matrices.a,
        &u,
        &state.to_vector(),
        dt,
    )))
}
