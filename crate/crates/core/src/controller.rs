//! Preview-steering lane-departure correction.
//!
//! The control law is delta = K_y e_y + K_psi (e_psi + Delta_psi_l) where
//! Delta_psi_l is the lane-heading change accumulated over a preview time
//! T_lp, computed in closed form from the event's linear curvature model.
//! The intervention triggers when the lateral offset crosses a threshold;
//! left departures are handled by mirroring the lateral channel, running
//! the right-side law, and mirroring the result back.

use nalgebra::RowVector4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{fit_curvature, DepartureEvent, Side};
use crate::vehicle::{
    build_matrices, rk4_affine, MatrixConvention, VehicleParams, VehicleState,
};

/// Controller gains and geometry. Defaults are the simulation parameter
/// set: K_y = -0.005 rad/m, K_psi = -0.2, T_lp = 2 s, y_s = 0.2 m,
/// w_l = 3.6 m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerParams {
    pub k_y: f64,
    pub k_psi: f64,
    /// preview time (s)
    pub t_lp: f64,
    /// trigger threshold (m)
    pub y_s: f64,
    /// lane width (m)
    pub w_l: f64,
}

impl Default for ControllerParams {
    fn default() -> Self {
        ControllerParams {
            k_y: -0.005,
            k_psi: -0.2,
            t_lp: 2.0,
            y_s: 0.2,
            w_l: 3.6,
        }
    }
}

impl ControllerParams {
    pub fn validate(&self, vehicle: &VehicleParams) -> Result<()> {
        if !(self.t_lp.is_finite() && self.t_lp > 0.0) {
            return Err(Error::InvalidParams {
                reason: format!("preview time {} must be positive", self.t_lp),
            });
        }
        if !(self.y_s.is_finite() && self.y_s >= 0.0) {
            return Err(Error::InvalidParams {
                reason: format!("trigger threshold {} must be non-negative", self.y_s),
            });
        }
        if !(self.w_l.is_finite() && self.w_l > vehicle.w_v) {
            return Err(Error::InvalidParams {
                reason: format!(
                    "lane width {} must exceed vehicle width {}",
                    self.w_l, vehicle.w_v
                ),
            });
        }
        if !(self.k_y.is_finite() && self.k_psi.is_finite()) {
            return Err(Error::InvalidParams {
                reason: "gains must be finite".into(),
            });
        }
        Ok(())
    }
}

/// How the lateral error coordinate is anchored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OffsetConvention {
    /// e_y = y + (w_l - w_v) / 2, the printed initial-condition formula
    /// (default).
    #[default]
    Paper,
    /// e_y = y: zero error at lane center.
    Centered,
}

impl OffsetConvention {
    pub fn offset(self, ctrl: &ControllerParams, vehicle: &VehicleParams) -> f64 {
        match self {
            OffsetConvention::Paper => 0.5 * (ctrl.w_l - vehicle.w_v),
            OffsetConvention::Centered => 0.0,
        }
    }
}

impl std::str::FromStr for OffsetConvention {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "paper" => Ok(OffsetConvention::Paper),
            "centered" => Ok(OffsetConvention::Centered),
            other => Err(format!("unknown offset convention `{other}`")),
        }
    }
}

/// Simulation switches shared by the controller and evaluation layers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct SimOptions {
    pub matrix_convention: MatrixConvention,
    pub offset_convention: OffsetConvention,
    /// optional symmetric steering clamp (rad); the printed design has no
    /// actuator limit, so the default is off
    pub steer_limit: Option<f64>,
}

/// Lane-heading preview terms l(t) = [psi_l_dot, delta_psi_l].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreviewInputs {
    pub psi_l_dot: f64,
    pub delta_psi_l: f64,
}

/// Trigger test: right departures fire on y > y_s, left on -y > y_s
/// (strict inequalities).
pub fn check_trigger(y: f64, side: Side, y_s: f64) -> bool {
    match side {
        Side::Right => y > y_s,
        Side::Left => -y > y_s,
    }
}

/// Preview terms at event-clock time `t` for the linear curvature model
/// c(t) = delta_c / T * t + c0, with the longitudinal speed frozen at its
/// trigger value:
///
/// ```text
/// psi_l_dot(t)   = v_x c(t)
/// delta_psi_l(t) = A t + B,  A = delta_c T_lp v_x / T,
///                            B = delta_c T_lp^2 v_x / (2 T) + v_x c0 T_lp
/// ```
pub fn preview_inputs(
    t: f64,
    v_x_ts: f64,
    c0: f64,
    delta_c: f64,
    duration: f64,
    t_lp: f64,
) -> PreviewInputs {
    let psi_l_dot = v_x_ts * (delta_c / duration * t + c0);
    let a = delta_c * t_lp * v_x_ts / duration;
    let b = delta_c * t_lp * t_lp * v_x_ts / (2.0 * duration) + v_x_ts * c0 * t_lp;
    PreviewInputs {
        psi_l_dot,
        delta_psi_l: a * t + b,
    }
}

/// The feedback row F = [K_y, 0, K_psi, 0].
pub fn feedback_row(params: &ControllerParams) -> RowVector4<f64> {
    RowVector4::new(params.k_y, 0.0, params.k_psi, 0.0)
}

/// delta = F x + G delta_psi_l with G = K_psi.
pub fn control_law(state: &VehicleState, delta_psi_l: f64, params: &ControllerParams) -> f64 {
    let f = feedback_row(params);
    (f * state.to_vector())[0] + params.k_psi * delta_psi_l
}

/// Initial state at trigger time: e_y from the offset convention, its
/// rate from a finite difference of the event's lateral series, heading
/// error from the velocity triangle, and zero heading-error rate (the
/// event carries no curvature-rate information at the trigger).
///
/// Returns the state and whether a one-sided difference had to be used.
pub fn initial_conditions(
    event: &DepartureEvent,
    t_s: f64,
    w_l: f64,
    w_v: f64,
    offset: OffsetConvention,
) -> Result<(VehicleState, bool)> {
    let times = event.rel_times();
    let ts = event.ts();
    let idx = (t_s / ts).round() as isize;
    if idx < 0 || idx as usize >= event.len() || (t_s - times[idx as usize]).abs() > ts / 2.0 {
        return Err(Error::TriggerOutsideEvent { t_s });
    }
    let i = idx as usize;
    let ys = event.ys();
    let (v_y, one_sided) = if i == 0 {
        ((ys[1] - ys[0]) / ts, true)
    } else if i == event.len() - 1 {
        ((ys[i] - ys[i - 1]) / ts, true)
    } else {
        ((ys[i + 1] - ys[i - 1]) / (2.0 * ts), false)
    };
    let shift = match offset {
        OffsetConvention::Paper => 0.5 * (w_l - w_v),
        OffsetConvention::Centered => 0.0,
    };
    let v_x = event.vs()[i];
    Ok((
        VehicleState {
            e_y: ys[i] + shift,
            e_y_dot: v_y,
            e_psi: (v_y / v_x).atan(),
            e_psi_dot: 0.0,
        },
        one_sided,
    ))
}

/// A simulated controlled episode, in true-side coordinates.
#[derive(Debug, Clone)]
pub struct ControlledTrajectory {
    /// event-clock sample times from the trigger to the event end
    pub t: Vec<f64>,
    pub states: Vec<VehicleState>,
    /// steering command at each sample (rad)
    pub delta: Vec<f64>,
    pub trigger_index: usize,
    pub t_s: f64,
    pub v_x_ts: f64,
    pub side: Side,
    /// whether the episode was simulated on the mirrored channel
    pub mirrored: bool,
    pub one_sided_difference: bool,
}

impl ControlledTrajectory {
    pub fn e_y(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.e_y).collect()
    }
}

/// Outcome of running the controller over one event.
#[derive(Debug, Clone)]
pub enum ControlOutcome {
    Triggered(Box<ControlledTrajectory>),
    /// The event never crossed the threshold; the offset-mapped lateral
    /// series is returned for bookkeeping.
    NotTriggered { t: Vec<f64>, e_y: Vec<f64> },
}

/// Runs the closed loop from the first trigger sample to the event end.
///
/// The closed-loop system is dx/dt = (A + B F) x + [E, B G] l(t) with the
/// preview terms held constant over each sampling interval and the speed
/// frozen at its trigger value.
pub fn run_controlled(
    event: &DepartureEvent,
    vehicle: &VehicleParams,
    ctrl: &ControllerParams,
    options: &SimOptions,
) -> Result<ControlOutcome> {
    ctrl.validate(vehicle)?;
    let mirrored = event.side() == Side::Left;
    let work = if mirrored {
        event.mirrored()
    } else {
        event.clone()
    };
    let sign = if mirrored { -1.0 } else { 1.0 };

    let times = work.rel_times();
    let ys = work.ys();
    let trigger_index = match (0..work.len()).find(|&i| check_trigger(ys[i], Side::Right, ctrl.y_s))
    {
        Some(i) => i,
        None => {
            let shift = options.offset_convention.offset(ctrl, vehicle);
            return Ok(ControlOutcome::NotTriggered {
                t: times.clone(),
                e_y: ys.iter().map(|y| sign * (y + shift)).collect(),
            });
        }
    };

    let ts = work.ts();
    let duration = work.duration();
    let t_s = times[trigger_index];
    let v_x_ts = work.vs()[trigger_index];
    let (c0, delta_c) = fit_curvature(&work)?;
    let (x0, one_sided) = initial_conditions(
        &work,
        t_s,
        ctrl.w_l,
        vehicle.w_v,
        options.offset_convention,
    )?;

    let matrices = build_matrices(vehicle, v_x_ts, options.matrix_convention)?;
    let f = feedback_row(ctrl);
    let a_c = matrices.a + matrices.b * f;
    let g = ctrl.k_psi;

    let n_steps = work.len() - trigger_index;
    let mut t_out = Vec::with_capacity(n_steps);
    let mut states = Vec::with_capacity(n_steps);
    let mut deltas = Vec::with_capacity(n_steps);
    let mut x = x0.to_vector();
    for k in 0..n_steps {
        let t = times[trigger_index + k];
        let preview = preview_inputs(t, v_x_ts, c0, delta_c, duration, ctrl.t_lp);
        let state = VehicleState::from_vector(x);
        let delta_cmd = control_law(&state, preview.delta_psi_l, ctrl);
        let delta_cmd = match options.steer_limit {
            Some(lim) => delta_cmd.clamp(-lim, lim),
            None => delta_cmd,
        };
        t_out.push(t);
        states.push(VehicleState::from_vector(sign * x));
        deltas.push(sign * delta_cmd);
        if k + 1 < n_steps {
            x = match options.steer_limit {
                // saturation breaks linearity: hold the clamped command
                Some(_) => {
                    let u = matrices.b * delta_cmd + matrices.e * preview.psi_l_dot;
                    rk4_affine(&matrices.a, &u, &x, ts)
                }
                None => {
                    let u = matrices.e * preview.psi_l_dot + matrices.b * (g * preview.delta_psi_l);
                    rk4_affine(&a_c, &u, &x, ts)
                }
            };
        }
    }
    Ok(ControlOutcome::Triggered(Box::new(ControlledTrajectory {
        t: t_out,
        states,
        delta: deltas,
        trigger_index,
        t_s,
        v_x_ts,
        side: event.side(),
        mirrored,
        one_sided_difference: one_sided,
    })))
}
