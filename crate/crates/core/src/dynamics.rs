//! Point-mass three-degree-of-freedom aircraft model.
//!
//! State is position, speed, flight-path angle and heading; controls are
//! tangential overload `nx`, normal overload `nz` and roll angle `mu`.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Gravitational acceleration shared by aircraft and missile models (m/s²).
pub const G: f64 = 9.8;
/// Fixed physics step (s).
pub const PHYSICS_DT: f64 = 0.02;
/// Speed floor re-applied after every integration step (m/s).
pub const SPEED_FLOOR: f64 = 100.0;
/// Flight-path angle is kept this far inside ±π/2.
pub const GAMMA_MARGIN: f64 = 1e-6;

pub const NX_BOUNDS: (f64, f64) = (-2.0, 2.0);
pub const NZ_BOUNDS: (f64, f64) = (0.0, 8.0);
pub const MU_BOUNDS: (f64, f64) = (-PI, PI);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("degenerate aircraft state: v={v}, cos(gamma)={cos_gamma}")]
    Degenerate { v: f64, cos_gamma: f64 },
    #[error("non-finite control component {index}: {value}")]
    NonFiniteControl { index: usize, value: f64 },
    #[error("integration step must be positive, got {0}")]
    BadStep(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AircraftState {
    pub x: f64,
    pub y: f64,
    /// Altitude, up-positive.
    pub z: f64,
    pub v: f64,
    pub gamma: f64,
    pub phi: f64,
}

/// Time derivative of [`AircraftState`], one rate per field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AircraftRates {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub v: f64,
    pub gamma: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub nx: f64,
    pub nz: f64,
    pub mu: f64,
}

impl ControlInput {
    /// Level, unaccelerated flight at zero pitch.
    pub const TRIM: ControlInput = ControlInput { nx: 0.0, nz: 1.0, mu: 0.0 };
}

impl AircraftState {
    pub fn new(x: f64, y: f64, z: f64, v: f64, gamma: f64, phi: f64) -> Self {
        Self { x, y, z, v, gamma, phi }
    }

    pub fn position(&self) -> nalgebra::Vector3<f64> {
        nalgebra::Vector3::new(self.x, self.y, self.z)
    }

    pub fn velocity(&self) -> nalgebra::Vector3<f64> {
        let (sg, cg) = self.gamma.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        nalgebra::Vector3::new(self.v * cg * cp, self.v * cg * sp, self.v * sg)
    }

    fn to_array(self) -> [f64; 6] {
        [self.x, self.y, self.z, self.v, self.gamma, self.phi]
    }

    fn from_array(a: [f64; 6]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4], a[5])
    }

    /// Re-applies the speed floor, pitch clip and heading wrap.
    pub fn enforce_invariants(mut self) -> Self {
        self.v = self.v.max(SPEED_FLOOR);
        self.gamma = self.gamma.clamp(-FRAC_PI_2 + GAMMA_MARGIN, FRAC_PI_2 - GAMMA_MARGIN);
        self.phi = wrap_angle(self.phi);
        self
    }
}

impl AircraftRates {
    fn to_array(self) -> [f64; 6] {
        [self.x, self.y, self.z, self.v, self.gamma, self.phi]
    }
}

/// Wraps an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

pub fn aircraft_derivatives(
    s: &AircraftState,
    c: &ControlInput,
) -> Result<AircraftRates, DynamicsError> {
    let (sg, cg) = s.gamma.sin_cos();
    if cg.abs() < 1e-9 || s.v < 1e-6 {
        return Err(DynamicsError::Degenerate { v: s.v, cos_gamma: cg });
    }
    let (sp, cp) = s.phi.sin_cos();
    let (smu, cmu) = c.mu.sin_cos();
    Ok(AircraftRates {
        x: s.v * cg * cp,
        y: s.v * cg * sp,
        z: s.v * sg,
        v: G * (c.nx - sg),
        gamma: G / s.v * (c.nz * cmu - cg),
        phi: G / (s.v * cg) * c.nz * smu,
    })
}

/// Clamps raw `(nx, nz, mu)` to the control envelope.
pub fn clamp_controls(raw: [f64; 3]) -> Result<ControlInput, DynamicsError> {
    for (index, &value) in raw.iter().enumerate() {
        if !value.is_finite() {
            return Err(DynamicsError::NonFiniteControl { index, value });
        }
    }
    Ok(ControlInput {
        nx: raw[0].clamp(NX_BOUNDS.0, NX_BOUNDS.1),
        nz: raw[1].clamp(NZ_BOUNDS.0, NZ_BOUNDS.1),
        mu: raw[2].clamp(MU_BOUNDS.0, MU_BOUNDS.1),
    })
}

/// One classic RK4 step with the control held over the interval.
pub fn rk4_step(
    s: &AircraftState,
    c: &ControlInput,
    dt: f64,
) -> Result<AircraftState, DynamicsError> {
    if !(dt > 0.0) {
        return Err(DynamicsError::BadStep(dt));
    }
    let y0 = s.to_array();
    // Intermediate stages can overshoot the pitch clip near vertical flight;
    // evaluate them at the clipped state so cos(gamma) stays away from zero.
    let f = |y: [f64; 6]| {
        let mut st = AircraftState::from_array(y);
        st.v = st.v.max(SPEED_FLOOR);
        st.gamma = st.gamma.clamp(-FRAC_PI_2 + GAMMA_MARGIN, FRAC_PI_2 - GAMMA_MARGIN);
        aircraft_derivatives(&st, c).map(|r| r.to_array())
    };
    let k1 = f(y0)?;
    let k2 = f(axpy(y0, 0.5 * dt, k1))?;
    let k3 = f(axpy(y0, 0.5 * dt, k2))?;
    let k4 = f(axpy(y0, dt, k3))?;
    let mut out = [0.0; 6];
    for i in 0..6 {
        out[i] = y0[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(AircraftState::from_array(out).enforce_invariants())
}

fn axpy(y: [f64; 6], h: f64, k: [f64; 6]) -> [f64; 6] {
    let mut out = y;
    for i in 0..6 {
        out[i] += h * k[i];
    }
    out
}
