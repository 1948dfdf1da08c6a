//! Powered missile with burn-time thrust, quadratic drag and fuel depletion,
//! steered by proportional navigation.

use std::f64::consts::FRAC_PI_2;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{wrap_angle, AircraftState, GAMMA_MARGIN, G};
use crate::Side;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MissileError {
    #[error("negative time since launch: {0}")]
    NegativeTime(f64),
    #[error("non-positive missile mass {mass} at t={t}")]
    NonPositiveMass { t: f64, mass: f64 },
    #[error("zero range between missile and target")]
    ZeroRange,
    #[error("guidance singularity: cos(epsilon + beta) = {0}")]
    Singular(f64),
    #[error("missile is not in flight")]
    NotInFlight,
    #[error("invalid missile parameter {name}: {value}")]
    BadParam { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MissileParams {
    /// Average thrust during the burn.
    pub p0: f64,
    /// Initial mass (kg).
    pub g0: f64,
    /// Fuel flow (kg/s).
    pub gt: f64,
    /// Burn time (s).
    pub tw: f64,
    pub rho: f64,
    pub sm: f64,
    pub cdm: f64,
    /// Proportional navigation gain.
    pub k_pn: f64,
    pub max_flight_time: f64,
    pub hit_radius: f64,
    pub min_speed: f64,
    /// Symmetric bound on both guidance commands.
    pub command_limit: f64,
}

impl Default for MissileParams {
    fn default() -> Self {
        Self {
            p0: 2000.0,
            g0: 170.0,
            gt: 7.0,
            tw: 12.0,
            rho: 0.607,
            sm: 0.0324,
            cdm: 0.9,
            k_pn: 4.0,
            max_flight_time: 60.0,
            hit_radius: 30.0,
            min_speed: 200.0,
            command_limit: 40.0,
        }
    }
}

impl MissileParams {
    pub fn validate(&self) -> Result<(), MissileError> {
        let fields = [
            ("p0", self.p0),
            ("g0", self.g0),
            ("gt", self.gt),
            ("tw", self.tw),
            ("rho", self.rho),
            ("sm", self.sm),
            ("cdm", self.cdm),
            ("k_pn", self.k_pn),
            ("max_flight_time", self.max_flight_time),
            ("hit_radius", self.hit_radius),
            ("min_speed", self.min_speed),
            ("command_limit", self.command_limit),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(MissileError::BadParam { name, value });
            }
        }
        mass_at(self, self.tw).map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MissileStatus {
    InFlight,
    Hit,
    Expired,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MissileState {
    pub xm: f64,
    pub ym: f64,
    pub zm: f64,
    pub vm: f64,
    pub gamma_m: f64,
    pub phi_m: f64,
    pub t_since_launch: f64,
    pub shooter: Side,
    pub target: Side,
    pub status: MissileStatus,
    /// Last applied `(n_mc, n_mh)`, held through guidance singularities.
    pub command: (f64, f64),
    /// Smallest missile-target separation seen so far (m).
    pub closest_approach: f64,
}

impl MissileState {
    /// Rail launch: the missile inherits the shooter's position, speed and attitude.
    pub fn launch(shooter_state: &AircraftState, shooter: Side) -> Self {
        Self {
            xm: shooter_state.x,
            ym: shooter_state.y,
            zm: shooter_state.z,
            vm: shooter_state.v,
            gamma_m: shooter_state.gamma,
            phi_m: shooter_state.phi,
            t_since_launch: 0.0,
            shooter,
            target: shooter.opponent(),
            status: MissileStatus::InFlight,
            command: (0.0, 0.0),
            closest_approach: f64::INFINITY,
        }
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.xm, self.ym, self.zm)
    }

    pub fn velocity(&self) -> Vector3<f64> {
        let (sg, cg) = self.gamma_m.sin_cos();
        let (sp, cp) = self.phi_m.sin_cos();
        Vector3::new(self.vm * cg * cp, self.vm * cg * sp, self.vm * sg)
    }

    pub fn in_flight(&self) -> bool {
        self.status == MissileStatus::InFlight
    }
}

/// Line-of-sight geometry from missile to target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeGeometry {
    /// Target minus missile (m).
    pub r: Vector3<f64>,
    pub r_dot: Vector3<f64>,
    pub range: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub beta_dot: f64,
    pub epsilon_dot: f64,
}

impl RelativeGeometry {
    pub fn new(r: Vector3<f64>, r_dot: Vector3<f64>) -> Result<Self, MissileError> {
        let range = r.norm();
        let horiz_sq = r.x * r.x + r.y * r.y;
        let horiz = horiz_sq.sqrt();
        if range <= 0.0 || horiz_sq <= 0.0 {
            return Err(MissileError::ZeroRange);
        }
        let beta = r.y.atan2(r.x);
        let epsilon = (r.z / horiz).atan();
        let beta_dot = (r_dot.y * r.x - r_dot.x * r.y) / horiz_sq;
        let epsilon_dot = (horiz_sq * r_dot.z - r.z * (r_dot.x * r.x + r_dot.y * r.y))
            / (range * range * horiz);
        Ok(Self { r, r_dot, range, beta, epsilon, beta_dot, epsilon_dot })
    }

    /// Geometry with `r` and `r_dot` expressed in the frame whose x axis is
    /// the missile's horizontal heading `phi_m`.
    ///
    /// Rotation about the vertical leaves the line-of-sight rates unchanged
    /// and turns `beta` into the azimuth look angle off the missile heading.
    pub fn in_heading_frame(
        r: Vector3<f64>,
        r_dot: Vector3<f64>,
        phi_m: f64,
    ) -> Result<Self, MissileError> {
        let (s, c) = phi_m.sin_cos();
        let rot = |v: Vector3<f64>| Vector3::new(c * v.x + s * v.y, -s * v.x + c * v.y, v.z);
        Self::new(rot(r), rot(r_dot))
    }
}

pub fn mass_at(p: &MissileParams, t: f64) -> Result<f64, MissileError> {
    if t < 0.0 {
        return Err(MissileError::NegativeTime(t));
    }
    let mass = p.g0 - p.gt * t.min(p.tw);
    if mass <= 0.0 {
        return Err(MissileError::NonPositiveMass { t, mass });
    }
    Ok(mass)
}

pub fn thrust_at(p: &MissileParams, t: f64) -> Result<f64, MissileError> {
    if t < 0.0 {
        return Err(MissileError::NegativeTime(t));
    }
    Ok(if t <= p.tw { p.p0 } else { 0.0 })
}

pub fn drag_of(p: &MissileParams, vm: f64) -> f64 {
    0.5 * p.rho * vm * vm * p.sm * p.cdm
}

/// Proportional-navigation commands `(n_mc, n_mh)`, each clamped to
/// `±command_limit`. `gamma` is the missile flight-path angle.
pub fn pn_command(
    geom: &RelativeGeometry,
    p: &MissileParams,
    vm: f64,
    gamma: f64,
) -> Result<(f64, f64), MissileError> {
    let (n_mc, n_mh) = pn_command_unclamped(geom, p.k_pn, vm, gamma)?;
    let lim = p.command_limit;
    Ok((n_mc.clamp(-lim, lim), n_mh.clamp(-lim, lim)))
}

pub fn pn_command_unclamped(
    geom: &RelativeGeometry,
    k: f64,
    vm: f64,
    gamma: f64,
) -> Result<(f64, f64), MissileError> {
    if !(geom.range > 0.0) {
        return Err(MissileError::ZeroRange);
    }
    let cos_sum = (geom.epsilon + geom.beta).cos();
    if cos_sum.abs() < 1e-9 {
        return Err(MissileError::Singular(cos_sum));
    }
    let n_mc = k * vm * gamma.cos() / G
        * (geom.beta_dot + geom.epsilon.tan() * (geom.epsilon + geom.beta).tan() * geom.epsilon_dot);
    let n_mh = vm * k * geom.epsilon_dot / (G * cos_sum);
    Ok((n_mc, n_mh))
}

/// Right-hand side of the missile equations for state `[x, y, z, v, gamma, phi]`.
fn missile_rates(
    p: &MissileParams,
    y: &[f64; 6],
    t: f64,
    cmd: (f64, f64),
) -> Result<[f64; 6], MissileError> {
    let [_, _, _, v, gamma, phi] = *y;
    let gamma = gamma.clamp(-FRAC_PI_2 + GAMMA_MARGIN, FRAC_PI_2 - GAMMA_MARGIN);
    let (sg, cg) = gamma.sin_cos();
    let (sp, cp) = phi.sin_cos();
    let thrust = thrust_at(p, t)?;
    let mass = mass_at(p, t)?;
    let drag = drag_of(p, v);
    let v_safe = v.max(1e-3);
    Ok([
        v * cg * cp,
        v * cg * sp,
        v * sg,
        (thrust - drag) * G / mass - G * sg,
        (cmd.1 - cg) * G / v_safe,
        cmd.0 * G / (v_safe * cg),
    ])
}

/// Minimum distance from the origin to the segment `a → b`.
pub fn segment_min_distance(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let d = b - a;
    let len_sq = d.norm_squared();
    let s = if len_sq > 0.0 { (-a.dot(&d) / len_sq).clamp(0.0, 1.0) } else { 0.0 };
    (a + d * s).norm()
}

/// Advances an in-flight missile by one RK4 step toward a target whose
/// position and velocity are given at the start of the step. The target is
/// extrapolated at constant velocity inside the step; hit testing uses the
/// closest approach of the relative motion over the step.
pub fn missile_step(
    m: &MissileState,
    p: &MissileParams,
    target_pos: Vector3<f64>,
    target_vel: Vector3<f64>,
    dt: f64,
) -> Result<MissileState, MissileError> {
    if !m.in_flight() {
        return Err(MissileError::NotInFlight);
    }
    let r = target_pos - m.position();
    let r_dot = target_vel - m.velocity();
    let command = RelativeGeometry::in_heading_frame(r, r_dot, m.phi_m)
        .and_then(|geom| pn_command(&geom, p, m.vm, m.gamma_m))
        .unwrap_or(m.command);

    let y0 = [m.xm, m.ym, m.zm, m.vm, m.gamma_m, m.phi_m];
    let t0 = m.t_since_launch;
    let stage = |y: &[f64; 6], h: f64, k: &[f64; 6]| {
        let mut out = *y;
        for i in 0..6 {
            out[i] += h * k[i];
        }
        out
    };
    let k1 = missile_rates(p, &y0, t0, command)?;
    let k2 = missile_rates(p, &stage(&y0, 0.5 * dt, &k1), t0 + 0.5 * dt, command)?;
    let k3 = missile_rates(p, &stage(&y0, 0.5 * dt, &k2), t0 + 0.5 * dt, command)?;
    let k4 = missile_rates(p, &stage(&y0, dt, &k3), t0 + dt, command)?;
    let mut y = y0;
    for i in 0..6 {
        y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }

    let mut next = MissileState {
        xm: y[0],
        ym: y[1],
        zm: y[2],
        vm: y[3].max(1e-3),
        gamma_m: y[4].clamp(-FRAC_PI_2 + GAMMA_MARGIN, FRAC_PI_2 - GAMMA_MARGIN),
        phi_m: wrap_angle(y[5]),
        t_since_launch: t0 + dt,
        command,
        ..*m
    };

    let rel_start = r;
    let rel_end = (target_pos + target_vel * dt) - next.position();
    let miss = segment_min_distance(&rel_start, &rel_end);
    next.closest_approach = m.closest_approach.min(miss);
    if miss < p.hit_radius {
        next.status = MissileStatus::Hit;
    } else if next.t_since_launch > p.max_flight_time
        || (next.t_since_launch > p.tw && next.vm < p.min_speed)
    {
        next.status = MissileStatus::Expired;
    }
    Ok(next)
}

/// Launches from `shooter` at a target holding constant velocity and flies
/// until the missile hits or expires.
pub fn fly_against_constant_target(
    shooter: &AircraftState,
    target: &AircraftState,
    p: &MissileParams,
    dt: f64,
) -> Result<MissileState, MissileError> {
    let mut m = MissileState::launch(shooter, Side::Blue);
    let (p0, v) = (target.position(), target.velocity());
    while m.in_flight() {
        m = missile_step(&m, p, p0 + v * m.t_since_launch, v, dt)?;
    }
    Ok(m)
}
