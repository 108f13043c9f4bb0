//! Chaplygin beanie riding on a movable platform.
//!
//! The vehicle position `(x, y)` is measured relative to the platform and
//! the platform position `(x_p, y_p)` in the lab frame. The rear wheel
//! enforces `−ẋ sin θ + ẏ cos θ − a θ̇ = 0`; a torsional spring of
//! stiffness `k` couples the rotor angle `φ` to the cart.
//!
//! Two formulations live here. The reduced one evolves the nonholonomic
//! momenta in scaled form and reconstructs the configuration from them;
//! the full one integrates the constrained Euler–Lagrange equations with a
//! multiplier solve per evaluation. With a free platform the two describe
//! the same motion, which the tests exploit.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Matrix4, SMatrix, SVector, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se2::{integrate, Trajectory};

/// Inertial and elastic parameters of a beanie and its platform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeanieParams {
    /// Vehicle mass `m`.
    pub mass: f64,
    /// Rotor inertia `B`.
    pub rotor_inertia: f64,
    /// Cart inertia `C`.
    pub cart_inertia: f64,
    /// Distance `a` from the wheel contact to the centre of mass.
    pub wheel_offset: f64,
    /// Torsional spring stiffness `k`.
    pub stiffness: f64,
    /// Platform mass `M`.
    pub platform_mass: f64,
}

impl Default for BeanieParams {
    fn default() -> Self {
        Self::unit()
    }
}

impl BeanieParams {
    pub fn unit() -> Self {
        Self {
            mass: 1.0,
            rotor_inertia: 1.0,
            cart_inertia: 1.0,
            wheel_offset: 1.0,
            stiffness: 1.0,
            platform_mass: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("mass", self.mass),
            ("rotor_inertia", self.rotor_inertia),
            ("cart_inertia", self.cart_inertia),
            ("wheel_offset", self.wheel_offset),
            ("stiffness", self.stiffness),
            ("platform_mass", self.platform_mass),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "beanie {name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Generalized coordinates, or their rates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BeanieCoords {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub phi: f64,
    pub x_p: f64,
    pub y_p: f64,
}

/// Configuration and velocity of the beanie–platform system.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BeanieState {
    pub pos: BeanieCoords,
    pub vel: BeanieCoords,
}

impl BeanieState {
    /// At rest with the given pose (relative to the platform) and rotor angle.
    pub fn at_rest(x: f64, y: f64, theta: f64, phi: f64) -> Self {
        Self {
            pos: BeanieCoords {
                x,
                y,
                theta,
                phi,
                ..Default::default()
            },
            vel: BeanieCoords::default(),
        }
    }

    /// No-slip residual `−ẋ sin θ + ẏ cos θ − a θ̇`.
    pub fn constraint_residual(&self, params: &BeanieParams) -> f64 {
        let (s, c) = self.pos.theta.sin_cos();
        -self.vel.x * s + self.vel.y * c - params.wheel_offset * self.vel.theta
    }
}

/// Nonholonomic momenta.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MomentumSet {
    /// Forward translational momentum.
    pub j_lt: f64,
    /// Angular momentum about the wheel contact.
    pub j_rw: f64,
    /// Combined system momentum along the heading.
    pub j_x: f64,
    /// Combined system momentum lateral to the heading.
    pub j_y: f64,
}

pub fn momenta_from_state(params: &BeanieParams, s: &BeanieState) -> MomentumSet {
    let BeanieParams {
        mass: m,
        rotor_inertia: b,
        cart_inertia: c,
        wheel_offset: a,
        platform_mass: big_m,
        ..
    } = *params;
    let (sn, cs) = s.pos.theta.sin_cos();
    let v = &s.vel;
    let vx = v.x + v.x_p;
    let vy = v.y + v.y_p;
    let j_lt = m * vx * cs + m * vy * sn;
    let j_rw = -m * a * vx * sn + m * a * vy * cs + (b + c) * v.theta + b * v.phi;
    let j_x = j_lt + big_m * v.x_p * cs + big_m * v.y_p * sn;
    let j_y = -m * vx * sn + m * vy * cs - big_m * v.x_p * sn + big_m * v.y_p * cs;
    MomentumSet {
        j_lt,
        j_rw,
        j_x,
        j_y,
    }
}

/// Parameter groups of the scaled momentum dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub d: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub nu0: f64,
    pub nu1: f64,
    pub nu2: f64,
    pub nu3: f64,
    pub nu4: f64,
    pub nu5: f64,
    pub dcap: f64,
}

pub fn derived_constants(params: &BeanieParams) -> DerivedConstants {
    let BeanieParams {
        mass: m,
        rotor_inertia: b,
        cart_inertia: c,
        wheel_offset: a,
        stiffness: k,
        platform_mass: big_m,
    } = *params;
    let d = m * (b + c) + big_m * (m * a * a + b + c);
    let dcap = b * (m * big_m * a * a + c * (m + big_m));
    DerivedConstants {
        d,
        gamma1: -m * m * a * (b + c) / d,
        gamma2: (m * (m + big_m) * (b + c) - m * m * big_m * a * a) / d,
        gamma3: m * big_m * a * (m + big_m) / d,
        lambda1: m * a * a,
        lambda2: -a * (m + big_m),
        mu1: -m * a,
        mu2: m + big_m,
        nu0: b / d,
        nu1: -d * k / dcap,
        nu2: -b * m * a * a * (m + big_m) / (d * dcap),
        nu3: a * b * (m + big_m).powi(2) / (d * dcap),
        nu4: b * m * m * a * a / (d * dcap),
        nu5: -m * b * a * (m + big_m) / (d * dcap),
        dcap,
    }
}

impl DerivedConstants {
    /// Coefficients `(ν₂, ν₃, ν₄, ν₅)` of the rotor acceleration when it is
    /// written in the scaled momenta `r, w, p_x, p_y`.
    ///
    /// `ν₂..ν₅` multiply products of unscaled momenta; each product of two
    /// scaled momenta carries a factor `d²`.
    pub fn scaled_rotor_coefficients(&self) -> [f64; 4] {
        let s = self.d * self.d;
        [self.nu2 * s, self.nu3 * s, self.nu4 * s, self.nu5 * s]
    }
}

/// Scaled momenta plus rotor angle and rate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReducedState {
    pub r: f64,
    pub w: f64,
    pub p_x: f64,
    pub p_y: f64,
    pub phi: f64,
    pub alpha_rotor_rate: f64,
}

impl ReducedState {
    pub fn from_momenta(consts: &DerivedConstants, j: &MomentumSet, phi: f64, phi_dot: f64) -> Self {
        let d = consts.d;
        let b = consts.nu0 * d;
        Self {
            r: j.j_lt / d,
            w: (j.j_rw - b * phi_dot) / d,
            p_x: j.j_x / d,
            p_y: j.j_y / d,
            phi,
            alpha_rotor_rate: phi_dot,
        }
    }

    pub fn momenta(&self, consts: &DerivedConstants) -> MomentumSet {
        let d = consts.d;
        let b = consts.nu0 * d;
        MomentumSet {
            j_lt: self.r * d,
            j_rw: self.w * d + b * self.alpha_rotor_rate,
            j_x: self.p_x * d,
            j_y: self.p_y * d,
        }
    }

    pub fn lateral_invariant(&self) -> f64 {
        self.p_x * self.p_x + self.p_y * self.p_y
    }

    fn to_vector(self) -> SVector<f64, 6> {
        SVector::<f64, 6>::from([self.r, self.w, self.p_x, self.p_y, self.phi, self.alpha_rotor_rate])
    }

    fn from_slice(v: &[f64]) -> Self {
        Self {
            r: v[0],
            w: v[1],
            p_x: v[2],
            p_y: v[3],
            phi: v[4],
            alpha_rotor_rate: v[5],
        }
    }
}

/// Time derivative of the reduced state.
pub fn reduced_rhs(consts: &DerivedConstants, s: &ReducedState) -> ReducedState {
    let ReducedState {
        r,
        w,
        p_x,
        p_y,
        phi,
        alpha_rotor_rate,
    } = *s;
    let [n2, n3, n4, n5] = consts.scaled_rotor_coefficients();
    let alpha_dot = consts.nu1 * phi + n2 * r * p_y + n3 * r * w + n4 * p_x * p_y + n5 * p_x * w;
    ReducedState {
        r: consts.gamma1 * p_y * p_y + consts.gamma2 * p_y * w + consts.gamma3 * w * w,
        w: consts.lambda1 * r * p_y + consts.lambda2 * r * w - consts.nu0 * alpha_dot,
        p_x: consts.mu1 * p_y * p_y + consts.mu2 * p_y * w,
        p_y: -consts.mu1 * p_x * p_y - consts.mu2 * p_x * w,
        phi: alpha_rotor_rate,
        alpha_rotor_rate: alpha_dot,
    }
}

/// Unscaled momentum evolution. Kept for cross-checking [`reduced_rhs`].
pub fn momentum_rates(params: &BeanieParams, j: &MomentumSet, phi_dot: f64) -> MomentumSet {
    let BeanieParams {
        mass: m,
        rotor_inertia: b,
        cart_inertia: c,
        wheel_offset: a,
        platform_mass: big_m,
        ..
    } = *params;
    let d = big_m * (m * a * a + b + c) + m * (b + c);
    let w = j.j_rw - b * phi_dot;
    let lateral = m * a * j.j_y - (m + big_m) * w;
    MomentumSet {
        j_lt: -m * ((b + c) * j.j_y + big_m * a * w) * lateral / (d * d),
        j_rw: a * j.j_lt * lateral / d,
        j_x: j.j_y * (-m * a * j.j_y + (m + big_m) * w) / d,
        j_y: -j.j_x * (-m * a * j.j_y + (m + big_m) * w) / d,
    }
}

/// Solves the momentum definitions plus the no-slip constraint for the
/// velocities `(ẋ, ẏ, θ̇, ẋ_p, ẏ_p)`.
pub fn velocities_from_momenta(
    params: &BeanieParams,
    theta: f64,
    j: &MomentumSet,
    phi_dot: f64,
) -> Result<[f64; 5]> {
    let BeanieParams {
        mass: m,
        rotor_inertia: b,
        cart_inertia: c,
        wheel_offset: a,
        platform_mass: big_m,
        ..
    } = *params;
    let (s, cs) = theta.sin_cos();
    #[rustfmt::skip]
    let lhs = SMatrix::<f64, 5, 5>::from_row_slice(&[
        m * cs,      m * s,       0.0,   m * cs,             m * s,
        -m * a * s,  m * a * cs,  b + c, -m * a * s,         m * a * cs,
        m * cs,      m * s,       0.0,   (m + big_m) * cs,   (m + big_m) * s,
        -m * s,      m * cs,      0.0,   -(m + big_m) * s,   (m + big_m) * cs,
        -s,          cs,          -a,    0.0,                0.0,
    ]);
    let rhs = SVector::<f64, 5>::from([j.j_lt, j.j_rw - b * phi_dot, j.j_x, j.j_y, 0.0]);
    let sol = lhs
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularSystem("momentum reconstruction"))?;
    Ok([sol[0], sol[1], sol[2], sol[3], sol[4]])
}

/// One sample of a passive run: reduced variables and the reconstructed state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassiveSample {
    pub reduced: ReducedState,
    pub full: BeanieState,
}

/// Passive beanie on a free platform, integrated in reduced form and
/// reconstructed to full configuration at every step.
pub fn simulate_passive(
    params: &BeanieParams,
    init: &BeanieState,
    dt: f64,
    t_final: f64,
) -> Result<Trajectory<PassiveSample>> {
    params.validate()?;
    check_no_slip(params, init)?;
    let consts = derived_constants(params);
    let j0 = momenta_from_state(params, init);
    let red0 = ReducedState::from_momenta(&consts, &j0, init.pos.phi, init.vel.phi);
    let p = &init.pos;

    let mut y0 = SVector::<f64, 11>::zeros();
    y0.fixed_rows_mut::<6>(0).copy_from(&red0.to_vector());
    y0[6] = p.x;
    y0[7] = p.y;
    y0[8] = p.theta;
    y0[9] = p.x_p;
    y0[10] = p.y_p;

    let unpack = |y: &SVector<f64, 11>| -> Result<(ReducedState, BeanieState)> {
        let red = ReducedState::from_slice(&y.as_slice()[..6]);
        let j = red.momenta(&consts);
        let theta = y[8];
        let [vx, vy, w, vxp, vyp] = velocities_from_momenta(params, theta, &j, red.alpha_rotor_rate)?;
        let full = BeanieState {
            pos: BeanieCoords {
                x: y[6],
                y: y[7],
                theta,
                phi: red.phi,
                x_p: y[9],
                y_p: y[10],
            },
            vel: BeanieCoords {
                x: vx,
                y: vy,
                theta: w,
                phi: red.alpha_rotor_rate,
                x_p: vxp,
                y_p: vyp,
            },
        };
        Ok((red, full))
    };

    integrate(
        y0,
        dt,
        t_final,
        |_, y| {
            let (red, full) = unpack(y)?;
            let rate = reduced_rhs(&consts, &red);
            let mut dy = SVector::<f64, 11>::zeros();
            dy.fixed_rows_mut::<6>(0).copy_from(&rate.to_vector());
            dy[6] = full.vel.x;
            dy[7] = full.vel.y;
            dy[8] = full.vel.theta;
            dy[9] = full.vel.x_p;
            dy[10] = full.vel.y_p;
            Ok(dy)
        },
        |_, _| Ok(()),
        |_, y| {
            let (reduced, full) = unpack(y)?;
            Ok(PassiveSample { reduced, full })
        },
    )
}

/// Prescribed platform velocity, possibly depending on the beanie heading.
pub trait PlatformMotion: Send + Sync {
    fn velocity(&self, t: f64, theta: f64) -> [f64; 2];
    /// Time derivative of [`PlatformMotion::velocity`] along the motion.
    fn acceleration(&self, t: f64, theta: f64, theta_dot: f64) -> [f64; 2];
}

/// Platform held still.
#[derive(Debug, Clone, Copy, Default)]
pub struct Stationary;

impl PlatformMotion for Stationary {
    fn velocity(&self, _t: f64, _theta: f64) -> [f64; 2] {
        [0.0, 0.0]
    }
    fn acceleration(&self, _t: f64, _theta: f64, _theta_dot: f64) -> [f64; 2] {
        [0.0, 0.0]
    }
}

/// Lateral sinusoidal actuation in the heading-aligned frame, using the
/// heading as feedback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyFrameSine {
    pub amplitude: f64,
    pub omega: f64,
}

impl PlatformMotion for BodyFrameSine {
    fn velocity(&self, t: f64, theta: f64) -> [f64; 2] {
        control_body_frame(theta, self.amplitude, self.omega, t)
    }

    fn acceleration(&self, t: f64, theta: f64, theta_dot: f64) -> [f64; 2] {
        let (s, c) = theta.sin_cos();
        let (sw, cw) = (self.omega * t).sin_cos();
        let lateral = self.amplitude * sw;
        let lateral_dot = self.amplitude * self.omega * cw;
        [
            -lateral_dot * s - lateral * c * theta_dot,
            lateral_dot * c - lateral * s * theta_dot,
        ]
    }
}

/// World-frame platform velocity `R(θ)·(0, A sin ωt)`.
pub fn control_body_frame(theta: f64, amplitude: f64, omega: f64, t: f64) -> [f64; 2] {
    let (s, c) = theta.sin_cos();
    let lateral = amplitude * (omega * t).sin();
    [-lateral * s, lateral * c]
}

/// How the platform moves during a forced simulation.
pub enum PlatformInput<'a> {
    /// No external force; the platform responds dynamically with mass `M`.
    Free,
    /// Platform velocity prescribed as a function of time and heading.
    Prescribed(&'a dyn PlatformMotion),
}

/// Right-hand side of the prescribed-platform dynamics for the state
/// `[x, y, θ, φ, ẋ, ẏ, θ̇, φ̇, x_p, y_p]`.
pub(crate) fn prescribed_rhs(
    params: &BeanieParams,
    y: &SVector<f64, 10>,
    platform_vel: [f64; 2],
    platform_acc: [f64; 2],
) -> Result<SVector<f64, 10>> {
    let BeanieParams {
        mass: m,
        rotor_inertia: b,
        cart_inertia: c,
        wheel_offset: a,
        stiffness: k,
        ..
    } = *params;
    let (theta, phi) = (y[2], y[3]);
    let (vx, vy, w) = (y[4], y[5], y[6]);
    let (s, cs) = theta.sin_cos();
    #[rustfmt::skip]
    let kkt = SMatrix::<f64, 5, 5>::from_row_slice(&[
        m,   0.0, 0.0,   0.0, -s,
        0.0, m,   0.0,   0.0, cs,
        0.0, 0.0, b + c, b,   -a,
        0.0, 0.0, b,     b,   0.0,
        -s,  cs,  -a,    0.0, 0.0,
    ]);
    let rhs = SVector::<f64, 5>::from([
        -m * platform_acc[0],
        -m * platform_acc[1],
        0.0,
        -k * phi,
        cs * w * vx + s * w * vy,
    ]);
    let sol = kkt
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularSystem("constrained dynamics (prescribed platform)"))?;
    let mut dy = SVector::<f64, 10>::zeros();
    dy[0] = vx;
    dy[1] = vy;
    dy[2] = w;
    dy[3] = y[7];
    dy[4] = sol[0];
    dy[5] = sol[1];
    dy[6] = sol[2];
    dy[7] = sol[3];
    dy[8] = platform_vel[0];
    dy[9] = platform_vel[1];
    Ok(dy)
}

/// Removes the no-slip violation from the velocities of a prescribed-platform
/// state, projecting in the kinetic-energy metric.
pub(crate) fn project_prescribed(params: &BeanieParams, y: &mut SVector<f64, 10>) {
    let BeanieParams {
        mass: m,
        rotor_inertia: b,
        cart_inertia: c,
        wheel_offset: a,
        ..
    } = *params;
    let (s, cs) = y[2].sin_cos();
    let row = Vector4::new(-s, cs, -a, 0.0);
    #[rustfmt::skip]
    let mass = Matrix4::new(
        m,   0.0, 0.0,   0.0,
        0.0, m,   0.0,   0.0,
        0.0, 0.0, b + c, b,
        0.0, 0.0, b,     b,
    );
    let Some(inv) = mass.try_inverse() else {
        return;
    };
    let v = Vector4::new(y[4], y[5], y[6], y[7]);
    let dir = inv * row;
    let violation = row.dot(&v);
    let corrected = v - dir * (violation / row.dot(&dir));
    y.fixed_rows_mut::<4>(4).copy_from(&corrected);
}

fn free_rhs(params: &BeanieParams, y: &SVector<f64, 12>) -> Result<SVector<f64, 12>> {
    let BeanieParams {
        mass: m,
        rotor_inertia: b,
        cart_inertia: c,
        wheel_offset: a,
        stiffness: k,
        platform_mass: big_m,
    } = *params;
    let (theta, phi) = (y[2], y[3]);
    let (vx, vy, w) = (y[6], y[7], y[8]);
    let (s, cs) = theta.sin_cos();
    #[rustfmt::skip]
    let kkt = SMatrix::<f64, 7, 7>::from_row_slice(&[
        m,   0.0, 0.0,   0.0, m,         0.0,       -s,
        0.0, m,   0.0,   0.0, 0.0,       m,         cs,
        0.0, 0.0, b + c, b,   0.0,       0.0,       -a,
        0.0, 0.0, b,     b,   0.0,       0.0,       0.0,
        m,   0.0, 0.0,   0.0, m + big_m, 0.0,       0.0,
        0.0, m,   0.0,   0.0, 0.0,       m + big_m, 0.0,
        -s,  cs,  -a,    0.0, 0.0,       0.0,       0.0,
    ]);
    let rhs = SVector::<f64, 7>::from([0.0, 0.0, 0.0, -k * phi, 0.0, 0.0, cs * w * vx + s * w * vy]);
    let sol = kkt
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularSystem("constrained dynamics (free platform)"))?;
    let mut dy = SVector::<f64, 12>::zeros();
    for i in 0..6 {
        dy[i] = y[6 + i];
        dy[6 + i] = sol[i];
    }
    Ok(dy)
}

fn project_free(params: &BeanieParams, y: &mut SVector<f64, 12>) {
    let BeanieParams {
        mass: m,
        rotor_inertia: b,
        cart_inertia: c,
        wheel_offset: a,
        platform_mass: big_m,
        ..
    } = *params;
    let (s, cs) = y[2].sin_cos();
    let row = SVector::<f64, 6>::from([-s, cs, -a, 0.0, 0.0, 0.0]);
    #[rustfmt::skip]
    let mass = SMatrix::<f64, 6, 6>::from_row_slice(&[
        m,   0.0, 0.0,   0.0, m,         0.0,
        0.0, m,   0.0,   0.0, 0.0,       m,
        0.0, 0.0, b + c, b,   0.0,       0.0,
        0.0, 0.0, b,     b,   0.0,       0.0,
        m,   0.0, 0.0,   0.0, m + big_m, 0.0,
        0.0, m,   0.0,   0.0, 0.0,       m + big_m,
    ]);
    let Some(inv) = mass.try_inverse() else {
        return;
    };
    let v: SVector<f64, 6> = y.fixed_rows::<6>(6).into_owned();
    let dir = inv * row;
    let corrected = v - dir * (row.dot(&v) / row.dot(&dir));
    y.fixed_rows_mut::<6>(6).copy_from(&corrected);
}

fn check_no_slip(params: &BeanieParams, init: &BeanieState) -> Result<()> {
    let res = init.constraint_residual(params);
    if res.abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "initial state violates the no-slip constraint (residual {res:.3e})"
        )));
    }
    Ok(())
}

pub(crate) fn pack_prescribed(s: &BeanieState) -> SVector<f64, 10> {
    SVector::<f64, 10>::from([
        s.pos.x, s.pos.y, s.pos.theta, s.pos.phi, s.vel.x, s.vel.y, s.vel.theta, s.vel.phi, s.pos.x_p,
        s.pos.y_p,
    ])
}

pub(crate) fn unpack_prescribed(y: &SVector<f64, 10>, platform_vel: [f64; 2]) -> BeanieState {
    BeanieState {
        pos: BeanieCoords {
            x: y[0],
            y: y[1],
            theta: y[2],
            phi: y[3],
            x_p: y[8],
            y_p: y[9],
        },
        vel: BeanieCoords {
            x: y[4],
            y: y[5],
            theta: y[6],
            phi: y[7],
            x_p: platform_vel[0],
            y_p: platform_vel[1],
        },
    }
}

/// Full constrained dynamics under the given platform input.
///
/// With a prescribed platform, the initial platform velocity is taken from
/// the motion law, not from `init.vel`.
pub fn simulate_forced(
    params: &BeanieParams,
    init: &BeanieState,
    input: PlatformInput<'_>,
    dt: f64,
    t_final: f64,
) -> Result<Trajectory<BeanieState>> {
    params.validate()?;
    check_no_slip(params, init)?;
    match input {
        PlatformInput::Free => {
            let p = &init.pos;
            let v = &init.vel;
            let y0 = SVector::<f64, 12>::from([
                p.x, p.y, p.theta, p.phi, p.x_p, p.y_p, v.x, v.y, v.theta, v.phi, v.x_p, v.y_p,
            ]);
            integrate(
                y0,
                dt,
                t_final,
                |_, y| free_rhs(params, y),
                |_, y| {
                    project_free(params, y);
                    Ok(())
                },
                |_, y| {
                    Ok(BeanieState {
                        pos: BeanieCoords {
                            x: y[0],
                            y: y[1],
                            theta: y[2],
                            phi: y[3],
                            x_p: y[4],
                            y_p: y[5],
                        },
                        vel: BeanieCoords {
                            x: y[6],
                            y: y[7],
                            theta: y[8],
                            phi: y[9],
                            x_p: y[10],
                            y_p: y[11],
                        },
                    })
                },
            )
        }
        PlatformInput::Prescribed(motion) => integrate(
            pack_prescribed(init),
            dt,
            t_final,
            |t, y| {
                let vel = motion.velocity(t, y[2]);
                let acc = motion.acceleration(t, y[2], y[6]);
                if !(vel.iter().chain(acc.iter()).all(|v| v.is_finite())) {
                    return Err(Error::NonFinite);
                }
                prescribed_rhs(params, y, vel, acc)
            },
            |_, y| {
                project_prescribed(params, y);
                Ok(())
            },
            |t, y| Ok(unpack_prescribed(y, motion.velocity(t, y[2]))),
        ),
    }
}

/// Rotor natural frequency `√(k/B)` and free body–rotor modal frequency
/// `√(k(B+C)/(BC))`.
pub fn frequencies(params: &BeanieParams) -> (f64, f64) {
    let k = params.stiffness;
    let b = params.rotor_inertia;
    let c = params.cart_inertia;
    ((k / b).sqrt(), (k * (b + c) / (b * c)).sqrt())
}

/// Coefficients `[1, c₂, c₁, c₀]` of the characteristic polynomial of the
/// linearization about `(r_c, 0, 0, 0)` on the zero-momentum level set.
pub fn stability_polynomial(consts: &DerivedConstants, r_c: f64) -> [f64; 4] {
    let nu3 = consts.scaled_rotor_coefficients()[1];
    [
        1.0,
        (consts.nu0 * nu3 - consts.lambda2) * r_c,
        -consts.nu1,
        consts.lambda2 * consts.nu1 * r_c,
    ]
}

/// Jacobian of `(ẇ, φ̇, α̇)` with respect to `(w, φ, α)` at `r = r_c`.
pub fn stability_jacobian(consts: &DerivedConstants, r_c: f64) -> Matrix3<f64> {
    let nu3 = consts.scaled_rotor_coefficients()[1];
    Matrix3::new(
        (consts.lambda2 - consts.nu0 * nu3) * r_c,
        -consts.nu0 * consts.nu1,
        0.0,
        0.0,
        0.0,
        1.0,
        nu3 * r_c,
        consts.nu1,
        0.0,
    )
}

/// Roots of the stability polynomial, sorted by imaginary then real part.
pub fn stability_polynomial_roots(consts: &DerivedConstants, r_c: f64) -> [Complex64; 3] {
    let [_, c2, c1, c0] = stability_polynomial(consts, r_c);
    let mut roots = cubic_roots(c2, c1, c0);
    sort_complex(&mut roots);
    roots
}

/// Eigenvalues of [`stability_jacobian`], sorted like
/// [`stability_polynomial_roots`].
pub fn stability_jacobian_eigenvalues(consts: &DerivedConstants, r_c: f64) -> [Complex64; 3] {
    let eig = stability_jacobian(consts, r_c).complex_eigenvalues();
    let mut out = [eig[0], eig[1], eig[2]];
    sort_complex(&mut out);
    out
}

/// Orders by imaginary part, then real part. Parts that agree to within a
/// relative `1e-9` count as equal so conjugate pairs sort consistently.
fn sort_complex(v: &mut [Complex64]) {
    let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * (1.0 + x.abs().max(y.abs()));
    v.sort_by(|a, b| {
        if close(a.im, b.im) {
            a.re.total_cmp(&b.re)
        } else {
            a.im.total_cmp(&b.im)
        }
    });
}

/// Roots of the monic cubic `p³ + c₂p² + c₁p + c₀` by simultaneous
/// (Weierstrass) iteration followed by Newton polishing.
fn cubic_roots(c2: f64, c1: f64, c0: f64) -> [Complex64; 3] {
    let poly = |z: Complex64| ((z + c2) * z + c1) * z + c0;
    let dpoly = |z: Complex64| (z * 3.0 + 2.0 * c2) * z + c1;
    let bound = 1.0 + c2.abs().max(c1.abs()).max(c0.abs());
    let seed = Complex64::new(0.4, 0.9);
    let mut z = [seed * bound, seed.powu(2) * bound, seed.powu(3) * bound];
    for _ in 0..500 {
        let mut delta = 0.0_f64;
        for i in 0..3 {
            let mut denom = Complex64::new(1.0, 0.0);
            for j in 0..3 {
                if i != j {
                    denom *= z[i] - z[j];
                }
            }
            let step = poly(z[i]) / denom;
            z[i] -= step;
            delta = delta.max(step.norm());
        }
        if delta <= 1e-15 * bound {
            break;
        }
    }
    for zi in z.iter_mut() {
        for _ in 0..3 {
            let d = dpoly(*zi);
            if d.norm() == 0.0 {
                break;
            }
            *zi -= poly(*zi) / d;
        }
    }
    // conjugate pairs come out with tiny asymmetries; clean real roots
    for zi in z.iter_mut() {
        if zi.im.abs() <= 1e-13 * bound {
            zi.im = 0.0;
        }
    }
    z
}

/// Mean of a uniformly sampled signal over its trailing `n_periods` periods
/// of `2π/ω`, by trapezoidal quadrature with an interpolated window start.
pub fn trailing_period_mean(times: &[f64], values: &[f64], omega: f64, n_periods: usize) -> Result<f64> {
    if times.len() != values.len() || times.len() < 2 {
        return Err(Error::InsufficientData("need at least two samples".into()));
    }
    if !(omega > 0.0) || n_periods == 0 {
        return Err(Error::InvalidParameter("omega and n_periods must be positive".into()));
    }
    let window = n_periods as f64 * 2.0 * PI / omega;
    let t_end = times[times.len() - 1];
    let t_start = t_end - window;
    if t_start < times[0] - 1e-12 {
        return Err(Error::InsufficientData(format!(
            "trajectory spans {} s, need {window} s",
            t_end - times[0]
        )));
    }
    let first = times.partition_point(|&t| t < t_start).max(1);
    let mut integral = 0.0;
    for i in first..times.len() {
        let (t0, t1) = (times[i - 1], times[i]);
        let (v0, v1) = (values[i - 1], values[i]);
        if t0 < t_start {
            let frac = (t_start - t0) / (t1 - t0);
            let v_start = v0 + frac * (v1 - v0);
            integral += 0.5 * (v_start + v1) * (t1 - t_start);
        } else {
            integral += 0.5 * (v0 + v1) * (t1 - t0);
        }
    }
    Ok(integral / window)
}

/// Mean forward translational momentum over the trailing periods.
pub fn mean_jlt_metric(
    params: &BeanieParams,
    traj: &Trajectory<BeanieState>,
    omega: f64,
    n_periods: usize,
) -> Result<f64> {
    let j_lt: Vec<f64> = traj
        .states()
        .iter()
        .map(|s| momenta_from_state(params, s).j_lt)
        .collect();
    trailing_period_mean(traj.times(), &j_lt, omega, n_periods)
}
