//! Planar rigid motions, fixed-step integration and first-harmonic fitting.
//!
//! Everything here is shared by the snake and beanie models. Poses keep
//! their heading unwrapped so that net reorientation over a run stays
//! measurable; call [`Pose2::normalized`] when a canonical angle is needed.

use std::f64::consts::PI;
use std::ops::{Add, Mul};

use nalgebra::{DVector, Matrix2, Matrix3, SVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default integration step in seconds.
pub const DEFAULT_DT: f64 = 1e-3;

/// Wraps an angle into (−π, π].
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Planar rotation by `theta`.
pub fn rotation(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// An element of SE(2): position and heading.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub const IDENTITY: Pose2 = Pose2 {
        x: 0.0,
        y: 0.0,
        theta: 0.0,
    };

    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    pub fn normalized(self) -> Self {
        Self {
            theta: wrap_angle(self.theta),
            ..self
        }
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    /// Group product `self · other`.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let p = self.position() + rotation(self.theta) * other.position();
        Pose2::new(p.x, p.y, self.theta + other.theta)
    }

    pub fn inverse(&self) -> Pose2 {
        let p = -(rotation(-self.theta) * self.position());
        Pose2::new(p.x, p.y, -self.theta)
    }

    /// Distance between poses, comparing headings after normalization.
    pub fn distance(&self, other: &Pose2) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dt = wrap_angle(self.theta - other.theta);
        (dx * dx + dy * dy + dt * dt).sqrt()
    }

    /// Closed-form group exponential of a constant twist applied for `t` seconds.
    pub fn exp(xi: &BodyVelocity, t: f64) -> Pose2 {
        let w = xi.xi_theta * t;
        let (vx, vy) = (xi.xi_x * t, xi.xi_y * t);
        if w.abs() < 1e-12 {
            return Pose2::new(vx, vy, w);
        }
        let (s, c) = w.sin_cos();
        let a = s / w;
        let b = (1.0 - c) / w;
        Pose2::new(a * vx - b * vy, b * vx + a * vy, w)
    }
}

/// The lifted left action `T_e L_g`, mapping body velocities to world velocities.
pub fn left_lift(g: &Pose2) -> Matrix3<f64> {
    let (s, c) = g.theta.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Body-frame twist (longitudinal, lateral, angular).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BodyVelocity {
    pub xi_x: f64,
    pub xi_y: f64,
    pub xi_theta: f64,
}

impl BodyVelocity {
    pub fn new(xi_x: f64, xi_y: f64, xi_theta: f64) -> Result<Self> {
        if !(xi_x.is_finite() && xi_y.is_finite() && xi_theta.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            xi_x,
            xi_y,
            xi_theta,
        })
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.xi_x, self.xi_y, self.xi_theta)
    }

    /// World-frame velocity at pose `g`.
    pub fn to_world(&self, g: &Pose2) -> Vector3<f64> {
        left_lift(g) * self.as_vector()
    }
}

/// A vector space the fixed-step integrator can work over.
pub trait State: Clone {
    fn add_scaled(&self, k: &Self, h: f64) -> Self;
    fn all_finite(&self) -> bool;
}

impl<const N: usize> State for SVector<f64, N> {
    fn add_scaled(&self, k: &Self, h: f64) -> Self {
        self + k * h
    }
    fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

impl State for DVector<f64> {
    fn add_scaled(&self, k: &Self, h: f64) -> Self {
        self + k * h
    }
    fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

impl State for f64 {
    fn add_scaled(&self, k: &Self, h: f64) -> Self {
        self + k * h
    }
    fn all_finite(&self) -> bool {
        self.is_finite()
    }
}

/// One classical fourth-order Runge–Kutta step.
pub fn rk4_step<S, F>(f: &mut F, state: &S, t: f64, dt: f64) -> Result<S>
where
    S: State,
    F: FnMut(f64, &S) -> Result<S>,
{
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    let half = 0.5 * dt;
    let k1 = checked(f(t, state)?)?;
    let k2 = checked(f(t + half, &state.add_scaled(&k1, half))?)?;
    let k3 = checked(f(t + half, &state.add_scaled(&k2, half))?)?;
    let k4 = checked(f(t + dt, &state.add_scaled(&k3, dt))?)?;
    let next = state
        .add_scaled(&k1, dt / 6.0)
        .add_scaled(&k2, dt / 3.0)
        .add_scaled(&k3, dt / 3.0)
        .add_scaled(&k4, dt / 6.0);
    checked(next)
}

fn checked<S: State>(s: S) -> Result<S> {
    if s.all_finite() {
        Ok(s)
    } else {
        Err(Error::NonFinite)
    }
}

/// Uniformly sampled time series of states.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S> {
    times: Vec<f64>,
    states: Vec<S>,
    dt: f64,
}

impl<S> Trajectory<S> {
    pub fn new(times: Vec<f64>, states: Vec<S>, dt: f64) -> Result<Self> {
        if times.len() != states.len() {
            return Err(Error::InvalidParameter(format!(
                "{} times but {} states",
                times.len(),
                states.len()
            )));
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter("dt must be positive".into()));
        }
        let tol = 1e-9 * dt.max(times.last().copied().unwrap_or(0.0).abs() * 1e-3);
        for w in times.windows(2) {
            if !(w[1] > w[0]) || ((w[1] - w[0]) - dt).abs() > tol.max(1e-12) {
                return Err(Error::InvalidParameter(
                    "times must be strictly increasing with uniform spacing".into(),
                ));
            }
        }
        Ok(Self { times, states, dt })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[S] {
        &self.states
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &S)> {
        self.times.iter().copied().zip(self.states.iter())
    }

    pub fn last(&self) -> Option<(f64, &S)> {
        Some((*self.times.last()?, self.states.last()?))
    }

    pub fn map<T>(&self, f: impl FnMut(&S) -> T) -> Trajectory<T> {
        Trajectory {
            times: self.times.clone(),
            states: self.states.iter().map(f).collect(),
            dt: self.dt,
        }
    }
}

/// Number of fixed steps covering `t_final`.
pub fn step_count(dt: f64, t_final: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    if !(t_final >= dt && t_final.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "t_final ({t_final}) must be at least dt ({dt})"
        )));
    }
    Ok((t_final / dt + 1e-9).floor() as usize)
}

/// Fixed-step driver shared by all simulators.
///
/// `project` runs after every step (constraint projection hook); `sample`
/// turns each state into the stored record. Errors are stamped with the
/// time of the step that failed.
pub(crate) fn integrate<S, T>(
    y0: S,
    dt: f64,
    t_final: f64,
    mut rhs: impl FnMut(f64, &S) -> Result<S>,
    mut project: impl FnMut(f64, &mut S) -> Result<()>,
    mut sample: impl FnMut(f64, &S) -> Result<T>,
) -> Result<Trajectory<T>>
where
    S: State,
{
    let n = step_count(dt, t_final)?;
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    let mut y = y0;
    times.push(0.0);
    states.push(sample(0.0, &y).map_err(|e| e.at(0.0))?);
    for i in 0..n {
        let t = i as f64 * dt;
        let t_next = (i + 1) as f64 * dt;
        y = rk4_step(&mut rhs, &y, t, dt).map_err(|e| e.at(t))?;
        project(t_next, &mut y).map_err(|e| e.at(t_next))?;
        times.push(t_next);
        states.push(sample(t_next, &y).map_err(|e| e.at(t_next))?);
    }
    Ok(Trajectory { times, states, dt })
}

/// Integrates `ġ = T_e L_g ξ(t)` from `g0`.
pub fn reconstruct(
    g0: Pose2,
    mut xi_of_t: impl FnMut(f64) -> Result<BodyVelocity>,
    dt: f64,
    t_final: f64,
) -> Result<Trajectory<Pose2>> {
    let y0 = Vector3::new(g0.x, g0.y, g0.theta);
    integrate(
        y0,
        dt,
        t_final,
        |t, y: &Vector3<f64>| {
            let g = Pose2::new(y[0], y[1], y[2]);
            Ok(xi_of_t(t)?.to_world(&g))
        },
        |_, _| Ok(()),
        |_, y| Ok(Pose2::new(y[0], y[1], y[2])),
    )
}

/// `s(t) ≈ amplitude · cos(omega t − phase) + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirstHarmonicFit {
    pub amplitude: f64,
    pub phase: f64,
    pub offset: f64,
    pub omega: f64,
}

impl FirstHarmonicFit {
    pub fn eval(&self, t: f64) -> f64 {
        self.amplitude * (self.omega * t - self.phase).cos() + self.offset
    }
}

/// Least-squares fit of `Θ cos(ωt − ψ) + C` over the trailing whole number
/// of periods in a uniformly sampled series.
pub fn fit_first_harmonic(times: &[f64], values: &[f64], omega: f64) -> Result<FirstHarmonicFit> {
    if times.len() != values.len() {
        return Err(Error::InvalidParameter("times and values differ in length".into()));
    }
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(Error::InvalidParameter(format!("omega must be positive, got {omega}")));
    }
    let period = 2.0 * PI / omega;
    let (Some(&t_first), Some(&t_last)) = (times.first(), times.last()) else {
        return Err(Error::InsufficientData("empty series".into()));
    };
    let span = t_last - t_first;
    let dt = if times.len() > 1 { span / (times.len() - 1) as f64 } else { 0.0 };
    // Uniform samples cover [t, t + dt) each, so n samples span n·dt.
    let covered = span + dt;
    let periods = (covered / period + 1e-9).floor();
    if periods < 1.0 {
        return Err(Error::InsufficientData(format!(
            "series spans {covered} s, less than one period {period} s"
        )));
    }
    let window = ((periods * period / dt).round() as usize).clamp(3, times.len());
    let start = times.len() - window;

    let mut normal = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for (&t, &v) in times[start..].iter().zip(&values[start..]) {
        let (s, c) = (omega * t).sin_cos();
        let basis = Vector3::new(c, s, 1.0);
        normal += basis * basis.transpose();
        rhs += basis * v;
    }
    let coef = normal
        .cholesky()
        .ok_or(Error::SingularSystem("harmonic fit normal equations"))?
        .solve(&rhs);
    let (a, b, offset) = (coef[0], coef[1], coef[2]);
    let amplitude = a.hypot(b);
    let scale = values[start..].iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let phase = if amplitude <= 1e-12 * scale.max(1e-300) {
        0.0
    } else {
        wrap_angle(b.atan2(a))
    };
    Ok(FirstHarmonicFit {
        amplitude,
        phase,
        offset,
        omega,
    })
}

impl Add for BodyVelocity {
    type Output = BodyVelocity;
    fn add(self, rhs: Self) -> Self {
        BodyVelocity {
            xi_x: self.xi_x + rhs.xi_x,
            xi_y: self.xi_y + rhs.xi_y,
            xi_theta: self.xi_theta + rhs.xi_theta,
        }
    }
}

impl Mul<f64> for BodyVelocity {
    type Output = BodyVelocity;
    fn mul(self, k: f64) -> Self {
        BodyVelocity {
            xi_x: self.xi_x * k,
            xi_y: self.xi_y * k,
            xi_theta: self.xi_theta * k,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn left_lift_identity_and_quarter_turn() {
        assert_eq!(left_lift(&Pose2::IDENTITY), Matrix3::identity());
        let q = left_lift(&Pose2::new(0.0, 0.0, PI / 2.0));
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_abs_diff_eq!(q, expected, epsilon = 1e-15);
    }

    #[test]
    fn body_velocity_rejects_non_finite() {
        assert!(BodyVelocity::new(f64::NAN, 0.0, 0.0).is_err());
        assert!(BodyVelocity::new(0.0, f64::INFINITY, 0.0).is_err());
        assert!(BodyVelocity::new(0.0, 0.0, 1.0).is_ok());
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_abs_diff_eq!(wrap_angle(-PI), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn rk4_zero_field_keeps_state() {
        let y = Vector3::new(1.0, -2.0, 3.0);
        let mut f = |_t: f64, _y: &Vector3<f64>| Ok(Vector3::zeros());
        assert_eq!(rk4_step(&mut f, &y, 0.0, 0.1).unwrap(), y);
    }

    #[test]
    fn rk4_scalar_exponential() {
        let mut f = |_t: f64, y: &f64| Ok(*y);
        let y = rk4_step(&mut f, &1.0, 0.0, 0.1).unwrap();
        // local error of RK4 is dt^5/120 for y' = y
        assert!((y - 0.1f64.exp()).abs() < 1e-7);
    }

    #[test]
    fn rk4_propagates_non_finite() {
        let mut f = |_t: f64, _y: &f64| Ok(f64::NAN);
        assert!(matches!(rk4_step(&mut f, &1.0, 0.0, 0.1), Err(Error::NonFinite)));
    }

    #[test]
    fn reconstruct_zero_velocity_is_constant() {
        let g0 = Pose2::new(1.0, 2.0, 0.3);
        let traj = reconstruct(g0, |_| Ok(BodyVelocity::default()), 1e-2, 1.0).unwrap();
        assert_eq!(traj.states()[0], g0);
        assert!(traj.states().iter().all(|g| *g == g0));
    }

    #[test]
    fn reconstruct_pure_rotation() {
        let w = 0.7;
        let traj = reconstruct(
            Pose2::IDENTITY,
            |_| BodyVelocity::new(0.0, 0.0, w),
            1e-3,
            2.0,
        )
        .unwrap();
        for (t, g) in traj.iter() {
            assert_abs_diff_eq!(g.theta, w * t, epsilon = 1e-12);
            assert_abs_diff_eq!(g.x, 0.0, epsilon = 1e-15);
            assert_abs_diff_eq!(g.y, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn reconstruct_unit_circle_closes() {
        let xi = BodyVelocity::new(1.0, 0.0, 1.0).unwrap();
        let traj = reconstruct(Pose2::IDENTITY, |_| Ok(xi), 1e-3, 2.0 * PI).unwrap();
        let (t_end, end) = traj.last().unwrap();
        assert!(end.distance(&Pose2::exp(&xi, t_end)) < 1e-10);
        // 2π is not a whole number of steps; finish with one short step
        let mut f = |_t: f64, y: &Vector3<f64>| Ok(xi.to_world(&Pose2::new(y[0], y[1], y[2])));
        let y = Vector3::new(end.x, end.y, end.theta);
        let y = rk4_step(&mut f, &y, t_end, 2.0 * PI - t_end).unwrap();
        let closed = Pose2::new(y[0], y[1], y[2]);
        assert!(closed.distance(&Pose2::IDENTITY) < 1e-6);
    }

    #[test]
    fn reconstruct_reports_time_of_failure() {
        let err = reconstruct(
            Pose2::IDENTITY,
            |t| BodyVelocity::new(if t > 0.5 { f64::NAN } else { 1.0 }, 0.0, 0.0),
            0.1,
            1.0,
        )
        .unwrap_err();
        let t = err.abort_time().unwrap();
        assert!(t > 0.39 && t < 0.51, "aborted at {t}");
    }

    #[test]
    fn rk4_fourth_order_on_circle() {
        // Richardson comparison against the closed-form exponential.
        let xi = BodyVelocity::new(1.0, 0.0, 1.0).unwrap();
        let t_final = 4.0;
        let err = |dt: f64| {
            let traj = reconstruct(Pose2::IDENTITY, |_| Ok(xi), dt, t_final).unwrap();
            let (t, g) = traj.last().unwrap();
            g.distance(&Pose2::exp(&xi, t))
        };
        let ratio = err(0.1) / err(0.05);
        assert!(ratio > 14.0 && ratio < 18.0, "ratio {ratio}");
    }

    #[test]
    fn harmonic_fit_exact_input() {
        let w = 1.3;
        let dt = 1e-3;
        let times: Vec<f64> = (0..20_000).map(|i| i as f64 * dt).collect();
        let values: Vec<f64> = times.iter().map(|t| 2.0 * (w * t - 0.3).cos() + 0.5).collect();
        let fit = fit_first_harmonic(&times, &values, w).unwrap();
        assert_abs_diff_eq!(fit.amplitude, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.phase, 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.offset, 0.5, epsilon = 1e-12);
        assert_eq!(fit.omega, w);
    }

    #[test]
    fn harmonic_fit_constant() {
        let times: Vec<f64> = (0..10_000).map(|i| i as f64 * 1e-3).collect();
        let values = vec![0.75; times.len()];
        let fit = fit_first_harmonic(&times, &values, 2.0).unwrap();
        assert!(fit.amplitude < 1e-12);
        assert_eq!(fit.phase, 0.0);
        assert_abs_diff_eq!(fit.offset, 0.75, epsilon = 1e-12);
    }

    #[test]
    fn harmonic_fit_rejects_third_harmonic() {
        // Fourier projection of cos(3ωt) onto cos(ωt) vanishes over whole periods.
        let w = 1.0;
        let dt = 1e-3;
        let times: Vec<f64> = (0..40_000).map(|i| i as f64 * dt).collect();
        let values: Vec<f64> = times
            .iter()
            .map(|t| (w * t).cos() + 0.05 * (3.0 * w * t).cos())
            .collect();
        let fit = fit_first_harmonic(&times, &values, w).unwrap();
        assert!((fit.amplitude - 1.0).abs() < 1e-3);
    }

    #[test]
    fn harmonic_fit_needs_one_period() {
        let times: Vec<f64> = (0..100).map(|i| i as f64 * 1e-2).collect();
        let values = vec![0.0; 100];
        assert!(matches!(
            fit_first_harmonic(&times, &values, 1.0),
            Err(Error::InsufficientData(_))
        ));
    }

    proptest! {
        #[test]
        fn left_lift_is_rotation_block(theta in -10.0f64..10.0) {
            let m = left_lift(&Pose2::new(0.0, 0.0, theta));
            let block = m.fixed_view::<2, 2>(0, 0).into_owned();
            let should_be_identity = block.transpose() * block;
            prop_assert!((should_be_identity - Matrix2::identity()).abs().max() < 1e-14);
            prop_assert!((m.determinant() - 1.0).abs() < 1e-14);
            prop_assert_eq!(m[(2, 0)], 0.0);
            prop_assert_eq!(m[(2, 1)], 0.0);
            prop_assert_eq!(m[(2, 2)], 1.0);
        }

        #[test]
        fn left_lift_composes(a in -5.0f64..5.0, b in -5.0f64..5.0) {
            let ab = left_lift(&Pose2::new(0.0, 0.0, a)) * left_lift(&Pose2::new(0.0, 0.0, b));
            let direct = left_lift(&Pose2::new(0.0, 0.0, a + b));
            prop_assert!((ab - direct).abs().max() < 1e-12);
        }

        #[test]
        fn normalize_lands_in_half_open_interval(theta in -100.0f64..100.0) {
            let t = Pose2::new(0.0, 0.0, theta).normalized().theta;
            prop_assert!(t > -PI && t <= PI);
            prop_assert!(((theta - t) / (2.0 * PI) - ((theta - t) / (2.0 * PI)).round()).abs() < 1e-9);
        }

        #[test]
        fn constant_twist_matches_exponential(vx in -2.0f64..2.0, vy in -2.0f64..2.0, w in -2.0f64..2.0) {
            let xi = BodyVelocity::new(vx, vy, w).unwrap();
            let traj = reconstruct(Pose2::IDENTITY, |_| Ok(xi), 1e-2, 1.0).unwrap();
            let (t, g) = traj.last().unwrap();
            prop_assert!(g.distance(&Pose2::exp(&xi, t)) < 1e-8);
        }

        #[test]
        fn harmonic_fit_recovers_parameters(
            amplitude in 0.1f64..3.0,
            phase in -3.0f64..3.0,
            offset in -2.0f64..2.0,
            omega in 0.3f64..3.0,
            periods in 1usize..5,
        ) {
            let period = 2.0 * PI / omega;
            let n = 400 * periods;
            let h = periods as f64 * period / n as f64;
            let times: Vec<f64> = (0..n).map(|k| k as f64 * h).collect();
            let values: Vec<f64> = times.iter().map(|t| amplitude * (omega * t - phase).cos() + offset).collect();
            let fit = fit_first_harmonic(&times, &values, omega).unwrap();
            for (t, v) in times.iter().zip(&values) {
                prop_assert!((fit.eval(*t) - v).abs() < 1e-10);
            }
            prop_assert!((fit.amplitude - amplitude).abs() < 1e-10);
            prop_assert!((fit.offset - offset).abs() < 1e-10);
        }
    }
}
