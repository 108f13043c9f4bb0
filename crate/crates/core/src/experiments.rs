//! Experiment drivers: frequency sweeps, heading analysis, multi-beanie
//! manipulation and the canned snake scenarios.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nalgebra::{DVector, SVector, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chaplygin::{
    mean_jlt_metric, pack_prescribed, prescribed_rhs, project_prescribed, simulate_forced, unpack_prescribed,
    BeanieParams, BeanieState, BodyFrameSine, PlatformInput, PlatformMotion,
};
use crate::error::{Error, Result};
use crate::io::{emit_trajectory_csv, read_trajectory_csv, TrajectoryTable};
use crate::se2::{fit_first_harmonic, integrate, Pose2, Trajectory};
use crate::snake::{
    constraint_residual, lift, reduce_theta, reduced_platform_displacement, simulate_snake_joint_driven,
    simulate_snake_platform_driven, Gait, Shape, SnakeParams, SnakeSample, ThetaReduction,
};

/// Number of trailing periods averaged by the sweep metric.
pub const SWEEP_PERIODS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub omega_min: f64,
    pub omega_max: f64,
    pub n_points: usize,
    pub amplitude: f64,
    pub t_final: f64,
    pub dt: f64,
    pub params: BeanieParams,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            omega_min: 0.3,
            omega_max: 2.0,
            n_points: 100,
            amplitude: 1.0,
            t_final: 100.0,
            dt: 1e-3,
            params: BeanieParams::unit(),
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.omega_min > 0.0 && self.omega_min < self.omega_max && self.omega_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < omega_min < omega_max, got [{}, {}]",
                self.omega_min, self.omega_max
            )));
        }
        if self.n_points < 2 {
            return Err(Error::InvalidParameter("sweep needs at least 2 points".into()));
        }
        if !self.amplitude.is_finite() {
            return Err(Error::InvalidParameter("amplitude must be finite".into()));
        }
        if !(self.dt > 0.0 && self.t_final >= self.dt && self.t_final.is_finite()) {
            return Err(Error::InvalidParameter("need 0 < dt <= t_final".into()));
        }
        Ok(())
    }

    /// The i-th sweep frequency. Grids that share a rational position
    /// `i/(N−1)` produce bit-identical frequencies.
    pub fn omega(&self, i: usize) -> f64 {
        let s = i as f64 / (self.n_points - 1) as f64;
        self.omega_min * (1.0 - s) + self.omega_max * s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub omega: f64,
    /// NaN when the run failed.
    pub mean_j_lt: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

/// Metric statistics inside and outside a frequency band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandSummary {
    pub in_band_mean: f64,
    pub out_band_mean: f64,
    pub in_band_max: f64,
    pub out_band_max: f64,
    pub in_band_count: usize,
    pub out_band_count: usize,
}

impl SweepResult {
    /// Statistics of converged rows split by `lo ≤ ω ≤ hi`.
    pub fn band_summary(&self, lo: f64, hi: f64) -> Option<BandSummary> {
        let (inside, outside): (Vec<&SweepRow>, Vec<&SweepRow>) = self
            .rows
            .iter()
            .filter(|r| r.converged)
            .partition(|r| r.omega >= lo && r.omega <= hi);
        if inside.is_empty() || outside.is_empty() {
            return None;
        }
        let mean = |v: &[&SweepRow]| v.iter().map(|r| r.mean_j_lt).sum::<f64>() / v.len() as f64;
        let max = |v: &[&SweepRow]| v.iter().map(|r| r.mean_j_lt).fold(f64::NEG_INFINITY, f64::max);
        Some(BandSummary {
            in_band_mean: mean(&inside),
            out_band_mean: mean(&outside),
            in_band_max: max(&inside),
            out_band_max: max(&outside),
            in_band_count: inside.len(),
            out_band_count: outside.len(),
        })
    }

    /// CSV with columns `omega,mean_J_LT,converged`; failed rows carry `nan`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("omega,mean_J_LT,converged\n");
        for r in &self.rows {
            let metric = if r.mean_j_lt.is_nan() {
                "nan".to_string()
            } else {
                format!("{:.16e}", r.mean_j_lt)
            };
            out.push_str(&format!("{:.16e},{metric},{}\n", r.omega, u8::from(r.converged)));
        }
        out
    }
}

/// Mean forward momentum of a beanie started from rest under body-frame
/// lateral platform actuation at `omega`.
pub fn sweep_point(spec: &SweepSpec, omega: f64) -> Result<f64> {
    let law = BodyFrameSine {
        amplitude: spec.amplitude,
        omega,
    };
    let traj = simulate_forced(
        &spec.params,
        &BeanieState::default(),
        PlatformInput::Prescribed(&law),
        spec.dt,
        spec.t_final,
    )?;
    mean_jlt_metric(&spec.params, &traj, omega, SWEEP_PERIODS)
}

/// Runs every sweep point in parallel; failures are recorded per row.
pub fn run_frequency_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let rows = (0..spec.n_points)
        .into_par_iter()
        .map(|i| {
            let omega = spec.omega(i);
            match sweep_point(spec, omega) {
                Ok(v) if v.is_finite() => SweepRow {
                    omega,
                    mean_j_lt: v,
                    converged: true,
                },
                _ => SweepRow {
                    omega,
                    mean_j_lt: f64::NAN,
                    converged: false,
                },
            }
        })
        .collect();
    Ok(SweepResult { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadingClass {
    StableOscillatory,
    Complex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadingTrace {
    pub omega: f64,
    pub times: Vec<f64>,
    pub theta: Vec<f64>,
    /// Largest change of the per-period mean heading after the transient.
    pub drift_per_period: f64,
    pub class: HeadingClass,
}

/// Fraction of each heading trace treated as transient.
pub const HEADING_TRANSIENT: f64 = 0.3;
/// Largest per-period drift of the mean heading still counted as stable.
pub const HEADING_DRIFT_TOL: f64 = 0.05;

/// Drift of the mean heading between consecutive whole periods after the
/// transient. Without actuation (`omega = 0`) it is the range of `θ`.
pub fn heading_drift(times: &[f64], theta: &[f64], omega: f64) -> Result<f64> {
    if times.len() != theta.len() || times.len() < 2 {
        return Err(Error::InsufficientData("heading trace too short".into()));
    }
    let start = (HEADING_TRANSIENT * (times.len() - 1) as f64).ceil() as usize;
    let (ts, th) = (&times[start..], &theta[start..]);
    if omega == 0.0 {
        let lo = th.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = th.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        return Ok(hi - lo);
    }
    let period = 2.0 * PI / omega;
    let dt = ts[1] - ts[0];
    let per = (period / dt).round() as usize;
    let whole = ts.len().saturating_sub(1) / per.max(1);
    if per < 2 || whole < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least two periods after the transient, have {whole}"
        )));
    }
    let means: Vec<f64> = (0..whole)
        .map(|k| th[k * per..(k + 1) * per].iter().sum::<f64>() / per as f64)
        .collect();
    Ok(means.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max))
}

pub fn classify_heading(drift_per_period: f64) -> HeadingClass {
    if drift_per_period < HEADING_DRIFT_TOL {
        HeadingClass::StableOscillatory
    } else {
        HeadingClass::Complex
    }
}

/// Heading traces under body-frame actuation at each frequency, classified
/// by the drift of their per-period mean.
pub fn run_heading_analysis(
    params: &BeanieParams,
    omegas: &[f64],
    amplitude: f64,
    dt: f64,
    t_final: f64,
) -> Result<Vec<HeadingTrace>> {
    params.validate()?;
    if omegas.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidParameter("frequencies must be finite and non-negative".into()));
    }
    omegas
        .par_iter()
        .map(|&omega| {
            let law = BodyFrameSine { amplitude, omega };
            let traj = simulate_forced(params, &BeanieState::default(), PlatformInput::Prescribed(&law), dt, t_final)?;
            let theta: Vec<f64> = traj.states().iter().map(|s| s.pos.theta).collect();
            let drift = heading_drift(traj.times(), &theta, omega)?;
            Ok(HeadingTrace {
                omega,
                times: traj.times().to_vec(),
                theta,
                drift_per_period: drift,
                class: classify_heading(drift),
            })
        })
        .collect()
}

/// Several beanies on one platform whose motion follows the heading of the
/// targeted beanie.
///
/// The platform is position-controlled, so the beanies interact only
/// through the shared prescribed motion.
pub fn run_multi_beanie(
    beanies: &[(BeanieParams, BeanieState)],
    targeted: usize,
    control: &BodyFrameSine,
    dt: f64,
    t_final: f64,
) -> Result<Vec<Trajectory<BeanieState>>> {
    if targeted >= beanies.len() {
        return Err(Error::InvalidParameter(format!(
            "targeted index {targeted} out of range for {} beanies",
            beanies.len()
        )));
    }
    for (p, s) in beanies {
        p.validate()?;
        let res = s.constraint_residual(p);
        if res.abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "initial state violates the no-slip constraint (residual {res:.3e})"
            )));
        }
    }
    let k = beanies.len();
    let mut y0 = DVector::zeros(10 * k);
    for (i, (_, s)) in beanies.iter().enumerate() {
        y0.rows_mut(10 * i, 10).copy_from(&pack_prescribed(s));
    }
    let block = |y: &DVector<f64>, i: usize| -> SVector<f64, 10> { SVector::from_column_slice(&y.as_slice()[10 * i..10 * i + 10]) };
    let states = integrate(
        y0,
        dt,
        t_final,
        |t, y| {
            let lead = block(y, targeted);
            let vel = control.velocity(t, lead[2]);
            let acc = control.acceleration(t, lead[2], lead[6]);
            let mut dy = DVector::zeros(10 * k);
            for (i, (p, _)) in beanies.iter().enumerate() {
                let d = prescribed_rhs(p, &block(y, i), vel, acc)?;
                dy.rows_mut(10 * i, 10).copy_from(&d);
            }
            Ok(dy)
        },
        |_, y| {
            for (i, (p, _)) in beanies.iter().enumerate() {
                let mut b = block(y, i);
                project_prescribed(p, &mut b);
                y.rows_mut(10 * i, 10).copy_from(&b);
            }
            Ok(())
        },
        |t, y| {
            let vel = control.velocity(t, y[10 * targeted + 2]);
            Ok((0..k).map(|i| unpack_prescribed(&block(y, i), vel)).collect::<Vec<_>>())
        },
    )?;
    Ok((0..k).map(|i| states.map(|all| all[i])).collect())
}

/// Columns of emitted snake trajectories.
pub const SNAKE_COLUMNS: [&str; 15] = [
    "t", "x", "y", "theta", "x_p", "y_p", "alpha1", "alpha2", "alpha1_dot", "alpha2_dot", "xi_x", "xi_y", "xi_theta",
    "u_p", "v_p",
];

pub fn snake_table(traj: &Trajectory<SnakeSample>) -> TrajectoryTable {
    let mut table = TrajectoryTable::new(SNAKE_COLUMNS).expect("static schema");
    for (t, s) in traj.iter() {
        table
            .push(vec![
                t,
                s.g_int.x,
                s.g_int.y,
                s.g_int.theta,
                s.platform[0],
                s.platform[1],
                s.shape.alpha1,
                s.shape.alpha2,
                s.shape_velocity[0],
                s.shape_velocity[1],
                s.body_velocity[0],
                s.body_velocity[1],
                s.body_velocity[2],
                s.platform_body_velocity[0],
                s.platform_body_velocity[1],
            ])
            .expect("row width");
    }
    table
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioId {
    /// (a) Joint-driven gait with platform reaction.
    GaitDemo,
    /// (b) Platform-driven passive snake with a fixed phase lag.
    PlatformPhase,
    /// (c) Platform-driven snake with a linearly growing phase lag.
    PhaseChirp,
    /// (d) Heading-reduced connection against the full simulation.
    ThetaReduction,
}

impl ScenarioId {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioId::GaitDemo => "gait_demo",
            ScenarioId::PlatformPhase => "platform_phase",
            ScenarioId::PhaseChirp => "phase_chirp",
            ScenarioId::ThetaReduction => "theta_reduction",
        }
    }
}

/// Body-frame platform velocity `A (sin ωt, sin(ωt − φ(t)))` with
/// `φ(t) = phase + chirp_rate · t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlatformDrive {
    pub amplitude: f64,
    pub omega: f64,
    pub phase: f64,
    pub chirp_rate: f64,
    pub initial_shape: Shape,
}

impl Default for PlatformDrive {
    fn default() -> Self {
        Self {
            amplitude: 0.003,
            omega: 1.0,
            phase: PI / 2.0,
            chirp_rate: PI / 200.0,
            initial_shape: Shape::new(0.0, -1.0),
        }
    }
}

impl PlatformDrive {
    pub fn phase_at(&self, t: f64) -> f64 {
        self.phase + self.chirp_rate * t
    }

    pub fn velocity(&self, t: f64) -> Vector2<f64> {
        let wt = self.omega * t;
        self.amplitude * Vector2::new(wt.sin(), (wt - self.phase_at(t)).sin())
    }

    pub fn validate(&self) -> Result<()> {
        let v = [
            self.amplitude,
            self.omega,
            self.phase,
            self.chirp_rate,
            self.initial_shape.alpha1,
            self.initial_shape.alpha2,
        ];
        if v.iter().any(|x| !x.is_finite()) || !(self.omega > 0.0) {
            return Err(Error::InvalidParameter("platform drive needs finite values and omega > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SnakeScenarioConfig {
    pub params: SnakeParams,
    /// Gait for the joint-driven demo.
    pub gait: Gait,
    /// Gait for the reduced-connection comparison; its heading should be
    /// periodic.
    pub reduction_gait: Gait,
    /// Cycles simulated in the joint-driven scenarios.
    pub cycles: usize,
    /// Platform input for the platform-driven scenarios.
    pub drive: PlatformDrive,
    /// Duration of the platform-driven scenarios.
    pub t_final: f64,
    pub dt: f64,
}

impl Default for SnakeScenarioConfig {
    fn default() -> Self {
        Self {
            params: SnakeParams::default(),
            gait: Gait::default(),
            reduction_gait: Gait {
                b1: 0.4,
                b2: 0.4,
                phase: PI / 2.0,
                c1: 0.8,
                c2: -0.8,
                omega: 1.0,
            },
            cycles: 3,
            drive: PlatformDrive::default(),
            t_final: 200.0,
            dt: 1e-3,
        }
    }
}

impl SnakeScenarioConfig {
    fn joint_gait(&self, id: ScenarioId) -> &Gait {
        if id == ScenarioId::ThetaReduction {
            &self.reduction_gait
        } else {
            &self.gait
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.gait.validate()?;
        self.reduction_gait.validate()?;
        self.drive.validate()?;
        if self.cycles == 0 {
            return Err(Error::InvalidParameter("cycles must be positive".into()));
        }
        if !(self.dt > 0.0 && self.t_final >= self.dt && self.t_final.is_finite()) {
            return Err(Error::InvalidParameter("need 0 < dt <= t_final".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub id: ScenarioId,
    pub config: SnakeScenarioConfig,
    pub files: Vec<PathBuf>,
    pub summary: BTreeMap<String, f64>,
}

fn interp(times: &[f64], values: &[f64], t: f64) -> f64 {
    let i = times.partition_point(|&x| x <= t);
    if i == 0 {
        return values[0];
    }
    if i >= times.len() {
        return values[times.len() - 1];
    }
    let (t0, t1) = (times[i - 1], times[i]);
    values[i - 1] + (t - t0) / (t1 - t0) * (values[i] - values[i - 1])
}

fn table_column(table: &TrajectoryTable, name: &str) -> Result<Vec<f64>> {
    table
        .column(name)
        .ok_or_else(|| Error::InvalidParameter(format!("trajectory has no column {name:?}")))
}

/// Per-cycle heading change, body-frame displacement and platform
/// displacement, from cycle boundaries at multiples of `period`.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleStats {
    pub dtheta: Vec<f64>,
    pub body_dx: Vec<f64>,
    pub body_dy: Vec<f64>,
    pub platform: Vec<Vector2<f64>>,
    pub chord: Vec<f64>,
}

pub fn cycle_stats(table: &TrajectoryTable, period: f64) -> Result<CycleStats> {
    let t = table_column(table, "t")?;
    let col = |n| table_column(table, n);
    let (x, y, th, xp, yp) = (col("x")?, col("y")?, col("theta")?, col("x_p")?, col("y_p")?);
    let Some(&t_end) = t.last() else {
        return Err(Error::InsufficientData("empty trajectory".into()));
    };
    let cycles = ((t_end + 1e-9) / period).floor() as usize;
    let mut out = CycleStats {
        dtheta: vec![],
        body_dx: vec![],
        body_dy: vec![],
        platform: vec![],
        chord: vec![],
    };
    let pose = |s: f64| Pose2::new(interp(&t, &x, s), interp(&t, &y, s), interp(&t, &th, s));
    let plat = |s: f64| Vector2::new(interp(&t, &xp, s), interp(&t, &yp, s));
    for k in 0..cycles {
        let (a, b) = (k as f64 * period, (k + 1) as f64 * period);
        let (ga, gb) = (pose(a), pose(b));
        let rel = ga.inverse().compose(&gb);
        let (pa, pb) = (plat(a), plat(b));
        out.dtheta.push(gb.theta - ga.theta);
        out.body_dx.push(rel.x);
        out.body_dy.push(rel.y);
        out.platform.push(pb - pa);
        let world = (gb.position() + pb) - (ga.position() + pa);
        out.chord.push(world.norm());
    }
    Ok(out)
}

/// Largest wheel-slip residual implied by the velocities stored in a snake
/// trajectory table.
pub fn snake_table_residual(table: &TrajectoryTable, params: &SnakeParams) -> Result<f64> {
    let names = ["x", "y", "theta", "alpha1", "alpha2", "alpha1_dot", "alpha2_dot", "xi_x", "xi_y", "xi_theta"];
    let idx: Vec<usize> = names
        .iter()
        .map(|n| {
            table
                .columns()
                .iter()
                .position(|c| c == n)
                .ok_or_else(|| Error::InvalidParameter(format!("trajectory has no column {n:?}")))
        })
        .collect::<Result<_>>()?;
    let mut worst = 0.0f64;
    for row in table.rows() {
        let v = |k: usize| row[idx[k]];
        let g = Pose2::new(v(0), v(1), v(2));
        let b = Shape::new(v(3), v(4));
        let b_dot = Vector2::new(v(5), v(6));
        let xi = Vector3::new(v(7), v(8), v(9));
        let res = constraint_residual(&g, &b, &lift(g.theta, &xi), &b_dot, params);
        worst = worst.max(res.abs().max());
    }
    Ok(worst)
}

/// Number of strict sign changes in a sequence, skipping exact zeros.
pub fn sign_changes(values: &[f64]) -> usize {
    let signs: Vec<bool> = values.iter().filter(|v| **v != 0.0).map(|v| *v > 0.0).collect();
    signs.windows(2).filter(|w| w[0] != w[1]).count()
}

fn summarize(id: ScenarioId, cfg: &SnakeScenarioConfig, table: &TrajectoryTable) -> Result<BTreeMap<String, f64>> {
    let mut s = BTreeMap::new();
    s.insert("max_wheel_residual".to_string(), snake_table_residual(table, &cfg.params)?);
    match id {
        ScenarioId::GaitDemo | ScenarioId::ThetaReduction => {
            let gait = cfg.joint_gait(id);
            let c = cycle_stats(table, gait.period())?;
            let max_abs = c.dtheta.iter().map(|v| v.abs()).fold(0.0, f64::max);
            let min_dx = c.body_dx.iter().copied().fold(f64::INFINITY, f64::min);
            s.insert("cycles".into(), c.dtheta.len() as f64);
            s.insert("max_abs_cycle_dtheta".into(), max_abs);
            s.insert("min_cycle_body_dx".into(), min_dx);
            if let Some(p) = c.platform.last() {
                s.insert("last_cycle_platform_dx".into(), p[0]);
                s.insert("last_cycle_platform_dy".into(), p[1]);
            }
            if id == ScenarioId::ThetaReduction {
                let red = theta_reduction_from_table(gait, &cfg.params, table)?;
                let pred = reduced_platform_displacement(&red, gait, &cfg.params, 4096)?;
                let full = *c.platform.last().ok_or(Error::InsufficientData("no complete cycle".into()))?;
                s.insert("reduced_a1".into(), red.a1);
                s.insert("reduced_a2".into(), red.a2);
                s.insert("reduced_offset".into(), red.offset);
                s.insert("predicted_platform_dx".into(), pred[0]);
                s.insert("predicted_platform_dy".into(), pred[1]);
                s.insert("reduced_relative_error".into(), (pred - full).norm() / full.norm());
            }
        }
        ScenarioId::PlatformPhase | ScenarioId::PhaseChirp => {
            let curvature = cycle_curvature(table, 2.0 * PI / cfg.drive.omega)?;
            s.insert("cycles".into(), curvature.len() as f64);
            s.insert("curvature_sign_changes".into(), sign_changes(&curvature) as f64);
            s.insert("first_cycle_curvature".into(), curvature.first().copied().unwrap_or(0.0));
            s.insert("last_cycle_curvature".into(), curvature.last().copied().unwrap_or(0.0));
            let th = table_column(table, "theta")?;
            s.insert("net_dtheta".into(), th.last().copied().unwrap_or(0.0) - th[0]);
        }
    }
    Ok(s)
}

fn theta_reduction_from_table(gait: &Gait, params: &SnakeParams, table: &TrajectoryTable) -> Result<ThetaReduction> {
    let t = table_column(table, "t")?;
    let th = table_column(table, "theta")?;
    let fit = fit_first_harmonic(&t, &th, gait.omega)?;
    reduce_theta(gait, &fit, params)
}

/// Per-cycle curvature `Δθ / |Δp|` of the robot's inertial path.
pub fn cycle_curvature(table: &TrajectoryTable, period: f64) -> Result<Vec<f64>> {
    let c = cycle_stats(table, period)?;
    Ok(c.dtheta.iter().zip(&c.chord).map(|(d, l)| if *l > 0.0 { d / l } else { 0.0 }).collect())
}

/// Simulates a canned scenario, writes its trajectory under `out_dir` and
/// returns summary scalars recomputed from the written file.
pub fn run_snake_scenario(id: ScenarioId, cfg: &SnakeScenarioConfig, out_dir: &Path) -> Result<ScenarioReport> {
    cfg.validate()?;
    let traj = match id {
        ScenarioId::GaitDemo | ScenarioId::ThetaReduction => {
            let gait = cfg.joint_gait(id);
            // round up to the step grid so the last cycle boundary is covered
            let t_final = (cfg.cycles as f64 * gait.period() / cfg.dt).ceil() * cfg.dt;
            simulate_snake_joint_driven(&Pose2::IDENTITY, &Vector2::zeros(), gait, &cfg.params, cfg.dt, t_final)?
        }
        ScenarioId::PlatformPhase | ScenarioId::PhaseChirp => {
            let mut drive = cfg.drive;
            if id == ScenarioId::PlatformPhase {
                drive.chirp_rate = 0.0;
            }
            simulate_snake_platform_driven(
                &drive.initial_shape,
                &Pose2::IDENTITY,
                &Vector2::zeros(),
                |t| Ok(drive.velocity(t)),
                &cfg.params,
                cfg.dt,
                cfg.t_final,
            )?
        }
    };
    let table = snake_table(&traj);
    let in_memory = summarize(id, cfg, &table)?;
    let path = out_dir.join(format!("{}.csv", id.name()));
    emit_trajectory_csv(&table, &path)?;
    let reread = read_trajectory_csv(&path)?;
    let summary = summarize(id, cfg, &reread)?;
    let same = summary.len() == in_memory.len()
        && summary
            .iter()
            .zip(&in_memory)
            .all(|((ka, a), (kb, b))| ka == kb && (a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan())));
    if !same {
        return Err(Error::InvalidParameter(format!(
            "summary recomputed from {} differs from the in-memory summary",
            path.display()
        )));
    }
    Ok(ScenarioReport {
        id,
        config: cfg.clone(),
        files: vec![path],
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chaplygin::frequencies;

    #[test]
    fn sweep_grid_refines_exactly() {
        let a = SweepSpec::default();
        let b = SweepSpec {
            n_points: 2 * a.n_points - 1,
            ..a
        };
        for i in 0..a.n_points {
            assert_eq!(a.omega(i).to_bits(), b.omega(2 * i).to_bits());
        }
        assert_eq!(a.omega(0), 0.3);
        assert_eq!(a.omega(99), 2.0);
        assert!((1..100).all(|i| a.omega(i) > a.omega(i - 1)));
    }

    #[test]
    fn zero_amplitude_sweep_is_zero() {
        let spec = SweepSpec {
            omega_min: 1.0,
            n_points: 4,
            amplitude: 0.0,
            t_final: 40.0,
            dt: 2e-3,
            ..SweepSpec::default()
        };
        let res = run_frequency_sweep(&spec).unwrap();
        assert_eq!(res.rows.len(), 4);
        for r in &res.rows {
            assert!(r.converged);
            assert_eq!(r.mean_j_lt, 0.0);
        }
    }

    #[test]
    fn sweep_metric_is_step_converged() {
        let fine = SweepSpec::default();
        let coarse = SweepSpec { dt: 2e-3, ..fine };
        for omega in [0.6, 1.2, 1.8] {
            let a = sweep_point(&fine, omega).unwrap();
            let b = sweep_point(&coarse, omega).unwrap();
            assert!((a - b).abs() < 0.01 * a.abs(), "omega {omega}: {a} vs {b}");
        }
    }

    #[test]
    fn scenario_output_is_deterministic() {
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let cfg = SnakeScenarioConfig {
            cycles: 1,
            ..SnakeScenarioConfig::default()
        };
        let a = run_snake_scenario(ScenarioId::GaitDemo, &cfg, d1.path()).unwrap();
        let b = run_snake_scenario(ScenarioId::GaitDemo, &cfg, d2.path()).unwrap();
        assert_eq!(std::fs::read(&a.files[0]).unwrap(), std::fs::read(&b.files[0]).unwrap());
        assert_eq!(a.summary, b.summary);
    }

    #[test]
    fn sweep_rejects_bad_spec() {
        for spec in [
            SweepSpec {
                n_points: 1,
                ..SweepSpec::default()
            },
            SweepSpec {
                omega_min: 2.0,
                omega_max: 1.0,
                ..SweepSpec::default()
            },
            SweepSpec {
                dt: 0.0,
                ..SweepSpec::default()
            },
        ] {
            assert!(run_frequency_sweep(&spec).is_err());
        }
    }

    #[test]
    fn sweep_failures_are_isolated() {
        // a sweep too short for three periods at low frequency fails only those rows
        let spec = SweepSpec {
            omega_min: 0.5,
            omega_max: 4.0,
            n_points: 3,
            t_final: 10.0,
            dt: 1e-2,
            ..SweepSpec::default()
        };
        let res = run_frequency_sweep(&spec).unwrap();
        assert!(!res.rows[0].converged && res.rows[0].mean_j_lt.is_nan());
        assert!(res.rows[2].converged);
    }

    #[test]
    fn unactuated_heading_is_stable() {
        let traces = run_heading_analysis(&BeanieParams::unit(), &[0.0], 1.0, 1e-2, 20.0).unwrap();
        assert_eq!(traces[0].class, HeadingClass::StableOscillatory);
        assert_eq!(traces[0].drift_per_period, 0.0);
    }

    #[test]
    fn heading_drift_of_synthetic_traces() {
        let times: Vec<f64> = (0..10_001).map(|k| k as f64 * 1e-2).collect();
        let omega = 2.0;
        let steady: Vec<f64> = times.iter().map(|t| 0.3 + 0.5 * (omega * t).sin()).collect();
        assert!(heading_drift(&times, &steady, omega).unwrap() < 1e-3);
        let drifting: Vec<f64> = times.iter().map(|t| 0.1 * t + 0.5 * (omega * t).sin()).collect();
        let d = heading_drift(&times, &drifting, omega).unwrap();
        assert!((d - 0.1 * PI).abs() < 1e-2, "{d}");
        assert_eq!(classify_heading(d), HeadingClass::Complex);
    }

    #[test]
    fn targeted_beanie_matches_single_simulation() {
        let p = BeanieParams::unit();
        let control = BodyFrameSine {
            amplitude: 1.0,
            omega: 1.2,
        };
        let other = BeanieParams {
            mass: 2.0,
            ..p
        };
        let beanies = [
            (p, BeanieState::default()),
            (other, BeanieState::at_rest(1.0, 0.5, 0.7, 0.2)),
        ];
        let multi = run_multi_beanie(&beanies, 0, &control, 1e-3, 10.0).unwrap();
        let single = simulate_forced(&p, &BeanieState::default(), PlatformInput::Prescribed(&control), 1e-3, 10.0).unwrap();
        for (a, b) in multi[0].states().iter().zip(single.states()) {
            assert!((a.pos.x - b.pos.x).abs() < 1e-9 && (a.pos.theta - b.pos.theta).abs() < 1e-9);
            assert!((a.pos.x_p - b.pos.x_p).abs() < 1e-9);
        }
        // adding a third beanie leaves the others unchanged
        let mut three = beanies.to_vec();
        three.push((p, BeanieState::at_rest(-1.0, 0.0, 2.0, 0.0)));
        let multi3 = run_multi_beanie(&three, 0, &control, 1e-3, 10.0).unwrap();
        assert_eq!(multi3[1].states(), multi[1].states());
        assert!(run_multi_beanie(&beanies, 2, &control, 1e-3, 1.0).is_err());
        let (omega_nat, _) = frequencies(&p);
        assert!(control.omega > omega_nat);
    }

    #[test]
    fn heading_classes_follow_the_band() {
        let omegas = [0.5, 1.2, 1.8];
        let traces = run_heading_analysis(&BeanieParams::unit(), &omegas, 1.0, 1e-3, 100.0).unwrap();
        let classes: Vec<HeadingClass> = traces.iter().map(|t| t.class).collect();
        assert_eq!(
            classes,
            [HeadingClass::Complex, HeadingClass::StableOscillatory, HeadingClass::Complex]
        );
    }

    fn platform_frame_excursion(traj: &Trajectory<BeanieState>) -> f64 {
        traj.states().iter().map(|s| s.pos.x.hypot(s.pos.y)).fold(0.0, f64::max)
    }

    #[test]
    fn targeted_beanie_below_band_stays_local() {
        let p = BeanieParams::unit();
        let pair = [(p, BeanieState::default()), (BeanieParams { mass: 2.0, ..p }, BeanieState::default())];
        let run = |omega| {
            let control = BodyFrameSine { amplitude: 1.0, omega };
            run_multi_beanie(&pair, 0, &control, 1e-3, 200.0).unwrap()
        };
        let below = platform_frame_excursion(&run(0.95)[0]);
        let inside = platform_frame_excursion(&run(1.2)[0]);
        assert!(below < 0.05 * inside, "below {below} inside {inside}");
    }

    #[test]
    fn permuting_passive_beanies_changes_nothing() {
        let p = BeanieParams::unit();
        let control = BodyFrameSine { amplitude: 1.0, omega: 0.8 };
        let a = (BeanieParams { mass: 2.0, ..p }, BeanieState::at_rest(0.3, 0.1, 1.0, 0.0));
        let b = (BeanieParams { stiffness: 3.0, ..p }, BeanieState::at_rest(-0.2, 0.4, -0.5, 0.3));
        let lead = (p, BeanieState::default());
        let one = run_multi_beanie(&[lead, a, b], 0, &control, 1e-3, 5.0).unwrap();
        let two = run_multi_beanie(&[lead, b, a], 0, &control, 1e-3, 5.0).unwrap();
        assert_eq!(one[0].states(), two[0].states());
        assert_eq!(one[1].states(), two[2].states());
        assert_eq!(one[2].states(), two[1].states());
    }

    #[test]
    fn sign_change_counting() {
        assert_eq!(sign_changes(&[]), 0);
        assert_eq!(sign_changes(&[-1.0, -2.0, 0.0, 3.0, 4.0]), 1);
        assert_eq!(sign_changes(&[1.0, -1.0, 1.0]), 2);
    }

    #[test]
    fn gait_demo_scenario_summary_is_recomputed_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SnakeScenarioConfig {
            cycles: 2,
            ..SnakeScenarioConfig::default()
        };
        let report = run_snake_scenario(ScenarioId::GaitDemo, &cfg, dir.path()).unwrap();
        assert!(report.files[0].exists());
        assert!(report.summary["max_abs_cycle_dtheta"] < 0.01);
        assert!(report.summary["min_cycle_body_dx"] > 0.0);
        assert!(report.summary["max_wheel_residual"] < 1e-6);
        assert_eq!(report.summary["cycles"], 2.0);
    }

    #[test]
    fn platform_and_reduction_scenarios() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SnakeScenarioConfig::default();
        let chirp = run_snake_scenario(ScenarioId::PhaseChirp, &cfg, dir.path()).unwrap();
        assert_eq!(chirp.summary["curvature_sign_changes"], 1.0);
        assert!(chirp.summary["first_cycle_curvature"] < 0.0 && chirp.summary["last_cycle_curvature"] > 0.0);
        let fixed = run_snake_scenario(ScenarioId::PlatformPhase, &cfg, dir.path()).unwrap();
        assert_eq!(fixed.summary["curvature_sign_changes"], 0.0);
        let red = run_snake_scenario(ScenarioId::ThetaReduction, &cfg, dir.path()).unwrap();
        assert!(red.summary["reduced_relative_error"] < 0.1, "{:?}", red.summary);
        for r in [&chirp, &fixed, &red] {
            assert!(r.summary["max_wheel_residual"] < 1e-6, "{:?}", r.summary);
        }
    }
}
