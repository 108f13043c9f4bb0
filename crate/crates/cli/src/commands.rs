//! Subcommand implementations. Each writes its outputs under the run's
//! output directory and returns the paths it wrote.

use std::path::{Path, PathBuf};

use nonholomech::chaplygin::{
    derived_constants, frequencies, momenta_from_state, simulate_forced, simulate_passive, stability_jacobian_eigenvalues,
    stability_polynomial_roots, BeanieParams, BeanieState, BodyFrameSine, PlatformInput,
};
use nonholomech::experiments::{
    run_frequency_sweep, run_heading_analysis, run_multi_beanie, run_snake_scenario, snake_table,
    snake_table_residual, HeadingClass, ScenarioId, ScenarioReport,
};
use nonholomech::io::{emit_field_grid, emit_trajectory_csv, write_atomic, TrajectoryTable};
use nonholomech::se2::{Pose2, Trajectory};
use nonholomech::snake::{exterior_derivative_field, internal_field_symmetry, simulate_snake_joint_driven};
use serde::Serialize;

use crate::config::{Command, RunConfig};
use crate::CliError;

pub const BEANIE_COLUMNS: [&str; 17] = [
    "t",
    "x",
    "y",
    "theta",
    "phi",
    "x_p",
    "y_p",
    "x_dot",
    "y_dot",
    "theta_dot",
    "phi_dot",
    "x_p_dot",
    "y_p_dot",
    "J_LT",
    "J_RW",
    "J_X",
    "J_Y",
];

pub const PASSIVE_COLUMNS: [&str; 11] = ["t", "x", "y", "theta", "phi", "x_p", "y_p", "J_LT", "J_RW", "J_X", "J_Y"];

pub fn run(cmd: Command, cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    match cmd {
        Command::SnakeField => snake_field(cfg, out),
        Command::SnakeGait => snake_scenario(ScenarioId::GaitDemo, cfg, out),
        Command::SnakePlatform => {
            let id = if cfg.snake.drive.chirp_rate == 0.0 {
                ScenarioId::PlatformPhase
            } else {
                ScenarioId::PhaseChirp
            };
            snake_scenario(id, cfg, out)
        }
        Command::SnakeReduceTheta => snake_scenario(ScenarioId::ThetaReduction, cfg, out),
        Command::ChaplyginPassive => chaplygin_passive(cfg, out),
        Command::ChaplyginForced => chaplygin_forced(cfg, out),
        Command::ChaplyginSweep => chaplygin_sweep(cfg, out),
        Command::ChaplyginHeadings => chaplygin_headings(cfg, out),
        Command::ChaplyginMulti => chaplygin_multi(cfg, out),
        Command::Validate => validate(cfg, out),
    }
}

fn write_toml<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let text = toml::to_string(value).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn snake_field(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let spec = cfg.field.grid(cfg.numerics.grid_resolution);
    let mut files = vec![];
    for &conn in &cfg.field.connections {
        let kind = cfg.field.kind(conn);
        let tag = toml::Value::try_from(conn).expect("enum serializes");
        for (row, name) in kind.row_names().iter().enumerate() {
            let grid = exterior_derivative_field(kind, row, &spec, &cfg.snake.params)?;
            let path = out.join(format!("field_{}_{name}.txt", tag.as_str().unwrap_or("unknown")));
            emit_field_grid(&grid, &path)?;
            files.push(path);
        }
    }
    Ok(files)
}

fn snake_scenario(id: ScenarioId, cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let report: ScenarioReport = run_snake_scenario(id, &cfg.snake_scenario(), out)?;
    for (k, v) in &report.summary {
        println!("{}: {k} = {v:.6e}", id.name());
    }
    let path = out.join(format!("{}_summary.toml", id.name()));
    write_toml(&report, &path)?;
    let mut files = report.files;
    files.push(path);
    Ok(files)
}

fn beanie_row(params: &BeanieParams, t: f64, s: &BeanieState) -> Vec<f64> {
    let j = momenta_from_state(params, s);
    let (p, v) = (&s.pos, &s.vel);
    vec![
        t, p.x, p.y, p.theta, p.phi, p.x_p, p.y_p, v.x, v.y, v.theta, v.phi, v.x_p, v.y_p, j.j_lt, j.j_rw, j.j_x, j.j_y,
    ]
}

fn beanie_table(params: &BeanieParams, traj: &Trajectory<BeanieState>) -> TrajectoryTable {
    let mut table = TrajectoryTable::new(BEANIE_COLUMNS).expect("static schema");
    for (t, s) in traj.iter() {
        table.push(beanie_row(params, t, s)).expect("row width");
    }
    table
}

fn chaplygin_passive(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let params = &cfg.beanie.params;
    let traj = simulate_passive(params, &cfg.beanie.initial.state(), cfg.numerics.dt, cfg.numerics.t_final)?;
    let mut table = TrajectoryTable::new(PASSIVE_COLUMNS).expect("static schema");
    for (t, s) in traj.iter() {
        let j = momenta_from_state(params, &s.full);
        let p = &s.full.pos;
        table
            .push(vec![t, p.x, p.y, p.theta, p.phi, p.x_p, p.y_p, j.j_lt, j.j_rw, j.j_x, j.j_y])
            .expect("row width");
    }
    let path = out.join("passive.csv");
    emit_trajectory_csv(&table, &path)?;
    Ok(vec![path])
}

fn chaplygin_forced(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let params = &cfg.beanie.params;
    let law = BodyFrameSine {
        amplitude: cfg.forced.amplitude,
        omega: cfg.forced.omega,
    };
    let input = if cfg.forced.free_platform {
        PlatformInput::Free
    } else {
        PlatformInput::Prescribed(&law)
    };
    let traj = simulate_forced(
        params,
        &cfg.beanie.initial.state(),
        input,
        cfg.numerics.dt,
        cfg.numerics.t_final,
    )?;
    let path = out.join("forced.csv");
    emit_trajectory_csv(&beanie_table(params, &traj), &path)?;
    Ok(vec![path])
}

fn chaplygin_sweep(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let result = run_frequency_sweep(&cfg.sweep_spec())?;
    let failed = result.rows.iter().filter(|r| !r.converged).count();
    if failed > 0 {
        eprintln!("warning: {failed} sweep points did not converge");
    }
    let (omega_nat, omega_mod) = frequencies(&cfg.beanie.params);
    if let Some(b) = result.band_summary(omega_nat, omega_mod) {
        println!(
            "band mean {:.6e} ({} points), out-of-band mean {:.6e} ({} points)",
            b.in_band_mean, b.in_band_count, b.out_band_mean, b.out_band_count
        );
    }
    let path = out.join("sweep.csv");
    write_atomic(&path, result.to_csv().as_bytes())?;
    Ok(vec![path])
}

#[derive(Serialize)]
struct HeadingSummary {
    traces: Vec<HeadingEntry>,
}

#[derive(Serialize)]
struct HeadingEntry {
    omega: f64,
    column: String,
    drift_per_period: f64,
    class: HeadingClass,
}

fn chaplygin_headings(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let traces = run_heading_analysis(
        &cfg.beanie.params,
        &cfg.headings.omegas,
        cfg.headings.amplitude,
        cfg.numerics.dt,
        cfg.numerics.t_final,
    )?;
    let columns: Vec<String> = std::iter::once("t".to_string())
        .chain((0..traces.len()).map(|i| format!("theta_{i}")))
        .collect();
    let mut table = TrajectoryTable::new(columns.clone())?;
    if let Some(first) = traces.first() {
        for (k, &t) in first.times.iter().enumerate() {
            let mut row = vec![t];
            row.extend(traces.iter().map(|tr| tr.theta[k]));
            table.push(row)?;
        }
    }
    let csv = out.join("headings.csv");
    emit_trajectory_csv(&table, &csv)?;
    let summary = HeadingSummary {
        traces: traces
            .iter()
            .zip(&columns[1..])
            .map(|(tr, c)| HeadingEntry {
                omega: tr.omega,
                column: c.clone(),
                drift_per_period: tr.drift_per_period,
                class: tr.class,
            })
            .collect(),
    };
    for e in &summary.traces {
        println!("omega {:.4}: drift {:.3e} rad/period, {:?}", e.omega, e.drift_per_period, e.class);
    }
    let toml_path = out.join("headings_summary.toml");
    write_toml(&summary, &toml_path)?;
    Ok(vec![csv, toml_path])
}

fn chaplygin_multi(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let m = &cfg.multi;
    let beanies: Vec<(BeanieParams, BeanieState)> = m.beanies.iter().map(|b| (b.params, b.initial.state())).collect();
    let control = BodyFrameSine {
        amplitude: m.amplitude,
        omega: m.omega,
    };
    let trajs = run_multi_beanie(&beanies, m.targeted, &control, cfg.numerics.dt, cfg.numerics.t_final)?;
    let mut files = vec![];
    for (k, (traj, (params, _))) in trajs.iter().zip(&beanies).enumerate() {
        let path = out.join(format!("multi_beanie_{k}.csv"));
        emit_trajectory_csv(&beanie_table(params, traj), &path)?;
        files.push(path);
    }
    Ok(files)
}

/// One line of the invariant report.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
}

impl Check {
    fn below(name: &'static str, value: f64, limit: f64) -> Self {
        Self {
            name,
            value,
            limit,
            pass: value < limit,
        }
    }

    fn zero(name: &'static str, value: f64) -> Self {
        Self {
            name,
            value,
            limit: 0.0,
            pass: value == 0.0,
        }
    }

    fn at_least(name: &'static str, value: f64, limit: f64) -> Self {
        Self {
            name,
            value,
            limit,
            pass: value >= limit,
        }
    }
}

/// Duration of each simulation inside the invariant suite.
const VALIDATE_HORIZON: f64 = 20.0;

pub fn invariant_suite(cfg: &RunConfig) -> Result<Vec<Check>, CliError> {
    let tol = cfg.numerics.residual_tolerance;
    let dt = cfg.numerics.dt;
    let horizon = cfg.numerics.t_final.min(VALIDATE_HORIZON);
    let params = &cfg.beanie.params;
    let mut checks = vec![];

    let passive = simulate_passive(params, &cfg.beanie.initial.state(), dt, horizon)?;
    let slip = passive
        .states()
        .iter()
        .map(|s| s.full.constraint_residual(params).abs())
        .fold(0.0, f64::max);
    checks.push(Check::below("passive no-slip residual", slip, tol));
    let inv0 = passive.states()[0].reduced.lateral_invariant();
    let drift = passive
        .states()
        .iter()
        .map(|s| (s.reduced.lateral_invariant() - inv0).abs())
        .fold(0.0, f64::max);
    let drift = if inv0 > 0.0 { drift / inv0 } else { drift };
    checks.push(Check::below("reduced momentum invariant drift", drift, 1e-8));

    let law = BodyFrameSine {
        amplitude: cfg.forced.amplitude,
        omega: cfg.forced.omega,
    };
    let forced = simulate_forced(
        params,
        &cfg.beanie.initial.state(),
        PlatformInput::Prescribed(&law),
        dt,
        horizon,
    )?;
    let slip = forced
        .states()
        .iter()
        .map(|s| s.constraint_residual(params).abs())
        .fold(0.0, f64::max);
    checks.push(Check::below("forced no-slip residual", slip, tol));

    let gait = &cfg.snake.gait;
    let t_gait = (gait.period() / dt).ceil() * dt;
    let snake = simulate_snake_joint_driven(&Pose2::IDENTITY, &Default::default(), gait, &cfg.snake.params, dt, t_gait)?;
    let wheel = snake_table_residual(&snake_table(&snake), &cfg.snake.params)?;
    checks.push(Check::below("snake wheel residual", wheel, tol));

    let sym = internal_field_symmetry(2.5, cfg.numerics.grid_resolution, &cfg.snake.params)?;
    checks.push(Check::at_least("xi_x field lower bound", sym.min_xi_x, -1e-12));
    checks.push(Check::zero("xi_y field magnitude", sym.max_abs_xi_y));
    checks.push(Check::below("xi_theta antisymmetry", sym.theta_antisymmetry, 1e-8));

    let consts = derived_constants(params);
    let (mut max_re, mut mismatch) = (f64::NEG_INFINITY, 0.0f64);
    for k in 0..=12 {
        let r_c = 10f64.powf(-3.0 + 0.5 * k as f64);
        let roots = stability_polynomial_roots(&consts, r_c);
        let eig = stability_jacobian_eigenvalues(&consts, r_c);
        for (a, b) in roots.iter().zip(&eig) {
            max_re = max_re.max(a.re);
            mismatch = mismatch.max((a - b).norm());
        }
    }
    checks.push(Check::below("stability root real part", max_re, 0.0));
    checks.push(Check::below("roots vs jacobian eigenvalues", mismatch, 1e-9));
    Ok(checks)
}

fn validate(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let checks = invariant_suite(cfg)?;
    let mut report = String::new();
    for c in &checks {
        let line = format!(
            "{} {}: {:.3e} (limit {:.3e})",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.limit
        );
        println!("{line}");
        report.push_str(&line);
        report.push('\n');
    }
    let path = out.join("validate.txt");
    write_atomic(&path, report.as_bytes())?;
    let failed = checks.iter().filter(|c| !c.pass).count();
    if failed > 0 {
        return Err(CliError::ValidationFailed(failed));
    }
    Ok(vec![path])
}
