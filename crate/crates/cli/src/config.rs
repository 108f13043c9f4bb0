//! Run configuration: TOML file, command-line overrides and validation.

use std::f64::consts::{FRAC_PI_4, PI};
use std::fmt;
use std::path::PathBuf;

use nonholomech::chaplygin::{BeanieParams, BeanieState};
use nonholomech::experiments::{PlatformDrive, SnakeScenarioConfig, SweepSpec};
use nonholomech::snake::{ConnectionKind, Gait, GridSpec, SnakeParams};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    SnakeField,
    SnakeGait,
    SnakePlatform,
    SnakeReduceTheta,
    ChaplyginPassive,
    ChaplyginForced,
    ChaplyginSweep,
    ChaplyginHeadings,
    ChaplyginMulti,
    Validate,
}

impl Command {
    pub const ALL: [Command; 10] = [
        Command::SnakeField,
        Command::SnakeGait,
        Command::SnakePlatform,
        Command::SnakeReduceTheta,
        Command::ChaplyginPassive,
        Command::ChaplyginForced,
        Command::ChaplyginSweep,
        Command::ChaplyginHeadings,
        Command::ChaplyginMulti,
        Command::Validate,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Command::SnakeField => "snake-field",
            Command::SnakeGait => "snake-gait",
            Command::SnakePlatform => "snake-platform",
            Command::SnakeReduceTheta => "snake-reduce-theta",
            Command::ChaplyginPassive => "chaplygin-passive",
            Command::ChaplyginForced => "chaplygin-forced",
            Command::ChaplyginSweep => "chaplygin-sweep",
            Command::ChaplyginHeadings => "chaplygin-headings",
            Command::ChaplyginMulti => "chaplygin-multi",
            Command::Validate => "validate",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Numerics {
    pub dt: f64,
    pub t_final: f64,
    /// Nodes per side of field grids.
    pub grid_resolution: usize,
    /// Largest constraint residual accepted by `validate`.
    pub residual_tolerance: f64,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_final: 200.0,
            grid_resolution: 101,
            residual_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SnakeSection {
    pub params: SnakeParams,
    pub gait: Gait,
    pub reduction_gait: Gait,
    pub cycles: usize,
    pub drive: PlatformDrive,
}

impl Default for SnakeSection {
    fn default() -> Self {
        let s = SnakeScenarioConfig::default();
        Self {
            params: s.params,
            gait: s.gait,
            reduction_gait: s.reduction_gait,
            cycles: s.cycles,
            drive: s.drive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldConnection {
    Internal,
    External,
    Theta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldSection {
    pub connections: Vec<FieldConnection>,
    /// Heading used by the `theta` connection.
    pub theta: f64,
    /// `[a1_min, a1_max, a2_min, a2_max]`.
    pub bounds: [f64; 4],
}

impl Default for FieldSection {
    fn default() -> Self {
        Self {
            connections: vec![FieldConnection::Internal, FieldConnection::External, FieldConnection::Theta],
            theta: 0.0,
            bounds: [-2.5, 2.5, -2.5, 2.5],
        }
    }
}

impl FieldSection {
    pub fn kind(&self, c: FieldConnection) -> ConnectionKind {
        match c {
            FieldConnection::Internal => ConnectionKind::Internal,
            FieldConnection::External => ConnectionKind::External,
            FieldConnection::Theta => ConnectionKind::Theta(self.theta),
        }
    }

    pub fn grid(&self, n: usize) -> GridSpec {
        let [a1_min, a1_max, a2_min, a2_max] = self.bounds;
        GridSpec {
            a1_min,
            a1_max,
            a2_min,
            a2_max,
            n,
        }
    }
}

/// Vehicle configuration relative to the platform, released at rest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub phi: f64,
}

impl Default for InitialPose {
    fn default() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            theta: -FRAC_PI_4,
            phi: PI,
        }
    }
}

impl InitialPose {
    pub fn state(&self) -> BeanieState {
        BeanieState::at_rest(self.x, self.y, self.theta, self.phi)
    }

    fn validate(&self, block: &str) -> Result<(), CliError> {
        if [self.x, self.y, self.theta, self.phi].iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(CliError::Config(format!("{block}: initial pose must be finite")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeanieSection {
    pub params: BeanieParams,
    pub initial: InitialPose,
}

impl Default for BeanieSection {
    fn default() -> Self {
        Self {
            params: BeanieParams::unit(),
            initial: InitialPose::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForcedSection {
    pub amplitude: f64,
    pub omega: f64,
    /// Leave the platform unactuated instead of driving it.
    pub free_platform: bool,
}

impl Default for ForcedSection {
    fn default() -> Self {
        Self {
            amplitude: 1.0,
            omega: 1.2,
            free_platform: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub omega_min: f64,
    pub omega_max: f64,
    pub n_points: usize,
    pub amplitude: f64,
    /// Duration of each sweep run; independent of `numerics.t_final`.
    pub t_final: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        let s = SweepSpec::default();
        Self {
            omega_min: s.omega_min,
            omega_max: s.omega_max,
            n_points: s.n_points,
            amplitude: s.amplitude,
            t_final: s.t_final,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadingSection {
    pub omegas: Vec<f64>,
    pub amplitude: f64,
}

impl Default for HeadingSection {
    fn default() -> Self {
        Self {
            omegas: vec![0.5, 1.2, 1.8],
            amplitude: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MultiBeanie {
    pub params: BeanieParams,
    pub initial: InitialPose,
}

impl Default for MultiBeanie {
    fn default() -> Self {
        Self {
            params: BeanieParams::unit(),
            initial: InitialPose {
                x: 0.0,
                y: 0.0,
                theta: 0.0,
                phi: 0.0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MultiSection {
    pub targeted: usize,
    pub amplitude: f64,
    pub omega: f64,
    pub beanies: Vec<MultiBeanie>,
}

impl Default for MultiSection {
    fn default() -> Self {
        let unit = BeanieParams::unit();
        Self {
            targeted: 0,
            amplitude: 1.0,
            omega: 0.95,
            beanies: vec![
                MultiBeanie::default(),
                MultiBeanie {
                    params: BeanieParams { mass: 2.0, ..unit },
                    initial: InitialPose {
                        x: 1.0,
                        y: 0.5,
                        theta: 0.7,
                        phi: 0.0,
                    },
                },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub output_dir: PathBuf,
    pub numerics: Numerics,
    pub snake: SnakeSection,
    pub field: FieldSection,
    pub beanie: BeanieSection,
    pub forced: ForcedSection,
    pub sweep: SweepSection,
    pub headings: HeadingSection,
    pub multi: MultiSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: None,
            output_dir: PathBuf::from("out"),
            numerics: Numerics::default(),
            snake: SnakeSection::default(),
            field: FieldSection::default(),
            beanie: BeanieSection::default(),
            forced: ForcedSection::default(),
            sweep: SweepSection::default(),
            headings: HeadingSection::default(),
            multi: MultiSection::default(),
        }
    }
}

fn block<T>(name: &str, r: nonholomech::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Config(format!("{name}: {e}")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }

    /// Applies a `key.path=value` override. The value is read as a TOML
    /// literal and falls back to a bare string.
    pub fn apply_override(&mut self, spec: &str) -> Result<(), CliError> {
        let (key, raw) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got {spec:?}")))?;
        let key = key.trim();
        let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => toml::Value::String(raw.to_string()),
        };
        let mut root = toml::Value::try_from(&*self).expect("configuration always serializes");
        let mut node = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for (depth, part) in parts.iter().enumerate() {
            let last = depth + 1 == parts.len();
            let bad = || CliError::Config(format!("--set {key}: no such key {part:?}"));
            node = match node {
                toml::Value::Table(t) => {
                    if last {
                        t.insert(part.to_string(), value.clone());
                        break;
                    }
                    t.entry(part.to_string())
                        .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                }
                toml::Value::Array(a) => {
                    let idx: usize = part.parse().map_err(|_| bad())?;
                    let slot = a.get_mut(idx).ok_or_else(bad)?;
                    if last {
                        *slot = value.clone();
                        break;
                    }
                    slot
                }
                _ => return Err(bad()),
            };
        }
        *self = root
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(format!("--set {key}: {}", e.message())))?;
        Ok(())
    }

    pub fn snake_scenario(&self) -> SnakeScenarioConfig {
        SnakeScenarioConfig {
            params: self.snake.params,
            gait: self.snake.gait,
            reduction_gait: self.snake.reduction_gait,
            cycles: self.snake.cycles,
            drive: self.snake.drive,
            t_final: self.numerics.t_final,
            dt: self.numerics.dt,
        }
    }

    pub fn sweep_spec(&self) -> SweepSpec {
        SweepSpec {
            omega_min: self.sweep.omega_min,
            omega_max: self.sweep.omega_max,
            n_points: self.sweep.n_points,
            amplitude: self.sweep.amplitude,
            t_final: self.sweep.t_final,
            dt: self.numerics.dt,
            params: self.beanie.params,
        }
    }

    /// Checks every block, whichever command will run.
    pub fn validate(&self) -> Result<(), CliError> {
        let n = &self.numerics;
        if !(n.dt > 0.0 && n.dt.is_finite() && n.t_final >= n.dt && n.t_final.is_finite()) {
            return Err(CliError::Config(format!(
                "numerics: need 0 < dt <= t_final, got dt = {}, t_final = {}",
                n.dt, n.t_final
            )));
        }
        if n.grid_resolution < 3 {
            return Err(CliError::Config("numerics: grid_resolution must be at least 3".into()));
        }
        if !(n.residual_tolerance > 0.0) {
            return Err(CliError::Config("numerics: residual_tolerance must be positive".into()));
        }
        block("snake", self.snake_scenario().validate())?;
        block("field", self.field.grid(n.grid_resolution).validate())?;
        if !self.field.theta.is_finite() {
            return Err(CliError::Config("field: theta must be finite".into()));
        }
        block("beanie", self.beanie.params.validate())?;
        self.beanie.initial.validate("beanie")?;
        if ![self.forced.amplitude, self.forced.omega].iter().all(|v| v.is_finite()) || self.forced.omega < 0.0 {
            return Err(CliError::Config("forced: amplitude and omega must be finite, omega >= 0".into()));
        }
        block("sweep", self.sweep_spec().validate())?;
        if !self.headings.amplitude.is_finite() || self.headings.omegas.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(CliError::Config("headings: frequencies must be finite and non-negative".into()));
        }
        let m = &self.multi;
        if m.targeted >= m.beanies.len() {
            return Err(CliError::Config(format!(
                "multi: targeted = {} but only {} beanies are listed",
                m.targeted,
                m.beanies.len()
            )));
        }
        if !(m.amplitude.is_finite() && m.omega.is_finite() && m.omega >= 0.0) {
            return Err(CliError::Config("multi: amplitude and omega must be finite, omega >= 0".into()));
        }
        for (i, b) in m.beanies.iter().enumerate() {
            block(&format!("multi.beanies.{i}"), b.params.validate())?;
            b.initial.validate(&format!("multi.beanies.{i}"))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        let cfg = RunConfig {
            command: Some(Command::ChaplyginSweep),
            ..RunConfig::default()
        };
        let back = RunConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_blocks_fill_from_defaults() {
        let cfg = RunConfig::parse("[beanie.params]\nmass = 2.5\n").unwrap();
        assert_eq!(cfg.beanie.params.mass, 2.5);
        assert_eq!(cfg.beanie.params.stiffness, 1.0);
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let err = RunConfig::parse("[numerics]\ndt = 1e-3\nstep = 2\n").unwrap_err().to_string();
        assert!(err.contains("step") && err.contains("line 3"), "{err}");
        assert!(RunConfig::parse("bogus = 1").is_err());
        assert!(RunConfig::parse("[snake.gait]\nradius = 1.0").is_err());
    }

    #[test]
    fn overrides_apply_typed_values() {
        let mut cfg = RunConfig::default();
        cfg.apply_override("sweep.n_points=7").unwrap();
        cfg.apply_override("beanie.params.mass=3").unwrap();
        cfg.apply_override("command=validate").unwrap();
        cfg.apply_override("multi.beanies.1.initial.x=-2.0").unwrap();
        cfg.apply_override("headings.omegas=[0.4, 1.1]").unwrap();
        assert_eq!(cfg.sweep.n_points, 7);
        assert_eq!(cfg.beanie.params.mass, 3.0);
        assert_eq!(cfg.command, Some(Command::Validate));
        assert_eq!(cfg.multi.beanies[1].initial.x, -2.0);
        assert_eq!(cfg.headings.omegas, vec![0.4, 1.1]);
        assert!(cfg.apply_override("numerics.bogus=1.0").is_err());
        assert!(cfg.apply_override("multi.beanies.9.initial.x=1.0").is_err());
        assert!(cfg.apply_override("no_equals").is_err());
        assert!(cfg.apply_override("sweep.n_points=many").is_err());
    }

    #[test]
    fn validation_covers_every_block() {
        let bad = [
            "numerics.dt=0.0",
            "numerics.grid_resolution=1",
            "snake.gait.omega=-1.0",
            "beanie.params.stiffness=0.0",
            "sweep.n_points=1",
            "multi.targeted=5",
            "headings.omegas=[-1.0]",
            "field.bounds=[1.0, -1.0, 0.0, 1.0]",
        ];
        for spec in bad {
            let mut cfg = RunConfig::default();
            cfg.apply_override(spec).unwrap();
            assert!(matches!(cfg.validate(), Err(CliError::Config(_))), "{spec}");
        }
    }

    #[test]
    fn command_names_roundtrip() {
        for c in Command::ALL {
            assert_eq!(Command::from_name(c.name()), Some(c));
        }
        assert_eq!(Command::from_name("snake"), None);
    }
}
