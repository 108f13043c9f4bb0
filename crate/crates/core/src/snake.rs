//! Three-link wheeled snake on a movable platform.
//!
//! The robot pose `g = (x, y, θ)` is the pose of the proximal link centre,
//! measured relative to the (non-rotating) platform. Each link carries a
//! wheel that forbids lateral slip relative to the platform surface. Joint
//! angles `b = (α₁, α₂)` are the relative angles between successive links.
//!
//! Velocities in the "body frame" are expressed in the frame of the
//! proximal link. `ξ` is the robot body velocity and `(u̇_p, v̇_p)` the
//! platform velocity, both in that frame.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix3x2, SMatrix, SVector, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se2::{integrate, rotation, FirstHarmonicFit, Pose2, Trajectory};

/// `|D|` at or below this is treated as a singular shape.
pub const EPS_SINGULAR: f64 = 1e-6;
/// `|det|` at or below this makes the platform connection non-invertible.
pub const EPS_DET: f64 = 1e-9;
/// Central-difference step for exterior derivatives.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SnakeParams {
    /// Link length `R`.
    pub link_length: f64,
    /// Mass of each link.
    pub link_mass: f64,
    /// Rotational inertia of each link. Does not enter the connections.
    pub link_inertia: f64,
    pub platform_mass: f64,
}

impl Default for SnakeParams {
    fn default() -> Self {
        Self {
            link_length: 1.0,
            link_mass: 1.0,
            link_inertia: 1.0,
            platform_mass: 1.0,
        }
    }
}

impl SnakeParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("link_length", self.link_length),
            ("link_mass", self.link_mass),
            ("link_inertia", self.link_inertia),
            ("platform_mass", self.platform_mass),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "snake {name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Total mass of robot and platform.
    pub fn total_mass(&self) -> f64 {
        3.0 * self.link_mass + self.platform_mass
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Shape {
    pub alpha1: f64,
    pub alpha2: f64,
}

impl Shape {
    pub fn new(alpha1: f64, alpha2: f64) -> Self {
        Self { alpha1, alpha2 }
    }

    pub fn as_vector(&self) -> Vector2<f64> {
        Vector2::new(self.alpha1, self.alpha2)
    }
}

/// Elliptical joint-space gait
/// `α₁ = c₁ + B₁ cos ωt`, `α₂ = c₂ + B₂ cos(ωt − φ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Gait {
    pub b1: f64,
    pub b2: f64,
    /// Phase lag of α₂ behind α₁.
    pub phase: f64,
    #[serde(default)]
    pub c1: f64,
    #[serde(default)]
    pub c2: f64,
    pub omega: f64,
}

impl Default for Gait {
    /// Origin-centred equal-amplitude gait that advances without net turning.
    fn default() -> Self {
        Self::centered(0.8, 0.8, -std::f64::consts::FRAC_PI_2, 1.0)
    }
}

impl Gait {
    pub fn centered(b1: f64, b2: f64, phase: f64, omega: f64) -> Self {
        Self {
            b1,
            b2,
            phase,
            c1: 0.0,
            c2: 0.0,
            omega,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gait omega must be positive, got {}",
                self.omega
            )));
        }
        let all = [self.b1, self.b2, self.phase, self.c1, self.c2];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("gait parameters must be finite".into()));
        }
        Ok(())
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega
    }

    pub fn center(&self) -> Shape {
        Shape::new(self.c1, self.c2)
    }

    pub fn shape_at(&self, t: f64) -> Shape {
        let wt = self.omega * t;
        Shape::new(
            self.c1 + self.b1 * wt.cos(),
            self.c2 + self.b2 * (wt - self.phase).cos(),
        )
    }

    pub fn velocity_at(&self, t: f64) -> Vector2<f64> {
        let wt = self.omega * t;
        Vector2::new(
            -self.omega * self.b1 * wt.sin(),
            -self.omega * self.b2 * (wt - self.phase).sin(),
        )
    }
}

/// Poses of the three link centres.
pub fn link_poses(g: &Pose2, b: &Shape, params: &SnakeParams) -> [Pose2; 3] {
    let half = 0.5 * params.link_length;
    let th1 = g.theta;
    let th2 = th1 + b.alpha1;
    let th3 = th2 + b.alpha2;
    let x2 = g.x + half * (th1.cos() + th2.cos());
    let y2 = g.y + half * (th1.sin() + th2.sin());
    let x3 = x2 + half * (th2.cos() + th3.cos());
    let y3 = y2 + half * (th2.sin() + th3.sin());
    [*g, Pose2::new(x2, y2, th2), Pose2::new(x3, y3, th3)]
}

/// The factor `D(b)` whose zeros are the singular shapes.
pub fn singular_factor(b: &Shape, params: &SnakeParams) -> f64 {
    let (a1, a2) = (b.alpha1, b.alpha2);
    2.0 / params.link_length * (-a1.sin() - (a1 - a2).sin() + a2.sin())
}

fn check_singular(b: &Shape, params: &SnakeParams) -> Result<f64> {
    let d = singular_factor(b, params);
    if !d.is_finite() || d.abs() <= EPS_SINGULAR {
        return Err(Error::SingularShape { d });
    }
    Ok(d)
}

/// Local connection `A_int(b)`; the body velocity is `ξ = −A_int(b) ḃ`.
pub fn a_int(b: &Shape, params: &SnakeParams) -> Result<Matrix3x2<f64>> {
    let d = check_singular(b, params)?;
    let (a1, a2) = (b.alpha1, b.alpha2);
    let k = 2.0 / params.link_length;
    let m = Matrix3x2::new(
        a1.cos() + (a1 - a2).cos(),
        1.0 + a1.cos(),
        0.0,
        0.0,
        k * (a1.sin() + (a1 - a2).sin()),
        k * a1.sin(),
    );
    Ok(-m / d)
}

/// Robot body velocity `ξ = −A_int(b) ḃ`.
pub fn body_velocity(b: &Shape, b_dot: &Vector2<f64>, params: &SnakeParams) -> Result<Vector3<f64>> {
    Ok(-a_int(b, params)? * b_dot)
}

/// Linear maps from `(ξ_x, ξ_y, ξ_θ, α̇₁, α̇₂)` to the velocity of each link
/// centre, expressed in the proximal link frame and relative to the platform.
fn link_velocity_maps(b: &Shape, params: &SnakeParams) -> [SMatrix<f64, 2, 5>; 3] {
    let half = 0.5 * params.link_length;
    let (t2, t3) = (b.alpha1, b.alpha1 + b.alpha2);
    // angular rates of the links as rows over the five inputs
    let w1 = [0.0, 0.0, 1.0, 0.0, 0.0];
    let w2 = [0.0, 0.0, 1.0, 1.0, 0.0];
    let w3 = [0.0, 0.0, 1.0, 1.0, 1.0];
    let perp = |t: f64| Vector2::new(-t.sin(), t.cos());
    let outer = |dir: Vector2<f64>, w: [f64; 5]| {
        SMatrix::<f64, 2, 5>::from_fn(|r, c| half * dir[r] * w[c])
    };
    let mut v1 = SMatrix::<f64, 2, 5>::zeros();
    v1[(0, 0)] = 1.0;
    v1[(1, 1)] = 1.0;
    let v2 = v1 + outer(perp(0.0), w1) + outer(perp(t2), w2);
    let v3 = v2 + outer(perp(t2), w2) + outer(perp(t3), w3);
    [v1, v2, v3]
}

/// The three no-slip constraint rows over `(ξ, ḃ)`.
fn constraint_rows(b: &Shape, params: &SnakeParams) -> SMatrix<f64, 3, 5> {
    let maps = link_velocity_maps(b, params);
    let angles = [0.0, b.alpha1, b.alpha1 + b.alpha2];
    let mut rows = SMatrix::<f64, 3, 5>::zeros();
    for i in 0..3 {
        let normal = Vector2::new(-angles[i].sin(), angles[i].cos());
        rows.set_row(i, &(normal.transpose() * maps[i]));
    }
    rows
}

/// Lateral slip `−ẋᵢ sin θᵢ + ẏᵢ cos θᵢ` of each wheel, from world-frame
/// robot velocity `g_dot = (ẋ, ẏ, θ̇)` relative to the platform.
pub fn constraint_residual(
    g: &Pose2,
    b: &Shape,
    g_dot: &Vector3<f64>,
    b_dot: &Vector2<f64>,
    params: &SnakeParams,
) -> Vector3<f64> {
    let body = rotation(g.theta).transpose() * Vector2::new(g_dot[0], g_dot[1]);
    let input = SVector::<f64, 5>::from([body[0], body[1], g_dot[2], b_dot[0], b_dot[1]]);
    constraint_rows(b, params) * input
}

/// Sum of the link-centre velocities (proximal frame, platform-relative)
/// for given body and shape velocities.
fn summed_link_velocity(b: &Shape, xi: &Vector3<f64>, b_dot: &Vector2<f64>, params: &SnakeParams) -> Vector2<f64> {
    let input = SVector::<f64, 5>::from([xi[0], xi[1], xi[2], b_dot[0], b_dot[1]]);
    link_velocity_maps(b, params)
        .iter()
        .fold(Vector2::zeros(), |acc, m| acc + m * input)
}

/// Platform velocity in the proximal link frame, from rest, for the motion
/// `(ξ, ḃ)`: `(u̇_p, v̇_p) = −(M_l / M) Σᵢ vᵢ`.
fn platform_body_velocity(b: &Shape, xi: &Vector3<f64>, b_dot: &Vector2<f64>, params: &SnakeParams) -> Vector2<f64> {
    -(params.link_mass / params.total_mass()) * summed_link_velocity(b, xi, b_dot, params)
}

/// External connection: from rest, `(u̇_p, v̇_p) = −A_ext(b) ḃ`.
pub fn a_ext(b: &Shape, params: &SnakeParams) -> Result<Matrix2<f64>> {
    let ai = a_int(b, params)?;
    let mut out = Matrix2::zeros();
    for j in 0..2 {
        let e = if j == 0 { Vector2::x() } else { Vector2::y() };
        let xi = -ai * e;
        out.set_column(j, &(-platform_body_velocity(b, &xi, &e, params)));
    }
    Ok(out)
}

/// External connection in the inertial platform frame at heading `θ`.
pub fn a_theta(theta: f64, b: &Shape, params: &SnakeParams) -> Result<Matrix2<f64>> {
    Ok(rotation(theta) * a_ext(b, params)?)
}

/// Shape velocity producing the body-frame platform velocity `u`:
/// `ḃ = −A_ext(b)⁻¹ u`.
pub fn invert_external(b: &Shape, u: &Vector2<f64>, params: &SnakeParams) -> Result<Vector2<f64>> {
    let ae = a_ext(b, params)?;
    let det = ae.determinant();
    if !det.is_finite() || det.abs() <= EPS_DET {
        return Err(Error::NonInvertible { det });
    }
    let inv = ae.try_inverse().ok_or(Error::NonInvertible { det })?;
    Ok(-inv * u)
}

/// Solves the wheel constraints and the platform momentum balance together
/// for `(ξ, ḃ)` given the body-frame platform velocity `u`.
///
/// Equivalent to `invert_external` followed by `body_velocity`, but stays
/// well posed where `D(b) = 0`.
pub fn platform_driven_rates(
    b: &Shape,
    u: &Vector2<f64>,
    params: &SnakeParams,
) -> Result<(Vector3<f64>, Vector2<f64>)> {
    let maps = link_velocity_maps(b, params);
    let mut system = SMatrix::<f64, 5, 5>::zeros();
    system.fixed_view_mut::<3, 5>(0, 0).copy_from(&constraint_rows(b, params));
    let summed = maps[0] + maps[1] + maps[2];
    system.fixed_view_mut::<2, 5>(3, 0).copy_from(&summed);
    let scale = -params.total_mass() / params.link_mass;
    let rhs = SVector::<f64, 5>::from([0.0, 0.0, 0.0, scale * u[0], scale * u[1]]);
    let lu = system.lu();
    let det = lu.determinant();
    if !det.is_finite() || det.abs() <= EPS_DET {
        return Err(Error::NonInvertible { det });
    }
    let sol = lu.solve(&rhs).ok_or(Error::NonInvertible { det })?;
    Ok((Vector3::new(sol[0], sol[1], sol[2]), Vector2::new(sol[3], sol[4])))
}

/// Total inertial linear momentum of robot and platform.
///
/// `g_dot` is the world-frame robot velocity relative to the platform and
/// `platform_vel` the platform's world velocity.
pub fn linear_momentum(
    g: &Pose2,
    b: &Shape,
    g_dot: &Vector3<f64>,
    b_dot: &Vector2<f64>,
    platform_vel: &Vector2<f64>,
    params: &SnakeParams,
) -> Vector2<f64> {
    let rot = rotation(g.theta);
    let body = rot.transpose() * Vector2::new(g_dot[0], g_dot[1]);
    let xi = Vector3::new(body[0], body[1], g_dot[2]);
    let links = rot * summed_link_velocity(b, &xi, b_dot, params);
    params.link_mass * links + params.total_mass() * platform_vel
}

/// Which connection an exterior-derivative field is taken of.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "theta")]
pub enum ConnectionKind {
    /// Rows `ξ_x, ξ_y, ξ_θ`.
    Internal,
    /// Rows `u_p, v_p`.
    External,
    /// Rows `x_p, y_p` at the given heading.
    Theta(f64),
}

impl ConnectionKind {
    pub fn rows(&self) -> usize {
        match self {
            ConnectionKind::Internal => 3,
            _ => 2,
        }
    }

    pub fn row_names(&self) -> &'static [&'static str] {
        match self {
            ConnectionKind::Internal => &["xi_x", "xi_y", "xi_theta"],
            ConnectionKind::External => &["u_p", "v_p"],
            ConnectionKind::Theta(_) => &["x_p", "y_p"],
        }
    }

    /// Row of the velocity-producing map `−A(b)`, or `None` at a singular shape.
    fn velocity_row(&self, row: usize, b: &Shape, params: &SnakeParams) -> Option<[f64; 2]> {
        let r = match self {
            ConnectionKind::Internal => a_int(b, params).ok()?.row(row).into_owned(),
            ConnectionKind::External => a_ext(b, params).ok()?.row(row).into_owned(),
            ConnectionKind::Theta(t) => a_theta(*t, b, params).ok()?.row(row).into_owned(),
        };
        Some([-r[0], -r[1]])
    }
}

/// Rectangle and resolution of a field grid; nodes include both bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub a1_min: f64,
    pub a1_max: f64,
    pub a2_min: f64,
    pub a2_max: f64,
    pub n: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::square(2.5, 101)
    }
}

impl GridSpec {
    pub fn square(half_width: f64, n: usize) -> Self {
        Self {
            a1_min: -half_width,
            a1_max: half_width,
            a2_min: -half_width,
            a2_max: half_width,
            n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let b = [self.a1_min, self.a1_max, self.a2_min, self.a2_max];
        if b.iter().any(|v| !v.is_finite()) || self.a1_min >= self.a1_max || self.a2_min >= self.a2_max {
            return Err(Error::InvalidParameter(format!("invalid grid bounds {b:?}")));
        }
        if self.n < 2 {
            return Err(Error::InvalidParameter(format!(
                "grid resolution must be at least 2, got {}",
                self.n
            )));
        }
        Ok(())
    }

    pub fn step1(&self) -> f64 {
        (self.a1_max - self.a1_min) / (self.n - 1) as f64
    }

    pub fn step2(&self) -> f64 {
        (self.a2_max - self.a2_min) / (self.n - 1) as f64
    }

    pub fn alpha1(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.a1_max
        } else {
            self.a1_min + i as f64 * self.step1()
        }
    }

    pub fn alpha2(&self, j: usize) -> f64 {
        if j + 1 == self.n {
            self.a2_max
        } else {
            self.a2_min + j as f64 * self.step2()
        }
    }
}

/// Scalar field sampled on a grid; `None` marks masked nodes.
/// Stored row-major with rows along `α₂` and columns along `α₁`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    spec: GridSpec,
    values: Vec<Option<f64>>,
}

impl FieldGrid {
    pub fn new(spec: GridSpec, values: Vec<Option<f64>>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.n * spec.n {
            return Err(Error::InvalidParameter(format!(
                "field grid needs {} values, got {}",
                spec.n * spec.n,
                values.len()
            )));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { spec, values })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn n(&self) -> usize {
        self.spec.n
    }

    /// Value at column `i` (along `α₁`) and row `j` (along `α₂`).
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[j * self.spec.n + i]
    }

    pub fn is_masked(&self, i: usize, j: usize) -> bool {
        self.get(i, j).is_none()
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn masked_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    pub fn node(&self, i: usize, j: usize) -> Shape {
        Shape::new(self.spec.alpha1(i), self.spec.alpha2(j))
    }
}

/// Symmetry diagnostics of the internal connection's fields on a square grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSymmetry {
    /// Smallest unmasked value of the `ξ_x` field.
    pub min_xi_x: f64,
    /// Largest `|f(α₁, α₂) + f(−α₂, −α₁)|` over the `ξ_θ` field.
    pub theta_antisymmetry: f64,
    /// Largest unmasked magnitude of the `ξ_y` field.
    pub max_abs_xi_y: f64,
    pub masked: usize,
}

pub fn internal_field_symmetry(half_width: f64, n: usize, params: &SnakeParams) -> Result<FieldSymmetry> {
    let spec = GridSpec::square(half_width, n);
    let fx = exterior_derivative_field(ConnectionKind::Internal, 0, &spec, params)?;
    let fy = exterior_derivative_field(ConnectionKind::Internal, 1, &spec, params)?;
    let ft = exterior_derivative_field(ConnectionKind::Internal, 2, &spec, params)?;
    let finite = |v: &Option<f64>| v.filter(|x| x.is_finite());
    let min_xi_x = fx.values().iter().filter_map(finite).fold(f64::INFINITY, f64::min);
    let max_abs_xi_y = fy.values().iter().filter_map(finite).map(f64::abs).fold(0.0, f64::max);
    let mut theta_antisymmetry = 0.0f64;
    for j in 0..n {
        for i in 0..n {
            if let (Some(a), Some(b)) = (ft.get(i, j), ft.get(n - 1 - j, n - 1 - i)) {
                theta_antisymmetry = theta_antisymmetry.max((a + b).abs());
            }
        }
    }
    Ok(FieldSymmetry {
        min_xi_x,
        theta_antisymmetry,
        max_abs_xi_y,
        masked: fx.masked_count(),
    })
}

/// Curl `∂F₂/∂α₁ − ∂F₁/∂α₂` of one row `F` of the velocity-producing map
/// `−A(b)`, by central differences.
///
/// Nodes whose stencil touches a singular shape are masked together with
/// their eight neighbours.
pub fn exterior_derivative_field(
    kind: ConnectionKind,
    row: usize,
    spec: &GridSpec,
    params: &SnakeParams,
) -> Result<FieldGrid> {
    spec.validate()?;
    params.validate()?;
    if row >= kind.rows() {
        return Err(Error::InvalidParameter(format!(
            "row {row} out of range for a {}-row connection",
            kind.rows()
        )));
    }
    if let ConnectionKind::Theta(t) = kind {
        if !t.is_finite() {
            return Err(Error::InvalidParameter("heading must be finite".into()));
        }
    }
    let n = spec.n;
    let raw: Vec<Option<f64>> = (0..n * n)
        .into_par_iter()
        .map(|idx| curl_at(kind, row, &Shape::new(spec.alpha1(idx % n), spec.alpha2(idx / n)), params))
        .collect();
    let mut values = raw.clone();
    for j in 0..n {
        for i in 0..n {
            if raw[j * n + i].is_some() {
                continue;
            }
            for jj in j.saturating_sub(1)..=(j + 1).min(n - 1) {
                for ii in i.saturating_sub(1)..=(i + 1).min(n - 1) {
                    values[jj * n + ii] = None;
                }
            }
        }
    }
    FieldGrid::new(*spec, values)
}

fn curl_at(kind: ConnectionKind, row: usize, b: &Shape, params: &SnakeParams) -> Option<f64> {
    let h = FD_STEP;
    let at = |d1: f64, d2: f64| kind.velocity_row(row, &Shape::new(b.alpha1 + d1, b.alpha2 + d2), params);
    at(0.0, 0.0)?;
    let (e, w) = (at(h, 0.0)?, at(-h, 0.0)?);
    let (nn, s) = (at(0.0, h)?, at(0.0, -h)?);
    let v = (e[1] - w[1]) / (2.0 * h) - (nn[0] - s[0]) / (2.0 * h);
    v.is_finite().then_some(v)
}

/// Problems noticed while integrating a field over a gait.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StokesWarning {
    /// The enclosed region uses masked nodes; they contribute zero.
    EnclosesMaskedCells,
    /// The gait leaves the grid; the outside part contributes zero.
    ExceedsGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StokesEstimate {
    pub value: f64,
    pub warnings: Vec<StokesWarning>,
}

/// Sub-rows per grid row in the area quadrature.
const STOKES_SUBROWS: usize = 8;

/// Area integral of `field` over the region enclosed by one cycle of `gait`,
/// weighted by winding number.
///
/// The field is interpolated bilinearly; each horizontal sub-row is
/// integrated exactly between the polygon crossings.
pub fn gait_displacement_stokes(gait: &Gait, field: &FieldGrid) -> Result<StokesEstimate> {
    gait.validate()?;
    let spec = field.spec;
    let n = spec.n;
    let verts = (8 * n).max(4096);
    let poly: Vec<(f64, f64)> = (0..verts)
        .map(|k| {
            let b = gait.shape_at(k as f64 / verts as f64 * gait.period());
            (b.alpha1, b.alpha2)
        })
        .collect();

    let mut warnings = Vec::new();
    let eps = 1e-12;
    if poly.iter().any(|&(x, y)| {
        x < spec.a1_min - eps || x > spec.a1_max + eps || y < spec.a2_min - eps || y > spec.a2_max + eps
    }) {
        warnings.push(StokesWarning::ExceedsGrid);
    }

    let (h1, h2) = (spec.step1(), spec.step2());
    let xs: Vec<f64> = (0..n).map(|i| spec.alpha1(i)).collect();
    let mut total = 0.0;
    let mut touched_mask = false;
    let mut crossings: Vec<(f64, i32)> = Vec::new();
    let mut line = vec![0.0; n];
    let mut line_masked = vec![false; n];
    let mut prefix = vec![0.0; n];

    for j in 0..n - 1 {
        for k in 0..STOKES_SUBROWS {
            let frac = (k as f64 + 0.5) / STOKES_SUBROWS as f64;
            let y = spec.alpha2(j) + frac * h2;
            crossings.clear();
            for e in 0..verts {
                let (p, q) = (poly[e], poly[(e + 1) % verts]);
                let dir = if p.1 <= y && y < q.1 {
                    1
                } else if q.1 <= y && y < p.1 {
                    -1
                } else {
                    continue;
                };
                let x = p.0 + (y - p.1) * (q.0 - p.0) / (q.1 - p.1);
                crossings.push((x, dir));
            }
            if crossings.is_empty() {
                continue;
            }
            crossings.sort_by(|a, b| a.0.total_cmp(&b.0));

            for i in 0..n {
                let (lo, hi) = (field.get(i, j), field.get(i, j + 1));
                line_masked[i] = lo.is_none() || hi.is_none();
                line[i] = (1.0 - frac) * lo.unwrap_or(0.0) + frac * hi.unwrap_or(0.0);
            }
            prefix[0] = 0.0;
            for i in 1..n {
                prefix[i] = prefix[i - 1] + 0.5 * (line[i - 1] + line[i]) * h1;
            }
            let antiderivative = |x: f64| -> f64 {
                let x = x.clamp(spec.a1_min, spec.a1_max);
                let i = (((x - spec.a1_min) / h1).floor() as usize).min(n - 2);
                let s = (x - xs[i]) / h1;
                let v = line[i] + s * (line[i + 1] - line[i]);
                prefix[i] + 0.5 * (line[i] + v) * (x - xs[i])
            };

            let mut winding = 0;
            let mut row_sum = 0.0;
            for w in crossings.windows(2) {
                winding -= w[0].1;
                if winding == 0 {
                    continue;
                }
                let (xa, xb) = (w[0].0, w[1].0);
                row_sum += winding as f64 * (antiderivative(xb) - antiderivative(xa));
                if !touched_mask {
                    let ia = (((xa.max(spec.a1_min) - spec.a1_min) / h1).floor() as usize).min(n - 1);
                    let ib = (((xb.min(spec.a1_max) - spec.a1_min) / h1).ceil() as usize).min(n - 1);
                    touched_mask = (ia..=ib).any(|i| line_masked[i]);
                }
            }
            total += row_sum * h2 / STOKES_SUBROWS as f64;
        }
    }
    if touched_mask {
        warnings.push(StokesWarning::EnclosesMaskedCells);
    }
    Ok(StokesEstimate { value: total, warnings })
}

/// One sample of a snake simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnakeSample {
    /// Robot pose relative to the platform.
    pub g_int: Pose2,
    /// Platform position in the inertial frame.
    pub platform: Vector2<f64>,
    pub shape: Shape,
    /// Shape velocity `ḃ`.
    pub shape_velocity: Vector2<f64>,
    /// Robot body velocity `ξ`.
    pub body_velocity: Vector3<f64>,
    /// Platform velocity in the proximal link frame.
    pub platform_body_velocity: Vector2<f64>,
}

/// World-frame rate `(ẋ, ẏ, θ̇)` of a body velocity at heading `θ`.
pub fn lift(theta: f64, xi: &Vector3<f64>) -> Vector3<f64> {
    let (s, c) = theta.sin_cos();
    Vector3::new(c * xi[0] - s * xi[1], s * xi[0] + c * xi[1], xi[2])
}

/// Joint-driven snake starting from rest: the gait is prescribed and both
/// the robot and the platform respond kinematically.
pub fn simulate_snake_joint_driven(
    g0: &Pose2,
    platform0: &Vector2<f64>,
    gait: &Gait,
    params: &SnakeParams,
    dt: f64,
    t_final: f64,
) -> Result<Trajectory<SnakeSample>> {
    params.validate()?;
    gait.validate()?;
    let rates = |t: f64| -> Result<(Vector3<f64>, Vector2<f64>)> {
        let b = gait.shape_at(t);
        let b_dot = gait.velocity_at(t);
        let xi = body_velocity(&b, &b_dot, params)?;
        Ok((xi, platform_body_velocity(&b, &xi, &b_dot, params)))
    };
    let y0 = SVector::<f64, 5>::from([g0.x, g0.y, g0.theta, platform0[0], platform0[1]]);
    integrate(
        y0,
        dt,
        t_final,
        |t, y| {
            let (xi, u) = rates(t)?;
            let g_dot = lift(y[2], &xi);
            let p_dot = rotation(y[2]) * u;
            Ok(SVector::<f64, 5>::from([g_dot[0], g_dot[1], g_dot[2], p_dot[0], p_dot[1]]))
        },
        |_, _| Ok(()),
        |t, y| {
            let (xi, u) = rates(t)?;
            Ok(SnakeSample {
                g_int: Pose2::new(y[0], y[1], y[2]),
                platform: Vector2::new(y[3], y[4]),
                shape: gait.shape_at(t),
                shape_velocity: gait.velocity_at(t),
                body_velocity: xi,
                platform_body_velocity: u,
            })
        },
    )
}

/// Platform-driven passive snake: the platform velocity in the proximal
/// link frame is prescribed and the shape follows from momentum balance.
pub fn simulate_snake_platform_driven(
    b0: &Shape,
    g0: &Pose2,
    platform0: &Vector2<f64>,
    u_of_t: impl Fn(f64) -> Result<Vector2<f64>>,
    params: &SnakeParams,
    dt: f64,
    t_final: f64,
) -> Result<Trajectory<SnakeSample>> {
    params.validate()?;
    let source = |t: f64| -> Result<Vector2<f64>> {
        let u = u_of_t(t)?;
        if !(u[0].is_finite() && u[1].is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(u)
    };
    let y0 = SVector::<f64, 7>::from([g0.x, g0.y, g0.theta, platform0[0], platform0[1], b0.alpha1, b0.alpha2]);
    integrate(
        y0,
        dt,
        t_final,
        |t, y| {
            let u = source(t)?;
            let (xi, b_dot) = platform_driven_rates(&Shape::new(y[5], y[6]), &u, params)?;
            let g_dot = lift(y[2], &xi);
            let p_dot = rotation(y[2]) * u;
            Ok(SVector::<f64, 7>::from([g_dot[0], g_dot[1], g_dot[2], p_dot[0], p_dot[1], b_dot[0], b_dot[1]]))
        },
        |_, _| Ok(()),
        |t, y| {
            let u = source(t)?;
            let shape = Shape::new(y[5], y[6]);
            let (xi, b_dot) = platform_driven_rates(&shape, &u, params)?;
            Ok(SnakeSample {
                g_int: Pose2::new(y[0], y[1], y[2]),
                platform: Vector2::new(y[3], y[4]),
                shape,
                shape_velocity: b_dot,
                body_velocity: xi,
                platform_body_velocity: u,
            })
        },
    )
}

/// Heading approximated as a linear function of the joint angles,
/// `θ ≈ a₁(α₁ − c₁) + a₂(α₂ − c₂) + C`, which removes the heading from the
/// inertial-frame platform connection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaReduction {
    pub a1: f64,
    pub a2: f64,
    pub offset: f64,
    pub c1: f64,
    pub c2: f64,
    /// Largest deviation from the fitted harmonic over one cycle.
    pub residual: f64,
}

impl ThetaReduction {
    pub fn theta_at(&self, b: &Shape) -> f64 {
        self.a1 * (b.alpha1 - self.c1) + self.a2 * (b.alpha2 - self.c2) + self.offset
    }

    /// Heading-free platform connection over shape space.
    pub fn connection(&self, b: &Shape, params: &SnakeParams) -> Result<Matrix2<f64>> {
        a_theta(self.theta_at(b), b, params)
    }
}

/// Harmonic-balance coefficients matching `Θ cos(ωt − ψ)` with the gait.
///
/// Both sign branches are tried; the one closer to the fitted harmonic wins.
pub fn reduce_theta(gait: &Gait, fit: &FirstHarmonicFit, params: &SnakeParams) -> Result<ThetaReduction> {
    gait.validate()?;
    params.validate()?;
    if (fit.omega - gait.omega).abs() > 1e-12 * gait.omega {
        return Err(Error::InvalidParameter(format!(
            "fit frequency {} differs from gait frequency {}",
            fit.omega, gait.omega
        )));
    }
    let sin_phase = gait.phase.sin();
    if sin_phase.abs() <= 1e-9 {
        return Err(Error::DegenerateGaitPhase { sin_phase });
    }
    if gait.b1 == 0.0 || gait.b2 == 0.0 {
        return Err(Error::InvalidParameter("gait amplitudes must be nonzero".into()));
    }
    let (amp, psi) = (fit.amplitude, fit.phase);
    let a2 = amp * psi.sin() / (gait.b2 * sin_phase);
    let a1 = amp * (gait.phase - psi).sin() / (gait.b1 * sin_phase);

    let samples = 512;
    let residual_of = |a1: f64, a2: f64| {
        (0..samples)
            .map(|k| {
                let t = k as f64 / samples as f64 * gait.period();
                let b = gait.shape_at(t);
                let model = a1 * (b.alpha1 - gait.c1) + a2 * (b.alpha2 - gait.c2) + fit.offset;
                (model - fit.eval(t)).abs()
            })
            .fold(0.0, f64::max)
    };
    let plus = residual_of(a1, a2);
    let minus = residual_of(-a1, -a2);
    let (a1, a2, residual) = if plus <= minus { (a1, a2, plus) } else { (-a1, -a2, minus) };
    Ok(ThetaReduction {
        a1,
        a2,
        offset: fit.offset,
        c1: gait.c1,
        c2: gait.c2,
        residual,
    })
}

/// Platform displacement over one gait cycle predicted by the reduced
/// connection, `∮ −A_eff(b) ḃ dt`.
pub fn reduced_platform_displacement(
    reduction: &ThetaReduction,
    gait: &Gait,
    params: &SnakeParams,
    samples: usize,
) -> Result<Vector2<f64>> {
    if samples < 2 {
        return Err(Error::InvalidParameter("need at least two samples".into()));
    }
    let period = gait.period();
    let h = period / samples as f64;
    let mut sum = Vector2::zeros();
    for k in 0..samples {
        let t = k as f64 * h;
        let b = gait.shape_at(t);
        sum -= reduction.connection(&b, params)? * gait.velocity_at(t);
    }
    Ok(sum * h)
}
