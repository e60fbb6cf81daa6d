//! Tracer states, model parameters and the prescribed environment.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::geometry::{Axis, Grid, Zone};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldsError {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("unknown parameter `{0}` (expected one of lambda, alpha, K_P, K_I, K_W, beta, nu)")]
    UnknownParam(String),
    #[error("stream function for row {row} has {got} values, expected {expected}")]
    StreamShape { row: usize, got: usize, expected: usize },
    #[error("stream function is not constant on the boundary of row {row} (corner i={i}, k={k}: {value} vs {reference})")]
    StreamBoundary { row: usize, i: usize, k: usize, value: f64, reference: f64 },
    #[error("diffusivity must be positive and finite (got {0})")]
    Kappa(f64),
    #[error("diffusivity field has {got} values, expected {expected}")]
    KappaLen { got: usize, expected: usize },
    #[error("light: {0}")]
    Light(String),
    #[error("cell {0} is aphotic; light factor is only defined in the euphotic zone")]
    AphoticCell(usize),
    #[error("state has {got} cells, grid has {expected}")]
    StateLen { got: usize, expected: usize },
}

/// The seven biogeochemical parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Param {
    Lambda,
    Alpha,
    KP,
    KI,
    KW,
    Beta,
    Nu,
}

impl Param {
    pub const ALL: [Param; 7] =
        [Param::Lambda, Param::Alpha, Param::KP, Param::KI, Param::KW, Param::Beta, Param::Nu];

    pub fn name(self) -> &'static str {
        match self {
            Param::Lambda => "lambda",
            Param::Alpha => "alpha",
            Param::KP => "K_P",
            Param::KI => "K_I",
            Param::KW => "K_W",
            Param::Beta => "beta",
            Param::Nu => "nu",
        }
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Param {
    type Err = FieldsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Param::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| FieldsError::UnknownParam(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Remineralisation rate (1/time).
    pub lambda: f64,
    /// Maximum uptake rate.
    pub alpha: f64,
    /// Phosphate half-saturation.
    pub k_p: f64,
    /// Light half-saturation.
    pub k_i: f64,
    /// Light attenuation (1/m).
    pub k_w: f64,
    /// Sinking power-law exponent.
    pub beta: f64,
    /// DOP fraction of uptake.
    pub nu: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self { lambda: 0.5, alpha: 2.0, k_p: 0.5, k_i: 30.0, k_w: 0.02, beta: 1.0, nu: 0.5 }
    }
}

impl ModelParams {
    pub fn get(&self, p: Param) -> f64 {
        match p {
            Param::Lambda => self.lambda,
            Param::Alpha => self.alpha,
            Param::KP => self.k_p,
            Param::KI => self.k_i,
            Param::KW => self.k_w,
            Param::Beta => self.beta,
            Param::Nu => self.nu,
        }
    }

    pub fn set(&mut self, p: Param, value: f64) {
        match p {
            Param::Lambda => self.lambda = value,
            Param::Alpha => self.alpha = value,
            Param::KP => self.k_p = value,
            Param::KI => self.k_i = value,
            Param::KW => self.k_w = value,
            Param::Beta => self.beta = value,
            Param::Nu => self.nu = value,
        }
    }

    pub fn with(mut self, p: Param, value: f64) -> Self {
        self.set(p, value);
        self
    }

    pub fn validate(&self) -> Result<(), FieldsError> {
        for p in [Param::Lambda, Param::Alpha, Param::KP, Param::KI, Param::KW, Param::Beta] {
            let v = self.get(p);
            if !(v.is_finite() && v > 0.0) {
                return Err(FieldsError::InvalidParam(format!("{p} = {v} violates {p} > 0")));
            }
        }
        if !(self.nu > 0.0 && self.nu < 1.0) {
            return Err(FieldsError::InvalidParam(format!("nu = {} violates 0 < nu < 1", self.nu)));
        }
        Ok(())
    }
}

/// Phosphate and DOP concentrations on the wet cells.
#[derive(Debug, Clone, PartialEq)]
pub struct TracerState {
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
}

impl TracerState {
    pub fn zeros(n: usize) -> Self {
        Self { y1: vec![0.0; n], y2: vec![0.0; n] }
    }

    pub fn constant(n: usize, c1: f64, c2: f64) -> Self {
        Self { y1: vec![c1; n], y2: vec![c2; n] }
    }

    /// Default initial condition: `y1 = mean + amp·(½ cos(πx/Lx) cos(πy/Ly) + ½ cos(πz/h_max))`
    /// at cell centres and `y2` constant.
    pub fn smooth(grid: &Grid, mean: f64, amp: f64, y2: f64) -> Self {
        use std::f64::consts::PI;
        let (lx, ly) = (grid.nx as f64 * grid.dx, grid.ny as f64 * grid.dy);
        let y1 = grid
            .cells
            .iter()
            .map(|c| {
                let x = (c.i as f64 + 0.5) * grid.dx;
                let y = (c.j as f64 + 0.5) * grid.dy;
                let horiz = (PI * x / lx).cos() * (PI * y / ly).cos();
                mean + amp * 0.5 * (horiz + (PI * c.center_depth / grid.h_max).cos())
            })
            .collect();
        Self { y1, y2: vec![y2; grid.n_cells()] }
    }

    pub fn len(&self) -> usize {
        self.y1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y1.is_empty()
    }

    pub fn component(&self, c: usize) -> &[f64] {
        if c == 0 {
            &self.y1
        } else {
            &self.y2
        }
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        if c == 0 {
            &mut self.y1
        } else {
            &mut self.y2
        }
    }

    pub fn is_finite(&self) -> bool {
        self.y1.iter().chain(&self.y2).all(|v| v.is_finite())
    }

    pub fn check_len(&self, grid: &Grid) -> Result<(), FieldsError> {
        if self.y1.len() != grid.n_cells() || self.y2.len() != grid.n_cells() {
            return Err(FieldsError::StateLen { got: self.y1.len().min(self.y2.len()), expected: grid.n_cells() });
        }
        Ok(())
    }

    /// `self + a * other`
    pub fn axpy(&self, a: f64, other: &TracerState) -> TracerState {
        let f = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(x, y)| x + a * y).collect();
        TracerState { y1: f(&self.y1, &other.y1), y2: f(&self.y2, &other.y2) }
    }

    pub fn scale(&self, a: f64) -> TracerState {
        TracerState {
            y1: self.y1.iter().map(|v| a * v).collect(),
            y2: self.y2.iter().map(|v| a * v).collect(),
        }
    }

    pub fn sub(&self, other: &TracerState) -> TracerState {
        self.axpy(-1.0, other)
    }

    pub fn max_abs(&self) -> f64 {
        self.y1.iter().chain(&self.y2).fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Time-indexed sequence of states on a uniform grid `t_k = k * dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<TracerState>,
    pub dt: f64,
}

impl Trajectory {
    /// `y0` held constant over `steps` steps.
    pub fn constant(y0: &TracerState, dt: f64, steps: usize) -> Self {
        Self { states: vec![y0.clone(); steps + 1], dt }
    }

    pub fn steps(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    pub fn horizon(&self) -> f64 {
        self.steps() as f64 * self.dt
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn last(&self) -> &TracerState {
        self.states.last().expect("trajectory has at least one state")
    }

    pub fn sub(&self, other: &Trajectory) -> Trajectory {
        Trajectory {
            states: self.states.iter().zip(&other.states).map(|(a, b)| a.sub(b)).collect(),
            dt: self.dt,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.states.iter().map(TracerState::max_abs).fold(0.0, f64::max)
    }
}

/// Time shape of the surface insolation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LightShape {
    Constant,
    /// `max(0, cos(2πt/period))`
    Diurnal { period: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Light {
    pub i0: f64,
    pub shape: LightShape,
}

impl Light {
    pub fn constant(i0: f64) -> Self {
        Self { i0, shape: LightShape::Constant }
    }

    pub fn validate(&self) -> Result<(), FieldsError> {
        if !(self.i0.is_finite() && self.i0 >= 0.0) {
            return Err(FieldsError::Light(format!("I0 = {} must be >= 0", self.i0)));
        }
        if let LightShape::Diurnal { period } = self.shape {
            if !(period.is_finite() && period > 0.0) {
                return Err(FieldsError::Light(format!("period = {period} must be > 0")));
            }
        }
        Ok(())
    }

    pub fn shape_at(&self, t: f64) -> f64 {
        match self.shape {
            LightShape::Constant => 1.0,
            LightShape::Diurnal { period } => (2.0 * std::f64::consts::PI * t / period).cos().max(0.0),
        }
    }

    pub fn at(&self, t: f64) -> f64 {
        self.i0 * self.shape_at(t)
    }
}

/// Stream function on the corner lattice of every `(x, z)` slice.
///
/// Row `j` holds `(nx + 1) * (max_layers + 1)` values, indexed `[i * (max_layers + 1) + k]`
/// with corner `(i, k)` sitting at `x = i * dx`, `z = k * dz`.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamFunction {
    pub rows: Vec<Vec<f64>>,
}

impl StreamFunction {
    pub fn zero(grid: &Grid) -> Self {
        Self { rows: vec![vec![0.0; (grid.nx + 1) * (grid.max_layers + 1)]; grid.ny] }
    }

    /// `amp * sin(πx/Lx) * sin(πz/h_max)` sampled at interior corners, zero on
    /// every corner touching dry or solid cells.
    pub fn analytic(grid: &Grid, amp: f64) -> Self {
        let lx = grid.nx as f64 * grid.dx;
        Self::from_interior(grid, |_, i, k| {
            let x = i as f64 * grid.dx;
            let z = k as f64 * grid.dz;
            amp * (std::f64::consts::PI * x / lx).sin() * (std::f64::consts::PI * z / grid.h_max).sin()
        })
    }

    /// Values `f(j, i, k)` on interior corners and zero on all others.
    pub fn from_interior(grid: &Grid, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut rows = Vec::with_capacity(grid.ny);
        for j in 0..grid.ny {
            let mut row = vec![0.0; (grid.nx + 1) * (grid.max_layers + 1)];
            for i in 0..=grid.nx {
                for k in 0..=grid.max_layers {
                    if corner_is_interior(grid, j, i, k) {
                        row[i * (grid.max_layers + 1) + k] = f(j, i, k);
                    }
                }
            }
            rows.push(row);
        }
        Self { rows }
    }

    /// One slice replicated across every row.
    pub fn replicated(grid: &Grid, slice: Vec<f64>) -> Self {
        Self { rows: vec![slice; grid.ny] }
    }

    /// Reads a plain-text slice: `max_layers + 1` lines (top to bottom) of `nx + 1` values.
    pub fn parse_slice(grid: &Grid, text: &str) -> Result<Self, FieldsError> {
        let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).collect();
        let nk = grid.max_layers + 1;
        let expected = (grid.nx + 1) * nk;
        let mut slice = vec![0.0; expected];
        if lines.len() != nk {
            return Err(FieldsError::StreamShape { row: 0, got: lines.len() * (grid.nx + 1), expected });
        }
        for (k, line) in lines.iter().enumerate() {
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| FieldsError::StreamShape { row: 0, got: 0, expected })?;
            if vals.len() != grid.nx + 1 {
                return Err(FieldsError::StreamShape { row: 0, got: vals.len() * nk, expected });
            }
            for (i, v) in vals.into_iter().enumerate() {
                slice[i * nk + k] = v;
            }
        }
        Ok(Self::replicated(grid, slice))
    }
}

fn wet(grid: &Grid, j: usize, i: isize, k: isize) -> bool {
    if i < 0 || k < 0 {
        return false;
    }
    grid.cell_at(i as usize, j, k as usize).is_some()
}

/// A corner is interior to a slice when all four cells around it are wet.
fn corner_is_interior(grid: &Grid, j: usize, i: usize, k: usize) -> bool {
    let (i, k) = (i as isize, k as isize);
    wet(grid, j, i - 1, k - 1) && wet(grid, j, i, k - 1) && wet(grid, j, i - 1, k) && wet(grid, j, i, k)
}

/// Face-normal volume fluxes from corner differences of a stream function.
///
/// The flux on face `f` is positive from `faces[f].a` to `faces[f].b`
/// (towards `+x` or downward). `y`-faces carry no flux.
pub fn stream_velocity(grid: &Grid, psi: &StreamFunction) -> Result<Vec<f64>, FieldsError> {
    let nk = grid.max_layers + 1;
    let expected = (grid.nx + 1) * nk;
    if psi.rows.len() != grid.ny {
        return Err(FieldsError::StreamShape { row: psi.rows.len(), got: 0, expected });
    }
    for (j, row) in psi.rows.iter().enumerate() {
        if row.len() != expected {
            return Err(FieldsError::StreamShape { row: j, got: row.len(), expected });
        }
        let mut reference: Option<f64> = None;
        for i in 0..=grid.nx {
            for k in 0..nk {
                if corner_is_interior(grid, j, i, k) {
                    continue;
                }
                let touches_wet = (0..2).any(|di| (0..2).any(|dk| wet(grid, j, i as isize - di, k as isize - dk)));
                if !touches_wet {
                    continue;
                }
                let v = row[i * nk + k];
                match reference {
                    None => reference = Some(v),
                    Some(r) if r != v => {
                        return Err(FieldsError::StreamBoundary { row: j, i, k, value: v, reference: r })
                    }
                    _ => {}
                }
            }
        }
    }
    let at = |j: usize, i: usize, k: usize| psi.rows[j][i * nk + k];
    let flux = grid
        .faces
        .iter()
        .map(|f| {
            let c = &grid.cells[f.a];
            let (i, j, k) = (c.i, c.j, c.k);
            match f.axis {
                Axis::X => (at(j, i + 1, k + 1) - at(j, i + 1, k)) * grid.dy,
                Axis::Z => -(at(j, i + 1, k + 1) - at(j, i, k + 1)) * grid.dy,
                Axis::Y => 0.0,
            }
        })
        .collect();
    Ok(flux)
}

/// Net outflow of every cell for a face flux field.
pub fn flux_divergence(grid: &Grid, flux: &[f64]) -> Vec<f64> {
    let mut div = vec![0.0; grid.n_cells()];
    for (f, q) in grid.faces.iter().zip(flux) {
        div[f.a] += q;
        div[f.b] -= q;
    }
    div
}

/// Prescribed, time-independent transport plus insolation.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    /// Volume flux per interior face of the grid.
    pub flux: Vec<f64>,
    /// Diffusivity per cell.
    pub kappa: Vec<f64>,
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub light: Light,
}

impl Environment {
    pub fn new(grid: &Grid, flux: Vec<f64>, kappa: Vec<f64>, light: Light) -> Result<Self, FieldsError> {
        if kappa.len() != grid.n_cells() {
            return Err(FieldsError::KappaLen { got: kappa.len(), expected: grid.n_cells() });
        }
        if let Some(bad) = kappa.iter().find(|k| !(k.is_finite() && **k > 0.0)) {
            return Err(FieldsError::Kappa(*bad));
        }
        assert_eq!(flux.len(), grid.faces.len(), "one flux per face");
        light.validate()?;
        let kappa_min = kappa.iter().copied().fold(f64::INFINITY, f64::min);
        let kappa_max = kappa.iter().copied().fold(0.0, f64::max);
        Ok(Self { flux, kappa, kappa_min, kappa_max, light })
    }

    /// Quiescent environment with constant diffusivity.
    pub fn still(grid: &Grid, kappa: f64, light: Light) -> Result<Self, FieldsError> {
        Self::new(grid, vec![0.0; grid.faces.len()], vec![kappa; grid.n_cells()], light)
    }

    pub fn with_stream(grid: &Grid, psi: &StreamFunction, kappa: f64, light: Light) -> Result<Self, FieldsError> {
        Self::new(grid, stream_velocity(grid, psi)?, vec![kappa; grid.n_cells()], light)
    }

    pub fn max_flux(&self) -> f64 {
        self.flux.iter().fold(0.0_f64, |m, q| m.max(q.abs()))
    }

    pub fn has_flow(&self) -> bool {
        self.flux.iter().any(|q| *q != 0.0)
    }

    pub fn is_constant_kappa(&self) -> bool {
        self.kappa_min == self.kappa_max
    }

    /// Surface irradiance over a column; uniform in space.
    pub fn insolation_at(&self, _column: usize, t: f64) -> f64 {
        self.light.at(t)
    }
}

/// Michaelis-Menten light limitation at a euphotic cell centre.
pub fn light_factor(grid: &Grid, env: &Environment, params: &ModelParams, cell: usize, t: f64) -> Result<f64, FieldsError> {
    let c = grid.cells.get(cell).ok_or(FieldsError::StateLen { got: cell, expected: grid.n_cells() })?;
    if c.zone != Zone::Euphotic {
        return Err(FieldsError::AphoticCell(cell));
    }
    Ok(light_factor_at(env.insolation_at(c.column, t), c.center_depth, params))
}

/// `f_{K_I}(I e^{-z K_W})`.
pub(crate) fn light_factor_at(surface: f64, depth: f64, params: &ModelParams) -> f64 {
    let i = surface * (-depth * params.k_w).exp();
    i / (i.abs() + params.k_i)
}
