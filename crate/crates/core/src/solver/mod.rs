//! Time integration: implicit Euler forward runs, the trajectory-level
//! fixed-point iteration, the cosine-basis Galerkin solver, the linearised
//! (tangent) solve and the energy-estimate checker.

mod energy;
mod galerkin;
mod linearized;
mod picard;
mod stepper;

pub use energy::{energy_constants, energy_estimate_check, forcing_dual_norm, EnergyConstants, EnergyReport};
pub use galerkin::{galerkin_solve, GalerkinSolution, GalerkinSystem};
pub use linearized::{tangent_solve, tangent_solve_sources};
pub use picard::{
    auto_weight, contraction_bound, log_weighted_norm, picard_solve, picard_solve_from, solve_frozen, weighted_norm,
    PicardConfig, PicardReport,
};
pub use stepper::{linear_step, Source, Stepper, LINEAR_RTOL};

use thiserror::Error;

use crate::fields::{Environment, FieldsError, ModelParams, TracerState, Trajectory};
use crate::geometry::Grid;
use crate::linalg::LinalgError;
use crate::reaction::{ReactionCache, ReactionOutput};
use crate::transport::{total_mass, Norms};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Fields(#[from] FieldsError),
    #[error("Newton iteration for the monotone term did not converge (residuals {history:?})")]
    Newton { history: Vec<f64> },
    #[error("implicit step {step} did not converge (last relative change {change:e})")]
    Inner { step: usize, change: f64 },
    #[error("fixed-point iteration did not converge in {} iterations", .0.iterations)]
    Picard(Box<PicardReport>),
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("Galerkin basis needs a flat box: {0}")]
    NotFlat(String),
}

/// Uniform time grid on `[0, t_end]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t_end: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t_end: f64, steps: usize) -> Result<Self, SolverError> {
        if !(t_end.is_finite() && t_end > 0.0) || steps == 0 {
            return Err(SolverError::Config(format!("need T > 0 and steps >= 1 (got T = {t_end}, steps = {steps})")));
        }
        Ok(Self { t_end, steps })
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.steps as f64
    }
}

/// Everything that defines the nonlinear problem apart from the initial state.
#[derive(Debug, Clone, Copy)]
pub struct Model<'a> {
    pub grid: &'a Grid,
    pub env: &'a Environment,
    pub params: ModelParams,
    /// Coefficient of the optional monotone term `γ y / (1 + |y|)`.
    pub gamma: f64,
}

impl<'a> Model<'a> {
    pub fn new(grid: &'a Grid, env: &'a Environment, params: ModelParams) -> Self {
        Self { grid, env, params, gamma: 0.0 }
    }

    pub fn with_params(&self, params: ModelParams) -> Self {
        Self { params, ..*self }
    }

    pub fn stepper(&self, dt: f64) -> Result<Stepper, SolverError> {
        Stepper::new(self.grid, self.env, dt, self.gamma)
    }

    pub fn reaction_cache(&self) -> ReactionCache {
        ReactionCache::new(self.grid, &self.params)
    }

    pub fn reaction(&self, y: &TracerState, t: f64) -> ReactionOutput {
        self.reaction_cache().evaluate(y, self.grid, self.env, t)
    }
}

/// Iterates `x ↦ f(x)` until successive iterates agree to rounding.
///
/// Stops once the change drops to a few ulps of the iterate, or when it stops
/// decreasing after having fallen below `1e-11` relative.
pub(crate) fn iterate_to_rounding<F>(mut x: TracerState, step: usize, mut f: F) -> Result<TracerState, SolverError>
where
    F: FnMut(&TracerState) -> Result<TracerState, SolverError>,
{
    let mut previous = f64::INFINITY;
    for _ in 0..200 {
        let next = f(&x)?;
        if !next.is_finite() {
            return Err(SolverError::Inner { step, change: f64::NAN });
        }
        let scale = next.max_abs().max(f64::MIN_POSITIVE);
        let change = next.sub(&x).max_abs() / scale;
        x = next;
        if change <= 1e-15 || (change >= previous && change <= 1e-11) {
            return Ok(x);
        }
        previous = change;
    }
    if previous <= 1e-10 {
        Ok(x)
    } else {
        Err(SolverError::Inner { step, change: previous })
    }
}

/// Nonlinear implicit Euler run, solving each step to rounding by fixed-point iteration.
pub fn forward_solve(model: &Model, y0: &TracerState, time: TimeGrid) -> Result<Trajectory, SolverError> {
    y0.check_len(model.grid)?;
    let dt = time.dt();
    let stepper = model.stepper(dt)?;
    let cache = model.reaction_cache();
    let mut states = Vec::with_capacity(time.steps + 1);
    states.push(y0.clone());
    for k in 0..time.steps {
        let t = (k + 1) as f64 * dt;
        let yk = &states[k];
        let guess = if k == 0 { yk.clone() } else { yk.scale(2.0).axpy(-1.0, &states[k - 1]) };
        let next = iterate_to_rounding(guess, k + 1, |y| {
            let src = Source::from_reaction(&cache.evaluate(y, model.grid, model.env, t));
            stepper.step(yk, &src)
        })?;
        states.push(next);
    }
    Ok(Trajectory { states, dt })
}

/// One row of the per-step diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    pub t: f64,
    pub total_mass: f64,
    pub l2_y: f64,
    pub h1_y: f64,
    /// `Σ_facets b1 area`: tracer leaving through the bottom (negative when it re-enters).
    pub boundary_exchange: f64,
}

pub fn diagnostics(traj: &Trajectory, model: &Model, norms: &Norms) -> Vec<Diagnostics> {
    let cache = model.reaction_cache();
    traj.states
        .iter()
        .enumerate()
        .map(|(k, y)| {
            let t = traj.time(k);
            let r = cache.evaluate(y, model.grid, model.env, t);
            Diagnostics {
                t,
                total_mass: total_mass(y, model.grid),
                l2_y: norms.l2_state(y),
                h1_y: norms.h1_state(y),
                boundary_exchange: r.b1.iter().zip(&model.grid.facets).map(|(b, f)| b * f.area).sum(),
            }
        })
        .collect()
}
