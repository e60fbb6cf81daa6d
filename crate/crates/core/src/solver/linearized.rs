//! Linearised equation `h' + B(h) + ∂_y(d, b)(y) h = (f, g)`, `h(0) = 0`.
//!
//! Each step differentiates the implicit Euler step of the forward run
//! exactly, so the result is the derivative of the discrete trajectory.

use crate::fields::{TracerState, Trajectory};
use crate::reaction::monotone_prime;
use crate::tangent::{param_source_dir, ParamDirection, StateJacobian};

use super::{iterate_to_rounding, Model, SolverError, Source, Stepper};

/// Sensitivity of the trajectory `y` to the parameters along `dir`.
pub fn tangent_solve(y: &Trajectory, dir: &ParamDirection, model: &Model) -> Result<Trajectory, SolverError> {
    let src = param_source_dir(y, dir, model.grid, model.env, &model.params);
    let forcing: Vec<Source> = src.levels.iter().map(Source::from_forcing).collect();
    tangent_solve_sources(y, &forcing, model)
}

/// Linearised solve about `y` for an arbitrary forcing sequence (one entry per time level).
pub fn tangent_solve_sources(y: &Trajectory, forcing: &[Source], model: &Model) -> Result<Trajectory, SolverError> {
    if forcing.len() != y.states.len() {
        return Err(SolverError::Config(format!(
            "forcing has {} levels, trajectory has {}",
            forcing.len(),
            y.states.len()
        )));
    }
    let stepper = Stepper::new(model.grid, model.env, y.dt, 0.0)?;
    let n = model.grid.n_cells();
    let mut states = Vec::with_capacity(y.states.len());
    states.push(TracerState::zeros(n));
    for k in 0..y.steps() {
        let t = y.time(k + 1);
        let base = &y.states[k + 1];
        let jac = StateJacobian::with_cache(base, model.grid, model.env, model.reaction_cache(), t);
        let mono: Option<(Vec<f64>, Vec<f64>)> = (model.gamma > 0.0).then(|| {
            let d = |v: &[f64]| v.iter().map(|x| model.gamma_prime(*x)).collect();
            (d(&base.y1), d(&base.y2))
        });
        let hk = &states[k];
        let next = iterate_to_rounding(hk.clone(), k + 1, |h| {
            let mut src = Source::from_reaction(&jac.apply(h));
            src.add_assign(&forcing[k + 1]);
            if let Some((m1, m2)) = &mono {
                for c in 0..n {
                    src.s1[c] -= m1[c] * h.y1[c];
                    src.s2[c] -= m2[c] * h.y2[c];
                }
            }
            stepper.step(hk, &src)
        })?;
        states.push(next);
    }
    Ok(Trajectory { states, dt: y.dt })
}

impl Model<'_> {
    fn gamma_prime(&self, y: f64) -> f64 {
        monotone_prime(y, self.gamma)
    }
}
