//! One implicit Euler step of the linear (or monotone) transport problem.

use crate::fields::{Environment, TracerState};
use crate::geometry::Grid;
use crate::linalg::{norm, BandLu};
use crate::reaction::{monotone, monotone_prime, ReactionOutput};
use crate::transport::Transport;

use super::SolverError;

/// Target relative residual of every linear solve.
pub const LINEAR_RTOL: f64 = 1e-13;

/// Right-hand side of a step: interior sources per unit volume and facet loads per unit area.
#[derive(Debug, Clone, PartialEq)]
pub struct Source {
    pub s1: Vec<f64>,
    pub s2: Vec<f64>,
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
}

impl Source {
    pub fn zeros(grid: &Grid) -> Self {
        let (n, m) = (grid.n_cells(), grid.facets.len());
        Self { s1: vec![0.0; n], s2: vec![0.0; n], g1: vec![0.0; m], g2: vec![0.0; m] }
    }

    /// `-(d, b)`: the coupling moved to the right-hand side.
    pub fn from_reaction(r: &ReactionOutput) -> Self {
        let neg = |v: &[f64]| v.iter().map(|x| -x).collect();
        Self { s1: neg(&r.d1), s2: neg(&r.d2), g1: neg(&r.b1), g2: neg(&r.b2) }
    }

    /// `(f, g)` taken as is.
    pub fn from_forcing(r: &ReactionOutput) -> Self {
        Self { s1: r.d1.clone(), s2: r.d2.clone(), g1: r.b1.clone(), g2: r.b2.clone() }
    }

    pub fn add_assign(&mut self, other: &Source) {
        for (a, b) in [
            (&mut self.s1, &other.s1),
            (&mut self.s2, &other.s2),
            (&mut self.g1, &other.g1),
            (&mut self.g2, &other.g2),
        ] {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

/// Solver for `(M/dt + K + C) y + M m(y) = M/dt y_k + M s + Γ g`, shared by both tracers.
#[derive(Debug, Clone)]
pub struct Stepper {
    pub transport: Transport,
    pub dt: f64,
    pub gamma: f64,
    lu: BandLu,
    facets: Vec<(usize, f64)>,
}

impl Stepper {
    pub fn new(grid: &Grid, env: &Environment, dt: f64, gamma: f64) -> Result<Self, SolverError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(SolverError::Config(format!("dt = {dt} must be > 0")));
        }
        if !(gamma >= 0.0) {
            return Err(SolverError::Config(format!("gamma = {gamma} must be >= 0")));
        }
        let transport = Transport::new(grid, env);
        let lu = transport.system(1.0 / dt, None).factor()?;
        let facets = grid.facets.iter().map(|f| (f.cell, f.area)).collect();
        Ok(Self { transport, dt, gamma, lu, facets })
    }

    fn rhs(&self, yk: &[f64], s: &[f64], g: &[f64]) -> Vec<f64> {
        let mut r: Vec<f64> = yk
            .iter()
            .zip(s)
            .zip(&self.transport.volume)
            .map(|((y, s), v)| v * (y / self.dt + s))
            .collect();
        for ((cell, area), g) in self.facets.iter().zip(g) {
            r[*cell] += area * g;
        }
        r
    }

    fn solve_component(&self, yk: &[f64], s: &[f64], g: &[f64]) -> Result<Vec<f64>, SolverError> {
        let rhs = self.rhs(yk, s, g);
        let x = self.lu.solve(&rhs, LINEAR_RTOL)?;
        if self.gamma == 0.0 {
            return Ok(x);
        }
        self.newton(x, &rhs)
    }

    /// Newton iteration on the full coupled system; the monotone term is
    /// diagonal but transport couples the cells, so each iteration refactors.
    fn newton(&self, mut y: Vec<f64>, rhs: &[f64]) -> Result<Vec<f64>, SolverError> {
        let base = self.transport.system(1.0 / self.dt, None);
        let scale = norm(rhs).max(f64::MIN_POSITIVE);
        let mut history = Vec::new();
        for _ in 0..50 {
            let mut res = base.matvec(&y);
            for (i, r) in res.iter_mut().enumerate() {
                *r += self.transport.volume[i] * monotone(y[i], self.gamma) - rhs[i];
            }
            let rel = norm(&res) / scale;
            history.push(rel);
            if rel <= 1e-12 {
                return Ok(y);
            }
            let diag: Vec<f64> = y
                .iter()
                .zip(&self.transport.volume)
                .map(|(y, v)| v * monotone_prime(*y, self.gamma))
                .collect();
            let jac = self.transport.system(1.0 / self.dt, Some(&diag)).factor()?;
            let dy = jac.solve(&res, LINEAR_RTOL)?;
            for (a, d) in y.iter_mut().zip(&dy) {
                *a -= d;
            }
        }
        Err(SolverError::Newton { history })
    }

    pub fn step(&self, yk: &TracerState, src: &Source) -> Result<TracerState, SolverError> {
        Ok(TracerState {
            y1: self.solve_component(&yk.y1, &src.s1, &src.g1)?,
            y2: self.solve_component(&yk.y2, &src.s2, &src.g2)?,
        })
    }
}

/// One step with a freshly assembled stepper.
pub fn linear_step(
    yk: &TracerState,
    src: &Source,
    dt: f64,
    env: &Environment,
    grid: &Grid,
    gamma: f64,
) -> Result<TracerState, SolverError> {
    Stepper::new(grid, env, dt, gamma)?.step(yk, src)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{Light, StreamFunction};
    use crate::geometry::{build_grid, GridConfig};
    use crate::transport::total_mass;
    use approx::assert_relative_eq;

    #[test]
    fn constant_state_is_steady() {
        let g = build_grid(&GridConfig::desk()).unwrap();
        let env = Environment::with_stream(&g, &StreamFunction::analytic(&g, 50.0), 1.0, Light::constant(30.0)).unwrap();
        let y = TracerState::constant(g.n_cells(), 2.0, 0.2);
        let next = linear_step(&y, &Source::zeros(&g), 0.01, &env, &g, 0.0).unwrap();
        for c in 0..g.n_cells() {
            assert!((next.y1[c] - 2.0).abs() <= 1e-13);
            assert!((next.y2[c] - 0.2).abs() <= 1e-13);
        }
    }

    #[test]
    fn cosine_mode_decays_by_discrete_factor() {
        let (n, h, kappa, dt) = (8usize, 2.0, 0.3, 0.05);
        let g = build_grid(&GridConfig::flat_box(n, 1, h, 1.0, 1.0, 1.0, 1.0)).unwrap();
        let env = Environment::still(&g, kappa, Light::constant(0.0)).unwrap();
        let k = 3.0;
        let mode: Vec<f64> = (0..n)
            .map(|i| (k * std::f64::consts::PI * (i as f64 + 0.5) / n as f64).cos())
            .collect();
        let y = TracerState { y1: mode.clone(), y2: vec![0.0; n] };
        let next = linear_step(&y, &Source::zeros(&g), dt, &env, &g, 0.0).unwrap();
        let mu = 4.0 / (h * h) * (k * std::f64::consts::PI / (2.0 * n as f64)).sin().powi(2);
        let factor = 1.0 / (1.0 + kappa * mu * dt);
        for i in 0..n {
            assert!((next.y1[i] - factor * mode[i]).abs() <= 1e-13);
        }
    }

    #[test]
    fn mass_budget_of_one_step() {
        let g = build_grid(&GridConfig::desk()).unwrap();
        let env = Environment::with_stream(&g, &StreamFunction::analytic(&g, 50.0), 1.0, Light::constant(30.0)).unwrap();
        let n = g.n_cells();
        let y: TracerState = TracerState {
            y1: (0..n).map(|c| 1.0 + (c as f64 * 0.1).sin()).collect(),
            y2: vec![0.2; n],
        };
        let mut src = Source::zeros(&g);
        src.s1 = (0..n).map(|c| (c as f64).cos()).collect();
        let dt = 0.01;
        let next = linear_step(&y, &src, dt, &env, &g, 0.0).unwrap();
        let injected: f64 = src.s1.iter().zip(&g.cells).map(|(s, c)| s * c.volume).sum();
        assert_relative_eq!(total_mass(&next, &g), total_mass(&y, &g) + dt * injected, max_relative = 1e-13);
    }

    #[test]
    fn monotone_step_solves_nonlinear_system() {
        let g = build_grid(&GridConfig::basin(3, 3, 100.0, 100.0, 10.0, 100.0, 50.0, 150.0)).unwrap();
        let env = Environment::with_stream(&g, &StreamFunction::analytic(&g, 20.0), 1.0, Light::constant(30.0)).unwrap();
        let n = g.n_cells();
        let y = TracerState { y1: (0..n).map(|c| (c as f64 * 0.3).sin()).collect(), y2: vec![1.0; n] };
        let dt = 0.1;
        let stepper = Stepper::new(&g, &env, dt, 2.0).unwrap();
        let next = stepper.step(&y, &Source::zeros(&g)).unwrap();
        let tr = &stepper.transport;
        let a = tr.system(1.0 / dt, None).matvec(&next.y1);
        for c in 0..n {
            let lhs = a[c] + tr.volume[c] * monotone(next.y1[c], 2.0);
            let rhs = tr.volume[c] * y.y1[c] / dt;
            assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(tr.volume[c]));
        }
    }

    #[test]
    fn rejects_bad_dt() {
        let g = build_grid(&GridConfig::column(20.0, 10.0, 10.0)).unwrap();
        let env = Environment::still(&g, 1.0, Light::constant(0.0)).unwrap();
        assert!(Stepper::new(&g, &env, 0.0, 0.0).is_err());
        assert!(Stepper::new(&g, &env, 0.1, -1.0).is_err());
    }
}
