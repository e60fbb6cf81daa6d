//! Trajectory-level fixed-point iteration `z ↦ y(z)`, where `y(z)` solves the
//! linear transport problem with the coupling frozen at `z`.
//!
//! Progress is measured in the exponentially weighted sup norm
//! `‖y‖_C = max_k ‖y_k‖ e^{-C t_k / 2}`. With the automatic weight, `C t`
//! reaches the hundreds, so norms are carried as logarithms.

use std::time::Instant;

use crate::fields::{TracerState, Trajectory};
use crate::reaction::lipschitz_constants;
use crate::transport::Norms;

use super::{Model, SolverError, Source, Stepper, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardConfig {
    /// Cauchy parameter; `None` means `κ_min / 4`.
    pub epsilon: Option<f64>,
    /// Exponential weight; `None` means `4 L1²/(2ε) e^{2Tκ_min}`.
    pub weight_c: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    /// Record wall-clock time per iteration (otherwise reported as 0).
    pub timing: bool,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self { epsilon: None, weight_c: None, tol: 1e-10, max_iter: 200, timing: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardReport {
    pub iterations: usize,
    /// Weighted norms of consecutive differences (may underflow to 0; see `log_residuals`).
    pub residuals: Vec<f64>,
    pub log_residuals: Vec<f64>,
    /// Plain `max_k ‖·‖_{L²}` of the same differences.
    pub sup_residuals: Vec<f64>,
    pub ratios: Vec<f64>,
    /// Weighted residual below which differences are rounding noise.
    pub log_floor: f64,
    pub wallclock_ms: Vec<f64>,
    pub l_a: f64,
    pub l1: f64,
    pub weight_c: f64,
    pub epsilon: f64,
    pub converged: bool,
}

impl PicardReport {
    /// Ratios whose two residuals both sit above the rounding floor.
    pub fn resolved_ratios(&self) -> Vec<f64> {
        self.log_residuals
            .windows(2)
            .filter(|w| w[0] > self.log_floor && w[1] > self.log_floor)
            .map(|w| (w[1] - w[0]).exp())
            .collect()
    }

    /// Largest of the last three resolved ratios.
    pub fn asymptotic_ratio(&self) -> Option<f64> {
        let r = self.resolved_ratios();
        let tail = &r[r.len().saturating_sub(3)..];
        tail.iter().copied().reduce(f64::max)
    }

    /// Every resolved ratio is below one.
    pub fn decays_geometrically(&self) -> bool {
        self.resolved_ratios().iter().all(|r| *r < 1.0)
    }
}

/// `ln ‖delta‖_C`; `-∞` for a zero trajectory.
pub fn log_weighted_norm(delta: &Trajectory, c: f64, norms: &Norms) -> f64 {
    delta
        .states
        .iter()
        .enumerate()
        .map(|(k, y)| {
            let n = norms.l2_state(y);
            if n == 0.0 {
                f64::NEG_INFINITY
            } else {
                n.ln() - 0.5 * c * delta.time(k)
            }
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `sqrt(max_k ‖delta_k‖² e^{-C t_k})`.
pub fn weighted_norm(delta: &Trajectory, c: f64, norms: &Norms) -> f64 {
    log_weighted_norm(delta, c, norms).exp()
}

/// `L_A = sqrt((1/C) (L1²/(2ε)) e^{2Tκ_min})`.
pub fn contraction_bound(l1: f64, epsilon: f64, t_end: f64, kappa_min: f64, c: f64) -> f64 {
    if l1 == 0.0 {
        return 0.0;
    }
    (l1 * l1 / (2.0 * epsilon) * (2.0 * t_end * kappa_min).exp() / c).sqrt()
}

/// `4 L1²/(2ε) e^{2Tκ_min}`, which makes `L_A = 1/2`.
pub fn auto_weight(l1: f64, epsilon: f64, t_end: f64, kappa_min: f64) -> f64 {
    4.0 * l1 * l1 / (2.0 * epsilon) * (2.0 * t_end * kappa_min).exp()
}

/// Solves `y' + B(y) + m(y) = f - (d, b)(z)` with the coupling at the new time level.
pub fn solve_frozen(
    z: &Trajectory,
    model: &Model,
    stepper: &Stepper,
    y0: &TracerState,
    rhs: Option<&[Source]>,
) -> Result<Trajectory, SolverError> {
    let cache = model.reaction_cache();
    let mut states = Vec::with_capacity(z.states.len());
    states.push(y0.clone());
    for k in 0..z.steps() {
        let t = z.time(k + 1);
        let mut src = Source::from_reaction(&cache.evaluate(&z.states[k + 1], model.grid, model.env, t));
        if let Some(extra) = rhs {
            src.add_assign(&extra[k + 1]);
        }
        let next = stepper.step(&states[k], &src)?;
        states.push(next);
    }
    Ok(Trajectory { states, dt: z.dt })
}

pub fn picard_solve(
    y0: &TracerState,
    model: &Model,
    time: TimeGrid,
    cfg: &PicardConfig,
) -> Result<(Trajectory, PicardReport), SolverError> {
    picard_solve_from(Trajectory::constant(y0, time.dt(), time.steps), model, cfg)
}

/// Fixed-point iteration from an arbitrary first iterate; its initial state fixes `y0`.
pub fn picard_solve_from(
    z0: Trajectory,
    model: &Model,
    cfg: &PicardConfig,
) -> Result<(Trajectory, PicardReport), SolverError> {
    let y0 = z0.states[0].clone();
    y0.check_len(model.grid)?;
    let t_end = z0.horizon();
    let kappa_min = model.env.kappa_min;
    let epsilon = cfg.epsilon.unwrap_or(0.25 * kappa_min);
    if !(epsilon > 0.0 && epsilon < 0.5 * kappa_min) {
        return Err(SolverError::Config(format!(
            "epsilon = {epsilon} violates 0 < epsilon < kappa_min/2 = {}",
            0.5 * kappa_min
        )));
    }
    if !(cfg.tol > 0.0) || cfg.max_iter == 0 {
        return Err(SolverError::Config("need tol > 0 and max_iter >= 1".into()));
    }
    let l1 = lipschitz_constants(&model.params, model.grid).l1;
    let weight_c = match cfg.weight_c {
        Some(c) if c > 0.0 && c.is_finite() => c,
        Some(c) => return Err(SolverError::Config(format!("weight_C = {c} must be > 0"))),
        None => auto_weight(l1, epsilon, t_end, kappa_min),
    };
    let l_a = contraction_bound(l1, epsilon, t_end, kappa_min, weight_c);
    let stepper = model.stepper(z0.dt)?;
    let norms = Norms::new(model.grid, model.env)?;

    let mut report = PicardReport {
        iterations: 0,
        residuals: Vec::new(),
        log_residuals: Vec::new(),
        sup_residuals: Vec::new(),
        ratios: Vec::new(),
        log_floor: f64::NEG_INFINITY,
        wallclock_ms: Vec::new(),
        l_a,
        l1,
        weight_c,
        epsilon,
        converged: false,
    };
    let mut z = z0;
    for _ in 0..cfg.max_iter {
        let start = cfg.timing.then(Instant::now);
        let next = solve_frozen(&z, model, &stepper, &y0, None)?;
        let delta = next.sub(&z);
        let log_res = log_weighted_norm(&delta, weight_c, &norms);
        let sup = delta.states.iter().map(|s| norms.l2_state(s)).fold(0.0, f64::max);
        if report.log_residuals.is_empty() {
            // weighted size of the iterate away from the fixed initial value
            let log_size = next
                .states
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, y)| norms.l2_state(y).ln() - 0.5 * weight_c * next.time(k))
                .fold(f64::NEG_INFINITY, f64::max);
            report.log_floor = log_size + 1e-12f64.ln();
        }
        if let Some(prev) = report.log_residuals.last() {
            report.ratios.push((log_res - prev).exp());
        }
        report.log_residuals.push(log_res);
        report.residuals.push(log_res.exp());
        report.sup_residuals.push(sup);
        report.wallclock_ms.push(start.map_or(0.0, |s| s.elapsed().as_secs_f64() * 1e3));
        z = next;
        report.iterations = report.residuals.len() - 1;
        let first = report.log_residuals[0];
        let weighted_done = log_res == f64::NEG_INFINITY || log_res <= first + cfg.tol.ln();
        let sup_done = sup <= cfg.tol * report.sup_residuals[0];
        if weighted_done && sup_done {
            report.converged = true;
            return Ok((z, report));
        }
    }
    Err(SolverError::Picard(Box::new(report)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{Environment, Light, ModelParams, StreamFunction};
    use crate::geometry::{build_grid, Grid, GridConfig};
    use crate::solver::forward_solve;
    use approx::assert_relative_eq;

    fn small() -> (Grid, Environment) {
        let g = build_grid(&GridConfig::basin(4, 3, 100.0, 100.0, 10.0, 100.0, 50.0, 150.0)).unwrap();
        let env = Environment::with_stream(&g, &StreamFunction::analytic(&g, 50.0), 1.0, Light::constant(30.0)).unwrap();
        (g, env)
    }

    fn y0(n: usize) -> TracerState {
        TracerState { y1: (0..n).map(|c| 2.0 + 0.3 * (c as f64 * 0.11).cos()).collect(), y2: vec![0.2; n] }
    }

    #[test]
    fn contraction_bound_examples() {
        let c = 4.0 * 2.0 * std::f64::consts::E;
        assert_relative_eq!(contraction_bound(1.0, 0.25, 1.0, 0.5, c), 0.5, max_relative = 1e-15);
        let edge = 1.0 / 0.5 * 1f64.exp();
        assert_relative_eq!(contraction_bound(1.0, 0.25, 1.0, 0.5, edge), 1.0, max_relative = 1e-15);
        assert_eq!(contraction_bound(0.0, 0.25, 1.0, 0.5, c), 0.0);
        assert_relative_eq!(auto_weight(1.0, 0.25, 1.0, 0.5), c, max_relative = 1e-15);
    }

    #[test]
    fn weighted_norm_examples() {
        let g = build_grid(&GridConfig::column(10.0, 10.0, 10.0)).unwrap();
        let env = Environment::still(&g, 1.0, Light::constant(0.0)).unwrap();
        let norms = Norms::new(&g, &env).unwrap();
        let zero = TracerState::zeros(1);
        let one = TracerState { y1: vec![0.1f64.sqrt()], y2: vec![0.0] }; // volume 10
        let delta = Trajectory { states: vec![zero.clone(), zero.clone(), one.clone()], dt: 0.5 };
        assert_relative_eq!(weighted_norm(&delta, 2.0, &norms), (-1.0f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(weighted_norm(&delta, 0.0, &norms), 1.0, max_relative = 1e-14);
        let none = Trajectory { states: vec![zero.clone(), zero], dt: 0.5 };
        assert_eq!(weighted_norm(&none, 2.0, &norms), 0.0);
    }

    #[test]
    fn linear_problem_converges_in_one_iteration() {
        let (g, env) = small();
        let model = Model::new(&g, &env, ModelParams { alpha: 1e-300, lambda: 1e-300, ..Default::default() });
        let cfg = PicardConfig { weight_c: Some(1.0), ..Default::default() };
        let (_, report) = picard_solve(&y0(g.n_cells()), &model, TimeGrid::new(1.0, 20).unwrap(), &cfg).unwrap();
        assert_eq!(report.iterations, 1);
    }

    #[test]
    fn fixed_point_matches_forward_run() {
        let (g, env) = small();
        let model = Model::new(&g, &env, ModelParams::default());
        let time = TimeGrid::new(1.0, 50).unwrap();
        let y0 = y0(g.n_cells());
        let (z, report) = picard_solve(&y0, &model, time, &PicardConfig::default()).unwrap();
        assert!(report.converged);
        assert!(report.decays_geometrically());
        assert!(report.asymptotic_ratio().unwrap() <= report.l_a.min(1.0) + 0.1);
        let f = forward_solve(&model, &y0, time).unwrap();
        assert!(z.sub(&f).max_abs() <= 1e-9 * f.max_abs());
        // certificate: one more application barely moves the fixed point
        let again = solve_frozen(&z, &model, &model.stepper(time.dt()).unwrap(), &y0, None).unwrap();
        assert!(again.sub(&z).max_abs() <= 1e-9 * z.max_abs());
    }

    #[test]
    fn max_iter_returns_report() {
        let (g, env) = small();
        let model = Model::new(&g, &env, ModelParams::default());
        let cfg = PicardConfig { max_iter: 2, ..Default::default() };
        match picard_solve(&y0(g.n_cells()), &model, TimeGrid::new(1.0, 10).unwrap(), &cfg) {
            Err(SolverError::Picard(r)) => assert_eq!(r.residuals.len(), 2),
            other => panic!("expected divergence report, got {other:?}"),
        }
    }

    #[test]
    fn epsilon_must_be_below_half_kappa() {
        let (g, env) = small();
        let model = Model::new(&g, &env, ModelParams::default());
        let cfg = PicardConfig { epsilon: Some(0.6), ..Default::default() };
        assert!(matches!(
            picard_solve(&y0(g.n_cells()), &model, TimeGrid::new(1.0, 10).unwrap(), &cfg),
            Err(SolverError::Config(_))
        ));
    }
}
