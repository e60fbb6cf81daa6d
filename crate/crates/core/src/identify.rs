//! Twin-experiment parameter identification by Gauss-Newton, with the
//! Jacobian assembled from tangent solves.

use std::io::{self, BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::fields::{ModelParams, Param, TracerState, Trajectory};
use crate::geometry::Grid;
use crate::solver::{forward_solve, tangent_solve, Model, SolverError, TimeGrid};
use crate::tangent::unit_direction;

#[derive(Debug, Error)]
pub enum IdentifyError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("observation file: {0}")]
    Parse(String),
    #[error("observation {index} refers to {what}")]
    OutOfRange { index: usize, what: String },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t_index: usize,
    pub cell: usize,
    /// 0 for phosphate, 1 for DOP.
    pub component: usize,
    pub value: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Observation {
    pub samples: Vec<Sample>,
}

/// Which trajectory entries are observed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingPlan {
    /// Observe every `time_stride`-th time level, starting at `time_stride`.
    pub time_stride: usize,
    /// Observe every `cell_stride`-th cell.
    pub cell_stride: usize,
    pub components: [bool; 2],
}

impl Default for SamplingPlan {
    fn default() -> Self {
        Self { time_stride: 10, cell_stride: 1, components: [true, true] }
    }
}

impl SamplingPlan {
    pub fn points(&self, grid: &Grid, steps: usize) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        let ts = self.time_stride.max(1);
        for t in (ts..=steps).step_by(ts) {
            for cell in (0..grid.n_cells()).step_by(self.cell_stride.max(1)) {
                for comp in 0..2 {
                    if self.components[comp] {
                        out.push((t, cell, comp));
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Noise {
    /// Standard deviation in concentration units.
    Absolute(f64),
    /// Standard deviation as a fraction of the sampled value.
    Relative(f64),
}

impl Noise {
    fn sigma(&self, value: f64) -> f64 {
        match *self {
            Noise::Absolute(s) => s,
            Noise::Relative(r) => r * value.abs(),
        }
    }
}

fn sample_value(traj: &Trajectory, t: usize, cell: usize, comp: usize) -> f64 {
    traj.states[t].component(comp)[cell]
}

pub fn synthesize_observations(
    model: &Model,
    y0: &TracerState,
    time: TimeGrid,
    plan: &SamplingPlan,
    noise: Noise,
    seed: u64,
) -> Result<Observation, IdentifyError> {
    let points = plan.points(model.grid, time.steps);
    if points.is_empty() {
        return Err(IdentifyError::Empty("sampling plan"));
    }
    let traj = forward_solve(model, y0, time)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let samples = points
        .into_iter()
        .map(|(t, cell, comp)| {
            let exact = sample_value(&traj, t, cell, comp);
            let sigma = noise.sigma(exact);
            let value = if sigma > 0.0 { exact + sigma * std.sample(&mut rng) } else { exact };
            Sample { t_index: t, cell, component: comp, value, sigma }
        })
        .collect();
    Ok(Observation { samples })
}

impl Observation {
    pub fn validate(&self, grid: &Grid, steps: usize) -> Result<(), IdentifyError> {
        if self.samples.is_empty() {
            return Err(IdentifyError::Empty("observation set"));
        }
        for (index, s) in self.samples.iter().enumerate() {
            if s.t_index > steps {
                return Err(IdentifyError::OutOfRange { index, what: format!("time index {} > {steps}", s.t_index) });
            }
            if s.cell >= grid.n_cells() || s.component > 1 || !(s.sigma >= 0.0) {
                return Err(IdentifyError::OutOfRange { index, what: "a cell, component or sigma outside the grid".into() });
            }
        }
        Ok(())
    }

    /// CSV with header `t_index,i,j,k,component,value,sigma`; components are written as 1 and 2.
    pub fn write_csv<W: Write>(&self, grid: &Grid, mut w: W) -> io::Result<()> {
        writeln!(w, "t_index,i,j,k,component,value,sigma")?;
        for s in &self.samples {
            let c = &grid.cells[s.cell];
            writeln!(w, "{},{},{},{},{},{:e},{:e}", s.t_index, c.i, c.j, c.k, s.component + 1, s.value, s.sigma)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(grid: &Grid, r: R) -> Result<Self, IdentifyError> {
        let mut samples = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || (n == 0 && line.starts_with("t_index")) {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 7 {
                return Err(IdentifyError::Parse(format!("line {}: expected 7 fields, got {}", n + 1, f.len())));
            }
            let int = |s: &str| s.parse::<usize>().map_err(|e| IdentifyError::Parse(format!("line {}: `{s}`: {e}", n + 1)));
            let num = |s: &str| s.parse::<f64>().map_err(|e| IdentifyError::Parse(format!("line {}: `{s}`: {e}", n + 1)));
            let (i, j, k) = (int(f[1])?, int(f[2])?, int(f[3])?);
            let cell = grid
                .cell_at(i, j, k)
                .ok_or_else(|| IdentifyError::Parse(format!("line {}: ({i}, {j}, {k}) is not a wet cell", n + 1)))?;
            let component = match int(f[4])? {
                1 => 0,
                2 => 1,
                c => return Err(IdentifyError::Parse(format!("line {}: component {c} is not 1 or 2", n + 1))),
            };
            samples.push(Sample { t_index: int(f[0])?, cell, component, value: num(f[5])?, sigma: num(f[6])? });
        }
        Ok(Self { samples })
    }
}

/// Model-minus-observation residuals and, per active parameter, the sampled tangent trajectory.
pub fn misfit_and_jacobian(
    model: &Model,
    active: &[Param],
    obs: &Observation,
    y0: &TracerState,
    time: TimeGrid,
) -> Result<(Vec<f64>, Vec<Vec<f64>>), IdentifyError> {
    obs.validate(model.grid, time.steps)?;
    let traj = forward_solve(model, y0, time)?;
    let residual = obs.samples.iter().map(|s| sample_value(&traj, s.t_index, s.cell, s.component) - s.value).collect();
    let mut columns = Vec::with_capacity(active.len());
    for &p in active {
        let h = tangent_solve(&traj, &unit_direction(p), model)?;
        columns.push(obs.samples.iter().map(|s| sample_value(&h, s.t_index, s.cell, s.component)).collect());
    }
    Ok((residual, columns))
}

fn residual_only(model: &Model, obs: &Observation, y0: &TracerState, time: TimeGrid) -> Result<Vec<f64>, IdentifyError> {
    let traj = forward_solve(model, y0, time)?;
    Ok(obs.samples.iter().map(|s| sample_value(&traj, s.t_index, s.cell, s.component) - s.value).collect())
}

fn half_sq(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussNewtonOptions {
    pub max_iter: usize,
    /// Stop when `‖step‖ ≤ step_rtol ‖p‖`.
    pub step_rtol: f64,
    /// Stop when an accepted step lowers the misfit by less than this fraction.
    pub stagnation: f64,
    /// Lower bound kept by every active parameter.
    pub floor: f64,
    pub max_halvings: usize,
}

impl Default for GaussNewtonOptions {
    fn default() -> Self {
        Self { max_iter: 30, step_rtol: 1e-6, stagnation: 1e-10, floor: 1e-8, max_halvings: 30 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitIteration {
    pub iter: usize,
    pub misfit: f64,
    pub step_norm: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub active: Vec<Param>,
    pub p_star: ModelParams,
    pub history: Vec<FitIteration>,
    pub converged: bool,
}

impl FitResult {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let names: Vec<String> = (1..=self.active.len()).map(|i| format!("p_{i}")).collect();
        writeln!(w, "iter,misfit,step_norm,{}", names.join(","))?;
        for h in &self.history {
            let vals: Vec<String> = h.values.iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{},{:e},{:e},{}", h.iter, h.misfit, h.step_norm, vals.join(","))?;
        }
        Ok(())
    }
}

fn clamp(p: Param, v: f64, floor: f64) -> f64 {
    match p {
        Param::Nu => v.clamp(floor, 1.0 - floor),
        _ => v.max(floor),
    }
}

/// Damped Gauss-Newton on `½ Σ r²` over the active parameters.
pub fn gauss_newton(
    p0: ModelParams,
    active: &[Param],
    obs: &Observation,
    model: &Model,
    y0: &TracerState,
    time: TimeGrid,
    opts: &GaussNewtonOptions,
) -> Result<FitResult, IdentifyError> {
    if active.is_empty() {
        return Err(IdentifyError::Empty("active parameter set"));
    }
    let values = |p: &ModelParams| active.iter().map(|&a| p.get(a)).collect::<Vec<_>>();
    let mut p = p0;
    let mut history = Vec::new();
    let (mut r, mut cols) = misfit_and_jacobian(&model.with_params(p), active, obs, y0, time)?;
    let mut misfit = half_sq(&r);
    history.push(FitIteration { iter: 0, misfit, step_norm: 0.0, values: values(&p) });
    let m = active.len();
    for iter in 1..=opts.max_iter {
        if misfit == 0.0 {
            return Ok(FitResult { active: active.to_vec(), p_star: p, history, converged: true });
        }
        // work in relative coordinates so parameters of different size are balanced
        let scale: Vec<f64> = active.iter().map(|&a| p.get(a).abs().max(opts.floor)).collect();
        let j = DMatrix::from_fn(r.len(), m, |i, k| cols[k][i] * scale[k]);
        let jtj = j.transpose() * &j;
        let g = j.transpose() * DVector::from_vec(r.clone());
        let mut normal = jtj.clone();
        let eig = jtj.clone().symmetric_eigen().eigenvalues;
        let (lo, hi) = (eig.min(), eig.max());
        if hi <= 0.0 || lo <= 1e-12 * hi {
            let mu = 1e-8 * hi.max(f64::MIN_POSITIVE) + 1e-12 * lo.abs();
            for k in 0..m {
                normal[(k, k)] += mu;
            }
        }
        let step = match normal.cholesky() {
            Some(ch) => -ch.solve(&g),
            None => return Ok(FitResult { active: active.to_vec(), p_star: p, history, converged: false }),
        };
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let mut trial = p;
            for (k, &a) in active.iter().enumerate() {
                trial.set(a, clamp(a, p.get(a) + t * step[k] * scale[k], opts.floor));
            }
            let rt = residual_only(&model.with_params(trial), obs, y0, time)?;
            let ft = half_sq(&rt);
            if ft < misfit {
                accepted = Some((trial, ft));
                break;
            }
            t *= 0.5;
        }
        let Some((trial, ft)) = accepted else {
            // no descent left: the misfit sits at its floor
            return Ok(FitResult { active: active.to_vec(), p_star: p, history, converged: true });
        };
        let step_norm = active.iter().map(|&a| (trial.get(a) - p.get(a)).powi(2)).sum::<f64>().sqrt();
        let p_norm = values(&trial).iter().map(|v| v * v).sum::<f64>().sqrt();
        let decrease = (misfit - ft) / misfit;
        p = trial;
        misfit = ft;
        history.push(FitIteration { iter, misfit, step_norm, values: values(&p) });
        if step_norm <= opts.step_rtol * p_norm || decrease <= opts.stagnation {
            return Ok(FitResult { active: active.to_vec(), p_star: p, history, converged: true });
        }
        let next = misfit_and_jacobian(&model.with_params(p), active, obs, y0, time)?;
        r = next.0;
        cols = next.1;
    }
    Ok(FitResult { active: active.to_vec(), p_star: p, history, converged: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{Environment, Light, StreamFunction};
    use crate::geometry::{build_grid, GridConfig};

    fn setup() -> (Grid, Environment) {
        let g = build_grid(&GridConfig::basin(3, 3, 100.0, 100.0, 10.0, 100.0, 50.0, 150.0)).unwrap();
        let env = Environment::with_stream(&g, &StreamFunction::analytic(&g, 50.0), 1.0, Light::constant(30.0)).unwrap();
        (g, env)
    }

    fn y0(n: usize) -> TracerState {
        TracerState { y1: (0..n).map(|c| 1.5 + 0.5 * (c as f64 * 0.3).sin()).collect(), y2: vec![0.3; n] }
    }

    #[test]
    fn noiseless_observations_are_exact_and_deterministic() {
        let (g, env) = setup();
        let model = Model::new(&g, &env, ModelParams::default());
        let time = TimeGrid::new(0.5, 20).unwrap();
        let plan = SamplingPlan { time_stride: 5, ..Default::default() };
        let obs = synthesize_observations(&model, &y0(g.n_cells()), time, &plan, Noise::Absolute(0.0), 1).unwrap();
        let traj = forward_solve(&model, &y0(g.n_cells()), time).unwrap();
        for s in &obs.samples {
            assert_eq!(s.value, sample_value(&traj, s.t_index, s.cell, s.component));
        }
        let a = synthesize_observations(&model, &y0(g.n_cells()), time, &plan, Noise::Absolute(0.01), 9).unwrap();
        let b = synthesize_observations(&model, &y0(g.n_cells()), time, &plan, Noise::Absolute(0.01), 9).unwrap();
        assert_eq!(a, b);
        let (r, _) = misfit_and_jacobian(&model, &[Param::Lambda], &obs, &y0(g.n_cells()), time).unwrap();
        assert!(r.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn noise_level_matches_sigma() {
        let (g, env) = setup();
        let model = Model::new(&g, &env, ModelParams::default());
        let time = TimeGrid::new(0.5, 20).unwrap();
        let plan = SamplingPlan { time_stride: 2, ..Default::default() };
        let clean = synthesize_observations(&model, &y0(g.n_cells()), time, &plan, Noise::Absolute(0.0), 3).unwrap();
        let noisy = synthesize_observations(&model, &y0(g.n_cells()), time, &plan, Noise::Absolute(0.01), 3).unwrap();
        assert!(clean.samples.len() >= 1000);
        let d: Vec<f64> = clean.samples.iter().zip(&noisy.samples).map(|(a, b)| b.value - a.value).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64).sqrt();
        assert!((sd - 0.01).abs() <= 0.001, "sd = {sd}");
    }

    #[test]
    fn csv_round_trip() {
        let (g, env) = setup();
        let model = Model::new(&g, &env, ModelParams::default());
        let time = TimeGrid::new(0.5, 10).unwrap();
        let plan = SamplingPlan { time_stride: 5, cell_stride: 7, components: [true, true] };
        let obs = synthesize_observations(&model, &y0(g.n_cells()), time, &plan, Noise::Relative(0.01), 3).unwrap();
        let mut buf = Vec::new();
        obs.write_csv(&g, &mut buf).unwrap();
        let back = Observation::read_csv(&g, &buf[..]).unwrap();
        assert_eq!(back.samples.len(), obs.samples.len());
        for (a, b) in obs.samples.iter().zip(&back.samples) {
            assert_eq!((a.t_index, a.cell, a.component), (b.t_index, b.cell, b.component));
            assert!((a.value - b.value).abs() <= 1e-15 * a.value.abs());
        }
        assert!(Observation::read_csv(&g, "t_index,i,j,k,component,value,sigma\n1,0,0,0,3,1.0,0.0\n".as_bytes()).is_err());
    }

    #[test]
    fn duplicate_rows_give_duplicate_residuals() {
        let (g, env) = setup();
        let model = Model::new(&g, &env, ModelParams::default());
        let time = TimeGrid::new(0.5, 10).unwrap();
        let s = Sample { t_index: 10, cell: 3, component: 0, value: 0.0, sigma: 0.0 };
        let obs = Observation { samples: vec![s, s] };
        let (r, cols) = misfit_and_jacobian(&model, &[Param::Alpha], &obs, &y0(g.n_cells()), time).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0], r[1]);
        assert_eq!(cols[0][0], cols[0][1]);
    }

    #[test]
    fn recovers_lambda_and_alpha() {
        let (g, env) = setup();
        let truth = ModelParams::default();
        let model = Model::new(&g, &env, truth);
        let time = TimeGrid::new(0.5, 20).unwrap();
        let plan = SamplingPlan { time_stride: 5, ..Default::default() };
        let y0 = y0(g.n_cells());
        let obs = synthesize_observations(&model, &y0, time, &plan, Noise::Absolute(0.0), 1).unwrap();
        let p0 = truth.with(Param::Lambda, 0.6).with(Param::Alpha, 2.4);
        let fit = gauss_newton(p0, &[Param::Lambda, Param::Alpha], &obs, &model, &y0, time, &Default::default()).unwrap();
        assert!(fit.converged);
        assert!((fit.p_star.lambda - 0.5).abs() <= 1e-6);
        assert!((fit.p_star.alpha - 2.0).abs() <= 1e-6);
        assert!(fit.history.windows(2).all(|w| w[1].misfit < w[0].misfit));
        assert!(fit.history.last().unwrap().misfit <= 1e-8 * fit.history[0].misfit);
    }
}
