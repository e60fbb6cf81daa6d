//! Invariant suites run by the `check` command.
//!
//! Every suite returns rows `(suite, property, samples, violations, worst, pass)`
//! where `worst` is the largest observed value of the quantity that the
//! property bounds, normalised so that `worst ≤ 1` means the bound holds
//! unless the row says otherwise.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fields::{Environment, Light, ModelParams, Param, StreamFunction, TracerState, Trajectory};
use crate::geometry::{build_grid, Grid, GridConfig};
use crate::identify::{gauss_newton, synthesize_observations, GaussNewtonOptions, Noise, SamplingPlan};
use crate::reaction::{column_mass_balance, evaluate, lipschitz_constants, saturation, saturation_derivative};
use crate::solver::{
    energy_estimate_check, forcing_dual_norm, forward_solve, galerkin_solve, picard_solve, picard_solve_from,
    tangent_solve, GalerkinSystem, Model, PicardConfig, SolverError, Source, Stepper, TimeGrid,
};
use crate::tangent::unit_direction;
use crate::transport::{advection_skew_check, total_mass, Norms, Transport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Saturation,
    Lipschitz,
    Skew,
    Mass,
    Picard,
    Energy,
    Tangent,
    Galerkin,
    Identify,
    Balance,
    All,
}

impl Suite {
    pub const EACH: [Suite; 10] = [
        Suite::Saturation,
        Suite::Lipschitz,
        Suite::Skew,
        Suite::Mass,
        Suite::Picard,
        Suite::Energy,
        Suite::Tangent,
        Suite::Galerkin,
        Suite::Identify,
        Suite::Balance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Saturation => "saturation",
            Suite::Lipschitz => "lipschitz",
            Suite::Skew => "skew",
            Suite::Mass => "mass",
            Suite::Picard => "picard",
            Suite::Energy => "energy",
            Suite::Tangent => "tangent",
            Suite::Galerkin => "galerkin",
            Suite::Identify => "identify",
            Suite::Balance => "balance",
            Suite::All => "all",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::EACH
            .into_iter()
            .chain([Suite::All])
            .find(|x| x.name() == s)
            .ok_or_else(|| format!("unknown suite `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub suite: Suite,
    pub property: String,
    pub samples: usize,
    pub violations: usize,
    pub worst: f64,
    pub pass: bool,
}

impl CheckRow {
    fn new(suite: Suite, property: impl Into<String>, samples: usize, violations: usize, worst: f64) -> Self {
        Self { suite, property: property.into(), samples, violations, worst, pass: violations == 0 }
    }

    fn bound(suite: Suite, property: impl Into<String>, values: &[f64]) -> Self {
        let violations = values.iter().filter(|v| !(**v <= 1.0)).count();
        let worst = values.iter().copied().fold(0.0, f64::max);
        Self::new(suite, property, values.len(), violations, worst)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CheckOutcome {
    pub rows: Vec<CheckRow>,
    pub constants: Vec<(String, f64)>,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn write_rows<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "suite,property,samples,violations,worst,pass")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{},{:e},{}", r.suite, r.property, r.samples, r.violations, r.worst, r.pass)?;
        }
        Ok(())
    }

    pub fn write_constants<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "name,value")?;
        for (name, value) in &self.constants {
            writeln!(w, "{name},{value:e}")?;
        }
        Ok(())
    }
}

/// The configured run the model-level suites operate on.
#[derive(Debug, Clone, Copy)]
pub struct CheckContext<'a> {
    pub grid: &'a Grid,
    pub env: &'a Environment,
    pub params: ModelParams,
    pub time: TimeGrid,
    pub y0: &'a TracerState,
    pub picard: PicardConfig,
}

pub fn run_suite(suite: Suite, ctx: &CheckContext, seed: u64) -> Result<CheckOutcome, SolverError> {
    let mut out = CheckOutcome::default();
    let suites: Vec<Suite> = if suite == Suite::All { Suite::EACH.to_vec() } else { vec![suite] };
    for s in suites {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match s {
            Suite::Saturation => saturation_suite(&mut rng, &mut out),
            Suite::Lipschitz => lipschitz_suite(ctx, &mut rng, &mut out),
            Suite::Skew => skew_suite(ctx, &mut rng, &mut out),
            Suite::Mass => mass_suite(ctx, &mut out)?,
            Suite::Picard => picard_suite(ctx, &mut rng, &mut out)?,
            Suite::Energy => energy_suite(ctx, &mut rng, &mut out)?,
            Suite::Tangent => tangent_suite(ctx, &mut out)?,
            Suite::Galerkin => galerkin_suite(&mut out)?,
            Suite::Identify => identify_suite(ctx, seed, &mut out)?,
            Suite::Balance => balance_suite(ctx, &mut rng, &mut out),
            Suite::All => unreachable!(),
        }
    }
    Ok(out)
}

/// Random basins of modest size with the euphotic depth on the layer lattice.
pub fn random_grids(rng: &mut impl Rng, count: usize) -> Vec<Grid> {
    (0..count)
        .map(|_| {
            let dz = [5.0, 10.0, 20.0][rng.random_range(0..3)];
            let nx = rng.random_range(2..=6);
            let ny = rng.random_range(1..=6);
            let he_bar = dz * rng.random_range(2..=6) as f64;
            let depth_min = dz * rng.random_range(1..=4) as f64;
            let depth_max = depth_min + dz * rng.random_range(0..=8) as f64;
            let dx = rng.random_range(50.0..200.0);
            let dy = rng.random_range(50.0..200.0);
            build_grid(&GridConfig::basin(nx, ny, dx, dy, dz, he_bar, depth_min, depth_max)).expect("valid random grid")
        })
        .collect()
}

fn random_state(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> TracerState {
    TracerState {
        y1: (0..n).map(|_| rng.random_range(lo..hi)).collect(),
        y2: (0..n).map(|_| rng.random_range(lo..hi)).collect(),
    }
}

fn volume_norm(grid: &Grid, a: &[f64], b: &[f64]) -> f64 {
    grid.cells.iter().enumerate().map(|(c, cell)| cell.volume * (a[c] * a[c] + b[c] * b[c])).sum::<f64>().sqrt()
}

fn facet_norm(grid: &Grid, a: &[f64], b: &[f64]) -> f64 {
    grid.facets.iter().enumerate().map(|(f, facet)| facet.area * (a[f] * a[f] + b[f] * b[f])).sum::<f64>().sqrt()
}

fn saturation_suite(rng: &mut impl Rng, out: &mut CheckOutcome) {
    for k in [0.1, 0.5, 30.0] {
        let (mut bounded, mut lipschitz) = (Vec::new(), Vec::new());
        for _ in 0..100_000 {
            let scale = 10f64.powf(rng.random_range(-3.0..3.0));
            let x = rng.random_range(-1.0..1.0) * scale * k;
            let y = rng.random_range(-1.0..1.0) * scale * k;
            let (fx, fy) = (saturation(x, k).expect("positive K"), saturation(y, k).expect("positive K"));
            bounded.push(fx.abs());
            if x != y {
                lipschitz.push((fx - fy).abs() / (x - y).abs() * k);
            }
        }
        let slope: Vec<f64> = [0.0, 1e-9, -1e-9].iter().map(|x| saturation_derivative(*x * k, k).expect("positive K") * k).collect();
        out.rows.push(CheckRow::bound(Suite::Saturation, format!("|f_K| <= 1 (K={k})"), &bounded));
        out.rows.push(CheckRow::bound(Suite::Saturation, format!("Lipschitz 1/K (K={k})"), &lipschitz));
        out.rows.push(CheckRow::bound(Suite::Saturation, format!("slope at 0 <= 1/K (K={k})"), &slope));
    }
}

fn lipschitz_suite(ctx: &CheckContext, rng: &mut impl Rng, out: &mut CheckOutcome) {
    let params = ctx.params;
    let k = lipschitz_constants(&params, ctx.grid);
    out.constants.extend([
        ("L_d".to_string(), k.l_d),
        ("L_b".to_string(), k.l_b),
        ("c_tau".to_string(), k.c_tau),
        ("L1".to_string(), k.l1),
    ]);
    let mut grids = random_grids(rng, 9);
    grids.push(ctx.grid.clone());
    let (mut rd, mut rb) = (Vec::new(), Vec::new());
    for grid in &grids {
        let env = Environment::still(grid, 1.0, ctx.env.light).expect("valid environment");
        let kc = lipschitz_constants(&params, grid);
        for s in 0..100 {
            let y = random_state(rng, grid.n_cells(), -1.0, 4.0);
            let z = if s % 2 == 0 {
                random_state(rng, grid.n_cells(), -1.0, 4.0)
            } else {
                y.axpy(1e-3, &random_state(rng, grid.n_cells(), -1.0, 1.0))
            };
            let (ey, ez) = (evaluate(&y, grid, &env, &params, 0.0), evaluate(&z, grid, &env, &params, 0.0));
            let dy = y.sub(&z);
            let den = volume_norm(grid, &dy.y1, &dy.y2);
            let dd1: Vec<f64> = ey.d1.iter().zip(&ez.d1).map(|(a, b)| a - b).collect();
            let dd2: Vec<f64> = ey.d2.iter().zip(&ez.d2).map(|(a, b)| a - b).collect();
            let db1: Vec<f64> = ey.b1.iter().zip(&ez.b1).map(|(a, b)| a - b).collect();
            let db2: Vec<f64> = ey.b2.iter().zip(&ez.b2).map(|(a, b)| a - b).collect();
            rd.push(volume_norm(grid, &dd1, &dd2) / (kc.l_d * den));
            rb.push(facet_norm(grid, &db1, &db2) / (kc.l_b * den));
        }
    }
    out.rows.push(CheckRow::bound(Suite::Lipschitz, "|d(y)-d(z)| <= L_d |y-z|", &rd));
    out.rows.push(CheckRow::bound(Suite::Lipschitz, "|b(y)-b(z)|_G <= L_b |y-z|", &rb));
}

/// A stream function with uniform random values on the interior corners.
pub fn random_stream(grid: &Grid, rng: &mut impl Rng, amp: f64) -> StreamFunction {
    StreamFunction::from_interior(grid, |_, _, _| rng.random_range(-amp..amp))
}

fn skew_suite(ctx: &CheckContext, rng: &mut impl Rng, out: &mut CheckOutcome) {
    out.constants.push(("C_B".into(), Transport::new(ctx.grid, ctx.env).boundedness_constant(ctx.env)));
    let mut grids = random_grids(rng, 4);
    grids.push(ctx.grid.clone());
    let mut vals = Vec::new();
    for s in 0..100 {
        let grid = &grids[s % grids.len()];
        let psi = random_stream(grid, rng, 100.0);
        let env = Environment::with_stream(grid, &psi, 1.0, Light::constant(0.0)).expect("valid stream");
        let tr = Transport::new(grid, &env);
        let w: Vec<f64> = (0..grid.n_cells()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let scale = 1e-12 * w.iter().map(|v| v * v).sum::<f64>() * env.max_flux();
        if scale > 0.0 {
            vals.push(advection_skew_check(&w, &tr).abs() / scale);
        }
    }
    out.rows.push(CheckRow::bound(Suite::Skew, "|<A_adv w, w>| <= 1e-12 |w|^2 max_flux", &vals));
}

fn mass_drift(traj: &Trajectory, grid: &Grid) -> f64 {
    let m0 = total_mass(&traj.states[0], grid);
    traj.states.iter().map(|s| (total_mass(s, grid) - m0).abs() / m0.abs()).fold(0.0, f64::max)
}

fn mass_suite(ctx: &CheckContext, out: &mut CheckOutcome) -> Result<(), SolverError> {
    let model = Model::new(ctx.grid, ctx.env, ctx.params);
    let traj = forward_solve(&model, ctx.y0, ctx.time)?;
    let drift = mass_drift(&traj, ctx.grid);
    out.constants.push(("mass_drift".into(), drift));
    out.rows.push(CheckRow::bound(Suite::Mass, "relative mass drift <= 1e-10", &[drift / 1e-10]));
    Ok(())
}

fn picard_suite(ctx: &CheckContext, rng: &mut impl Rng, out: &mut CheckOutcome) -> Result<(), SolverError> {
    let model = Model::new(ctx.grid, ctx.env, ctx.params);
    let (y, rep) = picard_solve(ctx.y0, &model, ctx.time, &ctx.picard)?;
    let bound = rep.l_a.min(1.0) + 0.1;
    let ratio = rep.asymptotic_ratio().unwrap_or(0.0);
    out.constants.extend([
        ("L_A".to_string(), rep.l_a),
        ("weight_C".to_string(), rep.weight_c),
        ("picard_iterations".to_string(), rep.iterations as f64),
        ("asymptotic_ratio".to_string(), ratio),
    ]);
    let resolved = rep.resolved_ratios();
    out.rows.push(CheckRow::new(Suite::Picard, "converged", 1, usize::from(!rep.converged), rep.iterations as f64));
    out.rows.push(CheckRow::bound(Suite::Picard, "resolved ratios < 1", &resolved.iter().map(|r| r / (1.0 - 1e-15)).collect::<Vec<_>>()));
    out.rows.push(CheckRow::bound(Suite::Picard, "asymptotic ratio <= min(1, L_A) + 0.1", &[ratio / bound]));

    let n = ctx.grid.n_cells();
    let mut z0 = Trajectory::constant(ctx.y0, ctx.time.dt(), ctx.time.steps);
    for s in z0.states.iter_mut().skip(1) {
        *s = s.axpy(1.0, &random_state(rng, n, -0.5, 0.5));
    }
    let (y2, _) = picard_solve_from(z0, &model, &ctx.picard)?;
    let norms = Norms::new(ctx.grid, ctx.env)?;
    let size = y.states.iter().map(|s| norms.l2_state(s)).fold(0.0, f64::max);
    let diff = y.sub(&y2).states.iter().map(|s| norms.l2_state(s)).fold(0.0, f64::max);
    out.rows.push(CheckRow::bound(
        Suite::Picard,
        "two first iterates agree to 10 tol",
        &[diff / (10.0 * ctx.picard.tol * size)],
    ));
    Ok(())
}

fn energy_suite(ctx: &CheckContext, rng: &mut impl Rng, out: &mut CheckOutcome) -> Result<(), SolverError> {
    let grid = ctx.grid;
    let n = grid.n_cells();
    let norms = Norms::new(grid, ctx.env)?;
    let dt = ctx.time.dt();
    let eps = ctx.picard.epsilon.unwrap_or(0.25 * ctx.env.kappa_min);
    let stepper = Stepper::new(grid, ctx.env, dt, 0.0)?;
    let mut linear = Vec::new();
    for _ in 0..10 {
        let y0 = random_state(rng, n, -1.0, 1.0);
        let forcing: Vec<Source> = (0..=ctx.time.steps)
            .map(|_| Source {
                s1: (0..n).map(|_| rng.random_range(-0.1..0.1)).collect(),
                s2: (0..n).map(|_| rng.random_range(-0.1..0.1)).collect(),
                g1: vec![0.0; grid.facets.len()],
                g2: vec![0.0; grid.facets.len()],
            })
            .collect();
        let mut states = vec![y0.clone()];
        for k in 0..ctx.time.steps {
            let next = stepper.step(&states[k], &forcing[k + 1])?;
            states.push(next);
        }
        let traj = Trajectory { states, dt };
        let fd = forcing_dual_norm(&forcing, dt, grid, &norms)?;
        let r = energy_estimate_check(&traj, fd, &y0, 0.0, eps, ctx.env, &norms)?;
        linear.push(r.lhs / r.rhs);
        if out.constants.iter().all(|(k, _)| k != "energy_C_linear") {
            out.constants.push(("energy_C_linear".into(), r.constants.c));
        }
    }
    out.rows.push(CheckRow::bound(Suite::Energy, "linear runs lhs <= C rhs", &linear));

    let model = Model::new(grid, ctx.env, ctx.params);
    let l1 = lipschitz_constants(&ctx.params, grid).l1;
    let mut nonlinear = Vec::new();
    for s in 0..10 {
        let y0 = if s == 0 { ctx.y0.clone() } else { random_state(rng, n, 0.0, 3.0) };
        let traj = forward_solve(&model, &y0, ctx.time)?;
        let r = energy_estimate_check(&traj, 0.0, &y0, l1, eps, ctx.env, &norms)?;
        nonlinear.push(r.lhs / r.rhs);
        if s == 0 {
            out.constants.extend([
                ("energy_C1".to_string(), r.constants.c1),
                ("energy_C2".to_string(), r.constants.c2),
                ("energy_C".to_string(), r.constants.c),
            ]);
        }
    }
    out.rows.push(CheckRow::bound(Suite::Energy, "nonlinear runs lhs <= C rhs", &nonlinear));
    Ok(())
}

/// Central-difference comparison of the tangent trajectory for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct FdComparison {
    pub param: Param,
    pub delta: f64,
    /// Per time level: `(max |h|, max |fd|, max |h - fd|)`.
    pub levels: Vec<(f64, f64, f64)>,
    /// `max |h - fd| / max |h|` over the whole trajectory.
    pub rel_error: f64,
}

pub fn central_difference(
    model: &Model,
    y: &Trajectory,
    tangent: &Trajectory,
    param: Param,
    rel_delta: f64,
) -> Result<FdComparison, SolverError> {
    let p = model.params;
    let d = rel_delta * p.get(param);
    let time = TimeGrid::new(y.horizon(), y.steps())?;
    let y0 = &y.states[0];
    let yp = forward_solve(&model.with_params(p.with(param, p.get(param) + d)), y0, time)?;
    let ym = forward_solve(&model.with_params(p.with(param, p.get(param) - d)), y0, time)?;
    let levels: Vec<(f64, f64, f64)> = yp
        .sub(&ym)
        .states
        .iter()
        .zip(&tangent.states)
        .map(|(diff, h)| {
            let fd = diff.scale(0.5 / d);
            (h.max_abs(), fd.max_abs(), h.sub(&fd).max_abs())
        })
        .collect();
    let err = levels.iter().map(|l| l.2).fold(0.0, f64::max);
    let size = tangent.max_abs();
    let rel_error = if size > 0.0 { err / size } else { err };
    Ok(FdComparison { param, delta: d, levels, rel_error })
}

fn tangent_suite(ctx: &CheckContext, out: &mut CheckOutcome) -> Result<(), SolverError> {
    let model = Model::new(ctx.grid, ctx.env, ctx.params);
    let y = forward_solve(&model, ctx.y0, ctx.time)?;
    for p in Param::ALL {
        let h = tangent_solve(&y, &unit_direction(p), &model)?;
        let small = central_difference(&model, &y, &h, p, 1e-4)?;
        let coarse = central_difference(&model, &y, &h, p, 1e-2)?;
        let fine = central_difference(&model, &y, &h, p, 5e-3)?;
        let order = (coarse.rel_error / fine.rel_error).log2();
        out.constants.push((format!("tangent_order_{}", p.name()), order));
        out.rows.push(CheckRow::bound(Suite::Tangent, format!("rel error <= 1e-3 at 1e-4 ({})", p.name()), &[small.rel_error / 1e-3]));
        out.rows.push(CheckRow::bound(Suite::Tangent, format!("order >= 1.9 ({})", p.name()), &[1.9 / order]));
    }
    Ok(())
}

/// Max-in-time L² distance between a Galerkin run with the full basis and the
/// Picard solution on a flat box refined `level` times.
pub fn galerkin_fv_discrepancy(level: usize, kappa: f64) -> Result<f64, SolverError> {
    let n = 2usize << level;
    let nz = 4usize << level;
    let grid = build_grid(&GridConfig::flat_box(n, n, 400.0 / n as f64, 400.0 / n as f64, 200.0 / nz as f64, 200.0, 100.0))
        .map_err(|e| SolverError::Config(e.to_string()))?;
    let env = Environment::still(&grid, kappa, Light::constant(30.0))?;
    let model = Model::new(&grid, &env, ModelParams::default());
    let time = TimeGrid::new(1.0, 10 << level)?;
    let y0 = TracerState::smooth(&grid, 2.0, 1.0, 0.2);
    let (fv, _) = picard_solve(&y0, &model, time, &PicardConfig::default())?;
    let sys = GalerkinSystem::new(&grid, &env, grid.n_cells())?;
    let gs = galerkin_solve(&sys, &model, &y0, time)?;
    let norms = Norms::new(&grid, &env)?;
    Ok((0..=time.steps).map(|k| norms.l2_state(&gs.state(&sys, k).sub(&fv.states[k]))).fold(0.0, f64::max))
}

fn galerkin_suite(out: &mut CheckOutcome) -> Result<(), SolverError> {
    let grid = build_grid(&GridConfig::flat_box(4, 3, 50.0, 40.0, 25.0, 200.0, 100.0)).map_err(|e| SolverError::Config(e.to_string()))?;
    let env = Environment::still(&grid, 2.0, Light::constant(30.0))?;
    let sys = GalerkinSystem::new(&grid, &env, grid.n_cells())?;
    let quiet = ModelParams { lambda: 1e-300, alpha: 1e-300, ..Default::default() };
    let model = Model::new(&grid, &env, quiet);
    let time = TimeGrid::new(1.0, 4)?;
    let mut errs = Vec::new();
    for mode in [1usize, 5, 7, sys.n_modes() - 1] {
        let mut u = vec![0.0; sys.n_modes()];
        u[mode] = 1.0;
        let shape = sys.reconstruct(&u);
        let y0 = TracerState { y1: shape.clone(), y2: shape };
        let sol = galerkin_solve(&sys, &model, &y0, time)?;
        let factor = 1.0 / (1.0 + time.dt() * sys.diffusion[mode]);
        for (k, c) in sol.coefficients.iter().enumerate() {
            errs.push((c.y1[mode] - factor.powi(k as i32)).abs() / 1e-12);
        }
    }
    out.rows.push(CheckRow::bound(Suite::Galerkin, "heat mode factor to 1e-12", &errs));

    let e: Vec<f64> = (0..3).map(|l| galerkin_fv_discrepancy(l, 1000.0)).collect::<Result<_, _>>()?;
    let orders: Vec<f64> = e.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    for (l, o) in orders.iter().enumerate() {
        out.constants.push((format!("galerkin_order_{}", l + 1), *o));
    }
    out.rows.push(CheckRow::bound(Suite::Galerkin, "refinement order >= 0.9", &orders.iter().map(|o| 0.9 / o).collect::<Vec<_>>()));
    Ok(())
}

fn identify_suite(ctx: &CheckContext, seed: u64, out: &mut CheckOutcome) -> Result<(), SolverError> {
    let model = Model::new(ctx.grid, ctx.env, ctx.params);
    let active = [Param::Lambda, Param::Alpha];
    let plan = SamplingPlan::default();
    let p0 = active.iter().fold(ctx.params, |p, &a| p.with(a, 1.2 * ctx.params.get(a)));
    for (noise, limit, label) in [(0.0, 0.01, "zero noise"), (0.01, 0.05, "1% noise")] {
        let obs = synthesize_observations(&model, ctx.y0, ctx.time, &plan, Noise::Relative(noise), seed)
            .map_err(|e| SolverError::Config(e.to_string()))?;
        let fit = gauss_newton(p0, &active, &obs, &model, ctx.y0, ctx.time, &GaussNewtonOptions::default())
            .map_err(|e| SolverError::Config(e.to_string()))?;
        let rel: Vec<f64> = active.iter().map(|&a| (fit.p_star.get(a) / ctx.params.get(a) - 1.0).abs() / limit).collect();
        let tag = if noise == 0.0 { "clean" } else { "noisy" };
        for &a in &active {
            out.constants.push((format!("recovered_{}_{tag}", a.name()), fit.p_star.get(a)));
        }
        out.rows.push(CheckRow::bound(Suite::Identify, format!("recovery within {}% ({label})", limit * 100.0), &rel));
    }
    Ok(())
}

fn balance_suite(ctx: &CheckContext, rng: &mut impl Rng, out: &mut CheckOutcome) {
    let mut grids = random_grids(rng, 9);
    grids.push(ctx.grid.clone());
    grids.push(build_grid(&GridConfig::column(150.0, 10.0, 100.0)).expect("column grid"));
    let params = ctx.params;
    let mut vals = Vec::new();
    for grid in &grids {
        let env = Environment::still(grid, 1.0, ctx.env.light).expect("valid environment");
        for _ in 0..20 {
            let y = random_state(rng, grid.n_cells(), -1.0, 4.0);
            for col in 0..grid.n_columns() {
                let r = column_mass_balance(&y, grid, &env, &params, 0.0, col);
                vals.push(r.abs() / (1e-13 * params.alpha * grid.h_max));
            }
        }
    }
    out.rows.push(CheckRow::bound(Suite::Balance, "column residual <= 1e-13 alpha h_max", &vals));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::EACH.into_iter().chain([Suite::All]) {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn cheap_suites_pass_on_desk() {
        let grid = build_grid(&GridConfig::desk()).unwrap();
        let env = Environment::still(&grid, 1.0, Light::constant(30.0)).unwrap();
        let y0 = TracerState::smooth(&grid, 2.0, 1.0, 0.2);
        let ctx = CheckContext {
            grid: &grid,
            env: &env,
            params: ModelParams::default(),
            time: TimeGrid::new(1.0, 10).unwrap(),
            y0: &y0,
            picard: PicardConfig::default(),
        };
        for s in [Suite::Saturation, Suite::Lipschitz, Suite::Skew, Suite::Balance, Suite::Mass] {
            let out = run_suite(s, &ctx, 42).unwrap();
            assert!(out.passed(), "{s}: {:?}", out.rows);
        }
        let a = run_suite(Suite::Skew, &ctx, 7).unwrap();
        let b = run_suite(Suite::Skew, &ctx, 7).unwrap();
        assert_eq!(a, b);
    }
}
