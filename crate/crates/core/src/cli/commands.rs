use std::fs::File;
use std::io::{BufReader, Write};

use crate::checks::{central_difference, run_suite, CheckContext, Suite};
use crate::fields::Param;
use crate::identify::{gauss_newton, synthesize_observations, GaussNewtonOptions, IdentifyError, Noise, Observation};
use crate::reaction::lipschitz_constants;
use crate::solver::{
    diagnostics, energy_estimate_check, forward_solve, galerkin_solve, picard_solve, tangent_solve, GalerkinSystem,
    Model, PicardConfig, SolverError,
};
use crate::tangent::unit_direction;
use crate::transport::Norms;

use super::config::RunConfig;
use super::output::{create, write_diagnostics, write_energy, write_picard, write_snapshots};
use super::{Command, Failure};

impl From<IdentifyError> for Failure {
    fn from(e: IdentifyError) -> Self {
        match e {
            IdentifyError::Solver(s) => s.into(),
            IdentifyError::Io(e) => e.into(),
            other => Failure::Config(other.to_string()),
        }
    }
}

fn model(cfg: &RunConfig) -> Model<'_> {
    Model { gamma: cfg.gamma, ..Model::new(&cfg.grid, &cfg.env, cfg.params) }
}

pub(super) fn dispatch(command: &Command, cfg: &RunConfig) -> Result<(), Failure> {
    match command {
        Command::Forward => forward(cfg),
        Command::Picard { timing } => picard(cfg, *timing),
        Command::Tangent { param, fd_check } => tangent(cfg, param, *fd_check),
        Command::Identify { obs, synthesize, seed, noise } => identify(cfg, obs, *synthesize, *seed, *noise),
        Command::Galerkin { modes, compare } => galerkin(cfg, *modes, *compare),
        Command::Check { suite, seed } => check(cfg, suite, *seed),
    }
}

fn forward(cfg: &RunConfig) -> Result<(), Failure> {
    let model = model(cfg);
    let traj = forward_solve(&model, &cfg.y0, cfg.time)?;
    let norms = Norms::new(&cfg.grid, &cfg.env).map_err(SolverError::from)?;
    let dir = &cfg.output_dir;
    let n = write_snapshots(dir, "snapshot", &cfg.grid, &traj, cfg.every)?;
    let (path, mut w) = create(dir, "diagnostics.csv")?;
    write_diagnostics(&diagnostics(&traj, &model, &norms), &mut w)?;
    w.flush()?;
    println!("forward: {} steps, {n} snapshots, diagnostics in {}", cfg.time.steps, path.display());
    Ok(())
}

fn picard(cfg: &RunConfig, timing: bool) -> Result<(), Failure> {
    let model = model(cfg);
    let pc = PicardConfig { timing, ..cfg.picard };
    let dir = &cfg.output_dir;
    let (traj, rep) = match picard_solve(&cfg.y0, &model, cfg.time, &pc) {
        Ok(r) => r,
        Err(SolverError::Picard(rep)) => {
            let (_, mut w) = create(dir, "picard.csv")?;
            write_picard(&rep, &mut w)?;
            w.flush()?;
            return Err(Failure::Solver(format!("fixed-point iteration did not converge in {} iterations", rep.iterations)));
        }
        Err(e) => return Err(e.into()),
    };
    let (path, mut w) = create(dir, "picard.csv")?;
    write_picard(&rep, &mut w)?;
    w.flush()?;
    write_snapshots(dir, "picard", &cfg.grid, &traj, cfg.every)?;
    let norms = Norms::new(&cfg.grid, &cfg.env).map_err(SolverError::from)?;
    let l1 = lipschitz_constants(&cfg.params, &cfg.grid).l1;
    let energy = energy_estimate_check(&traj, 0.0, &cfg.y0, l1, rep.epsilon, &cfg.env, &norms)?;
    let (_, mut w) = create(dir, "energy.csv")?;
    write_energy(&energy, &mut w)?;
    w.flush()?;
    println!(
        "picard: {} iterations, L1 = {:.6}, L_A = {:.6}, asymptotic ratio = {}, report in {}",
        rep.iterations,
        rep.l1,
        rep.l_a,
        rep.asymptotic_ratio().map_or("n/a".into(), |r| format!("{r:.6}")),
        path.display()
    );
    Ok(())
}

fn tangent(cfg: &RunConfig, name: &str, fd_check: bool) -> Result<(), Failure> {
    let param: Param = name.parse().map_err(|e: crate::fields::FieldsError| Failure::Config(e.to_string()))?;
    let model = model(cfg);
    let y = forward_solve(&model, &cfg.y0, cfg.time)?;
    let h = tangent_solve(&y, &unit_direction(param), &model)?;
    let dir = &cfg.output_dir;
    write_snapshots(dir, &format!("tangent_{}", param.name()), &cfg.grid, &h, cfg.every)?;
    println!("tangent: d y / d {} written, max |h| = {:e}", param.name(), h.max_abs());
    if fd_check {
        let cmp = central_difference(&model, &y, &h, param, 1e-4)?;
        let (path, mut w) = create(dir, &format!("fd_check_{}.csv", param.name()))?;
        writeln!(w, "t_index,tangent_max,fd_max,abs_err,rel_err")?;
        let size = h.max_abs();
        for (k, (hm, fm, e)) in cmp.levels.iter().enumerate() {
            let rel = if size > 0.0 { e / size } else { *e };
            writeln!(w, "{k},{hm:e},{fm:e},{e:e},{rel:e}")?;
        }
        w.flush()?;
        println!("fd-check: delta = {:e}, max relative error = {:e} ({})", cmp.delta, cmp.rel_error, path.display());
        if !(cmp.rel_error <= 1e-3) {
            return Err(Failure::Invariant(format!("tangent relative error {:e} exceeds 1e-3", cmp.rel_error)));
        }
    }
    Ok(())
}

fn identify(cfg: &RunConfig, obs_path: &std::path::Path, synthesize: bool, seed: Option<u64>, noise: f64) -> Result<(), Failure> {
    let model = model(cfg);
    let active = &cfg.identify.active;
    let (obs, p0) = if synthesize {
        if !(noise.is_finite() && noise >= 0.0) {
            return Err(Failure::Config(format!("--noise {noise} must be >= 0")));
        }
        let seed = match (seed, noise > 0.0) {
            (Some(s), _) => s,
            (None, false) => 0,
            (None, true) => return Err(Failure::Config("--seed is required when --noise > 0".into())),
        };
        let obs = synthesize_observations(&model, &cfg.y0, cfg.time, &cfg.identify.plan, Noise::Relative(noise), seed)?;
        if let Some(parent) = obs_path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut w = std::io::BufWriter::new(File::create(obs_path)?);
        obs.write_csv(&cfg.grid, &mut w)?;
        w.flush()?;
        let p0 = active.iter().fold(cfg.params, |p, &a| p.with(a, p.get(a) * (1.0 + cfg.identify.perturb)));
        (obs, p0)
    } else {
        if seed.is_some() || noise != 0.0 {
            return Err(Failure::Config("--seed and --noise only apply with --synthesize".into()));
        }
        let file = File::open(obs_path).map_err(|e| Failure::Config(format!("{}: {e}", obs_path.display())))?;
        (Observation::read_csv(&cfg.grid, BufReader::new(file))?, cfg.params)
    };
    let fit = gauss_newton(p0, active, &obs, &model, &cfg.y0, cfg.time, &GaussNewtonOptions::default())?;
    let (path, mut w) = create(&cfg.output_dir, "fit.csv")?;
    fit.write_csv(&mut w)?;
    w.flush()?;
    let summary: Vec<String> = active.iter().map(|&a| format!("{} = {:.8}", a.name(), fit.p_star.get(a))).collect();
    println!("identify: {} observations, {}, history in {}", obs.samples.len(), summary.join(", "), path.display());
    if !fit.converged {
        return Err(Failure::Solver(format!("Gauss-Newton did not converge in {} iterations", fit.history.len() - 1)));
    }
    Ok(())
}

fn galerkin(cfg: &RunConfig, modes: usize, compare: bool) -> Result<(), Failure> {
    let model = model(cfg);
    let sys = GalerkinSystem::new(&cfg.grid, &cfg.env, modes)?;
    let sol = galerkin_solve(&sys, &model, &cfg.y0, cfg.time)?;
    let dir = &cfg.output_dir;
    let (path, mut w) = create(dir, "galerkin.csv")?;
    writeln!(w, "t_index,mode_x,mode_y,mode_z,u1,u2")?;
    let last = cfg.time.steps;
    for k in (0..=last).filter(|k| k % cfg.every == 0 || *k == last) {
        let u = &sol.coefficients[k];
        for a in 0..sys.mx {
            for b in 0..sys.my {
                for c in 0..sys.mz {
                    let m = (a * sys.my + b) * sys.mz + c;
                    writeln!(w, "{k},{a},{b},{c},{:e},{:e}", u.y1[m], u.y2[m])?;
                }
            }
        }
    }
    w.flush()?;
    println!("galerkin: {} modes, coefficients in {}", sys.n_modes(), path.display());
    if compare {
        let (fv, _) = picard_solve(&cfg.y0, &model, cfg.time, &cfg.picard)?;
        let norms = Norms::new(&cfg.grid, &cfg.env).map_err(SolverError::from)?;
        let (path, mut w) = create(dir, "galerkin_compare.csv")?;
        writeln!(w, "t_index,l2_galerkin,l2_fv,l2_diff")?;
        let mut worst: f64 = 0.0;
        for (k, y) in fv.states.iter().enumerate() {
            let g = sol.state(&sys, k);
            let diff = norms.l2_state(&g.sub(y));
            worst = worst.max(diff);
            writeln!(w, "{k},{:e},{:e},{diff:e}", norms.l2_state(&g), norms.l2_state(y))?;
        }
        w.flush()?;
        println!("galerkin: max L2 difference to finite volumes = {worst:e} ({})", path.display());
    }
    Ok(())
}

fn check(cfg: &RunConfig, suite: &str, seed: u64) -> Result<(), Failure> {
    let suite: Suite = suite.parse().map_err(Failure::Config)?;
    let ctx = CheckContext {
        grid: &cfg.grid,
        env: &cfg.env,
        params: cfg.params,
        time: cfg.time,
        y0: &cfg.y0,
        picard: cfg.picard,
    };
    let out = run_suite(suite, &ctx, seed)?;
    let dir = &cfg.output_dir;
    let (path, mut w) = create(dir, "check.csv")?;
    out.write_rows(&mut w)?;
    w.flush()?;
    let (_, mut w) = create(dir, "constants.csv")?;
    out.write_constants(&mut w)?;
    w.flush()?;
    for r in &out.rows {
        println!("{} {}: {} ({} samples, worst {:e})", if r.pass { "PASS" } else { "FAIL" }, r.suite, r.property, r.samples, r.worst);
    }
    println!("results in {}", path.display());
    let failed = out.rows.iter().filter(|r| !r.pass).count();
    if failed > 0 {
        return Err(Failure::Invariant(format!("{failed} invariant rows failed")));
    }
    Ok(())
}
