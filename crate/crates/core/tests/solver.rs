use po4dop::fields::{Environment, Light, LightShape, ModelParams, StreamFunction, TracerState, Trajectory};
use po4dop::geometry::{build_grid, Grid, GridConfig};
use po4dop::solver::{forward_solve, picard_solve, solve_frozen, Model, PicardConfig, Source, TimeGrid};
use po4dop::transport::total_mass;

fn basin() -> (Grid, Environment) {
    let grid = build_grid(&GridConfig::basin(5, 4, 100.0, 100.0, 10.0, 100.0, 50.0, 150.0)).unwrap();
    let env = Environment::with_stream(&grid, &StreamFunction::analytic(&grid, 80.0), 1.0, Light::constant(30.0)).unwrap();
    (grid, env)
}

fn quiet() -> ModelParams {
    ModelParams { lambda: 1e-300, alpha: 1e-300, ..Default::default() }
}

#[test]
fn frozen_zero_iterate_decays_with_constant_mass() {
    let (grid, env) = basin();
    let model = Model::new(&grid, &env, ModelParams::default());
    let time = TimeGrid::new(2.0, 40).unwrap();
    let y0 = TracerState::smooth(&grid, 2.0, 1.0, 0.2);
    let z = Trajectory::constant(&TracerState::zeros(grid.n_cells()), time.dt(), time.steps);
    let y = solve_frozen(&z, &model, &model.stepper(time.dt()).unwrap(), &y0, None).unwrap();
    let m0 = total_mass(&y0, &grid);
    for s in &y.states {
        assert!((total_mass(s, &grid) - m0).abs() <= 1e-12 * m0);
    }
    // skew advection plus diffusion: the variance about the mean can only shrink
    let variance = |s: &TracerState| {
        let vol = grid.total_volume();
        let mean = grid.cells.iter().zip(&s.y1).map(|(c, v)| c.volume * v).sum::<f64>() / vol;
        grid.cells.iter().zip(&s.y1).map(|(c, v)| c.volume * (v - mean).powi(2)).sum::<f64>()
    };
    let v: Vec<f64> = y.states.iter().map(variance).collect();
    assert!(v.windows(2).all(|w| w[1] <= w[0]));
    assert!(v[time.steps] < v[0]);
}

#[test]
fn constant_forcing_grows_mass_linearly() {
    let (grid, env) = basin();
    let model = Model::new(&grid, &env, quiet());
    let time = TimeGrid::new(1.0, 10).unwrap();
    let n = grid.n_cells();
    let y0 = TracerState::constant(n, 1.0, 0.5);
    let c = 0.3;
    let forcing: Vec<Source> = (0..=time.steps)
        .map(|_| Source { s1: vec![c; n], s2: vec![0.0; n], g1: vec![0.0; grid.facets.len()], g2: vec![0.0; grid.facets.len()] })
        .collect();
    let z = Trajectory::constant(&y0, time.dt(), time.steps);
    let y = solve_frozen(&z, &model, &model.stepper(time.dt()).unwrap(), &y0, Some(&forcing)).unwrap();
    let m0 = total_mass(&y0, &grid);
    let vol = grid.total_volume();
    for (k, s) in y.states.iter().enumerate() {
        let expected = m0 + k as f64 * time.dt() * c * vol;
        assert!((total_mass(s, &grid) - expected).abs() <= 1e-12 * expected, "step {k}");
    }
}

#[test]
fn picard_result_is_a_fixed_point() {
    let (grid, env) = basin();
    let model = Model::new(&grid, &env, ModelParams::default());
    let time = TimeGrid::new(1.0, 30).unwrap();
    let y0 = TracerState::smooth(&grid, 2.0, 1.0, 0.2);
    let cfg = PicardConfig::default();
    let (y, rep) = picard_solve(&y0, &model, time, &cfg).unwrap();
    assert!(rep.converged);
    let again = solve_frozen(&y, &model, &model.stepper(time.dt()).unwrap(), &y0, None).unwrap();
    let size = y.max_abs();
    assert!(again.sub(&y).max_abs() <= 10.0 * cfg.tol * size);
    let fwd = forward_solve(&model, &y0, time).unwrap();
    assert!(fwd.sub(&y).max_abs() <= 1e-8 * size);
}

#[test]
fn diurnal_light_still_conserves_mass() {
    let (grid, _) = basin();
    let light = Light { i0: 60.0, shape: LightShape::Diurnal { period: 1.0 } };
    let env = Environment::with_stream(&grid, &StreamFunction::analytic(&grid, 80.0), 2.0, light).unwrap();
    let model = Model { gamma: 0.1, ..Model::new(&grid, &env, ModelParams::default()) };
    let y0 = TracerState::smooth(&grid, 1.0, 0.5, 0.3);
    let y = forward_solve(&model, &y0, TimeGrid::new(2.0, 48).unwrap()).unwrap();
    assert!(y.states.iter().all(TracerState::is_finite));
    // the monotone term is a sink, so mass may only fall
    let masses: Vec<f64> = y.states.iter().map(|s| total_mass(s, &grid)).collect();
    assert!(masses.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
}
