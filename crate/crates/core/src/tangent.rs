//! Derivatives of the coupling `(d, b)` with respect to the state and to the
//! seven parameters.
//!
//! For fixed parameters `d` and `b` are linear in `(y2, G)`, so the state
//! derivative is obtained by running the same assembly with `y2 ↦ h2` and
//! `G ↦ ∂G h1 = α ℓ K_P h1 / (|y1| + K_P)²`.
//!
//! Parameter derivatives, with `s = f_{K_P}(y1)`, `I' = I e^{-z K_W}` and
//! `ℓ = I' / (I' + K_I)`:
//!
//! ```text
//! ∂G/∂α   = s ℓ
//! ∂G/∂K_P = -α ℓ y1 / (|y1| + K_P)²
//! ∂G/∂K_I = -α s I' / (I' + K_I)²
//! ∂G/∂K_W = -α s z I' K_I / (I' + K_I)²
//! ∂E/∂p   = (1 - ν) Σ ∂G/∂p dz          (p ∈ {α, K_P, K_I, K_W})
//! ∂E/∂ν   = -Σ G dz
//! ∂m_k/∂β = -ln(a) a^{-β} + ln(b) b^{-β},   a = z_top/h̄, b = z_bot/h̄
//! ∂r/∂β   = -ln(h/h̄) r,                   r = (h/h̄)^{-β}
//! ```
//!
//! `λ` enters only through `∓λ y2`, and `ν` additionally through `-ν G` in `d2`.

use crate::fields::{Environment, ModelParams, Param, TracerState, Trajectory};
use crate::geometry::{Grid, Zone};
use crate::reaction::{
    column_export, facet_factors_dbeta, light_factors, sat, sat_prime, sinking_masses_dbeta, uptake_from_light,
    ReactionCache, ReactionOutput,
};

/// Direction in parameter space, ordered as [`Param::ALL`].
pub type ParamDirection = [f64; 7];

pub fn unit_direction(p: Param) -> ParamDirection {
    let mut d = [0.0; 7];
    d[Param::ALL.iter().position(|q| *q == p).expect("listed")] = 1.0;
    d
}

/// `∂G(y1) h1` per cell; zero in the aphotic zone.
pub fn d_uptake(y1: &[f64], h1: &[f64], grid: &Grid, env: &Environment, params: &ModelParams, t: f64) -> Vec<f64> {
    let light = light_factors(grid, env, params, t);
    d_uptake_from_light(y1, h1, &light, params)
}

fn d_uptake_from_light(y1: &[f64], h1: &[f64], light: &[f64], params: &ModelParams) -> Vec<f64> {
    y1.iter()
        .zip(h1)
        .zip(light)
        .map(|((y, h), l)| if *l == 0.0 { 0.0 } else { params.alpha * sat_prime(*y, params.k_p) * h * l })
        .collect()
}

/// `∂E(y1) h1` for one column.
pub fn d_export(y1: &[f64], h1: &[f64], grid: &Grid, env: &Environment, params: &ModelParams, t: f64, column: usize) -> f64 {
    let dg = d_uptake(y1, h1, grid, env, params, t);
    let col = &grid.columns[column];
    (1.0 - params.nu) * col.euphotic_cells().map(|c| dg[c]).sum::<f64>() * grid.dz
}

/// Linearisation of `(d, b)` at a fixed state and time.
#[derive(Debug, Clone)]
pub struct StateJacobian<'a> {
    grid: &'a Grid,
    cache: ReactionCache,
    /// `α ℓ f'_{K_P}(y1)` per cell.
    slope: Vec<f64>,
}

pub fn state_jacobian<'a>(y: &TracerState, grid: &'a Grid, env: &Environment, params: &ModelParams, t: f64) -> StateJacobian<'a> {
    StateJacobian::with_cache(y, grid, env, ReactionCache::new(grid, params), t)
}

impl<'a> StateJacobian<'a> {
    pub fn with_cache(y: &TracerState, grid: &'a Grid, env: &Environment, cache: ReactionCache, t: f64) -> Self {
        let light = light_factors(grid, env, &cache.params, t);
        let p = &cache.params;
        let slope = y.y1.iter().zip(&light).map(|(y, l)| p.alpha * sat_prime(*y, p.k_p) * l).collect();
        Self { grid, cache, slope }
    }

    /// `(∂_y d(y) h, ∂_y b(y) h)`.
    pub fn apply(&self, h: &TracerState) -> ReactionOutput {
        let dg: Vec<f64> = self.slope.iter().zip(&h.y1).map(|(s, h)| s * h).collect();
        self.cache.assemble(&h.y2, &dg, self.grid)
    }
}

/// Directional derivative `Σ_p dir_p ∂_p (d, b)` at a state.
pub fn param_derivative(
    y: &TracerState,
    dir: &ParamDirection,
    grid: &Grid,
    env: &Environment,
    params: &ModelParams,
    t: f64,
) -> ReactionOutput {
    let [d_lambda, d_alpha, d_kp, d_ki, d_kw, d_beta, d_nu] = *dir;
    let p = params;
    let light = light_factors(grid, env, p, t);
    let g = uptake_from_light(&y.y1, &light, p);

    let mut dg = vec![0.0; grid.n_cells()];
    for (c, cell) in grid.cells.iter().enumerate() {
        if cell.zone != Zone::Euphotic {
            continue;
        }
        let y1 = y.y1[c];
        let s = sat(y1, p.k_p);
        let l = light[c];
        let ip = env.insolation_at(cell.column, t) * (-cell.center_depth * p.k_w).exp();
        let denom = (ip + p.k_i) * (ip + p.k_i);
        let mut v = 0.0;
        if d_alpha != 0.0 {
            v += d_alpha * s * l;
        }
        if d_kp != 0.0 {
            let q = y1.abs() + p.k_p;
            v += d_kp * -p.alpha * l * y1 / (q * q);
        }
        if d_ki != 0.0 {
            v += d_ki * -p.alpha * s * ip / denom;
        }
        if d_kw != 0.0 {
            v += d_kw * -p.alpha * s * cell.center_depth * ip * p.k_i / denom;
        }
        dg[c] = v;
    }
    debug_assert!(light.iter().zip(&grid.cells).all(|(l, c)| c.zone == Zone::Euphotic || *l == 0.0));

    let e = column_export(&g, grid, 1.0 - p.nu);
    let de_g = column_export(&dg, grid, 1.0 - p.nu);
    let g_int = column_export(&g, grid, 1.0);
    let de: Vec<f64> = de_g.iter().zip(&g_int).map(|(a, b)| a - d_nu * b).collect();

    let cache = ReactionCache::new(grid, p);
    let dm = if d_beta != 0.0 { sinking_masses_dbeta(grid, p.beta) } else { vec![0.0; grid.n_cells()] };
    let dr = if d_beta != 0.0 { facet_factors_dbeta(grid, p.beta) } else { vec![0.0; grid.facets.len()] };

    let mut out = ReactionOutput::zeros(grid);
    for (c, cell) in grid.cells.iter().enumerate() {
        let remin = d_lambda * y.y2[c];
        match cell.zone {
            Zone::Euphotic => {
                out.d1[c] = -remin + dg[c];
                out.d2[c] = remin - p.nu * dg[c] - d_nu * g[c];
            }
            Zone::Aphotic => {
                let col = cell.column;
                out.d1[c] = -remin - (de[col] * cache.sinking[c] + e[col] * d_beta * dm[c]) / grid.dz;
                out.d2[c] = remin;
            }
        }
    }
    for (k, f) in grid.facets.iter().enumerate() {
        out.b1[k] = -(de[f.column] * cache.facet_factor[k] + e[f.column] * d_beta * dr[k]);
    }
    out
}

/// Right-hand sides `f = -∂_p d`, `g = -∂_p b` of the linearised equation at every time level.
#[derive(Debug, Clone)]
pub struct ParamSensitivitySource {
    pub direction: ParamDirection,
    /// Indexed by time level; entry `k` is evaluated at `(y_k, t_k)`.
    pub levels: Vec<ReactionOutput>,
}

pub fn param_source(y: &Trajectory, param: Param, grid: &Grid, env: &Environment, params: &ModelParams) -> ParamSensitivitySource {
    param_source_dir(y, &unit_direction(param), grid, env, params)
}

pub fn param_source_dir(
    y: &Trajectory,
    dir: &ParamDirection,
    grid: &Grid,
    env: &Environment,
    params: &ModelParams,
) -> ParamSensitivitySource {
    let levels = y
        .states
        .iter()
        .enumerate()
        .map(|(k, s)| negate(param_derivative(s, dir, grid, env, params, y.time(k))))
        .collect();
    ParamSensitivitySource { direction: *dir, levels }
}

fn negate(mut r: ReactionOutput) -> ReactionOutput {
    for v in r.d1.iter_mut().chain(r.d2.iter_mut()).chain(r.b1.iter_mut()).chain(r.b2.iter_mut()) {
        *v = -*v;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::Light;
    use crate::geometry::{build_grid, GridConfig};
    use crate::reaction::{evaluate, uptake_g};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (Grid, Environment, ModelParams) {
        let g = build_grid(&GridConfig::basin(3, 2, 100.0, 100.0, 10.0, 100.0, 50.0, 200.0)).unwrap();
        let env = Environment::still(&g, 1.0, Light::constant(30.0)).unwrap();
        (g, env, ModelParams::default())
    }

    /// States with |y1| bounded away from the kink at 0.
    fn random_state(n: usize, rng: &mut ChaCha8Rng) -> TracerState {
        TracerState {
            y1: (0..n)
                .map(|_| {
                    let v: f64 = rng.random_range(0.05..3.0);
                    if rng.random_bool(0.3) { -v } else { v }
                })
                .collect(),
            y2: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    fn flat(r: &ReactionOutput) -> Vec<f64> {
        r.d1.iter().chain(&r.d2).chain(&r.b1).chain(&r.b2).copied().collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num = a.iter().zip(b).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den = b.iter().map(|b| b * b).sum::<f64>().sqrt();
        num / den
    }

    #[test]
    fn d_uptake_examples() {
        let (g, env, p) = setup();
        let n = g.n_cells();
        let h = vec![1.0; n];
        let dg = d_uptake(&vec![0.0; n], &h, &g, &env, &p, 0.0);
        let light = light_factors(&g, &env, &p, 0.0);
        for c in 0..n {
            assert_relative_eq!(dg[c], p.alpha / p.k_p * light[c], max_relative = 1e-15);
        }
        assert!(d_uptake(&vec![1.0; n], &vec![0.0; n], &g, &env, &p, 0.0).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn d_uptake_and_export_match_fd() {
        let (g, env, p) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = random_state(g.n_cells(), &mut rng);
        let h: Vec<f64> = (0..g.n_cells()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let eps = 1e-4;
        let plus: Vec<f64> = y.y1.iter().zip(&h).map(|(y, h)| y + eps * h).collect();
        let minus: Vec<f64> = y.y1.iter().zip(&h).map(|(y, h)| y - eps * h).collect();
        let gp = uptake_g(&plus, &g, &env, &p, 0.0);
        let gm = uptake_g(&minus, &g, &env, &p, 0.0);
        let fd: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
        let dg = d_uptake(&y.y1, &h, &g, &env, &p, 0.0);
        assert!(rel_err(&dg, &fd) <= 1e-6);
        for col in 0..g.n_columns() {
            let ep = crate::reaction::export_e_column(&plus, &g, &env, &p, 0.0, col);
            let em = crate::reaction::export_e_column(&minus, &g, &env, &p, 0.0, col);
            let de = d_export(&y.y1, &h, &g, &env, &p, 0.0, col);
            assert!(((ep - em) / (2.0 * eps) - de).abs() <= 1e-6 * de.abs());
        }
    }

    #[test]
    fn export_derivative_at_zero() {
        let (g, _, p) = setup();
        let env = Environment::still(&g, 1.0, Light::constant(30.0)).unwrap();
        // with K_W tiny the light factor is 1/2 everywhere
        let p = ModelParams { k_w: 1e-300, ..p };
        let n = g.n_cells();
        for col in 0..g.n_columns() {
            let de = d_export(&vec![0.0; n], &vec![0.3; n], &g, &env, &p, 0.0, col);
            let he = g.euphotic_depth(col).unwrap();
            assert_relative_eq!(de, (1.0 - p.nu) * p.alpha * 0.3 * 0.5 * he / p.k_p, max_relative = 1e-14);
        }
    }

    #[test]
    fn state_jacobian_matches_fd_with_second_order() {
        let (g, env, p) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let y = random_state(g.n_cells(), &mut rng);
        let h = TracerState {
            y1: (0..g.n_cells()).map(|_| rng.random_range(-0.02..0.02)).collect(),
            y2: (0..g.n_cells()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let jac = state_jacobian(&y, &g, &env, &p, 0.0);
        let exact = flat(&jac.apply(&h));
        let err = |eps: f64| {
            let rp = evaluate(&y.axpy(eps, &h), &g, &env, &p, 0.0);
            let rm = evaluate(&y.axpy(-eps, &h), &g, &env, &p, 0.0);
            let fd: Vec<f64> = flat(&rp).iter().zip(flat(&rm)).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
            rel_err(&fd, &exact)
        };
        let (e1, e2) = (err(1e-1), err(5e-2));
        assert!(err(1e-4) <= 1e-5);
        assert!((e1 / e2).log2() >= 1.9, "orders {e1} {e2}");
    }

    #[test]
    fn state_jacobian_linear_and_bounded() {
        let (g, env, p) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = g.n_cells();
        let y = random_state(n, &mut rng);
        let jac = state_jacobian(&y, &g, &env, &p, 0.0);
        let h1 = random_state(n, &mut rng);
        let h2 = random_state(n, &mut rng);
        let combo = flat(&jac.apply(&h1.scale(2.5).axpy(1.0, &h2)));
        let sep: Vec<f64> = flat(&jac.apply(&h1)).iter().zip(flat(&jac.apply(&h2))).map(|(a, b)| 2.5 * a + b).collect();
        assert!(rel_err(&combo, &sep) <= 1e-12);
        assert!(flat(&jac.apply(&TracerState::zeros(n))).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_part_without_uptake() {
        let (g, env, p) = setup();
        let p = ModelParams { alpha: 0.0, ..p };
        let n = g.n_cells();
        let y = TracerState::constant(n, 1.0, 1.0);
        let h = TracerState { y1: vec![0.7; n], y2: vec![0.3; n] };
        let out = state_jacobian(&y, &g, &env, &p, 0.0).apply(&h);
        for c in 0..n {
            assert_eq!(out.d1[c], -p.lambda * 0.3);
            assert_eq!(out.d2[c], p.lambda * 0.3);
        }
    }

    #[test]
    fn lambda_source_by_hand() {
        let (g, env, p) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let y = random_state(g.n_cells(), &mut rng);
        let traj = Trajectory { states: vec![y.clone()], dt: 0.1 };
        let src = param_source(&traj, Param::Lambda, &g, &env, &p);
        let l = &src.levels[0];
        for c in 0..g.n_cells() {
            assert_eq!(l.d1[c], y.y2[c]);
            assert_eq!(l.d2[c], -y.y2[c]);
        }
        assert!(l.b1.iter().all(|v| *v == 0.0));
        let zero = Trajectory { states: vec![TracerState::zeros(g.n_cells())], dt: 0.1 };
        let a = param_source(&zero, Param::Alpha, &g, &env, &p);
        assert!(flat(&a.levels[0]).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn every_param_derivative_matches_fd() {
        let (g, env, p) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let y = random_state(g.n_cells(), &mut rng);
        for param in Param::ALL {
            let exact = flat(&param_derivative(&y, &unit_direction(param), &g, &env, &p, 0.0));
            let d = 1e-4 * p.get(param);
            let rp = evaluate(&y, &g, &env, &p.with(param, p.get(param) + d), 0.0);
            let rm = evaluate(&y, &g, &env, &p.with(param, p.get(param) - d), 0.0);
            let fd: Vec<f64> = flat(&rp).iter().zip(flat(&rm)).map(|(a, b)| (a - b) / (2.0 * d)).collect();
            let e = rel_err(&exact, &fd);
            assert!(e <= 1e-6, "{param}: {e}");
        }
    }
}
