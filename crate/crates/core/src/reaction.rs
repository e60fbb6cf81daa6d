//! Biogeochemical coupling: uptake, export, sinking, the interior term `d`
//! and the bottom coupling `b`.
//!
//! Sign conventions follow the weak form `y' + B(y, w) + (d, w) + (b, w)_Γ = 0`:
//! a positive `d` removes tracer from a cell, a negative `b` feeds tracer
//! into the cell above the facet.

use thiserror::Error;

use crate::fields::{light_factor_at, Environment, ModelParams, TracerState};
use crate::geometry::{FacetKind, Grid, Zone};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReactionError {
    #[error("half-saturation constant must be positive (got {0})")]
    NonPositiveK(f64),
    #[error("layer top {z_top} lies above the euphotic depth {he_bar}")]
    AboveEuphotic { z_top: f64, he_bar: f64 },
    #[error("layer bounds out of order: {z_top} > {z_bot}")]
    LayerOrder { z_top: f64, z_bot: f64 },
    #[error("monotone coefficient must be >= 0 (got {0})")]
    NegativeGamma(f64),
}

/// `f_K(x) = x / (|x| + K)`.
pub fn saturation(x: f64, k: f64) -> Result<f64, ReactionError> {
    if !(k > 0.0) {
        return Err(ReactionError::NonPositiveK(k));
    }
    Ok(sat(x, k))
}

/// `f_K'(x) = K / (|x| + K)^2`.
pub fn saturation_derivative(x: f64, k: f64) -> Result<f64, ReactionError> {
    if !(k > 0.0) {
        return Err(ReactionError::NonPositiveK(k));
    }
    Ok(sat_prime(x, k))
}

#[inline]
pub(crate) fn sat(x: f64, k: f64) -> f64 {
    x / (x.abs() + k)
}

#[inline]
pub(crate) fn sat_prime(x: f64, k: f64) -> f64 {
    let s = x.abs() + k;
    k / (s * s)
}

/// Light limitation per cell; zero in the aphotic zone.
pub fn light_factors(grid: &Grid, env: &Environment, params: &ModelParams, t: f64) -> Vec<f64> {
    grid.cells
        .iter()
        .map(|c| match c.zone {
            Zone::Euphotic => light_factor_at(env.insolation_at(c.column, t), c.center_depth, params),
            Zone::Aphotic => 0.0,
        })
        .collect()
}

/// Uptake `G = α f_{K_P}(y1) ℓ` per cell. Aphotic entries are zero.
pub fn uptake_g(y1: &[f64], grid: &Grid, env: &Environment, params: &ModelParams, t: f64) -> Vec<f64> {
    let light = light_factors(grid, env, params, t);
    uptake_from_light(y1, &light, params)
}

pub(crate) fn uptake_from_light(y1: &[f64], light: &[f64], params: &ModelParams) -> Vec<f64> {
    y1.iter()
        .zip(light)
        .map(|(y, l)| if *l == 0.0 { 0.0 } else { params.alpha * sat(*y, params.k_p) * l })
        .collect()
}

/// Column integral `(1 - ν) Σ_euphotic q dz` of a per-cell field.
pub(crate) fn column_export(q: &[f64], grid: &Grid, one_minus_nu: f64) -> Vec<f64> {
    grid.columns
        .iter()
        .map(|col| one_minus_nu * col.euphotic_cells().map(|c| q[c]).sum::<f64>() * grid.dz)
        .collect()
}

/// Export `E` for every wet column.
pub fn export_e(y1: &[f64], grid: &Grid, env: &Environment, params: &ModelParams, t: f64) -> Vec<f64> {
    column_export(&uptake_g(y1, grid, env, params, t), grid, 1.0 - params.nu)
}

/// Export `E` of a single column.
pub fn export_e_column(y1: &[f64], grid: &Grid, env: &Environment, params: &ModelParams, t: f64, column: usize) -> f64 {
    let col = &grid.columns[column];
    let surface = env.insolation_at(column, t);
    let sum: f64 = col
        .euphotic_cells()
        .map(|c| params.alpha * sat(y1[c], params.k_p) * light_factor_at(surface, grid.cells[c].center_depth, params))
        .sum();
    (1.0 - params.nu) * sum * grid.dz
}

/// Exact integral of the sinking density `(β/h̄)(z/h̄)^{-β-1}` over `[z_top, z_bot]`.
pub fn sinking_layer_mass(params: &ModelParams, z_top: f64, z_bot: f64, he_bar: f64) -> Result<f64, ReactionError> {
    if z_top < he_bar {
        return Err(ReactionError::AboveEuphotic { z_top, he_bar });
    }
    if z_top > z_bot {
        return Err(ReactionError::LayerOrder { z_top, z_bot });
    }
    Ok(layer_mass(params.beta, z_top, z_bot, he_bar))
}

#[inline]
fn layer_mass(beta: f64, z_top: f64, z_bot: f64, he_bar: f64) -> f64 {
    (z_top / he_bar).powf(-beta) - (z_bot / he_bar).powf(-beta)
}

/// Sinking mass fraction per cell (zero in the euphotic zone).
pub fn sinking_masses(grid: &Grid, beta: f64) -> Vec<f64> {
    grid.cells
        .iter()
        .map(|c| match c.zone {
            Zone::Euphotic => 0.0,
            Zone::Aphotic => {
                let top = c.k as f64 * grid.dz;
                layer_mass(beta, top, top + grid.dz, grid.he_bar)
            }
        })
        .collect()
}

/// `∂/∂β` of [`sinking_masses`].
pub(crate) fn sinking_masses_dbeta(grid: &Grid, beta: f64) -> Vec<f64> {
    grid.cells
        .iter()
        .map(|c| match c.zone {
            Zone::Euphotic => 0.0,
            Zone::Aphotic => {
                let a = c.k as f64 * grid.dz / grid.he_bar;
                let b = a + grid.dz / grid.he_bar;
                -a.ln() * a.powf(-beta) + b.ln() * b.powf(-beta)
            }
        })
        .collect()
}

/// Fraction of the export reaching each bottom facet: `(h/h̄)^{-β}` on Γ₂, 1 on Γ₁, 0 on the surface.
pub fn facet_factors(grid: &Grid, beta: f64) -> Vec<f64> {
    grid.facets
        .iter()
        .map(|f| match f.kind {
            FacetKind::Surface => 0.0,
            FacetKind::EuphoticBottom => 1.0,
            FacetKind::AphoticBottom => (f.depth / grid.he_bar).powf(-beta),
        })
        .collect()
}

pub(crate) fn facet_factors_dbeta(grid: &Grid, beta: f64) -> Vec<f64> {
    grid.facets
        .iter()
        .map(|f| match f.kind {
            FacetKind::AphoticBottom => {
                let r = f.depth / grid.he_bar;
                -r.ln() * r.powf(-beta)
            }
            _ => 0.0,
        })
        .collect()
}

/// Interior values `d` and facet values `b` of the coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct ReactionOutput {
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    /// Per facet, in `grid.facets` order.
    pub b1: Vec<f64>,
    pub b2: Vec<f64>,
}

impl ReactionOutput {
    pub fn zeros(grid: &Grid) -> Self {
        let (n, m) = (grid.n_cells(), grid.facets.len());
        Self { d1: vec![0.0; n], d2: vec![0.0; n], b1: vec![0.0; m], b2: vec![0.0; m] }
    }
}

/// Grid- and parameter-dependent factors reused across many evaluations.
#[derive(Debug, Clone)]
pub struct ReactionCache {
    pub params: ModelParams,
    pub sinking: Vec<f64>,
    pub facet_factor: Vec<f64>,
}

impl ReactionCache {
    pub fn new(grid: &Grid, params: &ModelParams) -> Self {
        Self { params: *params, sinking: sinking_masses(grid, params.beta), facet_factor: facet_factors(grid, params.beta) }
    }

    /// Assembles `d` and `b` from uptake values.
    pub(crate) fn assemble(&self, y2: &[f64], g: &[f64], grid: &Grid) -> ReactionOutput {
        let p = &self.params;
        let e = column_export(g, grid, 1.0 - p.nu);
        let mut out = ReactionOutput::zeros(grid);
        for (c, cell) in grid.cells.iter().enumerate() {
            let remin = p.lambda * y2[c];
            match cell.zone {
                Zone::Euphotic => {
                    out.d1[c] = -remin + g[c];
                    out.d2[c] = remin - p.nu * g[c];
                }
                Zone::Aphotic => {
                    out.d1[c] = -remin - e[cell.column] * self.sinking[c] / grid.dz;
                    out.d2[c] = remin;
                }
            }
        }
        for (k, f) in grid.facets.iter().enumerate() {
            out.b1[k] = -e[f.column] * self.facet_factor[k];
        }
        out
    }

    pub fn evaluate(&self, y: &TracerState, grid: &Grid, env: &Environment, t: f64) -> ReactionOutput {
        let light = light_factors(grid, env, &self.params, t);
        let g = uptake_from_light(&y.y1, &light, &self.params);
        self.assemble(&y.y2, &g, grid)
    }
}

/// Evaluates `d` and `b` together.
pub fn evaluate(y: &TracerState, grid: &Grid, env: &Environment, params: &ModelParams, t: f64) -> ReactionOutput {
    ReactionCache::new(grid, params).evaluate(y, grid, env, t)
}

pub fn reaction_d(y: &TracerState, grid: &Grid, env: &Environment, params: &ModelParams, t: f64) -> (Vec<f64>, Vec<f64>) {
    let out = evaluate(y, grid, env, params, t);
    (out.d1, out.d2)
}

pub fn boundary_b(y: &TracerState, grid: &Grid, env: &Environment, params: &ModelParams, t: f64) -> (Vec<f64>, Vec<f64>) {
    let out = evaluate(y, grid, env, params, t);
    (out.b1, out.b2)
}

/// Tracer budget of one column per unit surface area:
/// `(Σ_cells (d1 + d2) vol + Σ_facets b1 area) / (dx dy)`.
pub fn column_mass_balance(y: &TracerState, grid: &Grid, env: &Environment, params: &ModelParams, t: f64, column: usize) -> f64 {
    let out = evaluate(y, grid, env, params, t);
    column_balance_of(&out, grid, column)
}

pub(crate) fn column_balance_of(out: &ReactionOutput, grid: &Grid, column: usize) -> f64 {
    let col = &grid.columns[column];
    let interior: f64 = col.cells().map(|c| (out.d1[c] + out.d2[c]) * grid.cells[c].volume).sum();
    let boundary: f64 = [grid.surface_facet(column), grid.bottom_facet(column)]
        .iter()
        .map(|&f| out.b1[f] * grid.facets[f].area)
        .sum();
    (interior + boundary) / grid.column_area()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzConstants {
    pub l_d: f64,
    pub l_b: f64,
    /// Discrete trace constant.
    pub c_tau: f64,
    pub l1: f64,
}

pub fn lipschitz_constants(params: &ModelParams, grid: &Grid) -> LipschitzConstants {
    let ModelParams { lambda, alpha, k_p, beta, nu, .. } = *params;
    let ratio = alpha * alpha / (k_p * k_p);
    let deep = (grid.h_max / grid.he_bar - 1.0).max(0.0);
    let first = (lambda * lambda).max(ratio * (1.0 + deep * beta * beta * (1.0 - nu) * (1.0 - nu)));
    let second = (lambda * lambda).max(ratio * nu * nu);
    let l_d = (2.0 * (first + second)).sqrt();
    let l_b = alpha * (1.0 - nu) * grid.he_bar.sqrt() / k_p;
    let c_tau = grid.trace_constant();
    LipschitzConstants { l_d, l_b, c_tau, l1: l_d + c_tau * l_b }
}

/// `m(y) = γ y / (1 + |y|)`, applied componentwise.
pub fn monotone_term(y: &[f64], gamma: f64) -> Result<Vec<f64>, ReactionError> {
    if !(gamma >= 0.0) {
        return Err(ReactionError::NegativeGamma(gamma));
    }
    Ok(y.iter().map(|v| monotone(*v, gamma)).collect())
}

#[inline]
pub(crate) fn monotone(y: f64, gamma: f64) -> f64 {
    gamma * y / (1.0 + y.abs())
}

#[inline]
pub(crate) fn monotone_prime(y: f64, gamma: f64) -> f64 {
    let s = 1.0 + y.abs();
    gamma / (s * s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::Light;
    use crate::geometry::{build_grid, GridConfig};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn setup(cfg: GridConfig) -> (Grid, Environment) {
        let g = build_grid(&cfg).unwrap();
        let env = Environment::still(&g, 1.0, Light::constant(30.0)).unwrap();
        (g, env)
    }

    #[test]
    fn saturation_values() {
        let k = 0.7;
        assert_eq!(saturation(k, k).unwrap(), 0.5);
        assert_eq!(saturation(0.0, k).unwrap(), 0.0);
        assert_eq!(saturation(-k, k).unwrap(), -0.5);
        assert!(saturation(1.0, 0.0).is_err());
        assert_relative_eq!(saturation_derivative(0.0, k).unwrap(), 1.0 / k);
        assert_relative_eq!(saturation_derivative(k, k).unwrap(), 1.0 / (4.0 * k));
        assert!(saturation_derivative(1.0, -1.0).is_err());
    }

    #[test]
    fn saturation_derivative_second_order() {
        let k = 0.5;
        for x in [0.3, 1.7, -2.2, 10.0] {
            let d = saturation_derivative(x, k).unwrap();
            let e = |h: f64| (sat(x + h, k) - sat(x, k) - d * h).abs();
            let ratio = e(1e-3) / e(5e-4);
            assert!((ratio - 4.0).abs() < 0.1, "x={x} ratio={ratio}");
        }
    }

    #[test]
    fn uptake_examples() {
        let (g, env) = setup(GridConfig::column(100.0, 10.0, 100.0));
        let p = ModelParams::default();
        let n = g.n_cells();
        assert!(uptake_g(&vec![0.0; n], &g, &env, &p, 0.0).iter().all(|v| *v == 0.0));
        // light factor 1/2 at the surface when I = K_I and K_W -> 0
        let p0 = ModelParams { k_w: 1e-300, ..p };
        let gp = uptake_g(&vec![p.k_p; n], &g, &env, &p0, 0.0);
        assert_relative_eq!(gp[0], p.alpha / 4.0, max_relative = 1e-14);
        let gm = uptake_g(&vec![-p.k_p; n], &g, &env, &p0, 0.0);
        assert_relative_eq!(gm[0], -p.alpha / 4.0, max_relative = 1e-14);
    }

    #[test]
    fn export_hand_sum() {
        // G per layer (1..=10) * 1e-3 over 10 layers of 10 m, nu = 0.5
        let g = build_grid(&GridConfig::column(100.0, 10.0, 100.0)).unwrap();
        let q: Vec<f64> = (1..=10).map(|k| k as f64 * 1e-3).collect();
        assert_relative_eq!(column_export(&q, &g, 0.5)[0], 0.275, max_relative = 1e-14);
    }

    #[test]
    fn export_of_constant_uptake() {
        let g = build_grid(&GridConfig::column(150.0, 10.0, 100.0)).unwrap();
        let q = vec![0.3; g.n_cells()];
        assert_relative_eq!(column_export(&q, &g, 0.5)[0], 0.5 * 0.3 * 100.0, max_relative = 1e-14);
    }

    #[test]
    fn sinking_masses_telescope() {
        let p = ModelParams::default();
        assert_relative_eq!(sinking_layer_mass(&p, 100.0, 200.0, 100.0).unwrap(), 0.5);
        assert_eq!(sinking_layer_mass(&p, 150.0, 150.0, 100.0).unwrap(), 0.0);
        assert!(sinking_layer_mass(&p, 50.0, 150.0, 100.0).is_err());
        let g = build_grid(&GridConfig::column(200.0, 20.0, 100.0)).unwrap();
        let total: f64 = sinking_masses(&g, 1.0).iter().sum();
        assert_relative_eq!(total, 0.5, max_relative = 1e-15);
    }

    #[test]
    fn boundary_examples() {
        let (g, env) = setup(GridConfig::column(200.0, 10.0, 100.0));
        let p = ModelParams::default();
        let y = TracerState::constant(g.n_cells(), 1.3, 0.2);
        let out = evaluate(&y, &g, &env, &p, 0.0);
        let e = export_e(&y.y1, &g, &env, &p, 0.0)[0];
        assert_relative_eq!(out.b1[g.bottom_facet(0)], -0.5 * e, max_relative = 1e-14);
        assert_eq!(out.b1[g.surface_facet(0)], 0.0);
        assert!(out.b2.iter().all(|v| *v == 0.0));
        assert_relative_eq!(export_e_column(&y.y1, &g, &env, &p, 0.0, 0), e, max_relative = 1e-14);
    }

    #[test]
    fn homogeneity_and_remineralisation() {
        let (g, env) = setup(GridConfig::desk());
        let p = ModelParams::default();
        let n = g.n_cells();
        let zero = evaluate(&TracerState::zeros(n), &g, &env, &p, 0.0);
        assert!(zero.d1.iter().chain(&zero.d2).chain(&zero.b1).all(|v| *v == 0.0));
        let y = TracerState { y1: vec![0.0; n], y2: vec![0.8; n] };
        let out = evaluate(&y, &g, &env, &p, 0.0);
        for c in 0..n {
            assert_eq!(out.d1[c], -0.4);
            assert_eq!(out.d2[c], 0.4);
        }
    }

    #[test]
    fn lipschitz_defaults() {
        let g = build_grid(&GridConfig::desk()).unwrap();
        let l = lipschitz_constants(&ModelParams::default(), &g);
        assert_relative_eq!(l.l_d, 44f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(l.l_b, 20.0, max_relative = 1e-15);
        assert_relative_eq!(l.c_tau, 0.1f64.sqrt(), max_relative = 1e-15);
        let l_nu = lipschitz_constants(&ModelParams { nu: 1.0 - 1e-12, ..Default::default() }, &g);
        assert!(l_nu.l_b < 1e-9);
    }

    #[test]
    fn monotone_values() {
        assert_eq!(monotone_term(&[0.0, 1.0], 2.0).unwrap(), vec![0.0, 1.0]);
        assert!(monotone_term(&[1.0], -1.0).is_err());
    }

    proptest! {
        #[test]
        fn saturation_bounded_and_lipschitz(a in -1e6f64..1e6, b in -1e6f64..1e6, k in 1e-3f64..1e3) {
            prop_assert!(sat(a, k).abs() <= 1.0);
            prop_assert!((sat(a, k) - sat(b, k)).abs() <= (a - b).abs() / k * (1.0 + 1e-12));
        }

        #[test]
        fn monotone_term_is_monotone(a in -1e3f64..1e3, b in -1e3f64..1e3, gamma in 0f64..10.0) {
            prop_assert!((monotone(a, gamma) - monotone(b, gamma)) * (a - b) >= 0.0);
            prop_assert!(monotone(a, gamma).abs() <= gamma * a.abs());
        }

        #[test]
        fn column_balance_vanishes(seed in 0u64..1000, scale in 0.01f64..100.0) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (g, env) = setup(GridConfig::desk());
            let p = ModelParams::default();
            let n = g.n_cells();
            let y = TracerState {
                y1: (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect(),
                y2: (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect(),
            };
            let out = evaluate(&y, &g, &env, &p, 0.0);
            for col in 0..g.n_columns() {
                prop_assert!(column_balance_of(&out, &g, col).abs() <= 1e-13 * p.alpha * g.h_max);
            }
        }
    }
}
