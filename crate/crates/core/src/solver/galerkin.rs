//! Cosine-basis Galerkin solver on a flat box.
//!
//! The ansatz `y_j = Σ u_{j,m} φ_m` uses the Neumann eigenfunctions
//! `φ_m = cos(aπx/L_x) cos(bπy/L_y) cos(cπz/L_z)`. Inner products are taken
//! with the midpoint rule at cell centres, which is exact for the cosine
//! products involved as long as every index is below the cell count along
//! its axis; the mass matrix is therefore diagonal and exact. The coupling
//! `Φ(t, u)` is evaluated by reconstructing cell values, applying `d` and `b`
//! and projecting back; facet terms are integrated with the basis evaluated
//! on the surface and the bottom plane.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::fields::{Environment, TracerState};
use crate::geometry::Grid;
use crate::reaction::ReactionOutput;
use crate::transport::Transport;

use super::{iterate_to_rounding, Model, SolverError, TimeGrid};

#[derive(Debug, Clone)]
pub struct GalerkinSystem {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Modes per axis.
    pub mx: usize,
    pub my: usize,
    pub mz: usize,
    pub lengths: [f64; 3],
    /// Diagonal diffusion part `κ π² (a²/L_x² + b²/L_y² + c²/L_z²)`.
    pub diffusion: Vec<f64>,
    /// Projected advection operator, present when the environment has flow.
    pub advection: Option<DMatrix<f64>>,
    norm_sq: Vec<f64>,
    cx: Vec<Vec<f64>>,
    cy: Vec<Vec<f64>>,
    cz: Vec<Vec<f64>>,
    cell_volume: f64,
    facet_area: f64,
}

fn cos_table(modes: usize, cells: usize) -> Vec<Vec<f64>> {
    (0..modes)
        .map(|a| (0..cells).map(|i| (a as f64 * PI * (i as f64 + 0.5) / cells as f64).cos()).collect())
        .collect()
}

impl GalerkinSystem {
    /// Basis with up to `modes` cosines per axis (capped at the cell count of that axis).
    pub fn new(grid: &Grid, env: &Environment, modes: usize) -> Result<Self, SolverError> {
        if modes == 0 {
            return Err(SolverError::Config("need at least one mode".into()));
        }
        if !grid.is_flat() {
            return Err(SolverError::NotFlat("bathymetry is not uniform".into()));
        }
        if !env.is_constant_kappa() {
            return Err(SolverError::Config("Galerkin basis needs a constant diffusivity".into()));
        }
        let (nx, ny, nz) = (grid.nx, grid.ny, grid.max_layers);
        let (mx, my, mz) = (modes.min(nx), modes.min(ny), modes.min(nz));
        let lengths = [nx as f64 * grid.dx, ny as f64 * grid.dy, nz as f64 * grid.dz];
        let kappa = env.kappa_min;
        let volume = lengths.iter().product::<f64>();
        let mut diffusion = Vec::with_capacity(mx * my * mz);
        let mut norm_sq = Vec::with_capacity(mx * my * mz);
        let w = |i: usize| if i == 0 { 1.0 } else { 0.5 };
        for a in 0..mx {
            for b in 0..my {
                for c in 0..mz {
                    let mu = PI * PI
                        * ((a * a) as f64 / lengths[0].powi(2)
                            + (b * b) as f64 / lengths[1].powi(2)
                            + (c * c) as f64 / lengths[2].powi(2));
                    diffusion.push(kappa * mu);
                    norm_sq.push(volume * w(a) * w(b) * w(c));
                }
            }
        }
        let mut sys = Self {
            nx,
            ny,
            nz,
            mx,
            my,
            mz,
            lengths,
            diffusion,
            advection: None,
            norm_sq,
            cx: cos_table(mx, nx),
            cy: cos_table(my, ny),
            cz: cos_table(mz, nz),
            cell_volume: grid.dx * grid.dy * grid.dz,
            facet_area: grid.dx * grid.dy,
        };
        if env.has_flow() {
            sys.advection = Some(sys.project_operator(&Transport::new(grid, env)));
        }
        Ok(sys)
    }

    pub fn n_modes(&self) -> usize {
        self.mx * self.my * self.mz
    }

    fn cell(&self, i: usize, j: usize, k: usize) -> usize {
        (j * self.nx + i) * self.nz + k
    }

    fn mode(&self, a: usize, b: usize, c: usize) -> usize {
        (a * self.my + b) * self.mz + c
    }

    /// Galerkin matrix `(C φ_l, φ_m) / ‖φ_m‖²` of the finite-volume advection operator.
    fn project_operator(&self, tr: &Transport) -> DMatrix<f64> {
        let m = self.n_modes();
        let mut out = DMatrix::zeros(m, m);
        for l in 0..m {
            let mut e = vec![0.0; m];
            e[l] = 1.0;
            let phi = self.reconstruct(&e);
            let action: Vec<f64> = tr.apply_advection(&phi).iter().map(|v| v / self.cell_volume).collect();
            let col = self.project(&action);
            out.set_column(l, &DVector::from_vec(col));
        }
        out
    }

    /// Cell values of a coefficient vector.
    pub fn reconstruct(&self, u: &[f64]) -> Vec<f64> {
        let (nx, ny, nz) = (self.nx, self.ny, self.nz);
        let mut t1 = vec![0.0; self.mx * self.my * nz];
        for a in 0..self.mx {
            for b in 0..self.my {
                for c in 0..self.mz {
                    let v = u[self.mode(a, b, c)];
                    if v == 0.0 {
                        continue;
                    }
                    for k in 0..nz {
                        t1[(a * self.my + b) * nz + k] += v * self.cz[c][k];
                    }
                }
            }
        }
        let mut t2 = vec![0.0; self.mx * ny * nz];
        for a in 0..self.mx {
            for b in 0..self.my {
                for j in 0..ny {
                    let w = self.cy[b][j];
                    for k in 0..nz {
                        t2[(a * ny + j) * nz + k] += w * t1[(a * self.my + b) * nz + k];
                    }
                }
            }
        }
        let mut out = vec![0.0; nx * ny * nz];
        for a in 0..self.mx {
            for i in 0..nx {
                let w = self.cx[a][i];
                for j in 0..ny {
                    for k in 0..nz {
                        out[self.cell(i, j, k)] += w * t2[(a * ny + j) * nz + k];
                    }
                }
            }
        }
        out
    }

    /// Coefficients `(v, φ_m) / ‖φ_m‖²` of a per-volume cell field.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let (nx, ny, nz) = (self.nx, self.ny, self.nz);
        let mut t1 = vec![0.0; self.mx * ny * nz];
        for a in 0..self.mx {
            for i in 0..nx {
                let w = self.cx[a][i];
                for j in 0..ny {
                    for k in 0..nz {
                        t1[(a * ny + j) * nz + k] += w * v[self.cell(i, j, k)];
                    }
                }
            }
        }
        let mut t2 = vec![0.0; self.mx * self.my * nz];
        for a in 0..self.mx {
            for b in 0..self.my {
                for j in 0..ny {
                    let w = self.cy[b][j];
                    for k in 0..nz {
                        t2[(a * self.my + b) * nz + k] += w * t1[(a * ny + j) * nz + k];
                    }
                }
            }
        }
        let mut out = vec![0.0; self.n_modes()];
        for a in 0..self.mx {
            for b in 0..self.my {
                for c in 0..self.mz {
                    let s: f64 = (0..nz).map(|k| self.cz[c][k] * t2[(a * self.my + b) * nz + k]).sum();
                    let m = self.mode(a, b, c);
                    out[m] = s * self.cell_volume / self.norm_sq[m];
                }
            }
        }
        out
    }

    /// Adds `(b, φ_m)_Γ / ‖φ_m‖²` for per-facet values in grid order (surface, bottom per column).
    fn add_facet_projection(&self, b: &[f64], out: &mut [f64]) {
        for a in 0..self.mx {
            for bb in 0..self.my {
                let mut top = 0.0;
                let mut bottom = 0.0;
                for j in 0..self.ny {
                    for i in 0..self.nx {
                        let col = j * self.nx + i;
                        let w = self.cx[a][i] * self.cy[bb][j];
                        top += w * b[2 * col];
                        bottom += w * b[2 * col + 1];
                    }
                }
                for c in 0..self.mz {
                    let m = self.mode(a, bb, c);
                    let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
                    out[m] += (top + sign * bottom) * self.facet_area / self.norm_sq[m];
                }
            }
        }
    }

    /// `Φ(t, u)` for both tracers.
    fn coupling(&self, r: &ReactionOutput) -> (Vec<f64>, Vec<f64>) {
        let mut p1 = self.project(&r.d1);
        let mut p2 = self.project(&r.d2);
        self.add_facet_projection(&r.b1, &mut p1);
        self.add_facet_projection(&r.b2, &mut p2);
        (p1, p2)
    }
}

/// Coefficient trajectory of a Galerkin run.
#[derive(Debug, Clone)]
pub struct GalerkinSolution {
    /// Per time level, coefficient vectors of `(y1, y2)` stored as a [`TracerState`].
    pub coefficients: Vec<TracerState>,
    pub dt: f64,
}

impl GalerkinSolution {
    pub fn state(&self, system: &GalerkinSystem, k: usize) -> TracerState {
        let u = &self.coefficients[k];
        TracerState { y1: system.reconstruct(&u.y1), y2: system.reconstruct(&u.y2) }
    }
}

/// Implicit Euler in the coefficients: `(I + dt A) u_{n+1} = u_n - dt Φ(t_{n+1}, u_{n+1})`.
pub fn galerkin_solve(
    system: &GalerkinSystem,
    model: &Model,
    y0: &TracerState,
    time: TimeGrid,
) -> Result<GalerkinSolution, SolverError> {
    y0.check_len(model.grid)?;
    let dt = time.dt();
    let lu = system.advection.as_ref().map(|adv| {
        let mut m = adv * dt;
        for (i, d) in system.diffusion.iter().enumerate() {
            m[(i, i)] += 1.0 + dt * d;
        }
        m.lu()
    });
    let solve = |rhs: Vec<f64>| -> Result<Vec<f64>, SolverError> {
        match &lu {
            Some(lu) => lu
                .solve(&DVector::from_vec(rhs))
                .map(|v| v.as_slice().to_vec())
                .ok_or_else(|| SolverError::Config("singular Galerkin system".into())),
            None => Ok(rhs.iter().zip(&system.diffusion).map(|(r, d)| r / (1.0 + dt * d)).collect()),
        }
    };
    let cache = model.reaction_cache();
    let mut coefficients = vec![TracerState { y1: system.project(&y0.y1), y2: system.project(&y0.y2) }];
    for n in 0..time.steps {
        let t = (n + 1) as f64 * dt;
        let un = coefficients[n].clone();
        let next = iterate_to_rounding(un.clone(), n + 1, |u| {
            let y = TracerState { y1: system.reconstruct(&u.y1), y2: system.reconstruct(&u.y2) };
            let (p1, p2) = system.coupling(&cache.evaluate(&y, model.grid, model.env, t));
            let r1 = un.y1.iter().zip(&p1).map(|(u, p)| u - dt * p).collect();
            let r2 = un.y2.iter().zip(&p2).map(|(u, p)| u - dt * p).collect();
            Ok(TracerState { y1: solve(r1)?, y2: solve(r2)? })
        })?;
        coefficients.push(next);
    }
    Ok(GalerkinSolution { coefficients, dt })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{Light, ModelParams, StreamFunction};
    use crate::geometry::{build_grid, GridConfig};
    use approx::assert_relative_eq;

    fn box_grid() -> Grid {
        build_grid(&GridConfig::flat_box(4, 3, 50.0, 40.0, 25.0, 200.0, 100.0)).unwrap()
    }

    #[test]
    fn transform_round_trip() {
        let g = box_grid();
        let env = Environment::still(&g, 2.0, Light::constant(30.0)).unwrap();
        let sys = GalerkinSystem::new(&g, &env, 64).unwrap();
        assert_eq!(sys.n_modes(), g.n_cells());
        let v: Vec<f64> = (0..g.n_cells()).map(|c| (c as f64 * 1.3).sin()).collect();
        let back = sys.reconstruct(&sys.project(&v));
        for (a, b) in v.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn diagonal_diffusion_entries() {
        let g = box_grid();
        let env = Environment::still(&g, 2.0, Light::constant(30.0)).unwrap();
        let sys = GalerkinSystem::new(&g, &env, 3).unwrap();
        let m = sys.mode(1, 2, 1);
        let expected = 2.0 * PI * PI * (1.0 / 200f64.powi(2) + 4.0 / 120f64.powi(2) + 1.0 / 200f64.powi(2));
        assert_relative_eq!(sys.diffusion[m], expected, max_relative = 1e-14);
        assert!(sys.advection.is_none());
    }

    #[test]
    fn heat_mode_decays_by_closed_form() {
        let g = box_grid();
        let env = Environment::still(&g, 2.0, Light::constant(30.0)).unwrap();
        let sys = GalerkinSystem::new(&g, &env, 4).unwrap();
        let params = ModelParams { alpha: 0.0, lambda: 0.0, ..Default::default() };
        let model = Model::new(&g, &env, params);
        let mut u = vec![0.0; sys.n_modes()];
        let m = sys.mode(1, 1, 2);
        u[m] = 1.0;
        let y0 = TracerState { y1: sys.reconstruct(&u), y2: vec![0.0; g.n_cells()] };
        let time = TimeGrid::new(5.0, 10).unwrap();
        let sol = galerkin_solve(&sys, &model, &y0, time).unwrap();
        let factor = 1.0 / (1.0 + time.dt() * sys.diffusion[m]);
        for (k, c) in sol.coefficients.iter().enumerate() {
            assert!((c.y1[m] - factor.powi(k as i32)).abs() <= 1e-12);
        }
    }

    #[test]
    fn constant_state_stays_constant() {
        let g = box_grid();
        let env = Environment::still(&g, 2.0, Light::constant(30.0)).unwrap();
        let sys = GalerkinSystem::new(&g, &env, 2).unwrap();
        let model = Model::new(&g, &env, ModelParams { alpha: 0.0, lambda: 0.0, ..Default::default() });
        let y0 = TracerState::constant(g.n_cells(), 1.5, 0.5);
        let sol = galerkin_solve(&sys, &model, &y0, TimeGrid::new(1.0, 5).unwrap()).unwrap();
        let last = sol.state(&sys, 5);
        assert!(last.y1.iter().all(|v| (v - 1.5).abs() < 1e-13));
    }

    #[test]
    fn projected_advection_is_skew() {
        let g = box_grid();
        let env = Environment::with_stream(&g, &StreamFunction::analytic(&g, 30.0), 2.0, Light::constant(30.0)).unwrap();
        let sys = GalerkinSystem::new(&g, &env, 3).unwrap();
        let adv = sys.advection.as_ref().unwrap();
        let w = DVector::from_vec(sys.norm_sq.clone());
        // (M_G A)ᵀ = -(M_G A)
        let ma = DMatrix::from_diagonal(&w) * adv;
        assert!((&ma + ma.transpose()).amax() <= 1e-9 * ma.amax());
    }

    #[test]
    fn rejects_staircase() {
        let g = build_grid(&GridConfig::desk()).unwrap();
        let env = Environment::still(&g, 1.0, Light::constant(30.0)).unwrap();
        assert!(matches!(GalerkinSystem::new(&g, &env, 2), Err(SolverError::NotFlat(_))));
    }
}
