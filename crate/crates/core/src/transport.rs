//! Finite-volume diffusion and advection, norms and budget diagnostics.
//!
//! With `M` the diagonal volume matrix, the discrete bilinear form is
//! `B(u, w) = wᵀ K u + wᵀ C u` where `K` is the conservative two-point
//! diffusion matrix (harmonic-mean face diffusivity) and `C` the central
//! advection matrix `C_ab = F_ab / 2`, `C_ba = -F_ab / 2` built from the
//! face flux `F_ab` (positive from `a` to `b`). `C` is skew-symmetric, and
//! for a divergence-free flux both `K` and `C` have zero column sums, so
//! transport neither creates nor destroys tracer.

use crate::fields::{Environment, TracerState};
use crate::geometry::Grid;
use crate::linalg::{dot, BandLu, BandMatrix, LinalgError};

/// Assembled transport operators for one grid and environment.
#[derive(Debug, Clone)]
pub struct Transport {
    pub volume: Vec<f64>,
    /// Geometric face weight `area / distance`.
    pub face_weight: Vec<f64>,
    /// Diffusive face conductance `κ_face * area / distance`.
    pub conductance: Vec<f64>,
    /// Half the face flux.
    pub half_flux: Vec<f64>,
    ends: Vec<(usize, usize)>,
    bandwidth: usize,
}

impl Transport {
    pub fn new(grid: &Grid, env: &Environment) -> Self {
        let face_weight: Vec<f64> = grid.faces.iter().map(|f| f.area / f.distance).collect();
        let conductance = grid
            .faces
            .iter()
            .zip(&face_weight)
            .map(|(f, w)| {
                let (ka, kb) = (env.kappa[f.a], env.kappa[f.b]);
                w * 2.0 * ka * kb / (ka + kb)
            })
            .collect();
        Self {
            volume: grid.cells.iter().map(|c| c.volume).collect(),
            face_weight,
            conductance,
            half_flux: env.flux.iter().map(|q| 0.5 * q).collect(),
            ends: grid.faces.iter().map(|f| (f.a, f.b)).collect(),
            bandwidth: grid.bandwidth(),
        }
    }

    pub fn n(&self) -> usize {
        self.volume.len()
    }

    /// `K u`.
    pub fn apply_diffusion(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        for (&(a, b), t) in self.ends.iter().zip(&self.conductance) {
            let q = t * (u[a] - u[b]);
            out[a] += q;
            out[b] -= q;
        }
        out
    }

    /// `C u`.
    pub fn apply_advection(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        for (&(a, b), h) in self.ends.iter().zip(&self.half_flux) {
            out[a] += h * u[b];
            out[b] -= h * u[a];
        }
        out
    }

    /// `wᵀ K u`, summed face by face.
    pub fn diffusion_form(&self, u: &[f64], w: &[f64]) -> f64 {
        self.ends
            .iter()
            .zip(&self.conductance)
            .map(|(&(a, b), t)| t * (u[a] - u[b]) * (w[a] - w[b]))
            .sum()
    }

    /// `wᵀ C u`, summed face by face; exactly zero for `u = w`.
    pub fn advection_form(&self, u: &[f64], w: &[f64]) -> f64 {
        self.ends
            .iter()
            .zip(&self.half_flux)
            .map(|(&(a, b), h)| h * (w[a] * u[b] - w[b] * u[a]))
            .sum()
    }

    /// Face-difference seminorm `Σ (area/dist) Δu²` underlying the discrete H¹ norm.
    pub fn gradient_sq(&self, u: &[f64]) -> f64 {
        self.ends
            .iter()
            .zip(&self.face_weight)
            .map(|(&(a, b), w)| w * (u[a] - u[b]).powi(2))
            .sum()
    }

    pub fn l2_sq(&self, u: &[f64]) -> f64 {
        u.iter().zip(&self.volume).map(|(u, v)| v * u * u).sum()
    }

    pub fn h1_sq(&self, u: &[f64]) -> f64 {
        self.l2_sq(u) + self.gradient_sq(u)
    }

    /// `mass * M + K + C` (with `extra_diag` added on the diagonal, already volume-scaled).
    pub fn system(&self, mass: f64, extra_diag: Option<&[f64]>) -> BandMatrix {
        let mut m = BandMatrix::zeros(self.n(), self.bandwidth);
        for (i, v) in self.volume.iter().enumerate() {
            m.add(i, i, mass * v + extra_diag.map_or(0.0, |e| e[i]));
        }
        for ((&(a, b), t), h) in self.ends.iter().zip(&self.conductance).zip(&self.half_flux) {
            m.add(a, a, *t);
            m.add(b, b, *t);
            m.add(a, b, -t + h);
            m.add(b, a, -t - h);
        }
        m
    }

    /// `M + K₁` with unit diffusivity and no advection: the Gram matrix of the discrete H¹ inner product.
    pub fn h1_gram(&self) -> BandMatrix {
        let mut m = BandMatrix::zeros(self.n(), self.bandwidth);
        for (i, v) in self.volume.iter().enumerate() {
            m.add(i, i, *v);
        }
        for (&(a, b), w) in self.ends.iter().zip(&self.face_weight) {
            m.add(a, a, *w);
            m.add(b, b, *w);
            m.add(a, b, -w);
            m.add(b, a, -w);
        }
        m
    }

    /// Rigorous bound `C_B = κ_max + ρ` with `ρ` a row-sum bound on `M^{-1/2} |C| M^{-1/2}`.
    pub fn boundedness_constant(&self, env: &Environment) -> f64 {
        let mut row = vec![0.0; self.n()];
        for (&(a, b), h) in self.ends.iter().zip(&self.half_flux) {
            let s = h.abs() / (self.volume[a] * self.volume[b]).sqrt();
            row[a] += s;
            row[b] += s;
        }
        env.kappa_max + row.iter().copied().fold(0.0, f64::max)
    }
}

/// Discrete norms on a grid, with the factorised H¹ Gram matrix for dual norms.
#[derive(Debug, Clone)]
pub struct Norms {
    transport: Transport,
    gram: BandLu,
    area: Vec<f64>,
}

impl Norms {
    pub fn new(grid: &Grid, env: &Environment) -> Result<Self, LinalgError> {
        let transport = Transport::new(grid, env);
        let gram = transport.h1_gram().factor()?;
        Ok(Self { transport, gram, area: grid.facets.iter().map(|f| f.area).collect() })
    }

    pub fn l2(&self, u: &[f64]) -> f64 {
        self.transport.l2_sq(u).sqrt()
    }

    pub fn h1(&self, u: &[f64]) -> f64 {
        self.transport.h1_sq(u).sqrt()
    }

    pub fn l2_state(&self, y: &TracerState) -> f64 {
        (self.transport.l2_sq(&y.y1) + self.transport.l2_sq(&y.y2)).sqrt()
    }

    pub fn h1_state(&self, y: &TracerState) -> f64 {
        (self.transport.h1_sq(&y.y1) + self.transport.h1_sq(&y.y2)).sqrt()
    }

    /// Area-weighted norm of per-facet values.
    pub fn boundary_l2(&self, b: &[f64]) -> f64 {
        b.iter().zip(&self.area).map(|(b, a)| a * b * b).sum::<f64>().sqrt()
    }

    /// Dual norm of the functional `w ↦ Σ vol r w + Σ area g w`:
    /// `sqrt(ℓᵀ G⁻¹ ℓ)` with `G` the H¹ Gram matrix.
    pub fn dual_h1(&self, load: &[f64]) -> Result<f64, LinalgError> {
        let z = self.gram.solve(load, 1e-13)?;
        Ok(dot(load, &z).max(0.0).sqrt())
    }

    /// Dual norm of a per-unit-volume interior forcing.
    pub fn dual_h1_field(&self, r: &[f64]) -> Result<f64, LinalgError> {
        let load: Vec<f64> = r.iter().zip(&self.transport.volume).map(|(r, v)| r * v).collect();
        self.dual_h1(&load)
    }

    pub fn transport(&self) -> &Transport {
        &self.transport
    }
}

/// `B(u, w)` summed over both tracers.
pub fn apply_b(u: &TracerState, w: &TracerState, tr: &Transport) -> f64 {
    (0..2)
        .map(|c| tr.diffusion_form(u.component(c), w.component(c)) + tr.advection_form(u.component(c), w.component(c)))
        .sum()
}

/// `⟨M⁻¹ C w, w⟩_M`, evaluated from the assembled action.
pub fn advection_skew_check(w: &[f64], tr: &Transport) -> f64 {
    dot(&tr.apply_advection(w), w)
}

/// `Σ_facets area * (b1 w1 + b2 w2)` at the cells above the facets.
pub fn boundary_term(b1: &[f64], b2: &[f64], w: &TracerState, grid: &Grid) -> f64 {
    grid.facets
        .iter()
        .enumerate()
        .map(|(k, f)| f.area * (b1[k] * w.y1[f.cell] + b2[k] * w.y2[f.cell]))
        .sum()
}

/// `Σ (y1 + y2) vol`.
pub fn total_mass(y: &TracerState, grid: &Grid) -> f64 {
    grid.cells.iter().enumerate().map(|(c, cell)| (y.y1[c] + y.y2[c]) * cell.volume).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GardingReport {
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub holds: bool,
}

/// `κ_min ‖u‖²_{H¹} ≤ B(u, u) + κ_min ‖u‖²_{L²}`.
pub fn garding_check(u: &TracerState, env: &Environment, tr: &Transport) -> GardingReport {
    let k = env.kappa_min;
    let l2: f64 = tr.l2_sq(&u.y1) + tr.l2_sq(&u.y2);
    let grad: f64 = tr.gradient_sq(&u.y1) + tr.gradient_sq(&u.y2);
    let lhs = k * (l2 + grad);
    let rhs = apply_b(u, u, tr) + k * l2;
    let margin = rhs - lhs;
    GardingReport { lhs, rhs, margin, holds: margin >= -1e-12 * lhs.max(rhs) }
}
