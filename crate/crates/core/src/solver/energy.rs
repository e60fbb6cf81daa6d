//! A-priori energy estimate
//! `‖y‖_{C(L²)} + ‖y‖_{L²(H¹)} ≤ C (‖f‖_{L²(H¹*)} + ‖y0‖_{L²})`
//! evaluated with discrete norms.

use crate::fields::{Environment, TracerState, Trajectory};
use crate::geometry::Grid;
use crate::transport::Norms;

use super::{SolverError, Source};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyConstants {
    /// Growth rate `2κ_min + L1²/(2ε)`.
    pub rate: f64,
    pub c1: f64,
    pub c2: f64,
    pub c: f64,
}

/// Constants by direct substitution. Meaningful only for `0 < ε < κ_min/2`;
/// at `ε = κ_min/2` the constant `C₂` is infinite.
pub fn energy_constants(kappa_min: f64, l1: f64, epsilon: f64, t_end: f64) -> EnergyConstants {
    let inv = 1.0 / (2.0 * epsilon);
    let rate = 2.0 * kappa_min + l1 * l1 * inv;
    let c1 = (t_end * rate).exp() * inv.max(1.0);
    let c2 = (c1 * t_end * rate + inv.max(1.0)) / (2.0 * (kappa_min - 2.0 * epsilon));
    EnergyConstants { rate, c1, c2, c: c1.sqrt() + c2.sqrt() }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyReport {
    pub lhs: f64,
    pub rhs: f64,
    pub constants: EnergyConstants,
    pub margin: f64,
    pub pass: bool,
}

/// `sqrt(Σ_{k≥1} dt ‖f_k‖²_{H¹*})` over both tracers, loads including facet terms.
pub fn forcing_dual_norm(forcing: &[Source], dt: f64, grid: &Grid, norms: &Norms) -> Result<f64, SolverError> {
    let mut total = 0.0;
    for src in forcing.iter().skip(1) {
        for (s, g) in [(&src.s1, &src.g1), (&src.s2, &src.g2)] {
            let mut load: Vec<f64> = s.iter().zip(&grid.cells).map(|(s, c)| s * c.volume).collect();
            for (f, g) in grid.facets.iter().zip(g) {
                load[f.cell] += f.area * g;
            }
            total += dt * norms.dual_h1(&load)?.powi(2);
        }
    }
    Ok(total.sqrt())
}

pub fn energy_estimate_check(
    y: &Trajectory,
    forcing_dual: f64,
    y0: &TracerState,
    l1: f64,
    epsilon: f64,
    env: &Environment,
    norms: &Norms,
) -> Result<EnergyReport, SolverError> {
    if !(epsilon > 0.0 && epsilon < 0.5 * env.kappa_min) {
        return Err(SolverError::Config(format!(
            "epsilon = {epsilon} violates 0 < epsilon < kappa_min/2 = {}",
            0.5 * env.kappa_min
        )));
    }
    let constants = energy_constants(env.kappa_min, l1, epsilon, y.horizon());
    let sup = y.states.iter().map(|s| norms.l2_state(s)).fold(0.0, f64::max);
    let h1 = y.states.iter().skip(1).map(|s| y.dt * norms.h1_state(s).powi(2)).sum::<f64>().sqrt();
    let lhs = sup + h1;
    let rhs = constants.c * (forcing_dual + norms.l2_state(y0));
    let margin = rhs - lhs;
    Ok(EnergyReport { lhs, rhs, constants, margin, pass: margin >= 0.0 })
}
