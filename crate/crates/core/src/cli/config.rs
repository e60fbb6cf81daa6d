//! Flat `key=value` run configuration.
//!
//! Recognised keys and defaults:
//!
//! | key | default |
//! |-----|---------|
//! | `grid.nx`, `grid.ny` | 8, 8 |
//! | `grid.dx`, `grid.dy`, `grid.dz` | 100, 100, 10 |
//! | `grid.he_bar` | 100 |
//! | `grid.depth_min`, `grid.depth_max` | 50, 150 |
//! | `grid.bathymetry` | unset (file replaces all other `grid.*` keys) |
//! | `fields.kappa` | 1 |
//! | `fields.psi_amp` | 50 |
//! | `fields.stream` | unset (slice file replaces `fields.psi_amp`) |
//! | `light.I0`, `light.shape`, `light.period` | 30, `constant`, 1 |
//! | `params.lambda` … `params.nu` | 0.5, 2, 0.5, 30, 0.02, 1, 0.5 |
//! | `time.T`, `time.steps` | 1, 100 |
//! | `init.y1`, `init.y1_amp`, `init.y2` | 2, 1, 0.2 |
//! | `solver.epsilon`, `solver.weight_C` | auto |
//! | `solver.tol`, `solver.max_iter`, `solver.gamma` | 1e-10, 200, 0 |
//! | `output.dir`, `output.every` | `out`, 10 |
//! | `identify.params`, `identify.perturb` | `lambda,alpha`, 0.2 |
//! | `identify.time_stride`, `identify.cell_stride` | 10, 1 |
//!
//! Relative file paths resolve against the directory of the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::fields::{Environment, Light, LightShape, ModelParams, Param, StreamFunction, TracerState};
use crate::geometry::{build_grid, Grid, GridConfig};
use crate::identify::SamplingPlan;
use crate::reaction::lipschitz_constants;
use crate::solver::{PicardConfig, TimeGrid};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("line {line}: expected `key=value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}` (first set on line {first})")]
    Duplicate { line: usize, key: String, first: usize },
    #[error("`{key}`: cannot parse `{value}` as {expected}")]
    BadValue { key: String, value: String, expected: &'static str },
    #[error("`{key}`: {constraint}")]
    Invalid { key: String, constraint: String },
    #[error("`{key}` cannot be combined with `{other}`")]
    Conflict { key: String, other: String },
}

const KEYS: &[&str] = &[
    "grid.nx",
    "grid.ny",
    "grid.dx",
    "grid.dy",
    "grid.dz",
    "grid.he_bar",
    "grid.depth_min",
    "grid.depth_max",
    "grid.bathymetry",
    "fields.kappa",
    "fields.psi_amp",
    "fields.stream",
    "light.I0",
    "light.shape",
    "light.period",
    "params.lambda",
    "params.alpha",
    "params.K_P",
    "params.K_I",
    "params.K_W",
    "params.beta",
    "params.nu",
    "time.T",
    "time.steps",
    "init.y1",
    "init.y1_amp",
    "init.y2",
    "solver.epsilon",
    "solver.weight_C",
    "solver.tol",
    "solver.max_iter",
    "solver.gamma",
    "output.dir",
    "output.every",
    "identify.params",
    "identify.perturb",
    "identify.time_stride",
    "identify.cell_stride",
];

#[derive(Debug, Clone)]
pub struct IdentifyConfig {
    pub active: Vec<Param>,
    pub perturb: f64,
    pub plan: SamplingPlan,
}

/// A fully validated run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub grid: Grid,
    pub env: Environment,
    pub params: ModelParams,
    pub time: TimeGrid,
    pub y0: TracerState,
    pub picard: PicardConfig,
    pub gamma: f64,
    pub output_dir: PathBuf,
    pub every: usize,
    pub identify: IdentifyConfig,
}

struct Raw {
    values: BTreeMap<&'static str, String>,
    base: PathBuf,
}

impl Raw {
    fn str(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn num(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.str(key) {
            None => Ok(default),
            Some(v) => v.parse::<f64>().map_err(|_| ConfigError::BadValue {
                key: key.into(),
                value: v.into(),
                expected: "a number",
            }),
        }
    }

    fn positive(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        let v = self.num(key, default)?;
        if v.is_finite() && v > 0.0 {
            Ok(v)
        } else {
            Err(ConfigError::Invalid { key: key.into(), constraint: format!("{v} violates {key} > 0") })
        }
    }

    fn count(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        let v = match self.str(key) {
            None => default,
            Some(v) => v.parse::<usize>().map_err(|_| ConfigError::BadValue {
                key: key.into(),
                value: v.into(),
                expected: "a non-negative integer",
            })?,
        };
        if v == 0 {
            return Err(ConfigError::Invalid { key: key.into(), constraint: format!("{key} must be >= 1") });
        }
        Ok(v)
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.str(key).map(|p| self.base.join(p))
    }

    fn any(&self, prefix: &str, except: &str) -> Option<&'static str> {
        self.values.keys().copied().find(|k| k.starts_with(prefix) && *k != except)
    }
}

/// Reads and validates a config file. An empty file gives the defaults.
pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config_str(&text, &base)
}

pub fn parse_config_str(text: &str, base: &Path) -> Result<RunConfig, ConfigError> {
    let mut values = BTreeMap::new();
    let mut lines_of: BTreeMap<&'static str, usize> = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::Syntax { line: line_no, text: line.into() });
        };
        let (k, v) = (k.trim(), v.trim());
        let key = KEYS
            .iter()
            .copied()
            .find(|known| *known == k)
            .ok_or_else(|| ConfigError::UnknownKey { line: line_no, key: k.into() })?;
        if let Some(&first) = lines_of.get(key) {
            return Err(ConfigError::Duplicate { line: line_no, key: key.into(), first });
        }
        lines_of.insert(key, line_no);
        values.insert(key, v.to_string());
    }
    build(&Raw { values, base: base.to_path_buf() })
}

fn build(raw: &Raw) -> Result<RunConfig, ConfigError> {
    let grid_config = match raw.path("grid.bathymetry") {
        Some(p) => {
            if let Some(other) = raw.any("grid.", "grid.bathymetry") {
                return Err(ConfigError::Conflict { key: "grid.bathymetry".into(), other: other.into() });
            }
            GridConfig::read_bathymetry(&p)
                .map_err(|e| ConfigError::Invalid { key: "grid.bathymetry".into(), constraint: e.to_string() })?
        }
        None => {
            let depth_min = raw.positive("grid.depth_min", 50.0)?;
            let depth_max = raw.positive("grid.depth_max", 150.0)?;
            if depth_max < depth_min {
                return Err(ConfigError::Invalid {
                    key: "grid.depth_max".into(),
                    constraint: format!("{depth_max} violates depth_max >= depth_min = {depth_min}"),
                });
            }
            GridConfig::basin(
                raw.count("grid.nx", 8)?,
                raw.count("grid.ny", 8)?,
                raw.positive("grid.dx", 100.0)?,
                raw.positive("grid.dy", 100.0)?,
                raw.positive("grid.dz", 10.0)?,
                raw.positive("grid.he_bar", 100.0)?,
                depth_min,
                depth_max,
            )
        }
    };
    let grid = build_grid(&grid_config).map_err(|e| ConfigError::Invalid { key: "grid".into(), constraint: e.to_string() })?;

    let shape = match raw.str("light.shape").unwrap_or("constant") {
        "constant" => {
            if raw.str("light.period").is_some() {
                return Err(ConfigError::Conflict { key: "light.period".into(), other: "light.shape=constant".into() });
            }
            LightShape::Constant
        }
        "diurnal" => LightShape::Diurnal { period: raw.positive("light.period", 1.0)? },
        other => {
            return Err(ConfigError::BadValue { key: "light.shape".into(), value: other.into(), expected: "constant or diurnal" })
        }
    };
    let light = Light { i0: raw.num("light.I0", 30.0)?, shape };
    light.validate().map_err(|e| ConfigError::Invalid { key: "light.I0".into(), constraint: e.to_string() })?;

    let kappa = raw.positive("fields.kappa", 1.0)?;
    let psi = match raw.path("fields.stream") {
        Some(p) => {
            if raw.str("fields.psi_amp").is_some() {
                return Err(ConfigError::Conflict { key: "fields.stream".into(), other: "fields.psi_amp".into() });
            }
            let text = std::fs::read_to_string(&p).map_err(|source| ConfigError::Read { path: p.clone(), source })?;
            StreamFunction::parse_slice(&grid, &text)
                .map_err(|e| ConfigError::Invalid { key: "fields.stream".into(), constraint: e.to_string() })?
        }
        None => StreamFunction::analytic(&grid, raw.num("fields.psi_amp", 50.0)?),
    };
    let env = Environment::with_stream(&grid, &psi, kappa, light)
        .map_err(|e| ConfigError::Invalid { key: "fields".into(), constraint: e.to_string() })?;

    let mut params = ModelParams::default();
    for p in Param::ALL {
        let key = format!("params.{}", p.name());
        params.set(p, raw.num(&key, params.get(p))?);
    }
    if let Err(e) = params.validate() {
        let key = Param::ALL
            .into_iter()
            .find(|p| e.to_string().contains(&format!("{} =", p.name())))
            .map(|p| format!("params.{}", p.name()))
            .unwrap_or_else(|| "params".into());
        let constraint = e.to_string().trim_start_matches("invalid parameter: ").to_string();
        return Err(ConfigError::Invalid { key, constraint });
    }

    let time = TimeGrid::new(raw.positive("time.T", 1.0)?, raw.count("time.steps", 100)?)
        .map_err(|e| ConfigError::Invalid { key: "time".into(), constraint: e.to_string() })?;

    let y0 = TracerState::smooth(&grid, raw.num("init.y1", 2.0)?, raw.num("init.y1_amp", 1.0)?, raw.num("init.y2", 0.2)?);
    if !y0.is_finite() {
        return Err(ConfigError::Invalid { key: "init".into(), constraint: "initial state must be finite".into() });
    }

    let kappa_min = env.kappa_min;
    let epsilon = match raw.str("solver.epsilon") {
        None => None,
        Some(_) => {
            let e = raw.num("solver.epsilon", 0.0)?;
            if !(e > 0.0 && e < 0.5 * kappa_min) {
                return Err(ConfigError::Invalid {
                    key: "solver.epsilon".into(),
                    constraint: format!("{e} violates 0 < epsilon < kappa_min/2 = {}", 0.5 * kappa_min),
                });
            }
            Some(e)
        }
    };
    let weight_c = match raw.str("solver.weight_C") {
        None => None,
        Some(_) => {
            let c = raw.num("solver.weight_C", 0.0)?;
            let eps = epsilon.unwrap_or(0.25 * kappa_min);
            let l1 = lipschitz_constants(&params, &grid).l1;
            let floor = l1 * l1 / (2.0 * eps) * (2.0 * time.t_end * kappa_min).exp();
            if !(c.is_finite() && c > floor) {
                return Err(ConfigError::Invalid {
                    key: "solver.weight_C".into(),
                    constraint: format!("{c} violates weight_C > L1^2/(2 epsilon) exp(2 T kappa_min) = {floor:e}"),
                });
            }
            Some(c)
        }
    };
    let picard = PicardConfig {
        epsilon,
        weight_c,
        tol: raw.positive("solver.tol", 1e-10)?,
        max_iter: raw.count("solver.max_iter", 200)?,
        timing: false,
    };
    let gamma = raw.num("solver.gamma", 0.0)?;
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(ConfigError::Invalid { key: "solver.gamma".into(), constraint: format!("{gamma} violates gamma >= 0") });
    }

    let active = match raw.str("identify.params") {
        None => vec![Param::Lambda, Param::Alpha],
        Some(list) => {
            let mut out: Vec<Param> = Vec::new();
            for name in list.split(',').map(str::trim) {
                let p = name.parse::<Param>().map_err(|_| ConfigError::BadValue {
                    key: "identify.params".into(),
                    value: name.into(),
                    expected: "a parameter name",
                })?;
                if out.contains(&p) {
                    return Err(ConfigError::Invalid { key: "identify.params".into(), constraint: format!("`{name}` listed twice") });
                }
                out.push(p);
            }
            out
        }
    };
    let perturb = raw.num("identify.perturb", 0.2)?;
    if !(perturb.is_finite() && perturb > -1.0) {
        return Err(ConfigError::Invalid { key: "identify.perturb".into(), constraint: format!("{perturb} violates perturb > -1") });
    }
    let plan = SamplingPlan {
        time_stride: raw.count("identify.time_stride", 10)?,
        cell_stride: raw.count("identify.cell_stride", 1)?,
        components: [true, true],
    };

    Ok(RunConfig {
        grid,
        env,
        params,
        time,
        y0,
        picard,
        gamma,
        output_dir: raw.path("output.dir").unwrap_or_else(|| raw.base.join("out")),
        every: raw.count("output.every", 10)?,
        identify: IdentifyConfig { active, perturb, plan },
    })
}

impl RunConfig {
    pub fn defaults() -> Self {
        parse_config_str("", Path::new(".")).expect("defaults are valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        parse_config_str(text, Path::new("."))
    }

    #[test]
    fn empty_gives_defaults() {
        let c = parse("").unwrap();
        assert_eq!(c.grid.nx, 8);
        assert_eq!(c.params, ModelParams::default());
        assert_eq!(c.time.steps, 100);
        assert_eq!(c.picard.tol, 1e-10);
        assert_eq!(c.identify.active, vec![Param::Lambda, Param::Alpha]);
    }

    #[test]
    fn nu_out_of_range_names_constraint() {
        let e = parse("params.nu=1.5").unwrap_err().to_string();
        assert!(e.contains("0 < nu < 1"), "{e}");
        assert!(e.contains("params.nu"), "{e}");
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed() {
        assert!(matches!(parse("params.gamma=1").unwrap_err(), ConfigError::UnknownKey { .. }));
        assert!(matches!(parse("time.T=1\ntime.T=2").unwrap_err(), ConfigError::Duplicate { line: 2, .. }));
        assert!(matches!(parse("time.T").unwrap_err(), ConfigError::Syntax { .. }));
        assert!(matches!(parse("time.steps=ten").unwrap_err(), ConfigError::BadValue { .. }));
        assert!(matches!(parse("solver.epsilon=0.5").unwrap_err(), ConfigError::Invalid { .. }));
        assert!(matches!(parse("solver.weight_C=1").unwrap_err(), ConfigError::Invalid { .. }));
        assert!(matches!(parse("light.shape=square").unwrap_err(), ConfigError::BadValue { .. }));
    }

    #[test]
    fn comments_and_overrides() {
        let c = parse("# run\nparams.alpha = 1.5  # lower\nlight.shape=diurnal\nidentify.params=K_P,beta\n").unwrap();
        assert_eq!(c.params.alpha, 1.5);
        assert_eq!(c.env.light.shape, LightShape::Diurnal { period: 1.0 });
        assert_eq!(c.identify.active, vec![Param::KP, Param::Beta]);
    }
}
