//! Column-structured water-body grid.
//!
//! The surface is an `nx × ny` rectangle of columns. Each wet column holds a
//! stack of layers of thickness `dz` reaching down to the (staircase) bottom.
//! Layers whose centre lies above the local euphotic depth
//! `h_e = min(he_bar, depth)` form the euphotic zone, the rest the aphotic
//! zone. Every wet column owns one surface facet and one bottom facet; the
//! bottom facet is aphotic exactly when the column is deeper than `he_bar`.
//!
//! Cells are numbered column by column (columns in row-major `(j, i)` order,
//! layers top to bottom inside a column), so the layers of one column are
//! contiguous and neighbouring columns stay within a narrow band.

use std::fmt;
use std::path::Path;

use thiserror::Error;

/// Relative tolerance used when snapping depths to layer multiples.
const SNAP_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("grid needs nx, ny >= 1 (got {nx} x {ny})")]
    EmptySurface { nx: usize, ny: usize },
    #[error("{name} must be positive and finite (got {value})")]
    NonPositive { name: &'static str, value: f64 },
    #[error("expected {expected} depth values, got {got}")]
    DepthCount { expected: usize, got: usize },
    #[error("depth {depth} of column (i={i}, j={j}) is not a non-negative multiple of dz = {dz}")]
    NonMultipleDepth { i: usize, j: usize, depth: f64, dz: f64 },
    #[error("he_bar = {he_bar} is not a positive multiple of dz = {dz}")]
    NonMultipleEuphotic { he_bar: f64, dz: f64 },
    #[error("grid has no wet column")]
    NoWetCells,
    #[error("column (i={i}, j={j}) is dry")]
    DryColumn { i: usize, j: usize },
    #[error("column index {0} out of range")]
    ColumnOutOfRange(usize),
    #[error("cell index {0} is not a wet cell")]
    CellOutOfRange(usize),
    #[error("bathymetry file: {0}")]
    Parse(String),
}

/// Raw description of a grid before validation.
#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub he_bar: f64,
    /// Depth per column, row-major (`depth[j * nx + i]`). Zero marks a dry column.
    pub depth: Vec<f64>,
}

impl GridConfig {
    /// Single flat column, handy for tests.
    pub fn column(depth: f64, dz: f64, he_bar: f64) -> Self {
        Self { nx: 1, ny: 1, dx: 1.0, dy: 1.0, dz, he_bar, depth: vec![depth] }
    }

    /// Flat-bottomed box of uniform depth.
    pub fn flat_box(nx: usize, ny: usize, dx: f64, dy: f64, dz: f64, depth: f64, he_bar: f64) -> Self {
        Self { nx, ny, dx, dy, dz, he_bar, depth: vec![depth; nx * ny] }
    }

    /// Smooth basin between `depth_min` and `depth_max`, snapped to `dz`.
    ///
    /// The profile is a product of half sines normalised so the deepest
    /// column sits exactly at `depth_max`.
    pub fn basin(
        nx: usize,
        ny: usize,
        dx: f64,
        dy: f64,
        dz: f64,
        he_bar: f64,
        depth_min: f64,
        depth_max: f64,
    ) -> Self {
        let shape = |i: usize, j: usize| {
            let sx = (std::f64::consts::PI * (i as f64 + 0.5) / nx as f64).sin();
            let sy = (std::f64::consts::PI * (j as f64 + 0.5) / ny as f64).sin();
            sx * sy
        };
        let peak = (0..ny)
            .flat_map(|j| (0..nx).map(move |i| (i, j)))
            .map(|(i, j)| shape(i, j))
            .fold(0.0_f64, f64::max);
        let mut depth = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let raw = depth_min + (depth_max - depth_min) * shape(i, j) / peak;
                depth.push((raw / dz).round() * dz);
            }
        }
        Self { nx, ny, dx, dy, dz, he_bar, depth }
    }

    /// The desk-scale default: 8 × 8 columns, depths 50–150 m, `dz = 10` m,
    /// euphotic depth 100 m, 100 m horizontal spacing.
    pub fn desk() -> Self {
        Self::basin(8, 8, 100.0, 100.0, 10.0, 100.0, 50.0, 150.0)
    }

    /// Parses the plain-text bathymetry format: a header line
    /// `nx ny dx dy dz he_bar` followed by `ny` rows of `nx` depths.
    pub fn parse_bathymetry(text: &str) -> Result<Self, GeometryError> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| GeometryError::Parse("empty file".into()))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 6 {
            return Err(GeometryError::Parse(format!(
                "header must read `nx ny dx dy dz he_bar`, got `{header}`"
            )));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|e| GeometryError::Parse(format!("`{s}`: {e}")));
        let num = |s: &str| s.parse::<f64>().map_err(|e| GeometryError::Parse(format!("`{s}`: {e}")));
        let (nx, ny) = (int(h[0])?, int(h[1])?);
        let (dx, dy, dz, he_bar) = (num(h[2])?, num(h[3])?, num(h[4])?, num(h[5])?);
        let mut depth = Vec::with_capacity(nx * ny);
        for (row, line) in lines.enumerate() {
            let vals = line.split_whitespace().map(num).collect::<Result<Vec<_>, _>>()?;
            if vals.len() != nx {
                return Err(GeometryError::Parse(format!(
                    "row {row} has {} values, expected {nx}",
                    vals.len()
                )));
            }
            depth.extend(vals);
        }
        if depth.len() != nx * ny {
            return Err(GeometryError::DepthCount { expected: nx * ny, got: depth.len() });
        }
        Ok(Self { nx, ny, dx, dy, dz, he_bar, depth })
    }

    pub fn read_bathymetry(path: &Path) -> Result<Self, GeometryError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GeometryError::Parse(format!("{}: {e}", path.display())))?;
        Self::parse_bathymetry(&text)
    }

    pub fn to_bathymetry_string(&self) -> String {
        let mut s = format!("{} {} {} {} {} {}\n", self.nx, self.ny, self.dx, self.dy, self.dz, self.he_bar);
        for j in 0..self.ny {
            let row: Vec<String> = (0..self.nx).map(|i| format!("{}", self.depth[j * self.nx + i])).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Zone {
    Euphotic,
    Aphotic,
}

impl fmt::Display for Zone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Zone::Euphotic => f.write_str("euphotic"),
            Zone::Aphotic => f.write_str("aphotic"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// One wet column of the surface grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub i: usize,
    pub j: usize,
    pub depth: f64,
    /// Index of the top cell; the column's cells are `first_cell..first_cell + layers`.
    pub first_cell: usize,
    pub layers: usize,
    pub euphotic_layers: usize,
}

impl Column {
    pub fn cells(&self) -> std::ops::Range<usize> {
        self.first_cell..self.first_cell + self.layers
    }

    pub fn euphotic_cells(&self) -> std::ops::Range<usize> {
        self.first_cell..self.first_cell + self.euphotic_layers
    }

    pub fn aphotic_cells(&self) -> std::ops::Range<usize> {
        self.first_cell + self.euphotic_layers..self.first_cell + self.layers
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub column: usize,
    pub zone: Zone,
    /// Depth of the cell centre below the surface (m).
    pub center_depth: f64,
    pub volume: f64,
}

/// Interior face between two wet cells, `a < b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Face {
    pub a: usize,
    pub b: usize,
    pub axis: Axis,
    pub area: f64,
    /// Centre-to-centre distance.
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FacetKind {
    /// Sea surface Γ′.
    Surface,
    /// Bottom under a column that ends inside the euphotic zone (Γ₁).
    EuphoticBottom,
    /// Bottom under an aphotic zone (Γ₂).
    AphoticBottom,
}

/// Boundary facet on the surface or the bottom, attached to one cell.
/// Lateral walls are not represented: they carry no flux.
#[derive(Debug, Clone, PartialEq)]
pub struct Facet {
    pub cell: usize,
    pub column: usize,
    pub kind: FacetKind,
    pub area: f64,
    /// Vertical coordinate of the facet (0 for the surface, the column depth at the bottom).
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub he_bar: f64,
    pub h_max: f64,
    /// Depth per surface column, row-major, dry columns included as 0.
    pub depth: Vec<f64>,
    pub max_layers: usize,
    pub columns: Vec<Column>,
    pub cells: Vec<Cell>,
    pub faces: Vec<Face>,
    pub facets: Vec<Facet>,
    /// Surface position `j * nx + i` to wet column index.
    column_at: Vec<Option<usize>>,
}

fn positive(name: &'static str, value: f64) -> Result<(), GeometryError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(GeometryError::NonPositive { name, value })
    }
}

fn layer_count(depth: f64, dz: f64) -> Option<usize> {
    if !depth.is_finite() || depth < 0.0 {
        return None;
    }
    let n = (depth / dz).round();
    if (n * dz - depth).abs() <= SNAP_TOL * dz.max(depth) {
        Some(n as usize)
    } else {
        None
    }
}

/// Validates a configuration and builds the grid.
pub fn build_grid(config: &GridConfig) -> Result<Grid, GeometryError> {
    let GridConfig { nx, ny, dx, dy, dz, he_bar, .. } = *config;
    if nx == 0 || ny == 0 {
        return Err(GeometryError::EmptySurface { nx, ny });
    }
    positive("dx", dx)?;
    positive("dy", dy)?;
    positive("dz", dz)?;
    positive("he_bar", he_bar)?;
    if config.depth.len() != nx * ny {
        return Err(GeometryError::DepthCount { expected: nx * ny, got: config.depth.len() });
    }
    let euphotic_max = match layer_count(he_bar, dz) {
        Some(n) if n > 0 => n,
        _ => return Err(GeometryError::NonMultipleEuphotic { he_bar, dz }),
    };

    let mut layers_at = vec![0usize; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let d = config.depth[j * nx + i];
            layers_at[j * nx + i] =
                layer_count(d, dz).ok_or(GeometryError::NonMultipleDepth { i, j, depth: d, dz })?;
        }
    }

    let mut columns = Vec::new();
    let mut cells = Vec::new();
    let mut column_at = vec![None; nx * ny];
    let mut depth = vec![0.0; nx * ny];
    let area = dx * dy;
    for j in 0..ny {
        for i in 0..nx {
            let layers = layers_at[j * nx + i];
            if layers == 0 {
                continue;
            }
            let col_depth = layers as f64 * dz;
            depth[j * nx + i] = col_depth;
            let euphotic_layers = layers.min(euphotic_max);
            let column = columns.len();
            column_at[j * nx + i] = Some(column);
            columns.push(Column { i, j, depth: col_depth, first_cell: cells.len(), layers, euphotic_layers });
            for k in 0..layers {
                let zone = if k < euphotic_layers { Zone::Euphotic } else { Zone::Aphotic };
                cells.push(Cell {
                    i,
                    j,
                    k,
                    column,
                    zone,
                    center_depth: (k as f64 + 0.5) * dz,
                    volume: area * dz,
                });
            }
        }
    }
    if cells.is_empty() {
        return Err(GeometryError::NoWetCells);
    }
    let max_layers = columns.iter().map(|c| c.layers).max().unwrap_or(0);
    let h_max = max_layers as f64 * dz;

    let mut faces = Vec::new();
    for (ci, col) in columns.iter().enumerate() {
        // vertical faces inside the column
        for k in 0..col.layers.saturating_sub(1) {
            faces.push(Face {
                a: col.first_cell + k,
                b: col.first_cell + k + 1,
                axis: Axis::Z,
                area,
                distance: dz,
            });
        }
        // horizontal faces towards +x and +y neighbours
        let neighbours = [
            (col.i + 1 < nx).then(|| (col.j * nx + col.i + 1, Axis::X, dy * dz, dx)),
            (col.j + 1 < ny).then(|| ((col.j + 1) * nx + col.i, Axis::Y, dx * dz, dy)),
        ];
        for (pos, axis, face_area, dist) in neighbours.into_iter().flatten() {
            if let Some(other) = column_at[pos] {
                let o = &columns[other];
                debug_assert!(other > ci);
                for k in 0..col.layers.min(o.layers) {
                    faces.push(Face {
                        a: col.first_cell + k,
                        b: o.first_cell + k,
                        axis,
                        area: face_area,
                        distance: dist,
                    });
                }
            }
        }
    }

    let mut facets = Vec::with_capacity(2 * columns.len());
    for (ci, col) in columns.iter().enumerate() {
        facets.push(Facet { cell: col.first_cell, column: ci, kind: FacetKind::Surface, area, depth: 0.0 });
        let kind = if col.depth > he_bar { FacetKind::AphoticBottom } else { FacetKind::EuphoticBottom };
        facets.push(Facet {
            cell: col.first_cell + col.layers - 1,
            column: ci,
            kind,
            area,
            depth: col.depth,
        });
    }

    Ok(Grid {
        nx,
        ny,
        dx,
        dy,
        dz,
        he_bar,
        h_max,
        depth,
        max_layers,
        columns,
        cells,
        faces,
        facets,
        column_at,
    })
}

impl Grid {
    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn column_area(&self) -> f64 {
        self.dx * self.dy
    }

    pub fn total_volume(&self) -> f64 {
        self.cells.iter().map(|c| c.volume).sum()
    }

    /// Wet column at surface position `(i, j)`, if any.
    pub fn column_at(&self, i: usize, j: usize) -> Option<usize> {
        if i < self.nx && j < self.ny {
            self.column_at[j * self.nx + i]
        } else {
            None
        }
    }

    /// Wet cell at lattice position `(i, j, k)`, if any.
    pub fn cell_at(&self, i: usize, j: usize, k: usize) -> Option<usize> {
        let col = &self.columns[self.column_at(i, j)?];
        (k < col.layers).then_some(col.first_cell + k)
    }

    /// Actual euphotic depth `min(he_bar, depth)` of a wet column.
    pub fn euphotic_depth(&self, column: usize) -> Result<f64, GeometryError> {
        let col = self.columns.get(column).ok_or(GeometryError::ColumnOutOfRange(column))?;
        Ok(self.he_bar.min(col.depth))
    }

    /// Euphotic depth of the surface position `(i, j)`; dry positions are rejected.
    pub fn euphotic_depth_at(&self, i: usize, j: usize) -> Result<f64, GeometryError> {
        let column = self.column_at(i, j).ok_or(GeometryError::DryColumn { i, j })?;
        self.euphotic_depth(column)
    }

    /// Zone of a wet cell: euphotic iff its centre lies above the local euphotic depth.
    pub fn cell_zone(&self, cell: usize) -> Result<Zone, GeometryError> {
        let c = self.cells.get(cell).ok_or(GeometryError::CellOutOfRange(cell))?;
        let he = self.euphotic_depth(c.column)?;
        Ok(if c.center_depth < he { Zone::Euphotic } else { Zone::Aphotic })
    }

    pub fn is_flat(&self) -> bool {
        self.columns.len() == self.nx * self.ny
            && self.columns.iter().all(|c| c.layers == self.max_layers)
    }

    /// Largest boundary-facet area per volume of the adjacent cell, square-rooted.
    /// Serves as the discrete trace constant: `Σ_facets area·w² ≤ c_τ² Σ vol·w²`
    /// for boundary values taken on one facet kind.
    pub fn trace_constant(&self) -> f64 {
        self.facets
            .iter()
            .map(|f| f.area / self.cells[f.cell].volume)
            .fold(0.0_f64, f64::max)
            .sqrt()
    }

    /// Half-bandwidth of the cell-adjacency structure.
    pub fn bandwidth(&self) -> usize {
        self.faces.iter().map(|f| f.b - f.a).max().unwrap_or(0)
    }

    pub fn euphotic_count(&self) -> usize {
        self.cells.iter().filter(|c| c.zone == Zone::Euphotic).count()
    }

    pub fn aphotic_count(&self) -> usize {
        self.cells.iter().filter(|c| c.zone == Zone::Aphotic).count()
    }

    pub fn bottom_facet(&self, column: usize) -> usize {
        2 * column + 1
    }

    pub fn surface_facet(&self, column: usize) -> usize {
        2 * column
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn column_ending_at_euphotic_depth() {
        let g = build_grid(&GridConfig::column(100.0, 10.0, 100.0)).unwrap();
        assert_eq!(g.n_cells(), 10);
        assert_eq!(g.euphotic_count(), 10);
        assert_eq!(g.facets[g.bottom_facet(0)].kind, FacetKind::EuphoticBottom);
    }

    #[test]
    fn column_with_aphotic_zone() {
        let g = build_grid(&GridConfig::column(150.0, 10.0, 100.0)).unwrap();
        assert_eq!(g.n_cells(), 15);
        assert_eq!(g.euphotic_count(), 10);
        assert_eq!(g.aphotic_count(), 5);
        assert_eq!(g.facets[g.bottom_facet(0)].kind, FacetKind::AphoticBottom);
    }

    #[test]
    fn two_columns_partition_by_hand() {
        let cfg = GridConfig { nx: 2, ny: 1, dx: 1.0, dy: 1.0, dz: 10.0, he_bar: 100.0, depth: vec![50.0, 150.0] };
        let g = build_grid(&cfg).unwrap();
        let (c0, c1) = (&g.columns[0], &g.columns[1]);
        assert_eq!((c0.layers, c0.euphotic_layers), (5, 5));
        assert_eq!((c1.layers, c1.euphotic_layers), (15, 10));
        assert_eq!(g.facets[g.bottom_facet(0)].kind, FacetKind::EuphoticBottom);
        assert_eq!(g.facets[g.bottom_facet(1)].kind, FacetKind::AphoticBottom);
        // five x-faces between the columns
        assert_eq!(g.faces.iter().filter(|f| f.axis == Axis::X).count(), 5);
    }

    #[test]
    fn euphotic_depth_is_min_rule() {
        let cfg = GridConfig { nx: 3, ny: 1, dx: 1.0, dy: 1.0, dz: 10.0, he_bar: 100.0, depth: vec![200.0, 50.0, 100.0] };
        let g = build_grid(&cfg).unwrap();
        assert_eq!(g.euphotic_depth(0).unwrap(), 100.0);
        assert_eq!(g.euphotic_depth(1).unwrap(), 50.0);
        assert_eq!(g.euphotic_depth(2).unwrap(), 100.0);
    }

    #[test]
    fn dry_column_rejected_for_euphotic_depth() {
        let cfg = GridConfig { nx: 2, ny: 1, dx: 1.0, dy: 1.0, dz: 10.0, he_bar: 100.0, depth: vec![0.0, 50.0] };
        let g = build_grid(&cfg).unwrap();
        assert_eq!(g.n_columns(), 1);
        assert_eq!(g.euphotic_depth_at(0, 0), Err(GeometryError::DryColumn { i: 0, j: 0 }));
        assert_eq!(g.euphotic_depth_at(1, 0).unwrap(), 50.0);
    }

    #[test]
    fn zone_by_cell_centre() {
        let g = build_grid(&GridConfig::column(200.0, 10.0, 100.0)).unwrap();
        // centres at 45, 95, 105 m
        assert_eq!(g.cell_zone(4).unwrap(), Zone::Euphotic);
        assert_eq!(g.cell_zone(9).unwrap(), Zone::Euphotic);
        assert_eq!(g.cell_zone(10).unwrap(), Zone::Aphotic);
        assert!(g.cell_zone(20).is_err());
    }

    #[test]
    fn rejects_bad_depths() {
        let cfg = GridConfig { nx: 2, ny: 1, dx: 1.0, dy: 1.0, dz: 10.0, he_bar: 100.0, depth: vec![50.0, 155.0] };
        assert!(matches!(build_grid(&cfg), Err(GeometryError::NonMultipleDepth { i: 1, j: 0, .. })));
        let dry = GridConfig { depth: vec![0.0, 0.0], ..cfg.clone() };
        assert_eq!(build_grid(&dry), Err(GeometryError::NoWetCells));
        let bad_he = GridConfig { he_bar: 95.0, depth: vec![50.0, 150.0], ..cfg };
        assert!(matches!(build_grid(&bad_he), Err(GeometryError::NonMultipleEuphotic { .. })));
    }

    #[test]
    fn desk_grid_spans_50_to_150() {
        let g = build_grid(&GridConfig::desk()).unwrap();
        assert_eq!(g.h_max, 150.0);
        let min = g.columns.iter().map(|c| c.depth).fold(f64::INFINITY, f64::min);
        assert_eq!(min, 50.0);
        assert_eq!(g.n_columns(), 64);
    }

    #[test]
    fn bathymetry_round_trip() {
        let cfg = GridConfig::desk();
        let parsed = GridConfig::parse_bathymetry(&cfg.to_bathymetry_string()).unwrap();
        assert_eq!(parsed, cfg);
        assert!(GridConfig::parse_bathymetry("1 1 1 1 10").is_err());
        assert!(GridConfig::parse_bathymetry("2 1 1 1 10 100\n10\n").is_err());
    }

    #[test]
    fn column_volumes_exact() {
        let g = build_grid(&GridConfig::desk()).unwrap();
        for col in &g.columns {
            let v: f64 = col.cells().map(|c| g.cells[c].volume).sum();
            assert!((v - col.depth * g.dx * g.dy).abs() <= 1e-12 * v);
        }
    }
}
