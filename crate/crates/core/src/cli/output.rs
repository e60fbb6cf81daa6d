//! CSV emission.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::fields::{TracerState, Trajectory};
use crate::geometry::Grid;
use crate::solver::{Diagnostics, EnergyReport, PicardReport};

pub fn create(dir: &Path, name: &str) -> io::Result<(PathBuf, BufWriter<File>)> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let file = File::create(&path)?;
    Ok((path, BufWriter::new(file)))
}

/// `cell_i,cell_j,cell_k,y1,y2`
pub fn write_snapshot<W: Write>(grid: &Grid, state: &TracerState, mut w: W) -> io::Result<()> {
    writeln!(w, "cell_i,cell_j,cell_k,y1,y2")?;
    for (c, cell) in grid.cells.iter().enumerate() {
        writeln!(w, "{},{},{},{:e},{:e}", cell.i, cell.j, cell.k, state.y1[c], state.y2[c])?;
    }
    Ok(())
}

/// One snapshot file `{prefix}_{k:05}.csv` every `every` steps and at the final step.
pub fn write_snapshots(dir: &Path, prefix: &str, grid: &Grid, traj: &Trajectory, every: usize) -> io::Result<usize> {
    let last = traj.steps();
    let mut written = 0;
    for k in (0..=last).filter(|k| k % every == 0 || *k == last) {
        let (_, mut w) = create(dir, &format!("{prefix}_{k:05}.csv"))?;
        write_snapshot(grid, &traj.states[k], &mut w)?;
        w.flush()?;
        written += 1;
    }
    Ok(written)
}

/// `t,total_mass,l2_y,h1_y,boundary_exchange`
pub fn write_diagnostics<W: Write>(rows: &[Diagnostics], mut w: W) -> io::Result<()> {
    writeln!(w, "t,total_mass,l2_y,h1_y,boundary_exchange")?;
    for d in rows {
        writeln!(w, "{:e},{:e},{:e},{:e},{:e}", d.t, d.total_mass, d.l2_y, d.h1_y, d.boundary_exchange)?;
    }
    Ok(())
}

/// `iter,weighted_residual,ratio,wallclock_ms`. The ratio is left empty on the
/// first row and wherever either residual sits at the rounding floor.
pub fn write_picard<W: Write>(rep: &PicardReport, mut w: W) -> io::Result<()> {
    writeln!(w, "iter,weighted_residual,ratio,wallclock_ms")?;
    let lr = &rep.log_residuals;
    for (i, r) in rep.residuals.iter().enumerate() {
        let resolved = i > 0 && lr[i - 1] > rep.log_floor && lr[i] > rep.log_floor;
        let ratio = if resolved { format!("{:e}", rep.ratios[i - 1]) } else { String::new() };
        let ms = rep.wallclock_ms.get(i).copied().unwrap_or(0.0);
        writeln!(w, "{},{:e},{},{:e}", i + 1, r, ratio, ms)?;
    }
    Ok(())
}

/// `lhs,rhs,C,C1,C2,margin,pass`
pub fn write_energy<W: Write>(rep: &EnergyReport, mut w: W) -> io::Result<()> {
    writeln!(w, "lhs,rhs,C,C1,C2,margin,pass")?;
    let k = &rep.constants;
    writeln!(w, "{:e},{:e},{:e},{:e},{:e},{:e},{}", rep.lhs, rep.rhs, k.c, k.c1, k.c2, rep.margin, rep.pass)
}
