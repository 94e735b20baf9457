//! CSV emission. Every number is written with 17 significant digits.

use std::io::{self, Write};

use nalgebra::DMatrix;

use crate::asymptotics::ConvergenceReport;
use crate::jump_mc::McEstimate;
use crate::scalar::ScalarTrajectory;
use crate::volterra::Trajectory;

/// `x` in scientific notation with 17 significant digits.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_row<W: Write>(w: &mut W, cells: impl IntoIterator<Item = f64>) -> io::Result<()> {
    let line: Vec<String> = cells.into_iter().map(fmt_num).collect();
    writeln!(w, "{}", line.join(","))
}

/// Header `t,entry_0_0,entry_0_1,...` then one row per node.
pub fn write_trajectory_csv<W: Write>(w: &mut W, traj: &Trajectory) -> io::Result<()> {
    let n = traj.dim();
    let mut header = vec!["t".to_string()];
    for i in 0..n {
        for j in 0..n {
            header.push(format!("entry_{i}_{j}"));
        }
    }
    writeln!(w, "{}", header.join(","))?;
    for (t, m) in traj.times().zip(&traj.values) {
        let m = m.as_matrix();
        write_row(
            w,
            std::iter::once(t).chain((0..n).flat_map(|i| (0..n).map(move |j| m[(i, j)]))),
        )?;
    }
    Ok(())
}

/// `t,beta` rows, then a `# jumps` section with `t,left,right` rows.
pub fn write_scalar_csv<W: Write>(w: &mut W, traj: &ScalarTrajectory) -> io::Result<()> {
    writeln!(w, "t,beta")?;
    for (t, b) in traj.grid.nodes().zip(&traj.beta) {
        write_row(w, [t, *b])?;
    }
    writeln!(w, "# jumps")?;
    writeln!(w, "t,left,right")?;
    for j in &traj.jumps {
        write_row(w, [j.t, j.left, j.right])?;
    }
    Ok(())
}

fn write_matrix_rows<W: Write>(w: &mut W, m: &DMatrix<f64>) -> io::Result<()> {
    for i in 0..m.nrows() {
        write_row(w, m.row(i).iter().copied())?;
    }
    Ok(())
}

/// `#` metadata lines, then a `mean` block and a `stderr` block of `n` rows each.
pub fn write_mc_csv<W: Write>(
    w: &mut W,
    est: &McEstimate,
    nu: f64,
    horizon: f64,
) -> io::Result<()> {
    writeln!(w, "# samples={}", est.samples)?;
    writeln!(w, "# seed={}", est.seed)?;
    writeln!(w, "# nu={}", fmt_num(nu))?;
    writeln!(w, "# horizon={}", fmt_num(horizon))?;
    writeln!(w, "mean")?;
    write_matrix_rows(w, &est.mean)?;
    writeln!(w, "stderr")?;
    write_matrix_rows(w, &est.stderr)
}

/// Header `t,entry_0_0,...` and a single row at `t`.
pub fn write_matrix_csv<W: Write>(w: &mut W, t: f64, m: &DMatrix<f64>) -> io::Result<()> {
    let n = m.nrows();
    let mut header = vec!["t".to_string()];
    for i in 0..n {
        for j in 0..n {
            header.push(format!("entry_{i}_{j}"));
        }
    }
    writeln!(w, "{}", header.join(","))?;
    write_row(
        w,
        std::iter::once(t).chain((0..n).flat_map(|i| (0..n).map(move |j| m[(i, j)]))),
    )
}

/// `t,c_value,distance` per node.
pub fn write_convergence_csv<W: Write>(w: &mut W, report: &ConvergenceReport) -> io::Result<()> {
    writeln!(w, "t,c_value,distance")?;
    for ((t, c), d) in report
        .times
        .iter()
        .zip(&report.c_values)
        .zip(&report.distance)
    {
        write_row(w, [*t, *c, *d])?;
    }
    Ok(())
}
