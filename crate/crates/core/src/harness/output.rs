use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::sim::Row;
use crate::error::{Error, Result};
use crate::plant::theta_len;

/// Column names of the trajectory file for `n` positions and `m` inputs.
pub fn trajectory_header(n: usize, m: usize) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    for name in ["p", "q", "y", "p_hat", "q_hat"] {
        cols.extend((1..=n).map(|i| format!("{name}{i}")));
    }
    cols.extend((1..=theta_len(n, m)).map(|i| format!("theta_hat{i}")));
    for name in ["theta_err_norm", "p_err_norm", "q_err_norm", "lambda_min", "V_r", "V_theta", "V"] {
        cols.push(name.to_string());
    }
    cols
}

fn row_values(row: &Row) -> impl Iterator<Item = f64> + '_ {
    std::iter::once(row.t)
        .chain([&row.p, &row.q, &row.y, &row.p_hat, &row.q_hat, &row.theta_hat].into_iter().flatten().copied())
        .chain([row.theta_err, row.p_err, row.q_err, row.lambda_min, row.v_r, row.v_theta, row.v])
}

/// Writes rows with nine significant digits in scientific notation.
pub fn write_csv(rows: &[Row], header: &[String], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let mut first = true;
        for v in row_values(row) {
            if !first {
                w.write_all(b",")?;
            }
            write!(w, "{v:.8e}")?;
            first = false;
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_trajectory(rows: &[Row], n: usize, m: usize, path: &Path) -> Result<()> {
    let header = trajectory_header(n, m);
    if let Some(row) = rows.first() {
        let width = row_values(row).count();
        if width != header.len() {
            return Err(Error::dim("trajectory row", header.len(), width));
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_csv(rows, &header, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn write_json(value: &impl Serialize, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Parses a trajectory file back into its header and numeric rows.
pub fn read_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty trajectory file".into()))?
        .split(',')
        .map(str::to_string)
        .collect::<Vec<_>>();
    let rows = lines
        .map(|line| {
            line.split(',')
                .map(|f| f.parse::<f64>().map_err(|e| Error::Format(format!("{f:?}: {e}"))))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((header, rows))
}
