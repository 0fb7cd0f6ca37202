//! Dataset and report file formats.
//!
//! Series CSV: first line holds comma-separated node names; every following
//! line is one timestamp with one decimal value per node, in header order.
//! Adjacency CSV reuses the layout with matrix rows instead of timestamps.

use std::fmt::Write as _;
use std::path::Path;

use stemgnn::error::{Error, Result};
use stemgnn::eval::{AblationRow, SpectralComponent};
use stemgnn::tensor::Tensor;
use stemgnn::training::{Dataset, TrainLogRow};

/// Parse a series CSV into a dataset (`values[node, t]`).
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{} is empty", path.display())))?;
    let names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let n = names.len();
    if n == 0 || names.iter().any(|s| s.is_empty()) {
        return Err(Error::Data(format!("{}: malformed header line", path.display())));
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != n {
            return Err(Error::Data(format!(
                "{}: row {} has {} cells, header has {}",
                path.display(),
                idx + 1,
                cells.len(),
                n
            )));
        }
        let mut row = Vec::with_capacity(n);
        for cell in cells {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::Data(format!(
                    "{}: row {} holds non-numeric cell '{}'",
                    path.display(),
                    idx + 1,
                    cell.trim()
                ))
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    if rows.len() < 2 {
        return Err(Error::Data(format!(
            "{}: needs at least 2 data rows, found {}",
            path.display(),
            rows.len()
        )));
    }

    let t = rows.len();
    let mut values = Tensor::zeros(&[n, t]);
    for (j, row) in rows.iter().enumerate() {
        for (i, v) in row.iter().enumerate() {
            values.set2(i, j, *v);
        }
    }
    Dataset::new(values, names, "unspecified")
}

pub fn write_series_csv(path: &Path, names: &[String], values: &Tensor) -> Result<()> {
    let (n, t) = values.dims2()?;
    if names.len() != n {
        return Err(Error::dim(format!("{} names for {n} series", names.len())));
    }
    let mut out = String::new();
    out.push_str(&names.join(","));
    out.push('\n');
    for j in 0..t {
        for i in 0..n {
            if i > 0 {
                out.push(',');
            }
            write!(out, "{}", values.at2(i, j)).unwrap();
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Square matrix with node names in the header; rows are matrix rows.
pub fn write_matrix_csv(path: &Path, names: &[String], matrix: &Tensor) -> Result<()> {
    let (r, c) = matrix.dims2()?;
    if r != c || names.len() != r {
        return Err(Error::dim(format!(
            "adjacency wants a square matrix matching {} names, got {:?}",
            names.len(),
            matrix.shape()
        )));
    }
    let mut out = String::new();
    out.push_str(&names.join(","));
    out.push('\n');
    for i in 0..r {
        for j in 0..c {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{}", matrix.at2(i, j)).unwrap();
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_matrix_csv(path: &Path) -> Result<Tensor> {
    let ds = load_csv(path)?;
    // rows arrived as "timestamps"; transpose back into matrix rows
    let m = ds.values.transposed()?;
    let (r, c) = m.dims2()?;
    if r != c {
        return Err(Error::Data(format!(
            "{}: expected a square matrix, got {r} rows x {c} columns",
            path.display()
        )));
    }
    Ok(m)
}

pub fn write_training_log(path: &Path, log: &[TrainLogRow]) -> Result<()> {
    let mut out = String::from("epoch,lr,train_loss,val_mae,seconds\n");
    for row in log {
        writeln!(
            out,
            "{},{},{},{},{:.3}",
            row.epoch, row.lr, row.train_loss, row.val_mae, row.seconds
        )
        .unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut out = String::from("variant,mae,mape,rmse\n");
    for row in rows {
        writeln!(out, "{},{},{},{}", row.variant, row.mae, row.mape, row.rmse).unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Long-format predictions: one line per (window, node, step).
pub fn write_predictions_csv(
    path: &Path,
    names: &[String],
    predictions: &[stemgnn::eval::WindowPrediction],
) -> Result<()> {
    let mut out = String::from("window_start,node,step,prediction,truth\n");
    for block in predictions {
        for (node, series) in block.predictions.iter().enumerate() {
            for (step, value) in series.iter().enumerate() {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    block.start,
                    names[node],
                    step + 1,
                    value,
                    block.truths[node][step]
                )
                .unwrap();
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// `2k` columns: the projected series for each component, then its
/// post-cell counterpart.
pub fn write_spectral_csv(path: &Path, components: &[SpectralComponent]) -> Result<()> {
    if components.is_empty() {
        return Err(Error::Data("no spectral components to write".into()));
    }
    let t = components[0].projected.len();
    let mut header: Vec<String> = Vec::new();
    for i in 0..components.len() {
        header.push(format!("gft_{}", i + 1));
    }
    for i in 0..components.len() {
        header.push(format!("cell_{}", i + 1));
    }
    let mut out = header.join(",");
    out.push('\n');
    for row in 0..t {
        let mut cells: Vec<String> = Vec::with_capacity(components.len() * 2);
        for c in components {
            cells.push(format!("{}", c.projected[row]));
        }
        for c in components {
            cells.push(format!("{}", c.post_cell[row]));
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn small_csv_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("tiny.csv");
        std::fs::write(&path, "a,b\n1,2\n3,4\n").unwrap();
        let ds = load_csv(&path).unwrap();
        assert_eq!(ds.nodes(), 2);
        assert_eq!(ds.len(), 2);
        // node a holds [1, 3], node b holds [2, 4]
        assert_eq!(ds.values.data(), &[1.0, 3.0, 2.0, 4.0]);

        let out = dir.path().join("back.csv");
        write_series_csv(&out, &ds.node_names, &ds.values).unwrap();
        assert_eq!(std::fs::read_to_string(&out).unwrap(), "a,b\n1,2\n3,4\n");
    }

    #[test]
    fn ragged_row_error_names_the_row() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("ragged.csv");
        // row 7 of the file (header + 6 data rows) is short
        std::fs::write(&path, "a,b\n1,2\n1,2\n1,2\n1,2\n1,2\n9\n1,2\n").unwrap();
        let err = load_csv(&path).unwrap_err().to_string();
        assert!(err.contains("row 7"), "{err}");
    }

    #[test]
    fn non_numeric_and_too_short_files_fail() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "a,b\n1,x\n2,3\n").unwrap();
        assert!(load_csv(&path).unwrap_err().to_string().contains("non-numeric"));

        std::fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(load_csv(&path).unwrap_err().to_string().contains("at least 2"));
    }

    #[test]
    fn matrix_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("adj.csv");
        let m = Tensor::from_rows(&[vec![0.0, 0.5], vec![0.5, 0.0]]);
        write_matrix_csv(&path, &["a".into(), "b".into()], &m).unwrap();
        let back = load_matrix_csv(&path).unwrap();
        assert_eq!(back.data(), m.data());
    }
}
