//! CSV files: the class weight matrix, and per-record label or probability
//! tables whose header row is the class identifiers.

use std::path::Path;

use scatternet_core::loss::{discrete_challenge_score, merge_identical_classes, predict, MergedClasses, Normalization, WeightMatrix};

use crate::{Error, Result};

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))
}

fn rows(path: &Path) -> Result<Vec<Vec<String>>> {
    reader(path)?
        .records()
        .map(|r| {
            r.map(|r| r.iter().map(str::to_string).collect())
                .map_err(|e| Error::format(path, e.to_string()))
        })
        .collect()
}

fn number(path: &Path, row: usize, cell: &str) -> Result<f64> {
    cell.parse()
        .map_err(|_| Error::format(path, format!("row {}: {cell:?} is not a number", row + 1)))
}

fn write_rows(path: &Path, rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .flexible(false)
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    for row in rows {
        w.write_record(&row).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Header row `,id1,...,idK`, then one row per class with its identifier
/// first. Row and column order must agree.
pub fn read_weights(path: &Path) -> Result<WeightMatrix> {
    let rows = rows(path)?;
    let (header, body) = rows.split_first().ok_or_else(|| Error::format(path, "empty weight file"))?;
    let labels: Vec<String> = header.iter().skip(1).cloned().collect();
    if body.len() != labels.len() {
        return Err(Error::format(path, format!("{} column labels but {} rows", labels.len(), body.len())));
    }
    let mut matrix = Vec::with_capacity(body.len());
    for (i, row) in body.iter().enumerate() {
        if row.len() != labels.len() + 1 {
            return Err(Error::format(path, format!("row {} has {} cells, expected {}", i + 2, row.len(), labels.len() + 1)));
        }
        if row[0] != labels[i] {
            return Err(Error::format(path, format!("row {} is {:?} but column {} is {:?}", i + 2, row[0], i + 1, labels[i])));
        }
        matrix.push(row[1..].iter().map(|c| number(path, i + 1, c)).collect::<Result<Vec<f64>>>()?);
    }
    WeightMatrix::new(labels, matrix).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_weights(path: &Path, wm: &WeightMatrix) -> Result<()> {
    let header = std::iter::once(String::new()).chain(wm.labels().iter().cloned()).collect();
    let body = (0..wm.dim()).map(|i| {
        std::iter::once(wm.labels()[i].clone())
            .chain(wm.row(i).iter().map(|v| v.to_string()))
            .collect()
    });
    write_rows(path, std::iter::once(header).chain(body))
}

/// Rows of values under a header of class identifiers.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelTable {
    pub classes: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl LabelTable {
    pub fn read(path: &Path) -> Result<Self> {
        let rows = rows(path)?;
        let (header, body) = rows.split_first().ok_or_else(|| Error::format(path, "empty table"))?;
        let mut out = Vec::with_capacity(body.len());
        for (i, row) in body.iter().enumerate() {
            if row.len() != header.len() {
                return Err(Error::format(path, format!("row {} has {} cells, header has {}", i + 2, row.len(), header.len())));
            }
            out.push(row.iter().map(|c| number(path, i + 1, c)).collect::<Result<Vec<f64>>>()?);
        }
        Ok(LabelTable {
            classes: header.clone(),
            rows: out,
        })
    }

    /// Values are written in shortest round-trip form.
    pub fn write(&self, path: &Path) -> Result<()> {
        let body = self.rows.iter().map(|r| r.iter().map(|v| v.to_string()).collect());
        write_rows(path, std::iter::once(self.classes.clone()).chain(body))
    }

    /// Reorders the columns into merged-class order. A header may name a
    /// merged class (`a|b`) or any of its members; several columns of one
    /// class are combined by their maximum.
    pub fn align(&self, merged: &MergedClasses, path: &Path) -> Result<Vec<Vec<f64>>> {
        let mut target = Vec::with_capacity(self.classes.len());
        for name in &self.classes {
            let mut idx = name.split('|').map(|id| merged.class_of(id));
            let first = idx.next().flatten();
            match first {
                Some(k) if idx.all(|j| j == Some(k)) => target.push(k),
                _ => return Err(Error::format(path, format!("column {name:?} is not a scored class"))),
            }
        }
        let k = merged.dim();
        if let Some(missing) = (0..k).find(|c| !target.contains(c)) {
            return Err(Error::format(path, format!("no column for class {:?}", merged.matrix.labels()[missing])));
        }
        Ok(self
            .rows
            .iter()
            .map(|row| {
                let mut out = vec![f64::NEG_INFINITY; k];
                for (&c, &v) in target.iter().zip(row) {
                    out[c] = out[c].max(v);
                }
                out
            })
            .collect())
    }
}

/// Discrete challenge score of a probability table against a binary truth
/// table, both aligned to the merged classes of `weights`.
pub fn score_tables(
    truth_path: &Path,
    pred_path: &Path,
    weights: &WeightMatrix,
    threshold: f64,
    normalization: Normalization,
) -> Result<f64> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Usage(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    let merged = merge_identical_classes(weights);
    let truth = LabelTable::read(truth_path)?.align(&merged, truth_path)?;
    let pred = LabelTable::read(pred_path)?.align(&merged, pred_path)?;
    if truth.iter().flatten().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::format(truth_path, "truth values must be 0 or 1"));
    }
    if pred.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::format(pred_path, "predictions must lie in [0, 1]"));
    }
    let binary: Vec<Vec<f64>> = pred.iter().map(|p| predict(p, threshold)).collect();
    Ok(discrete_challenge_score(&truth, &binary, &merged.matrix, normalization)?)
}
