//! Result tables: CSV with floats at 4 significant digits plus a JSON twin
//! holding the same rows at full precision.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::pipeline::DetectionCell;
use crate::shift::{ProtocolResult, ScatterPoint};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Num(v) => sig4(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// A rectangular table with a fixed column order.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::Validation(format!(
                "row has {} cells, header has {}",
                row.len(),
                self.header.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Format(e.to_string());
        w.write_record(&self.header).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::csv)).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    /// Rows as JSON objects keyed by column name, floats at full precision.
    pub fn to_json(&self) -> Result<String> {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                let obj: Map<String, Value> = self
                    .header
                    .iter()
                    .zip(row)
                    .map(|(h, c)| Ok((h.clone(), serde_json::to_value(c)?)))
                    .collect::<Result<_>>()?;
                Ok(Value::Object(obj))
            })
            .collect::<Result<_>>()?;
        Ok(serde_json::to_string_pretty(&rows)? + "\n")
    }

    /// Writes `<stem>.csv` and `<stem>.json` under `dir` and returns both paths.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
        if self.rows.is_empty() {
            return Err(Error::precondition(format!("report {stem} has no rows")));
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join(format!("{stem}.csv"));
        let json_path = dir.join(format!("{stem}.json"));
        fs::write(&csv_path, self.to_csv()?).map_err(|e| Error::io(&csv_path, e))?;
        fs::write(&json_path, self.to_json()?).map_err(|e| Error::io(&json_path, e))?;
        Ok((csv_path, json_path))
    }
}

/// Formats a float with 4 significant digits, switching to exponent notation
/// outside `[1e-4, 1e6)`.
pub fn sig4(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if !(1e-4..1e6).contains(&a) {
        return format!("{v:.3e}");
    }
    // Round first so that 9.9996 becomes 10.00 rather than 9.9996 → "10.000".
    let rounded: f64 = format!("{v:.3e}").parse().expect("valid float");
    let exp = rounded.abs().log10().floor() as i32;
    let decimals = (3 - exp).max(0) as usize;
    format!("{rounded:.decimals$}")
}

/// `mean(std)` with one decimal each.
pub fn mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.1}({std:.1})")
}

/// One row per (scorer, ID, OOD) cell with the mean and std AUROC.
pub fn detection_table(cells: &[DetectionCell]) -> Result<Table> {
    let mut t = Table::new(&["scorer", "id", "ood", "auroc_mean", "auroc_std", "reps"]);
    for c in cells {
        t.push(vec![
            c.scorer.as_str().into(),
            c.id.as_str().into(),
            c.ood.as_str().into(),
            c.mean().into(),
            c.std().into(),
            c.aurocs.len().into(),
        ])?;
    }
    Ok(t)
}

/// ID/OOD grid: rows are (method, OOD dataset),
/// columns are ID datasets, cells are AUROC ×100 as `mean(std)`, and the
/// diagonal is `-`.
pub fn detection_grid(cells: &[DetectionCell], datasets: &[&str]) -> Result<Table> {
    let mut header = vec!["method", "ood"];
    header.extend_from_slice(datasets);
    let mut t = Table::new(&header);
    let mut scorers: Vec<&str> = Vec::new();
    for c in cells {
        if !scorers.contains(&c.scorer.as_str()) {
            scorers.push(&c.scorer);
        }
    }
    for s in scorers {
        for &ood in datasets {
            let mut row: Vec<Cell> = vec![s.into(), ood.into()];
            for &id in datasets {
                if id == ood {
                    row.push("-".into());
                    continue;
                }
                let cell = cells
                    .iter()
                    .find(|c| c.scorer == s && c.id == id && c.ood == ood)
                    .ok_or_else(|| Error::Validation(format!("missing grid cell {s} {id}/{ood}")))?;
                row.push(mean_std(100.0 * cell.mean(), 100.0 * cell.std()).into());
            }
            t.push(row)?;
        }
    }
    Ok(t)
}

/// Error-prediction quality per scorer: `mean(std)` display strings plus
/// the raw numbers.
pub fn shift_table(results: &[ProtocolResult]) -> Result<Table> {
    let mut t = Table::new(&[
        "method",
        "MAE",
        "RMSE",
        "mae_mean",
        "mae_std",
        "rmse_mean",
        "rmse_std",
        "reps",
    ]);
    for r in results {
        t.push(vec![
            r.scorer.as_str().into(),
            mean_std(r.mae_mean, r.mae_std).into(),
            mean_std(r.rmse_mean, r.rmse_std).into(),
            r.mae_mean.into(),
            r.mae_std.into(),
            r.rmse_mean.into(),
            r.rmse_std.into(),
            r.repetitions.len().into(),
        ])?;
    }
    Ok(t)
}

/// Mean OOD score vs true error for every dataset of a shift run.
pub fn scatter_table(scorer: &str, points: &[ScatterPoint]) -> Result<Table> {
    let mut t = Table::new(&["scorer", "dataset", "role", "s_bar", "true_error"]);
    for p in points {
        t.push(vec![
            scorer.into(),
            p.dataset.as_str().into(),
            p.role.as_str().into(),
            p.s_bar.into(),
            p.true_error.into(),
        ])?;
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(scorer: &str, id: &str, ood: &str, aurocs: &[f64]) -> DetectionCell {
        DetectionCell {
            scorer: scorer.into(),
            id: id.into(),
            ood: ood.into(),
            aurocs: aurocs.to_vec(),
        }
    }

    #[test]
    fn four_significant_digits() {
        assert_eq!(sig4(0.987654), "0.9877");
        assert_eq!(sig4(12.3456), "12.35");
        assert_eq!(sig4(-3.0), "-3.000");
        assert_eq!(sig4(9.99996), "10.00");
        assert_eq!(sig4(1234.4), "1234");
        assert_eq!(sig4(0.0), "0");
        assert_eq!(sig4(1.5e-7), "1.500e-7");
        assert_eq!(sig4(f64::NAN), "NaN");
    }

    #[test]
    fn single_cell_gives_one_row_and_a_precise_twin() {
        let t = detection_table(&[cell("baseline", "a", "b", &[0.123456789])]).unwrap();
        let csv = t.to_csv().unwrap();
        assert_eq!(
            csv,
            "scorer,id,ood,auroc_mean,auroc_std,reps\nbaseline,a,b,0.1235,0,1\n"
        );
        let json: Value = serde_json::from_str(&t.to_json().unwrap()).unwrap();
        assert_eq!(json[0]["auroc_mean"], 0.123456789);
        assert_eq!(json[0]["reps"], 1);
    }

    #[test]
    fn grid_layout() {
        let names = ["d1", "d2", "d3"];
        let mut cells = Vec::new();
        for s in ["baseline", "cosine"] {
            for id in names {
                for ood in names.iter().filter(|&&o| o != id) {
                    cells.push(cell(s, id, ood, &[0.9, 0.92, 0.94]));
                }
            }
        }
        let t = detection_grid(&cells, &names).unwrap();
        assert_eq!(t.header, ["method", "ood", "d1", "d2", "d3"]);
        assert_eq!(t.rows.len(), 6);
        assert_eq!(t.rows[0][2], Cell::Text("-".into()));
        assert_eq!(t.rows[0][3], Cell::Text("92.0(2.0)".into()));
        assert!(detection_grid(&cells[1..], &names).is_err());
    }

    #[test]
    fn empty_report_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(Table::new(&["a"]).write(dir.path(), "x").is_err());
    }

    #[test]
    fn mismatched_row_is_rejected() {
        assert!(Table::new(&["a", "b"]).push(vec![1.0.into()]).is_err());
    }
}
