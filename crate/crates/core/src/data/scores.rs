use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-sample ID scores; larger means more in-distribution.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreVector {
    scores: Vec<f64>,
}

/// JSON metadata written next to a score CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSidecar {
    pub scorer: String,
    pub n: usize,
    pub resources: serde_json::Value,
    pub seeds: Vec<u64>,
}

impl ScoreVector {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::Validation(format!("non-finite score at index {i}")));
        }
        Ok(ScoreVector { scores })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.scores
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.scores
    }

    /// OOD scores, i.e. the negated ID scores.
    pub fn ood_scores(&self) -> Vec<f64> {
        self.scores.iter().map(|s| -s).collect()
    }

    /// Writes `index,id_score` rows. Values use Rust's shortest round-trip
    /// formatting so the CSV reproduces the scores exactly.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::with_capacity(16 * self.scores.len() + 16);
        out.push_str("index,id_score\n");
        for (i, s) in self.scores.iter().enumerate() {
            out.push_str(&format!("{i},{s}\n"));
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        if lines.next() != Some("index,id_score") {
            return Err(Error::Format(format!("{}: missing score CSV header", path.display())));
        }
        let scores = lines
            .enumerate()
            .map(|(i, line)| {
                let (idx, val) = line
                    .split_once(',')
                    .ok_or_else(|| Error::Format(format!("bad score row {line:?}")))?;
                if idx.parse::<usize>().ok() != Some(i) {
                    return Err(Error::Format(format!("row {i} has index {idx}")));
                }
                val.parse::<f64>().map_err(|e| Error::Format(format!("row {i}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(scores)
    }
}

impl ScoreSidecar {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ood_score_is_negation() {
        let s = ScoreVector::new(vec![0.5, -1.0, 0.0]).unwrap();
        assert_eq!(s.ood_scores(), vec![-0.5, 1.0, -0.0]);
    }

    #[test]
    fn rejects_nan() {
        assert!(ScoreVector::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let s = ScoreVector::new(vec![0.1 + 0.2, 1.0 / 3.0, -25.0, 1e-300]).unwrap();
        s.write_csv(&p).unwrap();
        assert_eq!(ScoreVector::read_csv(&p).unwrap(), s);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("index,id_score\n0,"));
    }
}
