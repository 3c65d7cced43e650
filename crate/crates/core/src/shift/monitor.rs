//! Windowed stream monitor: each non-overlapping window of `n` feature
//! vectors is treated as one incoming dataset, its mean score is mapped to a
//! predicted error and an alert is raised when that exceeds the target.

use serde::{Deserialize, Serialize};

use super::{DatasetScorer, Regressor};
use crate::data::{DatasetBundle, FeatureMatrix, Role};
use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorConfig {
    pub window: usize,
    /// Alert threshold on the predicted error, in percent.
    pub target: f64,
}

impl MonitorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::precondition("monitor window must hold at least one sample"));
        }
        if !(self.target > 0.0 && self.target < 100.0) {
            return Err(Error::precondition(format!(
                "target error must lie in (0, 100), got {}",
                self.target
            )));
        }
        Ok(())
    }
}

/// One output line of the monitor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorRecord {
    pub window: usize,
    pub n: usize,
    pub s_bar: f64,
    pub predicted_error: f64,
    pub alert: bool,
    /// The stream ended before this window filled up.
    pub partial: bool,
}

pub struct Monitor<'a> {
    regressor: &'a Regressor,
    scorer: &'a DatasetScorer,
    cfg: MonitorConfig,
    dim: usize,
    buffer: Vec<f32>,
    next_window: usize,
}

impl<'a> Monitor<'a> {
    pub fn new(regressor: &'a Regressor, scorer: &'a DatasetScorer, cfg: MonitorConfig) -> Result<Self> {
        cfg.validate()?;
        let dim = scorer.dim();
        Ok(Monitor {
            regressor,
            scorer,
            buffer: Vec::with_capacity(cfg.window * dim),
            cfg,
            dim,
            next_window: 0,
        })
    }

    fn emit(&mut self, partial: bool) -> Result<MonitorRecord> {
        let n = self.buffer.len() / self.dim;
        let features = FeatureMatrix::new(n, self.dim, std::mem::take(&mut self.buffer))?;
        let bundle = DatasetBundle::new(features, None, Role::Ood, None)?;
        let s_bar = self.scorer.dataset_score(&bundle)?;
        let predicted_error = self.regressor.predict_error(s_bar)?;
        let record = MonitorRecord {
            window: self.next_window,
            n,
            s_bar,
            predicted_error,
            alert: predicted_error > self.cfg.target,
            partial,
        };
        self.next_window += 1;
        self.buffer.reserve(self.cfg.window * self.dim);
        Ok(record)
    }

    /// Adds one feature vector; returns a record when it completes a window.
    pub fn push(&mut self, row: &[f32]) -> Result<Option<MonitorRecord>> {
        check_dim(self.dim, row.len())?;
        self.buffer.extend_from_slice(row);
        if self.buffer.len() == self.cfg.window * self.dim {
            self.emit(false).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Scores a trailing partial window, if any.
    pub fn finish(mut self) -> Result<Option<MonitorRecord>> {
        if self.buffer.is_empty() {
            Ok(None)
        } else {
            self.emit(true).map(Some)
        }
    }
}

/// Runs the monitor over a whole stream and collects the records in order.
pub fn monitor_stream<I>(
    regressor: &Regressor,
    scorer: &DatasetScorer,
    cfg: &MonitorConfig,
    stream: I,
) -> Result<Vec<MonitorRecord>>
where
    I: IntoIterator<Item = Result<Vec<f32>>>,
{
    let mut monitor = Monitor::new(regressor, scorer, cfg.clone())?;
    let mut out = Vec::new();
    for row in stream {
        if let Some(r) = monitor.push(&row?)? {
            out.push(r);
        }
    }
    out.extend(monitor.finish()?);
    Ok(out)
}
