use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::errors::{mean, median, std_dev};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub seed: u64,
    pub total_return: f64,
    pub normalized_return: Option<f64>,
    pub steps: usize,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRow {
    pub seed: u64,
    pub t: usize,
    pub pre_error: f64,
    pub post_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub method: String,
    pub family: String,
    pub scenario: String,
    pub split: String,
    pub config_hash: String,
    /// Environment steps used to train the method.
    pub env_steps: usize,
    pub m: usize,
    pub k: usize,
    pub de_lr: Option<f64>,
}

/// Returns and paired segment errors of one method on one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: ReportMeta,
    pub episodes: Vec<EpisodeRow>,
    pub segments: Vec<SegmentRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub meta: ReportMeta,
    pub episodes: usize,
    pub mean_return: f64,
    pub median_return: f64,
    pub std_return: f64,
    pub mean_normalized_return: Option<f64>,
    pub segments: usize,
    pub median_pre_error: f64,
    pub median_post_error: f64,
    pub fraction_improved: f64,
}

impl EvalReport {
    pub fn returns(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.total_return).collect()
    }

    pub fn mean_return(&self) -> f64 {
        mean(&self.returns())
    }

    /// Divides every return by `anchor` (the oracle's mean return).
    pub fn normalize(&mut self, anchor: f64) {
        for e in &mut self.episodes {
            e.normalized_return = Some(e.total_return / anchor);
        }
    }

    pub fn summary(&self) -> Summary {
        let r = self.returns();
        let pre: Vec<f64> = self.segments.iter().map(|s| s.pre_error).collect();
        let post: Vec<f64> = self.segments.iter().map(|s| s.post_error).collect();
        let norm: Option<Vec<f64>> = self.episodes.iter().map(|e| e.normalized_return).collect();
        let improved = self.segments.iter().filter(|s| s.post_error < s.pre_error).count();
        Summary {
            meta: self.meta.clone(),
            episodes: r.len(),
            mean_return: mean(&r),
            median_return: median(&r),
            std_return: std_dev(&r),
            mean_normalized_return: norm.filter(|v| !v.is_empty()).map(|v| mean(&v)),
            segments: self.segments.len(),
            median_pre_error: median(&pre),
            median_post_error: median(&post),
            fraction_improved: if post.is_empty() {
                f64::NAN
            } else {
                improved as f64 / post.len() as f64
            },
        }
    }

    pub fn stem(&self) -> String {
        format!("{}_{}", self.meta.method.to_lowercase().replace(['+', '-'], "_"), self.meta.scenario)
    }

    /// Writes `<stem>_episodes.csv`, `<stem>_segments.csv` and
    /// `<stem>_summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let stem = self.stem();
        let ep = dir.join(format!("{stem}_episodes.csv"));
        let seg = dir.join(format!("{stem}_segments.csv"));
        let sum = dir.join(format!("{stem}_summary.json"));
        write_csv(&ep, &self.episodes)?;
        write_csv(&seg, &self.segments)?;
        write_json(&sum, &self.summary())?;
        Ok(vec![ep, seg, sum])
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Artifact(format!("{}: {e}", path.display()))
}
