use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// One environment step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub s_next: Vec<f64>,
    #[serde(rename = "env_episode_id")]
    pub episode: u64,
    pub t: usize,
}

impl Transition {
    pub fn delta(&self) -> Vec<f64> {
        self.s_next.iter().zip(&self.s).map(|(b, a)| b - a).collect()
    }

    pub fn check(&self, state_dim: usize, action_dim: usize) -> Result<()> {
        check_dim("transition state", state_dim, self.s.len())?;
        check_dim("transition next state", state_dim, self.s_next.len())?;
        check_dim("transition action", action_dim, self.a.len())
    }
}

/// Writes one JSON record per line.
pub fn write_ndjson<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = BufWriter::new(f);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn append_ndjson<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = BufWriter::new(f);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ndjson<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = std::fs::File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Artifact(format!("missing file {}", path.display()))
        } else {
            Error::Io(e)
        }
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            Error::Artifact(format!("{}:{}: {e}", path.display(), i + 1))
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ndjson_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.ndjson");
        let data = vec![
            Transition {
                s: vec![0.1, 1.0 / 3.0],
                a: vec![-0.7],
                s_next: vec![std::f64::consts::PI, 1e-300],
                episode: 4,
                t: 9,
            };
            3
        ];
        write_ndjson(&p, &data[..2]).unwrap();
        append_ndjson(&p, &data[2..]).unwrap();
        let back: Vec<Transition> = read_ndjson(&p).unwrap();
        assert_eq!(back, data);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.lines().next().unwrap().contains("\"env_episode_id\":4"));
    }
}
