use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::environment::{EngagementState, Outcome};
use crate::selfplay::IterationMetrics;
use crate::Side;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io { path: path.to_path_buf(), source }
}

/// One `metrics.jsonl` record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsLine {
    pub iter: u64,
    pub wins: usize,
    pub losses: usize,
    pub draws: usize,
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub seconds: f64,
}

impl From<&IterationMetrics> for MetricsLine {
    fn from(m: &IterationMetrics) -> Self {
        Self {
            iter: m.iter,
            wins: m.wins,
            losses: m.losses,
            draws: m.draws,
            surrogate: m.ppo.surrogate,
            value_loss: m.ppo.value_loss,
            entropy: m.ppo.entropy,
            clip_fraction: m.ppo.clip_fraction,
            seconds: m.eval_sim_seconds,
        }
    }
}

/// Line-per-record JSON sink, flushed after every record.
pub struct MetricsWriter {
    path: PathBuf,
    file: File,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self, OutputError> {
        let file = File::create(path).map_err(io_err(path))?;
        Ok(Self { path: path.to_path_buf(), file })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<(), OutputError> {
        let mut line = serde_json::to_string(record).expect("metrics serialize");
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(io_err(&self.path))?;
        self.file.flush().map_err(io_err(&self.path))
    }

    pub fn write_metrics(&mut self, m: &IterationMetrics) -> Result<(), OutputError> {
        self.write(&MetricsLine::from(m))
    }
}

pub const TRAJECTORY_HEADER: [&str; 12] =
    ["t", "side", "x", "y", "z", "v", "gamma", "phi", "missile_x", "missile_y", "missile_z", "outcome"];

/// One aircraft at one physics sub-step, with its own missile if airborne.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub side: Side,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub v: f64,
    pub gamma: f64,
    pub phi: f64,
    pub missile: Option<[f64; 3]>,
    pub outcome: Outcome,
}

impl TrajectoryRow {
    pub fn from_state(s: &EngagementState) -> [TrajectoryRow; 2] {
        [Side::Blue, Side::Red].map(|side| {
            let a = s.aircraft(side);
            TrajectoryRow {
                t: s.t(),
                side,
                x: a.x,
                y: a.y,
                z: a.z,
                v: a.v,
                gamma: a.gamma,
                phi: a.phi,
                missile: s.missile(side).filter(|m| m.in_flight()).map(|m| [m.xm, m.ym, m.zm]),
                outcome: s.outcome,
            }
        })
    }

    fn fields(&self) -> Vec<String> {
        let num = |x: f64| format!("{x:.16e}");
        let mut out = vec![num(self.t), self.side.as_str().to_string()];
        out.extend([self.x, self.y, self.z, self.v, self.gamma, self.phi].map(num));
        match self.missile {
            Some(p) => out.extend(p.map(num)),
            None => out.extend(["", "", ""].map(String::from)),
        }
        out.push(self.outcome.as_str().to_string());
        out
    }
}

pub struct TrajectoryWriter {
    path: PathBuf,
    inner: csv::Writer<BufWriter<File>>,
}

impl TrajectoryWriter {
    pub fn create(path: &Path) -> Result<Self, OutputError> {
        let file = File::create(path).map_err(io_err(path))?;
        let mut inner = csv::Writer::from_writer(BufWriter::new(file));
        inner
            .write_record(TRAJECTORY_HEADER)
            .map_err(|source| OutputError::Csv { path: path.to_path_buf(), source })?;
        Ok(Self { path: path.to_path_buf(), inner })
    }

    pub fn write_rows(&mut self, rows: &[TrajectoryRow]) -> Result<(), OutputError> {
        for r in rows {
            self.inner
                .write_record(r.fields())
                .map_err(|source| OutputError::Csv { path: self.path.clone(), source })?;
        }
        self.inner.flush().map_err(io_err(&self.path))
    }
}
