//! JSON-lines trajectory logs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EnvError, GlobalState};

/// One environment step as written to a trajectory file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub episode: usize,
    pub step: usize,
    /// State before the joint action was applied.
    pub state: GlobalState,
    pub joint_action: Vec<usize>,
    pub reward: f64,
    pub done: bool,
}

pub struct TrajectoryWriter {
    out: BufWriter<File>,
    written: usize,
}

impl TrajectoryWriter {
    pub fn create(path: &Path) -> Result<Self, EnvError> {
        Ok(Self {
            out: BufWriter::new(File::create(path)?),
            written: 0,
        })
    }

    pub fn write(&mut self, record: &TrajectoryRecord) -> Result<(), EnvError> {
        serde_json::to_writer(&mut self.out, record).map_err(std::io::Error::from)?;
        self.out.write_all(b"\n")?;
        self.written += 1;
        Ok(())
    }

    pub fn written(&self) -> usize {
        self.written
    }

    pub fn finish(mut self) -> Result<usize, EnvError> {
        self.out.flush()?;
        Ok(self.written)
    }
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryRecord>, EnvError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| EnvError::Io(e.into())))
        .collect()
}
