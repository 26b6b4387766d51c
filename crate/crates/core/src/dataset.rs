//! Trajectory datasets and the generation manifest with its train/val/test
//! split.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::trajectory::{payload_checksum, Trajectory};

/// A bag of trajectories sharing geometry conventions.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn new(trajectories: Vec<Trajectory>) -> Self {
        Self { trajectories }
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Median spacing between neighboring nodes along the beam, taken from
    /// the first trajectory. This is the length unit the connectivity radius
    /// multiplies.
    pub fn element_spacing(&self) -> Result<f64> {
        let traj = self.trajectories.first().ok_or(CoreError::EmptyDataset)?;
        let mut xs: Vec<f64> = traj.rest_positions.iter().map(|p| p[0]).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut gaps: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).filter(|&g| g > 0.0).collect();
        if gaps.is_empty() {
            return Err(CoreError::InvalidGeometry(
                "cannot infer element spacing from a single position".into(),
            ));
        }
        gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(gaps[gaps.len() / 2])
    }

    /// Largest per-step displacement increment across all trajectories; the
    /// reference scale for velocity noise.
    pub fn max_step_increment(&self) -> f64 {
        self.trajectories
            .iter()
            .map(|t| t.max_step_increment())
            .fold(0.0, f64::max)
    }

    /// Largest displacement magnitude across all trajectories.
    pub fn max_displacement(&self) -> f64 {
        self.trajectories
            .iter()
            .map(|t| t.max_displacement())
            .fold(0.0, f64::max)
    }

    /// Largest second-difference magnitude across all trajectories.
    pub fn max_second_difference(&self) -> f64 {
        self.trajectories
            .iter()
            .map(|t| t.max_second_difference())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitRole {
    Train,
    Val,
    Test,
}

impl SplitRole {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitRole::Train),
            "val" => Ok(SplitRole::Val),
            "test" => Ok(SplitRole::Test),
            other => Err(CoreError::Config(format!("unknown split role '{other}'"))),
        }
    }
}

impl fmt::Display for SplitRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SplitRole::Train => "train",
            SplitRole::Val => "val",
            SplitRole::Test => "test",
        };
        f.write_str(s)
    }
}

/// Role assignment for k generated trajectories: the last two become
/// validation and test, the rest train. Degenerate cases: a single trajectory
/// is test-only (the caller should warn), two trajectories split train/test.
pub fn split_roles(count: usize) -> Vec<SplitRole> {
    match count {
        0 => Vec::new(),
        1 => vec![SplitRole::Test],
        2 => vec![SplitRole::Train, SplitRole::Test],
        n => {
            let mut roles = vec![SplitRole::Train; n - 2];
            roles.push(SplitRole::Val);
            roles.push(SplitRole::Test);
            roles
        }
    }
}

/// One manifest line describing a generated trajectory file.
#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub file: String,
    pub role: SplitRole,
    pub actuator_pos_m: f64,
    pub checksum: u64,
    pub nodes: usize,
    pub steps: usize,
}

/// Tab-separated manifest written next to generated trajectory files.
#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.tsv";

impl Manifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::from("file\trole\tactuator_pos_m\tchecksum\tnodes\tsteps\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{:e}\t{:016x}\t{}\t{}\n",
                e.file, e.role, e.actuator_pos_m, e.checksum, e.nodes, e.steps
            ));
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines.next().unwrap_or("");
        if !header.starts_with("file\t") {
            return Err(CoreError::Format {
                offset: 0,
                message: format!("unexpected manifest header '{header}'"),
            });
        }
        let mut entries = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 6 {
                return Err(CoreError::Format {
                    offset: (lineno + 2) as u64,
                    message: format!("manifest line has {} columns, expected 6", cols.len()),
                });
            }
            entries.push(ManifestEntry {
                file: cols[0].to_string(),
                role: SplitRole::parse(cols[1])?,
                actuator_pos_m: cols[2]
                    .parse()
                    .map_err(|e| CoreError::Config(format!("bad actuator position: {e}")))?,
                checksum: u64::from_str_radix(cols[3], 16)
                    .map_err(|e| CoreError::Config(format!("bad checksum: {e}")))?,
                nodes: cols[4]
                    .parse()
                    .map_err(|e| CoreError::Config(format!("bad node count: {e}")))?,
                steps: cols[5]
                    .parse()
                    .map_err(|e| CoreError::Config(format!("bad step count: {e}")))?,
            });
        }
        Ok(Self { entries })
    }

    pub fn lookup(&self, file_name: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.file == file_name)
    }
}

/// Load a generated dataset directory into (train, val, test) sets according
/// to its manifest, verifying checksums along the way.
pub fn load_split(dir: &Path) -> Result<(Dataset, Dataset, Dataset)> {
    let manifest = Manifest::read(&dir.join(MANIFEST_FILE))?;
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for entry in &manifest.entries {
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path)?;
        let checksum = payload_checksum(&bytes);
        if checksum != entry.checksum {
            return Err(CoreError::Format {
                offset: 0,
                message: format!(
                    "checksum mismatch for {}: manifest {:016x}, file {:016x}",
                    entry.file, entry.checksum, checksum
                ),
            });
        }
        let traj = Trajectory::from_bytes(&bytes)?;
        match entry.role {
            SplitRole::Train => train.push(traj),
            SplitRole::Val => val.push(traj),
            SplitRole::Test => test.push(traj),
        }
    }
    Ok((Dataset::new(train), Dataset::new(val), Dataset::new(test)))
}
