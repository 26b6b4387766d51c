//! Time-indexed nodal displacement trajectories and their binary file format.
//!
//! Displacements are stored in node-fixed local frames: each node's origin is
//! its rest position, so stored values are small (micrometer-scale) numbers
//! and finite differences between frames do not cancel catastrophically.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, Array3, ArrayView2};

use crate::error::{CoreError, Result};

/// 8-byte magic at the start of every trajectory file.
pub const TRAJECTORY_MAGIC: &[u8; 8] = b"GNSSTRJ1";

/// Node type ids shared across the pipeline.
pub const NODE_TYPE_FREE: u32 = 0;
pub const NODE_TYPE_ACTUATOR: u32 = 1;
pub const NODE_TYPE_CLAMPED: u32 = 2;

/// A simulated (or predicted) trajectory: rest geometry, node types and
/// per-step 2D displacements from rest.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Physical timestep between stored frames, in seconds.
    pub dt_ph: f64,
    /// Rest position of every node, in meters.
    pub rest_positions: Vec<[f64; 2]>,
    /// Per-node type id (free / actuator / clamped).
    pub node_types: Vec<u32>,
    /// Node with prescribed motion, derived from `node_types`.
    pub actuator_node: usize,
    /// Local displacements, shape (T, N, 2).
    disp: Array3<f64>,
}

impl Trajectory {
    pub fn new(
        dt_ph: f64,
        rest_positions: Vec<[f64; 2]>,
        node_types: Vec<u32>,
        disp: Array3<f64>,
    ) -> Result<Self> {
        let n = rest_positions.len();
        if node_types.len() != n {
            return Err(CoreError::DimMismatch {
                expected: n,
                got: node_types.len(),
            });
        }
        if disp.shape()[1] != n || disp.shape()[2] != 2 {
            return Err(CoreError::ShapeMismatch(format!(
                "displacement array {:?} does not match {} nodes x 2 components",
                disp.shape(),
                n
            )));
        }
        if !(dt_ph > 0.0) {
            return Err(CoreError::InvalidArgument(format!(
                "dt_ph must be positive, got {dt_ph}"
            )));
        }
        let actuator_node = node_types
            .iter()
            .position(|&t| t == NODE_TYPE_ACTUATOR)
            .ok_or_else(|| {
                CoreError::InvalidArgument("trajectory has no actuator node".into())
            })?;
        Ok(Self {
            dt_ph,
            rest_positions,
            node_types,
            actuator_node,
            disp,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.rest_positions.len()
    }

    pub fn num_steps(&self) -> usize {
        self.disp.shape()[0]
    }

    /// Displacement frame at step `t`, shape (N, 2).
    pub fn frame(&self, t: usize) -> ArrayView2<'_, f64> {
        self.disp.index_axis(ndarray::Axis(0), t)
    }

    pub fn displacements(&self) -> &Array3<f64> {
        &self.disp
    }

    /// Second difference of displacements at step `t`:
    /// `u[t+1] - 2 u[t] + u[t-1]`, shape (N, 2). This is the non-dimensional
    /// acceleration target used throughout training.
    pub fn second_difference(&self, t: usize) -> Result<Array2<f64>> {
        if t == 0 || t + 1 >= self.num_steps() {
            return Err(CoreError::InvalidArgument(format!(
                "second difference needs 1 <= t <= T-2, got t={t}, T={}",
                self.num_steps()
            )));
        }
        let prev = self.frame(t - 1);
        let cur = self.frame(t);
        let next = self.frame(t + 1);
        Ok(&next - &(&cur * 2.0) + &prev)
    }

    /// Largest per-step Euclidean displacement increment over the whole
    /// trajectory. Used as the reference scale for training noise.
    pub fn max_step_increment(&self) -> f64 {
        let mut max = 0.0f64;
        for t in 1..self.num_steps() {
            let prev = self.frame(t - 1);
            let cur = self.frame(t);
            for i in 0..self.num_nodes() {
                let dx = cur[[i, 0]] - prev[[i, 0]];
                let dy = cur[[i, 1]] - prev[[i, 1]];
                max = max.max((dx * dx + dy * dy).sqrt());
            }
        }
        max
    }

    /// Largest second-difference magnitude (the acceleration scale) over the
    /// whole trajectory.
    pub fn max_second_difference(&self) -> f64 {
        let mut max = 0.0f64;
        for t in 1..self.num_steps().saturating_sub(1) {
            let prev = self.frame(t - 1);
            let cur = self.frame(t);
            let next = self.frame(t + 1);
            for i in 0..self.num_nodes() {
                let dx = next[[i, 0]] - 2.0 * cur[[i, 0]] + prev[[i, 0]];
                let dy = next[[i, 1]] - 2.0 * cur[[i, 1]] + prev[[i, 1]];
                max = max.max((dx * dx + dy * dy).sqrt());
            }
        }
        max
    }

    /// Largest displacement magnitude over the whole trajectory.
    pub fn max_displacement(&self) -> f64 {
        let mut max = 0.0f64;
        for t in 0..self.num_steps() {
            let f = self.frame(t);
            for i in 0..self.num_nodes() {
                let m = (f[[i, 0]] * f[[i, 0]] + f[[i, 1]] * f[[i, 1]]).sqrt();
                max = max.max(m);
            }
        }
        max
    }

    /// Serialize to the GNSSTRJ1 binary layout (little-endian).
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.num_nodes() as u32;
        let t = self.num_steps() as u32;
        let mut buf = Vec::with_capacity(32 + self.disp.len() * 8);
        buf.extend_from_slice(TRAJECTORY_MAGIC);
        buf.write_u32::<LittleEndian>(n).unwrap();
        buf.write_u32::<LittleEndian>(t).unwrap();
        buf.write_u32::<LittleEndian>(2).unwrap();
        buf.write_f64::<LittleEndian>(self.dt_ph).unwrap();
        for p in &self.rest_positions {
            buf.write_f64::<LittleEndian>(p[0]).unwrap();
            buf.write_f64::<LittleEndian>(p[1]).unwrap();
        }
        for &ty in &self.node_types {
            buf.write_u32::<LittleEndian>(ty).unwrap();
        }
        for _ in 0..n {
            buf.write_u32::<LittleEndian>(0).unwrap(); // reserved
        }
        for &v in self.disp.iter() {
            buf.write_f64::<LittleEndian>(v).unwrap();
        }
        buf
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = SectionReader::new(bytes);
        r.section = "magic";
        let mut magic = [0u8; 8];
        r.read_exact_tracked(&mut magic)?;
        if &magic != TRAJECTORY_MAGIC {
            return Err(CoreError::Format {
                offset: 0,
                message: format!("bad magic {:?}, expected {:?}", magic, TRAJECTORY_MAGIC),
            });
        }
        r.section = "header";
        let n = r.read_u32()? as usize;
        let t = r.read_u32()? as usize;
        let d = r.read_u32()? as usize;
        if d != 2 {
            return Err(CoreError::Format {
                offset: r.offset,
                message: format!("unsupported spatial dimension {d}, expected 2"),
            });
        }
        let dt_ph = r.read_f64()?;
        r.section = "rest positions";
        let mut rest = Vec::with_capacity(n);
        for _ in 0..n {
            rest.push([r.read_f64()?, r.read_f64()?]);
        }
        r.section = "node types";
        let mut types = Vec::with_capacity(n);
        for _ in 0..n {
            types.push(r.read_u32()?);
        }
        r.section = "reserved";
        for _ in 0..n {
            r.read_u32()?;
        }
        r.section = "displacements";
        let mut disp = Vec::with_capacity(t * n * 2);
        for _ in 0..t * n * 2 {
            disp.push(r.read_f64()?);
        }
        let disp = Array3::from_shape_vec((t, n, 2), disp)
            .map_err(|e| CoreError::ShapeMismatch(e.to_string()))?;
        Trajectory::new(dt_ph, rest, types, disp)
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

/// FNV-1a 64-bit checksum over everything after the magic. Printed by
/// `inspect` and recorded in dataset manifests for tamper detection.
pub fn payload_checksum(file_bytes: &[u8]) -> u64 {
    let payload = if file_bytes.len() >= 8 {
        &file_bytes[8..]
    } else {
        file_bytes
    };
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in payload {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

struct SectionReader<'a> {
    bytes: &'a [u8],
    offset: u64,
    section: &'static str,
}

impl<'a> SectionReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self {
            bytes,
            offset: 0,
            section: "",
        }
    }

    fn read_exact_tracked(&mut self, out: &mut [u8]) -> Result<()> {
        let end = self.offset as usize + out.len();
        if end > self.bytes.len() {
            return Err(CoreError::Format {
                offset: self.offset,
                message: format!("file truncated in section '{}'", self.section),
            });
        }
        out.copy_from_slice(&self.bytes[self.offset as usize..end]);
        self.offset = end as u64;
        Ok(())
    }

    fn read_u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact_tracked(&mut b)?;
        Ok((&b[..]).read_u32::<LittleEndian>().unwrap())
    }

    fn read_f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.read_exact_tracked(&mut b)?;
        Ok((&b[..]).read_f64::<LittleEndian>().unwrap())
    }
}
