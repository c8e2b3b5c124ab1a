//! Binary state snapshots and run checkpoints.
//!
//! Layout: 8-byte magic, little-endian `u64` header length, JSON header,
//! then the fields' components as little-endian `f64` in header order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnostics::MonitorProgress;
use crate::error::{Error, Result};
use crate::evolver::State;
use crate::grid::{Field, GridSpec, PeriodicGrid};

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"BWMFLD01";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"BWMCKP01";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SnapshotHeader {
    grid: GridSpec,
    components: usize,
    t: f64,
}

/// Everything needed to continue a run on its original step grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config_hash: String,
    /// Resolved configuration as TOML.
    pub config: String,
    pub grid: GridSpec,
    pub components: usize,
    pub step: usize,
    pub total_steps: usize,
    pub t0: f64,
    pub dt: f64,
    pub t: f64,
    pub t_initial: f64,
    pub monitor: MonitorProgress,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub state: State,
    pub initial: State,
}

fn write_container(path: &Path, magic: &[u8; 8], header: &[u8], fields: &[&Field]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(header);
    for f in fields {
        for c in &f.comps {
            for x in c {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

fn read_container(path: &Path) -> Result<([u8; 8], Vec<u8>, Vec<f64>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 16 {
        return Err(Error::Format(format!("{}: truncated header", path.display())));
    }
    let magic: [u8; 8] = bytes[..8].try_into().expect("8 bytes");
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..16 + len).ok_or_else(|| Error::Format(format!("{}: truncated header", path.display())))?;
    let rest = &bytes[16 + len..];
    if rest.len() % 8 != 0 {
        return Err(Error::Format(format!("{}: ragged data section", path.display())));
    }
    let data = rest.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok((magic, body.to_vec(), data))
}

fn take_fields(grid: &PeriodicGrid, components: usize, data: &[f64], count: usize) -> Result<Vec<Field>> {
    let n = grid.len();
    if data.len() != count * components * n {
        return Err(Error::Format(format!(
            "expected {} values, found {}",
            count * components * n,
            data.len()
        )));
    }
    data.chunks_exact(components * n)
        .map(|chunk| Field::from_components(grid, chunk.chunks_exact(n).map(|c| c.to_vec()).collect()))
        .collect()
}

pub fn write_state(path: &Path, state: &State) -> Result<()> {
    let header = SnapshotHeader { grid: state.grid().spec(), components: state.u.num_components(), t: state.t };
    write_container(path, SNAPSHOT_MAGIC, &serde_json::to_vec(&header)?, &[&state.u, &state.u_t])
}

/// Read a snapshot, or the current state of a checkpoint.
pub fn read_state(path: &Path) -> Result<State> {
    let (magic, header, data) = read_container(path)?;
    match &magic {
        m if m == SNAPSHOT_MAGIC => {
            let h: SnapshotHeader = serde_json::from_slice(&header)?;
            let grid = PeriodicGrid::from_spec(&h.grid)?;
            let mut f = take_fields(&grid, h.components, &data, 2)?.into_iter();
            State::new(f.next().expect("two fields"), f.next().expect("two fields"), h.t)
        }
        m if m == CHECKPOINT_MAGIC => Ok(read_checkpoint(path)?.state),
        _ => Err(Error::Format(format!("{}: unknown file type", path.display()))),
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let s = &ckpt.state;
    let i = &ckpt.initial;
    write_container(path, CHECKPOINT_MAGIC, &serde_json::to_vec(&ckpt.header)?, &[&s.u, &s.u_t, &i.u, &i.u_t])
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let (magic, header, data) = read_container(path)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("{}: not a checkpoint", path.display())));
    }
    let h: CheckpointHeader = serde_json::from_slice(&header)?;
    let grid = PeriodicGrid::from_spec(&h.grid)?;
    let mut f = take_fields(&grid, h.components, &data, 4)?.into_iter();
    let mut next = || f.next().expect("four fields");
    let state = State::new(next(), next(), h.t)?;
    let initial = State::new(next(), next(), h.t_initial)?;
    Ok(Checkpoint { header: h, state, initial })
}

/// Pretty JSON to `path`, creating parent directories.
pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}
