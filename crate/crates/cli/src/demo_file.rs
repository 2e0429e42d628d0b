//! Binary demonstration files.
//!
//! Layout (all integers unsigned 32-bit little-endian, all floats 64-bit
//! little-endian):
//!
//! ```text
//! "MAPSDEMO"  magic, 8 bytes
//! version     currently 1
//! state_dim  action_dim  num_tasks  trajectory_count
//! repeated trajectory_count times:
//!   task_index  length
//!   length × (state_dim + action_dim) floats, state then action per step
//! ```
//!
//! Floats pass through untouched, so `read(write(x)) = x` bit-exactly.

use crate::{io_err, CliError, Result};
use maps_core::dataset::{DemoDataset, Trajectory};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"MAPSDEMO";
pub const VERSION: u32 = 1;

pub fn write_demos(path: &Path, demos: &DemoDataset) -> Result<()> {
    demos.validate()?;
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let wrap = |e| io_err(path, e);

    w.write_all(MAGIC).map_err(wrap)?;
    put_u32(&mut w, VERSION).map_err(wrap)?;
    put_u32(&mut w, demos.state_dim as u32).map_err(wrap)?;
    put_u32(&mut w, demos.action_dim as u32).map_err(wrap)?;
    put_u32(&mut w, demos.num_tasks() as u32).map_err(wrap)?;
    let count: usize = demos.tasks.iter().map(Vec::len).sum();
    put_u32(&mut w, count as u32).map_err(wrap)?;

    for (task, trajs) in demos.tasks.iter().enumerate() {
        for traj in trajs {
            put_u32(&mut w, task as u32).map_err(wrap)?;
            put_u32(&mut w, traj.len() as u32).map_err(wrap)?;
            for (state, action) in traj.states.iter().zip(&traj.actions) {
                for &v in state.iter().chain(action.iter()) {
                    w.write_all(&v.to_le_bytes()).map_err(wrap)?;
                }
            }
        }
    }
    w.flush().map_err(wrap)
}

pub fn read_demos(path: &Path) -> Result<DemoDataset> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(file);
    
    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic, path, "magic")?;
    if &magic != MAGIC {
        return Err(CliError::Format(format!(
            "{}: not a demo file (bad magic)", path.display()
        )));
    }
    let version = get_u32(&mut r, path, "version")?;
    if version != VERSION {
        return Err(CliError::Format(format!(
            "{}: unsupported demo file version {version} (expected {VERSION})", path.display()
        )));
    }
    let state_dim = get_u32(&mut r, path, "state_dim")? as usize;
    let action_dim = get_u32(&mut r, path, "action_dim")? as usize;
    let num_tasks = get_u32(&mut r, path, "num_tasks")? as usize;
    let count = get_u32(&mut r, path, "trajectory count")? as usize;
    if num_tasks == 0 {
        return Err(CliError::Format(format!("{}: zero tasks in header", path.display())));
    }

    let mut tasks: Vec<Vec<Trajectory>> = vec![Vec::new(); num_tasks];
    for t in 0..count {
        let task = get_u32(&mut r, path, "task index")? as usize;
        if task >= num_tasks {
            return Err(CliError::Format(format!(
                "{}: trajectory {t} has task index {task}, but header declares {num_tasks} tasks", path.display()
            )));
        }
        let length = get_u32(&mut r, path, "trajectory length")? as usize;
        let mut states = Vec::with_capacity(length);
        let mut actions = Vec::with_capacity(length);
        for _ in 0..length {
            states.push(get_f64s(&mut r, state_dim, path)?);
            actions.push(get_f64s(&mut r, action_dim, path)?);
        }
        tasks[task].push(Trajectory { states, actions });
    }

    let mut trailing = [0u8; 1];
    match r.read(&mut trailing) {
        Ok(0) => {}
        Ok(_) => {
            return Err(CliError::Format(format!(
                "{}: trailing bytes after declared payload", path.display()
            )))
        }
        Err(e) => return Err(io_err(path, e)),
    }

    let demos = DemoDataset {
        state_dim,
        action_dim,
        tasks,
    };
    demos
        .validate()
        .map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?;
    Ok(demos)
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], path: &Path, what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|_| {
        CliError::Format(format!(
            "{}: truncated while reading {what}",
            path.display()
        ))
    })
}

pub(crate) fn get_u32<R: Read>(r: &mut R, path: &Path, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, path, what)?;
    Ok(u32::from_le_bytes(buf))
}

pub(crate) fn get_f64s<R: Read>(r: &mut R, n: usize, path: &Path) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; 8 * n];
    read_exact(r, &mut bytes, path, "float payload")?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}
