//! Named-tensor checkpoint archive.
//!
//! Layout: magic "MFCK", u32 LE format version, u64 LE entry count; then per
//! entry: u32 LE name length, UTF-8 name, u32 LE rank, u64 LE dims, raw f32
//! LE values. Optimizer state lives under the reserved "opt/" name prefix.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{MatteError, Result};

pub const MAGIC: [u8; 4] = *b"MFCK";
pub const VERSION: u32 = 1;
/// Reserved prefix for optimizer state entries.
pub const OPT_PREFIX: &str = "opt/";
/// Reserved prefix for model-configuration entries.
pub const META_PREFIX: &str = "meta/";

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub dims: Vec<u64>,
    pub data: Vec<f32>,
}

impl CheckpointEntry {
    pub fn new(name: impl Into<String>, dims: Vec<u64>, data: Vec<f32>) -> Self {
        CheckpointEntry {
            name: name.into(),
            dims,
            data,
        }
    }
}

pub fn save(path: &Path, entries: &[CheckpointEntry]) -> Result<()> {
    let file = File::create(path).map_err(|e| MatteError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| MatteError::io(path, e);
    w.write_all(&MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(entries.len() as u64).to_le_bytes()).map_err(io)?;
    for entry in entries {
        let expected: u64 = entry.dims.iter().product();
        if expected != entry.data.len() as u64 {
            return Err(MatteError::Data(format!(
                "checkpoint entry {}: dims {:?} do not match {} values",
                entry.name,
                entry.dims,
                entry.data.len()
            )));
        }
        let name = entry.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(name).map_err(io)?;
        w.write_all(&(entry.dims.len() as u32).to_le_bytes()).map_err(io)?;
        for d in &entry.dims {
            w.write_all(&d.to_le_bytes()).map_err(io)?;
        }
        for v in &entry.data {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<CheckpointEntry>> {
    let file = File::open(path).map_err(|e| MatteError::io(path, e))?;
    let mut r = BufReader::new(file);

    fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &Path) -> Result<()> {
        r.read_exact(buf).map_err(|e| MatteError::io(path, e))
    }
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, path)?;
    if magic != MAGIC {
        return Err(MatteError::Data(format!(
            "{}: not a checkpoint file (bad magic {:?})",
            path.display(),
            magic
        )));
    }
    let mut u32buf = [0u8; 4];
    read_exact(&mut r, &mut u32buf, path)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(MatteError::Data(format!(
            "{}: unsupported checkpoint version {version}",
            path.display()
        )));
    }
    let mut u64buf = [0u8; 8];
    read_exact(&mut r, &mut u64buf, path)?;
    let count = u64::from_le_bytes(u64buf);

    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        read_exact(&mut r, &mut u32buf, path)?;
        let name_len = u32::from_le_bytes(u32buf) as usize;
        let mut name = vec![0u8; name_len];
        read_exact(&mut r, &mut name, path)?;
        let name = String::from_utf8(name)
            .map_err(|_| MatteError::Data(format!("{}: invalid UTF-8 name", path.display())))?;
        read_exact(&mut r, &mut u32buf, path)?;
        let rank = u32::from_le_bytes(u32buf) as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            read_exact(&mut r, &mut u64buf, path)?;
            dims.push(u64::from_le_bytes(u64buf));
        }
        let numel: u64 = dims.iter().product();
        let mut data = Vec::with_capacity(numel as usize);
        for _ in 0..numel {
            read_exact(&mut r, &mut u32buf, path)?;
            data.push(f32::from_le_bytes(u32buf));
        }
        entries.push(CheckpointEntry { name, dims, data });
    }
    Ok(entries)
}
