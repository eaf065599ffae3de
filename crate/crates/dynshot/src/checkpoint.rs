//! Parameter checkpoints.
//!
//! Single little-endian file: magic `DYNP`, u32 version (1), u32 parameter
//! count; then per parameter: u16 name length, UTF-8 name, u8 rank, u32
//! extents, f64 data. Parameters are written in name order, so identical
//! registry contents produce identical bytes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::registry::ParamRegistry;

const MAGIC: &[u8; 4] = b"DYNP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn write_checkpoint(path: &Path, registry: &ParamRegistry) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(registry.len() as u32).to_le_bytes());
    for (name, entry) in registry.iter() {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > u16::MAX as usize {
            return Err(Error::Checkpoint(format!("parameter name too long: {name}")));
        }
        buf.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.push(entry.shape().len() as u8);
        for &extent in entry.shape() {
            buf.extend_from_slice(&(extent as u32).to_le_bytes());
        }
        for &v in entry.value() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<ParamRecord>> {
    let bytes = fs::read(path)?;
    let mut cursor = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if cursor.take(4)? != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: bad magic, not a DYNP file",
            path.display()
        )));
    }
    let version = cursor.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let count = cursor.u32()? as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = cursor.u16()? as usize;
        let name = String::from_utf8(cursor.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let rank = cursor.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cursor.u32()? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            let raw = cursor.take(8)?;
            data.push(f64::from_le_bytes(raw.try_into().unwrap()));
        }
        records.push(ParamRecord { name, shape, data });
    }
    if cursor.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "trailing bytes: file has {}, parsed {}",
            bytes.len(),
            cursor.pos
        )));
    }
    Ok(records)
}

/// Overwrite registry values from checkpoint records. The name sets must
/// match exactly and every shape must agree.
pub fn restore_into(registry: &mut ParamRegistry, records: &[ParamRecord]) -> Result<()> {
    if records.len() != registry.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} parameters, registry has {}",
            records.len(),
            registry.len()
        )));
    }
    for record in records {
        let entry = registry
            .entry(&record.name)
            .map_err(|_| Error::Checkpoint(format!("unknown parameter `{}`", record.name)))?;
        if entry.shape() != record.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "shape mismatch for `{}`: checkpoint {:?}, registry {:?}",
                record.name,
                record.shape,
                entry.shape()
            )));
        }
        registry.set_value(&record.name, &record.data)?;
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated file: wanted {} bytes at offset {}, have {}",
                n,
                self.pos,
                self.bytes.len()
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::Init;

    fn sample_registry() -> ParamRegistry {
        let mut reg = ParamRegistry::new(11);
        reg.get_or_create("f/layer0/W", &[3, 2], &Init::Default)
            .unwrap();
        reg.get_or_create("g/layer0/b", &[4], &Init::Values(vec![0.5, -1.5, 0.0, 2.0]))
            .unwrap();
        reg
    }

    #[test]
    fn round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.ckpt");
        let reg = sample_registry();
        write_checkpoint(&path, &reg).unwrap();
        let records = read_checkpoint(&path).unwrap();
        assert_eq!(records.len(), 2);
        for record in &records {
            let entry = reg.entry(&record.name).unwrap();
            assert_eq!(entry.shape(), record.shape.as_slice());
            assert_eq!(entry.value(), record.data.as_slice());
        }
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.ckpt");
        write_checkpoint(&path, &sample_registry()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Checkpoint(_))));

        bytes[0] = b'D';
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn restore_overwrites_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.ckpt");
        let reg = sample_registry();
        write_checkpoint(&path, &reg).unwrap();

        let mut other = sample_registry();
        other.value_mut("g/layer0/b").unwrap()[0] = 99.0;
        let records = read_checkpoint(&path).unwrap();
        restore_into(&mut other, &records).unwrap();
        assert_eq!(other.entry("g/layer0/b").unwrap().value()[0], 0.5);
    }
}
