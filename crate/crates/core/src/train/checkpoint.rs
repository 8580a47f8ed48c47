use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

pub const MAGIC: &[u8; 4] = b"DFD1";
pub const VERSION: u32 = 1;

/// One named tensor in a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Raw checkpoint contents.
///
/// Layout, all integers little-endian `u32`: magic `DFD1`, version, config
/// block length and UTF-8 `key = value` lines, record count, then per record
/// the name length and bytes, rank, dimensions and `f32` data.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: Vec<(String, String)>,
    pub records: Vec<Record>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v)
        .map_err(|_| Error::Checkpoint(format!("value {v} does not fit in 32 bits")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Checkpoint(format!(
                    "truncated while reading {what} at byte {}",
                    self.pos
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn text(&mut self, n: usize, what: &str) -> Result<&'a str> {
        std::str::from_utf8(self.take(n, what)?)
            .map_err(|_| Error::Checkpoint(format!("{what} is not UTF-8")))
    }
}

impl Checkpoint {
    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn record(&self, name: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION as usize)?;
        let mut block = String::new();
        for (k, v) in &self.config {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::Checkpoint(format!(
                    "config entry `{k}` cannot be encoded"
                )));
            }
            block.push_str(&format!("{k} = {v}\n"));
        }
        put_u32(&mut out, block.len())?;
        out.extend_from_slice(block.as_bytes());
        put_u32(&mut out, self.records.len())?;
        for r in &self.records {
            if r.shape.iter().product::<usize>() != r.data.len() {
                return Err(Error::Checkpoint(format!(
                    "record `{}` shape does not match its data",
                    r.name
                )));
            }
            put_u32(&mut out, r.name.len())?;
            out.extend_from_slice(r.name.as_bytes());
            put_u32(&mut out, r.shape.len())?;
            for &d in &r.shape {
                put_u32(&mut out, d)?;
            }
            for v in &r.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Checkpoint(
                "not a checkpoint file (bad magic)".into(),
            ));
        }
        let version = r.u32("version")?;
        if version != VERSION as usize {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let len = r.u32("config length")?;
        let block = r.text(len, "config block")?;
        let mut config = Vec::new();
        for line in block.lines() {
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| Error::Checkpoint(format!("malformed config line `{line}`")))?;
            config.push((k.to_string(), v.to_string()));
        }
        let count = r.u32("record count")?;
        let mut records = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let n = r.u32("record name length")?;
            let name = r.text(n, "record name")?.to_string();
            let rank = r.u32("record rank")?;
            let shape = (0..rank)
                .map(|_| r.u32("record shape"))
                .collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let raw = r.take(len.checked_mul(4).unwrap_or(usize::MAX), "record data")?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            records.push(Record { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint { config, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            config: vec![
                ("stages".into(), "2".into()),
                ("ablation".into(), "DBL+I".into()),
            ],
            records: vec![
                Record {
                    name: "a.weight".into(),
                    shape: vec![2, 3],
                    data: vec![1.0, -2.5, 3.0, 0.0, f32::MIN_POSITIVE, 7.0],
                },
                Record {
                    name: "s".into(),
                    shape: vec![],
                    data: vec![0.25],
                },
            ],
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let bytes = sample().to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"DFD1");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, sample());
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.config_value("ablation"), Some("DBL+I"));
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad)
            .unwrap_err()
            .to_string()
            .contains("magic"));
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }
}
