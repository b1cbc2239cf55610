//! Little-endian binary container for named tensors.
//!
//! Layout: 8-byte magic `CFGTNSR\0`, `u32` version, `u64` fingerprint,
//! `u32`-prefixed UTF-8 label, `u32` record count, then per record a
//! `u32`-prefixed name, `u32` rank, `u64` extents and `f64` values.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::Tensor;

pub const MAGIC: &[u8; 8] = b"CFGTNSR\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub label: String,
    pub fingerprint: u64,
    pub records: BTreeMap<String, Tensor>,
}

pub fn encode(c: &Container) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&c.fingerprint.to_le_bytes());
    put_str(&mut out, &c.label);
    out.extend_from_slice(&(c.records.len() as u32).to_le_bytes());
    for (name, t) in &c.records {
        put_str(&mut out, name);
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn err(&self, reason: String) -> Error {
        Error::Format {
            offset: self.pos as u64,
            reason,
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let at = self.pos;
        let bytes = self.take(n, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Format {
            offset: at as u64,
            reason: format!("{what} is not valid UTF-8"),
        })
    }
}

pub fn decode(buf: &[u8]) -> Result<Container> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            reason: "bad magic".into(),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 8,
            reason: format!("unsupported version {version}"),
        });
    }
    let fingerprint = r.u64("fingerprint")?;
    let label = r.string("label")?;
    let count = r.u32("record count")?;
    let mut records = BTreeMap::new();
    for _ in 0..count {
        let name = r.string("record name")?;
        let ndim = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(ndim.min(16));
        for _ in 0..ndim {
            shape.push(r.u64("extent")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= buf.len()))
            .ok_or_else(|| r.err(format!("record `{name}` has an implausible shape {shape:?}")))?;
        let at = r.pos;
        let raw = r.take(n * 8, "tensor data")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Format {
            offset: at as u64,
            reason: format!("record `{name}`: {e}"),
        })?;
        if records.insert(name.clone(), t).is_some() {
            return Err(r.err(format!("duplicate record `{name}`")));
        }
    }
    if r.pos != buf.len() {
        return Err(r.err("trailing bytes".into()));
    }
    Ok(Container {
        label,
        fingerprint,
        records,
    })
}

/// Writes via a temporary sibling file and a rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_container(path: &Path, c: &Container) -> Result<()> {
    write_atomic(path, &encode(c))
}

pub fn read_container(path: &Path) -> Result<Container> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut records = BTreeMap::new();
        records.insert("a".into(), Tensor::new(vec![3], vec![1.0, f64::MIN_POSITIVE, -2.5]).unwrap());
        records.insert("b".into(), Tensor::new(vec![2, 1, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap());
        Container {
            label: "lbl".into(),
            fingerprint: 0xdead_beef,
            records,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        assert_eq!(decode(&encode(&c)).unwrap(), c);
    }

    #[test]
    fn corruption_reports_offsets() {
        let bytes = encode(&sample());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(Error::Format { offset: 0, .. })));
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(decode(cut), Err(Error::Format { .. })));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode(&long), Err(Error::Format { .. })));
    }
}
