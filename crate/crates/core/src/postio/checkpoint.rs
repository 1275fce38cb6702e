//! Binary checkpoints: a fixed header (magic, format version, payload
//! kind, configuration hash) followed by a bincode payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CARDIOEM";
pub const FORMAT_VERSION: u32 = 1;

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_str(r: &mut impl Read) -> std::io::Result<String> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_le_bytes(len) as usize;
    if len > 1 << 16 {
        return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "header string too long"));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

/// Writes `value` atomically (temporary file, then rename).
pub fn save<T: Serialize>(path: &Path, kind: &str, config_hash: &str, value: &T) -> Result<()> {
    let tmp = path.with_extension("partial");
    let io = |e| Error::io(&tmp, e);
    {
        let mut w = BufWriter::new(File::create(&tmp).map_err(io)?);
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
        write_str(&mut w, kind).map_err(io)?;
        write_str(&mut w, config_hash).map_err(io)?;
        bincode::serialize_into(&mut w, value).map_err(|e| Error::Format {
            path: tmp.clone(),
            message: e.to_string(),
        })?;
        w.flush().map_err(io)?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint of the given kind. With `config_hash` set, a file
/// written under a different configuration is rejected.
pub fn load<T: DeserializeOwned>(path: &Path, kind: &str, config_hash: Option<&str>) -> Result<T> {
    let fail = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != MAGIC {
        return Err(fail("not a checkpoint file".into()));
    }
    let mut version = [0u8; 4];
    r.read_exact(&mut version).map_err(|e| Error::io(path, e))?;
    let version = u32::from_le_bytes(version);
    if version != FORMAT_VERSION {
        return Err(fail(format!("checkpoint format {version}, expected {FORMAT_VERSION}")));
    }
    let found = read_str(&mut r).map_err(|e| Error::io(path, e))?;
    if found != kind {
        return Err(fail(format!("checkpoint holds `{found}`, expected `{kind}`")));
    }
    let hash = read_str(&mut r).map_err(|e| Error::io(path, e))?;
    if let Some(expected) = config_hash {
        if hash != expected {
            return Err(fail(format!("written under configuration {hash}, current is {expected}")));
        }
    }
    bincode::deserialize_from(r).map_err(|e| fail(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_header_checks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        let v: (Vec<f64>, u64) = (vec![0.1, f64::MIN_POSITIVE, -3e-300], 7);
        save(&path, "state", "h1", &v).unwrap();
        let back: (Vec<f64>, u64) = load(&path, "state", Some("h1")).unwrap();
        assert_eq!(back, v);
        assert!(load::<(Vec<f64>, u64)>(&path, "other", None).is_err());
        assert!(load::<(Vec<f64>, u64)>(&path, "state", Some("h2")).is_err());

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8] = 99;
        std::fs::write(&path, bytes).unwrap();
        let e = load::<(Vec<f64>, u64)>(&path, "state", None).unwrap_err();
        assert!(e.to_string().contains("format 99"), "{e}");
    }
}
