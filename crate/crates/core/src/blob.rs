//! Checkpoint file convention: a structured-text header followed by a
//! little-endian 32-bit-float weight blob.
//!
//! The first header line is `<kind> <version>`; remaining lines are
//! `key value` pairs. A mandatory `floats N` line gives the blob length
//! and a single blank line separates header from bytes.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum BlobError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("bad checkpoint header: {0}")]
    Header(String),
}

pub struct BlobFile {
    pub kind: String,
    pub version: u32,
    pub fields: Vec<(String, String)>,
    pub floats: Vec<f64>,
}

impl BlobFile {
    pub fn field(&self, key: &str) -> Option<&str> {
        self.fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn usize_field(&self, key: &str) -> Result<usize, BlobError> {
        self.field(key)
            .ok_or_else(|| BlobError::Header(format!("missing field `{key}`")))?
            .parse()
            .map_err(|e| BlobError::Header(format!("field `{key}`: {e}")))
    }
}

pub fn write_blob(
    path: &Path,
    kind: &str,
    version: u32,
    fields: &[(&str, String)],
    floats: &[f64],
) -> Result<(), BlobError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{kind} v{version}")?;
    for (k, v) in fields {
        writeln!(w, "{k} {v}")?;
    }
    writeln!(w, "floats {}", floats.len())?;
    writeln!(w)?;
    for &v in floats {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_blob(path: &Path, expect_kind: &str) -> Result<BlobFile, BlobError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = Vec::new();
    // read byte-wise until the blank line so the binary tail stays intact
    loop {
        let mut line = Vec::new();
        let mut byte = [0u8; 1];
        loop {
            r.read_exact(&mut byte)
                .map_err(|_| BlobError::Header("truncated header".into()))?;
            if byte[0] == b'\n' {
                break;
            }
            line.push(byte[0]);
        }
        if line.is_empty() {
            break;
        }
        header.push(String::from_utf8(line).map_err(|e| BlobError::Header(e.to_string()))?);
    }
    if header.is_empty() {
        return Err(BlobError::Header("empty header".into()));
    }
    let mut first = header[0].splitn(2, ' ');
    let kind = first.next().unwrap_or("").to_string();
    let vstr = first.next().unwrap_or("");
    if kind != expect_kind {
        return Err(BlobError::Header(format!(
            "expected kind `{expect_kind}`, found `{kind}`"
        )));
    }
    let version: u32 = vstr
        .strip_prefix('v')
        .ok_or_else(|| BlobError::Header(format!("missing version field in `{}`", header[0])))?
        .parse()
        .map_err(|e| BlobError::Header(format!("bad version: {e}")))?;
    let mut fields = Vec::new();
    let mut n_floats: Option<usize> = None;
    for line in &header[1..] {
        let (k, v) = line
            .split_once(' ')
            .ok_or_else(|| BlobError::Header(format!("malformed line `{line}`")))?;
        if k == "floats" {
            n_floats = Some(
                v.parse()
                    .map_err(|e| BlobError::Header(format!("bad float count: {e}")))?,
            );
        } else {
            fields.push((k.to_string(), v.to_string()));
        }
    }
    let n = n_floats.ok_or_else(|| BlobError::Header("missing `floats` line".into()))?;
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)
        .map_err(|_| BlobError::Header("truncated weight blob".into()))?;
    let floats = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(BlobFile {
        kind,
        version,
        fields,
        floats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let vals = vec![0.5, -1.25, 3.0, 0.0];
        write_blob(&path, "votenet", 1, &[("hidden", "64".into())], &vals).unwrap();
        let blob = read_blob(&path, "votenet").unwrap();
        assert_eq!(blob.version, 1);
        assert_eq!(blob.field("hidden"), Some("64"));
        assert_eq!(blob.floats, vals);
    }

    #[test]
    fn kind_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        write_blob(&path, "votenet", 1, &[], &[1.0]).unwrap();
        assert!(read_blob(&path, "bevmap").is_err());
    }
}
