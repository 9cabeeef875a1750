//! Binary matrix container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "MPSLMAT1"            8 bytes
//! m                     u64
//! n                     u64
//! label count           u64   (must equal m)
//! data                  m*n f64, row-major
//! labels                m u32
//! class names           UTF-8 JSON object {"<id>": "<name>", ...} to EOF
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::RowMatrix;

use super::DatasetMatrix;

pub const MAGIC: &[u8; 8] = b"MPSLMAT1";

pub fn encode(ds: &DatasetMatrix) -> Result<Vec<u8>> {
    ds.validate()?;
    let (m, n) = (ds.m(), ds.n());
    let names: BTreeMap<String, &str> = ds
        .class_names
        .iter()
        .map(|(k, v)| (k.to_string(), v.as_str()))
        .collect();
    let json = serde_json::to_vec(&names).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(32 + m * n * 8 + m * 4 + json.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(m as u64).to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(ds.labels.len() as u64).to_le_bytes());
    for v in ds.data.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for l in &ds.labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out.extend_from_slice(&json);
    Ok(out)
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, len: usize, what: &str) -> Result<&'a [u8]> {
    let end = pos
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Format(format!("truncated file while reading {what}")))?;
    let s = &bytes[*pos..end];
    *pos = end;
    Ok(s)
}

fn read_u64(bytes: &[u8], pos: &mut usize, what: &str) -> Result<u64> {
    let s = take(bytes, pos, 8, what)?;
    Ok(u64::from_le_bytes(s.try_into().expect("8 bytes")))
}

pub fn decode(bytes: &[u8]) -> Result<DatasetMatrix> {
    let mut pos = 0;
    let magic = take(bytes, &mut pos, 8, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format("magic number mismatch".into()));
    }
    let m = read_u64(bytes, &mut pos, "row count")? as usize;
    let n = read_u64(bytes, &mut pos, "column count")? as usize;
    let label_count = read_u64(bytes, &mut pos, "label count")? as usize;
    if label_count != m {
        return Err(Error::Format(format!(
            "label count {label_count} does not match row count {m}"
        )));
    }
    let cells = m
        .checked_mul(n)
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| Error::Format("matrix dimensions overflow".into()))?;
    let raw = take(bytes, &mut pos, cells, "data block")?;
    let data: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let raw = take(bytes, &mut pos, m * 4, "label block")?;
    let labels: Vec<u32> = raw
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let names: BTreeMap<String, String> = serde_json::from_slice(&bytes[pos..])
        .map_err(|e| Error::Format(format!("class-name map: {e}")))?;
    let mut class_names = BTreeMap::new();
    for (k, v) in names {
        let id: u32 = k
            .parse()
            .map_err(|_| Error::Format(format!("class id {k:?} is not an integer")))?;
        class_names.insert(id, v);
    }
    let ds = DatasetMatrix {
        data: RowMatrix::from_vec(m, n, data)?,
        labels,
        class_names,
    };
    ds.validate().map_err(|e| Error::Format(e.to_string()))?;
    Ok(ds)
}

pub fn save_matrix(ds: &DatasetMatrix, path: &Path) -> Result<()> {
    let bytes = encode(ds)?;
    crate::io::write_atomic(path, &bytes)
}

pub fn load_matrix(path: &Path) -> Result<DatasetMatrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
