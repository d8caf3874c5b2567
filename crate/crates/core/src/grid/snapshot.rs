//! Binary field snapshots: `ASF1`, an ASCII line `dim n1 [n2 [n3]] t\n`,
//! then little-endian `f64` samples in row-major order.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{GridSpec, ScalarField};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"ASF1";

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub extents: Vec<usize>,
    pub t: f64,
    pub data: Vec<f64>,
}

impl Snapshot {
    pub fn into_field(self, grid: &GridSpec) -> Result<ScalarField> {
        if self.extents != grid.extents() {
            return Err(Error::Snapshot(format!(
                "snapshot extents {:?} do not match grid {:?}",
                self.extents,
                grid.extents()
            )));
        }
        ScalarField::from_vec(*grid, self.data)
    }
}

pub fn encode_snapshot(field: &ScalarField, t: f64) -> Vec<u8> {
    let grid = field.grid();
    let mut header = format!("{}", grid.dim());
    for n in grid.extents() {
        header.push_str(&format!(" {n}"));
    }
    header.push_str(&format!(" {t:?}\n"));
    let mut out = Vec::with_capacity(4 + header.len() + 8 * grid.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(header.as_bytes());
    for v in field.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<Snapshot> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Snapshot("missing ASF1 magic".into()));
    }
    let rest = &bytes[4..];
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Snapshot("unterminated header".into()))?;
    let header = std::str::from_utf8(&rest[..nl]).map_err(|_| Error::Snapshot("header is not ASCII".into()))?;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    let dim: usize = tokens
        .first()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Snapshot(format!("bad header `{header}`")))?;
    if !(1..=3).contains(&dim) || tokens.len() != dim + 2 {
        return Err(Error::Snapshot(format!("bad header `{header}`")));
    }
    let extents = tokens[1..=dim]
        .iter()
        .map(|s| s.parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::Snapshot(format!("bad extents in `{header}`")))?;
    let t: f64 = tokens[dim + 1]
        .parse()
        .map_err(|_| Error::Snapshot(format!("bad time in `{header}`")))?;
    let body = &rest[nl + 1..];
    let count: usize = extents.iter().product();
    if body.len() != 8 * count {
        return Err(Error::Snapshot(format!("expected {} payload bytes, found {}", 8 * count, body.len())));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(Snapshot { extents, t, data })
}

pub fn write_snapshot(path: &Path, field: &ScalarField, t: f64) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(&encode_snapshot(field, t))?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    decode_snapshot(&fs::read(path)?)
}
