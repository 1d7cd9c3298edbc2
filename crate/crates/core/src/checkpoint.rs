//! HSF1 binary field checkpoints and CSV export.
//!
//! Layout: `b"HSF1"`, then little-endian `u32` placement code, `u32` rows,
//! `u32` cols, then `rows * cols` little-endian `f64` values in row-major order.
//! Rows run over the x index.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::{Grid, Placement, ScalarField};

pub const MAGIC: &[u8; 4] = b"HSF1";

pub fn encode(field: &ScalarField) -> Vec<u8> {
    let (rows, cols) = field.values.dim();
    let mut out = Vec::with_capacity(16 + 8 * rows * cols);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&field.placement.code().to_le_bytes());
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for x in field.values.iter() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

/// Raw decoded contents: placement and the value array.
pub fn decode_raw(bytes: &[u8]) -> Result<(Placement, Array2<f64>)> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing HSF1 header".into()));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap());
    let placement =
        Placement::from_code(word(0)).ok_or_else(|| Error::Format(format!("unknown placement code {}", word(0))))?;
    let (rows, cols) = (word(1) as usize, word(2) as usize);
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(16))
        .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "expected {expected} bytes for a {rows}x{cols} field, found {}",
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let values = Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::Format(e.to_string()))?;
    Ok((placement, values))
}

/// Decodes a checkpoint and checks it against `grid`.
pub fn decode(bytes: &[u8], grid: Grid) -> Result<ScalarField> {
    let (placement, values) = decode_raw(bytes)?;
    ScalarField::from_array(grid, placement, values)
}

pub fn write(path: &Path, field: &ScalarField) -> Result<Vec<u8>> {
    let bytes = encode(field);
    fs::write(path, &bytes)?;
    Ok(bytes)
}

pub fn read(path: &Path, grid: Grid) -> Result<ScalarField> {
    decode(&fs::read(path)?, grid)
}

/// CSV with header `i,j,value`, one sample per line. Values use the shortest
/// representation that round-trips.
pub fn to_csv(field: &ScalarField) -> String {
    let mut s = String::from("i,j,value\n");
    for ((i, j), x) in field.values.indexed_iter() {
        s.push_str(&format!("{i},{j},{x:?}\n"));
    }
    s
}

pub fn write_csv(path: &Path, field: &ScalarField) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(to_csv(field).as_bytes())?;
    Ok(())
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn hash_hex(bytes: &[u8]) -> String {
    format!("{:016x}", fnv1a64(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_identical() {
        let g = Grid::new(2.0, 1.0, 5, 4).unwrap();
        let f = ScalarField::from_fn(g, Placement::YFace, |x, y| (x * 7.1).sin() / (1.0 + y));
        let bytes = encode(&f);
        assert_eq!(&bytes[..4], b"HSF1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 5);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 5);
        let back = decode(&bytes, g).unwrap();
        assert_eq!(back, f);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn rejects_truncated_and_wrong_shape() {
        let g = Grid::unit_square(4).unwrap();
        let f = ScalarField::zeros(g, Placement::Cell);
        let bytes = encode(&f);
        assert!(decode(&bytes[..bytes.len() - 1], g).is_err());
        assert!(decode(b"HSF2aaaaaaaaaaaa", g).is_err());
        let other = Grid::unit_square(5).unwrap();
        assert!(matches!(decode(&bytes, other), Err(Error::Structural(_))));
    }

    #[test]
    fn csv_has_header_and_one_line_per_value() {
        let g = Grid::unit_square(4).unwrap();
        let csv = to_csv(&ScalarField::constant(g, Placement::Node, 0.5));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "i,j,value");
        assert_eq!(lines.len(), 1 + 25);
        assert_eq!(lines[1], "0,0,0.5");
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }
}
