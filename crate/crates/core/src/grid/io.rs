//! Field snapshots.
//!
//! Binary layout (little endian): a 32-byte header
//!
//! | bytes  | content                                   |
//! |--------|-------------------------------------------|
//! | 0..4   | magic `HLF1`                              |
//! | 4..6   | `d` as u16                                |
//! | 6..8   | tensor rank as u16 (0..=3)                |
//! | 8..12  | `n` as u32                                |
//! | 12..24 | three u32 tensor dimensions (unused = 1)  |
//! | 24..32 | period `L` as f64                         |
//!
//! followed by the site-major values as f64.

use std::io::{Read, Write};
use std::path::Path;

use super::{DiscreteField, PeriodicGrid};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"HLF1";
pub const HEADER_LEN: usize = 32;

pub fn write_field<W: Write>(field: &DiscreteField, mut w: W) -> Result<()> {
    let shape = field.shape();
    if shape.len() > 3 {
        return Err(Error::Format(format!("tensor rank {} exceeds 3", shape.len())));
    }
    let grid = field.grid();
    let mut header = [0u8; HEADER_LEN];
    header[0..4].copy_from_slice(MAGIC);
    header[4..6].copy_from_slice(&(grid.dim() as u16).to_le_bytes());
    header[6..8].copy_from_slice(&(shape.len() as u16).to_le_bytes());
    header[8..12].copy_from_slice(&(grid.n() as u32).to_le_bytes());
    for i in 0..3 {
        let dim = shape.get(i).copied().unwrap_or(1) as u32;
        header[12 + 4 * i..16 + 4 * i].copy_from_slice(&dim.to_le_bytes());
    }
    header[24..32].copy_from_slice(&grid.length().to_le_bytes());
    w.write_all(&header)?;
    let mut buf = Vec::with_capacity(field.values().len() * 8);
    for v in field.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_field<R: Read>(mut r: R) -> Result<DiscreteField> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)?;
    if &header[0..4] != MAGIC {
        return Err(Error::Format("bad magic, expected HLF1".into()));
    }
    let u16_at = |i: usize| u16::from_le_bytes([header[i], header[i + 1]]) as usize;
    let u32_at = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap()) as usize;
    let d = u16_at(4);
    let rank = u16_at(6);
    let n = u32_at(8);
    if rank > 3 {
        return Err(Error::Format(format!("tensor rank {rank} exceeds 3")));
    }
    let shape: Vec<usize> = (0..rank).map(|i| u32_at(12 + 4 * i)).collect();
    let length = f64::from_le_bytes(header[24..32].try_into().unwrap());
    let grid = PeriodicGrid::new(d, n, length)?;
    let count = grid.num_sites() * shape.iter().product::<usize>();
    let mut bytes = vec![0u8; count * 8];
    r.read_exact(&mut bytes)?;
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DiscreteField::from_values(grid, &shape, values)
}

pub fn save_field(field: &DiscreteField, path: impl AsRef<Path>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_field(field, std::io::BufWriter::new(f))
}

pub fn load_field(path: impl AsRef<Path>) -> Result<DiscreteField> {
    let f = std::fs::File::open(path)?;
    read_field(std::io::BufReader::new(f))
}

/// CSV export: `site, x0[, x1[, x2]], v0, v1, ...`.
pub fn write_field_csv<W: Write>(field: &DiscreteField, w: W) -> Result<()> {
    let grid = field.grid();
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["site".to_string()];
    header.extend((0..grid.dim()).map(|a| format!("x{a}")));
    header.extend((0..field.ncomp()).map(|c| format!("v{c}")));
    wtr.write_record(&header)?;
    for s in 0..grid.num_sites() {
        let x = grid.position(s);
        let mut rec = vec![s.to_string()];
        rec.extend((0..grid.dim()).map(|a| format!("{:e}", x[a])));
        rec.extend(field.at(s).iter().map(|v| format!("{v:e}")));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn binary_round_trip(d in 1usize..=3, logn in 2u32..=4, m in 1usize..=2, seed in any::<u64>()) {
            let n = 1usize << logn;
            let g = PeriodicGrid::new(d, n, 1.5).unwrap();
            let shape = [m, d];
            let nc = m * d;
            let vals: Vec<f64> = (0..g.num_sites() * nc)
                .map(|i| ((i as u64).wrapping_mul(seed | 1) % 1000) as f64 * 1e-3 - 0.5)
                .collect();
            let f = DiscreteField::from_values(g, &shape, vals).unwrap();
            let mut bytes = Vec::new();
            write_field(&f, &mut bytes).unwrap();
            prop_assert_eq!(bytes.len(), HEADER_LEN + 8 * f.values().len());
            let back = read_field(bytes.as_slice()).unwrap();
            prop_assert_eq!(back, f);
        }
    }

    #[test]
    fn header_layout() {
        let g = PeriodicGrid::new(2, 4, 2.0).unwrap();
        let f = DiscreteField::zeros(g, &[1, 2]);
        let mut bytes = Vec::new();
        write_field(&f, &mut bytes).unwrap();
        assert_eq!(&bytes[0..4], b"HLF1");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 2);
        assert_eq!(u16::from_le_bytes([bytes[6], bytes[7]]), 2);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 4);
        assert_eq!(f64::from_le_bytes(bytes[24..32].try_into().unwrap()), 2.0);
    }

    #[test]
    fn rejects_bad_magic() {
        let bytes = vec![0u8; 64];
        assert!(read_field(bytes.as_slice()).is_err());
    }

    #[test]
    fn csv_has_one_row_per_site() {
        let g = PeriodicGrid::new(1, 4, 1.0).unwrap();
        let f = DiscreteField::constant(g, &[1], &[2.0]);
        let mut out = Vec::new();
        write_field_csv(&f, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("site,x0,v0"));
    }
}
