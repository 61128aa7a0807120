//! Compact binary archive for fields and matrices: a small self-describing
//! header followed by row-major interleaved re/im binary64 pairs.

use std::io::{Read, Write};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::MultimodeField;

const MAGIC: &[u8; 4] = b"MCF1";
const KIND_FIELD: u32 = 1;
const KIND_MATRIX: u32 = 2;

fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

fn write_complex_block<W: Write>(w: &mut W, data: &[Complex64]) -> Result<()> {
    let mut buf = Vec::with_capacity(data.len() * 16);
    for z in data {
        buf.extend_from_slice(&z.re.to_le_bytes());
        buf.extend_from_slice(&z.im.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_complex_block<R: Read>(r: &mut R, len: usize) -> Result<Vec<Complex64>> {
    let mut buf = vec![0u8; len * 16];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(16)
        .map(|c| {
            Complex64::new(
                f64::from_le_bytes(c[0..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..16].try_into().unwrap()),
            )
        })
        .collect())
}

/// Writes a multimode field: header (magic, kind, num_modes, n_t, dt, f0)
/// then the mode arrays in order.
pub fn write_field<W: Write>(w: &mut W, field: &MultimodeField) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&KIND_FIELD.to_le_bytes())?;
    write_u64(w, field.num_modes() as u64)?;
    write_u64(w, field.n_t() as u64)?;
    write_f64(w, field.dt())?;
    write_f64(w, field.f0())?;
    for i in 0..field.num_modes() {
        write_complex_block(w, field.mode(i))?;
    }
    Ok(())
}

pub fn read_field<R: Read>(r: &mut R) -> Result<MultimodeField> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Parse("bad magic in field archive".into()));
    }
    let mut kind = [0u8; 4];
    r.read_exact(&mut kind)?;
    if u32::from_le_bytes(kind) != KIND_FIELD {
        return Err(Error::Parse("archive does not hold a field".into()));
    }
    let num_modes = read_u64(r)? as usize;
    let n_t = read_u64(r)? as usize;
    let dt = read_f64(r)?;
    let f0 = read_f64(r)?;
    let modes = (0..num_modes)
        .map(|_| read_complex_block(r, n_t))
        .collect::<Result<Vec<_>>>()?;
    MultimodeField::new(modes, dt, f0)
}

/// Writes a complex matrix row-major: header (magic, kind, rows, cols).
pub fn write_matrix<W: Write>(w: &mut W, m: &nalgebra::DMatrix<Complex64>) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&KIND_MATRIX.to_le_bytes())?;
    write_u64(w, m.nrows() as u64)?;
    write_u64(w, m.ncols() as u64)?;
    let row_major: Vec<Complex64> = (0..m.nrows())
        .flat_map(|r| (0..m.ncols()).map(move |c| (r, c)))
        .map(|(r, c)| m[(r, c)])
        .collect();
    write_complex_block(w, &row_major)
}

pub fn read_matrix<R: Read>(r: &mut R) -> Result<nalgebra::DMatrix<Complex64>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Parse("bad magic in matrix archive".into()));
    }
    let mut kind = [0u8; 4];
    r.read_exact(&mut kind)?;
    if u32::from_le_bytes(kind) != KIND_MATRIX {
        return Err(Error::Parse("archive does not hold a matrix".into()));
    }
    let rows = read_u64(r)? as usize;
    let cols = read_u64(r)? as usize;
    let data = read_complex_block(r, rows * cols)?;
    Ok(nalgebra::DMatrix::from_fn(rows, cols, |r, c| {
        data[r * cols + c]
    }))
}
