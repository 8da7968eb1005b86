//! File formats: ERRT tensors, vocabulary files, PGM label images.
//!
//! ERRT layout: magic `ERRT`, u32 little-endian rank, `rank` u32
//! little-endian extents, then row-major f64 little-endian values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"ERRT";

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor_to(&mut w, t)
}

pub fn write_tensor_to<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_all(MAGIC)?;
    let rank = t.shape().len() as u32;
    w.write_all(&rank.to_le_bytes())?;
    for &e in t.shape() {
        w.write_all(&(e as u32).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let mut r = BufReader::new(File::open(path)?);
    read_tensor_from(&mut r)
}

pub fn read_tensor_from<R: Read>(r: &mut R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Parse(format!(
            "bad magic {:?}, expected \"ERRT\"",
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let rank = u32::from_le_bytes(u32buf) as usize;
    if rank > 16 {
        return Err(Error::Parse(format!("implausible rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        r.read_exact(&mut u32buf)?;
        shape.push(u32::from_le_bytes(u32buf) as usize);
    }
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    let mut f64buf = [0u8; 8];
    for _ in 0..numel {
        r.read_exact(&mut f64buf)?;
        data.push(f64::from_le_bytes(f64buf));
    }
    // must be at EOF
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::Parse("trailing bytes after tensor payload".into()));
    }
    Tensor::new(shape, data)
}

/// Newline-separated class names.
pub fn read_names(path: &Path) -> Result<Vec<String>> {
    let mut s = String::new();
    File::open(path)?.read_to_string(&mut s)?;
    Ok(s.lines()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect())
}

pub fn write_names(path: &Path, names: &[String]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for n in names {
        writeln!(w, "{n}")?;
    }
    Ok(())
}

/// ASCII PGM (P2) of an integer label map, for eyeballing predictions.
pub fn write_pgm(path: &Path, labels: &[usize], h: usize, w: usize, maxval: usize) -> Result<()> {
    if labels.len() != h * w {
        return Err(Error::Dimension(format!(
            "pgm wants {h}x{w} = {} labels, got {}",
            h * w,
            labels.len()
        )));
    }
    let maxval = maxval.clamp(1, 65535);
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "P2")?;
    writeln!(out, "{w} {h}")?;
    writeln!(out, "{maxval}")?;
    for row in 0..h {
        let line: Vec<String> = (0..w)
            .map(|col| labels[row * w + col].min(maxval).to_string())
            .collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

/// Selection export: one `class_index score` line per selected class.
pub fn format_selection(selected: &[usize], scores: &[f64]) -> String {
    let mut s = String::new();
    for &idx in selected {
        s.push_str(&format!("{idx} {}\n", scores[idx]));
    }
    s
}
