//! Parameter streams: a text manifest of tensor shapes followed by the raw
//! little-endian `f64` values of every tensor, row-major, in manifest order.
//!
//! ```text
//! tensors 4
//! 64 10
//! 1 64
//! 2 64
//! 1 2
//! <binary payload>
//! ```

use std::io::{BufRead, Write};

use super::graph::Tensor;
use crate::error::{Error, Result};

pub fn write_tensors<W: Write>(w: &mut W, tensors: &[&Tensor]) -> Result<()> {
    writeln!(w, "tensors {}", tensors.len())?;
    for t in tensors {
        writeln!(w, "{} {}", t.nrows(), t.ncols())?;
    }
    for t in tensors {
        for v in t.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_line<R: BufRead>(r: &mut R) -> Result<String> {
    let mut line = String::new();
    if r.read_line(&mut line)? == 0 {
        return Err(Error::Format("unexpected end of parameter stream".into()));
    }
    Ok(line.trim_end().to_string())
}

pub fn read_tensors<R: BufRead>(r: &mut R) -> Result<Vec<Tensor>> {
    let header = read_line(r)?;
    let count: usize = header
        .strip_prefix("tensors ")
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| Error::Format(format!("bad tensor manifest header {header:?}")))?;
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let line = read_line(r)?;
        let dims: Vec<usize> = line
            .split_whitespace()
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Format(format!("bad shape line {line:?}")))?;
        if dims.len() != 2 {
            return Err(Error::Format(format!("shape line {line:?} needs two dims")));
        }
        shapes.push((dims[0], dims[1]));
    }
    let mut out = Vec::with_capacity(count);
    let mut buf = [0u8; 8];
    for (rows, cols) in shapes {
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            r.read_exact(&mut buf)?;
            values.push(f64::from_le_bytes(buf));
        }
        let t = Tensor::from_shape_vec((rows, cols), values)
            .map_err(|e| Error::Format(e.to_string()))?;
        out.push(t);
    }
    Ok(out)
}
