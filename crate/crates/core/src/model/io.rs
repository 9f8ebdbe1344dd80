//! Trajectory and observation serialization.
//!
//! CSV: one row per step, the step index followed by the components.
//! Binary: the 8-byte magic `NHFTRJ01`, row count and column count as
//! little-endian `u64`, then per row the step index (`u64`) and `cols`
//! little-endian `f64` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{NhfError, Result};

const MAGIC: &[u8; 8] = b"NHFTRJ01";

fn check_rows(steps: &[u64], rows: &[Vec<f64>]) -> Result<usize> {
    crate::error::check_len("step index list", rows.len(), steps.len())?;
    let cols = rows.first().map_or(0, Vec::len);
    for r in rows {
        crate::error::check_len("row width", cols, r.len())?;
    }
    Ok(cols)
}

pub fn write_csv(path: &Path, steps: &[u64], rows: &[Vec<f64>]) -> Result<()> {
    let cols = check_rows(steps, rows)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["step".to_string()];
    header.extend((0..cols).map(|c| format!("x{c}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (s, r) in steps.iter().zip(rows) {
        let mut rec = Vec::with_capacity(cols + 1);
        rec.push(s.to_string());
        rec.extend(r.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| NhfError::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<(Vec<u64>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut steps = Vec::new();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let mut it = rec.iter();
        let step = it
            .next()
            .ok_or_else(|| parse_err(path, "empty row"))?
            .parse::<u64>()
            .map_err(|e| parse_err(path, &e.to_string()))?;
        let row = it
            .map(|v| v.parse::<f64>().map_err(|e| parse_err(path, &e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        steps.push(step);
        rows.push(row);
    }
    Ok((steps, rows))
}

pub fn write_binary(path: &Path, steps: &[u64], rows: &[Vec<f64>]) -> Result<()> {
    let cols = check_rows(steps, rows)?;
    let file = File::create(path).map_err(|e| NhfError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| NhfError::io(path, e));
    put(MAGIC)?;
    put(&(rows.len() as u64).to_le_bytes())?;
    put(&(cols as u64).to_le_bytes())?;
    for (s, r) in steps.iter().zip(rows) {
        put(&s.to_le_bytes())?;
        for v in r {
            put(&v.to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| NhfError::io(path, e))
}

pub fn read_binary(path: &Path) -> Result<(Vec<u64>, Vec<Vec<f64>>)> {
    let file = File::open(path).map_err(|e| NhfError::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut buf = [0u8; 8];
    let mut next = |r: &mut BufReader<File>| -> Result<[u8; 8]> {
        r.read_exact(&mut buf).map_err(|e| NhfError::io(path, e))?;
        Ok(buf)
    };
    if &next(&mut r)? != MAGIC {
        return Err(parse_err(path, "bad magic"));
    }
    let n_rows = u64::from_le_bytes(next(&mut r)?) as usize;
    let cols = u64::from_le_bytes(next(&mut r)?) as usize;
    let mut steps = Vec::with_capacity(n_rows);
    let mut rows = Vec::with_capacity(n_rows);
    for _ in 0..n_rows {
        steps.push(u64::from_le_bytes(next(&mut r)?));
        let mut row = Vec::with_capacity(cols);
        for _ in 0..cols {
            row.push(f64::from_le_bytes(next(&mut r)?));
        }
        rows.push(row);
    }
    Ok((steps, rows))
}

fn csv_err(path: &Path, e: csv::Error) -> NhfError {
    NhfError::Serialization {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn parse_err(path: &Path, msg: &str) -> NhfError {
    NhfError::Serialization {
        path: path.to_path_buf(),
        message: msg.to_string(),
    }
}
