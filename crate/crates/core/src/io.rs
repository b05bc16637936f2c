//! Binary field/trace files, PGM previews and CSV tables.
//!
//! Both binary formats start with one line of JSON followed by raw
//! little-endian data. Fields (`EPF1`) store `nx·ny` values row by row with
//! `y` outermost. Traces (`EPT1`) store a node table of 18-byte records
//! (`u64` grid index, `u8` face id, `f64` λ, `u8` Γ flag) followed by
//! `(nt+1)·n_boundary_nodes` values, time outermost.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::boundary::{boundary_nodes, BoundarySpec, Face};
use crate::error::{Error, Result};
use crate::grid::{Grid2D, ScalarField};
use crate::trace::{BoundaryTrace, TimeAxis};

const MAX_HEADER: u64 = 1 << 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub format: String,
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
    pub origin_x: f64,
    pub origin_y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub nt: usize,
    pub dt: f64,
    pub n_boundary_nodes: usize,
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
    pub origin_x: f64,
    pub origin_y: f64,
}

impl FieldHeader {
    fn of(g: &Grid2D) -> Self {
        Self {
            format: "EPF1".into(),
            nx: g.nx(),
            ny: g.ny(),
            hx: g.hx(),
            hy: g.hy(),
            origin_x: g.origin()[0],
            origin_y: g.origin()[1],
        }
    }

    pub fn grid(&self) -> Result<Grid2D> {
        Grid2D::new(self.nx, self.ny, self.hx, self.hy, [self.origin_x, self.origin_y])
            .map_err(|e| Error::Format(format!("bad grid in header: {e}")))
    }
}

impl TraceHeader {
    pub fn grid(&self) -> Result<Grid2D> {
        Grid2D::new(self.nx, self.ny, self.hx, self.hy, [self.origin_x, self.origin_y])
            .map_err(|e| Error::Format(format!("bad grid in header: {e}")))
    }
}

impl fmt::Display for FieldHeader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "format=EPF1")?;
        writeln!(f, "nx={}", self.nx)?;
        writeln!(f, "ny={}", self.ny)?;
        writeln!(f, "hx={}", self.hx)?;
        writeln!(f, "hy={}", self.hy)?;
        writeln!(f, "origin_x={}", self.origin_x)?;
        write!(f, "origin_y={}", self.origin_y)
    }
}

impl fmt::Display for TraceHeader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "format=EPT1")?;
        writeln!(f, "nt={}", self.nt)?;
        writeln!(f, "dt={}", self.dt)?;
        writeln!(f, "tau={}", self.dt * self.nt as f64)?;
        writeln!(f, "n_boundary_nodes={}", self.n_boundary_nodes)?;
        writeln!(f, "nx={}", self.nx)?;
        write!(f, "ny={}", self.ny)
    }
}

fn read_header_line(r: &mut impl BufRead) -> Result<String> {
    let mut line = Vec::new();
    r.take(MAX_HEADER).read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(Error::Format("missing or oversized header line".into()));
    }
    line.pop();
    String::from_utf8(line).map_err(|_| Error::Format("header is not UTF-8".into()))
}

fn parse_header<T: for<'de> Deserialize<'de>>(line: &str, magic: &str) -> Result<T> {
    let v: serde_json::Value =
        serde_json::from_str(line).map_err(|e| Error::Format(format!("header is not a JSON record: {e}")))?;
    match v.get("format").and_then(|f| f.as_str()) {
        Some(m) if m == magic => {}
        Some(m) => return Err(Error::Format(format!("expected {magic} file, found {m}"))),
        None => return Err(Error::Format("header lacks a format key".into())),
    }
    serde_json::from_value(v).map_err(|e| Error::Format(format!("bad {magic} header: {e}")))
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; 8 * n];
    r.read_exact(&mut buf).map_err(|_| Error::Format(format!("file truncated: expected {n} values")))?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

fn write_f64s(w: &mut impl Write, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn ensure_eof(r: &mut impl Read) -> Result<()> {
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    Ok(())
}

pub fn write_field_to(w: &mut impl Write, field: &ScalarField) -> Result<()> {
    let header = serde_json::to_string(&FieldHeader::of(field.grid())).expect("header serializes");
    writeln!(w, "{header}")?;
    write_f64s(w, field.values())
}

pub fn read_field_from(r: &mut impl BufRead) -> Result<ScalarField> {
    let h: FieldHeader = parse_header(&read_header_line(r)?, "EPF1")?;
    let grid = h.grid()?;
    let values = read_f64s(r, grid.len())?;
    ensure_eof(r)?;
    ScalarField::from_values(grid, values)
}

pub fn write_field(path: impl AsRef<Path>, field: &ScalarField) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_field_to(&mut w, field)?;
    w.flush()?;
    Ok(())
}

pub fn read_field(path: impl AsRef<Path>) -> Result<ScalarField> {
    read_field_from(&mut BufReader::new(File::open(path)?))
}

/// A trace together with the boundary description it was recorded on.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub bnd: BoundarySpec,
    pub trace: BoundaryTrace,
}

pub fn write_trace_to(w: &mut impl Write, trace: &BoundaryTrace, bnd: &BoundarySpec) -> Result<()> {
    if trace.n_nodes() != bnd.len() {
        return Err(Error::Dimension(format!(
            "trace has {} nodes, boundary has {}",
            trace.n_nodes(),
            bnd.len()
        )));
    }
    let g = bnd.grid();
    let h = TraceHeader {
        format: "EPT1".into(),
        nt: trace.times().nt(),
        dt: trace.times().dt(),
        n_boundary_nodes: bnd.len(),
        nx: g.nx(),
        ny: g.ny(),
        hx: g.hx(),
        hy: g.hy(),
        origin_x: g.origin()[0],
        origin_y: g.origin()[1],
    };
    writeln!(w, "{}", serde_json::to_string(&h).expect("header serializes"))?;
    for ((node, &lam), &gam) in bnd.nodes().iter().zip(bnd.lambda()).zip(bnd.gamma()) {
        w.write_all(&(node.index as u64).to_le_bytes())?;
        w.write_all(&[node.face.id()])?;
        w.write_all(&lam.to_le_bytes())?;
        w.write_all(&[u8::from(gam)])?;
    }
    write_f64s(w, trace.values())
}

pub fn read_trace_from(r: &mut impl BufRead) -> Result<TraceFile> {
    let h: TraceHeader = parse_header(&read_header_line(r)?, "EPT1")?;
    let grid = h.grid()?;
    let expected = boundary_nodes(&grid);
    if h.n_boundary_nodes != expected.len() {
        return Err(Error::Format(format!(
            "header lists {} boundary nodes, a {}x{} grid has {}",
            h.n_boundary_nodes,
            h.nx,
            h.ny,
            expected.len()
        )));
    }
    let mut lambda = Vec::with_capacity(expected.len());
    let mut gamma = Vec::with_capacity(expected.len());
    let mut rec = [0u8; 18];
    for (b, node) in expected.iter().enumerate() {
        r.read_exact(&mut rec).map_err(|_| Error::Format("node table truncated".into()))?;
        let index = u64::from_le_bytes(rec[0..8].try_into().unwrap());
        let face = Face::from_id(rec[8]).map_err(|e| Error::Format(e.to_string()))?;
        if index != node.index as u64 || face != node.face {
            return Err(Error::Format(format!("node table entry {b} does not match the grid boundary")));
        }
        lambda.push(f64::from_le_bytes(rec[9..17].try_into().unwrap()));
        gamma.push(match rec[17] {
            0 => false,
            1 => true,
            v => return Err(Error::Format(format!("bad observation flag {v} at node {b}"))),
        });
    }
    let bnd = BoundarySpec::new(grid, lambda, gamma).map_err(|e| Error::Format(e.to_string()))?;
    let times = TimeAxis::new(h.dt, h.nt).map_err(|e| Error::Format(e.to_string()))?;
    let values = read_f64s(r, times.levels() * bnd.len())?;
    ensure_eof(r)?;
    let trace = BoundaryTrace::from_values(bnd.len(), times, values)?;
    Ok(TraceFile { bnd, trace })
}

pub fn write_trace(path: impl AsRef<Path>, trace: &BoundaryTrace, bnd: &BoundarySpec) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_trace_to(&mut w, trace, bnd)?;
    w.flush()?;
    Ok(())
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<TraceFile> {
    read_trace_from(&mut BufReader::new(File::open(path)?))
}

#[derive(Debug, Clone, PartialEq)]
pub enum FileHeader {
    Field(FieldHeader),
    Trace(TraceHeader),
}

impl fmt::Display for FileHeader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FileHeader::Field(h) => h.fmt(f),
            FileHeader::Trace(h) => h.fmt(f),
        }
    }
}

/// Reads only the header line, dispatching on the format key.
pub fn read_header(path: impl AsRef<Path>) -> Result<FileHeader> {
    let line = read_header_line(&mut BufReader::new(File::open(path)?))?;
    let v: serde_json::Value =
        serde_json::from_str(&line).map_err(|e| Error::Format(format!("header is not a JSON record: {e}")))?;
    match v.get("format").and_then(|f| f.as_str()) {
        Some("EPF1") => Ok(FileHeader::Field(parse_header(&line, "EPF1")?)),
        Some("EPT1") => Ok(FileHeader::Trace(parse_header(&line, "EPT1")?)),
        Some(other) => Err(Error::Format(format!("unknown format '{other}'"))),
        None => Err(Error::Format("header lacks a format key".into())),
    }
}

/// 8-bit binary PGM with linear min-max scaling; the top image row is the
/// largest `y`. A constant field renders black.
pub fn write_pgm_to(w: &mut impl Write, field: &ScalarField) -> Result<()> {
    let g = field.grid();
    let (lo, hi) = (field.min(), field.max());
    let span = hi - lo;
    write!(w, "P5\n{} {}\n255\n", g.nx(), g.ny())?;
    let mut row = vec![0u8; g.nx()];
    for j in (0..g.ny()).rev() {
        for (i, px) in row.iter_mut().enumerate() {
            *px = if span > 0.0 { ((field.at(i, j) - lo) / span * 255.0).round() as u8 } else { 0 };
        }
        w.write_all(&row)?;
    }
    Ok(())
}

pub fn write_pgm(path: impl AsRef<Path>, field: &ScalarField) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_pgm_to(&mut w, field)?;
    w.flush()?;
    Ok(())
}

/// Writes serializable rows as CSV with a header row.
pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::{GammaSpec, LambdaSpec};
    use std::io::Cursor;

    fn field() -> ScalarField {
        let g = Grid2D::new(5, 4, 0.1, 0.3, [-1.0, 2.5]).unwrap();
        ScalarField::from_fn(g, |x, y| (3.0 * x).sin() * y + 1.0 / 3.0)
    }

    #[test]
    fn field_round_trip_is_bit_exact() {
        let f = field();
        let mut buf = Vec::new();
        write_field_to(&mut buf, &f).unwrap();
        assert_eq!(buf.len() - buf.iter().position(|&b| b == b'\n').unwrap() - 1, 8 * 20);
        let back = read_field_from(&mut Cursor::new(buf)).unwrap();
        assert_eq!(back.grid(), f.grid());
        assert!(back.values().iter().zip(f.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn trace_round_trip_is_bit_exact() {
        let g = Grid2D::unit_square(6).unwrap();
        let lam: LambdaSpec = "faces:right,top:0.7".parse().unwrap();
        let gam: GammaSpec = "faces:right,top,left".parse().unwrap();
        let bnd = BoundarySpec::from_specs(g, &lam, Some(&gam)).unwrap();
        let times = TimeAxis::new(0.013, 7).unwrap();
        let tr = BoundaryTrace::from_fn(bnd.len(), times, |k, b| (k as f64 * 0.3 - b as f64).cos() / 7.0)
            .restricted_to(bnd.gamma());
        let mut buf = Vec::new();
        write_trace_to(&mut buf, &tr, &bnd).unwrap();
        let back = read_trace_from(&mut Cursor::new(buf)).unwrap();
        assert_eq!(back.bnd, bnd);
        assert_eq!(back.trace.times(), tr.times());
        assert!(back.trace.values().iter().zip(tr.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn format_mismatch_and_truncation_are_rejected() {
        let mut buf = Vec::new();
        write_field_to(&mut buf, &field()).unwrap();
        assert!(matches!(read_trace_from(&mut Cursor::new(buf.clone())), Err(Error::Format(_))));
        let mut short = buf.clone();
        short.truncate(buf.len() - 3);
        assert!(matches!(read_field_from(&mut Cursor::new(short)), Err(Error::Format(_))));
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(read_field_from(&mut Cursor::new(long)), Err(Error::Format(_))));
        assert!(read_field_from(&mut Cursor::new(b"P5\n1 1\n255\n\0".to_vec())).is_err());
        let wrong = buf.iter().map(|&b| if b == b'F' { b'X' } else { b }).collect::<Vec<_>>();
        assert!(matches!(read_field_from(&mut Cursor::new(wrong)), Err(Error::Format(_))));
    }

    #[test]
    fn pgm_scales_min_to_black_and_max_to_white() {
        let g = Grid2D::unit_square(3).unwrap();
        let f = ScalarField::from_fn(g, |x, y| x + 2.0 * y);
        let mut buf = Vec::new();
        write_pgm_to(&mut buf, &f).unwrap();
        let header = b"P5\n3 3\n255\n";
        assert_eq!(&buf[..header.len()], header);
        let px = &buf[header.len()..];
        assert_eq!(px.len(), 9);
        // Last row in the file is y = 0.
        assert_eq!(px[6], 0);
        assert_eq!(px[2], 255);
    }
}
