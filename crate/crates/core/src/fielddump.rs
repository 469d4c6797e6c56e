//! Plain-text `gpfield v1` dumps.
//!
//! ```text
//! gpfield v1 <dim> <n> <L> <real|complex>
//! <value>            (real, one node per line, row-major)
//! <re> <im>          (complex)
//! ```
//!
//! Values are written in shortest round-trip form, so a dump reads back
//! bit-identically.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{ComplexField, Field, Grid, RealField};

const MAGIC: &str = "gpfield";
const VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq)]
pub enum DumpedField {
    Real(RealField),
    Complex(ComplexField),
}

impl DumpedField {
    pub fn into_real(self) -> Result<RealField> {
        match self {
            DumpedField::Real(f) => Ok(f),
            DumpedField::Complex(_) => Err(Error::Parse("expected a real field dump".into())),
        }
    }
}

fn header(grid: &Grid, kind: &str) -> String {
    format!(
        "{MAGIC} {VERSION} {} {} {} {kind}",
        grid.dim(),
        grid.n(),
        grid.extent()
    )
}

pub fn write_real<W: Write>(f: &RealField, mut out: W) -> Result<()> {
    writeln!(out, "{}", header(f.grid(), "real"))?;
    for v in f.values() {
        writeln!(out, "{v:e}")?;
    }
    Ok(())
}

pub fn write_complex<W: Write>(f: &ComplexField, mut out: W) -> Result<()> {
    writeln!(out, "{}", header(f.grid(), "complex"))?;
    for v in f.values() {
        writeln!(out, "{:e} {:e}", v.re, v.im)?;
    }
    Ok(())
}

pub fn save_real(f: &RealField, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_real(f, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn save_complex(f: &ComplexField, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_complex(f, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<DumpedField> {
    read(BufReader::new(File::open(path)?))
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|e| Error::Parse(format!("line {line}: bad number {tok:?}: {e}")))
}

pub fn read<R: BufRead>(input: R) -> Result<DumpedField> {
    let mut lines = input.lines();
    let head = lines
        .next()
        .ok_or_else(|| Error::Parse("empty field dump".into()))??;
    let toks: Vec<&str> = head.split_whitespace().collect();
    if toks.len() != 6 || toks[0] != MAGIC || toks[1] != VERSION {
        return Err(Error::Parse(format!("bad header {head:?}")));
    }
    let dim: usize = toks[2]
        .parse()
        .map_err(|_| Error::Parse(format!("bad dim {:?}", toks[2])))?;
    let n: usize = toks[3]
        .parse()
        .map_err(|_| Error::Parse(format!("bad n {:?}", toks[3])))?;
    let extent = parse_f64(toks[4], 1)?;
    let grid = Grid::new(dim, n, extent)?;
    let complex = match toks[5] {
        "real" => false,
        "complex" => true,
        other => return Err(Error::Parse(format!("unknown field kind {other:?}"))),
    };

    let mut re = Vec::with_capacity(grid.len());
    let mut im = Vec::with_capacity(if complex { grid.len() } else { 0 });
    for (k, line) in lines.enumerate() {
        let line = line?;
        let lineno = k + 2;
        let mut it = line.split_whitespace();
        let Some(first) = it.next() else { continue };
        re.push(parse_f64(first, lineno)?);
        if complex {
            let second = it
                .next()
                .ok_or_else(|| Error::Parse(format!("line {lineno}: missing imaginary part")))?;
            im.push(parse_f64(second, lineno)?);
        }
        if it.next().is_some() {
            return Err(Error::Parse(format!("line {lineno}: trailing tokens")));
        }
    }
    if re.len() != grid.len() {
        return Err(Error::Parse(format!(
            "expected {} nodes, found {}",
            grid.len(),
            re.len()
        )));
    }
    if complex {
        let values = re
            .into_iter()
            .zip(im)
            .map(|(a, b)| Complex64::new(a, b))
            .collect();
        Ok(DumpedField::Complex(Field::new(grid, values)?))
    } else {
        Ok(DumpedField::Real(Field::new(grid, re)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn real_dump_round_trips_bitwise(vals in proptest::collection::vec(-1e6f64..1e6, 12)) {
            let g = Grid::new(1, 12, 0.37).unwrap();
            let f = RealField::new(g, vals).unwrap();
            let mut buf = Vec::new();
            write_real(&f, &mut buf).unwrap();
            let back = read(buf.as_slice()).unwrap().into_real().unwrap();
            prop_assert_eq!(back, f);
        }

        #[test]
        fn complex_dump_round_trips_bitwise(
            re in proptest::collection::vec(-1e3f64..1e3, 64),
            im in proptest::collection::vec(-1e3f64..1e3, 64),
        ) {
            let g = Grid::new(2, 8, 3.25).unwrap();
            let f = ComplexField::new(
                g,
                re.into_iter().zip(im).map(|(a, b)| Complex64::new(a, b)).collect(),
            ).unwrap();
            let mut buf = Vec::new();
            write_complex(&f, &mut buf).unwrap();
            prop_assert_eq!(read(buf.as_slice()).unwrap(), DumpedField::Complex(f));
        }
    }

    #[test]
    fn header_format() {
        let g = Grid::new(1, 8, 10.0).unwrap();
        let mut buf = Vec::new();
        write_real(&RealField::zeros(g), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "gpfield v1 1 8 10 real");
    }

    #[test]
    fn malformed_dumps_are_rejected() {
        assert!(read("gpfield v2 1 8 1 real\n".as_bytes()).is_err());
        assert!(read("gpfield v1 1 8 1 real\n1\n2\n".as_bytes()).is_err());
        assert!(read("gpfield v1 1 8 1 real\n1\n2\n3\n4\n5\n6\n7\nx\n".as_bytes()).is_err());
        assert!(read("gpfield v1 1 8 1 complex\n1\n".as_bytes()).is_err());
    }
}
