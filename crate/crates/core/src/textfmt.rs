//! Plain-text matrix format shared by channel realizations and parameter
//! snapshots.
//!
//! A document is a sequence of named blocks:
//!
//! ```text
//! # comment lines start with '#'
//! matrix H 2 3
//! 1e0,0e0 0e0,-1e0 2.5e-1,5e-1
//! 0e0,0e0 1e0,1e0 -3e0,0e0
//! ```
//!
//! The header gives the block name, row count and column count. Each following
//! line is one row of whitespace-separated `re,im` pairs. Floats are written
//! with the shortest representation that parses back to the identical `f64`,
//! so a write/read cycle is bit-exact. Real matrices use the same layout with
//! `im = 0`.

use std::fmt::Write as _;

use crate::{CMat, Error, RMat, Result, C64};

pub fn write_matrix(out: &mut String, name: &str, m: &CMat) {
    let _ = writeln!(out, "matrix {} {} {}", name, m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        let mut first = true;
        for c in 0..m.ncols() {
            if !first {
                out.push(' ');
            }
            first = false;
            let z = m[(r, c)];
            let _ = write!(out, "{:e},{:e}", z.re, z.im);
        }
        out.push('\n');
    }
}

pub fn write_real_matrix(out: &mut String, name: &str, m: &RMat) {
    write_matrix(out, name, &m.map(|x| C64::new(x, 0.0)));
}

/// Parses every matrix block in `text`, in document order.
pub fn read_matrices(text: &str) -> Result<Vec<(String, CMat)>> {
    let mut blocks = Vec::new();
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    while let Some((lineno, header)) = lines.next() {
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "matrix" {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected `matrix <name> <rows> <cols>`, got `{header}`"),
            });
        }
        let parse_dim = |s: &str| {
            s.parse::<usize>().map_err(|e| Error::Parse {
                line: lineno,
                msg: format!("bad dimension `{s}`: {e}"),
            })
        };
        let rows = parse_dim(parts[2])?;
        let cols = parse_dim(parts[3])?;
        let mut m = CMat::zeros(rows, cols);
        for r in 0..rows {
            let (ln, row) = lines.next().ok_or(Error::Parse {
                line: lineno,
                msg: format!("matrix `{}` truncated after {r} rows", parts[1]),
            })?;
            let entries: Vec<&str> = row.split_whitespace().collect();
            if entries.len() != cols {
                return Err(Error::Parse {
                    line: ln,
                    msg: format!("expected {cols} entries, found {}", entries.len()),
                });
            }
            for (c, e) in entries.iter().enumerate() {
                m[(r, c)] = parse_pair(e).ok_or_else(|| Error::Parse {
                    line: ln,
                    msg: format!("bad complex entry `{e}`"),
                })?;
            }
        }
        blocks.push((parts[1].to_string(), m));
    }
    Ok(blocks)
}

fn parse_pair(s: &str) -> Option<C64> {
    let (re, im) = s.split_once(',')?;
    Some(C64::new(re.parse().ok()?, im.parse().ok()?))
}

/// Looks up a block by name, failing with a parse error if absent.
pub fn take_block(blocks: &mut Vec<(String, CMat)>, name: &str) -> Result<CMat> {
    let idx = blocks
        .iter()
        .position(|(n, _)| n == name)
        .ok_or(Error::Parse {
            line: 0,
            msg: format!("missing matrix `{name}`"),
        })?;
    Ok(blocks.remove(idx).1)
}

/// Converts a block written by [`write_real_matrix`] back to a real matrix.
pub fn to_real(m: &CMat) -> Result<RMat> {
    if m.iter().any(|z| z.im != 0.0) {
        return Err(Error::Parse {
            line: 0,
            msg: "expected a real matrix (all imaginary parts zero)".into(),
        });
    }
    Ok(m.map(|z| z.re))
}
