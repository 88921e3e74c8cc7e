//! Text and image serialization for fields, trajectories, stencils and blocks.
//!
//! CSV files are comma-separated with `\n` row terminators and no header.
//! Numbers are written with 17 significant digits so they read back exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::blocks::Block;
use crate::error::{NpdeError, Result};
use crate::grid::{FieldState, Shape};
use crate::solver::Trajectory;
use crate::stencil::{Stencil1D, Stencil2D};

/// 17 significant digits.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

fn push_row(out: &mut String, prefix: Option<usize>, row: &[f64]) {
    if let Some(p) = prefix {
        let _ = write!(out, "{p},");
    }
    for (i, v) in row.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&fmt_num(*v));
    }
    out.push('\n');
}

fn rows_of(field: &FieldState) -> Vec<&[f64]> {
    match field.shape() {
        Shape::D1(_) => vec![field.values()],
        Shape::D2(_, c) => field.values().chunks(c).collect(),
    }
}

/// One line per grid row; a 1D field is a single line.
pub fn field_to_csv(field: &FieldState) -> String {
    let mut out = String::new();
    for row in rows_of(field) {
        push_row(&mut out, None, row);
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<Vec<f64>>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(ln, line)| {
            line.split(',')
                .map(|tok| {
                    tok.trim()
                        .parse::<f64>()
                        .map_err(|e| NpdeError::Parse(format!("line {}: {tok:?}: {e}", ln + 1)))
                })
                .collect()
        })
        .collect()
}

/// Inverse of [`field_to_csv`]: one line gives a 1D field, several a 2D field.
pub fn field_from_csv(text: &str) -> Result<FieldState> {
    let rows = parse_csv(text)?;
    match rows.len() {
        0 => Err(NpdeError::Parse("empty field file".into())),
        1 => FieldState::from_1d(rows.into_iter().next().unwrap_or_default()),
        r => {
            let c = rows[0].len();
            if rows.iter().any(|row| row.len() != c) {
                return Err(NpdeError::Parse("ragged rows".into()));
            }
            FieldState::new(Shape::D2(r, c), rows.concat())
        }
    }
}

/// Single file, each line prefixed with its slice index.
pub fn trajectory_to_csv(traj: &Trajectory) -> String {
    let mut out = String::new();
    for (s, slice) in traj.slices.iter().enumerate() {
        for row in rows_of(slice) {
            push_row(&mut out, Some(s), row);
        }
    }
    out
}

/// Binary 8-bit PGM, values min-max normalized; a constant field maps to 0.
pub fn field_to_pgm(field: &FieldState) -> Result<Vec<u8>> {
    let (r, c) = match field.shape() {
        Shape::D2(r, c) => (r, c),
        Shape::D1(_) => return Err(NpdeError::Unsupported("PGM output needs a 2D field".into())),
    };
    let (lo, hi) = (field.min(), field.max());
    let span = hi - lo;
    let mut out = format!("P5\n{c} {r}\n255\n").into_bytes();
    out.extend(field.values().iter().map(|v| {
        if span > 0.0 {
            (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    Ok(out)
}

pub fn stencil1d_to_csv(s: &Stencil1D) -> String {
    let mut out = String::new();
    push_row(&mut out, None, &s.taps());
    out
}

pub fn stencil2d_to_csv(s: &Stencil2D) -> String {
    let mut out = String::new();
    for row in s.taps() {
        push_row(&mut out, None, &row);
    }
    out
}

pub fn block_to_json(block: &Block) -> Result<String> {
    Ok(serde_json::to_string_pretty(block)? + "\n")
}

pub fn block_from_json(text: &str) -> Result<Block> {
    let block: Block = serde_json::from_str(text)?;
    block.validate()?;
    Ok(block)
}

pub fn save_block(block: &Block, path: &Path) -> Result<()> {
    fs::write(path, block_to_json(block)?)?;
    Ok(())
}

pub fn load_block(path: &Path) -> Result<Block> {
    let text = fs::read_to_string(path).map_err(|e| NpdeError::Io(format!("{}: {e}", path.display())))?;
    block_from_json(&text)
}
