//! Plain-text offset and control-polygon files.
//!
//! ```text
//! units mm            # optional; `units m` scales values by 1000 on read
//! section 0 50
//! 1234.5 0
//! ...
//! ```
//!
//! Control-polygon files use the header `controls <index> <count>`. Values are
//! always written in millimetres with round-trip precision.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use super::{ControlPolygon, Point, SectionOffsets};

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn syntax(line: usize, message: impl Into<String>) -> ParseError {
    ParseError::Syntax { line, message: message.into() }
}

struct Block {
    index: usize,
    points: Vec<Point>,
    header_line: usize,
}

fn parse_blocks(text: &str, keyword: &str) -> Result<Vec<Block>, ParseError> {
    let mut scale = 1.0;
    let mut blocks: Vec<Block> = Vec::new();
    let mut remaining = 0usize;
    let mut saw_data = false;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields[0] == "units" {
            if saw_data {
                return Err(syntax(line_no, "units must precede the first block"));
            }
            scale = match fields.get(1).copied() {
                Some("mm") if fields.len() == 2 => 1.0,
                Some("m") if fields.len() == 2 => 1000.0,
                _ => return Err(syntax(line_no, "expected `units mm` or `units m`")),
            };
            continue;
        }
        saw_data = true;
        if remaining == 0 {
            if fields.len() != 3 || fields[0] != keyword {
                return Err(syntax(line_no, format!("expected `{keyword} <index> <count>`")));
            }
            let index = fields[1]
                .parse::<usize>()
                .map_err(|e| syntax(line_no, format!("bad index: {e}")))?;
            let count = fields[2]
                .parse::<usize>()
                .map_err(|e| syntax(line_no, format!("bad count: {e}")))?;
            if count == 0 {
                return Err(syntax(line_no, "empty block"));
            }
            remaining = count;
            blocks.push(Block { index, points: Vec::with_capacity(count), header_line: line_no });
            continue;
        }
        if fields.len() != 2 {
            return Err(syntax(line_no, "expected `y z`"));
        }
        let parse = |s: &str| -> Result<f64, ParseError> {
            let v = s.parse::<f64>().map_err(|e| syntax(line_no, format!("bad number `{s}`: {e}")))?;
            if v.is_finite() {
                Ok(v * scale)
            } else {
                Err(syntax(line_no, "non-finite value"))
            }
        };
        let p = Point::new(parse(fields[0])?, parse(fields[1])?);
        blocks.last_mut().expect("header seen").points.push(p);
        remaining -= 1;
    }
    if remaining != 0 {
        let header = blocks.last().map_or(0, |b| b.header_line);
        return Err(syntax(header, format!("block truncated, {remaining} points missing")));
    }
    Ok(blocks)
}

/// Parses and validates a multi-section offsets file.
pub fn parse_offsets(text: &str) -> Result<Vec<SectionOffsets>, ParseError> {
    parse_blocks(text, "section")?
        .into_iter()
        .map(|b| {
            SectionOffsets::new(b.index, b.points).map_err(|e| syntax(b.header_line, e.to_string()))
        })
        .collect()
}

pub fn parse_controls(text: &str) -> Result<Vec<ControlPolygon>, ParseError> {
    Ok(parse_blocks(text, "controls")?
        .into_iter()
        .map(|b| ControlPolygon::new(b.index, b.points))
        .collect())
}

fn format_blocks<'a>(keyword: &str, blocks: impl Iterator<Item = (usize, &'a [Point])>) -> String {
    let mut out = String::new();
    for (index, points) in blocks {
        writeln!(out, "{keyword} {index} {}", points.len()).unwrap();
        for p in points {
            writeln!(out, "{:?} {:?}", p.y, p.z).unwrap();
        }
    }
    out
}

pub fn write_offsets(path: &Path, sections: &[SectionOffsets]) -> std::io::Result<()> {
    let text = format_blocks("section", sections.iter().map(|s| (s.section_index(), s.points())));
    std::fs::write(path, text)
}

pub fn write_controls(path: &Path, polygons: &[ControlPolygon]) -> std::io::Result<()> {
    let text = format_blocks("controls", polygons.iter().map(|c| (c.section_index, &c.controls[..])));
    std::fs::write(path, text)
}

pub fn read_offsets(path: &Path) -> Result<Vec<SectionOffsets>, ParseError> {
    parse_offsets(&std::fs::read_to_string(path)?)
}

pub fn read_controls(path: &Path) -> Result<Vec<ControlPolygon>, ParseError> {
    parse_controls(&std::fs::read_to_string(path)?)
}
