//! Plain-text field formats.
//!
//! CSV: an optional `# field height=H width=W` header, then one line per grid
//! row with comma separated values in shortest round-trip notation, newline
//! terminated. Reading back is bit exact. With a header present, a missing
//! row or a missing final newline is reported as truncation.
//!
//! PGM: ASCII `P2` with maxval 10000; pixel = round(temperature * 100), so
//! reading back is exact to within 0.005 degrees for values in [0, 100].
//! Values outside that range are clamped on write.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::TemperatureField;
use crate::error::{Error, Result};

pub const PGM_MAXVAL: u32 = 10_000;
const PGM_SCALE: f64 = 100.0;

/// Dispatches on the file extension (`.pgm` or anything else as CSV).
pub fn write_field(field: &TemperatureField, path: &Path) -> Result<()> {
    match extension(path).as_deref() {
        Some("pgm") => write_field_pgm(field, path),
        _ => write_field_csv(field, path),
    }
}

pub fn read_field(path: &Path) -> Result<TemperatureField> {
    match extension(path).as_deref() {
        Some("pgm") => read_field_pgm(path),
        _ => read_field_csv(path),
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase())
}

pub(crate) fn field_to_csv(field: &TemperatureField) -> String {
    let mut out = format!("# field height={} width={}\n", field.height(), field.width());
    for row in field.values().chunks(field.width()) {
        for (k, v) in row.iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            write!(out, "{v:?}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_field_csv(field: &TemperatureField, path: &Path) -> Result<()> {
    fs::write(path, field_to_csv(field)).map_err(|e| Error::io(path, e))
}

pub fn read_field_csv(path: &Path) -> Result<TemperatureField> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, path)
}

pub(crate) fn parse_csv(text: &str, path: &Path) -> Result<TemperatureField> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut declared: Option<(usize, usize)> = None;
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0usize;
    let mut last_line = 0;
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        last_line = lineno;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if rows == 0 && declared.is_none() {
                declared = parse_header(comment).map_err(|m| err(lineno, m))?;
            }
            continue;
        }
        let mut count = 0;
        for cell in line.split(',') {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| err(lineno, format!("not a number: {:?}", cell.trim())))?;
            values.push(v);
            count += 1;
        }
        match width {
            None => width = Some(count),
            Some(w) if w != count => {
                return Err(err(lineno, format!("expected {w} columns, found {count}")));
            }
            _ => {}
        }
        rows += 1;
    }
    let width = width.ok_or_else(|| err(last_line.max(1), "no data rows".into()))?;
    if let Some((h, w)) = declared {
        if !text.ends_with('\n') {
            return Err(err(last_line, "missing final newline (truncated file?)".into()));
        }
        if h != rows || w != width {
            return Err(err(
                last_line,
                format!("header declares {h}x{w} but file holds {rows}x{width}"),
            ));
        }
    }
    TemperatureField::new(rows, width, values)
}

fn parse_header(comment: &str) -> std::result::Result<Option<(usize, usize)>, String> {
    let mut words = comment.split_whitespace();
    if words.next() != Some("field") {
        return Ok(None);
    }
    let mut h = None;
    let mut w = None;
    for word in words {
        let (key, value) = word
            .split_once('=')
            .ok_or_else(|| format!("malformed header entry {word:?}"))?;
        let value: usize = value
            .parse()
            .map_err(|_| format!("malformed header value {value:?}"))?;
        match key {
            "height" => h = Some(value),
            "width" => w = Some(value),
            _ => return Err(format!("unknown header key {key:?}")),
        }
    }
    match (h, w) {
        (Some(h), Some(w)) => Ok(Some((h, w))),
        _ => Err("header must declare height and width".into()),
    }
}

pub(crate) fn field_to_pgm(field: &TemperatureField) -> String {
    let mut out = format!("P2\n{} {}\n{}\n", field.width(), field.height(), PGM_MAXVAL);
    for row in field.values().chunks(field.width()) {
        for (k, v) in row.iter().enumerate() {
            if k > 0 {
                out.push(' ');
            }
            let px = (v * PGM_SCALE).round().clamp(0.0, PGM_MAXVAL as f64) as u32;
            write!(out, "{px}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_field_pgm(field: &TemperatureField, path: &Path) -> Result<()> {
    fs::write(path, field_to_pgm(field)).map_err(|e| Error::io(path, e))
}

pub fn read_field_pgm(path: &Path) -> Result<TemperatureField> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&text, path)
}

pub(crate) fn parse_pgm(text: &str, path: &Path) -> Result<TemperatureField> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut tokens = text.lines().enumerate().flat_map(|(idx, line)| {
        let line = line.split('#').next().unwrap_or("");
        line.split_whitespace().map(move |t| (idx + 1, t))
    });
    let last_line = text.lines().count().max(1);
    let mut next = |what: &str| {
        tokens
            .next()
            .ok_or_else(|| err(last_line, format!("unexpected end of file, expected {what}")))
    };

    let (line, magic) = next("magic")?;
    if magic != "P2" {
        return Err(err(line, format!("expected P2 magic, found {magic:?}")));
    }
    let mut header_num = |what: &str| -> Result<usize> {
        let (line, tok) = next(what)?;
        tok.parse()
            .map_err(|_| err(line, format!("invalid {what}: {tok:?}")))
    };
    let width = header_num("width")?;
    let height = header_num("height")?;
    let maxval = header_num("maxval")?;
    if maxval != PGM_MAXVAL as usize {
        return Err(err(1, format!("maxval must be {PGM_MAXVAL}, found {maxval}")));
    }
    let mut values = Vec::with_capacity(width * height);
    for _ in 0..width * height {
        let (line, tok) = next("pixel")?;
        let px: u32 = tok
            .parse()
            .map_err(|_| err(line, format!("invalid pixel {tok:?}")))?;
        if px > PGM_MAXVAL {
            return Err(err(line, format!("pixel {px} exceeds maxval")));
        }
        values.push(px as f64 / PGM_SCALE);
    }
    if let Ok((line, tok)) = next("end of file") {
        return Err(err(line, format!("trailing data {tok:?}")));
    }
    TemperatureField::new(height, width, values)
}
