//! Signal files: one-value-per-line CSV with a geometry header, and binary PGM.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{MraError, Result};
use crate::signal::{Geometry, Signal};

pub fn geometry_header(g: Geometry) -> String {
    match g {
        Geometry::Line { d } => format!("# geometry=Line d={d}"),
        Geometry::Grid { h, w } => format!("# geometry=Grid h={h} w={w}"),
    }
}

fn parse_header(line: &str) -> Result<Geometry> {
    let body = line
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| MraError::Parse("missing '# geometry=' header".into()))?;
    let mut kind = None;
    let (mut d, mut h, mut w) = (None, None, None);
    for tok in body.split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| MraError::Parse(format!("bad header token '{tok}'")))?;
        let num = || v.parse::<usize>().map_err(|_| MraError::Parse(format!("bad value in '{tok}'")));
        match k {
            "geometry" => kind = Some(v.to_string()),
            "d" => d = Some(num()?),
            "h" => h = Some(num()?),
            "w" => w = Some(num()?),
            _ => return Err(MraError::Parse(format!("unknown header key '{k}'"))),
        }
    }
    match (kind.as_deref(), d, h, w) {
        (Some("Line"), Some(d), None, None) => Ok(Geometry::Line { d }),
        (Some("Grid"), None, Some(h), Some(w)) => Ok(Geometry::Grid { h, w }),
        _ => Err(MraError::Parse(format!("unrecognised geometry header '{}'", line.trim()))),
    }
}

pub fn signal_to_csv(x: &Signal) -> String {
    let mut s = geometry_header(x.geometry());
    s.push('\n');
    for v in x.values() {
        // `{:?}` prints the shortest representation that round-trips.
        s.push_str(&format!("{v:?}\n"));
    }
    s
}

pub fn signal_from_csv(text: &str) -> Result<Signal> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| MraError::Parse("empty signal file".into()))?;
    let geometry = parse_header(header)?;
    let values = lines
        .map(|l| {
            let t = l.trim().trim_end_matches(',');
            t.parse::<f64>().map_err(|_| MraError::Parse(format!("bad value '{t}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    Signal::new(geometry, values)
}

pub fn save_signal_csv(x: &Signal, path: &Path) -> Result<()> {
    fs::write(path, signal_to_csv(x))?;
    Ok(())
}

pub fn load_signal_csv(path: &Path) -> Result<Signal> {
    signal_from_csv(&fs::read_to_string(path)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PgmScaling {
    /// Values in [0, 1] map to [0, 255]; anything outside is clamped.
    Clamp,
    /// The signal's own range maps to [0, 255].
    MinMax,
}

fn skip_ws_and_comments(bytes: &[u8], mut i: usize) -> usize {
    loop {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
        } else {
            return i;
        }
    }
}

fn read_token(bytes: &[u8], i: usize) -> Result<(usize, usize)> {
    let start = skip_ws_and_comments(bytes, i);
    let mut end = start;
    while end < bytes.len() && !bytes[end].is_ascii_whitespace() {
        end += 1;
    }
    let tok = std::str::from_utf8(&bytes[start..end]).map_err(|_| MraError::Parse("bad PGM header".into()))?;
    let v = tok.parse::<usize>().map_err(|_| MraError::Parse(format!("bad PGM header field '{tok}'")))?;
    Ok((v, end))
}

/// Reads a binary P5 graymap with maxval 255 into a grid signal in [0, 1].
pub fn pgm_from_bytes(bytes: &[u8]) -> Result<Signal> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(MraError::Parse("not a binary PGM (P5) file".into()));
    }
    let (w, i) = read_token(bytes, 2)?;
    let (h, i) = read_token(bytes, i)?;
    let (maxval, i) = read_token(bytes, i)?;
    if maxval != 255 {
        return Err(MraError::Parse(format!("PGM maxval {maxval} unsupported (need 255)")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let start = i + 1;
    let need = w * h;
    if bytes.len() < start + need {
        return Err(MraError::Corrupt(format!("PGM raster truncated: need {need} bytes")));
    }
    let values = bytes[start..start + need].iter().map(|&b| b as f64 / 255.0).collect();
    Signal::grid(h, w, values)
}

pub fn pgm_to_bytes(x: &Signal, scaling: PgmScaling) -> Result<Vec<u8>> {
    let (h, w) = match x.geometry() {
        Geometry::Grid { h, w } => (h, w),
        Geometry::Line { .. } => {
            return Err(MraError::UnsupportedGeometry("PGM output needs a grid signal".into()))
        }
    };
    let (lo, hi) = match scaling {
        PgmScaling::Clamp => (0.0, 1.0),
        PgmScaling::MinMax => {
            let lo = x.values().iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = x.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (lo, if hi > lo { hi } else { lo + 1.0 })
        }
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(x.values().iter().map(|v| (((v - lo) / (hi - lo)).clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn load_pgm(path: &Path) -> Result<Signal> {
    pgm_from_bytes(&fs::read(path)?)
}

pub fn save_pgm(x: &Signal, path: &Path, scaling: PgmScaling) -> Result<()> {
    let bytes = pgm_to_bytes(x, scaling)?;
    fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

/// Loads a signal from `.pgm` or the CSV format, chosen by extension.
pub fn load_signal(path: &Path) -> Result<Signal> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => load_pgm(path),
        _ => load_signal_csv(path),
    }
}
