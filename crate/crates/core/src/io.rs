//! File formats: spectroscopy, crossing and shift tables as CSV, shot records
//! as line-delimited JSON, telegraph traces as single-column CSV with a period
//! header. Readers report the offending line and column.

use std::io::{BufRead, Read, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::dynamics::{ShotRecord, TelegraphTrace};
use crate::error::{Error, Result};
use crate::fitting::{Branch, CrossingPoint, ShiftPoint, SpectroscopyTrace};

pub const SPECTROSCOPY_HEADER: [&str; 3] = ["frequency_GHz", "response", "sigma"];
pub const CROSSING_HEADER: [&str; 4] = ["current_A", "frequency_GHz", "branch", "set"];
pub const SHIFT_HEADER: [&str; 4] = ["nu01_bar_GHz", "shift_kHz", "transition", "sigma_kHz"];
const TRACE_PREFIX: &str = "# period_s=";

fn parse_err(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column,
        message: message.into(),
    }
}

struct Table {
    header: Vec<String>,
    /// `(line, fields)`
    rows: Vec<(usize, Vec<String>)>,
}

fn read_table<R: Read>(reader: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| parse_err(1, 1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, 1, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(Table { header, rows })
}

fn check_header(t: &Table, expected: &[&str], required: usize) -> Result<()> {
    if t.header.len() < required || t.header.len() > expected.len() {
        return Err(parse_err(
            1,
            1,
            format!("expected {required} to {} columns ({}), found {}", expected.len(), expected.join(","), t.header.len()),
        ));
    }
    for (k, h) in t.header.iter().enumerate() {
        if h != expected[k] {
            return Err(parse_err(1, k + 1, format!("expected column {:?}, found {h:?}", expected[k])));
        }
    }
    Ok(())
}

fn field<'a>(fields: &'a [String], line: usize, col: usize, width: usize) -> Result<&'a str> {
    if fields.len() != width {
        return Err(parse_err(line, fields.len().min(width) + 1, format!("expected {width} fields, found {}", fields.len())));
    }
    Ok(fields[col].as_str())
}

fn number(fields: &[String], line: usize, col: usize, width: usize) -> Result<f64> {
    let s = field(fields, line, col, width)?;
    let v: f64 = s
        .parse()
        .map_err(|_| parse_err(line, col + 1, format!("{s:?} is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(line, col + 1, "value is not finite"));
    }
    Ok(v)
}

/// Columns `frequency_GHz,response[,sigma]`.
pub fn read_spectroscopy<R: Read>(reader: R) -> Result<SpectroscopyTrace> {
    let t = read_table(reader)?;
    check_header(&t, &SPECTROSCOPY_HEADER, 2)?;
    let w = t.header.len();
    let mut freqs = Vec::with_capacity(t.rows.len());
    let mut response = Vec::with_capacity(t.rows.len());
    let mut sigma = Vec::new();
    for (line, f) in &t.rows {
        let fr = number(f, *line, 0, w)?;
        if let Some(&prev) = freqs.last() {
            if !(fr > prev) {
                return Err(parse_err(*line, 1, "frequencies must be strictly increasing"));
            }
        }
        let r = number(f, *line, 1, w)?;
        if !(0.0..=1.0).contains(&r) {
            return Err(parse_err(*line, 2, format!("response {r} outside [0, 1]")));
        }
        if w == 3 {
            let s = number(f, *line, 2, w)?;
            if s <= 0.0 {
                return Err(parse_err(*line, 3, "sigma must be > 0"));
            }
            sigma.push(s);
        }
        freqs.push(fr);
        response.push(r);
    }
    SpectroscopyTrace::new(freqs, response, (w == 3).then_some(sigma))
}

pub fn write_spectroscopy<W: Write>(writer: W, trace: &SpectroscopyTrace) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let has_sigma = trace.noise_sigma.is_some();
    let cols = if has_sigma { 3 } else { 2 };
    w.write_record(&SPECTROSCOPY_HEADER[..cols]).map_err(csv_io)?;
    for k in 0..trace.len() {
        let mut row = vec![fmt(trace.freqs[k]), fmt(trace.response[k])];
        if let Some(s) = &trace.noise_sigma {
            row.push(fmt(s[k]));
        }
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `current_A,frequency_GHz,branch,set`; `set` may be omitted.
pub fn read_crossing<R: Read>(reader: R) -> Result<Vec<CrossingPoint>> {
    let t = read_table(reader)?;
    check_header(&t, &CROSSING_HEADER, 3)?;
    let w = t.header.len();
    t.rows
        .iter()
        .map(|(line, f)| {
            let branch = match field(f, *line, 2, w)? {
                "upper" => Branch::Upper,
                "lower" => Branch::Lower,
                s => return Err(parse_err(*line, 3, format!("branch {s:?} is not upper or lower"))),
            };
            let set = if w == 4 {
                let s = field(f, *line, 3, w)?;
                s.parse()
                    .map_err(|_| parse_err(*line, 4, format!("set {s:?} is not a non-negative integer")))?
            } else {
                0
            };
            Ok(CrossingPoint {
                current: number(f, *line, 0, w)?,
                frequency: number(f, *line, 1, w)?,
                branch,
                set,
            })
        })
        .collect()
}

pub fn write_crossing<W: Write>(writer: W, points: &[CrossingPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CROSSING_HEADER).map_err(csv_io)?;
    for p in points {
        let b = match p.branch {
            Branch::Upper => "upper",
            Branch::Lower => "lower",
        };
        w.write_record([fmt(p.current), fmt(p.frequency), b.to_string(), p.set.to_string()])
            .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_transition(s: &str) -> Option<(usize, usize)> {
    let (a, b) = s.split_once('-')?;
    let (a, b) = (a.parse().ok()?, b.parse().ok()?);
    (b > a).then_some((a, b))
}

/// Columns `nu01_bar_GHz,shift_kHz,transition[,sigma_kHz]`, transition as `0-1`.
pub fn read_shift_points<R: Read>(reader: R) -> Result<Vec<ShiftPoint>> {
    let t = read_table(reader)?;
    check_header(&t, &SHIFT_HEADER, 3)?;
    let w = t.header.len();
    t.rows
        .iter()
        .map(|(line, f)| {
            let tr = field(f, *line, 2, w)?;
            let transition = parse_transition(tr)
                .ok_or_else(|| parse_err(*line, 3, format!("transition {tr:?} is not of the form i-j with j > i")))?;
            let sigma = if w == 4 && !f[3].is_empty() {
                let s = number(f, *line, 3, w)?;
                if s <= 0.0 {
                    return Err(parse_err(*line, 4, "sigma must be > 0"));
                }
                Some(s * 1e-6)
            } else {
                None
            };
            Ok(ShiftPoint {
                nu01_bar: number(f, *line, 0, w)?,
                shift: number(f, *line, 1, w)? * 1e-6,
                transition,
                sigma,
            })
        })
        .collect()
}

pub fn write_shift_points<W: Write>(writer: W, points: &[ShiftPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SHIFT_HEADER).map_err(csv_io)?;
    for p in points {
        w.write_record([
            fmt(p.nu01_bar),
            fmt(p.shift * 1e6),
            format!("{}-{}", p.transition.0, p.transition.1),
            p.sigma.map(|s| fmt(s * 1e6)).unwrap_or_default(),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

/// One [`ShotRecord`] per line; blank lines are skipped.
pub fn read_shots<R: BufRead>(reader: R) -> Result<Vec<ShotRecord>> {
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ShotRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(k + 1, e.column(), e.to_string()))?;
        if !(rec.delay_s.is_finite() && rec.delay_s >= 0.0) {
            return Err(parse_err(k + 1, 1, "delay_s must be >= 0"));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_shots<W: Write>(mut writer: W, records: &[ShotRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

/// First line `# period_s=<seconds>`, optional `value` header, then one 0/1 per line.
pub fn read_trace<R: BufRead>(reader: R) -> Result<TelegraphTrace> {
    let mut lines = reader.lines();
    let first = lines
        .next()
        .transpose()?
        .ok_or_else(|| parse_err(1, 1, "empty trace file"))?;
    let period: f64 = first
        .trim()
        .strip_prefix(TRACE_PREFIX)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| parse_err(1, 1, format!("expected \"{TRACE_PREFIX}<seconds>\"")))?;
    if !(period.is_finite() && period > 0.0) {
        return Err(parse_err(1, TRACE_PREFIX.len() + 1, "period must be > 0"));
    }
    let mut values = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        let s = line.trim();
        let n = k + 2;
        match s {
            "" => continue,
            "value" if n == 2 => continue,
            "0" => values.push(0),
            "1" => values.push(1),
            _ => return Err(parse_err(n, 1, format!("{s:?} is not 0 or 1"))),
        }
    }
    TelegraphTrace::new(values, period)
}

pub fn write_trace<W: Write>(mut writer: W, trace: &TelegraphTrace) -> Result<()> {
    writeln!(writer, "{TRACE_PREFIX}{}", fmt(trace.period))?;
    writeln!(writer, "value")?;
    let mut buf = Vec::with_capacity(trace.len() * 2);
    for &v in &trace.values {
        buf.push(b'0' + v);
        buf.push(b'\n');
    }
    writer.write_all(&buf)?;
    writer.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned, R: Read>(reader: R) -> Result<T> {
    serde_json::from_reader(reader).map_err(|e| parse_err(e.line(), e.column(), e.to_string()))
}

pub fn write_json<T: Serialize, W: Write>(mut writer: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut writer, value)?;
    writer.write_all(b"\n")?;
    writer.flush()?;
    Ok(())
}

/// Shortest representation that round-trips.
fn fmt(v: f64) -> String {
    format!("{v:?}")
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}
