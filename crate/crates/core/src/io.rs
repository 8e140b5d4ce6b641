//! Line-oriented quadrature files.
//!
//! ```text
//! fockscope-quad/1
//! #count=3
//! #seed=7
//! #convention=vacuum-variance-half
//! #calibrated=false
//! 12.3456789 -3.00000000
//! ...
//! ```
//!
//! Each record holds the signal quadrature and, optionally, a vacuum
//! reference quadrature from the same segment.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{invalid, Error, Result};

pub const FORMAT_VERSION: &str = "fockscope-quad/1";
pub const CONVENTION: &str = "vacuum-variance-half";
const SIGNIFICANT_DIGITS: i32 = 9;
const RESERVED: [&str; 4] = ["count", "seed", "convention", "calibrated"];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuadratureFile {
    pub seed: Option<u64>,
    pub calibrated: bool,
    pub signal: Vec<f64>,
    pub vacuum: Option<Vec<f64>>,
    /// Additional header entries, written in key order.
    pub extra: BTreeMap<String, String>,
}

/// Nine significant digits, plain decimal unless the magnitude is extreme.
pub fn format_decimal(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let magnitude = v.abs().log10().floor() as i32;
    if !(-6..=15).contains(&magnitude) {
        let decimals = (SIGNIFICANT_DIGITS - 1) as usize;
        return format!("{v:.decimals$e}");
    }
    let decimals = (SIGNIFICANT_DIGITS - 1 - magnitude) as usize;
    format!("{v:.decimals$}")
}

fn parse_error(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

impl QuadratureFile {
    pub fn len(&self) -> usize {
        self.signal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signal.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(v) = &self.vacuum {
            if v.len() != self.signal.len() {
                return Err(invalid("vacuum column length differs from signal column"));
            }
        }
        for key in self.extra.keys() {
            if RESERVED.contains(&key.as_str()) || key.is_empty() || key.contains(['=', '\n']) {
                return Err(invalid(format!("invalid header key {key:?}")));
            }
        }
        if self.extra.values().any(|v| v.contains('\n')) {
            return Err(invalid("header values must be single-line"));
        }
        Ok(())
    }

    pub fn extra_f64(&self, key: &str) -> Option<f64> {
        self.extra.get(key).and_then(|v| v.parse().ok())
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        self.validate()?;
        let mut w = BufWriter::new(w);
        writeln!(w, "{FORMAT_VERSION}")?;
        writeln!(w, "#count={}", self.signal.len())?;
        if let Some(seed) = self.seed {
            writeln!(w, "#seed={seed}")?;
        }
        writeln!(w, "#convention={CONVENTION}")?;
        writeln!(w, "#calibrated={}", self.calibrated)?;
        for (k, v) in &self.extra {
            writeln!(w, "#{k}={v}")?;
        }
        match &self.vacuum {
            Some(vac) => {
                for (s, v) in self.signal.iter().zip(vac) {
                    writeln!(w, "{} {}", format_decimal(*s), format_decimal(*v))?;
                }
            }
            None => {
                for s in &self.signal {
                    writeln!(w, "{}", format_decimal(*s))?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(File::create(path)?)
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, Ok(first))) if first.trim_end() == FORMAT_VERSION => {}
            Some((n, Ok(first))) => {
                return Err(parse_error(n, format!("expected {FORMAT_VERSION:?}, found {first:?}")))
            }
            Some((_, Err(e))) => return Err(e.into()),
            None => return Err(parse_error(1, "empty file")),
        }
        let mut file = QuadratureFile::default();
        let mut count: Option<usize> = None;
        let mut convention = false;
        let mut calibrated: Option<bool> = None;
        let mut columns: Option<usize> = None;
        let mut vacuum = Vec::new();
        let mut last_line = 1;
        for (n, line) in lines {
            let line = line?;
            last_line = n;
            let line = line.trim_end();
            if let Some(header) = line.strip_prefix('#') {
                if columns.is_some() {
                    return Err(parse_error(n, "header line after the first record"));
                }
                let (key, value) = header
                    .split_once('=')
                    .ok_or_else(|| parse_error(n, "header lines must read #key=value"))?;
                match key {
                    "count" => {
                        count = Some(
                            value
                                .parse()
                                .map_err(|_| parse_error(n, format!("bad count {value:?}")))?,
                        )
                    }
                    "seed" => {
                        file.seed = Some(
                            value
                                .parse()
                                .map_err(|_| parse_error(n, format!("bad seed {value:?}")))?,
                        )
                    }
                    "convention" if value == CONVENTION => convention = true,
                    "convention" => return Err(parse_error(n, format!("unsupported convention {value:?}"))),
                    "calibrated" => {
                        calibrated = Some(match value {
                            "true" => true,
                            "false" => false,
                            _ => {
                                return Err(parse_error(
                                    n,
                                    format!("calibrated must be true or false, got {value:?}"),
                                ))
                            }
                        })
                    }
                    _ => {
                        file.extra.insert(key.to_string(), value.to_string());
                    }
                }
                continue;
            }
            if line.is_empty() {
                return Err(parse_error(n, "blank line"));
            }
            let mut values = [0.0; 2];
            let mut k = 0;
            for field in line.split_whitespace() {
                if k == 2 {
                    return Err(parse_error(n, "too many columns"));
                }
                let v: f64 = field
                    .parse()
                    .map_err(|_| parse_error(n, format!("not a number: {field:?}")))?;
                if !v.is_finite() {
                    return Err(parse_error(n, "non-finite value"));
                }
                values[k] = v;
                k += 1;
            }
            match columns {
                None => columns = Some(k),
                Some(c) if c != k => return Err(parse_error(n, format!("expected {c} columns, found {k}"))),
                _ => {}
            }
            file.signal.push(values[0]);
            if k == 2 {
                vacuum.push(values[1]);
            }
        }
        let count = count.ok_or_else(|| parse_error(last_line, "missing #count header"))?;
        if !convention {
            return Err(parse_error(last_line, "missing #convention header"));
        }
        file.calibrated = calibrated.ok_or_else(|| parse_error(last_line, "missing #calibrated header"))?;
        if file.signal.len() != count {
            return Err(parse_error(
                last_line + 1,
                format!("declared {count} records, found {}", file.signal.len()),
            ));
        }
        if columns == Some(2) {
            file.vacuum = Some(vacuum);
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}
