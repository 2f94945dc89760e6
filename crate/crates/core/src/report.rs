//! CSV and JSON artifact writers.
//!
//! CSV is comma separated with a header row and LF line endings. Floats carry
//! 12 significant digits.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::Result;

const SIG_DIGITS: i32 = 12;

/// Formats `x` with 12 significant digits, positional where that stays short
/// and scientific otherwise.
pub fn fmt_float(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..15).contains(&exp) {
        let decimals = (SIG_DIGITS - 1 - exp).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{:.*e}", (SIG_DIGITS - 1) as usize, x)
    }
}

/// Renders a header plus records as CSV text.
pub fn csv_string<H, R>(header: &[H], records: R) -> String
where
    H: AsRef<str>,
    R: IntoIterator<Item = Vec<String>>,
{
    let mut out = String::new();
    let head: Vec<&str> = header.iter().map(AsRef::as_ref).collect();
    out.push_str(&head.join(","));
    out.push('\n');
    for rec in records {
        out.push_str(&rec.join(","));
        out.push('\n');
    }
    out
}

pub fn write_csv<H, R>(path: &Path, header: &[H], records: R) -> Result<()>
where
    H: AsRef<str>,
    R: IntoIterator<Item = Vec<String>>,
{
    std::fs::write(path, csv_string(header, records))?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(json_string(value)?.as_bytes())?;
    Ok(())
}
