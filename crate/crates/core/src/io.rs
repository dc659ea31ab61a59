//! Text and raster output helpers shared by the exporters.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Formats `v` with `digits` significant digits, `%g` style: fixed notation
/// for moderate exponents, scientific otherwise, trailing zeros trimmed.
pub fn fmt_sig(v: f64, digits: usize) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has exponent");
    let exp: i32 = exp.parse().expect("exponent is an integer");
    if exp < -5 || exp >= digits as i32 {
        let mantissa = trim_zeros(mantissa);
        return format!("{mantissa}e{exp}");
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    trim_zeros(&format!("{:.*}", decimals, v)).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Binary PGM (P5). `maxval` above 255 selects 16-bit big-endian samples.
/// Rows are given bottom-up (y increasing) and written top-down.
pub fn write_pgm(path: &Path, width: usize, height: usize, maxval: u16, samples: &[u16]) -> Result<()> {
    if samples.len() != width * height {
        return Err(Error::Shape(format!(
            "raster has {} samples, expected {}x{}",
            samples.len(),
            width,
            height
        )));
    }
    let mut out = format!("P5\n{width} {height}\n{maxval}\n").into_bytes();
    for row in (0..height).rev() {
        for &s in &samples[row * width..(row + 1) * width] {
            let s = s.min(maxval);
            if maxval > 255 {
                out.extend_from_slice(&s.to_be_bytes());
            } else {
                out.push(s as u8);
            }
        }
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Splits a CSV document into a validated header and rows of fields.
pub fn parse_csv<'a>(text: &'a str, header: &str) -> Result<Vec<Vec<&'a str>>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let first = lines.next().ok_or_else(|| Error::Parse("empty CSV".into()))?;
    if first.trim() != header {
        return Err(Error::Parse(format!("unexpected CSV header `{first}`, expected `{header}`")));
    }
    let width = header.split(',').count();
    lines
        .enumerate()
        .map(|(i, l)| {
            let fields: Vec<&str> = l.split(',').map(str::trim).collect();
            if fields.len() != width {
                Err(Error::Parse(format!("CSV row {} has {} fields, expected {width}", i + 2, fields.len())))
            } else {
                Ok(fields)
            }
        })
        .collect()
}

pub fn parse_field<T: std::str::FromStr>(field: &str, what: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::Parse(format!("cannot parse {what} from `{field}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digit_formatting() {
        assert_eq!(fmt_sig(400.0, 9), "400");
        assert_eq!(fmt_sig(-2.214297435588181, 9), "-2.21429744");
        assert_eq!(fmt_sig(0.25, 9), "0.25");
        assert_eq!(fmt_sig(1.5e-7, 9), "1.5e-7");
        assert_eq!(fmt_sig(123456789012.0, 9), "1.23456789e11");
        assert_eq!(fmt_sig(0.0, 9), "0");
        let v = 2958.752417517652;
        let back: f64 = fmt_sig(v, 9).parse().unwrap();
        assert!((back - v).abs() / v < 1e-8);
    }

    #[test]
    fn csv_header_is_checked() {
        assert!(parse_csv("a,b\n1,2\n", "a,b").is_ok());
        assert!(parse_csv("a,c\n1,2\n", "a,b").is_err());
        assert!(parse_csv("a,b\n1\n", "a,b").is_err());
    }
}
