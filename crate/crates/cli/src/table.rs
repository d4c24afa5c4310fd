//! CSV artifacts. Floats are printed with nine significant digits so that
//! reruns compare byte-for-byte without hiding real drift.

use std::fs;
use std::path::Path;

use crate::error::{CliError, Result};

/// Formats `x` like C's `%.9g`: nine significant digits, trailing zeros
/// removed, scientific notation outside `[1e-4, 1e9)`.
pub fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.into();
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..9).contains(&exp) {
        format!("{}e{exp}", trim_fraction(mantissa))
    } else {
        let decimals = (8 - exp).max(0) as usize;
        trim_fraction(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// An in-memory table written in one go.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        let mut w = csv::Writer::from_path(path).map_err(|e| CliError::csv(path, e))?;
        w.write_record(&self.header).map_err(|e| CliError::csv(path, e))?;
        for row in &self.rows {
            w.write_record(row).map_err(|e| CliError::csv(path, e))?;
        }
        w.flush().map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| CliError::csv(path, e))?;
        let header = r
            .headers()
            .map_err(|e| CliError::csv(path, e))?
            .iter()
            .map(str::to_string)
            .collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<Vec<Vec<String>>, _>>()
            .map_err(|e| CliError::csv(path, e))?;
        Ok(Table { header, rows })
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Values of column `name`, or a validation error naming `context`.
    pub fn column(&self, name: &str, context: &Path) -> Result<Vec<&str>> {
        let j = self.column_index(name).ok_or_else(|| {
            CliError::validation(format!("{}: missing column {name}", context.display()))
        })?;
        Ok(self.rows.iter().map(|r| r[j].as_str()).collect())
    }

    pub fn float_column(&self, name: &str, context: &Path) -> Result<Vec<f64>> {
        self.column(name, context)?
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                v.parse::<f64>().map_err(|_| {
                    CliError::validation(format!(
                        "{}: line {}: column {name} is not a number: {v:?}",
                        context.display(),
                        i + 2
                    ))
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_float(0.0), "0");
        assert_eq!(fmt_float(-0.0), "0");
        assert_eq!(fmt_float(1.0), "1");
        assert_eq!(fmt_float(-0.92118), "-0.92118");
        assert_eq!(fmt_float(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_float(2.0 / 3.0), "0.666666667");
        assert_eq!(fmt_float(123456789.4), "123456789");
        assert_eq!(fmt_float(1234567890.0), "1.23456789e9");
        assert_eq!(fmt_float(0.0001), "0.0001");
        assert_eq!(fmt_float(0.00001234), "1.234e-5");
        assert_eq!(fmt_float(0.000001234), "1.234e-6");
        assert_eq!(fmt_float(9.9999999999), "10");
        assert_eq!(fmt_float(f64::NAN), "nan");
        assert_eq!(fmt_float(f64::NEG_INFINITY), "-inf");
    }

    #[test]
    fn formatted_value_roundtrips_to_nine_digits() {
        for &x in &[std::f64::consts::PI, -1e-7 * std::f64::consts::E, 6.02214076e23, 0.1 + 0.2] {
            let back: f64 = fmt_float(x).parse().unwrap();
            assert!(((back - x) / x).abs() < 5e-9, "{x} -> {back}");
        }
    }

    #[test]
    fn table_roundtrip_quotes_commas() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/t.csv");
        let mut t = Table::new(&["id", "value"]);
        t.push(vec!["a,b".into(), fmt_float(0.5)]);
        t.push(vec!["c".into(), fmt_float(-2.0)]);
        t.write(&path).unwrap();
        let back = Table::read(&path).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.float_column("value", &path).unwrap(), vec![0.5, -2.0]);
        assert!(back.float_column("id", &path).is_err());
        assert!(back.column("missing", &path).is_err());
    }
}
