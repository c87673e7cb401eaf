//! Versioned, line-oriented text format for fitted models and tables.
//!
//! The first line is `<kind> v<version>`; lines starting with `#` are
//! comments; every other line is a tab-separated record whose first field
//! is its key. Floats use the shortest representation that round-trips.

use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Default)]
pub struct FlatWriter {
    buf: String,
}

impl FlatWriter {
    pub fn new(kind: &str, version: u32) -> Self {
        Self {
            buf: format!("{kind} v{version}\n"),
        }
    }

    pub fn comment(&mut self, text: &str) -> &mut Self {
        self.buf.push_str("# ");
        self.buf.push_str(text);
        self.buf.push('\n');
        self
    }

    pub fn record<I, T>(&mut self, key: &str, fields: I) -> &mut Self
    where
        I: IntoIterator<Item = T>,
        T: Display,
    {
        self.buf.push_str(key);
        for f in fields {
            self.buf.push('\t');
            self.buf.push_str(&f.to_string());
        }
        self.buf.push('\n');
        self
    }

    pub fn finish(self) -> String {
        self.buf
    }

    pub fn save(self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.buf).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct FlatRecord {
    pub line: usize,
    pub key: String,
    pub fields: Vec<String>,
}

impl FlatRecord {
    pub fn parse_at<T: FromStr>(&self, i: usize) -> Result<T> {
        let raw = self.fields.get(i).ok_or_else(|| {
            Error::parse(self.line, format!("`{}` is missing field {i}", self.key))
        })?;
        raw.parse()
            .map_err(|_| Error::parse(self.line, format!("bad value `{raw}` in `{}`", self.key)))
    }

    pub fn parse_all<T: FromStr>(&self, from: usize) -> Result<Vec<T>> {
        (from..self.fields.len())
            .map(|i| self.parse_at(i))
            .collect()
    }
}

#[derive(Debug)]
pub struct FlatReader {
    pub records: Vec<FlatRecord>,
}

impl FlatReader {
    pub fn parse(text: &str, kind: &str, version: u32) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let header = lines.next().map(|(_, l)| l).unwrap_or("");
        let expected = format!("{kind} v{version}");
        if header.trim() != expected {
            return Err(Error::Model(format!(
                "expected header `{expected}`, found `{header}`"
            )));
        }
        let records = lines
            .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
            .map(|(i, l)| {
                let mut parts = l.split('\t').map(str::to_string);
                FlatRecord {
                    line: i + 1,
                    key: parts.next().unwrap_or_default(),
                    fields: parts.collect(),
                }
            })
            .collect();
        Ok(Self { records })
    }

    pub fn load(path: impl AsRef<Path>, kind: &str, version: u32) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, kind, version)
    }

    pub fn all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a FlatRecord> + 'a {
        self.records.iter().filter(move |r| r.key == key)
    }

    pub fn one(&self, key: &str) -> Result<&FlatRecord> {
        self.records
            .iter()
            .find(|r| r.key == key)
            .ok_or_else(|| Error::Model(format!("missing record `{key}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_exactly() {
        let vals = [0.1 + 0.2, -1e-300, 3.0, f64::MIN_POSITIVE, 1.0 / 3.0];
        let mut w = FlatWriter::new("test", 1);
        w.record("v", vals);
        let r = FlatReader::parse(&w.finish(), "test", 1).unwrap();
        let back: Vec<f64> = r.one("v").unwrap().parse_all(0).unwrap();
        assert_eq!(back, vals);
    }

    #[test]
    fn wrong_version_rejected() {
        let w = FlatWriter::new("test", 2);
        assert!(FlatReader::parse(&w.finish(), "test", 1).is_err());
    }
}
