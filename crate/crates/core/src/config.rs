//! Flat `key = value` text files with `#` comments.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct KeyValues {
    path: PathBuf,
    values: BTreeMap<String, (String, usize)>,
    consumed: BTreeSet<String>,
}

fn strip_comment(line: &str) -> &str {
    // `#` opens a comment only at line start or after whitespace; a `#`
    // inside a token is kept.
    let bytes = line.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'#' && (i == 0 || bytes[i - 1].is_ascii_whitespace()) {
            return &line[..i];
        }
    }
    line
}

impl KeyValues {
    pub fn parse(text: &str, path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let mut values = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path,
                    line: line_no,
                    reason: "expected `key = value`".into(),
                });
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Parse {
                    path,
                    line: line_no,
                    reason: "empty key".into(),
                });
            }
            if values
                .insert(key.to_owned(), (value.trim().to_owned(), line_no))
                .is_some()
            {
                return Err(Error::Parse {
                    path,
                    line: line_no,
                    reason: format!("duplicate key `{key}`"),
                });
            }
        }
        Ok(KeyValues {
            path,
            values,
            consumed: BTreeSet::new(),
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn raw(&mut self, key: &str) -> Option<String> {
        self.consumed.insert(key.to_owned());
        self.values.get(key).map(|(v, _)| v.clone())
    }

    pub fn get<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| Error::config(key, format!("`{v}`: {e}"))),
        }
    }

    pub fn get_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Fails on any key that no getter asked for.
    pub fn finish(self) -> Result<()> {
        for (key, (_, line)) in &self.values {
            if !self.consumed.contains(key) {
                return Err(Error::Parse {
                    path: self.path.clone(),
                    line: *line,
                    reason: format!("unknown key `{key}`"),
                });
            }
        }
        Ok(())
    }
}

/// Appends `key = value` lines.
#[derive(Default)]
pub struct KeyValueWriter {
    out: String,
}

impl KeyValueWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn comment(&mut self, text: &str) -> &mut Self {
        self.out.push_str("# ");
        self.out.push_str(text);
        self.out.push('\n');
        self
    }

    pub fn put(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        self.out.push_str(&format!("{key} = {value}\n"));
        self
    }

    pub fn finish(&mut self) -> String {
        std::mem::take(&mut self.out)
    }
}

/// `lo..hi` written as `lo,hi` (inclusive bounds).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Range<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: FromStr + PartialOrd + Copy> FromStr for Range<T>
where
    T::Err: std::fmt::Display,
{
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (a, b) = s
            .split_once(',')
            .ok_or_else(|| "expected `low,high`".to_string())?;
        let lo = a.trim().parse::<T>().map_err(|e| e.to_string())?;
        let hi = b.trim().parse::<T>().map_err(|e| e.to_string())?;
        if hi < lo {
            return Err("empty range (high < low)".into());
        }
        Ok(Range { lo, hi })
    }
}

impl<T: std::fmt::Display> std::fmt::Display for Range<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{}", self.lo, self.hi)
    }
}
