//! Delimited text tables in and out.
//!
//! Input tables are comma- or tab-separated (tab when the file ends in
//! `.tsv` or its header line contains a tab), with `#` comment lines and a
//! header row whose first column holds site ids. Output tables start with a
//! `# config: <sha256>` comment followed by a tab-separated header.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{CliError, Result};

#[derive(Debug, Clone)]
pub struct Record {
    /// 1-based line number in the file.
    pub line: u64,
    pub fields: Vec<String>,
}

/// A parsed input table.
#[derive(Debug, Clone)]
pub struct Table {
    pub path: PathBuf,
    pub header: Vec<String>,
    header_line: u64,
    pub records: Vec<Record>,
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn delimiter(path: &Path, text: &str) -> u8 {
    let tsv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("tsv"));
    let header = text
        .lines()
        .find(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .unwrap_or("");
    if tsv || header.contains('\t') {
        b'\t'
    } else {
        b','
    }
}

impl Table {
    pub fn read(path: &Path) -> Result<Table> {
        let text = read_text(path)?;
        Table::parse(path, &text)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Table> {
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(delimiter(path, text))
            .has_headers(false)
            .comment(Some(b'#'))
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        // The reader's positions point before any blank or comment lines it
        // skipped, and its line counter ignores blank lines.
        let line_of = |byte: u64| {
            let mut start = byte as usize;
            loop {
                let rest = &text[start..];
                let end = rest.find('\n');
                let line = &rest[..end.unwrap_or(rest.len())];
                match end {
                    Some(e) if line.trim().is_empty() || line.starts_with('#') => start += e + 1,
                    _ => break,
                }
            }
            text.as_bytes()[..start].iter().filter(|&&b| b == b'\n').count() as u64 + 1
        };
        let mut rows = Vec::new();
        for result in reader.records() {
            let record = result.map_err(|e| {
                let line = e.position().map_or(0, |p| line_of(p.byte()));
                CliError::input(path, line, 1, e.to_string())
            })?;
            let line = record.position().map_or(0, |p| line_of(p.byte()));
            if record.iter().all(str::is_empty) {
                continue;
            }
            rows.push(Record {
                line,
                fields: record.iter().map(str::to_string).collect(),
            });
        }
        let mut rows = rows.into_iter();
        let head = rows
            .next()
            .ok_or_else(|| CliError::input(path, 1, 1, "missing header row"))?;
        let mut seen = HashMap::new();
        for (c, name) in head.fields.iter().enumerate() {
            if name.is_empty() {
                return Err(CliError::input(path, head.line, c as u64 + 1, "empty column name"));
            }
            if let Some(first) = seen.insert(name.as_str(), c) {
                return Err(CliError::input(
                    path,
                    head.line,
                    c as u64 + 1,
                    format!("duplicate column '{name}' (also column {})", first + 1),
                ));
            }
        }
        let width = head.fields.len();
        let records: Vec<Record> = rows.collect();
        for r in &records {
            if r.fields.len() != width {
                let column = r.fields.len().min(width) as u64 + 1;
                return Err(CliError::input(
                    path,
                    r.line,
                    column,
                    format!("expected {width} fields, found {}", r.fields.len()),
                ));
            }
        }
        Ok(Table {
            path: path.to_path_buf(),
            header: head.fields,
            header_line: head.line,
            records,
        })
    }

    /// Fails unless the header has at least `min` columns.
    pub fn require_columns(&self, min: usize, what: &str) -> Result<()> {
        if self.header.len() < min {
            return Err(CliError::input(
                &self.path,
                self.header_line,
                self.header.len() as u64 + 1,
                format!("expected {what}"),
            ));
        }
        Ok(())
    }

    /// Parses field `column` of record `row`, reporting its position on
    /// failure.
    pub fn value<T>(&self, row: usize, column: usize) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        let r = &self.records[row];
        let raw = &r.fields[column];
        raw.parse().map_err(|e| {
            CliError::input(
                &self.path,
                r.line,
                column as u64 + 1,
                format!("column '{}': cannot parse '{raw}': {e}", self.header[column]),
            )
        })
    }

    pub fn error_at(&self, row: usize, column: usize, message: impl Into<String>) -> CliError {
        CliError::input(&self.path, self.records[row].line, column as u64 + 1, message)
    }

    pub fn site_ids(&self) -> Result<Vec<String>> {
        let mut seen = HashMap::new();
        let mut ids = Vec::with_capacity(self.records.len());
        for (i, r) in self.records.iter().enumerate() {
            let id = &r.fields[0];
            if id.is_empty() {
                return Err(self.error_at(i, 0, "empty site id"));
            }
            if let Some(line) = seen.insert(id.clone(), r.line) {
                return Err(self.error_at(i, 0, format!("duplicate site id '{id}' (first on line {line})")));
            }
            ids.push(id.clone());
        }
        Ok(ids)
    }

    /// Row index of each site id.
    pub fn index(&self) -> HashMap<&str, usize> {
        self.records.iter().enumerate().map(|(i, r)| (r.fields[0].as_str(), i)).collect()
    }

    /// Maps the rows of this table onto `sites`, which must be exactly the
    /// sites listed here.
    pub fn align(&self, sites: &[String], reference: &Path) -> Result<Vec<usize>> {
        self.site_ids()?;
        let index = self.index();
        let missing: BTreeSet<&str> = sites
            .iter()
            .map(String::as_str)
            .filter(|s| !index.contains_key(s))
            .collect();
        if !missing.is_empty() {
            return Err(CliError::file(
                &self.path,
                format!(
                    "no rows for {} site(s) of {}: {}",
                    missing.len(),
                    reference.display(),
                    preview(&missing)
                ),
            ));
        }
        if self.records.len() != sites.len() {
            let known: BTreeSet<&str> = sites.iter().map(String::as_str).collect();
            let extra: BTreeSet<&str> = index.keys().copied().filter(|s| !known.contains(s)).collect();
            return Err(CliError::file(
                &self.path,
                format!(
                    "{} site(s) absent from {}: {}",
                    extra.len(),
                    reference.display(),
                    preview(&extra)
                ),
            ));
        }
        Ok(sites.iter().map(|s| index[s.as_str()]).collect())
    }
}

fn preview(names: &BTreeSet<&str>) -> String {
    const SHOWN: usize = 10;
    let mut out: Vec<&str> = names.iter().take(SHOWN).copied().collect();
    if names.len() > SHOWN {
        out.push("...");
    }
    out.join(", ")
}

/// Tab-separated output table with a fingerprint comment.
#[derive(Debug)]
pub struct TableWriter {
    text: String,
    width: usize,
}

impl TableWriter {
    pub fn new<S: AsRef<str>>(fingerprint: &str, header: &[S]) -> Self {
        let mut text = format!("# config: {fingerprint}\n");
        push_row(&mut text, header.iter().map(AsRef::as_ref));
        TableWriter {
            text,
            width: header.len(),
        }
    }

    pub fn row<I>(&mut self, fields: I)
    where
        I: IntoIterator,
        I::Item: Display,
    {
        let fields: Vec<String> = fields.into_iter().map(|f| f.to_string()).collect();
        debug_assert_eq!(fields.len(), self.width);
        push_row(&mut self.text, fields.iter().map(String::as_str));
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, &self.text).map_err(|e| CliError::io(path, e))
    }
}

fn push_row<'a>(text: &mut String, fields: impl Iterator<Item = &'a str>) {
    let mut first = true;
    for f in fields {
        if !first {
            text.push('\t');
        }
        text.push_str(f);
        first = false;
    }
    text.push('\n');
}

/// Formats an optional number, `NA` when absent.
pub fn opt<T: Display>(v: Option<T>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}
