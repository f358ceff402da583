//! File plumbing shared by every reader and writer.
//!
//! CSV files start with a `# linewatch <kind> v<N>` line; readers skip `#`
//! lines. Structured configs are TOML, with JSON accepted by extension.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(r)
}

pub fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().from_writer(w)
}

pub fn write_schema_line<W: Write>(w: &mut W, kind: &str, version: u32) -> Result<()> {
    writeln!(w, "# linewatch {kind} v{version}").map_err(|e| Error::io("<output>", e))
}

/// Pretty JSON with a trailing newline; field order follows the struct declaration.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_json_string(value)?)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn create_file(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(std::io::BufWriter::new(f))
}

pub fn open_file(path: &Path) -> Result<std::io::BufReader<fs::File>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(std::io::BufReader::new(f))
}

/// Parse a config from TOML, or JSON when the path ends in `.json`.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let is_json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    parse_config(&text, is_json)
}

pub fn parse_config<T: DeserializeOwned>(text: &str, json: bool) -> Result<T> {
    if json {
        Ok(serde_json::from_str(text)?)
    } else {
        Ok(toml::from_str(text)?)
    }
}

pub fn to_toml_string<T: Serialize>(value: &T) -> Result<String> {
    Ok(toml::to_string_pretty(value)?)
}
