//! JSON-lines helpers.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

/// Reads one JSON value per non-empty line. Parse failures are reported as
/// `InvalidData` with the path and line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> io::Result<Vec<T>> {
    let file = File::open(path).map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    parse_jsonl(BufReader::new(file), &path.display().to_string())
}

pub fn parse_jsonl<T: DeserializeOwned>(reader: impl BufRead, name: &str) -> io::Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{name}:{}: {e}", i + 1)))?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    to_jsonl(&mut w, items)?;
    w.flush()
}

pub fn to_jsonl<T: Serialize>(w: &mut impl Write, items: &[T]) -> io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut *w, item)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> io::Result<T> {
    let text =
        std::fs::read_to_string(path).map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_line_numbers() {
        let mut buf = Vec::new();
        to_jsonl(&mut buf, &[1, 2, 3]).unwrap();
        let back: Vec<i32> = parse_jsonl(&buf[..], "mem").unwrap();
        assert_eq!(back, vec![1, 2, 3]);
        let err = parse_jsonl::<i32>(&b"1\n\nx\n"[..], "mem").unwrap_err();
        assert_eq!(err.kind(), io::ErrorKind::InvalidData);
        assert!(err.to_string().contains("mem:3"));
    }
}
