//! Versioned CSV output and the flat binary snapshot layout.
//!
//! Every CSV file starts with one comment line `# couette-lab <kind> v1`.
//! Readers skip lines starting with `#`. Floats are written in shortest
//! round-trip form, so re-reading reproduces the values bit for bit.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::Result;

pub const FORMAT_VERSION: u32 = 1;

/// CSV writer with the version comment already emitted.
pub fn csv_writer<W: Write>(mut inner: W, kind: &str) -> Result<csv::Writer<W>> {
    writeln!(inner, "# couette-lab {kind} v{FORMAT_VERSION}")?;
    Ok(csv::Writer::from_writer(inner))
}

pub fn write_records<W: Write, T: Serialize>(inner: W, kind: &str, rows: &[T]) -> Result<()> {
    let mut w = csv_writer(inner, kind)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_records_to_path<T: Serialize>(path: &Path, kind: &str, rows: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    write_records(BufWriter::new(File::create(path)?), kind, rows)
}

pub fn read_records<R: Read, T: DeserializeOwned>(inner: R) -> Result<Vec<T>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(inner);
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

pub fn read_records_from_path<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_records(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Row {
        k: i32,
        x: f64,
    }

    #[test]
    fn round_trip_is_exact() {
        let rows = vec![
            Row { k: 1, x: 0.1 + 0.2 },
            Row { k: -3, x: 1.0 / 3.0 },
            Row { k: 0, x: 5e-324 },
        ];
        let mut buf = Vec::new();
        write_records(&mut buf, "test", &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# couette-lab test v1\nk,x\n"));
        let back: Vec<Row> = read_records(&buf[..]).unwrap();
        assert_eq!(back, rows);
    }
}
