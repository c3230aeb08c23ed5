//! Delimited-text record streams.
//!
//! A stream starts with a preface line `# sqnv-records <version> <kind>`,
//! followed by a CSV header and one row per record. Floats are written with
//! their shortest round-tripping representation.

use std::io::{BufRead, BufReader, Read, Write};

use thiserror::Error;

pub const RECORDS_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing or malformed preface line")]
    BadMagic,
    #[error("unsupported record version {0}")]
    UnsupportedVersion(u32),
    #[error("stream holds {found:?} records, expected {expected:?}")]
    WrongKind { expected: String, found: String },
    #[error("header mismatch: expected {expected:?}, found {found:?}")]
    HeaderMismatch { expected: Vec<String>, found: Vec<String> },
    #[error("row {row}: field {field:?}: {message}")]
    Field { row: usize, field: String, message: String },
}

/// A value that serializes to one row of a record stream.
pub trait Record: Sized {
    const KIND: &'static str;
    fn header() -> Vec<String>;
    fn to_fields(&self) -> Vec<String>;
    fn from_fields(fields: &FieldReader<'_>) -> Result<Self, RecordError>;
}

/// Named access to one parsed row.
pub struct FieldReader<'a> {
    row: usize,
    header: &'a [String],
    values: &'a csv::StringRecord,
}

impl FieldReader<'_> {
    pub fn str(&self, name: &str) -> Result<&str, RecordError> {
        self.header
            .iter()
            .position(|h| h == name)
            .and_then(|i| self.values.get(i))
            .ok_or_else(|| self.err(name, "missing"))
    }

    pub fn f64(&self, name: &str) -> Result<f64, RecordError> {
        let s = self.str(name)?;
        s.parse().map_err(|_| self.err(name, &format!("not a number: {s:?}")))
    }

    /// Empty field reads as `None`.
    pub fn opt_f64(&self, name: &str) -> Result<Option<f64>, RecordError> {
        if self.str(name)?.is_empty() {
            Ok(None)
        } else {
            self.f64(name).map(Some)
        }
    }

    pub fn u64(&self, name: &str) -> Result<u64, RecordError> {
        let s = self.str(name)?;
        s.parse().map_err(|_| self.err(name, &format!("not an integer: {s:?}")))
    }

    pub fn err(&self, field: &str, message: &str) -> RecordError {
        RecordError::Field {
            row: self.row,
            field: field.to_string(),
            message: message.to_string(),
        }
    }
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn fmt_opt_f64(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn write_records<T: Record, W: Write>(mut w: W, records: &[T]) -> Result<(), RecordError> {
    writeln!(w, "# sqnv-records {} {}", RECORDS_VERSION, T::KIND)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(T::header())?;
    for r in records {
        out.write_record(r.to_fields())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records<T: Record, R: Read>(r: R) -> Result<Vec<T>, RecordError> {
    let mut reader = BufReader::new(r);
    let mut preface = String::new();
    reader.read_line(&mut preface)?;
    let parts: Vec<&str> = preface.split_whitespace().collect();
    let [hash, magic, version, kind] = parts[..] else {
        return Err(RecordError::BadMagic);
    };
    if hash != "#" || magic != "sqnv-records" {
        return Err(RecordError::BadMagic);
    }
    let version: u32 = version.parse().map_err(|_| RecordError::BadMagic)?;
    if version != RECORDS_VERSION {
        return Err(RecordError::UnsupportedVersion(version));
    }
    if kind != T::KIND {
        return Err(RecordError::WrongKind {
            expected: T::KIND.to_string(),
            found: kind.to_string(),
        });
    }
    let mut csv_reader = csv::Reader::from_reader(reader);
    let header: Vec<String> = csv_reader.headers()?.iter().map(str::to_string).collect();
    let expected = T::header();
    if header != expected {
        return Err(RecordError::HeaderMismatch { expected, found: header });
    }
    csv_reader
        .records()
        .enumerate()
        .map(|(row, rec)| {
            let values = rec?;
            T::from_fields(&FieldReader {
                row,
                header: &header,
                values: &values,
            })
        })
        .collect()
}

pub fn save_records<T: Record>(path: impl AsRef<std::path::Path>, records: &[T]) -> Result<(), RecordError> {
    let f = std::fs::File::create(path)?;
    write_records(std::io::BufWriter::new(f), records)
}

pub fn load_records<T: Record>(path: impl AsRef<std::path::Path>) -> Result<Vec<T>, RecordError> {
    read_records(std::fs::File::open(path)?)
}
