//! Time-series CSV files.
//!
//! Two layouts are accepted. A per-bus file has the header
//! `slot,bus_1,...,bus_n`; a shared file has `slot,value` and is broadcast
//! to every bus. Slots are numbered from 0 and must appear in order.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: row {row}, column {column}: {reason}")]
    MalformedCsv {
        path: PathBuf,
        row: usize,
        column: usize,
        reason: String,
    },
    #[error("{path}: header must be `slot,value` or `slot,bus_1,...,bus_n`, got `{header}`")]
    BadHeader { path: PathBuf, header: String },
    #[error("{path}: expected {expected} buses, file has {got}")]
    BusCount {
        path: PathBuf,
        expected: usize,
        got: usize,
    },
}

/// Column-major profile data as read from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    Shared(Vec<f64>),
    PerBus(Vec<Vec<f64>>),
}

impl Profile {
    pub fn slots(&self) -> usize {
        match self {
            Profile::Shared(v) => v.len(),
            Profile::PerBus(cols) => cols.first().map_or(0, Vec::len),
        }
    }

    /// One vector per bus; a shared column is copied to every bus.
    pub fn per_bus(&self, buses: usize, path: &Path) -> Result<Vec<Vec<f64>>, ProfileError> {
        match self {
            Profile::Shared(v) => Ok(vec![v.clone(); buses]),
            Profile::PerBus(cols) if cols.len() == buses => Ok(cols.clone()),
            Profile::PerBus(cols) => Err(ProfileError::BusCount {
                path: path.to_path_buf(),
                expected: buses,
                got: cols.len(),
            }),
        }
    }
}

pub fn ingest_profiles(path: &Path) -> Result<Profile, ProfileError> {
    let file = std::fs::File::open(path).map_err(|source| ProfileError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_profiles(file, path)
}

pub fn read_profiles<R: Read>(reader: R, path: &Path) -> Result<Profile, ProfileError> {
    let malformed = |row: usize, column: usize, reason: String| ProfileError::MalformedCsv {
        path: path.to_path_buf(),
        row,
        column,
        reason,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| malformed(1, 0, e.to_string()))?
        .clone();
    let names: Vec<&str> = headers.iter().collect();
    let bad_header = || ProfileError::BadHeader {
        path: path.to_path_buf(),
        header: names.join(","),
    };
    let shared = match names.as_slice() {
        ["slot", "value"] => true,
        ["slot", rest @ ..] if !rest.is_empty() => {
            for (k, name) in rest.iter().enumerate() {
                if *name != format!("bus_{}", k + 1) {
                    return Err(bad_header());
                }
            }
            false
        }
        _ => return Err(bad_header()),
    };
    let width = names.len() - 1;
    let mut cols = vec![Vec::new(); width];
    for (r, record) in rdr.records().enumerate() {
        // header is row 1
        let row = r + 2;
        let record = record.map_err(|e| malformed(row, 0, e.to_string()))?;
        if record.len() != width + 1 {
            return Err(malformed(
                row,
                record.len(),
                format!("expected {} fields", width + 1),
            ));
        }
        let slot: usize = record[0]
            .parse()
            .map_err(|_| malformed(row, 1, format!("slot `{}` is not an integer", &record[0])))?;
        if slot != r {
            return Err(malformed(row, 1, format!("expected slot {r}, got {slot}")));
        }
        for (c, col) in cols.iter_mut().enumerate() {
            let cell = &record[c + 1];
            let v: f64 = cell
                .parse()
                .map_err(|_| malformed(row, c + 2, format!("`{cell}` is not a number")))?;
            if !v.is_finite() {
                return Err(malformed(row, c + 2, format!("`{cell}` is not finite")));
            }
            col.push(v);
        }
    }
    Ok(if shared {
        Profile::Shared(cols.pop().unwrap_or_default())
    } else {
        Profile::PerBus(cols)
    })
}

pub fn write_profiles<W: Write>(writer: W, profile: &Profile) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let cols: Vec<&Vec<f64>> = match profile {
        Profile::Shared(v) => {
            w.write_record(["slot", "value"])?;
            vec![v]
        }
        Profile::PerBus(cols) => {
            let mut header = vec!["slot".to_string()];
            header.extend((1..=cols.len()).map(|k| format!("bus_{k}")));
            w.write_record(&header)?;
            cols.iter().collect()
        }
    };
    for t in 0..profile.slots() {
        let mut row = vec![t.to_string()];
        row.extend(cols.iter().map(|c| c[t].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
