//! CSV tables and flat binary state snapshots.

use std::fmt::Write as _;
use std::io::{self, Read, Write};

use crate::spectral::{Field, TorusGrid};

/// Comma-separated table with a header row and `\n` line ends.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CsvTable {
    header: Vec<String>,
    body: String,
    rows: usize,
}

impl CsvTable {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self {
            header: header.iter().map(|s| s.as_ref().to_string()).collect(),
            body: String::new(),
            rows: 0,
        }
    }

    pub fn columns(&self) -> usize {
        self.header.len()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Appends a row of numbers, each in shortest round-trip form.
    pub fn push(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.header.len(), "row width does not match the header");
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                self.body.push(',');
            }
            write!(self.body, "{}", Num(*v)).unwrap();
        }
        self.body.push('\n');
        self.rows += 1;
    }

    /// Appends preformatted cells.
    pub fn push_cells<S: AsRef<str>>(&mut self, cells: &[S]) {
        assert_eq!(cells.len(), self.header.len(), "row width does not match the header");
        let line: Vec<&str> = cells.iter().map(|c| c.as_ref()).collect();
        self.body.push_str(&line.join(","));
        self.body.push('\n');
        self.rows += 1;
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        out.push_str(&self.body);
        out
    }

    pub fn write_to(&self, mut w: impl Write) -> io::Result<()> {
        w.write_all(self.to_csv().as_bytes())
    }
}

/// Plain decimal formatting; non-finite values become `nan`, `inf`, `-inf`.
pub struct Num(pub f64);

impl std::fmt::Display for Num {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let v = self.0;
        if v.is_nan() {
            f.write_str("nan")
        } else if v.is_infinite() {
            f.write_str(if v > 0.0 { "inf" } else { "-inf" })
        } else if v == v.trunc() && v.abs() < 1e15 {
            write!(f, "{}", v as i64)
        } else {
            write!(f, "{v:?}")
        }
    }
}

/// Writes the states as physical grid values: a little-endian `u64` point
/// count followed by each state's `n_points` little-endian `f64` values.
pub fn write_snapshot(states: &[Field], mut w: impl Write) -> io::Result<()> {
    let n = states.first().map_or(0, |u| u.grid().n_points());
    w.write_all(&(n as u64).to_le_bytes())?;
    for u in states {
        if u.grid().n_points() != n {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                "snapshot states on different grids",
            ));
        }
        for v in u.to_physical() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_snapshot(mut r: impl Read) -> io::Result<Vec<Field>> {
    let mut head = [0u8; 8];
    r.read_exact(&mut head)?;
    let n = u64::from_le_bytes(head) as usize;
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    if n == 0 {
        return Ok(Vec::new());
    }
    let grid = TorusGrid::new(n).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
    if data.len() % (8 * n) != 0 {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "truncated snapshot"));
    }
    Ok(data
        .chunks_exact(8 * n)
        .map(|chunk| {
            let values: Vec<f64> = chunk
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            Field::from_physical(&grid, &values)
        })
        .collect())
}
