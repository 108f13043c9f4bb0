//! Plain-text output formats and their parsers.
//!
//! Field grids:
//!
//! ```text
//! # bounds a1_min a1_max a2_min a2_max
//! # resolution n n
//! v(0,0) v(1,0) ... v(n-1,0)
//! ...
//! ```
//!
//! One row per `α₂` node (ascending), one column per `α₁` node (ascending),
//! masked nodes written as `nan`.
//!
//! Trajectory tables are comma-separated with a header whose first column is
//! `t`. All numbers use 17 significant digits so parsing recovers them
//! bit-exactly.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::snake::{FieldGrid, GridSpec};

fn fmt_value(out: &mut String, v: f64) {
    if v.is_nan() {
        out.push_str("nan");
    } else {
        let _ = write!(out, "{v:.16e}");
    }
}

fn parse_value(token: &str, line: usize) -> Result<f64> {
    token.parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("invalid number {token:?}"),
    })
}

/// Writes `contents` to `path` through a temporary file in the same
/// directory, so readers never observe a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let ctx = || format!("writing {}", path.display());
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(ctx(), e))?;
    tmp.write_all(contents).map_err(|e| Error::io(ctx(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(ctx(), e))?;
    tmp.persist(path).map_err(|e| Error::io(ctx(), e.error))?;
    Ok(())
}

pub fn format_field_grid(grid: &FieldGrid) -> String {
    let spec = grid.spec();
    let n = spec.n;
    let mut out = String::with_capacity(n * n * 25 + 128);
    out.push_str("# bounds");
    for b in [spec.a1_min, spec.a1_max, spec.a2_min, spec.a2_max] {
        out.push(' ');
        fmt_value(&mut out, b);
    }
    let _ = writeln!(out, "\n# resolution {n} {n}");
    for j in 0..n {
        for i in 0..n {
            if i > 0 {
                out.push(' ');
            }
            fmt_value(&mut out, grid.get(i, j).unwrap_or(f64::NAN));
        }
        out.push('\n');
    }
    out
}

pub fn parse_field_grid(text: &str) -> Result<FieldGrid> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut header = |tag: &str| -> Result<(usize, Vec<String>)> {
        let (no, line) = lines.next().ok_or(Error::Parse {
            line: 0,
            message: format!("missing `# {tag}` header"),
        })?;
        let rest = line
            .strip_prefix('#')
            .map(str::trim_start)
            .and_then(|l| l.strip_prefix(tag))
            .ok_or_else(|| Error::Parse {
                line: no,
                message: format!("expected `# {tag} ...`"),
            })?;
        Ok((no, rest.split_whitespace().map(str::to_owned).collect()))
    };

    let (no, bounds) = header("bounds")?;
    if bounds.len() != 4 {
        return Err(Error::Parse {
            line: no,
            message: format!("expected 4 bounds, got {}", bounds.len()),
        });
    }
    let b: Vec<f64> = bounds.iter().map(|t| parse_value(t, no)).collect::<Result<_>>()?;

    let (no, res) = header("resolution")?;
    let dims: Vec<usize> = res
        .iter()
        .map(|t| {
            t.parse::<usize>().map_err(|_| Error::Parse {
                line: no,
                message: format!("invalid resolution {t:?}"),
            })
        })
        .collect::<Result<_>>()?;
    let n = match dims[..] {
        [a, b] if a == b => a,
        _ => {
            return Err(Error::Parse {
                line: no,
                message: "expected `# resolution n n`".into(),
            })
        }
    };
    let spec = GridSpec {
        a1_min: b[0],
        a1_max: b[1],
        a2_min: b[2],
        a2_max: b[3],
        n,
    };
    spec.validate().map_err(|e| Error::Parse {
        line: no,
        message: e.to_string(),
    })?;
    let cells = n.checked_mul(n).ok_or(Error::Parse {
        line: no,
        message: "resolution too large".into(),
    })?;

    let mut values = Vec::with_capacity(cells.min(1 << 20));
    let mut rows = 0;
    for (no, line) in lines {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if rows == n {
            return Err(Error::Parse {
                line: no,
                message: format!("more than {n} data rows"),
            });
        }
        let before = values.len();
        for tok in line.split_whitespace() {
            let v = parse_value(tok, no)?;
            if v.is_nan() {
                values.push(None);
            } else if v.is_finite() {
                values.push(Some(v));
            } else {
                return Err(Error::Parse {
                    line: no,
                    message: format!("non-finite value {tok:?}"),
                });
            }
        }
        if values.len() - before != n {
            return Err(Error::Parse {
                line: no,
                message: format!("expected {n} values, got {}", values.len() - before),
            });
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::Parse {
            line: text.lines().count(),
            message: format!("expected {n} data rows, got {rows}"),
        });
    }
    FieldGrid::new(spec, values)
}

pub fn emit_field_grid(grid: &FieldGrid, path: &Path) -> Result<()> {
    write_atomic(path, format_field_grid(grid).as_bytes())
}

/// Column-labelled numeric samples with time in the first column.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    columns: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl TrajectoryTable {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Result<Self> {
        let columns: Vec<String> = columns.into_iter().map(Into::into).collect();
        if columns.first().map(String::as_str) != Some("t") {
            return Err(Error::InvalidParameter("first column must be `t`".into()));
        }
        for c in &columns {
            if c.is_empty() || c.contains([',', '\n', '\r']) || c.trim() != c {
                return Err(Error::InvalidParameter(format!("invalid column name {c:?}")));
            }
        }
        Ok(Self {
            columns,
            rows: Vec::new(),
        })
    }

    pub fn push(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::InvalidParameter(format!(
                "row has {} values, schema has {} columns",
                row.len(),
                self.columns.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.rows.len() * self.columns.len() * 25 + 64);
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            for (i, &v) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                fmt_value(&mut out, v);
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.split('\n').enumerate().map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)));
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "missing header".into(),
        })?;
        let mut table = Self::new(header.split(',')).map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?;
        for (no, line) in lines {
            if line.is_empty() {
                continue;
            }
            let row: Vec<f64> = line.split(',').map(|t| parse_value(t.trim(), no)).collect::<Result<_>>()?;
            table.push(row).map_err(|e| Error::Parse {
                line: no,
                message: e.to_string(),
            })?;
        }
        Ok(table)
    }
}

pub fn emit_trajectory_csv(table: &TrajectoryTable, path: &Path) -> Result<()> {
    write_atomic(path, table.to_csv().as_bytes())
}

pub fn read_trajectory_csv(path: &Path) -> Result<TrajectoryTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    TrajectoryTable::parse_csv(&text)
}

pub fn read_field_grid(path: &Path) -> Result<FieldGrid> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_field_grid(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::snake::{exterior_derivative_field, ConnectionKind, SnakeParams};
    use proptest::prelude::*;

    #[test]
    fn all_masked_grid() {
        let g = FieldGrid::new(GridSpec::square(1.0, 2), vec![None; 4]).unwrap();
        let text = format_field_grid(&g);
        let data: Vec<&str> = text.lines().skip(2).collect();
        assert_eq!(data, ["nan nan", "nan nan"]);
        assert!(text.starts_with("# bounds "));
        assert!(text.lines().nth(1) == Some("# resolution 2 2"));
        assert_eq!(parse_field_grid(&text).unwrap(), g);
    }

    #[test]
    fn lateral_field_file_is_zero() {
        let f = exterior_derivative_field(ConnectionKind::Internal, 1, &GridSpec::square(2.5, 11), &SnakeParams::default()).unwrap();
        let text = format_field_grid(&f);
        for line in text.lines().skip(2) {
            assert!(line.split(' ').all(|t| t == "nan" || t.parse::<f64>().unwrap() == 0.0));
        }
    }

    #[test]
    fn grid_parse_errors_carry_lines() {
        let bad = "# bounds 0 1 0 1\n# resolution 2 2\n1 2\n3 x\n";
        match parse_field_grid(bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        assert!(parse_field_grid("# bounds 0 1 0 1\n# resolution 2 3\n").is_err());
        assert!(parse_field_grid("# bounds 1 0 0 1\n# resolution 2 2\n1 2\n3 4\n").is_err());
        assert!(parse_field_grid("# bounds 0 1 0 1\n# resolution 2 2\n1 2\n").is_err());
        assert!(parse_field_grid("# bounds 0 1 0 1\n# resolution 2 2\n1 inf\n1 2\n").is_err());
        assert!(parse_field_grid("").is_err());
    }

    #[test]
    fn empty_trajectory_is_header_only() {
        let t = TrajectoryTable::new(["t", "x"]).unwrap();
        assert_eq!(t.to_csv(), "t,x\n");
        assert_eq!(TrajectoryTable::parse_csv("t,x\n").unwrap(), t);
        assert!(TrajectoryTable::new(["x", "t"]).is_err());
    }

    #[test]
    fn csv_errors() {
        assert!(TrajectoryTable::parse_csv("").is_err());
        assert!(TrajectoryTable::parse_csv("t,x\n1,2,3\n").is_err());
        assert!(TrajectoryTable::parse_csv("t,x\n1,abc\n").is_err());
        let mut t = TrajectoryTable::new(["t"]).unwrap();
        assert!(t.push(vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"second");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        let missing = dir.path().join("no/such/dir/out.csv");
        assert!(matches!(write_atomic(&missing, b"x"), Err(Error::Io { .. })));
    }

    proptest! {
        #[test]
        fn csv_roundtrip_is_exact(rows in prop::collection::vec(prop::collection::vec(any::<f64>(), 3), 0..20)) {
            let mut t = TrajectoryTable::new(["t", "a", "b"]).unwrap();
            for r in rows {
                t.push(r).unwrap();
            }
            let back = TrajectoryTable::parse_csv(&t.to_csv()).unwrap();
            prop_assert_eq!(back.rows().len(), t.rows().len());
            for (x, y) in back.rows().iter().zip(t.rows()) {
                for (a, b) in x.iter().zip(y) {
                    prop_assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
                }
            }
        }

        #[test]
        fn grid_roundtrip_is_exact(
            n in 2usize..6,
            seed in prop::collection::vec(prop::option::of(-1e6f64..1e6), 36),
        ) {
            let g = FieldGrid::new(GridSpec::square(2.5, n), seed[..n * n].to_vec()).unwrap();
            prop_assert_eq!(parse_field_grid(&format_field_grid(&g)).unwrap(), g);
        }
    }
}
