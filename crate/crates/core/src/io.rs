//! Field files and run reports.
//!
//! Fields are written either as CSV with a header `i,j[,k],value`, one row per
//! entry in row-major index order, or as an ASCII grid:
//!
//! ```text
//! dims 4 8
//! spacing 0.25 0.25
//! origin 0 -1
//! <values, last index fastest, one line per leading index>
//! ```
//!
//! Cell fields use cell counts and the first cell center as origin, node
//! fields use node counts and the first node, height maps the horizontal
//! axes only. Values are written in shortest round-trip form, so reading a
//! file back gives bit-identical numbers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::config::FieldFormat;
use crate::grid::DomainSpec;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: line {line}: {message}")]
    Format { path: String, line: usize, message: String },
}

impl IoError {
    fn format(path: &Path, line: usize, message: impl Into<String>) -> Self {
        Self::Format { path: path.display().to_string(), line, message: message.into() }
    }
}

/// Where a field lives on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Cells,
    Nodes,
    Columns,
}

/// Index extents, spacings and origin of a field of the given kind.
pub fn layout(spec: &DomainSpec, kind: FieldKind) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let dim = spec.dim();
    let h: Vec<f64> = spec.spacing().to_vec();
    let cells = spec.cells_per_axis();
    match kind {
        FieldKind::Cells => {
            let origin = (0..dim).map(|a| if a + 1 == dim { -1.0 } else { 0.0 } + 0.5 * h[a]).collect();
            (cells.to_vec(), h, origin)
        }
        FieldKind::Nodes => {
            let origin = (0..dim).map(|a| if a + 1 == dim { -1.0 } else { 0.0 }).collect();
            (cells.iter().map(|n| n + 1).collect(), h, origin)
        }
        FieldKind::Columns => {
            let origin = h[..dim - 1].iter().map(|x| 0.5 * x).collect();
            (cells[..dim - 1].to_vec(), h[..dim - 1].to_vec(), origin)
        }
    }
}

/// Storage position of the entry with the given multi-index.
fn storage_index(spec: &DomainSpec, kind: FieldKind, idx: &[usize]) -> usize {
    match kind {
        FieldKind::Cells => spec.cell_index(idx),
        FieldKind::Nodes => spec.node_index(idx),
        FieldKind::Columns => {
            let mut full = idx.to_vec();
            full.push(0);
            spec.cell_index(&full) / spec.n_z()
        }
    }
}

/// Calls `f` with every multi-index in row-major order.
fn for_each_index(dims: &[usize], mut f: impl FnMut(&[usize])) {
    let total: usize = dims.iter().product();
    let mut idx = vec![0; dims.len()];
    for _ in 0..total {
        f(&idx);
        for a in (0..dims.len()).rev() {
            idx[a] += 1;
            if idx[a] < dims[a] {
                break;
            }
            idx[a] = 0;
        }
    }
}

const AXES: [&str; 3] = ["i", "j", "k"];

pub fn format_csv(spec: &DomainSpec, kind: FieldKind, values: &[f64]) -> String {
    let (dims, _, _) = layout(spec, kind);
    let mut s = String::new();
    s.push_str(&AXES[..dims.len()].join(","));
    s.push_str(",value\n");
    for_each_index(&dims, |idx| {
        for i in idx {
            let _ = write!(s, "{i},");
        }
        let _ = writeln!(s, "{:e}", values[storage_index(spec, kind, idx)]);
    });
    s
}

pub fn format_ascii(spec: &DomainSpec, kind: FieldKind, values: &[f64]) -> String {
    let (dims, h, origin) = layout(spec, kind);
    let words = |v: Vec<String>| v.join(" ");
    let mut s = String::new();
    let _ = writeln!(s, "dims {}", words(dims.iter().map(|x| x.to_string()).collect()));
    let _ = writeln!(s, "spacing {}", words(h.iter().map(|x| format!("{x:e}")).collect()));
    let _ = writeln!(s, "origin {}", words(origin.iter().map(|x| format!("{x:e}")).collect()));
    let last = *dims.last().unwrap_or(&1);
    let mut count = 0;
    for_each_index(&dims, |idx| {
        let _ = write!(s, "{:e}", values[storage_index(spec, kind, idx)]);
        count += 1;
        s.push(if count % last == 0 { '\n' } else { ' ' });
    });
    s
}

fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Io { path: path.display().to_string(), source })
}

pub fn parse_csv(spec: &DomainSpec, kind: FieldKind, text: &str, path: &Path) -> Result<Vec<f64>, IoError> {
    let (dims, _, _) = layout(spec, kind);
    let n: usize = dims.iter().product();
    let mut lines = text.lines();
    let header = format!("{},value", AXES[..dims.len()].join(","));
    if lines.next().map(str::trim) != Some(header.as_str()) {
        return Err(IoError::format(path, 1, format!("expected header '{header}'")));
    }
    let mut out = vec![f64::NAN; n];
    let mut seen = vec![false; n];
    let mut rows = 0;
    for (line_no, line) in lines.enumerate().map(|(i, l)| (i + 2, l)) {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != dims.len() + 1 {
            return Err(IoError::format(path, line_no, format!("expected {} columns", dims.len() + 1)));
        }
        let mut idx = Vec::with_capacity(dims.len());
        for (a, p) in parts[..dims.len()].iter().enumerate() {
            match p.parse::<usize>() {
                Ok(i) if i < dims[a] => idx.push(i),
                _ => return Err(IoError::format(path, line_no, format!("bad index '{p}'"))),
            }
        }
        let value: f64 = parts[dims.len()]
            .parse()
            .map_err(|_| IoError::format(path, line_no, format!("bad value '{}'", parts[dims.len()])))?;
        let at = storage_index(spec, kind, &idx);
        if seen[at] {
            return Err(IoError::format(path, line_no, "duplicate index"));
        }
        seen[at] = true;
        out[at] = value;
        rows += 1;
    }
    if rows != n {
        return Err(IoError::format(path, 0, format!("expected {n} rows, found {rows}")));
    }
    Ok(out)
}

pub fn parse_ascii(spec: &DomainSpec, kind: FieldKind, text: &str, path: &Path) -> Result<Vec<f64>, IoError> {
    let (dims, _, _) = layout(spec, kind);
    let mut lines = text.lines();
    let first = lines.next().unwrap_or("");
    let found: Vec<usize> = match first.strip_prefix("dims") {
        Some(rest) => rest.split_whitespace().filter_map(|w| w.parse().ok()).collect(),
        None => return Err(IoError::format(path, 1, "expected 'dims' line")),
    };
    if found != dims {
        return Err(IoError::format(path, 1, format!("dims {found:?} do not match the grid {dims:?}")));
    }
    for (line, key) in [(2, "spacing"), (3, "origin")] {
        if !lines.next().is_some_and(|l| l.starts_with(key)) {
            return Err(IoError::format(path, line, format!("expected '{key}' line")));
        }
    }
    let mut values = Vec::with_capacity(dims.iter().product());
    for (line_no, line) in lines.enumerate().map(|(i, l)| (i + 4, l)) {
        for w in line.split_whitespace() {
            values.push(w.parse::<f64>().map_err(|_| IoError::format(path, line_no, format!("bad value '{w}'")))?);
        }
    }
    let n: usize = dims.iter().product();
    if values.len() != n {
        return Err(IoError::format(path, 0, format!("expected {n} values, found {}", values.len())));
    }
    let mut out = vec![0.0; n];
    let mut it = values.into_iter();
    for_each_index(&dims, |idx| out[storage_index(spec, kind, idx)] = it.next().unwrap_or(f64::NAN));
    Ok(out)
}

pub fn write_field(
    dir: &Path,
    name: &str,
    spec: &DomainSpec,
    kind: FieldKind,
    values: &[f64],
    format: FieldFormat,
) -> Result<(), IoError> {
    let path = dir.join(format!("{name}.{}", format.extension()));
    let text = match format {
        FieldFormat::Csv => format_csv(spec, kind, values),
        FieldFormat::Ascii => format_ascii(spec, kind, values),
    };
    fs::write(&path, text).map_err(|source| IoError::Io { path: path.display().to_string(), source })
}

/// Reads `name.csv` or, failing that, `name.grid` from `dir`.
pub fn read_field(dir: &Path, name: &str, spec: &DomainSpec, kind: FieldKind) -> Result<Vec<f64>, IoError> {
    let csv = dir.join(format!("{name}.csv"));
    if csv.exists() {
        return parse_csv(spec, kind, &read_text(&csv)?, &csv);
    }
    let grid = dir.join(format!("{name}.grid"));
    parse_ascii(spec, kind, &read_text(&grid)?, &grid)
}

/// Key/value report: `key = value` lines with `#` comments, keys in
/// insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    entries: Vec<(String, String)>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    /// Entries under `prefix.`, with the prefix removed.
    pub fn section(&self, prefix: &str) -> Vec<(&str, &str)> {
        let p = format!("{prefix}.");
        self.entries
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(&p).map(|rest| (rest, v.as_str())))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn parse(text: &str) -> Self {
        let entries = text
            .lines()
            .filter(|l| !l.trim_start().starts_with('#'))
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
            .collect();
        Self { entries }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec3() -> DomainSpec {
        DomainSpec::new(&[1.0, 2.0], &[2, 3], 4).unwrap()
    }

    fn ramp(n: usize) -> Vec<f64> {
        (0..n).map(|i| (i as f64).sqrt() - 0.1).collect()
    }

    #[test]
    fn csv_round_trip_all_kinds() {
        for spec in [DomainSpec::two_d(1.0, 3, 4).unwrap(), spec3()] {
            for (kind, n) in [
                (FieldKind::Cells, spec.n_cells()),
                (FieldKind::Nodes, spec.n_nodes()),
                (FieldKind::Columns, spec.n_columns()),
            ] {
                let v = ramp(n);
                let text = format_csv(&spec, kind, &v);
                assert_eq!(text.lines().count(), n + 1);
                assert_eq!(parse_csv(&spec, kind, &text, Path::new("x")).unwrap(), v);
                let text = format_ascii(&spec, kind, &v);
                assert_eq!(parse_ascii(&spec, kind, &text, Path::new("x")).unwrap(), v);
            }
        }
    }

    #[test]
    fn csv_is_row_major_in_grid_indices() {
        let spec = DomainSpec::two_d(1.0, 2, 2).unwrap();
        let v: Vec<f64> = (0..4).map(|c| spec.cell_multi_index(c)[0] as f64 * 10.0 + spec.cell_multi_index(c)[1] as f64).collect();
        let text = format_csv(&spec, FieldKind::Cells, &v);
        let values: Vec<&str> = text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
        assert_eq!(values, ["0e0", "1e0", "1e1", "1.1e1"]);
    }

    #[test]
    fn ascii_header() {
        let spec = DomainSpec::two_d(1.0, 2, 4).unwrap();
        let text = format_ascii(&spec, FieldKind::Cells, &[0.0; 8]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "dims 2 4");
        assert_eq!(lines[1], "spacing 5e-1 5e-1");
        assert_eq!(lines[2], "origin 2.5e-1 -7.5e-1");
        assert_eq!(lines.len(), 5);
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let spec = DomainSpec::two_d(1.0, 2, 2).unwrap();
        let good = format_csv(&spec, FieldKind::Cells, &[1.0, 2.0, 3.0, 4.0]);
        let p = Path::new("f");
        assert!(parse_csv(&spec, FieldKind::Cells, &good.replace("3e0", "abc"), p).is_err());
        assert!(parse_csv(&spec, FieldKind::Cells, &good[..good.len() - 6], p).is_err());
        assert!(parse_csv(&spec, FieldKind::Cells, &good.replace("i,j", "x,y"), p).is_err());
        assert!(parse_csv(&spec, FieldKind::Cells, &good.replace("1,1,", "1,0,"), p).is_err());
        assert!(parse_ascii(&spec, FieldKind::Cells, "dims 2 3\n", p).is_err());
    }

    #[test]
    fn report_round_trip() {
        let mut r = Report::new();
        r.push("config.physics.b", 1.5);
        r.push("result.gap", 1e-12);
        r.push("check.saddle.left", "0 1e-8 pass");
        let back = Report::parse(&format!("# header\n{}", r.to_text()));
        assert_eq!(back, r);
        assert_eq!(back.section("config"), vec![("physics.b", "1.5")]);
        assert_eq!(back.get("result.gap"), Some("0.000000000001"));
    }
}
