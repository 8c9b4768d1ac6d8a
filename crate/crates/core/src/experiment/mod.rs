//! Experiment orchestration and report plumbing: number formatting, CSV
//! tables, atomic writes and run manifests.

mod dproduct;
mod verify;

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::Result;

pub use dproduct::{dproduct_sweep, rows_table, DproductConfig, DproductRow};
pub use verify::{verify_suite, CheckSummary, VerifyOptions, VerifyReport};

/// Significant digits in every emitted number.
pub const SIG_DIGITS: usize = 12;

/// `v` with [`SIG_DIGITS`] significant digits, trailing zeros trimmed.
pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let exp = v.abs().log10().floor() as i32;
    if (-5..15).contains(&exp) {
        let decimals = (SIG_DIGITS as i32 - 1 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        let s = if s.contains('.') { s.trim_end_matches('0').trim_end_matches('.').to_string() } else { s };
        if s == "-0" { "0".into() } else { s }
    } else {
        format!("{:.*e}", SIG_DIGITS - 1, v)
    }
}

/// `v` rounded to [`SIG_DIGITS`] significant digits.
pub fn round_sig(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{:.*e}", SIG_DIGITS - 1, v).parse().expect("formatted float parses")
}

/// Writes through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    {
        let mut file = std::fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// A CSV table with preformatted cells.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        w.into_inner().map_err(|e| std::io::Error::other(e.to_string()).into())
    }

    /// Whitespace-separated columns with a `#` header, for gnuplot.
    pub fn to_columns(&self) -> String {
        let mut s = format!("# {}\n", self.header.join(" "));
        for r in &self.rows {
            s.push_str(&r.iter().map(|c| if c.is_empty() { "?".to_string() } else { c.replace(',', ";").replace(' ', "_") }).collect::<Vec<_>>().join(" "));
            s.push('\n');
        }
        s
    }
}

fn csv_err(e: csv::Error) -> crate::Error {
    std::io::Error::other(e.to_string()).into()
}

/// Tolerances and caps in force, recorded in every manifest.
#[derive(Debug, Clone, Serialize)]
pub struct Constants {
    pub tol_mass: f64,
    pub eps_slack: f64,
    pub map_cap: u128,
    pub partition_cap: usize,
    pub table_cap: u128,
    pub horizon_factor: f64,
    pub horizon_cap: usize,
    pub label_margin_bits: u32,
    pub sig_digits: usize,
}

impl Default for Constants {
    fn default() -> Self {
        Constants {
            tol_mass: crate::TOL_MASS,
            eps_slack: crate::EPS_SLACK,
            map_cap: crate::bounds::DEFAULT_MAP_CAP,
            partition_cap: crate::protocols::DEFAULT_PARTITION_CAP,
            table_cap: crate::relations::DEFAULT_TABLE_CAP,
            horizon_factor: crate::compression::DEFAULT_HORIZON_FACTOR,
            horizon_cap: crate::compression::DEFAULT_HORIZON_CAP,
            label_margin_bits: crate::compression::LABEL_MARGIN_BITS,
            sig_digits: SIG_DIGITS,
        }
    }
}

/// Everything needed to rerun a command.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest<C: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: C,
    pub constants: Constants,
    pub outputs: Vec<String>,
}

impl<C: Serialize> Manifest<C> {
    pub fn new(command: &str, config: C) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config,
            constants: Constants::default(),
            outputs: Vec::new(),
        }
    }
}

/// Output directory that records what it writes.
pub struct OutDir {
    pub root: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        OutDir { root: root.into(), written: Vec::new() }
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.root.join(name);
        write_atomic(&path, bytes)?;
        self.written.push(name.to_string());
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Writes `manifest.json` listing every file written so far.
    pub fn finish<C: Serialize>(mut self, mut manifest: Manifest<C>) -> Result<PathBuf> {
        manifest.outputs = self.written.clone();
        self.write_json("manifest.json", &manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_digits() {
        assert_eq!(fmt_num(7.0 / 9.0), "0.777777777778");
        assert_eq!(fmt_num(0.5), "0.5");
        assert_eq!(fmt_num(1.0), "1");
        assert_eq!(fmt_num(-2.0 / 3.0), "-0.666666666667");
        assert_eq!(fmt_num(123456.789), "123456.789");
        assert_eq!(fmt_num(1e-9), "1.00000000000e-9");
        assert_eq!(fmt_num(f64::INFINITY), "inf");
        assert_eq!(fmt_num(-1e-30), "-1.00000000000e-30");
        assert_eq!(round_sig(7.0 / 9.0), 0.777777777778);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn csv_quotes_commas() {
        let mut t = Table::new(&["label", "v"]);
        t.push(vec!["random-complete:3,3,2,1,0.5".into(), fmt_num(0.25)]);
        let text = String::from_utf8(t.to_csv().unwrap()).unwrap();
        assert_eq!(text, "label,v\n\"random-complete:3,3,2,1,0.5\",0.25\n");
        assert!(t.to_columns().starts_with("# label v\n"));
    }

    #[test]
    fn manifest_lists_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutDir::new(dir.path());
        out.write("a.csv", b"x\n").unwrap();
        let path = out.finish(Manifest::new("test", serde_json::json!({"seed": 1}))).unwrap();
        let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(m["outputs"], serde_json::json!(["a.csv"]));
        assert_eq!(m["config"]["seed"], 1);
        assert_eq!(m["constants"]["partition_cap"], 12);
    }
}
