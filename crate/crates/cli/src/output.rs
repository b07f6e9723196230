use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::CliError;

/// One named check with its observed value and threshold.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Verdict {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Verdict {
    pub fn new(name: impl Into<String>, value: f64, threshold: f64, pass: bool) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            pass,
        }
    }

    /// Passes when `value <= threshold`; NaN fails.
    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self::new(name, value, threshold, value <= threshold)
    }

    /// Passes when `value >= threshold`; NaN fails.
    pub fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self::new(name, value, threshold, value >= threshold)
    }

    /// Passes when `lo <= value <= hi`; the reported threshold is `hi`.
    pub fn within(name: impl Into<String>, value: f64, lo: f64, hi: f64) -> Self {
        Self::new(name, value, hi, value >= lo && value <= hi)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub config_hash: String,
    pub model: String,
    #[serde(rename = "J")]
    pub j: Option<f64>,
    #[serde(rename = "J_stderr")]
    pub j_stderr: Option<f64>,
    pub residual: Option<f64>,
    pub verdicts: Vec<Verdict>,
    /// Always null: wall-clock time lives in `run.log` only.
    pub runtime_seconds: Option<f64>,
}

impl Summary {
    pub fn pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }
}

/// Float with 17 significant digits.
pub fn float(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Clone, Debug)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Text(String),
    Empty,
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// In-memory CSV table.
#[derive(Clone, Debug)]
pub struct Csv {
    text: String,
    width: usize,
}

impl Csv {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let cols: Vec<&str> = header.iter().map(|s| s.as_ref()).collect();
        Self {
            text: cols.join(",") + "\n",
            width: cols.len(),
        }
    }

    pub fn row(&mut self, cells: Vec<Cell>) {
        debug_assert_eq!(cells.len(), self.width);
        for (i, c) in cells.into_iter().enumerate() {
            if i > 0 {
                self.text.push(',');
            }
            match c {
                Cell::Int(v) => write!(self.text, "{v}").unwrap(),
                Cell::Float(v) => self.text.push_str(&float(v)),
                Cell::Text(v) => self.text.push_str(&v),
                Cell::Empty => {}
            }
        }
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

pub fn verdict_csv(verdicts: &[Verdict]) -> Csv {
    let mut csv = Csv::new(&["name", "value", "threshold", "pass"]);
    for v in verdicts {
        csv.row(vec![
            v.name.as_str().into(),
            v.value.into(),
            v.threshold.into(),
            v.pass.into(),
        ]);
    }
    csv
}

/// Output directory of one run.
pub struct Outputs {
    dir: PathBuf,
    log: Vec<String>,
}

impl Outputs {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            log: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn write(&self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, text)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        self.write(name, &(text + "\n"))
    }

    pub fn csv(&self, name: &str, csv: &Csv) -> Result<(), CliError> {
        self.write(name, csv.as_str())
    }

    pub fn text(&self, name: &str, text: &str) -> Result<(), CliError> {
        self.write(name, text)
    }

    pub fn log(&mut self, line: impl Into<String>) {
        self.log.push(line.into());
    }

    /// Writes `run.log`, the only file allowed to differ between identical runs.
    pub fn finish_log(&self) -> Result<(), CliError> {
        self.write("run.log", &(self.log.join("\n") + "\n"))
    }
}
