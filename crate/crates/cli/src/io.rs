use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use ndarray::{Array2, ArrayView2};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// A CSV table of numeric features plus the header names.
pub struct Table {
    pub names: Vec<String>,
    pub x: Array2<f64>,
    /// Integer labels of the label column, when one was requested.
    pub labels: Option<Vec<usize>>,
}

/// Writes `bytes` to a temporary sibling of `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

/// `{:.16e}`: 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Serializes through `serde_json::Value`, whose maps are key-sorted.
pub fn to_sorted_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let v = serde_json::to_value(value).map_err(|e| CliError::Internal(e.to_string()))?;
    let mut s = serde_json::to_string_pretty(&v).map_err(|e| CliError::Internal(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_atomic(path, to_sorted_json(value)?.as_bytes())
}

pub struct CsvOut {
    writer: csv::Writer<Vec<u8>>,
}

impl CsvOut {
    pub fn new(header: &[&str]) -> Self {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header).expect("in-memory write");
        CsvOut { writer }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).expect("in-memory write");
    }

    pub fn save(self, path: &Path) -> Result<(), CliError> {
        let bytes = self.writer.into_inner().map_err(|e| CliError::Internal(e.to_string()))?;
        write_atomic(path, &bytes)
    }
}

/// Matrix with a leading `variable` column and columns `prefix1..prefixq`.
pub fn write_matrix(path: &Path, names: &[String], m: ArrayView2<f64>, prefix: &str) -> Result<(), CliError> {
    let mut header = vec!["variable".to_string()];
    header.extend((1..=m.ncols()).map(|c| format!("{prefix}{c}")));
    let mut out = CsvOut::new(&header.iter().map(String::as_str).collect::<Vec<_>>());
    for (name, row) in names.iter().zip(m.rows()) {
        out.row(std::iter::once(name.clone()).chain(row.iter().map(|&v| fmt_f64(v))));
    }
    out.save(path)
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

/// Parses a headered CSV. `label_col` is pulled out as integer labels; columns in
/// `drop` are ignored; every other column must be numeric.
pub fn parse_table(bytes: &[u8], label_col: Option<&str>, drop: &[&str]) -> Result<Table, CliError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Input(format!("bad CSV header: {e}")))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let label_idx = match label_col {
        Some(name) => Some(
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| CliError::Input(format!("label column '{name}' not found")))?,
        ),
        None => None,
    };
    let keep: Vec<usize> = (0..header.len())
        .filter(|&i| Some(i) != label_idx && !drop.contains(&header[i].as_str()))
        .collect();
    if keep.is_empty() {
        return Err(CliError::Input("no feature columns".into()));
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut n = 0;
    for (r, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Input(format!("CSV row {}: {e}", r + 2)))?;
        if rec.len() != header.len() {
            return Err(CliError::Input(format!("CSV row {} has {} fields, header has {}", r + 2, rec.len(), header.len())));
        }
        for &c in &keep {
            let field = rec[c].trim();
            let v: f64 = field
                .parse()
                .map_err(|_| CliError::Input(format!("row {}, column '{}': '{field}' is not a number", r + 2, header[c])))?;
            values.push(v);
        }
        if let Some(l) = label_idx {
            let field = rec[l].trim();
            let g: usize = field
                .parse()
                .ok()
                .filter(|&g| g >= 1)
                .ok_or_else(|| CliError::Input(format!("row {}: label '{field}' is not an integer >= 1", r + 2)))?;
            labels.push(g);
        }
        n += 1;
    }
    if n == 0 {
        return Err(CliError::Input("CSV has no data rows".into()));
    }
    let x = Array2::from_shape_vec((n, keep.len()), values).map_err(|e| CliError::Internal(e.to_string()))?;
    Ok(Table {
        names: keep.iter().map(|&i| header[i].clone()).collect(),
        x,
        labels: label_idx.map(|_| labels),
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Run record written next to every command's outputs.
#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub master_seed: Option<u64>,
    pub input_digests: BTreeMap<String, String>,
    pub tool_version: String,
    pub threads: usize,
    pub started_unix_seconds: u64,
    pub wall_clock_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rng_algorithm: Option<String>,
    pub outputs: Vec<String>,
}

pub struct ManifestBuilder {
    command: String,
    started: Instant,
    started_unix: u64,
    digests: BTreeMap<String, String>,
}

impl ManifestBuilder {
    pub fn start(command: &str) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            started: Instant::now(),
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            digests: BTreeMap::new(),
        }
    }

    /// Reads an input file and records its digest.
    pub fn input(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = read_bytes(path)?;
        self.digests.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    pub fn finish<C: Serialize>(
        self,
        config: &C,
        master_seed: Option<u64>,
        rng_algorithm: Option<&str>,
        outputs: &[PathBuf],
    ) -> Result<RunManifest, CliError> {
        Ok(RunManifest {
            command: self.command,
            config: serde_json::to_value(config).map_err(|e| CliError::Internal(e.to_string()))?,
            master_seed,
            input_digests: self.digests,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            threads: rayon::current_num_threads(),
            started_unix_seconds: self.started_unix,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            rng_algorithm: rng_algorithm.map(str::to_string),
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        })
    }
}
