//! Output directory: headered CSV tables written row by row, and a JSON
//! metadata sidecar.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{DeviceConfig, ExperimentConfig, Kind};
use crate::error::CliError;

pub const TOOL: &str = "mist";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

const ROW_MARKER: &str = "# row ";

/// Hash of everything that affects numeric outputs.
pub fn config_hash(cfg: &ExperimentConfig, kind: Kind) -> String {
    let mut c = cfg.clone();
    c.workers = 0;
    c.out_dir = None;
    c.kind = Some(kind);
    let json = serde_json::to_string(&c).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub struct Run {
    pub dir: PathBuf,
    pub kind: Kind,
    pub hash: String,
    numerics: String,
    outputs: Vec<String>,
}

#[derive(Serialize)]
struct Metadata<'a> {
    tool: &'a str,
    version: &'a str,
    kind: &'a str,
    config_sha256: &'a str,
    seed: u64,
    numerics: serde_json::Value,
    device: &'a DeviceConfig,
    status: &'a str,
    outputs: &'a [String],
    summary: serde_json::Value,
}

impl Run {
    pub fn open(dir: &Path, cfg: &ExperimentConfig, kind: Kind) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
        let hash = config_hash(cfg, kind);
        let mut effective = cfg.clone();
        effective.kind = Some(kind);
        let text = toml::to_string(&effective).map_err(|e| CliError::Io(e.to_string()))?;
        fs::write(dir.join("effective_config.toml"), text)?;
        let numerics = serde_json::to_string(&cfg.numerics).expect("numerics serialize");
        Ok(Self {
            dir: dir.to_path_buf(),
            kind,
            hash,
            numerics,
            outputs: Vec::new(),
        })
    }

    fn header(&self, columns: &[&str]) -> String {
        format!(
            "# tool: {TOOL} {VERSION}\n# kind: {}\n# config_sha256: {}\n# numerics: {}\n{}\n",
            self.kind.name(),
            self.hash,
            self.numerics,
            columns.join(",")
        )
    }

    /// Opens a row-incremental table; existing content from the same
    /// configuration is kept up to its last complete row.
    pub fn table(&mut self, name: &str, columns: &[&str]) -> Result<Table, CliError> {
        let path = self.dir.join(name);
        let header = self.header(columns);
        self.outputs.push(name.to_string());
        let mut completed = 0;
        let mut ends = vec![header.len() as u64];
        if path.exists() {
            let text = fs::read_to_string(&path)?;
            if !text.starts_with(&header) {
                return Err(CliError::Config(format!(
                    "{} was written by a different configuration; remove it or choose another output directory",
                    path.display()
                )));
            }
            let mut offset = header.len();
            for line in text[header.len()..].split_inclusive('\n') {
                offset += line.len();
                if !line.ends_with('\n') {
                    break;
                }
                if let Some(k) = line.strip_prefix(ROW_MARKER) {
                    let k: usize = k
                        .trim_end()
                        .strip_suffix(" done")
                        .and_then(|k| k.parse().ok())
                        .ok_or_else(|| CliError::Io(format!("corrupt row marker in {}", path.display())))?;
                    if k != completed {
                        return Err(CliError::Io(format!("row markers out of order in {}", path.display())));
                    }
                    completed += 1;
                    ends.push(offset as u64);
                }
            }
        } else {
            fs::write(&path, &header)?;
        }
        Ok(Table {
            path,
            completed,
            ends,
        })
    }

    /// Writes a complete table in one go.
    pub fn write_table(&mut self, name: &str, columns: &[&str], records: &[Vec<String>]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.tmp"));
        let mut f = File::create(&tmp)?;
        f.write_all(self.header(columns).as_bytes())?;
        f.write_all(&encode(records)?)?;
        f.sync_all()?;
        fs::rename(&tmp, &path)?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        fs::write(self.dir.join(name), text)?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    /// Writes the sidecar with the resolved device block.
    pub fn finish(
        &self,
        cfg: &ExperimentConfig,
        device: &DeviceConfig,
        summary: serde_json::Value,
        complete: bool,
    ) -> Result<(), CliError> {
        let meta = Metadata {
            tool: TOOL,
            version: VERSION,
            kind: self.kind.name(),
            config_sha256: &self.hash,
            seed: cfg.seed,
            numerics: serde_json::to_value(&cfg.numerics).expect("numerics serialize"),
            device,
            status: if complete { "complete" } else { "partial" },
            outputs: &self.outputs,
            summary,
        };
        let text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
        fs::write(self.dir.join("metadata.json"), text + "\n")?;
        Ok(())
    }
}

fn encode(records: &[Vec<String>]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for r in records {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

pub struct Table {
    path: PathBuf,
    completed: usize,
    /// Byte offset after the header and after each complete row.
    ends: Vec<u64>,
}

impl Table {
    pub fn completed(&self) -> usize {
        self.completed
    }

    /// Drops everything after the first `rows` complete rows.
    pub fn truncate_to(&mut self, rows: usize) -> Result<(), CliError> {
        let rows = rows.min(self.completed);
        let f = OpenOptions::new().write(true).open(&self.path)?;
        f.set_len(self.ends[rows])?;
        self.completed = rows;
        self.ends.truncate(rows + 1);
        Ok(())
    }

    /// Appends the records of the next row followed by its completion marker.
    pub fn append_row(&mut self, records: &[Vec<String>]) -> Result<(), CliError> {
        let mut bytes = encode(records)?;
        bytes.extend_from_slice(format!("{ROW_MARKER}{} done\n", self.completed).as_bytes());
        let mut f = OpenOptions::new().append(true).open(&self.path)?;
        f.write_all(&bytes)?;
        f.sync_data()?;
        let end = self.ends.last().copied().unwrap_or(0) + bytes.len() as u64;
        self.ends.push(end);
        self.completed += 1;
        Ok(())
    }
}

/// Number formatting used in every table.
pub fn num(x: f64) -> String {
    format!("{x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scratch(name: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("mist-output-{name}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&d);
        d
    }

    #[test]
    fn resume_truncates_partial_row() {
        let dir = scratch("resume");
        let cfg = ExperimentConfig::default();
        let mut run = Run::open(&dir, &cfg, Kind::FloquetMap).unwrap();
        let mut t = run.table("t.csv", &["a", "b"]).unwrap();
        t.append_row(&[vec!["1".into(), "2".into()]]).unwrap();
        // A torn write after the last marker.
        let mut f = OpenOptions::new().append(true).open(dir.join("t.csv")).unwrap();
        f.write_all(b"3,4\n5,").unwrap();
        drop(f);
        let mut run = Run::open(&dir, &cfg, Kind::FloquetMap).unwrap();
        let mut t = run.table("t.csv", &["a", "b"]).unwrap();
        assert_eq!(t.completed(), 1);
        t.truncate_to(1).unwrap();
        t.append_row(&[vec!["3".into(), "4".into()]]).unwrap();
        let text = fs::read_to_string(dir.join("t.csv")).unwrap();
        assert!(text.ends_with("a,b\n1,2\n# row 0 done\n3,4\n# row 1 done\n"), "{text}");
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn different_config_is_rejected() {
        let dir = scratch("hash");
        let cfg = ExperimentConfig::default();
        let mut run = Run::open(&dir, &cfg, Kind::FloquetMap).unwrap();
        run.table("t.csv", &["a"]).unwrap();
        let mut other = cfg.clone();
        other.seed = 9;
        let mut run = Run::open(&dir, &other, Kind::FloquetMap).unwrap();
        assert!(matches!(run.table("t.csv", &["a"]), Err(CliError::Config(_))));
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn hash_ignores_workers() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.workers = 7;
        b.out_dir = Some("x".into());
        assert_eq!(config_hash(&a, Kind::Spectrum), config_hash(&b, Kind::Spectrum));
    }
}
