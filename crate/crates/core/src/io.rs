//! Line-delimited JSON helpers and artifact provenance metadata.
//!
//! Every JSON-lines artifact starts with a single `{"meta": {...}}` record.
//! Binary and tab-separated artifacts carry the same record in a
//! `<file>.meta.json` sidecar so their on-disk layouts stay fixed.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TOOL_NAME: &str = "vlr";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub artifact: String,
}

impl ArtifactMeta {
    pub fn new(config_hash: &str, seed: u64, artifact: &str) -> Self {
        Self {
            tool: TOOL_NAME.to_owned(),
            version: TOOL_VERSION.to_owned(),
            config_hash: config_hash.to_owned(),
            seed,
            artifact: artifact.to_owned(),
        }
    }
}

#[derive(Serialize)]
struct MetaRecord<'a> {
    meta: &'a ArtifactMeta,
}

pub fn write_meta_line<W: Write>(mut sink: W, meta: &ArtifactMeta) -> Result<()> {
    serde_json::to_writer(&mut sink, &MetaRecord { meta })?;
    sink.write_all(b"\n")?;
    Ok(())
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

pub fn write_sidecar(path: &Path, meta: &ArtifactMeta) -> Result<()> {
    let mut out = serde_json::to_vec_pretty(meta)?;
    out.push(b'\n');
    std::fs::write(sidecar_path(path), out)?;
    Ok(())
}

fn is_meta_line(line: &str) -> bool {
    line.starts_with("{\"meta\":")
}

pub fn open_input(path: &Path) -> Result<BufReader<File>> {
    match File::open(path) {
        Ok(f) => Ok(BufReader::new(f)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(Error::MissingInput(path.to_path_buf()))
        }
        Err(e) => Err(e.into()),
    }
}

pub fn create_output(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Reads records from a JSON-lines stream, skipping blank lines and the
/// metadata record. Record indices are zero-based over data records.
pub fn read_json_lines<T, R>(reader: R) -> Result<Vec<T>>
where
    T: DeserializeOwned,
    R: BufRead,
{
    let mut out = Vec::new();
    for line in data_lines(reader) {
        let (index, line) = line?;
        let record = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            index,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Non-blank, non-metadata lines paired with their data-record index.
pub fn data_lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String)>> {
    reader
        .lines()
        .filter(|line| match line {
            Ok(l) => !l.trim().is_empty() && !is_meta_line(l),
            Err(_) => true,
        })
        .enumerate()
        .map(|(i, line)| line.map(|l| (i, l)).map_err(Error::from))
}

pub fn write_json_lines<'a, T, W, I>(mut sink: W, records: I) -> Result<usize>
where
    T: Serialize + 'a,
    W: Write,
    I: IntoIterator<Item = &'a T>,
{
    let mut n = 0;
    for record in records {
        serde_json::to_writer(&mut sink, record)?;
        sink.write_all(b"\n")?;
        n += 1;
    }
    sink.flush()?;
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn meta_line_is_skipped() {
        let meta = ArtifactMeta::new("abc", 7, "test");
        let mut buf = Vec::new();
        write_meta_line(&mut buf, &meta).unwrap();
        write_json_lines(&mut buf, &[1u32, 2, 3]).unwrap();
        let back: Vec<u32> = read_json_lines(buf.as_slice()).unwrap();
        assert_eq!(back, vec![1, 2, 3]);
    }

    #[test]
    fn sidecar_name() {
        assert_eq!(
            sidecar_path(Path::new("out/index.vlbm")),
            PathBuf::from("out/index.vlbm.meta.json")
        );
    }
}
