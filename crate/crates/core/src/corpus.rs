//! JSON-lines corpus of per-file scan records, as collected from participants.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::origin::{OriginMetadata, OriginSource};
use crate::recipe::{final_segment, HashAlgo, Recipe};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub participant: String,
    pub path: String,
    pub size: u64,
    pub mtime: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zone_id: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub referrer_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub host_url: Option<String>,
    /// False for files whose provenance was not part of the metadata tally.
    #[serde(default = "yes", skip_serializing_if = "is_true")]
    pub in_provenance_tally: bool,
}

fn yes() -> bool {
    true
}

fn is_true(b: &bool) -> bool {
    *b
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("reading corpus {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("corpus line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl CorpusRecord {
    pub fn file_name(&self) -> &str {
        final_segment(&self.path)
    }

    /// Lowercase extension without the dot, or empty.
    pub fn extension(&self) -> String {
        match self.file_name().rsplit_once('.') {
            Some((stem, ext)) if !stem.is_empty() => ext.to_ascii_lowercase(),
            _ => String::new(),
        }
    }

    /// Length in characters of the file name without its extension.
    pub fn stem_len(&self) -> usize {
        let name = self.file_name();
        match name.rsplit_once('.') {
            Some((stem, _)) if !stem.is_empty() => stem.chars().count(),
            _ => name.chars().count(),
        }
    }

    pub fn origin(&self) -> Option<OriginMetadata> {
        OriginMetadata::new(self.zone_id, self.referrer_url.clone(), self.host_url.clone(), OriginSource::Ads)
    }

    /// The recipe this file would get, timestamped `now`. `None` without a hash.
    pub fn to_recipe(&self, now: DateTime<Utc>) -> Option<Recipe> {
        Some(Recipe {
            created_at: now,
            last_maintained_at: now,
            referrer_url: self.referrer_url.clone(),
            host_url: self.host_url.clone(),
            original_path: PathBuf::from(&self.path),
            file_name: self.file_name().to_string(),
            size_bytes: self.size,
            hash_full: self.hash.clone()?,
            hash_algo: HashAlgo::Sha256,
            partial_hash: None,
            partial_len: 0,
        })
    }
}

pub fn parse_corpus(reader: impl BufRead) -> Result<Vec<CorpusRecord>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CorpusError::Parse { line: i + 1, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec =
            serde_json::from_str(&line).map_err(|e| CorpusError::Parse { line: i + 1, message: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_corpus(path: &Path) -> Result<Vec<CorpusRecord>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })?;
    parse_corpus(BufReader::new(file))
}

pub fn write_corpus(mut out: impl Write, records: &[CorpusRecord]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
