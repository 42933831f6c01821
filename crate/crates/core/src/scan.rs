//! Largest-file scan with provenance, and drive statistics.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::origin::{read_origin, OriginMetadata, OriginOptions};

/// Number of files reported when the caller does not say.
pub const DEFAULT_TOP_N: usize = 25;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub size_bytes: u64,
    pub modified_at: DateTime<Utc>,
    pub origin: Option<OriginMetadata>,
}

/// An entry the walk could not read.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedEntry {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanResult {
    /// Largest files first; ties in ascending path byte order.
    pub records: Vec<FileRecord>,
    pub skipped: Vec<SkippedEntry>,
    /// Regular files seen (readable or not).
    pub files_seen: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriveInfo {
    pub used_bytes: u64,
    /// Space available to unprivileged users.
    pub free_bytes: u64,
    pub capacity_bytes: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum ScanError {
    #[error("scan root {path}: {source}")]
    Root { path: PathBuf, source: io::Error },
    #[error("scan root {0} is not a directory")]
    NotADirectory(PathBuf),
    #[error("top count must be at least 1")]
    ZeroCount,
    #[error("volume statistics for {path}: {source}")]
    Volume { path: PathBuf, source: io::Error },
}

/// Ordering key: a "greater" key ranks earlier in the output.
#[derive(PartialEq, Eq)]
struct Ranked(FileRecord);

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.size_bytes.cmp(&other.0.size_bytes).then_with(|| path_bytes(&other.0.path).cmp(path_bytes(&self.0.path)))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn path_bytes(p: &Path) -> &[u8] {
    p.as_os_str().as_encoded_bytes()
}

/// Sort order used for scan output: size descending, then path ascending.
pub fn rank_order(a: &FileRecord, b: &FileRecord) -> Ordering {
    b.size_bytes.cmp(&a.size_bytes).then_with(|| path_bytes(&a.path).cmp(path_bytes(&b.path)))
}

/// Walks `root` without following symlinks and keeps the `n` largest
/// readable regular files. Unreadable entries are skipped and reported.
pub fn walk_largest(root: &Path, n: usize) -> Result<ScanResult, ScanError> {
    if n == 0 {
        return Err(ScanError::ZeroCount);
    }
    let root = std::path::absolute(root).map_err(|source| ScanError::Root { path: root.to_path_buf(), source })?;
    let meta = fs::metadata(&root).map_err(|source| ScanError::Root { path: root.clone(), source })?;
    if !meta.is_dir() {
        return Err(ScanError::NotADirectory(root));
    }
    fs::read_dir(&root).map_err(|source| ScanError::Root { path: root.clone(), source })?;

    let mut heap: BinaryHeap<Reverse<Ranked>> = BinaryHeap::with_capacity(n + 1);
    let mut result = ScanResult::default();
    let mut stack = vec![root];

    while let Some(dir) = stack.pop() {
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) => {
                result.skipped.push(SkippedEntry { path: dir, reason: e.to_string() });
                continue;
            }
        };
        for entry in entries {
            let entry = match entry {
                Ok(e) => e,
                Err(e) => {
                    result.skipped.push(SkippedEntry { path: dir.clone(), reason: e.to_string() });
                    continue;
                }
            };
            let path = entry.path();
            let file_type = match entry.file_type() {
                Ok(t) => t,
                Err(e) => {
                    result.skipped.push(SkippedEntry { path, reason: e.to_string() });
                    continue;
                }
            };
            if file_type.is_symlink() {
                continue;
            }
            if file_type.is_dir() {
                stack.push(path);
                continue;
            }
            if !file_type.is_file() {
                continue;
            }
            result.files_seen += 1;
            let meta = match entry.metadata() {
                Ok(m) => m,
                Err(e) => {
                    result.skipped.push(SkippedEntry { path, reason: e.to_string() });
                    continue;
                }
            };
            let size_bytes = meta.len();
            if heap.len() == n {
                let worst = &heap.peek().expect("heap is full").0 .0;
                let beats = size_bytes > worst.size_bytes
                    || (size_bytes == worst.size_bytes && path_bytes(&path) < path_bytes(&worst.path));
                if !beats {
                    continue;
                }
            }
            // Only files that would make the list pay for a readability probe.
            if let Err(e) = fs::File::open(&path) {
                result.skipped.push(SkippedEntry { path, reason: e.to_string() });
                continue;
            }
            let modified_at = meta.modified().map(DateTime::<Utc>::from).unwrap_or(DateTime::UNIX_EPOCH);
            heap.push(Reverse(Ranked(FileRecord { path, size_bytes, modified_at, origin: None })));
            if heap.len() > n {
                heap.pop();
            }
        }
    }

    let mut records: Vec<FileRecord> = heap.into_iter().map(|r| r.0 .0).collect();
    records.sort_by(rank_order);
    result.records = records;
    Ok(result)
}

/// Fills in each record's provenance. Order is preserved.
pub fn attach_origin(records: Vec<FileRecord>, opts: OriginOptions) -> Vec<FileRecord> {
    records
        .into_iter()
        .map(|mut r| {
            r.origin = read_origin(&r.path, opts);
            r
        })
        .collect()
}

/// Used and free space of the volume holding `root`.
pub fn drive_info(root: &Path) -> Result<DriveInfo, ScanError> {
    let stats = fs4::statvfs(root).map_err(|source| ScanError::Volume { path: root.to_path_buf(), source })?;
    Ok(DriveInfo {
        used_bytes: stats.total_space().saturating_sub(stats.free_space()),
        free_bytes: stats.available_space(),
        capacity_bytes: stats.total_space(),
    })
}
