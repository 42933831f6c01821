//! On-disk recipe store: one sealed blob per recipe plus a JSON index.
//!
//! Layout: `index.json`, `<recipe_id>.wrcp`, `quarantine/`, `.lock`. Every
//! mutation writes a temporary file and renames it into place, so a crash
//! leaves at worst a stray temporary or an orphan, which [`Store::open`]
//! cleans up.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub const INDEX_FILE: &str = "index.json";
pub const BLOB_EXT: &str = "wrcp";
pub const QUARANTINE_DIR: &str = "quarantine";
pub const LOCK_FILE: &str = ".lock";
const TMP_SUFFIX: &str = ".tmp";
const INDEX_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryStatus {
    Active,
    Stale,
    Restored,
}

impl std::fmt::Display for EntryStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EntryStatus::Active => "active",
            EntryStatus::Stale => "stale",
            EntryStatus::Restored => "restored",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreIndexEntry {
    pub recipe_id: String,
    pub original_path: String,
    pub file_name: String,
    pub size_bytes: u64,
    pub status: EntryStatus,
    pub last_maintained_at: DateTime<Utc>,
}

/// What `put` needs besides the blob.
#[derive(Clone, Debug)]
pub struct PutSummary<'a> {
    pub hash_full: &'a str,
    pub original_path: &'a str,
    pub file_name: &'a str,
    pub size_bytes: u64,
    pub last_maintained_at: DateTime<Utc>,
}

#[derive(Serialize, Deserialize)]
struct IndexDoc {
    version: u32,
    entries: Vec<StoreIndexEntry>,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("store {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0} is not an initialized store (no {INDEX_FILE})")]
    NotInitialized(PathBuf),
    #[error("store {0} is locked by another process")]
    Locked(PathBuf),
    #[error("corrupt index {path}: {message}")]
    CorruptIndex { path: PathBuf, message: String },
    #[error("no recipe with id {0}")]
    NotFound(String),
    #[error("recipe id {0} already holds a different file")]
    IdCollision(String),
    #[error("hash {0:?} is too short for a recipe id")]
    BadHash(String),
    #[error("injected fault at {0:?}")]
    InjectedFault(FaultPoint),
}

/// Step boundaries at which a crash can be simulated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaultPoint {
    PutAfterTempBlob,
    PutAfterBlobRename,
    PutAfterTempIndex,
    RemoveAfterBlobDelete,
    RemoveAfterTempIndex,
}

impl FaultPoint {
    pub const ALL: [FaultPoint; 5] = [
        FaultPoint::PutAfterTempBlob,
        FaultPoint::PutAfterBlobRename,
        FaultPoint::PutAfterTempIndex,
        FaultPoint::RemoveAfterBlobDelete,
        FaultPoint::RemoveAfterTempIndex,
    ];
}

/// What opening a store had to fix.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RepairReport {
    /// Files moved into `quarantine/` (orphan blobs and interrupted blob writes).
    pub quarantined: Vec<PathBuf>,
    /// Index entries dropped because their blob was gone.
    pub dropped_entries: Vec<String>,
    /// Interrupted index writes that were discarded.
    pub discarded_temp_indexes: Vec<PathBuf>,
}

impl RepairReport {
    pub fn is_clean(&self) -> bool {
        self.quarantined.is_empty() && self.dropped_entries.is_empty() && self.discarded_temp_indexes.is_empty()
    }
}

/// Exclusive handle on a store directory.
#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    entries: BTreeMap<String, StoreIndexEntry>,
    repair: RepairReport,
    fault: Option<FaultPoint>,
    _lock: File,
}

pub fn recipe_id_for(hash_full: &str) -> Result<String, StoreError> {
    if hash_full.len() < 16 || !hash_full.is_char_boundary(16) {
        return Err(StoreError::BadHash(hash_full.to_string()));
    }
    Ok(hash_full[..16].to_ascii_lowercase())
}

fn is_recipe_id(s: &str) -> bool {
    s.len() == 16 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

impl Store {
    /// Creates the layout if needed, then opens it.
    pub fn init(dir: &Path) -> Result<Store, StoreError> {
        let io_err = |source| StoreError::Io { path: dir.to_path_buf(), source };
        fs::create_dir_all(dir.join(QUARANTINE_DIR)).map_err(io_err)?;
        let index = dir.join(INDEX_FILE);
        if !index.exists() {
            write_atomic(&index, &render_index(&BTreeMap::new()))?;
        }
        Store::open(dir)
    }

    /// Opens an initialized store, taking the lock and repairing leftovers
    /// from interrupted writes.
    pub fn open(dir: &Path) -> Result<Store, StoreError> {
        if !dir.join(INDEX_FILE).is_file() {
            return Err(StoreError::NotInitialized(dir.to_path_buf()));
        }
        let lock_path = dir.join(LOCK_FILE);
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&lock_path)
            .map_err(|source| StoreError::Io { path: lock_path.clone(), source })?;
        match lock.try_lock() {
            Ok(()) => {}
            Err(fs::TryLockError::WouldBlock) => return Err(StoreError::Locked(dir.to_path_buf())),
            Err(fs::TryLockError::Error(source)) => return Err(StoreError::Io { path: lock_path, source }),
        }
        fs::create_dir_all(dir.join(QUARANTINE_DIR))
            .map_err(|source| StoreError::Io { path: dir.to_path_buf(), source })?;
        let entries = read_index(&dir.join(INDEX_FILE))?;
        let mut store =
            Store { dir: dir.to_path_buf(), entries, repair: RepairReport::default(), fault: None, _lock: lock };
        store.repair()?;
        Ok(store)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn repair_report(&self) -> &RepairReport {
        &self.repair
    }

    /// Makes the next mutation stop at `point` as if the process died there.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, point: Option<FaultPoint>) {
        self.fault = point;
    }

    fn checkpoint(&mut self, point: FaultPoint) -> Result<(), StoreError> {
        if self.fault == Some(point) {
            self.fault = None;
            return Err(StoreError::InjectedFault(point));
        }
        Ok(())
    }

    pub fn blob_path(&self, recipe_id: &str) -> PathBuf {
        self.dir.join(format!("{recipe_id}.{BLOB_EXT}"))
    }

    fn io(&self, path: &Path) -> impl Fn(io::Error) -> StoreError + '_ {
        let path = path.to_path_buf();
        move |source| StoreError::Io { path: path.clone(), source }
    }

    fn repair(&mut self) -> Result<(), StoreError> {
        let mut report = RepairReport::default();
        let listing = fs::read_dir(&self.dir).map_err(self.io(&self.dir))?;
        let mut blobs = Vec::new();
        for entry in listing {
            let entry = entry.map_err(self.io(&self.dir))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let path = entry.path();
            if name == format!("{INDEX_FILE}{TMP_SUFFIX}") {
                fs::remove_file(&path).map_err(self.io(&path))?;
                report.discarded_temp_indexes.push(path);
            } else if name.ends_with(&format!(".{BLOB_EXT}{TMP_SUFFIX}")) {
                report.quarantined.push(self.quarantine(&path, &name)?);
            } else if let Some(id) = name.strip_suffix(&format!(".{BLOB_EXT}")) {
                blobs.push((id.to_string(), path, name));
            }
        }
        for (id, path, name) in blobs {
            if !self.entries.contains_key(&id) {
                report.quarantined.push(self.quarantine(&path, &name)?);
            }
        }
        let missing: Vec<String> = self.entries.keys().filter(|id| !self.blob_path(id).is_file()).cloned().collect();
        for id in &missing {
            self.entries.remove(id);
        }
        report.dropped_entries = missing;
        if !report.dropped_entries.is_empty() {
            self.write_index(None)?;
        }
        report.quarantined.sort();
        for p in &report.quarantined {
            log::warn!("quarantined {}", p.display());
        }
        for id in &report.dropped_entries {
            log::warn!("dropped index entry {id}: blob missing");
        }
        self.repair = report;
        Ok(())
    }

    fn quarantine(&self, path: &Path, name: &str) -> Result<PathBuf, StoreError> {
        let qdir = self.dir.join(QUARANTINE_DIR);
        let mut target = qdir.join(name);
        let mut n = 1;
        while target.exists() {
            target = qdir.join(format!("{name}.{n}"));
            n += 1;
        }
        fs::rename(path, &target).map_err(self.io(path))?;
        Ok(target)
    }

    fn write_index(&mut self, at: Option<FaultPoint>) -> Result<(), StoreError> {
        let index = self.dir.join(INDEX_FILE);
        let tmp = self.dir.join(format!("{INDEX_FILE}{TMP_SUFFIX}"));
        write_file_synced(&tmp, &render_index(&self.entries))?;
        if let Some(point) = at {
            self.checkpoint(point)?;
        }
        fs::rename(&tmp, &index).map_err(self.io(&index))?;
        sync_dir(&self.dir);
        Ok(())
    }

    /// Stores a blob under the first 16 hex characters of `hash_full`.
    pub fn put(&mut self, blob: &[u8], s: &PutSummary<'_>) -> Result<String, StoreError> {
        let id = recipe_id_for(s.hash_full)?;
        if let Some(existing) = self.entries.get(&id) {
            if existing.size_bytes != s.size_bytes {
                return Err(StoreError::IdCollision(id));
            }
            if existing.status == EntryStatus::Active {
                return Ok(id);
            }
        }
        let final_path = self.blob_path(&id);
        let tmp = self.dir.join(format!("{id}.{BLOB_EXT}{TMP_SUFFIX}"));
        write_file_synced(&tmp, blob)?;
        self.checkpoint(FaultPoint::PutAfterTempBlob)?;
        fs::rename(&tmp, &final_path).map_err(self.io(&final_path))?;
        sync_dir(&self.dir);
        self.checkpoint(FaultPoint::PutAfterBlobRename)?;
        let previous = self.entries.insert(
            id.clone(),
            StoreIndexEntry {
                recipe_id: id.clone(),
                original_path: s.original_path.to_string(),
                file_name: s.file_name.to_string(),
                size_bytes: s.size_bytes,
                status: EntryStatus::Active,
                last_maintained_at: s.last_maintained_at,
            },
        );
        if let Err(e) = self.write_index(Some(FaultPoint::PutAfterTempIndex)) {
            match previous {
                Some(p) => self.entries.insert(id, p),
                None => self.entries.remove(&id),
            };
            return Err(e);
        }
        Ok(id)
    }

    pub fn get(&self, recipe_id: &str) -> Result<Vec<u8>, StoreError> {
        if !self.entries.contains_key(recipe_id) {
            return Err(StoreError::NotFound(recipe_id.to_string()));
        }
        let path = self.blob_path(recipe_id);
        fs::read(&path).map_err(self.io(&path))
    }

    pub fn entry(&self, recipe_id: &str) -> Result<&StoreIndexEntry, StoreError> {
        self.entries.get(recipe_id).ok_or_else(|| StoreError::NotFound(recipe_id.to_string()))
    }

    /// All entries ordered by id.
    pub fn list(&self) -> Vec<StoreIndexEntry> {
        self.entries.values().cloned().collect()
    }

    /// Resolves a full id or an unambiguous prefix of one.
    pub fn resolve(&self, prefix: &str) -> Result<String, StoreError> {
        let prefix = prefix.to_ascii_lowercase();
        if self.entries.contains_key(&prefix) {
            return Ok(prefix);
        }
        let mut hits = self.entries.keys().filter(|k| k.starts_with(&prefix));
        match (hits.next(), hits.next()) {
            (Some(one), None) if !prefix.is_empty() => Ok(one.clone()),
            _ => Err(StoreError::NotFound(prefix)),
        }
    }

    /// Deletes the blob, then the index entry.
    pub fn remove(&mut self, recipe_id: &str) -> Result<(), StoreError> {
        if !self.entries.contains_key(recipe_id) {
            return Err(StoreError::NotFound(recipe_id.to_string()));
        }
        let path = self.blob_path(recipe_id);
        match fs::remove_file(&path) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(self.io(&path)(e)),
        }
        sync_dir(&self.dir);
        self.checkpoint(FaultPoint::RemoveAfterBlobDelete)?;
        let removed = self.entries.remove(recipe_id);
        if let Err(e) = self.write_index(Some(FaultPoint::RemoveAfterTempIndex)) {
            if let Some(r) = removed {
                self.entries.insert(recipe_id.to_string(), r);
            }
            return Err(e);
        }
        Ok(())
    }

    pub fn update_status(&mut self, recipe_id: &str, status: EntryStatus, at: DateTime<Utc>) -> Result<(), StoreError> {
        let entry = self.entries.get_mut(recipe_id).ok_or_else(|| StoreError::NotFound(recipe_id.to_string()))?;
        let before = entry.clone();
        entry.status = status;
        entry.last_maintained_at = at;
        if before == *entry {
            return Ok(());
        }
        if let Err(e) = self.write_index(None) {
            self.entries.insert(recipe_id.to_string(), before);
            return Err(e);
        }
        Ok(())
    }

    /// Atomically replaces the blob of an existing entry.
    pub fn replace_blob(&mut self, recipe_id: &str, blob: &[u8]) -> Result<(), StoreError> {
        if !self.entries.contains_key(recipe_id) {
            return Err(StoreError::NotFound(recipe_id.to_string()));
        }
        let final_path = self.blob_path(recipe_id);
        let tmp = self.dir.join(format!("{recipe_id}.{BLOB_EXT}{TMP_SUFFIX}"));
        write_file_synced(&tmp, blob)?;
        fs::rename(&tmp, &final_path).map_err(self.io(&final_path))?;
        sync_dir(&self.dir);
        Ok(())
    }
}

fn render_index(entries: &BTreeMap<String, StoreIndexEntry>) -> Vec<u8> {
    let doc = IndexDoc { version: INDEX_VERSION, entries: entries.values().cloned().collect() };
    let mut out = serde_json::to_vec_pretty(&doc).expect("index serializes");
    out.push(b'\n');
    out
}

fn read_index(path: &Path) -> Result<BTreeMap<String, StoreIndexEntry>, StoreError> {
    let raw = fs::read(path).map_err(|source| StoreError::Io { path: path.to_path_buf(), source })?;
    let doc: IndexDoc = serde_json::from_slice(&raw)
        .map_err(|e| StoreError::CorruptIndex { path: path.to_path_buf(), message: e.to_string() })?;
    if doc.version != INDEX_VERSION {
        return Err(StoreError::CorruptIndex {
            path: path.to_path_buf(),
            message: format!("unsupported version {}", doc.version),
        });
    }
    let mut map = BTreeMap::new();
    for e in doc.entries {
        if !is_recipe_id(&e.recipe_id) {
            return Err(StoreError::CorruptIndex {
                path: path.to_path_buf(),
                message: format!("bad recipe id {:?}", e.recipe_id),
            });
        }
        map.insert(e.recipe_id.clone(), e);
    }
    Ok(map)
}

fn write_file_synced(path: &Path, data: &[u8]) -> Result<(), StoreError> {
    let io_err = |source| StoreError::Io { path: path.to_path_buf(), source };
    let mut f = File::create(path).map_err(io_err)?;
    f.write_all(data).map_err(io_err)?;
    f.sync_all().map_err(io_err)
}

fn write_atomic(path: &Path, data: &[u8]) -> Result<(), StoreError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(TMP_SUFFIX);
    let tmp = PathBuf::from(tmp);
    write_file_synced(&tmp, data)?;
    fs::rename(&tmp, path).map_err(|source| StoreError::Io { path: path.to_path_buf(), source })
}

fn sync_dir(dir: &Path) {
    #[cfg(unix)]
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
    #[cfg(not(unix))]
    let _ = dir;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(hash: &str, size: u64) -> PutSummary<'_> {
        PutSummary {
            hash_full: hash,
            original_path: "/d/f.bin",
            file_name: "f.bin",
            size_bytes: size,
            last_maintained_at: DateTime::UNIX_EPOCH,
        }
    }

    const H1: &str = "0123456789abcdef0123456789abcdef0123456789abcdef0123456789abcdef";
    const H2: &str = "fedcba98765432100123456789abcdef0123456789abcdef0123456789abcdef";

    #[test]
    fn put_get_list_remove() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Store::init(dir.path()).unwrap();
        assert!(s.list().is_empty());
        let id = s.put(b"blob-1", &summary(H1, 10)).unwrap();
        assert_eq!(id, "0123456789abcdef");
        assert_eq!(s.get(&id).unwrap(), b"blob-1");
        assert_eq!(s.put(b"blob-1", &summary(H1, 10)).unwrap(), id);
        assert_eq!(s.list().len(), 1);
        assert!(matches!(s.put(b"x", &summary(H1, 11)), Err(StoreError::IdCollision(_))));
        s.update_status(&id, EntryStatus::Stale, Utc::now()).unwrap();
        assert_eq!(s.list()[0].status, EntryStatus::Stale);
        assert_eq!(s.resolve("0123").unwrap(), id);
        s.remove(&id).unwrap();
        assert!(matches!(s.get(&id), Err(StoreError::NotFound(_))));
        assert!(matches!(s.remove(&id), Err(StoreError::NotFound(_))));
        assert!(matches!(s.update_status(&id, EntryStatus::Active, Utc::now()), Err(StoreError::NotFound(_))));
    }

    #[test]
    fn reopen_is_byte_exact_and_locked() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = Store::init(dir.path()).unwrap();
            s.put(b"a", &summary(H1, 1)).unwrap();
            s.put(b"b", &summary(H2, 2)).unwrap();
            assert!(matches!(Store::open(dir.path()), Err(StoreError::Locked(_))));
        }
        let before = fs::read(dir.path().join(INDEX_FILE)).unwrap();
        let s = Store::open(dir.path()).unwrap();
        assert!(s.repair_report().is_clean());
        assert_eq!(s.list().len(), 2);
        drop(s);
        assert_eq!(fs::read(dir.path().join(INDEX_FILE)).unwrap(), before);
    }

    #[test]
    fn uninitialized_store() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(Store::open(dir.path()), Err(StoreError::NotInitialized(_))));
    }

    #[test]
    fn orphan_blob_is_quarantined() {
        let dir = tempfile::tempdir().unwrap();
        drop(Store::init(dir.path()).unwrap());
        fs::write(dir.path().join("aaaaaaaaaaaaaaaa.wrcp"), b"orphan").unwrap();
        let s = Store::open(dir.path()).unwrap();
        assert_eq!(s.repair_report().quarantined, [dir.path().join("quarantine/aaaaaaaaaaaaaaaa.wrcp")]);
        assert!(s.list().is_empty());
    }
}
