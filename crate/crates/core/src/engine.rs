//! Creation, maintenance and reconstitution of purged files.
//!
//! Nothing is deleted unless a byte-identical web copy was verified (or the
//! caller explicitly allows authenticated sources), the user approved it,
//! and the live file still matches the plan.

use std::fs::{self, File};
use std::io::{self, Seek, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::origin::{classify_source, OriginOptions, SourceCategory, SIDECAR_SUFFIX};
use crate::recipe::{
    create_recipe, hash_file, hash_reader, serialize_recipe, CryptoError, EncryptedRecipe, HashAlgo, KeyCache, Recipe,
    DEFAULT_PARTIAL_LEN,
};
use crate::scan::{attach_origin, walk_largest, FileRecord, ScanError, SkippedEntry};
use crate::store::{EntryStatus, PutSummary, Store, StoreError};
use crate::webcheck::{
    check_availability, check_availability_into, check_direct, check_many, Availability, AvailabilityOutcome,
    CheckConfig, CheckMode, Fetcher, ProbeSink,
};

/// Suffix of the plaintext marker left where a purged file used to be.
pub const MARKER_SUFFIX: &str = ".wrcp-ref";
/// Staging directory used instead of deleting when trash is enabled.
pub const TRASH_DIR: &str = ".webpurge-trash";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub check: CheckConfig,
    pub origin: OriginOptions,
    pub concurrency: usize,
    pub hash_algo: HashAlgo,
    pub partial_len: u64,
    /// Permit purging files only recoverable with authentication.
    pub allow_auth: bool,
    /// Move purged files to a trash directory instead of deleting them.
    pub trash: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            check: CheckConfig::default(),
            origin: OriginOptions::default(),
            concurrency: 4,
            hash_algo: HashAlgo::Sha256,
            partial_len: DEFAULT_PARTIAL_LEN,
            allow_auth: false,
            trash: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Scan(#[from] ScanError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error("cannot decrypt recipe {recipe_id}: wrong passphrase or damaged blob")]
    Decrypt { recipe_id: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PurgeCandidate {
    pub record: FileRecord,
    /// `None` for files without provenance; they are listed but never purged.
    pub recipe: Option<Recipe>,
    pub category: SourceCategory,
    pub outcome: AvailabilityOutcome,
    /// File size minus the sealed recipe and marker it leaves behind.
    pub projected_saving_bytes: i64,
}

impl PurgeCandidate {
    pub fn eligible(&self, allow_auth: bool) -> bool {
        self.recipe.is_some()
            && match self.outcome.best {
                Availability::PublicRd => true,
                Availability::RdWithAuth => allow_auth,
                Availability::NotRedownloadable => false,
            }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PurgePlan {
    pub candidates: Vec<PurgeCandidate>,
    /// Files taken from the top of the size ranking before stopping.
    pub files_examined: usize,
    pub target_free_bytes: Option<u64>,
    /// Projected savings of publicly redownloadable candidates.
    pub public_savings_bytes: i64,
    pub target_met: bool,
    pub skipped: Vec<SkippedEntry>,
}

/// Marker file path for a purged file.
pub fn marker_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(MARKER_SUFFIX);
    PathBuf::from(s)
}

fn marker_contents(recipe_id: &str, store_dir: &Path) -> String {
    format!("{recipe_id}\n{}\n", store_dir.display())
}

/// Reads a marker: `(recipe_id, store_dir)`.
pub fn read_marker(path: &Path) -> io::Result<(String, PathBuf)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let id = lines.next().unwrap_or("").trim().to_string();
    let store = lines.next().unwrap_or("").trim().to_string();
    if id.is_empty() {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "empty marker"));
    }
    Ok((id, PathBuf::from(store)))
}

/// Bytes a purged file leaves behind: its sealed recipe plus the marker.
pub fn recipe_footprint(recipe: &Recipe, store_dir: &Path) -> u64 {
    let blob = EncryptedRecipe::sealed_len(serialize_recipe(recipe).len());
    let marker = marker_contents(&recipe.hash_full[..16.min(recipe.hash_full.len())], store_dir).len();
    (blob + marker) as u64
}

fn prepare(
    record: &FileRecord,
    now: DateTime<Utc>,
    fetcher: &dyn Fetcher,
    cfg: &EngineConfig,
) -> Result<(Option<Recipe>, AvailabilityOutcome), String> {
    if record.origin.is_none() {
        return Ok((None, AvailabilityOutcome::from_channels(None, None)));
    }
    let hashes = hash_file(&record.path, cfg.hash_algo, cfg.partial_len).map_err(|e| e.to_string())?;
    let recipe = create_recipe(record, now, &hashes);
    let outcome = check_availability(&recipe, fetcher, &cfg.check);
    Ok((Some(recipe), outcome))
}

/// Walks the largest files under `root`, checks each for a web copy, and
/// stops once the public candidates cover `target_free_bytes`. Markers and
/// fixture sidecars are never candidates.
pub fn plan_purge(
    root: &Path,
    target_free_bytes: Option<u64>,
    n: usize,
    fetcher: &dyn Fetcher,
    store_dir: &Path,
    now: DateTime<Utc>,
    cfg: &EngineConfig,
) -> Result<PurgePlan, EngineError> {
    let scan = walk_largest(root, n)?;
    let own_artifact = |p: &Path| {
        let name = p.as_os_str().to_string_lossy();
        name.ends_with(MARKER_SUFFIX) || (cfg.origin.fixture_mode && name.ends_with(SIDECAR_SUFFIX))
    };
    let records: Vec<FileRecord> = scan.records.into_iter().filter(|r| !own_artifact(&r.path)).collect();
    let records = attach_origin(records, cfg.origin);
    let store_dir = std::path::absolute(store_dir).unwrap_or_else(|_| store_dir.to_path_buf());
    let mut plan = PurgePlan {
        candidates: Vec::new(),
        files_examined: 0,
        target_free_bytes,
        public_savings_bytes: 0,
        target_met: false,
        skipped: scan.skipped,
    };
    let batch_size = cfg.concurrency.max(1);
    'batches: for batch in records.chunks(batch_size) {
        let results: Vec<Result<(Option<Recipe>, AvailabilityOutcome), String>> = std::thread::scope(|scope| {
            let handles: Vec<_> = batch.iter().map(|r| scope.spawn(move || prepare(r, now, fetcher, cfg))).collect();
            handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err("check panicked".into()))).collect()
        });
        for (record, result) in batch.iter().zip(results) {
            plan.files_examined += 1;
            let (recipe, outcome) = match result {
                Ok(x) => x,
                Err(reason) => {
                    plan.skipped.push(SkippedEntry { path: record.path.clone(), reason });
                    continue;
                }
            };
            if recipe.is_some() && outcome.best == Availability::NotRedownloadable {
                continue;
            }
            let ext = record.path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase()).unwrap_or_default();
            let category = classify_source(record.origin.as_ref(), &ext, &cfg.check.categories);
            let projected_saving_bytes = match &recipe {
                Some(r) => record.size_bytes as i64 - recipe_footprint(r, &store_dir) as i64,
                None => 0,
            };
            if recipe.is_some() && outcome.best == Availability::PublicRd {
                plan.public_savings_bytes += projected_saving_bytes.max(0);
            }
            plan.candidates.push(PurgeCandidate {
                record: record.clone(),
                recipe,
                category,
                outcome,
                projected_saving_bytes,
            });
            if let Some(target) = target_free_bytes {
                if plan.public_savings_bytes >= target as i64 {
                    plan.target_met = true;
                    break 'batches;
                }
            }
        }
    }
    Ok(plan)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemStatus {
    Purged,
    Skipped,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PurgeItem {
    pub path: PathBuf,
    pub status: ItemStatus,
    pub recipe_id: Option<String>,
    pub reason: String,
    pub saving_bytes: i64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PurgeResult {
    pub items: Vec<PurgeItem>,
    /// Sum of projected savings of purged files.
    pub bytes_freed: i64,
    /// Sum of the sizes of purged files.
    pub bytes_removed: u64,
    pub purged: usize,
}

fn write_marker(path: &Path, contents: &str) -> io::Result<()> {
    let marker = marker_path(path);
    let mut tmp_name = marker.as_os_str().to_owned();
    tmp_name.push(".tmp");
    let tmp = PathBuf::from(tmp_name);
    let mut f = File::create(&tmp)?;
    f.write_all(contents.as_bytes())?;
    f.sync_all()?;
    fs::rename(&tmp, &marker)
}

fn trash_target(path: &Path) -> io::Result<PathBuf> {
    let parent = path.parent().ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "no parent directory"))?;
    let dir = parent.join(TRASH_DIR);
    fs::create_dir_all(&dir)?;
    let name = path.file_name().ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "no file name"))?;
    let mut target = dir.join(name);
    let mut n = 1;
    while target.exists() {
        let mut alt = name.to_owned();
        alt.push(format!(".{n}"));
        target = dir.join(alt);
        n += 1;
    }
    Ok(target)
}

fn unchanged(record: &FileRecord, recipe: &Recipe) -> Result<bool, String> {
    let meta = fs::metadata(&record.path).map_err(|e| format!("cannot read file: {e}"))?;
    let mtime = meta.modified().map(DateTime::<Utc>::from).ok();
    if meta.len() != record.size_bytes || mtime != Some(record.modified_at) {
        return Ok(false);
    }
    let h = hash_file(&record.path, recipe.hash_algo, 0).map_err(|e| e.to_string())?;
    Ok(h.full == recipe.hash_full)
}

/// Purges approved candidates, one at a time, in plan order.
/// `approvals[i]` is the decision for `plan.candidates[i]`. Public
/// candidates are downloaded and verified once more before deletion.
pub fn execute_purge(
    plan: &PurgePlan,
    approvals: &[bool],
    store: &mut Store,
    passphrase: &str,
    fetcher: &dyn Fetcher,
    cfg: &EngineConfig,
) -> Result<PurgeResult, EngineError> {
    let keys = KeyCache::new(passphrase)?;
    let store_dir = std::path::absolute(store.dir()).unwrap_or_else(|_| store.dir().to_path_buf());
    let mut result = PurgeResult::default();
    for (i, cand) in plan.candidates.iter().enumerate() {
        let path = cand.record.path.clone();
        let mut item = PurgeItem {
            path: path.clone(),
            status: ItemStatus::Skipped,
            recipe_id: None,
            reason: String::new(),
            saving_bytes: 0,
        };
        let approved = approvals.get(i).copied().unwrap_or(false);
        let Some(recipe) = cand.recipe.as_ref().filter(|_| approved && cand.eligible(cfg.allow_auth)) else {
            item.reason = if !approved {
                "not approved".into()
            } else if cand.outcome.best == Availability::RdWithAuth {
                "needs authentication; not allowed".into()
            } else {
                "not redownloadable".into()
            };
            result.items.push(item);
            continue;
        };
        match unchanged(&cand.record, recipe) {
            Ok(true) => {}
            Ok(false) => {
                item.reason = "changed since plan".into();
                result.items.push(item);
                continue;
            }
            Err(e) => {
                item.status = ItemStatus::Failed;
                item.reason = e;
                result.items.push(item);
                continue;
            }
        }
        if cand.outcome.best == Availability::PublicRd {
            if let Some(won) = cand.outcome.deciding() {
                let again = check_direct(&won.url_used, recipe, fetcher, &cfg.check);
                if again.status != Availability::PublicRd {
                    item.reason = format!("web copy no longer verified: {}", again.reason);
                    result.items.push(item);
                    continue;
                }
            }
        }
        let blob = match keys.encrypt(recipe) {
            Ok(b) => b.to_bytes(),
            Err(e) => {
                item.status = ItemStatus::Failed;
                item.reason = format!("encrypting recipe: {e}");
                result.items.push(item);
                continue;
            }
        };
        let original = recipe.original_path.to_string_lossy().into_owned();
        let summary = PutSummary {
            hash_full: &recipe.hash_full,
            original_path: &original,
            file_name: &recipe.file_name,
            size_bytes: recipe.size_bytes,
            last_maintained_at: recipe.last_maintained_at,
        };
        let existed = crate::store::recipe_id_for(&recipe.hash_full).ok().and_then(|id| store.entry(&id).ok().cloned());
        let id = match store.put(&blob, &summary) {
            Ok(id) => id,
            Err(e) => {
                item.status = ItemStatus::Failed;
                item.reason = format!("storing recipe: {e}");
                result.items.push(item);
                continue;
            }
        };
        item.recipe_id = Some(id.clone());
        let undo = |store: &mut Store| {
            if existed.is_none() {
                if let Err(e) = store.remove(&id) {
                    log::warn!("could not roll back recipe {id}: {e}");
                }
            }
        };
        if let Err(e) = write_marker(&path, &marker_contents(&id, &store_dir)) {
            undo(store);
            item.status = ItemStatus::Failed;
            item.reason = format!("writing marker: {e}");
            result.items.push(item);
            continue;
        }
        let removed =
            if cfg.trash { trash_target(&path).and_then(|t| fs::rename(&path, t)) } else { fs::remove_file(&path) };
        if let Err(e) = removed {
            let _ = fs::remove_file(marker_path(&path));
            undo(store);
            item.status = ItemStatus::Failed;
            item.reason = format!("removing file: {e}");
            result.items.push(item);
            continue;
        }
        item.status = ItemStatus::Purged;
        item.reason = if cfg.trash { "moved to trash".into() } else { "purged".into() };
        item.saving_bytes = cand.projected_saving_bytes;
        result.bytes_freed += cand.projected_saving_bytes;
        result.bytes_removed += cand.record.size_bytes;
        result.purged += 1;
        result.items.push(item);
    }
    Ok(result)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaintenanceItem {
    pub recipe_id: String,
    pub file_name: String,
    pub original_path: String,
    pub status: EntryStatus,
    pub best: Availability,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaintenanceReport {
    pub items: Vec<MaintenanceItem>,
    pub current: usize,
    pub stale: usize,
}

impl MaintenanceReport {
    pub fn stale_items(&self) -> impl Iterator<Item = &MaintenanceItem> {
        self.items.iter().filter(|i| i.status == EntryStatus::Stale)
    }
}

/// Re-checks every active or stale recipe. Confirmed ones get a fresh
/// maintenance timestamp; the rest are marked stale.
pub fn maintain(
    store: &mut Store,
    fetcher: &dyn Fetcher,
    now: DateTime<Utc>,
    passphrase: &str,
    cfg: &EngineConfig,
) -> Result<MaintenanceReport, EngineError> {
    let keys = KeyCache::new(passphrase)?;
    let entries: Vec<_> =
        store.list().into_iter().filter(|e| matches!(e.status, EntryStatus::Active | EntryStatus::Stale)).collect();
    let mut recipes = Vec::with_capacity(entries.len());
    let mut salts = Vec::with_capacity(entries.len());
    for e in &entries {
        let blob = store.get(&e.recipe_id)?;
        let recipe = keys.decrypt(&blob).map_err(|_| EngineError::Decrypt { recipe_id: e.recipe_id.clone() })?;
        salts.push(EncryptedRecipe::from_bytes(&blob)?.salt);
        recipes.push(recipe);
    }
    let outcomes = check_many(&recipes, fetcher, &cfg.check, cfg.concurrency, false);
    let mut report = MaintenanceReport::default();
    for (((entry, mut recipe), salt), outcome) in entries.into_iter().zip(recipes).zip(salts).zip(outcomes) {
        let current = outcome.best == Availability::PublicRd
            || (outcome.best == Availability::RdWithAuth && cfg.check.presume_auth);
        let (status, reason) = if current {
            recipe.last_maintained_at = now;
            let blob = keys.encrypt_with_salt(&recipe, salt)?.to_bytes();
            store.replace_blob(&entry.recipe_id, &blob)?;
            store.update_status(&entry.recipe_id, EntryStatus::Active, now)?;
            report.current += 1;
            (EntryStatus::Active, outcome.deciding().map(|c| c.reason.clone()).unwrap_or_default())
        } else {
            store.update_status(&entry.recipe_id, EntryStatus::Stale, entry.last_maintained_at)?;
            report.stale += 1;
            (EntryStatus::Stale, outcome.reason())
        };
        report.items.push(MaintenanceItem {
            recipe_id: entry.recipe_id,
            file_name: entry.file_name,
            original_path: entry.original_path,
            status,
            best: outcome.best,
            reason,
        });
    }
    Ok(report)
}

#[derive(Debug, thiserror::Error)]
pub enum RestoreError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cannot decrypt recipe {0}: wrong passphrase or damaged blob")]
    Decrypt(String),
    #[error("{0} already exists")]
    DestinationExists(PathBuf),
    #[error("not available from any recorded source: {0}")]
    NotAvailable(String),
    #[error("integrity check failed: {0}")]
    IntegrityMismatch(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RestoreResult {
    pub recipe_id: String,
    pub path: PathBuf,
    pub bytes: u64,
    pub url_used: String,
    pub mode: CheckMode,
}

struct FileSink<'a>(&'a mut File);

impl ProbeSink for FileSink<'_> {
    fn reset(&mut self) -> io::Result<()> {
        self.0.set_len(0)?;
        self.0.rewind()?;
        Ok(())
    }

    fn write(&mut self, data: &[u8]) -> io::Result<()> {
        self.0.write_all(data)
    }
}

/// Downloads a purged file again and puts it back once its hash matches.
#[allow(clippy::too_many_arguments)]
pub fn reconstitute(
    recipe_id: &str,
    store: &mut Store,
    fetcher: &dyn Fetcher,
    passphrase: &str,
    dest: Option<&Path>,
    force: bool,
    now: DateTime<Utc>,
    cfg: &EngineConfig,
) -> Result<RestoreResult, RestoreError> {
    let blob = store.get(recipe_id)?;
    let keys = KeyCache::new(passphrase)?;
    let recipe = keys.decrypt(&blob).map_err(|_| RestoreError::Decrypt(recipe_id.to_string()))?;
    let dest = dest.map(Path::to_path_buf).unwrap_or_else(|| recipe.original_path.clone());
    if dest.exists() && !force {
        return Err(RestoreError::DestinationExists(dest));
    }
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| RestoreError::Io { path: path.clone(), source }
    };
    let parent = match dest.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(io_err(&parent))?;
    let mut tmp =
        tempfile::Builder::new().prefix(".webpurge-restore-").tempfile_in(&parent).map_err(io_err(&parent))?;

    let outcome = check_availability_into(&recipe, fetcher, &cfg.check, Some(&mut FileSink(tmp.as_file_mut())));
    let winner = [outcome.via_hu.as_ref(), outcome.via_ru.as_ref()]
        .into_iter()
        .flatten()
        .find(|c| c.status == Availability::PublicRd && c.mode != CheckMode::Presumed)
        .cloned();
    let Some(winner) = winner else {
        let reason = outcome.reason();
        let mismatch = [outcome.via_hu.as_ref(), outcome.via_ru.as_ref()]
            .into_iter()
            .flatten()
            .any(|c| c.reason.starts_with("content mismatch") && !c.reason.contains("HTML"));
        return Err(if mismatch {
            RestoreError::IntegrityMismatch(reason)
        } else {
            RestoreError::NotAvailable(reason)
        });
    };

    let file = tmp.as_file_mut();
    file.sync_all().map_err(io_err(&dest))?;
    file.rewind().map_err(io_err(&dest))?;
    let check = hash_reader(file, recipe.hash_algo, 0).map_err(io_err(&dest))?;
    if check.full != recipe.hash_full {
        return Err(RestoreError::IntegrityMismatch(format!("written file hashes to {}", check.full)));
    }
    let persisted = if force { tmp.persist(&dest) } else { tmp.persist_noclobber(&dest) };
    if let Err(e) = persisted {
        return Err(if e.error.kind() == io::ErrorKind::AlreadyExists {
            RestoreError::DestinationExists(dest)
        } else {
            RestoreError::Io { path: dest, source: e.error }
        });
    }
    match fs::remove_file(marker_path(&recipe.original_path)) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::NotFound => {}
        Err(e) => log::warn!("could not remove marker for {}: {e}", recipe.original_path.display()),
    }
    store.update_status(recipe_id, EntryStatus::Restored, now)?;
    Ok(RestoreResult {
        recipe_id: recipe_id.to_string(),
        path: dest,
        bytes: recipe.size_bytes,
        url_used: winner.url_used,
        mode: winner.mode,
    })
}
