//! Recipes: what is kept in place of a purged file, and how they are sealed.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::Aes256Gcm;
use argon2::{Algorithm, Argon2, Params, Version};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256, Sha512};
use zeroize::Zeroizing;

use crate::scan::FileRecord;

pub const DEFAULT_PARTIAL_LEN: u64 = 1 << 20;
const READ_CHUNK: usize = 64 * 1024;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HashAlgo {
    #[default]
    Sha256,
    Sha512,
}

impl HashAlgo {
    pub fn hex_len(self) -> usize {
        match self {
            HashAlgo::Sha256 => 64,
            HashAlgo::Sha512 => 128,
        }
    }

    pub fn hasher(self) -> StreamHasher {
        match self {
            HashAlgo::Sha256 => StreamHasher::Sha256(Sha256::new()),
            HashAlgo::Sha512 => StreamHasher::Sha512(Sha512::new()),
        }
    }
}

impl fmt::Display for HashAlgo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HashAlgo::Sha256 => "sha256",
            HashAlgo::Sha512 => "sha512",
        })
    }
}

impl std::str::FromStr for HashAlgo {
    type Err = RecipeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sha256" => Ok(HashAlgo::Sha256),
            "sha512" => Ok(HashAlgo::Sha512),
            other => Err(RecipeError::UnsupportedAlgo(other.to_string())),
        }
    }
}

/// Incremental digest over one of the supported algorithms.
#[derive(Clone)]
pub enum StreamHasher {
    Sha256(Sha256),
    Sha512(Sha512),
}

impl StreamHasher {
    pub fn update(&mut self, data: &[u8]) {
        match self {
            StreamHasher::Sha256(h) => h.update(data),
            StreamHasher::Sha512(h) => h.update(data),
        }
    }

    pub fn finish_hex(self) -> String {
        match self {
            StreamHasher::Sha256(h) => hex::encode(h.finalize()),
            StreamHasher::Sha512(h) => hex::encode(h.finalize()),
        }
    }
}

/// The replacement artifact for one purged file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Recipe {
    pub created_at: DateTime<Utc>,
    pub last_maintained_at: DateTime<Utc>,
    pub referrer_url: Option<String>,
    pub host_url: Option<String>,
    pub original_path: PathBuf,
    pub file_name: String,
    pub size_bytes: u64,
    pub hash_full: String,
    pub hash_algo: HashAlgo,
    pub partial_hash: Option<String>,
    pub partial_len: u64,
}

pub const RECIPE_FIELDS: [&str; 11] = [
    "created_at",
    "last_maintained_at",
    "referrer_url",
    "host_url",
    "original_path",
    "file_name",
    "size_bytes",
    "hash_full",
    "hash_algo",
    "partial_hash",
    "partial_len",
];
const REQUIRED_FIELDS: [&str; 6] =
    ["created_at", "last_maintained_at", "original_path", "file_name", "size_bytes", "hash_full"];

#[derive(Debug, thiserror::Error)]
pub enum RecipeError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("unsupported hash algorithm {0:?}")]
    UnsupportedAlgo(String),
    #[error("invalid recipe: field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error("invalid recipe: {0}")]
    Syntax(String),
}

impl RecipeError {
    /// Field an input error refers to, when known.
    pub fn field(&self) -> Option<&str> {
        match self {
            RecipeError::Field { field, .. } => Some(field),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FileHashes {
    pub algo: HashAlgo,
    pub full: String,
    pub partial: Option<String>,
    pub partial_len: u64,
}

/// Streams `path` once, producing the full digest and the digest of its first
/// `min(partial_len, size)` bytes. `partial_len == 0` disables the latter.
pub fn hash_file(path: &Path, algo: HashAlgo, partial_len: u64) -> Result<FileHashes, RecipeError> {
    let io_err = |source| RecipeError::Io { path: path.to_path_buf(), source };
    let mut file = File::open(path).map_err(io_err)?;
    hash_reader(&mut file, algo, partial_len).map_err(io_err)
}

pub fn hash_reader(reader: &mut dyn Read, algo: HashAlgo, partial_len: u64) -> io::Result<FileHashes> {
    let mut full = algo.hasher();
    let mut partial = (partial_len > 0).then(|| algo.hasher());
    let mut seen: u64 = 0;
    let mut buf = vec![0u8; READ_CHUNK];
    loop {
        let n = match reader.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        };
        let chunk = &buf[..n];
        full.update(chunk);
        if let Some(p) = partial.as_mut() {
            if seen < partial_len {
                let take = (partial_len - seen).min(n as u64) as usize;
                p.update(&chunk[..take]);
            }
        }
        seen += n as u64;
    }
    Ok(FileHashes { algo, full: full.finish_hex(), partial: partial.map(StreamHasher::finish_hex), partial_len })
}

/// Builds a recipe from a scanned file and freshly computed hashes.
pub fn create_recipe(record: &FileRecord, now: DateTime<Utc>, hashes: &FileHashes) -> Recipe {
    let origin = record.origin.as_ref();
    Recipe {
        created_at: now,
        last_maintained_at: now,
        referrer_url: origin.and_then(|o| o.referrer_url.clone()),
        host_url: origin.and_then(|o| o.host_url.clone()),
        original_path: record.path.clone(),
        file_name: final_segment(&record.path.to_string_lossy()).to_string(),
        size_bytes: record.size_bytes,
        hash_full: hashes.full.clone(),
        hash_algo: hashes.algo,
        partial_hash: hashes.partial.clone(),
        partial_len: hashes.partial_len,
    }
}

/// Last path component. Drive-letter paths split on both separators so
/// recipes made on Windows validate anywhere.
pub fn final_segment(path: &str) -> &str {
    let b = path.as_bytes();
    let windows = b.len() >= 3 && b[0].is_ascii_alphabetic() && b[1] == b':' && (b[2] == b'\\' || b[2] == b'/');
    if windows || cfg!(windows) {
        return path.rsplit(['/', '\\']).next().unwrap_or(path);
    }
    path.rsplit('/').next().unwrap_or(path)
}

impl Recipe {
    /// Lowercase extension of the file name, without the dot.
    pub fn extension(&self) -> String {
        match self.file_name.rsplit_once('.') {
            Some((stem, ext)) if !stem.is_empty() => ext.to_ascii_lowercase(),
            _ => String::new(),
        }
    }

    pub fn validate(&self) -> Result<(), RecipeError> {
        let bad = |field: &str, message: String| Err(RecipeError::Field { field: field.into(), message });
        if !is_lower_hex(&self.hash_full, self.hash_algo.hex_len()) {
            return bad(
                "hash_full",
                format!("expected {} lowercase hex characters for {}", self.hash_algo.hex_len(), self.hash_algo),
            );
        }
        if let Some(p) = &self.partial_hash {
            if !is_lower_hex(p, self.hash_algo.hex_len()) {
                return bad("partial_hash", "not a lowercase hex digest".into());
            }
        }
        let path = self.original_path.to_string_lossy();
        if final_segment(&path) != self.file_name {
            return bad("file_name", format!("does not match the last segment of {path}"));
        }
        Ok(())
    }
}

fn is_lower_hex(s: &str, len: usize) -> bool {
    s.len() == len && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

/// Canonical compact JSON with sorted keys; every field is present.
pub fn serialize_recipe(r: &Recipe) -> String {
    // serde_json's map is ordered by key, so going through a Value sorts the keys.
    let value = serde_json::to_value(r).expect("recipe serializes");
    serde_json::to_string(&value).expect("value serializes")
}

/// Parses a recipe. Unknown keys are logged and dropped.
pub fn deserialize_recipe(text: &str) -> Result<Recipe, RecipeError> {
    let mut value: serde_json::Value = serde_json::from_str(text).map_err(|e| RecipeError::Syntax(e.to_string()))?;
    let obj = value.as_object_mut().ok_or_else(|| RecipeError::Syntax("expected a JSON object".into()))?;
    for field in REQUIRED_FIELDS {
        if !obj.contains_key(field) {
            return Err(RecipeError::Field { field: field.into(), message: "missing".into() });
        }
    }
    let known: HashSet<&str> = RECIPE_FIELDS.into_iter().collect();
    let unknown: Vec<String> = obj.keys().filter(|k| !known.contains(k.as_str())).cloned().collect();
    for key in unknown {
        log::warn!("ignoring unknown recipe field {key:?}");
        obj.remove(&key);
    }
    obj.entry("hash_algo").or_insert_with(|| "sha256".into());
    obj.entry("partial_len").or_insert_with(|| DEFAULT_PARTIAL_LEN.into());
    for optional in ["referrer_url", "host_url", "partial_hash"] {
        obj.entry(optional).or_insert(serde_json::Value::Null);
    }
    let recipe: Recipe = serde_path_to_error::deserialize(value)
        .map_err(|e| RecipeError::Field { field: e.path().to_string(), message: e.inner().to_string() })?;
    recipe.validate()?;
    Ok(recipe)
}

pub const MAGIC: &[u8; 5] = b"WRCP1";
pub const SALT_LEN: usize = 16;
pub const NONCE_LEN: usize = 12;
const TAG_LEN: usize = 16;
const HEADER_LEN: usize = MAGIC.len() + SALT_LEN + NONCE_LEN;
const KDF_MEMORY_KIB: u32 = 19 * 1024;
const KDF_PASSES: u32 = 2;

/// Sealed recipe: `magic ‖ salt ‖ nonce ‖ ciphertext+tag`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncryptedRecipe {
    pub salt: [u8; SALT_LEN],
    pub nonce: [u8; NONCE_LEN],
    pub ciphertext_and_tag: Vec<u8>,
}

#[derive(Debug, PartialEq, Eq, thiserror::Error)]
pub enum CryptoError {
    #[error("passphrase must not be empty")]
    EmptyPassphrase,
    #[error("not a recipe blob: {0}")]
    Format(&'static str),
    /// Wrong passphrase and tampering are deliberately indistinguishable.
    #[error("recipe authentication failed")]
    Authentication,
    #[error("random source: {0}")]
    Random(String),
}

impl EncryptedRecipe {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.ciphertext_and_tag.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.salt);
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.ciphertext_and_tag);
        out
    }

    pub fn from_bytes(blob: &[u8]) -> Result<Self, CryptoError> {
        if blob.len() < HEADER_LEN + TAG_LEN {
            return Err(CryptoError::Format("truncated"));
        }
        if &blob[..MAGIC.len()] != MAGIC {
            return Err(CryptoError::Format("bad magic"));
        }
        let mut salt = [0u8; SALT_LEN];
        salt.copy_from_slice(&blob[MAGIC.len()..MAGIC.len() + SALT_LEN]);
        let mut nonce = [0u8; NONCE_LEN];
        nonce.copy_from_slice(&blob[MAGIC.len() + SALT_LEN..HEADER_LEN]);
        Ok(EncryptedRecipe { salt, nonce, ciphertext_and_tag: blob[HEADER_LEN..].to_vec() })
    }

    fn header(&self) -> Vec<u8> {
        let mut h = Vec::with_capacity(HEADER_LEN);
        h.extend_from_slice(MAGIC);
        h.extend_from_slice(&self.salt);
        h.extend_from_slice(&self.nonce);
        h
    }

    /// Size on disk of a blob sealing `plaintext_len` bytes.
    pub fn sealed_len(plaintext_len: usize) -> usize {
        HEADER_LEN + plaintext_len + TAG_LEN
    }
}

type KeyBytes = Zeroizing<[u8; 32]>;

fn derive_key(passphrase: &str, salt: &[u8; SALT_LEN]) -> Result<KeyBytes, CryptoError> {
    if passphrase.is_empty() {
        return Err(CryptoError::EmptyPassphrase);
    }
    let params = Params::new(KDF_MEMORY_KIB, KDF_PASSES, 1, Some(32)).expect("static KDF parameters");
    let mut key = Zeroizing::new([0u8; 32]);
    Argon2::new(Algorithm::Argon2id, Version::V0x13, params)
        .hash_password_into(passphrase.as_bytes(), salt, key.as_mut())
        .map_err(|_| CryptoError::Authentication)?;
    Ok(key)
}

fn random_bytes<const N: usize>() -> Result<[u8; N], CryptoError> {
    let mut out = [0u8; N];
    getrandom::fill(&mut out).map_err(|e| CryptoError::Random(e.to_string()))?;
    Ok(out)
}

fn cipher(key: &KeyBytes) -> Aes256Gcm {
    Aes256Gcm::new(&(**key).into())
}

/// Seals a recipe under a key derived from `passphrase` and a fresh salt.
pub fn encrypt_recipe(r: &Recipe, passphrase: &str) -> Result<EncryptedRecipe, CryptoError> {
    let salt = random_bytes::<SALT_LEN>()?;
    let key = derive_key(passphrase, &salt)?;
    seal(r, &key, salt)
}

fn seal(r: &Recipe, key: &KeyBytes, salt: [u8; SALT_LEN]) -> Result<EncryptedRecipe, CryptoError> {
    let nonce = random_bytes::<NONCE_LEN>()?;
    let mut blob = EncryptedRecipe { salt, nonce, ciphertext_and_tag: Vec::new() };
    let aad = blob.header();
    let plaintext = Zeroizing::new(serialize_recipe(r).into_bytes());
    blob.ciphertext_and_tag = cipher(key)
        .encrypt(&nonce.into(), Payload { msg: &plaintext, aad: &aad })
        .map_err(|_| CryptoError::Authentication)?;
    Ok(blob)
}

/// Opens a sealed recipe. Any failure to authenticate is [`CryptoError::Authentication`].
pub fn decrypt_recipe(blob: &[u8], passphrase: &str) -> Result<Recipe, CryptoError> {
    let sealed = EncryptedRecipe::from_bytes(blob)?;
    let key = derive_key(passphrase, &sealed.salt)?;
    open(&sealed, &key)
}

fn open(sealed: &EncryptedRecipe, key: &KeyBytes) -> Result<Recipe, CryptoError> {
    let aad = sealed.header();
    let plaintext = Zeroizing::new(
        cipher(key)
            .decrypt(&sealed.nonce.into(), Payload { msg: &sealed.ciphertext_and_tag, aad: &aad })
            .map_err(|_| CryptoError::Authentication)?,
    );
    let text = std::str::from_utf8(&plaintext).map_err(|_| CryptoError::Format("payload is not UTF-8"))?;
    deserialize_recipe(text).map_err(|_| CryptoError::Format("payload is not a recipe"))
}

/// Remembers derived keys per salt so repeated opens of the same blobs skip
/// the key derivation. Keys are wiped on drop.
pub struct KeyCache {
    passphrase: Zeroizing<String>,
    keys: Mutex<HashMap<[u8; SALT_LEN], KeyBytes>>,
}

impl KeyCache {
    pub fn new(passphrase: &str) -> Result<Self, CryptoError> {
        if passphrase.is_empty() {
            return Err(CryptoError::EmptyPassphrase);
        }
        Ok(KeyCache { passphrase: Zeroizing::new(passphrase.to_string()), keys: Mutex::new(HashMap::new()) })
    }

    fn key(&self, salt: &[u8; SALT_LEN]) -> Result<KeyBytes, CryptoError> {
        if let Some(k) = self.keys.lock().unwrap().get(salt) {
            return Ok(k.clone());
        }
        let k = derive_key(&self.passphrase, salt)?;
        self.keys.lock().unwrap().insert(*salt, k.clone());
        Ok(k)
    }

    pub fn decrypt(&self, blob: &[u8]) -> Result<Recipe, CryptoError> {
        let sealed = EncryptedRecipe::from_bytes(blob)?;
        let key = self.key(&sealed.salt)?;
        open(&sealed, &key)
    }

    /// Seals with a fresh salt and nonce, like [`encrypt_recipe`].
    pub fn encrypt(&self, r: &Recipe) -> Result<EncryptedRecipe, CryptoError> {
        let salt = random_bytes::<SALT_LEN>()?;
        let key = self.key(&salt)?;
        seal(r, &key, salt)
    }

    /// Seals reusing an already derived salt; the nonce is still fresh.
    pub fn encrypt_with_salt(&self, r: &Recipe, salt: [u8; SALT_LEN]) -> Result<EncryptedRecipe, CryptoError> {
        let key = self.key(&salt)?;
        seal(r, &key, salt)
    }
}
