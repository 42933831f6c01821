#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::time::Duration;

use webpurge_core::webcheck::{FetchOptions, HttpFetcher};
use webpurge_mockweb::MockWeb;

pub const PASS: &str = "correct horse battery staple";

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

/// A real HTTP client whose every request goes to `mock`.
pub fn fetcher_for(mock: &MockWeb, timeout: Duration) -> HttpFetcher {
    HttpFetcher::new(&FetchOptions { timeout, proxy: Some(mock.proxy_url()), ..FetchOptions::default() }).unwrap()
}

pub fn zone_identifier(ru: Option<&str>, hu: Option<&str>) -> String {
    let mut s = String::from("[ZoneTransfer]\r\nZoneId=3\r\n");
    if let Some(ru) = ru {
        s.push_str(&format!("ReferrerUrl={ru}\r\n"));
    }
    if let Some(hu) = hu {
        s.push_str(&format!("HostUrl={hu}\r\n"));
    }
    s
}

/// Writes `data` to `dir/name` with a fixture-mode provenance sidecar.
pub fn downloaded(dir: &Path, name: &str, data: &[u8], ru: Option<&str>, hu: Option<&str>) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, data).unwrap();
    if ru.is_some() || hu.is_some() {
        std::fs::write(webpurge_core::origin::sidecar_path(&p), zone_identifier(ru, hu)).unwrap();
    }
    p
}

/// Peak resident set size of this process in bytes, where the platform reports it.
pub fn peak_rss() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}
