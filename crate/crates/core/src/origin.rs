//! Download provenance: `Zone.Identifier` streams, freedesktop xattrs and
//! `.zoneid` sidecars, plus the source-category cascade.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use url::Url;

/// Extended attribute holding the download URL.
pub const XATTR_ORIGIN_URL: &str = "user.xdg.origin.url";
/// Extended attribute holding the referring page.
pub const XATTR_REFERRER_URL: &str = "user.xdg.referrer.url";
/// Suffix of fixture-mode sidecar files.
pub const SIDECAR_SUFFIX: &str = ".zoneid";

/// Where provenance was read from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OriginSource {
    Ads,
    Xattr,
    Sidecar,
}

/// Recorded provenance of one file. URLs are kept exactly as written.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OriginMetadata {
    pub zone_id: Option<i32>,
    pub referrer_url: Option<String>,
    pub host_url: Option<String>,
    pub channel: OriginSource,
}

impl OriginMetadata {
    /// Returns `None` when nothing at all was recorded.
    pub fn new(
        zone_id: Option<i32>,
        referrer_url: Option<String>,
        host_url: Option<String>,
        channel: OriginSource,
    ) -> Option<Self> {
        let referrer_url = referrer_url.filter(|u| !u.is_empty());
        let host_url = host_url.filter(|u| !u.is_empty());
        if zone_id.is_none() && referrer_url.is_none() && host_url.is_none() {
            return None;
        }
        Some(OriginMetadata { zone_id, referrer_url, host_url, channel })
    }

    pub fn url(&self, channel: Channel) -> Option<&str> {
        match channel {
            Channel::Ru => self.referrer_url.as_deref(),
            Channel::Hu => self.host_url.as_deref(),
        }
    }

    /// Canonical `Zone.Identifier` text (CRLF line endings, as Windows writes it).
    pub fn to_zone_identifier(&self) -> String {
        let mut out = String::from("[ZoneTransfer]\r\n");
        if let Some(z) = self.zone_id {
            out.push_str(&format!("ZoneId={z}\r\n"));
        }
        if let Some(ru) = &self.referrer_url {
            out.push_str(&format!("ReferrerUrl={ru}\r\n"));
        }
        if let Some(hu) = &self.host_url {
            out.push_str(&format!("HostUrl={hu}\r\n"));
        }
        out
    }
}

/// Parses `Zone.Identifier` stream content. Accepts any bytes.
///
/// Keys are read only inside a `[ZoneTransfer]` section and matched
/// case-insensitively; the first occurrence of a key wins.
pub fn parse_zone_identifier(raw: &[u8]) -> Option<OriginMetadata> {
    let text = decode_text(raw);
    let mut in_section = false;
    let mut zone_id: Option<i32> = None;
    let mut zone_seen = false;
    let mut referrer: Option<String> = None;
    let mut host: Option<String> = None;

    for line in text.split('\n') {
        let line = line.strip_suffix('\r').unwrap_or(line);
        let trimmed = line.trim();
        if trimmed.starts_with('[') && trimmed.ends_with(']') {
            in_section = trimmed[1..trimmed.len() - 1].trim().eq_ignore_ascii_case("ZoneTransfer");
            continue;
        }
        if !in_section {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else { continue };
        let key = key.trim();
        if key.eq_ignore_ascii_case("ZoneId") {
            if !zone_seen {
                zone_seen = true;
                zone_id = value.trim().parse().ok();
            }
        } else if key.eq_ignore_ascii_case("ReferrerUrl") {
            if referrer.is_none() && !value.is_empty() {
                referrer = Some(value.to_string());
            }
        } else if key.eq_ignore_ascii_case("HostUrl") && host.is_none() && !value.is_empty() {
            host = Some(value.to_string());
        }
    }
    OriginMetadata::new(zone_id, referrer, host, OriginSource::Ads)
}

fn decode_text(raw: &[u8]) -> String {
    if let Some(rest) = raw.strip_prefix(&[0xFF, 0xFE]) {
        let units: Vec<u16> = rest.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
        return String::from_utf16_lossy(&units);
    }
    let raw = raw.strip_prefix(&[0xEF, 0xBB, 0xBF]).unwrap_or(raw);
    String::from_utf8_lossy(raw).into_owned()
}

/// How [`read_origin`] looks for provenance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct OriginOptions {
    /// Read `<file>.zoneid` sidecars instead of platform metadata.
    pub fixture_mode: bool,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(SIDECAR_SUFFIX);
    PathBuf::from(name)
}

/// Reads provenance for `path`. Any failure is treated as "nothing recorded".
pub fn read_origin(path: &Path, opts: OriginOptions) -> Option<OriginMetadata> {
    if opts.fixture_mode {
        let raw = std::fs::read(sidecar_path(path)).ok()?;
        let mut meta = parse_zone_identifier(&raw)?;
        meta.channel = OriginSource::Sidecar;
        return Some(meta);
    }
    read_platform_origin(path)
}

#[cfg(windows)]
fn read_platform_origin(path: &Path) -> Option<OriginMetadata> {
    let mut stream = path.as_os_str().to_owned();
    stream.push(":Zone.Identifier");
    let raw = std::fs::read(PathBuf::from(stream)).ok()?;
    parse_zone_identifier(&raw)
}

#[cfg(unix)]
fn read_platform_origin(path: &Path) -> Option<OriginMetadata> {
    let get = |key: &str| -> Option<String> {
        match xattr::get(path, key) {
            Ok(Some(v)) => Some(String::from_utf8_lossy(&v).into_owned()),
            Ok(None) => None,
            Err(e) => {
                log::debug!("xattr {key} on {}: {e}", path.display());
                None
            }
        }
    };
    OriginMetadata::new(None, get(XATTR_REFERRER_URL), get(XATTR_ORIGIN_URL), OriginSource::Xattr)
}

#[cfg(not(any(unix, windows)))]
fn read_platform_origin(_path: &Path) -> Option<OriginMetadata> {
    None
}

/// Which recorded URL is meant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    #[serde(rename = "RU")]
    Ru,
    #[serde(rename = "HU")]
    Hu,
}

impl std::fmt::Display for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Channel::Ru => "RU",
            Channel::Hu => "HU",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SourceCategory {
    CloudCollaboration,
    Webmail,
    BigTechCSP,
    SmallCSP,
    ApplicationsTools,
    LocalAccess,
    DirectLink,
    LinksNotRecorded,
}

impl SourceCategory {
    pub const ALL: [SourceCategory; 8] = [
        SourceCategory::CloudCollaboration,
        SourceCategory::Webmail,
        SourceCategory::BigTechCSP,
        SourceCategory::SmallCSP,
        SourceCategory::ApplicationsTools,
        SourceCategory::LocalAccess,
        SourceCategory::DirectLink,
        SourceCategory::LinksNotRecorded,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SourceCategory::CloudCollaboration => "Cloud Collaboration",
            SourceCategory::Webmail => "Webmail",
            SourceCategory::BigTechCSP => "Big Tech CSP",
            SourceCategory::SmallCSP => "Small CSP",
            SourceCategory::ApplicationsTools => "Applications/Tools",
            SourceCategory::LocalAccess => "Local Access",
            SourceCategory::DirectLink => "Direct Link",
            SourceCategory::LinksNotRecorded => "Links Not Recorded",
        }
    }
}

impl std::fmt::Display for SourceCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Host lists driving the category cascade. A listed domain matches itself
/// and any subdomain.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CategoryLists {
    pub webmail: Vec<String>,
    pub cloud_collaboration: Vec<String>,
    pub big_tech: Vec<String>,
    pub small_csp: Vec<String>,
    pub tools: Vec<String>,
}

fn owned(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

impl Default for CategoryLists {
    fn default() -> Self {
        CategoryLists {
            webmail: owned(&["outlook.office.com", "outlook.live.com", "mail.google.com"]),
            cloud_collaboration: owned(&[
                "sharepoint.com",
                "teams.microsoft.com",
                "teams.live.com",
                "statics.teams.cdn.office.net",
            ]),
            big_tech: owned(&[
                "icloud.com",
                "icloud-content.com",
                "drive.google.com",
                "drive.usercontent.google.com",
                "onedrive.live.com",
                "1drv.ms",
            ]),
            small_csp: owned(&[
                "cloudstor.aarnet.edu.au",
                "pixeldrain.com",
                "sendspace.com",
                "mediafire.com",
                "wetransfer.com",
                "dropbox.com",
                "box.com",
                "mega.nz",
                "gofile.io",
            ]),
            tools: owned(&[
                "ilovepdf.com",
                "smallpdf.com",
                "pdf2go.com",
                "savefrom.net",
                "y2mate.com",
                "ezyzip.com",
                "google.com",
                "bing.com",
            ]),
        }
    }
}

fn host_in(host: &str, list: &[String]) -> bool {
    list.iter().any(|d| {
        let d = d.trim_start_matches('.').to_ascii_lowercase();
        host == d || (host.len() > d.len() && host.ends_with(&d) && host.as_bytes()[host.len() - d.len() - 1] == b'.')
    })
}

impl CategoryLists {
    /// Category implied by the host alone (rules 4 to 8), if any.
    pub fn host_category(&self, url: &str) -> Option<SourceCategory> {
        let host = url_host(url)?;
        if host_in(&host, &self.webmail) {
            Some(SourceCategory::Webmail)
        } else if host_in(&host, &self.cloud_collaboration) {
            Some(SourceCategory::CloudCollaboration)
        } else if host_in(&host, &self.big_tech) {
            Some(SourceCategory::BigTechCSP)
        } else if host_in(&host, &self.small_csp) {
            Some(SourceCategory::SmallCSP)
        } else if host_in(&host, &self.tools) {
            Some(SourceCategory::ApplicationsTools)
        } else {
            None
        }
    }
}

pub(crate) fn url_host(url: &str) -> Option<String> {
    Url::parse(url).ok()?.host_str().map(|h| h.trim_end_matches('.').to_ascii_lowercase())
}

/// `file:` URLs and Windows drive paths (`C:\...`, `C:/...`).
pub fn is_local_reference(url: &str) -> bool {
    let b = url.as_bytes();
    let drive = b.len() >= 3 && b[0].is_ascii_alphabetic() && b[1] == b':' && (b[2] == b'\\' || b[2] == b'/');
    drive || starts_with_ci(url, "file:")
}

fn starts_with_ci(s: &str, prefix: &str) -> bool {
    s.len() >= prefix.len() && s.as_bytes()[..prefix.len()].eq_ignore_ascii_case(prefix.as_bytes())
}

/// Rules 2 to 8 of the cascade applied to one URL.
fn categorize_url(url: &str, lists: &CategoryLists) -> Option<SourceCategory> {
    if is_local_reference(url) {
        return Some(SourceCategory::LocalAccess);
    }
    if starts_with_ci(url, "chrome-extension:") {
        return Some(SourceCategory::ApplicationsTools);
    }
    lists.host_category(url)
}

/// Whether the final path segment of `url` ends in `.ext`.
fn names_file_with_extension(url: &str, ext: &str) -> bool {
    let ext = ext.trim_start_matches('.');
    if ext.is_empty() {
        return false;
    }
    let Ok(parsed) = Url::parse(url) else { return false };
    let Some(last) = parsed.path_segments().and_then(|mut s| s.next_back()) else { return false };
    let last = last.to_ascii_lowercase();
    last.ends_with(&format!(".{}", ext.to_ascii_lowercase()))
}

/// Single category for a file, looking at HU first and then RU.
pub fn classify_source(origin: Option<&OriginMetadata>, file_extension: &str, lists: &CategoryLists) -> SourceCategory {
    let Some(origin) = origin else { return SourceCategory::LinksNotRecorded };
    let (ru, hu) = (origin.referrer_url.as_deref(), origin.host_url.as_deref());
    if ru.is_none() && hu.is_none() {
        return SourceCategory::LinksNotRecorded;
    }
    if let Some(hu) = hu {
        if let Some(c) = categorize_url(hu, lists) {
            return c;
        }
        if names_file_with_extension(hu, file_extension) {
            return SourceCategory::DirectLink;
        }
    }
    if let Some(c) = ru.and_then(|ru| categorize_url(ru, lists)) {
        return c;
    }
    if hu.is_some() {
        SourceCategory::SmallCSP
    } else {
        SourceCategory::ApplicationsTools
    }
}

/// Category of one recorded URL, as used for the per-channel tables. A URL
/// that matches no list counts as a direct link when the file's HU names the
/// file itself.
pub fn classify_channel(
    origin: Option<&OriginMetadata>,
    channel: Channel,
    file_extension: &str,
    lists: &CategoryLists,
) -> SourceCategory {
    let Some(origin) = origin else { return SourceCategory::LinksNotRecorded };
    let Some(url) = origin.url(channel) else { return SourceCategory::LinksNotRecorded };
    if let Some(c) = categorize_url(url, lists) {
        return c;
    }
    if origin.host_url.as_deref().is_some_and(|hu| names_file_with_extension(hu, file_extension)) {
        return SourceCategory::DirectLink;
    }
    match channel {
        Channel::Hu => SourceCategory::SmallCSP,
        Channel::Ru => SourceCategory::ApplicationsTools,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hu(url: &str) -> OriginMetadata {
        OriginMetadata::new(Some(3), None, Some(url.into()), OriginSource::Ads).unwrap()
    }

    #[test]
    fn parses_crlf_stream() {
        let m = parse_zone_identifier(b"[ZoneTransfer]\r\nZoneId=3\r\nHostUrl=https://a.example/f.bin").unwrap();
        assert_eq!(m.zone_id, Some(3));
        assert_eq!(m.host_url.as_deref(), Some("https://a.example/f.bin"));
        assert_eq!(m.referrer_url, None);
    }

    #[test]
    fn empty_and_keyless_input_is_absent() {
        assert_eq!(parse_zone_identifier(b""), None);
        assert_eq!(parse_zone_identifier(b"[ZoneTransfer]\r\nAppZoneId=4\r\n"), None);
        assert_eq!(parse_zone_identifier(b"ZoneId=3\nHostUrl=http://x/"), None);
    }

    #[test]
    fn referrer_only() {
        let m = parse_zone_identifier(b"[ZoneTransfer]\nReferrerUrl=https://r.example/page").unwrap();
        assert_eq!(m.referrer_url.as_deref(), Some("https://r.example/page"));
        assert_eq!(m.host_url, None);
        assert_eq!(m.zone_id, None);
    }

    #[test]
    fn bom_case_and_bad_zone() {
        let m = parse_zone_identifier(
            b"\xEF\xBB\xBF[zonetransfer]\nzoneid=abc\nHOSTURL=http://h/x\nLastWriterPackageFamilyName=y\n",
        )
        .unwrap();
        assert_eq!(m.zone_id, None);
        assert_eq!(m.host_url.as_deref(), Some("http://h/x"));
    }

    #[test]
    fn utf16_stream() {
        let text = "[ZoneTransfer]\r\nZoneId=3\r\n";
        let mut raw = vec![0xFF, 0xFE];
        for u in text.encode_utf16() {
            raw.extend_from_slice(&u.to_le_bytes());
        }
        assert_eq!(parse_zone_identifier(&raw).unwrap().zone_id, Some(3));
    }

    #[test]
    fn urls_are_verbatim() {
        let m = parse_zone_identifier(b"[ZoneTransfer]\nHostUrl=HTTP://Example.COM/a b?x=%41\n").unwrap();
        assert_eq!(m.host_url.as_deref(), Some("HTTP://Example.COM/a b?x=%41"));
    }

    #[test]
    fn classification_examples() {
        let lists = CategoryLists::default();
        assert_eq!(
            classify_source(Some(&hu("https://outlook.office.com/mail/attachment/x")), "pdf", &lists),
            SourceCategory::Webmail
        );
        assert_eq!(
            classify_source(Some(&hu("chrome-extension://abcdef/viewer")), "pdf", &lists),
            SourceCategory::ApplicationsTools
        );
        assert_eq!(classify_source(None, "mp4", &lists), SourceCategory::LinksNotRecorded);
        assert_eq!(
            classify_source(Some(&hu("file:///C:/Users/u/Downloads/movie.mp4")), "mp4", &lists),
            SourceCategory::LocalAccess
        );
        assert_eq!(
            classify_source(Some(&hu("https://cdn.example.net/pkg/tool-1.0.zip")), "zip", &lists),
            SourceCategory::DirectLink
        );
        assert_eq!(
            classify_source(Some(&hu("https://files.example.net/s/8d7f")), "zip", &lists),
            SourceCategory::SmallCSP
        );
        let ru_local = OriginMetadata::new(None, Some("C:\\Users\\u\\a.zip".into()), None, OriginSource::Ads);
        assert_eq!(classify_source(ru_local.as_ref(), "rpa", &lists), SourceCategory::LocalAccess);
        let ru_page =
            OriginMetadata::new(None, Some("https://vendor.example/downloads".into()), None, OriginSource::Ads);
        assert_eq!(classify_source(ru_page.as_ref(), "exe", &lists), SourceCategory::ApplicationsTools);
    }

    #[test]
    fn subdomain_matching_is_label_aligned() {
        let lists = CategoryLists::default();
        assert_eq!(lists.host_category("https://contoso.sharepoint.com/x"), Some(SourceCategory::CloudCollaboration));
        assert_eq!(lists.host_category("https://notsharepoint.com/x"), None);
    }

    #[test]
    fn channel_classification_uses_each_url() {
        let lists = CategoryLists::default();
        let m = OriginMetadata::new(
            Some(3),
            Some("http://www.google.com/url?q=x".into()),
            Some("http://releases.example.org/distro.iso".into()),
            OriginSource::Ads,
        );
        assert_eq!(classify_channel(m.as_ref(), Channel::Hu, "iso", &lists), SourceCategory::DirectLink);
        assert_eq!(classify_channel(m.as_ref(), Channel::Ru, "iso", &lists), SourceCategory::ApplicationsTools);
        let vendor = OriginMetadata::new(
            Some(3),
            Some("http://www.vendor.example/download/".into()),
            Some("http://dl.vendor.example/v/setup.exe".into()),
            OriginSource::Ads,
        );
        assert_eq!(classify_channel(vendor.as_ref(), Channel::Ru, "exe", &lists), SourceCategory::DirectLink);
        assert_eq!(classify_channel(vendor.as_ref(), Channel::Hu, "mp4", &lists), SourceCategory::SmallCSP);
    }

    #[test]
    fn local_reference_detection() {
        assert!(is_local_reference("C:\\Users\\x"));
        assert!(is_local_reference("d:/x"));
        assert!(is_local_reference("FILE:///tmp/x"));
        assert!(!is_local_reference("http://c/x"));
        assert!(!is_local_reference("C:"));
    }

    fn url_text() -> impl Strategy<Value = String> {
        "[a-zA-Z][a-zA-Z0-9+.-]{0,8}:[^\r\n]{1,60}"
    }

    proptest! {
        #[test]
        fn parser_is_total(bytes in proptest::collection::vec(any::<u8>(), 0..512)) {
            let _ = parse_zone_identifier(&bytes);
        }

        #[test]
        fn parser_is_total_on_ini_like_text(
            lines in proptest::collection::vec("(\\[ZoneTransfer\\]|[A-Za-z]{0,12}=[^\n]{0,40}|[^\n]{0,20})", 0..12),
            crlf in any::<bool>(),
        ) {
            let text = lines.join(if crlf { "\r\n" } else { "\n" });
            let _ = parse_zone_identifier(text.as_bytes());
        }

        #[test]
        fn canonical_form_round_trips(
            zone in proptest::option::of(-5i32..100),
            ru in proptest::option::of(url_text()),
            hu in proptest::option::of(url_text()),
        ) {
            if let Some(m) = OriginMetadata::new(zone, ru, hu, OriginSource::Ads) {
                let text = m.to_zone_identifier();
                prop_assert_eq!(parse_zone_identifier(text.as_bytes()), Some(m));
            }
        }

        #[test]
        fn classification_is_deterministic(
            ru in proptest::option::of(url_text()),
            hu in proptest::option::of(url_text()),
            ext in "[a-z0-9]{0,4}",
        ) {
            let lists = CategoryLists::default();
            let m = OriginMetadata::new(None, ru, hu, OriginSource::Ads);
            let a = classify_source(m.as_ref(), &ext, &lists);
            prop_assert_eq!(a, classify_source(m.as_ref(), &ext, &lists));
            if m.is_none() {
                prop_assert_eq!(a, SourceCategory::LinksNotRecorded);
            } else {
                prop_assert_ne!(a, SourceCategory::LinksNotRecorded);
            }
        }
    }
}
