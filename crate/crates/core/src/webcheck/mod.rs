//! Is a file still on the web? Direct fetch of the recorded URLs, then link
//! scraping of the pages they lead to, with every answer backed by a hash.

pub mod fetch;
pub mod links;

use std::fmt;
use std::io::{self, Read};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use url::Url;

pub use fetch::{FetchError, FetchOptions, FetchResponse, Fetcher, HttpFetcher};
pub use links::scrape_links;

use crate::origin::{is_local_reference, url_host, CategoryLists, Channel, SourceCategory};
use crate::recipe::Recipe;

const CHUNK: usize = 64 * 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Availability {
    NotRedownloadable,
    PublicRd,
    RdWithAuth,
}

impl Availability {
    fn rank(self) -> u8 {
        match self {
            Availability::NotRedownloadable => 0,
            Availability::RdWithAuth => 1,
            Availability::PublicRd => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Availability::NotRedownloadable => "Not Rd",
            Availability::PublicRd => "Public Rd",
            Availability::RdWithAuth => "Rd w Auth",
        }
    }
}

impl fmt::Display for Availability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckMode {
    Direct,
    Indirect,
    Presumed,
}

/// Verdict for one recorded URL.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelResult {
    pub status: Availability,
    /// The URL whose answer decided the verdict (a linked file for indirect hits).
    pub url_used: String,
    pub mode: CheckMode,
    pub reason: String,
    /// Response body bytes consumed.
    pub bytes_read: u64,
    /// Downloads attempted for this verdict.
    pub probes: u32,
}

impl ChannelResult {
    fn new(status: Availability, url: &str, mode: CheckMode, reason: impl Into<String>) -> Self {
        ChannelResult { status, url_used: url.to_string(), mode, reason: reason.into(), bytes_read: 0, probes: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AvailabilityOutcome {
    /// `None` when the HU is absent.
    pub via_hu: Option<ChannelResult>,
    /// `None` when the RU is absent or was not needed.
    pub via_ru: Option<ChannelResult>,
    pub best: Availability,
}

impl AvailabilityOutcome {
    pub fn from_channels(via_hu: Option<ChannelResult>, via_ru: Option<ChannelResult>) -> Self {
        let best = [&via_hu, &via_ru]
            .into_iter()
            .flatten()
            .map(|c| c.status)
            .max_by_key(|s| s.rank())
            .unwrap_or(Availability::NotRedownloadable);
        AvailabilityOutcome { via_hu, via_ru, best }
    }

    pub fn channel(&self, channel: Channel) -> Option<&ChannelResult> {
        match channel {
            Channel::Hu => self.via_hu.as_ref(),
            Channel::Ru => self.via_ru.as_ref(),
        }
    }

    /// Status of one channel, counting an unevaluated channel as not redownloadable.
    pub fn channel_status(&self, channel: Channel) -> Availability {
        self.channel(channel).map_or(Availability::NotRedownloadable, |c| c.status)
    }

    /// The result that decided `best`, HU preferred on ties.
    pub fn deciding(&self) -> Option<&ChannelResult> {
        [self.via_hu.as_ref(), self.via_ru.as_ref()].into_iter().flatten().find(|c| c.status == self.best)
    }

    pub fn reason(&self) -> String {
        if self.via_hu.is_none() && self.via_ru.is_none() {
            return "links not recorded".to_string();
        }
        let mut parts = Vec::new();
        for (label, c) in [("HU", &self.via_hu), ("RU", &self.via_ru)] {
            if let Some(c) = c {
                parts.push(format!("{label}: {}", c.reason));
            }
        }
        parts.join("; ")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckConfig {
    /// Treat sign-in-only platforms as redownloadable with authentication without fetching.
    pub presume_auth: bool,
    /// Treat `file:` and drive-letter sources as reachable by the user.
    pub presume_local: bool,
    /// Host prefixes that identify a redirect to a sign-in page.
    pub login_host_prefixes: Vec<String>,
    /// Linked candidates downloaded per page.
    pub max_candidates: usize,
    /// Largest HTML page kept for link scraping.
    pub page_limit: usize,
    pub categories: CategoryLists,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            presume_auth: true,
            presume_local: false,
            login_host_prefixes: ["login.", "auth.", "accounts.", "signin.", "sso."].map(String::from).to_vec(),
            max_candidates: 10,
            page_limit: 2 << 20,
            categories: CategoryLists::default(),
        }
    }
}

/// Receives the body of each download attempt, e.g. to keep the winning one.
pub trait ProbeSink {
    /// Called before every attempt; discard anything written so far.
    fn reset(&mut self) -> io::Result<()>;
    fn write(&mut self, data: &[u8]) -> io::Result<()>;
}

struct Page {
    url: Url,
    html: String,
}

struct Probe {
    result: ChannelResult,
    page: Option<Page>,
}

fn parse_web_url(text: &str) -> Result<Url, &'static str> {
    match Url::parse(text) {
        Ok(u) if matches!(u.scheme(), "http" | "https") => Ok(u),
        Ok(_) => Err("non-web scheme"),
        Err(_) if is_local_reference(text) => Err("non-web scheme"),
        Err(_) => Err("invalid URL"),
    }
}

fn is_login_redirect(requested: &Url, fin: &Url, cfg: &CheckConfig) -> bool {
    let (Some(a), Some(b)) = (requested.host_str(), fin.host_str()) else { return false };
    let b = b.to_ascii_lowercase();
    !a.eq_ignore_ascii_case(&b) && cfg.login_host_prefixes.iter().any(|p| b.starts_with(&p.to_ascii_lowercase()))
}

/// Fetches one URL and compares what it serves with the recipe's hashes.
/// Shortens the trait-object lifetime so the sink can be lent out repeatedly.
fn reborrow<'b>(sink: &'b mut Option<&mut dyn ProbeSink>) -> Option<&'b mut dyn ProbeSink> {
    match sink {
        Some(s) => Some(&mut **s),
        None => None,
    }
}

fn probe(
    url_text: &str,
    recipe: &Recipe,
    fetcher: &dyn Fetcher,
    cfg: &CheckConfig,
    mut sink: Option<&mut dyn ProbeSink>,
) -> Probe {
    use Availability::*;
    let done = |result| Probe { result, page: None };
    let url = match parse_web_url(url_text) {
        Ok(u) => u,
        Err(why) => return done(ChannelResult::new(NotRedownloadable, url_text, CheckMode::Direct, why)),
    };
    let mut result = ChannelResult::new(NotRedownloadable, url_text, CheckMode::Direct, "");
    result.probes = 1;
    let resp = match fetcher.fetch(&url) {
        Ok(r) => r,
        Err(e) => {
            result.reason = e.to_string();
            return done(result);
        }
    };
    if is_login_redirect(&url, &resp.final_url, cfg) {
        result.status = RdWithAuth;
        result.reason = format!("redirected to sign-in at {}", resp.final_url.host_str().unwrap_or_default());
        return done(result);
    }
    match resp.status {
        401 | 403 => {
            result.status = RdWithAuth;
            result.reason = format!("HTTP {}", resp.status);
            return done(result);
        }
        200..=299 => {}
        s => {
            result.reason = format!("HTTP {s}");
            return done(result);
        }
    }

    let length_note = resp
        .content_length()
        .filter(|&cl| cl != recipe.size_bytes)
        .map(|cl| format!("content-length {cl} differs from recorded size {}", recipe.size_bytes));
    let html = resp.is_html();
    let final_url = resp.final_url.clone();
    let mut body = resp.body;

    let checkpoint = recipe.partial_hash.as_ref().map(|_| recipe.partial_len.min(recipe.size_bytes));
    let mut full = recipe.hash_algo.hasher();
    let mut partial = checkpoint.map(|_| recipe.hash_algo.hasher());
    let mut prefix_ok = true;
    let check_prefix = |p: &mut Option<crate::recipe::StreamHasher>| -> bool {
        let got = p.take().expect("prefix hasher").finish_hex();
        Some(&got) == recipe.partial_hash.as_ref()
    };
    if checkpoint == Some(0) {
        prefix_ok = check_prefix(&mut partial);
    }
    let mut page_buf: Vec<u8> = Vec::new();
    let mut buf = vec![0u8; CHUNK];
    let mut read_error: Option<String> = None;

    if let Some(s) = sink.as_deref_mut() {
        if let Err(e) = s.reset() {
            result.reason = format!("cannot write download: {e}");
            return done(result);
        }
    }
    loop {
        if !prefix_ok && (!html || page_buf.len() >= cfg.page_limit) {
            break;
        }
        let n = match body.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => {
                read_error = Some(if e.kind() == io::ErrorKind::TimedOut || e.to_string().contains("timed out") {
                    "timeout while reading body".to_string()
                } else {
                    format!("read error: {e}")
                });
                break;
            }
        };
        let chunk = &buf[..n];
        let before = result.bytes_read;
        result.bytes_read += n as u64;
        full.update(chunk);
        if html && page_buf.len() < cfg.page_limit {
            let take = (cfg.page_limit - page_buf.len()).min(n);
            page_buf.extend_from_slice(&chunk[..take]);
        }
        if let (Some(cp), true) = (checkpoint, partial.is_some()) {
            if before < cp {
                let take = (cp - before).min(n as u64) as usize;
                partial.as_mut().expect("prefix hasher").update(&chunk[..take]);
                if before + take as u64 == cp {
                    prefix_ok = check_prefix(&mut partial);
                }
            }
        }
        if let Some(s) = sink.as_deref_mut() {
            if let Err(e) = s.write(chunk) {
                read_error = Some(format!("cannot write download: {e}"));
                break;
            }
        }
    }
    drop(body);

    let page = (html && read_error.is_none())
        .then(|| Page { url: final_url, html: String::from_utf8_lossy(&page_buf).into_owned() });
    let mut reason = if let Some(e) = read_error {
        e
    } else if !prefix_ok {
        "content mismatch (fail-fast)".to_string()
    } else if result.bytes_read == recipe.size_bytes && full.finish_hex() == recipe.hash_full {
        result.status = PublicRd;
        "hash match".to_string()
    } else if html {
        "content mismatch (served an HTML page)".to_string()
    } else {
        "content mismatch".to_string()
    };
    if let Some(note) = length_note {
        reason = format!("{reason}; {note}");
    }
    result.reason = reason;
    Probe { result, page }
}

/// Fetches `url` and verifies the served bytes against the recipe.
pub fn check_direct(url: &str, recipe: &Recipe, fetcher: &dyn Fetcher, cfg: &CheckConfig) -> ChannelResult {
    probe(url, recipe, fetcher, cfg, None).result
}

fn last_segment(url: &Url) -> String {
    url.path_segments().and_then(|mut s| s.next_back()).map(percent_decode).unwrap_or_default()
}

fn percent_decode(s: &str) -> String {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' && i + 2 < bytes.len() {
            if let Ok(v) = u8::from_str_radix(&s[i + 1..i + 3], 16) {
                out.push(v);
                i += 3;
                continue;
            }
        }
        out.push(bytes[i]);
        i += 1;
    }
    String::from_utf8_lossy(&out).into_owned()
}

/// Candidate order: exact file name, then same extension, then the rest.
fn candidate_rank(url: &Url, recipe: &Recipe, ext: &str) -> u8 {
    let name = last_segment(url);
    if name == recipe.file_name {
        0
    } else if !ext.is_empty() && name.to_ascii_lowercase().ends_with(&format!(".{ext}")) {
        1
    } else {
        2
    }
}

fn without_fragment(u: &Url) -> String {
    let mut u = u.clone();
    u.set_fragment(None);
    u.to_string()
}

fn indirect_from_page(
    page: &Page,
    recipe: &Recipe,
    fetcher: &dyn Fetcher,
    cfg: &CheckConfig,
    mut sink: Option<&mut dyn ProbeSink>,
) -> ChannelResult {
    use Availability::*;
    let page_key = without_fragment(&page.url);
    let ext = recipe.extension();
    let mut links: Vec<(u8, Url)> = scrape_links(&page.html, &page.url)
        .into_iter()
        .filter(|u| without_fragment(u) != page_key)
        .map(|u| (candidate_rank(&u, recipe, &ext), u))
        .collect();
    links.sort_by_key(|(rank, _)| *rank);

    let mut result = ChannelResult::new(NotRedownloadable, page.url.as_str(), CheckMode::Indirect, "");
    if links.is_empty() {
        result.reason = "no links on page".to_string();
        return result;
    }
    let mut auth: Option<ChannelResult> = None;
    for (_, cand) in links.iter().take(cfg.max_candidates) {
        let r = probe(cand.as_str(), recipe, fetcher, cfg, reborrow(&mut sink)).result;
        result.probes += r.probes;
        result.bytes_read += r.bytes_read;
        match r.status {
            PublicRd => {
                result.status = PublicRd;
                result.url_used = r.url_used;
                result.reason = format!("hash match via link on {}", page.url);
                return result;
            }
            RdWithAuth if auth.is_none() => auth = Some(r),
            _ => {}
        }
    }
    if let Some(a) = auth {
        result.status = RdWithAuth;
        result.url_used = a.url_used;
        result.reason = format!("linked file needs sign-in ({})", a.reason);
        return result;
    }
    result.reason =
        format!("no linked file matched ({} of {} links probed)", links.len().min(cfg.max_candidates), links.len());
    result
}

/// Fetches a page, follows its links and verifies the candidates.
pub fn check_indirect(page_url: &str, recipe: &Recipe, fetcher: &dyn Fetcher, cfg: &CheckConfig) -> ChannelResult {
    let p = probe(page_url, recipe, fetcher, cfg, None);
    if p.result.status == Availability::PublicRd {
        return p.result;
    }
    match p.page {
        Some(page) => {
            let mut r = indirect_from_page(&page, recipe, fetcher, cfg, None);
            r.probes += p.result.probes;
            r.bytes_read += p.result.bytes_read;
            r
        }
        None => {
            let mut r = p.result;
            r.mode = CheckMode::Indirect;
            r.reason = format!("page: {}", r.reason);
            r
        }
    }
}

fn is_site_root(url: &str) -> bool {
    Url::parse(url).is_ok_and(|u| matches!(u.path(), "" | "/") && u.query().is_none())
}

fn presumed_category(url: &str, cfg: &CheckConfig) -> Option<SourceCategory> {
    if !cfg.presume_auth || is_site_root(url) {
        return None;
    }
    cfg.categories.host_category(url).filter(|c| {
        matches!(c, SourceCategory::CloudCollaboration | SourceCategory::Webmail | SourceCategory::BigTechCSP)
    })
}

/// Full verdict for one recorded URL: presumption rules, then a direct
/// fetch, then the links of the page it served.
pub fn evaluate_url(
    url: &str,
    recipe: &Recipe,
    fetcher: &dyn Fetcher,
    cfg: &CheckConfig,
    mut sink: Option<&mut dyn ProbeSink>,
) -> ChannelResult {
    use Availability::*;
    if is_local_reference(url) {
        return if cfg.presume_local {
            ChannelResult::new(RdWithAuth, url, CheckMode::Presumed, "local source presumed reachable by the user")
        } else {
            ChannelResult::new(NotRedownloadable, url, CheckMode::Presumed, "local source")
        };
    }
    if let Some(cat) = presumed_category(url, cfg) {
        return ChannelResult::new(
            RdWithAuth,
            url,
            CheckMode::Presumed,
            format!("{cat} source presumed to need sign-in"),
        );
    }
    let direct = probe(url, recipe, fetcher, cfg, reborrow(&mut sink));
    if direct.result.status == PublicRd {
        return direct.result;
    }
    let Some(page) = direct.page else { return direct.result };
    let mut indirect = indirect_from_page(&page, recipe, fetcher, cfg, sink);
    indirect.probes += direct.result.probes;
    indirect.bytes_read += direct.result.bytes_read;
    if indirect.status.rank() >= direct.result.status.rank() {
        indirect
    } else {
        let mut d = direct.result;
        d.probes = indirect.probes;
        d.bytes_read = indirect.bytes_read;
        d
    }
}

fn channel_url(recipe: &Recipe, channel: Channel) -> Option<&str> {
    match channel {
        Channel::Hu => recipe.host_url.as_deref(),
        Channel::Ru => recipe.referrer_url.as_deref(),
    }
    .filter(|u| !u.is_empty())
}

/// HU first, then RU; stops at the first publicly redownloadable verdict.
pub fn check_availability(recipe: &Recipe, fetcher: &dyn Fetcher, cfg: &CheckConfig) -> AvailabilityOutcome {
    check_availability_into(recipe, fetcher, cfg, None)
}

/// Like [`check_availability`], streaming every attempt into `sink`. When the
/// outcome is public, the sink holds the verified bytes.
pub fn check_availability_into(
    recipe: &Recipe,
    fetcher: &dyn Fetcher,
    cfg: &CheckConfig,
    mut sink: Option<&mut dyn ProbeSink>,
) -> AvailabilityOutcome {
    let hu = channel_url(recipe, Channel::Hu).map(|u| evaluate_url(u, recipe, fetcher, cfg, reborrow(&mut sink)));
    if hu.as_ref().is_some_and(|r| r.status == Availability::PublicRd) {
        return AvailabilityOutcome::from_channels(hu, None);
    }
    let ru = channel_url(recipe, Channel::Ru).map(|u| evaluate_url(u, recipe, fetcher, cfg, sink));
    AvailabilityOutcome::from_channels(hu, ru)
}

/// Evaluates both channels regardless of the HU verdict.
pub fn check_both_channels(recipe: &Recipe, fetcher: &dyn Fetcher, cfg: &CheckConfig) -> AvailabilityOutcome {
    let hu = channel_url(recipe, Channel::Hu).map(|u| evaluate_url(u, recipe, fetcher, cfg, None));
    let ru = channel_url(recipe, Channel::Ru).map(|u| evaluate_url(u, recipe, fetcher, cfg, None));
    AvailabilityOutcome::from_channels(hu, ru)
}

/// Checks many recipes with at most `concurrency` in flight. Results keep input order.
pub fn check_many(
    recipes: &[Recipe],
    fetcher: &dyn Fetcher,
    cfg: &CheckConfig,
    concurrency: usize,
    both_channels: bool,
) -> Vec<AvailabilityOutcome> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<AvailabilityOutcome>>> = Mutex::new(vec![None; recipes.len()]);
    let workers = concurrency.max(1).min(recipes.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(recipe) = recipes.get(i) else { break };
                let outcome = if both_channels {
                    check_both_channels(recipe, fetcher, cfg)
                } else {
                    check_availability(recipe, fetcher, cfg)
                };
                slots.lock().unwrap()[i] = Some(outcome);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|o| o.expect("every recipe checked")).collect()
}

/// Host of a URL, lowercased, for display.
pub fn host_of(url: &str) -> Option<String> {
    url_host(url)
}
