//! The fetcher abstraction and its HTTP implementation.

use std::collections::BTreeMap;
use std::io::Read;
use std::time::Duration;

use url::Url;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const MAX_REDIRECTS: usize = 10;
pub const DEFAULT_USER_AGENT: &str = concat!("webpurge/", env!("CARGO_PKG_VERSION"));

/// One GET, after redirects.
pub struct FetchResponse {
    pub status: u16,
    pub final_url: Url,
    /// Header names lowercased.
    pub headers: BTreeMap<String, String>,
    pub body: Box<dyn Read + Send>,
}

impl FetchResponse {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.get(&name.to_ascii_lowercase()).map(String::as_str)
    }

    pub fn content_length(&self) -> Option<u64> {
        self.header("content-length").and_then(|v| v.trim().parse().ok())
    }

    pub fn is_html(&self) -> bool {
        self.header("content-type").is_some_and(|ct| {
            let ct = ct.to_ascii_lowercase();
            ct.starts_with("text/html") || ct.starts_with("application/xhtml")
        })
    }
}

impl std::fmt::Debug for FetchResponse {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FetchResponse")
            .field("status", &self.status)
            .field("final_url", &self.final_url.as_str())
            .field("headers", &self.headers)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FetchError {
    #[error("timeout")]
    Timeout,
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("too many redirects")]
    TooManyRedirects,
    #[error("{0}")]
    Other(String),
}

/// Performs GET requests. Must be usable from several threads at once.
pub trait Fetcher: Send + Sync {
    fn fetch(&self, url: &Url) -> Result<FetchResponse, FetchError>;
}

#[derive(Clone, Debug)]
pub struct FetchOptions {
    /// Applies to connecting and to each stall while reading.
    pub timeout: Duration,
    pub user_agent: String,
    /// HTTP proxy for all requests; `None` uses the environment's settings.
    pub proxy: Option<String>,
}

impl Default for FetchOptions {
    fn default() -> Self {
        FetchOptions { timeout: DEFAULT_TIMEOUT, user_agent: DEFAULT_USER_AGENT.to_string(), proxy: None }
    }
}

/// Blocking HTTP(S) fetcher following at most [`MAX_REDIRECTS`] redirects.
pub struct HttpFetcher {
    client: reqwest::blocking::Client,
}

impl HttpFetcher {
    pub fn new(opts: &FetchOptions) -> Result<Self, FetchError> {
        let mut builder = reqwest::blocking::Client::builder()
            .redirect(reqwest::redirect::Policy::limited(MAX_REDIRECTS))
            .timeout(opts.timeout)
            .connect_timeout(opts.timeout)
            .user_agent(opts.user_agent.clone());
        if let Some(proxy) = &opts.proxy {
            let proxy = reqwest::Proxy::all(proxy).map_err(|e| FetchError::Other(format!("proxy {proxy}: {e}")))?;
            builder = builder.proxy(proxy);
        }
        let client = builder.build().map_err(|e| FetchError::Other(e.to_string()))?;
        Ok(HttpFetcher { client })
    }
}

fn map_error(e: reqwest::Error) -> FetchError {
    if e.is_timeout() {
        FetchError::Timeout
    } else if e.is_redirect() {
        FetchError::TooManyRedirects
    } else if e.is_connect() {
        FetchError::Connect(root_cause(&e))
    } else {
        FetchError::Other(root_cause(&e))
    }
}

fn root_cause(e: &(dyn std::error::Error + 'static)) -> String {
    let mut cur = e;
    while let Some(next) = cur.source() {
        cur = next;
    }
    cur.to_string()
}

impl Fetcher for HttpFetcher {
    fn fetch(&self, url: &Url) -> Result<FetchResponse, FetchError> {
        let resp = self.client.get(url.clone()).send().map_err(map_error)?;
        let headers = resp
            .headers()
            .iter()
            .filter_map(|(k, v)| Some((k.as_str().to_ascii_lowercase(), v.to_str().ok()?.to_string())))
            .collect();
        Ok(FetchResponse {
            status: resp.status().as_u16(),
            final_url: resp.url().clone(),
            headers,
            body: Box::new(resp),
        })
    }
}
