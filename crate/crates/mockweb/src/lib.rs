//! Loopback HTTP server for exercising web checks without the network.
//!
//! Routes are keyed by absolute URL, so the server works both as an origin
//! (`http://127.0.0.1:<port>/path`) and as a plain HTTP forward proxy: point a
//! client's proxy at [`MockWeb::proxy_url`] and any `http://host/path` it
//! requests is answered from the route table. Unknown URLs get a 404.
//!
//! Every request is appended to a log once its response has been written (or
//! abandoned by the client), so tests can assert how many downloads a check
//! performed and how many body bytes left the server.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::Deserialize;
use url::Url;

const CHUNK: usize = 64 * 1024;
const PATTERN_BLOCK: usize = 1 << 20;

/// How the server answers one URL.
#[derive(Clone, Debug)]
pub enum Reply {
    /// 200 with the given bytes.
    Bytes { body: Arc<[u8]>, content_type: String },
    /// 200 with `len` deterministic pseudo-random bytes derived from `seed`.
    Pattern { seed: u64, len: u64 },
    /// 200 streaming the current contents of a file on disk.
    File(PathBuf),
    /// 200 `text/html`.
    Html(String),
    /// Bare status with an empty body.
    Status(u16),
    /// Redirect to `location`.
    Redirect { status: u16, location: String },
    /// Read the request, then say nothing for `Duration` and close.
    Hang(Duration),
    /// Close the connection without responding.
    Drop,
}

impl Reply {
    pub fn bytes(body: impl Into<Vec<u8>>) -> Self {
        Reply::Bytes {
            body: Arc::from(body.into().into_boxed_slice()),
            content_type: "application/octet-stream".to_string(),
        }
    }

    pub fn html(body: impl Into<String>) -> Self {
        Reply::Html(body.into())
    }

    pub fn redirect(location: impl Into<String>) -> Self {
        Reply::Redirect { status: 302, location: location.into() }
    }
}

/// One served request.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RequestRecord {
    pub method: String,
    /// Normalized absolute URL that was requested.
    pub url: String,
    /// Status sent, or 0 when the connection was hung up or dropped.
    pub status: u16,
    /// Body bytes successfully handed to the socket.
    pub body_bytes: u64,
}

struct Shared {
    routes: Mutex<HashMap<String, Reply>>,
    log: Mutex<Vec<RequestRecord>>,
    in_flight: AtomicUsize,
    shutdown: AtomicBool,
}

/// A running mock server. Shuts down when dropped.
pub struct MockWeb {
    addr: SocketAddr,
    shared: Arc<Shared>,
    accept: Option<JoinHandle<()>>,
}

impl MockWeb {
    /// Binds an ephemeral loopback port and starts serving.
    pub fn start() -> io::Result<MockWeb> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(Shared {
            routes: Mutex::new(HashMap::new()),
            log: Mutex::new(Vec::new()),
            in_flight: AtomicUsize::new(0),
            shutdown: AtomicBool::new(false),
        });
        let accept_shared = Arc::clone(&shared);
        let accept =
            thread::Builder::new().name("mockweb-accept".into()).spawn(move || accept_loop(listener, accept_shared))?;
        Ok(MockWeb { addr, shared, accept: Some(accept) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Origin URL of the server itself, without a trailing slash.
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// URL to configure as an HTTP proxy.
    pub fn proxy_url(&self) -> String {
        self.base_url()
    }

    /// Absolute URL on the server's own origin.
    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.base_url(), path)
    }

    /// Installs (or replaces) the reply for `url`.
    pub fn route(&self, url: &str, reply: Reply) {
        let key = normalize(url).unwrap_or_else(|| url.to_string());
        self.shared.routes.lock().unwrap().insert(key, reply);
    }

    pub fn unroute(&self, url: &str) {
        let key = normalize(url).unwrap_or_else(|| url.to_string());
        self.shared.routes.lock().unwrap().remove(&key);
    }

    /// Loads a JSON scenario (see [`Scenario`]) and returns the number of routes installed.
    pub fn load_scenario(&self, json: &str) -> Result<usize, serde_json::Error> {
        let scenario: Scenario = serde_json::from_str(json)?;
        let n = scenario.routes.len();
        for route in scenario.routes {
            self.route(&route.url, route.reply.into_reply());
        }
        Ok(n)
    }

    /// Snapshot of the request log.
    pub fn requests(&self) -> Vec<RequestRecord> {
        self.shared.log.lock().unwrap().clone()
    }

    /// Requests whose URL equals `url` after normalization.
    pub fn requests_for(&self, url: &str) -> Vec<RequestRecord> {
        let key = normalize(url).unwrap_or_else(|| url.to_string());
        self.requests().into_iter().filter(|r| r.url == key).collect()
    }

    pub fn clear_log(&self) {
        self.shared.log.lock().unwrap().clear();
    }

    /// Blocks until no connection is being served, or `timeout` elapses.
    /// Returns whether the server went idle.
    pub fn wait_idle(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        while self.shared.in_flight.load(Ordering::SeqCst) > 0 {
            if Instant::now() >= deadline {
                return false;
            }
            thread::sleep(Duration::from_millis(5));
        }
        true
    }
}

impl Drop for MockWeb {
    fn drop(&mut self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.accept.take() {
            let _ = handle.join();
        }
    }
}

/// JSON route script: `{"routes": [{"url": "...", "kind": "...", ...}]}`.
#[derive(Debug, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub description: Option<String>,
    pub routes: Vec<ScenarioRoute>,
}

#[derive(Debug, Deserialize)]
pub struct ScenarioRoute {
    pub url: String,
    #[serde(flatten)]
    pub reply: ScenarioReply,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioReply {
    /// Pattern bytes seeded by [`seed_for`]`(seed_key)`.
    Pattern {
        seed_key: String,
        len: u64,
    },
    Html {
        body: String,
    },
    Status {
        status: u16,
    },
    Redirect {
        location: String,
        #[serde(default = "default_redirect")]
        status: u16,
    },
    Hang {
        ms: u64,
    },
    Drop,
}

fn default_redirect() -> u16 {
    302
}

impl ScenarioReply {
    pub fn into_reply(self) -> Reply {
        match self {
            ScenarioReply::Pattern { seed_key, len } => Reply::Pattern { seed: seed_for(&seed_key), len },
            ScenarioReply::Html { body } => Reply::Html(body),
            ScenarioReply::Status { status } => Reply::Status(status),
            ScenarioReply::Redirect { location, status } => Reply::Redirect { status, location },
            ScenarioReply::Hang { ms } => Reply::Hang(Duration::from_millis(ms)),
            ScenarioReply::Drop => Reply::Drop,
        }
    }
}

/// FNV-1a of `key`; the seed used for scenario pattern bodies.
pub fn seed_for(key: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Reader over the bytes a [`Reply::Pattern`] serves.
pub fn pattern_reader(seed: u64, len: u64) -> PatternReader {
    PatternReader { block: pattern_block(seed), pos: 0, len }
}

pub struct PatternReader {
    block: Vec<u8>,
    pos: u64,
    len: u64,
}

impl Read for PatternReader {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if self.pos >= self.len || buf.is_empty() {
            return Ok(0);
        }
        let block_no = self.pos / PATTERN_BLOCK as u64;
        let offset = (self.pos % PATTERN_BLOCK as u64) as usize;
        let n = buf.len().min(PATTERN_BLOCK - offset).min((self.len - self.pos) as usize);
        buf[..n].copy_from_slice(&self.block[offset..offset + n]);
        // Stamp the block number into each block's first 8 bytes so blocks differ.
        let stamp = block_no.to_le_bytes();
        for (i, b) in buf[..n].iter_mut().enumerate() {
            let at = offset + i;
            if at < 8 {
                *b ^= stamp[at];
            } else {
                break;
            }
        }
        self.pos += n as u64;
        Ok(n)
    }
}

fn pattern_block(seed: u64) -> Vec<u8> {
    let mut state = seed;
    let mut block = Vec::with_capacity(PATTERN_BLOCK);
    while block.len() < PATTERN_BLOCK {
        // splitmix64
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
        block.extend_from_slice(&z.to_le_bytes());
    }
    block
}

fn normalize(url: &str) -> Option<String> {
    Url::parse(url).ok().map(|u| u.to_string())
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    for stream in listener.incoming() {
        if shared.shutdown.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = stream else { continue };
        let conn_shared = Arc::clone(&shared);
        conn_shared.in_flight.fetch_add(1, Ordering::SeqCst);
        let spawned = thread::Builder::new().name("mockweb-conn".into()).spawn(move || {
            if let Err(e) = serve(stream, &conn_shared) {
                log::debug!("mockweb connection ended: {e}");
            }
            conn_shared.in_flight.fetch_sub(1, Ordering::SeqCst);
        });
        if spawned.is_err() {
            shared.in_flight.fetch_sub(1, Ordering::SeqCst);
        }
    }
}

struct Request {
    method: String,
    url: String,
}

fn read_request(stream: &mut TcpStream, own_addr: SocketAddr) -> io::Result<Option<Request>> {
    let mut buf = Vec::with_capacity(2048);
    let mut chunk = [0u8; 2048];
    loop {
        let n = stream.read(&mut chunk)?;
        if n == 0 {
            return Ok(None);
        }
        buf.extend_from_slice(&chunk[..n]);
        let mut headers = [httparse::EMPTY_HEADER; 64];
        let mut req = httparse::Request::new(&mut headers);
        match req.parse(&buf) {
            Ok(httparse::Status::Complete(_)) => {
                let method = req.method.unwrap_or("GET").to_string();
                let target = req.path.unwrap_or("/");
                let url = if target.starts_with("http://") || target.starts_with("https://") {
                    target.to_string()
                } else {
                    let host = req
                        .headers
                        .iter()
                        .find(|h| h.name.eq_ignore_ascii_case("host"))
                        .and_then(|h| std::str::from_utf8(h.value).ok())
                        .map(str::to_string)
                        .unwrap_or_else(|| own_addr.to_string());
                    format!("http://{host}{target}")
                };
                let url = normalize(&url).unwrap_or(url);
                return Ok(Some(Request { method, url }));
            }
            Ok(httparse::Status::Partial) => {
                if buf.len() > 64 * 1024 {
                    return Err(io::Error::new(io::ErrorKind::InvalidData, "request head too large"));
                }
            }
            Err(e) => return Err(io::Error::new(io::ErrorKind::InvalidData, e.to_string())),
        }
    }
}

fn serve(mut stream: TcpStream, shared: &Shared) -> io::Result<()> {
    let own_addr = stream.local_addr()?;
    let Some(req) = read_request(&mut stream, own_addr)? else {
        return Ok(());
    };
    let reply = shared.routes.lock().unwrap().get(&req.url).cloned();
    let reply = reply.unwrap_or(Reply::Status(404));
    let mut record = RequestRecord { method: req.method.clone(), url: req.url.clone(), status: 0, body_bytes: 0 };
    let result = respond(&mut stream, &req, reply, shared, &mut record);
    let _ = stream.shutdown(Shutdown::Both);
    shared.log.lock().unwrap().push(record);
    result
}

fn respond(
    stream: &mut TcpStream,
    req: &Request,
    reply: Reply,
    shared: &Shared,
    record: &mut RequestRecord,
) -> io::Result<()> {
    let head_only = req.method.eq_ignore_ascii_case("HEAD");
    match reply {
        Reply::Bytes { body, content_type } => {
            record.status = 200;
            write_head(stream, 200, &content_type, Some(body.len() as u64), &[])?;
            if !head_only {
                send_body(stream, &mut &body[..], record)?;
            }
        }
        Reply::Pattern { seed, len } => {
            record.status = 200;
            write_head(stream, 200, "application/octet-stream", Some(len), &[])?;
            if !head_only {
                send_body(stream, &mut pattern_reader(seed, len), record)?;
            }
        }
        Reply::File(path) => match File::open(&path) {
            Ok(mut file) => {
                let len = file.metadata()?.len();
                record.status = 200;
                write_head(stream, 200, "application/octet-stream", Some(len), &[])?;
                if !head_only {
                    send_body(stream, &mut file, record)?;
                }
            }
            Err(_) => {
                record.status = 404;
                write_head(stream, 404, "text/plain", Some(0), &[])?;
            }
        },
        Reply::Html(body) => {
            record.status = 200;
            write_head(stream, 200, "text/html; charset=utf-8", Some(body.len() as u64), &[])?;
            if !head_only {
                send_body(stream, &mut body.as_bytes(), record)?;
            }
        }
        Reply::Status(status) => {
            record.status = status;
            write_head(stream, status, "text/plain", Some(0), &[])?;
        }
        Reply::Redirect { status, location } => {
            record.status = status;
            write_head(stream, status, "text/plain", Some(0), &[("Location", location.as_str())])?;
        }
        Reply::Hang(duration) => {
            let deadline = Instant::now() + duration;
            while Instant::now() < deadline && !shared.shutdown.load(Ordering::SeqCst) {
                thread::sleep(Duration::from_millis(20));
            }
        }
        Reply::Drop => {}
    }
    stream.flush()
}

fn write_head(
    stream: &mut TcpStream,
    status: u16,
    content_type: &str,
    content_length: Option<u64>,
    extra: &[(&str, &str)],
) -> io::Result<()> {
    let mut head = format!("HTTP/1.1 {status} {}\r\nContent-Type: {content_type}\r\n", reason(status));
    if let Some(len) = content_length {
        head.push_str(&format!("Content-Length: {len}\r\n"));
    }
    for (k, v) in extra {
        head.push_str(&format!("{k}: {v}\r\n"));
    }
    head.push_str("Connection: close\r\n\r\n");
    stream.write_all(head.as_bytes())
}

fn send_body(stream: &mut TcpStream, body: &mut dyn Read, record: &mut RequestRecord) -> io::Result<()> {
    let mut buf = vec![0u8; CHUNK];
    loop {
        let n = body.read(&mut buf)?;
        if n == 0 {
            return Ok(());
        }
        stream.write_all(&buf[..n])?;
        record.body_bytes += n as u64;
    }
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        301 => "Moved Permanently",
        302 => "Found",
        303 => "See Other",
        307 => "Temporary Redirect",
        308 => "Permanent Redirect",
        401 => "Unauthorized",
        403 => "Forbidden",
        404 => "Not Found",
        410 => "Gone",
        500 => "Internal Server Error",
        502 => "Bad Gateway",
        503 => "Service Unavailable",
        _ => "Status",
    }
}
