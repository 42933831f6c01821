use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use serde_json::Value;
use webpurge_mockweb::{MockWeb, Reply};

const PASS: &str = "hunter2 but longer";

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

impl Run {
    fn json(&self) -> Value {
        serde_json::from_str(&self.stdout).unwrap_or_else(|e| panic!("{e}: {}", self.stdout))
    }
}

struct Env {
    dir: tempfile::TempDir,
    mock: MockWeb,
}

impl Env {
    fn new() -> Env {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("files")).unwrap();
        Env { dir, mock: MockWeb::start().unwrap() }
    }

    fn files(&self) -> PathBuf {
        self.dir.path().join("files")
    }

    fn store(&self) -> PathBuf {
        self.dir.path().join("store")
    }

    /// A downloaded file plus the mock route for its host URL.
    fn download(&self, name: &str, data: &[u8], reply: Option<Reply>) -> PathBuf {
        let url = format!("http://dl.example.com/{name}");
        self.mock.route(&url, reply.unwrap_or_else(|| Reply::bytes(data.to_vec())));
        let p = self.files().join(name);
        fs::write(&p, data).unwrap();
        fs::write(
            self.files().join(format!("{name}.zoneid")),
            format!("[ZoneTransfer]\r\nZoneId=3\r\nHostUrl={url}\r\n"),
        )
        .unwrap();
        p
    }

    fn run(&self, args: &[&str], pass: Option<&str>, stdin: Option<&str>) -> Run {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_webpurge"));
        cmd.arg("--store").arg(self.store()).arg("--proxy").arg(self.mock.proxy_url()).arg("--fixture-mode");
        if !args.contains(&"--timeout") {
            cmd.args(["--timeout", "5"]);
        }
        cmd.args(args).env("HOME", self.dir.path()).env_remove("WEBPURGE_PASSPHRASE").env_remove("RUST_LOG");
        if let Some(p) = pass {
            cmd.env("WEBPURGE_PASSPHRASE", p);
        }
        cmd.stdin(if stdin.is_some() { Stdio::piped() } else { Stdio::null() });
        cmd.stdout(Stdio::piped()).stderr(Stdio::piped());
        let mut child = cmd.spawn().unwrap();
        if let Some(input) = stdin {
            child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
        }
        let out = child.wait_with_output().unwrap();
        Run {
            code: out.status.code().unwrap_or(-1),
            stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
            stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
        }
    }
}

fn data(len: usize, salt: u8) -> Vec<u8> {
    (0..len).map(|i| (i as u8).wrapping_mul(17).wrapping_add(salt)).collect()
}

fn root(env: &Env) -> String {
    env.files().to_string_lossy().into_owned()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

#[test]
fn scan_lists_the_largest_files() {
    let env = Env::new();
    for i in 0..30 {
        fs::write(env.files().join(format!("f{i:02}.bin")), vec![0u8; 1000 + i * 10]).unwrap();
    }
    env.download("big.iso", &data(50_000, 1), None);
    let r = env.run(&["scan", "--root", &root(&env)], None, None);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rows: Vec<&str> = r.stdout.lines().skip(1).take_while(|l| !l.contains("files seen")).collect();
    assert_eq!(rows.len(), 25);
    assert!(rows[0].contains("big.iso") && rows[0].contains("HU"), "{}", rows[0]);

    let j = env.run(&["--json", "scan", "--root", &root(&env), "--top", "3"], None, None).json();
    let recs = j["records"].as_array().unwrap();
    assert_eq!(recs.len(), 3);
    assert_eq!(recs[0]["size_bytes"], 50_000);
    assert_eq!(recs[1]["size_bytes"], 1290);
}

#[test]
fn scan_exit_codes() {
    let env = Env::new();
    assert_eq!(env.run(&["scan", "--root", &root(&env)], None, None).code, 0);
    let r = env.run(&["scan", "--root", "/definitely/not/here"], None, None);
    assert_eq!(r.code, 2);
    assert!(r.stderr.starts_with("webpurge: "), "{}", r.stderr);
    assert_eq!(env.run(&["scan", "--top", "0", "--root", &root(&env)], None, None).code, 2);
}

#[test]
fn report_on_the_bundled_corpus() {
    let env = Env::new();
    let corpus = fixture("study_corpus.jsonl");
    let args = ["--json", "report", "--corpus", corpus.to_str().unwrap(), "--as-of", "2023-01-01"];
    let r = env.run(&args, None, None);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let j = r.json();
    let s = &j["summary"];
    assert_eq!(s["total_files"], 180);
    assert_eq!(s["participant_count"], 9);
    assert_eq!(s["zoneid_reported"]["count"], 79);
    assert_eq!(s["neither"]["count"], 78);
    assert_eq!(j["tables"].as_array().unwrap().len(), 0);
    // deterministic for a fixed reference date
    assert_eq!(env.run(&args, None, None).stdout, r.stdout);

    let text = env.run(&["report", "--corpus", corpus.to_str().unwrap(), "--as-of", "2023-01-01"], None, None);
    assert_eq!(text.code, 0);
    assert!(text.stdout.contains("180"));
}

#[test]
fn report_with_web_checks_against_the_scenario() {
    let env = Env::new();
    env.mock.load_scenario(&fs::read_to_string(fixture("web_scenario.json")).unwrap()).unwrap();
    let corpus = fixture("study_corpus.jsonl");
    let r = env.run(
        &[
            "--json",
            "--timeout",
            "2",
            "--concurrency",
            "8",
            "report",
            "--corpus",
            corpus.to_str().unwrap(),
            "--check-web",
            "--as-of",
            "2023-01-01",
        ],
        None,
        None,
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    let tables = r.json()["tables"].as_array().unwrap().clone();
    let bases: Vec<&str> = tables.iter().map(|t| t["basis"].as_str().unwrap()).collect();
    assert_eq!(bases, ["RU", "HU", "best"]);
    for t in &tables {
        assert_eq!(t["total_files"], 180);
    }
}

#[test]
fn report_on_an_empty_corpus() {
    let env = Env::new();
    let empty = env.dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let r = env.run(&["--json", "report", "--corpus", empty.to_str().unwrap(), "--check-web"], None, None);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(r.json()["summary"]["total_files"], 0);
    assert_eq!(env.run(&["report", "--corpus", "/no/such/file"], None, None).code, 2);
}

#[test]
fn purge_maintain_restore_cycle() {
    let env = Env::new();
    let a_bytes = data(300_000, 1);
    let a = env.download("a.bin", &a_bytes, None);
    let b = env.download("b.bin", &data(200_000, 2), None);
    let locked = env.download("locked.bin", &data(100_000, 3), Some(Reply::Status(401)));

    let r = env.run(&["--json", "purge", "--root", &root(&env), "--yes"], Some(PASS), None);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let j = r.json();
    assert_eq!(j["result"]["purged"], 2);
    assert!(!a.exists() && !b.exists());
    assert!(locked.exists());
    assert!(env.files().join("a.bin.wrcp-ref").exists());
    let id_a = j["result"]["items"][0]["recipe_id"].as_str().unwrap().to_string();

    let m = env.run(&["maintain"], Some(PASS), None);
    assert_eq!(m.code, 0, "{}{}", m.stdout, m.stderr);
    assert!(m.stdout.contains("2 current, 0 stale."), "{}", m.stdout);

    env.mock.route("http://dl.example.com/b.bin", Reply::Status(404));
    let m = env.run(&["maintain"], Some(PASS), None);
    assert_eq!(m.code, 1);
    assert!(m.stdout.contains("STALE") && m.stdout.contains("b.bin") && m.stdout.contains("404"), "{}", m.stdout);

    let show = env.run(&["--json", "recipe", "show", &id_a[..8]], Some(PASS), None);
    assert_eq!(show.code, 0, "{}", show.stderr);
    assert_eq!(show.json()["recipe"]["file_name"], "a.bin");
    assert_eq!(env.run(&["recipe", "show", &id_a], Some("wrong"), None).code, 3);

    let r = env.run(&["restore", &id_a], Some(PASS), None);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(fs::read(&a).unwrap(), a_bytes);
    assert!(!env.files().join("a.bin.wrcp-ref").exists());

    // only b is left, and its source is gone
    let r = env.run(&["restore", "--all"], Some(PASS), None);
    assert_eq!(r.code, 1);
    assert!(r.stdout.contains("failed"), "{}", r.stdout);
    assert!(!b.exists());

    assert_eq!(env.run(&["restore", "ffffffffffffffff"], Some(PASS), None).code, 2);
}

#[test]
fn interactive_approval() {
    let env = Env::new();
    let a = env.download("a.bin", &data(300_000, 1), None);
    let b = env.download("b.bin", &data(200_000, 2), None);
    let c = env.download("c.bin", &data(100_000, 3), None);

    let r = env.run(&["purge", "--root", &root(&env)], Some(PASS), Some("n\nn\nn\n"));
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.contains("Nothing approved"), "{}", r.stdout);
    assert!(a.exists() && b.exists() && c.exists());
    assert!(!env.store().exists());

    let r = env.run(&["purge", "--root", &root(&env)], Some(PASS), Some("maybe\nn\ny\nq\n"));
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stderr.contains("Please answer"));
    assert!(a.exists() && !b.exists() && c.exists());

    let r = env.run(&["purge", "--root", &root(&env)], Some(PASS), Some("a\n"));
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(!a.exists() && !c.exists());
}

#[test]
fn target_free_stops_early() {
    let env = Env::new();
    env.download("a.bin", &data(500_000, 1), None);
    env.download("b.bin", &data(400_000, 2), None);
    env.download("c.bin", &data(300_000, 3), None);
    let r = env.run(
        &["--concurrency", "1", "purge", "--root", &root(&env), "--target-free", "450KB", "--yes"],
        Some(PASS),
        None,
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.contains("reached; stopped early after 1 files"), "{}", r.stdout);
    assert!(r.stdout.contains("Purged 1 files"), "{}", r.stdout);
    assert_eq!(env.run(&["purge", "--root", &root(&env), "--target-free", "lots"], Some(PASS), None).code, 2);
}

#[test]
fn passphrase_is_required() {
    let env = Env::new();
    let a = env.download("a.bin", &data(100_000, 1), None);
    let r = env.run(&["purge", "--root", &root(&env), "--yes"], None, None);
    assert_eq!(r.code, 3, "{}", r.stderr);
    assert!(a.exists());
    assert_eq!(env.run(&["purge", "--root", &root(&env), "--yes"], Some(""), None).code, 3);
}

#[test]
fn maintain_and_restore_on_an_empty_store() {
    let env = Env::new();
    let r = env.run(&["maintain"], None, None);
    assert_eq!((r.code, r.stdout.trim()), (0, "Store is empty."));
    assert_eq!(env.run(&["restore", "--all"], None, None).code, 0);
    assert_eq!(env.run(&["restore", "0123"], None, None).code, 2);
}

#[test]
fn config_file_sets_defaults() {
    let env = Env::new();
    for i in 0..5 {
        fs::write(env.files().join(format!("f{i}")), vec![1u8; 100 * (i + 1)]).unwrap();
    }
    let cfg = env.dir.path().join("webpurge.toml");
    fs::write(&cfg, "top_n = 2\n").unwrap();
    let j = env.run(&["--config", cfg.to_str().unwrap(), "--json", "scan", "--root", &root(&env)], None, None).json();
    assert_eq!(j["records"].as_array().unwrap().len(), 2);
    fs::write(&cfg, "top_n = \"two\"\n").unwrap();
    assert_eq!(env.run(&["--config", cfg.to_str().unwrap(), "scan", "--root", &root(&env)], None, None).code, 2);
}
