//! `webpurge`: find large downloaded files that can be fetched again and
//! replace them with small encrypted recipes.

mod config;

use std::io::{self, BufRead, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use chrono::{DateTime, NaiveDate, Utc};
use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use webpurge_core::corpus::{read_corpus, CorpusRecord};
use webpurge_core::engine::{
    execute_purge, maintain, plan_purge, reconstitute, EngineConfig, ItemStatus, PurgeCandidate, RestoreError,
};
use webpurge_core::recipe::{hash_file, serialize_recipe, HashAlgo, KeyCache};
use webpurge_core::report::{
    observations, redownloadability_report, render_report, summarize_scan, Basis, StudyReport,
};
use webpurge_core::scan::{attach_origin, drive_info, walk_largest};
use webpurge_core::store::{EntryStatus, Store, StoreError};
use webpurge_core::units::format_bytes;
use webpurge_core::webcheck::{check_many, Availability, CheckConfig, FetchOptions, HttpFetcher};
use webpurge_core::{origin::OriginOptions, AvailabilityOutcome};

use config::{ByteSize, Config};

#[derive(Parser)]
#[command(name = "webpurge", version, about = "Free disk space by purging files that can be downloaded again")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,
    /// Read origin metadata from `<file>.zoneid` sidecars.
    #[arg(long, global = true)]
    fixture_mode: bool,
    /// Recipe store directory.
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    #[arg(long, global = true)]
    concurrency: Option<usize>,
    /// Network timeout in seconds.
    #[arg(long, global = true)]
    timeout: Option<u64>,
    /// HTTP proxy for all web checks.
    #[arg(long, global = true)]
    proxy: Option<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// List the largest files under a directory with their origin.
    Scan {
        #[arg(long, default_value = ".")]
        root: PathBuf,
        #[arg(long)]
        top: Option<usize>,
    },
    /// Check the largest files and purge the approved ones.
    Purge {
        #[arg(long, default_value = ".")]
        root: PathBuf,
        #[arg(long)]
        top: Option<usize>,
        /// Stop once this much space would be freed, e.g. 10GB or 500MB.
        #[arg(long)]
        target_free: Option<String>,
        /// Approve every publicly redownloadable candidate without asking.
        #[arg(long)]
        yes: bool,
        /// Allow purging files that need a sign-in to download again.
        #[arg(long)]
        allow_auth: bool,
        /// Move purged files to a trash directory instead of deleting them.
        #[arg(long)]
        trash: bool,
    },
    /// Re-check that stored recipes can still be downloaded.
    Maintain,
    /// Download purged files again.
    Restore {
        #[arg(required_unless_present = "all", conflicts_with = "all")]
        id: Option<String>,
        /// Restore every active or stale recipe.
        #[arg(long)]
        all: bool,
        /// Write to this path instead of the original location.
        #[arg(long, conflicts_with = "all")]
        dest: Option<PathBuf>,
        /// Overwrite an existing file at the destination.
        #[arg(long)]
        force: bool,
    },
    /// Summary statistics for a corpus file or a directory.
    Report {
        /// JSON-lines corpus of file records.
        #[arg(long, conflicts_with = "root", required_unless_present = "root")]
        corpus: Option<PathBuf>,
        #[arg(long)]
        root: Option<PathBuf>,
        #[arg(long)]
        top: Option<usize>,
        /// Also check each recorded URL and print redownloadability tables.
        #[arg(long)]
        check_web: bool,
        /// Reference date for file ages (RFC 3339 or YYYY-MM-DD).
        #[arg(long)]
        as_of: Option<String>,
    },
    /// Inspect stored recipes.
    Recipe {
        #[command(subcommand)]
        cmd: RecipeCmd,
    },
}

#[derive(Subcommand)]
enum RecipeCmd {
    /// Decrypt and print one recipe.
    Show { id: String },
}

enum Failure {
    Fatal(String),
    Auth(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Fatal(_) => 2,
            Failure::Auth(_) => 3,
        }
    }
}

fn fatal(e: impl std::fmt::Display) -> Failure {
    Failure::Fatal(e.to_string())
}

type Outcome = Result<u8, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = settings(&cli).and_then(|cfg| run(&cli, &cfg));
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            let (Failure::Fatal(msg) | Failure::Auth(msg)) = &f;
            eprintln!("webpurge: {msg}");
            ExitCode::from(f.code())
        }
    }
}

fn settings(cli: &Cli) -> Result<Config, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p).map_err(Failure::Fatal)?,
        None => Config::default(),
    };
    cfg.fixture_mode |= cli.fixture_mode;
    if let Some(s) = &cli.store {
        cfg.store_dir = Some(s.clone());
    }
    if let Some(c) = cli.concurrency {
        cfg.concurrency = c;
    }
    if let Some(t) = cli.timeout {
        cfg.timeout_secs = t;
    }
    if let Some(p) = &cli.proxy {
        cfg.proxy = Some(p.clone());
    }
    match &cli.cmd {
        Cmd::Scan { top, .. } | Cmd::Purge { top, .. } | Cmd::Report { top, .. } => {
            if let Some(n) = top {
                cfg.top_n = *n;
            }
        }
        _ => {}
    }
    if let Cmd::Purge { target_free: Some(t), allow_auth, .. } = &cli.cmd {
        cfg.target_free = Some(ByteSize::Text(t.clone()));
        cfg.allow_auth |= allow_auth;
    } else if let Cmd::Purge { allow_auth, .. } = &cli.cmd {
        cfg.allow_auth |= allow_auth;
    }
    cfg.validate().map_err(Failure::Fatal)?;
    Ok(cfg)
}

fn run(cli: &Cli, cfg: &Config) -> Outcome {
    match &cli.cmd {
        Cmd::Scan { root, .. } => cmd_scan(cli, cfg, root),
        Cmd::Purge { root, yes, trash, .. } => cmd_purge(cli, cfg, root, *yes, *trash),
        Cmd::Maintain => cmd_maintain(cli, cfg),
        Cmd::Restore { id, all, dest, force } => cmd_restore(cli, cfg, id.as_deref(), *all, dest.as_deref(), *force),
        Cmd::Report { corpus, root, check_web, as_of, .. } => {
            cmd_report(cli, cfg, corpus.as_deref(), root.as_deref(), *check_web, as_of.as_deref())
        }
        Cmd::Recipe { cmd: RecipeCmd::Show { id } } => cmd_recipe_show(cli, cfg, id),
    }
}

fn print_json(value: &impl Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable output"));
}

fn engine_config(cfg: &Config, trash: bool) -> EngineConfig {
    EngineConfig {
        check: CheckConfig {
            presume_auth: cfg.presume_auth,
            categories: cfg.categories.clone(),
            ..CheckConfig::default()
        },
        origin: OriginOptions { fixture_mode: cfg.fixture_mode },
        concurrency: cfg.concurrency,
        allow_auth: cfg.allow_auth,
        trash,
        ..EngineConfig::default()
    }
}

fn fetcher(cfg: &Config) -> Result<HttpFetcher, Failure> {
    let opts = FetchOptions {
        timeout: Duration::from_secs(cfg.timeout_secs),
        proxy: cfg.proxy.clone(),
        ..FetchOptions::default()
    };
    HttpFetcher::new(&opts).map_err(fatal)
}

fn passphrase(cfg: &Config) -> Result<String, Failure> {
    if let Ok(p) = std::env::var(&cfg.passphrase_env) {
        if p.is_empty() {
            return Err(Failure::Auth(format!("{} is empty", cfg.passphrase_env)));
        }
        return Ok(p);
    }
    if !io::stdin().is_terminal() {
        return Err(Failure::Auth(format!("no passphrase: set {}", cfg.passphrase_env)));
    }
    match rpassword::prompt_password("Store passphrase: ") {
        Ok(p) if !p.is_empty() => Ok(p),
        _ => Err(Failure::Auth("passphrase declined".into())),
    }
}

fn open_store(cfg: &Config, create: bool) -> Result<Option<Store>, Failure> {
    let dir = cfg.store_dir();
    match Store::open(&dir) {
        Ok(s) => Ok(Some(s)),
        Err(StoreError::NotInitialized(_)) if create => Store::init(&dir).map(Some).map_err(fatal),
        Err(StoreError::NotInitialized(_)) => Ok(None),
        Err(e) => Err(fatal(e)),
    }
    .inspect(|s| {
        if let Some(s) = s {
            let r = s.repair_report();
            if !r.is_clean() {
                eprintln!(
                    "store repaired: {} blobs quarantined, {} entries dropped, {} temporary indexes discarded",
                    r.quarantined.len(),
                    r.dropped_entries.len(),
                    r.discarded_temp_indexes.len()
                );
            }
        }
    })
}

fn origin_label(o: Option<&webpurge_core::OriginMetadata>) -> &'static str {
    match o.map(|o| (o.referrer_url.is_some(), o.host_url.is_some())) {
        Some((true, true)) => "RU+HU",
        Some((true, false)) => "RU",
        Some((false, true)) => "HU",
        _ => "-",
    }
}

fn cmd_scan(cli: &Cli, cfg: &Config, root: &Path) -> Outcome {
    let scan = walk_largest(root, cfg.top_n).map_err(fatal)?;
    let drive = drive_info(root).map_err(fatal)?;
    let records = attach_origin(scan.records, OriginOptions { fixture_mode: cfg.fixture_mode });
    if cli.json {
        print_json(&json!({
            "root": root,
            "files_seen": scan.files_seen,
            "records": records,
            "skipped": scan.skipped,
            "drive": drive,
        }));
        return Ok(0);
    }
    println!("{:>4} {:>10} {:<10} {:<6} path", "#", "size", "modified", "origin");
    for (i, r) in records.iter().enumerate() {
        println!(
            "{:>4} {:>10} {:<10} {:<6} {}",
            i + 1,
            format_bytes(r.size_bytes as f64),
            r.modified_at.format("%Y-%m-%d"),
            origin_label(r.origin.as_ref()),
            r.path.display()
        );
    }
    for s in &scan.skipped {
        println!("skipped {}: {}", s.path.display(), s.reason);
    }
    println!(
        "{} files seen. Drive: {} used, {} free of {}.",
        scan.files_seen,
        format_bytes(drive.used_bytes as f64),
        format_bytes(drive.free_bytes as f64),
        format_bytes(drive.capacity_bytes as f64)
    );
    Ok(0)
}

fn availability_label(c: &PurgeCandidate) -> String {
    if c.recipe.is_none() {
        return "Not Rd (no origin recorded)".into();
    }
    match c.outcome.deciding() {
        Some(d) => format!("{} ({:?}, {})", c.outcome.best.label(), d.mode, d.reason).to_string(),
        None => c.outcome.best.label().to_string(),
    }
}

fn describe(i: usize, c: &PurgeCandidate) -> String {
    format!(
        "[{}] {}  {}  {}  saves {}\n    {}",
        i + 1,
        format_bytes(c.record.size_bytes as f64),
        c.category.label(),
        availability_label(c),
        format_bytes(c.projected_saving_bytes as f64),
        c.record.path.display()
    )
}

#[derive(PartialEq)]
enum Answer {
    Yes,
    No,
    All,
    Quit,
}

fn ask(lines: &mut impl Iterator<Item = io::Result<String>>) -> Answer {
    loop {
        eprint!("Purge this file? [y]es / [n]o / [a]ll remaining / [q]uit: ");
        let _ = io::stderr().flush();
        let Some(Ok(line)) = lines.next() else { return Answer::Quit };
        match line.trim().to_ascii_lowercase().as_str() {
            "y" | "yes" => return Answer::Yes,
            "n" | "no" | "" => return Answer::No,
            "a" | "all" => return Answer::All,
            "q" | "quit" => return Answer::Quit,
            _ => eprintln!("Please answer y, n, a or q."),
        }
    }
}

fn cmd_purge(cli: &Cli, cfg: &Config, root: &Path, yes: bool, trash: bool) -> Outcome {
    let ecfg = engine_config(cfg, trash);
    let target = cfg.target_free.as_ref().map(|t| t.bytes()).transpose().map_err(Failure::Fatal)?;
    let fetcher = fetcher(cfg)?;
    let plan = plan_purge(root, target, cfg.top_n, &fetcher, &cfg.store_dir(), Utc::now(), &ecfg).map_err(fatal)?;

    let show = |s: String| if cli.json { eprintln!("{s}") } else { println!("{s}") };
    show(format!("Examined {} files, {} candidates.", plan.files_examined, plan.candidates.len()));
    if let Some(t) = plan.target_free_bytes {
        if plan.target_met {
            show(format!(
                "Target of {} reached; stopped early after {} files.",
                format_bytes(t as f64),
                plan.files_examined
            ));
        } else {
            show(format!(
                "Target of {} not reached by public candidates ({}).",
                format_bytes(t as f64),
                format_bytes(plan.public_savings_bytes as f64)
            ));
        }
    }

    let eligible: Vec<bool> = plan.candidates.iter().map(|c| c.eligible(ecfg.allow_auth)).collect();
    let mut approvals = vec![false; plan.candidates.len()];
    for (i, c) in plan.candidates.iter().enumerate() {
        if !eligible[i] {
            show(format!("{}\n    not eligible", describe(i, c)));
        }
    }
    if !eligible.contains(&true) {
        show("No eligible candidates.".into());
        if cli.json {
            print_json(&json!({ "plan": plan, "result": null }));
        }
        return Ok(0);
    }
    if yes {
        for (i, c) in plan.candidates.iter().enumerate() {
            approvals[i] = eligible[i] && c.outcome.best == Availability::PublicRd;
        }
    } else {
        let stdin = io::stdin();
        let mut lines = stdin.lock().lines();
        let mut all = false;
        for (i, c) in plan.candidates.iter().enumerate() {
            if !eligible[i] {
                continue;
            }
            eprintln!("{}", describe(i, c));
            if all {
                approvals[i] = true;
                continue;
            }
            match ask(&mut lines) {
                Answer::Yes => approvals[i] = true,
                Answer::No => {}
                Answer::All => {
                    all = true;
                    approvals[i] = true;
                }
                Answer::Quit => break,
            }
        }
    }
    if !approvals.contains(&true) {
        show("Nothing approved; no files purged.".into());
        if cli.json {
            print_json(&json!({ "plan": plan, "result": null }));
        }
        return Ok(0);
    }

    let pass = passphrase(cfg)?;
    let mut store = open_store(cfg, true)?.expect("created on demand");
    let result = execute_purge(&plan, &approvals, &mut store, &pass, &fetcher, &ecfg).map_err(fatal)?;
    if cli.json {
        print_json(&json!({ "plan": plan, "result": result }));
    } else {
        for item in result.items.iter().filter(|i| i.reason != "not approved") {
            let id = item.recipe_id.as_deref().map(|id| format!(" [{id}]")).unwrap_or_default();
            println!("{:<8} {}{id}: {}", format!("{:?}", item.status).to_lowercase(), item.path.display(), item.reason);
        }
        println!(
            "Purged {} files: {} removed, {} freed after recipes.",
            result.purged,
            format_bytes(result.bytes_removed as f64),
            format_bytes(result.bytes_freed as f64)
        );
    }
    let incomplete = approvals.iter().zip(&result.items).any(|(&a, item)| a && item.status != ItemStatus::Purged);
    Ok(u8::from(incomplete))
}

fn cmd_maintain(cli: &Cli, cfg: &Config) -> Outcome {
    let Some(mut store) = open_store(cfg, false)? else {
        if cli.json {
            print_json(&webpurge_core::engine::MaintenanceReport::default());
        } else {
            println!("Store is empty.");
        }
        return Ok(0);
    };
    let has_work = store.list().iter().any(|e| matches!(e.status, EntryStatus::Active | EntryStatus::Stale));
    let pass = if has_work { passphrase(cfg)? } else { String::new() };
    let report = if has_work {
        let fetcher = fetcher(cfg)?;
        maintain(&mut store, &fetcher, Utc::now(), &pass, &engine_config(cfg, false)).map_err(|e| match e {
            webpurge_core::engine::EngineError::Decrypt { .. } | webpurge_core::engine::EngineError::Crypto(_) => {
                Failure::Auth(e.to_string())
            }
            e => fatal(e),
        })?
    } else {
        Default::default()
    };
    if cli.json {
        print_json(&report);
    } else {
        if report.stale > 0 {
            println!(
                "STALE: {} recipes could not be confirmed. Find these files elsewhere if you still need them:",
                report.stale
            );
            for item in report.stale_items() {
                println!("  [{}] {}  ({})", item.recipe_id, item.original_path, item.reason);
            }
        }
        println!("{} current, {} stale.", report.current, report.stale);
    }
    Ok(u8::from(report.stale > 0))
}

fn cmd_restore(cli: &Cli, cfg: &Config, id: Option<&str>, all: bool, dest: Option<&Path>, force: bool) -> Outcome {
    let Some(mut store) = open_store(cfg, false)? else {
        return match id {
            Some(id) => Err(Failure::Fatal(format!("no recipe {id}: store is empty"))),
            None => Ok(0),
        };
    };
    let ids: Vec<String> = if all {
        store
            .list()
            .into_iter()
            .filter(|e| matches!(e.status, EntryStatus::Active | EntryStatus::Stale))
            .map(|e| e.recipe_id)
            .collect()
    } else {
        vec![store.resolve(id.unwrap_or_default()).map_err(fatal)?]
    };
    if ids.is_empty() {
        if cli.json {
            print_json(&json!({ "restored": [], "failed": [] }));
        } else {
            println!("Nothing to restore.");
        }
        return Ok(0);
    }
    let pass = passphrase(cfg)?;
    let fetcher = fetcher(cfg)?;
    let ecfg = engine_config(cfg, false);
    let (mut restored, mut failed) = (Vec::new(), Vec::new());
    for id in &ids {
        match reconstitute(id, &mut store, &fetcher, &pass, dest, force, Utc::now(), &ecfg) {
            Ok(r) => {
                if !cli.json {
                    println!("restored {} [{}] from {}", r.path.display(), r.recipe_id, r.url_used);
                }
                restored.push(r);
            }
            Err(RestoreError::Decrypt(_)) if !all => return Err(Failure::Auth("wrong passphrase".into())),
            Err(e) => {
                if !cli.json {
                    println!("failed   [{id}]: {e}");
                }
                failed.push(json!({ "recipe_id": id, "error": e.to_string() }));
            }
        }
    }
    if cli.json {
        print_json(&json!({ "restored": restored, "failed": failed }));
    }
    Ok(u8::from(!failed.is_empty()))
}

fn parse_as_of(s: Option<&str>) -> Result<DateTime<Utc>, Failure> {
    let Some(s) = s else { return Ok(Utc::now()) };
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight").and_utc())
        .map_err(|_| Failure::Fatal(format!("bad --as-of {s:?}: use RFC 3339 or YYYY-MM-DD")))
}

fn corpus_from_root(cfg: &Config, root: &Path) -> Result<Vec<CorpusRecord>, Failure> {
    let scan = walk_largest(root, cfg.top_n).map_err(fatal)?;
    let records = attach_origin(scan.records, OriginOptions { fixture_mode: cfg.fixture_mode });
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let hash = hash_file(&r.path, HashAlgo::Sha256, 0).map(|h| h.full).ok();
        let o = r.origin.as_ref();
        out.push(CorpusRecord {
            participant: "local".into(),
            path: r.path.to_string_lossy().into_owned(),
            size: r.size_bytes,
            mtime: r.modified_at,
            hash,
            zone_id: o.and_then(|o| o.zone_id),
            referrer_url: o.and_then(|o| o.referrer_url.clone()),
            host_url: o.and_then(|o| o.host_url.clone()),
            in_provenance_tally: true,
        });
    }
    Ok(out)
}

fn cmd_report(
    cli: &Cli,
    cfg: &Config,
    corpus: Option<&Path>,
    root: Option<&Path>,
    check_web: bool,
    as_of: Option<&str>,
) -> Outcome {
    let as_of = parse_as_of(as_of)?;
    let records = match (corpus, root) {
        (Some(c), _) => read_corpus(c).map_err(fatal)?,
        (None, Some(r)) => corpus_from_root(cfg, r)?,
        (None, None) => return Err(Failure::Fatal("give --corpus or --root".into())),
    };
    let summary = summarize_scan(&records, as_of);
    let mut tables = Vec::new();
    if check_web && !records.is_empty() {
        let fetcher = fetcher(cfg)?;
        let check = CheckConfig {
            presume_auth: cfg.presume_auth,
            presume_local: true,
            categories: cfg.categories.clone(),
            ..CheckConfig::default()
        };
        let recipes: Vec<_> = records.iter().map(|r| r.to_recipe(as_of)).collect();
        let present: Vec<_> = recipes.iter().flatten().cloned().collect();
        let mut checked = check_many(&present, &fetcher, &check, cfg.concurrency, true).into_iter();
        let outcomes: Vec<AvailabilityOutcome> = recipes
            .iter()
            .map(|r| match r {
                Some(_) => checked.next().expect("one outcome per recipe"),
                None => AvailabilityOutcome::from_channels(None, None),
            })
            .collect();
        for basis in [Basis::Ru, Basis::Hu, Basis::Best] {
            tables.push(redownloadability_report(&observations(&records, &outcomes, basis, &cfg.categories), basis));
        }
    }
    let report = StudyReport { summary, tables };
    if cli.json {
        print_json(&report);
    } else {
        print!("{}", render_report(&report));
    }
    Ok(0)
}

fn cmd_recipe_show(cli: &Cli, cfg: &Config, id: &str) -> Outcome {
    let Some(store) = open_store(cfg, false)? else {
        return Err(Failure::Fatal(format!("no recipe {id}: store is empty")));
    };
    let id = store.resolve(id).map_err(fatal)?;
    let entry = store.entry(&id).map_err(fatal)?.clone();
    let blob = store.get(&id).map_err(fatal)?;
    let pass = passphrase(cfg)?;
    let keys = KeyCache::new(&pass).map_err(|e| Failure::Auth(e.to_string()))?;
    let recipe = keys.decrypt(&blob).map_err(|_| Failure::Auth("wrong passphrase or damaged recipe".into()))?;
    if cli.json {
        print_json(&json!({ "recipe_id": id, "status": entry.status, "recipe": recipe }));
    } else {
        println!("recipe {id} ({:?})", entry.status);
        println!("{}", serialize_recipe(&recipe));
    }
    Ok(0)
}
