//! Study-style statistics over scan corpora and availability outcomes.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusRecord;
use crate::origin::{classify_channel, classify_source, CategoryLists, Channel, SourceCategory};
use crate::units::{format_bytes, format_opt_bytes};
use crate::webcheck::{Availability, AvailabilityOutcome};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub min: f64,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
}

impl Stats {
    /// All zero for an empty slice.
    pub fn of(values: &[f64]) -> Stats {
        if values.is_empty() {
            return Stats::default();
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 };
        Stats { min: v[0], mean: v.iter().sum::<f64>() / n as f64, median, max: v[n - 1] }
    }
}

/// A count with its share of all files and of the files in the provenance tally.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Share {
    pub count: usize,
    pub pct_of_all_files: f64,
    pub pct_of_tallied_files: f64,
}

impl Share {
    fn new(count: usize, all: usize, tallied: usize) -> Share {
        let pct = |d: usize| if d == 0 { 0.0 } else { 100.0 * count as f64 / d as f64 };
        Share { count, pct_of_all_files: pct(all), pct_of_tallied_files: pct(tallied) }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScanSummary {
    pub participant_count: usize,
    pub total_files: usize,
    pub files_per_participant: Stats,
    pub file_size_bytes: Stats,
    pub days_since_modified: Stats,
    pub name_length_ex_extension: Stats,
    pub inter_participant_duplicates: usize,
    pub intra_participant_duplicates: usize,
    /// Files whose provenance entered the metadata tally below.
    pub tallied_files: usize,
    pub zoneid_reported: Share,
    pub ru_only: Share,
    pub hu_only: Share,
    pub both: Share,
    pub neither: Share,
}

/// Files beyond the first in each identical-hash group, split into
/// (intra-participant, inter-participant).
fn duplicates(records: &[CorpusRecord]) -> (usize, usize) {
    let mut groups: HashMap<&str, BTreeMap<&str, usize>> = HashMap::new();
    for r in records {
        if let Some(h) = r.hash.as_deref() {
            *groups.entry(h).or_default().entry(r.participant.as_str()).or_default() += 1;
        }
    }
    let (mut intra, mut inter) = (0, 0);
    for per in groups.values() {
        intra += per.values().map(|c| c - 1).sum::<usize>();
        inter += per.len() - 1;
    }
    (intra, inter)
}

pub fn summarize_scan(records: &[CorpusRecord], as_of: DateTime<Utc>) -> ScanSummary {
    if records.is_empty() {
        return ScanSummary::default();
    }
    let mut per: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        *per.entry(r.participant.as_str()).or_default() += 1;
    }
    let counts: Vec<f64> = per.values().map(|&c| c as f64).collect();
    let sizes: Vec<f64> = records.iter().map(|r| r.size as f64).collect();
    let ages: Vec<f64> = records.iter().map(|r| (as_of - r.mtime).num_seconds() as f64 / 86_400.0).collect();
    let names: Vec<f64> = records.iter().map(|r| r.stem_len() as f64).collect();
    let (intra, inter) = duplicates(records);

    let tallied: Vec<&CorpusRecord> = records.iter().filter(|r| r.in_provenance_tally).collect();
    let (mut zone, mut ru, mut hu, mut both, mut neither) = (0, 0, 0, 0, 0);
    for r in &tallied {
        let o = r.origin();
        let has_ru = o.as_ref().is_some_and(|o| o.referrer_url.is_some());
        let has_hu = o.as_ref().is_some_and(|o| o.host_url.is_some());
        if o.as_ref().is_some_and(|o| o.zone_id.is_some()) {
            zone += 1;
        }
        match (has_ru, has_hu) {
            (true, false) => ru += 1,
            (false, true) => hu += 1,
            (true, true) => both += 1,
            (false, false) => neither += 1,
        }
    }
    let (all, t) = (records.len(), tallied.len());
    ScanSummary {
        participant_count: per.len(),
        total_files: all,
        files_per_participant: Stats::of(&counts),
        file_size_bytes: Stats::of(&sizes),
        days_since_modified: Stats::of(&ages),
        name_length_ex_extension: Stats::of(&names),
        inter_participant_duplicates: inter,
        intra_participant_duplicates: intra,
        tallied_files: t,
        zoneid_reported: Share::new(zone, all, t),
        ru_only: Share::new(ru, all, t),
        hu_only: Share::new(hu, all, t),
        both: Share::new(both, all, t),
        neither: Share::new(neither, all, t),
    }
}

/// What a redownloadability table is computed over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Basis {
    #[serde(rename = "RU")]
    Ru,
    #[serde(rename = "HU")]
    Hu,
    /// The better of both channels per file.
    #[serde(rename = "best")]
    Best,
}

impl From<Channel> for Basis {
    fn from(c: Channel) -> Basis {
        match c {
            Channel::Ru => Basis::Ru,
            Channel::Hu => Basis::Hu,
        }
    }
}

impl std::fmt::Display for Basis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Basis::Ru => "RU",
            Basis::Hu => "HU",
            Basis::Best => "best channel",
        })
    }
}

/// One file as seen by a redownloadability table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub participant: String,
    pub size_bytes: u64,
    pub category: SourceCategory,
    pub status: Availability,
}

/// Observations for `basis`, pairing each corpus record with its outcome.
pub fn observations(
    records: &[CorpusRecord],
    outcomes: &[AvailabilityOutcome],
    basis: Basis,
    lists: &CategoryLists,
) -> Vec<Observation> {
    records
        .iter()
        .zip(outcomes)
        .map(|(r, o)| {
            let origin = r.origin();
            let ext = r.extension();
            let (category, status) = match basis {
                Basis::Ru => {
                    (classify_channel(origin.as_ref(), Channel::Ru, &ext, lists), o.channel_status(Channel::Ru))
                }
                Basis::Hu => {
                    (classify_channel(origin.as_ref(), Channel::Hu, &ext, lists), o.channel_status(Channel::Hu))
                }
                Basis::Best => (classify_source(origin.as_ref(), &ext, lists), o.best),
            };
            Observation { participant: r.participant.clone(), size_bytes: r.size, category, status }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub category: SourceCategory,
    pub total: usize,
    pub not_rd: usize,
    pub public_rd: usize,
    pub rd_w_auth: usize,
}

/// Mean and sample standard deviation of per-participant byte totals.
/// Undefined values are `None`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub participants: usize,
    pub mean_bytes: Option<f64>,
    pub std_bytes: Option<f64>,
}

impl MeanStd {
    fn of(values: &[f64]) -> MeanStd {
        let n = values.len();
        let mean = (n > 0).then(|| values.iter().sum::<f64>() / n as f64);
        let std = mean
            .filter(|_| n > 1)
            .map(|m| (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
        MeanStd { participants: n, mean_bytes: mean, std_bytes: std }
    }

    pub fn render(&self) -> String {
        match (self.mean_bytes, self.std_bytes) {
            (Some(m), Some(s)) => format!("{} ± {}", format_bytes(m), format_bytes(s)),
            (m, _) => format_opt_bytes(m),
        }
    }
}

/// Per-participant figures over two denominators: every participant in the
/// input, and only those with a nonzero total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerParticipant {
    pub all_participants: MeanStd,
    pub nonzero_participants: MeanStd,
}

impl PerParticipant {
    fn of(totals: &[f64]) -> PerParticipant {
        let nonzero: Vec<f64> = totals.iter().copied().filter(|&v| v != 0.0).collect();
        PerParticipant { all_participants: MeanStd::of(totals), nonzero_participants: MeanStd::of(&nonzero) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RedownloadabilityTable {
    pub basis: Basis,
    pub rows: Vec<CategoryRow>,
    pub total_files: usize,
    pub total_public_bytes: u64,
    pub total_auth_bytes: u64,
    pub per_participant_public: PerParticipant,
    pub per_participant_auth: PerParticipant,
}

impl RedownloadabilityTable {
    pub fn row(&self, category: SourceCategory) -> &CategoryRow {
        self.rows.iter().find(|r| r.category == category).expect("every category has a row")
    }
}

pub fn redownloadability_report(obs: &[Observation], basis: Basis) -> RedownloadabilityTable {
    let mut rows: Vec<CategoryRow> = SourceCategory::ALL
        .iter()
        .map(|&category| CategoryRow { category, total: 0, not_rd: 0, public_rd: 0, rd_w_auth: 0 })
        .collect();
    let mut participants: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    let (mut public, mut auth) = (0u64, 0u64);
    for o in obs {
        let row = rows.iter_mut().find(|r| r.category == o.category).expect("every category has a row");
        row.total += 1;
        let p = participants.entry(o.participant.as_str()).or_default();
        match o.status {
            Availability::NotRedownloadable => row.not_rd += 1,
            Availability::PublicRd => {
                row.public_rd += 1;
                public += o.size_bytes;
                p.0 += o.size_bytes;
            }
            Availability::RdWithAuth => {
                row.rd_w_auth += 1;
                auth += o.size_bytes;
                p.1 += o.size_bytes;
            }
        }
    }
    let pub_totals: Vec<f64> = participants.values().map(|p| p.0 as f64).collect();
    let auth_totals: Vec<f64> = participants.values().map(|p| p.1 as f64).collect();
    RedownloadabilityTable {
        basis,
        rows,
        total_files: obs.len(),
        total_public_bytes: public,
        total_auth_bytes: auth,
        per_participant_public: PerParticipant::of(&pub_totals),
        per_participant_auth: PerParticipant::of(&auth_totals),
    }
}

/// Everything the `report` command prints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub summary: ScanSummary,
    pub tables: Vec<RedownloadabilityTable>,
}

fn stats_line(out: &mut String, label: &str, s: &Stats, fmt: impl Fn(f64) -> String) {
    let _ =
        writeln!(out, "{label:<26} {:>12} {:>12} {:>12} {:>12}", fmt(s.min), fmt(s.mean), fmt(s.median), fmt(s.max));
}

fn share_line(out: &mut String, label: &str, s: &Share) {
    let _ = writeln!(out, "{label:<26} {:>6} {:>9.1}% {:>9.1}%", s.count, s.pct_of_all_files, s.pct_of_tallied_files);
}

pub fn render_summary(s: &ScanSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "Participants: {}   Files: {}   In provenance tally: {}",
        s.participant_count, s.total_files, s.tallied_files
    );
    let _ = writeln!(out, "{:<26} {:>12} {:>12} {:>12} {:>12}", "", "min", "mean", "median", "max");
    stats_line(&mut out, "Files per participant", &s.files_per_participant, |v| format!("{v:.1}"));
    stats_line(&mut out, "File size", &s.file_size_bytes, format_bytes);
    stats_line(&mut out, "Days since modified", &s.days_since_modified, |v| format!("{v:.1}"));
    stats_line(&mut out, "Name length (no ext)", &s.name_length_ex_extension, |v| format!("{v:.1}"));
    let _ = writeln!(
        out,
        "Duplicates: {} inter-participant, {} intra-participant",
        s.inter_participant_duplicates, s.intra_participant_duplicates
    );
    let _ = writeln!(out, "{:<26} {:>6} {:>10} {:>10}", "Provenance", "count", "% all", "% tallied");
    share_line(&mut out, "ZoneId reported", &s.zoneid_reported);
    share_line(&mut out, "Only ReferrerUrl (RU)", &s.ru_only);
    share_line(&mut out, "Only HostUrl (HU)", &s.hu_only);
    share_line(&mut out, "Both RU and HU", &s.both);
    share_line(&mut out, "Neither RU nor HU", &s.neither);
    out
}

pub fn render_table(t: &RedownloadabilityTable) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Redownloadability via {} ({} files)", t.basis, t.total_files);
    let _ = writeln!(out, "{:<26} {:>6} {:>7} {:>10} {:>10}", "Source", "Total", "Not Rd", "Public Rd", "Rd w Auth");
    for r in &t.rows {
        let _ = writeln!(
            out,
            "{:<26} {:>6} {:>7} {:>10} {:>10}",
            r.category.label(),
            r.total,
            r.not_rd,
            r.public_rd,
            r.rd_w_auth
        );
    }
    let _ = writeln!(
        out,
        "{:<26} {:>36}",
        "Total Rd",
        format!("{} / {}", format_bytes(t.total_public_bytes as f64), format_bytes(t.total_auth_bytes as f64))
    );
    let _ = writeln!(
        out,
        "{:<26} {:>36}",
        format!("Per participant (all {})", t.per_participant_public.all_participants.participants),
        format!(
            "{} / {}",
            t.per_participant_public.all_participants.render(),
            t.per_participant_auth.all_participants.render()
        )
    );
    let _ = writeln!(
        out,
        "{:<26} {:>36}",
        "Per participant (≠ 0)",
        format!(
            "{} / {}",
            t.per_participant_public.nonzero_participants.render(),
            t.per_participant_auth.nonzero_participants.render()
        )
    );
    out
}

pub fn render_report(r: &StudyReport) -> String {
    let mut out = render_summary(&r.summary);
    for t in &r.tables {
        out.push('\n');
        out.push_str(&render_table(t));
    }
    out
}
