//! File formats: dataset CSVs, count matrices, attribution tables, reports.
//!
//! Every artifact file starts with a `# skattr-<kind> {json}` metadata line
//! followed by an RFC-4180 CSV with a header row. Money is integer cents,
//! except `attributed_usd`, which is written as a decimal with two places.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attribution::Attribution;
use crate::benchmark::{AttributionReport, WindowPoint};
use crate::error::{Error, Result};
use crate::model::{
    CampaignKey, CampaignSet, CellKey, Cents, Event, EventKind, Timestamp, UserRecord, WeekKey,
};
use crate::postback::CountMatrix;
use crate::schema::VALUE_COUNT;
use crate::synthgen::{Dataset, Provenance};

pub const USERS_FILE: &str = "users.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const CAMPAIGNS_FILE: &str = "campaigns.csv";
pub const DATASET_FILE: &str = "dataset.json";

/// Short SHA-256 of the JSON encoding of `value`.
pub fn config_hash<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    let digest = Sha256::digest(&bytes);
    Ok(hex::encode(&digest[..8]))
}

fn parse_err(path: &Path, line: u64, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        reason: reason.into(),
    }
}

fn csv_line(r: &csv::StringRecord) -> u64 {
    r.position().map_or(0, |p| p.line())
}

type CsvReader = csv::Reader<Box<dyn Read>>;

fn reader_from(path: &Path, skip_meta: bool) -> Result<(Option<String>, CsvReader)> {
    let file = File::open(path)?;
    let mut buf = BufReader::new(file);
    let mut meta = None;
    if skip_meta {
        let mut first = String::new();
        buf.read_line(&mut first)?;
        let first = first.trim_end();
        let body = first
            .strip_prefix("# ")
            .and_then(|s| s.split_once(' '))
            .map(|(_, json)| json.to_string())
            .ok_or_else(|| parse_err(path, 1, "missing metadata line"))?;
        meta = Some(body);
    }
    let reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(Box::new(buf) as Box<dyn Read>);
    Ok((meta, reader))
}

fn check_header(path: &Path, reader: &mut CsvReader, expected: &[&str]) -> Result<()> {
    let headers = reader.headers()?.clone();
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(parse_err(
            path,
            csv_line(&headers).max(1),
            format!("expected header {expected:?}, got {got:?}"),
        ));
    }
    Ok(())
}

fn field<'a>(path: &Path, rec: &'a csv::StringRecord, i: usize) -> Result<&'a str> {
    rec.get(i)
        .ok_or_else(|| parse_err(path, csv_line(rec), format!("missing column {i}")))
}

fn parse_field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize, what: &str) -> Result<T> {
    let raw = field(path, rec, i)?;
    raw.trim()
        .parse()
        .map_err(|_| parse_err(path, csv_line(rec), format!("bad {what} {raw:?}")))
}

fn writer_to(path: &Path, meta: Option<(&str, String)>) -> Result<csv::Writer<BufWriter<File>>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut file = BufWriter::new(File::create(path)?);
    if let Some((kind, json)) = meta {
        writeln!(file, "# skattr-{kind} {json}")?;
    }
    Ok(csv::Writer::from_writer(file))
}

// ---------------------------------------------------------------- dataset

pub fn save_users(users: &[UserRecord], users_csv: &Path, events_csv: &Path) -> Result<()> {
    let mut w = writer_to(users_csv, None)?;
    w.write_record(["id", "registration_date", "alpha", "group"])?;
    for u in users {
        w.write_record([
            u.id.to_string(),
            u.registered_at.to_rfc3339(),
            u.origin.0.to_string(),
            u.group.clone(),
        ])?;
    }
    w.flush()?;

    let mut w = writer_to(events_csv, None)?;
    w.write_record(["user_id", "timestamp", "kind", "amount_cents", "flag_index"])?;
    for u in users {
        for e in &u.events {
            let (kind, amount, flag) = match e.kind {
                EventKind::Session => ("session", String::new(), String::new()),
                EventKind::Purchase { amount } => ("purchase", amount.0.to_string(), String::new()),
                EventKind::Flag { index } => ("flag", String::new(), index.to_string()),
            };
            w.write_record([u.id.to_string(), e.timestamp.to_rfc3339(), kind.to_string(), amount, flag])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads and validates the user and event tables.
pub fn load_users(users_csv: &Path, events_csv: &Path) -> Result<Vec<UserRecord>> {
    let (_, mut r) = reader_from(users_csv, false)?;
    check_header(users_csv, &mut r, &["id", "registration_date", "alpha", "group"])?;
    let mut users: Vec<UserRecord> = Vec::new();
    let mut index: HashMap<u64, usize> = HashMap::new();
    for rec in r.records() {
        let rec = rec?;
        let id: u64 = parse_field(users_csv, &rec, 0, "id")?;
        let reg = Timestamp::parse_rfc3339(field(users_csv, &rec, 1)?.trim())
            .map_err(|e| parse_err(users_csv, csv_line(&rec), e))?;
        let alpha: u32 = parse_field(users_csv, &rec, 2, "alpha")?;
        let group = field(users_csv, &rec, 3)?.to_string();
        if index.insert(id, users.len()).is_some() {
            return Err(parse_err(users_csv, csv_line(&rec), format!("duplicate user id {id}")));
        }
        users.push(UserRecord {
            id,
            registered_at: reg,
            origin: CampaignKey(alpha),
            group,
            events: Vec::new(),
        });
    }

    let (_, mut r) = reader_from(events_csv, false)?;
    check_header(events_csv, &mut r, &["user_id", "timestamp", "kind", "amount_cents", "flag_index"])?;
    for rec in r.records() {
        let rec = rec?;
        let line = csv_line(&rec);
        let user_id: u64 = parse_field(events_csv, &rec, 0, "user_id")?;
        let ts = Timestamp::parse_rfc3339(field(events_csv, &rec, 1)?.trim())
            .map_err(|e| parse_err(events_csv, line, e))?;
        let kind = match field(events_csv, &rec, 2)?.trim() {
            "session" => EventKind::Session,
            "purchase" => EventKind::Purchase {
                amount: Cents(parse_field(events_csv, &rec, 3, "amount_cents")?),
            },
            "flag" => EventKind::Flag {
                index: parse_field(events_csv, &rec, 4, "flag_index")?,
            },
            other => return Err(parse_err(events_csv, line, format!("unknown event kind {other:?}"))),
        };
        let slot = *index.get(&user_id).ok_or_else(|| Error::DanglingEvent {
            user_id,
            path: events_csv.display().to_string(),
            line,
        })?;
        users[slot].events.push(Event { timestamp: ts, kind });
    }
    for u in &mut users {
        u.events.sort_by_key(|e| e.timestamp);
        u.validate()?;
    }
    users.sort_by_key(|u| u.id);
    Ok(users)
}

pub fn save_campaigns(campaigns: &CampaignSet, path: &Path) -> Result<()> {
    let mut w = writer_to(path, None)?;
    w.write_record(["alpha", "network", "campaign", "organic"])?;
    for k in &campaigns.paid {
        let (n, c) = k.decode(campaigns.organic)?;
        w.write_record([k.0.to_string(), n.to_string(), c.to_string(), "false".into()])?;
    }
    w.write_record([campaigns.organic.0.to_string(), String::new(), String::new(), "true".into()])?;
    w.flush()?;
    Ok(())
}

/// Reads the campaign catalogue; every paid row must satisfy
/// `alpha = 100 * network + campaign` with `campaign <= 99`.
pub fn load_campaigns(path: &Path) -> Result<CampaignSet> {
    let (_, mut r) = reader_from(path, false)?;
    check_header(path, &mut r, &["alpha", "network", "campaign", "organic"])?;
    let mut paid = Vec::new();
    let mut organic = None;
    for rec in r.records() {
        let rec = rec?;
        let line = csv_line(&rec);
        let alpha: u32 = parse_field(path, &rec, 0, "alpha")?;
        let is_organic: bool = parse_field(path, &rec, 3, "organic flag")?;
        if is_organic {
            if organic.replace(CampaignKey(alpha)).is_some() {
                return Err(parse_err(path, line, "more than one organic row"));
            }
            continue;
        }
        let n: u32 = parse_field(path, &rec, 1, "network")?;
        let c: u32 = parse_field(path, &rec, 2, "campaign")?;
        let key = CampaignKey::encode(n, c).map_err(|e| parse_err(path, line, e.to_string()))?;
        if key.0 != alpha {
            return Err(parse_err(path, line, format!("alpha {alpha} != 100*{n}+{c}")));
        }
        paid.push(key);
    }
    let organic = organic.ok_or_else(|| parse_err(path, 0, "no organic row"))?;
    CampaignSet::new(paid, Some(organic))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DatasetMeta {
    observed_until: String,
    users: usize,
    provenance: Option<Provenance>,
}

pub fn save_dataset(dataset: &Dataset, provenance: Option<&Provenance>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    save_users(&dataset.users, &dir.join(USERS_FILE), &dir.join(EVENTS_FILE))?;
    save_campaigns(&dataset.campaigns, &dir.join(CAMPAIGNS_FILE))?;
    let meta = DatasetMeta {
        observed_until: dataset.observed_until.to_rfc3339(),
        users: dataset.users.len(),
        provenance: provenance.cloned(),
    };
    write_json(&dir.join(DATASET_FILE), &meta)
}

/// Loads a dataset directory written by [`save_dataset`]. Users must
/// reference catalogued campaigns.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let campaigns = load_campaigns(&dir.join(CAMPAIGNS_FILE))?;
    let users = load_users(&dir.join(USERS_FILE), &dir.join(EVENTS_FILE))?;
    for u in &users {
        if !campaigns.is_organic(u.origin) && campaigns.paid.binary_search(&u.origin).is_err() {
            return Err(Error::InvalidUser {
                user: u.id,
                reason: format!("alpha {} not in campaign catalogue", u.origin),
            });
        }
    }
    let meta: DatasetMeta = read_json(&dir.join(DATASET_FILE))?;
    let observed_until = Timestamp::parse_rfc3339(&meta.observed_until)
        .map_err(|e| parse_err(&dir.join(DATASET_FILE), 0, e))?;
    Ok(Dataset {
        users,
        campaigns,
        observed_until,
    })
}

pub fn load_provenance(dir: &Path) -> Result<Option<Provenance>> {
    let meta: DatasetMeta = read_json(&dir.join(DATASET_FILE))?;
    Ok(meta.provenance)
}

// ---------------------------------------------------------------- counts

/// Metadata carried by count and attribution files so later stages can
/// re-derive the developer-side view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMeta {
    pub schema: String,
    pub seed: u64,
    pub privacy_applied: bool,
    pub p: Option<u64>,
    pub columns: Vec<CampaignKey>,
    pub organic: CampaignKey,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<u32>,
}

impl StageMeta {
    pub fn rehash(mut self) -> Result<StageMeta> {
        self.config_hash = String::new();
        self.config_hash = config_hash(&self)?;
        Ok(self)
    }
}

pub fn save_counts(matrices: &BTreeMap<CellKey, CountMatrix>, meta: &StageMeta, path: &Path) -> Result<()> {
    let mut w = writer_to(path, Some(("counts", serde_json::to_string(meta)?)))?;
    w.write_record(["group", "week", "conversion_value", "alpha", "count"])?;
    for (cell, m) in matrices {
        if m.columns != meta.columns {
            return Err(Error::Config("matrix columns differ from file columns".into()));
        }
        let week = cell.week.to_string();
        for v in 0..VALUE_COUNT as u8 {
            for (col, key) in m.columns.iter().enumerate() {
                match m.get_at(v, col) {
                    None => w.write_record([&cell.group, &week, &v.to_string(), &key.0.to_string(), ""])?,
                    Some(0) => {}
                    Some(n) => w.write_record([
                        cell.group.as_str(),
                        &week,
                        &v.to_string(),
                        &key.0.to_string(),
                        &n.to_string(),
                    ])?,
                }
            }
        }
        if let Some(null) = m.null_row() {
            for (key, n) in m.columns.iter().zip(null) {
                w.write_record([&cell.group, &week, "null", &key.0.to_string(), &n.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

struct MatrixBuilder {
    counts: Vec<u64>,
    suppressed: Vec<bool>,
    null_row: Option<Vec<u64>>,
}

pub fn load_counts(path: &Path) -> Result<(StageMeta, BTreeMap<CellKey, CountMatrix>)> {
    let (meta, mut r) = reader_from(path, true)?;
    let meta: StageMeta = serde_json::from_str(&meta.unwrap_or_default())
        .map_err(|e| parse_err(path, 1, format!("bad metadata: {e}")))?;
    check_header(path, &mut r, &["group", "week", "conversion_value", "alpha", "count"])?;
    let ncols = meta.columns.len();
    let col_of: HashMap<CampaignKey, usize> = meta.columns.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    let mut cells: BTreeMap<CellKey, MatrixBuilder> = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let line = csv_line(&rec);
        let group = field(path, &rec, 0)?.to_string();
        let week: WeekKey = field(path, &rec, 1)?
            .parse()
            .map_err(|e: String| parse_err(path, line, e))?;
        let alpha: u32 = parse_field(path, &rec, 3, "alpha")?;
        let col = *col_of
            .get(&CampaignKey(alpha))
            .ok_or_else(|| parse_err(path, line, format!("alpha {alpha} not in columns")))?;
        let b = cells.entry(CellKey { group, week }).or_insert_with(|| MatrixBuilder {
            counts: vec![0; VALUE_COUNT * ncols],
            suppressed: vec![false; VALUE_COUNT],
            null_row: meta.privacy_applied.then(|| vec![0; ncols]),
        });
        let value = field(path, &rec, 2)?.trim();
        let count_raw = field(path, &rec, 4)?.trim();
        if value == "null" {
            let null = b
                .null_row
                .as_mut()
                .ok_or_else(|| parse_err(path, line, "null row in a matrix without privacy applied"))?;
            null[col] = count_raw
                .parse()
                .map_err(|_| parse_err(path, line, format!("bad null count {count_raw:?}")))?;
            continue;
        }
        let v: u8 = value
            .parse()
            .ok()
            .filter(|v: &u8| (*v as usize) < VALUE_COUNT)
            .ok_or_else(|| parse_err(path, line, format!("bad conversion value {value:?}")))?;
        if count_raw.is_empty() {
            if !meta.privacy_applied {
                return Err(parse_err(path, line, "suppressed cell in a matrix without privacy applied"));
            }
            b.suppressed[v as usize] = true;
        } else {
            let n: u64 = count_raw
                .parse()
                .map_err(|_| parse_err(path, line, format!("bad count {count_raw:?}")))?;
            b.counts[v as usize * ncols + col] = n;
        }
    }
    let matrices = cells
        .into_iter()
        .map(|(cell, b)| {
            let m = CountMatrix::from_parts(cell.clone(), meta.columns.clone(), meta.organic, b.counts, b.suppressed, b.null_row);
            (cell, m)
        })
        .collect();
    Ok((meta, matrices))
}

// ----------------------------------------------------------- attribution

fn usd_to_cents(s: &str) -> Option<i64> {
    let s = s.trim();
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (whole, frac) = body.split_once('.').unwrap_or((body, ""));
    if frac.len() > 2 || whole.is_empty() {
        return None;
    }
    let whole: i64 = whole.parse().ok()?;
    let frac: i64 = if frac.is_empty() { 0 } else { format!("{frac:0<2}").parse().ok()? };
    let cents = whole * 100 + frac;
    Some(if neg { -cents } else { cents })
}

/// Writes `group,week,alpha,attributed_usd`, each amount rounded to cents.
pub fn save_attribution(cells: &BTreeMap<CellKey, Attribution>, meta: &StageMeta, path: &Path) -> Result<()> {
    let mut w = writer_to(path, Some(("attribution", serde_json::to_string(meta)?)))?;
    w.write_record(["group", "week", "alpha", "attributed_usd"])?;
    for (cell, attr) in cells {
        let week = cell.week.to_string();
        for (k, v) in attr {
            let cents = Cents(v.round() as i64);
            w.write_record([cell.group.as_str(), &week, &k.0.to_string(), &cents.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_attribution(path: &Path) -> Result<(StageMeta, BTreeMap<CellKey, Attribution>)> {
    let (meta, mut r) = reader_from(path, true)?;
    let meta: StageMeta = serde_json::from_str(&meta.unwrap_or_default())
        .map_err(|e| parse_err(path, 1, format!("bad metadata: {e}")))?;
    check_header(path, &mut r, &["group", "week", "alpha", "attributed_usd"])?;
    let mut out: BTreeMap<CellKey, Attribution> = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let line = csv_line(&rec);
        let group = field(path, &rec, 0)?.to_string();
        let week: WeekKey = field(path, &rec, 1)?
            .parse()
            .map_err(|e: String| parse_err(path, line, e))?;
        let alpha: u32 = parse_field(path, &rec, 2, "alpha")?;
        let raw = field(path, &rec, 3)?;
        let cents = usd_to_cents(raw).ok_or_else(|| parse_err(path, line, format!("bad amount {raw:?}")))?;
        out.entry(CellKey { group, week })
            .or_default()
            .insert(CampaignKey(alpha), cents as f64);
    }
    Ok((meta, out))
}

// ---------------------------------------------------------------- reports

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut file, value)?;
    writeln!(file)?;
    file.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path)?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

/// Flat grid: one row per cell.
pub fn save_report_csv(report: &AttributionReport, path: &Path) -> Result<()> {
    let meta = serde_json::to_string(&report.metadata)?;
    let mut w = writer_to(path, Some(("report", meta)))?;
    w.write_record(["schema", "p", "g", "lambda", "level", "hypothetical", "aggregate_error_cents", "score_pct"])?;
    for c in &report.cells {
        w.write_record([
            c.schema.clone(),
            c.p.to_string(),
            c.g.to_string(),
            c.lambda.to_string(),
            c.level.name().to_string(),
            c.hypothetical.to_string(),
            format!("{:.4}", c.aggregate_error),
            format!("{:.4}", c.score),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_window_curve(points: &[WindowPoint], path: &Path) -> Result<()> {
    let mut w = writer_to(path, None)?;
    w.write_record(["window", "error"])?;
    for p in points {
        w.write_record([format!("{}-{}", p.lo, p.hi), format!("{:.4}", p.error)])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `report.json`, `report.csv` and, when present, `window_curve.csv`.
pub fn save_report(report: &AttributionReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = vec![dir.join("report.json"), dir.join("report.csv")];
    write_json(&written[0], report)?;
    save_report_csv(report, &written[1])?;
    if let Some(curve) = &report.window_curve {
        let p = dir.join("window_curve.csv");
        save_window_curve(curve, &p)?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usd_parsing() {
        assert_eq!(usd_to_cents("2.99"), Some(299));
        assert_eq!(usd_to_cents("-0.05"), Some(-5));
        assert_eq!(usd_to_cents("12"), Some(1200));
        assert_eq!(usd_to_cents("1.5"), Some(150));
        assert_eq!(usd_to_cents("1.234"), None);
        assert_eq!(usd_to_cents("x"), None);
        for c in [-1234567i64, -1, 0, 7, 99, 100, 123456789] {
            assert_eq!(usd_to_cents(&Cents(c).to_string()), Some(c));
        }
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(config_hash(&[1, 2, 3]).unwrap(), config_hash(&[1, 2, 3]).unwrap());
        assert_ne!(config_hash(&[1, 2, 3]).unwrap(), config_hash(&[1, 2]).unwrap());
    }
}
