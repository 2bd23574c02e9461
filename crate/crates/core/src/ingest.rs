//! Loading, validating, and writing record datasets and ground-truth files.
//!
//! Records are JSONL, one upload per line:
//! `{"rid":1,"uid":3,"lid":12,"ts_ms":1500000000000,"wifi":[{"bssid":..,"ssid":..,"rss":-61}],"mag":47.2,"payload":"<base64>"}`.
//! Timestamps are integer milliseconds on the wire.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    Fingerprint, Lid, Record, Rid, TagTopology, Uid, WifiObservation, RSS_MAX, RSS_MIN,
};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct RecordWire {
    rid: Rid,
    uid: Uid,
    lid: Lid,
    ts_ms: i64,
    wifi: Vec<WifiObservation>,
    mag: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    payload: Option<String>,
}

impl RecordWire {
    fn into_record(self) -> std::result::Result<Record, String> {
        let payload = match self.payload {
            Some(p) => B64
                .decode(p.as_bytes())
                .map_err(|e| format!("payload is not base64: {e}"))?,
            None => Vec::new(),
        };
        Ok(Record {
            rid: self.rid,
            uid: self.uid,
            lid: self.lid,
            ts_ms: self.ts_ms,
            fingerprint: Fingerprint {
                wifi: self.wifi,
                magnetic: self.mag,
            },
            payload,
        })
    }

    fn from_record(r: &Record) -> Self {
        RecordWire {
            rid: r.rid,
            uid: r.uid,
            lid: r.lid,
            ts_ms: r.ts_ms,
            wifi: r.fingerprint.wifi.clone(),
            mag: r.fingerprint.magnetic,
            payload: (!r.payload.is_empty()).then(|| B64.encode(&r.payload)),
        }
    }
}

/// A validated collection of uploads, sorted by `(uid, ts, rid)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<Record>,
    pub topology: TagTopology,
    pub source: String,
}

fn validate_record(r: &Record, topology: &TagTopology) -> std::result::Result<(), String> {
    if !topology.contains(r.lid) {
        return Err(format!("record {} references unknown lid {}", r.rid, r.lid));
    }
    if r.ts_ms < 0 {
        return Err(format!("record {} has negative timestamp", r.rid));
    }
    let mag = r.fingerprint.magnetic;
    if !(mag.is_finite() && mag >= 0.0) {
        return Err(format!(
            "record {} has invalid magnetic magnitude {mag}",
            r.rid
        ));
    }
    let mut seen = HashSet::new();
    for w in &r.fingerprint.wifi {
        if !(RSS_MIN..=RSS_MAX).contains(&w.rss) {
            return Err(format!("record {}: rss {} outside [-100, 0]", r.rid, w.rss));
        }
        if !seen.insert(w.bssid.as_str()) {
            return Err(format!(
                "record {}: bssid {} repeated within one scan",
                r.rid, w.bssid
            ));
        }
    }
    Ok(())
}

impl Dataset {
    pub fn new(
        mut records: Vec<Record>,
        topology: TagTopology,
        source: impl Into<String>,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Validation("empty dataset".into()));
        }
        let mut rids = HashSet::with_capacity(records.len());
        for r in &records {
            if !rids.insert(r.rid) {
                return Err(Error::Validation(format!("duplicate rid {}", r.rid)));
            }
            validate_record(r, &topology).map_err(Error::Validation)?;
        }
        records.sort_by_key(|r| (r.uid, r.ts_ms, r.rid));
        Ok(Dataset {
            records,
            topology,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct user ids, ascending.
    pub fn users(&self) -> Vec<Uid> {
        let mut u: Vec<Uid> = self.records.iter().map(|r| r.uid).collect();
        u.dedup();
        u
    }

    /// Each user's uploads in chronological order.
    pub fn by_user(&self) -> Vec<(Uid, &[Record])> {
        self.records
            .chunk_by(|a, b| a.uid == b.uid)
            .map(|chunk| (chunk[0].uid, chunk))
            .collect()
    }

    pub fn contains_rid(&self, rid: Rid) -> bool {
        self.records.iter().any(|r| r.rid == rid)
    }

    /// Writes the records as JSONL in ascending rid order.
    pub fn write_records(&self, out: impl Write) -> Result<()> {
        write_records(&self.records, out)
    }
}

pub fn write_records(records: &[Record], out: impl Write) -> Result<()> {
    let mut out = BufWriter::new(out);
    let mut order: Vec<&Record> = records.iter().collect();
    order.sort_by_key(|r| r.rid);
    for r in order {
        serde_json::to_writer(&mut out, &RecordWire::from_record(r))?;
        out.write_all(b"\n")
            .map_err(|e| Error::io("<records>", e))?;
    }
    out.flush().map_err(|e| Error::io("<records>", e))
}

/// Parses records JSONL. Blank lines are skipped; line numbers in errors are 1-based.
pub fn parse_records(input: impl BufRead, source: &str) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: source.to_string(),
            line: i + 1,
            message,
        };
        let wire: RecordWire = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        out.push(wire.into_record().map_err(parse_err)?);
    }
    Ok(out)
}

pub fn read_topology(path: impl AsRef<Path>) -> Result<TagTopology> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| match e.classify() {
        serde_json::error::Category::Io => Error::io(path, e.into()),
        _ => Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        },
    })
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_dataset(
    records_path: impl AsRef<Path>,
    topology_path: impl AsRef<Path>,
) -> Result<Dataset> {
    let topology = read_topology(topology_path)?;
    let records_path = records_path.as_ref();
    let source = records_path.display().to_string();
    let file = File::open(records_path).map_err(|e| Error::io(records_path, e))?;
    let records = parse_records(BufReader::new(file), &source)?;
    Dataset::new(records, topology, source)
}

/// Writes `records.jsonl`-style and `topology.json`-style files for a dataset.
pub fn save_dataset(
    dataset: &Dataset,
    records_path: impl AsRef<Path>,
    topology_path: impl AsRef<Path>,
) -> Result<()> {
    let rp = records_path.as_ref();
    let file = File::create(rp).map_err(|e| Error::io(rp, e))?;
    dataset.write_records(file)?;
    write_json(topology_path, &dataset.topology)
}

#[derive(Serialize, Deserialize, Default)]
struct GroundTruthWire {
    validity: BTreeMap<String, u8>,
    attackers: Vec<Uid>,
    misplaced: Vec<Lid>,
    removed: Vec<Lid>,
}

/// Known labels for an emulated or audited dataset.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "GroundTruthWire", into = "GroundTruthWire")]
pub struct GroundTruth {
    /// rid -> true when the claimed tag is truthful.
    pub validity: BTreeMap<Rid, bool>,
    pub attackers: BTreeSet<Uid>,
    pub misplaced: BTreeSet<Lid>,
    pub removed: BTreeSet<Lid>,
}

impl TryFrom<GroundTruthWire> for GroundTruth {
    type Error = String;

    fn try_from(w: GroundTruthWire) -> std::result::Result<Self, String> {
        let mut validity = BTreeMap::new();
        for (k, v) in w.validity {
            let rid: Rid = k
                .parse()
                .map_err(|_| format!("validity key {k:?} is not a rid"))?;
            let ok = match v {
                0 => false,
                1 => true,
                other => {
                    return Err(format!(
                        "validity for rid {rid} must be 0 or 1, got {other}"
                    ))
                }
            };
            validity.insert(rid, ok);
        }
        Ok(GroundTruth {
            validity,
            attackers: w.attackers.into_iter().collect(),
            misplaced: w.misplaced.into_iter().collect(),
            removed: w.removed.into_iter().collect(),
        })
    }
}

impl From<GroundTruth> for GroundTruthWire {
    fn from(g: GroundTruth) -> Self {
        GroundTruthWire {
            validity: g
                .validity
                .into_iter()
                .map(|(k, v)| (k.to_string(), u8::from(v)))
                .collect(),
            attackers: g.attackers.into_iter().collect(),
            misplaced: g.misplaced.into_iter().collect(),
            removed: g.removed.into_iter().collect(),
        }
    }
}

impl GroundTruth {
    pub fn falsified_count(&self) -> usize {
        self.validity.values().filter(|v| !**v).count()
    }

    /// Parses a ground-truth file without checking it against a dataset.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn validate_against(&self, dataset: &Dataset) -> Result<()> {
        let rids: HashSet<Rid> = dataset.records.iter().map(|r| r.rid).collect();
        if let Some(rid) = self.validity.keys().find(|r| !rids.contains(r)) {
            return Err(Error::Validation(format!(
                "ground truth references unknown rid {rid}"
            )));
        }
        Ok(())
    }
}

pub fn load_ground_truth(path: impl AsRef<Path>, dataset: &Dataset) -> Result<GroundTruth> {
    let truth = GroundTruth::read(path)?;
    truth.validate_against(dataset)?;
    Ok(truth)
}
