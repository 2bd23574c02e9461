//! Cheap pre-filters for falsified uploads: scans without any legitimate SSID,
//! and consecutive uploads whose implied walking speed exceeds `rho`.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::datamodel::{dist, DetectionConfig, Record, Rid};
use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagReason {
    BadSsid,
    SpeedAnomaly,
}

impl FlagReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FlagReason::BadSsid => "bad_ssid",
            FlagReason::SpeedAnomaly => "speed_anomaly",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CoarseFlags {
    pub flagged: BTreeSet<Rid>,
    /// One reason per flagged rid; an SSID failure takes precedence over speed.
    pub reason: BTreeMap<Rid, FlagReason>,
}

impl CoarseFlags {
    pub fn contains(&self, rid: Rid) -> bool {
        self.flagged.contains(&rid)
    }

    pub fn len(&self) -> usize {
        self.flagged.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flagged.is_empty()
    }

    /// `{"flagged":[{"rid":..,"reason":..}]}`
    pub fn to_json(&self) -> serde_json::Value {
        let flagged: Vec<_> = self
            .reason
            .iter()
            .map(|(rid, why)| serde_json::json!({"rid": rid, "reason": why.as_str()}))
            .collect();
        serde_json::json!({ "flagged": flagged })
    }
}

fn scan_is_legitimate(record: &Record, dataset: &Dataset, config: &DetectionConfig) -> bool {
    let topo = &dataset.topology;
    if config.per_tag_ssid {
        if let Ok(tag) = topo.tag(record.lid) {
            if !tag.ssids.is_empty() {
                return record
                    .fingerprint
                    .wifi
                    .iter()
                    .any(|w| tag.ssids.contains(&w.ssid));
            }
        }
    }
    let whitelist = topo.ssid_whitelist();
    record
        .fingerprint
        .wifi
        .iter()
        .any(|w| whitelist.contains(&w.ssid))
}

/// Records whose scan contains no whitelisted SSID. Empty scans are flagged.
pub fn ssid_check(dataset: &Dataset, config: &DetectionConfig) -> Result<BTreeSet<Rid>> {
    if dataset.topology.ssid_whitelist().is_empty() && !config.per_tag_ssid {
        return Err(Error::Validation(
            "SSID check requires a non-empty whitelist".into(),
        ));
    }
    Ok(dataset
        .records
        .iter()
        .filter(|r| !scan_is_legitimate(r, dataset, config))
        .map(|r| r.rid)
        .collect())
}

/// True when moving from `a` to `b` implies a speed above `rho`.
/// A zero time gap between distinct tags counts as infinite speed.
fn pair_too_fast(a: &Record, b: &Record, dataset: &Dataset, rho: f64) -> bool {
    if a.lid == b.lid {
        return false;
    }
    // Both lids were validated against the topology on load.
    let d = dist(&dataset.topology, a.lid, b.lid).unwrap_or(0.0);
    let dt = b.ts() - a.ts();
    if dt <= 0.0 {
        return d > 0.0;
    }
    d / dt > rho
}

/// Both records of every consecutive same-user pair whose implied speed exceeds `rho`.
pub fn speed_check(dataset: &Dataset, config: &DetectionConfig) -> BTreeSet<Rid> {
    let users = dataset.by_user();
    let per_user = par::map_slice(&users, |(_, recs)| {
        let mut hits = Vec::new();
        for w in recs.windows(2) {
            if pair_too_fast(&w[0], &w[1], dataset, config.rho) {
                hits.push(w[0].rid);
                hits.push(w[1].rid);
            }
        }
        hits
    });
    per_user.into_iter().flatten().collect()
}

/// Union of the SSID and speed filters.
pub fn run_coarse(dataset: &Dataset, config: &DetectionConfig) -> Result<CoarseFlags> {
    let mut flags = CoarseFlags::default();
    if config.ssid_check {
        for rid in ssid_check(dataset, config)? {
            flags.reason.insert(rid, FlagReason::BadSsid);
        }
    }
    for rid in speed_check(dataset, config) {
        flags.reason.entry(rid).or_insert(FlagReason::SpeedAnomaly);
    }
    flags.flagged = flags.reason.keys().copied().collect();
    Ok(flags)
}
