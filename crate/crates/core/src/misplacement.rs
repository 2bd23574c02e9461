//! Tag-misplacement detection from abnormal length-3 trajectories.
//!
//! A trajectory A -> B -> C is normal when C is at least as far from A as B is.
//! Moving a tag makes users appear to detour through its recorded position and
//! come back, so the moved tag keeps showing up as the middle leg of abnormal
//! trajectories.

use std::collections::HashMap;

use serde_json::json;

use crate::datamodel::{dist, DetectionConfig, Lid, Record, TagTopology, Uid};
use crate::error::Result;
use crate::ingest::Dataset;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankDirection {
    /// Misplacement: larger abnormal counts first.
    DescendingAbnormalCount,
    /// Removal: smaller frequency ratios first.
    AscendingRemovalScore,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankEntry {
    pub lid: Lid,
    pub score: f64,
}

/// Tags ordered by suspicion. Ties are broken by ascending lid.
#[derive(Debug, Clone, PartialEq)]
pub struct SuspectRanking {
    pub entries: Vec<RankEntry>,
    pub direction: RankDirection,
}

impl SuspectRanking {
    pub fn new(mut entries: Vec<RankEntry>, direction: RankDirection) -> Self {
        match direction {
            RankDirection::DescendingAbnormalCount => {
                entries.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.lid.cmp(&b.lid)))
            }
            RankDirection::AscendingRemovalScore => {
                entries.sort_by(|a, b| a.score.total_cmp(&b.score).then(a.lid.cmp(&b.lid)))
            }
        }
        SuspectRanking { entries, direction }
    }

    /// The first `k` lids (fewer if the ranking is shorter).
    pub fn head(&self, k: usize) -> Vec<Lid> {
        self.entries.iter().take(k).map(|e| e.lid).collect()
    }

    pub fn score_of(&self, lid: Lid) -> Option<f64> {
        self.entries.iter().find(|e| e.lid == lid).map(|e| e.score)
    }

    /// `{"ranking":[...]}`, restricted to the first `top` entries when given.
    pub fn to_json(&self, top: Option<usize>) -> serde_json::Value {
        let n = top.unwrap_or(self.entries.len());
        let rows: Vec<_> = self
            .entries
            .iter()
            .take(n)
            .map(|e| match self.direction {
                RankDirection::DescendingAbnormalCount => {
                    json!({"lid": e.lid, "count": e.score as u64})
                }
                RankDirection::AscendingRemovalScore if e.score.is_infinite() => {
                    json!({"lid": e.lid, "score": "inf"})
                }
                RankDirection::AscendingRemovalScore => json!({"lid": e.lid, "score": e.score}),
            })
            .collect();
        json!({ "ranking": rows })
    }

    /// Parses the JSON produced by [`SuspectRanking::to_json`].
    pub fn from_json(value: &serde_json::Value) -> Option<Self> {
        let rows = value.get("ranking")?.as_array()?;
        let mut entries = Vec::with_capacity(rows.len());
        let mut direction = RankDirection::AscendingRemovalScore;
        for r in rows {
            let lid = r.get("lid")?.as_u64()?;
            let score = if let Some(c) = r.get("count") {
                direction = RankDirection::DescendingAbnormalCount;
                c.as_f64()?
            } else {
                match r.get("score")? {
                    serde_json::Value::String(s) if s == "inf" => f64::INFINITY,
                    v => v.as_f64()?,
                }
            };
            entries.push(RankEntry { lid, score });
        }
        Some(SuspectRanking { entries, direction })
    }
}

/// Three consecutive uploads of one user, each gap within the time window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trajectory3 {
    pub uid: Uid,
    /// `(lid, ts_ms)` in chronological order.
    pub legs: [(Lid, i64); 3],
}

impl Trajectory3 {
    pub fn middle(&self) -> Lid {
        self.legs[1].0
    }
}

fn user_trajectories(uid: Uid, records: &[Record], tw_ms: f64) -> Vec<Trajectory3> {
    // records are already chronological; collapse repeated scans of one tag
    let mut legs: Vec<(Lid, i64)> = Vec::with_capacity(records.len());
    for r in records {
        if legs.last().map(|l| l.0) != Some(r.lid) {
            legs.push((r.lid, r.ts_ms));
        }
    }
    legs.windows(3)
        .filter(|w| (w[1].1 - w[0].1) as f64 <= tw_ms && (w[2].1 - w[1].1) as f64 <= tw_ms)
        .map(|w| Trajectory3 {
            uid,
            legs: [w[0], w[1], w[2]],
        })
        .collect()
}

/// Overlapping length-3 windows over each user's chronological uploads.
pub fn build_trajectories(dataset: &Dataset, config: &DetectionConfig) -> Vec<Trajectory3> {
    let tw_ms = config.tw * 1000.0;
    let users = dataset.by_user();
    par::map_slice(&users, |(uid, recs)| user_trajectories(*uid, recs, tw_ms))
        .into_iter()
        .flatten()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryClass {
    Normal,
    Abnormal,
}

/// Normal iff dist(third, first) >= dist(second, first).
pub fn classify_trajectory(t: &Trajectory3, topology: &TagTopology) -> Result<TrajectoryClass> {
    let [(a, _), (b, _), (c, _)] = t.legs;
    let onward = dist(topology, c, a)?;
    let first_hop = dist(topology, b, a)?;
    Ok(if onward >= first_hop {
        TrajectoryClass::Normal
    } else {
        TrajectoryClass::Abnormal
    })
}

/// Abnormal-trajectory count per tag, keyed by the trajectory's middle tag.
pub fn abnormal_counts(dataset: &Dataset, config: &DetectionConfig) -> Result<HashMap<Lid, u64>> {
    let mut counts: HashMap<Lid, u64> =
        dataset.topology.tags().iter().map(|t| (t.lid, 0)).collect();
    for t in build_trajectories(dataset, config) {
        if classify_trajectory(&t, &dataset.topology)? == TrajectoryClass::Abnormal {
            *counts.entry(t.middle()).or_default() += 1;
        }
    }
    Ok(counts)
}

/// Every tag ranked by abnormal count, highest first.
pub fn rank_misplaced(dataset: &Dataset, config: &DetectionConfig) -> Result<SuspectRanking> {
    let counts = abnormal_counts(dataset, config)?;
    let entries = dataset
        .topology
        .tags()
        .iter()
        .map(|t| RankEntry {
            lid: t.lid,
            score: counts[&t.lid] as f64,
        })
        .collect();
    Ok(SuspectRanking::new(
        entries,
        RankDirection::DescendingAbnormalCount,
    ))
}
