//! Tag-removal detection: a tag that stops appearing while its neighbors stay
//! busy has a low frequency relative to the neighborhood mean.

use std::collections::{BTreeMap, BTreeSet};

use crate::coarse;
use crate::datamodel::{dist, DetectionConfig, Lid, RemovalSource, TagTopology};
use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::misplacement::{RankDirection, RankEntry, SuspectRanking};
use crate::par;

/// Neighborhood size used when no tag lies within `phi`.
pub const FALLBACK_NEIGHBORS: usize = 3;

/// Upload count per tag; every topology tag is present.
pub fn tag_frequencies(dataset: &Dataset) -> BTreeMap<Lid, u64> {
    let mut freq: BTreeMap<Lid, u64> = dataset.topology.tags().iter().map(|t| (t.lid, 0)).collect();
    for r in &dataset.records {
        *freq.entry(r.lid).or_default() += 1;
    }
    freq
}

/// Tags within `phi` of each tag, or its nearest few when that set is empty.
pub fn neighbor_sets(
    topology: &TagTopology,
    config: &DetectionConfig,
) -> Result<BTreeMap<Lid, BTreeSet<Lid>>> {
    if topology.len() < 2 {
        return Err(Error::Neighbor(
            "at least two tags are needed to compare neighborhoods".into(),
        ));
    }
    let tags = topology.tags();
    let sets = par::map_slice(tags, |tag| {
        let mut others: Vec<(f64, Lid)> = tags
            .iter()
            .filter(|o| o.lid != tag.lid)
            .map(|o| {
                (
                    dist(topology, tag.lid, o.lid).expect("lids come from the topology"),
                    o.lid,
                )
            })
            .collect();
        let within: BTreeSet<Lid> = others
            .iter()
            .filter(|(d, _)| *d <= config.phi)
            .map(|(_, l)| *l)
            .collect();
        if !within.is_empty() {
            return (tag.lid, within);
        }
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        (
            tag.lid,
            others
                .into_iter()
                .take(FALLBACK_NEIGHBORS)
                .map(|(_, l)| l)
                .collect(),
        )
    });
    Ok(sets.into_iter().collect())
}

/// `freq / mean(neighbor freq)`; `+inf` when the neighborhood is silent.
pub fn removal_scores(
    freq: &BTreeMap<Lid, u64>,
    neighbors: &BTreeMap<Lid, BTreeSet<Lid>>,
) -> BTreeMap<Lid, f64> {
    neighbors
        .iter()
        .map(|(lid, nb)| {
            let total: u64 = nb.iter().map(|n| freq.get(n).copied().unwrap_or(0)).sum();
            let mean = total as f64 / nb.len() as f64;
            let own = freq.get(lid).copied().unwrap_or(0) as f64;
            let score = if mean > 0.0 {
                own / mean
            } else {
                f64::INFINITY
            };
            (*lid, score)
        })
        .collect()
}

/// Every tag ranked by ascending frequency ratio.
pub fn rank_removed(dataset: &Dataset, config: &DetectionConfig) -> Result<SuspectRanking> {
    let neighbors = neighbor_sets(&dataset.topology, config)?;
    let freq = match config.removal_source {
        RemovalSource::Raw => tag_frequencies(dataset),
        RemovalSource::Filtered => {
            let flags = coarse::run_coarse(dataset, config)?;
            let mut freq = tag_frequencies(dataset);
            for r in dataset.records.iter().filter(|r| flags.contains(r.rid)) {
                if let Some(c) = freq.get_mut(&r.lid) {
                    *c -= 1;
                }
            }
            freq
        }
    };
    let entries = removal_scores(&freq, &neighbors)
        .into_iter()
        .map(|(lid, score)| RankEntry { lid, score })
        .collect();
    Ok(SuspectRanking::new(
        entries,
        RankDirection::AscendingRemovalScore,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{Fingerprint, Record, Tag, WifiObservation};
    use proptest::prelude::*;

    fn topo(points: &[(f64, f64)]) -> TagTopology {
        let tags = points
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| Tag::new(i as Lid + 1, x, y, format!("t{i}")))
            .collect();
        TagTopology::new(tags, ["corp".to_string()]).unwrap()
    }

    fn grid(cols: usize, rows: usize, pitch: f64) -> TagTopology {
        let pts: Vec<(f64, f64)> = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| (c as f64 * pitch, r as f64 * pitch)))
            .collect();
        topo(&pts)
    }

    fn dataset_with_counts(topology: TagTopology, counts: &[(Lid, usize)]) -> Dataset {
        let mut recs = Vec::new();
        let mut rid = 0;
        for &(lid, n) in counts {
            for _ in 0..n {
                rid += 1;
                recs.push(Record {
                    rid,
                    uid: rid,
                    lid,
                    ts_ms: 0,
                    fingerprint: Fingerprint {
                        wifi: vec![WifiObservation {
                            bssid: "b".into(),
                            ssid: "corp".into(),
                            rss: -50,
                        }],
                        magnetic: 40.0,
                    },
                    payload: Vec::new(),
                });
            }
        }
        Dataset::new(recs, topology, "t").unwrap()
    }

    #[test]
    fn frequencies() {
        let d = dataset_with_counts(topo(&[(0.0, 0.0), (1.0, 0.0)]), &[(1, 3)]);
        let f = tag_frequencies(&d);
        assert_eq!(f[&1], 3);
        assert_eq!(f[&2], 0);
        assert_eq!(f.values().sum::<u64>() as usize, d.len());
    }

    #[test]
    fn neighbor_radius_and_fallback() {
        let cfg = DetectionConfig::default();
        let n = neighbor_sets(&topo(&[(0.0, 0.0), (3.0, 0.0)]), &cfg).unwrap();
        assert_eq!(n[&1], BTreeSet::from([2]));
        assert_eq!(n[&2], BTreeSet::from([1]));
        let n = neighbor_sets(&topo(&[(0.0, 0.0), (8.0, 0.0)]), &cfg).unwrap();
        assert_eq!(n[&1], BTreeSet::from([2]));
        let n = neighbor_sets(
            &topo(&[
                (0.0, 0.0),
                (8.0, 0.0),
                (20.0, 0.0),
                (30.0, 0.0),
                (50.0, 0.0),
            ]),
            &cfg,
        )
        .unwrap();
        assert_eq!(n[&1], BTreeSet::from([2, 3, 4]));
        assert!(matches!(
            neighbor_sets(&topo(&[(0.0, 0.0)]), &cfg),
            Err(Error::Neighbor(_))
        ));
    }

    #[test]
    fn grid_interior_has_four_neighbors() {
        let n = neighbor_sets(&grid(3, 3, 5.0), &DetectionConfig::default()).unwrap();
        assert_eq!(n[&5], BTreeSet::from([2, 4, 6, 8]));
        assert_eq!(n[&1], BTreeSet::from([2, 4]));
    }

    #[test]
    fn removed_signature_ranks_first() {
        let d = dataset_with_counts(grid(3, 1, 5.0), &[(1, 10), (3, 10)]);
        let cfg = DetectionConfig {
            removal_source: RemovalSource::Raw,
            ..Default::default()
        };
        let r = rank_removed(&d, &cfg).unwrap();
        assert_eq!(r.entries[0], RankEntry { lid: 2, score: 0.0 });
        // ends see only the silent middle tag
        assert!(r.entries[1].score.is_infinite());
        assert_eq!(
            r.to_json(Some(2)).to_string(),
            r#"{"ranking":[{"lid":2,"score":0.0},{"lid":1,"score":"inf"}]}"#
        );
        assert_eq!(SuspectRanking::from_json(&r.to_json(None)).unwrap(), r);
    }

    #[test]
    fn uniform_frequencies_tie_by_lid() {
        let d = dataset_with_counts(grid(2, 2, 5.0), &[(1, 4), (2, 4), (3, 4), (4, 4)]);
        let r = rank_removed(&d, &DetectionConfig::default()).unwrap();
        assert!(r.entries.iter().all(|e| e.score == 1.0));
        assert_eq!(r.head(4), vec![1, 2, 3, 4]);
    }

    proptest! {
        #[test]
        fn ratio_ranking_scale_invariant(counts in prop::collection::vec(0u64..50, 9), scale in 1u64..20) {
            let neighbors = neighbor_sets(&grid(3, 3, 5.0), &DetectionConfig::default()).unwrap();
            let f1: BTreeMap<Lid, u64> = counts.iter().enumerate().map(|(i, &c)| (i as Lid + 1, c)).collect();
            let f2: BTreeMap<Lid, u64> = f1.iter().map(|(&k, &v)| (k, v * scale)).collect();
            let rank = |f: &BTreeMap<Lid, u64>| {
                let e = removal_scores(f, &neighbors).into_iter().map(|(lid, score)| RankEntry { lid, score }).collect();
                SuspectRanking::new(e, RankDirection::AscendingRemovalScore).head(9)
            };
            prop_assert_eq!(rank(&f1), rank(&f2));
        }

        #[test]
        fn zero_before_positive_at_equal_mean(mean in 1u64..100, own in 1u64..100) {
            let nb = BTreeMap::from([(1, BTreeSet::from([3])), (2, BTreeSet::from([3])), (3, BTreeSet::from([1]))]);
            let f = BTreeMap::from([(1, 0), (2, own), (3, mean)]);
            let s = removal_scores(&f, &nb);
            prop_assert!(s[&1] < s[&2]);
        }
    }
}
