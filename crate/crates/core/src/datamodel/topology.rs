use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::Lid;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tag {
    pub lid: Lid,
    pub x: f64,
    pub y: f64,
    pub name: String,
    /// Optional per-tag SSID whitelist, only consulted when per-tag checking is enabled.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ssids: Vec<String>,
}

impl Tag {
    pub fn new(lid: Lid, x: f64, y: f64, name: impl Into<String>) -> Self {
        Tag {
            lid,
            x,
            y,
            name: name.into(),
            ssids: Vec::new(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TopologyWire {
    tags: Vec<Tag>,
    ssid_whitelist: Vec<String>,
}

/// Deployed reference tags with planar coordinates (meters) and the
/// deployment-wide whitelist of legitimate SSIDs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TopologyWire", into = "TopologyWire")]
pub struct TagTopology {
    tags: Vec<Tag>,
    ssid_whitelist: BTreeSet<String>,
    index: HashMap<Lid, usize>,
}

impl TryFrom<TopologyWire> for TagTopology {
    type Error = Error;

    fn try_from(w: TopologyWire) -> Result<Self> {
        TagTopology::new(w.tags, w.ssid_whitelist)
    }
}

impl From<TagTopology> for TopologyWire {
    fn from(t: TagTopology) -> Self {
        TopologyWire {
            tags: t.tags,
            ssid_whitelist: t.ssid_whitelist.into_iter().collect(),
        }
    }
}

impl TagTopology {
    pub fn new(tags: Vec<Tag>, ssid_whitelist: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tags.len());
        for (i, t) in tags.iter().enumerate() {
            if !(t.x.is_finite() && t.y.is_finite()) {
                return Err(Error::Topology(format!(
                    "tag {} has non-finite coordinates",
                    t.lid
                )));
            }
            if index.insert(t.lid, i).is_some() {
                return Err(Error::Topology(format!("duplicate lid {}", t.lid)));
            }
        }
        Ok(TagTopology {
            tags,
            ssid_whitelist: ssid_whitelist.into_iter().collect(),
            index,
        })
    }

    pub fn tags(&self) -> &[Tag] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn ssid_whitelist(&self) -> &BTreeSet<String> {
        &self.ssid_whitelist
    }

    /// Dense index of `lid` in topology order.
    pub fn index_of(&self, lid: Lid) -> Option<usize> {
        self.index.get(&lid).copied()
    }

    pub fn contains(&self, lid: Lid) -> bool {
        self.index.contains_key(&lid)
    }

    pub fn tag(&self, lid: Lid) -> Result<&Tag> {
        self.index_of(lid)
            .map(|i| &self.tags[i])
            .ok_or_else(|| Error::Topology(format!("unknown lid {lid}")))
    }

    pub fn position(&self, lid: Lid) -> Result<(f64, f64)> {
        self.tag(lid).map(|t| (t.x, t.y))
    }
}

/// Planar Euclidean distance between two tags, in meters.
pub fn dist(topology: &TagTopology, a: Lid, b: Lid) -> Result<f64> {
    let (ax, ay) = topology.position(a)?;
    let (bx, by) = topology.position(b)?;
    Ok((ax - bx).hypot(ay - by))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn topo(points: &[(f64, f64)]) -> TagTopology {
        let tags = points
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| Tag::new(i as Lid + 1, x, y, format!("t{}", i + 1)))
            .collect();
        TagTopology::new(tags, ["corp".to_string()]).unwrap()
    }

    #[test]
    fn dist_examples() {
        let t = topo(&[(0.0, 0.0), (3.0, 4.0), (1.0, 1.0), (4.0, 5.0)]);
        assert_eq!(dist(&t, 1, 2).unwrap(), 5.0);
        assert_eq!(dist(&t, 2, 2).unwrap(), 0.0);
        assert_eq!(dist(&t, 3, 4).unwrap(), 5.0);
    }

    #[test]
    fn unknown_lid_is_topology_error() {
        let t = topo(&[(0.0, 0.0)]);
        assert!(matches!(dist(&t, 1, 9), Err(Error::Topology(_))));
    }

    #[test]
    fn rejects_duplicate_lid_and_nan() {
        let dup = vec![Tag::new(1, 0.0, 0.0, "a"), Tag::new(1, 1.0, 0.0, "b")];
        assert!(TagTopology::new(dup, Vec::new()).is_err());
        let nan = vec![Tag::new(1, f64::NAN, 0.0, "a")];
        assert!(TagTopology::new(nan, Vec::new()).is_err());
    }

    #[test]
    fn json_shape() {
        let json =
            r#"{"tags":[{"lid":7,"x":1.5,"y":2.0,"name":"lobby"}],"ssid_whitelist":["corp"]}"#;
        let t: TagTopology = serde_json::from_str(json).unwrap();
        assert_eq!(t.position(7).unwrap(), (1.5, 2.0));
        assert_eq!(serde_json::to_string(&t).unwrap(), json);
    }

    proptest! {
        #[test]
        fn dist_is_a_metric(pts in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..12)) {
            let t = topo(&pts);
            let n = pts.len() as Lid;
            for a in 1..=n {
                for b in 1..=n {
                    let ab = dist(&t, a, b).unwrap();
                    prop_assert!(ab >= 0.0);
                    prop_assert_eq!(ab, dist(&t, b, a).unwrap());
                    for c in 1..=n {
                        let ac = dist(&t, a, c).unwrap();
                        let cb = dist(&t, c, b).unwrap();
                        prop_assert!(ab <= ac + cb + 1e-9);
                    }
                }
                prop_assert_eq!(dist(&t, a, a).unwrap(), 0.0);
            }
        }
    }
}
