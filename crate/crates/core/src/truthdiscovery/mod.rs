//! EM truth discovery over fingerprints.
//!
//! Each record carries an observed location `z_i`, an observed user `u_i`, and a
//! hidden validity bit `t_i`. Truthful fingerprints come from a mixture with one
//! Gaussian per location; falsified ones from a mixture with one Gaussian per
//! user (an attacker is assumed to fake everything from one spot). User `u`
//! reports truthfully with probability `beta_u`. EM alternates posteriors
//! `Q_i(t_i = 1)` with closed-form parameter updates, and `classify` binarizes
//! the final posteriors.

mod em;
mod gaussian;

use std::collections::{BTreeMap, HashMap};

use serde_json::json;

pub use em::{e_step, fit, init_model, log_likelihood, lower_bound, m_step, EStep};
pub use gaussian::{weighted_fit, Covariance, Gaussian, FULL_RIDGE, MIN_MASS};

use crate::coarse::CoarseFlags;
use crate::datamodel::{DetectionConfig, FeatureMatrix, Lid, Rid, Uid};
use crate::error::{Error, Result};
use crate::ingest::Dataset;

/// Maps feature rows onto dense location and user indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    /// Location ids in topology order; position = dense location index.
    pub lids: Vec<Lid>,
    /// User ids ascending; position = dense user index.
    pub uids: Vec<Uid>,
    /// rid of each feature row (ascending).
    pub rids: Vec<Rid>,
    pub loc_of_row: Vec<usize>,
    pub user_of_row: Vec<usize>,
    pub rows_by_loc: Vec<Vec<usize>>,
    pub rows_by_user: Vec<Vec<usize>>,
    pub coarse_flagged: Vec<bool>,
}

impl Layout {
    pub fn new(dataset: &Dataset, features: &FeatureMatrix, flags: &CoarseFlags) -> Result<Self> {
        if features.n_rows() != dataset.len() {
            return Err(Error::Validation(format!(
                "feature matrix has {} rows but dataset has {} records",
                features.n_rows(),
                dataset.len()
            )));
        }
        let lids: Vec<Lid> = dataset.topology.tags().iter().map(|t| t.lid).collect();
        let uids = dataset.users();
        let user_index: HashMap<Uid, usize> =
            uids.iter().enumerate().map(|(i, &u)| (u, i)).collect();
        let by_rid: HashMap<Rid, (Lid, Uid)> = dataset
            .records
            .iter()
            .map(|r| (r.rid, (r.lid, r.uid)))
            .collect();

        let n = features.n_rows();
        let mut loc_of_row = Vec::with_capacity(n);
        let mut user_of_row = Vec::with_capacity(n);
        let mut rows_by_loc = vec![Vec::new(); lids.len()];
        let mut rows_by_user = vec![Vec::new(); uids.len()];
        for (row, rid) in features.row_rid().iter().enumerate() {
            let &(lid, uid) = by_rid.get(rid).ok_or_else(|| {
                Error::Validation(format!("feature row rid {rid} not in dataset"))
            })?;
            let k = dataset
                .topology
                .index_of(lid)
                .ok_or_else(|| Error::Topology(format!("unknown lid {lid}")))?;
            let u = user_index[&uid];
            loc_of_row.push(k);
            user_of_row.push(u);
            rows_by_loc[k].push(row);
            rows_by_user[u].push(row);
        }
        let coarse_flagged = features
            .row_rid()
            .iter()
            .map(|r| flags.contains(*r))
            .collect();
        Ok(Layout {
            lids,
            uids,
            rids: features.row_rid().to_vec(),
            loc_of_row,
            user_of_row,
            rows_by_loc,
            rows_by_user,
            coarse_flagged,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rids.len()
    }

    pub fn n_locs(&self) -> usize {
        self.lids.len()
    }

    pub fn n_users(&self) -> usize {
        self.uids.len()
    }
}

/// Parameters and posteriors of the dual-mixture model.
#[derive(Debug, Clone)]
pub struct TruthModel {
    /// Truthful mixing weights, one per location.
    pub alpha_t: Vec<f64>,
    pub theta_t: Vec<Gaussian>,
    /// Falsified mixing weights, one per user.
    pub alpha_f: Vec<f64>,
    pub theta_f: Vec<Gaussian>,
    /// Clamped user reliabilities.
    pub beta: Vec<f64>,
    /// Per-user mean posterior before clamping, as computed by the last update.
    pub beta_raw: Vec<f64>,
    /// Q_i(t_i = 1) per feature row.
    pub q: Vec<f64>,
    pub ll_trace: Vec<f64>,
    pub iters: usize,
    /// Rows whose likelihood underflowed under both models in the last E-step.
    pub prior_fallbacks: usize,
    pub layout: Layout,
    pub config: DetectionConfig,
}

impl TruthModel {
    pub fn beta_by_uid(&self) -> BTreeMap<Uid, f64> {
        self.layout
            .uids
            .iter()
            .copied()
            .zip(self.beta.iter().copied())
            .collect()
    }

    pub fn q_by_rid(&self) -> BTreeMap<Rid, f64> {
        self.layout
            .rids
            .iter()
            .copied()
            .zip(self.q.iter().copied())
            .collect()
    }

    /// `{"beta":{uid:..},"q":{rid:..},"labels":{rid:0|1},"ll_trace":[..],"iters":n}`
    pub fn summary_json(&self, labels: &ValidityLabels) -> serde_json::Value {
        let beta: BTreeMap<String, f64> = self
            .beta_by_uid()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let q: BTreeMap<String, f64> = self
            .q_by_rid()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        json!({
            "beta": beta,
            "q": q,
            "labels": labels.to_json(),
            "ll_trace": self.ll_trace,
            "iters": self.iters,
        })
    }
}

/// Binary validity per record: `true` means the claimed tag is truthful.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidityLabels {
    pub t: BTreeMap<Rid, bool>,
}

impl ValidityLabels {
    /// Everything truthful except coarse-flagged records.
    pub fn from_coarse(dataset: &Dataset, flags: &CoarseFlags) -> Self {
        ValidityLabels {
            t: dataset
                .records
                .iter()
                .map(|r| (r.rid, !flags.contains(r.rid)))
                .collect(),
        }
    }

    pub fn falsified_count(&self) -> usize {
        self.t.values().filter(|v| !**v).count()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let m: serde_json::Map<String, serde_json::Value> = self
            .t
            .iter()
            .map(|(k, v)| (k.to_string(), json!(u8::from(*v))))
            .collect();
        serde_json::Value::Object(m)
    }

    /// Reads the `"labels"` object of a detector output file.
    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let obj = value
            .get("labels")
            .and_then(|v| v.as_object())
            .ok_or_else(|| Error::Validation("missing \"labels\" object".into()))?;
        let mut t = BTreeMap::new();
        for (k, v) in obj {
            let rid: Rid = k
                .parse()
                .map_err(|_| Error::Validation(format!("label key {k:?} is not a rid")))?;
            let bit = match v.as_u64() {
                Some(0) => false,
                Some(1) => true,
                _ => {
                    return Err(Error::Validation(format!(
                        "label for rid {rid} must be 0 or 1"
                    )))
                }
            };
            t.insert(rid, bit);
        }
        Ok(ValidityLabels { t })
    }
}

/// `t_i = 1` iff `Q_i(1) >= tau` and the record was not coarse-flagged.
pub fn classify(model: &TruthModel, config: &DetectionConfig) -> ValidityLabels {
    let t = model
        .layout
        .rids
        .iter()
        .zip(&model.q)
        .zip(&model.layout.coarse_flagged)
        .map(|((&rid, &q), &flagged)| (rid, !flagged && q >= config.tau))
        .collect();
    ValidityLabels { t }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coarse::FlagReason;
    use crate::datamodel::{Fingerprint, Record, Tag, TagTopology};

    fn fitted(flagged: &[Rid]) -> (TruthModel, DetectionConfig) {
        let topo =
            TagTopology::new(vec![Tag::new(1, 0.0, 0.0, "a")], ["corp".to_string()]).unwrap();
        let records = (1..=3)
            .map(|rid| Record {
                rid,
                uid: rid,
                lid: 1,
                ts_ms: 0,
                fingerprint: Fingerprint::default(),
                payload: Vec::new(),
            })
            .collect();
        let d = Dataset::new(records, topo, "t").unwrap();
        let f = FeatureMatrix::from_rows(vec![], vec![vec![0.0]; 3], vec![1, 2, 3]).unwrap();
        let flags = CoarseFlags {
            flagged: flagged.iter().copied().collect(),
            reason: flagged
                .iter()
                .map(|&r| (r, FlagReason::SpeedAnomaly))
                .collect(),
        };
        let config = DetectionConfig::default();
        (em::init_model(&d, &f, &flags, &config).unwrap(), config)
    }

    #[test]
    fn threshold_is_inclusive() {
        let (mut m, config) = fitted(&[]);
        m.q = vec![config.tau, config.tau - 1e-12, 1.0];
        let labels = classify(&m, &config);
        assert_eq!(labels.t, BTreeMap::from([(1, true), (2, false), (3, true)]));
    }

    #[test]
    fn coarse_flag_overrides_posterior() {
        let (mut m, config) = fitted(&[2]);
        m.q = vec![0.9, 0.9, 0.9];
        let labels = classify(&m, &config);
        assert!(!labels.t[&2]);
        assert_eq!(labels.falsified_count(), 1);
    }

    #[test]
    fn labels_json_round_trip() {
        let (m, config) = fitted(&[3]);
        let labels = classify(&m, &config);
        let v = m.summary_json(&labels);
        assert_eq!(v["labels"]["3"], 0);
        assert_eq!(v["iters"], 0);
        assert_eq!(ValidityLabels::from_json(&v).unwrap(), labels);
        assert!(ValidityLabels::from_json(&json!({"labels": {"1": 2}})).is_err());
        assert!(ValidityLabels::from_json(&json!({})).is_err());
    }
}
