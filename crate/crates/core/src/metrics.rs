//! Scoring detector output against ground truth. The positive class is
//! "falsified" throughout.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::datamodel::Lid;
use crate::error::{Error, Result};
use crate::ingest::GroundTruth;
use crate::misplacement::SuspectRanking;
use crate::truthdiscovery::ValidityLabels;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn summary(&self) -> DetectionMetrics {
        DetectionMetrics {
            accuracy: self.accuracy(),
            precision: self.precision(),
            recall: self.recall(),
        }
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

/// Confusion counts over every rid in `truth.validity`.
pub fn confusion_counts(labels: &ValidityLabels, truth: &GroundTruth) -> Result<Confusion> {
    let mut c = Confusion {
        tp: 0,
        fp: 0,
        fn_: 0,
        tn: 0,
    };
    for (rid, &truthful) in &truth.validity {
        let predicted_truthful = *labels
            .t
            .get(rid)
            .ok_or_else(|| Error::Validation(format!("no label for rid {rid}")))?;
        match (predicted_truthful, truthful) {
            (false, false) => c.tp += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
            (true, true) => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn confusion(labels: &ValidityLabels, truth: &GroundTruth) -> Result<DetectionMetrics> {
    confusion_counts(labels, truth).map(|c| c.summary())
}

/// Fraction of `truth_set` found in the first `k` entries; `None` for an empty truth set.
/// `k` beyond the ranking length uses the whole ranking.
pub fn topk_recall(ranking: &SuspectRanking, truth_set: &BTreeSet<Lid>, k: usize) -> Option<f64> {
    if truth_set.is_empty() {
        return None;
    }
    let hits = ranking
        .head(k)
        .iter()
        .filter(|l| truth_set.contains(l))
        .count();
    Some(hits as f64 / truth_set.len() as f64)
}

/// Report file body: `{"accuracy","precision","recall","topk":{"misplaced@10","removed@10"}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub topk: TopK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopK {
    #[serde(rename = "misplaced@10")]
    pub misplaced_at_10: Option<f64>,
    #[serde(rename = "removed@10")]
    pub removed_at_10: Option<f64>,
}

pub const REPORT_K: usize = 10;

pub fn build_report(
    labels: &ValidityLabels,
    truth: &GroundTruth,
    misplaced: Option<&SuspectRanking>,
    removed: Option<&SuspectRanking>,
) -> Result<Report> {
    let m = confusion(labels, truth)?;
    Ok(Report {
        accuracy: m.accuracy,
        precision: m.precision,
        recall: m.recall,
        topk: TopK {
            misplaced_at_10: misplaced.and_then(|r| topk_recall(r, &truth.misplaced, REPORT_K)),
            removed_at_10: removed.and_then(|r| topk_recall(r, &truth.removed, REPORT_K)),
        },
    })
}
