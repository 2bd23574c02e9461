//! Per-location summaries of the feature space, for external plotting.

use serde::Serialize;

use crate::datamodel::{featurize, DetectionConfig, Lid};
use crate::error::Result;
use crate::ingest::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TagStats {
    pub lid: Lid,
    pub count: usize,
    /// Feature means; `None` when the tag has no records.
    pub mean: Option<Vec<f64>>,
    /// Population standard deviation per dimension.
    pub std: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocationStats {
    /// BSSID per RSS dimension; the magnetic magnitude (and payload values, if any) follow.
    pub vocabulary: Vec<String>,
    pub tags: Vec<TagStats>,
}

/// Sample count, mean and spread of the featurized records at every tag, in topology order.
pub fn export_location_stats(dataset: &Dataset, config: &DetectionConfig) -> Result<LocationStats> {
    let features = featurize(&dataset.records, config)?;
    let dim = features.dim();
    let mut tags = Vec::with_capacity(dataset.topology.len());
    for tag in dataset.topology.tags() {
        let rows: Vec<&[f64]> = dataset
            .records
            .iter()
            .filter(|r| r.lid == tag.lid)
            .filter_map(|r| features.row_of(r.rid))
            .map(|i| features.row(i))
            .collect();
        let n = rows.len();
        if n == 0 {
            tags.push(TagStats {
                lid: tag.lid,
                count: 0,
                mean: None,
                std: None,
            });
            continue;
        }
        let mut mean = vec![0.0; dim];
        for row in &rows {
            for (m, v) in mean.iter_mut().zip(*row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; dim];
        for row in &rows {
            for ((s, v), m) in var.iter_mut().zip(*row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.iter().map(|s| (s / n as f64).sqrt()).collect();
        tags.push(TagStats {
            lid: tag.lid,
            count: n,
            mean: Some(mean),
            std: Some(std),
        });
    }
    Ok(LocationStats {
        vocabulary: features.vocabulary().to_vec(),
        tags,
    })
}
