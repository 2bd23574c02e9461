use std::collections::HashMap;

use super::{DetectionConfig, Record, Rid};
use crate::error::{Error, Result};

/// RSS assigned to vocabulary BSSIDs missing from a scan.
pub const RSS_SENTINEL: f64 = -100.0;

/// Fixed-dimension fingerprint vectors, one row per record in ascending rid order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    vocabulary: Vec<String>,
    dim: usize,
    data: Vec<f64>,
    row_rid: Vec<Rid>,
}

impl FeatureMatrix {
    /// Builds a matrix directly from rows. Mostly useful for tests and synthetic inputs.
    pub fn from_rows(
        vocabulary: Vec<String>,
        rows: Vec<Vec<f64>>,
        row_rid: Vec<Rid>,
    ) -> Result<Self> {
        if rows.len() != row_rid.len() {
            return Err(Error::Featurization("row/rid length mismatch".into()));
        }
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Featurization("ragged rows".into()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Featurization("non-finite feature".into()));
        }
        Ok(FeatureMatrix {
            vocabulary,
            dim,
            data: rows.into_iter().flatten().collect(),
            row_rid,
        })
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_rows(&self) -> usize {
        self.row_rid.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1)).take(self.n_rows())
    }

    pub fn row_rid(&self) -> &[Rid] {
        &self.row_rid
    }

    pub fn row_of(&self, rid: Rid) -> Option<usize> {
        self.row_rid.binary_search(&rid).ok()
    }
}

fn parse_payload(rec: &Record) -> Result<Vec<f64>> {
    let text = std::str::from_utf8(&rec.payload)
        .map_err(|_| Error::Featurization(format!("record {}: payload is not UTF-8", rec.rid)))?;
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    Error::Featurization(format!("record {}: bad payload value {s:?}", rec.rid))
                })
        })
        .collect()
}

/// Turns fingerprints into fixed-length vectors: RSS for each of the
/// `vocab_size` most frequently observed BSSIDs (sentinel when absent),
/// then the magnetic magnitude, then payload values if enabled.
pub fn featurize(records: &[Record], config: &DetectionConfig) -> Result<FeatureMatrix> {
    if records.is_empty() {
        return Err(Error::Featurization("no records".into()));
    }
    let mut hits: HashMap<&str, usize> = HashMap::new();
    for r in records {
        for w in &r.fingerprint.wifi {
            *hits.entry(w.bssid.as_str()).or_default() += 1;
        }
    }
    if hits.is_empty() {
        return Err(Error::Featurization(
            "every fingerprint has an empty WiFi scan".into(),
        ));
    }
    let mut ranked: Vec<(&str, usize)> = hits.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let vocabulary: Vec<String> = ranked
        .into_iter()
        .take(config.vocab_size)
        .map(|(b, _)| b.to_string())
        .collect();
    let column: HashMap<&str, usize> = vocabulary
        .iter()
        .enumerate()
        .map(|(i, b)| (b.as_str(), i))
        .collect();

    let mut order: Vec<&Record> = records.iter().collect();
    order.sort_by_key(|r| r.rid);

    let m = vocabulary.len();
    let mut payload_dim = None;
    let mut rows = Vec::with_capacity(order.len());
    for r in &order {
        let mut row = vec![RSS_SENTINEL; m + 1];
        for w in &r.fingerprint.wifi {
            if let Some(&c) = column.get(w.bssid.as_str()) {
                row[c] = f64::from(w.rss);
            }
        }
        row[m] = r.fingerprint.magnetic;
        if config.include_payload {
            let extra = parse_payload(r)?;
            match payload_dim {
                None => payload_dim = Some(extra.len()),
                Some(d) if d != extra.len() => {
                    return Err(Error::Featurization(format!(
                        "record {}: payload has {} values, expected {d}",
                        r.rid,
                        extra.len()
                    )))
                }
                _ => {}
            }
            row.extend(extra);
        }
        rows.push(row);
    }
    let row_rid = order.iter().map(|r| r.rid).collect();
    FeatureMatrix::from_rows(vocabulary, rows, row_rid)
}
