//! Location-fraud detection for indoor mobile crowdsensing.
//!
//! Crowdsensed uploads carry a claimed reference-tag location and a WiFi/magnetic
//! fingerprint. This crate labels each upload truthful or falsified (coarse
//! SSID/speed filters followed by EM truth discovery over two Gaussian mixtures),
//! estimates per-user reliability, ranks tags suspected of being moved or removed,
//! and ships a seeded emulator that produces ground-truthed datasets.
//!
//! Typical flow:
//!
//! ```no_run
//! use tagsentry::{coarse, datamodel, ingest, truthdiscovery, DetectionConfig};
//!
//! let dataset = ingest::load_dataset("records.jsonl", "topology.json")?;
//! let config = DetectionConfig::default();
//! let flags = coarse::run_coarse(&dataset, &config)?;
//! let features = datamodel::featurize(&dataset.records, &config)?;
//! let model = truthdiscovery::fit(&dataset, &features, &flags, &config)?;
//! let labels = truthdiscovery::classify(&model, &config);
//! # Ok::<(), tagsentry::Error>(())
//! ```

pub mod coarse;
pub mod datamodel;
pub mod emulator;
mod error;
pub mod ingest;
pub mod metrics;
pub mod misplacement;
pub mod par;
pub mod pipeline;
pub mod removal;
pub mod truthdiscovery;

pub use datamodel::{
    dist, featurize, CovarianceMode, DetectionConfig, FeatureMatrix, Fingerprint, Record,
    RemovalSource, Tag, TagTopology, WifiObservation,
};
pub use error::{Error, Result};
pub use ingest::{Dataset, GroundTruth};
pub use misplacement::{RankDirection, SuspectRanking};
