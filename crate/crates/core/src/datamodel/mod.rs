//! Core domain types shared by every detector: records, fingerprints, the tag
//! topology, detection settings, and the fingerprint feature matrix.

mod config;
mod features;
mod topology;

pub use config::{CovarianceMode, DetectionConfig, RemovalSource};
pub use features::{featurize, FeatureMatrix, RSS_SENTINEL};
pub use topology::{dist, Tag, TagTopology};

/// Record identifier, unique within a dataset.
pub type Rid = u64;
/// User identifier.
pub type Uid = u64;
/// Location-tag identifier.
pub type Lid = u64;

pub const RSS_MIN: i32 = -100;
pub const RSS_MAX: i32 = 0;

/// One access point seen in a WiFi scan.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct WifiObservation {
    pub bssid: String,
    pub ssid: String,
    /// Received signal strength, dBm.
    pub rss: i32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Fingerprint {
    pub wifi: Vec<WifiObservation>,
    /// Magnetic field magnitude, microtesla.
    pub magnetic: f64,
}

/// A single crowdsensed upload.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub rid: Rid,
    pub uid: Uid,
    /// Claimed tag.
    pub lid: Lid,
    /// Upload time in milliseconds since the epoch. See [`Record::ts`].
    pub ts_ms: i64,
    pub fingerprint: Fingerprint,
    /// Opaque sensed data; ignored by detection unless payload features are enabled.
    pub payload: Vec<u8>,
}

impl Record {
    /// Upload time in seconds since the epoch.
    pub fn ts(&self) -> f64 {
        self.ts_ms as f64 / 1000.0
    }
}
