//! End-to-end runs: emulate, detect, rank, and evaluate, writing every artifact
//! as JSON/JSONL into one directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coarse::{run_coarse, CoarseFlags};
use crate::datamodel::{featurize, DetectionConfig, FeatureMatrix};
use crate::emulator::{export_location_stats, generate, EmulatorConfig};
use crate::error::{Error, Result};
use crate::ingest::{load_dataset, load_ground_truth, save_dataset, write_json, Dataset};
use crate::metrics::{build_report, confusion, Report};
use crate::misplacement::{rank_misplaced, SuspectRanking};
use crate::removal::rank_removed;
use crate::truthdiscovery::{classify, fit, TruthModel, ValidityLabels};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const TOPOLOGY_FILE: &str = "topology.json";
pub const TRUTH_FILE: &str = "truth.json";
pub const COARSE_FILE: &str = "coarse.json";
pub const LABELS_FILE: &str = "labels.json";
pub const MISPLACED_FILE: &str = "misplaced.json";
pub const REMOVED_FILE: &str = "removed.json";
pub const REPORT_FILE: &str = "report.json";
pub const COARSE_REPORT_FILE: &str = "coarse_report.json";
pub const STATS_FILE: &str = "location_stats.json";

/// Emulator and detector settings in one flat JSON object.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub emulator: EmulatorConfig,
    #[serde(flatten)]
    pub detection: DetectionConfig,
}

impl RunConfig {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Output of the detection stages on one dataset.
#[derive(Debug, Clone)]
pub struct Detection {
    pub flags: CoarseFlags,
    pub features: FeatureMatrix,
    pub model: TruthModel,
    pub labels: ValidityLabels,
}

/// Coarse filters, then EM truth discovery, then thresholding.
pub fn detect(dataset: &Dataset, config: &DetectionConfig) -> Result<Detection> {
    config.validate()?;
    let flags = run_coarse(dataset, config)?;
    let features = featurize(&dataset.records, config)?;
    let model = fit(dataset, &features, &flags, config)?;
    let labels = classify(&model, config);
    Ok(Detection {
        flags,
        features,
        model,
        labels,
    })
}

/// The labels file body: model summary plus the coarse flags.
pub fn labels_json(detection: &Detection) -> serde_json::Value {
    let mut v = detection.model.summary_json(&detection.labels);
    v["flagged"] = detection.flags.to_json()["flagged"].clone();
    v
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub detection: Detection,
    pub misplaced: SuspectRanking,
    pub removed: SuspectRanking,
    pub report: Report,
}

/// Runs every stage and writes all artifacts to `out`. The dataset is reloaded from
/// disk before detection so the run exercises the same path as external data.
pub fn run(config: &RunConfig, out: impl AsRef<Path>) -> Result<RunOutput> {
    let dir = out.as_ref().to_path_buf();
    config.detection.validate()?;
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let (dataset, truth) = generate(&config.emulator)?;
    log::info!(
        "emulated {} records from {} users",
        dataset.len(),
        dataset.users().len()
    );
    save_dataset(&dataset, dir.join(RECORDS_FILE), dir.join(TOPOLOGY_FILE))?;
    write_json(dir.join(TRUTH_FILE), &truth)?;

    let dataset = load_dataset(dir.join(RECORDS_FILE), dir.join(TOPOLOGY_FILE))?;
    let truth = load_ground_truth(dir.join(TRUTH_FILE), &dataset)?;
    write_json(
        dir.join(STATS_FILE),
        &export_location_stats(&dataset, &config.detection)?,
    )?;

    let detection = detect(&dataset, &config.detection)?;
    log::info!(
        "coarse flagged {}, EM converged in {} iterations",
        detection.flags.len(),
        detection.model.iters
    );
    write_json(dir.join(COARSE_FILE), &detection.flags.to_json())?;
    let coarse_labels = ValidityLabels::from_coarse(&dataset, &detection.flags);
    write_json(
        dir.join(COARSE_REPORT_FILE),
        &confusion(&coarse_labels, &truth)?,
    )?;
    write_json(dir.join(LABELS_FILE), &labels_json(&detection))?;

    let misplaced = rank_misplaced(&dataset, &config.detection)?;
    let removed = rank_removed(&dataset, &config.detection)?;
    write_json(dir.join(MISPLACED_FILE), &misplaced.to_json(None))?;
    write_json(dir.join(REMOVED_FILE), &removed.to_json(None))?;

    let report = build_report(&detection.labels, &truth, Some(&misplaced), Some(&removed))?;
    write_json(dir.join(REPORT_FILE), &report)?;
    Ok(RunOutput {
        dir,
        detection,
        misplaced,
        removed,
        report,
    })
}
