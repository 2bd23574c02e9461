//! Seeded generator of ground-truthed crowdsensing datasets with tag forgery,
//! misplacement, and removal attacks.
//!
//! Honest users come in two groups. "Early" users finish collecting before any
//! tag is moved or removed; "late" users keep going afterwards and therefore
//! produce the post-event records that the misplacement and removal detectors
//! look for. Attackers stand at one off-tag spot and upload fingerprints from
//! there under cycling forged tag ids.

mod stats;
mod walkers;
mod world;

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use stats::{export_location_stats, LocationStats, TagStats};
pub use walkers::{TagEvents, Upload};
pub use world::{AccessPoint, Point, World, SENSITIVITY_DBM, WHITELIST};

use crate::datamodel::{Lid, Record, Uid};
use crate::error::{Error, Result};
use crate::ingest::{Dataset, GroundTruth};

/// Collection start, milliseconds since the epoch.
pub const EPOCH_MS: i64 = 1_500_000_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmulatorConfig {
    pub n_tags: usize,
    pub n_users: usize,
    pub n_attackers: usize,
    pub n_misplaced: usize,
    pub n_removed: usize,
    /// Number of records to generate.
    pub records_target: usize,
    /// Grid pitch, meters.
    pub layout: f64,
    /// Grid columns; defaults to `ceil(sqrt(2 * n_tags))`.
    pub grid_cols: Option<usize>,
    pub ap_count: usize,
    /// Per-AP RSS noise standard deviation, dB.
    pub rss_sigma: f64,
    /// Magnetic noise standard deviation, microtesla.
    pub mag_sigma: f64,
    /// Honest walking speed, m/s.
    pub walk_speed: f64,
    /// Mean pause at a tag between uploads, seconds.
    pub dwell: f64,
    pub seed: u64,
    /// Fraction of records uploaded by attackers.
    pub attacker_share: f64,
    /// Honest users that keep collecting after tags move or disappear.
    /// Defaults to a third of the honest users (at least one).
    pub late_users: Option<usize>,
    /// Upload quota of a late user relative to an early one.
    pub late_quota_factor: f64,
    /// Fraction of forged scans that see only the attacker's own hotspots.
    pub forged_ssid_fraction: f64,
    /// Attacker inter-upload time as a fraction of honest travel time, drawn uniformly.
    pub attacker_pace_min: f64,
    pub attacker_pace_max: f64,
    /// Fixed attack targets; drawn at random when absent.
    pub misplaced_lids: Option<Vec<Lid>>,
    pub removed_lids: Option<Vec<Lid>>,
}

impl Default for EmulatorConfig {
    fn default() -> Self {
        EmulatorConfig {
            n_tags: 50,
            n_users: 20,
            n_attackers: 5,
            n_misplaced: 5,
            n_removed: 5,
            records_target: 17487,
            layout: 5.0,
            grid_cols: None,
            ap_count: 20,
            rss_sigma: 3.0,
            mag_sigma: 1.0,
            walk_speed: 1.2,
            dwell: 60.0,
            seed: 7,
            attacker_share: 0.13,
            late_users: None,
            late_quota_factor: 2.5,
            forged_ssid_fraction: 0.04,
            attacker_pace_min: 0.05,
            attacker_pace_max: 0.9,
            misplaced_lids: None,
            removed_lids: None,
        }
    }
}

impl EmulatorConfig {
    pub fn grid_shape(&self) -> (usize, usize) {
        let cols = self
            .grid_cols
            .unwrap_or_else(|| ((2 * self.n_tags) as f64).sqrt().ceil() as usize)
            .clamp(1, self.n_tags.max(1));
        (cols, self.n_tags.div_ceil(cols))
    }

    pub fn n_honest(&self) -> usize {
        self.n_users - self.n_attackers
    }

    pub fn n_late(&self) -> usize {
        let honest = self.n_honest();
        self.late_users
            .unwrap_or_else(|| honest.div_ceil(3))
            .min(honest)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_tags < 2 || self.n_users == 0 {
            return fail("need at least two tags and one user".into());
        }
        if self.n_attackers > self.n_users {
            return fail(format!(
                "n_attackers {} exceeds n_users {}",
                self.n_attackers, self.n_users
            ));
        }
        if self.n_misplaced + self.n_removed > self.n_tags {
            return fail("n_misplaced + n_removed exceeds n_tags".into());
        }
        for (name, v) in [
            ("layout", self.layout),
            ("rss_sigma", self.rss_sigma),
            ("mag_sigma", self.mag_sigma),
            ("walk_speed", self.walk_speed),
            ("dwell", self.dwell),
            ("late_quota_factor", self.late_quota_factor),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.ap_count == 0 {
            return fail("ap_count must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.attacker_share) {
            return fail("attacker_share must lie in [0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.forged_ssid_fraction) {
            return fail("forged_ssid_fraction must lie in [0, 1]".into());
        }
        if !(self.attacker_pace_min > 0.0 && self.attacker_pace_min <= self.attacker_pace_max) {
            return fail("attacker pace range must satisfy 0 < min <= max".into());
        }
        if self.n_honest() == 0 && self.n_misplaced + self.n_removed > 0 {
            return fail("misplacement and removal need at least one honest user".into());
        }
        let (early, late) = self.quotas()?;
        let smallest = early
            .iter()
            .chain(&late)
            .copied()
            .min()
            .unwrap_or(usize::MAX);
        if smallest < self.n_tags {
            return fail(format!(
                "records_target {} is too small: each honest user needs at least {} uploads to cover all tags",
                self.records_target, self.n_tags
            ));
        }
        for (name, lids) in [
            ("misplaced_lids", &self.misplaced_lids),
            ("removed_lids", &self.removed_lids),
        ] {
            if let Some(l) = lids {
                if l.iter().any(|&x| x == 0 || x as usize > self.n_tags) {
                    return fail(format!("{name} must be within 1..={}", self.n_tags));
                }
            }
        }
        Ok(())
    }

    fn attacker_quotas(&self) -> Vec<usize> {
        if self.n_attackers == 0 {
            return Vec::new();
        }
        let total = (self.attacker_share * self.records_target as f64).round() as usize;
        split(total, &vec![1.0; self.n_attackers])
    }

    /// Upload quotas for (early, late) honest users.
    fn quotas(&self) -> Result<(Vec<usize>, Vec<usize>)> {
        let attack: usize = self.attacker_quotas().iter().sum();
        let honest_total = self.records_target.saturating_sub(attack);
        let late = self.n_late();
        let early = self.n_honest() - late;
        let mut weights = vec![1.0; early];
        weights.extend(std::iter::repeat_n(self.late_quota_factor, late));
        if weights.is_empty() {
            return Ok((Vec::new(), Vec::new()));
        }
        let q = split(honest_total, &weights);
        Ok((q[..early].to_vec(), q[early..].to_vec()))
    }
}

/// Splits `total` proportionally to `weights`, handing out the remainder from the front.
fn split(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let mut out: Vec<usize> = weights
        .iter()
        .map(|w| (total as f64 * w / sum).floor() as usize)
        .collect();
    let mut left = total - out.iter().sum::<usize>();
    let (len, mut i) = (out.len(), 0);
    while left > 0 {
        out[i % len] += 1;
        left -= 1;
        i += 1;
    }
    out
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const STREAM_WORLD: u64 = 1;
const STREAM_PLAN: u64 = 2;
const STREAM_EVENTS: u64 = 3;
const STREAM_USER_BASE: u64 = 1_000;

/// Everything the generator knows, including what the dataset hides.
#[derive(Debug, Clone)]
pub struct Emulation {
    pub dataset: Dataset,
    pub truth: GroundTruth,
    pub world: World,
    pub events: TagEvents,
    /// Honest users that finished before any tag event.
    pub early_users: BTreeSet<Uid>,
    pub late_users: BTreeSet<Uid>,
    /// Where each attacker stood.
    pub attacker_spots: Vec<(Uid, Point)>,
}

fn pick_targets(config: &EmulatorConfig, rng: &mut ChaCha8Rng) -> Result<(Vec<Lid>, Vec<Lid>)> {
    let all: Vec<Lid> = (1..=config.n_tags as Lid).collect();
    let misplaced = match &config.misplaced_lids {
        Some(l) => l.clone(),
        None => Vec::new(),
    };
    let removed = match &config.removed_lids {
        Some(l) => l.clone(),
        None => Vec::new(),
    };
    let mut pool: Vec<Lid> = all
        .iter()
        .copied()
        .filter(|l| !misplaced.contains(l) && !removed.contains(l))
        .collect();
    pool.shuffle(rng);
    let mut misplaced = misplaced;
    let mut removed = removed;
    while misplaced.len() < config.n_misplaced {
        misplaced.push(
            pool.pop()
                .ok_or_else(|| Error::Config("not enough tags to misplace".into()))?,
        );
    }
    while removed.len() < config.n_removed {
        removed.push(
            pool.pop()
                .ok_or_else(|| Error::Config("not enough tags to remove".into()))?,
        );
    }
    if misplaced.iter().any(|l| removed.contains(l)) {
        return Err(Error::Config(
            "a tag cannot be both misplaced and removed".into(),
        ));
    }
    misplaced.sort_unstable();
    removed.sort_unstable();
    Ok((misplaced, removed))
}

/// Each moved tag goes to a distinct cell center at least three pitches from home.
fn pick_destinations(world: &World, misplaced: &[Lid], rng: &mut ChaCha8Rng) -> Result<Vec<Point>> {
    let mut free = world.cell_centers();
    let mut out = Vec::with_capacity(misplaced.len());
    for &lid in misplaced {
        let home = world.tag_point(lid);
        let far: Vec<usize> = (0..free.len())
            .filter(|&i| free[i].dist(home) >= 3.0 * world.pitch - 1e-9)
            .collect();
        let &i = far.choose(rng).ok_or_else(|| {
            Error::Config(format!(
                "no destination at least 3 pitches away from tag {lid}"
            ))
        })?;
        out.push(free.swap_remove(i));
    }
    Ok(out)
}

impl Emulation {
    pub fn run(config: &EmulatorConfig) -> Result<Self> {
        config.validate()?;
        let world = World::build(config, &mut stream(config.seed, STREAM_WORLD))?;
        let mut plan_rng = stream(config.seed, STREAM_PLAN);
        let (misplaced, removed) = pick_targets(config, &mut plan_rng)?;
        let destinations = pick_destinations(&world, &misplaced, &mut plan_rng)?;

        // uid layout: late honest users, then attackers, then early honest users
        let n_late = config.n_late();
        let late_uids: Vec<Uid> = (1..=n_late as Uid).collect();
        let attacker_uids: Vec<Uid> = (0..config.n_attackers as Uid)
            .map(|i| n_late as Uid + 1 + i)
            .collect();
        let early_uids: Vec<Uid> =
            ((n_late + config.n_attackers) as Uid + 1..=config.n_users as Uid).collect();
        let (early_q, late_q) = config.quotas()?;

        let mut uploads: Vec<Upload> = Vec::with_capacity(config.records_target);
        let mut events = TagEvents::default();
        let mut early_end: f64 = 0.0;
        for (&uid, &quota) in early_uids.iter().zip(&early_q) {
            let mut rng = stream(config.seed, STREAM_USER_BASE + uid);
            let start = rng.random_range(0.0..=600.0);
            let walk = walkers::honest_walk(&world, &events, uid, quota, start, config, &mut rng);
            early_end = walk.iter().map(|u| u.t).fold(early_end, f64::max);
            uploads.extend(walk);
        }

        let step = config.dwell + world.pitch / config.walk_speed;
        let late_span = late_q.iter().copied().max().unwrap_or(0) as f64 * step;
        let window_start = if early_uids.is_empty() {
            0.3 * late_span
        } else {
            early_end + 1.0
        };
        let window_end = window_start + 0.25 * (late_span - window_start).max(step);
        let mut ev_rng = stream(config.seed, STREAM_EVENTS);
        for (&lid, &dest) in misplaced.iter().zip(&destinations) {
            events
                .moves
                .insert(lid, (ev_rng.random_range(window_start..=window_end), dest));
        }
        for &lid in &removed {
            events
                .removals
                .insert(lid, ev_rng.random_range(window_start..=window_end));
        }

        for (&uid, &quota) in late_uids.iter().zip(&late_q) {
            let mut rng = stream(config.seed, STREAM_USER_BASE + uid);
            let start = rng.random_range(0.0..=600.0);
            uploads.extend(walkers::honest_walk(
                &world, &events, uid, quota, start, config, &mut rng,
            ));
        }

        let horizon = uploads
            .iter()
            .map(|u| u.t)
            .fold(late_span.max(early_end), f64::max);
        let mut avoid: Vec<Point> = world
            .topology
            .tags()
            .iter()
            .map(|t| world.tag_point(t.lid))
            .collect();
        avoid.extend(destinations.iter().copied());
        let mut attacker_spots = Vec::new();
        for (&uid, &quota) in attacker_uids.iter().zip(&config.attacker_quotas()) {
            let mut rng = stream(config.seed, STREAM_USER_BASE + uid);
            let spot = walkers::off_tag_point(&world, &avoid, 0.3 * world.pitch, &mut rng);
            attacker_spots.push((uid, spot));
            uploads.extend(walkers::attacker_sessions(
                &world, uid, quota, spot, horizon, config, &mut rng,
            ));
        }

        uploads.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.uid.cmp(&b.uid)));
        let mut truth = GroundTruth {
            attackers: attacker_uids.iter().copied().collect(),
            misplaced: misplaced.iter().copied().collect(),
            removed: removed.iter().copied().collect(),
            ..Default::default()
        };
        let records: Vec<Record> = uploads
            .into_iter()
            .enumerate()
            .map(|(i, u)| {
                let rid = i as u64 + 1;
                truth.validity.insert(rid, u.truthful);
                Record {
                    rid,
                    uid: u.uid,
                    lid: u.lid,
                    ts_ms: EPOCH_MS + (u.t * 1000.0).round() as i64,
                    fingerprint: u.fingerprint,
                    payload: u.payload,
                }
            })
            .collect();
        let dataset = Dataset::new(
            records,
            world.topology.clone(),
            format!("<emulated seed={}>", config.seed),
        )?;

        Ok(Emulation {
            dataset,
            truth,
            world,
            events,
            early_users: early_uids.into_iter().collect(),
            late_users: late_uids.into_iter().collect(),
            attacker_spots,
        })
    }
}

/// Generates a dataset and its ground truth. Identical configs give identical output.
pub fn generate(config: &EmulatorConfig) -> Result<(Dataset, GroundTruth)> {
    let e = Emulation::run(config)?;
    Ok((e.dataset, e.truth))
}
