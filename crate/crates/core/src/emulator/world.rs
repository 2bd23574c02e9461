//! Physical side of the emulation: tag grid, access points with log-distance
//! path loss, and a smooth magnetic-magnitude field.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::EmulatorConfig;
use crate::datamodel::{Fingerprint, Lid, Tag, TagTopology, WifiObservation};
use crate::error::Result;

pub const WHITELIST: [&str; 2] = ["corp-net", "corp-guest"];

/// Scans only report access points at or above this level, dBm.
pub const SENSITIVITY_DBM: f64 = -95.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(self, o: Point) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }
}

#[derive(Debug, Clone)]
pub struct AccessPoint {
    pub bssid: String,
    pub ssid: String,
    pub pos: Point,
    /// Mean RSS at 1 m, dBm.
    pub ref_power: f64,
    pub exponent: f64,
}

impl AccessPoint {
    pub fn mean_rss(&self, p: Point) -> f64 {
        self.ref_power - 10.0 * self.exponent * self.pos.dist(p).max(1.0).log10()
    }
}

#[derive(Debug, Clone, Copy)]
struct Wave {
    amplitude: f64,
    kx: f64,
    ky: f64,
    phase: f64,
}

#[derive(Debug, Clone)]
pub struct World {
    pub topology: TagTopology,
    pub cols: usize,
    pub rows: usize,
    pub pitch: f64,
    pub aps: Vec<AccessPoint>,
    mag_base: f64,
    waves: Vec<Wave>,
    rss_noise: Normal<f64>,
    mag_noise: Normal<f64>,
}

impl World {
    pub fn build(config: &EmulatorConfig, rng: &mut impl Rng) -> Result<Self> {
        let (cols, rows) = config.grid_shape();
        let pitch = config.layout;
        let tags: Vec<Tag> = (0..config.n_tags)
            .map(|i| {
                let lid = i as Lid + 1;
                Tag::new(
                    lid,
                    (i % cols) as f64 * pitch,
                    (i / cols) as f64 * pitch,
                    format!("tag-{lid}"),
                )
            })
            .collect();
        let topology = TagTopology::new(tags, WHITELIST.iter().map(|s| s.to_string()))?;

        let (w, h) = ((cols - 1) as f64 * pitch, (rows - 1) as f64 * pitch);
        let aps = (0..config.ap_count)
            .map(|i| AccessPoint {
                bssid: format!("02:1a:00:00:{:02x}:{:02x}", i / 256, i % 256),
                ssid: WHITELIST[i % WHITELIST.len()].to_string(),
                pos: Point::new(
                    rng.random_range(-pitch..=w + pitch),
                    rng.random_range(-pitch..=h + pitch),
                ),
                ref_power: rng.random_range(-38.0..=-32.0),
                exponent: rng.random_range(2.6..=3.2),
            })
            .collect();
        let waves = (0..6)
            .map(|_| {
                let wavelength: f64 = rng.random_range(10.0..=40.0);
                let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let k = std::f64::consts::TAU / wavelength;
                Wave {
                    amplitude: rng.random_range(1.5..=4.0),
                    kx: k * angle.cos(),
                    ky: k * angle.sin(),
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                }
            })
            .collect();
        Ok(World {
            topology,
            cols,
            rows,
            pitch,
            aps,
            mag_base: 45.0,
            waves,
            rss_noise: Normal::new(0.0, config.rss_sigma).expect("validated sigma"),
            mag_noise: Normal::new(0.0, config.mag_sigma).expect("validated sigma"),
        })
    }

    pub fn tag_point(&self, lid: Lid) -> Point {
        let (x, y) = self.topology.position(lid).expect("emulator lids exist");
        Point::new(x, y)
    }

    pub fn width(&self) -> f64 {
        (self.cols - 1) as f64 * self.pitch
    }

    pub fn height(&self) -> f64 {
        (self.rows - 1) as f64 * self.pitch
    }

    pub fn mean_magnetic(&self, p: Point) -> f64 {
        self.mag_base
            + self
                .waves
                .iter()
                .map(|w| w.amplitude * (w.kx * p.x + w.ky * p.y + w.phase).sin())
                .sum::<f64>()
    }

    /// Noise-free fingerprint at `p`: `(bssid, mean rss)` per AP, then magnetic magnitude.
    pub fn mean_fingerprint(&self, p: Point) -> (Vec<(String, f64)>, f64) {
        let rss = self
            .aps
            .iter()
            .map(|ap| (ap.bssid.clone(), ap.mean_rss(p)))
            .collect();
        (rss, self.mean_magnetic(p))
    }

    /// One noisy scan at `p`.
    pub fn sample(&self, p: Point, rng: &mut impl Rng) -> Fingerprint {
        let wifi = self
            .aps
            .iter()
            .filter_map(|ap| {
                let v = (ap.mean_rss(p) + self.rss_noise.sample(rng))
                    .round()
                    .clamp(-100.0, 0.0);
                (v >= SENSITIVITY_DBM).then(|| WifiObservation {
                    bssid: ap.bssid.clone(),
                    ssid: ap.ssid.clone(),
                    rss: v as i32,
                })
            })
            .collect();
        let magnetic = (self.mean_magnetic(p) + self.mag_noise.sample(rng)).max(0.0);
        Fingerprint { wifi, magnetic }
    }

    /// A scan that only sees the attacker's own hotspots.
    pub fn rogue_sample(&self, p: Point, owner: u64, rng: &mut impl Rng) -> Fingerprint {
        let n = rng.random_range(1..=3);
        let wifi = (0..n)
            .map(|i| WifiObservation {
                bssid: format!(
                    "0e:ff:{:02x}:{:02x}:00:{:02x}",
                    (owner >> 8) & 0xff,
                    owner & 0xff,
                    i
                ),
                ssid: format!("hotspot-{owner}-{i}"),
                rss: rng.random_range(-70..=-35),
            })
            .collect();
        let magnetic = (self.mean_magnetic(p) + self.mag_noise.sample(rng)).max(0.0);
        Fingerprint { wifi, magnetic }
    }

    /// Centers of grid cells, used as off-grid destinations.
    pub fn cell_centers(&self) -> Vec<Point> {
        let mut out = Vec::new();
        for r in 0..self.rows.saturating_sub(1) {
            for c in 0..self.cols.saturating_sub(1) {
                out.push(Point::new(
                    (c as f64 + 0.5) * self.pitch,
                    (r as f64 + 0.5) * self.pitch,
                ));
            }
        }
        out
    }
}
