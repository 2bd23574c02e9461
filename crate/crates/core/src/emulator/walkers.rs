//! User timelines: honest walkers touring the tags and attackers replaying
//! forged tags from a single spot.

use std::collections::HashMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use super::world::{Point, World};
use super::EmulatorConfig;
use crate::datamodel::{Fingerprint, Lid, Uid};

/// Honest walkers step to tags within this many pitches of where they stand.
const REACH_PITCHES: f64 = 1.05;
/// Walkers head for the building's least-visited tag once every nearby tag is this far ahead of it.
const JUMP_SLACK: u32 = 2;
/// Minimum gap between attacker sessions, seconds.
const SESSION_GAP: f64 = 900.0;

#[derive(Debug, Clone)]
pub struct Upload {
    pub uid: Uid,
    pub lid: Lid,
    /// Seconds since the start of the collection.
    pub t: f64,
    pub fingerprint: Fingerprint,
    pub truthful: bool,
    pub payload: Vec<u8>,
}

/// When misplaced tags move and removed tags disappear.
#[derive(Debug, Clone, Default)]
pub struct TagEvents {
    pub moves: HashMap<Lid, (f64, Point)>,
    pub removals: HashMap<Lid, f64>,
}

impl TagEvents {
    pub fn active(&self, lid: Lid, t: f64) -> bool {
        self.removals.get(&lid).is_none_or(|&at| t < at)
    }

    pub fn has_moved(&self, lid: Lid, t: f64) -> bool {
        self.moves.get(&lid).is_some_and(|&(at, _)| t >= at)
    }

    pub fn position(&self, world: &World, lid: Lid, t: f64) -> Point {
        match self.moves.get(&lid) {
            Some(&(at, dest)) if t >= at => dest,
            _ => world.tag_point(lid),
        }
    }

    /// True if the tag's presence or location differs between `a` and `b`.
    fn changes_between(&self, lid: Lid, a: f64, b: f64) -> bool {
        self.active(lid, a) != self.active(lid, b)
            || self.has_moved(lid, a) != self.has_moved(lid, b)
    }
}

fn payload(rng: &mut impl Rng) -> Vec<u8> {
    let lux: f64 = 320.0 + rng.random_range(-60.0..=60.0);
    format!("{lux:.1}").into_bytes()
}

fn dwell(cfg: &EmulatorConfig, rng: &mut impl Rng) -> f64 {
    cfg.dwell * rng.random_range(0.5..=1.5)
}

/// Tours the building, always moving to the least-visited reachable tag and
/// never stepping straight back unless cornered.
pub fn honest_walk(
    world: &World,
    events: &TagEvents,
    uid: Uid,
    quota: usize,
    start: f64,
    cfg: &EmulatorConfig,
    rng: &mut impl Rng,
) -> Vec<Upload> {
    let lids: Vec<Lid> = world.topology.tags().iter().map(|t| t.lid).collect();
    let reach = REACH_PITCHES * world.pitch;
    let mut visits: HashMap<Lid, u32> = lids.iter().map(|&l| (l, 0)).collect();
    let mut out = Vec::with_capacity(quota);

    let mut t = start;
    let first_choices: Vec<Lid> = lids
        .iter()
        .copied()
        .filter(|&l| events.active(l, t))
        .collect();
    let Some(&first) = first_choices.choose(rng) else {
        return out;
    };
    let mut pos = events.position(world, first, t);
    let mut current = Some(first);
    let mut previous: Option<Lid> = None;
    let mut pending = Some(first);

    let mut stalls = 0;
    while out.len() < quota {
        if let Some(lid) = pending.take() {
            out.push(Upload {
                uid,
                lid,
                t,
                fingerprint: world.sample(pos, rng),
                truthful: !events.has_moved(lid, t),
                payload: payload(rng),
            });
            *visits.get_mut(&lid).expect("known lid") += 1;
            t += dwell(cfg, rng);
            if out.len() >= quota {
                break;
            }
        }

        let active: Vec<(Lid, Point)> = lids
            .iter()
            .copied()
            .filter(|&l| events.active(l, t) && Some(l) != current)
            .map(|l| (l, events.position(world, l, t)))
            .collect();
        if active.is_empty() {
            // nothing left to visit; idle until something changes or give up
            stalls += 1;
            if stalls > 1000 {
                break;
            }
            t += dwell(cfg, rng);
            continue;
        }

        let near: Vec<(Lid, Point)> = active
            .iter()
            .copied()
            .filter(|(_, p)| p.dist(pos) <= reach)
            .collect();
        let mut candidates: Vec<(Lid, Point)> = near
            .iter()
            .copied()
            .filter(|(l, _)| Some(*l) != previous)
            .collect();
        if candidates.is_empty() {
            candidates = near;
        }
        let global_min = active
            .iter()
            .map(|(l, _)| visits[l])
            .min()
            .expect("non-empty");
        let local_min = candidates.iter().map(|(l, _)| visits[l]).min();
        let pool: Vec<(Lid, Point)> = match local_min {
            Some(m) if m <= global_min + JUMP_SLACK => candidates
                .into_iter()
                .filter(|(l, _)| visits[l] == m)
                .collect(),
            _ => active
                .iter()
                .copied()
                .filter(|(l, _)| visits[l] == global_min)
                .collect(),
        };
        let &(target, target_pos) = pool.choose(rng).expect("non-empty pool");

        let arrival = t + target_pos.dist(pos) / cfg.walk_speed;
        if events.changes_between(target, t, arrival) {
            // the tag moved or vanished while we walked over: nothing to scan
            pos = target_pos;
            previous = current;
            current = None;
            t = arrival;
            continue;
        }
        pos = target_pos;
        previous = current;
        current = Some(target);
        t = arrival;
        pending = Some(target);
    }
    out
}

/// Picks a spot at least `clearance` away from every point in `avoid`.
pub fn off_tag_point(world: &World, avoid: &[Point], clearance: f64, rng: &mut impl Rng) -> Point {
    let half = world.pitch / 2.0;
    for _ in 0..10_000 {
        let p = Point::new(
            rng.random_range(-half..=world.width() + half),
            rng.random_range(-half..=world.height() + half),
        );
        if avoid.iter().all(|a| a.dist(p) >= clearance) {
            return p;
        }
    }
    Point::new(world.width() / 2.0 + half, world.height() / 2.0 + half)
}

/// Forges cycling tag ids from one position, in sessions spread over `[0, horizon]`.
/// Uploads within a session come faster than walking between the claimed tags would allow.
pub fn attacker_sessions(
    world: &World,
    uid: Uid,
    quota: usize,
    position: Point,
    horizon: f64,
    cfg: &EmulatorConfig,
    rng: &mut impl Rng,
) -> Vec<Upload> {
    let mut sizes = Vec::new();
    let mut left = quota;
    while left > 0 {
        let s = rng.random_range(15..=40).min(left);
        sizes.push(s);
        left -= s;
    }
    let mut starts: Vec<f64> = sizes
        .iter()
        .map(|_| rng.random_range(0.0..=horizon.max(1.0)))
        .collect();
    starts.sort_by(f64::total_cmp);

    let lids: Vec<Lid> = world.topology.tags().iter().map(|t| t.lid).collect();
    let mut cycle: Vec<Lid> = Vec::new();
    let mut next_lid = |rng: &mut dyn rand::RngCore| {
        if cycle.is_empty() {
            cycle = lids.clone();
            cycle.shuffle(rng);
        }
        cycle.pop().expect("refilled")
    };

    let mut out = Vec::with_capacity(quota);
    let mut t_end = f64::NEG_INFINITY;
    for (size, start) in sizes.into_iter().zip(starts) {
        let mut t = start.max(t_end + SESSION_GAP);
        let mut last: Option<Lid> = None;
        for _ in 0..size {
            let lid = next_lid(rng);
            if let Some(prev) = last {
                let d = world
                    .tag_point(prev)
                    .dist(world.tag_point(lid))
                    .max(world.pitch);
                let pace = rng.random_range(cfg.attacker_pace_min..=cfg.attacker_pace_max);
                t += (pace * d / cfg.walk_speed).max(0.001);
            }
            let fingerprint = if rng.random_bool(cfg.forged_ssid_fraction) {
                world.rogue_sample(position, uid, rng)
            } else {
                world.sample(position, rng)
            };
            out.push(Upload {
                uid,
                lid,
                t,
                fingerprint,
                truthful: false,
                payload: payload(rng),
            });
            last = Some(lid);
        }
        t_end = t;
    }
    out
}
