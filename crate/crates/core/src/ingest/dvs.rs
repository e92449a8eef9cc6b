//! DVS event streams to 32x32 first-event frames.
//!
//! A stream is a sequence of 9-byte little-endian records
//!
//! ```text
//! t: u32 (microseconds) | x: u16 | y: u16 | polarity: u8
//! ```
//!
//! cut into consecutive fixed-length windows starting at `t = 0`. Within a
//! window each pixel spikes at its first event, at `(t - start) / window`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::PulseFrame;

pub const RECORD: usize = 9;
pub const SIDE: usize = 32;
/// Motif classes in the synthetic event set.
pub const MOTIF_CLASSES: usize = 36;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub t_us: u32,
    pub x: u16,
    pub y: u16,
    pub polarity: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DvsConfig {
    /// Sensor `[width, height]`; coordinates are scaled down to 32x32.
    pub sensor: [u16; 2],
    pub window_us: u32,
}

impl Default for DvsConfig {
    fn default() -> Self {
        Self { sensor: [SIDE as u16, SIDE as u16], window_us: 10_000 }
    }
}

impl DvsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sensor[0] == 0 || self.sensor[1] == 0 || self.window_us == 0 {
            return Err(Error::Config(format!("bad DVS config {self:?}")));
        }
        Ok(())
    }
}

pub fn parse_events(bytes: &[u8], cfg: &DvsConfig) -> Result<Vec<Event>> {
    let whole = bytes.len() / RECORD * RECORD;
    if whole != bytes.len() {
        return Err(Error::format(whole, format!("truncated event record ({} of {RECORD} bytes)", bytes.len() - whole)));
    }
    bytes
        .chunks_exact(RECORD)
        .enumerate()
        .map(|(i, c)| {
            let e = Event {
                t_us: u32::from_le_bytes(c[0..4].try_into().unwrap()),
                x: u16::from_le_bytes(c[4..6].try_into().unwrap()),
                y: u16::from_le_bytes(c[6..8].try_into().unwrap()),
                polarity: c[8],
            };
            if e.x >= cfg.sensor[0] || e.y >= cfg.sensor[1] {
                return Err(Error::format(i * RECORD + 4, format!("pixel ({}, {}) outside the sensor", e.x, e.y)));
            }
            Ok(e)
        })
        .collect()
}

pub fn events_to_bytes(events: &[Event]) -> Vec<u8> {
    let mut out = Vec::with_capacity(events.len() * RECORD);
    for e in events {
        out.extend_from_slice(&e.t_us.to_le_bytes());
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(e.polarity);
    }
    out
}

/// One frame per window that holds at least one event, in time order.
/// Events need not be sorted.
pub fn frames_from_events(events: &[Event], cfg: &DvsConfig) -> Result<Vec<PulseFrame>> {
    cfg.validate()?;
    let w = cfg.window_us as u64;
    let mut windows: std::collections::BTreeMap<u64, Vec<Option<f32>>> = Default::default();
    for e in events {
        let k = e.t_us as u64 / w;
        let col = e.x as usize * SIDE / cfg.sensor[0] as usize;
        let row = e.y as usize * SIDE / cfg.sensor[1] as usize;
        let t = ((e.t_us as u64 - k * w) as f64 / w as f64) as f32;
        let slot = &mut windows.entry(k).or_insert_with(|| vec![None; SIDE * SIDE])[row * SIDE + col];
        if slot.is_none_or(|old| t < old) {
            *slot = Some(t);
        }
    }
    windows.into_values().map(|times| PulseFrame::new(vec![SIDE, SIDE], times)).collect()
}

/// Decodes a whole stream file.
pub fn parse_dvs_events(bytes: &[u8], cfg: &DvsConfig) -> Result<Vec<PulseFrame>> {
    frames_from_events(&parse_events(bytes, cfg)?, cfg)
}

/// Pixels lit by each motif: half the sensor. With the standard weight
/// initialization a hidden neuron's summed weight over the firing inputs is
/// then about 1.5 x threshold, so the untrained network already fires.
pub const MOTIF_PIXELS: usize = SIDE * SIDE / 2;

/// Pixel-timing motif for one class: a fixed set of pixels with fixed
/// relative times, drawn from a class-seeded generator.
pub fn motif(class: usize) -> Vec<(u16, u16, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4456_5300 + class as u64);
    let picked = rand::seq::index::sample(&mut rng, SIDE * SIDE, MOTIF_PIXELS);
    picked
        .into_iter()
        .map(|p| ((p % SIDE) as u16, (p / SIDE) as u16))
        .map(|(x, y)| (x, y, rng.random_range(0.05..0.9)))
        .collect()
}

/// Event stream of `samples` consecutive windows of one class's motif, with
/// per-event timing jitter and a few spurious events per window.
pub fn motif_stream(class: usize, samples: usize, jitter: f64, seed: u64, cfg: &DvsConfig) -> Vec<Event> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = cfg.window_us as f64;
    let sx = cfg.sensor[0] as f64 / SIDE as f64;
    let sy = cfg.sensor[1] as f64 / SIDE as f64;
    let m = motif(class);
    let mut out = Vec::new();
    for s in 0..samples {
        let start = s as f64 * w;
        for &(x, y, t) in &m {
            let t = (t + rng.random_range(-jitter..=jitter)).clamp(0.0, 0.999);
            out.push(Event {
                t_us: (start + t * w) as u32,
                x: (x as f64 * sx) as u16,
                y: (y as f64 * sy) as u16,
                polarity: rng.random_range(0..2),
            });
        }
        for _ in 0..4 {
            out.push(Event {
                t_us: (start + rng.random_range(0.5..0.999) * w) as u32,
                x: rng.random_range(0..cfg.sensor[0]),
                y: rng.random_range(0..cfg.sensor[1]),
                polarity: rng.random_range(0..2),
            });
        }
    }
    out.sort_by_key(|e| e.t_us);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(t_us: u32, x: u16, y: u16) -> Event {
        Event { t_us, x, y, polarity: 1 }
    }

    #[test]
    fn single_event_encoding() {
        let cfg = DvsConfig::default();
        let f = parse_dvs_events(&events_to_bytes(&[ev(1000, 0, 0)]), &cfg).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].shape(), &[32, 32]);
        assert_eq!(f[0].times()[0], Some(0.1));
        assert_eq!(f[0].spike_count(), 1);
    }

    #[test]
    fn first_event_wins() {
        let cfg = DvsConfig::default();
        let f = frames_from_events(&[ev(200, 3, 1), ev(100, 3, 1)], &cfg).unwrap();
        assert_eq!(f[0].at(1, 3), Some(0.01));
    }

    #[test]
    fn saturating_stream_has_no_silent_pixels() {
        let cfg = DvsConfig::default();
        let events: Vec<Event> = (0..1024).map(|i| ev(i as u32 * 9, (i % 32) as u16, (i / 32) as u16)).collect();
        let f = frames_from_events(&events, &cfg).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].spike_count(), 1024);
        assert!(f[0].times().iter().flatten().all(|&t| (0.0..1.0).contains(&t)));
    }

    #[test]
    fn truncated_record_reports_offset() {
        let b = events_to_bytes(&[ev(1, 1, 1), ev(2, 2, 2)]);
        match parse_dvs_events(&b[..14], &DvsConfig::default()) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 9),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn out_of_sensor_pixel_rejected() {
        let b = events_to_bytes(&[ev(1, 40, 1)]);
        assert!(matches!(parse_dvs_events(&b, &DvsConfig::default()), Err(Error::Format { offset: 4, .. })));
    }

    #[test]
    fn windows_split_and_sensor_scaling() {
        let cfg = DvsConfig { sensor: [128, 128], window_us: 1000 };
        let f = frames_from_events(&[ev(10, 127, 0), ev(2500, 4, 127), ev(2600, 5, 126)], &cfg).unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f[0].at(0, 31), Some(0.01));
        assert_eq!(f[1].at(31, 1), Some(0.5));
        assert_eq!(f[1].spike_count(), 1);
    }

    #[test]
    fn motifs_distinct_and_streams_deterministic() {
        let cfg = DvsConfig::default();
        let pix = |c| motif(c).iter().map(|p| (p.0, p.1)).collect::<std::collections::BTreeSet<_>>();
        for a in 0..MOTIF_CLASSES {
            for b in a + 1..MOTIF_CLASSES {
                assert!(pix(a).symmetric_difference(&pix(b)).count() >= 300, "{a} vs {b}");
            }
        }
        let s = motif_stream(3, 5, 0.02, 9, &cfg);
        assert_eq!(s, motif_stream(3, 5, 0.02, 9, &cfg));
        assert_eq!(frames_from_events(&s, &cfg).unwrap().len(), 5);
    }
}
