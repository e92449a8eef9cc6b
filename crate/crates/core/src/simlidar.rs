//! Synthetic LiDAR pulse patterns: 16x16 time-delay images of one of four
//! objects in one of eight road scenes (32 classes).
//!
//! Values are normalized delays in `[0, 1]`, small meaning near. The ground
//! plane fills the lower half (farther rows later), roadside structures
//! (walls, bridges, lamps) are near returns, open sky returns nothing (silent
//! pixels), and the object silhouette is painted on top at `base_delay` plus
//! a small fixed surface texture. Samples add a global delay shift and
//! uniform noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataset::{Dataset, Sample, Split};
use crate::error::{Error, Result};
use crate::frame::PulseFrame;

pub const SIDE: usize = 16;
pub const CLASSES: usize = Object::ALL.len() * Road::ALL.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Object {
    None,
    Car,
    Pedestrian,
    Truck,
}

impl Object {
    pub const ALL: [Object; 4] = [Object::None, Object::Car, Object::Pedestrian, Object::Truck];

    pub fn name(self) -> &'static str {
        match self {
            Object::None => "none",
            Object::Car => "car",
            Object::Pedestrian => "pedestrian",
            Object::Truck => "truck",
        }
    }

    /// Inclusive `(rows, cols)` rectangles making up the silhouette.
    fn parts(self) -> &'static [((usize, usize), (usize, usize))] {
        match self {
            Object::None => &[],
            Object::Car => &[((9, 13), (4, 11)), ((7, 8), (6, 9))],
            Object::Pedestrian => &[((4, 5), (7, 8)), ((6, 10), (6, 9)), ((11, 13), (7, 8))],
            Object::Truck => &[((3, 13), (5, 12)), ((6, 13), (2, 4))],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Road {
    Tunnel,
    OpenRoad,
    LowerBridge,
    UpperBridge,
    TwoSideWalls,
    OneSideWall,
    LampsBothSides,
    LampsOneSide,
}

impl Road {
    pub const ALL: [Road; 8] = [
        Road::Tunnel,
        Road::OpenRoad,
        Road::LowerBridge,
        Road::UpperBridge,
        Road::TwoSideWalls,
        Road::OneSideWall,
        Road::LampsBothSides,
        Road::LampsOneSide,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Road::Tunnel => "tunnel",
            Road::OpenRoad => "open-road",
            Road::LowerBridge => "lower-bridge",
            Road::UpperBridge => "upper-bridge",
            Road::TwoSideWalls => "two-side-walls",
            Road::OneSideWall => "one-side-wall",
            Road::LampsBothSides => "lamps-both-sides",
            Road::LampsOneSide => "lamps-one-side",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub object: Object,
    pub road: Road,
    pub base_delay: f32,
    /// Extra delay for a farther object; applied to the silhouette only.
    pub object_distance_offset: f32,
}

impl SceneSpec {
    pub const DEFAULT_BASE_DELAY: f32 = 0.1;

    pub fn new(object: Object, road: Road) -> Self {
        Self { object, road, base_delay: Self::DEFAULT_BASE_DELAY, object_distance_offset: 0.0 }
    }

    pub fn from_label(label: usize) -> Option<Self> {
        (label < CLASSES).then(|| Self::new(Object::ALL[label % 4], Road::ALL[label / 4]))
    }

    pub fn label(&self) -> usize {
        let o = Object::ALL.iter().position(|&o| o == self.object).unwrap();
        let r = Road::ALL.iter().position(|&r| r == self.road).unwrap();
        r * 4 + o
    }
}

pub fn class_names() -> Vec<String> {
    (0..CLASSES)
        .map(|l| {
            let s = SceneSpec::from_label(l).unwrap();
            format!("{}/{}", s.road.name(), s.object.name())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub amplitude_max: f32,
    pub seed: u64,
}

struct Canvas([Option<f32>; SIDE * SIDE]);

impl Canvas {
    fn fill(&mut self, rows: (usize, usize), cols: (usize, usize), delay: impl Fn(usize, usize) -> f32) {
        for r in rows.0..=rows.1 {
            for c in cols.0..=cols.1 {
                self.0[r * SIDE + c] = Some(delay(r, c));
            }
        }
    }
}

/// Ground returns come back sooner the closer the row is to the sensor.
fn ground(r: usize) -> f32 {
    0.60 + 0.05 * (15 - r) as f32
}

/// Deterministic noise-free template for a scene.
pub fn render_scene(spec: &SceneSpec) -> PulseFrame {
    let mut cv = Canvas([None; SIDE * SIDE]);
    let last = SIDE - 1;
    match spec.road {
        Road::UpperBridge => {
            // Deck only; the drop on either side returns nothing.
            cv.fill((9, last), (3, 12), |r, _| ground(r));
            cv.fill((7, last), (2, 2), |_, _| 0.18);
            cv.fill((7, last), (13, 13), |_, _| 0.18);
        }
        _ => cv.fill((9, last), (0, last), |r, _| ground(r)),
    }
    let wall = |r: usize, _| 0.16 + 0.01 * (15 - r) as f32;
    match spec.road {
        Road::Tunnel => {
            cv.fill((0, 2), (0, last), |_, _| 0.30);
            cv.fill((3, last), (0, 1), wall);
            cv.fill((3, last), (14, last), wall);
        }
        Road::OpenRoad | Road::UpperBridge => {}
        Road::LowerBridge => {
            cv.fill((2, 4), (0, last), |_, _| 0.28);
            cv.fill((5, 8), (2, 2), |_, _| 0.22);
            cv.fill((5, 8), (13, 13), |_, _| 0.22);
        }
        Road::TwoSideWalls => {
            cv.fill((6, last), (0, 2), wall);
            cv.fill((6, last), (13, last), wall);
        }
        Road::OneSideWall => cv.fill((6, last), (0, 2), wall),
        Road::LampsBothSides => {
            cv.fill((3, last), (1, 1), |_, _| 0.20);
            cv.fill((3, 3), (2, 4), |_, _| 0.18);
            cv.fill((3, last), (14, 14), |_, _| 0.20);
            cv.fill((3, 3), (11, 13), |_, _| 0.18);
        }
        Road::LampsOneSide => {
            cv.fill((3, last), (1, 1), |_, _| 0.20);
            cv.fill((3, 3), (2, 4), |_, _| 0.18);
        }
    }
    let near = spec.base_delay + spec.object_distance_offset;
    let k = spec.object as usize;
    for &(rows, cols) in spec.object.parts() {
        // Irregular surface: a fixed per-object texture of up to 0.05.
        cv.fill(rows, cols, |r, c| near + 0.0125 * ((r * 7 + c * 13 + k * 5) % 5) as f32);
    }
    for t in cv.0.iter_mut().flatten() {
        *t = t.max(0.0);
    }
    PulseFrame::new(vec![SIDE, SIDE], cv.0.to_vec()).expect("template is well-formed")
}

/// Adds i.i.d. `Uniform[0, amplitude_max]` to every firing pixel. Silent
/// pixels stay silent. For a fixed seed the perturbation is the same unit
/// draw scaled by the amplitude, so larger amplitudes never perturb less.
pub fn inject_noise(frame: &PulseFrame, noise: &NoiseSpec) -> PulseFrame {
    let mut out = frame.clone();
    if noise.amplitude_max <= 0.0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    for t in out.times_mut() {
        let u: f32 = rng.random();
        if let Some(t) = t {
            *t = (*t + noise.amplitude_max * u).max(0.0);
        }
    }
    out
}

/// Shifts every firing pixel by `delta`, clamping at 0.
pub fn shift_delays(frame: &mut PulseFrame, delta: f32) {
    for t in frame.times_mut().iter_mut().flatten() {
        *t = (*t + delta).max(0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub train: usize,
    pub test: usize,
    pub noise_max: f32,
    /// Global delay shift drawn from `[-shift_range, shift_range]` per sample.
    pub shift_range: f32,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { train: 3000, test: 600, noise_max: 0.10, shift_range: 0.1, seed: 0 }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_max >= 0.0 && self.noise_max.is_finite()) {
            return Err(Error::Config(format!("noise_max must be >= 0, got {}", self.noise_max)));
        }
        if !(self.shift_range >= 0.0 && self.shift_range.is_finite()) {
            return Err(Error::Config(format!("shift_range must be >= 0, got {}", self.shift_range)));
        }
        Ok(())
    }
}

/// One sample. Its randomness comes from its own ChaCha stream keyed by
/// split and index, so generation order does not matter.
pub fn make_sample(cfg: &SimConfig, split: Split, index: usize) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tag = match split {
        Split::Train => 0u64,
        Split::Test => 1u64,
    };
    rng.set_stream((tag << 48) | index as u64);
    let label = index % CLASSES;
    let scene = SceneSpec::from_label(label).unwrap();
    let shift = if cfg.shift_range > 0.0 { rng.random_range(-cfg.shift_range..=cfg.shift_range) } else { 0.0 };
    let noise = NoiseSpec { amplitude_max: cfg.noise_max, seed: rng.random() };
    let mut frame = render_scene(&scene);
    shift_delays(&mut frame, shift);
    let frame = inject_noise(&frame, &noise);
    Sample {
        frame,
        label,
        provenance: Some(json!({ "scene": scene, "shift": shift, "noise": noise })),
    }
}

/// Labels are assigned round-robin, so classes are balanced up to one sample
/// when a count is not a multiple of 32.
pub fn build_dataset(cfg: &SimConfig) -> Result<Dataset> {
    cfg.validate()?;
    let gen = |split, n: usize| (0..n).into_par_iter().map(|i| make_sample(cfg, split, i)).collect();
    Ok(Dataset {
        task: "simlidar".into(),
        class_names: class_names(),
        generator: json!({ "kind": "simlidar", "config": cfg }),
        train: gen(Split::Train, cfg.train),
        test: gen(Split::Test, cfg.test),
    })
}
