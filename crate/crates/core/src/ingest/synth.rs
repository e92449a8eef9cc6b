//! Synthetic KITTI-format scenes: ray-cast boxes on a ground plane, written
//! as Velodyne scans plus calibration and label files.

use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kitti::{CalibData, FrontViewConfig, KittiClass, ObjectLabel, Point, PointCloud};
use crate::error::{Error, Result};

/// Velodyne-to-camera extrinsics shaped like the KITTI rig (no rectification).
pub const TR_VELO_TO_CAM: [f64; 12] = [0.0, -1.0, 0.0, 0.0, 0.0, 0.0, -1.0, -0.08, 1.0, 0.0, 0.0, -0.27];
/// Sensor height above the ground.
pub const SENSOR_HEIGHT: f64 = 1.73;
const MAX_RANGE: f64 = 80.0;
const OBJECTS_PER_SCENE: usize = 4;

/// Nominal `(h, w, l)` per class.
fn dims(class: KittiClass) -> [f64; 3] {
    match class {
        KittiClass::Car => [1.5, 1.6, 3.9],
        KittiClass::Van => [2.2, 1.9, 4.8],
        KittiClass::Truck => [3.3, 2.5, 9.0],
        KittiClass::Pedestrian => [1.75, 0.6, 0.8],
        KittiClass::PersonSitting => [1.25, 0.6, 0.9],
        KittiClass::Cyclist => [1.7, 0.6, 1.75],
        KittiClass::Tram => [3.5, 2.6, 14.0],
        KittiClass::Misc => [1.2, 1.2, 1.2],
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub cloud: PointCloud,
    pub calib_text: String,
    pub labels: Vec<ObjectLabel>,
}

impl Scene {
    pub fn labels_text(&self) -> String {
        self.labels.iter().map(|l| l.to_kitti_line() + "\n").collect()
    }
}

pub fn calib_text() -> String {
    let tr: Vec<String> = TR_VELO_TO_CAM.iter().map(|v| format!("{v:e}")).collect();
    format!("Tr_velo_to_cam: {}\n", tr.join(" "))
}

/// Ray/box slab test in the box frame; returns the entry distance.
fn hit_box(origin: &Vector3<f64>, dir: &Vector3<f64>, label: &ObjectLabel) -> Option<f64> {
    let [h, w, l] = label.dimensions;
    let (s, c) = label.rotation_y.sin_cos();
    let to_local = |v: &Vector3<f64>| Vector3::new(c * v.x - s * v.z, v.y, s * v.x + c * v.z);
    let o = to_local(&(origin - Vector3::from(label.location)));
    let d = to_local(dir);
    let (lo, hi) = (Vector3::new(-l / 2.0, -h, -w / 2.0), Vector3::new(l / 2.0, 0.0, w / 2.0));
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    for i in 0..3 {
        if d[i].abs() < 1e-12 {
            if o[i] < lo[i] || o[i] > hi[i] {
                return None;
            }
            continue;
        }
        let (a, b) = ((lo[i] - o[i]) / d[i], (hi[i] - o[i]) / d[i]);
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    (t0 <= t1 && t0 > 0.0).then_some(t0)
}

/// `index`-th scene of a seeded family. Object classes cycle through all
/// eight so a run of scenes stays balanced.
pub fn scene(seed: u64, index: u64, cfg: &FrontViewConfig) -> Result<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let calib = CalibData::from_velo_to_cam(&TR_VELO_TO_CAM, None)?;
    let cam_height = SENSOR_HEIGHT - 0.08;
    let mut labels = Vec::with_capacity(OBJECTS_PER_SCENE);
    for k in 0..OBJECTS_PER_SCENE {
        let class = KittiClass::ALL[(index as usize * OBJECTS_PER_SCENE + k) % 8];
        let dimensions = dims(class).map(|d| d * rng.random_range(0.9..1.1));
        let az = (-36.0 + 24.0 * k as f64 + rng.random_range(-4.0..4.0)).to_radians();
        let dist = rng.random_range(8.0..20.0);
        labels.push(ObjectLabel {
            class,
            dimensions,
            location: [dist * az.sin(), cam_height, dist * az.cos() - 0.27],
            rotation_y: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
        });
    }

    let (h, w) = cfg.panorama_shape();
    let origin_cam = calib.velo_to_cam(&Vector3::zeros());
    let mut points = Vec::new();
    for row in 0..h {
        for col in 0..w {
            let ray = cfg.ray(row, col);
            let az = (-ray.y).atan2(ray.x).to_degrees();
            if az.abs() > 45.0 || rng.random::<f64>() < 0.03 {
                continue;
            }
            let mut range = if ray.z < 0.0 { SENSOR_HEIGHT / -ray.z } else { f64::INFINITY };
            let dir_cam = calib.velo_to_cam(&ray) - origin_cam;
            for l in &labels {
                if let Some(t) = hit_box(&origin_cam, &dir_cam, l) {
                    range = range.min(t);
                }
            }
            if range > MAX_RANGE {
                continue;
            }
            range += rng.random_range(-0.02..0.02);
            let p = ray * range;
            points.push(Point { x: p.x as f32, y: p.y as f32, z: p.z as f32, r: rng.random_range(0.0..1.0) });
        }
    }
    Ok(Scene { cloud: PointCloud { points }, calib_text: calib_text(), labels })
}

/// Writes `count` scenes as `velodyne/NNNNNN.bin`, `calib/NNNNNN.txt` and
/// `label_2/NNNNNN.txt` under `dir`.
pub fn write_scenes(dir: &Path, count: usize, seed: u64, cfg: &FrontViewConfig) -> Result<()> {
    use rayon::prelude::*;
    for sub in ["velodyne", "calib", "label_2"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    (0..count).into_par_iter().try_for_each(|i| {
        let s = scene(seed, i as u64, cfg)?;
        let name = format!("{i:06}");
        let write = |p: std::path::PathBuf, b: &[u8]| std::fs::write(&p, b).map_err(|e| Error::io(&p, e));
        write(dir.join("velodyne").join(format!("{name}.bin")), &s.cloud.to_bytes())?;
        write(dir.join("calib").join(format!("{name}.txt")), s.calib_text.as_bytes())?;
        write(dir.join("label_2").join(format!("{name}.txt")), s.labels_text().as_bytes())
    })
}
