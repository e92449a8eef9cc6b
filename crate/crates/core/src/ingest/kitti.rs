//! KITTI Velodyne scans to front-view pulse frames and per-object crops.
//!
//! A point `(x, y, z)` lands in panorama cell
//!
//! ```text
//! x_front = floor(atan2(-y, x) / res_h)          (degrees)
//! y_front = floor(-atan2(z, sqrt(x^2 + y^2)) / res_v)
//! ```
//!
//! shifted so the configured view window starts at row/column 0. The cell
//! holds the round-trip time `2 * range / c` of its nearest return.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::frame::PulseFrame;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
const RECORD: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    /// Reflectance; parsed and kept, not used for timing.
    pub r: f32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
}

/// Decodes little-endian `f32` quadruples `(x, y, z, r)`.
pub fn parse_velodyne(bytes: &[u8]) -> Result<PointCloud> {
    let whole = bytes.len() / RECORD * RECORD;
    if whole != bytes.len() {
        return Err(Error::format(
            whole,
            format!("{} trailing bytes after {} point records", bytes.len() - whole, whole / RECORD),
        ));
    }
    let f = |b: &[u8]| f32::from_le_bytes(b.try_into().unwrap());
    let points = bytes
        .chunks_exact(RECORD)
        .map(|c| Point { x: f(&c[0..4]), y: f(&c[4..8]), z: f(&c[8..12]), r: f(&c[12..16]) })
        .collect();
    Ok(PointCloud { points })
}

impl PointCloud {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.points.len() * RECORD);
        for p in &self.points {
            for v in [p.x, p.y, p.z, p.r] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrontViewConfig {
    /// Degrees per column.
    pub res_h: f64,
    /// Degrees per row.
    pub res_v: f64,
    /// `[min, max)` azimuth in degrees, positive to the right of the x axis.
    pub azimuth_deg: [f64; 2],
    /// `[min, max]` elevation in degrees.
    pub elevation_deg: [f64; 2],
    /// `[rows, cols]` of each object crop.
    pub crop: [usize; 2],
    /// Points per second, recorded for latency accounting.
    pub point_rate: f64,
}

impl Default for FrontViewConfig {
    fn default() -> Self {
        Self {
            res_h: 0.2,
            res_v: 0.4,
            azimuth_deg: [-180.0, 180.0],
            elevation_deg: [-24.9, 2.0],
            crop: [50, 118],
            point_rate: 2.2e6,
        }
    }
}

impl FrontViewConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.res_h > 0.0 && self.res_v > 0.0) {
            return Err(Error::Config(format!("resolutions must be > 0, got {} / {}", self.res_h, self.res_v)));
        }
        let [a0, a1] = self.azimuth_deg;
        let [e0, e1] = self.elevation_deg;
        if !(a0 < a1 && a1 - a0 <= 360.0 && e0 < e1) {
            return Err(Error::Config("empty or inverted view window".into()));
        }
        let (h, w) = self.panorama_shape();
        if self.crop[0] == 0 || self.crop[1] == 0 || self.crop[0] > h || self.crop[1] > w {
            return Err(Error::Config(format!("crop {:?} does not fit the {h}x{w} panorama", self.crop)));
        }
        Ok(())
    }

    fn col0(&self) -> i64 {
        (self.azimuth_deg[0] / self.res_h).floor() as i64
    }

    fn row0(&self) -> i64 {
        (-self.elevation_deg[1] / self.res_v).floor() as i64
    }

    fn full_circle(&self) -> bool {
        self.azimuth_deg[1] - self.azimuth_deg[0] >= 360.0
    }

    /// `(rows, cols)` of the panorama.
    pub fn panorama_shape(&self) -> (usize, usize) {
        let w = ((self.azimuth_deg[1] - self.azimuth_deg[0]) / self.res_h).ceil() as usize;
        let h = ((-self.elevation_deg[0] / self.res_v).floor() as i64 - self.row0() + 1) as usize;
        (h, w)
    }

    /// Unshifted `(x_front, y_front)` of a point.
    pub fn front_coords(&self, x: f64, y: f64, z: f64) -> (i64, i64) {
        let d = (x * x + y * y).sqrt();
        let xf = ((-y).atan2(x) * 180.0 / (PI * self.res_h)).floor();
        let yf = (-z.atan2(d) * 180.0 / (PI * self.res_v)).floor();
        (xf as i64, yf as i64)
    }

    /// Panorama `(row, col)` of a point, or `None` outside the view window.
    pub fn cell(&self, x: f64, y: f64, z: f64) -> Option<(usize, usize)> {
        if x == 0.0 && y == 0.0 {
            return None;
        }
        let el = z.atan2((x * x + y * y).sqrt()) * 180.0 / PI;
        if el < self.elevation_deg[0] || el > self.elevation_deg[1] {
            return None;
        }
        let (h, w) = self.panorama_shape();
        let (xf, yf) = self.front_coords(x, y, z);
        let mut col = xf - self.col0();
        if self.full_circle() {
            col = col.rem_euclid(w as i64);
        }
        let row = yf - self.row0();
        ((0..w as i64).contains(&col) && (0..h as i64).contains(&row)).then_some((row as usize, col as usize))
    }

    /// Inverse of `cell` at the cell centre: the unit ray through it.
    pub fn ray(&self, row: usize, col: usize) -> Vector3<f64> {
        let az = ((col as i64 + self.col0()) as f64 + 0.5) * self.res_h * PI / 180.0;
        let el = -((row as i64 + self.row0()) as f64 + 0.5) * self.res_v * PI / 180.0;
        Vector3::new(el.cos() * az.cos(), -el.cos() * az.sin(), el.sin())
    }
}

/// Round-trip time of flight for a return at `(x, y, z)`.
pub fn pulse_time(x: f64, y: f64, z: f64) -> f64 {
    2.0 * (x * x + y * y + z * z).sqrt() / SPEED_OF_LIGHT
}

/// Front-view panorama of raw pulse times (seconds), nearest return per
/// cell. Use `project_front` for the normalized frame.
pub fn project_times(cloud: &PointCloud, cfg: &FrontViewConfig) -> Result<PulseFrame> {
    cfg.validate()?;
    let (h, w) = cfg.panorama_shape();
    let mut times: Vec<Option<f32>> = vec![None; h * w];
    for p in &cloud.points {
        let (x, y, z) = (p.x as f64, p.y as f64, p.z as f64);
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            continue;
        }
        if let Some((r, c)) = cfg.cell(x, y, z) {
            let t = pulse_time(x, y, z) as f32;
            let slot = &mut times[r * w + c];
            if slot.is_none_or(|old| t < old) {
                *slot = Some(t);
            }
        }
    }
    PulseFrame::new(vec![h, w], times)
}

/// Front-view panorama normalized to `[0, 1]`.
pub fn project_front(cloud: &PointCloud, cfg: &FrontViewConfig) -> Result<PulseFrame> {
    let mut f = project_times(cloud, cfg)?;
    f.normalize();
    Ok(f)
}

/// Homogeneous camera-to-Velodyne transform.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibData {
    pub t_c2v: Matrix4<f64>,
}

fn homogeneous(m: &[f64]) -> Matrix4<f64> {
    let mut t = Matrix4::identity();
    for r in 0..3 {
        for c in 0..4 {
            t[(r, c)] = m[r * 4 + c];
        }
    }
    t
}

impl CalibData {
    /// From the Velodyne-to-camera 3x4 matrix (row-major), optionally
    /// preceded by the rectifying rotation that KITTI label coordinates live
    /// in.
    pub fn from_velo_to_cam(tr: &[f64; 12], r0_rect: Option<&[f64; 9]>) -> Result<Self> {
        let mut v2c = homogeneous(tr);
        if let Some(r0) = r0_rect {
            let mut r = Matrix4::identity();
            r.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::from_row_slice(r0));
            v2c = r * v2c;
        }
        let t_c2v = v2c.try_inverse().ok_or_else(|| Error::Config("Tr_velo_to_cam is singular".into()))?;
        let calib = Self { t_c2v };
        calib.validate()?;
        Ok(calib)
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.t_c2v;
        let bottom = [t[(3, 0)], t[(3, 1)], t[(3, 2)], t[(3, 3)]];
        if bottom.iter().zip([0.0, 0.0, 0.0, 1.0]).any(|(a, b)| (a - b).abs() > 1e-9) {
            return Err(Error::Config(format!("calibration bottom row is {bottom:?}")));
        }
        let rot = t.fixed_view::<3, 3>(0, 0).into_owned();
        let err = (rot.transpose() * rot - Matrix3::identity()).abs().max();
        if err > 1e-4 {
            return Err(Error::Config(format!("calibration rotation is not orthonormal (error {err:.2e})")));
        }
        Ok(())
    }

    pub fn cam_to_velo(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let v = self.t_c2v * Vector4::new(p.x, p.y, p.z, 1.0);
        Vector3::new(v.x, v.y, v.z)
    }

    pub fn velo_to_cam(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let inv = self.t_c2v.try_inverse().expect("validated transform");
        let v = inv * Vector4::new(p.x, p.y, p.z, 1.0);
        Vector3::new(v.x, v.y, v.z)
    }
}

/// Byte offset of each line start, for error positions.
fn lines_with_offsets(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut offset = 0;
    text.split_inclusive('\n').map(move |l| {
        let at = offset;
        offset += l.len();
        (at, l.trim_end())
    })
}

fn parse_floats<const N: usize>(at: usize, key: &str, rest: &str) -> Result<[f64; N]> {
    let vals: Vec<f64> = rest
        .split_whitespace()
        .map(|s| s.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::format(at, format!("{key}: {e}")))?;
    vals.try_into().map_err(|v: Vec<f64>| Error::format(at, format!("{key}: expected {N} numbers, got {}", v.len())))
}

/// Reads `Tr_velo_to_cam` (required) and `R0_rect` (applied when present).
pub fn parse_calib(text: &str) -> Result<CalibData> {
    let mut tr = None;
    let mut r0 = None;
    for (at, line) in lines_with_offsets(text) {
        let Some((key, rest)) = line.split_once(':') else { continue };
        match key.trim() {
            "Tr_velo_to_cam" => tr = Some(parse_floats::<12>(at, "Tr_velo_to_cam", rest)?),
            "R0_rect" => r0 = Some(parse_floats::<9>(at, "R0_rect", rest)?),
            _ => {}
        }
    }
    let tr = tr.ok_or_else(|| Error::format(text.len(), "no Tr_velo_to_cam entry"))?;
    CalibData::from_velo_to_cam(&tr, r0.as_ref())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KittiClass {
    Car,
    Van,
    Truck,
    Pedestrian,
    #[serde(rename = "Person_sitting")]
    PersonSitting,
    Cyclist,
    Tram,
    Misc,
}

impl KittiClass {
    pub const ALL: [KittiClass; 8] = [
        KittiClass::Car,
        KittiClass::Van,
        KittiClass::Truck,
        KittiClass::Pedestrian,
        KittiClass::PersonSitting,
        KittiClass::Cyclist,
        KittiClass::Tram,
        KittiClass::Misc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KittiClass::Car => "Car",
            KittiClass::Van => "Van",
            KittiClass::Truck => "Truck",
            KittiClass::Pedestrian => "Pedestrian",
            KittiClass::PersonSitting => "Person_sitting",
            KittiClass::Cyclist => "Cyclist",
            KittiClass::Tram => "Tram",
            KittiClass::Misc => "Misc",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&c| c == self).unwrap()
    }
}

pub fn class_names() -> Vec<String> {
    KittiClass::ALL.iter().map(|c| c.name().to_string()).collect()
}

/// One 3-D box from a KITTI label file, camera coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectLabel {
    pub class: KittiClass,
    /// `(h, w, l)` in meters.
    pub dimensions: [f64; 3],
    /// Bottom-centre of the box, meters.
    pub location: [f64; 3],
    pub rotation_y: f64,
}

impl ObjectLabel {
    /// The eight corners in camera coordinates (y points down, the box sits
    /// on `location`).
    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let [h, w, l] = self.dimensions;
        let (s, c) = self.rotation_y.sin_cos();
        let loc = Vector3::from(self.location);
        let mut out = [Vector3::zeros(); 8];
        for (i, corner) in out.iter_mut().enumerate() {
            let x = if i & 1 == 0 { l / 2.0 } else { -l / 2.0 };
            let y = if i & 2 == 0 { 0.0 } else { -h };
            let z = if i & 4 == 0 { w / 2.0 } else { -w / 2.0 };
            *corner = Vector3::new(c * x + s * z, y, -s * x + c * z) + loc;
        }
        out
    }

    /// A standard 15-column label line (2-D box and truncation fields zero).
    pub fn to_kitti_line(&self) -> String {
        let [h, w, l] = self.dimensions;
        let [x, y, z] = self.location;
        format!(
            "{} 0.00 0 0.00 0.00 0.00 0.00 0.00 {h:.2} {w:.2} {l:.2} {x:.2} {y:.2} {z:.2} {:.2}",
            self.class.name(),
            self.rotation_y
        )
    }
}

/// Parsed label file: the retained boxes and how many `DontCare` entries
/// were dropped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelFile {
    pub objects: Vec<ObjectLabel>,
    pub dont_care: usize,
}

pub fn parse_labels(text: &str) -> Result<LabelFile> {
    let mut out = LabelFile::default();
    for (at, line) in lines_with_offsets(text) {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        if cols.len() != 15 && cols.len() != 16 {
            return Err(Error::format(at, format!("label line has {} columns, expected 15", cols.len())));
        }
        if cols[0] == "DontCare" {
            out.dont_care += 1;
            continue;
        }
        let class = KittiClass::from_name(cols[0])
            .ok_or_else(|| Error::format(at, format!("unknown object class {:?}", cols[0])))?;
        let num = |i: usize| -> Result<f64> {
            cols[i].parse::<f64>().map_err(|e| Error::format(at, format!("column {}: {e}", i + 1)))
        };
        let dimensions = [num(8)?, num(9)?, num(10)?];
        if dimensions.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::format(at, format!("non-positive box dimensions {dimensions:?}")));
        }
        out.objects.push(ObjectLabel {
            class,
            dimensions,
            location: [num(11)?, num(12)?, num(13)?],
            rotation_y: num(14)?,
        });
    }
    Ok(out)
}

/// Where an object's crop sits in the panorama.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelWindow {
    pub corners_velo: [Vector3<f64>; 8],
    pub centroid: Vector3<f64>,
    /// Panorama `(row, col)` of the centroid, before clamping.
    pub center: (i64, i64),
    /// Top-left `(row, col)` of the crop, clamped inside the panorama.
    pub origin: (usize, usize),
}

/// Maps a label box into the panorama. `None` when the whole box is behind
/// the sensor.
pub fn transform_label(label: &ObjectLabel, calib: &CalibData, cfg: &FrontViewConfig) -> Option<LabelWindow> {
    let corners_velo = label.corners().map(|c| calib.cam_to_velo(&c));
    if corners_velo.iter().all(|c| c.x <= 0.0) {
        return None;
    }
    let centroid = corners_velo.iter().sum::<Vector3<f64>>() / 8.0;
    let (xf, yf) = cfg.front_coords(centroid.x, centroid.y, centroid.z);
    let (h, w) = cfg.panorama_shape();
    let mut col = xf - cfg.col0();
    if cfg.full_circle() {
        col = col.rem_euclid(w as i64);
    }
    let center = (yf - cfg.row0(), col);
    let [ch, cw] = cfg.crop;
    let clamp = |c: i64, half: usize, len: usize, size: usize| (c - half as i64).clamp(0, (size - len) as i64) as usize;
    let origin = (clamp(center.0, ch / 2, ch, h), clamp(center.1, cw / 2, cw, w));
    Some(LabelWindow { corners_velo, centroid, center, origin })
}

/// Cuts a `crop` window out of a panorama and renormalizes it on its own.
pub fn crop_window(panorama: &PulseFrame, origin: (usize, usize), crop: [usize; 2]) -> Result<PulseFrame> {
    let (h, w) = (panorama.shape()[0], panorama.shape()[1]);
    let [ch, cw] = crop;
    if origin.0 + ch > h || origin.1 + cw > w {
        return Err(Error::Shape(format!("crop at {origin:?} of {crop:?} leaves the {h}x{w} panorama")));
    }
    let mut times = Vec::with_capacity(ch * cw);
    for r in origin.0..origin.0 + ch {
        times.extend_from_slice(&panorama.times()[r * w + origin.1..r * w + origin.1 + cw]);
    }
    let mut f = PulseFrame::new(vec![ch, cw, 1], times)?;
    f.normalize();
    Ok(f)
}

/// One sample per label that is not behind the sensor.
pub fn crop_objects(
    panorama: &PulseFrame,
    labels: &[ObjectLabel],
    calib: &CalibData,
    cfg: &FrontViewConfig,
) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for (i, label) in labels.iter().enumerate() {
        let Some(win) = transform_label(label, calib, cfg) else {
            log::warn!("label {i} ({}) is behind the sensor; skipped", label.class.name());
            continue;
        };
        let frame = crop_window(panorama, win.origin, cfg.crop)?;
        out.push(Sample {
            frame,
            label: label.class.index(),
            provenance: Some(json!({
                "class": label.class.name(),
                "object": i,
                "origin": [win.origin.0, win.origin.1],
            })),
        });
    }
    Ok(out)
}

/// Result of ingesting one scan with its calibration and labels.
#[derive(Debug, Clone, Default)]
pub struct ScanSamples {
    pub samples: Vec<Sample>,
    pub behind_sensor: usize,
    pub dont_care: usize,
}

pub fn ingest_scan(scan: &[u8], calib: &str, labels: &str, cfg: &FrontViewConfig) -> Result<ScanSamples> {
    let cloud = parse_velodyne(scan)?;
    let calib = parse_calib(calib)?;
    let labels = parse_labels(labels)?;
    let panorama = project_times(&cloud, cfg)?;
    let samples = crop_objects(&panorama, &labels.objects, &calib, cfg)?;
    Ok(ScanSamples {
        behind_sensor: labels.objects.len() - samples.len(),
        dont_care: labels.dont_care,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn point(x: f32, y: f32, z: f32) -> Point {
        Point { x, y, z, r: 0.0 }
    }

    #[test]
    fn single_record() {
        let mut b = Vec::new();
        for v in [1.0f32, 2.0, 3.0, 0.5] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        let c = parse_velodyne(&b).unwrap();
        assert_eq!(c.points, vec![Point { x: 1.0, y: 2.0, z: 3.0, r: 0.5 }]);
        assert!(parse_velodyne(&[]).unwrap().points.is_empty());
    }

    #[test]
    fn trailing_bytes_report_offset() {
        match parse_velodyne(&[0u8; 35]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 32),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn write_parse_round_trip(pts in prop::collection::vec((-80f32..80.0, -80f32..80.0, -5f32..5.0, 0f32..1.0), 1000)) {
            let cloud = PointCloud { points: pts.iter().map(|&(x, y, z, r)| Point { x, y, z, r }).collect() };
            prop_assert_eq!(parse_velodyne(&cloud.to_bytes()).unwrap(), cloud);
        }

        #[test]
        fn azimuth_monotone(x in 0.1f64..50.0, y1 in -50f64..50.0, dy in 0.0f64..10.0) {
            let cfg = FrontViewConfig::default();
            // Increasing -y never decreases the column.
            let (a, _) = cfg.front_coords(x, y1, 0.0);
            let (b, _) = cfg.front_coords(x, y1 - dy, 0.0);
            prop_assert!(b >= a);
        }

        #[test]
        fn cells_in_bounds(x in -80f64..80.0, y in -80f64..80.0, z in -10f64..10.0) {
            let cfg = FrontViewConfig::default();
            let (h, w) = cfg.panorama_shape();
            if let Some((r, c)) = cfg.cell(x, y, z) {
                prop_assert!(r < h && c < w);
                prop_assert!(c < (360.0 / cfg.res_h).ceil() as usize);
            }
        }
    }

    #[test]
    fn front_coordinate_examples() {
        let cfg = FrontViewConfig::default();
        assert_eq!(cfg.front_coords(10.0, 0.0, 0.0), (0, 0));
        assert_eq!(cfg.front_coords(10.0, -10.0, 0.0).0, 225);
        assert_eq!(cfg.front_coords(10.0, 0.0, -2.0).1, 28);
        assert_eq!(cfg.panorama_shape(), (68, 1800));
    }

    #[test]
    fn nearest_return_wins() {
        let cfg = FrontViewConfig::default();
        let cloud = PointCloud { points: vec![point(20.0, 0.0, 0.0), point(10.0, 0.0, 0.0), point(15.0, 0.0, 0.0)] };
        let f = project_times(&cloud, &cfg).unwrap();
        assert_eq!(f.spike_count(), 1);
        let t = f.times().iter().flatten().next().unwrap();
        assert_eq!(*t, pulse_time(10.0, 0.0, 0.0) as f32);
    }

    #[test]
    fn points_outside_elevation_window_dropped() {
        let cfg = FrontViewConfig::default();
        assert!(cfg.cell(10.0, 0.0, 5.0).is_none());
        assert!(cfg.cell(10.0, 0.0, -6.0).is_none());
        assert!(cfg.cell(10.0, 0.0, -1.0).is_some());
    }

    #[test]
    fn normalized_panorama_bounds() {
        let cfg = FrontViewConfig::default();
        let cloud = PointCloud { points: vec![point(10.0, 1.0, 0.0), point(30.0, -4.0, -1.0), point(12.0, 3.0, -0.5)] };
        let f = project_front(&cloud, &cfg).unwrap();
        let ts: Vec<f32> = f.times().iter().flatten().copied().collect();
        assert_eq!(ts.iter().copied().fold(f32::INFINITY, f32::min), 0.0);
        assert_eq!(ts.iter().copied().fold(0.0, f32::max), 1.0);
    }

    /// KITTI-style axes: camera x = -velo y, camera y = -velo z, camera z = velo x.
    const PERMUTE: [f64; 12] = [0.0, -1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0];

    fn calib_text(tr: &[f64; 12]) -> String {
        let s: Vec<String> = tr.iter().map(|v| format!("{v:e}")).collect();
        format!("P0: 1 0 0 0 0 1 0 0 0 0 1 0\nTr_velo_to_cam: {}\n", s.join(" "))
    }

    #[test]
    fn calib_inverse_and_invariants() {
        let c = parse_calib(&calib_text(&PERMUTE)).unwrap();
        let v = c.cam_to_velo(&Vector3::new(1.0, 2.0, 3.0));
        assert!((v - Vector3::new(3.0, -1.0, -2.0)).norm() < 1e-12);
        let back = c.velo_to_cam(&v);
        assert!((back - Vector3::new(1.0, 2.0, 3.0)).norm() < 1e-12);
        let mut skew = PERMUTE;
        skew[0] = 0.5;
        assert!(parse_calib(&calib_text(&skew)).is_err());
        assert!(matches!(parse_calib("P0: 1 2 3\n"), Err(Error::Format { .. })));
        match parse_calib("Tr_velo_to_cam: 1 2 x\n") {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rectification_applied_when_present() {
        // 90 degree rectification about the camera y axis.
        let r0 = [0.0, 0.0, 1.0, 0.0, 1.0, 0.0, -1.0, 0.0, 0.0];
        let text = format!("R0_rect: {}\n{}", r0.map(|v| v.to_string()).join(" "), calib_text(&PERMUTE));
        let c = parse_calib(&text).unwrap();
        // Rectified (0, 0, 1) = R0 * cam => cam = (-1, 0, 0) => velo (0, 1, 0).
        let v = c.cam_to_velo(&Vector3::new(0.0, 0.0, 1.0));
        assert!((v - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-12, "{v}");
    }

    fn car_ahead(z: f64) -> ObjectLabel {
        ObjectLabel { class: KittiClass::Car, dimensions: [1.5, 1.6, 3.9], location: [0.0, 1.65, z], rotation_y: 0.3 }
    }

    #[test]
    fn labels_parse_and_drop_dont_care() {
        let text = format!(
            "{}\nDontCare -1 -1 -10 503.89 169.71 590.61 190.13 -1 -1 -1 -1000 -1000 -1000 -10\n\
             Pedestrian 0.00 0 -0.20 712.40 143.00 810.73 307.92 1.89 0.48 1.20 1.84 1.47 8.41 0.01\n",
            car_ahead(10.0).to_kitti_line()
        );
        let l = parse_labels(&text).unwrap();
        assert_eq!(l.dont_care, 1);
        assert_eq!(l.objects.len(), 2);
        assert_eq!(l.objects[0].class, KittiClass::Car);
        assert_eq!(l.objects[1].dimensions, [1.89, 0.48, 1.20]);
        assert!(parse_labels("Car 1 2 3\n").is_err());
        assert!(parse_labels("Boat 0 0 0 0 0 0 0 1 1 1 0 0 0 0\n").is_err());
    }

    #[test]
    fn corners_and_centroid() {
        let l = car_ahead(10.0);
        let c = l.corners();
        assert_eq!(c.len(), 8);
        let mean = c.iter().sum::<Vector3<f64>>() / 8.0;
        assert!((mean - Vector3::new(0.0, 1.65 - 0.75, 10.0)).norm() < 1e-12);
        let calib = parse_calib(&calib_text(&PERMUTE)).unwrap();
        let win = transform_label(&l, &calib, &FrontViewConfig::default()).unwrap();
        let m = win.corners_velo.iter().sum::<Vector3<f64>>() / 8.0;
        assert!((m - win.centroid).norm() < 1e-12);
    }

    #[test]
    fn dead_ahead_crop_is_centered_on_azimuth_zero() {
        let cfg = FrontViewConfig::default();
        let calib = parse_calib(&calib_text(&PERMUTE)).unwrap();
        let win = transform_label(&car_ahead(10.0), &calib, &cfg).unwrap();
        // Azimuth 0 is column 900 of the 1800-wide panorama.
        assert_eq!(win.center.1, 900);
        assert_eq!(win.origin.1, 900 - 59);
    }

    #[test]
    fn lateral_shift_moves_crop() {
        let cfg = FrontViewConfig::default();
        let calib = parse_calib(&calib_text(&PERMUTE)).unwrap();
        let mut l = car_ahead(10.0);
        l.location[0] = 2.0;
        let a = transform_label(&l, &calib, &cfg).unwrap();
        // +1 m along Velodyne -y is +1 m along camera x.
        l.location[0] = 3.0;
        let b = transform_label(&l, &calib, &cfg).unwrap();
        let col = |v: &Vector3<f64>| ((-v.y).atan2(v.x).to_degrees() / cfg.res_h).floor() as i64;
        assert!(b.center.1 > a.center.1);
        assert_eq!(b.center.1 - a.center.1, col(&b.centroid) - col(&a.centroid));
    }

    #[test]
    fn behind_sensor_label_skipped() {
        let cfg = FrontViewConfig::default();
        let calib = parse_calib(&calib_text(&PERMUTE)).unwrap();
        let l = car_ahead(-10.0);
        assert!(transform_label(&l, &calib, &cfg).is_none());
        let pano = PulseFrame::silent(vec![68, 1800]);
        assert!(crop_objects(&pano, &[l], &calib, &cfg).unwrap().is_empty());
    }

    #[test]
    fn crop_clamps_inward() {
        let cfg = FrontViewConfig::default();
        let calib = parse_calib(&calib_text(&PERMUTE)).unwrap();
        // Close and low: the centroid row is near the bottom of the window.
        let l = ObjectLabel { location: [0.0, 1.65, 3.0], ..car_ahead(3.0) };
        let win = transform_label(&l, &calib, &cfg).unwrap();
        let (h, _) = cfg.panorama_shape();
        assert!(win.origin.0 + cfg.crop[0] <= h);
        let pano = PulseFrame::silent(vec![68, 1800]);
        let s = crop_objects(&pano, &[l], &calib, &cfg).unwrap();
        assert_eq!(s[0].frame.shape(), &[50, 118, 1]);
        assert_eq!(s[0].label, KittiClass::Car.index());
    }
}
