//! Sensor data to labeled pulse frames: KITTI Velodyne scans ([`kitti`]),
//! DVS event streams ([`dvs`]) and synthetic KITTI-format scenes
//! ([`synth`]).
//!
//! Directory builders read every input file independently (in parallel)
//! but keep results in sorted file order, so output never depends on
//! scheduling.

pub mod dvs;
pub mod kitti;
pub mod synth;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};

/// How many samples go to each split after shuffling. `None` for `train`
/// takes everything not used by `test`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default)]
    pub train: Option<usize>,
    pub test: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { train: None, test: 0, seed: 0 }
    }
}

/// Shuffles with a seeded generator and cuts `test` then `train` samples.
pub fn shuffle_split(mut samples: Vec<Sample>, split: &SplitConfig) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let n = samples.len();
    let train = split.train.unwrap_or(n.saturating_sub(split.test));
    if train + split.test > n {
        return Err(Error::Config(format!(
            "requested {train} train + {} test samples, only {n} available",
            split.test
        )));
    }
    samples.shuffle(&mut ChaCha8Rng::seed_from_u64(split.seed));
    let rest = samples.split_off(split.test);
    Ok((rest.into_iter().take(train).collect(), samples))
}

/// First `per_class` samples of every class, in input order, interleaved by
/// class. Fails if some class has fewer.
pub fn balanced(samples: &[Sample], classes: usize, per_class: usize) -> Result<Vec<Sample>> {
    let mut by_class: Vec<Vec<&Sample>> = vec![Vec::new(); classes];
    for s in samples {
        if s.label < classes && by_class[s.label].len() < per_class {
            by_class[s.label].push(s);
        }
    }
    if let Some((c, v)) = by_class.iter().enumerate().find(|(_, v)| v.len() < per_class) {
        return Err(Error::Config(format!("class {c} has only {} samples, need {per_class}", v.len())));
    }
    Ok((0..per_class).flat_map(|i| by_class.iter().map(move |v| v[i].clone())).collect())
}

fn sorted_files(dir: &Path, ext: Option<&str>) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_file() && ext.is_none_or(|x| p.extension().is_some_and(|e| e == x)) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KittiIngestConfig {
    #[serde(default)]
    pub view: kitti::FrontViewConfig,
    #[serde(default)]
    pub split: SplitConfig,
}

/// Totals gathered while ingesting a KITTI directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct KittiIngestReport {
    pub scans: usize,
    /// Scans without a matching calibration or label file.
    pub skipped_scans: usize,
    pub samples: usize,
    pub behind_sensor: usize,
    pub dont_care: usize,
    pub per_class: Vec<usize>,
}

/// Reads `velodyne/*.bin` with the matching `calib/*.txt` and
/// `label_2/*.txt`, crops every retained label and splits the crops. Scans
/// missing either companion file are skipped with a warning.
pub fn build_kitti(root: &Path, cfg: &KittiIngestConfig) -> Result<(Dataset, KittiIngestReport)> {
    cfg.view.validate()?;
    let scans = sorted_files(&root.join("velodyne"), Some("bin"))?;
    let per_scan: Vec<Option<kitti::ScanSamples>> = scans
        .par_iter()
        .map(|scan| {
            let stem = scan.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let calib = root.join("calib").join(format!("{stem}.txt"));
            let labels = root.join("label_2").join(format!("{stem}.txt"));
            if let Some(missing) = [&calib, &labels].into_iter().find(|p| !p.is_file()) {
                log::warn!("{}: no {}; scan skipped", scan.display(), missing.display());
                return Ok(None);
            }
            let bytes = read(scan)?;
            let mut out = kitti::ingest_scan(
                &bytes,
                &read_text(&calib)?,
                &read_text(&labels)?,
                &cfg.view,
            )
            .map_err(|e| e.in_file(scan))?;
            for s in &mut out.samples {
                if let Some(p) = s.provenance.as_mut().and_then(|p| p.as_object_mut()) {
                    p.insert("scan".into(), json!(stem));
                }
            }
            Ok(Some(out))
        })
        .collect::<Result<_>>()?;

    let mut report = KittiIngestReport { scans: scans.len(), per_class: vec![0; 8], ..Default::default() };
    let mut samples = Vec::new();
    for s in per_scan {
        let Some(s) = s else {
            report.skipped_scans += 1;
            continue;
        };
        report.behind_sensor += s.behind_sensor;
        report.dont_care += s.dont_care;
        samples.extend(s.samples);
    }
    for s in &samples {
        report.per_class[s.label] += 1;
    }
    report.samples = samples.len();
    if report.behind_sensor > 0 {
        log::warn!("skipped {} labels behind the sensor", report.behind_sensor);
    }
    let (train, test) = shuffle_split(samples, &cfg.split)?;
    let dataset = Dataset {
        task: "kitti".into(),
        class_names: kitti::class_names(),
        generator: json!({ "kind": "kitti", "source": root.display().to_string(), "config": cfg }),
        train,
        test,
    };
    Ok((dataset, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DvsIngestConfig {
    #[serde(default)]
    pub dvs: dvs::DvsConfig,
    #[serde(default)]
    pub split: SplitConfig,
}

/// Reads `<root>/<class>/<stream>` event files; class names are the sorted
/// subdirectory names. Every non-empty window becomes one sample.
pub fn build_dvs(root: &Path, cfg: &DvsIngestConfig) -> Result<Dataset> {
    cfg.dvs.validate()?;
    let rd = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut class_dirs = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| Error::io(root, e))?.path();
        if p.is_dir() {
            class_dirs.push(p);
        }
    }
    class_dirs.sort();
    if class_dirs.is_empty() {
        return Err(Error::Config(format!("{}: no class subdirectories", root.display())));
    }
    let mut files = Vec::new();
    for (label, d) in class_dirs.iter().enumerate() {
        files.extend(sorted_files(d, None)?.into_iter().map(|f| (label, f)));
    }
    let per_file: Vec<Vec<Sample>> = files
        .par_iter()
        .map(|(label, f)| {
            let frames = dvs::parse_dvs_events(&read(f)?, &cfg.dvs).map_err(|e| e.in_file(f))?;
            Ok(frames
                .into_iter()
                .enumerate()
                .map(|(w, frame)| Sample {
                    frame,
                    label: *label,
                    provenance: Some(json!({ "file": f.display().to_string(), "window": w })),
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let (train, test) = shuffle_split(per_file.into_iter().flatten().collect(), &cfg.split)?;
    Ok(Dataset {
        task: "dvs".into(),
        class_names: class_dirs.iter().map(|d| d.file_name().unwrap_or_default().to_string_lossy().into_owned()).collect(),
        generator: json!({ "kind": "dvs", "source": root.display().to_string(), "config": cfg }),
        train,
        test,
    })
}

/// Writes the synthetic motif set as a DVS directory tree: one stream file
/// per class holding `windows` sample windows.
pub fn write_dvs_motifs(root: &Path, windows: usize, jitter: f64, seed: u64, cfg: &dvs::DvsConfig) -> Result<()> {
    for class in 0..dvs::MOTIF_CLASSES {
        let d = root.join(format!("motif{class:02}"));
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        let events = dvs::motif_stream(class, windows, jitter, seed.wrapping_add(class as u64), cfg);
        let p = d.join("stream.dvs");
        std::fs::write(&p, dvs::events_to_bytes(&events)).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

/// The synthetic motif set in memory, without touching disk.
pub fn dvs_motif_dataset(train_per_class: usize, test_per_class: usize, jitter: f64, seed: u64) -> Result<Dataset> {
    let cfg = dvs::DvsConfig::default();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..dvs::MOTIF_CLASSES {
        let events = dvs::motif_stream(class, train_per_class + test_per_class, jitter, seed.wrapping_add(class as u64), &cfg);
        let frames = dvs::frames_from_events(&events, &cfg)?;
        for (i, frame) in frames.into_iter().enumerate() {
            let s = Sample { frame, label: class, provenance: Some(json!({ "motif": class, "window": i })) };
            if i < train_per_class { train.push(s) } else { test.push(s) }
        }
    }
    Ok(Dataset {
        task: "dvs".into(),
        class_names: (0..dvs::MOTIF_CLASSES).map(|c| format!("motif{c:02}")).collect(),
        generator: json!({ "kind": "dvs-motif", "jitter": jitter, "seed": seed }),
        train,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::PulseFrame;

    fn toy(n: usize, classes: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| Sample::new(PulseFrame::new(vec![1], vec![Some(i as f32)]).unwrap(), i % classes))
            .collect()
    }

    #[test]
    fn split_counts_and_determinism() {
        let cfg = SplitConfig { train: Some(6), test: 3, seed: 4 };
        let (a, b) = shuffle_split(toy(10, 2), &cfg).unwrap();
        assert_eq!((a.len(), b.len()), (6, 3));
        assert_eq!(shuffle_split(toy(10, 2), &cfg).unwrap(), (a, b));
        assert!(shuffle_split(toy(5, 2), &cfg).is_err());
        let (a, b) = shuffle_split(toy(10, 2), &SplitConfig { test: 2, ..Default::default() }).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
    }

    #[test]
    fn balanced_subset() {
        let b = balanced(&toy(30, 3), 3, 4).unwrap();
        assert_eq!(b.len(), 12);
        assert_eq!(b.iter().filter(|s| s.label == 2).count(), 4);
        assert!(balanced(&toy(5, 3), 3, 4).is_err());
    }

    #[test]
    fn kitti_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let view = kitti::FrontViewConfig::default();
        synth::write_scenes(dir.path(), 3, 5, &view).unwrap();
        let cfg = KittiIngestConfig { view, split: SplitConfig { train: None, test: 2, seed: 1 } };
        let (ds, report) = build_kitti(dir.path(), &cfg).unwrap();
        assert_eq!(report.scans, 3);
        assert_eq!(report.samples, 12);
        assert_eq!(ds.train.len() + ds.test.len(), 12);
        assert!(ds.train.iter().all(|s| s.frame.shape() == [50, 118, 1]));
        let (again, _) = build_kitti(dir.path(), &cfg).unwrap();
        assert_eq!(ds, again);
        std::fs::remove_file(dir.path().join("calib/000001.txt")).unwrap();
        let (_, report) = build_kitti(dir.path(), &cfg).unwrap();
        assert_eq!((report.skipped_scans, report.samples), (1, 8));
    }

    #[test]
    fn dvs_directory_matches_in_memory_set() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dvs::DvsConfig::default();
        write_dvs_motifs(dir.path(), 3, 0.01, 7, &cfg).unwrap();
        let ds = build_dvs(dir.path(), &DvsIngestConfig { dvs: cfg, split: SplitConfig::default() }).unwrap();
        assert_eq!(ds.class_names.len(), 36);
        assert_eq!(ds.train.len(), 108);
        let mem = dvs_motif_dataset(3, 0, 0.01, 7).unwrap();
        let mut a: Vec<_> = ds.train.iter().map(|s| (s.label, s.frame.to_bytes())).collect();
        let mut b: Vec<_> = mem.train.iter().map(|s| (s.label, s.frame.to_bytes())).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }
}
