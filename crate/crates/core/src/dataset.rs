//! Labeled pulse-frame collections and their on-disk layout.
//!
//! A dataset directory holds `manifest.json` and one `SPKT` file per sample
//! under `samples/<split>/`. The manifest lists every sample path (relative to
//! the directory), its label and split, plus generator provenance.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::frame::PulseFrame;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "pulsenet-dataset";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub frame: PulseFrame,
    pub label: usize,
    /// Free-form description of how the sample was produced.
    pub provenance: Option<Value>,
}

impl Sample {
    pub fn new(frame: PulseFrame, label: usize) -> Self {
        Self { frame, label, provenance: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: String,
    pub label: usize,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub task: String,
    pub classes: usize,
    pub class_names: Vec<String>,
    pub generator: Value,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: String,
    pub class_names: Vec<String>,
    pub generator: Value,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn samples(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    /// Samples per class in one split.
    pub fn class_counts(&self, split: Split) -> Vec<usize> {
        let mut counts = vec![0; self.classes()];
        for s in self.samples(split) {
            if s.label < counts.len() {
                counts[s.label] += 1;
            }
        }
        counts
    }

    pub fn manifest(&self) -> DatasetManifest {
        let mut entries = Vec::with_capacity(self.train.len() + self.test.len());
        for split in [Split::Train, Split::Test] {
            for (i, s) in self.samples(split).iter().enumerate() {
                entries.push(ManifestEntry {
                    path: format!("samples/{}/{i:06}.spkt", split.as_str()),
                    label: s.label,
                    split,
                    provenance: s.provenance.clone(),
                });
            }
        }
        DatasetManifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            task: self.task.clone(),
            classes: self.classes(),
            class_names: self.class_names.clone(),
            generator: self.generator.clone(),
            entries,
        }
    }

    /// Writes the manifest and every frame under `dir`.
    pub fn save(&self, dir: &Path) -> Result<DatasetManifest> {
        let manifest = self.manifest();
        for split in [Split::Train, Split::Test] {
            let d = dir.join("samples").join(split.as_str());
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        let all = self.train.iter().chain(&self.test);
        for (entry, sample) in manifest.entries.iter().zip(all) {
            sample.frame.write(&dir.join(&entry.path))?;
        }
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::from(e).in_file(&path))?;
        if manifest.format != MANIFEST_FORMAT || manifest.version != MANIFEST_VERSION {
            return Err(Error::Config(format!(
                "{}: unsupported manifest {} v{}",
                path.display(),
                manifest.format,
                manifest.version
            )));
        }
        let mut ds = Dataset {
            task: manifest.task,
            class_names: manifest.class_names,
            generator: manifest.generator,
            train: Vec::new(),
            test: Vec::new(),
        };
        for e in manifest.entries {
            if e.label >= manifest.classes {
                return Err(Error::Config(format!("{}: label {} out of range", e.path, e.label)));
            }
            let frame = PulseFrame::read(&dir.join(&e.path))?;
            let s = Sample { frame, label: e.label, provenance: e.provenance };
            match e.split {
                Split::Train => ds.train.push(s),
                Split::Test => ds.test.push(s),
            }
        }
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_preserves_labels() {
        let dir = tempfile::tempdir().unwrap();
        let f = |t: f32| PulseFrame::new(vec![1, 2], vec![Some(t), None]).unwrap();
        let ds = Dataset {
            task: "toy".into(),
            class_names: vec!["a".into(), "b".into(), "c".into()],
            generator: serde_json::json!({"seed": 1}),
            train: vec![Sample::new(f(0.1), 2), Sample::new(f(0.2), 0)],
            test: vec![Sample::new(f(0.3), 1)],
        };
        let m = ds.save(dir.path()).unwrap();
        assert_eq!(m.entries.len(), 3);
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.class_counts(Split::Train), vec![1, 0, 1]);
    }

    #[test]
    fn missing_manifest_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(Dataset::load(dir.path()), Err(Error::Io { .. })));
    }
}
