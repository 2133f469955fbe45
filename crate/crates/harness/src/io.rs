//! On-disk formats: clip files with JSON sidecars, the dataset manifest,
//! memory-bank directories and checkpoints.
//!
//! ```text
//! data/
//!   manifest.json          {"num_classes", "categories", "clips": [sidecar paths]}
//!   clips/vid00000_10.json {"video_id", "clip_time_s", "feature_file", "boxes": [...]}
//!   clips/vid00000_10.cten [C, T, H, W] feature map
//! ckpt/
//!   config.json   run configuration
//!   params.bin    (name_len: u32, name, CTEN) records
//!   bank/<hex video id>.bank
//!   train_log.csv
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cycleacr_core::codec::{self, BankRecord, Dtype};
use cycleacr_core::frontend::{ActorBox, FeatureMap};
use cycleacr_core::head::{BankEntry, MemoryBank};
use cycleacr_core::model::Model;
use cycleacr_core::synth::{Category, SceneSample};
use cycleacr_core::{Real, Tensor};

use crate::config::RunConfig;
use crate::data::{Clip, Dataset};
use crate::{HarnessError, Result};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_owned(),
        source,
    }
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(io_err(path))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|source| HarnessError::Json {
        path: path.to_owned(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = serde_json::to_vec_pretty(value).map_err(|source| HarnessError::Json {
        path: path.to_owned(),
        source,
    })?;
    write_bytes(path, &s)
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    Ok(codec::decode_tensor(&read_bytes(path)?)?)
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    write_bytes(path, &codec::encode_tensor(t, Dtype::native())?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub id: u32,
    pub x1: Real,
    pub y1: Real,
    pub x2: Real,
    pub y2: Real,
    pub confidence: Real,
    /// Positive class indices.
    #[serde(default)]
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipSidecar {
    pub video_id: String,
    pub clip_time_s: u32,
    /// Feature map path, relative to the sidecar.
    pub feature_file: String,
    pub boxes: Vec<BoxRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub num_classes: usize,
    pub categories: Vec<Option<Category>>,
    /// Sidecar paths relative to the manifest.
    pub clips: Vec<String>,
}

/// One clip as read from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFile {
    pub video_id: String,
    pub clip_time_s: u32,
    pub map: FeatureMap,
    pub boxes: Vec<ActorBox>,
    pub labels: Vec<Vec<usize>>,
}

impl SceneFile {
    pub fn label_tensor(&self, num_classes: usize) -> Result<Tensor> {
        let mut t = Tensor::zeros(&[self.boxes.len(), num_classes]);
        for (i, ls) in self.labels.iter().enumerate() {
            for &k in ls {
                if k >= num_classes {
                    return Err(HarnessError::Data(format!("label {k} is not below {num_classes}")));
                }
                t.data_mut()[i * num_classes + k] = 1.0;
            }
        }
        Ok(t)
    }
}

pub fn read_scene(sidecar: &Path) -> Result<SceneFile> {
    let meta: ClipSidecar = read_json(sidecar)?;
    let dir = sidecar.parent().unwrap_or(Path::new("."));
    let map = FeatureMap::new(read_tensor(&dir.join(&meta.feature_file))?)?;
    let boxes = meta
        .boxes
        .iter()
        .map(|b| ActorBox::new(b.id, b.x1, b.y1, b.x2, b.y2, b.confidence))
        .collect::<cycleacr_core::Result<Vec<_>>>()?;
    Ok(SceneFile {
        video_id: meta.video_id,
        clip_time_s: meta.clip_time_s,
        map,
        boxes,
        labels: meta.boxes.into_iter().map(|b| b.labels).collect(),
    })
}

/// Write samples as clip files plus `manifest.json` under `dir`.
pub fn write_dataset(dir: &Path, samples: &[SceneSample], num_classes: usize, categories: Vec<Option<Category>>) -> Result<Manifest> {
    let mut clips = Vec::with_capacity(samples.len());
    for s in samples {
        let stem = format!("{}_{}", s.video_id, s.clip_time_s);
        let feature_file = format!("{stem}.cten");
        write_tensor(&dir.join("clips").join(&feature_file), s.map.values())?;
        let boxes = s
            .boxes
            .iter()
            .enumerate()
            .map(|(i, b)| BoxRecord {
                id: b.id,
                x1: b.x1,
                y1: b.y1,
                x2: b.x2,
                y2: b.y2,
                confidence: b.confidence,
                labels: (0..num_classes).filter(|&k| s.labels.at2(i, k) > 0.5).collect(),
            })
            .collect();
        let sidecar = ClipSidecar {
            video_id: s.video_id.clone(),
            clip_time_s: s.clip_time_s,
            feature_file,
            boxes,
        };
        let rel = format!("clips/{stem}.json");
        write_json(&dir.join(&rel), &sidecar)?;
        clips.push(rel);
    }
    let manifest = Manifest {
        num_classes,
        categories,
        clips,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Read and pool every clip listed in `dir/manifest.json`.
pub fn load_dataset(dir: &Path, roi_hw: (usize, usize)) -> Result<Dataset> {
    let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
    let clips = manifest
        .clips
        .iter()
        .map(|rel| {
            let scene = read_scene(&dir.join(rel))?;
            let labels = scene.label_tensor(manifest.num_classes)?;
            Clip::from_map(&scene.video_id, scene.clip_time_s, &scene.map, &scene.boxes, labels, roi_hw)
        })
        .collect::<Result<_>>()?;
    Ok(Dataset {
        clips,
        num_classes: manifest.num_classes,
        categories: manifest.categories,
    })
}

fn bank_file(dir: &Path, video_id: &str) -> PathBuf {
    dir.join(format!("{}.bank", hex::encode(video_id.as_bytes())))
}

/// One file per video, named by the hex-encoded video id.
pub fn save_bank(dir: &Path, bank: &MemoryBank) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for video in bank.videos() {
        let records: Vec<BankRecord> = bank
            .video_entries(video)
            .into_iter()
            .map(|e| BankRecord {
                clip_time_s: e.clip_time_s,
                actor_id: e.actor_id,
                feature: Tensor::vector(e.feature.clone()),
            })
            .collect();
        write_bytes(&bank_file(dir, video), &codec::encode_bank_records(&records, Dtype::native())?)?;
    }
    Ok(())
}

pub fn load_bank(dir: &Path, channels: usize, window_s: u32) -> Result<MemoryBank> {
    let mut bank = MemoryBank::with_window(channels, window_s);
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()).map_err(io_err(dir)))
        .collect::<Result<_>>()?;
    paths.sort();
    for path in paths.into_iter().filter(|p| p.extension().is_some_and(|e| e == "bank")) {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let video_id = hex::decode(stem)
            .ok()
            .and_then(|b| String::from_utf8(b).ok())
            .ok_or_else(|| HarnessError::Data(format!("{}: file name is not a hex video id", path.display())))?;
        for r in codec::decode_bank_records(&read_bytes(&path)?)? {
            bank.insert(BankEntry {
                video_id: video_id.clone(),
                clip_time_s: r.clip_time_s,
                actor_id: r.actor_id,
                feature: r.feature.into_data(),
            })?;
        }
    }
    Ok(bank)
}

/// A trained head with its bank.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub model: Model,
    pub bank: MemoryBank,
}

pub fn save_checkpoint(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_json(&dir.join("config.json"), &ckpt.config)?;
    let params = codec::encode_named_tensors(ckpt.model.store.iter().map(|(_, p)| (p.name.as_str(), &p.value)), Dtype::native())?;
    write_bytes(&dir.join("params.bin"), &params)?;
    save_bank(&dir.join("bank"), &ckpt.bank)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let config: RunConfig = read_json(&dir.join("config.json"))?;
    config.validate()?;
    let mut model = Model::new(config.model.clone(), config.seed)?;
    let named = codec::decode_named_tensors(&read_bytes(&dir.join("params.bin"))?)?;
    if named.len() != model.store.len() {
        return Err(HarnessError::Data(format!(
            "checkpoint has {} parameters, the configured model {}",
            named.len(),
            model.store.len()
        )));
    }
    for (name, t) in named {
        model.store.set(&name, t)?;
    }
    let bank_dir = dir.join("bank");
    let bank = if bank_dir.is_dir() {
        load_bank(&bank_dir, model.channels(), cycleacr_core::head::DEFAULT_WINDOW_S)?
    } else {
        MemoryBank::new(model.channels())
    };
    Ok(Checkpoint { config, model, bank })
}
