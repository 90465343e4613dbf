//! Dataset directories: `manifest.json`, `labels.jsonl` and one binary PGM
//! per frame under `frames/<sequence>/<t>.pgm`.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use beamvlm_core::phy::{BeamCodebook, CodebookConfig};
use beamvlm_core::scene::{
    generate_sequence, split_assignments, window_count, window_samples, DatasetManifest, GrayImage, Sample,
    SampleEntry, ScenarioConfig, SequenceEntry, Split, WorldConfig, N_FRAMES, WINDOW,
};
use serde::{Deserialize, Serialize};

use crate::{read_to_string, write_file, Error, Result};

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// One line of `labels.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRecord {
    #[serde(rename = "seq")]
    pub sequence_id: usize,
    pub t: usize,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub range_m: f64,
    pub beam: usize,
}

pub fn frame_path(dir: &Path, sequence_id: usize, t: usize) -> PathBuf {
    dir.join("frames").join(format!("{sequence_id:05}")).join(format!("{t:04}.pgm"))
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    let mut bytes = Vec::new();
    image::codecs::pnm::PnmEncoder::new(&mut bytes)
        .with_subtype(image::codecs::pnm::PnmSubtype::Graymap(image::codecs::pnm::SampleEncoding::Binary))
        .encode(img.pixels.as_slice(), img.width as u32, img.height as u32, image::ExtendedColorType::L8)
        .map_err(|e| Error::format(path, e.to_string()))?;
    write_file(path, bytes)
}

/// Reads a binary PGM (P5) or, when `channels == 3`, a PPM (P6) converted
/// to luma.
pub fn read_pgm(path: &Path, channels: u32) -> Result<GrayImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Pnm)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let found = u32::from(img.color().channel_count());
    if found != channels {
        return Err(Error::format(path, format!("{found} channels, manifest declares {channels}")));
    }
    let luma = img.to_luma8();
    let (w, h) = luma.dimensions();
    Ok(GrayImage { width: w as usize, height: h as usize, pixels: luma.into_raw() })
}

/// An opened dataset directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
}

/// Seeds used when generating a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetSeeds {
    /// Master seed recorded in the manifest.
    pub master: u64,
    pub trajectories: u64,
    pub split: u64,
}

/// Renders every sequence of a scenario, writes frames and labels, and
/// records the sample-level split in the manifest.
pub fn build_dataset(
    dir: &Path,
    scenario: &ScenarioConfig,
    world: &WorldConfig,
    codebook: &CodebookConfig,
    train_fraction: f64,
    seeds: DatasetSeeds,
) -> Result<Dataset> {
    world.validate(None)?;
    let cb = codebook.build()?;
    let trajectories = scenario.trajectories(world, seeds.trajectories)?;
    let labels_path = dir.join("labels.jsonl");
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let file = std::fs::File::create(&labels_path).map_err(|e| Error::io(&labels_path, e))?;
    let mut labels = BufWriter::new(file);
    let mut sequences = Vec::with_capacity(trajectories.len());
    let mut windows = Vec::new();
    for (id, traj) in trajectories.iter().enumerate() {
        let seq = generate_sequence(id, traj, world, &cb)?;
        for (t, (frame, (state, &beam))) in seq.frames.iter().zip(seq.states.iter().zip(&seq.beams)).enumerate() {
            write_pgm(&frame_path(dir, id, t), frame)?;
            let rec = LabelRecord {
                sequence_id: id,
                t,
                azimuth_deg: state.azimuth_deg,
                elevation_deg: state.elevation_deg,
                range_m: state.range_m,
                beam,
            };
            let line = serde_json::to_string(&rec).expect("label records serialize");
            writeln!(labels, "{line}").map_err(|e| Error::io(&labels_path, e))?;
        }
        for offset in 0..window_count(traj.length) {
            windows.push((id, offset));
        }
        sequences.push(SequenceEntry { id, length: traj.length, trajectory: traj.clone() });
    }
    labels.flush().map_err(|e| Error::io(&labels_path, e))?;
    let split = split_assignments(windows.len(), train_fraction, seeds.split);
    let samples: Vec<SampleEntry> = windows
        .iter()
        .zip(&split)
        .enumerate()
        .map(|(index, (&(sequence_id, offset), &split))| SampleEntry { index, sequence_id, offset, split })
        .collect();
    let num_train = split.iter().filter(|&&s| s == Split::Train).count();
    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        scenario: scenario.clone(),
        world: world.clone(),
        codebook: *codebook,
        channels: 1,
        seed: seeds.master,
        train_fraction,
        split_seed: seeds.split,
        sequences,
        num_train,
        num_test: samples.len() - num_train,
        samples,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&dir.join("manifest.json"), json)?;
    Ok(Dataset { dir: dir.to_path_buf(), manifest })
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = read_to_string(&path)?;
        let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        if manifest.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::format(&path, format!("dataset format version {}", manifest.format_version)));
        }
        Ok(Self { dir: dir.to_path_buf(), manifest })
    }

    pub fn codebook(&self) -> Result<BeamCodebook> {
        Ok(self.manifest.codebook.build()?)
    }

    pub fn scenario_tag(&self) -> &str {
        &self.manifest.scenario.scenario_tag
    }

    pub fn labels(&self) -> Result<Vec<LabelRecord>> {
        let path = self.dir.join("labels.jsonl");
        let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(|e| Error::format(&path, format!("line {}: {e}", i + 1)))?);
        }
        Ok(out)
    }

    fn beams_by_sequence(&self) -> Result<HashMap<usize, Vec<usize>>> {
        let mut map: HashMap<usize, Vec<usize>> = HashMap::new();
        for rec in self.labels()? {
            let v = map.entry(rec.sequence_id).or_default();
            if v.len() != rec.t {
                return Err(Error::format(self.dir.join("labels.jsonl"), "labels out of order"));
            }
            v.push(rec.beam);
        }
        Ok(map)
    }

    fn frames_range(&self, sequence_id: usize, range: std::ops::Range<usize>) -> Result<Vec<GrayImage>> {
        range.map(|t| read_pgm(&frame_path(&self.dir, sequence_id, t), self.manifest.channels)).collect()
    }

    fn check_frames(&self, frames: &[GrayImage], entry: &SampleEntry) -> Result<()> {
        let w = &self.manifest.world;
        if let Some(f) = frames.iter().find(|f| f.width != w.image_width || f.height != w.image_height) {
            return Err(Error::format(
                frame_path(&self.dir, entry.sequence_id, entry.offset),
                format!("frame is {}×{}, manifest declares {}×{}", f.width, f.height, w.image_width, w.image_height),
            ));
        }
        Ok(())
    }

    /// Loads one sample by its manifest index.
    pub fn load_sample(&self, index: usize) -> Result<Sample> {
        let len = self.manifest.samples.len();
        let entry = *self.manifest.samples.get(index).ok_or(Error::Index { index, len })?;
        let beams = self.beams_by_sequence()?;
        let seq = beams
            .get(&entry.sequence_id)
            .ok_or_else(|| Error::format(self.dir.join("labels.jsonl"), "missing sequence labels"))?;
        if seq.len() < entry.offset + WINDOW {
            return Err(Error::format(self.dir.join("labels.jsonl"), "sequence shorter than its windows"));
        }
        let frames = self.frames_range(entry.sequence_id, entry.offset..entry.offset + N_FRAMES)?;
        self.check_frames(&frames, &entry)?;
        Ok(Sample {
            frames,
            target_beams: seq[entry.offset + N_FRAMES..entry.offset + WINDOW].to_vec(),
            history_beams: seq[entry.offset..entry.offset + N_FRAMES].to_vec(),
            sequence_id: entry.sequence_id,
            offset: entry.offset,
        })
    }

    /// All samples of a split (or every sample), in manifest order. Each
    /// sequence's frames are read once.
    pub fn samples(&self, split: Option<Split>) -> Result<Vec<Sample>> {
        let beams = self.beams_by_sequence()?;
        let mut cache: HashMap<usize, Vec<Sample>> = HashMap::new();
        let mut out = Vec::new();
        for entry in &self.manifest.samples {
            if split.is_some_and(|s| s != entry.split) {
                continue;
            }
            if let std::collections::hash_map::Entry::Vacant(e) = cache.entry(entry.sequence_id) {
                let seq_beams = beams
                    .get(&entry.sequence_id)
                    .ok_or_else(|| Error::format(self.dir.join("labels.jsonl"), "missing sequence labels"))?;
                let frames = self.frames_range(entry.sequence_id, 0..seq_beams.len())?;
                self.check_frames(&frames, entry)?;
                e.insert(window_samples(entry.sequence_id, &frames, seq_beams));
            }
            let windows = &cache[&entry.sequence_id];
            let sample = windows.get(entry.offset).ok_or(Error::Index { index: entry.offset, len: windows.len() })?;
            out.push(sample.clone());
        }
        Ok(out)
    }
}
