//! Checkpoint files: the magic `BVLMCKPT`, a little-endian `u32` format
//! version, a little-endian `u64` header length, a JSON header, the
//! parameter arrays as little-endian `f32`, and a CRC32 of everything
//! before it.

use std::path::Path;

use beamvlm_core::baseline::{BaselineConfig, RecurrentClassifier};
use beamvlm_core::nn::{ParamStore, Tensor};
use beamvlm_core::text::PromptTemplate;
use beamvlm_core::vlm::{is_lora_param, BeamVlm, LoraSpec, VlmConfig};
use serde::{Deserialize, Serialize};

use crate::{write_file, Error, Result};

pub const MAGIC: &[u8; 8] = b"BVLMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const PREAMBLE: usize = 8 + 4 + 8;

/// What the arrays describe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Vlm { config: VlmConfig, lora: Option<LoraSpec>, prompt: PromptTemplate },
    Baseline { config: BaselineConfig },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMeta {
    pub seed: u64,
    pub step: usize,
    pub loss: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrayGroup {
    Base,
    Lora,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayEntry {
    name: String,
    group: ArrayGroup,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelSpec,
    meta: TrainingMeta,
    arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelSpec,
    pub meta: TrainingMeta,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    pub fn from_vlm(model: &BeamVlm<f32>, prompt: &PromptTemplate, meta: TrainingMeta) -> Self {
        Self {
            model: ModelSpec::Vlm { config: model.config.clone(), lora: model.lora(), prompt: prompt.clone() },
            meta,
            params: model.params.clone(),
        }
    }

    pub fn from_baseline(model: &RecurrentClassifier<f32>, meta: TrainingMeta) -> Self {
        Self { model: ModelSpec::Baseline { config: model.config.clone() }, meta, params: model.params.clone() }
    }

    pub fn into_vlm(self) -> Result<(BeamVlm<f32>, PromptTemplate)> {
        match self.model {
            ModelSpec::Vlm { config, lora, prompt } => Ok((BeamVlm::from_params(config, self.params, lora)?, prompt)),
            ModelSpec::Baseline { .. } => Err(Error::Config("checkpoint holds a baseline, not a VLM".into())),
        }
    }

    pub fn into_baseline(self) -> Result<RecurrentClassifier<f32>> {
        match self.model {
            ModelSpec::Baseline { config } => Ok(RecurrentClassifier::from_params(config, self.params)?),
            ModelSpec::Vlm { .. } => Err(Error::Config("checkpoint holds a VLM, not a baseline".into())),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        // Base arrays first, adapters after, each in store order.
        let mut order: Vec<_> = self.params.entries().iter().collect();
        order.sort_by_key(|e| is_lora_param(&e.name));
        let arrays = order
            .iter()
            .map(|e| ArrayEntry {
                name: e.name.clone(),
                group: if is_lora_param(&e.name) { ArrayGroup::Lora } else { ArrayGroup::Base },
                shape: e.value.shape().to_vec(),
                trainable: e.trainable,
            })
            .collect();
        let header = Header { model: self.model.clone(), meta: self.meta.clone(), arrays };
        let json = serde_json::to_vec(&header).expect("checkpoint header serializes");
        let mut out = Vec::with_capacity(PREAMBLE + json.len() + 4 * self.params.num_elements() + 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for e in order {
            for v in e.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Parses checkpoint bytes; `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |reason: &str| Error::Corruption { path: path.to_path_buf(), reason: reason.into() };
        if bytes.len() < PREAMBLE + 4 || &bytes[..8] != MAGIC {
            return Err(corrupt("missing checkpoint magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version { found: version, expected: CHECKPOINT_VERSION });
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(trailer.try_into().expect("4 bytes")) {
            return Err(corrupt("checksum mismatch"));
        }
        let header_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let json =
            body.get(PREAMBLE..PREAMBLE.saturating_add(header_len)).ok_or_else(|| corrupt("header overruns file"))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| corrupt(&format!("unreadable header: {e}")))?;
        let mut data = &body[PREAMBLE + header_len..];
        let mut params = ParamStore::new();
        for a in &header.arrays {
            let n: usize = a.shape.iter().product();
            if data.len() < 4 * n {
                return Err(corrupt("array data shorter than the header declares"));
            }
            let values: Vec<f32> =
                data[..4 * n].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            data = &data[4 * n..];
            if params.find(&a.name).is_some() {
                return Err(corrupt(&format!("duplicate array {}", a.name)));
            }
            let id = params.add(&a.name, Tensor::from_vec(&a.shape, values).map_err(|e| corrupt(&e.to_string()))?);
            params.set_trainable(id, a.trainable);
        }
        if !data.is_empty() {
            return Err(corrupt("trailing bytes after the arrays"));
        }
        Ok(Self { model: header.model, meta: header.meta, params })
    }

    pub fn store(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
