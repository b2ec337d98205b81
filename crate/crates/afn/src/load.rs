//! Reading vocabularies, model configs and safetensors checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use afn_core::encoder::Tensor;
use afn_core::{ModelConfig, ModelWeights, Vocab};
use safetensors::{Dtype, SafeTensors};
use serde::Deserialize;

use crate::error::{AfnError, Result};

fn read_model_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| AfnError::ModelFile {
        path: path.to_owned(),
        source,
    })
}

/// Loads a `vocab.txt` (one token per line, id = line index).
pub fn load_vocab(path: impl AsRef<Path>) -> Result<Vocab> {
    let path = path.as_ref();
    let bytes = read_model_file(path)?;
    let text = String::from_utf8(bytes).map_err(|e| AfnError::ModelFile {
        path: path.to_owned(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
    })?;
    Vocab::parse(&text).map_err(|source| AfnError::Vocab {
        path: path.to_owned(),
        source,
    })
}

/// The subset of a Hugging Face `config.json` the encoder needs.
#[derive(Debug, Deserialize)]
struct HfBertConfig {
    hidden_size: usize,
    num_hidden_layers: usize,
    num_attention_heads: usize,
    intermediate_size: usize,
    vocab_size: usize,
    max_position_embeddings: usize,
    #[serde(default = "default_type_vocab")]
    type_vocab_size: usize,
    #[serde(default = "default_eps")]
    layer_norm_eps: f32,
    #[serde(default = "default_act")]
    hidden_act: String,
}

fn default_type_vocab() -> usize {
    2
}

fn default_eps() -> f32 {
    1e-12
}

fn default_act() -> String {
    "gelu".into()
}

pub fn load_model_config(path: impl AsRef<Path>) -> Result<ModelConfig> {
    let path = path.as_ref();
    let err = |message: String| AfnError::ModelConfig {
        path: path.to_owned(),
        message,
    };
    let bytes = read_model_file(path)?;
    let hf: HfBertConfig = serde_json::from_slice(&bytes).map_err(|e| err(e.to_string()))?;
    if hf.hidden_act != "gelu" {
        return Err(err(format!(
            "unsupported activation {:?}; only exact gelu is implemented",
            hf.hidden_act
        )));
    }
    let config = ModelConfig {
        num_layers: hf.num_hidden_layers,
        hidden_size: hf.hidden_size,
        num_heads: hf.num_attention_heads,
        intermediate_size: hf.intermediate_size,
        vocab_size: hf.vocab_size,
        max_position: hf.max_position_embeddings,
        type_vocab_size: hf.type_vocab_size,
        layer_norm_eps: hf.layer_norm_eps,
    };
    config.validate().map_err(|e| err(e.to_string()))?;
    Ok(config)
}

/// Picks the model config: an explicit path, else a `config.json` next to
/// the checkpoint, else bert-base.
pub fn resolve_model_config(model: &Path, explicit: Option<&Path>) -> Result<ModelConfig> {
    if let Some(path) = explicit {
        return load_model_config(path);
    }
    let sibling: PathBuf = model.with_file_name("config.json");
    if sibling.is_file() {
        load_model_config(sibling)
    } else {
        Ok(ModelConfig::bert_base())
    }
}

fn decode(dtype: Dtype, bytes: &[u8]) -> Option<Vec<f32>> {
    let le2 = |c: &[u8]| u16::from_le_bytes([c[0], c[1]]);
    Some(match dtype {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()) as f32)
            .collect(),
        Dtype::F16 => bytes
            .chunks_exact(2)
            .map(|c| half::f16::from_bits(le2(c)).to_f32())
            .collect(),
        Dtype::BF16 => bytes
            .chunks_exact(2)
            .map(|c| half::bf16::from_bits(le2(c)).to_f32())
            .collect(),
        _ => return None,
    })
}

/// Decodes every floating-point tensor of a safetensors file. Integer
/// tensors (e.g. `position_ids` buffers) are skipped.
pub fn read_safetensors(path: impl AsRef<Path>) -> Result<BTreeMap<String, Tensor>> {
    let path = path.as_ref();
    let bytes = read_model_file(path)?;
    let st = SafeTensors::deserialize(&bytes).map_err(|e| AfnError::Checkpoint {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    let mut out = BTreeMap::new();
    for (name, view) in st.tensors() {
        if let Some(data) = decode(view.dtype(), view.data()) {
            out.insert(name, Tensor::new(view.shape().to_vec(), data));
        }
    }
    Ok(out)
}

/// Loads and shape-checks encoder weights from a safetensors checkpoint.
pub fn load_weights(path: impl AsRef<Path>, config: &ModelConfig) -> Result<ModelWeights> {
    let path = path.as_ref();
    let mut tensors = read_safetensors(path)?;
    ModelWeights::from_source(&mut tensors, config).map_err(|source| AfnError::Weights {
        path: path.to_owned(),
        source,
    })
}
