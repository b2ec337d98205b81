//! Random tiny checkpoints written in safetensors format.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safetensors::tensor::{serialize_to_file, Dtype, TensorView};

use super::reference::{RefConfig, Tensors};

#[derive(Debug, Clone, Copy)]
pub struct TinySpec {
    pub vocab: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub intermediate: usize,
    pub max_position: usize,
}

pub const TINY: TinySpec = TinySpec {
    vocab: 50,
    hidden: 8,
    layers: 2,
    heads: 2,
    intermediate: 32,
    max_position: 32,
};

impl TinySpec {
    pub fn reference(&self) -> RefConfig {
        RefConfig {
            layers: self.layers,
            heads: self.heads,
            eps: 1e-12,
        }
    }

    fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (h, i) = (self.hidden, self.intermediate);
        let mut v = vec![
            ("embeddings.word_embeddings.weight".to_string(), vec![self.vocab, h]),
            (
                "embeddings.position_embeddings.weight".into(),
                vec![self.max_position, h],
            ),
            ("embeddings.token_type_embeddings.weight".into(), vec![2, h]),
            ("embeddings.LayerNorm.weight".into(), vec![h]),
            ("embeddings.LayerNorm.bias".into(), vec![h]),
        ];
        for l in 0..self.layers {
            for (suffix, shape) in [
                ("attention.self.query.weight", vec![h, h]),
                ("attention.self.query.bias", vec![h]),
                ("attention.self.key.weight", vec![h, h]),
                ("attention.self.key.bias", vec![h]),
                ("attention.self.value.weight", vec![h, h]),
                ("attention.self.value.bias", vec![h]),
                ("attention.output.dense.weight", vec![h, h]),
                ("attention.output.dense.bias", vec![h]),
                ("attention.output.LayerNorm.weight", vec![h]),
                ("attention.output.LayerNorm.bias", vec![h]),
                ("intermediate.dense.weight", vec![i, h]),
                ("intermediate.dense.bias", vec![i]),
                ("output.dense.weight", vec![h, i]),
                ("output.dense.bias", vec![h]),
                ("output.LayerNorm.weight", vec![h]),
                ("output.LayerNorm.bias", vec![h]),
            ] {
                v.push((format!("encoder.layer.{l}.{suffix}"), shape));
            }
        }
        v
    }

    pub fn random(&self, seed: u64) -> Tensors {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.shapes()
            .into_iter()
            .map(|(name, shape)| {
                let n = shape.iter().product();
                let centre = if name.ends_with("LayerNorm.weight") { 1.0 } else { 0.0 };
                let data = (0..n).map(|_| centre + rng.gen_range(-0.6f32..0.6)).collect();
                (name, (shape, data))
            })
            .collect()
    }

    pub fn config_json(&self) -> serde_json::Value {
        serde_json::json!({
            "model_type": "bert",
            "hidden_act": "gelu",
            "vocab_size": self.vocab,
            "hidden_size": self.hidden,
            "num_hidden_layers": self.layers,
            "num_attention_heads": self.heads,
            "intermediate_size": self.intermediate,
            "max_position_embeddings": self.max_position,
            "type_vocab_size": 2,
            "layer_norm_eps": 1e-12
        })
    }
}

/// Writes `model.safetensors` and `config.json` into `dir`; returns the model path.
pub fn write_checkpoint(dir: &Path, spec: &TinySpec, tensors: &Tensors) -> PathBuf {
    let bytes: Vec<(String, Vec<usize>, Vec<u8>)> = tensors
        .iter()
        .map(|(name, (shape, data))| {
            (
                name.clone(),
                shape.clone(),
                data.iter().flat_map(|v| v.to_le_bytes()).collect(),
            )
        })
        .collect();
    let views: Vec<(String, TensorView<'_>)> = bytes
        .iter()
        .map(|(name, shape, b)| (name.clone(), TensorView::new(Dtype::F32, shape.clone(), b).unwrap()))
        .collect();
    let path = dir.join("model.safetensors");
    serialize_to_file(views, &None, &path).unwrap();
    std::fs::write(
        dir.join("config.json"),
        serde_json::to_string_pretty(&spec.config_json()).unwrap(),
    )
    .unwrap();
    path
}
