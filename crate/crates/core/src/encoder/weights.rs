use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{ConfigError, ModelConfig};
use crate::matrix::Matrix;

/// A decoded f32 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        Self { shape, data }
    }
}

/// Anything that can hand out named tensors, e.g. a decoded checkpoint.
pub trait TensorSource {
    /// Removes and returns the tensor stored under exactly `name`.
    fn take(&mut self, name: &str) -> Option<Tensor>;
}

impl TensorSource for BTreeMap<String, Tensor> {
    fn take(&mut self, name: &str) -> Option<Tensor> {
        self.remove(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WeightsError {
    #[error("invalid model config: {0}")]
    Config(#[from] ConfigError),
    #[error("missing tensor {0}")]
    MissingTensor(String),
    #[error("tensor {name} has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("tensor {name} has {found} values but its shape implies {expected}")]
    DataLength {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("tensor {0} contains non-finite values")]
    NonFinite(String),
}

/// Dense layer with a PyTorch-layout `[out, in]` weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f32>,
}

impl Linear {
    pub fn in_features(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_features(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub attention_output: Linear,
    pub attention_norm: LayerNorm,
    pub intermediate: Linear,
    pub output: Linear,
    pub output_norm: LayerNorm,
}

/// All encoder parameters, shape-checked against the config they were loaded
/// with. Pooler and task heads are never read.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub(crate) config: ModelConfig,
    pub word_embeddings: Matrix,
    pub position_embeddings: Matrix,
    pub token_type_embeddings: Matrix,
    pub embedding_norm: LayerNorm,
    pub layers: Vec<EncoderLayer>,
}

/// Canonical tensor names (Hugging Face `BertModel` naming) with their
/// expected shapes.
pub fn tensor_names(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let h = config.hidden_size;
    let i = config.intermediate_size;
    let mut names = vec![
        ("embeddings.word_embeddings.weight".into(), vec![config.vocab_size, h]),
        (
            "embeddings.position_embeddings.weight".into(),
            vec![config.max_position, h],
        ),
        (
            "embeddings.token_type_embeddings.weight".into(),
            vec![config.type_vocab_size, h],
        ),
        ("embeddings.LayerNorm.weight".into(), vec![h]),
        ("embeddings.LayerNorm.bias".into(), vec![h]),
    ];
    for l in 0..config.num_layers {
        let p = format!("encoder.layer.{l}");
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
            names.push((format!("{p}.{suffix}"), shape));
        }
    }
    names
}

/// Spellings a canonical name may appear under in published checkpoints:
/// with or without the `bert.` prefix, and with TF-era `gamma`/`beta`
/// layer-norm parameter names.
fn aliases(name: &str) -> Vec<String> {
    let mut bases = vec![String::from(name)];
    if let Some(stem) = name.strip_suffix("LayerNorm.weight") {
        bases.push(format!("{stem}LayerNorm.gamma"));
    } else if let Some(stem) = name.strip_suffix("LayerNorm.bias") {
        bases.push(format!("{stem}LayerNorm.beta"));
    }
    let mut out = Vec::with_capacity(bases.len() * 2);
    for b in bases {
        out.push(format!("bert.{b}"));
        out.push(b);
    }
    // Prefer the unprefixed canonical spelling.
    out.swap(0, 1);
    out
}

struct Loader<'a, S: TensorSource> {
    source: &'a mut S,
}

impl<S: TensorSource> Loader<'_, S> {
    fn raw(&mut self, name: &str, shape: &[usize]) -> Result<Vec<f32>, WeightsError> {
        let tensor = aliases(name)
            .iter()
            .find_map(|alias| self.source.take(alias))
            .ok_or_else(|| WeightsError::MissingTensor(name.into()))?;
        if tensor.shape != shape {
            return Err(WeightsError::ShapeMismatch {
                name: name.into(),
                expected: shape.to_vec(),
                found: tensor.shape,
            });
        }
        let expected: usize = shape.iter().product();
        if tensor.data.len() != expected {
            return Err(WeightsError::DataLength {
                name: name.into(),
                expected,
                found: tensor.data.len(),
            });
        }
        if !tensor.data.iter().all(|v| v.is_finite()) {
            return Err(WeightsError::NonFinite(name.into()));
        }
        Ok(tensor.data)
    }

    fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<Matrix, WeightsError> {
        let data = self.raw(name, &[rows, cols])?;
        Ok(Matrix::from_vec(rows, cols, data).expect("length checked"))
    }

    fn vector(&mut self, name: &str, len: usize) -> Result<Vec<f32>, WeightsError> {
        self.raw(name, &[len])
    }

    fn linear(&mut self, prefix: &str, out: usize, inp: usize) -> Result<Linear, WeightsError> {
        Ok(Linear {
            weight: self.matrix(&format!("{prefix}.weight"), out, inp)?,
            bias: self.vector(&format!("{prefix}.bias"), out)?,
        })
    }

    fn layer_norm(&mut self, prefix: &str, len: usize) -> Result<LayerNorm, WeightsError> {
        Ok(LayerNorm {
            gamma: self.vector(&format!("{prefix}.weight"), len)?,
            beta: self.vector(&format!("{prefix}.bias"), len)?,
        })
    }
}

impl ModelWeights {
    /// Pulls every encoder tensor out of `source` and checks it against
    /// `config`.
    pub fn from_source<S: TensorSource>(source: &mut S, config: &ModelConfig) -> Result<Self, WeightsError> {
        config.validate()?;
        let h = config.hidden_size;
        let i = config.intermediate_size;
        let mut ld = Loader { source };
        let word_embeddings = ld.matrix("embeddings.word_embeddings.weight", config.vocab_size, h)?;
        let position_embeddings = ld.matrix("embeddings.position_embeddings.weight", config.max_position, h)?;
        let token_type_embeddings = ld.matrix("embeddings.token_type_embeddings.weight", config.type_vocab_size, h)?;
        let embedding_norm = ld.layer_norm("embeddings.LayerNorm", h)?;
        let mut layers = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            let p = format!("encoder.layer.{l}");
            layers.push(EncoderLayer {
                query: ld.linear(&format!("{p}.attention.self.query"), h, h)?,
                key: ld.linear(&format!("{p}.attention.self.key"), h, h)?,
                value: ld.linear(&format!("{p}.attention.self.value"), h, h)?,
                attention_output: ld.linear(&format!("{p}.attention.output.dense"), h, h)?,
                attention_norm: ld.layer_norm(&format!("{p}.attention.output.LayerNorm"), h)?,
                intermediate: ld.linear(&format!("{p}.intermediate.dense"), i, h)?,
                output: ld.linear(&format!("{p}.output.dense"), h, i)?,
                output_norm: ld.layer_norm(&format!("{p}.output.LayerNorm"), h)?,
            });
        }
        Ok(Self {
            config: *config,
            word_embeddings,
            position_embeddings,
            token_type_embeddings,
            embedding_norm,
            layers,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            num_layers: 2,
            hidden_size: 8,
            num_heads: 2,
            intermediate_size: 16,
            vocab_size: 10,
            max_position: 12,
            type_vocab_size: 2,
            layer_norm_eps: 1e-12,
        }
    }

    fn full_source(config: &ModelConfig) -> BTreeMap<String, Tensor> {
        tensor_names(config)
            .into_iter()
            .map(|(name, shape)| {
                let n = shape.iter().product();
                (name, Tensor::new(shape, vec![0.5; n]))
            })
            .collect()
    }

    #[test]
    fn loads_complete_source() {
        let c = tiny();
        let w = ModelWeights::from_source(&mut full_source(&c), &c).unwrap();
        assert_eq!(w.layers.len(), 2);
        assert_eq!(w.word_embeddings.shape(), (10, 8));
        assert_eq!(w.layers[1].intermediate.out_features(), 16);
        assert_eq!(tensor_names(&c).len(), 5 + 2 * 16);
    }

    #[test]
    fn missing_tensor_is_named() {
        let c = tiny();
        let mut src = full_source(&c);
        src.remove("encoder.layer.1.attention.self.key.bias");
        assert_eq!(
            ModelWeights::from_source(&mut src, &c).unwrap_err(),
            WeightsError::MissingTensor("encoder.layer.1.attention.self.key.bias".into())
        );
    }

    #[test]
    fn shape_mismatch_is_named() {
        let c = tiny();
        let mut src = full_source(&c);
        src.insert(
            "encoder.layer.0.intermediate.dense.weight".into(),
            Tensor::new(vec![8, 16], vec![0.0; 128]),
        );
        let err = ModelWeights::from_source(&mut src, &c).unwrap_err();
        assert!(matches!(
            err,
            WeightsError::ShapeMismatch { ref name, .. } if name == "encoder.layer.0.intermediate.dense.weight"
        ));
    }

    #[test]
    fn accepts_prefixed_and_gamma_beta_names() {
        let c = tiny();
        let mut src: BTreeMap<String, Tensor> = full_source(&c)
            .into_iter()
            .map(|(k, v)| {
                let k = k
                    .replace("LayerNorm.weight", "LayerNorm.gamma")
                    .replace("LayerNorm.bias", "LayerNorm.beta");
                (format!("bert.{k}"), v)
            })
            .collect();
        ModelWeights::from_source(&mut src, &c).unwrap();
    }
}
