//! Golden hidden-state fixtures.
//!
//! One directory per input sentence:
//!
//! ```text
//! <id>/meta.json      text, tokens, ids, generator metadata, layer table
//! <id>/layer_08.f32   rows × cols little-endian f32, row-major
//! <id>/norms.csv      layer,index,token,norm
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use afn_core::metrics::token_strength;
use afn_core::{HiddenStates, Matrix};
use serde::{Deserialize, Serialize};

use crate::error::{AfnError, Result};

pub const FIXTURE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub layer: usize,
    pub file: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureMeta {
    pub format_version: u32,
    pub id: String,
    pub text: String,
    pub tokens: Vec<String>,
    pub ids: Vec<u32>,
    pub layers: Vec<LayerEntry>,
    #[serde(default)]
    pub generator: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormRow {
    pub layer: usize,
    pub index: usize,
    pub token: String,
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenFixture {
    pub meta: FixtureMeta,
    pub layers: BTreeMap<usize, Matrix>,
    pub norms: Vec<NormRow>,
}

impl HiddenFixture {
    pub fn norms_at(&self, layer: usize) -> Vec<f64> {
        self.norms.iter().filter(|r| r.layer == layer).map(|r| r.norm).collect()
    }
}

fn fixture_err(path: &Path, message: impl Into<String>) -> AfnError {
    AfnError::Fixture {
        path: path.to_owned(),
        message: message.into(),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| AfnError::Read {
        path: path.to_owned(),
        source,
    })
}

pub fn load_hidden_fixture(dir: impl AsRef<Path>) -> Result<HiddenFixture> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    let meta: FixtureMeta =
        serde_json::from_slice(&read(&meta_path)?).map_err(|e| fixture_err(&meta_path, e.to_string()))?;
    if meta.format_version != FIXTURE_FORMAT_VERSION {
        return Err(fixture_err(
            &meta_path,
            format!("unsupported format_version {}", meta.format_version),
        ));
    }
    if meta.tokens.len() != meta.ids.len() {
        return Err(fixture_err(&meta_path, "tokens and ids differ in length"));
    }

    let mut layers = BTreeMap::new();
    for entry in &meta.layers {
        let path = dir.join(&entry.file);
        let bytes = read(&path)?;
        if bytes.len() != entry.rows * entry.cols * 4 {
            return Err(fixture_err(
                &path,
                format!("{} bytes, expected {}x{} f32", bytes.len(), entry.rows, entry.cols),
            ));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let m = Matrix::from_vec(entry.rows, entry.cols, data).expect("length checked");
        layers.insert(entry.layer, m);
    }

    let norms_path = dir.join("norms.csv");
    let norms = if norms_path.is_file() {
        let mut reader = csv::Reader::from_path(&norms_path).map_err(|e| fixture_err(&norms_path, e.to_string()))?;
        reader
            .deserialize()
            .collect::<std::result::Result<Vec<NormRow>, _>>()
            .map_err(|e| fixture_err(&norms_path, e.to_string()))?
    } else {
        Vec::new()
    };
    Ok(HiddenFixture { meta, layers, norms })
}

/// Writes `states` at the requested layers in fixture layout.
pub fn write_hidden_fixture(
    dir: impl AsRef<Path>,
    id: &str,
    text: &str,
    ids: &[u32],
    states: &HiddenStates,
    layers: &[usize],
    generator: serde_json::Value,
) -> Result<PathBuf> {
    let dir = dir.as_ref().join(id);
    let write_err = |path: &Path, source| AfnError::Write {
        path: path.to_owned(),
        source,
    };
    fs::create_dir_all(&dir).map_err(|e| write_err(&dir, e))?;
    let mut entries = Vec::new();
    let mut norms = Vec::new();
    for &layer in layers {
        let m = states.layer(layer).map_err(afn_core::metrics::MetricsError::from)?;
        let file = format!("layer_{layer:02}.f32");
        let bytes: Vec<u8> = m.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect();
        let path = dir.join(&file);
        fs::write(&path, bytes).map_err(|e| write_err(&path, e))?;
        entries.push(LayerEntry {
            layer,
            file,
            rows: m.rows(),
            cols: m.cols(),
        });
        for (index, row) in m.iter_rows().enumerate() {
            norms.push(NormRow {
                layer,
                index,
                token: states.tokens[index].clone(),
                norm: token_strength(row)?,
            });
        }
    }
    let meta = FixtureMeta {
        format_version: FIXTURE_FORMAT_VERSION,
        id: id.into(),
        text: text.into(),
        tokens: states.tokens.clone(),
        ids: ids.to_vec(),
        layers: entries,
        generator,
    };
    let meta_path = dir.join("meta.json");
    let json = serde_json::to_vec_pretty(&meta).expect("serializable");
    fs::write(&meta_path, json).map_err(|e| write_err(&meta_path, e))?;

    let norms_path = dir.join("norms.csv");
    let csv_err = |e: csv::Error| fixture_err(&norms_path, e.to_string());
    let mut w = csv::Writer::from_path(&norms_path).map_err(csv_err)?;
    w.write_record(["layer", "index", "token", "norm"]).map_err(csv_err)?;
    for row in &norms {
        w.write_record([
            row.layer.to_string(),
            row.index.to_string(),
            row.token.clone(),
            format!("{:.9}", row.norm),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| write_err(&norms_path, e))?;
    Ok(dir)
}
