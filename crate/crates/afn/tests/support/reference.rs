//! Straight-line f64 BERT encoder working on raw Hugging Face tensor names.

use std::collections::BTreeMap;

use statrs::function::erf::erf;

pub type Tensors = BTreeMap<String, (Vec<usize>, Vec<f32>)>;

#[derive(Debug, Clone, Copy)]
pub struct RefConfig {
    pub layers: usize,
    pub heads: usize,
    pub eps: f64,
}

type Rows = Vec<Vec<f64>>;

struct Params<'a>(&'a Tensors);

impl Params<'_> {
    fn vec(&self, name: &str) -> Vec<f64> {
        let (_, data) = self.0.get(name).unwrap_or_else(|| panic!("missing {name}"));
        data.iter().map(|&v| v as f64).collect()
    }

    fn mat(&self, name: &str) -> Rows {
        let (shape, data) = self.0.get(name).unwrap_or_else(|| panic!("missing {name}"));
        data.chunks(shape[1])
            .map(|r| r.iter().map(|&v| v as f64).collect())
            .collect()
    }
}

/// y = x Wᵀ + b, W stored as [out][in].
fn dense(x: &Rows, w: &Rows, b: &[f64]) -> Rows {
    x.iter()
        .map(|xi| {
            w.iter()
                .zip(b)
                .map(|(wo, bo)| xi.iter().zip(wo).map(|(a, c)| a * c).sum::<f64>() + bo)
                .collect()
        })
        .collect()
}

fn norm(x: &Rows, gamma: &[f64], beta: &[f64], eps: f64) -> Rows {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mu = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
            row.iter()
                .enumerate()
                .map(|(k, v)| (v - mu) / (var + eps).sqrt() * gamma[k] + beta[k])
                .collect()
        })
        .collect()
}

fn add(a: &Rows, b: &Rows) -> Rows {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
        .collect()
}

/// Hidden states for every layer; keys at positions >= `attended` get -10000.
pub fn reference_forward(t: &Tensors, cfg: RefConfig, ids: &[u32], attended: usize) -> Vec<Rows> {
    let p = Params(t);
    let words = p.mat("embeddings.word_embeddings.weight");
    let positions = p.mat("embeddings.position_embeddings.weight");
    let types = p.mat("embeddings.token_type_embeddings.weight");
    let n = ids.len();
    let x: Rows = ids
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            (0..words[0].len())
                .map(|k| words[id as usize][k] + positions[i][k] + types[0][k])
                .collect()
        })
        .collect();
    let mut h = norm(
        &x,
        &p.vec("embeddings.LayerNorm.weight"),
        &p.vec("embeddings.LayerNorm.bias"),
        cfg.eps,
    );
    let mut out = vec![h.clone()];
    for l in 0..cfg.layers {
        let name = |s: &str| format!("encoder.layer.{l}.{s}");
        let lin = |s: &str, x: &Rows| {
            dense(
                x,
                &p.mat(&name(&format!("{s}.weight"))),
                &p.vec(&name(&format!("{s}.bias"))),
            )
        };
        let q = lin("attention.self.query", &h);
        let k = lin("attention.self.key", &h);
        let v = lin("attention.self.value", &h);
        let width = q[0].len();
        let d = width / cfg.heads;
        let mut ctx = vec![vec![0.0; width]; n];
        for head in 0..cfg.heads {
            let off = head * d;
            for i in 0..n {
                let scores: Vec<f64> = (0..n)
                    .map(|j| {
                        let s: f64 = (0..d).map(|c| q[i][off + c] * k[j][off + c]).sum();
                        s / (d as f64).sqrt() + if j < attended { 0.0 } else { -10000.0 }
                    })
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for j in 0..n {
                    for c in 0..d {
                        ctx[i][off + c] += e[j] / z * v[j][off + c];
                    }
                }
            }
        }
        let a = norm(
            &add(&lin("attention.output.dense", &ctx), &h),
            &p.vec(&name("attention.output.LayerNorm.weight")),
            &p.vec(&name("attention.output.LayerNorm.bias")),
            cfg.eps,
        );
        let mid: Rows = lin("intermediate.dense", &a)
            .into_iter()
            .map(|r| r.into_iter().map(|z| 0.5 * z * (1.0 + erf(z / 2f64.sqrt()))).collect())
            .collect();
        h = norm(
            &add(&lin("output.dense", &mid), &a),
            &p.vec(&name("output.LayerNorm.weight")),
            &p.vec(&name("output.LayerNorm.bias")),
            cfg.eps,
        );
        out.push(h.clone());
    }
    out
}
