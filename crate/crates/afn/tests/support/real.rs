//! Checks that need the pretrained bert-base-uncased checkpoint.
//!
//! Paths come from the environment:
//! `AFN_MODEL` (safetensors), `AFN_VOCAB` (vocab.txt), optional `AFN_CONFIG`,
//! and `AFN_FIXTURES` (reference fixture directory, see `docs/report-format.md`).

use std::collections::BTreeSet;
use std::num::NonZeroUsize;
use std::path::PathBuf;

use afn::fixtures::load_hidden_fixture;
use afn::pipeline::{AnalysisOptions, Analyzer};
use afn_core::metrics::{rank_tokens, strengths, token_strength, TokenFilter};
use afn_core::Padding;

pub const HIDDEN_TOLERANCE: f64 = 2e-3;
pub const NORM_TOLERANCE: f64 = 1e-2;

pub const QUESTION: &str = "Who is the prime minister of Canada?";
pub const PAIR: (&str, &str) = (
    "Enjoying a beautiful day at the park!",
    "Enjoying a beautiful walk at the beach!",
);
pub const WEATHER: &str = "The weather is nice today.";
pub const FIGURE_PROMPTS: [&str; 3] = ["Summarize the sentence", "Classify sentiment", "Translate to French"];

/// Case-study sentences the reference fixtures must cover.
pub fn case_study_texts() -> Vec<String> {
    let mut v: Vec<String> = [QUESTION, "Who is the president of France?", PAIR.0, PAIR.1, WEATHER]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for p in ["Summarize", "Translate to French"].iter().chain(&FIGURE_PROMPTS) {
        v.push(format!("{p} {WEATHER}"));
    }
    v
}

pub struct RealEnv {
    pub model: PathBuf,
    pub vocab: PathBuf,
    pub config: Option<PathBuf>,
    pub fixtures: Option<PathBuf>,
}

impl RealEnv {
    /// `Err` names the missing variable.
    pub fn from_env() -> Result<Self, String> {
        let var = |k: &str| std::env::var_os(k).map(PathBuf::from);
        Ok(Self {
            model: var("AFN_MODEL").ok_or("AFN_MODEL not set")?,
            vocab: var("AFN_VOCAB").ok_or("AFN_VOCAB not set")?,
            config: var("AFN_CONFIG"),
            fixtures: var("AFN_FIXTURES"),
        })
    }

    pub fn analyzer(&self) -> Result<Analyzer, String> {
        Analyzer::load(&self.model, &self.vocab, self.config.as_deref()).map_err(|e| e.to_string())
    }
}

fn layer8() -> AnalysisOptions {
    AnalysisOptions {
        layer: 8,
        ..AnalysisOptions::default()
    }
}

/// Tokenizations exact, layer-8 hidden states and norms within tolerance.
pub fn golden(env: &RealEnv) -> Result<String, String> {
    let dir = env.fixtures.as_deref().ok_or("AFN_FIXTURES not set")?;
    let analyzer = env.analyzer()?;
    let golden: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.join("tokenization_golden.json")).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let mut covered = BTreeSet::new();
    for case in golden["encode"].as_array().ok_or("no encode cases")? {
        let text = case["text"].as_str().unwrap_or_default();
        let enc = analyzer.encode(text, Padding::Off).map_err(|e| e.to_string())?;
        let tokens: Vec<String> = serde_json::from_value(case["tokens"].clone()).map_err(|e| e.to_string())?;
        let ids: Vec<u32> = serde_json::from_value(case["ids"].clone()).map_err(|e| e.to_string())?;
        if enc.tokens != tokens || enc.ids != ids {
            return Err(format!(
                "tokenization differs for {text:?}: {:?} vs {tokens:?}",
                enc.tokens
            ));
        }
        covered.insert(text.to_string());
    }
    for text in case_study_texts() {
        if !covered.contains(&text) {
            return Err(format!("fixtures lack case-study sentence {text:?}"));
        }
    }

    let (mut worst_hidden, mut worst_norm, mut count) = (0f64, 0f64, 0);
    let hidden = dir.join("hidden");
    let mut entries: Vec<PathBuf> = std::fs::read_dir(&hidden)
        .map_err(|e| format!("{}: {e}", hidden.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for path in entries {
        let fx = load_hidden_fixture(&path).map_err(|e| e.to_string())?;
        let Some(expected) = fx.layers.get(&8) else { continue };
        let states = analyzer
            .hidden_states(&fx.meta.text, Padding::Off)
            .map_err(|e| e.to_string())?;
        if states.tokens != fx.meta.tokens {
            return Err(format!("{}: token mismatch", path.display()));
        }
        let got = states.layer(8).map_err(|e| e.to_string())?;
        let diff = got
            .as_slice()
            .iter()
            .zip(expected.as_slice())
            .map(|(a, b)| (a - b).abs() as f64)
            .fold(0.0, f64::max);
        worst_hidden = worst_hidden.max(diff);
        for (row, want) in got.iter_rows().zip(fx.norms_at(8)) {
            worst_norm = worst_norm.max((token_strength(row).map_err(|e| e.to_string())? - want).abs());
        }
        count += 1;
    }
    if count == 0 {
        return Err("no layer-8 hidden fixtures".into());
    }
    let detail = format!("{count} fixtures, max |dh| {worst_hidden:.2e}, max |dnorm| {worst_norm:.2e}");
    if worst_hidden <= HIDDEN_TOLERANCE && worst_norm <= NORM_TOLERANCE {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Top-3 / minimum for the question, changed-noun maxima for the pair, [SEP] layer 9 < layer 8.
pub fn rank_order(env: &RealEnv) -> Result<String, String> {
    let analyzer = env.analyzer()?;
    let states = analyzer
        .hidden_states(QUESTION, Padding::Off)
        .map_err(|e| e.to_string())?;
    let words = strengths(&states, 8, TokenFilter::WordsOnly).map_err(|e| e.to_string())?;
    let top: BTreeSet<String> = rank_tokens(&words, NonZeroUsize::new(3).unwrap())
        .into_iter()
        .map(|r| r.activation.token)
        .collect();
    let want: BTreeSet<String> = ["prime", "minister", "canada"].map(String::from).into();
    if top != want {
        return Err(format!("(a) top-3 {top:?}"));
    }
    let all = strengths(&states, 8, TokenFilter::All).map_err(|e| e.to_string())?;
    let min = all.iter().min_by(|a, b| a.strength.total_cmp(&b.strength)).unwrap();
    if min.token != "[SEP]" {
        return Err(format!("(a) minimum is {:?}", min.token));
    }

    let shift = analyzer
        .pair_shift(PAIR.0, PAIR.1, &layer8())
        .map_err(|e| e.to_string())?;
    let mut by_delta: Vec<_> = shift.records.iter().collect();
    by_delta.sort_by(|a, b| b.delta.total_cmp(&a.delta));
    let top2: BTreeSet<usize> = by_delta.iter().take(2).map(|r| r.index).collect();
    if top2 != BTreeSet::from([4, 7]) {
        return Err(format!("(b) largest shifts at {top2:?}"));
    }

    let sep = all.len() - 1;
    let s8 = all[sep].strength;
    let s9 = strengths(&states, 9, TokenFilter::All).map_err(|e| e.to_string())?[sep].strength;
    if s9 >= s8 {
        return Err(format!("(c) [SEP] layer 9 {s9:.4} >= layer 8 {s8:.4}"));
    }
    Ok(format!(
        "prime {:.4} (published 21.9766), total shift {:.4} (published 73.5852), [SEP] {s8:.4} -> {s9:.4}",
        all[4].strength, shift.total_shift
    ))
}

/// Symmetric zero-diagonal drift matrix and positive [CLS] drift.
pub fn prompt_drift(env: &RealEnv) -> Result<String, String> {
    let analyzer = env.analyzer()?;
    let prompts: Vec<String> = FIGURE_PROMPTS.map(String::from).into();
    let set = analyzer
        .prompt_shift_set(WEATHER, &prompts, 8)
        .map_err(|e| e.to_string())?;
    let m = &set.drift_matrix;
    for i in 0..3 {
        if m[i][i] != 0.0 {
            return Err(format!("diagonal {i} = {}", m[i][i]));
        }
        for j in 0..3 {
            if m[i][j] != m[j][i] {
                return Err(format!("asymmetric at ({i},{j})"));
            }
        }
    }
    let pair = analyzer
        .prompt_shift(WEATHER, "Summarize", "Translate to French", 8)
        .map_err(|e| e.to_string())?;
    if pair.cls_shift > 0.0 {
        Ok(format!("cls_shift {:.6}", pair.cls_shift))
    } else {
        Err(format!("cls_shift {}", pair.cls_shift))
    }
}
