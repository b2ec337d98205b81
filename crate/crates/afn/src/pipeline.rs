//! End-to-end workflows behind the `afn` subcommands.

use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};

use afn_core::metrics::{
    self, activation_shift, assign_buckets, contribution_ratio, difference_norm, is_punctuation_token, rank_tokens,
    strengths, Bucket, BucketReport, TokenFilter,
};
use afn_core::wordpiece::{basic_tokenize, wordpiece_tokenize};
use afn_core::{encode, forward, Encoding, HiddenStates, ModelConfig, ModelWeights, Padding, Vocab};
use rayon::prelude::*;

use crate::error::{AfnError, Result};
use crate::load::{load_vocab, load_weights, resolve_model_config};
use crate::report::{
    fmt_f64, plot_table, to_json, BucketRow, BucketSummary, ContributionSummary, CorpusEntry, CorpusFailure,
    CorpusReport, CorpusSummary, CsvTable, Envelope, OutputSet, PairShiftReport, PromptShiftReport, PromptShiftSet,
    RankRow, SentenceReport, ShiftRow, SuffixShiftRow, TokenRow, TopTokens, REPORT_SCHEMA_VERSION,
};

pub const DEFAULT_LAYER: usize = 8;
pub const DEFAULT_TOP_K: usize = 5;
const ALIGNMENT_NOTE: &str =
    "suffix tokens aligned backward from the final [SEP]; extension beyond the [CLS] comparison";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

/// Knobs shared by every analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnalysisOptions {
    pub layer: usize,
    pub filter: TokenFilter,
    pub top_k: NonZeroUsize,
    pub padding: Padding,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            layer: DEFAULT_LAYER,
            filter: TokenFilter::default(),
            top_k: NonZeroUsize::new(DEFAULT_TOP_K).unwrap(),
            padding: Padding::Off,
        }
    }
}

/// Everything a CLI invocation needs.
#[derive(Debug, Clone)]
pub struct AnalysisConfig {
    pub model: PathBuf,
    pub vocab: PathBuf,
    /// Explicit `config.json`; otherwise one next to the model, else bert-base.
    pub model_config: Option<PathBuf>,
    pub options: AnalysisOptions,
    pub format: OutputFormat,
    pub out_dir: PathBuf,
}

/// Loaded vocabulary and weights; cheap to share across threads.
#[derive(Debug)]
pub struct Analyzer {
    vocab: Vocab,
    weights: ModelWeights,
}

impl Analyzer {
    pub fn new(vocab: Vocab, weights: ModelWeights) -> Self {
        Self { vocab, weights }
    }

    pub fn load(model: &Path, vocab: &Path, model_config: Option<&Path>) -> Result<Self> {
        let config = resolve_model_config(model, model_config)?;
        let vocab = load_vocab(vocab)?;
        let weights = load_weights(model, &config)?;
        Ok(Self::new(vocab, weights))
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn config(&self) -> &ModelConfig {
        self.weights.config()
    }

    pub fn max_len(&self) -> usize {
        self.config().max_position.min(512)
    }

    pub fn check_layer(&self, layer: usize) -> Result<()> {
        let max = self.config().num_layers;
        if layer > max {
            return Err(AfnError::Usage(format!(
                "layer {layer} out of range 0..={max} for this model"
            )));
        }
        Ok(())
    }

    pub fn encode(&self, text: &str, padding: Padding) -> Result<Encoding> {
        Ok(encode(text, &self.vocab, self.max_len(), padding)?)
    }

    pub fn hidden_states(&self, text: &str, padding: Padding) -> Result<HiddenStates> {
        let encoding = self.encode(text, padding)?;
        Ok(forward(&encoding, &self.weights)?)
    }

    /// Number of word pieces `text` tokenizes to, without special tokens.
    fn piece_count(&self, text: &str) -> usize {
        basic_tokenize(text)
            .iter()
            .map(|w| wordpiece_tokenize(w, &self.vocab).len())
            .sum()
    }

    pub fn sentence_report(&self, sentence: &str, opts: &AnalysisOptions) -> Result<SentenceReport> {
        if sentence.trim().is_empty() {
            return Err(AfnError::EmptySentence);
        }
        self.check_layer(opts.layer)?;
        let states = self.hidden_states(sentence, opts.padding)?;
        sentence_report_from_states(sentence, &states, opts)
    }

    pub fn pair_shift(&self, a: &str, b: &str, opts: &AnalysisOptions) -> Result<PairShiftReport> {
        if a.trim().is_empty() || b.trim().is_empty() {
            return Err(AfnError::EmptySentence);
        }
        self.check_layer(opts.layer)?;
        let enc_a = self.encode(a, opts.padding)?;
        let enc_b = self.encode(b, opts.padding)?;
        if enc_a.len != enc_b.len || enc_a.padded_len() != enc_b.padded_len() {
            return Err(AfnError::TokenMismatch {
                a: enc_a.tokens[..enc_a.len].to_vec(),
                b: enc_b.tokens[..enc_b.len].to_vec(),
            });
        }
        let states_a = forward(&enc_a, &self.weights)?;
        let states_b = forward(&enc_b, &self.weights)?;
        let buckets = bucket_report(&states_a, opts.layer, opts.filter)?;
        let shift = contribution_ratio(activation_shift(&states_a, &states_b, opts.layer)?, &buckets)?;
        let c = shift.contribution.expect("set by contribution_ratio");
        Ok(PairShiftReport {
            sentence_a: a.into(),
            sentence_b: b.into(),
            layer: opts.layer,
            records: shift
                .records
                .iter()
                .map(|r| ShiftRow {
                    index: r.index,
                    token_a: r.token_a.clone(),
                    token_b: r.token_b.clone(),
                    delta: r.delta,
                    bucket_a: buckets.bucket_of(r.index).map(Bucket::as_str),
                })
                .collect(),
            total_shift: shift.total_shift,
            contribution: ContributionSummary {
                c_high: c.high,
                c_low: c.low,
                ratio: c.ratio,
                threshold: buckets.threshold,
                filter: opts.filter.as_str(),
                high_set: buckets.high_set.clone(),
            },
        })
    }

    /// Compares `"<prompt_a> <sentence>"` with `"<prompt_b> <sentence>"`.
    pub fn prompt_shift(
        &self,
        sentence: &str,
        prompt_a: &str,
        prompt_b: &str,
        layer: usize,
    ) -> Result<PromptShiftReport> {
        if sentence.trim().is_empty() {
            return Err(AfnError::EmptySentence);
        }
        self.check_layer(layer)?;
        let a = self.hidden_states(&format!("{prompt_a} {sentence}"), Padding::Off)?;
        let b = self.hidden_states(&format!("{prompt_b} {sentence}"), Padding::Off)?;
        let ma = a.layer(layer).map_err(metrics::MetricsError::from)?;
        let mb = b.layer(layer).map_err(metrics::MetricsError::from)?;
        let cls_shift = difference_norm(ma.row(0), mb.row(0))?;

        // Sentence pieces plus the trailing [SEP].
        let suffix = self.piece_count(sentence) + 1;
        let (na, nb) = (a.num_tokens(), b.num_tokens());
        if na <= suffix || nb <= suffix {
            return Err(AfnError::Alignment(format!(
                "prompted inputs were truncated ({na} and {nb} tokens) and no longer contain the full sentence"
            )));
        }
        let mut suffix_shifts = Vec::with_capacity(suffix);
        for j in 0..suffix {
            let (ia, ib) = (na - suffix + j, nb - suffix + j);
            if a.tokens[ia] != b.tokens[ib] {
                return Err(AfnError::Alignment(format!(
                    "sentence tokens differ under the two prompts at offset {j}: {:?} vs {:?}",
                    a.tokens[ia], b.tokens[ib]
                )));
            }
            suffix_shifts.push(SuffixShiftRow {
                index_a: ia,
                index_b: ib,
                token_a: a.tokens[ia].clone(),
                token_b: b.tokens[ib].clone(),
                delta: difference_norm(ma.row(ia), mb.row(ib))?,
            });
        }
        let sentence_drift = cls_shift + suffix_shifts.iter().map(|s| s.delta).sum::<f64>();
        Ok(PromptShiftReport {
            input_sentence: sentence.into(),
            prompt_a: prompt_a.into(),
            prompt_b: prompt_b.into(),
            layer,
            cls_shift,
            suffix_shifts,
            sentence_drift,
        })
    }

    /// Every unordered prompt pair plus the symmetric drift matrix.
    pub fn prompt_shift_set(&self, sentence: &str, prompts: &[String], layer: usize) -> Result<PromptShiftSet> {
        if prompts.len() < 2 {
            return Err(AfnError::TooFewPrompts(prompts.len()));
        }
        let n = prompts.len();
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        let reports = pairs
            .par_iter()
            .map(|&(i, j)| self.prompt_shift(sentence, &prompts[i], &prompts[j], layer))
            .collect::<Result<Vec<_>>>()?;
        let mut drift_matrix = vec![vec![0.0; n]; n];
        for (&(i, j), r) in pairs.iter().zip(&reports) {
            drift_matrix[i][j] = r.sentence_drift;
            drift_matrix[j][i] = r.sentence_drift;
        }
        Ok(PromptShiftSet {
            input_sentence: sentence.into(),
            layer,
            prompts: prompts.to_vec(),
            pairs: reports,
            drift_matrix,
            alignment: ALIGNMENT_NOTE,
        })
    }

    /// One report per sentence; failures are logged and counted, not fatal.
    pub fn corpus(&self, lines: &[(usize, String)], opts: &AnalysisOptions) -> Result<CorpusReport> {
        self.check_layer(opts.layer)?;
        let results: Vec<(usize, Result<SentenceReport>)> = lines
            .par_iter()
            .map(|(line, text)| (*line, self.sentence_report(text, opts)))
            .collect();
        let mut sentences = Vec::new();
        let mut failures = Vec::new();
        for (line, result) in results {
            match result {
                Ok(report) => sentences.push(CorpusEntry { line, report }),
                Err(e) => {
                    log::warn!("line {line}: {e}");
                    failures.push(CorpusFailure {
                        line,
                        error: e.to_string(),
                    });
                }
            }
        }
        let summary = corpus_summary(&sentences, failures);
        Ok(CorpusReport {
            layer: opts.layer,
            sentences,
            summary,
        })
    }
}

fn bucket_report(states: &HiddenStates, layer: usize, filter: TokenFilter) -> Result<BucketReport> {
    let acts = strengths(states, layer, filter)?;
    if acts.is_empty() {
        return Err(AfnError::NothingToRank(filter.as_str()));
    }
    let mut report = assign_buckets(&acts)?;
    report.filter = Some(filter);
    Ok(report)
}

/// Builds a [`SentenceReport`] from precomputed hidden states.
pub fn sentence_report_from_states(
    sentence: &str,
    states: &HiddenStates,
    opts: &AnalysisOptions,
) -> Result<SentenceReport> {
    let all = strengths(states, opts.layer, TokenFilter::All)?;
    let kept: Vec<_> = all
        .iter()
        .filter(|a| opts.filter.keeps(&a.token, a.is_special))
        .cloned()
        .collect();
    let buckets = bucket_report(states, opts.layer, opts.filter)?;
    Ok(SentenceReport {
        sentence: sentence.into(),
        layer: opts.layer,
        activations: all
            .iter()
            .map(|a| TokenRow {
                index: a.index,
                token: a.token.clone(),
                strength: a.strength,
                is_special: a.is_special,
            })
            .collect(),
        top_k: rank_tokens(&kept, opts.top_k)
            .into_iter()
            .map(|r| RankRow {
                rank: r.rank,
                index: r.activation.index,
                token: r.activation.token,
                strength: r.activation.strength,
            })
            .collect(),
        buckets: BucketSummary {
            threshold: buckets.threshold,
            filter: opts.filter.as_str(),
            high_set: buckets.high_set.clone(),
            assignments: buckets
                .assignments
                .iter()
                .map(|a| BucketRow {
                    index: a.index,
                    token: a.token.clone(),
                    strength: a.strength,
                    bucket: a.bucket.as_str(),
                })
                .collect(),
        },
    })
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn corpus_summary(sentences: &[CorpusEntry], failures: Vec<CorpusFailure>) -> CorpusSummary {
    let mut high_total = 0usize;
    let mut high_words = 0usize;
    let mut cls = Vec::new();
    let mut sep = Vec::new();
    for entry in sentences {
        let r = &entry.report;
        for a in r
            .buckets
            .assignments
            .iter()
            .filter(|a| a.bucket == Bucket::High.as_str())
        {
            high_total += 1;
            let special = r.activation(a.index).is_some_and(|t| t.is_special);
            if !special && !is_punctuation_token(&a.token) {
                high_words += 1;
            }
        }
        if let Some(first) = r.activations.first() {
            cls.push(first.strength);
        }
        if let Some(last) = r.activations.iter().rev().find(|t| t.token == afn_core::wordpiece::SEP) {
            sep.push(last.strength);
        }
    }
    CorpusSummary {
        sentence_count: sentences.len(),
        failed_count: failures.len(),
        failures,
        top_tokens: sentences
            .iter()
            .map(|e| TopTokens {
                line: e.line,
                tokens: e.report.top_k.iter().map(|r| r.token.clone()).collect(),
            })
            .collect(),
        high_bucket_word_fraction: (high_total > 0).then(|| high_words as f64 / high_total as f64),
        mean_cls_strength: mean(&cls),
        mean_sep_strength: mean(&sep),
    }
}

fn envelope<'a, T: serde::Serialize>(command: &'static str, opts: &AnalysisOptions, result: &'a T) -> Envelope<'a, T> {
    Envelope {
        schema_version: REPORT_SCHEMA_VERSION,
        command,
        filter: opts.filter.as_str(),
        top_k: opts.top_k.get(),
        result,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn sentence_rows(table: &mut CsvTable, prefix: &[String], r: &SentenceReport) {
    for t in &r.activations {
        let rank = r.top_k.iter().find(|k| k.index == t.index).map(|k| k.rank.to_string());
        let bucket = r
            .buckets
            .assignments
            .iter()
            .find(|b| b.index == t.index)
            .map(|b| b.bucket);
        let mut row = prefix.to_vec();
        row.extend([
            t.index.to_string(),
            t.token.clone(),
            fmt_f64(t.strength),
            t.is_special.to_string(),
            rank.unwrap_or_default(),
            bucket.unwrap_or_default().to_string(),
        ]);
        table.push(row);
    }
}

pub fn strength_outputs(report: &SentenceReport, opts: &AnalysisOptions, format: OutputFormat) -> OutputSet {
    let mut out = OutputSet::default();
    match format {
        OutputFormat::Json => out.add("strength.json", to_json(&envelope("strength", opts, report))),
        OutputFormat::Csv => {
            let mut t = CsvTable::new(&["index", "token", "strength", "is_special", "rank", "bucket"]);
            sentence_rows(&mut t, &[], report);
            out.add("strength.csv", t.render());
        }
    }
    out.add(
        "strength_plot.csv",
        plot_table(report.activations.iter().map(|t| (t.token.clone(), t.strength))).render(),
    );
    out
}

pub fn shift_outputs(report: &PairShiftReport, opts: &AnalysisOptions, format: OutputFormat) -> OutputSet {
    let mut out = OutputSet::default();
    match format {
        OutputFormat::Json => out.add("shift.json", to_json(&envelope("shift", opts, report))),
        OutputFormat::Csv => {
            let mut t = CsvTable::new(&["index", "token_a", "token_b", "delta", "bucket_a"]);
            for r in &report.records {
                t.push(vec![
                    r.index.to_string(),
                    r.token_a.clone(),
                    r.token_b.clone(),
                    fmt_f64(r.delta),
                    r.bucket_a.unwrap_or_default().into(),
                ]);
            }
            out.add("shift.csv", t.render());
            let c = &report.contribution;
            let mut s = CsvTable::new(&["metric", "value"]);
            for (k, v) in [
                ("total_shift", report.total_shift),
                ("c_high", c.c_high),
                ("c_low", c.c_low),
                ("ratio", c.ratio),
                ("threshold", c.threshold),
            ] {
                s.push(vec![k.into(), fmt_f64(v)]);
            }
            out.add("shift_summary.csv", s.render());
        }
    }
    out.add(
        "shift_plot.csv",
        plot_table(
            report
                .records
                .iter()
                .map(|r| (format!("{}/{}", r.token_a, r.token_b), r.delta)),
        )
        .render(),
    );
    out
}

pub fn prompt_shift_outputs(set: &PromptShiftSet, opts: &AnalysisOptions, format: OutputFormat) -> OutputSet {
    let mut out = OutputSet::default();
    match format {
        OutputFormat::Json => out.add("prompt_shift.json", to_json(&envelope("prompt-shift", opts, set))),
        OutputFormat::Csv => {
            let mut t = CsvTable::new(&[
                "prompt_a", "prompt_b", "kind", "index_a", "index_b", "token_a", "token_b", "delta",
            ]);
            for p in &set.pairs {
                t.push(vec![
                    p.prompt_a.clone(),
                    p.prompt_b.clone(),
                    "cls".into(),
                    "0".into(),
                    "0".into(),
                    "[CLS]".into(),
                    "[CLS]".into(),
                    fmt_f64(p.cls_shift),
                ]);
                for s in &p.suffix_shifts {
                    t.push(vec![
                        p.prompt_a.clone(),
                        p.prompt_b.clone(),
                        "suffix".into(),
                        s.index_a.to_string(),
                        s.index_b.to_string(),
                        s.token_a.clone(),
                        s.token_b.clone(),
                        fmt_f64(s.delta),
                    ]);
                }
            }
            out.add("prompt_shift.csv", t.render());
        }
    }
    let index_of = |p: &str| set.prompts.iter().position(|q| q == p).unwrap_or_default();
    for p in &set.pairs {
        let name = format!(
            "prompt_shift_plot_{}_{}.csv",
            index_of(&p.prompt_a),
            index_of(&p.prompt_b)
        );
        let points = std::iter::once(("[CLS]".to_string(), p.cls_shift))
            .chain(p.suffix_shifts.iter().map(|s| (s.token_a.clone(), s.delta)));
        out.add(name, plot_table(points).render());
    }
    let mut header = vec!["prompt".to_string()];
    header.extend(set.prompts.iter().cloned());
    let mut m = CsvTable::new(&header);
    for (i, row) in set.drift_matrix.iter().enumerate() {
        let mut r = vec![set.prompts[i].clone()];
        r.extend(row.iter().map(|&v| fmt_f64(v)));
        m.push(r);
    }
    out.add("drift_matrix.csv", m.render());
    out
}

pub fn corpus_outputs(report: &CorpusReport, opts: &AnalysisOptions, format: OutputFormat) -> OutputSet {
    let mut out = OutputSet::default();
    match format {
        OutputFormat::Json => out.add("corpus.json", to_json(&envelope("corpus", opts, report))),
        OutputFormat::Csv => {
            let mut t = CsvTable::new(&["line", "index", "token", "strength", "is_special", "rank", "bucket"]);
            for e in &report.sentences {
                sentence_rows(&mut t, &[e.line.to_string()], &e.report);
            }
            out.add("corpus.csv", t.render());
            let s = &report.summary;
            let mut m = CsvTable::new(&["metric", "value"]);
            m.push(vec!["sentence_count".into(), s.sentence_count.to_string()]);
            m.push(vec!["failed_count".into(), s.failed_count.to_string()]);
            m.push(vec![
                "high_bucket_word_fraction".into(),
                opt(s.high_bucket_word_fraction),
            ]);
            m.push(vec!["mean_cls_strength".into(), opt(s.mean_cls_strength)]);
            m.push(vec!["mean_sep_strength".into(), opt(s.mean_sep_strength)]);
            out.add("corpus_summary.csv", m.render());
        }
    }
    out
}

/// Non-blank lines of a corpus file with their 1-based line numbers.
pub fn read_corpus(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = std::fs::read_to_string(path).map_err(|source| AfnError::Read {
        path: path.to_owned(),
        source,
    })?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .collect())
}

fn load(config: &AnalysisConfig) -> Result<Analyzer> {
    let analyzer = Analyzer::load(&config.model, &config.vocab, config.model_config.as_deref())?;
    analyzer.check_layer(config.options.layer)?;
    Ok(analyzer)
}

pub fn cmd_strength(config: &AnalysisConfig, sentence: &str) -> Result<SentenceReport> {
    if sentence.trim().is_empty() {
        return Err(AfnError::EmptySentence);
    }
    let report = load(config)?.sentence_report(sentence, &config.options)?;
    strength_outputs(&report, &config.options, config.format).write_to(&config.out_dir)?;
    Ok(report)
}

pub fn cmd_shift(config: &AnalysisConfig, sentence_a: &str, sentence_b: &str) -> Result<PairShiftReport> {
    let report = load(config)?.pair_shift(sentence_a, sentence_b, &config.options)?;
    shift_outputs(&report, &config.options, config.format).write_to(&config.out_dir)?;
    Ok(report)
}

pub fn cmd_prompt_shift(config: &AnalysisConfig, sentence: &str, prompts: &[String]) -> Result<PromptShiftSet> {
    if prompts.len() < 2 {
        return Err(AfnError::TooFewPrompts(prompts.len()));
    }
    let set = load(config)?.prompt_shift_set(sentence, prompts, config.options.layer)?;
    prompt_shift_outputs(&set, &config.options, config.format).write_to(&config.out_dir)?;
    Ok(set)
}

pub fn cmd_corpus(config: &AnalysisConfig, corpus: &Path) -> Result<CorpusReport> {
    let lines = read_corpus(corpus)?;
    let report = load(config)?.corpus(&lines, &config.options)?;
    corpus_outputs(&report, &config.options, config.format).write_to(&config.out_dir)?;
    Ok(report)
}
