//! Token activation metrics over captured hidden states.
//!
//! - strength `S_i = ‖h_i‖₂` of a token's hidden row at one layer
//! - the upper-quartile threshold `τ` and HIGH (`S_i > τ`) / LOW buckets
//! - shift `Δ_i = ‖h_{A,i} − h_{B,i}‖₂` between two index-aligned inputs
//! - the share `R_H` of total shift carried by HIGH-bucket tokens
//!
//! Norms are accumulated in f64 over the f32 hidden states.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::num::NonZeroUsize;

use crate::encoder::{layer_slice, HiddenStates, LayerOutOfRange};
use crate::wordpiece::is_punctuation;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error(transparent)]
    Layer(#[from] LayerOutOfRange),
    #[error("non-finite value in hidden-state vector")]
    NonFinite,
    #[error("cannot compute a threshold over an empty list")]
    Empty,
    #[error("token count mismatch: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("bucket index {0} has no matching shift record")]
    IndexMismatch(usize),
}

/// Which tokens take part in an analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum TokenFilter {
    /// Every position.
    All,
    /// Drops `[CLS]`, `[SEP]` and `[PAD]`.
    NoSpecial,
    /// Also drops single-character punctuation tokens.
    #[default]
    WordsOnly,
}

impl TokenFilter {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenFilter::All => "all",
            TokenFilter::NoSpecial => "no-special",
            TokenFilter::WordsOnly => "words",
        }
    }

    pub fn keeps(self, token: &str, is_special: bool) -> bool {
        match self {
            TokenFilter::All => true,
            TokenFilter::NoSpecial => !is_special,
            TokenFilter::WordsOnly => !is_special && !is_punctuation_token(token),
        }
    }
}

/// A single-character punctuation token such as `?` or `!`.
pub fn is_punctuation_token(token: &str) -> bool {
    let mut chars = token.chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if is_punctuation(c))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenActivation {
    pub index: usize,
    pub token: String,
    pub strength: f64,
    pub is_special: bool,
}

/// L2 norm of a hidden-state row.
pub fn token_strength(h: &[f32]) -> Result<f64, MetricsError> {
    if !h.iter().all(|v| v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    Ok(libm::sqrt(h.iter().map(|&v| f64::from(v) * f64::from(v)).sum()))
}

/// `‖a − b‖₂`; the slices must have equal length.
pub fn difference_norm(a: &[f32], b: &[f32]) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch { a: a.len(), b: b.len() });
    }
    if !a.iter().chain(b).all(|v| v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    Ok(libm::sqrt(
        a.iter()
            .zip(b)
            .map(|(&x, &y)| {
                let d = f64::from(x) - f64::from(y);
                d * d
            })
            .sum(),
    ))
}

/// Strength of every token kept by `filter`, in token order.
pub fn strengths(
    states: &HiddenStates,
    layer: usize,
    filter: TokenFilter,
) -> Result<Vec<TokenActivation>, MetricsError> {
    let matrix = layer_slice(states, layer)?;
    let mut out = Vec::new();
    for (index, (token, &is_special)) in states.tokens.iter().zip(&states.is_special).enumerate() {
        if !filter.keeps(token, is_special) {
            continue;
        }
        out.push(TokenActivation {
            index,
            token: token.clone(),
            strength: token_strength(matrix.row(index))?,
            is_special,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedToken {
    /// 1-based.
    pub rank: usize,
    pub activation: TokenActivation,
}

fn by_strength_desc(a: &TokenActivation, b: &TokenActivation) -> Ordering {
    b.strength
        .partial_cmp(&a.strength)
        .unwrap_or(Ordering::Equal)
        .then(a.index.cmp(&b.index))
}

/// Top `k` activations by descending strength; ties go to the lower index.
pub fn rank_tokens(activations: &[TokenActivation], k: NonZeroUsize) -> Vec<RankedToken> {
    let mut sorted: Vec<&TokenActivation> = activations.iter().collect();
    sorted.sort_by(|a, b| by_strength_desc(a, b));
    sorted
        .into_iter()
        .take(k.get())
        .enumerate()
        .map(|(i, a)| RankedToken {
            rank: i + 1,
            activation: a.clone(),
        })
        .collect()
}

/// Upper quartile by midpoint interpolation: with ascending order
/// statistics `x` and `g = 0.75 (n − 1)`, returns `(x⌊g⌋ + x⌈g⌉) / 2`.
pub fn quartile_threshold(values: &[f64]) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    if !values.iter().all(|v| v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    // 0.75 (n − 1) = 3 (n − 1) / 4 in exact integer arithmetic.
    let num = 3 * (sorted.len() - 1);
    let lo = num / 4;
    let hi = num.div_ceil(4);
    Ok((sorted[lo] + sorted[hi]) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Bucket {
    High,
    Low,
}

impl Bucket {
    pub fn as_str(self) -> &'static str {
        match self {
            Bucket::High => "HIGH",
            Bucket::Low => "LOW",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketAssignment {
    pub index: usize,
    pub token: String,
    pub strength: f64,
    pub bucket: Bucket,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketReport {
    pub threshold: f64,
    pub assignments: Vec<BucketAssignment>,
    /// Token indices labelled HIGH.
    pub high_set: Vec<usize>,
    /// Filter used to pick the tokens, when known.
    pub filter: Option<TokenFilter>,
}

impl BucketReport {
    pub fn bucket_of(&self, index: usize) -> Option<Bucket> {
        self.assignments.iter().find(|a| a.index == index).map(|a| a.bucket)
    }
}

/// Splits activations at their own upper quartile. Ties with `τ` are LOW.
pub fn assign_buckets(activations: &[TokenActivation]) -> Result<BucketReport, MetricsError> {
    let values: Vec<f64> = activations.iter().map(|a| a.strength).collect();
    let threshold = quartile_threshold(&values)?;
    let assignments: Vec<BucketAssignment> = activations
        .iter()
        .map(|a| BucketAssignment {
            index: a.index,
            token: a.token.clone(),
            strength: a.strength,
            bucket: if a.strength > threshold {
                Bucket::High
            } else {
                Bucket::Low
            },
        })
        .collect();
    let high_set = assignments
        .iter()
        .filter(|a| a.bucket == Bucket::High)
        .map(|a| a.index)
        .collect();
    Ok(BucketReport {
        threshold,
        assignments,
        high_set,
        filter: None,
    })
}

/// [`strengths`] followed by [`assign_buckets`], recording the filter.
pub fn bucket_tokens(states: &HiddenStates, layer: usize, filter: TokenFilter) -> Result<BucketReport, MetricsError> {
    let mut report = assign_buckets(&strengths(states, layer, filter)?)?;
    report.filter = Some(filter);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftRecord {
    pub index: usize,
    pub token_a: String,
    pub token_b: String,
    pub delta: f64,
}

/// HIGH/LOW split of the total shift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contribution {
    pub high: f64,
    pub low: f64,
    /// `high / (high + low)`, or 0 when both are 0.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftReport {
    pub layer: usize,
    pub records: Vec<ShiftRecord>,
    pub total_shift: f64,
    pub contribution: Option<Contribution>,
}

/// Per-position `Δ_i` between two inputs with the same token count.
pub fn activation_shift(
    states_a: &HiddenStates,
    states_b: &HiddenStates,
    layer: usize,
) -> Result<ShiftReport, MetricsError> {
    let a = layer_slice(states_a, layer)?;
    let b = layer_slice(states_b, layer)?;
    if states_a.num_tokens() != states_b.num_tokens() {
        return Err(MetricsError::LengthMismatch {
            a: states_a.num_tokens(),
            b: states_b.num_tokens(),
        });
    }
    let records = (0..states_a.num_tokens())
        .map(|i| {
            Ok(ShiftRecord {
                index: i,
                token_a: states_a.tokens[i].clone(),
                token_b: states_b.tokens[i].clone(),
                delta: difference_norm(a.row(i), b.row(i))?,
            })
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    Ok(shift_report(layer, records))
}

/// Wraps records, summing their deltas.
pub fn shift_report(layer: usize, records: Vec<ShiftRecord>) -> ShiftReport {
    let total_shift = records.iter().map(|r| r.delta).sum();
    ShiftReport {
        layer,
        records,
        total_shift,
        contribution: None,
    }
}

/// Attaches `C_H`, `C_L` and `R_H`. Only tokens present in `buckets` count,
/// and each of them must have a shift record.
pub fn contribution_ratio(mut shift: ShiftReport, buckets: &BucketReport) -> Result<ShiftReport, MetricsError> {
    let deltas: BTreeMap<usize, f64> = shift.records.iter().map(|r| (r.index, r.delta)).collect();
    let (mut high, mut low) = (0.0, 0.0);
    for a in &buckets.assignments {
        let delta = *deltas.get(&a.index).ok_or(MetricsError::IndexMismatch(a.index))?;
        match a.bucket {
            Bucket::High => high += delta,
            Bucket::Low => low += delta,
        }
    }
    let total = high + low;
    let ratio = if total > 0.0 { high / total } else { 0.0 };
    shift.contribution = Some(Contribution { high, low, ratio });
    Ok(shift)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerTableRow {
    pub index: usize,
    pub token: String,
    /// One strength per requested layer, in request order.
    pub strengths: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerTable {
    pub layers: Vec<usize>,
    pub rows: Vec<LayerTableRow>,
}

impl LayerTable {
    pub fn column(&self, position: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.strengths[position]).collect()
    }
}

/// Per-token strengths at several layers side by side.
pub fn layer_comparison(states: &HiddenStates, layers: &[usize]) -> Result<LayerTable, MetricsError> {
    let columns = layers
        .iter()
        .map(|&l| strengths(states, l, TokenFilter::All))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = (0..states.num_tokens())
        .map(|i| LayerTableRow {
            index: i,
            token: states.tokens[i].clone(),
            strengths: columns.iter().map(|c| c[i].strength).collect(),
        })
        .collect();
    Ok(LayerTable {
        layers: layers.to_vec(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn acts(values: &[(&str, f64)]) -> Vec<TokenActivation> {
        values
            .iter()
            .enumerate()
            .map(|(i, &(t, s))| TokenActivation {
                index: i,
                token: t.to_string(),
                strength: s,
                is_special: false,
            })
            .collect()
    }

    fn nz(k: usize) -> NonZeroUsize {
        NonZeroUsize::new(k).unwrap()
    }

    #[test]
    fn strength_basics() {
        assert_eq!(token_strength(&[0.0; 768]).unwrap(), 0.0);
        let mut e = vec![0.0; 768];
        e[17] = 1.0;
        assert_eq!(token_strength(&e).unwrap(), 1.0);
        let mut v = vec![0.0; 768];
        v[0] = 3.0;
        v[1] = 4.0;
        assert_eq!(token_strength(&v).unwrap(), 5.0);
        assert_eq!(token_strength(&[1.0, f32::NAN]), Err(MetricsError::NonFinite));
        assert_eq!(token_strength(&[f32::INFINITY]), Err(MetricsError::NonFinite));
    }

    #[test]
    fn quartile_examples() {
        let tau = quartile_threshold(&[17.6, 17.9, 18.2, 18.5, 21.8, 22.4]).unwrap();
        assert!((tau - 20.15).abs() < 1e-9);
        // Order of input does not matter.
        let tau2 = quartile_threshold(&[22.4, 17.6, 21.8, 18.5, 17.9, 18.2]).unwrap();
        assert_eq!(tau, tau2);
        assert_eq!(quartile_threshold(&[5.0; 4]).unwrap(), 5.0);
        assert_eq!(quartile_threshold(&[1.0, 2.0]).unwrap(), 1.5);
        assert_eq!(quartile_threshold(&[7.0]).unwrap(), 7.0);
        // n = 5: g = 3, both terms are x3.
        assert_eq!(quartile_threshold(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap(), 4.0);
        assert_eq!(quartile_threshold(&[]), Err(MetricsError::Empty));
    }

    #[test]
    fn buckets_table_example() {
        let a = acts(&[
            ("who", 18.2),
            ("is", 17.9),
            ("the", 18.5),
            ("president", 22.4),
            ("of", 17.6),
            ("canada", 21.8),
        ]);
        let r = assign_buckets(&a).unwrap();
        assert_eq!(r.high_set, vec![3, 5]);
        assert_eq!(r.bucket_of(0), Some(Bucket::Low));
        assert_eq!(r.bucket_of(3), Some(Bucket::High));
    }

    #[test]
    fn buckets_edges() {
        let r = assign_buckets(&acts(&[("a", 3.0), ("b", 3.0), ("c", 3.0)])).unwrap();
        assert!(r.high_set.is_empty());
        assert!(r.assignments.iter().all(|a| a.bucket == Bucket::Low));
        let r = assign_buckets(&acts(&[("a", 1.0), ("b", 2.0)])).unwrap();
        assert_eq!(r.threshold, 1.5);
        assert_eq!(r.high_set, vec![1]);
        assert_eq!(assign_buckets(&[]), Err(MetricsError::Empty));
    }

    #[test]
    fn ranking_tie_break_and_clamp() {
        let a = acts(&[("x", 1.0), ("y", 1.0), ("z", 1.0)]);
        let r = rank_tokens(&a, nz(2));
        assert_eq!(r.iter().map(|r| r.activation.index).collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(r[0].rank, 1);
        let a = acts(&[("x", 1.0), ("y", 3.0), ("z", 2.0)]);
        let r = rank_tokens(&a, nz(10));
        assert_eq!(
            r.iter().map(|r| r.activation.token.as_str()).collect::<Vec<_>>(),
            ["y", "z", "x"]
        );
    }

    fn shift_of(deltas: &[f64]) -> ShiftReport {
        let records = deltas
            .iter()
            .enumerate()
            .map(|(i, &d)| ShiftRecord {
                index: i,
                token_a: "t".into(),
                token_b: "t".into(),
                delta: d,
            })
            .collect();
        shift_report(8, records)
    }

    #[test]
    fn contribution_example() {
        let buckets = assign_buckets(&acts(&[
            ("who", 18.2),
            ("is", 17.9),
            ("the", 18.5),
            ("president", 22.4),
            ("of", 17.6),
            ("canada", 21.8),
        ]))
        .unwrap();
        let shift = contribution_ratio(shift_of(&[2.1, 1.8, 1.5, 11.2, 1.2, 9.7]), &buckets).unwrap();
        let c = shift.contribution.unwrap();
        assert!((c.high - 20.9).abs() < 1e-9);
        assert!((c.low - 6.6).abs() < 1e-9);
        assert!((shift.total_shift - 27.5).abs() < 1e-9);
        assert!((c.ratio - 0.76).abs() < 1e-6);
    }

    #[test]
    fn contribution_edges() {
        let all_low = assign_buckets(&acts(&[("a", 1.0), ("b", 1.0)])).unwrap();
        let c = contribution_ratio(shift_of(&[3.0, 4.0]), &all_low)
            .unwrap()
            .contribution
            .unwrap();
        assert_eq!(c.ratio, 0.0);

        let mut all_high = all_low.clone();
        all_high.assignments.iter_mut().for_each(|a| a.bucket = Bucket::High);
        let c = contribution_ratio(shift_of(&[3.0, 4.0]), &all_high)
            .unwrap()
            .contribution
            .unwrap();
        assert_eq!(c.ratio, 1.0);

        let c = contribution_ratio(shift_of(&[0.0, 0.0]), &all_high)
            .unwrap()
            .contribution
            .unwrap();
        assert_eq!(c.ratio, 0.0);

        assert_eq!(
            contribution_ratio(shift_of(&[1.0]), &all_low),
            Err(MetricsError::IndexMismatch(1))
        );
    }

    #[test]
    fn filters() {
        assert!(TokenFilter::All.keeps("[CLS]", true));
        assert!(!TokenFilter::NoSpecial.keeps("[SEP]", true));
        assert!(TokenFilter::NoSpecial.keeps("?", false));
        assert!(!TokenFilter::WordsOnly.keeps("?", false));
        assert!(TokenFilter::WordsOnly.keeps("##s", false));
        assert!(TokenFilter::WordsOnly.keeps("a", false));
        assert!(!is_punctuation_token("!!"));
    }
}
