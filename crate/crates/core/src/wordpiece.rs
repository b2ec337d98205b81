//! Uncased BERT tokenization.
//!
//! Text goes through the classic two-stage pipeline:
//!
//! 1. [`basic_tokenize`] cleans the text (drops NUL, U+FFFD and control
//!    characters, maps whitespace to spaces), isolates CJK ideographs, applies
//!    NFC, lowercases, strips accents (NFD minus nonspacing marks) and splits
//!    punctuation into one-character words.
//! 2. [`wordpiece_tokenize`] splits each word greedily into the longest
//!    vocabulary-resident prefix, continuing with `##`-prefixed pieces.
//!
//! [`encode`] wraps the result in `[CLS] … [SEP]` with optional padding.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use unicode_general_category::{get_general_category, GeneralCategory};
use unicode_normalization::UnicodeNormalization;

pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const UNK: &str = "[UNK]";
pub const PAD: &str = "[PAD]";
pub const MASK: &str = "[MASK]";

/// Continuation prefix for non-initial word pieces.
pub const CONTINUATION: &str = "##";

/// Words with more characters than this become a single `[UNK]`.
pub const MAX_WORD_CHARS: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VocabError {
    #[error("duplicate token {token:?} on lines {first} and {second}")]
    DuplicateToken { token: String, first: usize, second: usize },
    #[error("missing special token {0}")]
    MissingSpecialToken(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialIds {
    pub cls: u32,
    pub sep: u32,
    pub unk: u32,
    pub pad: u32,
    pub mask: u32,
}

/// Token ↔ id table. Ids are line indices of `vocab.txt`.
#[derive(Debug, Clone)]
pub struct Vocab {
    token_to_id: BTreeMap<String, u32>,
    id_to_token: Vec<String>,
    special: SpecialIds,
}

impl Vocab {
    /// Parses the newline-delimited vocabulary format (one token per line,
    /// id = 0-based line index). A trailing newline does not add an entry.
    pub fn parse(text: &str) -> Result<Self, VocabError> {
        let body = text.strip_suffix('\n').unwrap_or(text);
        if body.is_empty() {
            return Self::from_tokens(core::iter::empty::<&str>());
        }
        Self::from_tokens(body.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l)))
    }

    pub fn from_tokens<I, S>(tokens: I) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut token_to_id = BTreeMap::new();
        let mut id_to_token = Vec::new();
        for (line, token) in tokens.into_iter().enumerate() {
            let token: String = token.into();
            if let Some(&first) = token_to_id.get(&token) {
                return Err(VocabError::DuplicateToken {
                    token,
                    first: first as usize,
                    second: line,
                });
            }
            token_to_id.insert(token.clone(), line as u32);
            id_to_token.push(token);
        }
        let lookup = |name: &'static str| {
            token_to_id
                .get(name)
                .copied()
                .ok_or(VocabError::MissingSpecialToken(name))
        };
        let special = SpecialIds {
            pad: lookup(PAD)?,
            unk: lookup(UNK)?,
            cls: lookup(CLS)?,
            sep: lookup(SEP)?,
            mask: lookup(MASK)?,
        };
        Ok(Self {
            token_to_id,
            id_to_token,
            special,
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    pub fn special(&self) -> SpecialIds {
        self.special
    }

    pub fn is_special_id(&self, id: u32) -> bool {
        let s = self.special;
        id == s.cls || id == s.sep || id == s.pad
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &str)> + '_ {
        self.id_to_token.iter().enumerate().map(|(i, t)| (i as u32, t.as_str()))
    }
}

fn is_whitespace(c: char) -> bool {
    matches!(c, ' ' | '\t' | '\n' | '\r') || get_general_category(c) == GeneralCategory::SpaceSeparator
}

fn is_control(c: char) -> bool {
    if matches!(c, '\t' | '\n' | '\r') {
        return false;
    }
    get_general_category(c).abbreviation().starts_with('C')
}

/// ASCII non-alphanumeric symbols count as punctuation alongside the Unicode
/// `P*` categories (so `$`, `^`, `` ` `` split like `!`).
pub fn is_punctuation(c: char) -> bool {
    let cp = c as u32;
    if (33..=47).contains(&cp) || (58..=64).contains(&cp) || (91..=96).contains(&cp) || (123..=126).contains(&cp) {
        return true;
    }
    get_general_category(c).abbreviation().starts_with('P')
}

fn is_cjk_ideograph(c: char) -> bool {
    matches!(c as u32,
        0x4E00..=0x9FFF
        | 0x3400..=0x4DBF
        | 0x20000..=0x2A6DF
        | 0x2A700..=0x2B73F
        | 0x2B740..=0x2B81F
        | 0x2B820..=0x2CEAF
        | 0xF900..=0xFAFF
        | 0x2F800..=0x2FA1F)
}

fn clean_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        if c == '\0' || c == '\u{FFFD}' || is_control(c) {
            continue;
        }
        if is_whitespace(c) {
            out.push(' ');
        } else if is_cjk_ideograph(c) {
            out.push(' ');
            out.push(c);
            out.push(' ');
        } else {
            out.push(c);
        }
    }
    out
}

fn lower_and_strip_accents(word: &str) -> String {
    word.to_lowercase()
        .nfd()
        .filter(|&c| get_general_category(c) != GeneralCategory::NonspacingMark)
        .collect()
}

fn split_on_punctuation(word: &str, out: &mut Vec<String>) {
    let mut current = String::new();
    for c in word.chars() {
        if is_punctuation(c) {
            if !current.is_empty() {
                out.push(core::mem::take(&mut current));
            }
            out.push(c.to_string());
        } else {
            current.push(c);
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
}

/// Normalizes raw text into lowercase, accent-free words with punctuation
/// split off.
pub fn basic_tokenize(text: &str) -> Vec<String> {
    let cleaned: String = clean_text(text).nfc().collect();
    let mut words = Vec::new();
    for raw in cleaned.split_whitespace() {
        let word = lower_and_strip_accents(raw);
        // Stripping can leave whitespace behind (e.g. a lone combining mark
        // next to a space-like character), so re-split.
        for part in word.split_whitespace() {
            split_on_punctuation(part, &mut words);
        }
    }
    words
}

/// Greedy longest-match-first split of one normalized word.
///
/// Returns `[UNK]` for words over [`MAX_WORD_CHARS`] characters or when some
/// suffix has no vocabulary-resident prefix.
pub fn wordpiece_tokenize(word: &str, vocab: &Vocab) -> Vec<String> {
    // Byte offsets of every char boundary, including the end.
    let bounds: Vec<usize> = word
        .char_indices()
        .map(|(i, _)| i)
        .chain(core::iter::once(word.len()))
        .collect();
    let n_chars = bounds.len() - 1;
    if n_chars > MAX_WORD_CHARS {
        return alloc::vec![UNK.to_string()];
    }

    let mut pieces = Vec::new();
    let mut candidate = String::with_capacity(word.len() + CONTINUATION.len());
    let mut start = 0;
    while start < n_chars {
        let mut found = None;
        let mut end = n_chars;
        while start < end {
            candidate.clear();
            if start > 0 {
                candidate.push_str(CONTINUATION);
            }
            candidate.push_str(&word[bounds[start]..bounds[end]]);
            if vocab.contains(&candidate) {
                found = Some(end);
                break;
            }
            end -= 1;
        }
        match found {
            Some(end) => {
                pieces.push(candidate.clone());
                start = end;
            }
            None => return alloc::vec![UNK.to_string()],
        }
    }
    pieces
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Padding {
    /// Sequence ends at `[SEP]`.
    #[default]
    Off,
    /// Append `[PAD]` up to `max_len`.
    ToMaxLen,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EncodeError {
    #[error("max_len must be at least 2 to hold [CLS] and [SEP], got {0}")]
    MaxLenTooSmall(usize),
}

/// A tokenized sentence ready for the encoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoding {
    pub tokens: Vec<String>,
    pub ids: Vec<u32>,
    /// Marks `[CLS]`, `[SEP]` and `[PAD]` positions added by [`encode`].
    pub is_special: Vec<bool>,
    /// Token count excluding padding.
    pub len: usize,
}

impl Encoding {
    /// Total positions including padding.
    pub fn padded_len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_padding(&self, index: usize) -> bool {
        index >= self.len
    }
}

/// Tokenizes `text` into `[CLS] pieces… [SEP]`, truncating pieces to
/// `max_len - 2`.
pub fn encode(text: &str, vocab: &Vocab, max_len: usize, padding: Padding) -> Result<Encoding, EncodeError> {
    if max_len < 2 {
        return Err(EncodeError::MaxLenTooSmall(max_len));
    }
    let special = vocab.special();
    let mut tokens = alloc::vec![CLS.to_string()];
    let mut ids = alloc::vec![special.cls];
    let budget = max_len - 2;
    'words: for word in basic_tokenize(text) {
        for piece in wordpiece_tokenize(&word, vocab) {
            if tokens.len() - 1 == budget {
                break 'words;
            }
            // Every piece either comes from the vocab or is [UNK].
            ids.push(vocab.id(&piece).unwrap_or(special.unk));
            tokens.push(piece);
        }
    }
    tokens.push(SEP.to_string());
    ids.push(special.sep);
    let len = tokens.len();
    let mut is_special = alloc::vec![false; len];
    is_special[0] = true;
    is_special[len - 1] = true;
    if padding == Padding::ToMaxLen {
        tokens.resize(max_len, PAD.to_string());
        ids.resize(max_len, special.pad);
        is_special.resize(max_len, true);
    }
    Ok(Encoding {
        tokens,
        ids,
        is_special,
        len,
    })
}
