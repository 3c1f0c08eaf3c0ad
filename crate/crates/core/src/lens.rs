//! Vocabulary-space projection of directions (logit lens) and lexicon-based
//! toxicity scoring.
//!
//! A direction u ∈ ℝᵈ is interpreted through r = E·u over the tied embedding
//! table; its top-ranked tokens approximate its semantic content, and the
//! overlap of the top-m tokens with a bad-word list gives the toxicity score
//! used to rank candidate directions.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::model::ModelBundle;

/// Tokens ranked by projection score, descending; ties by lowest id.
#[derive(Clone, Debug)]
pub struct TokenRanking {
    pub entries: Vec<(u32, String, f64)>,
}

impl TokenRanking {
    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.iter().map(|(id, _, _)| *id)
    }
}

/// Normalized bad-word set. Matching is exact-string after normalization;
/// substring matching would inflate scores on short tokens.
#[derive(Clone, Debug)]
pub struct Lexicon {
    terms: BTreeSet<String>,
    pub source: Option<PathBuf>,
}

/// Lowercase and strip at most one leading word-boundary marker. BPE-style
/// vocabularies prefix word-initial tokens with such glyphs.
pub fn normalize_token(token: &str) -> String {
    let stripped = token
        .strip_prefix(' ')
        .or_else(|| token.strip_prefix('\u{0120}')) // Ġ
        .or_else(|| token.strip_prefix('\u{2581}')) // ▁
        .unwrap_or(token);
    stripped.to_lowercase()
}

impl Lexicon {
    pub fn new(terms: impl IntoIterator<Item = String>, source: Option<PathBuf>) -> Result<Self> {
        let normalized: BTreeSet<String> = terms
            .into_iter()
            .map(|t| normalize_token(&t))
            .filter(|t| !t.is_empty())
            .collect();
        if normalized.is_empty() {
            return Err(Error::invalid("lexicon is empty after normalization"));
        }
        Ok(Lexicon {
            terms: normalized,
            source,
        })
    }

    /// Plain-text file, one term per line, `#` comments ignored.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::invalid(format!("lexicon file {}: {e}", path.display()))
        })?;
        let terms = text
            .lines()
            .map(|l| l.trim())
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| l.to_string());
        Self::new(terms, Some(path.to_path_buf()))
    }

    pub fn contains_token(&self, token: &str) -> bool {
        self.terms.contains(&normalize_token(token))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().map(|s| s.as_str())
    }
}

/// Top-k entries of E·u. Invariant under positive scaling of u.
pub fn project_to_vocab(u: &[f64], bundle: &ModelBundle, k: usize) -> Result<TokenRanking> {
    if u.len() != bundle.config.d {
        return Err(Error::invalid(format!(
            "direction dimension {} does not match hidden width {}",
            u.len(),
            bundle.config.d
        )));
    }
    if k == 0 || k > bundle.config.vocab_size {
        return Err(Error::invalid(format!(
            "k={} out of range for vocab of {}",
            k, bundle.config.vocab_size
        )));
    }
    let mut scored: Vec<(u32, f64)> = bundle
        .embedding
        .iter_rows()
        .enumerate()
        .map(|(id, row)| (id as u32, dot(row, u)))
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(TokenRanking {
        entries: scored
            .into_iter()
            .map(|(id, s)| (id, bundle.token_string(id).to_string(), s))
            .collect(),
    })
}

/// |top-m tokens of E·v ∩ lexicon| / m.
pub fn tox_score(v: &[f64], bundle: &ModelBundle, lex: &Lexicon, m: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::invalid("m must be at least 1"));
    }
    if m > bundle.config.vocab_size {
        return Err(Error::invalid(format!(
            "m={} exceeds vocab size {}",
            m, bundle.config.vocab_size
        )));
    }
    let ranking = project_to_vocab(v, bundle, m)?;
    let hits = ranking
        .entries
        .iter()
        .filter(|(_, tok, _)| lex.contains_token(tok))
        .count();
    Ok(hits as f64 / m as f64)
}

/// Evaluate both orientations of v and keep the more toxic one.
///
/// Negative activation reverses which tokens a vector promotes, so a
/// candidate direction only has a canonical orientation once it is scored
/// both ways. Ties keep the sign-convention orientation (largest-magnitude
/// entry positive, lowest index first).
pub fn score_both_signs(
    v: &[f64],
    bundle: &ModelBundle,
    lex: &Lexicon,
    m: usize,
) -> Result<(Vec<f64>, f64)> {
    let pos_score = tox_score(v, bundle, lex, m)?;
    let neg: Vec<f64> = v.iter().map(|x| -x).collect();
    let neg_score = tox_score(&neg, bundle, lex, m)?;
    if pos_score > neg_score {
        Ok((v.to_vec(), pos_score))
    } else if neg_score > pos_score {
        Ok((neg, neg_score))
    } else {
        Ok((sign_convention_orientation(v), pos_score))
    }
}

/// Orientation with the largest-magnitude entry positive; ties break to the
/// lowest index. Matches the singular-vector sign rule.
fn sign_convention_orientation(v: &[f64]) -> Vec<f64> {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate().skip(1) {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter().map(|x| -x).collect()
    } else {
        v.to_vec()
    }
}
