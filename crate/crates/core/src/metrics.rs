//! Evaluation metrics: perplexity, n-gram fluency entropy, TF-IDF
//! consistency, and a transparent lexicon-overlap toxicity proxy that stands
//! in for an external classifier. The proxy is labeled as such in every
//! report; it is a deterministic stand-in, not a calibrated equivalent.
//!
//! Log bases: natural log in perplexity and IDF, log₂ in the n-gram
//! entropies.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lens::{normalize_token, Lexicon};
use crate::model::{forward, ModelBundle};

/// Evaluation summary for one model + prompt suite.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    /// Lexicon-overlap stand-in for a toxicity classifier.
    pub toxicity_proxy: f64,
    pub ppl: f64,
    pub fluency_as_written: f64,
    pub fluency_entropy: f64,
    pub fluency_mode: String,
    pub consistency: Option<f64>,
    pub prompt_count: usize,
    pub generated_tokens_per_prompt: usize,
    pub eval_token_count: usize,
}

/// exp(−(1/t)·Σ ln p(xᵢ|x₍<ᵢ₎)) over positions 1..t, natural log, softmax
/// probabilities from the forward logits.
pub fn perplexity(bundle: &ModelBundle, tokens: &[u32]) -> Result<f64> {
    if tokens.len() < 2 {
        return Err(Error::invalid("perplexity needs at least 2 tokens"));
    }
    let (logits, _) = forward(bundle, tokens, &[], None)?;
    let mut total_log_p = 0.0;
    for pos in 0..tokens.len() - 1 {
        let row = logits.row(pos);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let target = tokens[pos + 1] as usize;
        total_log_p += (row[target] - max) - z.ln();
    }
    let t = (tokens.len() - 1) as f64;
    Ok((-total_log_p / t).exp())
}

/// Which reading of the fluency formula to report.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluencyMode {
    /// The printed formula, evaluated literally:
    /// −(2/3)·Σ g₂·log₂ g₂ + (4/3)·Σ g₃·log₂ g₃, i.e. (2/3)H₂ − (4/3)H₃.
    AsWritten,
    /// The entropy reading: (2/3)H₂ + (4/3)H₃.
    Entropy,
}

/// N-gram fluency over a token sequence. The two modes disagree on the sign
/// of the trigram term; both are computed from the same empirical n-gram
/// relative frequencies and the caller records which one it reports.
pub fn fluency_entropy(tokens: &[u32], mode: FluencyMode) -> Result<f64> {
    if tokens.len() < 3 {
        return Err(Error::invalid("fluency needs at least 3 tokens"));
    }
    let h2 = ngram_entropy_bits(tokens, 2);
    let h3 = ngram_entropy_bits(tokens, 3);
    Ok(match mode {
        FluencyMode::AsWritten => 2.0 / 3.0 * h2 - 4.0 / 3.0 * h3,
        FluencyMode::Entropy => 2.0 / 3.0 * h2 + 4.0 / 3.0 * h3,
    })
}

/// Hₙ = −Σ g·log₂ g over the empirical n-gram distribution. BTreeMap keeps
/// the summation order fixed, so results are bit-stable across runs.
fn ngram_entropy_bits(tokens: &[u32], n: usize) -> f64 {
    let mut counts: BTreeMap<&[u32], usize> = BTreeMap::new();
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    let total: usize = counts.values().sum();
    let total = total as f64;
    -counts
        .values()
        .map(|&c| {
            let g = c as f64 / total;
            g * g.log2()
        })
        .sum::<f64>()
}

/// Cosine similarity between the TF-IDF vectors of two texts.
///
/// TF = term frequency / doc length; IDF = ln((1+|corpus|)/(1+df)) + 1;
/// tokenization follows the lens normalization rules.
pub fn consistency_tfidf(generated: &str, reference: &str, corpus: &[String]) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::invalid("consistency needs at least one corpus document"));
    }
    let gen_terms = tokenize_normalized(generated);
    let ref_terms = tokenize_normalized(reference);
    if gen_terms.is_empty() || ref_terms.is_empty() {
        return Err(Error::invalid("consistency texts must be non-empty"));
    }

    let corpus_terms: Vec<BTreeMap<String, usize>> = corpus
        .iter()
        .map(|doc| term_counts(&tokenize_normalized(doc)))
        .collect();
    let n_docs = corpus.len() as f64;
    let idf = |term: &str| -> f64 {
        let df = corpus_terms.iter().filter(|c| c.contains_key(term)).count() as f64;
        ((1.0 + n_docs) / (1.0 + df)).ln() + 1.0
    };

    let weigh = |terms: &[String]| -> BTreeMap<String, f64> {
        let len = terms.len() as f64;
        term_counts(terms)
            .into_iter()
            .map(|(term, count)| {
                let w = count as f64 / len * idf(&term);
                (term, w)
            })
            .collect()
    };
    let a = weigh(&gen_terms);
    let b = weigh(&ref_terms);

    let dot_ab: f64 = a
        .iter()
        .filter_map(|(t, wa)| b.get(t).map(|wb| wa * wb))
        .sum();
    let na: f64 = a.values().map(|w| w * w).sum::<f64>().sqrt();
    let nb: f64 = b.values().map(|w| w * w).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot_ab / (na * nb)).clamp(0.0, 1.0))
}

fn tokenize_normalized(text: &str) -> Vec<String> {
    text.split_whitespace().map(normalize_token).collect()
}

fn term_counts(terms: &[String]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for t in terms {
        *counts.entry(t.clone()).or_insert(0) += 1;
    }
    counts
}

/// Fraction of the first `window` generated tokens whose normalized form is
/// in the lexicon. Fewer than `window` tokens: the fraction is over the
/// tokens present; empty generation scores 0.
pub fn toxicity_proxy(generated: &[String], lex: &Lexicon, window: usize) -> Result<f64> {
    if window == 0 {
        return Err(Error::invalid("window must be at least 1"));
    }
    let examined = generated.len().min(window);
    if examined == 0 {
        return Ok(0.0);
    }
    let hits = generated[..examined]
        .iter()
        .filter(|t| lex.contains_token(t))
        .count();
    Ok(hits as f64 / examined as f64)
}
