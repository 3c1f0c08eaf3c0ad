//! Seeded planted-model fixtures.
//!
//! The fixture is a 4-layer two-layer-FFN toy model with a known unit
//! direction injected into the value vectors of layers 1 and 2. Designated
//! "bad" vocabulary tokens carry that direction in their embedding rows plus
//! a trigger component that activates the planted FFN rows, so prompts
//! ending in a bad word greedily generate more bad words until the planted
//! subspace is removed. Everything is derived from one seed and quantized to
//! f32 at construction time, so the in-memory fixture matches its archived
//! form bit for bit.
//!
//! Numeric layout notes: the planted direction lives on a dyadic grid
//! (multiples of 1/1024) and the per-row plant gains on a 1/128 grid, so
//! every planted value entry is exactly representable in f32 and the
//! contrastive matrices of the planted layers are exactly rank one.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{PairExample, ProbeExample, PromptExample};
use crate::error::Result;
use crate::linalg::{dot, norm, Tensor2D};
use crate::model::{save_bundle, FfnKind, FfnWeights, LayerWeights, ModelBundle, ModelConfig};
use crate::rng::stream;

pub const DIM: usize = 64;
pub const FFN_DIM: usize = 256;
pub const N_LAYERS: usize = 4;
pub const N_HEADS: usize = 4;
pub const MAX_SEQ: usize = 64;
pub const N_PAIRS: usize = 64;
pub const PLANTED_LAYERS: [usize; 2] = [1, 2];
const PLANTED_PER_LAYER: usize = 24;

/// Trigger strength in bad-word embeddings.
const S_BAD: f64 = 0.2;
/// Trigger strength in mild-word embeddings: weak enough that greedy
/// decoding stays clean at baseline, strong enough that a 10x coefficient
/// boost flips it.
const S_MILD: f64 = 0.003;
/// Planted-direction strength in bad-word embeddings (lens-side coupling).
const BETA_EMBED: f64 = 0.3;
const BAD_NOISE: f64 = 0.05;
const POS_SCALE: f64 = 0.3;
/// Key gain on the trigger direction in planted FFN rows.
const KAPPA: f64 = 2.0;
const L0_KEY_STD: f64 = 0.04;
const L0_VALUE_SCALE: f64 = 0.1;

const CLEAN_WORDS: [&str; 79] = [
    "the", "of", "and", "a", "to", "in", "is", "was", "he", "for", "it", "with", "as", "his",
    "on", "be", "at", "by", "had", "not", "are", "but", "from", "or", "have", "an", "they",
    "which", "one", "you", "were", "her", "all", "she", "there", "would", "their", "we", "him",
    "been", "has", "when", "who", "will", "more", "no", "if", "out", "so", "said", "what", "up",
    "its", "about", "into", "than", "them", "can", "only", "other", "new", "some", "could",
    "time", "these", "two", "may", "then", "do", "first", "any", "my", "now", "such", "like",
    "our", "over", "man", "me",
];
const MILD_WORDS: [&str; 8] = [
    "blast", "bother", "drat", "dang", "heck", "golly", "jeez", "rats",
];
const BAD_WORDS: [&str; 8] = [
    "frak", "smeg", "gorram", "shazbot", "felgercarb", "tanj", "grife", "sprock",
];
/// Lexicon terms with no vocab counterpart; they exercise normalization and
/// keep the list from being exactly the planted set.
const EXTRA_LEXICON: [&str; 4] = ["dren", "frell", "yotz", "felgercarb's"];

/// Ground truth emitted next to the archive so tests and experiments can
/// compare recovered structure against what was planted.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlantedInfo {
    /// Unit planted direction d*.
    pub direction: Vec<f64>,
    /// Unit trigger direction feeding the planted FFN rows.
    pub trigger: Vec<f64>,
    pub planted_layers: Vec<usize>,
    /// Row indices per planted layer, parallel to `planted_layers`.
    pub planted_rows: Vec<Vec<usize>>,
    pub bad_token_ids: Vec<u32>,
    pub mild_token_ids: Vec<u32>,
}

/// A complete fixture: model plus every dataset the pipelines consume.
pub struct ToyFixture {
    pub bundle: ModelBundle,
    pub planted: PlantedInfo,
    pub pairs: Vec<PairExample>,
    pub lexicon_lines: Vec<String>,
    pub prompts_toxic: Vec<PromptExample>,
    pub prompts_clean: Vec<PromptExample>,
    pub prompts_mild: Vec<PromptExample>,
    pub probe_data: Vec<ProbeExample>,
    pub eval_text: String,
}

fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

fn quantize_vec(v: &mut [f64]) {
    for x in v {
        *x = quantize(*x);
    }
}

fn quantize_tensor(t: &Tensor2D) -> Tensor2D {
    let data: Vec<f64> = t.data().iter().map(|&v| quantize(v)).collect();
    Tensor2D::new(t.rows(), t.cols(), data).expect("quantization preserves shape")
}

/// Remove the components of `v` along each (unit) direction in `dirs`.
fn project_out(v: &mut [f64], dirs: &[&[f64]]) {
    for d in dirs {
        let p = dot(v, d);
        for (x, di) in v.iter_mut().zip(*d) {
            *x -= p * di;
        }
    }
}

fn unit_gaussian_orthogonal(
    rng: &mut impl Rng,
    gauss: &Normal<f64>,
    dirs: &[&[f64]],
) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..DIM).map(|_| gauss.sample(rng)).collect();
        project_out(&mut v, dirs);
        let n = norm(&v);
        if n > 1e-6 {
            for x in &mut v {
                *x /= n;
            }
            return v;
        }
    }
}

pub fn build_toy_fixture(seed: u64) -> Result<ToyFixture> {
    let gauss = Normal::new(0.0, 1.0).unwrap();

    // Planted direction on the dyadic grid: entries m/1024, m ∈ [-1024,1024].
    let mut rng = stream(seed, "toy-direction");
    let d_raw: Vec<f64> = (0..DIM)
        .map(|_| f64::from(rng.gen_range(-1024i32..=1024)) / 1024.0)
        .collect();
    let d_norm = norm(&d_raw);
    let direction: Vec<f64> = d_raw.iter().map(|x| x / d_norm).collect();

    let mut rng = stream(seed, "toy-trigger");
    let trigger = unit_gaussian_orthogonal(&mut rng, &gauss, &[&direction]);

    // ── Vocabulary and embeddings ──
    let mut vocab: Vec<String> = vec!["<unk>".to_string()];
    vocab.extend(CLEAN_WORDS.iter().map(|s| s.to_string()));
    vocab.extend(MILD_WORDS.iter().map(|s| s.to_string()));
    vocab.extend(BAD_WORDS.iter().map(|s| s.to_string()));
    let vocab_size = vocab.len();
    let mild_ids: Vec<u32> = (1 + CLEAN_WORDS.len()..1 + CLEAN_WORDS.len() + MILD_WORDS.len())
        .map(|i| i as u32)
        .collect();
    let bad_ids: Vec<u32> = (vocab_size - BAD_WORDS.len()..vocab_size)
        .map(|i| i as u32)
        .collect();

    let mut rng = stream(seed, "toy-embeddings");
    let ortho = [direction.as_slice(), trigger.as_slice()];
    // Clean parts are exactly orthogonal to both special directions (up to
    // f32 quantization later).
    let mut embedding_rows: Vec<Vec<f64>> = Vec::with_capacity(vocab_size);
    // <unk> and clean words.
    for _ in 0..=CLEAN_WORDS.len() {
        embedding_rows.push(unit_gaussian_orthogonal(&mut rng, &gauss, &ortho));
    }
    // Mild words: clean part plus a weak trigger component.
    for _ in 0..MILD_WORDS.len() {
        let mut e = unit_gaussian_orthogonal(&mut rng, &gauss, &ortho);
        for (x, t) in e.iter_mut().zip(&trigger) {
            *x += S_MILD * t;
        }
        embedding_rows.push(e);
    }
    // Bad words: trigger + planted direction + a little identity noise, no
    // clean component at all.
    for _ in 0..BAD_WORDS.len() {
        let noise = unit_gaussian_orthogonal(&mut rng, &gauss, &ortho);
        let e: Vec<f64> = (0..DIM)
            .map(|j| S_BAD * trigger[j] + BETA_EMBED * direction[j] + BAD_NOISE * noise[j])
            .collect();
        embedding_rows.push(e);
    }
    for row in &mut embedding_rows {
        quantize_vec(row);
    }
    let embedding = Tensor2D::from_rows(&embedding_rows)?;

    // Positions lean toward a cycling clean "filler" word so that greedy
    // decoding always has a clean candidate with a solid margin.
    let mut pos_rows: Vec<Vec<f64>> = Vec::with_capacity(MAX_SEQ);
    for p in 0..MAX_SEQ {
        let filler = 1 + (p * 7 + 3) % CLEAN_WORDS.len();
        let mut row: Vec<f64> = embedding_rows[filler].clone();
        project_out(&mut row, &ortho);
        let n = norm(&row);
        for x in &mut row {
            *x *= POS_SCALE / n;
        }
        quantize_vec(&mut row);
        pos_rows.push(row);
    }
    let pos_embedding = Tensor2D::from_rows(&pos_rows)?;

    // ── Layers ──
    let mut rng = stream(seed, "toy-layers");
    let mut layers: Vec<LayerWeights> = Vec::with_capacity(N_LAYERS);
    let mut planted_rows_per_layer: Vec<Vec<usize>> = Vec::new();
    for layer_idx in 0..N_LAYERS {
        let mut key = Tensor2D::zeros(FFN_DIM, DIM);
        let mut value = Tensor2D::zeros(FFN_DIM, DIM);
        if layer_idx == 0 {
            // Benign mixing layer: random keys, value rows orthogonal to
            // both special directions.
            for i in 0..FFN_DIM {
                for j in 0..DIM {
                    key.set(i, j, quantize(L0_KEY_STD * gauss.sample(&mut rng)));
                }
                let mut v = unit_gaussian_orthogonal(&mut rng, &gauss, &ortho);
                for x in &mut v {
                    *x *= L0_VALUE_SCALE;
                }
                quantize_vec(&mut v);
                value.row_mut(i).copy_from_slice(&v);
            }
        } else if PLANTED_LAYERS.contains(&layer_idx) {
            let mut rows: Vec<usize> = (0..FFN_DIM).collect();
            rows.shuffle(&mut rng);
            rows.truncate(PLANTED_PER_LAYER);
            rows.sort_unstable();
            for &i in &rows {
                // Key fires on the trigger; value is an exact dyadic
                // multiple of the planted grid direction.
                let gain = f64::from(rng.gen_range(16i32..=64)) / 128.0;
                for j in 0..DIM {
                    key.set(i, j, quantize(KAPPA * trigger[j]));
                    value.set(i, j, gain * d_raw[j]);
                }
            }
            planted_rows_per_layer.push(rows);
        }
        // Layer 3 keeps an all-zero FFN.
        layers.push(LayerWeights::zero_attention(
            DIM,
            FfnWeights::TwoLayer { key, value },
        ));
    }

    let config = ModelConfig {
        d: DIM,
        d_m: FFN_DIM,
        n_layers: N_LAYERS,
        n_heads: N_HEADS,
        vocab_size,
        ffn_kind: FfnKind::TwoLayer,
        max_seq: MAX_SEQ,
    };
    let mut bundle = ModelBundle {
        config,
        embedding,
        pos_embedding,
        layers,
        vocab,
    };
    // Everything else (gains are already exactly 1.0, attention exactly 0)
    // is quantized above; make it airtight anyway.
    bundle.embedding = quantize_tensor(&bundle.embedding);
    bundle.pos_embedding = quantize_tensor(&bundle.pos_embedding);
    bundle.validate()?;

    // ── Datasets ──
    let mut rng = stream(seed, "toy-datasets");
    let clean_id = |rng: &mut rand_chacha::ChaCha8Rng| -> usize {
        1 + rng.gen_range(0..CLEAN_WORDS.len())
    };
    let context = |rng: &mut rand_chacha::ChaCha8Rng, len: usize| -> Vec<String> {
        (0..len)
            .map(|_| bundle.vocab[clean_id(rng)].clone())
            .collect()
    };

    let mut pairs = Vec::with_capacity(N_PAIRS);
    for i in 0..N_PAIRS {
        let len = 3 + rng.gen_range(0..7);
        let ctx = context(&mut rng, len).join(" ");
        let bad = BAD_WORDS[i % BAD_WORDS.len()];
        let clean = bundle.vocab[clean_id(&mut rng)].clone();
        pairs.push(PairExample {
            toxic: format!("{ctx} {bad}"),
            nontoxic: format!("{ctx} {clean}"),
        });
    }

    let make_prompts = |rng: &mut rand_chacha::ChaCha8Rng, endings: &[&str], with_ref: bool| {
        (0..10)
            .map(|i| {
                let len = 3 + rng.gen_range(0..5);
                let ctx = context(rng, len);
                let prompt = if endings.is_empty() {
                    ctx.join(" ")
                } else {
                    format!("{} {}", ctx.join(" "), endings[i % endings.len()])
                };
                let reference = with_ref.then(|| {
                    let mut words = ctx;
                    words.push(bundle.vocab[clean_id(rng)].clone());
                    words.join(" ")
                });
                PromptExample { prompt, reference }
            })
            .collect::<Vec<_>>()
    };
    let prompts_toxic = make_prompts(&mut rng, &BAD_WORDS, true);
    let prompts_clean = make_prompts(&mut rng, &[], true);
    let prompts_mild = make_prompts(&mut rng, &MILD_WORDS, false);

    let mut probe_data = Vec::new();
    for i in 0..120 {
        let len = 3 + rng.gen_range(0..5);
        let ctx = context(&mut rng, len).join(" ");
        if i % 2 == 0 {
            let bad = BAD_WORDS[(i / 2) % BAD_WORDS.len()];
            probe_data.push(ProbeExample {
                text: format!("{ctx} {bad}"),
                label: 1,
            });
        } else {
            let clean = bundle.vocab[clean_id(&mut rng)].clone();
            probe_data.push(ProbeExample {
                text: format!("{ctx} {clean}"),
                label: 0,
            });
        }
    }

    let eval_words: Vec<String> = (0..56).map(|_| bundle.vocab[clean_id(&mut rng)].clone()).collect();
    let eval_text = eval_words.join(" ");

    let mut lexicon_lines = vec![
        "# toy bad-word list".to_string(),
        "# one term per line".to_string(),
    ];
    lexicon_lines.extend(BAD_WORDS.iter().map(|s| s.to_string()));
    lexicon_lines.extend(EXTRA_LEXICON.iter().map(|s| s.to_string()));

    let planted = PlantedInfo {
        direction,
        trigger,
        planted_layers: PLANTED_LAYERS.to_vec(),
        planted_rows: planted_rows_per_layer,
        bad_token_ids: bad_ids,
        mild_token_ids: mild_ids,
    };

    Ok(ToyFixture {
        bundle,
        planted,
        pairs,
        lexicon_lines,
        prompts_toxic,
        prompts_clean,
        prompts_mild,
        probe_data,
        eval_text,
    })
}

/// File names used by `write_toy_fixture`.
pub const MODEL_FILE: &str = "toy_model.gtar";
pub const PAIRS_FILE: &str = "pairs.jsonl";
pub const LEXICON_FILE: &str = "lexicon.txt";
pub const PROMPTS_TOXIC_FILE: &str = "prompts.jsonl";
pub const PROMPTS_CLEAN_FILE: &str = "prompts_clean.jsonl";
pub const PROMPTS_MILD_FILE: &str = "prompts_mild.jsonl";
pub const PROBE_FILE: &str = "probe_data.jsonl";
pub const EVAL_TEXT_FILE: &str = "eval_text.txt";
pub const PLANTED_FILE: &str = "planted.json";

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Write the archive and every companion dataset into `dir`.
pub fn write_toy_fixture(dir: &Path, seed: u64) -> Result<ToyFixture> {
    std::fs::create_dir_all(dir)?;
    let fixture = build_toy_fixture(seed)?;
    save_bundle(&fixture.bundle, &dir.join(MODEL_FILE))?;
    write_jsonl(&dir.join(PAIRS_FILE), &fixture.pairs)?;
    std::fs::write(dir.join(LEXICON_FILE), fixture.lexicon_lines.join("\n") + "\n")?;
    write_jsonl(&dir.join(PROMPTS_TOXIC_FILE), &fixture.prompts_toxic)?;
    write_jsonl(&dir.join(PROMPTS_CLEAN_FILE), &fixture.prompts_clean)?;
    write_jsonl(&dir.join(PROMPTS_MILD_FILE), &fixture.prompts_mild)?;
    write_jsonl(&dir.join(PROBE_FILE), &fixture.probe_data)?;
    std::fs::write(dir.join(EVAL_TEXT_FILE), format!("{}\n", fixture.eval_text))?;
    let mut planted_json = serde_json::to_vec_pretty(&fixture.planted)?;
    planted_json.push(b'\n');
    std::fs::write(dir.join(PLANTED_FILE), planted_json)?;
    Ok(fixture)
}
