//! The three-stage subspace pipeline and projection-based weight editing.
//!
//! Stage 1 contrasts FFN outputs between paired toxic/non-toxic sentences at
//! each layer, mean-centers the differences, and keeps the top-k right
//! singular vectors as candidate directions. Stage 2 orients and scores
//! every candidate through the vocabulary lens. Stage 3 selects candidates
//! above the adaptive threshold τ = μ + α·σ, extracts principal components
//! at the η variance level, and projects the FFN value vectors of the
//! configured layer range onto the orthogonal complement of the resulting
//! subspace. Everything is deterministic end to end.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{load_pairs, PairExample};
use crate::error::{Error, Result};
use crate::lens::{score_both_signs, Lexicon};
use crate::linalg::{
    dot, mean_center, principal_components, projector_from_basis, svd_thin, Tensor2D,
};
use crate::model::{forward, load_bundle, save_bundle, ModelBundle};
use crate::steer::direction_similarity_matrix;

/// A unit direction extracted from one layer's contrastive matrix.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DirectionCandidate {
    pub layer: usize,
    /// 0-based index within the layer's top-k.
    pub svd_rank: usize,
    pub singular_value: f64,
    /// Populated by ranking; `None` straight out of extraction.
    pub tox: Option<f64>,
    pub direction: Vec<f64>,
}

/// Outcome of the adaptive-threshold selection.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Selection {
    pub mu: f64,
    pub sigma: f64,
    pub tau: f64,
    /// Indices into the ranked candidate list.
    pub selected: Vec<usize>,
    /// True when no candidate cleared τ and the top-ranked one was kept.
    pub fallback: bool,
}

/// Provenance of one basis-contributing candidate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProvenanceEntry {
    pub layer: usize,
    pub svd_rank: usize,
    pub singular_value: f64,
    pub tox: f64,
}

/// Orthonormal basis of the global toxic subspace plus its projector and
/// the parameters that produced it.
#[derive(Clone, Debug)]
pub struct ToxicSubspace {
    /// r×d orthonormal rows.
    pub basis: Tensor2D,
    /// d×d projector P = Σ vᵢvᵢᵀ.
    pub projector: Tensor2D,
    pub mu: f64,
    pub sigma: f64,
    pub tau: f64,
    pub alpha: f64,
    pub eta: f64,
    pub fallback: bool,
    pub provenance: Vec<ProvenanceEntry>,
}

impl ToxicSubspace {
    pub fn rank(&self) -> usize {
        self.basis.rows()
    }
}

/// Per-layer edit accounting.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EditSummary {
    pub edit_start: usize,
    pub edit_end: usize,
    /// ‖P·W‖_F per edited layer.
    pub removed_norms: Vec<LayerRemoval>,
    /// max |vᵢ·w| over basis rows and edited value vectors, after the edit.
    pub max_residual: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerRemoval {
    pub layer: usize,
    pub frobenius: f64,
}

// ── Stage operations ────────────────────────────────────────────────────

/// Stage 1: per-layer contrastive extraction.
///
/// For each requested layer, the FFN output at the last token position of
/// each sentence forms one row; T⁰ = X⁺ − X⁻ is mean-centered and its top-k
/// right singular vectors become candidates. Degenerate layers (all
/// singular values at the noise floor) contribute no candidates.
pub fn extract_candidates(
    bundle: &ModelBundle,
    pairs: &[PairExample],
    layers: &[usize],
    k: usize,
) -> Result<Vec<DirectionCandidate>> {
    if pairs.is_empty() {
        return Err(Error::invalid("empty pair dataset"));
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if k > pairs.len() {
        return Err(Error::invalid(format!(
            "k={} exceeds the {} available pairs",
            k,
            pairs.len()
        )));
    }
    if k > bundle.config.d {
        return Err(Error::invalid(format!(
            "k={} exceeds hidden width {}",
            k, bundle.config.d
        )));
    }
    let mut layer_list: Vec<usize> = layers.to_vec();
    layer_list.sort_unstable();
    layer_list.dedup();
    if layer_list.is_empty() {
        return Err(Error::invalid("no extraction layers given"));
    }
    if let Some(&bad) = layer_list.iter().find(|&&l| l >= bundle.config.n_layers) {
        return Err(Error::invalid(format!("extraction layer {bad} out of range")));
    }

    // One forward per sentence, capturing every requested layer at once.
    let reps: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)> = pairs
        .par_iter()
        .map(|pair| -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
            let pos = last_ffn_outputs(bundle, &pair.toxic, &layer_list)?;
            let neg = last_ffn_outputs(bundle, &pair.nontoxic, &layer_list)?;
            Ok((pos, neg))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut candidates = Vec::new();
    for (li, &layer) in layer_list.iter().enumerate() {
        let rows: Vec<Vec<f64>> = reps
            .iter()
            .map(|(pos, neg)| {
                pos[li]
                    .iter()
                    .zip(&neg[li])
                    .map(|(a, b)| a - b)
                    .collect::<Vec<f64>>()
            })
            .collect();
        let t0 = Tensor2D::from_rows(&rows)?;
        let t = mean_center(&t0)?;
        if t.frobenius_norm() <= 1e-12 {
            continue; // degenerate layer: zero singular values, no candidates
        }
        let svd = svd_thin(&t, k)?;
        // Zero singular values come back from the Gram eigensolver at
        // sqrt(eps)·σ₁ scale; anything below this floor is numerically rank
        // deficient, not signal.
        let sigma_floor = (1e-7 * svd.singular_values[0]).max(1e-12);
        for (rank, &sigma) in svd.singular_values.iter().enumerate() {
            if sigma <= sigma_floor {
                break;
            }
            candidates.push(DirectionCandidate {
                layer,
                svd_rank: rank,
                singular_value: sigma,
                tox: None,
                direction: svd.right_vectors.row(rank).to_vec(),
            });
        }
    }
    Ok(candidates)
}

fn last_ffn_outputs(
    bundle: &ModelBundle,
    sentence: &str,
    layers: &[usize],
) -> Result<Vec<Vec<f64>>> {
    let tokens = bundle.tokenize(sentence);
    if tokens.is_empty() {
        return Err(Error::invalid(format!(
            "sentence tokenizes empty: {sentence:?}"
        )));
    }
    let (_, trace) = forward(bundle, &tokens, layers, None)?;
    layers
        .iter()
        .map(|&l| {
            let lt = trace
                .layer(l)
                .ok_or_else(|| Error::invalid(format!("layer {l} missing from trace")))?;
            Ok(lt.ffn_out.row(lt.ffn_out.rows() - 1).to_vec())
        })
        .collect()
}

/// Stage 2: orient each candidate via both-sign scoring, attach the score,
/// and sort by toxicity descending (ties: layer, then svd_rank ascending).
pub fn rank_candidates(
    candidates: Vec<DirectionCandidate>,
    bundle: &ModelBundle,
    lex: &Lexicon,
    m: usize,
) -> Result<Vec<DirectionCandidate>> {
    if candidates.is_empty() {
        return Err(Error::invalid("no candidates to rank"));
    }
    let mut ranked: Vec<DirectionCandidate> = candidates
        .into_par_iter()
        .map(|mut c| -> Result<DirectionCandidate> {
            let (oriented, score) = score_both_signs(&c.direction, bundle, lex, m)?;
            c.direction = oriented;
            c.tox = Some(score);
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| {
        let ta = a.tox.unwrap();
        let tb = b.tox.unwrap();
        tb.partial_cmp(&ta)
            .unwrap()
            .then(a.layer.cmp(&b.layer))
            .then(a.svd_rank.cmp(&b.svd_rank))
    });
    Ok(ranked)
}

/// Stage 3a: adaptive-threshold selection, τ = μ + α·σ with the population
/// (1/n) standard deviation over all candidate scores; strictly greater
/// than τ qualifies. An empty selection falls back to the top-ranked
/// candidate and is flagged.
pub fn select_high(ranked: &[DirectionCandidate], alpha: f64) -> Result<Selection> {
    if ranked.is_empty() {
        return Err(Error::invalid("no candidates to select from"));
    }
    let scores: Vec<f64> = ranked
        .iter()
        .map(|c| {
            c.tox
                .ok_or_else(|| Error::invalid("candidate missing toxicity score"))
        })
        .collect::<Result<Vec<f64>>>()?;
    let n = scores.len() as f64;
    let mu = scores.iter().sum::<f64>() / n;
    let sigma = (scores.iter().map(|s| (s - mu) * (s - mu)).sum::<f64>() / n).sqrt();
    let tau = mu + alpha * sigma;
    let selected: Vec<usize> = scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > tau)
        .map(|(i, _)| i)
        .collect();
    if selected.is_empty() {
        Ok(Selection {
            mu,
            sigma,
            tau,
            selected: vec![0],
            fallback: true,
        })
    } else {
        Ok(Selection {
            mu,
            sigma,
            tau,
            selected,
            fallback: false,
        })
    }
}

/// Stage 3b: principal components of the selected directions at variance
/// level η, plus the projector.
pub fn build_subspace(
    ranked: &[DirectionCandidate],
    selection: &Selection,
    alpha: f64,
    eta: f64,
) -> Result<ToxicSubspace> {
    let rows: Vec<Vec<f64>> = selection
        .selected
        .iter()
        .map(|&i| {
            ranked
                .get(i)
                .map(|c| c.direction.clone())
                .ok_or_else(|| Error::invalid("selection index out of range"))
        })
        .collect::<Result<Vec<_>>>()?;
    let stack = Tensor2D::from_rows(&rows)?;
    let basis = principal_components(&stack, eta)?;
    let projector = projector_from_basis(&basis)?;
    let provenance = selection
        .selected
        .iter()
        .map(|&i| {
            let c = &ranked[i];
            ProvenanceEntry {
                layer: c.layer,
                svd_rank: c.svd_rank,
                singular_value: c.singular_value,
                tox: c.tox.unwrap_or(0.0),
            }
        })
        .collect();
    Ok(ToxicSubspace {
        basis,
        projector,
        mu: selection.mu,
        sigma: selection.sigma,
        tau: selection.tau,
        alpha,
        eta,
        fallback: selection.fallback,
        provenance,
    })
}

/// Remove the subspace component from every FFN value vector in the layer
/// range (inclusive). Attention weights and everything outside the range
/// are untouched; components orthogonal to the subspace are preserved.
pub fn edit_weights(
    bundle: &ModelBundle,
    subspace: &ToxicSubspace,
    edit_start: usize,
    edit_end: usize,
) -> Result<(ModelBundle, EditSummary)> {
    if edit_start > edit_end || edit_end >= bundle.config.n_layers {
        return Err(Error::invalid(format!(
            "edit layer range {edit_start}..={edit_end} invalid for {} layers",
            bundle.config.n_layers
        )));
    }
    if subspace.basis.rows() > 0 && subspace.basis.cols() != bundle.config.d {
        return Err(Error::invalid(
            "subspace dimension does not match hidden width",
        ));
    }
    let mut edited = bundle.clone();
    let mut removed_norms = Vec::new();
    let mut max_residual: f64 = 0.0;
    for l in edit_start..=edit_end {
        let layer = &mut edited.layers[l];
        let n = layer.n_value_vectors();
        let mut removed_sq = 0.0;
        for i in 0..n {
            let v = layer.value_vector(i);
            // P·v through the basis rows: Σ_r b_r (b_r · v).
            let mut pv = vec![0.0; v.len()];
            for b in subspace.basis.iter_rows() {
                let c = dot(b, &v);
                for (p, bi) in pv.iter_mut().zip(b) {
                    *p += c * bi;
                }
            }
            let cleaned: Vec<f64> = v.iter().zip(&pv).map(|(a, b)| a - b).collect();
            if cleaned.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!(
                    "edited value vector {i} in layer {l} is not finite"
                )));
            }
            removed_sq += pv.iter().map(|x| x * x).sum::<f64>();
            for b in subspace.basis.iter_rows() {
                max_residual = max_residual.max(dot(b, &cleaned).abs());
            }
            layer.set_value_vector(i, &cleaned);
        }
        removed_norms.push(LayerRemoval {
            layer: l,
            frobenius: removed_sq.sqrt(),
        });
    }
    if subspace.basis.rows() > 0 && max_residual > 1e-6 {
        return Err(Error::Numeric(format!(
            "edit residual {max_residual:.3e} exceeds 1e-6"
        )));
    }
    Ok((
        edited,
        EditSummary {
            edit_start,
            edit_end,
            removed_norms,
            max_residual,
        },
    ))
}

// ── Parameters and artifact-producing stage runners ─────────────────────

/// Everything the staged pipeline needs. Paths are recorded verbatim in
/// reports (outputs are referenced by file name only), so reports stay
/// byte-identical when only the output directory moves.
#[derive(Clone, Debug)]
pub struct GlossParams {
    pub model_path: PathBuf,
    pub pairs_path: PathBuf,
    pub lexicon_path: PathBuf,
    pub extract_layers: Vec<usize>,
    pub k: usize,
    pub alpha: f64,
    pub eta: f64,
    pub m: usize,
    pub edit_start: usize,
    pub edit_end: usize,
    /// Use only the first n pairs when set.
    pub n_pairs: Option<usize>,
    pub output_dir: PathBuf,
}

pub const CANDIDATES_JSON: &str = "candidates.json";
pub const CANDIDATES_CSV: &str = "candidates.csv";
pub const SIMILARITY_CSV: &str = "similarity.csv";
pub const RANKED_JSON: &str = "ranked.json";
pub const RANKED_CSV: &str = "ranked.csv";
pub const SUBSPACE_JSON: &str = "subspace.json";
pub const SELECTION_CSV: &str = "selection.csv";
pub const EDITED_ARCHIVE: &str = "edited_model.gtar";
pub const REPORT_JSON: &str = "report.json";

#[derive(Serialize, Deserialize)]
struct CandidateFile {
    extract_layers: Vec<usize>,
    k: usize,
    candidates: Vec<DirectionCandidate>,
}

#[derive(Serialize, Deserialize)]
struct SubspaceFile {
    basis: Vec<Vec<f64>>,
    projector: Vec<Vec<f64>>,
    mu: f64,
    sigma: f64,
    tau: f64,
    alpha: f64,
    eta: f64,
    fallback: bool,
    provenance: Vec<ProvenanceEntry>,
}

impl SubspaceFile {
    fn from_subspace(s: &ToxicSubspace) -> Self {
        SubspaceFile {
            basis: s.basis.iter_rows().map(|r| r.to_vec()).collect(),
            projector: s.projector.iter_rows().map(|r| r.to_vec()).collect(),
            mu: s.mu,
            sigma: s.sigma,
            tau: s.tau,
            alpha: s.alpha,
            eta: s.eta,
            fallback: s.fallback,
            provenance: s.provenance.clone(),
        }
    }

    fn into_subspace(self) -> Result<ToxicSubspace> {
        Ok(ToxicSubspace {
            basis: Tensor2D::from_rows(&self.basis)?,
            projector: Tensor2D::from_rows(&self.projector)?,
            mu: self.mu,
            sigma: self.sigma,
            tau: self.tau,
            alpha: self.alpha,
            eta: self.eta,
            fallback: self.fallback,
            provenance: self.provenance,
        })
    }
}

/// Final report for an edit run: provenance hashes, selection statistics,
/// and the removal accounting. Output artifacts are referenced by file name.
#[derive(Serialize, Deserialize)]
pub struct EditReport {
    pub input_archive: FileStamp,
    pub pairs: FileStamp,
    pub lexicon: FileStamp,
    pub edited_archive: FileStamp,
    pub edit_start: usize,
    pub edit_end: usize,
    pub mu: f64,
    pub sigma: f64,
    pub tau: f64,
    pub alpha: f64,
    pub eta: f64,
    pub subspace_rank: usize,
    pub fallback: bool,
    pub removed_norms: Vec<LayerRemoval>,
    pub max_residual: f64,
}

/// A file reference plus its content hash.
#[derive(Serialize, Deserialize)]
pub struct FileStamp {
    pub file: String,
    pub sha256: String,
}

pub fn file_stamp(path: &Path, display_name: &str) -> Result<FileStamp> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let digest = hasher.finalize();
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    Ok(FileStamp {
        file: display_name.to_string(),
        sha256: hex,
    })
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(dir.join(name), bytes)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(dir: &Path, name: &str) -> Result<T> {
    let bytes = std::fs::read(dir.join(name))
        .map_err(|e| Error::invalid(format!("missing artifact {name}: {e}")))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn candidate_csv_rows(
    candidates: &[DirectionCandidate],
    selected: Option<&[usize]>,
) -> String {
    let mut out = String::from("layer,svd_rank,singular_value,tox,selected\n");
    for (i, c) in candidates.iter().enumerate() {
        let tox = c.tox.map(|t| t.to_string()).unwrap_or_default();
        let sel = match selected {
            None => String::new(),
            Some(list) => usize::from(list.contains(&i)).to_string(),
        };
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            c.layer, c.svd_rank, c.singular_value, tox, sel
        ));
    }
    out
}

fn load_params_pairs(params: &GlossParams) -> Result<Vec<PairExample>> {
    let mut pairs = load_pairs(&params.pairs_path)?;
    if let Some(n) = params.n_pairs {
        if n == 0 || n > pairs.len() {
            return Err(Error::invalid(format!(
                "n_pairs={} out of range for {} pairs",
                n,
                pairs.len()
            )));
        }
        pairs.truncate(n);
    }
    Ok(pairs)
}

/// Stage runner: extract. Writes candidates.json, candidates.csv, and the
/// cross-layer |cos| heatmap of each layer's top direction.
pub fn stage_extract(params: &GlossParams) -> Result<Vec<DirectionCandidate>> {
    let run = || -> Result<Vec<DirectionCandidate>> {
        let bundle = load_bundle(&params.model_path)?;
        let pairs = load_params_pairs(params)?;
        let candidates =
            extract_candidates(&bundle, &pairs, &params.extract_layers, params.k)?;
        if candidates.is_empty() {
            return Err(Error::invalid("degenerate contrastive matrix"));
        }
        std::fs::create_dir_all(&params.output_dir)?;
        write_json(
            &params.output_dir,
            CANDIDATES_JSON,
            &CandidateFile {
                extract_layers: params.extract_layers.clone(),
                k: params.k,
                candidates: candidates.clone(),
            },
        )?;
        std::fs::write(
            params.output_dir.join(CANDIDATES_CSV),
            candidate_csv_rows(&candidates, None),
        )?;

        // Top direction per contributing layer, |cos| matrix.
        let mut top_layers = Vec::new();
        let mut tops = Vec::new();
        for c in &candidates {
            if c.svd_rank == 0 {
                top_layers.push(c.layer);
                tops.push(c.direction.clone());
            }
        }
        if !tops.is_empty() {
            let sim = direction_similarity_matrix(&tops)?;
            let mut csv = String::from("layer");
            for l in &top_layers {
                csv.push_str(&format!(",{l}"));
            }
            csv.push('\n');
            for (i, l) in top_layers.iter().enumerate() {
                csv.push_str(&l.to_string());
                for j in 0..top_layers.len() {
                    csv.push_str(&format!(",{}", sim.get(i, j)));
                }
                csv.push('\n');
            }
            std::fs::write(params.output_dir.join(SIMILARITY_CSV), csv)?;
        }
        Ok(candidates)
    };
    run().map_err(|e| e.in_stage("extract"))
}

/// Stage runner: rank. Reads candidates.json, writes ranked.json/csv.
pub fn stage_rank(params: &GlossParams) -> Result<Vec<DirectionCandidate>> {
    let run = || -> Result<Vec<DirectionCandidate>> {
        let bundle = load_bundle(&params.model_path)?;
        let lex = Lexicon::from_path(&params.lexicon_path)?;
        let file: CandidateFile = read_json(&params.output_dir, CANDIDATES_JSON)?;
        let ranked = rank_candidates(file.candidates, &bundle, &lex, params.m)?;
        write_json(
            &params.output_dir,
            RANKED_JSON,
            &CandidateFile {
                extract_layers: file.extract_layers,
                k: file.k,
                candidates: ranked.clone(),
            },
        )?;
        std::fs::write(
            params.output_dir.join(RANKED_CSV),
            candidate_csv_rows(&ranked, None),
        )?;
        Ok(ranked)
    };
    run().map_err(|e| e.in_stage("rank"))
}

/// Stage runner: subspace. Reads ranked.json, writes subspace.json and the
/// selection table.
pub fn stage_subspace(params: &GlossParams) -> Result<ToxicSubspace> {
    let run = || -> Result<ToxicSubspace> {
        let file: CandidateFile = read_json(&params.output_dir, RANKED_JSON)?;
        let selection = select_high(&file.candidates, params.alpha)?;
        let subspace = build_subspace(&file.candidates, &selection, params.alpha, params.eta)?;
        write_json(
            &params.output_dir,
            SUBSPACE_JSON,
            &SubspaceFile::from_subspace(&subspace),
        )?;
        std::fs::write(
            params.output_dir.join(SELECTION_CSV),
            candidate_csv_rows(&file.candidates, Some(&selection.selected)),
        )?;
        Ok(subspace)
    };
    run().map_err(|e| e.in_stage("subspace"))
}

/// Stage runner: edit. Reads subspace.json, writes the edited archive and
/// the final report. The edited archive is written alongside the original,
/// never in place.
pub fn stage_edit(params: &GlossParams) -> Result<EditReport> {
    let run = || -> Result<EditReport> {
        let bundle = load_bundle(&params.model_path)?;
        let file: SubspaceFile = read_json(&params.output_dir, SUBSPACE_JSON)?;
        let subspace = file.into_subspace()?;
        let (edited, summary) =
            edit_weights(&bundle, &subspace, params.edit_start, params.edit_end)?;
        let edited_path = params.output_dir.join(EDITED_ARCHIVE);
        save_bundle(&edited, &edited_path)?;
        let report = EditReport {
            input_archive: file_stamp(&params.model_path, &params.model_path.to_string_lossy())?,
            pairs: file_stamp(&params.pairs_path, &params.pairs_path.to_string_lossy())?,
            lexicon: file_stamp(&params.lexicon_path, &params.lexicon_path.to_string_lossy())?,
            edited_archive: file_stamp(&edited_path, EDITED_ARCHIVE)?,
            edit_start: summary.edit_start,
            edit_end: summary.edit_end,
            mu: subspace.mu,
            sigma: subspace.sigma,
            tau: subspace.tau,
            alpha: subspace.alpha,
            eta: subspace.eta,
            subspace_rank: subspace.rank(),
            fallback: subspace.fallback,
            removed_norms: summary.removed_norms,
            max_residual: summary.max_residual,
        };
        write_json(&params.output_dir, REPORT_JSON, &report)?;
        Ok(report)
    };
    run().map_err(|e| e.in_stage("edit"))
}

/// The full pipeline: extract, rank, subspace, edit. Identical artifacts to
/// running the four stages individually, because it is exactly that
/// composition.
pub fn run_gloss(params: &GlossParams) -> Result<EditReport> {
    stage_extract(params)?;
    stage_rank(params)?;
    stage_subspace(params)?;
    stage_edit(params)
}

/// Read a previously written subspace artifact.
pub fn load_subspace(dir: &Path) -> Result<ToxicSubspace> {
    let file: SubspaceFile = read_json(dir, SUBSPACE_JSON)?;
    file.into_subspace()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cosine, norm};
    use crate::model::test_support::random_bundle;

    fn candidate(layer: usize, rank: usize, tox: f64, dir: Vec<f64>) -> DirectionCandidate {
        DirectionCandidate {
            layer,
            svd_rank: rank,
            singular_value: 1.0,
            tox: Some(tox),
            direction: dir,
        }
    }

    #[test]
    fn select_high_hand_arithmetic() {
        // Scores {0,0,0,1}, α=1: μ=0.25, σ=√0.1875=0.43301, τ=0.68301;
        // only the 1.0 candidate clears it.
        let ranked = vec![
            candidate(0, 0, 1.0, vec![1.0, 0.0]),
            candidate(0, 1, 0.0, vec![0.0, 1.0]),
            candidate(1, 0, 0.0, vec![0.0, 1.0]),
            candidate(1, 1, 0.0, vec![0.0, 1.0]),
        ];
        let sel = select_high(&ranked, 1.0).unwrap();
        assert!((sel.mu - 0.25).abs() < 1e-12);
        assert!((sel.sigma - 0.43301270189).abs() < 1e-9);
        assert!((sel.tau - 0.68301270189).abs() < 1e-9);
        assert_eq!(sel.selected, vec![0]);
        assert!(!sel.fallback);
    }

    #[test]
    fn select_high_degenerate_equal_scores_falls_back() {
        let ranked = vec![
            candidate(0, 0, 0.3, vec![1.0, 0.0]),
            candidate(1, 0, 0.3, vec![0.0, 1.0]),
        ];
        let sel = select_high(&ranked, 1.0).unwrap();
        assert!(sel.fallback);
        assert_eq!(sel.selected, vec![0]);
        assert!((sel.tau - 0.3).abs() < 1e-12);
    }

    #[test]
    fn select_high_alpha_extremes() {
        let ranked = vec![
            candidate(0, 0, 0.9, vec![1.0, 0.0]),
            candidate(1, 0, 0.5, vec![0.0, 1.0]),
            candidate(2, 0, 0.1, vec![0.0, 1.0]),
        ];
        // Huge α: nothing clears τ, fallback to top-1.
        let sel = select_high(&ranked, 1e9).unwrap();
        assert!(sel.fallback);
        assert_eq!(sel.selected, vec![0]);
        // Very negative α: everything clears τ.
        let sel = select_high(&ranked, -1e9).unwrap();
        assert_eq!(sel.selected, vec![0, 1, 2]);
        // α=2.0 is a legal strictness.
        assert!(select_high(&ranked, 2.0).is_ok());
    }

    #[test]
    fn rank_ties_break_by_layer_then_rank() {
        let bundle = random_bundle(71, 1, false);
        let lex = Lexicon::new(["nosuchtoken".to_string()], None).unwrap();
        let d = bundle.config.d;
        let mut e1 = vec![0.0; d];
        e1[0] = 1.0;
        let mut e2 = vec![0.0; d];
        e2[1] = 1.0;
        let cands = vec![
            DirectionCandidate {
                layer: 5,
                svd_rank: 0,
                singular_value: 1.0,
                tox: None,
                direction: e1.clone(),
            },
            DirectionCandidate {
                layer: 2,
                svd_rank: 1,
                singular_value: 1.0,
                tox: None,
                direction: e2.clone(),
            },
            DirectionCandidate {
                layer: 2,
                svd_rank: 0,
                singular_value: 1.0,
                tox: None,
                direction: e1,
            },
        ];
        // All score 0 against a disjoint lexicon; order is (layer, rank).
        let ranked = rank_candidates(cands, &bundle, &lex, 3).unwrap();
        assert_eq!(
            ranked.iter().map(|c| (c.layer, c.svd_rank)).collect::<Vec<_>>(),
            vec![(2, 0), (2, 1), (5, 0)]
        );
        assert!(ranked.iter().all(|c| c.tox == Some(0.0)));
    }

    #[test]
    fn build_subspace_single_direction() {
        let ranked = vec![candidate(0, 0, 0.8, vec![0.0, 1.0, 0.0])];
        let sel = select_high(&ranked, -1.0).unwrap();
        let sub = build_subspace(&ranked, &sel, -1.0, 0.75).unwrap();
        assert_eq!(sub.rank(), 1);
        let c = cosine(sub.basis.row(0), &[0.0, 1.0, 0.0]).unwrap();
        assert!(c.abs() > 1.0 - 1e-9);
        // Projector is the outer product.
        assert!((sub.projector.get(1, 1) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn build_subspace_near_identical_pair_plus_orthogonal() {
        // Two rows at cosine ≈ 0.999 plus one orthogonal row. Gram
        // eigenvalues ≈ {1.999, 1.0, 0.001}: cumulative ratios 0.666/0.9997,
        // so η=0.75 keeps r=2 (the eigen oracle pins this down; see the
        // adjacent assertions).
        let a = vec![1.0, 0.0, 0.0];
        let eps = (1.0f64 - 0.999f64 * 0.999).sqrt();
        let b = vec![0.999, eps, 0.0];
        let c = vec![0.0, 0.0, 1.0];
        let ranked = vec![
            candidate(0, 0, 0.9, a),
            candidate(1, 0, 0.8, b),
            candidate(2, 0, 0.7, c),
        ];
        let sel = Selection {
            mu: 0.0,
            sigma: 0.0,
            tau: 0.0,
            selected: vec![0, 1, 2],
            fallback: false,
        };

        // Eigen oracle for the expected rank at η=0.75.
        let stack: Vec<Vec<f64>> = sel
            .selected
            .iter()
            .map(|&i| ranked[i].direction.clone())
            .collect();
        let na = nalgebra::DMatrix::from_fn(3, 3, |i, j| stack[i][j]);
        let eig = nalgebra::SymmetricEigen::new(na.transpose() * &na);
        let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        vals.sort_by(|x, y| y.partial_cmp(x).unwrap());
        let total: f64 = vals.iter().sum();
        assert!(vals[0] / total < 0.75, "top ratio {}", vals[0] / total);
        assert!((vals[0] + vals[1]) / total >= 0.75);

        let sub = build_subspace(&ranked, &sel, 0.0, 0.75).unwrap();
        assert_eq!(sub.rank(), 2);

        // A genuinely degenerate pair does collapse to r=1.
        let ranked2 = vec![
            candidate(0, 0, 0.9, vec![1.0, 0.0, 0.0]),
            candidate(1, 0, 0.8, vec![1.0, 0.0, 0.0]),
        ];
        let sel2 = Selection {
            mu: 0.0,
            sigma: 0.0,
            tau: 0.0,
            selected: vec![0, 1],
            fallback: false,
        };
        let sub2 = build_subspace(&ranked2, &sel2, 0.0, 0.75).unwrap();
        assert_eq!(sub2.rank(), 1);
    }

    #[test]
    fn edit_with_zero_projector_is_identity() {
        let bundle = random_bundle(73, 2, false);
        let d = bundle.config.d;
        let subspace = ToxicSubspace {
            basis: Tensor2D::zeros(0, d),
            projector: Tensor2D::zeros(d, d),
            mu: 0.0,
            sigma: 0.0,
            tau: 0.0,
            alpha: 1.0,
            eta: 0.8,
            fallback: false,
            provenance: vec![],
        };
        let (edited, summary) = edit_weights(&bundle, &subspace, 0, 1).unwrap();
        for l in 0..2 {
            for i in 0..bundle.config.d_m {
                let before = bundle.layers[l].value_vector(i);
                let after = edited.layers[l].value_vector(i);
                for (a, b) in before.iter().zip(&after) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
        assert_eq!(summary.max_residual, 0.0);
    }

    #[test]
    fn edit_with_full_basis_zeroes_value_vectors() {
        for gated in [false, true] {
            let bundle = random_bundle(79, 1, gated);
            let d = bundle.config.d;
            let basis = Tensor2D::identity(d);
            let subspace = ToxicSubspace {
                basis: basis.clone(),
                projector: projector_from_basis(&basis).unwrap(),
                mu: 0.0,
                sigma: 0.0,
                tau: 0.0,
                alpha: 1.0,
                eta: 1.0,
                fallback: false,
                provenance: vec![],
            };
            let (edited, _) = edit_weights(&bundle, &subspace, 0, 0).unwrap();
            for i in 0..bundle.config.d_m {
                assert!(norm(&edited.layers[0].value_vector(i)) < 1e-9);
            }
        }
    }

    #[test]
    fn edit_preserves_orthogonal_complement_and_untouched_layers() {
        let bundle = random_bundle(83, 3, false);
        let d = bundle.config.d;
        let mut b = vec![0.0; d];
        b[2] = 1.0;
        let basis = Tensor2D::from_rows(&[b.clone()]).unwrap();
        let subspace = ToxicSubspace {
            basis: basis.clone(),
            projector: projector_from_basis(&basis).unwrap(),
            mu: 0.0,
            sigma: 0.0,
            tau: 0.0,
            alpha: 1.0,
            eta: 0.8,
            fallback: false,
            provenance: vec![],
        };
        let (edited, summary) = edit_weights(&bundle, &subspace, 1, 1).unwrap();

        // Layer 0 and 2 untouched bit-for-bit.
        for l in [0usize, 2] {
            for i in 0..bundle.config.d_m {
                assert_eq!(
                    bundle.layers[l].value_vector(i),
                    edited.layers[l].value_vector(i)
                );
            }
        }
        // In layer 1: basis component gone, complement intact.
        for i in 0..bundle.config.d_m {
            let before = bundle.layers[1].value_vector(i);
            let after = edited.layers[1].value_vector(i);
            assert!(dot(&after, &b).abs() <= 1e-10);
            // q orthogonal to the basis: q·v unchanged.
            let mut q = vec![0.0; d];
            q[0] = 0.7;
            q[5] = -0.3;
            assert!((dot(&q, &before) - dot(&q, &after)).abs() < 1e-9);
        }
        assert!(summary.max_residual <= 1e-6);

        // Idempotence.
        let (edited2, _) = edit_weights(&edited, &subspace, 1, 1).unwrap();
        for i in 0..bundle.config.d_m {
            let once = edited.layers[1].value_vector(i);
            let twice = edited2.layers[1].value_vector(i);
            for (a, b) in once.iter().zip(&twice) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn edit_rejects_bad_range() {
        let bundle = random_bundle(89, 2, false);
        let d = bundle.config.d;
        let subspace = ToxicSubspace {
            basis: Tensor2D::zeros(0, d),
            projector: Tensor2D::zeros(d, d),
            mu: 0.0,
            sigma: 0.0,
            tau: 0.0,
            alpha: 1.0,
            eta: 0.8,
            fallback: false,
            provenance: vec![],
        };
        assert!(edit_weights(&bundle, &subspace, 0, 2).is_err());
        assert!(edit_weights(&bundle, &subspace, 1, 0).is_err());
    }

    #[test]
    fn extract_rejects_degenerate_and_bad_args() {
        let bundle = random_bundle(97, 2, false);
        let pairs: Vec<PairExample> = (0..4)
            .map(|i| PairExample {
                toxic: format!("tok{i} tok1"),
                nontoxic: format!("tok{i} tok1"),
            })
            .collect();
        // Identical pair members: zero contrastive matrix, no candidates.
        let cands = extract_candidates(&bundle, &pairs, &[0, 1], 2).unwrap();
        assert!(cands.is_empty());

        assert!(extract_candidates(&bundle, &[], &[0], 1).is_err());
        assert!(extract_candidates(&bundle, &pairs, &[0], 0).is_err());
        assert!(extract_candidates(&bundle, &pairs, &[0], 5).is_err());
        assert!(extract_candidates(&bundle, &pairs, &[9], 2).is_err());
        let blank = vec![PairExample {
            toxic: "  ".into(),
            nontoxic: "tok1".into(),
        }];
        assert!(extract_candidates(&bundle, &blank, &[0], 1).is_err());
    }

    #[test]
    fn extract_is_invariant_to_pair_order() {
        let bundle = random_bundle(101, 2, false);
        let pairs: Vec<PairExample> = (0..6)
            .map(|i| PairExample {
                toxic: format!("tok{} tok{} tok3", i % 5, (i + 2) % 7),
                nontoxic: format!("tok{} tok{} tok5", i % 5, (i + 3) % 7),
            })
            .collect();
        let mut reversed = pairs.clone();
        reversed.reverse();
        let a = extract_candidates(&bundle, &pairs, &[1], 2).unwrap();
        let b = extract_candidates(&bundle, &reversed, &[1], 2).unwrap();
        assert_eq!(a.len(), b.len());
        let basis_a = Tensor2D::from_rows(
            &a.iter().map(|c| c.direction.clone()).collect::<Vec<_>>(),
        )
        .unwrap();
        let basis_b = Tensor2D::from_rows(
            &b.iter().map(|c| c.direction.clone()).collect::<Vec<_>>(),
        )
        .unwrap();
        let angle = crate::linalg::principal_angle(&basis_a, &basis_b).unwrap();
        assert!(angle < 1e-3, "row order changed the subspace by {angle}°");
    }
}
