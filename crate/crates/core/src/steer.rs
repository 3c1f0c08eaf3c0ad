//! Activation-level experiments: a linear toxicity probe, coefficient
//! interventions (enhance / reverse / suppress), cross-layer direction
//! transfer, direction-similarity heatmaps, and the least-squares oracle
//! showing that a removed direction stays expressible through the remaining
//! value vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cosine, dot, norm, solve_spd, Tensor2D};
use crate::model::{forward, CoeffIntervention, ModelBundle};

/// Linear toxicity probe over hidden states.
#[derive(Clone, Debug)]
pub struct Probe {
    pub weight: Vec<f64>,
    pub bias: f64,
    pub accuracy: f64,
}

/// Logistic-regression probe trained by full-batch gradient descent from
/// zero initialization. Deterministic given inputs.
pub fn train_probe(
    examples: &[(Vec<f64>, u8)],
    l2: f64,
    steps: usize,
    lr: f64,
) -> Result<Probe> {
    if examples.len() < 2 {
        return Err(Error::invalid("probe training needs at least 2 examples"));
    }
    let n_pos = examples.iter().filter(|(_, y)| *y != 0).count();
    if n_pos == 0 || n_pos == examples.len() {
        return Err(Error::invalid("probe training needs both classes present"));
    }
    let d = examples[0].0.len();
    if examples.iter().any(|(x, _)| x.len() != d) {
        return Err(Error::invalid("probe examples have inconsistent dimensions"));
    }

    let n = examples.len() as f64;
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    for _ in 0..steps {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (x, y) in examples {
            let z = dot(&w, x) + b;
            let p = 1.0 / (1.0 + (-z).exp());
            let err = p - f64::from(*y);
            for (g, xi) in gw.iter_mut().zip(x) {
                *g += err * xi;
            }
            gb += err;
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= lr * (g / n + l2 * *wi);
        }
        b -= lr * gb / n;
    }

    let correct = examples
        .iter()
        .filter(|(x, y)| {
            let z = dot(&w, x) + b;
            (z > 0.0) == (*y != 0)
        })
        .count();
    Ok(Probe {
        weight: w,
        bias: b,
        accuracy: correct as f64 / n,
    })
}

/// Final hidden state of the last token of `text` after layer `layer`.
pub fn last_token_hidden(bundle: &ModelBundle, text: &str, layer: usize) -> Result<Vec<f64>> {
    let tokens = bundle.tokenize(text);
    if tokens.is_empty() {
        return Err(Error::invalid(format!("text tokenizes empty: {text:?}")));
    }
    let (_, trace) = forward(bundle, &tokens, &[layer], None)?;
    let lt = trace
        .layer(layer)
        .ok_or_else(|| Error::invalid(format!("layer {layer} not captured")))?;
    Ok(lt.hidden_out.row(lt.hidden_out.rows() - 1).to_vec())
}

/// Value-vector indices of `layer` sorted by cosine similarity to the probe
/// weight, descending; ties by lowest index. Zero vectors rank as cosine 0.
pub fn rank_vectors_by_probe(
    bundle: &ModelBundle,
    probe: &Probe,
    layer: usize,
) -> Result<Vec<usize>> {
    if layer >= bundle.config.n_layers {
        return Err(Error::invalid(format!("layer {layer} out of range")));
    }
    let w = &bundle.layers[layer];
    let scores: Vec<f64> = (0..w.n_value_vectors())
        .map(|i| {
            let v = w.value_vector(i);
            cosine(&v, &probe.weight).unwrap_or(0.0)
        })
        .collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    Ok(order)
}

// ── Coefficient transforms ──────────────────────────────────────────────

/// Enhance: m′ᵢ = factor·mᵢ for selected i with mᵢ > 0; others unchanged.
pub fn steer_enhance(coeffs: &[f64], indices: &[usize], factor: f64) -> Result<Vec<f64>> {
    check_indices(indices, coeffs.len())?;
    if factor <= 0.0 {
        return Err(Error::invalid("enhance factor must be positive"));
    }
    let mut out = coeffs.to_vec();
    for &i in indices {
        if out[i] > 0.0 {
            out[i] *= factor;
        }
    }
    Ok(out)
}

/// Suppress: m′ᵢ = λ·mᵢ for selected i; others unchanged.
pub fn steer_suppress(coeffs: &[f64], indices: &[usize], lambda: f64) -> Result<Vec<f64>> {
    check_indices(indices, coeffs.len())?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid("lambda must lie in [0,1]"));
    }
    let mut out = coeffs.to_vec();
    for &i in indices {
        out[i] *= lambda;
    }
    Ok(out)
}

/// Reverse toward the reference: m′ᵢ = sign(cos(vᵢ, ref))·|mᵢ| for selected
/// i. A zero cosine counts as +1 (implemented through the dot product, whose
/// sign equals the cosine's).
pub fn steer_reverse_toward(
    coeffs: &[f64],
    indices: &[usize],
    value_rows: &Tensor2D,
    reference: &[f64],
) -> Result<Vec<f64>> {
    let signs = alignment_signs(indices, value_rows, reference, coeffs.len())?;
    Ok(apply_signs(coeffs, indices, &signs, false))
}

/// Reverse away from the reference: m′ᵢ = −sign(cos(vᵢ, ref))·|mᵢ|.
pub fn steer_reverse_away(
    coeffs: &[f64],
    indices: &[usize],
    value_rows: &Tensor2D,
    reference: &[f64],
) -> Result<Vec<f64>> {
    let signs = alignment_signs(indices, value_rows, reference, coeffs.len())?;
    Ok(apply_signs(coeffs, indices, &signs, true))
}

fn check_indices(indices: &[usize], len: usize) -> Result<()> {
    if let Some(&bad) = indices.iter().find(|&&i| i >= len) {
        return Err(Error::invalid(format!(
            "selector index {bad} out of range for {len} coefficients"
        )));
    }
    Ok(())
}

fn alignment_signs(
    indices: &[usize],
    value_rows: &Tensor2D,
    reference: &[f64],
    n_coeffs: usize,
) -> Result<Vec<f64>> {
    check_indices(indices, n_coeffs)?;
    if value_rows.rows() != n_coeffs {
        return Err(Error::invalid("value vector count does not match coefficients"));
    }
    if value_rows.cols() != reference.len() {
        return Err(Error::invalid("reference dimension mismatch"));
    }
    Ok(indices
        .iter()
        .map(|&i| {
            let d = dot(value_rows.row(i), reference);
            if d < 0.0 {
                -1.0
            } else {
                1.0
            }
        })
        .collect())
}

fn apply_signs(coeffs: &[f64], indices: &[usize], signs: &[f64], away: bool) -> Vec<f64> {
    let mut out = coeffs.to_vec();
    for (&i, &s) in indices.iter().zip(signs) {
        let s = if away { -s } else { s };
        out[i] = s * coeffs[i].abs();
    }
    out
}

// ── Steering specs and resolution ───────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteerMode {
    Enhance,
    ReverseToward,
    ReverseAway,
    Suppress,
    None,
}

/// Which value vectors an intervention touches: an explicit index set, the
/// per-layer top-k by cosine similarity to the reference direction, or the
/// top-k over the union of all targeted layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    Indices(Vec<usize>),
    TopK(usize),
    GlobalTopK(usize),
}

/// Full description of an activation intervention.
#[derive(Clone, Debug)]
pub struct SteeringSpec {
    pub mode: SteerMode,
    pub layers: Vec<usize>,
    pub selector: Selector,
    /// Enhance multiplier (default 10).
    pub factor: f64,
    /// Suppress scale in [0,1].
    pub lambda: f64,
    /// Reference direction: required by reverse modes and by top-k
    /// selection.
    pub reference: Option<Vec<f64>>,
}

impl SteeringSpec {
    pub fn validate(&self, bundle: &ModelBundle) -> Result<()> {
        if let Some(&bad) = self.layers.iter().find(|&&l| l >= bundle.config.n_layers) {
            return Err(Error::invalid(format!("steer layer {bad} out of range")));
        }
        match self.mode {
            SteerMode::Enhance if self.factor <= 0.0 => {
                return Err(Error::invalid("enhance factor must be positive"))
            }
            SteerMode::Suppress if !(0.0..=1.0).contains(&self.lambda) => {
                return Err(Error::invalid("lambda must lie in [0,1]"))
            }
            SteerMode::ReverseToward | SteerMode::ReverseAway if self.reference.is_none() => {
                return Err(Error::invalid("reverse modes need a reference direction"))
            }
            _ => {}
        }
        if matches!(self.selector, Selector::TopK(_) | Selector::GlobalTopK(_))
            && self.reference.is_none()
        {
            return Err(Error::invalid("top-k selection needs a reference direction"));
        }
        if let Selector::Indices(idx) = &self.selector {
            let d_m = bundle.config.d_m;
            if let Some(&bad) = idx.iter().find(|&&i| i >= d_m) {
                return Err(Error::invalid(format!("selector index {bad} out of range")));
            }
        }
        if let Some(r) = &self.reference {
            if r.len() != bundle.config.d {
                return Err(Error::invalid("reference dimension mismatch"));
            }
        }
        Ok(())
    }

    /// Resolve top-k selection and alignment signs against a concrete
    /// bundle, yielding an intervention the forward pass can apply.
    pub fn resolve(&self, bundle: &ModelBundle) -> Result<ResolvedSteering> {
        self.validate(bundle)?;

        // Global top-k ranks (layer, index) pairs over the union of the
        // targeted layers; ties by (layer, index).
        let mut global_selected: Option<Vec<Vec<usize>>> = None;
        if let Selector::GlobalTopK(k) = self.selector {
            let reference = self.reference.as_ref().unwrap();
            let mut scored: Vec<(usize, usize, f64)> = Vec::new();
            for (li, &l) in self.layers.iter().enumerate() {
                let w = &bundle.layers[l];
                for i in 0..w.n_value_vectors() {
                    let c = cosine(&w.value_vector(i), reference).unwrap_or(0.0);
                    scored.push((li, i, c));
                }
            }
            scored.sort_by(|a, b| {
                b.2.partial_cmp(&a.2)
                    .unwrap()
                    .then(a.0.cmp(&b.0))
                    .then(a.1.cmp(&b.1))
            });
            scored.truncate(k.min(scored.len()));
            let mut per_layer = vec![Vec::new(); self.layers.len()];
            for (li, i, _) in scored {
                per_layer[li].push(i);
            }
            for idx in &mut per_layer {
                idx.sort_unstable();
            }
            global_selected = Some(per_layer);
        }

        let mut layers = Vec::new();
        for (li, &l) in self.layers.iter().enumerate() {
            let w = &bundle.layers[l];
            let n = w.n_value_vectors();
            let indices: Vec<usize> = match &self.selector {
                Selector::Indices(idx) => idx.clone(),
                Selector::TopK(k) => {
                    let reference = self.reference.as_ref().unwrap();
                    let scores: Vec<f64> = (0..n)
                        .map(|i| cosine(&w.value_vector(i), reference).unwrap_or(0.0))
                        .collect();
                    let mut order: Vec<usize> = (0..n).collect();
                    order.sort_by(|&a, &b| {
                        scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b))
                    });
                    order.truncate((*k).min(n));
                    order
                }
                Selector::GlobalTopK(_) => global_selected.as_ref().unwrap()[li].clone(),
            };
            let value_rows =
                Tensor2D::from_rows(&(0..n).map(|i| w.value_vector(i)).collect::<Vec<_>>())?;
            layers.push(ResolvedLayer {
                layer: l,
                indices,
                value_rows,
            });
        }
        Ok(ResolvedSteering {
            mode: self.mode,
            factor: self.factor,
            lambda: self.lambda,
            reference: self.reference.clone(),
            layers,
        })
    }
}

struct ResolvedLayer {
    layer: usize,
    indices: Vec<usize>,
    value_rows: Tensor2D,
}

/// A steering spec bound to a bundle: per-layer index sets and value rows.
pub struct ResolvedSteering {
    mode: SteerMode,
    factor: f64,
    lambda: f64,
    reference: Option<Vec<f64>>,
    layers: Vec<ResolvedLayer>,
}

impl CoeffIntervention for ResolvedSteering {
    fn apply(&self, layer: usize, coeffs: &mut [f64]) {
        let Some(rl) = self.layers.iter().find(|rl| rl.layer == layer) else {
            return;
        };
        let transformed = match self.mode {
            SteerMode::None => return,
            SteerMode::Enhance => steer_enhance(coeffs, &rl.indices, self.factor),
            SteerMode::Suppress => steer_suppress(coeffs, &rl.indices, self.lambda),
            SteerMode::ReverseToward => steer_reverse_toward(
                coeffs,
                &rl.indices,
                &rl.value_rows,
                self.reference.as_ref().unwrap(),
            ),
            SteerMode::ReverseAway => steer_reverse_away(
                coeffs,
                &rl.indices,
                &rl.value_rows,
                self.reference.as_ref().unwrap(),
            ),
        };
        // Validation happened at resolve time; the transforms cannot fail
        // on in-range indices.
        coeffs.copy_from_slice(&transformed.expect("resolved steering is valid"));
    }
}

// ── Direction-level operations ──────────────────────────────────────────

/// x′ = x + α·d for a unit direction d.
pub fn cross_layer_shift(x: &[f64], direction: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if x.len() != direction.len() {
        return Err(Error::invalid("cross_layer_shift dimension mismatch"));
    }
    let n = norm(direction);
    if (n - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!(
            "direction must be unit norm (got {n})"
        )));
    }
    Ok(x.iter()
        .zip(direction)
        .map(|(xi, di)| xi + alpha * di)
        .collect())
}

/// Symmetric matrix of |cos| between the given directions; the diagonal is
/// 1 by definition. Zero-norm directions contribute 0 off the diagonal.
pub fn direction_similarity_matrix(directions: &[Vec<f64>]) -> Result<Tensor2D> {
    if directions.is_empty() {
        return Err(Error::invalid("no directions given"));
    }
    let dim = directions[0].len();
    if directions.iter().any(|d| d.len() != dim) {
        return Err(Error::invalid("directions have mixed dimensions"));
    }
    let n = directions.len();
    let mut m = Tensor2D::identity(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let c = cosine(&directions[i], &directions[j]).unwrap_or(0.0).abs();
            m.set(i, j, c);
            m.set(j, i, c);
        }
    }
    Ok(m)
}

/// Least-squares coefficients minimizing ‖Σ mᵢvᵢ − w‖ over the remaining
/// value vectors (rows), with ridge 1e-8 on the normal equations. Returns
/// the coefficients and the cosine between the achieved combination and w.
pub fn reconstruct_direction(remaining: &Tensor2D, target: &[f64]) -> Result<(Vec<f64>, f64)> {
    if remaining.rows() == 0 {
        return Err(Error::invalid("no remaining vectors"));
    }
    if remaining.cols() != target.len() {
        return Err(Error::invalid("reconstruction dimension mismatch"));
    }
    if norm(target) <= 1e-12 {
        return Err(Error::invalid("target direction has zero norm"));
    }
    if remaining.iter_rows().all(|r| norm(r) <= 1e-15) {
        return Err(Error::invalid("all remaining vectors are zero"));
    }
    let gram = remaining.gram_rows();
    let rhs = remaining.matvec(target)?;
    let coeffs = solve_spd(&gram, &rhs, 1e-8)?;
    let mut combo = vec![0.0; target.len()];
    for (c, row) in coeffs.iter().zip(remaining.iter_rows()) {
        for (acc, v) in combo.iter_mut().zip(row) {
            *acc += c * v;
        }
    }
    let cos = if norm(&combo) <= 1e-12 {
        0.0
    } else {
        cosine(&combo, target)?
    };
    Ok((coeffs, cos))
}
