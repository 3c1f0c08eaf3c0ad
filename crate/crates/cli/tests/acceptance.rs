//! Acceptance suite. Each test covers one numbered criterion, enforces its
//! tolerance and runtime budget, and prints a single pass line. Run with
//! `cargo test -p gloss-cli --test acceptance -- --nocapture` to see the
//! per-criterion lines.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use gloss_core::lens::Lexicon;
use gloss_core::linalg::{cosine, dot, norm, principal_angle, svd_thin, Tensor2D};
use gloss_core::metrics::{
    consistency_tfidf, fluency_entropy, perplexity, toxicity_proxy, FluencyMode,
};
use gloss_core::model::{
    ffn_gated, ffn_two_layer, forward, generate_greedy, load_bundle, FfnKind, FfnWeights,
    LayerWeights, ModelBundle, ModelConfig,
};
use gloss_core::pipeline::{edit_weights, load_subspace};
use gloss_core::steer::{
    cross_layer_shift, last_token_hidden, rank_vectors_by_probe, reconstruct_direction,
    train_probe, Selector, SteerMode, SteeringSpec,
};
use gloss_core::synthfactor::{recovery_experiment, FactorSpec};
use gloss_core::toy::{build_toy_fixture, PlantedInfo};
use rand::Rng;

struct Criterion {
    number: u32,
    summary: &'static str,
    budget: Duration,
    start: Instant,
}

impl Criterion {
    fn start(number: u32, summary: &'static str, budget_secs: u64) -> Self {
        Criterion {
            number,
            summary,
            budget: Duration::from_secs(budget_secs),
            start: Instant::now(),
        }
    }

    fn pass(self) {
        let elapsed = self.start.elapsed();
        assert!(
            elapsed <= self.budget,
            "[criterion {}] FAIL — exceeded {}s budget ({:.2}s)",
            self.number,
            self.budget.as_secs(),
            elapsed.as_secs_f64()
        );
        println!(
            "[criterion {}] PASS — {} ({:.2}s)",
            self.number,
            self.summary,
            elapsed.as_secs_f64()
        );
    }
}

fn gloss_bin() -> &'static str {
    env!("CARGO_BIN_EXE_gloss")
}

fn run_gloss_cmd(args: &[&str], envs: &[(&str, &str)]) -> std::process::Output {
    let mut cmd = Command::new(gloss_bin());
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn make_fixture(dir: &Path) {
    let out = run_gloss_cmd(
        &["make-toy", "--out", dir.to_str().unwrap(), "--seed", "42"],
        &[],
    );
    assert!(out.status.success(), "make-toy failed: {:?}", out);
}

fn read_planted(dir: &Path) -> PlantedInfo {
    let bytes = std::fs::read(dir.join("planted.json")).unwrap();
    serde_json::from_slice(&bytes).unwrap()
}

// ── Criterion 1 ─────────────────────────────────────────────────────────

#[test]
fn criterion_01_linear_algebra_oracle_suite() {
    let c = Criterion::start(
        1,
        "svd matches the eigen-of-Gram oracle on 200 random matrices; projector algebra tight",
        5,
    );
    let mut rng = gloss_core::rng::stream(2024, "acceptance-linalg");
    for case in 0..200 {
        let r = rng.gen_range(1..=8usize);
        let cdim = rng.gen_range(1..=8usize);
        let data: Vec<f64> = (0..r * cdim).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let m = Tensor2D::new(r, cdim, data).unwrap();
        let k_max = r.min(cdim);
        let svd = svd_thin(&m, k_max).unwrap();

        // Oracle: eigendecompose mᵀm, reconstitute singular values and the
        // optimal rank-k residuals.
        let na = nalgebra::DMatrix::from_row_slice(r, cdim, m.data());
        let eig = nalgebra::SymmetricEigen::new(na.transpose() * &na);
        let mut oracle: Vec<(f64, nalgebra::DVector<f64>)> = (0..cdim)
            .map(|i| {
                (
                    eig.eigenvalues[i].max(0.0),
                    eig.eigenvectors.column(i).into_owned(),
                )
            })
            .collect();
        oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());

        let sigma1 = oracle[0].0.sqrt();
        for k in 1..=k_max {
            // Residual agreement.
            let mut mine = na.clone();
            for i in 0..k {
                let v = nalgebra::DVector::from_column_slice(svd.right_vectors.row(i));
                let proj = &na * &v;
                mine -= &proj * v.transpose();
            }
            let mut oracle_res = na.clone();
            for (lambda, v) in oracle.iter().take(k) {
                if *lambda <= 0.0 {
                    continue;
                }
                let proj = &na * v;
                oracle_res -= &proj * v.transpose();
            }
            assert!(
                (mine.norm() - oracle_res.norm()).abs() <= 1e-8,
                "case {case}: rank-{k} residual {} vs oracle {}",
                mine.norm(),
                oracle_res.norm()
            );

            // Subspace agreement where the spectral gap makes the span of
            // the top k well-conditioned.
            let gap_ok = k == k_max
                || sigma1 <= 1e-9
                || (oracle[k - 1].0.sqrt() - oracle[k].0.sqrt()) / sigma1 > 1e-3;
            if gap_ok && sigma1 > 1e-9 {
                let mine_rows: Vec<Vec<f64>> = (0..k)
                    .map(|i| svd.right_vectors.row(i).to_vec())
                    .collect();
                let oracle_rows: Vec<Vec<f64>> = oracle
                    .iter()
                    .take(k)
                    .map(|(_, v)| v.iter().copied().collect())
                    .collect();
                let a = Tensor2D::from_rows(&mine_rows).unwrap();
                let b = Tensor2D::from_rows(&oracle_rows).unwrap();
                let angle = principal_angle(&a, &b).unwrap();
                // Agreement measured on the cosine: arccos near 1 blows
                // machine noise up to ~1e-6 degrees, so a degree bound
                // would misstate the tolerance.
                let disagreement = 1.0 - angle.to_radians().cos();
                assert!(
                    disagreement <= 1e-8,
                    "case {case}: top-{k} subspace disagreement {disagreement:.3e}"
                );
            }
        }

        // Projector built from the right vectors: symmetric and idempotent.
        let basis_rows: Vec<Vec<f64>> = (0..k_max)
            .map(|i| svd.right_vectors.row(i).to_vec())
            .collect();
        let basis = Tensor2D::from_rows(&basis_rows).unwrap();
        let p = gloss_core::linalg::projector_from_basis(&basis).unwrap();
        let pp = p.matmul(&p).unwrap();
        for i in 0..cdim {
            for j in 0..cdim {
                assert!((p.get(i, j) - p.get(j, i)).abs() <= 1e-8);
                assert!((pp.get(i, j) - p.get(i, j)).abs() <= 1e-8);
            }
        }
    }
    c.pass();
}

// ── Criterion 2 ─────────────────────────────────────────────────────────

#[test]
fn criterion_02_ffn_equivalence() {
    let c = Criterion::start(2, "both FFN variants equal the explicit sum within 1e-12", 1);
    let mut rng = gloss_core::rng::stream(2025, "acceptance-ffn");
    for _ in 0..100 {
        let d = rng.gen_range(2..=6usize);
        let d_m = rng.gen_range(1..=8usize);
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let tensor = |rng: &mut rand_chacha::ChaCha8Rng, r: usize, cc: usize| {
            Tensor2D::new(
                r,
                cc,
                (0..r * cc).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>(),
            )
            .unwrap()
        };

        // Two-layer variant.
        let key = tensor(&mut rng, d_m, d);
        let value = tensor(&mut rng, d_m, d);
        let w = LayerWeights::zero_attention(
            d,
            FfnWeights::TwoLayer {
                key: key.clone(),
                value: value.clone(),
            },
        );
        let (coeffs, out) = ffn_two_layer(&x, &w).unwrap();
        let mut explicit = vec![0.0; d];
        for (m, row) in coeffs.iter().zip(value.iter_rows()) {
            for (e, v) in explicit.iter_mut().zip(row) {
                *e += m * v;
            }
        }
        for (a, b) in out.iter().zip(&explicit) {
            assert!((a - b).abs() <= 1e-12, "two-layer mismatch: {a} vs {b}");
        }

        // Gated variant.
        let gate = tensor(&mut rng, d_m, d);
        let up = tensor(&mut rng, d_m, d);
        let down = tensor(&mut rng, d, d_m);
        let w = LayerWeights::zero_attention(
            d,
            FfnWeights::Gated {
                gate,
                up,
                down: down.clone(),
            },
        );
        let (coeffs, out) = ffn_gated(&x, &w).unwrap();
        let mut explicit = vec![0.0; d];
        for (i, m) in coeffs.iter().enumerate() {
            for (j, e) in explicit.iter_mut().enumerate() {
                *e += m * down.get(j, i);
            }
        }
        for (a, b) in out.iter().zip(&explicit) {
            assert!((a - b).abs() <= 1e-12, "gated mismatch: {a} vs {b}");
        }
    }
    c.pass();
}

// ── Criteria 3 & 4 ──────────────────────────────────────────────────────

#[test]
fn criterion_03_planted_end_to_end_recovery_and_edit() {
    let c = Criterion::start(
        3,
        "planted run: angle ≤ 5°, post-edit |cos| ≤ 0.01, complement ≤ 1e-8, idempotent",
        30,
    );
    let dir = tempfile::tempdir().unwrap();
    make_fixture(dir.path());
    let out = run_gloss_cmd(
        &[
            "gloss",
            "--config",
            dir.path().join("config.json").to_str().unwrap(),
        ],
        &[],
    );
    assert!(out.status.success(), "gloss run failed: {:?}", out);

    let planted = read_planted(dir.path());
    let out_dir = dir.path().join("out");
    let subspace = load_subspace(&out_dir).unwrap();
    let truth = Tensor2D::from_rows(&[planted.direction.clone()]).unwrap();
    let angle = principal_angle(&subspace.basis, &truth).unwrap();
    assert!(angle <= 5.0, "recovered angle {angle}° exceeds 5°");

    let before = load_bundle(&dir.path().join("toy_model.gtar")).unwrap();
    let after = load_bundle(&out_dir.join("edited_model.gtar")).unwrap();

    // Post-edit alignment with the true direction (near-zero vectors count
    // as aligned-zero).
    let mut max_cos: f64 = 0.0;
    for layer in &after.layers {
        for i in 0..layer.n_value_vectors() {
            let v = layer.value_vector(i);
            if norm(&v) > 1e-9 {
                max_cos = max_cos.max(cosine(&v, &planted.direction).unwrap().abs());
            }
        }
    }
    assert!(max_cos <= 0.01, "post-edit alignment {max_cos}");

    // Components orthogonal to the true direction unchanged within 1e-8.
    for (lb, la) in before.layers.iter().zip(&after.layers) {
        for i in 0..lb.n_value_vectors() {
            let vb = lb.value_vector(i);
            let va = la.value_vector(i);
            let delta: Vec<f64> = vb.iter().zip(&va).map(|(a, b)| a - b).collect();
            let along = dot(&delta, &planted.direction);
            let ortho: Vec<f64> = delta
                .iter()
                .zip(&planted.direction)
                .map(|(x, d)| x - along * d)
                .collect();
            assert!(
                norm(&ortho) <= 1e-8,
                "orthogonal component moved by {}",
                norm(&ortho)
            );
        }
    }

    // Editing the edited model again changes nothing beyond 1e-9.
    let (twice, _) = edit_weights(&after, &subspace, 0, 3).unwrap();
    for (la, lt) in after.layers.iter().zip(&twice.layers) {
        for i in 0..la.n_value_vectors() {
            for (a, b) in la.value_vector(i).iter().zip(lt.value_vector(i)) {
                assert!((a - b).abs() <= 1e-9, "edit not idempotent");
            }
        }
    }
    c.pass();
}

#[test]
fn criterion_04_low_dimensionality() {
    let c = Criterion::start(4, "recovered subspace rank ≤ 2 on the planted fixture", 30);
    let dir = tempfile::tempdir().unwrap();
    make_fixture(dir.path());
    let out = run_gloss_cmd(
        &[
            "gloss",
            "--config",
            dir.path().join("config.json").to_str().unwrap(),
        ],
        &[],
    );
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/report.json")).unwrap())
            .unwrap();
    let r = report["subspace_rank"].as_u64().unwrap();
    assert!(r <= 2, "subspace rank {r} exceeds 2 (r/d = {}/64)", r);
    c.pass();
}

// ── Criterion 5 ─────────────────────────────────────────────────────────

#[test]
fn criterion_05_reconstruction_after_top5_removal() {
    let c = Criterion::start(
        5,
        "top-5 removal leaves cosine ≥ 0.9 reconstruction and ≤ 0.1 proxy drop",
        10,
    );
    let f = build_toy_fixture(42).unwrap();
    let lex = Lexicon::new(
        f.lexicon_lines
            .iter()
            .filter(|l| !l.starts_with('#'))
            .cloned(),
        None,
    )
    .unwrap();
    let layer = f.planted.planted_layers[0];
    let final_layer = f.bundle.config.n_layers - 1;

    let examples: Vec<(Vec<f64>, u8)> = f
        .probe_data
        .iter()
        .map(|e| {
            (
                last_token_hidden(&f.bundle, &e.text, final_layer).unwrap(),
                e.label,
            )
        })
        .collect();
    let probe = train_probe(&examples, 1e-4, 200, 0.5).unwrap();
    let order = rank_vectors_by_probe(&f.bundle, &probe, layer).unwrap();
    let top5: Vec<usize> = order.iter().take(5).copied().collect();

    // Reconstruction from the remaining vectors.
    let remaining: Vec<Vec<f64>> = (0..f.bundle.config.d_m)
        .map(|i| {
            if top5.contains(&i) {
                vec![0.0; f.bundle.config.d]
            } else {
                f.bundle.layers[layer].value_vector(i)
            }
        })
        .collect();
    let remaining = Tensor2D::from_rows(&remaining).unwrap();
    let (_, cos) = reconstruct_direction(&remaining, &f.planted.direction).unwrap();
    assert!(cos >= 0.9, "reconstruction cosine {cos} below 0.9");

    // Full suppression of the same vectors barely moves the proxy.
    let spec = SteeringSpec {
        mode: SteerMode::Suppress,
        layers: vec![layer],
        selector: Selector::Indices(top5),
        factor: 10.0,
        lambda: 0.0,
        reference: None,
    };
    let resolved = spec.resolve(&f.bundle).unwrap();
    let mut base = 0.0;
    let mut steered = 0.0;
    for p in &f.prompts_toxic {
        let tokens = f.bundle.tokenize(&p.prompt);
        let strings = |ids: &[u32]| -> Vec<String> {
            ids.iter()
                .map(|&t| f.bundle.token_string(t).to_string())
                .collect()
        };
        let b = generate_greedy(&f.bundle, &tokens, 10, None).unwrap();
        let s = generate_greedy(&f.bundle, &tokens, 10, Some(&resolved)).unwrap();
        base += toxicity_proxy(&strings(&b), &lex, 10).unwrap();
        steered += toxicity_proxy(&strings(&s), &lex, 10).unwrap();
    }
    let n = f.prompts_toxic.len() as f64;
    let drop = base / n - steered / n;
    assert!(drop <= 0.1, "suppression dropped the proxy by {drop}");
    c.pass();
}

// ── Criterion 6 ─────────────────────────────────────────────────────────

#[test]
fn criterion_06_cross_layer_transfer() {
    let c = Criterion::start(
        6,
        "shifting layer-0/final mean activations along d* surfaces ≥ 3 planted tokens",
        5,
    );
    let f = build_toy_fixture(42).unwrap();
    let bad: std::collections::BTreeSet<u32> =
        f.planted.bad_token_ids.iter().copied().collect();

    for layer in [0, f.bundle.config.n_layers - 1] {
        let mut acc = vec![0.0; f.bundle.config.d];
        let mut count = 0usize;
        for p in &f.prompts_clean {
            let tokens = f.bundle.tokenize(&p.prompt);
            let (_, trace) = forward(&f.bundle, &tokens, &[layer], None).unwrap();
            let h = &trace.layer(layer).unwrap().hidden_out;
            for i in 0..h.rows() {
                for (a, v) in acc.iter_mut().zip(h.row(i)) {
                    *a += v;
                }
                count += 1;
            }
        }
        for a in &mut acc {
            *a /= count as f64;
        }

        let unshifted = gloss_core::lens::project_to_vocab(&acc, &f.bundle, 10).unwrap();
        assert_eq!(
            unshifted.ids().filter(|t| bad.contains(t)).count(),
            0,
            "layer {layer}: unshifted mean already surfaces planted tokens"
        );
        let shifted = cross_layer_shift(&acc, &f.planted.direction, 100.0).unwrap();
        let ranking = gloss_core::lens::project_to_vocab(&shifted, &f.bundle, 10).unwrap();
        let hits = ranking.ids().filter(|t| bad.contains(t)).count();
        assert!(hits >= 3, "layer {layer}: only {hits} planted tokens in top-10");
    }
    c.pass();
}

// ── Criterion 7 ─────────────────────────────────────────────────────────

#[test]
fn criterion_07_factor_recovery_sweep() {
    let c = Criterion::start(
        7,
        "recovery sweep: ≤ 5° at α=5, ≥ 45° at α=0, monotone on average",
        20,
    );
    let alphas = [0.0, 0.5, 1.0, 2.0, 5.0];
    let template = FactorSpec::seeded(64, 2, 4, 256, 0.0, 0.1, 0.1, 1000).unwrap();
    let rows = recovery_experiment(&template, 2, &alphas, 10).unwrap();

    let mut by_alpha: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in &rows {
        let e = by_alpha.entry(format!("{}", r.alpha_tox)).or_insert((0.0, 0));
        e.0 += r.principal_angle_deg;
        e.1 += 1;
    }
    let means: Vec<f64> = alphas
        .iter()
        .map(|a| {
            let (sum, n) = by_alpha[&format!("{a}")];
            sum / n as f64
        })
        .collect();
    assert!(means[0] >= 45.0, "α=0 mean angle {} below 45°", means[0]);
    assert!(
        means[4] <= 5.0,
        "α=5 mean angle {} above 5°",
        means[4]
    );
    for w in means.windows(2) {
        assert!(
            w[1] <= w[0] + 1e-9,
            "mean recovery angle not monotone: {means:?}"
        );
    }
    c.pass();
}

// ── Criterion 8 ─────────────────────────────────────────────────────────

#[test]
fn criterion_08_metrics_fixtures() {
    let c = Criterion::start(
        8,
        "uniform PPL = |V|, fluency fixture 1.8911, consistency 1.0/0.0",
        5,
    );
    // Uniform model: zero embeddings give constant logits.
    let vocab = 8;
    let d = 4;
    let bundle = ModelBundle {
        config: ModelConfig {
            d,
            d_m: 2,
            n_layers: 1,
            n_heads: 1,
            vocab_size: vocab,
            ffn_kind: FfnKind::TwoLayer,
            max_seq: 32,
        },
        embedding: Tensor2D::zeros(vocab, d),
        pos_embedding: Tensor2D::zeros(32, d),
        layers: vec![LayerWeights::zero_attention(
            d,
            FfnWeights::TwoLayer {
                key: Tensor2D::zeros(2, d),
                value: Tensor2D::zeros(2, d),
            },
        )],
        vocab: (0..vocab).map(|i| format!("t{i}")).collect(),
    };
    for len in [2usize, 5, 12] {
        let tokens: Vec<u32> = (0..len).map(|i| (i % vocab) as u32).collect();
        let ppl = perplexity(&bundle, &tokens).unwrap();
        assert!(
            (ppl - vocab as f64).abs() <= 1e-9,
            "uniform PPL {ppl} != {vocab} at length {len}"
        );
    }

    // Fluency hand fixture: a b a b a in entropy mode.
    let fluency = fluency_entropy(&[0, 1, 0, 1, 0], FluencyMode::Entropy).unwrap();
    assert!(
        (fluency - 1.8911).abs() <= 1e-3,
        "fluency fixture gave {fluency}"
    );
    // All-identical tokens: zero in both modes.
    assert_eq!(fluency_entropy(&[7; 6], FluencyMode::Entropy).unwrap(), 0.0);
    assert_eq!(fluency_entropy(&[7; 6], FluencyMode::AsWritten).unwrap(), 0.0);

    // Consistency fixtures.
    let corpus = vec!["a b".to_string(), "a c".to_string()];
    assert!((consistency_tfidf("a b", "a b", &corpus).unwrap() - 1.0).abs() <= 1e-12);
    assert_eq!(consistency_tfidf("a b", "x y", &corpus).unwrap(), 0.0);

    // Toxicity proxy counting.
    let lex = Lexicon::new(["frak".to_string()], None).unwrap();
    let toks: Vec<String> = ["frak", "x", "frak", "y", "frak", "z", "frak", "w", "frak", "v"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    assert_eq!(toxicity_proxy(&toks, &lex, 10).unwrap(), 0.5);
    c.pass();
}

// ── Criterion 9 ─────────────────────────────────────────────────────────

fn dir_snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut map = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        let name = entry.file_name().to_string_lossy().into_owned();
        if name == "timings.json" {
            continue; // wall-clock sidecar, deliberately non-deterministic
        }
        map.insert(name, std::fs::read(entry.path()).unwrap());
    }
    map
}

#[test]
fn criterion_09_determinism_across_runs_and_threads() {
    let c = Criterion::start(
        9,
        "gloss and steer artifacts byte-identical across reruns and GLOSS_THREADS ∈ {1,4}",
        60,
    );
    let dir = tempfile::tempdir().unwrap();
    make_fixture(dir.path());
    let config = dir.path().join("config.json");
    let config = config.to_str().unwrap();

    let run_into = |sub: &str, out: &str, threads: &str| -> BTreeMap<String, Vec<u8>> {
        let out_dir = dir.path().join(out);
        let res = run_gloss_cmd(
            &[
                sub,
                "--config",
                config,
                "--output-dir",
                out_dir.to_str().unwrap(),
            ],
            &[("GLOSS_THREADS", threads)],
        );
        assert!(res.status.success(), "{sub} run failed: {res:?}");
        dir_snapshot(&out_dir)
    };

    for sub in ["gloss", "steer"] {
        let a = run_into(sub, &format!("{sub}_a"), "1");
        let b = run_into(sub, &format!("{sub}_b"), "1");
        let c4 = run_into(sub, &format!("{sub}_c"), "4");
        assert_eq!(
            a.keys().collect::<Vec<_>>(),
            b.keys().collect::<Vec<_>>(),
            "{sub}: artifact sets differ between runs"
        );
        for (name, bytes) in &a {
            assert_eq!(
                bytes,
                b.get(name).unwrap(),
                "{sub}: {name} differs between identical runs"
            );
            assert_eq!(
                bytes,
                c4.get(name).unwrap(),
                "{sub}: {name} differs across thread counts"
            );
        }
    }
    c.pass();
}

// ── Criterion 10 ────────────────────────────────────────────────────────

#[test]
fn criterion_10_directional_detox_with_bounded_ppl_cost() {
    let c = Criterion::start(
        10,
        "post-edit toxicity proxy drops ≥ 0.4 while PPL grows ≤ 20%",
        30,
    );
    let dir = tempfile::tempdir().unwrap();
    make_fixture(dir.path());
    let config = dir.path().join("config.json");
    let res = run_gloss_cmd(&["gloss", "--config", config.to_str().unwrap()], &[]);
    assert!(res.status.success());

    let eval = |model_override: Option<PathBuf>, out: &str| -> serde_json::Value {
        // Point a copy of the config at the other archive.
        let mut cfg: serde_json::Value =
            serde_json::from_slice(&std::fs::read(&config).unwrap()).unwrap();
        if let Some(m) = model_override {
            cfg["model"] = serde_json::Value::String(m.to_string_lossy().into_owned());
        }
        let cfg_path = dir.path().join(format!("config_{out}.json"));
        std::fs::write(&cfg_path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
        let out_dir = dir.path().join(out);
        let res = run_gloss_cmd(
            &[
                "eval",
                "--config",
                cfg_path.to_str().unwrap(),
                "--output-dir",
                out_dir.to_str().unwrap(),
            ],
            &[],
        );
        assert!(res.status.success(), "eval failed: {res:?}");
        serde_json::from_slice(&std::fs::read(out_dir.join("eval_report.json")).unwrap()).unwrap()
    };

    let before = eval(None, "eval_before");
    let after = eval(Some(dir.path().join("out/edited_model.gtar")), "eval_after");

    let proxy_before = before["report"]["toxicity_proxy"].as_f64().unwrap();
    let proxy_after = after["report"]["toxicity_proxy"].as_f64().unwrap();
    let ppl_before = before["report"]["ppl"].as_f64().unwrap();
    let ppl_after = after["report"]["ppl"].as_f64().unwrap();

    assert!(
        proxy_before - proxy_after >= 0.4,
        "proxy only moved {proxy_before} -> {proxy_after}"
    );
    assert!(
        ppl_after <= 1.2 * ppl_before,
        "ppl cost too high: {ppl_before} -> {ppl_after}"
    );
    c.pass();
}
