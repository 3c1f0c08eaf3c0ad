//! Subcommand implementations. Each command loads the shared config,
//! validates what it needs (naming the offending field), runs core
//! operations, and persists artifacts into the output directory. Wall-clock
//! stage timings go to a separate `timings.json` sidecar so every other
//! artifact is byte-identical across reruns.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use gloss_core::data::{load_probe_examples, load_prompts, PromptExample};
use gloss_core::lens::Lexicon;
use gloss_core::metrics::{
    consistency_tfidf, fluency_entropy, perplexity, toxicity_proxy, EvalReport, FluencyMode,
};
use gloss_core::model::{generate_greedy, load_bundle, ModelBundle};
use gloss_core::pipeline::{stage_edit, stage_extract, stage_rank, stage_subspace, GlossParams};
use gloss_core::steer::{
    last_token_hidden, train_probe, Selector, SteerMode, SteeringSpec,
};
use gloss_core::synthfactor::{recovery_experiment, FactorSpec};
use gloss_core::toy;

use crate::config::{require, CliError, CliResult, LoadedConfig, PipelineConfig, SteerConfig, SynthConfig};

const LAMBDA_SWEEP: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
const PROBE_L2: f64 = 1e-4;
const PROBE_STEPS: usize = 200;
const PROBE_LR: f64 = 0.5;

// ── Shared helpers ──────────────────────────────────────────────────────

struct Timings {
    stages: Vec<(String, f64)>,
}

impl Timings {
    fn new() -> Self {
        Timings { stages: Vec::new() }
    }

    fn measure<T>(&mut self, name: &str, f: impl FnOnce() -> CliResult<T>) -> CliResult<T> {
        let start = Instant::now();
        let out = f()?;
        self.stages
            .push((name.to_string(), start.elapsed().as_secs_f64()));
        eprintln!("[gloss] stage {name}: {:.3}s", self.stages.last().unwrap().1);
        Ok(out)
    }

    /// Wall-clock sidecar; the one artifact that is allowed to differ
    /// between reruns.
    fn write(&self, dir: &Path) -> CliResult<()> {
        #[derive(Serialize)]
        struct Entry<'a> {
            name: &'a str,
            seconds: f64,
        }
        let entries: Vec<Entry> = self
            .stages
            .iter()
            .map(|(n, s)| Entry { name: n, seconds: *s })
            .collect();
        write_json(dir, "timings.json", &entries)
    }
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Other(e.into()))?;
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Other(e.into()))?;
    bytes.push(b'\n');
    std::fs::write(dir.join(name), bytes).map_err(|e| CliError::Other(e.into()))?;
    Ok(())
}

/// Validate everything the staged pipeline needs and build its parameters.
fn gloss_params(loaded: &LoadedConfig) -> CliResult<GlossParams> {
    let cfg = &loaded.config;
    let model_path = loaded.require_file(&cfg.model, "model")?;
    let pairs_path = loaded.require_file(&cfg.pairs, "pairs")?;
    let lexicon_path = loaded.require_file(&cfg.lexicon, "lexicon")?;
    let extract_layers = cfg
        .extract_layers
        .clone()
        .filter(|l| !l.is_empty())
        .ok_or_else(|| CliError::Config("missing or empty field `extract_layers`".into()))?;
    let k = require(cfg.k, "k")?;
    let alpha = require(cfg.alpha, "alpha")?;
    let eta = require(cfg.eta, "eta")?;
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(CliError::Config(format!(
            "field `eta` must lie in (0,1], got {eta}"
        )));
    }
    // Lens width defaults to 100 when the config leaves it unset.
    let m = cfg.m.unwrap_or(100);
    let [edit_start, edit_end] = cfg
        .edit_layers
        .ok_or_else(|| CliError::Config("missing field `edit_layers`".into()))?;
    if edit_start > edit_end {
        return Err(CliError::Config(format!(
            "field `edit_layers`: start {edit_start} exceeds end {edit_end}"
        )));
    }
    let output_dir = loaded.output_dir()?;

    // Cross-field checks against the referenced files.
    let bundle = load_bundle(&model_path)
        .map_err(|e| CliError::Config(format!("field `model`: {e}")))?;
    if let Some(&bad) = extract_layers
        .iter()
        .find(|&&l| l >= bundle.config.n_layers)
    {
        return Err(CliError::Config(format!(
            "field `extract_layers`: layer {bad} out of range ({} layers)",
            bundle.config.n_layers
        )));
    }
    if edit_end >= bundle.config.n_layers {
        return Err(CliError::Config(format!(
            "field `edit_layers`: end {edit_end} out of range ({} layers)",
            bundle.config.n_layers
        )));
    }
    if m == 0 || m > bundle.config.vocab_size {
        return Err(CliError::Config(format!(
            "field `m`: {m} out of range for vocab of {}",
            bundle.config.vocab_size
        )));
    }
    let n_available = gloss_core::data::load_pairs(&pairs_path)
        .map_err(|e| CliError::Config(format!("field `pairs`: {e}")))?
        .len();
    let n_used = cfg.n_pairs.unwrap_or(n_available).min(n_available);
    if k == 0 || k > n_used {
        return Err(CliError::Config(format!(
            "field `k`: {k} out of range for {n_used} pairs"
        )));
    }

    Ok(GlossParams {
        model_path,
        pairs_path,
        lexicon_path,
        extract_layers,
        k,
        alpha,
        eta,
        m,
        edit_start,
        edit_end,
        n_pairs: cfg.n_pairs,
        output_dir,
    })
}

// ── Pipeline commands ───────────────────────────────────────────────────

pub fn cmd_extract(loaded: &LoadedConfig) -> CliResult<()> {
    let params = gloss_params(loaded)?;
    let mut timings = Timings::new();
    timings.measure("extract", || Ok(stage_extract(&params)?))?;
    timings.write(&params.output_dir)
}

pub fn cmd_rank(loaded: &LoadedConfig) -> CliResult<()> {
    let params = gloss_params(loaded)?;
    let mut timings = Timings::new();
    timings.measure("rank", || Ok(stage_rank(&params)?))?;
    timings.write(&params.output_dir)
}

pub fn cmd_subspace(loaded: &LoadedConfig) -> CliResult<()> {
    let params = gloss_params(loaded)?;
    let mut timings = Timings::new();
    timings.measure("subspace", || Ok(stage_subspace(&params)?))?;
    timings.write(&params.output_dir)
}

pub fn cmd_edit(loaded: &LoadedConfig) -> CliResult<()> {
    let params = gloss_params(loaded)?;
    let mut timings = Timings::new();
    let report = timings.measure("edit", || Ok(stage_edit(&params)?))?;
    timings.write(&params.output_dir)?;
    eprintln!(
        "[gloss] edited layers {}..={}, subspace rank {}, max residual {:.3e}",
        report.edit_start, report.edit_end, report.subspace_rank, report.max_residual
    );
    Ok(())
}

pub fn cmd_gloss(loaded: &LoadedConfig) -> CliResult<()> {
    let params = gloss_params(loaded)?;
    let mut timings = Timings::new();
    timings.measure("extract", || Ok(stage_extract(&params)?))?;
    timings.measure("rank", || Ok(stage_rank(&params)?))?;
    timings.measure("subspace", || Ok(stage_subspace(&params)?))?;
    let report = timings.measure("edit", || Ok(stage_edit(&params)?))?;
    timings.write(&params.output_dir)?;
    eprintln!(
        "[gloss] done: rank-{} subspace, tau={:.4}, residual {:.3e}, fallback={}",
        report.subspace_rank, report.tau, report.max_residual, report.fallback
    );
    Ok(())
}

// ── Steering ────────────────────────────────────────────────────────────

#[derive(Serialize)]
struct SteerPromptRecord {
    prompt: String,
    baseline_tokens: Vec<String>,
    steered_tokens: Vec<String>,
    baseline_proxy: f64,
    steered_proxy: f64,
}

#[derive(Serialize)]
struct SteerTranscript<'a> {
    mode: &'a str,
    layers: &'a [usize],
    selector: String,
    factor: f64,
    lambda: f64,
    gen_tokens: usize,
    baseline_proxy_mean: f64,
    steered_proxy_mean: f64,
    prompts: Vec<SteerPromptRecord>,
}

fn parse_mode(raw: &str) -> CliResult<SteerMode> {
    match raw {
        "enhance" => Ok(SteerMode::Enhance),
        "reverse_toward" => Ok(SteerMode::ReverseToward),
        "reverse_away" => Ok(SteerMode::ReverseAway),
        "suppress" => Ok(SteerMode::Suppress),
        "none" => Ok(SteerMode::None),
        other => Err(CliError::Config(format!(
            "field `steer.mode`: unknown mode `{other}`"
        ))),
    }
}

fn generate_strings(
    bundle: &ModelBundle,
    prompt: &str,
    n: usize,
    hook: Option<&dyn gloss_core::model::CoeffIntervention>,
) -> CliResult<Vec<String>> {
    let tokens = bundle.tokenize(prompt);
    if tokens.is_empty() {
        return Err(CliError::Core(gloss_core::Error::InvalidArgument(format!(
            "prompt tokenizes empty: {prompt:?}"
        ))));
    }
    let ids = generate_greedy(bundle, &tokens, n, hook)?;
    Ok(ids
        .iter()
        .map(|&t| bundle.token_string(t).to_string())
        .collect())
}

pub fn cmd_steer(loaded: &LoadedConfig) -> CliResult<()> {
    let cfg = &loaded.config;
    let model_path = loaded.require_file(&cfg.model, "model")?;
    let lexicon_path = loaded.require_file(&cfg.lexicon, "lexicon")?;
    let prompts_path = loaded.require_file(&cfg.prompts, "prompts")?;
    let steer_cfg: &SteerConfig = cfg
        .steer
        .as_ref()
        .ok_or_else(|| CliError::Config("missing field `steer`".into()))?;
    let output_dir = loaded.output_dir()?;
    let gen_tokens = cfg.gen_tokens.unwrap_or(10);

    let mut timings = Timings::new();
    let bundle = load_bundle(&model_path)?;
    let lex = Lexicon::from_path(&lexicon_path)?;
    let prompts = load_prompts(&prompts_path)?;

    let mode = parse_mode(&steer_cfg.mode)?;
    let selector = match (&steer_cfg.indices, steer_cfg.top_k, steer_cfg.global_top_k) {
        (Some(idx), None, None) => Selector::Indices(idx.clone()),
        (None, Some(k), None) => Selector::TopK(k),
        (None, None, Some(k)) => Selector::GlobalTopK(k),
        (None, None, None) => {
            return Err(CliError::Config(
                "field `steer.top_k`: a selector (top_k, global_top_k, or indices) is required"
                    .into(),
            ))
        }
        _ => {
            return Err(CliError::Config(
                "field `steer.indices`: give exactly one of indices, top_k, global_top_k".into(),
            ))
        }
    };
    let factor = steer_cfg.factor.unwrap_or(10.0);
    let lambda = steer_cfg.lambda.unwrap_or(0.0);

    // Reverse modes and top-k selection rank against the probe direction.
    let needs_reference = matches!(mode, SteerMode::ReverseToward | SteerMode::ReverseAway)
        || matches!(selector, Selector::TopK(_) | Selector::GlobalTopK(_));
    let reference = if needs_reference {
        let probe_path = loaded.require_file(&cfg.probe_data, "probe_data")?;
        let probe = timings.measure("train_probe", || {
            let examples = load_probe_examples(&probe_path)?;
            let layer = steer_cfg
                .probe_layer
                .unwrap_or(bundle.config.n_layers - 1);
            let hidden: Vec<(Vec<f64>, u8)> = examples
                .iter()
                .map(|e| Ok((last_token_hidden(&bundle, &e.text, layer)?, e.label)))
                .collect::<Result<Vec<_>, gloss_core::Error>>()?;
            Ok(train_probe(&hidden, PROBE_L2, PROBE_STEPS, PROBE_LR)?)
        })?;
        eprintln!("[gloss] probe accuracy {:.3}", probe.accuracy);
        Some(probe.weight)
    } else {
        None
    };

    let spec = SteeringSpec {
        mode,
        layers: steer_cfg.layers.clone(),
        selector: selector.clone(),
        factor,
        lambda,
        reference,
    };
    let resolved = spec.resolve(&bundle)?;

    let records = timings.measure("generate", || {
        prompts
            .iter()
            .map(|p: &PromptExample| {
                let baseline = generate_strings(&bundle, &p.prompt, gen_tokens, None)?;
                let steered = generate_strings(&bundle, &p.prompt, gen_tokens, Some(&resolved))?;
                Ok(SteerPromptRecord {
                    prompt: p.prompt.clone(),
                    baseline_proxy: toxicity_proxy(&baseline, &lex, gen_tokens)?,
                    steered_proxy: toxicity_proxy(&steered, &lex, gen_tokens)?,
                    baseline_tokens: baseline,
                    steered_tokens: steered,
                })
            })
            .collect::<CliResult<Vec<_>>>()
    })?;

    let n = records.len() as f64;
    let baseline_mean = records.iter().map(|r| r.baseline_proxy).sum::<f64>() / n;
    let steered_mean = records.iter().map(|r| r.steered_proxy).sum::<f64>() / n;
    let transcript = SteerTranscript {
        mode: &steer_cfg.mode,
        layers: &steer_cfg.layers,
        selector: match &selector {
            Selector::Indices(idx) => format!("indices[{}]", idx.len()),
            Selector::TopK(k) => format!("top_k={k}"),
            Selector::GlobalTopK(k) => format!("global_top_k={k}"),
        },
        factor,
        lambda,
        gen_tokens,
        baseline_proxy_mean: baseline_mean,
        steered_proxy_mean: steered_mean,
        prompts: records,
    };
    write_json(&output_dir, "steer_transcript.json", &transcript)?;

    // Suppression sweep over the λ grid.
    if mode == SteerMode::Suppress {
        let sweep = timings.measure("lambda_sweep", || {
            let mut rows = String::from("lambda,mean_proxy\n");
            for &l in &LAMBDA_SWEEP {
                let swept = SteeringSpec {
                    lambda: l,
                    ..spec.clone()
                }
                .resolve(&bundle)?;
                let mut total = 0.0;
                for p in &prompts {
                    let tokens = generate_strings(&bundle, &p.prompt, gen_tokens, Some(&swept))?;
                    total += toxicity_proxy(&tokens, &lex, gen_tokens)?;
                }
                rows.push_str(&format!("{},{}\n", l, total / n));
            }
            Ok(rows)
        })?;
        std::fs::create_dir_all(&output_dir).map_err(|e| CliError::Other(e.into()))?;
        std::fs::write(output_dir.join("steer_sweep.csv"), sweep)
            .map_err(|e| CliError::Other(e.into()))?;
    }

    timings.write(&output_dir)?;
    eprintln!(
        "[gloss] steer {}: proxy {:.3} -> {:.3}",
        steer_cfg.mode, baseline_mean, steered_mean
    );
    Ok(())
}

// ── Evaluation ──────────────────────────────────────────────────────────

#[derive(Serialize)]
struct EvalInputs<'a> {
    model: &'a str,
    prompts: &'a str,
    lexicon: &'a str,
    eval_text: &'a str,
    gen_tokens: usize,
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    inputs: EvalInputs<'a>,
    report: EvalReport,
}

pub fn cmd_eval(loaded: &LoadedConfig) -> CliResult<()> {
    let cfg = &loaded.config;
    let model_path = loaded.require_file(&cfg.model, "model")?;
    let lexicon_path = loaded.require_file(&cfg.lexicon, "lexicon")?;
    let prompts_path = loaded.require_file(&cfg.prompts, "prompts")?;
    let eval_text_path = loaded.require_file(&cfg.eval_text, "eval_text")?;
    let output_dir = loaded.output_dir()?;
    let gen_tokens = cfg.gen_tokens.unwrap_or(10);
    if gen_tokens < 3 {
        return Err(CliError::Config(
            "field `gen_tokens`: need at least 3 for the n-gram fluency metric".into(),
        ));
    }

    let mut timings = Timings::new();
    let bundle = load_bundle(&model_path)?;
    let lex = Lexicon::from_path(&lexicon_path)?;
    let prompts = load_prompts(&prompts_path)?;
    let eval_text =
        std::fs::read_to_string(&eval_text_path).map_err(|e| CliError::Other(e.into()))?;

    let report = timings.measure("evaluate", || {
        let mut proxy_total = 0.0;
        let mut fluency_written_total = 0.0;
        let mut fluency_entropy_total = 0.0;
        let mut consistency_total = 0.0;
        let mut consistency_count = 0usize;
        let corpus: Vec<String> = prompts
            .iter()
            .filter_map(|p| p.reference.clone())
            .collect();
        for p in &prompts {
            let tokens = bundle.tokenize(&p.prompt);
            if tokens.is_empty() {
                return Err(CliError::Core(gloss_core::Error::InvalidArgument(format!(
                    "prompt tokenizes empty: {:?}",
                    p.prompt
                ))));
            }
            let ids = generate_greedy(&bundle, &tokens, gen_tokens, None)?;
            let strings: Vec<String> = ids
                .iter()
                .map(|&t| bundle.token_string(t).to_string())
                .collect();
            proxy_total += toxicity_proxy(&strings, &lex, gen_tokens)?;
            fluency_written_total += fluency_entropy(&ids, FluencyMode::AsWritten)?;
            fluency_entropy_total += fluency_entropy(&ids, FluencyMode::Entropy)?;
            if let Some(reference) = &p.reference {
                consistency_total +=
                    consistency_tfidf(&strings.join(" "), reference, &corpus)?;
                consistency_count += 1;
            }
        }
        let n = prompts.len() as f64;
        let eval_tokens = bundle.tokenize(eval_text.trim());
        let ppl = perplexity(&bundle, &eval_tokens)?;
        Ok(EvalReport {
            toxicity_proxy: proxy_total / n,
            ppl,
            fluency_as_written: fluency_written_total / n,
            fluency_entropy: fluency_entropy_total / n,
            fluency_mode: "entropy".to_string(),
            consistency: (consistency_count > 0)
                .then(|| consistency_total / consistency_count as f64),
            prompt_count: prompts.len(),
            generated_tokens_per_prompt: gen_tokens,
            eval_token_count: eval_tokens.len(),
        })
    })?;

    let out = EvalOutput {
        inputs: EvalInputs {
            model: cfg.model.as_deref().unwrap_or(""),
            prompts: cfg.prompts.as_deref().unwrap_or(""),
            lexicon: cfg.lexicon.as_deref().unwrap_or(""),
            eval_text: cfg.eval_text.as_deref().unwrap_or(""),
            gen_tokens,
        },
        report,
    };
    write_json(&output_dir, "eval_report.json", &out)?;
    timings.write(&output_dir)?;
    eprintln!(
        "[gloss] eval: proxy {:.3}, ppl {:.3}",
        out.report.toxicity_proxy, out.report.ppl
    );
    Ok(())
}

// ── Factor-model recovery sweep ─────────────────────────────────────────

pub fn cmd_synth(loaded: &LoadedConfig) -> CliResult<()> {
    let cfg = &loaded.config;
    let synth: SynthConfig = cfg.synth.clone().unwrap_or_default();
    let output_dir = loaded.output_dir()?;
    let seed = cfg.seed.unwrap_or(0);
    let k_extract = synth.k_extract.unwrap_or(synth.toxic_rank);

    let mut timings = Timings::new();
    let rows = timings.measure("recovery_sweep", || {
        let template = FactorSpec::seeded(
            synth.dim,
            synth.toxic_rank,
            synth.context_rank,
            synth.samples,
            0.0,
            synth.sigma_u,
            synth.a_std,
            seed,
        )?;
        Ok(recovery_experiment(
            &template,
            k_extract,
            &synth.alphas,
            synth.seeds,
        )?)
    })?;

    let mut csv = String::from("alpha_tox,sigma_u,seed,principal_angle_deg\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            r.alpha_tox, r.sigma_u, r.seed, r.principal_angle_deg
        ));
    }
    std::fs::create_dir_all(&output_dir).map_err(|e| CliError::Other(e.into()))?;
    std::fs::write(output_dir.join("recovery.csv"), csv)
        .map_err(|e| CliError::Other(e.into()))?;
    timings.write(&output_dir)?;
    eprintln!("[gloss] synth: {} sweep points written", rows.len());
    Ok(())
}

// ── Fixture emission ────────────────────────────────────────────────────

pub fn cmd_make_toy(out: &Path, seed: u64) -> CliResult<()> {
    let fixture = toy::write_toy_fixture(out, seed)?;
    let config = PipelineConfig {
        model: Some(toy::MODEL_FILE.into()),
        pairs: Some(toy::PAIRS_FILE.into()),
        lexicon: Some(toy::LEXICON_FILE.into()),
        extract_layers: Some((0..toy::N_LAYERS).collect()),
        k: Some(3),
        alpha: Some(1.0),
        eta: Some(0.8),
        m: Some(10),
        edit_layers: Some([0, toy::N_LAYERS - 1]),
        output_dir: Some("out".into()),
        seed: Some(seed),
        threads: Some(1),
        n_pairs: None,
        prompts: Some(toy::PROMPTS_TOXIC_FILE.into()),
        eval_text: Some(toy::EVAL_TEXT_FILE.into()),
        probe_data: Some(toy::PROBE_FILE.into()),
        gen_tokens: Some(10),
        steer: Some(SteerConfig {
            mode: "suppress".into(),
            layers: vec![fixture.planted.planted_layers[0]],
            top_k: Some(5),
            global_top_k: None,
            indices: None,
            factor: Some(10.0),
            lambda: Some(0.0),
            probe_layer: None,
        }),
        synth: Some(SynthConfig::default()),
    };
    let mut bytes =
        serde_json::to_vec_pretty(&config).map_err(|e| CliError::Other(e.into()))?;
    bytes.push(b'\n');
    std::fs::write(out.join("config.json"), bytes).map_err(|e| CliError::Other(e.into()))?;
    eprintln!(
        "[gloss] fixture written to {} ({} pairs, planted layers {:?})",
        out.display(),
        fixture.pairs.len(),
        fixture.planted.planted_layers
    );
    Ok(())
}

/// Apply flag overrides, then the GLOSS_THREADS environment variable.
pub fn effective_threads(threads: Option<usize>) -> usize {
    if let Ok(env) = std::env::var("GLOSS_THREADS") {
        if let Ok(n) = env.parse::<usize>() {
            if n > 0 {
                return n;
            }
        }
    }
    threads.unwrap_or(1).max(1)
}

pub fn init_thread_pool(n: usize) {
    // Ignore a second initialization (tests drive commands in-process).
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
}
