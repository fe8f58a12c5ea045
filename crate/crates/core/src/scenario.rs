//! Shipped end-to-end experiments, runnable as single commands.
//!
//! Each scenario is encoded as a JSON spec (embedded defaults under
//! `data/scenarios/`), runs a full pipeline deterministically, writes its
//! artifacts and a report under an output directory, and returns the
//! report for programmatic assertions.

use crate::checkpoint;
use crate::corpus::{synthetic_corpus, Domain};
use crate::error::{Error, Result};
use crate::eval::{
    build_probes, correlation_report, heldout_nll, trr, CorrelationReport, LocalSuspect,
    MatchRule, SuspectModel,
};
use crate::forge::{
    backdoor_finetune_baseline, finetune, perturb, weight_cosine_distance, FinetuneConfig,
    PerturbScope, PerturbSpec,
};
use crate::gcg::par_map;
use crate::model::{forward_logits, ModelConfig, Parameters};
use crate::plugae::{
    assert_weights_unchanged, embedding_drift, optimize_adversarial_embeddings, plug,
    CopyrightToken, PlugOptConfig, WatermarkBundle,
};
use crate::query::QuerySet;
use crate::rng::Rng;
use crate::template::TemplateSet;
use crate::vocab::Vocab;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

const PAPER_ROBUSTNESS: &str = include_str!("../data/scenarios/paper-robustness.json");
const DISTANCE_SWEEP: &str = include_str!("../data/scenarios/distance-sweep.json");
const TOKEN_COUNT: &str = include_str!("../data/scenarios/token-count.json");

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScenarioSpec {
    PaperRobustness(RobustnessSpec),
    DistanceSweep(SweepSpec),
    TokenCount(TokenCountSpec),
}

impl ScenarioSpec {
    pub fn builtin(name: &str) -> Result<ScenarioSpec> {
        let json = match name {
            "paper-robustness" => PAPER_ROBUSTNESS,
            "distance-sweep" => DISTANCE_SWEEP,
            "token-count" => TOKEN_COUNT,
            other => return Err(Error::UnknownScenario(other.to_string())),
        };
        Ok(serde_json::from_str(json)?)
    }

    pub fn builtin_names() -> &'static [&'static str] {
        &["paper-robustness", "distance-sweep", "token-count"]
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ScenarioSpec> {
        let path = path.as_ref();
        let data = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(serde_json::from_str(&data)?)
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScenarioSpec::PaperRobustness(_) => "paper-robustness",
            ScenarioSpec::DistanceSweep(_) => "distance-sweep",
            ScenarioSpec::TokenCount(_) => "token-count",
        }
    }

    pub fn run(&self, out_dir: impl AsRef<Path>) -> Result<ScenarioReport> {
        match self {
            ScenarioSpec::PaperRobustness(s) => {
                Ok(ScenarioReport::PaperRobustness(run_paper_robustness(s, out_dir)?))
            }
            ScenarioSpec::DistanceSweep(s) => {
                Ok(ScenarioReport::DistanceSweep(run_distance_sweep(s, out_dir)?))
            }
            ScenarioSpec::TokenCount(s) => {
                Ok(ScenarioReport::TokenCount(run_token_count(s, out_dir)?))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScenarioReport {
    PaperRobustness(RobustnessReport),
    DistanceSweep(SweepReport),
    TokenCount(TokenCountReport),
}

/// How a scenario obtains its base model: load a checkpoint or pretrain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaseSpec {
    pub corpus_seed: u64,
    pub corpus_bytes: usize,
    pub train: crate::train::TrainConfig,
    pub checkpoint: Option<String>,
}

impl BaseSpec {
    fn acquire(&self, model: &ModelConfig, out_dir: &Path) -> Result<(Parameters, Vocab, PathBuf)> {
        if let Some(path) = &self.checkpoint {
            let (params, vocab) = checkpoint::load(path)?;
            return Ok((params, vocab, PathBuf::from(path)));
        }
        let corpus = synthetic_corpus(Domain::General, self.corpus_seed, self.corpus_bytes);
        let (params, _) = crate::train::pretrain_toy(&corpus, model, &self.train)?;
        let vocab = Vocab::base();
        let path = out_dir.join("base.ckpt");
        checkpoint::save(&params, &vocab, &path)?;
        Ok((params, vocab, path))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustnessSpec {
    pub model: ModelConfig,
    pub base: BaseSpec,
    pub control_seeds: Vec<u64>,
    pub control_steps: usize,
    pub control_corpus_bytes: usize,
    pub surfaces: Vec<String>,
    pub watermark: PlugOptConfig,
    pub backdoor: FinetuneConfig,
    pub finetune: FinetuneConfig,
    pub finetune_corpus_seed: u64,
    pub finetune_corpus_bytes: usize,
    pub heldout_corpus_seed: u64,
    pub heldout_corpus_bytes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrrRow {
    pub model_version: String,
    pub method: String,
    pub trr: f64,
    pub matched: usize,
    pub probes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct UtilitySummary {
    pub heldout_original: f64,
    pub heldout_watermarked: f64,
    pub heldout_bitexact: bool,
    pub logits_bitexact: bool,
    pub heldout_tuned: f64,
    /// NLL on (a slice of) the customization corpus: fine-tuning must have
    /// made its own training distribution cheaper.
    pub ft_corpus_original: f64,
    pub ft_corpus_tuned: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RobustnessReport {
    pub table: Vec<TrrRow>,
    pub controls: Vec<TrrRow>,
    pub copyright_drift_after_finetune: f64,
    pub weights_unchanged_after_plug: bool,
    pub backdoor_changed_weights: bool,
    pub utility: UtilitySummary,
    pub finetune_nll_first: f64,
    pub finetune_nll_last: f64,
    pub watermark_loss_per_target_token: f64,
    pub artifacts: BTreeMap<String, String>,
}

fn write_report(out_dir: &Path, report: &impl Serialize) -> Result<()> {
    let path = out_dir.join("report.json");
    std::fs::write(&path, serde_json::to_string_pretty(report)?)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

fn trr_row(
    version: &str,
    method: &str,
    suspect: &dyn SuspectModel,
    probes: &[crate::eval::Probe],
    rule: &MatchRule,
) -> Result<TrrRow> {
    let r = trr(suspect, probes, rule, true)?;
    Ok(TrrRow {
        model_version: version.to_string(),
        method: method.to_string(),
        trr: r.trr,
        matched: r.matched,
        probes: r.evaluated,
    })
}

pub fn run_paper_robustness(
    spec: &RobustnessSpec,
    out_dir: impl AsRef<Path>,
) -> Result<RobustnessReport> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let mut artifacts = BTreeMap::new();

    let (base, vocab, base_path) = spec.base.acquire(&spec.model, out_dir)?;
    artifacts.insert("base".into(), base_path.display().to_string());

    let queries = QuerySet::default_set();
    let templates = TemplateSet::default_set();
    let rule = MatchRule::default();

    // watermark: optimize, bundle, plug
    let (e_a, opt_trace) =
        optimize_adversarial_embeddings(&base, &vocab, &queries, &templates, &spec.watermark)?;
    let tokens: Vec<CopyrightToken> = spec
        .surfaces
        .iter()
        .map(|s| CopyrightToken::new(s.clone()))
        .collect();
    let bundle = WatermarkBundle::new(
        tokens.clone(),
        &e_a,
        queries.clone(),
        &templates,
        rule.clone(),
        &base,
        &vocab,
    )?;
    let bundle_path = out_dir.join("bundle.json");
    bundle.save(&bundle_path)?;
    artifacts.insert("bundle".into(), bundle_path.display().to_string());
    // plug from the bundle's (f32) vectors so the checkpoint rows equal the
    // bundle bytes exactly
    let (plugged, plugged_vocab) =
        plug(&base, &vocab, &tokens, &bundle.adversarial_embeddings(&base)?)?;
    let plugged_path = out_dir.join("watermarked.ckpt");
    checkpoint::save(&plugged, &plugged_vocab, &plugged_path)?;
    artifacts.insert("watermarked".into(), plugged_path.display().to_string());
    let weights_unchanged = assert_weights_unchanged(&base, &plugged).passed;

    // backdoor baseline with the same trigger text
    let trigger: String = spec.surfaces.concat();
    let backdoored =
        backdoor_finetune_baseline(&base, &vocab, &trigger, &queries, &templates, &spec.backdoor)?;
    let backdoor_path = out_dir.join("backdoor.ckpt");
    checkpoint::save(&backdoored, &vocab, &backdoor_path)?;
    artifacts.insert("backdoor".into(), backdoor_path.display().to_string());
    let backdoor_changed = !assert_weights_unchanged(&base, &backdoored).passed;

    // customization fine-tune of both proactive models
    let ft_corpus = synthetic_corpus(
        Domain::Customization,
        spec.finetune_corpus_seed,
        spec.finetune_corpus_bytes,
    );
    for s in &spec.surfaces {
        if ft_corpus.windows(s.len()).any(|w| w == s.as_bytes()) {
            return Err(Error::Invalid(format!(
                "fine-tune corpus contains copyright surface {s:?}"
            )));
        }
    }
    let plugged_tuned = finetune(&plugged, &plugged_vocab, &ft_corpus, &spec.finetune)?;
    let plugged_tuned_path = out_dir.join("watermarked-tuned.ckpt");
    checkpoint::save(&plugged_tuned.params, &plugged_vocab, &plugged_tuned_path)?;
    artifacts.insert(
        "watermarked-tuned".into(),
        plugged_tuned_path.display().to_string(),
    );
    let backdoor_tuned = finetune(&backdoored, &vocab, &ft_corpus, &spec.finetune)?;
    let backdoor_tuned_path = out_dir.join("backdoor-tuned.ckpt");
    checkpoint::save(&backdoor_tuned.params, &vocab, &backdoor_tuned_path)?;
    artifacts.insert(
        "backdoor-tuned".into(),
        backdoor_tuned_path.display().to_string(),
    );

    let drift = embedding_drift(
        &plugged,
        &plugged_vocab,
        &plugged_tuned.params,
        &plugged_vocab,
        &spec.surfaces[0],
    )?;

    // TRR table over the shared probe set
    let payload: String = spec.surfaces.concat();
    let probes = build_probes(&payload, &queries, &templates)?;
    let base_s = LocalSuspect::new(base.clone(), vocab.clone(), "base");
    let plugged_s = LocalSuspect::new(plugged.clone(), plugged_vocab.clone(), "watermarked");
    let backdoor_s = LocalSuspect::new(backdoored.clone(), vocab.clone(), "backdoor");
    let plugged_tuned_s = LocalSuspect::new(
        plugged_tuned.params.clone(),
        plugged_vocab.clone(),
        "watermarked-tuned",
    );
    let backdoor_tuned_s =
        LocalSuspect::new(backdoor_tuned.params.clone(), vocab.clone(), "backdoor-tuned");
    let table = vec![
        trr_row("original", "plugae", &base_s, &probes, &rule)?,
        trr_row("original", "backdoor", &base_s, &probes, &rule)?,
        trr_row("post-proactive", "plugae", &plugged_s, &probes, &rule)?,
        trr_row("post-proactive", "backdoor", &backdoor_s, &probes, &rule)?,
        trr_row("tuned", "plugae", &plugged_tuned_s, &probes, &rule)?,
        trr_row("tuned", "backdoor", &backdoor_tuned_s, &probes, &rule)?,
    ];

    // independently pretrained controls
    let control_results: Vec<Result<(u64, Parameters)>> =
        par_map(spec.control_seeds.len(), |i| {
            let seed = spec.control_seeds[i];
            let corpus = synthetic_corpus(Domain::General, seed, spec.control_corpus_bytes);
            let cfg = crate::train::TrainConfig {
                steps: spec.control_steps,
                seed,
                ..spec.base.train.clone()
            };
            let model_cfg = ModelConfig {
                seed,
                ..spec.model.clone()
            };
            let (params, _) = crate::train::pretrain_toy(&corpus, &model_cfg, &cfg)?;
            Ok((seed, params))
        });
    let mut controls = Vec::new();
    for item in control_results {
        let (seed, params) = item?;
        let path = out_dir.join(format!("control-{seed}.ckpt"));
        checkpoint::save(&params, &Vocab::base(), &path)?;
        artifacts.insert(format!("control-{seed}"), path.display().to_string());
        let suspect = LocalSuspect::new(params, Vocab::base(), format!("control-{seed}"));
        controls.push(trr_row(
            &format!("control-{seed}"),
            "plugae",
            &suspect,
            &probes,
            &rule,
        )?);
    }

    // utility: bit-exact preservation on clean held-out text
    let heldout = synthetic_corpus(Domain::General, spec.heldout_corpus_seed, spec.heldout_corpus_bytes);
    for s in &spec.surfaces {
        if heldout.windows(s.len()).any(|w| w == s.as_bytes()) {
            return Err(Error::Invalid(format!(
                "held-out corpus contains copyright surface {s:?}"
            )));
        }
    }
    let h_orig = heldout_nll(&base, &vocab, &heldout)?;
    let h_plug = heldout_nll(&plugged, &plugged_vocab, &heldout)?;
    let h_tuned = heldout_nll(&plugged_tuned.params, &plugged_vocab, &heldout)?;
    let ft_slice = &ft_corpus[..8192.min(ft_corpus.len())];
    let ft_orig = heldout_nll(&base, &vocab, ft_slice)?;
    let ft_tuned = heldout_nll(&plugged_tuned.params, &plugged_vocab, ft_slice)?;
    let clean_ids = vocab.encode(&heldout[..256.min(heldout.len())]);
    let logits_a = forward_logits(&base, &crate::model::embed(&clean_ids[..32.min(clean_ids.len())], &base)?)?;
    let logits_b = forward_logits(
        &plugged,
        &crate::model::embed(&clean_ids[..32.min(clean_ids.len())], &plugged)?,
    )?;
    let logits_bitexact = logits_a
        .iter()
        .flatten()
        .zip(logits_b.iter().flatten())
        .all(|(x, y)| x.to_bits() == y.to_bits());

    let target_tokens: usize =
        queries.items.iter().map(|q| q.y_star.len()).sum::<usize>() * templates.len();

    let report = RobustnessReport {
        table,
        controls,
        copyright_drift_after_finetune: drift,
        weights_unchanged_after_plug: weights_unchanged,
        backdoor_changed_weights: backdoor_changed,
        utility: UtilitySummary {
            heldout_original: h_orig,
            heldout_watermarked: h_plug,
            heldout_bitexact: h_orig.to_bits() == h_plug.to_bits(),
            logits_bitexact,
            heldout_tuned: h_tuned,
            ft_corpus_original: ft_orig,
            ft_corpus_tuned: ft_tuned,
        },
        finetune_nll_first: *plugged_tuned.loss_trace.first().unwrap_or(&f64::NAN),
        finetune_nll_last: *plugged_tuned.loss_trace.last().unwrap_or(&f64::NAN),
        watermark_loss_per_target_token: opt_trace.best_loss / target_tokens as f64,
        artifacts,
    };

    // the Table "CSN-tuned" analogue
    let mut csv = String::from("model_version,method,trr\n");
    for row in report.table.iter().chain(&report.controls) {
        csv.push_str(&format!(
            "{},{},{:.2}\n",
            row.model_version, row.method, row.trr
        ));
    }
    let csv_path = out_dir.join("robustness.csv");
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    write_report(out_dir, &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpec {
    pub model: ModelConfig,
    pub base: BaseSpec,
    pub surfaces: Vec<String>,
    pub watermark: PlugOptConfig,
    /// Reuse an existing bundle instead of re-optimizing.
    pub bundle: Option<String>,
    pub sigmas: Vec<f64>,
    pub seeds_per_sigma: usize,
    pub scope: PerturbScope,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub sigma: f64,
    pub seed: u64,
    pub distance: f64,
    pub trr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub correlation: CorrelationReport,
    pub artifacts: BTreeMap<String, String>,
}

pub fn run_distance_sweep(spec: &SweepSpec, out_dir: impl AsRef<Path>) -> Result<SweepReport> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let mut artifacts = BTreeMap::new();

    let (base, vocab, base_path) = spec.base.acquire(&spec.model, out_dir)?;
    artifacts.insert("base".into(), base_path.display().to_string());

    let queries = QuerySet::default_set();
    let templates = TemplateSet::default_set();
    let rule = MatchRule::default();

    let bundle = match &spec.bundle {
        Some(path) => WatermarkBundle::load(path)?,
        None => {
            let (e_a, _) = optimize_adversarial_embeddings(
                &base, &vocab, &queries, &templates, &spec.watermark,
            )?;
            let tokens: Vec<CopyrightToken> = spec
                .surfaces
                .iter()
                .map(|s| CopyrightToken::new(s.clone()))
                .collect();
            WatermarkBundle::new(
                tokens,
                &e_a,
                queries.clone(),
                &templates,
                rule.clone(),
                &base,
                &vocab,
            )?
        }
    };
    let (plugged, plugged_vocab) = plug(
        &base,
        &vocab,
        &bundle.tokens,
        &bundle.adversarial_embeddings(&base)?,
    )?;

    let payload: String = bundle.tokens.iter().map(|t| t.surface.as_str()).collect();
    let probes = build_probes(&payload, &bundle.queries, &templates)?;

    let jobs: Vec<(f64, u64)> = spec
        .sigmas
        .iter()
        .flat_map(|&sigma| (0..spec.seeds_per_sigma as u64).map(move |seed| (sigma, seed)))
        .collect();
    let rows: Vec<Result<SweepRow>> = par_map(jobs.len(), |i| {
        let (sigma, seed) = jobs[i];
        let suspect_params = perturb(
            &plugged,
            &PerturbSpec {
                sigma,
                scope: spec.scope,
                seed,
            },
        );
        let distance = weight_cosine_distance(&base, &suspect_params)?;
        let suspect = LocalSuspect::new(
            suspect_params,
            plugged_vocab.clone(),
            format!("perturbed-{sigma}-{seed}"),
        );
        let r = trr(&suspect, &probes, &rule, true)?;
        Ok(SweepRow {
            sigma,
            seed,
            distance,
            trr: r.trr,
        })
    });
    let rows: Vec<SweepRow> = rows.into_iter().collect::<Result<_>>()?;

    let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.distance, r.trr)).collect();
    let correlation = correlation_report(&pairs)?;

    let mut csv = String::from("sigma,seed,distance,trr\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{}\n", r.sigma, r.seed, r.distance, r.trr));
    }
    let csv_path = out_dir.join("sweep.csv");
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    let corr_path = out_dir.join("correlation.csv");
    std::fs::write(&corr_path, correlation.to_csv())
        .map_err(|e| Error::io(corr_path.display().to_string(), e))?;
    artifacts.insert("sweep_csv".into(), csv_path.display().to_string());

    let report = SweepReport {
        rows,
        correlation,
        artifacts,
    };
    write_report(out_dir, &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenCountSpec {
    pub model: ModelConfig,
    pub base: BaseSpec,
    pub ks: Vec<usize>,
    /// Optimizer settings shared across k (the k field is overridden).
    pub watermark: PlugOptConfig,
    pub surface_seed: u64,
    pub finetune: FinetuneConfig,
    pub finetune_seeds: Vec<u64>,
    pub finetune_corpus_seed: u64,
    pub finetune_corpus_bytes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TokenCountRow {
    pub k: usize,
    pub suspect: String,
    pub trr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TokenCountReport {
    pub rows: Vec<TokenCountRow>,
    /// Per fine-tune seed: trr(k=3) >= trr(k=1).
    pub k3_ge_k1_per_suspect: Vec<bool>,
    pub artifacts: BTreeMap<String, String>,
}

pub fn run_token_count(spec: &TokenCountSpec, out_dir: impl AsRef<Path>) -> Result<TokenCountReport> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let mut artifacts = BTreeMap::new();

    let (base, vocab, base_path) = spec.base.acquire(&spec.model, out_dir)?;
    artifacts.insert("base".into(), base_path.display().to_string());

    let queries = QuerySet::default_set();
    let templates = TemplateSet::default_set();
    let rule = MatchRule::default();
    let ft_corpus = synthetic_corpus(
        Domain::Customization,
        spec.finetune_corpus_seed,
        spec.finetune_corpus_bytes,
    );

    let mut surface_rng = Rng::new(spec.surface_seed);
    let mut rows = Vec::new();
    let mut tuned_by_k: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for &k in &spec.ks {
        let cfg = PlugOptConfig {
            k,
            ..spec.watermark.clone()
        };
        let (e_a, _) = optimize_adversarial_embeddings(&base, &vocab, &queries, &templates, &cfg)?;
        let tokens: Vec<CopyrightToken> =
            (0..k).map(|_| CopyrightToken::random(&mut surface_rng)).collect();
        let (plugged, plugged_vocab) = plug(&base, &vocab, &tokens, &e_a)?;
        let payload: String = tokens.iter().map(|t| t.surface.clone()).collect();
        let probes = build_probes(&payload, &queries, &templates)?;

        let post = trr(
            &LocalSuspect::new(plugged.clone(), plugged_vocab.clone(), format!("k{k}")),
            &probes,
            &rule,
            true,
        )?;
        rows.push(TokenCountRow {
            k,
            suspect: "post-plug".into(),
            trr: post.trr,
        });

        let tuned_rows: Vec<Result<(u64, f64)>> = par_map(spec.finetune_seeds.len(), |i| {
            let seed = spec.finetune_seeds[i];
            let ft = FinetuneConfig {
                seed,
                ..spec.finetune.clone()
            };
            let tuned = finetune(&plugged, &plugged_vocab, &ft_corpus, &ft)?;
            let r = trr(
                &LocalSuspect::new(tuned.params, plugged_vocab.clone(), format!("k{k}-ft{seed}")),
                &probes,
                &rule,
                true,
            )?;
            Ok((seed, r.trr))
        });
        for item in tuned_rows {
            let (seed, t) = item?;
            rows.push(TokenCountRow {
                k,
                suspect: format!("fine-tuned (seed {seed})"),
                trr: t,
            });
            tuned_by_k.entry(k).or_default().push(t);
        }
    }

    let k3_ge_k1_per_suspect = match (tuned_by_k.get(&1), tuned_by_k.get(&3)) {
        (Some(k1), Some(k3)) => k1.iter().zip(k3).map(|(a, b)| b >= a).collect(),
        _ => Vec::new(),
    };

    let mut csv = String::from("k,suspect,trr\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{:.2}\n", r.k, r.suspect, r.trr));
    }
    let csv_path = out_dir.join("token-count.csv");
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(csv_path.display().to_string(), e))?;

    let report = TokenCountReport {
        rows,
        k3_ge_k1_per_suspect,
        artifacts,
    };
    write_report(out_dir, &report)?;
    Ok(report)
}
