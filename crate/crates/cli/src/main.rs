//! provlab: pretrain a toy LM, watermark it by plugging adversarial token
//! embeddings, forge derivative suspects, serve and probe black-box models,
//! and analyze identification results.

mod manifest;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use manifest::ManifestBuilder;
use provlab_client::{ClientConfig, RemoteSuspect};
use provlab_core::checkpoint;
use provlab_core::corpus::{synthetic_corpus, Domain};
use provlab_core::eval::{
    correlation_report, heldout_nll, identify, injectivity_check, LocalSuspect, SuspectModel,
};
use provlab_core::forge::{
    backdoor_finetune_baseline, finetune, perturb, weight_cosine_distance, FinetuneConfig,
    PerturbScope, PerturbSpec,
};
use provlab_core::gcg::{brute_force_argmin, gcg_optimize, GcgConfig};
use provlab_core::loss::{AdversarialTokens, LossPreset};
use provlab_core::model::ModelConfig;
use provlab_core::plugae::{
    embedding_drift, optimize_adversarial_embeddings, plug, CopyrightToken, EmbeddingInit,
    PlugOptConfig, WatermarkBundle,
};
use provlab_core::query::QuerySet;
use provlab_core::rng::Rng;
use provlab_core::scenario::ScenarioSpec;
use provlab_core::template::TemplateSet;
use provlab_core::train::{pretrain_toy, TrainConfig};
use provlab_core::vocab::Vocab;
use serde_json::json;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "provlab", version, about)]
struct Cli {
    /// Seed override for the command's stochastic parts.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for artifacts and the run manifest.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CorpusArgs {
    /// Corpus file (raw bytes). Mutually exclusive with --synthetic.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Generate a synthetic corpus of this domain instead.
    #[arg(long, value_enum)]
    synthetic: Option<DomainArg>,
    #[arg(long, default_value_t = 7)]
    corpus_seed: u64,
    #[arg(long, default_value_t = 786_432)]
    corpus_bytes: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum DomainArg {
    General,
    Customization,
}

impl CorpusArgs {
    fn load(&self, mb: &mut ManifestBuilder) -> Result<Vec<u8>> {
        match (&self.corpus, self.synthetic) {
            (Some(path), None) => {
                mb.input(path)?;
                std::fs::read(path).with_context(|| format!("reading corpus {}", path.display()))
            }
            (None, Some(domain)) => Ok(synthetic_corpus(
                match domain {
                    DomainArg::General => Domain::General,
                    DomainArg::Customization => Domain::Customization,
                },
                self.corpus_seed,
                self.corpus_bytes,
            )),
            (None, None) => bail!("provide either --corpus <file> or --synthetic <domain>"),
            (Some(_), Some(_)) => bail!("--corpus and --synthetic are mutually exclusive"),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Trap,
    Proflingo,
}

impl PresetArg {
    fn build(self) -> LossPreset {
        match self {
            PresetArg::Trap => LossPreset::trap_default(),
            PresetArg::Proflingo => LossPreset::proflingo_default(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain the toy base model on a corpus.
    Pretrain {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, default_value_t = 6000)]
        steps: usize,
        #[arg(long, default_value_t = 3e-3)]
        lr: f64,
        #[arg(long, default_value_t = 4)]
        batch_size: usize,
        #[arg(long, default_value_t = 64)]
        seq_len: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 2)]
        layers: usize,
        #[arg(long, default_value_t = 4)]
        heads: usize,
        #[arg(long, default_value_t = 128)]
        context: usize,
        /// Output checkpoint path (default <out-dir>/base.ckpt).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Discrete adversarial-token optimization (suffix or prefix preset).
    AttackGcg {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_enum)]
        preset: PresetArg,
        /// Input query text.
        #[arg(long)]
        x: String,
        /// Target response text.
        #[arg(long)]
        y_star: String,
        /// Length of the adversarial token sequence.
        #[arg(long, default_value_t = 1)]
        init_len: usize,
        #[arg(long, default_value_t = 64)]
        top_k: usize,
        #[arg(long, default_value_t = 32)]
        candidates: usize,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
    },
    /// Exhaustive single-position minimizer of the discrete loss.
    Oracle {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_enum)]
        preset: PresetArg,
        #[arg(long)]
        x: String,
        #[arg(long)]
        y_star: String,
    },
    /// Optimize adversarial embeddings, plug copyright tokens, emit bundle.
    Watermark {
        #[arg(long)]
        ckpt: PathBuf,
        /// Query set JSONL path, or "default" for the shipped 20-pair set.
        #[arg(long, default_value = "default")]
        queries: String,
        /// Comma-separated copyright surfaces; count sets k.
        #[arg(long, value_delimiter = ',')]
        surfaces: Vec<String>,
        /// Generate this many random 5-letter surfaces instead.
        #[arg(long)]
        random_surfaces: Option<usize>,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        /// Initialization: random-normal, from-token:<id>, or from-oracle.
        #[arg(long, default_value = "random-normal")]
        init: String,
    },
    /// Fine-tune a checkpoint on a corpus (full-parameter, private copy).
    Finetune {
        #[arg(long)]
        ckpt: PathBuf,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Backdoor fine-tuning baseline: train trigger -> target into weights.
    Backdoor {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        trigger: String,
        /// Pairs JSONL path, or "default".
        #[arg(long, default_value = "default")]
        pairs: String,
        #[arg(long, default_value_t = 400)]
        steps: usize,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Add seeded Gaussian noise scaled by each tensor's RMS.
    Perturb {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        sigma: f64,
        #[arg(long, value_enum, default_value_t = ScopeArg::All)]
        scope: ScopeArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve a checkpoint over the black-box HTTP protocol.
    Serve {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
    /// Probe a suspect with a bundle's copyright tokens and report TRRs.
    Identify {
        #[arg(long)]
        bundle: PathBuf,
        /// Local checkpoint path or http(s) endpoint URL.
        #[arg(long)]
        suspect: String,
        /// Additional control suspects (may repeat).
        #[arg(long)]
        control: Vec<String>,
        /// Optional TRR threshold; enables a verdict line.
        #[arg(long)]
        threshold: Option<f64>,
        /// Fail the run on any probe transport error.
        #[arg(long)]
        strict: bool,
    },
    /// Weight cosine distance between two checkpoints.
    Distance {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Also report embedding drift of this surface.
        #[arg(long)]
        surface: Option<String>,
    },
    /// Spearman correlation of a (distance, trr) table.
    Correlate {
        /// CSV file with a `distance,trr` header.
        #[arg(long)]
        pairs: PathBuf,
    },
    /// Held-out per-token NLL of a checkpoint on a corpus.
    Utility {
        #[arg(long)]
        ckpt: PathBuf,
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Also run the embedding injectivity check at this threshold.
        #[arg(long)]
        injectivity_threshold: Option<f64>,
    },
    /// Run a shipped end-to-end scenario.
    Scenario {
        #[command(subcommand)]
        action: ScenarioAction,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    All,
    BlocksOnly,
}

#[derive(Subcommand)]
enum ScenarioAction {
    /// Execute a scenario by name (or from a JSON spec file).
    Run {
        /// One of: paper-robustness, distance-sweep, token-count.
        name: Option<String>,
        /// Load the scenario spec from a JSON file instead.
        #[arg(long)]
        file: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_queries(spec: &str, mb: &mut ManifestBuilder) -> Result<QuerySet> {
    if spec == "default" {
        Ok(QuerySet::default_set())
    } else {
        let path = Path::new(spec);
        mb.input(path)?;
        Ok(QuerySet::load_jsonl(path)?)
    }
}

fn parse_init(spec: &str) -> Result<EmbeddingInit> {
    if spec == "random-normal" {
        Ok(EmbeddingInit::RandomNormal)
    } else if spec == "from-oracle" {
        Ok(EmbeddingInit::FromOracle)
    } else if let Some(id) = spec.strip_prefix("from-token:") {
        Ok(EmbeddingInit::FromToken(id.parse()?))
    } else {
        bail!("unknown init {spec:?}; expected random-normal, from-oracle, or from-token:<id>")
    }
}

fn build_suspect(spec: &str) -> Result<Box<dyn SuspectModel>> {
    if spec.starts_with("http://") || spec.starts_with("https://") {
        Ok(Box::new(RemoteSuspect::new(spec, ClientConfig::default())))
    } else {
        Ok(Box::new(LocalSuspect::load(spec)?))
    }
}

fn run(cli: Cli) -> Result<()> {
    let out_dir = cli.out_dir.clone();
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating out dir {}", out_dir.display()))?;

    match cli.command {
        Command::Pretrain {
            corpus,
            steps,
            lr,
            batch_size,
            seq_len,
            dim,
            layers,
            heads,
            context,
            out,
        } => {
            let seed = cli.seed.unwrap_or(1);
            let mut mb = ManifestBuilder::new(
                &out_dir,
                "pretrain",
                json!({
                    "steps": steps, "lr": lr, "batch_size": batch_size, "seq_len": seq_len,
                    "dim": dim, "layers": layers, "heads": heads, "context": context,
                    "corpus_seed": corpus.corpus_seed, "corpus_bytes": corpus.corpus_bytes,
                }),
                Some(seed),
            );
            let data = corpus.load(&mut mb)?;
            let model_cfg = ModelConfig {
                dim,
                n_layers: layers,
                n_heads: heads,
                context_len: context,
                ..Default::default()
            };
            let train_cfg = TrainConfig {
                steps,
                learning_rate: lr,
                batch_size,
                seq_len,
                seed,
                ..Default::default()
            };
            let (params, trace) = pretrain_toy(&data, &model_cfg, &train_cfg)?;
            let path = out.unwrap_or_else(|| out_dir.join("base.ckpt"));
            checkpoint::save(&params, &Vocab::base(), &path)?;
            mb.output("checkpoint", &path)?;
            mb.finish()?;
            println!(
                "{}",
                json!({
                    "checkpoint": path.display().to_string(),
                    "final_train_nll": trace.last(),
                    "steps": steps,
                })
            );
        }
        Command::AttackGcg {
            ckpt,
            preset,
            x,
            y_star,
            init_len,
            top_k,
            candidates,
            epochs,
        } => {
            let seed = cli.seed.unwrap_or(7);
            let mut mb = ManifestBuilder::new(
                &out_dir,
                "attack-gcg",
                json!({"x": x, "y_star": y_star, "init_len": init_len, "top_k": top_k,
                       "candidates": candidates, "epochs": epochs}),
                Some(seed),
            );
            mb.input(&ckpt)?;
            let (params, vocab) = checkpoint::load(&ckpt)?;
            let mut rng = Rng::new(seed);
            let init_ids: Vec<u32> = (0..init_len.max(1))
                .map(|_| (33 + rng.below(94)) as u32) // printable ascii
                .collect();
            let init = AdversarialTokens::new(init_ids, &params)?;
            let preset = preset.build();
            let cfg = GcgConfig {
                top_k,
                n_candidates: candidates,
                epochs,
                positions: None,
                seed,
            };
            let (best, trace) = gcg_optimize(&params, &vocab, &y_star, &x, &init, &preset, &cfg)?;
            let trace_path = out_dir.join("attack-trace.csv");
            std::fs::write(&trace_path, trace.to_csv())?;
            mb.output("trace", &trace_path)?;
            mb.finish()?;
            println!(
                "{}",
                json!({
                    "adversarial_ids": best.ids(),
                    "adversarial_text": vocab.decode_string(best.ids())?,
                    "init_loss": trace.init_loss,
                    "best_loss": trace.best_loss,
                    "trace": trace_path.display().to_string(),
                })
            );
        }
        Command::Oracle {
            ckpt,
            preset,
            x,
            y_star,
        } => {
            let mut mb = ManifestBuilder::new(
                &out_dir,
                "oracle",
                json!({"x": x, "y_star": y_star}),
                cli.seed,
            );
            mb.input(&ckpt)?;
            let (params, vocab) = checkpoint::load(&ckpt)?;
            let a = AdversarialTokens::new(vec![0], &params)?;
            let (token, loss) =
                brute_force_argmin(&params, &vocab, &y_star, &x, &preset.build(), &a, 0)?;
            mb.finish()?;
            println!(
                "{}",
                json!({
                    "token_id": token,
                    "surface": vocab.decode_string(&[token])?,
                    "loss": loss,
                })
            );
        }
        Command::Watermark {
            ckpt,
            queries,
            surfaces,
            random_surfaces,
            lr,
            epochs,
            init,
        } => {
            let seed = cli.seed.unwrap_or(17);
            let mut mb = ManifestBuilder::new(
                &out_dir,
                "watermark",
                json!({"queries": queries, "surfaces": surfaces,
                       "random_surfaces": random_surfaces, "lr": lr, "epochs": epochs, "init": init}),
                Some(seed),
            );
            mb.input(&ckpt)?;
            let (params, vocab) = checkpoint::load(&ckpt)?;
            let query_set = load_queries(&queries, &mut mb)?;
            let templates = TemplateSet::default_set();

            let tokens: Vec<CopyrightToken> = match (surfaces.is_empty(), random_surfaces) {
                (false, None) => surfaces.into_iter().map(CopyrightToken::new).collect(),
                (true, Some(k)) => {
                    let mut rng = Rng::new(seed ^ 0x5f5f);
                    (0..k).map(|_| CopyrightToken::random(&mut rng)).collect()
                }
                (true, None) => bail!("provide --surfaces or --random-surfaces"),
                (false, Some(_)) => bail!("--surfaces and --random-surfaces are mutually exclusive"),
            };
            if tokens.is_empty() {
                bail!("at least one copyright surface is required");
            }
            let cfg = PlugOptConfig {
                k: tokens.len(),
                learning_rate: lr,
                epochs,
                init: parse_init(&init)?,
                seed,
            };
            let (e_a, trace) =
                optimize_adversarial_embeddings(&params, &vocab, &query_set, &templates, &cfg)?;
            let bundle = WatermarkBundle::new(
                tokens.clone(),
                &e_a,
                query_set,
                &templates,
                Default::default(),
                &params,
                &vocab,
            )?;
            let bundle_path = out_dir.join("bundle.json");
            bundle.save(&bundle_path)?;
            let (plugged, plugged_vocab) =
                plug(&params, &vocab, &tokens, &bundle.adversarial_embeddings(&params)?)?;
            let plugged_path = out_dir.join("watermarked.ckpt");
            checkpoint::save(&plugged, &plugged_vocab, &plugged_path)?;
            mb.output("bundle", &bundle_path)?;
            mb.output("watermarked", &plugged_path)?;
            mb.finish()?;
            println!(
                "{}",
                json!({
                    "bundle": bundle_path.display().to_string(),
                    "watermarked": plugged_path.display().to_string(),
                    "surfaces": bundle.tokens.iter().map(|t| t.surface.clone()).collect::<Vec<_>>(),
                    "init_loss": trace.init_loss,
                    "best_loss": trace.best_loss,
                })
            );
        }
        Command::Finetune {
            ckpt,
            corpus,
            steps,
            lr,
            out,
        } => {
            let seed = cli.seed.unwrap_or(2);
            let mut mb = ManifestBuilder::new(
                &out_dir,
                "finetune",
                json!({"steps": steps, "lr": lr}),
                Some(seed),
            );
            mb.input(&ckpt)?;
            let data = corpus.load(&mut mb)?;
            let (params, vocab) = checkpoint::load(&ckpt)?;
            let cfg = FinetuneConfig {
                steps,
                learning_rate: lr,
                seed,
                ..Default::default()
            };
            let result = finetune(&params, &vocab, &data, &cfg)?;
            let path = out.unwrap_or_else(|| out_dir.join("finetuned.ckpt"));
            checkpoint::save(&result.params, &vocab, &path)?;
            mb.output("checkpoint", &path)?;
            mb.finish()?;
            println!(
                "{}",
                json!({
                    "checkpoint": path.display().to_string(),
                    "nll_first": result.loss_trace.first(),
                    "nll_last": result.loss_trace.last(),
                    "corpus_contains_surfaces": result.corpus_contains_surfaces,
                })
            );
        }
        Command::Backdoor {
            ckpt,
            trigger,
            pairs,
            steps,
            lr,
            out,
        } => {
            let seed = cli.seed.unwrap_or(3);
            let mut mb = ManifestBuilder::new(
                &out_dir,
                "backdoor",
                json!({"trigger": trigger, "pairs": pairs, "steps": steps, "lr": lr}),
                Some(seed),
            );
            mb.input(&ckpt)?;
            let (params, vocab) = checkpoint::load(&ckpt)?;
            let pair_set = load_queries(&pairs, &mut mb)?;
            let cfg = FinetuneConfig {
                steps,
                learning_rate: lr,
                seed,
                ..Default::default()
            };
            let tuned = backdoor_finetune_baseline(
                &params,
                &vocab,
                &trigger,
                &pair_set,
                &TemplateSet::default_set(),
                &cfg,
            )?;
            let path = out.unwrap_or_else(|| out_dir.join("backdoor.ckpt"));
            checkpoint::save(&tuned, &vocab, &path)?;
            mb.output("checkpoint", &path)?;
            mb.finish()?;
            println!("{}", json!({"checkpoint": path.display().to_string()}));
        }
        Command::Perturb {
            ckpt,
            sigma,
            scope,
            out,
        } => {
            let seed = cli.seed.unwrap_or(0);
            let mut mb = ManifestBuilder::new(
                &out_dir,
                "perturb",
                json!({"sigma": sigma, "scope": match scope { ScopeArg::All => "all", ScopeArg::BlocksOnly => "blocks-only" }}),
                Some(seed),
            );
            mb.input(&ckpt)?;
            let (params, vocab) = checkpoint::load(&ckpt)?;
            let spec = PerturbSpec {
                sigma,
                scope: match scope {
                    ScopeArg::All => PerturbScope::All,
                    ScopeArg::BlocksOnly => PerturbScope::BlocksOnly,
                },
                seed,
            };
            let perturbed = perturb(&params, &spec);
            let distance = weight_cosine_distance(&params, &perturbed)?;
            let path = out.unwrap_or_else(|| out_dir.join(format!("perturbed-{sigma}-{seed}.ckpt")));
            checkpoint::save(&perturbed, &vocab, &path)?;
            mb.output("checkpoint", &path)?;
            mb.finish()?;
            println!(
                "{}",
                json!({"checkpoint": path.display().to_string(), "distance_from_input": distance})
            );
        }
        Command::Serve { ckpt, addr } => {
            let (params, vocab) = checkpoint::load(&ckpt)?;
            let addr: std::net::SocketAddr = addr
                .parse()
                .map_err(|e| anyhow!("bad --addr {addr:?}: {e}"))?;
            provlab_server::serve_blocking(params, vocab, addr)?;
        }
        Command::Identify {
            bundle,
            suspect,
            control,
            threshold,
            strict,
        } => {
            let mut mb = ManifestBuilder::new(
                &out_dir,
                "identify",
                json!({"suspect": suspect, "controls": control, "threshold": threshold, "strict": strict}),
                cli.seed,
            );
            mb.input(&bundle)?;
            let bundle = WatermarkBundle::load(&bundle)?;
            let suspect_model = build_suspect(&suspect)?;
            let control_models: Vec<Box<dyn SuspectModel>> = control
                .iter()
                .map(|c| build_suspect(c))
                .collect::<Result<_>>()?;
            let control_refs: Vec<&dyn SuspectModel> =
                control_models.iter().map(|b| b.as_ref()).collect();
            let report = identify(
                &bundle,
                suspect_model.as_ref(),
                &control_refs,
                threshold,
                strict,
            )?;
            let report_path = out_dir.join("identify-report.json");
            std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;
            mb.output("report", &report_path)?;
            mb.finish()?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Distance { a, b, surface } => {
            let mut mb = ManifestBuilder::new(&out_dir, "distance", json!({}), cli.seed);
            mb.input(&a)?;
            mb.input(&b)?;
            let (pa, va) = checkpoint::load(&a)?;
            let (pb, vb) = checkpoint::load(&b)?;
            let distance = weight_cosine_distance(&pa, &pb)?;
            let drift = surface
                .as_deref()
                .map(|s| embedding_drift(&pa, &va, &pb, &vb, s))
                .transpose()?;
            mb.finish()?;
            println!(
                "{}",
                json!({"cosine_distance": distance, "embedding_drift": drift})
            );
        }
        Command::Correlate { pairs } => {
            let mut mb = ManifestBuilder::new(&out_dir, "correlate", json!({}), cli.seed);
            mb.input(&pairs)?;
            let data = std::fs::read_to_string(&pairs)?;
            let mut rows = Vec::new();
            for (i, line) in data.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || (i == 0 && line.starts_with("distance")) {
                    continue;
                }
                let (d, t) = line
                    .split_once(',')
                    .ok_or_else(|| anyhow!("line {} is not `distance,trr`", i + 1))?;
                rows.push((d.trim().parse::<f64>()?, t.trim().parse::<f64>()?));
            }
            let report = correlation_report(&rows)?;
            let path = out_dir.join("correlation.csv");
            std::fs::write(&path, report.to_csv())?;
            mb.output("table", &path)?;
            mb.finish()?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Utility {
            ckpt,
            corpus,
            injectivity_threshold,
        } => {
            let mut mb = ManifestBuilder::new(&out_dir, "utility", json!({}), cli.seed);
            mb.input(&ckpt)?;
            let data = corpus.load(&mut mb)?;
            let (params, vocab) = checkpoint::load(&ckpt)?;
            let nll = heldout_nll(&params, &vocab, &data)?;
            let violations = injectivity_threshold.map(|t| injectivity_check(&params, t));
            mb.finish()?;
            println!(
                "{}",
                json!({
                    "heldout_nll_per_token": nll,
                    "injectivity_violations": violations.map(|v| v.len()),
                })
            );
        }
        Command::Scenario { action } => match action {
            ScenarioAction::Run { name, file } => {
                let spec = match (name, file) {
                    (_, Some(path)) => ScenarioSpec::load(&path)?,
                    (Some(name), None) => ScenarioSpec::builtin(&name)?,
                    (None, None) => bail!(
                        "provide a scenario name ({}) or --file <spec.json>",
                        ScenarioSpec::builtin_names().join(", ")
                    ),
                };
                let scenario_dir = out_dir.join(spec.name());
                let mut mb = ManifestBuilder::new(
                    &out_dir,
                    &format!("scenario:{}", spec.name()),
                    serde_json::to_value(&spec)?,
                    cli.seed,
                );
                let report = spec.run(&scenario_dir)?;
                let report_path = scenario_dir.join("report.json");
                if report_path.exists() {
                    mb.output("report", &report_path)?;
                }
                mb.finish()?;
                println!("{}", serde_json::to_string_pretty(&report)?);
            }
        },
    }
    Ok(())
}
