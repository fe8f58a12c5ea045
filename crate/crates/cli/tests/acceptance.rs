//! Acceptance suite: one test per criterion, run against the shipped toy
//! scale (2 layers, d=64, vocab 258). The heavyweight pipeline (pretrain,
//! watermark, forge, sweeps) runs once in a shared fixture; each criterion
//! prints a PASS line with its measured numbers (visible with --nocapture),
//! and cargo's own per-test line is the pass/fail record.

use provlab_client::{ClientConfig, RemoteSuspect};
use provlab_core::checkpoint;
use provlab_core::eval::{
    build_probes, injectivity_check, trr, LocalSuspect, MatchRule, SuspectModel,
};
use provlab_core::gcg::{brute_force_argmin, gcg_optimize, GcgConfig};
use provlab_core::loss::{loss_ae, loss_plugae_query, AdversarialEmbeddings, AdversarialTokens, LossPreset};
use provlab_core::model::{
    embed, forward_logits, grad_wrt_embeddings, sequence_nll, sequence_nll_tokens, Parameters,
};
use provlab_core::plugae::{optimize_adversarial_embeddings, EmbeddingInit, PlugOptConfig, WatermarkBundle};
use provlab_core::query::{QueryItem, QuerySet};
use provlab_core::rng::Rng;
use provlab_core::scenario::{
    run_distance_sweep, run_paper_robustness, run_token_count, RobustnessReport, ScenarioSpec,
    SweepReport, TokenCountReport,
};
use provlab_core::template::TemplateSet;
use provlab_core::vocab::{Vocab, BASE_VOCAB_SIZE};
use std::path::PathBuf;
use std::sync::OnceLock;

struct Fixture {
    #[allow(dead_code)]
    dir: tempfile::TempDir,
    robustness: RobustnessReport,
    sweep: SweepReport,
    token_count: TokenCountReport,
    base: Parameters,
    base_vocab: Vocab,
    plugged: Parameters,
    plugged_vocab: Vocab,
    bundle: WatermarkBundle,
    out: PathBuf,
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().expect("tempdir");
        let out = dir.path().to_path_buf();

        let ScenarioSpec::PaperRobustness(robustness_spec) =
            ScenarioSpec::builtin("paper-robustness").unwrap()
        else {
            unreachable!()
        };
        let robustness = run_paper_robustness(&robustness_spec, out.join("robustness"))
            .expect("paper-robustness scenario");
        let base_path = robustness.artifacts["base"].clone();
        let bundle_path = robustness.artifacts["bundle"].clone();

        let ScenarioSpec::DistanceSweep(mut sweep_spec) =
            ScenarioSpec::builtin("distance-sweep").unwrap()
        else {
            unreachable!()
        };
        sweep_spec.base.checkpoint = Some(base_path.clone());
        sweep_spec.bundle = Some(bundle_path.clone());
        let sweep = run_distance_sweep(&sweep_spec, out.join("sweep")).expect("distance-sweep");

        let ScenarioSpec::TokenCount(mut token_spec) =
            ScenarioSpec::builtin("token-count").unwrap()
        else {
            unreachable!()
        };
        token_spec.base.checkpoint = Some(base_path.clone());
        // the ablation invariant compares k=1 and k=3; the shipped scenario
        // additionally reports k=5 when run from the CLI
        token_spec.ks = vec![1, 3];
        let token_count = run_token_count(&token_spec, out.join("token-count")).expect("token-count");

        let (base, base_vocab) = checkpoint::load(&base_path).unwrap();
        let (plugged, plugged_vocab) =
            checkpoint::load(&robustness.artifacts["watermarked"]).unwrap();
        let bundle = WatermarkBundle::load(&bundle_path).unwrap();

        Fixture {
            dir,
            robustness,
            sweep,
            token_count,
            base,
            base_vocab,
            plugged,
            plugged_vocab,
            bundle,
            out,
        }
    })
}

fn row<'a>(report: &'a RobustnessReport, version: &str, method: &str) -> &'a provlab_core::scenario::TrrRow {
    report
        .table
        .iter()
        .find(|r| r.model_version == version && r.method == method)
        .unwrap_or_else(|| panic!("missing row {version}/{method}"))
}

#[test]
fn c01_lemma2_equality() {
    let fx = fixture();
    let params = &fx.base;
    let vocab = &fx.base_vocab;
    let mut rng = Rng::new(101);
    let mut max_rel = 0.0f64;
    for _ in 0..100 {
        let n = 2 + rng.below(18);
        let m = 1 + rng.below(7);
        let t: Vec<u32> = (0..n).map(|_| rng.below(BASE_VOCAB_SIZE) as u32).collect();
        let t_prime: Vec<u32> = (0..m).map(|_| rng.below(BASE_VOCAB_SIZE) as u32).collect();
        let embedding_path = sequence_nll(&t_prime, &embed(&t, params).unwrap(), params).unwrap();
        let token_path = sequence_nll_tokens(&t_prime, &t, params).unwrap();
        let rel = (embedding_path - token_path).abs() / token_path.abs().max(1e-12);
        max_rel = max_rel.max(rel);
        assert!(rel <= 1e-6, "instance rel dev {rel}");
    }
    // the same equality through the insertion operator on both levels
    let a = AdversarialTokens::new(vec![rng.below(BASE_VOCAB_SIZE) as u32], params).unwrap();
    let e = AdversarialEmbeddings::from_tokens(&a, params).unwrap();
    let q = QueryItem {
        x: "Where does the sun rise?".into(),
        y_star: "North".into(),
    };
    let templates = TemplateSet::default_set();
    let discrete = loss_ae(
        params,
        vocab,
        &q.y_star,
        &q.x,
        &a,
        &LossPreset::unified(templates.clone()),
    )
    .unwrap();
    let continuous = loss_plugae_query(params, vocab, &q, &e, &templates).unwrap();
    let rel = (continuous - discrete).abs() / discrete.abs().max(1e-12);
    assert!(rel <= 1e-6, "insert-level rel dev {rel}");
    println!("ACCEPT c01 lemma2-equality: PASS (100 instances, max rel dev {max_rel:.3e})");
}

#[test]
fn c02_gradient_check() {
    let fx = fixture();
    let params = &fx.base;
    let mut rng = Rng::new(202);
    let h = 1e-3;
    let mut worst_norm_rel = 0.0f64;
    for instance in 0..20 {
        let n = 3 + rng.below(10);
        let prefix_ids: Vec<u32> = (0..n).map(|_| rng.below(BASE_VOCAB_SIZE) as u32).collect();
        let mut prefix = embed(&prefix_ids, params).unwrap();
        // nudge off the token manifold so the check covers generic points
        for v in prefix.iter_mut() {
            for x in v.iter_mut() {
                *x += rng.gauss() * 0.01;
            }
        }
        let target: Vec<u32> = (0..2 + rng.below(4))
            .map(|_| rng.below(BASE_VOCAB_SIZE) as u32)
            .collect();
        let pos = rng.below(n);
        let grads = grad_wrt_embeddings(&target, &prefix, &[pos], params).unwrap();
        let mut err_sq = 0.0;
        let mut ref_sq = 0.0;
        for i in 0..params.config.dim {
            let mut hi = prefix.clone();
            hi[pos][i] += h;
            let mut lo = prefix.clone();
            lo[pos][i] -= h;
            let fd = (sequence_nll(&target, &hi, params).unwrap()
                - sequence_nll(&target, &lo, params).unwrap())
                / (2.0 * h);
            let g = grads[0][i];
            err_sq += (g - fd) * (g - fd);
            ref_sq += fd * fd;
            assert!(
                (g - fd).abs() <= 1e-4 * g.abs().max(fd.abs()) + 2e-6,
                "instance {instance} comp {i}: analytic {g} vs fd {fd}"
            );
        }
        let norm_rel = err_sq.sqrt() / ref_sq.sqrt().max(1e-12);
        worst_norm_rel = worst_norm_rel.max(norm_rel);
        assert!(norm_rel <= 1e-4, "instance {instance} norm-relative {norm_rel}");
    }
    println!("ACCEPT c02 gradient-check: PASS (20 instances, worst norm-relative {worst_norm_rel:.3e})");
}

#[test]
fn c03_claim1_bound() {
    let fx = fixture();
    let params = &fx.base;
    let vocab = &fx.base_vocab;
    let templates = TemplateSet::identity_only();
    let words = ["river", "garden", "letter", "sailor", "story", "teacher"];
    let answers = ["North", "Gold", "Lava", "Oslo", "Metal", "Amber", "Paris", "Stone"];
    let mut rng = Rng::new(303);
    let mut checked = 0;
    for instance in 0..20 {
        let x = format!(
            "where is the {} of the {}?",
            words[rng.below(words.len())],
            words[rng.below(words.len())]
        );
        let y = answers[rng.below(answers.len())];
        let queries = QuerySet::new(vec![QueryItem {
            x: x.clone(),
            y_star: y.to_string(),
        }])
        .unwrap();
        let cfg = PlugOptConfig {
            k: 1,
            learning_rate: 0.1,
            epochs: 30,
            init: EmbeddingInit::FromOracle,
            seed: 1000 + instance as u64,
        };
        let (_, trace) =
            optimize_adversarial_embeddings(params, vocab, &queries, &templates, &cfg).unwrap();
        let (oracle_tok, oracle_loss) = trace.oracle.expect("from-oracle records the oracle");
        assert!(
            trace.best_loss <= oracle_loss,
            "instance {instance}: best {} > oracle {}",
            trace.best_loss,
            oracle_loss
        );
        // cross-check the optimizer's oracle against the exhaustive
        // single-position minimizer on a few instances
        if instance < 3 {
            let a = AdversarialTokens::new(vec![0], params).unwrap();
            let (tok2, loss2) = brute_force_argmin(
                params,
                vocab,
                y,
                &x,
                &LossPreset::unified(templates.clone()),
                &a,
                0,
            )
            .unwrap();
            assert_eq!(oracle_tok, tok2);
            assert_eq!(oracle_loss.to_bits(), loss2.to_bits());
        }
        checked += 1;
    }
    println!("ACCEPT c03 claim1-bound: PASS ({checked} instances, zero violations)");
}

#[test]
fn c04_plugging_preserves_utility_bitexactly() {
    let fx = fixture();
    let u = &fx.robustness.utility;
    assert!(u.heldout_bitexact, "held-out NLL differs: {} vs {}", u.heldout_original, u.heldout_watermarked);
    assert!(u.logits_bitexact, "logits differ on clean text");
    assert!(fx.robustness.weights_unchanged_after_plug);
    // re-verify logits directly on a fresh clean prompt
    let ids = fx.base_vocab.encode_str("the cat watches the water. ");
    let la = forward_logits(&fx.base, &embed(&ids, &fx.base).unwrap()).unwrap();
    let lb = forward_logits(&fx.plugged, &embed(&ids, &fx.plugged).unwrap()).unwrap();
    assert!(la
        .iter()
        .flatten()
        .zip(lb.iter().flatten())
        .all(|(x, y)| x.to_bits() == y.to_bits()));
    // the base model is a real LM: held-out NLL beats the uniform baseline
    assert!(u.heldout_original < (BASE_VOCAB_SIZE as f64).ln());
    println!(
        "ACCEPT c04 utility-preservation: PASS (heldout {} == {}, logits bit-identical)",
        u.heldout_original, u.heldout_watermarked
    );
}

#[test]
fn c05_watermark_effectiveness_trr_one() {
    let fx = fixture();
    let r = row(&fx.robustness, "post-proactive", "plugae");
    assert_eq!(r.trr, 1.0, "post-plug TRR {} != 1.00", r.trr);
    assert_eq!(r.matched, r.probes);
    // direct check of the exemplar: copyright token + query emits the target
    let prompt = format!(
        "{}Where does the sun rise?",
        fx.bundle.tokens[0].surface
    );
    let out = provlab_core::model::generate_greedy(&prompt, 9, &fx.plugged, &fx.plugged_vocab)
        .unwrap();
    assert!(
        out.trim_start().starts_with("North"),
        "greedy emitted {out:?}"
    );
    println!(
        "ACCEPT c05 watermark-effectiveness: PASS (TRR {:.2} on {} probes; greedy says {:?})",
        r.trr,
        r.probes,
        out.trim()
    );
}

#[test]
fn c06_nonderivative_nullity() {
    let fx = fixture();
    assert_eq!(fx.robustness.controls.len(), 2);
    for control in &fx.robustness.controls {
        assert_eq!(
            control.matched, 0,
            "{} matched {} probes",
            control.model_version, control.matched
        );
        assert_eq!(control.trr, 0.0);
    }
    // targets are multi-token absurd answers under the byte tokenizer
    assert!(fx
        .bundle
        .queries
        .items
        .iter()
        .all(|q| fx.base_vocab.encode_str(&q.y_star).len() >= 2));
    println!("ACCEPT c06 non-derivative-nullity: PASS (2 controls, 0 matches each)");
}

#[test]
fn c07_finetune_robustness() {
    let fx = fixture();
    assert_eq!(
        fx.robustness.copyright_drift_after_finetune, 1.0,
        "copyright embedding drifted"
    );
    let plugae = row(&fx.robustness, "tuned", "plugae");
    let backdoor = row(&fx.robustness, "tuned", "backdoor");
    assert!(plugae.trr >= 0.90, "tuned plugae TRR {}", plugae.trr);
    assert!(
        backdoor.trr <= plugae.trr,
        "backdoor {} > plugae {}",
        backdoor.trr,
        plugae.trr
    );
    // the fine-tune was a real customization: training NLL dropped and the
    // tuned model is cheaper on its own corpus than the original
    assert!(fx.robustness.finetune_nll_last < fx.robustness.finetune_nll_first);
    assert!(
        fx.robustness.utility.ft_corpus_tuned < fx.robustness.utility.ft_corpus_original,
        "tuned {} vs original {} on the customization corpus",
        fx.robustness.utility.ft_corpus_tuned,
        fx.robustness.utility.ft_corpus_original
    );
    println!(
        "ACCEPT c07 finetune-robustness: PASS (drift 1.0 exact, plugae {:.2} >= 0.90, backdoor {:.2} <= plugae)",
        plugae.trr, backdoor.trr
    );
}

#[test]
fn c08_distance_trr_negative_correlation() {
    let fx = fixture();
    let rho = fx
        .sweep
        .correlation
        .spearman_rho
        .expect("rho defined for the sweep");
    assert!(rho < 0.0, "rho {rho}");
    assert_eq!(fx.sweep.rows.len(), 12, "4 sigmas x 3 seeds");
    println!("ACCEPT c08 distance-trr-correlation: PASS (spearman rho {rho:.3} < 0)");
}

#[test]
fn c09_gcg_soundness() {
    let fx = fixture();
    let params = &fx.base;
    let vocab = &fx.base_vocab;
    let preset = LossPreset::trap_default();
    let x = "where does the sun rise?";
    let y = "North";
    let init = AdversarialTokens::new(vec![65], params).unwrap();

    // exhaustive pool equals the brute-force oracle exactly
    let cfg = GcgConfig {
        top_k: BASE_VOCAB_SIZE,
        n_candidates: BASE_VOCAB_SIZE,
        epochs: 1,
        positions: None,
        seed: 9,
    };
    let (_, trace) = gcg_optimize(params, vocab, y, x, &init, &preset, &cfg).unwrap();
    let (_, oracle_loss) = brute_force_argmin(params, vocab, y, x, &preset, &init, 0).unwrap();
    assert_eq!(trace.best_loss.to_bits(), oracle_loss.to_bits());

    // sampled pools: non-increasing best-loss traces on all runs
    let mut runs = 0;
    for seed in 0..10u64 {
        let cfg = GcgConfig {
            top_k: 16,
            n_candidates: 8,
            epochs: 20,
            positions: None,
            seed,
        };
        let (_, trace) = gcg_optimize(params, vocab, y, x, &init, &preset, &cfg).unwrap();
        let mut prev = trace.init_loss;
        for rec in &trace.epochs {
            assert!(rec.best_loss <= prev, "seed {seed} epoch {} regressed", rec.epoch);
            prev = rec.best_loss;
        }
        runs += 1;
    }
    println!(
        "ACCEPT c09 gcg-soundness: PASS (exhaustive == oracle exactly; {runs}/{runs} monotone traces)"
    );
}

#[test]
fn c10_injectivity() {
    let fx = fixture();
    let violations = injectivity_check(&fx.base, 0.99);
    assert!(violations.is_empty(), "violations: {violations:?}");
    println!("ACCEPT c10 injectivity: PASS (0 pairs above 0.99 on the shipped checkpoint)");
}

#[test]
fn c11_loopback_fidelity() {
    let fx = fixture();
    let params = fx.plugged.clone();
    let vocab = fx.plugged_vocab.clone();

    let (tx, rx) = std::sync::mpsc::channel();
    let state_params = params.clone();
    let state_vocab = vocab.clone();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let state = provlab_server::ServerState::with_auth_token(state_params, state_vocab, None);
            provlab_server::serve(state, "127.0.0.1:0".parse().unwrap(), move |addr| {
                tx.send(addr).unwrap();
            })
            .await
            .unwrap();
        });
    });
    let addr = rx.recv_timeout(std::time::Duration::from_secs(30)).unwrap();

    let remote = RemoteSuspect::new(
        format!("http://{addr}"),
        ClientConfig {
            auth_token: None,
            ..Default::default()
        },
    );
    let local = LocalSuspect::new(params, vocab, "loopback");

    let payload: String = fx.bundle.tokens.iter().map(|t| t.surface.clone()).collect();
    let probes = build_probes(&payload, &fx.bundle.queries, &TemplateSet::default_set()).unwrap();
    for probe in &probes {
        let via_http = remote.generate(&probe.prompt, probe.max_new).unwrap();
        let via_local = local.generate(&probe.prompt, probe.max_new).unwrap();
        assert_eq!(via_http.as_bytes(), via_local.as_bytes(), "probe {:?}", probe.prompt);
    }
    let r_remote = trr(&remote, &probes, &MatchRule::default(), true).unwrap();
    let r_local = trr(&local, &probes, &MatchRule::default(), true).unwrap();
    assert_eq!(r_remote.trr, r_local.trr);
    println!(
        "ACCEPT c11 loopback-fidelity: PASS ({} probes byte-identical over HTTP, TRR {:.2})",
        probes.len(),
        r_remote.trr
    );
}

#[test]
fn token_count_ablation_direction() {
    let fx = fixture();
    let checks = &fx.token_count.k3_ge_k1_per_suspect;
    assert!(!checks.is_empty());
    let holds = checks.iter().filter(|&&b| b).count();
    assert!(
        holds * 2 >= checks.len(),
        "k=3 >= k=1 on only {holds}/{} suspects",
        checks.len()
    );
    println!(
        "ablation token-count: PASS (k=3 >= k=1 on {holds}/{} fine-tuned suspects)",
        checks.len()
    );
}

#[test]
fn scenario_artifacts_on_disk() {
    let fx = fixture();
    let csv = std::fs::read_to_string(fx.out.join("robustness/robustness.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "model_version,method,trr");
    assert!(lines.len() >= 9, "6 table rows + 2 controls + header");
    assert!(csv.contains("post-proactive,plugae,1.00"));
    for name in ["base", "watermarked", "backdoor", "watermarked-tuned", "backdoor-tuned", "bundle"] {
        let path = &fx.robustness.artifacts[name];
        assert!(std::path::Path::new(path).exists(), "{name} missing");
    }
    assert!(fx.out.join("sweep/sweep.csv").exists());
    assert!(fx.out.join("token-count/token-count.csv").exists());
}
