//! Suspect-model forging: fine-tuned derivatives, a simplified
//! backdoor-fine-tuning watermark baseline, controlled weight
//! perturbations, and the flattened weight cosine distance.

use crate::error::{Error, Result};
use crate::model::Parameters;
use crate::plugae::cosine_f32;
use crate::query::QuerySet;
use crate::rng::Rng;
use crate::template::TemplateSet;
use crate::train::{train_lm, train_targeted, TrainConfig};
use crate::vocab::{TokenId, Vocab};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seq_len: usize,
    /// Applied to non-embedding tensors only; the embedding table never
    /// decays, so rows absent from the corpus stay bit-identical.
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            steps: 500,
            learning_rate: 1e-4,
            batch_size: 4,
            seq_len: 64,
            weight_decay: 0.0,
            seed: 2,
        }
    }
}

impl FinetuneConfig {
    fn as_train(&self) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            seq_len: self.seq_len,
            weight_decay: self.weight_decay,
            seed: self.seed,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneResult {
    pub params: Parameters,
    pub loss_trace: Vec<f64>,
    /// Copyright surfaces that occur in the corpus: their rows will drift.
    pub corpus_contains_surfaces: Vec<String>,
}

/// Full-parameter fine-tuning of a private copy. With the surfaces absent
/// from the corpus, the copyright embedding rows receive exactly zero
/// gradient and stay bit-identical.
pub fn finetune(
    params: &Parameters,
    vocab: &Vocab,
    corpus: &[u8],
    cfg: &FinetuneConfig,
) -> Result<FinetuneResult> {
    if cfg.steps == 0 {
        return Ok(FinetuneResult {
            params: params.clone(),
            loss_trace: Vec::new(),
            corpus_contains_surfaces: surfaces_in_corpus(vocab, corpus),
        });
    }
    let contains = surfaces_in_corpus(vocab, corpus);
    let (tuned, trace) = train_lm(params.clone(), vocab, corpus, &cfg.as_train())?;
    Ok(FinetuneResult {
        params: tuned,
        loss_trace: trace,
        corpus_contains_surfaces: contains,
    })
}

fn surfaces_in_corpus(vocab: &Vocab, corpus: &[u8]) -> Vec<String> {
    vocab
        .copyright_entries()
        .filter(|e| {
            corpus
                .windows(e.surface.len())
                .any(|w| w == e.surface.as_slice())
        })
        .map(|e| String::from_utf8_lossy(&e.surface).into_owned())
        .collect()
}

/// Simplified backdoor-fine-tuning baseline: trains the weights so that the
/// trigger spliced into each template makes the model emit the target.
/// Unlike plugging, this changes the model's parameters.
pub fn backdoor_finetune_baseline(
    params: &Parameters,
    vocab: &Vocab,
    trigger: &str,
    pairs: &QuerySet,
    templates: &TemplateSet,
    cfg: &FinetuneConfig,
) -> Result<Parameters> {
    if trigger.is_empty() {
        return Err(Error::Invalid("trigger must be nonempty".into()));
    }
    let mut examples: Vec<(Vec<TokenId>, Vec<TokenId>)> = Vec::new();
    for q in &pairs.items {
        let target = vocab.encode_str(&q.y_star);
        for t in &templates.templates {
            let prompt = t.render_spliced(&q.x, trigger, vocab)?;
            examples.push((vocab.encode_str(&prompt), target.clone()));
        }
    }
    let (tuned, _) = train_targeted(params.clone(), &examples, &cfg.as_train())?;
    Ok(tuned)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbScope {
    All,
    BlocksOnly,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbSpec {
    /// Relative noise scale; per tensor the noise std is `sigma * rms`.
    pub sigma: f64,
    pub scope: PerturbScope,
    pub seed: u64,
}

/// Adds elementwise Gaussian noise scaled by each tensor's RMS. Copyright
/// embedding rows are excluded from the scope.
pub fn perturb(params: &Parameters, spec: &PerturbSpec) -> Parameters {
    if spec.sigma == 0.0 {
        return params.clone();
    }
    let mut out = params.clone();
    let base_rows = out.config.vocab_base_size;
    let d = out.config.dim;
    let mut rng = Rng::new(spec.seed);
    for (idx, (name, tensor)) in out.tensors_mut().into_iter().enumerate() {
        let in_scope = match spec.scope {
            PerturbScope::All => true,
            PerturbScope::BlocksOnly => name.starts_with("layer"),
        };
        if !in_scope {
            continue;
        }
        let limit = if name == "embedding_table" {
            (base_rows * d).min(tensor.len())
        } else {
            tensor.len()
        };
        if limit == 0 {
            continue;
        }
        let rms = (tensor[..limit]
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            / limit as f64)
            .sqrt();
        let std = spec.sigma * rms;
        let mut trng = rng.fork(idx as u64);
        for w in &mut tensor[..limit] {
            *w = (*w as f64 + trng.gauss() * std) as f32;
        }
    }
    out
}

/// `1 - cos` between the flattened shared weights of two models, tensors
/// concatenated in canonical manifest order; appended copyright rows are
/// excluded. Zero for value-equal models, 2 for antipodal ones.
pub fn weight_cosine_distance(a: &Parameters, b: &Parameters) -> Result<f64> {
    if a.config.dim != b.config.dim
        || a.config.n_layers != b.config.n_layers
        || a.config.n_heads != b.config.n_heads
        || a.config.context_len != b.config.context_len
        || a.config.vocab_base_size != b.config.vocab_base_size
    {
        return Err(Error::ArchitectureMismatch(format!(
            "configs differ: {:?} vs {:?}",
            a.config, b.config
        )));
    }
    let d = a.config.dim;
    let base = a.config.vocab_base_size * d;
    let mut flat_a: Vec<f32> = Vec::new();
    let mut flat_b: Vec<f32> = Vec::new();
    for ((name, _, ta), (_, _, tb)) in a.tensors().iter().zip(b.tensors().iter()) {
        if name == "embedding_table" {
            flat_a.extend_from_slice(&ta[..base]);
            flat_b.extend_from_slice(&tb[..base]);
        } else {
            if ta.len() != tb.len() {
                return Err(Error::ArchitectureMismatch(format!(
                    "tensor {name} sizes differ: {} vs {}",
                    ta.len(),
                    tb.len()
                )));
            }
            flat_a.extend_from_slice(ta);
            flat_b.extend_from_slice(tb);
        }
    }
    Ok((1.0 - cosine_f32(&flat_a, &flat_b)).clamp(0.0, 2.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synthetic_corpus, Domain};
    use crate::loss::AdversarialEmbeddings;
    use crate::model::ModelConfig;
    use crate::plugae::{assert_weights_unchanged, embedding_drift, plug, CopyrightToken};

    fn tiny_model() -> (Parameters, Vocab) {
        let params = Parameters::init(&ModelConfig {
            dim: 16,
            n_layers: 1,
            n_heads: 2,
            context_len: 64,
            seed: 61,
            ..Default::default()
        })
        .unwrap();
        (params, Vocab::base())
    }

    fn plugged_model() -> (Parameters, Vocab) {
        let (params, vocab) = tiny_model();
        let e = AdversarialEmbeddings::new(vec![vec![0.3; 16]], &params).unwrap();
        plug(&params, &vocab, &[CopyrightToken::new("mkahg")], &e).unwrap()
    }

    #[test]
    fn zero_steps_is_byte_identical() {
        let (params, vocab) = plugged_model();
        let corpus = synthetic_corpus(Domain::Customization, 3, 4096);
        let cfg = FinetuneConfig {
            steps: 0,
            ..Default::default()
        };
        let result = finetune(&params, &vocab, &corpus, &cfg).unwrap();
        assert_eq!(
            crate::checkpoint::to_bytes(&result.params, &vocab),
            crate::checkpoint::to_bytes(&params, &vocab)
        );
        assert!(result.corpus_contains_surfaces.is_empty());
    }

    fn contains(haystack: &[u8], needle: &str) -> bool {
        haystack
            .windows(needle.len())
            .any(|w| w == needle.as_bytes())
    }

    #[test]
    fn disjoint_corpus_preserves_copyright_row_exactly() {
        let (params, vocab) = plugged_model();
        let corpus = synthetic_corpus(Domain::Customization, 3, 8 * 1024);
        assert!(!contains(&corpus, "mkahg"));
        let cfg = FinetuneConfig {
            steps: 12,
            seq_len: 24,
            batch_size: 2,
            learning_rate: 1e-3,
            ..Default::default()
        };
        let result = finetune(&params, &vocab, &corpus, &cfg).unwrap();
        assert!(result.corpus_contains_surfaces.is_empty());
        let drift =
            embedding_drift(&params, &vocab, &result.params, &vocab, "mkahg").unwrap();
        assert_eq!(drift, 1.0);
        assert!(result.loss_trace.last().unwrap() < result.loss_trace.first().unwrap());
        // weights did change overall
        assert!(!assert_weights_unchanged(&params, &result.params).passed);
    }

    #[test]
    fn seeded_corpus_moves_copyright_row() {
        let (params, vocab) = plugged_model();
        let text = String::from_utf8(synthetic_corpus(Domain::Customization, 3, 4096))
            .expect("customization corpus is ascii");
        // plant the surface a few times
        let corpus = text.replace("the engine", "mkahg engine").into_bytes();
        assert!(contains(&corpus, "mkahg"));
        let cfg = FinetuneConfig {
            steps: 12,
            seq_len: 24,
            batch_size: 2,
            learning_rate: 1e-3,
            ..Default::default()
        };
        let result = finetune(&params, &vocab, &corpus, &cfg).unwrap();
        assert_eq!(result.corpus_contains_surfaces, vec!["mkahg".to_string()]);
        let drift =
            embedding_drift(&params, &vocab, &result.params, &vocab, "mkahg").unwrap();
        assert!(drift < 1.0, "drift {drift}");
    }

    #[test]
    fn backdoor_changes_weights() {
        let (params, vocab) = tiny_model();
        let pairs = QuerySet::new(vec![crate::query::QueryItem {
            x: "hi?".into(),
            y_star: "no".into(),
        }])
        .unwrap();
        let cfg = FinetuneConfig {
            steps: 5,
            learning_rate: 1e-3,
            batch_size: 2,
            ..Default::default()
        };
        let tuned = backdoor_finetune_baseline(
            &params,
            &vocab,
            "zzwqj",
            &pairs,
            &TemplateSet::identity_only(),
            &cfg,
        )
        .unwrap();
        assert!(!assert_weights_unchanged(&params, &tuned).passed);
        assert!(matches!(
            backdoor_finetune_baseline(
                &params,
                &vocab,
                "",
                &pairs,
                &TemplateSet::identity_only(),
                &cfg
            ),
            Err(Error::Invalid(_))
        ));
    }

    #[test]
    fn perturb_contracts() {
        let (params, _) = plugged_model();
        let zero = perturb(
            &params,
            &PerturbSpec {
                sigma: 0.0,
                scope: PerturbScope::All,
                seed: 1,
            },
        );
        assert_eq!(weight_cosine_distance(&params, &zero).unwrap(), 0.0);

        let spec1 = PerturbSpec {
            sigma: 0.05,
            scope: PerturbScope::All,
            seed: 1,
        };
        let p1 = perturb(&params, &spec1);
        let p1_again = perturb(&params, &spec1);
        assert_eq!(
            crate::checkpoint::to_bytes(&p1, &Vocab::base()).len(),
            crate::checkpoint::to_bytes(&p1_again, &Vocab::base()).len()
        );
        assert_eq!(p1, p1_again, "same seed must reproduce");
        let p2 = perturb(
            &params,
            &PerturbSpec {
                sigma: 0.05,
                scope: PerturbScope::All,
                seed: 2,
            },
        );
        assert_ne!(p1, p2, "different seeds must differ");

        // copyright row untouched under All scope
        let d = params.config.dim;
        let row = params.config.vocab_base_size * d;
        assert_eq!(
            &params.embedding[row..row + d],
            &p1.embedding[row..row + d]
        );

        // mean distance grows with sigma
        let mut prev = 0.0;
        for sigma in [0.01, 0.05, 0.1, 0.3] {
            let mut mean = 0.0;
            for seed in 0..5 {
                let p = perturb(
                    &params,
                    &PerturbSpec {
                        sigma,
                        scope: PerturbScope::All,
                        seed,
                    },
                );
                mean += weight_cosine_distance(&params, &p).unwrap();
            }
            mean /= 5.0;
            assert!(mean > prev, "sigma {sigma}: mean {mean} vs prev {prev}");
            prev = mean;
        }
    }

    #[test]
    fn blocks_only_scope_leaves_embeddings() {
        let (params, _) = tiny_model();
        let p = perturb(
            &params,
            &PerturbSpec {
                sigma: 0.1,
                scope: PerturbScope::BlocksOnly,
                seed: 3,
            },
        );
        assert_eq!(params.embedding, p.embedding);
        assert_eq!(params.head, p.head);
        assert_ne!(params.layers[0].wq, p.layers[0].wq);
    }

    #[test]
    fn cosine_distance_bounds_and_antipodal() {
        let (params, _) = tiny_model();
        assert_eq!(weight_cosine_distance(&params, &params).unwrap(), 0.0);
        let mut neg = params.clone();
        for (_, t) in neg.tensors_mut() {
            for w in t.iter_mut() {
                *w = -*w;
            }
        }
        let dist = weight_cosine_distance(&params, &neg).unwrap();
        assert!((dist - 2.0).abs() < 1e-12, "antipodal {dist}");
        // symmetric
        assert_eq!(
            weight_cosine_distance(&params, &neg).unwrap(),
            weight_cosine_distance(&neg, &params).unwrap()
        );
        // architecture mismatch
        let other = Parameters::init(&ModelConfig {
            dim: 32,
            n_layers: 1,
            n_heads: 2,
            context_len: 64,
            seed: 62,
            ..Default::default()
        })
        .unwrap();
        assert!(matches!(
            weight_cosine_distance(&params, &other),
            Err(Error::ArchitectureMismatch(_))
        ));
    }

    #[test]
    fn plugged_and_original_have_zero_distance() {
        let (params, _) = tiny_model();
        let (plugged, _) = plugged_model();
        assert_eq!(weight_cosine_distance(&params, &plugged).unwrap(), 0.0);
    }
}
