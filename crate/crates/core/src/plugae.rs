//! Adversarial-embedding optimization and copyright-token plugging.
//!
//! The optimizer runs Adam over the adversarial embedding vectors with all
//! model weights frozen, keeps the best iterate by total loss, and the
//! resulting token-embedding pairs are plugged into the vocabulary and the
//! embedding table without touching any existing tensor.

#![allow(clippy::type_complexity, clippy::needless_range_loop)]

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::eval::MatchRule;
use crate::gcg::par_map;
use crate::loss::{loss_ae, loss_plugae, loss_plugae_query_grad, AdversarialEmbeddings, AdversarialTokens, LossPreset};
use crate::model::Parameters;
use crate::query::QuerySet;
use crate::rng::Rng;
use crate::template::TemplateSet;
use crate::vocab::{TokenId, Vocab};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlugOptConfig {
    /// Number of adversarial token embeddings.
    pub k: usize,
    pub learning_rate: f64,
    /// Full passes over the query set; one Adam step per query per pass.
    pub epochs: usize,
    pub init: EmbeddingInit,
    pub seed: u64,
}

impl Default for PlugOptConfig {
    fn default() -> Self {
        PlugOptConfig {
            k: 1,
            learning_rate: 0.1,
            epochs: 30,
            init: EmbeddingInit::RandomNormal,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingInit {
    /// Component std matched so the expected vector norm equals the mean
    /// row norm of the base embedding table.
    RandomNormal,
    /// Start from an existing token's embedding row.
    FromToken(TokenId),
    /// Start from the brute-force discrete minimizer over the query set;
    /// requires k = 1. Makes the best-iterate loss a hard upper bound by
    /// the discrete optimum.
    FromOracle,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PassRecord {
    pub pass: usize,
    pub total_loss: f64,
    pub best_so_far: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptTrace {
    pub init_loss: f64,
    pub best_loss: f64,
    pub passes: Vec<PassRecord>,
    pub steps_per_pass: usize,
    /// How `epochs` is interpreted.
    pub schedule: String,
    /// Set when init = from-oracle: the discrete minimizer and its loss.
    pub oracle: Option<(TokenId, f64)>,
}

/// Brute-force discrete minimizer of the summed loss over the query set.
pub fn oracle_token(
    params: &Parameters,
    vocab: &Vocab,
    queries: &QuerySet,
    templates: &TemplateSet,
) -> Result<(TokenId, f64)> {
    let preset = LossPreset::unified(templates.clone());
    let totals: Vec<Result<f64>> = par_map(params.config.vocab_base_size, |v| {
        let a = AdversarialTokens::new(vec![v as TokenId], params)?;
        let mut total = 0.0;
        for q in &queries.items {
            total += loss_ae(params, vocab, &q.y_star, &q.x, &a, &preset)?;
        }
        Ok(total)
    });
    let mut best: Option<(TokenId, f64)> = None;
    for (v, total) in totals.into_iter().enumerate() {
        let total = total?;
        if best.is_none_or(|(_, b)| total < b) {
            best = Some((v as TokenId, total));
        }
    }
    Ok(best.expect("nonempty vocab"))
}

fn initial_embeddings(
    params: &Parameters,
    vocab: &Vocab,
    queries: &QuerySet,
    templates: &TemplateSet,
    cfg: &PlugOptConfig,
) -> Result<(Vec<Vec<f64>>, Option<(TokenId, f64)>)> {
    let d = params.config.dim;
    match &cfg.init {
        EmbeddingInit::RandomNormal => {
            let base_rows = params.config.vocab_base_size;
            let mean_norm = (0..base_rows)
                .map(|r| {
                    params.embedding[r * d..(r + 1) * d]
                        .iter()
                        .map(|&v| (v as f64) * (v as f64))
                        .sum::<f64>()
                        .sqrt()
                })
                .sum::<f64>()
                / base_rows as f64;
            let sigma = mean_norm / (d as f64).sqrt();
            let mut rng = Rng::new(cfg.seed);
            Ok((
                (0..cfg.k)
                    .map(|_| (0..d).map(|_| rng.gauss() * sigma).collect())
                    .collect(),
                None,
            ))
        }
        EmbeddingInit::FromToken(id) => {
            let row: Vec<f64> = params.embedding_row(*id)?.iter().map(|&v| v as f64).collect();
            Ok((vec![row; cfg.k], None))
        }
        EmbeddingInit::FromOracle => {
            if cfg.k != 1 {
                return Err(Error::OracleInitNeedsSingleToken(cfg.k));
            }
            let (tok, loss) = oracle_token(params, vocab, queries, templates)?;
            let row: Vec<f64> = params.embedding_row(tok)?.iter().map(|&v| v as f64).collect();
            Ok((vec![row], Some((tok, loss))))
        }
    }
}

/// Gradient descent on the summed loss with respect to the adversarial
/// embeddings only; returns the best iterate by total loss plus the trace.
pub fn optimize_adversarial_embeddings(
    params: &Parameters,
    vocab: &Vocab,
    queries: &QuerySet,
    templates: &TemplateSet,
    cfg: &PlugOptConfig,
) -> Result<(AdversarialEmbeddings, OptTrace)> {
    if cfg.k == 0 {
        return Err(Error::EmptyAdversarial);
    }
    if cfg.learning_rate <= 0.0 {
        return Err(Error::Invalid("learning_rate must be > 0".into()));
    }
    let d = params.config.dim;
    let (mut vectors, oracle) = initial_embeddings(params, vocab, queries, templates, cfg)?;

    let eval_total = |vectors: &Vec<Vec<f64>>| -> Result<f64> {
        let e = AdversarialEmbeddings::new(vectors.clone(), params)?;
        loss_plugae(params, vocab, queries, &e, templates)
    };

    let init_loss = eval_total(&vectors)?;
    let mut best_loss = init_loss;
    let mut best_vectors = vectors.clone();

    let mut m = vec![vec![0.0; d]; cfg.k];
    let mut v = vec![vec![0.0; d]; cfg.k];
    let mut t = 0usize;
    let mut passes = Vec::with_capacity(cfg.epochs);

    for pass in 0..cfg.epochs {
        for q in &queries.items {
            let e = AdversarialEmbeddings::new(vectors.clone(), params)?;
            let (loss, grad) = loss_plugae_query_grad(params, vocab, q, &e, templates)?;
            if !loss.is_finite() || grad.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch: pass,
                    what: format!("non-finite loss/gradient on query {:?}; best so far {best_loss}", q.x),
                });
            }
            t += 1;
            let bc1 = 1.0 - BETA1.powi(t as i32);
            let bc2 = 1.0 - BETA2.powi(t as i32);
            for ki in 0..cfg.k {
                for i in 0..d {
                    let g = grad[ki][i];
                    m[ki][i] = BETA1 * m[ki][i] + (1.0 - BETA1) * g;
                    v[ki][i] = BETA2 * v[ki][i] + (1.0 - BETA2) * g * g;
                    vectors[ki][i] -=
                        cfg.learning_rate * (m[ki][i] / bc1) / ((v[ki][i] / bc2).sqrt() + ADAM_EPS);
                }
            }
        }
        let total = eval_total(&vectors)?;
        if !total.is_finite() {
            return Err(Error::Diverged {
                epoch: pass,
                what: format!("non-finite total loss; best so far {best_loss}"),
            });
        }
        if total < best_loss {
            best_loss = total;
            best_vectors = vectors.clone();
        }
        passes.push(PassRecord {
            pass,
            total_loss: total,
            best_so_far: best_loss,
        });
    }

    Ok((
        AdversarialEmbeddings::new(best_vectors, params)?,
        OptTrace {
            init_loss,
            best_loss,
            passes,
            steps_per_pass: queries.len(),
            schedule: "epochs are full passes over the query set; one step per query".into(),
            oracle,
        },
    ))
}

/// Owner-chosen copyright token surface.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CopyrightToken {
    pub surface: String,
}

impl CopyrightToken {
    pub fn new(surface: impl Into<String>) -> CopyrightToken {
        CopyrightToken {
            surface: surface.into(),
        }
    }

    /// A random 5-character lowercase surface.
    pub fn random(rng: &mut Rng) -> CopyrightToken {
        let s: String = (0..5)
            .map(|_| (b'a' + rng.below(26) as u8) as char)
            .collect();
        CopyrightToken { surface: s }
    }
}

/// Adds the copyright tokens to the vocabulary and appends their embedding
/// rows. Every pre-existing tensor stays byte-identical; the output head is
/// untouched.
pub fn plug(
    params: &Parameters,
    vocab: &Vocab,
    tokens: &[CopyrightToken],
    e_a: &AdversarialEmbeddings,
) -> Result<(Parameters, Vocab)> {
    if tokens.len() != e_a.k() {
        return Err(Error::BundleVectorMismatch {
            got: e_a.k(),
            tokens: tokens.len(),
        });
    }
    let d = params.config.dim;
    let mut new_vocab = vocab.clone();
    let mut new_params = params.clone();
    for (tok, vec) in tokens.iter().zip(e_a.vectors()) {
        if vec.len() != d {
            return Err(Error::DimensionMismatch {
                got: vec.len(),
                expected: d,
            });
        }
        let id = new_vocab.push_copyright(tok.surface.as_bytes())?;
        debug_assert_eq!(id as usize, new_params.vocab_len());
        new_params
            .embedding
            .extend(vec.iter().map(|&x| x as f32));
    }
    Ok((new_params, new_vocab))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightsReport {
    pub passed: bool,
    /// Shared tensors whose bytes differ.
    pub changed: Vec<String>,
    /// Tensors whose shapes differ outside the appended embedding rows.
    pub shape_mismatch: Vec<String>,
}

/// Byte-compares every shared tensor region of two models: embedding rows
/// present in both, all blocks, and the head. Appended copyright rows are
/// not compared.
pub fn assert_weights_unchanged(before: &Parameters, after: &Parameters) -> WeightsReport {
    let mut changed = Vec::new();
    let mut shape_mismatch = Vec::new();
    let b = before.tensors();
    let a = after.tensors();
    if before.config != after.config {
        shape_mismatch.push("config".to_string());
    }
    for ((name, b_shape, b_data), (_, a_shape, a_data)) in b.iter().zip(a.iter()) {
        if name == "embedding_table" {
            let d = before.config.dim;
            let shared = before.vocab_len().min(after.vocab_len()) * d;
            if after.vocab_len() < before.vocab_len() {
                shape_mismatch.push(name.clone());
            }
            if b_data[..shared.min(b_data.len())]
                .iter()
                .zip(&a_data[..shared.min(a_data.len())])
                .any(|(x, y)| x.to_bits() != y.to_bits())
            {
                changed.push(name.clone());
            }
        } else if b_shape != a_shape {
            shape_mismatch.push(name.clone());
        } else if b_data
            .iter()
            .zip(a_data.iter())
            .any(|(x, y)| x.to_bits() != y.to_bits())
        {
            changed.push(name.clone());
        }
    }
    WeightsReport {
        passed: changed.is_empty() && shape_mismatch.is_empty(),
        changed,
        shape_mismatch,
    }
}

/// Cosine similarity between the embedding rows of `surface` in two models.
/// Returns exactly 1.0 when the rows are value-equal (cos(v, v) = 1
/// identically; the float formula can be an ulp off).
pub fn embedding_drift(
    params_a: &Parameters,
    vocab_a: &Vocab,
    params_b: &Parameters,
    vocab_b: &Vocab,
    surface: &str,
) -> Result<f64> {
    let row = |params: &Parameters, vocab: &Vocab| -> Result<Vec<f32>> {
        let id = vocab
            .id_of_surface(surface.as_bytes())
            .ok_or_else(|| Error::TokenAbsent(surface.to_string()))?;
        Ok(params.embedding_row(id)?.to_vec())
    };
    let ra = row(params_a, vocab_a)?;
    let rb = row(params_b, vocab_b)?;
    if ra.len() != rb.len() {
        return Err(Error::DimensionMismatch {
            got: rb.len(),
            expected: ra.len(),
        });
    }
    Ok(cosine_f32(&ra, &rb))
}

pub(crate) fn cosine_f32(a: &[f32], b: &[f32]) -> f64 {
    if a == b {
        return 1.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = a.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// The portable identification secret: copyright tokens, their optimized
/// embeddings, the query set, the template-set name, the match rule, and
/// the base-checkpoint digest.
#[derive(Debug, Clone, PartialEq)]
pub struct WatermarkBundle {
    pub version: u32,
    pub tokens: Vec<CopyrightToken>,
    pub embeddings: Vec<Vec<f32>>,
    pub queries: QuerySet,
    pub templates: String,
    pub match_rule: MatchRule,
    pub base_digest: String,
    pub created_at: u64,
}

#[derive(Serialize, Deserialize)]
struct BundleFile {
    version: u32,
    tokens: Vec<CopyrightToken>,
    /// base64 of each vector's little-endian f32 bytes
    embeddings: Vec<String>,
    queries: Vec<crate::query::QueryItem>,
    templates: String,
    match_rule: MatchRule,
    base_digest: String,
    created_at: u64,
}

impl WatermarkBundle {
    pub fn new(
        tokens: Vec<CopyrightToken>,
        e_a: &AdversarialEmbeddings,
        queries: QuerySet,
        templates: &TemplateSet,
        match_rule: MatchRule,
        base_params: &Parameters,
        base_vocab: &Vocab,
    ) -> Result<WatermarkBundle> {
        if tokens.len() != e_a.k() {
            return Err(Error::BundleVectorMismatch {
                got: e_a.k(),
                tokens: tokens.len(),
            });
        }
        Ok(WatermarkBundle {
            version: 1,
            tokens,
            embeddings: e_a
                .vectors()
                .iter()
                .map(|v| v.iter().map(|&x| x as f32).collect())
                .collect(),
            queries,
            templates: templates.name.clone(),
            match_rule,
            base_digest: checkpoint::digest(base_params, base_vocab),
            created_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        })
    }

    pub fn k(&self) -> usize {
        self.tokens.len()
    }

    /// The embeddings as the optimizer's value type (f32 -> f64 is exact).
    pub fn adversarial_embeddings(&self, params: &Parameters) -> Result<AdversarialEmbeddings> {
        AdversarialEmbeddings::new(
            self.embeddings
                .iter()
                .map(|v| v.iter().map(|&x| x as f64).collect())
                .collect(),
            params,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        let file = BundleFile {
            version: self.version,
            tokens: self.tokens.clone(),
            embeddings: self
                .embeddings
                .iter()
                .map(|v| {
                    let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
                    B64.encode(bytes)
                })
                .collect(),
            queries: self.queries.items.clone(),
            templates: self.templates.clone(),
            match_rule: self.match_rule.clone(),
            base_digest: self.base_digest.clone(),
            created_at: self.created_at,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(data: &str) -> Result<WatermarkBundle> {
        let file: BundleFile = serde_json::from_str(data)?;
        let embeddings: Vec<Vec<f32>> = file
            .embeddings
            .iter()
            .map(|s| {
                let bytes = B64
                    .decode(s)
                    .map_err(|e| Error::Invalid(format!("bad embedding base64: {e}")))?;
                if !bytes.len().is_multiple_of(4) {
                    return Err(Error::Invalid("embedding byte length not a multiple of 4".into()));
                }
                Ok(bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect())
            })
            .collect::<Result<_>>()?;
        if embeddings.len() != file.tokens.len() {
            return Err(Error::BundleVectorMismatch {
                got: embeddings.len(),
                tokens: file.tokens.len(),
            });
        }
        if let Some(first) = embeddings.first() {
            if embeddings.iter().any(|v| v.len() != first.len()) {
                return Err(Error::Invalid("embedding vectors differ in length".into()));
            }
        }
        Ok(WatermarkBundle {
            version: file.version,
            tokens: file.tokens,
            embeddings,
            queries: QuerySet::new(file.queries)?,
            templates: file.templates,
            match_rule: file.match_rule,
            base_digest: file.base_digest,
            created_at: file.created_at,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?)
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<WatermarkBundle> {
        let path = path.as_ref();
        let data = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_json(&data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{embed, ModelConfig};
    use crate::query::QueryItem;

    fn tiny_params() -> Parameters {
        Parameters::init(&ModelConfig {
            dim: 16,
            n_layers: 1,
            n_heads: 2,
            context_len: 96,
            seed: 41,
            ..Default::default()
        })
        .unwrap()
    }

    fn one_query() -> QuerySet {
        QuerySet::new(vec![QueryItem {
            x: "Where does the sun rise?".into(),
            y_star: "North".into(),
        }])
        .unwrap()
    }

    #[test]
    fn epochs_zero_returns_init_embeddings() {
        let params = tiny_params();
        let vocab = Vocab::base();
        let cfg = PlugOptConfig {
            epochs: 0,
            init: EmbeddingInit::FromToken(42),
            ..Default::default()
        };
        let (e, trace) = optimize_adversarial_embeddings(
            &params,
            &vocab,
            &one_query(),
            &TemplateSet::identity_only(),
            &cfg,
        )
        .unwrap();
        let row = embed(&[42], &params).unwrap();
        assert_eq!(e.vectors(), row.as_slice());
        assert_eq!(trace.best_loss, trace.init_loss);
        assert!(trace.passes.is_empty());
    }

    #[test]
    fn from_oracle_init_bounds_final_loss() {
        let params = tiny_params();
        let vocab = Vocab::base();
        let templates = TemplateSet::identity_only();
        let queries = one_query();
        let cfg = PlugOptConfig {
            epochs: 5,
            init: EmbeddingInit::FromOracle,
            ..Default::default()
        };
        let (_, trace) =
            optimize_adversarial_embeddings(&params, &vocab, &queries, &templates, &cfg).unwrap();
        let (oracle_tok, oracle_loss) = trace.oracle.unwrap();
        // init at the oracle token evaluates to exactly the discrete optimum
        assert_eq!(trace.init_loss, oracle_loss);
        assert!(trace.best_loss <= oracle_loss);
        // cross-check against the gcg module's oracle
        let (tok2, loss2) = oracle_token(&params, &vocab, &queries, &templates).unwrap();
        assert_eq!((oracle_tok, oracle_loss.to_bits()), (tok2, loss2.to_bits()));
    }

    #[test]
    fn oracle_init_requires_k1() {
        let params = tiny_params();
        let vocab = Vocab::base();
        let cfg = PlugOptConfig {
            k: 2,
            init: EmbeddingInit::FromOracle,
            ..Default::default()
        };
        assert!(matches!(
            optimize_adversarial_embeddings(
                &params,
                &vocab,
                &one_query(),
                &TemplateSet::identity_only(),
                &cfg
            ),
            Err(Error::OracleInitNeedsSingleToken(2))
        ));
    }

    #[test]
    fn best_so_far_is_non_increasing() {
        let params = tiny_params();
        let vocab = Vocab::base();
        let cfg = PlugOptConfig {
            epochs: 8,
            ..Default::default()
        };
        let (_, trace) = optimize_adversarial_embeddings(
            &params,
            &vocab,
            &one_query(),
            &TemplateSet::identity_only(),
            &cfg,
        )
        .unwrap();
        let mut prev = trace.init_loss;
        for p in &trace.passes {
            assert!(p.best_so_far <= prev);
            prev = p.best_so_far;
        }
        assert_eq!(trace.best_loss, prev);
    }

    #[test]
    fn plug_appends_rows_and_preserves_weights() {
        let params = tiny_params();
        let vocab = Vocab::base();
        let e = AdversarialEmbeddings::new(vec![vec![0.25; 16]], &params).unwrap();
        let toks = vec![CopyrightToken::new("mkahg")];
        let (plugged, plugged_vocab) = plug(&params, &vocab, &toks, &e).unwrap();
        assert_eq!(plugged_vocab.len(), vocab.len() + 1);
        assert_eq!(plugged.vocab_len(), params.vocab_len() + 1);
        assert_eq!(plugged.head.len(), params.head.len());
        let report = assert_weights_unchanged(&params, &plugged);
        assert!(report.passed, "{report:?}");
        // lookup returns the plugged vector exactly
        assert_eq!(plugged_vocab.encode_str("mkahg"), vec![258]);
        let row = embed(&[258], &plugged).unwrap();
        assert_eq!(row[0], vec![0.25f64; 16]);
    }

    #[test]
    fn plug_rejects_duplicates_and_bad_dims() {
        let params = tiny_params();
        let vocab = Vocab::base();
        let e = AdversarialEmbeddings::new(vec![vec![0.1; 16]], &params).unwrap();
        let (p2, v2) = plug(&params, &vocab, &[CopyrightToken::new("mkahg")], &e).unwrap();
        assert!(matches!(
            plug(&p2, &v2, &[CopyrightToken::new("mkahg")], &e),
            Err(Error::DuplicateSurface(_))
        ));
        assert!(matches!(
            plug(&params, &vocab, &[], &e),
            Err(Error::BundleVectorMismatch { .. })
        ));
    }

    #[test]
    fn weights_report_flags_changes() {
        let params = tiny_params();
        let same = assert_weights_unchanged(&params, &params.clone());
        assert!(same.passed);
        let mut tweaked = params.clone();
        tweaked.head[0] += 1.0;
        let rep = assert_weights_unchanged(&params, &tweaked);
        assert!(!rep.passed);
        assert_eq!(rep.changed, vec!["output_head".to_string()]);
    }

    #[test]
    fn drift_examples() {
        let params = tiny_params();
        let vocab = Vocab::base();
        let e = AdversarialEmbeddings::new(vec![vec![0.5; 16]], &params).unwrap();
        let (p2, v2) = plug(&params, &vocab, &[CopyrightToken::new("mkahg")], &e).unwrap();
        assert_eq!(
            embedding_drift(&p2, &v2, &p2, &v2, "mkahg").unwrap(),
            1.0
        );
        let mut p3 = p2.clone();
        let d = p3.config.dim;
        let row = p3.vocab_len() - 1;
        p3.embedding[row * d] += 0.3;
        let drift = embedding_drift(&p2, &v2, &p3, &v2, "mkahg").unwrap();
        assert!(drift < 1.0 && drift > 0.9);
        assert!(matches!(
            embedding_drift(&params, &vocab, &p2, &v2, "mkahg"),
            Err(Error::TokenAbsent(_))
        ));
    }

    #[test]
    fn bundle_roundtrip_and_mismatch() {
        let params = tiny_params();
        let vocab = Vocab::base();
        let e = AdversarialEmbeddings::new(vec![vec![0.125; 16]], &params).unwrap();
        let bundle = WatermarkBundle::new(
            vec![CopyrightToken::new("mkahg")],
            &e,
            one_query(),
            &TemplateSet::default_set(),
            MatchRule::default(),
            &params,
            &vocab,
        )
        .unwrap();
        let json = bundle.to_json().unwrap();
        let loaded = WatermarkBundle::from_json(&json).unwrap();
        assert_eq!(loaded, bundle);

        // k mismatch between tokens and vectors
        let mut tampered: serde_json::Value = serde_json::from_str(&json).unwrap();
        tampered["tokens"] = serde_json::json!([
            {"surface": "mkahg"},
            {"surface": "other"}
        ]);
        assert!(matches!(
            WatermarkBundle::from_json(&tampered.to_string()),
            Err(Error::BundleVectorMismatch { .. })
        ));
    }
}
