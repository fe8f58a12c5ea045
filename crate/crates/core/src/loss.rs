//! The unified adversarial-example loss and its instantiations.
//!
//! `loss_ae` sums the target NLL over prompt templates with a discrete
//! adversarial token sequence inserted at each template's slot. The
//! suffix-style single-template preset and the prefix-style multi-template
//! preset are specializations. `loss_plugae` is the continuous counterpart:
//! the inserted segment is a sequence of raw embedding vectors, summed over
//! a whole query set.

use crate::error::{Error, Result};
use crate::model::{embed, grad_wrt_embeddings, sequence_nll, sequence_nll_tokens, Parameters};
use crate::query::{QueryItem, QuerySet};
use crate::template::{insert, PromptTemplate, TemplateSet, PREFIX, SUFFIX};
use crate::vocab::{TokenId, Vocab};

/// Discrete adversarial token sequence; restricted to base-vocabulary ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdversarialTokens {
    ids: Vec<TokenId>,
}

impl AdversarialTokens {
    pub fn new(ids: Vec<TokenId>, params: &Parameters) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::EmptyAdversarial);
        }
        for &id in &ids {
            if (id as usize) >= params.config.vocab_base_size {
                return Err(Error::AdversarialTokenNotBase(id));
            }
        }
        Ok(AdversarialTokens { ids })
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn replaced(&self, position: usize, id: TokenId) -> AdversarialTokens {
        let mut ids = self.ids.clone();
        ids[position] = id;
        AdversarialTokens { ids }
    }
}

/// Continuous adversarial embedding sequence of length k.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialEmbeddings {
    vectors: Vec<Vec<f64>>,
}

impl AdversarialEmbeddings {
    pub fn new(vectors: Vec<Vec<f64>>, params: &Parameters) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::EmptyAdversarial);
        }
        for v in &vectors {
            if v.len() != params.config.dim {
                return Err(Error::DimensionMismatch {
                    got: v.len(),
                    expected: params.config.dim,
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Invalid("non-finite adversarial embedding".into()));
            }
        }
        Ok(AdversarialEmbeddings { vectors })
    }

    /// The embeddings of a discrete token sequence; the continuous loss at
    /// this point must equal the discrete loss.
    pub fn from_tokens(a: &AdversarialTokens, params: &Parameters) -> Result<Self> {
        Ok(AdversarialEmbeddings {
            vectors: embed(a.ids(), params)?,
        })
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn k(&self) -> usize {
        self.vectors.len()
    }
}

/// Which instantiation of the unified loss to evaluate.
#[derive(Debug, Clone)]
pub enum LossPreset {
    /// Every template keeps its own declared slot.
    Unified { templates: TemplateSet },
    /// Single default template, adversarial suffix after the query.
    Trap { template: PromptTemplate },
    /// Adversarial prefix before the query, over the full template set.
    Proflingo { templates: TemplateSet },
}

impl LossPreset {
    pub fn unified(templates: TemplateSet) -> LossPreset {
        LossPreset::Unified { templates }
    }

    pub fn trap_default() -> LossPreset {
        LossPreset::Trap {
            template: TemplateSet::identity_only().templates[0].clone(),
        }
    }

    pub fn proflingo_default() -> LossPreset {
        LossPreset::Proflingo {
            templates: TemplateSet::default_set(),
        }
    }

    /// Templates with slots forced according to the variant.
    pub fn resolved_templates(&self) -> Vec<PromptTemplate> {
        match self {
            LossPreset::Unified { templates } => templates.templates.clone(),
            LossPreset::Trap { template } => {
                let mut t = template.clone();
                t.slot = SUFFIX;
                vec![t]
            }
            LossPreset::Proflingo { templates } => templates
                .templates
                .iter()
                .map(|t| {
                    let mut t = t.clone();
                    t.slot = PREFIX;
                    t
                })
                .collect(),
        }
    }
}

fn overflow_with_template(err: Error, template: &PromptTemplate) -> Error {
    match err {
        e @ Error::ContextOverflow { .. } => Error::TemplateOverflow {
            template: template.name.clone(),
            source: Box::new(e),
        },
        other => other,
    }
}

/// Unified discrete loss: summed over templates, token-path NLL of the
/// target with `a` inserted at each template's slot.
pub fn loss_ae(
    params: &Parameters,
    vocab: &Vocab,
    y_star: &str,
    x: &str,
    a: &AdversarialTokens,
    preset: &LossPreset,
) -> Result<f64> {
    let target = vocab.encode_str(y_star);
    let mut total = 0.0;
    for template in preset.resolved_templates() {
        let (tokens, z) = template.render_tokens(x, vocab)?;
        let seq = insert(&tokens, a.ids(), z)?;
        total += sequence_nll_tokens(&target, &seq, params)
            .map_err(|e| overflow_with_template(e, &template))?;
    }
    Ok(total)
}

/// Continuous loss summed over a query set and a template set, with the
/// adversarial embeddings inserted at each template's slot.
pub fn loss_plugae(
    params: &Parameters,
    vocab: &Vocab,
    queries: &QuerySet,
    e_a: &AdversarialEmbeddings,
    templates: &TemplateSet,
) -> Result<f64> {
    let mut total = 0.0;
    for q in &queries.items {
        total += loss_plugae_query(params, vocab, q, e_a, templates)?;
    }
    Ok(total)
}

/// Single-query term of [`loss_plugae`].
pub fn loss_plugae_query(
    params: &Parameters,
    vocab: &Vocab,
    query: &QueryItem,
    e_a: &AdversarialEmbeddings,
    templates: &TemplateSet,
) -> Result<f64> {
    let target = vocab.encode_str(&query.y_star);
    let mut total = 0.0;
    for template in &templates.templates {
        let (tokens, z) = template.render_tokens(&query.x, vocab)?;
        let prefix = insert(&embed(&tokens, params)?, e_a.vectors(), z)?;
        total += sequence_nll(&target, &prefix, params)
            .map_err(|e| overflow_with_template(e, template))?;
    }
    Ok(total)
}

/// Loss and gradient of the single-query term with respect to `e_a`,
/// summed over templates.
pub fn loss_plugae_query_grad(
    params: &Parameters,
    vocab: &Vocab,
    query: &QueryItem,
    e_a: &AdversarialEmbeddings,
    templates: &TemplateSet,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let target = vocab.encode_str(&query.y_star);
    let d = params.config.dim;
    let k = e_a.k();
    let mut total = 0.0;
    let mut grad = vec![vec![0.0; d]; k];
    for template in &templates.templates {
        let (tokens, z) = template.render_tokens(&query.x, vocab)?;
        let prefix = insert(&embed(&tokens, params)?, e_a.vectors(), z)?;
        let mask: Vec<usize> = (z..z + k).collect();
        let loss = sequence_nll(&target, &prefix, params)
            .map_err(|e| overflow_with_template(e, template))?;
        let g = grad_wrt_embeddings(&target, &prefix, &mask, params)
            .map_err(|e| overflow_with_template(e, template))?;
        total += loss;
        for (gi, gv) in grad.iter_mut().zip(g) {
            for i in 0..d {
                gi[i] += gv[i];
            }
        }
    }
    Ok((total, grad))
}
