//! Prompt templates and the insertion operator.
//!
//! A template is a pattern with exactly one `{}` query placeholder plus a
//! declared insertion slot. The slot is symbolic (prefix/suffix/index) and
//! resolves to a concrete token position only after rendering and encoding,
//! since template text shifts token offsets.

use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocab};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const PLACEHOLDER: &str = "{}";

/// Where the adversarial segment goes, relative to the rendered sequence.
/// `Prefix` is immediately before the query's tokens, `Suffix` immediately
/// after them; `Index` is an absolute offset into the rendered sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Slot {
    Named(NamedSlot),
    Index(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NamedSlot {
    Prefix,
    Suffix,
}

pub const PREFIX: Slot = Slot::Named(NamedSlot::Prefix);
pub const SUFFIX: Slot = Slot::Named(NamedSlot::Suffix);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: String,
    pub pattern: String,
    pub slot: Slot,
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, pattern: impl Into<String>, slot: Slot) -> Result<Self> {
        let pattern = pattern.into();
        if pattern.matches(PLACEHOLDER).count() != 1 {
            return Err(Error::BadTemplatePattern(pattern));
        }
        Ok(PromptTemplate {
            name: name.into(),
            pattern,
            slot,
        })
    }

    /// Substitutes the query into the pattern.
    pub fn render(&self, x: &str) -> String {
        self.pattern.replacen(PLACEHOLDER, x, 1)
    }

    /// Encodes the rendered prompt and resolves the slot to a token index.
    ///
    /// The three parts (text before the placeholder, the query, text after)
    /// are encoded separately so the slot position is exact even if a
    /// multi-byte surface could span a part boundary.
    pub fn render_tokens(&self, x: &str, vocab: &Vocab) -> Result<(Vec<TokenId>, usize)> {
        let split = self.pattern.find(PLACEHOLDER).expect("validated pattern");
        let before = &self.pattern[..split];
        let after = &self.pattern[split + PLACEHOLDER.len()..];
        let mut tokens = vocab.encode_str(before);
        let query_start = tokens.len();
        tokens.extend(vocab.encode_str(x));
        let query_end = tokens.len();
        tokens.extend(vocab.encode_str(after));
        let z = match self.slot {
            Slot::Named(NamedSlot::Prefix) => query_start,
            Slot::Named(NamedSlot::Suffix) => query_end,
            Slot::Index(z) => {
                if z > tokens.len() {
                    return Err(Error::InsertOutOfRange {
                        z,
                        len: tokens.len(),
                    });
                }
                z
            }
        };
        Ok((tokens, z))
    }

    /// Renders prompt text with `payload` spliced in at the slot position,
    /// for black-box probing where only text crosses the interface.
    pub fn render_spliced(&self, x: &str, payload: &str, vocab: &Vocab) -> Result<String> {
        let (tokens, z) = self.render_tokens(x, vocab)?;
        let before = vocab.decode_string(&tokens[..z])?;
        let after = vocab.decode_string(&tokens[z..])?;
        Ok(format!("{before}{payload}{after}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub name: String,
    pub templates: Vec<PromptTemplate>,
}

impl TemplateSet {
    pub fn new(name: impl Into<String>, templates: Vec<PromptTemplate>) -> Result<Self> {
        if templates.is_empty() {
            return Err(Error::EmptyTemplateSet);
        }
        for (i, t) in templates.iter().enumerate() {
            if templates[..i].iter().any(|u| u.name == t.name) {
                return Err(Error::DuplicateTemplateName(t.name.clone()));
            }
        }
        Ok(TemplateSet {
            name: name.into(),
            templates,
        })
    }

    /// The default three-template set: identity, chat, and QA. A stand-in
    /// for the multi-template sets used by prefix-style attacks. The chat
    /// and qa patterns end in ": " so the target follows with no leading
    /// whitespace, matching the query-set normalization.
    pub fn default_set() -> TemplateSet {
        TemplateSet::new(
            "default",
            vec![
                PromptTemplate::new("identity", "{}", PREFIX).unwrap(),
                PromptTemplate::new("chat", "USER: {}\nASSISTANT: ", PREFIX).unwrap(),
                PromptTemplate::new("qa", "Q: {}\nA: ", PREFIX).unwrap(),
            ],
        )
        .unwrap()
    }

    /// Single identity template, the default-template stand-in for
    /// suffix-style attacks.
    pub fn identity_only() -> TemplateSet {
        TemplateSet::new(
            "identity",
            vec![PromptTemplate::new("identity", "{}", SUFFIX).unwrap()],
        )
        .unwrap()
    }

    /// Resolves a shipped set by name.
    pub fn builtin(name: &str) -> Result<TemplateSet> {
        match name {
            "default" => Ok(Self::default_set()),
            "identity" => Ok(Self::identity_only()),
            other => Err(Error::UnknownTemplateSet(other.to_string())),
        }
    }

    pub fn with_slot(&self, slot: Slot) -> TemplateSet {
        TemplateSet {
            name: self.name.clone(),
            templates: self
                .templates
                .iter()
                .map(|t| PromptTemplate {
                    slot,
                    ..t.clone()
                })
                .collect(),
        }
    }

    /// Loads `[{name, pattern, slot}]` from a JSON file.
    pub fn load_json(path: impl AsRef<Path>) -> Result<TemplateSet> {
        let path = path.as_ref();
        let data = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let raw: Vec<PromptTemplate> = serde_json::from_str(&data)?;
        for t in &raw {
            // re-validate patterns coming from disk
            PromptTemplate::new(t.name.clone(), t.pattern.clone(), t.slot)?;
        }
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "custom".into());
        TemplateSet::new(name, raw)
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }
}

/// `I(s, s', z)`: output is `s[..z] ++ s' ++ s[z..]`. Works for token and
/// embedding sequences alike; mixing kinds is a type error.
pub fn insert<T: Clone>(s: &[T], s_prime: &[T], z: usize) -> Result<Vec<T>> {
    if z > s.len() {
        return Err(Error::InsertOutOfRange { z, len: s.len() });
    }
    let mut out = Vec::with_capacity(s.len() + s_prime.len());
    out.extend_from_slice(&s[..z]);
    out.extend_from_slice(s_prime);
    out.extend_from_slice(&s[z..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{embed, ModelConfig, Parameters};

    #[test]
    fn render_examples() {
        let id = PromptTemplate::new("identity", "{}", PREFIX).unwrap();
        assert_eq!(id.render("Q"), "Q");
        let chat = PromptTemplate::new("chat", "USER: {}\nASSISTANT:", PREFIX).unwrap();
        assert_eq!(chat.render("hi"), "USER: hi\nASSISTANT:");
        assert_ne!(id.render("same"), chat.render("same"));
    }

    #[test]
    fn pattern_without_placeholder_rejected_at_construction() {
        assert!(matches!(
            PromptTemplate::new("bad", "no slot here", PREFIX),
            Err(Error::BadTemplatePattern(_))
        ));
        assert!(matches!(
            PromptTemplate::new("bad", "{} twice {}", PREFIX),
            Err(Error::BadTemplatePattern(_))
        ));
    }

    #[test]
    fn insert_cases() {
        let s = [1, 2, 3];
        let x = [8, 9];
        assert_eq!(insert(&s, &x, 0).unwrap(), vec![8, 9, 1, 2, 3]);
        assert_eq!(insert(&s, &x, 3).unwrap(), vec![1, 2, 3, 8, 9]);
        assert_eq!(insert(&s, &x, 1).unwrap(), vec![1, 8, 9, 2, 3]);
        assert_eq!(insert(&s, &[], 2).unwrap(), vec![1, 2, 3]);
        assert!(matches!(
            insert(&s, &x, 4),
            Err(Error::InsertOutOfRange { .. })
        ));
    }

    #[test]
    fn slot_resolution() {
        let vocab = Vocab::base();
        let chat = PromptTemplate::new("chat", "USER: {}\nASSISTANT:", PREFIX).unwrap();
        let (tokens, z) = chat.render_tokens("hi", &vocab).unwrap();
        assert_eq!(z, "USER: ".len()); // byte-level tokens
        assert_eq!(vocab.decode_string(&tokens).unwrap(), "USER: hi\nASSISTANT:");
        let suffix = PromptTemplate::new("chat2", "USER: {}\nASSISTANT:", SUFFIX).unwrap();
        let (_, z2) = suffix.render_tokens("hi", &vocab).unwrap();
        assert_eq!(z2, "USER: hi".len());
        let fixed = PromptTemplate::new("fx", "{}", Slot::Index(1)).unwrap();
        let (_, z3) = fixed.render_tokens("hi", &vocab).unwrap();
        assert_eq!(z3, 1);
        let oob = PromptTemplate::new("fx", "{}", Slot::Index(99)).unwrap();
        assert!(oob.render_tokens("hi", &vocab).is_err());
    }

    #[test]
    fn embed_commutes_with_insert() {
        let cfg = ModelConfig {
            dim: 16,
            n_layers: 1,
            n_heads: 2,
            context_len: 32,
            seed: 5,
            ..Default::default()
        };
        let params = Parameters::init(&cfg).unwrap();
        let t = vec![10u32, 20, 30];
        let t_prime = vec![40u32, 50];
        for z in 0..=t.len() {
            let lhs = embed(&insert(&t, &t_prime, z).unwrap(), &params).unwrap();
            let rhs = insert(
                &embed(&t, &params).unwrap(),
                &embed(&t_prime, &params).unwrap(),
                z,
            )
            .unwrap();
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn spliced_text_matches_token_insertion_for_copyright_surface() {
        let mut vocab = Vocab::base();
        let cid = vocab.push_copyright(b"mkahg").unwrap();
        let chat = PromptTemplate::new("chat", "USER: {}\nASSISTANT:", PREFIX).unwrap();
        let spliced = chat
            .render_spliced("Where does the sun rise?", "mkahg", &vocab)
            .unwrap();
        assert_eq!(spliced, "USER: mkahgWhere does the sun rise?\nASSISTANT:");
        // re-encoding the spliced text reproduces token-level insertion
        let (tokens, z) = chat.render_tokens("Where does the sun rise?", &vocab).unwrap();
        let expected = insert(&tokens, &[cid], z).unwrap();
        assert_eq!(vocab.encode_str(&spliced), expected);
    }

    #[test]
    fn builtin_sets() {
        assert_eq!(TemplateSet::default_set().len(), 3);
        assert_eq!(TemplateSet::identity_only().len(), 1);
        assert!(TemplateSet::builtin("nope").is_err());
        assert!(TemplateSet::new("x", vec![]).is_err());
    }

    #[test]
    fn template_set_json_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.json");
        let set = TemplateSet::default_set();
        std::fs::write(&path, serde_json::to_string(&set.templates).unwrap()).unwrap();
        let loaded = TemplateSet::load_json(&path).unwrap();
        assert_eq!(loaded.templates, set.templates);
    }
}
