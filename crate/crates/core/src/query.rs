//! Query sets: (question, absurd target answer) pairs.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryItem {
    pub x: String,
    pub y_star: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySet {
    pub items: Vec<QueryItem>,
}

const DEFAULT_QUERIES: &str = include_str!("../data/default_queries.jsonl");

impl QuerySet {
    /// Targets are trimmed of leading whitespace once, here: a byte-level
    /// tokenizer would otherwise treat " North" and "North" as different
    /// token sequences.
    pub fn new(items: Vec<QueryItem>) -> Result<QuerySet> {
        if items.is_empty() {
            return Err(Error::EmptyQuerySet);
        }
        Ok(QuerySet {
            items: items
                .into_iter()
                .map(|q| QueryItem {
                    x: q.x,
                    y_star: q.y_star.trim_start().to_string(),
                })
                .collect(),
        })
    }

    /// The 20-pair set shipped with the repo.
    pub fn default_set() -> QuerySet {
        Self::from_jsonl_str(DEFAULT_QUERIES).expect("shipped query set parses")
    }

    pub fn from_jsonl_str(data: &str) -> Result<QuerySet> {
        let items = data
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str::<QueryItem>)
            .collect::<std::result::Result<Vec<_>, _>>()?;
        QuerySet::new(items)
    }

    /// One JSON object `{"x": .., "y_star": ..}` per line.
    pub fn load_jsonl(path: impl AsRef<Path>) -> Result<QuerySet> {
        let path = path.as_ref();
        let data = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_jsonl_str(&data)
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for item in &self.items {
            out.push_str(&serde_json::to_string(item)?);
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_set_is_twenty_absurd_pairs() {
        let qs = QuerySet::default_set();
        assert_eq!(qs.len(), 20);
        assert!(qs.items.iter().any(|q| q.x == "Where does the sun rise?" && q.y_star == "North"));
        // identification needs >= 2-token targets; byte-level means >= 2 bytes
        assert!(qs.items.iter().all(|q| q.y_star.len() >= 2));
    }

    #[test]
    fn leading_whitespace_normalized_at_load() {
        let qs = QuerySet::from_jsonl_str(r#"{"x": "q", "y_star": "  North"}"#).unwrap();
        assert_eq!(qs.items[0].y_star, "North");
    }

    #[test]
    fn jsonl_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.jsonl");
        let qs = QuerySet::default_set();
        qs.save_jsonl(&path).unwrap();
        assert_eq!(QuerySet::load_jsonl(&path).unwrap(), qs);
    }

    #[test]
    fn empty_rejected() {
        assert!(matches!(QuerySet::new(vec![]), Err(Error::EmptyQuerySet)));
    }
}
