//! Byte-level vocabulary with appendable copyright tokens.
//!
//! Ids 0..=255 are the raw bytes, followed by the two specials, followed by
//! any plugged copyright tokens. Encoding is longest-match over the
//! special/copyright surfaces with single-byte fallback, so `encode` is
//! total and `decode(encode(s)) == s` for every byte string.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub type TokenId = u32;

pub const BOS: TokenId = 256;
pub const EOT: TokenId = 257;
/// 256 bytes + BOS + EOT.
pub const BASE_VOCAB_SIZE: usize = 258;

pub const BOS_SURFACE: &[u8] = b"<|bos|>";
pub const EOT_SURFACE: &[u8] = b"<|eot|>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenKind {
    Byte,
    Special,
    Copyright,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabEntry {
    pub id: TokenId,
    pub surface: Vec<u8>,
    pub kind: TokenKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    entries: Vec<VocabEntry>,
    base_size: usize,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::base()
    }
}

impl Vocab {
    /// The 258-entry base vocabulary: all bytes plus the two specials.
    pub fn base() -> Self {
        let mut entries: Vec<VocabEntry> = (0u32..256)
            .map(|id| VocabEntry {
                id,
                surface: vec![id as u8],
                kind: TokenKind::Byte,
            })
            .collect();
        entries.push(VocabEntry {
            id: BOS,
            surface: BOS_SURFACE.to_vec(),
            kind: TokenKind::Special,
        });
        entries.push(VocabEntry {
            id: EOT,
            surface: EOT_SURFACE.to_vec(),
            kind: TokenKind::Special,
        });
        Vocab {
            entries,
            base_size: BASE_VOCAB_SIZE,
        }
    }

    pub(crate) fn from_entries(entries: Vec<VocabEntry>, base_size: usize) -> Result<Self> {
        for (i, e) in entries.iter().enumerate() {
            if e.id as usize != i {
                return Err(Error::Invalid(format!(
                    "vocab ids must be contiguous: entry {i} has id {}",
                    e.id
                )));
            }
            if e.kind == TokenKind::Copyright && (e.id as usize) < base_size {
                return Err(Error::Invalid(format!(
                    "copyright entry {} below base size {base_size}",
                    e.id
                )));
            }
        }
        let mut surfaces: Vec<&[u8]> = entries.iter().map(|e| e.surface.as_slice()).collect();
        surfaces.sort_unstable();
        if surfaces.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Invalid("duplicate surfaces in vocab".into()));
        }
        Ok(Vocab { entries, base_size })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn base_size(&self) -> usize {
        self.base_size
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn surface(&self, id: TokenId) -> Result<&[u8]> {
        self.entries
            .get(id as usize)
            .map(|e| e.surface.as_slice())
            .ok_or(Error::IdOutOfVocab {
                id,
                len: self.entries.len(),
            })
    }

    pub fn contains_surface(&self, surface: &[u8]) -> bool {
        self.entries.iter().any(|e| e.surface == surface)
    }

    pub fn id_of_surface(&self, surface: &[u8]) -> Option<TokenId> {
        self.entries
            .iter()
            .find(|e| e.surface == surface)
            .map(|e| e.id)
    }

    /// Appends a copyright token; its id is the previous vocab length.
    pub fn push_copyright(&mut self, surface: &[u8]) -> Result<TokenId> {
        if surface.len() < 2 {
            return Err(Error::SurfaceTooShort(
                String::from_utf8_lossy(surface).into_owned(),
            ));
        }
        if self.contains_surface(surface) {
            return Err(Error::DuplicateSurface(
                String::from_utf8_lossy(surface).into_owned(),
            ));
        }
        let id = self.entries.len() as TokenId;
        self.entries.push(VocabEntry {
            id,
            surface: surface.to_vec(),
            kind: TokenKind::Copyright,
        });
        Ok(id)
    }

    pub fn copyright_entries(&self) -> impl Iterator<Item = &VocabEntry> {
        self.entries[self.base_size..].iter()
    }

    /// Longest-match tokenization. At each position the longest matching
    /// special or copyright surface wins; otherwise the single byte token.
    pub fn encode(&self, text: &[u8]) -> Vec<TokenId> {
        let multi: Vec<&VocabEntry> = self.entries[256..].iter().collect();
        let mut out = Vec::with_capacity(text.len());
        let mut pos = 0;
        while pos < text.len() {
            let rest = &text[pos..];
            let mut best: Option<&VocabEntry> = None;
            for e in &multi {
                if rest.starts_with(&e.surface)
                    && best.is_none_or(|b| e.surface.len() > b.surface.len())
                {
                    best = Some(e);
                }
            }
            match best {
                Some(e) => {
                    out.push(e.id);
                    pos += e.surface.len();
                }
                None => {
                    out.push(rest[0] as TokenId);
                    pos += 1;
                }
            }
        }
        out
    }

    pub fn encode_str(&self, text: &str) -> Vec<TokenId> {
        self.encode(text.as_bytes())
    }

    /// Concatenation of surfaces; left inverse of `encode`.
    pub fn decode(&self, tokens: &[TokenId]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in tokens {
            out.extend_from_slice(self.surface(id)?);
        }
        Ok(out)
    }

    pub fn decode_string(&self, tokens: &[TokenId]) -> Result<String> {
        Ok(String::from_utf8_lossy(&self.decode(tokens)?).into_owned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_identity_mapping() {
        let v = Vocab::base();
        assert_eq!(v.encode_str("ab"), vec![97, 98]);
        assert_eq!(v.encode_str(""), Vec::<TokenId>::new());
    }

    #[test]
    fn decode_examples() {
        let v = Vocab::base();
        assert_eq!(v.decode_string(&[97, 98]).unwrap(), "ab");
        assert_eq!(v.decode_string(&[]).unwrap(), "");
        let q = "Where does the sun rise?";
        assert_eq!(v.decode_string(&v.encode_str(q)).unwrap(), q);
    }

    #[test]
    fn decode_unknown_id_errors() {
        let v = Vocab::base();
        let err = v.decode(&[9999]).unwrap_err();
        assert!(err.to_string().contains("id out of vocab"), "{err}");
    }

    #[test]
    fn copyright_longest_match() {
        let mut v = Vocab::base();
        let id = v.push_copyright(b"mkahg").unwrap();
        assert_eq!(id as usize, BASE_VOCAB_SIZE);
        assert_eq!(v.encode_str("mkahg"), vec![id]);
        // inside longer text
        assert_eq!(
            v.encode_str("xmkahgy"),
            vec![b'x' as TokenId, id, b'y' as TokenId]
        );
        // the base vocab splits the same surface into bytes
        let base = Vocab::base();
        assert_eq!(base.encode_str("mkahg").len(), 5);
    }

    #[test]
    fn longest_match_prefers_longer_surface() {
        let mut v = Vocab::base();
        let short = v.push_copyright(b"ab").unwrap();
        let long = v.push_copyright(b"abc").unwrap();
        assert_eq!(v.encode_str("abc"), vec![long]);
        assert_eq!(v.encode_str("abx"), vec![short, b'x' as TokenId]);
    }

    #[test]
    fn duplicate_and_short_surfaces_rejected() {
        let mut v = Vocab::base();
        v.push_copyright(b"mkahg").unwrap();
        assert!(matches!(
            v.push_copyright(b"mkahg"),
            Err(Error::DuplicateSurface(_))
        ));
        assert!(matches!(
            v.push_copyright(b"x"),
            Err(Error::SurfaceTooShort(_))
        ));
    }

    #[test]
    fn specials_encode_via_longest_match() {
        let v = Vocab::base();
        assert_eq!(v.encode(BOS_SURFACE), vec![BOS]);
        assert_eq!(v.encode(EOT_SURFACE), vec![EOT]);
    }
}
