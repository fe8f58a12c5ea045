//! Bit-exact checkpoint format.
//!
//! Layout: 8-byte magic `PLMLAB01`, u64 LE header length, JSON header
//! (config + vocab entries + tensor manifest), then the tensor payload as
//! little-endian f32 arrays in canonical manifest order (embedding table
//! first, output head last). `load(save(x)) == x` down to the byte.

use crate::error::{Error, Result};
use crate::model::{LayerParams, ModelConfig, Parameters};
use crate::vocab::{TokenKind, Vocab, VocabEntry};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"PLMLAB01";

#[derive(Serialize, Deserialize)]
struct VocabEntryHeader {
    id: u32,
    surface: String, // base64 of the surface bytes
    kind: TokenKind,
}

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab_base_size: usize,
    vocab: Vec<VocabEntryHeader>,
    manifest: Vec<TensorHeader>,
}

pub fn to_bytes(params: &Parameters, vocab: &Vocab) -> Vec<u8> {
    let tensors = params.tensors();
    let header = Header {
        config: params.config.clone(),
        vocab_base_size: vocab.base_size(),
        vocab: vocab
            .entries()
            .iter()
            .map(|e| VocabEntryHeader {
                id: e.id,
                surface: B64.encode(&e.surface),
                kind: e.kind,
            })
            .collect(),
        manifest: tensors
            .iter()
            .map(|(name, shape, _)| TensorHeader {
                name: name.clone(),
                shape: shape.clone(),
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(
        8 + 8 + header_json.len() + tensors.iter().map(|(_, _, d)| d.len() * 4).sum::<usize>(),
    );
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_json);
    for (_, _, data) in &tensors {
        for v in *data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<(Parameters, Vocab)> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::BadMagic);
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + header_len {
        return Err(Error::TruncatedPayload {
            expected: 16 + header_len,
            found: bytes.len(),
        });
    }
    let header: Header = serde_json::from_slice(&bytes[16..16 + header_len])?;
    header.config.validate()?;

    let entries: Vec<VocabEntry> = header
        .vocab
        .iter()
        .map(|e| {
            Ok(VocabEntry {
                id: e.id,
                surface: B64
                    .decode(&e.surface)
                    .map_err(|err| Error::Invalid(format!("bad surface base64: {err}")))?,
                kind: e.kind,
            })
        })
        .collect::<Result<_>>()?;
    let vocab = Vocab::from_entries(entries, header.vocab_base_size)?;

    // expected canonical manifest for this config + vocab length
    let expected = expected_manifest(&header.config, vocab.len());
    if header.manifest.len() != expected.len() {
        return Err(Error::Invalid(format!(
            "manifest has {} tensors, expected {}",
            header.manifest.len(),
            expected.len()
        )));
    }
    for (got, (name, shape)) in header.manifest.iter().zip(&expected) {
        if &got.name != name || &got.shape != shape {
            return Err(Error::ManifestShapeMismatch {
                name: got.name.clone(),
                header: got.shape.clone(),
                expected: shape.clone(),
            });
        }
    }

    let total: usize = expected.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    let payload = &bytes[16 + header_len..];
    if payload.len() != total * 4 {
        return Err(Error::TruncatedPayload {
            expected: total * 4,
            found: payload.len(),
        });
    }

    let mut offset = 0usize;
    let mut read_tensor = |count: usize| -> Vec<f32> {
        let out = payload[offset..offset + count * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        offset += count * 4;
        out
    };

    let cfg = header.config;
    let d = cfg.dim;
    let embedding = read_tensor(vocab.len() * d);
    let pos = read_tensor(cfg.context_len * d);
    let layers = (0..cfg.n_layers)
        .map(|_| LayerParams {
            norm_attn: read_tensor(d),
            wq: read_tensor(d * d),
            wk: read_tensor(d * d),
            wv: read_tensor(d * d),
            wo: read_tensor(d * d),
            norm_mlp: read_tensor(d),
            w_up: read_tensor(4 * d * d),
            w_down: read_tensor(4 * d * d),
        })
        .collect();
    let norm_final = read_tensor(d);
    let head = read_tensor(cfg.vocab_base_size * d);

    Ok((
        Parameters {
            config: cfg,
            embedding,
            pos,
            layers,
            norm_final,
            head,
        },
        vocab,
    ))
}

fn expected_manifest(cfg: &ModelConfig, vocab_len: usize) -> Vec<(String, Vec<usize>)> {
    let d = cfg.dim;
    let mut out = vec![
        ("embedding_table".to_string(), vec![vocab_len, d]),
        ("pos_table".to_string(), vec![cfg.context_len, d]),
    ];
    for i in 0..cfg.n_layers {
        out.push((format!("layer{i}.norm_attn"), vec![d]));
        out.push((format!("layer{i}.wq"), vec![d, d]));
        out.push((format!("layer{i}.wk"), vec![d, d]));
        out.push((format!("layer{i}.wv"), vec![d, d]));
        out.push((format!("layer{i}.wo"), vec![d, d]));
        out.push((format!("layer{i}.norm_mlp"), vec![d]));
        out.push((format!("layer{i}.w_up"), vec![4 * d, d]));
        out.push((format!("layer{i}.w_down"), vec![d, 4 * d]));
    }
    out.push(("norm_final".to_string(), vec![d]));
    out.push(("output_head".to_string(), vec![cfg.vocab_base_size, d]));
    out
}

pub fn save(params: &Parameters, vocab: &Vocab, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(params, vocab))
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load(path: impl AsRef<Path>) -> Result<(Parameters, Vocab)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    from_bytes(&bytes)
}

/// SHA-256 of the serialized checkpoint, hex-encoded.
pub fn digest(params: &Parameters, vocab: &Vocab) -> String {
    hex(&Sha256::digest(to_bytes(params, vocab)))
}

pub fn digest_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (Parameters, Vocab) {
        let cfg = ModelConfig {
            dim: 16,
            n_layers: 1,
            n_heads: 2,
            context_len: 24,
            seed: 3,
            ..Default::default()
        };
        (Parameters::init(&cfg).unwrap(), Vocab::base())
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let (params, vocab) = small();
        let bytes = to_bytes(&params, &vocab);
        let (p2, v2) = from_bytes(&bytes).unwrap();
        assert_eq!(to_bytes(&p2, &v2), bytes);
        assert_eq!(p2, params);
        assert_eq!(v2, vocab);
    }

    #[test]
    fn roundtrip_with_copyright_rows() {
        let (mut params, mut vocab) = small();
        vocab.push_copyright(b"mkahg").unwrap();
        params.embedding.extend_from_slice(&[0.5f32; 16]);
        let bytes = to_bytes(&params, &vocab);
        let (p2, v2) = from_bytes(&bytes).unwrap();
        assert_eq!(p2.vocab_len(), 259);
        assert_eq!(v2.len(), 259);
        assert_eq!(to_bytes(&p2, &v2), bytes);
    }

    #[test]
    fn bad_magic_rejected() {
        let (params, vocab) = small();
        let mut bytes = to_bytes(&params, &vocab);
        bytes[..8].copy_from_slice(b"XXXXXXXX");
        assert!(matches!(from_bytes(&bytes), Err(Error::BadMagic)));
    }

    #[test]
    fn truncated_payload_rejected() {
        let (params, vocab) = small();
        let mut bytes = to_bytes(&params, &vocab);
        bytes.pop();
        let err = from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::TruncatedPayload { .. }), "{err}");
    }

    #[test]
    fn manifest_shape_mismatch_rejected() {
        let (params, vocab) = small();
        let bytes = to_bytes(&params, &vocab);
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let mut header: Header = serde_json::from_slice(&bytes[16..16 + header_len]).unwrap();
        header.manifest[0].shape = vec![1, 1];
        let hj = serde_json::to_vec(&header).unwrap();
        let mut tampered = Vec::new();
        tampered.extend_from_slice(MAGIC);
        tampered.extend_from_slice(&(hj.len() as u64).to_le_bytes());
        tampered.extend_from_slice(&hj);
        tampered.extend_from_slice(&bytes[16 + header_len..]);
        assert!(matches!(
            from_bytes(&tampered),
            Err(Error::ManifestShapeMismatch { .. })
        ));
    }

    #[test]
    fn save_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let (params, vocab) = small();
        save(&params, &vocab, &path).unwrap();
        let (p2, _) = load(&path).unwrap();
        assert_eq!(p2, params);
        assert_eq!(digest(&params, &vocab), digest_file(&path).unwrap());
    }
}
