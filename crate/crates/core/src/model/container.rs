//! `AITD` model container.
//!
//! All integers are little-endian `u32`.
//!
//! ```text
//! magic     "AITD"
//! version   u32
//! config    u32 byte length, UTF-8 `key=value` lines
//! vocab     u32 byte length, UTF-8 one token per line (line = index)
//! tensors   u32 count, then per tensor:
//!             u32 name length, UTF-8 name
//!             u32 rank, rank x u32 dims
//!             prod(dims) x f32 payload
//! checksum  u32 CRC-32 (IEEE) of every preceding byte
//! ```

use super::{DetectorModel, ModelConfig, ModelError, ParamStore};
use crate::autodiff::Tensor;
use crate::vectorizer::Vocabulary;

pub const MAGIC: &[u8; 4] = b"AITD";
pub const FORMAT_VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_section(buf: &mut Vec<u8>, bytes: &[u8]) {
    put_u32(buf, bytes.len() as u32);
    buf.extend_from_slice(bytes);
}

pub(super) fn encode(model: &DetectorModel) -> Vec<u8> {
    let mut buf = Vec::with_capacity(model.params.total_params() * 4 + 1024);
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, FORMAT_VERSION);
    put_section(&mut buf, model.config.to_kv().as_bytes());
    put_section(&mut buf, model.vocabulary.to_lines().as_bytes());
    put_u32(&mut buf, model.params.len() as u32);
    for (name, tensor) in model.params.iter() {
        put_section(&mut buf, name.as_bytes());
        put_u32(&mut buf, tensor.rank() as u32);
        for &d in tensor.shape() {
            put_u32(&mut buf, d as u32);
        }
        for v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    put_u32(&mut buf, crc);
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn section(&mut self) -> Option<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }
}

fn utf8<'a>(b: &'a [u8], what: &str) -> Result<&'a str, ModelError> {
    std::str::from_utf8(b).map_err(|_| corrupt(format!("{what} is not UTF-8")))
}

fn corrupt(msg: impl Into<String>) -> ModelError {
    ModelError::CorruptContainer(msg.into())
}

pub(super) fn decode(bytes: &[u8]) -> Result<DetectorModel, ModelError> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(ModelError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    if bytes.len() < 12 {
        return Err(corrupt("missing checksum"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let mut cur = Cursor { bytes: body, pos: 8 };

    let config_text = cur.section().ok_or_else(|| corrupt("truncated config section"))?;
    let vocab_text = cur.section().ok_or_else(|| corrupt("truncated vocabulary section"))?;
    let count = cur.u32().ok_or_else(|| corrupt("truncated tensor count"))?;

    let mut entries = Vec::with_capacity(count as usize);
    for i in 0..count {
        let placeholder = || ModelError::TruncatedTensor(format!("#{i}"));
        let name = cur.section().ok_or_else(placeholder)?;
        let name = utf8(name, "tensor name")?.to_string();
        let truncated = || ModelError::TruncatedTensor(name.clone());
        let rank = cur.u32().ok_or_else(truncated)? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(cur.u32().ok_or_else(truncated)? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| corrupt(format!("tensor {name} is too large")))?;
        let payload = cur
            .take(n.checked_mul(4).ok_or_else(truncated)?)
            .ok_or_else(truncated)?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(shape, data).map_err(|e| corrupt(format!("tensor {name}: {e}")))?;
        entries.push((name, tensor));
    }

    let stored = u32::from_le_bytes(trailer.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(corrupt("checksum mismatch"));
    }
    if cur.pos != body.len() {
        return Err(corrupt("trailing bytes after tensors"));
    }

    let config = ModelConfig::from_kv(utf8(config_text, "config")?).map_err(|e| corrupt(e.to_string()))?;
    let vocabulary = Vocabulary::from_lines(utf8(vocab_text, "vocabulary")?)?;
    DetectorModel::from_parts(config, vocabulary, ParamStore::new(entries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_detector;
    use crate::vectorizer::build_vocabulary;

    fn model() -> DetectorModel {
        let cfg = ModelConfig {
            max_tokens: 20,
            embed_dim: 4,
            sequence_length: 8,
            lstm_hidden: 2,
            attn_heads: 1,
            attn_key_dim: 4,
            ffn_dim: 4,
            conv_filters: 4,
            conv_kernel: 3,
            conv_stride: 2,
            dense_units: 4,
            ..ModelConfig::default()
        };
        let vocab = build_vocabulary(&["alpha beta gamma", "beta"], &cfg.vectorizer()).unwrap();
        build_detector(cfg, vocab).unwrap()
    }

    #[test]
    fn round_trip_is_identity() {
        let m = model();
        let bytes = encode(&m);
        assert_eq!(&bytes[..4], b"AITD");
        assert_eq!(decode(&bytes).unwrap(), m);
    }

    #[test]
    fn flipped_magic() {
        let mut bytes = encode(&model());
        bytes[0] ^= 0xff;
        assert!(matches!(decode(&bytes), Err(ModelError::CorruptContainer(_))));
    }

    #[test]
    fn newer_version() {
        let mut bytes = encode(&model());
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            decode(&bytes),
            Err(ModelError::VersionMismatch { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn flipped_payload_bit() {
        let mut bytes = encode(&model());
        let name = b"embedding/table";
        let at = bytes.windows(name.len()).position(|w| w == name).unwrap();
        // name, rank, two dims, then into the payload
        bytes[at + name.len() + 12 + 5] ^= 0x01;
        let err = decode(&bytes).unwrap_err();
        assert!(
            matches!(&err, ModelError::CorruptContainer(m) if m.contains("checksum")),
            "{err:?}"
        );
    }

    #[test]
    fn truncated_file() {
        let bytes = encode(&model());
        let cut = &bytes[..bytes.len() - 40];
        assert!(matches!(decode(cut), Err(ModelError::TruncatedTensor(_))));
    }
}
