//! Binary policy checkpoints.
//!
//! Layout, all integers u64 little-endian:
//!
//! ```text
//! "TACO1" | vocab | hidden | depth | step | tensor count
//! | (len | len × f64 LE) per tensor, in PolicyParameters order
//! | SHA-256 of every preceding byte
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::policy::{Dims, PolicyParameters};

pub const MAGIC: &[u8; 5] = b"TACO1";
const DIGEST_LEN: usize = 32;

pub fn encode_checkpoint(params: &PolicyParameters, step: u64) -> Vec<u8> {
    let dims = params.dims();
    let tensors = params.tensors();
    let mut buf = Vec::with_capacity(64 + 8 * (params.num_parameters() + tensors.len()));
    buf.extend_from_slice(MAGIC);
    for v in [dims.vocab as u64, dims.hidden as u64, dims.depth as u64, step] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for t in &tensors {
        buf.extend_from_slice(&(t.data.len() as u64).to_le_bytes());
        for x in t.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn u64(&mut self) -> Result<u64> {
        let end = self.pos + 8;
        let raw = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Integrity("unexpected end of checkpoint".into()))?;
        self.pos = end;
        Ok(u64::from_le_bytes(raw.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Integrity("length overflows usize".into()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(PolicyParameters, u64)> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        if bytes.len() >= 4 && &bytes[..4] == b"TACO" {
            return Err(Error::Version(format!(
                "unsupported checkpoint format {:?}",
                String::from_utf8_lossy(&bytes[..bytes.len().min(MAGIC.len())])
            )));
        }
        if bytes.len() < MAGIC.len() && MAGIC.starts_with(bytes) {
            return Err(Error::Integrity("checkpoint truncated inside header".into()));
        }
        return Err(Error::Version("not a policy checkpoint".into()));
    }
    if bytes.len() < MAGIC.len() + DIGEST_LEN {
        return Err(Error::Integrity("checkpoint truncated".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Integrity("digest mismatch".into()));
    }
    let mut r = Reader {
        bytes: body,
        pos: MAGIC.len(),
    };
    let dims = Dims::new(r.usize()?, r.usize()?, r.usize()?)
        .map_err(|e| Error::Integrity(format!("bad dims record: {e}")))?;
    let step = r.u64()?;
    let count = r.usize()?;
    let mut flat = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.usize()?;
        let end = len
            .checked_mul(8)
            .and_then(|b| b.checked_add(r.pos))
            .filter(|&e| e <= body.len())
            .ok_or_else(|| Error::Integrity("tensor extends past end of file".into()))?;
        let data = body[r.pos..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        r.pos = end;
        flat.push(data);
    }
    if r.pos != body.len() {
        return Err(Error::Integrity("trailing bytes after tensors".into()));
    }
    let params = PolicyParameters::from_flat(dims, flat)
        .map_err(|e| Error::Integrity(format!("tensor layout: {e}")))?;
    Ok((params, step))
}

/// Atomic write: temporary sibling file, then rename.
pub fn save_checkpoint(params: &PolicyParameters, step: u64, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(params, step);
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("checkpoint path {} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(PolicyParameters, u64)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Like [`load_checkpoint`], but a dims record different from `expected`
/// is a version error.
pub fn load_checkpoint_expecting(path: &Path, expected: Dims) -> Result<(PolicyParameters, u64)> {
    let (params, step) = load_checkpoint(path)?;
    if params.dims() != expected {
        return Err(Error::Version(format!(
            "checkpoint dims {:?} do not match expected {:?}",
            params.dims(),
            expected
        )));
    }
    Ok((params, step))
}

/// Hex SHA-256 of a checkpoint file's bytes.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(d: usize) -> PolicyParameters {
        PolicyParameters::init(5, Dims::new(50, d, 2).unwrap()).unwrap()
    }

    fn bits(p: &PolicyParameters) -> Vec<u64> {
        p.tensors()
            .iter()
            .flat_map(|t| t.data.iter().map(|x| x.to_bits()))
            .collect()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        let mut p = params(8);
        p.classifier_b[1] = -0.0;
        p.embedding[[3, 2]] = f64::MIN_POSITIVE / 3.0;
        save_checkpoint(&p, 77, &path).unwrap();
        let (q, step) = load_checkpoint(&path).unwrap();
        assert_eq!(step, 77);
        assert_eq!(q.dims(), p.dims());
        assert_eq!(bits(&p), bits(&q));
    }

    #[test]
    fn truncation_is_integrity_error() {
        let bytes = encode_checkpoint(&params(4), 1);
        for cut in [bytes.len() - 1, bytes.len() / 2, 40, 6, 3] {
            let err = decode_checkpoint(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Integrity(_)), "cut {cut}: {err:?}");
        }
    }

    #[test]
    fn flipped_byte_is_integrity_error() {
        let mut bytes = encode_checkpoint(&params(4), 1);
        bytes[100] ^= 1;
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Integrity(_))));
    }

    #[test]
    fn wrong_dims_is_version_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        save_checkpoint(&params(8), 0, &path).unwrap();
        let err = load_checkpoint_expecting(&path, Dims::new(50, 16, 2).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Version(_)));
        assert!(load_checkpoint_expecting(&path, Dims::new(50, 8, 2).unwrap()).is_ok());
    }

    #[test]
    fn other_magic_is_version_error() {
        let mut bytes = encode_checkpoint(&params(4), 1);
        bytes[4] = b'2';
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Version(_))));
    }
}
