//! Binary checkpoints holding the raw bits of every coefficient.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic "DNLSCKPT" | version u32 | config hash [32] | step u64 | t f64
//! | kind u8 | M u64 | cutoff u64 | flags u8 | a f64
//! | v [2M f64] | w [2M f64]? | z [2M f64]? | sha256 of all preceding bytes [32]
//! ```
//!
//! `kind` is 0 (full), 1 (modified) or 2 (decomposition); bit 0 of `flags` marks
//! a stored `z`. `w` is present for decompositions only.

use std::path::Path;

use dnls_core::equations::{DecompState, ModifiedState};
use dnls_core::{SpectralField, C64};
use sha2::{Digest, Sha256};

use crate::export::write_atomic;
use crate::CliError;

pub const MAGIC: &[u8; 8] = b"DNLSCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum SimState {
    Full(SpectralField),
    Modified(ModifiedState),
    Decomposition(DecompState),
}

impl SimState {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Full(_) => "full",
            Self::Modified(_) => "modified",
            Self::Decomposition(_) => "decomposition",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub step: u64,
    pub t: f64,
    pub state: SimState,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint version {found} is not supported (expected {VERSION})")]
    Version { found: u32 },
    #[error("checkpoint checksum mismatch (file truncated or corrupted)")]
    Checksum,
    #[error("checkpoint was written for a different configuration")]
    ConfigMismatch,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

fn put_field(out: &mut Vec<u8>, f: &SpectralField) {
    for c in f.coeffs() {
        out.extend_from_slice(&c.re.to_bits().to_le_bytes());
        out.extend_from_slice(&c.im.to_bits().to_le_bytes());
    }
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let (kind, m, cutoff, flags, a) = match &ck.state {
        SimState::Full(u) => (0u8, u.m(), 0usize, 0u8, 0.0),
        SimState::Modified(s) => (1, s.v.m(), 0, 0, s.a),
        SimState::Decomposition(s) => (2, s.v.m(), s.cutoff, s.z.is_some() as u8, 0.0),
    };
    let mut out = Vec::with_capacity(128 + 48 * m);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&ck.config_hash);
    out.extend_from_slice(&ck.step.to_le_bytes());
    out.extend_from_slice(&ck.t.to_bits().to_le_bytes());
    out.push(kind);
    out.extend_from_slice(&(m as u64).to_le_bytes());
    out.extend_from_slice(&(cutoff as u64).to_le_bytes());
    out.push(flags);
    out.extend_from_slice(&a.to_bits().to_le_bytes());
    match &ck.state {
        SimState::Full(u) => put_field(&mut out, u),
        SimState::Modified(s) => put_field(&mut out, &s.v),
        SimState::Decomposition(s) => {
            put_field(&mut out, &s.v);
            put_field(&mut out, &s.w);
            if let Some(z) = &s.z {
                put_field(&mut out, z);
            }
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| CheckpointError::Malformed("payload shorter than its header says".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn field(&mut self, m: usize) -> Result<SpectralField, CheckpointError> {
        let coeffs = (0..m)
            .map(|_| Ok(C64::new(self.f64()?, self.f64()?)))
            .collect::<Result<Vec<_>, CheckpointError>>()?;
        SpectralField::from_coeffs(coeffs).map_err(|e| CheckpointError::Malformed(e.to_string()))
    }
}

/// Decodes a checkpoint, verifying the checksum before looking at the payload.
pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < MAGIC.len() + 4 + 32 {
        return Err(CheckpointError::Checksum);
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(CheckpointError::Checksum);
    }
    let mut r = Reader { buf: body, pos: MAGIC.len() };
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::Version { found: version });
    }
    let config_hash: [u8; 32] = r.take(32)?.try_into().unwrap();
    let step = r.u64()?;
    let t = r.f64()?;
    let kind = r.u8()?;
    let m = usize::try_from(r.u64()?).map_err(|_| CheckpointError::Malformed("grid size overflows".into()))?;
    let cutoff = r.u64()? as usize;
    let flags = r.u8()?;
    let a = r.f64()?;
    let state = match kind {
        0 => SimState::Full(r.field(m)?),
        1 => SimState::Modified(
            ModifiedState::new(r.field(m)?, a).map_err(|e| CheckpointError::Malformed(e.to_string()))?,
        ),
        2 => {
            let v = r.field(m)?;
            let w = r.field(m)?;
            let z = if flags & 1 == 1 { Some(r.field(m)?) } else { None };
            SimState::Decomposition(DecompState { v, w, cutoff, z })
        }
        other => return Err(CheckpointError::Malformed(format!("unknown state kind {other}"))),
    };
    if r.pos != body.len() {
        return Err(CheckpointError::Malformed("trailing bytes after payload".into()));
    }
    Ok(Checkpoint { config_hash, step, t, state })
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<(), CliError> {
    write_atomic(path, &encode(ck))
}

/// Loads a checkpoint; with `expected_hash`, refuses one written for another configuration.
pub fn load_checkpoint(path: &Path, expected_hash: Option<&[u8; 32]>) -> Result<Checkpoint, CliError> {
    let bytes = std::fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let ck = decode(&bytes).map_err(|e| CliError::Checkpoint {
        path: path.to_path_buf(),
        source: e,
    })?;
    if let Some(h) = expected_hash {
        if &ck.config_hash != h {
            return Err(CliError::Checkpoint {
                path: path.to_path_buf(),
                source: CheckpointError::ConfigMismatch,
            });
        }
    }
    Ok(ck)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(m: usize, rng: &mut ChaCha8Rng) -> SpectralField {
        let mut f = SpectralField::zeros(m);
        for k in -(m as i64 / 2 - 1)..(m as i64 / 2) {
            f.set(k, C64::new(rng.random_range(-1.0..1.0), rng.random::<f64>() * 1e-300));
        }
        f
    }

    fn samples() -> Vec<Checkpoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let hash = [7u8; 32];
        let v = random_field(16, &mut rng);
        let w = random_field(16, &mut rng);
        let z = random_field(16, &mut rng);
        vec![
            Checkpoint { config_hash: hash, step: 12, t: 0.1 * 12.0, state: SimState::Full(v.clone()) },
            Checkpoint {
                config_hash: hash,
                step: 3,
                t: 0.3,
                state: SimState::Modified(ModifiedState::new(v.clone(), 9.25).unwrap()),
            },
            Checkpoint {
                config_hash: hash,
                step: u64::MAX,
                t: f64::MAX,
                state: SimState::Decomposition(DecompState { v: v.clone(), w: w.clone(), cutoff: 4, z: Some(z) }),
            },
            Checkpoint {
                config_hash: hash,
                step: 0,
                t: 0.0,
                state: SimState::Decomposition(DecompState { v, w, cutoff: 4, z: None }),
            },
        ]
    }

    fn bits(s: &SimState) -> Vec<u64> {
        let fields: Vec<&SpectralField> = match s {
            SimState::Full(u) => vec![u],
            SimState::Modified(m) => vec![&m.v],
            SimState::Decomposition(d) => [Some(&d.v), Some(&d.w), d.z.as_ref()].into_iter().flatten().collect(),
        };
        fields
            .iter()
            .flat_map(|f| f.coeffs().iter().flat_map(|c| [c.re.to_bits(), c.im.to_bits()]))
            .collect()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        for ck in samples() {
            let back = decode(&encode(&ck)).unwrap();
            assert_eq!(bits(&back.state), bits(&ck.state));
            assert_eq!(back, ck);
        }
    }

    #[test]
    fn truncation_and_corruption_are_detected() {
        let bytes = encode(&samples()[2]);
        for cut in [1, 8, 40, bytes.len() / 2, bytes.len() - 1] {
            let err = decode(&bytes[..bytes.len() - cut]).unwrap_err();
            assert!(matches!(err, CheckpointError::Checksum | CheckpointError::BadMagic), "cut {cut}: {err}");
        }
        let mut flipped = bytes.clone();
        flipped[100] ^= 1;
        assert_eq!(decode(&flipped).unwrap_err(), CheckpointError::Checksum);
        assert_eq!(decode(b"hello").unwrap_err(), CheckpointError::BadMagic);
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = encode(&samples()[0]);
        bytes[8] = 9;
        let n = bytes.len() - 32;
        let digest = Sha256::digest(&bytes[..n]);
        bytes[n..].copy_from_slice(&digest);
        assert_eq!(decode(&bytes).unwrap_err(), CheckpointError::Version { found: 9 });
    }

    #[test]
    fn config_hash_is_enforced_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        save_checkpoint(&samples()[1], &path).unwrap();
        assert!(load_checkpoint(&path, Some(&[7u8; 32])).is_ok());
        let err = load_checkpoint(&path, Some(&[8u8; 32])).unwrap_err();
        assert!(matches!(err, CliError::Checkpoint { source: CheckpointError::ConfigMismatch, .. }));
    }
}
