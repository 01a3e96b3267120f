//! Flat binary checkpoint container: a little-endian u64 header length, a
//! JSON header (format version, capacity, role, vocabulary hash, seed,
//! dimensions), then the parameter arrays as 64-bit little-endian floats in
//! declared order: embedding, per-layer (gain, affine, bias), output map,
//! output bias.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Capacity, PolicyModel, Role};
use super::vocab::Vocabulary;
use super::{PolicyError, PolicyResult};

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    capacity: Capacity,
    role: Role,
    vocab_sha256: String,
    seed: u64,
    vocab_size: usize,
    embed_dim: usize,
    num_layers: usize,
    window: usize,
}

/// Write a model checkpoint.
pub fn save(model: &PolicyModel, path: &Path) -> PolicyResult<()> {
    let header = Header {
        format_version: FORMAT_VERSION,
        capacity: model.capacity,
        role: model.role,
        vocab_sha256: model.vocab.sha256(),
        seed: model.seed,
        vocab_size: model.vocab_size(),
        embed_dim: model.embed_dim(),
        num_layers: model.num_layers(),
        window: model.window(),
    };
    let header_bytes = serde_json::to_vec(&header).map_err(PolicyError::from)?;
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    out.write_all(&header_bytes)?;
    for slice in model.param_slices() {
        for v in slice {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Read a checkpoint back, verifying the vocabulary hash and dimensions
/// against the provided vocabulary.
pub fn load(path: &Path, vocab: &Vocabulary) -> PolicyResult<PolicyModel> {
    let mut input = BufReader::new(File::open(path)?);
    let mut len_bytes = [0u8; 8];
    input.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    input.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes).map_err(PolicyError::from)?;
    if header.format_version != FORMAT_VERSION {
        return Err(PolicyError::Checkpoint(format!(
            "unsupported checkpoint format_version {}",
            header.format_version
        )));
    }
    if header.vocab_sha256 != vocab.sha256() {
        return Err(PolicyError::VocabMismatch);
    }
    let mut model = PolicyModel::init(header.capacity, vocab.clone(), header.role, header.seed);
    if model.vocab_size() != header.vocab_size
        || model.embed_dim() != header.embed_dim
        || model.num_layers() != header.num_layers
        || model.window() != header.window
    {
        return Err(PolicyError::Checkpoint(
            "checkpoint dimensions do not match capacity".into(),
        ));
    }
    for slice in model.param_slices_mut() {
        for v in slice.iter_mut() {
            let mut bytes = [0u8; 8];
            input.read_exact(&mut bytes)?;
            *v = f64::from_le_bytes(bytes);
        }
    }
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(PolicyError::Checkpoint("trailing bytes after parameters".into()));
    }
    Ok(model)
}

/// Load a checkpoint reusing the vocabulary of another model, overriding the
/// stored role. Handy when wiring expert/naive/reference bundles.
pub fn load_as(path: &Path, vocab: &Vocabulary, role: Role) -> PolicyResult<PolicyModel> {
    let mut model = load(path, vocab)?;
    model.role = role;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::new(["walk", "grab", "cup", "kitchen"].map(String::from)).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let model = PolicyModel::init(Capacity::Weak, vocab(), Role::Expert, 7);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&model, &path).unwrap();
        let loaded = load(&path, &vocab()).unwrap();
        assert_eq!(model, loaded);
    }

    #[test]
    fn vocab_hash_guards_loading() {
        let model = PolicyModel::init(Capacity::Weak, vocab(), Role::Expert, 7);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&model, &path).unwrap();
        let other = Vocabulary::new(["walk", "grab", "cup", "pantry"].map(String::from)).unwrap();
        assert!(matches!(
            load(&path, &other),
            Err(PolicyError::VocabMismatch)
        ));
    }
}
