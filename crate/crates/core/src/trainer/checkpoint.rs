//! The `AMN1` checkpoint format.
//!
//! ```text
//! "AMN1"
//! u32 tensor count
//! per tensor: u16 name length, name, u8 rank, u32 dims..., f32 data...
//! u32 length + vocabulary JSON
//! u32 length + config JSON
//! u32 length + trope catalog JSON
//! ```
//!
//! All integers and floats are little-endian. Read-write memory state is
//! stored as the tensors `rw.keys`, `rw.values` and `rw.ages`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::autodiff::Tensor;
use crate::config::VariantConfig;
use crate::corpus::{TropeCatalog, Vocabulary};
use crate::error::{AmnError, Result};
use crate::memory::RwMemory;
use crate::model::PersonaModel;

pub const MAGIC: &[u8; 4] = b"AMN1";
const RW_KEYS: &str = "rw.keys";
const RW_VALUES: &str = "rw.values";
const RW_AGES: &str = "rw.ages";

fn bad(msg: impl Into<String>) -> AmnError {
    AmnError::Checkpoint(msg.into())
}

/// Named tensors of a model, memory state included.
pub fn named_tensors(model: &PersonaModel<f32>) -> Vec<(String, Tensor<f32>)> {
    let mut out: Vec<(String, Tensor<f32>)> = model
        .store
        .entries()
        .iter()
        .map(|e| (e.name.clone(), e.value.clone()))
        .collect();
    if let Some(mem) = &model.rw {
        let n = mem.len();
        out.push((RW_KEYS.into(), mem.keys.clone()));
        let values = mem.values.iter().map(|&v| v as f32).collect();
        out.push((
            RW_VALUES.into(),
            Tensor::new(vec![n], values).expect("nonempty memory"),
        ));
        let ages = mem.ages.iter().map(|&a| a as f32).collect();
        out.push((
            RW_AGES.into(),
            Tensor::new(vec![n], ages).expect("nonempty memory"),
        ));
    }
    out
}

fn write_block<W: Write>(w: &mut W, bytes: &[u8]) -> Result<()> {
    let len = u32::try_from(bytes.len()).map_err(|_| bad("block too large"))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(bytes)?;
    Ok(())
}

pub fn write<W: Write>(
    mut w: W,
    model: &PersonaModel<f32>,
    vocab: &Vocabulary,
    catalog: &TropeCatalog,
) -> Result<()> {
    let tensors = named_tensors(model);
    w.write_all(MAGIC)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in &tensors {
        let name_len =
            u16::try_from(name.len()).map_err(|_| bad(format!("tensor name too long: {name}")))?;
        w.write_all(&name_len.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        let rank = u8::try_from(t.shape().len()).map_err(|_| bad("rank above 255"))?;
        w.write_all(&[rank])?;
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| bad("dimension above u32"))?;
            w.write_all(&d.to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    write_block(&mut w, &serde_json::to_vec(vocab)?)?;
    write_block(&mut w, &serde_json::to_vec(&model.cfg)?)?;
    write_block(&mut w, &serde_json::to_vec(catalog)?)?;
    w.flush()?;
    Ok(())
}

pub fn save(
    path: &Path,
    model: &PersonaModel<f32>,
    vocab: &Vocabulary,
    catalog: &TropeCatalog,
) -> Result<()> {
    write(BufWriter::new(File::create(path)?), model, vocab, catalog)
}

fn read_exact<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| bad(format!("truncated checkpoint: {e}")))?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact(r)?))
}

fn read_block<R: Read>(r: &mut R) -> Result<Vec<u8>> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)
        .map_err(|e| bad(format!("truncated checkpoint: {e}")))?;
    Ok(buf)
}

/// Raw contents: tensors in file order plus the three JSON blocks.
pub struct RawCheckpoint {
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub vocab: Vocabulary,
    pub config: VariantConfig,
    pub catalog: TropeCatalog,
}

pub fn read_raw<R: Read>(mut r: R) -> Result<RawCheckpoint> {
    let magic: [u8; 4] = read_exact(&mut r)?;
    if &magic != MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let count = read_u32(&mut r)?;
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(read_exact(&mut r)?) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)
            .map_err(|e| bad(format!("truncated checkpoint: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| bad("tensor name is not UTF-8"))?;
        let [rank] = read_exact::<_, 1>(&mut r)?;
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            shape.push(read_u32(&mut r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)
            .map_err(|e| bad(format!("truncated tensor {name}: {e}")))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| bad(format!("tensor {name}: {e}")))?;
        tensors.push((name, t));
    }
    let vocab = serde_json::from_slice(&read_block(&mut r)?)?;
    let config = serde_json::from_slice(&read_block(&mut r)?)?;
    let catalog = serde_json::from_slice(&read_block(&mut r)?)?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(bad(format!("{} trailing bytes", rest.len())));
    }
    Ok(RawCheckpoint {
        tensors,
        vocab,
        config,
        catalog,
    })
}

/// Rebuilds the model layout from the stored config and fills in every
/// tensor; names must match the layout exactly.
pub fn read<R: Read>(r: R) -> Result<(PersonaModel<f32>, Vocabulary, TropeCatalog)> {
    let raw = read_raw(r)?;
    let mut model = PersonaModel::<f32>::new(&raw.config, &raw.vocab, &raw.catalog, None)?;
    let mut seen = vec![false; model.store.len()];
    let (mut keys, mut values, mut ages) = (None, None, None);
    for (name, t) in raw.tensors {
        match name.as_str() {
            RW_KEYS => keys = Some(t),
            RW_VALUES => values = Some(t),
            RW_AGES => ages = Some(t),
            _ => {
                let id = model
                    .store
                    .find(&name)
                    .ok_or_else(|| bad(format!("unexpected tensor {name}")))?;
                model.store.set(&name, t)?;
                seen[id.index()] = true;
            }
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(bad(format!(
            "missing tensor {}",
            model.store.entries()[i].name
        )));
    }
    match (&mut model.rw, keys, values, ages) {
        (None, None, None, None) => {}
        (Some(mem), Some(k), Some(v), Some(a)) => {
            let n = mem.len();
            if k.shape() != mem.keys.shape() || v.len() != n || a.len() != n {
                return Err(bad("read-write memory shape differs from config"));
            }
            let as_index = |x: f32| -> Result<usize> {
                if x < 0.0 || x.fract() != 0.0 {
                    return Err(bad(format!("invalid memory entry {x}")));
                }
                Ok(x as usize)
            };
            let restored = RwMemory {
                keys: k,
                values: v
                    .data()
                    .iter()
                    .map(|&x| as_index(x))
                    .collect::<Result<_>>()?,
                ages: a
                    .data()
                    .iter()
                    .map(|&x| as_index(x).map(|v| v as u32))
                    .collect::<Result<_>>()?,
                k: mem.k,
                n_labels: mem.n_labels,
            };
            restored
                .check_invariants()
                .map_err(|e| bad(e.to_string()))?;
            *mem = restored;
        }
        _ => return Err(bad("read-write memory state incomplete or unexpected")),
    }
    Ok((model, raw.vocab, raw.catalog))
}

pub fn load(path: &Path) -> Result<(PersonaModel<f32>, Vocabulary, TropeCatalog)> {
    read(BufReader::new(File::open(path)?))
}
