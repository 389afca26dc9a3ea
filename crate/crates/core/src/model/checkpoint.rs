//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! magic "V3DC" | version u32 | rng_seed u64 | spec_len u32 | spec text
//! | record_count u32 | records...
//! record: name_len u32 | name | rank u32 | dims u32 * rank | f32 * prod(dims)
//! ```
//!
//! Records hold the trainable parameters followed by the running
//! statistics, in model order.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{layout, ArchitectureSpec, ModelError, ModelState, ParamMap};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"V3DC";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(m: &ModelState<f32>, mut w: W) -> Result<(), ModelError> {
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
    w.write_u64::<LittleEndian>(m.rng_seed)?;
    let spec = m.spec.to_canonical_text();
    w.write_u32::<LittleEndian>(spec.len() as u32)?;
    w.write_all(spec.as_bytes())?;
    w.write_u32::<LittleEndian>((m.params.len() + m.buffers.len()) as u32)?;
    for (name, t) in m.params.iter().chain(&m.buffers) {
        w.write_u32::<LittleEndian>(name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        w.write_u32::<LittleEndian>(t.rank() as u32)?;
        for &d in t.shape() {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        for &v in t.data() {
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

pub fn save_checkpoint(m: &ModelState<f32>, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let mut buf = Vec::new();
    write_checkpoint(m, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

fn corrupt(what: impl Into<String>) -> ModelError {
    ModelError::CorruptRecord(what.into())
}

fn read_string(r: &mut Cursor<&[u8]>, what: &str) -> Result<String, ModelError> {
    let len = r.read_u32::<LittleEndian>().map_err(|_| corrupt(format!("truncated {what} length")))? as usize;
    let remaining = r.get_ref().len() - r.position() as usize;
    if len > remaining {
        return Err(corrupt(format!("{what} runs past the end of the file")));
    }
    let mut bytes = vec![0; len];
    r.read_exact(&mut bytes)?;
    String::from_utf8(bytes).map_err(|_| corrupt(format!("{what} is not UTF-8")))
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<ModelState<f32>, ModelError> {
    if bytes.len() < 8 {
        return Err(corrupt("file shorter than the checkpoint preamble"));
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("length checked");
    if magic != CHECKPOINT_MAGIC {
        return Err(ModelError::BadMagic(magic));
    }
    let mut r = Cursor::new(bytes);
    r.set_position(4);
    let version = r.read_u32::<LittleEndian>()?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let rng_seed = r.read_u64::<LittleEndian>().map_err(|_| corrupt("truncated seed"))?;
    let spec_text = read_string(&mut r, "architecture")?;
    let spec = ArchitectureSpec::from_canonical_text(&spec_text).map_err(|e| corrupt(e.to_string()))?;
    spec.validate().map_err(|e| corrupt(e.to_string()))?;
    let (param_layout, buffer_layout) = layout(&spec);
    let count = r.read_u32::<LittleEndian>().map_err(|_| corrupt("truncated record count"))? as usize;
    if count != param_layout.len() + buffer_layout.len() {
        return Err(corrupt(format!(
            "expected {} records, found {count}",
            param_layout.len() + buffer_layout.len()
        )));
    }
    let mut params = ParamMap::new();
    let mut buffers = ParamMap::new();
    let n_params = param_layout.len();
    for (i, (expected_name, expected_shape)) in param_layout.into_iter().chain(buffer_layout).enumerate() {
        let name = read_string(&mut r, "record name")?;
        if name != expected_name {
            return Err(corrupt(format!("record {i} is {name:?}, expected {expected_name:?}")));
        }
        let rank = r.read_u32::<LittleEndian>().map_err(|_| corrupt(format!("{name}: truncated rank")))? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.read_u32::<LittleEndian>().map_err(|_| corrupt(format!("{name}: truncated shape")))? as usize);
        }
        if shape != expected_shape {
            return Err(corrupt(format!("{name}: shape {shape:?}, expected {expected_shape:?}")));
        }
        let len: usize = shape.iter().product();
        let mut data = vec![0f32; len];
        r.read_f32_into::<LittleEndian>(&mut data)
            .map_err(|_| corrupt(format!("{name}: truncated payload")))?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(corrupt(format!("{name}: non-finite value")));
        }
        let t = Tensor::new(&shape, data)?;
        if i < n_params {
            params.insert(name, t);
        } else {
            buffers.insert(name, t);
        }
    }
    if (r.position() as usize) != bytes.len() {
        return Err(corrupt("trailing bytes after the last record"));
    }
    Ok(ModelState {
        spec,
        params,
        buffers,
        rng_seed,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelState<f32>, ModelError> {
    read_checkpoint(&fs::read(path)?)
}
