//! Checkpoint files.
//!
//! Layout, all little-endian: magic `AMBISEPNET`, format version u32,
//! variant tag and size profile as length-prefixed strings, four u32 dims
//! (layers, hidden, projection, n_mels), tensor count, then per tensor:
//! length-prefixed name, rank u32, dims as u32s, and row-major f32 data.

use std::io::{Read, Write};
use std::path::Path;

use super::{ModelParams, NetDims, NetError, SizeProfile, Variant};

const MAGIC: &[u8; 10] = b"AMBISEPNET";
const VERSION: u32 = 1;

pub fn save_checkpoint(path: &Path, model: &ModelParams) -> Result<(), NetError> {
    let io_err = |source| NetError::Io { path: path.to_path_buf(), source };
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    write_string(&mut buf, &model.variant.to_string());
    write_string(&mut buf, &model.profile.to_string());
    let dims = model.dims();
    for d in [dims.layers, dims.hidden, dims.projection, dims.n_mels] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    let tensors = model.named_tensors();
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, view) in tensors {
        write_string(&mut buf, &name);
        buf.extend_from_slice(&(view.ndim() as u32).to_le_bytes());
        for &d in view.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in view.iter() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path).map_err(io_err)?;
    file.write_all(&buf).map_err(io_err)?;
    Ok(())
}

/// Load a checkpoint. Stored f32 values widen back to f64 exactly, so
/// save -> load -> save is byte-identical.
pub fn load_checkpoint(path: &Path) -> Result<ModelParams, NetError> {
    let corrupt = |detail: &str| NetError::CorruptCheckpoint {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| NetError::Io { path: path.to_path_buf(), source })?;
    let mut r = Reader { bytes: &bytes, pos: 0 };

    if r.take(MAGIC.len()).ok_or_else(|| corrupt("truncated magic"))? != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = r.u32().ok_or_else(|| corrupt("truncated version"))?;
    if version != VERSION {
        return Err(corrupt(&format!("unsupported format version {version}")));
    }
    let variant: Variant = r
        .string()
        .ok_or_else(|| corrupt("truncated variant"))?
        .parse()
        .map_err(|e: String| corrupt(&e))?;
    let profile: SizeProfile = r
        .string()
        .ok_or_else(|| corrupt("truncated profile"))?
        .parse()
        .map_err(|e: String| corrupt(&e))?;
    let mut dims_raw = [0usize; 4];
    for d in &mut dims_raw {
        *d = r.u32().ok_or_else(|| corrupt("truncated dims"))? as usize;
    }
    let dims = NetDims {
        layers: dims_raw[0],
        hidden: dims_raw[1],
        projection: dims_raw[2],
        n_mels: dims_raw[3],
    };

    let mut model = ModelParams {
        main: super::MaskNetParams::zeros(dims),
        aux: variant.uses_aux().then(|| super::AuxNetParams::zeros(dims)),
        variant,
        profile,
    };
    let n_tensors = r.u32().ok_or_else(|| corrupt("truncated tensor count"))? as usize;
    let expected = model.named_tensors().len();
    if n_tensors != expected {
        return Err(corrupt(&format!(
            "tensor count {n_tensors} does not match {expected} for variant {variant}"
        )));
    }
    for _ in 0..n_tensors {
        let name = r.string().ok_or_else(|| corrupt("truncated tensor name"))?;
        let rank = r.u32().ok_or_else(|| corrupt("truncated rank"))? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32().ok_or_else(|| corrupt("truncated shape"))? as usize);
        }
        let len: usize = shape.iter().product();
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            let raw = r.take(4).ok_or_else(|| corrupt("truncated tensor data"))?;
            values.push(f64::from(f32::from_le_bytes(raw.try_into().unwrap())));
        }
        let mut tensors = model.named_tensors_mut();
        let slot = tensors
            .iter_mut()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| corrupt(&format!("unknown tensor {name}")))?;
        if slot.1.shape() != shape.as_slice() {
            return Err(corrupt(&format!(
                "tensor {name} has shape {shape:?}, expected {:?}",
                slot.1.shape()
            )));
        }
        for (dst, src) in slot.1.iter_mut().zip(values) {
            *dst = src;
        }
    }
    if r.pos != bytes.len() {
        return Err(corrupt("trailing bytes"));
    }
    Ok(model)
}

/// Load and require a specific variant.
pub fn load_checkpoint_expecting(path: &Path, variant: Variant) -> Result<ModelParams, NetError> {
    let model = load_checkpoint(path)?;
    if model.variant != variant {
        return Err(NetError::VariantMismatch {
            expected: variant.to_string(),
            found: model.variant.to_string(),
        });
    }
    Ok(model)
}

fn write_string(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return None;
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Some(out)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn string(&mut self) -> Option<String> {
        let len = self.u32()? as usize;
        if len > 4096 {
            return None;
        }
        self.take(len)
            .and_then(|b| String::from_utf8(b.to_vec()).ok())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn tmp(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join("ambisep-ckpt-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let model = ModelParams::init(Variant::M2Plus, SizeProfile::Desk, 12, 9);
        let a = tmp("a.ckpt");
        let b = tmp("b.ckpt");
        save_checkpoint(&a, &model).unwrap();
        let loaded = load_checkpoint(&a).unwrap();
        assert_eq!(loaded.variant, Variant::M2Plus);
        assert_eq!(loaded.dims(), model.dims());
        save_checkpoint(&b, &loaded).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        // loading again gives identical parameters
        assert_eq!(load_checkpoint(&b).unwrap(), loaded);
    }

    #[test]
    fn m1_checkpoints_carry_no_aux_tensors() {
        let model = ModelParams::init(Variant::M1, SizeProfile::Desk, 12, 3);
        let path = tmp("m1.ckpt");
        save_checkpoint(&path, &model).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert!(loaded.aux.is_none());
    }

    #[test]
    fn variant_mismatch_is_detected() {
        let model = ModelParams::init(Variant::M2Plus, SizeProfile::Desk, 12, 9);
        let path = tmp("variant.ckpt");
        save_checkpoint(&path, &model).unwrap();
        assert!(matches!(
            load_checkpoint_expecting(&path, Variant::M1),
            Err(NetError::VariantMismatch { .. })
        ));
    }

    #[test]
    fn truncated_checkpoint_is_corrupt() {
        let model = ModelParams::init(Variant::M1, SizeProfile::Desk, 12, 9);
        let path = tmp("trunc.ckpt");
        save_checkpoint(&path, &model).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let cut = tmp("cut.ckpt");
        std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            load_checkpoint(&cut),
            Err(NetError::CorruptCheckpoint { .. })
        ));
    }

    #[test]
    fn garbage_is_corrupt_not_panic() {
        let path = tmp("garbage.ckpt");
        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(NetError::CorruptCheckpoint { .. })
        ));
    }
}
