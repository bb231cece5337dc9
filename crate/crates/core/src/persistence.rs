//! Bit-exact file formats: datasets (`SVTF`), model checkpoints (`SVCK`),
//! grayscale PGM field images, and the CSV exports.
//!
//! Everything is little-endian. Dataset payloads are stored as 32-bit
//! floats (observations are 10^4-dimensional; halving the footprint
//! matters), checkpoints keep full 64-bit parameters. Writes go through a
//! temp file in the target directory and are renamed into place.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::field::{Dataset, Datum, FieldError, Provenance};
use crate::models::{Model, ModelKind, ModelSpec, ParamSet, SvaeArch, SvrnnArch, VrnnArch};
use crate::tensor::{Tensor, TensorError};
use crate::training::EpochLoss;

pub const DATASET_MAGIC: &[u8; 4] = b"SVTF";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SVCK";
pub const DATASET_VERSION: u16 = 1;
pub const CHECKPOINT_VERSION: u16 = 1;

const FLAG_SUPPORT: u8 = 1 << 0;
const FLAG_GENERATED: u8 = 1 << 1;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected {expected:?}, got {got:?}")]
    BadMagic { expected: String, got: Vec<u8> },
    #[error("unsupported format version {got}")]
    BadVersion { got: u16 },
    #[error("file truncated while reading {context}")]
    Truncated { context: &'static str },
    #[error("payload holds {got} values but header promises {expected}")]
    CountMismatch { expected: usize, got: usize },
    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    ChecksumMismatch { stored: u64, computed: u64 },
    #[error("unknown model kind tag {got}")]
    BadKind { got: u8 },
    #[error("metadata block is not valid UTF-8")]
    BadMetadata,
    #[error("checkpoint parameters do not match the declared architecture: {detail}")]
    ArchMismatch { detail: String },
    #[error("dataset mixes provenance flags; files are homogeneous")]
    MixedProvenance,
    #[error("time index {t} out of range for horizon {horizon}")]
    FrameOutOfRange { t: usize, horizon: usize },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// FNV-1a over a byte stream; pinned here so the checkpoint trailer is
/// platform-independent.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), PersistError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = match dir {
        Some(dir) => tempfile::NamedTempFile::new_in(dir)?,
        None => tempfile::NamedTempFile::new_in(".")?,
    };
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| PersistError::Io(e.error))?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize, context: &'static str) -> Result<&'a [u8], PersistError> {
        if self.pos + n > self.bytes.len() {
            return Err(PersistError::Truncated { context });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, context: &'static str) -> Result<u8, PersistError> {
        Ok(self.take(1, context)?[0])
    }

    fn u16(&mut self, context: &'static str) -> Result<u16, PersistError> {
        Ok(u16::from_le_bytes(self.take(2, context)?.try_into().unwrap()))
    }

    fn u32(&mut self, context: &'static str) -> Result<u32, PersistError> {
        Ok(u32::from_le_bytes(self.take(4, context)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn metadata_block(ds: &Dataset) -> Vec<u8> {
    let mut block = String::new();
    for (k, v) in ds.metadata() {
        block.push_str(k);
        block.push('=');
        block.push_str(v);
        block.push('\n');
    }
    block.into_bytes()
}

fn provenance_flags(ds: &Dataset) -> Result<u8, PersistError> {
    let mut first: Option<Provenance> = None;
    for d in ds.data() {
        match first {
            None => first = Some(d.provenance()),
            Some(p) if p != d.provenance() => return Err(PersistError::MixedProvenance),
            _ => {}
        }
    }
    Ok(match first {
        Some(Provenance::Support) => FLAG_SUPPORT,
        Some(Provenance::Generated) => FLAG_GENERATED,
        _ => 0,
    })
}

/// Serialize a dataset to the `SVTF` layout.
pub fn dataset_to_bytes(ds: &Dataset) -> Result<Vec<u8>, PersistError> {
    let n = ds.len();
    let t = ds.horizon();
    let side = ds.grid_side();
    let meta = metadata_block(ds);
    let mut out = Vec::with_capacity(27 + meta.len() + n * t * side * side * 4);
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(side as u32).to_le_bytes());
    out.extend_from_slice(&(side as u32).to_le_bytes());
    out.push(provenance_flags(ds)?);
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    for datum in ds.data() {
        for &v in datum.flat() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), PersistError> {
    atomic_write(path.as_ref(), &dataset_to_bytes(ds)?)
}

/// Parse a dataset from the `SVTF` layout.
pub fn dataset_from_bytes(bytes: &[u8]) -> Result<Dataset, PersistError> {
    let mut c = Cursor::new(bytes);
    let magic = c.take(4, "magic")?;
    if magic != DATASET_MAGIC {
        return Err(PersistError::BadMagic {
            expected: String::from_utf8_lossy(DATASET_MAGIC).into_owned(),
            got: magic.to_vec(),
        });
    }
    let version = c.u16("version")?;
    if version != DATASET_VERSION {
        return Err(PersistError::BadVersion { got: version });
    }
    let n = c.u32("count")? as usize;
    let t = c.u32("horizon")? as usize;
    let h = c.u32("height")? as usize;
    let w = c.u32("width")? as usize;
    let flags = c.u8("flags")?;
    let meta_len = c.u32("metadata length")? as usize;
    let meta_bytes = c.take(meta_len, "metadata block")?;
    let meta_str = std::str::from_utf8(meta_bytes).map_err(|_| PersistError::BadMetadata)?;
    let mut metadata = std::collections::BTreeMap::new();
    for line in meta_str.lines() {
        if let Some((k, v)) = line.split_once('=') {
            metadata.insert(k.to_string(), v.to_string());
        }
    }
    let per_datum = t * h * w;
    let expected = n * per_datum;
    let available = (bytes.len() - c.pos) / 4;
    let payload = c.take(expected * 4, "payload")?;
    if !c.done() {
        return Err(PersistError::CountMismatch {
            expected,
            got: available,
        });
    }
    let provenance = if flags & FLAG_SUPPORT != 0 {
        Provenance::Support
    } else if flags & FLAG_GENERATED != 0 {
        Provenance::Generated
    } else {
        Provenance::Real
    };
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        let mut values = Vec::with_capacity(per_datum);
        let base = i * per_datum * 4;
        for j in 0..per_datum {
            let le: [u8; 4] = payload[base + j * 4..base + j * 4 + 4].try_into().unwrap();
            values.push(f64::from(f32::from_le_bytes(le)));
        }
        data.push(Datum::new(
            Tensor::new(vec![t, h * w], values)?,
            provenance,
        ));
    }
    Ok(Dataset::new(data, h, metadata)?)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset, PersistError> {
    dataset_from_bytes(&fs::read(path.as_ref())?)
}

fn kind_tag(kind: ModelKind) -> u8 {
    match kind {
        ModelKind::Svae => 1,
        ModelKind::Vrnn => 2,
        ModelKind::Svrnn => 3,
    }
}

fn arch_extras(spec: &ModelSpec) -> Vec<u32> {
    match spec {
        ModelSpec::Vrnn(a) => vec![a.hidden as u32, a.latent as u32],
        ModelSpec::Svrnn(a) => vec![
            a.hidden_narrow as u32,
            a.hidden_wide as u32,
            a.latent as u32,
        ],
        ModelSpec::Svae(a) => vec![a.base_filters as u32, a.latent as u32],
    }
}

fn spec_from_parts(
    tag: u8,
    grid_side: usize,
    horizon: usize,
    extras: &[u32],
) -> Result<ModelSpec, PersistError> {
    let need = |n: usize| -> Result<(), PersistError> {
        if extras.len() != n {
            return Err(PersistError::ArchMismatch {
                detail: format!("expected {n} arch extras, got {}", extras.len()),
            });
        }
        Ok(())
    };
    Ok(match tag {
        1 => {
            need(2)?;
            ModelSpec::Svae(SvaeArch {
                grid_side,
                horizon,
                base_filters: extras[0] as usize,
                latent: extras[1] as usize,
            })
        }
        2 => {
            need(2)?;
            ModelSpec::Vrnn(VrnnArch {
                grid_side,
                horizon,
                hidden: extras[0] as usize,
                latent: extras[1] as usize,
            })
        }
        3 => {
            need(3)?;
            ModelSpec::Svrnn(SvrnnArch {
                grid_side,
                horizon,
                hidden_narrow: extras[0] as usize,
                hidden_wide: extras[1] as usize,
                latent: extras[2] as usize,
            })
        }
        got => return Err(PersistError::BadKind { got }),
    })
}

/// Serialize a model to the `SVCK` layout with its FNV-1a trailer.
pub fn checkpoint_to_bytes(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(kind_tag(model.kind()));
    out.extend_from_slice(&(model.spec.grid_side() as u32).to_le_bytes());
    out.extend_from_slice(&(model.spec.horizon() as u32).to_le_bytes());
    let extras = arch_extras(&model.spec);
    out.push(extras.len() as u8);
    for e in &extras {
        out.extend_from_slice(&e.to_le_bytes());
    }
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (name, tensor) in model.params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
        for &e in tensor.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let checksum = fnv1a64(&out);
    out.extend_from_slice(&checksum.to_le_bytes());
    out
}

pub fn write_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<(), PersistError> {
    atomic_write(path.as_ref(), &checkpoint_to_bytes(model))
}

/// Parse and validate a checkpoint: checksum first, then architecture
/// conformance of the stored parameters.
pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Model, PersistError> {
    if bytes.len() < 8 {
        return Err(PersistError::Truncated { context: "trailer" });
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(trailer.try_into().unwrap());
    let computed = fnv1a64(body);
    if stored != computed {
        return Err(PersistError::ChecksumMismatch { stored, computed });
    }
    let mut c = Cursor::new(body);
    let magic = c.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(PersistError::BadMagic {
            expected: String::from_utf8_lossy(CHECKPOINT_MAGIC).into_owned(),
            got: magic.to_vec(),
        });
    }
    let version = c.u16("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(PersistError::BadVersion { got: version });
    }
    let tag = c.u8("model kind")?;
    let grid_side = c.u32("grid side")? as usize;
    let horizon = c.u32("horizon")? as usize;
    let extra_count = c.u8("arch extras")? as usize;
    let mut extras = Vec::with_capacity(extra_count);
    for _ in 0..extra_count {
        extras.push(c.u32("arch extra")?);
    }
    let spec = spec_from_parts(tag, grid_side, horizon, &extras)?;
    let param_count = c.u32("parameter count")? as usize;
    let mut params = ParamSet::new();
    for _ in 0..param_count {
        let name_len = c.u32("parameter name length")? as usize;
        let name = std::str::from_utf8(c.take(name_len, "parameter name")?)
            .map_err(|_| PersistError::BadMetadata)?
            .to_string();
        let rank = c.u32("parameter rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32("parameter extent")? as usize);
        }
        let len: usize = shape.iter().product();
        let payload = c.take(len * 8, "parameter payload")?;
        let mut values = Vec::with_capacity(len);
        for i in 0..len {
            let le: [u8; 8] = payload[i * 8..i * 8 + 8].try_into().unwrap();
            values.push(f64::from_le_bytes(le));
        }
        params.push(name, Tensor::new(shape, values)?);
    }
    if !c.done() {
        return Err(PersistError::CountMismatch {
            expected: c.pos,
            got: body.len(),
        });
    }

    // Every architecture-required parameter must be present exactly once,
    // with the declared shape and ordering.
    let declared = spec.param_shapes();
    if declared.len() != params.len() {
        return Err(PersistError::ArchMismatch {
            detail: format!(
                "architecture declares {} parameters, file holds {}",
                declared.len(),
                params.len()
            ),
        });
    }
    for ((name, shape), (got_name, got)) in declared.iter().zip(params.iter()) {
        if name != got_name || shape.as_slice() != got.shape() {
            return Err(PersistError::ArchMismatch {
                detail: format!(
                    "expected {name} {shape:?}, found {got_name} {:?}",
                    got.shape()
                ),
            });
        }
    }
    Ok(Model { spec, params })
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Model, PersistError> {
    checkpoint_from_bytes(&fs::read(path.as_ref())?)
}

/// Export one time slice of a datum as a binary PGM (P5) image.
///
/// Grey levels are min-max normalized over the whole datum, not the single
/// frame, so intensity decay across time stays visible in an image series.
/// A constant datum maps to mid-gray.
pub fn export_field_image(
    datum: &Datum,
    t: usize,
    side: usize,
    path: impl AsRef<Path>,
) -> Result<(), PersistError> {
    if t >= datum.horizon() {
        return Err(PersistError::FrameOutOfRange {
            t,
            horizon: datum.horizon(),
        });
    }
    let all = datum.flat();
    let min = all.iter().copied().fold(f64::INFINITY, f64::min);
    let max = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let frame = datum.at(t);
    let mut out = format!("P5\n{side} {side}\n255\n").into_bytes();
    if max > min {
        let scale = 255.0 / (max - min);
        out.extend(frame.iter().map(|&v| ((v - min) * scale).round() as u8));
    } else {
        out.extend(std::iter::repeat(128u8).take(frame.len()));
    }
    atomic_write(path.as_ref(), &out)
}

/// Loss-history CSV: `epoch,reconstruction,kl_primary,kl_shared,total`.
pub fn loss_history_csv(history: &[EpochLoss]) -> String {
    let mut out = String::from("epoch,reconstruction,kl_primary,kl_shared,total\n");
    for e in history {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            e.epoch,
            e.breakdown.reconstruction,
            e.breakdown.kl_primary,
            e.breakdown.kl_shared,
            e.breakdown.total
        ));
    }
    out
}

/// Projected-coordinate CSV for 3-D scatter plots: `x,y,z,dataset`.
pub fn projection_csv(groups: &[(String, Vec<Vec<f64>>)]) -> String {
    let mut out = String::from("x,y,z,dataset\n");
    for (label, coords) in groups {
        for c in coords {
            let x = c.first().copied().unwrap_or(0.0);
            let y = c.get(1).copied().unwrap_or(0.0);
            let z = c.get(2).copied().unwrap_or(0.0);
            out.push_str(&format!("{x},{y},{z},{label}\n"));
        }
    }
    out
}

/// Write a text artifact (CSV, report) atomically.
pub fn write_text(path: impl AsRef<Path>, content: &str) -> Result<(), PersistError> {
    atomic_write(path.as_ref(), content.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn tiny_dataset() -> Dataset {
        let mut metadata = BTreeMap::new();
        metadata.insert("kind".to_string(), "pool".to_string());
        metadata.insert("seed".to_string(), "7".to_string());
        let values: Vec<f64> = (0..8).map(|v| v as f64 / 4.0).collect();
        let datum = Datum::new(Tensor::new(vec![2, 4], values).unwrap(), Provenance::Real);
        Dataset::new(vec![datum], 2, metadata).unwrap()
    }

    #[test]
    fn dataset_golden_bytes() {
        // Independent re-encoding of the documented layout.
        let ds = tiny_dataset();
        let mut expected: Vec<u8> = Vec::new();
        expected.extend_from_slice(b"SVTF");
        expected.extend_from_slice(&1u16.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes()); // N
        expected.extend_from_slice(&2u32.to_le_bytes()); // T
        expected.extend_from_slice(&2u32.to_le_bytes()); // H
        expected.extend_from_slice(&2u32.to_le_bytes()); // W
        expected.push(0); // flags: real data
        let meta = b"kind=pool\nseed=7\n";
        expected.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        expected.extend_from_slice(meta);
        for i in 0..8 {
            expected.extend_from_slice(&(i as f32 / 4.0).to_le_bytes());
        }
        assert_eq!(dataset_to_bytes(&ds).unwrap(), expected);
    }

    #[test]
    fn dataset_roundtrip_at_stored_precision() {
        let ds = tiny_dataset();
        let bytes = dataset_to_bytes(&ds).unwrap();
        let back = dataset_from_bytes(&bytes).unwrap();
        assert_eq!(back.metadata(), ds.metadata());
        assert_eq!(back.len(), 1);
        for (a, b) in back.data()[0].flat().iter().zip(ds.data()[0].flat()) {
            assert_eq!(*a, f64::from(*b as f32));
        }
        // Write-read-write is byte-stable.
        assert_eq!(dataset_to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn dataset_corrupted_magic_names_expected() {
        let mut bytes = dataset_to_bytes(&tiny_dataset()).unwrap();
        bytes[0] = b'X';
        match dataset_from_bytes(&bytes) {
            Err(PersistError::BadMagic { expected, .. }) => assert_eq!(expected, "SVTF"),
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }

    #[test]
    fn dataset_truncation_is_detected() {
        let bytes = dataset_to_bytes(&tiny_dataset()).unwrap();
        let cut = &bytes[..bytes.len() - 5];
        assert!(matches!(
            dataset_from_bytes(cut),
            Err(PersistError::Truncated { .. })
        ));
    }

    #[test]
    fn pgm_normalization_cases() {
        use tempfile::tempdir;
        let dir = tempdir().unwrap();

        // Constant field maps to uniform mid-gray.
        let flat = Datum::new(Tensor::full(&[1, 4], 3.0), Provenance::Real);
        let p = dir.path().join("flat.pgm");
        export_field_image(&flat, 0, 2, &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..9], b"P5\n2 2\n25");
        assert_eq!(&bytes[bytes.len() - 4..], &[128, 128, 128, 128]);

        // Hottest point over the datum is 255 in its frame.
        let values = vec![1.0, 2.0, 0.0, 5.0, 1.0, 1.0, 1.0, 1.0];
        let datum = Datum::new(Tensor::new(vec![2, 4], values).unwrap(), Provenance::Real);
        let p = dir.path().join("hot.pgm");
        export_field_image(&datum, 0, 2, &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        let pixels = &bytes[bytes.len() - 4..];
        assert_eq!(pixels[3], 255);
        assert_eq!(pixels[2], 0);

        // Out-of-range frame is an error.
        assert!(matches!(
            export_field_image(&datum, 2, 2, dir.path().join("no.pgm")),
            Err(PersistError::FrameOutOfRange { .. })
        ));
    }
}
