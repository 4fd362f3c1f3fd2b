//! Binary checkpoint: little-endian, 32-bit floats.
//!
//! ```text
//! "3IGS" | version u32 | variant u32 | iteration u32 | flags u32 (bit 0: specular)
//! gaussians u64 | resolution u32 | components u32 | feature_dim u32
//! bbox min [f32; 3] | bbox max [f32; 3] | extent f32 | background [f32; 3]
//! gaussian arrays (8 groups) | field arrays (7 groups) | shader arrays (6 groups)
//! ```

use std::path::Path;

use illumsplat_core::field::{Aabb, IlluminationField};
use illumsplat_core::gaussian::GaussianSet;
use illumsplat_core::render::Model;
use illumsplat_core::shader::{NeuralShader, ShadingVariant};

use crate::error::IoError;

pub const MAGIC: [u8; 4] = *b"3IGS";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub iteration: u32,
    /// Whether the specular branch was active at `iteration`.
    pub specular: bool,
    pub extent: f32,
    pub background: [f32; 3],
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        let left = self.bytes.len() - self.pos;
        if left < n {
            return Err(IoError::Truncated { offset: self.bytes.len(), needed: n - left });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, IoError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, IoError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32s_into(&mut self, out: &mut [f32]) -> Result<(), IoError> {
        let len = out.len().checked_mul(4).ok_or_else(|| IoError::Format("array too large".into()))?;
        let raw = self.take(len)?;
        for (o, c) in out.iter_mut().zip(raw.chunks_exact(4)) {
            *o = f32::from_le_bytes(c.try_into().unwrap());
        }
        Ok(())
    }
    fn arr3(&mut self) -> Result<[f32; 3], IoError> {
        let mut a = [0.0; 3];
        self.f32s_into(&mut a)?;
        Ok(a)
    }
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let m = &ck.model;
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(&MAGIC);
    w.u32(VERSION);
    w.u32(m.variant().tag() as u32);
    w.u32(ck.iteration);
    w.u32(ck.specular as u32);
    w.u64(m.gaussians.len() as u64);
    w.u32(m.field.resolution() as u32);
    w.u32(m.field.components() as u32);
    w.u32(m.field.feature_dim() as u32);
    w.f32s(&m.field.bbox().min());
    w.f32s(&m.field.bbox().max());
    w.f32s(&[ck.extent]);
    w.f32s(&ck.background);
    for s in m.gaussians.slices() {
        w.f32s(s);
    }
    for s in m.field.slices() {
        w.f32s(s);
    }
    for s in m.shader.slices() {
        w.f32s(s);
    }
    w.0
}

/// Header counts are bounded by the remaining length before any allocation,
/// so a corrupt count reports truncation instead of exhausting memory.
pub fn decode(bytes: &[u8]) -> Result<Checkpoint, IoError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(IoError::Format("bad magic, not a checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(IoError::Format(format!("unsupported version {version}")));
    }
    let tag = r.u32()?;
    let variant = u8::try_from(tag)
        .ok()
        .and_then(ShadingVariant::from_tag)
        .ok_or_else(|| IoError::Format(format!("unknown shading variant {tag}")))?;
    let iteration = r.u32()?;
    let flags = r.u32()?;
    if flags > 1 {
        return Err(IoError::Format(format!("unknown flags {flags:#x}")));
    }
    let n = usize::try_from(r.u64()?).map_err(|_| IoError::Format("gaussian count overflows".into()))?;
    let resolution = r.u32()? as usize;
    let components = r.u32()? as usize;
    let feature_dim = r.u32()? as usize;
    let bmin = r.arr3()?;
    let bmax = r.arr3()?;
    let mut extent = [0.0f32];
    r.f32s_into(&mut extent)?;
    let background = r.arr3()?;

    let per_gaussian: usize = GaussianSet::<f32>::zeros(1).slices().iter().map(|s| s.len()).sum();
    let needed = n.saturating_mul(per_gaussian).saturating_mul(4);
    if needed > bytes.len() - r.pos {
        return Err(IoError::Truncated { offset: bytes.len(), needed: needed - (bytes.len() - r.pos) });
    }
    let field_floats = components
        .saturating_mul(resolution)
        .saturating_mul(resolution.saturating_add(1))
        .saturating_mul(3)
        .saturating_add(components.saturating_mul(3).saturating_mul(feature_dim));
    if field_floats.saturating_mul(4) > bytes.len() - r.pos {
        let have = bytes.len() - r.pos;
        return Err(IoError::Truncated { offset: bytes.len(), needed: field_floats.saturating_mul(4) - have });
    }

    let mut gaussians = GaussianSet::zeros(n);
    for s in gaussians.slices_mut() {
        r.f32s_into(s)?;
    }
    let bbox = Aabb::new(bmin, bmax)?;
    let mut field = IlluminationField::zeros(bbox, resolution, components, feature_dim)?;
    for s in field.slices_mut() {
        r.f32s_into(s)?;
    }
    let mut shader = NeuralShader::zeros(variant, feature_dim);
    for s in shader.slices_mut() {
        r.f32s_into(s)?;
    }
    if r.pos != bytes.len() {
        return Err(IoError::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint {
        model: Model { gaussians, field, shader },
        iteration,
        specular: flags == 1,
        extent: extent[0],
        background,
    })
}

pub fn save(path: &Path, ck: &Checkpoint) -> Result<(), IoError> {
    std::fs::write(path, encode(ck)).map_err(IoError::io(path))
}

pub fn load(path: &Path) -> Result<Checkpoint, IoError> {
    let bytes = std::fs::read(path).map_err(IoError::io(path))?;
    decode(&bytes)
}
