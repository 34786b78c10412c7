//! Little-endian binary formats for rigs (`HKDR`), models and checkpoints
//! (`HKDM`) and datasets (`HKDD`).
//!
//! Named sections are `(u16 name length, name, u64 count, count × f64)`.
//! Encoders write to a [`Sink`] and decoders read from a [`Source`], so
//! large datasets can stream to and from disk.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::ad::Tensor;
use crate::camera::{CameraParams, Intrinsics};
use crate::data::{DataConfig, Dataset, RigId, Sample};
use crate::hand::{HandParams, HandRig, NUM_BETAS, NUM_KEYPOINTS, PARAM_DIM, POSE_DIM};
use crate::losses::GroundTruth;
use crate::nets::{Model, NetConfig};
use crate::train::{AdamConfig, AdamState};

pub const RIG_MAGIC: [u8; 4] = *b"HKDR";
pub const MODEL_MAGIC: [u8; 4] = *b"HKDM";
pub const DATA_MAGIC: [u8; 4] = *b"HKDD";
pub const VERSION: u32 = 1;

/// Binary artifact decoding failures. Every variant names the section
/// in which decoding stopped.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported {kind} format version {found} (this build reads version {expected})")]
    Version { kind: &'static str, found: u32, expected: u32 },
    #[error("file truncated in section `{section}`")]
    Truncated { section: String },
    #[error("expected section `{expected}`, found `{found}`")]
    SectionName { expected: String, found: String },
    #[error("section `{section}`: expected {expected} values, found {found}")]
    SectionLength { section: String, expected: u64, found: u64 },
    #[error("section `{section}`: {msg}")]
    Invalid { section: String, msg: String },
    #[error("trailing length check failed: trailer says {expected} bytes, file has {found}")]
    TrailingLength { expected: u64, found: u64 },
}

fn invalid(section: &str, msg: impl ToString) -> FormatError {
    FormatError::Invalid {
        section: section.into(),
        msg: msg.to_string(),
    }
}

pub trait Sink {
    fn put(&mut self, bytes: &[u8]);
}

impl Sink for Vec<u8> {
    fn put(&mut self, bytes: &[u8]) {
        self.extend_from_slice(bytes);
    }
}

/// 64-bit FNV-1a over everything written to it.
#[derive(Debug, Clone, Copy)]
pub struct Fnv1a(u64);

impl Default for Fnv1a {
    fn default() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv1a {
    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Sink for Fnv1a {
    fn put(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
}

pub trait Source {
    /// Fills `buf` completely, or returns false if the input ends first.
    fn take(&mut self, buf: &mut [u8]) -> bool;
    /// True when no bytes remain.
    fn at_end(&mut self) -> bool;
}

impl Source for &[u8] {
    fn take(&mut self, buf: &mut [u8]) -> bool {
        if self.len() < buf.len() {
            *self = &[];
            return false;
        }
        let (head, tail) = self.split_at(buf.len());
        buf.copy_from_slice(head);
        *self = tail;
        true
    }

    fn at_end(&mut self) -> bool {
        self.is_empty()
    }
}

struct Writer<'a, S: Sink + ?Sized> {
    sink: &'a mut S,
    written: u64,
}

impl<'a, S: Sink + ?Sized> Writer<'a, S> {
    fn new(sink: &'a mut S) -> Self {
        Self { sink, written: 0 }
    }
    fn bytes(&mut self, b: &[u8]) {
        self.sink.put(b);
        self.written += b.len() as u64;
    }
    fn u8(&mut self, v: u8) {
        self.bytes(&[v]);
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        let mut buf = [0u8; 512];
        for chunk in vs.chunks(64) {
            for (slot, v) in buf.chunks_mut(8).zip(chunk) {
                slot.copy_from_slice(&v.to_le_bytes());
            }
            self.bytes(&buf[..chunk.len() * 8]);
        }
    }
    fn section(&mut self, name: &str, values: &[f64]) {
        self.bytes(&(name.len() as u16).to_le_bytes());
        self.bytes(name.as_bytes());
        self.u64(values.len() as u64);
        self.f64s(values);
    }
    fn tensor(&mut self, name: &str, t: &Tensor) {
        self.u8(t.rank() as u8);
        for &d in t.shape() {
            self.u32(d as u32);
        }
        self.section(name, t.data());
    }
}

struct Reader<'a, S: Source + ?Sized> {
    src: &'a mut S,
    read: u64,
}

impl<'a, S: Source + ?Sized> Reader<'a, S> {
    fn new(src: &'a mut S) -> Self {
        Self { src, read: 0 }
    }
    fn fill(&mut self, buf: &mut [u8], section: &str) -> Result<(), FormatError> {
        if !self.src.take(buf) {
            return Err(FormatError::Truncated { section: section.into() });
        }
        self.read += buf.len() as u64;
        Ok(())
    }
    fn u8(&mut self, section: &str) -> Result<u8, FormatError> {
        let mut b = [0u8; 1];
        self.fill(&mut b, section)?;
        Ok(b[0])
    }
    fn u16(&mut self, section: &str) -> Result<u16, FormatError> {
        let mut b = [0u8; 2];
        self.fill(&mut b, section)?;
        Ok(u16::from_le_bytes(b))
    }
    fn u32(&mut self, section: &str) -> Result<u32, FormatError> {
        let mut b = [0u8; 4];
        self.fill(&mut b, section)?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self, section: &str) -> Result<u64, FormatError> {
        let mut b = [0u8; 8];
        self.fill(&mut b, section)?;
        Ok(u64::from_le_bytes(b))
    }
    fn usize32(&mut self, section: &str) -> Result<usize, FormatError> {
        Ok(self.u32(section)? as usize)
    }
    fn f64(&mut self, section: &str) -> Result<f64, FormatError> {
        Ok(f64::from_bits(self.u64(section)?))
    }
    fn f64s_into(&mut self, out: &mut [f64], section: &str) -> Result<(), FormatError> {
        let mut buf = [0u8; 512];
        for chunk in out.chunks_mut(64) {
            let b = &mut buf[..chunk.len() * 8];
            self.fill(b, section)?;
            for (v, bytes) in chunk.iter_mut().zip(b.chunks(8)) {
                *v = f64::from_le_bytes(bytes.try_into().unwrap());
            }
        }
        Ok(())
    }
    fn f64s(&mut self, n: usize, section: &str) -> Result<Vec<f64>, FormatError> {
        let mut v = vec![0.0; n];
        self.f64s_into(&mut v, section)?;
        Ok(v)
    }
    fn magic(&mut self, expected: [u8; 4], kind: &'static str) -> Result<(), FormatError> {
        let mut found = [0u8; 4];
        self.fill(&mut found, "header")?;
        if found != expected {
            return Err(FormatError::BadMagic { expected, found });
        }
        let v = self.u32("header")?;
        if v != VERSION {
            return Err(FormatError::Version {
                kind,
                found: v,
                expected: VERSION,
            });
        }
        Ok(())
    }
    /// Reads a named section, checking its name and (if given) its length.
    fn section(&mut self, name: &str, expected: Option<usize>) -> Result<Vec<f64>, FormatError> {
        let len = self.u16(name)? as usize;
        let mut raw = vec![0u8; len];
        self.fill(&mut raw, name)?;
        let found = String::from_utf8_lossy(&raw).into_owned();
        if found != name {
            return Err(FormatError::SectionName {
                expected: name.into(),
                found,
            });
        }
        let count = self.u64(name)?;
        if let Some(e) = expected {
            if count != e as u64 {
                return Err(FormatError::SectionLength {
                    section: name.into(),
                    expected: e as u64,
                    found: count,
                });
            }
        }
        // Refuse absurd counts before allocating.
        if count > (1u64 << 34) {
            return Err(invalid(name, format!("implausible element count {count}")));
        }
        self.f64s(count as usize, name)
    }
    fn tensor(&mut self, name: &str) -> Result<Tensor, FormatError> {
        let rank = self.u8(name)? as usize;
        let shape = (0..rank).map(|_| self.usize32(name)).collect::<Result<Vec<_>, _>>()?;
        let data = self.section(name, Some(shape.iter().product()))?;
        Tensor::new(&shape, data).map_err(|e| invalid(name, e))
    }
    fn expect_end(&mut self) -> Result<(), FormatError> {
        if !self.src.at_end() {
            return Err(invalid("end", "unexpected bytes after the last section"));
        }
        Ok(())
    }
}

pub fn write_rig<S: Sink + ?Sized>(sink: &mut S, rig: &HandRig) {
    let mut w = Writer::new(sink);
    w.bytes(&RIG_MAGIC);
    w.u32(VERSION);
    w.u32(rig.num_vertices() as u32);
    w.u32(rig.num_joints() as u32);
    w.section("template", rig.template());
    w.section("blendshapes", rig.blendshapes());
    w.section("joint_regressor", rig.joint_regressor());
    let parents: Vec<f64> = rig.parents().iter().map(|p| p.map_or(-1.0, |i| i as f64)).collect();
    w.section("parents", &parents);
    w.section("skinning_weights", rig.skinning_weights());
    w.section("keypoint_regressor", rig.keypoint_regressor());
}

pub fn read_rig<S: Source + ?Sized>(src: &mut S) -> Result<HandRig, FormatError> {
    let mut r = Reader::new(src);
    r.magic(RIG_MAGIC, "rig")?;
    let nv = r.usize32("header")?;
    let nj = r.usize32("header")?;
    if nv == 0 || nj == 0 {
        return Err(invalid("header", "vertex and joint counts must be positive"));
    }
    let template = r.section("template", Some(3 * nv))?;
    let blendshapes = r.section("blendshapes", None)?;
    if blendshapes.len() % (3 * nv) != 0 {
        return Err(invalid("blendshapes", format!("{} values is not a multiple of 3·N_v", blendshapes.len())));
    }
    let joint_regressor = r.section("joint_regressor", Some(nj * nv))?;
    let raw_parents = r.section("parents", Some(nj))?;
    let parents = raw_parents
        .iter()
        .map(|&p| {
            if p == -1.0 {
                Ok(None)
            } else if p >= 0.0 && libm::trunc(p) == p && p < nj as f64 {
                Ok(Some(p as usize))
            } else {
                Err(invalid("parents", format!("bad parent index {p}")))
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let skinning_weights = r.section("skinning_weights", Some(nv * nj))?;
    let keypoint_regressor = r.section("keypoint_regressor", None)?;
    if keypoint_regressor.is_empty() || !keypoint_regressor.len().is_multiple_of(nv) {
        return Err(invalid("keypoint_regressor", "size is not a positive multiple of N_v"));
    }
    r.expect_end()?;
    HandRig::new(template, blendshapes, joint_regressor, parents, skinning_weights, keypoint_regressor)
        .map_err(|e| invalid("rig", e))
}

pub fn rig_digest(rig: &HandRig) -> u64 {
    let mut h = Fnv1a::default();
    write_rig(&mut h, rig);
    h.finish()
}

/// Optimizer settings and moments stored alongside a model.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSnapshot {
    pub config: AdamConfig,
    pub state: AdamState,
}

fn write_net_config<S: Sink + ?Sized>(w: &mut Writer<'_, S>, cfg: &NetConfig) {
    w.u32(cfg.widths.len() as u32);
    for &c in &cfg.widths {
        w.u32(c as u32);
    }
    w.u32(cfg.head_dim as u32);
    w.u32(cfg.input_channels as u32);
    w.u32(cfg.input_size.0 as u32);
    w.u32(cfg.input_size.1 as u32);
    w.u64(cfg.seed);
}

fn read_net_config<S: Source + ?Sized>(r: &mut Reader<'_, S>) -> Result<NetConfig, FormatError> {
    let s = "config";
    let stages = r.usize32(s)?;
    if stages == 0 || stages > 64 {
        return Err(invalid(s, format!("implausible stage count {stages}")));
    }
    let widths = (0..stages).map(|_| r.usize32(s)).collect::<Result<Vec<_>, _>>()?;
    let cfg = NetConfig {
        widths,
        head_dim: r.usize32(s)?,
        input_channels: r.usize32(s)?,
        input_size: (r.usize32(s)?, r.usize32(s)?),
        seed: r.u64(s)?,
    };
    cfg.validate().map_err(|e| invalid(s, e))?;
    Ok(cfg)
}

pub fn write_model<S: Sink + ?Sized>(sink: &mut S, model: &Model, optimizer: Option<&OptimizerSnapshot>) {
    let mut w = Writer::new(sink);
    w.bytes(&MODEL_MAGIC);
    w.u32(VERSION);
    write_net_config(&mut w, model.config());
    for (name, t) in model.param_names().iter().zip(model.params()) {
        w.section(name, t.data());
    }
    w.u8(model.is_frozen() as u8);
    match optimizer {
        None => w.u8(0),
        Some(o) => {
            w.u8(1);
            let c = &o.config;
            w.section("adam", &[c.lr, c.beta1, c.beta2, c.eps]);
            w.u64(o.state.step);
            w.u32(o.state.m.len() as u32);
            for (i, (m, v)) in o.state.m.iter().zip(&o.state.v).enumerate() {
                w.tensor(&format!("adam.m.{i}"), m);
                w.tensor(&format!("adam.v.{i}"), v);
            }
        }
    }
}

pub fn read_model<S: Source + ?Sized>(src: &mut S) -> Result<(Model, Option<OptimizerSnapshot>), FormatError> {
    let mut r = Reader::new(src);
    r.magic(MODEL_MAGIC, "model")?;
    let cfg = read_net_config(&mut r)?;
    let params = cfg
        .param_specs()
        .iter()
        .map(|(name, shape)| {
            let data = r.section(name, Some(shape.iter().product()))?;
            Tensor::new(shape, data).map_err(|e| invalid(name, e))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let frozen = match r.u8("frozen")? {
        0 => false,
        1 => true,
        b => return Err(invalid("frozen", format!("flag must be 0 or 1, got {b}"))),
    };
    let model = Model::from_parts(cfg, params, frozen).map_err(|e| invalid("parameters", e))?;
    let optimizer = match r.u8("optimizer")? {
        0 => None,
        1 => {
            let h = r.section("adam", Some(4))?;
            let config = AdamConfig {
                lr: h[0],
                beta1: h[1],
                beta2: h[2],
                eps: h[3],
            };
            let step = r.u64("adam")?;
            let n = r.usize32("adam")?;
            if n > 4096 {
                return Err(invalid("adam", format!("implausible moment count {n}")));
            }
            let (mut m, mut v) = (Vec::with_capacity(n), Vec::with_capacity(n));
            for i in 0..n {
                m.push(r.tensor(&format!("adam.m.{i}"))?);
                v.push(r.tensor(&format!("adam.v.{i}"))?);
            }
            Some(OptimizerSnapshot {
                config,
                state: AdamState { step, m, v },
            })
        }
        b => return Err(invalid("optimizer", format!("flag must be 0 or 1, got {b}"))),
    };
    r.expect_end()?;
    Ok((model, optimizer))
}

const MODE_FULL: u8 = 0;
const MODE_2D: u8 = 1;

pub fn write_dataset<S: Sink + ?Sized>(sink: &mut S, ds: &Dataset) {
    let mut w = Writer::new(sink);
    w.bytes(&DATA_MAGIC);
    w.u32(VERSION);
    let c = &ds.config;
    w.u64(c.n_train as u64);
    w.u64(c.n_eval as u64);
    w.u64(c.seed);
    w.u64(ds.rig.digest);
    w.u32(ds.rig.vertices as u32);
    w.u32(c.intrinsics.image_h as u32);
    w.u32(c.intrinsics.image_w as u32);
    w.f64s(&[c.frac_2d_only, c.sigma, c.noise_std, c.intrinsics.focal]);
    for s in &ds.samples {
        let full = s.gt.k3d().is_some();
        w.u8(if full { MODE_FULL } else { MODE_2D });
        w.f64s(s.image.data());
        w.f64s(s.gt.k2d().data());
        match (s.gt.k3d(), s.gt.mano()) {
            (Some(k3d), Some(mano)) => {
                w.f64s(k3d.data());
                w.f64s(mano);
            }
            _ => {
                w.f64s(&[0.0; 3 * NUM_KEYPOINTS]);
                w.f64s(&[0.0; PARAM_DIM]);
            }
        }
        w.f64s(&s.params.theta);
        w.f64s(&s.params.beta);
        w.f64s(&s.camera.translation);
    }
    let total = w.written + 8;
    w.u64(total);
}

pub fn read_dataset<S: Source + ?Sized>(src: &mut S) -> Result<Dataset, FormatError> {
    let mut r = Reader::new(src);
    r.magic(DATA_MAGIC, "dataset")?;
    let h = "header";
    let n_train = r.u64(h)? as usize;
    let n_eval = r.u64(h)? as usize;
    let seed = r.u64(h)?;
    let rig = RigId {
        digest: r.u64(h)?,
        vertices: r.usize32(h)?,
    };
    let (image_h, image_w) = (r.usize32(h)?, r.usize32(h)?);
    let [frac_2d_only, sigma, noise_std, focal] = [r.f64(h)?, r.f64(h)?, r.f64(h)?, r.f64(h)?];
    let config = DataConfig {
        n_train,
        n_eval,
        seed,
        frac_2d_only,
        sigma,
        noise_std,
        intrinsics: Intrinsics { focal, image_h, image_w },
    };
    config.validate().map_err(|e| invalid(h, e))?;
    let n = n_train
        .checked_add(n_eval)
        .filter(|&n| n <= 1 << 24 && image_h * image_w <= 1 << 24)
        .ok_or_else(|| invalid(h, "implausible sample count or image size"))?;
    let pixels = NUM_KEYPOINTS * image_h * image_w;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let sec = |part: &str| format!("sample {i}: {part}");
        let mode = r.u8(&sec("mode"))?;
        let image = r.f64s(pixels, &sec("image"))?;
        let k2d = r.f64s(2 * NUM_KEYPOINTS, &sec("k2d"))?;
        let k3d = r.f64s(3 * NUM_KEYPOINTS, &sec("k3d"))?;
        let mano = r.f64s(PARAM_DIM, &sec("mano"))?;
        let theta = r.f64s(POSE_DIM, &sec("theta"))?;
        let beta = r.f64s(NUM_BETAS, &sec("beta"))?;
        let t = r.f64s(3, &sec("translation"))?;
        let k2d = Tensor::matrix(NUM_KEYPOINTS, 2, k2d);
        let gt = match mode {
            MODE_FULL => GroundTruth::full(k2d, Tensor::matrix(NUM_KEYPOINTS, 3, k3d), mano),
            MODE_2D => GroundTruth::only_2d(k2d),
            b => return Err(invalid(&sec("mode"), format!("unknown annotation mode {b}"))),
        }
        .map_err(|e| invalid(&sec("labels"), e))?;
        samples.push(Sample {
            image: Tensor::new(&[NUM_KEYPOINTS, image_h, image_w], image).map_err(|e| invalid(&sec("image"), e))?,
            gt,
            params: HandParams { theta, beta },
            camera: CameraParams {
                translation: [t[0], t[1], t[2]],
                intrinsics: config.intrinsics,
            },
        });
    }
    let consumed = r.read;
    let trailer = r.u64("trailer")?;
    if trailer != consumed + 8 {
        return Err(FormatError::TrailingLength {
            expected: trailer,
            found: consumed + 8,
        });
    }
    r.expect_end()?;
    Ok(Dataset { config, rig, samples })
}

pub fn encode_rig(rig: &HandRig) -> Vec<u8> {
    let mut v = Vec::new();
    write_rig(&mut v, rig);
    v
}

pub fn decode_rig(mut bytes: &[u8]) -> Result<HandRig, FormatError> {
    read_rig(&mut bytes)
}

pub fn encode_model(model: &Model, optimizer: Option<&OptimizerSnapshot>) -> Vec<u8> {
    let mut v = Vec::new();
    write_model(&mut v, model, optimizer);
    v
}

pub fn decode_model(mut bytes: &[u8]) -> Result<(Model, Option<OptimizerSnapshot>), FormatError> {
    read_model(&mut bytes)
}

pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let mut v = Vec::new();
    write_dataset(&mut v, ds);
    v
}

pub fn decode_dataset(mut bytes: &[u8]) -> Result<Dataset, FormatError> {
    read_dataset(&mut bytes)
}

#[cfg(test)]
mod tests;
