//! On-disk formats: the float raster (`DNFR`), the 8-bit normal codec with
//! a binary PPM container, and denoiser checkpoints (`DDNZ`).
//!
//! Float raster layout: `b"DNFR"`, version byte `1`, height, width and
//! channels as `u32` little-endian, then `H*W*C` little-endian `f32` values,
//! row-major and channel-interleaved.

use crate::denoisers::{Activation, Mlp, MlpSpec, Parameterization, TensorShape};
use crate::field::LatentField;
use crate::normal::NormalMap;
use std::fs;
use std::path::Path;
use thiserror::Error;

pub const RASTER_MAGIC: &[u8; 4] = b"DNFR";
pub const RASTER_VERSION: u8 = 1;
pub const RASTER_HEADER_LEN: usize = 17;
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DDNZ";
pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("bad magic {found:?}")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported raster version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated raster: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("raster dimensions {height}x{width}x{channels} overflow the address space")]
    DimensionOverflow { height: u64, width: u64, channels: u64 },
    #[error("raster dimensions must be positive, got {height}x{width}x{channels}")]
    ZeroDimension { height: usize, width: usize, channels: usize },
    #[error("{0} unexpected bytes after the payload")]
    TrailingBytes(usize),
    #[error("payload length {payload} does not match {height}x{width}x{channels}")]
    PayloadLength { height: usize, width: usize, channels: usize, payload: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("expected {expected} channels, got {actual}")]
    ChannelCount { expected: usize, actual: usize },
    #[error("malformed image header: {0}")]
    Header(String),
    #[error("raster i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad checkpoint magic {found:?}")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated checkpoint at byte {0}")]
    Truncated(usize),
    #[error("unknown {field} code {value}")]
    UnknownCode { field: &'static str, value: u32 },
    #[error("layer-shape table does not match the declared architecture")]
    ShapeTable,
    #[error("{0} unexpected bytes after the parameters")]
    TrailingBytes(usize),
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Single-precision raster as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatRaster {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl FloatRaster {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self, RasterError> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(RasterError::ZeroDimension { height, width, channels });
        }
        let n = checked_len(height as u64, width as u64, channels as u64)?;
        if data.len() != n {
            return Err(RasterError::PayloadLength { height, width, channels, payload: data.len() });
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn from_latent(field: &LatentField) -> Self {
        let (h, w, c) = field.shape();
        Self { height: h, width: w, channels: c, data: field.values().iter().map(|&v| v as f32).collect() }
    }

    pub fn to_latent(&self) -> Result<LatentField, RasterError> {
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(RasterError::NonFinite(i));
        }
        let values = self.data.iter().map(|&v| v as f64).collect();
        Ok(LatentField::new(self.height, self.width, self.channels, values).expect("validated raster"))
    }

    /// Mask as a one-channel raster of 0/1.
    pub fn from_mask(height: usize, width: usize, mask: &[bool]) -> Result<Self, RasterError> {
        Self::new(height, width, 1, mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect())
    }

    /// Nonzero entries are valid.
    pub fn to_mask(&self) -> Result<Vec<bool>, RasterError> {
        if self.channels != 1 {
            return Err(RasterError::ChannelCount { expected: 1, actual: self.channels });
        }
        Ok(self.data.iter().map(|&v| v != 0.0).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(RASTER_HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(RASTER_MAGIC);
        out.push(RASTER_VERSION);
        for d in [self.height, self.width, self.channels] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, RasterError> {
        if bytes.len() < 4 || &bytes[..4] != RASTER_MAGIC {
            return Err(RasterError::BadMagic { found: bytes[..bytes.len().min(4)].to_vec() });
        }
        if bytes.len() < RASTER_HEADER_LEN {
            return Err(RasterError::Truncated { expected: RASTER_HEADER_LEN, found: bytes.len() });
        }
        if bytes[4] != RASTER_VERSION {
            return Err(RasterError::UnsupportedVersion(bytes[4]));
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[5 + 4 * i..9 + 4 * i].try_into().unwrap()) as usize;
        let (height, width, channels) = (dim(0), dim(1), dim(2));
        if height == 0 || width == 0 || channels == 0 {
            return Err(RasterError::ZeroDimension { height, width, channels });
        }
        let n = checked_len(height as u64, width as u64, channels as u64)?;
        let expected = n
            .checked_mul(4)
            .and_then(|p| p.checked_add(RASTER_HEADER_LEN))
            .ok_or(RasterError::DimensionOverflow { height: height as u64, width: width as u64, channels: channels as u64 })?;
        if bytes.len() < expected {
            return Err(RasterError::Truncated { expected, found: bytes.len() });
        }
        if bytes.len() > expected {
            return Err(RasterError::TrailingBytes(bytes.len() - expected));
        }
        let data = bytes[RASTER_HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { height, width, channels, data })
    }
}

fn checked_len(h: u64, w: u64, c: u64) -> Result<usize, RasterError> {
    h.checked_mul(w)
        .and_then(|hw| hw.checked_mul(c))
        .and_then(|n| n.checked_mul(4))
        .filter(|&bytes| bytes <= isize::MAX as u64)
        .map(|bytes| (bytes / 4) as usize)
        .ok_or(RasterError::DimensionOverflow { height: h, width: w, channels: c })
}

/// Rejects non-finite payloads before touching the file system.
pub fn write_float_raster(path: impl AsRef<Path>, raster: &FloatRaster) -> Result<(), RasterError> {
    if let Some(i) = raster.data.iter().position(|v| !v.is_finite()) {
        return Err(RasterError::NonFinite(i));
    }
    fs::write(path, raster.to_bytes())?;
    Ok(())
}

pub fn read_float_raster(path: impl AsRef<Path>) -> Result<FloatRaster, RasterError> {
    FloatRaster::from_bytes(&fs::read(path)?)
}

/// Interleaved 8-bit raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ByteRaster {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl ByteRaster {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<u8>) -> Result<Self, RasterError> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(RasterError::ZeroDimension { height, width, channels });
        }
        let n = checked_len(height as u64, width as u64, channels as u64)?;
        if data.len() != n {
            return Err(RasterError::PayloadLength { height, width, channels, payload: data.len() });
        }
        Ok(Self { height, width, channels, data })
    }
}

fn encode_component(v: f64) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// `round((n + 1) * 127.5)` per component; invalid pixels become `(0,0,0)`.
/// Returns the raster and the mask that must be stored alongside it.
pub fn encode_normal_8bit(n: &NormalMap) -> (ByteRaster, Vec<bool>) {
    let mut data = Vec::with_capacity(3 * n.len());
    for (v, &valid) in n.normals().iter().zip(n.mask()) {
        if valid {
            data.extend(v.iter().map(|&c| encode_component(c)));
        } else {
            data.extend([0, 0, 0]);
        }
    }
    (ByteRaster { height: n.height(), width: n.width(), channels: 3, data }, n.mask().to_vec())
}

/// `c / 127.5 - 1`, renormalised. Without a mask every pixel is a candidate
/// and only the zero-length sentinel is invalid.
pub fn decode_normal_8bit(raster: &ByteRaster, mask: Option<&[bool]>) -> Result<NormalMap, RasterError> {
    if raster.channels != 3 {
        return Err(RasterError::ChannelCount { expected: 3, actual: raster.channels });
    }
    let n = raster.height * raster.width;
    if let Some(m) = mask {
        if m.len() != n {
            return Err(RasterError::PayloadLength {
                height: raster.height,
                width: raster.width,
                channels: 1,
                payload: m.len(),
            });
        }
    }
    let vectors: Vec<[f64; 3]> = raster
        .data
        .chunks_exact(3)
        .map(|c| [c[0] as f64 / 127.5 - 1.0, c[1] as f64 / 127.5 - 1.0, c[2] as f64 / 127.5 - 1.0])
        .collect();
    let sentinel: Vec<bool> = raster.data.chunks_exact(3).map(|c| c != [0, 0, 0]).collect();
    let mask: Vec<bool> = match mask {
        Some(m) => m.to_vec(),
        None => sentinel,
    };
    Ok(NormalMap::from_vectors(raster.height, raster.width, &vectors, Some(&mask)).expect("finite decoded vectors"))
}

/// Binary PPM (`P6`, maxval 255); three channels only.
pub fn write_ppm(path: impl AsRef<Path>, raster: &ByteRaster) -> Result<(), RasterError> {
    if raster.channels != 3 {
        return Err(RasterError::ChannelCount { expected: 3, actual: raster.channels });
    }
    let mut out = format!("P6\n{} {}\n255\n", raster.width, raster.height).into_bytes();
    out.extend_from_slice(&raster.data);
    fs::write(path, out)?;
    Ok(())
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<ByteRaster, RasterError> {
    let bytes = fs::read(path)?;
    let mut fields = Vec::with_capacity(4);
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(RasterError::Header("unexpected end of header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    if fields[0] != "P6" {
        return Err(RasterError::BadMagic { found: fields[0].as_bytes().to_vec() });
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| RasterError::Header(format!("bad number {s:?}")));
    let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 {
        return Err(RasterError::Header(format!("maxval {maxval} unsupported")));
    }
    i += 1;
    let n = checked_len(height as u64, width as u64, 3)?;
    let payload = bytes.get(i..).unwrap_or(&[]);
    if payload.len() < n {
        return Err(RasterError::Truncated { expected: i + n, found: bytes.len() });
    }
    ByteRaster::new(height, width, 3, payload[..n].to_vec())
}

fn kind_code(kind: Parameterization) -> (u8, u32) {
    match kind {
        Parameterization::Eps => (0, 0),
        Parameterization::X0 => (1, 0),
        Parameterization::XtPlus { t_plus } => (2, t_plus as u32),
    }
}

/// Layout after the magic and version byte: kind `u8`, t+ `u32`,
/// activation `u8`, then `u32` fields time steps, latent, image and
/// semantic channels, injection width, hidden-layer count and widths,
/// tensor count, one `(rows, cols)` pair per tensor, and finally the
/// parameters as `f32`.
pub fn checkpoint_bytes(net: &Mlp) -> Vec<u8> {
    let spec = net.spec();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    let (kind, t_plus) = kind_code(spec.kind);
    out.push(kind);
    out.extend_from_slice(&t_plus.to_le_bytes());
    out.push(spec.activation.code());
    let mut words = vec![
        spec.time_steps,
        spec.latent_channels,
        spec.image_channels,
        spec.semantic_channels,
        spec.injection_hidden,
        spec.hidden.len(),
    ];
    words.extend(&spec.hidden);
    words.push(net.shapes().len());
    for s in net.shapes() {
        words.extend([s.rows, s.cols]);
    }
    for w in words {
        out.extend_from_slice(&(w as u32).to_le_bytes());
    }
    for &p in net.params() {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(CheckpointError::Truncated(self.bytes.len()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Mlp, CheckpointError> {
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic { found: bytes[..bytes.len().min(4)].to_vec() });
    }
    let mut c = Cursor { bytes, pos: 4 };
    let version = c.u8()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let kind_code = c.u8()?;
    let t_plus = c.u32()?;
    let kind = match kind_code {
        0 => Parameterization::Eps,
        1 => Parameterization::X0,
        2 => Parameterization::XtPlus { t_plus: t_plus as usize },
        v => return Err(CheckpointError::UnknownCode { field: "parameterization", value: v as u32 }),
    };
    let act = c.u8()?;
    let activation = Activation::from_code(act).ok_or(CheckpointError::UnknownCode { field: "activation", value: act as u32 })?;
    let time_steps = c.u32()? as usize;
    let latent_channels = c.u32()? as usize;
    let image_channels = c.u32()? as usize;
    let semantic_channels = c.u32()? as usize;
    let injection_hidden = c.u32()? as usize;
    let n_hidden = c.u32()? as usize;
    if n_hidden > bytes.len() {
        return Err(CheckpointError::Truncated(bytes.len()));
    }
    let hidden = (0..n_hidden).map(|_| c.u32().map(|v| v as usize)).collect::<Result<Vec<_>, _>>()?;
    let n_tensors = c.u32()? as usize;
    if n_tensors > bytes.len() {
        return Err(CheckpointError::Truncated(bytes.len()));
    }
    let shapes = (0..n_tensors)
        .map(|_| Ok(TensorShape { rows: c.u32()? as usize, cols: c.u32()? as usize }))
        .collect::<Result<Vec<_>, CheckpointError>>()?;
    let spec = MlpSpec {
        kind,
        latent_channels,
        image_channels,
        semantic_channels,
        injection_hidden,
        hidden,
        activation,
        time_steps,
    };
    let template = Mlp::zeroed(spec).map_err(|e| CheckpointError::Architecture(e.to_string()))?;
    if template.shapes() != shapes.as_slice() {
        return Err(CheckpointError::ShapeTable);
    }
    let n = template.num_params();
    let payload = c.take(n.checked_mul(4).ok_or(CheckpointError::Truncated(bytes.len()))?)?;
    if c.pos != bytes.len() {
        return Err(CheckpointError::TrailingBytes(bytes.len() - c.pos));
    }
    let params: Vec<f64> = payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect();
    if params.iter().any(|p| !p.is_finite()) {
        return Err(CheckpointError::Architecture("non-finite parameter".into()));
    }
    Mlp::from_params(template.spec().clone(), params).map_err(|e| CheckpointError::Architecture(e.to_string()))
}

pub fn save_checkpoint(path: impl AsRef<Path>, net: &Mlp) -> Result<(), CheckpointError> {
    fs::write(path, checkpoint_bytes(net))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Mlp, CheckpointError> {
    checkpoint_from_bytes(&fs::read(path)?)
}
