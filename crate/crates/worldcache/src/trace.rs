//! WCTR binary traces: latent taps recorded per step for offline replay.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "WCTR" | version u16 | B,Tf,H,W,D u32 x5 | total_steps u32
//! | taps u8 (bit0 z0, bit1 zk, bit2 zN) | seed u64
//! ```
//!
//! followed by one record per step: the step index as u32, then each
//! present tap as raw f32 values in row-major (B, Tf, H, W, D) order.
//! Values are stored at 32-bit precision while computation is 64-bit, so
//! a round trip is value-identical at f32 resolution. The declared
//! payload size must match the file length exactly; anything shorter or
//! longer is rejected.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{LatentTensor, TensorError, TensorShape};

pub const MAGIC: [u8; 4] = *b"WCTR";
pub const VERSION: u16 = 1;
const HEADER_BYTES: u64 = 4 + 2 + 5 * 4 + 4 + 1 + 8;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic {got:?}, expected \"WCTR\"")]
    BadMagic { got: [u8; 4] },
    #[error("unsupported trace version {got}, expected {VERSION}")]
    UnsupportedVersion { got: u16 },
    #[error("file is {len} bytes, too short for a trace header")]
    TruncatedHeader { len: usize },
    #[error("payload size mismatch: header declares {expected} bytes, file has {actual}")]
    PayloadSizeMismatch { expected: u64, actual: u64 },
    #[error("trace declares {expected} steps but {got} were provided")]
    StepCountMismatch { expected: u32, got: usize },
    #[error("step record {got} found where {expected} was expected")]
    StepIndexMismatch { expected: u32, got: u32 },
    #[error("step {step}: tap {tap} required by the header is absent")]
    MissingTap { step: u32, tap: &'static str },
    #[error("step {step}: tap {tap} present but not declared in the header")]
    UnexpectedTap { step: u32, tap: &'static str },
    #[error("step {step}: tap {tap} has shape {got}, header declares {expected}")]
    TapShapeMismatch { step: u32, tap: &'static str, expected: TensorShape, got: TensorShape },
    #[error("step {step}: tap {tap} holds a non-finite value at index {index}")]
    NonFinite { step: u32, tap: &'static str, index: usize },
    #[error("shape extent exceeds the 32-bit format limit")]
    OversizedShape,
    #[error(transparent)]
    InvalidShape(#[from] TensorError),
}

/// Which taps a trace carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TapMask(u8);

impl TapMask {
    pub const Z0: TapMask = TapMask(0b001);
    pub const ZK: TapMask = TapMask(0b010);
    pub const ZN: TapMask = TapMask(0b100);
    pub const ALL: TapMask = TapMask(0b111);

    pub fn new(z0: bool, zk: bool, zn: bool) -> TapMask {
        TapMask((z0 as u8) | (zk as u8) << 1 | (zn as u8) << 2)
    }

    pub fn from_bits(bits: u8) -> TapMask {
        TapMask(bits & 0b111)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn has_z0(self) -> bool {
        self.0 & 1 != 0
    }

    pub fn has_zk(self) -> bool {
        self.0 & 2 != 0
    }

    pub fn has_zn(self) -> bool {
        self.0 & 4 != 0
    }

    pub fn count(self) -> usize {
        self.0.count_ones() as usize
    }
}

impl std::ops::BitOr for TapMask {
    type Output = TapMask;

    fn bitor(self, rhs: TapMask) -> TapMask {
        TapMask(self.0 | rhs.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub shape: TensorShape,
    pub total_steps: u32,
    pub taps: TapMask,
    pub seed: u64,
}

impl TraceHeader {
    /// Exact on-disk size of a conforming file.
    pub fn file_bytes(&self) -> u64 {
        let per_tap = self.shape.element_count() as u64 * 4;
        HEADER_BYTES + self.total_steps as u64 * (4 + self.taps.count() as u64 * per_tap)
    }
}

#[derive(Debug, Clone)]
pub struct TraceStep {
    pub step: u32,
    pub z0: Option<LatentTensor>,
    pub zk: Option<LatentTensor>,
    pub zn: Option<LatentTensor>,
}

impl TraceStep {
    fn taps(&self) -> [(&'static str, Option<&LatentTensor>); 3] {
        [("z0", self.z0.as_ref()), ("zk", self.zk.as_ref()), ("zn", self.zn.as_ref())]
    }
}

fn tap_flags(mask: TapMask) -> [(&'static str, bool); 3] {
    [("z0", mask.has_z0()), ("zk", mask.has_zk()), ("zn", mask.has_zn())]
}

/// Write a trace file. Steps must be indexed 0..total in order, carry
/// exactly the header's taps, and conform to its shape.
pub fn write_trace(path: &Path, header: &TraceHeader, steps: &[TraceStep]) -> Result<(), TraceError> {
    if steps.len() != header.total_steps as usize {
        return Err(TraceError::StepCountMismatch {
            expected: header.total_steps,
            got: steps.len(),
        });
    }
    let s = header.shape;
    for extent in [s.batch, s.frames, s.height, s.width, s.channels] {
        if extent > u32::MAX as usize {
            return Err(TraceError::OversizedShape);
        }
    }

    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for extent in [s.batch, s.frames, s.height, s.width, s.channels] {
        w.write_all(&(extent as u32).to_le_bytes())?;
    }
    w.write_all(&header.total_steps.to_le_bytes())?;
    w.write_all(&[header.taps.bits()])?;
    w.write_all(&header.seed.to_le_bytes())?;

    let mut buf: Vec<u8> = Vec::with_capacity(s.element_count() * 4);
    for (i, step) in steps.iter().enumerate() {
        let expected = i as u32;
        if step.step != expected {
            return Err(TraceError::StepIndexMismatch { expected, got: step.step });
        }
        w.write_all(&step.step.to_le_bytes())?;
        for ((tap, tensor), (_, declared)) in step.taps().iter().zip(tap_flags(header.taps)) {
            match (tensor, declared) {
                (Some(t), true) => {
                    if t.shape() != s {
                        return Err(TraceError::TapShapeMismatch {
                            step: step.step,
                            tap,
                            expected: s,
                            got: t.shape(),
                        });
                    }
                    buf.clear();
                    for (index, v) in t.data().iter().enumerate() {
                        let f = *v as f32;
                        if !f.is_finite() {
                            return Err(TraceError::NonFinite { step: step.step, tap, index });
                        }
                        buf.extend_from_slice(&f.to_le_bytes());
                    }
                    w.write_all(&buf)?;
                }
                (None, true) => {
                    return Err(TraceError::MissingTap { step: step.step, tap });
                }
                (Some(_), false) => {
                    return Err(TraceError::UnexpectedTap { step: step.step, tap });
                }
                (None, false) => {}
            }
        }
    }
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> &'a [u8] {
        // Total length was validated up front, so reads cannot run out.
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        out
    }

    fn u16(&mut self) -> u16 {
        u16::from_le_bytes(self.take(2).try_into().unwrap())
    }

    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take(4).try_into().unwrap())
    }

    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take(8).try_into().unwrap())
    }
}

/// Read and validate a trace file.
pub fn read_trace(path: &Path) -> Result<(TraceHeader, Vec<TraceStep>), TraceError> {
    let bytes = fs::read(path)?;
    if (bytes.len() as u64) < HEADER_BYTES {
        return Err(TraceError::TruncatedHeader { len: bytes.len() });
    }
    let mut c = Cursor { bytes: &bytes, pos: 0 };

    let mut magic = [0u8; 4];
    magic.copy_from_slice(c.take(4));
    if magic != MAGIC {
        return Err(TraceError::BadMagic { got: magic });
    }
    let version = c.u16();
    if version != VERSION {
        return Err(TraceError::UnsupportedVersion { got: version });
    }
    let extents: Vec<usize> = (0..5).map(|_| c.u32() as usize).collect();
    let shape = TensorShape::new(extents[0], extents[1], extents[2], extents[3], extents[4])?;
    let total_steps = c.u32();
    let taps = TapMask::from_bits(c.take(1)[0]);
    let seed = c.u64();
    let header = TraceHeader { shape, total_steps, taps, seed };

    let expected = header.file_bytes();
    if bytes.len() as u64 != expected {
        return Err(TraceError::PayloadSizeMismatch { expected, actual: bytes.len() as u64 });
    }

    let n = shape.element_count();
    let mut steps = Vec::with_capacity(total_steps as usize);
    for i in 0..total_steps {
        let step = c.u32();
        if step != i {
            return Err(TraceError::StepIndexMismatch { expected: i, got: step });
        }
        let mut read_tap = |tap: &'static str| -> Result<LatentTensor, TraceError> {
            let raw = c.take(n * 4);
            let mut data = Vec::with_capacity(n);
            for (index, chunk) in raw.chunks_exact(4).enumerate() {
                let v = f32::from_le_bytes(chunk.try_into().unwrap());
                if !v.is_finite() {
                    return Err(TraceError::NonFinite { step, tap, index });
                }
                data.push(v as f64);
            }
            Ok(LatentTensor::from_vec(shape, data)?)
        };
        let z0 = if taps.has_z0() { Some(read_tap("z0")?) } else { None };
        let zk = if taps.has_zk() { Some(read_tap("zk")?) } else { None };
        let zn = if taps.has_zn() { Some(read_tap("zn")?) } else { None };
        steps.push(TraceStep { step, z0, zk, zn });
    }
    Ok((header, steps))
}
