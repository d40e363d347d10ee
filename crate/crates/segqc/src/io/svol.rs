//! SVOL container: a fixed 8-byte magic, a little-endian u32 header
//! length, a UTF-8 JSON header, then the raw little-endian payload.
//! Voxel order is x-fastest (`((z·Y)+y)·X + x`), probability payloads
//! are class-major. The writer is canonical (fixed key order, no
//! whitespace), so value → bytes → value → bytes reproduces the exact
//! buffer.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Dims, IntensityVolume, LabelVolume, ProbStack};

pub const MAGIC: &[u8; 8] = b"SVOLQC01";

const MAX_HEADER_LEN: usize = 1 << 20;
const MAX_VOXELS: u64 = 1 << 40;

/// Any volume an SVOL container can hold.
#[derive(Debug, Clone, PartialEq)]
pub enum Volume {
    Labels(LabelVolume),
    Prob(ProbStack),
    Intensity(IntensityVolume),
}

impl Volume {
    pub fn kind(&self) -> &'static str {
        match self {
            Volume::Labels(_) => "labels",
            Volume::Prob(_) => "prob",
            Volume::Intensity(_) => "intensity",
        }
    }

    pub fn dims(&self) -> Dims {
        match self {
            Volume::Labels(v) => v.dims(),
            Volume::Prob(v) => v.dims(),
            Volume::Intensity(v) => v.dims(),
        }
    }
}

impl From<LabelVolume> for Volume {
    fn from(v: LabelVolume) -> Self {
        Volume::Labels(v)
    }
}

impl From<ProbStack> for Volume {
    fn from(v: ProbStack) -> Self {
        Volume::Prob(v)
    }
}

impl From<IntensityVolume> for Volume {
    fn from(v: IntensityVolume) -> Self {
        Volume::Intensity(v)
    }
}

// Field order here is the canonical key order in the container.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    kind: String,
    dims: [u64; 3],
    num_classes: u64,
    dtype: String,
}

pub fn write_svol(volume: &Volume) -> Vec<u8> {
    let dims = volume.dims();
    let (num_classes, dtype) = match volume {
        Volume::Labels(v) => (v.num_classes() as u64, "u16"),
        Volume::Prob(v) => (v.num_classes() as u64, "f32"),
        Volume::Intensity(_) => (0, "f32"),
    };
    let header = Header {
        kind: volume.kind().to_string(),
        dims: [dims.x as u64, dims.y as u64, dims.z as u64],
        num_classes,
        dtype: dtype.to_string(),
    };
    // Struct field order is the serialization order, so this is stable.
    let header_json = serde_json::to_vec(&header).expect("header serializes");

    let payload_len = match volume {
        Volume::Labels(v) => v.data().len() * 2,
        Volume::Prob(v) => v.data().len() * 4,
        Volume::Intensity(v) => v.data().len() * 4,
    };
    let mut out = Vec::with_capacity(12 + header_json.len() + payload_len);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    match volume {
        Volume::Labels(v) => {
            for &l in v.data() {
                out.extend_from_slice(&l.to_le_bytes());
            }
        }
        Volume::Prob(v) => {
            for &p in v.data() {
                out.extend_from_slice(&p.to_le_bytes());
            }
        }
        Volume::Intensity(v) => {
            for &x in v.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    out
}

pub fn read_svol(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 12 {
        return Err(Error::TruncatedPayload {
            expected: 12,
            actual: bytes.len(),
        });
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if header_len > MAX_HEADER_LEN {
        return Err(Error::InvalidHeaderField(format!(
            "header length {header_len} exceeds {MAX_HEADER_LEN}"
        )));
    }
    let header_end = 12 + header_len;
    if bytes.len() < header_end {
        return Err(Error::TruncatedPayload {
            expected: header_end,
            actual: bytes.len(),
        });
    }
    let header: Header = serde_json::from_slice(&bytes[12..header_end])
        .map_err(|e| Error::InvalidHeaderField(e.to_string()))?;

    let [dx, dy, dz] = header.dims;
    if dx == 0 || dy == 0 || dz == 0 {
        return Err(Error::InvalidHeaderField(format!(
            "zero-sized dims [{dx}, {dy}, {dz}]"
        )));
    }
    let voxels = dx
        .checked_mul(dy)
        .and_then(|v| v.checked_mul(dz))
        .filter(|&v| v <= MAX_VOXELS)
        .ok_or_else(|| {
            Error::InvalidHeaderField(format!("dims [{dx}, {dy}, {dz}] overflow"))
        })? as usize;
    let dims = Dims::new(dx as usize, dy as usize, dz as usize);

    let (elems, elem_size) = match (header.kind.as_str(), header.dtype.as_str()) {
        ("labels", "u16") => {
            check_classes(&header)?;
            (voxels, 2)
        }
        ("prob", "f32") => {
            check_classes(&header)?;
            let c = header.num_classes as usize;
            let elems = voxels.checked_mul(c).ok_or_else(|| {
                Error::InvalidHeaderField("prob payload size overflows".to_string())
            })?;
            (elems, 4)
        }
        ("intensity", "f32") => {
            if header.num_classes != 0 {
                return Err(Error::InvalidHeaderField(format!(
                    "intensity volume with num_classes {}",
                    header.num_classes
                )));
            }
            (voxels, 4)
        }
        (kind, dtype) => {
            return Err(Error::InvalidHeaderField(format!(
                "unsupported kind/dtype pair {kind:?}/{dtype:?}"
            )))
        }
    };

    let payload = &bytes[header_end..];
    let expected = elems * elem_size;
    if payload.len() != expected {
        return Err(Error::TruncatedPayload {
            expected: header_end + expected,
            actual: bytes.len(),
        });
    }

    match header.kind.as_str() {
        "labels" => {
            let data: Vec<u16> = payload
                .chunks_exact(2)
                .map(|b| u16::from_le_bytes([b[0], b[1]]))
                .collect();
            Ok(Volume::Labels(LabelVolume::new(
                dims,
                header.num_classes as u16,
                data,
            )?))
        }
        "prob" => {
            let data: Vec<f32> = payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            Ok(Volume::Prob(ProbStack::new(
                dims,
                header.num_classes as u16,
                data,
            )?))
        }
        _ => {
            let data: Vec<f32> = payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            Ok(Volume::Intensity(IntensityVolume::new(dims, data)?))
        }
    }
}

fn check_classes(header: &Header) -> Result<()> {
    if header.num_classes < 2 || header.num_classes > u16::MAX as u64 {
        return Err(Error::InvalidHeaderField(format!(
            "num_classes {} outside 2..=65535",
            header.num_classes
        )));
    }
    Ok(())
}

pub fn write_svol_file(path: impl AsRef<Path>, volume: &Volume) -> Result<()> {
    fs::write(path, write_svol(volume))?;
    Ok(())
}

pub fn read_svol_file(path: impl AsRef<Path>) -> Result<Volume> {
    read_svol(&fs::read(path)?)
}
