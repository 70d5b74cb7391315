//! Container file: a magic line, one line of JSON header, then a payload of
//! little-endian `f32` values.
//!
//! ```text
//! SLMM-CONTAINER\n
//! {"dims":[..],"format_version":"1",...,"sections":[{"cols":N,"name":"noisy","offset":0,"rows":L},..]}\n
//! <payload>
//! ```
//!
//! Each section is a row-major matrix starting `offset` bytes into the
//! payload. Images are `L x N`, so the payload is frame-major with voxels
//! in `x, y, z` order (`z` fastest). Sections are contiguous and the payload
//! length must equal the declared sizes exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use slmm_core::{ImageGeometry, Mat};

use crate::error::{CliError, Result};
use crate::fsutil::write_atomic;

pub const MAGIC: &str = "SLMM-CONTAINER";
pub const FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Byte offset into the payload.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: String,
    dims: [usize; 3],
    voxel_size_mm: f64,
    /// `(start, end)` in seconds.
    frame_times: Vec<(f64, f64)>,
    seed: u64,
    provenance: Map<String, Value>,
    sections: Vec<SectionInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub dims: [usize; 3],
    pub voxel_size_mm: f64,
    pub frame_times: Vec<(f64, f64)>,
    pub seed: u64,
    pub provenance: Map<String, Value>,
    pub sections: Vec<(String, Mat)>,
}

impl Container {
    pub fn new(geometry: &ImageGeometry, seed: u64) -> Self {
        Container {
            dims: geometry.dims(),
            voxel_size_mm: geometry.voxel_size_mm(),
            frame_times: geometry.frame_times().to_vec(),
            seed,
            provenance: Map::new(),
            sections: Vec::new(),
        }
    }

    pub fn geometry(&self) -> Result<ImageGeometry> {
        Ok(ImageGeometry::new(self.dims, self.voxel_size_mm, self.frame_times.clone())?)
    }

    pub fn push(&mut self, name: &str, m: Mat) {
        self.sections.push((name.to_string(), m));
    }

    pub fn section(&self, name: &str) -> Option<&Mat> {
        self.sections.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn require(&self, name: &str) -> Result<&Mat> {
        self.section(name)
            .ok_or_else(|| CliError::Data(format!("missing section `{name}`")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0;
        let mut infos = Vec::with_capacity(self.sections.len());
        for (name, m) in &self.sections {
            infos.push(SectionInfo {
                name: name.clone(),
                rows: m.rows(),
                cols: m.cols(),
                offset,
            });
            offset += 4 * m.rows() * m.cols();
        }
        let header = Header {
            format_version: FORMAT_VERSION.to_string(),
            dims: self.dims,
            voxel_size_mm: self.voxel_size_mm,
            frame_times: self.frame_times.clone(),
            seed: self.seed,
            provenance: self.provenance.clone(),
            sections: infos,
        };
        let json = serde_json::to_string(&header).map_err(|e| CliError::Data(format!("header: {e}")))?;
        let mut out = Vec::with_capacity(MAGIC.len() + json.len() + 2 + offset);
        out.extend_from_slice(MAGIC.as_bytes());
        out.push(b'\n');
        out.extend_from_slice(json.as_bytes());
        out.push(b'\n');
        for (_, m) in &self.sections {
            for &v in m.as_slice() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| CliError::Data(format!("not a container file: {msg}"));
        let rest = bytes
            .strip_prefix(MAGIC.as_bytes())
            .and_then(|r| r.strip_prefix(b"\n"))
            .ok_or_else(|| bad("missing magic line"))?;
        let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("unterminated header"))?;
        let header: Header =
            serde_json::from_slice(&rest[..end]).map_err(|e| CliError::Data(format!("container header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(CliError::Data(format!(
                "unsupported container version {}",
                header.format_version
            )));
        }
        let payload = &rest[end + 1..];
        let mut expected = 0;
        let mut sections = Vec::with_capacity(header.sections.len());
        for s in &header.sections {
            if s.offset != expected {
                return Err(bad(&format!("section `{}` is not contiguous", s.name)));
            }
            let len = s
                .rows
                .checked_mul(s.cols)
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| bad("section size overflows"))?;
            let chunk = payload
                .get(s.offset..s.offset + len)
                .ok_or_else(|| bad(&format!("payload too short for section `{}`", s.name)))?;
            let data = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            sections.push((s.name.clone(), Mat::from_vec(s.rows, s.cols, data)?));
            expected += len;
        }
        if payload.len() != expected {
            return Err(bad(&format!(
                "payload has {} bytes, header declares {expected}",
                payload.len()
            )));
        }
        Ok(Container {
            dims: header.dims,
            voxel_size_mm: header.voxel_size_mm,
            frame_times: header.frame_times,
            seed: header.seed,
            provenance: header.provenance,
            sections,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            CliError::Data(msg) => CliError::Data(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }
}
