//! Planar float raster files.
//!
//! Layout: `"PFR1"`, u32 height, width, channels (little-endian), the
//! channel-planar row-major f32 payload, then a u32 byte length and a JSON
//! metadata trailer. The length word may be absent in trailer-less files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::write_atomic;
use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::speckle::{default_polarization_names, PolStack};

pub const PFR_MAGIC: &[u8; 4] = b"PFR1";
const HEADER_LEN: u64 = 16;

/// JSON trailer contents.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PfrMetadata {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polarizations: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

impl PfrMetadata {
    pub fn for_stack(stack: &PolStack) -> Self {
        Self {
            labels: stack.channel_labels(),
            polarizations: Some(stack.polarizations()),
            names: stack.polarization_names().to_vec(),
            notes: None,
        }
    }

    pub fn with_notes(mut self, notes: impl Into<String>) -> Self {
        self.notes = Some(notes.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PfrFile {
    pub raster: Raster,
    pub metadata: Option<PfrMetadata>,
}

impl PfrFile {
    /// Interprets the channels as `[Re₁, Im₁, Re₂, Im₂, …]`, taking
    /// polarization names from the trailer when present.
    pub fn into_stack(self) -> Result<PolStack> {
        let c = self.raster.channels();
        if c == 0 || !c.is_multiple_of(2) {
            return Err(Error::contract(format!(
                "a polarimetric stack needs an even, non-zero channel count, file has {c}"
            )));
        }
        let names = self
            .metadata
            .map(|m| m.names)
            .filter(|n| n.len() == c / 2)
            .unwrap_or_else(|| default_polarization_names(c / 2));
        PolStack::new(self.raster, names)
    }
}

/// Serialises a raster; values are stored as f32.
pub fn encode_pfr(raster: &Raster, metadata: Option<&PfrMetadata>) -> Result<Vec<u8>> {
    let (c, h, w) = raster.shape();
    let dim =
        |v: usize, what: &str| u32::try_from(v).map_err(|_| Error::contract(format!("{what} {v} does not fit in u32")));
    let trailer = match metadata {
        Some(m) => serde_json::to_vec(m).map_err(|e| Error::contract(format!("metadata: {e}")))?,
        None => Vec::new(),
    };
    let mut out = Vec::with_capacity(HEADER_LEN as usize + 4 * raster.data().len() + 4 + trailer.len());
    out.extend_from_slice(PFR_MAGIC);
    out.extend_from_slice(&dim(h, "height")?.to_le_bytes());
    out.extend_from_slice(&dim(w, "width")?.to_le_bytes());
    out.extend_from_slice(&dim(c, "channels")?.to_le_bytes());
    for &v in raster.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.extend_from_slice(&dim(trailer.len(), "trailer length")?.to_le_bytes());
    out.extend_from_slice(&trailer);
    Ok(out)
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4 bytes"))
}

pub fn decode_pfr(bytes: &[u8]) -> Result<PfrFile> {
    if bytes.len() < HEADER_LEN as usize {
        return Err(Error::Decode(format!(
            "truncated PFR header: expected at least {HEADER_LEN} bytes, got {}",
            bytes.len()
        )));
    }
    if &bytes[..4] != PFR_MAGIC {
        return Err(Error::Decode(format!("bad PFR magic {:?}", &bytes[..4])));
    }
    let (h, w, c) = (u32_at(bytes, 4), u32_at(bytes, 8), u32_at(bytes, 12));
    let payload = (c as u64)
        .checked_mul(h as u64)
        .and_then(|n| n.checked_mul(w as u64))
        .and_then(|n| n.checked_mul(4))
        .filter(|&n| n <= isize::MAX as u64)
        .ok_or_else(|| Error::Decode(format!("PFR dimensions {c}x{h}x{w} overflow")))?;
    let data_end = HEADER_LEN + payload;
    let actual = bytes.len() as u64;
    if actual < data_end {
        return Err(Error::Decode(format!(
            "truncated PFR payload: expected {} bytes, got {actual}",
            data_end + 4
        )));
    }
    let metadata = if actual == data_end {
        None
    } else {
        if actual < data_end + 4 {
            return Err(Error::Decode(format!(
                "truncated PFR trailer length: expected {} bytes, got {actual}",
                data_end + 4
            )));
        }
        let len = u32_at(bytes, data_end as usize) as u64;
        let expected = data_end + 4 + len;
        if actual != expected {
            return Err(Error::Decode(format!(
                "PFR length mismatch: expected {expected} bytes, got {actual}"
            )));
        }
        if len == 0 {
            None
        } else {
            let text = &bytes[(data_end + 4) as usize..];
            Some(serde_json::from_slice(text).map_err(|e| Error::Decode(format!("bad PFR metadata trailer: {e}")))?)
        }
    };
    let data = bytes[HEADER_LEN as usize..data_end as usize]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
        .collect();
    let raster = Raster::from_vec(c as usize, h as usize, w as usize, data)?;
    Ok(PfrFile { raster, metadata })
}

pub fn write_pfr(path: impl AsRef<Path>, raster: &Raster, metadata: Option<&PfrMetadata>) -> Result<()> {
    write_atomic(path, &encode_pfr(raster, metadata)?)
}

pub fn read_pfr(path: impl AsRef<Path>) -> Result<PfrFile> {
    decode_pfr(&std::fs::read(path)?)
}

pub fn write_stack(path: impl AsRef<Path>, stack: &PolStack) -> Result<()> {
    write_pfr(path, stack.raster(), Some(&PfrMetadata::for_stack(stack)))
}
