//! Shared framing for the binary file formats.
//!
//! ```text
//! offset  size  field
//! 0       4     magic (ASCII)
//! 4       4     version, u32 little-endian
//! 8       8     header length L, u64 little-endian
//! 16      L     JSON header, UTF-8
//! 16+L    pad   zero bytes up to the next multiple of 8
//! ...     N     payload
//! end-4   4     CRC-32 (IEEE) of the payload, u32 little-endian
//! ```

use crate::error::{Error, Result};

pub(crate) fn encode(magic: &[u8; 4], version: u32, header: &[u8], payload: &[u8]) -> Vec<u8> {
    let start = payload_offset(header.len());
    let mut out = Vec::with_capacity(start + payload.len() + 4);
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header);
    out.resize(start, 0);
    out.extend_from_slice(payload);
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
    out
}

/// Splits a file into `(header, payload)` after checking magic, version and
/// digest.
pub(crate) fn decode<'a>(bytes: &'a [u8], magic: &[u8; 4], version: u32) -> Result<(&'a [u8], &'a [u8])> {
    if bytes.len() < 16 {
        return Err(Error::format("magic", "file shorter than the fixed preamble"));
    }
    if &bytes[..4] != magic {
        return Err(Error::format(
            "magic",
            format!(
                "expected {:?}, found {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(&bytes[..4])
            ),
        ));
    }
    let found = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if found != version {
        return Err(Error::format("version", format!("expected {version}, found {found}")));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let start = payload_offset(header_len);
    if header_len > bytes.len() || start + 4 > bytes.len() {
        return Err(Error::format("header_len", "file truncated before the payload"));
    }
    let header = &bytes[16..16 + header_len];
    let payload = &bytes[start..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let actual = crc32fast::hash(payload);
    if stored != actual {
        return Err(Error::format(
            "crc32",
            format!("payload digest {actual:08x} does not match stored {stored:08x}"),
        ));
    }
    Ok((header, payload))
}

fn payload_offset(header_len: usize) -> usize {
    (16 + header_len).div_ceil(8) * 8
}
