//! HSIP container: cached patch sets, framed like the cube format.
//!
//! Layout: magic `HSIP`, u16 version, u32 patch count, then per patch a u32
//! extent, u32 band count, label byte, u16-length region and patient ids,
//! u32 origin row/col, and the f64 payload band-major. Patches stay f64 on
//! disk so a cached pipeline is bit-identical to an in-memory one.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::hsi::{write_f64_block, Cursor, Label};

use super::Patch;

const PATCH_MAGIC: &[u8; 4] = b"HSIP";
const PATCH_VERSION: u16 = 1;

/// Write a patch set; ids longer than u16 are rejected.
pub fn write_patches(path: impl AsRef<Path>, patches: &[Patch]) -> Result<()> {
    let path = path.as_ref();
    if patches.len() > u32::MAX as usize {
        return Err(Error::InvalidInput("too many patches".into()));
    }
    for p in patches {
        if p.data.len() != p.bands * p.size * p.size {
            return Err(Error::Shape(format!(
                "patch data has {} values for {} bands of {}x{}",
                p.data.len(),
                p.bands,
                p.size,
                p.size
            )));
        }
        if p.region_id.len() > u16::MAX as usize || p.patient_id.len() > u16::MAX as usize {
            return Err(Error::InvalidInput("patch id too long".into()));
        }
    }

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);

    w.write_all(PATCH_MAGIC).map_err(io)?;
    w.write_all(&PATCH_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(patches.len() as u32).to_le_bytes()).map_err(io)?;
    for p in patches {
        w.write_all(&(p.size as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&(p.bands as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&[p.label.as_byte()]).map_err(io)?;
        w.write_all(&(p.region_id.len() as u16).to_le_bytes()).map_err(io)?;
        w.write_all(p.region_id.as_bytes()).map_err(io)?;
        w.write_all(&(p.patient_id.len() as u16).to_le_bytes()).map_err(io)?;
        w.write_all(p.patient_id.as_bytes()).map_err(io)?;
        for o in [p.origin.0, p.origin.1] {
            w.write_all(&(o as u32).to_le_bytes()).map_err(io)?;
        }
        write_f64_block(&mut w, &p.data).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Read a patch set, verifying framing and value finiteness.
pub fn read_patches(path: impl AsRef<Path>) -> Result<Vec<Patch>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut c = Cursor::new(BufReader::new(file));

    let magic = c.bytes(4, "magic")?;
    if magic != PATCH_MAGIC {
        return Err(Error::Format {
            offset: 0,
            what: format!("bad magic {magic:?}, expected {PATCH_MAGIC:?}"),
        });
    }
    let version = c.u16("version")?;
    if version != PATCH_VERSION {
        return Err(Error::Format {
            offset: 4,
            what: format!("unsupported version {version}"),
        });
    }
    let count = c.u32("patch count")? as usize;

    let mut patches = Vec::with_capacity(count);
    for pi in 0..count {
        let extent_offset = c.offset();
        let size = c.u32("patch size")? as usize;
        let bands = c.u32("band count")? as usize;
        if size == 0 || bands == 0 {
            return Err(Error::Format {
                offset: extent_offset,
                what: format!("patch {pi} has degenerate extent {size}x{size}x{bands}"),
            });
        }
        let label_offset = c.offset();
        let label_byte = c.bytes(1, "patch label")?[0];
        let label = Label::from_byte(label_byte).ok_or_else(|| Error::Format {
            offset: label_offset,
            what: format!("patch {pi} label byte {label_byte} not 0/1"),
        })?;
        let rid_len = c.u16("region-id length")? as usize;
        let region_id = c.string(rid_len, "region id")?;
        let pid_len = c.u16("patient-id length")? as usize;
        let patient_id = c.string(pid_len, "patient id")?;
        let origin = (c.u32("origin row")? as usize, c.u32("origin col")? as usize);
        let data_offset = c.offset();
        let data = c.f64_block(bands * size * size, "patch data")?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format {
                offset: data_offset + 8 * i as u64,
                what: format!("patch {pi} value {} not finite", data[i]),
            });
        }
        patches.push(Patch { data, size, bands, label, region_id, patient_id, origin });
    }
    c.expect_end("patch file")?;
    Ok(patches)
}
