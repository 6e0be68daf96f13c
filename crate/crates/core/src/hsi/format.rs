//! HSIC container: little-endian binary cube file with annotations.
//!
//! Layout: magic `HSIC`, u16 version, u32 height/width/bands, bands×f32
//! wavelengths, u32 patient-id length + UTF-8 bytes, f32 volume (band-major,
//! row-major planes), u16 region count, then per region a label byte, u16 id
//! length + UTF-8, and an H×W mask of 0/1 bytes. Read errors report the byte
//! offset at which the file stopped making sense.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::{validate_regions, AnnotatedRegion, HyperspectralCube, Label};

pub(crate) const CUBE_MAGIC: &[u8; 4] = b"HSIC";
pub(crate) const CUBE_VERSION: u16 = 1;

/// Byte-counting reader so every parse error can name its offset.
pub(crate) struct Cursor<R: Read> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    pub(crate) fn new(inner: R) -> Self {
        Cursor { inner, offset: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.offset
    }

    pub(crate) fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.fill(&mut buf, what)?;
        Ok(buf)
    }

    pub(crate) fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let at = self.offset;
        self.inner.read_exact(buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::Format {
                    offset: at,
                    what: format!("truncated while reading {what} ({} bytes)", buf.len()),
                }
            } else {
                Error::Format {
                    offset: at,
                    what: format!("read failure in {what}: {e}"),
                }
            }
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        let mut b = [0u8; 2];
        self.fill(&mut b, what)?;
        Ok(u16::from_le_bytes(b))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    pub(crate) fn string(&mut self, len: usize, what: &str) -> Result<String> {
        let at = self.offset;
        let raw = self.bytes(len, what)?;
        String::from_utf8(raw).map_err(|_| Error::Format {
            offset: at,
            what: format!("{what} is not valid UTF-8"),
        })
    }

    /// Bulk f32 read; far faster than one `f32` call per value.
    pub(crate) fn f32_block(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.bytes(n * 4, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    /// Bulk f64 read, used by the patch cache.
    pub(crate) fn f64_block(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.bytes(n * 8, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }

    pub(crate) fn expect_end(&mut self, what: &str) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe) {
            Ok(0) => Ok(()),
            Ok(_) => Err(Error::Format {
                offset: self.offset,
                what: format!("trailing bytes after {what}"),
            }),
            Err(e) => Err(Error::Format {
                offset: self.offset,
                what: format!("read failure probing end of {what}: {e}"),
            }),
        }
    }
}

pub(crate) fn write_f32_block(w: &mut impl Write, values: &[f32]) -> std::io::Result<()> {
    // 64 KiB staging keeps syscall count low without holding a second copy
    // of the volume.
    let mut buf = Vec::with_capacity(64 * 1024);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
        if buf.len() >= 64 * 1024 {
            w.write_all(&buf)?;
            buf.clear();
        }
    }
    w.write_all(&buf)
}

pub(crate) fn write_f64_block(w: &mut impl Write, values: &[f64]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(64 * 1024);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
        if buf.len() >= 64 * 1024 {
            w.write_all(&buf)?;
            buf.clear();
        }
    }
    w.write_all(&buf)
}

/// Write a cube and its annotations; the pair must satisfy
/// [`validate_regions`] and the cube's own invariants.
pub fn write_cube(
    path: impl AsRef<Path>,
    cube: &HyperspectralCube,
    regions: &[AnnotatedRegion],
) -> Result<()> {
    let path = path.as_ref();
    validate_regions(cube, regions)?;
    if regions.len() > u16::MAX as usize {
        return Err(Error::InvalidInput("too many regions".into()));
    }

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);

    w.write_all(CUBE_MAGIC).map_err(io)?;
    w.write_all(&CUBE_VERSION.to_le_bytes()).map_err(io)?;
    for extent in [cube.height, cube.width, cube.bands] {
        w.write_all(&(extent as u32).to_le_bytes()).map_err(io)?;
    }
    write_f32_block(&mut w, &cube.wavelengths_nm).map_err(io)?;
    w.write_all(&(cube.patient_id.len() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(cube.patient_id.as_bytes()).map_err(io)?;
    write_f32_block(&mut w, &cube.data).map_err(io)?;
    w.write_all(&(regions.len() as u16).to_le_bytes()).map_err(io)?;
    for region in regions {
        w.write_all(&[region.label.as_byte()]).map_err(io)?;
        w.write_all(&(region.region_id.len() as u16).to_le_bytes()).map_err(io)?;
        w.write_all(region.region_id.as_bytes()).map_err(io)?;
        w.write_all(&region.mask).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Read a cube and its annotations, verifying every format invariant.
pub fn read_cube(path: impl AsRef<Path>) -> Result<(HyperspectralCube, Vec<AnnotatedRegion>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut c = Cursor::new(BufReader::new(file));

    let magic = c.bytes(4, "magic")?;
    if magic != CUBE_MAGIC {
        return Err(Error::Format {
            offset: 0,
            what: format!("bad magic {magic:?}, expected {CUBE_MAGIC:?}"),
        });
    }
    let version = c.u16("version")?;
    if version != CUBE_VERSION {
        return Err(Error::Format {
            offset: 4,
            what: format!("unsupported version {version}"),
        });
    }
    let height = c.u32("height")? as usize;
    let width = c.u32("width")? as usize;
    let bands = c.u32("bands")? as usize;
    if height == 0 || width == 0 || bands == 0 {
        return Err(Error::Format {
            offset: 6,
            what: format!("degenerate extents {height}x{width}x{bands}"),
        });
    }

    let wl_offset = c.offset();
    let wavelengths = c.f32_block(bands, "wavelengths")?;
    if !wavelengths.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Format {
            offset: wl_offset,
            what: "wavelengths not strictly ascending".into(),
        });
    }

    let pid_len = c.u32("patient-id length")? as usize;
    let patient_id = c.string(pid_len, "patient id")?;

    let data_offset = c.offset();
    let data = c.f32_block(height * width * bands, "volume data")?;
    if let Some(i) = data.iter().position(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Format {
            offset: data_offset + 4 * i as u64,
            what: format!("intensity {} out of range", data[i]),
        });
    }

    let region_count = c.u16("region count")? as usize;
    let mut regions = Vec::with_capacity(region_count);
    for ri in 0..region_count {
        let label_offset = c.offset();
        let label_byte = c.bytes(1, "region label")?[0];
        let label = Label::from_byte(label_byte).ok_or_else(|| Error::Format {
            offset: label_offset,
            what: format!("region {ri} label byte {label_byte} not 0/1"),
        })?;
        let id_len = c.u16("region id length")? as usize;
        let region_id = c.string(id_len, "region id")?;
        let mask_offset = c.offset();
        let mask = c.bytes(height * width, "region mask")?;
        if let Some(i) = mask.iter().position(|&m| m > 1) {
            return Err(Error::Format {
                offset: mask_offset + i as u64,
                what: format!("mask byte {} not 0/1", mask[i]),
            });
        }
        if !mask.contains(&1) {
            return Err(Error::Format {
                offset: mask_offset,
                what: format!("region '{region_id}' mask is empty"),
            });
        }
        regions.push(AnnotatedRegion { mask, label, region_id });
    }
    c.expect_end("cube file")?;

    let cube = HyperspectralCube::new(height, width, bands, wavelengths, data, patient_id)?;
    validate_regions(&cube, &regions)?;
    Ok((cube, regions))
}
