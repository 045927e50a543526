use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CdpAttributes, CdpDataset, CdpSample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
pub const PACKED_FILE: &str = "cdp.bin";
pub const MANIFEST_FILE: &str = "manifest.json";
const MAGIC: &[u8; 4] = b"CDP1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub n: usize,
    pub seed: u64,
    pub size: usize,
    pub mix: f32,
}

/// Packed little-endian layout: magic, u32 count, u16 size, then per sample
/// three u8 attribute indices followed by the f32 pixels.
pub fn write_packed(path: &Path, samples: &[CdpSample], size: usize) -> Result<()> {
    let count = u32::try_from(samples.len())
        .map_err(|_| Error::InvalidArgument("too many samples for the packed format".into()))?;
    let size16 = u16::try_from(size).map_err(|_| Error::InvalidArgument(format!("size {size} too large")))?;
    let mut buf = Vec::with_capacity(10 + samples.len() * (3 + 12 * size * size));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&count.to_le_bytes());
    buf.extend_from_slice(&size16.to_le_bytes());
    for s in samples {
        if s.image.shape() != [3, size, size] {
            return Err(Error::Shape(format!(
                "sample image {:?} vs size {size}",
                s.image.shape()
            )));
        }
        let a = &s.attributes;
        buf.extend_from_slice(&[a.color as u8, a.digit as u8, a.position as u8]);
        for v in s.image.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated packed file: need {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

/// Reads a packed file; `source_id` is the position in the file.
pub fn read_packed(path: &Path) -> Result<(Vec<CdpSample>, usize)> {
    let bytes = fs::read(path)?;
    let mut r = Reader { buf: &bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic, not a CDP1 packed file".into()));
    }
    let count = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as usize;
    let size = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
    let px = 3 * size * size;
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let a = r.take(3)?;
        let attributes = CdpAttributes::from_indices(a[0], a[1], a[2])?;
        let raw = r.take(4 * px)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        samples.push(CdpSample {
            image: Tensor::new(vec![3, size, size], data)?,
            attributes,
            source_id: i as u64,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after {count} samples",
            bytes.len() - r.pos
        )));
    }
    Ok((samples, size))
}

/// Writes `cdp.bin` and `manifest.json` into `dir`, creating it if needed.
pub fn save_dataset(dir: &Path, ds: &CdpDataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_packed(&dir.join(PACKED_FILE), &ds.samples, ds.size)?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        n: ds.len(),
        seed: ds.seed,
        size: ds.size,
        mix: ds.mix,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<CdpDataset> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Version {
            found: manifest.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let (samples, size) = read_packed(&dir.join(PACKED_FILE))?;
    if samples.len() != manifest.n || size != manifest.size {
        return Err(Error::Format(format!(
            "manifest says n={} size={}, packed file has n={} size={}",
            manifest.n,
            manifest.size,
            samples.len(),
            size
        )));
    }
    CdpDataset::from_samples(samples, size, manifest.mix, manifest.seed)
}
