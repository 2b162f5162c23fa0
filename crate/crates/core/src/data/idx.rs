//! IDX (MNIST-style) image and label files, optionally gzip-compressed.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out).map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Idx(format!("truncated header reading {what}")))
}

/// Returns `(count, rows, cols, pixels scaled to [0,1])`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<f64>)> {
    let magic = be_u32(bytes, 0, "magic")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Idx(format!("bad image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")));
    }
    let n = be_u32(bytes, 4, "image count")? as usize;
    let rows = be_u32(bytes, 8, "rows")? as usize;
    let cols = be_u32(bytes, 12, "cols")? as usize;
    let need = n * rows * cols;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(Error::Idx(format!("truncated image data: {} of {need} bytes", body.len())));
    }
    Ok((n, rows, cols, body[..need].iter().map(|&p| p as f64 / 255.0).collect()))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0, "magic")?;
    if magic != LABELS_MAGIC {
        return Err(Error::Idx(format!("bad label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")));
    }
    let n = be_u32(bytes, 4, "label count")? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::Idx(format!("truncated label data: {} of {n} bytes", body.len())));
    }
    Ok(body[..n].iter().map(|&l| l as usize).collect())
}

/// Load an image/label IDX pair into a `[n, 1, rows, cols]` dataset.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let (n, rows, cols, pixels) = parse_idx_images(&read_maybe_gz(images.as_ref())?)?;
    let labels = parse_idx_labels(&read_maybe_gz(labels.as_ref())?)?;
    if labels.len() != n {
        return Err(Error::Idx(format!("{n} images but {} labels", labels.len())));
    }
    if n == 0 {
        return Err(Error::Idx("empty file".into()));
    }
    let classes = labels.iter().max().map_or(1, |m| m + 1);
    let inputs = Tensor::new(vec![n, 1, rows, cols], pixels)?;
    Dataset::new(inputs, labels, classes, Split::Train)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn images(n: u32, r: u32, c: u32, px: &[u8]) -> Vec<u8> {
        let mut b = IMAGES_MAGIC.to_be_bytes().to_vec();
        for v in [n, r, c] {
            b.extend(v.to_be_bytes());
        }
        b.extend(px);
        b
    }

    fn labels(ls: &[u8]) -> Vec<u8> {
        let mut b = LABELS_MAGIC.to_be_bytes().to_vec();
        b.extend((ls.len() as u32).to_be_bytes());
        b.extend(ls);
        b
    }

    #[test]
    fn header_bytes_and_scaling() {
        let bytes = images(1, 2, 2, &[0, 255, 51, 102]);
        assert_eq!(&bytes[..4], &[0x00, 0x00, 0x08, 0x03]);
        let (n, r, c, px) = parse_idx_images(&bytes).unwrap();
        assert_eq!((n, r, c), (1, 2, 2));
        assert_eq!(px, vec![0.0, 1.0, 0.2, 0.4]);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut bytes = images(1, 2, 2, &[0, 0, 0, 0]);
        bytes[3] = 0x01;
        assert!(matches!(parse_idx_images(&bytes), Err(Error::Idx(_))));
        assert!(parse_idx_images(&images(2, 2, 2, &[0; 5])).is_err());
        assert!(parse_idx_images(&[0, 0, 8]).is_err());
        assert!(parse_idx_labels(&images(1, 1, 1, &[0])).is_err());
    }

    #[test]
    fn count_mismatch_and_gzip() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img.idx.gz");
        let lp = dir.path().join("lbl.idx");
        let mut gz = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
        gz.write_all(&images(2, 1, 2, &[0, 255, 255, 0])).unwrap();
        fs::write(&ip, gz.finish().unwrap()).unwrap();
        fs::write(&lp, labels(&[1, 0])).unwrap();
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.inputs.shape(), &[2, 1, 1, 2]);
        assert_eq!(ds.labels, vec![1, 0]);
        assert_eq!(ds.classes, 2);

        fs::write(&lp, labels(&[1, 0, 1])).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Idx(_))));
    }
}
