//! MNIST-style IDX files (big-endian, unsigned byte payload).

use std::path::Path;

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    source: &'a str,
}

impl<'a> Cursor<'a> {
    fn u32(&mut self) -> Result<u32> {
        let chunk = self.take(4)?;
        Ok(u32::from_be_bytes(chunk.try_into().expect("4 bytes")))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::parse(
                    self.source,
                    0,
                    format!("truncated IDX file: need {n} bytes at offset {}", self.pos),
                )
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let found = self.u32()?;
        if found != expected {
            return Err(Error::BadIdxMagic { expected, found });
        }
        Ok(())
    }
}

/// Decodes an image file into flattened row-major images scaled to [0, 1].
pub fn parse_idx_images(bytes: &[u8], source: &str) -> Result<Vec<Vec<f64>>> {
    let mut cur = Cursor { bytes, pos: 0, source };
    cur.magic(IDX_IMAGES_MAGIC)?;
    let count = cur.u32()? as usize;
    let rows = cur.u32()? as usize;
    let cols = cur.u32()? as usize;
    let pixels = rows * cols;
    let payload = cur.take(count * pixels)?;
    Ok(payload
        .chunks_exact(pixels.max(1))
        .take(count)
        .map(|img| img.iter().map(|&p| f64::from(p) / 255.0).collect())
        .collect())
}

pub fn parse_idx_labels(bytes: &[u8], source: &str) -> Result<Vec<u8>> {
    let mut cur = Cursor { bytes, pos: 0, source };
    cur.magic(IDX_LABELS_MAGIC)?;
    let count = cur.u32()? as usize;
    Ok(cur.take(count)?.to_vec())
}

/// Loads an image/label file pair as `(instance, digit)` tuples.
pub fn load_idx_images(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Vec<(Vec<f64>, u8)>> {
    let read = |p: &Path| std::fs::read(p).map_err(|e| Error::io(p, e));
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = parse_idx_images(&read(ip)?, &ip.display().to_string())?;
    let labels = parse_idx_labels(&read(lp)?, &lp.display().to_string())?;
    if images.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "IDX count mismatch: {} images, {} labels",
            images.len(),
            labels.len()
        )));
    }
    Ok(images.into_iter().zip(labels).collect())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn encode_images(images: &[Vec<u8>], rows: u32, cols: u32) -> Vec<u8> {
        let mut out = IDX_IMAGES_MAGIC.to_be_bytes().to_vec();
        out.extend((images.len() as u32).to_be_bytes());
        out.extend(rows.to_be_bytes());
        out.extend(cols.to_be_bytes());
        images.iter().for_each(|img| out.extend(img));
        out
    }

    pub(crate) fn encode_labels(labels: &[u8]) -> Vec<u8> {
        let mut out = IDX_LABELS_MAGIC.to_be_bytes().to_vec();
        out.extend((labels.len() as u32).to_be_bytes());
        out.extend(labels);
        out
    }

    #[test]
    fn decodes_ten_images() {
        let imgs: Vec<Vec<u8>> = (0..10).map(|i| vec![i as u8 * 20; 784]).collect();
        let parsed = parse_idx_images(&encode_images(&imgs, 28, 28), "t").unwrap();
        assert_eq!(parsed.len(), 10);
        assert!(parsed.iter().all(|x| x.len() == 784));
        assert_eq!(parsed[0], vec![0.0; 784]);
        assert_eq!(parsed[9][0], 180.0 / 255.0);
    }

    #[test]
    fn wrong_magic_rejected() {
        let bytes = encode_labels(&[1, 2]);
        let err = parse_idx_images(&bytes, "t").unwrap_err();
        assert!(err.to_string().contains("bad IDX magic"), "{err}");
    }

    #[test]
    fn truncated_rejected() {
        let mut bytes = encode_images(&[vec![1; 4]], 2, 2);
        bytes.pop();
        assert!(parse_idx_images(&bytes, "t")
            .unwrap_err()
            .to_string()
            .contains("truncated"));
        assert!(parse_idx_labels(&[0, 0, 8], "t")
            .unwrap_err()
            .to_string()
            .contains("truncated"));
    }

    #[test]
    fn count_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lab");
        std::fs::write(&ip, encode_images(&[vec![0; 4], vec![255; 4]], 2, 2)).unwrap();
        std::fs::write(&lp, encode_labels(&[3])).unwrap();
        assert!(load_idx_images(&ip, &lp)
            .unwrap_err()
            .to_string()
            .contains("count mismatch"));
        std::fs::write(&lp, encode_labels(&[3, 4])).unwrap();
        let pairs = load_idx_images(&ip, &lp).unwrap();
        assert_eq!(pairs[1], (vec![1.0; 4], 4));
    }
}
