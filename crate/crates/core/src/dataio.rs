//! MNIST IDX loading and pixel-to-voltage encoding.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use ndarray::Array2;

use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;
pub const N_CLASSES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Row-major `n × rows·cols` intensities.
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
    pub rows: usize,
    pub cols: usize,
    pub split: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let p = self.pixels();
        &self.images[i * p..(i + 1) * p]
    }

    /// First `n` samples (or all, if fewer).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            images: self.images[..n * self.pixels()].to_vec(),
            labels: self.labels[..n].to_vec(),
            rows: self.rows,
            cols: self.cols,
            split: self.split.clone(),
        }
    }
}

/// Drive voltages, one row per sample, with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub inputs: Array2<f64>,
    pub labels: Vec<u8>,
}

impl Encoded {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut raw)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(buf: &[u8], offset: usize) -> Result<u32> {
    buf.get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            offset: offset as u64,
            msg: "file ends inside the header".into(),
        })
}

/// Parse an IDX image file (magic 0x803) into `(count, rows, cols, pixels)`.
pub fn parse_images(buf: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = be_u32(buf, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: format!("bad image magic {magic:#010x}"),
        });
    }
    let n = be_u32(buf, 4)? as usize;
    let rows = be_u32(buf, 8)? as usize;
    let cols = be_u32(buf, 12)? as usize;
    let need = 16 + n * rows * cols;
    if buf.len() != need {
        return Err(Error::Format {
            offset: buf.len().min(need) as u64,
            msg: format!("header promises {need} bytes, file has {}", buf.len()),
        });
    }
    Ok((n, rows, cols, buf[16..].to_vec()))
}

/// Parse an IDX label file (magic 0x801).
pub fn parse_labels(buf: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(buf, 0)?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: format!("bad label magic {magic:#010x}"),
        });
    }
    let n = be_u32(buf, 4)? as usize;
    let need = 8 + n;
    if buf.len() != need {
        return Err(Error::Format {
            offset: buf.len().min(need) as u64,
            msg: format!("header promises {need} bytes, file has {}", buf.len()),
        });
    }
    let labels = buf[8..].to_vec();
    if let Some(pos) = labels.iter().position(|&l| l as usize >= N_CLASSES) {
        return Err(Error::Format {
            offset: (8 + pos) as u64,
            msg: format!("label {} out of range", labels[pos]),
        });
    }
    Ok(labels)
}

/// Load an image/label file pair; gzip-compressed files are read transparently.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let (n, rows, cols, images) = parse_images(&read_all(images_path)?)?;
    let labels = parse_labels(&read_all(labels_path)?)?;
    if labels.len() != n {
        return Err(Error::Format {
            offset: 4,
            msg: format!("{n} images but {} labels", labels.len()),
        });
    }
    let split = images_path
        .file_name()
        .and_then(|s| s.to_str())
        .and_then(|s| s.split('-').next())
        .unwrap_or("")
        .to_string();
    Ok(Dataset {
        images,
        labels,
        rows,
        cols,
        split,
    })
}

fn find(dir: &Path, stem: &str) -> Result<PathBuf> {
    for name in [stem.to_string(), format!("{stem}.gz")] {
        let p = dir.join(name);
        if p.exists() {
            return Ok(p);
        }
    }
    Err(Error::Io(std::io::Error::new(
        std::io::ErrorKind::NotFound,
        format!("{stem}[.gz] not found in {}", dir.display()),
    )))
}

/// Load the standard training and test splits from a directory holding the
/// usual `train-*-idx?-ubyte` / `t10k-*-idx?-ubyte` files.
pub fn load_mnist(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = load_idx(
        &find(dir, "train-images-idx3-ubyte")?,
        &find(dir, "train-labels-idx1-ubyte")?,
    )?;
    let test = load_idx(
        &find(dir, "t10k-images-idx3-ubyte")?,
        &find(dir, "t10k-labels-idx1-ubyte")?,
    )?;
    Ok((train, test))
}

/// Affine map: pixel 0 → `v_lo`, 255 → `v_hi`.
pub fn normalize(dataset: &Dataset, v_lo: f64, v_hi: f64) -> Result<Encoded> {
    if !(v_lo < v_hi) {
        return Err(Error::invalid(format!("need v_lo < v_hi, got [{v_lo}, {v_hi}]")));
    }
    let scale = (v_hi - v_lo) / 255.0;
    let inputs = Array2::from_shape_fn((dataset.len(), dataset.pixels()), |(i, j)| {
        v_lo + scale * dataset.images[i * dataset.pixels() + j] as f64
    });
    Ok(Encoded {
        inputs,
        labels: dataset.labels.clone(),
    })
}

/// Inverse of [`normalize`] for a single value, in pixel units.
pub fn denormalize(v: f64, v_lo: f64, v_hi: f64) -> f64 {
    (v - v_lo) * 255.0 / (v_hi - v_lo)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn idx_images(n: u32, rows: u32, cols: u32, px: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IMAGES_MAGIC, n, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(px);
        b
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    #[test]
    fn parses_tiny_files() {
        let px: Vec<u8> = (0..12).collect();
        let (n, r, c, img) = parse_images(&idx_images(3, 2, 2, &px)).unwrap();
        assert_eq!((n, r, c), (3, 2, 2));
        assert_eq!(img, px);
        assert_eq!(parse_labels(&idx_labels(&[0, 9, 4])).unwrap(), vec![0, 9, 4]);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut b = idx_images(1, 2, 2, &[0; 4]);
        b[3] = 0x01;
        assert!(matches!(parse_images(&b), Err(Error::Format { offset: 0, .. })));
        let b = idx_images(2, 2, 2, &[0; 5]);
        assert!(matches!(parse_images(&b), Err(Error::Format { offset: 21, .. })));
        assert!(matches!(parse_images(&b[..10]), Err(Error::Format { offset: 8, .. })));
        assert!(parse_labels(&idx_labels(&[3, 10])).is_err());
    }

    #[test]
    fn normalize_endpoints_and_midpoint() {
        let ds = Dataset {
            images: vec![0, 255, 128, 127],
            labels: vec![1],
            rows: 2,
            cols: 2,
            split: "x".into(),
        };
        let e = normalize(&ds, -0.3, 0.1).unwrap();
        assert!((e.inputs[[0, 0]] + 0.3).abs() < 1e-15);
        assert!((e.inputs[[0, 1]] - 0.1).abs() < 1e-15);
        let mid = 0.5 * (e.inputs[[0, 2]] + e.inputs[[0, 3]]);
        assert!((mid + 0.1).abs() < 1e-15);
        for (j, &p) in ds.images.iter().enumerate() {
            assert!((denormalize(e.inputs[[0, j]], -0.3, 0.1) - p as f64).abs() < 1e-12);
        }
        assert!(normalize(&ds, 0.1, 0.1).is_err());
    }
}
