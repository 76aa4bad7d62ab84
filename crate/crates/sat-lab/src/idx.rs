//! Dataset file formats: MNIST IDX (big-endian) and CIFAR-10 binary batches.

use crate::{io_err, LabError};
use sat_core::{Dataset, Tensor};
use std::fs;
use std::path::Path;

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Reader { bytes, pos: 0, path }
    }

    fn take(&mut self, n: usize, context: &str) -> Result<&'a [u8], LabError> {
        if self.pos + n > self.bytes.len() {
            return Err(LabError::Truncated {
                path: self.path.to_path_buf(),
                context: format!("{context}: needed {n} bytes at offset {}", self.pos),
            });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32_be(&mut self, context: &str) -> Result<u32, LabError> {
        let b = self.take(4, context)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Load an MNIST-style IDX image/label file pair. Pixels are scaled by 1/255
/// into `[0, 1]`; images come out as `[n, 1, rows, cols]`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, LabError> {
    let image_bytes = fs::read(images_path).map_err(io_err(images_path))?;
    let label_bytes = fs::read(labels_path).map_err(io_err(labels_path))?;

    let mut r = Reader::new(&image_bytes, images_path);
    let magic = r.u32_be("image magic")?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(LabError::BadMagic {
            path: images_path.to_path_buf(),
            expected: IDX_IMAGE_MAGIC,
            got: magic,
        });
    }
    let count = r.u32_be("image count")? as usize;
    let rows = r.u32_be("rows")? as usize;
    let cols = r.u32_be("cols")? as usize;
    let pixels = r.take(count * rows * cols, "pixel data")?;

    let mut lr = Reader::new(&label_bytes, labels_path);
    let lmagic = lr.u32_be("label magic")?;
    if lmagic != IDX_LABEL_MAGIC {
        return Err(LabError::BadMagic {
            path: labels_path.to_path_buf(),
            expected: IDX_LABEL_MAGIC,
            got: lmagic,
        });
    }
    let label_count = lr.u32_be("label count")? as usize;
    if label_count != count {
        return Err(LabError::CountMismatch {
            images: count,
            labels: label_count,
        });
    }
    let labels_raw = lr.take(count, "label data")?;

    let data: Vec<f64> = pixels.iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<usize> = labels_raw.iter().map(|&b| b as usize).collect();
    let images = Tensor::new(vec![count, 1, rows, cols], data)
        .expect("idx dimensions are consistent by construction");
    Dataset::new(images, labels, split_name(images_path)).map_err(LabError::Data)
}

fn split_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into())
}

/// Serialize a dataset back into an IDX byte pair; used by tests and for
/// exporting synthetic data in a standard container.
pub fn encode_idx(data: &Dataset) -> (Vec<u8>, Vec<u8>) {
    let shape = data.images.shape();
    let (n, rows, cols) = (shape[0], shape[2], shape[3]);
    let mut images = Vec::with_capacity(16 + n * rows * cols);
    images.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
    images.extend_from_slice(&(n as u32).to_be_bytes());
    images.extend_from_slice(&(rows as u32).to_be_bytes());
    images.extend_from_slice(&(cols as u32).to_be_bytes());
    images.extend(
        data.images
            .data()
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    let mut labels = Vec::with_capacity(8 + n);
    labels.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(n as u32).to_be_bytes());
    labels.extend(data.labels.iter().map(|&l| l as u8));
    (images, labels)
}

// ── CIFAR-10 binary batches ─────────────────────────────────────────────────

const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

/// Load one CIFAR-10 binary batch file (`<label u8><3072 pixel bytes>` per
/// record) into `[n, 3, 32, 32]` images.
pub fn load_cifar10_file(path: &Path) -> Result<Dataset, LabError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        return Err(LabError::Truncated {
            path: path.to_path_buf(),
            context: format!(
                "{} bytes is not a whole number of {CIFAR_RECORD}-byte records",
                bytes.len()
            ),
        });
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut data = Vec::with_capacity(n * 3072);
    let mut labels = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(CIFAR_RECORD) {
        labels.push(rec[0] as usize);
        data.extend(rec[1..].iter().map(|&b| b as f64 / 255.0));
    }
    let images = Tensor::new(vec![n, 3, 32, 32], data).expect("record layout is fixed");
    Dataset::new(images, labels, split_name(path)).map_err(LabError::Data)
}

/// Load the standard CIFAR-10 directory layout: `data_batch_1..5.bin` for the
/// train split, `test_batch.bin` for the test split.
pub fn load_cifar10_dir(dir: &Path) -> Result<(Dataset, Dataset), LabError> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for i in 1..=5 {
        let batch = load_cifar10_file(&dir.join(format!("data_batch_{i}.bin")))?;
        images.extend_from_slice(batch.images.data());
        labels.extend_from_slice(&batch.labels);
    }
    let n = labels.len();
    let train = Dataset::new(
        Tensor::new(vec![n, 3, 32, 32], images).expect("batch layout is fixed"),
        labels,
        "cifar10-train".into(),
    )
    .map_err(LabError::Data)?;
    let test = load_cifar10_file(&dir.join("test_batch.bin"))?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use sat_core::data::synth_blobs;

    fn write_temp(bytes: &[u8]) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(bytes).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn idx_round_trip() {
        let data = synth_blobs(3, 10, 16, 6.0, 1).unwrap();
        // Reshape the flat blobs into 4x4 "images" for the container.
        let images = data.images.reshaped(vec![30, 1, 4, 4]).unwrap();
        let data = Dataset::new(images, data.labels.clone(), "t".into()).unwrap();
        let (ib, lb) = encode_idx(&data);
        let fi = write_temp(&ib);
        let fl = write_temp(&lb);
        let loaded = load_idx(fi.path(), fl.path()).unwrap();
        assert_eq!(loaded.len(), 30);
        assert_eq!(loaded.images.shape(), &[30, 1, 4, 4]);
        // Quantized to u8, so values agree to within half a pixel step.
        for (a, b) in loaded.images.data().iter().zip(data.images.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
        assert_eq!(loaded.labels, data.labels);
        // Byte 255 loads as exactly 1.0.
        let mut ib2 = ib.clone();
        ib2[16] = 255;
        let fi2 = write_temp(&ib2);
        let loaded = load_idx(fi2.path(), fl.path()).unwrap();
        assert_eq!(loaded.images.data()[0], 1.0);
    }

    #[test]
    fn idx_rejects_wrong_magic() {
        let bytes = [0u8, 0, 8, 4, 0, 0, 0, 0];
        let f = write_temp(&bytes);
        let l = write_temp(&[0u8, 0, 8, 1, 0, 0, 0, 0]);
        match load_idx(f.path(), l.path()) {
            Err(LabError::BadMagic { got, expected, .. }) => {
                assert_eq!(got, 0x0804);
                assert_eq!(expected, 0x0803);
            }
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }

    #[test]
    fn idx_rejects_truncation() {
        // Header claims 100 images of 4x4 but carries no pixel data.
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&0x0803u32.to_be_bytes());
        bytes.extend_from_slice(&100u32.to_be_bytes());
        bytes.extend_from_slice(&4u32.to_be_bytes());
        bytes.extend_from_slice(&4u32.to_be_bytes());
        let f = write_temp(&bytes);
        let mut lbytes = Vec::new();
        lbytes.extend_from_slice(&0x0801u32.to_be_bytes());
        lbytes.extend_from_slice(&100u32.to_be_bytes());
        lbytes.extend(std::iter::repeat_n(0u8, 100));
        let l = write_temp(&lbytes);
        assert!(matches!(
            load_idx(f.path(), l.path()),
            Err(LabError::Truncated { .. })
        ));
    }

    #[test]
    fn idx_rejects_count_mismatch() {
        let data = synth_blobs(2, 5, 16, 6.0, 2).unwrap();
        let images = data.images.reshaped(vec![10, 1, 4, 4]).unwrap();
        let data = Dataset::new(images, data.labels.clone(), "t".into()).unwrap();
        let (ib, lb) = encode_idx(&data);
        let mut lb_bad = lb.clone();
        // Claim 11 labels.
        lb_bad[4..8].copy_from_slice(&11u32.to_be_bytes());
        lb_bad.push(0);
        let fi = write_temp(&ib);
        let fl = write_temp(&lb_bad);
        match load_idx(fi.path(), fl.path()) {
            Err(LabError::CountMismatch { images, labels }) => {
                assert_eq!((images, labels), (10, 11));
            }
            other => panic!("expected CountMismatch, got {other:?}"),
        }
    }

    #[test]
    fn cifar_file_round_trip_layout() {
        // Two records: label 7 then label 3, pixel ramp.
        let mut bytes = Vec::new();
        for label in [7u8, 3] {
            bytes.push(label);
            bytes.extend((0..3072u32).map(|i| (i % 256) as u8));
        }
        let f = write_temp(&bytes);
        let data = load_cifar10_file(f.path()).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data.images.shape(), &[2, 3, 32, 32]);
        assert_eq!(data.labels, vec![7, 3]);
        assert_eq!(data.images.data()[255], 1.0);
        data.validate(10).unwrap();
    }

    #[test]
    fn cifar_rejects_partial_record() {
        let f = write_temp(&[1u8; 100]);
        assert!(matches!(
            load_cifar10_file(f.path()),
            Err(LabError::Truncated { .. })
        ));
    }
}
