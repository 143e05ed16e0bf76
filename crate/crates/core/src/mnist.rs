//! IDX file parsing (optionally gzipped) and mini-batch scheduling.
//!
//! Header integers are big-endian `u32`. Images use magic `0x00000803`
//! followed by count, rows, cols; labels use `0x00000801` followed by count.
//! Pixels are scaled by `1/255` and nothing else.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use crate::error::{Error, Result};
use crate::numkit::{Matrix, Rng};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const NUM_CLASSES: usize = 10;

/// Conventional MNIST file names inside a data directory.
pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Images (`n x pixels`, values in `[0, 1]`) and their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Matrix,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn new(images: Matrix, labels: Vec<u8>) -> Result<Self> {
        if images.rows() != labels.len() {
            return Err(Error::invalid(format!(
                "{} images but {} labels",
                images.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::invalid(format!("label {bad} out of range 0..10")));
        }
        Ok(Dataset { images, labels })
    }

    pub fn load(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Self> {
        Dataset::new(load_idx_images(images)?, load_idx_labels(labels)?)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// First `n` samples (or all of them if `n` exceeds the length).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        let idx: Vec<usize> = (0..n).collect();
        Dataset {
            images: self.images.select_rows(&idx).expect("indices in range"),
            labels: self.labels[..n].to_vec(),
        }
    }
}

/// Locations of the four MNIST files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MnistPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl MnistPaths {
    /// Conventional names under `dir`, preferring the uncompressed file and
    /// falling back to a `.gz` sibling when only that exists.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        let pick = |name: &str| {
            let plain = dir.join(name);
            let gz = dir.join(format!("{name}.gz"));
            if !plain.exists() && gz.exists() {
                gz
            } else {
                plain
            }
        };
        MnistPaths {
            train_images: pick(TRAIN_IMAGES),
            train_labels: pick(TRAIN_LABELS),
            test_images: pick(TEST_IMAGES),
            test_labels: pick(TEST_LABELS),
        }
    }

    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        let train = Dataset::load(&self.train_images, &self.train_labels)?;
        let test = Dataset::load(&self.test_images, &self.test_labels)?;
        Ok((train, test))
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader: Box<dyn Read> = if path.extension().is_some_and(|ext| ext == "gz") {
        Box::new(GzDecoder::new(BufReader::new(file)))
    } else {
        Box::new(BufReader::new(file))
    };
    let mut bytes = Vec::new();
    reader
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

pub fn load_idx_images(path: impl AsRef<Path>) -> Result<Matrix> {
    parse_idx_images(&read_file(path.as_ref())?)
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    parse_idx_labels(&read_file(path.as_ref())?)
}

fn format_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        what: "IDX",
        offset,
        msg: msg.into(),
    }
}

fn header_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(bytes.len(), "truncated header"))
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<Matrix> {
    let magic = header_u32(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(format_err(
            0,
            format!("bad image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"),
        ));
    }
    let count = header_u32(bytes, 4)? as usize;
    let rows = header_u32(bytes, 8)? as usize;
    let cols = header_u32(bytes, 12)? as usize;
    let pixels = rows
        .checked_mul(cols)
        .ok_or_else(|| format_err(8, format!("image dimensions {rows}x{cols} overflow")))?;
    let total = count
        .checked_mul(pixels)
        .ok_or_else(|| format_err(4, format!("{count} images of {pixels} pixels overflow")))?;
    let payload = &bytes[16..];
    if payload.len() < total {
        return Err(format_err(
            bytes.len(),
            format!(
                "truncated image payload: {} bytes, expected {total}",
                payload.len()
            ),
        ));
    }
    if payload.len() > total {
        return Err(format_err(16 + total, "trailing bytes after image payload"));
    }
    let data = payload.iter().map(|&b| f64::from(b) / 255.0).collect();
    Matrix::from_vec(count, pixels, data)
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = header_u32(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(format_err(
            0,
            format!("bad label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"),
        ));
    }
    let count = header_u32(bytes, 4)? as usize;
    let payload = &bytes[8..];
    if payload.len() != count {
        return Err(format_err(
            8 + payload.len().min(count),
            format!(
                "label payload has {} bytes, header says {count}",
                payload.len()
            ),
        ));
    }
    if let Some(pos) = payload.iter().position(|&l| l as usize >= NUM_CLASSES) {
        return Err(format_err(
            8 + pos,
            format!("label {} is not a digit class", payload[pos]),
        ));
    }
    Ok(payload.to_vec())
}

/// Encodes an image matrix as IDX3. Pixels are mapped back with
/// `round(v * 255)`, which inverts the loader exactly; `rows * cols` must equal
/// the matrix width.
pub fn encode_idx_images(images: &Matrix, rows: u32, cols: u32) -> Result<Vec<u8>> {
    if (rows as usize) * (cols as usize) != images.cols() {
        return Err(Error::invalid(format!(
            "{rows}x{cols} images do not match matrix width {}",
            images.cols()
        )));
    }
    let mut out = Vec::with_capacity(16 + images.data().len());
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.rows() as u32).to_be_bytes());
    out.extend_from_slice(&rows.to_be_bytes());
    out.extend_from_slice(&cols.to_be_bytes());
    for &v in images.data() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(format!("pixel {v} outside [0, 1]")));
        }
        out.push((v * 255.0).round() as u8);
    }
    Ok(out)
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Shuffled traversal of a dataset in fixed-size mini-batches. The order is
/// redrawn from the caller's RNG every time an epoch is exhausted.
#[derive(Debug, Clone)]
pub struct BatchPlan {
    batch_size: usize,
    order: Vec<usize>,
    cursor: usize,
}

/// One mini-batch together with the dataset indices it was drawn from.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Matrix,
    pub labels: Vec<u8>,
    pub indices: Vec<usize>,
}

impl BatchPlan {
    pub fn new(len: usize, batch_size: usize, rng: &mut Rng) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if len == 0 {
            return Err(Error::invalid("cannot batch an empty dataset"));
        }
        let mut order: Vec<usize> = (0..len).collect();
        rng.shuffle(&mut order);
        Ok(BatchPlan {
            batch_size,
            order,
            cursor: 0,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    /// Indices of the next batch; the final batch of an epoch may be short.
    pub fn next_indices(&mut self, rng: &mut Rng) -> Vec<usize> {
        if self.cursor >= self.order.len() {
            rng.shuffle(&mut self.order);
            self.cursor = 0;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let out = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        out
    }
}

pub fn next_batch(dataset: &Dataset, plan: &mut BatchPlan, rng: &mut Rng) -> Result<Batch> {
    if plan.order.len() != dataset.len() {
        return Err(Error::invalid(format!(
            "batch plan covers {} samples, dataset has {}",
            plan.order.len(),
            dataset.len()
        )));
    }
    let indices = plan.next_indices(rng);
    let images = dataset.images.select_rows(&indices)?;
    let labels = indices.iter().map(|&i| dataset.labels[i]).collect();
    Ok(Batch {
        images,
        labels,
        indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::numkit::Rng;

    fn image_fixture(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IMAGE_MAGIC, count, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(pixels);
        b
    }

    #[test]
    fn two_by_two_fixture() {
        let bytes = image_fixture(2, 2, 2, &[0, 255, 128, 0, 1, 2, 3, 4]);
        let m = parse_idx_images(&bytes).unwrap();
        assert_eq!(m.shape(), (2, 4));
        assert_eq!(m.row(0), &[0.0, 1.0, 128.0 / 255.0, 0.0]);
        assert_eq!(m.row(1)[3], 4.0 / 255.0);
    }

    #[test]
    fn all_zero_pixels() {
        let m = parse_idx_images(&image_fixture(3, 2, 2, &[0; 12])).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn image_errors() {
        let mut bad_magic = image_fixture(1, 1, 1, &[7]);
        bad_magic[3] = 0x01;
        assert!(matches!(
            parse_idx_images(&bad_magic),
            Err(Error::Format { offset: 0, .. })
        ));
        let truncated = image_fixture(2, 2, 2, &[0; 7]);
        let err = parse_idx_images(&truncated).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
        assert!(parse_idx_images(&[0, 0, 8]).is_err());
        let overflow = image_fixture(u32::MAX, u32::MAX, u32::MAX, &[]);
        assert!(parse_idx_images(&overflow).is_err());
    }

    #[test]
    fn label_fixture_and_errors() {
        assert_eq!(parse_idx_labels(&encode_idx_labels(&[3, 1, 4])).unwrap(), vec![3, 1, 4]);
        assert!(parse_idx_labels(&encode_idx_labels(&[])).unwrap().is_empty());
        let mut bad = encode_idx_labels(&[1, 10]);
        assert!(matches!(
            parse_idx_labels(&bad),
            Err(Error::Format { offset: 9, .. })
        ));
        bad[3] = 0x03;
        assert!(parse_idx_labels(&bad).is_err());
        let mut short = encode_idx_labels(&[1, 2, 3]);
        short.pop();
        assert!(parse_idx_labels(&short).is_err());
    }

    #[test]
    fn gzip_files_are_decompressed() {
        use flate2::write::GzEncoder;
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.gz");
        let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(&encode_idx_labels(&[9, 8, 7])).unwrap();
        std::fs::write(&path, enc.finish().unwrap()).unwrap();
        assert_eq!(load_idx_labels(&path).unwrap(), vec![9, 8, 7]);
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_idx_images("/nonexistent/images"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn five_samples_batch_two() {
        let mut rng = Rng::new(1);
        let ds = Dataset::new(Matrix::zeros(5, 1), vec![0; 5]).unwrap();
        let mut plan = BatchPlan::new(5, 2, &mut rng).unwrap();
        assert_eq!(plan.batches_per_epoch(), 3);
        let sizes: Vec<usize> = (0..3)
            .map(|_| next_batch(&ds, &mut plan, &mut rng).unwrap().labels.len())
            .collect();
        assert_eq!(sizes, vec![2, 2, 1]);
    }

    #[test]
    fn mnist_sized_plan_has_469_batches() {
        let mut rng = Rng::new(0);
        assert_eq!(BatchPlan::new(60_000, 128, &mut rng).unwrap().batches_per_epoch(), 469);
    }

    #[test]
    fn plan_rejects_zero_batch() {
        let mut rng = Rng::new(0);
        assert!(BatchPlan::new(10, 0, &mut rng).is_err());
        assert!(BatchPlan::new(0, 4, &mut rng).is_err());
    }

    #[test]
    fn batch_sequence_is_seed_deterministic() {
        let run = |seed| {
            let mut rng = Rng::new(seed);
            let mut plan = BatchPlan::new(100, 7, &mut rng).unwrap();
            (0..40).flat_map(|_| plan.next_indices(&mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }

    proptest! {
        #[test]
        fn every_epoch_covers_all_indices(n in 1usize..300, bs in 1usize..64, seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let mut plan = BatchPlan::new(n, bs, &mut rng).unwrap();
            for _ in 0..3 {
                let mut seen: Vec<usize> = (0..plan.batches_per_epoch())
                    .flat_map(|_| plan.next_indices(&mut rng))
                    .collect();
                prop_assert!(seen.len() == n);
                seen.sort_unstable();
                prop_assert!(seen.iter().enumerate().all(|(i, &v)| i == v));
            }
        }

        #[test]
        fn idx_round_trip(count in 0usize..6, rows in 1u32..5, cols in 1u32..5, seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let pixels: Vec<u8> = (0..count * (rows * cols) as usize).map(|_| rng.below(256) as u8).collect();
            let labels: Vec<u8> = (0..count).map(|_| rng.below(10) as u8).collect();
            let images = parse_idx_images(&image_fixture(count as u32, rows, cols, &pixels)).unwrap();
            prop_assert!(images.data().iter().all(|v| (0.0..=1.0).contains(v)));
            let bytes = encode_idx_images(&images, rows, cols).unwrap();
            prop_assert_eq!(&bytes[16..], &pixels[..]);
            prop_assert_eq!(parse_idx_images(&bytes).unwrap(), images);
            prop_assert_eq!(parse_idx_labels(&encode_idx_labels(&labels)).unwrap(), labels);
        }
    }
}
