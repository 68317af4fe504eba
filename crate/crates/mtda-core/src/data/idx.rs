//! IDX binary format ingestion (MNIST-family image/label files).

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use ndarray::Array4;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::DomainDataset;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(reader: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    reader.read_exact(&mut buf)?;
    Ok(u32::from_be_bytes(buf))
}

fn read_images(path: &Path) -> Result<(Vec<u8>, usize, usize, usize)> {
    let mut reader = BufReader::new(File::open(path)?);
    let magic = read_u32_be(&mut reader)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}",
            path.display()
        )));
    }
    let n = read_u32_be(&mut reader)? as usize;
    let rows = read_u32_be(&mut reader)? as usize;
    let cols = read_u32_be(&mut reader)? as usize;
    let mut data = vec![0u8; n * rows * cols];
    reader.read_exact(&mut data).map_err(|e| {
        Error::Format(format!("{}: truncated image payload: {e}", path.display()))
    })?;
    Ok((data, n, rows, cols))
}

fn read_labels(path: &Path) -> Result<Vec<u8>> {
    let mut reader = BufReader::new(File::open(path)?);
    let magic = read_u32_be(&mut reader)?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}",
            path.display()
        )));
    }
    let n = read_u32_be(&mut reader)? as usize;
    let mut data = vec![0u8; n];
    reader.read_exact(&mut data).map_err(|e| {
        Error::Format(format!("{}: truncated label payload: {e}", path.display()))
    })?;
    Ok(data)
}

/// Load an IDX image file, with optional labels, into a [`DomainDataset`].
///
/// Pixels are scaled from `u8` to `[0, 1]`. With labels present the dataset
/// takes the source role (training labels, class count inferred from the
/// largest label); without labels it is an unlabeled target.
pub fn load_idx_dataset<S: Scalar>(
    images_path: &Path,
    labels_path: Option<&Path>,
    domain_id: &str,
) -> Result<DomainDataset<S>> {
    let (raw, n, rows, cols) = read_images(images_path)?;
    let scale = S::from_f64c(1.0 / 255.0);
    let pixels: Vec<S> = raw.iter().map(|&b| S::from_f64c(f64::from(b)) * scale).collect();
    let images = Array4::from_shape_vec((n, 1, rows, cols), pixels)
        .map_err(|e| Error::Format(format!("{}: {e}", images_path.display())))?;

    match labels_path {
        Some(lp) => {
            let labels = read_labels(lp)?;
            if labels.len() != n {
                return Err(Error::Consistency(format!(
                    "{}: {} labels for {} images",
                    lp.display(),
                    labels.len(),
                    n
                )));
            }
            let labels: Vec<u32> = labels.into_iter().map(u32::from).collect();
            let num_classes = labels.iter().copied().max().unwrap_or(0) as usize + 1;
            DomainDataset::labeled(images, labels, domain_id, num_classes)
        }
        None => DomainDataset::unlabeled(images, domain_id),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_idx_images(path: &Path, n: usize, rows: usize, cols: usize, magic: u32) {
        let mut f = File::create(path).unwrap();
        f.write_all(&magic.to_be_bytes()).unwrap();
        f.write_all(&(n as u32).to_be_bytes()).unwrap();
        f.write_all(&(rows as u32).to_be_bytes()).unwrap();
        f.write_all(&(cols as u32).to_be_bytes()).unwrap();
        let data: Vec<u8> = (0..n * rows * cols).map(|i| (i % 256) as u8).collect();
        f.write_all(&data).unwrap();
    }

    fn write_idx_labels(path: &Path, labels: &[u8]) {
        let mut f = File::create(path).unwrap();
        f.write_all(&LABELS_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&(labels.len() as u32).to_be_bytes()).unwrap();
        f.write_all(labels).unwrap();
    }

    #[test]
    fn loads_images_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lab");
        write_idx_images(&ip, 4, 3, 3, IMAGES_MAGIC);
        write_idx_labels(&lp, &[0, 1, 2, 9]);
        let ds = load_idx_dataset::<f64>(&ip, Some(&lp), "mnist").unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.num_classes(), 10);
        assert_eq!(ds.sample_shape(), (1, 3, 3));
        // pixel 5 of sample 0 was byte 5
        assert!((ds.images()[[0, 0, 1, 2]] - 5.0 / 255.0).abs() < 1e-12);
        assert_eq!(ds.training_labels().unwrap(), &[0, 1, 2, 9]);
    }

    #[test]
    fn missing_labels_yields_unlabeled_target() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img");
        write_idx_images(&ip, 2, 4, 4, IMAGES_MAGIC);
        let ds = load_idx_dataset::<f32>(&ip, None, "t").unwrap();
        assert!(ds.training_labels().is_err());
        assert!(ds.eval_labels().is_err());
    }

    #[test]
    fn bad_magic_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img");
        write_idx_images(&ip, 1, 2, 2, 0x0000_0802);
        let err = load_idx_dataset::<f64>(&ip, None, "x").unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn label_count_mismatch_is_consistency_error() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lab");
        write_idx_images(&ip, 3, 2, 2, IMAGES_MAGIC);
        write_idx_labels(&lp, &[1, 2]);
        let err = load_idx_dataset::<f64>(&ip, Some(&lp), "x").unwrap_err();
        assert!(matches!(err, Error::Consistency(_)));
    }
}
