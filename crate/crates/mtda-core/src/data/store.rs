//! Versioned on-disk dataset container.
//!
//! Layout of a dataset directory:
//!   meta.json    -- schema version, domain identity, class count, shape,
//!                   label semantics, optional generation-spec echo
//!   images.f64   -- n*c*h*w little-endian f64 pixels in [0, 1]
//!   labels.u32   -- n little-endian u32 class indices (only when labeled)

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{DomainDataset, DomainShiftSpec, LabelUse};

pub const DATASET_SCHEMA_VERSION: u32 = 1;

/// Sidecar metadata for a stored dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub schema_version: u32,
    pub domain_id: String,
    pub num_classes: usize,
    pub label_use: LabelUse,
    /// (channels, height, width)
    pub shape: [usize; 3],
    pub n: usize,
    /// Echo of the shift spec that generated this domain, when applicable.
    pub spec_echo: Option<DomainShiftSpec>,
}

/// Write a dataset directory (created if missing). Bit-identical for
/// identical inputs: pixels are stored as little-endian f64.
pub fn save_dataset<S: Scalar>(
    ds: &DomainDataset<S>,
    dir: &Path,
    spec_echo: Option<DomainShiftSpec>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (c, h, w) = ds.sample_shape();
    let (images, labels, label_use) = ds.parts();

    let meta = DatasetMeta {
        schema_version: DATASET_SCHEMA_VERSION,
        domain_id: ds.domain_id().to_string(),
        num_classes: ds.num_classes(),
        label_use,
        shape: [c, h, w],
        n: ds.len(),
        spec_echo,
    };
    fs::write(dir.join("meta.json"), serde_json::to_vec_pretty(&meta)?)?;

    let mut buf = Vec::with_capacity(images.len() * 8);
    for &v in images.iter() {
        buf.extend_from_slice(&v.to_f64().unwrap().to_le_bytes());
    }
    fs::File::create(dir.join("images.f64"))?.write_all(&buf)?;

    if let Some(l) = labels {
        let mut lbuf = Vec::with_capacity(l.len() * 4);
        for &v in l {
            lbuf.extend_from_slice(&v.to_le_bytes());
        }
        fs::File::create(dir.join("labels.u32"))?.write_all(&lbuf)?;
    }
    Ok(())
}

/// Read a dataset directory written by [`save_dataset`].
pub fn load_dataset<S: Scalar>(dir: &Path) -> Result<DomainDataset<S>> {
    let meta: DatasetMeta = serde_json::from_slice(&fs::read(dir.join("meta.json"))?)?;
    if meta.schema_version != DATASET_SCHEMA_VERSION {
        return Err(Error::Incompatible(format!(
            "{}: dataset schema version {} (supported: {DATASET_SCHEMA_VERSION})",
            dir.display(),
            meta.schema_version
        )));
    }
    let [c, h, w] = meta.shape;
    let expected = meta.n * c * h * w * 8;
    let mut raw = Vec::with_capacity(expected);
    fs::File::open(dir.join("images.f64"))?.read_to_end(&mut raw)?;
    if raw.len() != expected {
        return Err(Error::Incompatible(format!(
            "{}: image payload is {} bytes, expected {expected}",
            dir.display(),
            raw.len()
        )));
    }
    let pixels: Vec<S> = raw
        .chunks_exact(8)
        .map(|b| S::from_f64c(f64::from_le_bytes(b.try_into().unwrap())))
        .collect();
    let images = Array4::from_shape_vec((meta.n, c, h, w), pixels)
        .map_err(|e| Error::Format(format!("{}: {e}", dir.display())))?;

    let labels = match meta.label_use {
        LabelUse::None => None,
        _ => {
            let lraw = fs::read(dir.join("labels.u32"))?;
            if lraw.len() != meta.n * 4 {
                return Err(Error::Incompatible(format!(
                    "{}: label payload is {} bytes, expected {}",
                    dir.display(),
                    lraw.len(),
                    meta.n * 4
                )));
            }
            Some(
                lraw.chunks_exact(4)
                    .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                    .collect::<Vec<u32>>(),
            )
        }
    };
    DomainDataset::from_parts(images, labels, meta.label_use, meta.domain_id, meta.num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synthesize_digits, TransformKind};
    use crate::data::generate_shifted_domain;

    #[test]
    fn roundtrip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synthesize_digits::<f64>(2, 16, 9).unwrap();
        save_dataset(&ds, dir.path(), None).unwrap();
        let back = load_dataset::<f64>(dir.path()).unwrap();
        assert_eq!(back.images(), ds.images());
        assert_eq!(back.domain_id(), ds.domain_id());
        assert_eq!(back.num_classes(), 10);
        assert_eq!(back.training_labels().unwrap(), ds.training_labels().unwrap());
    }

    #[test]
    fn eval_only_semantics_survive_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let base = synthesize_digits::<f64>(2, 16, 9).unwrap();
        let spec = DomainShiftSpec::new(TransformKind::Invert, 1.0, 4).unwrap();
        let shifted = generate_shifted_domain(&base, &spec).unwrap();
        save_dataset(&shifted, dir.path(), Some(spec)).unwrap();
        let back = load_dataset::<f64>(dir.path()).unwrap();
        assert!(back.training_labels().is_err());
        assert_eq!(back.eval_labels().unwrap(), shifted.eval_labels().unwrap());
        let meta: DatasetMeta =
            serde_json::from_slice(&std::fs::read(dir.path().join("meta.json")).unwrap()).unwrap();
        assert_eq!(meta.spec_echo, Some(spec));
    }

    #[test]
    fn version_mismatch_is_incompatibility() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synthesize_digits::<f64>(1, 16, 9).unwrap();
        save_dataset(&ds, dir.path(), None).unwrap();
        let meta_path = dir.path().join("meta.json");
        let mut meta: DatasetMeta =
            serde_json::from_slice(&std::fs::read(&meta_path).unwrap()).unwrap();
        meta.schema_version = 999;
        std::fs::write(&meta_path, serde_json::to_vec(&meta).unwrap()).unwrap();
        assert!(matches!(
            load_dataset::<f64>(dir.path()),
            Err(Error::Incompatible(_))
        ));
    }

    #[test]
    fn truncated_payload_is_incompatibility() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synthesize_digits::<f64>(1, 16, 9).unwrap();
        save_dataset(&ds, dir.path(), None).unwrap();
        let img_path = dir.path().join("images.f64");
        let bytes = std::fs::read(&img_path).unwrap();
        std::fs::write(&img_path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(
            load_dataset::<f64>(dir.path()),
            Err(Error::Incompatible(_))
        ));
    }
}
