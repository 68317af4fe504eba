//! Synthetic digit rendering and deterministic domain-shift transforms.
//!
//! The renderer draws a fixed 5x7 glyph per class into a small canvas with
//! per-sample jitter (position, stroke intensity, faint pixel noise). The
//! shift transforms then manufacture target domains with a controllable gap
//! from that source distribution. Everything is a pure function of the seed.

use ndarray::{Array3, Array4, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;

use super::DomainDataset;

const GLYPH_W: usize = 5;
const GLYPH_H: usize = 7;

#[rustfmt::skip]
const GLYPHS: [[&str; GLYPH_H]; 10] = [
    [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."],
    ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."],
    [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"],
    [".###.", "#...#", "....#", "..##.", "....#", "#...#", ".###."],
    ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."],
    ["#####", "#....", "####.", "....#", "....#", "#...#", ".###."],
    [".###.", "#....", "####.", "#...#", "#...#", "#...#", ".###."],
    ["#####", "....#", "...#.", "..#..", "..#..", "..#..", "..#.."],
    [".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."],
    [".###.", "#...#", "#...#", ".####", "....#", "....#", ".###."],
];

/// Render `samples_per_class` jittered instances of each digit class into a
/// `size`x`size` single-channel canvas. Labeled, source role.
pub fn synthesize_digits<S: Scalar>(
    samples_per_class: usize,
    size: usize,
    seed: u64,
) -> Result<DomainDataset<S>> {
    if samples_per_class == 0 {
        return Err(Error::Argument("samples_per_class must be positive".into()));
    }
    if size < 2 * GLYPH_H + 2 {
        return Err(Error::Argument(format!(
            "canvas size {size} too small for 2x-scaled glyphs"
        )));
    }
    let n = samples_per_class * 10;
    let mut images = Array4::<S>::zeros((n, 1, size, size));
    let mut labels = Vec::with_capacity(n);

    let max_x0 = size - 2 * GLYPH_W;
    let max_y0 = size - 2 * GLYPH_H;
    for sample in 0..n {
        let class = sample % 10;
        labels.push(class as u32);
        let mut rng = stream_rng(seed, 0, Stream::Synthesis { sample });
        let x0 = rng.gen_range(1..max_x0);
        let y0 = rng.gen_range(1..max_y0);
        let intensity = 0.72 + 0.28 * rng.gen::<f64>();
        let mut canvas = images.index_axis_mut(Axis(0), sample);
        for (gy, row) in GLYPHS[class].iter().enumerate() {
            for (gx, ch) in row.bytes().enumerate() {
                if ch == b'#' {
                    for dy in 0..2 {
                        for dx in 0..2 {
                            canvas[[0, y0 + 2 * gy + dy, x0 + 2 * gx + dx]] =
                                S::from_f64c(intensity);
                        }
                    }
                }
            }
        }
        // faint sensor noise everywhere
        for y in 0..size {
            for x in 0..size {
                let noise = 0.06 * rng.gen::<f64>();
                let v = canvas[[0, y, x]].to_f64().unwrap() + noise;
                canvas[[0, y, x]] = S::from_f64c(v.min(1.0));
            }
        }
    }
    DomainDataset::labeled(images, labels, "digits", 10)
}

/// Which pixel-level transform manufactures the shifted domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Invert,
    NoiseBackground,
    Blur,
    AffineJitter,
    ColorRemap,
}

impl TransformKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "invert" => Ok(Self::Invert),
            "noise_background" => Ok(Self::NoiseBackground),
            "blur" => Ok(Self::Blur),
            "affine_jitter" => Ok(Self::AffineJitter),
            "color_remap" => Ok(Self::ColorRemap),
            other => Err(Error::Config(format!("unknown transform_kind '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Invert => "invert",
            Self::NoiseBackground => "noise_background",
            Self::Blur => "blur",
            Self::AffineJitter => "affine_jitter",
            Self::ColorRemap => "color_remap",
        }
    }
}

/// Deterministic recipe for one shifted domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainShiftSpec {
    pub transform_kind: TransformKind,
    /// Shift intensity in [0, 1]; 0 is the identity.
    pub strength: f64,
    pub seed: u64,
}

impl DomainShiftSpec {
    pub fn new(transform_kind: TransformKind, strength: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&strength) {
            return Err(Error::Config(format!(
                "shift strength {strength} outside [0, 1]"
            )));
        }
        Ok(Self { transform_kind, strength, seed })
    }

    /// Domain identity the shifted dataset will carry.
    pub fn derived_domain_id(&self, base_id: &str) -> String {
        format!(
            "{base_id}-{}{:03}-s{}",
            self.transform_kind.name(),
            (self.strength * 100.0).round() as u32,
            self.seed
        )
    }
}

fn box3(img: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let mut out = Array3::<f64>::zeros((c, h, w));
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let yy = y as i64 + dy;
                        let xx = x as i64 + dx;
                        if yy >= 0 && yy < h as i64 && xx >= 0 && xx < w as i64 {
                            acc += img[[ch, yy as usize, xx as usize]];
                        }
                    }
                }
                out[[ch, y, x]] = acc / 9.0;
            }
        }
    }
    out
}

fn translate(img: &Array3<f64>, dy: i64, dx: i64) -> Array3<f64> {
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let mut out = Array3::<f64>::zeros((c, h, w));
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let sy = y as i64 - dy;
                let sx = x as i64 - dx;
                if sy >= 0 && sy < h as i64 && sx >= 0 && sx < w as i64 {
                    out[[ch, y, x]] = img[[ch, sy as usize, sx as usize]];
                }
            }
        }
    }
    out
}

fn apply_one(
    img: &Array3<f64>,
    spec: &DomainShiftSpec,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Array3<f64> {
    let s = spec.strength;
    match spec.transform_kind {
        // x + s*(1 - 2x): full inversion at s = 1
        TransformKind::Invert => img.mapv(|x| (x + s * (1.0 - 2.0 * x)).clamp(0.0, 1.0)),
        // background fills with uniform clutter, saturated strokes survive
        TransformKind::NoiseBackground => img.mapv(|x| {
            let u: f64 = rng.gen();
            (x + s * u * (1.0 - x)).clamp(0.0, 1.0)
        }),
        TransformKind::Blur => {
            let blurred = box3(img);
            img * (1.0 - s) + &(blurred * s)
        }
        TransformKind::AffineJitter => {
            let span = 3.0 * s;
            let dy = (span * (2.0 * rng.gen::<f64>() - 1.0)).round() as i64;
            let dx = (span * (2.0 * rng.gen::<f64>() - 1.0)).round() as i64;
            translate(img, dy, dx)
        }
        // tent remap 4x(1-x): strokes hollow out, edges light up
        TransformKind::ColorRemap => {
            img.mapv(|x| ((1.0 - s) * x + s * 4.0 * x * (1.0 - x)).clamp(0.0, 1.0))
        }
    }
}

/// Apply a shift spec to every sample of `base`, producing a new domain.
///
/// Labels (when present on the base) are retained as evaluation-only ground
/// truth; the result is deterministic per `spec.seed`.
pub fn generate_shifted_domain<S: Scalar>(
    base: &DomainDataset<S>,
    spec: &DomainShiftSpec,
) -> Result<DomainDataset<S>> {
    if base.is_empty() {
        return Err(Error::Argument("base dataset is empty".into()));
    }
    if !(0.0..=1.0).contains(&spec.strength) {
        return Err(Error::Config(format!(
            "shift strength {} outside [0, 1]",
            spec.strength
        )));
    }
    let (c, h, w) = base.sample_shape();
    let n = base.len();
    let mut images = Array4::<S>::zeros((n, c, h, w));
    for i in 0..n {
        let src: Array3<f64> = base.sample(i).mapv(|v| v.to_f64().unwrap());
        let mut rng = stream_rng(spec.seed, 0, Stream::Shift { sample: i });
        let shifted = apply_one(&src, spec, &mut rng);
        images
            .index_axis_mut(Axis(0), i)
            .assign(&shifted.mapv(S::from_f64c));
    }
    let domain_id = spec.derived_domain_id(base.domain_id());
    match base.parts().1 {
        Some(labels) => DomainDataset::with_eval_labels(
            images,
            labels.clone(),
            domain_id,
            base.num_classes(),
        ),
        None => DomainDataset::unlabeled(images, domain_id),
    }
}
