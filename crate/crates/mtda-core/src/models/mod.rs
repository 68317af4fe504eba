//! Networks: classifier presets, the domain classifier, gradient reversal,
//! and temperature softmax.
//!
//! A [`ClassifierNetwork`] is a convolutional feature extractor followed by a
//! two-layer class head. Features are the flattened output of the last conv
//! block, i.e. what the domain classifier sees. Per-channel standardization
//! (computed from the source split by the trainer) lives inside the network
//! so datasets stay framework-neutral.

mod grl;
mod layers;
mod softmax;

pub use grl::GradientReversal;
pub use layers::{ParamVisitor, ParamVisitorMut};
pub use softmax::{log_softmax_rows, predict_rows, temperature_softmax, temperature_softmax_rows};

use ndarray::{Array1, Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::scalar::{fold_bits, Scalar, FNV_OFFSET};

use layers::{
    maxpool2, maxpool2_backward, relu2, relu2_backward, relu4, relu4_backward, Conv2d,
    Conv2dCache, Linear, LinearCache,
};

/// Which side of the distillation a network plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Teacher,
    Student,
}

/// Backbone presets. The wide preset is the high-capacity teacher (4 conv
/// blocks at >= 4x the channel width); the compact preset is the student
/// (2 conv blocks).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    StudentCompact,
    TeacherWide,
}

impl Preset {
    fn channels(self) -> (&'static [usize], &'static [bool], usize) {
        match self {
            // (conv channels, pool flags, head hidden width)
            Preset::StudentCompact => (&[4, 8], &[true, true], 32),
            Preset::TeacherWide => (&[16, 32, 32, 32], &[true, true, false, false], 128),
        }
    }

    pub fn role(self) -> Role {
        match self {
            Preset::StudentCompact => Role::Student,
            Preset::TeacherWide => Role::Teacher,
        }
    }
}

/// Identity of a built network, sufficient to rebuild its architecture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub preset: Preset,
    pub input_shape: (usize, usize, usize),
    pub num_classes: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
struct Normalizer<S> {
    mean: Array1<S>,
    inv_std: Array1<S>,
}

impl<S: Scalar> Normalizer<S> {
    fn identity(channels: usize) -> Self {
        Self { mean: Array1::zeros(channels), inv_std: Array1::from_elem(channels, S::one()) }
    }

    fn apply(&self, x: &Array4<S>) -> Array4<S> {
        let mut out = x.clone();
        for (c, mut plane) in out.axis_iter_mut(ndarray::Axis(1)).enumerate() {
            let (m, s) = (self.mean[c], self.inv_std[c]);
            plane.mapv_inplace(|v| (v - m) * s);
        }
        out
    }
}

struct BlockCache<S> {
    conv: Conv2dCache<S>,
    mask: Array4<bool>,
    pool: Option<(Array4<u8>, usize, usize)>,
}

/// Everything the backward pass needs from one classifier forward.
pub struct NetCache<S> {
    blocks: Vec<BlockCache<S>>,
    feat_dims: (usize, usize, usize, usize),
    fc1: LinearCache<S>,
    fc1_mask: Array2<bool>,
    fc2: LinearCache<S>,
}

/// Result of a caching forward pass.
pub struct NetForward<S> {
    pub features: Array2<S>,
    pub logits: Array2<S>,
    pub cache: NetCache<S>,
}

/// Convolutional feature extractor plus two fully connected head layers.
#[derive(Debug, Clone)]
pub struct ClassifierNetwork<S> {
    spec: NetworkSpec,
    normalizer: Normalizer<S>,
    convs: Vec<(Conv2d<S>, bool)>,
    fc1: Linear<S>,
    fc2: Linear<S>,
    feature_dim: usize,
}

/// Build a classifier from a preset. Initialization is deterministic per
/// (preset, seed); the input shape must keep both spatial dims divisible by
/// four (two pooling stages) and at least eight pixels.
pub fn build_backbone<S: Scalar>(
    preset: Preset,
    input_shape: (usize, usize, usize),
    num_classes: usize,
    seed: u64,
) -> Result<ClassifierNetwork<S>> {
    let (c, h, w) = input_shape;
    if c == 0 || h < 8 || w < 8 || h % 4 != 0 || w % 4 != 0 {
        return Err(Error::Config(format!(
            "input shape {input_shape:?} incompatible: spatial dims must be >= 8 and divisible by 4"
        )));
    }
    if num_classes < 2 {
        return Err(Error::Config(format!("num_classes {num_classes} < 2")));
    }
    let (channels, pools, hidden) = preset.channels();
    let mut rng = stream_rng(seed, 0, Stream::NetworkInit { network: 0 });

    let mut convs = Vec::with_capacity(channels.len());
    let mut c_in = c;
    let mut pool_count = 0usize;
    for (&c_out, &pool) in channels.iter().zip(pools) {
        convs.push((Conv2d::new(c_in, c_out, &mut rng), pool));
        c_in = c_out;
        pool_count += usize::from(pool);
    }
    let shrink = 1 << pool_count;
    let feature_dim = c_in * (h / shrink) * (w / shrink);
    let fc1 = Linear::new(feature_dim, hidden, &mut rng);
    let fc2 = Linear::new(hidden, num_classes, &mut rng);

    Ok(ClassifierNetwork {
        spec: NetworkSpec { preset, input_shape, num_classes, seed },
        normalizer: Normalizer::identity(c),
        convs,
        fc1,
        fc2,
        feature_dim,
    })
}

impl<S: Scalar> ClassifierNetwork<S> {
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn role(&self) -> Role {
        self.spec.preset.role()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    /// Install per-channel standardization constants (from the source split).
    pub fn set_normalizer(&mut self, mean: &[f64], std: &[f64]) -> Result<()> {
        let c = self.spec.input_shape.0;
        if mean.len() != c || std.len() != c {
            return Err(Error::Shape(format!(
                "normalizer expects {c} channels, got {}/{}",
                mean.len(),
                std.len()
            )));
        }
        self.normalizer.mean = mean.iter().map(|&m| S::from_f64c(m)).collect();
        self.normalizer.inv_std =
            std.iter().map(|&s| S::from_f64c(1.0 / s.max(1e-6))).collect();
        Ok(())
    }

    pub fn normalizer_constants(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.normalizer.mean.iter().map(|v| v.to_f64().unwrap()).collect(),
            self.normalizer.inv_std.iter().map(|v| 1.0 / v.to_f64().unwrap()).collect(),
        )
    }

    /// Full caching forward pass: features, logits, and the backward cache.
    pub fn forward(&self, x: &Array4<S>) -> NetForward<S> {
        let mut act = self.normalizer.apply(x);
        let mut blocks = Vec::with_capacity(self.convs.len());
        for (conv, pool) in &self.convs {
            let (y, conv_cache) = conv.forward(&act);
            let (y, mask) = relu4(&y);
            let (y, pool_cache) = if *pool {
                let (h, w) = (y.shape()[2], y.shape()[3]);
                let (p, arg) = maxpool2(&y);
                (p, Some((arg, h, w)))
            } else {
                (y, None)
            };
            blocks.push(BlockCache { conv: conv_cache, mask, pool: pool_cache });
            act = y;
        }
        let dims = (act.shape()[0], act.shape()[1], act.shape()[2], act.shape()[3]);
        let features = act
            .into_shape_with_order((dims.0, self.feature_dim))
            .expect("conv output flattens to feature_dim");
        let (h1, fc1_cache) = self.fc1.forward(&features);
        let (h1, fc1_mask) = relu2(&h1);
        let (logits, fc2_cache) = self.fc2.forward(&h1);
        NetForward {
            features,
            logits,
            cache: NetCache { blocks, feat_dims: dims, fc1: fc1_cache, fc1_mask, fc2: fc2_cache },
        }
    }

    /// Inference-only logits.
    pub fn infer_logits(&self, x: &Array4<S>) -> Array2<S> {
        self.forward(x).logits
    }

    /// Inference-only features.
    pub fn infer_features(&self, x: &Array4<S>) -> Array2<S> {
        self.forward(x).features
    }

    /// Backpropagate. `grad_logits` flows through the head; `grad_features`
    /// is injected directly at the feature interface (the path the domain
    /// classifier feeds, after any gradient reversal). Parameter gradients
    /// accumulate; the input gradient is discarded.
    pub fn backward(
        &mut self,
        cache: &NetCache<S>,
        grad_logits: Option<&Array2<S>>,
        grad_features: Option<&Array2<S>>,
    ) {
        let (b, c, h, w) = cache.feat_dims;
        let mut g_feat = Array2::<S>::zeros((b, self.feature_dim));
        if let Some(gl) = grad_logits {
            let g = self.fc2.backward(gl, &cache.fc2);
            let g = relu2_backward(&g, &cache.fc1_mask);
            g_feat = g_feat + self.fc1.backward(&g, &cache.fc1);
        }
        if let Some(gf) = grad_features {
            g_feat = g_feat + gf;
        }
        let mut g = g_feat
            .into_shape_with_order((b, c, h, w))
            .expect("feature gradient reshapes to conv dims");
        for ((conv, _), block) in self.convs.iter_mut().zip(&cache.blocks).rev() {
            if let Some((arg, ph, pw)) = &block.pool {
                g = maxpool2_backward(&g, arg, *ph, *pw);
            }
            g = relu4_backward(&g, &block.mask);
            g = conv.backward(&g, &block.conv);
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut ParamVisitorMut<'_, S>) {
        for (i, (conv, _)) in self.convs.iter_mut().enumerate() {
            conv.visit_mut(&format!("conv{i}"), f);
        }
        self.fc1.visit_mut("fc1", f);
        self.fc2.visit_mut("fc2", f);
    }

    pub fn visit_params(&self, f: &mut ParamVisitor<'_, S>) {
        for (i, (conv, _)) in self.convs.iter().enumerate() {
            conv.visit(&format!("conv{i}"), f);
        }
        self.fc1.visit("fc1", f);
        self.fc2.visit("fc2", f);
    }

    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, _, v| n += v.len());
        n
    }

    /// FNV-1a over all parameter bit patterns.
    pub fn checksum(&self) -> u64 {
        let mut h = FNV_OFFSET;
        self.visit_params(&mut |_, _, v| fold_bits(&mut h, v));
        h
    }

    pub fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |_, _, _, g| g.fill(S::zero()));
    }
}

/// Argmax class prediction for a batch.
pub fn predict<S: Scalar>(net: &ClassifierNetwork<S>, batch: &Array4<S>) -> Vec<u32> {
    predict_rows(&net.infer_logits(batch))
}

/// Per-channel mean and standard deviation of an image stack, in f64.
/// Feed the source training split here; target statistics must not leak
/// into the normalizer.
pub fn channel_stats<S: Scalar>(images: &Array4<S>) -> (Vec<f64>, Vec<f64>) {
    let channels = images.shape()[1];
    let per_channel = (images.len() / channels) as f64;
    let mut mean = vec![0.0f64; channels];
    let mut var = vec![0.0f64; channels];
    for c in 0..channels {
        let plane = images.index_axis(ndarray::Axis(1), c);
        let m: f64 = plane.iter().map(|v| v.to_f64().unwrap()).sum::<f64>() / per_channel;
        let v: f64 = plane
            .iter()
            .map(|x| {
                let d = x.to_f64().unwrap() - m;
                d * d
            })
            .sum::<f64>()
            / per_channel;
        mean[c] = m;
        var[c] = v;
    }
    (mean, var.into_iter().map(f64::sqrt).collect())
}

/// Backward cache of a domain-classifier forward.
pub struct DclfCache<S> {
    fc1: LinearCache<S>,
    mask: Array2<bool>,
    fc2: LinearCache<S>,
}

/// Binary source/target head: feature_dim -> feature_dim/2 -> 2 with a
/// rectifier in between, attached behind a gradient reversal operator.
#[derive(Debug, Clone)]
pub struct DomainClassifier<S> {
    feature_dim: usize,
    grl: GradientReversal<S>,
    fc1: Linear<S>,
    fc2: Linear<S>,
}

impl<S: Scalar> DomainClassifier<S> {
    pub fn new(feature_dim: usize, lambda: S, seed: u64) -> Result<Self> {
        if feature_dim < 2 {
            return Err(Error::Config(format!("feature_dim {feature_dim} < 2")));
        }
        let grl = GradientReversal::new(lambda)?;
        let mut rng = stream_rng(seed, 0, Stream::NetworkInit { network: 0 });
        let hidden = (feature_dim / 2).max(2);
        Ok(Self {
            feature_dim,
            grl,
            fc1: Linear::new(feature_dim, hidden, &mut rng),
            fc2: Linear::new(hidden, 2, &mut rng),
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn grl(&self) -> &GradientReversal<S> {
        &self.grl
    }

    pub fn forward(&self, features: &Array2<S>) -> Result<(Array2<S>, DclfCache<S>)> {
        if features.shape()[1] != self.feature_dim {
            return Err(Error::Shape(format!(
                "domain classifier expects {} features, got {}",
                self.feature_dim,
                features.shape()[1]
            )));
        }
        let (h, fc1) = self.fc1.forward(features);
        let (h, mask) = relu2(&h);
        let (logits, fc2) = self.fc2.forward(&h);
        Ok((logits, DclfCache { fc1, mask, fc2 }))
    }

    /// Accumulate head gradients; returns the gradient w.r.t. the input
    /// features *before* gradient reversal. Compose with
    /// [`GradientReversal::backward`] to get the feature-extractor signal.
    pub fn backward(&mut self, grad_logits: &Array2<S>, cache: &DclfCache<S>) -> Array2<S> {
        let g = self.fc2.backward(grad_logits, &cache.fc2);
        let g = relu2_backward(&g, &cache.mask);
        self.fc1.backward(&g, &cache.fc1)
    }

    pub fn visit_params_mut(&mut self, f: &mut ParamVisitorMut<'_, S>) {
        self.fc1.visit_mut("dclf.fc1", f);
        self.fc2.visit_mut("dclf.fc2", f);
    }

    pub fn visit_params(&self, f: &mut ParamVisitor<'_, S>) {
        self.fc1.visit("dclf.fc1", f);
        self.fc2.visit("dclf.fc2", f);
    }

    pub fn checksum(&self) -> u64 {
        let mut h = FNV_OFFSET;
        self.visit_params(&mut |_, _, v| fold_bits(&mut h, v));
        h
    }

    pub fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |_, _, _, g| g.fill(S::zero()));
    }
}
