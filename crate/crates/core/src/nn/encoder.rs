use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ops::{
    batch_norm_backward, batch_norm_forward, center_columns, conv_backward, conv_forward, group_norm_backward,
    group_norm_forward, linear_backward, linear_forward, ConvShape, GroupLayout,
};
use super::{Param, ParamSet};
use crate::image::{Image, CHANNELS};
use crate::{Error, Result};

/// Per-channel input normalization applied inside the encoder.
const INPUT_MEAN: f32 = 0.5;
const INPUT_STD: f32 = 0.25;

/// Convolutional backbone: per stage one 3x3 conv, group normalization and a
/// ReLU, then global average pooling. The projection head is fc1, batch
/// normalization without affine parameters, ReLU, fc2, then subtraction of
/// the batch mean. Both head statistics come from the current batch, so
/// projections depend on the batch they are computed in and need at least
/// two samples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
    /// Hidden width of the two-layer projection head.
    pub hidden_dim: usize,
    /// Channels per group of the per-sample group normalization after every
    /// conv; a stage uses `gcd(channels, norm_group_channels)`. 1 normalizes
    /// each channel separately, 0 disables normalization.
    pub norm_group_channels: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            channels: vec![32, 64, 96, 128],
            strides: vec![1, 2, 2, 2],
            hidden_dim: 128,
            norm_group_channels: 1,
        }
    }
}

/// Full encoder description: backbone, projection head and input size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderArch {
    pub backbone: BackboneConfig,
    pub embedding_dim: usize,
    pub input_size: usize,
}

/// A batch of square RGB images in `[C, B, H, W]` layout, normalized.
#[derive(Debug, Clone)]
pub struct Batch {
    pub len: usize,
    pub size: usize,
    data: Vec<f32>,
}

impl Batch {
    pub fn from_images(images: &[Image]) -> Result<Batch> {
        let first = images
            .first()
            .ok_or_else(|| Error::Contract("empty image batch".into()))?;
        let size = first.width();
        if images.iter().any(|i| i.width() != size || i.height() != size) {
            return Err(Error::Contract(
                "batch images must share one square size".into(),
            ));
        }
        let (b, hw) = (images.len(), size * size);
        let mut data = vec![0.0f32; CHANNELS * b * hw];
        for (bi, img) in images.iter().enumerate() {
            for (p, px) in img.data().chunks(CHANNELS).enumerate() {
                for c in 0..CHANNELS {
                    data[(c * b + bi) * hw + p] = (px[c] - INPUT_MEAN) / INPUT_STD;
                }
            }
        }
        Ok(Batch {
            len: b,
            size,
            data,
        })
    }
}

struct ConvCache {
    shape: ConvShape,
    cols: Vec<f32>,
    /// Normalized conv output before the ReLU.
    normed: Vec<f32>,
    inv_std: Vec<f32>,
}

/// Activations kept for the backward pass.
pub struct ForwardCache {
    convs: Vec<ConvCache>,
    batch: usize,
    pooled: Vec<f32>,
    /// Batch-normalized fc1 output, before the ReLU.
    normed: Vec<f32>,
    inv_std: Vec<f32>,
    hidden: Vec<f32>,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 { a } else { gcd(b, a % b) }
}

impl EncoderArch {
    pub fn validate(&self) -> Result<()> {
        let b = &self.backbone;
        if b.channels.is_empty() || b.channels.len() != b.strides.len() {
            return Err(Error::Validation(
                "backbone channels and strides must be non-empty and of equal length".into(),
            ));
        }
        if b.channels.contains(&0) || b.strides.iter().any(|s| !(1..=2).contains(s)) {
            return Err(Error::Validation(
                "backbone channels must be positive and strides 1 or 2".into(),
            ));
        }
        if b.hidden_dim == 0 || self.embedding_dim == 0 || self.input_size == 0 {
            return Err(Error::Validation("encoder dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Width of the pooled backbone features.
    pub fn feature_dim(&self) -> usize {
        *self.backbone.channels.last().expect("validated")
    }

    fn num_backbone_params(&self) -> usize {
        2 * self.backbone.channels.len()
    }

    /// Kaiming-normal initialization, zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamSet {
        let mut set = ParamSet::default();
        let normal = |fan_in: usize, gain: f32| {
            Normal::new(0.0f32, (gain / fan_in as f32).sqrt()).expect("positive std")
        };
        let mut cin = CHANNELS;
        for (i, &cout) in self.backbone.channels.iter().enumerate() {
            let dist = normal(cin * 9, 2.0);
            let mut w = Param::zeros(format!("backbone.conv{i}.weight"), vec![cout, cin, 3, 3]);
            w.data.iter_mut().for_each(|v| *v = dist.sample(rng));
            set.push(w);
            set.push(Param::zeros(format!("backbone.conv{i}.bias"), vec![cout]));
            cin = cout;
        }
        let feat = self.feature_dim();
        let hidden = self.backbone.hidden_dim;
        for (name, inp, out, gain) in [
            ("head.fc1", feat, hidden, 2.0),
            ("head.fc2", hidden, self.embedding_dim, 1.0),
        ] {
            let dist = normal(inp, gain);
            let mut w = Param::zeros(format!("{name}.weight"), vec![out, inp]);
            w.data.iter_mut().for_each(|v| *v = dist.sample(rng));
            set.push(w);
            set.push(Param::zeros(format!("{name}.bias"), vec![out]));
        }
        set
    }

    fn check(&self, params: &ParamSet, batch: &Batch) -> Result<()> {
        if batch.size != self.input_size {
            return Err(Error::Contract(format!(
                "encoder expects {0}x{0} inputs, got {1}x{1}",
                self.input_size, batch.size
            )));
        }
        if params.len() != self.num_backbone_params() + 4 {
            return Err(Error::Contract(
                "parameter collection does not match the encoder".into(),
            ));
        }
        Ok(())
    }

    fn check_head_batch(&self, params: &ParamSet, batch: &Batch) -> Result<()> {
        self.check(params, batch)?;
        if batch.len < 2 {
            return Err(Error::Contract(
                "the batch-normalized projection head needs at least two samples".into(),
            ));
        }
        Ok(())
    }

    /// Pooled backbone features `[B, feature_dim]`.
    pub fn features(&self, params: &ParamSet, batch: &Batch) -> Result<Vec<f32>> {
        self.check(params, batch)?;
        Ok(self.backbone_forward(params, batch, false).0)
    }

    fn backbone_forward(&self, params: &ParamSet, batch: &Batch, keep: bool) -> (Vec<f32>, Vec<ConvCache>) {
        let mut act = batch.data.clone();
        let (mut h, mut w, mut cin) = (batch.size, batch.size, CHANNELS);
        let mut caches = Vec::new();
        for (i, (&cout, &stride)) in self
            .backbone
            .channels
            .iter()
            .zip(&self.backbone.strides)
            .enumerate()
        {
            let shape = ConvShape {
                cin,
                cout,
                stride,
                batch: batch.len,
                h,
                w,
            };
            let (pre, cols) = conv_forward(&act, &params.index(2 * i).data, &params.index(2 * i + 1).data, &shape);
            let (normed, inv_std) = match self.group_layout(&shape) {
                Some(l) => group_norm_forward(&pre, &l),
                None => (pre, Vec::new()),
            };
            act = normed.iter().map(|v| v.max(0.0)).collect();
            (h, w) = shape.out_hw();
            cin = cout;
            if keep {
                caches.push(ConvCache {
                    shape,
                    cols,
                    normed,
                    inv_std,
                });
            }
        }
        // Global average pool: [C, B, HW] -> [B, C].
        let hw = h * w;
        let mut pooled = vec![0.0f32; batch.len * cin];
        for c in 0..cin {
            for b in 0..batch.len {
                let s: f32 = act[(c * batch.len + b) * hw..][..hw].iter().sum();
                pooled[b * cin + c] = s / hw as f32;
            }
        }
        (pooled, caches)
    }

    fn group_layout(&self, shape: &ConvShape) -> Option<GroupLayout> {
        let k = self.backbone.norm_group_channels;
        (k > 0).then(|| {
            let (h, w) = shape.out_hw();
            GroupLayout {
                channels: shape.cout,
                batch: shape.batch,
                hw: h * w,
                groups: shape.cout / gcd(shape.cout, k),
            }
        })
    }

    /// Gradient of the pooled features back into the backbone parameters.
    fn backbone_backward(&self, params: &ParamSet, caches: &[ConvCache], d_pooled: &[f32], grads: &mut ParamSet) {
        let last = caches.last().expect("at least one stage");
        let (ho, wo) = last.shape.out_hw();
        let (hw, b, c) = (ho * wo, last.shape.batch, last.shape.cout);
        let mut d_act = vec![0.0f32; c * b * hw];
        for ci in 0..c {
            for bi in 0..b {
                let g = d_pooled[bi * c + ci] / hw as f32;
                d_act[(ci * b + bi) * hw..][..hw].fill(g);
            }
        }
        for (i, cache) in caches.iter().enumerate().rev() {
            let (dw_bias, rest) = (2 * i, 2 * i + 1);
            let mut d_w = std::mem::take(&mut grads.index_mut(dw_bias).data);
            let mut d_b = std::mem::take(&mut grads.index_mut(rest).data);
            for (g, a) in d_act.iter_mut().zip(&cache.normed) {
                if *a <= 0.0 {
                    *g = 0.0;
                }
            }
            if let Some(l) = self.group_layout(&cache.shape) {
                d_act = group_norm_backward(&cache.normed, &cache.inv_std, &d_act, &l);
            }
            let d_in = conv_backward(
                &d_act,
                &cache.cols,
                &params.index(2 * i).data,
                &cache.shape,
                &mut d_w,
                &mut d_b,
                i > 0,
            );
            grads.index_mut(dw_bias).data = d_w;
            grads.index_mut(rest).data = d_b;
            if let Some(d) = d_in {
                d_act = d;
            }
        }
    }

    /// Unnormalized projection-head output `[B, embedding_dim]`.
    pub fn project(&self, params: &ParamSet, batch: &Batch) -> Result<Vec<f32>> {
        self.check_head_batch(params, batch)?;
        Ok(self.forward_inner(params, batch, false).0)
    }

    fn forward_inner(&self, params: &ParamSet, batch: &Batch, keep: bool) -> (Vec<f32>, ForwardCache) {
        let (pooled, convs) = self.backbone_forward(params, batch, keep);
        let nb = self.num_backbone_params();
        let (feat, hid, d) = (self.feature_dim(), self.backbone.hidden_dim, self.embedding_dim);
        let pre = linear_forward(
            &pooled,
            batch.len,
            feat,
            &params.index(nb).data,
            &params.index(nb + 1).data,
            hid,
        );
        let (normed, inv_std) = batch_norm_forward(&pre, hid, batch.len);
        let hidden: Vec<f32> = normed.iter().map(|v| v.max(0.0)).collect();
        let mut z = linear_forward(
            &hidden,
            batch.len,
            hid,
            &params.index(nb + 2).data,
            &params.index(nb + 3).data,
            d,
        );
        center_columns(&mut z, d);
        (
            z,
            ForwardCache {
                convs,
                batch: batch.len,
                pooled,
                normed,
                inv_std,
                hidden,
            },
        )
    }

    /// L2-normalized embeddings `[B, embedding_dim]`.
    pub fn embed(&self, params: &ParamSet, batch: &Batch) -> Result<Vec<f32>> {
        let mut z = self.project(params, batch)?;
        for row in z.chunks_mut(self.embedding_dim) {
            normalize(row);
        }
        Ok(z)
    }

    /// Forward pass keeping activations for [`EncoderArch::backward_embed`].
    /// Returns normalized embeddings, raw projections and the cache.
    pub fn embed_train(&self, params: &ParamSet, batch: &Batch) -> Result<(Vec<f32>, Vec<f32>, ForwardCache)> {
        self.check_head_batch(params, batch)?;
        let (z, cache) = self.forward_inner(params, batch, true);
        let mut q = z.clone();
        for row in q.chunks_mut(self.embedding_dim) {
            normalize(row);
        }
        Ok((q, z, cache))
    }

    /// Backpropagates `d_q` (gradient w.r.t. the normalized embeddings)
    /// through normalization, head and backbone, accumulating into `grads`.
    pub fn backward_embed(
        &self,
        params: &ParamSet,
        cache: &ForwardCache,
        raw: &[f32],
        d_q: &[f32],
        grads: &mut ParamSet,
    ) -> Result<()> {
        params.check_layout(grads)?;
        let d = self.embedding_dim;
        let mut d_z = vec![0.0f32; raw.len()];
        for ((z, gq), gz) in raw.chunks(d).zip(d_q.chunks(d)).zip(d_z.chunks_mut(d)) {
            let norm = z.iter().map(|v| v * v).sum::<f32>().sqrt().max(NORM_EPS);
            let dot: f32 = z.iter().zip(gq).map(|(a, b)| a * b).sum::<f32>() / norm;
            for ((o, zi), gi) in gz.iter_mut().zip(z).zip(gq) {
                // d(z/|z|) = (g - q (q.g)) / |z|
                *o = (gi - zi / norm * dot) / norm;
            }
        }
        let nb = self.num_backbone_params();
        let (feat, hid) = (self.feature_dim(), self.backbone.hidden_dim);
        let b = cache.batch;
        let mut d_hidden = {
            let (mut dw, mut db) = (
                std::mem::take(&mut grads.index_mut(nb + 2).data),
                std::mem::take(&mut grads.index_mut(nb + 3).data),
            );
            // Centering is a projection, so its backward is the same centering.
            let mut d_z_pre = d_z;
            center_columns(&mut d_z_pre, d);
            let dh = linear_backward(&cache.hidden, b, hid, &params.index(nb + 2).data, d, &d_z_pre, &mut dw, &mut db, true);
            grads.index_mut(nb + 2).data = dw;
            grads.index_mut(nb + 3).data = db;
            dh.expect("requested")
        };
        for (g, h) in d_hidden.iter_mut().zip(&cache.normed) {
            if *h <= 0.0 {
                *g = 0.0;
            }
        }
        let d_pre = batch_norm_backward(&cache.normed, &cache.inv_std, &d_hidden, hid, b);
        let d_pooled = {
            let (mut dw, mut db) = (
                std::mem::take(&mut grads.index_mut(nb).data),
                std::mem::take(&mut grads.index_mut(nb + 1).data),
            );
            let dp = linear_backward(&cache.pooled, b, feat, &params.index(nb).data, hid, &d_pre, &mut dw, &mut db, true);
            grads.index_mut(nb).data = dw;
            grads.index_mut(nb + 1).data = db;
            dp.expect("requested")
        };
        self.backbone_backward(params, &cache.convs, &d_pooled, grads);
        Ok(())
    }

    /// Backbone-only forward keeping activations for [`EncoderArch::backward_features`].
    pub fn features_train(&self, params: &ParamSet, batch: &Batch) -> Result<(Vec<f32>, ForwardCache)> {
        self.check(params, batch)?;
        let (pooled, convs) = self.backbone_forward(params, batch, true);
        Ok((
            pooled.clone(),
            ForwardCache {
                convs,
                batch: batch.len,
                pooled,
                normed: Vec::new(),
                inv_std: Vec::new(),
                hidden: Vec::new(),
            },
        ))
    }

    /// Backpropagates a gradient on the pooled features into the backbone
    /// parameters; head gradients are left untouched.
    pub fn backward_features(
        &self,
        params: &ParamSet,
        cache: &ForwardCache,
        d_features: &[f32],
        grads: &mut ParamSet,
    ) -> Result<()> {
        params.check_layout(grads)?;
        self.backbone_backward(params, &cache.convs, d_features, grads);
        Ok(())
    }

    /// Indices of backbone tensors within the parameter collection.
    pub fn backbone_param_range(&self) -> std::ops::Range<usize> {
        0..self.num_backbone_params()
    }
}

const NORM_EPS: f32 = 1e-12;

fn normalize(v: &mut [f32]) {
    let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt().max(NORM_EPS);
    v.iter_mut().for_each(|x| *x /= norm);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn tiny() -> EncoderArch {
        EncoderArch {
            backbone: BackboneConfig {
                channels: vec![4, 6, 5],
                strides: vec![1, 2, 2],
                hidden_dim: 7,
                norm_group_channels: 2,
            },
            embedding_dim: 3,
            input_size: 8,
        }
    }

    fn images(n: usize, size: usize, seed: u64) -> Vec<Image> {
        let mut rng = seeded(seed);
        (0..n)
            .map(|_| Image::from_fn(size, size, |_, _| [rng.random(), rng.random(), rng.random()]))
            .collect()
    }

    // Scalar objective sum_i <q_i, c_i> over normalized embeddings, in f64.
    fn objective(arch: &EncoderArch, params: &ParamSet, batch: &Batch, coef: &[f32]) -> f64 {
        arch.embed(params, batch)
            .unwrap()
            .iter()
            .zip(coef)
            .map(|(a, b)| f64::from(*a) * f64::from(*b))
            .sum()
    }

    #[test]
    fn embeddings_are_unit_norm_and_deterministic() {
        let arch = tiny();
        let params = arch.init_params(&mut seeded(1));
        let mut imgs = images(4, 8, 2);
        imgs[3] = imgs[0].clone();
        let batch = Batch::from_images(&imgs).unwrap();
        let q = arch.embed(&params, &batch).unwrap();
        for row in q.chunks(3) {
            let n: f32 = row.iter().map(|v| v * v).sum::<f32>().sqrt();
            assert!((n - 1.0).abs() < 1e-5);
        }
        assert_eq!(&q[0..3], &q[9..12]);
    }

    #[test]
    fn normalized_output_matches_unnormalized_forward() {
        let arch = tiny();
        let mut params = arch.init_params(&mut seeded(3));
        let batch = Batch::from_images(&images(4, 8, 4)).unwrap();
        let raw = arch.project(&params, &batch).unwrap();
        let q = arch.embed(&params, &batch).unwrap();
        for (r, e) in raw.chunks(3).zip(q.chunks(3)) {
            let n = r.iter().map(|v| v * v).sum::<f32>().sqrt();
            for (a, b) in r.iter().zip(e) {
                assert!((a / n - b).abs() < 1e-6);
            }
        }
        // Centering cancels any shift of the last bias.
        let last = params.len() - 1;
        params.index_mut(last).data.iter_mut().for_each(|v| *v += 0.7);
        let raw2 = arch.project(&params, &batch).unwrap();
        for (a, b) in raw2.iter().zip(&raw) {
            assert!((a - b).abs() < 1e-4);
        }
        // Every output coordinate is centred over the batch.
        for j in 0..3 {
            assert!(raw.iter().skip(j).step_by(3).sum::<f32>().abs() < 1e-4);
        }
        let one = Batch::from_images(&images(1, 8, 4)).unwrap();
        assert!(matches!(arch.embed(&params, &one), Err(Error::Contract(_))));
    }

    #[test]
    fn rejects_wrong_input_size() {
        let arch = tiny();
        let params = arch.init_params(&mut seeded(1));
        let batch = Batch::from_images(&images(1, 9, 0)).unwrap();
        assert!(matches!(arch.embed(&params, &batch), Err(Error::Contract(_))));
    }

    /// Central difference, falling back to one-sided differences so that a
    /// ReLU kink inside `[-h, h]` does not produce a false mismatch.
    fn fd_agrees(f: impl Fn(f32) -> f64, h: f32, analytic: f64) -> Result<(), String> {
        let (p, z, m) = (f(h), f(0.0), f(-h));
        let h = f64::from(h);
        let candidates = [(p - m) / (2.0 * h), (p - z) / h, (z - m) / h];
        if candidates
            .iter()
            .any(|fd| (fd - analytic).abs() < 2e-3 + 0.05 * analytic.abs().max(fd.abs()))
        {
            Ok(())
        } else {
            Err(format!("fd {candidates:?} vs analytic {analytic}"))
        }
    }

    #[test]
    fn embedding_gradient_matches_finite_differences() {
        let arch = tiny();
        let params = arch.init_params(&mut seeded(5));
        let batch = Batch::from_images(&images(3, 8, 6)).unwrap();
        let coef: Vec<f32> = (0..9).map(|i| ((i * 7 % 5) as f32 - 2.0) / 3.0).collect();

        let (_, raw, cache) = arch.embed_train(&params, &batch).unwrap();
        let mut grads = params.zeros_like();
        arch.backward_embed(&params, &cache, &raw, &coef, &mut grads).unwrap();

        let h = 1e-3f32;
        let mut checked = 0;
        for pi in 0..params.len() {
            for vi in (0..params.index(pi).data.len()).step_by(5) {
                let shifted = |d: f32| {
                    let mut p = params.clone();
                    p.index_mut(pi).data[vi] += d;
                    objective(&arch, &p, &batch, &coef)
                };
                let an = f64::from(grads.index(pi).data[vi]);
                if let Err(msg) = fd_agrees(shifted, h, an) {
                    panic!("{} [{vi}]: {msg}", params.index(pi).name);
                }
                checked += 1;
            }
        }
        assert!(checked > 50);
    }

    #[test]
    fn feature_gradient_matches_finite_differences() {
        let arch = tiny();
        let params = arch.init_params(&mut seeded(8));
        let batch = Batch::from_images(&images(2, 8, 9)).unwrap();
        let coef: Vec<f32> = (0..10).map(|i| (i as f32 - 4.5) / 4.0).collect();
        let obj = |p: &ParamSet| -> f64 {
            arch.features(p, &batch)
                .unwrap()
                .iter()
                .zip(&coef)
                .map(|(a, b)| f64::from(*a) * f64::from(*b))
                .sum()
        };
        let (_, cache) = arch.features_train(&params, &batch).unwrap();
        let mut grads = params.zeros_like();
        arch.backward_features(&params, &cache, &coef, &mut grads).unwrap();
        let h = 1e-3f32;
        for pi in arch.backbone_param_range() {
            for vi in (0..params.index(pi).data.len()).step_by(7) {
                let shifted = |d: f32| {
                    let mut p = params.clone();
                    p.index_mut(pi).data[vi] += d;
                    obj(&p)
                };
                let an = f64::from(grads.index(pi).data[vi]);
                if let Err(msg) = fd_agrees(shifted, h, an) {
                    panic!("{pi}[{vi}]: {msg}");
                }
            }
        }
        // Head gradients untouched.
        for pi in arch.backbone_param_range().end..params.len() {
            assert!(grads.index(pi).data.iter().all(|v| *v == 0.0));
        }
    }
}
