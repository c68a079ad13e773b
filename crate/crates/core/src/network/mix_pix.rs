//! Mixed-kernel depthwise backbone with channel shuffle; the embedding stage
//! is replaced by two fully connected layers (pixel map, then binary).
//!
//! stem conv (stride 2) → avg pool → 3 stages of
//! `[1×1 expand → mixed depthwise {3,5,7} → shuffle → 1×1 project + skip]`
//! (avg pool between stages) → 1×1 conv → global depthwise conv → FC map →
//! FC binary.

use rand::Rng;

use super::ops::{
    avg_pool2, avg_pool2_backward, permute_channels, permute_channels_backward, relu, relu_backward,
    shuffle_permutation, Conv2d, DepthwiseConv2d, GlobalDepthwise, Linear,
};
use super::params::{Grads, ParamStore};
use super::tensor::{Scalar, Tensor};
use super::ModelConfig;

#[derive(Debug, Clone)]
struct MixStage {
    expand: Conv2d,
    mix: Vec<DepthwiseConv2d>,
    shuffle: Vec<usize>,
    project: Conv2d,
}

#[derive(Debug, Clone)]
pub struct MixPix {
    stem: Conv2d,
    stages: Vec<MixStage>,
    head: Conv2d,
    gdc: GlobalDepthwise,
    fc_map: Linear,
    fc_binary: Linear,
}

struct StageCache<T> {
    input: Tensor<T>,
    expand_pre: Tensor<T>,
    mix_pre: Tensor<T>,
    shuffled: Tensor<T>,
    sum_pre: Tensor<T>,
}

pub struct MixCache<T> {
    input: Tensor<T>,
    stem_pre: Tensor<T>,
    stages: Vec<StageCache<T>>,
    head_input: Tensor<T>,
    head_pre: Tensor<T>,
    pooled_input: Tensor<T>,
    features: Vec<T>,
}

/// Split `channels` into one group per kernel size, larger groups first.
fn group_sizes(channels: usize, groups: usize) -> Vec<usize> {
    (0..groups).map(|g| channels / groups + usize::from(g < channels % groups)).collect()
}

impl MixPix {
    pub fn build<T: Scalar>(cfg: &ModelConfig, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Self {
        let stem = Conv2d::new(store, "stem", 3, cfg.stem_channels, 3, 2, rng);
        let mut prev = cfg.stem_channels;
        let mut stages = Vec::new();
        for (s, &c) in cfg.stage_channels.iter().enumerate() {
            let expand = Conv2d::new(store, &format!("stage{s}.expand"), prev, c, 1, 1, rng);
            let sizes = group_sizes(c, cfg.mix_kernels.len());
            let mut mix = Vec::new();
            let mut start = 0;
            for (g, (&k, &n)) in cfg.mix_kernels.iter().zip(&sizes).enumerate() {
                if n > 0 {
                    mix.push(DepthwiseConv2d::new(store, &format!("stage{s}.mix{g}_k{k}"), start, n, k, rng));
                }
                start += n;
            }
            let shuffle = shuffle_permutation(&sizes);
            let project = Conv2d::new(store, &format!("stage{s}.project"), c, c, 1, 1, rng);
            stages.push(MixStage { expand, mix, shuffle, project });
            prev = c;
        }
        let head = Conv2d::new(store, "feature_head", prev, cfg.head_channels, 1, 1, rng);
        let m = cfg.map_size();
        let gdc = GlobalDepthwise::new(store, "gdc", cfg.head_channels, m * m, 0.5, rng);
        let fc_map = Linear::new(store, "fc_map", cfg.head_channels, m * m, rng);
        let fc_binary = Linear::new(store, "fc_binary", m * m, 1, rng);
        MixPix { stem, stages, head, gdc, fc_map, fc_binary }
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, input: Tensor<T>) -> (Vec<T>, MixCache<T>) {
        let stem_pre = self.stem.forward(store, &input);
        let mut x = avg_pool2(&relu(&stem_pre));
        let mut stages = Vec::with_capacity(self.stages.len());
        for (s, st) in self.stages.iter().enumerate() {
            if s > 0 {
                x = avg_pool2(&x);
            }
            let expand_pre = st.expand.forward(store, &x);
            let e = relu(&expand_pre);
            let mut mix_pre = Tensor::zeros(e.c, e.h, e.w);
            for dw in &st.mix {
                dw.forward_into(store, &e, &mut mix_pre);
            }
            let shuffled = permute_channels(&relu(&mix_pre), &st.shuffle);
            let mut sum_pre = st.project.forward(store, &shuffled);
            sum_pre.add_assign(&e);
            let next = relu(&sum_pre);
            stages.push(StageCache { input: x, expand_pre, mix_pre, shuffled, sum_pre });
            x = next;
        }
        let head_pre = self.head.forward(store, &x);
        let pooled_input = relu(&head_pre);
        let features = self.gdc.forward(store, &pooled_input);
        let logits = self.fc_map.forward(store, &features);
        (logits, MixCache { input, stem_pre, stages, head_input: x, head_pre, pooled_input, features })
    }

    pub fn binary_logit<T: Scalar>(&self, store: &ParamStore<T>, map: &[T]) -> T {
        self.fc_binary.forward(store, map)[0]
    }

    pub fn binary_backward<T: Scalar>(&self, store: &ParamStore<T>, map: &[T], d_logit: T, grads: &mut Grads<T>) -> Vec<T> {
        self.fc_binary.backward(store, map, &[d_logit], grads)
    }

    pub fn backward<T: Scalar>(&self, store: &ParamStore<T>, cache: &MixCache<T>, d_logits: &[T], grads: &mut Grads<T>) {
        let d_features = self.fc_map.backward(store, &cache.features, d_logits, grads);
        let d_pooled = self.gdc.backward(store, &cache.pooled_input, &d_features, grads);
        let d_head = relu_backward(&cache.head_pre, &d_pooled);
        let mut dx = self.head.backward(store, &cache.head_input, &d_head, grads, true).unwrap();
        for (s, st) in self.stages.iter().enumerate().rev() {
            let c = &cache.stages[s];
            let d_sum = relu_backward(&c.sum_pre, &dx);
            let e = relu(&c.expand_pre);
            // Skip connection carries d_sum straight to e.
            let mut d_e = d_sum.clone();
            let d_shuf = st.project.backward(store, &c.shuffled, &d_sum, grads, true).unwrap();
            let d_mix = relu_backward(&c.mix_pre, &permute_channels_backward(&d_shuf, &st.shuffle));
            for dw in &st.mix {
                dw.backward_into(store, &e, &d_mix, grads, &mut d_e);
            }
            let d_expand = relu_backward(&c.expand_pre, &d_e);
            dx = st.expand.backward(store, &c.input, &d_expand, grads, true).unwrap();
            if s > 0 {
                dx = avg_pool2_backward(&dx);
            }
        }
        let da = avg_pool2_backward(&dx);
        let ds = relu_backward(&cache.stem_pre, &da);
        self.stem.backward(store, &cache.input, &ds, grads, false);
    }
}
