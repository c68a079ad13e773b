//! Densely connected backbone with a 1×1 convolutional pixel head and a
//! binary head on the flattened map.
//!
//! stem conv (stride 2) → avg pool → [dense block → transition]×2 → dense
//! block → 1×1 conv → sigmoid map → affine → sigmoid binary.

use rand::Rng;

use super::ops::{avg_pool2, avg_pool2_backward, relu, relu_backward, Conv2d, Linear};
use super::params::{Grads, ParamStore};
use super::tensor::{Scalar, Tensor};
use super::ModelConfig;

#[derive(Debug, Clone)]
pub struct DensePix {
    stem: Conv2d,
    blocks: Vec<Vec<Conv2d>>,
    transitions: Vec<Conv2d>,
    head: Conv2d,
    binary: Linear,
}

/// Activations kept for the backward pass.
pub struct DenseCache<T> {
    input: Tensor<T>,
    stem_pre: Tensor<T>,
    /// Feature stack entering each dense layer, per block.
    layer_inputs: Vec<Vec<Tensor<T>>>,
    /// Feature stack at the end of each block.
    block_outputs: Vec<Tensor<T>>,
}

impl DensePix {
    pub fn build<T: Scalar>(cfg: &ModelConfig, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Self {
        let stem = Conv2d::new(store, "stem", 3, cfg.stem_channels, 3, 2, rng);
        let mut channels = cfg.stem_channels;
        let mut blocks = Vec::new();
        let mut transitions = Vec::new();
        let n_blocks = cfg.block_layers.len();
        for (b, &n_layers) in cfg.block_layers.iter().enumerate() {
            let mut layers = Vec::new();
            for l in 0..n_layers {
                layers.push(Conv2d::new(store, &format!("block{b}.layer{l}"), channels, cfg.growth_rate, 3, 1, rng));
                channels += cfg.growth_rate;
            }
            blocks.push(layers);
            if b + 1 < n_blocks {
                let out = (channels / 2).max(1);
                transitions.push(Conv2d::new(store, &format!("transition{b}"), channels, out, 1, 1, rng));
                channels = out;
            }
        }
        let head = Conv2d::new(store, "pixel_head", channels, 1, 1, 1, rng);
        let m = cfg.map_size();
        let binary = Linear::new(store, "binary_head", m * m, 1, rng);
        DensePix { stem, blocks, transitions, head, binary }
    }

    /// Returns (map logits, cache).
    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, input: Tensor<T>) -> (Vec<T>, DenseCache<T>) {
        let stem_pre = self.stem.forward(store, &input);
        let mut feats = avg_pool2(&relu(&stem_pre));
        let mut layer_inputs = Vec::with_capacity(self.blocks.len());
        let mut block_outputs = Vec::with_capacity(self.blocks.len());
        for (b, block) in self.blocks.iter().enumerate() {
            let mut inputs = Vec::with_capacity(block.len());
            for conv in block {
                let new = conv.forward(store, &relu(&feats));
                inputs.push(feats.clone());
                feats = feats.concat(&new);
            }
            layer_inputs.push(inputs);
            block_outputs.push(feats.clone());
            if let Some(t) = self.transitions.get(b) {
                feats = avg_pool2(&t.forward(store, &relu(&feats)));
            }
        }
        let logits = self.head.forward(store, &relu(&feats)).data;
        (logits, DenseCache { input, stem_pre, layer_inputs, block_outputs })
    }

    pub fn binary_logit<T: Scalar>(&self, store: &ParamStore<T>, map: &[T]) -> T {
        self.binary.forward(store, map)[0]
    }

    /// Gradient of the binary logit with respect to the map probabilities.
    pub fn binary_backward<T: Scalar>(&self, store: &ParamStore<T>, map: &[T], d_logit: T, grads: &mut Grads<T>) -> Vec<T> {
        self.binary.backward(store, map, &[d_logit], grads)
    }

    pub fn backward<T: Scalar>(&self, store: &ParamStore<T>, cache: &DenseCache<T>, d_logits: &[T], grads: &mut Grads<T>) {
        let last = cache.block_outputs.last().expect("at least one block");
        let d_head = Tensor::from_vec(1, last.h, last.w, d_logits.to_vec());
        let dr = self.head.backward(store, &relu(last), &d_head, grads, true).unwrap();
        let mut d_feats = relu_backward(last, &dr);
        for b in (0..self.blocks.len()).rev() {
            let block_out = &cache.block_outputs[b];
            if let Some(t) = self.transitions.get(b) {
                let dt = avg_pool2_backward(&d_feats);
                let dr = t.backward(store, &relu(block_out), &dt, grads, true).unwrap();
                d_feats = relu_backward(block_out, &dr);
            }
            for (l, conv) in self.blocks[b].iter().enumerate().rev() {
                let before = &cache.layer_inputs[b][l];
                let split = before.c * before.plane_len();
                let d_new = Tensor::from_vec(conv.out_c, before.h, before.w, d_feats.data[split..].to_vec());
                let mut d_before = Tensor::from_vec(before.c, before.h, before.w, d_feats.data[..split].to_vec());
                let dr = conv.backward(store, &relu(before), &d_new, grads, true).unwrap();
                d_before.add_assign(&relu_backward(before, &dr));
                d_feats = d_before;
            }
        }
        let da = avg_pool2_backward(&d_feats);
        let ds = relu_backward(&cache.stem_pre, &da);
        self.stem.backward(store, &cache.input, &ds, grads, false);
    }

    /// (size, jump, centre of cell 0) of a map cell's receptive field in
    /// input pixels.
    pub fn receptive_field(&self) -> (f64, f64, f64) {
        let mut rf = ReceptiveField::default();
        rf.conv(3, 2, 1);
        rf.pool2();
        for (b, block) in self.blocks.iter().enumerate() {
            for _ in block {
                rf.conv(3, 1, 1);
            }
            if b < self.transitions.len() {
                rf.conv(1, 1, 0);
                rf.pool2();
            }
        }
        rf.conv(1, 1, 0);
        (rf.size, rf.jump, rf.start)
    }
}

/// Receptive-field arithmetic for a chain of layers.
struct ReceptiveField {
    size: f64,
    jump: f64,
    start: f64,
}

impl Default for ReceptiveField {
    fn default() -> Self {
        ReceptiveField { size: 1.0, jump: 1.0, start: 0.5 }
    }
}

impl ReceptiveField {
    fn conv(&mut self, k: usize, stride: usize, pad: usize) {
        self.size += (k as f64 - 1.0) * self.jump;
        self.start += ((k as f64 - 1.0) / 2.0 - pad as f64) * self.jump;
        self.jump *= stride as f64;
    }

    fn pool2(&mut self) {
        self.size += self.jump;
        self.start += 0.5 * self.jump;
        self.jump *= 2.0;
    }
}
