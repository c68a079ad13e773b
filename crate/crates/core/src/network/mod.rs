//! Dual-head pixel-supervised networks: a 14×14 bona fide probability map
//! plus a binary scalar, in two backbone variants.

pub mod checkpoint;
pub mod dense_pix;
pub mod loss;
pub mod mix_pix;
pub mod ops;
pub mod params;
pub mod tensor;

use std::fmt;
use std::str::FromStr;

use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use loss::{bce, overall_loss, LossTerms, BCE_EPS};
pub use params::{Grads, ParamStore};
pub use tensor::{Scalar, Tensor};

use dense_pix::DensePix;
use mix_pix::MixPix;
use ops::sigmoid;

/// Total downsampling factor between the input and the map.
pub const MAP_STRIDE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    DensePix,
    MixPix,
}

impl Variant {
    pub const ALL: [Variant; 2] = [Variant::DensePix, Variant::MixPix];
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::DensePix => "dense_pix",
            Variant::MixPix => "mix_pix",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense_pix" => Ok(Variant::DensePix),
            "mix_pix" => Ok(Variant::MixPix),
            other => Err(Error::InvalidConfig(format!("unknown backbone '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub input_size: usize,
    pub stem_channels: usize,
    /// dense_pix: channels added per dense layer.
    pub growth_rate: usize,
    /// dense_pix: layers per dense block.
    pub block_layers: Vec<usize>,
    /// mix_pix: channels per stage.
    pub stage_channels: Vec<usize>,
    /// mix_pix: depthwise kernel sizes, one channel group each.
    pub mix_kernels: Vec<usize>,
    /// mix_pix: channels of the 1×1 conv before global pooling.
    pub head_channels: usize,
    pub lambda: f64,
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn dense_pix() -> Self {
        ModelConfig {
            variant: Variant::DensePix,
            input_size: 224,
            stem_channels: 8,
            growth_rate: 8,
            block_layers: vec![2, 2, 2],
            stage_channels: Vec::new(),
            mix_kernels: Vec::new(),
            head_channels: 0,
            lambda: 0.5,
            init_seed: 0,
        }
    }

    pub fn mix_pix() -> Self {
        ModelConfig {
            variant: Variant::MixPix,
            input_size: 224,
            stem_channels: 8,
            growth_rate: 0,
            block_layers: Vec::new(),
            stage_channels: vec![12, 24, 32],
            mix_kernels: vec![3, 5, 7],
            head_channels: 48,
            lambda: 0.5,
            init_seed: 0,
        }
    }

    pub fn for_variant(variant: Variant) -> Self {
        match variant {
            Variant::DensePix => Self::dense_pix(),
            Variant::MixPix => Self::mix_pix(),
        }
    }

    /// Instance small enough for finite-difference gradient checks.
    pub fn tiny(variant: Variant) -> Self {
        let base = Self::for_variant(variant);
        match variant {
            Variant::DensePix => ModelConfig {
                input_size: 32,
                stem_channels: 2,
                growth_rate: 2,
                block_layers: vec![1, 1, 1],
                ..base
            },
            Variant::MixPix => ModelConfig {
                input_size: 32,
                stem_channels: 2,
                stage_channels: vec![3, 3, 4],
                head_channels: 2,
                ..base
            },
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.init_seed = seed;
        self
    }

    pub fn map_size(&self) -> usize {
        self.input_size / MAP_STRIDE
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.input_size == 0 || self.input_size % MAP_STRIDE != 0 {
            return bad(format!("input_size {} must be a positive multiple of {MAP_STRIDE}", self.input_size));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if self.stem_channels == 0 {
            return bad("stem_channels must be positive".into());
        }
        match self.variant {
            Variant::DensePix => {
                if self.block_layers.len() != 3 || self.block_layers.contains(&0) || self.growth_rate == 0 {
                    return bad("dense_pix needs 3 non-empty blocks and a positive growth rate".into());
                }
            }
            Variant::MixPix => {
                if self.stage_channels.len() != 3 || self.stage_channels.contains(&0) || self.head_channels == 0 {
                    return bad("mix_pix needs 3 positive stage widths and head channels".into());
                }
                if self.mix_kernels.is_empty() || self.mix_kernels.iter().any(|&k| k % 2 == 0) {
                    return bad("mix_pix kernels must be odd".into());
                }
            }
        }
        Ok(())
    }
}

/// Output of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    /// Per-patch bona fide probability.
    pub map: Grid,
    pub binary: f64,
}

#[derive(Debug, Clone)]
enum Backbone {
    Dense(DensePix),
    Mix(MixPix),
}

enum Cache<T> {
    Dense(dense_pix::DenseCache<T>),
    Mix(mix_pix::MixCache<T>),
}

/// Everything a backward pass needs from the forward pass.
pub struct ForwardState<T> {
    cache: Cache<T>,
    /// Map probabilities, row-major.
    pub map: Vec<T>,
    pub binary: T,
}

#[derive(Debug, Clone)]
pub struct Model<T: Scalar> {
    config: ModelConfig,
    backbone: Backbone,
    pub params: ParamStore<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut params = ParamStore::default();
        let backbone = match config.variant {
            Variant::DensePix => Backbone::Dense(DensePix::build(&config, &mut params, &mut rng)),
            Variant::MixPix => Backbone::Mix(MixPix::build(&config, &mut params, &mut rng)),
        };
        Ok(Model { config, backbone, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Image in [0, 1] to the normalised network input.
    pub fn prepare(&self, image: &RgbImage) -> Result<Tensor<T>> {
        let s = self.config.input_size as u32;
        if image.dimensions() != (s, s) {
            return Err(Error::shape(format!("{s}x{s}x3"), format!("{}x{}x3", image.width(), image.height())));
        }
        let mut t = Tensor::from_image(image);
        let (half, two) = (T::of(0.5), T::of(2.0));
        t.data.iter_mut().for_each(|v| *v = (*v - half) * two);
        Ok(t)
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        let s = self.config.input_size;
        if (input.c, input.h, input.w) != (3, s, s) {
            return Err(Error::shape(format!("3x{s}x{s}"), format!("{}x{}x{}", input.c, input.h, input.w)));
        }
        Ok(())
    }

    pub fn forward_state(&self, input: Tensor<T>) -> Result<ForwardState<T>> {
        self.check_input(&input)?;
        let (logits, cache) = match &self.backbone {
            Backbone::Dense(net) => {
                let (l, c) = net.forward(&self.params, input);
                (l, Cache::Dense(c))
            }
            Backbone::Mix(net) => {
                let (l, c) = net.forward(&self.params, input);
                (l, Cache::Mix(c))
            }
        };
        let map: Vec<T> = logits.iter().map(|&z| T::of(sigmoid(z.f64()))).collect();
        let b_logit = match &self.backbone {
            Backbone::Dense(net) => net.binary_logit(&self.params, &map),
            Backbone::Mix(net) => net.binary_logit(&self.params, &map),
        };
        Ok(ForwardState { cache, map, binary: T::of(sigmoid(b_logit.f64())) })
    }

    pub fn forward_tensor(&self, input: Tensor<T>) -> Result<ModelOutput> {
        let st = self.forward_state(input)?;
        let m = self.config.map_size();
        let map = Grid::from_vec(m, m, st.map.iter().map(|v| v.f64()).collect())?;
        Ok(ModelOutput { map, binary: st.binary.f64() })
    }

    pub fn forward(&self, image: &RgbImage) -> Result<ModelOutput> {
        self.forward_tensor(self.prepare(image)?)
    }

    /// Back-propagate given the loss gradient with respect to the map
    /// probabilities and the binary probability.
    pub fn backward(&self, state: &ForwardState<T>, d_map: &[f64], d_binary: f64) -> Grads<T> {
        let mut grads = self.params.zero_grads();
        let b = state.binary.f64();
        let d_blogit = T::of(d_binary * b * (1.0 - b));
        let from_binary = match &self.backbone {
            Backbone::Dense(net) => net.binary_backward(&self.params, &state.map, d_blogit, &mut grads),
            Backbone::Mix(net) => net.binary_backward(&self.params, &state.map, d_blogit, &mut grads),
        };
        let d_logits: Vec<T> = state
            .map
            .iter()
            .zip(d_map)
            .zip(&from_binary)
            .map(|((&p, &dm), &db)| {
                let p = p.f64();
                T::of((dm + db.f64()) * p * (1.0 - p))
            })
            .collect();
        match (&self.backbone, &state.cache) {
            (Backbone::Dense(net), Cache::Dense(c)) => net.backward(&self.params, c, &d_logits, &mut grads),
            (Backbone::Mix(net), Cache::Mix(c)) => net.backward(&self.params, c, &d_logits, &mut grads),
            _ => unreachable!("cache built by the same backbone"),
        }
        grads
    }

    /// Loss of one sample and its parameter gradient.
    pub fn loss_and_grad(&self, input: Tensor<T>, label: &Grid, binary_label: f64, class_weight: f64) -> Result<(f64, Grads<T>)> {
        let st = self.forward_state(input)?;
        let m = self.config.map_size();
        if label.shape() != (m, m) {
            return Err(Error::shape(format!("{m}x{m} label"), format!("{}x{} label", label.rows(), label.cols())));
        }
        let map: Vec<f64> = st.map.iter().map(|v| v.f64()).collect();
        let terms = loss::loss_terms(&map, label.as_slice(), st.binary.f64(), binary_label, self.config.lambda, class_weight)?;
        let grads = self.backward(&st, &terms.d_map, terms.d_binary);
        Ok((terms.total, grads))
    }

    /// Receptive field of the dense pixel head as (size, jump, centre of
    /// cell 0) in input pixels; `None` for mix_pix, whose fully connected
    /// map layer sees the whole image.
    pub fn receptive_field(&self) -> Option<(f64, f64, f64)> {
        match &self.backbone {
            Backbone::Dense(net) => Some(net.receptive_field()),
            Backbone::Mix(_) => None,
        }
    }

    /// Same architecture and values in another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model { config: self.config.clone(), backbone: self.backbone.clone(), params: self.params.cast() }
    }
}
