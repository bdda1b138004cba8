//! The segmentation network: a UNet whose bottleneck is a PS-VSS block and
//! whose skip connections pass through SFCAM, plus its parameters, loss,
//! derivative-free training and checkpoint format.

mod checkpoint;
mod config;
mod spsa;

use rayon::prelude::*;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use config::ModelConfig;
pub use spsa::{spsa_minimize, spsa_train, SpsaConfig, SpsaTrace};

use crate::attention::{global_branch, sfcam, GlobalBranchWeights, SfcamWeights};
use crate::data_io::SamplePair;
use crate::error::{invalid, Result};
use crate::nn::{max_pool2, sigmoid, silu, upsample_nearest2, Conv2d, LayerNorm};
use crate::params::{self, Initializer, LayoutRecorder, ParamEntry, ParamSource, SliceSource};
use crate::tensor::Tensor;

/// Flat `f32` parameter vector with a name index. Single precision matches
/// the checkpoint payload, so saving and loading is lossless.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    values: Vec<f32>,
}

impl ParamStore {
    pub fn new(entries: Vec<ParamEntry>, values: Vec<f32>) -> Result<Self> {
        let mut offset = 0;
        for e in &entries {
            if e.offset != offset {
                return invalid(format!("parameter '{}' starts at {} instead of {offset}", e.name, e.offset));
            }
            offset += e.len();
        }
        if offset != values.len() {
            return invalid(format!("layout covers {offset} values, store has {}", values.len()));
        }
        Ok(Self { entries, values })
    }

    /// Rounds `values` to single precision.
    pub fn from_f64(entries: Vec<ParamEntry>, values: &[f64]) -> Result<Self> {
        Self::new(entries, values.iter().map(|&v| v as f32).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&[f32]> {
        let e = self.entry(name)?;
        Some(&self.values[e.offset..e.offset + e.len()])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut [f32]> {
        let e = self.entries.iter().find(|e| e.name == name)?;
        let range = e.offset..e.offset + e.len();
        Some(&mut self.values[range])
    }
}

/// `3×3 conv → LayerNorm → SiLU`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub conv: Conv2d,
    pub norm: LayerNorm,
}

impl ConvBlock {
    fn build(src: &mut impl ParamSource, name: &str, in_ch: usize, out_ch: usize, eps: f64) -> Result<Self> {
        Ok(Self {
            conv: params::conv(src, &format!("{name}.conv"), in_ch, out_ch, 3)?,
            norm: params::layer_norm(src, &format!("{name}.norm"), out_ch, eps)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.norm.forward(&self.conv.forward(x)?)?.map(silu))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoubleConv(pub ConvBlock, pub ConvBlock);

impl DoubleConv {
    fn build(src: &mut impl ParamSource, name: &str, in_ch: usize, out_ch: usize, eps: f64) -> Result<Self> {
        Ok(Self(
            ConvBlock::build(src, &format!("{name}.0"), in_ch, out_ch, eps)?,
            ConvBlock::build(src, &format!("{name}.1"), out_ch, out_ch, eps)?,
        ))
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.1.forward(&self.0.forward(x)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Bottleneck {
    /// Channel-expanding conv block followed by `x + global_branch(x)`.
    PsVss { entry: ConvBlock, block: GlobalBranchWeights },
    Plain(DoubleConv),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub cfg: ModelConfig,
    /// Shallowest level first.
    pub encoder: Vec<DoubleConv>,
    pub bottleneck: Bottleneck,
    /// One per level, shallowest first; `None` is an identity skip.
    pub skips: Vec<Option<SfcamWeights>>,
    pub decoder: Vec<DoubleConv>,
    pub head: Conv2d,
}

impl Network {
    /// Pulls every weight from `src` in a fixed order, which also fixes the
    /// flat parameter layout.
    pub fn build(cfg: &ModelConfig, src: &mut impl ParamSource) -> Result<Self> {
        cfg.validate()?;
        let eps = cfg.ln_epsilon;
        let mut encoder = Vec::with_capacity(cfg.levels);
        for l in 0..cfg.levels {
            let in_ch = if l == 0 { 1 } else { cfg.channels(l - 1) };
            encoder.push(DoubleConv::build(src, &format!("enc{l}"), in_ch, cfg.channels(l), eps)?);
        }
        let (deep_in, deep) = (cfg.channels(cfg.levels - 1), cfg.channels(cfg.levels));
        let bottleneck = if cfg.use_psvss {
            Bottleneck::PsVss {
                entry: ConvBlock::build(src, "mid.entry", deep_in, deep, eps)?,
                block: GlobalBranchWeights::build(src, "mid.psvss", deep, cfg.state_dim, eps)?,
            }
        } else {
            Bottleneck::Plain(DoubleConv::build(src, "mid", deep_in, deep, eps)?)
        };
        let mut skips = Vec::with_capacity(cfg.levels);
        let mut decoder = Vec::with_capacity(cfg.levels);
        for l in 0..cfg.levels {
            let c = cfg.channels(l);
            skips.push(if cfg.use_sfcam {
                Some(SfcamWeights::build(src, &format!("skip{l}"), c, cfg.state_dim, eps)?)
            } else {
                None
            });
            decoder.push(DoubleConv::build(src, &format!("dec{l}"), c + cfg.channels(l + 1), c, eps)?);
        }
        let head = params::conv(src, "head", cfg.base_channels, 1, 1)?;
        Ok(Self {
            cfg: *cfg,
            encoder,
            bottleneck,
            skips,
            decoder,
            head,
        })
    }

    pub fn from_store(cfg: &ModelConfig, store: &ParamStore) -> Result<Self> {
        Self::from_values(cfg, &store.to_f64())
    }

    pub fn from_values(cfg: &ModelConfig, values: &[f64]) -> Result<Self> {
        let mut src = SliceSource::new(values);
        let net = Self::build(cfg, &mut src)?;
        if src.remaining() != 0 {
            return invalid(format!("{} parameters left over after building the network", src.remaining()));
        }
        Ok(net)
    }

    /// Pre-sigmoid scores, `1 × H × W`.
    pub fn logits(&self, image: &Tensor) -> Result<Tensor> {
        let (c, h, w) = image.dims3()?;
        if c != 1 {
            return invalid(format!("network input needs 1 channel, got {c}"));
        }
        let s = self.cfg.stride();
        if h % s != 0 || w % s != 0 {
            return invalid(format!("{h}×{w} input is not divisible by {s}; pad it first"));
        }
        let mut skips = Vec::with_capacity(self.cfg.levels);
        let mut x = image.clone();
        for enc in &self.encoder {
            let f = enc.forward(&x)?;
            x = max_pool2(&f)?;
            skips.push(f);
        }
        x = match &self.bottleneck {
            Bottleneck::PsVss { entry, block } => {
                let e = entry.forward(&x)?;
                e.add(&global_branch(&e, block, &self.cfg.polygon)?)?
            }
            Bottleneck::Plain(dc) => dc.forward(&x)?,
        };
        for l in (0..self.cfg.levels).rev() {
            let skip = match &self.skips[l] {
                Some(w) => sfcam(&skips[l], w, &self.cfg.polygon, &self.cfg.attention(l)?)?,
                None => skips[l].clone(),
            };
            let up = upsample_nearest2(&x)?;
            x = self.decoder[l].forward(&Tensor::concat_channels(&[&skip, &up])?)?;
        }
        self.head.forward(&x)
    }

    /// Vessel probabilities in `(0, 1)`, `1 × H × W`.
    pub fn forward(&self, image: &Tensor) -> Result<Tensor> {
        Ok(self.logits(image)?.map(sigmoid))
    }

    /// Mean per-image loss over `data`. Images are evaluated in parallel and
    /// summed in order.
    pub fn dataset_loss(&self, data: &[SamplePair]) -> Result<f64> {
        if data.is_empty() {
            return invalid("empty dataset");
        }
        let losses = data
            .par_iter()
            .map(|p| bce_loss(&self.forward(&p.image)?, &p.mask))
            .collect::<Result<Vec<f64>>>()?;
        Ok(losses.iter().sum::<f64>() / data.len() as f64)
    }
}

pub fn param_layout(cfg: &ModelConfig) -> Result<Vec<ParamEntry>> {
    let mut rec = LayoutRecorder::default();
    Network::build(cfg, &mut rec)?;
    Ok(rec.entries)
}

pub fn param_count(cfg: &ModelConfig) -> Result<usize> {
    Ok(param_layout(cfg)?.iter().map(ParamEntry::len).sum())
}

/// Seeded initialisation of every learnable parameter.
pub fn init_params(cfg: &ModelConfig) -> Result<ParamStore> {
    let mut init = Initializer::new(cfg.seed);
    Network::build(cfg, &mut init)?;
    let (entries, values) = init.finish();
    ParamStore::from_f64(entries, &values)
}

pub const BCE_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy with predictions clamped to
/// `[1e-7, 1 - 1e-7]`.
pub fn bce_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    pred.check_same_shape(target)?;
    if pred.is_empty() {
        return invalid("empty prediction");
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(sum / pred.len() as f64)
}
