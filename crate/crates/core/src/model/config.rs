use std::fmt;
use std::str::FromStr;

use crate::attention::{AttentionConfig, GateReduction};
use crate::error::{invalid, Error, Result};
use crate::nn::DEFAULT_LN_EPS;
use crate::scan::PolygonSpec;

/// Network hyper-parameters.
///
/// The scan polygon always sits at the centre of each feature map, so only
/// its side count, phase and shell step are configurable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub levels: usize,
    pub base_channels: usize,
    pub polygon: PolygonSpec,
    pub state_dim: usize,
    pub num_heads: usize,
    pub ln_epsilon: f64,
    pub gate_reduction: GateReduction,
    /// PS-VSS bottleneck block; a plain double conv when off.
    pub use_psvss: bool,
    /// SFCAM on every skip connection; identity skips when off.
    pub use_sfcam: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            base_channels: 8,
            polygon: PolygonSpec::regular(5),
            state_dim: 8,
            num_heads: 2,
            ln_epsilon: DEFAULT_LN_EPS,
            gate_reduction: GateReduction::Mean,
            use_psvss: true,
            use_sfcam: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// The smallest configuration that still has every block: one level,
    /// two base channels, a two-dimensional state.
    pub fn micro() -> Self {
        Self {
            levels: 1,
            base_channels: 2,
            state_dim: 2,
            num_heads: 1,
            ..Self::default()
        }
    }

    /// Config with the polygon-scan bottleneck and the skip attention disabled, i.e. a plain UNet.
    pub fn baseline(mut self) -> Self {
        self.use_psvss = false;
        self.use_sfcam = false;
        self
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Attention layout for the skip connection at `level`.
    pub fn attention(&self, level: usize) -> Result<AttentionConfig> {
        let mut a = AttentionConfig::for_channels(self.channels(level), self.num_heads)?;
        a.ln_epsilon = self.ln_epsilon;
        a.gate_reduction = self.gate_reduction;
        Ok(a)
    }

    /// Side length every input dimension must be a multiple of.
    pub fn stride(&self) -> usize {
        1 << self.levels
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.levels > 8 {
            return invalid(format!("levels must be in 1..=8, got {}", self.levels));
        }
        if self.base_channels == 0 {
            return invalid("base_channels must be at least 1");
        }
        if self.state_dim == 0 {
            return invalid("state_dim must be at least 1");
        }
        if self.num_heads == 0 || self.base_channels % self.num_heads != 0 {
            return invalid(format!(
                "base_channels {} must be a positive multiple of num_heads {}",
                self.base_channels, self.num_heads
            ));
        }
        if !(self.ln_epsilon > 0.0 && self.ln_epsilon.is_finite()) {
            return invalid(format!("ln_epsilon must be positive, got {}", self.ln_epsilon));
        }
        if self.polygon.center.is_some() {
            return invalid("model polygons are always centred on the feature map");
        }
        self.polygon.validate()
    }
}

/// One `key=value` line per field, in a fixed order. Floats use the
/// shortest text that parses back to the same bits.
impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "levels={}", self.levels)?;
        writeln!(f, "base_channels={}", self.base_channels)?;
        writeln!(f, "polygon.sides={}", self.polygon.n_sides)?;
        writeln!(f, "polygon.theta={:?}", self.polygon.theta)?;
        writeln!(f, "polygon.scale_step={:?}", self.polygon.scale_step)?;
        writeln!(f, "state_dim={}", self.state_dim)?;
        writeln!(f, "num_heads={}", self.num_heads)?;
        writeln!(f, "ln_epsilon={:?}", self.ln_epsilon)?;
        writeln!(f, "gate_reduction={}", self.gate_reduction.name())?;
        writeln!(f, "use_psvss={}", self.use_psvss)?;
        writeln!(f, "use_sfcam={}", self.use_sfcam)?;
        writeln!(f, "seed={}", self.seed)
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("bad value {value:?} for {key}")))
}

/// Accepts any subset of the keys written by `Display`; missing keys keep
/// their defaults. Blank lines and `#` comments are skipped. The polygon may
/// also be given by shape name (`polygon=hexagon`).
impl FromStr for ModelConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return invalid(format!("line {}: expected key=value, found {line:?}", lineno + 1));
            };
            let (key, value) = (key.trim(), value.trim());
            match key {
                "levels" => cfg.levels = parse(key, value)?,
                "base_channels" => cfg.base_channels = parse(key, value)?,
                "polygon" => {
                    let spec = PolygonSpec::from_shape_name(value)
                        .ok_or_else(|| Error::InvalidArgument(format!("unknown polygon {value:?}")))?;
                    cfg.polygon.n_sides = spec.n_sides;
                }
                "polygon.sides" => cfg.polygon.n_sides = parse(key, value)?,
                "polygon.theta" => cfg.polygon.theta = parse(key, value)?,
                "polygon.scale_step" => cfg.polygon.scale_step = parse(key, value)?,
                "state_dim" => cfg.state_dim = parse(key, value)?,
                "num_heads" => cfg.num_heads = parse(key, value)?,
                "ln_epsilon" => cfg.ln_epsilon = parse(key, value)?,
                "gate_reduction" => {
                    cfg.gate_reduction = match value {
                        "mean" => GateReduction::Mean,
                        "product" => GateReduction::Product,
                        _ => return invalid(format!("unknown gate_reduction {value:?}")),
                    }
                }
                "use_psvss" => cfg.use_psvss = parse(key, value)?,
                "use_sfcam" => cfg.use_sfcam = parse(key, value)?,
                "seed" => cfg.seed = parse(key, value)?,
                _ => return invalid(format!("line {}: unknown key {key:?}", lineno + 1)),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
