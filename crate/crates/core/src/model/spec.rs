use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Number of input image channels.
pub const INPUT_CHANNELS: usize = 3;
/// Residual blocks between the second and third downsampler.
pub const STAGE1_BLOCKS: usize = 5;
/// Dilated residual blocks after the third downsampler.
pub const STAGE2_BLOCKS: usize = 8;
/// Spatial reduction of the encoder; input sides must be multiples of this.
pub const OUTPUT_STRIDE: usize = 8;

/// Bottleneck-based factorized block: `c0 → c0/r → c0` with two 1×3/3×1 pairs,
/// the second pair dilated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BfbSpec {
    pub channels: usize,
    pub decrease_rate: usize,
    pub dilation: usize,
    pub batchnorm: bool,
}

impl BfbSpec {
    pub fn inner_channels(&self) -> usize {
        self.channels / self.decrease_rate
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.decrease_rate, 2 | 4) {
            return Err(Error::Config(format!(
                "decrease rate must be 2 or 4, got {}",
                self.decrease_rate
            )));
        }
        if self.channels == 0 || self.channels % self.decrease_rate != 0 {
            return Err(Error::Config(format!(
                "block width {} is not divisible by decrease rate {}",
                self.channels, self.decrease_rate
            )));
        }
        if self.dilation == 0 {
            return Err(Error::Config("dilation must be at least 1".into()));
        }
        Ok(())
    }
}

/// Downsampler block: stride-2 3×3 conv producing `out - in` channels, concatenated
/// with a 2×2 max-pool of the input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DsbSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub batchnorm: bool,
}

impl DsbSpec {
    pub fn conv_channels(&self) -> usize {
        self.out_channels - self.in_channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.out_channels <= self.in_channels {
            return Err(Error::Config(format!(
                "downsampler must widen the feature map ({} -> {})",
                self.in_channels, self.out_channels
            )));
        }
        Ok(())
    }
}

/// A plain convolution in the layer plan (the decoder).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: (usize, usize),
    pub dilation: usize,
    pub bias: bool,
}

/// One entry of the forward-ordered layer plan.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Dsb(DsbSpec),
    Bfb(BfbSpec),
    Conv(ConvSpec),
    Upsample { factor: usize },
}

/// Declarative description of the whole network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    /// Widths after the first, second and third downsampler.
    pub channels: [usize; 3],
    pub decrease_rate: usize,
    /// Dilation of the second factorized pair in each of the last eight blocks.
    pub dilations: Vec<usize>,
    pub num_classes: usize,
    pub batchnorm: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            channels: [16, 64, 128],
            decrease_rate: 2,
            dilations: vec![1, 2, 3, 4, 5, 9, 13, 17],
            num_classes: 2,
            batchnorm: true,
        }
    }
}

impl ModelSpec {
    pub fn with_decrease_rate(mut self, rate: usize) -> Self {
        self.decrease_rate = rate;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dilations.len() != STAGE2_BLOCKS {
            return Err(Error::Config(format!(
                "dilation schedule needs {STAGE2_BLOCKS} entries, got {}",
                self.dilations.len()
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        for (name, spec) in self.blocks() {
            match spec {
                LayerSpec::Dsb(d) => d.validate(),
                LayerSpec::Bfb(b) => b.validate(),
                _ => Ok(()),
            }
            .map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("{name}: {msg}")),
                other => other,
            })?;
        }
        Ok(())
    }

    /// Forward-ordered, named layer plan.
    pub fn blocks(&self) -> Vec<(String, LayerSpec)> {
        let [c1, c2, c3] = self.channels;
        let bn = self.batchnorm;
        let mut out = vec![
            (
                "dsb1".to_string(),
                LayerSpec::Dsb(DsbSpec { in_channels: INPUT_CHANNELS, out_channels: c1, batchnorm: bn }),
            ),
            (
                "dsb2".to_string(),
                LayerSpec::Dsb(DsbSpec { in_channels: c1, out_channels: c2, batchnorm: bn }),
            ),
        ];
        for i in 0..STAGE1_BLOCKS {
            out.push((
                format!("bfb1.{i}"),
                LayerSpec::Bfb(BfbSpec {
                    channels: c2,
                    decrease_rate: self.decrease_rate,
                    dilation: 1,
                    batchnorm: bn,
                }),
            ));
        }
        out.push((
            "dsb3".to_string(),
            LayerSpec::Dsb(DsbSpec { in_channels: c2, out_channels: c3, batchnorm: bn }),
        ));
        for (i, &d) in self.dilations.iter().enumerate() {
            out.push((
                format!("bfb2.{i}"),
                LayerSpec::Bfb(BfbSpec {
                    channels: c3,
                    decrease_rate: self.decrease_rate,
                    dilation: d,
                    batchnorm: bn,
                }),
            ));
        }
        out.push((
            "decoder".to_string(),
            LayerSpec::Conv(ConvSpec {
                in_channels: c3,
                out_channels: self.num_classes,
                kernel: (1, 1),
                stride: 1,
                padding: (0, 0),
                dilation: 1,
                bias: true,
            }),
        ));
        out.push(("upsample".to_string(), LayerSpec::Upsample { factor: OUTPUT_STRIDE }));
        out
    }

    /// Plain `key = value` text, the same syntax as run configuration files.
    pub fn to_text(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let _ = writeln!(s, "channels = {}", join(&self.channels));
        let _ = writeln!(s, "decrease_rate = {}", self.decrease_rate);
        let _ = writeln!(s, "dilations = {}", join(&self.dilations));
        let _ = writeln!(s, "num_classes = {}", self.num_classes);
        let _ = writeln!(s, "batchnorm = {}", self.batchnorm);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut spec = ModelSpec::default();
        for (key, value) in crate::config::parse_pairs(text)? {
            spec.set(&key, &value)?;
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Applies one `key = value` override. Returns an error for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let list = |v: &str| -> Result<Vec<usize>> {
            v.split(',')
                .map(|x| {
                    x.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::Config(format!("`{key}`: `{x}` is not an integer")))
                })
                .collect()
        };
        let int = |v: &str| -> Result<usize> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("`{key}`: `{v}` is not an integer")))
        };
        match key {
            "channels" => {
                let v = list(value)?;
                self.channels = v
                    .try_into()
                    .map_err(|_| Error::Config("`channels` needs exactly three widths".into()))?;
            }
            "decrease_rate" | "dr" => self.decrease_rate = int(value)?,
            "dilations" => self.dilations = list(value)?,
            "num_classes" => self.num_classes = int(value)?,
            "batchnorm" => {
                self.batchnorm = value
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("`batchnorm`: `{value}` is not a bool")))?
            }
            other => return Err(Error::Config(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }
}
