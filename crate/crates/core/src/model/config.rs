use crate::error::{Error, Result};
use crate::kvtext::{parse_list, KvText};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// EdgeCNN: plain 3x3 convolutions inside EdgeBlocks.
    Dense,
    /// EdgeCNN-G: learned group convolutions inside EdgeBlocks.
    Grouped,
}

impl Variant {
    pub fn arch_name(self) -> &'static str {
        match self {
            Variant::Dense => "edgecnn",
            Variant::Grouped => "edgecnn-g",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "edgecnn" | "dense" => Ok(Variant::Dense),
            "edgecnn-g" | "grouped" => Ok(Variant::Grouped),
            other => Err(Error::Config(format!("unknown architecture `{other}`"))),
        }
    }
}

/// Group count and condensation factor of one learned group convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LgcParams {
    pub groups: usize,
    pub condensation: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub growth_rate: usize,
    pub stem_channels: usize,
    pub block_lengths: Vec<usize>,
    pub num_classes: usize,
    pub variant: Variant,
    /// First EdgeBlock conv (`4 * growth` outputs).
    pub conv1_lgc: LgcParams,
    /// Second EdgeBlock conv (`growth` outputs).
    pub conv2_lgc: LgcParams,
    /// `(height, width, channels)`.
    pub input_size: (usize, usize, usize),
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            growth_rate: 8,
            stem_channels: 32,
            block_lengths: vec![4, 4, 7],
            num_classes: 7,
            variant: Variant::Dense,
            conv1_lgc: LgcParams {
                groups: 4,
                condensation: 4,
            },
            conv2_lgc: LgcParams {
                groups: 8,
                condensation: 8,
            },
            input_size: (44, 44, 3),
        }
    }
}

impl ModelConfig {
    pub fn edgecnn() -> Self {
        Self::default()
    }

    pub fn edgecnn_g() -> Self {
        ModelConfig {
            variant: Variant::Grouped,
            ..Self::default()
        }
    }

    pub fn for_variant(variant: Variant) -> Self {
        ModelConfig {
            variant,
            ..Self::default()
        }
    }

    pub fn bottleneck_width(&self) -> usize {
        4 * self.growth_rate
    }

    /// Channel count leaving each EdgeBlock.
    pub fn block_exit_channels(&self) -> Vec<usize> {
        let mut width = self.stem_channels;
        self.block_lengths
            .iter()
            .map(|&len| {
                width += len * self.growth_rate;
                width
            })
            .collect()
    }

    pub fn feature_width(&self) -> usize {
        *self.block_exit_channels().last().unwrap_or(&self.stem_channels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.growth_rate == 0 {
            return Err(Error::Config("growth_rate must be positive".into()));
        }
        if self.block_lengths.is_empty() || self.block_lengths.contains(&0) {
            return Err(Error::Config(format!(
                "block_lengths {:?} must be non-empty with every block at least 1",
                self.block_lengths
            )));
        }
        if self.stem_channels == 0 || self.num_classes == 0 {
            return Err(Error::Config("stem_channels and num_classes must be positive".into()));
        }
        let (h, w, c) = self.input_size;
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::Config("input size must be positive".into()));
        }
        if self.variant == Variant::Grouped {
            for (name, p, out) in [
                ("conv1", self.conv1_lgc, self.bottleneck_width()),
                ("conv2", self.conv2_lgc, self.growth_rate),
            ] {
                if p.groups == 0 || p.condensation == 0 || out % p.groups != 0 {
                    return Err(Error::Config(format!(
                        "{name}: G = {} must divide {out} output channels (C = {})",
                        p.groups, p.condensation
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvText {
        let mut kv = KvText::new();
        kv.set("arch", self.variant.arch_name());
        kv.set("growth_rate", self.growth_rate);
        kv.set("stem_channels", self.stem_channels);
        kv.set(
            "block_lengths",
            self.block_lengths
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        kv.set("num_classes", self.num_classes);
        kv.set("conv1_groups", self.conv1_lgc.groups);
        kv.set("conv1_condensation", self.conv1_lgc.condensation);
        kv.set("conv2_groups", self.conv2_lgc.groups);
        kv.set("conv2_condensation", self.conv2_lgc.condensation);
        let (h, w, c) = self.input_size;
        kv.set("input_size", format!("{h},{w},{c}"));
        kv
    }

    pub fn from_kv(kv: &KvText) -> Result<Self> {
        let dims: Vec<usize> = parse_list("input_size", &kv.require::<String>("input_size")?)?;
        let [h, w, c] = dims[..] else {
            return Err(Error::Config("input_size needs three values".into()));
        };
        let cfg = ModelConfig {
            growth_rate: kv.require("growth_rate")?,
            stem_channels: kv.require("stem_channels")?,
            block_lengths: parse_list("block_lengths", &kv.require::<String>("block_lengths")?)?,
            num_classes: kv.require("num_classes")?,
            variant: kv.require::<String>("arch")?.parse()?,
            conv1_lgc: LgcParams {
                groups: kv.require("conv1_groups")?,
                condensation: kv.require("conv1_condensation")?,
            },
            conv2_lgc: LgcParams {
                groups: kv.require("conv2_groups")?,
                condensation: kv.require("conv2_condensation")?,
            },
            input_size: (h, w, c),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
