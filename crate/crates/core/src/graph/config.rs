//! Detector configuration and its key=value file format.

use super::GraphError;
use crate::anchors::{reference_centers, AnchorSet};
use serde::{Deserialize, Serialize};

/// Rational channel-width scaling; desk-scale test builds use 1/8.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WidthMult {
    pub num: u32,
    pub den: u32,
}

impl WidthMult {
    pub const ONE: WidthMult = WidthMult { num: 1, den: 1 };

    pub fn new(num: u32, den: u32) -> Result<Self, GraphError> {
        if num == 0 || den == 0 {
            return Err(GraphError::Config(
                "width multiplier must be a positive rational".into(),
            ));
        }
        Ok(Self { num, den })
    }

    /// Parses "1", "2", or "n/d".
    pub fn parse(text: &str) -> Result<Self, GraphError> {
        let text = text.trim();
        let bad = |_| GraphError::Config(format!("bad width multiplier {text:?}"));
        match text.split_once('/') {
            Some((n, d)) => Self::new(
                n.trim().parse().map_err(bad)?,
                d.trim().parse().map_err(bad)?,
            ),
            None => Self::new(text.parse().map_err(bad)?, 1),
        }
    }

    /// Scales a channel count, flooring but never below one.
    pub fn scale(&self, channels: usize) -> usize {
        (channels * self.num as usize / self.den as usize).max(1)
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl std::fmt::Display for WidthMult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

/// Full structural description of one detector build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Square input resolution; must be divisible by 32.
    pub input_size: usize,
    pub num_classes: usize,
    pub width: WidthMult,
    /// Insert a coordinate attention block after each stage downsample.
    pub ca_enabled: bool,
    pub ca_reduction: usize,
    /// Convs on each side of the pyramid-pooling layer: 3 or 5.
    pub spp_conv_count: usize,
    /// Convs on each backbone tap before fusion: 1 or 3.
    pub lateral_conv_count: usize,
    pub anchors: AnchorSet,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self::improved()
    }
}

impl NetConfig {
    /// The improved layout: attention blocks, 5+5 pyramid convs,
    /// 3-conv laterals.
    pub fn improved() -> Self {
        Self {
            input_size: 416,
            num_classes: 3,
            width: WidthMult::ONE,
            ca_enabled: true,
            ca_reduction: 16,
            spp_conv_count: 5,
            lateral_conv_count: 3,
            anchors: AnchorSet::from_boxes(reference_centers()).expect("9 reference anchors"),
        }
    }

    /// The original layout: no attention, 3+3 pyramid convs, single-conv
    /// laterals.
    pub fn baseline() -> Self {
        Self {
            ca_enabled: false,
            spp_conv_count: 3,
            lateral_conv_count: 1,
            ..Self::improved()
        }
    }

    /// Channels every head emits: 3 anchors x (5 + classes).
    pub fn head_channels(&self) -> usize {
        3 * (5 + self.num_classes)
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        if self.input_size == 0 || self.input_size % 32 != 0 {
            return Err(GraphError::Config(format!(
                "input size {} must be a positive multiple of 32",
                self.input_size
            )));
        }
        if self.num_classes == 0 {
            return Err(GraphError::Config("need at least one class".into()));
        }
        if self.ca_reduction == 0 {
            return Err(GraphError::Config("ca_reduction must be positive".into()));
        }
        if !matches!(self.spp_conv_count, 3 | 5) {
            return Err(GraphError::Config(format!(
                "spp_conv_count must be 3 or 5, got {}",
                self.spp_conv_count
            )));
        }
        if !matches!(self.lateral_conv_count, 1 | 3) {
            return Err(GraphError::Config(format!(
                "lateral_conv_count must be 1 or 3, got {}",
                self.lateral_conv_count
            )));
        }
        Ok(())
    }

    /// Parses the key=value config format (a TOML subset).
    ///
    /// `mode = "baseline" | "improved"` selects a template; explicit keys
    /// override it. `width_multiplier` accepts an integer or "n/d" string;
    /// `anchors` takes the darknet-style single line.
    pub fn parse_toml(text: &str) -> Result<Self, GraphError> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            mode: Option<String>,
            input_size: Option<usize>,
            num_classes: Option<usize>,
            width_multiplier: Option<toml::Value>,
            ca_enabled: Option<bool>,
            ca_reduction: Option<usize>,
            spp_conv_count: Option<usize>,
            lateral_conv_count: Option<usize>,
            anchors: Option<String>,
        }
        let raw: Raw = toml::from_str(text).map_err(|e| GraphError::Config(e.to_string()))?;
        let mut cfg = match raw.mode.as_deref() {
            None | Some("improved") => Self::improved(),
            Some("baseline") => Self::baseline(),
            Some(other) => {
                return Err(GraphError::Config(format!(
                    "mode must be \"baseline\" or \"improved\", got {other:?}"
                )))
            }
        };
        if let Some(v) = raw.input_size {
            cfg.input_size = v;
        }
        if let Some(v) = raw.num_classes {
            cfg.num_classes = v;
        }
        if let Some(v) = raw.width_multiplier {
            cfg.width = match v {
                toml::Value::Integer(i) if i > 0 => WidthMult::new(i as u32, 1)?,
                toml::Value::String(s) => WidthMult::parse(&s)?,
                other => {
                    return Err(GraphError::Config(format!(
                        "width_multiplier must be an integer or \"n/d\" string, got {other}"
                    )))
                }
            };
        }
        if let Some(v) = raw.ca_enabled {
            cfg.ca_enabled = v;
        }
        if let Some(v) = raw.ca_reduction {
            cfg.ca_reduction = v;
        }
        if let Some(v) = raw.spp_conv_count {
            cfg.spp_conv_count = v;
        }
        if let Some(v) = raw.lateral_conv_count {
            cfg.lateral_conv_count = v;
        }
        if let Some(v) = raw.anchors {
            cfg.anchors = AnchorSet::parse_line(&v)
                .map_err(|e| GraphError::Config(format!("anchors: {e}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
