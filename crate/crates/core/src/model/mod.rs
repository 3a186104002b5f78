//! The three sequential segmentation networks and their parameter handling.
//!
//! Every variant shares a UNet encoder/decoder: each frame of the input
//! sequence passes through the encoder, the per-frame bottlenecks are fused
//! over time, and the decoder upsamples the fused map back to image size with
//! skip connections taken from the last frame.
//!
//! | variant | per-frame extra | temporal fusion |
//! |---|---|---|
//! | [`Variant::UnetConvLstm`] | none | ConvLSTM |
//! | [`Variant::ScnnUnetConvLstm`] | SCNN message passing | ConvLSTM |
//! | [`Variant::ScnnUnetAttention`] | SCNN message passing | temporal attention |

mod checkpoint;
mod forward;
mod layers;
mod params;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::TensorError;

pub use checkpoint::{transfer_weights, Checkpoint, Phase, HEAD_PARAMS};
pub use forward::{
    attention_fuse, attention_weights, convlstm_forward, decoder_forward, encoder_forward, model_forward,
    scnn_message_pass, Direction, EncoderOutput,
};
pub use layers::{layer_table, LayerInfo};
pub use params::{Bound, ParamStore};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("input does not match spec: {0}")]
    InputMismatch(String),
    #[error("variant mismatch: checkpoint is {found}, target is {expected}")]
    VariantMismatch { expected: Variant, found: Variant },
    #[error("phase mismatch: expected {expected:?}, found {found:?}")]
    PhaseMismatch { expected: Phase, found: Phase },
    #[error("parameter {name}: expected shape {expected:?}, found {found:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "UNet_ConvLSTM")]
    UnetConvLstm,
    #[serde(rename = "SCNN_UNet_ConvLSTM")]
    ScnnUnetConvLstm,
    #[serde(rename = "SCNN_UNet_Attention")]
    ScnnUnetAttention,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::UnetConvLstm, Variant::ScnnUnetConvLstm, Variant::ScnnUnetAttention];

    pub fn name(self) -> &'static str {
        match self {
            Variant::UnetConvLstm => "UNet_ConvLSTM",
            Variant::ScnnUnetConvLstm => "SCNN_UNet_ConvLSTM",
            Variant::ScnnUnetAttention => "SCNN_UNet_Attention",
        }
    }

    pub fn has_scnn(self) -> bool {
        !matches!(self, Variant::UnetConvLstm)
    }

    pub fn uses_attention(self) -> bool {
        matches!(self, Variant::ScnnUnetAttention)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown variant {s:?} (expected UNet_ConvLSTM, SCNN_UNet_ConvLSTM or SCNN_UNet_Attention)"))
    }
}

/// Where the SCNN message passing runs inside each frame's encoder pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScnnPlacement {
    /// On the bottleneck, after the last downsampling block.
    Bottleneck,
    /// On the output of the first (full-resolution) block.
    FirstBlock,
}

/// Channel mixing of the SCNN slice kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScnnMixing {
    /// One 1-D kernel per channel (`C×k` weights per direction).
    Depthwise,
    /// Full `C×C×k` slice convolution.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub input_height: usize,
    pub input_width: usize,
    pub sequence_length: usize,
    pub base_channels: usize,
    pub head_channels: usize,
    pub scnn_kernel_len: usize,
    pub scnn_placement: ScnnPlacement,
    pub scnn_mixing: ScnnMixing,
    pub convlstm_layers: usize,
    pub convlstm_hidden: usize,
}

/// Largest odd length that fits `extent`, capped at 9.
fn fitting_kernel_len(extent: usize) -> usize {
    let k = extent.min(9);
    if k % 2 == 0 {
        k - 1
    } else {
        k
    }
}

impl ModelSpec {
    /// 128×256 input, base 64, 512×8×16 bottleneck, two 512-channel ConvLSTM layers.
    pub fn full(variant: Variant, head_channels: usize) -> Self {
        Self::scaled(variant, 128, 256, 64, head_channels)
    }

    /// 64×128 input, base 8.
    pub fn desk(variant: Variant, head_channels: usize) -> Self {
        Self::scaled(variant, 64, 128, 8, head_channels)
    }

    pub fn scaled(variant: Variant, height: usize, width: usize, base: usize, head_channels: usize) -> Self {
        let (bh, bw) = (height / 16, width / 16);
        Self {
            variant,
            input_height: height,
            input_width: width,
            sequence_length: 5,
            base_channels: base,
            head_channels,
            scnn_kernel_len: fitting_kernel_len(bh.min(bw).max(1)),
            scnn_placement: ScnnPlacement::Bottleneck,
            scnn_mixing: ScnnMixing::Depthwise,
            convlstm_layers: 2,
            convlstm_hidden: 8 * base,
        }
    }

    /// Bottleneck channel count `C_b = 8·base`.
    pub fn bottleneck_channels(&self) -> usize {
        8 * self.base_channels
    }

    pub fn bottleneck_size(&self) -> (usize, usize) {
        (self.input_height / 16, self.input_width / 16)
    }

    /// Channels and spatial size of the map SCNN operates on.
    pub fn scnn_site(&self) -> (usize, usize, usize) {
        match self.scnn_placement {
            ScnnPlacement::Bottleneck => {
                let (h, w) = self.bottleneck_size();
                (self.bottleneck_channels(), h, w)
            }
            ScnnPlacement::FirstBlock => (self.base_channels, self.input_height, self.input_width),
        }
    }

    pub fn with_phase_head(&self, head_channels: usize) -> Self {
        Self { head_channels, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::InvalidSpec(m));
        let (h, w) = (self.input_height, self.input_width);
        if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
            return bad(format!("input {h}×{w} must be a positive multiple of 16 in both extents"));
        }
        if !(2..=3).contains(&self.head_channels) {
            return bad(format!("head_channels must be 2 or 3, got {}", self.head_channels));
        }
        if self.sequence_length == 0 {
            return bad("sequence_length must be at least 1".into());
        }
        if self.base_channels == 0 {
            return bad("base_channels must be positive".into());
        }
        if self.convlstm_layers == 0 {
            return bad("convlstm_layers must be at least 1".into());
        }
        if self.convlstm_hidden != self.bottleneck_channels() {
            return bad(format!(
                "convlstm_hidden {} must equal the bottleneck channels {}",
                self.convlstm_hidden,
                self.bottleneck_channels()
            ));
        }
        if self.variant.has_scnn() {
            let k = self.scnn_kernel_len;
            let (_, sh, sw) = self.scnn_site();
            if k == 0 || k % 2 == 0 {
                return bad(format!("scnn_kernel_len must be odd, got {k}"));
            }
            if k > sh.min(sw) {
                return bad(format!("slice kernel of length {k} is longer than the slice extent of a {sh}×{sw} map"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for v in Variant::ALL {
            for head in [2, 3] {
                ModelSpec::full(v, head).validate().unwrap();
                ModelSpec::desk(v, head).validate().unwrap();
            }
        }
        assert_eq!(ModelSpec::full(Variant::ScnnUnetConvLstm, 2).scnn_kernel_len, 7);
        assert_eq!(ModelSpec::desk(Variant::ScnnUnetConvLstm, 2).scnn_kernel_len, 3);
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = ModelSpec::full(Variant::UnetConvLstm, 3);
        s.input_height = 130;
        assert!(s.validate().is_err());
        let mut s = ModelSpec::full(Variant::ScnnUnetConvLstm, 3);
        s.scnn_kernel_len = 9;
        assert!(s.validate().is_err());
        s.scnn_placement = ScnnPlacement::FirstBlock;
        assert!(s.validate().is_ok());
        let s = ModelSpec::desk(Variant::UnetConvLstm, 4);
        assert!(s.validate().is_err());
    }

    #[test]
    fn variant_names_roundtrip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("SegNet".parse::<Variant>().is_err());
    }
}
