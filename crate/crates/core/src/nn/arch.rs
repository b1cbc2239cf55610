use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchKind {
    /// Dense → ReLU per stage.
    Mlp,
    /// conv → ReLU → conv → ReLU → 2×2 max-pool per stage.
    Conv,
    /// Like `Conv`, with a shortcut added before the second ReLU.
    ConvResidual,
}

/// Architecture description. Stage widths are channel counts for the
/// convolutional kinds and hidden units for `Mlp`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub kind: ArchKind,
    /// `[d]` for `Mlp`, `[channels, height, width]` otherwise.
    pub input_shape: Vec<usize>,
    pub widths: Vec<usize>,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    #[serde(default = "default_multiplier")]
    pub width_multiplier: f64,
}

fn default_kernel() -> usize {
    3
}

fn default_multiplier() -> f64 {
    1.0
}

impl ArchSpec {
    pub fn mlp(input_dim: usize, widths: &[usize]) -> Self {
        Self {
            kind: ArchKind::Mlp,
            input_shape: vec![input_dim],
            widths: widths.to_vec(),
            kernel: 3,
            width_multiplier: 1.0,
        }
    }

    pub fn conv(input_shape: [usize; 3], channels: &[usize]) -> Self {
        Self {
            kind: ArchKind::Conv,
            input_shape: input_shape.to_vec(),
            widths: channels.to_vec(),
            kernel: 3,
            width_multiplier: 1.0,
        }
    }

    /// Five-stage VGG body (16, 32, 64, 128, 128 channels) on 3×32×32 inputs.
    pub fn vgg() -> Self {
        Self::conv([3, 32, 32], &[16, 32, 64, 128, 128])
    }

    pub fn with_multiplier(mut self, m: f64) -> Self {
        self.width_multiplier = m;
        self
    }

    pub fn stage_count(&self) -> usize {
        self.widths.len()
    }

    /// Widths after applying the multiplier.
    pub fn effective_widths(&self) -> Vec<usize> {
        self.widths
            .iter()
            .map(|&w| ((w as f64 * self.width_multiplier).round() as usize).max(1))
            .collect()
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::config("arch.widths", "at least two stages are required"));
        }
        if self.widths.contains(&0) {
            return Err(Error::config("arch.widths", "widths must be positive"));
        }
        if !(self.width_multiplier > 0.0 && self.width_multiplier.is_finite()) {
            return Err(Error::config("arch.width_multiplier", "must be a positive finite number"));
        }
        match self.kind {
            ArchKind::Mlp => {
                if self.input_shape.len() != 1 || self.input_shape[0] == 0 {
                    return Err(Error::config("arch.input_shape", "mlp expects [d] with d > 0"));
                }
            }
            ArchKind::Conv | ArchKind::ConvResidual => {
                if self.input_shape.len() != 3 || self.input_shape.contains(&0) {
                    return Err(Error::config("arch.input_shape", "conv expects [channels, height, width]"));
                }
                if self.kernel % 2 == 0 {
                    return Err(Error::config("arch.kernel", "kernel size must be odd"));
                }
                let div = 1usize << self.widths.len();
                if self.input_shape[1] % div != 0 || self.input_shape[2] % div != 0 {
                    return Err(Error::config(
                        "arch.input_shape",
                        format!("spatial size must be divisible by 2^stages = {div}"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Feature count `n_f` presented to each head.
    pub fn feature_count(&self) -> usize {
        let widths = self.effective_widths();
        let last = *widths.last().unwrap_or(&0);
        match self.kind {
            ArchKind::Mlp => last,
            ArchKind::Conv | ArchKind::ConvResidual => {
                let div = 1usize << widths.len();
                last * (self.input_shape[1] / div) * (self.input_shape[2] / div)
            }
        }
    }
}
