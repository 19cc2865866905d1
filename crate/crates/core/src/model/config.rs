use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture description. Widths of the backbone branches are
/// `base_width * 2^r` for branch `r`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub base_width: usize,
    pub num_keypoints: usize,
    /// Multi-resolution modules per stage, starting at stage 2.
    pub stage_spec: Vec<usize>,
    /// Basic residual blocks per branch inside a multi-resolution module.
    pub units_per_branch: usize,
    pub num_deconv_modules: usize,
    pub deconv_residual_blocks: usize,
    pub concat_heatmaps_into_deconv: bool,
    pub input_size: usize,
    pub stem_width: usize,
    /// Bottleneck units in stage 1 and their inner width (output is 4x).
    pub stage1_units: usize,
    pub bottleneck_width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::w32()
    }
}

impl ModelConfig {
    /// Width-32 backbone with one deconvolution module at 512 px.
    pub fn w32() -> Self {
        Self {
            base_width: 32,
            num_keypoints: 17,
            stage_spec: vec![1, 4, 3],
            units_per_branch: 4,
            num_deconv_modules: 1,
            deconv_residual_blocks: 4,
            concat_heatmaps_into_deconv: true,
            input_size: 512,
            stem_width: 64,
            stage1_units: 4,
            bottleneck_width: 64,
        }
    }

    /// Width-48 backbone at 640 px.
    pub fn w48() -> Self {
        Self {
            base_width: 48,
            input_size: 640,
            ..Self::w32()
        }
    }

    /// Small configuration that trains in minutes on a CPU.
    pub fn toy() -> Self {
        Self {
            base_width: 8,
            num_keypoints: 5,
            stage_spec: vec![1, 1, 1],
            units_per_branch: 2,
            num_deconv_modules: 1,
            deconv_residual_blocks: 2,
            concat_heatmaps_into_deconv: true,
            input_size: 128,
            stem_width: 16,
            stage1_units: 1,
            bottleneck_width: 16,
        }
    }

    pub const BOTTLENECK_EXPANSION: usize = 4;

    /// Input extents must be multiples of this.
    pub fn size_divisor(&self) -> usize {
        4 << self.num_deconv_modules
    }

    pub fn num_branches(&self) -> usize {
        self.stage_spec.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("base_width", self.base_width),
            ("num_keypoints", self.num_keypoints),
            ("units_per_branch", self.units_per_branch),
            ("stem_width", self.stem_width),
            ("stage1_units", self.stage1_units),
            ("bottleneck_width", self.bottleneck_width),
            ("input_size", self.input_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.stage_spec.is_empty() || self.stage_spec.contains(&0) {
            return Err(Error::Config(format!(
                "stage_spec must list at least one stage with >= 1 module each, got {:?}",
                self.stage_spec
            )));
        }
        if !self.input_size.is_multiple_of(self.size_divisor()) {
            return Err(Error::Config(format!(
                "input_size {} is not a multiple of {}",
                self.input_size,
                self.size_divisor()
            )));
        }
        Ok(())
    }
}
