use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture and crop geometry of the RGB-D tracker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Side of the square template crop, pixels.
    pub template_size: usize,
    /// Side of the square search crop, pixels.
    pub search_size: usize,
    /// Total backbone downsampling; a power of two.
    pub stride: usize,
    /// Backbone output channels.
    pub channels: usize,
    pub model_dim: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub search_area_factor: f64,
    pub positional_embedding: bool,
    pub init_seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            template_size: 32,
            search_size: 64,
            stride: 8,
            channels: 64,
            model_dim: 128,
            encoder_blocks: 6,
            decoder_blocks: 6,
            heads: 4,
            ffn_dim: 256,
            search_area_factor: 4.0,
            positional_embedding: true,
            init_seed: 7,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.stride < 2 || !self.stride.is_power_of_two() {
            return bad(format!("stride {} must be a power of two >= 2", self.stride));
        }
        if self.template_size % self.stride != 0 || self.search_size % self.stride != 0 {
            return bad(format!(
                "template {} and search {} must be multiples of stride {}",
                self.template_size, self.search_size, self.stride
            ));
        }
        if self.template_size == 0 || self.search_size == 0 {
            return bad("crop sizes must be positive".into());
        }
        let layers = self.backbone_layers();
        if self.channels >> (layers - 1) == 0 || self.channels % (1 << (layers - 1)) != 0 {
            return bad(format!(
                "{} channels cannot be halved across {layers} backbone layers",
                self.channels
            ));
        }
        if self.heads == 0 || self.model_dim % self.heads != 0 || self.model_dim % 4 != 0 {
            return bad(format!(
                "model_dim {} must be divisible by 4 and by {} heads",
                self.model_dim, self.heads
            ));
        }
        if self.encoder_blocks == 0 || self.decoder_blocks == 0 || self.ffn_dim == 0 {
            return bad("transformer needs at least one encoder and decoder block".into());
        }
        if !(self.search_area_factor > 0.0) {
            return bad("search_area_factor must be positive".into());
        }
        Ok(())
    }

    /// Number of stride-2 convolutions in the backbone.
    pub fn backbone_layers(&self) -> usize {
        self.stride.trailing_zeros() as usize
    }

    /// Output channels of each backbone layer; the last equals `channels`.
    pub fn backbone_widths(&self) -> Vec<usize> {
        let n = self.backbone_layers();
        (0..n).map(|i| self.channels >> (n - 1 - i)).collect()
    }

    pub fn template_grid(&self) -> usize {
        self.template_size / self.stride
    }

    pub fn search_grid(&self) -> usize {
        self.search_size / self.stride
    }

    /// Length of the token sequence fed to the encoder.
    pub fn token_count(&self) -> usize {
        self.search_grid() * self.search_grid() + self.template_grid() * self.template_grid()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = TrackerConfig::default();
        c.validate().unwrap();
        assert_eq!(c.encoder_blocks, 6);
        assert_eq!(c.decoder_blocks, 6);
        assert_eq!(c.backbone_widths(), vec![16, 32, 64]);
        assert_eq!(c.token_count(), 80);
    }

    #[test]
    fn rejects_indivisible_sizes() {
        let c = TrackerConfig {
            template_size: 30,
            ..TrackerConfig::default()
        };
        assert!(c.validate().is_err());
        let c = TrackerConfig {
            stride: 6,
            ..TrackerConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn equal_crops_give_thirty_two_tokens() {
        let c = TrackerConfig {
            search_size: 32,
            ..TrackerConfig::default()
        };
        assert_eq!(c.token_count(), 32);
    }
}
