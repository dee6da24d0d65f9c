//! The two-branch architecture: coarse encoder-decoder, lightweight refiner
//! encoder, the coarse-to-fine denoising pass with gated shortcut units, and
//! the fine-to-coarse residual decoder.
//!
//! Model structs hold parameter handles only; forward passes are built on a
//! [`Graph`] against a [`Binding`], so the same code serves training
//! (trainable leaves) and inference (frozen leaves).

mod c2f;
mod coarse;
mod f2c;
mod full;
mod refiner;

pub use c2f::{CoarseToFine, GuidedDenoisingUnit, ResidualConvUnit};
pub use coarse::CoarseNet;
pub use f2c::FineToCoarse;
pub use full::{InferenceStats, TileRefiner};
pub use refiner::RefinerEncoder;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::substrate::{Binding, Graph, Init, ParamId, ParamStore, Scalar, VarId};

/// Gating mode of the coarse-to-fine layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GduMode {
    /// Sigmoid gate from concatenated coarse+shortcut features.
    Full,
    /// No gating: plain bottom-up aggregation.
    None,
    /// Concat + conv fusion in place of the gate (the decoder-style fusion).
    F2cStyle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Channels per refiner pyramid level, finest first.
    pub refiner_widths: Vec<usize>,
    /// Channels per coarse pyramid level, finest first.
    pub coarse_widths: Vec<usize>,
    /// Pyramid depth L; level l lives at 1/2^(l+1) of the input.
    pub levels: usize,
    /// Number of gated denoising layers, counted from the coarsest level.
    pub c2f_layers: usize,
    pub gdu_mode: GduMode,
    pub use_c2f: bool,
    pub depth_min: f32,
    pub depth_max: f32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            refiner_widths: vec![16, 32, 64, 128],
            coarse_widths: vec![16, 32, 64, 128],
            levels: 4,
            c2f_layers: 4,
            gdu_mode: GduMode::Full,
            use_c2f: true,
            depth_min: 1.0,
            depth_max: 20.0,
        }
    }
}

impl ModelConfig {
    /// Encoder capacity presets; multipliers 1/2/4 over the small preset.
    pub fn preset_widths(name: &str) -> Option<Vec<usize>> {
        match name {
            "s" => Some(vec![8, 16, 32, 64]),
            "m" => Some(vec![16, 32, 64, 128]),
            "l" => Some(vec![32, 64, 128, 256]),
            _ => None,
        }
    }

    pub fn with_preset(mut self, name: &str) -> Result<Self> {
        let widths = Self::preset_widths(name)
            .ok_or_else(|| Error::config(format!("unknown encoder preset {name:?}")))?;
        self.refiner_widths = widths[..self.levels.min(4)].to_vec();
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::config("levels must be >= 1"));
        }
        if self.refiner_widths.len() != self.levels || self.coarse_widths.len() != self.levels {
            return Err(Error::config(format!(
                "widths must list one channel count per level: {} refiner / {} coarse for L={}",
                self.refiner_widths.len(),
                self.coarse_widths.len(),
                self.levels
            )));
        }
        if self.c2f_layers == 0 || self.c2f_layers > self.levels {
            return Err(Error::config(format!(
                "c2f_layers {} must be in [1, levels={}]",
                self.c2f_layers, self.levels
            )));
        }
        if !(self.depth_min > 0.0 && self.depth_max > self.depth_min) {
            return Err(Error::config("depth range must be positive and ordered"));
        }
        Ok(())
    }

    /// Post-composition clamp keeping depths (and their logs) finite.
    pub fn depth_floor(&self) -> f32 {
        self.depth_min / 100.0
    }

    /// Spatial size of pyramid level `l` for a given input size.
    pub fn level_size(&self, l: usize, h: usize, w: usize) -> (usize, usize) {
        (h >> (l + 1), w >> (l + 1))
    }

    /// Smallest input the pyramid supports without collapsing a level.
    pub fn min_input_side(&self) -> usize {
        1 << (self.levels + 1)
    }
}

/// A conv2d with bias, registered under `<prefix>.weight` / `<prefix>.bias`.
#[derive(Debug, Clone)]
pub(crate) struct Conv2dLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dLayer {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        init: Init,
    ) -> Result<Self> {
        let w = store.add(&format!("{prefix}.weight"), vec![cout, cin, kernel, kernel], init)?;
        let b = store.add(&format!("{prefix}.bias"), vec![cout], Init::Zeros)?;
        Ok(Conv2dLayer {
            w,
            b,
            stride,
            pad: kernel / 2,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        bind: &Binding,
        x: VarId,
    ) -> Result<VarId> {
        g.conv2d(x, bind.var(self.w), bind.var(self.b), self.stride, self.pad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_have_capacity_ordering() {
        let s = ModelConfig::preset_widths("s").unwrap();
        let m = ModelConfig::preset_widths("m").unwrap();
        let l = ModelConfig::preset_widths("l").unwrap();
        for i in 0..4 {
            assert_eq!(m[i], 2 * s[i]);
            assert_eq!(l[i], 4 * s[i]);
        }
        assert!(ModelConfig::preset_widths("xl").is_none());
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let bad = ModelConfig {
            refiner_widths: vec![8, 16],
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            c2f_layers: 9,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn level_geometry() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.level_size(0, 64, 128), (32, 64));
        assert_eq!(cfg.level_size(3, 64, 128), (4, 8));
        assert_eq!(cfg.min_input_side(), 32);
    }
}
