//! Coarse-to-fine denoising pass: bottom-to-top layers that gate the refiner
//! shortcut features under coarse-feature guidance, refine them with
//! residual convolutional units, and merge upward into the finer levels.

use super::{Conv2dLayer, GduMode, ModelConfig};
use crate::error::{Error, Result};
use crate::substrate::{Binding, Graph, Init, ParamStore, Scalar, VarId};

/// Sigmoid gate over the shortcut features.
///
/// The gate conv block is two 3x3 convs with a relu between; the last conv
/// is zero-initialized so the gate starts at 0.5 everywhere.
pub struct GuidedDenoisingUnit {
    cb1: Conv2dLayer,
    cb2: Conv2dLayer,
}

impl GuidedDenoisingUnit {
    pub fn build<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        guide_channels: usize,
        shortcut_channels: usize,
    ) -> Result<Self> {
        let cb1 = Conv2dLayer::new(
            store,
            &format!("{prefix}.cb1"),
            guide_channels + shortcut_channels,
            shortcut_channels,
            3,
            1,
            Init::KaimingFanIn,
        )?;
        let cb2 = Conv2dLayer::new(
            store,
            &format!("{prefix}.cb2"),
            shortcut_channels,
            shortcut_channels,
            3,
            1,
            Init::Zeros,
        )?;
        Ok(GuidedDenoisingUnit { cb1, cb2 })
    }

    /// Returns `(denoised, weight_map)`: the gate is strictly inside (0, 1),
    /// so `|denoised| <= |shortcut|` elementwise.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        bind: &Binding,
        guide: VarId,
        shortcut: VarId,
    ) -> Result<(VarId, VarId)> {
        let (_, _, gh, gw) = g.value(guide).dims4()?;
        let (_, _, sh, sw) = g.value(shortcut).dims4()?;
        if (gh, gw) != (sh, sw) {
            return Err(Error::shape(format!(
                "gate inputs disagree spatially: guide {gh}x{gw} vs shortcut {sh}x{sw}"
            )));
        }
        let cat = g.concat_channels(&[guide, shortcut])?;
        let h = self.cb1.forward(g, bind, cat)?;
        let h = g.relu(h);
        let raw = self.cb2.forward(g, bind, h)?;
        let weight = g.sigmoid(raw);
        let denoised = g.mul(weight, shortcut)?;
        Ok((denoised, weight))
    }
}

/// Identity-skip double conv, preactivation style.
pub struct ResidualConvUnit {
    c1: Conv2dLayer,
    c2: Conv2dLayer,
}

impl ResidualConvUnit {
    pub fn build<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        channels: usize,
    ) -> Result<Self> {
        let c1 = Conv2dLayer::new(store, &format!("{prefix}.conv1"), channels, channels, 3, 1, Init::KaimingFanIn)?;
        let c2 = Conv2dLayer::new(store, &format!("{prefix}.conv2"), channels, channels, 3, 1, Init::KaimingFanIn)?;
        Ok(ResidualConvUnit { c1, c2 })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, bind: &Binding, x: VarId) -> Result<VarId> {
        let a = g.relu(x);
        let a = self.c1.forward(g, bind, a)?;
        let a = g.relu(a);
        let a = self.c2.forward(g, bind, a)?;
        g.add(x, a)
    }
}

enum LayerGate {
    Full(GuidedDenoisingUnit),
    None,
    Fuse(Conv2dLayer),
}

struct C2fLayer {
    gate: LayerGate,
    rcu: ResidualConvUnit,
    /// 1x1 projection of the next-coarser merged feature, absent on the
    /// coarsest layer.
    merge_proj: Option<Conv2dLayer>,
}

/// The bottom-to-top stack. `c2f_layers` counts gated layers from the
/// coarsest level; finer levels (if any) merge upward without gating.
pub struct CoarseToFine {
    layers: Vec<C2fLayer>,
    levels: usize,
    gated_from: usize,
}

impl CoarseToFine {
    pub fn build<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        config: &ModelConfig,
    ) -> Result<Self> {
        let l = config.levels;
        let gated_from = l - config.c2f_layers;
        let mut layers = Vec::with_capacity(l);
        for i in 0..l {
            let ch = config.refiner_widths[i];
            let gate = if i < gated_from {
                LayerGate::None
            } else {
                match config.gdu_mode {
                    GduMode::Full => LayerGate::Full(GuidedDenoisingUnit::build(
                        store,
                        &format!("{prefix}.layer{i}.gdu"),
                        config.coarse_widths[i],
                        ch,
                    )?),
                    GduMode::None => LayerGate::None,
                    GduMode::F2cStyle => LayerGate::Fuse(Conv2dLayer::new(
                        store,
                        &format!("{prefix}.layer{i}.fuse"),
                        config.coarse_widths[i] + ch,
                        ch,
                        3,
                        1,
                        Init::KaimingFanIn,
                    )?),
                }
            };
            let rcu = ResidualConvUnit::build(store, &format!("{prefix}.layer{i}.rcu"), ch)?;
            let merge_proj = if i + 1 < l {
                Some(Conv2dLayer::new(
                    store,
                    &format!("{prefix}.layer{i}.proj"),
                    config.refiner_widths[i + 1],
                    ch,
                    1,
                    1,
                    Init::KaimingFanIn,
                )?)
            } else {
                None
            };
            layers.push(C2fLayer {
                gate,
                rcu,
                merge_proj,
            });
        }
        Ok(CoarseToFine {
            layers,
            levels: l,
            gated_from,
        })
    }

    /// Denoise the refiner pyramid under coarse guidance. Both pyramids are
    /// finest-first with matching per-level spatial sizes; the output keeps
    /// every level's shape.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        bind: &Binding,
        refiner: &[VarId],
        coarse_roi: &[VarId],
    ) -> Result<Vec<VarId>> {
        if refiner.len() != self.levels || coarse_roi.len() != self.levels {
            return Err(Error::shape(format!(
                "pyramid levels: refiner {} / coarse {} vs model {}",
                refiner.len(),
                coarse_roi.len(),
                self.levels
            )));
        }
        let mut out = vec![0usize; self.levels];
        for i in (0..self.levels).rev() {
            let layer = &self.layers[i];
            let gated = match &layer.gate {
                LayerGate::Full(gdu) => gdu.forward(g, bind, coarse_roi[i], refiner[i])?.0,
                LayerGate::None => refiner[i],
                LayerGate::Fuse(conv) => {
                    let cat = g.concat_channels(&[coarse_roi[i], refiner[i]])?;
                    let f = conv.forward(g, bind, cat)?;
                    g.relu(f)
                }
            };
            let merged = if i + 1 < self.levels {
                let (_, _, h, w) = g.value(refiner[i]).dims4()?;
                let up = g.resize_bilinear(out[i + 1], h, w)?;
                let up = layer.merge_proj.as_ref().unwrap().forward(g, bind, up)?;
                g.add(gated, up)?
            } else {
                gated
            };
            out[i] = layer.rcu.forward(g, bind, merged)?;
        }
        Ok(out)
    }

    pub fn gated_from(&self) -> usize {
        self.gated_from
    }
}
