//! Lightweight per-patch encoder for the refiner branch.

use super::{Conv2dLayer, ModelConfig};
use crate::error::{Error, Result};
use crate::substrate::{Binding, Graph, Init, ParamStore, Scalar, VarId};

pub struct RefinerEncoder {
    stem: Conv2dLayer,
    down: Vec<Conv2dLayer>,
    conv: Vec<Conv2dLayer>,
    levels: usize,
}

impl RefinerEncoder {
    pub fn build<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        config: &ModelConfig,
    ) -> Result<Self> {
        let ws = &config.refiner_widths;
        let l = config.levels;
        let stem = Conv2dLayer::new(store, &format!("{prefix}.stem"), 3, ws[0], 3, 1, Init::KaimingFanIn)?;
        let mut down = Vec::with_capacity(l);
        let mut conv = Vec::with_capacity(l);
        for i in 0..l {
            let cin = if i == 0 { ws[0] } else { ws[i - 1] };
            down.push(Conv2dLayer::new(
                store,
                &format!("{prefix}.stage{i}.down"),
                cin,
                ws[i],
                3,
                2,
                Init::KaimingFanIn,
            )?);
            conv.push(Conv2dLayer::new(
                store,
                &format!("{prefix}.stage{i}.conv"),
                ws[i],
                ws[i],
                3,
                1,
                Init::KaimingFanIn,
            )?);
        }
        Ok(RefinerEncoder {
            stem,
            down,
            conv,
            levels: l,
        })
    }

    /// Multi-level features of an RGB patch, finest level first; level `l`
    /// sits at 1/2^(l+1) of the patch resolution.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        bind: &Binding,
        patch: VarId,
    ) -> Result<Vec<VarId>> {
        let (_, c, h, w) = g.value(patch).dims4()?;
        if c != 3 {
            return Err(Error::shape(format!("refiner input must be RGB, got {c} channels")));
        }
        if h >> self.levels == 0 || w >> self.levels == 0 {
            return Err(Error::shape(format!(
                "patch {h}x{w} too small for {} levels",
                self.levels
            )));
        }
        let centered = g.add_const(patch, crate::substrate::fl::<T>(-0.5));
        let x = self.stem.forward(g, bind, centered)?;
        let mut x = g.relu(x);
        let mut levels = Vec::with_capacity(self.levels);
        for i in 0..self.levels {
            let d = self.down[i].forward(g, bind, x)?;
            let d = g.relu(d);
            let e = self.conv[i].forward(g, bind, d)?;
            let e = g.relu(e);
            levels.push(e);
            x = e;
        }
        Ok(levels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::substrate::Tensor;

    #[test]
    fn level_shapes_align_with_config() {
        let cfg = ModelConfig::default();
        let mut store = ParamStore::<f32>::new(4);
        let enc = RefinerEncoder::build(&mut store, "refiner.encoder", &cfg).unwrap();
        let mut g = Graph::new();
        let bind = store.bind_frozen(&mut g);
        let patch = g.constant(Tensor::filled(vec![1, 3, 64, 128], 0.3));
        let levels = enc.forward(&mut g, &bind, patch).unwrap();
        assert_eq!(levels.len(), 4);
        for (l, &v) in levels.iter().enumerate() {
            let (h, w) = cfg.level_size(l, 64, 128);
            assert_eq!(
                g.value(v).shape(),
                &[1, cfg.refiner_widths[l], h, w],
                "level {l}"
            );
        }
    }

    #[test]
    fn too_small_patch_rejected() {
        let cfg = ModelConfig::default();
        let mut store = ParamStore::<f32>::new(4);
        let enc = RefinerEncoder::build(&mut store, "refiner.encoder", &cfg).unwrap();
        let mut g = Graph::new();
        let bind = store.bind_frozen(&mut g);
        let patch = g.constant(Tensor::filled(vec![1, 3, 8, 8], 0.3));
        assert!(enc.forward(&mut g, &bind, patch).is_err());
    }
}
