//! Fine-to-coarse decoder: fuses denoised refiner features with roi-cropped
//! coarse features top-down and emits the residual depth map at patch
//! resolution. The final head is zero-initialized, so an untrained refiner
//! contributes exactly nothing.

use super::{Conv2dLayer, ModelConfig};
use crate::error::{Error, Result};
use crate::substrate::{Binding, Graph, Init, ParamStore, Scalar, VarId};

pub struct FineToCoarse {
    fuse: Vec<Conv2dLayer>,
    head_conv: Conv2dLayer,
    head_out: Conv2dLayer,
    levels: usize,
    /// Output gain mapping the unit-scale head onto the depth range; keeps
    /// the zero-init identity while residuals bootstrap at a useful scale.
    residual_scale: f32,
}

impl FineToCoarse {
    pub fn build<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        config: &ModelConfig,
    ) -> Result<Self> {
        let l = config.levels;
        let rw = &config.refiner_widths;
        let cw = &config.coarse_widths;
        let mut fuse = Vec::with_capacity(l);
        for i in 0..l {
            let cin = if i + 1 < l {
                rw[i] + cw[i] + rw[i + 1]
            } else {
                rw[i] + cw[i]
            };
            fuse.push(Conv2dLayer::new(
                store,
                &format!("{prefix}.fuse{i}"),
                cin,
                rw[i],
                3,
                1,
                Init::KaimingFanIn,
            )?);
        }
        let head_conv = Conv2dLayer::new(
            store,
            &format!("{prefix}.head.conv"),
            rw[0],
            rw[0],
            3,
            1,
            Init::KaimingFanIn,
        )?;
        let head_out = Conv2dLayer::new(
            store,
            &format!("{prefix}.head.out"),
            rw[0],
            1,
            1,
            1,
            Init::Zeros,
        )?;
        Ok(FineToCoarse {
            fuse,
            head_conv,
            head_out,
            levels: l,
            residual_scale: (config.depth_max - config.depth_min) / 4.0,
        })
    }

    /// Residual depth at `patch_h x patch_w`; unbounded sign.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        bind: &Binding,
        denoised: &[VarId],
        coarse_roi: &[VarId],
        patch_h: usize,
        patch_w: usize,
    ) -> Result<VarId> {
        if denoised.len() != self.levels || coarse_roi.len() != self.levels {
            return Err(Error::shape(format!(
                "pyramid levels: denoised {} / coarse {} vs model {}",
                denoised.len(),
                coarse_roi.len(),
                self.levels
            )));
        }
        let top = self.levels - 1;
        let cat = g.concat_channels(&[denoised[top], coarse_roi[top]])?;
        let f = self.fuse[top].forward(g, bind, cat)?;
        let mut up = g.relu(f);
        for i in (0..top).rev() {
            let (_, _, h, w) = g.value(denoised[i]).dims4()?;
            let upsampled = g.resize_bilinear(up, h, w)?;
            let cat = g.concat_channels(&[denoised[i], coarse_roi[i], upsampled])?;
            let f = self.fuse[i].forward(g, bind, cat)?;
            up = g.relu(f);
        }
        let full = g.resize_bilinear(up, patch_h, patch_w)?;
        let h = self.head_conv.forward(g, bind, full)?;
        let h = g.relu(h);
        let raw = self.head_out.forward(g, bind, h)?;
        Ok(g.mul_const(raw, crate::substrate::fl::<T>(self.residual_scale as f64)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::substrate::Tensor;
    use rand::{Rng, SeedableRng};

    fn rand_tensor(shape: Vec<usize>, seed: u64) -> Tensor<f32> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn micro_pyramids(
        g: &mut Graph<f32>,
        cfg: &ModelConfig,
        ph: usize,
        pw: usize,
        seed: u64,
    ) -> (Vec<VarId>, Vec<VarId>) {
        let mut d = Vec::new();
        let mut c = Vec::new();
        for l in 0..cfg.levels {
            let (h, w) = cfg.level_size(l, ph, pw);
            d.push(g.constant(rand_tensor(vec![1, cfg.refiner_widths[l], h, w], seed + l as u64)));
            c.push(g.constant(rand_tensor(
                vec![1, cfg.coarse_widths[l], h, w],
                seed + 100 + l as u64,
            )));
        }
        (d, c)
    }

    #[test]
    fn zero_init_head_gives_zero_residual() {
        let cfg = ModelConfig::default();
        let mut store = ParamStore::<f32>::new(31);
        let f2c = FineToCoarse::build(&mut store, "f2c", &cfg).unwrap();
        let mut g = Graph::new();
        let bind = store.bind_frozen(&mut g);
        let (d, c) = micro_pyramids(&mut g, &cfg, 64, 128, 5);
        let res = f2c.forward(&mut g, &bind, &d, &c, 64, 128).unwrap();
        assert_eq!(g.value(res).shape(), &[1, 1, 64, 128]);
        assert!(g.value(res).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn residual_unbounded_sign_after_head_perturbation() {
        let cfg = ModelConfig {
            refiner_widths: vec![4, 8],
            coarse_widths: vec![4, 8],
            levels: 2,
            c2f_layers: 2,
            ..ModelConfig::default()
        };
        let mut store = ParamStore::<f32>::new(32);
        let f2c = FineToCoarse::build(&mut store, "f2c", &cfg).unwrap();
        let wid = store.id_of("f2c.head.out.weight").unwrap();
        let rnd = rand_tensor(store.get(wid).shape().to_vec(), 9);
        store.get_mut(wid).data_mut().copy_from_slice(rnd.data());
        let mut g = Graph::new();
        let bind = store.bind_frozen(&mut g);
        let (d, c) = micro_pyramids(&mut g, &cfg, 16, 32, 7);
        let res = f2c.forward(&mut g, &bind, &d, &c, 16, 32).unwrap();
        let vals = g.value(res).data();
        assert!(vals.iter().any(|&v| v > 0.0) && vals.iter().any(|&v| v < 0.0));
    }
}
