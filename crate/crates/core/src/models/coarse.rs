//! Coarse branch: encoder-decoder over the downsampled full image, emitting
//! a positive global depth map and the depth-aligned feature pyramid that
//! guides the refiner.

use super::{Conv2dLayer, ModelConfig};
use crate::error::{Error, Result};
use crate::substrate::{fl, Binding, Graph, Init, ParamStore, Scalar, VarId};

pub struct CoarseNet {
    stem: Conv2dLayer,
    down: Vec<Conv2dLayer>,
    enc_conv: Vec<Conv2dLayer>,
    dec_proj: Vec<Conv2dLayer>,
    dec_conv: Vec<Conv2dLayer>,
    head_conv: Conv2dLayer,
    head_out: Conv2dLayer,
    levels: usize,
    depth_min: f32,
    depth_max: f32,
}

impl CoarseNet {
    pub fn build<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        config: &ModelConfig,
    ) -> Result<Self> {
        config.validate()?;
        let ws = &config.coarse_widths;
        let l = config.levels;
        let stem = Conv2dLayer::new(store, &format!("{prefix}.stem"), 3, ws[0], 3, 1, Init::KaimingFanIn)?;
        let mut down = Vec::with_capacity(l);
        let mut enc_conv = Vec::with_capacity(l);
        for i in 0..l {
            let cin = if i == 0 { ws[0] } else { ws[i - 1] };
            down.push(Conv2dLayer::new(
                store,
                &format!("{prefix}.enc{i}.down"),
                cin,
                ws[i],
                3,
                2,
                Init::KaimingFanIn,
            )?);
            enc_conv.push(Conv2dLayer::new(
                store,
                &format!("{prefix}.enc{i}.conv"),
                ws[i],
                ws[i],
                3,
                1,
                Init::KaimingFanIn,
            )?);
        }
        let mut dec_proj = Vec::new();
        let mut dec_conv = Vec::new();
        for i in 0..l {
            if i + 1 < l {
                dec_proj.push(Conv2dLayer::new(
                    store,
                    &format!("{prefix}.dec{i}.proj"),
                    ws[i + 1],
                    ws[i],
                    1,
                    1,
                    Init::KaimingFanIn,
                )?);
                dec_conv.push(Conv2dLayer::new(
                    store,
                    &format!("{prefix}.dec{i}.conv"),
                    2 * ws[i],
                    ws[i],
                    3,
                    1,
                    Init::KaimingFanIn,
                )?);
            } else {
                dec_conv.push(Conv2dLayer::new(
                    store,
                    &format!("{prefix}.dec{i}.conv"),
                    ws[i],
                    ws[i],
                    3,
                    1,
                    Init::KaimingFanIn,
                )?);
            }
        }
        let head_conv = Conv2dLayer::new(
            store,
            &format!("{prefix}.head.conv"),
            ws[0],
            ws[0],
            3,
            1,
            Init::KaimingFanIn,
        )?;
        let head_out = Conv2dLayer::new(
            store,
            &format!("{prefix}.head.out"),
            ws[0],
            1,
            1,
            1,
            Init::KaimingFanIn,
        )?;
        Ok(CoarseNet {
            stem,
            down,
            enc_conv,
            dec_proj,
            dec_conv,
            head_conv,
            head_out,
            levels: l,
            depth_min: config.depth_min,
            depth_max: config.depth_max,
        })
    }

    /// Forward over the downsampled image (`[1, 3, H, W]` at patch
    /// resolution). Returns the depth map variable and the decoder pyramid,
    /// finest level first.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        bind: &Binding,
        image_ds: VarId,
    ) -> Result<(VarId, Vec<VarId>)> {
        let (_, c, h, w) = g.value(image_ds).dims4()?;
        if c != 3 {
            return Err(Error::shape(format!("coarse input must be RGB, got {c} channels")));
        }
        if h >> self.levels == 0 || w >> self.levels == 0 {
            return Err(Error::shape(format!(
                "input {h}x{w} too small for {} pyramid levels",
                self.levels
            )));
        }
        let centered = g.add_const(image_ds, fl::<T>(-0.5));
        let x = self.stem.forward(g, bind, centered)?;
        let mut x = g.relu(x);
        let mut enc = Vec::with_capacity(self.levels);
        for i in 0..self.levels {
            let d = self.down[i].forward(g, bind, x)?;
            let d = g.relu(d);
            let e = self.enc_conv[i].forward(g, bind, d)?;
            let e = g.relu(e);
            enc.push(e);
            x = e;
        }

        let mut pyramid = vec![0usize; self.levels];
        let top = self.dec_conv[self.levels - 1].forward(g, bind, enc[self.levels - 1])?;
        pyramid[self.levels - 1] = g.relu(top);
        for i in (0..self.levels - 1).rev() {
            let (_, _, eh, ew) = g.value(enc[i]).dims4()?;
            let up = g.resize_bilinear(pyramid[i + 1], eh, ew)?;
            let up = self.dec_proj[i].forward(g, bind, up)?;
            let up = g.relu(up);
            let cat = g.concat_channels(&[enc[i], up])?;
            let d = self.dec_conv[i].forward(g, bind, cat)?;
            pyramid[i] = g.relu(d);
        }

        let full = g.resize_bilinear(pyramid[0], h, w)?;
        let hc = self.head_conv.forward(g, bind, full)?;
        let hc = g.relu(hc);
        let raw = self.head_out.forward(g, bind, hc)?;
        // softplus head scaled so a zero pre-activation lands mid-range
        let sp = g.softplus(raw);
        let scale = (self.depth_max - self.depth_min) as f64 / (2.0 * std::f64::consts::LN_2);
        let scaled = g.mul_const(sp, fl::<T>(scale));
        let depth = g.add_const(scaled, fl::<T>(self.depth_min as f64 * 0.5));
        g.check_finite(depth, "coarse depth head")?;
        Ok((depth, pyramid))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::substrate::Tensor;

    fn micro_config() -> ModelConfig {
        ModelConfig {
            refiner_widths: vec![4, 8],
            coarse_widths: vec![4, 8],
            levels: 2,
            c2f_layers: 2,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn untrained_net_outputs_positive_finite_depth() {
        let mut store = ParamStore::<f32>::new(1);
        let net = CoarseNet::build(&mut store, "coarse", &micro_config()).unwrap();
        let mut g = Graph::new();
        let bind = store.bind_frozen(&mut g);
        let img = g.constant(Tensor::filled(vec![1, 3, 16, 32], 0.5));
        let (depth, pyramid) = net.forward(&mut g, &bind, img).unwrap();
        assert_eq!(g.value(depth).shape(), &[1, 1, 16, 32]);
        assert!(g.value(depth).data().iter().all(|&v| v > 0.0 && v.is_finite()));
        assert_eq!(pyramid.len(), 2);
        assert_eq!(g.value(pyramid[0]).shape(), &[1, 4, 8, 16]);
        assert_eq!(g.value(pyramid[1]).shape(), &[1, 8, 4, 8]);
    }

    #[test]
    fn forward_is_pure() {
        let mut store = ParamStore::<f32>::new(2);
        let net = CoarseNet::build(&mut store, "coarse", &micro_config()).unwrap();
        let run = || {
            let mut g = Graph::new();
            let bind = store.bind_frozen(&mut g);
            let img = g.constant(Tensor::filled(vec![1, 3, 16, 32], 0.25));
            let (depth, _) = net.forward(&mut g, &bind, img).unwrap();
            g.value(depth).data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn head_midpoint_at_zero_params() {
        // all-zero parameters: softplus(0) scaled lands mid depth range
        let mut store = ParamStore::<f32>::new(3);
        let cfg = micro_config();
        let net = CoarseNet::build(&mut store, "coarse", &cfg).unwrap();
        for i in 0..store.len() {
            let id = crate::substrate::ParamId(i);
            store.get_mut(id).data_mut().fill(0.0);
        }
        let mut g = Graph::new();
        let bind = store.bind_frozen(&mut g);
        let img = g.constant(Tensor::filled(vec![1, 3, 16, 32], 0.5));
        let (depth, _) = net.forward(&mut g, &bind, img).unwrap();
        let mid = cfg.depth_min * 0.5 + (cfg.depth_max - cfg.depth_min) / 2.0;
        for &v in g.value(depth).data() {
            assert!((v - mid).abs() < 1e-4, "{v} vs {mid}");
        }
    }
}
