//! The assembled two-branch model: one coarse pass over the downsampled
//! image, a lightweight refiner pass per patch, residual composition, and
//! multi-layout fusion for inference.

use super::{CoarseNet, CoarseToFine, FineToCoarse, ModelConfig, RefinerEncoder};
use crate::depth::{DepthMap, RgbImage};
use crate::error::{Error, Result};
use crate::substrate::{fl, sample_box, Binding, Graph, ParamStore, SampleBox, Scalar, VarId};
use crate::tiling::{fuse_layouts, roi_box, TileLayout};

/// Forward-pass accounting for the tiled inference scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct InferenceStats {
    pub coarse_passes: usize,
    pub refiner_passes: usize,
}

pub struct TileRefiner {
    pub config: ModelConfig,
    pub coarse: CoarseNet,
    pub refiner: RefinerEncoder,
    pub c2f: Option<CoarseToFine>,
    pub f2c: FineToCoarse,
}

impl TileRefiner {
    /// Register all parameters: `coarse.*`, `refiner.encoder.*`,
    /// `refiner.c2f.*`, `refiner.f2c.*`.
    pub fn build<T: Scalar>(store: &mut ParamStore<T>, config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let coarse = CoarseNet::build(store, "coarse", config)?;
        let refiner = RefinerEncoder::build(store, "refiner.encoder", config)?;
        let c2f = if config.use_c2f {
            Some(CoarseToFine::build(store, "refiner.c2f", config)?)
        } else {
            None
        };
        let f2c = FineToCoarse::build(store, "refiner.f2c", config)?;
        Ok(TileRefiner {
            config: config.clone(),
            coarse,
            refiner,
            c2f,
            f2c,
        })
    }

    /// Crop the coarse pyramid to a patch roi, resampled to the refiner's
    /// per-level sizes for that patch resolution.
    pub fn roi_pyramid<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        coarse_pyramid: &[VarId],
        roi: &SampleBox,
        patch_h: usize,
        patch_w: usize,
    ) -> Result<Vec<VarId>> {
        coarse_pyramid
            .iter()
            .enumerate()
            .map(|(l, &level)| {
                let (h, w) = self.config.level_size(l, patch_h, patch_w);
                g.crop_bilinear(level, *roi, h, w)
            })
            .collect()
    }

    /// Refiner branch for one patch: encode, denoise under guidance, decode
    /// the residual. `guidance` must hold one map per level, already sized
    /// to the patch's level geometry (roi crops, or noise during noisy
    /// pretraining).
    pub fn refine_patch<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        bind: &Binding,
        rgb_patch: VarId,
        guidance: &[VarId],
    ) -> Result<VarId> {
        let (_, _, ph, pw) = g.value(rgb_patch).dims4()?;
        let levels = self.refiner.forward(g, bind, rgb_patch)?;
        let denoised = match &self.c2f {
            Some(c2f) => c2f.forward(g, bind, &levels, guidance)?,
            None => levels,
        };
        self.f2c.forward(g, bind, &denoised, guidance, ph, pw)
    }

    /// Residual composition in-graph: `clamp(roi(coarse) + residual)`.
    pub fn compose<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        coarse_depth: VarId,
        roi: &SampleBox,
        residual: VarId,
    ) -> Result<VarId> {
        let (_, _, ph, pw) = g.value(residual).dims4()?;
        let base = g.crop_bilinear(coarse_depth, *roi, ph, pw)?;
        let sum = g.add(base, residual)?;
        Ok(g.clamp_min(sum, fl::<T>(self.config.depth_floor() as f64)))
    }

    /// Full-image prediction with frozen parameters: one coarse pass, one
    /// refiner pass per patch per layout, fused by per-pixel averaging.
    pub fn predict_full(
        &self,
        store: &ParamStore<f32>,
        image: &RgbImage,
        layouts: &[TileLayout],
    ) -> Result<(DepthMap, InferenceStats)> {
        if layouts.is_empty() {
            return Err(Error::config("predict_full: no layouts"));
        }
        let canvas_h = image.height();
        let canvas_w = image.width();
        let ph = layouts[0].patch_height();
        let pw = layouts[0].patch_width();
        for l in layouts {
            if l.patch_height() != ph || l.patch_width() != pw {
                return Err(Error::config("layouts disagree on patch size"));
            }
        }

        let mut g = Graph::<f32>::new();
        let bind = store.bind_frozen(&mut g);
        let full_rgb = g.constant(image.to_tensor());
        let image_ds = g.resize_bilinear(full_rgb, ph, pw)?;
        let (coarse_depth, coarse_pyr) = self.coarse.forward(&mut g, &bind, image_ds)?;
        let mut stats = InferenceStats {
            coarse_passes: 1,
            refiner_passes: 0,
        };

        let mut per_layout: Vec<Vec<DepthMap>> = Vec::with_capacity(layouts.len());
        for layout in layouts {
            let mut patches = Vec::with_capacity(layout.patch_count());
            for pb in layout.boxes() {
                let roi = roi_box(pb, canvas_h, canvas_w)?;
                let rgb_patch = g.crop_int(full_rgb, pb.top, pb.left, pb.height, pb.width)?;
                let guidance = self.roi_pyramid(&mut g, &coarse_pyr, &roi, ph, pw)?;
                let residual = self.refine_patch(&mut g, &bind, rgb_patch, &guidance)?;
                let composed = self.compose(&mut g, coarse_depth, &roi, residual)?;
                g.check_finite(composed, "composed patch depth")?;
                stats.refiner_passes += 1;
                patches.push(DepthMap::from_tensor(g.value(composed))?);
            }
            per_layout.push(patches);
        }
        let refs: Vec<(&TileLayout, &[DepthMap])> = layouts
            .iter()
            .zip(&per_layout)
            .map(|(l, p)| (l, p.as_slice()))
            .collect();
        let (fused, _) = fuse_layouts(canvas_h, canvas_w, &refs)?;
        Ok((fused, stats))
    }

    /// The coarse branch alone, upsampled to the canvas. The baseline every
    /// refinement is measured against.
    pub fn predict_coarse_only(
        &self,
        store: &ParamStore<f32>,
        image: &RgbImage,
        patch_h: usize,
        patch_w: usize,
    ) -> Result<DepthMap> {
        let mut g = Graph::<f32>::new();
        let bind = store.bind_frozen(&mut g);
        let full_rgb = g.constant(image.to_tensor());
        let image_ds = g.resize_bilinear(full_rgb, patch_h, patch_w)?;
        let (coarse_depth, _) = self.coarse.forward(&mut g, &bind, image_ds)?;
        let up = sample_box(
            g.value(coarse_depth),
            &SampleBox::full(),
            image.height(),
            image.width(),
        )?;
        DepthMap::from_tensor(&up)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::{generate_scene, SceneParams};
    use crate::substrate::Tensor;
    use crate::tiling::{consistency_layouts, make_tile_layout, roi_crop_depth};

    fn micro_config() -> ModelConfig {
        ModelConfig {
            refiner_widths: vec![4, 8],
            coarse_widths: vec![4, 8],
            levels: 2,
            c2f_layers: 2,
            ..ModelConfig::default()
        }
    }

    fn micro_scene() -> crate::scenegen::Scene {
        generate_scene(
            11,
            &SceneParams {
                height: 32,
                width: 64,
                n_primitives: 3,
                ..SceneParams::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn zero_init_prediction_equals_coarse_composition() {
        let cfg = micro_config();
        let mut store = ParamStore::<f32>::new(21);
        let model = TileRefiner::build(&mut store, &cfg).unwrap();
        let scene = micro_scene();
        let layout = make_tile_layout(32, 64, 2, 2, (0, 0)).unwrap();

        let (fused, stats) = model
            .predict_full(&store, &scene.rgb, std::slice::from_ref(&layout))
            .unwrap();
        assert_eq!(stats.coarse_passes, 1);
        assert_eq!(stats.refiner_passes, 4);

        // oracle: coarse depth map composed patchwise with zero residuals
        let mut g = Graph::<f32>::new();
        let bind = store.bind_frozen(&mut g);
        let full_rgb = g.constant(scene.rgb.to_tensor());
        let ds = g.resize_bilinear(full_rgb, 16, 32).unwrap();
        let (dc, _) = model.coarse.forward(&mut g, &bind, ds).unwrap();
        let coarse_map = DepthMap::from_tensor(g.value(dc)).unwrap();
        for pb in layout.boxes() {
            let roi = roi_box(pb, 32, 64).unwrap();
            let expect = roi_crop_depth(&coarse_map, &roi, pb.height, pb.width).unwrap();
            let got = fused.crop(pb.top, pb.left, pb.height, pb.width).unwrap();
            for (a, b) in got.values().iter().zip(expect.values()) {
                let want = b.max(cfg.depth_floor());
                assert_eq!(*a, want);
            }
        }
    }

    #[test]
    fn sixteen_patch_mode_counts_passes() {
        let cfg = micro_config();
        let mut store = ParamStore::<f32>::new(22);
        let model = TileRefiner::build(&mut store, &cfg).unwrap();
        let scene = generate_scene(
            3,
            &SceneParams {
                height: 64,
                width: 128,
                n_primitives: 4,
                ..SceneParams::default()
            },
        )
        .unwrap();
        let layout = make_tile_layout(64, 128, 4, 4, (0, 0)).unwrap();
        let (_, stats) = model
            .predict_full(&store, &scene.rgb, std::slice::from_ref(&layout))
            .unwrap();
        // P = 16: one coarse pass plus sixteen refiner passes per layout
        assert_eq!(stats.coarse_passes, 1);
        assert_eq!(stats.refiner_passes, 16);
    }

    #[test]
    fn consistency_fusion_of_constant_coarse_is_constant() {
        // zero every coarse parameter: the head emits its mid-range constant
        // everywhere; residuals are zero at init, so the fused consistency
        // output must be that constant
        let cfg = micro_config();
        let mut store = ParamStore::<f32>::new(23);
        let model = TileRefiner::build(&mut store, &cfg).unwrap();
        for (id, name, _) in store
            .iter()
            .map(|(i, n, t)| (i, n.to_string(), t.clone()))
            .collect::<Vec<_>>()
        {
            if name.starts_with("coarse.") {
                store.get_mut(id).data_mut().fill(0.0);
            }
        }
        let scene = micro_scene();
        let layouts = consistency_layouts(32, 64, 2, 2).unwrap();
        let (fused, stats) = model.predict_full(&store, &scene.rgb, &layouts).unwrap();
        assert_eq!(stats.refiner_passes, 12);
        let mid = cfg.depth_min * 0.5 + (cfg.depth_max - cfg.depth_min) / 2.0;
        for &v in fused.values() {
            assert!((v - mid).abs() < 1e-4, "{v} vs {mid}");
        }
    }

    #[test]
    fn receptive_field_probe_localizes_residual_changes() {
        // single level keeps the receptive field well under the patch width:
        // perturbing one input pixel must leave far-away residual columns
        // exactly unchanged while moving nearby ones
        let cfg = ModelConfig {
            refiner_widths: vec![4],
            coarse_widths: vec![4],
            levels: 1,
            c2f_layers: 1,
            ..ModelConfig::default()
        };
        let mut store = ParamStore::<f32>::new(24);
        let model = TileRefiner::build(&mut store, &cfg).unwrap();
        // non-zero residual head so changes propagate to the output
        for name in ["refiner.f2c.head.out.weight", "refiner.f2c.head.out.bias"] {
            let id = store.id_of(name).unwrap();
            for v in store.get_mut(id).data_mut() {
                *v = 0.37;
            }
        }

        let run = |rgb: &Tensor<f32>| -> Vec<f32> {
            let mut g = Graph::<f32>::new();
            let bind = store.bind_frozen(&mut g);
            let patch = g.constant(rgb.clone());
            let guidance: Vec<VarId> = (0..1)
                .map(|l| {
                    let (h, w) = cfg.level_size(l, 16, 128);
                    g.constant(Tensor::filled(vec![1, cfg.coarse_widths[l], h, w], 0.1))
                })
                .collect();
            let res = model.refine_patch(&mut g, &bind, patch, &guidance).unwrap();
            g.value(res).data().to_vec()
        };

        let base = Tensor::<f32>::filled(vec![1, 3, 16, 128], 0.5);
        let mut poked = base.clone();
        // perturb one pixel near the left edge (all three channels)
        for ch in 0..3 {
            poked.data_mut()[ch * 16 * 128 + 8 * 128 + 8] = 1.0;
        }
        let a = run(&base);
        let b = run(&poked);
        let mut changed_near = false;
        for y in 0..16 {
            for x in 0..128 {
                let d = (a[y * 128 + x] - b[y * 128 + x]).abs();
                if x < 48 {
                    if d > 0.0 {
                        changed_near = true;
                    }
                } else {
                    assert_eq!(d, 0.0, "distant column {x} moved by {d}");
                }
            }
        }
        assert!(changed_near);
    }
}
