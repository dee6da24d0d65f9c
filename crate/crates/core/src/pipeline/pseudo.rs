//! Pseudo labels from a frozen teacher: dense fused predictions, computed
//! per request (online) or written to disk once (offline).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TrainScene;
use crate::dataio;
use crate::depth::{DepthMap, RgbImage};
use crate::error::{Error, Result};
use crate::models::TileRefiner;
use crate::substrate::ParamStore;
use crate::tiling::make_tile_layout;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PseudoMode {
    Online,
    Offline,
}

/// Where transfer training obtains its dense pseudo labels.
pub enum PseudoSource<'a> {
    /// Recompute from the frozen teacher on every request, no caching.
    Online {
        teacher: &'a TileRefiner,
        store: &'a ParamStore<f32>,
        rows: usize,
        cols: usize,
    },
    /// Maps loaded from an offline directory, index-aligned with the scenes.
    Offline(Vec<DepthMap>),
}

impl PseudoSource<'_> {
    pub fn label_for(&self, scene_index: usize, rgb: &RgbImage) -> Result<DepthMap> {
        match self {
            PseudoSource::Online {
                teacher,
                store,
                rows,
                cols,
            } => pseudo_label_for_scene(teacher, store, rgb, *rows, *cols),
            PseudoSource::Offline(maps) => maps
                .get(scene_index)
                .cloned()
                .ok_or_else(|| Error::config(format!("no offline pseudo label for scene {scene_index}"))),
        }
    }
}

/// One dense teacher prediction: base-layout fused inference.
pub fn pseudo_label_for_scene(
    teacher: &TileRefiner,
    store: &ParamStore<f32>,
    rgb: &RgbImage,
    rows: usize,
    cols: usize,
) -> Result<DepthMap> {
    let layout = make_tile_layout(rgb.height(), rgb.width(), rows, cols, (0, 0))?;
    let (map, _) = teacher.predict_full(store, rgb, std::slice::from_ref(&layout))?;
    Ok(map)
}

/// Write pseudo labels for every scene to `dir/pseudo_<seed>.f32`.
/// Existing files are overwritten; the set is immutable once written in the
/// sense that re-running the same teacher produces identical bytes.
pub fn write_pseudo_labels(
    teacher: &TileRefiner,
    store: &ParamStore<f32>,
    scenes: &[TrainScene],
    rows: usize,
    cols: usize,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(scenes.len());
    for scene in scenes {
        let map = pseudo_label_for_scene(teacher, store, &scene.rgb, rows, cols)?;
        let path = dir.join(format!("pseudo_{}.f32", scene.seed));
        dataio::save_depth(&path, &map)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Load an offline set back, index-aligned with `scenes`.
pub fn load_pseudo_labels(dir: &Path, scenes: &[TrainScene]) -> Result<Vec<DepthMap>> {
    scenes
        .iter()
        .map(|s| dataio::load_depth(&dir.join(format!("pseudo_{}.f32", s.seed))))
        .collect()
}

/// Attach pseudo labels to the scenes for transfer training.
pub fn attach_pseudo_labels(scenes: &mut [TrainScene], source: &PseudoSource) -> Result<()> {
    for (i, scene) in scenes.iter_mut().enumerate() {
        let map = source.label_for(i, &scene.rgb)?;
        if map.height() != scene.rgb.height() || map.width() != scene.rgb.width() {
            return Err(Error::shape(format!(
                "pseudo label {}x{} vs scene {}x{}",
                map.height(),
                map.width(),
                scene.rgb.height(),
                scene.rgb.width()
            )));
        }
        scene.pseudo = Some(map);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelConfig;
    use crate::pipeline::prepare_scenes;
    use crate::scenegen::{generate_scene, LoadedScene, SceneParams};

    fn scenes(n: usize) -> Vec<TrainScene> {
        let params = SceneParams {
            height: 32,
            width: 64,
            n_primitives: 3,
            ..SceneParams::default()
        };
        let loaded: Vec<LoadedScene> = (0..n)
            .map(|i| {
                let s = generate_scene(40 + i as u64, &params).unwrap();
                LoadedScene {
                    seed: s.seed,
                    rgb: s.rgb,
                    depth: s.depth,
                    clean_depth: None,
                }
            })
            .collect();
        prepare_scenes(&loaded, 16, 32).unwrap()
    }

    #[test]
    fn online_and_offline_labels_agree() {
        let cfg = ModelConfig {
            refiner_widths: vec![4, 8],
            coarse_widths: vec![4, 8],
            levels: 2,
            c2f_layers: 2,
            ..ModelConfig::default()
        };
        let mut store = ParamStore::<f32>::new(55);
        let teacher = TileRefiner::build(&mut store, &cfg).unwrap();
        let scenes = scenes(2);
        let dir = tempfile::tempdir().unwrap();

        write_pseudo_labels(&teacher, &store, &scenes, 2, 2, dir.path()).unwrap();
        let offline = load_pseudo_labels(dir.path(), &scenes).unwrap();
        for (i, scene) in scenes.iter().enumerate() {
            let online = pseudo_label_for_scene(&teacher, &store, &scene.rgb, 2, 2).unwrap();
            assert_eq!(online.values().len(), offline[i].values().len());
            for (a, b) in online.values().iter().zip(offline[i].values()) {
                assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
            }
        }

        // offline rewrite is bit-identical
        let dir2 = tempfile::tempdir().unwrap();
        write_pseudo_labels(&teacher, &store, &scenes, 2, 2, dir2.path()).unwrap();
        for scene in &scenes {
            let a = std::fs::read(dir.path().join(format!("pseudo_{}.f32", scene.seed))).unwrap();
            let b = std::fs::read(dir2.path().join(format!("pseudo_{}.f32", scene.seed))).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn attach_fills_every_scene() {
        let cfg = ModelConfig {
            refiner_widths: vec![4, 8],
            coarse_widths: vec![4, 8],
            levels: 2,
            c2f_layers: 2,
            ..ModelConfig::default()
        };
        let mut store = ParamStore::<f32>::new(56);
        let teacher = TileRefiner::build(&mut store, &cfg).unwrap();
        let mut sc = scenes(2);
        let source = PseudoSource::Online {
            teacher: &teacher,
            store: &store,
            rows: 2,
            cols: 2,
        };
        attach_pseudo_labels(&mut sc, &source).unwrap();
        assert!(sc.iter().all(|s| s.pseudo.is_some()));
    }
}
