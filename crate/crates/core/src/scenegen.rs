//! Procedural RGB + depth scenes with sharp occlusion boundaries, plus the
//! label degrader that emulates scale-accurate but boundary-poor real-domain
//! supervision.
//!
//! A scene is a textured background plane and `n` layered shapes, each
//! confined to its own depth band. Bands are separated so that wherever two
//! layers meet, the depth jump across the silhouette exceeds `delta_min` by
//! construction.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio;
use crate::depth::{DepthMap, RgbImage};
use crate::error::{Error, Result};
use crate::metrics::{distance_transform, extract_edges, DEFAULT_EDGE_TAU};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneParams {
    pub height: usize,
    pub width: usize,
    pub n_primitives: usize,
    pub depth_min: f32,
    pub depth_max: f32,
    /// Minimum depth jump across any silhouette, meters.
    pub delta_min: f32,
    /// RGB texture amplitude; bounded so color edges never drown out the
    /// shape boundaries the refiner must find.
    pub texture_amp: f32,
    /// Distance-fog attenuation coefficient (1/m). Shading carries a
    /// monocular depth cue: farther surfaces fade toward the haze color,
    /// and depth edges imprint crisp RGB edges. 0 disables.
    pub fog_beta: f32,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            height: 256,
            width: 512,
            n_primitives: 8,
            depth_min: 1.0,
            depth_max: 20.0,
            delta_min: 0.5,
            texture_amp: 0.08,
            fog_beta: 0.12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveKind {
    Background,
    Rectangle,
    Ellipse,
    Triangle,
}

/// Record of one layered shape, nearest last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub kind: PrimitiveKind,
    /// Band-center depth in meters.
    pub depth: f32,
    pub color: [f32; 3],
    pub texture_amp: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub rgb: RgbImage,
    pub depth: DepthMap,
    pub seed: u64,
    pub primitives: Vec<Primitive>,
}

const COLOR_PALETTE: [[f32; 3]; 12] = [
    [0.85, 0.25, 0.2],
    [0.2, 0.55, 0.85],
    [0.3, 0.75, 0.35],
    [0.9, 0.7, 0.2],
    [0.6, 0.3, 0.75],
    [0.25, 0.75, 0.7],
    [0.85, 0.45, 0.65],
    [0.55, 0.6, 0.25],
    [0.35, 0.35, 0.8],
    [0.8, 0.5, 0.3],
    [0.4, 0.65, 0.55],
    [0.7, 0.35, 0.4],
];

struct Shape {
    kind: PrimitiveKind,
    center: (f32, f32),
    radii: (f32, f32),
    tri: [(f32, f32); 3],
    grad_dir: (f32, f32),
    color: [f32; 3],
    tex_freq: (f32, f32),
    tex_phase: f32,
}

impl Shape {
    fn contains(&self, y: f32, x: f32) -> bool {
        let dy = y - self.center.0;
        let dx = x - self.center.1;
        match self.kind {
            PrimitiveKind::Background => true,
            PrimitiveKind::Rectangle => dy.abs() <= self.radii.0 && dx.abs() <= self.radii.1,
            PrimitiveKind::Ellipse => {
                let a = dy / self.radii.0;
                let b = dx / self.radii.1;
                a * a + b * b <= 1.0
            }
            PrimitiveKind::Triangle => {
                let sign = |p: (f32, f32), a: (f32, f32), b: (f32, f32)| {
                    (p.1 - b.1) * (a.0 - b.0) - (a.1 - b.1) * (p.0 - b.0)
                };
                let p = (y, x);
                let d1 = sign(p, self.tri[0], self.tri[1]);
                let d2 = sign(p, self.tri[1], self.tri[2]);
                let d3 = sign(p, self.tri[2], self.tri[0]);
                let has_neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
                let has_pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
                !(has_neg && has_pos)
            }
        }
    }

    /// In-shape coordinates normalized to roughly [-1, 1].
    fn local(&self, y: f32, x: f32) -> (f32, f32) {
        (
            (y - self.center.0) / self.radii.0,
            (x - self.center.1) / self.radii.1,
        )
    }
}

/// Generate one scene. Bit-identical for the same `(seed, params)`.
pub fn generate_scene(seed: u64, params: &SceneParams) -> Result<Scene> {
    let p = params;
    if p.height < 16 || p.width < 16 {
        return Err(Error::config(format!(
            "degenerate resolution {}x{} (need >= 16 px per side)",
            p.height, p.width
        )));
    }
    if p.n_primitives < 1 {
        return Err(Error::config("n_primitives must be >= 1"));
    }
    if !(p.depth_min > 0.0 && p.depth_max > p.depth_min) {
        return Err(Error::config(format!(
            "depth range [{}, {}] must be positive and ordered",
            p.depth_min, p.depth_max
        )));
    }
    let span = p.depth_max - p.depth_min;
    let margin = 0.02 * span;
    let ramp_amp = 0.3 * p.delta_min;
    let usable = span - 2.0 * margin - 2.0 * ramp_amp;
    let step = usable / p.n_primitives as f32;
    if step - 2.0 * ramp_amp < p.delta_min {
        return Err(Error::config(format!(
            "{} primitives leave a band step of {step:.3} m; too small for delta_min {}",
            p.n_primitives, p.delta_min
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (p.height, p.width);
    let min_dim = h.min(w) as f32;

    // far-to-near band centers; index 0 is the background
    let far_center = p.depth_max - margin - ramp_amp;
    let centers: Vec<f32> = (0..=p.n_primitives)
        .map(|k| far_center - k as f32 * step)
        .collect();

    let mut shapes = Vec::with_capacity(p.n_primitives + 1);
    for (k, _) in centers.iter().enumerate() {
        let kind = if k == 0 {
            PrimitiveKind::Background
        } else {
            match rng.random_range(0..3u32) {
                0 => PrimitiveKind::Rectangle,
                1 => PrimitiveKind::Ellipse,
                _ => PrimitiveKind::Triangle,
            }
        };
        let center = (
            rng.random_range(0.15..0.85) * h as f32,
            rng.random_range(0.15..0.85) * w as f32,
        );
        let radii = (
            rng.random_range(0.08..0.22) * min_dim,
            rng.random_range(0.08..0.22) * min_dim,
        );
        let mut tri = [(0.0f32, 0.0f32); 3];
        if kind == PrimitiveKind::Triangle {
            let mut angles: Vec<f32> = (0..3)
                .map(|_| rng.random_range(0.0..std::f32::consts::TAU))
                .collect();
            angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (i, a) in angles.iter().enumerate() {
                let r = rng.random_range(0.7..1.3);
                tri[i] = (
                    center.0 + radii.0 * r * a.sin(),
                    center.1 + radii.1 * r * a.cos(),
                );
            }
        }
        let theta: f32 = rng.random_range(0.0..std::f32::consts::TAU);
        let color_base = COLOR_PALETTE[(seed as usize + k * 5) % COLOR_PALETTE.len()];
        let jitter = rng.random_range(-0.05..0.05f32);
        let color = [
            (color_base[0] + jitter).clamp(0.05, 0.95),
            (color_base[1] + jitter).clamp(0.05, 0.95),
            (color_base[2] + jitter).clamp(0.05, 0.95),
        ];
        shapes.push(Shape {
            kind,
            center,
            radii: if kind == PrimitiveKind::Background {
                (h as f32 / 2.0, w as f32 / 2.0)
            } else {
                radii
            },
            tri,
            grad_dir: (theta.sin(), theta.cos()),
            color,
            tex_freq: (
                rng.random_range(1.0..4.0f32),
                rng.random_range(1.0..4.0f32),
            ),
            tex_phase: rng.random_range(0.0..std::f32::consts::TAU),
        });
    }
    // background spans the whole canvas regardless of the sampled center
    shapes[0].center = (h as f32 / 2.0, w as f32 / 2.0);

    let inv_sqrt2 = std::f32::consts::FRAC_1_SQRT_2;
    let mut depth = vec![0.0f32; h * w];
    let mut rgb = vec![0.0f32; h * w * 3];
    // paint far to near; nearer layers overwrite
    for (k, shape) in shapes.iter().enumerate() {
        let c = centers[k];
        for y in 0..h {
            for x in 0..w {
                let (yf, xf) = (y as f32, x as f32);
                if k != 0 && !shape.contains(yf, xf) {
                    continue;
                }
                let (ly, lx) = shape.local(yf, xf);
                let ramp = ramp_amp
                    * (shape.grad_dir.0 * ly.clamp(-1.0, 1.0)
                        + shape.grad_dir.1 * lx.clamp(-1.0, 1.0))
                    * inv_sqrt2;
                depth[y * w + x] = c + ramp;
                let tex = p.texture_amp
                    * (std::f32::consts::TAU
                        * (shape.tex_freq.0 * ly + shape.tex_freq.1 * lx)
                        / 2.0
                        + shape.tex_phase)
                        .sin();
                let atten = (-p.fog_beta * (depth[y * w + x] - p.depth_min)).exp();
                const FOG: [f32; 3] = [0.78, 0.8, 0.84];
                let base = (y * w + x) * 3;
                for ch in 0..3 {
                    let surface = (shape.color[ch] + tex).clamp(0.0, 1.0);
                    rgb[base + ch] = surface * atten + FOG[ch] * (1.0 - atten);
                }
            }
        }
    }

    let primitives = shapes
        .iter()
        .enumerate()
        .map(|(k, s)| Primitive {
            kind: s.kind,
            depth: centers[k],
            color: s.color,
            texture_amp: p.texture_amp,
        })
        .collect();

    Ok(Scene {
        rgb: RgbImage::new(h, w, rgb)?,
        depth: DepthMap::dense(h, w, depth)?,
        seed,
        primitives,
    })
}

// ---------------------------------------------------------------------------
// label degradation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradeMode {
    /// Blur depth within `strength` px of a GT edge: boundaries smear, the
    /// global scale statistics stay put.
    EdgeErode,
    /// Keep a random `strength` fraction of pixels valid, mask the rest.
    SparseSample,
}

/// Mask-aware box blur with window `2 * radius + 1`, separable two-pass.
fn box_blur(depth: &DepthMap, radius: usize) -> Vec<f32> {
    let (h, w) = (depth.height(), depth.width());
    let mut sum_h = vec![0.0f64; h * w];
    let mut cnt_h = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius).min(w - 1);
            let mut s = 0.0;
            let mut c = 0.0;
            for xx in lo..=hi {
                if depth.is_valid(y, xx) {
                    s += depth.at(y, xx) as f64;
                    c += 1.0;
                }
            }
            sum_h[y * w + x] = s;
            cnt_h[y * w + x] = c;
        }
    }
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        let lo = y.saturating_sub(radius);
        let hi = (y + radius).min(h - 1);
        for x in 0..w {
            let mut s = 0.0;
            let mut c = 0.0;
            for yy in lo..=hi {
                s += sum_h[yy * w + x];
                c += cnt_h[yy * w + x];
            }
            out[y * w + x] = if c > 0.0 {
                (s / c) as f32
            } else {
                depth.at(y, x)
            };
        }
    }
    out
}

/// Degrade ground-truth labels. `seed` drives the sparse-sampling draw; the
/// edge blur is deterministic without it.
pub fn degrade_labels(
    depth: &DepthMap,
    mode: DegradeMode,
    strength: f32,
    seed: u64,
) -> Result<DepthMap> {
    if strength <= 0.0 {
        return Err(Error::config("degrade strength must be > 0"));
    }
    match mode {
        DegradeMode::EdgeErode => {
            let radius = strength.round() as usize;
            let edges = extract_edges(depth, DEFAULT_EDGE_TAU)?;
            if radius == 0 || edges.count() == 0 {
                return Ok(depth.clone());
            }
            let dist = distance_transform(&edges.mask, depth.height(), depth.width());
            let blurred = box_blur(depth, radius);
            let values = depth
                .values()
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    if dist[i] <= strength as f64 {
                        blurred[i]
                    } else {
                        v
                    }
                })
                .collect();
            DepthMap::new(
                depth.height(),
                depth.width(),
                values,
                depth.valid().to_vec(),
            )
        }
        DegradeMode::SparseSample => {
            if strength > 1.0 {
                return Err(Error::config("sparse_sample strength is a fraction in (0, 1]"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let valid = depth
                .valid()
                .iter()
                .map(|&m| m && rng.random_bool(strength as f64))
                .collect();
            DepthMap::new(
                depth.height(),
                depth.width(),
                depth.values().to_vec(),
                valid,
            )
        }
    }
}

// ---------------------------------------------------------------------------
// dataset generation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradeSpec {
    pub mode: DegradeMode,
    pub strength: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub name: String,
    pub count: usize,
    pub seed_start: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub scene: SceneParams,
    pub splits: Vec<SplitSpec>,
    /// When set, stored depth labels are degraded (real-emulated domain)
    /// and the clean labels are kept alongside for evaluation.
    pub degrade: Option<DegradeSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub seed: u64,
    pub rgb: String,
    pub depth: String,
    pub clean_depth: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSplit {
    pub name: String,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub resolution: (usize, usize),
    /// `synthetic` or `real-emulated`.
    pub domain: String,
    pub scene: SceneParams,
    pub degrade: Option<DegradeSpec>,
    pub splits: Vec<ManifestSplit>,
}

impl DatasetManifest {
    pub fn split(&self, name: &str) -> Option<&ManifestSplit> {
        self.splits.iter().find(|s| s.name == name)
    }
}

/// Write a dataset tree: `<root>/<split>/rgb_<seed>.png`,
/// `<root>/<split>/depth_<seed>.f32` (+ sidecars, + `depth_clean_<seed>.f32`
/// for degraded datasets) and `<root>/manifest.json`.
pub fn generate_dataset(config: &DatasetConfig, root: &Path, force: bool) -> Result<DatasetManifest> {
    // disjoint seed ranges across splits
    let mut ranges: Vec<(u64, u64, &str)> = config
        .splits
        .iter()
        .map(|s| (s.seed_start, s.seed_start + s.count as u64, s.name.as_str()))
        .collect();
    ranges.sort();
    for pair in ranges.windows(2) {
        if pair[0].1 > pair[1].0 {
            return Err(Error::config(format!(
                "seed ranges of splits {:?} and {:?} overlap",
                pair[0].2, pair[1].2
            )));
        }
    }
    if root.exists() && root.read_dir()?.next().is_some() && !force {
        return Err(Error::config(format!(
            "target directory {} is not empty (use --force to overwrite)",
            root.display()
        )));
    }
    fs::create_dir_all(root)?;

    let mut splits = Vec::new();
    for spec in &config.splits {
        let dir = root.join(&spec.name);
        fs::create_dir_all(&dir)?;
        let mut entries = Vec::new();
        for i in 0..spec.count {
            let seed = spec.seed_start + i as u64;
            let scene = generate_scene(seed, &config.scene)?;
            let rgb_rel = format!("{}/rgb_{seed}.png", spec.name);
            let depth_rel = format!("{}/depth_{seed}.f32", spec.name);
            dataio::save_image(&root.join(&rgb_rel), &scene.rgb)?;
            let clean_rel = if let Some(spec_d) = &config.degrade {
                let degraded =
                    degrade_labels(&scene.depth, spec_d.mode, spec_d.strength, seed)?;
                dataio::save_depth(&root.join(&depth_rel), &degraded)?;
                let clean = format!("{}/depth_clean_{seed}.f32", spec.name);
                dataio::save_depth(&root.join(&clean), &scene.depth)?;
                Some(clean)
            } else {
                dataio::save_depth(&root.join(&depth_rel), &scene.depth)?;
                None
            };
            entries.push(ManifestEntry {
                seed,
                rgb: rgb_rel,
                depth: depth_rel,
                clean_depth: clean_rel,
            });
        }
        splits.push(ManifestSplit {
            name: spec.name.clone(),
            entries,
        });
    }
    let manifest = DatasetManifest {
        resolution: (config.scene.height, config.scene.width),
        domain: if config.degrade.is_some() {
            "real-emulated".to_string()
        } else {
            "synthetic".to_string()
        },
        scene: config.scene.clone(),
        degrade: config.degrade.clone(),
        splits,
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    fs::write(root.join("manifest.json"), bytes)?;
    Ok(manifest)
}

pub fn load_manifest(root: &Path) -> Result<DatasetManifest> {
    Ok(serde_json::from_slice(&fs::read(root.join("manifest.json"))?)?)
}

/// A dataset entry loaded into memory.
#[derive(Debug, Clone)]
pub struct LoadedScene {
    pub seed: u64,
    pub rgb: RgbImage,
    pub depth: DepthMap,
    /// Clean labels when the stored ones are degraded.
    pub clean_depth: Option<DepthMap>,
}

impl LoadedScene {
    /// The map boundary evaluation should reference: clean if present.
    pub fn eval_depth(&self) -> &DepthMap {
        self.clean_depth.as_ref().unwrap_or(&self.depth)
    }
}

pub fn load_split(root: &Path, manifest: &DatasetManifest, split: &str) -> Result<Vec<LoadedScene>> {
    let s = manifest
        .split(split)
        .ok_or_else(|| Error::config(format!("split {split:?} not in manifest")))?;
    s.entries
        .iter()
        .map(|e| {
            Ok(LoadedScene {
                seed: e.seed,
                rgb: dataio::load_image(&root.join(&e.rgb))?,
                depth: dataio::load_depth(&root.join(&e.depth))?,
                clean_depth: e
                    .clean_depth
                    .as_ref()
                    .map(|p| dataio::load_depth(&root.join(p)))
                    .transpose()?,
            })
        })
        .collect()
}
