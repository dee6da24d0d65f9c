//! Evaluation protocol: scale metrics, soft edge error, depth-edge
//! extraction, and chamfer-style boundary metrics.

use serde::{Deserialize, Serialize};

use crate::depth::DepthMap;
use crate::error::{Error, Result};

pub const DEFAULT_EDGE_TAU: f32 = 0.05;
pub const DEFAULT_BOUNDARY_THETA: f64 = 3.0;
pub const DEFAULT_SEE_WINDOW: usize = 1;
pub const SILOG_BETA: f64 = 0.15;

/// Scale accuracy over valid pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleReport {
    /// Percent of pixels with max(p/g, g/p) < 1.25.
    pub delta1: f64,
    /// Mean absolute relative error.
    pub rel: f64,
    /// Root mean squared error in meters.
    pub rms: f64,
    /// 100 * sqrt(mean(g^2) - beta * mean(g)^2), g = ln p - ln g.
    pub silog: f64,
}

/// Boundary quality via chamfer distances between edge maps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    /// Mean distance from predicted edge pixels to the nearest GT edge (px).
    pub edge_acc: f64,
    /// Mean distance from GT edge pixels to the nearest predicted edge (px).
    pub edge_comp: f64,
    /// Harmonic mean of precision/recall at distance <= theta, in percent.
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    /// Set when an empty edge map forced the convention values.
    pub pred_edges_empty: bool,
    pub gt_edges_empty: bool,
}

/// Binary mask of depth-discontinuity pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap {
    pub height: usize,
    pub width: usize,
    pub mask: Vec<bool>,
    pub tau: f32,
}

impl EdgeMap {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_edge(&self, y: usize, x: usize) -> bool {
        self.mask[y * self.width + x]
    }
}

/// The silog formula shared by the training loss and the metric column.
pub fn silog_value(pred: &[f32], gt: &[f32], mask: &[bool], beta: f64) -> Result<f64> {
    let mut sum = 0.0f64;
    let mut sum_sq = 0.0f64;
    let mut n = 0usize;
    for ((&p, &g), &m) in pred.iter().zip(gt).zip(mask) {
        if !m {
            continue;
        }
        if p <= 0.0 || g <= 0.0 {
            return Err(Error::Degenerate(format!(
                "silog needs positive depths on the mask, got p={p}, g={g}"
            )));
        }
        let d = (p as f64).ln() - (g as f64).ln();
        sum += d;
        sum_sq += d * d;
        n += 1;
    }
    if n < 2 {
        return Err(Error::Degenerate("silog needs at least 2 valid pixels".into()));
    }
    let mean_sq = sum_sq / n as f64;
    let mean = sum / n as f64;
    Ok(100.0 * (mean_sq - beta * mean * mean).max(0.0).sqrt())
}

pub fn scale_metrics(pred: &[f32], gt: &[f32], mask: &[bool]) -> Result<ScaleReport> {
    if pred.len() != gt.len() || pred.len() != mask.len() {
        return Err(Error::shape(format!(
            "scale_metrics: {} pred vs {} gt vs {} mask",
            pred.len(),
            gt.len(),
            mask.len()
        )));
    }
    let mut n = 0usize;
    let mut hits = 0usize;
    let mut rel = 0.0f64;
    let mut sq = 0.0f64;
    for ((&p, &g), &m) in pred.iter().zip(gt).zip(mask) {
        if !m {
            continue;
        }
        if p <= 0.0 || g <= 0.0 {
            return Err(Error::Degenerate(format!(
                "scale_metrics needs positive depths on the mask, got p={p}, g={g}"
            )));
        }
        let (p, g) = (p as f64, g as f64);
        if (p / g).max(g / p) < 1.25 {
            hits += 1;
        }
        rel += (p - g).abs() / g;
        sq += (p - g) * (p - g);
        n += 1;
    }
    if n == 0 {
        return Err(Error::Degenerate("scale_metrics: empty mask".into()));
    }
    Ok(ScaleReport {
        delta1: 100.0 * hits as f64 / n as f64,
        rel: rel / n as f64,
        rms: (sq / n as f64).sqrt(),
        silog: silog_value(pred, gt, mask, SILOG_BETA)?,
    })
}

/// Convenience wrapper using the joint validity mask of both maps.
pub fn scale_metrics_depth(pred: &DepthMap, gt: &DepthMap) -> Result<ScaleReport> {
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(Error::shape("scale_metrics: size mismatch"));
    }
    let mask: Vec<bool> = pred
        .valid()
        .iter()
        .zip(gt.valid())
        .map(|(&a, &b)| a && b)
        .collect();
    scale_metrics(pred.values(), gt.values(), &mask)
}

/// Mark occlusion boundaries: a valid pixel is an edge iff some valid
/// 4-neighbor is deeper by more than a relative factor `tau`, i.e.
/// `(d_n - d_p) / d_p > tau`. Marking only the near side keeps a clean step
/// one pixel wide.
pub fn extract_edges(depth: &DepthMap, tau: f32) -> Result<EdgeMap> {
    if tau <= 0.0 {
        return Err(Error::config("edge tau must be > 0"));
    }
    let (h, w) = (depth.height(), depth.width());
    let mut mask = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            if !depth.is_valid(y, x) {
                continue;
            }
            let d = depth.at(y, x);
            if d <= 0.0 {
                continue;
            }
            let mut edge = false;
            let mut check = |ny: usize, nx: usize| {
                if depth.is_valid(ny, nx) {
                    let dn = depth.at(ny, nx);
                    if (dn - d) / d > tau {
                        edge = true;
                    }
                }
            };
            if y > 0 {
                check(y - 1, x);
            }
            if y + 1 < h {
                check(y + 1, x);
            }
            if x > 0 {
                check(y, x - 1);
            }
            if x + 1 < w {
                check(y, x + 1);
            }
            mask[y * w + x] = edge;
        }
    }
    Ok(EdgeMap {
        height: h,
        width: w,
        mask,
        tau,
    })
}

const FAR: f64 = 1e20;

/// One-dimensional squared distance transform (lower envelope of parabolas).
fn dt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        loop {
            let vk = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[vk] + (vk * vk) as f64))
                / (2.0 * q as f64 - 2.0 * vk as f64);
            if s <= z[k] {
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let dq = q as f64 - v[k] as f64;
        d[q] = dq * dq + f[v[k]];
    }
}

/// Exact Euclidean distance transform: two passes of the 1-D transform
/// (columns then rows) over squared distances.
pub fn distance_transform(mask: &[bool], height: usize, width: usize) -> Vec<f64> {
    let mut grid: Vec<f64> = mask.iter().map(|&m| if m { 0.0 } else { FAR }).collect();
    let side = height.max(width);
    let mut f = vec![0.0f64; side];
    let mut d = vec![0.0f64; side];
    let mut v = vec![0usize; side];
    let mut z = vec![0.0f64; side + 1];

    for x in 0..width {
        for y in 0..height {
            f[y] = grid[y * width + x];
        }
        dt_1d(&f[..height], &mut d[..height], &mut v, &mut z);
        for y in 0..height {
            grid[y * width + x] = d[y];
        }
    }
    for y in 0..height {
        f[..width].copy_from_slice(&grid[y * width..(y + 1) * width]);
        dt_1d(&f[..width], &mut d[..width], &mut v, &mut z);
        grid[y * width..(y + 1) * width].copy_from_slice(&d[..width]);
    }
    grid.iter().map(|&sq| sq.min(FAR).sqrt()).collect()
}

/// Chamfer boundary metrics at distance tolerance `theta` (px).
///
/// Empty-edge conventions keep the report sortable: if the predicted edge
/// map is empty (and GT is not), `edge_acc` is 0 with the flag set,
/// `edge_comp` is capped at the image diagonal, and f1 is 0. Symmetric for
/// an empty GT map; two empty maps score a perfect f1.
pub fn boundary_metrics(
    pred_edges: &EdgeMap,
    gt_edges: &EdgeMap,
    theta: f64,
) -> Result<BoundaryReport> {
    if pred_edges.height != gt_edges.height || pred_edges.width != gt_edges.width {
        return Err(Error::shape("boundary_metrics: canvas size mismatch"));
    }
    let (h, w) = (pred_edges.height, pred_edges.width);
    let diag = ((h * h + w * w) as f64).sqrt();
    let n_pred = pred_edges.count();
    let n_gt = gt_edges.count();

    if n_pred == 0 && n_gt == 0 {
        return Ok(BoundaryReport {
            edge_acc: 0.0,
            edge_comp: 0.0,
            f1: 100.0,
            precision: 100.0,
            recall: 100.0,
            pred_edges_empty: true,
            gt_edges_empty: true,
        });
    }
    if n_pred == 0 {
        return Ok(BoundaryReport {
            edge_acc: 0.0,
            edge_comp: diag,
            f1: 0.0,
            precision: 0.0,
            recall: 0.0,
            pred_edges_empty: true,
            gt_edges_empty: false,
        });
    }
    if n_gt == 0 {
        return Ok(BoundaryReport {
            edge_acc: diag,
            edge_comp: 0.0,
            f1: 0.0,
            precision: 0.0,
            recall: 0.0,
            pred_edges_empty: false,
            gt_edges_empty: true,
        });
    }

    let dist_to_gt = distance_transform(&gt_edges.mask, h, w);
    let dist_to_pred = distance_transform(&pred_edges.mask, h, w);

    let mut acc = 0.0f64;
    let mut within_pred = 0usize;
    for (i, &m) in pred_edges.mask.iter().enumerate() {
        if m {
            acc += dist_to_gt[i];
            if dist_to_gt[i] <= theta {
                within_pred += 1;
            }
        }
    }
    let mut comp = 0.0f64;
    let mut within_gt = 0usize;
    for (i, &m) in gt_edges.mask.iter().enumerate() {
        if m {
            comp += dist_to_pred[i];
            if dist_to_pred[i] <= theta {
                within_gt += 1;
            }
        }
    }
    let precision = within_pred as f64 / n_pred as f64;
    let recall = within_gt as f64 / n_gt as f64;
    let f1 = if precision + recall > 0.0 {
        100.0 * 2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(BoundaryReport {
        edge_acc: acc / n_pred as f64,
        edge_comp: comp / n_gt as f64,
        f1,
        precision: 100.0 * precision,
        recall: 100.0 * recall,
        pred_edges_empty: false,
        gt_edges_empty: false,
    })
}

/// Shift-tolerant absolute error at GT depth edges: for every GT edge pixel,
/// the smallest |pred - gt| over prediction shifts of up to `window` pixels,
/// averaged. No GT edges is defined as 0 (with a warning).
pub fn soft_edge_error(pred: &DepthMap, gt: &DepthMap, window: usize, tau: f32) -> Result<f64> {
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(Error::shape("soft_edge_error: size mismatch"));
    }
    let edges = extract_edges(gt, tau)?;
    let (h, w) = (gt.height(), gt.width());
    let mut total = 0.0f64;
    let mut n = 0usize;
    let wi = window as isize;
    for y in 0..h {
        for x in 0..w {
            if !edges.is_edge(y, x) {
                continue;
            }
            let g = gt.at(y, x);
            let mut best = f64::INFINITY;
            for dy in -wi..=wi {
                for dx in -wi..=wi {
                    let ny = y as isize + dy;
                    let nx = x as isize + dx;
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let (ny, nx) = (ny as usize, nx as usize);
                    if !pred.is_valid(ny, nx) {
                        continue;
                    }
                    let e = (pred.at(ny, nx) - g).abs() as f64;
                    if e < best {
                        best = e;
                    }
                }
            }
            if best.is_finite() {
                total += best;
                n += 1;
            }
        }
    }
    if n == 0 {
        log::warn!("soft_edge_error: no GT edges; defined as 0");
        return Ok(0.0);
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_depth(h: usize, w: usize) -> DepthMap {
        let mut vals = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                vals.push(2.0 + 0.01 * (y * w + x) as f32);
            }
        }
        DepthMap::dense(h, w, vals).unwrap()
    }

    /// Vertical step: left half `near`, right half `far`.
    fn step_depth(h: usize, w: usize, near: f32, far: f32) -> DepthMap {
        let mut vals = Vec::with_capacity(h * w);
        for _ in 0..h {
            for x in 0..w {
                vals.push(if x < w / 2 { near } else { far });
            }
        }
        DepthMap::dense(h, w, vals).unwrap()
    }

    #[test]
    fn perfect_prediction_scores_perfectly() {
        let gt = ramp_depth(6, 8);
        let r = scale_metrics_depth(&gt, &gt).unwrap();
        assert_eq!(r.delta1, 100.0);
        assert_eq!(r.rel, 0.0);
        assert_eq!(r.rms, 0.0);
        assert!(r.silog.abs() < 1e-9);
    }

    #[test]
    fn uniform_scale_miss() {
        let gt = ramp_depth(6, 8);
        let pred = DepthMap::dense(6, 8, gt.values().iter().map(|v| v * 1.3).collect()).unwrap();
        let r = scale_metrics_depth(&pred, &gt).unwrap();
        assert_eq!(r.delta1, 0.0);
        assert!((r.rel - 0.3).abs() < 1e-6);
    }

    #[test]
    fn scale_metrics_match_direct_formula_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 64;
        let gt: Vec<f32> = (0..n).map(|_| rng.random_range(1.0..10.0)).collect();
        let pred: Vec<f32> = gt.iter().map(|g| g * rng.random_range(0.7..1.4)).collect();
        let mask = vec![true; n];
        let r = scale_metrics(&pred, &gt, &mask).unwrap();

        // independent f64 recomputation
        let mut hits = 0;
        let mut rel = 0.0;
        let mut sq = 0.0;
        let mut s = 0.0;
        let mut ss = 0.0;
        for i in 0..n {
            let (p, g) = (pred[i] as f64, gt[i] as f64);
            if (p / g).max(g / p) < 1.25 {
                hits += 1;
            }
            rel += (p - g).abs() / g;
            sq += (p - g) * (p - g);
            let d = p.ln() - g.ln();
            s += d;
            ss += d * d;
        }
        let nf = n as f64;
        assert!((r.delta1 - 100.0 * hits as f64 / nf).abs() < 1e-6);
        assert!((r.rel - rel / nf).abs() < 1e-6);
        assert!((r.rms - (sq / nf).sqrt()).abs() < 1e-6);
        let silog = 100.0 * (ss / nf - 0.15 * (s / nf) * (s / nf)).sqrt();
        assert!((r.silog - silog).abs() < 1e-6);
    }

    #[test]
    fn metrics_ignore_masked_pixels() {
        let gt = ramp_depth(4, 4);
        let mut pred = gt.clone();
        // wreck one pixel and mask it out
        pred.values_mut()[5] = 99.0;
        let mut mask = vec![true; 16];
        mask[5] = false;
        let r = scale_metrics(pred.values(), gt.values(), &mask).unwrap();
        assert_eq!(r.rms, 0.0);
    }

    #[test]
    fn empty_mask_is_error() {
        let gt = ramp_depth(2, 2);
        assert!(scale_metrics(gt.values(), gt.values(), &[false; 4]).is_err());
    }

    #[test]
    fn constant_depth_has_no_edges() {
        let d = DepthMap::filled(8, 8, 5.0);
        assert_eq!(extract_edges(&d, 0.05).unwrap().count(), 0);
    }

    #[test]
    fn double_step_gives_one_pixel_wide_line() {
        let d = step_depth(6, 10, 2.0, 4.0);
        let e = extract_edges(&d, 0.05).unwrap();
        // only the near-side column x = w/2 - 1 is marked
        for y in 0..6 {
            for x in 0..10 {
                assert_eq!(e.is_edge(y, x), x == 4, "({y},{x})");
            }
        }
    }

    #[test]
    fn edges_are_subset_of_valid() {
        let mut d = step_depth(6, 10, 2.0, 4.0);
        for y in 0..6 {
            d.valid_mut()[y * 10 + 4] = false;
        }
        let e = extract_edges(&d, 0.05).unwrap();
        for (i, &m) in e.mask.iter().enumerate() {
            if m {
                assert!(d.valid()[i]);
            }
        }
    }

    #[test]
    fn distance_transform_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (h, w) = (13, 17);
        let mask: Vec<bool> = (0..h * w).map(|_| rng.random_bool(0.08)).collect();
        assert!(mask.iter().any(|&m| m));
        let dt = distance_transform(&mask, h, w);
        for y in 0..h {
            for x in 0..w {
                let mut best = f64::INFINITY;
                for yy in 0..h {
                    for xx in 0..w {
                        if mask[yy * w + xx] {
                            let dy = y as f64 - yy as f64;
                            let dx = x as f64 - xx as f64;
                            best = best.min((dy * dy + dx * dx).sqrt());
                        }
                    }
                }
                assert!(
                    (dt[y * w + x] - best).abs() < 1e-9,
                    "({y},{x}): {} vs {}",
                    dt[y * w + x],
                    best
                );
            }
        }
    }

    #[test]
    fn identical_edge_maps_score_perfectly() {
        let d = step_depth(8, 12, 2.0, 5.0);
        let e = extract_edges(&d, 0.05).unwrap();
        assert!(e.count() > 0);
        let r = boundary_metrics(&e, &e, 3.0).unwrap();
        assert_eq!(r.edge_acc, 0.0);
        assert_eq!(r.edge_comp, 0.0);
        assert_eq!(r.f1, 100.0);
    }

    #[test]
    fn parallel_lines_distance_k() {
        // vertical edge lines k pixels apart
        let (h, w) = (8, 16);
        let k = 3usize;
        let mut a = vec![false; h * w];
        let mut b = vec![false; h * w];
        for y in 0..h {
            a[y * w + 5] = true;
            b[y * w + 5 + k] = true;
        }
        let ea = EdgeMap {
            height: h,
            width: w,
            mask: a,
            tau: 0.05,
        };
        let eb = EdgeMap {
            height: h,
            width: w,
            mask: b,
            tau: 0.05,
        };
        let r = boundary_metrics(&ea, &eb, 3.0).unwrap();
        assert!((r.edge_acc - k as f64).abs() < 1e-9);
        assert!((r.edge_comp - k as f64).abs() < 1e-9);
        assert_eq!(r.f1, 100.0); // k <= theta

        let r = boundary_metrics(&ea, &eb, 2.0).unwrap();
        assert_eq!(r.f1, 0.0); // k > theta
    }

    #[test]
    fn empty_edge_conventions() {
        let d = step_depth(8, 12, 2.0, 5.0);
        let gt = extract_edges(&d, 0.05).unwrap();
        let empty = EdgeMap {
            height: 8,
            width: 12,
            mask: vec![false; 96],
            tau: 0.05,
        };
        let r = boundary_metrics(&empty, &gt, 3.0).unwrap();
        assert!(r.pred_edges_empty);
        assert_eq!(r.edge_acc, 0.0);
        assert_eq!(r.f1, 0.0);
        let diag = (64.0f64 + 144.0).sqrt();
        assert!((r.edge_comp - diag).abs() < 1e-9);

        let r = boundary_metrics(&gt, &empty, 3.0).unwrap();
        assert!(r.gt_edges_empty);
        assert_eq!(r.edge_comp, 0.0);
        assert_eq!(r.f1, 0.0);

        let r = boundary_metrics(&empty, &empty, 3.0).unwrap();
        assert_eq!(r.f1, 100.0);
    }

    #[test]
    fn swapping_maps_swaps_acc_and_comp() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (h, w) = (10, 14);
        let a: Vec<bool> = (0..h * w).map(|_| rng.random_bool(0.1)).collect();
        let b: Vec<bool> = (0..h * w).map(|_| rng.random_bool(0.1)).collect();
        let ea = EdgeMap {
            height: h,
            width: w,
            mask: a,
            tau: 0.05,
        };
        let eb = EdgeMap {
            height: h,
            width: w,
            mask: b,
            tau: 0.05,
        };
        let r1 = boundary_metrics(&ea, &eb, 3.0).unwrap();
        let r2 = boundary_metrics(&eb, &ea, 3.0).unwrap();
        assert_eq!(r1.edge_acc, r2.edge_comp);
        assert_eq!(r1.edge_comp, r2.edge_acc);
        assert!((r1.f1 - r2.f1).abs() < 1e-9);
    }

    #[test]
    fn f1_monotone_in_theta() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let (h, w) = (12, 12);
        let a: Vec<bool> = (0..h * w).map(|_| rng.random_bool(0.1)).collect();
        let b: Vec<bool> = (0..h * w).map(|_| rng.random_bool(0.1)).collect();
        let ea = EdgeMap {
            height: h,
            width: w,
            mask: a,
            tau: 0.05,
        };
        let eb = EdgeMap {
            height: h,
            width: w,
            mask: b,
            tau: 0.05,
        };
        let mut last = -1.0f64;
        for theta in [0.0, 1.0, 2.0, 4.0, 8.0, 16.0] {
            let r = boundary_metrics(&ea, &eb, theta).unwrap();
            assert!(r.f1 >= last - 1e-12, "theta {theta}");
            last = r.f1;
        }
    }

    #[test]
    fn see_zero_for_perfect_prediction() {
        let d = step_depth(8, 12, 2.0, 5.0);
        assert_eq!(soft_edge_error(&d, &d, 1, 0.05).unwrap(), 0.0);
    }

    #[test]
    fn see_absorbs_one_pixel_shift() {
        // Prediction is GT with the step moved one column toward the near
        // side; window 1 absorbs the shift.
        let gt = step_depth(8, 12, 2.0, 5.0);
        let mut pred_vals = vec![0.0f32; 8 * 12];
        for y in 0..8 {
            for x in 0usize..12 {
                let sx = (x + 1).min(11);
                pred_vals[y * 12 + x] = gt.at(y, sx);
            }
        }
        let pred = DepthMap::dense(8, 12, pred_vals).unwrap();
        assert_eq!(soft_edge_error(&pred, &gt, 1, 0.05).unwrap(), 0.0);
    }

    #[test]
    fn see_three_pixel_shift_exceeds_window() {
        let gt = step_depth(8, 16, 2.0, 5.0);
        let mut pred_vals = vec![0.0f32; 8 * 16];
        for y in 0..8 {
            for x in 0usize..16 {
                let sx = (x + 3).min(15);
                pred_vals[y * 16 + x] = gt.at(y, sx);
            }
        }
        let pred = DepthMap::dense(8, 16, pred_vals).unwrap();
        let see = soft_edge_error(&pred, &gt, 1, 0.05).unwrap();
        // within +/-1 px of the GT edge column the shifted prediction is
        // still on the near side, so the best error equals the full step
        assert!((see - 3.0).abs() < 1e-6, "see = {see}");
    }

    #[test]
    fn no_gt_edges_defined_zero() {
        let d = DepthMap::filled(6, 6, 4.0);
        assert_eq!(soft_edge_error(&d, &d, 1, 0.05).unwrap(), 0.0);
    }

    #[test]
    fn blurring_an_edge_hurts_see_and_f1() {
        // Family of widening ramps across the step: wider transition ->
        // strictly larger SEE, strictly lower f1 against the sharp GT.
        let (h, w) = (16, 32);
        let gt = step_depth(h, w, 2.0, 6.0);
        let gt_edges = extract_edges(&gt, 0.05).unwrap();
        let mut last_see = -1.0;
        let mut last_f1 = f64::INFINITY;
        for ramp in [0usize, 8, 14] {
            let mut vals = vec![0.0f32; h * w];
            for y in 0..h {
                for x in 0..w {
                    let v = if ramp == 0 {
                        gt.at(y, x)
                    } else {
                        let t = ((x as f32 - (w / 2 - 1) as f32) / ramp as f32 + 0.5)
                            .clamp(0.0, 1.0);
                        2.0 + 4.0 * t
                    };
                    vals[y * w + x] = v;
                }
            }
            let pred = DepthMap::dense(h, w, vals).unwrap();
            let see = soft_edge_error(&pred, &gt, 1, 0.05).unwrap();
            let pe = extract_edges(&pred, 0.05).unwrap();
            let f1 = boundary_metrics(&pe, &gt_edges, 3.0).unwrap().f1;
            assert!(see > last_see, "ramp {ramp}: see {see} vs {last_see}");
            assert!(f1 < last_f1, "ramp {ramp}: f1 {f1} vs {last_f1}");
            last_see = see;
            last_f1 = f1;
        }
    }
}
