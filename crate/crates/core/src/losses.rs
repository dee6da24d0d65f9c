//! Training objectives: scale-invariant log loss, closed-form scale/shift
//! alignment, the scale/shift-invariant (SSI) pseudo-label loss, gradient
//! matching in both orders (SSIGM and GMSSI), pairwise ranking, and the
//! lambda-weighted combination used for detail/scale-disentangled transfer.
//!
//! Every loss is built on the autodiff graph so gradients flow through the
//! closed-form alignment; the plain [`lse_align`] entry point backs oracles
//! and evaluation.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::substrate::{fl, Graph, Scalar, Tensor, VarId};

pub const DEFAULT_SILOG_BETA: f64 = 0.15;
pub const DEFAULT_GM_SCALES: usize = 4;
pub const DEFAULT_RANKING_MARGIN: f64 = 0.03;
pub const ALIGN_VAR_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Silog,
    Ssi,
    Ssigm,
    Gmssi,
    Ranking,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Pseudo-label term used by [`dsd_loss`].
    pub kind: LossKind,
    /// Pseudo-label supervision strength; 0 disables the term.
    pub lambda: f64,
    pub silog_beta: f64,
    /// Number of dyadic scales for the gradient-matching term. 1 reproduces
    /// the single-scale definition exactly.
    pub gm_scales: usize,
    pub ranking_pairs: usize,
    pub ranking_margin: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::Ssigm,
            lambda: 1.0,
            silog_beta: DEFAULT_SILOG_BETA,
            gm_scales: DEFAULT_GM_SCALES,
            ranking_pairs: 512,
            ranking_margin: DEFAULT_RANKING_MARGIN,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::config("lambda must be >= 0"));
        }
        if self.gm_scales == 0 {
            return Err(Error::config("gm_scales must be >= 1"));
        }
        if self.ranking_pairs == 0 {
            return Err(Error::config("ranking_pairs must be >= 1"));
        }
        Ok(())
    }
}

/// Closed-form least-squares alignment `d* = s d + t` minimizing the squared
/// residual to `d_hat` over the mask.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineAlignment<T> {
    pub scale: T,
    pub shift: T,
    /// `s * d + t` over the full array (mask ignored for convenience).
    pub aligned: Vec<T>,
}

/// Solve the 2x2 normal equations. Errors when fewer than two pixels are
/// valid or the prediction is constant on the mask (variance below
/// [`ALIGN_VAR_EPS`]); the caller decides the fallback.
pub fn lse_align<T: Scalar>(d: &[T], d_hat: &[T], mask: &[bool]) -> Result<AffineAlignment<T>> {
    if d.len() != d_hat.len() || d.len() != mask.len() {
        return Err(Error::shape(format!(
            "lse_align: {} pred vs {} target vs {} mask",
            d.len(),
            d_hat.len(),
            mask.len()
        )));
    }
    let mut n = 0.0f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for ((&x, &y), &m) in d.iter().zip(d_hat).zip(mask) {
        if !m {
            continue;
        }
        let (x, y) = (x.to_f64().unwrap(), y.to_f64().unwrap());
        n += 1.0;
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    if n < 2.0 {
        return Err(Error::Degenerate("lse_align needs >= 2 valid pixels".into()));
    }
    let det = n * sxx - sx * sx;
    let var = det / (n * n);
    if var <= ALIGN_VAR_EPS {
        return Err(Error::Degenerate(format!(
            "lse_align: prediction variance {var:.3e} is degenerate"
        )));
    }
    let s = (n * sxy - sx * sy) / det;
    let t = (sy - s * sx) / n;
    let aligned = d
        .iter()
        .map(|&x| fl::<T>(s) * x + fl::<T>(t))
        .collect();
    Ok(AffineAlignment {
        scale: fl::<T>(s),
        shift: fl::<T>(t),
        aligned,
    })
}

fn mask_count(mask: &[bool]) -> usize {
    mask.iter().filter(|&&m| m).count()
}

/// In-graph alignment; returns `(s, t, d_star)` with gradients flowing
/// through the closed form. Falls back to `s = 1, t = mean(d_hat - d)` when
/// the prediction is constant on the mask (warned, keeps training finite).
pub fn lse_align_graph<T: Scalar>(
    g: &mut Graph<T>,
    pred: VarId,
    target: &Tensor<T>,
    mask: &Arc<Vec<bool>>,
) -> Result<(VarId, VarId, VarId)> {
    let n = mask_count(mask);
    if n < 2 {
        return Err(Error::Degenerate("lse_align needs >= 2 valid pixels".into()));
    }
    let m = fl::<T>(n as f64);
    let target_var = g.constant(target.clone());

    let sum_x = g.masked_sum(pred, mask.clone())?;
    let xx = g.mul(pred, pred)?;
    let sum_xx = g.masked_sum(xx, mask.clone())?;
    let xy = {
        let prod = g.mul(pred, target_var)?;
        g.masked_sum(prod, mask.clone())?
    };
    let sum_y = g.masked_sum(target_var, mask.clone())?;

    // det = M * sum_xx - sum_x^2, checked on forward values
    let m_sxx = g.mul_const(sum_xx, m);
    let sx_sq = g.mul(sum_x, sum_x)?;
    let det = g.sub(m_sxx, sx_sq)?;
    let var = det.pipe_item(g)? / (n as f64 * n as f64);

    if var <= ALIGN_VAR_EPS {
        log::warn!("lse_align: degenerate prediction variance {var:.3e}; falling back to shift-only alignment");
        let one = g.scalar_const(T::one());
        let diff = g.sub(sum_y, sum_x)?;
        let t = g.mul_const(diff, T::one() / m);
        let scaled = g.scale_by(pred, one)?;
        let aligned = g.shift_by(scaled, t)?;
        return Ok((one, t, aligned));
    }

    let m_sxy = g.mul_const(xy, m);
    let sx_sy = g.mul(sum_x, sum_y)?;
    let num = g.sub(m_sxy, sx_sy)?;
    let s = g.div(num, det)?;
    let s_sx = g.mul(s, sum_x)?;
    let y_minus = g.sub(sum_y, s_sx)?;
    let t = g.mul_const(y_minus, T::one() / m);
    let scaled = g.scale_by(pred, s)?;
    let aligned = g.shift_by(scaled, t)?;
    Ok((s, t, aligned))
}

/// Helper: read a scalar variable's forward value as f64.
trait PipeItem {
    fn pipe_item<T: Scalar>(self, g: &Graph<T>) -> Result<f64>;
}

impl PipeItem for VarId {
    fn pipe_item<T: Scalar>(self, g: &Graph<T>) -> Result<f64> {
        Ok(g.value(self).item()?.to_f64().unwrap())
    }
}

/// Scale-invariant log loss: `100 * sqrt(mean(g^2) - beta * mean(g)^2)`
/// with `g = ln pred - ln gt` over the mask.
pub fn silog_loss<T: Scalar>(
    g: &mut Graph<T>,
    pred: VarId,
    gt: &Tensor<T>,
    mask: &[bool],
    beta: f64,
) -> Result<VarId> {
    let n = mask_count(mask);
    if n < 2 {
        return Err(Error::Degenerate("silog needs >= 2 valid pixels".into()));
    }
    for ((&p, &t), &m) in g
        .value(pred)
        .data()
        .iter()
        .zip(gt.data())
        .zip(mask.iter())
    {
        if m && (p <= T::zero() || t <= T::zero()) {
            return Err(Error::Degenerate(
                "silog needs positive depths on the mask".into(),
            ));
        }
    }
    let mask = Arc::new(mask.to_vec());
    let m = T::one() / fl::<T>(n as f64);
    // replace masked-out entries by 1.0 before the log so no NaN leaks in
    let safe_pred = g.fill_masked(pred, mask.clone(), T::one())?;
    let log_pred = g.ln(safe_pred);
    let safe_gt: Tensor<T> = Tensor::new(
        gt.shape().to_vec(),
        gt.data()
            .iter()
            .zip(mask.iter())
            .map(|(&v, &mk)| if mk { v.ln() } else { T::zero() })
            .collect(),
    )?;
    let log_gt = g.constant(safe_gt);
    let diff = g.sub(log_pred, log_gt)?;
    let sum_g = g.masked_sum(diff, mask.clone())?;
    let sq = g.mul(diff, diff)?;
    let sum_sq = g.masked_sum(sq, mask)?;
    let mean_sq = g.mul_const(sum_sq, m);
    let mean = g.mul_const(sum_g, m);
    let mean2 = g.mul(mean, mean)?;
    let beta_mean2 = g.mul_const(mean2, fl::<T>(beta));
    let inner = g.sub(mean_sq, beta_mean2)?;
    let clamped = g.clamp_min(inner, T::zero());
    let root = g.sqrt(clamped);
    Ok(g.mul_const(root, fl::<T>(100.0)))
}

/// Mean absolute error after scale/shift alignment.
pub fn ssi_loss<T: Scalar>(
    g: &mut Graph<T>,
    pred: VarId,
    pseudo: &Tensor<T>,
    mask: &[bool],
) -> Result<VarId> {
    let mask = Arc::new(mask.to_vec());
    let n = mask_count(&mask);
    let (_, _, aligned) = lse_align_graph(g, pred, pseudo, &mask)?;
    let target = g.constant(pseudo.clone());
    let r = g.sub(aligned, target)?;
    let a = g.abs(r);
    let total = g.masked_sum(a, mask)?;
    Ok(g.mul_const(total, T::one() / fl::<T>(n as f64)))
}

fn subsample_mask(mask: &[bool], h: usize, w: usize) -> (Vec<bool>, usize, usize) {
    let oh = h.div_ceil(2);
    let ow = w.div_ceil(2);
    let mut out = Vec::with_capacity(oh * ow);
    for y in (0..h).step_by(2) {
        for x in (0..w).step_by(2) {
            out.push(mask[y * w + x]);
        }
    }
    (out, oh, ow)
}

/// Mean absolute forward-difference gradient of the aligned residual
/// `R = d* - d_hat`, averaged over `k_scales` dyadic scales. Each scale
/// normalizes the x and y directions by their own valid-pair counts;
/// invalid-neighbor pairs are skipped.
pub fn ssigm_loss<T: Scalar>(
    g: &mut Graph<T>,
    pred: VarId,
    pseudo: &Tensor<T>,
    mask: &[bool],
    k_scales: usize,
) -> Result<VarId> {
    if k_scales == 0 {
        return Err(Error::config("ssigm needs k_scales >= 1"));
    }
    let (_, _, h, w) = g.value(pred).dims4()?;
    let mask_arc = Arc::new(mask.to_vec());
    let (_, _, aligned) = lse_align_graph(g, pred, pseudo, &mask_arc)?;
    let target = g.constant(pseudo.clone());
    let mut r = g.sub(aligned, target)?;

    let mut scale_masks = mask.to_vec();
    let (mut ch, mut cw) = (h, w);
    let mut acc: Option<VarId> = None;
    for k in 0..k_scales {
        if k > 0 {
            if ch < 2 && cw < 2 {
                break;
            }
            r = g.subsample2(r)?;
            let (m2, h2, w2) = subsample_mask(&scale_masks, ch, cw);
            scale_masks = m2;
            ch = h2;
            cw = w2;
        }
        let term = gradient_term(g, r, &scale_masks, ch, cw)?;
        acc = Some(match acc {
            Some(a) => g.add(a, term)?,
            None => term,
        });
    }
    let total = acc.expect("k_scales >= 1");
    Ok(g.mul_const(total, T::one() / fl::<T>(k_scales as f64)))
}

/// `mean(|dx R|) + mean(|dy R|)` over valid forward-difference pairs.
fn gradient_term<T: Scalar>(
    g: &mut Graph<T>,
    r: VarId,
    mask: &[bool],
    h: usize,
    w: usize,
) -> Result<VarId> {
    let mut total: Option<VarId> = None;
    if w >= 2 {
        let mut pair_mask = Vec::with_capacity(h * (w - 1));
        for y in 0..h {
            for x in 0..w - 1 {
                pair_mask.push(mask[y * w + x] && mask[y * w + x + 1]);
            }
        }
        let count = mask_count(&pair_mask);
        if count > 0 {
            let a = g.crop_int(r, 0, 0, h, w - 1)?;
            let b = g.crop_int(r, 0, 1, h, w - 1)?;
            let d = g.sub(b, a)?;
            let ad = g.abs(d);
            let s = g.masked_sum(ad, Arc::new(pair_mask))?;
            let m = g.mul_const(s, T::one() / fl::<T>(count as f64));
            total = Some(m);
        }
    }
    if h >= 2 {
        let mut pair_mask = Vec::with_capacity((h - 1) * w);
        for y in 0..h - 1 {
            for x in 0..w {
                pair_mask.push(mask[y * w + x] && mask[(y + 1) * w + x]);
            }
        }
        let count = mask_count(&pair_mask);
        if count > 0 {
            let a = g.crop_int(r, 0, 0, h - 1, w)?;
            let b = g.crop_int(r, 1, 0, h - 1, w)?;
            let d = g.sub(b, a)?;
            let ad = g.abs(d);
            let s = g.masked_sum(ad, Arc::new(pair_mask))?;
            let m = g.mul_const(s, T::one() / fl::<T>(count as f64));
            total = Some(match total {
                Some(t) => g.add(t, m)?,
                None => m,
            });
        }
    }
    Ok(match total {
        Some(t) => t,
        None => g.scalar_const(T::zero()),
    })
}

/// Reversed order: gradient maps first, then alignment, then MAE.
///
/// The gradient map of a field is `|dx| + |dy|` on the `(H-1) x (W-1)` grid
/// where both forward differences exist.
pub fn gmssi_loss<T: Scalar>(
    g: &mut Graph<T>,
    pred: VarId,
    pseudo: &Tensor<T>,
    mask: &[bool],
) -> Result<VarId> {
    let (_, _, h, w) = g.value(pred).dims4()?;
    if h < 2 || w < 2 {
        return Err(Error::Degenerate("gmssi needs at least a 2x2 map".into()));
    }
    let grad_pred = gradient_map_graph(g, pred, h, w)?;
    let grad_pseudo = gradient_map_tensor(pseudo, h, w)?;
    let mut pair_mask = Vec::with_capacity((h - 1) * (w - 1));
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            pair_mask.push(mask[y * w + x] && mask[y * w + x + 1] && mask[(y + 1) * w + x]);
        }
    }
    let n = mask_count(&pair_mask);
    if n < 2 {
        return Err(Error::Degenerate("gmssi: fewer than 2 valid gradient pixels".into()));
    }
    let mask_arc = Arc::new(pair_mask);
    let (_, _, aligned) = lse_align_graph(g, grad_pred, &grad_pseudo, &mask_arc)?;
    let target = g.constant(grad_pseudo);
    let r = g.sub(aligned, target)?;
    let a = g.abs(r);
    let total = g.masked_sum(a, mask_arc)?;
    Ok(g.mul_const(total, T::one() / fl::<T>(n as f64)))
}

fn gradient_map_graph<T: Scalar>(
    g: &mut Graph<T>,
    x: VarId,
    h: usize,
    w: usize,
) -> Result<VarId> {
    let base = g.crop_int(x, 0, 0, h - 1, w - 1)?;
    let right = g.crop_int(x, 0, 1, h - 1, w - 1)?;
    let down = g.crop_int(x, 1, 0, h - 1, w - 1)?;
    let dx = g.sub(right, base)?;
    let dy = g.sub(down, base)?;
    let adx = g.abs(dx);
    let ady = g.abs(dy);
    g.add(adx, ady)
}

fn gradient_map_tensor<T: Scalar>(t: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let d = t.data();
    let mut out = Vec::with_capacity((h - 1) * (w - 1));
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            let base = d[y * w + x];
            let dx = d[y * w + x + 1] - base;
            let dy = d[(y + 1) * w + x] - base;
            out.push(dx.abs() + dy.abs());
        }
    }
    Tensor::new(vec![1, 1, h - 1, w - 1], out)
}

/// Pairwise ordinal loss on sampled pixel pairs. Pairs whose pseudo-label
/// ratio exceeds `1 + margin` contribute `ln(1 + exp(-sign * (d_i - d_j)))`
/// with the sign following the pseudo ordering; near-equal pairs contribute
/// `(d_i - d_j)^2`. The sample is drawn from `seed` and identical across
/// runs.
pub fn ranking_loss<T: Scalar>(
    g: &mut Graph<T>,
    pred: VarId,
    pseudo: &Tensor<T>,
    mask: &[bool],
    n_pairs: usize,
    margin: f64,
    seed: u64,
) -> Result<VarId> {
    if n_pairs == 0 {
        return Err(Error::config("ranking needs n_pairs >= 1"));
    }
    let valid_idx: Vec<usize> = mask
        .iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect();
    if valid_idx.len() < 2 {
        return Err(Error::Degenerate("ranking needs >= 2 valid pixels".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ii = Vec::with_capacity(n_pairs);
    let mut jj = Vec::with_capacity(n_pairs);
    let mut sign = Vec::with_capacity(n_pairs);
    let mut ordered = Vec::with_capacity(n_pairs);
    let pd = pseudo.data();
    for _ in 0..n_pairs {
        let a = valid_idx[rng.random_range(0..valid_idx.len())];
        let mut b = valid_idx[rng.random_range(0..valid_idx.len())];
        if a == b {
            b = valid_idx[(valid_idx.iter().position(|&v| v == a).unwrap() + 1) % valid_idx.len()];
        }
        ii.push(a);
        jj.push(b);
        let (pa, pb) = (pd[a].to_f64().unwrap(), pd[b].to_f64().unwrap());
        let ratio = (pa / pb).max(pb / pa);
        if ratio > 1.0 + margin {
            ordered.push(T::one());
            sign.push(if pa > pb { -T::one() } else { T::one() });
        } else {
            ordered.push(T::zero());
            sign.push(T::zero());
        }
    }
    let gi = g.gather(pred, Arc::new(ii))?;
    let gj = g.gather(pred, Arc::new(jj))?;
    let diff = g.sub(gi, gj)?;
    let sign_t = g.constant(Tensor::new(vec![n_pairs], sign)?);
    let ordered_t = g.constant(Tensor::new(vec![n_pairs], ordered.clone())?);
    let eq_t = g.constant(Tensor::new(
        vec![n_pairs],
        ordered.iter().map(|&o| T::one() - o).collect(),
    )?);
    let z = g.mul(diff, sign_t)?;
    let sp = g.softplus(z);
    let ord_term = g.mul(sp, ordered_t)?;
    let sq = g.mul(diff, diff)?;
    let eq_term = g.mul(sq, eq_t)?;
    let both = g.add(ord_term, eq_term)?;
    Ok(g.mean(both))
}

/// Detail/scale-disentangling combination: scale-anchored supervision from
/// the (possibly sparse) real ground truth plus `lambda` times the chosen
/// pseudo-label term over the dense pseudo labels.
#[allow(clippy::too_many_arguments)]
pub fn dsd_loss<T: Scalar>(
    g: &mut Graph<T>,
    pred: VarId,
    gt_real: &Tensor<T>,
    gt_mask: &[bool],
    pseudo: &Tensor<T>,
    pseudo_mask: &[bool],
    cfg: &LossConfig,
    seed: u64,
) -> Result<VarId> {
    cfg.validate()?;
    let base = silog_loss(g, pred, gt_real, gt_mask, cfg.silog_beta)?;
    if cfg.lambda == 0.0 {
        return Ok(base);
    }
    let pseudo_term = match cfg.kind {
        LossKind::Ssi => ssi_loss(g, pred, pseudo, pseudo_mask)?,
        LossKind::Ssigm => ssigm_loss(g, pred, pseudo, pseudo_mask, cfg.gm_scales)?,
        LossKind::Gmssi => gmssi_loss(g, pred, pseudo, pseudo_mask)?,
        LossKind::Ranking => ranking_loss(
            g,
            pred,
            pseudo,
            pseudo_mask,
            cfg.ranking_pairs,
            cfg.ranking_margin,
            seed,
        )?,
        LossKind::Silog => {
            return Err(Error::config("silog is the GT term, not a pseudo-label term"))
        }
    };
    let weighted = g.mul_const(pseudo_term, fl::<T>(cfg.lambda));
    g.add(base, weighted)
}
