//! Patch geometry over the full-resolution canvas: tile layouts, roi
//! extraction from coarse-frame maps, residual composition, and multi-layout
//! fused inference.

use crate::depth::DepthMap;
use crate::error::{Error, Result};
use crate::substrate::{sample_box, SampleBox, Tensor};

/// Integer patch window on the canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Grid of patch boxes covering a canvas, optionally shifted.
///
/// The base layout (zero offset) tiles the canvas exactly. Shifted layouts
/// move every box by the offset and clamp at the borders, so boxes stay
/// inside the canvas but no longer cover it completely on their own.
#[derive(Debug, Clone, PartialEq)]
pub struct TileLayout {
    pub canvas_height: usize,
    pub canvas_width: usize,
    pub rows: usize,
    pub cols: usize,
    pub offset: (isize, isize),
    boxes: Vec<PatchBox>,
}

impl TileLayout {
    pub fn patch_count(&self) -> usize {
        self.boxes.len()
    }

    pub fn boxes(&self) -> &[PatchBox] {
        &self.boxes
    }

    pub fn patch_height(&self) -> usize {
        self.canvas_height / self.rows
    }

    pub fn patch_width(&self) -> usize {
        self.canvas_width / self.cols
    }
}

/// Build a `rows x cols` layout over an `H x W` canvas.
///
/// The canvas must divide evenly; desk-scale sizes are chosen divisible.
/// `offset` shifts every box by `(dy, dx)` with border clamping; its
/// magnitude must stay below the patch size.
pub fn make_tile_layout(
    height: usize,
    width: usize,
    rows: usize,
    cols: usize,
    offset: (isize, isize),
) -> Result<TileLayout> {
    if rows == 0 || cols == 0 {
        return Err(Error::config("tile layout needs rows, cols >= 1"));
    }
    if height % rows != 0 || width % cols != 0 {
        return Err(Error::config(format!(
            "canvas {height}x{width} not divisible by grid {rows}x{cols}"
        )));
    }
    let ph = height / rows;
    let pw = width / cols;
    let (dy, dx) = offset;
    if dy.unsigned_abs() >= ph || dx.unsigned_abs() >= pw {
        return Err(Error::config(format!(
            "offset ({dy},{dx}) must be smaller than the patch size {ph}x{pw}"
        )));
    }
    let mut boxes = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let top = ((r * ph) as isize + dy).clamp(0, (height - ph) as isize) as usize;
            let left = ((c * pw) as isize + dx).clamp(0, (width - pw) as isize) as usize;
            boxes.push(PatchBox {
                top,
                left,
                height: ph,
                width: pw,
            });
        }
    }
    Ok(TileLayout {
        canvas_height: height,
        canvas_width: width,
        rows,
        cols,
        offset,
        boxes,
    })
}

/// Normalized roi coordinates of a patch within a frame, in the global
/// corner-aligned convention: sampling a source of the same resolution with
/// this box reproduces the patch pixels exactly.
pub fn roi_box(patch: &PatchBox, canvas_height: usize, canvas_width: usize) -> Result<SampleBox> {
    if canvas_height < 2 || canvas_width < 2 {
        return Err(Error::config("canvas too small for roi normalization"));
    }
    if patch.top + patch.height > canvas_height || patch.left + patch.width > canvas_width {
        return Err(Error::config(format!(
            "patch {patch:?} outside canvas {canvas_height}x{canvas_width}"
        )));
    }
    Ok(SampleBox {
        top: patch.top as f64 / (canvas_height - 1) as f64,
        left: patch.left as f64 / (canvas_width - 1) as f64,
        height: (patch.height - 1) as f64 / (canvas_height - 1) as f64,
        width: (patch.width - 1) as f64 / (canvas_width - 1) as f64,
    })
}

/// Bilinear extraction of a normalized box from a map or feature level.
pub fn roi_crop(
    source: &Tensor<f32>,
    bx: &SampleBox,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<f32>> {
    sample_box(source, bx, out_h, out_w)
}

/// Crop a roi from a depth map and resample to `out_h x out_w`.
pub fn roi_crop_depth(
    source: &DepthMap,
    bx: &SampleBox,
    out_h: usize,
    out_w: usize,
) -> Result<DepthMap> {
    let t = sample_box(&source.to_tensor(), bx, out_h, out_w)?;
    DepthMap::from_tensor(&t)
}

/// Patch-wise composition: `roi(coarse) + residual`, clamped to stay
/// positive. `floor` is the post-composition clamp (d_min / 100 by
/// convention) that keeps later logs finite.
pub fn compose_patch(
    coarse: &DepthMap,
    bx: &SampleBox,
    residual: &DepthMap,
    floor: f32,
) -> Result<DepthMap> {
    let base = roi_crop_depth(coarse, bx, residual.height(), residual.width())?;
    let values = base
        .values()
        .iter()
        .zip(residual.values())
        .map(|(&c, &r)| (c + r).max(floor))
        .collect();
    DepthMap::dense(residual.height(), residual.width(), values)
}

/// Per-pixel mean over every patch prediction that covers the pixel, across
/// all layouts. Patches are accumulated in layout order then box order, so
/// the reduction is deterministic.
///
/// Errors if any canvas pixel is covered by no prediction.
pub fn fuse_layouts(
    canvas_height: usize,
    canvas_width: usize,
    predictions: &[(&TileLayout, &[DepthMap])],
) -> Result<(DepthMap, Vec<u32>)> {
    if predictions.is_empty() {
        return Err(Error::config("fuse_layouts: no layouts"));
    }
    let mut sum = vec![0.0f32; canvas_height * canvas_width];
    let mut count = vec![0u32; canvas_height * canvas_width];
    for (layout, patches) in predictions {
        if layout.canvas_height != canvas_height || layout.canvas_width != canvas_width {
            return Err(Error::shape(format!(
                "layout canvas {}x{} vs fuse target {canvas_height}x{canvas_width}",
                layout.canvas_height, layout.canvas_width
            )));
        }
        if patches.len() != layout.patch_count() {
            return Err(Error::shape(format!(
                "{} patch predictions for {} boxes",
                patches.len(),
                layout.patch_count()
            )));
        }
        for (pb, patch) in layout.boxes().iter().zip(*patches) {
            if patch.height() != pb.height || patch.width() != pb.width {
                return Err(Error::shape(format!(
                    "patch prediction {}x{} vs box {}x{}",
                    patch.height(),
                    patch.width(),
                    pb.height,
                    pb.width
                )));
            }
            for y in 0..pb.height {
                let canvas_base = (pb.top + y) * canvas_width + pb.left;
                let patch_base = y * pb.width;
                for x in 0..pb.width {
                    sum[canvas_base + x] += patch.values()[patch_base + x];
                    count[canvas_base + x] += 1;
                }
            }
        }
    }
    if let Some(i) = count.iter().position(|&c| c == 0) {
        return Err(Error::Runtime(format!(
            "fuse_layouts: pixel ({}, {}) not covered by any patch",
            i / canvas_width,
            i % canvas_width
        )));
    }
    let values = sum
        .iter()
        .zip(&count)
        .map(|(&s, &c)| s / c as f32)
        .collect();
    Ok((DepthMap::dense(canvas_height, canvas_width, values)?, count))
}

/// The fixed consistency-aware inference scheme: the base grid plus two
/// half-patch-shifted grids (vertical and horizontal), averaged in overlaps.
pub fn consistency_layouts(
    height: usize,
    width: usize,
    rows: usize,
    cols: usize,
) -> Result<Vec<TileLayout>> {
    let base = make_tile_layout(height, width, rows, cols, (0, 0))?;
    let half_v = (base.patch_height() / 2) as isize;
    let half_h = (base.patch_width() / 2) as isize;
    Ok(vec![
        base,
        make_tile_layout(height, width, rows, cols, (half_v, 0))?,
        make_tile_layout(height, width, rows, cols, (0, half_h))?,
    ])
}
