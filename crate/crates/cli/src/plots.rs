//! PNG rendering for reports: depth maps under a fixed colormap, error
//! maps, and per-metric ablation bar charts.

use std::path::Path;

use tilerefine::dataio::{ReportTable, ReportValue};
use tilerefine::depth::DepthMap;
use tilerefine::error::Result;

/// Fixed colormap: piecewise-linear interpolation through five anchors,
/// near to far = dark blue, cyan, green, yellow, red. Documented here so
/// regression images diff cleanly; invalid pixels render black.
const DEPTH_ANCHORS: [[u8; 3]; 5] = [
    [20, 40, 120],
    [40, 170, 200],
    [60, 180, 75],
    [235, 210, 50],
    [200, 40, 40],
];

fn lerp_color(anchors: &[[u8; 3]], t: f32) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0) * (anchors.len() - 1) as f32;
    let i = (t.floor() as usize).min(anchors.len() - 2);
    let f = t - i as f32;
    let a = anchors[i];
    let b = anchors[i + 1];
    [
        (a[0] as f32 + f * (b[0] as f32 - a[0] as f32)).round() as u8,
        (a[1] as f32 + f * (b[1] as f32 - a[1] as f32)).round() as u8,
        (a[2] as f32 + f * (b[2] as f32 - a[2] as f32)).round() as u8,
    ]
}

pub fn depth_png(map: &DepthMap, d_min: f32, d_max: f32, path: &Path) -> Result<()> {
    let span = (d_max - d_min).max(1e-6);
    let mut img = image::RgbImage::new(map.width() as u32, map.height() as u32);
    for y in 0..map.height() {
        for x in 0..map.width() {
            let px = if map.is_valid(y, x) {
                lerp_color(&DEPTH_ANCHORS, (map.at(y, x) - d_min) / span)
            } else {
                [0, 0, 0]
            };
            img.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    img.save(path)?;
    Ok(())
}

/// Absolute error, white (0) to red (the 99th-percentile error), so a
/// zero-error map renders uniformly white.
pub fn error_png(pred: &DepthMap, gt: &DepthMap, path: &Path) -> Result<()> {
    let mut errs: Vec<f32> = pred
        .values()
        .iter()
        .zip(gt.values())
        .zip(pred.valid().iter().zip(gt.valid()))
        .map(|((&p, &g), (&vp, &vg))| if vp && vg { (p - g).abs() } else { 0.0 })
        .collect();
    let mut sorted = errs.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let hi = sorted[((sorted.len() - 1) as f32 * 0.99) as usize].max(1e-6);
    let mut img = image::RgbImage::new(pred.width() as u32, pred.height() as u32);
    for y in 0..pred.height() {
        for x in 0..pred.width() {
            let t = (errs[y * pred.width() + x] / hi).clamp(0.0, 1.0);
            let c = [255, (255.0 * (1.0 - t)) as u8, (255.0 * (1.0 - t)) as u8];
            img.put_pixel(x as u32, y as u32, image::Rgb(c));
        }
    }
    img.save(path)?;
    errs.clear();
    Ok(())
}

/// One bar chart PNG per numeric column of the table, bars in row order.
/// Missing (non-numeric) cells are skipped with a warning.
pub fn ablation_bars(table: &ReportTable, out_dir: &Path) -> Result<()> {
    let label_col = table.column_index("label");
    for (ci, column) in table.columns.iter().enumerate() {
        let values: Vec<(usize, f64)> = table
            .rows
            .iter()
            .enumerate()
            .filter_map(|(ri, row)| match &row[ci] {
                ReportValue::Num(v) if v.is_finite() => Some((ri, *v)),
                _ => None,
            })
            .collect();
        if values.is_empty() || values.len() < table.rows.len() {
            if !values.is_empty() {
                log::warn!("column {column}: some rows missing, chart skipped");
            }
            continue;
        }
        if label_col == Some(ci) {
            continue;
        }
        let path = out_dir.join(format!("bars_{column}.png"));
        bar_chart(&values.iter().map(|(_, v)| *v).collect::<Vec<_>>(), &path)?;
    }
    Ok(())
}

fn bar_chart(values: &[f64], path: &Path) -> Result<()> {
    let (w, h) = (80 * values.len().max(1) as u32 + 20, 240u32);
    let mut img = image::RgbImage::from_pixel(w, h, image::Rgb([255, 255, 255]));
    let max = values.iter().cloned().fold(f64::MIN, f64::max).max(1e-9);
    let min = values.iter().cloned().fold(f64::MAX, f64::min).min(0.0);
    let span = (max - min).max(1e-9);
    for (i, &v) in values.iter().enumerate() {
        let x0 = 10 + i as u32 * 80;
        let bar_h = (((v - min) / span) * 200.0) as u32;
        let color = DEPTH_ANCHORS[i % DEPTH_ANCHORS.len()];
        for x in x0..x0 + 60 {
            for y in (220 - bar_h)..220 {
                img.put_pixel(x, y, image::Rgb(color));
            }
        }
    }
    // baseline
    for x in 0..w {
        img.put_pixel(x, 220, image::Rgb([0, 0, 0]));
    }
    img.save(path)?;
    Ok(())
}
