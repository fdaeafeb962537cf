//! Center-heatmap detection head: forward maps, target rendering,
//! forward-only losses, and decoding with IoU-aware score rectification.
//!
//! Six parallel heads share the backbone features: a per-class center
//! heatmap, a 2D cell-offset refinement, height above ground, log-space 3D
//! size, yaw as (sin, cos), and a box-quality (IoU) estimate. Decoding picks
//! 3x3-neighborhood peaks of the sigmoided heatmap, reads the regressions at
//! each peak, and blends heatmap confidence with the quality estimate as
//! `p^(1-beta) * u^beta` before thresholding and rotated NMS.

use crate::geom::{Box7, Detection};
use crate::nn::{self, Tensor4, WeightSpec, WeightStore};
use crate::pillar::GridConfig;
use crate::scene::Scene;
use crate::{Error, Result, NUM_CLASSES};
use serde::{Deserialize, Serialize};

/// Width of the shared 3x3 conv block inside every head.
pub const HEAD_CONV_CHANNELS: usize = 64;

/// Regression channel order: offset x/y (cells), height above ground (m),
/// log length/width/height, sin yaw, cos yaw.
pub const REG_CHANNELS: usize = 8;

/// CenterNet-style minimum corner overlap used for the target splat radius.
const GAUSSIAN_MIN_OVERLAP: f64 = 0.7;

/// Heatmap targets are clamped away from 0/1 when inverted into logits.
pub const HEATMAP_EPS: f64 = 1e-7;

/// `(name, channels)` of every head, in canonical order.
pub const HEADS: [(&str, usize); 6] = [
    ("heatmap", NUM_CLASSES),
    ("offset", 2),
    ("h_g", 1),
    ("size", 3),
    ("yaw", 2),
    ("iou", 1),
];

/// Raw per-cell maps produced by [`head_forward`]. The heatmap is
/// pre-sigmoid; `iou` maps to `[0, 1]` at decode via `(v + 1) / 2` clamped.
#[derive(Debug, Clone)]
pub struct HeadOutputs {
    pub heatmap: Tensor4,
    pub offset: Tensor4,
    pub h_g: Tensor4,
    pub size: Tensor4,
    pub yaw: Tensor4,
    pub iou: Tensor4,
}

impl HeadOutputs {
    fn check_shapes(&self) -> Result<()> {
        let (n, _, h, w) = self.heatmap.shape();
        for (name, c, t) in [
            ("heatmap", NUM_CLASSES, &self.heatmap),
            ("offset", 2, &self.offset),
            ("h_g", 1, &self.h_g),
            ("size", 3, &self.size),
            ("yaw", 2, &self.yaw),
            ("iou", 1, &self.iou),
        ] {
            if t.shape() != (n, c, h, w) {
                return Err(Error::Shape(format!(
                    "head `{name}` has shape {:?}, expected ({n}, {c}, {h}, {w})",
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Decode-time configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeConfig {
    pub top_k: usize,
    /// Applied to the rectified score.
    pub score_threshold: f64,
    pub nms_threshold: f64,
    /// Per-class blend exponent: 0 trusts the heatmap alone, 1 the quality
    /// estimate alone.
    pub beta: [f64; NUM_CLASSES],
    /// Pseudo-image cells per head cell.
    pub output_stride: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            top_k: 100,
            score_threshold: 0.3,
            nms_threshold: 0.5,
            beta: [0.5; NUM_CLASSES],
            output_stride: 2,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k < 1 {
            return Err(Error::Config("top_k must be >= 1".into()));
        }
        for (name, v) in [
            ("score_threshold", self.score_threshold),
            ("nms_threshold", self.nms_threshold),
        ] {
            if !(0.0 < v && v < 1.0) {
                return Err(Error::Config(format!("{name} {v} must be in (0, 1)")));
            }
        }
        for b in self.beta {
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::Config(format!("beta {b} must be in [0, 1]")));
            }
        }
        if self.output_stride < 1 {
            return Err(Error::Config("output_stride must be >= 1".into()));
        }
        Ok(())
    }
}

/// Weight tensors for all six heads given the backbone channel count.
pub fn weight_specs(in_channels: usize) -> Vec<WeightSpec> {
    let mut specs = Vec::new();
    for (name, out_c) in HEADS {
        specs.extend(
            nn::ConvBlockSpec::new(in_channels, HEAD_CONV_CHANNELS, 1)
                .weight_specs(&format!("head.{name}.block")),
        );
        specs.push(WeightSpec {
            name: format!("head.{name}.out.weight"),
            shape: vec![out_c, HEAD_CONV_CHANNELS, 1, 1],
            fan_in: HEAD_CONV_CHANNELS,
        });
        specs.push(WeightSpec {
            name: format!("head.{name}.out.bias"),
            shape: vec![out_c],
            fan_in: HEAD_CONV_CHANNELS,
        });
    }
    specs
}

fn one_head(features: &Tensor4, store: &WeightStore, name: &str) -> Result<Tensor4> {
    let hidden = nn::conv_block(features, store, &format!("head.{name}.block"), 1)?;
    let w = store.tensor4(&format!("head.{name}.out.weight"))?;
    let b = store.vector(&format!("head.{name}.out.bias"))?;
    nn::conv2d(&hidden, &w, b, 1, 0)
}

/// Run every head on the shared backbone features.
pub fn head_forward(features: &Tensor4, store: &WeightStore) -> Result<HeadOutputs> {
    let out = HeadOutputs {
        heatmap: one_head(features, store, "heatmap")?,
        offset: one_head(features, store, "offset")?,
        h_g: one_head(features, store, "h_g")?,
        size: one_head(features, store, "size")?,
        yaw: one_head(features, store, "yaw")?,
        iou: one_head(features, store, "iou")?,
    };
    out.check_shapes()?;
    Ok(out)
}

/// Rendered supervision targets.
#[derive(Debug, Clone)]
pub struct Targets {
    /// Per-class Gaussian splats, peak 1 at each center cell.
    pub heatmap: Tensor4,
    /// [`REG_CHANNELS`] regression targets, written only at center cells.
    pub regression: Tensor4,
    /// Center cells `(iy, ix)` in label order, deduplicated.
    pub mask: Vec<(usize, usize)>,
    /// Labels whose center fell outside the grid.
    pub skipped_out_of_grid: usize,
}

/// Splat radius keeping corner-shifted boxes above the overlap threshold.
/// This reproduces the reference center-heatmap formula verbatim, including
/// its `(b + sqrt(disc)) / 2` root choice, so radii match the widely
/// deployed target renderers rather than the textbook quadratic roots.
pub fn gaussian_radius(length_cells: f64, width_cells: f64, min_overlap: f64) -> f64 {
    let (h, w) = (width_cells, length_cells);

    let b1 = h + w;
    let c1 = w * h * (1.0 - min_overlap) / (1.0 + min_overlap);
    let r1 = (b1 + (b1 * b1 - 4.0 * c1).max(0.0).sqrt()) / 2.0;

    let b2 = 2.0 * (h + w);
    let c2 = (1.0 - min_overlap) * w * h;
    let r2 = (b2 + (b2 * b2 - 16.0 * c2).max(0.0).sqrt()) / 2.0;

    let a3 = 4.0 * min_overlap;
    let b3 = -2.0 * min_overlap * (h + w);
    let c3 = (min_overlap - 1.0) * w * h;
    let r3 = (b3 + (b3 * b3 - 4.0 * a3 * c3).max(0.0).sqrt()) / 2.0;

    r1.min(r2).min(r3).max(0.0)
}

/// Render per-class heatmap splats and center-cell regression targets for a
/// scene. Out-of-grid labels are skipped and counted.
pub fn render_targets(scene: &Scene, grid: &GridConfig, output_stride: usize) -> Result<Targets> {
    grid.validate()?;
    if output_stride < 1 || grid.nx() % output_stride != 0 || grid.ny() % output_stride != 0 {
        return Err(Error::Config(format!(
            "grid ({}, {}) not divisible by output stride {output_stride}",
            grid.nx(),
            grid.ny()
        )));
    }
    let (bw, bh) = (grid.nx() / output_stride, grid.ny() / output_stride);
    let cell = grid.grid_size * output_stride as f64;
    let mut heatmap = Tensor4::zeros(1, NUM_CLASSES, bh, bw);
    let mut regression = Tensor4::zeros(1, REG_CHANNELS, bh, bw);
    let mut mask = Vec::new();
    let mut skipped = 0usize;

    for label in &scene.labels {
        let b = &label.bbox;
        let fx = (b.cx - grid.x_range.0) / cell;
        let fy = (b.cy - grid.y_range.0) / cell;
        if fx < 0.0 || fy < 0.0 || fx >= bw as f64 || fy >= bh as f64 {
            skipped += 1;
            continue;
        }
        let (ix, iy) = (fx as usize, fy as usize);

        let radius = gaussian_radius(b.length / cell, b.width / cell, GAUSSIAN_MIN_OVERLAP)
            .floor()
            .max(0.0) as isize;
        let sigma = (2.0 * radius as f64 + 1.0) / 6.0;
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                let (px, py) = (ix as isize + dx, iy as isize + dy);
                if px < 0 || py < 0 || px >= bw as isize || py >= bh as isize {
                    continue;
                }
                let g = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp() as f32;
                let cur = heatmap.get(0, label.class_id, py as usize, px as usize);
                if g > cur {
                    heatmap.set(0, label.class_id, py as usize, px as usize, g);
                }
            }
        }
        // overlapping centers would overwrite; keep the last write and one
        // mask entry per cell
        if !mask.contains(&(iy, ix)) {
            mask.push((iy, ix));
        }
        let targets = [
            (fx - ix as f64 - 0.5) as f32,
            (fy - iy as f64 - 0.5) as f32,
            b.cz as f32,
            b.length.ln() as f32,
            b.width.ln() as f32,
            b.height.ln() as f32,
            b.yaw.sin() as f32,
            b.yaw.cos() as f32,
        ];
        for (ch, v) in targets.into_iter().enumerate() {
            regression.set(0, ch, iy, ix, v);
        }
    }
    Ok(Targets {
        heatmap,
        regression,
        mask,
        skipped_out_of_grid: skipped,
    })
}

/// Penalty-reduced pixelwise focal loss on the pre-sigmoid heatmap,
/// normalized by the positive-cell count.
pub fn focal_loss(pred: &Tensor4, target: &Tensor4) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "focal_loss: pred {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let mut loss = 0.0f64;
    let mut positives = 0usize;
    for (&logit, &t) in pred.data().iter().zip(target.data()) {
        let p = 1.0 / (1.0 + (-(logit as f64)).exp());
        let p = p.clamp(1e-12, 1.0 - 1e-12);
        let t = t as f64;
        if t == 1.0 {
            positives += 1;
            loss += -(1.0 - p) * (1.0 - p) * p.ln();
        } else {
            let w = (1.0 - t).powi(4);
            loss += -w * p * p * (1.0 - p).ln();
        }
    }
    Ok(loss / positives.max(1) as f64)
}

/// Mean absolute error over masked center cells and all regression
/// channels; 0 when the mask is empty.
pub fn l1_reg_loss(pred: &HeadOutputs, targets: &Targets) -> Result<f64> {
    pred.check_shapes()?;
    if pred.offset.h != targets.regression.h || pred.offset.w != targets.regression.w {
        return Err(Error::Shape(format!(
            "l1_reg_loss: pred ({}, {}) vs targets ({}, {})",
            pred.offset.h, pred.offset.w, targets.regression.h, targets.regression.w
        )));
    }
    if targets.mask.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0f64;
    for &(iy, ix) in &targets.mask {
        let preds = [
            pred.offset.get(0, 0, iy, ix),
            pred.offset.get(0, 1, iy, ix),
            pred.h_g.get(0, 0, iy, ix),
            pred.size.get(0, 0, iy, ix),
            pred.size.get(0, 1, iy, ix),
            pred.size.get(0, 2, iy, ix),
            pred.yaw.get(0, 0, iy, ix),
            pred.yaw.get(0, 1, iy, ix),
        ];
        for (ch, p) in preds.into_iter().enumerate() {
            total += (p as f64 - targets.regression.get(0, ch, iy, ix) as f64).abs();
        }
    }
    Ok(total / (targets.mask.len() * REG_CHANNELS) as f64)
}

/// Decode head outputs into detections: sigmoid the heatmap, keep cells that
/// are maxima of their 3x3 neighborhood (ties kept), take the global top-k,
/// reconstruct boxes from the regressions, rectify scores, threshold, and
/// run per-class rotated NMS.
pub fn decode(outputs: &HeadOutputs, grid: &GridConfig, cfg: &DecodeConfig) -> Result<Vec<Detection>> {
    outputs.check_shapes()?;
    cfg.validate()?;
    grid.validate()?;
    let (_, _, bh, bw) = outputs.heatmap.shape();
    if grid.ny() / cfg.output_stride != bh || grid.nx() / cfg.output_stride != bw {
        return Err(Error::Shape(format!(
            "decode: heatmap ({bh}, {bw}) does not match grid {}x{} at stride {}",
            grid.ny(),
            grid.nx(),
            cfg.output_stride
        )));
    }
    let cell = grid.grid_size * cfg.output_stride as f64;

    let mut peaks: Vec<(f64, usize, usize, usize)> = Vec::new();
    for class in 0..NUM_CLASSES {
        let plane = outputs.heatmap.plane(0, class);
        for y in 0..bh {
            for x in 0..bw {
                let v = plane[y * bw + x];
                let mut is_peak = true;
                'nb: for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        if dy == 0 && dx == 0 {
                            continue;
                        }
                        let (ny_, nx_) = (y as isize + dy, x as isize + dx);
                        if ny_ < 0 || nx_ < 0 || ny_ >= bh as isize || nx_ >= bw as isize {
                            continue;
                        }
                        if plane[ny_ as usize * bw + nx_ as usize] > v {
                            is_peak = false;
                            break 'nb;
                        }
                    }
                }
                if is_peak {
                    let p = 1.0 / (1.0 + (-(v as f64)).exp());
                    peaks.push((p, class, y, x));
                }
            }
        }
    }
    peaks.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2, a.3).cmp(&(b.1, b.2, b.3))));
    peaks.truncate(cfg.top_k);

    let mut dets = Vec::with_capacity(peaks.len());
    for (p, class, iy, ix) in peaks {
        let off_x = outputs.offset.get(0, 0, iy, ix) as f64;
        let off_y = outputs.offset.get(0, 1, iy, ix) as f64;
        let cx = grid.x_range.0 + (ix as f64 + 0.5 + off_x) * cell;
        let cy = grid.y_range.0 + (iy as f64 + 0.5 + off_y) * cell;
        let cz = outputs.h_g.get(0, 0, iy, ix) as f64;
        let length = (outputs.size.get(0, 0, iy, ix) as f64).exp();
        let width = (outputs.size.get(0, 1, iy, ix) as f64).exp();
        let height = (outputs.size.get(0, 2, iy, ix) as f64).exp();
        let yaw = (outputs.yaw.get(0, 0, iy, ix) as f64)
            .atan2(outputs.yaw.get(0, 1, iy, ix) as f64);
        let u = ((outputs.iou.get(0, 0, iy, ix) as f64 + 1.0) / 2.0).clamp(0.0, 1.0);
        let beta = cfg.beta[class];
        let score = p.powf(1.0 - beta) * u.powf(beta);
        if score < cfg.score_threshold {
            continue;
        }
        // degenerate regressions (overflowed exp) cannot form a valid box
        let Ok(bbox) = Box7::new(cx, cy, cz, length, width, height, yaw) else {
            continue;
        };
        dets.push(Detection {
            bbox,
            class_id: class,
            score,
        });
    }
    let kept = crate::geom::nms_rotated(&dets, cfg.nms_threshold, true);
    Ok(kept.into_iter().map(|i| dets[i]).collect())
}

/// Build the head outputs that decode back to the rendered targets exactly:
/// heatmap logits invert the sigmoid of the splats (clamped by
/// [`HEATMAP_EPS`]), regression channels copy the targets at center cells,
/// and the quality channel predicts perfect IoU everywhere.
pub fn exact_inverse_outputs(targets: &Targets) -> HeadOutputs {
    let (_, _, bh, bw) = targets.heatmap.shape();
    let mut heatmap = targets.heatmap.clone();
    for v in heatmap.data_mut() {
        let t = (*v as f64).clamp(HEATMAP_EPS, 1.0 - HEATMAP_EPS);
        *v = (t / (1.0 - t)).ln() as f32;
    }
    let mut offset = Tensor4::zeros(1, 2, bh, bw);
    let mut h_g = Tensor4::zeros(1, 1, bh, bw);
    let mut size = Tensor4::zeros(1, 3, bh, bw);
    let mut yaw = Tensor4::zeros(1, 2, bh, bw);
    let mut iou = Tensor4::zeros(1, 1, bh, bw);
    for &(iy, ix) in &targets.mask {
        offset.set(0, 0, iy, ix, targets.regression.get(0, 0, iy, ix));
        offset.set(0, 1, iy, ix, targets.regression.get(0, 1, iy, ix));
        h_g.set(0, 0, iy, ix, targets.regression.get(0, 2, iy, ix));
        for ch in 0..3 {
            size.set(0, ch, iy, ix, targets.regression.get(0, 3 + ch, iy, ix));
        }
        yaw.set(0, 0, iy, ix, targets.regression.get(0, 6, iy, ix));
        yaw.set(0, 1, iy, ix, targets.regression.get(0, 7, iy, ix));
    }
    for v in iou.data_mut() {
        *v = 1.0;
    }
    HeadOutputs {
        heatmap,
        offset,
        h_g,
        size,
        yaw,
        iou,
    }
}
