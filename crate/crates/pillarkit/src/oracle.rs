//! Brute-force reference implementations backing the test suites.
//!
//! Everything here trades speed for obviousness and stays independent of the
//! production code paths it checks: sampling instead of clipping, scalar
//! loops instead of blocked kernels, exact range reduction instead of direct
//! libm calls. Production code must never call into this module.

use crate::geom::{bev_corners, rotated_bev_iou, Box7, Detection};
use crate::nn::{Tensor2, Tensor4, WeightStore};
use crate::pillar::{GridConfig, POINT_FEATURES};
use crate::scene::PointCloud;
use crate::Rng;
use rand::Rng as _;
use std::collections::BTreeMap;
use std::f64::consts::PI;

fn bev_aabb(b: &Box7) -> [f64; 4] {
    let corners = bev_corners(b);
    let mut aabb = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for [x, y] in corners {
        aabb[0] = aabb[0].min(x);
        aabb[1] = aabb[1].min(y);
        aabb[2] = aabb[2].max(x);
        aabb[3] = aabb[3].max(y);
    }
    aabb
}

/// Monte Carlo BEV IoU: sample the overlap of the two footprint AABBs and
/// count points inside both boxes; the union comes from the exact areas.
pub fn mc_bev_iou(a: &Box7, b: &Box7, samples: usize, rng: &mut Rng) -> f64 {
    let pa = bev_aabb(a);
    let pb = bev_aabb(b);
    let lo_x = pa[0].max(pb[0]);
    let lo_y = pa[1].max(pb[1]);
    let hi_x = pa[2].min(pb[2]);
    let hi_y = pa[3].min(pb[3]);
    if lo_x >= hi_x || lo_y >= hi_y {
        return 0.0;
    }
    let region = (hi_x - lo_x) * (hi_y - lo_y);
    let mut hits = 0usize;
    for _ in 0..samples {
        let x = lo_x + rng.gen::<f64>() * (hi_x - lo_x);
        let y = lo_y + rng.gen::<f64>() * (hi_y - lo_y);
        if a.contains_bev(x, y) && b.contains_bev(x, y) {
            hits += 1;
        }
    }
    let inter = hits as f64 / samples as f64 * region;
    inter / (a.bev_area() + b.bev_area() - inter)
}

/// Monte Carlo 3D IoU over the overlap of the two 3D AABBs.
pub fn mc_iou_3d(a: &Box7, b: &Box7, samples: usize, rng: &mut Rng) -> f64 {
    let pa = bev_aabb(a);
    let pb = bev_aabb(b);
    let lo_x = pa[0].max(pb[0]);
    let lo_y = pa[1].max(pb[1]);
    let hi_x = pa[2].min(pb[2]);
    let hi_y = pa[3].min(pb[3]);
    let lo_z = a.z_min().max(b.z_min());
    let hi_z = a.z_max().min(b.z_max());
    if lo_x >= hi_x || lo_y >= hi_y || lo_z >= hi_z {
        return 0.0;
    }
    let region = (hi_x - lo_x) * (hi_y - lo_y) * (hi_z - lo_z);
    let mut hits = 0usize;
    for _ in 0..samples {
        let x = lo_x + rng.gen::<f64>() * (hi_x - lo_x);
        let y = lo_y + rng.gen::<f64>() * (hi_y - lo_y);
        let z = lo_z + rng.gen::<f64>() * (hi_z - lo_z);
        if a.contains(x, y, z) && b.contains(x, y, z) {
            hits += 1;
        }
    }
    let inter = hits as f64 / samples as f64 * region;
    inter / (a.volume() + b.volume() - inter)
}

/// O(n^2) greedy NMS: full pairwise IoU matrix first, then one sweep over
/// the score ordering.
pub fn nms_reference(dets: &[Detection], iou_threshold: f64, per_class: bool) -> Vec<usize> {
    let n = dets.len();
    let mut iou = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                iou[i * n + j] = rotated_bev_iou(&dets[i].bbox, &dets[j].bbox);
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| dets[j].score.total_cmp(&dets[i].score).then(i.cmp(&j)));
    let mut alive = vec![true; n];
    let mut kept = Vec::new();
    for &i in &order {
        if !alive[i] {
            continue;
        }
        kept.push(i);
        for &j in &order {
            if alive[j]
                && j != i
                && (!per_class || dets[i].class_id == dets[j].class_id)
                && iou[i * n + j] > iou_threshold
            {
                alive[j] = false;
            }
        }
    }
    kept
}

/// Triple-loop matrix product `y = x W + b`.
pub fn linear_reference(x: &Tensor2, weight: &Tensor2, bias: &[f32]) -> Tensor2 {
    let mut out = Tensor2::zeros(x.rows, weight.cols);
    for r in 0..x.rows {
        for o in 0..weight.cols {
            let mut acc = bias[o];
            for i in 0..x.cols {
                acc += x.get(r, i) * weight.get(i, o);
            }
            out.row_mut(r)[o] = acc;
        }
    }
    out
}

/// Six-loop convolution with per-element bounds checks.
pub fn conv2d_reference(
    x: &Tensor4,
    weight: &Tensor4,
    bias: &[f32],
    stride: usize,
    padding: usize,
) -> Tensor4 {
    let (c_out, c_in, kh, kw) = weight.shape();
    let oh = (x.h + 2 * padding - kh) / stride + 1;
    let ow = (x.w + 2 * padding - kw) / stride + 1;
    let mut out = Tensor4::zeros(x.n, c_out, oh, ow);
    for b in 0..x.n {
        for co in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[co];
                    for ci in 0..c_in {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - padding as isize;
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                    continue;
                                }
                                acc += weight.get(co, ci, ky, kx)
                                    * x.get(b, ci, iy as usize, ix as usize);
                            }
                        }
                    }
                    out.set(b, co, oy, ox, acc);
                }
            }
        }
    }
    out
}

/// Scalar-loop channel max and mean maps.
pub fn channel_pool_reference(x: &Tensor4) -> (Tensor4, Tensor4) {
    let mut mx = Tensor4::zeros(x.n, 1, x.h, x.w);
    let mut avg = Tensor4::zeros(x.n, 1, x.h, x.w);
    for b in 0..x.n {
        for y in 0..x.h {
            for xx in 0..x.w {
                let mut m = f32::NEG_INFINITY;
                let mut s = 0.0f32;
                for c in 0..x.c {
                    let v = x.get(b, c, y, xx);
                    m = m.max(v);
                    s += v;
                }
                mx.set(b, 0, y, xx, m);
                avg.set(b, 0, y, xx, s / x.c as f32);
            }
        }
    }
    (mx, avg)
}

/// Per-output-pixel nearest upsampling.
pub fn upsample_nearest_reference(x: &Tensor4, factor: usize) -> Tensor4 {
    let mut out = Tensor4::zeros(x.n, x.c, x.h * factor, x.w * factor);
    for b in 0..x.n {
        for c in 0..x.c {
            for oy in 0..x.h * factor {
                for ox in 0..x.w * factor {
                    out.set(b, c, oy, ox, x.get(b, c, oy / factor, ox / factor));
                }
            }
        }
    }
    out
}

/// Per-output-pixel bilinear upsampling with half-pixel centers, computed in
/// f64 scalar arithmetic.
pub fn upsample_bilinear_reference(x: &Tensor4, factor: usize) -> Tensor4 {
    let (oh, ow) = (x.h * factor, x.w * factor);
    let mut out = Tensor4::zeros(x.n, x.c, oh, ow);
    let clamp = |v: f64, n: usize| -> usize { (v.max(0.0) as usize).min(n - 1) };
    for b in 0..x.n {
        for c in 0..x.c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let sy = (oy as f64 + 0.5) / factor as f64 - 0.5;
                    let sx = (ox as f64 + 0.5) / factor as f64 - 0.5;
                    let (fy, fx) = (sy.floor(), sx.floor());
                    let (ty, tx) = (sy - fy, sx - fx);
                    let (y0, y1) = (clamp(fy, x.h), clamp(fy + 1.0, x.h));
                    let (x0, x1) = (clamp(fx, x.w), clamp(fx + 1.0, x.w));
                    let v = x.get(b, c, y0, x0) as f64 * (1.0 - ty) * (1.0 - tx)
                        + x.get(b, c, y0, x1) as f64 * (1.0 - ty) * tx
                        + x.get(b, c, y1, x0) as f64 * ty * (1.0 - tx)
                        + x.get(b, c, y1, x1) as f64 * ty * tx;
                    out.set(b, c, oy, ox, v as f32);
                }
            }
        }
    }
    out
}

/// `sin(pi * x)` with exact reduction of `x` modulo 2, accurate to a couple
/// of ulps for any representable `x`.
pub fn sin_pi(x: f64) -> f64 {
    // x/2 and 2*floor(x/2) are exact; the difference is a multiple of
    // ulp(x) below 2, so it is exact as well
    let r = x - 2.0 * (x / 2.0).floor(); // in [0, 2)
    let (sign, r1) = if r >= 1.0 { (-1.0, r - 1.0) } else { (1.0, r) };
    let v = if r1 <= 0.5 {
        (PI * r1).sin()
    } else {
        (PI * (1.0 - r1)).sin()
    };
    sign * v
}

/// `cos(pi * x)` with exact reduction; companion to [`sin_pi`].
pub fn cos_pi(x: f64) -> f64 {
    let r = x - 2.0 * (x / 2.0).floor(); // in [0, 2)
    if r < 0.5 {
        (PI * r).cos()
    } else if r < 1.0 {
        -(PI * (1.0 - r)).cos()
    } else if r < 1.5 {
        -(PI * (r - 1.0)).cos()
    } else {
        (PI * (2.0 - r)).cos()
    }
}

/// Height position encoding evaluated through the exact-reduction routines.
pub fn hpe_reference(z_m: f64, z_p_center: f64, frequencies: usize, z_scale: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(4 * frequencies);
    for z in [z_m, z_p_center] {
        let zn = z / z_scale;
        for i in 0..frequencies {
            let y = zn * (i as f64).exp2();
            out.push(sin_pi(y));
            out.push(cos_pi(y));
        }
    }
    out
}

/// Independent single-layer pillar assignment: hash points by `(ix, iy)`,
/// apply the same first-seen truncation rule, and compute the ten augmented
/// channels with scalar arithmetic. Keyed by cell index, rows in input order.
pub fn plain_pillar_cells(
    cloud: &PointCloud,
    grid: &GridConfig,
) -> BTreeMap<(u32, u32), Vec<[f32; POINT_FEATURES]>> {
    assert_eq!(grid.n_sub, 1, "plain pillars have a single vertical slice");
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut order: Vec<(u32, u32)> = Vec::new();
    let mut cells: BTreeMap<(u32, u32), Vec<usize>> = BTreeMap::new();
    for (pi, p) in cloud.iter().enumerate() {
        let (x, y, z) = (p[0] as f64, p[1] as f64, p[2] as f64);
        if x < grid.x_range.0
            || x > grid.x_range.1
            || y < grid.y_range.0
            || y > grid.y_range.1
            || z < grid.z_range.0
            || z > grid.z_range.1
        {
            continue;
        }
        let ix = (((x - grid.x_range.0) / grid.grid_size) as usize).min(nx - 1) as u32;
        let iy = (((y - grid.y_range.0) / grid.grid_size) as usize).min(ny - 1) as u32;
        let entry = cells.entry((ix, iy)).or_insert_with(|| {
            order.push((ix, iy));
            Vec::new()
        });
        if entry.len() < grid.max_points_per_subpillar {
            entry.push(pi);
        }
    }
    order.truncate(grid.max_occupied_subpillars);
    let keep: std::collections::BTreeSet<(u32, u32)> = order.into_iter().collect();
    cells.retain(|k, _| keep.contains(k));

    let mut out = BTreeMap::new();
    for ((ix, iy), indices) in cells {
        let n = indices.len() as f64;
        let (mut mx, mut my, mut mz) = (0.0f64, 0.0f64, 0.0f64);
        for &pi in &indices {
            let p = cloud.point(pi);
            mx += p[0] as f64;
            my += p[1] as f64;
            mz += p[2] as f64;
        }
        (mx, my, mz) = (mx / n, my / n, mz / n);
        let ccx = grid.x_range.0 + (ix as f64 + 0.5) * grid.grid_size;
        let ccy = grid.y_range.0 + (iy as f64 + 0.5) * grid.grid_size;
        let ccz = (grid.z_range.0 + grid.z_range.1) / 2.0;
        let rows = indices
            .iter()
            .map(|&pi| {
                let p = cloud.point(pi);
                let (x, y, z) = (p[0] as f64, p[1] as f64, p[2] as f64);
                [
                    p[0],
                    p[1],
                    p[2],
                    p[3],
                    (x - mx) as f32,
                    (y - my) as f32,
                    (z - mz) as f32,
                    (x - ccx) as f32,
                    (y - ccy) as f32,
                    (z - ccz) as f32,
                ]
            })
            .collect();
        out.insert((ix, iy), rows);
    }
    out
}

/// Independent plain-pillar pseudo-image: [`plain_pillar_cells`] followed by
/// a scalar two-layer VFE (reading the same named weights) and a scatter.
/// Only valid with the height encoding disabled and `n_sub == 1`.
pub fn plain_pillar_pseudo_image(
    cloud: &PointCloud,
    grid: &GridConfig,
    vfe1_out: usize,
    vfe2_out: usize,
    store: &WeightStore,
) -> Tensor4 {
    let cells = plain_pillar_cells(cloud, grid);
    let layer = |input: &[f32], name: &str| -> Vec<f32> {
        let w = store.tensor2(&format!("pfe.{name}.weight")).unwrap();
        let b = store.vector(&format!("pfe.{name}.bias")).unwrap();
        let s = store.vector(&format!("pfe.{name}.norm.scale")).unwrap();
        let t = store.vector(&format!("pfe.{name}.norm.shift")).unwrap();
        (0..w.cols)
            .map(|o| {
                let mut acc = b[o];
                for (i, &x) in input.iter().enumerate() {
                    acc += x * w.get(i, o);
                }
                (acc * s[o] + t[o]).max(0.0)
            })
            .collect()
    };
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut out = Tensor4::zeros(1, vfe2_out, ny, nx);
    for ((ix, iy), rows) in cells {
        let h1: Vec<Vec<f32>> = rows.iter().map(|r| layer(r, "vfe1")).collect();
        let mut m1 = vec![f32::NEG_INFINITY; vfe1_out];
        for h in &h1 {
            for (m, &v) in m1.iter_mut().zip(h) {
                *m = m.max(v);
            }
        }
        let mut cell_feat = vec![f32::NEG_INFINITY; vfe2_out];
        for h in &h1 {
            let mut cat = h.clone();
            cat.extend_from_slice(&m1);
            let h2 = layer(&cat, "vfe2");
            for (m, &v) in cell_feat.iter_mut().zip(&h2) {
                *m = m.max(v);
            }
        }
        for (ch, &v) in cell_feat.iter().enumerate() {
            out.set(0, ch, iy as usize, ix as usize, v);
        }
    }
    out
}

/// Naive interpolated average precision: for each recall position, rescan
/// the whole prefix list for the best precision at or beyond it.
pub fn average_precision_reference(
    tp_flags: &[bool],
    num_gt: usize,
    recall_positions: usize,
    weights: Option<&[f64]>,
) -> Option<f64> {
    if num_gt == 0 {
        return None;
    }
    let n = tp_flags.len();
    let mut total = 0.0f64;
    for j in 1..=recall_positions {
        let target = j as f64 / recall_positions as f64;
        let mut best = 0.0f64;
        for k in 0..n {
            let mut tp_mass = 0.0f64;
            for (idx, &f) in tp_flags[..=k].iter().enumerate() {
                if f {
                    tp_mass += weights.map_or(1.0, |w| w[idx]);
                }
            }
            let recall = tp_mass / num_gt as f64;
            if recall + 1e-9 >= target {
                best = best.max(tp_mass / (k + 1) as f64);
            }
        }
        total += best;
    }
    Some(total / recall_positions as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sin_cos_pi_exactness() {
        for k in -6i32..=6 {
            assert_eq!(sin_pi(k as f64), 0.0);
            assert_eq!(cos_pi(k as f64).abs(), 1.0);
        }
        assert_eq!(sin_pi(0.5), 1.0);
        assert_eq!(sin_pi(1.5), -1.0);
        // pi/2 itself is not representable; cos lands within an ulp of zero
        assert!(cos_pi(0.5).abs() < 1e-16);
        // large arguments still reduce exactly
        assert_eq!(sin_pi(1048576.5), 1.0);
        assert!((sin_pi(123456.25) - (0.25f64 * PI).sin()).abs() < 1e-15);
    }

    #[test]
    fn mc_iou_sanity() {
        let mut rng = crate::rng_from_seed(50);
        let a = Box7::new(0.0, 0.0, 0.0, 2.0, 2.0, 1.0, 0.0).unwrap();
        let b = Box7::new(1.0, 0.0, 0.0, 2.0, 2.0, 1.0, 0.0).unwrap();
        let iou = mc_bev_iou(&a, &b, 400_000, &mut rng);
        assert!((iou - 1.0 / 3.0).abs() < 3e-3);
        let far = Box7::new(10.0, 0.0, 0.0, 2.0, 2.0, 1.0, 0.0).unwrap();
        assert_eq!(mc_bev_iou(&a, &far, 1000, &mut rng), 0.0);
    }
}
