//! Sub-pillar voxelization and height position encoding.
//!
//! A pillar is the vertical column of space over one BEV grid cell. Splitting
//! it into `n_sub` vertical slices (sub-pillars) keeps height-local structure
//! that a single column feature would wash out, at almost no cost: point
//! heights concentrate near the ground, so most of the extra slices stay
//! empty and only occupied slices are stored and encoded.
//!
//! Each occupied sub-pillar also records two height summaries — the mean
//! height of its points and the height of the slice center — which feed the
//! sinusoidal position encoding appended after feature extraction.

use crate::scene::PointCloud;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;

/// Per-point channels: `(x, y, z, intensity, x_c, y_c, z_c, x_p, y_p, z_p)`.
/// The `_c` offsets are from the mean of the sub-pillar's stored points, the
/// `_p` offsets from the sub-pillar's geometric center.
pub const POINT_FEATURES: usize = 10;

/// BEV grid and vertical split configuration. Distances in meters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub z_range: (f64, f64),
    /// Horizontal cell edge; cells are square.
    pub grid_size: f64,
    /// Number of vertical slices per pillar.
    pub n_sub: usize,
    pub max_points_per_subpillar: usize,
    pub max_occupied_subpillars: usize,
}

/// Tolerance when checking that a range is an integer number of cells.
const CELL_COUNT_TOL: f64 = 1e-6;

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("x_range", self.x_range),
            ("y_range", self.y_range),
            ("z_range", self.z_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(format!("{name} ({lo}, {hi}) must have lo < hi")));
            }
        }
        if !(self.grid_size > 0.0) {
            return Err(Error::Config(format!(
                "grid_size {} must be > 0",
                self.grid_size
            )));
        }
        if self.n_sub < 1 {
            return Err(Error::Config("n_sub must be >= 1".into()));
        }
        if self.max_points_per_subpillar < 1 || self.max_occupied_subpillars < 1 {
            return Err(Error::Config("truncation limits must be >= 1".into()));
        }
        for (name, range) in [("x_range", self.x_range), ("y_range", self.y_range)] {
            let cells = (range.1 - range.0) / self.grid_size;
            if (cells - cells.round()).abs() > CELL_COUNT_TOL || cells.round() < 1.0 {
                return Err(Error::Config(format!(
                    "{name} spans {cells} cells of {}; must be a whole number",
                    self.grid_size
                )));
            }
        }
        Ok(())
    }

    /// Cell count along x.
    pub fn nx(&self) -> usize {
        ((self.x_range.1 - self.x_range.0) / self.grid_size).round() as usize
    }

    /// Cell count along y.
    pub fn ny(&self) -> usize {
        ((self.y_range.1 - self.y_range.0) / self.grid_size).round() as usize
    }

    /// Vertical size of one sub-pillar.
    pub fn dz(&self) -> f64 {
        (self.z_range.1 - self.z_range.0) / self.n_sub as f64
    }

    /// Center of the cell `(ix, iy, h)`.
    pub fn cell_center(&self, ix: usize, iy: usize, h: usize) -> (f64, f64, f64) {
        (
            self.x_range.0 + (ix as f64 + 0.5) * self.grid_size,
            self.y_range.0 + (iy as f64 + 0.5) * self.grid_size,
            self.z_range.0 + (h as f64 + 0.5) * self.dz(),
        )
    }
}

/// Height position encoding configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HpeConfig {
    /// Number of frequency octaves; the encoding is `4 * frequencies` wide.
    pub frequencies: usize,
    /// Heights are divided by this before encoding so one period spans the
    /// grid's vertical range instead of aliasing at meter scale.
    pub z_scale: f64,
    pub enabled: bool,
}

impl Default for HpeConfig {
    fn default() -> Self {
        HpeConfig {
            frequencies: 4,
            z_scale: 6.0,
            enabled: true,
        }
    }
}

impl HpeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frequencies < 1 {
            return Err(Error::Config("hpe frequencies must be >= 1".into()));
        }
        if !(self.z_scale > 0.0) {
            return Err(Error::Config("hpe z_scale must be > 0".into()));
        }
        Ok(())
    }

    /// Channels appended per sub-pillar when enabled.
    pub fn channels(&self) -> usize {
        if self.enabled {
            4 * self.frequencies
        } else {
            0
        }
    }
}

/// Integer address of an occupied sub-pillar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CellKey {
    pub ix: u32,
    pub iy: u32,
    pub h: u32,
}

/// Where every input point went.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AssignStats {
    /// Points stored in some sub-pillar.
    pub assigned: usize,
    /// Points outside the configured ranges.
    pub dropped_out_of_range: usize,
    /// In-range points discarded by the per-cell or cell-count caps.
    pub truncated: usize,
}

/// Sparse set of occupied sub-pillars with per-point augmented features.
#[derive(Debug, Clone)]
pub struct SubPillarBatch {
    /// Occupied cells in first-seen input order.
    pub cells: Vec<CellKey>,
    /// Stored points per cell (after truncation), each in `1..=max_points`.
    pub counts: Vec<u32>,
    /// Row offset of each cell's first point in `features`.
    offsets: Vec<usize>,
    /// `total_points x POINT_FEATURES`, cell-major, input order within a cell.
    pub features: Vec<f32>,
    /// Mean stored-point height per cell (meters).
    pub z_mean: Vec<f64>,
    /// Sub-pillar center height per cell (meters).
    pub z_center: Vec<f64>,
    pub stats: AssignStats,
}

impl SubPillarBatch {
    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn total_points(&self) -> usize {
        self.features.len() / POINT_FEATURES
    }

    /// The `count * POINT_FEATURES` feature rows of cell `i`.
    pub fn cell_points(&self, i: usize) -> &[f32] {
        let start = self.offsets[i] * POINT_FEATURES;
        &self.features[start..start + self.counts[i] as usize * POINT_FEATURES]
    }

    pub fn cell_offset(&self, i: usize) -> usize {
        self.offsets[i]
    }
}

/// Bin every in-range point into its `(ix, iy, h)` sub-pillar and compute the
/// augmented per-point features.
///
/// Cells use half-open intervals; a point exactly on the global upper
/// boundary of any axis is clamped into the last cell so no point is lost at
/// the grid edge. Truncation is deterministic: within a cell the first
/// `max_points_per_subpillar` points in input order are kept, and cells past
/// `max_occupied_subpillars` (in first-seen order) are dropped whole.
pub fn assign_pillars(cloud: &PointCloud, grid: &GridConfig) -> Result<SubPillarBatch> {
    grid.validate()?;
    let (nx, ny, n_sub) = (grid.nx(), grid.ny(), grid.n_sub);
    let dz = grid.dz();

    let locate = |v: f64, lo: f64, hi: f64, size: f64, n: usize| -> Option<usize> {
        if v < lo || v > hi {
            return None;
        }
        Some((((v - lo) / size) as usize).min(n - 1))
    };

    // pass 1: map points to cells, collecting cells in first-seen order
    let mut cell_index: HashMap<CellKey, u32> = HashMap::new();
    let mut cells: Vec<CellKey> = Vec::new();
    let mut raw_counts: Vec<u32> = Vec::new();
    const OUT_OF_RANGE: u32 = u32::MAX;
    let mut point_cell: Vec<u32> = Vec::with_capacity(cloud.len());
    let mut dropped = 0usize;
    for p in cloud.iter() {
        let ix = locate(p[0] as f64, grid.x_range.0, grid.x_range.1, grid.grid_size, nx);
        let iy = locate(p[1] as f64, grid.y_range.0, grid.y_range.1, grid.grid_size, ny);
        let ih = locate(p[2] as f64, grid.z_range.0, grid.z_range.1, dz, n_sub);
        match (ix, iy, ih) {
            (Some(ix), Some(iy), Some(h)) => {
                let key = CellKey {
                    ix: ix as u32,
                    iy: iy as u32,
                    h: h as u32,
                };
                let idx = *cell_index.entry(key).or_insert_with(|| {
                    cells.push(key);
                    raw_counts.push(0);
                    (cells.len() - 1) as u32
                });
                raw_counts[idx as usize] += 1;
                point_cell.push(idx);
            }
            _ => {
                dropped += 1;
                point_cell.push(OUT_OF_RANGE);
            }
        }
    }

    let kept_cells = cells.len().min(grid.max_occupied_subpillars);
    cells.truncate(kept_cells);
    let counts: Vec<u32> = raw_counts[..kept_cells]
        .iter()
        .map(|&c| c.min(grid.max_points_per_subpillar as u32))
        .collect();

    let mut offsets = Vec::with_capacity(kept_cells);
    let mut total = 0usize;
    for &c in &counts {
        offsets.push(total);
        total += c as usize;
    }

    // pass 2: fill raw channels in input order and accumulate height sums
    let mut features = vec![0f32; total * POINT_FEATURES];
    let mut fill: Vec<u32> = vec![0; kept_cells];
    let mut sums: Vec<[f64; 3]> = vec![[0.0; 3]; kept_cells];
    let mut truncated = 0usize;
    for (pi, p) in cloud.iter().enumerate() {
        let ci = point_cell[pi];
        if ci == OUT_OF_RANGE {
            continue;
        }
        let ci = ci as usize;
        if ci >= kept_cells || fill[ci] >= counts[ci] {
            truncated += 1;
            continue;
        }
        let row = offsets[ci] + fill[ci] as usize;
        fill[ci] += 1;
        let base = row * POINT_FEATURES;
        features[base..base + 4].copy_from_slice(&p);
        sums[ci][0] += p[0] as f64;
        sums[ci][1] += p[1] as f64;
        sums[ci][2] += p[2] as f64;
    }

    // pass 3: offsets from the per-cell mean and from the cell center
    let mut z_mean = Vec::with_capacity(kept_cells);
    let mut z_center = Vec::with_capacity(kept_cells);
    for (ci, key) in cells.iter().enumerate() {
        let n = counts[ci] as f64;
        let mean = [sums[ci][0] / n, sums[ci][1] / n, sums[ci][2] / n];
        let center = grid.cell_center(key.ix as usize, key.iy as usize, key.h as usize);
        z_mean.push(mean[2]);
        z_center.push(center.2);
        for r in 0..counts[ci] as usize {
            let base = (offsets[ci] + r) * POINT_FEATURES;
            let (x, y, z) = (
                features[base] as f64,
                features[base + 1] as f64,
                features[base + 2] as f64,
            );
            features[base + 4] = (x - mean[0]) as f32;
            features[base + 5] = (y - mean[1]) as f32;
            features[base + 6] = (z - mean[2]) as f32;
            features[base + 7] = (x - center.0) as f32;
            features[base + 8] = (y - center.1) as f32;
            features[base + 9] = (z - center.2) as f32;
        }
    }

    let stats = AssignStats {
        assigned: total,
        dropped_out_of_range: dropped,
        truncated,
    };
    Ok(SubPillarBatch {
        cells,
        counts,
        offsets,
        features,
        z_mean,
        z_center,
        stats,
    })
}

/// Sinusoidal encoding of the two height summaries of a sub-pillar.
///
/// For each of `z_m` (mean point height) and `z_p` (slice center height),
/// normalized by `z_scale`, emits the pairs `(sin(2^i * pi * z), cos(2^i *
/// pi * z))` for `i = 0..frequencies`; all `z_m` pairs come first. The result
/// has `4 * frequencies` entries, each in `[-1, 1]`.
pub fn height_position_encoding(z_m: f64, z_p_center: f64, cfg: &HpeConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if !(z_m.is_finite() && z_p_center.is_finite()) {
        return Err(Error::Config(format!(
            "height encoding inputs must be finite, got ({z_m}, {z_p_center})"
        )));
    }
    let mut out = Vec::with_capacity(4 * cfg.frequencies);
    for z in [z_m, z_p_center] {
        let zn = z / cfg.z_scale;
        for i in 0..cfg.frequencies {
            // 2^i * zn is exact (exponent shift), so implementation and any
            // high-precision evaluation see the same argument
            let y = zn * (i as f64).exp2();
            out.push((PI * y).sin());
            out.push((PI * y).cos());
        }
    }
    Ok(out)
}

/// One row of an occupancy sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityRow {
    pub n_sub: usize,
    pub grid_size: f64,
    pub total_cells: u64,
    pub occupied_cells: u64,
    pub occupancy_ratio: f64,
}

/// Occupancy statistics over the cross product of split counts and grid
/// sizes, with truncation limits disabled. Ranges come from `grid`.
pub fn sparsity_stats(
    cloud: &PointCloud,
    grid: &GridConfig,
    n_sub_values: &[usize],
    grid_sizes: &[f64],
) -> Result<Vec<SparsityRow>> {
    let mut rows = Vec::with_capacity(n_sub_values.len() * grid_sizes.len());
    for &n_sub in n_sub_values {
        for &grid_size in grid_sizes {
            let cfg = GridConfig {
                grid_size,
                n_sub,
                max_points_per_subpillar: usize::MAX,
                max_occupied_subpillars: usize::MAX,
                ..grid.clone()
            };
            let batch = assign_pillars(cloud, &cfg)?;
            let total_cells = cfg.nx() as u64 * cfg.ny() as u64 * n_sub as u64;
            let occupied_cells = batch.num_cells() as u64;
            rows.push(SparsityRow {
                n_sub,
                grid_size,
                total_cells,
                occupied_cells,
                occupancy_ratio: occupied_cells as f64 / total_cells as f64,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use crate::scene::{synth_scene, SynthConfig};
    use rand::seq::SliceRandom;
    use rand::Rng as _;
    use std::collections::BTreeMap;

    fn test_grid() -> GridConfig {
        GridConfig {
            x_range: (-4.0, 4.0),
            y_range: (-4.0, 4.0),
            z_range: (-1.0, 2.0),
            grid_size: 0.5,
            n_sub: 3,
            max_points_per_subpillar: 32,
            max_occupied_subpillars: 10_000,
        }
    }

    #[test]
    fn single_point_at_cell_center_has_zero_offsets() {
        let grid = test_grid();
        // center of cell (ix=9, iy=8, h=1): x = -4 + 9.5*0.5, z = -1 + 1.5
        let mut cloud = PointCloud::new();
        cloud.push(0.75, 0.25, 0.5, 0.5);
        let batch = assign_pillars(&cloud, &grid).unwrap();
        assert_eq!(batch.num_cells(), 1);
        assert_eq!(batch.cells[0], CellKey { ix: 9, iy: 8, h: 1 });
        let row = batch.cell_points(0);
        assert_eq!(&row[..4], &[0.75, 0.25, 0.5, 0.5]);
        assert!(row[4..].iter().all(|&v| v == 0.0), "offsets: {:?}", &row[4..]);
    }

    #[test]
    fn two_points_share_mean() {
        let grid = test_grid();
        let mut cloud = PointCloud::new();
        // both in cell h=1 (z in [0,1)); cell center z = 0.5
        cloud.push(0.75, 0.25, 0.4, 0.0);
        cloud.push(0.75, 0.25, 0.6, 0.0);
        let batch = assign_pillars(&cloud, &grid).unwrap();
        assert_eq!(batch.num_cells(), 1);
        assert!((batch.z_mean[0] - 0.5).abs() < 1e-7);
        let rows = batch.cell_points(0);
        assert!((rows[6] - (-0.1)).abs() < 1e-6); // z_c of first point
        assert!((rows[POINT_FEATURES + 6] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn out_of_range_points_are_dropped() {
        let grid = test_grid();
        let mut cloud = PointCloud::new();
        cloud.push(-4.5, 0.0, 0.0, 0.0);
        let batch = assign_pillars(&cloud, &grid).unwrap();
        assert_eq!(batch.num_cells(), 0);
        assert_eq!(batch.stats.dropped_out_of_range, 1);
    }

    #[test]
    fn upper_boundary_clamps_into_last_cell() {
        let grid = test_grid();
        let mut cloud = PointCloud::new();
        cloud.push(4.0, 4.0, 2.0, 0.0); // exactly on every upper bound
        cloud.push(0.5, 0.0, 1.0, 0.0); // on an interior z boundary -> next cell
        let batch = assign_pillars(&cloud, &grid).unwrap();
        assert_eq!(batch.cells[0], CellKey { ix: 15, iy: 15, h: 2 });
        assert_eq!(batch.cells[1].h, 2);
        assert_eq!(batch.stats.dropped_out_of_range, 0);
    }

    #[test]
    fn truncation_is_first_seen_and_conserves() {
        let mut grid = test_grid();
        grid.max_points_per_subpillar = 2;
        grid.max_occupied_subpillars = 1;
        let mut cloud = PointCloud::new();
        for i in 0..4 {
            cloud.push(0.1, 0.1, 0.1, i as f32 / 4.0); // one cell, 4 points
        }
        cloud.push(2.0, 2.0, 0.1, 0.0); // second cell, dropped by the cap
        cloud.push(9.0, 0.0, 0.0, 0.0); // out of range
        let batch = assign_pillars(&cloud, &grid).unwrap();
        assert_eq!(batch.num_cells(), 1);
        assert_eq!(batch.counts, vec![2]);
        // first two points in input order survive
        assert_eq!(batch.cell_points(0)[3], 0.0);
        assert_eq!(batch.cell_points(0)[POINT_FEATURES + 3], 0.25);
        let s = batch.stats;
        assert_eq!(
            (s.assigned, s.dropped_out_of_range, s.truncated),
            (2, 1, 3)
        );
        assert_eq!(s.assigned + s.dropped_out_of_range + s.truncated, cloud.len());
    }

    #[test]
    fn conservation_on_random_clouds() {
        let mut rng = crate::rng_from_seed(31);
        for _ in 0..20 {
            let mut grid = test_grid();
            grid.max_points_per_subpillar = rng.gen_range(1..6);
            grid.max_occupied_subpillars = rng.gen_range(1..40);
            let mut cloud = PointCloud::new();
            for _ in 0..rng.gen_range(0..500) {
                cloud.push(
                    rng.gen_range(-6.0..6.0),
                    rng.gen_range(-6.0..6.0),
                    rng.gen_range(-2.0..3.0),
                    0.5,
                );
            }
            let s = assign_pillars(&cloud, &grid).unwrap().stats;
            assert_eq!(
                s.assigned + s.dropped_out_of_range + s.truncated,
                cloud.len()
            );
        }
    }

    #[test]
    fn permutation_invariant_as_multisets_when_uncapped() {
        let mut rng = crate::rng_from_seed(77);
        let mut grid = test_grid();
        grid.max_points_per_subpillar = usize::MAX;
        grid.max_occupied_subpillars = usize::MAX;
        let mut points: Vec<[f32; 4]> = (0..300)
            .map(|_| {
                [
                    rng.gen_range(-4.0..4.0f32),
                    rng.gen_range(-4.0..4.0),
                    rng.gen_range(-1.0..2.0),
                    rng.gen_range(0.0..1.0),
                ]
            })
            .collect();
        let cloud_of = |pts: &[[f32; 4]]| {
            let mut c = PointCloud::new();
            for p in pts {
                c.push(p[0], p[1], p[2], p[3]);
            }
            c
        };
        let collect = |batch: &SubPillarBatch| {
            let mut map: BTreeMap<(u32, u32, u32), Vec<Vec<u32>>> = BTreeMap::new();
            for (i, key) in batch.cells.iter().enumerate() {
                let mut rows: Vec<Vec<u32>> = batch
                    .cell_points(i)
                    .chunks_exact(POINT_FEATURES)
                    .map(|r| r.iter().map(|v| v.to_bits()).collect())
                    .collect();
                rows.sort();
                map.insert((key.ix, key.iy, key.h), rows);
            }
            map
        };
        let before = collect(&assign_pillars(&cloud_of(&points), &grid).unwrap());
        points.shuffle(&mut rng);
        let after = collect(&assign_pillars(&cloud_of(&points), &grid).unwrap());
        assert_eq!(before, after);
    }

    #[test]
    fn single_layer_matches_plain_pillar_oracle() {
        let scene = synth_scene(&SynthConfig {
            ground_points: 800,
            object_counts: [2, 1, 1],
            extent_x: (-4.0, 4.0),
            extent_y: (-4.0, 4.0),
            seed: 10,
            ..SynthConfig::default()
        })
        .unwrap();
        let mut grid = test_grid();
        grid.n_sub = 1;
        let batch = assign_pillars(&scene.cloud, &grid).unwrap();
        let reference = oracle::plain_pillar_cells(&scene.cloud, &grid);
        assert_eq!(batch.num_cells(), reference.len());
        for (i, key) in batch.cells.iter().enumerate() {
            let rows = reference
                .get(&(key.ix, key.iy))
                .unwrap_or_else(|| panic!("cell {key:?} missing from oracle"));
            let got = batch.cell_points(i);
            assert_eq!(got.len(), rows.len() * POINT_FEATURES);
            for (r, row) in rows.iter().enumerate() {
                for (c, v) in row.iter().enumerate() {
                    let g = got[r * POINT_FEATURES + c];
                    assert!((g - v).abs() <= 1e-6, "cell {key:?} row {r} ch {c}: {g} vs {v}");
                }
            }
        }
    }

    #[test]
    fn occupied_subpillars_bounded_by_pillars_and_points() {
        let scene = synth_scene(&SynthConfig {
            ground_points: 400,
            object_counts: [2, 2, 2],
            extent_x: (-4.0, 4.0),
            extent_y: (-4.0, 4.0),
            seed: 6,
            ..SynthConfig::default()
        })
        .unwrap();
        for n_sub in [2usize, 4, 8] {
            let mut single = test_grid();
            single.n_sub = 1;
            single.max_points_per_subpillar = usize::MAX;
            single.max_occupied_subpillars = usize::MAX;
            let mut multi = single.clone();
            multi.n_sub = n_sub;
            let base = assign_pillars(&scene.cloud, &single).unwrap();
            let split = assign_pillars(&scene.cloud, &multi).unwrap();
            let bound = (n_sub * base.num_cells()).min(split.stats.assigned);
            assert!(split.num_cells() <= bound);
        }
    }

    #[test]
    fn hpe_basic_values() {
        let cfg = HpeConfig {
            frequencies: 2,
            z_scale: 1.0,
            enabled: true,
        };
        let zero = height_position_encoding(0.0, 0.0, &cfg).unwrap();
        assert_eq!(zero, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);

        // quarter period: z_m = z_scale / 2 with one frequency
        let cfg1 = HpeConfig {
            frequencies: 1,
            z_scale: 2.0,
            enabled: true,
        };
        let enc = height_position_encoding(1.0, 0.0, &cfg1).unwrap();
        assert!((enc[0] - 1.0).abs() < 1e-15);
        assert!(enc[1].abs() < 1e-15);
        assert_eq!(&enc[2..], &[0.0, 1.0]);
    }

    #[test]
    fn hpe_matches_reference_and_stays_bounded() {
        let cfg = HpeConfig {
            frequencies: 3,
            z_scale: 6.0,
            enabled: true,
        };
        let mut rng = crate::rng_from_seed(12);
        for _ in 0..200 {
            let z_m = rng.gen_range(-6.0..6.0);
            let z_p = rng.gen_range(-6.0..6.0);
            let got = height_position_encoding(z_m, z_p, &cfg).unwrap();
            let want = oracle::hpe_reference(z_m, z_p, cfg.frequencies, cfg.z_scale);
            assert_eq!(got.len(), want.len());
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-9);
                assert!((-1.0..=1.0).contains(g));
            }
        }
    }

    #[test]
    fn hpe_periodic_in_two_z_scales() {
        let cfg = HpeConfig {
            frequencies: 4,
            z_scale: 3.0,
            enabled: true,
        };
        let a = height_position_encoding(0.7, -1.3, &cfg).unwrap();
        let b = height_position_encoding(0.7 + 2.0 * cfg.z_scale, -1.3, &cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn sparsity_stats_trivial_and_halving() {
        let grid = test_grid();
        let empty = PointCloud::new();
        let rows = sparsity_stats(&empty, &grid, &[1, 4], &[0.5, 0.25]).unwrap();
        assert!(rows.iter().all(|r| r.occupied_cells == 0));

        let mut one = PointCloud::new();
        one.push(0.1, 0.1, 0.1, 0.0);
        let rows = sparsity_stats(&one, &grid, &[1, 4], &[0.5, 0.25]).unwrap();
        assert!(rows.iter().all(|r| r.occupied_cells == 1));

        let scene = synth_scene(&SynthConfig {
            ground_points: 2000,
            object_counts: [2, 1, 1],
            extent_x: (-4.0, 4.0),
            extent_y: (-4.0, 4.0),
            seed: 20,
            ..SynthConfig::default()
        })
        .unwrap();
        let rows = sparsity_stats(&scene.cloud, &grid, &[1], &[0.5, 0.25]).unwrap();
        assert_eq!(rows[1].total_cells, rows[0].total_cells * 4);
        assert!(rows[1].occupied_cells < rows[0].occupied_cells * 4);
    }

    #[test]
    fn grid_validation_rejects_fractional_cells() {
        let mut grid = test_grid();
        grid.grid_size = 0.3;
        assert!(grid.validate().is_err());
        grid.grid_size = 0.5;
        assert!(grid.validate().is_ok());
    }
}
