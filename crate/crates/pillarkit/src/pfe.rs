//! Pillar feature extraction and pseudo-image scatter.
//!
//! Every occupied sub-pillar runs two voxel-feature-encoding (VFE) layers:
//! a per-point linear + norm + ReLU, a max over the cell's points, the max
//! broadcast back and concatenated onto each point, then a second linear +
//! norm + ReLU and a final max producing one vector per sub-pillar. The
//! height position encoding is appended per sub-pillar (not per point), and
//! the result is scattered into a dense 2D pseudo-image whose channel axis
//! stacks the `n_sub` vertical slices. Empty slices stay exactly zero.

use crate::nn::{self, Tensor2, Tensor4, WeightSpec, WeightStore};
use crate::pillar::{GridConfig, HpeConfig, SubPillarBatch, POINT_FEATURES};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Channel plan for the pillar feature extractor.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PfeConfig {
    /// Raw 4 point channels plus 6 augmentation channels.
    pub in_channels: usize,
    pub vfe1_out: usize,
    pub vfe2_out: usize,
    #[serde(skip, default)]
    pub hpe: HpeConfig,
}

impl Default for PfeConfig {
    fn default() -> Self {
        PfeConfig {
            in_channels: POINT_FEATURES,
            vfe1_out: 32,
            vfe2_out: 64,
            hpe: HpeConfig::default(),
        }
    }
}

impl PfeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels != POINT_FEATURES {
            return Err(Error::Config(format!(
                "pfe in_channels must be {POINT_FEATURES} (raw 4 + augmented 6), got {}",
                self.in_channels
            )));
        }
        if self.vfe1_out < 1 || self.vfe2_out < 1 {
            return Err(Error::Config("vfe output widths must be >= 1".into()));
        }
        self.hpe.validate()
    }

    /// Channels per sub-pillar after the optional height encoding.
    pub fn c_sp(&self) -> usize {
        self.vfe2_out + self.hpe.channels()
    }
}

/// Weight tensors consumed by [`vfe_forward`], under the `pfe.` prefix.
pub fn weight_specs(cfg: &PfeConfig) -> Vec<WeightSpec> {
    let mut specs = Vec::new();
    let layer = |specs: &mut Vec<WeightSpec>, name: &str, c_in: usize, c_out: usize| {
        specs.push(WeightSpec {
            name: format!("pfe.{name}.weight"),
            shape: vec![c_in, c_out],
            fan_in: c_in,
        });
        specs.push(WeightSpec {
            name: format!("pfe.{name}.bias"),
            shape: vec![c_out],
            fan_in: c_in,
        });
        specs.push(WeightSpec {
            name: format!("pfe.{name}.norm.scale"),
            shape: vec![c_out],
            fan_in: c_out,
        });
        specs.push(WeightSpec {
            name: format!("pfe.{name}.norm.shift"),
            shape: vec![c_out],
            fan_in: c_out,
        });
    };
    layer(&mut specs, "vfe1", cfg.in_channels, cfg.vfe1_out);
    layer(&mut specs, "vfe2", 2 * cfg.vfe1_out, cfg.vfe2_out);
    specs
}

fn vfe_layer(x: &Tensor2, store: &WeightStore, name: &str) -> Result<Tensor2> {
    let w = store.tensor2(&format!("pfe.{name}.weight"))?;
    let b = store.vector(&format!("pfe.{name}.bias"))?;
    let scale = store.vector(&format!("pfe.{name}.norm.scale"))?;
    let shift = store.vector(&format!("pfe.{name}.norm.shift"))?;
    Ok(nn::relu2(&nn::norm_affine2(&nn::linear(x, &w, b)?, scale, shift)?))
}

/// Max over each cell's rows. `out[cell] = max over that cell's points`.
fn cell_max(x: &Tensor2, batch: &SubPillarBatch) -> Tensor2 {
    let mut out = Tensor2::zeros(batch.num_cells(), x.cols);
    for ci in 0..batch.num_cells() {
        let start = batch.cell_offset(ci);
        let count = batch.counts[ci] as usize;
        let orow = out.row_mut(ci);
        orow.copy_from_slice(x.row(start));
        for r in start + 1..start + count {
            for (o, &v) in orow.iter_mut().zip(x.row(r)) {
                *o = o.max(v);
            }
        }
    }
    out
}

/// Run both VFE layers; returns one `vfe2_out`-wide row per occupied cell.
pub fn vfe_forward(
    batch: &SubPillarBatch,
    cfg: &PfeConfig,
    store: &WeightStore,
) -> Result<Tensor2> {
    cfg.validate()?;
    let total = batch.total_points();
    let x = Tensor2::from_vec(total, POINT_FEATURES, batch.features.clone())?;
    let h1 = vfe_layer(&x, store, "vfe1")?;
    let m1 = cell_max(&h1, batch);

    // broadcast each cell's max back onto its points
    let mut x2 = Tensor2::zeros(total, 2 * cfg.vfe1_out);
    for ci in 0..batch.num_cells() {
        let start = batch.cell_offset(ci);
        for r in start..start + batch.counts[ci] as usize {
            let row = x2.row_mut(r);
            row[..cfg.vfe1_out].copy_from_slice(h1.row(r));
            row[cfg.vfe1_out..].copy_from_slice(m1.row(ci));
        }
    }
    let h2 = vfe_layer(&x2, store, "vfe2")?;
    Ok(cell_max(&h2, batch))
}

/// Append the height position encoding to every cell feature. Identity when
/// the encoding is disabled.
pub fn attach_hpe(cell_features: &Tensor2, batch: &SubPillarBatch, hpe: &HpeConfig) -> Result<Tensor2> {
    if !hpe.enabled {
        return Ok(cell_features.clone());
    }
    if cell_features.rows != batch.num_cells() {
        return Err(Error::Shape(format!(
            "attach_hpe: {} feature rows vs {} cells",
            cell_features.rows,
            batch.num_cells()
        )));
    }
    let extra = hpe.channels();
    let mut out = Tensor2::zeros(cell_features.rows, cell_features.cols + extra);
    for ci in 0..cell_features.rows {
        let enc = crate::pillar::height_position_encoding(batch.z_mean[ci], batch.z_center[ci], hpe)?;
        let row = out.row_mut(ci);
        row[..cell_features.cols].copy_from_slice(cell_features.row(ci));
        for (dst, src) in row[cell_features.cols..].iter_mut().zip(&enc) {
            *dst = *src as f32;
        }
    }
    Ok(out)
}

/// Scatter per-cell features into the dense `(1, n_sub * c_sp, ny, nx)`
/// pseudo-image. Slice `h` of cell `(ix, iy)` lands in the channel block
/// `[h * c_sp, (h + 1) * c_sp)` at `(iy, ix)`; everything else stays zero.
pub fn scatter_to_pseudo_image(
    batch: &SubPillarBatch,
    cell_features: &Tensor2,
    grid: &GridConfig,
) -> Result<Tensor4> {
    grid.validate()?;
    if cell_features.rows != batch.num_cells() {
        return Err(Error::Shape(format!(
            "scatter: {} feature rows vs {} cells",
            cell_features.rows,
            batch.num_cells()
        )));
    }
    let c_sp = cell_features.cols;
    let (nx, ny, n_sub) = (grid.nx(), grid.ny(), grid.n_sub);
    let mut out = Tensor4::zeros(1, n_sub * c_sp, ny, nx);
    for (ci, key) in batch.cells.iter().enumerate() {
        if key.ix as usize >= nx || key.iy as usize >= ny || key.h as usize >= n_sub {
            return Err(Error::Defect(format!(
                "scatter: cell {key:?} outside grid ({nx}, {ny}, {n_sub})"
            )));
        }
        let row = cell_features.row(ci);
        let base_c = key.h as usize * c_sp;
        for (ch, &v) in row.iter().enumerate() {
            out.set(0, base_c + ch, key.iy as usize, key.ix as usize, v);
        }
    }
    Ok(out)
}
