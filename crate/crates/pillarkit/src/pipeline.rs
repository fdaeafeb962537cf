//! End-to-end pipeline configuration and the single-scene inference driver.
//!
//! One JSON config carries every knob: grid, height encoding, extractor
//! widths, backbone (preset name or full layout), decode and eval settings,
//! plus the synthetic-scene section used by the generator commands. Unknown
//! keys are rejected everywhere, and validation runs before any output is
//! touched. All randomness descends from the single `seed`.

use crate::dfsa::{self, ScbConfig};
use crate::geom::Detection;
use crate::head::{self, DecodeConfig};
use crate::nn::{Tensor4, WeightSpec, WeightStore};
use crate::pfe::{self, PfeConfig};
use crate::pillar::{self, GridConfig, HpeConfig};
use crate::scene::{PointCloud, SynthConfig};
use crate::{eval::EvalConfig, Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Extractor channel widths as they appear in the config file; the height
/// encoding lives at the top level and is joined in by [`PipelineConfig::pfe_config`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PfeChannels {
    pub in_channels: usize,
    pub vfe1_out: usize,
    pub vfe2_out: usize,
}

impl Default for PfeChannels {
    fn default() -> Self {
        let d = PfeConfig::default();
        PfeChannels {
            in_channels: d.in_channels,
            vfe1_out: d.vfe1_out,
            vfe2_out: d.vfe2_out,
        }
    }
}

/// Backbone selection: a named preset or a full layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScbSetting {
    Preset(String),
    Full(ScbConfig),
}

impl Default for ScbSetting {
    fn default() -> Self {
        ScbSetting::Preset("s24_n35".into())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub grid: GridConfig,
    pub hpe: HpeConfig,
    pub pfe: PfeChannels,
    pub scb: ScbSetting,
    pub decode: DecodeConfig,
    pub eval: EvalConfig,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub weights: Option<PathBuf>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            grid: GridConfig {
                x_range: (-12.8, 12.8),
                y_range: (-12.8, 12.8),
                z_range: (-3.0, 3.0),
                grid_size: 0.16,
                n_sub: 6,
                max_points_per_subpillar: 32,
                max_occupied_subpillars: 60_000,
            },
            hpe: HpeConfig::default(),
            pfe: PfeChannels::default(),
            scb: ScbSetting::default(),
            decode: DecodeConfig::default(),
            eval: EvalConfig::default(),
            synth: SynthConfig::default(),
            weights: None,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| {
            Error::Config(format!("config parse error: {e}"))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization is infallible")
    }

    /// Resolve the backbone setting to a concrete layout.
    pub fn scb_config(&self) -> Result<ScbConfig> {
        match &self.scb {
            ScbSetting::Preset(name) => dfsa::preset(name).ok_or_else(|| {
                Error::Config(format!(
                    "unknown backbone preset `{name}` (known: {})",
                    dfsa::preset_names().join(", ")
                ))
            }),
            ScbSetting::Full(cfg) => Ok(cfg.clone()),
        }
    }

    /// Extractor config with the height encoding joined in.
    pub fn pfe_config(&self) -> PfeConfig {
        PfeConfig {
            in_channels: self.pfe.in_channels,
            vfe1_out: self.pfe.vfe1_out,
            vfe2_out: self.pfe.vfe2_out,
            hpe: self.hpe.clone(),
        }
    }

    /// Pseudo-image channel count `n_sub * c_sp`.
    pub fn pseudo_channels(&self) -> usize {
        self.grid.n_sub * self.pfe_config().c_sp()
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.hpe.validate()?;
        self.pfe_config().validate()?;
        let scb = self.scb_config()?;
        scb.validate()?;
        self.decode.validate()?;
        self.eval.validate()?;
        self.synth.validate()?;
        if self.decode.output_stride != scb.output_stride() {
            return Err(Error::Config(format!(
                "decode.output_stride {} must equal the backbone output stride {}",
                self.decode.output_stride,
                scb.output_stride()
            )));
        }
        let div = scb.required_divisor();
        if self.grid.nx() % div != 0 || self.grid.ny() % div != 0 {
            return Err(Error::Config(format!(
                "grid is {}x{} cells; the backbone needs dimensions divisible by {div}",
                self.grid.nx(),
                self.grid.ny()
            )));
        }
        Ok(())
    }

    /// Every weight tensor the full pipeline consumes.
    pub fn weight_specs(&self) -> Result<Vec<WeightSpec>> {
        let scb = self.scb_config()?;
        let mut specs = pfe::weight_specs(&self.pfe_config());
        specs.extend(dfsa::weight_specs(&scb, self.pseudo_channels()));
        specs.extend(head::weight_specs(scb.output_channels()));
        Ok(specs)
    }
}

/// Wall-clock per stage of one inference call, in milliseconds.
#[derive(Debug, Clone, Default)]
pub struct StageTimings {
    pub voxelize_ms: f64,
    pub pfe_ms: f64,
    pub scatter_ms: f64,
    pub backbone_ms: f64,
    pub head_ms: f64,
    pub decode_ms: f64,
    pub total_ms: f64,
}

impl StageTimings {
    /// `(stage, milliseconds)` rows in pipeline order.
    pub fn stages(&self) -> [(&'static str, f64); 7] {
        [
            ("voxelize", self.voxelize_ms),
            ("pfe", self.pfe_ms),
            ("scatter", self.scatter_ms),
            ("backbone", self.backbone_ms),
            ("head", self.head_ms),
            ("decode", self.decode_ms),
            ("total", self.total_ms),
        ]
    }
}

/// A validated, weight-loaded pipeline ready to run scenes. Immutable after
/// construction; share freely across threads.
pub struct Pipeline {
    grid: GridConfig,
    pfe_cfg: PfeConfig,
    scb: ScbConfig,
    decode_cfg: DecodeConfig,
    store: WeightStore,
}

impl Pipeline {
    /// Validate the config, resolve the backbone, and check that every
    /// weight is present with the declared shape.
    pub fn new(cfg: &PipelineConfig, store: WeightStore) -> Result<Pipeline> {
        cfg.validate()?;
        store.check_specs(&cfg.weight_specs()?)?;
        Ok(Pipeline {
            grid: cfg.grid.clone(),
            pfe_cfg: cfg.pfe_config(),
            scb: cfg.scb_config()?,
            decode_cfg: cfg.decode.clone(),
            store,
        })
    }

    pub fn grid(&self) -> &GridConfig {
        &self.grid
    }

    /// Run the full pipeline on one cloud.
    pub fn infer(&self, cloud: &PointCloud) -> Result<(Vec<Detection>, StageTimings)> {
        let mut t = StageTimings::default();
        let start = Instant::now();

        let mark = Instant::now();
        let batch = pillar::assign_pillars(cloud, &self.grid)?;
        t.voxelize_ms = ms_since(mark);

        let mark = Instant::now();
        let cell_feats = pfe::vfe_forward(&batch, &self.pfe_cfg, &self.store)?;
        let cell_feats = pfe::attach_hpe(&cell_feats, &batch, &self.pfe_cfg.hpe)?;
        t.pfe_ms = ms_since(mark);

        let mark = Instant::now();
        let pseudo = pfe::scatter_to_pseudo_image(&batch, &cell_feats, &self.grid)?;
        t.scatter_ms = ms_since(mark);

        let mark = Instant::now();
        let features = dfsa::scb_forward(&pseudo, &self.scb, &self.store)?;
        t.backbone_ms = ms_since(mark);

        let mark = Instant::now();
        let outputs = head::head_forward(&features, &self.store)?;
        t.head_ms = ms_since(mark);

        let mark = Instant::now();
        let dets = head::decode(&outputs, &self.grid, &self.decode_cfg)?;
        t.decode_ms = ms_since(mark);

        t.total_ms = ms_since(start);
        Ok((dets, t))
    }

    /// The dense BEV pseudo-image for one cloud (diagnostics and tests).
    pub fn pseudo_image(&self, cloud: &PointCloud) -> Result<Tensor4> {
        let batch = pillar::assign_pillars(cloud, &self.grid)?;
        let cell_feats = pfe::vfe_forward(&batch, &self.pfe_cfg, &self.store)?;
        let cell_feats = pfe::attach_hpe(&cell_feats, &batch, &self.pfe_cfg.hpe)?;
        pfe::scatter_to_pseudo_image(&batch, &cell_feats, &self.grid)
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1000.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_weights;
    use crate::scene::synth_scene;

    /// A small, fast configuration used across the test suites.
    pub(crate) fn tiny_config() -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.grid.x_range = (-6.4, 6.4);
        cfg.grid.y_range = (-6.4, 6.4);
        cfg.grid.grid_size = 0.32;
        cfg.grid.n_sub = 2;
        cfg.hpe.frequencies = 2;
        cfg.pfe.vfe1_out = 8;
        cfg.pfe.vfe2_out = 12;
        cfg.scb = ScbSetting::Full(ScbConfig {
            modules: vec![crate::dfsa::DfsaConfig {
                stride: 2,
                scales: vec![2, 4],
                blocks: vec![1, 2],
                branch_channels: 8,
                fused_channels: 12,
            }],
            concat_stride: 2,
        });
        cfg.synth.extent_x = (-5.0, 5.0);
        cfg.synth.extent_y = (-5.0, 5.0);
        cfg.synth.ground_points = 2000;
        cfg.validate().unwrap();
        cfg
    }

    #[test]
    fn default_config_is_valid() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.grid.nx(), 160);
        assert_eq!(cfg.pseudo_channels(), 6 * (64 + 16));
    }

    #[test]
    fn config_json_round_trip_rejects_unknown_keys() {
        let cfg = tiny_config();
        let text = cfg.to_json();
        let back = PipelineConfig::from_json(&text).unwrap();
        assert_eq!(back.grid.nx(), cfg.grid.nx());
        assert_eq!(back.to_json(), text);

        let with_typo = text.replace("\"seed\"", "\"sead\"");
        assert!(PipelineConfig::from_json(&with_typo).is_err());

        // preset names resolve, bogus ones do not
        let preset_cfg = r#"{"grid":{"x_range":[-6.4,6.4],"y_range":[-6.4,6.4],"z_range":[-3.0,3.0],"grid_size":0.32,"n_sub":2,"max_points_per_subpillar":32,"max_occupied_subpillars":60000},"hpe":{"frequencies":2,"z_scale":6.0,"enabled":true},"pfe":{"in_channels":10,"vfe1_out":8,"vfe2_out":12},"scb":"s24_n35","decode":{"top_k":100,"score_threshold":0.3,"nms_threshold":0.5,"beta":[0.5,0.5,0.5],"output_stride":2},"eval":{"iou_thresholds":[0.7,0.5,0.5],"iou_kind":"3d","recall_positions":40,"level1_min_points":6},"seed":1}"#;
        assert!(PipelineConfig::from_json(preset_cfg).is_ok());
        assert!(PipelineConfig::from_json(&preset_cfg.replace("s24_n35", "s99")).is_err());
    }

    #[test]
    fn pipeline_rejects_missing_or_misshapen_weights() {
        let cfg = tiny_config();
        assert!(Pipeline::new(&cfg, WeightStore::new()).is_err());
        let mut store = init_weights(&cfg.weight_specs().unwrap(), 1).unwrap();
        let entry = store.get_mut("pfe.vfe1.bias").unwrap();
        entry.shape = vec![entry.shape[0] + 1];
        entry.data.push(0.0);
        assert!(Pipeline::new(&cfg, store).is_err());
    }

    #[test]
    fn empty_cloud_runs_end_to_end() {
        let cfg = tiny_config();
        let store = init_weights(&cfg.weight_specs().unwrap(), 7).unwrap();
        let pipeline = Pipeline::new(&cfg, store).unwrap();
        let (dets, timings) = pipeline.infer(&PointCloud::new()).unwrap();
        // an all-zero pseudo-image decodes deterministically; boxes, if any,
        // must still be valid
        for d in &dets {
            assert!((0.0..=1.0).contains(&d.score));
        }
        assert!(timings.total_ms >= 0.0);
    }

    #[test]
    fn inference_is_deterministic() {
        let cfg = tiny_config();
        let store = init_weights(&cfg.weight_specs().unwrap(), 3).unwrap();
        let pipeline = Pipeline::new(&cfg, store).unwrap();
        let scene = synth_scene(&cfg.synth).unwrap();
        let (a, _) = pipeline.infer(&scene.cloud).unwrap();
        let (b, _) = pipeline.infer(&scene.cloud).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.bbox, y.bbox);
            assert_eq!(x.score.to_bits(), y.score.to_bits());
            assert_eq!(x.class_id, y.class_id);
        }
    }
}
