//! Point clouds, labeled scenes, and the synthetic scene generator.
//!
//! Real LiDAR sweeps concentrate their returns near the ground plane, with
//! object returns spread over a shallow band above it. The generator here
//! reproduces that shape on purpose: ground points get normally distributed
//! heights, object points are sampled on box faces (mostly the vertical ones,
//! which is what a side-looking sensor sees), and every object is seated on
//! the ground plane. The height-distribution and sub-pillar occupancy
//! statistics downstream depend on this structure.

pub mod io;

use crate::geom::Box7;
use crate::{Error, Result, Rng};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Flat `(x, y, z, intensity)` point storage, 4 floats per point.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    data: Vec<f32>,
}

impl PointCloud {
    pub fn new() -> Self {
        Self::default()
    }

    /// Wrap a flat buffer, validating stride, finiteness, and intensity range.
    pub fn from_flat(data: Vec<f32>) -> Result<Self> {
        if data.len() % 4 != 0 {
            return Err(Error::Config(format!(
                "point buffer length {} is not a multiple of 4",
                data.len()
            )));
        }
        for (i, p) in data.chunks_exact(4).enumerate() {
            validate_point(p[0], p[1], p[2], p[3])
                .map_err(|detail| Error::Config(format!("point {i}: {detail}")))?;
        }
        Ok(Self { data })
    }

    pub fn len(&self) -> usize {
        self.data.len() / 4
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, i: usize) -> [f32; 4] {
        let p = &self.data[i * 4..i * 4 + 4];
        [p[0], p[1], p[2], p[3]]
    }

    pub fn push(&mut self, x: f32, y: f32, z: f32, intensity: f32) {
        debug_assert!(validate_point(x, y, z, intensity).is_ok());
        self.data.extend_from_slice(&[x, y, z, intensity]);
    }

    pub fn as_flat(&self) -> &[f32] {
        &self.data
    }

    pub fn iter(&self) -> impl Iterator<Item = [f32; 4]> + '_ {
        self.data.chunks_exact(4).map(|p| [p[0], p[1], p[2], p[3]])
    }
}

fn validate_point(x: f32, y: f32, z: f32, intensity: f32) -> std::result::Result<(), String> {
    if !(x.is_finite() && y.is_finite() && z.is_finite()) {
        return Err(format!("non-finite coordinate ({x}, {y}, {z})"));
    }
    if !(0.0..=1.0).contains(&intensity) {
        return Err(format!("intensity {intensity} outside [0, 1]"));
    }
    Ok(())
}

/// A ground-truth box with its class: 0 vehicle, 1 pedestrian, 2 cyclist.
#[derive(Debug, Clone, Copy)]
pub struct LabeledBox {
    pub bbox: Box7,
    pub class_id: usize,
    /// Filled on demand by [`count_points_in_box`] consumers.
    pub num_points_inside: Option<usize>,
}

/// One frame: a cloud, its labels, and an identifier.
#[derive(Debug, Clone)]
pub struct Scene {
    pub cloud: PointCloud,
    pub labels: Vec<LabeledBox>,
    pub id: String,
}

/// Synthetic scene parameters. All distances are meters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub ground_z_mean: f64,
    pub ground_z_std: f64,
    pub ground_points: usize,
    /// Objects per class (vehicle, pedestrian, cyclist).
    pub object_counts: [usize; 3],
    /// Mean (length, width, height) per class; sampled sizes jitter ±15%.
    pub size_priors: [[f64; 3]; 3],
    /// Inclusive (min, max) surface points per object, per class.
    pub points_per_object: [[usize; 2]; 3],
    pub extent_x: (f64, f64),
    pub extent_y: (f64, f64),
    /// Minimum horizontal spacing between object centers.
    pub min_center_distance: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            ground_z_mean: 0.0,
            ground_z_std: 0.05,
            ground_points: 20_000,
            object_counts: [4, 3, 3],
            size_priors: [[4.5, 2.0, 1.6], [0.8, 0.8, 1.7], [1.8, 0.8, 1.7]],
            points_per_object: [[100, 300], [30, 80], [40, 100]],
            extent_x: (-10.0, 10.0),
            extent_y: (-10.0, 10.0),
            min_center_distance: 5.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ground_z_std > 0.0) {
            return Err(Error::Config("ground_z_std must be > 0".into()));
        }
        if self.extent_x.0 >= self.extent_x.1 || self.extent_y.0 >= self.extent_y.1 {
            return Err(Error::Config("scene extent must have lo < hi".into()));
        }
        for (c, prior) in self.size_priors.iter().enumerate() {
            if prior.iter().any(|&d| !(d > 0.0)) {
                return Err(Error::Config(format!("class {c} size prior must be > 0")));
            }
        }
        for (c, [lo, hi]) in self.points_per_object.iter().enumerate() {
            if lo > hi {
                return Err(Error::Config(format!(
                    "class {c} points_per_object has min {lo} > max {hi}"
                )));
            }
        }
        if !(self.min_center_distance >= 0.0) {
            return Err(Error::Config("min_center_distance must be >= 0".into()));
        }
        Ok(())
    }

    /// Tallest class prior; the object height band of a generated scene.
    pub fn max_object_height(&self) -> f64 {
        self.size_priors
            .iter()
            .map(|p| p[2] * SIZE_JITTER_HI)
            .fold(0.0, f64::max)
    }
}

/// Index layout of a generated cloud: ground points first, then each
/// object's points in label order.
#[derive(Debug, Clone)]
pub struct SynthBreakdown {
    pub ground_points: usize,
    pub object_point_counts: Vec<usize>,
}

const SIZE_JITTER_LO: f64 = 0.85;
const SIZE_JITTER_HI: f64 = 1.15;
/// Object points may leak horizontally up to this factor of the half-extent.
const FOOTPRINT_INFLATION: f64 = 1.05;
/// Gaussian jitter applied to face samples (2 cm).
const FACE_JITTER_STD: f64 = 0.02;
const PLACEMENT_ATTEMPTS: usize = 64;

/// Generate a deterministic synthetic scene.
pub fn synth_scene(cfg: &SynthConfig) -> Result<Scene> {
    synth_scene_detailed(cfg).map(|(scene, _)| scene)
}

/// [`synth_scene`] plus the ground/object split of the generated cloud.
pub fn synth_scene_detailed(cfg: &SynthConfig) -> Result<(Scene, SynthBreakdown)> {
    cfg.validate()?;
    let mut rng = crate::rng_from_seed(cfg.seed);
    let normal_ground = Normal::new(cfg.ground_z_mean, cfg.ground_z_std)
        .map_err(|e| Error::Config(format!("ground height distribution: {e}")))?;
    let jitter = Normal::new(0.0, FACE_JITTER_STD).expect("constant stddev is valid");

    let mut cloud = PointCloud::new();
    for _ in 0..cfg.ground_points {
        let x = rng.gen_range(cfg.extent_x.0..cfg.extent_x.1);
        let y = rng.gen_range(cfg.extent_y.0..cfg.extent_y.1);
        let z = normal_ground.sample(&mut rng);
        let intensity = rng.gen::<f64>();
        cloud.push(x as f32, y as f32, z as f32, intensity as f32);
    }

    let mut labels: Vec<LabeledBox> = Vec::new();
    let mut object_point_counts = Vec::new();
    for class_id in 0..3 {
        for _ in 0..cfg.object_counts[class_id] {
            let prior = cfg.size_priors[class_id];
            let length = prior[0] * rng.gen_range(SIZE_JITTER_LO..SIZE_JITTER_HI);
            let width = prior[1] * rng.gen_range(SIZE_JITTER_LO..SIZE_JITTER_HI);
            let height = prior[2] * rng.gen_range(SIZE_JITTER_LO..SIZE_JITTER_HI);
            let yaw = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);

            // keep object centers apart; after the attempt budget, take the
            // last candidate so requested counts are always honored
            let (mut cx, mut cy) = (0.0, 0.0);
            for _ in 0..PLACEMENT_ATTEMPTS {
                cx = rng.gen_range(cfg.extent_x.0..cfg.extent_x.1);
                cy = rng.gen_range(cfg.extent_y.0..cfg.extent_y.1);
                let clear = labels.iter().all(|l| {
                    let dx = l.bbox.cx - cx;
                    let dy = l.bbox.cy - cy;
                    dx * dx + dy * dy >= cfg.min_center_distance * cfg.min_center_distance
                });
                if clear {
                    break;
                }
            }
            // objects sit on the nominal ground plane
            let cz = cfg.ground_z_mean + height * 0.5;
            let bbox = Box7::new(cx, cy, cz, length, width, height, yaw)?;

            let [lo, hi] = cfg.points_per_object[class_id];
            let n_points = if lo == hi {
                lo
            } else {
                rng.gen_range(lo..=hi)
            };
            let mut emitted = 0usize;
            if n_points >= 1 {
                // the first return is the box center, so every label owns at
                // least one strictly interior point
                let intensity = rng.gen::<f64>() as f32;
                cloud.push(cx as f32, cy as f32, cz as f32, intensity);
                emitted += 1;
            }
            while emitted < n_points {
                let [lx, ly, lz] = sample_face_point(&mut rng, &jitter, length, width, height);
                let (s, c) = yaw.sin_cos();
                let px = cx + lx * c - ly * s;
                let py = cy + lx * s + ly * c;
                let pz = cz + lz;
                let intensity = rng.gen::<f64>() as f32;
                cloud.push(px as f32, py as f32, pz as f32, intensity);
                emitted += 1;
            }
            object_point_counts.push(emitted);
            labels.push(LabeledBox {
                bbox,
                class_id,
                num_points_inside: None,
            });
        }
    }

    let scene = Scene {
        cloud,
        labels,
        id: format!("synth-{:016x}", cfg.seed),
    };
    let breakdown = SynthBreakdown {
        ground_points: cfg.ground_points,
        object_point_counts,
    };
    Ok((scene, breakdown))
}

/// Sample a surface point in box-local coordinates.
///
/// Faces are weighted toward the vertical sides (a LiDAR mostly sees sides,
/// not roofs), jittered by 2 cm, then clamped: horizontally into a footprint
/// inflated by 5%, vertically into the true box height so object returns stay
/// within one object-height of the ground plane.
fn sample_face_point(
    rng: &mut Rng,
    jitter: &Normal<f64>,
    length: f64,
    width: f64,
    height: f64,
) -> [f64; 3] {
    let (hx, hy, hz) = (length * 0.5, width * 0.5, height * 0.5);
    let u: f64 = rng.gen();
    let a: f64 = rng.gen();
    let b: f64 = rng.gen();
    // 4 vertical sides share 0.9 of the mass, roof 0.07, underside 0.03
    let (mut lx, mut ly, mut lz) = if u < 0.225 {
        (hx, (a * 2.0 - 1.0) * hy, (b * 2.0 - 1.0) * hz)
    } else if u < 0.45 {
        (-hx, (a * 2.0 - 1.0) * hy, (b * 2.0 - 1.0) * hz)
    } else if u < 0.675 {
        ((a * 2.0 - 1.0) * hx, hy, (b * 2.0 - 1.0) * hz)
    } else if u < 0.9 {
        ((a * 2.0 - 1.0) * hx, -hy, (b * 2.0 - 1.0) * hz)
    } else if u < 0.97 {
        ((a * 2.0 - 1.0) * hx, (b * 2.0 - 1.0) * hy, hz)
    } else {
        ((a * 2.0 - 1.0) * hx, (b * 2.0 - 1.0) * hy, -hz)
    };
    lx += jitter.sample(rng);
    ly += jitter.sample(rng);
    lz += jitter.sample(rng);
    let bound_x = hx * FOOTPRINT_INFLATION * (1.0 - 1e-9);
    let bound_y = hy * FOOTPRINT_INFLATION * (1.0 - 1e-9);
    let bound_z = hz * (1.0 - 1e-9);
    [
        lx.clamp(-bound_x, bound_x),
        ly.clamp(-bound_y, bound_y),
        lz.clamp(-bound_z, bound_z),
    ]
}

/// Histogram of point heights over `[range.0, range.1)`.
///
/// Returns `(bin_center, count)` rows; out-of-range points are excluded, so
/// the counts sum to the number of in-range points.
pub fn height_histogram(
    cloud: &PointCloud,
    bin_width: f64,
    range: (f64, f64),
) -> Result<Vec<(f64, usize)>> {
    let (lo, hi) = range;
    if !(bin_width > 0.0) {
        return Err(Error::Config(format!("bin_width {bin_width} must be > 0")));
    }
    if !(lo < hi) {
        return Err(Error::Config(format!("range ({lo}, {hi}) must have lo < hi")));
    }
    let n_bins = ((hi - lo) / bin_width).ceil().max(1.0) as usize;
    let mut counts = vec![0usize; n_bins];
    for p in cloud.iter() {
        let z = p[2] as f64;
        if z < lo || z >= hi {
            continue;
        }
        let idx = (((z - lo) / bin_width) as usize).min(n_bins - 1);
        counts[idx] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (lo + (i as f64 + 0.5) * bin_width, c))
        .collect())
}

/// Number of cloud points inside the box (footprint and height inclusive).
pub fn count_points_in_box(cloud: &PointCloud, bbox: &Box7) -> usize {
    cloud
        .iter()
        .filter(|p| bbox.contains(p[0] as f64, p[1] as f64, p[2] as f64))
        .count()
}
