//! Detection evaluation: greedy matching, 40-point average precision, its
//! heading-weighted variant, and per-class / per-difficulty aggregation.
//!
//! Difficulty is nested: LEVEL 1 holds boxes with more than five points,
//! LEVEL 2 everything with at least one point (a superset). Detections are
//! matched once per scene against the full class ground-truth set; when a
//! level excludes a matched box, that detection is ignored for the level
//! rather than counted as a false positive, so a perfect detector scores 1
//! on both levels.

use crate::geom::{heading_error, iou_3d, rotated_bev_iou, Box7, Detection};
use crate::scene::{count_points_in_box, Scene};
use crate::{Error, Result, NUM_CLASSES};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Which overlap measure drives matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IouKind {
    #[serde(rename = "bev")]
    Bev,
    #[serde(rename = "3d")]
    ThreeD,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Match thresholds per class (vehicle, pedestrian, cyclist).
    pub iou_thresholds: [f64; NUM_CLASSES],
    pub iou_kind: IouKind,
    pub recall_positions: usize,
    /// Minimum points for LEVEL 1 membership (6 means "more than five").
    pub level1_min_points: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_thresholds: [0.7, 0.5, 0.5],
            iou_kind: IouKind::ThreeD,
            recall_positions: 40,
            level1_min_points: 6,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        for t in self.iou_thresholds {
            if !(0.0 < t && t < 1.0) {
                return Err(Error::Config(format!("iou threshold {t} must be in (0, 1)")));
            }
        }
        if self.recall_positions < 1 {
            return Err(Error::Config("recall_positions must be >= 1".into()));
        }
        if self.level1_min_points < 1 {
            return Err(Error::Config("level1_min_points must be >= 1".into()));
        }
        Ok(())
    }
}

/// Difficulty of one ground-truth box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Difficulty {
    /// More than five points: in both levels.
    Level1,
    /// At least one point but not LEVEL 1.
    Level2,
    /// No points: in neither level.
    Excluded,
}

/// Per-label difficulty from the scene's point cloud, using the "more than
/// five points" / "at least one point" rule.
pub fn assign_difficulty(scene: &Scene, level1_min_points: usize) -> Vec<Difficulty> {
    scene
        .labels
        .iter()
        .map(|label| {
            let n = label
                .num_points_inside
                .unwrap_or_else(|| count_points_in_box(&scene.cloud, &label.bbox));
            if n >= level1_min_points {
                Difficulty::Level1
            } else if n >= 1 {
                Difficulty::Level2
            } else {
                Difficulty::Excluded
            }
        })
        .collect()
}

/// A ground-truth box prepared for evaluation.
#[derive(Debug, Clone, Copy)]
pub struct EvalGt {
    pub bbox: Box7,
    pub class_id: usize,
    pub num_points: usize,
}

/// One scene's detections and ground truths.
#[derive(Debug, Clone, Default)]
pub struct EvalScene {
    pub detections: Vec<Detection>,
    pub gts: Vec<EvalGt>,
}

/// Outcome for one detection, in descending-score processing order.
#[derive(Debug, Clone, Copy)]
pub struct MatchOutcome {
    /// Index into the input detection list.
    pub det_index: usize,
    /// Matched ground-truth index, if any.
    pub gt: Option<usize>,
    /// `1 - heading_error / pi` for matches, 0 otherwise.
    pub heading_weight: f64,
}

/// Greedy single-class matching: detections in descending score order each
/// take the highest-IoU still-unmatched ground truth at or above the
/// threshold.
pub fn match_detections(
    dets: &[Detection],
    gts: &[Box7],
    iou_threshold: f64,
    kind: IouKind,
) -> Vec<MatchOutcome> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| dets[j].score.total_cmp(&dets[i].score).then(i.cmp(&j)));
    let mut taken = vec![false; gts.len()];
    let mut outcomes = Vec::with_capacity(dets.len());
    for det_index in order {
        let det = &dets[det_index];
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if taken[gi] {
                continue;
            }
            let iou = match kind {
                IouKind::Bev => rotated_bev_iou(&det.bbox, gt),
                IouKind::ThreeD => iou_3d(&det.bbox, gt),
            };
            if iou >= iou_threshold && best.map_or(true, |(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        match best {
            Some((gi, _)) => {
                taken[gi] = true;
                outcomes.push(MatchOutcome {
                    det_index,
                    gt: Some(gi),
                    heading_weight: 1.0 - heading_error(det.bbox.yaw, gts[gi].yaw) / PI,
                });
            }
            None => outcomes.push(MatchOutcome {
                det_index,
                gt: None,
                heading_weight: 0.0,
            }),
        }
    }
    outcomes
}

/// Interpolated average precision over evenly spaced recall positions.
///
/// `tp_flags` must be in descending score order. With `weights`, true
/// positives contribute their weight to both precision and recall numerators
/// (the heading-weighted variant). Returns `None` when there is no ground
/// truth: the cell is undefined and excluded from means.
pub fn average_precision(
    tp_flags: &[bool],
    num_gt: usize,
    recall_positions: usize,
    weights: Option<&[f64]>,
) -> Option<f64> {
    if num_gt == 0 {
        return None;
    }
    let n = tp_flags.len();
    let mut cum = Vec::with_capacity(n);
    let mut acc = 0.0f64;
    for (k, &tp) in tp_flags.iter().enumerate() {
        if tp {
            acc += weights.map_or(1.0, |w| w[k]);
        }
        cum.push(acc);
    }
    // precision envelope from the right: best precision achievable at or
    // after prefix k
    let mut best_prec = vec![0.0f64; n];
    let mut running = 0.0f64;
    for k in (0..n).rev() {
        running = running.max(cum[k] / (k + 1) as f64);
        best_prec[k] = running;
    }
    let r = recall_positions;
    let mut total = 0.0f64;
    for j in 1..=r {
        let target = j as f64 / r as f64 * num_gt as f64;
        // first prefix whose (weighted) recall reaches the target
        let k = cum.partition_point(|&c| c < target - 1e-9);
        if k < n {
            total += best_prec[k];
        }
    }
    Some(total / r as f64)
}

/// AP and its heading-weighted counterpart for one (class, level) cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellMetrics {
    pub ap: f64,
    pub aph: f64,
}

/// Per-class, per-level metrics plus per-level means over defined classes.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    /// `cells[class][level]`; `None` when the class has no ground truth at
    /// that level.
    pub cells: [[Option<CellMetrics>; 2]; NUM_CLASSES],
    /// Mean over classes with defined metrics, per level.
    pub means: [Option<CellMetrics>; 2],
}

pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["vehicle", "pedestrian", "cyclist"];

/// Evaluate pooled scenes. Ground truths with zero points are dropped
/// entirely; detections are pooled across scenes per class and levels reuse
/// one matching pass per scene.
pub fn evaluate(scenes: &[EvalScene], cfg: &EvalConfig) -> Result<EvalResult> {
    cfg.validate()?;
    let mut cells: [[Option<CellMetrics>; 2]; NUM_CLASSES] = Default::default();

    for class in 0..NUM_CLASSES {
        // pooled (score, matched difficulty, heading weight) rows
        let mut rows: Vec<(f64, Option<Difficulty>, f64)> = Vec::new();
        let mut num_gt = [0usize; 2];
        for scene in scenes {
            let dets: Vec<Detection> = scene
                .detections
                .iter()
                .filter(|d| d.class_id == class)
                .copied()
                .collect();
            let gts: Vec<&EvalGt> = scene
                .gts
                .iter()
                .filter(|g| g.class_id == class && g.num_points >= 1)
                .collect();
            let boxes: Vec<Box7> = gts.iter().map(|g| g.bbox).collect();
            let difficulty: Vec<Difficulty> = gts
                .iter()
                .map(|g| {
                    if g.num_points >= cfg.level1_min_points {
                        Difficulty::Level1
                    } else {
                        Difficulty::Level2
                    }
                })
                .collect();
            num_gt[0] += difficulty.iter().filter(|&&d| d == Difficulty::Level1).count();
            num_gt[1] += difficulty.len();
            for outcome in match_detections(&dets, &boxes, cfg.iou_thresholds[class], cfg.iou_kind)
            {
                rows.push((
                    dets[outcome.det_index].score,
                    outcome.gt.map(|gi| difficulty[gi]),
                    outcome.heading_weight,
                ));
            }
        }
        rows.sort_by(|a, b| b.0.total_cmp(&a.0));

        for level in 0..2 {
            if num_gt[level] == 0 {
                continue;
            }
            let mut flags = Vec::with_capacity(rows.len());
            let mut weights = Vec::with_capacity(rows.len());
            for &(_, matched, hw) in &rows {
                match matched {
                    Some(Difficulty::Level1) => {
                        flags.push(true);
                        weights.push(hw);
                    }
                    Some(Difficulty::Level2) if level == 1 => {
                        flags.push(true);
                        weights.push(hw);
                    }
                    // LEVEL 1 pass ignores detections matched to
                    // LEVEL-2-only boxes instead of calling them FPs
                    Some(Difficulty::Level2) => {}
                    Some(Difficulty::Excluded) => {}
                    None => {
                        flags.push(false);
                        weights.push(0.0);
                    }
                }
            }
            let ap = average_precision(&flags, num_gt[level], cfg.recall_positions, None)
                .expect("num_gt > 0");
            let aph =
                average_precision(&flags, num_gt[level], cfg.recall_positions, Some(&weights))
                    .expect("num_gt > 0");
            cells[class][level] = Some(CellMetrics { ap, aph });
        }
    }

    let mut means = [None, None];
    for level in 0..2 {
        let defined: Vec<CellMetrics> = (0..NUM_CLASSES)
            .filter_map(|c| cells[c][level])
            .collect();
        if !defined.is_empty() {
            let n = defined.len() as f64;
            means[level] = Some(CellMetrics {
                ap: defined.iter().map(|m| m.ap).sum::<f64>() / n,
                aph: defined.iter().map(|m| m.aph).sum::<f64>() / n,
            });
        }
    }
    Ok(EvalResult { cells, means })
}

/// Machine-readable table: `class,level,ap,aph` with a trailing mean row per
/// level. Undefined cells print empty fields.
pub fn result_csv(result: &EvalResult) -> String {
    let mut out = String::from("class,level,ap,aph\n");
    let cell = |m: &Option<CellMetrics>| match m {
        Some(m) => format!("{:.6},{:.6}", m.ap, m.aph),
        None => ",".into(),
    };
    for class in 0..NUM_CLASSES {
        for level in 0..2 {
            out.push_str(&format!(
                "{},{},{}\n",
                CLASS_NAMES[class],
                level + 1,
                cell(&result.cells[class][level])
            ));
        }
    }
    for level in 0..2 {
        out.push_str(&format!("mean,{},{}\n", level + 1, cell(&result.means[level])));
    }
    out
}

/// Human-readable summary of the same numbers.
pub fn result_summary(result: &EvalResult) -> String {
    let mut out = String::new();
    for class in 0..NUM_CLASSES {
        for level in 0..2 {
            match &result.cells[class][level] {
                Some(m) => out.push_str(&format!(
                    "{:<10} L{}  AP {:.4}  APH {:.4}\n",
                    CLASS_NAMES[class],
                    level + 1,
                    m.ap,
                    m.aph
                )),
                None => out.push_str(&format!(
                    "{:<10} L{}  (no ground truth)\n",
                    CLASS_NAMES[class],
                    level + 1
                )),
            }
        }
    }
    for level in 0..2 {
        if let Some(m) = &result.means[level] {
            out.push_str(&format!(
                "{:<10} L{}  AP {:.4}  APH {:.4}\n",
                "mean",
                level + 1,
                m.ap,
                m.aph
            ));
        }
    }
    out
}
