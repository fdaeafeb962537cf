//! Point-cloud and label file formats.
//!
//! Points travel either as headerless little-endian `f32` records of
//! `(x, y, z, intensity)` — 16 bytes per point, the layout used by common
//! autonomous-driving dumps — or as CSV with an `x,y,z,intensity` header row.
//! Labels and detections are JSON documents carrying a `format_version` field;
//! detections are labels plus a `score`.

use super::{LabeledBox, PointCloud, Scene};
use crate::geom::{Box7, Detection};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

/// Schema version written into label and detection files.
pub const FORMAT_VERSION: u32 = 1;

/// On-disk point layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointFormat {
    /// Headerless little-endian f32 quadruples.
    BinaryF32,
    /// `x,y,z,intensity` header row, one point per line.
    Csv,
}

pub fn read_point_cloud(path: &Path, format: PointFormat) -> Result<PointCloud> {
    match format {
        PointFormat::BinaryF32 => read_binary(path),
        PointFormat::Csv => read_csv(path),
    }
}

pub fn write_point_cloud(path: &Path, format: PointFormat, cloud: &PointCloud) -> Result<()> {
    match format {
        PointFormat::BinaryF32 => {
            let mut bytes = Vec::with_capacity(cloud.as_flat().len() * 4);
            for v in cloud.as_flat() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            fs::write(path, bytes).map_err(|e| Error::io(path, e))
        }
        PointFormat::Csv => {
            let mut text = String::from("x,y,z,intensity\n");
            for p in cloud.iter() {
                text.push_str(&format!("{},{},{},{}\n", p[0], p[1], p[2], p[3]));
            }
            fs::write(path, text).map_err(|e| Error::io(path, e))
        }
    }
}

fn read_binary(path: &Path) -> Result<PointCloud> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 16 != 0 {
        return Err(Error::PointFormat {
            path: path.to_path_buf(),
            unit: "byte",
            position: (bytes.len() - bytes.len() % 16) as u64,
            detail: format!(
                "file length {} is not a multiple of 16 (4 little-endian f32 per point)",
                bytes.len()
            ),
        });
    }
    let mut data = Vec::with_capacity(bytes.len() / 4);
    for (i, rec) in bytes.chunks_exact(16).enumerate() {
        let mut vals = [0f32; 4];
        for (j, v) in vals.iter_mut().enumerate() {
            *v = f32::from_le_bytes([rec[j * 4], rec[j * 4 + 1], rec[j * 4 + 2], rec[j * 4 + 3]]);
        }
        super::validate_point(vals[0], vals[1], vals[2], vals[3]).map_err(|detail| {
            Error::PointFormat {
                path: path.to_path_buf(),
                unit: "byte",
                position: (i * 16) as u64,
                detail,
            }
        })?;
        data.extend_from_slice(&vals);
    }
    Ok(PointCloud { data })
}

fn read_csv(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |line: usize, detail: String| Error::PointFormat {
        path: path.to_path_buf(),
        unit: "line",
        position: line as u64,
        detail,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end() == "x,y,z,intensity" => {}
        Some((_, header)) => {
            return Err(err(
                1,
                format!("expected header `x,y,z,intensity`, found `{header}`"),
            ))
        }
        None => return Err(err(1, "empty file, expected header row".into())),
    }
    let mut data = Vec::new();
    for (idx, line) in lines {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(err(
                lineno,
                format!("expected 4 comma-separated fields, found {}", fields.len()),
            ));
        }
        let mut vals = [0f32; 4];
        for (j, f) in fields.iter().enumerate() {
            vals[j] = f
                .trim()
                .parse::<f32>()
                .map_err(|_| err(lineno, format!("non-numeric field `{f}`")))?;
        }
        super::validate_point(vals[0], vals[1], vals[2], vals[3])
            .map_err(|detail| err(lineno, detail))?;
        data.extend_from_slice(&vals);
    }
    Ok(PointCloud { data })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxRecord {
    cx: f64,
    cy: f64,
    cz: f64,
    length: f64,
    width: f64,
    height: f64,
    yaw: f64,
    class_id: u8,
}

impl BoxRecord {
    fn from_parts(bbox: &Box7, class_id: usize) -> Self {
        BoxRecord {
            cx: bbox.cx,
            cy: bbox.cy,
            cz: bbox.cz,
            length: bbox.length,
            width: bbox.width,
            height: bbox.height,
            yaw: bbox.yaw,
            class_id: class_id as u8,
        }
    }

    fn into_parts(self, field: String) -> Result<(Box7, usize)> {
        if self.class_id as usize >= crate::NUM_CLASSES {
            return Err(Error::LabelSchema {
                field: format!("{field}.class_id"),
                detail: format!(
                    "class_id {} outside 0..{}",
                    self.class_id,
                    crate::NUM_CLASSES
                ),
            });
        }
        let bbox = Box7::new(
            self.cx,
            self.cy,
            self.cz,
            self.length,
            self.width,
            self.height,
            self.yaw,
        )
        .map_err(|e| Error::LabelSchema {
            field,
            detail: e.to_string(),
        })?;
        Ok((bbox, self.class_id as usize))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelFile {
    format_version: u32,
    labels: Vec<BoxRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionRecord {
    #[serde(flatten)]
    bbox: BoxRecord,
    score: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionFile {
    format_version: u32,
    detections: Vec<DetectionRecord>,
}

fn check_version(version: u32) -> Result<()> {
    if version != FORMAT_VERSION {
        return Err(Error::LabelSchema {
            field: "format_version".into(),
            detail: format!("unsupported version {version}, expected {FORMAT_VERSION}"),
        });
    }
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<LabeledBox>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: LabelFile = serde_json::from_str(&text).map_err(|e| Error::LabelSchema {
        field: path.display().to_string(),
        detail: e.to_string(),
    })?;
    check_version(file.format_version)?;
    file.labels
        .into_iter()
        .enumerate()
        .map(|(i, rec)| {
            let (bbox, class_id) = rec.into_parts(format!("labels[{i}]"))?;
            Ok(LabeledBox {
                bbox,
                class_id,
                num_points_inside: None,
            })
        })
        .collect()
}

pub fn write_labels(path: &Path, labels: &[LabeledBox]) -> Result<()> {
    let file = LabelFile {
        format_version: FORMAT_VERSION,
        labels: labels
            .iter()
            .map(|l| BoxRecord::from_parts(&l.bbox, l.class_id))
            .collect(),
    };
    let text = serde_json::to_string_pretty(&file).expect("label serialization is infallible");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: DetectionFile = serde_json::from_str(&text).map_err(|e| Error::LabelSchema {
        field: path.display().to_string(),
        detail: e.to_string(),
    })?;
    check_version(file.format_version)?;
    file.detections
        .into_iter()
        .enumerate()
        .map(|(i, rec)| {
            let field = format!("detections[{i}]");
            if !(0.0..=1.0).contains(&rec.score) {
                return Err(Error::LabelSchema {
                    field: format!("{field}.score"),
                    detail: format!("score {} outside [0, 1]", rec.score),
                });
            }
            let (bbox, class_id) = rec.bbox.into_parts(field)?;
            Ok(Detection {
                bbox,
                class_id,
                score: rec.score,
            })
        })
        .collect()
}

pub fn write_detections(path: &Path, dets: &[Detection]) -> Result<()> {
    let file = DetectionFile {
        format_version: FORMAT_VERSION,
        detections: dets
            .iter()
            .map(|d| DetectionRecord {
                bbox: BoxRecord::from_parts(&d.bbox, d.class_id),
                score: d.score,
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&file).expect("detection serialization is infallible");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Read a `.bin` point cloud and its sibling `.json` labels as one scene.
pub fn read_scene(bin_path: &Path) -> Result<Scene> {
    let cloud = read_point_cloud(bin_path, PointFormat::BinaryF32)?;
    let label_path = bin_path.with_extension("json");
    let labels = if label_path.exists() {
        read_labels(&label_path)?
    } else {
        Vec::new()
    };
    let id = bin_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".into());
    Ok(Scene { cloud, labels, id })
}
