//! Geometric evaluation of generated images.
//!
//! Pixel coordinates have their origin at the top-left corner with `y`
//! growing downward. Depth maps store distance from the camera (larger is
//! farther); adapters exporting disparity must invert before export.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchmark::Dimension;

/// Version of the label normalization table below.
pub const LABEL_TABLE_VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("box for {label:?} is degenerate after clipping")]
    EmptyBox { label: String },
    #[error("degenerate box for {label:?}: ({x_min}, {y_min})-({x_max}, {y_max})")]
    DegenerateBox {
        label: String,
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
    },
    #[error("depth must be positive and finite, got {0}")]
    NonPositiveDepth(f64),
    #[error("box centroids coincide")]
    CoincidentCentroids,
    #[error("coverage threshold must lie in (0, 1], got {0}")]
    Threshold(f64),
    #[error("depth map {width}x{height} expects {expected} values, found {found}")]
    DepthLength {
        width: usize,
        height: usize,
        expected: usize,
        found: usize,
    },
    #[error("depth map {width}x{height} is empty")]
    EmptyDepth { width: usize, height: usize },
    #[error("depth value {value} at index {index} is negative or not finite")]
    DepthValue { index: usize, value: f32 },
    #[error("{path}: {message}")]
    File { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpatialRelation {
    Above,
    Below,
    Inside,
    Beside,
}

impl SpatialRelation {
    /// Canonical answer order.
    pub const ALL: [SpatialRelation; 4] = [
        SpatialRelation::Above,
        SpatialRelation::Below,
        SpatialRelation::Inside,
        SpatialRelation::Beside,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SpatialRelation::Above => "above",
            SpatialRelation::Below => "below",
            SpatialRelation::Inside => "inside",
            SpatialRelation::Beside => "beside",
        }
    }

    /// Position in [`SpatialRelation::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for SpatialRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SpatialRelation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "above" => Ok(SpatialRelation::Above),
            "below" => Ok(SpatialRelation::Below),
            "inside" => Ok(SpatialRelation::Inside),
            "beside" => Ok(SpatialRelation::Beside),
            other => Err(format!("unknown relation {other:?}")),
        }
    }
}

// Surface form -> canonical detector-side label. Applied to prompt nouns and
// detector classes alike, after lowercasing and whitespace folding.
const LABEL_TABLE: &[(&str, &str)] = &[
    ("people", "person"),
    ("persons", "person"),
    ("human", "person"),
    ("humans", "person"),
    ("man", "person"),
    ("men", "person"),
    ("woman", "person"),
    ("women", "person"),
    ("boy", "person"),
    ("boys", "person"),
    ("girl", "person"),
    ("girls", "person"),
    ("child", "person"),
    ("children", "person"),
    ("kid", "person"),
    ("tyre", "tire"),
    ("tyres", "tire"),
    ("tires", "tire"),
    ("theatre", "theater"),
    ("mobile phone", "cell phone"),
    ("cellphone", "cell phone"),
    ("phone", "cell phone"),
    ("sofa", "couch"),
    ("plane", "airplane"),
    ("aeroplane", "airplane"),
    ("motorbike", "motorcycle"),
    ("bike", "bicycle"),
    ("garbage can", "trash can"),
    ("trashcan", "trash can"),
    ("dustbin", "trash can"),
    ("streetlight", "street lamp"),
    ("street light", "street lamp"),
    ("lamppost", "street lamp"),
    ("droplet", "water drop"),
    ("waterdrop", "water drop"),
    ("die", "dice"),
    ("shoes", "shoe"),
    ("sandals", "sandal"),
    ("birds", "bird"),
    ("dogs", "dog"),
    ("cups", "cup"),
    ("bottles", "bottle"),
    ("coins", "coin"),
    ("nuts", "nut"),
    ("bullets", "bullet"),
    ("shells", "shell"),
    ("houses", "house"),
    ("trucks", "truck"),
    ("ants", "ant"),
    ("insects", "insect"),
    ("bookcase", "bookshelf"),
    ("apartment building", "apartment"),
    ("cinema", "movie theater"),
    ("movie theatre", "movie theater"),
];

/// Lowercases, folds `_` and runs of whitespace to single spaces, then maps
/// through the versioned synonym/singular table.
pub fn normalize_label(label: &str) -> String {
    let folded = label
        .replace('_', " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    LABEL_TABLE
        .iter()
        .find(|(from, _)| *from == folded)
        .map(|(_, to)| to.to_string())
        .unwrap_or(folded)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub label: String,
    pub confidence: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64, label: &str, confidence: f64) -> Self {
        BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
            label: label.to_string(),
            confidence,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn centroid(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    pub fn is_valid(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite())
            && self.x_min < self.x_max
            && self.y_min < self.y_max
    }

    fn check(&self) -> Result<(), GeometryError> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(GeometryError::DegenerateBox {
                label: self.label.clone(),
                x_min: self.x_min,
                y_min: self.y_min,
                x_max: self.x_max,
                y_max: self.y_max,
            })
        }
    }

    pub fn clipped(&self, width: f64, height: f64) -> BoundingBox {
        BoundingBox {
            x_min: self.x_min.clamp(0.0, width),
            y_min: self.y_min.clamp(0.0, height),
            x_max: self.x_max.clamp(0.0, width),
            y_max: self.y_max.clamp(0.0, height),
            ..self.clone()
        }
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    pub image_width: u32,
    pub image_height: u32,
    pub boxes: Vec<BoundingBox>,
}

impl DetectionRecord {
    /// Normalizes labels and clips boxes to the image. Boxes that are
    /// malformed on input are an error; boxes that fall entirely outside the
    /// image are dropped.
    pub fn normalized(mut self) -> Result<Self, GeometryError> {
        let (w, h) = (self.image_width as f64, self.image_height as f64);
        let mut kept = Vec::with_capacity(self.boxes.len());
        for b in self.boxes {
            b.check()?;
            if !(0.0..=1.0).contains(&b.confidence) {
                return Err(GeometryError::File {
                    path: self.image_id.clone(),
                    message: format!("confidence {} outside [0, 1]", b.confidence),
                });
            }
            let mut c = b.clipped(w, h);
            c.label = normalize_label(&c.label);
            if c.is_valid() {
                kept.push(c);
            } else {
                log::debug!("{}: dropping off-image box {:?}", self.image_id, c.label);
            }
        }
        self.boxes = kept;
        Ok(self)
    }

    pub fn load(path: &Path) -> Result<Self, GeometryError> {
        let file_err = |message: String| GeometryError::File {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
        let rec: DetectionRecord = serde_json::from_str(&text).map_err(|e| file_err(e.to_string()))?;
        rec.normalized().map_err(|e| file_err(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepthSidecar {
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::EmptyDepth { width, height });
        }
        let expected = width * height;
        if values.len() != expected {
            return Err(GeometryError::DepthLength {
                width,
                height,
                expected,
                found: values.len(),
            });
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(GeometryError::DepthValue { index, value });
        }
        Ok(DepthMap {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self, GeometryError> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    /// Decodes a raw little-endian `f32` row-major buffer.
    pub fn from_le_bytes(sidecar: DepthSidecar, bytes: &[u8]) -> Result<Self, GeometryError> {
        if !bytes.len().is_multiple_of(4) {
            return Err(GeometryError::DepthLength {
                width: sidecar.width,
                height: sidecar.height,
                expected: sidecar.width * sidecar.height,
                found: bytes.len() / 4,
            });
        }
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(sidecar.width, sidecar.height, values)
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn sidecar(&self) -> DepthSidecar {
        DepthSidecar {
            width: self.width,
            height: self.height,
        }
    }

    pub fn load(raw: &Path, sidecar: &Path) -> Result<Self, GeometryError> {
        let err = |p: &Path, message: String| GeometryError::File {
            path: p.display().to_string(),
            message,
        };
        let side_text = std::fs::read_to_string(sidecar).map_err(|e| err(sidecar, e.to_string()))?;
        let side: DepthSidecar =
            serde_json::from_str(&side_text).map_err(|e| err(sidecar, e.to_string()))?;
        let bytes = std::fs::read(raw).map_err(|e| err(raw, e.to_string()))?;
        Self::from_le_bytes(side, &bytes).map_err(|e| err(raw, e.to_string()))
    }

    pub fn save(&self, raw: &Path, sidecar: &Path) -> std::io::Result<()> {
        std::fs::write(raw, self.to_le_bytes())?;
        std::fs::write(
            sidecar,
            serde_json::to_string(&self.sidecar()).expect("sidecar serializes"),
        )
    }
}

/// Highest-confidence box whose normalized label equals the normalized
/// query. Ties go to the larger area, then the smaller `y_min`, then the
/// earlier box.
pub fn select_box<'a>(record: &'a DetectionRecord, label: &str) -> Option<&'a BoundingBox> {
    let query = normalize_label(label);
    let mut best: Option<&BoundingBox> = None;
    for b in record.boxes.iter().filter(|b| normalize_label(&b.label) == query) {
        best = match best {
            None => Some(b),
            Some(cur) => {
                let better = b.confidence > cur.confidence
                    || (b.confidence == cur.confidence
                        && (b.area() > cur.area() || (b.area() == cur.area() && b.y_min < cur.y_min)));
                if better {
                    Some(b)
                } else {
                    Some(cur)
                }
            }
        };
    }
    best
}

/// Integer pixel range `[lo, hi)` covered by `[min, max)` and clipped to
/// `[0, limit)`.
fn pixel_span(min: f64, max: f64, limit: usize) -> (usize, usize) {
    let lo = min.ceil().max(0.0);
    let hi = max.ceil().min(limit as f64);
    if hi <= lo {
        (0, 0)
    } else {
        (lo as usize, hi as usize)
    }
}

/// Mean depth over integer pixels `p` with `x_min <= p.x < x_max` and
/// `y_min <= p.y < y_max`, after clipping to the map.
pub fn mean_depth(bbox: &BoundingBox, map: &DepthMap) -> Result<f64, GeometryError> {
    let (x0, x1) = pixel_span(bbox.x_min, bbox.x_max, map.width);
    let (y0, y1) = pixel_span(bbox.y_min, bbox.y_max, map.height);
    let count = (x1 - x0) * (y1 - y0);
    if count == 0 {
        return Err(GeometryError::EmptyBox {
            label: bbox.label.clone(),
        });
    }
    let mut sum = 0.0f64;
    for y in y0..y1 {
        let row = &map.values[y * map.width + x0..y * map.width + x1];
        sum += row.iter().map(|&v| v as f64).sum::<f64>();
    }
    Ok(sum / count as f64)
}

fn check_depth(depth: f64) -> Result<(), GeometryError> {
    if depth.is_finite() && depth > 0.0 {
        Ok(())
    } else {
        Err(GeometryError::NonPositiveDepth(depth))
    }
}

/// `area * depth^2`: apparent area shrinks with the square of distance.
pub fn size_score(bbox: &BoundingBox, mean_depth: f64) -> Result<f64, GeometryError> {
    check_depth(mean_depth)?;
    Ok(bbox.area() * mean_depth * mean_depth)
}

/// `height * depth`: apparent height shrinks linearly with distance.
pub fn height_score(bbox: &BoundingBox, mean_depth: f64) -> Result<f64, GeometryError> {
    check_depth(mean_depth)?;
    Ok(bbox.height() * mean_depth)
}

pub fn dimension_score(dimension: Dimension, bbox: &BoundingBox, depth: f64) -> Result<f64, GeometryError> {
    match dimension {
        Dimension::Size => size_score(bbox, depth),
        Dimension::Height => height_score(bbox, depth),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleResult {
    AGreater,
    BGreater,
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleJudgment {
    pub result: ScaleResult,
    pub score_a: Option<f64>,
    pub score_b: Option<f64>,
    /// Both objects were found by the detector.
    pub recognized: bool,
}

pub fn compare_scale(
    record: &DetectionRecord,
    depth: &DepthMap,
    label_a: &str,
    label_b: &str,
    dimension: Dimension,
) -> Result<ScaleJudgment, GeometryError> {
    let (Some(box_a), Some(box_b)) = (select_box(record, label_a), select_box(record, label_b)) else {
        return Ok(ScaleJudgment {
            result: ScaleResult::Indeterminate,
            score_a: None,
            score_b: None,
            recognized: false,
        });
    };
    let score_a = dimension_score(dimension, box_a, mean_depth(box_a, depth)?)?;
    let score_b = dimension_score(dimension, box_b, mean_depth(box_b, depth)?)?;
    let result = if score_a > score_b {
        ScaleResult::AGreater
    } else if score_b > score_a {
        ScaleResult::BGreater
    } else {
        ScaleResult::Indeterminate
    };
    Ok(ScaleJudgment {
        result,
        score_a: Some(score_a),
        score_b: Some(score_b),
        recognized: true,
    })
}

/// Screen-space direction from `y`'s centroid to `x`'s centroid, in degrees
/// within `[0, 360)`. Straight up on screen is 270.
pub fn centroid_angle(x: &BoundingBox, y: &BoundingBox) -> Result<f64, GeometryError> {
    let (xc, yc) = x.centroid();
    let (xo, yo) = y.centroid();
    let (dx, dy) = (xc - xo, yc - yo);
    if dx == 0.0 && dy == 0.0 {
        return Err(GeometryError::CoincidentCentroids);
    }
    Ok(normalize_degrees(dy.atan2(dx).to_degrees()))
}

pub fn normalize_degrees(theta: f64) -> f64 {
    let t = theta.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs; -0.0 -> 0.0
    if t >= 360.0 || t == 0.0 {
        0.0
    } else {
        t
    }
}

/// Angle windows: above `(225, 315)`, below `(45, 135)`, beside everywhere
/// else, including the four boundary angles.
pub fn relation_for_angle(theta: f64) -> SpatialRelation {
    if theta > 225.0 && theta < 315.0 {
        SpatialRelation::Above
    } else if theta > 45.0 && theta < 135.0 {
        SpatialRelation::Below
    } else {
        SpatialRelation::Beside
    }
}

/// Relation of `person` to `object`.
///
/// `inside` when the share of the person's box covered by the object's box
/// reaches `coverage_threshold`; otherwise decided by the centroid angle.
/// Concentric boxes that miss the coverage test are also `inside`.
pub fn classify_relation(
    person: &BoundingBox,
    object: &BoundingBox,
    coverage_threshold: f64,
) -> Result<SpatialRelation, GeometryError> {
    if !(coverage_threshold > 0.0 && coverage_threshold <= 1.0) {
        return Err(GeometryError::Threshold(coverage_threshold));
    }
    person.check()?;
    object.check()?;
    let coverage = person.intersection_area(object) / person.area();
    if coverage >= coverage_threshold {
        return Ok(SpatialRelation::Inside);
    }
    match centroid_angle(person, object) {
        Ok(theta) => Ok(relation_for_angle(theta)),
        Err(GeometryError::CoincidentCentroids) => Ok(SpatialRelation::Inside),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64, label: &str, c: f64) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1, label, c)
    }

    fn record(boxes: Vec<BoundingBox>) -> DetectionRecord {
        DetectionRecord {
            image_id: "img".into(),
            image_width: 100,
            image_height: 100,
            boxes,
        }
    }

    #[test]
    fn select_highest_confidence() {
        let r = record(vec![
            bx(0., 0., 10., 10., "dog", 0.9),
            bx(0., 0., 20., 20., "dog", 0.7),
            bx(0., 0., 5., 5., "cat", 0.95),
        ]);
        assert_eq!(select_box(&r, "dog").unwrap().confidence, 0.9);
        assert!(select_box(&r, "lion").is_none());
    }

    #[test]
    fn select_tie_breaks() {
        let r = record(vec![
            bx(0., 10., 10., 20., "dog", 0.5),
            bx(0., 0., 20., 20., "dog", 0.5),
            bx(0., 5., 20., 25., "dog", 0.5),
        ]);
        // equal confidence: larger area wins, then lower y_min
        let b = select_box(&r, "Dog").unwrap();
        assert_eq!((b.y_min, b.area()), (0.0, 400.0));
    }

    #[test]
    fn synonyms_resolve() {
        assert_eq!(normalize_label("Human"), "person");
        assert_eq!(normalize_label("mobile  phone"), "cell phone");
        assert_eq!(normalize_label("street_light"), "street lamp");
        let r = record(vec![bx(0., 0., 10., 10., "person", 0.8)]);
        assert!(select_box(&r, "woman").is_some());
    }

    #[test]
    fn mean_depth_cases() {
        let m = DepthMap::filled(8, 8, 3.0).unwrap();
        assert_eq!(mean_depth(&bx(1., 2., 5., 7., "a", 1.), &m).unwrap(), 3.0);
        let m = DepthMap::new(2, 1, vec![2.0, 4.0]).unwrap();
        assert_eq!(mean_depth(&bx(0., 0., 2., 1., "a", 1.), &m).unwrap(), 3.0);
        // half-open: x in [0.5, 1.5) covers pixel 1 only
        assert_eq!(mean_depth(&bx(0.5, 0., 1.5, 1., "a", 1.), &m).unwrap(), 4.0);
        assert!(matches!(
            mean_depth(&bx(5., 5., 9., 9., "a", 1.), &m),
            Err(GeometryError::EmptyBox { .. })
        ));
    }

    #[test]
    fn scores() {
        let b = bx(0., 0., 10., 10., "a", 1.);
        assert_eq!(size_score(&b, 2.0).unwrap(), 400.0);
        let near = bx(0., 0., 20., 20., "a", 1.);
        assert_eq!(size_score(&near, 1.0).unwrap(), size_score(&b, 2.0).unwrap());
        let tall = bx(0., 0., 5., 100., "a", 1.);
        let short = bx(0., 0., 5., 50., "a", 1.);
        assert_eq!(height_score(&short, 2.0).unwrap(), 100.0);
        assert_eq!(height_score(&tall, 1.0).unwrap(), height_score(&short, 2.0).unwrap());
        assert!(size_score(&b, 0.0).is_err());
        assert!(height_score(&b, -1.0).is_err());
    }

    #[test]
    fn compare_sofa_mountain() {
        // sofa: 30x30 at depth 1 -> 900; mountain: 50x50 at depth 4 -> 40000
        let r = record(vec![
            bx(0., 0., 30., 30., "sofa", 0.9),
            bx(40., 40., 90., 90., "mountain", 0.8),
        ]);
        let mut values = vec![1.0f32; 100 * 100];
        for y in 40..90 {
            for x in 40..90 {
                values[y * 100 + x] = 4.0;
            }
        }
        let m = DepthMap::new(100, 100, values).unwrap();
        let j = compare_scale(&r, &m, "sofa", "mountain", Dimension::Size).unwrap();
        assert_eq!(j.result, ScaleResult::BGreater);
        assert_eq!((j.score_a, j.score_b), (Some(900.0), Some(40000.0)));
        let j = compare_scale(&r, &m, "sofa", "lion", Dimension::Size).unwrap();
        assert_eq!(j.result, ScaleResult::Indeterminate);
        assert!(!j.recognized);
    }

    #[test]
    fn angles() {
        let x = bx(4., 4., 6., 6., "x", 1.);
        let y = bx(4., 9., 6., 11., "y", 1.);
        assert_eq!(centroid_angle(&x, &y).unwrap(), 270.0);
        let x = bx(9., 4., 11., 6., "x", 1.);
        let y = bx(4., 4., 6., 6., "y", 1.);
        assert_eq!(centroid_angle(&x, &y).unwrap(), 0.0);
        assert!(matches!(
            centroid_angle(&x, &x),
            Err(GeometryError::CoincidentCentroids)
        ));
    }

    #[test]
    fn windows_and_boundaries() {
        assert_eq!(relation_for_angle(270.0), SpatialRelation::Above);
        assert_eq!(relation_for_angle(90.0), SpatialRelation::Below);
        for b in [0.0, 45.0, 135.0, 180.0, 225.0, 315.0] {
            assert_eq!(relation_for_angle(b), SpatialRelation::Beside, "{b}");
        }
    }

    #[test]
    fn person_inside_car_box() {
        let car = bx(10., 10., 90., 60., "car", 0.9);
        let man = bx(20., 15., 35., 55., "person", 0.9);
        assert_eq!(classify_relation(&man, &car, 1.0).unwrap(), SpatialRelation::Inside);
        let rider = bx(40., 0., 60., 30., "person", 0.9);
        let horse = bx(30., 30., 70., 80., "horse", 0.9);
        assert_eq!(classify_relation(&rider, &horse, 1.0).unwrap(), SpatialRelation::Above);
        assert_eq!(classify_relation(&horse, &rider, 1.0).unwrap(), SpatialRelation::Below);
        assert!(classify_relation(&rider, &horse, 0.0).is_err());
        let bad = bx(5., 5., 5., 9., "x", 0.5);
        assert!(classify_relation(&bad, &horse, 1.0).is_err());
    }

    #[test]
    fn depth_bytes_length_checked() {
        let side = DepthSidecar { width: 2, height: 2 };
        let ok = DepthMap::from_le_bytes(side, &[0u8; 16]).unwrap();
        assert_eq!(ok.values().len(), 4);
        assert!(DepthMap::from_le_bytes(side, &[0u8; 12]).is_err());
        assert!(DepthMap::from_le_bytes(side, &[0u8; 15]).is_err());
        assert!(DepthMap::new(1, 1, vec![f32::NAN]).is_err());
        assert!(DepthMap::new(1, 1, vec![-1.0]).is_err());
    }

    #[test]
    fn record_normalization_clips() {
        let r = DetectionRecord {
            image_id: "i".into(),
            image_width: 10,
            image_height: 10,
            boxes: vec![
                bx(-5., -5., 5., 5., "Human", 0.5),
                bx(20., 20., 30., 30., "dog", 0.5),
            ],
        }
        .normalized()
        .unwrap();
        assert_eq!(r.boxes.len(), 1);
        assert_eq!(r.boxes[0].label, "person");
        assert_eq!(r.boxes[0].x_min, 0.0);
    }
}
