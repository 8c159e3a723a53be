//! Synthetic detector/depth scenes with known answers.
//!
//! Scale scenes put the two objects in separate halves of the image at
//! constant, exactly representable depths so that the expected scores can
//! be computed in closed form. Position scenes place the person's centroid
//! at a chosen angle from the object's centroid.

use std::fs;
use std::io;
use std::path::Path;

use rand::Rng;

use crate::benchmark::Dimension;
use crate::geometry::{BoundingBox, DepthMap, DetectionRecord, ScaleResult, SpatialRelation};
use crate::probing::{depth_paths, detection_path};

pub const SCALE_SIDE: usize = 96;
pub const POSITION_SIDE: usize = 256;
const BACKGROUND_DEPTH: f32 = 64.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleScene {
    pub record: DetectionRecord,
    pub depth: DepthMap,
    pub label_a: String,
    pub label_b: String,
    pub truth: ScaleResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionScene {
    pub record: DetectionRecord,
    pub depth: DepthMap,
    pub person: String,
    pub object: String,
    pub truth: SpatialRelation,
    /// Intended centroid angle; `None` for `inside` scenes.
    pub angle: Option<f64>,
}

/// Integer-aligned box in `[x0, x0+w) x [y0, y0+h)` with its depth.
#[derive(Debug, Clone, Copy)]
struct Slab {
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
    depth: f32,
}

impl Slab {
    fn score(&self, dimension: Dimension) -> f64 {
        let d = self.depth as f64;
        match dimension {
            Dimension::Size => (self.w * self.h) as f64 * d * d,
            Dimension::Height => self.h as f64 * d,
        }
    }

    fn bbox(&self, label: &str, confidence: f64) -> BoundingBox {
        BoundingBox::new(
            self.x0 as f64,
            self.y0 as f64,
            (self.x0 + self.w) as f64,
            (self.y0 + self.h) as f64,
            label,
            confidence,
        )
    }
}

fn random_slab<R: Rng>(rng: &mut R, x_lo: usize, x_hi: usize, y_lo: usize, y_hi: usize) -> Slab {
    let w = rng.gen_range(2..=(x_hi - x_lo));
    let h = rng.gen_range(2..=(y_hi - y_lo));
    let x0 = rng.gen_range(x_lo..=(x_hi - w));
    let y0 = rng.gen_range(y_lo..=(y_hi - h));
    // quarter steps are exact in f32
    let depth = rng.gen_range(4..=40) as f32 / 4.0;
    Slab { x0, y0, w, h, depth }
}

fn paint(values: &mut [f32], side: usize, s: &Slab) {
    for y in s.y0..s.y0 + s.h {
        for x in s.x0..s.x0 + s.w {
            values[y * side + x] = s.depth;
        }
    }
}

fn truth_of(a: f64, b: f64) -> ScaleResult {
    if a > b {
        ScaleResult::AGreater
    } else if b > a {
        ScaleResult::BGreater
    } else {
        ScaleResult::Indeterminate
    }
}

/// A scene whose depth-compensated scores order `label_a` and `label_b` as
/// `want` (any order when `None`). Lower-confidence decoys of both labels
/// sit in the bottom strip and must be ignored by box selection.
pub fn scale_scene<R: Rng>(
    rng: &mut R,
    label_a: &str,
    label_b: &str,
    dimension: Dimension,
    want: Option<ScaleResult>,
) -> ScaleScene {
    let side = SCALE_SIDE;
    loop {
        let a = random_slab(rng, 1, side / 2 - 1, 1, side - 20);
        let b = random_slab(rng, side / 2 + 1, side - 1, 1, side - 20);
        let truth = truth_of(a.score(dimension), b.score(dimension));
        if want.is_some_and(|w| w != truth) {
            continue;
        }
        let mut values = vec![BACKGROUND_DEPTH; side * side];
        paint(&mut values, side, &a);
        paint(&mut values, side, &b);
        let conf_a = rng.gen_range(0.6..1.0);
        let conf_b = rng.gen_range(0.6..1.0);
        let mut boxes = vec![
            a.bbox(label_a, conf_a),
            b.bbox(label_b, conf_b),
            BoundingBox::new(2.0, (side - 16) as f64, 40.0, (side - 2) as f64, label_a, conf_a * 0.5),
            BoundingBox::new(50.0, (side - 16) as f64, 90.0, (side - 2) as f64, label_b, conf_b * 0.5),
        ];
        if rng.gen_bool(0.5) {
            boxes.reverse();
        }
        return ScaleScene {
            record: DetectionRecord {
                image_id: String::new(),
                image_width: side as u32,
                image_height: side as u32,
                boxes,
            },
            depth: DepthMap::new(side, side, values).expect("constructed depth is valid"),
            label_a: label_a.to_string(),
            label_b: label_b.to_string(),
            truth,
        };
    }
}

/// Angle strictly inside the window of `relation`, at least `margin`
/// degrees from every boundary.
fn angle_for<R: Rng>(rng: &mut R, relation: SpatialRelation, margin: f64) -> f64 {
    let (lo, hi) = match relation {
        SpatialRelation::Above => (225.0, 315.0),
        SpatialRelation::Below => (45.0, 135.0),
        SpatialRelation::Beside => {
            if rng.gen_bool(0.5) {
                (135.0, 225.0)
            } else {
                (-45.0, 45.0)
            }
        }
        SpatialRelation::Inside => unreachable!("inside scenes have no angle"),
    };
    let t: f64 = rng.gen_range(lo + margin..hi - margin);
    t.rem_euclid(360.0)
}

/// A person/object scene realizing `relation`.
pub fn position_scene<R: Rng>(rng: &mut R, person: &str, object: &str, relation: SpatialRelation) -> PositionScene {
    let side = POSITION_SIDE as f64;
    let c = side / 2.0;
    let (ow, oh) = (rng.gen_range(20.0..60.0), rng.gen_range(20.0..60.0));
    let object_box = BoundingBox::new(c - ow / 2.0, c - oh / 2.0, c + ow / 2.0, c + oh / 2.0, object, rng.gen_range(0.5..1.0));
    let (person_box, angle) = if relation == SpatialRelation::Inside {
        let pw = rng.gen_range(2.0..ow - 1.0);
        let ph = rng.gen_range(2.0..oh - 1.0);
        let x0 = rng.gen_range(object_box.x_min..object_box.x_max - pw);
        let y0 = rng.gen_range(object_box.y_min..object_box.y_max - ph);
        (BoundingBox::new(x0, y0, x0 + pw, y0 + ph, person, rng.gen_range(0.5..1.0)), None)
    } else {
        let theta = angle_for(rng, relation, 1.0);
        let (pw, ph) = (rng.gen_range(8.0..30.0), rng.gen_range(8.0..30.0));
        // far enough that the boxes are disjoint
        let r = rng.gen_range(50.0..90.0);
        let (dx, dy) = (r * theta.to_radians().cos(), r * theta.to_radians().sin());
        let (cx, cy) = (c + dx, c + dy);
        (
            BoundingBox::new(cx - pw / 2.0, cy - ph / 2.0, cx + pw / 2.0, cy + ph / 2.0, person, rng.gen_range(0.5..1.0)),
            Some(theta),
        )
    };
    PositionScene {
        record: DetectionRecord {
            image_id: String::new(),
            image_width: POSITION_SIDE as u32,
            image_height: POSITION_SIDE as u32,
            boxes: vec![object_box, person_box],
        },
        depth: DepthMap::filled(POSITION_SIDE, POSITION_SIDE, 1.0).expect("constant depth"),
        person: person.to_string(),
        object: object.to_string(),
        truth: relation,
        angle,
    }
}

/// Writes `<det_dir>/<id>.json` and the depth pair under `depth_dir`.
pub fn write_artifacts(det_dir: &Path, depth_dir: &Path, request_id: &str, record: &DetectionRecord, depth: &DepthMap) -> io::Result<()> {
    fs::create_dir_all(det_dir)?;
    fs::create_dir_all(depth_dir)?;
    let mut record = record.clone();
    record.image_id = request_id.to_string();
    let json = serde_json::to_string_pretty(&record).map_err(io::Error::other)?;
    fs::write(detection_path(det_dir, request_id), json + "\n")?;
    let (raw, side) = depth_paths(depth_dir, request_id);
    depth.save(&raw, &side)
}

/// Binary PPM with the boxes outlined on a grey background.
pub fn render_ppm(width: usize, height: usize, boxes: &[BoundingBox]) -> Vec<u8> {
    let mut px = vec![200u8; width * height * 3];
    for (k, b) in boxes.iter().enumerate() {
        let colour = [(40 * k as u8).wrapping_add(60), 30, 120];
        let (x0, y0) = (b.x_min.max(0.0) as usize, b.y_min.max(0.0) as usize);
        let x1 = (b.x_max.min(width as f64 - 1.0)) as usize;
        let y1 = (b.y_max.min(height as f64 - 1.0)) as usize;
        for y in y0..=y1.min(height - 1) {
            for x in x0..=x1.min(width - 1) {
                if x == x0 || x == x1 || y == y0 || y == y1 {
                    px[(y * width + x) * 3..(y * width + x) * 3 + 3].copy_from_slice(&colour);
                }
            }
        }
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend(px);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{classify_relation, compare_scale, select_box};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scale_scenes_match_requested_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for want in [ScaleResult::AGreater, ScaleResult::BGreater] {
            for dim in [Dimension::Size, Dimension::Height] {
                let s = scale_scene(&mut rng, "dog", "cat", dim, Some(want));
                assert_eq!(s.truth, want);
                let j = compare_scale(&s.record, &s.depth, "dog", "cat", dim).unwrap();
                assert_eq!(j.result, want);
            }
        }
    }

    #[test]
    fn position_scenes_classify_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for rel in SpatialRelation::ALL {
            for _ in 0..20 {
                let s = position_scene(&mut rng, "man", "car", rel);
                let p = select_box(&s.record, "man").unwrap();
                let o = select_box(&s.record, "car").unwrap();
                assert_eq!(classify_relation(p, o, 1.0).unwrap(), rel);
            }
        }
    }

    #[test]
    fn ppm_header() {
        let img = render_ppm(4, 3, &[]);
        assert!(img.starts_with(b"P6\n4 3\n255\n"));
        assert_eq!(img.len(), 11 + 36);
    }
}
