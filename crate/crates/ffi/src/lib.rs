//! C ABI over the spatialprobe library.
//!
//! Every fallible function returns an [`SpStatus`] and writes results
//! through out-pointers. On failure, [`sp_last_error_message`] describes the
//! error for the calling thread. Objects are opaque handles released with
//! their `_free` function; strings returned by the library are released
//! with [`sp_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use spatialprobe::benchmark::{self, build_scale_dataset, parse_objects, Dimension, ScaleGold, ScaleInstance};
use spatialprobe::data::{self, Source};
use spatialprobe::geometry::{self, BoundingBox, DepthMap, DetectionRecord, ScaleResult, SpatialRelation};
use spatialprobe::metrics::{self, Comparison, PairPredictions};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidUtf8 = 3,
    Parse = 4,
    Geometry = 5,
    OutOfRange = 6,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpRelation {
    Above = 0,
    Below = 1,
    Inside = 2,
    Beside = 3,
}

impl From<SpatialRelation> for SpRelation {
    fn from(r: SpatialRelation) -> Self {
        match r {
            SpatialRelation::Above => SpRelation::Above,
            SpatialRelation::Below => SpRelation::Below,
            SpatialRelation::Inside => SpRelation::Inside,
            SpatialRelation::Beside => SpRelation::Beside,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpScaleResult {
    AGreater = 0,
    BGreater = 1,
    Indeterminate = 2,
}

/// Pixel box, origin top-left, y downward.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub confidence: f64,
}

impl SpBox {
    fn to_box(self, label: &str) -> BoundingBox {
        BoundingBox::new(self.x_min, self.y_min, self.x_max, self.y_max, label, self.confidence)
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SpConsistency {
    pub symmetry: f64,
    pub transitivity: f64,
    pub pairs_evaluated: usize,
    pub pairs_consistent: usize,
    pub triples_evaluated: usize,
    pub triples_consistent: usize,
}

/// Scale comparison dataset.
pub struct SpScaleDataset {
    items: Vec<ScaleInstance>,
}

/// Row-major depth grid, larger values farther away.
pub struct SpDepthMap {
    map: DepthMap,
}

/// Ordered-pair comparison predictions.
pub struct SpPredictionTable {
    table: PairPredictions,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(SpStatus, String);

fn set_error(message: &str) {
    let clean = message.replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(clean).expect("no interior NUL"));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SpStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(&message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SpStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(SpStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write<T>(p: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    p.write(value);
    Ok(())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(SpStatus::InvalidUtf8, format!("{what}: {e}")))
}

fn dimension(code: u32) -> Result<Dimension, Failure> {
    match code {
        0 => Ok(Dimension::Size),
        1 => Ok(Dimension::Height),
        other => Err(Failure(SpStatus::InvalidArgument, format!("dimension must be 0 (size) or 1 (height), got {other}"))),
    }
}

fn geometry_failure(e: geometry::GeometryError) -> Failure {
    Failure(SpStatus::Geometry, e.to_string())
}

fn c_string(s: &str) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("no interior NUL").into_raw()
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn sp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn sp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds the ordered cross-group pair dataset from an objects table
/// (`name<TAB>group<TAB>dimension` rows). A null `objects_tsv` selects the
/// bundled table for `dimension` (0 size, 1 height).
///
/// # Safety
/// `objects_tsv` is null or a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sp_scale_dataset_build(objects_tsv: *const c_char, dimension: u32, out: *mut *mut SpScaleDataset) -> SpStatus {
    guard(|| {
        let dim = self::dimension(dimension)?;
        let source = if objects_tsv.is_null() {
            let file = match dim {
                Dimension::Size => data::OBJECTS_SIZE_FILE,
                Dimension::Height => data::OBJECTS_HEIGHT_FILE,
            };
            data::load(None, file).map_err(|e| Failure(SpStatus::Parse, e.to_string()))?
        } else {
            Source {
                name: "<caller>".into(),
                text: str_arg(objects_tsv, "objects_tsv")?.to_string(),
            }
        };
        let objects = parse_objects(&source).map_err(|e| Failure(SpStatus::Parse, e.to_string()))?;
        let items = build_scale_dataset(&objects, dim).map_err(|e| Failure(SpStatus::InvalidArgument, e.to_string()))?;
        write(out, Box::into_raw(Box::new(SpScaleDataset { items })), "out")
    })
}

/// Number of instances; 0 for a null handle.
///
/// # Safety
/// `ds` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sp_scale_dataset_len(ds: *const SpScaleDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.items.len())
}

/// Instance `index`: object names (free with [`sp_string_free`]) and the
/// gold, 0 when the first object is greater and 1 otherwise.
///
/// # Safety
/// `ds` is a live handle; out-pointers are writable.
#[no_mangle]
pub unsafe extern "C" fn sp_scale_dataset_get(
    ds: *const SpScaleDataset,
    index: usize,
    obj_a: *mut *mut c_char,
    obj_b: *mut *mut c_char,
    gold: *mut u32,
) -> SpStatus {
    guard(|| {
        let d = deref(ds, "dataset")?;
        let item = d
            .items
            .get(index)
            .ok_or_else(|| Failure(SpStatus::OutOfRange, format!("index {index} >= {}", d.items.len())))?;
        if obj_a.is_null() || obj_b.is_null() || gold.is_null() {
            return Err(null("output pointer"));
        }
        obj_a.write(c_string(&item.obj_a));
        obj_b.write(c_string(&item.obj_b));
        gold.write(match item.gold {
            ScaleGold::AGreater => 0,
            ScaleGold::BGreater => 1,
        });
        Ok(())
    })
}

/// The dataset as JSON lines; free with [`sp_string_free`].
///
/// # Safety
/// `ds` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sp_scale_dataset_to_jsonl(ds: *const SpScaleDataset, out: *mut *mut c_char) -> SpStatus {
    guard(|| {
        let d = deref(ds, "dataset")?;
        write(out, c_string(&benchmark::to_jsonl(&d.items)), "out")
    })
}

/// # Safety
/// `ds` is null or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sp_scale_dataset_free(ds: *mut SpScaleDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Copies `width * height` values.
///
/// # Safety
/// `values` points to `width * height` floats; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sp_depth_map_new(width: usize, height: usize, values: *const f32, out: *mut *mut SpDepthMap) -> SpStatus {
    guard(|| {
        let n = width
            .checked_mul(height)
            .ok_or_else(|| Failure(SpStatus::InvalidArgument, "dimensions overflow".into()))?;
        if values.is_null() && n > 0 {
            return Err(null("values"));
        }
        let slice = if n == 0 { &[][..] } else { std::slice::from_raw_parts(values, n) };
        let map = DepthMap::new(width, height, slice.to_vec()).map_err(geometry_failure)?;
        write(out, Box::into_raw(Box::new(SpDepthMap { map })), "out")
    })
}

/// # Safety
/// `map` is null or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sp_depth_map_free(map: *mut SpDepthMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// Mean depth over the pixels covered by `bbox`.
///
/// # Safety
/// Pointers are live and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sp_mean_depth(map: *const SpDepthMap, bbox: *const SpBox, out: *mut f64) -> SpStatus {
    guard(|| {
        let m = deref(map, "map")?;
        let b = deref(bbox, "bbox")?.to_box("object");
        let d = geometry::mean_depth(&b, &m.map).map_err(geometry_failure)?;
        write(out, d, "out")
    })
}

/// `area * depth^2` (dimension 0) or `height * depth` (dimension 1).
///
/// # Safety
/// `bbox` is live and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sp_dimension_score(bbox: *const SpBox, depth: f64, dimension: u32, out: *mut f64) -> SpStatus {
    guard(|| {
        let b = deref(bbox, "bbox")?.to_box("object");
        let s = geometry::dimension_score(self::dimension(dimension)?, &b, depth).map_err(geometry_failure)?;
        write(out, s, "out")
    })
}

/// Compares two detected objects on one depth map.
///
/// # Safety
/// Pointers are live and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sp_compare_scale(
    a: *const SpBox,
    b: *const SpBox,
    map: *const SpDepthMap,
    dimension: u32,
    out: *mut SpScaleResult,
) -> SpStatus {
    guard(|| {
        let m = deref(map, "map")?;
        let record = DetectionRecord {
            image_id: String::new(),
            image_width: m.map.width() as u32,
            image_height: m.map.height() as u32,
            boxes: vec![deref(a, "a")?.to_box("a"), deref(b, "b")?.to_box("b")],
        };
        let j = geometry::compare_scale(&record, &m.map, "a", "b", self::dimension(dimension)?).map_err(geometry_failure)?;
        let r = match j.result {
            ScaleResult::AGreater => SpScaleResult::AGreater,
            ScaleResult::BGreater => SpScaleResult::BGreater,
            ScaleResult::Indeterminate => SpScaleResult::Indeterminate,
        };
        write(out, r, "out")
    })
}

/// Direction from `y`'s centroid to `x`'s centroid in `[0, 360)` degrees;
/// straight up on screen is 270.
///
/// # Safety
/// Pointers are live and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sp_centroid_angle(x: *const SpBox, y: *const SpBox, out: *mut f64) -> SpStatus {
    guard(|| {
        let theta = geometry::centroid_angle(&deref(x, "x")?.to_box("x"), &deref(y, "y")?.to_box("y")).map_err(geometry_failure)?;
        write(out, theta, "out")
    })
}

/// Relation whose angle window contains `degrees` (any real, normalized
/// first).
#[no_mangle]
pub extern "C" fn sp_relation_for_angle(degrees: f64) -> SpRelation {
    geometry::relation_for_angle(geometry::normalize_degrees(degrees)).into()
}

/// Relation of the person box to the object box, `inside` when at least
/// `tau` of the person's area is covered.
///
/// # Safety
/// Pointers are live and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sp_classify_relation(person: *const SpBox, object: *const SpBox, tau: f64, out: *mut SpRelation) -> SpStatus {
    guard(|| {
        let p = deref(person, "person")?.to_box("person");
        let o = deref(object, "object")?.to_box("object");
        let r = geometry::classify_relation(&p, &o, tau).map_err(geometry_failure)?;
        write(out, r.into(), "out")
    })
}

/// `r * subset + (1 - r) / k`.
///
/// # Safety
/// `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sp_expected_imputed_accuracy(recognized_ratio: f64, subset_accuracy: f64, k: usize, out: *mut f64) -> SpStatus {
    guard(|| {
        if k < 2 {
            return Err(Failure(SpStatus::InvalidArgument, format!("k must be at least 2, got {k}")));
        }
        if !(0.0..=1.0).contains(&recognized_ratio) || !(0.0..=1.0).contains(&subset_accuracy) {
            return Err(Failure(SpStatus::InvalidArgument, "ratios must lie in [0, 1]".into()));
        }
        write(out, metrics::expected_imputed_accuracy(recognized_ratio, subset_accuracy, k), "out")
    })
}

/// # Safety
/// `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sp_prediction_table_new(out: *mut *mut SpPredictionTable) -> SpStatus {
    guard(|| {
        write(
            out,
            Box::into_raw(Box::new(SpPredictionTable {
                table: PairPredictions::default(),
            })),
            "out",
        )
    })
}

/// Records the prediction for the ordered pair `(a, b)`: 0 means `a` is
/// greater, 1 smaller, -1 unrecognized.
///
/// # Safety
/// `table` is live; `a` and `b` are NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn sp_prediction_table_insert(table: *mut SpPredictionTable, a: *const c_char, b: *const c_char, comparison: i32) -> SpStatus {
    guard(|| {
        let t = table.as_mut().ok_or_else(|| null("table"))?;
        let (a, b) = (str_arg(a, "a")?, str_arg(b, "b")?);
        let cmp = match comparison {
            0 => Some(Comparison::Greater),
            1 => Some(Comparison::Smaller),
            -1 => None,
            other => return Err(Failure(SpStatus::InvalidArgument, format!("comparison must be 0, 1 or -1, got {other}"))),
        };
        t.table.insert(a, b, cmp);
        Ok(())
    })
}

/// Symmetry over unordered pairs and transitivity over ordered triples.
///
/// # Safety
/// `table` is live and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sp_prediction_table_consistency(table: *const SpPredictionTable, out: *mut SpConsistency) -> SpStatus {
    guard(|| {
        let r = metrics::consistency_report(&deref(table, "table")?.table);
        write(
            out,
            SpConsistency {
                symmetry: r.symmetry_pct,
                transitivity: r.transitivity_pct,
                pairs_evaluated: r.pairs_evaluated,
                pairs_consistent: r.pairs_consistent,
                triples_evaluated: r.triples_evaluated,
                triples_consistent: r.triples_consistent,
            },
            "out",
        )
    })
}

/// # Safety
/// `table` is null or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sp_prediction_table_free(table: *mut SpPredictionTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}
