//! Label maps, confusion matrices and the concordance metrics built on them.
//!
//! A label map stores one class id per pixel. Class ids are contiguous from
//! `0` (background) to `|Y|`; a separate sentinel (`255` by default) marks
//! void pixels, which are dropped from every count.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

pub type ClassId = u8;

pub const BACKGROUND: ClassId = 0;
pub const DEFAULT_IGNORE: ClassId = 255;

#[derive(Debug, thiserror::Error)]
pub enum SegError {
    #[error("{path}: {source}")]
    AtPath {
        path: PathBuf,
        #[source]
        source: Box<SegError>,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("png decode failed: {0}")]
    Decode(String),
    #[error("png encode failed: {0}")]
    Encode(String),
    #[error("unsupported pixel format {color} at {depth} bits; expected 8-bit grayscale or palette")]
    Format { color: String, depth: u8 },
    #[error("label map has zero area ({width}x{height})")]
    EmptyMap { width: u32, height: u32 },
    #[error("pixel buffer holds {len} values, expected {width}x{height}")]
    BufferSize { width: u32, height: u32, len: usize },
    #[error(
        "pixel value {value} at (x={x}, y={y}) is neither a class id in 0..={max_class} nor the ignore id {ignore}"
    )]
    InvalidPixel {
        value: u8,
        x: u32,
        y: u32,
        max_class: u8,
        ignore: u8,
    },
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("no non-ignored pixels to compare")]
    NoValidPixels,
    #[error("invalid class catalog: {0}")]
    Catalog(String),
    #[error("unknown metric `{0}` (expected miou, fwiou or mpa)")]
    UnknownMetric(String),
}

impl SegError {
    fn at(self, path: &Path) -> SegError {
        SegError::AtPath {
            path: path.to_path_buf(),
            source: Box::new(self),
        }
    }
}

/// Ordered class names indexed by class id, plus the ignore sentinel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CatalogRepr", into = "CatalogRepr")]
pub struct ClassCatalog {
    classes: Vec<String>,
    ignore_id: ClassId,
}

#[derive(Serialize, Deserialize)]
struct CatalogRepr {
    classes: Vec<String>,
    #[serde(default = "default_ignore")]
    ignore_id: ClassId,
}

fn default_ignore() -> ClassId {
    DEFAULT_IGNORE
}

impl TryFrom<CatalogRepr> for ClassCatalog {
    type Error = SegError;
    fn try_from(r: CatalogRepr) -> Result<Self, SegError> {
        ClassCatalog::new(r.classes, r.ignore_id)
    }
}

impl From<ClassCatalog> for CatalogRepr {
    fn from(c: ClassCatalog) -> Self {
        CatalogRepr {
            classes: c.classes,
            ignore_id: c.ignore_id,
        }
    }
}

impl ClassCatalog {
    /// `classes[0]` names the background; at least one object class is required.
    pub fn new(classes: Vec<String>, ignore_id: ClassId) -> Result<Self, SegError> {
        if classes.len() < 2 {
            return Err(SegError::Catalog(
                "need background plus at least one object class".into(),
            ));
        }
        if classes.len() > usize::from(u8::MAX) {
            return Err(SegError::Catalog(format!(
                "{} classes do not fit 8-bit label maps",
                classes.len()
            )));
        }
        if usize::from(ignore_id) < classes.len() {
            return Err(SegError::Catalog(format!(
                "ignore id {ignore_id} collides with class `{}`",
                classes[usize::from(ignore_id)]
            )));
        }
        Ok(ClassCatalog { classes, ignore_id })
    }

    /// Catalog named `background, class1, ..., class{objects}` with ignore 255.
    pub fn numbered(objects: usize) -> Result<Self, SegError> {
        let mut names = vec!["background".to_string()];
        names.extend((1..=objects).map(|i| format!("class{i}")));
        ClassCatalog::new(names, DEFAULT_IGNORE)
    }

    /// Number of class ids including background, i.e. `|Y| + 1`.
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn num_objects(&self) -> usize {
        self.classes.len() - 1
    }

    pub fn object_ids(&self) -> impl Iterator<Item = ClassId> {
        1..self.classes.len() as ClassId
    }

    pub fn ignore_id(&self) -> ClassId {
        self.ignore_id
    }

    pub fn name(&self, id: ClassId) -> Option<&str> {
        self.classes.get(usize::from(id)).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.classes
    }

    pub fn is_class(&self, v: u8) -> bool {
        usize::from(v) < self.classes.len()
    }
}

/// Dense row-major grid of class ids (or the ignore sentinel).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMap {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl LabelMap {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, SegError> {
        if width == 0 || height == 0 {
            return Err(SegError::EmptyMap { width, height });
        }
        if pixels.len() != width as usize * height as usize {
            return Err(SegError::BufferSize {
                width,
                height,
                len: pixels.len(),
            });
        }
        Ok(LabelMap { width, height, pixels })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Result<Self, SegError> {
        LabelMap::new(width, height, vec![value; width as usize * height as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    /// Checks every pixel against the catalog.
    pub fn validate(&self, catalog: &ClassCatalog) -> Result<(), SegError> {
        for (n, &v) in self.pixels.iter().enumerate() {
            if !catalog.is_class(v) && v != catalog.ignore_id() {
                return Err(self.invalid_pixel(n, v, catalog));
            }
        }
        Ok(())
    }

    fn invalid_pixel(&self, n: usize, value: u8, catalog: &ClassCatalog) -> SegError {
        SegError::InvalidPixel {
            value,
            x: (n % self.width as usize) as u32,
            y: (n / self.width as usize) as u32,
            max_class: (catalog.num_classes() - 1) as u8,
            ignore: catalog.ignore_id(),
        }
    }

    fn same_shape(&self, other: &LabelMap) -> Result<(), SegError> {
        if self.width != other.width || self.height != other.height {
            return Err(SegError::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }
}

/// Reads an 8-bit grayscale or palette PNG and validates it against `catalog`.
///
/// Palette images are read as raw indices; the palette colors are ignored.
pub fn load_label_map(path: &Path, catalog: &ClassCatalog) -> Result<LabelMap, SegError> {
    read_png(path)
        .and_then(|map| map.validate(catalog).map(|()| map))
        .map_err(|e| e.at(path))
}

fn read_png(path: &Path) -> Result<LabelMap, SegError> {
    let file = File::open(path)?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| SegError::Decode(e.to_string()))?;
    let (color, depth) = reader.output_color_type();
    let supported =
        matches!(color, png::ColorType::Grayscale | png::ColorType::Indexed) && depth == png::BitDepth::Eight;
    if !supported {
        return Err(SegError::Format {
            color: format!("{color:?}"),
            depth: depth as u8,
        });
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| SegError::Decode("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| SegError::Decode(e.to_string()))?;
    if info.width == 0 || info.height == 0 {
        return Err(SegError::EmptyMap {
            width: info.width,
            height: info.height,
        });
    }
    let row = info.width as usize;
    let pixels = if info.line_size == row {
        buf.truncate(row * info.height as usize);
        buf
    } else {
        buf.chunks(info.line_size)
            .take(info.height as usize)
            .flat_map(|line| &line[..row])
            .copied()
            .collect()
    };
    LabelMap::new(info.width, info.height, pixels)
}

/// Writes an 8-bit grayscale PNG whose pixel values are the class ids.
pub fn save_label_map(map: &LabelMap, path: &Path) -> Result<(), SegError> {
    let write = || -> Result<(), SegError> {
        let mut out = BufWriter::new(File::create(path)?);
        encode_label_map(map, &mut out)?;
        out.flush()?;
        Ok(())
    };
    write().map_err(|e| e.at(path))
}

/// PNG encoding used by [`save_label_map`], for callers that need the bytes.
pub fn encode_label_map<W: Write>(map: &LabelMap, out: W) -> Result<(), SegError> {
    let mut encoder = png::Encoder::new(out, map.width, map.height);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(|e| SegError::Encode(e.to_string()))?;
    writer
        .write_image_data(&map.pixels)
        .map_err(|e| SegError::Encode(e.to_string()))?;
    writer.finish().map_err(|e| SegError::Encode(e.to_string()))
}

/// Pixel co-occurrence counts between two label maps.
///
/// `count(y, y2)` is the number of pixels labeled `y` in the first map and
/// `y2` in the second.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
    total: u64,
}

impl ConfusionMatrix {
    /// Builds a matrix from a row-major `n x n` count grid.
    pub fn from_counts(n: usize, counts: Vec<u64>) -> Self {
        assert_eq!(counts.len(), n * n, "confusion grid must be n x n");
        let total = counts.iter().sum();
        ConfusionMatrix { n, counts, total }
    }

    pub fn num_classes(&self) -> usize {
        self.n
    }

    pub fn count(&self, row: usize, col: usize) -> u64 {
        self.counts[row * self.n + col]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn row_sum(&self, y: usize) -> u64 {
        self.counts[y * self.n..(y + 1) * self.n].iter().sum()
    }

    pub fn col_sum(&self, y: usize) -> u64 {
        (0..self.n).map(|r| self.count(r, y)).sum()
    }

    pub fn transpose(&self) -> ConfusionMatrix {
        let mut counts = vec![0; self.n * self.n];
        for r in 0..self.n {
            for c in 0..self.n {
                counts[c * self.n + r] = self.count(r, c);
            }
        }
        ConfusionMatrix {
            n: self.n,
            counts,
            total: self.total,
        }
    }

    /// `(intersection, union)` for class `y`.
    pub fn overlap(&self, y: usize) -> (u64, u64) {
        let diag = self.count(y, y);
        (diag, self.row_sum(y) + self.col_sum(y) - diag)
    }

    fn nonempty(&self) -> Result<(), SegError> {
        if self.total == 0 {
            Err(SegError::NoValidPixels)
        } else {
            Ok(())
        }
    }

    /// Mean IoU over classes with a nonzero union.
    pub fn miou<T: Scalar>(&self) -> Result<T, SegError> {
        self.nonempty()?;
        let mut sum = T::zero();
        let mut classes = 0u64;
        for y in 0..self.n {
            let (inter, union) = self.overlap(y);
            if union > 0 {
                sum = sum + T::from_count(inter) / T::from_count(union);
                classes += 1;
            }
        }
        Ok(sum / T::from_count(classes))
    }

    /// IoU weighted by each class's pixel frequency in the first map.
    pub fn fwiou<T: Scalar>(&self) -> Result<T, SegError> {
        self.nonempty()?;
        let total = T::from_count(self.total);
        let mut sum = T::zero();
        for y in 0..self.n {
            let (inter, union) = self.overlap(y);
            if union > 0 {
                sum = sum + T::from_count(self.row_sum(y)) * (T::from_count(inter) / T::from_count(union));
            }
        }
        // one division at the end keeps the identity case exactly 1
        Ok(sum / total)
    }

    /// Mean per-class recall of the first map's labels.
    pub fn mpa<T: Scalar>(&self) -> Result<T, SegError> {
        self.nonempty()?;
        let mut sum = T::zero();
        let mut classes = 0u64;
        for y in 0..self.n {
            let row = self.row_sum(y);
            if row > 0 {
                sum = sum + T::from_count(self.count(y, y)) / T::from_count(row);
                classes += 1;
            }
        }
        Ok(sum / T::from_count(classes))
    }

    pub fn score<T: Scalar>(&self, metric: MetricKind) -> Result<T, SegError> {
        match metric {
            MetricKind::Miou => self.miou(),
            MetricKind::Fwiou => self.fwiou(),
            MetricKind::Mpa => self.mpa(),
        }
    }
}

/// Tallies `confusion(a, b)`; pixels ignored in either map are skipped.
pub fn confusion(a: &LabelMap, b: &LabelMap, catalog: &ClassCatalog) -> Result<ConfusionMatrix, SegError> {
    a.same_shape(b)?;
    let n = catalog.num_classes();
    let ignore = catalog.ignore_id();
    let mut counts = vec![0u64; n * n];
    let mut total = 0u64;
    for (idx, (&pa, &pb)) in a.pixels.iter().zip(&b.pixels).enumerate() {
        if pa == ignore || pb == ignore {
            continue;
        }
        if !catalog.is_class(pa) {
            return Err(a.invalid_pixel(idx, pa, catalog));
        }
        if !catalog.is_class(pb) {
            return Err(b.invalid_pixel(idx, pb, catalog));
        }
        counts[usize::from(pa) * n + usize::from(pb)] += 1;
        total += 1;
    }
    Ok(ConfusionMatrix { n, counts, total })
}

/// The three concordance measures supported by the selection objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    #[default]
    Miou,
    Fwiou,
    Mpa,
}

impl MetricKind {
    pub const ALL: [MetricKind; 3] = [MetricKind::Miou, MetricKind::Fwiou, MetricKind::Mpa];

    pub fn is_symmetric(self) -> bool {
        matches!(self, MetricKind::Miou)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Miou => "miou",
            MetricKind::Fwiou => "fwiou",
            MetricKind::Mpa => "mpa",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = SegError;
    fn from_str(s: &str) -> Result<Self, SegError> {
        match s.to_ascii_lowercase().as_str() {
            "miou" => Ok(MetricKind::Miou),
            "fwiou" => Ok(MetricKind::Fwiou),
            "mpa" => Ok(MetricKind::Mpa),
            _ => Err(SegError::UnknownMetric(s.to_string())),
        }
    }
}

/// `metric(confusion(a, b))`.
pub fn concordance<T: Scalar>(
    a: &LabelMap,
    b: &LabelMap,
    metric: MetricKind,
    catalog: &ClassCatalog,
) -> Result<T, SegError> {
    confusion(a, b, catalog)?.score(metric)
}

/// Per-class pixel counts and the number of non-ignored pixels.
pub fn class_counts(map: &LabelMap, catalog: &ClassCatalog) -> Result<(Vec<u64>, u64), SegError> {
    let mut counts = vec![0u64; catalog.num_classes()];
    let mut valid = 0u64;
    for (idx, &v) in map.pixels.iter().enumerate() {
        if v == catalog.ignore_id() {
            continue;
        }
        if !catalog.is_class(v) {
            return Err(map.invalid_pixel(idx, v, catalog));
        }
        counts[usize::from(v)] += 1;
        valid += 1;
    }
    Ok((counts, valid))
}

/// Fraction of non-ignored pixels carrying each class id.
pub fn class_proportions<T: Scalar>(map: &LabelMap, catalog: &ClassCatalog) -> Result<Vec<T>, SegError> {
    let (counts, valid) = class_counts(map, catalog)?;
    if valid == 0 {
        return Err(SegError::NoValidPixels);
    }
    let valid = T::from_count(valid);
    Ok(counts.into_iter().map(|c| T::from_count(c) / valid).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cat2() -> ClassCatalog {
        ClassCatalog::numbered(1).unwrap()
    }

    fn map(w: u32, h: u32, px: &[u8]) -> LabelMap {
        LabelMap::new(w, h, px.to_vec()).unwrap()
    }

    #[test]
    fn confusion_counts_small_example() {
        let a = map(2, 2, &[0, 1, 1, 1]);
        let b = map(2, 2, &[0, 1, 0, 1]);
        let cm = confusion(&a, &b, &cat2()).unwrap();
        assert_eq!(cm.counts(), &[1, 0, 1, 2]);
        assert_eq!(cm.total(), 4);
        assert_eq!(confusion(&b, &a, &cat2()).unwrap(), cm.transpose());
    }

    #[test]
    fn confusion_with_itself_is_diagonal() {
        let cat = ClassCatalog::numbered(3).unwrap();
        let a = map(3, 2, &[0, 1, 1, 3, 3, 3]);
        let cm = confusion(&a, &a, &cat).unwrap();
        assert_eq!(cm.count(0, 0), 1);
        assert_eq!(cm.count(1, 1), 2);
        assert_eq!(cm.count(2, 2), 0);
        assert_eq!(cm.count(3, 3), 3);
        assert_eq!(cm.total(), 6);
        assert_eq!(cm.counts().iter().sum::<u64>(), 6);
    }

    #[test]
    fn ignored_pixels_are_excluded() {
        let a = map(2, 1, &[0, 255]);
        let b = map(2, 1, &[0, 1]);
        let cm = confusion(&a, &b, &cat2()).unwrap();
        assert_eq!(cm.counts(), &[1, 0, 0, 0]);
        assert_eq!(cm.total(), 1);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let a = map(2, 1, &[0, 1]);
        let b = map(1, 2, &[0, 1]);
        assert!(matches!(
            confusion(&a, &b, &cat2()),
            Err(SegError::DimensionMismatch(2, 1, 1, 2))
        ));
    }

    #[test]
    fn metric_values_on_reference_matrix() {
        let cm = ConfusionMatrix::from_counts(2, vec![1, 0, 1, 2]);
        assert!((cm.miou::<f64>().unwrap() - 7.0 / 12.0).abs() < 1e-15);
        assert!((cm.fwiou::<f64>().unwrap() - 0.625).abs() < 1e-15);
        assert!((cm.mpa::<f64>().unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert!((cm.miou::<f32>().unwrap() - 7.0 / 12.0).abs() < 1e-6);
    }

    #[test]
    fn mpa_skips_classes_without_row_support() {
        let cm = ConfusionMatrix::from_counts(2, vec![0, 0, 2, 2]);
        assert_eq!(cm.mpa::<f64>().unwrap(), 0.5);
    }

    #[test]
    fn disjoint_maps_score_zero_miou() {
        let a = map(2, 1, &[1, 1]);
        let b = map(2, 1, &[0, 0]);
        let s: f64 = concordance(&a, &b, MetricKind::Miou, &cat2()).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn identity_scores_one_for_every_metric() {
        let cat = ClassCatalog::numbered(4).unwrap();
        let a = map(3, 2, &[0, 4, 2, 2, 255, 1]);
        for m in MetricKind::ALL {
            assert_eq!(concordance::<f64>(&a, &a, m, &cat).unwrap(), 1.0, "{m}");
        }
        let single = LabelMap::filled(4, 4, 2).unwrap();
        assert_eq!(single.len(), 16);
        assert_eq!(
            concordance::<f64>(&single, &single, MetricKind::Fwiou, &cat).unwrap(),
            1.0
        );
    }

    #[test]
    fn mpa_is_order_dependent() {
        // rows of a: recall 1 and 2/3; rows of b: recall 1/2 and 1
        let a = map(4, 1, &[0, 1, 1, 1]);
        let b = map(4, 1, &[0, 0, 1, 1]);
        let ab: f64 = concordance(&a, &b, MetricKind::Mpa, &cat2()).unwrap();
        let ba: f64 = concordance(&b, &a, MetricKind::Mpa, &cat2()).unwrap();
        assert!((ab - 5.0 / 6.0).abs() < 1e-15);
        assert!((ba - 0.75).abs() < 1e-15);
        let miou_ab: f64 = concordance(&a, &b, MetricKind::Miou, &cat2()).unwrap();
        let miou_ba: f64 = concordance(&b, &a, MetricKind::Miou, &cat2()).unwrap();
        assert_eq!(miou_ab, miou_ba);
    }

    #[test]
    fn all_ignored_is_an_error() {
        let a = map(2, 1, &[255, 255]);
        assert!(matches!(
            concordance::<f64>(&a, &a, MetricKind::Miou, &cat2()),
            Err(SegError::NoValidPixels)
        ));
        assert!(matches!(
            class_proportions::<f64>(&a, &cat2()),
            Err(SegError::NoValidPixels)
        ));
    }

    #[test]
    fn proportions_examples() {
        let cat = ClassCatalog::numbered(2).unwrap();
        let p: Vec<f64> = class_proportions(&map(4, 1, &[0, 0, 1, 1]), &cat).unwrap();
        assert_eq!(p, vec![0.5, 0.5, 0.0]);
        let p: Vec<f64> = class_proportions(&map(2, 2, &[2, 2, 2, 2]), &cat).unwrap();
        assert_eq!(p, vec![0.0, 0.0, 1.0]);
        let cat3 = ClassCatalog::numbered(3).unwrap();
        let p: Vec<f64> = class_proportions(&map(4, 1, &[0, 1, 2, 255]), &cat3).unwrap();
        for v in &p[..3] {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(p[3], 0.0);
    }

    #[test]
    fn catalog_validation() {
        assert!(ClassCatalog::new(vec!["bg".into()], 255).is_err());
        assert!(ClassCatalog::new(vec!["bg".into(), "a".into()], 1).is_err());
        let c = ClassCatalog::new(vec!["bg".into(), "a".into()], 2).unwrap();
        assert_eq!(c.num_objects(), 1);
        assert_eq!(c.object_ids().collect::<Vec<_>>(), vec![1]);
        let json = serde_json::to_string(&c).unwrap();
        let back: ClassCatalog = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        assert!(serde_json::from_str::<ClassCatalog>(r#"{"classes":["bg","a"],"ignore_id":0}"#).is_err());
    }

    #[test]
    fn metric_kind_parsing() {
        assert_eq!("MIOU".parse::<MetricKind>().unwrap(), MetricKind::Miou);
        assert_eq!("fwiou".parse::<MetricKind>().unwrap(), MetricKind::Fwiou);
        assert!("iou".parse::<MetricKind>().is_err());
        assert_eq!(MetricKind::default(), MetricKind::Miou);
    }
}
