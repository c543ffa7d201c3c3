//! Per-category object-scale statistics and the scale filter.

use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::segmap::{class_counts, ClassCatalog, ClassId, LabelMap};
use crate::selection::SelectionError;

/// Sample quantile by linear interpolation between order statistics
/// (`h = (n - 1) p`). `sorted` must be ascending and nonempty.
pub fn quantile_linear(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleBounds {
    pub t_min: f64,
    pub t_max: f64,
}

impl ScaleBounds {
    pub fn contains(&self, proportion: f64) -> bool {
        self.t_min <= proportion && proportion <= self.t_max
    }
}

/// First/third quartile of object proportion per category. Categories that
/// never occur in the labeled set have no entry and are not filtered.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScaleStats {
    bounds: Vec<Option<ScaleBounds>>,
}

impl ScaleStats {
    /// Stats with no entries: the scale filter passes everything.
    pub fn unconstrained(catalog: &ClassCatalog) -> Self {
        ScaleStats {
            bounds: vec![None; catalog.num_classes()],
        }
    }

    pub fn from_bounds(bounds: Vec<Option<ScaleBounds>>) -> Result<Self, SelectionError> {
        for (y, b) in bounds.iter().enumerate() {
            if let Some(b) = b {
                if !(0.0 <= b.t_min && b.t_min <= b.t_max && b.t_max <= 1.0) {
                    return Err(SelectionError::Stats(format!(
                        "category {y}: bounds [{}, {}] outside 0 <= t_min <= t_max <= 1",
                        b.t_min, b.t_max
                    )));
                }
            }
        }
        Ok(ScaleStats { bounds })
    }

    pub fn get(&self, category: ClassId) -> Option<ScaleBounds> {
        self.bounds.get(usize::from(category)).copied().flatten()
    }

    pub fn set(&mut self, category: ClassId, bounds: Option<ScaleBounds>) {
        let idx = usize::from(category);
        if self.bounds.len() <= idx {
            self.bounds.resize(idx + 1, None);
        }
        self.bounds[idx] = bounds;
    }

    /// True when no bounds exist for `category` or `proportion` lies inside them.
    pub fn admits(&self, category: ClassId, proportion: f64) -> bool {
        self.get(category).is_none_or(|b| b.contains(proportion))
    }

    /// CSV with header `category,t_min,t_max`; absent categories get no row.
    pub fn write_csv<W: Write>(&self, catalog: &ClassCatalog, out: W) -> Result<(), SelectionError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["category", "t_min", "t_max"])?;
        for y in catalog.object_ids() {
            if let Some(b) = self.get(y) {
                let name = catalog.name(y).unwrap_or_default();
                w.write_record([name, &b.t_min.to_string(), &b.t_max.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV produced by [`ScaleStats::write_csv`]. The category column
    /// may hold a class name or a numeric id; `#` lines are comments.
    pub fn read_csv<R: Read>(catalog: &ClassCatalog, input: R) -> Result<Self, SelectionError> {
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(input);
        let mut stats = ScaleStats::unconstrained(catalog);
        for row in r.records() {
            let row = row?;
            if row.len() != 3 {
                return Err(SelectionError::Stats(format!("expected 3 columns, got {}", row.len())));
            }
            let y = resolve_category(catalog, &row[0])?;
            let parse = |s: &str| f64::from_str(s).map_err(|e| SelectionError::Stats(format!("bad bound `{s}`: {e}")));
            stats.set(
                y,
                Some(ScaleBounds {
                    t_min: parse(&row[1])?,
                    t_max: parse(&row[2])?,
                }),
            );
        }
        ScaleStats::from_bounds(stats.bounds)
    }
}

fn resolve_category(catalog: &ClassCatalog, s: &str) -> Result<ClassId, SelectionError> {
    if let Some(pos) = catalog.names().iter().position(|n| n == s) {
        if pos > 0 {
            return Ok(pos as ClassId);
        }
    }
    match s.parse::<u8>() {
        Ok(y) if y > 0 && catalog.is_class(y) => Ok(y),
        _ => Err(SelectionError::Stats(format!("unknown category `{s}`"))),
    }
}

/// Quartiles of each category's pixel proportion over the labeled images
/// that contain it.
pub fn compute_scale_stats<'a, I>(labeled: I, catalog: &ClassCatalog) -> Result<ScaleStats, SelectionError>
where
    I: IntoIterator<Item = &'a LabelMap>,
{
    let mut samples: Vec<Vec<f64>> = vec![Vec::new(); catalog.num_classes()];
    let mut seen = 0usize;
    for gt in labeled {
        seen += 1;
        let (counts, valid) = class_counts(gt, catalog)?;
        if valid == 0 {
            continue;
        }
        for y in catalog.object_ids() {
            let c = counts[usize::from(y)];
            if c > 0 {
                samples[usize::from(y)].push(c as f64 / valid as f64);
            }
        }
    }
    if seen == 0 {
        return Err(SelectionError::EmptyLabeledSet);
    }
    let mut stats = ScaleStats::unconstrained(catalog);
    for y in catalog.object_ids() {
        let s = &mut samples[usize::from(y)];
        if s.is_empty() {
            continue;
        }
        s.sort_by(f64::total_cmp);
        stats.set(
            y,
            Some(ScaleBounds {
                t_min: quantile_linear(s, 0.25),
                t_max: quantile_linear(s, 0.75),
            }),
        );
    }
    Ok(stats)
}

/// Whose prediction supplies the object proportion tested against the bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleSource {
    #[default]
    Defender,
    Attacker,
    Both,
}

impl ScaleSource {
    pub fn as_str(self) -> &'static str {
        match self {
            ScaleSource::Defender => "defender",
            ScaleSource::Attacker => "attacker",
            ScaleSource::Both => "both",
        }
    }
}

impl FromStr for ScaleSource {
    type Err = SelectionError;
    fn from_str(s: &str) -> Result<Self, SelectionError> {
        match s {
            "defender" => Ok(ScaleSource::Defender),
            "attacker" => Ok(ScaleSource::Attacker),
            "both" => Ok(ScaleSource::Both),
            _ => Err(SelectionError::Config(format!(
                "unknown scale source `{s}` (expected defender, attacker or both)"
            ))),
        }
    }
}
