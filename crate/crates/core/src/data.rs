//! Tabular ingestion, feature schemas and train/validation/test splitting.
//!
//! Cells are kept as trimmed text until a [`FeatureSchema`] is applied. A cell that is
//! empty or equal to `?` is treated as missing; [`Imputer`] fills missing cells with the
//! training median (continuous) or mode (discrete and categorical).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const DEFAULT_CATEGORICAL_THRESHOLD: usize = 10;

/// Tolerance used when checking that split fractions sum to one.
const FRACTION_SUM_TOL: f64 = 1e-12;

pub fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell == "?"
}

/// A rectangular table of text cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    column_names: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Dataset {
    pub fn new(column_names: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self> {
        if column_names.is_empty() {
            return Err(Error::Data("dataset needs at least one column".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != column_names.len() {
                return Err(Error::RaggedRow {
                    line: i as u64 + 1,
                    expected: column_names.len(),
                    found: row.len(),
                });
            }
        }
        Ok(Dataset { column_names, rows })
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.column_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = &str> + '_ {
        self.rows.iter().map(move |r| r[j].as_str())
    }

    /// Rows at the given indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            column_names: self.column_names.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    pub fn parse_str(text: &str, delimiter: u8, has_header: bool) -> Result<Self> {
        parse_delimited(text.as_bytes(), delimiter, has_header)
    }
}

/// Reads a delimited file. Cells are trimmed; numeric cells stay as text.
pub fn load_csv(path: impl AsRef<Path>, delimiter: u8, has_header: bool) -> Result<Dataset> {
    let bytes = fs::read(path.as_ref())?;
    parse_delimited(&bytes, delimiter, has_header)
}

fn parse_delimited(bytes: &[u8], delimiter: u8, has_header: bool) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(None)
        .from_reader(bytes);

    let mut header: Option<Vec<String>> = None;
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut arity: Option<usize> = None;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Data(e.to_string()))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let cells: Vec<String> = record.iter().map(|c| c.to_string()).collect();
        if cells.len() == 1 && cells[0].is_empty() {
            continue;
        }
        match arity {
            None => arity = Some(cells.len()),
            Some(n) if n != cells.len() => {
                return Err(Error::RaggedRow {
                    line,
                    expected: n,
                    found: cells.len(),
                })
            }
            _ => {}
        }
        if has_header && header.is_none() {
            header = Some(cells);
        } else {
            rows.push(cells);
        }
    }
    let arity = arity.ok_or_else(|| Error::Data("empty file".into()))?;
    if rows.is_empty() {
        return Err(Error::Data("file has no data rows".into()));
    }
    let column_names = header.unwrap_or_else(|| (0..arity).map(|j| format!("c{j}")).collect());
    Dataset::new(column_names, rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KindTag {
    Discrete,
    Categorical,
    Continuous,
}

impl fmt::Display for KindTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KindTag::Discrete => "discrete",
            KindTag::Categorical => "categorical",
            KindTag::Continuous => "continuous",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureKind {
    Discrete { values: Vec<String> },
    Categorical { values: Vec<String> },
    Continuous { min: f64, max: f64 },
}

impl FeatureKind {
    pub fn tag(&self) -> KindTag {
        match self {
            FeatureKind::Discrete { .. } => KindTag::Discrete,
            FeatureKind::Categorical { .. } => KindTag::Categorical,
            FeatureKind::Continuous { .. } => KindTag::Continuous,
        }
    }

    pub fn values(&self) -> Option<&[String]> {
        match self {
            FeatureKind::Discrete { values } | FeatureKind::Categorical { values } => Some(values),
            FeatureKind::Continuous { .. } => None,
        }
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self, FeatureKind::Continuous { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub name: String,
    pub kind: FeatureKind,
}

impl Feature {
    /// Index of `cell` in this feature's value list. Matching is exact first, then
    /// numeric (so `1.0` matches `1`), then case-insensitive for booleans.
    pub fn value_index(&self, cell: &str) -> Option<usize> {
        let values = self.kind.values()?;
        value_index(values, cell)
    }
}

pub(crate) fn value_index(values: &[String], cell: &str) -> Option<usize> {
    if let Some(i) = values.iter().position(|v| v == cell) {
        return Some(i);
    }
    if let Ok(x) = cell.parse::<f64>() {
        if let Some(i) = values
            .iter()
            .position(|v| v.parse::<f64>().map(|y| y == x).unwrap_or(false))
        {
            return Some(i);
        }
    }
    let lower = cell.to_ascii_lowercase();
    values.iter().position(|v| v.to_ascii_lowercase() == lower)
}

/// Per-column feature kinds, value lists and observed ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSchema {
    pub features: Vec<Feature>,
}

impl FeatureSchema {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        for f in &self.features {
            match &f.kind {
                FeatureKind::Continuous { min, max } => {
                    if !(min < max) {
                        return Err(Error::Data(format!(
                            "continuous feature {} needs min < max (got {min}, {max})",
                            f.name
                        )));
                    }
                }
                FeatureKind::Discrete { values } | FeatureKind::Categorical { values } => {
                    if values.is_empty() {
                        return Err(Error::Data(format!("feature {} has no values", f.name)));
                    }
                    let distinct: BTreeSet<&String> = values.iter().collect();
                    if distinct.len() != values.len() {
                        return Err(Error::Data(format!(
                            "feature {} has duplicate values",
                            f.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Checks column names against `d`, returning the offending columns on mismatch.
    pub fn check_compatible(&self, d: &Dataset) -> Result<()> {
        if d.n_cols() != self.len() {
            return Err(Error::Data(format!(
                "schema has {} columns but data has {}",
                self.len(),
                d.n_cols()
            )));
        }
        let bad: Vec<String> = self
            .features
            .iter()
            .zip(d.column_names())
            .filter(|(f, n)| &f.name != *n)
            .map(|(f, n)| format!("{n} (expected {})", f.name))
            .collect();
        if !bad.is_empty() {
            return Err(Error::Data(format!("column mismatch: {}", bad.join(", "))));
        }
        Ok(())
    }

    /// Recomputes continuous ranges from `train`. A continuous column that is constant
    /// on `train` is demoted to a one-value categorical.
    pub fn with_ranges_from(&self, train: &Dataset) -> FeatureSchema {
        let features = self
            .features
            .iter()
            .enumerate()
            .map(|(j, f)| match f.kind {
                FeatureKind::Continuous { .. } => {
                    let xs: Vec<f64> = train
                        .column(j)
                        .filter(|c| !is_missing(c))
                        .filter_map(|c| c.parse::<f64>().ok())
                        .collect();
                    let (lo, hi) = min_max(&xs);
                    match (lo, hi) {
                        (Some(lo), Some(hi)) if lo < hi => Feature {
                            name: f.name.clone(),
                            kind: FeatureKind::Continuous { min: lo, max: hi },
                        },
                        (Some(lo), _) => Feature {
                            name: f.name.clone(),
                            kind: FeatureKind::Categorical {
                                values: vec![format_number(lo)],
                            },
                        },
                        _ => f.clone(),
                    }
                }
                _ => f.clone(),
            })
            .collect();
        FeatureSchema { features }
    }

    /// Renders the schema sidecar: one `name:kind[:min:max]` line per column.
    pub fn to_sidecar(&self) -> String {
        let mut out = String::new();
        for f in &self.features {
            match &f.kind {
                FeatureKind::Continuous { min, max } => {
                    out.push_str(&format!("{}:continuous:{}:{}\n", f.name, min, max))
                }
                k => out.push_str(&format!("{}:{}\n", f.name, k.tag())),
            }
        }
        out
    }
}

fn min_max(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    let lo = xs.iter().copied().fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.min(x))));
    let hi = xs.iter().copied().fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))));
    (lo, hi)
}

fn format_number(x: f64) -> String {
    format!("{x}")
}

fn parse_bool(cell: &str) -> Option<bool> {
    match cell.to_ascii_lowercase().as_str() {
        "true" => Some(true),
        "false" => Some(false),
        _ => None,
    }
}

/// Infers a schema. A column is continuous iff every present cell parses as a real and it
/// has more than `categorical_threshold` distinct values; integer or boolean columns at or
/// under the threshold are discrete; everything else is categorical.
pub fn infer_schema(d: &Dataset, categorical_threshold: usize) -> FeatureSchema {
    let features = (0..d.n_cols())
        .map(|j| Feature {
            name: d.column_names()[j].clone(),
            kind: infer_kind(d.column(j).filter(|c| !is_missing(c)), categorical_threshold),
        })
        .collect();
    FeatureSchema { features }
}

fn infer_kind<'a>(cells: impl Iterator<Item = &'a str>, threshold: usize) -> FeatureKind {
    let cells: Vec<&str> = cells.collect();
    if cells.is_empty() {
        return FeatureKind::Categorical {
            values: vec!["?".into()],
        };
    }
    let distinct: BTreeSet<&str> = cells.iter().copied().collect();
    let reals: Option<Vec<f64>> = cells.iter().map(|c| c.parse::<f64>().ok()).collect();

    if let Some(reals) = &reals {
        let mut numeric: Vec<f64> = reals.clone();
        numeric.sort_by(f64::total_cmp);
        numeric.dedup();
        if numeric.len() > threshold {
            let (lo, hi) = (numeric[0], numeric[numeric.len() - 1]);
            if lo < hi {
                return FeatureKind::Continuous { min: lo, max: hi };
            }
        }
    }

    if distinct.len() <= threshold {
        let ints: Option<BTreeSet<i64>> = cells.iter().map(|c| c.parse::<i64>().ok()).collect();
        if let Some(ints) = ints {
            return FeatureKind::Discrete {
                values: ints.iter().map(|v| v.to_string()).collect(),
            };
        }
        let bools: Option<BTreeSet<bool>> = cells.iter().map(|c| parse_bool(c)).collect();
        if let Some(bools) = bools {
            // true first, so that a true cell encodes as [1, 0]
            let values = bools.iter().rev().map(|b| b.to_string()).collect();
            return FeatureKind::Discrete { values };
        }
    }

    let values = match &reals {
        Some(_) => {
            let mut by_value: BTreeMap<u64, String> = BTreeMap::new();
            let mut ordered: Vec<(f64, String)> = Vec::new();
            for c in &distinct {
                let x: f64 = c.parse().unwrap_or(f64::NAN);
                if by_value.insert(x.to_bits(), c.to_string()).is_none() {
                    ordered.push((x, c.to_string()));
                }
            }
            ordered.sort_by(|a, b| a.0.total_cmp(&b.0));
            ordered.into_iter().map(|(_, s)| s).collect()
        }
        None => distinct.iter().map(|s| s.to_string()).collect(),
    };
    FeatureKind::Categorical { values }
}

/// One parsed line of a schema sidecar file.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaHint {
    pub name: String,
    pub kind: KindTag,
    pub range: Option<(f64, f64)>,
}

/// Parses a sidecar of `name:kind[:min:max]` lines (blank lines and `#` comments skipped).
pub fn parse_schema_sidecar(text: &str) -> Result<Vec<SchemaHint>> {
    let mut hints = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split(':').map(str::trim).collect();
        let bad = |msg: &str| Error::Data(format!("schema line {}: {msg}", i + 1));
        if parts.len() < 2 {
            return Err(bad("expected name:kind"));
        }
        let kind = match parts[1] {
            "discrete" => KindTag::Discrete,
            "categorical" => KindTag::Categorical,
            "continuous" => KindTag::Continuous,
            other => return Err(bad(&format!("unknown kind {other:?}"))),
        };
        let range = match parts.len() {
            2 => None,
            4 if kind == KindTag::Continuous => {
                let lo: f64 = parts[2].parse().map_err(|_| bad("bad min"))?;
                let hi: f64 = parts[3].parse().map_err(|_| bad("bad max"))?;
                Some((lo, hi))
            }
            _ => return Err(bad("expected name:kind or name:continuous:min:max")),
        };
        hints.push(SchemaHint {
            name: parts[0].to_string(),
            kind,
            range,
        });
    }
    Ok(hints)
}

/// Builds a schema from explicit hints, scanning `d` for value lists and missing ranges.
pub fn apply_schema_hints(d: &Dataset, hints: &[SchemaHint]) -> Result<FeatureSchema> {
    if hints.len() != d.n_cols() {
        return Err(Error::Data(format!(
            "schema lists {} columns but data has {}",
            hints.len(),
            d.n_cols()
        )));
    }
    let mut features = Vec::with_capacity(hints.len());
    for (j, h) in hints.iter().enumerate() {
        if h.name != d.column_names()[j] {
            return Err(Error::Data(format!(
                "schema column {} is {:?} but data column is {:?}",
                j + 1,
                h.name,
                d.column_names()[j]
            )));
        }
        let present: Vec<&str> = d.column(j).filter(|c| !is_missing(c)).collect();
        let kind = match h.kind {
            KindTag::Continuous => {
                let xs: Vec<f64> = present
                    .iter()
                    .map(|c| {
                        c.parse::<f64>().map_err(|_| {
                            Error::Data(format!("column {}: {c:?} is not a number", h.name))
                        })
                    })
                    .collect::<Result<_>>()?;
                let (lo, hi) = match h.range {
                    Some(r) => r,
                    None => match min_max(&xs) {
                        (Some(lo), Some(hi)) => (lo, hi),
                        _ => return Err(Error::Data(format!("column {} is empty", h.name))),
                    },
                };
                if lo < hi {
                    FeatureKind::Continuous { min: lo, max: hi }
                } else {
                    FeatureKind::Categorical {
                        values: vec![format_number(lo)],
                    }
                }
            }
            KindTag::Discrete | KindTag::Categorical => {
                let inferred = infer_kind(present.iter().copied(), usize::MAX);
                let values = match inferred {
                    FeatureKind::Discrete { values } | FeatureKind::Categorical { values } => {
                        values
                    }
                    FeatureKind::Continuous { .. } => unreachable!("threshold is unbounded"),
                };
                if h.kind == KindTag::Discrete {
                    FeatureKind::Discrete { values }
                } else {
                    FeatureKind::Categorical { values }
                }
            }
        };
        features.push(Feature {
            name: h.name.clone(),
            kind,
        });
    }
    let schema = FeatureSchema { features };
    schema.validate()?;
    Ok(schema)
}

/// Train/validation/test fractions plus the shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.75,
            valid: 0.10,
            test: 0.15,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn with_seed(seed: u64) -> Self {
        SplitSpec {
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, f) in [("train", self.train), ("valid", self.valid), ("test", self.test)] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Data(format!("{name} fraction {f} is not in (0, 1)")));
            }
        }
        let sum = self.train + self.valid + self.test;
        if (sum - 1.0).abs() > FRACTION_SUM_TOL {
            return Err(Error::Data(format!("split fractions sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Part sizes for `n` rows: floor allocations, with the leftover rows handed out one
    /// at a time in train, valid, test order.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let floor = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
        let mut sizes = [floor(self.train), floor(self.valid), floor(self.test)];
        let mut left = n - sizes.iter().sum::<usize>();
        for s in sizes.iter_mut() {
            if left == 0 {
                break;
            }
            *s += 1;
            left -= 1;
        }
        (sizes[0], sizes[1], sizes[2])
    }
}

/// Row indices of the three parts after a seeded shuffle.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<[Vec<usize>; 3]> {
    spec.validate()?;
    if n < 3 {
        return Err(Error::Data(format!("need at least 3 rows to split, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);
    let (a, b, _) = spec.sizes(n);
    let test = order.split_off(a + b);
    let valid = order.split_off(a);
    Ok([order, valid, test])
}

pub fn split_dataset(d: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    let [tr, va, te] = split_indices(d.n_rows(), spec)?;
    Ok((d.select(&tr), d.select(&va), d.select(&te)))
}

/// Fill values for missing cells, learned from the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Imputer {
    pub fills: Vec<String>,
}

impl Imputer {
    pub fn fit(train: &Dataset, schema: &FeatureSchema) -> Imputer {
        let fills = schema
            .features
            .iter()
            .enumerate()
            .map(|(j, f)| {
                let present = train.column(j).filter(|c| !is_missing(c));
                match &f.kind {
                    FeatureKind::Continuous { min, max } => {
                        let mut xs: Vec<f64> =
                            present.filter_map(|c| c.parse::<f64>().ok()).collect();
                        if xs.is_empty() {
                            return format_number(0.5 * (min + max));
                        }
                        xs.sort_by(f64::total_cmp);
                        let m = xs.len();
                        let median = if m % 2 == 1 {
                            xs[m / 2]
                        } else {
                            0.5 * (xs[m / 2 - 1] + xs[m / 2])
                        };
                        format_number(median)
                    }
                    FeatureKind::Discrete { values } | FeatureKind::Categorical { values } => {
                        let mut counts = vec![0usize; values.len()];
                        for c in present {
                            if let Some(i) = value_index(values, c) {
                                counts[i] += 1;
                            }
                        }
                        // first value wins ties
                        let best = counts
                            .iter()
                            .enumerate()
                            .fold(0, |b, (i, &c)| if c > counts[b] { i } else { b });
                        values[best].clone()
                    }
                }
            })
            .collect();
        Imputer { fills }
    }

    pub fn apply(&self, d: &Dataset) -> Dataset {
        let rows = d
            .rows()
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&self.fills)
                    .map(|(c, fill)| if is_missing(c) { fill.clone() } else { c.clone() })
                    .collect()
            })
            .collect();
        Dataset {
            column_names: d.column_names().to_vec(),
            rows,
        }
    }
}
