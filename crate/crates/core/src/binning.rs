//! Equal-width binning of continuous features and one-hot encoding of a [`Dataset`].
//!
//! Bins are half-open `[e_j, e_{j+1})` except the last, which is closed so the column
//! maximum is representable. Values outside the training range are clamped to the nearest
//! terminal bin and counted.

use crate::data::{value_index, Dataset, FeatureKind, FeatureSchema};
use crate::error::{Error, Result};

/// Encoding of one source column.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnLayout {
    Bins { edges: Vec<f64> },
    Values { values: Vec<String> },
}

impl ColumnLayout {
    /// Number of indicator columns this feature contributes.
    pub fn arity(&self) -> usize {
        match self {
            ColumnLayout::Bins { edges } => edges.len() - 1,
            ColumnLayout::Values { values } => values.len(),
        }
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self, ColumnLayout::Bins { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnBinning {
    pub name: String,
    pub layout: ColumnLayout,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BinningSpec {
    pub columns: Vec<ColumnBinning>,
}

/// `b + 1` equal-width edges over `[lo, hi]`; the end points are exact.
pub fn equal_width_edges(lo: f64, hi: f64, b: usize) -> Vec<f64> {
    let w = (hi - lo) / b as f64;
    let mut edges: Vec<f64> = (0..=b).map(|j| lo + j as f64 * w).collect();
    edges[0] = lo;
    edges[b] = hi;
    edges
}

/// Bin of `x` under `edges`, and whether `x` had to be clamped.
pub fn bin_index(edges: &[f64], x: f64) -> (usize, bool) {
    let b = edges.len() - 1;
    let (lo, hi) = (edges[0], edges[b]);
    if x < lo {
        return (0, true);
    }
    if x >= hi {
        return (b - 1, x > hi);
    }
    let guess = ((x - lo) / (hi - lo) * b as f64).floor();
    let mut j = if guess.is_finite() { (guess as usize).min(b - 1) } else { 0 };
    while j > 0 && x < edges[j] {
        j -= 1;
    }
    while j + 1 < b && x >= edges[j + 1] {
        j += 1;
    }
    (j, false)
}

impl BinningSpec {
    /// The same bin count `b` for every continuous column.
    pub fn equal_width(schema: &FeatureSchema, b: usize) -> Result<BinningSpec> {
        let counts = vec![b; schema.len()];
        Self::with_counts(schema, &counts)
    }

    /// Per-column bin counts; entries for non-continuous columns are ignored.
    pub fn with_counts(schema: &FeatureSchema, counts: &[usize]) -> Result<BinningSpec> {
        if counts.len() != schema.len() {
            return Err(Error::Binning("one bin count per column expected".into()));
        }
        let columns = schema
            .features
            .iter()
            .zip(counts)
            .map(|(f, &b)| {
                let layout = match &f.kind {
                    FeatureKind::Continuous { min, max } => {
                        if b < 2 {
                            return Err(Error::Binning(format!(
                                "bin count must be at least 2, got {b} for {}",
                                f.name
                            )));
                        }
                        ColumnLayout::Bins {
                            edges: equal_width_edges(*min, *max, b),
                        }
                    }
                    FeatureKind::Discrete { values } | FeatureKind::Categorical { values } => {
                        ColumnLayout::Values {
                            values: values.clone(),
                        }
                    }
                };
                Ok(ColumnBinning {
                    name: f.name.clone(),
                    layout,
                })
            })
            .collect::<Result<_>>()?;
        Ok(BinningSpec { columns })
    }

    pub fn validate(&self) -> Result<()> {
        for c in &self.columns {
            match &c.layout {
                ColumnLayout::Bins { edges } => {
                    if edges.len() < 3 {
                        return Err(Error::Binning(format!("{}: fewer than 2 bins", c.name)));
                    }
                    if edges.windows(2).any(|w| !(w[0] < w[1])) {
                        return Err(Error::Binning(format!(
                            "{}: edges not strictly increasing",
                            c.name
                        )));
                    }
                    let w0 = edges[1] - edges[0];
                    let span = edges[edges.len() - 1] - edges[0];
                    if edges
                        .windows(2)
                        .any(|w| ((w[1] - w[0]) - w0).abs() > 1e-9 * span.abs().max(1.0))
                    {
                        return Err(Error::Binning(format!("{}: bins not equal width", c.name)));
                    }
                }
                ColumnLayout::Values { values } => {
                    if values.is_empty() {
                        return Err(Error::Binning(format!("{}: no values", c.name)));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Total number of indicator columns.
pub fn binary_column_count(spec: &BinningSpec) -> usize {
    spec.columns.iter().map(|c| c.layout.arity()).sum()
}

/// Position of one feature's one-hot group among the binary columns.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupLayout {
    pub name: String,
    pub start: usize,
    pub arity: usize,
    pub continuous: bool,
}

/// One-hot representation of a dataset, stored compactly as the active index of each group.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryDataset {
    pub groups: Vec<GroupLayout>,
    /// `codes[row][group]`: active column within the group.
    pub codes: Vec<Vec<u32>>,
    /// `values[row][group]`: raw value for continuous groups, NaN otherwise.
    pub values: Vec<Vec<f64>>,
    /// Number of continuous cells clamped into a terminal bin.
    pub clamped: usize,
}

impl BinaryDataset {
    pub fn n_rows(&self) -> usize {
        self.codes.len()
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn width(&self) -> usize {
        self.groups.iter().map(|g| g.arity).sum()
    }

    /// The 0/1 row vector.
    pub fn bits(&self, row: usize) -> Vec<u8> {
        let mut out = vec![0u8; self.width()];
        for (g, &code) in self.groups.iter().zip(&self.codes[row]) {
            out[g.start + code as usize] = 1;
        }
        out
    }

    /// Recovers group codes from a 0/1 vector; `None` unless every group is one-hot.
    pub fn decode_bits(&self, bits: &[u8]) -> Option<Vec<u32>> {
        if bits.len() != self.width() {
            return None;
        }
        self.groups
            .iter()
            .map(|g| {
                let slice = &bits[g.start..g.start + g.arity];
                if slice.iter().map(|&b| b as usize).sum::<usize>() != 1 {
                    return None;
                }
                slice.iter().position(|&b| b == 1).map(|i| i as u32)
            })
            .collect()
    }
}

/// Encodes every row of `d`. Unknown discrete values are an error; out-of-range continuous
/// values are clamped and counted in [`BinaryDataset::clamped`].
pub fn one_hot_encode(d: &Dataset, spec: &BinningSpec) -> Result<BinaryDataset> {
    if d.n_cols() != spec.columns.len() {
        return Err(Error::Binning(format!(
            "data has {} columns, binning spec has {}",
            d.n_cols(),
            spec.columns.len()
        )));
    }
    let mut groups = Vec::with_capacity(spec.columns.len());
    let mut start = 0;
    for c in &spec.columns {
        let arity = c.layout.arity();
        groups.push(GroupLayout {
            name: c.name.clone(),
            start,
            arity,
            continuous: c.layout.is_continuous(),
        });
        start += arity;
    }

    let mut clamped = 0;
    let mut codes = Vec::with_capacity(d.n_rows());
    let mut values = Vec::with_capacity(d.n_rows());
    for (i, row) in d.rows().iter().enumerate() {
        let mut code_row = Vec::with_capacity(row.len());
        let mut value_row = Vec::with_capacity(row.len());
        for (cell, col) in row.iter().zip(&spec.columns) {
            match &col.layout {
                ColumnLayout::Bins { edges } => {
                    let x: f64 = cell.parse().map_err(|_| {
                        Error::Binning(format!(
                            "row {}: {:?} in column {} is not a number",
                            i + 1,
                            cell,
                            col.name
                        ))
                    })?;
                    let (j, was_clamped) = bin_index(edges, x);
                    clamped += was_clamped as usize;
                    code_row.push(j as u32);
                    value_row.push(x.clamp(edges[0], edges[edges.len() - 1]));
                }
                ColumnLayout::Values { values } => {
                    let j = value_index(values, cell).ok_or_else(|| {
                        Error::Binning(format!(
                            "row {}: value {:?} not seen for column {}",
                            i + 1,
                            cell,
                            col.name
                        ))
                    })?;
                    code_row.push(j as u32);
                    value_row.push(f64::NAN);
                }
            }
        }
        codes.push(code_row);
        values.push(value_row);
    }
    Ok(BinaryDataset {
        groups,
        codes,
        values,
        clamped,
    })
}
