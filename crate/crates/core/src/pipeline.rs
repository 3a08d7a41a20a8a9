//! End-to-end training: split, schema, imputation, binning with density fitting, encoding
//! and structure learning.

use std::ops::RangeInclusive;

use crate::binning::{one_hot_encode, BinaryDataset, BinningSpec, ColumnBinning, ColumnLayout};
use crate::data::{
    apply_schema_hints, infer_schema, split_dataset, Dataset, FeatureKind, FeatureSchema, Imputer,
    SchemaHint, SplitSpec, DEFAULT_CATEGORICAL_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::polyfit::{select_model, FitReport, PiecewisePoly, DEFAULT_BINS, MAX_ORDER};
use crate::spn::{Likelihood, LikelihoodMode, Spn};
use crate::structure::{learn_wmispn, variable_groups, LearnParams, LearnStats};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Fixed bin count for every continuous feature; `None` selects it by BIC.
    pub bins: Option<usize>,
    pub bins_grid: RangeInclusive<usize>,
    pub orders: RangeInclusive<usize>,
    pub params: LearnParams,
    pub split: SplitSpec,
    pub categorical_threshold: usize,
    pub hints: Option<Vec<SchemaHint>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            bins: None,
            bins_grid: DEFAULT_BINS,
            orders: 0..=MAX_ORDER,
            params: LearnParams::default(),
            split: SplitSpec::default(),
            categorical_threshold: DEFAULT_CATEGORICAL_THRESHOLD,
            hints: None,
        }
    }
}

impl TrainConfig {
    /// Same seed for the split and the learner.
    pub fn seeded(mut self, seed: u64) -> Self {
        self.split.seed = seed;
        self.params.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(b) = self.bins {
            if b < 2 {
                return Err(Error::Binning(format!("at least 2 bins required, got {b}")));
            }
        }
        if self.bins_grid.is_empty() || *self.bins_grid.start() < 2 {
            return Err(Error::Binning("bin grid must be non-empty and start at 2 or more".into()));
        }
        if self.orders.is_empty() || *self.orders.end() > MAX_ORDER {
            return Err(Error::Fit(format!("order grid must be non-empty and within 0..={MAX_ORDER}")));
        }
        self.params.validate()?;
        self.split.validate()
    }
}

/// Everything needed to evaluate and query a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub schema: FeatureSchema,
    pub imputer: Imputer,
    pub binning: BinningSpec,
    /// Global density per column; `None` for discrete columns.
    pub densities: Vec<Option<PiecewisePoly>>,
    pub spn: Spn,
}

impl Model {
    /// Imputes and one-hot encodes `d` under this model's schema and bins.
    pub fn encode(&self, d: &Dataset) -> Result<BinaryDataset> {
        self.schema.check_compatible(d)?;
        one_hot_encode(&self.imputer.apply(d), &self.binning)
    }

    pub fn log_likelihood(&self, d: &Dataset, mode: LikelihoodMode) -> Result<Likelihood> {
        if d.is_empty() {
            return Err(Error::Data("no rows to evaluate".into()));
        }
        self.spn.log_likelihood(&self.encode(d)?, mode)
    }
}

#[derive(Debug, Clone)]
pub struct Training {
    pub model: Model,
    pub reports: Vec<Option<FitReport>>,
    pub stats: LearnStats,
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
    pub valid_ll: Likelihood,
    pub test_ll: Likelihood,
}

/// Schema of the whole file: from hints when given, inferred otherwise.
pub fn file_schema(d: &Dataset, cfg: &TrainConfig) -> Result<FeatureSchema> {
    let schema = match &cfg.hints {
        Some(h) => apply_schema_hints(d, h)?,
        None => infer_schema(d, cfg.categorical_threshold),
    };
    schema.validate()?;
    Ok(schema)
}

/// Fits one density per continuous column of `train` and derives the bins from it.
pub fn fit_columns(
    train: &Dataset,
    schema: &FeatureSchema,
    cfg: &TrainConfig,
) -> Result<(BinningSpec, Vec<Option<PiecewisePoly>>, Vec<Option<FitReport>>)> {
    let mut columns = Vec::with_capacity(schema.len());
    let mut densities = Vec::with_capacity(schema.len());
    let mut reports = Vec::with_capacity(schema.len());
    for (j, f) in schema.features.iter().enumerate() {
        match &f.kind {
            FeatureKind::Continuous { .. } => {
                let values: Vec<f64> = train
                    .column(j)
                    .map(|c| {
                        c.parse::<f64>().map_err(|_| {
                            Error::Data(format!("{c:?} in column {} is not a number", f.name))
                        })
                    })
                    .collect::<Result<_>>()?;
                let bins: Vec<usize> = match cfg.bins {
                    Some(b) => vec![b],
                    None => cfg.bins_grid.clone().collect(),
                };
                let (density, report) = select_model(&values, bins, cfg.orders.clone())
                    .map_err(|e| Error::Fit(format!("column {}: {e}", f.name)))?;
                columns.push(ColumnBinning {
                    name: f.name.clone(),
                    layout: ColumnLayout::Bins {
                        edges: density.edges().to_vec(),
                    },
                });
                densities.push(Some(density));
                reports.push(Some(report));
            }
            FeatureKind::Discrete { values } | FeatureKind::Categorical { values } => {
                columns.push(ColumnBinning {
                    name: f.name.clone(),
                    layout: ColumnLayout::Values {
                        values: values.clone(),
                    },
                });
                densities.push(None);
                reports.push(None);
            }
        }
    }
    Ok((BinningSpec { columns }, densities, reports))
}

/// Trains on `d` and reports validation and test bin-mass log-likelihoods.
pub fn train(d: &Dataset, cfg: &TrainConfig) -> Result<Training> {
    cfg.validate()?;
    let schema = file_schema(d, cfg)?;
    let (train, valid, test) = split_dataset(d, &cfg.split)?;
    let schema = schema.with_ranges_from(&train);
    let imputer = Imputer::fit(&train, &schema);
    let train = imputer.apply(&train);
    let (binning, densities, reports) = fit_columns(&train, &schema, cfg)?;
    let encoded = one_hot_encode(&train, &binning)?;
    let vars = variable_groups(&encoded, &binning, &densities)?;
    let (spn, stats) = learn_wmispn(&encoded, &vars, &cfg.params)?;
    let model = Model {
        schema,
        imputer,
        binning,
        densities,
        spn,
    };
    let valid_ll = model.log_likelihood(&valid, LikelihoodMode::BinMass)?;
    let test_ll = model.log_likelihood(&test, LikelihoodMode::BinMass)?;
    Ok(Training {
        model,
        reports,
        stats,
        train,
        valid,
        test,
        valid_ll,
        test_ll,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        let mut text = String::from("x,flag,colour\n");
        for i in 0..60 {
            let x = (i as f64 * 0.37).sin() * 3.0 + i as f64 * 0.1;
            let flag = if i % 3 == 0 { "true" } else { "false" };
            let colour = ["red", "green", "blue"][i % 3];
            text.push_str(&format!("{x},{flag},{colour}\n"));
        }
        Dataset::parse_str(&text, b',', true).unwrap()
    }

    #[test]
    fn trains_end_to_end() {
        let cfg = TrainConfig {
            bins: Some(3),
            ..TrainConfig::default()
        };
        let t = train(&tiny(), &cfg).unwrap();
        t.model.spn.validate().unwrap();
        assert!(t.valid_ll.mean.is_finite());
        assert!(t.test_ll.mean < 0.0);
        assert_eq!(t.train.n_rows() + t.valid.n_rows() + t.test.n_rows(), 60);
        assert_eq!(t.model.binning.columns[0].layout.arity(), 3);
    }

    #[test]
    fn one_bin_is_rejected() {
        let cfg = TrainConfig {
            bins: Some(1),
            ..TrainConfig::default()
        };
        assert!(matches!(train(&tiny(), &cfg), Err(Error::Binning(_))));
    }

    #[test]
    fn same_seed_same_model() {
        let cfg = TrainConfig::default().seeded(4);
        let a = train(&tiny(), &cfg).unwrap();
        let b = train(&tiny(), &cfg).unwrap();
        assert_eq!(a.model, b.model);
    }
}
