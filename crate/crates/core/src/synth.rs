//! Seeded synthetic data: univariate mixtures and latent-cluster tabular datasets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};

use crate::data::Dataset;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Component {
    Gaussian { mean: f64, sd: f64 },
    /// Beta(a, b) stretched onto `[lo, hi]`.
    Beta { a: f64, b: f64, lo: f64, hi: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Component {
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            Component::Gaussian { mean, sd } => Normal::new(mean, sd).expect("sd > 0").sample(rng),
            Component::Beta { a, b, lo, hi } => lo + (hi - lo) * Beta::new(a, b).expect("a, b > 0").sample(rng),
            Component::Uniform { lo, hi } => rng.random_range(lo..hi),
        }
    }
}

/// Weighted mixture of components; weights need not sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub components: Vec<(f64, Component)>,
}

impl Mixture {
    /// Gaussian bump next to a skewed Beta, the usual two-mode test shape.
    pub fn gaussian_beta() -> Mixture {
        Mixture {
            components: vec![
                (0.55, Component::Gaussian { mean: 2.0, sd: 1.0 }),
                (0.45, Component::Beta { a: 2.0, b: 5.0, lo: 3.0, hi: 10.0 }),
            ],
        }
    }

    /// One to three components of random kind, location and spread.
    pub fn random(rng: &mut impl Rng) -> Mixture {
        let k = rng.random_range(1..=3);
        let components = (0..k)
            .map(|_| {
                let w = rng.random_range(0.2..1.0);
                let loc = rng.random_range(-5.0..5.0);
                let scale = rng.random_range(0.2..3.0);
                let c = match rng.random_range(0..3) {
                    0 => Component::Gaussian { mean: loc, sd: scale },
                    1 => Component::Beta {
                        a: rng.random_range(0.7..6.0),
                        b: rng.random_range(0.7..6.0),
                        lo: loc,
                        hi: loc + 3.0 * scale,
                    },
                    _ => Component::Uniform { lo: loc, hi: loc + 2.0 * scale },
                };
                (w, c)
            })
            .collect();
        Mixture { components }
    }

    pub fn sample_one(&self, rng: &mut impl Rng) -> f64 {
        let total: f64 = self.components.iter().map(|(w, _)| w).sum();
        let mut u = rng.random_range(0.0..total);
        for (w, c) in &self.components {
            if u < *w {
                return c.sample(rng);
            }
            u -= w;
        }
        self.components[self.components.len() - 1].1.sample(rng)
    }

    pub fn sample(&self, rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Continuous,
    /// Small-integer column.
    Discrete(usize),
    /// String labels.
    Categorical(usize),
}

/// Per-cluster generator for one column.
#[derive(Debug, Clone)]
enum ColumnModel {
    Continuous(Vec<Component>),
    Levels { labels: Vec<String>, probs: Vec<Vec<f64>> },
}

fn random_probs(rng: &mut impl Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0f64).powi(2)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

fn pick(rng: &mut impl Rng, probs: &[f64]) -> usize {
    let mut u: f64 = rng.random();
    for (i, p) in probs.iter().enumerate() {
        if u < *p {
            return i;
        }
        u -= p;
    }
    probs.len() - 1
}

/// Rows drawn from a latent mixture of `clusters` groups, so columns are dependent
/// through the hidden group. Continuous cells are Gaussian or Beta per group.
pub fn latent_dataset(seed: u64, kinds: &[ColumnKind], clusters: usize, rows: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cluster_w = random_probs(&mut rng, clusters.max(1));
    let models: Vec<ColumnModel> = kinds
        .iter()
        .map(|k| match *k {
            ColumnKind::Continuous => ColumnModel::Continuous(
                (0..clusters.max(1))
                    .map(|_| {
                        let loc = rng.random_range(-4.0..4.0);
                        if rng.random_bool(0.7) {
                            Component::Gaussian { mean: loc, sd: rng.random_range(0.3..1.5) }
                        } else {
                            Component::Beta {
                                a: rng.random_range(1.0..5.0),
                                b: rng.random_range(1.0..5.0),
                                lo: loc - 2.0,
                                hi: loc + 2.0,
                            }
                        }
                    })
                    .collect(),
            ),
            ColumnKind::Discrete(a) | ColumnKind::Categorical(a) => {
                let labels = (0..a.max(1))
                    .map(|i| match k {
                        ColumnKind::Discrete(_) => i.to_string(),
                        _ => format!("v{i}"),
                    })
                    .collect();
                let probs = (0..clusters.max(1)).map(|_| random_probs(&mut rng, a.max(1))).collect();
                ColumnModel::Levels { labels, probs }
            }
        })
        .collect();
    let names = (0..kinds.len()).map(|j| format!("f{j}")).collect();
    let data = (0..rows)
        .map(|_| {
            let c = pick(&mut rng, &cluster_w);
            models
                .iter()
                .map(|m| match m {
                    ColumnModel::Continuous(cs) => format!("{}", cs[c].sample(&mut rng)),
                    ColumnModel::Levels { labels, probs } => labels[pick(&mut rng, &probs[c])].clone(),
                })
                .collect()
        })
        .collect();
    Dataset::new(names, data).expect("generated rows are rectangular")
}

/// Random mix of column kinds: half continuous, the rest small integers or labels.
pub fn random_kinds(rng: &mut impl Rng, n: usize) -> Vec<ColumnKind> {
    (0..n)
        .map(|_| match rng.random_range(0..4) {
            0 | 1 => ColumnKind::Continuous,
            2 => ColumnKind::Discrete(rng.random_range(2..=5)),
            _ => ColumnKind::Categorical(rng.random_range(2..=4)),
        })
        .collect()
}

/// Hybrid dataset with `features` columns of mixed kind.
pub fn hybrid_dataset(seed: u64, features: usize, rows: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let kinds = random_kinds(&mut rng, features);
    let clusters = rng.random_range(2..=4);
    latent_dataset(seed, &kinds, clusters, rows)
}

/// All-continuous dataset with four latent groups.
pub fn continuous_dataset(seed: u64, features: usize, rows: usize) -> Dataset {
    latent_dataset(seed, &vec![ColumnKind::Continuous; features], 4, rows)
}

/// Wide dataset: mostly continuous columns with every fifth column a binary flag.
pub fn wide_dataset(seed: u64, features: usize, rows: usize) -> Dataset {
    let kinds: Vec<ColumnKind> = (0..features)
        .map(|j| if j % 5 == 4 { ColumnKind::Discrete(2) } else { ColumnKind::Continuous })
        .collect();
    latent_dataset(seed, &kinds, 3, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{infer_schema, FeatureKind, DEFAULT_CATEGORICAL_THRESHOLD};

    #[test]
    fn same_seed_same_rows() {
        assert_eq!(hybrid_dataset(3, 6, 50), hybrid_dataset(3, 6, 50));
        assert_ne!(hybrid_dataset(3, 6, 50), hybrid_dataset(4, 6, 50));
    }

    #[test]
    fn kinds_survive_inference() {
        let kinds = [
            ColumnKind::Continuous,
            ColumnKind::Discrete(3),
            ColumnKind::Categorical(2),
        ];
        let d = latent_dataset(1, &kinds, 2, 400);
        let s = infer_schema(&d, DEFAULT_CATEGORICAL_THRESHOLD);
        assert!(s.features[0].kind.is_continuous());
        assert!(matches!(s.features[1].kind, FeatureKind::Discrete { .. }));
        assert!(matches!(s.features[2].kind, FeatureKind::Categorical { .. }));
    }

    #[test]
    fn beta_component_stays_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = Component::Beta { a: 2.0, b: 5.0, lo: 3.0, hi: 4.0 };
        for _ in 0..1000 {
            let x = c.sample(&mut rng);
            assert!((3.0..=4.0).contains(&x));
        }
    }

    #[test]
    fn mixture_weights_respected() {
        let m = Mixture {
            components: vec![
                (3.0, Component::Uniform { lo: 0.0, hi: 1.0 }),
                (1.0, Component::Uniform { lo: 10.0, hi: 11.0 }),
            ],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs = m.sample(&mut rng, 20_000);
        let frac = xs.iter().filter(|&&x| x < 5.0).count() as f64 / xs.len() as f64;
        assert!((frac - 0.75).abs() < 0.02, "{frac}");
    }
}
