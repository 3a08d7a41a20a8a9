//! Query latency harness.
//!
//! For each length `k` in `1..=max_len` a pool of random nested queries is drawn: the
//! length-`k` query extends the length-`k−1` one by a single atom. Continuous atoms take
//! interval endpoints uniformly inside the feature's support; when the model has discrete
//! features, the second atom is a discrete equality, so lengths `k ≥ 2` mix `k−1`
//! continuous atoms with one discrete atom. Lengths are timed interleaved, round robin,
//! after a warmup that is excluded from the statistics.

use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::query::{answer, normalize, parse_query, plan, Bound, NormalQuery, QueryAst, QueryAtom};
use crate::spn::{GroupKind, Spn};

pub const MIN_REPS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub max_len: usize,
    /// Timed calls per length.
    pub reps: usize,
    /// Untimed rounds before measurement.
    pub warmup: usize,
    /// Distinct random queries per length.
    pub pool: usize,
    /// Time parsing and normalization along with evaluation.
    pub include_parse: bool,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            max_len: 5,
            reps: MIN_REPS,
            warmup: 100,
            pool: 10,
            include_parse: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LengthStats {
    pub len: usize,
    pub continuous: usize,
    pub discrete: usize,
    pub mean_ns: f64,
    pub median_ns: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub lengths: Vec<LengthStats>,
    pub reps: usize,
    pub warmup: usize,
    pub include_parse: bool,
    /// Parse + normalize + plan, without evaluation, as a fraction of the full
    /// length-1 path including parsing.
    pub plan_overhead: f64,
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "reps {} warmup {} timing {}",
            self.reps,
            self.warmup,
            if self.include_parse { "parse+answer" } else { "answer" }
        )?;
        writeln!(f, "len\tmix\tmean_ns\tmedian_ns")?;
        for s in &self.lengths {
            let mix = match (s.continuous, s.discrete) {
                (c, 0) => format!("c{c}"),
                (0, d) => format!("d{d}"),
                (c, d) => format!("c{c}d{d}"),
            };
            writeln!(f, "q{}\t{}\t{:.1}\t{:.1}", s.len, mix, s.mean_ns, s.median_ns)?;
        }
        write!(f, "plan overhead {:.1}% of q1", 100.0 * self.plan_overhead)
    }
}

/// Longest query the generator can build for this network.
pub fn max_query_len(spn: &Spn) -> usize {
    let cont = spn.groups().iter().filter(|g| g.is_continuous()).count();
    let disc = spn.groups().len() - cont;
    if cont == 0 {
        0
    } else {
        cont + usize::from(disc > 0)
    }
}

fn interval_atom(rng: &mut impl Rng, name: &str, edges: &[f64]) -> QueryAtom {
    let (lo, hi) = (edges[0], edges[edges.len() - 1]);
    let mut a = rng.random_range(lo..=hi);
    let mut b = rng.random_range(lo..=hi);
    if a > b {
        std::mem::swap(&mut a, &mut b);
    }
    QueryAtom::Interval {
        feature: name.to_string(),
        lo: Some(Bound { value: a, inclusive: true }),
        hi: Some(Bound { value: b, inclusive: true }),
    }
}

/// Nested random queries of lengths `1..=max_len`; entry `k−1` has `k` atoms.
pub fn nested_queries(spn: &Spn, max_len: usize, rng: &mut impl Rng) -> Result<Vec<QueryAst>> {
    let feasible = max_query_len(spn);
    if max_len > feasible {
        return Err(Error::Bench(format!(
            "model supports queries of length at most {feasible}, {max_len} requested"
        )));
    }
    let mut cont: Vec<usize> = (0..spn.groups().len())
        .filter(|&g| spn.groups()[g].is_continuous())
        .collect();
    let disc: Vec<usize> = (0..spn.groups().len())
        .filter(|&g| !spn.groups()[g].is_continuous())
        .collect();
    cont.shuffle(rng);
    let mut atoms = Vec::with_capacity(max_len);
    let mut next_cont = cont.into_iter();
    for k in 1..=max_len {
        let g = if k == 2 && !disc.is_empty() {
            disc[rng.random_range(0..disc.len())]
        } else {
            next_cont.next().expect("length checked against feasible maximum")
        };
        let info = &spn.groups()[g];
        let atom = match &info.kind {
            GroupKind::Continuous { edges } => interval_atom(rng, &info.name, edges),
            GroupKind::Discrete { values } => QueryAtom::Discrete {
                feature: info.name.clone(),
                value: values[rng.random_range(0..values.len())].clone(),
                negated: false,
            },
        };
        atoms.push(atom);
    }
    Ok((1..=max_len)
        .map(|k| QueryAst {
            disjuncts: vec![atoms[..k].to_vec()],
            evidence: Vec::new(),
        })
        .collect())
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

struct Prepared {
    text: String,
    normal: NormalQuery,
}

fn full_path(spn: &Spn, text: &str) -> Result<f64> {
    answer(spn, &normalize(&parse_query(text)?, spn)?)
}

fn plan_path(spn: &Spn, text: &str) -> Result<usize> {
    let p = plan(spn, &normalize(&parse_query(text)?, spn)?);
    Ok(p.terms.len())
}

pub fn run(spn: &Spn, cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.reps < MIN_REPS {
        return Err(Error::Bench(format!("at least {MIN_REPS} repetitions required")));
    }
    if cfg.max_len == 0 || cfg.pool == 0 {
        return Err(Error::Bench("query length and pool size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // pools[k][i]: query of length k+1 from nested family i
    let mut pools: Vec<Vec<Prepared>> = (0..cfg.max_len).map(|_| Vec::new()).collect();
    for _ in 0..cfg.pool {
        for (k, ast) in nested_queries(spn, cfg.max_len, &mut rng)?.into_iter().enumerate() {
            let text = ast.to_string();
            let normal = normalize(&ast, spn)?;
            pools[k].push(Prepared { text, normal });
        }
    }
    let mix: Vec<(usize, usize)> = pools
        .iter()
        .map(|p| {
            let first = &p[0].normal.disjuncts[0];
            let cont = first
                .keys()
                .filter(|&&g| spn.groups()[g].is_continuous())
                .count();
            (cont, first.len() - cont)
        })
        .collect();

    let mut sink = 0.0;
    let call = |p: &Prepared| -> Result<f64> {
        if cfg.include_parse {
            full_path(spn, &p.text)
        } else {
            answer(spn, &p.normal)
        }
    };
    for r in 0..cfg.warmup {
        for pool in &pools {
            sink += call(&pool[r % pool.len()])?;
        }
    }
    let mut samples: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.reps); cfg.max_len];
    for r in 0..cfg.reps {
        for (k, pool) in pools.iter().enumerate() {
            let p = &pool[r % pool.len()];
            let t = Instant::now();
            sink += call(p)?;
            samples[k].push(t.elapsed().as_nanos() as f64);
        }
    }

    // plan-only against the full path, both including parsing, on length-1 queries
    let mut plan_ns = 0.0;
    let mut full_ns = 0.0;
    for r in 0..cfg.reps {
        let p = &pools[0][r % pools[0].len()];
        let t = Instant::now();
        sink += plan_path(spn, &p.text)? as f64;
        plan_ns += t.elapsed().as_nanos() as f64;
        let t = Instant::now();
        sink += full_path(spn, &p.text)?;
        full_ns += t.elapsed().as_nanos() as f64;
    }
    std::hint::black_box(sink);

    let lengths = samples
        .iter_mut()
        .enumerate()
        .map(|(k, xs)| LengthStats {
            len: k + 1,
            continuous: mix[k].0,
            discrete: mix[k].1,
            mean_ns: xs.iter().sum::<f64>() / xs.len() as f64,
            median_ns: median(xs),
        })
        .collect();
    Ok(BenchReport {
        lengths,
        reps: cfg.reps,
        warmup: cfg.warmup,
        include_parse: cfg.include_parse,
        plan_overhead: if full_ns > 0.0 { plan_ns / full_ns } else { 0.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polyfit::PiecewisePoly;
    use crate::spn::{GroupInfo, Node};

    fn model(n_cont: usize, with_flag: bool) -> Spn {
        let mut groups: Vec<GroupInfo> = (0..n_cont)
            .map(|i| GroupInfo {
                name: format!("x{i}"),
                kind: GroupKind::Continuous { edges: vec![0.0, 0.5, 1.0] },
            })
            .collect();
        if with_flag {
            groups.push(GroupInfo {
                name: "flag".into(),
                kind: GroupKind::Discrete { values: vec!["0".into(), "1".into()] },
            });
        }
        let mut nodes = vec![Node::Product { children: (1..=groups.len()).collect() }];
        for g in 0..groups.len() {
            nodes.push(match &groups[g].kind {
                GroupKind::Continuous { .. } => Node::Poly {
                    group: g,
                    density: PiecewisePoly::uniform(0.0, 1.0, 2).unwrap(),
                },
                GroupKind::Discrete { .. } => Node::Indicator { group: g, probs: vec![0.3, 0.7] },
            });
        }
        Spn::new(groups, nodes).unwrap()
    }

    #[test]
    fn nested_queries_grow_by_one() {
        let s = model(5, true);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let qs = nested_queries(&s, 5, &mut rng).unwrap();
        for (k, q) in qs.iter().enumerate() {
            assert_eq!(q.disjuncts[0].len(), k + 1);
            assert_eq!(q.disjuncts[0][..k], qs[k.saturating_sub(1)].disjuncts[0][..k]);
        }
        assert!(matches!(qs[1].disjuncts[0][1], QueryAtom::Discrete { .. }));
    }

    #[test]
    fn too_few_features_names_the_limit() {
        let s = model(2, true);
        assert_eq!(max_query_len(&s), 3);
        let err = run(&s, &BenchConfig::default()).unwrap_err().to_string();
        assert!(err.contains("at most 3"), "{err}");
    }

    #[test]
    fn reports_positive_latencies() {
        let s = model(6, false);
        let r = run(&s, &BenchConfig::default()).unwrap();
        assert_eq!(r.lengths.len(), 5);
        for l in &r.lengths {
            assert!(l.mean_ns > 0.0 && l.mean_ns.is_finite());
            assert_eq!(l.continuous, l.len);
        }
        assert!(r.plan_overhead > 0.0);
        assert!(r.to_string().contains("q5"));
    }

    #[test]
    fn rejects_few_reps() {
        let s = model(6, false);
        let cfg = BenchConfig { reps: 10, ..BenchConfig::default() };
        assert!(run(&s, &cfg).is_err());
    }
}
