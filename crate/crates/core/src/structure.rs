//! Top-down structure learning over one-hot variable groups.
//!
//! Each call either emits a leaf (one group left), splits the groups into independent
//! sets with a pairwise G-test (product node), or clusters the rows with online hard EM
//! (sum node weighted by cluster sizes). Continuous groups are never split across
//! product children: the G-test works on whole groups.

use std::collections::HashMap;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::binning::{BinaryDataset, BinningSpec, ColumnLayout};
use crate::error::{Error, Result};
use crate::polyfit::PiecewisePoly;
use crate::spn::{GroupInfo, GroupKind, Node, Spn};

const REASSIGN_PASSES: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct LearnParams {
    /// Significance level of the pairwise independence test.
    pub alpha: f64,
    /// Log-score cost of opening a new cluster.
    pub cluster_penalty: f64,
    /// Slices with fewer rows are factorized into leaves.
    pub min_slice: usize,
    /// Laplace pseudo-count for leaf estimates and cluster scores.
    pub pseudo_count: f64,
    pub seed: u64,
}

impl Default for LearnParams {
    fn default() -> Self {
        LearnParams {
            alpha: 0.05,
            cluster_penalty: 0.8,
            min_slice: 10,
            pseudo_count: 1.0,
            seed: 0,
        }
    }
}

impl LearnParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Model(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.pseudo_count > 0.0) || !self.pseudo_count.is_finite() {
            return Err(Error::Model("pseudo-count must be positive".into()));
        }
        if self.min_slice < 1 {
            return Err(Error::Model("minimum slice must be at least 1".into()));
        }
        if !self.cluster_penalty.is_finite() {
            return Err(Error::Model("cluster penalty must be finite".into()));
        }
        Ok(())
    }
}

/// One source feature: its indicator columns, its kind and, when continuous, its density.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableGroup {
    pub info: GroupInfo,
    pub columns: Range<usize>,
    pub density: Option<PiecewisePoly>,
}

impl VariableGroup {
    pub fn arity(&self) -> usize {
        self.columns.len()
    }
}

/// Pairs the encoded groups with their binning and, for continuous ones, fitted densities.
pub fn variable_groups(
    data: &BinaryDataset,
    spec: &BinningSpec,
    densities: &[Option<PiecewisePoly>],
) -> Result<Vec<VariableGroup>> {
    if spec.columns.len() != data.n_groups() || densities.len() != data.n_groups() {
        return Err(Error::Model("groups, binning and densities differ in length".into()));
    }
    data.groups
        .iter()
        .zip(&spec.columns)
        .zip(densities)
        .map(|((layout, col), density)| {
            let kind = match &col.layout {
                ColumnLayout::Bins { edges } => {
                    let d = density.as_ref().ok_or_else(|| {
                        Error::Model(format!("continuous feature {} has no density", col.name))
                    })?;
                    if d.edges() != edges.as_slice() {
                        return Err(Error::Model(format!(
                            "density pieces of {} do not match its bins",
                            col.name
                        )));
                    }
                    GroupKind::Continuous { edges: edges.clone() }
                }
                ColumnLayout::Values { values } => GroupKind::Discrete {
                    values: values.clone(),
                },
            };
            Ok(VariableGroup {
                info: GroupInfo {
                    name: col.name.clone(),
                    kind,
                },
                columns: layout.start..layout.start + layout.arity,
                density: density.clone(),
            })
        })
        .collect()
}

/// G statistic `2 Σ O ln(O/E)` of a contingency table and its degrees of freedom, counted
/// over rows and columns with non-zero margins.
pub fn g_statistic(table: &[Vec<f64>]) -> (f64, usize) {
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..table.first().map_or(0, Vec::len))
        .map(|j| table.iter().map(|r| r[j]).sum())
        .collect();
    let n: f64 = rows.iter().sum();
    let r = rows.iter().filter(|&&x| x > 0.0).count();
    let c = cols.iter().filter(|&&x| x > 0.0).count();
    let dof = r.saturating_sub(1) * c.saturating_sub(1);
    if n == 0.0 || dof == 0 {
        return (0.0, dof);
    }
    let mut g = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &o) in row.iter().enumerate() {
            if o > 0.0 {
                let e = rows[i] * cols[j] / n;
                g += o * (o / e).ln();
            }
        }
    }
    (2.0 * g, dof)
}

struct Critical {
    alpha: f64,
    cache: HashMap<usize, f64>,
}

impl Critical {
    fn new(alpha: f64) -> Self {
        Critical {
            alpha,
            cache: HashMap::new(),
        }
    }

    fn get(&mut self, dof: usize) -> f64 {
        let alpha = self.alpha;
        *self.cache.entry(dof).or_insert_with(|| {
            ChiSquared::new(dof as f64)
                .expect("positive degrees of freedom")
                .inverse_cdf(1.0 - alpha)
        })
    }
}

/// Splits `vars` into the connected components of the pairwise dependence graph restricted
/// to `rows`. `None` when everything ends up connected.
pub fn g_test_partition(
    data: &BinaryDataset,
    rows: &[usize],
    vars: &[usize],
    arities: &[usize],
    alpha: f64,
) -> Option<Vec<Vec<usize>>> {
    g_test_partition_cached(data, rows, vars, arities, &mut Critical::new(alpha))
}

fn g_test_partition_cached(
    data: &BinaryDataset,
    rows: &[usize],
    vars: &[usize],
    arities: &[usize],
    critical: &mut Critical,
) -> Option<Vec<Vec<usize>>> {
    let k = vars.len();
    if k < 2 {
        return None;
    }
    let mut parent: Vec<usize> = (0..k).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for a in 0..k {
        for b in a + 1..k {
            if find(&mut parent, a) == find(&mut parent, b) {
                continue;
            }
            let (ga, gb) = (vars[a], vars[b]);
            let mut table = vec![vec![0.0; arities[gb]]; arities[ga]];
            for &r in rows {
                let codes = &data.codes[r];
                table[codes[ga] as usize][codes[gb] as usize] += 1.0;
            }
            let (g, dof) = g_statistic(&table);
            if dof > 0 && g > critical.get(dof) {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let mut comps: Vec<Vec<usize>> = Vec::new();
    let mut slot: HashMap<usize, usize> = HashMap::new();
    for i in 0..k {
        let root = find(&mut parent, i);
        let s = *slot.entry(root).or_insert_with(|| {
            comps.push(Vec::new());
            comps.len() - 1
        });
        comps[s].push(vars[i]);
    }
    (comps.len() >= 2).then_some(comps)
}

struct Cluster {
    size: f64,
    counts: Vec<Vec<f64>>,
}

impl Cluster {
    fn new(arities: &[usize], vars: &[usize]) -> Self {
        Cluster {
            size: 0.0,
            counts: vars.iter().map(|&g| vec![0.0; arities[g]]).collect(),
        }
    }

    fn update(&mut self, codes: &[u32], vars: &[usize], delta: f64) {
        self.size += delta;
        for (pos, &g) in vars.iter().enumerate() {
            self.counts[pos][codes[g] as usize] += delta;
        }
    }

    fn score(&self, codes: &[u32], vars: &[usize], pc: f64) -> f64 {
        vars.iter()
            .enumerate()
            .map(|(pos, &g)| {
                let counts = &self.counts[pos];
                ((counts[codes[g] as usize] + pc) / (self.size + pc * counts.len() as f64)).ln()
            })
            .sum()
    }
}

/// Online hard EM over products of categorical distributions, restricted to `vars`.
/// Rows are visited in a shuffled order; each joins its best-scoring cluster unless a fresh
/// cluster scores higher after paying `cluster_penalty`. Returns at least two non-empty
/// clusters, or `None` when the rows cannot be separated.
pub fn cluster_instances(
    data: &BinaryDataset,
    rows: &[usize],
    vars: &[usize],
    arities: &[usize],
    params: &LearnParams,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<Vec<usize>>> {
    if rows.len() < 2 {
        return None;
    }
    let pc = params.pseudo_count;
    let mut order = rows.to_vec();
    order.shuffle(rng);
    let fresh: f64 = vars.iter().map(|&g| -(arities[g] as f64).ln()).sum::<f64>()
        - params.cluster_penalty;

    let mut clusters: Vec<Cluster> = Vec::new();
    let mut assign = vec![0usize; order.len()];
    for (i, &r) in order.iter().enumerate() {
        let codes = &data.codes[r];
        let best = best_cluster(&clusters, codes, vars, pc);
        let c = match best {
            Some((c, s)) if s >= fresh => c,
            _ => {
                clusters.push(Cluster::new(arities, vars));
                clusters.len() - 1
            }
        };
        clusters[c].update(codes, vars, 1.0);
        assign[i] = c;
    }
    reassign(&mut clusters, &mut assign, &order, data, vars, pc);

    let mut groups = collect(&clusters, &assign, &order);
    if groups.len() < 2 {
        groups = two_way_split(data, &order, vars, arities, pc)?;
    }
    Some(groups)
}

fn best_cluster(clusters: &[Cluster], codes: &[u32], vars: &[usize], pc: f64) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (c, cl) in clusters.iter().enumerate() {
        if cl.size <= 0.0 {
            continue;
        }
        let s = cl.score(codes, vars, pc);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((c, s));
        }
    }
    best
}

fn reassign(
    clusters: &mut [Cluster],
    assign: &mut [usize],
    order: &[usize],
    data: &BinaryDataset,
    vars: &[usize],
    pc: f64,
) {
    for _ in 0..REASSIGN_PASSES {
        let mut moved = false;
        for (i, &r) in order.iter().enumerate() {
            let codes = &data.codes[r];
            let current = assign[i];
            clusters[current].update(codes, vars, -1.0);
            let stay = clusters[current].score(codes, vars, pc);
            let target = match best_cluster(clusters, codes, vars, pc) {
                Some((c, s)) if s > stay => c,
                _ => current,
            };
            clusters[target].update(codes, vars, 1.0);
            if target != current {
                assign[i] = target;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
}

fn collect(clusters: &[Cluster], assign: &[usize], order: &[usize]) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); clusters.len()];
    for (i, &r) in order.iter().enumerate() {
        groups[assign[i]].push(r);
    }
    groups.retain(|g| !g.is_empty());
    for g in &mut groups {
        g.sort_unstable();
    }
    groups
}

/// Two clusters seeded by the first row and the row farthest from it.
fn two_way_split(
    data: &BinaryDataset,
    order: &[usize],
    vars: &[usize],
    arities: &[usize],
    pc: f64,
) -> Option<Vec<Vec<usize>>> {
    let first = &data.codes[order[0]];
    let distance = |r: usize| vars.iter().filter(|&&g| data.codes[r][g] != first[g]).count();
    let (far, dist) = order
        .iter()
        .enumerate()
        .map(|(i, &r)| (i, distance(r)))
        .fold((0, 0), |acc, x| if x.1 > acc.1 { x } else { acc });
    if dist == 0 {
        return None;
    }
    let mut clusters = vec![Cluster::new(arities, vars), Cluster::new(arities, vars)];
    let mut assign = vec![0usize; order.len()];
    clusters[0].update(first, vars, 1.0);
    clusters[1].update(&data.codes[order[far]], vars, 1.0);
    assign[far] = 1;
    for (i, &r) in order.iter().enumerate() {
        if i == 0 || i == far {
            continue;
        }
        let codes = &data.codes[r];
        let c = best_cluster(&clusters, codes, vars, pc).map_or(0, |(c, _)| c);
        clusters[c].update(codes, vars, 1.0);
        assign[i] = c;
    }
    reassign(&mut clusters, &mut assign, order, data, vars, pc);
    let groups = collect(&clusters, &assign, order);
    (groups.len() == 2).then_some(groups)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LearnStats {
    pub sums: usize,
    pub products: usize,
    pub leaves: usize,
    /// Slices factorized because neither splitting nor clustering succeeded.
    pub fallbacks: usize,
}

struct Learner<'a> {
    data: &'a BinaryDataset,
    vars: &'a [VariableGroup],
    arities: Vec<usize>,
    params: &'a LearnParams,
    rng: ChaCha8Rng,
    critical: Critical,
    nodes: Vec<Node>,
    stats: LearnStats,
}

impl Learner<'_> {
    fn leaf(&self, rows: &[usize], g: usize) -> Result<Node> {
        let pc = self.params.pseudo_count;
        let arity = self.arities[g];
        let mut counts = vec![0.0; arity];
        for &r in rows {
            counts[self.data.codes[r][g] as usize] += 1.0;
        }
        let denom = rows.len() as f64 + pc * arity as f64;
        let probs: Vec<f64> = counts.iter().map(|c| (c + pc) / denom).collect();
        Ok(match &self.vars[g].density {
            Some(density) => Node::Poly {
                group: g,
                density: density.reweighted(&probs)?,
            },
            None => Node::Indicator { group: g, probs },
        })
    }

    fn push_leaf(&mut self, rows: &[usize], g: usize) -> Result<usize> {
        let node = self.leaf(rows, g)?;
        self.nodes.push(node);
        self.stats.leaves += 1;
        Ok(self.nodes.len() - 1)
    }

    fn factorize(&mut self, rows: &[usize], vars: &[usize]) -> Result<Node> {
        let children = vars
            .iter()
            .map(|&g| self.push_leaf(rows, g))
            .collect::<Result<Vec<_>>>()?;
        self.stats.products += 1;
        Ok(Node::Product { children })
    }

    fn learn(&mut self, rows: &[usize], vars: &[usize]) -> Result<usize> {
        if vars.len() == 1 {
            return self.push_leaf(rows, vars[0]);
        }
        let idx = self.nodes.len();
        self.nodes.push(Node::Product { children: Vec::new() });
        let node = if rows.len() < self.params.min_slice {
            self.factorize(rows, vars)?
        } else if let Some(parts) =
            g_test_partition_cached(self.data, rows, vars, &self.arities, &mut self.critical)
        {
            let children = parts
                .iter()
                .map(|part| self.learn(rows, part))
                .collect::<Result<Vec<_>>>()?;
            self.stats.products += 1;
            Node::Product { children }
        } else if let Some(clusters) =
            cluster_instances(self.data, rows, vars, &self.arities, self.params, &mut self.rng)
        {
            let n = rows.len() as f64;
            let weights = clusters.iter().map(|c| c.len() as f64 / n).collect();
            let children = clusters
                .iter()
                .map(|c| self.learn(c, vars))
                .collect::<Result<Vec<_>>>()?;
            self.stats.sums += 1;
            Node::Sum { children, weights }
        } else {
            self.stats.fallbacks += 1;
            self.factorize(rows, vars)?
        };
        self.nodes[idx] = node;
        Ok(idx)
    }
}

/// Learns a network over all rows and groups of `data`.
pub fn learn_wmispn(
    data: &BinaryDataset,
    vars: &[VariableGroup],
    params: &LearnParams,
) -> Result<(Spn, LearnStats)> {
    params.validate()?;
    if data.n_rows() == 0 {
        return Err(Error::Model("cannot learn from zero rows".into()));
    }
    if vars.is_empty() || vars.len() != data.n_groups() {
        return Err(Error::Model("one variable group per encoded group required".into()));
    }
    let mut learner = Learner {
        data,
        vars,
        arities: vars.iter().map(VariableGroup::arity).collect(),
        params,
        rng: ChaCha8Rng::seed_from_u64(params.seed),
        critical: Critical::new(params.alpha),
        nodes: Vec::new(),
        stats: LearnStats::default(),
    };
    let rows: Vec<usize> = (0..data.n_rows()).collect();
    let all: Vec<usize> = (0..vars.len()).collect();
    learner.learn(&rows, &all)?;
    let groups = vars.iter().map(|v| v.info.clone()).collect();
    let spn = Spn::new(groups, learner.nodes)?;
    spn.validate()?;
    Ok((spn, learner.stats))
}
