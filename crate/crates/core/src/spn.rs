//! Sum-product networks over one-hot variable groups.
//!
//! Nodes live in a flat table with the root at index 0 and every child stored after its
//! parent, so one reverse sweep evaluates the whole network. Values are carried in log
//! space and only converted back at the interface.

use std::collections::BTreeMap;

use crate::binning::BinaryDataset;
use crate::error::{Error, Result};
use crate::polyfit::{PiecewisePoly, DENSITY_FLOOR};

/// What a variable group ranges over.
#[derive(Debug, Clone, PartialEq)]
pub enum GroupKind {
    Discrete { values: Vec<String> },
    Continuous { edges: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupInfo {
    pub name: String,
    pub kind: GroupKind,
}

impl GroupInfo {
    pub fn arity(&self) -> usize {
        match &self.kind {
            GroupKind::Discrete { values } => values.len(),
            GroupKind::Continuous { edges } => edges.len() - 1,
        }
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self.kind, GroupKind::Continuous { .. })
    }

    /// `(lo, hi)` of a continuous group.
    pub fn support(&self) -> Option<(f64, f64)> {
        match &self.kind {
            GroupKind::Continuous { edges } => Some((edges[0], edges[edges.len() - 1])),
            GroupKind::Discrete { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Sum { children: Vec<usize>, weights: Vec<f64> },
    Product { children: Vec<usize> },
    Indicator { group: usize, probs: Vec<f64> },
    Poly { group: usize, density: PiecewisePoly },
}

impl Node {
    pub fn children(&self) -> &[usize] {
        match self {
            Node::Sum { children, .. } | Node::Product { children } => children,
            _ => &[],
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Node::Indicator { .. } | Node::Poly { .. })
    }
}

/// Observation on one variable group.
#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    /// Discrete value index.
    Value(usize),
    /// Any of several discrete value indices.
    OneOf(Vec<usize>),
    /// Closed interval on a continuous group.
    Interval { lo: f64, hi: f64 },
    /// The observed bin of a continuous group; each leaf contributes its own bin mass.
    Bin(usize),
    /// Point density of a continuous group.
    Point(f64),
    /// Precomputed leaf value used verbatim.
    Mass(f64),
    /// Contradictory constraint: the leaf emits 0.
    Empty,
}

/// Evidence keyed by group index; groups absent from the map are marginalized.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Evidence {
    pub observations: BTreeMap<usize, Observation>,
}

impl Evidence {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, group: usize, obs: Observation) -> Self {
        self.observations.insert(group, obs);
        self
    }

    pub fn set(&mut self, group: usize, obs: Observation) {
        self.observations.insert(group, obs);
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Union of two evidence sets over disjoint groups.
    pub fn merged(&self, other: &Evidence) -> Result<Evidence> {
        let mut out = self.clone();
        for (&g, o) in &other.observations {
            if out.observations.insert(g, o.clone()).is_some() {
                return Err(Error::Spn(format!(
                    "group {g} is observed on both sides of a conditional"
                )));
            }
        }
        Ok(out)
    }
}

/// Result of one instrumented pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pass {
    pub log_value: f64,
    /// Nodes visited; equals the node count.
    pub visits: usize,
    /// Leaves whose value was raised to the floor.
    pub floored: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spn {
    groups: Vec<GroupInfo>,
    nodes: Vec<Node>,
    scopes: Vec<Vec<usize>>,
}

impl Spn {
    /// Checks indices, ordering, leaf shapes, completeness and decomposability.
    pub fn new(groups: Vec<GroupInfo>, nodes: Vec<Node>) -> Result<Spn> {
        if nodes.is_empty() {
            return Err(Error::Spn("network has no nodes".into()));
        }
        let n = nodes.len();
        let mut has_parent = vec![false; n];
        for (i, node) in nodes.iter().enumerate() {
            match node {
                Node::Sum { children, weights } => {
                    if children.is_empty() {
                        return Err(Error::Spn(format!("sum node {i} has no children")));
                    }
                    if weights.len() != children.len() {
                        return Err(Error::Spn(format!("sum node {i}: weight count mismatch")));
                    }
                    if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
                        return Err(Error::Spn(format!("sum node {i}: weights must be positive")));
                    }
                }
                Node::Product { children } => {
                    if children.is_empty() {
                        return Err(Error::Spn(format!("product node {i} has no children")));
                    }
                }
                Node::Indicator { group, probs } => {
                    let g = groups.get(*group).ok_or(Error::UnknownGroup(*group))?;
                    if g.is_continuous() || probs.len() != g.arity() {
                        return Err(Error::Spn(format!(
                            "indicator node {i} does not match group {}",
                            g.name
                        )));
                    }
                    if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
                        return Err(Error::Spn(format!("indicator node {i}: bad probability")));
                    }
                }
                Node::Poly { group, .. } => {
                    let g = groups.get(*group).ok_or(Error::UnknownGroup(*group))?;
                    if !g.is_continuous() {
                        return Err(Error::Spn(format!(
                            "polynomial leaf {i} on discrete group {}",
                            g.name
                        )));
                    }
                }
            }
            for &c in node.children() {
                if c <= i || c >= n {
                    return Err(Error::Spn(format!(
                        "node {i}: child {c} must come after its parent and exist"
                    )));
                }
                has_parent[c] = true;
            }
        }
        if let Some(orphan) = (1..n).find(|&i| !has_parent[i]) {
            return Err(Error::Spn(format!("node {orphan} is unreachable from the root")));
        }

        let mut scopes: Vec<Vec<usize>> = vec![Vec::new(); n];
        for i in (0..n).rev() {
            scopes[i] = match &nodes[i] {
                Node::Indicator { group, .. } | Node::Poly { group, .. } => vec![*group],
                Node::Sum { children, .. } => {
                    let first = &scopes[children[0]];
                    if children.iter().any(|&c| &scopes[c] != first) {
                        return Err(Error::Spn(format!("sum node {i} is not complete")));
                    }
                    first.clone()
                }
                Node::Product { children } => {
                    let mut all: Vec<usize> =
                        children.iter().flat_map(|&c| scopes[c].iter().copied()).collect();
                    let len = all.len();
                    all.sort_unstable();
                    all.dedup();
                    if all.len() != len {
                        return Err(Error::Spn(format!("product node {i} is not decomposable")));
                    }
                    all
                }
            };
        }
        Ok(Spn {
            groups,
            nodes,
            scopes,
        })
    }

    pub fn groups(&self) -> &[GroupInfo] {
        &self.groups
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn scope(&self, node: usize) -> &[usize] {
        &self.scopes[node]
    }

    pub fn group_index(&self, name: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.name == name)
    }

    pub fn n_edges(&self) -> usize {
        self.nodes.iter().map(|n| n.children().len()).sum()
    }

    /// Normalization checks on top of the structural ones done by [`Spn::new`]: sum weights
    /// and indicator probabilities add to one, polynomial leaves are valid densities.
    pub fn validate(&self) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            match node {
                Node::Sum { weights, .. } => {
                    let s: f64 = weights.iter().sum();
                    if (s - 1.0).abs() > 1e-12 {
                        return Err(Error::Spn(format!("sum node {i}: weights add to {s}")));
                    }
                }
                Node::Indicator { probs, .. } => {
                    let s: f64 = probs.iter().sum();
                    if (s - 1.0).abs() > 1e-12 || probs.iter().any(|&p| p <= 0.0) {
                        return Err(Error::Spn(format!("indicator node {i} is not normalized")));
                    }
                }
                Node::Poly { group, density } => {
                    density.validate()?;
                    let (lo, hi) = self.groups[*group].support().expect("continuous group");
                    let (a, b) = density.support();
                    if a != lo || b != hi {
                        return Err(Error::Spn(format!(
                            "polynomial leaf {i} covers [{a}, {b}], group spans [{lo}, {hi}]"
                        )));
                    }
                }
                Node::Product { .. } => {}
            }
        }
        let all: Vec<usize> = (0..self.groups.len()).collect();
        if self.scopes[0] != all {
            return Err(Error::Spn("root scope does not cover every group".into()));
        }
        Ok(())
    }

    fn check_evidence(&self, e: &Evidence) -> Result<()> {
        for (&g, obs) in &e.observations {
            let info = self.groups.get(g).ok_or(Error::UnknownGroup(g))?;
            let ok = match (obs, &info.kind) {
                (Observation::Value(v), GroupKind::Discrete { values }) => *v < values.len(),
                (Observation::OneOf(vs), GroupKind::Discrete { values }) => {
                    vs.iter().all(|v| *v < values.len())
                }
                (Observation::Interval { lo, hi }, GroupKind::Continuous { .. }) => lo <= hi,
                (Observation::Bin(j), GroupKind::Continuous { edges }) => *j + 1 < edges.len(),
                (Observation::Point(x), GroupKind::Continuous { .. }) => x.is_finite(),
                (Observation::Mass(m), _) => m.is_finite() && *m >= 0.0,
                (Observation::Empty, _) => true,
                _ => false,
            };
            if !ok {
                return Err(Error::Spn(format!(
                    "observation {obs:?} does not fit group {}",
                    info.name
                )));
            }
        }
        Ok(())
    }

    fn leaf_value(node: &Node, obs: Option<&Observation>) -> f64 {
        match (node, obs) {
            (_, None) => 1.0,
            (_, Some(Observation::Mass(m))) => *m,
            (_, Some(Observation::Empty)) => 0.0,
            (Node::Indicator { probs, .. }, Some(Observation::Value(v))) => probs[*v],
            (Node::Indicator { probs, .. }, Some(Observation::OneOf(vs))) => {
                vs.iter().map(|&v| probs[v]).sum()
            }
            (Node::Poly { density, .. }, Some(Observation::Interval { lo, hi })) => {
                density.leaf_mass(*lo, *hi)
            }
            (Node::Poly { density, .. }, Some(Observation::Bin(j))) => {
                density.bin_masses().get(*j).copied().unwrap_or(0.0)
            }
            (Node::Poly { density, .. }, Some(Observation::Point(x))) => density.density(*x),
            _ => unreachable!("evidence checked before evaluation"),
        }
    }

    /// One bottom-up pass in log space. `floor` raises leaf values below it.
    pub fn pass(&self, e: &Evidence, floor: Option<f64>, scratch: &mut Vec<f64>) -> Result<Pass> {
        self.check_evidence(e)?;
        let dense: Vec<Option<&Observation>> =
            (0..self.groups.len()).map(|g| e.observations.get(&g)).collect();
        scratch.clear();
        scratch.resize(self.nodes.len(), f64::NEG_INFINITY);
        let mut floored = 0;
        let mut visits = 0;
        for i in (0..self.nodes.len()).rev() {
            visits += 1;
            scratch[i] = match &self.nodes[i] {
                Node::Sum { children, weights } => {
                    let terms = children.iter().zip(weights).map(|(&c, w)| w.ln() + scratch[c]);
                    log_sum_exp(terms)
                }
                Node::Product { children } => children.iter().map(|&c| scratch[c]).sum(),
                leaf @ (Node::Indicator { group, .. } | Node::Poly { group, .. }) => {
                    let mut v = Self::leaf_value(leaf, dense[*group]);
                    if let Some(f) = floor {
                        if v < f {
                            v = f;
                            floored += 1;
                        }
                    }
                    v.ln()
                }
            };
        }
        Ok(Pass {
            log_value: scratch[0],
            visits,
            floored,
        })
    }

    pub fn log_evaluate(&self, e: &Evidence) -> Result<f64> {
        Ok(self.pass(e, None, &mut Vec::new())?.log_value)
    }

    pub fn evaluate(&self, e: &Evidence) -> Result<f64> {
        Ok(self.log_evaluate(e)?.exp())
    }

    /// Network value with every group marginalized.
    pub fn partition_function(&self) -> f64 {
        self.evaluate(&Evidence::new()).expect("empty evidence is always valid")
    }

    /// `value(q ∧ e) / value(e)`.
    pub fn conditional(&self, q: &Evidence, e: &Evidence) -> Result<f64> {
        let joint = self.log_evaluate(&q.merged(e)?)?;
        let denom = self.log_evaluate(e)?;
        if denom == f64::NEG_INFINITY {
            return Err(Error::UndefinedConditional);
        }
        Ok((joint - denom).exp())
    }

    /// Evidence for one encoded row: discrete groups by value, continuous groups by bin
    /// (or by point value in density mode).
    pub fn row_evidence(&self, d: &BinaryDataset, row: usize, mode: LikelihoodMode) -> Evidence {
        let mut e = Evidence::new();
        for (g, info) in self.groups.iter().enumerate() {
            let code = d.codes[row][g] as usize;
            let obs = match (&info.kind, mode) {
                (GroupKind::Discrete { .. }, _) => Observation::Value(code),
                (GroupKind::Continuous { .. }, LikelihoodMode::BinMass) => Observation::Bin(code),
                (GroupKind::Continuous { .. }, LikelihoodMode::Density) => {
                    Observation::Point(d.values[row][g])
                }
            };
            e.set(g, obs);
        }
        e
    }

    /// Average log-likelihood of the rows of `d`, flooring zero leaves at `1e-12`.
    pub fn log_likelihood(&self, d: &BinaryDataset, mode: LikelihoodMode) -> Result<Likelihood> {
        if d.n_rows() == 0 {
            return Err(Error::Data("no rows to evaluate".into()));
        }
        if d.groups.len() != self.groups.len()
            || d.groups
                .iter()
                .zip(&self.groups)
                .any(|(a, b)| a.name != b.name || a.arity != b.arity() || a.continuous != b.is_continuous())
        {
            return Err(Error::Spn("encoded data does not match the network's groups".into()));
        }
        let mut scratch = Vec::with_capacity(self.nodes.len());
        let mut total = 0.0;
        let mut floored_rows = 0;
        for row in 0..d.n_rows() {
            let e = self.row_evidence(d, row, mode);
            let pass = self.pass(&e, Some(DENSITY_FLOOR), &mut scratch)?;
            total += pass.log_value;
            floored_rows += (pass.floored > 0) as usize;
        }
        Ok(Likelihood {
            mean: total / d.n_rows() as f64,
            rows: d.n_rows(),
            floored_rows,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LikelihoodMode {
    /// A continuous observation contributes the mass of its bin.
    #[default]
    BinMass,
    /// A continuous observation contributes its point density.
    Density,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Likelihood {
    pub mean: f64,
    pub rows: usize,
    /// Rows where at least one leaf hit the probability floor.
    pub floored_rows: usize,
}

pub fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.map(|t| (t - max).exp()).sum::<f64>().ln()
}
