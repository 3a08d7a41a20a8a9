#![allow(dead_code)]

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wmispn::binning::{BinningSpec, ColumnBinning, ColumnLayout};
use wmispn::data::{Feature, FeatureKind, FeatureSchema, Imputer, SplitSpec};
use wmispn::model::ModelFile;
use wmispn::pipeline::Model;
use wmispn::polyfit::{Piece, PiecewisePoly};
use wmispn::query::{answer, answer_per_pass, answer_str, normalize, parse_query, Bound, QueryAst, QueryAtom};
use wmispn::spn::{Evidence, GroupInfo, GroupKind, Node, Observation, Spn};
use wmispn::structure::LearnParams;
use wmispn::wmi::{wmi, Expr, PropTheory, Weight};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normalized(raw: Vec<f64>) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

fn random_probs(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    normalized((0..k).map(|_| rng.random_range(0.05..1.0)).collect())
}

/// Non-negative random density on `edges`: each piece is a polynomial with non-negative
/// coefficients in the piece-local coordinate, then every piece gets a random mass.
pub fn random_density(rng: &mut ChaCha8Rng, edges: &[f64]) -> PiecewisePoly {
    let order = rng.random_range(0..=3);
    let pieces = edges
        .windows(2)
        .map(|w| {
            let mut coeffs: Vec<f64> = (0..=order).map(|_| rng.random_range(0.0..1.0)).collect();
            coeffs[0] += 0.05;
            Piece {
                lo: w[0],
                hi: w[1],
                coeffs,
            }
        })
        .collect();
    let masses = random_probs(rng, edges.len() - 1);
    PiecewisePoly::new(pieces, order).unwrap().reweighted(&masses).unwrap()
}

/// Two to six groups with at most twelve indicator columns in total, at least one
/// continuous.
pub fn random_groups(rng: &mut ChaCha8Rng) -> Vec<GroupInfo> {
    let mut groups = Vec::new();
    let mut width = 0;
    let target = rng.random_range(2..=6);
    while groups.len() < target {
        let arity = rng.random_range(2..=4usize);
        if width + arity > 12 {
            break;
        }
        width += arity;
        let i = groups.len();
        let continuous = i == 0 || rng.random_bool(0.5);
        let kind = if continuous {
            let lo = rng.random_range(-10.0..10.0);
            let mut edges = vec![lo];
            for _ in 0..arity {
                let last = *edges.last().unwrap();
                edges.push(last + rng.random_range(0.2..3.0));
            }
            GroupKind::Continuous { edges }
        } else {
            GroupKind::Discrete {
                values: (0..arity).map(|v| v.to_string()).collect(),
            }
        };
        groups.push(GroupInfo {
            name: format!("g{i}"),
            kind,
        });
    }
    if groups.len() < 2 {
        groups.push(GroupInfo {
            name: format!("g{}", groups.len()),
            kind: GroupKind::Discrete {
                values: vec!["0".into(), "1".into()],
            },
        });
    }
    groups
}

fn build(rng: &mut ChaCha8Rng, groups: &[GroupInfo], scope: Vec<usize>, depth: usize, nodes: &mut Vec<Node>) -> usize {
    let id = nodes.len();
    nodes.push(Node::Product { children: Vec::new() });
    let sum = depth < 3 && rng.random_bool(if scope.len() == 1 { 0.25 } else { 0.5 });
    let node = if sum {
        let k = rng.random_range(2..=3);
        let children = (0..k).map(|_| build(rng, groups, scope.clone(), depth + 1, nodes)).collect();
        Node::Sum {
            children,
            weights: random_probs(rng, k),
        }
    } else if scope.len() == 1 {
        let g = scope[0];
        match &groups[g].kind {
            GroupKind::Discrete { values } => Node::Indicator {
                group: g,
                probs: random_probs(rng, values.len()),
            },
            GroupKind::Continuous { edges } => Node::Poly {
                group: g,
                density: random_density(rng, edges),
            },
        }
    } else {
        let mut scope = scope;
        scope.shuffle(rng);
        let parts = rng.random_range(2..=scope.len().min(3));
        let mut cuts: Vec<usize> = (1..scope.len()).collect();
        cuts.shuffle(rng);
        let mut cuts: Vec<usize> = cuts[..parts - 1].to_vec();
        cuts.sort_unstable();
        cuts.push(scope.len());
        let mut start = 0;
        let mut children = Vec::new();
        for c in cuts {
            children.push(build(rng, groups, scope[start..c].to_vec(), depth + 1, nodes));
            start = c;
        }
        Node::Product { children }
    };
    nodes[id] = node;
    id
}

/// Random complete, decomposable, normalized network with mixed leaf types.
pub fn random_network(seed: u64) -> Spn {
    let mut rng = rng(seed);
    let groups = random_groups(&mut rng);
    let mut nodes = Vec::new();
    build(&mut rng, &groups, (0..groups.len()).collect(), 0, &mut nodes);
    let spn = Spn::new(groups, nodes).unwrap();
    spn.validate().unwrap();
    spn
}

/// Constraint on one group, in oracle terms.
#[derive(Debug, Clone, PartialEq)]
pub enum Cons {
    Values(Vec<usize>),
    Interval(f64, f64),
}

pub type Conj = BTreeMap<usize, Cons>;

pub fn intersect(a: &Conj, b: &Conj) -> Conj {
    let mut out = a.clone();
    for (&g, c) in b {
        let merged = match (out.remove(&g), c) {
            (None, c) => c.clone(),
            (Some(Cons::Values(x)), Cons::Values(y)) => {
                Cons::Values(x.into_iter().filter(|v| y.contains(v)).collect())
            }
            (Some(Cons::Interval(a0, b0)), Cons::Interval(a1, b1)) => Cons::Interval(a0.max(*a1), b0.min(*b1)),
            _ => unreachable!("kinds match per group"),
        };
        out.insert(g, merged);
    }
    out
}

pub fn to_evidence(c: &Conj) -> Evidence {
    let mut e = Evidence::new();
    for (&g, con) in c {
        e.set(
            g,
            match con {
                Cons::Values(v) if v.is_empty() => Observation::Empty,
                Cons::Values(v) => Observation::OneOf(v.clone()),
                Cons::Interval(a, b) if a > b => Observation::Empty,
                Cons::Interval(a, b) => Observation::Interval { lo: *a, hi: *b },
            },
        );
    }
    e
}

/// `∫_lo^hi poly` through weighted model integration of a one-atom theory.
pub fn wmi_integral(coeffs: &[f64], lo: f64, hi: f64) -> f64 {
    if !(lo < hi) {
        return 0.0;
    }
    let mut t = PropTheory::new(&Expr::interval("x", lo, hi));
    t.set_weight("p", Weight::Poly(coeffs.to_vec())).unwrap();
    wmi(&t).unwrap()
}

/// Weight of every leaf at every state of its group under `c`.
fn leaf_tables(spn: &Spn, c: &Conj) -> Vec<Vec<f64>> {
    spn.nodes()
        .iter()
        .map(|n| match n {
            Node::Indicator { group, probs } => probs
                .iter()
                .enumerate()
                .map(|(v, &p)| match c.get(group) {
                    Some(Cons::Values(allowed)) if !allowed.contains(&v) => 0.0,
                    _ => p,
                })
                .collect(),
            Node::Poly { group, density } => density
                .pieces()
                .iter()
                .map(|p| {
                    let (a, b) = match c.get(group) {
                        Some(Cons::Interval(a, b)) => (a.max(p.lo), b.min(p.hi)),
                        _ => (p.lo, p.hi),
                    };
                    wmi_integral(&p.power_coeffs(), a, b)
                })
                .collect(),
            _ => Vec::new(),
        })
        .collect()
}

fn eval_state(spn: &Spn, node: usize, state: &[usize], tables: &[Vec<f64>]) -> f64 {
    match &spn.nodes()[node] {
        Node::Sum { children, weights } => children
            .iter()
            .zip(weights)
            .map(|(&ch, w)| w * eval_state(spn, ch, state, tables))
            .sum(),
        Node::Product { children } => children.iter().map(|&ch| eval_state(spn, ch, state, tables)).product(),
        Node::Indicator { group, .. } | Node::Poly { group, .. } => tables[node][state[*group]],
    }
}

/// Network value under `c` by summing the network polynomial over every joint state of the
/// groups (value or bin per group), one recursive evaluation per state.
pub fn brute_value(spn: &Spn, c: &Conj) -> f64 {
    let tables = leaf_tables(spn, c);
    let arities: Vec<usize> = spn.groups().iter().map(|g| g.arity()).collect();
    let mut state = vec![0usize; arities.len()];
    let mut total = 0.0;
    loop {
        total += eval_state(spn, 0, &state, &tables);
        let mut k = 0;
        while k < state.len() {
            state[k] += 1;
            if state[k] < arities[k] {
                break;
            }
            state[k] = 0;
            k += 1;
        }
        if k == state.len() {
            return total;
        }
    }
}

fn fmt_num(x: f64) -> String {
    format!("{x:?}")
}

/// Random conjunction over a random subset of groups, as text and as oracle constraints.
/// Intervals may stick out of the support.
pub fn random_conj(rng: &mut ChaCha8Rng, spn: &Spn, p: f64) -> (Vec<String>, Conj) {
    let mut atoms = Vec::new();
    let mut c = Conj::new();
    for (g, info) in spn.groups().iter().enumerate() {
        if !rng.random_bool(p) {
            continue;
        }
        match &info.kind {
            GroupKind::Discrete { values } => {
                let v = rng.random_range(0..values.len());
                if rng.random_bool(0.3) {
                    atoms.push(format!("!{} = {}", info.name, values[v]));
                    c.insert(g, Cons::Values((0..values.len()).filter(|&i| i != v).collect()));
                } else {
                    atoms.push(format!("{} = {}", info.name, values[v]));
                    c.insert(g, Cons::Values(vec![v]));
                }
            }
            GroupKind::Continuous { edges } => {
                let (lo, hi) = (edges[0], edges[edges.len() - 1]);
                let pad = 0.2 * (hi - lo);
                let mut a = rng.random_range(lo - pad..hi + pad);
                let mut b = rng.random_range(lo - pad..hi + pad);
                if a > b {
                    std::mem::swap(&mut a, &mut b);
                }
                atoms.push(format!("{} <= {} <= {}", fmt_num(a), info.name, fmt_num(b)));
                c.insert(g, Cons::Interval(a, b));
            }
        }
    }
    (atoms, c)
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// One oracle comparison on a random network: evaluate, conditional and answer against
/// enumeration.
pub fn oracle_case(seed: u64) -> Result<(), String> {
    let spn = random_network(seed);
    let mut rng = rng(seed ^ 0xa5a5);
    let tol = 1e-9;

    let (_, e) = random_conj(&mut rng, &spn, 0.5);
    let got = spn.evaluate(&to_evidence(&e)).map_err(|x| x.to_string())?;
    let want = brute_value(&spn, &e);
    if !close(got, want, tol) {
        return Err(format!("seed {seed}: evaluate {got} vs enumeration {want}"));
    }
    let z = spn.partition_function();
    if !close(z, brute_value(&spn, &Conj::new()), tol) || !close(z, 1.0, tol) {
        return Err(format!("seed {seed}: partition function {z}"));
    }

    // conditional on disjoint scopes
    let (_, q) = random_conj(&mut rng, &spn, 0.5);
    let q: Conj = q.into_iter().filter(|(g, _)| !e.contains_key(g)).collect();
    let denom = brute_value(&spn, &e);
    if denom > 1e-12 {
        let got = spn
            .conditional(&to_evidence(&q), &to_evidence(&e))
            .map_err(|x| x.to_string())?;
        let want = brute_value(&spn, &intersect(&q, &e)) / denom;
        if !close(got, want, tol) {
            return Err(format!("seed {seed}: conditional {got} vs enumeration {want}"));
        }
    }

    // query strings, possibly constraining the same group on both sides
    let (qa, qc) = random_conj(&mut rng, &spn, 0.6);
    let (ea, ec) = random_conj(&mut rng, &spn, 0.3);
    if qa.is_empty() {
        return Ok(());
    }
    let mut text = qa.join(" & ");
    if !ea.is_empty() {
        text = format!("{text} | {}", ea.join(" & "));
    }
    let denom = brute_value(&spn, &ec);
    let got = answer_str(&spn, &text);
    if denom == 0.0 {
        return match got {
            Err(wmispn::Error::UndefinedConditional) => Ok(()),
            other => Err(format!("seed {seed}: {text}: expected undefined, got {other:?}")),
        };
    }
    if denom <= 1e-12 {
        return Ok(());
    }
    let got = got.map_err(|x| format!("seed {seed}: {text}: {x}"))?;
    let want = (brute_value(&spn, &intersect(&qc, &ec)) / denom).clamp(0.0, 1.0);
    if !close(got, want, tol) {
        return Err(format!("seed {seed}: answer({text}) = {got} vs enumeration {want}"));
    }
    let (pp, _) = answer_per_pass(&spn, &normalize(&parse_query(&text).unwrap(), &spn).unwrap())
        .map_err(|x| x.to_string())?;
    if !close(pp, got, tol) {
        return Err(format!("seed {seed}: per-pass {pp} vs single pass {got}"));
    }
    Ok(())
}

fn first_continuous(spn: &Spn) -> (usize, Vec<f64>) {
    spn.groups()
        .iter()
        .enumerate()
        .find_map(|(g, info)| match &info.kind {
            GroupKind::Continuous { edges } => Some((g, edges.clone())),
            _ => None,
        })
        .expect("generator always makes a continuous group")
}

fn ans(spn: &Spn, text: &str) -> Result<f64, String> {
    answer_str(spn, text).map_err(|e| format!("{text}: {e}"))
}

/// Evidence text on groups other than `skip`, plus its probability.
fn side_evidence(rng: &mut ChaCha8Rng, spn: &Spn, skip: usize) -> (String, f64) {
    let (atoms, c) = random_conj(rng, spn, 0.5);
    let keep: Vec<(String, (usize, Cons))> = atoms
        .into_iter()
        .zip(c)
        .filter(|(_, (g, _))| *g != skip)
        .collect();
    let text = keep.iter().map(|(a, _)| a.clone()).collect::<Vec<_>>().join(" & ");
    let c: Conj = keep.into_iter().map(|(_, gc)| gc).collect();
    (text, brute_value(spn, &c))
}

fn with_evidence(q: String, e: &str) -> String {
    if e.is_empty() {
        q
    } else {
        format!("{q} | {e}")
    }
}

/// answer(x ∈ [a,c]) = answer(x ∈ [a,b]) + answer(x ∈ [b,c]).
pub fn additivity_case(seed: u64, u: [f64; 3]) -> Result<(), String> {
    let spn = random_network(seed);
    let (g, edges) = first_continuous(&spn);
    let name = &spn.groups()[g].name;
    let (lo, hi) = (edges[0], edges[edges.len() - 1]);
    let mut x: Vec<f64> = u.iter().map(|t| lo + t * (hi - lo)).collect();
    x.sort_by(f64::total_cmp);
    let mut rng = rng(seed ^ 0x1111);
    let (e, pe) = side_evidence(&mut rng, &spn, g);
    if pe <= 1e-12 {
        return Ok(());
    }
    let q = |a: f64, b: f64| with_evidence(format!("{} <= {name} <= {}", fmt_num(a), fmt_num(b)), &e);
    let whole = ans(&spn, &q(x[0], x[2]))?;
    let parts = ans(&spn, &q(x[0], x[1]))? + ans(&spn, &q(x[1], x[2]))?;
    if close(whole, parts, 1e-9) {
        Ok(())
    } else {
        Err(format!("seed {seed}: {whole} vs {parts}"))
    }
}

/// answer(A || B) = answer(A) + answer(B) for disjoint intervals on one feature.
pub fn disjoint_union_case(seed: u64, u: [f64; 4]) -> Result<(), String> {
    let spn = random_network(seed);
    let (g, edges) = first_continuous(&spn);
    let name = &spn.groups()[g].name;
    let (lo, hi) = (edges[0], edges[edges.len() - 1]);
    let mut x: Vec<f64> = u.iter().map(|t| lo + t * (hi - lo)).collect();
    x.sort_by(f64::total_cmp);
    if x[1] >= x[2] {
        return Ok(());
    }
    let a = format!("{} <= {name} <= {}", fmt_num(x[0]), fmt_num(x[1]));
    let b = format!("{} <= {name} <= {}", fmt_num(x[2]), fmt_num(x[3]));
    let union = ans(&spn, &format!("{a} || {b}"))?;
    let sum = ans(&spn, &a)? + ans(&spn, &b)?;
    if close(union, sum, 1e-9) {
        Ok(())
    } else {
        Err(format!("seed {seed}: {union} vs {sum}"))
    }
}

/// Σ over a feature's bins (or values) of answer(bin | e) = 1 for satisfiable e.
pub fn coherence_case(seed: u64, pick: usize) -> Result<(), String> {
    let spn = random_network(seed);
    let g = pick % spn.groups().len();
    let info = &spn.groups()[g];
    let mut rng = rng(seed ^ 0x2222);
    let (e, pe) = side_evidence(&mut rng, &spn, usize::MAX);
    if pe <= 1e-9 {
        return Ok(());
    }
    let atoms: Vec<String> = match &info.kind {
        GroupKind::Continuous { edges } => edges
            .windows(2)
            .map(|w| format!("{} <= {} <= {}", fmt_num(w[0]), info.name, fmt_num(w[1])))
            .collect(),
        GroupKind::Discrete { values } => values.iter().map(|v| format!("{} = {v}", info.name)).collect(),
    };
    let mut total = 0.0;
    for a in atoms {
        total += ans(&spn, &with_evidence(a, &e))?;
    }
    if close(total, 1.0, 1e-9) {
        Ok(())
    } else {
        Err(format!("seed {seed}: bins sum to {total}"))
    }
}

/// Enlarging an interval never lowers its probability.
pub fn monotone_case(seed: u64, u: [f64; 4]) -> Result<(), String> {
    let spn = random_network(seed);
    let (g, edges) = first_continuous(&spn);
    let name = &spn.groups()[g].name;
    let (lo, hi) = (edges[0], edges[edges.len() - 1]);
    let mut x: Vec<f64> = u.iter().map(|t| lo - 1.0 + t * (hi - lo + 2.0)).collect();
    x.sort_by(f64::total_cmp);
    let mut rng = rng(seed ^ 0x3333);
    let (e, pe) = side_evidence(&mut rng, &spn, g);
    if pe <= 1e-12 {
        return Ok(());
    }
    let q = |a: f64, b: f64| with_evidence(format!("{} <= {name} <= {}", fmt_num(a), fmt_num(b)), &e);
    let inner = ans(&spn, &q(x[1], x[2]))?;
    let outer = ans(&spn, &q(x[0], x[3]))?;
    if inner <= outer + 1e-12 {
        Ok(())
    } else {
        Err(format!("seed {seed}: inner {inner} > outer {outer}"))
    }
}

/// A self-consistent model file around a random network.
pub fn random_model_file(seed: u64) -> ModelFile {
    let spn = random_network(seed);
    let mut rng = rng(seed ^ 0x4444);
    let mut features = Vec::new();
    let mut columns = Vec::new();
    let mut densities = Vec::new();
    let mut fills = Vec::new();
    for info in spn.groups() {
        match &info.kind {
            GroupKind::Continuous { edges } => {
                let (lo, hi) = (edges[0], edges[edges.len() - 1]);
                features.push(Feature {
                    name: info.name.clone(),
                    kind: FeatureKind::Continuous { min: lo, max: hi },
                });
                columns.push(ColumnBinning {
                    name: info.name.clone(),
                    layout: ColumnLayout::Bins { edges: edges.clone() },
                });
                densities.push(Some(random_density(&mut rng, edges)));
                fills.push(format!("{}", 0.5 * (lo + hi)));
            }
            GroupKind::Discrete { values } => {
                features.push(Feature {
                    name: info.name.clone(),
                    kind: FeatureKind::Discrete { values: values.clone() },
                });
                columns.push(ColumnBinning {
                    name: info.name.clone(),
                    layout: ColumnLayout::Values { values: values.clone() },
                });
                densities.push(None);
                fills.push(values[0].clone());
            }
        }
    }
    ModelFile {
        model: Model {
            schema: FeatureSchema { features },
            imputer: Imputer { fills },
            binning: BinningSpec { columns },
            densities,
            spn,
        },
        params: LearnParams {
            alpha: rng.random_range(0.001..0.2),
            cluster_penalty: rng.random_range(0.0..3.0),
            min_slice: rng.random_range(2..50),
            pseudo_count: rng.random_range(0.1..2.0),
            seed: rng.random(),
        },
        split: SplitSpec::with_seed(rng.random()),
        bins: if rng.random_bool(0.5) { Some(rng.random_range(2..12)) } else { None },
        digest: format!("{:064x}", rng.random::<u128>()),
    }
}

pub fn model_round_trip_case(seed: u64) -> Result<(), String> {
    let m = random_model_file(seed);
    let text = wmispn::model::to_text(&m);
    let back = wmispn::model::from_text(&text).map_err(|e| format!("seed {seed}: {e}"))?;
    if back != m {
        return Err(format!("seed {seed}: loaded model differs"));
    }
    if wmispn::model::to_text(&back) != text {
        return Err(format!("seed {seed}: second save differs"));
    }
    Ok(())
}

/// Probability of a full-support query on the first continuous feature.
pub fn full_support(seed: u64) -> f64 {
    let spn = random_network(seed);
    let (g, edges) = first_continuous(&spn);
    let text = format!("{} >= {}", spn.groups()[g].name, fmt_num(edges[0]));
    answer(&spn, &normalize(&parse_query(&text).unwrap(), &spn).unwrap()).unwrap()
}

// query text strategies

fn name() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-z_][a-z0-9_.-]{0,8}",
        "[ -~]{0,6}",
    ]
}

fn value() -> impl Strategy<Value = String> {
    prop_oneof!["[A-Za-z0-9_.-]{1,8}", "[ -~]{0,6}"]
}

fn number() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6..1e6f64, any::<f64>().prop_filter("finite", |x| x.is_finite())]
}

fn bound() -> impl Strategy<Value = Bound> {
    (number(), any::<bool>()).prop_map(|(value, inclusive)| Bound { value, inclusive })
}

fn atom() -> impl Strategy<Value = QueryAtom> {
    prop_oneof![
        (name(), bound(), bound()).prop_map(|(feature, a, b)| QueryAtom::Interval { feature, lo: Some(a), hi: Some(b) }),
        (name(), bound()).prop_map(|(feature, a)| QueryAtom::Interval { feature, lo: Some(a), hi: None }),
        (name(), bound()).prop_map(|(feature, b)| QueryAtom::Interval { feature, lo: None, hi: Some(b) }),
        (name(), value(), any::<bool>()).prop_map(|(feature, value, negated)| QueryAtom::Discrete { feature, value, negated }),
    ]
}

pub fn query_ast() -> impl Strategy<Value = QueryAst> {
    let conj = || prop::collection::vec(atom(), 1..4);
    (prop::collection::vec(conj(), 1..=2), prop::collection::vec(atom(), 0..3))
        .prop_map(|(disjuncts, evidence)| QueryAst { disjuncts, evidence })
}
