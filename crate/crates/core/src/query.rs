//! Conjunctive interval queries over a learned network.
//!
//! ```text
//! query := conj ('||' conj)? ('|' conj)?
//! conj  := atom ('&' atom)*
//! atom  := name cmp number | number cmp name | number cmp name cmp number
//!        | '!'? name '=' value | name '!=' value
//! cmp   := '<' | '<=' | '>' | '>='
//! ```
//!
//! The part after a single `|` is evidence. Names and values may be double-quoted. Every
//! interval on a continuous feature is treated as closed: the end points carry no mass, so
//! `<` and `<=` give the same answer there. On discrete features with numeric values the
//! comparison selects values and strictness matters.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::spn::{Evidence, GroupKind, Observation, Spn};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bound {
    pub value: f64,
    pub inclusive: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum QueryAtom {
    Interval {
        feature: String,
        lo: Option<Bound>,
        hi: Option<Bound>,
    },
    Discrete {
        feature: String,
        value: String,
        negated: bool,
    },
}

impl QueryAtom {
    pub fn feature(&self) -> &str {
        match self {
            QueryAtom::Interval { feature, .. } | QueryAtom::Discrete { feature, .. } => feature,
        }
    }
}

/// Parsed query: one or two disjuncts and an optional evidence conjunction.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryAst {
    pub disjuncts: Vec<Vec<QueryAtom>>,
    pub evidence: Vec<QueryAtom>,
}

fn is_name_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | '.' | '-')
}

fn write_token(f: &mut fmt::Formatter<'_>, s: &str, bare: bool) -> fmt::Result {
    if bare && !s.is_empty() {
        f.write_str(s)
    } else {
        write!(f, "\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
    }
}

fn write_name(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    let mut chars = s.chars();
    let bare = chars.next().is_some_and(|c| c.is_alphabetic() || c == '_') && chars.all(is_name_char);
    write_token(f, s, bare)
}

fn write_value(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    let bare = s.chars().all(|c| !c.is_whitespace() && !"&|()!\"=<>".contains(c));
    write_token(f, s, bare)
}

impl fmt::Display for QueryAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = |b: &Bound, lower: bool| match (lower, b.inclusive) {
            (true, true) => "<=",
            (true, false) => "<",
            (false, true) => ">=",
            (false, false) => ">",
        };
        match self {
            QueryAtom::Interval { feature, lo, hi } => match (lo, hi) {
                (Some(l), Some(h)) => {
                    write!(f, "{:?} {} ", l.value, op(l, true))?;
                    write_name(f, feature)?;
                    write!(f, " {} {:?}", op(h, true), h.value)
                }
                (Some(l), None) => {
                    write_name(f, feature)?;
                    write!(f, " {} {:?}", op(l, false), l.value)
                }
                (None, Some(h)) => {
                    write_name(f, feature)?;
                    write!(f, " {} {:?}", op(h, true), h.value)
                }
                (None, None) => {
                    // unconstrained; render as an always-true one-sided bound
                    write_name(f, feature)?;
                    write!(f, " >= {:?}", f64::NEG_INFINITY)
                }
            },
            QueryAtom::Discrete {
                feature,
                value,
                negated,
            } => {
                if *negated {
                    f.write_str("!")?;
                }
                write_name(f, feature)?;
                f.write_str(" = ")?;
                write_value(f, value)
            }
        }
    }
}

fn write_conj(f: &mut fmt::Formatter<'_>, atoms: &[QueryAtom]) -> fmt::Result {
    for (i, a) in atoms.iter().enumerate() {
        if i > 0 {
            f.write_str(" & ")?;
        }
        write!(f, "{a}")?;
    }
    Ok(())
}

impl fmt::Display for QueryAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.disjuncts.iter().enumerate() {
            if i > 0 {
                f.write_str(" || ")?;
            }
            write_conj(f, d)?;
        }
        if !self.evidence.is_empty() {
            f.write_str(" | ")?;
            write_conj(f, &self.evidence)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Cmp {
    Lt,
    Le,
    Gt,
    Ge,
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl Parser<'_> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::QuerySyntax {
            message: message.into(),
            position: self.src[..self.pos].chars().count() + 1,
        })
    }

    fn rest(&self) -> &str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        self.pos == self.src.len()
    }

    fn eat(&mut self, s: &str) -> bool {
        self.skip_ws();
        if self.rest().starts_with(s) {
            self.pos += s.len();
            true
        } else {
            false
        }
    }

    fn cmp(&mut self) -> Option<Cmp> {
        for (s, c) in [("<=", Cmp::Le), (">=", Cmp::Ge), ("<", Cmp::Lt), (">", Cmp::Gt)] {
            if self.eat(s) {
                return Some(c);
            }
        }
        None
    }

    fn quoted(&mut self) -> Result<String> {
        let start = self.pos;
        self.pos += 1;
        let mut out = String::new();
        let mut chars = self.rest().char_indices();
        while let Some((i, c)) = chars.next() {
            match c {
                '"' => {
                    self.pos += i + 1;
                    return Ok(out);
                }
                '\\' => match chars.next() {
                    Some((_, e)) => out.push(e),
                    None => break,
                },
                c => out.push(c),
            }
        }
        self.pos = start;
        self.err("unterminated quote")
    }

    fn name(&mut self) -> Result<Option<String>> {
        self.skip_ws();
        if self.rest().starts_with('"') {
            return self.quoted().map(Some);
        }
        let mut chars = self.rest().chars();
        match chars.next() {
            Some(c) if c.is_alphabetic() || c == '_' => {}
            _ => return Ok(None),
        }
        let len: usize = self
            .rest()
            .chars()
            .take_while(|&c| is_name_char(c))
            .map(char::len_utf8)
            .sum();
        let s = self.rest()[..len].to_string();
        self.pos += len;
        Ok(Some(s))
    }

    fn number(&mut self) -> Result<Option<f64>> {
        self.skip_ws();
        let bytes = self.rest().as_bytes();
        let mut i = 0;
        if i < bytes.len() && matches!(bytes[i], b'+' | b'-') {
            i += 1;
        }
        let digits_start = i;
        while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
            i += 1;
        }
        if i == digits_start {
            return Ok(None);
        }
        if i < bytes.len() && matches!(bytes[i], b'e' | b'E') {
            let mut j = i + 1;
            if j < bytes.len() && matches!(bytes[j], b'+' | b'-') {
                j += 1;
            }
            if j < bytes.len() && bytes[j].is_ascii_digit() {
                while j < bytes.len() && bytes[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        let text = &self.rest()[..i];
        match text.parse::<f64>() {
            Ok(x) if x.is_finite() => {
                self.pos += i;
                Ok(Some(x))
            }
            _ => self.err(format!("bad number {text:?}")),
        }
    }

    fn value(&mut self) -> Result<String> {
        self.skip_ws();
        if self.rest().starts_with('"') {
            return self.quoted();
        }
        let len: usize = self
            .rest()
            .chars()
            .take_while(|&c| !c.is_whitespace() && !"&|()!\"=<>".contains(c))
            .map(char::len_utf8)
            .sum();
        if len == 0 {
            return self.err("expected a value");
        }
        let s = self.rest()[..len].to_string();
        self.pos += len;
        Ok(s)
    }

    fn atom(&mut self) -> Result<QueryAtom> {
        self.skip_ws();
        if self.rest().starts_with('(') {
            return self.err("parentheses and nested disjunctions are not supported");
        }
        if self.eat("!") {
            let feature = match self.name()? {
                Some(n) => n,
                None => return self.err("expected a feature name after '!'"),
            };
            if !self.eat("=") {
                return self.err("expected '=' after a negated feature");
            }
            let value = self.value()?;
            return Ok(QueryAtom::Discrete {
                feature,
                value,
                negated: true,
            });
        }
        if let Some(x) = self.number()? {
            let first = match self.cmp() {
                Some(c) => c,
                None => return self.err("expected a comparison after a number"),
            };
            let feature = match self.name()? {
                Some(n) => n,
                None => return self.err("expected a feature name"),
            };
            // number cmp name: the number bounds the feature from the other side
            let mut lo = None;
            let mut hi = None;
            match first {
                Cmp::Lt | Cmp::Le => lo = Some(Bound { value: x, inclusive: first == Cmp::Le }),
                Cmp::Gt | Cmp::Ge => hi = Some(Bound { value: x, inclusive: first == Cmp::Ge }),
            }
            let save = self.pos;
            if let Some(second) = self.cmp() {
                let same_direction = matches!(
                    (first, second),
                    (Cmp::Lt | Cmp::Le, Cmp::Lt | Cmp::Le) | (Cmp::Gt | Cmp::Ge, Cmp::Gt | Cmp::Ge)
                );
                if !same_direction {
                    self.pos = save;
                    return self.err("chained comparisons must point the same way");
                }
                let y = match self.number()? {
                    Some(y) => y,
                    None => return self.err("expected a number"),
                };
                let b = Bound {
                    value: y,
                    inclusive: matches!(second, Cmp::Le | Cmp::Ge),
                };
                match second {
                    Cmp::Lt | Cmp::Le => hi = Some(b),
                    Cmp::Gt | Cmp::Ge => lo = Some(b),
                }
            }
            return Ok(QueryAtom::Interval { feature, lo, hi });
        }
        let feature = match self.name()? {
            Some(n) => n,
            None => return self.err("expected a feature name or number"),
        };
        if self.eat("!=") {
            let value = self.value()?;
            return Ok(QueryAtom::Discrete {
                feature,
                value,
                negated: true,
            });
        }
        if let Some(c) = self.cmp() {
            let x = match self.number()? {
                Some(x) => x,
                None => return self.err("expected a number"),
            };
            let b = Bound {
                value: x,
                inclusive: matches!(c, Cmp::Le | Cmp::Ge),
            };
            let (lo, hi) = match c {
                Cmp::Lt | Cmp::Le => (None, Some(b)),
                Cmp::Gt | Cmp::Ge => (Some(b), None),
            };
            return Ok(QueryAtom::Interval { feature, lo, hi });
        }
        if self.eat("=") {
            let value = self.value()?;
            return Ok(QueryAtom::Discrete {
                feature,
                value,
                negated: false,
            });
        }
        self.err("expected '=', '!=' or a comparison")
    }

    fn conj(&mut self) -> Result<Vec<QueryAtom>> {
        let mut atoms = vec![self.atom()?];
        while self.eat("&") {
            atoms.push(self.atom()?);
        }
        Ok(atoms)
    }
}

pub fn parse_query(text: &str) -> Result<QueryAst> {
    let mut p = Parser { src: text, pos: 0 };
    if p.at_end() {
        return p.err("empty query");
    }
    let mut disjuncts = vec![p.conj()?];
    while p.eat("||") {
        if disjuncts.len() == 2 {
            return p.err("at most two disjuncts are supported");
        }
        disjuncts.push(p.conj()?);
    }
    let mut evidence = Vec::new();
    if p.eat("|") {
        evidence = p.conj()?;
        if p.eat("||") {
            return p.err("disjunctions are not supported in evidence");
        }
    }
    if !p.at_end() {
        return p.err("unexpected input");
    }
    Ok(QueryAst {
        disjuncts,
        evidence,
    })
}

/// A feature's combined constraint after normalization.
#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    /// Closed interval within the feature's support.
    Interval { lo: f64, hi: f64 },
    /// Admissible discrete value indices (sorted, non-empty).
    Values(Vec<usize>),
    /// Unsatisfiable.
    Empty,
}

/// Group index to constraint, one entry per constrained feature.
pub type Conjunction = BTreeMap<usize, Constraint>;

#[derive(Debug, Clone, PartialEq)]
pub struct NormalQuery {
    pub disjuncts: Vec<Conjunction>,
    pub evidence: Conjunction,
}

fn constrain(spn: &Spn, out: &mut Conjunction, atom: &QueryAtom) -> Result<()> {
    let name = atom.feature();
    let g = spn
        .group_index(name)
        .ok_or_else(|| Error::Query(format!("unknown feature {name:?}")))?;
    let info = &spn.groups()[g];
    let new = match (&info.kind, atom) {
        (GroupKind::Continuous { edges }, QueryAtom::Interval { lo, hi, .. }) => {
            let (s_lo, s_hi) = (edges[0], edges[edges.len() - 1]);
            let lo = lo.map_or(s_lo, |b| b.value.max(s_lo));
            let hi = hi.map_or(s_hi, |b| b.value.min(s_hi));
            if lo > hi {
                Constraint::Empty
            } else {
                Constraint::Interval { lo, hi }
            }
        }
        (GroupKind::Continuous { .. }, QueryAtom::Discrete { .. }) => {
            return Err(Error::Query(format!(
                "{name} is continuous; use an interval instead of '='"
            )))
        }
        (GroupKind::Discrete { values }, QueryAtom::Discrete { value, negated, .. }) => {
            let k = crate::data::value_index(values, value).ok_or_else(|| {
                Error::Query(format!("{name} has no value {value:?}"))
            })?;
            let set: Vec<usize> = (0..values.len()).filter(|&i| (i == k) != *negated).collect();
            if set.is_empty() {
                Constraint::Empty
            } else {
                Constraint::Values(set)
            }
        }
        (GroupKind::Discrete { values }, QueryAtom::Interval { lo, hi, .. }) => {
            let numeric: Option<Vec<f64>> = values.iter().map(|v| v.parse().ok()).collect();
            let numeric = numeric.ok_or_else(|| {
                Error::Query(format!("{name} has non-numeric values; compare with '='"))
            })?;
            let ok = |x: f64| {
                lo.is_none_or(|b| if b.inclusive { x >= b.value } else { x > b.value })
                    && hi.is_none_or(|b| if b.inclusive { x <= b.value } else { x < b.value })
            };
            let set: Vec<usize> = (0..values.len()).filter(|&i| ok(numeric[i])).collect();
            if set.is_empty() {
                Constraint::Empty
            } else {
                Constraint::Values(set)
            }
        }
    };
    let merged = match out.remove(&g) {
        None => new,
        Some(old) => intersect(&old, &new),
    };
    out.insert(g, merged);
    Ok(())
}

fn intersect(a: &Constraint, b: &Constraint) -> Constraint {
    match (a, b) {
        (Constraint::Interval { lo: l1, hi: h1 }, Constraint::Interval { lo: l2, hi: h2 }) => {
            let (lo, hi) = (l1.max(*l2), h1.min(*h2));
            if lo > hi {
                Constraint::Empty
            } else {
                Constraint::Interval { lo, hi }
            }
        }
        (Constraint::Values(x), Constraint::Values(y)) => {
            let set: Vec<usize> = x.iter().copied().filter(|v| y.contains(v)).collect();
            if set.is_empty() {
                Constraint::Empty
            } else {
                Constraint::Values(set)
            }
        }
        _ => Constraint::Empty,
    }
}

fn intersect_conj(a: &Conjunction, b: &Conjunction) -> Conjunction {
    let mut out = a.clone();
    for (&g, c) in b {
        let merged = match out.remove(&g) {
            None => c.clone(),
            Some(old) => intersect(&old, c),
        };
        out.insert(g, merged);
    }
    out
}

/// Resolves names, merges constraints per feature and clips intervals to the support.
pub fn normalize(ast: &QueryAst, spn: &Spn) -> Result<NormalQuery> {
    if ast.disjuncts.is_empty() || ast.disjuncts.len() > 2 {
        return Err(Error::Query("a query has one or two disjuncts".into()));
    }
    let conj = |atoms: &[QueryAtom]| -> Result<Conjunction> {
        let mut out = Conjunction::new();
        for a in atoms {
            constrain(spn, &mut out, a)?;
        }
        Ok(out)
    };
    Ok(NormalQuery {
        disjuncts: ast.disjuncts.iter().map(|d| conj(d)).collect::<Result<_>>()?,
        evidence: conj(&ast.evidence)?,
    })
}

fn to_evidence(c: &Conjunction) -> Evidence {
    let mut e = Evidence::new();
    for (&g, con) in c {
        e.set(
            g,
            match con {
                Constraint::Interval { lo, hi } => Observation::Interval { lo: *lo, hi: *hi },
                Constraint::Values(v) if v.len() == 1 => Observation::Value(v[0]),
                Constraint::Values(v) => Observation::OneOf(v.clone()),
                Constraint::Empty => Observation::Empty,
            },
        );
    }
    e
}

/// Terms whose signed sum is the numerator: `A`, or `A + B − A∧B`.
fn numerator_terms(q: &NormalQuery) -> Vec<(f64, Conjunction)> {
    let with_e = |c: &Conjunction| intersect_conj(c, &q.evidence);
    match q.disjuncts.as_slice() {
        [a] => vec![(1.0, with_e(a))],
        [a, b] => vec![
            (1.0, with_e(a)),
            (1.0, with_e(b)),
            (-1.0, with_e(&intersect_conj(a, b))),
        ],
        _ => unreachable!("normalize admits one or two disjuncts"),
    }
}

fn ratio(q: &NormalQuery, value: impl Fn(&Conjunction) -> Result<f64>) -> Result<f64> {
    let denom = value(&q.evidence)?;
    if denom <= 0.0 {
        return Err(Error::UndefinedConditional);
    }
    let mut num = 0.0;
    for (sign, c) in numerator_terms(q) {
        num += sign * value(&c)?;
    }
    Ok((num / denom).clamp(0.0, 1.0))
}

/// `Pr(query | evidence)` with one network pass per conjunction; each interval enters its
/// leaves as a single summed mass.
pub fn answer(spn: &Spn, q: &NormalQuery) -> Result<f64> {
    ratio(q, |c| spn.evaluate(&to_evidence(c)))
}

pub fn answer_str(spn: &Spn, text: &str) -> Result<f64> {
    answer(spn, &normalize(&parse_query(text)?, spn)?)
}

/// One interval cut at piece boundaries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fragment {
    pub piece: usize,
    pub lo: f64,
    pub hi: f64,
}

/// Piece-aligned fragments of `[lo, hi]`: disjoint, covering the interval.
pub fn fragments(edges: &[f64], lo: f64, hi: f64) -> Vec<Fragment> {
    let mut out = Vec::new();
    for (piece, w) in edges.windows(2).enumerate() {
        let (a, b) = (lo.max(w[0]), hi.min(w[1]));
        if a < b || (a == b && lo == hi && a >= w[0] && a <= w[1] && out.is_empty()) {
            out.push(Fragment { piece, lo: a, hi: b });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum AtomPlan {
    Continuous { group: usize, fragments: Vec<Fragment> },
    Discrete { group: usize, values: Vec<usize> },
    Empty { group: usize },
}

/// Per conjunction of the numerator (and the evidence), how each constrained feature is
/// evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryPlan {
    pub terms: Vec<(f64, Vec<AtomPlan>)>,
    pub evidence: Vec<AtomPlan>,
}

fn plan_conj(spn: &Spn, c: &Conjunction) -> Vec<AtomPlan> {
    c.iter()
        .map(|(&group, con)| match (con, &spn.groups()[group].kind) {
            (Constraint::Interval { lo, hi }, GroupKind::Continuous { edges }) => AtomPlan::Continuous {
                group,
                fragments: fragments(edges, *lo, *hi),
            },
            (Constraint::Values(v), _) => AtomPlan::Discrete {
                group,
                values: v.clone(),
            },
            _ => AtomPlan::Empty { group },
        })
        .collect()
}

pub fn plan(spn: &Spn, q: &NormalQuery) -> QueryPlan {
    QueryPlan {
        terms: numerator_terms(q)
            .iter()
            .map(|(s, c)| (*s, plan_conj(spn, c)))
            .collect(),
        evidence: plan_conj(spn, &q.evidence),
    }
}

/// Value of one planned conjunction summed over every combination of fragments, one pass
/// per combination.
fn per_pass_value(spn: &Spn, atoms: &[AtomPlan], passes: &mut usize) -> Result<f64> {
    let mut base = Evidence::new();
    let mut cont: Vec<(usize, &[Fragment])> = Vec::new();
    for a in atoms {
        match a {
            AtomPlan::Continuous { group, fragments } => cont.push((*group, fragments)),
            AtomPlan::Discrete { group, values } => base.set(*group, Observation::OneOf(values.clone())),
            AtomPlan::Empty { group } => base.set(*group, Observation::Empty),
        }
    }
    if cont.iter().any(|(_, f)| f.is_empty()) {
        return Ok(0.0);
    }
    let mut idx = vec![0usize; cont.len()];
    let mut total = 0.0;
    loop {
        let mut e = base.clone();
        for (k, (g, frs)) in cont.iter().enumerate() {
            let f = frs[idx[k]];
            e.set(*g, Observation::Interval { lo: f.lo, hi: f.hi });
        }
        total += spn.evaluate(&e)?;
        *passes += 1;
        let mut k = 0;
        while k < cont.len() {
            idx[k] += 1;
            if idx[k] < cont[k].1.len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == cont.len() {
            return Ok(total);
        }
    }
}

/// Same answer as [`answer`], running a separate pass for every piece-aligned fragment
/// combination and summing. Returns the probability and the number of passes.
pub fn answer_per_pass(spn: &Spn, q: &NormalQuery) -> Result<(f64, usize)> {
    let p = plan(spn, q);
    let mut passes = 0;
    let denom = per_pass_value(spn, &p.evidence, &mut passes)?;
    if denom <= 0.0 {
        return Err(Error::UndefinedConditional);
    }
    let mut num = 0.0;
    for (sign, atoms) in &p.terms {
        num += sign * per_pass_value(spn, atoms, &mut passes)?;
    }
    Ok(((num / denom).clamp(0.0, 1.0), passes))
}

/// Human-readable plan with each fragment's joint probability given the evidence.
pub fn explain(spn: &Spn, q: &NormalQuery) -> Result<String> {
    let p = plan(spn, q);
    let denom = spn.evaluate(&to_evidence(&q.evidence))?;
    let mut out = String::new();
    let describe = |atoms: &[AtomPlan], out: &mut String| -> Result<()> {
        let mut rest = Evidence::new();
        for a in atoms {
            match a {
                AtomPlan::Continuous { group, fragments } => {
                    let obs = match (fragments.first(), fragments.last()) {
                        (Some(a), Some(b)) => Observation::Interval { lo: a.lo, hi: b.hi },
                        _ => Observation::Empty,
                    };
                    rest.set(*group, obs);
                }
                AtomPlan::Discrete { group, values } => rest.set(*group, Observation::OneOf(values.clone())),
                AtomPlan::Empty { group } => rest.set(*group, Observation::Empty),
            }
        }
        for a in atoms {
            match a {
                AtomPlan::Continuous { group, fragments } => {
                    out.push_str(&format!("  {} (continuous)\n", spn.groups()[*group].name));
                    for f in fragments {
                        let mut e = rest.clone();
                        e.set(*group, Observation::Interval { lo: f.lo, hi: f.hi });
                        let v = if denom > 0.0 { spn.evaluate(&e)? / denom } else { f64::NAN };
                        out.push_str(&format!(
                            "    piece {} [{}, {}]  mass {:.6}\n",
                            f.piece, f.lo, f.hi, v
                        ));
                    }
                }
                AtomPlan::Discrete { group, values } => {
                    let info = &spn.groups()[*group];
                    let names: Vec<&str> = match &info.kind {
                        GroupKind::Discrete { values: vs } => values.iter().map(|&i| vs[i].as_str()).collect(),
                        GroupKind::Continuous { .. } => Vec::new(),
                    };
                    out.push_str(&format!("  {} in {{{}}}\n", info.name, names.join(", ")));
                }
                AtomPlan::Empty { group } => {
                    out.push_str(&format!("  {} unsatisfiable\n", spn.groups()[*group].name));
                }
            }
        }
        Ok(())
    };
    for (sign, atoms) in &p.terms {
        out.push_str(if *sign > 0.0 { "term +\n" } else { "term -\n" });
        describe(atoms, &mut out)?;
    }
    if !p.evidence.is_empty() {
        out.push_str("evidence\n");
        describe(&p.evidence, &mut out)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polyfit::{Piece, PiecewisePoly};
    use crate::spn::{GroupInfo, Node};

    fn iv(feature: &str, lo: Option<(f64, bool)>, hi: Option<(f64, bool)>) -> QueryAtom {
        let b = |(value, inclusive)| Bound { value, inclusive };
        QueryAtom::Interval {
            feature: feature.into(),
            lo: lo.map(b),
            hi: hi.map(b),
        }
    }

    /// weight on [34, 70] in two pieces, times a boolean `male`.
    fn weight_model() -> Spn {
        let density = PiecewisePoly::new(
            vec![
                Piece::from_power(34.0, 55.0, &[-0.051, 0.0016]),
                Piece::from_power(55.0, 70.0, &[0.1469, -0.0019]),
            ],
            1,
        )
        .unwrap();
        let total = density.total_mass();
        let density = density.reweighted(&[
            density.bin_masses()[0] / total,
            density.bin_masses()[1] / total,
        ])
        .unwrap();
        Spn::new(
            vec![
                GroupInfo {
                    name: "weight".into(),
                    kind: GroupKind::Continuous { edges: vec![34.0, 55.0, 70.0] },
                },
                GroupInfo {
                    name: "male".into(),
                    kind: GroupKind::Discrete { values: vec!["0".into(), "1".into()] },
                },
            ],
            vec![
                Node::Product { children: vec![1, 2] },
                Node::Poly { group: 0, density },
                Node::Indicator { group: 1, probs: vec![0.4, 0.6] },
            ],
        )
        .unwrap()
    }

    #[test]
    fn parses_interval() {
        let ast = parse_query("40 <= weight < 50").unwrap();
        assert_eq!(ast.disjuncts, vec![vec![iv("weight", Some((40.0, true)), Some((50.0, false)))]]);
        assert!(ast.evidence.is_empty());
    }

    #[test]
    fn parses_mixed_and_evidence() {
        let ast = parse_query("male = 1 & 40 <= weight < 50").unwrap();
        assert_eq!(ast.disjuncts[0].len(), 2);
        assert_eq!(
            ast.disjuncts[0][0],
            QueryAtom::Discrete { feature: "male".into(), value: "1".into(), negated: false }
        );
        let ast = parse_query("weight >= 30 & weight < 60 | class = 2").unwrap();
        assert_eq!(ast.disjuncts[0].len(), 2);
        assert_eq!(ast.evidence.len(), 1);
    }

    #[test]
    fn syntax_errors_have_positions() {
        match parse_query("weight >= ") {
            Err(Error::QuerySyntax { position, .. }) => assert_eq!(position, 11),
            other => panic!("{other:?}"),
        }
        assert!(parse_query("(a = 1 || b = 2) & c = 3").is_err());
        assert!(parse_query("a = 1 || b = 2 || c = 3").is_err());
        assert!(parse_query("a = 1 | b = 2 || c = 3").is_err());
        assert!(parse_query("1 < x > 3").is_err());
        assert!(parse_query("").is_err());
    }

    #[test]
    fn normalization_intersects() {
        let s = weight_model();
        let q = normalize(&parse_query("30 <= weight & 50 <= weight < 60").unwrap(), &s).unwrap();
        assert_eq!(q.disjuncts[0][&0], Constraint::Interval { lo: 50.0, hi: 60.0 });
        let q = normalize(&parse_query("weight < 10 & weight > 20").unwrap(), &s).unwrap();
        assert_eq!(q.disjuncts[0][&0], Constraint::Empty);
        assert_eq!(answer(&s, &q).unwrap(), 0.0);
        let q = normalize(&parse_query("male = 0 & male = 1").unwrap(), &s).unwrap();
        assert_eq!(q.disjuncts[0][&1], Constraint::Empty);
    }

    #[test]
    fn unknown_feature_and_value() {
        let s = weight_model();
        assert!(answer_str(&s, "height > 3").is_err());
        assert!(answer_str(&s, "male = 7").is_err());
        assert!(answer_str(&s, "weight = 40").is_err());
    }

    #[test]
    fn full_support_is_one() {
        let s = weight_model();
        assert!((answer_str(&s, "weight >= 34").unwrap() - 1.0).abs() < 1e-12);
        assert!((answer_str(&s, "weight >= 0").unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_piece_query_sums_piece_integrals() {
        let s = weight_model();
        let density = match &s.nodes()[1] {
            Node::Poly { density, .. } => density.clone(),
            _ => unreachable!(),
        };
        let p = &density.pieces();
        let expect = crate::polyfit::integrate_piece(&p[0].power_coeffs(), 40.0, 55.0)
            + crate::polyfit::integrate_piece(&p[1].power_coeffs(), 55.0, 60.0);
        let got = answer_str(&s, "40 <= weight <= 60").unwrap();
        assert!((got - expect).abs() < 1e-12);
        let q = normalize(&parse_query("40 <= weight <= 60").unwrap(), &s).unwrap();
        let (pp, passes) = answer_per_pass(&s, &q).unwrap();
        assert!((pp - got).abs() < 1e-12);
        assert_eq!(passes, 3);
    }

    #[test]
    fn conditional_and_disjunction() {
        let s = weight_model();
        let w = answer_str(&s, "40 <= weight <= 60").unwrap();
        // independent factors: conditioning on male leaves weight unchanged
        let c = answer_str(&s, "40 <= weight <= 60 | male = 1").unwrap();
        assert!((c - w).abs() < 1e-12);
        let m = answer_str(&s, "male = 1").unwrap();
        assert!((m - 0.6).abs() < 1e-12);
        let or = answer_str(&s, "male = 1 || 40 <= weight <= 60").unwrap();
        assert!((or - (m + w - m * w)).abs() < 1e-12);
        let neg = answer_str(&s, "!male = 1").unwrap();
        assert!((neg - 0.4).abs() < 1e-12);
        let ne = answer_str(&s, "male != 1").unwrap();
        assert_eq!(neg, ne);
    }

    #[test]
    fn zero_evidence_is_an_error() {
        let s = weight_model();
        assert!(matches!(
            answer_str(&s, "male = 1 | weight > 80"),
            Err(Error::UndefinedConditional)
        ));
    }

    #[test]
    fn display_round_trip() {
        for text in [
            "40 <= weight < 50",
            "weight > 3 & !male = 1",
            "a = \"x y\" || b <= -2.5e-3 | c = Iris-setosa",
            "\"odd name\" >= 1",
        ] {
            let ast = parse_query(text).unwrap();
            let again = parse_query(&ast.to_string()).unwrap();
            assert_eq!(ast, again, "{text}");
        }
    }

    #[test]
    fn fragments_cover_interval() {
        let f = fragments(&[0.0, 1.0, 2.0, 3.0], 0.5, 2.5);
        assert_eq!(
            f,
            vec![
                Fragment { piece: 0, lo: 0.5, hi: 1.0 },
                Fragment { piece: 1, lo: 1.0, hi: 2.0 },
                Fragment { piece: 2, lo: 2.0, hi: 2.5 },
            ]
        );
        assert_eq!(fragments(&[0.0, 1.0, 2.0], 1.5, 1.5).len(), 1);
    }

    #[test]
    fn explain_lists_fragments() {
        let s = weight_model();
        let q = normalize(&parse_query("40 <= weight <= 60 & male = 1").unwrap(), &s).unwrap();
        let text = explain(&s, &q).unwrap();
        assert!(text.contains("piece 0 [40, 55]"), "{text}");
        assert!(text.contains("piece 1 [55, 60]"), "{text}");
        assert!(text.contains("male in {1}"), "{text}");
    }
}
