//! Exact weighted model counting and weighted model integration by enumeration.
//!
//! Interval constraints `var ∈ [lo, hi]` are abstracted into propositional atoms. For
//! integration, each variable's line is cut at every atom endpoint into cells; inside a
//! cell every atom on that variable is either true or false, so a model's region is a
//! union of cells and the weight polynomials integrate in closed form. Meant for small
//! theories (at most [`MAX_ATOMS`] atoms) and as a test oracle.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::error::{Error, Result};
use crate::polyfit::poly::{integrate_piece, mul_poly};

pub const MAX_ATOMS: usize = 24;

/// Formula over named propositions and inline interval constraints.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(bool),
    Prop(String),
    Interval { var: String, lo: f64, hi: f64 },
    Not(Box<Expr>),
    And(Vec<Expr>),
    Or(Vec<Expr>),
}

impl Expr {
    pub fn not(e: Expr) -> Expr {
        Expr::Not(Box::new(e))
    }

    pub fn prop(name: &str) -> Expr {
        Expr::Prop(name.to_string())
    }

    pub fn interval(var: &str, lo: f64, hi: f64) -> Expr {
        Expr::Interval {
            var: var.to_string(),
            lo,
            hi,
        }
    }

    fn prop_names(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Prop(n) => {
                out.insert(n.clone());
            }
            Expr::Not(e) => e.prop_names(out),
            Expr::And(es) | Expr::Or(es) => es.iter().for_each(|e| e.prop_names(out)),
            Expr::Const(_) | Expr::Interval { .. } => {}
        }
    }
}

/// Propositional formula over atom indices.
#[derive(Debug, Clone, PartialEq)]
pub enum Formula {
    Const(bool),
    Atom(usize),
    Not(Box<Formula>),
    And(Vec<Formula>),
    Or(Vec<Formula>),
}

impl Formula {
    pub fn eval(&self, model: u32) -> bool {
        match self {
            Formula::Const(b) => *b,
            Formula::Atom(i) => model >> i & 1 == 1,
            Formula::Not(f) => !f.eval(model),
            Formula::And(fs) => fs.iter().all(|f| f.eval(model)),
            Formula::Or(fs) => fs.iter().any(|f| f.eval(model)),
        }
    }

    fn eval_with(&self, truth: &[bool]) -> bool {
        match self {
            Formula::Const(b) => *b,
            Formula::Atom(i) => truth[*i],
            Formula::Not(f) => !f.eval_with(truth),
            Formula::And(fs) => fs.iter().all(|f| f.eval_with(truth)),
            Formula::Or(fs) => fs.iter().any(|f| f.eval_with(truth)),
        }
    }

    pub fn and(a: Formula, b: Formula) -> Formula {
        Formula::And(vec![a, b])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AtomKind {
    Prop,
    Interval { var: String, lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub name: String,
    pub kind: AtomKind,
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            AtomKind::Prop => write!(f, "{}", self.name),
            AtomKind::Interval { var, lo, hi } => write!(f, "{} := {var} in [{lo}, {hi}]", self.name),
        }
    }
}

/// Literal weight: a constant, or a univariate polynomial in the atom's variable.
#[derive(Debug, Clone, PartialEq)]
pub enum Weight {
    Const(f64),
    Poly(Vec<f64>),
}

impl Weight {
    fn coeffs(&self) -> Vec<f64> {
        match self {
            Weight::Const(c) => vec![*c],
            Weight::Poly(c) => c.clone(),
        }
    }
}

/// Adds the atoms of `expr` to `atoms` and returns the abstracted formula. A proposition
/// name refers to an existing atom of that name when there is one; an interval constraint
/// reuses an existing atom over the same variable and bounds, and otherwise gets a fresh
/// name that clashes with no proposition in `atoms` or `expr`.
pub fn abstract_into(expr: &Expr, atoms: &mut Vec<Atom>) -> Formula {
    let mut taken: BTreeSet<String> = atoms.iter().map(|a| a.name.clone()).collect();
    expr.prop_names(&mut taken);
    abstract_rec(expr, atoms, &mut taken)
}

fn abstract_rec(expr: &Expr, atoms: &mut Vec<Atom>, taken: &mut BTreeSet<String>) -> Formula {
    match expr {
        Expr::Const(b) => Formula::Const(*b),
        Expr::Prop(name) => match atoms.iter().position(|a| &a.name == name) {
            Some(i) => Formula::Atom(i),
            None => {
                atoms.push(Atom {
                    name: name.clone(),
                    kind: AtomKind::Prop,
                });
                Formula::Atom(atoms.len() - 1)
            }
        },
        Expr::Interval { var, lo, hi } => {
            let existing = atoms.iter().position(|a| match &a.kind {
                AtomKind::Interval { var: v, lo: l, hi: h } => {
                    v == var && l.to_bits() == lo.to_bits() && h.to_bits() == hi.to_bits()
                }
                AtomKind::Prop => false,
            });
            match existing {
                Some(i) => Formula::Atom(i),
                None => {
                    let name = std::iter::once("p".to_string())
                        .chain((1..).map(|i| format!("p{i}")))
                        .find(|n| !taken.contains(n))
                        .expect("unbounded name supply");
                    taken.insert(name.clone());
                    atoms.push(Atom {
                        name,
                        kind: AtomKind::Interval {
                            var: var.clone(),
                            lo: *lo,
                            hi: *hi,
                        },
                    });
                    Formula::Atom(atoms.len() - 1)
                }
            }
        }
        Expr::Not(e) => Formula::Not(Box::new(abstract_rec(e, atoms, taken))),
        Expr::And(es) => Formula::And(es.iter().map(|e| abstract_rec(e, atoms, taken)).collect()),
        Expr::Or(es) => Formula::Or(es.iter().map(|e| abstract_rec(e, atoms, taken)).collect()),
    }
}

/// Abstraction of a stand-alone expression.
pub fn propositional_abstraction(expr: &Expr) -> (Formula, Vec<Atom>) {
    let mut atoms = Vec::new();
    let f = abstract_into(expr, &mut atoms);
    (f, atoms)
}

/// Σ over models of `f` of the product of literal weights `(positive, negative)`.
pub fn wmc(f: &Formula, weights: &[(f64, f64)]) -> Result<f64> {
    let n = weights.len();
    if n > MAX_ATOMS {
        return Err(Error::Wmi(format!(
            "{n} atoms exceed the enumeration limit of {MAX_ATOMS}; use the network instead"
        )));
    }
    let mut total = 0.0;
    for model in 0u32..(1u32 << n) {
        if f.eval(model) {
            total += weights
                .iter()
                .enumerate()
                .map(|(i, &(p, q))| if model >> i & 1 == 1 { p } else { q })
                .product::<f64>();
        }
    }
    Ok(total)
}

/// Atoms, a formula over them, literal weights and optional variable bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct PropTheory {
    pub atoms: Vec<Atom>,
    pub formula: Formula,
    positive: Vec<Option<Weight>>,
    negative: Vec<Option<Weight>>,
    pub bounds: BTreeMap<String, (f64, f64)>,
}

impl PropTheory {
    pub fn new(expr: &Expr) -> PropTheory {
        Self::with_atoms(Vec::new(), expr)
    }

    /// Theory over pre-declared atoms plus whatever `expr` introduces.
    pub fn with_atoms(mut atoms: Vec<Atom>, expr: &Expr) -> PropTheory {
        let formula = abstract_into(expr, &mut atoms);
        let n = atoms.len();
        PropTheory {
            atoms,
            formula,
            positive: vec![None; n],
            negative: vec![None; n],
            bounds: BTreeMap::new(),
        }
    }

    pub fn atom_index(&self, name: &str) -> Result<usize> {
        self.atoms
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| Error::Wmi(format!("unknown atom {name}")))
    }

    pub fn set_weight(&mut self, name: &str, w: Weight) -> Result<&mut Self> {
        let i = self.atom_index(name)?;
        self.positive[i] = Some(w);
        Ok(self)
    }

    pub fn set_negation_weight(&mut self, name: &str, w: Weight) -> Result<&mut Self> {
        let i = self.atom_index(name)?;
        self.negative[i] = Some(w);
        Ok(self)
    }

    pub fn set_bounds(&mut self, var: &str, lo: f64, hi: f64) -> &mut Self {
        self.bounds.insert(var.to_string(), (lo, hi));
        self
    }

    /// Effective `(positive, negative)` weights. Unweighted propositions count 1 both ways;
    /// a constant weight `w` on a proposition implies `1 − w` for its negation; interval
    /// atoms default to 1 and negate to 0.
    pub fn literal_weights(&self, i: usize) -> (Weight, Weight) {
        let prop = matches!(self.atoms[i].kind, AtomKind::Prop);
        let pos = self.positive[i].clone().unwrap_or(Weight::Const(1.0));
        let neg = match (&self.negative[i], prop, &self.positive[i]) {
            (Some(w), _, _) => w.clone(),
            (None, true, Some(Weight::Const(w))) => Weight::Const(1.0 - w),
            (None, true, _) => Weight::Const(1.0),
            (None, false, _) => Weight::Const(0.0),
        };
        (pos, neg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.atoms.len() > MAX_ATOMS {
            return Err(Error::Wmi(format!(
                "{} atoms exceed the enumeration limit of {MAX_ATOMS}; use the network instead",
                self.atoms.len()
            )));
        }
        for (i, a) in self.atoms.iter().enumerate() {
            match &a.kind {
                AtomKind::Interval { lo, hi, .. } => {
                    if !(lo <= hi) {
                        return Err(Error::Wmi(format!("atom {}: empty interval", a.name)));
                    }
                }
                AtomKind::Prop => {
                    let (p, q) = self.literal_weights(i);
                    if matches!(p, Weight::Poly(_)) || matches!(q, Weight::Poly(_)) {
                        return Err(Error::Wmi(format!(
                            "proposition {} cannot carry a polynomial weight",
                            a.name
                        )));
                    }
                }
            }
        }
        for (v, (lo, hi)) in &self.bounds {
            if !(lo <= hi) {
                return Err(Error::Wmi(format!("bounds of {v} are empty")));
            }
        }
        Ok(())
    }

    fn variables(&self) -> Vec<VarCells> {
        let mut by_var: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, a) in self.atoms.iter().enumerate() {
            if let AtomKind::Interval { var, .. } = &a.kind {
                by_var.entry(var).or_default().push(i);
            }
        }
        by_var
            .into_iter()
            .map(|(var, atoms)| VarCells::new(self, var, atoms))
            .collect()
    }

    fn weight_poly(&self, i: usize, truth: bool) -> Vec<f64> {
        let (p, q) = self.literal_weights(i);
        if truth { p } else { q }.coeffs()
    }

    fn const_weight(&self, i: usize, truth: bool) -> f64 {
        self.weight_poly(i, truth)[0]
    }
}

/// One variable's line cut at every endpoint of its atoms and bounds.
struct VarCells {
    name: String,
    atoms: Vec<usize>,
    /// `(lo, hi)` per cell; infinite ends for the two outer cells.
    cells: Vec<(f64, f64)>,
    /// `inside[c][k]`: cell `c` lies in atom `atoms[k]`.
    inside: Vec<Vec<bool>>,
}

impl VarCells {
    fn new(t: &PropTheory, var: &str, atoms: Vec<usize>) -> VarCells {
        let interval = |i: usize| match &t.atoms[i].kind {
            AtomKind::Interval { lo, hi, .. } => (*lo, *hi),
            AtomKind::Prop => unreachable!("only interval atoms are grouped by variable"),
        };
        let mut points: Vec<f64> = atoms.iter().flat_map(|&i| {
            let (lo, hi) = interval(i);
            [lo, hi]
        }).collect();
        let bounds = t.bounds.get(var).copied();
        if let Some((lo, hi)) = bounds {
            points.extend([lo, hi]);
        }
        points.sort_by(f64::total_cmp);
        points.dedup();
        let mut cells = Vec::with_capacity(points.len() + 1);
        cells.push((f64::NEG_INFINITY, points[0]));
        cells.extend(points.windows(2).map(|w| (w[0], w[1])));
        cells.push((points[points.len() - 1], f64::INFINITY));
        if let Some((lo, hi)) = bounds {
            cells.retain(|&(a, b)| a >= lo && b <= hi);
        }
        let inside = cells
            .iter()
            .map(|&(a, b)| {
                atoms
                    .iter()
                    .map(|&i| {
                        let (lo, hi) = interval(i);
                        lo < hi && lo <= a && b <= hi
                    })
                    .collect()
            })
            .collect();
        VarCells {
            name: var.to_string(),
            atoms,
            cells,
            inside,
        }
    }

    /// `∫` over cell `c` of the product of the given literal weights.
    fn integrate(&self, t: &PropTheory, c: usize, truth: impl Fn(usize) -> bool) -> Result<f64> {
        let mut poly = vec![1.0];
        for &i in &self.atoms {
            poly = mul_poly(&poly, &t.weight_poly(i, truth(i)));
        }
        if poly.iter().all(|&x| x == 0.0) {
            return Ok(0.0);
        }
        let (a, b) = self.cells[c];
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::Wmi(format!(
                "variable {} has non-zero weight on an unbounded region; declare bounds for it",
                self.name
            )));
        }
        Ok(integrate_piece(&poly, a, b))
    }
}

/// Σ over models of the formula of the integral of the literal-weight product over the
/// model's region.
pub fn wmi(t: &PropTheory) -> Result<f64> {
    t.validate()?;
    let n = t.atoms.len();
    let vars = t.variables();
    let props: Vec<usize> = (0..n)
        .filter(|&i| matches!(t.atoms[i].kind, AtomKind::Prop))
        .collect();
    let mut total = 0.0;
    'models: for model in 0u32..(1u32 << n) {
        if !t.formula.eval(model) {
            continue;
        }
        let truth = |i: usize| model >> i & 1 == 1;
        let mut w: f64 = props.iter().map(|&i| t.const_weight(i, truth(i))).product();
        if w == 0.0 {
            continue;
        }
        for v in &vars {
            let mut mass = 0.0;
            for c in 0..v.cells.len() {
                let consistent = v
                    .atoms
                    .iter()
                    .zip(&v.inside[c])
                    .all(|(&i, &inside)| inside == truth(i));
                if consistent {
                    mass += v.integrate(t, c, truth)?;
                }
            }
            w *= mass;
            if w == 0.0 {
                continue 'models;
            }
        }
        total += w;
    }
    Ok(total)
}

/// Same quantity as [`wmi`], summed the other way round: over one cell per variable and
/// an assignment of the pure propositions, with interval atoms read off the cells.
pub fn wmi_by_fragments(t: &PropTheory) -> Result<f64> {
    t.validate()?;
    let n = t.atoms.len();
    let vars = t.variables();
    let props: Vec<usize> = (0..n)
        .filter(|&i| matches!(t.atoms[i].kind, AtomKind::Prop))
        .collect();
    // per variable and cell: integral of the weight product implied by the cell
    let mut cell_mass: Vec<Vec<f64>> = Vec::with_capacity(vars.len());
    for v in &vars {
        let mut masses = Vec::with_capacity(v.cells.len());
        for c in 0..v.cells.len() {
            let inside = &v.inside[c];
            let truth = |i: usize| inside[v.atoms.iter().position(|&a| a == i).unwrap()];
            masses.push(v.integrate(t, c, truth)?);
        }
        cell_mass.push(masses);
    }

    let mut total = 0.0;
    let mut choice = vec![0usize; vars.len()];
    let mut truth = vec![false; n];
    loop {
        let mut base = 1.0;
        for (k, v) in vars.iter().enumerate() {
            base *= cell_mass[k][choice[k]];
            for (j, &i) in v.atoms.iter().enumerate() {
                truth[i] = v.inside[choice[k]][j];
            }
        }
        if base != 0.0 {
            for assignment in 0u32..(1u32 << props.len()) {
                let mut w = base;
                for (j, &i) in props.iter().enumerate() {
                    truth[i] = assignment >> j & 1 == 1;
                    w *= t.const_weight(i, truth[i]);
                }
                if w != 0.0 && t.formula.eval_with(&truth) {
                    total += w;
                }
            }
        }
        // next cell combination
        let mut k = 0;
        while k < vars.len() {
            choice[k] += 1;
            if choice[k] < vars[k].cells.len() {
                break;
            }
            choice[k] = 0;
            k += 1;
        }
        if k == vars.len() {
            break;
        }
    }
    Ok(total)
}

/// `WMI(Δ ∧ q ∧ e) / WMI(Δ ∧ e)`. Atoms first introduced by `q` or `e` weigh 1 on both
/// polarities; atoms already in the theory keep their weights.
pub fn conditional_wmi(t: &PropTheory, q: &Expr, e: &Expr) -> Result<f64> {
    let mut atoms = t.atoms.clone();
    let fe = abstract_into(e, &mut atoms);
    let denom_atoms = atoms.len();
    let fq = abstract_into(q, &mut atoms);
    let extend = |count: usize, formula: Formula| {
        let mut positive = t.positive.clone();
        let mut negative = t.negative.clone();
        positive.resize(count, Some(Weight::Const(1.0)));
        negative.resize(count, Some(Weight::Const(1.0)));
        PropTheory {
            atoms: atoms[..count].to_vec(),
            formula,
            positive,
            negative,
            bounds: t.bounds.clone(),
        }
    };
    let denom = wmi(&extend(denom_atoms, Formula::and(t.formula.clone(), fe.clone())))?;
    if denom == 0.0 {
        return Err(Error::UndefinedConditional);
    }
    let numer = wmi(&extend(
        atoms.len(),
        Formula::And(vec![t.formula.clone(), fq, fe]),
    ))?;
    Ok(numer / denom)
}

/// A theory read from text, with an optional query and evidence.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryFile {
    pub theory: PropTheory,
    pub query: Option<Expr>,
    pub evidence: Option<Expr>,
}

/// Reads the line format:
///
/// ```text
/// # comment
/// atom q
/// atom p x 0 10
/// bounds x 0 10
/// formula p | q
/// weight p poly 0 0 1
/// weight q 0.3
/// weight !q 0
/// query x in [5, 7]
/// evidence true
/// ```
///
/// Formulas use `!`, `&`, `|`, parentheses, `true`, `false`, atom names and inline
/// constraints `var in [lo, hi]`.
pub fn parse_theory(text: &str) -> Result<TheoryFile> {
    let mut atoms = Vec::new();
    let mut formula = None;
    let mut query = None;
    let mut evidence = None;
    let mut weights = Vec::new();
    let mut bounds = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |m: &str| Error::Wmi(format!("line {}: {m}", lineno + 1));
        let (head, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let rest = rest.trim();
        let fields: Vec<&str> = rest.split_whitespace().collect();
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(&format!("bad number {s:?}")));
        match head {
            "atom" => match fields.as_slice() {
                [name] => atoms.push(Atom {
                    name: name.to_string(),
                    kind: AtomKind::Prop,
                }),
                [name, var, lo, hi] => atoms.push(Atom {
                    name: name.to_string(),
                    kind: AtomKind::Interval {
                        var: var.to_string(),
                        lo: num(lo)?,
                        hi: num(hi)?,
                    },
                }),
                _ => return Err(err("expected `atom NAME` or `atom NAME VAR LO HI`")),
            },
            "bounds" => match fields.as_slice() {
                [var, lo, hi] => bounds.push((var.to_string(), num(lo)?, num(hi)?)),
                _ => return Err(err("expected `bounds VAR LO HI`")),
            },
            "formula" => formula = Some(parse_expr(rest).map_err(|m| err(&m))?),
            "query" => query = Some(parse_expr(rest).map_err(|m| err(&m))?),
            "evidence" => evidence = Some(parse_expr(rest).map_err(|m| err(&m))?),
            "weight" => {
                let (lit, spec) = fields.split_first().ok_or_else(|| err("missing literal"))?;
                let w = match spec {
                    [c] => Weight::Const(num(c)?),
                    ["poly", cs @ ..] if !cs.is_empty() => {
                        Weight::Poly(cs.iter().map(|c| num(c)).collect::<Result<_>>()?)
                    }
                    _ => return Err(err("expected `weight LIT VALUE` or `weight LIT poly C0 C1 ...`")),
                };
                weights.push((lit.to_string(), w, lineno + 1));
            }
            other => return Err(err(&format!("unknown directive {other:?}"))),
        }
    }
    let formula = formula.ok_or_else(|| Error::Wmi("no formula line".into()))?;
    let mut theory = PropTheory::with_atoms(atoms, &formula);
    for (var, lo, hi) in bounds {
        theory.set_bounds(&var, lo, hi);
    }
    for (lit, w, lineno) in weights {
        let res = match lit.strip_prefix('!') {
            Some(name) => theory.set_negation_weight(name, w).map(|_| ()),
            None => theory.set_weight(&lit, w).map(|_| ()),
        };
        res.map_err(|e| Error::Wmi(format!("line {lineno}: {e}")))?;
    }
    theory.validate()?;
    Ok(TheoryFile {
        theory,
        query,
        evidence,
    })
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Sym(char),
}

fn tokenize(s: &str) -> std::result::Result<Vec<Tok>, String> {
    let mut out = Vec::new();
    let chars: Vec<char> = s.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if "!&|()[],".contains(c) {
            out.push(Tok::Sym(c));
            i += 1;
        } else if c.is_ascii_digit() || c == '.' || c == '-' || c == '+' {
            let start = i;
            i += 1;
            while i < chars.len() {
                let d = chars[i];
                let exponent_sign = matches!(d, '+' | '-') && matches!(chars[i - 1], 'e' | 'E');
                if d.is_ascii_digit() || matches!(d, '.' | 'e' | 'E') || exponent_sign {
                    i += 1;
                } else {
                    break;
                }
            }
            let text: String = chars[start..i].iter().collect();
            out.push(Tok::Num(text.parse().map_err(|_| format!("bad number {text:?}"))?));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else {
            return Err(format!("unexpected character {c:?}"));
        }
    }
    Ok(out)
}

struct ExprParser {
    toks: Vec<Tok>,
    pos: usize,
}

impl ExprParser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Sym(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> std::result::Result<(), String> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(format!("expected {c:?} at token {}", self.pos + 1))
        }
    }

    fn or(&mut self) -> std::result::Result<Expr, String> {
        let mut parts = vec![self.and()?];
        while self.eat('|') {
            parts.push(self.and()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { Expr::Or(parts) })
    }

    fn and(&mut self) -> std::result::Result<Expr, String> {
        let mut parts = vec![self.unary()?];
        while self.eat('&') {
            parts.push(self.unary()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { Expr::And(parts) })
    }

    fn number(&mut self) -> std::result::Result<f64, String> {
        match self.toks.get(self.pos) {
            Some(Tok::Num(x)) => {
                self.pos += 1;
                Ok(*x)
            }
            _ => Err(format!("expected a number at token {}", self.pos + 1)),
        }
    }

    fn unary(&mut self) -> std::result::Result<Expr, String> {
        if self.eat('!') {
            return Ok(Expr::not(self.unary()?));
        }
        if self.eat('(') {
            let e = self.or()?;
            self.expect(')')?;
            return Ok(e);
        }
        match self.toks.get(self.pos).cloned() {
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                match name.as_str() {
                    "true" => return Ok(Expr::Const(true)),
                    "false" => return Ok(Expr::Const(false)),
                    _ => {}
                }
                if self.peek() == Some(&Tok::Ident("in".into())) {
                    self.pos += 1;
                    self.expect('[')?;
                    let lo = self.number()?;
                    self.expect(',')?;
                    let hi = self.number()?;
                    self.expect(']')?;
                    return Ok(Expr::Interval { var: name, lo, hi });
                }
                Ok(Expr::Prop(name))
            }
            _ => Err(format!("unexpected token at {}", self.pos + 1)),
        }
    }
}

pub fn parse_expr(s: &str) -> std::result::Result<Expr, String> {
    let toks = tokenize(s)?;
    let mut p = ExprParser { toks, pos: 0 };
    let e = p.or()?;
    if p.pos != p.toks.len() {
        return Err(format!("trailing input at token {}", p.pos + 1));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> PropTheory {
        // (0 ≤ x ≤ 10) ∨ q with w(p) = x², w(q) = 0.3, negations 0
        let expr = Expr::Or(vec![Expr::interval("x", 0.0, 10.0), Expr::prop("q")]);
        let mut t = PropTheory::new(&expr);
        t.set_weight("p", Weight::Poly(vec![0.0, 0.0, 1.0])).unwrap();
        t.set_weight("q", Weight::Const(0.3)).unwrap();
        t.set_negation_weight("q", Weight::Const(0.0)).unwrap();
        t
    }

    #[test]
    fn abstraction_names_a_fresh_atom() {
        let expr = Expr::Or(vec![Expr::interval("x", 0.0, 10.0), Expr::prop("q")]);
        let (f, atoms) = propositional_abstraction(&expr);
        assert_eq!(f, Formula::Or(vec![Formula::Atom(0), Formula::Atom(1)]));
        assert_eq!(atoms[0].name, "p");
        assert_eq!(
            atoms[0].kind,
            AtomKind::Interval { var: "x".into(), lo: 0.0, hi: 10.0 }
        );
        assert_eq!(atoms[1].name, "q");
    }

    #[test]
    fn fresh_name_avoids_existing_props() {
        let expr = Expr::And(vec![Expr::interval("x", 0.0, 1.0), Expr::prop("p")]);
        let (_, atoms) = propositional_abstraction(&expr);
        assert_eq!(atoms[0].name, "p1");
        assert_eq!(atoms[1].name, "p");
    }

    #[test]
    fn duplicate_constraints_share_an_atom() {
        let c = Expr::interval("x", 1.0, 2.0);
        let (f, atoms) = propositional_abstraction(&Expr::And(vec![c.clone(), Expr::not(c)]));
        assert_eq!(atoms.len(), 1);
        assert_eq!(
            f,
            Formula::And(vec![Formula::Atom(0), Formula::Not(Box::new(Formula::Atom(0)))])
        );
    }

    #[test]
    fn wmc_of_disjunction() {
        let f = Formula::Or(vec![Formula::Atom(0), Formula::Atom(1)]);
        let v = wmc(&f, &[(0.6, 0.4), (0.3, 0.7)]).unwrap();
        assert!((v - 0.72).abs() < 1e-15);
    }

    #[test]
    fn wmc_edge_cases() {
        let unsat = Formula::And(vec![Formula::Atom(0), Formula::Not(Box::new(Formula::Atom(0)))]);
        assert_eq!(wmc(&unsat, &[(0.5, 0.5)]).unwrap(), 0.0);
        assert_eq!(wmc(&Formula::Const(true), &[(1.0, 1.0); 5]).unwrap(), 32.0);
        assert!(wmc(&Formula::Const(true), &[(1.0, 1.0); 25]).is_err());
    }

    #[test]
    fn worked_wmi() {
        let t = example();
        assert!((wmi(&t).unwrap() - 100.0).abs() < 1e-9);
        assert!((wmi_by_fragments(&t).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn conditional_is_normalized() {
        let t = example();
        let p = conditional_wmi(&t, &Expr::interval("x", 5.0, 7.0), &Expr::Const(true)).unwrap();
        assert!((p - 0.218).abs() < 1e-12);
        let one = conditional_wmi(&t, &Expr::Const(true), &Expr::Const(true)).unwrap();
        assert!((one - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unbounded_nonzero_weight_is_an_error() {
        let mut t = PropTheory::new(&Expr::not(Expr::interval("x", 0.0, 1.0)));
        t.set_negation_weight("p", Weight::Const(1.0)).unwrap();
        assert!(wmi(&t).is_err());
        t.set_bounds("x", -1.0, 3.0);
        assert!((wmi(&t).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn pure_theory_reduces_to_wmc() {
        let expr = Expr::And(vec![
            Expr::Or(vec![Expr::prop("a"), Expr::prop("b")]),
            Expr::not(Expr::prop("c")),
        ]);
        let mut t = PropTheory::new(&expr);
        t.set_weight("a", Weight::Const(0.2)).unwrap();
        t.set_weight("b", Weight::Const(0.7)).unwrap();
        t.set_weight("c", Weight::Const(0.4)).unwrap();
        let ws: Vec<(f64, f64)> = (0..3)
            .map(|i| {
                let (p, q) = t.literal_weights(i);
                match (p, q) {
                    (Weight::Const(p), Weight::Const(q)) => (p, q),
                    _ => unreachable!(),
                }
            })
            .collect();
        assert!((wmi(&t).unwrap() - wmc(&t.formula, &ws).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn text_format_round() {
        let text = "\
# worked example
atom p x 0 10
atom q
formula p | q
weight p poly 0 0 1
weight q 0.3
weight !q 0
query x in [5, 7]
";
        let tf = parse_theory(text).unwrap();
        assert!((wmi(&tf.theory).unwrap() - 100.0).abs() < 1e-9);
        let q = tf.query.unwrap();
        let p = conditional_wmi(&tf.theory, &q, &Expr::Const(true)).unwrap();
        assert!((p - 0.218).abs() < 1e-12);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse_theory("atom p\nformula p &\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(parse_theory("atom p\nweight q 1\nformula p\n").is_err());
        assert!(parse_expr("x in [1, 2").is_err());
    }

    #[test]
    fn expression_parser() {
        let e = parse_expr("!(a & b) | x in [-1.5, 2e1]").unwrap();
        assert_eq!(
            e,
            Expr::Or(vec![
                Expr::not(Expr::And(vec![Expr::prop("a"), Expr::prop("b")])),
                Expr::interval("x", -1.5, 20.0),
            ])
        );
    }
}
