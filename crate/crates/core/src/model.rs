//! Versioned, line-oriented text format for trained models.
//!
//! Every float is written with 17 significant digits so a load/save cycle reproduces the
//! file byte for byte. Strings are always double-quoted with `\"` and `\\` escapes. The
//! file ends with an `end` line; anything cut short of it is rejected.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::binning::{BinningSpec, ColumnBinning, ColumnLayout};
use crate::data::{Dataset, Feature, FeatureKind, FeatureSchema, Imputer, SplitSpec};
use crate::error::{Error, Result};
use crate::pipeline::Model;
use crate::polyfit::{Piece, PiecewisePoly};
use crate::spn::{GroupInfo, GroupKind, Node, Spn};
use crate::structure::LearnParams;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "wmispn-model";

/// A model plus the settings and data identity it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: Model,
    pub params: LearnParams,
    pub split: SplitSpec,
    /// Fixed bin count used for training, `None` when chosen by BIC.
    pub bins: Option<usize>,
    /// Hex SHA-256 of the training file contents as parsed.
    pub digest: String,
}

/// Digest of a dataset's header and cells, independent of the on-disk delimiter.
pub fn dataset_digest(d: &Dataset) -> String {
    let mut h = Sha256::new();
    for name in d.column_names() {
        h.update(name.as_bytes());
        h.update([0x1f]);
    }
    h.update([0x1e]);
    for row in d.rows() {
        for cell in row {
            h.update(cell.as_bytes());
            h.update([0x1f]);
        }
        h.update([0x1e]);
    }
    hex::encode(h.finalize())
}

fn q(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

fn fl(x: f64) -> String {
    format!("{x:.16e}")
}

fn floats(xs: &[f64]) -> String {
    xs.iter().map(|&x| fl(x)).collect::<Vec<_>>().join(" ")
}

fn strings(xs: &[String]) -> String {
    xs.iter().map(|s| q(s)).collect::<Vec<_>>().join(" ")
}

fn write_density(out: &mut String, d: &PiecewisePoly) {
    let _ = write!(out, "{} {}", d.order(), d.n_pieces());
    for p in d.pieces() {
        let _ = write!(out, " {} {} {}", fl(p.lo), fl(p.hi), floats(&p.coeffs));
    }
}

pub fn to_text(m: &ModelFile) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC} {FORMAT_VERSION}");
    let _ = writeln!(out, "digest {}", m.digest);
    let s = &m.split;
    let _ = writeln!(out, "split {} {} {} {}", fl(s.train), fl(s.valid), fl(s.test), s.seed);
    let p = &m.params;
    let _ = writeln!(
        out,
        "params {} {} {} {} {}",
        fl(p.alpha),
        fl(p.cluster_penalty),
        p.min_slice,
        fl(p.pseudo_count),
        p.seed
    );
    match m.bins {
        Some(b) => {
            let _ = writeln!(out, "bins {b}");
        }
        None => out.push_str("bins auto\n"),
    }
    let model = &m.model;
    let _ = writeln!(out, "features {}", model.schema.len());
    for f in &model.schema.features {
        let _ = match &f.kind {
            FeatureKind::Continuous { min, max } => {
                writeln!(out, "feature {} continuous {} {}", q(&f.name), fl(*min), fl(*max))
            }
            FeatureKind::Discrete { values } => {
                writeln!(out, "feature {} discrete {} {}", q(&f.name), values.len(), strings(values))
            }
            FeatureKind::Categorical { values } => writeln!(
                out,
                "feature {} categorical {} {}",
                q(&f.name),
                values.len(),
                strings(values)
            ),
        };
    }
    let _ = writeln!(out, "fills {}", strings(&model.imputer.fills));
    for c in &model.binning.columns {
        let _ = match &c.layout {
            ColumnLayout::Bins { edges } => {
                writeln!(out, "column {} bins {} {}", q(&c.name), edges.len(), floats(edges))
            }
            ColumnLayout::Values { values } => {
                writeln!(out, "column {} values {} {}", q(&c.name), values.len(), strings(values))
            }
        };
    }
    for d in &model.densities {
        match d {
            None => out.push_str("density none\n"),
            Some(d) => {
                out.push_str("density ");
                write_density(&mut out, d);
                out.push('\n');
            }
        }
    }
    let spn = &model.spn;
    let _ = writeln!(out, "groups {}", spn.groups().len());
    for g in spn.groups() {
        let _ = match &g.kind {
            GroupKind::Discrete { values } => {
                writeln!(out, "group {} discrete {} {}", q(&g.name), values.len(), strings(values))
            }
            GroupKind::Continuous { edges } => {
                writeln!(out, "group {} continuous {} {}", q(&g.name), edges.len(), floats(edges))
            }
        };
    }
    let _ = writeln!(out, "nodes {}", spn.nodes().len());
    for n in spn.nodes() {
        let ids = |c: &[usize]| c.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ");
        let _ = match n {
            Node::Sum { children, weights } => {
                writeln!(out, "sum {} {} {}", children.len(), ids(children), floats(weights))
            }
            Node::Product { children } => writeln!(out, "product {} {}", children.len(), ids(children)),
            Node::Indicator { group, probs } => {
                writeln!(out, "indicator {group} {} {}", probs.len(), floats(probs))
            }
            Node::Poly { group, density } => {
                let _ = write!(out, "poly {group} ");
                write_density(&mut out, density);
                writeln!(out)
            }
        };
    }
    out.push_str("end\n");
    out
}

pub fn save(m: &ModelFile, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_text(m))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ModelFile> {
    from_text(&std::fs::read_to_string(path)?)
}

fn tokenize(line: &str, line_no: usize) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let mut chars = line.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c == ' ' {
            chars.next();
        } else if c == '"' {
            chars.next();
            let mut s = String::new();
            loop {
                match chars.next() {
                    Some('"') => break,
                    Some('\\') => match chars.next() {
                        Some(e) => s.push(e),
                        None => return Err(bad(line_no, "dangling escape")),
                    },
                    Some(c) => s.push(c),
                    None => return Err(bad(line_no, "unterminated string")),
                }
            }
            out.push(s);
        } else {
            let mut s = String::new();
            while let Some(&c) = chars.peek() {
                if c == ' ' {
                    break;
                }
                s.push(c);
                chars.next();
            }
            out.push(s);
        }
    }
    Ok(out)
}

fn bad(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Model(format!("line {line}: {msg}"))
}

struct Reader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    line_no: usize,
}

/// Tokens of one line, consumed front to back.
struct Line {
    toks: std::vec::IntoIter<String>,
    no: usize,
}

impl Line {
    fn next(&mut self) -> Result<String> {
        self.toks.next().ok_or_else(|| bad(self.no, "line ends early"))
    }

    fn keyword(&mut self, kw: &str) -> Result<()> {
        let t = self.next()?;
        if t == kw {
            Ok(())
        } else {
            Err(bad(self.no, format!("expected {kw:?}, found {t:?}")))
        }
    }

    fn usize(&mut self) -> Result<usize> {
        let t = self.next()?;
        t.parse().map_err(|_| bad(self.no, format!("bad integer {t:?}")))
    }

    fn u64(&mut self) -> Result<u64> {
        let t = self.next()?;
        t.parse().map_err(|_| bad(self.no, format!("bad integer {t:?}")))
    }

    fn f64(&mut self) -> Result<f64> {
        let t = self.next()?;
        t.parse().map_err(|_| bad(self.no, format!("bad number {t:?}")))
    }

    fn floats(&mut self) -> Result<Vec<f64>> {
        let n = self.usize()?;
        (0..n).map(|_| self.f64()).collect()
    }

    fn strings(&mut self) -> Result<Vec<String>> {
        let n = self.usize()?;
        (0..n).map(|_| self.next()).collect()
    }

    fn density(&mut self) -> Result<PiecewisePoly> {
        let order = self.usize()?;
        let n = self.usize()?;
        let mut pieces = Vec::with_capacity(n);
        for _ in 0..n {
            let lo = self.f64()?;
            let hi = self.f64()?;
            let coeffs = (0..=order).map(|_| self.f64()).collect::<Result<_>>()?;
            pieces.push(Piece { lo, hi, coeffs });
        }
        PiecewisePoly::new(pieces, order).map_err(|e| bad(self.no, e))
    }

    fn done(mut self) -> Result<()> {
        match self.toks.next() {
            None => Ok(()),
            Some(t) => Err(bad(self.no, format!("unexpected {t:?}"))),
        }
    }
}

impl Reader<'_> {
    fn line(&mut self) -> Result<Line> {
        match self.lines.next() {
            Some((i, text)) => {
                self.line_no = i + 1;
                Ok(Line {
                    toks: tokenize(text, i + 1)?.into_iter(),
                    no: i + 1,
                })
            }
            None => Err(Error::Model(format!(
                "file is truncated after line {}",
                self.line_no
            ))),
        }
    }

    fn keyed(&mut self, kw: &str) -> Result<Line> {
        let mut l = self.line()?;
        l.keyword(kw)?;
        Ok(l)
    }
}

pub fn from_text(text: &str) -> Result<ModelFile> {
    let mut r = Reader {
        lines: text.lines().enumerate(),
        line_no: 0,
    };
    let mut l = r.keyed(MAGIC)?;
    let found: u32 = l
        .next()?
        .parse()
        .map_err(|_| bad(1, "bad format version"))?;
    if found != FORMAT_VERSION {
        return Err(Error::ModelVersion {
            found,
            supported: FORMAT_VERSION,
        });
    }
    l.done()?;

    let mut l = r.keyed("digest")?;
    let digest = l.next()?;
    l.done()?;

    let mut l = r.keyed("split")?;
    let split = SplitSpec {
        train: l.f64()?,
        valid: l.f64()?,
        test: l.f64()?,
        seed: l.u64()?,
    };
    l.done()?;

    let mut l = r.keyed("params")?;
    let params = LearnParams {
        alpha: l.f64()?,
        cluster_penalty: l.f64()?,
        min_slice: l.usize()?,
        pseudo_count: l.f64()?,
        seed: l.u64()?,
    };
    l.done()?;

    let mut l = r.keyed("bins")?;
    let t = l.next()?;
    let bins = if t == "auto" {
        None
    } else {
        Some(t.parse().map_err(|_| bad(l.no, "bad bin count"))?)
    };
    l.done()?;

    let mut l = r.keyed("features")?;
    let n = l.usize()?;
    l.done()?;
    let mut features = Vec::with_capacity(n);
    for _ in 0..n {
        let mut l = r.keyed("feature")?;
        let name = l.next()?;
        let kind = match l.next()?.as_str() {
            "continuous" => FeatureKind::Continuous {
                min: l.f64()?,
                max: l.f64()?,
            },
            "discrete" => FeatureKind::Discrete { values: l.strings()? },
            "categorical" => FeatureKind::Categorical { values: l.strings()? },
            k => return Err(bad(l.no, format!("unknown feature kind {k:?}"))),
        };
        l.done()?;
        features.push(Feature { name, kind });
    }
    let schema = FeatureSchema { features };

    let mut l = r.keyed("fills")?;
    let fills: Vec<String> = std::iter::from_fn(|| l.toks.next()).collect();
    if fills.len() != n {
        return Err(bad(l.no, "one fill value per feature expected"));
    }

    let mut columns = Vec::with_capacity(n);
    for _ in 0..n {
        let mut l = r.keyed("column")?;
        let name = l.next()?;
        let layout = match l.next()?.as_str() {
            "bins" => ColumnLayout::Bins { edges: l.floats()? },
            "values" => ColumnLayout::Values { values: l.strings()? },
            k => return Err(bad(l.no, format!("unknown column layout {k:?}"))),
        };
        l.done()?;
        columns.push(ColumnBinning { name, layout });
    }

    let mut densities = Vec::with_capacity(n);
    for _ in 0..n {
        let mut l = r.keyed("density")?;
        let d = if l.toks.as_slice().first().map(String::as_str) == Some("none") {
            l.next()?;
            None
        } else {
            Some(l.density()?)
        };
        l.done()?;
        densities.push(d);
    }

    let mut l = r.keyed("groups")?;
    let ng = l.usize()?;
    l.done()?;
    let mut groups = Vec::with_capacity(ng);
    for _ in 0..ng {
        let mut l = r.keyed("group")?;
        let name = l.next()?;
        let kind = match l.next()?.as_str() {
            "discrete" => GroupKind::Discrete { values: l.strings()? },
            "continuous" => GroupKind::Continuous { edges: l.floats()? },
            k => return Err(bad(l.no, format!("unknown group kind {k:?}"))),
        };
        l.done()?;
        groups.push(GroupInfo { name, kind });
    }

    let mut l = r.keyed("nodes")?;
    let nn = l.usize()?;
    l.done()?;
    let mut nodes = Vec::with_capacity(nn);
    for _ in 0..nn {
        let mut l = r.line()?;
        let node = match l.next()?.as_str() {
            "sum" => {
                let k = l.usize()?;
                let children = (0..k).map(|_| l.usize()).collect::<Result<_>>()?;
                let weights = (0..k).map(|_| l.f64()).collect::<Result<_>>()?;
                Node::Sum { children, weights }
            }
            "product" => {
                let k = l.usize()?;
                Node::Product {
                    children: (0..k).map(|_| l.usize()).collect::<Result<_>>()?,
                }
            }
            "indicator" => Node::Indicator {
                group: l.usize()?,
                probs: l.floats()?,
            },
            "poly" => Node::Poly {
                group: l.usize()?,
                density: l.density()?,
            },
            k => return Err(bad(l.no, format!("unknown node kind {k:?}"))),
        };
        l.done()?;
        nodes.push(node);
    }
    r.keyed("end")?.done()?;
    if let Some((i, extra)) = r.lines.find(|(_, t)| !t.trim().is_empty()) {
        return Err(bad(i + 1, format!("trailing content {extra:?}")));
    }

    let spn = Spn::new(groups, nodes)?;
    spn.validate()?;
    Ok(ModelFile {
        model: Model {
            schema,
            imputer: Imputer { fills },
            binning: BinningSpec { columns },
            densities,
            spn,
        },
        params,
        split,
        bins,
        digest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{train, TrainConfig};

    fn sample() -> (Dataset, ModelFile) {
        let mut text = String::from("x,\"odd \"\"name\"\"\",colour\n");
        for i in 0..80 {
            let x = (i as f64 * 0.61).cos() * 2.0 + i as f64 * 0.05;
            let flag = i % 4 == 0;
            let colour = ["red", "dark green", "blue"][i % 3];
            text.push_str(&format!("{x},{flag},{colour}\n"));
        }
        let d = Dataset::parse_str(&text, b',', true).unwrap();
        let cfg = TrainConfig {
            bins: Some(3),
            ..TrainConfig::default()
        };
        let t = train(&d, &cfg).unwrap();
        let m = ModelFile {
            model: t.model,
            params: cfg.params,
            split: cfg.split,
            bins: cfg.bins,
            digest: dataset_digest(&d),
        };
        (d, m)
    }

    #[test]
    fn round_trip_is_exact() {
        let (_, m) = sample();
        let text = to_text(&m);
        let back = from_text(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(to_text(&back), text);
    }

    #[test]
    fn truncated_is_rejected() {
        let (_, m) = sample();
        let text = to_text(&m);
        let lines: Vec<&str> = text.lines().collect();
        for cut in [1, lines.len() / 2, lines.len() - 1] {
            let partial = lines[..cut].join("\n");
            assert!(from_text(&partial).is_err(), "cut at {cut}");
        }
        let half = &text[..text.len() / 2];
        assert!(from_text(half).is_err());
    }

    #[test]
    fn version_mismatch_names_both() {
        let (_, m) = sample();
        let text = to_text(&m).replacen("wmispn-model 1", "wmispn-model 9", 1);
        let err = from_text(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('9') && msg.contains('1'), "{msg}");
    }

    #[test]
    fn digest_tracks_content() {
        let a = Dataset::parse_str("a,b\n1,2\n", b',', true).unwrap();
        let b = Dataset::parse_str("a;b\n1;2\n", b';', true).unwrap();
        let c = Dataset::parse_str("a,b\n1,3\n", b',', true).unwrap();
        assert_eq!(dataset_digest(&a), dataset_digest(&b));
        assert_ne!(dataset_digest(&a), dataset_digest(&c));
        assert_eq!(dataset_digest(&a).len(), 64);
    }

    #[test]
    fn floats_keep_every_bit() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(fl(x).parse::<f64>().unwrap(), x);
        }
    }
}
