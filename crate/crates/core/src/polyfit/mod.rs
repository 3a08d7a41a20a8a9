//! Piecewise-polynomial density estimation.
//!
//! A density is fitted on equal-width bins by projecting a fine histogram onto a B-spline
//! basis of the requested degree (least squares in L2), storing each piece in its local
//! coordinate `u = (x − lo) / (hi − lo)`, repairing any negative excursions and renormalizing.
//! [`select_model`] scores every (bins, order) candidate with BIC.

mod bspline;
pub mod poly;

pub use bspline::BSplineBasis;
pub use poly::{eval_poly, integrate_piece};

use nalgebra::{DMatrix, DVector};

use crate::binning::{bin_index, equal_width_edges};
use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 6;
pub const DEFAULT_BINS: std::ops::RangeInclusive<usize> = 2..=10;
pub const DEFAULT_ORDERS: std::ops::RangeInclusive<usize> = 0..=MAX_ORDER;

/// Histogram resolution inside each piece used as the least-squares target.
const SUB_BINS: usize = 16;
/// Density floor inside log-likelihoods.
pub const DENSITY_FLOOR: f64 = 1e-12;
const GL_POINTS: usize = 8;
const CLIP_ITERATIONS: usize = 40;
const CLIP_GRID: usize = 64;

/// One polynomial piece on `[lo, hi]`. `coeffs` are in the local coordinate
/// `u = (x − lo) / (hi − lo)`, so the density is `Σ coeffs[k] u^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub lo: f64,
    pub hi: f64,
    pub coeffs: Vec<f64>,
}

impl Piece {
    /// Builds a piece from power coefficients `Σ c_j x^j`.
    pub fn from_power(lo: f64, hi: f64, c: &[f64]) -> Piece {
        Piece {
            lo,
            hi,
            coeffs: poly::power_to_affine(c, lo, hi - lo),
        }
    }

    /// The same polynomial as power coefficients in `x`.
    pub fn power_coeffs(&self) -> Vec<f64> {
        poly::affine_to_power(&self.coeffs, self.lo, self.hi - self.lo)
    }

    fn local(&self, x: f64) -> f64 {
        (x - self.lo) / (self.hi - self.lo)
    }

    /// Value at `x`; the polynomial is evaluated even outside `[lo, hi]`.
    pub fn eval(&self, x: f64) -> f64 {
        eval_poly(&self.coeffs, self.local(x))
    }

    /// `∫_a^b` of the polynomial.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        (self.hi - self.lo) * integrate_piece(&self.coeffs, self.local(a), self.local(b))
    }

    pub fn mass(&self) -> f64 {
        (self.hi - self.lo) * integrate_piece(&self.coeffs, 0.0, 1.0)
    }
}

/// A density made of polynomial pieces over contiguous, disjoint intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewisePoly {
    pieces: Vec<Piece>,
    order: usize,
    edges: Vec<f64>,
    bin_masses: Vec<f64>,
}

impl PiecewisePoly {
    /// Builds from pieces; coefficient vectors are padded to `order + 1` entries.
    pub fn new(mut pieces: Vec<Piece>, order: usize) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::Fit("a density needs at least one piece".into()));
        }
        for p in &mut pieces {
            if !(p.lo < p.hi) {
                return Err(Error::Fit(format!("empty piece [{}, {}]", p.lo, p.hi)));
            }
            if p.coeffs.len() > order + 1 {
                return Err(Error::Fit("piece has more coefficients than the order allows".into()));
            }
            p.coeffs.resize(order + 1, 0.0);
        }
        for w in pieces.windows(2) {
            if w[0].hi != w[1].lo {
                return Err(Error::Fit(format!(
                    "pieces not contiguous: {} then {}",
                    w[0].hi, w[1].lo
                )));
            }
        }
        let mut edges: Vec<f64> = pieces.iter().map(|p| p.lo).collect();
        edges.push(pieces[pieces.len() - 1].hi);
        let bin_masses = pieces.iter().map(Piece::mass).collect();
        Ok(PiecewisePoly {
            pieces,
            order,
            edges,
            bin_masses,
        })
    }

    /// Constant density `1 / (hi − lo)` cut into `bins` equal pieces.
    pub fn uniform(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        let edges = equal_width_edges(lo, hi, bins.max(1));
        let c = 1.0 / (hi - lo);
        let pieces = edges
            .windows(2)
            .map(|w| Piece {
                lo: w[0],
                hi: w[1],
                coeffs: vec![c],
            })
            .collect();
        Self::new(pieces, 0)
    }

    /// Stand-in for a column holding a single value `v`: one piece of width `2ε` with
    /// constant density `1 / 2ε`, where `ε = max(|v|, 1) · 1e-6`.
    pub fn spike(v: f64) -> Self {
        let eps = v.abs().max(1.0) * 1e-6;
        Self::new(
            vec![Piece {
                lo: v - eps,
                hi: v + eps,
                coeffs: vec![1.0 / (2.0 * eps)],
            }],
            0,
        )
        .expect("spike piece is valid")
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn n_pieces(&self) -> usize {
        self.pieces.len()
    }

    /// Piece boundaries `α_1, …, α_m, β_m`.
    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn bin_masses(&self) -> &[f64] {
        &self.bin_masses
    }

    pub fn support(&self) -> (f64, f64) {
        (self.edges[0], self.edges[self.edges.len() - 1])
    }

    pub fn total_mass(&self) -> f64 {
        self.bin_masses.iter().sum()
    }

    pub fn piece_index(&self, x: f64) -> Option<usize> {
        let (lo, hi) = self.support();
        if x < lo || x > hi || x.is_nan() {
            return None;
        }
        Some(bin_index(&self.edges, x).0)
    }

    /// Density at `x`; zero outside the support.
    pub fn density(&self, x: f64) -> f64 {
        match self.piece_index(x) {
            Some(i) => self.pieces[i].eval(x),
            None => 0.0,
        }
    }

    /// Probability mass on `[a, b]`, split at piece boundaries. The part of `[a, b]` outside
    /// the support carries no mass; the flag reports whether any was cut off.
    pub fn leaf_mass_checked(&self, a: f64, b: f64) -> (f64, bool) {
        if !(a <= b) {
            return (0.0, false);
        }
        let (lo, hi) = self.support();
        let outside = a < lo || b > hi;
        let (a, b) = (a.max(lo), b.min(hi));
        if a >= b {
            return (0.0, outside);
        }
        let mut total = 0.0;
        for (i, p) in self.pieces.iter().enumerate() {
            if p.hi <= a {
                continue;
            }
            if p.lo >= b {
                break;
            }
            let (l, h) = (a.max(p.lo), b.min(p.hi));
            total += if l == p.lo && h == p.hi {
                self.bin_masses[i]
            } else {
                p.integral(l, h)
            };
        }
        (total, outside)
    }

    pub fn leaf_mass(&self, a: f64, b: f64) -> f64 {
        self.leaf_mass_checked(a, b).0
    }

    /// `Σ ln max(p(x), floor)` over `values`.
    pub fn log_likelihood(&self, values: &[f64]) -> f64 {
        values
            .iter()
            .map(|&x| self.density(x).max(DENSITY_FLOOR).ln())
            .sum()
    }

    /// Smallest value of the density over its support (scan plus local refinement).
    pub fn min_value(&self) -> f64 {
        self.pieces
            .iter()
            .map(|p| poly::poly_min(&p.coeffs, 0.0, 1.0))
            .fold(f64::INFINITY, f64::min)
    }

    /// Same within-piece shape, rescaled so piece `i` carries `masses[i]`. Pieces with no
    /// mass to rescale become constant.
    pub fn reweighted(&self, masses: &[f64]) -> Result<PiecewisePoly> {
        if masses.len() != self.pieces.len() {
            return Err(Error::Fit("one mass per piece expected".into()));
        }
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) || masses.iter().any(|&m| !(m >= 0.0)) {
            return Err(Error::Fit("masses must be non-negative with positive sum".into()));
        }
        let pieces = self
            .pieces
            .iter()
            .zip(masses)
            .zip(&self.bin_masses)
            .map(|((p, &target), &current)| {
                let target = target / total;
                let coeffs = if current > 1e-12 {
                    p.coeffs.iter().map(|c| c * target / current).collect()
                } else {
                    let mut c = vec![0.0; self.order + 1];
                    c[0] = target / (p.hi - p.lo);
                    c
                };
                Piece {
                    lo: p.lo,
                    hi: p.hi,
                    coeffs,
                }
            })
            .collect();
        let out = PiecewisePoly::new(pieces, self.order)?;
        Ok(out.normalized())
    }

    fn normalized(self) -> PiecewisePoly {
        let total = self.total_mass();
        if !(total > 0.0) {
            return self;
        }
        let pieces = self
            .pieces
            .into_iter()
            .map(|p| Piece {
                coeffs: p.coeffs.iter().map(|c| c / total).collect(),
                ..p
            })
            .collect();
        PiecewisePoly::new(pieces, self.order).expect("rescaling keeps pieces valid")
    }

    /// Checks contiguity, unit mass, non-negativity and cached bin masses.
    pub fn validate(&self) -> Result<()> {
        for w in self.pieces.windows(2) {
            if w[0].hi != w[1].lo {
                return Err(Error::Fit("pieces not contiguous".into()));
            }
        }
        let total = self.total_mass();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Fit(format!("total mass {total} is not 1")));
        }
        let min = self.min_value();
        if min < -1e-9 {
            return Err(Error::Fit(format!("density dips to {min}")));
        }
        for (p, &m) in self.pieces.iter().zip(&self.bin_masses) {
            if (p.mass() - m).abs() > 1e-9 {
                return Err(Error::Fit("stale bin mass".into()));
            }
        }
        Ok(())
    }
}

/// Free-function form of [`PiecewisePoly::leaf_mass`].
pub fn leaf_mass(p: &PiecewisePoly, a: f64, b: f64) -> f64 {
    p.leaf_mass(a, b)
}

/// `n_params · ln(n_samples) − 2 · logL`; lower is better.
pub fn bic_score(log_likelihood: f64, n_params: usize, n_samples: usize) -> f64 {
    n_params as f64 * (n_samples as f64).ln() - 2.0 * log_likelihood
}

/// A fitted density plus what had to be done to it.
#[derive(Debug, Clone)]
pub struct DensityFit {
    pub density: PiecewisePoly,
    /// Some piece went negative and was repaired.
    pub clipped: bool,
    /// Too few values for the requested order; a piecewise-constant fit was used.
    pub fell_back: bool,
}

pub fn fit_piecewise_density(values: &[f64], edges: &[f64], order: usize) -> Result<PiecewisePoly> {
    Ok(fit_density(values, edges, order)?.density)
}

/// Least-squares B-spline fit of degree `order` to the histogram density of `values` on
/// the given bin edges.
pub fn fit_density(values: &[f64], edges: &[f64], order: usize) -> Result<DensityFit> {
    if values.is_empty() {
        return Err(Error::Fit("no values to fit".into()));
    }
    if order > MAX_ORDER {
        return Err(Error::Fit(format!("order {order} exceeds {MAX_ORDER}")));
    }
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Fit("edges must be strictly increasing".into()));
    }
    let n = values.len();
    let bins = edges.len() - 1;
    let (order, fell_back) = if n < bins * (order + 1) {
        (0, order > 0)
    } else {
        (order, false)
    };

    // fine histogram inside each piece
    let mut counts = vec![[0usize; SUB_BINS]; bins];
    for &x in values {
        let (i, _) = bin_index(edges, x);
        let (lo, hi) = (edges[i], edges[i + 1]);
        let s = (((x.clamp(lo, hi) - lo) / (hi - lo)) * SUB_BINS as f64).floor();
        counts[i][(s as usize).min(SUB_BINS - 1)] += 1;
    }
    let targets: Vec<f64> = counts
        .iter()
        .map(|c| c.iter().sum::<usize>() as f64 / n as f64)
        .collect();

    let basis = BSplineBasis::discontinuous(edges, order)?;
    let spans = basis.spans();
    debug_assert_eq!(spans.len(), bins);
    let nb = basis.n_basis();
    let (gx, gw) = poly::gauss_legendre(GL_POINTS);
    let mut gram = DMatrix::<f64>::zeros(nb, nb);
    let mut rhs = DVector::<f64>::zeros(nb);
    for (piece, &(span, lo, hi)) in spans.iter().enumerate() {
        let first = span - order;
        let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        for (t, w) in gx.iter().zip(&gw) {
            let x = mid + half * t;
            let nv = basis.basis_funs(span, x);
            for a in 0..=order {
                for b in 0..=order {
                    gram[(first + a, first + b)] += half * w * nv[a] * nv[b];
                }
            }
        }
        let sub_w = (hi - lo) / SUB_BINS as f64;
        for (s, &c) in counts[piece].iter().enumerate() {
            if c == 0 {
                continue;
            }
            let height = c as f64 / (n as f64 * sub_w);
            let (slo, shi) = (lo + s as f64 * sub_w, lo + (s + 1) as f64 * sub_w);
            let (smid, shalf) = (0.5 * (slo + shi), 0.5 * (shi - slo));
            for (t, w) in gx.iter().zip(&gw) {
                let x = smid + shalf * t;
                let nv = basis.basis_funs(span, x);
                for a in 0..=order {
                    rhs[first + a] += shalf * w * height * nv[a];
                }
            }
        }
    }
    let coef = gram
        .cholesky()
        .ok_or_else(|| Error::Fit("singular Gram matrix".into()))?
        .solve(&rhs);

    let mut clipped = false;
    let mut pieces = Vec::with_capacity(bins);
    for (piece, &(span, lo, hi)) in spans.iter().enumerate() {
        let width = hi - lo;
        let first = span - order;
        // local form q(u), x = lo + width * u
        let nodes = chebyshev_nodes(order + 1);
        let samples: Vec<f64> = nodes
            .iter()
            .map(|&u| {
                let nv = basis.basis_funs(span, lo + width * u);
                (0..=order).map(|a| coef[first + a] * nv[a]).sum()
            })
            .collect();
        let mut local = interpolate(&nodes, &samples)?;

        if poly::poly_min(&local, 0.0, 1.0) < 0.0 {
            clipped = true;
            local = clip_negative(local, order)?;
        }
        let target = targets[piece];
        let current = width * integrate_piece(&local, 0.0, 1.0);
        if target == 0.0 {
            local = vec![0.0; order + 1];
        } else if current > 0.0 {
            local.iter_mut().for_each(|a| *a *= target / current);
        } else {
            local = vec![0.0; order + 1];
            local[0] = target / width;
        }
        pieces.push(Piece {
            lo,
            hi,
            coeffs: local,
        });
    }

    let mut density = PiecewisePoly::new(pieces, order)?.normalized();
    // rescaling can leave tiny negative values where a piece touches zero
    if density.min_value() < 0.0 {
        let pieces = density
            .pieces
            .iter()
            .map(|p| {
                let m = poly::poly_min(&p.coeffs, 0.0, 1.0);
                let mut coeffs = p.coeffs.clone();
                if m < 0.0 {
                    coeffs[0] -= m;
                }
                Piece { coeffs, ..p.clone() }
            })
            .collect();
        density = PiecewisePoly::new(pieces, order)?.normalized();
    }
    Ok(DensityFit {
        density,
        clipped,
        fell_back,
    })
}

fn chebyshev_nodes(m: usize) -> Vec<f64> {
    if m == 1 {
        return vec![0.5];
    }
    (0..m)
        .map(|i| 0.5 - 0.5 * ((2 * i + 1) as f64 * std::f64::consts::PI / (2 * m) as f64).cos())
        .collect()
}

fn interpolate(nodes: &[f64], values: &[f64]) -> Result<Vec<f64>> {
    let m = nodes.len();
    let v = DMatrix::from_fn(m, m, |i, j| nodes[i].powi(j as i32));
    let sol = v
        .lu()
        .solve(&DVector::from_column_slice(values))
        .ok_or_else(|| Error::Fit("singular interpolation system".into()))?;
    Ok(sol.iter().copied().collect())
}

/// Refits `q` on `[0, 1]` against its own values floored at zero until it stops dipping
/// below zero; lifts by the remaining deficit if that does not converge.
fn clip_negative(mut q: Vec<f64>, order: usize) -> Result<Vec<f64>> {
    let grid: Vec<f64> = (0..=CLIP_GRID).map(|g| g as f64 / CLIP_GRID as f64).collect();
    let design = DMatrix::from_fn(grid.len(), order + 1, |i, j| grid[i].powi(j as i32));
    let svd = design.svd(true, true);
    for _ in 0..CLIP_ITERATIONS {
        if poly::poly_min(&q, 0.0, 1.0) >= 0.0 {
            return Ok(q);
        }
        let t = DVector::from_iterator(grid.len(), grid.iter().map(|&u| eval_poly(&q, u).max(0.0)));
        let sol = svd
            .solve(&t, 1e-14)
            .map_err(|e| Error::Fit(format!("clipping refit failed: {e}")))?;
        q = sol.iter().copied().collect();
    }
    let m = poly::poly_min(&q, 0.0, 1.0);
    if m < 0.0 {
        q[0] -= m;
    }
    Ok(q)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub bins: usize,
    pub order: usize,
    pub bic: f64,
}

/// Outcome of BIC model selection for one column.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub bins: usize,
    pub order: usize,
    pub bic: f64,
    pub log_likelihood: f64,
    pub candidates: Vec<Candidate>,
    pub clipped: bool,
}

/// Fits every (bins, order) pair and keeps the lowest BIC, with `n_params = bins·(order+1)`.
/// Ties go to fewer bins, then to the lower order.
pub fn select_model(
    values: &[f64],
    bins_grid: impl IntoIterator<Item = usize>,
    order_grid: impl IntoIterator<Item = usize>,
) -> Result<(PiecewisePoly, FitReport)> {
    if values.is_empty() {
        return Err(Error::Fit("no values to fit".into()));
    }
    let mut bins_grid: Vec<usize> = bins_grid.into_iter().filter(|&b| b >= 1).collect();
    let mut order_grid: Vec<usize> = order_grid.into_iter().collect();
    bins_grid.sort_unstable();
    bins_grid.dedup();
    order_grid.sort_unstable();
    order_grid.dedup();
    if bins_grid.is_empty() || order_grid.is_empty() {
        return Err(Error::Fit("empty model grid".into()));
    }
    if let Some(&k) = order_grid.last() {
        if k > MAX_ORDER {
            return Err(Error::Fit(format!("order {k} exceeds {MAX_ORDER}")));
        }
    }

    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo < hi) {
        let density = PiecewisePoly::spike(lo);
        let ll = density.log_likelihood(values);
        let bic = bic_score(ll, 1, values.len());
        let report = FitReport {
            bins: 1,
            order: 0,
            bic,
            log_likelihood: ll,
            candidates: vec![Candidate { bins: 1, order: 0, bic }],
            clipped: false,
        };
        return Ok((density, report));
    }

    let n = values.len();
    let mut best: Option<(PiecewisePoly, FitReport)> = None;
    let mut candidates = Vec::new();
    for &bins in &bins_grid {
        let edges = equal_width_edges(lo, hi, bins);
        for &order in &order_grid {
            let fit = fit_density(values, &edges, order)?;
            if fit.fell_back {
                continue;
            }
            let ll = fit.density.log_likelihood(values);
            let bic = bic_score(ll, bins * (order + 1), n);
            candidates.push(Candidate { bins, order, bic });
            let better = best.as_ref().is_none_or(|(_, r)| bic < r.bic);
            if better {
                best = Some((
                    fit.density,
                    FitReport {
                        bins,
                        order,
                        bic,
                        log_likelihood: ll,
                        candidates: Vec::new(),
                        clipped: fit.clipped,
                    },
                ));
            }
        }
    }
    let (density, mut report) =
        best.ok_or_else(|| Error::Fit("no candidate could be fitted".into()))?;
    report.candidates = candidates;
    Ok((density, report))
}
