//! B-spline basis on an arbitrary non-decreasing knot vector (Cox–de Boor recursion).

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BSplineBasis {
    knots: Vec<f64>,
    degree: usize,
}

impl BSplineBasis {
    pub fn new(knots: Vec<f64>, degree: usize) -> Result<Self> {
        if knots.len() < 2 * (degree + 1) {
            return Err(Error::Fit("knot vector too short for the degree".into()));
        }
        if knots.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(Error::Fit("knots must be non-decreasing".into()));
        }
        if !(knots[degree] < knots[knots.len() - degree - 1]) {
            return Err(Error::Fit("empty spline domain".into()));
        }
        Ok(BSplineBasis { knots, degree })
    }

    /// Knots at every breakpoint with multiplicity `degree + 1`: the basis spans all
    /// piecewise polynomials of the degree, with no continuity across breakpoints.
    pub fn discontinuous(breakpoints: &[f64], degree: usize) -> Result<Self> {
        let knots = breakpoints
            .iter()
            .flat_map(|&e| std::iter::repeat_n(e, degree + 1))
            .collect();
        Self::new(knots, degree)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    /// Index `i` of the non-empty knot span `[t_i, t_{i+1})` containing `x`; the right end
    /// of the domain belongs to the last span.
    pub fn find_span(&self, x: f64) -> usize {
        let last = self.n_basis() - 1;
        let i = self.knots.partition_point(|&t| t <= x);
        i.saturating_sub(1).clamp(self.degree, last)
    }

    /// Values of the `degree + 1` basis functions that can be non-zero on `span`, i.e.
    /// `N_{span−degree} … N_{span}` at `x`.
    pub fn basis_funs(&self, span: usize, x: f64) -> Vec<f64> {
        let p = self.degree;
        let u = &self.knots;
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = x - u[span + 1 - j];
            right[j] = u[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        n
    }

    /// Dense vector of all basis function values at `x`.
    pub fn eval_all(&self, x: f64) -> Vec<f64> {
        let span = self.find_span(x);
        let mut out = vec![0.0; self.n_basis()];
        for (r, v) in self.basis_funs(span, x).into_iter().enumerate() {
            out[span - self.degree + r] = v;
        }
        out
    }

    /// Non-empty knot spans as `(span index, lo, hi)`.
    pub fn spans(&self) -> Vec<(usize, f64, f64)> {
        (self.degree..self.n_basis())
            .filter(|&i| self.knots[i] < self.knots[i + 1])
            .map(|i| (i, self.knots[i], self.knots[i + 1]))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_of_unity() {
        let knots = vec![0.0, 0.0, 0.0, 1.0, 2.5, 2.5, 4.0, 4.0, 4.0];
        let b = BSplineBasis::new(knots, 2).unwrap();
        for i in 0..=40 {
            let x = i as f64 * 0.1;
            let s: f64 = b.eval_all(x).iter().sum();
            assert!((s - 1.0).abs() < 1e-13, "x={x} sum={s}");
        }
    }

    #[test]
    fn discontinuous_basis_size_and_support() {
        let b = BSplineBasis::discontinuous(&[0.0, 1.0, 2.0, 3.0], 3).unwrap();
        assert_eq!(b.n_basis(), 12);
        assert_eq!(b.spans().len(), 3);
        // on the middle piece only functions 4..8 are active
        let v = b.eval_all(1.5);
        assert!(v[..4].iter().chain(&v[8..]).all(|&x| x == 0.0));
        // Bernstein values of degree 3 at u = 1/2
        let expect = [0.125, 0.375, 0.375, 0.125];
        for (a, e) in v[4..8].iter().zip(expect) {
            assert!((a - e).abs() < 1e-14);
        }
    }

    #[test]
    fn right_end_belongs_to_last_span() {
        let b = BSplineBasis::discontinuous(&[0.0, 1.0, 2.0], 1).unwrap();
        let v = b.eval_all(2.0);
        assert_eq!(v, vec![0.0, 0.0, 0.0, 1.0]);
        let v = b.eval_all(1.0);
        assert_eq!(v, vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn rejects_decreasing_knots() {
        assert!(BSplineBasis::new(vec![0.0, 1.0, 0.5, 2.0], 1).is_err());
    }
}
