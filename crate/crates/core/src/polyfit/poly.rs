//! Power-basis polynomial helpers shared by the density fitter and the WMI engine.

/// `Σ c_j x^j` by Horner's rule.
pub fn eval_poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &cj| acc * x + cj)
}

/// Exact `∫_a^b Σ c_j x^j dx = Σ c_j (b^{j+1} − a^{j+1}) / (j+1)`.
///
/// The power difference is expanded as `(b − a) Σ_{i≤j} b^i a^{j−i}`, which is zero for a
/// zero-width interval and avoids cancelling two large powers.
pub fn integrate_piece(c: &[f64], a: f64, b: f64) -> f64 {
    let width = b - a;
    if width == 0.0 {
        return 0.0;
    }
    let mut total = 0.0;
    let mut b_pow = 1.0; // b^j
    let mut s = 0.0; // Σ_{i≤j} b^i a^{j−i}
    for (j, &cj) in c.iter().enumerate() {
        s = if j == 0 { 1.0 } else { b_pow + a * s };
        total += cj * s / (j as f64 + 1.0);
        b_pow *= b;
    }
    total * width
}

pub fn derivative(c: &[f64]) -> Vec<f64> {
    c.iter()
        .enumerate()
        .skip(1)
        .map(|(j, &cj)| j as f64 * cj)
        .collect()
}

pub fn mul_poly(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out[i + j] += ai * bj;
        }
    }
    out
}

/// Rewrites `q(u) = Σ a_j u^j` with `u = (x − origin) / scale` as power coefficients in `x`.
pub fn affine_to_power(a: &[f64], origin: f64, scale: f64) -> Vec<f64> {
    let n = a.len();
    let mut out = vec![0.0; n];
    // (x − origin)^j / scale^j = Σ_i C(j,i) x^i (−origin)^{j−i} / scale^j
    for (j, &aj) in a.iter().enumerate() {
        if aj == 0.0 {
            continue;
        }
        let factor = aj / scale.powi(j as i32);
        let mut binom = 1.0;
        for i in 0..=j {
            if i > 0 {
                binom = binom * (j - i + 1) as f64 / i as f64;
            }
            out[i] += factor * binom * (-origin).powi((j - i) as i32);
        }
    }
    out
}

/// Inverse of [`affine_to_power`]: coefficients of `q(u) = p(origin + scale · u)`.
pub fn power_to_affine(c: &[f64], origin: f64, scale: f64) -> Vec<f64> {
    let n = c.len();
    let mut out = vec![0.0; n];
    // x^j = Σ_k C(j,k) origin^{j−k} scale^k u^k
    for (j, &cj) in c.iter().enumerate() {
        if cj == 0.0 {
            continue;
        }
        let mut binom = 1.0;
        for k in 0..=j {
            if k > 0 {
                binom = binom * (j - k + 1) as f64 / k as f64;
            }
            out[k] += cj * binom * origin.powi((j - k) as i32) * scale.powi(k as i32);
        }
    }
    out
}

/// Minimum of the polynomial on `[lo, hi]`: a dense scan followed by golden-section
/// refinement around each local minimum of the scan.
pub fn poly_min(c: &[f64], lo: f64, hi: f64) -> f64 {
    const GRID: usize = 256;
    if hi <= lo {
        return eval_poly(c, lo);
    }
    let h = (hi - lo) / GRID as f64;
    let xs: Vec<f64> = (0..=GRID).map(|i| if i == GRID { hi } else { lo + i as f64 * h }).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| eval_poly(c, x)).collect();
    let mut best = ys.iter().copied().fold(f64::INFINITY, f64::min);
    for i in 1..GRID {
        if ys[i] <= ys[i - 1] && ys[i] <= ys[i + 1] {
            best = best.min(golden_min(c, xs[i - 1], xs[i + 1]));
        }
    }
    best
}

fn golden_min(c: &[f64], mut a: f64, mut b: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let mut f1 = eval_poly(c, x1);
    let mut f2 = eval_poly(c, x2);
    for _ in 0..80 {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = eval_poly(c, x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = eval_poly(c, x2);
        }
    }
    f1.min(f2)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, exact for degree `2n − 1`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn horner() {
        assert_eq!(eval_poly(&[1.0, 2.0, 3.0], 2.0), 17.0);
        assert_eq!(eval_poly(&[], 2.0), 0.0);
    }

    #[test]
    fn weight_polynomial_over_ten_units() {
        assert!((integrate_piece(&[-0.051, 0.0016], 40.0, 50.0) - 0.21).abs() < 1e-12);
        assert!((integrate_piece(&[-0.051, 0.0016], 40.0, 55.0) - 0.375).abs() < 1e-12);
    }

    #[test]
    fn quadratic_weight() {
        assert_relative_eq!(integrate_piece(&[0.0, 0.0, 0.3], 0.0, 10.0), 100.0, epsilon = 1e-12);
        assert_eq!(integrate_piece(&[3.0, 1.0, 4.0], 2.5, 2.5), 0.0);
    }

    #[test]
    fn affine_rewrite_matches_direct_evaluation() {
        let a = [0.5, -1.0, 2.0, 0.25];
        let c = affine_to_power(&a, 3.0, 2.0);
        for &x in &[3.0, 3.7, 4.4, 5.0] {
            let u: f64 = (x - 3.0) / 2.0;
            assert_relative_eq!(eval_poly(&c, x), eval_poly(&a, u), epsilon = 1e-12);
        }
        let back = power_to_affine(&c, 3.0, 2.0);
        for (x, y) in back.iter().zip(&a) {
            assert_relative_eq!(*x, *y, epsilon = 1e-12);
        }
    }

    #[test]
    fn gauss_legendre_is_exact_to_degree_2n_minus_1() {
        let (x, w) = gauss_legendre(8);
        for deg in 0..16 {
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg)).sum();
            let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
            assert!((q - exact).abs() < 1e-13, "degree {deg}: {q} vs {exact}");
        }
    }

    #[test]
    fn minimum_of_quadratic() {
        // (x − 1.3)^2 − 0.2
        let c = [1.3 * 1.3 - 0.2, -2.6, 1.0];
        assert!((poly_min(&c, 0.0, 3.0) + 0.2).abs() < 1e-12);
        assert!((poly_min(&c, 2.0, 3.0) - (0.7 * 0.7 - 0.2)).abs() < 1e-12);
    }

    #[test]
    fn product_and_derivative() {
        assert_eq!(mul_poly(&[1.0, 1.0], &[1.0, -1.0]), vec![1.0, 0.0, -1.0]);
        assert_eq!(derivative(&[5.0, 3.0, 2.0]), vec![3.0, 4.0]);
    }
}
