//! Monomial and Legendre helpers.

use alloc::vec::Vec;

/// Exponent pairs `(a, b)` of `x^a y^b` with `a + b <= degree`, ordered by
/// total degree and then by decreasing power of `x`.
pub fn monomials(degree: usize) -> Vec<(u32, u32)> {
    let mut out = Vec::with_capacity(monomial_count(degree));
    for d in 0..=degree as u32 {
        for b in 0..=d {
            out.push((d - b, b));
        }
    }
    out
}

pub fn monomial_count(degree: usize) -> usize {
    (degree + 1) * (degree + 2) / 2
}

#[inline]
pub fn powi(x: f64, n: u32) -> f64 {
    let mut r = 1.0;
    for _ in 0..n {
        r *= x;
    }
    r
}

#[inline]
pub fn monomial(e: (u32, u32), p: [f64; 2]) -> f64 {
    powi(p[0], e.0) * powi(p[1], e.1)
}

/// Gradient of `x^a y^b`.
#[inline]
pub fn monomial_grad(e: (u32, u32), p: [f64; 2]) -> [f64; 2] {
    let (a, b) = e;
    let dx = if a == 0 { 0.0 } else { a as f64 * powi(p[0], a - 1) * powi(p[1], b) };
    let dy = if b == 0 { 0.0 } else { b as f64 * powi(p[0], a) * powi(p[1], b - 1) };
    [dx, dy]
}

/// Second derivatives `[xx, xy, yy]` of `x^a y^b`.
#[inline]
pub fn monomial_hessian(e: (u32, u32), p: [f64; 2]) -> [f64; 3] {
    let (a, b) = e;
    let (af, bf) = (a as f64, b as f64);
    let xx = if a < 2 { 0.0 } else { af * (af - 1.0) * powi(p[0], a - 2) * powi(p[1], b) };
    let xy = if a == 0 || b == 0 { 0.0 } else { af * bf * powi(p[0], a - 1) * powi(p[1], b - 1) };
    let yy = if b < 2 { 0.0 } else { bf * (bf - 1.0) * powi(p[0], a) * powi(p[1], b - 2) };
    [xx, xy, yy]
}

/// Legendre polynomial of degree `j` shifted to `[0, 1]`, so that
/// `int_0^1 L_i L_j = delta_ij / (2j + 1)`.
pub fn legendre(j: usize, t: f64) -> f64 {
    let x = 2.0 * t - 1.0;
    let (mut p0, mut p1) = (1.0, x);
    if j == 0 {
        return 1.0;
    }
    for k in 2..=j {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    p1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::LineRule;

    #[test]
    fn monomial_ordering() {
        assert_eq!(monomials(2), alloc::vec![(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]);
        assert_eq!(monomials(3).len(), monomial_count(3));
    }

    #[test]
    fn legendre_is_orthogonal() {
        let r = LineRule::gauss(6);
        for i in 0..5 {
            for j in 0..5 {
                let v: f64 = r
                    .points
                    .iter()
                    .zip(&r.weights)
                    .map(|(t, w)| w * legendre(i, *t) * legendre(j, *t))
                    .sum();
                let e = if i == j { 1.0 / (2 * j + 1) as f64 } else { 0.0 };
                assert!((v - e).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let p = [0.3, -0.7];
        let h = 1e-6;
        for e in monomials(4) {
            let g = monomial_grad(e, p);
            let fd = (monomial(e, [p[0] + h, p[1]]) - monomial(e, [p[0] - h, p[1]])) / (2.0 * h);
            assert!((g[0] - fd).abs() < 1e-8);
            let hs = monomial_hessian(e, p);
            let fd = (monomial_grad(e, [p[0], p[1] + h])[0] - monomial_grad(e, [p[0], p[1] - h])[0]) / (2.0 * h);
            assert!((hs[1] - fd).abs() < 1e-7);
        }
    }
}
