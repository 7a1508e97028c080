//! 2x2 tensors with the handful of operations the estimators need.

use core::ops::{Add, AddAssign, Mul, Neg, Sub};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Tensor2(pub [[f64; 2]; 2]);

impl Tensor2 {
    pub const ZERO: Tensor2 = Tensor2([[0.0; 2]; 2]);
    pub const IDENTITY: Tensor2 = Tensor2([[1.0, 0.0], [0.0, 1.0]]);

    pub fn from_rows(r0: [f64; 2], r1: [f64; 2]) -> Self {
        Tensor2([r0, r1])
    }

    /// The skew tensor with `theta` above the diagonal.
    pub fn skew(theta: f64) -> Self {
        Tensor2([[0.0, theta], [-theta, 0.0]])
    }

    pub fn row(&self, i: usize) -> [f64; 2] {
        self.0[i]
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn transpose(&self) -> Self {
        let a = self.0;
        Tensor2([[a[0][0], a[1][0]], [a[0][1], a[1][1]]])
    }

    pub fn sym(&self) -> Self {
        (*self + self.transpose()) * 0.5
    }

    /// Skew-symmetric part `(t - t^T) / 2`.
    pub fn asym(&self) -> Self {
        (*self - self.transpose()) * 0.5
    }

    pub fn dev(&self) -> Self {
        *self - Tensor2::IDENTITY * (0.5 * self.trace())
    }

    pub fn ddot(&self, other: &Tensor2) -> f64 {
        let (a, b) = (self.0, other.0);
        a[0][0] * b[0][0] + a[0][1] * b[0][1] + a[1][0] * b[1][0] + a[1][1] * b[1][1]
    }

    pub fn norm_sq(&self) -> f64 {
        self.ddot(self)
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        let a = self.0;
        [a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]]
    }
}

impl Add for Tensor2 {
    type Output = Tensor2;
    fn add(self, o: Tensor2) -> Tensor2 {
        let (a, b) = (self.0, o.0);
        Tensor2([
            [a[0][0] + b[0][0], a[0][1] + b[0][1]],
            [a[1][0] + b[1][0], a[1][1] + b[1][1]],
        ])
    }
}

impl AddAssign for Tensor2 {
    fn add_assign(&mut self, o: Tensor2) {
        *self = *self + o;
    }
}

impl Sub for Tensor2 {
    type Output = Tensor2;
    fn sub(self, o: Tensor2) -> Tensor2 {
        self + (-o)
    }
}

impl Neg for Tensor2 {
    type Output = Tensor2;
    fn neg(self) -> Tensor2 {
        self * -1.0
    }
}

impl Mul<f64> for Tensor2 {
    type Output = Tensor2;
    fn mul(self, s: f64) -> Tensor2 {
        let a = self.0;
        Tensor2([[a[0][0] * s, a[0][1] * s], [a[1][0] * s, a[1][1] * s]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parts_recombine() {
        let t = Tensor2([[1.0, 2.0], [-3.0, 4.0]]);
        let back = t.sym() + t.asym();
        assert_eq!(back, t);
        assert_eq!(t.dev().trace(), 0.0);
        assert_eq!(t.asym().0[0][1], 2.5);
    }

    #[test]
    fn skew_pairs_with_off_diagonal_difference() {
        let t = Tensor2([[1.0, 2.0], [-3.0, 4.0]]);
        assert_eq!(t.ddot(&Tensor2::skew(1.0)), 5.0);
    }
}
