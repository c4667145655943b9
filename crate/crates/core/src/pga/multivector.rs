use core::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use super::tables::{self, idx, GEOMETRIC, JOIN, WEDGE};
use super::PgaError;

/// An element of the planar projective geometric algebra.
///
/// Coefficients are stored in the fixed order `[1, e0, e1, e2, e01, e20, e12, e012]`.
/// Every flattening and serialization in this workspace uses the same order.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Multivector(pub [f64; 8]);

pub const BASIS_NAMES: [&str; 8] = ["1", "e0", "e1", "e2", "e01", "e20", "e12", "e012"];

impl Multivector {
    pub const ZERO: Self = Multivector([0.0; 8]);
    pub const ONE: Self = Multivector::basis(idx::S);
    pub const E0: Self = Multivector::basis(idx::E0);
    pub const E1: Self = Multivector::basis(idx::E1);
    pub const E2: Self = Multivector::basis(idx::E2);
    pub const E01: Self = Multivector::basis(idx::E01);
    pub const E20: Self = Multivector::basis(idx::E20);
    pub const E12: Self = Multivector::basis(idx::E12);
    pub const E012: Self = Multivector::basis(idx::E012);

    pub const fn new(coeffs: [f64; 8]) -> Self {
        Multivector(coeffs)
    }

    /// The `i`-th canonical basis blade.
    pub const fn basis(i: usize) -> Self {
        let mut c = [0.0; 8];
        c[i] = 1.0;
        Multivector(c)
    }

    pub fn scalar(s: f64) -> Self {
        Multivector([s, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    }

    pub fn coeffs(&self) -> &[f64; 8] {
        &self.0
    }

    pub fn s(&self) -> f64 {
        self.0[idx::S]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    pub fn geometric_product(&self, other: &Self) -> Self {
        Multivector(GEOMETRIC.apply(&self.0, &other.0))
    }

    pub fn wedge(&self, other: &Self) -> Self {
        Multivector(WEDGE.apply(&self.0, &other.0))
    }

    /// Coefficient reversal; maps each blade to its complement.
    pub fn dual(&self) -> Self {
        Multivector(tables::dual(&self.0))
    }

    /// `(a* ∧ b*)*`: the line through two points, or the signed distance
    /// between a point and a unit line.
    pub fn join(&self, other: &Self) -> Self {
        Multivector(JOIN.apply(&self.0, &other.0))
    }

    pub fn reverse(&self) -> Self {
        Multivector(tables::reverse(&self.0))
    }

    pub fn grade_project(&self, k: usize) -> Result<Self, PgaError> {
        if k > 3 {
            return Err(PgaError::GradeOutOfRange(k));
        }
        let mut out = [0.0; 8];
        for (i, c) in self.0.iter().enumerate() {
            if tables::GRADE[i] as usize == k {
                out[i] = *c;
            }
        }
        Ok(Multivector(out))
    }

    /// `x'y' + x1 y1 + x2 y2 + x12 y12`; blind to every `e0` component.
    pub fn inner(&self, other: &Self) -> f64 {
        tables::invariant_inner(&self.0, &other.0)
    }

    pub fn scale(&self, k: f64) -> Self {
        Multivector(self.0.map(|c| c * k))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().map(|c| c.abs()).fold(0.0, f64::max)
    }
}

impl From<[f64; 8]> for Multivector {
    fn from(c: [f64; 8]) -> Self {
        Multivector(c)
    }
}

impl Index<usize> for Multivector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Multivector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl Add for Multivector {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let mut out = self.0;
        for (o, r) in out.iter_mut().zip(rhs.0) {
            *o += r;
        }
        Multivector(out)
    }
}

impl Sub for Multivector {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        let mut out = self.0;
        for (o, r) in out.iter_mut().zip(rhs.0) {
            *o -= r;
        }
        Multivector(out)
    }
}

impl Neg for Multivector {
    type Output = Self;
    fn neg(self) -> Self {
        Multivector(self.0.map(|c| -c))
    }
}

/// Geometric product.
impl Mul for Multivector {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.geometric_product(&rhs)
    }
}

impl Mul<Multivector> for f64 {
    type Output = Multivector;
    fn mul(self, rhs: Multivector) -> Multivector {
        rhs.scale(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_products() {
        assert_eq!(Multivector::E1 * Multivector::E2, Multivector::E12);
        assert_eq!(Multivector::E0 * Multivector::E0, Multivector::ZERO);
        assert_eq!(Multivector::E12 * Multivector::E12, -Multivector::ONE);
        assert_eq!(Multivector::E1.wedge(&Multivector::E1), Multivector::ZERO);
        assert_eq!(Multivector::E1.wedge(&Multivector::E2), Multivector::E12);
    }

    #[test]
    fn dual_of_basis() {
        assert_eq!(Multivector::E0.dual(), Multivector::E12);
        assert_eq!(Multivector::ONE.dual(), Multivector::E012);
    }

    #[test]
    fn grade_projection() {
        let x = Multivector::E0 + Multivector::E12;
        assert_eq!(x.grade_project(1).unwrap(), Multivector::E0);
        let y = Multivector::scalar(5.0) + 2.0 * Multivector::E012;
        assert_eq!(y.grade_project(3).unwrap(), 2.0 * Multivector::E012);
        assert_eq!(y.grade_project(4), Err(PgaError::GradeOutOfRange(4)));
    }

    #[test]
    fn inner_product_ignores_e0() {
        assert_eq!(Multivector::E1.inner(&Multivector::E1), 1.0);
        assert_eq!(Multivector::E0.inner(&Multivector::E0), 0.0);
        assert_eq!(Multivector::E01.inner(&Multivector::E01), 0.0);
        assert_eq!(Multivector::E012.inner(&Multivector::E012), 0.0);
    }
}
