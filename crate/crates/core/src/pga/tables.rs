//! Structure constants for the geometric and wedge products.
//!
//! Blades are identified internally by a bitmask over `{e0, e1, e2}` (bit 0 is
//! `e0`). The canonical storage order is `[1, e0, e1, e2, e01, e20, e12, e012]`;
//! `e20` is the only canonical blade whose orientation differs from the
//! sorted-index blade (`e20 = -e02`).

use crate::real::Real;

/// One nonzero structure constant: `out[k] += sign * a[i] * b[j]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Term {
    pub i: u8,
    pub j: u8,
    pub k: u8,
    pub sign: i8,
}

/// Nonzero structure constants of a bilinear product on the 8 basis blades,
/// ordered row-major by `(i, j)`.
#[derive(Clone, Copy, Debug)]
pub struct ProductTable {
    terms: [Term; 64],
    len: usize,
}

impl ProductTable {
    pub fn terms(&self) -> &[Term] {
        &self.terms[..self.len]
    }

    /// Product of basis blades `i` and `j` as `(k, sign)`; `sign == 0` means zero.
    pub fn basis(&self, i: usize, j: usize) -> (usize, i8) {
        for t in self.terms() {
            if t.i as usize == i && t.j as usize == j {
                return (t.k as usize, t.sign);
            }
        }
        (0, 0)
    }

    #[inline]
    pub fn apply<T: Real>(&self, a: &[T; 8], b: &[T; 8]) -> [T; 8] {
        let mut out = [T::zero(); 8];
        for t in self.terms() {
            let p = a[t.i as usize] * b[t.j as usize];
            if t.sign > 0 {
                out[t.k as usize] += p;
            } else {
                out[t.k as usize] -= p;
            }
        }
        out
    }

    /// Vector-Jacobian product of [`apply`](Self::apply): accumulates
    /// `d out / d a` and `d out / d b` contracted with `g` into `ga`, `gb`.
    #[inline]
    pub fn vjp<T: Real>(&self, a: &[T; 8], b: &[T; 8], g: &[T; 8], ga: &mut [T; 8], gb: &mut [T; 8]) {
        for t in self.terms() {
            let (i, j, k) = (t.i as usize, t.j as usize, t.k as usize);
            let gk = if t.sign > 0 { g[k] } else { -g[k] };
            ga[i] += gk * b[j];
            gb[j] += gk * a[i];
        }
    }
}

const MASKS: [u8; 8] = [0b000, 0b001, 0b010, 0b100, 0b011, 0b101, 0b110, 0b111];
// Orientation of each canonical blade relative to the sorted-index blade with the same mask.
const ORIENT: [i8; 8] = [1, 1, 1, 1, 1, -1, 1, 1];
// Squares of e0, e1, e2.
const METRIC: [i8; 3] = [0, 1, 1];

const fn index_of_mask(mask: u8) -> usize {
    let mut i = 0;
    while i < 8 {
        if MASKS[i] == mask {
            return i;
        }
        i += 1;
    }
    panic!("invalid blade mask");
}

/// Sign from reordering the concatenation of two sorted blades into sorted order.
const fn reorder_sign(a: u8, b: u8) -> i8 {
    let mut a = a >> 1;
    let mut swaps = 0u32;
    while a != 0 {
        swaps += (a & b).count_ones();
        a >>= 1;
    }
    if swaps % 2 == 0 {
        1
    } else {
        -1
    }
}

const fn build(wedge: bool) -> ProductTable {
    let mut terms = [Term { i: 0, j: 0, k: 0, sign: 0 }; 64];
    let mut len = 0;
    let mut i = 0;
    while i < 8 {
        let mut j = 0;
        while j < 8 {
            let (ma, mb) = (MASKS[i], MASKS[j]);
            let common = ma & mb;
            let mut sign = reorder_sign(ma, mb) * ORIENT[i] * ORIENT[j];
            if wedge && common != 0 {
                sign = 0;
            }
            let mut bit = 0;
            while bit < 3 {
                if common & (1 << bit) != 0 {
                    sign *= METRIC[bit];
                }
                bit += 1;
            }
            if sign != 0 {
                let k = index_of_mask(ma ^ mb);
                // canonical = ORIENT * sorted, so sorted = ORIENT * canonical
                sign *= ORIENT[k];
                terms[len] = Term { i: i as u8, j: j as u8, k: k as u8, sign };
                len += 1;
            }
            j += 1;
        }
        i += 1;
    }
    ProductTable { terms, len }
}

const fn build_join() -> ProductTable {
    let w = build(true);
    let mut terms = [Term { i: 0, j: 0, k: 0, sign: 0 }; 64];
    let mut n = 0;
    // Row-major over the dual inputs so the accumulation order matches
    // dual(wedge(dual(a), dual(b))) term for term.
    while n < w.len {
        let t = w.terms[n];
        terms[n] = Term { i: 7 - t.i, j: 7 - t.j, k: 7 - t.k, sign: t.sign };
        n += 1;
    }
    ProductTable { terms, len: w.len }
}

pub const GEOMETRIC: ProductTable = build(false);
pub const WEDGE: ProductTable = build(true);
pub const JOIN: ProductTable = build_join();

/// Grade of each canonical component.
pub const GRADE: [u8; 8] = [0, 1, 1, 1, 2, 2, 2, 3];

/// Components that enter the invariant inner product (those without `e0`).
pub const INVARIANT_MASK: [bool; 8] = [true, false, true, true, false, false, true, false];

/// Components read by the invariant inner product, in the order the attention
/// key/query vectors use.
pub const INVARIANT_COMPONENTS: [usize; 4] = [0, 2, 3, 6];

pub mod idx {
    pub const S: usize = 0;
    pub const E0: usize = 1;
    pub const E1: usize = 2;
    pub const E2: usize = 3;
    pub const E01: usize = 4;
    pub const E20: usize = 5;
    pub const E12: usize = 6;
    pub const E012: usize = 7;
}

#[inline]
pub fn dual<T: Copy>(x: &[T; 8]) -> [T; 8] {
    [x[7], x[6], x[5], x[4], x[3], x[2], x[1], x[0]]
}

#[inline]
pub fn reverse<T: Real>(x: &[T; 8]) -> [T; 8] {
    // reversion flips grades 2 and 3
    [x[0], x[1], x[2], x[3], -x[4], -x[5], -x[6], -x[7]]
}

#[inline]
pub fn invariant_inner<T: Real>(a: &[T; 8], b: &[T; 8]) -> T {
    a[0] * b[0] + a[2] * b[2] + a[3] * b[3] + a[6] * b[6]
}

/// `u x rev(u)`; equals the sandwich `u x u^{-1}` for unit motors.
#[inline]
pub fn sandwich<T: Real>(u: &[T; 8], x: &[T; 8]) -> [T; 8] {
    let ux = GEOMETRIC.apply(u, x);
    GEOMETRIC.apply(&ux, &reverse(u))
}

/// Matrix `M` with `sandwich(u, x) = M x`, as rows.
pub fn sandwich_matrix<T: Real>(u: &[T; 8]) -> [[T; 8]; 8] {
    let mut m = [[T::zero(); 8]; 8];
    for col in 0..8 {
        let mut e = [T::zero(); 8];
        e[col] = T::one();
        let y = sandwich(u, &e);
        for row in 0..8 {
            m[row][col] = y[row];
        }
    }
    m
}

#[inline]
pub fn mat_vec<T: Real>(m: &[[T; 8]; 8], x: &[T; 8]) -> [T; 8] {
    let mut y = [T::zero(); 8];
    for r in 0..8 {
        let mut acc = T::zero();
        for c in 0..8 {
            acc += m[r][c] * x[c];
        }
        y[r] = acc;
    }
    y
}

#[inline]
pub fn mat_t_vec<T: Real>(m: &[[T; 8]; 8], g: &[T; 8]) -> [T; 8] {
    let mut y = [T::zero(); 8];
    for r in 0..8 {
        for c in 0..8 {
            y[c] += m[r][c] * g[r];
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn term_counts() {
        // 16 of the 64 geometric products contain e0 twice and vanish.
        assert_eq!(GEOMETRIC.terms().len(), 48);
        assert_eq!(WEDGE.terms().len(), 27);
        assert_eq!(JOIN.terms().len(), 27);
    }

    #[test]
    fn sandwich_matrix_matches_direct() {
        let u = [0.8f64, 0.0, 0.0, 0.0, 0.3, -1.2, 0.6, 0.0];
        let m = sandwich_matrix(&u);
        let x = [0.1, -0.4, 2.0, 0.3, 1.5, -0.7, 0.9, 0.25];
        let a = sandwich(&u, &x);
        let b = mat_vec(&m, &x);
        for k in 0..8 {
            assert!((a[k] - b[k]).abs() < 1e-14);
        }
    }
}
