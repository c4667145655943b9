use alloc::vec;
use alloc::vec::Vec;

use super::linear::load8;
use super::LayerError;
use crate::batch::MvArray;
use crate::pga::tables::{ProductTable, GEOMETRIC, JOIN};
use crate::real::Real;

/// Channel-wise bilinear product of two `[.., C, 8]` buffers of equal length.
pub fn product_kernel<T: Real>(table: &ProductTable, a: &[T], b: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); a.len()];
    for ((o, x), y) in out.chunks_exact_mut(8).zip(a.chunks_exact(8)).zip(b.chunks_exact(8)) {
        o.copy_from_slice(&table.apply(&load8(x), &load8(y)));
    }
    out
}

pub fn product_backward<T: Real>(table: &ProductTable, a: &[T], b: &[T], g: &[T], ga: &mut [T], gb: &mut [T]) {
    for i in 0..a.len() / 8 {
        let r = i * 8..i * 8 + 8;
        let mut da = [T::zero(); 8];
        let mut db = [T::zero(); 8];
        table.vjp(&load8(&a[r.clone()]), &load8(&b[r.clone()]), &load8(&g[r.clone()]), &mut da, &mut db);
        for k in 0..8 {
            ga[i * 8 + k] += da[k];
            gb[i * 8 + k] += db[k];
        }
    }
}

fn check_same(a: &MvArray<impl Real>, b: &MvArray<impl Real>) -> Result<(), LayerError> {
    if a.lead() != b.lead() || a.channels() != b.channels() {
        return Err(LayerError::Channels { what: "bilinear operands", expected: a.channels(), got: b.channels() });
    }
    Ok(())
}

pub fn geometric_product<T: Real>(a: &MvArray<T>, b: &MvArray<T>) -> Result<MvArray<T>, LayerError> {
    check_same(a, b)?;
    Ok(MvArray::from_vec(a.lead(), a.channels(), product_kernel(&GEOMETRIC, a.data(), b.data()))?)
}

pub fn join<T: Real>(a: &MvArray<T>, b: &MvArray<T>) -> Result<MvArray<T>, LayerError> {
    check_same(a, b)?;
    Ok(MvArray::from_vec(a.lead(), a.channels(), product_kernel(&JOIN, a.data(), b.data()))?)
}

/// `concat(w x, join(y, z))` along channels: `4 x [.., C, 8] -> [.., 2C, 8]`.
pub fn geometric_bilinear<T: Real>(w: &MvArray<T>, x: &MvArray<T>, y: &MvArray<T>, z: &MvArray<T>) -> Result<MvArray<T>, LayerError> {
    check_same(w, x)?;
    check_same(w, y)?;
    check_same(w, z)?;
    let gp = geometric_product(w, x)?;
    let jn = join(y, z)?;
    Ok(gp.concat_channels(&jn)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pga::Multivector;

    #[test]
    fn vector_inputs() {
        let e1 = MvArray::from_vec(&[1], 2, [Multivector::E1.0, Multivector::E1.0].concat()).unwrap();
        let out = geometric_bilinear(&e1, &e1, &e1, &e1).unwrap();
        assert_eq!(out.channels(), 4);
        assert_eq!(out.get(0, 0), Multivector::ONE.0);
        assert_eq!(out.get(0, 1), Multivector::ONE.0);
        // join(e1, e1) = dual(e20 ^ e20) = 0
        assert_eq!(out.get(0, 2), [0.0; 8]);
        assert_eq!(out.get(0, 3), [0.0; 8]);
    }

    #[test]
    fn scalar_unit_passes_x() {
        let one = MvArray::from_fn(3, 2, |_, _| Multivector::ONE.0);
        let x = MvArray::from_fn(3, 2, |n, c| [n as f64, c as f64, 1.0, -2.0, 0.5, 3.0, -1.0, 7.0]);
        let out = geometric_bilinear(&one, &x, &x, &x).unwrap();
        let first = out.split_channels(&[2, 2]).unwrap().remove(0);
        assert_eq!(first, x);
    }

    #[test]
    fn mismatched_channels() {
        let a = MvArray::<f64>::zeros(&[1], 2);
        let b = MvArray::<f64>::zeros(&[1], 3);
        assert!(geometric_bilinear(&a, &a, &a, &b).is_err());
    }
}
